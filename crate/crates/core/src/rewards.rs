//! Sequences over a finite vocabulary and the distance-based rewards defined
//! on them.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// A vocabulary of `size` ordinary tokens with dense ids `0..size`.
///
/// The id `size` is reserved as the nil token, which stands for a deleted
/// position while an edit script is being assembled. It never appears in a
/// materialized [`Sequence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocab(format!("size must be at least 2, got {size}")));
        }
        if size >= Token::MAX as usize {
            return Err(Error::InvalidVocab(format!("size {size} exceeds token id range")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nil_token(&self) -> Token {
        self.size as Token
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> {
        0..self.size as Token
    }

    pub fn contains(&self, token: Token) -> bool {
        (token as usize) < self.size
    }

    /// Checks that every item of `seq` is an ordinary token.
    pub fn validate(&self, seq: &[Token]) -> Result<()> {
        match seq.iter().find(|&&t| !self.contains(t)) {
            Some(&token) => Err(Error::InvalidToken { token, size: self.size }),
            None => Ok(()),
        }
    }
}

/// A token sequence. Ordering is lexicographic on the token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence(Vec<Token>);

impl Sequence {
    pub fn new(items: Vec<Token>) -> Self {
        Self(items)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn into_inner(self) -> Vec<Token> {
        self.0
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }
}

impl Deref for Sequence {
    type Target = [Token];

    fn deref(&self) -> &[Token] {
        &self.0
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(items: Vec<Token>) -> Self {
        Self(items)
    }
}

impl From<&[Token]> for Sequence {
    fn from(items: &[Token]) -> Self {
        Self(items.to_vec())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// Which distance the reward negates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    NegHamming,
    NegEdit,
}

impl RewardKind {
    pub fn name(&self) -> &'static str {
        match self {
            RewardKind::NegHamming => "neg_hamming",
            RewardKind::NegEdit => "neg_edit",
        }
    }
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_hamming" | "neg-hamming" | "hamming" => Ok(RewardKind::NegHamming),
            "neg_edit" | "neg-edit" | "edit" => Ok(RewardKind::NegEdit),
            other => Err(Error::InvalidArgument(format!("unknown reward kind '{other}'"))),
        }
    }
}

pub fn hamming_distance(a: &[Token], b: &[Token]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Unit-cost Levenshtein distance, single-row dynamic program.
pub fn edit_distance(a: &[Token], b: &[Token]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ta) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let sub = diag + usize::from(ta != tb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// `r(y, y*)`: the negated distance under `kind`.
pub fn reward(kind: RewardKind, y: &[Token], ystar: &[Token]) -> Result<f64> {
    let d = match kind {
        RewardKind::NegHamming => hamming_distance(y, ystar)?,
        RewardKind::NegEdit => edit_distance(y, ystar),
    };
    Ok(-(d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Vec<Token> {
        text.bytes().map(Token::from).collect()
    }

    // Direct recursive definition, exponential but fine for short strings.
    fn edit_recursive(a: &[Token], b: &[Token]) -> usize {
        match (a.split_last(), b.split_last()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = edit_recursive(ra, rb) + usize::from(x != y);
                let del = edit_recursive(ra, b) + 1;
                let ins = edit_recursive(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&s("abc"), &s("abc")).unwrap(), 0);
        assert_eq!(hamming_distance(&s("abc"), &s("abd")).unwrap(), 1);
        assert_eq!(hamming_distance(&s("aaa"), &s("bbb")).unwrap(), 3);
        let err = hamming_distance(&s("ab"), &s("abc")).unwrap_err();
        assert!(err.to_string().contains("hamming requires equal lengths"));
    }

    #[test]
    fn edit_examples() {
        assert_eq!(edit_distance(&s("xyz"), &s("xyz")), 0);
        assert_eq!(edit_distance(&s(""), &s("ab")), 2);
        assert_eq!(edit_recursive(&s("kitten"), &s("sitting")), 3);
        assert_eq!(edit_distance(&s("kitten"), &s("sitting")), 3);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(RewardKind::NegEdit, &s("abc"), &s("abc")).unwrap(), 0.0);
        assert_eq!(reward(RewardKind::NegHamming, &s("ab"), &s("bb")).unwrap(), -1.0);
        assert_eq!(reward(RewardKind::NegEdit, &s("kitten"), &s("sitting")).unwrap(), -3.0);
        assert!(reward(RewardKind::NegHamming, &s("a"), &s("ab")).is_err());
    }

    #[test]
    fn vocab_rules() {
        assert!(Vocab::new(1).is_err());
        let v = Vocab::new(3).unwrap();
        assert_eq!(v.nil_token(), 3);
        assert!(!v.contains(v.nil_token()));
        assert_eq!(v.tokens().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(v.validate(&[0, 2, 3]).is_err());
    }

    fn seq(max_len: usize, v: u32) -> impl Strategy<Value = Vec<Token>> {
        prop::collection::vec(0..v, 0..=max_len)
    }

    proptest! {
        #[test]
        fn dp_matches_recursion(a in seq(7, 3), b in seq(7, 3)) {
            prop_assert_eq!(edit_distance(&a, &b), edit_recursive(&a, &b));
        }

        #[test]
        fn triangle_inequality(a in seq(8, 5), b in seq(8, 5), c in seq(8, 5)) {
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }

        #[test]
        fn symmetric_and_bounded(a in seq(8, 5), b in seq(8, 5)) {
            let d = edit_distance(&a, &b);
            prop_assert_eq!(d, edit_distance(&b, &a));
            prop_assert!(a.len().abs_diff(b.len()) <= d);
            prop_assert!(d <= a.len().max(b.len()));
        }

        #[test]
        fn edit_below_hamming((a, b) in (0usize..8).prop_flat_map(|n| (
            prop::collection::vec(0u32..5, n),
            prop::collection::vec(0u32..5, n),
        ))) {
            prop_assert!(edit_distance(&a, &b) <= hamming_distance(&a, &b).unwrap());
            let r = reward(RewardKind::NegHamming, &a, &b).unwrap();
            prop_assert_eq!(r, reward(RewardKind::NegHamming, &b, &a).unwrap());
            prop_assert_eq!(r.fract(), 0.0);
        }
    }
}
