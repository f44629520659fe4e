//! The exponentiated payoff distribution `q(y | y*; τ) ∝ exp(r(y, y*) / τ)`.
//!
//! Small output spaces are handled by enumeration. Larger ones go through
//! stratified samplers that first draw a distance `e` from reweighted ball
//! counts and then apply a uniformly chosen edit script of that size.

use std::collections::HashSet;
use std::hash::Hash;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counting::{edit_ball_count, hamming_ball_count, log_script_share, EditCountTable};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, entropy, log_sum_exp};
use crate::rewards::{reward, RewardKind, Sequence, Token, Vocab};
use crate::rng;

/// Upper bound on `v^(len+1)` for anything enumerated.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

const SUM_TOLERANCE: f64 = 1e-12;

/// A finite distribution over distinct outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical<T> {
    support: Vec<T>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl<T: Eq + Hash> Categorical<T> {
    pub fn new(support: Vec<T>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::DimensionMismatch { left: support.len(), right: probs.len() });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("probabilities must be finite and non-negative".into()));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut seen = HashSet::with_capacity(support.len());
        if !support.iter().all(|x| seen.insert(x)) {
            return Err(Error::InvalidDistribution("support entries are not distinct".into()));
        }
        let cdf = build_cdf(&probs);
        Ok(Self { support, probs, cdf })
    }

    /// Normalizes `exp(log_weights)`. Fails when every weight is zero.
    pub fn from_log_weights(support: Vec<T>, log_weights: &[f64]) -> Result<Self> {
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFinite("log weight".into()));
        }
        let z = log_sum_exp(log_weights);
        if z == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights);
        }
        let mut probs: Vec<f64> = log_weights.iter().map(|&w| (w - z).exp()).collect();
        // Remove the last ulp-level drift so the sum check is exact in spirit.
        let total = compensated_sum(probs.iter().copied());
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(support, probs)
    }

    pub fn one_hot(support: Vec<T>, at: &T) -> Result<Self> {
        let probs: Vec<f64> = support.iter().map(|x| if x == at { 1.0 } else { 0.0 }).collect();
        if !probs.contains(&1.0) {
            return Err(Error::InvalidArgument("one-hot point is not in the support".into()));
        }
        Self::new(support, probs)
    }
}

impl<T> Categorical<T> {
    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    /// Index of the outcome selected by one uniform draw (inverse CDF).
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &T {
        &self.support[self.sample_index(rng)]
    }

    /// Index of the most probable outcome; the earliest wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl<T: PartialEq> Categorical<T> {
    pub fn prob_of(&self, x: &T) -> f64 {
        self.support.iter().position(|s| s == x).map_or(0.0, |i| self.probs[i])
    }
}

fn build_cdf(probs: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
        cdf[last..].iter_mut().for_each(|c| *c = 1.0);
    }
    cdf
}

/// How the per-edit penalty is applied when reweighting ball counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `exp(-e / τ)`.
    AsWritten,
    /// `exp(-e (1 + ln v) / τ)`; matches the reference edit-fraction table at `v = 61`.
    Figure1,
}

impl WeightMode {
    pub fn log_weight(&self, e: usize, v: usize, tau: f64) -> f64 {
        let per_edit = match self {
            WeightMode::AsWritten => 1.0,
            WeightMode::Figure1 => 1.0 + (v as f64).ln(),
        };
        -(e as f64) * per_edit / tau
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::AsWritten => "as_written",
            WeightMode::Figure1 => "figure1",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" | "as-written" => Ok(WeightMode::AsWritten),
            "figure1" => Ok(WeightMode::Figure1),
            other => Err(Error::InvalidArgument(format!("unknown weight mode '{other}'"))),
        }
    }
}

/// Parameters of one payoff distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffSpec {
    pub target: Sequence,
    pub tau: f64,
    pub reward: RewardKind,
    pub vocab: Vocab,
    pub mode: WeightMode,
}

impl PayoffSpec {
    pub fn new(target: Sequence, tau: f64, reward: RewardKind, vocab: Vocab, mode: WeightMode) -> Result<Self> {
        check_tau(tau)?;
        if target.is_empty() {
            return Err(Error::InvalidArgument("target must be non-empty".into()));
        }
        vocab.validate(&target)?;
        Ok(Self { target, tau, reward, vocab, mode })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

fn check_positive_tau(tau: f64) -> Result<()> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Err(Error::DeltaMode);
    }
    Ok(())
}

/// Whether [`enumerate_sequences`] yields one length or every length up to
/// the maximum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    Fixed,
    UpTo,
}

impl LengthMode {
    pub fn name(&self) -> &'static str {
        match self {
            LengthMode::Fixed => "fixed",
            LengthMode::UpTo => "up_to",
        }
    }
}

impl std::str::FromStr for LengthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LengthMode::Fixed),
            "up_to" | "up-to" => Ok(LengthMode::UpTo),
            other => Err(Error::InvalidArgument(format!("unknown length mode '{other}'"))),
        }
    }
}

/// Every sequence of the requested length(s), in lexicographic order.
pub fn enumerate_sequences(vocab: Vocab, len: usize, mode: LengthMode) -> Result<Vec<Sequence>> {
    let v = vocab.size();
    let too_large = || Error::SpaceTooLarge { v, len };
    let bound = (v as u64).checked_pow(len as u32 + 1).ok_or_else(too_large)?;
    if bound > ENUMERATION_LIMIT {
        return Err(too_large());
    }
    let lengths: Vec<usize> = match mode {
        LengthMode::Fixed => vec![len],
        LengthMode::UpTo => (0..=len).collect(),
    };
    let mut out = Vec::new();
    for l in lengths {
        let total = v.pow(l as u32);
        for code in 0..total {
            let mut rest = code;
            let mut digits = vec![0 as Token; l];
            for slot in digits.iter_mut().rev() {
                *slot = (rest % v) as Token;
                rest /= v;
            }
            out.push(Sequence::new(digits));
        }
    }
    out.sort();
    Ok(out)
}

fn log_payoffs(spec: &PayoffSpec, space: &[Sequence]) -> Result<Vec<f64>> {
    space.iter().map(|y| Ok(reward(spec.reward, y, &spec.target)? / spec.tau)).collect()
}

/// `log Z(y*, τ) = log Σ_y exp(r(y, y*) / τ)` over `space`.
pub fn log_partition(spec: &PayoffSpec, space: &[Sequence]) -> Result<f64> {
    check_positive_tau(spec.tau)?;
    if space.is_empty() {
        return Err(Error::InvalidArgument("empty output space".into()));
    }
    Ok(log_sum_exp(&log_payoffs(spec, space)?))
}

/// `q(· | y*; τ)` over an enumerated space. At `τ = 0` this is the one-hot
/// distribution at the target, which must then be part of `space`.
pub fn enumerate_payoff(spec: &PayoffSpec, space: &[Sequence]) -> Result<Categorical<Sequence>> {
    check_tau(spec.tau)?;
    if spec.tau == 0.0 {
        return Categorical::one_hot(space.to_vec(), &spec.target);
    }
    if space.is_empty() {
        return Err(Error::InvalidArgument("empty output space".into()));
    }
    Categorical::from_log_weights(space.to_vec(), &log_payoffs(spec, space)?)
}

/// Distribution of the number of edits, `P(e) ∝ c(e, m) · w(e)` for
/// `e ∈ 0..=2m`.
pub fn edit_distance_weights(m: usize, v: usize, tau: f64, mode: WeightMode) -> Result<Categorical<usize>> {
    check_positive_tau(tau)?;
    let table = EditCountTable::new(m, v)?;
    let log_w: Vec<f64> =
        table.log_counts().iter().enumerate().map(|(e, &lc)| lc + mode.log_weight(e, v, tau)).collect();
    Categorical::from_log_weights((0..=2 * m).collect(), &log_w)
}

/// Distribution of the Hamming distance, `P(e) ∝ C(m, e) (v-1)^e · w(e)` for
/// `e ∈ 0..=m`.
pub fn hamming_distance_weights(m: usize, v: usize, tau: f64, mode: WeightMode) -> Result<Categorical<usize>> {
    check_positive_tau(tau)?;
    let log_w =
        (0..=m).map(|e| Ok(hamming_ball_count(e, m, v)? + mode.log_weight(e, v, tau))).collect::<Result<Vec<f64>>>()?;
    Categorical::from_log_weights((0..=m).collect(), &log_w)
}

pub fn sample_edit_distance<R: Rng + ?Sized>(weights: &Categorical<usize>, rng: &mut R) -> usize {
    *weights.sample(rng)
}

/// Applies a uniformly chosen `e`-edit script to `ystar`.
///
/// The number of substitutions `s` is drawn proportionally to its share of
/// `c(e, m)`. Each of the `s` distinct positions is replaced by one of `v`
/// options: the `v - 1` other tokens or nil (a deletion). The remaining
/// `e - s` insertions are spread over the `m - s + 1` gaps around the
/// unsubstituted positions, uniformly over all such arrangements, with each
/// inserted token uniform over the vocabulary. Inside a gap, replacement
/// tokens come first and inserted tokens follow.
pub fn apply_random_edits<R: Rng + ?Sized>(ystar: &[Token], e: usize, vocab: Vocab, rng: &mut R) -> Result<Sequence> {
    let m = ystar.len();
    if e > 2 * m {
        return Err(Error::EditOutOfRange { e, max: 2 * m });
    }
    if e == 0 {
        return Ok(Sequence::from(ystar));
    }
    let v = vocab.size();
    let shares: Vec<f64> = (0..=m).map(|s| log_script_share(e, m, s)).collect();
    let s = *Categorical::from_log_weights((0..=m).collect(), &shares)?.sample(rng);

    let mut substituted = vec![None::<Token>; m];
    let mut picked = index::sample(rng, m, s).into_vec();
    picked.sort_unstable();
    for pos in picked {
        let k = rng.gen_range(0..v) as Token;
        let original = ystar[pos];
        let replacement = if k as usize == v - 1 {
            vocab.nil_token()
        } else if k >= original {
            k + 1
        } else {
            k
        };
        substituted[pos] = Some(replacement);
    }

    let inserts = e - s;
    let gaps = m - s + 1;
    let per_gap = stars_and_bars(inserts, gaps, rng);

    let mut out = Vec::with_capacity(m + inserts);
    let mut gap = 0;
    let push_inserts = |out: &mut Vec<Token>, count: usize, rng: &mut R| {
        for _ in 0..count {
            out.push(rng.gen_range(0..v) as Token);
        }
    };
    for (pos, &token) in ystar.iter().enumerate() {
        match substituted[pos] {
            Some(r) if r == vocab.nil_token() => {}
            Some(r) => out.push(r),
            None => {
                push_inserts(&mut out, per_gap[gap], rng);
                gap += 1;
                out.push(token);
            }
        }
    }
    push_inserts(&mut out, per_gap[gap], rng);
    Ok(Sequence::new(out))
}

// Uniform composition of `items` into `bins` non-negative parts.
fn stars_and_bars<R: Rng + ?Sized>(items: usize, bins: usize, rng: &mut R) -> Vec<usize> {
    let slots = items + bins - 1;
    let mut bars = index::sample(rng, slots, bins - 1).into_vec();
    bars.sort_unstable();
    let mut counts = Vec::with_capacity(bins);
    let mut prev = 0;
    for b in bars {
        counts.push(b - prev);
        prev = b + 1;
    }
    counts.push(slots - prev);
    counts
}

/// One draw from a payoff sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub sequence: Sequence,
    /// Log proposal probability attached to the output (see each sampler).
    pub log_weight: f64,
}

/// Anything that can draw outputs around a fixed target.
pub trait PayoffSampler {
    fn target(&self) -> &Sequence;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw;

    /// True when every draw returns the target (`τ = 0`).
    fn is_delta(&self) -> bool {
        false
    }
}

/// Stratified edit-distance sampler.
///
/// The attached log weight is `ln P(e) - ln c(e, m)`, the per-sequence
/// proposal probability under the no-collision approximation behind `c`.
#[derive(Clone, Debug)]
pub struct EditSampler {
    target: Sequence,
    vocab: Vocab,
    weights: Option<Categorical<usize>>,
    table: EditCountTable,
}

impl EditSampler {
    pub fn new(target: Sequence, vocab: Vocab, tau: f64, mode: WeightMode) -> Result<Self> {
        check_tau(tau)?;
        vocab.validate(&target)?;
        let m = target.len();
        let table = EditCountTable::new(m, vocab.size())?;
        let weights = if tau == 0.0 { None } else { Some(edit_distance_weights(m, vocab.size(), tau, mode)?) };
        Ok(Self { target, vocab, weights, table })
    }

    pub fn weights(&self) -> Option<&Categorical<usize>> {
        self.weights.as_ref()
    }

    /// Draws the edit count and the edited sequence.
    pub fn draw_with_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Draw) {
        let Some(weights) = &self.weights else {
            return (0, Draw { sequence: self.target.clone(), log_weight: 0.0 });
        };
        let idx = weights.sample_index(rng);
        let e = weights.support()[idx];
        let sequence =
            apply_random_edits(&self.target, e, self.vocab, rng).expect("edit count drawn from a valid range");
        let log_weight = weights.probs()[idx].ln() - self.table.log_counts()[e];
        (e, Draw { sequence, log_weight })
    }
}

impl PayoffSampler for EditSampler {
    fn target(&self) -> &Sequence {
        &self.target
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        self.draw_with_distance(rng).1
    }

    fn is_delta(&self) -> bool {
        self.weights.is_none()
    }
}

/// Stratified Hamming sampler. Outputs keep the target length; the attached
/// log weight is the exact per-sequence probability.
#[derive(Clone, Debug)]
pub struct HammingSampler {
    target: Sequence,
    vocab: Vocab,
    weights: Option<Categorical<usize>>,
}

impl HammingSampler {
    pub fn new(target: Sequence, vocab: Vocab, tau: f64, mode: WeightMode) -> Result<Self> {
        check_tau(tau)?;
        vocab.validate(&target)?;
        let weights =
            if tau == 0.0 { None } else { Some(hamming_distance_weights(target.len(), vocab.size(), tau, mode)?) };
        Ok(Self { target, vocab, weights })
    }

    pub fn weights(&self) -> Option<&Categorical<usize>> {
        self.weights.as_ref()
    }

    pub fn draw_with_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Draw) {
        let Some(weights) = &self.weights else {
            return (0, Draw { sequence: self.target.clone(), log_weight: 0.0 });
        };
        let idx = weights.sample_index(rng);
        let e = weights.support()[idx];
        let m = self.target.len();
        let v = self.vocab.size();
        let mut out = self.target.to_vec();
        for pos in index::sample(rng, m, e).into_iter() {
            let k = rng.gen_range(0..v - 1) as Token;
            out[pos] = if k >= out[pos] { k + 1 } else { k };
        }
        let log_weight = weights.probs()[idx].ln() - hamming_ball_count(e, m, v).expect("e <= m");
        (e, Draw { sequence: Sequence::new(out), log_weight })
    }
}

impl PayoffSampler for HammingSampler {
    fn target(&self) -> &Sequence {
        &self.target
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        self.draw_with_distance(rng).1
    }

    fn is_delta(&self) -> bool {
        self.weights.is_none()
    }
}

/// Draws one Hamming-stratified output; `τ = 0` returns the target.
pub fn sample_hamming<R: Rng + ?Sized>(
    ystar: &Sequence,
    tau: f64,
    vocab: Vocab,
    mode: WeightMode,
    rng: &mut R,
) -> Result<Sequence> {
    Ok(HammingSampler::new(ystar.clone(), vocab, tau, mode)?.draw(rng).sequence)
}

/// Exact sampler over an enumerated payoff distribution.
#[derive(Clone, Debug)]
pub struct EnumeratedSampler {
    target: Sequence,
    dist: Categorical<Sequence>,
    delta: bool,
}

impl EnumeratedSampler {
    pub fn new(spec: &PayoffSpec, space: &[Sequence]) -> Result<Self> {
        Ok(Self { target: spec.target.clone(), dist: enumerate_payoff(spec, space)?, delta: spec.tau == 0.0 })
    }

    pub fn distribution(&self) -> &Categorical<Sequence> {
        &self.dist
    }
}

impl PayoffSampler for EnumeratedSampler {
    fn target(&self) -> &Sequence {
        &self.target
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        let i = self.dist.sample_index(rng);
        Draw { sequence: self.dist.support()[i].clone(), log_weight: self.dist.probs()[i].ln() }
    }

    fn is_delta(&self) -> bool {
        self.delta
    }
}

/// Seeded batch of proposal draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub items: Vec<(Sequence, f64)>,
    pub master_seed: u64,
    pub trial_index: u64,
}

impl SampleBatch {
    /// Draws `n` items on the `(master_seed, trial_index)` stream.
    pub fn draw<S: PayoffSampler>(sampler: &S, n: usize, master_seed: u64, trial_index: u64) -> Self {
        let mut rng = rng::stream(master_seed, trial_index);
        let items = (0..n)
            .map(|_| {
                let d = sampler.draw(&mut rng);
                (d.sequence, d.log_weight)
            })
            .collect();
        Self { items, master_seed, trial_index }
    }
}

/// Self-normalized importance weights over the batch items (by index),
/// proportional to `exp(target_log_weight(y) - log_proposal(y))`.
pub fn importance_reweight<F>(batch: &SampleBatch, target_log_weight: F) -> Result<Categorical<usize>>
where
    F: Fn(&Sequence) -> f64,
{
    if batch.items.is_empty() {
        return Err(Error::InvalidArgument("empty sample batch".into()));
    }
    let log_w: Vec<f64> = batch.items.iter().map(|(y, lp)| target_log_weight(y) - lp).collect();
    if log_w.iter().any(|w| w.is_nan()) {
        return Err(Error::NonFinite("importance log weight".into()));
    }
    Categorical::from_log_weights((0..batch.items.len()).collect(), &log_w)
}

/// `ln c(e, m) + ln w(e)` before normalization; exposed for diagnostics.
pub fn edit_log_weight(e: usize, m: usize, v: usize, tau: f64, mode: WeightMode) -> Result<f64> {
    check_positive_tau(tau)?;
    Ok(edit_ball_count(e, m, v)? + mode.log_weight(e, v, tau))
}
