//! Edit-ball combinatorics in the log domain.
//!
//! The number of sequences reachable from a length-`m` reference with `e`
//! unit edits over a vocabulary of size `v` is approximated by
//!
//! ```text
//! c(e, m) = Σ_{s=0}^{m} C(m, s) · C(m + e - 2s, e - s) · v^e
//! ```
//!
//! where `s` counts substitutions (a deletion being a substitution by the nil
//! token). Binomials with a negative or overlarge lower index contribute
//! zero. Values reach `v^(2m)` quickly, so everything here works with natural
//! logarithms; [`exact_count_oracle`] evaluates the same sum with big
//! integers for testing.

use std::cell::RefCell;

use num_bigint::BigUint;
use num_traits::One;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, KahanSum};

/// Largest reference length accepted by [`exact_count_oracle`].
pub const ORACLE_MAX_M: usize = 30;

thread_local! {
    // ln(n!) for n = 0..len, grown on demand.
    static LOG_FACTORIALS: RefCell<(Vec<f64>, KahanSum)> =
        RefCell::new((vec![0.0], KahanSum::new()));
}

fn log_factorial(n: usize) -> f64 {
    LOG_FACTORIALS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (table, acc) = &mut *guard;
        while table.len() <= n {
            acc.add((table.len() as f64).ln());
            table.push(acc.value());
        }
        table[n]
    })
}

/// `ln C(n, k)`, or `-inf` when the binomial is zero (`k < 0`, `k > n`, or
/// `n < 0`).
pub fn log_binomial(n: i64, k: i64) -> f64 {
    if n < 0 || k < 0 || k > n {
        return f64::NEG_INFINITY;
    }
    let (n, k) = (n as usize, k as usize);
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

fn check_edit_args(e: usize, m: usize, v: usize) -> Result<()> {
    if m < 1 {
        return Err(Error::InvalidArgument("reference length must be at least 1".into()));
    }
    if v < 2 {
        return Err(Error::InvalidVocab(format!("size must be at least 2, got {v}")));
    }
    if e > 2 * m {
        return Err(Error::EditOutOfRange { e, max: 2 * m });
    }
    Ok(())
}

/// Log of the `s`-th summand of `c(e, m)` without the common `v^e` factor.
pub(crate) fn log_script_share(e: usize, m: usize, s: usize) -> f64 {
    let (e, m, s) = (e as i64, m as i64, s as i64);
    log_binomial(m, s) + log_binomial(m + e - 2 * s, e - s)
}

/// `ln c(e, m)`.
pub fn edit_ball_count(e: usize, m: usize, v: usize) -> Result<f64> {
    check_edit_args(e, m, v)?;
    let terms: Vec<f64> = (0..=m).map(|s| log_script_share(e, m, s)).collect();
    Ok(log_sum_exp(&terms) + e as f64 * (v as f64).ln())
}

/// `ln( C(m, e) · (v-1)^e )`, the exact number of length-`m` sequences at
/// Hamming distance exactly `e`.
pub fn hamming_ball_count(e: usize, m: usize, v: usize) -> Result<f64> {
    if v < 2 {
        return Err(Error::InvalidVocab(format!("size must be at least 2, got {v}")));
    }
    if e > m {
        return Err(Error::EditOutOfRange { e, max: m });
    }
    Ok(log_binomial(m as i64, e as i64) + e as f64 * ((v - 1) as f64).ln())
}

fn big_binomial(n: i64, k: i64) -> BigUint {
    if n < 0 || k < 0 || k > n {
        return BigUint::default();
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Exact `c(e, m)` with arbitrary-precision integers.
pub fn exact_count_oracle(e: usize, m: usize, v: usize) -> Result<BigUint> {
    if m > ORACLE_MAX_M {
        return Err(Error::OracleTooLarge { m, max: ORACLE_MAX_M });
    }
    check_edit_args(e, m, v)?;
    let (ei, mi) = (e as i64, m as i64);
    let mut total = BigUint::default();
    for s in 0..=mi {
        total += big_binomial(mi, s) * big_binomial(mi + ei - 2 * s, ei - s);
    }
    Ok(total * BigUint::from(v).pow(e as u32))
}

/// `ln c(e, m)` for every `e` in `0..=2m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EditCountTable {
    m: usize,
    v: usize,
    log_counts: Vec<f64>,
}

impl EditCountTable {
    pub fn new(m: usize, v: usize) -> Result<Self> {
        let log_counts = (0..=2 * m).map(|e| edit_ball_count(e, m, v)).collect::<Result<Vec<_>>>()?;
        Ok(Self { m, v, log_counts })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn log_counts(&self) -> &[f64] {
        &self.log_counts
    }

    pub fn log_count(&self, e: usize) -> Option<f64> {
        self.log_counts.get(e).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    // Pascal triangle with big integers; independent of big_binomial.
    fn pascal(n: usize) -> Vec<Vec<BigUint>> {
        let mut rows: Vec<Vec<BigUint>> = vec![vec![BigUint::one()]];
        for i in 1..=n {
            let prev = &rows[i - 1];
            let mut row = vec![BigUint::one(); i + 1];
            for j in 1..i {
                row[j] = &prev[j - 1] + &prev[j];
            }
            rows.push(row);
        }
        rows
    }

    #[test]
    fn log_binomial_examples() {
        assert!((log_binomial(4, 2) - 6f64.ln()).abs() < 1e-14);
        assert!((log_binomial(4, 2) - 1.791759).abs() < 1e-6);
        assert_eq!(log_binomial(9, 0), 0.0);
        assert_eq!(log_binomial(3, -1), f64::NEG_INFINITY);
        assert_eq!(log_binomial(3, 4), f64::NEG_INFINITY);
        assert_eq!(log_binomial(-1, 0), f64::NEG_INFINITY);
        let tri = pascal(20);
        assert_eq!(tri[20][10], BigUint::from(184_756u32));
        assert!((log_binomial(20, 10) - 184_756f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_binomial_matches_pascal() {
        let tri = pascal(60);
        for n in 0..=60 {
            for k in 0..=n {
                let exact = tri[n][k].to_f64().unwrap().ln();
                assert!((log_binomial(n as i64, k as i64) - exact).abs() < 1e-12, "{n} {k}");
            }
        }
    }

    #[test]
    fn ball_count_examples() {
        assert_eq!(edit_ball_count(0, 7, 5).unwrap(), 0.0);
        assert!((edit_ball_count(1, 20, 61).unwrap() - 2501f64.ln()).abs() < 1e-12);
        assert!((edit_ball_count(2, 20, 61).unwrap() - 3_054_941f64.ln()).abs() < 1e-12);
        assert!(edit_ball_count(41, 20, 61).is_err());
        assert!(edit_ball_count(0, 0, 61).is_err());
    }

    #[test]
    fn hamming_count_examples() {
        assert_eq!(hamming_ball_count(0, 5, 3).unwrap(), 0.0);
        assert!((hamming_ball_count(1, 3, 2).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert!((hamming_ball_count(2, 20, 61).unwrap() - 684_000f64.ln()).abs() < 1e-12);
        assert!(hamming_ball_count(4, 3, 2).is_err());
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(exact_count_oracle(1, 20, 61).unwrap(), BigUint::from(2501u32));
        assert_eq!(exact_count_oracle(0, 5, 3).unwrap(), BigUint::one());
        assert_eq!(exact_count_oracle(2, 20, 61).unwrap(), BigUint::from(3_054_941u32));
        assert!(matches!(exact_count_oracle(1, 31, 2), Err(Error::OracleTooLarge { .. })));
    }

    // Count edit scripts one by one: s substituted positions (v options each,
    // nil included), e-s insertions spread over the m-s+1 gaps left by the
    // surviving positions, v options per inserted token.
    fn count_scripts(e: usize, m: usize, v: usize) -> u64 {
        fn compositions(total: usize, parts: usize) -> u64 {
            if parts == 1 {
                return 1;
            }
            (0..=total).map(|k| compositions(total - k, parts - 1)).sum()
        }
        let mut count = 0u64;
        for mask in 0u32..(1 << m) {
            let s = mask.count_ones() as usize;
            if s > e {
                continue;
            }
            let ins = e - s;
            count += (v as u64).pow(s as u32) * compositions(ins, m - s + 1) * (v as u64).pow(ins as u32);
        }
        count
    }

    #[test]
    fn oracle_matches_script_enumeration() {
        for m in 1..=3 {
            for v in 2..=3 {
                for e in 0..=2 * m {
                    let oracle = exact_count_oracle(e, m, v).unwrap();
                    assert_eq!(oracle, BigUint::from(count_scripts(e, m, v)), "e={e} m={m} v={v}");
                }
            }
        }
    }

    #[test]
    fn log_count_matches_oracle() {
        for m in 1..=25 {
            for v in [2usize, 3, 7, 61, 100] {
                for e in 0..=2 * m {
                    let exact = exact_count_oracle(e, m, v).unwrap();
                    // ln of a big integer via its leading bits.
                    let bits = exact.bits();
                    let shift = bits.saturating_sub(60);
                    let top = (&exact >> shift).to_f64().unwrap();
                    let ln_exact = top.ln() + shift as f64 * std::f64::consts::LN_2;
                    let got = edit_ball_count(e, m, v).unwrap();
                    let rel = (got - ln_exact).exp_m1().abs();
                    assert!(rel < 1e-12, "e={e} m={m} v={v} rel={rel}");
                }
            }
        }
    }

    #[test]
    fn table_invariants() {
        for m in 1..=12 {
            for v in 2..=6 {
                let t = EditCountTable::new(m, v).unwrap();
                assert_eq!(t.log_counts()[0], 0.0);
                assert!((t.log_counts()[1] - (((2 * m + 1) * v) as f64).ln()).abs() < 1e-12);
                assert!(t.log_counts().iter().all(|x| x.is_finite()));
                for e in 0..m {
                    assert!(t.log_counts()[e + 1] > t.log_counts()[e]);
                }
            }
        }
    }

    // Exact neighborhood sizes by enumerating every sequence of length up to
    // m+e. The formula over-counts script collisions, so only the ratio is
    // reported.
    #[test]
    fn tiny_instance_ratio_report() {
        use crate::rewards::edit_distance;
        for m in 1..=3usize {
            for v in 2..=3usize {
                let reference: Vec<u32> = (0..m as u32).map(|i| i % v as u32).collect();
                let max_e = 2 * m;
                let mut exact = vec![0u64; max_e + 1];
                for len in 0..=(m + max_e).min(6) {
                    let total = v.pow(len as u32);
                    for code in 0..total {
                        let mut c = code;
                        let seq: Vec<u32> = (0..len)
                            .map(|_| {
                                let t = (c % v) as u32;
                                c /= v;
                                t
                            })
                            .collect();
                        let d = edit_distance(&seq, &reference);
                        if d <= max_e {
                            exact[d] += 1;
                        }
                    }
                }
                for e in 0..=2.min(max_e) {
                    let formula = edit_ball_count(e, m, v).unwrap().exp();
                    eprintln!(
                        "m={m} v={v} e={e} formula={formula:.0} exact={} ratio={:.3}",
                        exact[e],
                        formula / exact[e] as f64
                    );
                    assert!(exact[e] > 0);
                }
            }
        }
    }
}
