//! Small numerical kernels shared across modules.

/// Kahan-Babuska (Neumaier) compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// `log Σ exp(x_i)` with max-shift and compensated accumulation.
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + compensated_sum(xs.iter().map(|&x| (x - max).exp())).ln()
}

/// Normalizes log-weights into probabilities.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w);
    log_w.iter().map(|&w| (w - z).exp()).collect()
}

/// `softmax(s / tau)`.
pub fn softmax_scaled(s: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = s.iter().map(|&x| x / tau).collect();
    normalize_log_weights(&scaled)
}

/// Shannon entropy with the `0 log 0 = 0` convention.
pub fn entropy(p: &[f64]) -> f64 {
    -compensated_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()))
}

/// `Σ p log(p/q)` with `0 log 0 = 0`; `+inf` when `q` is zero where `p` is not.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = KahanSum::new();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        acc.add(pi * (pi.ln() - qi.ln()));
    }
    acc.value()
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * compensated_sum(p.iter().zip(q).map(|(a, b)| (a - b).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}
