//! Bregman divergences for the negative-entropy and log-sum-exp potentials,
//! and numerical certificates for the identities that relate the two KL
//! directions.
//!
//! With `F_τ(p) = τ Σ p log p` on the simplex and its conjugate
//! `F*_τ(s) = τ log Σ exp(s / τ)` on logits, the transfers are
//! `f_τ(p) = τ (log p + 1)` and `f*_τ(s) = softmax(s / τ)`, and
//! `D_{F_τ}(p ‖ q) = τ KL(p ‖ q)`, `D_{F*_τ}(s ‖ r) = τ KL(f*_τ(r) ‖ f*_τ(s))`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, dot, kl_divergence, log_sum_exp, softmax_scaled};

/// Smallest entry accepted in a [`SimplexPoint`].
pub const MIN_SIMPLEX_ENTRY: f64 = 1e-12;

const SIMPLEX_SUM_TOLERANCE: f64 = 1e-12;

/// A probability vector strictly inside the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NotInterior("empty vector".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < MIN_SIMPLEX_ENTRY) {
            return Err(Error::NotInterior(format!("entry {bad} below {MIN_SIMPLEX_ENTRY}")));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > SIMPLEX_SUM_TOLERANCE {
            return Err(Error::NotInterior(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes positive weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A finite real vector of logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logit".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Strictly convex potentials with closed-form gradient and Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    /// `τ Σ x log x`, defined for positive vectors.
    NegEntropy { tau: f64 },
    /// `τ log Σ exp(x / τ)`.
    LogSumExp { tau: f64 },
    /// `½ ‖x‖²`.
    Quadratic,
}

impl Potential {
    fn check(&self, x: &[f64]) -> Result<()> {
        match *self {
            Potential::NegEntropy { tau } | Potential::LogSumExp { tau } if !(tau.is_finite() && tau > 0.0) => {
                return Err(Error::InvalidTemperature(tau));
            }
            _ => {}
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential argument".into()));
        }
        if let Potential::NegEntropy { .. } = self {
            if x.iter().any(|&v| v <= 0.0) {
                return Err(Error::NotInterior("negative entropy needs positive entries".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match *self {
            Potential::NegEntropy { tau } => tau * compensated_sum(x.iter().map(|&v| v * v.ln())),
            Potential::LogSumExp { tau } => {
                let scaled: Vec<f64> = x.iter().map(|v| v / tau).collect();
                tau * log_sum_exp(&scaled)
            }
            Potential::Quadratic => 0.5 * compensated_sum(x.iter().map(|v| v * v)),
        })
    }

    /// The transfer `∇F(x)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match *self {
            Potential::NegEntropy { tau } => x.iter().map(|v| tau * (v.ln() + 1.0)).collect(),
            Potential::LogSumExp { tau } => softmax_scaled(x, tau),
            Potential::Quadratic => x.to_vec(),
        })
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = x.len();
        Ok(match *self {
            Potential::NegEntropy { tau } => DMatrix::from_fn(n, n, |i, j| if i == j { tau / x[i] } else { 0.0 }),
            Potential::LogSumExp { tau } => softmax_hessian(&softmax_scaled(x, tau), tau),
            Potential::Quadratic => DMatrix::identity(n, n),
        })
    }

    /// `dᵀ H_F(x) d`, evaluated without forming the matrix.
    pub fn quad_form(&self, x: &[f64], d: &[f64]) -> Result<f64> {
        self.check(x)?;
        same_dim(x.len(), d.len())?;
        Ok(match *self {
            Potential::NegEntropy { tau } => tau * compensated_sum(x.iter().zip(d).map(|(v, di)| di * di / v)),
            Potential::LogSumExp { tau } => centered_second_moment(&softmax_scaled(x, tau), d) / tau,
            Potential::Quadratic => compensated_sum(d.iter().map(|v| v * v)),
        })
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left: a, right: b })
    }
}

// (1/τ)(Diag(u) - u uᵀ)
fn softmax_hessian(u: &[f64], tau: f64) -> DMatrix<f64> {
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { u[i] } else { 0.0 };
        (diag - u[i] * u[j]) / tau
    })
}

// Var_{y ~ u}[d(y)] by the two-pass centered formula.
fn centered_second_moment(u: &[f64], d: &[f64]) -> f64 {
    let mean = dot(u, d);
    compensated_sum(u.iter().zip(d).map(|(w, x)| w * (x - mean) * (x - mean)))
}

pub fn kl(p: &SimplexPoint, q: &SimplexPoint) -> Result<f64> {
    same_dim(p.dim(), q.dim())?;
    Ok(kl_divergence(p.probs(), q.probs()))
}

/// `D_F(p ‖ q) = F(p) - F(q) - (p - q)ᵀ ∇F(q)`.
pub fn bregman(potential: &Potential, p: &[f64], q: &[f64]) -> Result<f64> {
    same_dim(p.len(), q.len())?;
    let grad_q = potential.gradient(q)?;
    let linear = compensated_sum(p.iter().zip(q).zip(&grad_q).map(|((a, b), g)| (a - b) * g));
    Ok(potential.value(p)? - potential.value(q)? - linear)
}

/// `f*_τ(s) = softmax(s / τ)`.
pub fn lse_transfer(s: &LogitVector, tau: f64) -> Result<SimplexPoint> {
    check_tau(tau)?;
    SimplexPoint::new(softmax_scaled(s.values(), tau))
}

/// `f_τ(p) = τ (log p + 1)`.
pub fn entropy_transfer(p: &SimplexPoint, tau: f64) -> Result<LogitVector> {
    check_tau(tau)?;
    LogitVector::new(p.probs().iter().map(|v| tau * (v.ln() + 1.0)).collect())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

/// `H_{F*_τ}(r) = (1/τ)(Diag(u) - u uᵀ)` with `u = f*_τ(r)`.
pub fn lse_hessian(r: &LogitVector, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    Ok(softmax_hessian(&softmax_scaled(r.values(), tau), tau))
}

/// The Hessian quadratic form and the matching scaled variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceForms {
    /// `δᵀ H_{F*_τ}(r) δ` through the explicit matrix.
    pub quadratic: f64,
    /// `(1/τ) Var_{y ~ f*_τ(r)}[δ(y)]`.
    pub variance: f64,
}

impl VarianceForms {
    pub fn discrepancy(&self) -> f64 {
        (self.quadratic - self.variance).abs()
    }
}

pub fn quad_form_as_variance(delta: &LogitVector, r: &LogitVector, tau: f64) -> Result<VarianceForms> {
    same_dim(delta.dim(), r.dim())?;
    let h = lse_hessian(r, tau)?;
    let d = nalgebra::DVector::from_column_slice(delta.values());
    let quadratic = d.dot(&(&h * &d));
    let u = softmax_scaled(r.values(), tau);
    let mean = dot(&u, delta.values());
    let second = dot(&u, &delta.values().iter().map(|x| x * x).collect::<Vec<_>>());
    let variance = (second - mean * mean) / tau;
    Ok(VarianceForms { quadratic, variance })
}

/// Both sides of the primal/dual divergence identities for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualReport {
    /// `D_{F_τ}(p ‖ q)`.
    pub forward_primal: f64,
    /// `D_{F*_τ}(f_τ(q) ‖ f_τ(p))`.
    pub forward_dual: f64,
    /// `F_τ(p) - ⟨p, f_τ(q)⟩ + F*_τ(f_τ(q))`.
    pub forward_mixed: f64,
    /// `D_{F_τ}(q ‖ p)`.
    pub reverse_primal: f64,
    /// `D_{F*_τ}(f_τ(p) ‖ f_τ(q))`.
    pub reverse_dual: f64,
    pub reverse_mixed: f64,
    /// `max |f*_τ(f_τ(x)) - x|` over both points.
    pub inverse_error: f64,
}

impl DualReport {
    pub fn forward_discrepancy(&self) -> f64 {
        (self.forward_primal - self.forward_dual).abs().max((self.forward_primal - self.forward_mixed).abs())
    }

    pub fn reverse_discrepancy(&self) -> f64 {
        (self.reverse_primal - self.reverse_dual).abs().max((self.reverse_primal - self.reverse_mixed).abs())
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.forward_discrepancy().max(self.reverse_discrepancy()).max(self.inverse_error)
    }
}

pub fn dual_divergence_check(p: &SimplexPoint, q: &SimplexPoint, tau: f64) -> Result<DualReport> {
    same_dim(p.dim(), q.dim())?;
    let primal = Potential::NegEntropy { tau };
    let dual = Potential::LogSumExp { tau };
    let fp = entropy_transfer(p, tau)?;
    let fq = entropy_transfer(q, tau)?;
    let (pp, qq) = (p.probs(), q.probs());
    let (sp, sq) = (fp.values(), fq.values());

    let mixed = |x: &[f64], image: &[f64]| -> Result<f64> { Ok(primal.value(x)? - dot(x, image) + dual.value(image)?) };
    let inverse_error = [(pp, sp), (qq, sq)]
        .iter()
        .flat_map(|(x, s)| {
            let back = softmax_scaled(s, tau);
            x.iter().zip(back).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    Ok(DualReport {
        forward_primal: bregman(&primal, pp, qq)?,
        forward_dual: bregman(&dual, sq, sp)?,
        forward_mixed: mixed(pp, sq)?,
        reverse_primal: bregman(&primal, qq, pp)?,
        reverse_dual: bregman(&dual, sp, sq)?,
        reverse_mixed: mixed(qq, sp)?,
        inverse_error,
    })
}

/// `D_{F*_τ}(s ‖ r)` next to `τ KL(f*_τ(r) ‖ f*_τ(s))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperedKlReport {
    pub bregman: f64,
    pub scaled_kl: f64,
}

impl TemperedKlReport {
    pub fn discrepancy(&self) -> f64 {
        (self.bregman - self.scaled_kl).abs()
    }
}

pub fn tempered_kl_check(s: &LogitVector, r: &LogitVector, tau: f64) -> Result<TemperedKlReport> {
    same_dim(s.dim(), r.dim())?;
    check_tau(tau)?;
    let bregman = bregman(&Potential::LogSumExp { tau }, s.values(), r.values())?;
    let q = softmax_scaled(r.values(), tau);
    let p = softmax_scaled(s.values(), tau);
    Ok(TemperedKlReport { bregman, scaled_kl: tau * kl_divergence(&q, &p) })
}

/// Interpolation coefficients that make the midpoint expansions exact.
///
/// With `M = F(p) + F(q) - 2F((p+q)/2)`, the certificate holds `α, β ∈ [0, ½]`
/// such that `D(q‖p) - M = ¼ (q-p)ᵀ H((1-α)p + αq) (q-p)` and
/// `D(p‖q) - M = ¼ (p-q)ᵀ H((1-β)q + βp) (p-q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Certificate {
    pub alpha: f64,
    pub beta: f64,
    /// `|g_a(α) - (D(q‖p) - M)|`.
    pub residual_a: f64,
    /// `|g_b(β) - (D(p‖q) - M)|`.
    pub residual_b: f64,
    /// `D(p ‖ q)`.
    pub forward: f64,
    /// `D(q ‖ p)`.
    pub reverse: f64,
    pub midpoint_gap: f64,
    /// `g_a(α)`.
    pub quad_a: f64,
    /// `g_b(β)`.
    pub quad_b: f64,
}

impl Prop1Certificate {
    /// `|D(q‖p) - D(p‖q) - g_a(α) + g_b(β)|`.
    pub fn equality_residual(&self) -> f64 {
        (self.reverse - self.forward - self.quad_a + self.quad_b).abs()
    }
}

const SCAN_CELLS: usize = 256;

// Root of `h` on [0, ½]. Endpoints are tried first, then a sign change on
// the endpoints, then a grid scan; bisection runs to float resolution.
fn find_root<H: Fn(f64) -> Result<f64>>(h: H, scale: f64, label: &str) -> Result<f64> {
    let tol = 1e-12 * scale.max(1.0);
    let (lo, hi) = (0.0, 0.5);
    let (h_lo, h_hi) = (h(lo)?, h(hi)?);
    if h_lo.abs() <= tol {
        return Ok(lo);
    }
    if h_hi.abs() <= tol {
        return Ok(hi);
    }
    let bracket = if h_lo.signum() != h_hi.signum() {
        Some((lo, hi, h_lo))
    } else {
        let mut found = None;
        let mut prev = (lo, h_lo);
        let mut closest = (lo, h_lo.abs());
        for i in 1..=SCAN_CELLS {
            let t = hi * i as f64 / SCAN_CELLS as f64;
            let v = h(t)?;
            if v.abs() < closest.1 {
                closest = (t, v.abs());
            }
            if v.signum() != prev.1.signum() || v == 0.0 {
                found = Some((prev.0, t, prev.1));
                break;
            }
            prev = (t, v);
        }
        match found {
            Some(b) => Some(b),
            None if closest.1 <= tol => return Ok(closest.0),
            None => None,
        }
    };
    let Some((mut a, mut b, mut h_a)) = bracket else {
        return Err(Error::CertificateFailed(format!(
            "{label}: no sign change on [0, 1/2] (h(0) = {h_lo:e}, h(1/2) = {h_hi:e})"
        )));
    };
    loop {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let h_mid = h(mid)?;
        if h_mid == 0.0 {
            return Ok(mid);
        }
        if h_mid.signum() == h_a.signum() {
            a = mid;
            h_a = h_mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn lerp(from: &[f64], to: &[f64], t: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| (1.0 - t) * a + t * b).collect()
}

/// Solves for the two interpolation coefficients of the midpoint identity.
pub fn prop1_certificate(potential: &Potential, p: &[f64], q: &[f64]) -> Result<Prop1Certificate> {
    same_dim(p.len(), q.len())?;
    if p == q {
        return Err(Error::InvalidArgument("certificate needs p != q".into()));
    }
    let mid = lerp(p, q, 0.5);
    let midpoint_gap = potential.value(p)? + potential.value(q)? - 2.0 * potential.value(&mid)?;
    let forward = bregman(potential, p, q)?;
    let reverse = bregman(potential, q, p)?;
    let target_a = reverse - midpoint_gap;
    let target_b = forward - midpoint_gap;

    let q_minus_p: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let p_minus_q: Vec<f64> = q_minus_p.iter().map(|d| -d).collect();
    let g_a = |alpha: f64| Ok(0.25 * potential.quad_form(&lerp(p, q, alpha), &q_minus_p)?);
    let g_b = |beta: f64| Ok(0.25 * potential.quad_form(&lerp(q, p, beta), &p_minus_q)?);

    let scale = forward.abs().max(reverse.abs());
    let alpha = find_root(|t| Ok(g_a(t)? - target_a), scale, "alpha")?;
    let beta = find_root(|t| Ok(g_b(t)? - target_b), scale, "beta")?;
    let quad_a = g_a(alpha)?;
    let quad_b = g_b(beta)?;
    Ok(Prop1Certificate {
        alpha,
        beta,
        residual_a: (quad_a - target_a).abs(),
        residual_b: (quad_b - target_b).abs(),
        forward,
        reverse,
        midpoint_gap,
        quad_a,
        quad_b,
    })
}

/// Outcome of the reverse-KL bound check for one pair of logit vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop2Report {
    /// `KL(p ‖ q)` with `p = f*_τ(s)`, `q = f*_τ(r)`.
    pub kl_pq: f64,
    pub kl_qp: f64,
    /// `KL(q ‖ p) + ‖s - r‖² / τ²`.
    pub bound: f64,
    pub holds: bool,
    /// `‖f*_τ(a) - f*_τ(b)‖_∞` at the certified interpolants.
    pub sup_gap: f64,
    /// `‖f*_τ(b)‖₂²`.
    pub sq_norm: f64,
    /// `|KL(p‖q) - KL(q‖p) - (Var_a - Var_b) / (4τ²)|` at the interpolants.
    pub variance_identity_residual: f64,
    pub certificate: Prop1Certificate,
}

impl Prop2Report {
    pub fn ingredients_hold(&self) -> bool {
        self.sup_gap <= 2.0 && self.sq_norm <= 1.0 + 1e-15
    }
}

pub fn prop2_inequality_check(s: &LogitVector, r: &LogitVector, tau: f64) -> Result<Prop2Report> {
    same_dim(s.dim(), r.dim())?;
    check_tau(tau)?;
    if s == r {
        return Err(Error::InvalidArgument("bound is strict only for s != r".into()));
    }
    let (sv, rv) = (s.values(), r.values());
    let p = softmax_scaled(sv, tau);
    let q = softmax_scaled(rv, tau);
    let kl_pq = kl_divergence(&p, &q);
    let kl_qp = kl_divergence(&q, &p);
    let delta: Vec<f64> = sv.iter().zip(rv).map(|(a, b)| a - b).collect();
    let sq_dist = compensated_sum(delta.iter().map(|d| d * d));
    let bound = kl_qp + sq_dist / (tau * tau);

    let certificate = prop1_certificate(&Potential::LogSumExp { tau }, sv, rv)?;
    let a = lerp(sv, rv, certificate.alpha);
    let b = lerp(rv, sv, certificate.beta);
    let ua = softmax_scaled(&a, tau);
    let ub = softmax_scaled(&b, tau);
    let sup_gap = ua.iter().zip(&ub).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let sq_norm = compensated_sum(ub.iter().map(|x| x * x));
    let var_a = centered_second_moment(&ua, &delta);
    let var_b = centered_second_moment(&ub, &delta);
    let variance_identity_residual = (kl_pq - kl_qp - (var_a - var_b) / (4.0 * tau * tau)).abs();

    Ok(Prop2Report {
        kl_pq,
        kl_qp,
        bound,
        holds: kl_pq < bound,
        sup_gap,
        sq_norm,
        variance_identity_residual,
        certificate,
    })
}
