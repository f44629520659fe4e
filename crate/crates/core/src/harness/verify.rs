//! Verification suites over seeded random instances. Every check reports the
//! number of instances, the largest error seen and the tolerance it must
//! stay under.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::config::{Suite, VerifyParams};
use crate::divergence::{
    dual_divergence_check, prop1_certificate, prop2_inequality_check, quad_form_as_variance, tempered_kl_check,
    LogitVector, Potential, SimplexPoint,
};
use crate::error::Result;
use crate::numeric::{compensated_sum, entropy, kl_divergence, softmax_scaled, total_variation};
use crate::objectives::{
    exact_gradient, grad_raml_stochastic, grad_rl_stochastic, loss_ml, loss_raml, loss_rl, Baseline, Method, Model,
    ModelKind, OutputSpace, RlEstimator, Task, TrainingSet,
};
use crate::payoff::{
    enumerate_payoff, log_partition, EditSampler, EnumeratedSampler, HammingSampler, PayoffSampler, PayoffSpec,
    WeightMode,
};
use crate::rewards::{edit_distance, RewardKind, Sequence, Token, Vocab};
use crate::rng::{stream, LabRng};

// Disjoint stream ranges per family of random instances.
const IDENTITY_STREAMS: u64 = 1 << 32;
const DUALITY_STREAMS: u64 = 2 << 32;
const PROP1_STREAMS: u64 = 3 << 32;
const PROP2_STREAMS: u64 = 4 << 32;
const SAMPLER_STREAMS: u64 = 5 << 32;
const GRADIENT_STREAMS: u64 = 6 << 32;
const ESTIMATOR_STREAMS: u64 = 7 << 32;

const DRAW_CHUNK: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    /// Passes when every error is finite and strictly below `tolerance`.
    pub fn below(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let max_error =
            errors.iter().copied().fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) });
        let max_error = if errors.is_empty() { 0.0 } else { max_error };
        Self {
            name: name.to_string(),
            instances: errors.len(),
            max_error,
            tolerance,
            passed: !errors.is_empty() && errors.iter().all(|e| e.is_finite() && *e < tolerance),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub header: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{:<40} {:>9} {:>12} {:>10}  status", "check", "instances", "max_error", "tolerance");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<40} {:>9} {:>12.3e} {:>10.1e}  {}",
                c.name,
                c.instances,
                c.max_error,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(
            out,
            "overall {} ({passed}/{} checks passed)",
            if self.all_passed() { "PASS" } else { "FAIL" },
            self.checks.len()
        );
        out
    }
}

pub fn run(params: &VerifyParams) -> Result<Report> {
    let mut checks = Vec::new();
    if params.suite.includes(Suite::Identities) {
        checks.extend(identity_checks(params.trials, params.seed)?);
        checks.extend(duality_checks(params.trials, params.seed)?);
    }
    if params.suite.includes(Suite::Props) {
        checks.extend(prop1_checks(params.trials, params.seed)?);
        checks.extend(prop2_checks(10 * params.trials, params.seed)?);
    }
    if params.suite.includes(Suite::Sampler) {
        checks.extend(sampler_checks(params.sampler_draws, params.seed)?);
    }
    if params.suite.includes(Suite::Gradients) {
        checks.extend(gradient_checks(params.trials, params.seed)?);
        checks.extend(estimator_checks(params.estimator_samples, params.seed)?);
    }
    let header = vec![
        "raml-lab verify".to_string(),
        format!(
            "suite={} trials={} master_seed={} sampler_draws={} estimator_samples={}",
            params.suite.name(),
            params.trials,
            params.seed,
            params.sampler_draws,
            params.estimator_samples
        ),
    ];
    Ok(Report { header, checks })
}

// Runs `f` on `n` independent streams in parallel, keeping input order.
fn par_trials<T, F>(n: usize, seed: u64, family: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut LabRng) -> Result<T> + Sync,
{
    (0..n as u64).into_par_iter().map(|i| f(&mut stream(seed, family + i))).collect()
}

fn columns<const N: usize>(rows: &[[f64; N]]) -> [Vec<f64>; N] {
    std::array::from_fn(|k| rows.iter().map(|r| r[k]).collect())
}

fn random_logits<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..=scale)).collect()
}

fn random_simplex<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SimplexPoint> {
    SimplexPoint::new(softmax_scaled(&random_logits(d, 3.0, rng), 1.0))
}

fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

fn random_kind<R: Rng + ?Sized>(rng: &mut R) -> ModelKind {
    if rng.gen_bool(0.5) {
        ModelKind::Tabular
    } else {
        ModelKind::PositionFactorized
    }
}

fn random_reward<R: Rng + ?Sized>(rng: &mut R) -> RewardKind {
    if rng.gen_bool(0.5) {
        RewardKind::NegHamming
    } else {
        RewardKind::NegEdit
    }
}

struct Instance {
    model: Model,
    data: TrainingSet,
}

fn random_instance<R: Rng + ?Sized>(max_v: usize, max_len: usize, scale: f64, rng: &mut R) -> Result<Instance> {
    let v = rng.gen_range(2..=max_v);
    let len = rng.gen_range(1..=max_len);
    let space = Arc::new(OutputSpace::new(Vocab::new(v)?, len)?);
    let contexts = rng.gen_range(1..=3);
    let n_pairs = rng.gen_range(1..=4);
    let pairs = (0..n_pairs)
        .map(|_| (rng.gen_range(0..contexts), space.sequences()[rng.gen_range(0..space.size())].clone()))
        .collect();
    let model = Model::random(random_kind(rng), space, contexts, scale, rng)?;
    Ok(Instance { model, data: TrainingSet::new(pairs)? })
}

/// KL reformulations of the three losses, each side computed separately.
pub fn identity_checks(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rows = par_trials(trials, seed, IDENTITY_STREAMS, |rng| {
        // v ≤ 5 and length ≤ 4 keep |Y| ≤ 625.
        let Instance { model, data } = random_instance(5, 4, 3.0, rng)?;
        let tau = [0.3, 1.0, 3.0][rng.gen_range(0..3)];
        let reward = random_reward(rng);
        let space = model.space();
        let (mut kl_pq, mut kl_qp, mut kl_dp, mut ent_q, mut log_z) = (vec![], vec![], vec![], vec![], vec![]);
        for (x, target) in data.pairs() {
            let spec = PayoffSpec::new(target.clone(), tau, reward, space.vocab(), WeightMode::AsWritten)?;
            let q = enumerate_payoff(&spec, space.sequences())?;
            let p = model.context(*x)?.probs;
            let delta: Vec<f64> = space.sequences().iter().map(|y| (y == target) as u8 as f64).collect();
            kl_pq.push(kl_divergence(&p, q.probs()));
            kl_qp.push(kl_divergence(q.probs(), &p));
            kl_dp.push(kl_divergence(&delta, &p));
            ent_q.push(entropy(q.probs()));
            log_z.push(log_partition(&spec, space.sequences())?);
        }
        let [kl_pq, kl_qp, kl_dp, ent_q, log_z] = [kl_pq, kl_qp, kl_dp, ent_q, log_z].map(compensated_sum);
        let ml = loss_ml(&model, &data)?;
        let raml = loss_raml(&model, &data, reward, tau)?;
        let rl = loss_rl(&model, &data, reward, tau)?;
        Ok([
            (kl_pq - (rl / tau + log_z)).abs(),
            (kl_dp - ml).abs(),
            (kl_qp - (raml - ent_q)).abs(),
            (rl - (tau * raml + tau * (kl_pq - kl_qp) - tau * ent_q - tau * log_z)).abs(),
        ])
    })?;
    let [rl_err, ml_err, raml_err, joint] = columns(&rows);
    Ok(vec![
        CheckResult::below("identities/rl_as_reverse_kl", &rl_err, 1e-10),
        CheckResult::below("identities/ml_as_kl_from_delta", &ml_err, 1e-12),
        CheckResult::below("identities/raml_as_kl_from_payoff", &raml_err, 1e-10),
        CheckResult::below("identities/rl_minus_scaled_raml", &joint, 1e-10),
    ])
}

/// Conjugate-duality identities of the entropy and log-sum-exp potentials.
pub fn duality_checks(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rows = par_trials(trials, seed, DUALITY_STREAMS, |rng| {
        let d = rng.gen_range(2..=10);
        let tau = log_uniform(0.1, 10.0, rng);
        let p = random_simplex(d, rng)?;
        let q = random_simplex(d, rng)?;
        let dual = dual_divergence_check(&p, &q, tau)?;
        let s = LogitVector::new(random_logits(d, 3.0 * tau, rng))?;
        let r = LogitVector::new(random_logits(d, 3.0 * tau, rng))?;
        let delta = LogitVector::new(random_logits(d, 3.0, rng))?;
        Ok([
            dual.forward_discrepancy(),
            dual.reverse_discrepancy(),
            tempered_kl_check(&s, &r, tau)?.discrepancy(),
            quad_form_as_variance(&delta, &r, tau)?.discrepancy(),
            dual.inverse_error,
        ])
    })?;
    let [fwd, rev, tempered, hess, inverse] = columns(&rows);
    Ok(vec![
        CheckResult::below("identities/dual_divergence_forward", &fwd, 1e-10),
        CheckResult::below("identities/dual_divergence_reverse", &rev, 1e-10),
        CheckResult::below("identities/tempered_kl", &tempered, 1e-10),
        CheckResult::below("identities/hessian_variance_form", &hess, 1e-10),
        CheckResult::below("identities/transfer_inverse", &inverse, 1e-10),
    ])
}

/// `β` of the two-point worked case from its closed form.
pub fn worked_case_beta() -> f64 {
    let (p, q) = ([0.8, 0.2], [0.2, 0.8]);
    let f = |x: &[f64]| x.iter().map(|v| v * v.ln()).sum::<f64>();
    let mid = [0.5, 0.5];
    let gap = f(&p) + f(&q) - 2.0 * f(&mid);
    let forward: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    // ¼ (p-q)ᵀ Diag(1/x) (p-q) with x = q + β(p-q) equals 0.09 / (x₁x₂).
    let product = 0.09 / (forward - gap);
    let t = (0.6 - (0.36 - 4.0 * (product - 0.16)).sqrt()) / 2.0;
    t / 0.6
}

pub fn prop1_checks(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rows = par_trials(trials, seed, PROP1_STREAMS, |rng| {
        let d = rng.gen_range(2..=10);
        let tau = log_uniform(0.1, 10.0, rng);
        let p = random_simplex(d, rng)?;
        let q = random_simplex(d, rng)?;
        let ent = prop1_certificate(&Potential::NegEntropy { tau }, p.probs(), q.probs())?;
        let s = random_logits(d, 3.0 * tau, rng);
        let r = random_logits(d, 3.0 * tau, rng);
        let lse = prop1_certificate(&Potential::LogSumExp { tau }, &s, &r)?;
        let in_range = |c: f64| if (0.0..=0.5).contains(&c) { 0.0 } else { f64::INFINITY };
        Ok([
            ent.residual_a.max(ent.residual_b) + in_range(ent.alpha) + in_range(ent.beta),
            lse.residual_a.max(lse.residual_b) + in_range(lse.alpha) + in_range(lse.beta),
        ])
    })?;
    let [ent, lse] = columns(&rows);
    let worked = prop1_certificate(&Potential::NegEntropy { tau: 1.0 }, &[0.8, 0.2], &[0.2, 0.8])?;
    Ok(vec![
        CheckResult::below("props/prop1_entropy_certificate", &ent, 1e-9),
        CheckResult::below("props/prop1_lse_certificate", &lse, 1e-9),
        CheckResult::below("props/prop1_worked_case_residual", &[worked.residual_a.max(worked.residual_b)], 1e-9),
        CheckResult::below("props/prop1_worked_case_beta_exact", &[(worked.beta - worked_case_beta()).abs()], 1e-9),
        CheckResult::below("props/prop1_worked_case_beta_0.1336", &[(worked.beta - 0.1336).abs()], 5e-5),
    ])
}

pub fn prop2_checks(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rows = par_trials(instances, seed, PROP2_STREAMS, |rng| {
        let d = rng.gen_range(2..=10);
        let tau = log_uniform(0.1, 10.0, rng);
        let s = random_logits(d, 3.0 * tau, rng);
        let mut r = random_logits(d, 3.0 * tau, rng);
        if r == s {
            r[0] += tau;
        }
        let rep = prop2_inequality_check(&LogitVector::new(s)?, &LogitVector::new(r)?, tau)?;
        // Relative margin of the strict bound; negative when it holds.
        Ok([
            (rep.kl_pq - rep.bound) / rep.bound,
            if rep.ingredients_hold() { 0.0 } else { f64::INFINITY },
            rep.variance_identity_residual,
        ])
    })?;
    let [margin, ingredients, variance] = columns(&rows);
    Ok(vec![
        CheckResult::below("props/prop2_inequality", &margin, 0.0),
        CheckResult::below("props/prop2_ingredients", &ingredients, 1.0),
        CheckResult::below("props/prop2_variance_identity", &variance, 1e-9),
    ])
}

fn binomial_exact(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn compositions(items: usize, bins: usize) -> Vec<Vec<usize>> {
    if bins == 1 {
        return vec![vec![items]];
    }
    (0..=items)
        .flat_map(|first| {
            compositions(items - first, bins - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn words(len: usize, v: usize) -> Vec<Vec<usize>> {
    (0..v.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let d = code % v;
                    code /= v;
                    d
                })
                .collect()
        })
        .collect()
}

/// Exact output distribution of a uniformly chosen `e`-edit script, by
/// enumerating every script: substitution count, positions, replacement
/// options (the other tokens in increasing order, then deletion), the
/// arrangement of insertions over the gaps before each kept token and at the
/// end, and the inserted tokens. Replacements precede insertions in a gap.
pub fn script_composition_oracle(ystar: &[Token], e: usize, v: usize) -> BTreeMap<Sequence, f64> {
    let m = ystar.len();
    let mut out = BTreeMap::new();
    let shares: Vec<f64> =
        (0..=m.min(e)).map(|s| binomial_exact(m, s) * binomial_exact(m + e - 2 * s, e - s)).collect();
    let total: f64 = shares.iter().sum();
    for (s, share) in shares.iter().enumerate() {
        if *share == 0.0 {
            continue;
        }
        let inserts = e - s;
        let gaps = m - s + 1;
        let subsets = combinations(m, s);
        let options = words(s, v);
        let arrangements = compositions(inserts, gaps);
        let tokens = words(inserts, v);
        let weight = share
            / total
            / subsets.len() as f64
            / options.len() as f64
            / arrangements.len() as f64
            / tokens.len() as f64;
        for subset in &subsets {
            for opts in &options {
                for arrangement in &arrangements {
                    for inserted in &tokens {
                        let mut seq = Vec::new();
                        let mut next_insert = inserted.iter();
                        let mut gap = 0;
                        let mut emit_gap = |seq: &mut Vec<Token>, gap: usize| {
                            for _ in 0..arrangement[gap] {
                                seq.push(*next_insert.next().unwrap() as Token);
                            }
                        };
                        for (pos, &tok) in ystar.iter().enumerate() {
                            if let Some(k) = subset.iter().position(|&p| p == pos) {
                                let alternatives: Vec<Token> = (0..v as Token).filter(|t| *t != tok).collect();
                                if let Some(alt) = alternatives.get(opts[k]) {
                                    seq.push(*alt);
                                }
                            } else {
                                emit_gap(&mut seq, gap);
                                gap += 1;
                                seq.push(tok);
                            }
                        }
                        emit_gap(&mut seq, gap);
                        *out.entry(Sequence::new(seq)).or_insert(0.0) += weight;
                    }
                }
            }
        }
    }
    out
}

/// Output distribution of the stratified edit sampler: the distance weights
/// mixed over the per-distance script oracle.
pub fn edit_sampler_oracle(ystar: &[Token], v: usize, tau: f64, mode: WeightMode) -> Result<BTreeMap<Sequence, f64>> {
    let m = ystar.len();
    let log_w: Vec<f64> = (0..=2 * m)
        .map(|e| {
            let count: f64 = (0..=m.min(e))
                .map(|s| binomial_exact(m, s) * binomial_exact(m + e - 2 * s, e - s) * (v as f64).powi(e as i32))
                .sum();
            count.ln() + mode.log_weight(e, v, tau)
        })
        .collect();
    let probs = softmax_scaled(&log_w, 1.0);
    let mut out = BTreeMap::new();
    for (e, pe) in probs.iter().enumerate() {
        for (seq, p) in script_composition_oracle(ystar, e, v) {
            *out.entry(seq).or_insert(0.0) += pe * p;
        }
    }
    Ok(out)
}

fn tv_against(oracle: &BTreeMap<Sequence, f64>, counts: &BTreeMap<Sequence, usize>, n: usize) -> f64 {
    let mut keys: Vec<&Sequence> = oracle.keys().chain(counts.keys()).collect();
    keys.sort();
    keys.dedup();
    let p: Vec<f64> = keys.iter().map(|k| oracle.get(*k).copied().unwrap_or(0.0)).collect();
    let q: Vec<f64> = keys.iter().map(|k| counts.get(*k).copied().unwrap_or(0) as f64 / n as f64).collect();
    total_variation(&p, &q)
}

struct EditDraws {
    distance_counts: Vec<usize>,
    outputs: BTreeMap<Sequence, usize>,
    worst_excess: i64,
}

// Draws in fixed-size chunks on their own streams so the result does not
// depend on the thread schedule.
fn draw_edits(sampler: &EditSampler, n: usize, seed: u64, family: u64, keep_outputs: bool) -> EditDraws {
    let m = sampler.target().len();
    let chunks = n.div_ceil(DRAW_CHUNK);
    let parts: Vec<EditDraws> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, family + c as u64);
            let size = DRAW_CHUNK.min(n - c * DRAW_CHUNK);
            let mut part =
                EditDraws { distance_counts: vec![0; 2 * m + 1], outputs: BTreeMap::new(), worst_excess: i64::MIN };
            for _ in 0..size {
                let (e, draw) = sampler.draw_with_distance(&mut rng);
                part.distance_counts[e] += 1;
                let d = edit_distance(&draw.sequence, sampler.target());
                part.worst_excess = part.worst_excess.max(d as i64 - e as i64);
                if keep_outputs {
                    *part.outputs.entry(draw.sequence).or_insert(0) += 1;
                }
            }
            part
        })
        .collect();
    let mut all = EditDraws { distance_counts: vec![0; 2 * m + 1], outputs: BTreeMap::new(), worst_excess: i64::MIN };
    for part in parts {
        all.distance_counts.iter_mut().zip(&part.distance_counts).for_each(|(a, b)| *a += b);
        for (k, c) in part.outputs {
            *all.outputs.entry(k).or_insert(0) += c;
        }
        all.worst_excess = all.worst_excess.max(part.worst_excess);
    }
    all
}

pub fn sampler_checks(draws: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut marginal = Vec::new();
    let mut end_to_end = Vec::new();
    let mut excess = Vec::new();
    let mut family = SAMPLER_STREAMS;

    let mut rng = stream(seed, family);
    let long_target: Vec<Token> = (0..20).map(|_| rng.gen_range(0..61)).collect();
    let mid_target: Vec<Token> = (0..6).map(|_| rng.gen_range(0..5)).collect();
    for (target, v, tau, mode) in
        [(long_target, 61, 0.9, WeightMode::Figure1), (mid_target, 5, 0.5, WeightMode::AsWritten)]
    {
        family += 1 << 24;
        let sampler = EditSampler::new(Sequence::new(target), Vocab::new(v)?, tau, mode)?;
        let res = draw_edits(&sampler, draws, seed, family, false);
        let weights = sampler.weights().expect("positive temperature");
        let freq: Vec<f64> = res.distance_counts.iter().map(|c| *c as f64 / draws as f64).collect();
        marginal.push(total_variation(&freq, weights.probs()));
        excess.push(res.worst_excess as f64);
    }

    for (target, v, tau, mode) in [
        (vec![0, 1], 3, 1.0, WeightMode::AsWritten),
        (vec![1], 2, 0.5, WeightMode::Figure1),
        (vec![2, 0, 1], 3, 0.25, WeightMode::AsWritten),
    ] {
        family += 1 << 24;
        let oracle = edit_sampler_oracle(&target, v, tau, mode)?;
        let sampler = EditSampler::new(Sequence::new(target), Vocab::new(v)?, tau, mode)?;
        let res = draw_edits(&sampler, draws, seed, family, true);
        end_to_end.push(tv_against(&oracle, &res.outputs, draws));
        excess.push(res.worst_excess as f64);
    }

    // Hamming sampler against the enumerated payoff, which it samples exactly.
    family += 1 << 24;
    let vocab = Vocab::new(3)?;
    let target = Sequence::new(vec![0, 2, 1]);
    let space = OutputSpace::new(vocab, 3)?;
    let spec = PayoffSpec::new(target.clone(), 0.7, RewardKind::NegHamming, vocab, WeightMode::AsWritten)?;
    let exact = enumerate_payoff(&spec, space.sequences())?;
    let sampler = HammingSampler::new(target, vocab, 0.7, WeightMode::AsWritten)?;
    let chunks = draws.div_ceil(DRAW_CHUNK);
    let parts: Vec<(Vec<usize>, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, family + c as u64);
            let mut counts = vec![0; space.size()];
            let mut worst = 0.0f64;
            for _ in 0..DRAW_CHUNK.min(draws - c * DRAW_CHUNK) {
                let d = sampler.draw(&mut rng);
                let idx = space.index_of(&d.sequence).expect("fixed-length output");
                counts[idx] += 1;
                worst = worst.max((d.log_weight - exact.probs()[idx].ln()).abs());
            }
            (counts, worst)
        })
        .collect();
    let mut counts = vec![0usize; space.size()];
    let mut log_weight_err = 0.0f64;
    for (part, worst) in parts {
        counts.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
        log_weight_err = log_weight_err.max(worst);
    }
    let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / draws as f64).collect();

    Ok(vec![
        CheckResult::below("sampler/edit_distance_marginal_tv", &marginal, 0.01),
        CheckResult::below("sampler/edit_output_vs_script_oracle_tv", &end_to_end, 0.02),
        CheckResult::below("sampler/edit_distance_within_drawn_e", &excess, 0.5),
        CheckResult::below("sampler/hamming_output_vs_payoff_tv", &[total_variation(&freq, exact.probs())], 0.02),
        CheckResult::below("sampler/hamming_log_weight_exact", &[log_weight_err], 1e-12),
    ])
}

fn loss_for(method: Method, model: &Model, data: &TrainingSet, reward: RewardKind, tau: f64) -> Result<f64> {
    match method {
        Method::Ml => loss_ml(model, data),
        Method::Raml => loss_raml(model, data, reward, tau),
        Method::Rl => loss_rl(model, data, reward, tau),
    }
}

/// Fourth-order central differences of a loss with respect to every
/// parameter.
pub fn finite_difference_gradient(
    method: Method,
    model: &Model,
    data: &TrainingSet,
    reward: RewardKind,
    tau: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    (0..model.params().len())
        .map(|j| {
            let base = model.params()[j];
            let mut at = |offset: f64| {
                probe.params_mut()[j] = base + offset;
                loss_for(method, &probe, data, reward, tau)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
            probe.params_mut()[j] = base;
            Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
        })
        .collect()
}

// Gradients that cancel to zero leave only rounding noise on both sides, so
// the scale is floored at this norm.
const GRADIENT_SCALE_FLOOR: f64 = 1e-4;

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(GRADIENT_SCALE_FLOOR)
}

/// Exact gradients of the three losses against central differences.
pub fn gradient_checks(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let rows = par_trials(trials, seed, GRADIENT_STREAMS, |rng| {
        let Instance { model, data } = random_instance(3, 2, 1.5, rng)?;
        let tau = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.1..=3.0) };
        let reward = random_reward(rng);
        let mut errs = [0.0; 3];
        for (k, method) in [Method::Ml, Method::Raml, Method::Rl].into_iter().enumerate() {
            let exact = exact_gradient(method, &model, &data, reward, tau)?;
            let fd = finite_difference_gradient(method, &model, &data, reward, tau, 1e-3)?;
            errs[k] = relative_error(&exact, &fd);
        }
        Ok(errs)
    })?;
    let [ml, raml, rl] = columns(&rows);
    Ok(vec![
        CheckResult::below("gradients/ml_vs_finite_differences", &ml, 1e-6),
        CheckResult::below("gradients/raml_vs_finite_differences", &raml, 1e-6),
        CheckResult::below("gradients/rl_vs_finite_differences", &rl, 1e-6),
    ])
}

/// The default toy problem: copy task, three symbols, length two, tabular.
pub fn desk_problem() -> Result<(Model, TrainingSet)> {
    let space = Arc::new(OutputSpace::new(Vocab::new(3)?, 2)?);
    let data = Task::Copy.build(&space);
    let model = Model::zeros(ModelKind::Tabular, space, data.len())?;
    Ok((model, data))
}

/// Mean empirical variances `(raml, rl)` of the sampled gradients over the
/// pairs of the default toy problem at a uniform model.
pub fn variance_at_uniform(tau: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let (model, data) = desk_problem()?;
    let rows: Vec<(f64, f64)> = data
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let sampler = HammingSampler::new(y.clone(), model.space().vocab(), tau, WeightMode::AsWritten)?;
            let mut rng = stream(seed, ESTIMATOR_STREAMS + (1 << 24) + 2 * i as u64);
            let raml = grad_raml_stochastic(&model, (*x, y), &sampler, samples, &mut rng)?;
            let mut rng = stream(seed, ESTIMATOR_STREAMS + (1 << 24) + 2 * i as u64 + 1);
            let rl = grad_rl_stochastic(
                &model,
                (*x, y),
                RewardKind::NegHamming,
                tau,
                samples,
                RlEstimator::default(),
                &mut rng,
            )?;
            Ok((raml.empirical_variance, rl.empirical_variance))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok((rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n))
}

/// Sampled estimators against exact gradients, in standard errors.
pub fn estimator_checks(samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let cases = 4;
    let rows = par_trials(cases, seed, ESTIMATOR_STREAMS, |rng| {
        let Instance { model, data } = random_instance(3, 2, 1.0, rng)?;
        let tau = rng.gen_range(0.3..=2.0);
        let (x, y) = data.pairs()[0].clone();
        let one = TrainingSet::new(vec![(x, y.clone())])?;
        let space = model.space();
        let mut z = [0.0; 5];

        let sampler = HammingSampler::new(y.clone(), space.vocab(), tau, WeightMode::AsWritten)?;
        let est = grad_raml_stochastic(&model, (x, &y), &sampler, samples, rng)?;
        z[0] = est.max_z_score(&exact_gradient(Method::Raml, &model, &one, RewardKind::NegHamming, tau)?, 1e-12);

        let spec = PayoffSpec::new(y.clone(), tau, RewardKind::NegEdit, space.vocab(), WeightMode::AsWritten)?;
        let sampler = EnumeratedSampler::new(&spec, space.sequences())?;
        let est = grad_raml_stochastic(&model, (x, &y), &sampler, samples, rng)?;
        z[1] = est.max_z_score(&exact_gradient(Method::Raml, &model, &one, RewardKind::NegEdit, tau)?, 1e-12);

        let rl_cases = [
            (tau, RlEstimator::default()),
            (tau, RlEstimator { baseline: Baseline::MeanReward, literal: false }),
            (0.0, RlEstimator::default()),
        ];
        for (k, (t, opts)) in rl_cases.into_iter().enumerate() {
            let est = grad_rl_stochastic(&model, (x, &y), RewardKind::NegHamming, t, samples, opts, rng)?;
            z[2 + k] = est.max_z_score(&exact_gradient(Method::Rl, &model, &one, RewardKind::NegHamming, t)?, 1e-12);
        }
        Ok(z)
    })?;
    let [raml_h, raml_e, rl, rl_mean, rl_zero] = columns(&rows);
    let (raml_var, rl_var) = variance_at_uniform(1.0, samples.min(20_000), seed)?;
    Ok(vec![
        CheckResult::below("gradients/raml_estimator_hamming_z", &raml_h, 4.0),
        CheckResult::below("gradients/raml_estimator_edit_z", &raml_e, 4.0),
        CheckResult::below("gradients/rl_estimator_z", &rl, 4.0),
        CheckResult::below("gradients/rl_estimator_mean_baseline_z", &rl_mean, 4.0),
        CheckResult::below("gradients/rl_estimator_zero_tau_z", &rl_zero, 4.0),
        CheckResult::below("gradients/variance_ratio_raml_over_rl", &[raml_var / rl_var], 1.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_oracle_sums_to_one_and_matches_counts() {
        for (target, v) in [(vec![0u32, 1], 3usize), (vec![1, 1, 0], 2), (vec![], 4)] {
            for e in 0..=2 * target.len() {
                let dist = script_composition_oracle(&target, e, v);
                let total: f64 = dist.values().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(dist.keys().all(|y| edit_distance(y, &target) <= e));
            }
        }
        let one = script_composition_oracle(&[0], 1, 2);
        // Substitute to 1, delete, or insert 0/1 before or after.
        assert_eq!(one.len(), 5);
        assert!((one[&Sequence::new(vec![1])] - 1.0 / 6.0).abs() < 1e-15);
        assert!((one[&Sequence::new(vec![0, 0])] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn worked_case_closed_form() {
        assert!((worked_case_beta() - 0.133576).abs() < 1e-6);
    }

    #[test]
    fn small_suites_pass() {
        let mut checks = identity_checks(50, 3).unwrap();
        checks.extend(duality_checks(50, 3).unwrap());
        checks.extend(prop1_checks(50, 3).unwrap());
        checks.extend(prop2_checks(200, 3).unwrap());
        checks.extend(gradient_checks(10, 3).unwrap());
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn report_lists_every_check() {
        let report = Report {
            header: vec!["x".into()],
            checks: vec![CheckResult::below("a", &[1.0], 2.0), CheckResult::below("b", &[3.0], 2.0)],
        };
        let text = report.render();
        assert!(text.contains("a ") && text.contains("PASS") && text.contains("FAIL"));
        assert!(text.ends_with("overall FAIL (1/2 checks passed)\n"));
        assert!(!CheckResult::below("nan", &[f64::NAN], 1.0).passed);
        assert!(!CheckResult::below("empty", &[], 1.0).passed);
    }
}
