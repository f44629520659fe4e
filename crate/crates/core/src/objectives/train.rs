//! Plain SGD training with per-step telemetry.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::estimators::{grad_raml_stochastic, grad_rl_stochastic, RlEstimator};
use super::losses::{LossReport, LossTables, Method, TrainingSet};
use super::model::Model;
use crate::error::{Error, Result};
use crate::payoff::{EnumeratedSampler, HammingSampler, PayoffSpec, WeightMode};
use crate::rewards::RewardKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GradMode {
    Exact,
    /// Sampled estimators with this many draws per pair.
    Stochastic(usize),
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(GradMode::Exact);
        }
        let n = s
            .strip_prefix("stoch:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::InvalidArgument(format!("grad mode must be 'exact' or 'stoch:N', got '{s}'")))?;
        Ok(GradMode::Stochastic(n))
    }
}

impl TryFrom<String> for GradMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GradMode> for String {
    fn from(mode: GradMode) -> String {
        mode.to_string()
    }
}

impl std::fmt::Display for GradMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradMode::Exact => write!(f, "exact"),
            GradMode::Stochastic(n) => write!(f, "stoch:{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub tau: f64,
    pub steps: usize,
    pub lr: f64,
    /// Pairs per step; the whole set when `batch >= data.len()`.
    pub batch: usize,
    pub grad_mode: GradMode,
    pub reward: RewardKind,
    pub rl_estimator: RlEstimator,
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn new(method: Method, tau: f64, steps: usize, lr: f64) -> Self {
        Self {
            method,
            tau,
            steps,
            lr,
            batch: usize::MAX,
            grad_mode: GradMode::Exact,
            reward: RewardKind::NegHamming,
            rl_estimator: RlEstimator::default(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if self.grad_mode == GradMode::Stochastic(0) {
            return Err(Error::InvalidArgument("stochastic mode needs at least one sample".into()));
        }
        Ok(())
    }
}

/// Telemetry for one step. Step 0 is the initial model; step `k` is the
/// model after `k` updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub loss_ml: f64,
    pub loss_raml: f64,
    pub loss_rl: f64,
    pub expected_reward: f64,
    pub kl_q_p: f64,
    /// `None` when infinite, which happens at `τ = 0`.
    pub kl_p_q: Option<f64>,
    /// Mean empirical variance of the sampled gradient that produced this
    /// step; zero for exact gradients and for step 0.
    pub grad_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<u64>,
}

impl RunRecord {
    fn from_report(step: usize, r: &LossReport, grad_variance: f64, wall_time_ms: Option<u64>) -> Self {
        Self {
            step,
            loss_ml: r.loss_ml,
            loss_raml: r.loss_raml,
            loss_rl: r.loss_rl,
            expected_reward: r.expected_reward,
            kl_q_p: r.kl_q_p,
            kl_p_q: r.kl_p_q.is_finite().then_some(r.kl_p_q),
            grad_variance,
            wall_time_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<RunRecord>,
    /// Diagnostic when the run was aborted on a non-finite value.
    pub diverged: Option<String>,
}

enum Sampler {
    Hamming(HammingSampler),
    Enumerated(EnumeratedSampler),
}

fn build_samplers(model: &Model, data: &TrainingSet, config: &TrainConfig) -> Result<Vec<Sampler>> {
    let space = model.space();
    data.pairs()
        .iter()
        .map(|(_, y)| match config.reward {
            RewardKind::NegHamming => {
                HammingSampler::new(y.clone(), space.vocab(), config.tau, WeightMode::AsWritten).map(Sampler::Hamming)
            }
            RewardKind::NegEdit => {
                let spec = PayoffSpec::new(y.clone(), config.tau, config.reward, space.vocab(), WeightMode::AsWritten)?;
                EnumeratedSampler::new(&spec, space.sequences()).map(Sampler::Enumerated)
            }
        })
        .collect()
}

fn evaluate(tables: &LossTables, model: &Model, data: &TrainingSet) -> std::result::Result<LossReport, String> {
    let report = match tables.report(model, data) {
        Ok(r) => r,
        Err(e) => return Err(e.to_string()),
    };
    let values = [report.loss_ml, report.loss_raml, report.loss_rl, report.expected_reward, report.kl_q_p];
    if values.iter().all(|v| v.is_finite()) {
        Ok(report)
    } else {
        Err("non-finite loss".into())
    }
}

/// Runs `config.steps` SGD updates on the mean gradient over each batch.
pub fn train<R: Rng + ?Sized>(
    model: &mut Model,
    data: &TrainingSet,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some((x, _)) = data.pairs().iter().find(|(x, _)| *x >= model.num_contexts()) {
        return Err(Error::InvalidArgument(format!("context {x} outside the model")));
    }
    let tables = LossTables::new(model.space(), data, config.reward, config.tau)?;
    let samplers = match (config.grad_mode, config.method) {
        (GradMode::Stochastic(_), Method::Raml) => build_samplers(model, data, config)?,
        _ => Vec::new(),
    };
    let start = Instant::now();
    let elapsed = || config.record_wall_time.then(|| start.elapsed().as_millis() as u64);

    let mut records = Vec::with_capacity(config.steps + 1);
    match evaluate(&tables, model, data) {
        Ok(r) => records.push(RunRecord::from_report(0, &r, 0.0, elapsed())),
        Err(msg) => return Ok(TrainOutcome { records, diverged: Some(format!("step 0: {msg}")) }),
    }

    let n = data.len();
    let batch = config.batch.min(n);
    for step in 1..=config.steps {
        let indices: Vec<usize> = if batch < n {
            let mut idx = index::sample(rng, n, batch).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..n).collect()
        };

        let (mut grad, variance) = match config.grad_mode {
            GradMode::Exact => (tables.gradient(config.method, model, data, &indices)?, 0.0),
            GradMode::Stochastic(n_samples) => {
                let mut grad = vec![0.0; model.params().len()];
                let mut variance = 0.0;
                for &i in &indices {
                    let (x, y) = &data.pairs()[i];
                    let est = match config.method {
                        Method::Ml => None,
                        Method::Raml => Some(match &samplers[i] {
                            Sampler::Hamming(s) => grad_raml_stochastic(model, (*x, y), s, n_samples, rng)?,
                            Sampler::Enumerated(s) => grad_raml_stochastic(model, (*x, y), s, n_samples, rng)?,
                        }),
                        Method::Rl => Some(grad_rl_stochastic(
                            model,
                            (*x, y),
                            config.reward,
                            config.tau,
                            n_samples,
                            config.rl_estimator,
                            rng,
                        )?),
                    };
                    match est {
                        Some(est) => {
                            grad.iter_mut().zip(&est.vector).for_each(|(g, e)| *g += e);
                            variance += est.empirical_variance;
                        }
                        None => {
                            let exact = tables.gradient(Method::Ml, model, data, &[i])?;
                            grad.iter_mut().zip(&exact).for_each(|(g, e)| *g += e);
                        }
                    }
                }
                (grad, variance / indices.len() as f64)
            }
        };

        let scale = config.lr / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= g;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Ok(TrainOutcome { records, diverged: Some(format!("step {step}: non-finite parameter")) });
        }
        match evaluate(&tables, model, data) {
            Ok(r) => records.push(RunRecord::from_report(step, &r, variance, elapsed())),
            Err(msg) => return Ok(TrainOutcome { records, diverged: Some(format!("step {step}: {msg}")) }),
        }
    }
    Ok(TrainOutcome { records, diverged: None })
}
