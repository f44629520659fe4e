//! ML, RAML and entropy-regularized RL losses by full enumeration, with
//! their exact gradients.

use serde::{Deserialize, Serialize};

use super::model::{ContextDist, Model, OutputSpace};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, dot, entropy, kl_divergence};
use crate::payoff::{enumerate_payoff, log_partition, PayoffSpec, WeightMode};
use crate::rewards::{reward, RewardKind, Sequence};

/// `(context id, target)` pairs. Duplicates are allowed and count twice.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pairs: Vec<(usize, Sequence)>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<(usize, Sequence)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, Sequence)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Toy sequence-to-sequence tasks. Contexts are the sequences of the output
/// space itself, one pair per context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Copy,
    Reverse,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
        }
    }

    pub fn build(&self, space: &OutputSpace) -> TrainingSet {
        let pairs = space
            .sequences()
            .iter()
            .enumerate()
            .map(|(x, s)| match self {
                Task::Copy => (x, s.clone()),
                Task::Reverse => (x, s.reversed()),
            })
            .collect();
        TrainingSet { pairs }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ml,
    Raml,
    Rl,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Raml => "raml",
            Method::Rl => "rl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(Method::Ml),
            "raml" => Ok(Method::Raml),
            "rl" => Ok(Method::Rl),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-target quantities that do not depend on the model.
#[derive(Clone, Debug)]
pub struct TargetTable {
    pub target_index: usize,
    /// `r(y, y*)` over the space.
    pub rewards: Vec<f64>,
    /// `q(y | y*; τ)` over the space (one-hot at `τ = 0`).
    pub payoff: Vec<f64>,
    /// `log Z(y*, τ)`; absent at `τ = 0`.
    pub log_partition: Option<f64>,
    pub payoff_entropy: f64,
}

/// Targets of a training set under one reward and temperature.
#[derive(Clone, Debug)]
pub struct LossTables {
    pub reward: RewardKind,
    pub tau: f64,
    pub tables: Vec<TargetTable>,
}

impl LossTables {
    pub fn new(space: &OutputSpace, data: &TrainingSet, reward_kind: RewardKind, tau: f64) -> Result<Self> {
        let tables = data
            .pairs()
            .iter()
            .map(|(_, target)| {
                let target_index = space.index_of(target).ok_or(Error::OutsideSupport)?;
                let spec = PayoffSpec::new(target.clone(), tau, reward_kind, space.vocab(), WeightMode::AsWritten)?;
                let rewards =
                    space.sequences().iter().map(|y| reward(reward_kind, y, target)).collect::<Result<Vec<f64>>>()?;
                let payoff = enumerate_payoff(&spec, space.sequences())?.probs().to_vec();
                let log_partition = if tau > 0.0 { Some(log_partition(&spec, space.sequences())?) } else { None };
                let payoff_entropy = entropy(&payoff);
                Ok(TargetTable { target_index, rewards, payoff, log_partition, payoff_entropy })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { reward: reward_kind, tau, tables })
    }
}

/// All loss terms of one model over a training set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub loss_ml: f64,
    pub loss_raml: f64,
    pub loss_rl: f64,
    /// Mean over pairs of `E_p[r]`.
    pub expected_reward: f64,
    /// `Σ KL(q ‖ p)`.
    pub kl_q_p: f64,
    /// `Σ KL(p ‖ q)`; infinite at `τ = 0` unless `p` is a delta.
    pub kl_p_q: f64,
    /// `Σ KL(δ ‖ p)`.
    pub kl_delta_p: f64,
    pub sum_payoff_entropy: f64,
    /// `Σ log Z`; zero at `τ = 0`.
    pub sum_log_partition: f64,
}

fn check_support(log_prob: f64) -> Result<f64> {
    if log_prob == f64::NEG_INFINITY {
        Err(Error::ZeroProbability)
    } else {
        Ok(log_prob)
    }
}

fn pair_ml(ctx: &ContextDist, table: &TargetTable) -> Result<f64> {
    Ok(-check_support(ctx.log_probs[table.target_index])?)
}

fn pair_raml(ctx: &ContextDist, table: &TargetTable) -> Result<f64> {
    let mut terms = Vec::with_capacity(table.payoff.len());
    for (q, lp) in table.payoff.iter().zip(&ctx.log_probs) {
        if *q > 0.0 {
            terms.push(-q * check_support(*lp)?);
        }
    }
    Ok(compensated_sum(terms))
}

fn pair_rl(ctx: &ContextDist, table: &TargetTable, tau: f64) -> f64 {
    -tau * entropy(&ctx.probs) - dot(&ctx.probs, &table.rewards)
}

impl LossTables {
    pub fn report(&self, model: &Model, data: &TrainingSet) -> Result<LossReport> {
        let mut ml = Vec::new();
        let mut raml = Vec::new();
        let mut rl = Vec::new();
        let mut er = Vec::new();
        let mut kl_qp = Vec::new();
        let mut kl_pq = Vec::new();
        let mut kl_dp = Vec::new();
        for ((x, _), table) in data.pairs().iter().zip(&self.tables) {
            let ctx = model.context(*x)?;
            ml.push(pair_ml(&ctx, table)?);
            raml.push(pair_raml(&ctx, table)?);
            rl.push(pair_rl(&ctx, table, self.tau));
            er.push(dot(&ctx.probs, &table.rewards));
            kl_qp.push(kl_divergence(&table.payoff, &ctx.probs));
            kl_pq.push(kl_divergence(&ctx.probs, &table.payoff));
            let mut delta = vec![0.0; ctx.probs.len()];
            delta[table.target_index] = 1.0;
            kl_dp.push(kl_divergence(&delta, &ctx.probs));
        }
        Ok(LossReport {
            loss_ml: compensated_sum(ml),
            loss_raml: compensated_sum(raml),
            loss_rl: compensated_sum(rl),
            expected_reward: compensated_sum(er) / data.len() as f64,
            kl_q_p: compensated_sum(kl_qp),
            kl_p_q: compensated_sum(kl_pq),
            kl_delta_p: compensated_sum(kl_dp),
            sum_payoff_entropy: compensated_sum(self.tables.iter().map(|t| t.payoff_entropy)),
            sum_log_partition: compensated_sum(self.tables.iter().map(|t| t.log_partition.unwrap_or(0.0))),
        })
    }

    /// Gradient of the summed loss for the pairs selected by `indices`.
    pub fn gradient(&self, method: Method, model: &Model, data: &TrainingSet, indices: &[usize]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; model.params().len()];
        let block = model.block_len();
        for &i in indices {
            let (x, _) = &data.pairs()[i];
            let table = &self.tables[i];
            let ctx = model.context(*x)?;
            let offset = model.block_offset(*x);
            let out = &mut grad[offset..offset + block];
            pair_gradient(method, model, &ctx, table, self.tau, out)?;
        }
        Ok(grad)
    }
}

/// Adds one pair's loss gradient into a one-block buffer.
pub(crate) fn pair_gradient(
    method: Method,
    model: &Model,
    ctx: &ContextDist,
    table: &TargetTable,
    tau: f64,
    out: &mut [f64],
) -> Result<()> {
    let method = if method == Method::Raml && tau == 0.0 { Method::Ml } else { method };
    match method {
        Method::Ml => {
            pair_ml(ctx, table)?;
            model.add_score(ctx, table.target_index, -1.0, out);
        }
        Method::Raml => {
            pair_raml(ctx, table)?;
            let weights: Vec<f64> = table.payoff.iter().map(|q| -q).collect();
            model.add_weighted_scores(ctx, &weights, out);
        }
        Method::Rl => {
            // ∇ Σ p (τ log p - r) = E_p[∇log p · (τ log p - r)].
            let weights: Vec<f64> = ctx
                .probs
                .iter()
                .zip(&ctx.log_probs)
                .zip(&table.rewards)
                .map(|((p, lp), r)| if *p > 0.0 { p * (tau * lp - r) } else { 0.0 })
                .collect();
            model.add_weighted_scores(ctx, &weights, out);
        }
    }
    Ok(())
}

/// `Σ -log p(y* | x)`.
pub fn loss_ml(model: &Model, data: &TrainingSet) -> Result<f64> {
    data.pairs()
        .iter()
        .map(|(x, target)| {
            let idx = model.space().index_of(target).ok_or(Error::OutsideSupport)?;
            Ok(-check_support(model.context(*x)?.log_probs[idx])?)
        })
        .collect::<Result<Vec<_>>>()
        .map(compensated_sum)
}

/// `Σ [ -τ H(p) - E_p[r] ]`.
pub fn loss_rl(model: &Model, data: &TrainingSet, reward_kind: RewardKind, tau: f64) -> Result<f64> {
    let tables = LossTables::new(model.space(), data, reward_kind, tau)?;
    Ok(tables.report(model, data)?.loss_rl)
}

/// `Σ -Σ_y q(y | y*; τ) log p(y | x)`.
pub fn loss_raml(model: &Model, data: &TrainingSet, reward_kind: RewardKind, tau: f64) -> Result<f64> {
    let tables = LossTables::new(model.space(), data, reward_kind, tau)?;
    data.pairs()
        .iter()
        .zip(&tables.tables)
        .map(|((x, _), t)| pair_raml(&model.context(*x)?, t))
        .collect::<Result<Vec<_>>>()
        .map(compensated_sum)
}

/// Gradient of the summed loss over the whole training set.
pub fn exact_gradient(
    method: Method,
    model: &Model,
    data: &TrainingSet,
    reward_kind: RewardKind,
    tau: f64,
) -> Result<Vec<f64>> {
    let tables = LossTables::new(model.space(), data, reward_kind, tau)?;
    let all: Vec<usize> = (0..data.len()).collect();
    tables.gradient(method, model, data, &all)
}

/// Arg-max output for context `x`; the lexicographically smallest wins ties.
pub fn predict(model: &Model, x: usize) -> Result<Sequence> {
    let ctx = model.context(x)?;
    let mut best = 0;
    for (i, lp) in ctx.log_probs.iter().enumerate() {
        if *lp > ctx.log_probs[best] {
            best = i;
        }
    }
    Ok(model.space().sequences()[best].clone())
}
