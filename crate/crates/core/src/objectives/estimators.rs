//! Sampled gradient estimators: the RAML estimator that draws from the
//! payoff distribution, and the score-function estimator that draws from the
//! model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{pair_gradient, LossTables, Method, TrainingSet};
use super::model::Model;
use crate::error::{Error, Result};
use crate::payoff::PayoffSampler;
use crate::rewards::{reward, RewardKind, Sequence};

/// A sampled gradient with per-coordinate spread.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    /// Mean sampled gradient, shaped like the model parameters.
    pub vector: Vec<f64>,
    pub n_samples: usize,
    /// Mean over the pair's parameter block of the per-coordinate sample
    /// variance.
    pub empirical_variance: f64,
    /// Standard error of each coordinate of `vector`.
    pub standard_errors: Vec<f64>,
}

impl GradEstimate {
    fn exact(vector: Vec<f64>, n_samples: usize) -> Self {
        let standard_errors = vec![0.0; vector.len()];
        Self { vector, n_samples, empirical_variance: 0.0, standard_errors }
    }

    /// Largest `|estimate - exact|` measured in standard errors. Coordinates
    /// with zero spread must match to `abs_tol`; they report infinity when
    /// they do not.
    pub fn max_z_score(&self, exact: &[f64], abs_tol: f64) -> f64 {
        self.vector
            .iter()
            .zip(exact)
            .zip(&self.standard_errors)
            .map(|((est, ex), se)| {
                let diff = (est - ex).abs();
                if diff <= abs_tol {
                    0.0
                } else if *se > 0.0 {
                    diff / se
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

// Per-coordinate running mean and variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn finish(self, model: &Model, x: usize) -> GradEstimate {
        let n = self.n;
        let var: Vec<f64> =
            if n > 1 { self.m2.iter().map(|s| s / (n - 1) as f64).collect() } else { vec![0.0; self.m2.len()] };
        let empirical_variance = var.iter().sum::<f64>() / var.len() as f64;
        let offset = model.block_offset(x);
        let mut vector = vec![0.0; model.params().len()];
        let mut standard_errors = vec![0.0; model.params().len()];
        vector[offset..offset + self.mean.len()].copy_from_slice(&self.mean);
        for (se, v) in standard_errors[offset..offset + var.len()].iter_mut().zip(&var) {
            *se = (v / n as f64).sqrt();
        }
        GradEstimate { vector, n_samples: n, empirical_variance, standard_errors }
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("n_samples must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn exact_ml(model: &Model, pair: (usize, &Sequence)) -> Result<Vec<f64>> {
    let data = TrainingSet::new(vec![(pair.0, pair.1.clone())])?;
    let tables = LossTables::new(model.space(), &data, RewardKind::NegEdit, 0.0)?;
    let ctx = model.context(pair.0)?;
    let mut grad = vec![0.0; model.params().len()];
    let offset = model.block_offset(pair.0);
    let block = model.block_len();
    pair_gradient(Method::Ml, model, &ctx, &tables.tables[0], 0.0, &mut grad[offset..offset + block])?;
    Ok(grad)
}

/// Mean of `-∇ log p(y | x)` over `y` drawn from the payoff sampler. A delta
/// sampler returns the exact ML gradient with zero variance.
pub fn grad_raml_stochastic<S, R>(
    model: &Model,
    pair: (usize, &Sequence),
    sampler: &S,
    n_samples: usize,
    rng: &mut R,
) -> Result<GradEstimate>
where
    S: PayoffSampler,
    R: Rng + ?Sized,
{
    check_samples(n_samples)?;
    if sampler.target() != pair.1 {
        return Err(Error::InvalidArgument("sampler target differs from the pair target".into()));
    }
    if sampler.is_delta() {
        return Ok(GradEstimate::exact(exact_ml(model, pair)?, n_samples));
    }
    let ctx = model.context(pair.0)?;
    let mut stats = Welford::new(model.block_len());
    let mut buf = vec![0.0; model.block_len()];
    for _ in 0..n_samples {
        let draw = sampler.draw(rng);
        let idx = model.space().index_of(&draw.sequence).ok_or(Error::OutsideSupport)?;
        buf.iter_mut().for_each(|b| *b = 0.0);
        model.add_score(&ctx, idx, -1.0, &mut buf);
        stats.push(&buf);
    }
    Ok(stats.finish(model, pair.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Baseline {
    #[default]
    None,
    Constant(f64),
    /// Leave-one-out batch mean of the sample returns.
    MeanReward,
}

/// Options of the score-function estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RlEstimator {
    pub baseline: Baseline,
    /// Drop the `-τ log p` term and weight scores by the reward alone. Only
    /// unbiased at `τ = 0`.
    pub literal: bool,
}

/// Mean of `-∇ log p(y|x) · (r(y, y*) - τ log p(y|x) - b)` over `y ~ p(·|x)`.
pub fn grad_rl_stochastic<R: Rng + ?Sized>(
    model: &Model,
    pair: (usize, &Sequence),
    reward_kind: RewardKind,
    tau: f64,
    n_samples: usize,
    options: RlEstimator,
    rng: &mut R,
) -> Result<GradEstimate> {
    check_samples(n_samples)?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidTemperature(tau));
    }
    let ctx = model.context(pair.0)?;
    let space = model.space();
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let idx = model.sample_index(&ctx, rng);
        let r = reward(reward_kind, &space.sequences()[idx], pair.1)?;
        let ret = if options.literal { r } else { r - tau * ctx.log_probs[idx] };
        draws.push((idx, ret));
    }
    let total: f64 = draws.iter().map(|(_, ret)| ret).sum();
    let mut stats = Welford::new(model.block_len());
    let mut buf = vec![0.0; model.block_len()];
    for &(idx, ret) in &draws {
        let b = match options.baseline {
            Baseline::None => 0.0,
            Baseline::Constant(b) => b,
            Baseline::MeanReward if n_samples > 1 => (total - ret) / (n_samples - 1) as f64,
            Baseline::MeanReward => 0.0,
        };
        buf.iter_mut().for_each(|v| *v = 0.0);
        model.add_score(&ctx, idx, -(ret - b), &mut buf);
        stats.push(&buf);
    }
    Ok(stats.finish(model, pair.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::losses::{exact_gradient, Task};
    use crate::objectives::model::{ModelKind, OutputSpace};
    use crate::payoff::{EnumeratedSampler, HammingSampler, PayoffSpec, WeightMode};
    use crate::rewards::Vocab;
    use crate::rng::stream;
    use std::sync::Arc;

    fn setup(kind: ModelKind, seed: u64) -> (Model, TrainingSet) {
        let space = Arc::new(OutputSpace::new(Vocab::new(3).unwrap(), 2).unwrap());
        let data = Task::Copy.build(&space);
        let model = Model::random(kind, space, data.len(), 1.0, &mut stream(seed, 0)).unwrap();
        (model, data)
    }

    fn single(data: &TrainingSet, i: usize) -> TrainingSet {
        TrainingSet::new(vec![data.pairs()[i].clone()]).unwrap()
    }

    #[test]
    fn delta_sampler_gives_exact_ml() {
        let (model, data) = setup(ModelKind::Tabular, 1);
        let (x, y) = &data.pairs()[4];
        let sampler = HammingSampler::new(y.clone(), model.space().vocab(), 0.0, WeightMode::AsWritten).unwrap();
        let est = grad_raml_stochastic(&model, (*x, y), &sampler, 10, &mut stream(0, 0)).unwrap();
        let exact = exact_gradient(Method::Ml, &model, &single(&data, 4), RewardKind::NegHamming, 0.0).unwrap();
        assert_eq!(est.vector, exact);
        assert_eq!(est.empirical_variance, 0.0);
    }

    #[test]
    fn single_sample_is_the_negative_score() {
        let (model, data) = setup(ModelKind::PositionFactorized, 2);
        let (x, y) = &data.pairs()[2];
        let spec =
            PayoffSpec::new(y.clone(), 1.0, RewardKind::NegHamming, model.space().vocab(), WeightMode::AsWritten)
                .unwrap();
        let sampler = EnumeratedSampler::new(&spec, model.space().sequences()).unwrap();
        let drawn = sampler.draw(&mut stream(9, 9)).sequence;
        let est = grad_raml_stochastic(&model, (*x, y), &sampler, 1, &mut stream(9, 9)).unwrap();
        let ctx = model.context(*x).unwrap();
        let mut expect = vec![0.0; model.block_len()];
        model.add_score(&ctx, model.space().index_of(&drawn).unwrap(), -1.0, &mut expect);
        let off = model.block_offset(*x);
        assert_eq!(&est.vector[off..off + model.block_len()], &expect[..]);
    }

    #[test]
    fn outside_support_is_an_error() {
        let (model, data) = setup(ModelKind::Tabular, 3);
        let (x, y) = &data.pairs()[0];
        let sampler =
            crate::payoff::EditSampler::new(y.clone(), model.space().vocab(), 5.0, WeightMode::AsWritten).unwrap();
        let res = grad_raml_stochastic(&model, (*x, y), &sampler, 2000, &mut stream(0, 1));
        assert!(matches!(res, Err(Error::OutsideSupport)));
    }

    #[test]
    fn estimators_are_unbiased() {
        for kind in [ModelKind::Tabular, ModelKind::PositionFactorized] {
            let (model, data) = setup(kind, 4);
            let (x, y) = &data.pairs()[5];
            let one = single(&data, 5);
            let tau = 0.7;
            let sampler = HammingSampler::new(y.clone(), model.space().vocab(), tau, WeightMode::AsWritten).unwrap();
            let est = grad_raml_stochastic(&model, (*x, y), &sampler, 100_000, &mut stream(5, 0)).unwrap();
            let exact = exact_gradient(Method::Raml, &model, &one, RewardKind::NegHamming, tau).unwrap();
            assert!(est.max_z_score(&exact, 1e-12) < 4.0);

            for (t, opts) in [
                (0.0, RlEstimator::default()),
                (tau, RlEstimator::default()),
                (tau, RlEstimator { baseline: Baseline::MeanReward, literal: false }),
                (tau, RlEstimator { baseline: Baseline::Constant(-1.0), literal: false }),
            ] {
                let est =
                    grad_rl_stochastic(&model, (*x, y), RewardKind::NegHamming, t, 100_000, opts, &mut stream(6, 0))
                        .unwrap();
                let exact = exact_gradient(Method::Rl, &model, &one, RewardKind::NegHamming, t).unwrap();
                assert!(est.max_z_score(&exact, 1e-12) < 4.0, "{kind:?} {t} {opts:?}");
            }
        }
    }

    #[test]
    fn literal_estimator_is_biased_away_from_zero_temperature() {
        let (model, data) = setup(ModelKind::Tabular, 7);
        let (x, y) = &data.pairs()[1];
        let opts = RlEstimator { literal: true, ..Default::default() };
        let est =
            grad_rl_stochastic(&model, (*x, y), RewardKind::NegHamming, 2.0, 100_000, opts, &mut stream(8, 0)).unwrap();
        let exact = exact_gradient(Method::Rl, &model, &single(&data, 1), RewardKind::NegHamming, 2.0).unwrap();
        assert!(est.max_z_score(&exact, 1e-12) > 4.0);
    }

    #[test]
    fn degenerate_policy_has_vanishing_variance() {
        let (mut model, data) = setup(ModelKind::Tabular, 0);
        let (x, y) = &data.pairs()[3];
        let mut last = f64::INFINITY;
        for peak in [6.0, 12.0, 24.0, 48.0] {
            let mut params = vec![0.0; model.params().len()];
            params[model.block_offset(*x) + 3] = peak;
            model.set_params(params).unwrap();
            let est = grad_rl_stochastic(
                &model,
                (*x, y),
                RewardKind::NegHamming,
                0.0,
                20_000,
                RlEstimator::default(),
                &mut stream(1, 1),
            )
            .unwrap();
            assert!(est.empirical_variance <= last);
            last = est.empirical_variance;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn rl_variance_exceeds_raml_at_uniform_init() {
        let space = Arc::new(OutputSpace::new(Vocab::new(3).unwrap(), 2).unwrap());
        let data = Task::Copy.build(&space);
        let model = Model::zeros(ModelKind::Tabular, space.clone(), data.len()).unwrap();
        let (x, y) = &data.pairs()[0];
        let sampler = HammingSampler::new(y.clone(), space.vocab(), 1.0, WeightMode::AsWritten).unwrap();
        let raml = grad_raml_stochastic(&model, (*x, y), &sampler, 10_000, &mut stream(2, 0)).unwrap();
        let rl = grad_rl_stochastic(
            &model,
            (*x, y),
            RewardKind::NegHamming,
            1.0,
            10_000,
            RlEstimator::default(),
            &mut stream(2, 1),
        )
        .unwrap();
        assert!(
            rl.empirical_variance > raml.empirical_variance,
            "{} vs {}",
            rl.empirical_variance,
            raml.empirical_variance
        );
    }
}
