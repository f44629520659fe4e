//! Toy conditional models `p_θ(y | x)` over a fixed-length output space.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::normalize_log_weights;
use crate::payoff::{enumerate_sequences, LengthMode};
use crate::rewards::{Sequence, Token, Vocab};

/// Every sequence of one length, in lexicographic order. The index of a
/// sequence is its base-`v` value.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpace {
    vocab: Vocab,
    seq_len: usize,
    sequences: Vec<Sequence>,
}

impl OutputSpace {
    pub fn new(vocab: Vocab, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be at least 1".into()));
        }
        let sequences = enumerate_sequences(vocab, seq_len, LengthMode::Fixed)?;
        Ok(Self { vocab, seq_len, sequences })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn size(&self) -> usize {
        self.sequences.len()
    }

    pub fn index_of(&self, y: &[Token]) -> Option<usize> {
        if y.len() != self.seq_len {
            return None;
        }
        let v = self.vocab.size();
        y.iter().try_fold(0usize, |acc, &t| self.vocab.contains(t).then(|| acc * v + t as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One free logit per `(x, y)`.
    Tabular,
    /// One logit per `(x, position, token)`; positions are independent softmaxes.
    PositionFactorized,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Tabular => "tabular",
            ModelKind::PositionFactorized => "position_factorized",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(ModelKind::Tabular),
            "position_factorized" | "factorized" => Ok(ModelKind::PositionFactorized),
            other => Err(Error::InvalidArgument(format!("unknown model kind '{other}'"))),
        }
    }
}

/// The distribution of one context, cached for repeated use.
#[derive(Clone, Debug)]
pub struct ContextDist {
    /// `log p(y | x)` for every `y` in the space.
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    /// Per-position token probabilities (factorized models only).
    positions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    space: Arc<OutputSpace>,
    num_contexts: usize,
    params: Vec<f64>,
}

impl Model {
    pub fn zeros(kind: ModelKind, space: Arc<OutputSpace>, num_contexts: usize) -> Result<Self> {
        if num_contexts == 0 {
            return Err(Error::InvalidArgument("model needs at least one context".into()));
        }
        let block = block_len(kind, &space);
        Ok(Self { kind, space, num_contexts, params: vec![0.0; block * num_contexts] })
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        kind: ModelKind,
        space: Arc<OutputSpace>,
        num_contexts: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, space, num_contexts)?;
        model.params.iter_mut().for_each(|p| *p = rng.gen_range(-scale..=scale));
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn space(&self) -> &OutputSpace {
        &self.space
    }

    pub fn shared_space(&self) -> Arc<OutputSpace> {
        Arc::clone(&self.space)
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch { left: params.len(), right: self.params.len() });
        }
        self.params = params;
        Ok(())
    }

    /// Number of parameters owned by one context.
    pub fn block_len(&self) -> usize {
        block_len(self.kind, &self.space)
    }

    pub fn block_offset(&self, x: usize) -> usize {
        x * self.block_len()
    }

    fn block(&self, x: usize) -> &[f64] {
        let len = self.block_len();
        &self.params[x * len..(x + 1) * len]
    }

    fn check_context(&self, x: usize) -> Result<()> {
        if x < self.num_contexts {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("context {x} out of range ({} contexts)", self.num_contexts)))
        }
    }

    pub fn context(&self, x: usize) -> Result<ContextDist> {
        self.check_context(x)?;
        let logits = self.block(x);
        Ok(match self.kind {
            ModelKind::Tabular => {
                let probs = normalize_log_weights(logits);
                let z = crate::numeric::log_sum_exp(logits);
                let log_probs = logits.iter().map(|l| l - z).collect();
                ContextDist { log_probs, probs, positions: Vec::new() }
            }
            ModelKind::PositionFactorized => {
                let v = self.space.vocab().size();
                let mut log_positions = Vec::with_capacity(self.space.seq_len());
                let mut positions = Vec::with_capacity(self.space.seq_len());
                for chunk in logits.chunks(v) {
                    let z = crate::numeric::log_sum_exp(chunk);
                    log_positions.push(chunk.iter().map(|l| l - z).collect::<Vec<f64>>());
                    positions.push(normalize_log_weights(chunk));
                }
                let log_probs: Vec<f64> = self
                    .space
                    .sequences()
                    .iter()
                    .map(|y| y.iter().enumerate().map(|(t, &k)| log_positions[t][k as usize]).sum())
                    .collect();
                let probs = log_probs.iter().map(|l| l.exp()).collect();
                ContextDist { log_probs, probs, positions }
            }
        })
    }

    pub fn log_prob(&self, x: usize, y: &[Token]) -> Result<f64> {
        let idx = self.space.index_of(y).ok_or(Error::OutsideSupport)?;
        Ok(self.context(x)?.log_probs[idx])
    }

    /// Adds `scale · ∇ log p(y | x)` to `grad`, a buffer of one block.
    pub fn add_score(&self, ctx: &ContextDist, y_index: usize, scale: f64, grad: &mut [f64]) {
        match self.kind {
            ModelKind::Tabular => {
                for (g, p) in grad.iter_mut().zip(&ctx.probs) {
                    *g -= scale * p;
                }
                grad[y_index] += scale;
            }
            ModelKind::PositionFactorized => {
                let v = self.space.vocab().size();
                let y = &self.space.sequences()[y_index];
                for (t, probs) in ctx.positions.iter().enumerate() {
                    let row = &mut grad[t * v..(t + 1) * v];
                    for (g, p) in row.iter_mut().zip(probs) {
                        *g -= scale * p;
                    }
                    row[y[t] as usize] += scale;
                }
            }
        }
    }

    /// Adds `Σ_y w_y ∇ log p(y | x)` to a one-block buffer.
    pub fn add_weighted_scores(&self, ctx: &ContextDist, weights: &[f64], grad: &mut [f64]) {
        let total: f64 = crate::numeric::compensated_sum(weights.iter().copied());
        match self.kind {
            ModelKind::Tabular => {
                for ((g, w), p) in grad.iter_mut().zip(weights).zip(&ctx.probs) {
                    *g += w - total * p;
                }
            }
            ModelKind::PositionFactorized => {
                let v = self.space.vocab().size();
                for (y, &w) in self.space.sequences().iter().zip(weights) {
                    for (t, &k) in y.iter().enumerate() {
                        grad[t * v + k as usize] += w;
                    }
                }
                for (t, probs) in ctx.positions.iter().enumerate() {
                    for (k, p) in probs.iter().enumerate() {
                        grad[t * v + k] -= total * p;
                    }
                }
            }
        }
    }

    /// Exact ancestral draw from `p(· | x)`; returns the space index.
    pub fn sample_index<R: Rng + ?Sized>(&self, ctx: &ContextDist, rng: &mut R) -> usize {
        fn inverse_cdf<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
        }
        match self.kind {
            ModelKind::Tabular => inverse_cdf(&ctx.probs, rng),
            ModelKind::PositionFactorized => {
                let v = self.space.vocab().size();
                ctx.positions.iter().fold(0, |acc, probs| acc * v + inverse_cdf(probs, rng))
            }
        }
    }
}

fn block_len(kind: ModelKind, space: &OutputSpace) -> usize {
    match kind {
        ModelKind::Tabular => space.size(),
        ModelKind::PositionFactorized => space.seq_len() * space.vocab().size(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn space(v: usize, len: usize) -> Arc<OutputSpace> {
        Arc::new(OutputSpace::new(Vocab::new(v).unwrap(), len).unwrap())
    }

    #[test]
    fn index_matches_enumeration_order() {
        let s = space(3, 3);
        for (i, y) in s.sequences().iter().enumerate() {
            assert_eq!(s.index_of(y), Some(i));
        }
        assert_eq!(s.index_of(&[0, 1]), None);
        assert_eq!(s.index_of(&[0, 1, 3]), None);
    }

    #[test]
    fn distributions_are_normalized() {
        let mut rng = stream(1, 0);
        for kind in [ModelKind::Tabular, ModelKind::PositionFactorized] {
            let m = Model::random(kind, space(3, 2), 4, 2.0, &mut rng).unwrap();
            for x in 0..4 {
                let ctx = m.context(x).unwrap();
                assert!((ctx.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(ctx.log_probs.iter().all(|l| l.is_finite()));
            }
            assert!(m.context(4).is_err());
        }
    }

    #[test]
    fn factorized_sampling_frequencies() {
        let mut rng = stream(2, 0);
        let m = Model::random(ModelKind::PositionFactorized, space(2, 2), 1, 1.5, &mut rng).unwrap();
        let ctx = m.context(0).unwrap();
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[m.sample_index(&ctx, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&ctx.probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.005);
        }
    }

    #[test]
    fn weighted_scores_equal_sum_of_scores() {
        let mut rng = stream(3, 0);
        for kind in [ModelKind::Tabular, ModelKind::PositionFactorized] {
            let m = Model::random(kind, space(3, 2), 1, 1.0, &mut rng).unwrap();
            let ctx = m.context(0).unwrap();
            let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut fast = vec![0.0; m.block_len()];
            m.add_weighted_scores(&ctx, &w, &mut fast);
            let mut slow = vec![0.0; m.block_len()];
            for (i, &wi) in w.iter().enumerate() {
                m.add_score(&ctx, i, wi, &mut slow);
            }
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }
}
