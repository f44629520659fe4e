use std::sync::Arc;

use num_bigint::BigUint;
use proptest::prelude::*;
use raml_core::counting::{edit_ball_count, exact_count_oracle, EditCountTable};
use raml_core::divergence::{bregman, kl, lse_hessian, prop1_certificate, LogitVector, Potential, SimplexPoint};
use raml_core::numeric::{entropy, kl_divergence, softmax_scaled};
use raml_core::objectives::{
    exact_gradient, loss_ml, loss_raml, loss_rl, Method, Model, ModelKind, OutputSpace, TrainingSet,
};
use raml_core::payoff::{
    apply_random_edits, enumerate_payoff, enumerate_sequences, log_partition, EditSampler, LengthMode, PayoffSpec,
    SampleBatch, WeightMode,
};
use raml_core::rewards::{edit_distance, RewardKind, Sequence, Vocab};
use raml_core::rng::stream;

const TAUS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 10.0];

fn big_to_f64(x: &BigUint) -> f64 {
    x.to_string().parse().unwrap()
}

fn logits(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn simplex_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=10)
        .prop_flat_map(|d| (logits(d), logits(d)))
        .prop_map(|(a, b)| (softmax_scaled(&a, 1.0), softmax_scaled(&b, 1.0)))
}

fn tau() -> impl Strategy<Value = f64> {
    prop::sample::select(TAUS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ball_count_matches_big_integer_oracle(m in 1usize..=25, v in 2usize..=100, frac in 0.0f64..=1.0) {
        let e = (frac * (2 * m) as f64).round() as usize;
        let exact = big_to_f64(&exact_count_oracle(e, m, v).unwrap());
        let approx = edit_ball_count(e, m, v).unwrap().exp();
        prop_assert!(((approx - exact) / exact).abs() < 1e-12, "{approx} vs {exact}");
    }

    #[test]
    fn ball_counts_increase_up_to_m(m in 1usize..=40, v in 2usize..=100) {
        let table = EditCountTable::new(m, v).unwrap();
        let c = table.log_counts();
        prop_assert_eq!(c[0], 0.0);
        prop_assert!(c[..=m].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn payoff_is_normalized_and_peaked(
        target in prop::collection::vec(0u32..3, 1..=3),
        tau in 0.05f64..5.0,
        edit in any::<bool>(),
    ) {
        let vocab = Vocab::new(3).unwrap();
        let (reward, mode) = if edit { (RewardKind::NegEdit, LengthMode::UpTo) } else { (RewardKind::NegHamming, LengthMode::Fixed) };
        let space = enumerate_sequences(vocab, target.len(), mode).unwrap();
        let spec = PayoffSpec::new(Sequence::new(target.clone()), tau, reward, vocab, WeightMode::AsWritten).unwrap();
        let q = enumerate_payoff(&spec, &space).unwrap();
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let peak = q.prob_of(&Sequence::new(target.clone()));
        for (y, p) in q.iter() {
            if y[..] != target[..] {
                prop_assert!(p < peak);
            }
        }
    }

    #[test]
    fn hamming_payoff_factorizes(target in prop::collection::vec(0u32..4, 1..=4), tau in 0.1f64..3.0) {
        let vocab = Vocab::new(4).unwrap();
        let space = enumerate_sequences(vocab, target.len(), LengthMode::Fixed).unwrap();
        let spec = PayoffSpec::new(Sequence::new(target.clone()), tau, RewardKind::NegHamming, vocab, WeightMode::AsWritten).unwrap();
        let q = enumerate_payoff(&spec, &space).unwrap();
        // Single-position marginal: the target token against the three others.
        let hit = 1.0 / (1.0 + 3.0 * (-1.0 / tau).exp());
        let miss = (1.0 - hit) / 3.0;
        for (y, p) in q.iter() {
            let product: f64 = y.iter().zip(&target).map(|(a, b)| if a == b { hit } else { miss }).product();
            prop_assert!((p - product).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_batches_are_reproducible(seed in any::<u64>(), trial in any::<u64>()) {
        let sampler = EditSampler::new(Sequence::new(vec![3, 1, 4, 1, 5]), Vocab::new(7).unwrap(), 0.8, WeightMode::AsWritten).unwrap();
        let a = SampleBatch::draw(&sampler, 50, seed, trial);
        let b = SampleBatch::draw(&sampler, 50, seed, trial);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn random_edits_stay_within_distance(
        target in prop::collection::vec(0u32..5, 0..=8),
        frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let e = (frac * (2 * target.len()) as f64).round() as usize;
        let y = apply_random_edits(&target, e, Vocab::new(5).unwrap(), &mut stream(seed, 0)).unwrap();
        prop_assert!(edit_distance(&y, &target) <= e);
        prop_assert!(y.iter().all(|t| *t < 5));
    }

    #[test]
    fn bregman_divergences_are_nonnegative((p, q) in simplex_pair(), t in tau()) {
        let potentials = [Potential::NegEntropy { tau: t }, Potential::LogSumExp { tau: t }, Potential::Quadratic];
        for pot in potentials {
            prop_assert!(bregman(&pot, &p, &q).unwrap() >= -1e-12);
            prop_assert!(bregman(&pot, &p, &p).unwrap().abs() < 1e-12);
        }
        let ent = bregman(&Potential::NegEntropy { tau: t }, &p, &q).unwrap();
        let scaled = t * kl(&SimplexPoint::new(p.clone()).unwrap(), &SimplexPoint::new(q.clone()).unwrap()).unwrap();
        prop_assert!((ent - scaled).abs() < 1e-12);
    }

    #[test]
    fn distinct_points_have_positive_divergence((p, q) in simplex_pair(), t in tau()) {
        prop_assume!(p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-3));
        let ent = bregman(&Potential::NegEntropy { tau: t }, &p, &q).unwrap();
        let quad = bregman(&Potential::Quadratic, &p, &q).unwrap();
        prop_assert!(ent > 0.0 && quad > 0.0);
    }

    #[test]
    fn certificate_gives_scaled_kl_gap((p, q) in simplex_pair(), t in tau()) {
        let cert = prop1_certificate(&Potential::NegEntropy { tau: t }, &p, &q).unwrap();
        let gap = t * kl_divergence(&p, &q) - t * kl_divergence(&q, &p);
        prop_assert!((gap - (cert.quad_b - cert.quad_a)).abs() < 1e-9, "{gap} {} {}", cert.quad_a, cert.quad_b);
    }

    #[test]
    fn lse_hessian_is_psd_and_singular(r in (2usize..=10).prop_flat_map(logits), t in tau()) {
        let h = lse_hessian(&LogitVector::new(r.clone()).unwrap(), t).unwrap();
        let eig = h.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|l| *l >= -1e-12));
        let ones = nalgebra::DVector::from_element(r.len(), 1.0);
        prop_assert!((&h * ones).amax() < 1e-12);
    }
}

fn random_problem(seed: u64) -> (Model, TrainingSet, RewardKind, f64) {
    use rand::Rng;
    let mut rng = stream(seed, 1);
    let v = rng.gen_range(2..=4);
    let len = rng.gen_range(1..=3);
    let space = Arc::new(OutputSpace::new(Vocab::new(v).unwrap(), len).unwrap());
    let pairs = (0..rng.gen_range(1..=4))
        .map(|_| (rng.gen_range(0..2), space.sequences()[rng.gen_range(0..space.size())].clone()))
        .collect();
    let kind = if rng.gen_bool(0.5) { ModelKind::Tabular } else { ModelKind::PositionFactorized };
    let model = Model::random(kind, space, 2, 2.0, &mut rng).unwrap();
    let reward = if rng.gen_bool(0.5) { RewardKind::NegEdit } else { RewardKind::NegHamming };
    let tau = [0.3, 1.0, 3.0][rng.gen_range(0..3)];
    (model, TrainingSet::new(pairs).unwrap(), reward, tau)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn losses_are_kl_divergences(seed in any::<u64>()) {
        let (model, data, reward, tau) = random_problem(seed);
        let space = model.space();
        let (mut kl_pq, mut kl_qp, mut kl_dp, mut h_q, mut log_z) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in data.pairs() {
            let spec = PayoffSpec::new(y.clone(), tau, reward, space.vocab(), WeightMode::AsWritten).unwrap();
            let q = enumerate_payoff(&spec, space.sequences()).unwrap();
            let p = model.context(*x).unwrap().probs;
            let delta: Vec<f64> = space.sequences().iter().map(|s| if s == y { 1.0 } else { 0.0 }).collect();
            kl_pq += kl_divergence(&p, q.probs());
            kl_qp += kl_divergence(q.probs(), &p);
            kl_dp += kl_divergence(&delta, &p);
            h_q += entropy(q.probs());
            log_z += log_partition(&spec, space.sequences()).unwrap();
        }
        let ml = loss_ml(&model, &data).unwrap();
        let raml = loss_raml(&model, &data, reward, tau).unwrap();
        let rl = loss_rl(&model, &data, reward, tau).unwrap();
        prop_assert!((kl_pq - (rl / tau + log_z)).abs() < 1e-10);
        prop_assert!((kl_dp - ml).abs() < 1e-12);
        prop_assert!((kl_qp - (raml - h_q)).abs() < 1e-10);
        let composed = tau * raml + tau * (kl_pq - kl_qp) - tau * h_q - tau * log_z;
        prop_assert!((rl - composed).abs() < 1e-10);
    }

    #[test]
    fn raml_at_zero_temperature_is_ml(seed in any::<u64>()) {
        let (model, data, reward, _) = random_problem(seed);
        prop_assert_eq!(loss_raml(&model, &data, reward, 0.0).unwrap(), loss_ml(&model, &data).unwrap());
        prop_assert_eq!(
            exact_gradient(Method::Raml, &model, &data, reward, 0.0).unwrap(),
            exact_gradient(Method::Ml, &model, &data, reward, 0.0).unwrap()
        );
    }
}
