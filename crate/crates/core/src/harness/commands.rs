//! The four commands. Each renders its whole output in memory and writes it
//! atomically, so a failed run leaves no partial file behind.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{EditHistParams, PayoffParams, TrainParams, VerifyParams};
use super::verify;
use super::{write_atomic, HarnessError, HarnessResult, SCHEMA_VERSION};
use crate::objectives::{train, Baseline, Method, Model, OutputSpace, RunRecord, TrainConfig};
use crate::payoff::{
    edit_distance_weights, enumerate_payoff, enumerate_sequences, log_partition, PayoffSpec, WeightMode,
};
use crate::rewards::{Sequence, Vocab};
use crate::rng::stream;

/// Result of a command that ran to completion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command finished but a check or run failed.
    Failure(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Failure(_) => 1,
        }
    }
}

// Shortest round-trip form; switches to exponent notation for tiny values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn csv_bytes(comments: &[String], header: &[&str], rows: Vec<Vec<String>>) -> HarnessResult<Vec<u8>> {
    let mut out = Vec::new();
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let fail = |e: csv::Error| HarnessError::Failed(format!("csv encoding failed: {e}"));
    writer.write_record(header).map_err(fail)?;
    for row in rows {
        writer.write_record(&row).map_err(fail)?;
    }
    writer.into_inner().map_err(|e| HarnessError::Failed(format!("csv encoding failed: {e}")))
}

pub fn cmd_verify(params: &VerifyParams) -> HarnessResult<Outcome> {
    let report = verify::run(params)?;
    write_atomic(&params.out, report.render().as_bytes())?;
    if report.all_passed() {
        Ok(Outcome::Success)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Ok(Outcome::Failure(format!("failed checks: {}", names.join(", "))))
    }
}

/// CSV rows `tau,e,probability` of the edit-distance weights.
pub fn edit_hist_csv(params: &EditHistParams) -> HarnessResult<Vec<u8>> {
    let mut rows = Vec::new();
    for &tau in &params.taus {
        let weights = edit_distance_weights(params.m, params.v, tau, params.mode)?;
        for (e, p) in weights.iter().take(params.e_max + 1) {
            rows.push(vec![num(tau), e.to_string(), num(p)]);
        }
    }
    let comments = vec![
        format!("raml-lab edit-hist m={} v={} mode={} e_max={}", params.m, params.v, params.mode.name(), params.e_max),
        "master_seed=none (analytic)".to_string(),
    ];
    csv_bytes(&comments, &["tau", "e", "probability"], rows)
}

pub fn cmd_edit_hist(params: &EditHistParams) -> HarnessResult<Outcome> {
    write_atomic(&params.out, &edit_hist_csv(params)?)?;
    Ok(Outcome::Success)
}

fn render_sequence(seq: &Sequence, symbols: &[char]) -> String {
    seq.iter().map(|&t| symbols[t as usize]).collect()
}

/// CSV rows `sequence,probability` of the exact payoff distribution, most
/// probable first, ties in lexicographic order.
pub fn payoff_csv(params: &PayoffParams) -> HarnessResult<Vec<u8>> {
    let vocab = Vocab::new(params.symbols.len())?;
    let space = enumerate_sequences(vocab, params.len, params.len_mode)?;
    let spec =
        PayoffSpec::new(Sequence::new(params.target.clone()), params.tau, params.reward, vocab, WeightMode::AsWritten)?;
    let dist = enumerate_payoff(&spec, &space)?;
    let log_z = if params.tau > 0.0 { num(log_partition(&spec, &space)?) } else { "undefined (tau=0)".to_string() };
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs()[b].total_cmp(&dist.probs()[a]));
    let rows = order
        .into_iter()
        .map(|i| vec![render_sequence(&dist.support()[i], &params.symbols), num(dist.probs()[i])])
        .collect();
    let symbols: String = params.symbols.iter().collect();
    let target: String = params.target.iter().map(|&t| params.symbols[t as usize]).collect();
    let comments = vec![
        format!(
            "raml-lab payoff target={target} vocab={symbols} tau={} len={} len_mode={} reward={}",
            num(params.tau),
            params.len,
            params.len_mode.name(),
            params.reward.name()
        ),
        "master_seed=none (analytic)".to_string(),
        format!("logZ={log_z}"),
    ];
    csv_bytes(&comments, &["sequence", "probability"], rows)
}

pub fn cmd_payoff(params: &PayoffParams) -> HarnessResult<Outcome> {
    write_atomic(&params.out, &payoff_csv(params)?)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    schema_version: u32,
    kind: &'static str,
    task: &'static str,
    model: &'static str,
    vocab_size: usize,
    len: usize,
    reward: &'static str,
    methods: Vec<&'static str>,
    taus: &'a [f64],
    master_seeds: &'a [u64],
    trial_index: u64,
    steps: usize,
    lr: f64,
    batch: Option<usize>,
    grad: String,
    init_scale: f64,
    baseline: String,
    literal_rl: bool,
}

#[derive(Serialize)]
struct StepLine<'a> {
    schema_version: u32,
    kind: &'static str,
    method: &'static str,
    tau: f64,
    master_seed: u64,
    #[serde(flatten)]
    record: &'a RunRecord,
}

#[derive(Serialize)]
struct DivergedLine<'a> {
    schema_version: u32,
    kind: &'static str,
    method: &'static str,
    tau: f64,
    master_seed: u64,
    diagnostic: &'a str,
}

#[derive(Serialize)]
struct SummaryLine {
    schema_version: u32,
    kind: &'static str,
    method: &'static str,
    tau: f64,
    aggregate: &'static str,
    mean: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
    runs: usize,
    diverged_runs: usize,
}

/// Result of one `(method, τ, seed)` cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub tau: f64,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub diverged: Option<String>,
}

/// Every cell shares the stream `(seed, 0)` for its initial parameters and
/// its batches, so methods and temperatures are compared on equal draws.
pub const TRAIN_TRIAL_INDEX: u64 = 0;

pub fn run_cell(params: &TrainParams, method: Method, tau: f64, seed: u64) -> HarnessResult<CellResult> {
    let space = Arc::new(OutputSpace::new(Vocab::new(params.vocab_size)?, params.len)?);
    let data = params.task.build(&space);
    let mut rng = stream(seed, TRAIN_TRIAL_INDEX);
    let mut model = Model::random(params.model, space, data.len(), params.init_scale, &mut rng)?;
    let config = TrainConfig {
        method,
        tau,
        steps: params.steps,
        lr: params.lr,
        batch: params.batch,
        grad_mode: params.grad,
        reward: params.reward,
        rl_estimator: params.rl_estimator,
        record_wall_time: params.wall_time,
    };
    let outcome = train(&mut model, &data, &config, &mut rng)?;
    Ok(CellResult { method, tau, seed, records: outcome.records, diverged: outcome.diverged })
}

/// Runs every cell in parallel and returns them sorted by
/// `(method, τ, seed)`.
pub fn run_sweep(params: &TrainParams) -> HarnessResult<Vec<CellResult>> {
    let mut cells = Vec::new();
    for &method in &params.methods {
        for &tau in &params.taus {
            for &seed in &params.seeds {
                cells.push((method, tau, seed));
            }
        }
    }
    let mut results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|(method, tau, seed)| run_cell(params, method, tau, seed))
        .collect::<HarnessResult<_>>()?;
    results
        .sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.tau.total_cmp(&b.tau)).then(a.seed.cmp(&b.seed)));
    Ok(results)
}

fn baseline_name(b: Baseline) -> String {
    match b {
        Baseline::None => "none".into(),
        Baseline::MeanReward => "mean".into(),
        Baseline::Constant(c) => num(c),
    }
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> HarnessResult<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| HarnessError::Failed(format!("json encoding failed: {e}")))?;
    out.push(b'\n');
    Ok(())
}

/// JSONL telemetry: a header record, the step records of each cell, a
/// diagnostic for each diverged cell and the per-`(method, τ)` summaries.
pub fn train_jsonl(params: &TrainParams, cells: &[CellResult]) -> HarnessResult<Vec<u8>> {
    let mut out = Vec::new();
    json_line(
        &mut out,
        &HeaderLine {
            schema_version: SCHEMA_VERSION,
            kind: "header",
            task: params.task.name(),
            model: params.model.name(),
            vocab_size: params.vocab_size,
            len: params.len,
            reward: params.reward.name(),
            methods: params.methods.iter().map(|m| m.name()).collect(),
            taus: &params.taus,
            master_seeds: &params.seeds,
            trial_index: TRAIN_TRIAL_INDEX,
            steps: params.steps,
            lr: params.lr,
            batch: (params.batch != usize::MAX).then_some(params.batch),
            grad: params.grad.to_string(),
            init_scale: params.init_scale,
            baseline: baseline_name(params.rl_estimator.baseline),
            literal_rl: params.rl_estimator.literal,
        },
    )?;
    for cell in cells {
        for record in &cell.records {
            json_line(
                &mut out,
                &StepLine {
                    schema_version: SCHEMA_VERSION,
                    kind: "step",
                    method: cell.method.name(),
                    tau: cell.tau,
                    master_seed: cell.seed,
                    record,
                },
            )?;
        }
        if let Some(diagnostic) = &cell.diverged {
            json_line(
                &mut out,
                &DivergedLine {
                    schema_version: SCHEMA_VERSION,
                    kind: "diverged",
                    method: cell.method.name(),
                    tau: cell.tau,
                    master_seed: cell.seed,
                    diagnostic,
                },
            )?;
        }
    }
    for summary in summarize(cells) {
        json_line(&mut out, &summary)?;
    }
    Ok(out)
}

type Field = fn(&RunRecord) -> f64;

fn summarize(cells: &[CellResult]) -> Vec<SummaryLine> {
    let mut lines = Vec::new();
    let mut start = 0;
    while start < cells.len() {
        let key = (cells[start].method, cells[start].tau.to_bits());
        let end = start + cells[start..].iter().take_while(|c| (c.method, c.tau.to_bits()) == key).count();
        let group = &cells[start..end];
        let finished: Vec<&RunRecord> =
            group.iter().filter(|c| c.diverged.is_none()).filter_map(|c| c.records.last()).collect();
        let aggregates: [(&'static str, Field); 2] =
            [("final_expected_reward", |r| r.expected_reward), ("final_kl_q_p", |r| r.kl_q_p)];
        for (aggregate, get) in aggregates {
            let values: Vec<f64> = finished.iter().map(|r| get(r)).collect();
            let (mean, min, max) = if values.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(values.iter().sum::<f64>() / values.len() as f64),
                    values.iter().copied().reduce(f64::min),
                    values.iter().copied().reduce(f64::max),
                )
            };
            lines.push(SummaryLine {
                schema_version: SCHEMA_VERSION,
                kind: "summary",
                method: group[0].method.name(),
                tau: group[0].tau,
                aggregate,
                mean,
                min,
                max,
                runs: values.len(),
                diverged_runs: group.len() - values.len(),
            });
        }
        start = end;
    }
    lines
}

pub fn cmd_train(params: &TrainParams) -> HarnessResult<Outcome> {
    let cells = run_sweep(params)?;
    write_atomic(&params.out, &train_jsonl(params, &cells)?)?;
    let diverged: Vec<String> = cells
        .iter()
        .filter(|c| c.diverged.is_some())
        .map(|c| format!("{} tau={} seed={}", c.method.name(), num(c.tau), c.seed))
        .collect();
    if diverged.is_empty() {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Failure(format!("diverged runs: {}", diverged.join("; "))))
    }
}
