//! Per-command parameter records. Each record is both a clap argument group
//! and a TOML table; command-line values win over file values, and
//! `resolve` fills defaults and validates ranges.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer};

use super::{HarnessError, HarnessResult};
use crate::objectives::{Baseline, GradMode, Method, ModelKind, RlEstimator, Task};
use crate::payoff::{LengthMode, WeightMode};
use crate::rewards::RewardKind;

/// Toy-task limits that keep every space far below the enumeration guard.
pub const MAX_TASK_VOCAB: usize = 5;
pub const MAX_TASK_LEN: usize = 4;

fn one_or_many<'de, D, T>(de: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(de)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

fn pick<T>(cli: Option<T>, file: Option<T>) -> Option<T> {
    cli.or(file)
}

fn require<T>(value: Option<T>, name: &str) -> HarnessResult<T> {
    value.ok_or_else(|| HarnessError::config(format!("missing required value '{name}'")))
}

fn check_tau(tau: f64, allow_zero: bool) -> HarnessResult<()> {
    let ok = tau.is_finite() && (tau > 0.0 || (allow_zero && tau == 0.0));
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(format!("temperature {tau} out of range")))
    }
}

/// The whole config file: one optional table per command.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub verify: Option<VerifyArgs>,
    pub edit_hist: Option<EditHistArgs>,
    pub train: Option<TrainArgs>,
    pub payoff: Option<PayoffArgs>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> HarnessResult<Self> {
        toml::from_str(text).map_err(|e| HarnessError::config(e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Identities,
    Props,
    Sampler,
    Gradients,
    All,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Props => "props",
            Suite::Sampler => "sampler",
            Suite::Gradients => "gradients",
            Suite::All => "all",
        }
    }

    pub fn includes(&self, other: Suite) -> bool {
        *self == Suite::All || *self == other
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identities" => Ok(Suite::Identities),
            "props" => Ok(Suite::Props),
            "sampler" => Ok(Suite::Sampler),
            "gradients" => Ok(Suite::Gradients),
            "all" => Ok(Suite::All),
            other => Err(format!("unknown suite '{other}'")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct VerifyArgs {
    /// identities, props, sampler, gradients or all.
    #[arg(long)]
    pub suite: Option<Suite>,
    /// Random instances per check.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draws per sampler check.
    #[arg(long)]
    pub sampler_draws: Option<usize>,
    /// Samples per estimator check.
    #[arg(long)]
    pub estimator_samples: Option<usize>,
    /// Report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyParams {
    pub suite: Suite,
    pub trials: usize,
    pub seed: u64,
    pub sampler_draws: usize,
    pub estimator_samples: usize,
    pub out: PathBuf,
}

impl VerifyArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            suite: pick(self.suite, file.suite),
            trials: pick(self.trials, file.trials),
            seed: pick(self.seed, file.seed),
            sampler_draws: pick(self.sampler_draws, file.sampler_draws),
            estimator_samples: pick(self.estimator_samples, file.estimator_samples),
            out: pick(self.out, file.out),
        }
    }

    pub fn resolve(self) -> HarnessResult<VerifyParams> {
        let trials = self.trials.unwrap_or(1000);
        if !(1..=1_000_000).contains(&trials) {
            return Err(HarnessError::config("trials must be in 1..=1000000"));
        }
        let sampler_draws = self.sampler_draws.unwrap_or(1_000_000);
        if !(1000..=100_000_000).contains(&sampler_draws) {
            return Err(HarnessError::config("sampler_draws must be in 1000..=100000000"));
        }
        let estimator_samples = self.estimator_samples.unwrap_or(100_000);
        if !(100..=100_000_000).contains(&estimator_samples) {
            return Err(HarnessError::config("estimator_samples must be in 100..=100000000"));
        }
        Ok(VerifyParams {
            suite: self.suite.unwrap_or(Suite::All),
            trials,
            seed: self.seed.unwrap_or(0),
            sampler_draws,
            estimator_samples,
            out: require(self.out, "out")?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct EditHistArgs {
    /// Reference length.
    #[arg(long)]
    pub m: Option<usize>,
    /// Vocabulary size.
    #[arg(long)]
    pub v: Option<usize>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub tau: Option<Vec<f64>>,
    /// as_written or figure1.
    #[arg(long)]
    pub mode: Option<WeightMode>,
    /// Largest edit count to emit.
    #[arg(long)]
    pub e_max: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditHistParams {
    pub m: usize,
    pub v: usize,
    pub taus: Vec<f64>,
    pub mode: WeightMode,
    pub e_max: usize,
    pub out: PathBuf,
}

impl EditHistArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            m: pick(self.m, file.m),
            v: pick(self.v, file.v),
            tau: pick(self.tau, file.tau),
            mode: pick(self.mode, file.mode),
            e_max: pick(self.e_max, file.e_max),
            out: pick(self.out, file.out),
        }
    }

    pub fn resolve(self) -> HarnessResult<EditHistParams> {
        let m = self.m.unwrap_or(20);
        let v = self.v.unwrap_or(61);
        if !(1..=100_000).contains(&m) {
            return Err(HarnessError::config("m must be in 1..=100000"));
        }
        if !(2..=u32::MAX as usize).contains(&v) {
            return Err(HarnessError::config("v must be at least 2"));
        }
        let taus = self.tau.unwrap_or_else(|| vec![0.6, 0.7, 0.8, 0.9]);
        if taus.is_empty() {
            return Err(HarnessError::config("tau list is empty"));
        }
        for &t in &taus {
            check_tau(t, false)?;
        }
        let e_max = self.e_max.unwrap_or(2 * m);
        if e_max > 2 * m {
            return Err(HarnessError::config(format!("e_max {e_max} exceeds 2m = {}", 2 * m)));
        }
        Ok(EditHistParams {
            m,
            v,
            taus,
            mode: self.mode.unwrap_or(WeightMode::Figure1),
            e_max,
            out: require(self.out, "out")?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct PayoffArgs {
    /// Target written in vocabulary symbols.
    #[arg(long)]
    pub target: Option<String>,
    /// Vocabulary as a string of distinct single-character symbols.
    #[arg(long)]
    pub vocab: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output length (the maximum length with `--len-mode up_to`).
    #[arg(long)]
    pub len: Option<usize>,
    /// fixed or up_to.
    #[arg(long)]
    pub len_mode: Option<LengthMode>,
    /// neg_edit or neg_hamming.
    #[arg(long)]
    pub reward: Option<RewardKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PayoffParams {
    pub symbols: Vec<char>,
    pub target: Vec<u32>,
    pub tau: f64,
    pub len: usize,
    pub len_mode: LengthMode,
    pub reward: RewardKind,
    pub out: PathBuf,
}

impl PayoffArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            target: pick(self.target, file.target),
            vocab: pick(self.vocab, file.vocab),
            tau: pick(self.tau, file.tau),
            len: pick(self.len, file.len),
            len_mode: pick(self.len_mode, file.len_mode),
            reward: pick(self.reward, file.reward),
            out: pick(self.out, file.out),
        }
    }

    pub fn resolve(self) -> HarnessResult<PayoffParams> {
        let vocab = require(self.vocab, "vocab")?;
        let symbols: Vec<char> = vocab.chars().collect();
        if symbols.len() < 2 {
            return Err(HarnessError::config("vocab needs at least two symbols"));
        }
        let mut sorted = symbols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != symbols.len() {
            return Err(HarnessError::config("vocab symbols must be distinct"));
        }
        let target_text = require(self.target, "target")?;
        let target = target_text
            .chars()
            .map(|c| {
                symbols
                    .iter()
                    .position(|s| *s == c)
                    .map(|i| i as u32)
                    .ok_or_else(|| HarnessError::config(format!("target symbol '{c}' not in vocab")))
            })
            .collect::<HarnessResult<Vec<u32>>>()?;
        let tau = require(self.tau, "tau")?;
        check_tau(tau, true)?;
        Ok(PayoffParams {
            len: self.len.unwrap_or(target.len()),
            symbols,
            target,
            tau,
            len_mode: self.len_mode.unwrap_or(LengthMode::Fixed),
            reward: self.reward.unwrap_or(RewardKind::NegEdit),
            out: require(self.out, "out")?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// copy or reverse.
    #[arg(long)]
    pub task: Option<Task>,
    /// Comma-separated methods among ml, raml, rl.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub method: Option<Vec<Method>>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub tau: Option<Vec<f64>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Pairs per step (default: all).
    #[arg(long)]
    pub batch: Option<usize>,
    /// exact or stoch:N.
    #[arg(long)]
    pub grad: Option<GradMode>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub seeds: Option<Vec<u64>>,
    /// tabular or position_factorized.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Vocabulary size of the toy task.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Sequence length of the toy task.
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub reward: Option<RewardKind>,
    /// Initial parameters are uniform on `[-init_scale, init_scale]`.
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Baseline of the sampled RL gradient: none, mean or a number.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Drop the entropy correction from the sampled RL gradient.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub literal_rl: Option<bool>,
    /// Add wall-clock milliseconds to each record (breaks byte identity).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub wall_time: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub task: Task,
    pub methods: Vec<Method>,
    pub taus: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub grad: GradMode,
    pub seeds: Vec<u64>,
    pub model: ModelKind,
    pub vocab_size: usize,
    pub len: usize,
    pub reward: RewardKind,
    pub init_scale: f64,
    pub rl_estimator: RlEstimator,
    pub wall_time: bool,
    pub out: PathBuf,
}

fn parse_baseline(s: &str) -> HarnessResult<Baseline> {
    match s {
        "none" => Ok(Baseline::None),
        "mean" => Ok(Baseline::MeanReward),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|b| b.is_finite())
            .map(Baseline::Constant)
            .ok_or_else(|| HarnessError::config(format!("baseline must be none, mean or a number, got '{other}'"))),
    }
}

impl TrainArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            task: pick(self.task, file.task),
            method: pick(self.method, file.method),
            tau: pick(self.tau, file.tau),
            steps: pick(self.steps, file.steps),
            lr: pick(self.lr, file.lr),
            batch: pick(self.batch, file.batch),
            grad: pick(self.grad, file.grad),
            seeds: pick(self.seeds, file.seeds),
            model: pick(self.model, file.model),
            vocab_size: pick(self.vocab_size, file.vocab_size),
            len: pick(self.len, file.len),
            reward: pick(self.reward, file.reward),
            init_scale: pick(self.init_scale, file.init_scale),
            baseline: pick(self.baseline, file.baseline),
            literal_rl: pick(self.literal_rl, file.literal_rl),
            wall_time: pick(self.wall_time, file.wall_time),
            out: pick(self.out, file.out),
        }
    }

    pub fn resolve(self) -> HarnessResult<TrainParams> {
        let methods = self.method.unwrap_or_else(|| vec![Method::Raml]);
        let taus = self.tau.unwrap_or_else(|| vec![1.0]);
        let seeds = self.seeds.unwrap_or_else(|| vec![0]);
        if methods.is_empty() || taus.is_empty() || seeds.is_empty() {
            return Err(HarnessError::config("method, tau and seeds lists must be non-empty"));
        }
        for &t in &taus {
            check_tau(t, true)?;
        }
        let mut cells: Vec<(&str, u64, u64)> = Vec::new();
        for m in &methods {
            for t in &taus {
                for s in &seeds {
                    cells.push((m.name(), t.to_bits(), *s));
                }
            }
        }
        cells.sort_unstable();
        if cells.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::config("duplicate (method, tau, seed) cell"));
        }
        let steps = self.steps.unwrap_or(600);
        if !(1..=10_000_000).contains(&steps) {
            return Err(HarnessError::config("steps must be in 1..=10000000"));
        }
        let lr = self.lr.unwrap_or(20.0);
        if !(lr.is_finite() && lr > 0.0) {
            return Err(HarnessError::config("lr must be positive"));
        }
        let batch = self.batch.unwrap_or(usize::MAX);
        if batch == 0 {
            return Err(HarnessError::config("batch must be at least 1"));
        }
        let vocab_size = self.vocab_size.unwrap_or(3);
        if !(2..=MAX_TASK_VOCAB).contains(&vocab_size) {
            return Err(HarnessError::config(format!("vocab_size must be in 2..={MAX_TASK_VOCAB}")));
        }
        let len = self.len.unwrap_or(2);
        if !(1..=MAX_TASK_LEN).contains(&len) {
            return Err(HarnessError::config(format!("len must be in 1..={MAX_TASK_LEN}")));
        }
        let init_scale = self.init_scale.unwrap_or(0.5);
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(HarnessError::config("init_scale must be non-negative"));
        }
        let baseline = match self.baseline {
            Some(b) => parse_baseline(&b)?,
            None => Baseline::None,
        };
        Ok(TrainParams {
            task: self.task.unwrap_or(Task::Copy),
            methods,
            taus,
            steps,
            lr,
            batch,
            grad: self.grad.unwrap_or(GradMode::Exact),
            seeds,
            model: self.model.unwrap_or(ModelKind::Tabular),
            vocab_size,
            len,
            reward: self.reward.unwrap_or(RewardKind::NegHamming),
            init_scale,
            rl_estimator: RlEstimator { baseline, literal: self.literal_rl.unwrap_or(false) },
            wall_time: self.wall_time.unwrap_or(false),
            out: require(self.out, "out")?,
        })
    }
}
