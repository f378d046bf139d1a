//! Line-oriented experiment configuration.
//!
//! One `section.key=value` per line. Blank lines and `#` comments are ignored.
//! Unset keys keep their defaults. [`ExperimentConfig::to_text`] writes every
//! key and parses back to an equal config.
//!
//! ```text
//! env.n_users=1000
//! env.n_arms=20
//! env.rank=4
//! policy.list=ts_sgld_full,ucb,random,oracle
//! run.n_seeds=15
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::bandit::{PolicyConfig, PolicyKind};
use crate::env::{EnvKind, EnvSpec};
use crate::metrics::{AttemptModel, DropoffRule, RetryPolicy};
use crate::sgld::{PriorSign, PriorSpec, SgldConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Summary {
    #[default]
    Mean,
    Median,
}

impl Summary {
    pub fn name(self) -> &'static str {
        match self {
            Summary::Mean => "mean",
            Summary::Median => "median",
        }
    }

    pub fn apply(self, values: &mut [f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Summary::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Summary::Median => {
                values.sort_by(f64::total_cmp);
                let k = values.len();
                if k % 2 == 1 {
                    values[k / 2]
                } else {
                    0.5 * (values[k / 2 - 1] + values[k / 2])
                }
            }
        }
    }
}

impl FromStr for Summary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Summary::Mean),
            "median" => Ok(Summary::Median),
            other => Err(format!("unknown summary `{other}`")),
        }
    }
}

/// Prior in scalar form: the same `λ` for every user, the same `α` for every
/// `v` entry except the listed low-pickup rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSummary {
    pub lambda: f64,
    pub alpha: f64,
    pub sign: PriorSign,
    pub low_pickup_rows: Vec<usize>,
    pub low_pickup_alpha: f64,
    pub floor: Option<f64>,
}

impl Default for PriorSummary {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.0,
            sign: PriorSign::AsWritten,
            low_pickup_rows: Vec::new(),
            low_pickup_alpha: 0.0,
            floor: None,
        }
    }
}

impl PriorSummary {
    pub fn build(&self, n_users: usize, rank: usize, n_arms: usize) -> PriorSpec {
        let mut prior = PriorSpec::constant(n_users, rank, n_arms, self.lambda, self.alpha, self.sign)
            .with_alpha_rows(&self.low_pickup_rows, self.low_pickup_alpha);
        prior.floor = self.floor;
        prior
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFlags {
    pub regret: bool,
    pub attempts: bool,
    pub dropoffs: bool,
    pub buckets: bool,
}

impl Default for ReportFlags {
    fn default() -> Self {
        Self {
            regret: true,
            attempts: true,
            dropoffs: true,
            buckets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSettings {
    pub attempts: AttemptModel,
    pub listen_alpha: f64,
    pub listen_beta: f64,
    pub dropoff: DropoffRule,
    /// Weeks simulated for dropoffs, one round per week.
    pub weeks: usize,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            attempts: AttemptModel::default(),
            listen_alpha: 8.0,
            listen_beta: 2.0,
            dropoff: DropoffRule::default(),
            weeks: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EluderSettings {
    pub eps: f64,
    pub budget: u64,
    pub greedy_samples: usize,
}

impl Default for EluderSettings {
    fn default() -> Self {
        Self {
            eps: 0.1,
            budget: 1_000_000,
            greedy_samples: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub sgld: SgldConfig,
    /// Model rank; `None` uses `env.rank`.
    pub model_rank: Option<usize>,
    pub prior: PriorSummary,
    pub policies: Vec<PolicyKind>,
    /// Shared by every policy; `policy` and `seed` are set per run.
    pub policy: PolicyConfig,
    pub n_seeds: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub seed_base: u64,
    pub summary: Summary,
    pub report: ReportFlags,
    pub metrics: MetricsSettings,
    pub eluder: EluderSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            sgld: SgldConfig::default(),
            model_rank: None,
            prior: PriorSummary::default(),
            policies: PolicyKind::ALL.to_vec(),
            policy: PolicyConfig::default(),
            n_seeds: 1,
            output_dir: PathBuf::from("out"),
            workers: 1,
            seed_base: 0,
            summary: Summary::Mean,
            report: ReportFlags::default(),
            metrics: MetricsSettings::default(),
            eluder: EluderSettings::default(),
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Parse {
        line,
        msg: format!("bad value `{raw}` for `{key}`: {e}"),
    })
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(line, key, s))
        .collect()
}

fn optional<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if raw == "none" {
        Ok(None)
    } else {
        value(line, key, raw).map(Some)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                msg: format!("expected key=value, got `{content}`"),
            })?;
            cfg.set(line, key.trim(), raw.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<(), ConfigError> {
        match key {
            "env.n_users" => self.env.n_users = value(line, key, raw)?,
            "env.n_arms" => self.env.n_arms = value(line, key, raw)?,
            "env.rank" => self.env.rank = value(line, key, raw)?,
            "env.noise_mean" => self.env.noise_mean = value(line, key, raw)?,
            "env.noise_std" => self.env.noise_std = value(line, key, raw)?,
            "env.kind" => self.env.kind = value::<EnvKind>(line, key, raw)?,
            "env.seed" => self.env.seed = value(line, key, raw)?,
            "env.zero_fraction" => self.env.zero_fraction = value(line, key, raw)?,
            "sgld.step_size" => self.sgld.step_size = value(line, key, raw)?,
            "sgld.batch_size" => self.sgld.batch_size = value(line, key, raw)?,
            "sgld.iters_per_round" => self.sgld.iters_per_round = value(line, key, raw)?,
            "sgld.scale_step_with_data" => self.sgld.scale_step_with_data = value(line, key, raw)?,
            "sgld.n_blocks" => self.sgld.n_blocks = value(line, key, raw)?,
            "sgld.seed" => self.sgld.seed = value(line, key, raw)?,
            "sgld.rank" => self.model_rank = optional(line, key, raw)?,
            "prior.lambda" => self.prior.lambda = value(line, key, raw)?,
            "prior.alpha" => self.prior.alpha = value(line, key, raw)?,
            "prior.sign" => self.prior.sign = value::<PriorSign>(line, key, raw)?,
            "prior.low_pickup_rows" => self.prior.low_pickup_rows = list(line, key, raw)?,
            "prior.low_pickup_alpha" => self.prior.low_pickup_alpha = value(line, key, raw)?,
            "prior.floor" => self.prior.floor = optional(line, key, raw)?,
            "policy.list" => self.policies = list::<PolicyKind>(line, key, raw)?,
            "policy.samples_per_step" => self.policy.samples_per_step = value(line, key, raw)?,
            "policy.rounds" => self.policy.rounds = value(line, key, raw)?,
            "policy.ucb_exploration" => self.policy.ucb_exploration = value(line, key, raw)?,
            "run.n_seeds" => self.n_seeds = value(line, key, raw)?,
            "run.output_dir" => self.output_dir = PathBuf::from(raw),
            "run.workers" => self.workers = value(line, key, raw)?,
            "run.seed_base" => self.seed_base = value(line, key, raw)?,
            "run.summary" => self.summary = value::<Summary>(line, key, raw)?,
            "report.regret" => self.report.regret = value(line, key, raw)?,
            "report.attempts" => self.report.attempts = value(line, key, raw)?,
            "report.dropoffs" => self.report.dropoffs = value(line, key, raw)?,
            "report.buckets" => self.report.buckets = value(line, key, raw)?,
            "metrics.max_attempts" => self.metrics.attempts.max_attempts = value(line, key, raw)?,
            "metrics.retry_policy" => {
                self.metrics.attempts.retry_policy = value::<RetryPolicy>(line, key, raw)?
            }
            "metrics.listen_alpha" => self.metrics.listen_alpha = value(line, key, raw)?,
            "metrics.listen_beta" => self.metrics.listen_beta = value(line, key, raw)?,
            "dropoff.threshold" => self.metrics.dropoff.engagement_threshold = value(line, key, raw)?,
            "dropoff.consecutive_weeks" => self.metrics.dropoff.consecutive_weeks = value(line, key, raw)?,
            "dropoff.window_weeks" => self.metrics.dropoff.window_weeks = value(line, key, raw)?,
            "dropoff.window_low_weeks" => self.metrics.dropoff.window_low_weeks = value(line, key, raw)?,
            "dropoff.weeks" => self.metrics.weeks = value(line, key, raw)?,
            "eluder.eps" => self.eluder.eps = value(line, key, raw)?,
            "eluder.budget" => self.eluder.budget = value(line, key, raw)?,
            "eluder.greedy_samples" => self.eluder.greedy_samples = value(line, key, raw)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn model_rank(&self) -> usize {
        self.model_rank.unwrap_or(self.env.rank)
    }

    pub fn prior_spec(&self) -> PriorSpec {
        self.prior.build(self.env.n_users, self.model_rank(), self.env.n_arms)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| invalid(&e))?;
        self.sgld.validate().map_err(|e| invalid(&e))?;
        self.policy.validate().map_err(|e| invalid(&e))?;
        self.metrics.dropoff.validate().map_err(|e| invalid(&e))?;
        if self.model_rank() == 0 {
            return Err(ConfigError::Invalid("sgld.rank must be >= 1".into()));
        }
        if self.prior.lambda < 0.0 || self.prior.alpha < 0.0 || self.prior.low_pickup_alpha < 0.0 {
            return Err(ConfigError::Invalid("prior rates must be >= 0".into()));
        }
        if let Some(&r) = self.prior.low_pickup_rows.iter().find(|&&r| r >= self.model_rank()) {
            return Err(ConfigError::Invalid(format!("low-pickup row {r} exceeds the model rank")));
        }
        if self.policies.is_empty() {
            return Err(ConfigError::Invalid("policy.list must name at least one policy".into()));
        }
        if self.n_seeds == 0 {
            return Err(ConfigError::Invalid("run.n_seeds must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be >= 1".into()));
        }
        if self.metrics.attempts.max_attempts == 0 {
            return Err(ConfigError::Invalid("metrics.max_attempts must be >= 1".into()));
        }
        if !(self.metrics.listen_alpha > 0.0 && self.metrics.listen_beta > 0.0) {
            return Err(ConfigError::Invalid("listen Beta parameters must be > 0".into()));
        }
        if self.metrics.weeks == 0 {
            return Err(ConfigError::Invalid("dropoff.weeks must be >= 1".into()));
        }
        if !(self.eluder.eps > 0.0) || self.eluder.budget == 0 {
            return Err(ConfigError::Invalid("eluder.eps and eluder.budget must be positive".into()));
        }
        Ok(())
    }

    /// Every key, one per line, in parseable form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("env.n_users", self.env.n_users.to_string());
        kv("env.n_arms", self.env.n_arms.to_string());
        kv("env.rank", self.env.rank.to_string());
        kv("env.noise_mean", self.env.noise_mean.to_string());
        kv("env.noise_std", self.env.noise_std.to_string());
        kv("env.kind", self.env.kind.to_string());
        kv("env.seed", self.env.seed.to_string());
        kv("env.zero_fraction", self.env.zero_fraction.to_string());
        kv("sgld.step_size", self.sgld.step_size.to_string());
        kv("sgld.batch_size", self.sgld.batch_size.to_string());
        kv("sgld.iters_per_round", self.sgld.iters_per_round.to_string());
        kv("sgld.scale_step_with_data", self.sgld.scale_step_with_data.to_string());
        kv("sgld.n_blocks", self.sgld.n_blocks.to_string());
        kv("sgld.seed", self.sgld.seed.to_string());
        kv("sgld.rank", show_opt(&self.model_rank));
        kv("prior.lambda", self.prior.lambda.to_string());
        kv("prior.alpha", self.prior.alpha.to_string());
        kv("prior.sign", self.prior.sign.to_string());
        kv("prior.low_pickup_rows", join(&self.prior.low_pickup_rows));
        kv("prior.low_pickup_alpha", self.prior.low_pickup_alpha.to_string());
        kv("prior.floor", show_opt(&self.prior.floor));
        kv("policy.list", join(&self.policies));
        kv("policy.samples_per_step", self.policy.samples_per_step.to_string());
        kv("policy.rounds", self.policy.rounds.to_string());
        kv("policy.ucb_exploration", self.policy.ucb_exploration.to_string());
        kv("run.n_seeds", self.n_seeds.to_string());
        kv("run.output_dir", self.output_dir.display().to_string());
        kv("run.workers", self.workers.to_string());
        kv("run.seed_base", self.seed_base.to_string());
        kv("run.summary", self.summary.name().to_string());
        kv("report.regret", self.report.regret.to_string());
        kv("report.attempts", self.report.attempts.to_string());
        kv("report.dropoffs", self.report.dropoffs.to_string());
        kv("report.buckets", self.report.buckets.to_string());
        kv("metrics.max_attempts", self.metrics.attempts.max_attempts.to_string());
        kv("metrics.retry_policy", self.metrics.attempts.retry_policy.to_string());
        kv("metrics.listen_alpha", self.metrics.listen_alpha.to_string());
        kv("metrics.listen_beta", self.metrics.listen_beta.to_string());
        kv("dropoff.threshold", self.metrics.dropoff.engagement_threshold.to_string());
        kv("dropoff.consecutive_weeks", self.metrics.dropoff.consecutive_weeks.to_string());
        kv("dropoff.window_weeks", self.metrics.dropoff.window_weeks.to_string());
        kv("dropoff.window_low_weeks", self.metrics.dropoff.window_low_weeks.to_string());
        kv("dropoff.weeks", self.metrics.weeks.to_string());
        kv("eluder.eps", self.eluder.eps.to_string());
        kv("eluder.budget", self.eluder.budget.to_string());
        kv("eluder.greedy_samples", self.eluder.greedy_samples.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_env_keys_with_defaults_elsewhere() {
        let cfg = ExperimentConfig::parse("env.n_users=1000\nenv.n_arms=20\nenv.rank=4").unwrap();
        assert_eq!((cfg.env.n_users, cfg.env.n_arms, cfg.env.rank), (1000, 20, 4));
        assert_eq!(cfg.sgld, SgldConfig::default());
        assert_eq!(cfg.policies, PolicyKind::ALL.to_vec());
    }

    #[test]
    fn empty_input_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(
            ExperimentConfig::parse("# only a comment\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::parse("env.rank=0"), Err(ConfigError::Invalid(_))));
        assert_eq!(
            ExperimentConfig::parse("env.n_users=10\nenv.colour=red"),
            Err(ConfigError::UnknownKey {
                line: 2,
                key: "env.colour".into()
            })
        );
        assert!(matches!(
            ExperimentConfig::parse("\n\nenv.n_users 10"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("policy.list=ucb,phased_mc"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("prior.low_pickup_rows=0,9\nenv.rank=4").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "env.kind=cluster\nenv.rank=5\nsgld.rank=7\nprior.sign=standard_exponential\n\
                    prior.low_pickup_rows=0,1\nprior.low_pickup_alpha=4.5\nprior.floor=-3.25\n\
                    policy.list=oracle,random\nrun.summary=median\nmetrics.retry_policy=policy_resample\n\
                    sgld.step_size=0.015\nrun.output_dir=results/run 1";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.output_dir, PathBuf::from("results/run 1"));
        let prior = cfg.prior_spec();
        assert_eq!(prior.alpha.nrows(), 7);
        assert_eq!(prior.alpha[(1, 0)], 4.5);
        assert_eq!(prior.alpha[(2, 0)], 0.0);
    }

    #[test]
    fn summaries() {
        assert_eq!(Summary::Mean.apply(&mut [1.0, 2.0, 6.0]), 3.0);
        assert_eq!(Summary::Median.apply(&mut [6.0, 1.0, 2.0]), 2.0);
        assert_eq!(Summary::Median.apply(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
