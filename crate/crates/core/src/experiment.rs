//! Seeded policy × seed sweeps and their CSV/JSON outputs.
//!
//! Seed index `k` runs with seed `seed_base + k`. Every policy at that seed
//! sees the same environment, generated with `derive_seed(env.seed, seed)`.
//! Runs execute on a pool of `workers` threads. Files are written once all
//! runs finish, in sorted order, so identical configs give byte-identical CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bandit::{run_policy, PolicyConfig, PolicyKind, RunTrace};
use crate::config::{ConfigError, ExperimentConfig};
use crate::eluder::{bound_finite, default_cases, run_cases, EluderError, EluderReport, SearchMode};
use crate::env::{EnvError, EnvSpec, Environment, RewardMatrix};
use crate::metrics::{
    bucket_counts, bucket_users, listen_propensity, random_slot_attempts, rel_random_pct,
    simulate_attempts, simulate_dropoffs, weekly_engagement, Bucket, CallSlot, MetricsError,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const REGRET_HEADER: [&str; 6] = ["policy", "seed", "round", "inst_regret", "cum_regret", "n_obs"];
pub const METRICS_HEADER: [&str; 7] = [
    "policy",
    "seed",
    "bucket",
    "mean_attempts",
    "connect_rate",
    "dropoff_rate",
    "rel_random_pct",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eluder(#[from] EluderError),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => EXIT_CHECK_FAILED,
            _ => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Seed of the run at index `k`.
pub fn run_seed(cfg: &ExperimentConfig, k: usize) -> u64 {
    cfg.seed_base.wrapping_add(k as u64)
}

/// Environment shared by every policy at `seed`.
pub fn env_for_seed(spec: &EnvSpec, seed: u64) -> Result<Environment, EnvError> {
    Environment::generate(&EnvSpec {
        seed: derive_seed(spec.seed, seed),
        ..spec.clone()
    })
}

fn policy_stream(policy: PolicyKind, seed: u64) -> u64 {
    derive_seed(derive_seed(seed, 0x5eed), policy as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub bucket: String,
    pub mean_attempts: f64,
    pub connect_rate: f64,
    pub dropoff_rate: f64,
    pub rel_random_pct: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub seed: u64,
    pub outcome: Result<(RunTrace, Vec<MetricsRow>), String>,
}

/// Per-bucket attempts (last round's calls, retried at the same slot) and
/// dropoffs (one round per week) for one trace, plus an `all` row.
pub fn trace_metrics(
    cfg: &ExperimentConfig,
    env: &RewardMatrix,
    trace: &RunTrace,
    seed: u64,
) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut rng = rng_from_seed(derive_seed(policy_stream(trace.policy, seed), 1));
    let buckets = bucket_users(env);
    let last = trace.rounds.len().saturating_sub(1);
    let calls: Vec<CallSlot> = trace
        .calls_in_round(last)
        .map(|o| CallSlot {
            user: o.user,
            slot: o.arm,
        })
        .collect();
    let dropped = if cfg.report.dropoffs {
        let listen = listen_propensity(
            env.n_users(),
            cfg.metrics.listen_alpha,
            cfg.metrics.listen_beta,
            &mut rng,
        )?;
        let weekly = weekly_engagement(trace, env, &listen, &cfg.metrics.attempts, cfg.metrics.weeks, &mut rng)?;
        Some(simulate_dropoffs(&weekly, &cfg.metrics.dropoff)?.drop_week)
    } else {
        None
    };
    let mut rows = Vec::new();
    let groups: Vec<(String, Option<Bucket>)> = Bucket::ALL
        .iter()
        .map(|b| (b.name().to_string(), Some(*b)))
        .chain(std::iter::once(("all".to_string(), None)))
        .collect();
    for (name, bucket) in groups {
        let member = |u: usize| bucket.is_none_or(|b| buckets[u] == b);
        let users: Vec<usize> = (0..env.n_users()).filter(|&u| member(u)).collect();
        if users.is_empty() {
            continue;
        }
        let (mean_attempts, connect_rate, rel) = if cfg.report.attempts {
            let group_calls: Vec<CallSlot> = calls.iter().copied().filter(|c| member(c.user)).collect();
            let s = simulate_attempts(&group_calls, env, &cfg.metrics.attempts, trace.final_p.as_ref(), &mut rng)?;
            let random = random_slot_attempts(&users, env, &cfg.metrics.attempts)?;
            (s.mean_attempts, s.connect_rate, rel_random_pct(s.mean_attempts, random))
        } else {
            (0.0, 0.0, 0.0)
        };
        let dropoff_rate = dropped.as_ref().map_or(0.0, |d| {
            users.iter().filter(|&&u| d[u].is_some()).count() as f64 / users.len() as f64
        });
        rows.push(MetricsRow {
            bucket: name,
            mean_attempts,
            connect_rate,
            dropoff_rate,
            rel_random_pct: rel,
        });
    }
    Ok(rows)
}

fn run_one(cfg: &ExperimentConfig, env: &RewardMatrix, policy: PolicyKind, seed: u64) -> RunRecord {
    let prior = cfg.prior_spec();
    let pol = PolicyConfig {
        policy,
        seed,
        ..cfg.policy.clone()
    };
    let mut rng = rng_from_seed(policy_stream(policy, seed));
    let outcome = run_policy(env, &prior, &cfg.sgld, &pol, &mut rng)
        .map_err(|e| e.to_string())
        .and_then(|trace| {
            let rows = if cfg.report.attempts || cfg.report.dropoffs {
                trace_metrics(cfg, env, &trace, seed).map_err(|e| e.to_string())?
            } else {
                Vec::new()
            };
            Ok((trace, rows))
        });
    RunRecord {
        policy,
        seed,
        outcome,
    }
}

/// Runs every policy × seed without writing anything. Records are sorted by
/// policy name, then seed.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, ExperimentError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.n_seeds).map(|k| run_seed(cfg, k)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let envs: Vec<RewardMatrix> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| env_for_seed(&cfg.env, s).map(|e| e.matrix))
            .collect::<Result<_, _>>()
    })?;
    let jobs: Vec<(usize, PolicyKind)> = (0..seeds.len())
        .flat_map(|k| cfg.policies.iter().map(move |&p| (k, p)))
        .collect();
    let mut records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, p)| run_one(cfg, &envs[k], p, seeds[k]))
            .collect()
    });
    records.sort_by(|a, b| a.policy.name().cmp(b.policy.name()).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

/// Long-format regret CSV with summary rows (`seed` = mean or median) after
/// each policy's runs. A failed run contributes one row with `round` = `failed`
/// and empty numeric cells.
pub fn regret_csv(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REGRET_HEADER)?;
    let mut by_policy: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_policy.entry(r.policy.name()).or_default().push(r);
    }
    for (name, runs) in by_policy {
        let mut per_round: BTreeMap<usize, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in runs {
            let seed = r.seed.to_string();
            match &r.outcome {
                Ok((trace, _)) => {
                    for s in &trace.rounds {
                        w.write_record([
                            name,
                            &seed,
                            &s.round.to_string(),
                            &num(s.inst_regret),
                            &num(s.cum_regret),
                            &s.n_obs.to_string(),
                        ])?;
                        let e = per_round.entry(s.round).or_default();
                        e.0.push(s.inst_regret);
                        e.1.push(s.cum_regret);
                        e.2.push(s.n_obs as f64);
                    }
                }
                Err(_) => w.write_record([name, &seed, "failed", "", "", ""])?,
            }
        }
        for (round, (mut inst, mut cum, mut n_obs)) in per_round {
            w.write_record([
                name,
                cfg.summary.name(),
                &round.to_string(),
                &num(cfg.summary.apply(&mut inst)),
                &num(cfg.summary.apply(&mut cum)),
                &num(cfg.summary.apply(&mut n_obs)),
            ])?;
        }
    }
    w.into_inner().map_err(|e| ExperimentError::Pool(e.to_string()))
}

/// Metrics CSV with summary rows per policy and bucket.
pub fn metrics_csv(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    let mut by_policy: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_policy.entry(r.policy.name()).or_default().push(r);
    }
    for (name, runs) in by_policy {
        let mut per_bucket: BTreeMap<String, [Vec<f64>; 4]> = BTreeMap::new();
        for r in runs {
            let seed = r.seed.to_string();
            match &r.outcome {
                Ok((_, rows)) => {
                    for m in rows {
                        w.write_record([
                            name,
                            &seed,
                            &m.bucket,
                            &num(m.mean_attempts),
                            &num(m.connect_rate),
                            &num(m.dropoff_rate),
                            &num(m.rel_random_pct),
                        ])?;
                        let e = per_bucket.entry(m.bucket.clone()).or_default();
                        e[0].push(m.mean_attempts);
                        e[1].push(m.connect_rate);
                        e[2].push(m.dropoff_rate);
                        e[3].push(m.rel_random_pct);
                    }
                }
                Err(_) => w.write_record([name, &seed, "failed", "", "", "", ""])?,
            }
        }
        for (bucket, mut v) in per_bucket {
            let cells: Vec<String> = v.iter_mut().map(|x| num(cfg.summary.apply(x))).collect();
            w.write_record([name, cfg.summary.name(), &bucket, &cells[0], &cells[1], &cells[2], &cells[3]])?;
        }
    }
    w.into_inner().map_err(|e| ExperimentError::Pool(e.to_string()))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    software: &'a str,
    version: &'a str,
    config: String,
    wall_time_secs: f64,
    runs: usize,
    failures: Vec<String>,
    outputs: Vec<String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_RUNTIME
        }
    }
}

/// Runs the sweep and writes `regret.csv`, `metrics.csv` and `manifest.json`
/// into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let start = Instant::now();
    let records = run_all(cfg)?;
    let failures: Vec<String> = records
        .iter()
        .filter_map(|r| match &r.outcome {
            Err(e) => Some(format!("{} seed {}: {e}", r.policy, r.seed)),
            Ok(_) => None,
        })
        .collect();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    if cfg.report.regret {
        let path = dir.join("regret.csv");
        fs::write(&path, regret_csv(cfg, &records)?).map_err(io_err(&path))?;
        files.push(path);
    }
    if cfg.report.attempts || cfg.report.dropoffs {
        let path = dir.join("metrics.csv");
        fs::write(&path, metrics_csv(cfg, &records)?).map_err(io_err(&path))?;
        files.push(path);
    }
    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.to_text(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        runs: records.len(),
        failures: failures.clone(),
        outputs: files.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    files.push(path);
    Ok(ExperimentOutcome {
        records,
        failures,
        files,
    })
}

/// Writes the environment for seed index 0 to `out/env.txt`.
pub fn write_env(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    cfg.validate()?;
    let env = env_for_seed(&cfg.env, run_seed(cfg, 0))?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("env.txt");
    fs::write(&path, env.to_text()).map_err(io_err(&path))?;
    Ok(path)
}

/// Bucket of every user of the seed-0 environment, written to `out/buckets.csv`;
/// returns `[low, mid, high]` counts.
pub fn write_buckets(cfg: &ExperimentConfig, out: &Path) -> Result<[usize; 3], ExperimentError> {
    cfg.validate()?;
    let env = env_for_seed(&cfg.env, run_seed(cfg, 0))?.matrix;
    let buckets = bucket_users(&env);
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["user", "bucket", "best_pickup"])?;
    for (u, b) in buckets.iter().enumerate() {
        w.write_record([u.to_string(), b.to_string(), num(env.best_value(u))])?;
    }
    let path = out.join("buckets.csv");
    let bytes = w.into_inner().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(bucket_counts(&buckets))
}

#[derive(Debug)]
pub struct EluderCheck {
    pub reports: Vec<EluderReport>,
}

impl EluderCheck {
    /// 3 if an exhaustive search ran out of budget, else 1 on any violation, else 0.
    pub fn exit_code(&self) -> i32 {
        if self
            .reports
            .iter()
            .any(|r| r.result.partial && r.case.mode == SearchMode::Exhaustive)
        {
            EXIT_INCONCLUSIVE
        } else if self.reports.iter().all(EluderReport::passed) {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("C N D mode hypotheses length bound eps_prime verified partial pass\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {}\n",
                r.case.c,
                r.case.n,
                r.case.d,
                match r.case.mode {
                    SearchMode::Exhaustive => "exhaustive",
                    SearchMode::GreedyDfs => "greedy_dfs",
                },
                r.case.sampled.map_or("grid".to_string(), |k| format!("sampled:{k}")),
                r.result.length,
                r.bound,
                r.result.eps_prime,
                r.verified,
                r.result.partial,
                if r.passed() { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Bound-compliance suite with a custom bound (normally [`bound_finite`]).
pub fn eluder_check_with<B>(cfg: &ExperimentConfig, bound: B) -> Result<EluderCheck, ExperimentError>
where
    B: Fn(usize, usize, usize) -> usize,
{
    let mut rng = rng_from_seed(derive_seed(cfg.seed_base, 0xe1d));
    let cases = default_cases(cfg.eluder.greedy_samples);
    let reports = run_cases(&cases, cfg.eluder.eps, cfg.eluder.budget, bound, &mut rng)?;
    Ok(EluderCheck { reports })
}

pub fn eluder_check(cfg: &ExperimentConfig) -> Result<EluderCheck, ExperimentError> {
    eluder_check_with(cfg, bound_finite)
}
