use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use ts_sgld::bandit::PolicyKind;
use ts_sgld::config::{ExperimentConfig, Summary};
use ts_sgld::env::EnvKind;
use ts_sgld::experiment::{run_experiment, EXIT_CHECK_FAILED, EXIT_INCONCLUSIVE, EXIT_OK, EXIT_RUNTIME};
use ts_sgld::metrics::RetryPolicy;
use ts_sgld::sgld::PriorSign;

const TINY: &str = "env.n_users=12\nenv.n_arms=4\nenv.rank=2\npolicy.rounds=3\npolicy.samples_per_step=12\n\
                    sgld.iters_per_round=5\nsgld.batch_size=20\ndropoff.weeks=3\n";

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ts-sgld")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn numeric_cells_are_finite(csv: &str) -> bool {
    csv.lines().skip(1).all(|line| {
        line.split(',')
            .skip(3)
            .all(|cell| cell.is_empty() || cell.parse::<f64>().is_ok_and(f64::is_finite))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn echoed_config_parses_back(
        n_users in 4usize..500,
        n_arms in 4usize..30,
        rank in 1usize..4,
        kind in 0usize..2,
        step in 1e-5f64..1.0,
        lambda in 0.0f64..5.0,
        sign in any::<bool>(),
        policies in prop::sample::subsequence(PolicyKind::ALL.to_vec(), 1..=5),
        n_seeds in 1usize..20,
        seed_base in any::<u64>(),
        median in any::<bool>(),
        resample in any::<bool>(),
        regret in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.env.n_users = n_users;
        cfg.env.n_arms = n_arms;
        cfg.env.rank = rank;
        cfg.env.kind = [EnvKind::LowRank, EnvKind::Cluster][kind];
        cfg.sgld.step_size = step;
        cfg.prior.lambda = lambda;
        cfg.prior.sign = if sign { PriorSign::AsWritten } else { PriorSign::StandardExponential };
        cfg.policies = policies;
        cfg.n_seeds = n_seeds;
        cfg.seed_base = seed_base;
        cfg.summary = if median { Summary::Median } else { Summary::Mean };
        cfg.metrics.attempts.retry_policy = if resample { RetryPolicy::PolicyResample } else { RetryPolicy::SameSlot };
        cfg.report.regret = regret;
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

#[test]
fn figure_scale_keys_parse_with_defaults_elsewhere() {
    let cfg = ExperimentConfig::parse("env.n_users=1000\nenv.n_arms=20\nenv.rank=4").unwrap();
    assert_eq!((cfg.env.n_users, cfg.env.n_arms, cfg.env.rank), (1000, 20, 4));
    let d = ExperimentConfig::default();
    assert_eq!(cfg.sgld, d.sgld);
    assert_eq!(cfg.policy, d.policy);
}

#[test]
fn fifteen_seeds_five_policies_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.n_seeds = 15;
    cfg.workers = 4;
    cfg.output_dir = dir.path().to_path_buf();
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.exit_code(), EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 15 * 5 * 3 + 5 * 3);
    assert!(numeric_cells_are_finite(&csv));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let echoed = ExperimentConfig::parse(manifest["config"].as_str().unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn rerun_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{TINY}run.n_seeds=3\n"));
    let read = |sub: &str, file: &str| std::fs::read(dir.path().join(sub).join(file)).unwrap();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub).display().to_string();
        assert_eq!(cli(&["run", "--config", &config, "--out", &out, "--workers", "3"]).0, EXIT_OK);
    }
    for file in ["regret.csv", "metrics.csv"] {
        assert_eq!(read("a", file), read("b", file), "{file} differs");
    }
    let metrics = String::from_utf8(read("a", "metrics.csv")).unwrap();
    assert!(numeric_cells_are_finite(&metrics));
}

#[test]
fn divergence_becomes_status_rows_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{TINY}sgld.step_size=1e308\npolicy.list=ts_sgld_full,oracle\n"));
    let out = dir.path().join("o").display().to_string();
    let (code, _, stderr) = cli(&["run", "--config", &config, "--out", &out]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(stderr.contains("ts_sgld_full"), "{stderr}");
    let csv = std::fs::read_to_string(dir.path().join("o/regret.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "ts_sgld_full,0,failed,,,"));
    assert!(numeric_cells_are_finite(&csv));
    assert!(!csv.contains("NaN") && !csv.contains("inf"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let bad = write_config(dir.path(), "env.rank=0\n");
    assert_eq!(cli(&["run", "--config", &bad, "--out", &out]).0, EXIT_CHECK_FAILED);
    let unknown = write_config(dir.path(), "env.colour=red\n");
    let (code, _, stderr) = cli(&["gen-env", "--config", &unknown, "--out", &out]);
    assert_eq!(code, EXIT_CHECK_FAILED);
    assert!(stderr.contains("env.colour"));
    let tiny_budget = write_config(dir.path(), "eluder.budget=1\n");
    assert_eq!(cli(&["eluder-check", "--config", &tiny_budget, "--out", &out]).0, EXIT_INCONCLUSIVE);
    let quick = write_config(dir.path(), "eluder.greedy_samples=30\n");
    assert_eq!(cli(&["eluder-check", "--config", &quick, "--out", &out]).0, EXIT_OK);
    let (code, stdout, _) = cli(&["buckets", "--out", &out, "--seed-base", "7"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("mid"));
    assert_eq!(cli(&["gen-env", "--config", &write_config(dir.path(), TINY), "--out", &out]).0, EXIT_OK);
    let env = ts_sgld::env::Environment::from_text(&std::fs::read_to_string(dir.path().join("env.txt")).unwrap()).unwrap();
    assert_eq!(env.matrix.n_users(), 12);
}
