//! Runs a small sweep from config text and prints the output files.
//! Usage: cargo run --example experiment_from_config [OUT_DIR]

use ts_sgld::config::ExperimentConfig;
use ts_sgld::experiment::run_experiment;

const CONFIG: &str = "
env.n_users=100
env.n_arms=10
env.rank=3
policy.rounds=10
policy.samples_per_step=200
run.n_seeds=3
run.workers=3
dropoff.weeks=10
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::parse(CONFIG)?;
    cfg.output_dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ts-sgld-example"), Into::into);
    let outcome = run_experiment(&cfg)?;
    for path in &outcome.files {
        println!("wrote {}", path.display());
    }
    let regret = std::fs::read_to_string(cfg.output_dir.join("regret.csv"))?;
    for line in regret.lines().filter(|l| l.contains(",mean,9,")) {
        println!("{line}");
    }
    Ok(())
}
