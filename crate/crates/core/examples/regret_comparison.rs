//! Cumulative regret of every policy on one low-rank environment.

use ts_sgld::bandit::{run_policy, PolicyConfig, PolicyKind};
use ts_sgld::env::{EnvSpec, Environment};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{PriorSpec, SgldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec { n_users: 200, n_arms: 20, rank: 4, ..EnvSpec::default() };
    let env = Environment::generate(&spec)?.matrix;
    let prior = PriorSpec::default_for(200, 4, 20);
    let sgld = SgldConfig::default();
    for policy in PolicyKind::ALL {
        let pol = PolicyConfig { policy, rounds: 20, samples_per_step: 1000, ..PolicyConfig::default() };
        let trace = run_policy(&env, &prior, &sgld, &pol, &mut rng_from_seed(1))?;
        let curve: Vec<String> = [4, 9, 14, 19].iter().map(|&t| format!("{:.0}", trace.cum_regret_at(t))).collect();
        println!("{:<20} rounds 5/10/15/20: {}", policy.name(), curve.join(" / "));
    }
    Ok(())
}
