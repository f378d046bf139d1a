//! Enrolls 20 users into a model trained on 200 and compares warm and cold starts.

use ts_sgld::bandit::{enroll_new_users, run_ts_sgld, EnrollMode, PolicyConfig, PolicyKind, Sampling};
use ts_sgld::env::{EnvKind, EnvSpec, Environment};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{PriorSpec, SgldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Environment::generate(&EnvSpec { n_users: 220, n_arms: 20, rank: 5, kind: EnvKind::Cluster, ..EnvSpec::default() })?.matrix;
    let existing = env.select_users(&(0..200).collect::<Vec<_>>())?;
    let prior = PriorSpec::default_for(200, 5, 20);
    let sgld = SgldConfig::default();
    let pol = PolicyConfig { policy: PolicyKind::TsSgldFull, rounds: 10, samples_per_step: 1000, ..PolicyConfig::default() };
    let trained = run_ts_sgld(&existing, &prior, &sgld, &pol, Sampling::Full, &mut rng_from_seed(1))?
        .final_params
        .expect("TS keeps its parameters");
    let new_pol = PolicyConfig { rounds: 5, ..pol };
    for mode in [EnrollMode::Warm, EnrollMode::Cold] {
        let trace = enroll_new_users(&trained, 20, mode, &env, &prior, &sgld, &new_pol, Sampling::Full, &mut rng_from_seed(2))?;
        let per_round: Vec<String> = trace.rounds.iter().map(|r| format!("{:.1}", r.inst_regret)).collect();
        println!("{mode:?}: regret per round [{}], total {:.1}", per_round.join(", "), trace.cum_regret());
    }
    Ok(())
}
