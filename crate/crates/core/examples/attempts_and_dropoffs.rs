//! Call attempts and dropoffs under TS-SGLD and random slots on a
//! spectrum-matched 500 x 7 environment.

use ts_sgld::bandit::{run_random, run_ts_sgld, PolicyConfig, PolicyKind, Sampling};
use ts_sgld::env::{EnvKind, EnvSpec, Environment};
use ts_sgld::metrics::{
    bucket_users, expected_attempts, listen_propensity, random_slot_attempts, simulate_dropoffs,
    weekly_engagement, AttemptModel, Bucket, DropoffRule,
};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{PriorSpec, SgldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec { n_users: 500, n_arms: 7, rank: 4, kind: EnvKind::SpectrumMatched, ..EnvSpec::default() };
    let env = Environment::generate(&spec)?.matrix;
    let model = AttemptModel::default();
    let mut rng = rng_from_seed(4);
    let pol = PolicyConfig { policy: PolicyKind::TsSgldFull, rounds: 16, samples_per_step: 500, ..PolicyConfig::default() };
    let ts = run_ts_sgld(&env, &PriorSpec::default_for(500, 4, 7), &SgldConfig::default(), &pol, Sampling::Full, &mut rng)?;
    let random = run_random(&env, &PolicyConfig { policy: PolicyKind::Random, ..pol }, &mut rng)?;

    let p = ts.final_p.as_ref().expect("more than one round");
    let buckets = bucket_users(&env);
    let mid: Vec<usize> = (0..500).filter(|&u| buckets[u] == Bucket::Mid).collect();
    let mut ts_attempts = 0.0;
    for &u in &mid {
        let slot = (0..7).max_by(|&a, &b| p[(u, a)].total_cmp(&p[(u, b)])).unwrap();
        ts_attempts += expected_attempts(env.get(u, slot), &model)?.attempts / mid.len() as f64;
    }
    let random_attempts = random_slot_attempts(&mid, &env, &model)?;
    println!("mid bucket ({} users): TS {ts_attempts:.2} attempts, random {random_attempts:.2}", mid.len());

    let listen = listen_propensity(500, 8.0, 2.0, &mut rng)?;
    for (name, trace) in [("ts_sgld_full", &ts), ("random", &random)] {
        let weekly = weekly_engagement(trace, &env, &listen, &model, 16, &mut rng)?;
        let out = simulate_dropoffs(&weekly, &DropoffRule::default())?;
        println!("{name:<13} dropoff rate over 16 weeks {:.3}", out.dropoff_rate);
    }
    Ok(())
}
