//! Learns pickup and engagement jointly and picks slots by engagement.

use ts_sgld::bandit::{run_ts_sgld_layout, ArmLayout, PolicyConfig, PolicyKind, Sampling};
use ts_sgld::env::{EnvKind, EnvSpec, Environment};
use ts_sgld::metrics::{combine_pickup_engagement, engagement_matrix, listen_propensity};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{PriorSpec, SgldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec { n_users: 300, n_arms: 7, rank: 4, kind: EnvKind::SpectrumMatched, ..EnvSpec::default() };
    let pickup = Environment::generate(&spec)?.matrix;
    let mut rng = rng_from_seed(9);
    let listen = listen_propensity(300, 8.0, 2.0, &mut rng)?;
    let both = combine_pickup_engagement(&pickup, &engagement_matrix(&pickup, &listen)?)?;
    let pol = PolicyConfig { policy: PolicyKind::TsSgldFull, rounds: 15, samples_per_step: 300, ..PolicyConfig::default() };
    let trace = run_ts_sgld_layout(
        &both,
        ArmLayout::PickupEngagement { n_slots: 7 },
        &PriorSpec::default_for(300, 4, 14),
        &SgldConfig::default(),
        &pol,
        Sampling::Full,
        &mut rng,
    )?;
    println!("{} observations logged over {} rounds", trace.log.len(), trace.rounds.len());
    for r in trace.rounds.iter().step_by(3) {
        println!("round {:>2}: engagement regret {:.2}", r.round, r.inst_regret);
    }
    Ok(())
}
