//! Alternating SGLD with different block counts on the same data.

use std::time::Instant;

use rand::Rng;
use ts_sgld::bandit::{Observation, ObservationLog};
use ts_sgld::env::{sample_reward, EnvSpec, Environment};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{materialize, run_alternating_sampling, LatentParams, PriorSpec, SgldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Environment::generate(&EnvSpec { n_users: 400, n_arms: 10, rank: 3, ..EnvSpec::default() })?.matrix;
    let mut rng = rng_from_seed(2);
    let mut log = ObservationLog::new(400, 10);
    for _ in 0..40_000 {
        let (u, j) = (rng.random_range(0..400), rng.random_range(0..10));
        log.push(Observation { round: 0, user: u, arm: j, reward: sample_reward(env.get(u, j), &mut rng)? })?;
    }
    let prior = PriorSpec::default_for(400, 3, 10);
    let init = LatentParams::init_gaussian(400, 3, 10, &mut rng);
    for blocks in [1, 2, 4, 8] {
        let cfg = SgldConfig { n_blocks: blocks, iters_per_round: 500, ..SgldConfig::default() };
        let start = Instant::now();
        let out = run_alternating_sampling(&log, &prior, &cfg, &init, &mut rng_from_seed(5))?;
        let rmse = (materialize(&out).p - env.values()).norm() / (4000f64).sqrt();
        println!("{blocks} blocks: rmse to truth {rmse:.4} in {:.2}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
