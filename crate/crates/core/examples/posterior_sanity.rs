//! One user, one arm, 30 successes in 50 calls: the SGLD chain should settle
//! around the Beta(30, 20) mean of 0.6.

use nalgebra::DMatrix;
use ts_sgld::bandit::{Observation, ObservationLog};
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{cluster_success_prob, run_full_sampling_with, LatentParams, PriorSpec, SgldConfig, UpdateMask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut log = ObservationLog::new(1, 1);
    for i in 0..50 {
        log.push(Observation { round: 0, user: 0, arm: 0, reward: u8::from(i < 30) })?;
    }
    let cfg = SgldConfig { step_size: 0.05, batch_size: 50, iters_per_round: 20_000, ..SgldConfig::default() };
    let init = LatentParams::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1))?;
    let mut draws = Vec::new();
    run_full_sampling_with(&log, &PriorSpec::flat(1, 1, 1), &cfg, &init, &UpdateMask::all(), &mut rng_from_seed(3), |i, p| {
        if i >= 2000 {
            draws.push(cluster_success_prob(p.v[(0, 0)]));
        }
    })?;
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
    let beta_sd = (30.0 * 20.0 / (50.0f64.powi(2) * 51.0)).sqrt();
    println!("chain mean {mean:.4} sd {sd:.4}; Beta(30,20) mean 0.6000 sd {beta_sd:.4}");
    Ok(())
}
