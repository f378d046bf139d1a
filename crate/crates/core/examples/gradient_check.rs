//! Compares the analytic likelihood gradient with central finite differences.

use rand::Rng;
use ts_sgld::bandit::Observation;
use ts_sgld::rng::rng_from_seed;
use ts_sgld::sgld::{grad_log_likelihood, mixture_likelihood, LatentParams};

fn log_lik(p: &LatentParams, data: &[Observation]) -> f64 {
    data.iter()
        .map(|o| {
            let u: Vec<f64> = p.u.row(o.user).iter().copied().collect();
            let v: Vec<f64> = p.v.column(o.arm).iter().copied().collect();
            mixture_likelihood(o.reward, &u, &v).ln()
        })
        .sum()
}

fn main() {
    let mut rng = rng_from_seed(1);
    let (n, c, m) = (4, 3, 5);
    let params = LatentParams::init_gaussian(n, c, m, &mut rng);
    let params = LatentParams::new(params.u * 20.0, params.v * 20.0).unwrap();
    let data: Vec<Observation> = (0..40)
        .map(|_| Observation {
            round: 0,
            user: rng.random_range(0..n),
            arm: rng.random_range(0..m),
            reward: rng.random_range(0..2),
        })
        .collect();
    let g = grad_log_likelihood(&params, &data).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, k) in (0..n).flat_map(|i| (0..c).map(move |k| (i, k))) {
        let (mut up, mut dn) = (params.clone(), params.clone());
        up.u[(i, k)] += h;
        dn.u[(i, k)] -= h;
        let fd = (log_lik(&up, &data) - log_lik(&dn, &data)) / (2.0 * h);
        worst = worst.max((fd - g.du[(i, k)]).abs() / fd.abs().max(1e-8));
    }
    for (k, j) in (0..c).flat_map(|k| (0..m).map(move |j| (k, j))) {
        let (mut up, mut dn) = (params.clone(), params.clone());
        up.v[(k, j)] += h;
        dn.v[(k, j)] -= h;
        let fd = (log_lik(&up, &data) - log_lik(&dn, &data)) / (2.0 * h);
        worst = worst.max((fd - g.dv[(k, j)]).abs() / fd.abs().max(1e-8));
    }
    println!("largest relative error over {} coordinates: {worst:.2e}", n * c + c * m);
}
