//! Generates one environment of each kind and prints its shape and spectrum.

use ts_sgld::env::{spectrum_ratios, EnvKind, EnvSpec, Environment};
use ts_sgld::metrics::{bucket_counts, bucket_users};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = [
        EnvSpec { n_users: 1000, n_arms: 20, rank: 4, kind: EnvKind::LowRank, ..EnvSpec::default() },
        EnvSpec { n_users: 1000, n_arms: 20, rank: 5, kind: EnvKind::Cluster, ..EnvSpec::default() },
        EnvSpec { n_users: 1000, n_arms: 7, rank: 4, kind: EnvKind::SpectrumMatched, ..EnvSpec::default() },
    ];
    for spec in specs {
        let env = Environment::generate(&spec)?;
        let m = env.matrix.values();
        let (top, tail) = spectrum_ratios(m);
        let [low, mid, high] = bucket_counts(&bucket_users(&env.matrix));
        println!(
            "{:<16} {}x{}  mean {:.3}  s1/s2 {top:.2}  smin/s2 {tail:.2}  buckets low {low} mid {mid} high {high}",
            spec.kind.to_string(),
            m.nrows(),
            m.ncols(),
            m.mean()
        );
    }
    Ok(())
}
