//! Longest eluder sequences on tiny cluster instances against the finite-arm
//! bound, plus a sphere-action probe of the infinite-arm trend.

use ts_sgld::eluder::{
    bound_finite, bound_infinite, default_cases, longest_eluder_sequence, run_cases,
    sample_hypotheses, sphere_actions, SearchMode, REWARD_GRID,
};
use ts_sgld::rng::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(0);
    for r in run_cases(&default_cases(300), 0.1, 1_000_000, bound_finite, &mut rng)? {
        println!(
            "C={} N={} D={} {:?}: length {} <= {} ({} nodes)",
            r.case.c, r.case.n, r.case.d, r.case.mode, r.result.length, r.bound, r.result.nodes
        );
    }
    for d in 1..=3 {
        let hyps = sample_hypotheses(2, 2, d, &REWARD_GRID, 60, &mut rng);
        let actions = sphere_actions(2, d, 1.0, 4, &mut rng);
        let r = longest_eluder_sequence(&hyps, &actions, 0.1, SearchMode::GreedyDfs, 200_000)?;
        println!("sphere actions D={d}: length {} vs trend {:.1}", r.length, bound_infinite(2, 2, d, 1.0, 0.1));
    }
    Ok(())
}
