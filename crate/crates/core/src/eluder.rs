//! Empirical probe of the Eluder dimension of clustered linear bandits.
//!
//! A hypothesis `h = (c, R)` assigns each of `N` users to one of `C` clusters
//! and gives each cluster a reward row in `R^D`; the mean reward of action `a`
//! for user `u` is `R[c(u), :]·a`. On a finite hypothesis set and a finite
//! candidate action list, [`longest_eluder_sequence`] searches for the longest
//! sequence whose every element is ε′-independent of its predecessors.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum EluderError {
    #[error("empty hypothesis set")]
    NoHypotheses,
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHypothesis {
    /// Cluster of each user.
    pub assignment: Vec<usize>,
    /// `C × D` reward rows.
    pub rewards: DMatrix<f64>,
}

impl ClusterHypothesis {
    pub fn new(assignment: Vec<usize>, rewards: DMatrix<f64>) -> Result<Self, EluderError> {
        if let Some(&c) = assignment.iter().find(|&&c| c >= rewards.nrows()) {
            return Err(EluderError::Dimension(format!(
                "cluster {c} but only {} reward rows",
                rewards.nrows()
            )));
        }
        Ok(Self {
            assignment,
            rewards,
        })
    }

    /// Largest Euclidean norm of a reward row.
    pub fn max_row_norm(&self) -> f64 {
        self.rewards
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionQuery {
    pub user: usize,
    pub action: DVector<f64>,
}

impl ActionQuery {
    /// Indicator action `e_arm` in `d` dimensions.
    pub fn indicator(user: usize, arm: usize, d: usize) -> Self {
        let mut action = DVector::zeros(d);
        action[arm] = 1.0;
        Self { user, action }
    }
}

/// Noiseless mean reward `R[c(user), :]·action`.
pub fn reward_of(h: &ClusterHypothesis, q: &ActionQuery) -> f64 {
    let row = h.rewards.row(h.assignment[q.user]);
    row.iter().zip(q.action.iter()).map(|(r, a)| r * a).sum()
}

/// True iff every pair of hypotheses within `eps` on `prefix` (Euclidean
/// norm of reward differences) also differs by at most `eps` at `q`.
pub fn is_eps_dependent(
    q: &ActionQuery,
    prefix: &[ActionQuery],
    hypotheses: &[ClusterHypothesis],
    eps: f64,
) -> Result<bool, EluderError> {
    if hypotheses.is_empty() {
        return Err(EluderError::NoHypotheses);
    }
    let at_q: Vec<f64> = hypotheses.iter().map(|h| reward_of(h, q)).collect();
    let on_prefix: Vec<Vec<f64>> = hypotheses
        .iter()
        .map(|h| prefix.iter().map(|p| reward_of(h, p)).collect())
        .collect();
    for i in 0..hypotheses.len() {
        for j in i + 1..hypotheses.len() {
            let d2: f64 = on_prefix[i]
                .iter()
                .zip(&on_prefix[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2.sqrt() <= eps && (at_q[i] - at_q[j]).abs() > eps {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// True maximum over orderings of the candidates, per ε′ on the grid.
    Exhaustive,
    /// Depth-first search that tries the most separating action first and
    /// reports the longest sequence found within the budget.
    GreedyDfs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EluderResult {
    pub length: usize,
    /// Indices into the candidate list.
    pub sequence: Vec<usize>,
    /// Scale at which the sequence is independent.
    pub eps_prime: f64,
    /// Exhaustive search ran out of budget; `length` is then a lower bound.
    pub partial: bool,
    pub nodes: u64,
}

/// Scales `eps · 2^k` strictly below `diameter`, or just `[eps]` if none.
pub fn eps_grid(eps: f64, diameter: f64) -> Vec<f64> {
    let mut grid = vec![eps];
    let mut e = 2.0 * eps;
    while e < diameter {
        grid.push(e);
        e *= 2.0;
    }
    grid
}

/// Unordered hypothesis pairs that disagree somewhere on the candidates, with
/// their per-candidate reward differences.
struct PairTable {
    diffs: Vec<Vec<f64>>,
}

impl PairTable {
    fn new(hypotheses: &[ClusterHypothesis], candidates: &[ActionQuery]) -> Self {
        let values: Vec<Vec<f64>> = hypotheses
            .iter()
            .map(|h| candidates.iter().map(|q| reward_of(h, q)).collect())
            .collect();
        let mut diffs = Vec::new();
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                let d: Vec<f64> = values[i].iter().zip(&values[j]).map(|(a, b)| a - b).collect();
                if d.iter().any(|x| *x != 0.0) {
                    diffs.push(d);
                }
            }
        }
        Self { diffs }
    }

    fn diameter(&self) -> f64 {
        self.diffs
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Pairs within `eps` on the prefix (given squared distances) that differ by
    /// more than `eps` at candidate `a`.
    fn separating(&self, dist2: &[f64], a: usize, eps: f64) -> usize {
        let e2 = eps * eps;
        self.diffs
            .iter()
            .zip(dist2)
            .filter(|(d, &s)| s <= e2 && d[a].abs() > eps)
            .count()
    }
}

struct Search<'a> {
    table: &'a PairTable,
    n_candidates: usize,
    eps: f64,
    mode: SearchMode,
    budget: u64,
    nodes: u64,
    seen: HashSet<u64>,
    best: Vec<usize>,
    stack: Vec<usize>,
    exhausted: bool,
}

impl Search<'_> {
    fn run(&mut self, used: u64, dist2: &[f64]) {
        if self.nodes >= self.budget {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        if !self.seen.insert(used) {
            return;
        }
        if self.stack.len() > self.best.len() {
            self.best = self.stack.clone();
        }
        let remaining = self.n_candidates - used.count_ones() as usize;
        if self.mode == SearchMode::Exhaustive && self.stack.len() + remaining <= self.best.len() {
            return;
        }
        let mut children: Vec<(usize, usize)> = (0..self.n_candidates)
            .filter(|&a| used & (1 << a) == 0)
            .map(|a| (a, self.table.separating(dist2, a, self.eps)))
            .filter(|&(_, s)| s > 0)
            .collect();
        if self.mode == SearchMode::GreedyDfs {
            children.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        }
        for (a, _) in children {
            let next: Vec<f64> = self
                .table
                .diffs
                .iter()
                .zip(dist2)
                .map(|(d, s)| s + d[a] * d[a])
                .collect();
            self.stack.push(a);
            self.run(used | (1 << a), &next);
            self.stack.pop();
            if self.exhausted {
                return;
            }
        }
    }
}

/// Longest sequence of distinct candidates, each ε′-independent of its
/// predecessors, maximized over ε′ on [`eps_grid`]. At most 64 candidates.
pub fn longest_eluder_sequence(
    hypotheses: &[ClusterHypothesis],
    candidates: &[ActionQuery],
    eps: f64,
    mode: SearchMode,
    budget: u64,
) -> Result<EluderResult, EluderError> {
    if hypotheses.is_empty() {
        return Err(EluderError::NoHypotheses);
    }
    if !(eps > 0.0) {
        return Err(EluderError::Invalid("eps must be > 0".into()));
    }
    if budget == 0 {
        return Err(EluderError::Invalid("budget must be >= 1".into()));
    }
    if candidates.len() > 64 {
        return Err(EluderError::Invalid("at most 64 candidate actions".into()));
    }
    let table = PairTable::new(hypotheses, candidates);
    let mut result = EluderResult {
        length: 0,
        sequence: Vec::new(),
        eps_prime: eps,
        partial: false,
        nodes: 0,
    };
    for eps_prime in eps_grid(eps, table.diameter()) {
        let mut search = Search {
            table: &table,
            n_candidates: candidates.len(),
            eps: eps_prime,
            mode,
            budget: budget - result.nodes,
            nodes: 0,
            seen: HashSet::new(),
            best: Vec::new(),
            stack: Vec::new(),
            exhausted: false,
        };
        search.run(0, &vec![0.0; table.diffs.len()]);
        result.nodes += search.nodes;
        if search.best.len() > result.length {
            result.length = search.best.len();
            result.sequence = search.best;
            result.eps_prime = eps_prime;
        }
        if search.exhausted {
            result.partial = mode == SearchMode::Exhaustive;
            break;
        }
    }
    Ok(result)
}

/// Re-checks with [`is_eps_dependent`] that every element of `sequence` is
/// `eps_prime`-independent of its predecessors.
pub fn verify_sequence(
    hypotheses: &[ClusterHypothesis],
    candidates: &[ActionQuery],
    sequence: &[usize],
    eps_prime: f64,
) -> Result<bool, EluderError> {
    let queries: Vec<ActionQuery> = sequence.iter().map(|&i| candidates[i].clone()).collect();
    for k in 0..queries.len() {
        if is_eps_dependent(&queries[k], &queries[..k], hypotheses, eps_prime)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `(2D + N)·C`.
pub fn bound_finite(c: usize, n: usize, d: usize) -> usize {
    (2 * d + n) * c
}

/// `2·C·D·ln(1 + 2S/ε²) + C·N`, unit constants.
pub fn bound_infinite(c: usize, n: usize, d: usize, s: f64, eps: f64) -> f64 {
    let (c, n, d) = (c as f64, n as f64, d as f64);
    2.0 * c * d * (1.0 + 2.0 * s / (eps * eps)).ln() + c * n
}

/// Every `(user, e_j)` pair.
pub fn finite_actions(n_users: usize, d: usize) -> Vec<ActionQuery> {
    (0..n_users)
        .flat_map(|u| (0..d).map(move |j| ActionQuery::indicator(u, j, d)))
        .collect()
}

/// `k` actions per user drawn uniformly on the radius-`gamma` sphere, followed
/// by the scaled indicators.
pub fn sphere_actions(n_users: usize, d: usize, gamma: f64, k: usize, rng: &mut SimRng) -> Vec<ActionQuery> {
    let mut out = Vec::new();
    for u in 0..n_users {
        for _ in 0..k {
            let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            let action = if norm > 0.0 { v * (gamma / norm) } else { v };
            out.push(ActionQuery { user: u, action });
        }
        for j in 0..d {
            let mut q = ActionQuery::indicator(u, j, d);
            q.action *= gamma;
            out.push(q);
        }
    }
    out
}

/// All `C^N` assignments times all reward matrices with entries from `values`,
/// keeping one hypothesis per distinct user-by-arm reward table.
pub fn hypothesis_grid(c: usize, n: usize, d: usize, values: &[f64]) -> Vec<ClusterHypothesis> {
    let n_assign = c.pow(n as u32);
    let n_rewards = values.len().pow((c * d) as u32);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in 0..n_rewards {
        let mut code = r;
        let rewards = DMatrix::from_fn(c, d, |_, _| {
            let v = values[code % values.len()];
            code /= values.len();
            v
        });
        for a in 0..n_assign {
            let mut code = a;
            let assignment: Vec<usize> = (0..n)
                .map(|_| {
                    let x = code % c;
                    code /= c;
                    x
                })
                .collect();
            let key: Vec<u64> = assignment
                .iter()
                .flat_map(|&k| rewards.row(k).iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect();
            if seen.insert(key) {
                out.push(ClusterHypothesis {
                    assignment,
                    rewards: rewards.clone(),
                });
            }
        }
    }
    out
}

/// `count` hypotheses with uniform assignments and rewards drawn from `values`.
pub fn sample_hypotheses(
    c: usize,
    n: usize,
    d: usize,
    values: &[f64],
    count: usize,
    rng: &mut SimRng,
) -> Vec<ClusterHypothesis> {
    (0..count)
        .map(|_| ClusterHypothesis {
            assignment: (0..n).map(|_| rng.random_range(0..c)).collect(),
            rewards: DMatrix::from_fn(c, d, |_, _| values[rng.random_range(0..values.len())]),
        })
        .collect()
}

/// One instance of the bound-compliance suite.
#[derive(Debug, Clone, PartialEq)]
pub struct EluderCase {
    pub c: usize,
    pub n: usize,
    pub d: usize,
    pub mode: SearchMode,
    /// `None` uses the full grid; `Some(k)` samples `k` hypotheses.
    pub sampled: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EluderReport {
    pub case: EluderCase,
    pub result: EluderResult,
    pub bound: usize,
    pub verified: bool,
}

impl EluderReport {
    pub fn passed(&self) -> bool {
        self.verified && self.result.length <= self.bound
    }
}

pub const REWARD_GRID: [f64; 3] = [0.0, 0.5, 1.0];

/// Exhaustive cases for every `C, N, D ≤ 2` plus a sampled greedy case at 3.
pub fn default_cases(greedy_samples: usize) -> Vec<EluderCase> {
    let mut cases = Vec::new();
    for c in 1..=2 {
        for n in 1..=2 {
            for d in 1..=2 {
                cases.push(EluderCase {
                    c,
                    n,
                    d,
                    mode: SearchMode::Exhaustive,
                    sampled: None,
                });
            }
        }
    }
    cases.push(EluderCase {
        c: 3,
        n: 3,
        d: 3,
        mode: SearchMode::GreedyDfs,
        sampled: Some(greedy_samples),
    });
    cases
}

/// Runs each case on finite indicator actions. `bound` is normally
/// [`bound_finite`].
pub fn run_cases<B>(
    cases: &[EluderCase],
    eps: f64,
    budget: u64,
    bound: B,
    rng: &mut SimRng,
) -> Result<Vec<EluderReport>, EluderError>
where
    B: Fn(usize, usize, usize) -> usize,
{
    cases
        .iter()
        .map(|case| {
            let hyps = match case.sampled {
                None => hypothesis_grid(case.c, case.n, case.d, &REWARD_GRID),
                Some(k) => sample_hypotheses(case.c, case.n, case.d, &REWARD_GRID, k, rng),
            };
            let actions = finite_actions(case.n, case.d);
            let result = longest_eluder_sequence(&hyps, &actions, eps, case.mode, budget)?;
            let verified = verify_sequence(&hyps, &actions, &result.sequence, result.eps_prime)?;
            Ok(EluderReport {
                case: case.clone(),
                bound: bound(case.c, case.n, case.d),
                result,
                verified,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use nalgebra::dmatrix;

    fn h(assignment: Vec<usize>, rewards: DMatrix<f64>) -> ClusterHypothesis {
        ClusterHypothesis::new(assignment, rewards).unwrap()
    }

    #[test]
    fn reward_examples() {
        let hyp = h(vec![1, 0], dmatrix![0.1, 0.2; 0.7, 0.9]);
        assert_eq!(reward_of(&hyp, &ActionQuery::indicator(0, 1, 2)), 0.9);
        let zero = ActionQuery {
            user: 1,
            action: DVector::zeros(2),
        };
        assert_eq!(reward_of(&hyp, &zero), 0.0);
        let one = h(vec![0, 0, 0], dmatrix![0.3, 0.4]);
        let r: Vec<f64> = (0..3).map(|u| reward_of(&one, &ActionQuery::indicator(u, 1, 2))).collect();
        assert_eq!(r, vec![0.4; 3]);
        assert!(ClusterHypothesis::new(vec![2], dmatrix![0.0; 1.0]).is_err());
    }

    #[test]
    fn dependence_examples() {
        let q = ActionQuery::indicator(0, 0, 1);
        let a = h(vec![0], dmatrix![0.0]);
        let b = h(vec![0], dmatrix![0.2]);
        assert!(!is_eps_dependent(&q, &[], &[a.clone(), b.clone()], 0.1).unwrap());
        assert!(is_eps_dependent(&q, &[], &[a.clone()], 0.1).unwrap());
        assert!(is_eps_dependent(&q, &[q.clone()], &[a, b], 0.1).unwrap());
        assert_eq!(is_eps_dependent(&q, &[], &[], 0.1), Err(EluderError::NoHypotheses));
    }

    #[test]
    fn singleton_class_has_length_zero() {
        let hyps = vec![h(vec![0, 1], dmatrix![0.0, 1.0; 0.5, 0.5])];
        let r = longest_eluder_sequence(&hyps, &finite_actions(2, 2), 0.1, SearchMode::Exhaustive, 1000).unwrap();
        assert_eq!(r.length, 0);
        assert!(!r.partial);
    }

    #[test]
    fn one_differing_entry_gives_length_one() {
        let hyps = vec![
            h(vec![0, 1], dmatrix![0.0, 0.5; 1.0, 0.5]),
            h(vec![0, 1], dmatrix![0.0, 0.5; 1.0, 1.0]),
        ];
        let actions = finite_actions(2, 2);
        let r = longest_eluder_sequence(&hyps, &actions, 0.1, SearchMode::Exhaustive, 1000).unwrap();
        assert_eq!(r.length, 1);
        assert_eq!(r.sequence, vec![3]);
        assert!(verify_sequence(&hyps, &actions, &r.sequence, r.eps_prime).unwrap());
    }

    #[test]
    fn budget_of_one_is_partial() {
        let hyps = hypothesis_grid(2, 2, 2, &REWARD_GRID);
        let r = longest_eluder_sequence(&hyps, &finite_actions(2, 2), 0.1, SearchMode::Exhaustive, 1).unwrap();
        assert!(r.partial);
        let g = longest_eluder_sequence(&hyps, &finite_actions(2, 2), 0.1, SearchMode::GreedyDfs, 1).unwrap();
        assert!(!g.partial);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(bound_finite(2, 2, 2), 12);
        assert_eq!(bound_finite(1, 1, 1), 3);
        assert_eq!(bound_finite(5, 1000, 20), 5200);
        assert!((bound_infinite(1, 4, 1, 1.0, 1.0) - (2.0 * 3f64.ln() + 4.0)).abs() < 1e-12);
        assert!((bound_infinite(2, 3, 1, 1.0, 1e9) - 6.0).abs() < 1e-9);
        let log_term = |d| bound_infinite(2, 3, d, 1.5, 0.2) - 6.0;
        assert!((log_term(4) - 2.0 * log_term(2)).abs() < 1e-12);
    }

    #[test]
    fn grid_counts() {
        assert_eq!(hypothesis_grid(1, 1, 1, &REWARD_GRID).len(), 3);
        // Each of two users independently takes one of 9 rows.
        assert_eq!(hypothesis_grid(2, 2, 2, &REWARD_GRID).len(), 81);
        assert_eq!(eps_grid(0.1, 1.0), vec![0.1, 0.2, 0.4, 0.8]);
        assert_eq!(eps_grid(0.1, 0.05), vec![0.1]);
    }

    #[test]
    fn sphere_actions_have_radius_gamma() {
        let acts = sphere_actions(2, 3, 0.5, 4, &mut rng_from_seed(1));
        assert_eq!(acts.len(), 2 * (4 + 3));
        assert!(acts.iter().all(|q| (q.action.norm() - 0.5).abs() < 1e-12));
    }
}
