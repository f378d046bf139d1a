//! Outcome metrics beyond regret: call attempts under a retry cap, dropoffs
//! under a low-listenership rule, pick-up buckets and combined
//! pick-up/engagement matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use thiserror::Error;

use crate::bandit::RunTrace;
use crate::env::{sample_reward, EnvError, RewardMatrix};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetryPolicy {
    /// Retry at the slot first chosen.
    #[default]
    SameSlot,
    /// After a miss, move to the next slot in the learned ranking.
    PolicyResample,
}

impl fmt::Display for RetryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetryPolicy::SameSlot => "same_slot",
            RetryPolicy::PolicyResample => "policy_resample",
        })
    }
}

impl FromStr for RetryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same_slot" => Ok(RetryPolicy::SameSlot),
            "policy_resample" => Ok(RetryPolicy::PolicyResample),
            other => Err(format!("unknown retry policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptModel {
    pub max_attempts: u32,
    pub retry_policy: RetryPolicy,
}

impl Default for AttemptModel {
    fn default() -> Self {
        Self {
            max_attempts: 9,
            retry_policy: RetryPolicy::SameSlot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptExpectation {
    /// Expected attempts until pickup or the cap.
    pub attempts: f64,
    /// Probability of a pickup within the cap.
    pub p_connect: f64,
    /// False when the call can never connect (`p = 0`).
    pub connected: bool,
}

/// Truncated-geometric expectation at a fixed slot:
/// `E[attempts] = (1 − (1−p)^cap) / p`, `P(connect) = 1 − (1−p)^cap`.
pub fn expected_attempts(p: f64, model: &AttemptModel) -> Result<AttemptExpectation, MetricsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::Domain(p));
    }
    if model.max_attempts == 0 {
        return Err(MetricsError::Invalid("max_attempts must be >= 1".into()));
    }
    let cap = model.max_attempts as i32;
    if p == 0.0 {
        return Ok(AttemptExpectation {
            attempts: f64::from(model.max_attempts),
            p_connect: 0.0,
            connected: false,
        });
    }
    let p_connect = 1.0 - (1.0 - p).powi(cap);
    Ok(AttemptExpectation {
        attempts: p_connect / p,
        p_connect,
        connected: true,
    })
}

/// A placed call: the user and the slot picked for the first attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallSlot {
    pub user: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptSummary {
    pub calls: usize,
    /// Mean attempts over all calls, failed ones counting the full cap.
    pub mean_attempts: f64,
    /// Mean attempts over calls that connected, or `None` if none did.
    pub mean_attempts_connected: Option<f64>,
    pub connect_rate: f64,
}

/// Slot order for retries under `policy_resample`: the chosen slot, then the
/// rest by descending `ranking[user, ·]` (lowest index on ties), repeating.
pub fn retry_order(ranking: &DMatrix<f64>, user: usize, first: usize) -> Vec<usize> {
    let mut rest: Vec<usize> = (0..ranking.ncols()).filter(|&j| j != first).collect();
    rest.sort_by(|&a, &b| ranking[(user, b)].total_cmp(&ranking[(user, a)]).then(a.cmp(&b)));
    std::iter::once(first).chain(rest).collect()
}

/// Monte-Carlo attempts for each call. `ranking` is required for
/// `policy_resample` and ignored otherwise.
pub fn simulate_attempts(
    calls: &[CallSlot],
    env: &RewardMatrix,
    model: &AttemptModel,
    ranking: Option<&DMatrix<f64>>,
    rng: &mut SimRng,
) -> Result<AttemptSummary, MetricsError> {
    if model.max_attempts == 0 {
        return Err(MetricsError::Invalid("max_attempts must be >= 1".into()));
    }
    if let Some(c) = calls.iter().find(|c| c.user >= env.n_users() || c.slot >= env.n_arms()) {
        return Err(MetricsError::Dimension(format!("call ({}, {}) outside env", c.user, c.slot)));
    }
    let ranking = match (model.retry_policy, ranking) {
        (RetryPolicy::SameSlot, _) => None,
        (RetryPolicy::PolicyResample, Some(r)) if r.shape() == env.values().shape() => Some(r),
        (RetryPolicy::PolicyResample, _) => {
            return Err(MetricsError::Dimension(
                "policy_resample needs a ranking matrix shaped like the env".into(),
            ))
        }
    };
    let mut total = 0u64;
    let mut connected = 0usize;
    let mut connected_attempts = 0u64;
    for call in calls {
        let order = ranking.map(|r| retry_order(r, call.user, call.slot));
        let mut done = false;
        let mut k = 0;
        while k < model.max_attempts && !done {
            let slot = match &order {
                Some(o) => o[k as usize % o.len()],
                None => call.slot,
            };
            k += 1;
            done = sample_reward(env.get(call.user, slot), rng)? == 1;
        }
        total += u64::from(k);
        if done {
            connected += 1;
            connected_attempts += u64::from(k);
        }
    }
    let n = calls.len().max(1) as f64;
    Ok(AttemptSummary {
        calls: calls.len(),
        mean_attempts: total as f64 / n,
        mean_attempts_connected: (connected > 0).then(|| connected_attempts as f64 / connected as f64),
        connect_rate: connected as f64 / n,
    })
}

/// Expected attempts per call when every call goes to a uniformly random slot.
pub fn random_slot_attempts(users: &[usize], env: &RewardMatrix, model: &AttemptModel) -> Result<f64, MetricsError> {
    if users.is_empty() {
        return Ok(0.0);
    }
    let m = env.n_arms() as f64;
    let mut total = 0.0;
    for &u in users {
        for j in 0..env.n_arms() {
            total += expected_attempts(env.get(u, j), model)?.attempts / m;
        }
    }
    Ok(total / users.len() as f64)
}

/// `100 · policy / random`, capped at 100.
pub fn rel_random_pct(policy_attempts: f64, random_attempts: f64) -> f64 {
    if random_attempts <= 0.0 {
        return 100.0;
    }
    (100.0 * policy_attempts / random_attempts).min(100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoffRule {
    pub engagement_threshold: f64,
    pub consecutive_weeks: usize,
    pub window_weeks: usize,
    pub window_low_weeks: usize,
}

impl Default for DropoffRule {
    fn default() -> Self {
        Self {
            engagement_threshold: 0.25,
            consecutive_weeks: 6,
            window_weeks: 16,
            window_low_weeks: 9,
        }
    }
}

impl DropoffRule {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.consecutive_weeks == 0 || self.window_weeks == 0 || self.window_low_weeks == 0 {
            return Err(MetricsError::Invalid("dropoff week counts must be >= 1".into()));
        }
        if self.window_low_weeks > self.window_weeks {
            return Err(MetricsError::Invalid("window_low_weeks exceeds window_weeks".into()));
        }
        Ok(())
    }

    /// First week (1-based) at which `weeks` triggers a drop.
    pub fn drop_week(&self, weeks: &[f64]) -> Option<usize> {
        let mut run = 0;
        let mut lows = Vec::with_capacity(weeks.len());
        for (w, &e) in weeks.iter().enumerate() {
            let low = e < self.engagement_threshold;
            lows.push(low);
            run = if low { run + 1 } else { 0 };
            let start = (w + 1).saturating_sub(self.window_weeks);
            let in_window = lows[start..].iter().filter(|&&l| l).count();
            if run >= self.consecutive_weeks || in_window >= self.window_low_weeks {
                return Some(w + 1);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoffOutcome {
    /// 1-based week of the drop per user.
    pub drop_week: Vec<Option<usize>>,
    pub dropoff_rate: f64,
}

/// `weekly_engagement` is users × weeks.
pub fn simulate_dropoffs(weekly_engagement: &DMatrix<f64>, rule: &DropoffRule) -> Result<DropoffOutcome, MetricsError> {
    rule.validate()?;
    if weekly_engagement.ncols() == 0 {
        return Err(MetricsError::Dimension("need at least one week".into()));
    }
    let drop_week: Vec<Option<usize>> = (0..weekly_engagement.nrows())
        .map(|i| {
            let row: Vec<f64> = weekly_engagement.row(i).iter().copied().collect();
            rule.drop_week(&row)
        })
        .collect();
    let dropped = drop_week.iter().filter(|w| w.is_some()).count();
    let dropoff_rate = dropped as f64 / drop_week.len().max(1) as f64;
    Ok(DropoffOutcome {
        drop_week,
        dropoff_rate,
    })
}

/// Per-user listen propensities drawn from `Beta(alpha, beta)`.
pub fn listen_propensity(n_users: usize, alpha: f64, beta: f64, rng: &mut SimRng) -> Result<Vec<f64>, MetricsError> {
    let dist = Beta::new(alpha, beta).map_err(|e| MetricsError::Invalid(e.to_string()))?;
    Ok((0..n_users).map(|_| dist.sample(rng)).collect())
}

/// `pickup[u, j] · listen[u]`.
pub fn engagement_matrix(pickup: &RewardMatrix, listen: &[f64]) -> Result<RewardMatrix, MetricsError> {
    if listen.len() != pickup.n_users() {
        return Err(MetricsError::Dimension(format!(
            "{} propensities for {} users",
            listen.len(),
            pickup.n_users()
        )));
    }
    if let Some(bad) = listen.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(MetricsError::Domain(*bad));
    }
    let values = DMatrix::from_fn(pickup.n_users(), pickup.n_arms(), |i, j| pickup.get(i, j) * listen[i]);
    Ok(RewardMatrix::new(values, pickup.rank_hint())?)
}

/// Users × `weeks` engagement, one round per week.
///
/// Every call in the week is retried at its slot up to the attempt cap; a
/// connected call is listened to with probability `listen[u]`. The weekly
/// value is the fraction of the user's calls that were listened to. A user
/// with no call that week is called once at a uniformly random slot.
pub fn weekly_engagement(
    trace: &RunTrace,
    pickup: &RewardMatrix,
    listen: &[f64],
    model: &AttemptModel,
    weeks: usize,
    rng: &mut SimRng,
) -> Result<DMatrix<f64>, MetricsError> {
    let n = pickup.n_users();
    if trace.log.n_users() != n || trace.log.n_arms() != pickup.n_arms() {
        return Err(MetricsError::Dimension("trace and pickup matrix disagree".into()));
    }
    if listen.len() != n {
        return Err(MetricsError::Dimension(format!("{} propensities for {n} users", listen.len())));
    }
    let mut listened = DMatrix::<f64>::zeros(n, weeks);
    let mut calls = DMatrix::<f64>::zeros(n, weeks);
    let call = |u: usize, slot: usize, rng: &mut SimRng| -> Result<f64, MetricsError> {
        let p = expected_attempts(pickup.get(u, slot), model)?.p_connect;
        let connected = rng.random::<f64>() < p;
        Ok(f64::from(connected && sample_reward(listen[u], rng)? == 1))
    };
    for o in trace.log.records().iter().filter(|o| o.round < weeks) {
        calls[(o.user, o.round)] += 1.0;
        listened[(o.user, o.round)] += call(o.user, o.arm, rng)?;
    }
    for w in 0..weeks {
        for u in 0..n {
            if calls[(u, w)] == 0.0 {
                let slot = rng.random_range(0..pickup.n_arms());
                calls[(u, w)] = 1.0;
                listened[(u, w)] = call(u, slot, rng)?;
            }
        }
    }
    Ok(listened.component_div(&calls))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    Low,
    Mid,
    High,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Low, Bucket::Mid, Bucket::High];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Low => "low",
            Bucket::Mid => "mid",
            Bucket::High => "high",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const LOW_PICKUP: f64 = 0.2;
pub const HIGH_PICKUP: f64 = 0.8;

/// Buckets by best-slot pick-up: `< 0.2` low, `> 0.8` high, else mid.
pub fn bucket_users(theta: &RewardMatrix) -> Vec<Bucket> {
    (0..theta.n_users())
        .map(|u| {
            let best = theta.best_value(u);
            if best < LOW_PICKUP {
                Bucket::Low
            } else if best > HIGH_PICKUP {
                Bucket::High
            } else {
                Bucket::Mid
            }
        })
        .collect()
}

/// `[low, mid, high]` counts.
pub fn bucket_counts(buckets: &[Bucket]) -> [usize; 3] {
    let mut counts = [0; 3];
    for b in buckets {
        counts[*b as usize] += 1;
    }
    counts
}

/// Column-wise `[pickup | engagement]`.
pub fn combine_pickup_engagement(pickup: &RewardMatrix, engagement: &RewardMatrix) -> Result<RewardMatrix, MetricsError> {
    if pickup.values().shape() != engagement.values().shape() {
        return Err(MetricsError::Dimension(format!(
            "pickup {:?} vs engagement {:?}",
            pickup.values().shape(),
            engagement.values().shape()
        )));
    }
    let m = pickup.n_arms();
    let values = DMatrix::from_fn(pickup.n_users(), 2 * m, |i, j| {
        if j < m {
            pickup.get(i, j)
        } else {
            engagement.get(i, j - m)
        }
    });
    Ok(RewardMatrix::new(values, pickup.rank_hint() + engagement.rank_hint())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn cap(n: u32) -> AttemptModel {
        AttemptModel {
            max_attempts: n,
            ..AttemptModel::default()
        }
    }

    #[test]
    fn attempts_examples() {
        let e = expected_attempts(1.0, &cap(9)).unwrap();
        assert_eq!((e.attempts, e.p_connect), (1.0, 1.0));
        let e = expected_attempts(0.3, &cap(1)).unwrap();
        assert_abs_diff_eq!(e.attempts, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.p_connect, 0.3, epsilon = 1e-15);
        let e = expected_attempts(0.0, &cap(9)).unwrap();
        assert_eq!(e.attempts, 9.0);
        assert!(!e.connected);
        assert!(expected_attempts(1.2, &cap(9)).is_err());
        assert!(expected_attempts(-0.1, &cap(9)).is_err());
    }

    #[test]
    fn all_ones_env_needs_one_attempt() {
        let env = RewardMatrix::new(DMatrix::from_element(3, 2, 1.0), 1).unwrap();
        let calls: Vec<CallSlot> = (0..30).map(|i| CallSlot { user: i % 3, slot: i % 2 }).collect();
        let s = simulate_attempts(&calls, &env, &cap(9), None, &mut rng_from_seed(0)).unwrap();
        assert_eq!(s.mean_attempts, 1.0);
        assert_eq!(s.connect_rate, 1.0);
    }

    #[test]
    fn resample_walks_the_ranking() {
        let ranking = dmatrix![0.1, 0.5, 0.9, 0.5];
        assert_eq!(retry_order(&ranking, 0, 3), vec![3, 2, 1, 0]);
        // Only slot 2 ever answers: resampling reaches it on the second try.
        let env = RewardMatrix::new(dmatrix![0.0, 0.0, 1.0, 0.0], 1).unwrap();
        let model = AttemptModel {
            max_attempts: 9,
            retry_policy: RetryPolicy::PolicyResample,
        };
        let calls = [CallSlot { user: 0, slot: 3 }];
        let s = simulate_attempts(&calls, &env, &model, Some(&ranking), &mut rng_from_seed(0)).unwrap();
        assert_eq!(s.mean_attempts, 2.0);
        assert!(simulate_attempts(&calls, &env, &model, None, &mut rng_from_seed(0)).is_err());
        let s = simulate_attempts(&calls, &env, &cap(9), None, &mut rng_from_seed(0)).unwrap();
        assert_eq!((s.mean_attempts, s.connect_rate), (9.0, 0.0));
        assert_eq!(s.mean_attempts_connected, None);
    }

    #[test]
    fn relative_to_random_is_capped() {
        assert_eq!(rel_random_pct(2.0, 4.0), 50.0);
        assert_eq!(rel_random_pct(5.0, 4.0), 100.0);
    }

    #[test]
    fn dropoff_examples() {
        let rule = DropoffRule::default();
        let out = simulate_dropoffs(&DMatrix::zeros(3, 16), &rule).unwrap();
        assert_eq!(out.drop_week, vec![Some(6); 3]);
        assert_eq!(out.dropoff_rate, 1.0);
        let out = simulate_dropoffs(&DMatrix::from_element(4, 16, 0.9), &rule).unwrap();
        assert_eq!(out.dropoff_rate, 0.0);
        assert!(simulate_dropoffs(&DMatrix::zeros(2, 0), &rule).is_err());
        let bad = DropoffRule {
            window_low_weeks: 17,
            ..rule
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_rule_fires_without_a_long_run() {
        // Low, low, high repeated: never six in a row, nine lows by week 13.
        let weeks: Vec<f64> = (0..16).map(|w| if w % 3 == 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(DropoffRule::default().drop_week(&weeks), Some(13));
    }

    #[test]
    fn bucket_examples() {
        let theta = RewardMatrix::new(dmatrix![0.15, 0.1; 0.85, 0.2; 0.2, 0.0; 0.8, 0.5], 1).unwrap();
        assert_eq!(bucket_users(&theta), vec![Bucket::Low, Bucket::High, Bucket::Mid, Bucket::Mid]);
        assert_eq!(bucket_counts(&bucket_users(&theta)), [1, 2, 1]);
    }

    #[test]
    fn combine_examples() {
        let mut rng = rng_from_seed(2);
        let p = RewardMatrix::new(DMatrix::from_fn(10, 7, |_, _| rng.random::<f64>()), 2).unwrap();
        let both = combine_pickup_engagement(&p, &p).unwrap();
        assert_eq!(both.values().shape(), (10, 14));
        assert_eq!(both.values().columns(0, 7), both.values().columns(7, 7));
        let q = RewardMatrix::new(DMatrix::from_element(10, 6, 0.5), 1).unwrap();
        assert!(combine_pickup_engagement(&p, &q).is_err());
    }

    #[test]
    fn listen_propensity_is_in_unit_interval() {
        let l = listen_propensity(500, 8.0, 2.0, &mut rng_from_seed(3)).unwrap();
        assert!(l.iter().all(|x| (0.0..=1.0).contains(x)));
        let mean = l.iter().sum::<f64>() / 500.0;
        assert!((mean - 0.8).abs() < 0.02);
        assert!(listen_propensity(5, 0.0, 2.0, &mut rng_from_seed(3)).is_err());
    }
}
