//! Thompson Sampling over SGLD posterior samples, baseline policies and
//! new-user enrolment.
//!
//! Every run is organised in rounds. Each round collects `samples_per_step`
//! calls. Users arrive round-robin across the whole run. For TS-SGLD, round 0
//! places calls at uniformly random `(user, arm)` pairs. Each later round
//! resamples the posterior once (the chain continues from the previous round),
//! materializes `P = U·V` and plays the row argmax for every arriving user.
//!
//! Regret is the expected gap `Θ[u, best] − Θ[u, a]` summed over the round's
//! calls. Realized rewards go to the observation log.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::env::{argmax_row, next_user, sample_reward, EnvError, RewardMatrix};
pub use crate::observations::{LogError, Observation, ObservationLog};
use crate::sgld::{
    materialize, run_alternating_sampling_with, run_full_sampling_with, LatentParams, PriorSpec,
    SgldConfig, SgldError, UpdateMask,
};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("sampler failed in round {round}: {source}")]
    Sampler { round: usize, source: SgldError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    TsSgldFull,
    TsSgldAlternating,
    Ucb,
    Random,
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::TsSgldFull,
        PolicyKind::TsSgldAlternating,
        PolicyKind::Ucb,
        PolicyKind::Random,
        PolicyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::TsSgldFull => "ts_sgld_full",
            PolicyKind::TsSgldAlternating => "ts_sgld_alternating",
            PolicyKind::Ucb => "ucb",
            PolicyKind::Random => "random",
            PolicyKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Full,
    Alternating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub policy: PolicyKind,
    pub samples_per_step: usize,
    pub rounds: usize,
    pub ucb_exploration: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::TsSgldFull,
            samples_per_step: 1000,
            rounds: 35,
            ucb_exploration: std::f64::consts::SQRT_2,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), BanditError> {
        if self.samples_per_step == 0 {
            return Err(BanditError::InvalidConfig("samples_per_step must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(BanditError::InvalidConfig("rounds must be >= 1".into()));
        }
        if !(self.ucb_exploration > 0.0) || !self.ucb_exploration.is_finite() {
            return Err(BanditError::InvalidConfig("ucb_exploration must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Observations logged by the end of the round.
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub policy: PolicyKind,
    pub rounds: Vec<RoundSummary>,
    /// Every call placed, in order.
    pub log: ObservationLog,
    /// Last materialized estimate, for model-based policies.
    pub final_p: Option<DMatrix<f64>>,
    pub final_params: Option<LatentParams>,
}

impl RunTrace {
    pub fn cum_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative regret after the first `k` rounds.
    pub fn cum_regret_at(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            k => self.rounds[k.min(self.rounds.len()) - 1].cum_regret,
        }
    }

    /// Calls placed in `round`.
    pub fn calls_in_round(&self, round: usize) -> impl Iterator<Item = &Observation> {
        self.log.records().iter().filter(move |o| o.round == round)
    }
}

/// Lowest-index argmax of `p`'s row for `user`.
pub fn select_arm_ts(p: &DMatrix<f64>, user: usize) -> usize {
    argmax_row(p, user)
}

/// Running regret totals for one trace.
struct Recorder {
    rounds: Vec<RoundSummary>,
    round_regret: f64,
    cum: f64,
}

impl Recorder {
    fn new() -> Self {
        Self {
            rounds: Vec::new(),
            round_regret: 0.0,
            cum: 0.0,
        }
    }

    fn add(&mut self, gap: f64) {
        self.round_regret += gap;
    }

    fn close(&mut self, round: usize, n_obs: usize) {
        self.cum += self.round_regret;
        self.rounds.push(RoundSummary {
            round,
            inst_regret: self.round_regret,
            cum_regret: self.cum,
            n_obs,
        });
        self.round_regret = 0.0;
    }
}

/// Plays one call, logging the realized reward; returns the expected gap.
fn play(
    env: &RewardMatrix,
    log: &mut ObservationLog,
    round: usize,
    user: usize,
    arm: usize,
    rng: &mut SimRng,
) -> Result<f64, BanditError> {
    let reward = sample_reward(env.get(user, arm), rng)?;
    log.push(Observation {
        round,
        user,
        arm,
        reward,
    })?;
    Ok(env.gap(user, arm))
}

/// Round-robin run where `choose(user, rng)` picks the arm.
fn run_simple<F>(
    env: &RewardMatrix,
    pol: &PolicyConfig,
    kind: PolicyKind,
    rng: &mut SimRng,
    mut choose: F,
) -> Result<RunTrace, BanditError>
where
    F: FnMut(usize, &mut SimRng) -> usize,
{
    pol.validate()?;
    let mut log = ObservationLog::new(env.n_users(), env.n_arms());
    let mut rec = Recorder::new();
    let mut t = 0;
    for round in 0..pol.rounds {
        for _ in 0..pol.samples_per_step {
            let user = next_user(t, env.n_users());
            t += 1;
            let arm = choose(user, rng);
            let gap = play(env, &mut log, round, user, arm, rng)?;
            rec.add(gap);
        }
        rec.close(round, log.len());
    }
    Ok(RunTrace {
        policy: kind,
        rounds: rec.rounds,
        log,
        final_p: None,
        final_params: None,
    })
}

pub fn run_random(env: &RewardMatrix, pol: &PolicyConfig, rng: &mut SimRng) -> Result<RunTrace, BanditError> {
    let m = env.n_arms();
    run_simple(env, pol, PolicyKind::Random, rng, |_, r| r.random_range(0..m))
}

/// Always plays the true row argmax. Rewards are still sampled (from `rng`).
pub fn run_oracle(env: &RewardMatrix, pol: &PolicyConfig, rng: &mut SimRng) -> Result<RunTrace, BanditError> {
    run_simple(env, pol, PolicyKind::Oracle, rng, |u, _| env.best_arm(u))
}

/// Per-user UCB1 arm statistics.
#[derive(Debug, Clone)]
pub struct UcbState {
    counts: DMatrix<u32>,
    means: DMatrix<f64>,
    plays: Vec<u32>,
    exploration: f64,
}

impl UcbState {
    pub fn new(n_users: usize, n_arms: usize, exploration: f64) -> Self {
        Self {
            counts: DMatrix::zeros(n_users, n_arms),
            means: DMatrix::zeros(n_users, n_arms),
            plays: vec![0; n_users],
            exploration,
        }
    }

    /// Untried arms first (ascending), then `mean + c·√(ln t_u / n)`.
    pub fn select(&self, user: usize) -> usize {
        let m = self.counts.ncols();
        if let Some(j) = (0..m).find(|&j| self.counts[(user, j)] == 0) {
            return j;
        }
        let ln_t = f64::from(self.plays[user]).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..m {
            let n = f64::from(self.counts[(user, j)]);
            let score = self.means[(user, j)] + self.exploration * (ln_t / n).sqrt();
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        best
    }

    pub fn update(&mut self, user: usize, arm: usize, reward: u8) {
        self.plays[user] += 1;
        self.counts[(user, arm)] += 1;
        let n = f64::from(self.counts[(user, arm)]);
        self.means[(user, arm)] += (f64::from(reward) - self.means[(user, arm)]) / n;
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }
}

pub fn run_ucb(env: &RewardMatrix, pol: &PolicyConfig, rng: &mut SimRng) -> Result<RunTrace, BanditError> {
    pol.validate()?;
    let mut state = UcbState::new(env.n_users(), env.n_arms(), pol.ucb_exploration);
    let mut log = ObservationLog::new(env.n_users(), env.n_arms());
    let mut rec = Recorder::new();
    let mut t = 0;
    for round in 0..pol.rounds {
        for _ in 0..pol.samples_per_step {
            let user = next_user(t, env.n_users());
            t += 1;
            let arm = state.select(user);
            let gap = play(env, &mut log, round, user, arm, rng)?;
            let reward = log.records()[log.len() - 1].reward;
            state.update(user, arm, reward);
            rec.add(gap);
        }
        rec.close(round, log.len());
    }
    Ok(RunTrace {
        policy: PolicyKind::Ucb,
        rounds: rec.rounds,
        log,
        final_p: Some(state.means),
        final_params: None,
    })
}

/// How arm indices of the learned matrix map to callable slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArmLayout {
    /// One column per slot.
    #[default]
    Plain,
    /// Columns `[pickup | engagement]`, `n_slots` each. A call at slot `j`
    /// observes pickup in column `j` and engagement in column `n_slots + j`;
    /// slots are chosen and regret is measured on the engagement half.
    PickupEngagement { n_slots: usize },
}

impl ArmLayout {
    fn n_slots(self, n_cols: usize) -> usize {
        match self {
            ArmLayout::Plain => n_cols,
            ArmLayout::PickupEngagement { n_slots } => n_slots,
        }
    }

    fn objective_col(self, slot: usize) -> usize {
        match self {
            ArmLayout::Plain => slot,
            ArmLayout::PickupEngagement { n_slots } => n_slots + slot,
        }
    }

    fn validate(self, env: &RewardMatrix) -> Result<(), BanditError> {
        if let ArmLayout::PickupEngagement { n_slots } = self {
            if n_slots == 0 || env.n_arms() != 2 * n_slots {
                return Err(BanditError::Dimension(format!(
                    "pickup/engagement layout with {n_slots} slots needs {} columns, env has {}",
                    2 * n_slots,
                    env.n_arms()
                )));
            }
        }
        Ok(())
    }
}

/// Expected objective gap of playing `slot` for `user`.
fn layout_gap(env: &RewardMatrix, layout: ArmLayout, user: usize, slot: usize) -> f64 {
    let m = layout.n_slots(env.n_arms());
    let best = (0..m)
        .map(|j| env.get(user, layout.objective_col(j)))
        .fold(f64::NEG_INFINITY, f64::max);
    best - env.get(user, layout.objective_col(slot))
}

fn layout_argmax(p: &DMatrix<f64>, layout: ArmLayout, user: usize) -> usize {
    let m = layout.n_slots(p.ncols());
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..m {
        let x = p[(user, layout.objective_col(j))];
        if x > best_val {
            best_val = x;
            best = j;
        }
    }
    best
}

/// Logs one call at `slot`; returns the expected objective gap.
fn play_layout(
    env: &RewardMatrix,
    layout: ArmLayout,
    log: &mut ObservationLog,
    round: usize,
    user: usize,
    slot: usize,
    rng: &mut SimRng,
) -> Result<f64, BanditError> {
    match layout {
        ArmLayout::Plain => play(env, log, round, user, slot, rng),
        ArmLayout::PickupEngagement { n_slots } => {
            let pickup_p = env.get(user, slot);
            let engaged_p = env.get(user, n_slots + slot);
            let picked = sample_reward(pickup_p, rng)?;
            // Engagement is realized only on a pickup, so its marginal is Θ[u, n_slots + slot].
            let listen = if pickup_p > 0.0 {
                (engaged_p / pickup_p).min(1.0)
            } else {
                0.0
            };
            let engaged = if picked == 1 { sample_reward(listen, rng)? } else { 0 };
            log.push(Observation {
                round,
                user,
                arm: slot,
                reward: picked,
            })?;
            log.push(Observation {
                round,
                user,
                arm: n_slots + slot,
                reward: engaged,
            })?;
            Ok(layout_gap(env, layout, user, slot))
        }
    }
}

fn sample_posterior(
    sampling: Sampling,
    log: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    params: &LatentParams,
    mask: &UpdateMask,
    round: usize,
    rng: &mut SimRng,
) -> Result<LatentParams, BanditError> {
    let out = match sampling {
        Sampling::Full => run_full_sampling_with(log, prior, cfg, params, mask, rng, |_, _| {}),
        Sampling::Alternating => {
            run_alternating_sampling_with(log, prior, cfg, params, mask, rng, |_, _| {})
        }
    };
    out.map_err(|source| BanditError::Sampler { round, source })
}

/// TS-SGLD. The model rank is the column count of `prior.lambda`.
pub fn run_ts_sgld(
    env: &RewardMatrix,
    prior: &PriorSpec,
    sgld: &SgldConfig,
    pol: &PolicyConfig,
    sampling: Sampling,
    rng: &mut SimRng,
) -> Result<RunTrace, BanditError> {
    run_ts_sgld_layout(env, ArmLayout::Plain, prior, sgld, pol, sampling, rng)
}

pub fn run_ts_sgld_layout(
    env: &RewardMatrix,
    layout: ArmLayout,
    prior: &PriorSpec,
    sgld: &SgldConfig,
    pol: &PolicyConfig,
    sampling: Sampling,
    rng: &mut SimRng,
) -> Result<RunTrace, BanditError> {
    pol.validate()?;
    layout.validate(env)?;
    sgld.validate().map_err(|source| BanditError::Sampler { round: 0, source })?;
    let (n, m) = (env.n_users(), env.n_arms());
    let rank = prior.lambda.ncols();
    if prior.lambda.nrows() != n || prior.alpha.ncols() != m || prior.alpha.nrows() != rank {
        return Err(BanditError::Dimension(format!(
            "prior shaped for {}x{} users/arms, env is {n}x{m}",
            prior.lambda.nrows(),
            prior.alpha.ncols()
        )));
    }
    let slots = layout.n_slots(m);
    let mut log = ObservationLog::new(n, m);
    let mut rec = Recorder::new();
    let mut params = LatentParams::init_gaussian(n, rank, m, rng);

    for _ in 0..pol.samples_per_step {
        let user = rng.random_range(0..n);
        let slot = rng.random_range(0..slots);
        rec.add(play_layout(env, layout, &mut log, 0, user, slot, rng)?);
    }
    rec.close(0, log.len());

    let mut final_p = None;
    let mut t = 0;
    for round in 1..pol.rounds {
        params = sample_posterior(sampling, &log, prior, sgld, &params, &UpdateMask::all(), round, rng)?;
        let p = materialize(&params).p;
        for _ in 0..pol.samples_per_step {
            let user = next_user(t, n);
            t += 1;
            let slot = layout_argmax(&p, layout, user);
            rec.add(play_layout(env, layout, &mut log, round, user, slot, rng)?);
        }
        rec.close(round, log.len());
        final_p = Some(p);
    }
    let kind = match sampling {
        Sampling::Full => PolicyKind::TsSgldFull,
        Sampling::Alternating => PolicyKind::TsSgldAlternating,
    };
    Ok(RunTrace {
        policy: kind,
        rounds: rec.rounds,
        log,
        final_p,
        final_params: Some(params),
    })
}

/// Dispatches on `pol.policy`.
pub fn run_policy(
    env: &RewardMatrix,
    prior: &PriorSpec,
    sgld: &SgldConfig,
    pol: &PolicyConfig,
    rng: &mut SimRng,
) -> Result<RunTrace, BanditError> {
    match pol.policy {
        PolicyKind::TsSgldFull => run_ts_sgld(env, prior, sgld, pol, Sampling::Full, rng),
        PolicyKind::TsSgldAlternating => run_ts_sgld(env, prior, sgld, pol, Sampling::Alternating, rng),
        PolicyKind::Ucb => run_ucb(env, pol, rng),
        PolicyKind::Random => run_random(env, pol, rng),
        PolicyKind::Oracle => run_oracle(env, pol, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrollMode {
    /// Keep the learned `v` fixed and learn only the new users' `u` rows.
    Warm,
    /// Train a fresh model on the new users' data alone.
    Cold,
}

/// Adds `k_new` users after training and runs `pol.rounds` rounds over them.
///
/// `env_extended` holds the trained users first and the new users in its last
/// `k_new` rows. `prior` is shaped for the trained users; its user-0 rates are
/// reused for new rows. Warm mode starts playing from the current posterior
/// immediately. Cold mode opens with a random exploration round. The trace
/// covers only the new users, whose indices in its log are `old..old + k_new`.
#[allow(clippy::too_many_arguments)]
pub fn enroll_new_users(
    trained: &LatentParams,
    k_new: usize,
    mode: EnrollMode,
    env_extended: &RewardMatrix,
    prior: &PriorSpec,
    sgld: &SgldConfig,
    pol: &PolicyConfig,
    sampling: Sampling,
    rng: &mut SimRng,
) -> Result<RunTrace, BanditError> {
    pol.validate()?;
    let old = trained.n_users();
    let m = trained.n_arms();
    if env_extended.n_users() != old + k_new || env_extended.n_arms() != m {
        return Err(BanditError::Dimension(format!(
            "extended env is {}x{}, expected {}x{m}",
            env_extended.n_users(),
            env_extended.n_arms(),
            old + k_new
        )));
    }
    let kind = match sampling {
        Sampling::Full => PolicyKind::TsSgldFull,
        Sampling::Alternating => PolicyKind::TsSgldAlternating,
    };
    let mut log = ObservationLog::new(old + k_new, m);
    if k_new == 0 {
        return Ok(RunTrace {
            policy: kind,
            rounds: Vec::new(),
            log,
            final_p: None,
            final_params: Some(trained.clone()),
        });
    }
    let rank = trained.rank();
    let mut rec = Recorder::new();
    let mut t = 0;
    let mut final_p = None;

    let (mut params, local_prior, mask, first_round) = match mode {
        EnrollMode::Warm => (
            trained.append_users(k_new, rng),
            prior.with_user_count(old + k_new),
            UpdateMask::users_only(old..old + k_new),
            0,
        ),
        EnrollMode::Cold => (
            LatentParams::init_gaussian(k_new, rank, m, rng),
            prior.with_user_count(k_new),
            UpdateMask::all(),
            1,
        ),
    };
    // The cold model indexes new users from 0.
    let offset = if mode == EnrollMode::Cold { old } else { 0 };
    let mut local_log = ObservationLog::new(params.n_users(), m);

    if mode == EnrollMode::Cold {
        for _ in 0..pol.samples_per_step {
            let user = old + rng.random_range(0..k_new);
            let arm = rng.random_range(0..m);
            rec.add(play(env_extended, &mut log, 0, user, arm, rng)?);
            let last = log.records()[log.len() - 1];
            local_log.push(Observation { user: user - offset, ..last })?;
        }
        rec.close(0, log.len());
    }

    for round in first_round..pol.rounds {
        if !local_log.is_empty() {
            params = sample_posterior(sampling, &local_log, &local_prior, sgld, &params, &mask, round, rng)?;
        }
        let p = materialize(&params).p;
        for _ in 0..pol.samples_per_step {
            let user = old + next_user(t, k_new);
            t += 1;
            let arm = select_arm_ts(&p, user - offset);
            rec.add(play(env_extended, &mut log, round, user, arm, rng)?);
            let last = log.records()[log.len() - 1];
            local_log.push(Observation { user: user - offset, ..last })?;
        }
        rec.close(round, log.len());
        final_p = Some(p);
    }
    Ok(RunTrace {
        policy: kind,
        rounds: rec.rounds,
        log,
        final_p,
        final_params: Some(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use nalgebra::dmatrix;

    fn pol(kind: PolicyKind, rounds: usize, s: usize) -> PolicyConfig {
        PolicyConfig {
            policy: kind,
            rounds,
            samples_per_step: s,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn ts_selection_examples() {
        assert_eq!(select_arm_ts(&dmatrix![0.1, 0.9, 0.3], 0), 1);
        assert_eq!(select_arm_ts(&dmatrix![0.5, 0.5], 0), 0);
        assert_eq!(select_arm_ts(&dmatrix![0.2; 0.7], 1), 0);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("phased_mc".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn oracle_has_zero_regret_and_plays_argmax() {
        let env = RewardMatrix::new(dmatrix![0.2, 0.8, 0.8; 0.5, 0.1, 0.3], 1).unwrap();
        let trace = run_oracle(&env, &pol(PolicyKind::Oracle, 4, 5), &mut rng_from_seed(0)).unwrap();
        assert_eq!(trace.cum_regret(), 0.0);
        for o in trace.log.records() {
            assert_eq!(o.arm, if o.user == 0 { 1 } else { 0 });
        }
    }

    #[test]
    fn single_arm_has_no_regret() {
        let env = RewardMatrix::new(dmatrix![0.3; 0.6], 1).unwrap();
        let mut rng = rng_from_seed(1);
        assert_eq!(run_random(&env, &pol(PolicyKind::Random, 3, 4), &mut rng).unwrap().cum_regret(), 0.0);
        let ucb = run_ucb(&env, &pol(PolicyKind::Ucb, 3, 4), &mut rng).unwrap();
        assert!(ucb.log.records().iter().all(|o| o.arm == 0));
        assert_eq!(ucb.cum_regret(), 0.0);
    }

    #[test]
    fn ucb_sweeps_arms_first() {
        let env = RewardMatrix::new(DMatrix::from_element(1, 6, 0.5), 1).unwrap();
        let trace = run_ucb(&env, &pol(PolicyKind::Ucb, 1, 6), &mut rng_from_seed(2)).unwrap();
        let arms: Vec<usize> = trace.log.records().iter().map(|o| o.arm).collect();
        assert_eq!(arms, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn ts_single_round_is_exploration_only() {
        let env = RewardMatrix::new(DMatrix::from_element(5, 4, 0.5), 2).unwrap();
        let prior = PriorSpec::default_for(5, 2, 4);
        let trace = run_ts_sgld(
            &env,
            &prior,
            &SgldConfig::default(),
            &pol(PolicyKind::TsSgldFull, 1, 50),
            Sampling::Full,
            &mut rng_from_seed(3),
        )
        .unwrap();
        assert_eq!(trace.rounds.len(), 1);
        assert_eq!(trace.log.len(), 50);
        assert!(trace.final_p.is_none());
    }

    #[test]
    fn ts_rejects_mismatched_prior() {
        let env = RewardMatrix::new(DMatrix::from_element(5, 4, 0.5), 2).unwrap();
        let prior = PriorSpec::default_for(6, 2, 4);
        let r = run_ts_sgld(
            &env,
            &prior,
            &SgldConfig::default(),
            &pol(PolicyKind::TsSgldFull, 2, 5),
            Sampling::Full,
            &mut rng_from_seed(0),
        );
        assert!(matches!(r, Err(BanditError::Dimension(_))));
    }

    #[test]
    fn enroll_zero_users_is_empty() {
        let mut rng = rng_from_seed(4);
        let params = LatentParams::init_gaussian(3, 2, 4, &mut rng);
        let env = RewardMatrix::new(DMatrix::from_element(3, 4, 0.5), 2).unwrap();
        let trace = enroll_new_users(
            &params,
            0,
            EnrollMode::Warm,
            &env,
            &PriorSpec::default_for(3, 2, 4),
            &SgldConfig::default(),
            &pol(PolicyKind::TsSgldFull, 3, 5),
            Sampling::Full,
            &mut rng,
        )
        .unwrap();
        assert!(trace.rounds.is_empty());
        assert!(trace.log.is_empty());
    }

    #[test]
    fn enroll_rejects_wrong_env() {
        let mut rng = rng_from_seed(4);
        let params = LatentParams::init_gaussian(3, 2, 4, &mut rng);
        let env = RewardMatrix::new(DMatrix::from_element(4, 4, 0.5), 2).unwrap();
        let r = enroll_new_users(
            &params,
            2,
            EnrollMode::Cold,
            &env,
            &PriorSpec::default_for(3, 2, 4),
            &SgldConfig::default(),
            &pol(PolicyKind::TsSgldFull, 3, 5),
            Sampling::Full,
            &mut rng,
        );
        assert!(matches!(r, Err(BanditError::Dimension(_))));
    }

    #[test]
    fn pickup_engagement_layout_logs_both_halves() {
        let env = RewardMatrix::new(dmatrix![0.9, 0.5, 0.45, 0.5; 0.2, 1.0, 0.1, 0.3], 1).unwrap();
        let layout = ArmLayout::PickupEngagement { n_slots: 2 };
        let trace = run_ts_sgld_layout(
            &env,
            layout,
            &PriorSpec::default_for(2, 1, 4),
            &SgldConfig {
                iters_per_round: 5,
                ..SgldConfig::default()
            },
            &pol(PolicyKind::TsSgldFull, 3, 4),
            Sampling::Full,
            &mut rng_from_seed(5),
        )
        .unwrap();
        assert_eq!(trace.log.len(), 2 * 12);
        for pair in trace.log.records().chunks(2) {
            assert_eq!(pair[1].arm, pair[0].arm + 2);
            assert!(pair[1].reward <= pair[0].reward);
        }
        assert!(matches!(
            layout.validate(&RewardMatrix::new(DMatrix::from_element(2, 3, 0.5), 1).unwrap()),
            Err(BanditError::Dimension(_))
        ));
    }
}
