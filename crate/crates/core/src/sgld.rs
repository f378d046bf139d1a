//! Bayesian matrix factorization sampled with Stochastic Gradient Langevin
//! Dynamics.
//!
//! The reward matrix is modelled as `P = U·V` where
//!
//! * `U = softmax_rows(u)` is a row-stochastic user-to-archetype membership
//!   matrix (`N × C`), and
//! * `V = σ(v)` holds each archetype's per-arm success probability (`C × M`).
//!
//! A binary observation `x` for `(user i, arm j)` is a mixture of Bernoullis,
//! `Q = Σ_c U[i,c]·(x·V[c,j] + (1−x)·(1−V[c,j]))`. Each SGLD step moves every
//! parameter by `(ε/2)·(∇log prior + (total/|batch|)·Σ_batch ∇log Q) + η` with
//! `η ~ N(0, ε)`.
//!
//! Two samplers are provided. [`run_full_sampling`] updates `u` and `v`
//! jointly from one snapshot. [`run_alternating_sampling`] partitions users into
//! blocks that update their `u` rows against a frozen `v` (rows of different
//! users are conditionally independent given `v`), then updates `v` against the
//! merged `u`.

use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{matrix_rows_text, parse_matrix_rows, EnvError};
use crate::observations::{Observation, ObservationLog};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Smallest likelihood used as a divisor.
pub const Q_FLOOR: f64 = 1e-300;

/// Standard deviation of the Gaussian used to initialize `u` and `v`.
pub const INIT_STD: f64 = 0.1;

static Q_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a mixture likelihood was clamped to [`Q_FLOOR`] in this process.
pub fn q_clamp_count() -> u64 {
    Q_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    U { user: usize, cluster: usize },
    V { cluster: usize, arm: usize },
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::U { user, cluster } => write!(f, "u[{user},{cluster}]"),
            Coordinate::V { cluster, arm } => write!(f, "v[{cluster},{arm}]"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SgldError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numerical divergence at {coordinate}: {value}")]
    Divergence { coordinate: Coordinate, value: f64 },
    #[error("no observations to sample from")]
    EmptyData,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("malformed parameter file: {0}")]
    Parse(String),
}

impl From<EnvError> for SgldError {
    fn from(e: EnvError) -> Self {
        SgldError::Parse(e.to_string())
    }
}

/// Unconstrained factor parameters: `u` is `N × C`, `v` is `C × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LatentParams {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self, SgldError> {
        if u.ncols() != v.nrows() || u.ncols() == 0 {
            return Err(SgldError::Dimension(format!(
                "u is {}x{}, v is {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(Self { u, v })
    }

    /// i.i.d. `N(0, INIT_STD²)` entries.
    pub fn init_gaussian(n_users: usize, rank: usize, n_arms: usize, rng: &mut SimRng) -> Self {
        Self {
            u: gaussian_matrix(n_users, rank, rng),
            v: gaussian_matrix(rank, n_arms, rng),
        }
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_arms(&self) -> usize {
        self.v.ncols()
    }

    pub fn first_non_finite(&self) -> Option<(Coordinate, f64)> {
        for c in 0..self.rank() {
            for i in 0..self.n_users() {
                let x = self.u[(i, c)];
                if !x.is_finite() {
                    return Some((Coordinate::U { user: i, cluster: c }, x));
                }
            }
            for j in 0..self.n_arms() {
                let x = self.v[(c, j)];
                if !x.is_finite() {
                    return Some((Coordinate::V { cluster: c, arm: j }, x));
                }
            }
        }
        None
    }

    /// Appends `k` freshly initialized user rows.
    pub fn append_users(&self, k: usize, rng: &mut SimRng) -> Self {
        let n = self.n_users();
        let fresh = gaussian_matrix(k, self.rank(), rng);
        let u = DMatrix::from_fn(n + k, self.rank(), |i, c| {
            if i < n {
                self.u[(i, c)]
            } else {
                fresh[(i - n, c)]
            }
        });
        Self {
            u,
            v: self.v.clone(),
        }
    }

    /// Two blocks: header `u N C` then the rows of `u`, header `v C M` then the rows of `v`.
    pub fn to_text(&self) -> String {
        let mut out = format!("u {} {}\n", self.n_users(), self.rank());
        out.push_str(&matrix_rows_text(&self.u));
        out.push_str(&format!("v {} {}\n", self.rank(), self.n_arms()));
        out.push_str(&matrix_rows_text(&self.v));
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SgldError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut block = |tag: &str| -> Result<DMatrix<f64>, SgldError> {
            let (_, header) = lines
                .next()
                .ok_or_else(|| SgldError::Parse(format!("missing `{tag}` header")))?;
            let f: Vec<&str> = header.split_whitespace().collect();
            if f.len() != 3 || f[0] != tag {
                return Err(SgldError::Parse(format!("expected `{tag} rows cols`, got `{header}`")));
            }
            let rows = f[1].parse::<usize>().map_err(|e| SgldError::Parse(e.to_string()))?;
            let cols = f[2].parse::<usize>().map_err(|e| SgldError::Parse(e.to_string()))?;
            Ok(parse_matrix_rows(&mut lines, rows, cols)?)
        };
        let u = block("u")?;
        let v = block("v")?;
        Self::new(u, v)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| INIT_STD * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorSign {
    /// Density `∝ exp(+rate·θ)`: gradient `+rate`.
    #[default]
    AsWritten,
    /// Density `∝ exp(−rate·θ)`: gradient `−rate`.
    StandardExponential,
}

impl PriorSign {
    fn factor(self) -> f64 {
        match self {
            PriorSign::AsWritten => 1.0,
            PriorSign::StandardExponential => -1.0,
        }
    }
}

impl fmt::Display for PriorSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorSign::AsWritten => "as_written",
            PriorSign::StandardExponential => "standard_exponential",
        })
    }
}

impl std::str::FromStr for PriorSign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_written" => Ok(PriorSign::AsWritten),
            "standard_exponential" => Ok(PriorSign::StandardExponential),
            other => Err(format!("unknown prior sign `{other}`")),
        }
    }
}

/// Independent exponential-family priors on every `u` and `v` coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// `N × C` rates on `u`.
    pub lambda: DMatrix<f64>,
    /// `C × M` rates on `v`.
    pub alpha: DMatrix<f64>,
    pub sign: PriorSign,
    /// Lower clamp applied to parameters after each step, if any.
    pub floor: Option<f64>,
}

impl PriorSpec {
    pub fn constant(
        n_users: usize,
        rank: usize,
        n_arms: usize,
        lambda: f64,
        alpha: f64,
        sign: PriorSign,
    ) -> Self {
        Self {
            lambda: DMatrix::from_element(n_users, rank, lambda),
            alpha: DMatrix::from_element(rank, n_arms, alpha),
            sign,
            floor: None,
        }
    }

    /// Zero rates: the prior contributes nothing.
    pub fn flat(n_users: usize, rank: usize, n_arms: usize) -> Self {
        Self::constant(n_users, rank, n_arms, 0.0, 0.0, PriorSign::AsWritten)
    }

    /// `λ = 1` on users and flat `v`.
    pub fn default_for(n_users: usize, rank: usize, n_arms: usize) -> Self {
        Self::constant(n_users, rank, n_arms, 1.0, 0.0, PriorSign::AsWritten)
    }

    /// Sets `rate` on every entry of the listed `v` rows.
    pub fn with_alpha_rows(mut self, rows: &[usize], rate: f64) -> Self {
        for &c in rows {
            if c < self.alpha.nrows() {
                self.alpha.row_mut(c).fill(rate);
            }
        }
        self
    }

    /// Rates for `n_users` users: existing rows are kept, extra rows copy user 0.
    pub fn with_user_count(&self, n_users: usize) -> Self {
        let lambda = DMatrix::from_fn(n_users, self.lambda.ncols(), |i, c| {
            if i < self.lambda.nrows() {
                self.lambda[(i, c)]
            } else {
                self.lambda[(0, c)]
            }
        });
        Self {
            lambda,
            alpha: self.alpha.clone(),
            sign: self.sign,
            floor: self.floor,
        }
    }

    pub fn validate_against(&self, params: &LatentParams) -> Result<(), SgldError> {
        if self.lambda.shape() != params.u.shape() || self.alpha.shape() != params.v.shape() {
            return Err(SgldError::Dimension(format!(
                "prior rates {:?}/{:?} vs params {:?}/{:?}",
                self.lambda.shape(),
                self.alpha.shape(),
                params.u.shape(),
                params.v.shape()
            )));
        }
        if self.lambda.iter().chain(self.alpha.iter()).any(|r| !(*r >= 0.0)) {
            return Err(SgldError::InvalidConfig("prior rates must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgldConfig {
    /// ε: step size and noise variance.
    pub step_size: f64,
    pub batch_size: usize,
    pub iters_per_round: usize,
    /// Use `ε = step_size · batch / total` so `total·ε/batch` stays at `step_size`.
    pub scale_step_with_data: bool,
    pub seed: u64,
    /// User blocks for alternating sampling.
    pub n_blocks: usize,
    /// Langevin noise switch; off turns SGLD into stochastic gradient ascent.
    pub inject_noise: bool,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            batch_size: 1000,
            iters_per_round: 100,
            scale_step_with_data: true,
            seed: 0,
            n_blocks: 4,
            inject_noise: true,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<(), SgldError> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(SgldError::InvalidConfig("step_size must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(SgldError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.n_blocks == 0 {
            return Err(SgldError::InvalidConfig("n_blocks must be >= 1".into()));
        }
        Ok(())
    }

    /// ε actually used when `total_count` observations are available.
    pub fn effective_step(&self, total_count: usize) -> f64 {
        if self.scale_step_with_data && total_count > 0 {
            let batch = self.batch_size.min(total_count);
            self.step_size * batch as f64 / total_count as f64
        } else {
            self.step_size
        }
    }
}

/// Softmax of one `u` row (max-subtracted).
pub fn user_membership(u_row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u_row.len()];
    softmax_into(u_row, &mut out);
    out
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Logistic map: Bernoulli success probability of a `(cluster, arm)` entry.
pub fn cluster_success_prob(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn bernoulli_lik(x: u8, s: f64) -> f64 {
    if x == 1 {
        s
    } else {
        1.0 - s
    }
}

/// Mixture likelihood `Q` of observing `x` given a user row and an arm column.
pub fn mixture_likelihood(x: u8, u_row: &[f64], v_col: &[f64]) -> f64 {
    user_membership(u_row)
        .iter()
        .zip(v_col)
        .map(|(p, &v)| p * bernoulli_lik(x, cluster_success_prob(v)))
        .sum()
}

/// Prior gradient over all coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub du: DMatrix<f64>,
    pub dv: DMatrix<f64>,
}

pub fn grad_log_prior(params: &LatentParams, prior: &PriorSpec) -> Result<Gradient, SgldError> {
    prior.validate_against(params)?;
    let s = prior.sign.factor();
    Ok(Gradient {
        du: &prior.lambda * s,
        dv: &prior.alpha * s,
    })
}

/// Gradient of `log Q` for a single observation; touches one `u` row and one `v` column.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGradient {
    pub du_row: Vec<f64>,
    pub dv_col: Vec<f64>,
    pub clamped: bool,
}

/// Reusable buffers for the per-observation gradient.
struct PointScratch {
    u_row: Vec<f64>,
    member: Vec<f64>,
    success: Vec<f64>,
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl PointScratch {
    fn new(rank: usize) -> Self {
        Self {
            u_row: vec![0.0; rank],
            member: vec![0.0; rank],
            success: vec![0.0; rank],
            du: vec![0.0; rank],
            dv: vec![0.0; rank],
        }
    }

    /// Fills `du`, `dv` for observation `(x, user, arm)`; returns whether `Q` was clamped.
    ///
    /// With `p = softmax(u_row)`, `s_c = σ(v_c)`, `ℓ_c = x·s_c + (1−x)(1−s_c)`:
    /// `∂log Q/∂u_c = p_c(ℓ_c − Q)/Q` and `∂log Q/∂v_c = p_c(2x−1)s_c(1−s_c)/Q`.
    fn compute(&mut self, x: u8, user: usize, arm: usize, u: &DMatrix<f64>, v: &DMatrix<f64>) -> bool {
        let rank = self.u_row.len();
        for c in 0..rank {
            self.u_row[c] = u[(user, c)];
            self.success[c] = cluster_success_prob(v[(c, arm)]);
        }
        softmax_into(&self.u_row, &mut self.member);
        let mut q = 0.0;
        for c in 0..rank {
            q += self.member[c] * bernoulli_lik(x, self.success[c]);
        }
        let clamped = q < Q_FLOOR;
        if clamped {
            Q_CLAMPS.fetch_add(1, Ordering::Relaxed);
            q = Q_FLOOR;
        }
        let sign = if x == 1 { 1.0 } else { -1.0 };
        for c in 0..rank {
            let s = self.success[c];
            let lik = bernoulli_lik(x, s);
            self.du[c] = self.member[c] * (lik - q) / q;
            self.dv[c] = self.member[c] * sign * s * (1.0 - s) / q;
        }
        clamped
    }
}

pub fn grad_log_likelihood_point(
    x: u8,
    user: usize,
    arm: usize,
    params: &LatentParams,
) -> Result<PointGradient, SgldError> {
    if user >= params.n_users() || arm >= params.n_arms() {
        return Err(SgldError::Dimension(format!(
            "observation ({user}, {arm}) outside {}x{}",
            params.n_users(),
            params.n_arms()
        )));
    }
    let mut scratch = PointScratch::new(params.rank());
    let clamped = scratch.compute(x, user, arm, &params.u, &params.v);
    Ok(PointGradient {
        du_row: scratch.du,
        dv_col: scratch.dv,
        clamped,
    })
}

/// Summed likelihood gradient over `observations`, accumulated in slice order.
pub fn grad_log_likelihood(
    params: &LatentParams,
    observations: &[Observation],
) -> Result<Gradient, SgldError> {
    let mut du = DMatrix::zeros(params.n_users(), params.rank());
    let mut dv = DMatrix::zeros(params.rank(), params.n_arms());
    let mut scratch = PointScratch::new(params.rank());
    for o in observations {
        if o.user >= params.n_users() || o.arm >= params.n_arms() {
            return Err(SgldError::Dimension(format!(
                "observation ({}, {}) outside {}x{}",
                o.user,
                o.arm,
                params.n_users(),
                params.n_arms()
            )));
        }
        scratch.compute(o.reward, o.user, o.arm, &params.u, &params.v);
        for c in 0..params.rank() {
            du[(o.user, c)] += scratch.du[c];
            dv[(c, o.arm)] += scratch.dv[c];
        }
    }
    Ok(Gradient { du, dv })
}

/// Which coordinates a sampler is allowed to move.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UpdateMask {
    /// `None` updates every user row.
    pub user_rows: Option<Range<usize>>,
    pub freeze_v: bool,
}

impl UpdateMask {
    pub fn all() -> Self {
        Self::default()
    }

    /// Only the given user rows move; `v` stays fixed.
    pub fn users_only(rows: Range<usize>) -> Self {
        Self {
            user_rows: Some(rows),
            freeze_v: true,
        }
    }

    fn rows(&self, n_users: usize) -> Range<usize> {
        match &self.user_rows {
            Some(r) => r.start.min(n_users)..r.end.min(n_users),
            None => 0..n_users,
        }
    }
}

fn langevin_update(
    theta: f64,
    prior_grad: f64,
    lik_grad: f64,
    eps: f64,
    scale: f64,
    noise: f64,
    floor: Option<f64>,
) -> f64 {
    let next = theta + 0.5 * eps * (prior_grad + scale * lik_grad) + eps.sqrt() * noise;
    match floor {
        Some(f) => next.max(f),
        None => next,
    }
}

fn noise_draw(rng: &mut SimRng, enabled: bool) -> f64 {
    if enabled {
        rng.sample(StandardNormal)
    } else {
        0.0
    }
}

fn check_finite(params: &LatentParams) -> Result<(), SgldError> {
    match params.first_non_finite() {
        Some((coordinate, value)) => Err(SgldError::Divergence { coordinate, value }),
        None => Ok(()),
    }
}

/// One SGLD step over all coordinates.
pub fn sgld_step(
    params: &LatentParams,
    batch: &[Observation],
    total_count: usize,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    rng: &mut SimRng,
) -> Result<LatentParams, SgldError> {
    sgld_step_masked(params, batch, total_count, prior, cfg, &UpdateMask::all(), rng)
}

/// One SGLD step restricted to `mask`. Noise is drawn for the `u` coordinates
/// (column by column) and then the `v` coordinates.
pub fn sgld_step_masked(
    params: &LatentParams,
    batch: &[Observation],
    total_count: usize,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    mask: &UpdateMask,
    rng: &mut SimRng,
) -> Result<LatentParams, SgldError> {
    if batch.is_empty() {
        return Err(SgldError::EmptyData);
    }
    if total_count < batch.len() {
        return Err(SgldError::InvalidConfig(format!(
            "total_count {total_count} smaller than batch {}",
            batch.len()
        )));
    }
    let prior_grad = grad_log_prior(params, prior)?;
    let lik = grad_log_likelihood(params, batch)?;
    let eps = cfg.effective_step(total_count);
    let scale = total_count as f64 / batch.len() as f64;
    let mut next = params.clone();
    let rows = mask.rows(params.n_users());
    for c in 0..params.rank() {
        for i in rows.clone() {
            let noise = noise_draw(rng, cfg.inject_noise);
            next.u[(i, c)] = langevin_update(
                params.u[(i, c)],
                prior_grad.du[(i, c)],
                lik.du[(i, c)],
                eps,
                scale,
                noise,
                prior.floor,
            );
        }
    }
    if !mask.freeze_v {
        for j in 0..params.n_arms() {
            for c in 0..params.rank() {
                let noise = noise_draw(rng, cfg.inject_noise);
                next.v[(c, j)] = langevin_update(
                    params.v[(c, j)],
                    prior_grad.dv[(c, j)],
                    lik.dv[(c, j)],
                    eps,
                    scale,
                    noise,
                    prior.floor,
                );
            }
        }
    }
    check_finite(&next)?;
    Ok(next)
}

fn draw_batch(data: &[Observation], size: usize, rng: &mut SimRng) -> Vec<Observation> {
    (0..size)
        .map(|_| data[rng.random_range(0..data.len())])
        .collect()
}

fn check_inputs(
    data: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    init: &LatentParams,
) -> Result<(), SgldError> {
    if data.is_empty() {
        return Err(SgldError::EmptyData);
    }
    cfg.validate()?;
    prior.validate_against(init)?;
    if data.n_users() > init.n_users() || data.n_arms() != init.n_arms() {
        return Err(SgldError::Dimension(format!(
            "log is {}x{}, params are {}x{}",
            data.n_users(),
            data.n_arms(),
            init.n_users(),
            init.n_arms()
        )));
    }
    Ok(())
}

/// Joint `u`/`v` SGLD for `cfg.iters_per_round` iterations; returns the last iterate.
pub fn run_full_sampling(
    data: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    init: &LatentParams,
    rng: &mut SimRng,
) -> Result<LatentParams, SgldError> {
    run_full_sampling_with(data, prior, cfg, init, &UpdateMask::all(), rng, |_, _| {})
}

/// [`run_full_sampling`] with a coordinate mask and a per-iteration observer.
pub fn run_full_sampling_with<F>(
    data: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    init: &LatentParams,
    mask: &UpdateMask,
    rng: &mut SimRng,
    mut observer: F,
) -> Result<LatentParams, SgldError>
where
    F: FnMut(usize, &LatentParams),
{
    check_inputs(data, prior, cfg, init)?;
    let records = data.records();
    let batch_size = cfg.batch_size.min(records.len());
    let mut params = init.clone();
    for iter in 0..cfg.iters_per_round {
        let batch = draw_batch(records, batch_size, rng);
        params = sgld_step_masked(&params, &batch, records.len(), prior, cfg, mask, rng)?;
        observer(iter, &params);
    }
    Ok(params)
}

/// Near-equal contiguous user ranges covering `rows`.
pub fn user_blocks(rows: Range<usize>, n_blocks: usize) -> Vec<Range<usize>> {
    let len = rows.end.saturating_sub(rows.start);
    let n_blocks = n_blocks.clamp(1, len.max(1));
    (0..n_blocks)
        .map(|b| rows.start + b * len / n_blocks..rows.start + (b + 1) * len / n_blocks)
        .collect()
}

/// Alternating SGLD: user blocks update their `u` rows against a snapshot of
/// `v` (in parallel, each with its own derived noise stream), then `v` is
/// updated against the merged `u`.
pub fn run_alternating_sampling(
    data: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    init: &LatentParams,
    rng: &mut SimRng,
) -> Result<LatentParams, SgldError> {
    run_alternating_sampling_with(data, prior, cfg, init, &UpdateMask::all(), rng, |_, _| {})
}

pub fn run_alternating_sampling_with<F>(
    data: &ObservationLog,
    prior: &PriorSpec,
    cfg: &SgldConfig,
    init: &LatentParams,
    mask: &UpdateMask,
    rng: &mut SimRng,
    mut observer: F,
) -> Result<LatentParams, SgldError>
where
    F: FnMut(usize, &LatentParams),
{
    check_inputs(data, prior, cfg, init)?;
    let records = data.records();
    let batch_size = cfg.batch_size.min(records.len());
    let total = records.len();
    let eps = cfg.effective_step(total);
    let scale = total as f64 / batch_size as f64;
    let prior_grad = grad_log_prior(init, prior)?;
    let blocks = user_blocks(mask.rows(init.n_users()), cfg.n_blocks);
    let rank = init.rank();
    let mut params = init.clone();
    for iter in 0..cfg.iters_per_round {
        let batch = draw_batch(records, batch_size, rng);
        let iter_seed: u64 = rng.random();
        let mut block_batches: Vec<Vec<Observation>> = vec![Vec::new(); blocks.len()];
        for o in &batch {
            if let Some(b) = blocks.iter().position(|r| r.contains(&o.user)) {
                block_batches[b].push(*o);
            }
        }
        let snapshot = &params;
        let updated: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .zip(block_batches.par_iter())
            .enumerate()
            .map(|(b, (range, obs))| {
                let mut block_rng = rng_from_seed(derive_seed(iter_seed, b as u64));
                update_user_block(
                    snapshot,
                    range.clone(),
                    obs,
                    &prior_grad.du,
                    eps,
                    scale,
                    prior.floor,
                    cfg.inject_noise,
                    &mut block_rng,
                )
            })
            .collect();
        let mut next = params.clone();
        for (range, rows) in blocks.iter().zip(&updated) {
            for c in 0..rank {
                for (k, i) in range.clone().enumerate() {
                    next.u[(i, c)] = rows[(k, c)];
                }
            }
        }
        if !mask.freeze_v {
            let lik = grad_log_likelihood(&next, &batch)?;
            for j in 0..next.n_arms() {
                for c in 0..rank {
                    let noise = noise_draw(rng, cfg.inject_noise);
                    next.v[(c, j)] = langevin_update(
                        next.v[(c, j)],
                        prior_grad.dv[(c, j)],
                        lik.dv[(c, j)],
                        eps,
                        scale,
                        noise,
                        prior.floor,
                    );
                }
            }
        }
        check_finite(&next)?;
        params = next;
        observer(iter, &params);
    }
    Ok(params)
}

/// New `u` rows for one block; `obs` must only involve users in `range`.
#[allow(clippy::too_many_arguments)]
fn update_user_block(
    params: &LatentParams,
    range: Range<usize>,
    obs: &[Observation],
    prior_du: &DMatrix<f64>,
    eps: f64,
    scale: f64,
    floor: Option<f64>,
    inject_noise: bool,
    rng: &mut SimRng,
) -> DMatrix<f64> {
    let rank = params.rank();
    let len = range.end - range.start;
    let mut grad = DMatrix::zeros(len, rank);
    let mut scratch = PointScratch::new(rank);
    for o in obs {
        scratch.compute(o.reward, o.user, o.arm, &params.u, &params.v);
        for c in 0..rank {
            grad[(o.user - range.start, c)] += scratch.du[c];
        }
    }
    let mut out = DMatrix::zeros(len, rank);
    for c in 0..rank {
        for k in 0..len {
            let i = range.start + k;
            let noise = noise_draw(rng, inject_noise);
            out[(k, c)] = langevin_update(
                params.u[(i, c)],
                prior_du[(i, c)],
                grad[(k, c)],
                eps,
                scale,
                noise,
                floor,
            );
        }
    }
    out
}

/// `U = softmax_rows(u)`, `V = σ(v)`, `P = U·V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Materialized {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub fn materialize(params: &LatentParams) -> Materialized {
    let rank = params.rank();
    let mut u = DMatrix::zeros(params.n_users(), rank);
    let mut row = vec![0.0; rank];
    let mut out = vec![0.0; rank];
    for i in 0..params.n_users() {
        for c in 0..rank {
            row[c] = params.u[(i, c)];
        }
        softmax_into(&row, &mut out);
        for c in 0..rank {
            u[(i, c)] = out[c];
        }
    }
    let v = params.v.map(cluster_success_prob);
    let p = &u * &v;
    Materialized { u, v, p }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn obs(user: usize, arm: usize, reward: u8) -> Observation {
        Observation {
            round: 0,
            user,
            arm,
            reward,
        }
    }

    #[test]
    fn membership_examples() {
        assert_abs_diff_eq!(
            user_membership(&[0.0; 4]).as_slice(),
            [0.25; 4].as_slice(),
            epsilon = 1e-15
        );
        let p = user_membership(&[3f64.ln(), 0.0]);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);
        let p = user_membership(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn success_prob_examples() {
        assert_eq!(cluster_success_prob(0.0), 0.5);
        assert!((1.0 - cluster_success_prob(50.0)).abs() < 1e-9);
        assert!(cluster_success_prob(-800.0) >= 0.0);
        let v = (0.3f64 / 0.7).ln();
        assert_abs_diff_eq!(cluster_success_prob(v), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(mixture_likelihood(0, &[0.0], &[v]), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn mixture_examples() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let v = [logit(0.3), logit(0.7)];
        assert_abs_diff_eq!(mixture_likelihood(1, &[0.0, 0.0], &v), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mixture_likelihood(0, &[0.0, 0.0], &v), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mixture_likelihood(1, &[0.3], &[logit(0.42)]), 0.42, epsilon = 1e-15);
    }

    #[test]
    fn prior_gradient_signs() {
        let params = LatentParams::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 4)).unwrap();
        let g = grad_log_prior(&params, &PriorSpec::constant(3, 2, 4, 1.0, 0.0, PriorSign::AsWritten)).unwrap();
        assert_eq!(g.du, DMatrix::from_element(3, 2, 1.0));
        assert_eq!(g.dv, DMatrix::zeros(2, 4));
        let g = grad_log_prior(
            &params,
            &PriorSpec::constant(3, 2, 4, 2.5, 0.5, PriorSign::StandardExponential),
        )
        .unwrap();
        assert_eq!(g.du[(1, 1)], -2.5);
        assert_eq!(g.dv[(0, 3)], -0.5);
        let bad = PriorSpec::flat(4, 2, 4);
        assert!(matches!(grad_log_prior(&params, &bad), Err(SgldError::Dimension(_))));
    }

    #[test]
    fn single_cluster_gradients() {
        let params = LatentParams::new(dmatrix![0.7], dmatrix![0.0]).unwrap();
        let g = grad_log_likelihood_point(1, 0, 0, &params).unwrap();
        assert_abs_diff_eq!(g.dv_col[0], 0.5, epsilon = 1e-15);
        assert_eq!(g.du_row[0], 0.0);
        let g = grad_log_likelihood_point(0, 0, 0, &params).unwrap();
        assert_abs_diff_eq!(g.dv_col[0], -0.5, epsilon = 1e-15);
        assert!(grad_log_likelihood_point(0, 1, 0, &params).is_err());
    }

    #[test]
    fn clamps_vanishing_likelihood() {
        let before = q_clamp_count();
        let params = LatentParams::new(dmatrix![0.0], dmatrix![-800.0]).unwrap();
        let g = grad_log_likelihood_point(1, 0, 0, &params).unwrap();
        assert!(g.clamped);
        assert!(g.dv_col[0].is_finite());
        assert!(q_clamp_count() > before);
    }

    #[test]
    fn zero_step_is_identity() {
        let mut rng = rng_from_seed(3);
        let params = LatentParams::init_gaussian(4, 2, 3, &mut rng);
        let cfg = SgldConfig {
            step_size: 0.0,
            scale_step_with_data: false,
            ..SgldConfig::default()
        };
        let next = sgld_step(&params, &[obs(1, 2, 1)], 10, &PriorSpec::default_for(4, 2, 3), &cfg, &mut rng).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn noiseless_step_follows_scaled_gradient() {
        let mut rng = rng_from_seed(5);
        let params = LatentParams::init_gaussian(3, 2, 2, &mut rng);
        let cfg = SgldConfig {
            step_size: 0.02,
            scale_step_with_data: false,
            inject_noise: false,
            ..SgldConfig::default()
        };
        let total = 40;
        let next = sgld_step(&params, &[obs(2, 1, 0)], total, &PriorSpec::flat(3, 2, 2), &cfg, &mut rng).unwrap();
        let g = grad_log_likelihood_point(0, 2, 1, &params).unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(
                next.u[(2, c)] - params.u[(2, c)],
                0.01 * total as f64 * g.du_row[c],
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(
                next.v[(c, 1)] - params.v[(c, 1)],
                0.01 * total as f64 * g.dv_col[c],
                epsilon = 1e-14
            );
        }
        assert_eq!(next.u.row(0), params.u.row(0));
        assert_eq!(next.v.column(0), params.v.column(0));
    }

    #[test]
    fn step_rejects_empty_batch_and_short_total() {
        let mut rng = rng_from_seed(0);
        let params = LatentParams::init_gaussian(2, 1, 2, &mut rng);
        let prior = PriorSpec::flat(2, 1, 2);
        let cfg = SgldConfig::default();
        assert!(matches!(sgld_step(&params, &[], 5, &prior, &cfg, &mut rng), Err(SgldError::EmptyData)));
        assert!(sgld_step(&params, &[obs(0, 0, 1), obs(1, 1, 0)], 1, &prior, &cfg, &mut rng).is_err());
    }

    #[test]
    fn divergence_names_coordinate() {
        let mut rng = rng_from_seed(0);
        let params = LatentParams::new(dmatrix![0.0, 0.0], dmatrix![0.0; 0.0]).unwrap();
        let prior = PriorSpec::constant(1, 2, 1, f64::MAX, 0.0, PriorSign::AsWritten);
        let cfg = SgldConfig {
            step_size: 10.0,
            scale_step_with_data: false,
            inject_noise: false,
            ..SgldConfig::default()
        };
        let err = sgld_step(&params, &[obs(0, 0, 1)], 1, &prior, &cfg, &mut rng).unwrap_err();
        match err {
            SgldError::Divergence { coordinate, .. } => {
                assert_eq!(coordinate, Coordinate::U { user: 0, cluster: 0 })
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_iterations_return_init() {
        let mut rng = rng_from_seed(1);
        let init = LatentParams::init_gaussian(2, 2, 2, &mut rng);
        let mut log = ObservationLog::new(2, 2);
        log.push(obs(0, 1, 1)).unwrap();
        let cfg = SgldConfig {
            iters_per_round: 0,
            ..SgldConfig::default()
        };
        let prior = PriorSpec::flat(2, 2, 2);
        assert_eq!(run_full_sampling(&log, &prior, &cfg, &init, &mut rng).unwrap(), init);
        assert_eq!(run_alternating_sampling(&log, &prior, &cfg, &init, &mut rng).unwrap(), init);
        assert!(matches!(
            run_full_sampling(&ObservationLog::new(2, 2), &prior, &cfg, &init, &mut rng),
            Err(SgldError::EmptyData)
        ));
    }

    #[test]
    fn blocks_partition_rows() {
        let b = user_blocks(0..10, 3);
        assert_eq!(b, vec![0..3, 3..6, 6..10]);
        assert_eq!(user_blocks(0..2, 5).len(), 2);
        assert_eq!(user_blocks(4..6, 1), vec![4..6]);
    }

    #[test]
    fn materialize_examples() {
        let params = LatentParams::new(
            DMatrix::zeros(3, 2),
            DMatrix::from_fn(2, 4, |c, _| {
                let p: f64 = if c == 0 { 0.2 } else { 0.8 };
                (p / (1.0 - p)).ln()
            }),
        )
        .unwrap();
        let m = materialize(&params);
        assert_abs_diff_eq!(m.p, DMatrix::from_element(3, 4, 0.5), epsilon = 1e-12);

        let single = LatentParams::new(dmatrix![3.0; -1.0], dmatrix![0.3, -2.0]).unwrap();
        let m = materialize(&single);
        assert_abs_diff_eq!(m.p.row(0), m.v.row(0), epsilon = 1e-15);
        assert_abs_diff_eq!(m.p.row(1), m.v.row(0), epsilon = 1e-15);
    }

    #[test]
    fn text_round_trip() {
        let mut rng = rng_from_seed(9);
        let params = LatentParams::init_gaussian(3, 2, 4, &mut rng);
        let text = params.to_text();
        assert!(text.starts_with("u 3 2\n"));
        let back = LatentParams::from_text(&text).unwrap();
        assert_abs_diff_eq!(back.u, params.u, epsilon = 5e-7);
        assert_abs_diff_eq!(back.v, params.v, epsilon = 5e-7);
        assert!(LatentParams::from_text("v 1 1\n0.0\n").is_err());
    }
}
