//! Ground-truth reward matrices and the simulated feedback loop.
//!
//! Three generators are provided:
//!
//! * [`generate_low_rank`]: `normalize(U·V + noise)` with `U`, `V` entrywise
//!   uniform on `[0, 1]`.
//! * [`generate_cluster`]: every user copies one of `C` prototype rows.
//! * [`generate_spectrum_matched`]: an approximately low-rank matrix whose
//!   singular-value profile mimics a real pick-up matrix (dominant first
//!   singular value about twice the second, no vanishing tail) with a block of
//!   users that never answer.
//!
//! Rewards are Bernoulli draws with the matrix entry as success probability.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed, SimRng};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("spectrum constraints not met after {0} attempts")]
    GenerationFailed(usize),
    #[error("malformed environment file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Ground-truth expected rewards, users × arms, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    values: DMatrix<f64>,
    rank_hint: usize,
}

impl RewardMatrix {
    pub fn new(values: DMatrix<f64>, rank_hint: usize) -> Result<Self, EnvError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(EnvError::Dimension("reward matrix must be non-empty".into()));
        }
        if rank_hint == 0 {
            return Err(EnvError::Dimension("rank hint must be positive".into()));
        }
        if let Some(bad) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(EnvError::Domain(*bad));
        }
        Ok(Self { values, rank_hint })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn rank_hint(&self) -> usize {
        self.rank_hint
    }

    pub fn n_users(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_arms(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, user: usize, arm: usize) -> f64 {
        self.values[(user, arm)]
    }

    /// Lowest-index arm attaining the row maximum.
    pub fn best_arm(&self, user: usize) -> usize {
        argmax_row(&self.values, user)
    }

    pub fn best_value(&self, user: usize) -> f64 {
        self.values.row(user).max()
    }

    /// Expected regret of playing `arm` for `user`.
    pub fn gap(&self, user: usize, arm: usize) -> f64 {
        self.best_value(user) - self.get(user, arm)
    }

    /// Restricts to a subset of users, keeping their order.
    pub fn select_users(&self, users: &[usize]) -> Result<Self, EnvError> {
        if users.iter().any(|&u| u >= self.n_users()) {
            return Err(EnvError::Dimension("user index out of range".into()));
        }
        Self::new(self.values.select_rows(users.iter()), self.rank_hint)
    }
}

/// Lowest index attaining the maximum of `m`'s row `row`.
pub(crate) fn argmax_row(m: &DMatrix<f64>, row: usize) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..m.ncols() {
        let x = m[(row, j)];
        if x > best_val {
            best_val = x;
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    LowRank,
    Cluster,
    SpectrumMatched,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::LowRank => "low_rank",
            EnvKind::Cluster => "cluster",
            EnvKind::SpectrumMatched => "spectrum_matched",
        })
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low_rank" => Ok(EnvKind::LowRank),
            "cluster" => Ok(EnvKind::Cluster),
            "spectrum_matched" => Ok(EnvKind::SpectrumMatched),
            other => Err(EnvError::InvalidSpec(format!("unknown env kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_users: usize,
    pub n_arms: usize,
    pub rank: usize,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub kind: EnvKind,
    pub seed: u64,
    /// Fraction of users forced to all-zero rows (spectrum-matched only).
    pub zero_fraction: f64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_arms: 20,
            rank: 4,
            noise_mean: 0.5,
            noise_std: 0.1,
            kind: EnvKind::LowRank,
            seed: 0,
            zero_fraction: 0.1,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_users == 0 || self.n_arms == 0 || self.rank == 0 {
            return Err(EnvError::Dimension(
                "n_users, n_arms and rank must be positive".into(),
            ));
        }
        if self.rank > self.n_users.min(self.n_arms) {
            return Err(EnvError::Dimension(format!(
                "rank {} exceeds min(n_users, n_arms) = {}",
                self.rank,
                self.n_users.min(self.n_arms)
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() || !self.noise_mean.is_finite()
        {
            return Err(EnvError::InvalidSpec("noise parameters must be finite, std >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.zero_fraction) {
            return Err(EnvError::InvalidSpec("zero_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground truth plus the cluster assignment when the generator produced one.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub spec: EnvSpec,
    pub matrix: RewardMatrix,
    pub assignment: Option<Vec<usize>>,
}

impl Environment {
    /// Dispatches on `spec.kind`.
    pub fn generate(spec: &EnvSpec) -> Result<Self, EnvError> {
        let (matrix, assignment) = match spec.kind {
            EnvKind::LowRank => (generate_low_rank(spec)?, None),
            EnvKind::Cluster => {
                let (m, a) = generate_cluster(spec)?;
                (m, Some(a))
            }
            EnvKind::SpectrumMatched => (generate_spectrum_matched(spec)?, None),
        };
        Ok(Self {
            spec: spec.clone(),
            matrix,
            assignment,
        })
    }

    /// Flat text snapshot: header `N M C kind seed`, one row per user with six
    /// fractional digits, then the assignment line for cluster environments.
    pub fn to_text(&self) -> String {
        let m = self.matrix.values();
        let mut out = format!(
            "{} {} {} {} {}\n",
            m.nrows(),
            m.ncols(),
            self.matrix.rank_hint(),
            self.spec.kind,
            self.spec.seed
        );
        out.push_str(&matrix_rows_text(m));
        if let Some(a) = &self.assignment {
            let line: Vec<String> = a.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EnvError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EnvError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(EnvError::Parse {
                line: 1,
                msg: "header must be `N M C kind seed`".into(),
            });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| EnvError::Parse {
                line: 1,
                msg: e.to_string(),
            })
        };
        let n = parse_usize(fields[0])?;
        let m = parse_usize(fields[1])?;
        let c = parse_usize(fields[2])?;
        let kind: EnvKind = fields[3].parse()?;
        let seed = fields[4].parse::<u64>().map_err(|e| EnvError::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        let values = parse_matrix_rows(&mut lines, n, m)?;
        let assignment = if kind == EnvKind::Cluster {
            let (idx, line) = lines.next().ok_or(EnvError::Parse {
                line: n + 2,
                msg: "missing cluster assignment line".into(),
            })?;
            let a = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EnvError::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
            if a.len() != n {
                return Err(EnvError::Parse {
                    line: idx + 1,
                    msg: format!("expected {n} assignments, found {}", a.len()),
                });
            }
            Some(a)
        } else {
            None
        };
        let spec = EnvSpec {
            n_users: n,
            n_arms: m,
            rank: c,
            kind,
            seed,
            ..EnvSpec::default()
        };
        Ok(Self {
            spec,
            matrix: RewardMatrix::new(values, c)?,
            assignment,
        })
    }
}

pub(crate) fn matrix_rows_text(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 9);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub(crate) fn parse_matrix_rows<'a, I>(
    lines: &mut I,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>, EnvError>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut values = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let (idx, line) = lines.next().ok_or(EnvError::Parse {
            line: i + 2,
            msg: format!("expected {rows} matrix rows"),
        })?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EnvError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if row.len() != cols {
            return Err(EnvError::Parse {
                line: idx + 1,
                msg: format!("expected {cols} values, found {}", row.len()),
            });
        }
        for (j, x) in row.into_iter().enumerate() {
            values[(i, j)] = x;
        }
    }
    Ok(values)
}

/// Affine rescale to `[0, 1]`; a constant matrix maps to zeros.
pub fn normalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let lo = m.min();
    let hi = m.max();
    let range = hi - lo;
    if !(range > 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    m.map(|x| ((x - lo) / range).clamp(0.0, 1.0))
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// `normalize(U·V + N(mean, std²))` for given factors, noise i.i.d. per entry.
pub fn low_rank_from_factors(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    noise_mean: f64,
    noise_std: f64,
    rng: &mut SimRng,
) -> Result<DMatrix<f64>, EnvError> {
    if u.ncols() != v.nrows() {
        return Err(EnvError::Dimension(format!(
            "factor shapes {}x{} and {}x{} do not chain",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let noise = Normal::new(noise_mean, noise_std)
        .map_err(|e| EnvError::InvalidSpec(e.to_string()))?;
    let mut p = u * v;
    for x in p.iter_mut() {
        *x += noise.sample(rng);
    }
    Ok(normalize(&p))
}

pub fn generate_low_rank(spec: &EnvSpec) -> Result<RewardMatrix, EnvError> {
    spec.validate()?;
    if spec.kind != EnvKind::LowRank {
        return Err(EnvError::InvalidSpec(format!("expected low_rank, got {}", spec.kind)));
    }
    let mut rng = rng_from_seed(spec.seed);
    let u = uniform_matrix(spec.n_users, spec.rank, &mut rng);
    let v = uniform_matrix(spec.rank, spec.n_arms, &mut rng);
    let p = low_rank_from_factors(&u, &v, spec.noise_mean, spec.noise_std, &mut rng)?;
    RewardMatrix::new(p, spec.rank)
}

/// Cluster model: `C` prototype rows (uniform entries, then normalized) and a
/// uniform random assignment of users to prototypes.
pub fn generate_cluster(spec: &EnvSpec) -> Result<(RewardMatrix, Vec<usize>), EnvError> {
    if spec.rank > spec.n_users {
        return Err(EnvError::Dimension(format!(
            "{} clusters for {} users",
            spec.rank, spec.n_users
        )));
    }
    spec.validate()?;
    if spec.kind != EnvKind::Cluster {
        return Err(EnvError::InvalidSpec(format!("expected cluster, got {}", spec.kind)));
    }
    let mut rng = rng_from_seed(spec.seed);
    let prototypes = normalize(&uniform_matrix(spec.rank, spec.n_arms, &mut rng));
    let assignment: Vec<usize> = (0..spec.n_users)
        .map(|_| rng.random_range(0..spec.rank))
        .collect();
    let values = DMatrix::from_fn(spec.n_users, spec.n_arms, |i, j| {
        prototypes[(assignment[i], j)]
    });
    Ok((RewardMatrix::new(values, spec.rank)?, assignment))
}

/// Acceptance band for the spectrum-matched generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumTarget {
    /// Target for σ₁/σ₂.
    pub top_ratio: f64,
    pub top_ratio_band: (f64, f64),
    /// Lower bound on σ_min/σ₂.
    pub min_tail_ratio: f64,
    pub max_attempts: usize,
}

impl Default for SpectrumTarget {
    fn default() -> Self {
        Self {
            top_ratio: 1.95,
            top_ratio_band: (1.8, 2.1),
            min_tail_ratio: 0.3,
            max_attempts: 100,
        }
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// (σ₁/σ₂, σ_min/σ₂).
pub fn spectrum_ratios(m: &DMatrix<f64>) -> (f64, f64) {
    let s = singular_values(m);
    if s.len() < 2 || s[1] == 0.0 {
        return (f64::INFINITY, 0.0);
    }
    (s[0] / s[1], s[s.len() - 1] / s[1])
}

pub fn generate_spectrum_matched(spec: &EnvSpec) -> Result<RewardMatrix, EnvError> {
    generate_spectrum_matched_with(spec, &SpectrumTarget::default())
}

/// Users load mostly on one slot-preference archetype (a peaked slot plus a
/// weaker secondary slot) over a shared base level, scaled by a per-user
/// activity, with small i.i.d. noise, clipped to `[0, 1]`, and a sampled block
/// of users zeroed. The shared base level drives σ₁/σ₂ and is bisected to the
/// target; draws that miss the band are resampled.
pub fn generate_spectrum_matched_with(
    spec: &EnvSpec,
    target: &SpectrumTarget,
) -> Result<RewardMatrix, EnvError> {
    spec.validate()?;
    if spec.kind != EnvKind::SpectrumMatched {
        return Err(EnvError::InvalidSpec(format!(
            "expected spectrum_matched, got {}",
            spec.kind
        )));
    }
    if spec.n_arms != 7 && spec.n_arms != 14 {
        return Err(EnvError::InvalidSpec(format!(
            "spectrum-matched environments use 7 or 14 slots, got {}",
            spec.n_arms
        )));
    }
    let (n, m) = (spec.n_users, spec.n_arms);
    let n_zero = (spec.zero_fraction * n as f64).round() as usize;
    for attempt in 0..target.max_attempts {
        let mut rng = rng_from_seed(derive_seed(spec.seed, attempt as u64));
        let base_shape: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
        let peak: Vec<f64> = (0..m).map(|_| rng.random_range(0.35..0.9)).collect();
        let secondary: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        let activity: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
        let archetype: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let loading: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.0)).collect();
        let noise = DMatrix::from_fn(n, m, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
        let zero_rows = rand::seq::index::sample(&mut rng, n, n_zero).into_vec();
        let mut is_zero = vec![false; n];
        for &i in &zero_rows {
            is_zero[i] = true;
        }
        let build = |base: f64| {
            DMatrix::from_fn(n, m, |i, j| {
                if is_zero[i] {
                    return 0.0;
                }
                let c = archetype[i];
                let bump = if j == c {
                    peak[c]
                } else if j == secondary[c] {
                    0.5 * peak[c]
                } else {
                    0.0
                };
                let mean = base * base_shape[j] + loading[i] * bump;
                (activity[i] * mean + noise[(i, j)]).clamp(0.0, 1.0)
            })
        };
        // σ₁/σ₂ grows with the shared base level.
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        if spectrum_ratios(&build(lo)).0 > target.top_ratio
            || spectrum_ratios(&build(hi)).0 < target.top_ratio
        {
            continue;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if spectrum_ratios(&build(mid)).0 > target.top_ratio {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let candidate = build(0.5 * (lo + hi));
        let (top, tail) = spectrum_ratios(&candidate);
        if top >= target.top_ratio_band.0
            && top <= target.top_ratio_band.1
            && tail >= target.min_tail_ratio
        {
            return RewardMatrix::new(candidate, spec.rank);
        }
    }
    Err(EnvError::GenerationFailed(target.max_attempts))
}

/// Round-robin arrival: `t mod n_users`.
pub fn next_user(t: usize, n_users: usize) -> usize {
    t % n_users
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrivalMode {
    #[default]
    RoundRobin,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub round: usize,
    pub user: usize,
}

impl ArrivalMode {
    pub fn arrival(self, t: usize, n_users: usize, rng: &mut SimRng) -> Arrival {
        let user = match self {
            ArrivalMode::RoundRobin => next_user(t, n_users),
            ArrivalMode::UniformRandom => rng.random_range(0..n_users),
        };
        Arrival { round: t, user }
    }
}

/// Bernoulli(p) reward.
pub fn sample_reward(p: f64, rng: &mut SimRng) -> Result<u8, EnvError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EnvError::Domain(p));
    }
    Ok(u8::from(rng.random::<f64>() < p))
}
