//! Single-receptor photocycle kinetics.
//!
//! The receptor cycles C1 -> O2 -> D3 -> C1. Only the C1 -> O2 rate depends on
//! the light intensity `x` (linearly); every reverse transition is forbidden.
//! A rate matrix `Q` is turned into a one-step transition matrix either with
//! the first-order Euler rule `P = I + dt Q` or with the exact propagator
//! `P = exp(dt Q)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance for row sums and entry bounds of stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Residual tolerance for `pi P = pi`.
pub const STEADY_STATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReceptorState {
    Closed = 0,
    Open = 1,
    Desensitized = 2,
}

impl ReceptorState {
    pub const ALL: [ReceptorState; 3] = [
        ReceptorState::Closed,
        ReceptorState::Open,
        ReceptorState::Desensitized,
    ];

    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ReceptorState::Closed => "C1",
            ReceptorState::Open => "O2",
            ReceptorState::Desensitized => "D3",
        }
    }

    pub fn is_conducting(self) -> bool {
        self == ReceptorState::Open
    }
}

impl fmt::Display for ReceptorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Photocycle rate constants.
///
/// `q12_per_lumen` is multiplied by the intensity in lumens; `q23` and `q31`
/// are light-independent rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub q12_per_lumen: f64,
    pub q23: f64,
    pub q31: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            q12_per_lumen: 5.0e3,
            q23: 50.0,
            q31: 17.0,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("q12_per_lumen", self.q12_per_lumen),
            ("q23", self.q23),
            ("q31", self.q31),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::NegativeRate { name, value });
            }
        }
        Ok(())
    }
}

/// Continuous-time generator of the photocycle at a fixed intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    q: DMatrix<f64>,
    intensity: f64,
}

impl RateMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Largest exit rate `max_i |Q_ii|`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.q[(i, i)].abs())
            .fold(0.0, f64::max)
    }

    /// Largest step for which `I + dt Q` is a valid transition matrix.
    pub fn euler_step_bound(&self) -> f64 {
        let rate = self.max_exit_rate();
        if rate == 0.0 {
            f64::INFINITY
        } else {
            1.0 / rate
        }
    }
}

pub fn build_rate_matrix(params: &RateParams, intensity: f64) -> Result<RateMatrix> {
    params.validate()?;
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(Error::NegativeIntensity(intensity));
    }
    let q12 = params.q12_per_lumen * intensity;
    #[rustfmt::skip]
    let q = DMatrix::from_row_slice(3, 3, &[
        -q12,  q12,         0.0,
         0.0, -params.q23,  params.q23,
         params.q31, 0.0,  -params.q31,
    ]);
    Ok(RateMatrix { q, intensity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Discretization {
    /// `P = I + dt Q`; rejected when any entry leaves [0, 1].
    Euler,
    /// `P = exp(dt Q)`.
    #[default]
    Exact,
}

impl Discretization {
    pub fn as_str(self) -> &'static str {
        match self {
            Discretization::Euler => "euler",
            Discretization::Exact => "exact",
        }
    }
}

impl fmt::Display for Discretization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Discretization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" => Ok(Discretization::Euler),
            "exact" => Ok(Discretization::Exact),
            other => Err(format!("unknown discretization `{other}` (expected euler|exact)")),
        }
    }
}

/// Row-stochastic one-step matrix together with the step it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: DMatrix<f64>,
    dt: f64,
    mode: Discretization,
}

impl TransitionMatrix {
    /// Wraps `p` after checking entries lie in [0, 1] and rows sum to 1.
    pub fn new(p: DMatrix<f64>, dt: f64, mode: Discretization) -> Result<Self> {
        check_stochastic(&p).map_err(Error::InvalidSingle)?;
        Ok(Self { p, dt, mode })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.p[(from, to)]
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode(&self) -> Discretization {
        self.mode
    }
}

/// Checks the invariants of a row-stochastic matrix at [`STOCHASTIC_TOL`].
pub fn check_stochastic(p: &DMatrix<f64>) -> std::result::Result<(), String> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(format!("matrix is {}x{}, expected square", p.nrows(), p.ncols()));
    }
    for i in 0..p.nrows() {
        let mut sum = 0.0;
        for j in 0..p.ncols() {
            let v = p[(i, j)];
            if !v.is_finite() || !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v) {
                return Err(format!("entry ({i},{j}) = {v} is not a probability"));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(format!("row {i} sums to {sum}"));
        }
    }
    Ok(())
}

pub fn discretize_euler(q: &RateMatrix, dt: f64) -> Result<TransitionMatrix> {
    check_step(dt)?;
    let k = q.dim();
    let p = DMatrix::identity(k, k) + q.matrix() * dt;
    for i in 0..k {
        for j in 0..k {
            let v = p[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidStep {
                    dt,
                    bound: q.euler_step_bound(),
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    TransitionMatrix::new(p, dt, Discretization::Euler)
}

/// Exact propagator `exp(dt Q)` by uniformization with scaling and squaring.
///
/// The step is halved until `Lambda h <= 1/2`, where `Lambda = max|Q_ii|`; the
/// Poisson-weighted series of the uniformized chain `R = I + Q / Lambda` is
/// then summed to below 1e-18 and squared back up. Every intermediate matrix
/// is nonnegative, and rows are renormalized after each squaring.
pub fn discretize_exact(q: &RateMatrix, dt: f64) -> Result<TransitionMatrix> {
    check_step(dt)?;
    let k = q.dim();
    let rate = q.max_exit_rate();
    if rate == 0.0 {
        return TransitionMatrix::new(DMatrix::identity(k, k), dt, Discretization::Exact);
    }

    let mut squarings = 0u32;
    let mut theta = rate * dt;
    while theta > 0.5 {
        theta *= 0.5;
        squarings += 1;
    }

    let r = DMatrix::identity(k, k) + q.matrix() / rate;
    let mut weight = (-theta).exp();
    let mut power = DMatrix::identity(k, k);
    let mut p = &power * weight;
    let mut term = 0u32;
    while weight > 1e-18 || (term as f64) < theta {
        term += 1;
        power = &power * &r;
        weight *= theta / term as f64;
        p += &power * weight;
    }
    clamp_and_normalize_rows(&mut p);

    for _ in 0..squarings {
        p = &p * &p;
        clamp_and_normalize_rows(&mut p);
    }
    TransitionMatrix::new(p, dt, Discretization::Exact)
}

pub fn discretize(q: &RateMatrix, dt: f64, mode: Discretization) -> Result<TransitionMatrix> {
    match mode {
        Discretization::Euler => discretize_euler(q, dt),
        Discretization::Exact => discretize_exact(q, dt),
    }
}

fn check_step(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveStep(dt))
    }
}

fn clamp_and_normalize_rows(p: &mut DMatrix<f64>) {
    for i in 0..p.nrows() {
        let mut row = p.row_mut(i);
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
}

/// A probability vector over the states of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVector(Vec<f64>);

impl OccupancyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {v} is negative or not finite")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn point_mass(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One step of `p_{i+1} = p_i P`.
    pub fn propagate(&self, p: &TransitionMatrix) -> Self {
        let k = self.0.len();
        let next = (0..k)
            .map(|j| (0..k).map(|i| self.0[i] * p.get(i, j)).sum())
            .collect();
        Self(next)
    }
}

impl std::ops::Index<usize> for OccupancyVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Closed communicating classes of the chain, each sorted, ordered by their
/// smallest state.
pub fn recurrent_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let k = p.nrows();
    let mut reach = vec![vec![false; k]; k];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
        for (j, r) in row.iter_mut().enumerate() {
            if p[(i, j)] > 0.0 {
                *r = true;
            }
        }
    }
    for m in 0..k {
        for i in 0..k {
            if reach[i][m] {
                let via = reach[m].clone();
                for (r, v) in reach[i].iter_mut().zip(via) {
                    *r |= v;
                }
            }
        }
    }

    let mut assigned = vec![false; k];
    let mut classes = Vec::new();
    for i in 0..k {
        if assigned[i] {
            continue;
        }
        let class: Vec<usize> = (0..k).filter(|&j| reach[i][j] && reach[j][i]).collect();
        class.iter().for_each(|&j| assigned[j] = true);
        let closed = (0..k).all(|j| !reach[i][j] || reach[j][i]);
        if closed {
            classes.push(class);
        }
    }
    classes
}

/// Unique stationary distribution of a row-stochastic matrix.
///
/// Solves `(P^T - I) pi = 0` with one equation replaced by `sum(pi) = 1`.
pub fn steady_state(p: &TransitionMatrix) -> Result<OccupancyVector> {
    stationary_of(p.matrix())
}

pub(crate) fn stationary_of(p: &DMatrix<f64>) -> Result<OccupancyVector> {
    let classes = recurrent_classes(p);
    if classes.len() != 1 {
        return Err(Error::NonUniqueStationary { classes });
    }
    let k = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(k, k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let solution = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonUniqueStationary { classes: classes.clone() })?;

    let mut pi: Vec<f64> = solution.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= sum);
    OccupancyVector::new(pi)
}

/// Stationary distribution of the photocycle at intensity `x`, independent of
/// the step size.
pub fn steady_state_at(
    params: &RateParams,
    intensity: f64,
    dt: f64,
    mode: Discretization,
) -> Result<OccupancyVector> {
    let q = build_rate_matrix(params, intensity)?;
    steady_state(&discretize(&q, dt, mode)?)
}
