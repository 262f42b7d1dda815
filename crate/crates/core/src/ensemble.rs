//! Lumped chains for `N` independent, identical receptors.
//!
//! Receptors are exchangeable, so the joint state is summarised by how many
//! receptors occupy each photocycle state. A row of the lumped matrix is the
//! multinomial convolution of the single-receptor rows: the `a` receptors in
//! C1 move according to row C1, the `b` in O2 according to row O2, and so on.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinetics::{
    self, build_rate_matrix, check_stochastic, discretize, Discretization, OccupancyVector,
    RateParams, ReceptorState, TransitionMatrix,
};
use crate::report::{csv_field, fmt_num};

/// Occupancy counts, indexed like [`ReceptorState`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CombinationState(Vec<u32>);

impl CombinationState {
    pub fn new(counts: Vec<u32>) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn count(&self, state: ReceptorState) -> u32 {
        self.0.get(state.index()).copied().unwrap_or(0)
    }

    pub fn open_count(&self) -> u32 {
        self.count(ReceptorState::Open)
    }
}

impl fmt::Display for CombinationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Number of ways to place `n` receptors into `k` states, `C(n+k-1, k-1)`.
pub fn combination_count(n: u32, k: u32) -> u128 {
    binomial(u128::from(n + k).saturating_sub(1), u128::from(k.saturating_sub(1)))
}

pub(crate) fn binomial(n: u128, r: u128) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// All occupancy vectors of `n` receptors over `k` states, lexicographically
/// descending (so for two receptors the order is (2,0,0), (1,1,0), (1,0,1),
/// (0,2,0), (0,1,1), (0,0,2)).
pub fn enumerate_combinations(n: u32, k: usize) -> Vec<CombinationState> {
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let mut current = vec![0u32; k];
    fill_descending(n, 0, &mut current, &mut out);
    out
}

fn fill_descending(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<CombinationState>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(CombinationState(current.clone()));
        return;
    }
    for take in (0..=remaining).rev() {
        current[pos] = take;
        fill_descending(remaining - take, pos + 1, current, out);
    }
}

/// Display label for a combination state: C1/O2/D3 for one receptor, the
/// letters A.. for two receptors over three states, tuples otherwise.
pub fn state_label(states: &[CombinationState], index: usize) -> String {
    let state = &states[index];
    match (state.total(), state.counts().len()) {
        (1, 3) => {
            let pos = state.counts().iter().position(|&c| c == 1).unwrap_or(0);
            ReceptorState::ALL[pos].label().to_string()
        }
        (2, 3) => char::from(b'A' + index as u8).to_string(),
        _ => state.to_string(),
    }
}

/// Lumped chain over occupancy counts.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    n_receptors: u32,
    states: Arc<Vec<CombinationState>>,
    index: Arc<HashMap<CombinationState, usize>>,
    single: TransitionMatrix,
    lumped: DMatrix<f64>,
}

impl EnsembleModel {
    pub fn n_receptors(&self) -> u32 {
        self.n_receptors
    }

    pub fn states(&self) -> &[CombinationState] {
        &self.states
    }

    pub fn index_of(&self, state: &CombinationState) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn single(&self) -> &TransitionMatrix {
        &self.single
    }

    pub fn lumped(&self) -> &DMatrix<f64> {
        &self.lumped
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn label(&self, index: usize) -> String {
        state_label(&self.states, index)
    }

    /// Writes the lumped matrix as CSV with combination labels as headers.
    pub fn to_csv(&self) -> String {
        let labels: Vec<String> = (0..self.len()).map(|i| csv_field(&self.label(i))).collect();
        let mut out = String::from("from");
        for l in &labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.len() {
                out.push(',');
                out.push_str(&fmt_num(self.lumped[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the lumped matrix of `n` receptors from a one-step single-receptor
/// matrix.
pub fn build_combined_matrix(single: &TransitionMatrix, n: u32) -> Result<EnsembleModel> {
    let states = Arc::new(enumerate_combinations(n, single.dim()));
    let index = Arc::new(index_states(&states));
    build_with_states(single, n, states, index)
}

fn index_states(states: &[CombinationState]) -> HashMap<CombinationState, usize> {
    states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect()
}

fn build_with_states(
    single: &TransitionMatrix,
    n: u32,
    states: Arc<Vec<CombinationState>>,
    index: Arc<HashMap<CombinationState, usize>>,
) -> Result<EnsembleModel> {
    check_stochastic(single.matrix()).map_err(Error::InvalidSingle)?;
    if n == 0 {
        return Err(Error::InvalidParameter {
            key: "receptors".into(),
            message: "at least one receptor is required".into(),
        });
    }
    let lumped = lump(single.matrix(), &states, &index);
    Ok(EnsembleModel {
        n_receptors: n,
        states,
        index,
        single: single.clone(),
        lumped,
    })
}

fn lump(
    p: &DMatrix<f64>,
    states: &[CombinationState],
    index: &HashMap<CombinationState, usize>,
) -> DMatrix<f64> {
    let k = p.nrows();
    let size = states.len();
    let mut lumped = DMatrix::zeros(size, size);
    for (row, from) in states.iter().enumerate() {
        // ordered maps keep the floating-point summation order reproducible
        let mut partial: BTreeMap<Vec<u32>, f64> = BTreeMap::from([(vec![0u32; k], 1.0)]);
        for (source, &m) in from.counts().iter().enumerate() {
            if m == 0 {
                continue;
            }
            let moves = multinomial_moves(m, p.row(source).iter().copied().collect());
            let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            for (acc, w) in &partial {
                for (dest, q) in &moves {
                    let key: Vec<u32> = acc.iter().zip(dest).map(|(a, b)| a + b).collect();
                    *next.entry(key).or_insert(0.0) += w * q;
                }
            }
            partial = next;
        }
        for (counts, w) in partial {
            let col = index[&CombinationState(counts)];
            lumped[(row, col)] += w;
        }
    }
    lumped
}

/// Distribution of destination counts when `m` receptors each move per `row`.
fn multinomial_moves(m: u32, row: Vec<f64>) -> Vec<(Vec<u32>, f64)> {
    let mut log_fact = vec![0.0f64; m as usize + 1];
    for i in 1..=m as usize {
        log_fact[i] = log_fact[i - 1] + (i as f64).ln();
    }
    enumerate_combinations(m, row.len())
        .into_iter()
        .map(|dest| {
            let mut coef = log_fact[m as usize];
            let mut prod = 1.0;
            for (j, &d) in dest.counts().iter().enumerate() {
                coef -= log_fact[d as usize];
                prod *= row[j].powi(d as i32);
            }
            (dest.0, coef.exp().round() * prod)
        })
        .collect()
}

/// Multinomial lumping of a single-receptor distribution:
/// `Pr[(a,b,c)] = N!/(a! b! c!) pi_1^a pi_2^b pi_3^c`.
pub fn lump_distribution(states: &[CombinationState], single: &OccupancyVector) -> Vec<f64> {
    states
        .iter()
        .map(|s| {
            let n = s.total();
            let mut coef = 1.0f64;
            let mut used = 0u32;
            let mut prod = 1.0;
            for (j, &c) in s.counts().iter().enumerate() {
                for t in 1..=c {
                    coef *= f64::from(used + t) / f64::from(t);
                }
                used += c;
                prod *= single[j].powi(c as i32);
            }
            debug_assert_eq!(used, n);
            coef.round() * prod
        })
        .collect()
}

/// How the receptor array is initialised at the start of each bit.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMode {
    /// Stationary distribution at the time-averaged intensity.
    SteadyAverage,
    /// Stationary distribution with the light off (every receptor in C1).
    SteadyOff,
    /// Explicit single-receptor distribution, lumped multinomially.
    Custom(Vec<f64>),
}

impl InitialMode {
    pub fn uniform() -> Self {
        InitialMode::Custom(vec![1.0 / 3.0; 3])
    }
}

impl fmt::Display for InitialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialMode::SteadyAverage => f.write_str("steady_avg"),
            InitialMode::SteadyOff => f.write_str("steady_off"),
            InitialMode::Custom(v) => {
                let parts: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
                write!(f, "custom({})", parts.join(";"))
            }
        }
    }
}

/// `N` receptors sharing one kinetic parameterisation and step size.
///
/// Produces per-intensity [`EnsembleModel`]s that share the state list.
#[derive(Debug, Clone)]
pub struct ReceptorArray {
    params: RateParams,
    dt: f64,
    mode: Discretization,
    n_receptors: u32,
    states: Arc<Vec<CombinationState>>,
    index: Arc<HashMap<CombinationState, usize>>,
}

impl ReceptorArray {
    pub fn new(params: RateParams, dt: f64, mode: Discretization, n_receptors: u32) -> Result<Self> {
        params.validate()?;
        if n_receptors == 0 {
            return Err(Error::InvalidParameter {
                key: "receptors".into(),
                message: "at least one receptor is required".into(),
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonPositiveStep(dt));
        }
        let states = Arc::new(enumerate_combinations(n_receptors, ReceptorState::COUNT));
        let index = Arc::new(index_states(&states));
        Ok(Self {
            params,
            dt,
            mode,
            n_receptors,
            states,
            index,
        })
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode(&self) -> Discretization {
        self.mode
    }

    pub fn n_receptors(&self) -> u32 {
        self.n_receptors
    }

    pub fn states(&self) -> &[CombinationState] {
        &self.states
    }

    pub fn single_at(&self, intensity: f64) -> Result<TransitionMatrix> {
        discretize(&build_rate_matrix(&self.params, intensity)?, self.dt, self.mode)
    }

    pub fn model_at(&self, intensity: f64) -> Result<EnsembleModel> {
        let single = self.single_at(intensity)?;
        build_with_states(&single, self.n_receptors, self.states.clone(), self.index.clone())
    }

    /// Single-receptor distribution selected by `mode`.
    pub fn single_initial(&self, mode: &InitialMode, mean_intensity: f64) -> Result<OccupancyVector> {
        match mode {
            InitialMode::SteadyAverage => {
                kinetics::steady_state_at(&self.params, mean_intensity, self.dt, self.mode)
            }
            InitialMode::SteadyOff => kinetics::steady_state_at(&self.params, 0.0, self.dt, self.mode),
            InitialMode::Custom(v) => {
                if v.len() != ReceptorState::COUNT {
                    return Err(Error::InvalidDistribution(format!(
                        "custom initial distribution has {} entries, expected 3",
                        v.len()
                    )));
                }
                OccupancyVector::new(v.clone())
            }
        }
    }

    /// Lumped initial distribution over combination states.
    pub fn initial_distribution(&self, mode: &InitialMode, mean_intensity: f64) -> Result<Vec<f64>> {
        let single = self.single_initial(mode, mean_intensity)?;
        Ok(lump_distribution(&self.states, &single))
    }

    /// Zero pattern of one photocycle step under light: self-loops plus every
    /// transition with a positive rate at `intensity`.
    pub fn structural_support(&self, intensity: f64) -> Result<DMatrix<bool>> {
        let q = build_rate_matrix(&self.params, intensity)?;
        let k = q.dim();
        let mut pattern = DMatrix::zeros(k, k);
        for i in 0..k {
            let allowed: Vec<usize> = (0..k).filter(|&j| i == j || q.matrix()[(i, j)] > 0.0).collect();
            for &j in &allowed {
                pattern[(i, j)] = 1.0 / allowed.len() as f64;
            }
        }
        let lumped = lump(&pattern, &self.states, &self.index);
        Ok(lumped.map(|v| v > 0.0))
    }
}

/// Precomputed cumulative rows of a lumped matrix for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct StepKernel {
    size: usize,
    cumulative: Vec<f64>,
    last_positive: Vec<usize>,
}

impl StepKernel {
    pub fn new(lumped: &DMatrix<f64>) -> Self {
        let size = lumped.nrows();
        let mut cumulative = Vec::with_capacity(size * size);
        let mut last_positive = Vec::with_capacity(size);
        for i in 0..size {
            let mut acc = 0.0;
            let mut last = i;
            for j in 0..size {
                let p = lumped[(i, j)];
                if p > 0.0 {
                    last = j;
                }
                acc += p;
                cumulative.push(acc);
            }
            last_positive.push(last);
        }
        Self {
            size,
            cumulative,
            last_positive,
        }
    }

    /// Next state given a uniform draw `u` in [0, 1). Zero-probability
    /// destinations are never returned.
    pub fn next(&self, from: usize, u: f64) -> usize {
        let row = &self.cumulative[from * self.size..(from + 1) * self.size];
        row.iter()
            .position(|&c| c > u)
            .unwrap_or(self.last_positive[from])
    }
}

/// Inverse-CDF draw from a discrete distribution; never returns a zero-mass
/// index.
pub fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if acc > u {
            return i;
        }
    }
    last
}

/// A sampled path of combination states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// Indices into the array's state list, `s_0 ..= s_m`.
    pub states: Vec<usize>,
    /// Intensity applied on each of the `m` transitions.
    pub inputs: Vec<f64>,
    /// `(master seed, stream index)` the path was drawn from, if known.
    pub stream: Option<(u64, u64)>,
}

/// Reusable trajectory sampler; lumped matrices are built once per distinct
/// intensity and kept for later paths.
#[derive(Debug)]
pub struct TrajectorySampler<'a> {
    array: &'a ReceptorArray,
    kernels: HashMap<u64, StepKernel>,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(array: &'a ReceptorArray) -> Self {
        Self {
            array,
            kernels: HashMap::new(),
        }
    }

    /// Samples `s_0 ~ init`, then `s_i ~ P_c(inputs[i-1])[s_{i-1}, .]`.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        init: &[f64],
        inputs: &[f64],
        rng: &mut R,
    ) -> Result<TrajectorySample> {
        if init.len() != self.array.states().len() {
            return Err(Error::InvalidDistribution(format!(
                "initial distribution has {} entries, expected {}",
                init.len(),
                self.array.states().len()
            )));
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut current = sample_index(init, rng.random::<f64>());
        states.push(current);
        for &x in inputs {
            let kernel = match self.kernels.entry(x.to_bits()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(StepKernel::new(self.array.model_at(x)?.lumped()))
                }
            };
            current = kernel.next(current, rng.random::<f64>());
            states.push(current);
        }
        Ok(TrajectorySample {
            states,
            inputs: inputs.to_vec(),
            stream: None,
        })
    }
}

/// Samples `s_0 ~ init`, then `s_i ~ P_c(inputs[i-1])[s_{i-1}, .]`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    array: &ReceptorArray,
    init: &[f64],
    inputs: &[f64],
    rng: &mut R,
) -> Result<TrajectorySample> {
    TrajectorySampler::new(array).sample(init, inputs, rng)
}

/// [`sample_trajectory`] on the counter-derived stream `(master, index)`.
pub fn sample_trajectory_seeded(
    array: &ReceptorArray,
    init: &[f64],
    inputs: &[f64],
    master: u64,
    index: u64,
) -> Result<TrajectorySample> {
    let mut rng = crate::rng::stream(master, index);
    let mut sample = sample_trajectory(array, init, inputs, &mut rng)?;
    sample.stream = Some((master, index));
    Ok(sample)
}
