//! MAP detection of one on-off keyed bit from the conducted-current readout.
//!
//! Within a bit the receiver samples the receptor array `n` times, one
//! window of length `dt` apart. The hidden path is `s_1 ~ init` followed by
//! `n - 1` transitions under the hypothesised input, and window `i` reads the
//! number of open receptors in `s_i`. Likelihoods are computed with a forward
//! recursion restricted to the states compatible with each reading.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::ensemble::{state_label, CombinationState, InitialMode, ReceptorArray};
use crate::error::{Error, Result};
use crate::photon_noise::PhotonModel;
use crate::report::{csv_field, fmt_num};

/// Largest number of state sequences `posterior_table` will enumerate.
pub const TABLE_ROW_LIMIT: u128 = 6561;

/// What a window reads from the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Readout {
    /// Number of open receptors.
    #[default]
    Count,
    /// 1 if any receptor is open.
    Binary,
}

impl Readout {
    pub fn as_str(self) -> &'static str {
        match self {
            Readout::Count => "count",
            Readout::Binary => "binary",
        }
    }
}

impl FromStr for Readout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "count" => Ok(Readout::Count),
            "binary" => Ok(Readout::Binary),
            other => Err(format!("unknown readout `{other}` (expected count|binary)")),
        }
    }
}

/// Observation symbol of a combination state: its open-receptor count.
pub fn emission(state: &CombinationState) -> u32 {
    state.open_count()
}

pub fn emission_with(state: &CombinationState, readout: Readout) -> u32 {
    match readout {
        Readout::Count => emission(state),
        Readout::Binary => emission(state).min(1),
    }
}

/// Per-window readings `y_1..y_n` of one bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation(Vec<u32>);

impl Observation {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for Observation {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TieRule {
    /// Fair pseudorandom bit.
    #[default]
    Coin,
    /// Output the erasure symbol.
    Erasure,
}

impl TieRule {
    pub fn as_str(self) -> &'static str {
        match self {
            TieRule::Coin => "coin",
            TieRule::Erasure => "erasure",
        }
    }
}

impl FromStr for TieRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coin" => Ok(TieRule::Coin),
            "erasure" => Ok(TieRule::Erasure),
            other => Err(format!("unknown tie rule `{other}` (expected coin|erasure)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Zero,
    One,
    Erasure,
}

impl Decision {
    pub fn bit(self) -> Option<bool> {
        match self {
            Decision::Zero => Some(false),
            Decision::One => Some(true),
            Decision::Erasure => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// `p(x = 1)`.
    pub prior: f64,
    pub tie: TieRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            prior: 0.5,
            tie: TieRule::Coin,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.prior) {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                key: "prior".into(),
                message: format!("prior must lie in [0, 1], got {}", self.prior),
            })
        }
    }
}

/// Outcome of the MAP comparison before any tie is broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapOutcome {
    Zero,
    One,
    Tie,
}

impl MapOutcome {
    pub fn resolve<R: Rng + ?Sized>(self, tie: TieRule, rng: &mut R) -> Decision {
        match (self, tie) {
            (MapOutcome::Zero, _) => Decision::Zero,
            (MapOutcome::One, _) => Decision::One,
            (MapOutcome::Tie, TieRule::Erasure) => Decision::Erasure,
            (MapOutcome::Tie, TieRule::Coin) => {
                if rng.random::<bool>() {
                    Decision::One
                } else {
                    Decision::Zero
                }
            }
        }
    }
}

/// Compares the prior-weighted likelihoods `p(x=1) L1` and `p(x=0) L0`.
/// `None` when both vanish.
pub fn map_outcome(l1: f64, l0: f64, prior: f64) -> Option<MapOutcome> {
    let w1 = prior * l1;
    let w0 = (1.0 - prior) * l0;
    if w1 + w0 <= 0.0 {
        None
    } else if w1 > w0 {
        Some(MapOutcome::One)
    } else if w1 < w0 {
        Some(MapOutcome::Zero)
    } else {
        Some(MapOutcome::Tie)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorResult {
    /// `p(x = 1 | y)`; NaN when infeasible.
    pub p1: f64,
    /// `p(x = 0 | y)`; NaN when infeasible.
    pub p0: f64,
    pub feasible: bool,
    pub outcome: Option<MapOutcome>,
    pub decision: Option<Decision>,
}

/// Everything needed to evaluate `p(y | x)` for one bit.
#[derive(Debug, Clone)]
pub struct BitChannel {
    states: Arc<Vec<CombinationState>>,
    readout: Readout,
    symbols: Vec<u32>,
    by_symbol: Vec<Vec<usize>>,
    init: Vec<f64>,
    /// Row-major lumped matrices for x = 0 and x = 1.
    transitions: [Vec<f64>; 2],
    support: DMatrix<bool>,
    n_obs: usize,
}

impl BitChannel {
    /// Builds the per-bit model. Under photon noise the '1' transition
    /// matrix is the photon-count average of the lumped matrices; counts are
    /// i.i.d. per window and independent of the state, so the readout
    /// process is again a hidden Markov chain with that matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        array: &ReceptorArray,
        x_on: f64,
        photons: Option<&PhotonModel>,
        init_mode: &InitialMode,
        mean_intensity: f64,
        readout: Readout,
        n_obs: usize,
    ) -> Result<Self> {
        if n_obs == 0 {
            return Err(Error::InvalidParameter {
                key: "n".into(),
                message: "at least one observation per bit is required".into(),
            });
        }
        let off = array.model_at(0.0)?.lumped().clone();
        let on = match photons {
            None => array.model_at(x_on)?.lumped().clone(),
            Some(model) => photon_averaged_matrix(array, model)?,
        };
        let init = array.initial_distribution(init_mode, mean_intensity)?;
        // every positive intensity shares the zero pattern of x_on
        let support = array.structural_support(x_on)?;
        Ok(Self::from_parts(
            Arc::new(array.states().to_vec()),
            readout,
            init,
            &off,
            &on,
            support,
            n_obs,
        ))
    }

    /// Assembles a channel from explicit lumped matrices.
    pub fn from_parts(
        states: Arc<Vec<CombinationState>>,
        readout: Readout,
        init: Vec<f64>,
        off: &DMatrix<f64>,
        on: &DMatrix<f64>,
        support: DMatrix<bool>,
        n_obs: usize,
    ) -> Self {
        let symbols: Vec<u32> = states.iter().map(|s| emission_with(s, readout)).collect();
        let n_symbols = symbols.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut by_symbol = vec![Vec::new(); n_symbols];
        for (i, &y) in symbols.iter().enumerate() {
            by_symbol[y as usize].push(i);
        }
        let row_major = |m: &DMatrix<f64>| {
            let k = m.nrows();
            (0..k * k).map(|idx| m[(idx / k, idx % k)]).collect::<Vec<f64>>()
        };
        Self {
            states,
            readout,
            symbols,
            by_symbol,
            init,
            transitions: [row_major(off), row_major(on)],
            support,
            n_obs,
        }
    }

    pub fn states(&self) -> &[CombinationState] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn n_symbols(&self) -> usize {
        self.by_symbol.len()
    }

    pub fn symbol(&self, state: usize) -> u32 {
        self.symbols[state]
    }

    pub fn states_with_symbol(&self, y: u32) -> &[usize] {
        self.by_symbol.get(y as usize).map_or(&[], Vec::as_slice)
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn transition(&self, bit: bool, from: usize, to: usize) -> f64 {
        self.transitions[bit as usize][from * self.n_states() + to]
    }

    /// Whether one photocycle step can take `from` to `to`.
    pub fn structurally_allowed(&self, from: usize, to: usize) -> bool {
        self.support[(from, to)]
    }

    pub fn check(&self, y: &Observation) -> Result<()> {
        if y.len() != self.n_obs {
            return Err(Error::InvalidObservation(format!(
                "expected {} readings, got {}",
                self.n_obs,
                y.len()
            )));
        }
        if let Some(v) = y.as_slice().iter().find(|&&v| v as usize >= self.n_symbols()) {
            return Err(Error::InvalidObservation(format!(
                "reading {v} exceeds the largest symbol {}",
                self.n_symbols() - 1
            )));
        }
        Ok(())
    }

    /// Forward weights over the states reading `y[0]`.
    pub(crate) fn forward_start(&self, y0: u32) -> Vec<f64> {
        self.states_with_symbol(y0).iter().map(|&s| self.init[s]).collect()
    }

    /// Advances forward weights from the states reading `prev` to those
    /// reading `next`.
    pub(crate) fn forward_step(&self, bit: bool, alpha: &[f64], prev: u32, next: u32) -> Vec<f64> {
        let k = self.n_states();
        let t = &self.transitions[bit as usize];
        let from = self.states_with_symbol(prev);
        self.states_with_symbol(next)
            .iter()
            .map(|&to| {
                from.iter()
                    .zip(alpha)
                    .filter(|(_, &a)| a > 0.0)
                    .map(|(&s, &a)| a * t[s * k + to])
                    .sum()
            })
            .collect()
    }
}

/// Photon-count average `sum_f Pois(f; lambda) P_c(f X)` of the lumped matrix.
pub fn photon_averaged_matrix(array: &ReceptorArray, photons: &PhotonModel) -> Result<DMatrix<f64>> {
    let k = array.states().len();
    let mut acc = DMatrix::zeros(k, k);
    for (count, weight) in photons.count_support().iter() {
        let model = array.model_at(photons.intensity_of_count(count))?;
        acc += model.lumped() * weight;
    }
    Ok(acc)
}

/// `p(y | x)` by the forward recursion.
pub fn likelihood(y: &Observation, bit: bool, channel: &BitChannel) -> Result<f64> {
    channel.check(y)?;
    Ok(likelihood_unchecked(y.as_slice(), bit, channel))
}

pub(crate) fn likelihood_unchecked(y: &[u32], bit: bool, channel: &BitChannel) -> f64 {
    let mut alpha = channel.forward_start(y[0]);
    for w in y.windows(2) {
        if alpha.iter().all(|&a| a == 0.0) {
            return 0.0;
        }
        alpha = channel.forward_step(bit, &alpha, w[0], w[1]);
    }
    alpha.iter().sum()
}

/// Posterior probabilities and MAP outcome of `y`, without breaking ties.
pub fn posterior_probabilities(
    y: &Observation,
    channel: &BitChannel,
    prior: f64,
) -> Result<PosteriorResult> {
    let l1 = likelihood(y, true, channel)?;
    let l0 = likelihood(y, false, channel)?;
    Ok(posterior_from_likelihoods(l1, l0, prior))
}

pub fn posterior_from_likelihoods(l1: f64, l0: f64, prior: f64) -> PosteriorResult {
    let w1 = prior * l1;
    let w0 = (1.0 - prior) * l0;
    let evidence = w1 + w0;
    let outcome = map_outcome(l1, l0, prior);
    if evidence > 0.0 {
        PosteriorResult {
            p1: w1 / evidence,
            p0: w0 / evidence,
            feasible: true,
            outcome,
            decision: None,
        }
    } else {
        PosteriorResult {
            p1: f64::NAN,
            p0: f64::NAN,
            feasible: false,
            outcome: None,
            decision: None,
        }
    }
}

/// Bayes posterior of `y` with the MAP decision; ties are broken per
/// `config.tie`, drawing from `rng` under the coin rule.
pub fn posterior<R: Rng + ?Sized>(
    y: &Observation,
    channel: &BitChannel,
    config: &DetectorConfig,
    rng: &mut R,
) -> Result<PosteriorResult> {
    config.validate()?;
    let mut result = posterior_probabilities(y, channel, config.prior)?;
    let outcome = result.outcome.ok_or(Error::InfeasibleObservation)?;
    result.decision = Some(outcome.resolve(config.tie, rng));
    Ok(result)
}

/// One state sequence of the a-posteriori table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub sequence: Vec<usize>,
    pub y: Observation,
    /// `(p(x=1|y), p(x=0|y))` for feasible rows.
    pub posterior: Option<(f64, f64)>,
    pub feasible: bool,
}

/// Enumerates every state sequence of one bit with its emitted readings and
/// the posterior those readings induce.
///
/// A sequence is feasible when its first state has initial mass and every
/// step is a single photocycle move (or a self-loop) of each receptor.
pub fn posterior_table(channel: &BitChannel, config: &DetectorConfig) -> Result<Vec<TableRow>> {
    config.validate()?;
    let k = channel.n_states() as u128;
    let rows = k.checked_pow(channel.n_obs() as u32).unwrap_or(u128::MAX);
    if rows > TABLE_ROW_LIMIT {
        return Err(Error::TableTooLarge {
            rows,
            limit: TABLE_ROW_LIMIT,
        });
    }
    let n = channel.n_obs();
    let k = channel.n_states();
    let mut out = Vec::with_capacity(rows as usize);
    let mut seq = vec![0usize; n];
    loop {
        let y: Vec<u32> = seq.iter().map(|&s| channel.symbol(s)).collect();
        let feasible = channel.init()[seq[0]] > 0.0
            && seq.windows(2).all(|w| channel.structurally_allowed(w[0], w[1]));
        let posterior = if feasible {
            let l1 = likelihood_unchecked(&y, true, channel);
            let l0 = likelihood_unchecked(&y, false, channel);
            let r = posterior_from_likelihoods(l1, l0, config.prior);
            r.feasible.then_some((r.p1, r.p0))
        } else {
            None
        };
        out.push(TableRow {
            sequence: seq.clone(),
            y: Observation(y),
            posterior,
            feasible,
        });

        // odometer increment, first position most significant
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < k {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// CSV with columns `sequence,y,p_x1,p_x0,feasible`.
pub fn table_csv(channel: &BitChannel, rows: &[TableRow]) -> String {
    let mut out = String::from("sequence,y,p_x1,p_x0,feasible\n");
    for row in rows {
        let seq: Vec<String> = row
            .sequence
            .iter()
            .map(|&s| state_label(channel.states(), s))
            .collect();
        let (p1, p0) = match row.posterior {
            Some((p1, p0)) => (fmt_num(p1), fmt_num(p0)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&seq.join("-")),
            row.y,
            p1,
            p0,
            row.feasible
        ));
    }
    out
}
