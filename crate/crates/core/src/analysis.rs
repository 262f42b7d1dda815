//! Error probabilities, Monte Carlo estimation, data rate and sweeps.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::detector::{
    likelihood_unchecked, map_outcome, BitChannel, Decision, DetectorConfig, MapOutcome, Observation,
    Readout, TieRule,
};
use crate::ensemble::{sample_index, InitialMode, ReceptorArray, StepKernel};
use crate::error::{Error, Result};
use crate::kinetics::{build_rate_matrix, discretize_euler, Discretization, RateParams};
use crate::photon_noise::{PhotonModel, PhotonSupport};
use crate::report::{csv_field, fmt_num};
use crate::rng::{derive_seed, StreamFactory, StreamRng};

/// Largest number of observation vectors the exact computation enumerates.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Largest truncated photon-count support the exact noisy computation uses.
pub const PHOTON_SUPPORT_LIMIT: usize = 20_000;

/// Bits simulated back to back on one stream in carryover mode.
pub const CARRYOVER_BLOCK: u64 = 1024;

const TRIAL_CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Noise {
    #[default]
    Off,
    /// Poisson photon counts with mean `lambda` per window.
    Poisson { lambda: f64 },
}

impl Noise {
    pub fn snr(&self) -> f64 {
        match self {
            Noise::Off => f64::INFINITY,
            Noise::Poisson { lambda } => lambda.sqrt(),
        }
    }
}

/// One fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rates: RateParams,
    /// Intensity of a '1' bit, lumens.
    pub x_on: f64,
    /// Observation window, seconds.
    pub dt: f64,
    /// Observations per bit.
    pub n_obs: usize,
    pub receptors: u32,
    /// `p(x = 1)`.
    pub prior: f64,
    pub mode: Discretization,
    pub init: InitialMode,
    pub tie: TieRule,
    pub readout: Readout,
    pub noise: Noise,
    /// Receptor state persists across bits instead of being redrawn.
    pub carryover: bool,
    pub trials: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rates: RateParams::default(),
            x_on: 1.0,
            dt: 1e-6,
            n_obs: 3,
            receptors: 1,
            prior: 0.5,
            mode: Discretization::Exact,
            init: InitialMode::SteadyAverage,
            tie: TieRule::Coin,
            readout: Readout::Count,
            noise: Noise::Off,
            carryover: false,
            trials: 100_000,
            seed: 1,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::InvalidParameter {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Checks every parameter; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("q12_per_lumen", self.rates.q12_per_lumen),
            ("q23", self.rates.q23),
            ("q31", self.rates.q31),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("rate must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.x_on.is_finite() && self.x_on >= 0.0) {
            return Err(invalid("x_on", format!("intensity must be finite and nonnegative, got {}", self.x_on)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("time step must be positive, got {}", self.dt)));
        }
        if self.n_obs == 0 {
            return Err(invalid("n", "at least one observation per bit is required"));
        }
        if self.receptors == 0 {
            return Err(invalid("receptors", "at least one receptor is required"));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(invalid("prior", format!("prior must lie in [0, 1], got {}", self.prior)));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "at least one trial is required"));
        }
        if let InitialMode::Custom(v) = &self.init {
            crate::kinetics::OccupancyVector::new(v.clone())
                .map_err(|e| invalid("init", e.to_string()))?;
            if v.len() != 3 {
                return Err(invalid("init", format!("custom distribution needs 3 entries, got {}", v.len())));
            }
        }
        if let Noise::Poisson { lambda } = self.noise {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(invalid("snr", format!("mean photon count must be nonnegative, got {lambda}")));
            }
        }
        if self.mode == Discretization::Euler {
            let x_max = self.max_intensity();
            let q = build_rate_matrix(&self.rates, x_max)?;
            if let Err(e) = discretize_euler(&q, self.dt) {
                return Err(invalid(
                    "dt",
                    format!(
                        "euler bound violated: dt = {} s exceeds 1/max|Q_ii| = {} s at x = {} lumen ({e})",
                        self.dt,
                        q.euler_step_bound(),
                        x_max
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Largest intensity any window can see (top of the photon support under noise).
    pub fn max_intensity(&self) -> f64 {
        match self.photon_model() {
            Some(model) => {
                let support = model.count_support();
                let top = support.first + support.len() as u64 - 1;
                model.intensity_of_count(top)
            }
            None => self.x_on,
        }
    }

    pub fn photon_model(&self) -> Option<PhotonModel> {
        match self.noise {
            Noise::Off => None,
            Noise::Poisson { lambda } => PhotonModel::new(lambda, self.x_on).ok(),
        }
    }

    /// Time-averaged intensity `p(x=1) x_on`.
    pub fn mean_intensity(&self) -> f64 {
        self.prior * self.x_on
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            prior: self.prior,
            tie: self.tie,
        }
    }

    pub fn receptor_array(&self) -> Result<ReceptorArray> {
        ReceptorArray::new(self.rates, self.dt, self.mode, self.receptors)
    }

    pub fn bit_channel(&self) -> Result<BitChannel> {
        self.validate()?;
        let array = self.receptor_array()?;
        let photons = self.photon_model();
        if let Some(model) = &photons {
            let len = model.count_support().len();
            if len > PHOTON_SUPPORT_LIMIT {
                return Err(Error::NoiseUnsupported(format!(
                    "photon support of {len} counts exceeds {PHOTON_SUPPORT_LIMIT}"
                )));
            }
        }
        BitChannel::new(
            &array,
            self.x_on,
            photons.as_ref(),
            &self.init,
            self.mean_intensity(),
            self.readout,
            self.n_obs,
        )
    }

    /// Bit duration `T = n dt`.
    pub fn total_time(&self) -> f64 {
        self.n_obs as f64 * self.dt
    }

    pub fn data_rate(&self) -> f64 {
        data_rate(self.n_obs, self.dt)
    }
}

/// `R = 1 / (n dt)` bits per second.
pub fn data_rate(n_obs: usize, dt: f64) -> f64 {
    1.0 / (n_obs as f64 * dt)
}

/// Exact error and erasure probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPe {
    pub pe: f64,
    pub erasure_rate: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Mass {
    error: f64,
    erasure: f64,
}

/// Exact MAP error probability by enumerating every observation vector.
///
/// `Pe = sum_x p(x) sum_{y : decide(y) != x} p(y | x)`. Under the coin rule a
/// tied `y` contributes half of its mass to each hypothesis' error; under the
/// erasure rule it counts fully as an error and as an erasure.
pub fn exact_error_probability(config: &ExperimentConfig) -> Result<ExactPe> {
    if config.carryover {
        return Err(Error::CarryoverUnsupported);
    }
    let channel = config.bit_channel()?;
    exact_error_for_channel(&channel, &config.detector())
}

pub fn exact_error_for_channel(channel: &BitChannel, detector: &DetectorConfig) -> Result<ExactPe> {
    detector.validate()?;
    let symbols = channel.n_symbols() as u128;
    let count = symbols.checked_pow(channel.n_obs() as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let masses: Vec<Mass> = (0..channel.n_symbols() as u32)
        .into_par_iter()
        .map(|y0| {
            let mut mass = Mass::default();
            let alpha = channel.forward_start(y0);
            descend(channel, detector, y0, 1, &alpha, &alpha, &mut mass);
            mass
        })
        .collect();
    let total = masses.iter().fold(Mass::default(), |acc, m| Mass {
        error: acc.error + m.error,
        erasure: acc.erasure + m.erasure,
    });
    Ok(ExactPe {
        pe: total.error,
        erasure_rate: total.erasure,
    })
}

fn descend(
    channel: &BitChannel,
    detector: &DetectorConfig,
    prev: u32,
    depth: usize,
    alpha1: &[f64],
    alpha0: &[f64],
    mass: &mut Mass,
) {
    let zero = |a: &[f64]| a.iter().all(|&v| v == 0.0);
    if zero(alpha1) && zero(alpha0) {
        return;
    }
    if depth == channel.n_obs() {
        let l1: f64 = alpha1.iter().sum();
        let l0: f64 = alpha0.iter().sum();
        let prior = detector.prior;
        let w1 = prior * l1;
        let w0 = (1.0 - prior) * l0;
        match map_outcome(l1, l0, prior) {
            Some(MapOutcome::One) => mass.error += w0,
            Some(MapOutcome::Zero) => mass.error += w1,
            Some(MapOutcome::Tie) => match detector.tie {
                TieRule::Coin => mass.error += 0.5 * (w1 + w0),
                TieRule::Erasure => {
                    mass.error += w1 + w0;
                    mass.erasure += w1 + w0;
                }
            },
            None => {}
        }
        return;
    }
    for next in 0..channel.n_symbols() as u32 {
        let a1 = channel.forward_step(true, alpha1, prev, next);
        let a0 = channel.forward_step(false, alpha0, prev, next);
        descend(channel, detector, next, depth + 1, &a1, &a0, mass);
    }
}

/// Monte Carlo estimate with its 95% binomial half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloPe {
    pub pe_sim: f64,
    pub ci95: f64,
    pub erasure_rate: f64,
    pub errors: u64,
    pub erasures: u64,
    pub trials: u64,
}

/// `1.96 sqrt(p (1 - p) / trials)`.
pub fn ci95_halfwidth(pe: f64, trials: u64) -> f64 {
    1.96 * (pe * (1.0 - pe) / trials as f64).sqrt()
}

enum OnKernel {
    Fixed(StepKernel),
    Photon {
        model: PhotonModel,
        support: PhotonSupport,
        kernels: Vec<StepKernel>,
        array: ReceptorArray,
    },
}

impl OnKernel {
    fn step(&self, from: usize, rng: &mut StreamRng) -> Result<usize> {
        match self {
            OnKernel::Fixed(k) => Ok(k.next(from, rng.random())),
            OnKernel::Photon {
                model,
                support,
                kernels,
                array,
            } => {
                let count = model.sample_photon_count(rng);
                let u = rng.random();
                if support.contains(count) {
                    Ok(kernels[(count - support.first) as usize].next(from, u))
                } else {
                    let lumped = array.model_at(model.intensity_of_count(count))?;
                    Ok(StepKernel::new(lumped.lumped()).next(from, u))
                }
            }
        }
    }
}

/// Per-bit simulator shared read-only by all workers.
struct BitSimulator {
    channel: BitChannel,
    detector: DetectorConfig,
    off: StepKernel,
    on: OnKernel,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    errors: u64,
    erasures: u64,
}

impl BitSimulator {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        let channel = config.bit_channel()?;
        let array = config.receptor_array()?;
        let off = StepKernel::new(array.model_at(0.0)?.lumped());
        let on = match config.photon_model() {
            None => OnKernel::Fixed(StepKernel::new(array.model_at(config.x_on)?.lumped())),
            Some(model) => {
                let support = model.count_support();
                let kernels = support
                    .iter()
                    .map(|(count, _)| {
                        array
                            .model_at(model.intensity_of_count(count))
                            .map(|m| StepKernel::new(m.lumped()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                OnKernel::Photon {
                    model,
                    support,
                    kernels,
                    array,
                }
            }
        };
        Ok(Self {
            channel,
            detector: config.detector(),
            off,
            on,
        })
    }

    fn step(&self, bit: bool, from: usize, rng: &mut StreamRng) -> Result<usize> {
        if bit {
            self.on.step(from, rng)
        } else {
            Ok(self.off.next(from, rng.random()))
        }
    }

    /// Runs the remaining `n - 1` windows from `first` and returns the last
    /// state together with the readings.
    fn observe(&self, bit: bool, first: usize, rng: &mut StreamRng, y: &mut Vec<u32>) -> Result<usize> {
        y.clear();
        let mut s = first;
        y.push(self.channel.symbol(s));
        for _ in 1..self.channel.n_obs() {
            s = self.step(bit, s, rng)?;
            y.push(self.channel.symbol(s));
        }
        Ok(s)
    }

    fn decide(
        &self,
        y: &[u32],
        cache: &mut HashMap<Vec<u32>, Option<MapOutcome>>,
        rng: &mut StreamRng,
    ) -> Option<Decision> {
        let outcome = *cache.entry(y.to_vec()).or_insert_with(|| {
            let l1 = likelihood_unchecked(y, true, &self.channel);
            let l0 = likelihood_unchecked(y, false, &self.channel);
            map_outcome(l1, l0, self.detector.prior)
        });
        outcome.map(|o| o.resolve(self.detector.tie, rng))
    }

    fn score(tally: &mut Tally, bit: bool, decision: Option<Decision>) {
        match decision {
            Some(Decision::Erasure) => {
                tally.errors += 1;
                tally.erasures += 1;
            }
            Some(d) if d.bit() == Some(bit) => {}
            _ => tally.errors += 1,
        }
    }

    /// Trials `range` with a fresh initial draw per bit; trial `t` uses stream `t`.
    fn run_reset(&self, factory: &StreamFactory, range: std::ops::Range<u64>) -> Result<Tally> {
        let mut tally = Tally::default();
        let mut cache = HashMap::new();
        let mut y = Vec::with_capacity(self.channel.n_obs());
        for trial in range {
            let mut rng = factory.stream(trial);
            let bit = rng.random::<f64>() < self.detector.prior;
            let first = sample_index(self.channel.init(), rng.random());
            self.observe(bit, first, &mut rng, &mut y)?;
            let decision = self.decide(&y, &mut cache, &mut rng);
            Self::score(&mut tally, bit, decision);
        }
        Ok(tally)
    }

    /// Block `block` of a carryover run: bits share one stream and the array
    /// state flows from one bit into the next.
    fn run_carryover_block(&self, factory: &StreamFactory, block: u64, bits: u64) -> Result<Tally> {
        let mut tally = Tally::default();
        let mut cache = HashMap::new();
        let mut y = Vec::with_capacity(self.channel.n_obs());
        let mut rng = factory.stream(block);
        let mut last: Option<usize> = None;
        for _ in 0..bits {
            let bit = rng.random::<f64>() < self.detector.prior;
            let first = match last {
                None => sample_index(self.channel.init(), rng.random()),
                Some(s) => self.step(bit, s, &mut rng)?,
            };
            last = Some(self.observe(bit, first, &mut rng, &mut y)?);
            let decision = self.decide(&y, &mut cache, &mut rng);
            Self::score(&mut tally, bit, decision);
        }
        Ok(tally)
    }
}

/// Monte Carlo bit error rate. Results depend only on the configuration and
/// seed, never on the number of worker threads.
pub fn monte_carlo_error(config: &ExperimentConfig) -> Result<MonteCarloPe> {
    let sim = BitSimulator::new(config)?;
    let factory = StreamFactory::new(config.seed);
    let trials = config.trials;

    let tallies: Vec<Result<Tally>> = if config.carryover {
        let blocks = trials.div_ceil(CARRYOVER_BLOCK);
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let bits = CARRYOVER_BLOCK.min(trials - b * CARRYOVER_BLOCK);
                sim.run_carryover_block(&factory, b, bits)
            })
            .collect()
    } else {
        let chunks = trials.div_ceil(TRIAL_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * TRIAL_CHUNK;
                sim.run_reset(&factory, start..(start + TRIAL_CHUNK).min(trials))
            })
            .collect()
    };

    let mut total = Tally::default();
    for t in tallies {
        let t = t?;
        total.errors += t.errors;
        total.erasures += t.erasures;
    }
    let pe_sim = total.errors as f64 / trials as f64;
    Ok(MonteCarloPe {
        pe_sim,
        ci95: ci95_halfwidth(pe_sim, trials),
        erasure_rate: total.erasures as f64 / trials as f64,
        errors: total.errors,
        erasures: total.erasures,
        trials,
    })
}

/// A grid point: the resolved config and the values of the swept keys.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub swept: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

impl SweepPoint {
    pub fn single(config: ExperimentConfig) -> Self {
        Self {
            swept: Vec::new(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub swept: String,
    pub value: String,
    pub n_obs: usize,
    pub dt: f64,
    pub receptors: u32,
    pub snr: f64,
    pub pe_sim: Option<f64>,
    pub pe_theory: Option<f64>,
    pub ci95: Option<f64>,
    pub erasure_rate: Option<f64>,
    pub trials: u64,
    pub data_rate: f64,
    pub total_time: f64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str =
    "swept,value,n,dt,receptors,snr,pe_sim,pe_theory,ci95,erasure_rate,trials,data_rate,total_time,error";

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        [
            csv_field(&self.swept),
            csv_field(&self.value),
            self.n_obs.to_string(),
            fmt_num(self.dt),
            self.receptors.to_string(),
            fmt_num(self.snr),
            opt(self.pe_sim),
            opt(self.pe_theory),
            opt(self.ci95),
            opt(self.erasure_rate),
            self.trials.to_string(),
            fmt_num(self.data_rate),
            fmt_num(self.total_time),
            csv_field(self.error.as_deref().unwrap_or("")),
        ]
        .join(",")
    }
}

impl fmt::Display for SweepRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv_line())
    }
}

/// What `sweep` computes at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub simulate: bool,
    pub theory: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            simulate: true,
            theory: true,
        }
    }
}

/// Evaluates one row. Point `index` simulates on seed
/// `derive_seed(config.seed, index)`.
pub fn evaluate_point(point: &SweepPoint, index: u64, options: SweepOptions) -> SweepRow {
    let cfg = &point.config;
    let mut row = SweepRow {
        swept: point.swept.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(";"),
        value: point.swept.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(";"),
        n_obs: cfg.n_obs,
        dt: cfg.dt,
        receptors: cfg.receptors,
        snr: cfg.noise.snr(),
        pe_sim: None,
        pe_theory: None,
        ci95: None,
        erasure_rate: None,
        trials: if options.simulate { cfg.trials } else { 0 },
        data_rate: cfg.data_rate(),
        total_time: cfg.total_time(),
        error: None,
    };
    if options.theory {
        // unsupported exact computations simply leave pe_theory empty
        match exact_error_probability(cfg) {
            Ok(exact) => {
                row.pe_theory = Some(exact.pe);
                if !options.simulate {
                    row.erasure_rate = Some(exact.erasure_rate);
                }
            }
            Err(
                Error::EnumerationTooLarge { .. } | Error::NoiseUnsupported(_) | Error::CarryoverUnsupported,
            ) => {}
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    if options.simulate && row.error.is_none() {
        let mut seeded = cfg.clone();
        seeded.seed = derive_seed(cfg.seed, index);
        match monte_carlo_error(&seeded) {
            Ok(mc) => {
                row.pe_sim = Some(mc.pe_sim);
                row.ci95 = Some(mc.ci95);
                row.erasure_rate = Some(mc.erasure_rate);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}

/// One row per grid point in grid order; failures are recorded in the row.
pub fn sweep(points: &[SweepPoint], options: SweepOptions) -> Vec<SweepRow> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| evaluate_point(p, i as u64, options))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// `p(x = 1 | y = 0...0)` for the configured channel.
pub fn silent_posterior(config: &ExperimentConfig) -> Result<f64> {
    let channel = config.bit_channel()?;
    let y = Observation::new(vec![0; config.n_obs]);
    let l1 = crate::detector::likelihood(&y, true, &channel)?;
    let l0 = crate::detector::likelihood(&y, false, &channel)?;
    let r = crate::detector::posterior_from_likelihoods(l1, l0, config.prior);
    if r.feasible {
        Ok(r.p1)
    } else {
        Err(Error::InfeasibleObservation)
    }
}

/// A `(mode, init, dt)` setting whose all-silent posterior hits the target.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationHit {
    pub mode: Discretization,
    pub init: InitialMode,
    pub dt: f64,
    pub p1: f64,
}

/// Searches `dt` on a log grid over `[dt_min, dt_max]` for every
/// `(mode, init)` pair, refining each crossing of `target` by bisection.
/// Settings that are invalid (e.g. Euler beyond its bound) are skipped.
pub fn calibrate_silent_posterior(
    base: &ExperimentConfig,
    target: f64,
    tolerance: f64,
    dt_range: (f64, f64),
    modes: &[Discretization],
    inits: &[InitialMode],
    grid: usize,
) -> Vec<CalibrationHit> {
    let mut hits = Vec::new();
    let (lo, hi) = (dt_range.0.ln(), dt_range.1.ln());
    for &mode in modes {
        for init in inits {
            let eval = |dt: f64| {
                let cfg = ExperimentConfig {
                    mode,
                    init: init.clone(),
                    dt,
                    ..base.clone()
                };
                silent_posterior(&cfg).ok()
            };
            let samples: Vec<(f64, Option<f64>)> = (0..grid)
                .map(|i| {
                    let dt = (lo + (hi - lo) * i as f64 / (grid - 1) as f64).exp();
                    (dt, eval(dt))
                })
                .collect();
            let mut found: Option<(f64, f64)> = None;
            for w in samples.windows(2) {
                let ((a, fa), (b, fb)) = (w[0], w[1]);
                let (Some(fa), Some(fb)) = (fa, fb) else { continue };
                if (fa - target) * (fb - target) <= 0.0 {
                    let (mut a, mut b, mut fa) = (a, b, fa);
                    for _ in 0..60 {
                        let m = (a * b).sqrt();
                        let Some(fm) = eval(m) else { break };
                        if (fa - target) * (fm - target) <= 0.0 {
                            b = m;
                        } else {
                            a = m;
                            fa = fm;
                        }
                    }
                    let dt = (a * b).sqrt();
                    if let Some(p) = eval(dt) {
                        found = Some((dt, p));
                        break;
                    }
                }
            }
            if found.is_none() {
                found = samples
                    .iter()
                    .filter_map(|&(dt, p)| p.map(|p| (dt, p)))
                    .filter(|(_, p)| (p - target).abs() <= tolerance)
                    .min_by(|x, y| (x.1 - target).abs().total_cmp(&(y.1 - target).abs()));
            }
            if let Some((dt, p1)) = found {
                if (p1 - target).abs() <= tolerance {
                    hits.push(CalibrationHit {
                        mode,
                        init: init.clone(),
                        dt,
                        p1,
                    });
                }
            }
        }
    }
    hits
}
