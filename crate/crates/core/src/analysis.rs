//! Finite-statistics decoy analysis: per-level confidence intervals, the
//! yield polyhedron, the single-photon bounds, and the secret key length.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelModel;
use crate::lp::{solve_min, Constraint, LinearProgram, LpError, LpStatus};
use crate::registry::Registry;
use crate::sim::{SessionTallies, LEVELS};
use crate::stats::{
    binomial_bounds, h2, poisson_pmf_unchecked, poisson_tail_mass, ConfidenceInterval, StatsError,
};

/// One-sided bounds consumed per analysis: a lower and an upper at each level.
pub const BOUNDS_PER_ANALYSIS: u32 = 6;
/// Truncation is chosen so the Poisson tail beyond `n_max` is below this.
pub const TAIL_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_F_EC: f64 = 1.1;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("level {0} has no pulses")]
    NoPulses(usize),
    #[error("observations inconsistent at confidence epsilon = {0}")]
    Inconsistent(f64),
    #[error("no single-photon events can be certified")]
    NoSinglePhotons,
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("{0}")]
    Estimator(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldBounds {
    pub intervals: [ConfidenceInterval; LEVELS],
    pub y1_lower: f64,
    /// Range of the vacuum yield over the feasible polyhedron.
    pub y0_interval: ConfidenceInterval,
    pub n_max: usize,
    pub epsilon_budget: f64,
}

/// Cost of error correction, either as an efficiency over the Shannon limit
/// or as an exact count of disclosed bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcCost {
    Efficiency(f64),
    LeakedBits(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyInputs {
    pub zeros_fraction: f64,
    pub ec: EcCost,
}

impl Default for KeyInputs {
    fn default() -> Self {
        Self {
            zeros_fraction: 0.5,
            ec: EcCost::Efficiency(DEFAULT_F_EC),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyResult {
    pub n_sift: u64,
    pub observed_qber: f64,
    pub zeros_fraction: f64,
    pub single_photon_bound: u64,
    pub b1_upper: f64,
    /// `None` when the error rate is zero and only a bit count is known.
    pub f_ec: Option<f64>,
    pub ec_leakage: f64,
    pub n_sec: u64,
    /// The formula went negative and was clamped to zero.
    pub clamped: bool,
    pub security_failure_probability: f64,
}

impl KeyResult {
    pub fn single_photon_fraction(&self) -> f64 {
        if self.n_sift == 0 {
            0.0
        } else {
            self.single_photon_bound as f64 / self.n_sift as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub bounds: YieldBounds,
    pub key: KeyResult,
}

/// Exact binomial bounds on each level's sifted detection probability per
/// sent pulse.
pub fn detection_intervals(
    tallies: &SessionTallies,
    epsilon: f64,
) -> Result<[ConfidenceInterval; LEVELS], AnalysisError> {
    let mut out = [ConfidenceInterval::full(epsilon); LEVELS];
    for (j, l) in tallies.levels.iter().enumerate() {
        if l.pulses_sent == 0 {
            return Err(AnalysisError::NoPulses(j));
        }
        out[j] = binomial_bounds(l.sifted_detections, l.pulses_sent, epsilon)?;
    }
    Ok(out)
}

/// Smallest truncation with Poisson tail below [`TAIL_TOLERANCE`] for every
/// intensity.
pub fn truncation_order(intensities: &[f64]) -> usize {
    let mu = intensities.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut n = 2;
    while poisson_tail_mass(n as u64, mu).unwrap_or(0.0) >= TAIL_TOLERANCE {
        n += 1;
    }
    n
}

/// Variables `y_0..=y_{n_max}` in `[0, 1]`; per level the truncated Poisson
/// mixture lies in the interval, with tail yields taken as 1 on the lower
/// side and 0 on the upper side. Objective: minimize `y_1`.
pub fn build_yield_program(
    intervals: &[ConfidenceInterval],
    intensities: &[f64],
    n_max: usize,
) -> LinearProgram {
    let vars = n_max + 1;
    let constraints = intervals
        .iter()
        .zip(intensities)
        .map(|(iv, &mu)| {
            let coefficients: Vec<f64> = (0..vars)
                .map(|n| poisson_pmf_unchecked(n as u64, mu))
                .collect();
            let tail = poisson_tail_mass(n_max as u64, mu).unwrap_or(0.0);
            Constraint {
                coefficients,
                lower: iv.lower - tail,
                upper: iv.upper,
            }
        })
        .collect();
    let mut objective = vec![0.0; vars];
    objective[1] = 1.0;
    LinearProgram {
        objective,
        constraints,
        variable_bounds: vec![(0.0, 1.0); vars],
    }
}

/// Minimum of the program's objective; infeasibility means the observations
/// cannot come from any channel at this confidence.
pub fn bound_y1(program: &LinearProgram, epsilon: f64) -> Result<f64, AnalysisError> {
    let sol = solve_min(program)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value.clamp(0.0, 1.0)),
        LpStatus::Infeasible => Err(AnalysisError::Inconsistent(epsilon)),
        LpStatus::Unbounded => Err(AnalysisError::Input("unbounded yield program".into())),
    }
}

fn y0_range(program: &LinearProgram, epsilon: f64) -> Result<ConfidenceInterval, AnalysisError> {
    let mut lp = program.clone();
    lp.objective = vec![0.0; lp.dimension()];
    lp.objective[0] = 1.0;
    let lo = solve_min(&lp)?;
    lp.objective[0] = -1.0;
    let hi = solve_min(&lp)?;
    if lo.status != LpStatus::Optimal || hi.status != LpStatus::Optimal {
        return Err(AnalysisError::Inconsistent(epsilon));
    }
    let lower = lo.value.clamp(0.0, 1.0);
    let upper = (-hi.value).clamp(lower, 1.0);
    Ok(ConfidenceInterval::new(lower, upper, epsilon)?)
}

/// `s = floor(y1_lower * P(1 | mu0) * N0)`, with yields and detections both
/// counted per sent pulse after sifting.
pub fn single_photon_count(y1_lower: f64, mu0: f64, pulses_sent_mu0: u64) -> u64 {
    let s = y1_lower * mu0 * (-mu0).exp() * pulses_sent_mu0 as f64;
    s.max(0.0).floor() as u64
}

/// All observed signal-level errors attributed to single photons.
pub fn bound_b1(sifted_errors: u64, s: u64) -> Result<f64, AnalysisError> {
    if s == 0 {
        return Err(AnalysisError::NoSinglePhotons);
    }
    Ok((sifted_errors as f64 / s as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyLength {
    /// Unclamped value of the formula.
    pub raw: f64,
    pub n_sec: u64,
    pub clamped: bool,
}

fn key_length(s: u64, b1_upper: f64, n_sift: u64, leakage: f64, z: f64) -> KeyLength {
    let credit = if b1_upper >= 0.5 {
        0.0
    } else {
        s as f64 * (1.0 - h2(b1_upper))
    };
    let raw = credit - leakage - n_sift as f64 * (1.0 - h2(z));
    KeyLength {
        raw,
        n_sec: if raw > 0.0 { raw.floor() as u64 } else { 0 },
        clamped: raw < 0.0,
    }
}

/// `N_sec = s[1 - H2(b1)] - N_sift[f_ec H2(B) + 1 - H2(z)]`, floored and
/// clamped at zero. A single-photon error bound of 1/2 or more earns no credit.
pub fn secret_key_length(
    s: u64,
    b1_upper: f64,
    n_sift: u64,
    f_ec: f64,
    qber: f64,
    zeros_fraction: f64,
) -> KeyLength {
    key_length(
        s,
        b1_upper,
        n_sift,
        n_sift as f64 * f_ec * h2(qber),
        zeros_fraction,
    )
}

/// Same as [`secret_key_length`] with the reconciliation cost given in bits.
pub fn secret_key_length_with_leakage(
    s: u64,
    b1_upper: f64,
    n_sift: u64,
    leaked_bits: u64,
    zeros_fraction: f64,
) -> KeyLength {
    key_length(s, b1_upper, n_sift, leaked_bits as f64, zeros_fraction)
}

/// Decoy bounds only, no key length.
pub fn yield_bounds(
    tallies: &SessionTallies,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    n_max: Option<usize>,
) -> Result<YieldBounds, AnalysisError> {
    let intervals = detection_intervals(tallies, epsilon)?;
    let n_max = n_max.unwrap_or_else(|| truncation_order(intensities));
    let program = build_yield_program(&intervals, intensities, n_max);
    let y1_lower = bound_y1(&program, epsilon)?;
    let y0_interval = y0_range(&program, epsilon)?;
    Ok(YieldBounds {
        intervals,
        y1_lower,
        y0_interval,
        n_max,
        epsilon_budget: f64::from(BOUNDS_PER_ANALYSIS) * epsilon,
    })
}

fn key_from_s(
    tallies: &SessionTallies,
    s: u64,
    epsilon: f64,
    inputs: &KeyInputs,
) -> Result<KeyResult, AnalysisError> {
    let z = inputs.zeros_fraction;
    if !(0.0..=1.0).contains(&z) {
        return Err(AnalysisError::Input(format!("zeros fraction {z}")));
    }
    let signal = &tallies.levels[0];
    let n_sift = signal.sifted_detections;
    let qber = tallies.qber(0);
    let s = s.min(n_sift);
    let b1_upper = bound_b1(signal.sifted_errors, s).unwrap_or(1.0);
    let (f_ec, leakage) = match inputs.ec {
        EcCost::Efficiency(f) => {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(AnalysisError::Input(format!("f_ec = {f} below 1")));
            }
            (Some(f), n_sift as f64 * f * h2(qber))
        }
        EcCost::LeakedBits(bits) => {
            let f = (qber > 0.0 && n_sift > 0).then(|| bits as f64 / (n_sift as f64 * h2(qber)));
            (f, bits as f64)
        }
    };
    let len = key_length(s, b1_upper, n_sift, leakage, z);
    Ok(KeyResult {
        n_sift,
        observed_qber: qber,
        zeros_fraction: z,
        single_photon_bound: s,
        b1_upper,
        f_ec,
        ec_leakage: leakage,
        n_sec: len.n_sec,
        clamped: len.clamped,
        security_failure_probability: f64::from(BOUNDS_PER_ANALYSIS) * epsilon,
    })
}

/// Full decoy analysis of one session.
pub fn analyze(
    tallies: &SessionTallies,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    inputs: &KeyInputs,
) -> Result<Analysis, AnalysisError> {
    tallies
        .validate()
        .map_err(|e| AnalysisError::Input(e.to_string()))?;
    let bounds = yield_bounds(tallies, intensities, epsilon, None)?;
    let s = single_photon_count(
        bounds.y1_lower,
        intensities[0],
        tallies.levels[0].pulses_sent,
    );
    let key = key_from_s(tallies, s, epsilon, inputs)?;
    Ok(Analysis { bounds, key })
}

/// What a single-photon estimator needs besides the tallies.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorContext<'a> {
    pub intensities: &'a [f64; LEVELS],
    pub epsilon: f64,
    pub channel: Option<&'a ChannelModel>,
}

pub trait SinglePhotonEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    /// Number of signal-level sifted bits credited as single-photon.
    fn single_photon_count(
        &self,
        tallies: &SessionTallies,
        ctx: &EstimatorContext<'_>,
    ) -> Result<u64, AnalysisError>;
}

pub struct DecoyLp;

impl SinglePhotonEstimator for DecoyLp {
    fn name(&self) -> &'static str {
        "decoy-lp"
    }

    fn single_photon_count(
        &self,
        tallies: &SessionTallies,
        ctx: &EstimatorContext<'_>,
    ) -> Result<u64, AnalysisError> {
        let b = yield_bounds(tallies, ctx.intensities, ctx.epsilon, None)?;
        Ok(single_photon_count(
            b.y1_lower,
            ctx.intensities[0],
            tallies.levels[0].pulses_sent,
        ))
    }
}

/// Assumes every photon is lost independently, as through a beamsplitter.
/// Not secure against photon-number splitting; kept as a reference.
pub struct Beamsplitter;

impl SinglePhotonEstimator for Beamsplitter {
    fn name(&self) -> &'static str {
        "beamsplitter"
    }

    fn single_photon_count(
        &self,
        tallies: &SessionTallies,
        ctx: &EstimatorContext<'_>,
    ) -> Result<u64, AnalysisError> {
        let channel = ctx.channel.ok_or_else(|| {
            AnalysisError::Estimator("beamsplitter estimate needs a channel".into())
        })?;
        let fraction = channel.beamsplitter_single_fraction(ctx.intensities[0]);
        Ok((fraction * tallies.levels[0].sifted_detections as f64).floor() as u64)
    }
}

pub fn estimators() -> Registry<dyn SinglePhotonEstimator> {
    let mut r: Registry<dyn SinglePhotonEstimator> = Registry::new("estimator");
    r.register("decoy-lp", || Box::new(DecoyLp));
    r.register("beamsplitter", || Box::new(Beamsplitter));
    r
}

/// Key length for an arbitrary single-photon estimator.
pub fn key_with_estimator(
    estimator: &dyn SinglePhotonEstimator,
    tallies: &SessionTallies,
    ctx: &EstimatorContext<'_>,
    inputs: &KeyInputs,
) -> Result<KeyResult, AnalysisError> {
    let s = estimator.single_photon_count(tallies, ctx)?;
    key_from_s(tallies, s, ctx.epsilon, inputs)
}

/// Key the session would give if the loss were a passive beamsplitter.
pub fn beamsplitter_reference(
    tallies: &SessionTallies,
    channel: &ChannelModel,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    inputs: &KeyInputs,
) -> Result<KeyResult, AnalysisError> {
    let ctx = EstimatorContext {
        intensities,
        epsilon,
        channel: Some(channel),
    };
    key_with_estimator(&Beamsplitter, tallies, &ctx, inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub y1_lower: f64,
    pub b1_upper: f64,
    pub n_sec: u64,
    pub rate_bps: f64,
}

fn sweep_point(
    x: f64,
    tallies: &SessionTallies,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    inputs: &KeyInputs,
    duration_s: f64,
) -> Result<SweepPoint, AnalysisError> {
    match analyze(tallies, intensities, epsilon, inputs) {
        Ok(a) => Ok(SweepPoint {
            x,
            y1_lower: a.bounds.y1_lower,
            b1_upper: a.key.b1_upper,
            n_sec: a.key.n_sec,
            rate_bps: a.key.n_sec as f64 / duration_s,
        }),
        Err(AnalysisError::Inconsistent(_)) => Ok(SweepPoint {
            x,
            y1_lower: 0.0,
            b1_upper: 1.0,
            n_sec: 0,
            rate_bps: 0.0,
        }),
        Err(e) => Err(e),
    }
}

/// Source intensities at Alice's output when her enclave is moved by
/// `delta_km` of fiber. Positive values absorb fiber into the enclave (shorter
/// remaining link, dimmer declared output); negative values declare a brighter
/// source behind extra fiber.
pub fn enclave_intensities(
    intensities: &[f64; LEVELS],
    attenuation_db_per_km: f64,
    delta_km: f64,
) -> [f64; LEVELS] {
    let t = 10f64.powf(-attenuation_db_per_km * delta_km / 10.0);
    intensities.map(|m| m * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSweep {
    pub base_distance_km: f64,
    pub attenuation_db_per_km: f64,
    pub distances_km: Vec<f64>,
}

/// Re-analyze the same tallies with Alice's declared output plane moved so
/// that the remaining link has each requested length.
pub fn sweep_distance(
    tallies: &SessionTallies,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    inputs: &KeyInputs,
    duration_s: f64,
    sweep: &DistanceSweep,
) -> Result<Vec<SweepPoint>, AnalysisError> {
    sweep
        .distances_km
        .par_iter()
        .map(|&d| {
            let mus = enclave_intensities(
                intensities,
                sweep.attenuation_db_per_km,
                sweep.base_distance_km - d,
            );
            if !(mus[0] > mus[1] && mus[1] > mus[2]) {
                return Err(AnalysisError::Input(format!(
                    "intensities collapse at {d} km"
                )));
            }
            sweep_point(d, tallies, &mus, epsilon, inputs, duration_s)
        })
        .collect()
}

/// Re-analyze with every count scaled by each factor (stationary channel
/// observed for `factor` times as long). A reconciliation cost given in bits
/// is scaled the same way.
pub fn sweep_time(
    tallies: &SessionTallies,
    intensities: &[f64; LEVELS],
    epsilon: f64,
    inputs: &KeyInputs,
    duration_s: f64,
    factors: &[f64],
) -> Result<Vec<SweepPoint>, AnalysisError> {
    factors
        .par_iter()
        .map(|&f| {
            if !(f > 0.0 && f.is_finite()) {
                return Err(AnalysisError::Input(format!("time factor {f}")));
            }
            let (scaled, ec) = if f == 1.0 {
                (*tallies, inputs.ec)
            } else {
                let ec = match inputs.ec {
                    EcCost::LeakedBits(b) => EcCost::LeakedBits((b as f64 * f).round() as u64),
                    e => e,
                };
                (tallies.scaled(f), ec)
            };
            let inputs = KeyInputs { ec, ..*inputs };
            sweep_point(
                duration_s * f,
                &scaled,
                intensities,
                epsilon,
                &inputs,
                duration_s * f,
            )
        })
        .collect()
}

/// CSV with header `x,y1_lower,b1_upper,n_sec,rate_bps`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Flat key-value form of an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatReport {
    pub y_lower_0: f64,
    pub y_upper_0: f64,
    pub y_lower_1: f64,
    pub y_upper_1: f64,
    pub y_lower_2: f64,
    pub y_upper_2: f64,
    pub y0_lower: f64,
    pub y0_upper: f64,
    pub y1_lower: f64,
    pub n_max: usize,
    pub epsilon_budget: f64,
    pub n_sift: u64,
    pub observed_qber: f64,
    pub zeros_fraction: f64,
    pub single_photon_bound: u64,
    pub single_photon_fraction: f64,
    pub b1_upper: f64,
    pub f_ec: Option<f64>,
    pub ec_leakage: f64,
    pub n_sec: u64,
    pub n_sec_clamped: bool,
    pub security_failure_probability: f64,
}

impl From<&Analysis> for FlatReport {
    fn from(a: &Analysis) -> Self {
        let iv = &a.bounds.intervals;
        Self {
            y_lower_0: iv[0].lower,
            y_upper_0: iv[0].upper,
            y_lower_1: iv[1].lower,
            y_upper_1: iv[1].upper,
            y_lower_2: iv[2].lower,
            y_upper_2: iv[2].upper,
            y0_lower: a.bounds.y0_interval.lower,
            y0_upper: a.bounds.y0_interval.upper,
            y1_lower: a.bounds.y1_lower,
            n_max: a.bounds.n_max,
            epsilon_budget: a.bounds.epsilon_budget,
            n_sift: a.key.n_sift,
            observed_qber: a.key.observed_qber,
            zeros_fraction: a.key.zeros_fraction,
            single_photon_bound: a.key.single_photon_bound,
            single_photon_fraction: a.key.single_photon_fraction(),
            b1_upper: a.key.b1_upper,
            f_ec: a.key.f_ec,
            ec_leakage: a.key.ec_leakage,
            n_sec: a.key.n_sec,
            n_sec_clamped: a.key.clamped,
            security_failure_probability: a.key.security_failure_probability,
        }
    }
}
