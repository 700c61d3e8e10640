//! Fiber + detector channel.
//!
//! Two views of the same physics live here. [`ChannelModel`] carries the
//! closed-form threshold-detector model (mean detector efficiency, yields
//! `y_n = 1 - (1 - y0)(1 - eta)^n`) used for calibration and reference
//! quantities. [`DetectionPhysics`] resolves the two detectors separately,
//! with each bit value routed to a fixed detector in both bases; it is the
//! exact model the Monte Carlo samples from, and the source of the sifted-key
//! bias `z` when the detector efficiencies differ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::poisson_pmf_unchecked;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("{field} = {value} is not a probability")]
    NotProbability { field: &'static str, value: f64 },
    #[error("fiber length {0} km must be finite and non-negative")]
    Length(f64),
    #[error("attenuation {0} dB/km must be positive")]
    Attenuation(f64),
    #[error("calibration infeasible: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub fiber_length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Efficiencies of the detectors that register bit 0 and bit 1.
    pub detector_efficiencies: [f64; 2],
    /// Probability per clock cycle of a background or dark click inside the
    /// timing window (both detectors together).
    pub background_yield: f64,
    /// Probability that a signal photon in the matching basis reaches the
    /// wrong detector.
    pub visibility_error: f64,
    /// Fraction of signal photons accepted by the timing window. Also absorbs
    /// receiver optical loss not otherwise modeled.
    pub window_acceptance: f64,
}

pub const DEFAULT_ATTENUATION_DB_PER_KM: f64 = 0.21;

/// Photon-number-resolved yields `y_n` and error rates `b_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldErrorCurve {
    pub yields: Vec<f64>,
    pub error_rates: Vec<f64>,
}

fn check_prob(field: &'static str, value: f64) -> Result<(), ChannelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ChannelError::NotProbability { field, value })
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.fiber_length_km.is_finite() && self.fiber_length_km >= 0.0) {
            return Err(ChannelError::Length(self.fiber_length_km));
        }
        if !(self.attenuation_db_per_km.is_finite() && self.attenuation_db_per_km > 0.0) {
            return Err(ChannelError::Attenuation(self.attenuation_db_per_km));
        }
        check_prob("detector_efficiencies[0]", self.detector_efficiencies[0])?;
        check_prob("detector_efficiencies[1]", self.detector_efficiencies[1])?;
        check_prob("background_yield", self.background_yield)?;
        check_prob("visibility_error", self.visibility_error)?;
        check_prob("window_acceptance", self.window_acceptance)?;
        Ok(())
    }

    pub fn fiber_transmission(&self) -> f64 {
        10f64.powf(-self.attenuation_db_per_km * self.fiber_length_km / 10.0)
    }

    pub fn mean_efficiency(&self) -> f64 {
        0.5 * (self.detector_efficiencies[0] + self.detector_efficiencies[1])
    }

    /// Single-photon transmittance `eta`, receiver included.
    pub fn transmittance(&self) -> f64 {
        self.mean_efficiency() * self.window_acceptance * self.fiber_transmission()
    }

    /// The same channel viewed with `enclave_km` of its fiber moved inside the
    /// transmitter.
    pub fn with_enclave(&self, enclave_km: f64) -> Self {
        Self {
            fiber_length_km: (self.fiber_length_km - enclave_km).max(0.0),
            ..self.clone()
        }
    }

    pub fn expected_yields(&self, n_max: usize) -> YieldErrorCurve {
        let eta = self.transmittance();
        let y0 = self.background_yield;
        let mut yields = Vec::with_capacity(n_max + 1);
        let mut error_rates = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let survive = (1.0 - eta).powi(n as i32);
            let y = (1.0 - survive) + y0 * survive;
            let wrong = 0.5 * y0 * survive + self.visibility_error * (y - y0 * survive);
            yields.push(y);
            error_rates.push(if y > 0.0 { wrong / y } else { 0.5 });
        }
        YieldErrorCurve {
            yields,
            error_rates,
        }
    }

    /// Gain `Q_mu` and error rate `E_mu` of a Poisson source of mean `mu`.
    /// A channel that never clicks reports `E = 0.5`.
    pub fn expected_gain_qber(&self, mu: f64) -> (f64, f64) {
        let eta = self.transmittance();
        let y0 = self.background_yield;
        let no_signal = (-eta * mu).exp();
        let gain = -(-eta * mu).exp_m1() + y0 * no_signal;
        if gain <= 0.0 {
            return (0.0, 0.5);
        }
        let wrong = 0.5 * y0 * no_signal + self.visibility_error * (gain - y0 * no_signal);
        (gain, wrong / gain)
    }

    /// Fraction of detections that came from single-photon pulses when the
    /// channel is a passive beamsplitter.
    pub fn beamsplitter_single_fraction(&self, mu: f64) -> f64 {
        let (gain, _) = self.expected_gain_qber(mu);
        if gain <= 0.0 {
            return 0.0;
        }
        let y1 = self.expected_yields(1).yields[1];
        poisson_pmf_unchecked(1, mu) * y1 / gain
    }

    pub fn physics(&self) -> DetectionPhysics {
        DetectionPhysics::new(self)
    }
}

/// Inputs for fitting a channel to an observed session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub fiber_length_km: f64,
    #[serde(default = "default_attenuation")]
    pub attenuation_db_per_km: f64,
    pub detector_efficiencies: [f64; 2],
    pub background_counts_per_second: f64,
    pub timing_window_ns: f64,
    /// Signal intensity and its send probability.
    pub mu: f64,
    pub send_probability: f64,
    pub clock_rate_hz: f64,
    pub duration_s: f64,
    /// Sifted detections observed at the signal intensity.
    pub sifted_count: f64,
    pub qber: f64,
}

fn default_attenuation() -> f64 {
    DEFAULT_ATTENUATION_DB_PER_KM
}

/// Fit `background_yield`, `window_acceptance` and `visibility_error` so the
/// closed-form model reproduces the observed sifted count and error rate at
/// the signal intensity. Sifted detections are half of all detections.
pub fn calibrate(target: &CalibrationTarget) -> Result<ChannelModel, ChannelError> {
    let y0 = target.background_counts_per_second * target.timing_window_ns * 1e-9;
    check_prob("background_yield", y0)?;
    let pulses = target.clock_rate_hz * target.duration_s * target.send_probability;
    if !(pulses > 0.0) || !(target.mu > 0.0) {
        return Err(ChannelError::Calibration(
            "signal pulses and intensity must be positive".into(),
        ));
    }
    let gain = 2.0 * target.sifted_count / pulses;
    if !(gain > y0 && gain < 1.0) {
        return Err(ChannelError::Calibration(format!(
            "observed gain {gain:.3e} is not above the background {y0:.3e}"
        )));
    }
    let eta = -((1.0 - gain) / (1.0 - y0)).ln() / target.mu;
    let mut model = ChannelModel {
        fiber_length_km: target.fiber_length_km,
        attenuation_db_per_km: target.attenuation_db_per_km,
        detector_efficiencies: target.detector_efficiencies,
        background_yield: y0,
        visibility_error: 0.0,
        window_acceptance: 1.0,
    };
    let acceptance = eta / (model.mean_efficiency() * model.fiber_transmission());
    if !(acceptance > 0.0 && acceptance <= 1.0) {
        return Err(ChannelError::Calibration(format!(
            "required window acceptance {acceptance:.4} is not a probability"
        )));
    }
    model.window_acceptance = acceptance;
    let no_signal = (-eta * target.mu).exp();
    let background_only = y0 * no_signal;
    let visibility = (target.qber * gain - 0.5 * background_only) / (gain - background_only);
    if !(0.0..0.5).contains(&visibility) {
        return Err(ChannelError::Calibration(format!(
            "error rate {} cannot be reproduced (visibility error {visibility:.4})",
            target.qber
        )));
    }
    model.visibility_error = visibility;
    model.validate()?;
    Ok(model)
}

/// Per-cycle outcome probabilities of a sifted event.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SiftedOutcome {
    /// Matched basis, exactly one click, on the detector for Alice's bit.
    pub correct: [f64; 2],
    /// Matched basis, exactly one click, on the other detector.
    pub error: [f64; 2],
}

impl SiftedOutcome {
    pub fn detection(&self) -> f64 {
        self.correct.iter().chain(self.error.iter()).sum()
    }

    pub fn errors(&self) -> f64 {
        self.error[0] + self.error[1]
    }

    /// Probability that a sifted event carries Alice bit 0.
    pub fn zeros(&self) -> f64 {
        self.correct[0] + self.error[0]
    }
}

/// Two-detector physics used by the simulators.
///
/// A photon that passes the fiber and window lands on the detector for
/// Alice's bit (matched basis, probability `1 - visibility_error`) or the
/// other one, or on either with equal odds when the bases differ. Each
/// detector also fires from background independently with probability `q`,
/// chosen so that `P[any background click] = background_yield`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionPhysics {
    pub link: f64,
    pub efficiencies: [f64; 2],
    pub visibility_error: f64,
    pub background_per_detector: f64,
}

impl DetectionPhysics {
    pub fn new(model: &ChannelModel) -> Self {
        Self {
            link: model.window_acceptance * model.fiber_transmission(),
            efficiencies: model.detector_efficiencies,
            visibility_error: model.visibility_error,
            background_per_detector: 1.0 - (1.0 - model.background_yield).sqrt(),
        }
    }

    /// Probability per photon of being detected at detector 0 / 1.
    pub fn photon_rates(&self, bit: u8, matched: bool) -> [f64; 2] {
        let route = if matched {
            let v = self.visibility_error;
            if bit == 0 {
                [1.0 - v, v]
            } else {
                [v, 1.0 - v]
            }
        } else {
            [0.5, 0.5]
        };
        [
            self.link * self.efficiencies[0] * route[0],
            self.link * self.efficiencies[1] * route[1],
        ]
    }

    /// Probability that only detector `d` fires, given the per-detector
    /// no-signal-click probabilities.
    fn only(&self, d: usize, silent: [f64; 2], silent_both: f64) -> f64 {
        let q = self.background_per_detector;
        let other = 1 - d;
        ((1.0 - q) * silent[other] - (1.0 - q) * (1.0 - q) * silent_both).max(0.0)
    }

    /// Sifted-event probabilities per pulse for a Poisson source of mean `mu`
    /// (includes the 1/2 basis-match and 1/2 bit-value factors).
    pub fn poisson_outcome(&self, mu: f64) -> SiftedOutcome {
        let mut out = SiftedOutcome::default();
        for bit in 0..2u8 {
            let r = self.photon_rates(bit, true);
            let silent = [(-mu * r[0]).exp(), (-mu * r[1]).exp()];
            let silent_both = (-mu * (r[0] + r[1])).exp();
            let b = bit as usize;
            out.correct[b] = 0.25 * self.only(b, silent, silent_both);
            out.error[b] = 0.25 * self.only(1 - b, silent, silent_both);
        }
        out
    }

    /// Sifted-event probabilities for a pulse of exactly `n` photons.
    pub fn fock_outcome(&self, n: u32) -> SiftedOutcome {
        let mut out = SiftedOutcome::default();
        let n = n as i32;
        for bit in 0..2u8 {
            let r = self.photon_rates(bit, true);
            let silent = [(1.0 - r[0]).powi(n), (1.0 - r[1]).powi(n)];
            let silent_both = (1.0 - r[0] - r[1]).powi(n);
            let b = bit as usize;
            out.correct[b] = 0.25 * self.only(b, silent, silent_both);
            out.error[b] = 0.25 * self.only(1 - b, silent, silent_both);
        }
        out
    }

    /// True sifted yields `y_n` (sifted detections per n-photon pulse).
    pub fn sifted_yields(&self, n_max: u32) -> Vec<f64> {
        (0..=n_max)
            .map(|n| self.fock_outcome(n).detection())
            .collect()
    }
}
