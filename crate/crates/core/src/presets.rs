//! Published operating points for two fiber links.

use serde::{Deserialize, Serialize};

use crate::channel::{
    calibrate, CalibrationTarget, ChannelError, ChannelModel, DEFAULT_ATTENUATION_DB_PER_KM,
};
use crate::sim::DecoyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub decoy: DecoyConfig,
    pub calibration: CalibrationTarget,
}

impl Preset {
    pub fn channel(&self) -> Result<ChannelModel, ChannelError> {
        calibrate(&self.calibration)
    }
}

const SEND_PROBABILITIES: [f64; 3] = [0.831, 0.123, 0.046];
const CLOCK_RATE_HZ: f64 = 2.5e6;
const EPSILON: f64 = 1e-7;
const DETECTOR_EFFICIENCIES: [f64; 2] = [0.33, 0.5];
const BACKGROUND_CPS: f64 = 3.0;

fn preset(
    name: &str,
    km: f64,
    intensities: [f64; 3],
    duration_s: f64,
    window_ns: f64,
    sifted: f64,
    qber: f64,
) -> Preset {
    Preset {
        name: name.to_string(),
        decoy: DecoyConfig {
            intensities,
            send_probabilities: SEND_PROBABILITIES,
            clock_rate_hz: CLOCK_RATE_HZ,
            duration_s,
            epsilon: EPSILON,
        },
        calibration: CalibrationTarget {
            fiber_length_km: km,
            attenuation_db_per_km: DEFAULT_ATTENUATION_DB_PER_KM,
            detector_efficiencies: DETECTOR_EFFICIENCIES,
            background_counts_per_second: BACKGROUND_CPS,
            timing_window_ns: window_ns,
            mu: intensities[0],
            send_probability: SEND_PROBABILITIES[0],
            clock_rate_hz: CLOCK_RATE_HZ,
            duration_s,
            sifted_count: sifted,
            qber,
        },
    }
}

pub fn link_85km() -> Preset {
    preset(
        "link-85km",
        85.0,
        [0.487, 0.0639, 1.05e-3],
        351.0,
        120.0,
        2.2e5,
        0.033,
    )
}

pub fn link_100km() -> Preset {
    preset(
        "link-100km",
        100.0,
        [0.297, 0.099, 2.75e-3],
        828.0,
        220.0,
        1.9e5,
        0.04,
    )
}

pub fn all() -> Vec<Preset> {
    vec![link_85km(), link_100km()]
}

pub fn by_name(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for p in all() {
            p.decoy.validate().unwrap();
            p.channel().unwrap();
        }
        assert!(by_name("link-100km").is_some());
        assert!(by_name("nope").is_none());
    }
}
