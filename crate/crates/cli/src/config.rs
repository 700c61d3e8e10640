//! Scenario files: loading, validation and digest.

use std::path::{Path, PathBuf};

use qkd_core::analysis::DistanceSweep;
use qkd_core::cascade::reconcilers;
use qkd_core::channel::{calibrate, CalibrationTarget, ChannelModel};
use qkd_core::optimizer::SearchBox;
use qkd_core::pipeline::PipelineOptions;
use qkd_core::presets;
use qkd_core::sim::{simulators, DecoyConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Optional sweep grids. Missing grids fall back to defaults around the
/// scenario's own link length and duration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweeps {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances_km: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_factors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub decoy: DecoyConfig,
    /// Either an explicit channel or a calibration target, not both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationTarget>,
    pub seed: u64,
    #[serde(default)]
    pub pipeline: PipelineOptions,
    #[serde(default)]
    pub sweeps: Sweeps,
    #[serde(default)]
    pub search: SearchBox,
    /// Not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A validated scenario with its channel resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub channel: ChannelModel,
    pub digest: String,
}

impl Scenario {
    pub fn name(&self) -> &str {
        self.config.name.as_deref().unwrap_or("scenario")
    }

    pub fn distance_sweep(&self) -> DistanceSweep {
        let base = self.channel.fiber_length_km;
        let distances_km = self.config.sweeps.distances_km.clone().unwrap_or_else(|| {
            let start = (base - 20.0).max(0.0).round() as i64;
            (start..=(base + 20.0).round() as i64)
                .map(|d| d as f64)
                .collect()
        });
        DistanceSweep {
            base_distance_km: base,
            attenuation_db_per_km: self.channel.attenuation_db_per_km,
            distances_km,
        }
    }

    pub fn time_factors(&self) -> Vec<f64> {
        self.config
            .sweeps
            .time_factors
            .clone()
            .unwrap_or_else(|| (1..=30).map(|i| f64::from(i) / 10.0).collect())
    }
}

pub fn preset_config(name: &str) -> Result<ScenarioConfig, CliError> {
    let p = presets::by_name(name).ok_or_else(|| {
        let names: Vec<String> = presets::all().into_iter().map(|p| p.name).collect();
        CliError::Config(format!(
            "unknown preset {name:?} (available: {})",
            names.join(", ")
        ))
    })?;
    Ok(ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: Some(p.name),
        decoy: p.decoy,
        channel: None,
        calibration: Some(p.calibration),
        seed: 1,
        pipeline: PipelineOptions::default(),
        sweeps: Sweeps::default(),
        search: SearchBox::default(),
        output_dir: None,
    })
}

pub fn read_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn check_grid(label: &str, values: &Option<Vec<f64>>, positive: bool) -> Result<(), CliError> {
    if let Some(v) = values {
        if v.is_empty() {
            return Err(CliError::Config(format!("sweeps.{label} is empty")));
        }
        if let Some(bad) = v
            .iter()
            .find(|x| !x.is_finite() || *x < &0.0 || (positive && **x == 0.0))
        {
            return Err(CliError::Config(format!("sweeps.{label} contains {bad}")));
        }
    }
    Ok(())
}

pub fn resolve(config: ScenarioConfig) -> Result<Scenario, CliError> {
    let bad = |m: String| CliError::Config(m);
    if config.schema_version != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    config.decoy.validate().map_err(|e| bad(e.to_string()))?;
    let channel = match (&config.channel, &config.calibration) {
        (Some(c), None) => c.clone(),
        (None, Some(t)) => calibrate(t).map_err(|e| bad(e.to_string()))?,
        (Some(_), Some(_)) => {
            return Err(bad("give either channel or calibration, not both".into()))
        }
        (None, None) => return Err(bad("missing channel or calibration".into())),
    };
    channel.validate().map_err(|e| bad(e.to_string()))?;
    for (kind, name, ok) in [
        (
            "simulator",
            &config.pipeline.simulator,
            simulators().contains(&config.pipeline.simulator),
        ),
        (
            "reconciler",
            &config.pipeline.reconciler,
            reconcilers().contains(&config.pipeline.reconciler),
        ),
    ] {
        if !ok {
            return Err(bad(format!("unknown {kind} {name:?}")));
        }
    }
    if !(config.pipeline.f_ec >= 1.0 && config.pipeline.f_ec.is_finite()) {
        return Err(bad(format!(
            "pipeline.f_ec = {} must be at least 1",
            config.pipeline.f_ec
        )));
    }
    check_grid("distances_km", &config.sweeps.distances_km, false)?;
    check_grid("time_factors", &config.sweeps.time_factors, true)?;
    let digest = digest(&config);
    Ok(Scenario {
        config,
        channel,
        digest,
    })
}

/// SHA-256 of the canonical JSON form, output directory excluded.
pub fn digest(config: &ScenarioConfig) -> String {
    let mut c = config.clone();
    c.output_dir = None;
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_digest_tracks_seed() {
        let c = preset_config("link-100km").unwrap();
        let a = resolve(c.clone()).unwrap();
        let mut c2 = c;
        c2.seed = 2;
        let b = resolve(c2).unwrap();
        assert_eq!(a.digest.len(), 64);
        assert_ne!(a.digest, b.digest);
        let fig2 = a.distance_sweep();
        assert!(fig2.distances_km.contains(&107.0));
        assert!(a.time_factors().contains(&1.0));
    }

    #[test]
    fn round_trip_through_json() {
        let c = preset_config("link-85km").unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = preset_config("link-85km").unwrap();
        c.schema_version = 2;
        assert!(resolve(c).is_err());
        let mut c = preset_config("link-85km").unwrap();
        c.channel = Some(resolve(c.clone()).unwrap().channel);
        assert!(resolve(c).is_err());
        let mut c = preset_config("link-85km").unwrap();
        c.pipeline.reconciler = "ldpc".into();
        assert!(resolve(c).is_err());
        assert!(preset_config("nowhere").is_err());
        let text = r#"{"schema_version": 1, "seed": 1, "decoy": {}}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(text).is_err());
    }
}
