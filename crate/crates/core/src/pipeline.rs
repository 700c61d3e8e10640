//! Simulate, reconcile, analyze and amplify one session.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, Analysis, AnalysisError, EcCost, KeyInputs, DEFAULT_F_EC};
use crate::cascade::{reconcilers, CascadeError, ReconciliationResult, DEFAULT_RECONCILER};
use crate::channel::ChannelModel;
use crate::registry::UnknownStrategy;
use crate::rng::{derive_seed, Domain};
use crate::sim::{simulators, DecoyConfig, SessionTallies, SimError, DEFAULT_SIMULATOR};
use crate::toeplitz::{toeplitz_hash, ToeplitzError, ToeplitzSpec};

/// Error-rate estimate handed to reconciliation when no error was observed.
pub const MIN_ERROR_ESTIMATE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Reconciliation(#[from] CascadeError),
    #[error(transparent)]
    Amplification(#[from] ToeplitzError),
    #[error("reconciliation did not verify after disclosing {leaked_bits} bits")]
    ReconciliationFailed { leaked_bits: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub simulator: String,
    pub reconciler: String,
    pub reconcile: bool,
    pub amplify: bool,
    /// Reconciliation efficiency assumed when `reconcile` is off.
    pub f_ec: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            simulator: DEFAULT_SIMULATOR.into(),
            reconciler: DEFAULT_RECONCILER.into(),
            reconcile: true,
            amplify: true,
            f_ec: DEFAULT_F_EC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalKeys {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
    pub toeplitz_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub tallies: SessionTallies,
    pub zeros_fraction: f64,
    pub analysis: Analysis,
    pub reconciliation: Option<ReconciliationResult>,
    pub keys: Option<FinalKeys>,
}

pub fn run_pipeline(
    config: &DecoyConfig,
    channel: &ChannelModel,
    seed: u64,
    options: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let simulator = simulators().create(&options.simulator)?;
    let reconciler = reconcilers().create(&options.reconciler)?;
    let session = simulator.simulate(config, channel, seed)?;
    let tallies = session.tallies;
    let z = session.frame.zeros_fraction_before_flip;
    let (alice, bob) = session.frame.level_bits(0);

    let mut reconciliation = None;
    let ec = if options.reconcile && !alice.is_empty() {
        let estimate = tallies.qber(0).clamp(MIN_ERROR_ESTIMATE, 0.49);
        let r = reconciler.reconcile(
            &alice,
            &bob,
            estimate,
            derive_seed(seed, Domain::CascadePermutation, 0),
        )?;
        if !r.verified {
            return Err(PipelineError::ReconciliationFailed {
                leaked_bits: r.leaked_bits,
            });
        }
        let leaked = r.leaked_bits;
        reconciliation = Some(r);
        EcCost::LeakedBits(leaked)
    } else {
        EcCost::Efficiency(options.f_ec)
    };
    let inputs = KeyInputs {
        zeros_fraction: z,
        ec,
    };
    let analysis = analyze(&tallies, &config.intensities, config.epsilon, &inputs)?;

    let keys = match (&reconciliation, options.amplify) {
        (Some(r), true) => {
            let toeplitz_seed = derive_seed(seed, Domain::ToeplitzSeed, 0);
            let spec =
                ToeplitzSpec::random(alice.len(), analysis.key.n_sec as usize, toeplitz_seed)?;
            Some(FinalKeys {
                alice: toeplitz_hash(&alice, &spec)?,
                bob: toeplitz_hash(&r.corrected_bob_bits, &spec)?,
                toeplitz_seed,
            })
        }
        _ => None,
    };
    Ok(PipelineOutput {
        tallies,
        zeros_fraction: z,
        analysis,
        reconciliation,
        keys,
    })
}
