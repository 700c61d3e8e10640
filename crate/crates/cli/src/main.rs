//! `qkd`: run decoy-state BB84 scenarios and emit reports.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 configuration or usage
//! error, 3 analysis infeasible, 4 reconciliation failure.

mod config;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qkd_core::analysis::{
    analyze, sweep_distance, sweep_time, AnalysisError, EcCost, FlatReport, KeyInputs,
};
use qkd_core::optimizer::{optimize, predict_rate_with, write_trace_csv, OptimizerError};
use qkd_core::pipeline::{run_pipeline, PipelineError, PipelineOptions, PipelineOutput};
use qkd_core::presets;
use qkd_core::sim::{simulators, write_detection_records, SessionTallies, SimError};
use serde::Serialize;
use thiserror::Error;

use config::{preset_config, read_config, resolve, Scenario};
use report::{key_file, sweep_csv, Artifacts, Format, Report};

const DEFAULT_OUT_DIR: &str = "qkd-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("analysis infeasible: {0}")]
    Analysis(String),
    #[error("reconciliation failed: {0}")]
    Reconciliation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Analysis(_) => 3,
            CliError::Reconciliation(_) => 4,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Input(m) => CliError::Config(m),
            e => CliError::Analysis(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => CliError::Io(e),
            SimError::Config(_) | SimError::Channel(_) | SimError::Overflow(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Strategy(e) => CliError::Config(e.to_string()),
            PipelineError::Simulation(e) => e.into(),
            PipelineError::Analysis(e) => e.into(),
            PipelineError::Reconciliation(e) => CliError::Reconciliation(e.to_string()),
            e @ PipelineError::ReconciliationFailed { .. } => {
                CliError::Reconciliation(e.to_string())
            }
            PipelineError::Amplification(e) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Config(e) => e.into(),
            OptimizerError::Analysis(e) => e.into(),
            OptimizerError::Box(m) => CliError::Config(m),
            e @ OptimizerError::ZeroRateLandscape { .. } => CliError::Analysis(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "qkd", version, about = "Decoy-state BB84 scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario file (JSON, schema_version 1).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario; `qkd preset` lists them.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to the scenario's output_dir, then qkd-out.
    #[arg(long, env = "QKD_OUT_DIR")]
    out: Option<PathBuf>,
    /// Format of the analysis report.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Figure {
    /// Secret rate against link length.
    Fig2,
    /// Bounds and rate against acquisition time.
    Fig3,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a session; writes tallies.json and detections.csv.
    Simulate(ScenarioArgs),
    /// Decoy analysis of simulated or recorded tallies.
    Analyze {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Tallies JSON (as written by `simulate`) instead of simulating.
        #[arg(long)]
        tallies: Option<PathBuf>,
        /// Zeros fraction to use with recorded tallies.
        #[arg(long, default_value_t = 0.5)]
        zeros_fraction: f64,
    },
    /// Simulate, reconcile, analyze and amplify; writes the report, the key
    /// and any sweeps named in the scenario.
    Pipeline(ScenarioArgs),
    /// Re-analyze one session at other link lengths.
    SweepDistance {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, requires = "to")]
        from: Option<f64>,
        #[arg(long, requires = "from")]
        to: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Re-analyze one session scaled to other acquisition times.
    SweepTime {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated multiples of the scenario duration.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
    },
    /// Search intensities and send probabilities for the highest rate.
    Optimize(ScenarioArgs),
    /// List built-in scenarios, or print one as a scenario file.
    Preset { name: Option<String> },
    /// Figure data as CSV.
    Figure {
        #[arg(value_enum)]
        figure: Figure,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

fn load(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => read_config(path)?,
        (None, Some(name)) => preset_config(name)?,
        _ => {
            return Err(CliError::Config(
                "give exactly one of --config or --preset".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    resolve(config)
}

fn out_dir(args: &ScenarioArgs, scenario: &Scenario) -> PathBuf {
    args.out
        .clone()
        .or_else(|| scenario.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn pipeline(scenario: &Scenario, amplify: bool) -> Result<PipelineOutput, CliError> {
    let options = PipelineOptions {
        amplify: amplify && scenario.config.pipeline.amplify,
        ..scenario.config.pipeline.clone()
    };
    let c = &scenario.config;
    Ok(run_pipeline(&c.decoy, &scenario.channel, c.seed, &options)?)
}

/// Reconciliation cost as measured if reconciliation ran, else as configured.
fn key_inputs(scenario: &Scenario, out: &PipelineOutput) -> KeyInputs {
    KeyInputs {
        zeros_fraction: out.zeros_fraction,
        ec: match &out.reconciliation {
            Some(r) => EcCost::LeakedBits(r.leaked_bits),
            None => EcCost::Efficiency(scenario.config.pipeline.f_ec),
        },
    }
}

fn distance_points(
    scenario: &Scenario,
    out: &PipelineOutput,
    distances: Option<Vec<f64>>,
) -> Result<Vec<qkd_core::analysis::SweepPoint>, CliError> {
    let mut sweep = scenario.distance_sweep();
    if let Some(d) = distances {
        sweep.distances_km = d;
    }
    let c = &scenario.config.decoy;
    Ok(sweep_distance(
        &out.tallies,
        &c.intensities,
        c.epsilon,
        &key_inputs(scenario, out),
        c.duration_s,
        &sweep,
    )?)
}

fn time_points(
    scenario: &Scenario,
    out: &PipelineOutput,
    factors: Option<Vec<f64>>,
) -> Result<Vec<qkd_core::analysis::SweepPoint>, CliError> {
    let factors = factors.unwrap_or_else(|| scenario.time_factors());
    let c = &scenario.config.decoy;
    Ok(sweep_time(
        &out.tallies,
        &c.intensities,
        c.epsilon,
        &key_inputs(scenario, out),
        c.duration_s,
        &factors,
    )?)
}

const FULL_COLUMNS: [&str; 4] = ["y1_lower", "b1_upper", "n_sec", "rate_bps"];

fn cmd_simulate(s: &Scenario) -> Result<(Artifacts, String), CliError> {
    let sim = simulators()
        .create(&s.config.pipeline.simulator)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let session = sim.simulate(&s.config.decoy, &s.channel, s.config.seed)?;
    let mut art = Artifacts::default();
    art.add_json("tallies.json", &session.tallies)?;
    let mut records = Vec::new();
    write_detection_records(&session.events, &mut records)?;
    art.add("detections.csv", records);
    let msg = format!(
        "{} sifted events from {} clock cycles",
        session.events.len(),
        session.tallies.clock_cycles
    );
    Ok((art, msg))
}

fn cmd_analyze(
    s: &Scenario,
    format: Format,
    tallies: Option<&Path>,
    zeros_fraction: f64,
) -> Result<(Artifacts, String), CliError> {
    let (tallies, z) = match tallies {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let t: SessionTallies = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (t, zeros_fraction)
        }
        None => {
            let sim = simulators()
                .create(&s.config.pipeline.simulator)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let session = sim.simulate(&s.config.decoy, &s.channel, s.config.seed)?;
            (session.tallies, session.frame.zeros_fraction_before_flip)
        }
    };
    let inputs = KeyInputs {
        zeros_fraction: z,
        ec: EcCost::Efficiency(s.config.pipeline.f_ec),
    };
    let c = &s.config.decoy;
    let a = analyze(&tallies, &c.intensities, c.epsilon, &inputs)?;
    let report = Report::new(s, FlatReport::from(&a), None);
    let mut art = Artifacts::default();
    art.add_report(&report, format)?;
    Ok((
        art,
        format!(
            "n_sec {} ({:.3} bps)",
            report.analysis.n_sec, report.rate_bps
        ),
    ))
}

fn cmd_pipeline(s: &Scenario, format: Format) -> Result<(Artifacts, String), CliError> {
    let out = pipeline(s, true)?;
    let report = Report::new(s, FlatReport::from(&out.analysis), Some(&out));
    let mut art = Artifacts::default();
    art.add_report(&report, format)?;
    if let Some(keys) = &out.keys {
        if keys.alice != keys.bob || keys.alice.len() as u64 != out.analysis.key.n_sec {
            return Err(CliError::Reconciliation("final keys disagree".into()));
        }
        art.add(
            "key.hex",
            key_file(
                &keys.alice,
                out.analysis.key.n_sec,
                out.analysis.bounds.epsilon_budget,
                &s.digest,
            ),
        );
    }
    if s.config.sweeps.distances_km.is_some() {
        art.add(
            "sweep_distance.csv",
            sweep_csv(
                &distance_points(s, &out, None)?,
                "distance_km",
                &FULL_COLUMNS,
            )?,
        );
    }
    if s.config.sweeps.time_factors.is_some() {
        art.add(
            "sweep_time.csv",
            sweep_csv(&time_points(s, &out, None)?, "time_s", &FULL_COLUMNS)?,
        );
    }
    let msg = format!(
        "n_sec {} ({:.3} bps), leaked {} bits",
        report.analysis.n_sec,
        report.rate_bps,
        report
            .leaked_bits
            .map_or("n/a".to_string(), |b| b.to_string())
    );
    Ok((art, msg))
}

fn cmd_sweep_distance(
    s: &Scenario,
    range: Option<(f64, f64)>,
    step: f64,
) -> Result<(Artifacts, String), CliError> {
    let distances = match range {
        Some((from, to)) => {
            if !(step > 0.0 && from.is_finite() && to >= from && from >= 0.0) {
                return Err(CliError::Config(format!(
                    "bad distance range {from}..{to} step {step}"
                )));
            }
            let n = ((to - from) / step + 1e-9).floor() as usize;
            Some((0..=n).map(|i| from + step * i as f64).collect())
        }
        None => None,
    };
    let out = pipeline(s, false)?;
    let pts = distance_points(s, &out, distances)?;
    let mut art = Artifacts::default();
    art.add(
        "sweep_distance.csv",
        sweep_csv(&pts, "distance_km", &FULL_COLUMNS)?,
    );
    Ok((art, format!("{} distances", pts.len())))
}

fn cmd_sweep_time(
    s: &Scenario,
    factors: Option<Vec<f64>>,
) -> Result<(Artifacts, String), CliError> {
    if let Some(f) = &factors {
        if f.is_empty() || f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(CliError::Config("time factors must be positive".into()));
        }
    }
    let out = pipeline(s, false)?;
    let pts = time_points(s, &out, factors)?;
    let mut art = Artifacts::default();
    art.add("sweep_time.csv", sweep_csv(&pts, "time_s", &FULL_COLUMNS)?);
    Ok((art, format!("{} durations", pts.len())))
}

#[derive(Serialize)]
struct OptimizeSummary {
    scenario: String,
    config_digest: String,
    scenario_rate_bps: f64,
    predicted_rate_bps: f64,
    evaluations: usize,
    best_config: qkd_core::sim::DecoyConfig,
}

fn cmd_optimize(s: &Scenario) -> Result<(Artifacts, String), CliError> {
    let c = &s.config;
    let reference = predict_rate_with(&c.decoy, &s.channel, c.search.f_ec)?;
    let result = optimize(
        &s.channel,
        &c.decoy,
        &c.search,
        std::slice::from_ref(&c.decoy),
    )?;
    let summary = OptimizeSummary {
        scenario: s.name().to_string(),
        config_digest: s.digest.clone(),
        scenario_rate_bps: reference,
        predicted_rate_bps: result.predicted_rate,
        evaluations: result.evaluations,
        best_config: result.best_config.clone(),
    };
    let mut art = Artifacts::default();
    art.add_json("optimization.json", &summary)?;
    let mut trace = Vec::new();
    write_trace_csv(&result.search_trace, &mut trace)?;
    art.add("optimize_trace.csv", trace);
    let mus = result.best_config.intensities;
    Ok((
        art,
        format!(
            "{:.3} bps at mu = [{:.4}, {:.4}, {:.2e}] (scenario {:.3} bps, {} evaluations)",
            result.predicted_rate, mus[0], mus[1], mus[2], reference, result.evaluations
        ),
    ))
}

fn cmd_figure(figure: Figure, s: &Scenario) -> Result<(Artifacts, String), CliError> {
    let out = pipeline(s, false)?;
    let mut art = Artifacts::default();
    let pts = match figure {
        Figure::Fig2 => {
            let pts = distance_points(s, &out, None)?;
            art.add("fig2.csv", sweep_csv(&pts, "distance_km", &["rate_bps"])?);
            pts
        }
        Figure::Fig3 => {
            let pts = time_points(s, &out, None)?;
            art.add(
                "fig3.csv",
                sweep_csv(&pts, "time_s", &["y1_lower", "b1_upper", "rate_bps"])?,
            );
            pts
        }
    };
    Ok((art, format!("{} rows", pts.len())))
}

fn cmd_preset(name: Option<&str>) -> Result<(), CliError> {
    let mut text = String::new();
    match name {
        None => {
            for p in presets::all() {
                text += &format!(
                    "{}\t{} km, mu = {:?}, {} s\n",
                    p.name, p.calibration.fiber_length_km, p.decoy.intensities, p.decoy.duration_s
                );
            }
        }
        Some(n) => {
            let c = preset_config(n)?;
            text =
                serde_json::to_string_pretty(&c).map_err(|e| CliError::Internal(e.to_string()))?;
            text.push('\n');
        }
    }
    // A closed pipe on stdout is not an error worth reporting.
    match std::io::stdout().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let args = match &cli.command {
        Command::Preset { name } => return cmd_preset(name.as_deref()),
        Command::Simulate(a) | Command::Pipeline(a) | Command::Optimize(a) => a,
        Command::Analyze { scenario, .. }
        | Command::SweepDistance { scenario, .. }
        | Command::SweepTime { scenario, .. }
        | Command::Figure { scenario, .. } => scenario,
    };
    let s = load(args)?;
    let (artifacts, msg) = match &cli.command {
        Command::Preset { .. } => unreachable!(),
        Command::Simulate(_) => cmd_simulate(&s),
        Command::Analyze {
            tallies,
            zeros_fraction,
            ..
        } => cmd_analyze(&s, args.format, tallies.as_deref(), *zeros_fraction),
        Command::Pipeline(_) => cmd_pipeline(&s, args.format),
        Command::SweepDistance { from, to, step, .. } => {
            cmd_sweep_distance(&s, from.zip(*to), *step)
        }
        Command::SweepTime { factors, .. } => cmd_sweep_time(&s, factors.clone()),
        Command::Optimize(_) => cmd_optimize(&s),
        Command::Figure { figure, .. } => cmd_figure(*figure, &s),
    }?;
    let dir = out_dir(args, &s);
    for path in artifacts.write(&dir)? {
        eprintln!("wrote {}", path.display());
    }
    eprintln!("{}: {msg}", s.name());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qkd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_table() {
        let rec: CliError = PipelineError::ReconciliationFailed { leaked_bits: 10 }.into();
        assert_eq!(rec.exit_code(), 4);
        let infeasible: CliError =
            PipelineError::Analysis(AnalysisError::Inconsistent(1e-7)).into();
        assert_eq!(infeasible.exit_code(), 3);
        let bad: CliError = SimError::Config("mu".into()).into();
        assert_eq!(bad.exit_code(), 2);
        let io: CliError = std::io::Error::other("disk").into();
        assert_eq!(io.exit_code(), 1);
    }
}
