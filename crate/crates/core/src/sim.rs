//! Monte Carlo of a three-intensity decoy BB84 session, sifting, and the
//! shuffle/balance step applied to the sifted key.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelModel, DetectionPhysics};
use crate::registry::Registry;
use crate::rng::{Domain, StreamRng};
use crate::stats::poisson_pmf_unchecked;

pub const LEVELS: usize = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid decoy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("count overflow: {0}")]
    Overflow(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyConfig {
    /// Mean photon numbers, strictly decreasing.
    pub intensities: [f64; LEVELS],
    pub send_probabilities: [f64; LEVELS],
    pub clock_rate_hz: f64,
    pub duration_s: f64,
    /// Failure probability of each one-sided bound.
    pub epsilon: f64,
}

/// Largest allowed ratio of the weakest decoy to the signal intensity.
pub const MAX_EXTINCTION_RATIO: f64 = 0.01;

impl DecoyConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let [m0, m1, m2] = self.intensities;
        if self.intensities.iter().any(|m| !m.is_finite()) {
            return Err(SimError::Config("intensities must be finite".into()));
        }
        if !(m0 > m1 && m1 > m2 && m2 >= 0.0) {
            return Err(SimError::Config(format!(
                "intensities must satisfy mu0 > mu1 > mu2 >= 0, got {:?}",
                self.intensities
            )));
        }
        // Relative slack so that a ratio pinned to exactly 1% survives rounding.
        if m2 > MAX_EXTINCTION_RATIO * m0 * (1.0 + 1e-12) {
            return Err(SimError::Config(format!(
                "mu2 = {m2} exceeds 1% of mu0 = {m0}"
            )));
        }
        if self
            .send_probabilities
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(SimError::Config(
                "send probabilities must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = self.send_probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "send probabilities sum to {total}, not 1"
            )));
        }
        if !(self.clock_rate_hz > 0.0 && self.clock_rate_hz.is_finite()) {
            return Err(SimError::Config("clock rate must be positive".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::Config("duration must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(SimError::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        self.cycles()?;
        Ok(())
    }

    /// Total clock cycles, `round(clock_rate * duration)`.
    pub fn cycles(&self) -> Result<u64, SimError> {
        let c = (self.clock_rate_hz * self.duration_s).round();
        if !(c >= 0.0 && c < u64::MAX as f64) {
            return Err(SimError::Overflow(format!("{c} clock cycles")));
        }
        Ok(c as u64)
    }

    pub fn with_duration(&self, duration_s: f64) -> Self {
        Self {
            duration_s,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTally {
    pub pulses_sent: u64,
    pub sifted_detections: u64,
    pub sifted_errors: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTallies {
    pub levels: [LevelTally; LEVELS],
    pub clock_cycles: u64,
}

impl SessionTallies {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut sent = 0u64;
        for (j, l) in self.levels.iter().enumerate() {
            if l.sifted_errors > l.sifted_detections || l.sifted_detections > l.pulses_sent {
                return Err(SimError::Frame(format!(
                    "level {j}: need errors <= detections <= pulses, got {l:?}"
                )));
            }
            sent = sent
                .checked_add(l.pulses_sent)
                .ok_or_else(|| SimError::Overflow("pulses sent".into()))?;
        }
        if sent != self.clock_cycles {
            return Err(SimError::Frame(format!(
                "pulses sent {sent} != clock cycles {}",
                self.clock_cycles
            )));
        }
        Ok(())
    }

    /// Associative, order-independent combination of disjoint batches.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = *self;
        for j in 0..LEVELS {
            out.levels[j].pulses_sent += other.levels[j].pulses_sent;
            out.levels[j].sifted_detections += other.levels[j].sifted_detections;
            out.levels[j].sifted_errors += other.levels[j].sifted_errors;
        }
        out.clock_cycles += other.clock_cycles;
        out
    }

    pub fn pulses_sent(&self) -> [u64; LEVELS] {
        self.levels.map(|l| l.pulses_sent)
    }

    /// Observed error rate at level `j` (0 when nothing was detected).
    pub fn qber(&self, j: usize) -> f64 {
        let l = &self.levels[j];
        if l.sifted_detections == 0 {
            0.0
        } else {
            l.sifted_errors as f64 / l.sifted_detections as f64
        }
    }

    /// Counts multiplied by `factor` and rounded, as for a stationary channel
    /// observed for `factor` times as long.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: u64| (v as f64 * factor).round() as u64;
        let mut out = Self::default();
        for j in 0..LEVELS {
            let l = &self.levels[j];
            out.levels[j] = LevelTally {
                pulses_sent: s(l.pulses_sent),
                sifted_detections: s(l.sifted_detections),
                sifted_errors: s(l.sifted_errors),
            };
        }
        out.clock_cycles = out.levels.iter().map(|l| l.pulses_sent).sum();
        out
    }
}

/// One clock cycle in which at least one detector fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDetection {
    pub cycle: u64,
    pub level: u8,
    pub alice_basis: u8,
    pub bob_basis: u8,
    pub alice_bit: u8,
    pub clicks: [bool; 2],
}

/// A matched-basis single-click event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedEvent {
    pub cycle: u64,
    pub level: u8,
    pub basis: u8,
    pub alice_bit: u8,
    pub bob_bit: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftedFrame {
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
    pub intensity_tags: Vec<u8>,
    /// Fraction of zeros among Alice's signal-level bits before the flip.
    pub zeros_fraction_before_flip: f64,
}

impl SiftedFrame {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.bob_bits.len() != self.len() || self.intensity_tags.len() != self.len() {
            return Err(SimError::Frame(format!(
                "lengths differ: alice {}, bob {}, tags {}",
                self.len(),
                self.bob_bits.len(),
                self.intensity_tags.len()
            )));
        }
        if self.intensity_tags.iter().any(|&t| t as usize >= LEVELS) {
            return Err(SimError::Frame("intensity tag out of range".into()));
        }
        Ok(())
    }

    /// Both parties' bits at one intensity level, in frame order.
    pub fn level_bits(&self, level: u8) -> (Vec<u8>, Vec<u8>) {
        self.intensity_tags
            .iter()
            .zip(self.alice_bits.iter().zip(&self.bob_bits))
            .filter(|(t, _)| **t == level)
            .map(|(_, (a, b))| (*a, *b))
            .unzip()
    }

    pub fn disagreements(&self) -> usize {
        self.alice_bits
            .iter()
            .zip(&self.bob_bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Keep matched-basis cycles in which exactly one detector fired.
pub fn sift(raw: &[RawDetection]) -> Vec<SiftedEvent> {
    raw.iter()
        .filter(|r| r.alice_basis == r.bob_basis && (r.clicks[0] ^ r.clicks[1]))
        .map(|r| SiftedEvent {
            cycle: r.cycle,
            level: r.level,
            basis: r.alice_basis,
            alice_bit: r.alice_bit,
            bob_bit: u8::from(r.clicks[1]),
        })
        .collect()
}

/// Shuffle both parties' bits with the same permutation, record `z`, then
/// flip the same `floor(len / 2)` positions on both sides.
///
/// `z` is measured over signal-level (level 0) bits, or over every bit when
/// no signal-level bit exists. An empty input yields an empty frame with
/// `z = 0.5`.
pub fn sift_and_balance(events: &[SiftedEvent], seed: u64) -> SiftedFrame {
    let mut order: Vec<usize> = (0..events.len()).collect();
    StreamRng::new(seed, Domain::Shuffle, 0).shuffle(&mut order);
    let mut frame = SiftedFrame {
        alice_bits: order.iter().map(|&i| events[i].alice_bit).collect(),
        bob_bits: order.iter().map(|&i| events[i].bob_bit).collect(),
        intensity_tags: order.iter().map(|&i| events[i].level).collect(),
        zeros_fraction_before_flip: 0.5,
    };
    frame.zeros_fraction_before_flip = zeros_fraction(&frame);
    let mut positions: Vec<usize> = (0..frame.len()).collect();
    StreamRng::new(seed, Domain::Flip, 0).shuffle(&mut positions);
    for &p in &positions[..frame.len() / 2] {
        frame.alice_bits[p] ^= 1;
        frame.bob_bits[p] ^= 1;
    }
    frame
}

fn zeros_fraction(frame: &SiftedFrame) -> f64 {
    let signal: Vec<u8> = frame.level_bits(0).0;
    let bits = if signal.is_empty() {
        &frame.alice_bits
    } else {
        &signal
    };
    if bits.is_empty() {
        return 0.5;
    }
    bits.iter().filter(|&&b| b == 0).count() as f64 / bits.len() as f64
}

pub fn tallies_from_frame(
    frame: &SiftedFrame,
    sent: [u64; LEVELS],
) -> Result<SessionTallies, SimError> {
    frame.validate()?;
    let mut t = SessionTallies::default();
    for (j, &s) in sent.iter().enumerate() {
        t.levels[j].pulses_sent = s;
    }
    t.clock_cycles = sent.iter().sum();
    for i in 0..frame.len() {
        let l = &mut t.levels[frame.intensity_tags[i] as usize];
        l.sifted_detections += 1;
        if frame.alice_bits[i] != frame.bob_bits[i] {
            l.sifted_errors += 1;
        }
    }
    t.validate()?;
    Ok(t)
}

/// Write one CSV record per sifted event.
pub fn write_detection_records<W: Write>(events: &[SiftedEvent], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cycle", "level", "basis", "alice_bit", "bob_bit"])?;
    for e in events {
        w.write_record([
            e.cycle.to_string(),
            e.level.to_string(),
            e.basis.to_string(),
            e.alice_bit.to_string(),
            e.bob_bit.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub tallies: SessionTallies,
    pub frame: SiftedFrame,
    /// Sifted events in cycle order (batch order for the aggregated simulator).
    pub events: Vec<SiftedEvent>,
}

pub trait SessionSimulator: Send + Sync {
    fn name(&self) -> &'static str;

    fn simulate(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<SessionOutput, SimError>;

    fn simulate_tallies(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<SessionTallies, SimError> {
        Ok(self.simulate(config, channel, seed)?.tallies)
    }
}

pub fn simulators() -> Registry<dyn SessionSimulator> {
    let mut r: Registry<dyn SessionSimulator> = Registry::new("simulator");
    r.register("pulse", || Box::new(PulseSimulator));
    r.register("aggregated", || Box::new(AggregatedSimulator));
    r
}

/// Default simulator for full sessions.
pub const DEFAULT_SIMULATOR: &str = "aggregated";

fn check_inputs(config: &DecoyConfig, channel: &ChannelModel) -> Result<u64, SimError> {
    config.validate()?;
    channel.validate()?;
    config.cycles()
}

/// Inverse-CDF Poisson sampler.
struct PoissonTable {
    cdf: Vec<f64>,
}

impl PoissonTable {
    fn new(mu: f64) -> Self {
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        let mut n = 0u64;
        loop {
            acc += poisson_pmf_unchecked(n, mu);
            cdf.push(acc.min(1.0));
            if (1.0 - acc) < 1e-17 || (n as f64 > mu && poisson_pmf_unchecked(n, mu) < 1e-18) {
                break;
            }
            n += 1;
        }
        Self { cdf }
    }

    #[inline]
    fn sample(&self, u: f64) -> u32 {
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len()) as u32
    }
}

/// One pseudo-random draw per photon, per bit, per background event.
pub struct PulseSimulator;

const PULSE_BATCH: u64 = 1 << 20;

struct PulseTables {
    level_cdf: [f64; 2],
    photons: Vec<PoissonTable>,
    physics: DetectionPhysics,
    background: f64,
}

impl PulseTables {
    fn cycle(&self, seed: u64, cycle: u64) -> (u8, Option<RawDetection>) {
        let mut rng = StreamRng::new(seed, Domain::Cycle, cycle);
        let u = rng.uniform();
        let level = if u < self.level_cdf[0] {
            0u8
        } else if u < self.level_cdf[1] {
            1
        } else {
            2
        };
        let choice = rng.next_u32();
        let alice_bit = (choice & 1) as u8;
        let alice_basis = ((choice >> 1) & 1) as u8;
        let bob_basis = ((choice >> 2) & 1) as u8;
        let photons = self.photons[level as usize].sample(rng.uniform());
        let rates = self
            .physics
            .photon_rates(alice_bit, alice_basis == bob_basis);
        let mut clicks = [false; 2];
        for _ in 0..photons {
            let v = rng.uniform();
            if v < rates[0] {
                clicks[0] = true;
            } else if v < rates[0] + rates[1] {
                clicks[1] = true;
            }
        }
        // Independent background clicks on each detector from one draw.
        let q = self.background;
        let single = q * (1.0 - q);
        let v = rng.uniform();
        if v < single {
            clicks[0] = true;
        } else if v < 2.0 * single {
            clicks[1] = true;
        } else if v < 2.0 * single + q * q {
            clicks = [true, true];
        }
        let raw = (clicks[0] || clicks[1]).then_some(RawDetection {
            cycle,
            level,
            alice_basis,
            bob_basis,
            alice_bit,
            clicks,
        });
        (level, raw)
    }
}

impl PulseSimulator {
    /// Raw detection record and per-level pulse counts, in cycle order.
    pub fn raw_session(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<(Vec<RawDetection>, [u64; LEVELS]), SimError> {
        let cycles = check_inputs(config, channel)?;
        let p = config.send_probabilities;
        let physics = channel.physics();
        let tables = PulseTables {
            level_cdf: [p[0], p[0] + p[1]],
            photons: config
                .intensities
                .iter()
                .map(|&m| PoissonTable::new(m))
                .collect(),
            background: physics.background_per_detector,
            physics,
        };
        let batches = cycles.div_ceil(PULSE_BATCH);
        let parts: Vec<([u64; LEVELS], Vec<RawDetection>)> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let start = b * PULSE_BATCH;
                let end = (start + PULSE_BATCH).min(cycles);
                let mut sent = [0u64; LEVELS];
                let mut raw = Vec::new();
                for c in start..end {
                    let (level, r) = tables.cycle(seed, c);
                    sent[level as usize] += 1;
                    if let Some(r) = r {
                        raw.push(r);
                    }
                }
                (sent, raw)
            })
            .collect();
        let mut sent = [0u64; LEVELS];
        let mut raw = Vec::new();
        for (s, r) in parts {
            for j in 0..LEVELS {
                sent[j] += s[j];
            }
            raw.extend(r);
        }
        Ok((raw, sent))
    }
}

impl SessionSimulator for PulseSimulator {
    fn name(&self) -> &'static str {
        "pulse"
    }

    fn simulate(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<SessionOutput, SimError> {
        let (raw, sent) = self.raw_session(config, channel, seed)?;
        let events = sift(&raw);
        let frame = sift_and_balance(&events, seed);
        let tallies = tallies_from_frame(&frame, sent)?;
        Ok(SessionOutput {
            tallies,
            frame,
            events,
        })
    }
}

/// Samples per-batch category counts from exact multinomials over the
/// closed-form sifted-outcome probabilities. Events are shuffled within their
/// batch, carry the batch's first cycle number and report basis 0.
pub struct AggregatedSimulator;

const AGGREGATE_BATCH: u64 = 1 << 24;

/// Sequential-binomial multinomial draw.
fn multinomial(rng: &mut StreamRng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut remaining = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        let k = if remaining == 0 || p <= 0.0 {
            0
        } else if p >= mass {
            remaining
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .expect("probability clamped to [0, 1]")
                .sample(rng)
        };
        out.push(k);
        remaining -= k;
        mass -= p;
    }
    out
}

/// Sifted categories per level: (alice_bit, bob_bit) pairs.
const CATEGORIES: [(u8, u8); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

struct BatchCounts {
    sent: [u64; LEVELS],
    /// `counts[level][category]`
    counts: [[u64; 4]; LEVELS],
}

impl AggregatedSimulator {
    fn batches(
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<Vec<BatchCounts>, SimError> {
        let cycles = check_inputs(config, channel)?;
        let physics = channel.physics();
        let outcome_probs: Vec<[f64; 4]> = config
            .intensities
            .iter()
            .map(|&mu| {
                let o = physics.poisson_outcome(mu);
                [o.correct[0], o.correct[1], o.error[0], o.error[1]]
            })
            .collect();
        let batches = cycles.div_ceil(AGGREGATE_BATCH);
        Ok((0..batches)
            .into_par_iter()
            .map(|b| {
                let size = (cycles - b * AGGREGATE_BATCH).min(AGGREGATE_BATCH);
                let mut rng = StreamRng::new(seed, Domain::Batch, b);
                let sent_v = multinomial(&mut rng, size, &config.send_probabilities);
                let mut sent = [0u64; LEVELS];
                let mut counts = [[0u64; 4]; LEVELS];
                for j in 0..LEVELS {
                    sent[j] = sent_v[j];
                    let c = multinomial(&mut rng, sent[j], &outcome_probs[j]);
                    counts[j].copy_from_slice(&c);
                }
                BatchCounts { sent, counts }
            })
            .collect())
    }

    fn tallies(batches: &[BatchCounts]) -> SessionTallies {
        let mut t = SessionTallies::default();
        for b in batches {
            for j in 0..LEVELS {
                let l = &mut t.levels[j];
                l.pulses_sent += b.sent[j];
                l.sifted_detections += b.counts[j].iter().sum::<u64>();
                l.sifted_errors += b.counts[j][2] + b.counts[j][3];
            }
        }
        t.clock_cycles = t.levels.iter().map(|l| l.pulses_sent).sum();
        t
    }
}

impl SessionSimulator for AggregatedSimulator {
    fn name(&self) -> &'static str {
        "aggregated"
    }

    fn simulate(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<SessionOutput, SimError> {
        let batches = Self::batches(config, channel, seed)?;
        let mut events = Vec::new();
        for (b, counts) in batches.iter().enumerate() {
            let start = events.len();
            for j in 0..LEVELS {
                for (k, &(a, bb)) in CATEGORIES.iter().enumerate() {
                    for _ in 0..counts.counts[j][k] {
                        events.push(SiftedEvent {
                            cycle: b as u64 * AGGREGATE_BATCH,
                            level: j as u8,
                            basis: 0,
                            alice_bit: a,
                            bob_bit: bb,
                        });
                    }
                }
            }
            StreamRng::new(seed, Domain::Batch, u64::MAX - b as u64).shuffle(&mut events[start..]);
        }
        let frame = sift_and_balance(&events, seed);
        let tallies = Self::tallies(&batches);
        debug_assert_eq!(
            tallies_from_frame(&frame, tallies.pulses_sent()).ok(),
            Some(tallies)
        );
        Ok(SessionOutput {
            tallies,
            frame,
            events,
        })
    }

    fn simulate_tallies(
        &self,
        config: &DecoyConfig,
        channel: &ChannelModel,
        seed: u64,
    ) -> Result<SessionTallies, SimError> {
        Ok(Self::tallies(&Self::batches(config, channel, seed)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless() -> ChannelModel {
        ChannelModel {
            fiber_length_km: 0.0,
            attenuation_db_per_km: 0.21,
            detector_efficiencies: [1.0, 1.0],
            background_yield: 0.0,
            visibility_error: 0.0,
            window_acceptance: 1.0,
        }
    }

    fn config(cycles: f64) -> DecoyConfig {
        DecoyConfig {
            intensities: [10.0, 1.0, 0.0],
            send_probabilities: [1.0, 0.0, 0.0],
            clock_rate_hz: cycles,
            duration_s: 1.0,
            epsilon: 1e-7,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(10.0);
        assert!(c.validate().is_ok());
        c.intensities = [0.3, 0.3, 0.0];
        assert!(c.validate().is_err());
        c.intensities = [0.3, 0.1, 0.01];
        assert!(c.validate().is_err());
        c.intensities = [0.3, 0.1, 0.003];
        assert!(c.validate().is_ok());
        c.send_probabilities = [0.5, 0.3, 0.3];
        assert!(c.validate().is_err());
        c.send_probabilities = [0.831, 0.123, 0.046];
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn lossless_channel_keeps_half() {
        for sim in ["pulse", "aggregated"] {
            let out = simulators()
                .create(sim)
                .unwrap()
                .simulate(&config(1e4), &lossless(), 3)
                .unwrap();
            let t = out.tallies;
            assert_eq!(t.clock_cycles, 10_000);
            assert_eq!(t.levels[0].sifted_errors, 0, "{sim}");
            let frac = t.levels[0].sifted_detections as f64 / 1e4;
            assert!(
                (frac - 0.5).abs() < 5.0 * (0.25f64 / 1e4).sqrt(),
                "{sim}: {frac}"
            );
            assert_eq!(out.frame.disagreements(), 0);
        }
    }

    #[test]
    fn identical_seed_identical_output() {
        for sim in simulators().names() {
            let s = simulators().create(sim).unwrap();
            let a = s.simulate(&config(5e4), &lossless(), 17).unwrap();
            let b = s.simulate(&config(5e4), &lossless(), 17).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sifting_keeps_matched_single_clicks() {
        let bases = [(0, 0), (1, 0), (0, 1), (1, 1)];
        let raw: Vec<RawDetection> = bases
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| RawDetection {
                cycle: i as u64,
                level: 0,
                alice_basis: a,
                bob_basis: b,
                alice_bit: 1,
                clicks: [false, true],
            })
            .collect();
        let kept: Vec<u64> = sift(&raw).iter().map(|e| e.cycle).collect();
        assert_eq!(kept, vec![0, 3]);
        let mut double = raw[0];
        double.clicks = [true, true];
        assert!(sift(&[double]).is_empty());
    }

    fn events(alice: &[u8], bob: &[u8]) -> Vec<SiftedEvent> {
        alice
            .iter()
            .zip(bob)
            .enumerate()
            .map(|(i, (&a, &b))| SiftedEvent {
                cycle: i as u64,
                level: 0,
                basis: 0,
                alice_bit: a,
                bob_bit: b,
            })
            .collect()
    }

    #[test]
    fn balance_flips_exactly_half() {
        let frame = sift_and_balance(&events(&[0; 40], &[0; 40]), 5);
        assert_eq!(frame.zeros_fraction_before_flip, 1.0);
        assert_eq!(frame.alice_bits.iter().filter(|&&b| b == 1).count(), 20);
        assert_eq!(frame.alice_bits, frame.bob_bits);
    }

    #[test]
    fn balance_preserves_disagreements() {
        let mut rng = StreamRng::new(1, Domain::Test, 0);
        let a: Vec<u8> = (0..501).map(|_| rng.bit()).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&x| if rng.uniform() < 0.1 { x ^ 1 } else { x })
            .collect();
        let before = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        let frame = sift_and_balance(&events(&a, &b), 9);
        assert_eq!(frame.disagreements(), before);
    }

    #[test]
    fn empty_frame_is_degenerate_not_error() {
        let frame = sift_and_balance(&[], 1);
        assert!(frame.is_empty());
        assert_eq!(frame.zeros_fraction_before_flip, 0.5);
        let t = tallies_from_frame(&frame, [4, 0, 0]).unwrap();
        assert!(t.levels.iter().all(|l| l.sifted_detections == 0));
    }

    #[test]
    fn tallies_count_disagreements() {
        let frame = SiftedFrame {
            alice_bits: vec![0, 1, 1, 0, 1, 0],
            bob_bits: vec![0, 1, 0, 0, 1, 0],
            intensity_tags: vec![0, 0, 0, 1, 2, 0],
            zeros_fraction_before_flip: 0.5,
        };
        let t = tallies_from_frame(&frame, [10, 10, 10]).unwrap();
        assert_eq!(t.levels[0].sifted_errors, 1);
        assert_eq!(t.levels[0].sifted_detections, 4);
        assert_eq!(t.levels[1].sifted_detections, 1);
        assert_eq!(t.clock_cycles, 30);
        let mut bad = frame.clone();
        bad.intensity_tags.pop();
        assert!(tallies_from_frame(&bad, [10, 10, 10]).is_err());
    }

    #[test]
    fn merge_is_associative() {
        let mk = |a: u64| SessionTallies {
            levels: [LevelTally {
                pulses_sent: a,
                sifted_detections: a / 2,
                sifted_errors: a / 5,
            }; 3],
            clock_cycles: 3 * a,
        };
        let (x, y, z) = (mk(10), mk(20), mk(35));
        assert_eq!(x.merge(&y).merge(&z), x.merge(&y.merge(&z)));
        assert_eq!(x.merge(&y), y.merge(&x));
        assert!(x.merge(&y).validate().is_ok());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let mut buf = Vec::new();
        write_detection_records(&events(&[0, 1], &[0, 0]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "cycle,level,basis,alice_bit,bob_bit\n0,0,0,0,0\n1,0,0,1,0\n"
        );
    }
}
