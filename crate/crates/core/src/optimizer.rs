//! Search over intensities and send probabilities for the best predicted
//! secret bit rate.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, AnalysisError, EcCost, KeyInputs, DEFAULT_F_EC};
use crate::channel::ChannelModel;
use crate::sim::{DecoyConfig, LevelTally, SessionTallies, SimError, LEVELS};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("every evaluated configuration has zero secret rate")]
    ZeroRateLandscape { evaluations: usize },
    #[error("empty or inverted search box: {0}")]
    Box(String),
    #[error(transparent)]
    Config(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Counts a session would produce on average, rounded to integers.
pub fn expected_tallies(
    config: &DecoyConfig,
    channel: &ChannelModel,
) -> Result<SessionTallies, SimError> {
    config.validate()?;
    channel.validate()?;
    let cycles = config.cycles()? as f64;
    let physics = channel.physics();
    let mut t = SessionTallies::default();
    for j in 0..LEVELS {
        let pulses = (cycles * config.send_probabilities[j]).round();
        let o = physics.poisson_outcome(config.intensities[j]);
        t.levels[j] = LevelTally {
            pulses_sent: pulses as u64,
            sifted_detections: (pulses * o.detection()).round() as u64,
            sifted_errors: (pulses * o.errors()).round() as u64,
        };
    }
    t.clock_cycles = t.levels.iter().map(|l| l.pulses_sent).sum();
    Ok(t)
}

/// Expected fraction of zeros among signal-level sifted bits.
pub fn expected_zeros_fraction(mu0: f64, channel: &ChannelModel) -> f64 {
    let o = channel.physics().poisson_outcome(mu0);
    if o.detection() > 0.0 {
        o.zeros() / o.detection()
    } else {
        0.5
    }
}

/// Deterministic secret bit rate from expected counts, with the
/// reconciliation cost at efficiency `f_ec`.
pub fn predict_rate_with(
    config: &DecoyConfig,
    channel: &ChannelModel,
    f_ec: f64,
) -> Result<f64, OptimizerError> {
    let tallies = expected_tallies(config, channel)?;
    let inputs = KeyInputs {
        zeros_fraction: expected_zeros_fraction(config.intensities[0], channel),
        ec: EcCost::Efficiency(f_ec),
    };
    match analyze(&tallies, &config.intensities, config.epsilon, &inputs) {
        Ok(a) => Ok(a.key.n_sec as f64 / config.duration_s),
        Err(AnalysisError::Inconsistent(_) | AnalysisError::NoPulses(_)) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

pub fn predict_rate(config: &DecoyConfig, channel: &ChannelModel) -> Result<f64, OptimizerError> {
    predict_rate_with(config, channel, DEFAULT_F_EC)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBox {
    pub mu0: [f64; 2],
    pub mu1: [f64; 2],
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    /// `mu2 = extinction_ratio * mu0`.
    pub extinction_ratio: f64,
    /// Smallest allowed probability of the weakest level.
    pub min_p2: f64,
    /// Points per axis in the coarse grid.
    pub grid: usize,
    /// Refinement stops once every step is below this fraction of its range.
    pub tolerance: f64,
    pub f_ec: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            mu0: [0.05, 0.8],
            mu1: [0.01, 0.4],
            p0: [0.4, 0.95],
            p1: [0.02, 0.4],
            extinction_ratio: 0.01,
            min_p2: 0.005,
            grid: 6,
            tolerance: 1e-3,
            f_ec: DEFAULT_F_EC,
        }
    }
}

impl SearchBox {
    fn validate(&self) -> Result<(), OptimizerError> {
        for (name, r) in [
            ("mu0", self.mu0),
            ("mu1", self.mu1),
            ("p0", self.p0),
            ("p1", self.p1),
        ] {
            if !(r[0] <= r[1] && r[0] >= 0.0 && r[1].is_finite()) {
                return Err(OptimizerError::Box(format!("{name} = {r:?}")));
            }
        }
        if self.p0[1] > 1.0 || self.p1[1] > 1.0 {
            return Err(OptimizerError::Box("probabilities above 1".into()));
        }
        if !(self.extinction_ratio >= 0.0 && self.extinction_ratio <= 0.01) {
            return Err(OptimizerError::Box(format!(
                "extinction ratio {}",
                self.extinction_ratio
            )));
        }
        if self.grid < 2 {
            return Err(OptimizerError::Box("grid needs at least 2 points".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(OptimizerError::Box("tolerance must be positive".into()));
        }
        Ok(())
    }

    fn ranges(&self) -> [[f64; 2]; 4] {
        [self.mu0, self.mu1, self.p0, self.p1]
    }
}

/// A point `(mu0, mu1, p0, p1)` of the search space.
type Point = [f64; 4];

fn config_at(x: &Point, base: &DecoyConfig, sb: &SearchBox) -> Option<DecoyConfig> {
    let [mu0, mu1, p0, p1] = *x;
    let p2 = 1.0 - p0 - p1;
    let mu2 = sb.extinction_ratio * mu0;
    if !(mu1 < mu0 && mu1 > mu2 && p2 >= sb.min_p2) {
        return None;
    }
    let c = DecoyConfig {
        intensities: [mu0, mu1, mu2],
        send_probabilities: [p0, p1, p2],
        ..base.clone()
    };
    c.validate().ok().map(|_| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub rate_bps: f64,
}

impl TracePoint {
    fn new(c: &DecoyConfig, rate_bps: f64) -> Self {
        Self {
            mu0: c.intensities[0],
            mu1: c.intensities[1],
            mu2: c.intensities[2],
            p0: c.send_probabilities[0],
            p1: c.send_probabilities[1],
            p2: c.send_probabilities[2],
            rate_bps,
        }
    }

    fn key(&self) -> Point {
        [self.mu0, self.mu1, self.p0, self.p1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_config: DecoyConfig,
    pub predicted_rate: f64,
    pub evaluations: usize,
    pub search_trace: Vec<TracePoint>,
}

/// Higher rate wins; equal rates go to the lexicographically smaller point.
fn better(a: &TracePoint, b: &TracePoint) -> bool {
    match a.rate_bps.partial_cmp(&b.rate_bps) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.key() < b.key(),
    }
}

struct Search<'a> {
    channel: &'a ChannelModel,
    base: &'a DecoyConfig,
    sb: &'a SearchBox,
    trace: Vec<TracePoint>,
}

impl Search<'_> {
    /// Evaluate feasible points in parallel; trace keeps input order.
    fn evaluate(&mut self, points: &[Point]) -> Result<Vec<(Point, TracePoint)>, OptimizerError> {
        let configs: Vec<(Point, DecoyConfig)> = points
            .iter()
            .filter_map(|x| config_at(x, self.base, self.sb).map(|c| (*x, c)))
            .collect();
        let rated: Vec<(Point, TracePoint)> = configs
            .par_iter()
            .map(|(x, c)| {
                predict_rate_with(c, self.channel, self.sb.f_ec)
                    .map(|r| (*x, TracePoint::new(c, r)))
            })
            .collect::<Result<_, _>>()?;
        self.trace.extend(rated.iter().map(|r| r.1));
        Ok(rated)
    }
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Coarse grid over `(mu0, mu1, p0, p1)` with `mu2` pinned to
/// `extinction_ratio * mu0`, then coordinate refinement with halving steps.
///
/// `template` supplies clock rate, duration and epsilon; `anchors` are extra
/// configurations evaluated alongside the grid.
pub fn optimize(
    channel: &ChannelModel,
    template: &DecoyConfig,
    sb: &SearchBox,
    anchors: &[DecoyConfig],
) -> Result<OptimizationResult, OptimizerError> {
    sb.validate()?;
    channel.validate().map_err(SimError::from)?;
    let mut search = Search {
        channel,
        base: template,
        sb,
        trace: Vec::new(),
    };
    let ranges = sb.ranges();
    let axes: Vec<Vec<f64>> = ranges.iter().map(|&r| linspace(r, sb.grid)).collect();
    let mut grid = Vec::new();
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &d in &axes[3] {
                    grid.push([a, b, c, d]);
                }
            }
        }
    }
    let mut anchor_points: Vec<Point> = Vec::new();
    for c in anchors {
        let mut anchor = c.clone();
        anchor.clock_rate_hz = template.clock_rate_hz;
        anchor.duration_s = template.duration_s;
        anchor.epsilon = template.epsilon;
        // Anchors keep their own mu2, so they are rated as given.
        let r = predict_rate_with(&anchor, channel, sb.f_ec)?;
        search.trace.push(TracePoint::new(&anchor, r));
        anchor_points.push([
            anchor.intensities[0],
            anchor.intensities[1],
            anchor.send_probabilities[0],
            anchor.send_probabilities[1],
        ]);
    }
    let mut rated = search.evaluate(&grid)?;
    rated.extend(search.evaluate(&anchor_points)?);
    let mut best = *rated
        .iter()
        .reduce(|a, b| if better(&b.1, &a.1) { b } else { a })
        .ok_or_else(|| OptimizerError::Box("no feasible grid point".into()))?;

    let mut steps: Vec<f64> = ranges
        .iter()
        .map(|r| (r[1] - r[0]) / (sb.grid - 1) as f64 / 2.0)
        .collect();
    let floor: Vec<f64> = ranges
        .iter()
        .map(|r| ((r[1] - r[0]) * sb.tolerance).max(1e-12))
        .collect();
    while steps.iter().zip(&floor).any(|(s, f)| s > f) {
        let mut improved = false;
        for axis in 0..4 {
            if steps[axis] <= floor[axis] {
                continue;
            }
            let candidates: Vec<Point> = [-1.0, 1.0]
                .iter()
                .map(|sign| {
                    let mut x = best.0;
                    x[axis] =
                        (x[axis] + sign * steps[axis]).clamp(ranges[axis][0], ranges[axis][1]);
                    x
                })
                .filter(|x| *x != best.0)
                .collect();
            for cand in search.evaluate(&candidates)? {
                if cand.1.rate_bps > best.1.rate_bps {
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s /= 2.0;
            }
        }
    }
    let evaluations = search.trace.len();
    if best.1.rate_bps <= 0.0 {
        return Err(OptimizerError::ZeroRateLandscape { evaluations });
    }
    let best_config = config_at(&best.0, template, sb).expect("best point was feasible when rated");
    Ok(OptimizationResult {
        best_config,
        predicted_rate: best.1.rate_bps,
        evaluations,
        search_trace: search.trace,
    })
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for t in trace {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(km: f64) -> ChannelModel {
        ChannelModel {
            fiber_length_km: km,
            attenuation_db_per_km: 0.21,
            detector_efficiencies: [0.33, 0.5],
            background_yield: 6.6e-7,
            visibility_error: 0.03,
            window_acceptance: 0.2,
        }
    }

    fn template() -> DecoyConfig {
        DecoyConfig {
            intensities: [0.3, 0.1, 0.003],
            send_probabilities: [0.8, 0.15, 0.05],
            clock_rate_hz: 2.5e6,
            duration_s: 100.0,
            epsilon: 1e-7,
        }
    }

    #[test]
    fn dead_channel_has_zero_rate() {
        let mut ch = channel(10.0);
        ch.window_acceptance = 0.0;
        ch.background_yield = 0.0;
        assert_eq!(predict_rate(&template(), &ch).unwrap(), 0.0);
    }

    #[test]
    fn expected_tallies_are_consistent() {
        let t = expected_tallies(&template(), &channel(30.0)).unwrap();
        t.validate().unwrap();
        assert_eq!(t.clock_cycles, 250_000_000);
    }

    #[test]
    fn dead_channel_landscape_is_reported() {
        let mut ch = channel(10.0);
        ch.window_acceptance = 0.0;
        let sb = SearchBox {
            grid: 2,
            tolerance: 0.2,
            ..SearchBox::default()
        };
        assert!(matches!(
            optimize(&ch, &template(), &sb, &[]),
            Err(OptimizerError::ZeroRateLandscape { .. })
        ));
    }

    #[test]
    fn bad_box_is_rejected() {
        let sb = SearchBox {
            mu0: [0.5, 0.1],
            ..SearchBox::default()
        };
        assert!(matches!(
            optimize(&channel(10.0), &template(), &sb, &[]),
            Err(OptimizerError::Box(_))
        ));
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&[TracePoint::new(&template(), 2.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mu0,mu1,mu2,p0,p1,p2,rate_bps\n0.3,0.1,0.003,0.8,0.15,0.05,2.0"));
    }
}
