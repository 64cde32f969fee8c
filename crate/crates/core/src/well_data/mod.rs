//! Wells, rate and pressure histories, and the scenario that bundles them.
//!
//! Units are fixed throughout the crate: time in days, pressure in bar,
//! rate in m³/day. Production rates are positive and injection rates are
//! negative. Every rate history is a piecewise-constant step function that
//! is zero for `t <= 0`; each step holds on `[t_k, t_{k+1})`.

mod io;
mod qc;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_scenario, pressures_csv, rates_csv, write_scenario, CumulativeConfig, InjectionSign, ScenarioConfig, WellConfig,
    CONFIG_FILE, PRESSURES_FILE, RATES_FILE,
};
pub use qc::{qc_report, variation_events, QcOptions, QcReport, QcVerdict, WellQc};
pub use split::{split_dataset, Interval, SplitMode, SplitSpec};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WellId(String);

impl WellId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidScenario("empty well id".into()));
        }
        Ok(WellId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for WellId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        WellId::new(value)
    }
}

impl From<WellId> for String {
    fn from(id: WellId) -> String {
        id.0
    }
}

impl fmt::Display for WellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellRole {
    Producer,
    Injector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Well {
    pub id: WellId,
    pub role: WellRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStep {
    pub time: f64,
    pub rate: f64,
}

/// Piecewise-constant signed rate history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateHistory {
    steps: Vec<RateStep>,
}

impl RateHistory {
    pub fn new(well: &str, steps: Vec<RateStep>) -> Result<Self> {
        let mut previous: Option<f64> = None;
        for step in &steps {
            if !step.time.is_finite() || step.time < 0.0 {
                return Err(Error::InvalidScenario(format!(
                    "well `{well}`: rate step time {} must be finite and >= 0",
                    step.time
                )));
            }
            if !step.rate.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "well `{well}`: non-finite rate at t = {}",
                    step.time
                )));
            }
            if let Some(prev) = previous {
                if step.time == prev {
                    return Err(Error::DuplicateTimestamp {
                        well: well.to_string(),
                        time: step.time,
                    });
                }
                if step.time < prev {
                    return Err(Error::NonMonotoneTime {
                        well: well.to_string(),
                        time: step.time,
                        previous: prev,
                    });
                }
            }
            previous = Some(step.time);
        }
        Ok(RateHistory { steps })
    }

    /// Convenience constructor for `(time, rate)` pairs; panics on invalid input.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let steps = pairs
            .iter()
            .map(|&(time, rate)| RateStep { time, rate })
            .collect();
        RateHistory::new("<inline>", steps).expect("valid rate history")
    }

    pub fn zero() -> Self {
        RateHistory::default()
    }

    pub fn steps(&self) -> &[RateStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.time)
    }

    pub fn is_all_zero(&self) -> bool {
        self.steps.iter().all(|s| s.rate == 0.0)
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.rate.abs()))
    }

    /// Rate in effect just before `t`: the last step starting strictly before `t`.
    pub fn rate_before(&self, t: f64) -> f64 {
        let idx = self.steps.partition_point(|s| s.time < t);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1].rate
        }
    }

    /// Rate of the step containing `t` (steps are closed on the left).
    pub fn rate_at(&self, t: f64) -> f64 {
        let idx = self.steps.partition_point(|s| s.time <= t);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1].rate
        }
    }

    /// Exact integral of the step function over `[0, t]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (k, step) in self.steps.iter().enumerate() {
            if step.time >= t {
                break;
            }
            let end = self
                .steps
                .get(k + 1)
                .map_or(t, |next| next.time.min(t));
            total += step.rate * (end - step.time);
        }
        total
    }

    /// Integral of `|q|` over `[a, b]`.
    pub fn abs_volume(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (k, step) in self.steps.iter().enumerate() {
            let end = self.steps.get(k + 1).map_or(f64::INFINITY, |n| n.time);
            let lo = step.time.max(a);
            let hi = end.min(b);
            if hi > lo {
                total += step.rate.abs() * (hi - lo);
            }
        }
        total
    }

    /// Signed step increments `(t_k, q_k - q_{k-1})` with the implicit zero before the first step.
    pub fn increments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.steps.iter().enumerate().map(move |(k, s)| {
            let prev = if k == 0 { 0.0 } else { self.steps[k - 1].rate };
            (s.time, s.rate - prev)
        })
    }

    pub fn scaled(&self, factor: f64) -> RateHistory {
        RateHistory {
            steps: self
                .steps
                .iter()
                .map(|s| RateStep {
                    time: s.time,
                    rate: s.rate * factor,
                })
                .collect(),
        }
    }

    pub fn shifted(&self, delay: f64) -> RateHistory {
        RateHistory {
            steps: self
                .steps
                .iter()
                .map(|s| RateStep {
                    time: s.time + delay,
                    rate: s.rate,
                })
                .collect(),
        }
    }

    /// Applies per-step multiplicative factors; steps beyond `factors` keep factor 1.
    pub fn corrected(&self, factors: &[f64]) -> RateHistory {
        RateHistory {
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(k, s)| RateStep {
                    time: s.time,
                    rate: s.rate * factors.get(k).copied().unwrap_or(1.0),
                })
                .collect(),
        }
    }

    /// Keeps the steps starting before `t`.
    pub fn truncated_before(&self, t: f64) -> RateHistory {
        RateHistory {
            steps: self.steps.iter().copied().filter(|s| s.time < t).collect(),
        }
    }

    /// Appends later steps; the first appended step must start after the last existing one.
    pub fn extended(&self, well: &str, later: &[RateStep]) -> Result<RateHistory> {
        let mut steps = self.steps.clone();
        steps.extend_from_slice(later);
        RateHistory::new(well, steps)
    }

    /// Sum of two step functions.
    pub fn sum(&self, other: &RateHistory) -> RateHistory {
        let mut times: Vec<f64> = self.times().chain(other.times()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        RateHistory {
            steps: times
                .into_iter()
                .map(|t| RateStep {
                    time: t,
                    rate: self.rate_at(t) + other.rate_at(t),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureSample {
    pub time: f64,
    pub pressure: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PressureSeries {
    samples: Vec<PressureSample>,
}

impl PressureSeries {
    pub fn new(well: &str, samples: Vec<PressureSample>) -> Result<Self> {
        let mut previous: Option<f64> = None;
        for s in &samples {
            if !s.time.is_finite() || !s.pressure.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "well `{well}`: non-finite pressure sample at t = {}",
                    s.time
                )));
            }
            if !(s.weight >= 0.0) || !s.weight.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "well `{well}`: weight {} at t = {} must be finite and >= 0",
                    s.weight, s.time
                )));
            }
            if let Some(prev) = previous {
                if s.time == prev {
                    return Err(Error::DuplicateTimestamp {
                        well: well.to_string(),
                        time: s.time,
                    });
                }
                if s.time < prev {
                    return Err(Error::NonMonotoneTime {
                        well: well.to_string(),
                        time: s.time,
                        previous: prev,
                    });
                }
            }
            previous = Some(s.time);
        }
        Ok(PressureSeries { samples })
    }

    /// Unit-weight series from `(time, pressure)` pairs; panics on invalid input.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let samples = pairs
            .iter()
            .map(|&(time, pressure)| PressureSample {
                time,
                pressure,
                weight: 1.0,
            })
            .collect();
        PressureSeries::new("<inline>", samples).expect("valid pressure series")
    }

    pub fn empty() -> Self {
        PressureSeries::default()
    }

    pub fn samples(&self) -> &[PressureSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn pressures(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.pressure).collect()
    }

    pub fn filtered(&self, mut keep: impl FnMut(f64) -> bool) -> PressureSeries {
        PressureSeries {
            samples: self
                .samples
                .iter()
                .copied()
                .filter(|s| keep(s.time))
                .collect(),
        }
    }

    /// Piecewise-linear interpolation, held constant outside the sampled span.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t <= first.time {
            return Some(first.pressure);
        }
        if t >= last.time {
            return Some(last.pressure);
        }
        let idx = self.samples.partition_point(|s| s.time <= t);
        let a = self.samples[idx - 1];
        let b = self.samples[idx];
        let w = (t - a.time) / (b.time - a.time);
        Some(a.pressure + w * (b.pressure - a.pressure))
    }
}

/// Monthly (or any-period) group cumulative volume, in m³ of absolute volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRecord {
    pub wells: Vec<WellId>,
    pub start_day: f64,
    pub end_day: f64,
    pub volume_m3: f64,
}

/// Time span whose observations belong to a scenario after a split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum ObservationWindow {
    #[default]
    All,
    Within(Vec<Interval>),
    Outside(Vec<Interval>),
}

impl ObservationWindow {
    pub fn contains(&self, t: f64) -> bool {
        match self {
            ObservationWindow::All => true,
            ObservationWindow::Within(iv) => iv.iter().any(|i| i.contains(t)),
            ObservationWindow::Outside(iv) => !iv.iter().any(|i| i.contains(t)),
        }
    }
}

/// A multi-well dataset. Per-well vectors are aligned with `wells`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub wells: Vec<Well>,
    pub rates: Vec<RateHistory>,
    pub pressures: Vec<PressureSeries>,
    pub p0: Vec<Option<f64>>,
    pub cumulative_reference: Vec<CumulativeRecord>,
    #[serde(default)]
    pub window: ObservationWindow,
}

impl Scenario {
    pub fn new(
        wells: Vec<Well>,
        rates: Vec<RateHistory>,
        pressures: Vec<PressureSeries>,
        p0: Vec<Option<f64>>,
        cumulative_reference: Vec<CumulativeRecord>,
    ) -> Result<Self> {
        let s = Scenario {
            wells,
            rates,
            pressures,
            p0,
            cumulative_reference,
            window: ObservationWindow::All,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wells.len();
        if self.rates.len() != n || self.pressures.len() != n || self.p0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} wells but {} rate histories, {} pressure series, {} p0 entries",
                n,
                self.rates.len(),
                self.pressures.len(),
                self.p0.len()
            )));
        }
        for (i, w) in self.wells.iter().enumerate() {
            if self.wells[..i].iter().any(|o| o.id == w.id) {
                return Err(Error::InvalidScenario(format!("duplicate well id `{}`", w.id)));
            }
            if let Some(p0) = self.p0[i] {
                if !p0.is_finite() {
                    return Err(Error::InvalidScenario(format!("well `{}`: p0 not finite", w.id)));
                }
            }
        }
        for rec in &self.cumulative_reference {
            for id in &rec.wells {
                if self.index_of(id.as_str()).is_none() {
                    return Err(Error::InvalidScenario(format!(
                        "cumulative record names unknown well `{id}`"
                    )));
                }
            }
            if !(rec.end_day > rec.start_day) || !rec.volume_m3.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "cumulative record [{}, {}] is malformed",
                    rec.start_day, rec.end_day
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.wells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wells.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.wells.iter().position(|w| w.id.as_str() == id)
    }

    pub fn ids(&self) -> Vec<WellId> {
        self.wells.iter().map(|w| w.id.clone()).collect()
    }

    pub fn producers(&self) -> Vec<usize> {
        self.indices_with_role(WellRole::Producer)
    }

    pub fn injectors(&self) -> Vec<usize> {
        self.indices_with_role(WellRole::Injector)
    }

    fn indices_with_role(&self, role: WellRole) -> Vec<usize> {
        self.wells
            .iter()
            .enumerate()
            .filter(|(_, w)| w.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn pressure_sample_count(&self) -> usize {
        self.pressures
            .iter()
            .map(|p| p.samples().iter().filter(|s| s.weight > 0.0).count())
            .sum()
    }

    /// Latest time mentioned by any rate step or pressure sample.
    pub fn end_time(&self) -> f64 {
        let rate_end = self
            .rates
            .iter()
            .filter_map(|r| r.steps().last().map(|s| s.time))
            .fold(0.0, f64::max);
        let p_end = self
            .pressures
            .iter()
            .filter_map(|p| p.samples().last().map(|s| s.time))
            .fold(0.0, f64::max);
        rate_end.max(p_end)
    }
}
