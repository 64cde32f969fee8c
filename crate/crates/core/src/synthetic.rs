//! Seeded ground-truth scenarios from closed-form responses or a known CRM.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bridge::crm_to_mdcv_ordered;
use crate::convolution::{simulate_pressure, DeconvolutionModel};
use crate::crm::{crm_cumulative_production, CrmModel};
use crate::error::{Error, Result};
use crate::utr::{analytic_utr, ReservoirParams, UtrMatrix};
use crate::well_data::{PressureSample, PressureSeries, RateHistory, RateStep, Scenario, Well, WellId, WellRole};

fn default_p0() -> f64 {
    250.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWell {
    pub id: WellId,
    pub role: WellRole,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default = "default_p0")]
    pub p0_bar: f64,
    /// Typical rate magnitude (m³/day); injectors are emitted negative.
    #[serde(default)]
    pub base_rate: f64,
    /// Explicit `[time, rate]` steps (signed), replacing the generator.
    #[serde(default)]
    pub rates: Option<Vec<[f64; 2]>>,
    /// Whether the well has a pressure gauge.
    #[serde(default = "yes")]
    pub gauge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateSchedule {
    pub step_days: f64,
    /// Relative half-width of the uniform rate draw around the base rate.
    pub variation: f64,
    /// Chance per step of drawing a new rate.
    pub event_probability: f64,
    /// Rate changes only happen inside these `[start, end)` windows when given.
    pub event_windows: Option<Vec<[f64; 2]>>,
}

impl Default for RateSchedule {
    fn default() -> Self {
        RateSchedule {
            step_days: 1.0,
            variation: 0.5,
            event_probability: 0.2,
            event_windows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrmControl {
    /// Rates are scheduled; producer pressures follow from the bridged responses.
    Rates,
    /// Producer BHP follows a seeded piecewise-linear walk; producer rates follow the
    /// rate equation and are recorded as interval means.
    Bhp { bhp_step_bar: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSource {
    Analytic { reservoir: ReservoirParams },
    Crm { model: CrmModel, control: CrmControl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub seed: u64,
    pub horizon_days: f64,
    #[serde(default = "one")]
    pub sampling_days: f64,
    #[serde(default)]
    pub sample_offset_days: f64,
    #[serde(default)]
    pub noise_std_bar: f64,
    /// Standard deviation of the mean-one log-normal factor applied to each emitted step.
    #[serde(default)]
    pub rate_corruption_std: f64,
    /// Write the initial pressures into the scenario.
    #[serde(default = "yes")]
    pub emit_p0: bool,
    pub wells: Vec<SyntheticWell>,
    #[serde(default)]
    pub schedule: RateSchedule,
    pub source: SyntheticSource,
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.horizon_days > 0.0) || !(self.sampling_days > 0.0) || !(self.schedule.step_days > 0.0) {
            return bad("horizon, sampling and step lengths must be > 0".into());
        }
        if !(self.noise_std_bar >= 0.0) || !(self.rate_corruption_std >= 0.0) {
            return bad("noise and corruption must be >= 0".into());
        }
        if !(self.sample_offset_days >= 0.0) {
            return bad("sample offset must be >= 0".into());
        }
        if self.wells.is_empty() {
            return bad("no wells".into());
        }
        for (i, a) in self.wells.iter().enumerate() {
            if self.wells[..i].iter().any(|b| b.id == a.id) {
                return bad(format!("duplicate well `{}`", a.id));
            }
        }
        if let SyntheticSource::Crm { control: CrmControl::Bhp { .. }, .. } = &self.source {
            if self.sampling_days > self.schedule.step_days {
                return bad("BHP control needs sampling_days <= step_days".into());
            }
        }
        Ok(())
    }
}

/// What generated a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Deconvolution model reproducing the noise-free pressures (absent under BHP control).
    pub model: Option<DeconvolutionModel>,
    pub crm: Option<CrmModel>,
    /// Rates before corruption.
    pub true_rates: Vec<RateHistory>,
    /// Noise-free pressures.
    pub true_pressures: Vec<PressureSeries>,
}

fn in_windows(t: f64, windows: &Option<Vec<[f64; 2]>>) -> bool {
    windows
        .as_ref()
        .is_none_or(|w| w.iter().any(|[a, b]| t >= *a && t < *b))
}

fn scheduled_rates(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<RateHistory>> {
    let sch = &spec.schedule;
    let n_steps = (spec.horizon_days / sch.step_days).ceil() as usize;
    spec.wells
        .iter()
        .map(|w| {
            let sign = if w.role == WellRole::Injector { -1.0 } else { 1.0 };
            // Draw for every well so explicit rates do not shift other wells' streams.
            let draw = |rng: &mut ChaCha8Rng| w.base_rate * (1.0 + sch.variation * (2.0 * rng.random::<f64>() - 1.0));
            let mut q = draw(rng);
            let mut steps = Vec::with_capacity(n_steps);
            for k in 0..n_steps {
                let t = k as f64 * sch.step_days;
                let event = rng.random::<f64>() < sch.event_probability;
                let fresh = draw(rng);
                if k > 0 && event && in_windows(t, &sch.event_windows) {
                    q = fresh;
                }
                steps.push(RateStep { time: t, rate: sign * q });
            }
            match &w.rates {
                Some(explicit) => RateHistory::new(
                    w.id.as_str(),
                    explicit.iter().map(|[t, q]| RateStep { time: *t, rate: *q }).collect(),
                ),
                None => RateHistory::new(w.id.as_str(), steps),
            }
        })
        .collect()
}

fn sample_times(spec: &SyntheticSpec) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let t = spec.sample_offset_days + i as f64 * spec.sampling_days;
        if t > spec.horizon_days + 1e-9 * spec.horizon_days {
            break;
        }
        if t > 0.0 {
            out.push(t);
        }
        i += 1;
    }
    out
}

fn corrupt(rates: &[RateHistory], std: f64, rng: &mut ChaCha8Rng) -> Vec<RateHistory> {
    let sigma = (1.0 + std * std).ln().sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    rates
        .iter()
        .map(|r| {
            let factors: Vec<f64> = r
                .steps()
                .iter()
                .map(|_| {
                    let z: f64 = normal.sample(rng);
                    if std > 0.0 {
                        (sigma * z - 0.5 * sigma * sigma).exp()
                    } else {
                        1.0
                    }
                })
                .collect();
            r.corrected(&factors)
        })
        .collect()
}

fn add_noise(well: &str, series: &PressureSeries, std: f64, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Result<PressureSeries> {
    PressureSeries::new(
        well,
        series
            .samples()
            .iter()
            .map(|s| {
                let e: f64 = normal.sample(rng);
                PressureSample {
                    time: s.time,
                    pressure: s.pressure + std * e,
                    weight: s.weight,
                }
            })
            .collect(),
    )
}

/// Generates a scenario and the truth behind it. All randomness comes from `spec.seed`.
pub fn generate_scenario(spec: &SyntheticSpec) -> Result<(Scenario, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ids: Vec<WellId> = spec.wells.iter().map(|w| w.id.clone()).collect();
    let wells: Vec<Well> = spec
        .wells
        .iter()
        .map(|w| Well { id: w.id.clone(), role: w.role })
        .collect();
    let nw = wells.len();
    let mut true_rates = scheduled_rates(spec, &mut rng)?;
    let times = sample_times(spec);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let (model, crm, true_pressures) = match &spec.source {
        SyntheticSource::Analytic { reservoir } => {
            reservoir.validate()?;
            let mut rows = vec![vec![None; nw]; nw];
            for n in 0..nw {
                for m in 0..nw {
                    let (a, b) = (&spec.wells[n], &spec.wells[m]);
                    let d = if n == m {
                        reservoir.well_radius
                    } else {
                        let d = (a.x - b.x).hypot(a.y - b.y);
                        if d < reservoir.well_radius {
                            return Err(Error::OverlappingWells(a.id.to_string(), b.id.to_string()));
                        }
                        d
                    };
                    rows[n][m] = Some(analytic_utr(reservoir, d)?);
                }
            }
            let p0: Vec<Option<f64>> = spec.wells.iter().map(|w| Some(w.p0_bar)).collect();
            let model = DeconvolutionModel::new(ids.clone(), p0, UtrMatrix::from_rows(rows)?)?;
            let q: Vec<Vec<f64>> = spec
                .wells
                .iter()
                .map(|w| if w.gauge { times.clone() } else { Vec::new() })
                .collect();
            let p = simulate_pressure(&model, &true_rates, &q)?;
            (Some(model), None, p)
        }
        SyntheticSource::Crm { model: crm, control } => {
            let find = |id: &WellId| {
                ids.iter()
                    .position(|w| w == id)
                    .ok_or_else(|| Error::InvalidConfig(format!("CRM well `{id}` not in the well list")))
            };
            let prod_idx = crm.producers.iter().map(|p| find(&p.id)).collect::<Result<Vec<_>>>()?;
            let inj_idx = crm.injectors.iter().map(find).collect::<Result<Vec<_>>>()?;
            match control {
                CrmControl::Rates => {
                    let p0: Vec<f64> = prod_idx.iter().map(|&k| spec.wells[k].p0_bar).collect();
                    let model = crm_to_mdcv_ordered(crm, &p0, &ids)?;
                    let q: Vec<Vec<f64>> = (0..nw)
                        .map(|k| {
                            if prod_idx.contains(&k) && spec.wells[k].gauge {
                                times.clone()
                            } else {
                                Vec::new()
                            }
                        })
                        .collect();
                    let p = simulate_pressure(&model, &true_rates, &q)?;
                    (Some(model), Some(crm.clone()), p)
                }
                CrmControl::Bhp { bhp_step_bar } => {
                    let step = spec.schedule.step_days;
                    let injections: Vec<RateHistory> = inj_idx.iter().map(|&k| true_rates[k].clone()).collect();
                    let mut knots = vec![0.0];
                    knots.extend(times.iter().copied());
                    let bhp: Vec<PressureSeries> = prod_idx
                        .iter()
                        .map(|&k| {
                            let mut p = spec.wells[k].p0_bar;
                            let pairs: Vec<(f64, f64)> = knots
                                .iter()
                                .map(|&t| {
                                    let u: f64 = rng.random();
                                    if t > step {
                                        p += bhp_step_bar * (2.0 * u - 1.0);
                                    }
                                    (t, p)
                                })
                                .collect();
                            PressureSeries::from_pairs(&pairs)
                        })
                        .collect();
                    // Steady start: constant BHP and injection over the first step.
                    let q0: Vec<f64> = (0..prod_idx.len())
                        .map(|n| {
                            injections
                                .iter()
                                .zip(&crm.connectivity[n])
                                .map(|(r, f)| -f * r.rate_at(0.0))
                                .sum()
                        })
                        .collect();
                    let n_steps = (spec.horizon_days / step).ceil() as usize;
                    let mut grid: Vec<f64> = (0..=n_steps).map(|k| (k as f64 * step).min(spec.horizon_days)).collect();
                    grid.dedup();
                    let cum = crm_cumulative_production(crm, &injections, &bhp, &q0, &grid)?;
                    for (n, &k) in prod_idx.iter().enumerate() {
                        let steps = grid
                            .windows(2)
                            .enumerate()
                            .map(|(j, w)| RateStep {
                                time: w[0],
                                rate: (cum[n][j + 1] - cum[n][j]) / (w[1] - w[0]),
                            })
                            .collect();
                        true_rates[k] = RateHistory::new(ids[k].as_str(), steps)?;
                    }
                    let mut p = vec![PressureSeries::empty(); nw];
                    for (n, &k) in prod_idx.iter().enumerate() {
                        if spec.wells[k].gauge {
                            p[k] = bhp[n].filtered(|t| t > 0.0);
                        }
                    }
                    (None, Some(crm.clone()), p)
                }
            }
        }
    };

    let rates = corrupt(&true_rates, spec.rate_corruption_std, &mut rng);
    let pressures = true_pressures
        .iter()
        .zip(&ids)
        .map(|(p, id)| add_noise(id.as_str(), p, spec.noise_std_bar, &normal, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let p0 = spec
        .wells
        .iter()
        .map(|w| spec.emit_p0.then_some(w.p0_bar))
        .collect();
    let scenario = Scenario::new(wells, rates, pressures, p0, Vec::new())?;
    Ok((
        scenario,
        GroundTruth {
            model,
            crm,
            true_rates,
            true_pressures,
        },
    ))
}
