//! Forward simulation under a deconvolution model.
//!
//! Rate control: `p_n(t) = p0_n − Σ_m Σ_{t_k < t} Δq_mk · U_nm(t − t_k)`.
//! Pressure control marches over the target grid and solves one small
//! linear system per interval for the new rate steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utr::UtrMatrix;
use crate::well_data::{PressureSample, PressureSeries, RateHistory, RateStep, WellId};

pub const DEFAULT_CORRECTION_BAND: (f64, f64) = (0.7, 1.3);
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionModel {
    pub wells: Vec<WellId>,
    /// Initial formation pressure per well; `None` marks a row that is not modeled.
    pub p0: Vec<Option<f64>>,
    pub utrs: UtrMatrix,
    /// Per-well, per-step multiplicative factors; missing entries count as 1.
    pub rate_corrections: Vec<Vec<f64>>,
}

impl DeconvolutionModel {
    pub fn new(wells: Vec<WellId>, p0: Vec<Option<f64>>, utrs: UtrMatrix) -> Result<Self> {
        let m = DeconvolutionModel {
            rate_corrections: vec![Vec::new(); wells.len()],
            wells,
            p0,
            utrs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.wells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wells.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wells.len();
        if self.p0.len() != n || self.utrs.dim() != n || self.rate_corrections.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "model over {n} wells has {} p0 entries, {}x{} responses, {} correction rows",
                self.p0.len(),
                self.utrs.dim(),
                self.utrs.dim(),
                self.rate_corrections.len()
            )));
        }
        if let Some(p) = self.p0.iter().flatten().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p0 {p} is not finite")));
        }
        if let Some(c) = self.rate_corrections.iter().flatten().find(|c| !(**c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter(format!("rate correction {c} must be finite and > 0")));
        }
        Ok(())
    }

    /// Recorded rates scaled by the model's correction factors.
    pub fn corrected_rates(&self, rates: &[RateHistory]) -> Vec<RateHistory> {
        rates
            .iter()
            .zip(&self.rate_corrections)
            .map(|(r, c)| r.corrected(c))
            .collect()
    }

    fn check_inputs(&self, rates: &[RateHistory]) -> Result<()> {
        self.validate()?;
        if rates.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rate histories for a {}-well model",
                rates.len(),
                self.len()
            )));
        }
        // A modeled well that flows must at least carry its own drawdown response.
        for (n, p0) in self.p0.iter().enumerate() {
            if p0.is_some() && !self.utrs.is_active(n, n) && !rates[n].is_all_zero() {
                return Err(Error::MissingUtr {
                    row: self.wells[n].to_string(),
                    col: self.wells[n].to_string(),
                });
            }
        }
        Ok(())
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}

/// Drawdown `Σ_m Σ_{t_k < t} Δq_mk U_nm(t − t_k)` at well `n`.
fn drawdown(model: &DeconvolutionModel, rates: &[RateHistory], n: usize, t: f64) -> f64 {
    let mut total = 0.0;
    for (m, r) in rates.iter().enumerate() {
        let Some(u) = model.utrs.get(n, m) else {
            continue;
        };
        for (tk, dq) in r.increments() {
            if tk >= t {
                break;
            }
            total += dq * u.eval(t - tk);
        }
    }
    total
}

fn series(n: usize, model: &DeconvolutionModel, times: &[f64], value: impl Fn(f64) -> f64) -> Result<PressureSeries> {
    if model.p0[n].is_none() {
        return Ok(PressureSeries::empty());
    }
    PressureSeries::new(
        model.wells[n].as_str(),
        times
            .iter()
            .map(|&t| PressureSample {
                time: t,
                pressure: value(t),
                weight: 1.0,
            })
            .collect(),
    )
}

/// Rate-control simulation at per-well query times (corrections applied).
pub fn simulate_pressure(
    model: &DeconvolutionModel,
    rates: &[RateHistory],
    times: &[Vec<f64>],
) -> Result<Vec<PressureSeries>> {
    model.check_inputs(rates)?;
    if times.len() != model.len() {
        return Err(Error::DimensionMismatch("one query-time list per well required".into()));
    }
    let corrected = model.corrected_rates(rates);
    (0..model.len())
        .map(|n| {
            check_times(&times[n])?;
            let p0 = model.p0[n].unwrap_or(0.0);
            series(n, model, &times[n], |t| p0 - drawdown(model, &corrected, n, t))
        })
        .collect()
}

/// [`simulate_pressure`] with one shared list of query times.
pub fn simulate_pressure_at(
    model: &DeconvolutionModel,
    rates: &[RateHistory],
    times: &[f64],
) -> Result<Vec<PressureSeries>> {
    simulate_pressure(model, rates, &vec![times.to_vec(); model.len()])
}

/// Same pressures through `∫ ṗ_u(t − τ) q(τ) dτ`: the jump contributes `jump·q(t⁻)`,
/// the smooth part integrates per rate step.
pub fn simulate_pressure_derivative_form(
    model: &DeconvolutionModel,
    rates: &[RateHistory],
    times: &[Vec<f64>],
) -> Result<Vec<PressureSeries>> {
    model.check_inputs(rates)?;
    if times.len() != model.len() {
        return Err(Error::DimensionMismatch("one query-time list per well required".into()));
    }
    let corrected = model.corrected_rates(rates);
    (0..model.len())
        .map(|n| {
            check_times(&times[n])?;
            let p0 = model.p0[n].unwrap_or(0.0);
            series(n, model, &times[n], |t| {
                let mut dd = 0.0;
                for (m, r) in corrected.iter().enumerate() {
                    let Some(u) = model.utrs.get(n, m) else {
                        continue;
                    };
                    dd += u.jump() * r.rate_before(t);
                    let steps = r.steps();
                    for (k, s) in steps.iter().enumerate() {
                        if s.time >= t {
                            break;
                        }
                        let end = steps.get(k + 1).map_or(t, |next| next.time.min(t));
                        dd += s.rate * u.smooth_integral(t - end, t - s.time);
                    }
                }
                p0 - dd
            })
        })
        .collect()
}

/// Pressure-control simulation.
///
/// `targets[n]` is `Some` for controlled wells. `rates[n]` holds the full history of
/// uncontrolled wells and the history before `start` of controlled wells. Returns
/// the rate history of every well, with controlled wells extended step by step
/// over the union grid of target times after `start`.
pub fn simulate_rates(
    model: &DeconvolutionModel,
    targets: &[Option<PressureSeries>],
    rates: &[RateHistory],
    start: f64,
) -> Result<Vec<RateHistory>> {
    model.check_inputs(rates)?;
    let nw = model.len();
    if targets.len() != nw {
        return Err(Error::DimensionMismatch("one target slot per well required".into()));
    }
    if start < 0.0 {
        return Err(Error::NegativeTime(start));
    }
    let controlled: Vec<usize> = (0..nw).filter(|&n| targets[n].is_some()).collect();
    for &c in &controlled {
        if model.p0[c].is_none() {
            return Err(Error::InvalidParameter(format!(
                "controlled well `{}` has no initial pressure",
                model.wells[c]
            )));
        }
    }
    let mut grid: Vec<f64> = controlled
        .iter()
        .flat_map(|&c| targets[c].as_ref().unwrap().times())
        .filter(|&t| t > start)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    // Corrections of controlled wells apply to their history only; new steps are physical.
    let mut out: Vec<RateHistory> = model.corrected_rates(rates);
    let mut steps: Vec<Vec<RateStep>> = out.iter().map(|r| r.steps().to_vec()).collect();
    for &c in &controlled {
        steps[c].retain(|s| s.time < start);
        out[c] = RateHistory::new(model.wells[c].as_str(), steps[c].clone())?;
    }

    let nc = controlled.len();
    let mut prev = start;
    for &g in &grid {
        let dt = g - prev;
        let mut a = DMatrix::<f64>::zeros(nc, nc);
        let mut b = DVector::<f64>::zeros(nc);
        for (i, &n) in controlled.iter().enumerate() {
            let target = targets[n].as_ref().unwrap().interpolate(g).expect("non-empty target");
            let mut rhs = model.p0[n].unwrap() - target - drawdown(model, &out, n, g);
            for (j, &c) in controlled.iter().enumerate() {
                let u = model.utrs.eval(n, c, dt);
                a[(i, j)] = u;
                rhs += out[c].rate_before(g) * u;
            }
            b[i] = rhs;
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0) || smax / smin > MAX_CONDITION {
            return Err(Error::PressureControlInfeasible {
                time: g,
                reason: format!("step system condition {:.3e}", smax / smin),
            });
        }
        let x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::PressureControlInfeasible {
                time: g,
                reason: e.to_string(),
            })?;
        for (j, &c) in controlled.iter().enumerate() {
            steps[c].push(RateStep {
                time: prev,
                rate: x[j],
            });
            out[c] = RateHistory::new(model.wells[c].as_str(), steps[c].clone())?;
        }
        prev = g;
    }
    Ok(out)
}
