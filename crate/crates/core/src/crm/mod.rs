//! Capacitance resistance model.
//!
//! Each producer obeys `τ q' + q = Σ_m f_m q↓_m − γ dp_wf/dt`. Injection is
//! step-constant and bottomhole pressure piecewise linear between samples,
//! so both the rate and its cumulative integrate exactly per interval.

mod fit;
mod qp;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::well_data::{PressureSample, PressureSeries, RateHistory, RateStep, WellId};

pub use fit::{crm_fit, CrmFitMode, CrmFitOptions};
pub use qp::{solve_lsq, LsqProblem};

const ALLOCATION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmProducer {
    pub id: WellId,
    pub tau_days: f64,
    pub gamma_m3_per_bar: f64,
}

impl CrmProducer {
    /// Productivity index `J = γ/τ`; infinite when `τ = 0`.
    pub fn productivity_index(&self) -> f64 {
        self.gamma_m3_per_bar / self.tau_days
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CrmModelRaw {
    producers: Vec<CrmProducer>,
    injectors: Vec<WellId>,
    connectivity: IndexMap<String, IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interference: Option<IndexMap<String, IndexMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CrmModelRaw", into = "CrmModelRaw")]
pub struct CrmModel {
    pub producers: Vec<CrmProducer>,
    pub injectors: Vec<WellId>,
    /// `f[n][m]`: fraction of injector `m` supporting producer `n`.
    pub connectivity: Vec<Vec<f64>>,
    /// Optional producer–producer pairing `g[n][k]`, applied like injection with opposite sign.
    pub interference: Option<Vec<Vec<f64>>>,
}

fn table_to_map(
    rows: &[WellId],
    cols: &[WellId],
    t: &[Vec<f64>],
) -> IndexMap<String, IndexMap<String, f64>> {
    rows.iter()
        .zip(t)
        .map(|(r, row)| {
            (
                r.to_string(),
                cols.iter().zip(row).map(|(c, v)| (c.to_string(), *v)).collect(),
            )
        })
        .collect()
}

fn map_to_table(
    rows: &[WellId],
    cols: &[WellId],
    map: &IndexMap<String, IndexMap<String, f64>>,
) -> Result<Vec<Vec<f64>>> {
    for (r, row) in map {
        if !rows.iter().any(|x| x.as_str() == r) {
            return Err(Error::InvalidConfig(format!("connectivity names unknown producer `{r}`")));
        }
        for c in row.keys() {
            if !cols.iter().any(|x| x.as_str() == c) {
                return Err(Error::InvalidConfig(format!("connectivity names unknown well `{c}`")));
            }
        }
    }
    Ok(rows
        .iter()
        .map(|r| {
            cols.iter()
                .map(|c| {
                    map.get(r.as_str())
                        .and_then(|row| row.get(c.as_str()))
                        .copied()
                        .unwrap_or(0.0)
                })
                .collect()
        })
        .collect())
}

impl TryFrom<CrmModelRaw> for CrmModel {
    type Error = Error;

    fn try_from(raw: CrmModelRaw) -> Result<Self> {
        let ids: Vec<WellId> = raw.producers.iter().map(|p| p.id.clone()).collect();
        let connectivity = map_to_table(&ids, &raw.injectors, &raw.connectivity)?;
        let interference = raw
            .interference
            .as_ref()
            .map(|g| map_to_table(&ids, &ids, g))
            .transpose()?;
        let m = CrmModel {
            producers: raw.producers,
            injectors: raw.injectors,
            connectivity,
            interference,
        };
        m.check_shape()?;
        Ok(m)
    }
}

impl From<CrmModel> for CrmModelRaw {
    fn from(m: CrmModel) -> Self {
        let ids: Vec<WellId> = m.producers.iter().map(|p| p.id.clone()).collect();
        CrmModelRaw {
            connectivity: table_to_map(&ids, &m.injectors, &m.connectivity),
            interference: m.interference.as_ref().map(|g| table_to_map(&ids, &ids, g)),
            producers: m.producers,
            injectors: m.injectors,
        }
    }
}

/// Result of checking the parameter constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub ok: bool,
    pub violations: Vec<String>,
}

impl CrmModel {
    pub fn new(
        producers: Vec<CrmProducer>,
        injectors: Vec<WellId>,
        connectivity: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = CrmModel {
            producers,
            injectors,
            connectivity,
            interference: None,
        };
        m.check_shape()?;
        Ok(m)
    }

    fn check_shape(&self) -> Result<()> {
        let np = self.producers.len();
        let ni = self.injectors.len();
        if self.connectivity.len() != np || self.connectivity.iter().any(|r| r.len() != ni) {
            return Err(Error::DimensionMismatch(format!(
                "connectivity must be {np}x{ni}"
            )));
        }
        if let Some(g) = &self.interference {
            if g.len() != np || g.iter().any(|r| r.len() != np) {
                return Err(Error::DimensionMismatch(format!("interference must be {np}x{np}")));
            }
        }
        let values = self
            .producers
            .iter()
            .flat_map(|p| [p.tau_days, p.gamma_m3_per_bar])
            .chain(self.connectivity.iter().flatten().copied());
        for v in values {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite model value {v}")));
            }
        }
        Ok(())
    }

    pub fn producer_ids(&self) -> Vec<WellId> {
        self.producers.iter().map(|p| p.id.clone()).collect()
    }

    /// Checks non-negativity, `0 ≤ f ≤ 1`, injector column sums `≤ 1` (`= 1` when strict)
    /// and producer row sums `≤ 1`.
    pub fn audit(&self, strict: bool) -> ConstraintAudit {
        let mut v = Vec::new();
        for p in &self.producers {
            if !(p.tau_days >= 0.0) {
                v.push(format!("{}: tau {} < 0", p.id, p.tau_days));
            }
            if !(p.gamma_m3_per_bar >= 0.0) {
                v.push(format!("{}: gamma {} < 0", p.id, p.gamma_m3_per_bar));
            }
        }
        for (n, row) in self.connectivity.iter().enumerate() {
            for (m, f) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(f) {
                    v.push(format!(
                        "f[{}][{}] = {f} outside [0, 1]",
                        self.producers[n].id, self.injectors[m]
                    ));
                }
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + ALLOCATION_EPS {
                v.push(format!("producer {} row sum {s} > 1", self.producers[n].id));
            }
        }
        for (m, id) in self.injectors.iter().enumerate() {
            let s: f64 = self.connectivity.iter().map(|r| r[m]).sum();
            if s > 1.0 + ALLOCATION_EPS {
                v.push(format!("injector {id} column sum {s} > 1"));
            }
            if strict && (s - 1.0).abs() > ALLOCATION_EPS {
                v.push(format!("injector {id} column sum {s} != 1"));
            }
        }
        if let Some(g) = &self.interference {
            for row in g {
                if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    v.push("interference value outside [0, 1]".into());
                }
            }
        }
        ConstraintAudit {
            ok: v.is_empty(),
            violations: v,
        }
    }

    fn check_histories(&self, producers: Option<&[RateHistory]>, injections: &[RateHistory]) -> Result<()> {
        if injections.len() != self.injectors.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} injection histories for {} injectors",
                injections.len(),
                self.injectors.len()
            )));
        }
        if let Some(p) = producers {
            if p.len() != self.producers.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} production histories for {} producers",
                    p.len(),
                    self.producers.len()
                )));
            }
        }
        Ok(())
    }
}

/// `q↓` from a signed (negative) injection history.
fn injection_magnitude(r: &RateHistory) -> RateHistory {
    r.scaled(-1.0)
}

/// Coefficients of one exact interval step of `τ y' + y = F` with `F` linear:
/// `y_b = E·y_a + (1 − E)·F_a + c·(F_b − F_a)`.
pub(crate) fn step_coefficients(dt: f64, tau: f64) -> (f64, f64, f64) {
    if tau == 0.0 || dt / tau > 700.0 {
        return (0.0, 1.0, 1.0);
    }
    let x = dt / tau;
    let e = (-x).exp();
    let one_minus_e = -(-x).exp_m1();
    // c = 1 − (1 − E)/x
    let c = if x < 1e-4 {
        x / 2.0 - x * x / 6.0 + x * x * x / 24.0
    } else {
        1.0 - one_minus_e / x
    };
    (e, one_minus_e, c)
}

fn merged_grid(mut times: Vec<f64>) -> Vec<f64> {
    times.push(0.0);
    times.retain(|t| *t >= 0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Exact exponential stepping of the rate equation.
///
/// Output steps sit on the union of `times`, BHP sample times and injection step
/// times; each step carries the point value `q(t_j)`.
pub fn crm_simulate_rates(
    m: &CrmModel,
    injections: &[RateHistory],
    bhp: &[PressureSeries],
    q0: &[f64],
    times: &[f64],
) -> Result<Vec<RateHistory>> {
    m.check_histories(None, injections)?;
    if m.interference.is_some() {
        return Err(Error::InvalidOptions(
            "rate simulation with producer interference is not supported".into(),
        ));
    }
    let np = m.producers.len();
    if bhp.len() != np || q0.len() != np {
        return Err(Error::DimensionMismatch("one BHP series and q0 per producer".into()));
    }
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::NegativeTime(t));
    }
    let inj: Vec<RateHistory> = injections.iter().map(injection_magnitude).collect();
    let mut out = Vec::with_capacity(np);
    for (n, p) in m.producers.iter().enumerate() {
        let mut grid_times: Vec<f64> = times.to_vec();
        grid_times.extend(bhp[n].times());
        grid_times.extend(inj.iter().flat_map(|r| r.times()));
        let grid = merged_grid(grid_times);
        let tau = p.tau_days;
        let gamma = p.gamma_m3_per_bar;
        let support = |t: f64| -> f64 {
            inj.iter()
                .zip(&m.connectivity[n])
                .map(|(r, f)| f * r.rate_at(t))
                .sum()
        };
        let pressure = |t: f64| bhp[n].interpolate(t).unwrap_or(0.0);
        let mut q = q0[n];
        let mut steps = vec![RateStep { time: grid[0], rate: q }];
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            let dt = b - a;
            let forcing = support(a) - gamma * (pressure(b) - pressure(a)) / dt;
            let (e, one_minus_e, _) = step_coefficients(dt, tau);
            q = e * q + one_minus_e * forcing;
            steps.push(RateStep { time: b, rate: q });
        }
        out.push(RateHistory::new(p.id.as_str(), steps)?);
    }
    Ok(out)
}

/// Cumulative production `Q(t)` implied by the rate equation at the requested times.
pub fn crm_cumulative_production(
    m: &CrmModel,
    injections: &[RateHistory],
    bhp: &[PressureSeries],
    q0: &[f64],
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    m.check_histories(None, injections)?;
    let np = m.producers.len();
    if bhp.len() != np || q0.len() != np {
        return Err(Error::DimensionMismatch("one BHP series and q0 per producer".into()));
    }
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::NegativeTime(t));
    }
    let inj: Vec<RateHistory> = injections.iter().map(injection_magnitude).collect();
    let mut out = Vec::with_capacity(np);
    for (n, p) in m.producers.iter().enumerate() {
        let mut grid_times: Vec<f64> = times.to_vec();
        grid_times.extend(bhp[n].times());
        grid_times.extend(inj.iter().flat_map(|r| r.times()));
        let grid = merged_grid(grid_times);
        let p_ref = bhp[n].interpolate(0.0).unwrap_or(0.0);
        let forcing = |t: f64| -> f64 {
            let s: f64 = inj
                .iter()
                .zip(&m.connectivity[n])
                .map(|(r, f)| f * r.cumulative(t))
                .sum();
            s + p.gamma_m3_per_bar * (p_ref - bhp[n].interpolate(t).unwrap_or(0.0))
                + p.tau_days * q0[n]
        };
        let mut cum = vec![0.0];
        let mut q = 0.0;
        let mut fa = forcing(grid[0]);
        for w in grid.windows(2) {
            let fb = forcing(w[1]);
            let (e, one_minus_e, c) = step_coefficients(w[1] - w[0], p.tau_days);
            q = e * q + one_minus_e * fa + c * (fb - fa);
            cum.push(q);
            fa = fb;
        }
        out.push(
            times
                .iter()
                .map(|t| {
                    let idx = grid.partition_point(|g| g < t);
                    cum[idx]
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Bottomhole pressure from the integrated rate equation with `q(0) = 0`.
pub fn crm_simulate_pressure(
    m: &CrmModel,
    production: &[RateHistory],
    injections: &[RateHistory],
    p_start: &[f64],
    times: &[f64],
) -> Result<Vec<PressureSeries>> {
    m.check_histories(Some(production), injections)?;
    if p_start.len() != m.producers.len() {
        return Err(Error::DimensionMismatch("one start pressure per producer".into()));
    }
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::NegativeTime(t));
    }
    let inj: Vec<RateHistory> = injections.iter().map(injection_magnitude).collect();
    m.producers
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let gamma = p.gamma_m3_per_bar;
            if !(gamma > 0.0) {
                return Err(Error::InvalidParameter(format!("{}: gamma must be > 0", p.id)));
            }
            let samples = times
                .iter()
                .map(|&t| {
                    let own = p.tau_days * production[n].rate_before(t) + production[n].cumulative(t);
                    let support: f64 = inj
                        .iter()
                        .zip(&m.connectivity[n])
                        .map(|(r, f)| f * r.cumulative(t))
                        .sum();
                    let interference: f64 = m.interference.as_ref().map_or(0.0, |g| {
                        production
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| *k != n)
                            .map(|(k, r)| g[n][k] * r.cumulative(t))
                            .sum()
                    });
                    PressureSample {
                        time: t,
                        pressure: p_start[n] - (own - support + interference) / gamma,
                        weight: 1.0,
                    }
                })
                .collect();
            PressureSeries::new(p.id.as_str(), samples)
        })
        .collect()
}

/// Formation pressure `p_wf + q/J` at each BHP sample.
pub fn formation_pressure(
    m: &CrmModel,
    bhp: &PressureSeries,
    rate: &RateHistory,
    producer: usize,
) -> Result<PressureSeries> {
    let p = m
        .producers
        .get(producer)
        .ok_or_else(|| Error::InvalidParameter(format!("no producer #{producer}")))?;
    let j = p.productivity_index();
    if !(j > 0.0) {
        return Err(Error::InvalidParameter(format!("{}: productivity index is zero", p.id)));
    }
    PressureSeries::new(
        p.id.as_str(),
        bhp.samples()
            .iter()
            .map(|s| PressureSample {
                time: s.time,
                pressure: s.pressure + rate.rate_at(s.time) / j,
                weight: s.weight,
            })
            .collect(),
    )
}
