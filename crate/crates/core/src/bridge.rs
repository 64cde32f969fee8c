//! CRM as a deconvolution model: linear responses with a diagonal jump reproduce
//! the integrated CRM pressure equation exactly.

use serde::{Deserialize, Serialize};

use crate::convolution::{simulate_pressure, DeconvolutionModel};
use crate::crm::{crm_simulate_pressure, CrmModel};
use crate::error::{Error, Result};
use crate::utr::{crm_utr, CrmSource, Utr, UtrMatrix};
use crate::well_data::{RateHistory, Scenario, WellId};

/// Deviations are relative to `max(|p|, 1 bar)`.
const PRESSURE_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellDeviation {
    pub well: String,
    pub times: Vec<f64>,
    pub deviation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_relative_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub per_well: Vec<WellDeviation>,
}

/// Deconvolution model over `producers ++ injectors`.
pub fn crm_to_mdcv(m: &CrmModel, p0: &[f64]) -> Result<DeconvolutionModel> {
    let wells: Vec<WellId> = m.producers.iter().map(|p| p.id.clone()).chain(m.injectors.iter().cloned()).collect();
    crm_to_mdcv_ordered(m, p0, &wells)
}

/// Same as [`crm_to_mdcv`] with an explicit well order; wells the CRM does not name stay unmodeled.
pub fn crm_to_mdcv_ordered(m: &CrmModel, p0: &[f64], wells: &[WellId]) -> Result<DeconvolutionModel> {
    if p0.len() != m.producers.len() {
        return Err(Error::DimensionMismatch("one initial pressure per producer".into()));
    }
    let pos = |id: &WellId| {
        wells
            .iter()
            .position(|w| w == id)
            .ok_or_else(|| Error::InvalidParameter(format!("well `{id}` missing from the target order")))
    };
    let nw = wells.len();
    let mut utrs = UtrMatrix::inactive(nw);
    let mut p0s = vec![None; nw];
    for (n, p) in m.producers.iter().enumerate() {
        let row = pos(&p.id)?;
        p0s[row] = Some(p0[n]);
        utrs.set(row, row, Some(crm_utr(p.tau_days, p.gamma_m3_per_bar, CrmSource::SelfProducer)?));
        for (k, inj) in m.injectors.iter().enumerate() {
            let u = crm_utr(p.tau_days, p.gamma_m3_per_bar, CrmSource::Injector(m.connectivity[n][k]))?;
            utrs.set(row, pos(inj)?, Some(u));
        }
        if let Some(g) = &m.interference {
            for (k, other) in m.producers.iter().enumerate() {
                if k != n && g[n][k] != 0.0 {
                    utrs.set(row, pos(&other.id)?, Some(Utr::linear(0.0, g[n][k] / p.gamma_m3_per_bar)?));
                }
            }
        }
    }
    DeconvolutionModel::new(wells.to_vec(), p0s, utrs)
}

fn histories(m: &CrmModel, s: &Scenario) -> Result<(Vec<usize>, Vec<RateHistory>, Vec<RateHistory>)> {
    let find = |id: &WellId| {
        s.index_of(id.as_str())
            .ok_or_else(|| Error::InvalidScenario(format!("scenario lacks CRM well `{id}`")))
    };
    let prod_idx = m.producers.iter().map(|p| find(&p.id)).collect::<Result<Vec<_>>>()?;
    let inj = m
        .injectors
        .iter()
        .map(|i| find(i).map(|k| s.rates[k].clone()))
        .collect::<Result<Vec<_>>>()?;
    let prod = prod_idx.iter().map(|&k| s.rates[k].clone()).collect();
    Ok((prod_idx, prod, inj))
}

/// Compares a deconvolution model against the CRM pressure equation at producer sample times.
pub fn equivalence_report(model: &DeconvolutionModel, m: &CrmModel, s: &Scenario, tol: f64) -> Result<EquivalenceReport> {
    let (prod_idx, prod, inj) = histories(m, s)?;
    let p_start: Vec<f64> = prod_idx
        .iter()
        .map(|&k| model.p0.get(k).copied().flatten().unwrap_or(0.0))
        .collect();
    let times: Vec<Vec<f64>> = s.pressures.iter().map(|p| p.times()).collect();
    let conv = simulate_pressure(model, &s.rates, &times)?;
    let mut per_well = Vec::new();
    let mut worst: f64 = 0.0;
    for (n, &k) in prod_idx.iter().enumerate() {
        let crm = crm_simulate_pressure(m, &prod, &inj, &p_start, &times[k])?;
        let dev: Vec<f64> = conv[k]
            .samples()
            .iter()
            .zip(crm[n].samples())
            .map(|(a, b)| (a.pressure - b.pressure).abs() / b.pressure.abs().max(PRESSURE_FLOOR))
            .collect();
        worst = dev.iter().copied().fold(worst, f64::max);
        per_well.push(WellDeviation {
            well: s.wells[k].id.to_string(),
            times: times[k].clone(),
            deviation: dev,
        });
    }
    Ok(EquivalenceReport {
        max_relative_deviation: worst,
        tolerance: tol,
        pass: worst <= tol,
        per_well,
    })
}

/// Builds the bridged model in scenario order (p0 from the scenario, 0 when absent) and compares.
pub fn equivalence_check(m: &CrmModel, s: &Scenario, tol: f64) -> Result<EquivalenceReport> {
    let (prod_idx, _, _) = histories(m, s)?;
    let p0: Vec<f64> = prod_idx.iter().map(|&k| s.p0[k].unwrap_or(0.0)).collect();
    let model = crm_to_mdcv_ordered(m, &p0, &s.ids())?;
    equivalence_report(&model, m, s, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::CrmProducer;
    use crate::well_data::{PressureSeries, Well, WellRole};

    fn id(s: &str) -> WellId {
        WellId::new(s).unwrap()
    }

    fn model() -> CrmModel {
        CrmModel::new(
            vec![
                CrmProducer { id: id("P1"), tau_days: 5.0, gamma_m3_per_bar: 25.0 },
                CrmProducer { id: id("P2"), tau_days: 3.0, gamma_m3_per_bar: 50.0 },
            ],
            vec![id("I1")],
            vec![vec![0.5], vec![0.6]],
        )
        .unwrap()
    }

    fn scenario(scale: f64) -> Scenario {
        let daily: Vec<(f64, f64)> = (1..=30).map(|k| (k as f64, 0.0)).collect();
        Scenario::new(
            vec![
                Well { id: id("P1"), role: WellRole::Producer },
                Well { id: id("I1"), role: WellRole::Injector },
                Well { id: id("P2"), role: WellRole::Producer },
            ],
            vec![
                RateHistory::from_pairs(&[(0.0, 100.0 * scale), (10.0, 60.0 * scale)]),
                RateHistory::from_pairs(&[(0.0, -80.0 * scale), (12.0, -120.0 * scale)]),
                RateHistory::from_pairs(&[(3.0, 40.0 * scale), (20.0, 90.0 * scale)]),
            ],
            vec![
                PressureSeries::from_pairs(&daily),
                PressureSeries::empty(),
                PressureSeries::from_pairs(&daily),
            ],
            vec![Some(200.0), None, Some(210.0)],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn responses_follow_crm_form() {
        let d = crm_to_mdcv(&model(), &[200.0, 210.0]).unwrap();
        let u = d.utrs.get(0, 0).unwrap();
        assert!((u.jump() - 0.2).abs() < 1e-15);
        assert!((u.derivative(7.0) - 0.04).abs() < 1e-15);
        assert!(!d.utrs.is_active(0, 1));
        let c = d.utrs.get(1, 2).unwrap();
        assert!((c.derivative(3.0) - 0.012).abs() < 1e-15);
        assert_eq!(c.jump(), 0.0);
    }

    #[test]
    fn paths_agree() {
        let r = equivalence_check(&model(), &scenario(1.0), 1e-9).unwrap();
        assert!(r.pass, "{}", r.max_relative_deviation);
    }

    #[test]
    fn zero_rates_give_zero_deviation() {
        let r = equivalence_check(&model(), &scenario(0.0), 1e-9).unwrap();
        assert_eq!(r.max_relative_deviation, 0.0);
    }

    #[test]
    fn perturbed_slope_fails() {
        let m = model();
        let s = scenario(1.0);
        let mut d = crm_to_mdcv_ordered(&m, &[200.0, 210.0], &s.ids()).unwrap();
        d.utrs.set(0, 0, Some(Utr::linear(0.2, 0.04 * 1.01).unwrap()));
        let r = equivalence_report(&d, &m, &s, 1e-9).unwrap();
        assert!(!r.pass);
    }
}
