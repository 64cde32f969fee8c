//! Multiwell deconvolution: fit initial pressures, unit-rate responses and rate
//! corrections to history with a DE global stage and a damped Gauss–Newton refinement.

mod de;
mod lm;
mod problem;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use de::DeSettings;
pub use problem::MdcvProblem;

use crate::convolution::{simulate_pressure, simulate_rates, DeconvolutionModel, DEFAULT_CORRECTION_BAND};
use crate::error::{Error, Result};
use crate::report::{FitReport, FitStatus, WellResiduals};
use crate::well_data::{variation_events, PressureSeries, RateHistory, Scenario};

/// Relative eigenvalue cutoff for weak curvature directions.
const WEAK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaGrid {
    pub curvature: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            curvature: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            cumulative: vec![1e-6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdcvOptions {
    /// Trust weight on the rate term.
    pub rate_weight: f64,
    pub lambda_curvature: f64,
    pub lambda_cumulative: f64,
    pub correct_rates: bool,
    pub correction_band: (f64, f64),
    /// `(row, column)` pairs forced to zero response.
    pub inactive_pairs: Vec<(String, String)>,
    pub nodes_per_decade: f64,
    pub de: DeSettings,
    pub gn_iterations: usize,
    pub gn_tolerance: f64,
    pub seed: u64,
    /// Fit even when every well fails the variation check.
    pub force: bool,
    pub variation_threshold: f64,
    pub lambda_grid: LambdaGrid,
}

impl Default for MdcvOptions {
    fn default() -> Self {
        MdcvOptions {
            rate_weight: 1.0,
            lambda_curvature: 1e-2,
            lambda_cumulative: 1e-6,
            correct_rates: false,
            correction_band: DEFAULT_CORRECTION_BAND,
            inactive_pairs: Vec::new(),
            nodes_per_decade: 6.0,
            de: DeSettings::default(),
            gn_iterations: 3000,
            gn_tolerance: 1e-8,
            seed: 0,
            force: false,
            variation_threshold: 0.05,
            lambda_grid: LambdaGrid::default(),
        }
    }
}

impl MdcvOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidOptions(m.into()));
        if !(self.rate_weight >= 0.0) || !(self.lambda_curvature >= 0.0) || !(self.lambda_cumulative >= 0.0) {
            return bad("weights and lambdas must be >= 0");
        }
        let (lo, hi) = self.correction_band;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return bad("correction band must satisfy 0 < lo <= 1 <= hi");
        }
        if !(self.nodes_per_decade > 0.0) {
            return bad("nodes_per_decade must be > 0");
        }
        if !(self.gn_tolerance > 0.0) || !(self.de.tolerance > 0.0) {
            return bad("tolerances must be > 0");
        }
        if self.de.population < 4 {
            return bad("DE population must be at least 4");
        }
        if !(self.de.mutation > 0.0) || !(0.0..=1.0).contains(&self.de.crossover) {
            return bad("DE mutation must be > 0 and crossover in [0, 1]");
        }
        if self.de.generations == 0 && self.gn_iterations == 0 {
            return Err(Error::ZeroBudget);
        }
        Ok(())
    }
}

/// Objective of an arbitrary model on a scenario, computed through the forward simulator.
pub fn objective_value(model: &DeconvolutionModel, data: &Scenario, opt: &MdcvOptions) -> Result<f64> {
    if model.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}-well model for a {}-well scenario",
            model.len(),
            data.len()
        )));
    }
    let times: Vec<Vec<f64>> = data
        .pressures
        .iter()
        .map(|p| p.samples().iter().filter(|s| s.weight > 0.0).map(|s| s.time).collect())
        .collect();
    let sim = simulate_pressure(model, &data.rates, &times)?;
    let mut total = 0.0;
    for (n, series) in data.pressures.iter().enumerate() {
        if model.p0[n].is_none() {
            continue;
        }
        let obs = series.samples().iter().filter(|s| s.weight > 0.0);
        for (o, p) in obs.zip(sim[n].samples()) {
            total += o.weight * (p.pressure - o.pressure).powi(2);
        }
    }
    let corrected = model.corrected_rates(&data.rates);
    for (rec, cor) in data.rates.iter().zip(&corrected) {
        for (a, b) in rec.steps().iter().zip(cor.steps()) {
            total += opt.rate_weight * (b.rate - a.rate).powi(2);
        }
    }
    for (n, m) in model.utrs.active_pairs() {
        let z = model.utrs.get(n, m).expect("active").z();
        for w in z.windows(3) {
            total += opt.lambda_curvature * (w[0] - 2.0 * w[1] + w[2]).powi(2);
        }
    }
    for c in &data.cumulative_reference {
        let mut vol = 0.0;
        for w in &c.wells {
            let i = data
                .index_of(w.as_str())
                .ok_or_else(|| Error::InvalidScenario(format!("cumulative record names unknown well `{w}`")))?;
            vol += corrected[i].abs_volume(c.start_day, c.end_day);
        }
        total += opt.lambda_cumulative * (vol - c.volume_m3).powi(2);
    }
    Ok(total)
}

fn all_no_variation(s: &Scenario, threshold: f64) -> bool {
    s.rates.iter().all(|r| variation_events(r, threshold).is_empty())
}

fn push_best(trace: &mut Vec<f64>, v: f64) {
    let best = trace.last().map_or(v, |l| l.min(v));
    trace.push(best);
}

/// Fits a deconvolution model. No model is returned when no well's rate varies.
pub fn deconvolve(training: &Scenario, opt: &MdcvOptions) -> Result<(Option<DeconvolutionModel>, FitReport)> {
    let started = Instant::now();
    opt.validate()?;
    training.validate()?;
    if training.pressures.iter().all(|p| p.samples().iter().all(|s| s.weight <= 0.0)) {
        return Err(Error::EmptyPressureData);
    }
    if !opt.force && all_no_variation(training, opt.variation_threshold) {
        let mut report = FitReport::empty(FitStatus::NoVariation);
        report.notes.push("no rate variation in any well".into());
        report.wall_time = started.elapsed();
        return Ok((None, report));
    }
    let problem = MdcvProblem::new(training, opt)?;
    let mut trace = Vec::new();
    let mut evaluations = 0;

    let coarse = if opt.de.generations > 0 {
        let r = de::minimize(
            problem.coarse_bounds(),
            &opt.de,
            opt.seed,
            Some(problem.coarse_start()),
            |c| problem.objective(problem.expand_coarse(c).as_slice()),
        );
        for v in &r.trace {
            push_best(&mut trace, *v);
        }
        evaluations += r.evaluations;
        r.x
    } else {
        problem.coarse_start().to_vec()
    };
    let x0 = problem.expand_coarse(&coarse);
    if trace.is_empty() {
        push_best(&mut trace, problem.objective(x0.as_slice()));
    }
    // A fit whose misfit is this far below the data's own scale counts as exact.
    let floor = opt.gn_tolerance.powi(2) * problem.weighted_data_norm();
    let lm = lm::minimize(
        x0,
        opt.gn_iterations,
        opt.gn_tolerance,
        floor,
        |x| problem.jacobian(x.as_slice()),
        |x| problem.project(x),
    );
    evaluations += lm.iterations + 1;
    for v in &lm.trace {
        push_best(&mut trace, *v);
    }
    let x = lm.x.as_slice();
    let model = problem.decode(x);

    let mut report = FitReport::empty(if lm.converged || opt.gn_iterations == 0 {
        FitStatus::Converged
    } else {
        FitStatus::BudgetExhausted
    });
    report.objective_trace = trace;
    report.final_objective = lm.value;
    report.evaluations = evaluations;
    let mut pred = Vec::new();
    let mut act = Vec::new();
    for (well, times, res, p) in problem.pressure_residuals(x) {
        act.extend(p.iter().zip(&res).map(|(p, e)| p - e));
        pred.extend(p);
        report.residuals.push(WellResiduals {
            well: training.wells[well].id.to_string(),
            times,
            residuals: res,
        });
    }
    report.set_metrics(&pred, &act);
    report.per_well_objective = problem
        .per_well_misfit(x)
        .into_iter()
        .map(|(w, v)| (training.wells[w].id.to_string(), v))
        .collect::<BTreeMap<_, _>>();
    report.initial_pressures = model
        .wells
        .iter()
        .zip(&model.p0)
        .filter_map(|(w, p)| p.map(|p| (w.to_string(), p)))
        .collect();
    let h = lm.jacobian.transpose() * &lm.jacobian;
    let eig = h.symmetric_eigenvalues();
    let emax = eig.iter().copied().fold(0.0, f64::max);
    let mut weak: Vec<f64> = eig.iter().copied().filter(|e| *e <= WEAK_CUTOFF * emax).collect();
    weak.sort_by(f64::total_cmp);
    report.weak_directions = weak;
    if problem.n_pressure_residuals() < problem.n_params() {
        report.status = FitStatus::IllPosed;
        report.notes.push(format!(
            "{} pressure samples for {} parameters",
            problem.n_pressure_residuals(),
            problem.n_params()
        ));
    }
    if !report.weak_directions.is_empty() {
        report.notes.push(format!(
            "{} weak curvature directions (eigenvalue <= {WEAK_CUTOFF:e} of the largest)",
            report.weak_directions.len()
        ));
    }
    report.wall_time = started.elapsed();
    Ok((Some(model), report))
}

/// Recorded rates scaled by the model's factors, clamped to `band`.
pub fn correct_rates(model: &DeconvolutionModel, s: &Scenario, band: (f64, f64)) -> Result<Vec<RateHistory>> {
    if model.len() != s.len() {
        return Err(Error::DimensionMismatch("model and scenario well counts differ".into()));
    }
    Ok(s
        .rates
        .iter()
        .zip(&model.rate_corrections)
        .map(|(r, c)| {
            let clamped: Vec<f64> = c.iter().map(|f| f.clamp(band.0, band.1)).collect();
            r.corrected(&clamped)
        })
        .collect())
}

/// Future operating controls for [`predict`].
#[derive(Debug, Clone, PartialEq)]
pub enum Controls {
    /// Full rate histories (past and future) and query times per well.
    Rate { rates: Vec<RateHistory>, times: Vec<Vec<f64>> },
    /// Pressure targets for controlled wells from `start`; `rates` carries every
    /// uncontrolled history and the controlled wells' history before `start`.
    Pressure {
        targets: Vec<Option<PressureSeries>>,
        rates: Vec<RateHistory>,
        start: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Pressures(Vec<PressureSeries>),
    Rates(Vec<RateHistory>),
}

pub fn predict(model: &DeconvolutionModel, controls: &Controls) -> Result<Prediction> {
    match controls {
        Controls::Rate { rates, times } => simulate_pressure(model, rates, times).map(Prediction::Pressures),
        Controls::Pressure { targets, rates, start } => {
            simulate_rates(model, targets, rates, *start).map(Prediction::Rates)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utr::{Utr, UtrMatrix};
    use crate::well_data::{Well, WellId, WellRole};

    fn id(s: &str) -> WellId {
        WellId::new(s).unwrap()
    }

    fn one_well(pressures: &[(f64, f64)], rates: &[(f64, f64)]) -> Scenario {
        Scenario::new(
            vec![Well { id: id("P1"), role: WellRole::Producer }],
            vec![RateHistory::from_pairs(rates)],
            vec![PressureSeries::from_pairs(pressures)],
            vec![Some(200.0)],
            vec![],
        )
        .unwrap()
    }

    fn crm_model(jump: f64, slope: f64) -> DeconvolutionModel {
        let mut u = UtrMatrix::inactive(1);
        u.set(0, 0, Some(Utr::linear(jump, slope).unwrap()));
        DeconvolutionModel::new(vec![id("P1")], vec![Some(200.0)], u).unwrap()
    }

    #[test]
    fn exact_model_has_zero_objective() {
        let s = one_well(&[(10.0, 140.0)], &[(0.0, 100.0)]);
        let opt = MdcvOptions { lambda_curvature: 0.0, ..Default::default() };
        assert_eq!(objective_value(&crm_model(0.2, 0.04), &s, &opt).unwrap(), 0.0);
    }

    #[test]
    fn single_residual_squares() {
        let s = one_well(&[(10.0, 142.0)], &[(0.0, 100.0)]);
        let v = objective_value(&crm_model(0.2, 0.04), &s, &MdcvOptions::default()).unwrap();
        assert!((v - 4.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn curvature_penalty_term() {
        let s = one_well(&[(10.0, 140.0)], &[(0.0, 100.0)]);
        let mut m = crm_model(0.2, 0.04);
        let z = 0.04f64.ln();
        // Second difference 1 at the middle node; the smooth part beyond t = 10 is irrelevant.
        let u = Utr::new(0.2, vec![(10.0, z), (20.0, z + 1.0), (30.0, z + 3.0)]).unwrap();
        m.utrs.set(0, 0, Some(u));
        let opt = MdcvOptions { lambda_curvature: 0.1, ..Default::default() };
        let v = objective_value(&m, &s, &opt).unwrap();
        assert!((v - 0.1).abs() < 1e-9, "{v}");
    }

    #[test]
    fn identity_corrections_leave_rates() {
        let s = one_well(&[(10.0, 140.0)], &[(0.0, 100.0), (5.0, 80.0)]);
        let m = crm_model(0.2, 0.04);
        assert_eq!(correct_rates(&m, &s, DEFAULT_CORRECTION_BAND).unwrap()[0], s.rates[0]);
        let mut m2 = m.clone();
        m2.rate_corrections[0] = vec![1.2, 1.0];
        assert_eq!(correct_rates(&m2, &s, DEFAULT_CORRECTION_BAND).unwrap()[0].steps()[0].rate, 120.0);
    }

    #[test]
    fn problem_objective_matches_model_objective() {
        let rates = [(0.0, 100.0), (3.0, 60.0), (7.0, 120.0), (12.0, 0.0)];
        let p: Vec<(f64, f64)> = (1..=20).map(|k| (k as f64, 180.0 + (k as f64).sin())).collect();
        let s = one_well(&p, &rates);
        let opt = MdcvOptions {
            correct_rates: true,
            lambda_curvature: 0.3,
            ..Default::default()
        };
        let prob = MdcvProblem::new(&s, &opt).unwrap();
        let mut x = prob.expand_coarse(prob.coarse_start());
        for (i, v) in x.iter_mut().enumerate() {
            *v += 0.01 * i as f64;
        }
        prob.project(&mut x);
        let direct = objective_value(&prob.decode(x.as_slice()), &s, &opt).unwrap();
        let via = prob.objective(x.as_slice());
        assert!((direct - via).abs() <= 1e-9 * direct.abs(), "{direct} {via}");
    }

    #[test]
    fn no_variation_emits_no_model() {
        let s = one_well(&[(1.0, 190.0), (2.0, 189.0)], &[(0.0, 100.0)]);
        let (m, r) = deconvolve(&s, &MdcvOptions::default()).unwrap();
        assert!(m.is_none());
        assert_eq!(r.status, FitStatus::NoVariation);
    }

    #[test]
    fn zero_budget_is_an_error() {
        let opt = MdcvOptions {
            gn_iterations: 0,
            de: DeSettings { generations: 0, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(opt.validate(), Err(Error::ZeroBudget)));
    }
}
