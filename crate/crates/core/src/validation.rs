//! Hold-out validation, split rehearsal on synthetic fields and λ tuning by inner folds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convolution::{simulate_pressure, DeconvolutionModel};
use crate::crm::{crm_cumulative_production, crm_fit, crm_simulate_pressure, CrmFitMode, CrmFitOptions, CrmModel};
use crate::error::{Error, Result};
use crate::mdcv::{deconvolve, MdcvOptions};
use crate::report::{metrics, FitReport};
use crate::synthetic::{generate_scenario, SyntheticSpec};
use crate::well_data::{split_dataset, variation_events, Interval, PressureSeries, Scenario, SplitSpec};

pub const DEFAULT_THRESHOLD_R2: f64 = 0.9;

/// Mean R² values closer than this count as tied during tuning.
pub const TUNING_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Validated,
    Failed,
    NoValidationConditions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Mdcv(MdcvOptions),
    Crm(CrmFitOptions),
}

impl Engine {
    fn variation_threshold(&self) -> f64 {
        match self {
            Engine::Mdcv(o) => o.variation_threshold,
            Engine::Crm(o) => o.variation_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum TrainedModel {
    Mdcv(DeconvolutionModel),
    Crm(CrmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellValidation {
    pub well: String,
    pub n_points: usize,
    pub rmsd: Option<f64>,
    pub r2: Option<f64>,
    pub times: Vec<f64>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub split: SplitSpec,
    /// `pressure` or `rate`, the compared quantity.
    pub quantity: String,
    pub rmsd: Option<f64>,
    pub r2: Option<f64>,
    pub n_points: usize,
    pub threshold_r2: f64,
    pub verdict: Verdict,
    /// Absolute rate volume in the validation window over that in the training window.
    pub volume_ratio: Option<f64>,
    pub per_well: Vec<WellValidation>,
    pub training: FitReport,
    pub notes: Vec<String>,
}

struct Compared {
    quantity: &'static str,
    per_well: Vec<WellValidation>,
}

fn well_entry(well: &str, times: Vec<f64>, predicted: Vec<f64>, actual: Vec<f64>) -> WellValidation {
    let m = metrics(&predicted, &actual).ok();
    WellValidation {
        well: well.to_string(),
        n_points: actual.len(),
        rmsd: m.map(|m| m.rmsd),
        r2: m.and_then(|m| m.r2),
        times,
        predicted,
        actual,
    }
}

fn positive_weight(p: &PressureSeries) -> (Vec<f64>, Vec<f64>) {
    p.samples()
        .iter()
        .filter(|x| x.weight > 0.0)
        .map(|x| (x.time, x.pressure))
        .unzip()
}

fn compare_mdcv(model: &DeconvolutionModel, valid: &Scenario, notes: &mut Vec<String>) -> Result<Compared> {
    let mut times = Vec::new();
    let mut actual = Vec::new();
    for (n, p) in valid.pressures.iter().enumerate() {
        let (t, a) = positive_weight(p);
        if model.p0[n].is_none() && !t.is_empty() {
            notes.push(format!("{}: not modeled, {} validation samples skipped", valid.wells[n].id, t.len()));
            times.push(Vec::new());
            actual.push(Vec::new());
        } else {
            times.push(t);
            actual.push(a);
        }
    }
    let pred = simulate_pressure(model, &valid.rates, &times)?;
    let per_well = (0..valid.len())
        .filter(|&n| !times[n].is_empty())
        .map(|n| {
            well_entry(
                valid.wells[n].id.as_str(),
                times[n].clone(),
                pred[n].pressures(),
                actual[n].clone(),
            )
        })
        .collect();
    Ok(Compared {
        quantity: "pressure",
        per_well,
    })
}

fn compare_crm(
    model: &CrmModel,
    fit: &FitReport,
    full: &Scenario,
    valid: &Scenario,
    mode: CrmFitMode,
) -> Result<Compared> {
    let find = |id: &str| {
        full.index_of(id)
            .ok_or_else(|| Error::InvalidScenario(format!("scenario lacks CRM well `{id}`")))
    };
    let prod = model
        .producers
        .iter()
        .map(|p| find(p.id.as_str()))
        .collect::<Result<Vec<_>>>()?;
    let inj = model
        .injectors
        .iter()
        .map(|i| find(i.as_str()))
        .collect::<Result<Vec<_>>>()?;
    let production: Vec<_> = prod.iter().map(|&k| full.rates[k].clone()).collect();
    let injections: Vec<_> = inj.iter().map(|&k| full.rates[k].clone()).collect();
    let mut per_well = Vec::new();
    if mode == CrmFitMode::Pressure {
        let p_start = model
            .producers
            .iter()
            .map(|p| {
                fit.initial_pressures.get(p.id.as_str()).copied().ok_or_else(|| {
                    Error::InvalidScenario(format!("no fitted initial pressure for `{}`", p.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (n, &k) in prod.iter().enumerate() {
            let (t, a) = positive_weight(&valid.pressures[k]);
            if t.is_empty() {
                continue;
            }
            let pred = crm_simulate_pressure(model, &production, &injections, &p_start, &t)?;
            per_well.push(well_entry(model.producers[n].id.as_str(), t, pred[n].pressures(), a));
        }
        return Ok(Compared {
            quantity: "pressure",
            per_well,
        });
    }
    // Rate modes: BHP is a control input, so the full record drives the prediction.
    let end = full.end_time();
    let bhp: Vec<PressureSeries> = prod.iter().map(|&k| full.pressures[k].clone()).collect();
    let q0: Vec<f64> = production
        .iter()
        .map(|r| r.steps().first().filter(|s| s.time == 0.0).map_or(0.0, |s| s.rate))
        .collect();
    let mut knots: Vec<f64> = vec![0.0, end];
    for r in production.iter().chain(&injections) {
        knots.extend(r.times().filter(|t| *t >= 0.0 && *t <= end));
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let cum = crm_cumulative_production(model, &injections, &bhp, &q0, &knots)?;
    let at = |n: usize, t: f64| cum[n][knots.partition_point(|&k| k < t)];
    for (n, r) in production.iter().enumerate() {
        let steps = r.steps();
        let (mut t, mut p, mut a) = (Vec::new(), Vec::new(), Vec::new());
        for (k, st) in steps.iter().enumerate() {
            let stop = steps.get(k + 1).map_or(end, |x| x.time).min(end);
            if stop <= st.time || !valid.window.contains(st.time) {
                continue;
            }
            t.push(st.time);
            if mode == CrmFitMode::Icrm {
                p.push(at(n, stop));
                a.push(r.cumulative(stop));
            } else {
                p.push((at(n, stop) - at(n, st.time)) / (stop - st.time));
                a.push(st.rate);
            }
        }
        if !t.is_empty() {
            per_well.push(well_entry(model.producers[n].id.as_str(), t, p, a));
        }
    }
    Ok(Compared {
        quantity: if mode == CrmFitMode::Icrm { "cumulative" } else { "rate" },
        per_well,
    })
}

fn training_intervals(split: &SplitSpec, end: f64) -> Vec<(f64, f64)> {
    split
        .training_intervals()
        .iter()
        .map(|i| (i.start.max(0.0), i.end.min(end)))
        .filter(|(a, b)| b > a)
        .collect()
}

fn volume_ratio(s: &Scenario, split: &SplitSpec) -> Option<f64> {
    let end = s.end_time();
    let train: f64 = training_intervals(split, end)
        .iter()
        .map(|&(a, b)| s.rates.iter().map(|r| r.abs_volume(a, b)).sum::<f64>())
        .sum();
    let total: f64 = s.rates.iter().map(|r| r.abs_volume(0.0, end)).sum();
    (train > 0.0).then(|| (total - train) / train)
}

/// Trains on the training partition and scores predictions on the validation partition.
pub fn cross_validate(
    s: &Scenario,
    split: &SplitSpec,
    engine: &Engine,
    threshold_r2: f64,
) -> Result<(Option<TrainedModel>, ValidationReport)> {
    if !(threshold_r2 <= 1.0) {
        return Err(Error::InvalidOptions(format!("R² threshold {threshold_r2} must be <= 1")));
    }
    let (train, valid) = split_dataset(s, split)?;
    let mut notes = Vec::new();
    let (model, fit) = match engine {
        Engine::Mdcv(o) => {
            let (m, r) = deconvolve(&train, o)?;
            (m.map(TrainedModel::Mdcv), r)
        }
        Engine::Crm(o) => {
            let (m, r) = crm_fit(&train, o)?;
            (m.map(TrainedModel::Crm), r)
        }
    };
    let mut report = ValidationReport {
        split: split.clone(),
        quantity: String::new(),
        rmsd: None,
        r2: None,
        n_points: 0,
        threshold_r2,
        verdict: Verdict::NoValidationConditions,
        volume_ratio: volume_ratio(s, split),
        per_well: Vec::new(),
        training: fit,
        notes: Vec::new(),
    };
    let Some(model) = model else {
        report.notes.push("training produced no model".into());
        return Ok((None, report));
    };
    let compared = match (&model, engine) {
        (TrainedModel::Mdcv(m), _) => compare_mdcv(m, &valid, &mut notes)?,
        (TrainedModel::Crm(m), Engine::Crm(o)) => compare_crm(m, &report.training, s, &valid, o.mode)?,
        (TrainedModel::Crm(_), Engine::Mdcv(_)) => unreachable!("engine and model kinds match"),
    };
    report.quantity = compared.quantity.to_string();
    let (pred, act): (Vec<f64>, Vec<f64>) = compared
        .per_well
        .iter()
        .flat_map(|w| w.predicted.iter().copied().zip(w.actual.iter().copied()))
        .unzip();
    report.per_well = compared.per_well;
    report.n_points = act.len();
    let threshold = engine.variation_threshold();
    let validation_events = s
        .rates
        .iter()
        .flat_map(|r| variation_events(r, threshold))
        .filter(|(t, _)| valid.window.contains(*t))
        .count();
    if let Ok(m) = metrics(&pred, &act) {
        report.rmsd = Some(m.rmsd);
        report.r2 = m.r2;
    }
    report.verdict = if validation_events == 0 {
        notes.push("no rate variation inside the validation window".into());
        Verdict::NoValidationConditions
    } else if report.n_points < 2 {
        notes.push(format!("{} validation points", report.n_points));
        Verdict::NoValidationConditions
    } else {
        match report.r2 {
            Some(r2) if r2 >= threshold_r2 => Verdict::Validated,
            Some(_) => Verdict::Failed,
            None => {
                notes.push("validation observations have zero variance".into());
                Verdict::Failed
            }
        }
    };
    report.notes = notes;
    Ok((Some(model), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalReport {
    pub verdict: Verdict,
    /// First validated candidate.
    pub chosen: Option<SplitSpec>,
    pub attempts: Vec<RehearsalAttempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalAttempt {
    pub split: SplitSpec,
    pub verdict: Verdict,
    pub r2: Option<f64>,
    pub notes: Vec<String>,
}

/// Generates the synthetic field and tries candidate splits in order until one validates.
pub fn rehearse_split(
    spec: &SyntheticSpec,
    candidates: &[SplitSpec],
    engine: &Engine,
    threshold_r2: f64,
    max_iter: usize,
) -> Result<RehearsalReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate splits".into()));
    }
    let (scenario, _) = generate_scenario(spec)?;
    let tried: Vec<&SplitSpec> = candidates.iter().take(max_iter.max(1)).collect();
    let outcomes: Vec<RehearsalAttempt> = tried
        .par_iter()
        .map(|split| match cross_validate(&scenario, split, engine, threshold_r2) {
            Ok((_, r)) => RehearsalAttempt {
                split: (*split).clone(),
                verdict: r.verdict,
                r2: r.r2,
                notes: r.notes,
            },
            Err(e) => RehearsalAttempt {
                split: (*split).clone(),
                verdict: Verdict::Failed,
                r2: None,
                notes: vec![e.to_string()],
            },
        })
        .collect();
    let first = outcomes.iter().position(|a| a.verdict == Verdict::Validated);
    let attempts = match first {
        Some(k) => outcomes[..=k].to_vec(),
        None => outcomes,
    };
    Ok(RehearsalReport {
        verdict: if first.is_some() {
            Verdict::Validated
        } else {
            Verdict::NoValidationConditions
        },
        chosen: first.map(|k| candidates[k].clone()),
        attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCandidate {
    pub lambda_curvature: f64,
    pub lambda_cumulative: f64,
    pub fold_r2: Vec<Option<f64>>,
    pub mean_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub folds: Vec<Interval>,
    pub candidates: Vec<TuningCandidate>,
    pub selected: (f64, f64),
}

fn folds(s: &Scenario, n_folds: usize) -> Result<Vec<Interval>> {
    let times: Vec<f64> = s
        .pressures
        .iter()
        .flat_map(|p| p.samples().iter().filter(|x| x.weight > 0.0).map(|x| x.time))
        .collect();
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n_folds < 2 || !(hi > lo) {
        return Err(Error::DegenerateFolds(format!(
            "{n_folds} folds over pressure samples spanning [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / n_folds as f64;
    let out: Vec<Interval> = (0..n_folds)
        .map(|i| Interval {
            start: lo + i as f64 * width,
            end: if i + 1 == n_folds {
                f64::INFINITY
            } else {
                lo + (i + 1) as f64 * width
            },
        })
        .collect();
    for iv in &out {
        let n = times.iter().filter(|&&t| iv.contains(t)).count();
        if n < 2 {
            return Err(Error::DegenerateFolds(format!(
                "fold [{}, {}) holds {n} pressure samples",
                iv.start, iv.end
            )));
        }
    }
    Ok(out)
}

/// Complement of fold `i` as training intervals.
fn fold_split(folds: &[Interval], i: usize) -> SplitSpec {
    let mut iv = Vec::new();
    if i > 0 {
        iv.push(Interval {
            start: f64::NEG_INFINITY,
            end: folds[i].start,
        });
    }
    if i + 1 < folds.len() {
        iv.push(Interval {
            start: folds[i].end,
            end: f64::INFINITY,
        });
    }
    SplitSpec::Intervals(iv)
}

/// Picks the λ pair with the best mean inner-fold R²; ties go to the smaller λ.
pub fn bootstrap_tune(training: &Scenario, opts: &MdcvOptions, n_folds: usize) -> Result<(MdcvOptions, TuningReport)> {
    opts.validate()?;
    let folds = folds(training, n_folds)?;
    let mut curv = opts.lambda_grid.curvature.clone();
    let mut cum = opts.lambda_grid.cumulative.clone();
    if curv.is_empty() {
        curv.push(opts.lambda_curvature);
    }
    if cum.is_empty() {
        cum.push(opts.lambda_cumulative);
    }
    if curv.iter().chain(&cum).any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidOptions("λ grid values must be finite and >= 0".into()));
    }
    curv.sort_by(f64::total_cmp);
    curv.dedup();
    cum.sort_by(f64::total_cmp);
    cum.dedup();
    let pairs: Vec<(f64, f64)> = curv.iter().flat_map(|&a| cum.iter().map(move |&b| (a, b))).collect();
    if pairs.len() == 1 {
        let selected = (opts.lambda_curvature, opts.lambda_cumulative);
        return Ok((
            opts.clone(),
            TuningReport {
                folds,
                candidates: Vec::new(),
                selected,
            },
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|c| (0..folds.len()).map(move |f| (c, f))).collect();
    let scores: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let o = MdcvOptions {
                lambda_curvature: pairs[c].0,
                lambda_cumulative: pairs[c].1,
                ..opts.clone()
            };
            let (_, r) = cross_validate(training, &fold_split(&folds, f), &Engine::Mdcv(o), 1.0)?;
            Ok(r.r2)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut candidates = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for (c, &(a, b)) in pairs.iter().enumerate() {
        let fold_r2 = scores[c * folds.len()..(c + 1) * folds.len()].to_vec();
        let mean_r2 = fold_r2
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        if let Some(m) = mean_r2 {
            if best.is_none_or(|(bm, _)| m > bm + TUNING_TIE) {
                best = Some((m, c));
            }
        }
        candidates.push(TuningCandidate {
            lambda_curvature: a,
            lambda_cumulative: b,
            fold_r2,
            mean_r2,
        });
    }
    let Some((_, c)) = best else {
        return Err(Error::DegenerateFolds("no λ candidate produced a score on every fold".into()));
    };
    let selected = pairs[c];
    Ok((
        MdcvOptions {
            lambda_curvature: selected.0,
            lambda_cumulative: selected.1,
            ..opts.clone()
        },
        TuningReport {
            folds,
            candidates,
            selected,
        },
    ))
}
