use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use wellcorr::bridge::{crm_to_mdcv_ordered, equivalence_check};
use wellcorr::convolution::{simulate_pressure, simulate_rates, DeconvolutionModel};
use wellcorr::crm::{crm_fit, crm_simulate_pressure, crm_simulate_rates, CrmFitMode, CrmFitOptions, CrmModel};
use wellcorr::mdcv::{correct_rates, deconvolve, MdcvOptions};
use wellcorr::report::{FitReport, FitStatus};
use wellcorr::synthetic::{generate_scenario, SyntheticSpec};
use wellcorr::validation::{bootstrap_tune, cross_validate, rehearse_split, Engine, TrainedModel, ValidationReport, Verdict};
use wellcorr::well_data::{
    load_scenario, qc_report, write_scenario, Interval, PressureSeries, QcOptions, Scenario, ScenarioConfig, SplitSpec,
    CONFIG_FILE, PRESSURES_FILE, RATES_FILE,
};

use crate::output::{pressures_csv, rates_csv, residuals_csv, utr_csv, write_json, write_text};
use crate::{
    Command, Common, CrmAction, CrmFlags, CrmModeArg, DataArgs, EngineArg, MdcvFlags, SimulateMode, EXIT_CONVERGENCE,
    EXIT_OK, EXIT_QC_FATAL, EXIT_VALIDATION,
};

/// Engine options read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    mdcv: MdcvOptions,
    crm: CrmFitOptions,
    qc: QcOptions,
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_toml)
}

fn load_data(d: &DataArgs) -> Result<(Scenario, ScenarioConfig)> {
    let cfg = ScenarioConfig::load(d.data.join(CONFIG_FILE))?;
    let pressures = d.data.join(PRESSURES_FILE);
    let pressure_files: Vec<_> = if pressures.exists() { vec![pressures] } else { Vec::new() };
    let s = load_scenario(&[d.data.join(RATES_FILE)], &pressure_files, &cfg)?;
    Ok((s, cfg))
}

fn mdcv_options(base: &MdcvOptions, f: &MdcvFlags, seed: Option<u64>, cfg: Option<&ScenarioConfig>) -> MdcvOptions {
    let mut o = base.clone();
    o.force |= f.force;
    o.correct_rates |= f.correct_rates;
    if let Some(v) = f.rate_weight {
        o.rate_weight = v;
    }
    if let Some(v) = f.lambda_curvature {
        o.lambda_curvature = v;
    }
    if let Some(v) = f.lambda_cumulative {
        o.lambda_cumulative = v;
    }
    if let Some(v) = f.gn_iterations {
        o.gn_iterations = v;
    }
    if let Some(v) = f.de_generations {
        o.de.generations = v;
    }
    if let Some(s) = seed {
        o.seed = s;
    }
    if let Some(cfg) = cfg {
        for [a, b] in &cfg.inactive_pairs {
            let pair = (a.clone(), b.clone());
            if !o.inactive_pairs.contains(&pair) {
                o.inactive_pairs.push(pair);
            }
        }
    }
    o
}

fn crm_options(base: &CrmFitOptions, f: &CrmFlags) -> CrmFitOptions {
    let mut o = base.clone();
    if let Some(m) = f.mode {
        o.mode = match m {
            CrmModeArg::Rate => CrmFitMode::Rate,
            CrmModeArg::Pressure => CrmFitMode::Pressure,
            CrmModeArg::Icrm => CrmFitMode::Icrm,
        };
    }
    o.strict_allocation |= f.strict;
    o.interference |= f.interference;
    o
}

/// `T` → train on `[0, T)`; `a:b,c:d` → train on the listed intervals.
pub fn parse_split(text: &str) -> Result<SplitSpec> {
    let text = text.trim();
    if !text.contains(':') {
        let t: f64 = text.parse().with_context(|| format!("split `{text}` is not a number"))?;
        return Ok(SplitSpec::Boundary(t));
    }
    let intervals = text
        .split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .with_context(|| format!("interval `{part}` needs the form start:end"))?;
            let a: f64 = a.trim().parse().with_context(|| format!("bad interval start `{a}`"))?;
            let b: f64 = b.trim().parse().with_context(|| format!("bad interval end `{b}`"))?;
            Ok(Interval::new(a, b)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitSpec::Intervals(intervals))
}

fn status_name(s: FitStatus) -> &'static str {
    match s {
        FitStatus::Converged => "converged",
        FitStatus::BudgetExhausted => "budget_exhausted",
        FitStatus::IllPosed => "ill_posed",
        FitStatus::NoVariation => "no_variation",
    }
}

fn fit_exit(s: FitStatus) -> i32 {
    match s {
        FitStatus::NoVariation => EXIT_VALIDATION,
        FitStatus::BudgetExhausted => EXIT_CONVERGENCE,
        FitStatus::Converged | FitStatus::IllPosed => EXIT_OK,
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Validated => "validated",
        Verdict::Failed => "failed",
        Verdict::NoValidationConditions => "no_validation_conditions",
    }
}

fn verdict_exit(v: Verdict) -> i32 {
    if v == Verdict::Validated {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

pub fn execute(cmd: &Command) -> Result<i32> {
    let name = cmd.name();
    match cmd {
        Command::Qc { common, data } => qc(name, common, data),
        Command::Synth { common } => synth(name, common),
        Command::Simulate { mode } => match mode {
            SimulateMode::RateControl { common, data, model, every } => rate_control(name, common, data, model, *every),
            SimulateMode::PressureControl { common, data, model, start } => {
                pressure_control(name, common, data, model, *start)
            }
        },
        Command::Deconvolve { common, data, mdcv, tune_folds } => run_deconvolve(name, common, data, mdcv, *tune_folds),
        Command::Crm { action } => match action {
            CrmAction::Fit { common, data, crm } => run_crm_fit(name, common, data, crm),
            CrmAction::Simulate { common, data, model, pressure } => crm_sim(name, common, data, model, *pressure),
        },
        Command::Bridge { common, data, model, tolerance } => bridge(name, common, data, model, *tolerance),
        Command::Validate { common, data, engine, split, threshold_r2, mdcv, crm } => {
            validate(name, common, data, *engine, split, *threshold_r2, mdcv, crm)
        }
        Command::Rehearse { common, candidates, engine, threshold_r2, max_iter, options, mdcv, crm } => {
            rehearse(name, common, candidates, *engine, *threshold_r2, *max_iter, options.as_deref(), mdcv, crm)
        }
    }
}

fn qc(name: &str, common: &Common, data: &DataArgs) -> Result<i32> {
    let cfg = run_config(common.config.as_deref())?;
    let (s, _) = load_data(data)?;
    let r = qc_report(&s, &cfg.qc);
    let code = if r.is_fail() { EXIT_QC_FATAL } else { EXIT_OK };
    let status = if r.is_fail() { "fatal" } else { "ok" };
    write_json(&common.out, "report.json", &json!({ "command": name, "status": status, "qc": r }))?;
    Ok(code)
}

fn synth(name: &str, common: &Common) -> Result<i32> {
    let Some(path) = common.config.as_deref() else {
        bail!("synth needs --config <spec.toml>");
    };
    let mut spec = SyntheticSpec::load(path)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let (s, truth) = generate_scenario(&spec)?;
    write_scenario(&s, &common.out)?;
    write_json(&common.out, "truth.json", &truth)?;
    write_json(
        &common.out,
        "report.json",
        &json!({
            "command": name,
            "status": "ok",
            "seed": spec.seed,
            "wells": s.len(),
            "pressure_samples": s.pressure_sample_count(),
            "end_time_days": s.end_time(),
        }),
    )?;
    Ok(EXIT_OK)
}

fn load_model(path: &Path, s: &Scenario) -> Result<DeconvolutionModel> {
    let m: DeconvolutionModel = read_json(path)?;
    m.validate()?;
    if m.wells != s.ids() {
        bail!("model wells {:?} do not match the data's {:?}", m.wells, s.ids());
    }
    Ok(m)
}

fn rate_control(name: &str, common: &Common, data: &DataArgs, model: &Path, every: Option<f64>) -> Result<i32> {
    let (s, _) = load_data(data)?;
    let m = load_model(model, &s)?;
    let times: Vec<Vec<f64>> = match every {
        Some(dt) => {
            if !(dt > 0.0) {
                bail!("--every must be > 0");
            }
            let n = (s.end_time() / dt).floor() as usize;
            let grid: Vec<f64> = (1..=n).map(|k| k as f64 * dt).collect();
            vec![grid; s.len()]
        }
        None => s.pressures.iter().map(|p| p.times()).collect(),
    };
    let p = simulate_pressure(&m, &s.rates, &times)?;
    write_text(&common.out, "pressures.csv", &pressures_csv(&m.wells, &p))?;
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": "ok", "samples": p.iter().map(|x| x.len()).sum::<usize>() }),
    )?;
    Ok(EXIT_OK)
}

fn pressure_control(name: &str, common: &Common, data: &DataArgs, model: &Path, start: f64) -> Result<i32> {
    let (s, _) = load_data(data)?;
    let m = load_model(model, &s)?;
    let targets: Vec<Option<PressureSeries>> = (0..s.len())
        .map(|n| {
            let later = s.pressures[n].filtered(|t| t > start);
            (m.p0[n].is_some() && !later.is_empty()).then_some(later)
        })
        .collect();
    if targets.iter().all(Option::is_none) {
        bail!("no modeled well has pressure targets after t = {start}");
    }
    let rates: Vec<_> = s
        .rates
        .iter()
        .zip(&targets)
        .map(|(r, t)| if t.is_some() { r.truncated_before(start) } else { r.clone() })
        .collect();
    let out = simulate_rates(&m, &targets, &rates, start)?;
    write_text(&common.out, "rates.csv", &rates_csv(&m.wells, &out))?;
    let controlled: Vec<String> = (0..s.len())
        .filter(|&n| targets[n].is_some())
        .map(|n| s.wells[n].id.to_string())
        .collect();
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": "ok", "controlled_wells": controlled, "start_days": start }),
    )?;
    Ok(EXIT_OK)
}

fn fit_payload(name: &str, report: &FitReport) -> serde_json::Value {
    json!({ "command": name, "status": status_name(report.status), "fit": report })
}

fn run_deconvolve(name: &str, common: &Common, data: &DataArgs, flags: &MdcvFlags, tune: Option<usize>) -> Result<i32> {
    let cfg = run_config(common.config.as_deref())?;
    let (s, scfg) = load_data(data)?;
    let mut opt = mdcv_options(&cfg.mdcv, flags, common.seed, Some(&scfg));
    let mut tuning = None;
    if let Some(n) = tune {
        let (tuned, r) = bootstrap_tune(&s, &opt, n)?;
        opt = tuned;
        tuning = Some(r);
    }
    let (model, report) = deconvolve(&s, &opt)?;
    let mut payload = fit_payload(name, &report);
    if let Some(t) = tuning {
        payload["tuning"] = serde_json::to_value(t)?;
    }
    if let Some(m) = &model {
        write_json(&common.out, "model.json", m)?;
        write_text(&common.out, "residuals.csv", &residuals_csv(&report))?;
        write_text(&common.out, "utr.csv", &utr_csv(m, s.end_time()))?;
        if opt.correct_rates {
            let corrected = correct_rates(m, &s, opt.correction_band)?;
            write_text(&common.out, "corrected_rates.csv", &rates_csv(&s.ids(), &corrected))?;
        }
    }
    write_json(&common.out, "report.json", &payload)?;
    Ok(fit_exit(report.status))
}

fn run_crm_fit(name: &str, common: &Common, data: &DataArgs, flags: &CrmFlags) -> Result<i32> {
    let cfg = run_config(common.config.as_deref())?;
    let (s, _) = load_data(data)?;
    let opt = crm_options(&cfg.crm, flags);
    let (model, report) = crm_fit(&s, &opt)?;
    if let Some(m) = &model {
        write_json(&common.out, "crm_model.json", m)?;
        write_text(&common.out, "residuals.csv", &residuals_csv(&report))?;
    }
    let mut payload = fit_payload(name, &report);
    if let Some(m) = &model {
        payload["constraints"] = serde_json::to_value(m.audit(opt.strict_allocation))?;
    }
    write_json(&common.out, "report.json", &payload)?;
    Ok(fit_exit(report.status))
}

fn crm_wells(m: &CrmModel, s: &Scenario) -> Result<(Vec<usize>, Vec<usize>)> {
    let find = |id: &str| s.index_of(id).with_context(|| format!("data lacks CRM well `{id}`"));
    let prod = m.producers.iter().map(|p| find(p.id.as_str())).collect::<Result<Vec<_>>>()?;
    let inj = m.injectors.iter().map(|i| find(i.as_str())).collect::<Result<Vec<_>>>()?;
    Ok((prod, inj))
}

fn union_times(lists: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut t: Vec<f64> = lists.flatten().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn crm_sim(name: &str, common: &Common, data: &DataArgs, model: &Path, pressure: bool) -> Result<i32> {
    let (s, _) = load_data(data)?;
    let m: CrmModel = read_json(model)?;
    let (prod, inj) = crm_wells(&m, &s)?;
    let injections: Vec<_> = inj.iter().map(|&k| s.rates[k].clone()).collect();
    let ids: Vec<_> = m.producer_ids();
    if pressure {
        let production: Vec<_> = prod.iter().map(|&k| s.rates[k].clone()).collect();
        let p_start = prod
            .iter()
            .map(|&k| s.p0[k].with_context(|| format!("`{}` needs p0_bar for pressure simulation", s.wells[k].id)))
            .collect::<Result<Vec<_>>>()?;
        let mut times = union_times(prod.iter().map(|&k| s.pressures[k].times()));
        if times.is_empty() {
            times = union_times(prod.iter().map(|&k| s.rates[k].times().collect()));
        }
        let p = crm_simulate_pressure(&m, &production, &injections, &p_start, &times)?;
        write_text(&common.out, "pressures.csv", &pressures_csv(&ids, &p))?;
    } else {
        let bhp: Vec<_> = prod.iter().map(|&k| s.pressures[k].clone()).collect();
        let q0: Vec<f64> = prod
            .iter()
            .map(|&k| s.rates[k].steps().first().filter(|x| x.time == 0.0).map_or(0.0, |x| x.rate))
            .collect();
        let times = union_times(prod.iter().map(|&k| s.rates[k].times().chain(s.pressures[k].times()).collect()));
        let r = crm_simulate_rates(&m, &injections, &bhp, &q0, &times)?;
        write_text(&common.out, "rates.csv", &rates_csv(&ids, &r))?;
    }
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": "ok", "quantity": if pressure { "pressure" } else { "rate" } }),
    )?;
    Ok(EXIT_OK)
}

fn bridge(name: &str, common: &Common, data: &DataArgs, model: &Path, tolerance: f64) -> Result<i32> {
    let (s, _) = load_data(data)?;
    let m: CrmModel = read_json(model)?;
    let (prod, _) = crm_wells(&m, &s)?;
    let p0: Vec<f64> = prod.iter().map(|&k| s.p0[k].unwrap_or(0.0)).collect();
    let converted = crm_to_mdcv_ordered(&m, &p0, &s.ids())?;
    let r = equivalence_check(&m, &s, tolerance)?;
    write_json(&common.out, "model.json", &converted)?;
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": if r.pass { "pass" } else { "fail" }, "equivalence": r }),
    )?;
    Ok(if r.pass { EXIT_OK } else { EXIT_VALIDATION })
}

fn engine(kind: EngineArg, cfg: &RunConfig, mdcv: &MdcvFlags, crm: &CrmFlags, seed: Option<u64>, scfg: Option<&ScenarioConfig>) -> Engine {
    match kind {
        EngineArg::Mdcv => Engine::Mdcv(mdcv_options(&cfg.mdcv, mdcv, seed, scfg)),
        EngineArg::Crm => Engine::Crm(crm_options(&cfg.crm, crm)),
    }
}

fn validation_csv(r: &ValidationReport) -> String {
    let mut out = String::from("well,time_days,predicted,actual\n");
    for w in &r.per_well {
        for ((t, p), a) in w.times.iter().zip(&w.predicted).zip(&w.actual) {
            out.push_str(&format!("{},{t},{p},{a}\n", w.well));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn validate(
    name: &str,
    common: &Common,
    data: &DataArgs,
    kind: EngineArg,
    split: &str,
    threshold: f64,
    mdcv: &MdcvFlags,
    crm: &CrmFlags,
) -> Result<i32> {
    let cfg = run_config(common.config.as_deref())?;
    let (s, scfg) = load_data(data)?;
    let split = parse_split(split)?;
    let e = engine(kind, &cfg, mdcv, crm, common.seed, Some(&scfg));
    let (model, r) = cross_validate(&s, &split, &e, threshold)?;
    match &model {
        Some(TrainedModel::Mdcv(m)) => write_json(&common.out, "model.json", m)?,
        Some(TrainedModel::Crm(m)) => write_json(&common.out, "crm_model.json", m)?,
        None => {}
    }
    write_text(&common.out, "validation.csv", &validation_csv(&r))?;
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": verdict_name(r.verdict), "validation": r }),
    )?;
    Ok(verdict_exit(r.verdict))
}

#[allow(clippy::too_many_arguments)]
fn rehearse(
    name: &str,
    common: &Common,
    candidates: &[String],
    kind: EngineArg,
    threshold: f64,
    max_iter: usize,
    options: Option<&Path>,
    mdcv: &MdcvFlags,
    crm: &CrmFlags,
) -> Result<i32> {
    let Some(path) = common.config.as_deref() else {
        bail!("rehearse needs --config <spec.toml>");
    };
    let mut spec = SyntheticSpec::load(path)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let cfg = run_config(options)?;
    let splits = candidates.iter().map(|c| parse_split(c)).collect::<Result<Vec<_>>>()?;
    let e = engine(kind, &cfg, mdcv, crm, common.seed, None);
    let r = rehearse_split(&spec, &splits, &e, threshold, max_iter)?;
    write_json(
        &common.out,
        "report.json",
        &json!({ "command": name, "status": verdict_name(r.verdict), "rehearsal": r }),
    )?;
    Ok(verdict_exit(r.verdict))
}
