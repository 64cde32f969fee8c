use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use wellcorr::convolution::DeconvolutionModel;
use wellcorr::report::FitReport;
use wellcorr::well_data::{PressureSeries, RateHistory, WellId};

pub fn write_text(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_text(dir, name, &body)
}

pub fn residuals_csv(report: &FitReport) -> String {
    let mut out = String::from("well,time_days,residual\n");
    for w in &report.residuals {
        for (t, r) in w.times.iter().zip(&w.residuals) {
            let _ = writeln!(out, "{},{t},{r}", w.well);
        }
    }
    out
}

pub fn pressures_csv(wells: &[WellId], series: &[PressureSeries]) -> String {
    let mut out = String::from("well,time_days,pressure_bar\n");
    for (w, p) in wells.iter().zip(series) {
        for s in p.samples() {
            let _ = writeln!(out, "{w},{},{}", s.time, s.pressure);
        }
    }
    out
}

pub fn rates_csv(wells: &[WellId], rates: &[RateHistory]) -> String {
    let mut out = String::from("well,time_days,rate_m3d\n");
    for (w, r) in wells.iter().zip(rates) {
        for s in r.steps() {
            let _ = writeln!(out, "{w},{},{}", s.time, s.rate);
        }
    }
    out
}

/// Responses and their derivatives on a log grid, one row per (pair, time).
pub fn utr_csv(model: &DeconvolutionModel, t_end: f64) -> String {
    let mut out = String::from("row,col,time_days,utr,derivative\n");
    let hi = t_end.max(1.0);
    let lo = hi * 1e-4;
    let n = 60;
    for (r, c) in model.utrs.active_pairs() {
        let u = model.utrs.get(r, c).expect("active");
        for k in 0..=n {
            let t = lo * (hi / lo).powf(k as f64 / n as f64);
            let _ = writeln!(
                out,
                "{},{},{t},{},{}",
                model.wells[r],
                model.wells[c],
                u.eval(t),
                u.derivative(t)
            );
        }
    }
    out
}
