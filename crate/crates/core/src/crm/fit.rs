//! Separable CRM fitting: for fixed time constants the model is linear in the
//! remaining parameters, which are solved under the allocation constraints;
//! each time constant is searched on a log scale.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qp::{solve_lsq, LsqProblem};
use super::{step_coefficients, CrmModel, CrmProducer};
use crate::error::{Error, Result};
use crate::report::{FitReport, FitStatus, WellResiduals};
use crate::well_data::{variation_events, RateHistory, Scenario, WellId};

const B_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrmFitMode {
    /// Interval-mean production rates.
    Rate,
    /// Bottomhole pressures from the integrated form.
    Pressure,
    /// Cumulative production at rate-record times.
    Icrm,
    /// Weighted sum of the rate and cumulative objectives.
    Combo { rate_weight: f64, icrm_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrmFitOptions {
    pub mode: CrmFitMode,
    /// Injector column sums forced to exactly 1.
    pub strict_allocation: bool,
    /// Fit producer–producer pairing terms (pressure mode only).
    pub interference: bool,
    pub tau_min: f64,
    /// Upper τ bound as a multiple of the history length.
    pub tau_max_factor: f64,
    pub scan_points: usize,
    pub rounds: usize,
    pub variation_threshold: f64,
}

impl Default for CrmFitOptions {
    fn default() -> Self {
        CrmFitOptions {
            mode: CrmFitMode::Rate,
            strict_allocation: false,
            interference: false,
            tau_min: 0.01,
            tau_max_factor: 10.0,
            scan_points: 40,
            rounds: 4,
            variation_threshold: 0.05,
        }
    }
}

impl CrmFitOptions {
    fn validate(&self) -> Result<()> {
        if let CrmFitMode::Combo {
            rate_weight,
            icrm_weight,
        } = self.mode
        {
            if !(rate_weight >= 0.0 && icrm_weight >= 0.0) || rate_weight + icrm_weight <= 0.0 {
                return Err(Error::InvalidOptions(
                    "combo weights must be >= 0 and not both zero".into(),
                ));
            }
        }
        if self.interference && self.mode != CrmFitMode::Pressure {
            return Err(Error::InvalidOptions(
                "producer interference is only fitted in pressure mode".into(),
            ));
        }
        if !(self.tau_min > 0.0) || !(self.tau_max_factor > 0.0) || self.scan_points < 3 {
            return Err(Error::InvalidOptions("invalid time-constant search range".into()));
        }
        Ok(())
    }
}

struct PressureObs {
    time: f64,
    p: f64,
    sw: f64,
    /// `τ`-coefficient and cumulative of the own rate: `q(t⁻)`, `Q↑(t)`.
    rate_before: f64,
    own_cum: f64,
    inj_cum: Vec<f64>,
    other_cum: Vec<f64>,
}

struct ProducerData {
    id: WellId,
    q0: f64,
    knots: Vec<f64>,
    f_gamma: Vec<f64>,
    f_inj: Vec<Vec<f64>>,
    /// `(start knot, end knot, recorded rate)`.
    rate_obs: Vec<(usize, usize, f64)>,
    /// `(knot, recorded cumulative)`.
    cum_obs: Vec<(usize, f64)>,
    p_obs: Vec<PressureObs>,
    p0: Option<f64>,
}

fn knot_index(knots: &[f64], t: f64) -> usize {
    knots.partition_point(|k| *k < t)
}

fn prepare(s: &Scenario, prods: &[usize], injs: &[usize], end: f64) -> Vec<ProducerData> {
    let inj_mag: Vec<RateHistory> = injs.iter().map(|&m| s.rates[m].scaled(-1.0)).collect();
    prods
        .iter()
        .map(|&n| {
            let rates = &s.rates[n];
            let bhp = &s.pressures[n];
            let q0 = rates
                .steps()
                .first()
                .filter(|st| st.time == 0.0)
                .map_or(0.0, |st| st.rate);
            let mut knots: Vec<f64> = vec![0.0, end];
            knots.extend(bhp.times());
            knots.extend(rates.times());
            knots.extend(inj_mag.iter().flat_map(|r| r.times()));
            knots.retain(|t| *t >= 0.0 && *t <= end);
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            let p_ref = bhp.interpolate(0.0).unwrap_or(0.0);
            let f_gamma = knots
                .iter()
                .map(|&t| bhp.interpolate(t).map_or(0.0, |p| p_ref - p))
                .collect();
            let f_inj = inj_mag
                .iter()
                .map(|r| knots.iter().map(|&t| r.cumulative(t)).collect())
                .collect();
            let steps = rates.steps();
            let mut rate_obs = Vec::new();
            let mut cum_obs = Vec::new();
            for (k, st) in steps.iter().enumerate() {
                let stop = steps.get(k + 1).map_or(end, |x| x.time).min(end);
                if stop <= st.time || !s.window.contains(st.time) {
                    continue;
                }
                rate_obs.push((knot_index(&knots, st.time), knot_index(&knots, stop), st.rate));
                cum_obs.push((knot_index(&knots, stop), rates.cumulative(stop)));
            }
            let others: Vec<usize> = prods.iter().copied().filter(|&k| k != n).collect();
            let p_obs = bhp
                .samples()
                .iter()
                .filter(|x| x.weight > 0.0)
                .map(|x| PressureObs {
                    time: x.time,
                    p: x.pressure,
                    sw: x.weight.sqrt(),
                    rate_before: rates.rate_before(x.time),
                    own_cum: rates.cumulative(x.time),
                    inj_cum: inj_mag.iter().map(|r| r.cumulative(x.time)).collect(),
                    other_cum: others.iter().map(|&k| s.rates[k].cumulative(x.time)).collect(),
                })
                .collect();
            ProducerData {
                id: s.wells[n].id.clone(),
                q0,
                knots,
                f_gamma,
                f_inj,
                rate_obs,
                cum_obs,
                p_obs,
                p0: s.p0[n],
            }
        })
        .collect()
}

/// Solution of `τ Q' + Q = F`, `Q(0) = 0`, with `F` linear between knots.
fn response(knots: &[f64], forcing: &[f64], tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(knots.len());
    let mut q = 0.0;
    out.push(0.0);
    for j in 1..knots.len() {
        let (e, one_minus_e, c) = step_coefficients(knots[j] - knots[j - 1], tau);
        q = e * q + one_minus_e * forcing[j - 1] + c * (forcing[j] - forcing[j - 1]);
        out.push(q);
    }
    out
}

/// Linear block of one producer: columns `[γ, f_1..f_M]`.
struct Block {
    a: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn rate_block(pd: &ProducerData, tau: f64, mode: CrmFitMode) -> Block {
    let (wr, wc) = match mode {
        CrmFitMode::Rate => (1.0, 0.0),
        CrmFitMode::Icrm => (0.0, 1.0),
        CrmFitMode::Combo {
            rate_weight,
            icrm_weight,
        } => (rate_weight, icrm_weight),
        CrmFitMode::Pressure => unreachable!("pressure mode uses its own design"),
    };
    let ni = pd.f_inj.len();
    let consts = vec![tau; pd.knots.len()];
    let base = response(&pd.knots, &consts, tau);
    let mut cols = vec![response(&pd.knots, &pd.f_gamma, tau)];
    cols.extend(pd.f_inj.iter().map(|f| response(&pd.knots, f, tau)));

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    if wr > 0.0 {
        let sw = wr.sqrt();
        for &(a, b, q) in &pd.rate_obs {
            let dt = pd.knots[b] - pd.knots[a];
            let row = cols.iter().map(|c| sw * (c[b] - c[a]) / dt).collect();
            let target = q - pd.q0 * (base[b] - base[a]) / dt;
            rows.push((row, sw * target));
        }
    }
    if wc > 0.0 {
        let sw = wc.sqrt();
        for &(k, cum) in &pd.cum_obs {
            let row = cols.iter().map(|c| sw * c[k]).collect();
            rows.push((row, sw * (cum - pd.q0 * base[k])));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), 1 + ni);
    let mut rhs = DVector::zeros(rows.len());
    for (i, (row, t)) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
        rhs[i] = t;
    }
    Block { a, rhs }
}

/// Pressure design for one producer at fixed `τ`.
///
/// Free columns: optional `p_init`, then either `[b, c_1..c_M, d_1..d_K]` (`fixed = None`,
/// with `c = f·b`, `d = g·b`) or `[b]` alone with `f`, `g` held (`fixed = Some`).
fn pressure_block(
    pd: &ProducerData,
    tau: f64,
    interference: bool,
    fixed: Option<(&[f64], &[f64])>,
) -> Block {
    let free_p = pd.p0.is_none();
    let ni = pd.f_inj.len();
    let nk = if interference {
        pd.p_obs.first().map_or(0, |o| o.other_cum.len())
    } else {
        0
    };
    let ncols = usize::from(free_p) + if fixed.is_some() { 1 } else { 1 + ni + nk };
    let mut a = DMatrix::zeros(pd.p_obs.len(), ncols);
    let mut rhs = DVector::zeros(pd.p_obs.len());
    for (i, o) in pd.p_obs.iter().enumerate() {
        let own = tau * o.rate_before + o.own_cum;
        let mut j = 0;
        if free_p {
            a[(i, j)] = o.sw;
            j += 1;
        }
        match fixed {
            None => {
                a[(i, j)] = -o.sw * own;
                for m in 0..ni {
                    a[(i, j + 1 + m)] = o.sw * o.inj_cum[m];
                }
                for k in 0..nk {
                    a[(i, j + 1 + ni + k)] = -o.sw * o.other_cum[k];
                }
            }
            Some((f, g)) => {
                let support: f64 = f.iter().zip(&o.inj_cum).map(|(f, q)| f * q).sum();
                let inter: f64 = g.iter().zip(&o.other_cum).map(|(g, q)| g * q).sum();
                a[(i, j)] = o.sw * (-own + support - inter);
            }
        }
        rhs[i] = o.sw * (o.p - pd.p0.unwrap_or(0.0));
    }
    Block { a, rhs }
}

fn sse(block: &Block, x: &DVector<f64>) -> f64 {
    (&block.a * x - &block.rhs).norm_squared()
}

fn unit(n: usize, entries: &[(usize, f64)]) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &(j, x) in entries {
        v[j] += x;
    }
    v
}

/// Joint least squares over all producers, columns `[γ_n, f_n1..f_nM]` per block.
fn solve_rate_joint(blocks: &[&Block], ni: usize, column_caps: bool, strict: bool) -> Result<(Vec<DVector<f64>>, f64)> {
    let np = blocks.len();
    let w = 1 + ni;
    let nrows: usize = blocks.iter().map(|b| b.a.nrows()).sum();
    let nv = np * w;
    let mut a = DMatrix::zeros(nrows, nv);
    let mut rhs = DVector::zeros(nrows);
    let mut r0 = 0;
    for (n, b) in blocks.iter().enumerate() {
        a.view_mut((r0, n * w), (b.a.nrows(), w)).copy_from(&b.a);
        rhs.rows_mut(r0, b.a.nrows()).copy_from(&b.rhs);
        r0 += b.a.nrows();
    }
    let mut p = LsqProblem::new(a, rhs);
    for n in 0..np {
        p.lower(n * w, 0.0);
        for m in 0..ni {
            p.lower(n * w + 1 + m, 0.0);
            p.upper(n * w + 1 + m, 1.0);
        }
        if ni > 1 {
            let entries: Vec<(usize, f64)> = (0..ni).map(|m| (n * w + 1 + m, 1.0)).collect();
            p.ineq.push((unit(nv, &entries), 1.0));
        }
    }
    if column_caps {
        for m in 0..ni {
            let entries: Vec<(usize, f64)> = (0..np).map(|n| (n * w + 1 + m, 1.0)).collect();
            if strict {
                p.eq.push((unit(nv, &entries), 1.0));
            } else {
                p.ineq.push((unit(nv, &entries), 1.0));
            }
        }
        if strict {
            for n in 0..np {
                for m in 0..ni {
                    p.x0[n * w + 1 + m] = 1.0 / np as f64;
                }
            }
        }
    }
    let x = solve_lsq(&p)?;
    let obj = (&p.a * &x - &p.b).norm_squared();
    Ok(((0..np).map(|n| x.rows(n * w, w).into_owned()).collect(), obj))
}

/// Minimizes `f` over `τ ∈ [lo, hi]`: log-spaced scan then golden section.
fn search_tau(lo: f64, hi: f64, scan: usize, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let pts: Vec<f64> = (0..scan)
        .map(|i| llo + (lhi - llo) * i as f64 / (scan - 1) as f64)
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&l| f(l.exp())).collect();
    let best = (0..scan)
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .expect("scan is non-empty");
    let mut a = pts[best.saturating_sub(1)];
    let mut b = pts[(best + 1).min(scan - 1)];
    let (mut best_l, mut best_v) = (pts[best], vals[best]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    for _ in 0..200 {
        if (b - a).abs() < 1e-11 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    for (l, v) in [(c, fc), (d, fd)] {
        if v < best_v {
            best_l = l;
            best_v = v;
        }
    }
    (best_l.exp(), best_v)
}

fn no_variation(s: &Scenario, threshold: f64) -> bool {
    s.rates
        .iter()
        .all(|r| variation_events(r, threshold).is_empty())
}

struct Fitted {
    tau: Vec<f64>,
    gamma: Vec<f64>,
    f: Vec<Vec<f64>>,
    g: Option<Vec<Vec<f64>>>,
    p_init: Vec<f64>,
    per_well: Vec<f64>,
    trace: Vec<f64>,
    evaluations: usize,
}

fn push_trace(trace: &mut Vec<f64>, v: f64) {
    let best = trace.last().map_or(v, |l| l.min(v));
    trace.push(best);
}

fn fit_rate_modes(data: &[ProducerData], opt: &CrmFitOptions, tau_hi: f64) -> Result<Fitted> {
    let np = data.len();
    let ni = data.first().map_or(0, |d| d.f_inj.len());
    let mut evals = 0usize;
    let mut trace = Vec::new();

    // Independent producers first.
    let indep: Vec<Result<(f64, DVector<f64>, f64, usize)>> = data
        .par_iter()
        .map(|pd| {
            let mut count = 0;
            let mut fail = None;
            let (tau, _) = search_tau(opt.tau_min, tau_hi, opt.scan_points, |tau| {
                count += 1;
                let b = rate_block(pd, tau, opt.mode);
                match solve_rate_joint(&[&b], ni, false, false) {
                    Ok((_, v)) => v,
                    Err(e) => {
                        fail = Some(e);
                        f64::INFINITY
                    }
                }
            });
            if let Some(e) = fail {
                return Err(e);
            }
            let b = rate_block(pd, tau, opt.mode);
            let (x, v) = solve_rate_joint(&[&b], ni, false, false)?;
            Ok((tau, x[0].clone(), v, count))
        })
        .collect();
    let mut tau = Vec::with_capacity(np);
    let mut xs = Vec::with_capacity(np);
    for r in indep {
        let (t, x, _, c) = r?;
        evals += c;
        tau.push(t);
        xs.push(x);
    }
    let mut blocks: Vec<Block> = data.iter().zip(&tau).map(|(pd, &t)| rate_block(pd, t, opt.mode)).collect();
    let total = |blocks: &[Block], xs: &[DVector<f64>]| -> f64 {
        blocks.iter().zip(xs).map(|(b, x)| sse(b, x)).sum()
    };
    push_trace(&mut trace, total(&blocks, &xs));

    let column_violation = (0..ni).any(|m| xs.iter().map(|x| x[1 + m]).sum::<f64>() > 1.0 + 1e-12);
    if opt.strict_allocation || column_violation {
        let refs: Vec<&Block> = blocks.iter().collect();
        let (x, mut obj) = solve_rate_joint(&refs, ni, true, opt.strict_allocation)?;
        xs = x;
        push_trace(&mut trace, obj);
        for _ in 0..opt.rounds {
            let before = obj;
            for n in 0..np {
                let (t, _) = search_tau(opt.tau_min, tau_hi, opt.scan_points, |t| {
                    evals += 1;
                    let trial = rate_block(&data[n], t, opt.mode);
                    let refs: Vec<&Block> = blocks
                        .iter()
                        .enumerate()
                        .map(|(k, b)| if k == n { &trial } else { b })
                        .collect();
                    solve_rate_joint(&refs, ni, true, opt.strict_allocation)
                        .map_or(f64::INFINITY, |(_, v)| v)
                });
                let trial = rate_block(&data[n], t, opt.mode);
                let refs: Vec<&Block> = blocks
                    .iter()
                    .enumerate()
                    .map(|(k, b)| if k == n { &trial } else { b })
                    .collect();
                let (x, v) = solve_rate_joint(&refs, ni, true, opt.strict_allocation)?;
                if v <= obj {
                    obj = v;
                    xs = x;
                    tau[n] = t;
                    blocks[n] = trial;
                }
            }
            push_trace(&mut trace, obj);
            if before - obj <= 1e-12 * before.abs() {
                break;
            }
        }
    }
    Ok(Fitted {
        gamma: xs.iter().map(|x| x[0]).collect(),
        f: xs.iter().map(|x| x.iter().skip(1).copied().collect()).collect(),
        g: None,
        p_init: data.iter().map(|d| d.p0.unwrap_or(f64::NAN)).collect(),
        per_well: blocks.iter().zip(&xs).map(|(b, x)| sse(b, x)).collect(),
        tau,
        trace,
        evaluations: evals,
    })
}

/// Per-producer pressure fit with `(p_init?, b, c, d)` free.
fn pressure_single(pd: &ProducerData, tau: f64, ni: usize, interference: bool) -> Result<(DVector<f64>, f64)> {
    let block = pressure_block(pd, tau, interference, None);
    let nv = block.a.ncols();
    let off = usize::from(pd.p0.is_none());
    let mut p = LsqProblem::new(block.a.clone(), block.rhs.clone());
    let bi = off;
    p.lower(bi, B_FLOOR);
    p.x0[bi] = 1.0;
    for j in bi + 1..nv {
        p.lower(j, 0.0);
        p.ineq.push((unit(nv, &[(j, 1.0), (bi, -1.0)]), 0.0));
    }
    if ni > 1 {
        let mut entries: Vec<(usize, f64)> = (0..ni).map(|m| (bi + 1 + m, 1.0)).collect();
        entries.push((bi, -1.0));
        p.ineq.push((unit(nv, &entries), 0.0));
    }
    let x = solve_lsq(&p)?;
    let v = sse(&block, &x);
    Ok((x, v))
}

/// Joint pressure fit over `(p_init?, f)` with `b`, `g` held.
fn pressure_joint_f(
    data: &[ProducerData],
    tau: &[f64],
    b: &[f64],
    g: &[Vec<f64>],
    ni: usize,
    strict: bool,
    p_init: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    let np = data.len();
    let widths: Vec<usize> = data.iter().map(|d| usize::from(d.p0.is_none()) + ni).collect();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let nv: usize = widths.iter().sum();
    let nrows: usize = data.iter().map(|d| d.p_obs.len()).sum();
    let mut a = DMatrix::zeros(nrows, nv);
    let mut rhs = DVector::zeros(nrows);
    let mut r = 0;
    for (n, pd) in data.iter().enumerate() {
        let free_p = pd.p0.is_none();
        for o in &pd.p_obs {
            let own = tau[n] * o.rate_before + o.own_cum;
            let inter: f64 = g[n].iter().zip(&o.other_cum).map(|(g, q)| g * q).sum();
            let mut j = offsets[n];
            if free_p {
                a[(r, j)] = o.sw;
                j += 1;
            }
            for m in 0..ni {
                a[(r, j + m)] = o.sw * b[n] * o.inj_cum[m];
            }
            rhs[r] = o.sw * (o.p - pd.p0.unwrap_or(0.0) + b[n] * (own + inter));
            r += 1;
        }
    }
    let mut p = LsqProblem::new(a, rhs);
    for n in 0..np {
        let fo = offsets[n] + usize::from(data[n].p0.is_none());
        if data[n].p0.is_none() {
            p.x0[offsets[n]] = p_init[n];
        }
        for m in 0..ni {
            p.lower(fo + m, 0.0);
            p.upper(fo + m, 1.0);
            if strict {
                p.x0[fo + m] = 1.0 / np as f64;
            }
        }
        if ni > 1 {
            let entries: Vec<(usize, f64)> = (0..ni).map(|m| (fo + m, 1.0)).collect();
            p.ineq.push((unit(nv, &entries), 1.0));
        }
    }
    for m in 0..ni {
        let entries: Vec<(usize, f64)> = (0..np)
            .map(|n| (offsets[n] + usize::from(data[n].p0.is_none()) + m, 1.0))
            .collect();
        if strict {
            p.eq.push((unit(nv, &entries), 1.0));
        } else {
            p.ineq.push((unit(nv, &entries), 1.0));
        }
    }
    let x = solve_lsq(&p)?;
    let obj = (&p.a * &x - &p.b).norm_squared();
    let mut f = Vec::with_capacity(np);
    let mut pi = Vec::with_capacity(np);
    for n in 0..np {
        let mut j = offsets[n];
        if data[n].p0.is_none() {
            pi.push(x[j]);
            j += 1;
        } else {
            pi.push(data[n].p0.unwrap());
        }
        f.push((0..ni).map(|m| x[j + m]).collect());
    }
    Ok((f, pi, obj))
}

fn fit_pressure_mode(data: &[ProducerData], opt: &CrmFitOptions, tau_hi: f64) -> Result<Fitted> {
    let np = data.len();
    let ni = data.first().map_or(0, |d| d.f_inj.len());
    let mut evals = 0usize;
    let mut trace = Vec::new();

    let indep: Vec<Result<(f64, DVector<f64>, f64, usize)>> = data
        .par_iter()
        .map(|pd| {
            let mut count = 0;
            let (tau, _) = search_tau(opt.tau_min, tau_hi, opt.scan_points, |tau| {
                count += 1;
                pressure_single(pd, tau, ni, opt.interference).map_or(f64::INFINITY, |(_, v)| v)
            });
            let (x, v) = pressure_single(pd, tau, ni, opt.interference)?;
            Ok((tau, x, v, count))
        })
        .collect();
    let mut tau = Vec::with_capacity(np);
    let mut b = Vec::with_capacity(np);
    let mut f = Vec::with_capacity(np);
    let mut g = Vec::with_capacity(np);
    let mut p_init = Vec::with_capacity(np);
    let mut per_well = Vec::with_capacity(np);
    for (n, r) in indep.into_iter().enumerate() {
        let (t, x, v, c) = r?;
        evals += c;
        let off = usize::from(data[n].p0.is_none());
        let bn = x[off];
        tau.push(t);
        b.push(bn);
        p_init.push(if off == 1 { x[0] } else { data[n].p0.unwrap() });
        f.push((0..ni).map(|m| (x[off + 1 + m] / bn).min(1.0)).collect::<Vec<f64>>());
        g.push(
            (off + 1 + ni..x.len())
                .map(|j| (x[j] / bn).min(1.0))
                .collect::<Vec<f64>>(),
        );
        per_well.push(v);
    }
    let mut obj: f64 = per_well.iter().sum();
    push_trace(&mut trace, obj);

    let column_violation = (0..ni).any(|m| f.iter().map(|r| r[m]).sum::<f64>() > 1.0 + 1e-12);
    if opt.strict_allocation || column_violation {
        for _ in 0..opt.rounds.max(1) {
            let before = obj;
            let (nf, np_init, _) = pressure_joint_f(data, &tau, &b, &g, ni, opt.strict_allocation, &p_init)?;
            f = nf;
            p_init = np_init;
            for n in 0..np {
                let held_f = f[n].clone();
                let held_g = g[n].clone();
                let solve = |t: f64| -> Result<(DVector<f64>, f64)> {
                    let block = pressure_block(&data[n], t, opt.interference, Some((&held_f, &held_g)));
                    let off = usize::from(data[n].p0.is_none());
                    let mut p = LsqProblem::new(block.a.clone(), block.rhs.clone());
                    p.lower(off, B_FLOOR);
                    p.x0[off] = 1.0;
                    let x = solve_lsq(&p)?;
                    let v = sse(&block, &x);
                    Ok((x, v))
                };
                let (t, _) = search_tau(opt.tau_min, tau_hi, opt.scan_points, |t| {
                    evals += 1;
                    solve(t).map_or(f64::INFINITY, |(_, v)| v)
                });
                let (x, v) = solve(t)?;
                let off = usize::from(data[n].p0.is_none());
                tau[n] = t;
                b[n] = x[off];
                if off == 1 {
                    p_init[n] = x[0];
                }
                per_well[n] = v;
            }
            obj = per_well.iter().sum();
            push_trace(&mut trace, obj);
            if (before - obj).abs() <= 1e-12 * before.abs() {
                break;
            }
        }
    }
    Ok(Fitted {
        gamma: b.iter().map(|b| 1.0 / b).collect(),
        f,
        g: opt.interference.then_some(g),
        p_init,
        per_well,
        tau,
        trace,
        evaluations: evals,
    })
}

/// Fits a CRM to the training scenario. Returns no model when no well's rate varies.
pub fn crm_fit(training: &Scenario, opt: &CrmFitOptions) -> Result<(Option<CrmModel>, FitReport)> {
    let started = Instant::now();
    opt.validate()?;
    training.validate()?;
    let prods = training.producers();
    let injs = training.injectors();
    if prods.is_empty() {
        return Err(Error::InvalidScenario("no producers to fit".into()));
    }
    if no_variation(training, opt.variation_threshold) {
        let mut report = FitReport::empty(FitStatus::NoVariation);
        report.notes.push("no rate variation in any well".into());
        report.wall_time = started.elapsed();
        return Ok((None, report));
    }
    if opt.strict_allocation && injs.len() > prods.len() {
        return Err(Error::InfeasibleAllocation(format!(
            "{} injectors cannot each be fully allocated to {} producers with row sums <= 1",
            injs.len(),
            prods.len()
        )));
    }
    let end = training.end_time();
    if !(end > 0.0) {
        return Err(Error::InvalidScenario("history has zero length".into()));
    }
    let tau_hi = opt.tau_max_factor * end;
    let data = prepare(training, &prods, &injs, end);

    let fitted = if opt.mode == CrmFitMode::Pressure {
        if data.iter().all(|d| d.p_obs.is_empty()) {
            return Err(Error::EmptyPressureData);
        }
        fit_pressure_mode(&data, opt, tau_hi)?
    } else {
        if data.iter().all(|d| d.rate_obs.is_empty()) {
            return Err(Error::InvalidScenario("no producer rate records in the window".into()));
        }
        fit_rate_modes(&data, opt, tau_hi)?
    };

    let producers: Vec<CrmProducer> = data
        .iter()
        .enumerate()
        .map(|(n, pd)| CrmProducer {
            id: pd.id.clone(),
            tau_days: fitted.tau[n],
            gamma_m3_per_bar: fitted.gamma[n],
        })
        .collect();
    let injectors: Vec<WellId> = injs.iter().map(|&m| training.wells[m].id.clone()).collect();
    let interference = fitted.g.as_ref().map(|g| {
        (0..data.len())
            .map(|n| {
                let mut row = vec![0.0; data.len()];
                let others = (0..data.len()).filter(|&k| k != n);
                for (k, v) in others.zip(&g[n]) {
                    row[k] = *v;
                }
                row
            })
            .collect()
    });
    let model = CrmModel {
        producers,
        injectors,
        connectivity: fitted.f.clone(),
        interference,
    };

    let mut report = FitReport::empty(FitStatus::Converged);
    report.objective_trace = fitted.trace.clone();
    report.final_objective = fitted.per_well.iter().sum();
    report.per_well_objective = data
        .iter()
        .zip(&fitted.per_well)
        .map(|(d, v)| (d.id.to_string(), *v))
        .collect::<BTreeMap<_, _>>();
    report.evaluations = fitted.evaluations;
    if opt.mode == CrmFitMode::Pressure {
        report.initial_pressures = data
            .iter()
            .zip(&fitted.p_init)
            .map(|(d, p)| (d.id.to_string(), *p))
            .collect();
    }
    let (pred, act) = fill_residuals(&mut report, &data, &model, &fitted, opt);
    report.set_metrics(&pred, &act);
    let n_obs: usize = data
        .iter()
        .map(|d| match opt.mode {
            CrmFitMode::Pressure => d.p_obs.len(),
            _ => d.rate_obs.len(),
        })
        .sum();
    let n_par = data.len() * (2 + injs.len());
    if n_obs < n_par {
        report.status = FitStatus::IllPosed;
        report.notes.push(format!("{n_obs} observations for {n_par} parameters"));
    }
    let audit = model.audit(opt.strict_allocation);
    if !audit.ok {
        report.notes.extend(audit.violations);
    }
    report.wall_time = started.elapsed();
    Ok((Some(model), report))
}

fn fill_residuals(
    report: &mut FitReport,
    data: &[ProducerData],
    model: &CrmModel,
    fitted: &Fitted,
    opt: &CrmFitOptions,
) -> (Vec<f64>, Vec<f64>) {
    let mut pred = Vec::new();
    let mut act = Vec::new();
    for (n, pd) in data.iter().enumerate() {
        let p = &model.producers[n];
        let mut times = Vec::new();
        let mut res = Vec::new();
        match opt.mode {
            CrmFitMode::Pressure => {
                for o in &pd.p_obs {
                    let own = p.tau_days * o.rate_before + o.own_cum;
                    let support: f64 = model.connectivity[n].iter().zip(&o.inj_cum).map(|(f, q)| f * q).sum();
                    let inter: f64 = fitted.g.as_ref().map_or(0.0, |g| {
                        g[n].iter().zip(&o.other_cum).map(|(g, q)| g * q).sum()
                    });
                    let model_p = fitted.p_init[n] - (own - support + inter) / p.gamma_m3_per_bar;
                    times.push(o.time);
                    res.push(model_p - o.p);
                    pred.push(model_p);
                    act.push(o.p);
                }
            }
            _ => {
                let consts = vec![p.tau_days; pd.knots.len()];
                let mut cum = response(&pd.knots, &consts, p.tau_days);
                for v in cum.iter_mut() {
                    *v *= pd.q0;
                }
                let add = |cum: &mut Vec<f64>, forcing: &[f64], coef: f64| {
                    for (c, r) in cum.iter_mut().zip(response(&pd.knots, forcing, p.tau_days)) {
                        *c += coef * r;
                    }
                };
                add(&mut cum, &pd.f_gamma, p.gamma_m3_per_bar);
                for (m, fm) in pd.f_inj.iter().enumerate() {
                    add(&mut cum, fm, model.connectivity[n][m]);
                }
                if opt.mode == CrmFitMode::Icrm {
                    for &(k, q) in &pd.cum_obs {
                        times.push(pd.knots[k]);
                        res.push(cum[k] - q);
                        pred.push(cum[k]);
                        act.push(q);
                    }
                } else {
                    for &(a, b, q) in &pd.rate_obs {
                        let mean = (cum[b] - cum[a]) / (pd.knots[b] - pd.knots[a]);
                        times.push(pd.knots[a]);
                        res.push(mean - q);
                        pred.push(mean);
                        act.push(q);
                    }
                }
            }
        }
        report.residuals.push(WellResiduals {
            well: pd.id.to_string(),
            times,
            residuals: res,
        });
    }
    (pred, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::{crm_cumulative_production, crm_simulate_pressure};
    use crate::well_data::{PressureSeries, Well, WellRole};

    fn id(s: &str) -> WellId {
        WellId::new(s).unwrap()
    }

    /// One producer, one injector, daily BHP, interval-mean rates from the true model.
    fn pair_scenario(tau: f64, gamma: f64, f: f64) -> Scenario {
        let truth = CrmModel::new(
            vec![CrmProducer {
                id: id("P1"),
                tau_days: tau,
                gamma_m3_per_bar: gamma,
            }],
            vec![id("I1")],
            vec![vec![f]],
        )
        .unwrap();
        let inj = RateHistory::from_pairs(&[(0.0, -100.0), (40.0, -250.0), (90.0, -60.0), (140.0, -180.0)]);
        let bhp_pairs: Vec<(f64, f64)> = (0..=200)
            .map(|k| {
                let t = k as f64;
                (t, 150.0 - 10.0 * (t / 25.0).sin())
            })
            .collect();
        let bhp = PressureSeries::from_pairs(&bhp_pairs);
        let times: Vec<f64> = (0..=200).map(|k| k as f64).collect();
        // The fitter takes the first recorded rate as the initial rate; pick the q0 that
        // reproduces itself as the first interval mean (the mean is affine in q0).
        let first = |q0: f64| {
            let c = crm_cumulative_production(&truth, &[inj.clone()], &[bhp.clone()], &[q0], &times[..2]).unwrap();
            c[0][1]
        };
        let (m0, m1) = (first(0.0), first(1.0));
        let q0 = m0 / (1.0 - (m1 - m0));
        let cum = crm_cumulative_production(&truth, &[inj.clone()], &[bhp.clone()], &[q0], &times).unwrap();
        let steps: Vec<(f64, f64)> = (0..200).map(|k| (k as f64, cum[0][k + 1] - cum[0][k])).collect();
        Scenario::new(
            vec![
                Well { id: id("P1"), role: WellRole::Producer },
                Well { id: id("I1"), role: WellRole::Injector },
            ],
            vec![RateHistory::from_pairs(&steps), inj],
            vec![bhp, PressureSeries::empty()],
            vec![None, None],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn rate_mode_recovers_pair() {
        let s = pair_scenario(8.0, 40.0, 0.7);
        let (m, r) = crm_fit(&s, &CrmFitOptions::default()).unwrap();
        let m = m.unwrap();
        let p = &m.producers[0];
        assert!((p.tau_days / 8.0 - 1.0).abs() < 1e-3, "{p:?} {r:?}");
        assert!((p.gamma_m3_per_bar / 40.0 - 1.0).abs() < 1e-3);
        assert!((m.connectivity[0][0] - 0.7).abs() < 1e-3);
        assert!(m.audit(false).ok);
    }

    #[test]
    fn strict_projection_caps_at_one() {
        // Data generated with a 1.3 support fraction cannot be matched inside the constraints.
        let s = pair_scenario(8.0, 40.0, 1.0);
        let scaled = {
            let mut s = s.clone();
            s.rates[1] = s.rates[1].scaled(1.0 / 1.3);
            s
        };
        let opt = CrmFitOptions {
            strict_allocation: true,
            ..Default::default()
        };
        let (m, _) = crm_fit(&scaled, &opt).unwrap();
        let m = m.unwrap();
        assert!((m.connectivity[0][0] - 1.0).abs() < 1e-9);
        assert!(m.audit(true).ok);
    }

    #[test]
    fn pressure_mode_recovers_two_producers() {
        let truth = CrmModel::new(
            vec![
                CrmProducer { id: id("P1"), tau_days: 5.0, gamma_m3_per_bar: 30.0 },
                CrmProducer { id: id("P2"), tau_days: 12.0, gamma_m3_per_bar: 55.0 },
            ],
            vec![id("I1")],
            vec![vec![0.6], vec![0.3]],
        )
        .unwrap();
        let prod = vec![
            RateHistory::from_pairs(&[(0.0, 80.0), (30.0, 140.0), (75.0, 60.0), (120.0, 110.0)]),
            RateHistory::from_pairs(&[(0.0, 50.0), (50.0, 20.0), (100.0, 90.0), (160.0, 70.0)]),
        ];
        let inj = RateHistory::from_pairs(&[(0.0, -120.0), (60.0, -200.0), (140.0, -90.0)]);
        let times: Vec<f64> = (1..=400).map(|k| k as f64 * 0.5).collect();
        let p = crm_simulate_pressure(&truth, &prod, &[inj.clone()], &[200.0, 190.0], &times).unwrap();
        let s = Scenario::new(
            vec![
                Well { id: id("P1"), role: WellRole::Producer },
                Well { id: id("P2"), role: WellRole::Producer },
                Well { id: id("I1"), role: WellRole::Injector },
            ],
            vec![prod[0].clone(), prod[1].clone(), inj],
            vec![p[0].clone(), p[1].clone(), PressureSeries::empty()],
            vec![None, None, None],
            vec![],
        )
        .unwrap();
        let opt = CrmFitOptions { mode: CrmFitMode::Pressure, ..Default::default() };
        let (m, r) = crm_fit(&s, &opt).unwrap();
        let m = m.unwrap();
        for (fit, want) in m.producers.iter().zip(&truth.producers) {
            assert!((fit.tau_days / want.tau_days - 1.0).abs() < 1e-4, "{fit:?}");
            assert!((fit.gamma_m3_per_bar / want.gamma_m3_per_bar - 1.0).abs() < 1e-4, "{fit:?}");
        }
        assert!((m.connectivity[0][0] - 0.6).abs() < 1e-4);
        assert!((m.connectivity[1][0] - 0.3).abs() < 1e-4);
        assert!(r.final_objective < 1e-8, "{}", r.final_objective);
    }

    #[test]
    fn constant_rates_report_no_variation() {
        let s = Scenario::new(
            vec![Well { id: id("P1"), role: WellRole::Producer }],
            vec![RateHistory::from_pairs(&[(0.0, 100.0), (10.0, 100.0)])],
            vec![PressureSeries::from_pairs(&[(1.0, 150.0), (20.0, 140.0)])],
            vec![None],
            vec![],
        )
        .unwrap();
        let (m, r) = crm_fit(&s, &CrmFitOptions::default()).unwrap();
        assert!(m.is_none());
        assert_eq!(r.status, FitStatus::NoVariation);
    }
}
