//! Parameter layout, residuals and the analytic Jacobian of the deconvolution objective.

use nalgebra::{DMatrix, DVector};

use super::MdcvOptions;
use crate::convolution::DeconvolutionModel;
use crate::error::{Error, Result};
use crate::utr::{Utr, UtrMatrix};
use crate::well_data::Scenario;

const Z_MIN: f64 = -80.0;
const Z_MAX: f64 = 30.0;
/// Node floor below the coarse lower bound; derivatives under it cannot move the fit.
const Z_FLOOR_MARGIN: f64 = 6.907755278982137;

struct Row {
    well: usize,
    times: Vec<f64>,
    pressures: Vec<f64>,
    sw: Vec<f64>,
    /// Known initial pressure, or the parameter index when free.
    p0: Result<f64, usize>,
    jump: Option<usize>,
    /// Residual offset of the row's first sample.
    offset: usize,
}

struct Pair {
    row: usize,
    col: usize,
    diag: bool,
    z_off: usize,
    z_min: f64,
    lags: Vec<f64>,
    /// `(sample, step, lag)` for every step starting before the sample.
    entries: Vec<(u32, u32, u32)>,
}

/// Cumulative reference record resolved to well indices.
struct CumRef {
    wells: Vec<usize>,
    start: f64,
    end: f64,
    volume: f64,
}

/// The deconvolution least-squares problem over one scenario.
///
/// Parameter vector: free initial pressures, diagonal jumps, `K` log-derivative
/// nodes per active pair, then per-step rate factors when corrections are on.
pub struct MdcvProblem {
    n_wells: usize,
    wells: Vec<crate::well_data::WellId>,
    nodes: Vec<f64>,
    rows: Vec<Row>,
    pairs: Vec<Pair>,
    step_times: Vec<Vec<f64>>,
    recorded: Vec<Vec<f64>>,
    /// `corr[m][k]`: parameter index of the factor on step `k` of well `m`.
    corr: Vec<Vec<Option<usize>>>,
    corr_list: Vec<(usize, usize)>,
    band: (f64, f64),
    cum: Vec<CumRef>,
    sw_rate: f64,
    sw_curv: f64,
    sw_cum: f64,
    n_params: usize,
    n_pressure: usize,
    p0_count: usize,
    jump_count: usize,
    coarse_bounds: Vec<(f64, f64)>,
    coarse_start: Vec<f64>,
}

fn node_grid(s: &Scenario, rows: &[usize], per_decade: f64) -> Vec<f64> {
    let mut spacing = f64::INFINITY;
    for &n in rows {
        let t = s.pressures[n].times();
        for w in t.windows(2) {
            spacing = spacing.min(w[1] - w[0]);
        }
    }
    if !spacing.is_finite() {
        for r in &s.rates {
            let t: Vec<f64> = r.times().collect();
            for w in t.windows(2) {
                spacing = spacing.min(w[1] - w[0]);
            }
        }
    }
    let t1 = if spacing.is_finite() && spacing > 0.0 { spacing } else { 1.0 };
    let mut tk = s.end_time();
    if !(tk > t1) {
        tk = 10.0 * t1;
    }
    let decades = (tk / t1).log10();
    let k = ((per_decade * decades).ceil() as usize + 1).max(2);
    (0..k)
        .map(|i| t1 * (tk / t1).powf(i as f64 / (k - 1) as f64))
        .collect()
}

impl MdcvProblem {
    pub fn new(s: &Scenario, opt: &MdcvOptions) -> Result<Self> {
        s.validate()?;
        let nw = s.len();
        let row_wells: Vec<usize> = (0..nw)
            .filter(|&n| s.pressures[n].samples().iter().any(|x| x.weight > 0.0))
            .collect();
        if row_wells.is_empty() {
            return Err(Error::EmptyPressureData);
        }
        let mut inactive = Vec::new();
        for (a, b) in &opt.inactive_pairs {
            let ia = s.index_of(a).ok_or_else(|| Error::InvalidOptions(format!("unknown well `{a}`")))?;
            let ib = s.index_of(b).ok_or_else(|| Error::InvalidOptions(format!("unknown well `{b}`")))?;
            inactive.push((ia, ib));
        }
        let active_col: Vec<bool> = s.rates.iter().map(|r| !r.is_all_zero()).collect();
        let nodes = node_grid(s, &row_wells, opt.nodes_per_decade);
        let k = nodes.len();
        let step_times: Vec<Vec<f64>> = s.rates.iter().map(|r| r.times().collect()).collect();
        let recorded: Vec<Vec<f64>> = s
            .rates
            .iter()
            .map(|r| r.steps().iter().map(|x| x.rate).collect())
            .collect();
        let end = s.end_time();
        let history = if end > 0.0 { end } else { 1.0 };

        let mut idx = 0usize;
        let mut rows = Vec::new();
        let mut coarse_bounds = Vec::new();
        let mut coarse_start = Vec::new();
        let mut offset = 0;
        let mut spans = Vec::new();
        for &n in &row_wells {
            let samples: Vec<_> = s.pressures[n].samples().iter().filter(|x| x.weight > 0.0).collect();
            let times: Vec<f64> = samples.iter().map(|x| x.time).collect();
            let pressures: Vec<f64> = samples.iter().map(|x| x.pressure).collect();
            let sw = samples.iter().map(|x| x.weight.sqrt()).collect();
            let pmin = pressures.iter().copied().fold(f64::INFINITY, f64::min);
            let pmax = pressures.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = (pmax - pmin).max(1.0);
            spans.push(span);
            let p0 = match s.p0[n] {
                Some(p) => Ok(p),
                None => {
                    coarse_bounds.push((pmin, pmin + 2.0 * span));
                    coarse_start.push(pmax.min(pmin + 2.0 * span));
                    idx += 1;
                    Err(idx - 1)
                }
            };
            rows.push(Row {
                well: n,
                times,
                pressures,
                sw,
                p0,
                jump: None,
                offset,
            });
            offset += samples.len();
        }
        let p0_count = idx;
        for (ri, row) in rows.iter_mut().enumerate() {
            let n = row.well;
            if active_col[n] && !inactive.contains(&(n, n)) {
                row.jump = Some(idx);
                idx += 1;
                coarse_bounds.push((0.0, 2.0 * spans[ri] / s.rates[n].max_abs_rate()));
                coarse_start.push(0.0);
            }
        }
        let jump_count = idx - p0_count;
        let t1 = nodes[0];
        let mut pairs = Vec::new();
        for (ri, row) in rows.iter().enumerate() {
            for m in 0..nw {
                if !active_col[m] || inactive.contains(&(row.well, m)) {
                    continue;
                }
                let mut lags: Vec<f64> = Vec::new();
                for &t in &row.times {
                    for &tk in &step_times[m] {
                        if tk >= t {
                            break;
                        }
                        lags.push(t - tk);
                    }
                }
                lags.sort_by(f64::total_cmp);
                lags.dedup();
                let mut entries = Vec::new();
                for (a, &t) in row.times.iter().enumerate() {
                    for (kk, &tk) in step_times[m].iter().enumerate() {
                        if tk >= t {
                            break;
                        }
                        let lag = t - tk;
                        let li = lags.partition_point(|&l| l < lag);
                        entries.push((a as u32, kk as u32, li as u32));
                    }
                }
                let qmax = s.rates[m].max_abs_rate();
                let lo = (1e-5 * spans[ri] / (qmax * history)).ln();
                let hi = (10.0 * spans[ri] / (qmax * t1)).ln();
                let z_min = (lo - Z_FLOOR_MARGIN).max(Z_MIN);
                coarse_bounds.push((lo, hi));
                coarse_start.push(0.5 * (lo + hi));
                pairs.push(Pair {
                    row: ri,
                    col: m,
                    diag: m == row.well,
                    z_off: 0,
                    z_min,
                    lags,
                    entries,
                });
            }
        }
        for p in pairs.iter_mut() {
            p.z_off = idx;
            idx += k;
        }
        let mut corr = vec![Vec::new(); nw];
        let mut corr_list = Vec::new();
        if opt.correct_rates {
            let used: Vec<bool> = (0..nw).map(|m| pairs.iter().any(|p| p.col == m)).collect();
            for m in 0..nw {
                corr[m] = recorded[m]
                    .iter()
                    .enumerate()
                    .map(|(kk, &q)| {
                        (used[m] && q != 0.0).then(|| {
                            corr_list.push((m, kk));
                            idx += 1;
                            idx - 1
                        })
                    })
                    .collect();
            }
        }
        let cum = s
            .cumulative_reference
            .iter()
            .map(|c| {
                let wells = c
                    .wells
                    .iter()
                    .map(|w| {
                        s.index_of(w.as_str())
                            .ok_or_else(|| Error::InvalidScenario(format!("cumulative record names unknown well `{w}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CumRef {
                    wells,
                    start: c.start_day,
                    end: c.end_day,
                    volume: c.volume_m3,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MdcvProblem {
            n_wells: nw,
            wells: s.ids(),
            nodes,
            n_pressure: offset,
            rows,
            pairs,
            step_times,
            recorded,
            corr,
            corr_list,
            band: opt.correction_band,
            cum,
            sw_rate: opt.rate_weight.sqrt(),
            sw_curv: opt.lambda_curvature.sqrt(),
            sw_cum: opt.lambda_cumulative.sqrt(),
            n_params: idx,
            p0_count,
            jump_count,
            coarse_bounds,
            coarse_start,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_pressure_residuals(&self) -> usize {
        self.n_pressure
    }

    pub fn node_times(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_residuals(&self) -> usize {
        let k = self.nodes.len();
        self.n_pressure + self.corr_list.len() + self.pairs.len() * k.saturating_sub(2) + self.cum.len()
    }

    /// Bounds of the coarse vector: free `p0`, jumps, one log-derivative level per pair.
    pub fn coarse_bounds(&self) -> &[(f64, f64)] {
        &self.coarse_bounds
    }

    pub fn coarse_start(&self) -> &[f64] {
        &self.coarse_start
    }

    /// Full parameter vector with every node of a pair at its coarse level and unit factors.
    pub fn expand_coarse(&self, c: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_params);
        let head = self.p0_count + self.jump_count;
        x.rows_mut(0, head).copy_from_slice(&c[..head]);
        let k = self.nodes.len();
        for (i, p) in self.pairs.iter().enumerate() {
            x.rows_mut(p.z_off, k).fill(c[head + i]);
        }
        for &(m, kk) in &self.corr_list {
            x[self.corr[m][kk].unwrap()] = 1.0;
        }
        x
    }

    /// Clamps jumps, node values and rate factors into their admissible ranges.
    pub fn project(&self, x: &mut DVector<f64>) {
        for r in &self.rows {
            if let Some(j) = r.jump {
                x[j] = x[j].max(0.0);
            }
        }
        let k = self.nodes.len();
        for p in &self.pairs {
            for v in x.rows_mut(p.z_off, k).iter_mut() {
                *v = v.clamp(p.z_min, Z_MAX);
            }
        }
        for &(m, kk) in &self.corr_list {
            let j = self.corr[m][kk].unwrap();
            x[j] = x[j].clamp(self.band.0, self.band.1);
        }
    }

    fn factor(&self, x: &[f64], m: usize, k: usize) -> f64 {
        self.corr[m].get(k).copied().flatten().map_or(1.0, |j| x[j])
    }

    fn utr(&self, x: &[f64], p: &Pair) -> Utr {
        let k = self.nodes.len();
        let jump = if p.diag {
            self.rows[p.row].jump.map_or(0.0, |j| x[j])
        } else {
            0.0
        };
        let nodes = self
            .nodes
            .iter()
            .copied()
            .zip(x[p.z_off..p.z_off + k].iter().copied())
            .collect();
        Utr::new(jump, nodes).expect("node grid is valid")
    }

    fn increments(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut prev = 0.0;
        self.recorded[m]
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let cur = q * self.factor(x, m, k);
                let d = cur - prev;
                prev = cur;
                d
            })
            .collect()
    }

    fn overlap(&self, m: usize, k: usize, a: f64, b: f64) -> f64 {
        let lo = self.step_times[m][k].max(a);
        let hi = self.step_times[m].get(k + 1).copied().unwrap_or(f64::INFINITY).min(b);
        (hi - lo).max(0.0)
    }

    /// Weighted residual vector; the objective is its squared norm.
    pub fn residuals(&self, x: &[f64]) -> DVector<f64> {
        self.evaluate(x, false).0
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.residuals(x).norm_squared()
    }

    /// Residuals and their Jacobian.
    pub fn jacobian(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (r, j) = self.evaluate(x, true);
        (r, j.expect("requested"))
    }

    fn evaluate(&self, x: &[f64], with_jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let k = self.nodes.len();
        let nres = self.n_residuals();
        let mut r = DVector::zeros(nres);
        let mut jac = with_jac.then(|| DMatrix::zeros(nres, self.n_params));
        let dq: Vec<Vec<f64>> = (0..self.n_wells).map(|m| self.increments(x, m)).collect();

        // Model drawdown accumulated into r (as negative pressure) first.
        for p in &self.pairs {
            let row = &self.rows[p.row];
            let u = self.utr(x, p);
            let vals: Vec<f64> = p.lags.iter().map(|&l| u.eval(l)).collect();
            let grads: Option<Vec<f64>> = with_jac.then(|| {
                let mut g = vec![0.0; p.lags.len() * k];
                for (li, &l) in p.lags.iter().enumerate() {
                    u.add_smooth_gradient(l, 1.0, &mut g[li * k..(li + 1) * k]);
                }
                g
            });
            let dqm = &dq[p.col];
            for &(a, kk, li) in &p.entries {
                let (a, kk, li) = (a as usize, kk as usize, li as usize);
                let ri = row.offset + a;
                let d = dqm[kk];
                r[ri] -= d * vals[li];
                if let (Some(j), Some(g)) = (jac.as_mut(), grads.as_ref()) {
                    let sw = row.sw[a];
                    if p.diag {
                        if let Some(jj) = row.jump {
                            j[(ri, jj)] -= sw * d;
                        }
                    }
                    if d != 0.0 {
                        for (q, gv) in g[li * k..(li + 1) * k].iter().enumerate() {
                            j[(ri, p.z_off + q)] -= sw * d * gv;
                        }
                    }
                    let q_k = self.recorded[p.col][kk];
                    if let Some(c) = self.corr[p.col].get(kk).copied().flatten() {
                        j[(ri, c)] -= sw * q_k * vals[li];
                    }
                    if kk > 0 {
                        if let Some(c) = self.corr[p.col].get(kk - 1).copied().flatten() {
                            j[(ri, c)] += sw * self.recorded[p.col][kk - 1] * vals[li];
                        }
                    }
                }
            }
        }
        for row in &self.rows {
            let p0 = match row.p0 {
                Ok(p) => p,
                Err(j) => x[j],
            };
            for a in 0..row.times.len() {
                let ri = row.offset + a;
                r[ri] = row.sw[a] * (p0 + r[ri] - row.pressures[a]);
                if let (Some(jm), Err(j)) = (jac.as_mut(), row.p0) {
                    jm[(ri, j)] = row.sw[a];
                }
            }
        }
        let mut ri = self.n_pressure;
        for &(m, kk) in &self.corr_list {
            let j = self.corr[m][kk].unwrap();
            let q = self.recorded[m][kk];
            r[ri] = self.sw_rate * q * (x[j] - 1.0);
            if let Some(jm) = jac.as_mut() {
                jm[(ri, j)] = self.sw_rate * q;
            }
            ri += 1;
        }
        for p in &self.pairs {
            for i in 1..k.saturating_sub(1) {
                let z = &x[p.z_off..p.z_off + k];
                r[ri] = self.sw_curv * (z[i - 1] - 2.0 * z[i] + z[i + 1]);
                if let Some(jm) = jac.as_mut() {
                    jm[(ri, p.z_off + i - 1)] = self.sw_curv;
                    jm[(ri, p.z_off + i)] = -2.0 * self.sw_curv;
                    jm[(ri, p.z_off + i + 1)] = self.sw_curv;
                }
                ri += 1;
            }
        }
        for c in &self.cum {
            let mut vol = 0.0;
            for &m in &c.wells {
                for kk in 0..self.recorded[m].len() {
                    let w = self.recorded[m][kk].abs() * self.overlap(m, kk, c.start, c.end);
                    vol += w * self.factor(x, m, kk);
                    if let (Some(jm), Some(j)) = (jac.as_mut(), self.corr[m].get(kk).copied().flatten()) {
                        jm[(ri, j)] += self.sw_cum * w;
                    }
                }
            }
            r[ri] = self.sw_cum * (vol - c.volume);
            ri += 1;
        }
        (r, jac)
    }

    /// Builds the model a parameter vector encodes.
    pub fn decode(&self, x: &[f64]) -> DeconvolutionModel {
        let mut utrs = UtrMatrix::inactive(self.n_wells);
        for p in &self.pairs {
            utrs.set(self.rows[p.row].well, p.col, Some(self.utr(x, p)));
        }
        let mut p0 = vec![None; self.n_wells];
        for r in &self.rows {
            p0[r.well] = Some(match r.p0 {
                Ok(p) => p,
                Err(j) => x[j],
            });
        }
        let rate_corrections = (0..self.n_wells)
            .map(|m| {
                if self.corr[m].is_empty() {
                    Vec::new()
                } else {
                    (0..self.recorded[m].len()).map(|k| self.factor(x, m, k)).collect()
                }
            })
            .collect();
        DeconvolutionModel {
            wells: self.wells.clone(),
            p0,
            utrs,
            rate_corrections,
        }
    }

    /// Encodes a model whose responses use this problem's node grid and active pairs.
    pub fn encode(&self, model: &DeconvolutionModel) -> Result<DVector<f64>> {
        let k = self.nodes.len();
        let mut x = DVector::zeros(self.n_params);
        for r in &self.rows {
            if let Err(j) = r.p0 {
                x[j] = model.p0[r.well]
                    .ok_or_else(|| Error::InvalidParameter(format!("no p0 for `{}`", self.wells[r.well])))?;
            }
        }
        for p in &self.pairs {
            let n = self.rows[p.row].well;
            let u = model.utrs.get(n, p.col).ok_or_else(|| Error::MissingUtr {
                row: self.wells[n].to_string(),
                col: self.wells[p.col].to_string(),
            })?;
            if u.node_times() != self.nodes.as_slice() {
                return Err(Error::InvalidParameter("response nodes differ from the problem grid".into()));
            }
            x.rows_mut(p.z_off, k).copy_from_slice(u.z());
            if p.diag {
                if let Some(j) = self.rows[p.row].jump {
                    x[j] = u.jump();
                }
            }
        }
        for &(m, kk) in &self.corr_list {
            x[self.corr[m][kk].unwrap()] = model.rate_corrections[m].get(kk).copied().unwrap_or(1.0);
        }
        Ok(x)
    }

    /// Pressure residuals `(well, times, model − observation)` without weights.
    pub fn pressure_residuals(&self, x: &[f64]) -> Vec<(usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let r = self.residuals(x);
        self.rows
            .iter()
            .map(|row| {
                let res: Vec<f64> = (0..row.times.len())
                    .map(|a| {
                        let sw = row.sw[a];
                        r[row.offset + a] / sw
                    })
                    .collect();
                let pred = res.iter().zip(&row.pressures).map(|(e, p)| p + e).collect();
                (row.well, row.times.clone(), res, pred)
            })
            .collect()
    }

    /// Weighted pressure misfit per modeled well.
    pub fn per_well_misfit(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let r = self.residuals(x);
        self.rows
            .iter()
            .map(|row| {
                let s = (0..row.times.len()).map(|a| r[row.offset + a].powi(2)).sum();
                (row.well, s)
            })
            .collect()
    }

    /// `Σ w p²` over the pressure observations.
    pub fn weighted_data_norm(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.pressures.iter().zip(&r.sw).map(|(p, s)| (s * p).powi(2)))
            .sum()
    }

    pub fn observed_pressures(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.pressures.iter().copied()).collect()
    }
}
