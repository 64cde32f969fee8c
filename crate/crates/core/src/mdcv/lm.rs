//! Projected Levenberg–Marquardt (damped Gauss–Newton).

use nalgebra::{DMatrix, DVector};

pub struct LmResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian at the final point.
    pub jacobian: DMatrix<f64>,
}

/// Stops when the relative decrease or the relative step falls below `tolerance`,
/// or when the objective reaches `floor`.
pub fn minimize<J, P>(x0: DVector<f64>, iterations: usize, tolerance: f64, floor: f64, jac: J, project: P) -> LmResult
where
    J: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
    P: Fn(&mut DVector<f64>),
{
    let mut x = x0;
    project(&mut x);
    let (mut r, mut j) = jac(&x);
    let mut f = r.norm_squared();
    let mut trace = Vec::new();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut it = 0;
    if f <= floor {
        converged = true;
    }
    while it < iterations && !converged {
        it += 1;
        let h = j.transpose() * &j;
        let g = j.transpose() * &r;
        let dmax = h.diagonal().max().max(f64::MIN_POSITIVE);
        let mut a = h.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu * (h[(i, i)] + 1e-9 * dmax);
        }
        // Coordinates the projection moves are pinned at their projected step and the
        // remaining ones re-solved, so bound-active parameters do not spoil the step.
        let n = x.len();
        let mut pinned = vec![false; n];
        let mut step = DVector::zeros(n);
        let mut trial = x.clone();
        let mut solved = false;
        for _ in 0..4 {
            let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
            let mut rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
            for (fi, &i) in free.iter().enumerate() {
                for c in (0..n).filter(|&c| pinned[c]) {
                    rhs[fi] -= a[(i, c)] * step[c];
                }
            }
            let sub = a.select_rows(&free).select_columns(&free);
            let Some(chol) = sub.cholesky() else {
                break;
            };
            let s_free = chol.solve(&rhs);
            for (fi, &i) in free.iter().enumerate() {
                step[i] = s_free[fi];
            }
            trial = &x + &step;
            project(&mut trial);
            solved = true;
            let mut changed = false;
            for i in 0..n {
                if !pinned[i] && trial[i] != x[i] + step[i] {
                    pinned[i] = true;
                    step[i] = trial[i] - x[i];
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !solved {
            mu *= 10.0;
            continue;
        }
        let (rt, jt) = jac(&trial);
        let ft = rt.norm_squared();
        if ft.is_finite() && ft < f {
            let rel = (f - ft) / f.max(f64::MIN_POSITIVE);
            let moved = step.norm() / (x.norm() + tolerance);
            x = trial;
            r = rt;
            j = jt;
            f = ft;
            trace.push(f);
            mu = (mu / 3.0).max(1e-12);
            if rel < tolerance || moved < tolerance || f <= floor {
                converged = true;
                break;
            }
        } else {
            mu *= 4.0;
            if mu > 1e14 {
                // No descent left at any damping: a stationary point for this tolerance.
                converged = true;
                break;
            }
        }
    }
    LmResult {
        x,
        value: f,
        trace,
        iterations: it,
        converged,
        jacobian: j,
    }
}
