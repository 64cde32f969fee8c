//! Dense linear least squares under linear constraints (primal active set).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min ‖A x − b‖²` subject to `c·x ≤ d` (inequalities) and `c·x = d` (equalities).
#[derive(Debug, Clone)]
pub struct LsqProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ineq: Vec<(DVector<f64>, f64)>,
    pub eq: Vec<(DVector<f64>, f64)>,
    /// A feasible starting point.
    pub x0: DVector<f64>,
}

impl LsqProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = a.ncols();
        LsqProblem {
            a,
            b,
            ineq: Vec::new(),
            eq: Vec::new(),
            x0: DVector::zeros(n),
        }
    }

    fn unit(&self, j: usize, sign: f64) -> DVector<f64> {
        let mut c = DVector::zeros(self.a.ncols());
        c[j] = sign;
        c
    }

    pub fn lower(&mut self, j: usize, lo: f64) {
        let c = self.unit(j, -1.0);
        self.ineq.push((c, -lo));
    }

    pub fn upper(&mut self, j: usize, hi: f64) {
        let c = self.unit(j, 1.0);
        self.ineq.push((c, hi));
    }
}

fn independent(rows: &[DVector<f64>], candidate: &DVector<f64>) -> bool {
    let n = candidate.len();
    let mut m = DMatrix::zeros(rows.len() + 1, n);
    for (i, r) in rows.iter().chain(std::iter::once(candidate)).enumerate() {
        m.set_row(i, &r.transpose());
    }
    let sv = m.svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|s| **s > 1e-10 * smax).count() == rows.len() + 1
}

pub fn solve_lsq(p: &LsqProblem) -> Result<DVector<f64>> {
    let n = p.a.ncols();
    if p.b.len() != p.a.nrows() || p.x0.len() != n {
        return Err(Error::DimensionMismatch("least-squares problem shapes disagree".into()));
    }
    // Column scaling x = D y.
    let d: Vec<f64> = (0..n)
        .map(|j| {
            let norm = p.a.column(j).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    let dvec = DVector::from_vec(d.clone());
    let mut a = p.a.clone();
    for j in 0..n {
        a.column_mut(j).scale_mut(d[j]);
    }
    let mut h = a.transpose() * &a;
    for j in 0..n {
        h[(j, j)] += 1e-12;
    }
    let g0 = -(a.transpose() * &p.b);
    let scale_row = |c: &DVector<f64>| c.component_mul(&dvec);
    let n_eq = p.eq.len();
    let cons: Vec<(DVector<f64>, f64)> = p
        .eq
        .iter()
        .chain(&p.ineq)
        .map(|(c, rhs)| (scale_row(c), *rhs))
        .collect();

    let mut x = p.x0.component_div(&dvec);
    for (i, (c, rhs)) in cons.iter().enumerate() {
        let v = c.dot(&x) - rhs;
        let tol = 1e-8 * (1.0 + rhs.abs());
        if (i < n_eq && v.abs() > tol) || v > tol {
            return Err(Error::Numerical("starting point is infeasible".into()));
        }
    }
    let mut work: Vec<usize> = Vec::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for (i, (c, rhs)) in cons.iter().enumerate() {
        let active = i < n_eq || (c.dot(&x) - rhs).abs() <= 1e-12 * (1.0 + rhs.abs());
        if active && independent(&rows, c) {
            work.push(i);
            rows.push(c.clone());
        }
    }

    // After a full unblocked step `x` minimizes over the working set; round-off in the
    // recomputed step must not keep the loop crawling.
    let mut on_minimum = false;
    for _ in 0..(50 * (n + cons.len()) + 100) {
        let k = work.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        for (r, &i) in work.iter().enumerate() {
            let c = &cons[i].0;
            for j in 0..n {
                kkt[(n + r, j)] = c[j];
                kkt[(j, n + r)] = c[j];
            }
        }
        let grad = &h * &x + &g0;
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        let sol = kkt
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular KKT system".into()))?;
        let step = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, k).into_owned();

        if on_minimum || step.norm() <= 1e-12 * (1.0 + x.norm()) {
            on_minimum = false;
            let mut worst: Option<(usize, f64)> = None;
            for (r, &i) in work.iter().enumerate() {
                if i >= n_eq && lambda[r] < -1e-12 && worst.is_none_or(|(_, l)| lambda[r] < l) {
                    worst = Some((r, lambda[r]));
                }
            }
            match worst {
                None => return Ok(x.component_mul(&dvec)),
                Some((r, _)) => {
                    work.remove(r);
                    rows.remove(r);
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (i, (c, rhs)) in cons.iter().enumerate().skip(n_eq) {
            if work.contains(&i) {
                continue;
            }
            let cp = c.dot(&step);
            if cp > 1e-14 * c.norm() * step.norm() {
                let slack = (rhs - c.dot(&x)).max(0.0);
                let t = slack / cp;
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        x += alpha * &step;
        on_minimum = blocking.is_none();
        if let Some(i) = blocking {
            if independent(&rows, &cons[i].0) {
                work.push(i);
                rows.push(cons[i].0.clone());
            }
        }
    }
    Err(Error::Numerical("active-set iteration limit reached".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_normal_equations() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let x = solve_lsq(&LsqProblem::new(a.clone(), b.clone())).unwrap();
        let exact = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
        assert!((x - exact).norm() < 1e-9);
    }

    #[test]
    fn upper_bound_projects() {
        // Best unconstrained value 1.3, capped at 1.
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = DVector::from_vec(vec![1.3, 2.6]);
        let mut p = LsqProblem::new(a, b);
        p.lower(0, 0.0);
        p.upper(0, 1.0);
        let x = solve_lsq(&p).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_constraint() {
        // Fit x ≈ (0.8, 0.8) subject to x1 + x2 ≤ 1, x ≥ 0 → (0.5, 0.5).
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![0.8, 0.8]);
        let mut p = LsqProblem::new(a, b);
        p.lower(0, 0.0);
        p.lower(1, 0.0);
        p.ineq.push((DVector::from_vec(vec![1.0, 1.0]), 1.0));
        let x = solve_lsq(&p).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-10 && (x[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn equality_constraint() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![0.9, 0.0]);
        let mut p = LsqProblem::new(a, b);
        p.lower(0, 0.0);
        p.lower(1, 0.0);
        p.eq.push((DVector::from_vec(vec![1.0, 1.0]), 1.0));
        p.x0 = DVector::from_vec(vec![0.5, 0.5]);
        let x = solve_lsq(&p).unwrap();
        assert!((x[0] - 0.95).abs() < 1e-10 && (x[1] - 0.05).abs() < 1e-10);
    }
}
