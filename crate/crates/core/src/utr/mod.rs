//! Unit-rate transient responses.
//!
//! A response is `jump·θ(t) + S(t)` where the smooth part has derivative
//! `exp(z(ln t))`, with `z` piecewise linear between nodes and held flat
//! beyond the end nodes. Every segment integrates in closed form.

mod analytic;
pub mod expint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analytic::{analytic_utr, Boundary, ReservoirParams};

/// `(e^y − 1)/y`, continuous at 0.
pub fn exprel(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 + 0.5 * y
    } else {
        y.exp_m1() / y
    }
}

/// `∫₀¹ u·e^{yu} du`.
fn exprel2(y: f64) -> f64 {
    if y.abs() < 0.5 {
        let mut sum = 0.0;
        let mut fact = 1.0;
        let mut pow = 1.0;
        for k in 0..30 {
            if k > 0 {
                fact *= k as f64;
                pow *= y;
            }
            let term = pow / (fact * (k as f64 + 2.0));
            sum += term;
            if term.abs() < 1e-18 {
                break;
            }
        }
        sum
    } else {
        (y * y.exp() - y.exp_m1()) / (y * y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UtrRaw {
    jump: f64,
    #[serde(default)]
    nodes: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtrRaw", into = "UtrRaw")]
pub struct Utr {
    jump: f64,
    t: Vec<f64>,
    z: Vec<f64>,
    sigma: Vec<f64>,
    /// `S(t_i)`.
    cum: Vec<f64>,
    /// `∂S(t_i)/∂z_j`, row-major `i * n + j`.
    cum_grad: Vec<f64>,
}

impl TryFrom<UtrRaw> for Utr {
    type Error = Error;

    fn try_from(raw: UtrRaw) -> Result<Self> {
        Utr::new(raw.jump, raw.nodes.iter().map(|n| (n[0], n[1])).collect())
    }
}

impl From<Utr> for UtrRaw {
    fn from(u: Utr) -> UtrRaw {
        UtrRaw {
            jump: u.jump,
            nodes: u.t.iter().zip(&u.z).map(|(&t, &z)| [t, z]).collect(),
        }
    }
}

impl Utr {
    pub fn new(jump: f64, nodes: Vec<(f64, f64)>) -> Result<Self> {
        if !(jump >= 0.0 && jump.is_finite()) {
            return Err(Error::InvalidParameter(format!("jump {jump} must be finite and >= 0")));
        }
        for (i, &(t, z)) in nodes.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) || z.is_nan() || z == f64::INFINITY {
                return Err(Error::InvalidParameter(format!("node ({t}, {z}) is invalid")));
            }
            if i > 0 && t <= nodes[i - 1].0 {
                return Err(Error::InvalidParameter(
                    "node times must be strictly increasing".into(),
                ));
            }
        }
        let (t, z): (Vec<f64>, Vec<f64>) = nodes.into_iter().unzip();
        let mut u = Utr {
            jump,
            sigma: t.iter().map(|x| x.ln()).collect(),
            t,
            z,
            cum: Vec::new(),
            cum_grad: Vec::new(),
        };
        u.rebuild();
        Ok(u)
    }

    pub fn zero() -> Self {
        Utr::new(0.0, Vec::new()).expect("zero response")
    }

    /// `jump·θ(t) + slope·t`.
    pub fn linear(jump: f64, slope: f64) -> Result<Self> {
        if !(slope >= 0.0 && slope.is_finite()) {
            return Err(Error::InvalidParameter(format!("slope {slope} must be finite and >= 0")));
        }
        if slope == 0.0 {
            Utr::new(jump, Vec::new())
        } else {
            Utr::new(jump, vec![(1.0, slope.ln())])
        }
    }

    fn rebuild(&mut self) {
        let n = self.t.len();
        self.cum = vec![0.0; n];
        self.cum_grad = vec![0.0; n * n];
        if n == 0 {
            return;
        }
        self.cum[0] = self.z[0].exp() * self.t[0];
        self.cum_grad[0] = self.cum[0];
        let mut seg = [0.0; 2];
        for i in 0..n - 1 {
            let x = self.sigma[i + 1] - self.sigma[i];
            self.cum[i + 1] = self.cum[i] + self.segment(i, x, Some(&mut seg));
            let (prev, next) = self.cum_grad.split_at_mut((i + 1) * n);
            next[..n].copy_from_slice(&prev[i * n..(i + 1) * n]);
            next[i] += seg[0];
            next[i + 1] += seg[1];
        }
    }

    /// Integral of the derivative over `[t_i, t_i·e^x]` within segment `i`,
    /// optionally with its gradient against `(z_i, z_{i+1})`.
    fn segment(&self, i: usize, x: f64, grad: Option<&mut [f64; 2]>) -> f64 {
        let len = self.sigma[i + 1] - self.sigma[i];
        let a = (self.z[i + 1] - self.z[i]) / len;
        let b = a + 1.0;
        let scale = self.t[i] * self.z[i].exp();
        let i0 = x * exprel(b * x);
        if let Some(g) = grad {
            let i1 = x * x * exprel2(b * x);
            g[0] = scale * (i0 - i1 / len);
            g[1] = scale * i1 / len;
        }
        scale * i0
    }

    pub fn jump(&self) -> f64 {
        self.jump
    }

    pub fn set_jump(&mut self, jump: f64) {
        self.jump = jump.max(0.0);
    }

    pub fn node_count(&self) -> usize {
        self.t.len()
    }

    pub fn nodes(&self) -> Vec<(f64, f64)> {
        self.t.iter().copied().zip(self.z.iter().copied()).collect()
    }

    pub fn node_times(&self) -> &[f64] {
        &self.t
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Replaces the log-derivative values at the existing node times.
    pub fn set_z(&mut self, z: &[f64]) {
        assert_eq!(z.len(), self.z.len(), "node count mismatch");
        self.z.copy_from_slice(z);
        self.rebuild();
    }

    pub fn is_zero(&self) -> bool {
        self.jump == 0.0 && self.z.iter().all(|z| z.exp() == 0.0)
    }

    /// Index of the last node with `t_i <= t`, or `None` below the first node.
    fn locate(&self, t: f64) -> Option<usize> {
        let idx = self.t.partition_point(|&ti| ti <= t);
        idx.checked_sub(1)
    }

    /// `p_u(t)`: zero for `t <= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.jump + self.smooth(t)
        }
    }

    /// Smooth part `S(t) = ∫₀ᵗ exp(z(ln s)) ds`.
    pub fn smooth(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= 0.0 || n == 0 {
            return 0.0;
        }
        match self.locate(t) {
            None => self.z[0].exp() * t,
            Some(i) if i == n - 1 => self.cum[i] + self.z[i].exp() * (t - self.t[i]),
            Some(i) => self.cum[i] + self.segment(i, (t / self.t[i]).ln(), None),
        }
    }

    /// `dS/dt` at `t > 0`.
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= 0.0 || n == 0 {
            return 0.0;
        }
        match self.locate(t) {
            None => self.z[0].exp(),
            Some(i) if i == n - 1 => self.z[i].exp(),
            Some(i) => {
                let w = (t.ln() - self.sigma[i]) / (self.sigma[i + 1] - self.sigma[i]);
                (self.z[i] + w * (self.z[i + 1] - self.z[i])).exp()
            }
        }
    }

    /// Adds `scale · ∂S(t)/∂z_j` into `out[j]`.
    pub fn add_smooth_gradient(&self, t: f64, scale: f64, out: &mut [f64]) {
        let n = self.t.len();
        if t <= 0.0 || n == 0 {
            return;
        }
        match self.locate(t) {
            None => out[0] += scale * self.z[0].exp() * t,
            Some(i) => {
                let base = &self.cum_grad[i * n..(i + 1) * n];
                for (o, g) in out.iter_mut().zip(base) {
                    *o += scale * g;
                }
                if i == n - 1 {
                    out[i] += scale * self.z[i].exp() * (t - self.t[i]);
                } else {
                    let mut seg = [0.0; 2];
                    self.segment(i, (t / self.t[i]).ln(), Some(&mut seg));
                    out[i] += scale * seg[0];
                    out[i + 1] += scale * seg[1];
                }
            }
        }
    }

    /// `∫_lo^hi dS/ds ds` evaluated segment by segment (no cumulative cache).
    pub fn smooth_integral(&self, lo: f64, hi: f64) -> f64 {
        let n = self.t.len();
        let lo = lo.max(0.0);
        if hi <= lo || n == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut a = lo;
        if a < self.t[0] {
            let b = hi.min(self.t[0]);
            total += self.z[0].exp() * (b - a);
            a = b;
        }
        while a < hi {
            let i = self.locate(a).expect("a is at or above the first node");
            if i == n - 1 {
                total += self.z[i].exp() * (hi - a);
                break;
            }
            let b = hi.min(self.t[i + 1]);
            let xa = (a / self.t[i]).ln();
            let xb = (b / self.t[i]).ln();
            total += self.segment(i, xb, None) - self.segment(i, xa, None);
            a = b;
        }
        total
    }
}

/// Free-function form of [`Utr::eval`].
pub fn eval_utr(u: &Utr, t: f64) -> f64 {
    u.eval(t)
}

/// Role of the source well in a CRM-form response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrmSource {
    /// Diagonal entry: the producer itself.
    SelfProducer,
    OffsetProducer,
    /// Injector with connectivity fraction `f`.
    Injector(f64),
}

/// CRM-form response: `(τ/γ)θ(t) + t/γ` on the diagonal, `(f/γ)t` from injectors, zero otherwise.
pub fn crm_utr(tau: f64, gamma: f64, source: CrmSource) -> Result<Utr> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} must be > 0")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau {tau} must be >= 0")));
    }
    match source {
        CrmSource::SelfProducer => Utr::linear(tau / gamma, 1.0 / gamma),
        CrmSource::OffsetProducer => Ok(Utr::zero()),
        CrmSource::Injector(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!("connectivity {f} outside [0, 1]")));
            }
            Utr::linear(0.0, f / gamma)
        }
    }
}

/// Square table of responses. `None` marks an inactive (identically zero) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtrMatrix {
    n: usize,
    responses: Vec<Option<Utr>>,
}

impl UtrMatrix {
    pub fn inactive(n: usize) -> Self {
        UtrMatrix {
            n,
            responses: vec![None; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Option<Utr>>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("response table is not square".into()));
        }
        Ok(UtrMatrix {
            n,
            responses: rows.into_iter().flatten().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Utr> {
        self.responses[row * self.n + col].as_ref()
    }

    pub fn get_mut(&mut self, row: usize, col: usize) -> Option<&mut Utr> {
        self.responses[row * self.n + col].as_mut()
    }

    pub fn set(&mut self, row: usize, col: usize, utr: Option<Utr>) {
        self.responses[row * self.n + col] = utr;
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_some()
    }

    /// Value of the response, zero when inactive.
    pub fn eval(&self, row: usize, col: usize, t: f64) -> f64 {
        self.get(row, col).map_or(0.0, |u| u.eval(t))
    }

    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n * self.n)
            .filter(|k| self.responses[*k].is_some())
            .map(|k| (k / self.n, k % self.n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal() {
        let u = Utr::linear(0.2, 0.04).unwrap();
        assert_eq!(u.eval(-1.0), 0.0);
        assert_eq!(u.eval(0.0), 0.0);
    }

    #[test]
    fn jump_plus_constant_derivative() {
        let u = Utr::linear(0.2, 0.04).unwrap();
        assert!((u.eval(10.0) - 0.6).abs() < 1e-14);
    }

    #[test]
    fn below_first_node_is_linear_ramp() {
        let u = Utr::new(0.0, vec![(5.0, 0.04f64.ln()), (50.0, 0.01f64.ln())]).unwrap();
        assert!((u.eval(2.0) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn power_law_segment_matches_closed_form() {
        // z linear in ln t with slope a gives derivative c·t^a.
        let (c, a): (f64, f64) = (0.3, -0.5);
        let nodes = vec![(1.0, c.ln()), (100.0, c.ln() + a * 100f64.ln())];
        let u = Utr::new(0.0, nodes).unwrap();
        let t: f64 = 30.0;
        let exact = c * 1.0 + c * (t.powf(a + 1.0) - 1.0) / (a + 1.0);
        assert!((u.smooth(t) - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn segment_integral_matches_cumulative() {
        let u = Utr::new(0.1, vec![(0.5, -2.0), (3.0, -1.0), (20.0, -3.0)]).unwrap();
        for &(lo, hi) in &[(0.0, 0.3), (0.2, 2.0), (1.0, 25.0), (4.0, 100.0)] {
            let a = u.smooth_integral(lo, hi);
            let b = u.smooth(hi) - u.smooth(lo);
            assert!((a - b).abs() < 1e-12 * b.abs().max(1e-12), "{lo} {hi}");
        }
    }

    #[test]
    fn crm_forms() {
        let d = crm_utr(5.0, 25.0, CrmSource::SelfProducer).unwrap();
        assert_eq!(d.jump(), 0.2);
        assert!((d.derivative(7.0) - 0.04).abs() < 1e-16);
        assert!(crm_utr(5.0, 25.0, CrmSource::OffsetProducer).unwrap().is_zero());
        let c = crm_utr(5.0, 25.0, CrmSource::Injector(0.5)).unwrap();
        assert!((c.eval(1.0) - 0.02).abs() < 1e-16);
        assert!(crm_utr(5.0, 0.0, CrmSource::SelfProducer).is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_cache() {
        let u = Utr::new(0.1, vec![(0.5, -2.0), (3.0, -1.0)]).unwrap();
        let s = serde_json::to_string(&u).unwrap();
        let v: Utr = serde_json::from_str(&s).unwrap();
        assert_eq!(u, v);
    }
}
