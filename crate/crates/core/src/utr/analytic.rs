//! Closed-form responses of a homogeneous reservoir.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::expint::e1;
use super::Utr;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Infinite,
    PssTank {
        pore_volume_m3: f64,
        compressibility_per_bar: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    /// m³/day/bar.
    pub transmissibility: f64,
    /// m³/bar per m².
    pub storativity: f64,
    pub well_radius: f64,
    pub skin: f64,
    pub boundary: Boundary,
}

impl ReservoirParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
            }
        };
        pos(self.transmissibility, "transmissibility")?;
        pos(self.storativity, "storativity")?;
        pos(self.well_radius, "well_radius")?;
        if !self.skin.is_finite() {
            return Err(Error::InvalidParameter("skin not finite".into()));
        }
        if let Boundary::PssTank {
            pore_volume_m3,
            compressibility_per_bar,
        } = self.boundary
        {
            pos(pore_volume_m3, "pore_volume_m3")?;
            pos(compressibility_per_bar, "compressibility_per_bar")?;
        }
        Ok(())
    }

    /// Capacitance `c_t·V_φ` of the tank, if bounded.
    pub fn capacitance(&self) -> Option<f64> {
        match self.boundary {
            Boundary::Infinite => None,
            Boundary::PssTank {
                pore_volume_m3,
                compressibility_per_bar,
            } => Some(pore_volume_m3 * compressibility_per_bar),
        }
    }
}

const T_LO: f64 = 1e-4;
const T_HI: f64 = 1e5;
const NODES_PER_DECADE: f64 = 20.0;
const Z_FLOOR: f64 = -100.0;

/// Line-source response: `E1(a/t)/(4πT)` with `a = r²S/(4T)`.
struct LineSource {
    a: f64,
    four_pi_t: f64,
}

impl LineSource {
    fn value(&self, t: f64) -> f64 {
        e1(self.a / t) / self.four_pi_t
    }

    fn log_derivative(&self, t: f64) -> f64 {
        (-self.a / t - self.four_pi_t.ln() - t.ln()).max(Z_FLOOR)
    }
}

/// Time on the decreasing branch (`t >= a`) where the line-source derivative drops to `slope`.
fn pss_switch(ls: &LineSource, slope: f64) -> f64 {
    let target = slope.ln();
    let a = ls.a.max(T_LO);
    if ls.log_derivative(a) <= target {
        return a;
    }
    let (mut lo, mut hi) = (a, a * 2.0);
    while ls.log_derivative(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ls.log_derivative(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Response at `distance` metres; `distance == well_radius` gives the self response with skin.
pub fn analytic_utr(rp: &ReservoirParams, distance: f64) -> Result<Utr> {
    rp.validate()?;
    if !(distance >= rp.well_radius && distance.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "distance {distance} must be >= well radius {}",
            rp.well_radius
        )));
    }
    let is_self = distance == rp.well_radius;
    let r = if is_self && rp.skin < 0.0 {
        rp.well_radius * (-rp.skin).exp()
    } else {
        distance
    };
    let ls = LineSource {
        a: r * r * rp.storativity / (4.0 * rp.transmissibility),
        four_pi_t: 4.0 * PI * rp.transmissibility,
    };
    let switch = rp.capacitance().map(|c| (pss_switch(&ls, 1.0 / c), c));

    let decades = (T_HI / T_LO).log10();
    let count = (decades * NODES_PER_DECADE).round() as usize;
    let mut nodes = Vec::with_capacity(count + 2);
    for k in 0..=count {
        let t = T_LO * 10f64.powf(k as f64 / NODES_PER_DECADE);
        if let Some((ts, _)) = switch {
            if t >= ts * (1.0 - 1e-12) {
                break;
            }
        }
        nodes.push((t, ls.log_derivative(t)));
    }
    if let Some((ts, c)) = switch {
        nodes.push((ts, (1.0 / c).ln()));
    }

    let mut jump = 0.0;
    if is_self {
        let first = nodes[0];
        let ramp = first.1.exp() * first.0.min(T_LO);
        jump = (ls.value(T_LO) - ramp).max(0.0);
        if rp.skin > 0.0 {
            jump += rp.skin / (2.0 * PI * rp.transmissibility);
        }
    }
    Utr::new(jump, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(boundary: Boundary) -> ReservoirParams {
        ReservoirParams {
            transmissibility: 20.0,
            storativity: 1e-4,
            well_radius: 0.1,
            skin: 0.0,
            boundary,
        }
    }

    #[test]
    fn cross_response_tracks_line_source() {
        let rp = params(Boundary::Infinite);
        let u = analytic_utr(&rp, 200.0).unwrap();
        let a = 200.0f64 * 200.0 * 1e-4 / 80.0;
        for &t in &[1.0, 10.0, 100.0, 1000.0] {
            let exact = e1(a / t) / (4.0 * PI * 20.0);
            let rel = (u.eval(t) - exact).abs() / exact;
            assert!(rel < 2e-3, "t={t} rel={rel}");
        }
    }

    #[test]
    fn far_well_sees_nothing() {
        let rp = params(Boundary::Infinite);
        let u = analytic_utr(&rp, 1e6).unwrap();
        assert!(u.eval(100.0) < 1e-30);
    }

    #[test]
    fn tank_late_slope_is_inverse_capacitance() {
        let rp = params(Boundary::PssTank {
            pore_volume_m3: 1e6,
            compressibility_per_bar: 1e-4,
        });
        let u = analytic_utr(&rp, 0.1).unwrap();
        let ts = *u.node_times().last().unwrap();
        for &m in &[10.0, 100.0] {
            let rel = (u.derivative(m * ts) * 100.0 - 1.0).abs();
            assert!(rel < 1e-6, "{rel}");
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut rp = params(Boundary::Infinite);
        rp.transmissibility = 0.0;
        assert!(analytic_utr(&rp, 1.0).is_err());
    }
}
