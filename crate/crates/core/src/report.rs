//! Fit diagnostics shared by both engines, and the RMSD/R² metrics.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    BudgetExhausted,
    IllPosed,
    NoVariation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellResiduals {
    pub well: String,
    pub times: Vec<f64>,
    /// Model minus observation.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub status: FitStatus,
    /// Best objective after each accepted iteration.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub final_rmsd: Option<f64>,
    pub final_r2: Option<f64>,
    pub residuals: Vec<WellResiduals>,
    /// Objective contribution per well where the engine separates it.
    pub per_well_objective: BTreeMap<String, f64>,
    /// Fitted or given initial pressure per modeled well.
    #[serde(default)]
    pub initial_pressures: BTreeMap<String, f64>,
    /// Eigenvalues of `JᵀJ` at or below the weak-curvature cutoff.
    pub weak_directions: Vec<f64>,
    pub evaluations: usize,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for FitReport {
    fn eq(&self, other: &Self) -> bool {
        self.status == other.status
            && self.objective_trace == other.objective_trace
            && (self.final_objective == other.final_objective
                || (self.final_objective.is_nan() && other.final_objective.is_nan()))
            && self.final_rmsd == other.final_rmsd
            && self.final_r2 == other.final_r2
            && self.residuals == other.residuals
            && self.per_well_objective == other.per_well_objective
            && self.initial_pressures == other.initial_pressures
            && self.weak_directions == other.weak_directions
            && self.evaluations == other.evaluations
            && self.notes == other.notes
    }
}

impl FitReport {
    pub fn empty(status: FitStatus) -> Self {
        FitReport {
            status,
            objective_trace: Vec::new(),
            final_objective: f64::NAN,
            final_rmsd: None,
            final_r2: None,
            residuals: Vec::new(),
            per_well_objective: BTreeMap::new(),
            initial_pressures: BTreeMap::new(),
            weak_directions: Vec::new(),
            evaluations: 0,
            notes: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    /// Fills RMSD/R² from `(predicted, actual)` pairs.
    pub fn set_metrics(&mut self, predicted: &[f64], actual: &[f64]) {
        if let Ok(m) = metrics(predicted, actual) {
            self.final_rmsd = Some(m.rmsd);
            self.final_r2 = m.r2;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmsd: f64,
    /// `None` when the actual series has zero variance.
    pub r2: Option<f64>,
    pub n_points: usize,
}

pub fn metrics(predicted: &[f64], actual: &[f64]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} observations",
            predicted.len(),
            actual.len()
        )));
    }
    let n = actual.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("metrics need at least 2 points, got {n}")));
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    let mean = actual.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(Metrics {
        rmsd: (ss_res / n as f64).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let m = metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.rmsd, 0.0);
        assert_eq!(m.r2, Some(1.0));
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let m = metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.r2, Some(0.0));
    }

    #[test]
    fn hand_computed_pair() {
        let m = metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(m.rmsd, 1.0);
        assert_eq!(m.r2, Some(0.0));
    }

    #[test]
    fn zero_variance_actual_has_no_r2() {
        let m = metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(m.r2, None);
    }

    #[test]
    fn wall_time_does_not_affect_equality() {
        let a = FitReport::empty(FitStatus::Converged);
        let mut b = a.clone();
        b.wall_time = Duration::from_secs(3);
        assert_eq!(a, b);
    }
}
