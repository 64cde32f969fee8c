use serde::{Deserialize, Serialize};

use super::{CumulativeRecord, ObservationWindow, PressureSeries, Scenario};
use crate::error::{Error, Result};

/// Half-open time interval `[start, end)` in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(Error::InvalidConfig(format!(
                "interval [{start}, {end}) is empty or not finite"
            )));
        }
        Ok(Interval { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        a >= self.start && b <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    TrainThenValidate,
    IntervalList,
}

/// Training/validation split of a scenario's observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Train on `[0, t)`, validate on `[t, ∞)`.
    Boundary(f64),
    /// Train on the listed intervals, validate on the complement.
    Intervals(Vec<Interval>),
}

impl SplitSpec {
    pub fn mode(&self) -> SplitMode {
        match self {
            SplitSpec::Boundary(_) => SplitMode::TrainThenValidate,
            SplitSpec::Intervals(_) => SplitMode::IntervalList,
        }
    }

    pub fn training_intervals(&self) -> Vec<Interval> {
        match self {
            SplitSpec::Boundary(t) => vec![Interval {
                start: f64::NEG_INFINITY,
                end: *t,
            }],
            SplitSpec::Intervals(iv) => iv.clone(),
        }
    }

    pub fn in_training(&self, t: f64) -> bool {
        self.training_intervals().iter().any(|i| i.contains(t))
    }
}

fn partition_pressures(p: &PressureSeries, train: &ObservationWindow) -> (PressureSeries, PressureSeries) {
    (
        p.filtered(|t| train.contains(t)),
        p.filtered(|t| !train.contains(t)),
    )
}

/// Partitions observations by time; both outputs keep the full rate history.
pub fn split_dataset(s: &Scenario, spec: &SplitSpec) -> Result<(Scenario, Scenario)> {
    let intervals = spec.training_intervals();
    if let SplitSpec::Boundary(t) = spec {
        if !t.is_finite() {
            return Err(Error::InvalidConfig(format!("split boundary {t} is not finite")));
        }
    }
    for iv in &intervals {
        if !(iv.end > iv.start) {
            return Err(Error::InvalidConfig(format!(
                "training interval [{}, {}) is empty",
                iv.start, iv.end
            )));
        }
    }
    let train_window = ObservationWindow::Within(intervals.clone());
    let valid_window = ObservationWindow::Outside(intervals.clone());

    let (mut train_p, mut valid_p) = (Vec::new(), Vec::new());
    for p in &s.pressures {
        let (a, b) = partition_pressures(p, &train_window);
        train_p.push(a);
        valid_p.push(b);
    }

    // Observation counts: pressure samples, or rate step times for rate-only data.
    let (n_train, n_valid) = if s.pressures.iter().any(|p| !p.is_empty()) {
        (
            train_p.iter().map(PressureSeries::len).sum::<usize>(),
            valid_p.iter().map(PressureSeries::len).sum::<usize>(),
        )
    } else {
        let times: Vec<f64> = s.rates.iter().flat_map(|r| r.times()).collect();
        let n_t = times.iter().filter(|&&t| train_window.contains(t)).count();
        (n_t, times.len() - n_t)
    };
    if n_train == 0 {
        return Err(Error::EmptyPartition("training"));
    }
    if n_valid == 0 {
        return Err(Error::EmptyPartition("validation"));
    }

    let (train_cum, valid_cum): (Vec<CumulativeRecord>, Vec<CumulativeRecord>) = s
        .cumulative_reference
        .iter()
        .cloned()
        .partition(|c| intervals.iter().any(|i| i.covers(c.start_day, c.end_day)));

    let training = Scenario {
        pressures: train_p,
        cumulative_reference: train_cum,
        window: train_window,
        ..s.clone()
    };
    let validation = Scenario {
        pressures: valid_p,
        cumulative_reference: valid_cum,
        window: valid_window,
        ..s.clone()
    };
    Ok((training, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::well_data::{RateHistory, Well, WellId, WellRole};

    fn daily(n: usize) -> Scenario {
        let pairs: Vec<(f64, f64)> = (0..n).map(|k| (k as f64 + 0.5, 200.0 - k as f64 * 0.1)).collect();
        Scenario::new(
            vec![Well {
                id: WellId::new("P1").unwrap(),
                role: WellRole::Producer,
            }],
            vec![RateHistory::from_pairs(&[(0.0, 100.0), (100.0, 50.0)])],
            vec![PressureSeries::from_pairs(&pairs)],
            vec![None],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn boundary_split_keeps_full_rates() {
        let s = daily(365);
        let (tr, va) = split_dataset(&s, &SplitSpec::Boundary(300.0)).unwrap();
        assert!(tr.pressures[0].times().iter().all(|&t| t < 300.0));
        assert!(va.pressures[0].times().iter().all(|&t| t >= 300.0));
        assert_eq!(tr.pressures[0].len() + va.pressures[0].len(), 365);
        assert_eq!(tr.rates, s.rates);
        assert_eq!(va.rates, s.rates);
    }

    #[test]
    fn boundary_beyond_span_is_empty_validation() {
        let s = daily(365);
        let err = split_dataset(&s, &SplitSpec::Boundary(400.0)).unwrap_err();
        assert!(matches!(err, Error::EmptyPartition("validation")));
    }

    #[test]
    fn interval_list_validation_is_complement() {
        let s = daily(365);
        let spec = SplitSpec::Intervals(vec![
            Interval::new(0.0, 100.0).unwrap(),
            Interval::new(200.0, 300.0).unwrap(),
        ]);
        let (tr, va) = split_dataset(&s, &spec).unwrap();
        let all = s.pressures[0].times();
        let expected_valid: Vec<f64> = all
            .iter()
            .copied()
            .filter(|&t| !((0.0..100.0).contains(&t) || (200.0..300.0).contains(&t)))
            .collect();
        assert_eq!(va.pressures[0].times(), expected_valid);
        assert_eq!(tr.pressures[0].len(), 200);
    }
}
