use serde::{Deserialize, Serialize};

use super::{RateHistory, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcOptions {
    /// Largest acceptable smallest-nonzero pressure increment (bar).
    pub resolution_bar: f64,
    /// Largest acceptable median sampling interval (days).
    pub sampling_days: f64,
    /// Event threshold as a fraction of the well's max |q|.
    pub variation_threshold: f64,
    /// Acceptable |relative deviation| from the cumulative reference.
    pub cumulative_tolerance: f64,
}

impl Default for QcOptions {
    fn default() -> Self {
        QcOptions {
            resolution_bar: 1.0,
            sampling_days: 1.0 / 24.0,
            variation_threshold: 0.05,
            cumulative_tolerance: 0.30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcVerdict {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellQc {
    pub well: String,
    /// `None` when the well has fewer than two pressure samples.
    pub pressure_resolution_ok: Option<bool>,
    pub smallest_increment_bar: Option<f64>,
    pub sampling_rate_ok: Option<bool>,
    pub median_dt_days: Option<f64>,
    pub rate_variation_events: usize,
    pub max_relative_amplitude: f64,
    /// Signed `(model − reference)/reference` of the worst record naming this well.
    pub cumulative_deviation: Option<f64>,
    pub no_variation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub wells: Vec<WellQc>,
    /// Fatal: no well in the scenario has any rate variation.
    pub all_no_variation: bool,
    pub verdict: QcVerdict,
}

impl QcReport {
    pub fn is_fail(&self) -> bool {
        self.verdict == QcVerdict::Fail
    }
}

/// Step changes with `|Δq| > threshold · max|q|`; the initial step up from zero is not an event.
pub fn variation_events(rates: &RateHistory, threshold: f64) -> Vec<(f64, f64)> {
    let qmax = rates.max_abs_rate();
    if qmax == 0.0 {
        return Vec::new();
    }
    rates
        .increments()
        .skip(1)
        .filter(|(_, dq)| dq.abs() > threshold * qmax)
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn qc_report(s: &Scenario, opt: &QcOptions) -> QcReport {
    let record_dev: Vec<f64> = s
        .cumulative_reference
        .iter()
        .map(|rec| {
            let model: f64 = rec
                .wells
                .iter()
                .filter_map(|id| s.index_of(id.as_str()))
                .map(|i| s.rates[i].abs_volume(rec.start_day, rec.end_day))
                .sum();
            if rec.volume_m3 == 0.0 {
                if model == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (model - rec.volume_m3) / rec.volume_m3
            }
        })
        .collect();

    let wells: Vec<WellQc> = s
        .wells
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let p = s.pressures[i].samples();
            let smallest = p
                .windows(2)
                .map(|ab| (ab[1].pressure - ab[0].pressure).abs())
                .filter(|d| *d > 0.0)
                .min_by(f64::total_cmp);
            let median_dt = median(p.windows(2).map(|ab| ab[1].time - ab[0].time).collect());
            let resolution_ok = if p.len() < 2 {
                None
            } else {
                Some(smallest.is_none_or(|d| d <= opt.resolution_bar))
            };
            let events = variation_events(&s.rates[i], opt.variation_threshold);
            let qmax = s.rates[i].max_abs_rate();
            let max_amp = events
                .iter()
                .map(|(_, dq)| dq.abs() / qmax)
                .fold(0.0, f64::max);
            let cumulative_deviation = s
                .cumulative_reference
                .iter()
                .zip(&record_dev)
                .filter(|(rec, _)| rec.wells.iter().any(|id| *id == w.id))
                .map(|(_, d)| *d)
                .max_by(|a, b| a.abs().total_cmp(&b.abs()));
            WellQc {
                well: w.id.to_string(),
                pressure_resolution_ok: resolution_ok,
                smallest_increment_bar: smallest,
                sampling_rate_ok: median_dt.map(|d| d <= opt.sampling_days * (1.0 + 1e-9)),
                median_dt_days: median_dt,
                rate_variation_events: events.len(),
                max_relative_amplitude: max_amp,
                cumulative_deviation,
                no_variation: events.is_empty(),
            }
        })
        .collect();

    let all_no_variation = wells.iter().all(|w| w.no_variation);
    let warn = wells.iter().any(|w| {
        w.pressure_resolution_ok == Some(false)
            || w.sampling_rate_ok == Some(false)
            || w.no_variation
            || w
                .cumulative_deviation
                .is_some_and(|d| d.abs() > opt.cumulative_tolerance)
    });
    let verdict = if all_no_variation {
        QcVerdict::Fail
    } else if warn {
        QcVerdict::Warn
    } else {
        QcVerdict::Pass
    };
    QcReport {
        wells,
        all_no_variation,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::well_data::{CumulativeRecord, PressureSeries, Well, WellId, WellRole};

    fn one_well(rates: RateHistory, p: PressureSeries, cum: Vec<CumulativeRecord>) -> Scenario {
        Scenario::new(
            vec![Well {
                id: WellId::new("P1").unwrap(),
                role: WellRole::Producer,
            }],
            vec![rates],
            vec![p],
            vec![None],
            cum,
        )
        .unwrap()
    }

    #[test]
    fn half_bar_hourly_passes_resolution_and_sampling() {
        let pairs: Vec<(f64, f64)> = (0..48)
            .map(|k| (k as f64 / 24.0, 200.0 - 0.5 * k as f64))
            .collect();
        let s = one_well(
            RateHistory::from_pairs(&[(0.0, 100.0), (1.0, 50.0)]),
            PressureSeries::from_pairs(&pairs),
            vec![],
        );
        let r = qc_report(&s, &QcOptions::default());
        assert_eq!(r.wells[0].pressure_resolution_ok, Some(true));
        assert_eq!(r.wells[0].sampling_rate_ok, Some(true));
        assert_eq!(r.verdict, QcVerdict::Pass);
    }

    #[test]
    fn cumulative_forty_percent_above_reference_warns() {
        let s = one_well(
            RateHistory::from_pairs(&[(0.0, 140.0), (10.0, 70.0)]),
            PressureSeries::empty(),
            vec![CumulativeRecord {
                wells: vec![WellId::new("P1").unwrap()],
                start_day: 0.0,
                end_day: 10.0,
                volume_m3: 1000.0,
            }],
        );
        let r = qc_report(&s, &QcOptions::default());
        let d = r.wells[0].cumulative_deviation.unwrap();
        assert!((d - 0.40).abs() < 1e-12, "{d}");
        assert_eq!(r.verdict, QcVerdict::Warn);
    }

    #[test]
    fn constant_rates_fail() {
        let s = one_well(
            RateHistory::from_pairs(&[(0.0, 100.0), (30.0, 100.0)]),
            PressureSeries::empty(),
            vec![],
        );
        let r = qc_report(&s, &QcOptions::default());
        assert!(r.wells[0].no_variation);
        assert_eq!(r.verdict, QcVerdict::Fail);
    }

    #[test]
    fn small_steps_are_not_events() {
        let r = RateHistory::from_pairs(&[(0.0, 100.0), (1.0, 104.0), (2.0, 90.0)]);
        let ev = variation_events(&r, 0.05);
        assert_eq!(ev, vec![(2.0, -14.0)]);
    }
}
