use std::time::Instant;

use wellcorr::crm::{CrmModel, CrmProducer};
use wellcorr::mdcv::{deconvolve, MdcvOptions, MdcvProblem};
use wellcorr::report::FitStatus;
use wellcorr::synthetic::{generate_scenario, CrmControl, RateSchedule, SyntheticSource, SyntheticSpec, SyntheticWell};
use wellcorr::well_data::{WellId, WellRole};

fn wid(s: &str) -> WellId {
    WellId::new(s).unwrap()
}

fn well(id: &str, role: WellRole, base: f64, p0: f64) -> SyntheticWell {
    SyntheticWell { id: wid(id), role, x: 0.0, y: 0.0, p0_bar: p0, base_rate: base, rates: None, gauge: true }
}

fn crm_truth() -> CrmModel {
    CrmModel::new(
        vec![
            CrmProducer { id: wid("P1"), tau_days: 6.0, gamma_m3_per_bar: 40.0 },
            CrmProducer { id: wid("P2"), tau_days: 3.0, gamma_m3_per_bar: 60.0 },
        ],
        vec![wid("I1")],
        vec![vec![0.6], vec![0.3]],
    )
    .unwrap()
}

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        seed: 17,
        horizon_days: 120.0,
        sampling_days: 1.0,
        sample_offset_days: 0.5,
        noise_std_bar: 0.0,
        rate_corruption_std: 0.0,
        emit_p0: false,
        wells: vec![
            well("P1", WellRole::Producer, 80.0, 250.0),
            well("P2", WellRole::Producer, 60.0, 240.0),
            well("I1", WellRole::Injector, 100.0, 260.0),
        ],
        schedule: RateSchedule { event_probability: 0.25, ..Default::default() },
        source: SyntheticSource::Crm { model: crm_truth(), control: CrmControl::Rates },
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let (s, truth) = generate_scenario(&spec()).unwrap();
    let opt = MdcvOptions::default();
    let prob = MdcvProblem::new(&s, &opt).unwrap();
    let mut x = prob.encode(&truth.model.clone().unwrap()).unwrap_or_else(|_| prob.expand_coarse(prob.coarse_start()));
    for (i, v) in x.iter_mut().enumerate() {
        *v += 0.01 * (1 + i % 3) as f64;
    }
    prob.project(&mut x);
    let (_, j) = prob.jacobian(x.as_slice());
    let mut worst: f64 = 0.0;
    for c in 0..prob.n_params() {
        let h = 1e-6 * x[c].abs().max(1.0);
        let mut a = x.clone();
        let mut b = x.clone();
        a[c] += h;
        b[c] -= h;
        let fd = (prob.residuals(a.as_slice()) - prob.residuals(b.as_slice())) / (2.0 * h);
        let scale = fd.amax().max(j.column(c).amax()).max(1e-12);
        worst = worst.max((j.column(c) - fd).amax() / scale);
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn recovers_crm_drawdown_response() {
    let (s, truth) = generate_scenario(&spec()).unwrap();
    let truth = truth.model.unwrap();
    let t0 = Instant::now();
    let (model, report) = deconvolve(&s, &MdcvOptions::default()).unwrap();
    assert!(t0.elapsed().as_secs() < 300);
    assert_eq!(report.status, FitStatus::Converged);
    let model = model.unwrap();
    for n in 0..2 {
        for k in 0..=30 {
            let t = 0.1 * 1000f64.powf(k as f64 / 30.0);
            let (a, b) = (model.utrs.eval(n, n, t), truth.utrs.eval(n, n, t));
            assert!((a - b).abs() <= 0.05 * b.abs(), "well {n} t {t}: {a} vs {b}");
        }
        assert!((model.p0[n].unwrap() - truth.p0[n].unwrap()).abs() < 0.5);
    }
}
