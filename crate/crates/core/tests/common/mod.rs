#![allow(dead_code)]

use wellcorr::crm::{CrmModel, CrmProducer};
use wellcorr::synthetic::{CrmControl, RateSchedule, SyntheticSource, SyntheticSpec, SyntheticWell};
use wellcorr::utr::{Boundary, ReservoirParams};
use wellcorr::well_data::{WellId, WellRole};

pub fn wid(s: &str) -> WellId {
    WellId::new(s).unwrap()
}

pub fn well(id: &str, role: WellRole, x: f64, base: f64, p0: f64) -> SyntheticWell {
    SyntheticWell {
        id: wid(id),
        role,
        x,
        y: 0.0,
        p0_bar: p0,
        base_rate: base,
        rates: None,
        gauge: true,
    }
}

pub fn pair_crm() -> CrmModel {
    CrmModel::new(
        vec![CrmProducer { id: wid("P1"), tau_days: 5.0, gamma_m3_per_bar: 40.0 }],
        vec![wid("I1")],
        vec![vec![0.7]],
    )
    .unwrap()
}

/// One producer, one injector, CRM truth under rate control.
pub fn crm_pair_spec(seed: u64, horizon: f64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        horizon_days: horizon,
        sampling_days: 1.0,
        sample_offset_days: 0.5,
        noise_std_bar: 0.0,
        rate_corruption_std: 0.0,
        emit_p0: false,
        wells: vec![
            well("P1", WellRole::Producer, 0.0, 80.0, 250.0),
            well("I1", WellRole::Injector, 300.0, 100.0, 250.0),
        ],
        schedule: RateSchedule {
            event_probability: 0.3,
            ..Default::default()
        },
        source: SyntheticSource::Crm {
            model: pair_crm(),
            control: CrmControl::Rates,
        },
    }
}

pub fn reservoir() -> ReservoirParams {
    ReservoirParams {
        transmissibility: 20.0,
        storativity: 1e-3,
        well_radius: 0.1,
        skin: 1.0,
        boundary: Boundary::Infinite,
    }
}

/// Infinite-acting radial-flow field with two producers and one injector.
pub fn analytic_spec(seed: u64, horizon: f64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        horizon_days: horizon,
        sampling_days: 1.0,
        sample_offset_days: 0.5,
        noise_std_bar: 0.0,
        rate_corruption_std: 0.0,
        emit_p0: false,
        wells: vec![
            well("P1", WellRole::Producer, 0.0, 80.0, 250.0),
            well("P2", WellRole::Producer, 500.0, 60.0, 250.0),
            well("I1", WellRole::Injector, 250.0, 120.0, 250.0),
        ],
        schedule: RateSchedule {
            event_probability: 0.3,
            ..Default::default()
        },
        source: SyntheticSource::Analytic { reservoir: reservoir() },
    }
}
