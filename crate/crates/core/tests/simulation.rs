mod common;

use common::*;
use dacrm_core::calibration::ToxTimeFamily;
use dacrm_core::sim::{
    operating_characteristics, simulate_many, table1_design, table1_scenario, write_csv, DesignResult, Scenario,
};
use dacrm_core::DesignKind;

fn slow_accrual() -> Scenario {
    let mut s = table1_scenario(1, ToxTimeFamily::Weibull).unwrap();
    s.interarrival = s.horizon;
    s
}

#[test]
fn same_seed_same_trials_on_any_thread_count() {
    let s = table1_scenario(2, ToxTimeFamily::LogLogistic).unwrap();
    let mut d = table1_design(DesignKind::DaCrm);
    d.mcmc.n_burnin = 200;
    d.mcmc.n_samples = 400;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| simulate_many(&s, &d, 12, 5).unwrap());
    let b = four.install(|| simulate_many(&s, &d, 12, 5).unwrap());
    assert_eq!(a, b);
    let c = simulate_many(&s, &d, 12, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn csv_is_reproducible() {
    let s = table1_scenario(1, ToxTimeFamily::Uniform).unwrap();
    let render = || {
        let out = simulate_many(&s, &table1_design(DesignKind::CrmObs), 50, 9).unwrap();
        let oc = operating_characteristics(&out, &s.true_probs, 0.3).unwrap();
        let mut buf = Vec::new();
        write_csv(&[DesignResult::new(&s, "CRM_obs", oc)], &mut buf).unwrap();
        buf
    };
    assert_eq!(render(), render());
}

#[test]
fn designs_coincide_when_accrual_is_slow() {
    let kinds = [DesignKind::DaCrm, DesignKind::CrmObs, "tite".parse().unwrap()];
    assert_eq!(trajectory_mismatches(&slow_accrual(), &kinds, 40, 3), 0);
}

#[test]
fn designs_differ_when_accrual_is_fast() {
    let s = table1_scenario(1, ToxTimeFamily::Weibull).unwrap();
    let kinds = [DesignKind::CrmObs, "tite".parse().unwrap()];
    assert!(trajectory_mismatches(&s, &kinds, 40, 3) > 0);
}
