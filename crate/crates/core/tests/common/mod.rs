//! Oracle checks shared by the sampler tests and the acceptance run.

#![allow(dead_code)]

use dacrm_core::comparators::crm_obs_estimate;
use dacrm_core::crm::{select_dose, CrmConfig, GridPosterior, Skeleton};
use dacrm_core::da::{
    imputation_probability, impute_missing, run_da_chain, McmcConfig, SnapshotPatient, TrialSnapshot,
};
use dacrm_core::sim::{table1_true_probs, TABLE1_SKELETON, TABLE1_TARGET};
use dacrm_core::toxtime::{lambda_posterior_params, HazardModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HORIZON: f64 = 3.0;

pub fn benchmark_crm() -> CrmConfig<f64> {
    CrmConfig::new(Skeleton::new(TABLE1_SKELETON.to_vec()).unwrap(), TABLE1_TARGET).unwrap()
}

pub fn benchmark_hazard() -> HazardModel<f64> {
    HazardModel::equal(HORIZON, 9, 2.0).unwrap()
}

/// Every patient followed to `T`; outcomes from a random increasing curve.
pub fn random_complete_snapshot(rng: &mut ChaCha8Rng, min_n: usize, max_n: usize) -> TrialSnapshot<f64> {
    let n = rng.random_range(min_n..=max_n);
    let shift: f64 = rng.random_range(-1.5..1.5);
    let patients = (0..n)
        .map(|_| {
            let dose = rng.random_range(0..TABLE1_SKELETON.len());
            let p = TABLE1_SKELETON[dose].powf(shift.exp());
            let event_time = (rng.random::<f64>() < p).then(|| HORIZON * rng.random_range(0.01..1.0));
            SnapshotPatient {
                dose,
                followup: HORIZON,
                event_time,
            }
        })
        .collect();
    TrialSnapshot::new(patients, benchmark_crm(), benchmark_hazard()).unwrap()
}

/// Every patient followed to `T`; outcomes from one of the benchmark curves.
pub fn benchmark_complete_snapshot(rng: &mut ChaCha8Rng, min_n: usize, max_n: usize) -> TrialSnapshot<f64> {
    let n = rng.random_range(min_n..=max_n);
    let probs = table1_true_probs(rng.random_range(1..=2)).unwrap();
    let patients = (0..n)
        .map(|_| {
            let dose = rng.random_range(0..probs.len());
            let event_time = (rng.random::<f64>() < probs[dose]).then(|| HORIZON * rng.random_range(0.01..1.0));
            SnapshotPatient {
                dose,
                followup: HORIZON,
                event_time,
            }
        })
        .collect();
    TrialSnapshot::new(patients, benchmark_crm(), benchmark_hazard()).unwrap()
}

/// Absolute error of the chain's posterior mean of `a` against quadrature,
/// one per random complete dataset.
pub fn metropolis_mean_errors(datasets: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..datasets)
        .map(|i| {
            let snap = benchmark_complete_snapshot(&mut rng, 12, 36);
            let chain = run_da_chain(&snap, &McmcConfig::default().with_seed(seed ^ i as u64)).unwrap();
            let exact = GridPosterior::new(&snap.observed_tally(), &snap.crm).unwrap().mean_a();
            (chain.mean_a() - exact).abs()
        })
        .collect()
}

/// Largest relative discrepancy between the library's gamma parameters and
/// shape `prior/C + events`, rate `1/C + sum of exposures of toxic patients`.
pub fn gamma_step_discrepancy(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(1..=12);
        let c: f64 = rng.random_range(0.5..4.0);
        let model = HazardModel::equal(HORIZON, k, c).unwrap();
        let width = HORIZON / k as f64;
        let n = rng.random_range(1..30);
        let mut records = Vec::new();
        let mut imputed = Vec::new();
        let mut shape: Vec<f64> = (1..=k)
            .map(|j| k as f64 / (HORIZON * (k as f64 - j as f64 + 0.5)) / c)
            .collect();
        let mut rate = vec![1.0 / c; k];
        for _ in 0..n {
            let followup = if rng.random::<bool>() {
                HORIZON
            } else {
                HORIZON * rng.random::<f64>()
            };
            let event = (rng.random::<f64>() < 0.4).then(|| followup * rng.random_range(0.0..=1.0));
            let rec = dacrm_core::toxtime::FollowUpRecord::new(followup, event, HORIZON).unwrap();
            let y = rec.toxic_observed || rng.random::<bool>();
            if rec.toxic_observed {
                let j = ((rec.observed_time / width).floor() as usize).min(k - 1);
                shape[j] += 1.0;
            }
            if y {
                for (j, r) in rate.iter_mut().enumerate() {
                    *r += (rec.observed_time - j as f64 * width).clamp(0.0, width);
                }
            }
            records.push(rec);
            imputed.push(y);
        }
        let params = lambda_posterior_params(&imputed, &records, &model).unwrap();
        for (j, p) in params.iter().enumerate() {
            worst = worst.max(((p.shape - shape[j]) / shape[j]).abs());
            worst = worst.max(((p.rate - rate[j]) / rate[j]).abs());
        }
    }
    worst
}

/// Empirical imputation frequency of each pending patient against
/// `pi S / (1 - pi + pi S)`, in Monte-Carlo standard errors.
pub fn imputation_z_scores(draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crm = benchmark_crm();
    let hazard = benchmark_hazard();
    let followups = [0.1, 0.7, 1.3, 1.9, 2.5, 2.95];
    let patients: Vec<_> = followups
        .iter()
        .enumerate()
        .map(|(i, &u)| SnapshotPatient {
            dose: i % 6,
            followup: u,
            event_time: None,
        })
        .collect();
    let snap = TrialSnapshot::new(patients, crm.clone(), hazard).unwrap();
    let a = 0.4;
    let lambdas: Vec<f64> = (0..9).map(|k| 0.1 + 0.05 * k as f64).collect();
    let width = HORIZON / 9.0;
    let expected: Vec<f64> = followups
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let cum: f64 = lambdas
                .iter()
                .enumerate()
                .map(|(k, l)| l * (u - k as f64 * width).clamp(0.0, width))
                .sum();
            let pi = crm.skeleton.alpha(i % 6).powf(f64::exp(a));
            let surv = (-cum).exp();
            pi * surv / (1.0 - pi + pi * surv)
        })
        .collect();
    let mut hits = vec![0usize; followups.len()];
    for _ in 0..draws {
        for (h, y) in hits
            .iter_mut()
            .zip(impute_missing(&snap, a, &lambdas, &mut rng).unwrap())
        {
            *h += usize::from(y);
        }
    }
    expected
        .iter()
        .zip(&hits)
        .map(|(&p, &h)| {
            assert!((imputation_probability(p, 1.0) - p).abs() < 1e-15);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            (h as f64 / draws as f64 - p) / se
        })
        .collect()
}

/// Decision (stop flag, dose closest to target) from the chain and from
/// quadrature on random complete snapshots; returns the number that differ.
pub fn complete_data_decision_mismatches(snapshots: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mcmc = McmcConfig {
        n_burnin: 200,
        n_samples: 500,
        ..McmcConfig::default()
    };
    (0..snapshots)
        .filter(|&i| {
            let snap = random_complete_snapshot(&mut rng, 1, 36);
            let da = run_da_chain(&snap, &mcmc.with_seed(i as u64)).unwrap();
            let exact = crm_obs_estimate(&snap, &snap.crm).unwrap();
            let threshold = snap.crm.stop_threshold;
            let decide = |pi: &[f64], over: f64| (over > threshold, select_dose(pi, snap.crm.target));
            decide(&da.pi_hat, da.prob_overdose_lowest) != decide(&exact.pi_hat, exact.prob_overdose_lowest)
        })
        .count()
}

pub fn pancreatic_fixture() -> dacrm_core::replay::ReplayFile {
    dacrm_core::replay::ReplayFile::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/pancreatic.toml")).unwrap()
}

/// Reference estimates for the replay, by decision day; `None` is the
/// final complete-data estimate.
pub const PANCREATIC_REFERENCE: [(Option<f64>, [f64; 4]); 6] = [
    (Some(70.0), [0.113, 0.131, 0.148, 0.165]),
    (Some(224.0), [0.005, 0.008, 0.013, 0.019]),
    (Some(301.0), [0.007, 0.012, 0.019, 0.027]),
    (Some(364.0), [0.085, 0.125, 0.165, 0.207]),
    (Some(455.0), [0.126, 0.177, 0.228, 0.275]),
    (None, [0.118, 0.167, 0.215, 0.264]),
];

/// `(description, passed)` for every element of the reference replay.
pub fn pancreatic_checks(report: &dacrm_core::replay::ReplayReport, tolerance: f64) -> Vec<(String, bool)> {
    use dacrm_core::ActionKind::*;
    let at = |day: f64| {
        report
            .decisions
            .iter()
            .find(|d| d.day == day)
            .expect("decision day present")
    };
    let mut out = Vec::new();
    for (day, kind, to) in [
        (70.0, Escalate, 2),
        (224.0, Escalate, 3),
        (301.0, Stay, 3),
        (455.0, Deescalate, 1),
    ] {
        let d = at(day);
        out.push((
            format!(
                "day {day}: {:?} to level {} (expected {kind:?} to level {})",
                d.action,
                d.recommended + 1,
                to + 1
            ),
            d.action == kind && d.recommended == to,
        ));
    }
    out.push((
        format!("final MTD level {:?} (expected 3)", report.final_mtd.map(|d| d + 1)),
        report.final_mtd == Some(2),
    ));
    for (day, reference) in PANCREATIC_REFERENCE {
        let got = match day {
            Some(day) => at(day).pi_hat.clone(),
            None => report.final_pi_hat.clone(),
        };
        let worst = got
            .iter()
            .zip(reference)
            .map(|(g, p)| (g - p).abs())
            .fold(0.0, f64::max);
        let fmt: Vec<String> = got.iter().map(|p| format!("{p:.3}")).collect();
        let label = day.map_or("final".to_string(), |d| format!("day {d}"));
        out.push((
            format!("{label}: pi_hat ({}) max deviation {worst:.3}", fmt.join(", ")),
            worst <= tolerance,
        ));
    }
    out
}

/// Trials (out of `reps`) in which the decision trajectories of the listed
/// designs differ, run on shared seeds.
pub fn trajectory_mismatches(
    scenario: &dacrm_core::sim::Scenario,
    kinds: &[dacrm_core::DesignKind],
    reps: usize,
    seed: u64,
) -> usize {
    use dacrm_core::sim::{simulate_many, table1_design};
    let runs: Vec<_> = kinds
        .iter()
        .map(|&k| simulate_many(scenario, &table1_design(k), reps, seed).unwrap())
        .collect();
    (0..reps)
        .filter(|&r| {
            let first = &runs[0][r];
            runs[1..].iter().any(|run| {
                let o = &run[r];
                o.doses != first.doses
                    || o.mtd != first.mtd
                    || o.decisions
                        .iter()
                        .map(|d| d.action)
                        .ne(first.decisions.iter().map(|d| d.action))
            })
        })
        .count()
}
