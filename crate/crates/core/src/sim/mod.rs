//! Simulated trials: scenarios with calibrated event-time laws, the calendar
//! of cohort arrivals, and replication under independent seeded streams.

mod file;
mod oc;
mod report;

pub use file::{load_scenario_file, parse_scenario_file, DesignSettings, ScenarioFile};
pub use oc::{n_mtd_plus, operating_characteristics, paired_difference, true_mtd, OperatingCharacteristics};
pub use report::{write_csv, write_text_report, DesignResult};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, draw_event_time, ToxTimeFamily, ToxTimeLaw};
use crate::comparators::crm_comp_schedule;
use crate::crm::{CrmConfig, Skeleton};
use crate::error::{Error, Result};
use crate::toxtime::HazardModel;
use crate::trial::{final_mtd, next_dose, ActionKind, DesignConfig, DesignKind, DoseAction, TrialState, TrialStatus};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accrual {
    /// Cohort `k` arrives at `k * interarrival`.
    #[default]
    Fixed,
    /// Exponential gaps with mean `interarrival`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub true_probs: Vec<f64>,
    /// Event-time family per dose.
    pub families: Vec<ToxTimeFamily>,
    pub late_fraction: f64,
    pub horizon: f64,
    pub interarrival: f64,
    pub cohort_size: usize,
    pub n_cohorts: usize,
    pub accrual: Accrual,
    laws: Vec<ToxTimeLaw>,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        true_probs: Vec<f64>,
        family: ToxTimeFamily,
        late_fraction: f64,
        horizon: f64,
        interarrival: f64,
        cohort_size: usize,
        n_cohorts: usize,
    ) -> Result<Self> {
        let families = vec![family; true_probs.len()];
        Self::with_families(
            name,
            true_probs,
            families,
            late_fraction,
            horizon,
            interarrival,
            cohort_size,
            n_cohorts,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_families(
        name: impl Into<String>,
        true_probs: Vec<f64>,
        families: Vec<ToxTimeFamily>,
        late_fraction: f64,
        horizon: f64,
        interarrival: f64,
        cohort_size: usize,
        n_cohorts: usize,
    ) -> Result<Self> {
        if true_probs.is_empty() {
            return Err(Error::config("scenario needs at least one dose"));
        }
        if families.len() != true_probs.len() {
            return Err(Error::config(format!(
                "{} families given for {} doses",
                families.len(),
                true_probs.len()
            )));
        }
        if true_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("true toxicity probabilities must lie in [0, 1]"));
        }
        if true_probs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("true toxicity probabilities must be strictly increasing"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) || !(interarrival > 0.0 && interarrival.is_finite()) {
            return Err(Error::config(
                "assessment period and interarrival time must be positive",
            ));
        }
        if cohort_size == 0 || n_cohorts == 0 {
            return Err(Error::config("cohort size and number of cohorts must be positive"));
        }
        let laws = true_probs
            .iter()
            .zip(&families)
            .map(|(&p, &family)| {
                if p == 0.0 {
                    Ok(ToxTimeLaw::Uniform { p, horizon })
                } else {
                    calibrate(family, p, horizon, late_fraction)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            name: name.into(),
            true_probs,
            families,
            late_fraction,
            horizon,
            interarrival,
            cohort_size,
            n_cohorts,
            accrual: Accrual::Fixed,
            laws,
        })
    }

    pub fn with_accrual(mut self, accrual: Accrual) -> Self {
        self.accrual = accrual;
        self
    }

    pub fn levels(&self) -> usize {
        self.true_probs.len()
    }

    pub fn laws(&self) -> &[ToxTimeLaw] {
        &self.laws
    }

    /// Assessment period over interarrival time.
    pub fn ai_ratio(&self) -> f64 {
        self.horizon / self.interarrival
    }

    pub fn max_patients(&self) -> usize {
        self.cohort_size * self.n_cohorts
    }

    /// Family label for reports: the shared family or `mixed`.
    pub fn family_label(&self) -> String {
        let first = self.families[0];
        if self.families.iter().all(|&f| f == first) {
            first.to_string()
        } else {
            "mixed".to_string()
        }
    }
}

/// Skeleton and target shared by the two benchmark scenarios.
pub const TABLE1_SKELETON: [f64; 6] = [0.08, 0.12, 0.20, 0.30, 0.40, 0.50];
pub const TABLE1_TARGET: f64 = 0.3;

/// True toxicity curves of the two benchmark scenarios (1-based index).
pub fn table1_true_probs(index: usize) -> Result<Vec<f64>> {
    match index {
        1 => Ok(vec![0.10, 0.15, 0.30, 0.45, 0.60, 0.70]),
        2 => Ok(vec![0.08, 0.10, 0.20, 0.30, 0.45, 0.60]),
        _ => Err(Error::config(format!("no benchmark scenario {index}"))),
    }
}

/// Benchmark scenario: 12 cohorts of 3, T = 3 months, two cohorts a month, 70% late events.
pub fn table1_scenario(index: usize, family: ToxTimeFamily) -> Result<Scenario> {
    Scenario::new(
        format!("scenario{index}-{family}"),
        table1_true_probs(index)?,
        family,
        0.7,
        3.0,
        0.5,
        3,
        12,
    )
}

/// Benchmark design with the default prior, `K` and `C`.
pub fn table1_design(kind: DesignKind) -> DesignConfig<f64> {
    let crm = CrmConfig::new(
        Skeleton::new(TABLE1_SKELETON.to_vec()).expect("valid skeleton"),
        TABLE1_TARGET,
    )
    .expect("valid target");
    let hazard = HazardModel::equal(
        3.0,
        HazardModel::<f64>::DEFAULT_INTERVALS,
        HazardModel::<f64>::DEFAULT_C,
    )
    .expect("valid partition");
    DesignConfig::new(kind, crm, hazard)
}

/// Latent event time for one patient at `dose`; `None` means no toxicity within `T`.
pub fn gen_time_to_tox<R: Rng + ?Sized>(scenario: &Scenario, dose: usize, rng: &mut R) -> Option<f64> {
    draw_event_time(scenario.true_probs[dose], &scenario.laws[dose], scenario.horizon, rng)
}

/// Independent random streams for one replication, derived from the master
/// seed and the replication index only.
#[derive(Debug, Clone)]
pub struct TrialStreams {
    pub data: ChaCha8Rng,
    pub decisions: ChaCha8Rng,
    pub arrivals: ChaCha8Rng,
}

impl TrialStreams {
    pub fn new(master_seed: u64, replication: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(replication.wrapping_mul(4).wrapping_add(k));
            rng
        };
        TrialStreams {
            data: stream(0),
            decisions: stream(1),
            arrivals: stream(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time: f64,
    /// Patients with a missing outcome at the decision.
    pub pending: usize,
    pub action: DoseAction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub mtd: Option<usize>,
    pub stopped: bool,
    /// Dose of each enrolled patient, in enrollment order.
    pub doses: Vec<usize>,
    pub toxic: Vec<bool>,
    pub decisions: Vec<DecisionRecord>,
    pub duration: f64,
}

impl TrialOutcome {
    pub fn patients_per_dose(&self, levels: usize) -> Vec<usize> {
        let mut n = vec![0; levels];
        for &d in &self.doses {
            n[d] += 1;
        }
        n
    }
}

fn check_compatible(scenario: &Scenario, design: &DesignConfig<f64>) -> Result<()> {
    if design.crm.levels() != scenario.levels() {
        return Err(Error::config(format!(
            "design has {} dose levels, scenario has {}",
            design.crm.levels(),
            scenario.levels()
        )));
    }
    if (design.horizon() - scenario.horizon).abs() > 1e-12 * scenario.horizon {
        return Err(Error::config("design and scenario assessment periods differ"));
    }
    Ok(())
}

/// One trial from first arrival to the end of the last follow-up.
pub fn simulate_trial(
    scenario: &Scenario,
    design: &DesignConfig<f64>,
    streams: &mut TrialStreams,
) -> Result<TrialOutcome> {
    check_compatible(scenario, design)?;
    let mut state = TrialState::new(design.clone(), scenario.cohort_size, scenario.max_patients())?;
    let gap = Exp::new(1.0 / scenario.interarrival).map_err(|e| Error::config(e.to_string()))?;
    let mut decisions = Vec::new();
    let mut scheduled = 0.0;
    let mut stopped = false;

    for k in 0..scenario.n_cohorts {
        scheduled = match scenario.accrual {
            Accrual::Fixed => (k + 1) as f64 * scenario.interarrival,
            Accrual::Poisson => scheduled + gap.sample(&mut streams.arrivals),
        };
        let arrival = if design.kind == DesignKind::CrmComp {
            crm_comp_schedule(
                scheduled,
                state.roster.iter().map(|p| (p.arrival, p.event_time)),
                scenario.horizon,
            )
        } else {
            scheduled
        };
        state.advance_clock(arrival)?;
        // drawn for every design so that all designs share decision seeds
        let seed: u64 = streams.decisions.random();
        let mut recommended = None;
        if k > 0 {
            let estimate = state.estimate(arrival, seed)?;
            let action = next_dose(&state, &estimate);
            decisions.push(DecisionRecord {
                time: arrival,
                pending: state.pending_at(arrival),
                action,
            });
            state.apply(action);
            if action.kind == ActionKind::StopSafety {
                stopped = true;
                break;
            }
            recommended = Some(action.target_dose);
        }
        for _ in 0..scenario.cohort_size {
            let dose = state.current_dose;
            let event = gen_time_to_tox(scenario, dose, &mut streams.data);
            state.enroll(dose, event, recommended)?;
        }
    }

    let duration = if stopped {
        state.clock
    } else {
        state.complete()?;
        state.last_resolution()
    };
    debug_assert!(stopped == (state.status == TrialStatus::StoppedSafety));
    Ok(TrialOutcome {
        mtd: final_mtd(&state)?,
        stopped,
        doses: state.roster.iter().map(|p| p.dose).collect(),
        toxic: state.roster.iter().map(|p| p.event_time.is_some()).collect(),
        decisions,
        duration,
    })
}

/// `reps` independent trials; the result does not depend on thread count.
pub fn simulate_many(
    scenario: &Scenario,
    design: &DesignConfig<f64>,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<TrialOutcome>> {
    check_compatible(scenario, design)?;
    (0..reps as u64)
        .into_par_iter()
        .map(|r| simulate_trial(scenario, design, &mut TrialStreams::new(master_seed, r)))
        .collect()
}
