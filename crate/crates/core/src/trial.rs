//! Dose-escalation state machine: roster, calendar clock, one-level moves,
//! the safety stopping rule and final MTD selection.

use serde::{Deserialize, Serialize};

use crate::comparators::{crm_comp_estimate, crm_obs_estimate, tite_estimate, TiteWeighting};
use crate::crm::{select_dose, CrmConfig, DoseTally, GridPosterior};
use crate::da::{missing_indicator, run_da_chain, DoseEstimate, McmcConfig, SnapshotPatient, TrialSnapshot};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::toxtime::HazardModel;

/// Which estimator drives the dose decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    DaCrm,
    CrmObs,
    TiteCrm(TiteWeighting),
    CrmComp,
}

impl DesignKind {
    pub fn label(&self) -> &'static str {
        match self {
            DesignKind::DaCrm => "DA-CRM",
            DesignKind::CrmObs => "CRM_obs",
            DesignKind::TiteCrm(TiteWeighting::Linear) => "TITE-CRM",
            DesignKind::TiteCrm(TiteWeighting::Adaptive) => "TITE-CRM(adaptive)",
            DesignKind::CrmComp => "CRM_comp",
        }
    }
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    /// Accepts the short names used on the command line: `dacrm`, `obs`, `tite`,
    /// `tite-adaptive`, `comp`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dacrm" | "da-crm" | "da" => Ok(DesignKind::DaCrm),
            "obs" | "crm-obs" | "crm_obs" => Ok(DesignKind::CrmObs),
            "tite" | "tite-crm" | "tite-linear" => Ok(DesignKind::TiteCrm(TiteWeighting::Linear)),
            "tite-adaptive" => Ok(DesignKind::TiteCrm(TiteWeighting::Adaptive)),
            "comp" | "crm-comp" | "crm_comp" => Ok(DesignKind::CrmComp),
            other => Err(Error::config(format!("unknown design `{other}`"))),
        }
    }
}

/// When the posterior is refreshed in conduct mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdatePolicy {
    #[default]
    EveryCohort,
    CohortFirstPatientOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Real + Serialize", deserialize = "S: Real + Deserialize<'de>"))]
pub struct DesignConfig<S> {
    pub kind: DesignKind,
    pub crm: CrmConfig<S>,
    pub hazard: HazardModel<S>,
    pub mcmc: McmcConfig,
    /// Block escalation until two patients at the current dose are fully assessed.
    pub escalation_safety_rule: bool,
    pub update_policy: UpdatePolicy,
}

impl<S: Real> DesignConfig<S> {
    pub fn new(kind: DesignKind, crm: CrmConfig<S>, hazard: HazardModel<S>) -> Self {
        DesignConfig {
            kind,
            crm,
            hazard,
            mcmc: McmcConfig::default(),
            escalation_safety_rule: false,
            update_policy: UpdatePolicy::EveryCohort,
        }
    }

    pub fn with_kind(&self, kind: DesignKind) -> Self {
        DesignConfig { kind, ..self.clone() }
    }

    pub fn horizon(&self) -> S {
        self.hazard.horizon()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord<S> {
    pub id: usize,
    pub arrival: S,
    pub dose: usize,
    /// Dose the design recommended at enrollment, if a decision was made.
    pub recommended_dose: Option<usize>,
    /// Time from treatment start to toxicity; `None` if none (yet).
    pub event_time: Option<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Active,
    StoppedSafety,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Escalate,
    Deescalate,
    Stay,
    StopSafety,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseAction {
    pub kind: ActionKind,
    pub target_dose: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Real + Serialize", deserialize = "S: Real + Deserialize<'de>"))]
pub struct TrialState<S> {
    pub clock: S,
    pub roster: Vec<PatientRecord<S>>,
    /// Dose of the current cohort: set by decisions and clinician overrides,
    /// not by individual enrollments.
    pub current_dose: usize,
    pub design: DesignConfig<S>,
    pub cohort_size: usize,
    pub max_patients: usize,
    pub status: TrialStatus,
}

impl<S: Real> TrialState<S> {
    /// A fresh trial at the lowest dose.
    pub fn new(design: DesignConfig<S>, cohort_size: usize, max_patients: usize) -> Result<Self> {
        design.crm.validate()?;
        design.mcmc.validate()?;
        if cohort_size == 0 || max_patients == 0 {
            return Err(Error::config("cohort size and maximum sample size must be positive"));
        }
        if design.hazard.partition.intervals() == 0 {
            return Err(Error::config("hazard model has no intervals"));
        }
        Ok(TrialState {
            clock: S::zero(),
            roster: Vec::new(),
            current_dose: 0,
            design,
            cohort_size,
            max_patients,
            status: TrialStatus::Active,
        })
    }

    pub fn with_start_dose(mut self, dose: usize) -> Result<Self> {
        self.design.crm.skeleton.check_dose(dose)?;
        self.current_dose = dose;
        Ok(self)
    }

    pub fn horizon(&self) -> S {
        self.design.horizon()
    }

    /// Follow-up and visible event time of one patient at `now`. Calendar
    /// arithmetic such as `(k + 1) * tau - k * tau` is not exact, so times
    /// within a relative 1e-12 of the horizon or of the event are snapped to it.
    fn observe(&self, patient: &PatientRecord<S>, now: S) -> (S, Option<S>) {
        let horizon = self.horizon();
        let tol = horizon * S::lit(1e-12);
        let elapsed = now - patient.arrival;
        let followup = if elapsed >= horizon - tol {
            horizon
        } else {
            elapsed.max(S::zero())
        };
        match patient.event_time {
            Some(t) if t <= followup + tol => (followup.max(t), Some(t)),
            _ => (followup, None),
        }
    }

    fn followup_at(&self, patient: &PatientRecord<S>, now: S) -> S {
        self.observe(patient, now).0
    }

    /// Follow-up and visible outcomes of every enrolled patient at calendar time `now`.
    pub fn snapshot_at(&self, now: S) -> Result<TrialSnapshot<S>> {
        if let Some(p) = self.roster.iter().find(|p| p.arrival > now) {
            return Err(Error::domain(format!(
                "snapshot at {now} precedes arrival of patient {} at {}",
                p.id, p.arrival
            )));
        }
        let patients = self
            .roster
            .iter()
            .map(|p| {
                let (followup, event_time) = self.observe(p, now);
                SnapshotPatient {
                    dose: p.dose,
                    followup,
                    event_time,
                }
            })
            .collect();
        TrialSnapshot::new(patients, self.design.crm.clone(), self.design.hazard.clone())
    }

    /// Posterior used for the decision at `now`; `seed` drives the DA chain.
    pub fn estimate(&self, now: S, seed: u64) -> Result<DoseEstimate<S>> {
        let snapshot = self.snapshot_at(now)?;
        estimate_snapshot(&snapshot, &self.design, seed)
    }

    /// Patients at `dose` whose assessment window has closed by `now`.
    pub fn fully_assessed_at(&self, dose: usize, now: S) -> usize {
        let horizon = self.horizon();
        self.roster
            .iter()
            .filter(|p| p.dose == dose && self.followup_at(p, now) >= horizon)
            .count()
    }

    pub fn pending_at(&self, now: S) -> usize {
        self.roster
            .iter()
            .filter(|p| {
                let (followup, event_time) = self.observe(p, now);
                missing_indicator(event_time, followup, self.horizon())
            })
            .count()
    }

    pub fn is_full(&self) -> bool {
        self.roster.len() >= self.max_patients
    }

    pub fn advance_clock(&mut self, now: S) -> Result<()> {
        if now < self.clock {
            return Err(Error::State(format!(
                "clock cannot move back from {} to {now}",
                self.clock
            )));
        }
        self.clock = now;
        Ok(())
    }

    /// Adds a patient at the clock time. `event_time` is the (possibly latent)
    /// time from treatment start to toxicity.
    pub fn enroll(&mut self, dose: usize, event_time: Option<S>, recommended_dose: Option<usize>) -> Result<usize> {
        if self.status != TrialStatus::Active {
            return Err(Error::State("trial is not active".into()));
        }
        if self.is_full() {
            return Err(Error::State(format!(
                "maximum sample size {} reached",
                self.max_patients
            )));
        }
        self.design.crm.skeleton.check_dose(dose)?;
        if let Some(t) = event_time {
            if !(t > S::zero() && t <= self.horizon()) {
                return Err(Error::domain(format!("event time {t} outside (0, {}]", self.horizon())));
            }
        }
        let id = self.roster.len();
        self.roster.push(PatientRecord {
            id,
            arrival: self.clock,
            dose,
            recommended_dose,
            event_time,
        });
        Ok(id)
    }

    /// Records a toxicity for an enrolled patient, `event_time` after their arrival.
    pub fn record_event(&mut self, id: usize, event_time: S) -> Result<()> {
        let horizon = self.horizon();
        let patient = self
            .roster
            .get_mut(id)
            .ok_or_else(|| Error::domain(format!("no patient {id}")))?;
        if patient.event_time.is_some() {
            return Err(Error::State(format!("patient {id} already has a toxicity recorded")));
        }
        if !(event_time > S::zero() && event_time <= horizon) {
            return Err(Error::domain(format!("event time {event_time} outside (0, {horizon}]")));
        }
        patient.event_time = Some(event_time);
        Ok(())
    }

    /// Records a clinician's choice of cohort dose that differs from the design.
    pub fn override_dose(&mut self, dose: usize) -> Result<()> {
        self.design.crm.skeleton.check_dose(dose)?;
        self.current_dose = dose;
        Ok(())
    }

    /// Applies a decision; a stop ends the trial.
    pub fn apply(&mut self, action: DoseAction) {
        match action.kind {
            ActionKind::StopSafety => self.status = TrialStatus::StoppedSafety,
            _ => self.current_dose = action.target_dose,
        }
    }

    pub fn complete(&mut self) -> Result<()> {
        if self.status != TrialStatus::Active {
            return Err(Error::State("only an active trial can be completed".into()));
        }
        self.status = TrialStatus::Completed;
        Ok(())
    }

    /// Outcomes once every patient has been followed for the full window.
    pub fn complete_tally(&self) -> DoseTally {
        let mut t = DoseTally::zeros(self.design.crm.levels());
        for p in &self.roster {
            t.add(p.dose, p.event_time.is_some());
        }
        t
    }

    /// Time at which the last outcome resolves.
    pub fn last_resolution(&self) -> S {
        let horizon = self.horizon();
        self.roster
            .iter()
            .map(|p| p.arrival + p.event_time.map_or(horizon, |t| t.min(horizon)))
            .fold(self.clock, S::max)
    }
}

/// Dispatches to the estimator of the configured design.
pub fn estimate_snapshot<S: Real>(
    snapshot: &TrialSnapshot<S>,
    design: &DesignConfig<S>,
    seed: u64,
) -> Result<DoseEstimate<S>> {
    match design.kind {
        // nothing to impute: the chain would reproduce the exact posterior
        DesignKind::DaCrm if snapshot.missing_count() == 0 => crm_obs_estimate(snapshot, &design.crm),
        DesignKind::DaCrm => Ok(run_da_chain(snapshot, &design.mcmc.with_seed(seed))?.estimate()),
        DesignKind::CrmObs => crm_obs_estimate(snapshot, &design.crm),
        DesignKind::TiteCrm(w) => tite_estimate(snapshot, &design.crm, w),
        DesignKind::CrmComp => crm_comp_estimate(snapshot, &design.crm),
    }
}

/// Next dose from the current one: stop if the lowest dose is too toxic,
/// otherwise move one level towards the dose closest to target.
pub fn next_dose<S: Real>(state: &TrialState<S>, estimate: &DoseEstimate<S>) -> DoseAction {
    let crm = &state.design.crm;
    let current = state.current_dose;
    if estimate.prob_overdose_lowest > crm.stop_threshold {
        return DoseAction {
            kind: ActionKind::StopSafety,
            target_dose: current,
        };
    }
    let best = select_dose(&estimate.pi_hat, crm.target);
    if best > current {
        if state.design.escalation_safety_rule && state.fully_assessed_at(current, state.clock) < 2 {
            return DoseAction {
                kind: ActionKind::Stay,
                target_dose: current,
            };
        }
        DoseAction {
            kind: ActionKind::Escalate,
            target_dose: current + 1,
        }
    } else if best < current {
        DoseAction {
            kind: ActionKind::Deescalate,
            target_dose: current - 1,
        }
    } else {
        DoseAction {
            kind: ActionKind::Stay,
            target_dose: current,
        }
    }
}

/// Estimated toxicity probabilities with every enrolled patient fully followed.
pub fn final_estimate<S: Real>(state: &TrialState<S>) -> Result<Vec<S>> {
    final_posterior(&state.complete_tally(), &state.design.crm)
}

fn final_posterior<S: Real>(tally: &DoseTally, crm: &CrmConfig<S>) -> Result<Vec<S>> {
    Ok(GridPosterior::new(tally, crm)?.pi_means(&crm.skeleton))
}

/// Selected MTD: `None` for a trial stopped for safety.
pub fn final_mtd<S: Real>(state: &TrialState<S>) -> Result<Option<usize>> {
    match state.status {
        TrialStatus::Active => Err(Error::State("final MTD requested for an active trial".into())),
        TrialStatus::StoppedSafety => Ok(None),
        TrialStatus::Completed => {
            let pi = final_estimate(state)?;
            Ok(Some(select_dose(&pi, state.design.crm.target)))
        }
    }
}
