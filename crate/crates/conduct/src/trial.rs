//! One conducted trial: roster, recorded toxicities and the decision log.
//!
//! Dates are calendar days; the engine works in months, converted with
//! [`days_to_months`]. Patient ids and doses are 1-based on the wire.

use chrono::NaiveDate;
use dacrm_core::replay::days_to_months;
use dacrm_core::sim::DesignSettings;
use dacrm_core::trial::{estimate_snapshot, next_dose};
use dacrm_core::{ActionKind, DesignKind, SnapshotPatient, TrialState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    #[serde(default)]
    pub name: String,
    pub start_date: NaiveDate,
    /// Length of the DLT assessment window in days.
    pub horizon_days: f64,
    #[serde(default = "one")]
    pub start_dose: usize,
    #[serde(default)]
    pub dose_labels: Vec<String>,
    /// Mixed with each snapshot digest to seed the sampler.
    #[serde(default)]
    pub seed: u64,
    pub design: DesignSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub arrival: NaiveDate,
    pub dose: usize,
    #[serde(default, rename = "override")]
    pub override_: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    pub patient_id: usize,
    pub arrival: NaiveDate,
    pub dose: usize,
    pub recommended_dose: Option<usize>,
    pub event_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUp {
    pub patient_id: usize,
    pub dose: usize,
    /// Days of follow-up counted, capped at the window.
    pub followup_days: f64,
    pub toxicity_observed: bool,
    /// Window still open and no toxicity seen yet.
    pub missing: bool,
}

/// What the design says at one date, independent of when it was asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub asof: NaiveDate,
    pub pi_hat: Vec<f64>,
    pub prob_overdose_lowest: f64,
    pub action: ActionKind,
    pub recommended_dose: usize,
    pub recommended_label: Option<String>,
    pub current_dose: usize,
    pub pending: usize,
    pub snapshot_digest: String,
    pub seed: u64,
    pub patients: Vec<FollowUp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub index: usize,
    pub recorded_at: String,
    #[serde(flatten)]
    pub recommendation: Recommendation,
    /// Exact engine input, so the decision can be recomputed from the log.
    pub snapshot: Vec<SnapshotPatient>,
    /// Dose given to the next patient enrolled after this decision.
    pub actual_dose: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductTrial {
    pub id: String,
    pub config: TrialConfig,
    pub state: TrialState,
    pub arrivals: Vec<NaiveDate>,
    pub event_dates: Vec<Option<NaiveDate>>,
    pub decisions: Vec<DecisionRecord>,
    /// Latest decision not yet followed by an enrollment.
    pub open_decision: Option<usize>,
}

impl ConductTrial {
    pub fn create(id: String, config: TrialConfig) -> ApiResult<Self> {
        if !(config.horizon_days.is_finite() && config.horizon_days > 0.0) {
            return Err(ApiError::Validation("horizon_days must be positive".into()));
        }
        let levels = config.design.skeleton.len();
        if !config.dose_labels.is_empty() && config.dose_labels.len() != levels {
            return Err(ApiError::Validation(format!(
                "{} dose labels for {levels} doses",
                config.dose_labels.len()
            )));
        }
        if config.start_dose == 0 || config.start_dose > levels {
            return Err(ApiError::Validation(format!(
                "start_dose must be between 1 and {levels}"
            )));
        }
        let design = config
            .design
            .config(DesignKind::DaCrm, days_to_months(config.horizon_days))?;
        let state = TrialState::new(design, 1, usize::MAX)?.with_start_dose(config.start_dose - 1)?;
        Ok(ConductTrial {
            id,
            config,
            state,
            arrivals: Vec::new(),
            event_dates: Vec::new(),
            decisions: Vec::new(),
            open_decision: None,
        })
    }

    pub fn levels(&self) -> usize {
        self.config.design.skeleton.len()
    }

    fn months_since_start(&self, date: NaiveDate) -> f64 {
        days_to_months((date - self.config.start_date).num_days() as f64)
    }

    fn label(&self, dose: usize) -> Option<String> {
        self.config.dose_labels.get(dose - 1).cloned()
    }

    /// Enrolls a patient; returns the 1-based patient id.
    pub fn enroll(&mut self, req: &Enrollment) -> ApiResult<usize> {
        if req.arrival < self.config.start_date {
            return Err(ApiError::Validation(format!(
                "arrival {} precedes the trial start {}",
                req.arrival, self.config.start_date
            )));
        }
        if let Some(last) = self.arrivals.last() {
            if req.arrival < *last {
                return Err(ApiError::Validation(format!(
                    "arrival {} precedes the previous arrival {last}",
                    req.arrival
                )));
            }
        }
        if req.dose == 0 || req.dose > self.levels() {
            return Err(ApiError::Validation(format!(
                "dose must be between 1 and {}",
                self.levels()
            )));
        }
        let open = self.open_decision.map(|i| &self.decisions[i].recommendation);
        if !req.override_ {
            if let Some(r) = open.filter(|r| r.action == ActionKind::StopSafety) {
                return Err(ApiError::Conflict(format!(
                    "the design recommended stopping for safety on {}; set override to enroll anyway",
                    r.asof
                )));
            }
            let previous = self.state.roster.last().map_or(self.state.current_dose, |p| p.dose) + 1;
            let recommended = open.map(|r| r.recommended_dose);
            if req.dose.abs_diff(previous) > 1 && recommended != Some(req.dose) {
                return Err(ApiError::Conflict(format!(
                    "dose {} skips a level from dose {previous}; set override to confirm",
                    req.dose
                )));
            }
        }
        let recommended = open.map(|r| r.recommended_dose - 1);
        // the first patient after a decision leads the cohort and fixes its dose
        let leads = self.state.roster.is_empty() || self.open_decision.is_some();
        self.state.advance_clock(self.months_since_start(req.arrival))?;
        if leads {
            self.state.override_dose(req.dose - 1)?;
        }
        let id = self.state.enroll(req.dose - 1, None, recommended)?;
        self.arrivals.push(req.arrival);
        self.event_dates.push(None);
        if let Some(i) = self.open_decision.take() {
            self.decisions[i].actual_dose = Some(req.dose);
        }
        Ok(id + 1)
    }

    pub fn record_event(&mut self, patient_id: usize, date: NaiveDate) -> ApiResult<()> {
        let idx = patient_id
            .checked_sub(1)
            .filter(|&i| i < self.arrivals.len())
            .ok_or_else(|| ApiError::NotFound(format!("no patient {patient_id} in trial {}", self.id)))?;
        if self.event_dates[idx].is_some() {
            return Err(ApiError::Conflict(format!(
                "patient {patient_id} already has a toxicity recorded"
            )));
        }
        let arrival = self.arrivals[idx];
        let days = (date - arrival).num_days() as f64;
        if days <= 0.0 {
            return Err(ApiError::Validation(format!(
                "toxicity on {date} is not after the arrival {arrival}"
            )));
        }
        if days > self.config.horizon_days {
            return Err(ApiError::Validation(format!(
                "toxicity on {date} falls outside the {}-day window that opened {arrival}",
                self.config.horizon_days
            )));
        }
        self.state.record_event(idx, days_to_months(days))?;
        self.event_dates[idx] = Some(date);
        Ok(())
    }

    /// Runs the design on the data visible at `asof`. Deterministic: the
    /// sampler seed is derived from the trial seed and the snapshot.
    pub fn recommend(&self, asof: NaiveDate) -> ApiResult<(Recommendation, Vec<SnapshotPatient>)> {
        if asof < self.config.start_date {
            return Err(ApiError::Validation(format!("asof {asof} precedes the trial start")));
        }
        if let Some(last) = self.arrivals.last() {
            if asof < *last {
                return Err(ApiError::Validation(format!(
                    "asof {asof} precedes the latest arrival {last}"
                )));
            }
        }
        let now = self.months_since_start(asof);
        let snapshot = self.state.snapshot_at(now)?;
        let patients = snapshot.patients().to_vec();
        let digest = snapshot_digest(asof, &patients, &self.config.design)?;
        let seed = derive_seed(self.config.seed, &digest);
        let estimate = estimate_snapshot(&snapshot, &self.state.design, seed)?;

        let mut probe = self.state.clone();
        probe.advance_clock(now)?;
        let (action, target) = if self.arrivals.is_empty() {
            (ActionKind::Stay, probe.current_dose)
        } else {
            let a = next_dose(&probe, &estimate);
            (a.kind, a.target_dose)
        };
        let horizon = self.config.horizon_days;
        let follow = patients
            .iter()
            .zip(&self.arrivals)
            .enumerate()
            .map(|(i, (p, arrival))| FollowUp {
                patient_id: i + 1,
                dose: p.dose + 1,
                followup_days: ((asof - *arrival).num_days() as f64).min(horizon),
                toxicity_observed: p.event_time.is_some(),
                missing: p.event_time.is_none() && p.followup < self.state.horizon(),
            })
            .collect::<Vec<_>>();
        let rec = Recommendation {
            asof,
            pi_hat: estimate.pi_hat,
            prob_overdose_lowest: estimate.prob_overdose_lowest,
            action,
            recommended_dose: target + 1,
            recommended_label: self.label(target + 1),
            current_dose: self.state.current_dose + 1,
            pending: follow.iter().filter(|f| f.missing).count(),
            snapshot_digest: digest,
            seed,
            patients: follow,
        };
        Ok((rec, patients))
    }

    pub fn push_decision(&mut self, rec: Recommendation, snapshot: Vec<SnapshotPatient>, recorded_at: String) {
        let index = self.decisions.len();
        self.decisions.push(DecisionRecord {
            index,
            recorded_at,
            recommendation: rec,
            snapshot,
            actual_dose: None,
        });
        self.open_decision = Some(index);
    }

    pub fn patients(&self) -> Vec<PatientView> {
        self.state
            .roster
            .iter()
            .zip(self.arrivals.iter().zip(&self.event_dates))
            .map(|(p, (arrival, event))| PatientView {
                patient_id: p.id + 1,
                arrival: *arrival,
                dose: p.dose + 1,
                recommended_dose: p.recommended_dose.map(|d| d + 1),
                event_date: *event,
            })
            .collect()
    }
}

fn snapshot_digest(asof: NaiveDate, patients: &[SnapshotPatient], design: &DesignSettings) -> ApiResult<String> {
    let canonical = serde_json::to_vec(&(asof, patients, design))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

fn derive_seed(trial_seed: u64, digest: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(trial_seed.to_le_bytes());
    h.update(digest.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}
