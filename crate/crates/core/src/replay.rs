//! Replays a conducted trial from its patient log: the decision the design
//! would have made as each cohort opened, and the final MTD.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crm::select_dose;
use crate::error::{Error, Result};
use crate::sim::DesignSettings;
use crate::trial::{final_estimate, final_mtd, next_dose, ActionKind, DesignKind, TrialState};

/// Calendar days per model month.
pub const DAYS_PER_MONTH: f64 = 30.4375;

pub fn days_to_months(days: f64) -> f64 {
    days / DAYS_PER_MONTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayPatient {
    pub id: u32,
    pub cohort: u32,
    pub day_on: f64,
    /// 1-based dose level actually given.
    pub dose: usize,
    /// Day the DLT was recorded; absent if none.
    #[serde(default)]
    pub dlt_day: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    #[serde(default)]
    pub name: String,
    /// Assessment window in days.
    pub horizon_days: f64,
    /// 1-based starting dose.
    #[serde(default = "one")]
    pub start_dose: usize,
    #[serde(default)]
    pub dose_labels: Vec<String>,
    pub design: DesignSettings,
    #[serde(default)]
    pub patients: Vec<ReplayPatient>,
}

fn one() -> usize {
    1
}

impl ReplayFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ReplayFile = toml::from_str(text).map_err(|e| Error::config(format!("trial file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn levels(&self) -> usize {
        self.design.skeleton.len()
    }

    pub fn dose_label(&self, dose: usize) -> String {
        self.dose_labels
            .get(dose)
            .cloned()
            .unwrap_or_else(|| format!("level {}", dose + 1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_days > 0.0 && self.horizon_days.is_finite()) {
            return Err(Error::config("horizon_days must be positive"));
        }
        let levels = self.levels();
        if self.start_dose == 0 || self.start_dose > levels {
            return Err(Error::config(format!(
                "start_dose {} outside 1..={levels}",
                self.start_dose
            )));
        }
        if !self.dose_labels.is_empty() && self.dose_labels.len() != levels {
            return Err(Error::config("dose_labels must name every dose level"));
        }
        for pair in self.patients.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.day_on < a.day_on {
                return Err(Error::domain(format!(
                    "patients are not in chronological order: {} (day {}) before {} (day {})",
                    a.id, a.day_on, b.id, b.day_on
                )));
            }
            if b.cohort < a.cohort {
                return Err(Error::domain(format!("cohort numbers decrease at patient {}", b.id)));
            }
        }
        for p in &self.patients {
            if p.dose == 0 || p.dose > levels {
                return Err(Error::domain(format!(
                    "patient {}: dose {} outside 1..={levels}",
                    p.id, p.dose
                )));
            }
            if !(p.day_on >= 0.0 && p.day_on.is_finite()) {
                return Err(Error::domain(format!("patient {}: invalid day_on", p.id)));
            }
            if let Some(day) = p.dlt_day {
                if !(day > p.day_on && day <= p.day_on + self.horizon_days) {
                    return Err(Error::domain(format!(
                        "patient {}: DLT on day {day} is outside the assessment window",
                        p.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Estimate and recommendation at the opening of one cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayDecision {
    pub day: f64,
    /// Patient whose arrival triggered the decision.
    pub patient: u32,
    pub pi_hat: Vec<f64>,
    pub prob_overdose_lowest: f64,
    pub pending: usize,
    pub action: ActionKind,
    /// 0-based dose recommended by the design.
    pub recommended: usize,
    /// 0-based dose actually given to the triggering patient.
    pub given: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub decisions: Vec<ReplayDecision>,
    /// Estimates with every patient fully followed.
    pub final_pi_hat: Vec<f64>,
    /// 0-based; `None` if the design would have stopped the trial.
    pub final_mtd: Option<usize>,
}

fn decision_seed(base: u64, index: usize) -> u64 {
    // splitmix64 step so that neighbouring decisions get unrelated chains
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decision at the first patient of each cohort; the first cohort starts at
/// `start_dose` and reports the prior.
pub fn replay(file: &ReplayFile, kind: DesignKind) -> Result<ReplayReport> {
    file.validate()?;
    if kind == DesignKind::CrmComp {
        return Err(Error::config(
            "CRM_comp waits for complete follow-up and cannot replay a conducted trial",
        ));
    }
    let horizon = days_to_months(file.horizon_days);
    let design = file.design.config(kind, horizon)?;
    let seed = design.mcmc.seed;
    let mut state = TrialState::new(design, 1, file.patients.len().max(1))?.with_start_dose(file.start_dose - 1)?;
    let mut decisions = Vec::new();
    let mut cohort = None;

    for p in &file.patients {
        let now = days_to_months(p.day_on);
        state.advance_clock(now)?;
        let given = p.dose - 1;
        let mut recommended = None;
        if cohort != Some(p.cohort) {
            cohort = Some(p.cohort);
            let estimate = state.estimate(now, decision_seed(seed, decisions.len()))?;
            let (action, target) = if decisions.is_empty() {
                (ActionKind::Stay, state.current_dose)
            } else {
                let a = next_dose(&state, &estimate);
                (a.kind, a.target_dose)
            };
            decisions.push(ReplayDecision {
                day: p.day_on,
                patient: p.id,
                pi_hat: estimate.pi_hat.clone(),
                prob_overdose_lowest: estimate.prob_overdose_lowest,
                pending: state.pending_at(now),
                action,
                recommended: target,
                given,
            });
            recommended = Some(target);
            // the clinicians' choice for the cohort stands, as in the trial
            state.override_dose(given)?;
        }
        let event = p.dlt_day.map(|d| days_to_months(d - p.day_on));
        state.enroll(given, event, recommended)?;
    }

    let final_pi_hat = final_estimate(&state)?;
    let final_mtd = if file.patients.is_empty() {
        Some(select_dose(&final_pi_hat, state.design.crm.target))
    } else {
        state.complete()?;
        final_mtd(&state)?
    };
    Ok(ReplayReport {
        decisions,
        final_pi_hat,
        final_mtd,
    })
}

/// Human-readable decision log.
pub fn format_report(file: &ReplayFile, report: &ReplayReport) -> String {
    let fmt_pi = |pi: &[f64]| pi.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ");
    let mut out = String::new();
    if !file.name.is_empty() {
        out.push_str(&format!("{}\n", file.name));
    }
    for d in &report.decisions {
        out.push_str(&format!(
            "day {:>5}  patient {:>3}  pending {:>2}  pi_hat = ({})  Pr(overdose at lowest) = {:.3}  {:?} -> {}  given {}\n",
            d.day,
            d.patient,
            d.pending,
            fmt_pi(&d.pi_hat),
            d.prob_overdose_lowest,
            d.action,
            file.dose_label(d.recommended),
            file.dose_label(d.given),
        ));
    }
    if report.decisions.is_empty() {
        out.push_str(&format!("prior pi_hat = ({})\n", fmt_pi(&report.final_pi_hat)));
    } else {
        out.push_str(&format!("final pi_hat = ({})\n", fmt_pi(&report.final_pi_hat)));
    }
    match report.final_mtd {
        Some(d) => out.push_str(&format!("MTD: {}\n", file.dose_label(d))),
        None => out.push_str("MTD: none (stopped for safety)\n"),
    }
    out
}
