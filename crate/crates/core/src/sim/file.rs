//! TOML scenario files.
//!
//! ```toml
//! name = "scenario1"
//! true_probs = [0.10, 0.15, 0.30, 0.45, 0.60, 0.70]
//! family = "weibull"          # or families = ["weibull", "loglogistic", ...]
//! late_fraction = 0.7
//! assessment_period = 3.0
//! interarrival = 0.5
//! cohort_size = 3
//! n_cohorts = 12
//!
//! [design]
//! skeleton = [0.08, 0.12, 0.20, 0.30, 0.40, 0.50]
//! target = 0.3
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Accrual, Scenario};
use crate::calibration::ToxTimeFamily;
use crate::comparators::TiteWeighting;
use crate::crm::{CrmConfig, Skeleton};
use crate::da::McmcConfig;
use crate::error::{Error, Result};
use crate::toxtime::HazardModel;
use crate::trial::{DesignConfig, DesignKind};

fn default_late() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub true_probs: Vec<f64>,
    #[serde(default)]
    pub family: Option<ToxTimeFamily>,
    #[serde(default)]
    pub families: Option<Vec<ToxTimeFamily>>,
    #[serde(default = "default_late")]
    pub late_fraction: f64,
    pub assessment_period: f64,
    pub interarrival: f64,
    pub cohort_size: usize,
    pub n_cohorts: usize,
    #[serde(default)]
    pub accrual: Accrual,
    pub design: DesignSettings,
}

fn default_prior_variance() -> f64 {
    2.0
}

fn default_stop() -> f64 {
    0.96
}

fn default_k() -> usize {
    HazardModel::<f64>::DEFAULT_INTERVALS
}

fn default_c() -> f64 {
    HazardModel::<f64>::DEFAULT_C
}

/// Model settings shared by every design run on a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSettings {
    pub skeleton: Vec<f64>,
    pub target: f64,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_stop")]
    pub stop_threshold: f64,
    #[serde(default = "default_k")]
    pub k_partitions: usize,
    #[serde(default = "default_c")]
    pub c_constant: f64,
    #[serde(default)]
    pub tite_weighting: TiteWeighting,
    #[serde(default)]
    pub escalation_safety_rule: bool,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

impl DesignSettings {
    pub fn config(&self, kind: DesignKind, horizon: f64) -> Result<DesignConfig<f64>> {
        let crm = CrmConfig::new(Skeleton::new(self.skeleton.clone())?, self.target)?
            .with_prior_variance(self.prior_variance)?
            .with_stop_threshold(self.stop_threshold)?;
        let hazard = HazardModel::equal(horizon, self.k_partitions, self.c_constant)?;
        // plain "tite" follows the file; an explicit adaptive request stands
        let kind = match kind {
            DesignKind::TiteCrm(TiteWeighting::Linear) => DesignKind::TiteCrm(self.tite_weighting),
            k => k,
        };
        let mut design = DesignConfig::new(kind, crm, hazard);
        design.mcmc = self.mcmc;
        design.escalation_safety_rule = self.escalation_safety_rule;
        design.mcmc.validate()?;
        Ok(design)
    }
}

impl ScenarioFile {
    pub fn scenario(&self) -> Result<Scenario> {
        let families = match (&self.family, &self.families) {
            (Some(f), None) => vec![*f; self.true_probs.len()],
            (None, Some(fs)) => fs.clone(),
            (None, None) => return Err(Error::config("scenario needs `family` or `families`")),
            (Some(_), Some(_)) => return Err(Error::config("give either `family` or `families`, not both")),
        };
        Ok(Scenario::with_families(
            self.name.clone(),
            self.true_probs.clone(),
            families,
            self.late_fraction,
            self.assessment_period,
            self.interarrival,
            self.cohort_size,
            self.n_cohorts,
        )?
        .with_accrual(self.accrual))
    }
}

/// Parses and validates a scenario file. Syntax errors carry line and column.
pub fn parse_scenario_file(text: &str) -> Result<(Scenario, DesignSettings)> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config(format!("scenario file: {e}")))?;
    let scenario = file.scenario()?;
    file.design.config(DesignKind::DaCrm, scenario.horizon)?;
    Ok((scenario, file.design))
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<(Scenario, DesignSettings)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_file(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
