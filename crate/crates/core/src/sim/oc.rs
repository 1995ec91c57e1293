use serde::Serialize;

use super::TrialOutcome;
use crate::crm::select_dose;
use crate::error::{Error, Result};

/// Monte-Carlo summary of one design under one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingCharacteristics {
    /// Percentage of trials selecting each dose.
    pub selection_pct: Vec<f64>,
    /// Percentage of trials stopped without selecting a dose.
    pub none_pct: f64,
    pub mean_patients: Vec<f64>,
    /// Mean number of patients treated above the true MTD.
    pub n_mtd_plus: f64,
    pub n_mtd_plus_se: f64,
    /// Mean calendar length in months.
    pub mean_duration: f64,
    pub mean_toxicities: f64,
    pub true_mtd: usize,
    pub n_replications: usize,
}

/// The dose whose true probability is closest to the target.
pub fn true_mtd(true_probs: &[f64], target: f64) -> usize {
    select_dose(true_probs, target)
}

/// Patients in one trial treated at doses more toxic than the true MTD.
pub fn n_mtd_plus(outcome: &TrialOutcome, true_probs: &[f64], target: f64) -> usize {
    let limit = true_probs[true_mtd(true_probs, target)];
    outcome.doses.iter().filter(|&&d| true_probs[d] > limit).count()
}

fn mean_se(xs: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn operating_characteristics(
    results: &[TrialOutcome],
    true_probs: &[f64],
    target: f64,
) -> Result<OperatingCharacteristics> {
    if results.is_empty() {
        return Err(Error::config("no simulated trials to summarize"));
    }
    let levels = true_probs.len();
    let n = results.len() as f64;
    let mut selected = vec![0usize; levels];
    let mut none = 0usize;
    let mut patients = vec![0usize; levels];
    for r in results {
        match r.mtd {
            Some(d) => selected[d] += 1,
            None => none += 1,
        }
        for (acc, c) in patients.iter_mut().zip(r.patients_per_dose(levels)) {
            *acc += c;
        }
    }
    let above: Vec<f64> = results
        .iter()
        .map(|r| n_mtd_plus(r, true_probs, target) as f64)
        .collect();
    let (n_mtd_plus, n_mtd_plus_se) = mean_se(above.iter().copied());
    Ok(OperatingCharacteristics {
        selection_pct: selected.iter().map(|&c| 100.0 * c as f64 / n).collect(),
        none_pct: 100.0 * none as f64 / n,
        mean_patients: patients.iter().map(|&c| c as f64 / n).collect(),
        n_mtd_plus,
        n_mtd_plus_se,
        mean_duration: results.iter().map(|r| r.duration).sum::<f64>() / n,
        mean_toxicities: results
            .iter()
            .map(|r| r.toxic.iter().filter(|&&t| t).count() as f64)
            .sum::<f64>()
            / n,
        true_mtd: true_mtd(true_probs, target),
        n_replications: results.len(),
    })
}

/// Mean and standard error of the per-replication difference in N_MTD+,
/// `a - b`, for two designs run on the same seeds.
pub fn paired_difference(
    a: &[TrialOutcome],
    b: &[TrialOutcome],
    true_probs: &[f64],
    target: f64,
) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::config(
            "paired comparison needs two equal runs of at least two trials",
        ));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| n_mtd_plus(x, true_probs, target) as f64 - n_mtd_plus(y, true_probs, target) as f64)
        .collect();
    Ok(mean_se(diffs.iter().copied()))
}
