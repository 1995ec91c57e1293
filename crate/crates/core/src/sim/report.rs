use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::{OperatingCharacteristics, Scenario};
use crate::error::{Error, Result};

/// Summary of one design under one scenario, ready for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    pub scenario: String,
    pub family: String,
    pub design: String,
    pub true_probs: Vec<f64>,
    pub oc: OperatingCharacteristics,
}

impl DesignResult {
    pub fn new(scenario: &Scenario, design: impl Into<String>, oc: OperatingCharacteristics) -> Self {
        DesignResult {
            scenario: scenario.name.clone(),
            family: scenario.family_label(),
            design: design.into(),
            true_probs: scenario.true_probs.clone(),
            oc,
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    family: &'a str,
    design: &'a str,
    dose: usize,
    true_prob: f64,
    selection_pct: f64,
    mean_patients: f64,
    none_pct: f64,
    n_mtd_plus: f64,
    n_mtd_plus_se: f64,
    mean_duration: f64,
    mean_toxicities: f64,
    true_mtd: usize,
    n_replications: usize,
}

/// One row per design and dose; summary columns repeat on every row.
pub fn write_csv<W: Write>(results: &[DesignResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        for dose in 0..r.true_probs.len() {
            w.serialize(CsvRow {
                scenario: &r.scenario,
                family: &r.family,
                design: &r.design,
                dose: dose + 1,
                true_prob: r.true_probs[dose],
                selection_pct: r.oc.selection_pct[dose],
                mean_patients: r.oc.mean_patients[dose],
                none_pct: r.oc.none_pct,
                n_mtd_plus: r.oc.n_mtd_plus,
                n_mtd_plus_se: r.oc.n_mtd_plus_se,
                mean_duration: r.oc.mean_duration,
                mean_toxicities: r.oc.mean_toxicities,
                true_mtd: r.oc.true_mtd + 1,
                n_replications: r.oc.n_replications,
            })
            .map_err(|e| Error::Io(format!("writing CSV: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::Io(format!("writing CSV: {e}")))
}

/// Aligned text table: selection percentages and mean patients per dose,
/// then None %, N_MTD+ and duration, grouped by scenario.
pub fn write_text_report(results: &[DesignResult]) -> String {
    let mut s = String::new();
    let mut last: Option<(&str, &str)> = None;
    for r in results {
        let key = (r.scenario.as_str(), r.family.as_str());
        if last != Some(key) {
            if last.is_some() {
                s.push('\n');
            }
            let _ = writeln!(
                s,
                "{} ({} event times, {} trials)",
                r.scenario, r.family, r.oc.n_replications
            );
            let _ = write!(s, "{:<20}", "Design");
            for d in 1..=r.true_probs.len() {
                let _ = write!(s, "{:>8}", d);
            }
            let _ = writeln!(s, "{:>8}{:>9}{:>10}", "None", "N_MTD+", "Duration");
            let _ = write!(s, "{:<20}", "Pr(toxicity)");
            for (i, p) in r.true_probs.iter().enumerate() {
                let mark = if i == r.oc.true_mtd { "*" } else { " " };
                let _ = write!(s, "{:>7.2}{mark}", p);
            }
            s.push('\n');
            last = Some(key);
        }
        let _ = write!(s, "{:<20}", format!("{} sel %", r.design));
        for v in &r.oc.selection_pct {
            let _ = write!(s, "{:>8.1}", v);
        }
        let _ = writeln!(
            s,
            "{:>8.1}{:>9.1}{:>10.1}",
            r.oc.none_pct, r.oc.n_mtd_plus, r.oc.mean_duration
        );
        let _ = write!(s, "{:<20}", format!("{} n", r.design));
        for v in &r.oc.mean_patients {
            let _ = write!(s, "{:>8.1}", v);
        }
        s.push('\n');
    }
    s
}
