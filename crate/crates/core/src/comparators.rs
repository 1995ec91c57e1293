//! Benchmark designs sharing the CRM working model: observed-data-only CRM,
//! time-to-event CRM with weighted likelihood, and the complete-data CRM that
//! suspends accrual until every outcome is known.

use serde::{Deserialize, Serialize};

use crate::crm::{ln_one_minus_pi, CrmConfig, DoseTally, GridPosterior, Likelihood, Skeleton};
use crate::da::{DoseEstimate, TrialSnapshot};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiteWeighting {
    /// `w = u / T`.
    #[default]
    Linear,
    /// Cheung & Chappell (2000): weights interpolated between the ordered
    /// standardized event times of the observed toxicities.
    Adaptive,
}

impl std::str::FromStr for TiteWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(TiteWeighting::Linear),
            "adaptive" => Ok(TiteWeighting::Adaptive),
            other => Err(Error::config(format!("unknown TITE weighting `{other}`"))),
        }
    }
}

/// Patients with `(dose, toxic, weight)`; toxic patients always carry weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedData<S> {
    pub entries: Vec<(usize, bool, S)>,
}

impl<S: Real> Likelihood<S> for WeightedData<S> {
    fn log_likelihood(&self, a: S, skeleton: &Skeleton<S>) -> S {
        let ea = a.exp();
        self.entries
            .iter()
            .map(|&(d, y, w)| {
                let scaled = ea * skeleton.log_alpha(d);
                if y {
                    w.ln() + scaled
                } else if w >= S::one() {
                    ln_one_minus_pi(scaled)
                } else if w <= S::zero() {
                    S::zero()
                } else {
                    (-(w * scaled.exp())).ln_1p()
                }
            })
            .sum()
    }
}

/// Follow-up weights for every patient in the snapshot.
pub fn tite_weights<S: Real>(snapshot: &TrialSnapshot<S>, weighting: TiteWeighting) -> Vec<S> {
    let horizon = snapshot.horizon();
    let patients = snapshot.patients();
    let mut weights: Vec<S> = patients
        .iter()
        .map(|p| {
            if p.event_time.is_some() {
                S::one()
            } else {
                (p.followup / horizon).min(S::one())
            }
        })
        .collect();
    if weighting == TiteWeighting::Adaptive {
        let mut support: Vec<S> = patients
            .iter()
            .filter_map(|p| p.event_time.map(|t| t / horizon))
            .collect();
        support.sort_by(|a, b| a.partial_cmp(b).expect("finite event times"));
        let z = support.len();
        if z > 0 {
            let zp1 = S::from_count(z + 1);
            for (w, p) in weights.iter_mut().zip(patients) {
                if p.event_time.is_some() || *w >= S::one() {
                    continue;
                }
                let u = *w;
                let m = support.iter().take_while(|&&s| s <= u).count();
                *w = if m == 0 {
                    u / (support[0] * zp1)
                } else if m == z {
                    let last = support[z - 1];
                    let tail = if last < S::one() {
                        (u - last) / (S::one() - last)
                    } else {
                        S::zero()
                    };
                    (S::from_count(z) + tail) / zp1
                } else {
                    let (lo, hi) = (support[m - 1], support[m]);
                    (S::from_count(m) + (u - lo) / (hi - lo)) / zp1
                };
                *w = w.max(S::zero()).min(S::one());
            }
        }
    }
    weights
}

fn observed_tally<S: Real>(snapshot: &TrialSnapshot<S>) -> DoseTally {
    snapshot.observed_tally()
}

fn estimate_from<S: Real, L: Likelihood<S>>(lik: &L, crm: &CrmConfig<S>) -> Result<DoseEstimate<S>> {
    let post = GridPosterior::new(lik, crm)?;
    Ok(DoseEstimate {
        pi_hat: post.pi_means(&crm.skeleton),
        prob_overdose_lowest: post.prob_overdose_lowest(),
    })
}

/// Posterior means using only patients whose outcome is known.
pub fn crm_obs_posterior<S: Real>(snapshot: &TrialSnapshot<S>, config: &CrmConfig<S>) -> Result<Vec<S>> {
    Ok(crm_obs_estimate(snapshot, config)?.pi_hat)
}

pub fn crm_obs_estimate<S: Real>(snapshot: &TrialSnapshot<S>, config: &CrmConfig<S>) -> Result<DoseEstimate<S>> {
    estimate_from(&observed_tally(snapshot), config)
}

pub fn tite_data<S: Real>(snapshot: &TrialSnapshot<S>, weighting: TiteWeighting) -> WeightedData<S> {
    let weights = tite_weights(snapshot, weighting);
    WeightedData {
        entries: snapshot
            .patients()
            .iter()
            .zip(weights)
            .map(|(p, w)| (p.dose, p.event_time.is_some(), w))
            .collect(),
    }
}

/// Posterior means under the weighted likelihood `prod (w pi)^y (1 - w pi)^(1 - y)`.
pub fn tite_posterior<S: Real>(
    snapshot: &TrialSnapshot<S>,
    config: &CrmConfig<S>,
    weighting: TiteWeighting,
) -> Result<Vec<S>> {
    Ok(tite_estimate(snapshot, config, weighting)?.pi_hat)
}

pub fn tite_estimate<S: Real>(
    snapshot: &TrialSnapshot<S>,
    config: &CrmConfig<S>,
    weighting: TiteWeighting,
) -> Result<DoseEstimate<S>> {
    estimate_from(&tite_data(snapshot, weighting), config)
}

/// Complete-data CRM; refuses snapshots that still have pending outcomes.
pub fn crm_comp_estimate<S: Real>(snapshot: &TrialSnapshot<S>, config: &CrmConfig<S>) -> Result<DoseEstimate<S>> {
    let pending = snapshot.missing_count();
    if pending > 0 {
        return Err(Error::State(format!(
            "complete-data CRM asked to decide with {pending} pending outcomes"
        )));
    }
    crm_obs_estimate(snapshot, config)
}

/// Earliest time the next cohort may be treated under accrual suspension:
/// the later of its scheduled arrival and the moment every enrolled patient's
/// outcome is resolved (toxicity observed or follow-up complete).
pub fn crm_comp_schedule<S: Real>(scheduled: S, enrolled: impl IntoIterator<Item = (S, Option<S>)>, horizon: S) -> S {
    enrolled
        .into_iter()
        .map(|(arrival, event)| arrival + event.map_or(horizon, |t| t.min(horizon)))
        .fold(scheduled, S::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crm::{posterior_pi_means, ToxDataset};
    use crate::da::SnapshotPatient;
    use crate::toxtime::HazardModel;

    fn crm() -> CrmConfig<f64> {
        CrmConfig::new(Skeleton::new(vec![0.08, 0.12, 0.20, 0.30, 0.40, 0.50]).unwrap(), 0.3).unwrap()
    }

    fn snap(patients: Vec<(usize, f64, Option<f64>)>) -> TrialSnapshot<f64> {
        let patients = patients
            .into_iter()
            .map(|(dose, followup, event_time)| SnapshotPatient {
                dose,
                followup,
                event_time,
            })
            .collect();
        TrialSnapshot::new(patients, crm(), HazardModel::equal(3.0, 9, 2.0).unwrap()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn obs_with_nothing_observed_is_prior() {
        let s = snap(vec![(0, 0.5, None), (0, 1.0, None)]);
        let prior = posterior_pi_means(&ToxDataset::new(), &crm()).unwrap();
        assert!(close(&crm_obs_posterior(&s, &crm()).unwrap(), &prior, 1e-15));
    }

    #[test]
    fn obs_drops_pending_patients() {
        // patient 1 toxic at its dose, patients 2 and 3 pending
        let s = snap(vec![(0, 2.0, Some(0.7)), (1, 1.0, None), (1, 0.5, None)]);
        let single = ToxDataset::from_entries(vec![(0, true)], 6).unwrap();
        let exact = posterior_pi_means(&single, &crm()).unwrap();
        assert!(close(&crm_obs_posterior(&s, &crm()).unwrap(), &exact, 1e-15));
    }

    #[test]
    fn fully_followed_designs_agree() {
        let s = snap(vec![
            (0, 3.0, None),
            (1, 3.0, Some(2.5)),
            (1, 3.0, None),
            (2, 1.0, Some(1.0)),
        ]);
        let data = ToxDataset::from_entries(vec![(0, false), (1, true), (1, false), (2, true)], 6).unwrap();
        let exact = posterior_pi_means(&data, &crm()).unwrap();
        assert!(close(&crm_obs_posterior(&s, &crm()).unwrap(), &exact, 1e-12));
        for w in [TiteWeighting::Linear, TiteWeighting::Adaptive] {
            assert!(close(&tite_posterior(&s, &crm(), w).unwrap(), &exact, 1e-12));
        }
    }

    #[test]
    fn linear_weight_term() {
        let s = snap(vec![(2, 1.5, None)]);
        let data = tite_data(&s, TiteWeighting::Linear);
        assert_eq!(data.entries, vec![(2, false, 0.5)]);
        let ll = data.log_likelihood(0.0, &crm().skeleton);
        assert!((ll - (1.0 - 0.5 * 0.2f64).ln()).abs() < 1e-15);
        let zero = tite_data(&snap(vec![(2, 0.0, None)]), TiteWeighting::Linear);
        assert_eq!(zero.log_likelihood(0.4, &crm().skeleton), 0.0);
    }

    #[test]
    fn adaptive_weights_interpolate_event_times() {
        // events at 1.5 and 2.4 (standardized 0.5, 0.8); z = 2
        let s = snap(vec![
            (0, 3.0, Some(1.5)),
            (0, 3.0, Some(2.4)),
            (1, 0.6, None),  // u/T = 0.2 < 0.5: 0.2 / (0.5 * 3)
            (1, 1.95, None), // 0.65: (1 + 0.5) / 3
            (1, 2.7, None),  // 0.9: (2 + 0.5) / 3
            (1, 3.0, None),
        ]);
        let w = tite_weights(&s, TiteWeighting::Adaptive);
        let expected = [1.0, 1.0, 0.2 / 1.5, 1.5 / 3.0, 2.5 / 3.0, 1.0];
        assert!(close(&w, &expected, 1e-12), "{w:?}");
        // without observed toxicities the adaptive scheme is linear
        let plain = snap(vec![(1, 0.6, None)]);
        assert!(close(&tite_weights(&plain, TiteWeighting::Adaptive), &[0.2], 1e-15));
    }

    #[test]
    fn weights_monotone_in_followup() {
        for scheme in [TiteWeighting::Linear, TiteWeighting::Adaptive] {
            let pts: Vec<(usize, f64, Option<f64>)> = (0..=30)
                .map(|i| (1, i as f64 * 0.1, None))
                .chain([(0, 3.0, Some(1.0)), (0, 3.0, Some(2.0))])
                .collect();
            let w = tite_weights(&snap(pts), scheme);
            assert!(w[..31].windows(2).all(|p| p[1] >= p[0]));
            assert_eq!(w[30], 1.0);
        }
    }

    #[test]
    fn comp_refuses_pending() {
        assert!(crm_comp_estimate(&snap(vec![(0, 1.0, None)]), &crm()).is_err());
    }

    #[test]
    fn comp_schedule_examples() {
        assert_eq!(crm_comp_schedule(1.0, [(0.5, None), (0.5, None)], 3.0), 3.5);
        // resolved early by toxicity
        assert_eq!(crm_comp_schedule(1.0, [(0.5, Some(1.0)), (0.5, Some(2.0))], 3.0), 2.5);
        // instantaneous assessment: plain accrual
        assert_eq!(crm_comp_schedule(1.0, [(0.5, None)], 0.0), 1.0);
    }
}
