//! Data-augmentation Gibbs sampler for the CRM with pending outcomes.
//!
//! Each sweep imputes the outcome of every patient whose assessment is still
//! open (I-step), then updates `a` by random-walk Metropolis on the completed
//! data and draws the piecewise-exponential hazards from their conjugate gamma
//! full conditionals (P-step).
//!
//! Posterior means of the dose toxicity probabilities are reported as the
//! average of the complete-data posterior means over the imputed datasets
//! visited by the chain, each evaluated by quadrature. When nothing is pending
//! every sweep sees the same dataset and the estimate reduces exactly to the
//! complete-data CRM.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crm::{CrmConfig, DoseTally, Likelihood, TallyGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::toxtime::{survival_from_exposure, FollowUpRecord, HazardModel};

/// Missingness indicator: pending iff no event by `u` and `u < T`.
pub fn missing_indicator<S: Real>(event_time: Option<S>, followup: S, horizon: S) -> bool {
    let event_seen = matches!(event_time, Some(t) if t <= followup);
    !event_seen && followup < horizon
}

/// Full-conditional probability that a pending outcome is a toxicity:
/// `pi S / (1 - pi + pi S)`.
pub fn imputation_probability<S: Real>(pi: S, survival: S) -> S {
    let num = pi * survival;
    let den = S::one() - pi + num;
    if den > S::zero() {
        num / den
    } else {
        S::zero()
    }
}

/// One patient as seen at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPatient<S> {
    pub dose: usize,
    pub followup: S,
    /// Present iff a toxicity has been observed, in which case it is `<= followup`.
    pub event_time: Option<S>,
}

/// The data available at one decision point plus the models in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Real + Serialize", deserialize = "S: Real + Deserialize<'de>"))]
pub struct TrialSnapshot<S> {
    patients: Vec<SnapshotPatient<S>>,
    pub crm: CrmConfig<S>,
    pub hazard: HazardModel<S>,
}

impl<S: Real> TrialSnapshot<S> {
    pub fn new(patients: Vec<SnapshotPatient<S>>, crm: CrmConfig<S>, hazard: HazardModel<S>) -> Result<Self> {
        let horizon = hazard.horizon();
        for (i, p) in patients.iter().enumerate() {
            crm.skeleton.check_dose(p.dose)?;
            if !(p.followup >= S::zero() && p.followup <= horizon) {
                return Err(Error::domain(format!(
                    "patient {i}: follow-up {} outside [0, {horizon}]",
                    p.followup
                )));
            }
            if let Some(t) = p.event_time {
                if !(t >= S::zero() && t <= p.followup) {
                    return Err(Error::domain(format!(
                        "patient {i}: event time {t} is not within the follow-up {}",
                        p.followup
                    )));
                }
            }
        }
        Ok(TrialSnapshot { patients, crm, hazard })
    }

    pub fn patients(&self) -> &[SnapshotPatient<S>] {
        &self.patients
    }

    pub fn horizon(&self) -> S {
        self.hazard.horizon()
    }

    pub fn is_missing(&self, i: usize) -> bool {
        let p = &self.patients[i];
        missing_indicator(p.event_time, p.followup, self.horizon())
    }

    pub fn missing_count(&self) -> usize {
        (0..self.patients.len()).filter(|&i| self.is_missing(i)).count()
    }

    pub fn record(&self, i: usize) -> FollowUpRecord<S> {
        let p = &self.patients[i];
        FollowUpRecord::new(p.followup, p.event_time, self.horizon()).expect("validated at construction")
    }

    /// Outcomes of patients whose assessment is closed.
    pub fn observed_tally(&self) -> DoseTally {
        let mut t = DoseTally::zeros(self.crm.levels());
        for (i, p) in self.patients.iter().enumerate() {
            if !self.is_missing(i) {
                t.add(p.dose, p.event_time.is_some());
            }
        }
        t
    }
}

/// Chain settings. The defaults suit the one-dimensional target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_burnin: usize,
    pub n_samples: usize,
    /// Initial random-walk standard deviation; tuned during burn-in only.
    pub proposal_sd: f64,
    /// Metropolis updates of `a` per Gibbs sweep.
    pub mh_steps: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_burnin: 2000,
            n_samples: 5000,
            proposal_sd: 0.5,
            mh_steps: 4,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        McmcConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::config(format!(
                "n_samples = {} (need at least 100)",
                self.n_samples
            )));
        }
        if !(self.proposal_sd > 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::config("proposal_sd must be positive"));
        }
        if self.mh_steps == 0 {
            return Err(Error::config("mh_steps must be at least 1"));
        }
        Ok(())
    }
}

/// What a dose decision needs from any posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseEstimate<S> {
    pub pi_hat: Vec<S>,
    pub prob_overdose_lowest: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary<S> {
    /// Posterior means of the toxicity probabilities.
    pub pi_hat: Vec<S>,
    /// `Pr(pi_1 > target | data)`.
    pub prob_overdose_lowest: S,
    /// Plain Monte-Carlo average of `alpha_d ^ exp(a)` over the kept draws.
    pub pi_hat_draws: Vec<S>,
    pub a_draws: Vec<S>,
    /// One row of hazards per kept sweep.
    pub lambda_draws: Vec<Vec<S>>,
    /// Mean fraction of pending outcomes imputed as toxic.
    pub imputation_rate: S,
    pub acceptance_rate: S,
    pub final_proposal_sd: S,
}

impl<S: Real> PosteriorSummary<S> {
    pub fn estimate(&self) -> DoseEstimate<S> {
        DoseEstimate {
            pi_hat: self.pi_hat.clone(),
            prob_overdose_lowest: self.prob_overdose_lowest,
        }
    }

    pub fn mean_a(&self) -> S {
        self.a_draws.iter().copied().sum::<S>() / S::from_count(self.a_draws.len())
    }
}

struct Pending<S> {
    dose: usize,
    exposure: Vec<S>,
}

/// Snapshot reduced to what the sampler touches each sweep.
struct Prepared<S> {
    observed: DoseTally,
    pending: Vec<Pending<S>>,
    pending_per_dose: Vec<u32>,
    /// Gamma shape: prior plus observed events per interval.
    shapes: Vec<S>,
    /// Gamma rate before adding exposure of imputed toxicities.
    base_rates: Vec<S>,
}

impl<S: Real> Prepared<S> {
    fn new(snapshot: &TrialSnapshot<S>) -> Result<Self> {
        let model = &snapshot.hazard;
        let part = &model.partition;
        let k = part.intervals();
        let mut shapes: Vec<S> = (0..k).map(|i| model.prior_shape(i)).collect();
        let mut base_rates = vec![model.prior_rate(); k];
        let mut pending = Vec::new();
        let mut pending_per_dose = vec![0; snapshot.crm.levels()];
        for (i, p) in snapshot.patients().iter().enumerate() {
            let rec = snapshot.record(i);
            if rec.toxic_observed {
                let k = part.interval_of(rec.observed_time)?;
                shapes[k] = shapes[k] + S::one();
                for (r, s) in base_rates.iter_mut().zip(part.exposure(rec.observed_time)?) {
                    *r = *r + s;
                }
            } else if snapshot.is_missing(i) {
                pending.push(Pending {
                    dose: p.dose,
                    exposure: part.exposure(rec.followup)?,
                });
                pending_per_dose[p.dose] += 1;
            }
        }
        Ok(Prepared {
            observed: snapshot.observed_tally(),
            pending,
            pending_per_dose,
            shapes,
            base_rates,
        })
    }

    fn completed(&self, imputed_toxic: &[u32]) -> DoseTally {
        let mut t = self.observed.clone();
        self.fill_completed(imputed_toxic, &mut t);
        t
    }

    fn fill_completed(&self, imputed_toxic: &[u32], out: &mut DoseTally) {
        for d in 0..imputed_toxic.len() {
            out.toxic[d] = self.observed.toxic[d] + imputed_toxic[d];
            out.non_toxic[d] = self.observed.non_toxic[d] + self.pending_per_dose[d] - imputed_toxic[d];
        }
    }
}

fn log_target<S: Real>(tally: &DoseTally, a: S, crm: &CrmConfig<S>) -> S {
    tally.log_likelihood(a, &crm.skeleton) - a * a / (S::lit(2.0) * crm.prior_variance)
}

/// Draws the pending outcomes given `(a, lambdas)`, in patient order.
pub fn impute_missing<S: Real, R: Rng + ?Sized>(
    snapshot: &TrialSnapshot<S>,
    a: S,
    lambdas: &[S],
    rng: &mut R,
) -> Result<Vec<bool>> {
    if !a.is_finite() {
        return Err(Error::domain("non-finite a"));
    }
    if lambdas.len() != snapshot.hazard.partition.intervals() || lambdas.iter().any(|&l| !(l > S::zero())) {
        return Err(Error::domain("hazards must be positive, one per interval"));
    }
    let part = &snapshot.hazard.partition;
    let ea = a.exp();
    let mut out = Vec::new();
    for (i, p) in snapshot.patients().iter().enumerate() {
        if !snapshot.is_missing(i) {
            continue;
        }
        let pi = (ea * snapshot.crm.skeleton.log_alpha(p.dose)).exp();
        let surv = survival_from_exposure(lambdas, &part.exposure(p.followup)?);
        out.push(S::sample_unit(rng) < imputation_probability(pi, surv));
    }
    Ok(out)
}

const ADAPT_WINDOW: usize = 50;

/// Runs one data-augmentation chain from `a = 0` and the prior-mean hazards.
pub fn run_da_chain<S: Real>(snapshot: &TrialSnapshot<S>, mcmc: &McmcConfig) -> Result<PosteriorSummary<S>> {
    mcmc.validate()?;
    let crm = &snapshot.crm;
    let levels = crm.levels();
    let prep = Prepared::new(snapshot)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);

    let mut a = S::zero();
    let mut lambdas = snapshot.hazard.prior_means.clone();
    let mut sd = S::lit(mcmc.proposal_sd);
    let (sd_min, sd_max) = (S::lit(1e-3), S::lit(20.0));

    let mut imputed = vec![0u32; levels];
    let mut tally = prep.observed.clone();
    let mut pis = vec![S::zero(); levels];
    let unit_gammas: Vec<_> = prep.shapes.iter().map(|&shape| S::unit_gamma(shape)).collect();
    let mut rates = prep.base_rates.clone();
    let mut visits: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut a_draws = Vec::with_capacity(mcmc.n_samples);
    let mut lambda_draws = Vec::with_capacity(mcmc.n_samples);
    let mut imputed_toxic_total = 0usize;
    let (mut window_accepts, mut window_tries) = (0usize, 0usize);
    let (mut kept_accepts, mut kept_tries) = (0usize, 0usize);

    let total = mcmc.n_burnin + mcmc.n_samples;
    for sweep in 0..total {
        // I-step
        imputed.iter_mut().for_each(|c| *c = 0);
        rates.copy_from_slice(&prep.base_rates);
        let ea = a.exp();
        for (d, pi) in pis.iter_mut().enumerate() {
            *pi = (ea * crm.skeleton.log_alpha(d)).exp();
        }
        let mut sweep_toxic = 0;
        for p in &prep.pending {
            let pi = pis[p.dose];
            let surv = survival_from_exposure(&lambdas, &p.exposure);
            if S::sample_unit(&mut rng) < imputation_probability(pi, surv) {
                imputed[p.dose] += 1;
                sweep_toxic += 1;
                for (r, &s) in rates.iter_mut().zip(&p.exposure) {
                    *r = *r + s;
                }
            }
        }
        prep.fill_completed(&imputed, &mut tally);

        // P-step (i): a | completed data
        let mut current = log_target(&tally, a, crm);
        if !current.is_finite() {
            return Err(Error::Numerical(format!("log posterior not finite at a = {a}")));
        }
        let mut accepts = 0;
        for _ in 0..mcmc.mh_steps {
            let proposal = a + sd * S::sample_std_normal(&mut rng);
            let candidate = log_target(&tally, proposal, crm);
            if candidate.is_finite() && S::sample_unit(&mut rng).ln() < candidate - current {
                a = proposal;
                current = candidate;
                accepts += 1;
            }
        }

        // P-step (ii): hazards | completed data
        for (k, l) in lambdas.iter_mut().enumerate() {
            *l = (S::sample_unit_gamma(&unit_gammas[k], &mut rng) / rates[k]).max(S::min_positive_value());
        }

        if sweep < mcmc.n_burnin {
            window_accepts += accepts;
            window_tries += mcmc.mh_steps;
            if (sweep + 1) % ADAPT_WINDOW == 0 {
                let rate = window_accepts as f64 / window_tries as f64;
                if rate < 0.2 {
                    sd = (sd * S::lit(0.7)).max(sd_min);
                } else if rate > 0.5 {
                    sd = (sd * S::lit(1.4)).min(sd_max);
                }
                window_accepts = 0;
                window_tries = 0;
            }
        } else {
            kept_accepts += accepts;
            kept_tries += mcmc.mh_steps;
            a_draws.push(a);
            lambda_draws.push(lambdas.clone());
            imputed_toxic_total += sweep_toxic;
            *visits.entry(imputed.clone()).or_insert(0) += 1;
        }
    }

    let n = S::from_count(mcmc.n_samples);
    let mut pi_hat = vec![S::zero(); levels];
    let mut prob_overdose = S::zero();
    let grid = TallyGrid::new(crm);
    for (key, count) in &visits {
        let (means, over) = grid.summarize(&prep.completed(key))?;
        let w = S::from_count(*count) / n;
        for (acc, p) in pi_hat.iter_mut().zip(means) {
            *acc = *acc + w * p;
        }
        prob_overdose = prob_overdose + w * over;
    }

    let mut pi_hat_draws = vec![S::zero(); levels];
    for &a in &a_draws {
        let ea = a.exp();
        for (d, acc) in pi_hat_draws.iter_mut().enumerate() {
            *acc = *acc + (ea * crm.skeleton.log_alpha(d)).exp();
        }
    }
    pi_hat_draws.iter_mut().for_each(|p| *p = *p / n);

    let pending = prep.pending.len();
    let imputation_rate = if pending == 0 {
        S::zero()
    } else {
        S::from_count(imputed_toxic_total) / (n * S::from_count(pending))
    };

    Ok(PosteriorSummary {
        pi_hat,
        prob_overdose_lowest: prob_overdose,
        pi_hat_draws,
        a_draws,
        lambda_draws,
        imputation_rate,
        acceptance_rate: S::from_count(kept_accepts) / S::from_count(kept_tries.max(1)),
        final_proposal_sd: sd,
    })
}
