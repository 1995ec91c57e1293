//! Piecewise-exponential time-to-toxicity model for patients who will
//! experience toxicity within the assessment window `[0, T]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Boundaries `0 = h_0 < h_1 < ... < h_K = T` of the assessment window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition<S> {
    boundaries: Vec<S>,
}

impl<S: Real> Partition<S> {
    /// `K` intervals of equal width on `[0, T]`.
    pub fn equal(horizon: S, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::config("partition needs at least one interval"));
        }
        if !(horizon > S::zero() && horizon.is_finite()) {
            return Err(Error::config(format!("assessment horizon {horizon} must be positive")));
        }
        let k = S::from_count(intervals);
        let mut boundaries: Vec<S> = (0..=intervals).map(|i| horizon * S::from_count(i) / k).collect();
        boundaries[intervals] = horizon;
        Ok(Partition { boundaries })
    }

    pub fn from_boundaries(boundaries: Vec<S>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != S::zero() {
            return Err(Error::config(
                "boundaries must start at 0 and contain at least one interval",
            ));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) || !boundaries.iter().all(|b| b.is_finite()) {
            return Err(Error::config("boundaries must be finite and strictly increasing"));
        }
        Ok(Partition { boundaries })
    }

    pub fn intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn horizon(&self) -> S {
        self.boundaries[self.intervals()]
    }

    pub fn boundaries(&self) -> &[S] {
        &self.boundaries
    }

    pub fn width(&self, k: usize) -> S {
        self.boundaries[k + 1] - self.boundaries[k]
    }

    /// Time spent in each interval by someone followed for `x`.
    ///
    /// `x = T` counts as completing the last interval, so the exposures always
    /// sum to `x`.
    pub fn exposure(&self, x: S) -> Result<Vec<S>> {
        self.check_time(x)?;
        Ok((0..self.intervals())
            .map(|k| {
                let lo = self.boundaries[k];
                (x - lo).max(S::zero()).min(self.width(k))
            })
            .collect())
    }

    /// Interval (0-based) containing `x`, with the right end `T` assigned to the last one.
    pub fn interval_of(&self, x: S) -> Result<usize> {
        self.check_time(x)?;
        let k = self.boundaries[1..].iter().take_while(|&&h| x >= h).count();
        Ok(k.min(self.intervals() - 1))
    }

    fn check_time(&self, x: S) -> Result<()> {
        if x >= S::zero() && x <= self.horizon() {
            Ok(())
        } else {
            Err(Error::domain(format!("time {x} outside [0, {}]", self.horizon())))
        }
    }
}

/// Hazard of a uniform event time on `[0, T]` evaluated at each interval midpoint:
/// `K / (T (K - k + 0.5))` for equal widths.
pub fn prior_hazard_means<S: Real>(intervals: usize, horizon: S) -> Vec<S> {
    let k_total = S::from_count(intervals);
    (1..=intervals)
        .map(|k| k_total / (horizon * (k_total - S::from_count(k) + S::lit(0.5))))
        .collect()
}

fn midpoint_uniform_hazards<S: Real>(partition: &Partition<S>) -> Vec<S> {
    let t = partition.horizon();
    let two = S::lit(2.0);
    partition
        .boundaries()
        .windows(2)
        .map(|w| S::one() / (t - (w[0] + w[1]) / two))
        .collect()
}

/// Piecewise-constant hazards with their independent gamma priors
/// `Ga(prior_mean / C, 1 / C)` (shape, rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel<S> {
    pub partition: Partition<S>,
    pub lambdas: Vec<S>,
    pub prior_means: Vec<S>,
    /// Prior variance is `C` times the prior mean.
    pub c: S,
}

impl<S: Real> HazardModel<S> {
    pub const DEFAULT_C: f64 = 2.0;
    pub const DEFAULT_INTERVALS: usize = 9;

    /// Uniform-onset prior on `partition`; hazards start at their prior means.
    pub fn uniform_prior(partition: Partition<S>, c: S) -> Result<Self> {
        if !(c > S::zero() && c.is_finite()) {
            return Err(Error::config(format!("variance constant C = {c} must be positive")));
        }
        let prior_means = midpoint_uniform_hazards(&partition);
        Ok(HazardModel {
            lambdas: prior_means.clone(),
            prior_means,
            partition,
            c,
        })
    }

    pub fn equal(horizon: S, intervals: usize, c: S) -> Result<Self> {
        Self::uniform_prior(Partition::equal(horizon, intervals)?, c)
    }

    pub fn horizon(&self) -> S {
        self.partition.horizon()
    }

    pub fn prior_shape(&self, k: usize) -> S {
        self.prior_means[k] / self.c
    }

    pub fn prior_rate(&self) -> S {
        S::one() / self.c
    }
}

/// What has been seen of one patient: `x = min(u, t)` and whether `t <= u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowUpRecord<S> {
    pub observed_time: S,
    pub toxic_observed: bool,
    pub followup: S,
}

impl<S: Real> FollowUpRecord<S> {
    pub fn new(followup: S, event_time: Option<S>, horizon: S) -> Result<Self> {
        if !(followup >= S::zero() && followup <= horizon) {
            return Err(Error::domain(format!("follow-up {followup} outside [0, {horizon}]")));
        }
        match event_time {
            Some(t) if t <= followup => {
                if t < S::zero() {
                    return Err(Error::domain(format!("negative event time {t}")));
                }
                Ok(FollowUpRecord {
                    observed_time: t,
                    toxic_observed: true,
                    followup,
                })
            }
            _ => Ok(FollowUpRecord {
                observed_time: followup,
                toxic_observed: false,
                followup,
            }),
        }
    }
}

pub fn exposure_s<S: Real>(x: S, partition: &Partition<S>) -> Result<Vec<S>> {
    partition.exposure(x)
}

/// One flag per interval; set only at the event interval of an observed toxicity.
pub fn event_indicators<S: Real>(record: &FollowUpRecord<S>, partition: &Partition<S>) -> Result<Vec<bool>> {
    let mut flags = vec![false; partition.intervals()];
    if record.toxic_observed {
        flags[partition.interval_of(record.observed_time)?] = true;
    }
    Ok(flags)
}

/// `exp(-sum_k lambda_k s_k(x))`.
pub fn survival_to<S: Real>(x: S, lambdas: &[S], partition: &Partition<S>) -> Result<S> {
    let s = partition.exposure(x)?;
    Ok(survival_from_exposure(lambdas, &s))
}

#[inline]
pub(crate) fn survival_from_exposure<S: Real>(lambdas: &[S], exposure: &[S]) -> S {
    let h: S = lambdas.iter().zip(exposure).map(|(&l, &s)| l * s).sum();
    (-h).exp()
}

/// Shape and rate of the conjugate gamma update for one hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams<S> {
    pub shape: S,
    pub rate: S,
}

/// `Ga(prior_mean_k / C + sum_i delta_ik, 1 / C + sum_i y_i s_ik)` for every interval.
pub fn lambda_posterior_params<S: Real>(
    imputed_y: &[bool],
    records: &[FollowUpRecord<S>],
    model: &HazardModel<S>,
) -> Result<Vec<GammaParams<S>>> {
    if imputed_y.len() != records.len() {
        return Err(Error::domain(format!(
            "{} imputed outcomes for {} records",
            imputed_y.len(),
            records.len()
        )));
    }
    let part = &model.partition;
    let mut params: Vec<GammaParams<S>> = (0..part.intervals())
        .map(|k| GammaParams {
            shape: model.prior_shape(k),
            rate: model.prior_rate(),
        })
        .collect();
    for (&y, rec) in imputed_y.iter().zip(records) {
        if rec.toxic_observed && !y {
            return Err(Error::domain("observed toxicity imputed as non-toxic"));
        }
        if rec.toxic_observed {
            let k = part.interval_of(rec.observed_time)?;
            params[k].shape = params[k].shape + S::one();
        }
        if y {
            for (p, s) in params.iter_mut().zip(part.exposure(rec.observed_time)?) {
                p.rate = p.rate + s;
            }
        }
    }
    Ok(params)
}

pub fn sample_lambda_posterior<S: Real, R: Rng + ?Sized>(
    imputed_y: &[bool],
    records: &[FollowUpRecord<S>],
    model: &HazardModel<S>,
    rng: &mut R,
) -> Result<Vec<S>> {
    Ok(lambda_posterior_params(imputed_y, records, model)?
        .into_iter()
        .map(|p| S::sample_gamma(p.shape, p.rate, rng))
        .collect())
}
