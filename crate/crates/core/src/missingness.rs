//! Monte-Carlo check that late-onset missingness is nonignorable: a patient
//! who will never be toxic is more likely to have a pending outcome than one
//! who will.

use rand::Rng;
use serde::Serialize;

use crate::calibration::{draw_event_time, ToxTimeLaw};
use crate::error::{Error, Result};

/// Distribution of the follow-up time `u` at the decision, independent of `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FollowUpLaw {
    Fixed(f64),
    /// `u ~ Uniform(0, T)`.
    Uniform,
}

impl FollowUpLaw {
    fn draw<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> f64 {
        match *self {
            FollowUpLaw::Fixed(u) => u,
            FollowUpLaw::Uniform => horizon * rng.random::<f64>(),
        }
    }

    /// `Pr(u < T)`.
    pub fn prob_open(&self, horizon: f64) -> f64 {
        match *self {
            FollowUpLaw::Fixed(u) => f64::from(u8::from(u < horizon)),
            FollowUpLaw::Uniform => 1.0,
        }
    }
}

/// One side of the comparison: estimate, its Monte-Carlo standard error and
/// the number of draws it rests on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MissingRate {
    pub estimate: f64,
    pub se: f64,
    pub draws: usize,
}

impl MissingRate {
    fn from_counts(missing: usize, total: usize) -> Option<Self> {
        (total > 0).then(|| {
            let p = missing as f64 / total as f64;
            MissingRate {
                estimate: p,
                se: (p * (1.0 - p) / total as f64).sqrt(),
                draws: total,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MissingnessCheck {
    /// `Pr(M = 1 | Y = 0)`; `None` if no draw had `Y = 0`.
    pub p0: Option<MissingRate>,
    /// `Pr(M = 1 | Y = 1)`; `None` if no draw had `Y = 1`.
    pub p1: Option<MissingRate>,
}

impl MissingnessCheck {
    /// `p0 - p1` in units of the standard error of the difference.
    pub fn margin_in_se(&self) -> Option<f64> {
        let (a, b) = (self.p0?, self.p1?);
        let se = (a.se * a.se + b.se * b.se).sqrt();
        Some((a.estimate - b.estimate) / se)
    }
}

/// Joint draws of `(t, u)`; `M = 1` when the window is still open (`u < T`)
/// and no toxicity has been seen by `u`.
pub fn missingness_check<R: Rng + ?Sized>(
    p: f64,
    law: &ToxTimeLaw,
    horizon: f64,
    followup: FollowUpLaw,
    n_draws: usize,
    rng: &mut R,
) -> Result<MissingnessCheck> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("toxicity probability {p} outside [0, 1]")));
    }
    if let FollowUpLaw::Fixed(u) = followup {
        if !(0.0..=horizon).contains(&u) {
            return Err(Error::domain(format!("follow-up {u} outside [0, {horizon}]")));
        }
    }
    let (mut n0, mut m0, mut n1, mut m1) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..n_draws {
        let t = draw_event_time(p, law, horizon, rng);
        let u = followup.draw(horizon, rng);
        let open = u < horizon;
        match t {
            None => {
                n0 += 1;
                m0 += usize::from(open);
            }
            Some(t) => {
                n1 += 1;
                m1 += usize::from(open && t > u);
            }
        }
    }
    Ok(MissingnessCheck {
        p0: MissingRate::from_counts(m0, n0),
        p1: MissingRate::from_counts(m1, n1),
    })
}
