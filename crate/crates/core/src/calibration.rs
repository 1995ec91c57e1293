//! Time-to-toxicity laws used to generate simulated trials, calibrated so that
//! `F(T) = p` and a chosen fraction of the events land in `(T/2, T]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest residual accepted from either calibration equation.
pub const CALIBRATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToxTimeFamily {
    Weibull,
    #[serde(alias = "log-logistic")]
    LogLogistic,
    Uniform,
}

impl std::fmt::Display for ToxTimeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ToxTimeFamily::Weibull => "weibull",
            ToxTimeFamily::LogLogistic => "loglogistic",
            ToxTimeFamily::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for ToxTimeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weibull" => Ok(ToxTimeFamily::Weibull),
            "loglogistic" | "log-logistic" => Ok(ToxTimeFamily::LogLogistic),
            "uniform" => Ok(ToxTimeFamily::Uniform),
            other => Err(Error::config(format!("unknown time-to-toxicity family `{other}`"))),
        }
    }
}

/// Unconditional event-time distribution; `F(T)` is the toxicity probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ToxTimeLaw {
    Weibull {
        shape: f64,
        scale: f64,
    },
    LogLogistic {
        shape: f64,
        scale: f64,
    },
    /// Event with probability `p`, then uniform on `(0, T]`.
    Uniform {
        p: f64,
        horizon: f64,
    },
}

impl ToxTimeLaw {
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            ToxTimeLaw::Weibull { shape, scale } => -(-(t / scale).powf(shape)).exp_m1(),
            ToxTimeLaw::LogLogistic { shape, scale } => 1.0 / (1.0 + (t / scale).powf(-shape)),
            ToxTimeLaw::Uniform { p, horizon } => p * (t / horizon).min(1.0),
        }
    }

    /// Inverse cdf for `q` in `(0, F(T)]`.
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            ToxTimeLaw::Weibull { shape, scale } => scale * (-(-q).ln_1p()).powf(1.0 / shape),
            ToxTimeLaw::LogLogistic { shape, scale } => scale * (q / (1.0 - q)).powf(1.0 / shape),
            ToxTimeLaw::Uniform { p, horizon } => horizon * q / p,
        }
    }

    /// Event time given toxicity within `(0, T]`, from one uniform draw `v` in `(0, 1]`.
    pub fn conditional_time(&self, v: f64, horizon: f64) -> f64 {
        let ft = self.cdf(horizon);
        self.quantile(v * ft).clamp(f64::MIN_POSITIVE, horizon)
    }
}

fn check_inputs(p: f64, horizon: f64, late: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Calibration(format!("toxicity probability {p} is not in (0, 1)")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Calibration(format!("horizon {horizon} must be positive")));
    }
    if !(late > 0.0 && late < 1.0) {
        return Err(Error::Calibration(format!("late fraction {late} is not in (0, 1)")));
    }
    Ok(())
}

/// Bisection for a root of a decreasing function on `[lo, hi]`.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(Error::Calibration(format!(
            "root not bracketed on [{lo}, {hi}] (f = {flo:.3e}, {fhi:.3e})"
        )));
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const SHAPE_RANGE: (f64, f64) = (1e-4, 200.0);

fn verify(law: ToxTimeLaw, p: f64, horizon: f64, late: f64) -> Result<ToxTimeLaw> {
    let ft = law.cdf(horizon);
    let early = law.cdf(horizon / 2.0) / ft;
    let r1 = (ft - p).abs();
    let r2 = (early - (1.0 - late)).abs();
    if r1 < CALIBRATION_TOLERANCE && r2 < CALIBRATION_TOLERANCE {
        Ok(law)
    } else {
        Err(Error::Calibration(format!(
            "residuals {r1:.2e}, {r2:.2e} exceed tolerance"
        )))
    }
}

/// Weibull `(shape, scale)` with `F(T) = p` and `F(T/2) / F(T) = 1 - late`.
pub fn calibrate_weibull(p: f64, horizon: f64, late: f64) -> Result<(f64, f64)> {
    check_inputs(p, horizon, late)?;
    let h = -(-p).ln_1p();
    let scale_for = |k: f64| horizon / h.powf(1.0 / k);
    let early_share = |k: f64| -(-h * 0.5f64.powf(k)).exp_m1() / p;
    let shape = bisect_decreasing(|k| early_share(k) - (1.0 - late), SHAPE_RANGE.0, SHAPE_RANGE.1)?;
    let scale = scale_for(shape);
    verify(ToxTimeLaw::Weibull { shape, scale }, p, horizon, late)?;
    Ok((shape, scale))
}

/// Log-logistic `(shape, scale)` with `F(T) = p` and `F(T/2) / F(T) = 1 - late`.
pub fn calibrate_loglogistic(p: f64, horizon: f64, late: f64) -> Result<(f64, f64)> {
    check_inputs(p, horizon, late)?;
    let odds = p / (1.0 - p);
    let scale_for = |b: f64| horizon / odds.powf(1.0 / b);
    let early_share = |b: f64| {
        let o = odds * 0.5f64.powf(b);
        o / (1.0 + o) / p
    };
    let shape = bisect_decreasing(|b| early_share(b) - (1.0 - late), SHAPE_RANGE.0, SHAPE_RANGE.1)?;
    let scale = scale_for(shape);
    verify(ToxTimeLaw::LogLogistic { shape, scale }, p, horizon, late)?;
    Ok((shape, scale))
}

pub fn calibrate(family: ToxTimeFamily, p: f64, horizon: f64, late: f64) -> Result<ToxTimeLaw> {
    match family {
        ToxTimeFamily::Weibull => {
            let (shape, scale) = calibrate_weibull(p, horizon, late)?;
            Ok(ToxTimeLaw::Weibull { shape, scale })
        }
        ToxTimeFamily::LogLogistic => {
            let (shape, scale) = calibrate_loglogistic(p, horizon, late)?;
            Ok(ToxTimeLaw::LogLogistic { shape, scale })
        }
        ToxTimeFamily::Uniform => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Calibration(format!("toxicity probability {p} is not in [0, 1]")));
            }
            Ok(ToxTimeLaw::Uniform { p, horizon })
        }
    }
}

/// Latent outcome for one patient: `None` when no toxicity occurs within `T`.
///
/// Always consumes exactly two uniforms so that designs run on a shared seed
/// see the same latent data per patient slot whatever dose it receives.
pub fn draw_event_time<R: Rng + ?Sized>(p: f64, law: &ToxTimeLaw, horizon: f64, rng: &mut R) -> Option<f64> {
    let u: f64 = rng.random();
    let v: f64 = 1.0 - rng.random::<f64>();
    (u < p).then(|| law.conditional_time(v, horizon))
}
