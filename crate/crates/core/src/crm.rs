//! One-parameter power-model CRM.
//!
//! The working model is `pi_d = alpha_d ^ exp(a)` with `a ~ N(0, sigma^2)`.
//! Posterior quantities for complete (or weighted) data are computed by a
//! fixed composite Gauss–Legendre rule over `a`, which makes them
//! deterministic and bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Grid;
use crate::scalar::Real;

/// Half-width of the integration range in prior standard deviations.
const RANGE_SDS: f64 = 8.0;
const PANELS: usize = 50;
const ORDER: usize = 8;

/// Prespecified toxicity probabilities `0 < alpha_1 < ... < alpha_J < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>")]
#[serde(bound(serialize = "S: Real + Serialize", deserialize = "S: Real + Deserialize<'de>"))]
pub struct Skeleton<S> {
    alphas: Vec<S>,
    log_alphas: Vec<S>,
}

impl<S: Real> Skeleton<S> {
    pub fn new(alphas: Vec<S>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidSkeleton("no dose levels".into()));
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > S::zero() && a < S::one()) {
                return Err(Error::InvalidSkeleton(format!(
                    "alpha[{}] = {a} is not in (0, 1)",
                    i + 1
                )));
            }
        }
        if let Some(i) = alphas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSkeleton(format!(
                "alpha[{}] = {} does not exceed alpha[{}] = {}",
                i + 2,
                alphas[i + 1],
                i + 1,
                alphas[i]
            )));
        }
        let log_alphas = alphas.iter().map(|a| a.ln()).collect();
        Ok(Skeleton { alphas, log_alphas })
    }

    pub fn levels(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[S] {
        &self.alphas
    }

    pub fn alpha(&self, dose: usize) -> S {
        self.alphas[dose]
    }

    pub fn log_alpha(&self, dose: usize) -> S {
        self.log_alphas[dose]
    }

    pub fn check_dose(&self, dose: usize) -> Result<()> {
        if dose < self.levels() {
            Ok(())
        } else {
            Err(Error::DoseOutOfRange {
                index: dose,
                levels: self.levels(),
            })
        }
    }
}

impl<S: Real> TryFrom<Vec<S>> for Skeleton<S> {
    type Error = Error;

    fn try_from(v: Vec<S>) -> Result<Self> {
        Skeleton::new(v)
    }
}

impl<S> From<Skeleton<S>> for Vec<S> {
    fn from(s: Skeleton<S>) -> Vec<S> {
        s.alphas
    }
}

/// Working-model configuration shared by every design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Real + Serialize", deserialize = "S: Real + Deserialize<'de>"))]
pub struct CrmConfig<S> {
    pub skeleton: Skeleton<S>,
    /// Target toxicity probability.
    pub target: S,
    /// Variance of the normal prior on `a`.
    pub prior_variance: S,
    /// Stop for safety once `Pr(pi_1 > target | data)` exceeds this.
    pub stop_threshold: S,
}

impl<S: Real> CrmConfig<S> {
    pub const DEFAULT_PRIOR_VARIANCE: f64 = 2.0;
    pub const DEFAULT_STOP_THRESHOLD: f64 = 0.96;

    pub fn new(skeleton: Skeleton<S>, target: S) -> Result<Self> {
        let config = CrmConfig {
            skeleton,
            target,
            prior_variance: S::lit(Self::DEFAULT_PRIOR_VARIANCE),
            stop_threshold: S::lit(Self::DEFAULT_STOP_THRESHOLD),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_prior_variance(mut self, variance: S) -> Result<Self> {
        self.prior_variance = variance;
        self.validate()?;
        Ok(self)
    }

    pub fn with_stop_threshold(mut self, threshold: S) -> Result<Self> {
        self.stop_threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: S| x > S::zero() && x < S::one();
        if !unit(self.target) {
            return Err(Error::config(format!("target {} is not in (0, 1)", self.target)));
        }
        if !(self.prior_variance > S::zero() && self.prior_variance.is_finite()) {
            return Err(Error::config(format!(
                "prior variance {} must be positive",
                self.prior_variance
            )));
        }
        if !unit(self.stop_threshold) {
            return Err(Error::config(format!(
                "stop threshold {} is not in (0, 1)",
                self.stop_threshold
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.skeleton.levels()
    }

    /// `Pr(pi_1 > target)` holds exactly for `a` below this value.
    pub fn overdose_boundary(&self) -> S {
        (self.target.ln() / self.skeleton.log_alpha(0)).ln()
    }
}

/// Binary outcomes as `(dose index, toxic)` pairs. Dose indices are 0-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToxDataset {
    entries: Vec<(usize, bool)>,
}

impl ToxDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(usize, bool)>, levels: usize) -> Result<Self> {
        if let Some(&(d, _)) = entries.iter().find(|(d, _)| *d >= levels) {
            return Err(Error::DoseOutOfRange { index: d, levels });
        }
        Ok(ToxDataset { entries })
    }

    pub fn push(&mut self, dose: usize, toxic: bool) {
        self.entries.push((dose, toxic));
    }

    pub fn entries(&self) -> &[(usize, bool)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tally(&self, levels: usize) -> DoseTally {
        let mut t = DoseTally::zeros(levels);
        for &(d, y) in &self.entries {
            t.add(d, y);
        }
        t
    }
}

/// Per-dose outcome counts; a sufficient statistic for the binary likelihood.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DoseTally {
    pub toxic: Vec<u32>,
    pub non_toxic: Vec<u32>,
}

impl DoseTally {
    pub fn zeros(levels: usize) -> Self {
        DoseTally {
            toxic: vec![0; levels],
            non_toxic: vec![0; levels],
        }
    }

    pub fn add(&mut self, dose: usize, toxic: bool) {
        if toxic {
            self.toxic[dose] += 1;
        } else {
            self.non_toxic[dose] += 1;
        }
    }

    pub fn total(&self) -> u32 {
        self.toxic.iter().sum::<u32>() + self.non_toxic.iter().sum::<u32>()
    }
}

/// Anything that supplies a log-likelihood for `a` under the power model.
pub trait Likelihood<S: Real> {
    fn log_likelihood(&self, a: S, skeleton: &Skeleton<S>) -> S;
}

/// `ln(1 - alpha^exp(a))` given `scaled = exp(a) * ln(alpha)`, floored away from `-inf`.
#[inline]
pub(crate) fn ln_one_minus_pi<S: Real>(scaled: S) -> S {
    (-scaled.exp_m1()).max(S::log_floor()).ln()
}

impl<S: Real> Likelihood<S> for DoseTally {
    fn log_likelihood(&self, a: S, skeleton: &Skeleton<S>) -> S {
        let ea = a.exp();
        let mut ll = S::zero();
        for d in 0..skeleton.levels() {
            let (tox, non) = (self.toxic[d], self.non_toxic[d]);
            if tox == 0 && non == 0 {
                continue;
            }
            let scaled = ea * skeleton.log_alpha(d);
            if tox > 0 {
                ll = ll + S::from_u32(tox).unwrap() * scaled;
            }
            if non > 0 {
                ll = ll + S::from_u32(non).unwrap() * ln_one_minus_pi(scaled);
            }
        }
        ll
    }
}

impl<S: Real> Likelihood<S> for ToxDataset {
    fn log_likelihood(&self, a: S, skeleton: &Skeleton<S>) -> S {
        log_likelihood(a, self, skeleton)
    }
}

/// `pi_d = alpha_d ^ exp(a)`.
pub fn dose_tox_prob<S: Real>(a: S, skeleton: &Skeleton<S>, dose: usize) -> Result<S> {
    skeleton.check_dose(dose)?;
    Ok((a.exp() * skeleton.log_alpha(dose)).exp())
}

/// Binary log-likelihood of `a`; zero for an empty dataset.
pub fn log_likelihood<S: Real>(a: S, data: &ToxDataset, skeleton: &Skeleton<S>) -> S {
    let ea = a.exp();
    data.entries
        .iter()
        .map(|&(d, y)| {
            let scaled = ea * skeleton.log_alpha(d);
            if y {
                scaled
            } else {
                ln_one_minus_pi(scaled)
            }
        })
        .sum()
}

fn log_prior<S: Real>(a: S, variance: S) -> S {
    -a * a / (S::lit(2.0) * variance)
}

/// Normalized posterior of `a` discretized on a quadrature grid.
#[derive(Debug, Clone)]
pub struct GridPosterior<S> {
    grid: Grid<S>,
    /// Number of leading nodes with `a` below the overdose boundary.
    below_boundary: usize,
}

impl<S: Real> GridPosterior<S> {
    pub fn new<L: Likelihood<S> + ?Sized>(likelihood: &L, config: &CrmConfig<S>) -> Result<Self> {
        let sd = config.prior_variance.sqrt();
        let half = S::lit(RANGE_SDS) * sd;
        let boundary = config.overdose_boundary();
        let mut grid = Grid::composite_split(-half, half, boundary, PANELS, ORDER);
        let logs: Vec<S> = grid
            .points
            .iter()
            .map(|&a| likelihood.log_likelihood(a, &config.skeleton) + log_prior(a, config.prior_variance))
            .collect();
        let peak = logs.iter().copied().fold(S::neg_infinity(), S::max);
        if !peak.is_finite() {
            return Err(Error::Numerical(
                "posterior density is not finite anywhere on the grid".into(),
            ));
        }
        for (w, l) in grid.weights.iter_mut().zip(&logs) {
            *w = *w * (*l - peak).exp();
        }
        let total: S = grid.weights.iter().copied().sum();
        if !(total > S::zero() && total.is_finite()) {
            return Err(Error::Numerical("posterior normalizing constant underflowed".into()));
        }
        for w in grid.weights.iter_mut() {
            *w = *w / total;
        }
        let below_boundary = grid.points.iter().take_while(|&&a| a < boundary).count();
        Ok(GridPosterior { grid, below_boundary })
    }

    /// Posterior expectation of `f(a)`.
    pub fn expect(&self, f: impl Fn(S) -> S) -> S {
        self.grid.integrate(f)
    }

    pub fn mean_a(&self) -> S {
        self.expect(|a| a)
    }

    /// Posterior means `E[alpha_d ^ exp(a) | data]` for every dose.
    pub fn pi_means(&self, skeleton: &Skeleton<S>) -> Vec<S> {
        let mut out = vec![S::zero(); skeleton.levels()];
        for (&a, &w) in self.grid.points.iter().zip(&self.grid.weights) {
            let ea = a.exp();
            for (d, o) in out.iter_mut().enumerate() {
                *o = *o + w * (ea * skeleton.log_alpha(d)).exp();
            }
        }
        out
    }

    /// `Pr(pi_1 > target | data)`.
    pub fn prob_overdose_lowest(&self) -> S {
        self.grid.weights[..self.below_boundary].iter().copied().sum()
    }
}

/// Quadrature grid with the per-dose log-probabilities tabulated once, for
/// evaluating many tally posteriors under the same configuration.
#[derive(Debug, Clone)]
pub struct TallyGrid<S> {
    grid: Grid<S>,
    below_boundary: usize,
    log_prior: Vec<S>,
    /// Row-major `[node][dose]`.
    ln_pi: Vec<S>,
    ln_one_minus: Vec<S>,
    pi: Vec<S>,
    levels: usize,
}

impl<S: Real> TallyGrid<S> {
    pub fn new(config: &CrmConfig<S>) -> Self {
        let sd = config.prior_variance.sqrt();
        let half = S::lit(RANGE_SDS) * sd;
        let boundary = config.overdose_boundary();
        let grid = Grid::composite_split(-half, half, boundary, PANELS, ORDER);
        let levels = config.levels();
        let n = grid.len() * levels;
        let (mut ln_pi, mut ln_one_minus, mut pi) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &a in &grid.points {
            let ea = a.exp();
            for d in 0..levels {
                let scaled = ea * config.skeleton.log_alpha(d);
                ln_pi.push(scaled);
                ln_one_minus.push(ln_one_minus_pi(scaled));
                pi.push(scaled.exp());
            }
        }
        TallyGrid {
            log_prior: grid
                .points
                .iter()
                .map(|&a| log_prior(a, config.prior_variance))
                .collect(),
            below_boundary: grid.points.iter().take_while(|&&a| a < boundary).count(),
            grid,
            ln_pi,
            ln_one_minus,
            pi,
            levels,
        }
    }

    /// Posterior means of every `pi_d` and `Pr(pi_1 > target)` given `tally`.
    pub fn summarize(&self, tally: &DoseTally) -> Result<(Vec<S>, S)> {
        let counts: Vec<(S, S)> = (0..self.levels)
            .map(|d| {
                (
                    S::from_u32(tally.toxic[d]).unwrap(),
                    S::from_u32(tally.non_toxic[d]).unwrap(),
                )
            })
            .collect();
        let logs: Vec<S> = (0..self.grid.len())
            .map(|i| {
                let row = i * self.levels;
                counts.iter().enumerate().fold(self.log_prior[i], |acc, (d, &(t, n))| {
                    acc + t * self.ln_pi[row + d] + n * self.ln_one_minus[row + d]
                })
            })
            .collect();
        let peak = logs.iter().copied().fold(S::neg_infinity(), S::max);
        if !peak.is_finite() {
            return Err(Error::Numerical(
                "posterior density is not finite anywhere on the grid".into(),
            ));
        }
        let weights: Vec<S> = self
            .grid
            .weights
            .iter()
            .zip(&logs)
            .map(|(&w, &l)| w * (l - peak).exp())
            .collect();
        let total: S = weights.iter().copied().sum();
        if !(total > S::zero() && total.is_finite()) {
            return Err(Error::Numerical("posterior normalizing constant underflowed".into()));
        }
        let mut means = vec![S::zero(); self.levels];
        for (i, &w) in weights.iter().enumerate() {
            for (d, m) in means.iter_mut().enumerate() {
                *m = *m + w * self.pi[i * self.levels + d];
            }
        }
        means.iter_mut().for_each(|m| *m = *m / total);
        let over = weights[..self.below_boundary].iter().copied().sum::<S>() / total;
        Ok((means, over))
    }
}

/// Posterior means of the dose toxicity probabilities by quadrature.
pub fn posterior_pi_means<S: Real>(data: &ToxDataset, config: &CrmConfig<S>) -> Result<Vec<S>> {
    let levels = config.levels();
    if let Some(&(d, _)) = data.entries().iter().find(|(d, _)| *d >= levels) {
        return Err(Error::DoseOutOfRange { index: d, levels });
    }
    let post = GridPosterior::new(&data.tally(levels), config)?;
    Ok(post.pi_means(&config.skeleton))
}

/// Dose whose estimate is closest to `target`; ties go to the lower dose.
pub fn select_dose<S: Real>(pi_hat: &[S], target: S) -> usize {
    let mut best = 0;
    let mut best_dist = S::infinity();
    for (d, &p) in pi_hat.iter().enumerate() {
        let dist = (p - target).abs();
        if dist < best_dist {
            best = d;
            best_dist = dist;
        }
    }
    best
}

/// Fraction of posterior draws of `a` for which `pi_1 > target`.
pub fn prob_overdose_lowest<S: Real>(draws: &[S], config: &CrmConfig<S>) -> Result<S> {
    if draws.is_empty() {
        return Err(Error::domain("no posterior draws"));
    }
    let log_alpha = config.skeleton.log_alpha(0);
    let hits = draws
        .iter()
        .filter(|&&a| (a.exp() * log_alpha).exp() > config.target)
        .count();
    Ok(S::from_count(hits) / S::from_count(draws.len()))
}
