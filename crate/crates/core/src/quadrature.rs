//! Composite Gauss–Legendre rules on finite intervals.

use crate::scalar::Real;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Roots of `P_n` are found by Newton iteration from the Chebyshev-like
/// initial guesses; accurate to machine precision for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A fixed composite rule: abscissae with matching weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<S> {
    pub points: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Real> Grid<S> {
    /// `panels` equal panels on `[lo, hi]`, each carrying an `order`-point rule.
    pub fn composite(lo: S, hi: S, panels: usize, order: usize) -> Self {
        let mut grid = Grid {
            points: Vec::new(),
            weights: Vec::new(),
        };
        grid.append(lo, hi, panels, order);
        grid
    }

    /// Like [`Grid::composite`] but with a panel edge forced at `split`, so
    /// integrals over `[lo, split]` are read off by summing the left nodes.
    pub fn composite_split(lo: S, hi: S, split: S, panels: usize, order: usize) -> Self {
        if !(split > lo && split < hi) {
            return Self::composite(lo, hi, panels, order);
        }
        let frac = ((split - lo) / (hi - lo)).to_f64().unwrap_or(0.5);
        let left = ((panels as f64 * frac).round() as usize).clamp(1, panels.max(2) - 1);
        let right = panels.max(2) - left;
        let mut grid = Grid {
            points: Vec::new(),
            weights: Vec::new(),
        };
        grid.append(lo, split, left, order);
        grid.append(split, hi, right, order);
        grid
    }

    fn append(&mut self, lo: S, hi: S, panels: usize, order: usize) {
        let (nodes, weights) = gauss_legendre(order);
        let width = (hi - lo) / S::from_count(panels);
        let half = width / S::lit(2.0);
        for p in 0..panels {
            let mid = lo + width * S::from_count(p) + half;
            for (x, w) in nodes.iter().zip(&weights) {
                self.points.push(mid + half * S::lit(*x));
                self.weights.push(half * S::lit(*w));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(S) -> S) -> S {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
