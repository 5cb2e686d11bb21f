//! Uniform one-dimensional grids with piecewise-linear interpolation, used by
//! the inventory and cash-balance dynamic programs.

use serde::{Deserialize, Serialize};

/// Grid and quadrature resolution of a one-dimensional DP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Number of grid points for the state or post-decision level.
    pub points: usize,
    /// Number of quantile nodes for every expectation over demand and over
    /// the initial state.
    pub quadrature: usize,
}

impl GridConfig {
    /// Resolution of the reference optimum.
    pub const ORACLE: GridConfig = GridConfig { points: 2001, quadrature: 2000 };
    /// Cheaper resolution for repeated policy evaluation inside optimizer
    /// loops and scans.
    pub const EVAL: GridConfig = GridConfig { points: 801, quadrature: 800 };
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::ORACLE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2 && hi > lo, "grid needs at least two points and hi > lo");
        Grid { lo, hi, n }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.hi
        } else {
            self.lo + k as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }

    /// Linear interpolation of `values` (one per grid point), constant
    /// beyond either end.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        if x <= self.lo {
            return values[0];
        }
        if x >= self.hi {
            return values[self.n - 1];
        }
        let pos = (x - self.lo) / self.step();
        let k = (pos.floor() as usize).min(self.n - 2);
        let w = pos - k as f64;
        values[k] + w * (values[k + 1] - values[k])
    }
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimizer of a convex `f` over `[lo, hi]`: grid argmin over `values`
/// (sampled at `grid` points inside `[lo, hi]`) refined by golden section in
/// the neighbouring cells. Returns `(argmin, min, at_boundary)`.
pub fn refine_argmin(grid: &Grid, values: &[f64], f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64, bool) {
    let mut best = None;
    for k in 0..grid.n {
        let x = grid.point(k);
        if x < lo - 1e-12 || x > hi + 1e-12 {
            continue;
        }
        if best.is_none_or(|(_, v)| values[k] < v) {
            best = Some((k, values[k]));
        }
    }
    let (k, _) = best.expect("grid intersects the feasible interval");
    let a = if k == 0 { lo } else { grid.point(k - 1).max(lo) };
    let b = if k + 1 == grid.n { hi } else { grid.point(k + 1).min(hi) };
    let (mut x, mut v) = golden_min(&f, a, b, 1e-10 * (1.0 + hi.abs() + lo.abs()));
    for end in [lo, hi] {
        let fe = f(end);
        if fe <= v {
            x = end;
            v = fe;
        }
    }
    let tol = 1e-7 * (hi - lo);
    (x, v, x <= lo + tol || x >= hi - tol)
}
