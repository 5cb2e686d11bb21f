use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PolicyParams;

/// Membership tolerance used by `contains` and by the active-set detection
/// of the stationarity measure.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Per-period feasible region `Theta_t`. The full parameter set is the
/// product of one of these per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// Coordinatewise bounds over the block in column-major order.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Block is the pair `(a, b)` with `lo <= a <= b <= hi`.
    OrderedBox { lo: f64, hi: f64 },
    /// Every row of the block lies on the probability simplex with entries
    /// at least `p_min`.
    TruncatedSimplex { n: usize, p_min: f64 },
    /// Largest singular value of the block at most `radius`.
    SpectralBall { radius: f64 },
}

impl FeasibleSet {
    pub fn uniform_box(len: usize, lo: f64, hi: f64) -> Self {
        FeasibleSet::Box { lo: vec![lo; len], hi: vec![hi; len] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::InvalidSet("box bounds have different lengths".into()));
                }
                if let Some(i) = lo.iter().zip(hi).position(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidSet(format!("box coordinate {i} has lo > hi")));
                }
            }
            FeasibleSet::OrderedBox { lo, hi } => {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidSet(format!("ordered box needs lo <= hi, got [{lo}, {hi}]")));
                }
            }
            FeasibleSet::TruncatedSimplex { n, p_min } => {
                if *n == 0 || !(*p_min >= 0.0) || (*n as f64) * p_min > 1.0 + 1e-12 {
                    return Err(Error::InvalidSet(format!(
                        "truncated simplex needs n >= 1 and 0 <= n * p_min <= 1 (n = {n}, p_min = {p_min})"
                    )));
                }
            }
            FeasibleSet::SpectralBall { radius } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidSet(format!("spectral ball radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    fn check_block(&self, x: &DMatrix<f64>) -> Result<()> {
        match self {
            FeasibleSet::Box { lo, .. } if lo.len() != x.len() => {
                Err(Error::InvalidPolicy(format!("block has {} entries, box has {}", x.len(), lo.len())))
            }
            FeasibleSet::OrderedBox { .. } if x.len() != 2 => {
                Err(Error::InvalidPolicy(format!("ordered-box block must have 2 entries, got {}", x.len())))
            }
            FeasibleSet::TruncatedSimplex { n, .. } if x.ncols() != *n => {
                Err(Error::InvalidPolicy(format!("simplex block must have {} columns, got {}", n, x.ncols())))
            }
            _ => Ok(()),
        }
    }

    /// Euclidean (Frobenius) projection of one block.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.validate()?;
        self.check_block(x)?;
        let mut out = x.clone();
        match self {
            FeasibleSet::Box { lo, hi } => {
                for (k, v) in out.iter_mut().enumerate() {
                    *v = v.clamp(lo[k], hi[k]);
                }
            }
            FeasibleSet::OrderedBox { lo, hi } => {
                let (a, b) = (x[0], x[1]);
                let (pa, pb) = if a <= b {
                    (a.clamp(*lo, *hi), b.clamp(*lo, *hi))
                } else {
                    let mid = (0.5 * (a + b)).clamp(*lo, *hi);
                    (mid, mid)
                };
                out[0] = pa;
                out[1] = pb;
            }
            FeasibleSet::TruncatedSimplex { n, p_min } => {
                let mass = (1.0 - *n as f64 * p_min).max(0.0);
                for r in 0..x.nrows() {
                    let shifted: Vec<f64> = (0..*n).map(|i| x[(r, i)] - p_min).collect();
                    let q = project_simplex(&shifted, mass);
                    for i in 0..*n {
                        out[(r, i)] = p_min + q[i];
                    }
                }
            }
            FeasibleSet::SpectralBall { radius } => {
                let svd = x.clone().svd(true, true);
                if svd.singular_values.iter().all(|s| *s <= *radius) {
                    return Ok(out);
                }
                let mut svd = svd;
                for s in svd.singular_values.iter_mut() {
                    *s = s.min(*radius);
                }
                out = svd.recompose().map_err(|e| Error::numerical(e.to_string()))?;
            }
        }
        Ok(out)
    }

    pub fn contains(&self, x: &DMatrix<f64>, tol: f64) -> bool {
        if self.check_block(x).is_err() {
            return false;
        }
        match self {
            FeasibleSet::Box { lo, hi } => x.iter().enumerate().all(|(k, v)| *v >= lo[k] - tol && *v <= hi[k] + tol),
            FeasibleSet::OrderedBox { lo, hi } => x[0] >= lo - tol && x[1] <= hi + tol && x[0] <= x[1] + tol,
            FeasibleSet::TruncatedSimplex { n, p_min } => (0..x.nrows()).all(|r| {
                let row_sum: f64 = (0..*n).map(|i| x[(r, i)]).sum();
                (row_sum - 1.0).abs() <= tol.max(1e-12 * *n as f64) && (0..*n).all(|i| x[(r, i)] >= p_min - tol)
            }),
            FeasibleSet::SpectralBall { radius } => spectral_norm(x) <= radius + tol,
        }
    }

    /// `min_{v in N(x)} ||g + v||` where `N(x)` is the normal cone at `x`.
    ///
    /// Exact for the three polyhedral kinds. For the spectral ball the
    /// gradient mapping `||x - P(x - eta g)|| / eta` is returned instead;
    /// it coincides with `||g||` in the interior and vanishes exactly at
    /// stationary points.
    pub fn projected_grad_norm(&self, x: &DMatrix<f64>, g: &DMatrix<f64>, eta: f64) -> Result<f64> {
        Ok(self.projected_grad_norm_sq(x, g, eta)?.sqrt())
    }

    pub fn projected_grad_norm_sq(&self, x: &DMatrix<f64>, g: &DMatrix<f64>, eta: f64) -> Result<f64> {
        self.validate()?;
        self.check_block(x)?;
        if x.shape() != g.shape() {
            return Err(Error::InvalidArgument("gradient and point have different shapes".into()));
        }
        if !self.contains(x, 1e-8) {
            return Err(Error::InfeasiblePoint(format!("{self:?}")));
        }
        let tol = FEASIBILITY_TOL;
        let value = match self {
            FeasibleSet::Box { lo, hi } => x
                .iter()
                .zip(g.iter())
                .enumerate()
                .map(|(k, (&xv, &gv))| {
                    let at_lo = xv <= lo[k] + tol;
                    let at_hi = xv >= hi[k] - tol;
                    match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (true, false) => gv.min(0.0).powi(2),
                        (false, true) => gv.max(0.0).powi(2),
                        (false, false) => gv * gv,
                    }
                })
                .sum(),
            FeasibleSet::OrderedBox { lo, hi } => {
                let (a, b) = (x[0], x[1]);
                let mut gens: Vec<[f64; 2]> = Vec::with_capacity(3);
                if a <= lo + tol {
                    gens.push([-1.0, 0.0]);
                }
                if a >= b - tol {
                    gens.push([1.0, -1.0]);
                }
                if b >= hi - tol {
                    gens.push([0.0, 1.0]);
                }
                cone_distance_sq_2d([g[0], g[1]], &gens)
            }
            FeasibleSet::TruncatedSimplex { n, p_min } => (0..x.nrows())
                .map(|r| {
                    let gr: Vec<f64> = (0..*n).map(|i| g[(r, i)]).collect();
                    let active: Vec<bool> = (0..*n).map(|i| x[(r, i)] <= p_min + tol).collect();
                    simplex_cone_distance_sq(&gr, &active)
                })
                .sum(),
            FeasibleSet::SpectralBall { .. } => {
                if !(eta > 0.0) {
                    return Err(Error::InvalidArgument(format!("gradient-mapping step must be positive, got {eta}")));
                }
                let stepped = x - g * eta;
                let p = self.project(&stepped)?;
                (x - p).norm_squared() / (eta * eta)
            }
        };
        Ok(value)
    }

    /// Uniform sample over the set (for the spectral ball: Gaussian
    /// direction rescaled to a radius drawn with the volume law).
    pub fn sample<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            FeasibleSet::Box { lo, hi } => {
                let mut m = DMatrix::zeros(rows, cols);
                for (k, v) in m.iter_mut().enumerate() {
                    *v = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
                }
                m
            }
            FeasibleSet::OrderedBox { lo, hi } => {
                let u = lo + (hi - lo) * rng.random::<f64>();
                let v = lo + (hi - lo) * rng.random::<f64>();
                DMatrix::from_column_slice(2, 1, &[u.min(v), u.max(v)])
            }
            FeasibleSet::TruncatedSimplex { n, p_min } => {
                let mass = 1.0 - *n as f64 * p_min;
                let mut m = DMatrix::zeros(rows, *n);
                for r in 0..rows {
                    let e: Vec<f64> = (0..*n).map(|_| Exp1.sample(rng)).collect();
                    let total: f64 = e.iter().sum();
                    for i in 0..*n {
                        m[(r, i)] = p_min + mass * e[i] / total;
                    }
                }
                m
            }
            FeasibleSet::SpectralBall { radius } => {
                let z = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
                let norm = spectral_norm(&z).max(f64::MIN_POSITIVE);
                let dim = (rows * cols) as f64;
                let r = radius * rng.random::<f64>().powf(1.0 / dim);
                z * (r / norm)
            }
        }
    }
}

pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

/// Sort-based projection onto `{q >= 0, sum q = mass}`.
fn project_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    if mass <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - mass) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Distance of `-g` to the normal cone of one truncated-simplex row:
/// `min_{nu, lambda >= 0} ||g + nu 1 - sum_{active} lambda_i e_i||^2`.
fn simplex_cone_distance_sq(g: &[f64], active: &[bool]) -> f64 {
    let inactive_sum: f64 = g.iter().zip(active).filter(|(_, a)| !**a).map(|(v, _)| v).sum();
    let n_inactive = active.iter().filter(|a| !**a).count();
    if n_inactive == 0 {
        return 0.0;
    }
    let mut act: Vec<f64> = g.iter().zip(active).filter(|(_, a)| **a).map(|(v, _)| *v).collect();
    act.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let phi = |nu: f64| -> f64 {
        g.iter()
            .zip(active)
            .map(|(gi, a)| {
                let r = gi + nu;
                if *a {
                    r.min(0.0).powi(2)
                } else {
                    r * r
                }
            })
            .sum()
    };
    // The minimizer makes the active coordinates with the smallest g
    // (a prefix in sorted order) take the quadratic branch.
    let mut best = f64::INFINITY;
    let mut prefix_sum = 0.0;
    for k in 0..=act.len() {
        if k > 0 {
            prefix_sum += act[k - 1];
        }
        let nu = -(inactive_sum + prefix_sum) / (n_inactive + k) as f64;
        best = best.min(phi(nu));
    }
    best
}

/// `min_{lambda >= 0} ||g + sum lambda_j d_j||^2` for at most three
/// generators in the plane, by enumeration of supports.
fn cone_distance_sq_2d(g: [f64; 2], gens: &[[f64; 2]]) -> f64 {
    let mut best = g[0] * g[0] + g[1] * g[1];
    let n = gens.len();
    for mask in 1u32..(1 << n) {
        let sel: Vec<[f64; 2]> = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| gens[j]).collect();
        match sel.len() {
            1 => {
                let d = sel[0];
                let dd = d[0] * d[0] + d[1] * d[1];
                let lam = -(g[0] * d[0] + g[1] * d[1]) / dd;
                if lam >= 0.0 {
                    let r = [g[0] + lam * d[0], g[1] + lam * d[1]];
                    best = best.min(r[0] * r[0] + r[1] * r[1]);
                }
            }
            2 => {
                // Solve [d1 d2] lambda = -g.
                let (d1, d2) = (sel[0], sel[1]);
                let det = d1[0] * d2[1] - d2[0] * d1[1];
                if det.abs() > 1e-14 {
                    let l1 = (-g[0] * d2[1] + d2[0] * g[1]) / det;
                    let l2 = (-d1[0] * g[1] + g[0] * d1[1]) / det;
                    if l1 >= 0.0 && l2 >= 0.0 {
                        best = 0.0;
                    }
                }
            }
            _ => {}
        }
    }
    best
}

fn check_lengths(sets: &[FeasibleSet], theta: &PolicyParams) -> Result<()> {
    if sets.len() != theta.blocks.len() {
        return Err(Error::InvalidPolicy(format!(
            "{} feasible sets for {} parameter blocks",
            sets.len(),
            theta.blocks.len()
        )));
    }
    Ok(())
}

pub fn project_params(sets: &[FeasibleSet], theta: &PolicyParams) -> Result<PolicyParams> {
    check_lengths(sets, theta)?;
    let blocks = sets.iter().zip(&theta.blocks).map(|(s, b)| s.project(b)).collect::<Result<Vec<_>>>()?;
    Ok(PolicyParams::new(theta.layout, blocks))
}

pub fn contains_params(sets: &[FeasibleSet], theta: &PolicyParams, tol: f64) -> bool {
    sets.len() == theta.blocks.len() && sets.iter().zip(&theta.blocks).all(|(s, b)| s.contains(b, tol))
}

/// `sum_t min_{v_t in N_t(theta_t)} ||g_t + v_t||^2`.
pub fn pg_norm_sq_params(sets: &[FeasibleSet], theta: &PolicyParams, grad: &PolicyParams, eta: f64) -> Result<f64> {
    check_lengths(sets, theta)?;
    let mut total = 0.0;
    for (t, s) in sets.iter().enumerate() {
        total += s.projected_grad_norm_sq(&theta.blocks[t], &grad.blocks[t], eta)?;
    }
    Ok(total)
}

pub fn sample_params<R: Rng + ?Sized>(sets: &[FeasibleSet], template: &PolicyParams, rng: &mut R) -> PolicyParams {
    let blocks = sets.iter().zip(&template.blocks).map(|(s, b)| s.sample(b.nrows(), b.ncols(), rng)).collect();
    PolicyParams::new(template.layout, blocks)
}

/// Smallest slack of `x` to any active constraint of `set`.
pub fn interior_margin(set: &FeasibleSet, x: &DMatrix<f64>) -> f64 {
    match set {
        FeasibleSet::Box { lo, hi } => {
            x.iter().enumerate().map(|(k, &v)| (v - lo[k]).min(hi[k] - v)).fold(f64::INFINITY, f64::min)
        }
        FeasibleSet::OrderedBox { lo, hi } => (x[0] - lo).min(hi - x[1]).min(x[1] - x[0]),
        FeasibleSet::TruncatedSimplex { p_min, .. } => x.iter().map(|&v| v - p_min).fold(f64::INFINITY, f64::min),
        FeasibleSet::SpectralBall { radius } => radius - spectral_norm(x),
    }
}

/// Rejection sampling of feasible points whose every block keeps at least
/// `margin` slack. Gives up after `max_tries` draws.
pub fn sample_interior_params<R: Rng + ?Sized>(
    sets: &[FeasibleSet],
    template: &PolicyParams,
    margin: f64,
    max_tries: usize,
    rng: &mut R,
) -> Result<PolicyParams> {
    for _ in 0..max_tries {
        let th = sample_params(sets, template, rng);
        if sets.iter().zip(&th.blocks).all(|(s, b)| interior_margin(s, b) > margin) {
            return Ok(th);
        }
    }
    Err(Error::InvalidArgument(format!("no point with margin {margin} in {max_tries} draws")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    fn row(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, xs.len(), xs)
    }

    #[test]
    fn box_clamps() {
        let s = FeasibleSet::uniform_box(1, 0.0, 10.0);
        assert_eq!(s.project(&v(&[-3.0])).unwrap()[0], 0.0);
        assert_eq!(s.project(&v(&[12.0])).unwrap()[0], 10.0);
    }

    #[test]
    fn truncated_simplex_example() {
        let s = FeasibleSet::TruncatedSimplex { n: 3, p_min: 0.1 };
        let p = s.project(&row(&[0.9, 0.05, 0.05])).unwrap();
        for (a, b) in p.iter().zip([0.8, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_ball_clips_singular_values() {
        let s = FeasibleSet::SpectralBall { radius: 1.0 };
        let p = s.project(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        assert!((p - want).norm() < 1e-12);
    }

    #[test]
    fn ordered_box_example() {
        let s = FeasibleSet::OrderedBox { lo: 0.0, hi: 10.0 };
        let p = s.project(&v(&[7.0, 3.0])).unwrap();
        assert!((p[0] - 5.0).abs() < 1e-15 && (p[1] - 5.0).abs() < 1e-15);
        let p = s.project(&v(&[-1.0, -2.0])).unwrap();
        assert_eq!((p[0], p[1]), (0.0, 0.0));
        let p = s.project(&v(&[-1.0, 5.0])).unwrap();
        assert_eq!((p[0], p[1]), (0.0, 5.0));
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(FeasibleSet::Box { lo: vec![1.0], hi: vec![0.0] }.project(&v(&[0.5])).is_err());
        assert!(FeasibleSet::OrderedBox { lo: 2.0, hi: 1.0 }.validate().is_err());
        assert!(FeasibleSet::TruncatedSimplex { n: 3, p_min: 0.4 }.validate().is_err());
        assert!(FeasibleSet::SpectralBall { radius: 0.0 }.validate().is_err());
    }

    #[test]
    fn interior_point_gives_plain_gradient_norm() {
        let s = FeasibleSet::uniform_box(2, 0.0, 1.0);
        let n = s.projected_grad_norm(&v(&[0.5, 0.5]), &v(&[3.0, -4.0]), 1.0).unwrap();
        assert!((n - 5.0).abs() < 1e-15);
        let s = FeasibleSet::SpectralBall { radius: 1.0 };
        let x = DMatrix::from_row_slice(1, 2, &[0.1, 0.1]);
        let g = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
        assert!((s.projected_grad_norm(&x, &g, 0.1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_box_sign_analysis() {
        // Normal cone of [0, 1] at 0 is {v <= 0}: a positive gradient means
        // the descent direction leaves the set, so the point is stationary.
        let s = FeasibleSet::uniform_box(1, 0.0, 1.0);
        assert_eq!(s.projected_grad_norm(&v(&[0.0]), &v(&[2.0]), 1.0).unwrap(), 0.0);
        assert_eq!(s.projected_grad_norm(&v(&[0.0]), &v(&[-2.0]), 1.0).unwrap(), 2.0);
        assert_eq!(s.projected_grad_norm(&v(&[1.0]), &v(&[-4.0]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_point_is_an_error() {
        let s = FeasibleSet::uniform_box(1, 0.0, 1.0);
        assert!(matches!(s.projected_grad_norm(&v(&[2.0]), &v(&[1.0]), 1.0), Err(Error::InfeasiblePoint(_))));
    }

    /// Oracle: distance from -g to the cone generated by `gens` computed by
    /// projected gradient iterations on the nonnegative coefficients.
    fn cone_distance_oracle(g: &[f64], gens: &[Vec<f64>]) -> f64 {
        let k = gens.len();
        let d = g.len();
        let mut lam = vec![0.0; k];
        let lip: f64 = gens.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() + 1e-12;
        for _ in 0..200_000 {
            let r: Vec<f64> = (0..d).map(|i| g[i] + (0..k).map(|j| lam[j] * gens[j][i]).sum::<f64>()).collect();
            for j in 0..k {
                let gj: f64 = (0..d).map(|i| r[i] * gens[j][i]).sum();
                lam[j] = (lam[j] - gj / lip).max(0.0);
            }
        }
        (0..d).map(|i| (g[i] + (0..k).map(|j| lam[j] * gens[j][i]).sum::<f64>()).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn simplex_vertex_matches_cone_oracle() {
        let s = FeasibleSet::TruncatedSimplex { n: 3, p_min: 0.1 };
        let x = row(&[0.8, 0.1, 0.1]);
        let mut rng = stream_rng(11, 0);
        for _ in 0..20 {
            let g: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let exact = s.projected_grad_norm(&x, &row(&g), 1.0).unwrap();
            // Generators: +1, -1 (free multiplier of the equality), -e_2, -e_3.
            let gens = vec![vec![1.0, 1.0, 1.0], vec![-1.0, -1.0, -1.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, -1.0]];
            let oracle = cone_distance_oracle(&g, &gens);
            assert!((exact - oracle).abs() < 1e-6, "exact {exact} oracle {oracle} g {g:?}");
        }
    }

    #[test]
    fn ordered_box_corner_matches_cone_oracle() {
        let s = FeasibleSet::OrderedBox { lo: 0.0, hi: 10.0 };
        let mut rng = stream_rng(12, 0);
        for x in [[0.0, 0.0], [10.0, 10.0], [0.0, 10.0], [4.0, 4.0], [0.0, 3.0]] {
            for _ in 0..10 {
                let g = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
                let exact = s.projected_grad_norm(&v(&x), &v(&g), 1.0).unwrap();
                let mut gens = vec![];
                if x[0] == 0.0 {
                    gens.push(vec![-1.0, 0.0]);
                }
                if x[0] == x[1] {
                    gens.push(vec![1.0, -1.0]);
                }
                if x[1] == 10.0 {
                    gens.push(vec![0.0, 1.0]);
                }
                let oracle = cone_distance_oracle(&g, &gens);
                assert!((exact - oracle).abs() < 1e-6, "x {x:?} g {g:?}: {exact} vs {oracle}");
            }
        }
    }

    /// Dense brute-force minimization of the distance over the set.
    fn brute_force_simplex3(x: &[f64], p_min: f64, step: f64) -> [f64; 3] {
        let mut best = (f64::INFINITY, [0.0; 3]);
        let mass = 1.0 - 3.0 * p_min;
        let k = (mass / step).round() as usize;
        for i in 0..=k {
            for j in 0..=(k - i) {
                let p = [p_min + i as f64 * step, p_min + j as f64 * step, p_min + (k - i - j) as f64 * step];
                let d: f64 = (0..3).map(|c| (p[c] - x[c]).powi(2)).sum();
                if d < best.0 {
                    best = (d, p);
                }
            }
        }
        best.1
    }

    fn brute_force_ordered(x: &[f64], lo: f64, hi: f64, step: f64) -> [f64; 2] {
        let k = ((hi - lo) / step).round() as usize;
        let mut best = (f64::INFINITY, [0.0; 2]);
        for i in 0..=k {
            for j in i..=k {
                let (a, b) = (lo + i as f64 * step, lo + j as f64 * step);
                let d = (a - x[0]).powi(2) + (b - x[1]).powi(2);
                if d < best.0 {
                    best = (d, [a, b]);
                }
            }
        }
        best.1
    }

    #[test]
    fn closed_forms_agree_with_brute_force() {
        let simplex = FeasibleSet::TruncatedSimplex { n: 3, p_min: 0.1 };
        assert!(brute_force_simplex3(&[0.9, 0.05, 0.05], 0.1, 1e-4)
            .iter()
            .zip([0.8, 0.1, 0.1])
            .all(|(a, b)| (a - b).abs() < 1e-4));
        let ordered = FeasibleSet::OrderedBox { lo: 0.0, hi: 10.0 };
        let bf = brute_force_ordered(&[7.0, 3.0], 0.0, 10.0, 1e-2);
        assert!((bf[0] - 5.0).abs() < 1e-2 && (bf[1] - 5.0).abs() < 1e-2);

        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.6 - 0.3).collect();
            let p = simplex.project(&row(&x)).unwrap();
            let bf = brute_force_simplex3(&x, 0.1, 2e-3);
            for c in 0..3 {
                assert!((p[c] - bf[c]).abs() < 2.5e-3, "{x:?}: {p} vs {bf:?}");
            }
            let y = [rng.random::<f64>() * 16.0 - 3.0, rng.random::<f64>() * 16.0 - 3.0];
            let p = ordered.project(&v(&y)).unwrap();
            let bf = brute_force_ordered(&y, 0.0, 10.0, 2e-2);
            assert!((p[0] - bf[0]).abs() < 2.5e-2 && (p[1] - bf[1]).abs() < 2.5e-2, "{y:?}");
        }
    }

    #[test]
    fn samples_are_feasible() {
        let mut rng = stream_rng(9, 1);
        let sets = [
            (FeasibleSet::uniform_box(3, -1.0, 2.0), 3, 1),
            (FeasibleSet::OrderedBox { lo: -5.0, hi: 5.0 }, 2, 1),
            (FeasibleSet::TruncatedSimplex { n: 4, p_min: 0.05 }, 3, 4),
            (FeasibleSet::SpectralBall { radius: 0.7 }, 2, 3),
        ];
        for (s, r, c) in sets.iter() {
            for _ in 0..200 {
                assert!(s.contains(&s.sample(*r, *c, &mut rng), 1e-10), "{s:?}");
            }
        }
    }

    #[test]
    fn interior_samples_keep_their_margin() {
        let mut rng = stream_rng(4, 2);
        let sets: Vec<FeasibleSet> = all_kinds().into_iter().map(|(s, _, _)| s).collect();
        let template = PolicyParams::new(
            crate::params::Layout::Tabular,
            all_kinds().iter().map(|(_, r, c)| DMatrix::zeros(*r, *c)).collect(),
        );
        for _ in 0..50 {
            let th = sample_interior_params(&sets, &template, 0.02, 100_000, &mut rng).unwrap();
            assert!(contains_params(&sets, &th, 0.0));
            assert!(sets.iter().zip(&th.blocks).all(|(s, b)| interior_margin(s, b) > 0.02));
        }
        assert!(sample_interior_params(&sets, &template, 10.0, 100, &mut rng).is_err());
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| DMatrix::from_column_slice(rows, cols, &v))
    }

    fn all_kinds() -> Vec<(FeasibleSet, usize, usize)> {
        vec![
            (FeasibleSet::Box { lo: vec![-1.0, 0.0, 2.0], hi: vec![1.0, 3.0, 2.5] }, 3, 1),
            (FeasibleSet::OrderedBox { lo: -2.0, hi: 3.0 }, 2, 1),
            (FeasibleSet::TruncatedSimplex { n: 3, p_min: 0.1 }, 2, 3),
            (FeasibleSet::SpectralBall { radius: 1.5 }, 2, 2),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn projection_is_feasible_idempotent_nonexpansive(
            kind in 0usize..4,
            xa in matrix_strategy(2, 3),
            xb in matrix_strategy(2, 3),
        ) {
            let (set, r, c) = all_kinds().swap_remove(kind);
            let x = DMatrix::from_iterator(r, c, xa.iter().copied().take(r * c));
            let y = DMatrix::from_iterator(r, c, xb.iter().copied().take(r * c));
            let px = set.project(&x).unwrap();
            let py = set.project(&y).unwrap();
            prop_assert!(set.contains(&px, 1e-10));
            let ppx = set.project(&px).unwrap();
            prop_assert!((&ppx - &px).norm() < 1e-10);
            prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-10);
        }

        #[test]
        fn projected_grad_norm_never_exceeds_gradient_norm(
            kind in 0usize..3,
            xa in matrix_strategy(2, 3),
            ga in matrix_strategy(2, 3),
        ) {
            let (set, r, c) = all_kinds().swap_remove(kind);
            let x = set.project(&DMatrix::from_iterator(r, c, xa.iter().copied().take(r * c))).unwrap();
            let g = DMatrix::from_iterator(r, c, ga.iter().copied().take(r * c));
            let pg = set.projected_grad_norm(&x, &g, 1.0).unwrap();
            prop_assert!(pg <= g.norm() + 1e-12);
            prop_assert!(pg >= 0.0);
        }
    }
}
