use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{mc_cost_paired, Simulator};
use crate::optim::FeasibleSet;
use crate::params::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    /// Flat (column-major, period-major) coordinate index.
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub max_rel_error: f64,
    pub entries: Vec<FdEntry>,
    /// Coordinates within `2h` of a constraint.
    pub skipped: Vec<usize>,
}

/// Distance from each flat coordinate to the nearest constraint that a
/// single-coordinate perturbation could cross.
fn boundary_distances(sets: &[FeasibleSet], theta: &PolicyParams) -> Result<Vec<f64>> {
    if sets.len() != theta.blocks.len() {
        return Err(Error::InvalidArgument("one feasible set per period is required".into()));
    }
    let mut out = Vec::with_capacity(theta.dim());
    for (set, b) in sets.iter().zip(&theta.blocks) {
        match set {
            FeasibleSet::Box { lo, hi } => {
                out.extend(b.iter().enumerate().map(|(k, &x)| (x - lo[k]).min(hi[k] - x)));
            }
            FeasibleSet::OrderedBox { lo, hi } => {
                let gap = b[1] - b[0];
                out.push((b[0] - lo).min(gap));
                out.push((hi - b[1]).min(gap));
            }
            // The objective is evaluated off the simplex, so only the lower bound matters.
            FeasibleSet::TruncatedSimplex { p_min, .. } => out.extend(b.iter().map(|&x| x - p_min)),
            FeasibleSet::SpectralBall { radius } => {
                let slack = radius - crate::optim::spectral_norm(b);
                out.extend(std::iter::repeat_n(slack, b.len()));
            }
        }
    }
    Ok(out)
}

/// Central-difference check of an analytic gradient. `cost` must accept
/// points slightly outside the feasible set in the perturbed coordinate.
/// Returns the worst `|analytic - fd| / max(1, |fd|)`.
pub fn fd_gradient_check(
    cost: impl Fn(&PolicyParams) -> Result<f64>,
    grad: &PolicyParams,
    theta: &PolicyParams,
    sets: &[FeasibleSet],
    h: f64,
) -> Result<FdCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let dist = boundary_distances(sets, theta)?;
    let flat = theta.to_flat();
    let g = grad.to_flat();
    if g.len() != flat.len() {
        return Err(Error::InvalidArgument("gradient and point have different shapes".into()));
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..flat.len() {
        if dist[j] <= 2.0 * h {
            log::warn!("BoundaryWarning: coordinate {j} is within 2h of a constraint; skipped");
            skipped.push(j);
            continue;
        }
        let mut x = flat.clone();
        x[j] = flat[j] + h;
        let up = cost(&PolicyParams::from_flat_like(theta, &x)?)?;
        x[j] = flat[j] - h;
        let dn = cost(&PolicyParams::from_flat_like(theta, &x)?)?;
        let fd = (up - dn) / (2.0 * h);
        entries.push(FdEntry { index: j, analytic: g[j], fd, rel_error: (g[j] - fd).abs() / fd.abs().max(1.0) });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(FdCheck { max_rel_error, entries, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrnFdEntry {
    pub index: usize,
    pub estimate: f64,
    pub estimate_stderr: f64,
    pub fd: f64,
    pub fd_stderr: f64,
    /// `|estimate - fd|` in units of the combined standard error.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrnFdCheck {
    pub max_z: f64,
    pub entries: Vec<CrnFdEntry>,
    pub skipped: Vec<usize>,
}

impl CrnFdCheck {
    pub fn passes(&self, k: f64) -> bool {
        self.entries.iter().all(|e| e.z <= k)
    }
}

/// Compares a stochastic gradient (with standard errors) against central
/// differences of the simulated cost on `n` common paths per coordinate.
#[allow(clippy::too_many_arguments)]
pub fn crn_fd_check<S: Simulator + ?Sized>(
    sim: &S,
    estimate: &PolicyParams,
    estimate_stderr: &PolicyParams,
    theta: &PolicyParams,
    sets: &[FeasibleSet],
    h: f64,
    n: usize,
    seed: u64,
) -> Result<CrnFdCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let dist = boundary_distances(sets, theta)?;
    let flat = theta.to_flat();
    let (g, se) = (estimate.to_flat(), estimate_stderr.to_flat());
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..flat.len() {
        if dist[j] <= 2.0 * h {
            log::warn!("BoundaryWarning: coordinate {j} is within 2h of a constraint; skipped");
            skipped.push(j);
            continue;
        }
        let mut up = flat.clone();
        let mut dn = flat.clone();
        up[j] += h;
        dn[j] -= h;
        let up = PolicyParams::from_flat_like(theta, &up)?;
        let dn = PolicyParams::from_flat_like(theta, &dn)?;
        let pair = mc_cost_paired(sim, &up, &dn, n, seed)?;
        let fd = pair.diff.mean / (2.0 * h);
        let fd_stderr = pair.diff.stderr / (2.0 * h);
        let combined = se[j].hypot(fd_stderr);
        let diff = (g[j] - fd).abs();
        let z = if combined > 0.0 {
            diff / combined
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        entries.push(CrnFdEntry { index: j, estimate: g[j], estimate_stderr: se[j], fd, fd_stderr, z });
    }
    let max_z = entries.iter().map(|e| e.z).fold(0.0, f64::max);
    Ok(CrnFdCheck { max_z, entries, skipped })
}
