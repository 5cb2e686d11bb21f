use super::feasible::{sample_params, FeasibleSet};
use super::pgd::ExactOracle;
use crate::error::{Error, Result};
use crate::params::PolicyParams;
use crate::rng::stream_rng;

/// Safety factor applied to the largest observed gradient difference quotient.
pub const SMOOTHNESS_SAFETY: f64 = 2.0;

/// Empirical Lipschitz constant of the gradient over random feasible pairs,
/// multiplied by [`SMOOTHNESS_SAFETY`]. Pairs closer than `1e-12` are skipped.
pub fn estimate_smoothness<O: ExactOracle + ?Sized>(
    oracle: &O,
    sets: &[FeasibleSet],
    template: &PolicyParams,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if n_pairs < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 pairs, got {n_pairs}")));
    }
    let mut rng = stream_rng(seed, 0x5300);
    let mut best = 0.0f64;
    for _ in 0..n_pairs {
        let x = sample_params(sets, template, &mut rng);
        let y = sample_params(sets, template, &mut rng);
        let dist = x.distance(&y);
        if dist < 1e-12 {
            continue;
        }
        let gx = oracle.gradient(&x)?;
        let gy = oracle.gradient(&y)?;
        best = best.max(gx.distance(&gy) / dist);
    }
    Ok(SMOOTHNESS_SAFETY * best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnOracle;
    use crate::params::Layout;
    use nalgebra::DMatrix;

    fn scalar(x: f64) -> PolicyParams {
        PolicyParams::new(Layout::Inventory, vec![DMatrix::from_element(1, 1, x)])
    }

    #[test]
    fn quadratic_and_linear() {
        let sets = [FeasibleSet::uniform_box(1, 0.0, 10.0)];
        let quad = FnOracle {
            f: |p: &PolicyParams| (p.blocks[0][0] - 3.0).powi(2),
            grad: |p: &PolicyParams| scalar(2.0 * (p.blocks[0][0] - 3.0)),
        };
        let l = estimate_smoothness(&quad, &sets, &scalar(0.0), 50, 1).unwrap();
        assert!((l - 4.0).abs() < 1e-9, "{l}");
        let lin = FnOracle { f: |p: &PolicyParams| 5.0 * p.blocks[0][0], grad: |_: &PolicyParams| scalar(5.0) };
        assert!(estimate_smoothness(&lin, &sets, &scalar(0.0), 50, 1).unwrap().abs() < 1e-12);
        assert!(estimate_smoothness(&lin, &sets, &scalar(0.0), 5, 1).is_err());
    }
}
