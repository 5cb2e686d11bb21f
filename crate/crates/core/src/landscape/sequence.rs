use std::f64::consts::E;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Two nonnegative sequences `X, Y` of length `T` with constants `M_g, G`.
/// Indices in messages are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInstance {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub m_g: f64,
    pub g: f64,
}

const PREMISE_RTOL: f64 = 1e-12;

impl SequenceInstance {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    fn check_shape(&self) -> Result<()> {
        if self.x.is_empty() || self.x.len() != self.y.len() {
            return Err(Error::InvalidArgument("X and Y must be nonempty and of equal length".into()));
        }
        if !(self.m_g > 0.0 && self.g > 0.0) {
            return Err(Error::InvalidArgument("M_g and G must be positive".into()));
        }
        Ok(())
    }

    /// First violated premise condition as `(t, lhs, rhs)`. Bound
    /// violations `X_t, Y_t in [0, G]` are reported with `rhs = G`.
    pub fn premise_violation(&self) -> Option<(usize, f64, f64)> {
        let tt = self.horizon();
        let tol = PREMISE_RTOL * self.g.max(1.0);
        for t in 0..tt {
            for v in [self.x[t], self.y[t]] {
                if !(v >= 0.0 && v <= self.g + tol) {
                    return Some((t + 1, v, self.g));
                }
            }
        }
        let mut tail = 0.0;
        for t in (0..tt).rev() {
            let lhs = (self.x[t] - self.y[t]).abs();
            let rhs = self.m_g * tail;
            if lhs > rhs + tol * (1.0 + rhs) {
                return Some((t + 1, lhs, rhs));
            }
            tail += self.x[t] * self.x[t];
        }
        None
    }

    pub fn check_premise(&self) -> Result<()> {
        self.check_shape()?;
        match self.premise_violation() {
            Some((t, lhs, rhs)) => Err(Error::PremiseViolated { t, lhs, rhs }),
            None => Ok(()),
        }
    }

    pub fn sum_sq(&self) -> (f64, f64) {
        (self.x.iter().map(|v| v * v).sum(), self.y.iter().map(|v| v * v).sum())
    }

    /// `sum X^2 / sum Y^2`.
    pub fn ratio(&self) -> f64 {
        let (sx, sy) = self.sum_sq();
        sx / sy
    }
}

/// `max(e, 4 e M_g^2 G^2 T^2)`.
pub fn sequence_bound_factor(m_g: f64, g: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    E.max(4.0 * E * m_g * m_g * g * g * t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub factor: f64,
    pub ratio: f64,
    pub ok: bool,
}

/// Verifies the premise, then `sum X^2 <= max(e, 4 e M_g^2 G^2 T^2) sum Y^2`.
pub fn sequence_lemma_check(inst: &SequenceInstance) -> Result<SequenceCheck> {
    inst.check_premise()?;
    let (sx, sy) = inst.sum_sq();
    let factor = sequence_bound_factor(inst.m_g, inst.g, inst.horizon());
    let rhs = factor * sy;
    Ok(SequenceCheck { lhs: sx, rhs, factor, ratio: sx / sy, ok: sx <= rhs * (1.0 + 1e-12) })
}

/// Random instance satisfying the premise. Built backwards: every `Y_t`
/// is drawn inside the window the premise allows around `X_t`, and half
/// the time pushed to the window edge farthest from `X_t`.
pub fn random_premise_instance<R: Rng + ?Sized>(rng: &mut R, max_horizon: usize) -> SequenceInstance {
    let tt = rng.random_range(1..=max_horizon.max(1));
    let m_g = 10f64.powf(rng.random_range(-1.0..1.0));
    let g = 10f64.powf(rng.random_range(-1.0..1.0));
    let mut x = vec![0.0; tt];
    let mut y = vec![0.0; tt];
    x[tt - 1] = g * rng.random::<f64>();
    y[tt - 1] = x[tt - 1];
    let mut tail = x[tt - 1] * x[tt - 1];
    for t in (0..tt - 1).rev() {
        x[t] = g * rng.random::<f64>();
        let w = m_g * tail;
        let (lo, hi) = ((x[t] - w).max(0.0), (x[t] + w).min(g));
        y[t] = if rng.random::<bool>() {
            if x[t] - lo >= hi - x[t] {
                lo
            } else {
                hi
            }
        } else {
            lo + (hi - lo) * rng.random::<f64>()
        };
        tail += x[t] * x[t];
    }
    SequenceInstance { x, y, m_g, g }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceSearch {
    pub instances: usize,
    pub counterexamples: usize,
    /// Largest `ratio / factor` seen; at most 1 when the lemma holds.
    pub worst_relative_ratio: f64,
    pub worst: Option<SequenceInstance>,
}

/// Random search for counterexamples over `n` premise-valid instances.
pub fn sequence_lemma_search(n: usize, max_horizon: usize, seed: u64) -> Result<SequenceSearch> {
    let results = (0..n)
        .into_par_iter()
        .map(|i| {
            let inst = random_premise_instance(&mut stream_rng(seed, i as u64), max_horizon);
            let check = sequence_lemma_check(&inst)?;
            let rel = if check.lhs == 0.0 { 0.0 } else { check.lhs / check.rhs };
            Ok((rel, check.ok, inst))
        })
        .collect::<Result<Vec<_>>>()?;
    let counterexamples = results.iter().filter(|r| !r.1).count();
    let worst = results.iter().max_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SequenceSearch {
        instances: n,
        counterexamples,
        worst_relative_ratio: worst.map_or(0.0, |w| w.0),
        worst: worst.map(|w| w.2.clone()),
    })
}

/// Lower-bound instance with `Z = log2(M_g G)`: `X_t = 2^(Z + 1 - t) / M_g`
/// for `t < floor(Z)`, `X_t = Z / (t M_g)` otherwise, and `Y` zero except
/// `Y_T = X_T`. The premise is not enforced; see
/// [`SequenceInstance::premise_violation`].
pub fn appendix_hard_instance(m_g: f64, g: f64, horizon: usize) -> Result<SequenceInstance> {
    if horizon == 0 || !(m_g * g >= 4.0) {
        return Err(Error::InvalidArgument(format!("need T >= 1 and M_g G >= 4, got M_g G = {}", m_g * g)));
    }
    let z = (m_g * g).log2();
    let x: Vec<f64> = (1..=horizon)
        .map(|t| {
            let t = t as f64;
            if t < z.floor() {
                2f64.powf(z + 1.0 - t) / m_g
            } else {
                z / (t * m_g)
            }
        })
        .collect();
    let mut y = vec![0.0; horizon];
    y[horizon - 1] = x[horizon - 1];
    Ok(SequenceInstance { x, y, m_g, g })
}

/// `M_g^2 G^2 T^2 / log2(M_g G)^2`.
pub fn appendix_ratio_target(m_g: f64, g: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    (m_g * g * t / (m_g * g).log2()).powi(2)
}

/// Largest-ratio premise-valid instance with `Y` zero except `Y_T`:
/// for a given `X_T` every earlier `X_t` is as large as the premise and
/// the bound `G` allow. `X_T` is chosen on a log grid.
pub fn greedy_hard_instance(m_g: f64, g: f64, horizon: usize) -> Result<SequenceInstance> {
    if horizon == 0 || !(m_g > 0.0 && g > 0.0) {
        return Err(Error::InvalidArgument("need T >= 1, M_g > 0 and G > 0".into()));
    }
    let build = |last: f64| {
        let mut x = vec![0.0; horizon];
        x[horizon - 1] = last;
        let mut tail = last * last;
        for t in (0..horizon - 1).rev() {
            x[t] = g.min(m_g * tail);
            tail += x[t] * x[t];
        }
        let mut y = vec![0.0; horizon];
        y[horizon - 1] = last;
        SequenceInstance { x, y, m_g, g }
    };
    let best = (0..=4000)
        .map(|k| build(g * 10f64.powf(-8.0 * k as f64 / 4000.0)))
        .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
        .expect("grid is nonempty");
    Ok(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakLemmaReport {
    pub instance: SequenceInstance,
    pub ratio: f64,
    /// `M_g^(2 (T - 1))`.
    pub target: f64,
    /// `|X_t - Y_t| <= M_g sum_{k > t} X_k` for every `t`.
    pub weak_premise_ok: bool,
    pub ok: bool,
}

/// `X_t = G M_g^(1 - t)`, `Y` zero except `Y_T = X_T`. Under the weaker
/// linear premise the ratio reaches `M_g^(2 (T - 1))`.
pub fn weak_lemma_instance(m_g: f64, g: f64, horizon: usize) -> Result<WeakLemmaReport> {
    if horizon == 0 || !(m_g > 1.0 && g > 1.0) {
        return Err(Error::InvalidArgument(format!("need T >= 1, M_g > 1 and G > 1 (M_g = {m_g}, G = {g})")));
    }
    let x: Vec<f64> = (0..horizon).map(|t| g * m_g.powi(-(t as i32))).collect();
    let mut y = vec![0.0; horizon];
    y[horizon - 1] = x[horizon - 1];
    let mut ok = true;
    let mut tail = 0.0;
    for t in (0..horizon).rev() {
        let rhs = m_g * tail;
        ok &= (x[t] - y[t]).abs() <= rhs * (1.0 + PREMISE_RTOL) + PREMISE_RTOL;
        tail += x[t];
    }
    let instance = SequenceInstance { x, y, m_g, g };
    let ratio = instance.ratio();
    let target = m_g.powi(2 * (horizon as i32 - 1));
    Ok(WeakLemmaReport { instance, ratio, target, weak_premise_ok: ok, ok: ok && ratio >= target * (1.0 - 1e-12) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_sequences_have_unit_ratio() {
        let inst = SequenceInstance { x: vec![0.5, 0.2, 0.1], y: vec![0.5, 0.2, 0.1], m_g: 1.0, g: 1.0 };
        let c = sequence_lemma_check(&inst).unwrap();
        assert!(c.ok && (c.ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn premise_violation_is_an_error() {
        let inst = SequenceInstance { x: vec![1.0, 0.1], y: vec![0.0, 0.1], m_g: 1.0, g: 2.0 };
        assert!(matches!(sequence_lemma_check(&inst), Err(Error::PremiseViolated { t: 1, .. })));
        let inst = SequenceInstance { x: vec![0.3], y: vec![0.2], m_g: 1.0, g: 1.0 };
        assert!(matches!(sequence_lemma_check(&inst), Err(Error::PremiseViolated { t: 1, .. })));
    }

    #[test]
    fn appendix_instance_ratio_and_premise() {
        for (m, g, t) in [(2.0, 2.0, 8), (4.0, 4.0, 16)] {
            let inst = appendix_hard_instance(m, g, t).unwrap();
            assert!(inst.ratio() >= appendix_ratio_target(m, g, t));
            // The displayed instance breaks the premise.
            assert!(inst.premise_violation().is_some());
        }
        let inst = appendix_hard_instance(2.0, 2.0, 8).unwrap();
        assert!((inst.ratio() - 289.75).abs() < 0.01);
    }

    #[test]
    fn greedy_instance_is_premise_valid() {
        let inst = greedy_hard_instance(2.0, 2.0, 8).unwrap();
        let c = sequence_lemma_check(&inst).unwrap();
        assert!(c.ok && c.ratio > 100.0);
    }

    #[test]
    fn weak_lemma_examples() {
        let r = weak_lemma_instance(2.0, 2.0, 3).unwrap();
        assert!(r.ok && r.ratio >= 16.0);
        let r = weak_lemma_instance(2.0, 2.0, 1).unwrap();
        assert_eq!(r.ratio, 1.0);
        let ratios: Vec<f64> = (1..6).map(|t| weak_lemma_instance(3.0, 2.0, t).unwrap().ratio).collect();
        assert!(ratios.windows(2).all(|w| w[1] / w[0] >= 9.0));
        assert!(weak_lemma_instance(1.0, 2.0, 3).is_err());
    }

    #[test]
    fn search_finds_no_counterexample() {
        let s = sequence_lemma_search(2000, 12, 1).unwrap();
        assert_eq!(s.counterexamples, 0);
        assert!(s.worst_relative_ratio <= 1.0);
    }

    proptest! {
        #[test]
        fn random_instances_satisfy_premise_and_lemma(seed in any::<u64>()) {
            let inst = random_premise_instance(&mut stream_rng(seed, 0), 10);
            prop_assert!(inst.premise_violation().is_none());
            prop_assert!(sequence_lemma_check(&inst).unwrap().ok);
        }
    }
}
