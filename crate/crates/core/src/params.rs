use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape convention of the per-period parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `m x n` action distribution per state.
    Tabular,
    /// `n x m` feedback gain.
    Lqr,
    /// `|I| x 1` base-stock level per world state.
    Inventory,
    /// `2 x 1` pair (lower, upper).
    CashBalance,
}

/// Policy parameters `theta = (theta_1, ..., theta_T)`, one dense block per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layout: Layout,
    pub blocks: Vec<DMatrix<f64>>,
}

impl PolicyParams {
    pub fn new(layout: Layout, blocks: Vec<DMatrix<f64>>) -> Self {
        Self { layout, blocks }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layout: self.layout, blocks: self.blocks.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect() }
    }

    pub fn horizon(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &PolicyParams) -> PolicyParams {
        PolicyParams {
            layout: self.layout,
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b * alpha).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> PolicyParams {
        PolicyParams { layout: self.layout, blocks: self.blocks.iter().map(|b| b * alpha).collect() }
    }

    pub fn distance(&self, other: &PolicyParams) -> f64 {
        self.axpy(-1.0, other).norm()
    }

    /// Flat view in period-major, column-major-within-block order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn from_flat_like(template: &PolicyParams, flat: &[f64]) -> Result<PolicyParams> {
        if flat.len() != template.dim() {
            return Err(Error::InvalidPolicy(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                template.dim()
            )));
        }
        let mut offset = 0;
        let blocks = template
            .blocks
            .iter()
            .map(|b| {
                let n = b.len();
                let m = DMatrix::from_column_slice(b.nrows(), b.ncols(), &flat[offset..offset + n]);
                offset += n;
                m
            })
            .collect();
        Ok(PolicyParams { layout: template.layout, blocks })
    }

    /// Checks block count and the shape of every block.
    pub fn check_shape(&self, layout: Layout, horizon: usize, rows: usize, cols: usize) -> Result<()> {
        if self.layout != layout {
            return Err(Error::InvalidPolicy(format!(
                "layout {:?} does not match environment layout {:?}",
                self.layout, layout
            )));
        }
        if self.blocks.len() != horizon {
            return Err(Error::InvalidPolicy(format!("{} blocks for horizon {}", self.blocks.len(), horizon)));
        }
        for (t, b) in self.blocks.iter().enumerate() {
            if b.nrows() != rows || b.ncols() != cols {
                return Err(Error::InvalidPolicy(format!(
                    "block {} has shape {}x{}, expected {}x{}",
                    t,
                    b.nrows(),
                    b.ncols(),
                    rows,
                    cols
                )));
            }
        }
        Ok(())
    }

    /// Copy of `self` with the blocks from period `from` onward replaced by
    /// those of `tail`.
    pub fn splice_tail(&self, tail: &PolicyParams, from: usize) -> PolicyParams {
        let mut out = self.clone();
        for t in from..self.blocks.len() {
            out.blocks[t] = tail.blocks[t].clone();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_and_norms() {
        let p = PolicyParams::new(
            Layout::Lqr,
            vec![DMatrix::from_row_slice(1, 2, &[3.0, 4.0]), DMatrix::from_row_slice(1, 2, &[0.0, 0.0])],
        );
        assert_eq!(p.dim(), 4);
        assert!((p.norm() - 5.0).abs() < 1e-15);
        let q = PolicyParams::from_flat_like(&p, &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(PolicyParams::from_flat_like(&p, &[1.0]).is_err());
        assert!(p.check_shape(Layout::Lqr, 2, 1, 2).is_ok());
        assert!(p.check_shape(Layout::Lqr, 3, 1, 2).is_err());
        assert!(p.check_shape(Layout::Tabular, 2, 1, 2).is_err());
    }
}
