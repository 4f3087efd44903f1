//! The group-invariant inner product on the projected space, and the
//! reduction that justifies plain Euclidean norms in the loss.
//!
//! Each 2-D block k carries a weight 1/λ_k, where λ_k is the mean squared
//! norm of block k over the grid ([`compute_lambdas`]). The full definition
//! averages the weighted dot product of rotated vectors over the group
//! ([`InnerProductSpec::inner_product`]); because every block rotation
//! preserves its block's dot product, this collapses to the closed form
//! Σ_k ⟨z_k, z′_k⟩/λ_k ([`InnerProductSpec::inner_product_reduced`]). With
//! all λ_k = 1 — which whitened projection guarantees on average — the
//! closed form is exactly the Euclidean dot product, which is why the loss
//! can use plain Euclidean norms.

use crate::group::{BlockRotationRep, FactorStructure};
use crate::metric::ProjectedGrid;
use crate::{Error, Result};

/// Block weights for the invariant inner product: K blocks of dimension 2,
/// block k weighted by 1/λ_k.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductSpec {
    lambdas: Vec<f64>,
}

impl InnerProductSpec {
    /// Requires every λ_k finite and strictly positive.
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidArgument("at least one block weight required".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !l.is_finite() || **l <= 0.0) {
            return Err(Error::InvalidArgument(format!("block weight {l} is not a positive real")));
        }
        Ok(Self { lambdas })
    }

    /// All weights 1: the spec whose norm is exactly Euclidean.
    pub fn uniform(num_blocks: usize) -> Result<Self> {
        Self::new(vec![1.0; num_blocks])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn num_blocks(&self) -> usize {
        self.lambdas.len()
    }

    fn check_vector(&self, z: &[f64]) -> Result<()> {
        if z.len() != 2 * self.num_blocks() {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {}, spec has {} blocks of dimension 2",
                z.len(),
                self.num_blocks()
            )));
        }
        Ok(())
    }

    /// Closed form Σ_k ⟨z_k, z′_k⟩/λ_k. Accumulates coordinate by coordinate
    /// so that with uniform weights the result is bitwise the Euclidean dot
    /// product.
    pub fn inner_product_reduced(&self, z: &[f64], w: &[f64]) -> Result<f64> {
        self.check_vector(z)?;
        self.check_vector(w)?;
        let mut acc = 0.0;
        for j in 0..z.len() {
            acc += z[j] * w[j] / self.lambdas[j / 2];
        }
        Ok(acc)
    }

    /// Defining form: the average over the grid of the weighted dot product
    /// of the rotated vectors, (1/N)·Σ_g Σ_k ⟨(ρ(g)z)_k, (ρ(g)z′)_k⟩/λ_k.
    ///
    /// Mathematically equal to [`Self::inner_product_reduced`] because each
    /// rotation preserves its block's dot product; both are kept so tests can
    /// compare them.
    pub fn inner_product(
        &self,
        rep: &BlockRotationRep,
        fs: &FactorStructure,
        z: &[f64],
        w: &[f64],
    ) -> Result<f64> {
        if rep.frequency().len() != self.num_blocks() || fs.num_factors() != self.num_blocks() {
            return Err(Error::DimensionMismatch(format!(
                "spec has {} blocks, representation has {} frequencies, structure has {} factors",
                self.num_blocks(),
                rep.frequency().len(),
                fs.num_factors()
            )));
        }
        self.check_vector(z)?;
        self.check_vector(w)?;
        let mut total = 0.0;
        for g in fs.indices() {
            let zg = rep.apply(&g, fs, z)?;
            let wg = rep.apply(&g, fs, w)?;
            total += self.inner_product_reduced(&zg, &wg)?;
        }
        Ok(total / fs.total_points() as f64)
    }

    /// Squared norm in the closed form, ‖z‖² = Σ_k ‖z_k‖²/λ_k.
    pub fn norm_sq(&self, z: &[f64]) -> Result<f64> {
        self.inner_product_reduced(z, z)
    }
}

/// Mean squared norm of each 2-D block over the grid; a block that is
/// identically zero gets λ_k = 1 so its weight stays defined.
pub fn compute_lambdas(pg: &ProjectedGrid) -> Vec<f64> {
    let n = pg.factor_structure().total_points();
    let k_count = pg.factor_structure().num_factors();
    (0..k_count)
        .map(|k| {
            let mean_sq: f64 = (0..n)
                .map(|row| {
                    let (x, y) = (pg.data()[(row, 2 * k)], pg.data()[(row, 2 * k + 1)]);
                    x * x + y * y
                })
                .sum::<f64>()
                / n as f64;
            if mean_sq > 0.0 {
                mean_sq
            } else {
                1.0
            }
        })
        .collect()
}
