//! Products of cyclic groups acting on a latent space by block rotations.
//!
//! A dataset grid is indexed by a [`FactorStructure`]: K cyclic factors of
//! sizes n_1..n_K, N = Π n_k points in row-major order (factor 0 slowest).
//! Factor k's element j corresponds to the angle 2π·j/n_k. Angles are always
//! derived from integer indices at use time, with the frequency multiple
//! reduced mod n_k in integer arithmetic first, so that grid periodicity and
//! frequency aliasing are exact rather than approximate.

use nalgebra::{DMatrix, Matrix2};

use crate::{Error, Result};

/// One cyclic factor of the generating group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub size: usize,
}

/// The product group Z_{n_1} × … × Z_{n_K} indexing a data grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorStructure {
    factors: Vec<Factor>,
}

impl FactorStructure {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("at least one factor required".into()));
        }
        if let Some(f) = factors.iter().find(|f| f.size == 0) {
            return Err(Error::InvalidArgument(format!("factor {:?} has size 0", f.name)));
        }
        Ok(Self { factors })
    }

    /// Factors named `g0`, `g1`, … with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Self::new(
            sizes
                .iter()
                .enumerate()
                .map(|(k, &size)| Factor { name: format!("g{k}"), size })
                .collect(),
        )
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// K, the number of factors.
    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn size(&self, k: usize) -> usize {
        self.factors[k].size
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.size).collect()
    }

    /// N = Π n_k, the number of grid points.
    pub fn total_points(&self) -> usize {
        self.factors.iter().map(|f| f.size).product()
    }

    /// Angle 2π·j/n_k of element j in factor k.
    pub fn angle(&self, k: usize, j: usize) -> f64 {
        grid_angle(1, j as i64, self.size(k))
    }

    /// Row-major position of a group index (factor 0 varies slowest).
    pub fn flat_index(&self, g: &GroupIndex) -> usize {
        debug_assert_eq!(g.indices.len(), self.num_factors());
        let mut flat = 0;
        for (k, &j) in g.indices.iter().enumerate() {
            flat = flat * self.size(k) + j;
        }
        flat
    }

    pub fn index_from_flat(&self, mut flat: usize) -> GroupIndex {
        debug_assert!(flat < self.total_points());
        let mut indices = vec![0; self.num_factors()];
        for k in (0..self.num_factors()).rev() {
            indices[k] = flat % self.size(k);
            flat /= self.size(k);
        }
        GroupIndex { indices }
    }

    /// All grid indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = GroupIndex> + '_ {
        (0..self.total_points()).map(|flat| self.index_from_flat(flat))
    }

    /// Componentwise addition mod n_k.
    pub fn compose(&self, a: &GroupIndex, b: &GroupIndex) -> GroupIndex {
        let indices = a
            .indices
            .iter()
            .zip(&b.indices)
            .zip(&self.factors)
            .map(|((&x, &y), f)| (x + y) % f.size)
            .collect();
        GroupIndex { indices }
    }

    /// Componentwise negation mod n_k.
    pub fn inverse(&self, a: &GroupIndex) -> GroupIndex {
        let indices = a
            .indices
            .iter()
            .zip(&self.factors)
            .map(|(&x, f)| (f.size - x) % f.size)
            .collect();
        GroupIndex { indices }
    }
}

/// A point of the product group: one index per factor, each in [0, n_k).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupIndex {
    indices: Vec<usize>,
}

impl GroupIndex {
    pub fn new(indices: Vec<usize>, fs: &FactorStructure) -> Result<Self> {
        if indices.len() != fs.num_factors() {
            return Err(Error::DimensionMismatch(format!(
                "group index has {} components, structure has {} factors",
                indices.len(),
                fs.num_factors()
            )));
        }
        for (k, &j) in indices.iter().enumerate() {
            if j >= fs.size(k) {
                return Err(Error::InvalidArgument(format!(
                    "index {} out of range for factor {} of size {}",
                    j,
                    k,
                    fs.size(k)
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn components(&self) -> &[usize] {
        &self.indices
    }

    pub fn component(&self, k: usize) -> usize {
        self.indices[k]
    }
}

/// One integer rotation frequency per factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrequencyVector {
    omegas: Vec<i64>,
}

impl FrequencyVector {
    pub fn new(omegas: Vec<i64>) -> Self {
        Self { omegas }
    }

    pub fn components(&self) -> &[i64] {
        &self.omegas
    }

    pub fn component(&self, k: usize) -> i64 {
        self.omegas[k]
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// 2×2 rotation by `angle` radians. Errors on a non-finite angle.
pub fn rotation_matrix(angle: f64) -> Result<Matrix2<f64>> {
    if !angle.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite rotation angle {angle}")));
    }
    let (s, c) = angle.sin_cos();
    Ok(Matrix2::new(c, -s, s, c))
}

/// Angle 2π·((ω·j) mod n)/n, reduced in integer arithmetic.
///
/// Because the reduction happens on integers, `grid_angle(ω + n, j, n)` and
/// `grid_angle(ω, j + n, n)` are bitwise equal to `grid_angle(ω, j, n)`.
pub fn grid_angle(omega: i64, j: i64, n: usize) -> f64 {
    let n = n as i128;
    let m = (omega as i128 * j as i128).rem_euclid(n);
    std::f64::consts::TAU * (m as f64) / (n as f64)
}

/// (cos, sin) of [`grid_angle`]; the shared primitive behind every grid rotation.
pub fn grid_rotation(omega: i64, j: i64, n: usize) -> (f64, f64) {
    let (s, c) = grid_angle(omega, j, n).sin_cos();
    (c, s)
}

/// The block-diagonal representation ρ_ω(g) = diag_k R(ω_k·θ_{g_k}) acting on
/// R^{2K}: block k of the input is rotated by ω_k times the angle of g_k.
///
/// Application is blockwise in O(K); the full 2K×2K matrix is only ever
/// materialized by the [`BlockRotationRep::matrix`] debug accessor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRotationRep {
    frequency: FrequencyVector,
}

impl BlockRotationRep {
    pub fn new(frequency: FrequencyVector) -> Self {
        Self { frequency }
    }

    pub fn frequency(&self) -> &FrequencyVector {
        &self.frequency
    }

    /// 2K, the dimension the representation acts on.
    pub fn dimension(&self) -> usize {
        2 * self.frequency.len()
    }

    fn check(&self, fs: &FactorStructure, z: &[f64]) -> Result<()> {
        if self.frequency.len() != fs.num_factors() {
            return Err(Error::DimensionMismatch(format!(
                "frequency vector has {} components, structure has {} factors",
                self.frequency.len(),
                fs.num_factors()
            )));
        }
        if z.len() != self.dimension() {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {}, representation acts on dimension {}",
                z.len(),
                self.dimension()
            )));
        }
        Ok(())
    }

    /// ρ_ω(g)·z.
    pub fn apply(&self, g: &GroupIndex, fs: &FactorStructure, z: &[f64]) -> Result<Vec<f64>> {
        self.check(fs, z)?;
        let mut out = vec![0.0; z.len()];
        self.rotate_into(g, fs, z, &mut out, false);
        Ok(out)
    }

    /// ρ_ω(g)⁻¹·z = ρ_{-ω}(g)·z.
    pub fn apply_inverse(&self, g: &GroupIndex, fs: &FactorStructure, z: &[f64]) -> Result<Vec<f64>> {
        self.check(fs, z)?;
        let mut out = vec![0.0; z.len()];
        self.rotate_into(g, fs, z, &mut out, true);
        Ok(out)
    }

    pub(crate) fn rotate_into(
        &self,
        g: &GroupIndex,
        fs: &FactorStructure,
        z: &[f64],
        out: &mut [f64],
        inverse: bool,
    ) {
        for k in 0..self.frequency.len() {
            let omega = if inverse { -self.frequency.component(k) } else { self.frequency.component(k) };
            let (c, s) = grid_rotation(omega, g.component(k) as i64, fs.size(k));
            let (x, y) = (z[2 * k], z[2 * k + 1]);
            out[2 * k] = c * x - s * y;
            out[2 * k + 1] = s * x + c * y;
        }
    }

    /// The full 2K×2K matrix of ρ_ω(g); for inspection and tests only.
    pub fn matrix(&self, g: &GroupIndex, fs: &FactorStructure) -> DMatrix<f64> {
        let d = self.dimension();
        let mut m = DMatrix::zeros(d, d);
        for k in 0..self.frequency.len() {
            let (c, s) = grid_rotation(self.frequency.component(k), g.component(k) as i64, fs.size(k));
            m[(2 * k, 2 * k)] = c;
            m[(2 * k, 2 * k + 1)] = -s;
            m[(2 * k + 1, 2 * k)] = s;
            m[(2 * k + 1, 2 * k + 1)] = c;
        }
        m
    }
}
