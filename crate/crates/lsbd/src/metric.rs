//! The disentanglement score: project encodings per factor, fit block
//! rotations, and measure how far the un-rotated grid is from a single point.
//!
//! Estimation follows four steps:
//!   1. [`center_encodings`] — for each factor k, subtract from every point
//!      the mean taken along factor k's own axis (all other coordinates held
//!      fixed), leaving the variation attributable to that factor;
//!   2. [`fit_projection`] / [`project`] — standardize each centered set by
//!      its per-coordinate population std (σ below 1e-12 treated as 1),
//!      project onto the top-2 principal components, scale by 1/√2; with
//!      whitening on, also divide each component by √eigenvalue and rescale
//!      the block to unit mean squared norm;
//!   3. a [`BlockRotationRep`] with one integer frequency per factor acts on
//!      the projected blocks;
//!   4. [`lsbd_loss`] — the mean squared distance of ρ_ω(g)⁻¹·z′_g from its
//!      grid mean, minimized over a frequency grid by [`evaluate`].
//!
//! [`lsbd_loss_pairwise`] and [`lsbd_loss_equivariance`] are algebraically
//! equivalent formulations kept as cross-checking oracles.

use nalgebra::{DMatrix, DVector};

use crate::group::{grid_rotation, FactorStructure, FrequencyVector};
use crate::linalg;
use crate::{Error, Result};

/// Latent encodings of a full data grid: row i holds the encoding of the
/// grid point with row-major flat index i (factor 0 slowest).
#[derive(Debug, Clone)]
pub struct EncodingGrid {
    fs: FactorStructure,
    data: DMatrix<f64>,
}

impl EncodingGrid {
    /// `data` is N×D with N = total grid points and D ≥ 2K, all entries finite.
    pub fn new(fs: FactorStructure, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != fs.total_points() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} points but data has {} rows",
                fs.total_points(),
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidArgument("encoding has zero columns".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("encoding contains a non-finite value".into()));
        }
        Ok(Self { fs, data })
    }

    pub fn factor_structure(&self) -> &FactorStructure {
        &self.fs
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn latent_dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Steps through grid indices in row-major order without allocating.
struct Odometer {
    sizes: Vec<usize>,
    counters: Vec<usize>,
}

impl Odometer {
    fn new(fs: &FactorStructure) -> Self {
        Self { sizes: fs.sizes(), counters: vec![0; fs.num_factors()] }
    }

    fn counters(&self) -> &[usize] {
        &self.counters
    }

    fn step(&mut self) {
        for k in (0..self.counters.len()).rev() {
            self.counters[k] += 1;
            if self.counters[k] < self.sizes[k] {
                return;
            }
            self.counters[k] = 0;
        }
    }
}

/// Row-major position among the factors other than k.
fn complement_index(fs: &FactorStructure, k: usize, counters: &[usize]) -> usize {
    let mut idx = 0;
    for (j, &c) in counters.iter().enumerate() {
        if j != k {
            idx = idx * fs.size(j) + c;
        }
    }
    idx
}

/// Mean encoding along factor k's axis, one row per complement assignment
/// ((N/n_k)×D).
fn axis_means(grid: &EncodingGrid, k: usize) -> DMatrix<f64> {
    let fs = grid.factor_structure();
    let n_k = fs.size(k);
    let mut sums = DMatrix::zeros(fs.total_points() / n_k, grid.latent_dim());
    let mut odo = Odometer::new(fs);
    for row in 0..fs.total_points() {
        let c = complement_index(fs, k, odo.counters());
        for d in 0..grid.latent_dim() {
            sums[(c, d)] += grid.data[(row, d)];
        }
        odo.step();
    }
    sums / n_k as f64
}

/// Centered set Z_k: every encoding minus the mean along factor k's own axis,
/// so the remaining variation is the part attributable to factor k.
pub fn center_encodings(grid: &EncodingGrid, k: usize) -> Result<DMatrix<f64>> {
    let fs = grid.factor_structure();
    if k >= fs.num_factors() {
        return Err(Error::InvalidArgument(format!(
            "factor {k} out of range for {} factors",
            fs.num_factors()
        )));
    }
    let means = axis_means(grid, k);
    let mut out = grid.data.clone();
    let mut odo = Odometer::new(fs);
    for row in 0..fs.total_points() {
        let c = complement_index(fs, k, odo.counters());
        for d in 0..grid.latent_dim() {
            out[(row, d)] -= means[(c, d)];
        }
        odo.step();
    }
    Ok(out)
}

/// Per-coordinate population std below this is treated as exactly 1 when
/// standardizing (degenerate coordinates carry no signal to rescale).
const SIGMA_FLOOR: f64 = 1e-12;
/// PC eigenvalues below this are not divided out in whitening mode.
const EIGENVALUE_FLOOR: f64 = 1e-12;
/// Losses within this of the sweep minimum count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct FactorProjection {
    /// mean along the factor's axis, indexed by complement position
    axis_means: DMatrix<f64>,
    /// per-coordinate population std of the centered set, floored
    sigma: DVector<f64>,
    /// top-2 principal axes as rows (2×D, orthonormal)
    basis: DMatrix<f64>,
    /// eigenvalues of the two kept components (nonnegative, descending)
    eigenvalues: [f64; 2],
}

/// Fitted per-factor statistics mapping an [`EncodingGrid`] to its
/// [`ProjectedGrid`].
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    fs: FactorStructure,
    latent_dim: usize,
    whitening: bool,
    factors: Vec<FactorProjection>,
}

impl ProjectionModel {
    pub fn whitening(&self) -> bool {
        self.whitening
    }

    /// Top-2 principal axes for factor k as rows (2×D).
    pub fn basis(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k].basis
    }

    /// Floored per-coordinate std used to standardize factor k.
    pub fn sigma(&self, k: usize) -> &DVector<f64> {
        &self.factors[k].sigma
    }

    /// Eigenvalues of the two kept components of factor k.
    pub fn eigenvalues(&self, k: usize) -> [f64; 2] {
        self.factors[k].eigenvalues
    }
}

/// Fit per-factor standardization and top-2 PCA on a grid of encodings.
///
/// Errors with [`Error::NoVariance`] if some factor's centered set is all
/// zeros (every coordinate's std below the floor), i.e. the encodings do not
/// depend on that factor at all.
pub fn fit_projection(grid: &EncodingGrid, whitening: bool) -> Result<ProjectionModel> {
    let fs = grid.factor_structure();
    if grid.latent_dim() < 2 * fs.num_factors() {
        return Err(Error::InvalidArgument(format!(
            "latent dimension {} is below 2K = {}; each factor needs a 2-D plane",
            grid.latent_dim(),
            2 * fs.num_factors()
        )));
    }
    if fs.total_points() < 3 {
        return Err(Error::InvalidArgument(format!(
            "fitting needs at least 3 grid points, got {}",
            fs.total_points()
        )));
    }
    let n = fs.total_points() as f64;
    let d = grid.latent_dim();
    let mut factors = Vec::with_capacity(fs.num_factors());
    for k in 0..fs.num_factors() {
        let means = axis_means(grid, k);
        let centered = center_encodings(grid, k)?;

        let mut sigma = DVector::zeros(d);
        let mut floored = 0usize;
        for j in 0..d {
            let col = centered.column(j);
            let mean = col.sum() / n;
            let var = (col.map(|x| x * x).sum() / n - mean * mean).max(0.0);
            let s = var.sqrt();
            if s < SIGMA_FLOOR {
                sigma[j] = 1.0;
                floored += 1;
            } else {
                sigma[j] = s;
            }
        }
        if floored == d {
            return Err(Error::NoVariance(k));
        }

        let mut standardized = centered;
        for j in 0..d {
            let inv = 1.0 / sigma[j];
            standardized.column_mut(j).scale_mut(inv);
        }
        let col_means = standardized.row_mean().transpose();
        for i in 0..standardized.nrows() {
            for j in 0..d {
                standardized[(i, j)] -= col_means[j];
            }
        }
        let cov = standardized.transpose() * &standardized / n;
        let pairs = linalg::symmetric_eigen(&cov);

        let mut basis = DMatrix::zeros(2, d);
        basis.row_mut(0).copy_from(&pairs[0].vector.transpose());
        basis.row_mut(1).copy_from(&pairs[1].vector.transpose());
        let eigenvalues = [pairs[0].value.max(0.0), pairs[1].value.max(0.0)];
        factors.push(FactorProjection { axis_means: means, sigma, basis, eigenvalues });
    }
    Ok(ProjectionModel { fs: fs.clone(), latent_dim: d, whitening, factors })
}

/// Encodings mapped to the normalized 2-D-per-factor representation space
/// (N×2K; block k in columns 2k, 2k+1).
#[derive(Debug, Clone)]
pub struct ProjectedGrid {
    fs: FactorStructure,
    data: DMatrix<f64>,
}

impl ProjectedGrid {
    pub fn new(fs: FactorStructure, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != fs.total_points() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} points but data has {} rows",
                fs.total_points(),
                data.nrows()
            )));
        }
        if data.ncols() != 2 * fs.num_factors() {
            return Err(Error::DimensionMismatch(format!(
                "projected data has {} columns, expected 2K = {}",
                data.ncols(),
                2 * fs.num_factors()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("projection contains a non-finite value".into()));
        }
        Ok(Self { fs, data })
    }

    pub fn factor_structure(&self) -> &FactorStructure {
        &self.fs
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Apply a fitted [`ProjectionModel`] to a grid with the same structure.
pub fn project(grid: &EncodingGrid, model: &ProjectionModel) -> Result<ProjectedGrid> {
    let fs = grid.factor_structure();
    if *fs != model.fs {
        return Err(Error::DimensionMismatch("grid structure differs from the fitted model".into()));
    }
    if grid.latent_dim() != model.latent_dim {
        return Err(Error::DimensionMismatch(format!(
            "grid has latent dimension {}, model was fitted on {}",
            grid.latent_dim(),
            model.latent_dim
        )));
    }
    let k_count = fs.num_factors();
    let n = fs.total_points();
    let d = grid.latent_dim();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = DMatrix::zeros(n, 2 * k_count);
    let mut v = vec![0.0; d];
    for k in 0..k_count {
        let fp = &model.factors[k];
        let mut odo = Odometer::new(fs);
        for row in 0..n {
            let c = complement_index(fs, k, odo.counters());
            for j in 0..d {
                v[j] = (grid.data[(row, j)] - fp.axis_means[(c, j)]) / fp.sigma[j];
            }
            for comp in 0..2 {
                let mut y: f64 = (0..d).map(|j| fp.basis[(comp, j)] * v[j]).sum();
                y *= scale;
                if model.whitening {
                    let lam = fp.eigenvalues[comp];
                    if lam >= EIGENVALUE_FLOOR {
                        y /= lam.sqrt();
                    }
                }
                out[(row, 2 * k + comp)] = y;
            }
            odo.step();
        }
        if model.whitening {
            let msq: f64 = (0..n)
                .map(|row| {
                    let (x, y) = (out[(row, 2 * k)], out[(row, 2 * k + 1)]);
                    x * x + y * y
                })
                .sum::<f64>()
                / n as f64;
            if msq > 0.0 {
                let inv = 1.0 / msq.sqrt();
                for row in 0..n {
                    out[(row, 2 * k)] *= inv;
                    out[(row, 2 * k + 1)] *= inv;
                }
            }
        }
    }
    ProjectedGrid::new(fs.clone(), out)
}

/// (cos, sin) of the inverse rotation per factor element: entry \[k\]\[j\] undoes
/// frequency ω_k at grid position j.
fn inverse_rotation_tables(fs: &FactorStructure, omega: &FrequencyVector) -> Vec<Vec<(f64, f64)>> {
    (0..fs.num_factors())
        .map(|k| {
            (0..fs.size(k))
                .map(|j| grid_rotation(-omega.component(k), j as i64, fs.size(k)))
                .collect()
        })
        .collect()
}

fn rotate_row_into(
    pg: &ProjectedGrid,
    row: usize,
    counters: &[usize],
    tables: &[Vec<(f64, f64)>],
    out: &mut [f64],
) {
    for (k, &j) in counters.iter().enumerate() {
        let (c, s) = tables[k][j];
        let x = pg.data[(row, 2 * k)];
        let y = pg.data[(row, 2 * k + 1)];
        out[2 * k] = c * x - s * y;
        out[2 * k + 1] = s * x + c * y;
    }
}

/// Dispersion of the un-rotated grid: (1/N)·Σ_g ‖ρ_ω(g)⁻¹z′_g − z̄‖² with
/// z̄ the mean of the un-rotated points. Zero iff the grid is exactly a
/// ρ_ω-orbit of a single point.
pub fn lsbd_loss(pg: &ProjectedGrid, omega: &FrequencyVector) -> f64 {
    let fs = pg.factor_structure();
    assert_eq!(omega.len(), fs.num_factors(), "frequency count must match factor count");
    let n = fs.total_points();
    let dim = 2 * fs.num_factors();
    let tables = inverse_rotation_tables(fs, omega);

    let mut mean = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    let mut odo = Odometer::new(fs);
    for row in 0..n {
        rotate_row_into(pg, row, odo.counters(), &tables, &mut u);
        for (m, x) in mean.iter_mut().zip(&u) {
            *m += x;
        }
        odo.step();
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut total = 0.0;
    let mut odo = Odometer::new(fs);
    for row in 0..n {
        rotate_row_into(pg, row, odo.counters(), &tables, &mut u);
        total += u.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
        odo.step();
    }
    total / n as f64
}

/// Same quantity as [`lsbd_loss`] written without the mean:
/// (1/2N²)·Σ_{g,g′} ‖ρ_ω(g)⁻¹z′_g − ρ_ω(g′)⁻¹z′_{g′}‖². O(N²); kept as a
/// cross-checking oracle for small grids.
pub fn lsbd_loss_pairwise(pg: &ProjectedGrid, omega: &FrequencyVector) -> f64 {
    let fs = pg.factor_structure();
    assert_eq!(omega.len(), fs.num_factors(), "frequency count must match factor count");
    let n = fs.total_points();
    let dim = 2 * fs.num_factors();
    let tables = inverse_rotation_tables(fs, omega);

    let mut rotated = DMatrix::zeros(n, dim);
    let mut u = vec![0.0; dim];
    let mut odo = Odometer::new(fs);
    for row in 0..n {
        rotate_row_into(pg, row, odo.counters(), &tables, &mut u);
        for (j, &x) in u.iter().enumerate() {
            rotated[(row, j)] = x;
        }
        odo.step();
    }

    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let mut dist = 0.0;
            for j in 0..dim {
                let diff = rotated[(a, j)] - rotated[(b, j)];
                dist += diff * diff;
            }
            total += dist;
        }
    }
    total / (2.0 * (n as f64) * (n as f64))
}

/// Same quantity written through the group action: the mean over pairs
/// (h, g) of ‖ρ_ω(h)⁻¹·z′_{h∘g} − z′_g‖²/2, i.e. how far the representation
/// is from transporting each point onto every other. O(N²) oracle.
pub fn lsbd_loss_equivariance(pg: &ProjectedGrid, omega: &FrequencyVector) -> f64 {
    let fs = pg.factor_structure();
    assert_eq!(omega.len(), fs.num_factors(), "frequency count must match factor count");
    let n = fs.total_points();
    let k_count = fs.num_factors();
    let tables = inverse_rotation_tables(fs, omega);

    let mut total = 0.0;
    let mut odo_a = Odometer::new(fs);
    for row_a in 0..n {
        let mut odo_b = Odometer::new(fs);
        for row_b in 0..n {
            // h = a ∘ b⁻¹, so that h ∘ b = a
            let mut dist = 0.0;
            for k in 0..k_count {
                let n_k = fs.size(k);
                let h_k = (odo_a.counters()[k] + n_k - odo_b.counters()[k]) % n_k;
                let (c, s) = tables[k][h_k];
                let x = pg.data[(row_a, 2 * k)];
                let y = pg.data[(row_a, 2 * k + 1)];
                let dx = c * x - s * y - pg.data[(row_b, 2 * k)];
                let dy = s * x + c * y - pg.data[(row_b, 2 * k + 1)];
                dist += dx * dx + dy * dy;
            }
            total += dist;
            odo_b.step();
        }
        odo_a.step();
    }
    total / (2.0 * (n as f64) * (n as f64))
}

/// Inclusive integer frequency range for one factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaRange {
    lo: i64,
    hi: i64,
}

impl OmegaRange {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty frequency range {lo}:{hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for OmegaRange {
    /// The default search range, −10..=10.
    fn default() -> Self {
        Self { lo: -10, hi: 10 }
    }
}

/// Search result: the full loss table and the minimizing frequency vector.
#[derive(Debug, Clone)]
pub struct LsbdReport {
    /// (ω, loss) for every searched combination, ω-lexicographic order.
    pub table: Vec<(FrequencyVector, f64)>,
    /// Lexicographically smallest ω whose loss is within 1e−12 of the minimum.
    pub best: FrequencyVector,
    /// Minimum loss over the table.
    pub l_lsbd: f64,
    /// Whether the projection used whitening.
    pub whitening: bool,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct EvaluateOptions {
    pub whitening: bool,
    /// Worker threads for the frequency sweep (0 and 1 both mean serial).
    pub threads: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self { whitening: false, threads: 1 }
    }
}

/// Expand per-factor ranges into the lexicographically ordered product.
fn omega_grid(ranges: &[OmegaRange]) -> Vec<FrequencyVector> {
    let total: usize = ranges.iter().map(|r| r.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0i64; ranges.len()];
    fn rec(ranges: &[OmegaRange], k: usize, current: &mut Vec<i64>, out: &mut Vec<FrequencyVector>) {
        if k == ranges.len() {
            out.push(FrequencyVector::new(current.clone()));
            return;
        }
        for w in ranges[k].lo..=ranges[k].hi {
            current[k] = w;
            rec(ranges, k + 1, current, out);
        }
    }
    rec(ranges, 0, &mut current, &mut out);
    out
}

fn resolve_ranges(ranges: &[OmegaRange], k: usize) -> Result<Vec<OmegaRange>> {
    if ranges.len() == 1 {
        return Ok(vec![ranges[0]; k]);
    }
    if ranges.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} frequency ranges given for {} factors (give one, or one per factor)",
            ranges.len(),
            k
        )));
    }
    Ok(ranges.to_vec())
}

/// Sweep the frequency grid over an already-projected grid.
///
/// The table is in ω-lexicographic order regardless of thread count; the
/// reported best is the lexicographically smallest ω whose loss lies within
/// 1e−12 of the table minimum.
pub fn frequency_search(
    pg: &ProjectedGrid,
    ranges: &[OmegaRange],
    threads: usize,
    whitening: bool,
) -> Result<LsbdReport> {
    let ranges = resolve_ranges(ranges, pg.factor_structure().num_factors())?;
    let omegas = omega_grid(&ranges);
    let losses = sweep(pg, &omegas, threads.max(1));

    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let best_pos = losses
        .iter()
        .position(|&l| l <= min + TIE_TOL)
        .expect("sweep produced at least one loss");
    let best = omegas[best_pos].clone();
    let table = omegas.into_iter().zip(losses).collect();
    Ok(LsbdReport { table, best, l_lsbd: min, whitening })
}

fn sweep(pg: &ProjectedGrid, omegas: &[FrequencyVector], threads: usize) -> Vec<f64> {
    if threads <= 1 || omegas.len() < 2 {
        return omegas.iter().map(|w| lsbd_loss(pg, w)).collect();
    }
    let workers = threads.min(omegas.len());
    let chunk = omegas.len().div_ceil(workers);
    let chunks: Vec<&[FrequencyVector]> = omegas.chunks(chunk).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|c| scope.spawn(move || c.iter().map(|w| lsbd_loss(pg, w)).collect::<Vec<f64>>()))
            .collect();
        let mut out = Vec::with_capacity(omegas.len());
        for h in handles {
            out.extend(h.join().expect("sweep worker panicked"));
        }
        out
    })
}

/// Full pipeline: fit the projection, project, and minimize the loss over
/// the frequency grid. `ranges` holds one range per factor, or a single
/// range applied to every factor.
pub fn evaluate(
    grid: &EncodingGrid,
    ranges: &[OmegaRange],
    options: EvaluateOptions,
) -> Result<LsbdReport> {
    let model = fit_projection(grid, options.whitening)?;
    let pg = project(grid, &model)?;
    frequency_search(&pg, ranges, options.threads, options.whitening)
}
