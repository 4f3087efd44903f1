//! Synthetic grid-structured data: a translating-square image dataset, exact
//! toroidal embeddings with controlled corruptions, seeded random invertible
//! transforms, and a deterministic PCA image encoder — enough to drive the
//! whole pipeline end to end with known ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::group::{grid_rotation, FactorStructure, FrequencyVector};
use crate::linalg::{self, EigenPair};
use crate::metric::EncodingGrid;
use crate::{Error, Result};

/// A grid of square grayscale images, one per grid point, stored as raw
/// bytes: image `flat` occupies `[flat·S², (flat+1)·S²)` in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGrid {
    fs: FactorStructure,
    image_size: usize,
    pixels: Vec<u8>,
}

impl ImageGrid {
    pub fn new(fs: FactorStructure, image_size: usize, pixels: Vec<u8>) -> Result<Self> {
        if image_size == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let expected = fs.total_points() * image_size * image_size;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {} pixel bytes ({} images of {}×{}), got {}",
                expected,
                fs.total_points(),
                image_size,
                image_size,
                pixels.len()
            )));
        }
        Ok(Self { fs, image_size, pixels })
    }

    pub fn factor_structure(&self) -> &FactorStructure {
        &self.fs
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn num_images(&self) -> usize {
        self.fs.total_points()
    }

    /// Row-major pixels of one image.
    pub fn image(&self, flat: usize) -> &[u8] {
        let len = self.image_size * self.image_size;
        &self.pixels[flat * len..(flat + 1) * len]
    }

    /// The full raw blob, images concatenated in grid order.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Cyclically shift an `size`×`size` row-major image down by `dr` rows and
/// right by `dc` columns (pixel (r,c) moves to ((r+dr) mod size, (c+dc) mod size)).
pub fn cyclic_shift(image: &[u8], size: usize, dr: usize, dc: usize) -> Vec<u8> {
    assert_eq!(image.len(), size * size, "image length must be size²");
    let mut out = vec![0u8; image.len()];
    for r in 0..size {
        for c in 0..size {
            out[((r + dr) % size) * size + (c + dc) % size] = image[r * size + c];
        }
    }
    out
}

/// Dataset of a white square translating over a black background with
/// periodic wraparound: the image at grid index (i, j) has white pixels at
/// rows (i+a) mod image_size, cols (j+b) mod image_size for a, b in
/// [0, square_size). Index (0, 0) puts the square at the origin.
pub fn gen_square_translation(
    n0: usize,
    n1: usize,
    image_size: usize,
    square_size: usize,
) -> Result<ImageGrid> {
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidArgument("grid sizes must be positive".into()));
    }
    if square_size == 0 || square_size > image_size {
        return Err(Error::InvalidArgument(format!(
            "square size {square_size} must be in 1..={image_size}"
        )));
    }
    let fs = FactorStructure::from_sizes(&[n0, n1])?;
    let per_image = image_size * image_size;
    let mut pixels = vec![0u8; fs.total_points() * per_image];
    for i in 0..n0 {
        for j in 0..n1 {
            let base = (i * n1 + j) * per_image;
            for a in 0..square_size {
                let r = (i + a) % image_size;
                for b in 0..square_size {
                    let c = (j + b) % image_size;
                    pixels[base + r * image_size + c] = 255;
                }
            }
        }
    }
    ImageGrid::new(fs, image_size, pixels)
}

/// Recipe for a toroidal embedding: per-factor circle frequencies, optional
/// i.i.d. Gaussian noise, and an optional linear map applied afterwards.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub frequencies: FrequencyVector,
    pub noise_sigma: f64,
    pub linear_transform: Option<DMatrix<f64>>,
}

impl EmbeddingParams {
    /// Frequency 1 per factor, no noise, no transform.
    pub fn clean(num_factors: usize) -> Self {
        Self {
            frequencies: FrequencyVector::new(vec![1; num_factors]),
            noise_sigma: 0.0,
            linear_transform: None,
        }
    }
}

/// Transforms with a condition number at or above this are rejected.
const TRANSFORM_CONDITION_LIMIT: f64 = 1e6;

/// Grid encodings z_g = (cos ω̃_1θ_{g_1}, sin ω̃_1θ_{g_1}, …, cos ω̃_Kθ_{g_K},
/// sin ω̃_Kθ_{g_K}), optionally plus seeded Gaussian noise of scale
/// `noise_sigma` (drawn row by row, coordinate by coordinate), optionally
/// then mapped through `linear_transform`.
pub fn gen_perfect_embedding(
    fs: &FactorStructure,
    params: &EmbeddingParams,
    seed: u64,
) -> Result<EncodingGrid> {
    let k_count = fs.num_factors();
    let d = 2 * k_count;
    if params.frequencies.len() != k_count {
        return Err(Error::DimensionMismatch(format!(
            "{} frequencies given for {} factors",
            params.frequencies.len(),
            k_count
        )));
    }
    if !params.noise_sigma.is_finite() || params.noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise scale {} must be a nonnegative real",
            params.noise_sigma
        )));
    }
    if let Some(t) = &params.linear_transform {
        if t.nrows() != d || t.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "transform is {}×{}, embedding dimension is {d}",
                t.nrows(),
                t.ncols()
            )));
        }
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("transform contains a non-finite value".into()));
        }
        let cond = linalg::condition_number(t);
        if !(cond < TRANSFORM_CONDITION_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "transform condition number {cond:.3e} is not below {TRANSFORM_CONDITION_LIMIT:.0e}"
            )));
        }
    }

    let n = fs.total_points();
    let mut data = DMatrix::zeros(n, d);
    for (row, g) in fs.indices().enumerate() {
        for k in 0..k_count {
            let (c, s) =
                grid_rotation(params.frequencies.component(k), g.component(k) as i64, fs.size(k));
            data[(row, 2 * k)] = c;
            data[(row, 2 * k + 1)] = s;
        }
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in 0..n {
            for col in 0..d {
                let draw: f64 = rng.sample(StandardNormal);
                data[(row, col)] += params.noise_sigma * draw;
            }
        }
    }
    if let Some(t) = &params.linear_transform {
        data = data * t.transpose(); // row-vectors: z ← T·z
    }
    EncodingGrid::new(fs.clone(), data)
}

/// Seeded random matrix with i.i.d. standard-normal entries (filled row by
/// row), resampled until its condition number is below 1e3. Fails after 100
/// attempts.
pub fn gen_random_invertible(d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = rng.sample(StandardNormal);
            }
        }
        if linalg::condition_number(&m) < 1e3 {
            return Ok(m);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no well-conditioned {d}×{d} matrix found in 100 draws for seed {seed}"
    )))
}

/// Relative residual below which a principal component counts as converged.
const PCA_TOL: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 500;

/// Nonzero pixels of each image as (pixel index, value) pairs; images here
/// are sparse, so covariance products touch only lit pixels.
struct SparseImages {
    rows: Vec<Vec<(u32, f64)>>,
    mean: DVector<f64>,
    num_pixels: usize,
}

impl SparseImages {
    fn build(images: &ImageGrid) -> Self {
        let p = images.image_size() * images.image_size();
        let n = images.num_images();
        let mut mean = DVector::zeros(p);
        let rows = (0..n)
            .map(|i| {
                let img = images.image(i);
                let mut row = Vec::new();
                for (pix, &v) in img.iter().enumerate() {
                    if v != 0 {
                        row.push((pix as u32, v as f64));
                        mean[pix] += v as f64;
                    }
                }
                row
            })
            .collect();
        mean /= n as f64;
        Self { rows, mean, num_pixels: p }
    }

    /// q ↦ XᶜᵀXᶜq / N for the centered image matrix Xᶜ, without forming it.
    fn apply_cov(&self, q: &DVector<f64>) -> DVector<f64> {
        let n = self.rows.len();
        let mq = self.mean.dot(q);
        let mut u = DVector::zeros(n);
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(pix, v) in row {
                acc += v * q[pix as usize];
            }
            u[i] = acc - mq;
        }
        let mut w = DVector::zeros(self.num_pixels);
        for (i, row) in self.rows.iter().enumerate() {
            let ui = u[i];
            for &(pix, v) in row {
                w[pix as usize] += v * ui;
            }
        }
        let usum = u.sum();
        w.axpy(-usum, &self.mean, 1.0);
        w / n as f64
    }

    /// Centered image i dotted with a pixel-space vector.
    fn centered_dot(&self, i: usize, v: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for &(pix, val) in &self.rows[i] {
            acc += val * v[pix as usize];
        }
        acc - self.mean.dot(v)
    }
}

/// Top eigenpairs of the image covariance by blocked subspace iteration with
/// Rayleigh–Ritz extraction; deterministic seeded start, canonical
/// sign/order conventions on the result.
fn top_covariance_pairs(sparse: &SparseImages, dim: usize) -> Vec<EigenPair> {
    let n = sparse.rows.len();
    let p = sparse.num_pixels;
    let block = (dim + 8).min(n.min(p));
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut start = DMatrix::zeros(p, block);
    for j in 0..block {
        for i in 0..p {
            start[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut q = start.qr().q();

    let mut best: Option<(Vec<f64>, DMatrix<f64>)> = None;
    for _ in 0..PCA_MAX_ITERS {
        let mut y = DMatrix::zeros(p, block);
        for j in 0..block {
            let col = sparse.apply_cov(&DVector::from_column_slice(q.column(j).as_slice()));
            y.column_mut(j).copy_from(&col);
        }
        let b_small = q.transpose() * &y;
        let b_sym = (&b_small + b_small.transpose()) * 0.5;
        let ritz = linalg::symmetric_eigen(&b_sym);

        let values: Vec<f64> = ritz.iter().take(dim).map(|pr| pr.value).collect();
        let mut vectors = DMatrix::zeros(p, dim);
        let scale = values.first().copied().unwrap_or(0.0).max(1.0);
        let mut converged = true;
        for (j, pair) in ritz.iter().take(dim).enumerate() {
            let qv = &q * &pair.vector;
            let yv = &y * &pair.vector;
            let residual = (&yv - &qv * pair.value).norm();
            if residual > PCA_TOL * scale {
                converged = false;
            }
            vectors.column_mut(j).copy_from(&qv);
        }
        best = Some((values, vectors));
        if converged {
            break;
        }
        q = y.qr().q();
    }

    let (values, vectors) = best.expect("at least one subspace iteration ran");
    let pairs = values
        .into_iter()
        .enumerate()
        .map(|(j, value)| EigenPair {
            value,
            vector: DVector::from_column_slice(vectors.column(j).as_slice()),
        })
        .collect();
    linalg::canonicalize_pairs(pairs)
}

/// Deterministic image encoder: flatten, center, and project every image
/// onto the top `dim` principal components of the pixel covariance (same
/// ordering and sign conventions as the metric's own PCA).
pub fn encode_images_pca(images: &ImageGrid, dim: usize) -> Result<EncodingGrid> {
    let n = images.num_images();
    let p = images.image_size() * images.image_size();
    if dim == 0 || dim > n.min(p) {
        return Err(Error::InvalidArgument(format!(
            "component count {dim} must be in 1..={} (min of {n} images and {p} pixels)",
            n.min(p)
        )));
    }
    let sparse = SparseImages::build(images);
    let pairs = top_covariance_pairs(&sparse, dim);
    let mut scores = DMatrix::zeros(n, dim);
    for (j, pair) in pairs.iter().enumerate() {
        for i in 0..n {
            scores[(i, j)] = sparse.centered_dot(i, &pair.vector);
        }
    }
    EncodingGrid::new(images.factor_structure().clone(), scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupIndex;

    #[test]
    fn square_dataset_base_point_is_origin_square() {
        let grid = gen_square_translation(64, 64, 64, 8).unwrap();
        let img = grid.image(0);
        let mut white = 0;
        for r in 0..64 {
            for c in 0..64 {
                let v = img[r * 64 + c];
                if r < 8 && c < 8 {
                    assert_eq!(v, 255, "pixel ({r},{c}) should be white");
                } else {
                    assert_eq!(v, 0, "pixel ({r},{c}) should be black");
                }
                if v == 255 {
                    white += 1;
                }
            }
        }
        assert_eq!(white, 64);
    }

    #[test]
    fn square_wraps_at_the_border() {
        let grid = gen_square_translation(64, 64, 64, 8).unwrap();
        let fs = grid.factor_structure().clone();
        let idx = fs.flat_index(&GroupIndex::new(vec![60, 0], &fs).unwrap());
        let img = grid.image(idx);
        let white_rows: Vec<usize> =
            (0..64).filter(|&r| (0..64).any(|c| img[r * 64 + c] == 255)).collect();
        assert_eq!(white_rows, vec![0, 1, 2, 3, 60, 61, 62, 63]);
    }

    #[test]
    fn every_image_has_constant_mass() {
        let grid = gen_square_translation(8, 8, 16, 3).unwrap();
        for i in 0..grid.num_images() {
            let mass: u64 = grid.image(i).iter().map(|&v| v as u64).sum();
            assert_eq!(mass, 9 * 255);
            assert!(grid.image(i).iter().all(|&v| v == 0 || v == 255));
        }
    }

    #[test]
    fn translation_equals_cyclic_pixel_shift() {
        let grid = gen_square_translation(64, 64, 64, 8).unwrap();
        let fs = grid.factor_structure().clone();
        for (g, h) in [((0, 0), (5, 9)), ((60, 3), (10, 62)), ((31, 31), (33, 33))] {
            let g = GroupIndex::new(vec![g.0, g.1], &fs).unwrap();
            let h = GroupIndex::new(vec![h.0, h.1], &fs).unwrap();
            let moved = grid.image(fs.flat_index(&fs.compose(&g, &h)));
            let shifted =
                cyclic_shift(grid.image(fs.flat_index(&g)), 64, h.component(0), h.component(1));
            assert_eq!(moved, &shifted[..]);
        }
    }

    #[test]
    fn square_generator_validates_sizes() {
        assert!(gen_square_translation(0, 4, 8, 2).is_err());
        assert!(gen_square_translation(4, 4, 8, 0).is_err());
        assert!(gen_square_translation(4, 4, 8, 9).is_err());
        assert!(gen_square_translation(4, 4, 8, 8).is_ok());
    }

    #[test]
    fn perfect_embedding_hand_value() {
        let fs = FactorStructure::from_sizes(&[4, 4]).unwrap();
        let grid = gen_perfect_embedding(&fs, &EmbeddingParams::clean(2), 0).unwrap();
        let row = fs.flat_index(&GroupIndex::new(vec![1, 0], &fs).unwrap());
        let expected = [0.0, 1.0, 1.0, 0.0];
        for (j, &e) in expected.iter().enumerate() {
            assert!((grid.data()[(row, j)] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn clean_embedding_blocks_lie_on_unit_circles() {
        let fs = FactorStructure::from_sizes(&[6, 9]).unwrap();
        let params = EmbeddingParams {
            frequencies: FrequencyVector::new(vec![2, -3]),
            noise_sigma: 0.0,
            linear_transform: None,
        };
        let grid = gen_perfect_embedding(&fs, &params, 7).unwrap();
        for row in 0..54 {
            for k in 0..2 {
                let (x, y) = (grid.data()[(row, 2 * k)], grid.data()[(row, 2 * k + 1)]);
                assert!((x * x + y * y - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn embedding_generation_is_deterministic() {
        let fs = FactorStructure::from_sizes(&[5, 5]).unwrap();
        let params = EmbeddingParams {
            frequencies: FrequencyVector::new(vec![1, 2]),
            noise_sigma: 0.3,
            linear_transform: Some(gen_random_invertible(4, 9).unwrap()),
        };
        let a = gen_perfect_embedding(&fs, &params, 42).unwrap();
        let b = gen_perfect_embedding(&fs, &params, 42).unwrap();
        assert_eq!(a.data(), b.data(), "same seed must reproduce bitwise");
        let c = gen_perfect_embedding(&fs, &params, 43).unwrap();
        assert_ne!(a.data(), c.data(), "different seed must change the noise");
    }

    #[test]
    fn embedding_params_are_validated() {
        let fs = FactorStructure::from_sizes(&[4, 4]).unwrap();
        let mut params = EmbeddingParams::clean(2);
        params.noise_sigma = -0.1;
        assert!(gen_perfect_embedding(&fs, &params, 0).is_err());
        params.noise_sigma = f64::NAN;
        assert!(gen_perfect_embedding(&fs, &params, 0).is_err());

        let params = EmbeddingParams {
            frequencies: FrequencyVector::new(vec![1]),
            noise_sigma: 0.0,
            linear_transform: None,
        };
        assert!(gen_perfect_embedding(&fs, &params, 0).is_err());

        let mut params = EmbeddingParams::clean(2);
        params.linear_transform = Some(DMatrix::zeros(3, 3));
        assert!(gen_perfect_embedding(&fs, &params, 0).is_err());
        // two equal rows → singular → unbounded condition number
        let mut singular = DMatrix::identity(4, 4);
        let first_row = singular.row(0).clone_owned();
        singular.row_mut(1).copy_from(&first_row);
        params.linear_transform = Some(singular);
        assert!(gen_perfect_embedding(&fs, &params, 0).is_err());
    }

    #[test]
    fn random_invertible_is_seeded_and_well_conditioned() {
        let a = gen_random_invertible(4, 1).unwrap();
        let b = gen_random_invertible(4, 1).unwrap();
        assert_eq!(a, b);
        assert!(linalg::condition_number(&a) < 1e3);
        let inv = a.clone().try_inverse().expect("well-conditioned matrix inverts");
        let prod = &a * inv;
        assert!((prod - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        assert_ne!(a, gen_random_invertible(4, 2).unwrap());
    }

    #[test]
    fn pca_encoder_shapes_and_centering() {
        let images = gen_square_translation(8, 8, 16, 3).unwrap();
        let enc = encode_images_pca(&images, 4).unwrap();
        assert_eq!(enc.data().nrows(), 64);
        assert_eq!(enc.data().ncols(), 4);
        for j in 0..4 {
            let mean = enc.data().column(j).sum() / 64.0;
            assert!(mean.abs() < 1e-8, "column {j} mean {mean}");
        }
    }

    #[test]
    fn pca_encoder_is_deterministic() {
        let images = gen_square_translation(8, 8, 16, 3).unwrap();
        let a = encode_images_pca(&images, 4).unwrap();
        let b = encode_images_pca(&images, 4).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn pca_encoder_validates_dimension() {
        let images = gen_square_translation(4, 4, 8, 2).unwrap();
        assert!(encode_images_pca(&images, 0).is_err());
        assert!(encode_images_pca(&images, 17).is_err(), "more components than images");
        // encoding to fewer than 2K dimensions is allowed; metric fitting rejects it later
        let narrow = encode_images_pca(&images, 1).unwrap();
        assert_eq!(narrow.latent_dim(), 1);
    }

    #[test]
    fn pca_encoder_matches_dense_eigendecomposition() {
        // dense random images → generic spectrum, so canonical vectors are
        // unique and the iterative and dense paths must coincide
        let fs = FactorStructure::from_sizes(&[4, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pixels: Vec<u8> = (0..16 * 36).map(|_| rng.random_range(0..=255u8)).collect();
        let images = ImageGrid::new(fs, 6, pixels).unwrap();
        let enc = encode_images_pca(&images, 4).unwrap();

        let n = 16;
        let p = 36;
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            for q in 0..p {
                x[(i, q)] = images.image(i)[q] as f64;
            }
        }
        let col_means = x.row_mean();
        for i in 0..n {
            for q in 0..p {
                x[(i, q)] -= col_means[q];
            }
        }
        let cov = x.transpose() * &x / n as f64;
        let dense = linalg::symmetric_eigen(&cov);
        let sparse_pairs = top_covariance_pairs(&SparseImages::build(&images), 4);
        for j in 0..4 {
            let rel = (sparse_pairs[j].value - dense[j].value).abs() / dense[j].value.max(1.0);
            assert!(rel < 1e-8, "eigenvalue {j}: {} vs {}", sparse_pairs[j].value, dense[j].value);
            let diff = (&sparse_pairs[j].vector - &dense[j].vector).norm();
            assert!(diff < 1e-6, "eigenvector {j} differs by {diff}");
        }
        // scores equal the dense projection
        for i in 0..n {
            for j in 0..4 {
                let dense_score = x.row(i).transpose().dot(&dense[j].vector);
                assert!((enc.data()[(i, j)] - dense_score).abs() < 1e-6);
            }
        }
    }
}
