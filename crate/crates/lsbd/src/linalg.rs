//! Deterministic symmetric eigendecomposition conventions shared by the
//! projection fit and the image encoder.
//!
//! On top of the raw solver the following conventions are applied so that
//! repeated runs (and mathematically equivalent inputs) produce the same
//! basis:
//!   1. eigenpairs sorted by descending eigenvalue; exact ties broken by
//!      descending lexicographic comparison of the (sign-fixed) vectors;
//!   2. each eigenvector's sign fixed so its largest-magnitude entry is
//!      positive (first such entry on magnitude ties);
//!   3. eigenvalues closer than 1e-9·max(1, λ_max) are treated as one
//!      degenerate group, and the group's basis is replaced by the canonical
//!      one obtained from its eigenspace projector applied to the standard
//!      basis vectors in coordinate order (Gram–Schmidt).
//!
//! Step 3 matters because a plain solver orients a degenerate eigenplane by
//! floating-point dust. Data whose factors act by pure rotation produce
//! exactly such planes, and an arbitrary orientation randomizes whether the
//! fitted rotation frequency comes out as +ω or −ω per factor. Aligning
//! degenerate planes with the data coordinates keeps the orientation stable
//! and reproducible.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Relative spread below which neighboring eigenvalues count as degenerate.
const DEGENERACY_TOL: f64 = 1e-9;
/// Residual norm below which a projected basis vector is considered absent.
const PROJECTION_TOL: f64 = 1e-6;

/// Full decomposition of a symmetric matrix with all conventions applied.
pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> Vec<EigenPair> {
    debug_assert_eq!(m.nrows(), m.ncols());
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let pairs = (0..m.ncols())
        .map(|i| EigenPair {
            value: eig.eigenvalues[i],
            vector: eig.eigenvectors.column(i).into_owned(),
        })
        .collect();
    canonicalize_pairs(pairs)
}

/// Sort, sign-fix and canonicalize an eigenpair list (vectors orthonormal).
pub(crate) fn canonicalize_pairs(mut pairs: Vec<EigenPair>) -> Vec<EigenPair> {
    for p in &mut pairs {
        sign_fix(&mut p.vector);
    }
    pairs.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .expect("non-finite eigenvalue")
            .then_with(|| lex_cmp_desc(&a.vector, &b.vector))
    });
    canonicalize_degenerate_groups(&mut pairs);
    pairs
}

/// Make the largest-magnitude entry positive (first such entry on ties).
fn sign_fix(v: &mut DVector<f64>) {
    let mut lead = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[lead].abs() {
            lead = i;
        }
    }
    if v[lead] < 0.0 {
        v.neg_mut();
    }
}

/// Descending lexicographic order: vectors with larger leading coordinates first.
fn lex_cmp_desc(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for i in 0..a.len() {
        match b[i].partial_cmp(&a[i]).expect("non-finite eigenvector entry") {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

fn canonicalize_degenerate_groups(pairs: &mut [EigenPair]) {
    if pairs.is_empty() {
        return;
    }
    let scale = f64::max(1.0, pairs[0].value.abs());
    let tol = DEGENERACY_TOL * scale;
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].value - pairs[end].value).abs() <= tol {
            end += 1;
        }
        if end - start >= 2 {
            canonicalize_group(&mut pairs[start..end]);
        }
        start = end;
    }
}

/// Replace a degenerate group's basis by Gram–Schmidt of its eigenspace
/// projector applied to e_0, e_1, … in coordinate order.
fn canonicalize_group(group: &mut [EigenPair]) {
    let dim = group[0].vector.len();
    let want = group.len();
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(want);
    for i in 0..dim {
        if chosen.len() == want {
            break;
        }
        // projector column i: Σ_v v * v[i]
        let mut u = DVector::zeros(dim);
        for p in group.iter() {
            u.axpy(p.vector[i], &p.vector, 1.0);
        }
        for w in &chosen {
            let c = w.dot(&u);
            u.axpy(-c, w, 1.0);
        }
        let norm = u.norm();
        if norm > PROJECTION_TOL {
            u /= norm;
            sign_fix(&mut u);
            chosen.push(u);
        }
    }
    if chosen.len() == want {
        for (p, v) in group.iter_mut().zip(chosen) {
            p.vector = v;
        }
    }
    // else: projector numerically deficient; keep the solver's basis
}

/// σ_max/σ_min of a square matrix (∞ if singular).
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
