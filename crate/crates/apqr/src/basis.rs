//! Functional data containers and baseline basis extraction: per-column
//! standardization, principal components of the curve covariance, and
//! covariance-driven partial least squares with deflation.
//!
//! Curves are observed on a shared grid of `d` points in [0, 1]. Projections
//! are plain dot products of curve rows with basis columns; the uniform-grid
//! quadrature constant this drops relative to a true integral is absorbed by
//! the downstream regression coefficients.

use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;

use crate::error::{ApqrError, Result};

/// `n` curves sampled on a shared, strictly increasing grid spanning [0, 1].
///
/// `center`/`scale` are present once the set has been standardized and hold
/// the training transform so it can be replayed on new data. `raw_grid`
/// keeps the original grid when the input was affinely rescaled to [0, 1].
#[derive(Debug, Clone)]
pub struct CurveSet {
    grid: Vec<f64>,
    curves: DMatrix<f64>,
    center: Option<DVector<f64>>,
    scale: Option<DVector<f64>>,
    raw_grid: Option<Vec<f64>>,
}

impl CurveSet {
    pub fn new(grid: Vec<f64>, curves: DMatrix<f64>) -> Result<Self> {
        Self::with_raw_grid(grid, curves, None)
    }

    pub fn with_raw_grid(
        grid: Vec<f64>,
        curves: DMatrix<f64>,
        raw_grid: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = grid.len();
        if d < 2 {
            return Err(ApqrError::Shape(format!(
                "grid needs at least 2 points, got {d}"
            )));
        }
        if curves.ncols() != d {
            return Err(ApqrError::Shape(format!(
                "curves have {} columns but the grid has {d} points",
                curves.ncols()
            )));
        }
        if curves.nrows() == 0 {
            return Err(ApqrError::Shape("curve set has no rows".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || curves.iter().any(|v| !v.is_finite()) {
            return Err(ApqrError::NonFinite("curve set"));
        }
        if grid[0] != 0.0 || grid[d - 1] != 1.0 {
            return Err(ApqrError::Shape(format!(
                "grid must span [0, 1] exactly (got [{}, {}]); rescale on load",
                grid[0],
                grid[d - 1]
            )));
        }
        for (j, w) in grid.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(ApqrError::Shape(format!(
                    "grid must be strictly increasing: column {} ({}) <= column {} ({})",
                    j + 2,
                    w[1],
                    j + 1,
                    w[0]
                )));
            }
        }
        Ok(CurveSet {
            grid,
            curves,
            center: None,
            scale: None,
            raw_grid,
        })
    }

    pub fn n(&self) -> usize {
        self.curves.nrows()
    }

    pub fn d(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn center(&self) -> Option<&DVector<f64>> {
        self.center.as_ref()
    }

    pub fn scale(&self) -> Option<&DVector<f64>> {
        self.scale.as_ref()
    }

    pub fn raw_grid(&self) -> Option<&[f64]> {
        self.raw_grid.as_deref()
    }

    /// Apply a stored training transform to these (raw) curves.
    pub fn standardized_with(&self, center: &DVector<f64>, scale: &DVector<f64>) -> Result<CurveSet> {
        let d = self.d();
        if center.len() != d || scale.len() != d {
            return Err(ApqrError::Shape(format!(
                "standardization transform has length {}/{} but curves have {d} grid points",
                center.len(),
                scale.len()
            )));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(ApqrError::InvalidParameter(
                "standardization scales must be strictly positive".into(),
            ));
        }
        let mut out = self.curves.clone();
        for j in 0..d {
            let c = center[j];
            let s = scale[j];
            for i in 0..out.nrows() {
                out[(i, j)] = (out[(i, j)] - c) / s;
            }
        }
        Ok(CurveSet {
            grid: self.grid.clone(),
            curves: out,
            center: Some(center.clone()),
            scale: Some(scale.clone()),
            raw_grid: self.raw_grid.clone(),
        })
    }

    /// Select a subset of rows (cloning), preserving grid metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Result<CurveSet> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(ApqrError::Shape("row index out of range".into()));
        }
        let mut out = DMatrix::zeros(rows.len(), self.d());
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).copy_from(&self.curves.row(r));
        }
        CurveSet::with_raw_grid(self.grid.clone(), out, self.raw_grid.clone())
    }
}

/// Center each grid column to mean zero and scale to unit sample variance
/// (divisor n-1), recording the transform for later use on test data.
pub fn standardize(raw: &CurveSet) -> Result<CurveSet> {
    let n = raw.n();
    let d = raw.d();
    if n < 2 {
        return Err(ApqrError::Shape(
            "standardization needs at least 2 curves".into(),
        ));
    }
    let mut center = DVector::zeros(d);
    let mut scale = DVector::zeros(d);
    for j in 0..d {
        let col = raw.curves().column(j);
        let m = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(ApqrError::DegenerateColumn { column: j + 1 });
        }
        center[j] = m;
        scale[j] = sd;
    }
    raw.standardized_with(&center, &scale)
}

/// Which extraction produced a basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Fpc,
    Pls,
    Pqr,
    Apqr,
    Random,
}

impl BasisKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisKind::Fpc => "fpc",
            BasisKind::Pls => "pls",
            BasisKind::Pqr => "pqr",
            BasisKind::Apqr => "apqr",
            BasisKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fpc" => Ok(BasisKind::Fpc),
            "pls" => Ok(BasisKind::Pls),
            "pqr" => Ok(BasisKind::Pqr),
            "apqr" => Ok(BasisKind::Apqr),
            "random" => Ok(BasisKind::Random),
            other => Err(ApqrError::InvalidParameter(format!(
                "unknown basis kind '{other}'"
            ))),
        }
    }
}

/// A `d x K` matrix of basis vectors tied to the grid it was fit on.
///
/// Canonical form orders columns by descending first-row entry, with ties
/// broken by subsequent rows; this fixes the column-permutation
/// indeterminacy of the extraction.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    vectors: DMatrix<f64>,
    kind: BasisKind,
    grid: Vec<f64>,
}

fn column_cmp(m: &DMatrix<f64>, a: usize, b: usize) -> Ordering {
    for r in 0..m.nrows() {
        let (va, vb) = (m[(r, a)], m[(r, b)]);
        // descending order
        match vb.partial_cmp(&va) {
            Some(Ordering::Equal) | None => continue,
            Some(ord) => return ord,
        }
    }
    Ordering::Equal
}

impl BasisMatrix {
    pub fn new(vectors: DMatrix<f64>, kind: BasisKind, grid: Vec<f64>) -> Result<Self> {
        if vectors.ncols() == 0 {
            return Err(ApqrError::Shape("basis needs at least one column".into()));
        }
        if vectors.nrows() != grid.len() {
            return Err(ApqrError::Shape(format!(
                "basis has {} rows but the grid has {} points",
                vectors.nrows(),
                grid.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(ApqrError::NonFinite("basis matrix"));
        }
        for k in 0..vectors.ncols() {
            if vectors.column(k).iter().all(|v| *v == 0.0) {
                return Err(ApqrError::Shape(format!("basis column {} is zero", k + 1)));
            }
        }
        Ok(BasisMatrix {
            vectors,
            kind,
            grid,
        })
    }

    /// Constructor without the nonzero-column check, for intermediate
    /// optimizer states; final outputs go through [`Self::new`].
    pub(crate) fn new_unchecked(vectors: DMatrix<f64>, kind: BasisKind, grid: Vec<f64>) -> Self {
        BasisMatrix {
            vectors,
            kind,
            grid,
        }
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    /// Column order under the canonical (descending-lexicographic)
    /// comparator; stable, so duplicate columns keep their original order.
    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| column_cmp(&self.vectors, a, b).then(a.cmp(&b)));
        order
    }

    /// Reorder columns so first-row entries descend (ties broken by later
    /// rows, then by original index). Emits a warning for duplicate columns,
    /// where the order between them stays by original index.
    pub fn canonicalized(&self) -> BasisMatrix {
        let order = self.canonical_order();
        for w in order.windows(2) {
            if column_cmp(&self.vectors, w[0], w[1]) == Ordering::Equal {
                log::warn!("basis has duplicate columns; keeping original order between them");
            }
        }
        let mut out = DMatrix::zeros(self.d(), self.k());
        for (new_k, &old_k) in order.iter().enumerate() {
            out.column_mut(new_k).copy_from(&self.vectors.column(old_k));
        }
        BasisMatrix {
            vectors: out,
            kind: self.kind,
            grid: self.grid.clone(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        let order = self.canonical_order();
        order.iter().enumerate().all(|(i, &k)| i == k)
    }

    /// Sum of columns, always accumulated in canonical column order so the
    /// result is bitwise invariant under column permutations.
    pub fn column_sum(&self) -> DVector<f64> {
        let order = self.canonical_order();
        let mut sum = DVector::zeros(self.d());
        for &k in &order {
            sum += self.vectors.column(k);
        }
        sum
    }
}

/// Principal component extraction output: the canonicalized basis plus the
/// covariance eigenvalues (descending) behind the selected columns.
#[derive(Debug, Clone)]
pub struct FpcResult {
    pub basis: BasisMatrix,
    pub eigenvalues: DVector<f64>,
}

/// Top-K unit eigenvectors of the empirical curve covariance (divisor n-1)
/// in descending eigenvalue order, sign-fixed so the largest-magnitude entry
/// is positive. Used directly where eigenvalue order matters (the
/// curve-driven simulation); the basis API canonicalizes on top of this.
pub(crate) fn covariance_eigen_vectors(z: &CurveSet, k: usize) -> DMatrix<f64> {
    let (vectors, _) = covariance_eigen(z, k);
    vectors
}

fn covariance_eigen(z: &CurveSet, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = z.n();
    let d = z.d();
    let mut centered = z.curves().clone();
    for j in 0..d {
        let m = centered.column(j).sum() / n as f64;
        for i in 0..n {
            centered[(i, j)] -= m;
        }
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
    });
    let mut vectors = DMatrix::zeros(d, k);
    let mut eigenvalues = DVector::zeros(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        // sign convention: largest-magnitude coordinate positive
        let mut argmax = 0;
        for r in 1..d {
            if v[r].abs() > v[argmax].abs() {
                argmax = r;
            }
        }
        if v[argmax] < 0.0 {
            v.neg_mut();
        }
        vectors.column_mut(col).copy_from(&v);
        eigenvalues[col] = eig.eigenvalues[idx];
    }
    (vectors, eigenvalues)
}

/// Top-K eigenvectors of the empirical covariance of the curves
/// (divisor n-1), unit-norm, sign-fixed so the largest-magnitude entry is
/// positive, then canonicalized. The reported eigenvalues stay in
/// descending order regardless of the canonical column order.
pub fn fpc_extract(z: &CurveSet, k: usize) -> Result<FpcResult> {
    let n = z.n();
    let d = z.d();
    let k_max = (n - 1).min(d);
    if k == 0 || k > k_max {
        return Err(ApqrError::Capacity(format!(
            "requested {k} components but at most {k_max} are available (n = {n}, d = {d})"
        )));
    }
    let (vectors, eigenvalues) = covariance_eigen(z, k);
    let basis = BasisMatrix::new(vectors, BasisKind::Fpc, z.grid().to_vec())?.canonicalized();
    Ok(FpcResult { basis, eigenvalues })
}

/// See [`fpc_extract`]; drops the eigenvalues.
pub fn fpc_basis(z: &CurveSet, k: usize) -> Result<BasisMatrix> {
    Ok(fpc_extract(z, k)?.basis)
}

/// Partial least squares extraction output: canonicalized weights plus the
/// per-component score vectors from the deflation sequence (mutually
/// orthogonal by construction).
#[derive(Debug, Clone)]
pub struct PlsResult {
    pub basis: BasisMatrix,
    pub scores: DMatrix<f64>,
}

/// Iterative PLS on the curves: the response is first partialled on the
/// scalar covariates by least squares; each weight vector is the covariance
/// between the current response residual and the grid columns of the current
/// curve residuals, after which both are deflated on the extracted score.
pub fn pls_extract(
    z: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    k: usize,
) -> Result<PlsResult> {
    let n = z.n();
    let d = z.d();
    let k_max = (n - 1).min(d);
    if k == 0 || k > k_max {
        return Err(ApqrError::Capacity(format!(
            "requested {k} components but at most {k_max} are available (n = {n}, d = {d})"
        )));
    }
    if y.len() != n {
        return Err(ApqrError::Shape(format!(
            "response length {} does not match {n} curves",
            y.len()
        )));
    }
    // partial out (alpha, x) from the response by least squares
    let p = x.map_or(0, |m| m.ncols());
    if let Some(m) = x {
        if m.nrows() != n {
            return Err(ApqrError::Shape(format!(
                "scalar covariates have {} rows but there are {n} curves",
                m.nrows()
            )));
        }
    }
    let mut design = DMatrix::from_element(n, 1 + p, 1.0);
    if let Some(m) = x {
        design.view_mut((0, 1), (n, p)).copy_from(m);
    }
    let coef = design
        .clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| ApqrError::Singular(e.to_string()))?;
    let mut resid = y - &design * &coef;

    let mut work = z.curves().clone();
    let mut weights = DMatrix::zeros(d, k);
    let mut scores = DMatrix::zeros(n, k);
    let exhaustion_floor = 1e-10 * (1.0 + resid.norm()) * (1.0 + work.norm());
    for comp in 0..k {
        let w_raw = work.tr_mul(&resid);
        let norm = w_raw.norm();
        if norm <= exhaustion_floor {
            return Err(ApqrError::BasisExhausted { extracted: comp });
        }
        let w = w_raw / norm;
        let s = &work * &w;
        let s_norm2 = s.dot(&s);
        if s_norm2 <= 0.0 {
            return Err(ApqrError::BasisExhausted { extracted: comp });
        }
        // deflate curves and response on the extracted score
        let loading = work.tr_mul(&s) / s_norm2;
        work -= &s * loading.transpose();
        let y_loading = s.dot(&resid) / s_norm2;
        resid -= &s * y_loading;
        weights.column_mut(comp).copy_from(&w);
        scores.column_mut(comp).copy_from(&s);
    }
    let basis = BasisMatrix::new(weights, BasisKind::Pls, z.grid().to_vec())?.canonicalized();
    Ok(PlsResult { basis, scores })
}

/// See [`pls_extract`]; drops the deflation scores.
pub fn pls_basis(
    z: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    k: usize,
) -> Result<BasisMatrix> {
    Ok(pls_extract(z, x, y, k)?.basis)
}

/// Project curves onto a basis: the plain matrix product `curves * C`.
pub fn project(z: &CurveSet, c: &BasisMatrix) -> Result<DMatrix<f64>> {
    if z.grid() != c.grid() {
        return Err(ApqrError::Shape(
            "curve grid does not match the grid the basis was fit on".into(),
        ));
    }
    Ok(z.curves() * c.vectors())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_grid(d: usize) -> Vec<f64> {
        (0..d).map(|j| j as f64 / (d - 1) as f64).collect()
    }

    fn random_curves(n: usize, d: usize, seed: u64) -> CurveSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        CurveSet::new(uniform_grid(d), m).unwrap()
    }

    #[test]
    fn curve_set_validation() {
        let m = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!(CurveSet::new(vec![0.0, 1.0], m.clone()).is_ok());
        assert!(CurveSet::new(vec![0.0], DMatrix::from_row_slice(1, 1, &[1.0])).is_err());
        assert!(CurveSet::new(vec![0.0, 0.5], m.clone()).is_err()); // must end at 1
        assert!(CurveSet::new(vec![1.0, 0.0], m).is_err());
    }

    #[test]
    fn standardize_hand_example() {
        let m = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
        let cs = CurveSet::new(vec![0.0, 1.0], m).unwrap();
        let std = standardize(&cs).unwrap();
        for j in 0..2 {
            let col = std.curves().column(j);
            let mean = col.sum() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
        assert_eq!(std.center().unwrap()[1], 2.0);
        assert_eq!(std.scale().unwrap()[1], 2.0);
    }

    #[test]
    fn standardize_location_invariance() {
        let cs = random_curves(10, 4, 1);
        let shifted = CurveSet::new(
            cs.grid().to_vec(),
            cs.curves().map(|v| v + 7.5),
        )
        .unwrap();
        let a = standardize(&cs).unwrap();
        let b = standardize(&shifted).unwrap();
        for (x, y) in a.curves().iter().zip(b.curves().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_idempotent() {
        let cs = random_curves(12, 5, 2);
        let once = standardize(&cs).unwrap();
        let twice = standardize(&once).unwrap();
        for (x, y) in once.curves().iter().zip(twice.curves().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let mut m = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64);
        for i in 0..5 {
            m[(i, 1)] = 2.0;
        }
        let cs = CurveSet::new(uniform_grid(3), m).unwrap();
        match standardize(&cs) {
            Err(ApqrError::DegenerateColumn { column }) => assert_eq!(column, 2),
            other => panic!("expected degenerate column error, got {other:?}"),
        }
    }

    #[test]
    fn fpc_rank_one_recovers_direction() {
        let d = 12;
        let grid = uniform_grid(d);
        let phi: Vec<f64> = grid.iter().map(|t| (std::f64::consts::PI * t).sin()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let amplitudes: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * rng.random_range(0.5..1.5)
            })
            .collect();
        let m = DMatrix::from_fn(n, d, |i, j| amplitudes[i] * phi[j]);
        let cs = CurveSet::new(grid, m).unwrap();
        let result = fpc_extract(&cs, 1).unwrap();
        let v = result.basis.vectors().column(0);
        let norm_phi = DVector::from_vec(phi.clone()).normalize();
        let dot: f64 = v.iter().zip(norm_phi.iter()).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 1.0 - 1e-8, "|dot| = {}", dot.abs());
    }

    #[test]
    fn fpc_eigenvalues_descend_and_nonnegative() {
        let cs = random_curves(30, 8, 4);
        let result = fpc_extract(&standardize(&cs).unwrap(), 6).unwrap();
        for w in result.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        for &l in result.eigenvalues.iter() {
            assert!(l >= -1e-10);
        }
    }

    #[test]
    fn fpc_capacity_error() {
        let cs = random_curves(5, 8, 5);
        assert!(matches!(fpc_extract(&cs, 5), Err(ApqrError::Capacity(_))));
        assert!(fpc_extract(&cs, 4).is_ok());
    }

    #[test]
    fn fpc_reconstruction_at_full_rank() {
        let cs = random_curves(9, 6, 6);
        let n = cs.n();
        let d = cs.d();
        // center the curves; full-rank basis must reproduce them
        let mut centered = cs.curves().clone();
        for j in 0..d {
            let m = centered.column(j).sum() / n as f64;
            for i in 0..n {
                centered[(i, j)] -= m;
            }
        }
        let centered_cs = CurveSet::new(cs.grid().to_vec(), centered.clone()).unwrap();
        let k = (n - 1).min(d);
        let basis = fpc_basis(&centered_cs, k).unwrap();
        let scores = project(&centered_cs, &basis).unwrap();
        let recon = &scores * basis.vectors().transpose();
        let err = (&recon - &centered).norm() / centered.norm();
        assert!(err < 1e-6, "relative reconstruction error {err}");
    }

    #[test]
    fn fpc_row_permutation_invariance() {
        let cs = random_curves(15, 6, 7);
        let std = standardize(&cs).unwrap();
        let a = fpc_basis(&std, 3).unwrap();
        let perm: Vec<usize> = vec![14, 3, 7, 0, 1, 2, 4, 5, 6, 8, 9, 10, 11, 12, 13];
        let permuted = std.select_rows(&perm).unwrap();
        let b = fpc_basis(&permuted, 3).unwrap();
        for (x, y) in a.vectors().iter().zip(b.vectors().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn pls_single_direction_signal() {
        // curves with orthonormal columns (after centering), so the first
        // weight is proportional to the planted direction
        let n = 400;
        let d = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0f64..1.0));
        // center, then orthonormalize columns via QR
        let mut centered = raw.clone();
        for j in 0..d {
            let m = centered.column(j).sum() / n as f64;
            for i in 0..n {
                centered[(i, j)] -= m;
            }
        }
        let qr = centered.qr();
        let q = qr.q();
        let z_mat = q.columns(0, d).into_owned() * (n as f64 - 1.0).sqrt();
        let cs = CurveSet::new(uniform_grid(d), z_mat.clone()).unwrap();
        let w_true = DVector::from_vec(vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.2]).normalize();
        let mut y = &z_mat * &w_true;
        for v in y.iter_mut() {
            *v += rng.random_range(-1e-4..1e-4);
        }
        let result = pls_extract(&cs, None, &y, 1).unwrap();
        let w = result.basis.vectors().column(0);
        let corr = crate::util::pearson(
            w.iter().cloned().collect::<Vec<_>>().as_slice(),
            w_true.iter().cloned().collect::<Vec<_>>().as_slice(),
        );
        assert!(corr.abs() > 0.999, "corr = {corr}");
    }

    #[test]
    fn pls_scores_mutually_orthogonal() {
        let cs = random_curves(40, 8, 9);
        let std = standardize(&cs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = DVector::from_fn(40, |_, _| rng.random_range(-2.0..2.0));
        let result = pls_extract(&std, None, &y, 4).unwrap();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let dot = result.scores.column(a).dot(&result.scores.column(b));
                assert!(dot.abs() <= 1e-8, "scores {a},{b} not orthogonal: {dot}");
            }
        }
    }

    #[test]
    fn pls_exhausts_when_covariates_explain_response() {
        let cs = random_curves(20, 5, 11);
        let std = standardize(&cs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(20, 1, |_, _| rng.random_range(-1.0..1.0));
        // response is an exact affine function of x
        let y = DVector::from_fn(20, |i, _| 2.0 + 3.0 * x[(i, 0)]);
        match pls_extract(&std, Some(&x), &y, 2) {
            Err(ApqrError::BasisExhausted { extracted }) => assert_eq!(extracted, 0),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn pls_row_permutation_invariance() {
        let cs = random_curves(20, 6, 13);
        let std = standardize(&cs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let y = DVector::from_fn(20, |_, _| rng.random_range(-2.0..2.0));
        let a = pls_basis(&std, None, &y, 2).unwrap();
        let perm: Vec<usize> = (0..20).rev().collect();
        let std_perm = std.select_rows(&perm).unwrap();
        let y_perm = DVector::from_fn(20, |i, _| y[perm[i]]);
        let b = pls_basis(&std_perm, None, &y_perm, 2).unwrap();
        for (x, yv) in a.vectors().iter().zip(b.vectors().iter()) {
            assert_abs_diff_eq!(x, yv, epsilon = 1e-10);
        }
    }

    #[test]
    fn project_coordinate_and_unit_cases() {
        let cs = random_curves(5, 4, 15);
        // single standard-unit column picks out a curve column
        let mut e2 = DMatrix::zeros(4, 1);
        e2[(2, 0)] = 1.0;
        let basis = BasisMatrix::new(e2, BasisKind::Random, cs.grid().to_vec()).unwrap();
        let scores = project(&cs, &basis).unwrap();
        for i in 0..5 {
            assert_eq!(scores[(i, 0)], cs.curves()[(i, 2)]);
        }
        // a curve equal to a unit-norm basis column scores 1 on it
        let v = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5]);
        let basis2 = BasisMatrix::new(
            DMatrix::from_column_slice(4, 1, v.as_slice()),
            BasisKind::Random,
            cs.grid().to_vec(),
        )
        .unwrap();
        let one_curve = CurveSet::new(
            cs.grid().to_vec(),
            DMatrix::from_row_slice(1, 4, v.as_slice()),
        )
        .unwrap();
        let s = project(&one_curve, &basis2).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn project_grid_mismatch() {
        let cs = random_curves(5, 4, 16);
        let other = random_curves(5, 5, 17);
        let basis = fpc_basis(&standardize(&other).unwrap(), 2).unwrap();
        assert!(matches!(project(&cs, &basis), Err(ApqrError::Shape(_))));
    }

    #[test]
    fn canonicalize_sorts_and_preserves_column_sum() {
        let grid = vec![0.0, 0.5, 1.0];
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 3.0, 0.2, -0.4, 0.9, 0.7]);
        let basis = BasisMatrix::new(m, BasisKind::Random, grid).unwrap();
        let canon = basis.canonicalized();
        assert_eq!(canon.vectors()[(0, 0)], 3.0);
        assert_eq!(canon.vectors()[(0, 1)], 1.0);
        assert!(canon.is_canonical());
        // column sums agree bitwise thanks to canonical-order accumulation
        let s1 = basis.column_sum();
        let s2 = canon.column_sum();
        for (a, b) in s1.iter().zip(s2.iter()) {
            assert_eq!(a, b);
        }
        // idempotent
        let again = canon.canonicalized();
        for (a, b) in canon.vectors().iter().zip(again.vectors().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn canonical_column_sum_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let grid = uniform_grid(6);
        let m = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0f64..1.0));
        let mut permuted = DMatrix::zeros(6, 4);
        let perm = [2usize, 0, 3, 1];
        for (new_k, &old_k) in perm.iter().enumerate() {
            permuted.column_mut(new_k).copy_from(&m.column(old_k));
        }
        let a = BasisMatrix::new(m, BasisKind::Random, grid.clone()).unwrap();
        let b = BasisMatrix::new(permuted, BasisKind::Random, grid).unwrap();
        for (x, y) in a.column_sum().iter().zip(b.column_sum().iter()) {
            assert_eq!(x, y);
        }
    }
}
