//! Sufficient dimension reduction via discretization-expectation estimation.
//!
//! The response is discretized into the full family of indicators
//! `I(Y <= t)` over observed thresholds `t = y_1, ..., y_n`. Each indicator
//! contributes a rank-one sliced-inverse-regression target built from
//!
//! ```text
//!   mtilde(t) = (1/n) sum_j (z_j - zbar) I(y_j <= t)
//! ```
//!
//! on the standardized covariate scale, and the candidate matrix averages
//! those contributions over `t`. The eigenvectors of the candidate matrix
//! span the estimated central mean subspace; the ridged eigenvalue-ratio
//! criterion picks how many of them to keep.

use crate::error::{Error, Result};
use crate::kernels::bandwidth_rule;
use nalgebra::{DMatrix, DVector};

/// Column-orthonormal basis of an estimated central-mean subspace.
#[derive(Debug, Clone)]
pub struct Basis {
    matrix: DMatrix<f64>,
}

impl Basis {
    /// Wraps a matrix after verifying `B^T B = I` to within `1e-10`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let q = matrix.ncols();
        if q == 0 || q > matrix.nrows() {
            return Err(Error::invalid("basis must have 1 <= q <= d columns"));
        }
        let gram = matrix.transpose() * &matrix;
        let eye = DMatrix::<f64>::identity(q, q);
        let dev = (&gram - &eye).abs().max();
        if dev > 1e-10 {
            return Err(Error::invalid(format!(
                "basis columns not orthonormal (max deviation {dev:.3e})"
            )));
        }
        Ok(Basis { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Projects sample rows: returns `Z * B`, an `n x q` matrix.
    pub fn project(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z * &self.matrix
    }
}

/// Result of standardizing a sample matrix to mean zero, identity covariance.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: DMatrix<f64>,
    /// Symmetric inverse square root of the sample covariance.
    pub root_inverse: DMatrix<f64>,
    pub mean: DVector<f64>,
}

/// Centers `Z` and whitens it with the symmetric inverse square root of the
/// sample covariance (denominator `n - 1`).
pub fn standardize(z: &DMatrix<f64>) -> Result<Standardized> {
    let (n, d) = z.shape();
    if n <= d {
        return Err(Error::invalid(format!(
            "standardize needs n > d, got n = {n}, d = {d}"
        )));
    }
    let mean = z.row_mean().transpose();
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if !(min_ev > 0.0) || max_ev / min_ev > 1e12 {
        let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };
        return Err(Error::SingularCovariance { condition });
    }
    let mut inv_sqrt = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let v = eig.eigenvectors.column(k);
        let w = 1.0 / eig.eigenvalues[k].sqrt();
        inv_sqrt += w * &v * v.transpose();
    }
    let data = &centered * &inv_sqrt;
    Ok(Standardized { data, root_inverse: inv_sqrt, mean })
}

/// All rows `mtilde(y_i)` at once via one sort plus prefix sums,
/// `O(n log n + n d)` instead of the naive `O(n^2 d)` double loop.
///
/// Row `i` equals `(1/n) sum_j (z_j - zbar) I(y_j <= y_i)`, ties included.
pub fn fast_mtilde_all(z: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
    Ok(mtilde_with_ranks(z, y)?.0)
}

/// As `fast_mtilde_all`, also returning the empirical CDF value
/// `p_i = (1/n) #\{j : y_j <= y_i\}` of each threshold.
pub(crate) fn mtilde_with_ranks(z: &DMatrix<f64>, y: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, d) = z.shape();
    if y.len() != n {
        return Err(Error::invalid("response length must match row count"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two observations"));
    }
    let mean = z.row_mean();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    let mut out = DMatrix::<f64>::zeros(n, d);
    let mut ranks = vec![0.0; n];
    let mut prefix = vec![0.0; d];
    let inv_n = 1.0 / n as f64;

    let mut start = 0;
    while start < n {
        // group ties so that I(y_j <= y_i) includes every equal value
        let mut end = start;
        while end + 1 < n && y[order[end + 1]] == y[order[start]] {
            end += 1;
        }
        for &idx in &order[start..=end] {
            for k in 0..d {
                prefix[k] += z[(idx, k)] - mean[k];
            }
        }
        let p = (end + 1) as f64 * inv_n;
        for &idx in &order[start..=end] {
            for k in 0..d {
                out[(idx, k)] = prefix[k] * inv_n;
            }
            ranks[idx] = p;
        }
        start = end + 1;
    }
    Ok((out, ranks))
}

/// How the per-threshold rank-one targets are weighted when averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceWeighting {
    /// Plain average of `mtilde(t) mtilde(t)^T` (cumulative-slicing form).
    #[default]
    Cume,
    /// Divide each contribution by `p_t (1 - p_t)`, recovering the
    /// between-slice covariance of classical binary-response SIR.
    InverseVariance,
}

/// Candidate matrix `M_n = (1/n) sum_t mtilde(t) mtilde(t)^T` over observed
/// thresholds, computed on the standardized scale.
pub fn dee_sir_candidate(zs: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
    dee_sir_candidate_weighted(zs, y, SliceWeighting::Cume)
}

/// Candidate matrix with a configurable slice weighting.
pub fn dee_sir_candidate_weighted(
    zs: &DMatrix<f64>,
    y: &[f64],
    weighting: SliceWeighting,
) -> Result<DMatrix<f64>> {
    let (mt, ranks) = mtilde_with_ranks(zs, y)?;
    let (n, d) = mt.shape();
    let mut m = DMatrix::<f64>::zeros(d, d);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let w = match weighting {
            SliceWeighting::Cume => 1.0,
            SliceWeighting::InverseVariance => {
                let v = ranks[i] * (1.0 - ranks[i]);
                if v > 1e-12 {
                    1.0 / v
                } else {
                    0.0
                }
            }
        };
        if w == 0.0 {
            continue;
        }
        let row = mt.row(i);
        // accumulate w * mtilde mtilde^T
        for a in 0..d {
            let ra = row[a] * w * inv_n;
            for b in 0..d {
                m[(a, b)] += ra * row[b];
            }
        }
    }
    Ok(m)
}

/// Which ratio the eigenvalue criterion minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeRatioForm {
    /// `(lambda*_{j+1}^2 + c_n) / (lambda*_j^2 + c_n)`.
    #[default]
    Ridged,
    /// Ridge in the numerator only: `(lambda*_{j+1}^2 + c_n) / lambda*_j^2`.
    NumeratorOnly,
}

/// Ridge constant for the eigenvalue-ratio criterion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum RidgeConfig {
    /// A fixed positive ridge.
    Fixed { c_n: f64 },
    /// `c_n = 0.1 log(n) / (n h^{q1/2})` with `h = c * n^{-1/(4+q1)}`.
    PaperRule { q1: usize, c: f64 },
}

impl RidgeConfig {
    pub fn paper_rule(q1: usize) -> Self {
        RidgeConfig::PaperRule { q1, c: 1.75 }
    }

    pub fn c_n(&self, n: usize) -> Result<f64> {
        match *self {
            RidgeConfig::Fixed { c_n } => {
                if c_n > 0.0 {
                    Ok(c_n)
                } else {
                    Err(Error::invalid("ridge constant must be positive"))
                }
            }
            RidgeConfig::PaperRule { q1, c } => {
                let h = bandwidth_rule(n, q1, c)?;
                Ok(0.1 * (n as f64).ln() / (n as f64 * h.powf(q1 as f64 / 2.0)))
            }
        }
    }
}

/// Ridged eigenvalue-ratio estimate of the structural dimension.
///
/// Eigenvalues are clipped at zero, shifted by `n^{-1/2}` and mapped through
/// `x / (x + 1)`; the criterion returns the index minimizing the ratio of
/// consecutive squared transforms, ties broken toward the smallest index.
pub fn rere_dimension(eigenvalues: &[f64], n: usize, c_n: f64) -> Result<usize> {
    rere_dimension_with_form(eigenvalues, n, c_n, RidgeRatioForm::Ridged)
}

pub fn rere_dimension_with_form(
    eigenvalues: &[f64],
    n: usize,
    c_n: f64,
    form: RidgeRatioForm,
) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return Err(Error::invalid("ratio criterion needs at least two eigenvalues"));
    }
    if !(c_n > 0.0) {
        return Err(Error::invalid("ridge constant must be positive"));
    }
    let shift = 1.0 / (n as f64).sqrt();
    let sq: Vec<f64> = eigenvalues
        .iter()
        .map(|&ev| {
            let l = ev.max(0.0) - shift;
            let star = l / (l + 1.0);
            star * star
        })
        .collect();
    let mut best = 0usize;
    let mut best_ratio = f64::INFINITY;
    for j in 0..sq.len() - 1 {
        let ratio = match form {
            RidgeRatioForm::Ridged => (sq[j + 1] + c_n) / (sq[j] + c_n),
            RidgeRatioForm::NumeratorOnly => {
                if sq[j] > 0.0 {
                    (sq[j + 1] + c_n) / sq[j]
                } else {
                    f64::INFINITY
                }
            }
        };
        if ratio < best_ratio {
            best_ratio = ratio;
            best = j;
        }
    }
    Ok(best + 1)
}

/// Either a caller-supplied dimension or automatic ratio-based selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionSpec {
    Given(usize),
    Auto(RidgeConfig),
}

/// Configuration for `estimate_basis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdrConfig {
    pub dimension: DimensionSpec,
    pub weighting: SliceWeighting,
    pub ratio_form: RidgeRatioForm,
}

impl SdrConfig {
    pub fn given(q: usize) -> Self {
        SdrConfig {
            dimension: DimensionSpec::Given(q),
            weighting: SliceWeighting::default(),
            ratio_form: RidgeRatioForm::default(),
        }
    }

    pub fn auto(ridge: RidgeConfig) -> Self {
        SdrConfig {
            dimension: DimensionSpec::Auto(ridge),
            weighting: SliceWeighting::default(),
            ratio_form: RidgeRatioForm::default(),
        }
    }

    pub fn with_weighting(mut self, weighting: SliceWeighting) -> Self {
        self.weighting = weighting;
        self
    }
}

/// Full output of the subspace estimation.
#[derive(Debug, Clone)]
pub struct SdrFit {
    /// Candidate matrix on the standardized scale.
    pub candidate_matrix: DMatrix<f64>,
    /// Eigenvalues sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors (columns, standardized scale).
    pub eigenvectors: DMatrix<f64>,
    pub selected_dimension: usize,
    /// Back-transformed, re-orthonormalized basis on the original scale.
    pub basis: Basis,
}

/// Estimates a central-mean-subspace basis from `(Z, Y)`.
///
/// The eigenproblem is solved on the standardized scale (so the inverse
/// covariance prefactor is absorbed symmetrically), then the leading
/// eigenvectors are mapped back through the inverse square root and
/// re-orthonormalized by QR.
pub fn estimate_basis(z: &DMatrix<f64>, y: &[f64], config: &SdrConfig) -> Result<SdrFit> {
    let (n, d) = z.shape();
    if y.len() != n {
        return Err(Error::invalid("response length must match row count"));
    }
    let std = standardize(z)?;
    let candidate = dee_sir_candidate_weighted(&std.data, y, config.weighting)?;

    let eig = candidate.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = DMatrix::<f64>::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    let q = match config.dimension {
        DimensionSpec::Given(q) => {
            if q == 0 || q > d {
                return Err(Error::invalid(format!("dimension {q} out of range 1..={d}")));
            }
            q
        }
        DimensionSpec::Auto(ridge) => {
            let c_n = ridge.c_n(n)?;
            rere_dimension_with_form(&eigenvalues, n, c_n, config.ratio_form)?
        }
    };

    let raw = &std.root_inverse * eigenvectors.columns(0, q);
    let qr = raw.qr();
    let mut ortho = qr.q();
    // fix column signs deterministically: largest-magnitude entry positive
    for mut col in ortho.column_iter_mut() {
        let mut pivot = 0usize;
        let mut best = 0.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let basis = Basis::new(ortho)?;

    Ok(SdrFit {
        candidate_matrix: candidate,
        eigenvalues,
        eigenvectors,
        selected_dimension: q,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn standardize_recovers_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_matrix(&mut rng, 50, 3);
        let s = standardize(&z).unwrap();
        let n = 50.0;
        let cov = s.data.transpose() * &s.data / (n - 1.0);
        let dev = (&cov - DMatrix::<f64>::identity(3, 3)).abs().max();
        assert!(dev < 1e-8, "covariance deviation {dev}");
        let mean = s.data.row_mean();
        assert!(mean.amax() < 1e-10);
    }

    #[test]
    fn standardize_identity_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_matrix(&mut rng, 400, 2);
        let s1 = standardize(&z).unwrap();
        let s2 = standardize(&s1.data).unwrap();
        assert!((&s2.data - &s1.data).abs().max() < 1e-8);
        assert!((&s2.root_inverse - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-8);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let mut z = DMatrix::<f64>::zeros(10, 2);
        for i in 0..10 {
            z[(i, 0)] = i as f64;
            z[(i, 1)] = 3.0;
        }
        assert!(matches!(standardize(&z), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn mtilde_handles_ties_inclusively() {
        // y = [1, 1, 2]: thresholds at the tied value include both
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 6.0]);
        let y = [1.0, 1.0, 2.0];
        let m = fast_mtilde_all(&z, &y).unwrap();
        // mean = 3; contributions: rows 0,1 tied at y=1
        let expect01 = ((1.0 - 3.0) + (2.0 - 3.0)) / 3.0;
        let expect2 = 0.0; // all three indicators on, centered sum is zero
        assert_abs_diff_eq!(m[(0, 0)], expect01, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 0)], expect01, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(2, 0)], expect2, epsilon = 1e-14);
    }

    #[test]
    fn constant_response_gives_zero_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(&mut rng, 30, 2);
        let zs = standardize(&z).unwrap().data;
        let y = vec![5.0; 30];
        let m = dee_sir_candidate(&zs, &y).unwrap();
        assert!(m.abs().max() < 1e-20);
    }

    #[test]
    fn candidate_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(&mut rng, 80, 4);
        let zs = standardize(&z).unwrap().data;
        let y: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for w in [SliceWeighting::Cume, SliceWeighting::InverseVariance] {
            let m = dee_sir_candidate_weighted(&zs, &y, w).unwrap();
            assert!((&m - m.transpose()).abs().max() < 1e-14);
            let eig = m.symmetric_eigen();
            assert!(eig.eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn rere_worked_examples() {
        // gap after the second eigenvalue
        let c_n = 0.1 * 400f64.ln() / 400.0;
        let q = rere_dimension(&[0.8, 0.6, 1e-4, 1e-5], 400, c_n).unwrap();
        assert_eq!(q, 2);

        let q = rere_dimension(&[0.9, 1e-6, 1e-7], 1_000_000, 1e-5).unwrap();
        assert_eq!(q, 1);

        // all equal: every ratio ties at 1, smallest index wins
        let q = rere_dimension(&[5.0, 5.0, 5.0, 5.0], 100, 0.01).unwrap();
        assert_eq!(q, 1);

        assert!(rere_dimension(&[1.0], 100, 0.01).is_err());
        assert!(rere_dimension(&[1.0, 0.5], 100, 0.0).is_err());
    }

    #[test]
    fn single_index_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let z = random_matrix(&mut rng, n, 3);
        let beta = DVector::from_column_slice(&[2.0, -1.0, 0.5]).normalize();
        let y: Vec<f64> = (0..n).map(|i| (z.row(i) * &beta)[0]).collect();
        let fit = estimate_basis(&z, &y, &SdrConfig::given(1)).unwrap();
        let b = fit.basis.matrix().column(0).clone_owned();
        let cosine = b.dot(&beta).abs();
        // within 5 degrees of the true direction
        assert!(cosine > (5f64.to_radians()).cos(), "cosine {cosine}");
        // remaining eigenvalues near zero relative to the top one
        assert!(fit.eigenvalues[1] < 0.05 * fit.eigenvalues[0]);
    }

    #[test]
    fn independent_response_has_small_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 2000;
        let z = random_matrix(&mut rng, n, 3);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let zs = standardize(&z).unwrap().data;
        let m = dee_sir_candidate(&zs, &y).unwrap();
        let top = m.symmetric_eigen().eigenvalues.max();
        assert!(top < 0.05, "top eigenvalue {top}");
    }

    #[test]
    fn basis_rejects_non_orthonormal() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(Basis::new(m).is_err());
    }

    #[test]
    fn estimate_basis_rejects_bad_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = random_matrix(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(estimate_basis(&z, &y, &SdrConfig::given(0)).is_err());
        assert!(estimate_basis(&z, &y, &SdrConfig::given(4)).is_err());
    }
}
