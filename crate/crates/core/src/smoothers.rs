//! Leave-one-out Nadaraya-Watson regression and density estimation on
//! projected covariates.
//!
//! With a fourth-order kernel the leave-one-out denominator can collapse to
//! zero (or below) at thinly populated points. `FallbackPolicy` decides what
//! the fit does there; see `DEFAULT_DENSITY_FLOOR` for the trigger.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use nalgebra::DMatrix;

/// Density level below which the ratio estimate is abandoned at a point.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-10;

/// What to return at points whose leave-one-out denominator is below floor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Leave-one-out sample mean of the response.
    LooMean,
    /// Leave-one-out Nadaraya-Watson fit with a positive Gaussian product
    /// kernel at pilot bandwidth `c * n^{-1/(4+q)}`; its denominator cannot
    /// oscillate, so the rescue fit is defined wherever any neighbor exists.
    PilotGaussian { c: f64 },
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        FallbackPolicy::LooMean
    }
}

/// Leave-one-out kernel regression output.
#[derive(Debug, Clone)]
pub struct LooFit {
    /// Fitted regression values at each sample point.
    pub fitted: Vec<f64>,
    /// Leave-one-out density estimates, clamped at zero.
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// The projected covariates the fit was computed on.
    pub projected: DMatrix<f64>,
}

fn pair_sums(t: &DMatrix<f64>, y: &[f64], spec: &KernelSpec) -> (Vec<f64>, Vec<f64>) {
    let (n, q) = t.shape();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut diff = vec![0.0; q];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..q {
                diff[k] = t[(j, k)] - t[(i, k)];
            }
            let w = spec.product_unscaled(&diff);
            if w != 0.0 {
                num[i] += w * y[j];
                den[i] += w;
                num[j] += w * y[i];
                den[j] += w;
            }
        }
    }
    (num, den)
}

/// Leave-one-out Nadaraya-Watson fit with the default density floor and
/// leave-one-out-mean fallback.
pub fn nw_loo(t: &DMatrix<f64>, y: &[f64], spec: &KernelSpec) -> Result<LooFit> {
    nw_loo_with(t, y, spec, DEFAULT_DENSITY_FLOOR, FallbackPolicy::default())
}

/// Leave-one-out Nadaraya-Watson fit with explicit floor and fallback.
pub fn nw_loo_with(
    t: &DMatrix<f64>,
    y: &[f64],
    spec: &KernelSpec,
    density_floor: f64,
    fallback: FallbackPolicy,
) -> Result<LooFit> {
    let (n, q) = t.shape();
    if y.len() != n {
        return Err(Error::invalid("response length must match row count"));
    }
    if n < 2 {
        return Err(Error::invalid("leave-one-out fit needs at least two points"));
    }
    if spec.dimension != q {
        return Err(Error::invalid(format!(
            "kernel dimension {} does not match projected dimension {q}",
            spec.dimension
        )));
    }

    let (num, den) = pair_sums(t, y, spec);
    let norm = ((n - 1) as f64) * spec.bandwidth.powi(q as i32);
    let total: f64 = y.iter().sum();

    let mut fallback_fit: Option<Vec<f64>> = None;
    let mut fitted = vec![0.0; n];
    let mut density = vec![0.0; n];
    for i in 0..n {
        let dens = den[i] / norm;
        density[i] = dens.max(0.0);
        if dens > density_floor {
            fitted[i] = num[i] / den[i];
        } else {
            fitted[i] = match fallback {
                FallbackPolicy::LooMean => (total - y[i]) / (n - 1) as f64,
                FallbackPolicy::PilotGaussian { c } => {
                    let fb = fallback_fit.get_or_insert_with(|| pilot_gaussian_fit(t, y, c));
                    fb[i]
                }
            };
        }
    }

    Ok(LooFit {
        fitted,
        density,
        bandwidth: spec.bandwidth,
        projected: t.clone(),
    })
}

fn pilot_gaussian_fit(t: &DMatrix<f64>, y: &[f64], c: f64) -> Vec<f64> {
    let (n, q) = t.shape();
    let h = c * (n as f64).powf(-1.0 / (4.0 + q as f64));
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for k in 0..q {
                let z = (t[(j, k)] - t[(i, k)]) / h;
                d2 += z * z;
            }
            let w = (-0.5 * d2).exp();
            num[i] += w * y[j];
            den[i] += w;
            num[j] += w * y[i];
            den[j] += w;
        }
    }
    let total: f64 = y.iter().sum();
    (0..n)
        .map(|i| {
            if den[i] > 0.0 {
                num[i] / den[i]
            } else {
                (total - y[i]) / (n - 1) as f64
            }
        })
        .collect()
}

/// Residuals `y_i - fitted_i`.
pub fn residuals(y: &[f64], fit: &LooFit) -> Result<Vec<f64>> {
    if y.len() != fit.fitted.len() {
        return Err(Error::invalid("length mismatch between response and fit"));
    }
    Ok(y.iter().zip(&fit.fitted).map(|(yi, fi)| yi - fi).collect())
}

/// Leave-one-out density estimates `(n-1)^{-1} sum_{j != i} K_h(t_j - t_i)`.
///
/// No clamping: with a fourth-order kernel the estimate may be negative, and
/// the test statistics use it as a signed weight.
pub fn density_loo(t: &DMatrix<f64>, spec: &KernelSpec) -> Result<Vec<f64>> {
    let (n, q) = t.shape();
    if n < 2 {
        return Err(Error::invalid("leave-one-out density needs at least two points"));
    }
    if spec.dimension != q {
        return Err(Error::invalid(format!(
            "kernel dimension {} does not match projected dimension {q}",
            spec.dimension
        )));
    }
    let zeros = vec![0.0; n];
    let (_, den) = pair_sums(t, &zeros, spec);
    let norm = ((n - 1) as f64) * spec.bandwidth.powi(q as i32);
    Ok(den.iter().map(|&d| d / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{quartic, KernelFamily};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn constant_response_is_reproduced() {
        let t = col(&[0.0, 0.1, 0.2, 0.35, 0.5]);
        let y = vec![3.5; 5];
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 1.0).unwrap();
        let fit = nw_loo(&t, &y, &spec).unwrap();
        for (f, d) in fit.fitted.iter().zip(&fit.density) {
            if *d > DEFAULT_DENSITY_FLOOR {
                assert_abs_diff_eq!(*f, 3.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_three_point_fit() {
        let t = col(&[0.0, 0.5, 1.0]);
        let y = vec![1.0, 2.0, 4.0];
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 2.0).unwrap();
        let fit = nw_loo(&t, &y, &spec).unwrap();
        // point 0: neighbors at distances .5, 1 with weights K(.25), K(.5)
        let w1 = quartic(0.25);
        let w2 = quartic(0.5);
        assert_abs_diff_eq!(fit.fitted[0], (w1 * 2.0 + w2 * 4.0) / (w1 + w2), epsilon = 1e-12);
        // point 1 symmetric neighbors at .25 each
        assert_abs_diff_eq!(fit.fitted[1], (1.0 + 4.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.density[1], 2.0 * quartic(0.25) / (2.0 * 2.0), epsilon = 1e-12);
    }

    #[test]
    fn vanishing_bandwidth_falls_back_to_loo_mean() {
        let t = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 1e-6).unwrap();
        let fit = nw_loo(&t, &y, &spec).unwrap();
        assert_abs_diff_eq!(fit.fitted[0], (2.0 + 3.0 + 4.0) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.fitted[3], (1.0 + 2.0 + 3.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pilot_gaussian_fallback_uses_neighbors() {
        let t = col(&[0.0, 1.0, 2.0, 30.0]);
        let y = vec![1.0, 2.0, 3.0, 100.0];
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 0.5).unwrap();
        let fit =
            nw_loo_with(&t, &y, &spec, 1e-10, FallbackPolicy::PilotGaussian { c: 1.06 }).unwrap();
        // the isolated point takes the rescue fit; nearest mass sits at t=2
        assert!(fit.fitted[3] < 50.0);
        assert!(fit.density[3] >= 0.0);
    }

    #[test]
    fn leave_one_out_excludes_own_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let t = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let spec = KernelSpec::new(KernelFamily::Gauss4, 1, 0.5).unwrap();
        let f1 = nw_loo(&t, &y, &spec).unwrap();
        y[7] += 100.0;
        let f2 = nw_loo(&t, &y, &spec).unwrap();
        // fitted[7] must not move (only other points' fits may)
        assert_abs_diff_eq!(f1.fitted[7], f2.fitted[7], epsilon = 1e-9);
    }

    #[test]
    fn density_loo_matches_definition_on_coincident_points() {
        let t = col(&[1.0, 1.0, 1.0]);
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 1.0).unwrap();
        let d = density_loo(&t, &spec).unwrap();
        for di in d {
            assert_abs_diff_eq!(di, 0.9375, epsilon = 1e-12);
        }
    }

    #[test]
    fn isolated_point_has_zero_density() {
        let t = col(&[0.0, 0.1, 0.2, 50.0]);
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 1.0).unwrap();
        let d = density_loo(&t, &spec).unwrap();
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30;
        let t = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let spec = KernelSpec::new(KernelFamily::Gauss4, 2, 0.8).unwrap();
        let fit = nw_loo(&t, &y, &spec).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let tp = DMatrix::from_fn(n, 2, |i, k| t[(perm[i], k)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let fitp = nw_loo(&tp, &yp, &spec).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_abs_diff_eq!(fitp.fitted[i], fit.fitted[src], epsilon = 1e-10);
            assert_abs_diff_eq!(fitp.density[i], fit.density[src], epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_contract() {
        let t = col(&[0.0, 0.3, 0.6, 0.9]);
        let y = vec![1.0, 1.5, 0.5, 2.0];
        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 2.0).unwrap();
        let fit = nw_loo(&t, &y, &spec).unwrap();
        let u = residuals(&y, &fit).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(u[i], y[i] - fit.fitted[i], epsilon = 1e-15);
        }
        let u0 = residuals(&fit.fitted.clone(), &fit).unwrap();
        assert!(u0.iter().all(|v| v.abs() < 1e-15));
    }
}
