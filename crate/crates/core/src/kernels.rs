//! Univariate kernels, product kernels and bandwidth rules.
//!
//! Two families are used throughout: the quartic (biweight) kernel for the
//! test statistics and a fourth-order Gaussian-based kernel for regression
//! and density smoothing. Fourth-order kernels trade nonnegativity for bias
//! reduction; `gauss4` integrates to one but takes negative values.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Kernel families supported by the smoothers and test statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Quartic (biweight) kernel `(15/16)(1-u^2)^2` on `[-1, 1]`.
    Quartic,
    /// Fourth-order Gaussian-based kernel `(u^4 - 7u^2 + 6) phi(u) / 2`.
    Gauss4,
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelFamily::Quartic => quartic(u),
            KernelFamily::Gauss4 => gauss4(u),
        }
    }

    /// `int k^2(u) du` for one univariate factor.
    pub fn square_integral(self) -> f64 {
        kernel_square_integral(self)
    }
}

#[inline]
fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Quartic kernel: `(15/16)(1-u^2)^2` for `|u| <= 1`, zero outside.
#[inline]
pub fn quartic(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        let t = 1.0 - u * u;
        15.0 / 16.0 * t * t
    } else {
        0.0
    }
}

/// Fourth-order Gaussian-based kernel `(u^4 - 7u^2 + 6) phi(u) / 2`.
///
/// Integrates to one with vanishing first through third moments, which is
/// what pushes the smoothing bias from `h^2` to `h^4`.
#[inline]
pub fn gauss4(u: f64) -> f64 {
    let u2 = u * u;
    (u2 * u2 - 7.0 * u2 + 6.0) * std_normal_pdf(u) / 2.0
}

/// A product kernel: `dimension` univariate factors sharing one bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dimension: usize,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dimension: usize, bandwidth: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("kernel dimension must be at least 1"));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::invalid(format!(
                "bandwidth must be a positive real, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { family, dimension, bandwidth })
    }

    /// Evaluates the scaled product kernel `prod_k k(v_k / h) / h^dim`.
    pub fn product(&self, v: &[f64]) -> Result<f64> {
        product_kernel(self, v)
    }

    /// Unscaled product `prod_k k(v_k / h)` (no `h^-dim` factor), used where
    /// the normalization is applied once outside the pair loop.
    #[inline]
    pub(crate) fn product_unscaled(&self, v: &[f64]) -> f64 {
        let h = self.bandwidth;
        let mut acc = 1.0;
        for &x in v {
            acc *= self.family.eval(x / h);
            if acc == 0.0 {
                return 0.0;
            }
        }
        acc
    }
}

/// Scaled product kernel `prod_k k(v_k / h) / h^q` with `q = spec.dimension`.
pub fn product_kernel(spec: &KernelSpec, v: &[f64]) -> Result<f64> {
    if v.len() != spec.dimension {
        return Err(Error::invalid(format!(
            "product kernel expects {} coordinates, got {}",
            spec.dimension,
            v.len()
        )));
    }
    Ok(spec.product_unscaled(v) / spec.bandwidth.powi(spec.dimension as i32))
}

/// Bandwidth rule `c * n^(-1/(4+q))`.
pub fn bandwidth_rule(n: usize, q: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("bandwidth rule needs n >= 2, got {n}")));
    }
    if q == 0 {
        return Err(Error::invalid("bandwidth rule needs q >= 1"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("bandwidth constant must be positive, got {c}")));
    }
    Ok(c * (n as f64).powf(-1.0 / (4.0 + q as f64)))
}

/// `int k^2(u) du` for a single univariate factor.
///
/// Quartic: `(15/16)^2 int (1-u^2)^4 = 5/7`. Gauss4: expanding the square
/// against the N(0, 1/2) density gives `321 / (128 sqrt(pi))`.
pub fn kernel_square_integral(family: KernelFamily) -> f64 {
    match family {
        KernelFamily::Quartic => 5.0 / 7.0,
        KernelFamily::Gauss4 => 321.0 / (128.0 * PI.sqrt()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        // n even panels
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += f(x) * if i % 2 == 0 { 2.0 } else { 4.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn quartic_values() {
        assert_abs_diff_eq!(quartic(0.0), 0.9375, epsilon = 1e-15);
        assert_eq!(quartic(1.0), 0.0);
        assert_eq!(quartic(-1.0), 0.0);
        assert_eq!(quartic(1.0001), 0.0);
        assert_abs_diff_eq!(quartic(0.5), 135.0 / 256.0, epsilon = 1e-15);
        assert_abs_diff_eq!(quartic(0.5), 0.52734375, epsilon = 1e-15);
    }

    #[test]
    fn gauss4_values() {
        // 6 phi(0) / 2 = 3 / sqrt(2 pi)
        assert_abs_diff_eq!(gauss4(0.0), 3.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(gauss4(0.0), 1.1968268412042982, epsilon = 1e-12);
        // roots of u^4 - 7u^2 + 6 at u = +-1, +-sqrt(6)
        assert_abs_diff_eq!(gauss4(6f64.sqrt()), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gauss4(-(6f64.sqrt())), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gauss4(1.0), 0.0, epsilon = 1e-15);
        // negative somewhere strictly inside (1, sqrt(6))
        assert!(gauss4(1.8) < 0.0);
    }

    #[test]
    fn kernels_integrate_to_one() {
        let iq = simpson(quartic, -1.0, 1.0, 20_000);
        assert_abs_diff_eq!(iq, 1.0, epsilon = 1e-6);
        let ig = simpson(gauss4, -10.0, 10.0, 200_000);
        assert_abs_diff_eq!(ig, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn gauss4_moments_vanish_through_order_three() {
        for i in 1..=3usize {
            let m = simpson(|u| u.powi(i as i32) * gauss4(u), -10.0, 10.0, 200_000);
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-6);
        }
        // second moment explicitly, per the fourth-order property
        let m2 = simpson(|u| u * u * gauss4(u), -10.0, 10.0, 200_000);
        assert_abs_diff_eq!(m2, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn square_integrals() {
        assert_abs_diff_eq!(kernel_square_integral(KernelFamily::Quartic), 5.0 / 7.0, epsilon = 1e-15);
        let num = simpson(|u| quartic(u) * quartic(u), -1.0, 1.0, 20_000);
        assert_abs_diff_eq!(num, 5.0 / 7.0, epsilon = 1e-9);
        let g = simpson(|u| gauss4(u) * gauss4(u), -10.0, 10.0, 200_000);
        assert_abs_diff_eq!(kernel_square_integral(KernelFamily::Gauss4), g, epsilon = 1e-8);
        assert!(kernel_square_integral(KernelFamily::Gauss4) > 0.0);
    }

    #[test]
    fn product_kernel_values() {
        let spec = KernelSpec::new(KernelFamily::Quartic, 2, 1.0).unwrap();
        assert_abs_diff_eq!(
            product_kernel(&spec, &[0.0, 0.0]).unwrap(),
            0.9375 * 0.9375,
            epsilon = 1e-15
        );

        let spec = KernelSpec::new(KernelFamily::Quartic, 1, 2.0).unwrap();
        assert_eq!(product_kernel(&spec, &[2.0]).unwrap(), 0.0);

        let spec = KernelSpec::new(KernelFamily::Gauss4, 2, 0.5).unwrap();
        let expect = gauss4(0.2) * gauss4(-0.4) / 0.25;
        assert_abs_diff_eq!(product_kernel(&spec, &[0.1, -0.2]).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn product_kernel_dimension_mismatch() {
        let spec = KernelSpec::new(KernelFamily::Quartic, 2, 1.0).unwrap();
        assert!(product_kernel(&spec, &[0.0]).is_err());
    }

    #[test]
    fn bandwidth_rule_values() {
        let h = bandwidth_rule(200, 2, 1.75).unwrap();
        assert_abs_diff_eq!(h, 1.75 * (200f64).powf(-1.0 / 6.0), epsilon = 1e-12);
        let h = bandwidth_rule(100, 1, 1.0).unwrap();
        assert_abs_diff_eq!(h, 0.3981071705534972, epsilon = 1e-12);
        assert!(bandwidth_rule(1, 1, 1.75).is_err());
        assert!(bandwidth_rule(100, 1, 0.0).is_err());
        assert!(bandwidth_rule(100, 0, 1.0).is_err());
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::new(KernelFamily::Quartic, 0, 1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Quartic, 1, 0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Quartic, 1, f64::NAN).is_err());
    }
}
