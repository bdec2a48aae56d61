//! The significance tests: the dimension-reduction adaptive statistic and
//! the two baselines it is compared against.
//!
//! All three tests share the same null-model residuals: `Y` is regressed on
//! the reduced covariates `B1^T X` by leave-one-out kernel smoothing, and the
//! statistics then probe the residuals for structure involving `W`. The
//! adaptive test projects the full covariates onto an estimated basis whose
//! dimension is selected from the data, the Fan-Li form kernels over all
//! `p1 + p2` covariates, and the Delgado-Gonzalez Manteiga form cumulates
//! density-weighted residuals over indicator half-spaces with a wild
//! bootstrap for its critical values.

use crate::error::{Error, Result};
use crate::kernels::{bandwidth_rule, KernelFamily, KernelSpec};
use crate::sdr::{
    estimate_basis, Basis, DimensionSpec, RidgeConfig, RidgeRatioForm, SdrConfig, SliceWeighting,
};
use crate::smoothers::{density_loo, nw_loo_with, residuals, FallbackPolicy, LooFit};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Upper-tail probability `1 - Phi(x)`, computed as `Phi(-x)`.
pub fn standard_normal_sf(x: f64) -> f64 {
    Normal::standard().cdf(-x)
}

/// Which test produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dream,
    FanLi,
    Dm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dream => "dream",
            Method::FanLi => "fan_li",
            Method::Dm => "dm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dream" => Ok(Method::Dream),
            "fan_li" | "fanli" | "fan-li" => Ok(Method::FanLi),
            "dm" => Ok(Method::Dm),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Bandwidths used by a test run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bandwidths {
    /// Test-statistic kernel bandwidth.
    pub h: f64,
    /// Null-model smoothing bandwidth.
    pub h1: f64,
}

/// Outcome of a single significance test.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TestReport {
    pub method: Method,
    pub raw_statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardized: Option<f64>,
    pub p_value: f64,
    pub q1: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_hat: Option<usize>,
    pub bandwidths: Bandwidths,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,
    pub seed: u64,
}

/// Smoothing-stage settings for the shared null-model fit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmootherSettings {
    pub family: KernelFamily,
    /// Bandwidth constant for the smoother.
    pub c_h1: f64,
    /// When set, `h1 = c_h1 * n^(-1/denom)`; when `None`, the test-kernel
    /// rule `c_h1 * n^{-1/(4+q1)}` is reused for the smoother.
    pub exponent_denominator: Option<f64>,
    pub density_floor: f64,
    pub fallback: FallbackPolicy,
}

impl Default for SmootherSettings {
    fn default() -> Self {
        SmootherSettings {
            family: KernelFamily::Gauss4,
            // critically undersmoothed fourth-order rate; the bias condition
            // n h1^8 h^{q1/2} -> 0 holds with room at every q1 in use
            c_h1: 0.70,
            exponent_denominator: Some(8.0),
            density_floor: crate::smoothers::DEFAULT_DENSITY_FLOOR,
            fallback: FallbackPolicy::LooMean,
        }
    }
}

impl SmootherSettings {
    pub fn bandwidth(&self, n: usize, q1: usize) -> Result<f64> {
        match self.exponent_denominator {
            Some(denom) => {
                if !(denom > 0.0) {
                    return Err(Error::invalid("bandwidth exponent must be positive"));
                }
                if !(self.c_h1 > 0.0) {
                    return Err(Error::invalid("bandwidth constant must be positive"));
                }
                Ok(self.c_h1 * (n as f64).powf(-1.0 / denom))
            }
            None => bandwidth_rule(n, q1, self.c_h1),
        }
    }
}

/// Settings for the wild-bootstrap baseline.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DmSettings {
    pub bootstrap_reps: usize,
    /// Generate bootstrap responses from a full-dimensional smoother on `X`
    /// instead of the projected null fit.
    pub full_dimensional_smoothing: bool,
}

impl Default for DmSettings {
    fn default() -> Self {
        DmSettings { bootstrap_reps: 1000, full_dimensional_smoothing: false }
    }
}

/// Configuration shared by the test pipelines.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DreamConfig {
    /// Test-statistic bandwidth constant: `h = c_h * n^{-1/(4+q_hat)}`.
    pub c_h: f64,
    /// Bandwidth constant inside the ridge rule for dimension selection.
    pub ridge_c: f64,
    pub smoother: SmootherSettings,
    pub weighting: SliceWeighting,
    pub ratio_form: RidgeRatioForm,
    /// Rescale each projected coordinate by its sample standard deviation
    /// before kernel evaluation, so bandwidth rules see unit-scale data.
    pub scale_adaptive: bool,
    /// Bandwidth constant for the full-dimensional Fan-Li statistic kernel.
    pub fan_li_c: f64,
    /// Bandwidth constant for the covariate density estimate `f1`.
    pub density_c: f64,
    pub dm: DmSettings,
    pub seed: u64,
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            c_h: 1.75,
            ridge_c: 1.75,
            smoother: SmootherSettings::default(),
            weighting: SliceWeighting::Cume,
            ratio_form: RidgeRatioForm::Ridged,
            scale_adaptive: true,
            fan_li_c: 1.25,
            density_c: 1.75,
            dm: DmSettings::default(),
            seed: 0,
        }
    }
}

/// Two-point wild-bootstrap multiplier law with golden-ratio atoms.
///
/// `P(V = (1-sqrt 5)/2) = (1+sqrt 5)/(2 sqrt 5)`, the complementary mass on
/// `(1+sqrt 5)/2`; both raw moments are exactly centered and unit.
#[derive(Debug, Clone, Copy, Default)]
pub struct WildBootstrapLaw;

impl WildBootstrapLaw {
    pub fn atom_minus() -> f64 {
        (1.0 - 5f64.sqrt()) / 2.0
    }

    pub fn atom_plus() -> f64 {
        (1.0 + 5f64.sqrt()) / 2.0
    }

    pub fn prob_minus() -> f64 {
        (1.0 + 5f64.sqrt()) / (2.0 * 5f64.sqrt())
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        if rng.random::<f64>() < Self::prob_minus() {
            Self::atom_minus()
        } else {
            Self::atom_plus()
        }
    }
}

fn stack_columns(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != w.nrows() {
        return Err(Error::invalid("X and W must have the same number of rows"));
    }
    let n = x.nrows();
    let d = x.ncols() + w.ncols();
    let mut z = DMatrix::<f64>::zeros(n, d);
    z.view_mut((0, 0), (n, x.ncols())).copy_from(x);
    z.view_mut((0, x.ncols()), (n, w.ncols())).copy_from(w);
    Ok(z)
}

/// Divides each column by its sample standard deviation (unit-scaling for
/// bandwidth rules). Constant columns are left untouched.
fn scale_columns(t: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, q) = t.shape();
    let mut out = t.clone();
    for k in 0..q {
        let col = t.column(k);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        if var > 0.0 {
            let s = var.sqrt();
            for i in 0..n {
                out[(i, k)] /= s;
            }
        }
    }
    out
}

/// Raw adaptive statistic on an explicit projection: the kernel-weighted
/// degenerate U-statistic over residual pairs,
/// `V_n = [n(n-1)]^{-1} sum_{i != j} u_i u_j K((t_j - t_i)/h) / h^q`.
pub fn vn_from_projection(t: &DMatrix<f64>, u: &[f64], h: f64) -> Result<f64> {
    let (n, q) = t.shape();
    check_pair_inputs(n, q, u.len(), h)?;
    let mut acc = 0.0;
    let mut diff = vec![0.0; q];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..q {
                diff[k] = (t[(j, k)] - t[(i, k)]) / h;
            }
            let mut kern = 1.0;
            for &d in &diff {
                kern *= crate::kernels::quartic(d);
                if kern == 0.0 {
                    break;
                }
            }
            if kern != 0.0 {
                acc += kern * u[i] * u[j];
            }
        }
    }
    Ok(2.0 * acc / (n as f64 * (n as f64 - 1.0) * h.powi(q as i32)))
}

/// Variance estimate paired with `vn_from_projection`:
/// `s^2 = 2[n(n-1)]^{-1} sum_{i != j} h^{-q} K^2((t_i - t_j)/h) u_i^2 u_j^2`.
///
/// One `h^{-q}` factor scales the squared kernel so that the estimate
/// converges to `2 int K^2 E[sigma^4 p]`.
pub fn variance_from_projection(t: &DMatrix<f64>, u: &[f64], h: f64) -> Result<f64> {
    let (n, q) = t.shape();
    check_pair_inputs(n, q, u.len(), h)?;
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let mut acc = 0.0;
    let mut diff = vec![0.0; q];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..q {
                diff[k] = (t[(j, k)] - t[(i, k)]) / h;
            }
            let mut kern = 1.0;
            for &d in &diff {
                kern *= crate::kernels::quartic(d);
                if kern == 0.0 {
                    break;
                }
            }
            if kern != 0.0 {
                acc += kern * kern * u[i] * u[i] * u[j] * u[j];
            }
        }
    }
    Ok(4.0 * acc / (n as f64 * (n as f64 - 1.0) * h.powi(q as i32)))
}

fn check_pair_inputs(n: usize, q: usize, ulen: usize, h: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("pairwise statistics need n >= 2"));
    }
    if q == 0 {
        return Err(Error::invalid("projection must have at least one column"));
    }
    if ulen != n {
        return Err(Error::invalid("residual length must match row count"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    Ok(())
}

/// Raw adaptive statistic from covariates and a basis (`t = Z B`).
pub fn dream_vn(z: &DMatrix<f64>, u: &[f64], basis: &Basis, h: f64) -> Result<f64> {
    vn_from_projection(&basis.project(z), u, h)
}

/// Variance estimate from covariates and a basis.
pub fn dream_variance(z: &DMatrix<f64>, u: &[f64], basis: &Basis, h: f64) -> Result<f64> {
    variance_from_projection(&basis.project(z), u, h)
}

/// Shared null-model residual stage: reduced-basis fit of `E(Y | X)`.
pub(crate) struct NullFit {
    pub loo: LooFit,
    pub residuals: Vec<f64>,
    pub h1: f64,
}

pub(crate) fn null_residuals(
    x: &DMatrix<f64>,
    y: &[f64],
    q1: usize,
    config: &DreamConfig,
) -> Result<NullFit> {
    let n = x.nrows();
    if q1 == 0 || q1 > x.ncols() {
        return Err(Error::invalid(format!(
            "q1 = {q1} out of range for p1 = {}",
            x.ncols()
        )));
    }
    let sdr_cfg = SdrConfig {
        dimension: DimensionSpec::Given(q1),
        weighting: config.weighting,
        ratio_form: config.ratio_form,
    };
    let basis1 = estimate_basis(x, y, &sdr_cfg)?;
    let mut t1 = basis1.basis.project(x);
    if config.scale_adaptive {
        t1 = scale_columns(&t1);
    }
    let h1 = config.smoother.bandwidth(n, q1)?;
    let spec = KernelSpec::new(config.smoother.family, q1, h1)?;
    let loo = nw_loo_with(&t1, y, &spec, config.smoother.density_floor, config.smoother.fallback)?;
    let u = residuals(y, &loo)?;
    Ok(NullFit { loo, residuals: u, h1 })
}

/// Runs the adaptive test end to end.
///
/// Fits the reduced basis on `(X, Y)` with `q1` given, smooths out the null
/// model, re-estimates a basis on the full covariates with automatic
/// dimension selection, and standardizes the kernel statistic by
/// `n h^{q_hat/2} / s_hat`. Upper one-sided normal p-value.
pub fn run_dream(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    y: &[f64],
    q1: usize,
    config: &DreamConfig,
) -> Result<TestReport> {
    let z = stack_columns(x, w)?;
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::invalid("response length must match row count"));
    }
    if n <= z.ncols() {
        return Err(Error::invalid("need more observations than covariates"));
    }

    let null_fit = null_residuals(x, y, q1, config)?;

    let sdr_cfg = SdrConfig {
        dimension: DimensionSpec::Auto(RidgeConfig::PaperRule { q1, c: config.ridge_c }),
        weighting: config.weighting,
        ratio_form: config.ratio_form,
    };
    let fit_z = estimate_basis(&z, y, &sdr_cfg)?;
    let q_hat = fit_z.selected_dimension;
    let h = bandwidth_rule(n, q_hat, config.c_h)?;

    let mut tz = fit_z.basis.project(&z);
    if config.scale_adaptive {
        tz = scale_columns(&tz);
    }
    let vn = vn_from_projection(&tz, &null_fit.residuals, h)?;
    let s2 = variance_from_projection(&tz, &null_fit.residuals, h)?;
    let (standardized, p_value) = if s2 > 0.0 {
        let t = n as f64 * h.powf(q_hat as f64 / 2.0) * vn / s2.sqrt();
        (t, standard_normal_sf(t))
    } else {
        // no kernel-overlapping pairs: the statistic carries no information
        (0.0, 0.5)
    };

    Ok(TestReport {
        method: Method::Dream,
        raw_statistic: vn,
        variance_estimate: Some(s2),
        standardized: Some(standardized),
        p_value,
        q1,
        q_hat: Some(q_hat),
        bandwidths: Bandwidths { h, h1: null_fit.h1 },
        bootstrap_reps: None,
        seed: config.seed,
    })
}

/// Raw, standardized and p-value of the full-dimensional kernel statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanLiOutcome {
    pub raw: f64,
    pub standardized: f64,
    pub p_value: f64,
}

/// Fan-Li statistic on explicit inputs: density-weighted residual products
/// under a `d`-dimensional quartic product kernel, standardized by
/// `n h^{d/2}` and the matching pair-variance estimate.
pub fn fan_li_statistic(
    z: &DMatrix<f64>,
    u_hat: &[f64],
    f1_hat: &[f64],
    h: f64,
) -> Result<FanLiOutcome> {
    let (n, d) = z.shape();
    check_pair_inputs(n, d, u_hat.len(), h)?;
    if f1_hat.len() != n {
        return Err(Error::invalid("density weights must match row count"));
    }
    let c: Vec<f64> = u_hat.iter().zip(f1_hat).map(|(u, f)| u * f).collect();
    let raw = vn_from_projection(z, &c, h)?;
    if c.iter().all(|&v| v == 0.0) {
        return Ok(FanLiOutcome { raw: 0.0, standardized: 0.0, p_value: 0.5 });
    }
    let s2 = variance_from_projection(z, &c, h)?;
    if s2 > 0.0 {
        let t = n as f64 * h.powf(d as f64 / 2.0) * raw / s2.sqrt();
        Ok(FanLiOutcome { raw, standardized: t, p_value: standard_normal_sf(t) })
    } else {
        Ok(FanLiOutcome { raw, standardized: 0.0, p_value: 0.5 })
    }
}

fn covariate_density(
    x: &DMatrix<f64>,
    config: &DreamConfig,
) -> Result<(Vec<f64>, f64)> {
    let (n, p1) = x.shape();
    let xs = if config.scale_adaptive { scale_columns(x) } else { x.clone() };
    let h_f = bandwidth_rule(n, p1, config.density_c)?;
    let spec = KernelSpec::new(config.smoother.family, p1, h_f)?;
    Ok((density_loo(&xs, &spec)?, h_f))
}

/// Runs the Fan-Li baseline end to end with the shared residual stage.
pub fn run_fan_li(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    y: &[f64],
    q1: usize,
    config: &DreamConfig,
) -> Result<TestReport> {
    let z = stack_columns(x, w)?;
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::invalid("response length must match row count"));
    }
    let null_fit = null_residuals(x, y, q1, config)?;
    let (f1, _) = covariate_density(x, config)?;

    let d = z.ncols();
    let h = bandwidth_rule(n, d, config.fan_li_c)?;
    let zs = if config.scale_adaptive { scale_columns(&z) } else { z.clone() };
    let outcome = fan_li_statistic(&zs, &null_fit.residuals, &f1, h)?;

    Ok(TestReport {
        method: Method::FanLi,
        raw_statistic: outcome.raw,
        variance_estimate: None,
        standardized: Some(outcome.standardized),
        p_value: outcome.p_value,
        q1,
        q_hat: None,
        bandwidths: Bandwidths { h, h1: null_fit.h1 },
        bootstrap_reps: None,
        seed: config.seed,
    })
}

/// Delgado-Gonzalez Manteiga statistic: cumulated density-weighted residuals
/// over componentwise-strict indicator half-spaces,
/// `[n(n-1)]^{-1} sum_i [ sum_{j != i} u_j f_j I(x_j < x_i) I(w_j < w_i) ]^2`.
pub fn dm_statistic(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u_hat: &[f64],
    f1_hat: &[f64],
) -> Result<f64> {
    let n = x.nrows();
    if w.nrows() != n || u_hat.len() != n || f1_hat.len() != n {
        return Err(Error::invalid("input lengths must agree"));
    }
    if n < 2 {
        return Err(Error::invalid("statistic needs n >= 2"));
    }
    let c: Vec<f64> = u_hat.iter().zip(f1_hat).map(|(u, f)| u * f).collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut inner = 0.0;
        for j in 0..n {
            if j != i && dominated(x, w, j, i) {
                inner += c[j];
            }
        }
        total += inner * inner;
    }
    Ok(total / (n as f64 * (n as f64 - 1.0)))
}

#[inline]
fn dominated(x: &DMatrix<f64>, w: &DMatrix<f64>, j: usize, i: usize) -> bool {
    for k in 0..x.ncols() {
        if x[(j, k)] >= x[(i, k)] {
            return false;
        }
    }
    for k in 0..w.ncols() {
        if w[(j, k)] >= w[(i, k)] {
            return false;
        }
    }
    true
}

/// Runs the wild-bootstrap baseline end to end.
///
/// Bootstrap responses are `y*_i = g_hat(x_i) + u_hat_i V_i` with the
/// two-point multiplier law; residuals are re-estimated on each bootstrap
/// sample with the same smoothing configuration and the p-value is
/// `(1 + #{stat* >= stat}) / (reps + 1)`.
pub fn run_dm(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    y: &[f64],
    q1: usize,
    config: &DreamConfig,
) -> Result<TestReport> {
    let n = x.nrows();
    if w.nrows() != n || y.len() != n {
        return Err(Error::invalid("input lengths must agree"));
    }
    let reps = config.dm.bootstrap_reps;
    if reps == 0 {
        return Err(Error::invalid("bootstrap needs at least one replication"));
    }

    // null fit used both for residuals and for bootstrap data generation
    let (fitted, u, h1) = if config.dm.full_dimensional_smoothing {
        let p1 = x.ncols();
        let xs = if config.scale_adaptive { scale_columns(x) } else { x.clone() };
        let h1 = config.smoother.bandwidth(n, p1)?;
        let spec = KernelSpec::new(config.smoother.family, p1, h1)?;
        let loo =
            nw_loo_with(&xs, y, &spec, config.smoother.density_floor, config.smoother.fallback)?;
        let u = residuals(y, &loo)?;
        (loo, u, h1)
    } else {
        let nf = null_residuals(x, y, q1, config)?;
        (nf.loo, nf.residuals, nf.h1)
    };
    let (f1, h_f) = covariate_density(x, config)?;

    // indicator structure is fixed across bootstrap replications
    let mut dominates = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if j != i && dominated(x, w, j, i) {
                dominates[i * n + j] = true;
            }
        }
    }
    let stat_from = |c: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let row = &dominates[i * n..(i + 1) * n];
            let mut inner = 0.0;
            for (j, &dom) in row.iter().enumerate() {
                if dom {
                    inner += c[j];
                }
            }
            total += inner * inner;
        }
        total / (n as f64 * (n as f64 - 1.0))
    };

    let c_obs: Vec<f64> = u.iter().zip(&f1).map(|(ui, fi)| ui * fi).collect();
    let observed = stat_from(&c_obs);

    let smoother_spec =
        KernelSpec::new(config.smoother.family, fitted.projected.ncols(), fitted.bandwidth)?;
    let mut exceed = 0usize;
    let mut y_star = vec![0.0; n];
    for b in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64 + 1);
        for i in 0..n {
            y_star[i] = fitted.fitted[i] + u[i] * WildBootstrapLaw::sample(&mut rng);
        }
        let loo_star = nw_loo_with(
            &fitted.projected,
            &y_star,
            &smoother_spec,
            config.smoother.density_floor,
            config.smoother.fallback,
        )?;
        let c_star: Vec<f64> = (0..n)
            .map(|i| (y_star[i] - loo_star.fitted[i]) * f1[i])
            .collect();
        if stat_from(&c_star) >= observed {
            exceed += 1;
        }
    }
    let p_value = (1.0 + exceed as f64) / (reps as f64 + 1.0);

    Ok(TestReport {
        method: Method::Dm,
        raw_statistic: observed,
        variance_estimate: None,
        standardized: None,
        p_value,
        q1,
        q_hat: None,
        bandwidths: Bandwidths { h: h_f, h1 },
        bootstrap_reps: Some(reps),
        seed: config.seed,
    })
}
