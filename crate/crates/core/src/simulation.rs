//! Data generators for the benchmark models and a Monte Carlo engine for
//! empirical size and power.
//!
//! Replications are independent and embarrassingly parallel; every
//! replication derives its own counter-based generator from `(seed,
//! replication index)`, so results are identical at any thread count.

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::significance::{
    run_dm, run_dream, run_fan_li, standard_normal_cdf, DreamConfig, Method, TestReport,
};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::time::Instant;

/// Covariance families for the covariate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// Identity.
    Identity,
    /// AR(1)-type: `sigma_ij = 0.5^{|i-j|}`.
    ArHalf,
    /// Exchangeable with off-diagonal 0.2.
    Exch02,
    /// Four times the identity.
    Scaled4Identity,
}

impl SigmaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaKind::Identity => "identity",
            SigmaKind::ArHalf => "ar_half",
            SigmaKind::Exch02 => "exch_02",
            SigmaKind::Scaled4Identity => "scaled4_identity",
        }
    }
}

impl std::str::FromStr for SigmaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "sigma1" => Ok(SigmaKind::Identity),
            "ar_half" | "sigma2" => Ok(SigmaKind::ArHalf),
            "exch_02" | "sigma3" => Ok(SigmaKind::Exch02),
            "scaled4_identity" | "4identity" => Ok(SigmaKind::Scaled4Identity),
            other => Err(Error::invalid(format!("unknown covariance kind '{other}'"))),
        }
    }
}

/// Builds the `p x p` covariance matrix of a family.
pub fn make_covariance(kind: SigmaKind, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::invalid("covariance dimension must be >= 1"));
    }
    let m = match kind {
        SigmaKind::Identity => DMatrix::identity(p, p),
        SigmaKind::ArHalf => {
            DMatrix::from_fn(p, p, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
        }
        SigmaKind::Exch02 => DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.2 }),
        SigmaKind::Scaled4Identity => 4.0 * DMatrix::identity(p, p),
    };
    Ok(m)
}

/// Specification of one Monte Carlo cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimulationSpec {
    /// 0 is the illustrative linear power-curve model; 1-4 are the
    /// benchmark models.
    pub example_id: u8,
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    /// Departure magnitude; 0 is the null.
    pub a: f64,
    pub sigma: SigmaKind,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Overrides the model's error scale (testing hook; `None` keeps the
    /// model's own scale).
    #[serde(default)]
    pub noise_scale: Option<f64>,
    /// Overrides the configured wild-bootstrap replication count.
    #[serde(default)]
    pub bootstrap_reps: Option<usize>,
}

impl SimulationSpec {
    /// Null-model structural dimension of the example.
    pub fn q1(&self) -> usize {
        match self.example_id {
            3 | 4 => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method must be requested"));
        }
        if self.n < self.p1 + self.p2 + 2 {
            return Err(Error::invalid("sample size too small for the dimensions"));
        }
        match self.example_id {
            0 => {
                if self.p1 < 2 || self.p2 < 1 {
                    return Err(Error::invalid("example 0 needs p1 >= 2 and p2 >= 1"));
                }
            }
            1 | 2 => {
                if self.p1 < 2 || self.p2 < 2 || self.p1 % 2 != 0 || self.p2 % 2 != 0 {
                    return Err(Error::invalid(
                        "examples 1 and 2 need even p1 >= 2 and even p2 >= 2",
                    ));
                }
            }
            3 | 4 => {
                if self.p1 != 4 || self.p2 != 4 {
                    return Err(Error::invalid("examples 3 and 4 require p1 = p2 = 4"));
                }
            }
            other => return Err(Error::invalid(format!("unknown example id {other}"))),
        }
        Ok(())
    }
}

/// First `p/2` coordinates equal, unit norm.
fn beta_front(p: usize) -> DVector<f64> {
    let k = p / 2;
    let mut b = DVector::zeros(p);
    for i in 0..k {
        b[i] = 1.0;
    }
    b / (k as f64).sqrt()
}

/// Last `p/2` coordinates equal, unit norm.
fn beta_back(p: usize) -> DVector<f64> {
    let k = p / 2;
    let mut b = DVector::zeros(p);
    for i in (p - k)..p {
        b[i] = 1.0;
    }
    b / (k as f64).sqrt()
}

/// Independent generator for one replication: a fixed base seed with the
/// replication index as the stream, so any replication is reproducible in
/// isolation and independent of execution order.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.wrapping_add(1));
    rng
}

fn draw_matrix(rng: &mut ChaCha8Rng, n: usize, chol: &Cholesky<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let p = chol.l().nrows();
    let normals = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    normals * chol.l().transpose()
}

/// Draws one dataset for the given replication index.
pub fn generate_example(spec: &SimulationSpec, replication: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = replication_rng(spec.seed, replication as u64);

    let sigma_x = make_covariance(spec.sigma, spec.p1)?;
    let sigma_w = make_covariance(spec.sigma, spec.p2)?;
    let chol_x = Cholesky::new(sigma_x)
        .ok_or_else(|| Error::invalid("covariance not positive definite"))?;
    let chol_w = Cholesky::new(sigma_w)
        .ok_or_else(|| Error::invalid("covariance not positive definite"))?;

    let x = draw_matrix(&mut rng, spec.n, &chol_x);
    let w = draw_matrix(&mut rng, spec.n, &chol_w);
    let eps: Vec<f64> = (0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let a = spec.a;
    let (mut y, model_noise): (Vec<f64>, f64) = match spec.example_id {
        0 => {
            // illustrative model: (X1 + X2)/sqrt(2) + 2 a W1
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                y.push((x[(i, 0)] + x[(i, 1)]) / 2f64.sqrt() + 2.0 * a * w[(i, 0)]);
            }
            (y, 1.0)
        }
        1 => {
            let b1 = beta_front(spec.p1);
            let b2 = beta_back(spec.p2);
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let t1 = (x.row(i) * &b1)[0];
                let t2 = (w.row(i) * &b2)[0];
                y.push(2.0 * t1 + 2.0 * a * t2);
            }
            (y, 0.5)
        }
        2 => {
            let b1 = beta_front(spec.p1);
            let b2 = beta_back(spec.p2);
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let t1 = (x.row(i) * &b1)[0];
                let t2 = (w.row(i) * &b2)[0];
                y.push(2.0 * t1.sin() + 2.0 * a * t2.sin());
            }
            (y, 0.5)
        }
        3 => {
            let b1 = DVector::from_column_slice(&[1.0, 1.0, 0.0, 0.0]) / 2f64.sqrt();
            let b2 = DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]) / 2f64.sqrt();
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let t1 = (x.row(i) * &b1)[0];
                let t2 = (x.row(i) * &b2)[0];
                let t3 = (w.row(i) * &b2)[0];
                y.push(2.0 * t1.sin() + (t2 / 2.0).exp() + 2.0 * a * t3.sin());
            }
            (y, 0.5)
        }
        4 => {
            // the whole tested-block contribution scales with `a`, so a = 0
            // is an exact null; |.| keeps the ratio denominator positive
            let mut y = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let ratio = 1.5 * (w[(i, 0)] + w[(i, 1)])
                    / (0.5 + (1.5 * w[(i, 2)] + 0.5).abs().powf(1.5));
                let sine = 0.75 * (w[(i, 3)] + 1.0).sin();
                y.push(x[(i, 0)] + 0.2 * x[(i, 1)].exp() + a * (ratio + sine));
            }
            (y, 0.2)
        }
        _ => unreachable!("validated above"),
    };

    let noise = spec.noise_scale.unwrap_or(model_noise);
    for (yi, e) in y.iter_mut().zip(&eps) {
        *yi += noise * e;
    }
    Sample::new(x, w, y)
}

/// One method's outcome on one replication.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub raw_statistic: f64,
    pub standardized: Option<f64>,
    pub p_value: f64,
    pub q_hat: Option<usize>,
    pub reject: bool,
}

/// Per-method aggregate over a Monte Carlo cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodPower {
    pub method: Method,
    pub rejection_rate: f64,
    pub mc_standard_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_q_hat: Option<f64>,
}

/// Empirical size/power of the requested methods on one cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PowerResult {
    pub example_id: u8,
    pub n: usize,
    pub a: f64,
    pub sigma: SigmaKind,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<MethodPower>,
    pub runtime_secs: f64,
}

impl PowerResult {
    /// Column contract: `example,n,a,sigma,method,rate,mc_se,reps,seed`.
    pub const CSV_HEADER: &'static str = "example,n,a,sigma,method,rate,mc_se,reps,seed";

    pub fn csv_rows(&self) -> Vec<String> {
        self.methods
            .iter()
            .map(|m| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    self.example_id,
                    self.n,
                    self.a,
                    self.sigma.as_str(),
                    m.method.as_str(),
                    m.rejection_rate,
                    m.mc_standard_error,
                    self.replications,
                    self.seed
                )
            })
            .collect()
    }
}

fn run_method(
    method: Method,
    sample: &Sample,
    q1: usize,
    config: &DreamConfig,
) -> Result<TestReport> {
    match method {
        Method::Dream => run_dream(&sample.x, &sample.w, &sample.y, q1, config),
        Method::FanLi => run_fan_li(&sample.x, &sample.w, &sample.y, q1, config),
        Method::Dm => run_dm(&sample.x, &sample.w, &sample.y, q1, config),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every replication of a cell and returns the per-replication records
/// in replication order (deterministic for any degree of parallelism).
pub fn empirical_details(
    spec: &SimulationSpec,
    config: &DreamConfig,
) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    let q1 = spec.q1();
    let records: Result<Vec<Vec<ReplicationRecord>>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let sample = generate_example(spec, rep)?;
            let mut cfg = config.clone();
            // independent bootstrap streams per replication
            cfg.seed = splitmix64(spec.seed ^ (rep as u64).wrapping_mul(0xA5A5_5A5A_DEAD_BEEF));
            if let Some(b) = spec.bootstrap_reps {
                cfg.dm.bootstrap_reps = b;
            }
            spec.methods
                .iter()
                .map(|&method| {
                    let report = run_method(method, &sample, q1, &cfg)?;
                    Ok(ReplicationRecord {
                        replication: rep,
                        method,
                        raw_statistic: report.raw_statistic,
                        standardized: report.standardized,
                        p_value: report.p_value,
                        q_hat: report.q_hat,
                        reject: report.p_value <= spec.alpha,
                    })
                })
                .collect()
        })
        .collect();
    Ok(records?.into_iter().flatten().collect())
}

/// Monte Carlo size/power over one cell.
pub fn empirical_rejection(spec: &SimulationSpec, config: &DreamConfig) -> Result<PowerResult> {
    let start = Instant::now();
    let records = empirical_details(spec, config)?;
    let reps = spec.replications as f64;
    let methods = spec
        .methods
        .iter()
        .map(|&method| {
            let mine: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.method == method).collect();
            let rate = mine.iter().filter(|r| r.reject).count() as f64 / reps;
            let mc_se = (rate * (1.0 - rate) / reps).sqrt();
            let qs: Vec<f64> = mine.iter().filter_map(|r| r.q_hat.map(|q| q as f64)).collect();
            let mean_q_hat = if qs.is_empty() {
                None
            } else {
                Some(qs.iter().sum::<f64>() / qs.len() as f64)
            };
            MethodPower { method, rejection_rate: rate, mc_standard_error: mc_se, mean_q_hat }
        })
        .collect();
    Ok(PowerResult {
        example_id: spec.example_id,
        n: spec.n,
        a: spec.a,
        sigma: spec.sigma,
        alpha: spec.alpha,
        replications: spec.replications,
        seed: spec.seed,
        methods,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
pub fn ks_distance_standard_normal(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = standard_normal_cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic Kolmogorov-Smirnov critical value `K_alpha / sqrt(n)` with
/// `K_alpha` solving `2 sum_k (-1)^{k-1} exp(-2 k^2 K^2) = alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let tail = |k: f64| -> f64 {
        let mut s = 0.0;
        for j in 1..=100 {
            let term = 2.0 * (-2.0 * (j as f64) * (j as f64) * k * k).exp();
            s += if j % 2 == 1 { term } else { -term };
        }
        s
    };
    let (mut lo, mut hi) = (0.3, 3.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}
