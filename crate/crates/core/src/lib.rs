//! Significance testing for covariate subsets in nonparametric regression.
//!
//! Given a response `Y` and covariates split into a retained block `X` and a
//! tested block `W`, the null hypothesis is that `W` adds nothing:
//! `E(Y | X, W) = E(Y | X)`. The main test estimates a central-mean-subspace
//! basis for the full covariate vector by sliced inverse regression over
//! indicator responses, selects its dimension with a ridged eigenvalue-ratio
//! criterion, and standardizes a kernel-weighted U-statistic of null-model
//! residuals against its limiting normal law. Two baselines are included
//! for comparison: a full-dimensional kernel statistic and an indicator
//! half-space statistic with wild-bootstrap critical values, plus a Monte
//! Carlo harness for empirical size and power studies.

pub mod error;
pub mod kernels;
pub mod sample;
pub mod sdr;
pub mod significance;
pub mod simulation;
pub mod smoothers;

pub use error::{Error, Result};
pub use kernels::{bandwidth_rule, kernel_square_integral, KernelFamily, KernelSpec};
pub use sample::Sample;
pub use sdr::{
    dee_sir_candidate, estimate_basis, fast_mtilde_all, rere_dimension, standardize, Basis,
    DimensionSpec, RidgeConfig, RidgeRatioForm, SdrConfig, SdrFit, SliceWeighting,
};
pub use significance::{
    dm_statistic, dream_variance, dream_vn, fan_li_statistic, run_dm, run_dream, run_fan_li,
    standard_normal_cdf, standard_normal_sf, variance_from_projection, vn_from_projection,
    Bandwidths, DmSettings, DreamConfig, FanLiOutcome, Method, SmootherSettings, TestReport,
    WildBootstrapLaw,
};
pub use simulation::{
    empirical_details, empirical_rejection, generate_example, ks_critical_value,
    ks_distance_standard_normal, make_covariance, replication_rng, MethodPower, PowerResult,
    ReplicationRecord, SigmaKind, SimulationSpec,
};
pub use smoothers::{density_loo, nw_loo, nw_loo_with, residuals, FallbackPolicy, LooFit};
