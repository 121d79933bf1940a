//! Conditional-independence tests for quartets `X_c ⊥ X_d | (X_a, X_b)`.
//!
//! Three tests are provided: a kernel test ([`kci_test`]) that works for any
//! distribution, a Gaussian partial-correlation test ([`partial_corr_ci`]),
//! and an unconditional HSIC test ([`uncond_independence`]).

use std::fmt;

use thiserror::Error;

mod kci;
pub mod kernel;
mod pcorr;

pub use kci::{
    cluster_size, kci_statistic, kci_test, permutation_clusters, uncond_independence, KciConditioner, KciSide, Role,
};
pub use pcorr::{column_covariance, partial_corr_ci, PcorrMode, EXACT_PCORR_TOL};

/// Smallest sample count accepted by the kernel tests.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CiError {
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("degenerate input: a column has zero variance")]
    Degenerate,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("conditional covariance is singular")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CiMethod {
    Kci,
    PartialCorr,
    Hsic,
    Separation,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Kci => "kci",
            CiMethod::PartialCorr => "pcorr",
            CiMethod::Hsic => "hsic",
            CiMethod::Separation => "separation",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiTestResult {
    pub statistic: f64,
    /// `tau` in threshold mode, `alpha` when a p-value drives the decision.
    pub threshold: f64,
    pub p_value: Option<f64>,
    pub independent: bool,
    pub method: CiMethod,
}

impl CiTestResult {
    pub fn from_threshold(statistic: f64, threshold: f64, method: CiMethod) -> Self {
        CiTestResult { statistic, threshold, p_value: None, independent: statistic <= threshold, method }
    }

    pub fn from_p_value(statistic: f64, p: f64, alpha: f64, method: CiMethod) -> Self {
        CiTestResult { statistic, threshold: alpha, p_value: Some(p), independent: p >= alpha, method }
    }
}

/// Observed variables of one quartet test, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct QuartetData {
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub cond: Vec<Vec<f64>>,
}

impl QuartetData {
    pub fn new(left: Vec<Vec<f64>>, right: Vec<Vec<f64>>, cond: Vec<Vec<f64>>) -> Result<Self, CiError> {
        if left.is_empty() || right.is_empty() {
            return Err(CiError::Shape("left and right need at least one column".into()));
        }
        if cond.len() > 4 {
            return Err(CiError::Shape(format!("{} conditioning columns, at most 4", cond.len())));
        }
        let m = left[0].len();
        if left.iter().chain(&right).chain(&cond).any(|c| c.len() != m) {
            return Err(CiError::Shape("columns have different lengths".into()));
        }
        Ok(QuartetData { left, right, cond })
    }

    pub fn n_samples(&self) -> usize {
        self.left[0].len()
    }

    /// Same quartet with left and right exchanged.
    pub fn swapped(&self) -> Self {
        QuartetData { left: self.right.clone(), right: self.left.clone(), cond: self.cond.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance within each block.
    Median,
    /// Fixed widths for the left, right and conditioning blocks. The
    /// augmented blocks reuse the left and right widths.
    Fixed { x: f64, y: f64, z: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    /// Independent iff the statistic is at most `tau`.
    Tolerance(f64),
    /// Independent iff the conditional-permutation p-value is at least `alpha`.
    Permutation { permutations: usize, alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub bandwidth: Bandwidth,
    pub ridge: f64,
    pub decision: Decision,
    pub seed: u64,
    /// Incomplete-Cholesky stopping threshold on the residual diagonal.
    pub lowrank_tol: f64,
    pub max_rank: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            bandwidth: Bandwidth::Median,
            ridge: 1e-3,
            decision: Decision::Permutation { permutations: 200, alpha: 0.05 },
            seed: 0,
            lowrank_tol: 1e-5,
            max_rank: 160,
        }
    }
}

impl KernelParams {
    pub fn tolerance(tau: f64) -> Self {
        KernelParams { decision: Decision::Tolerance(tau), ..Default::default() }
    }

    pub fn permutation(permutations: usize, alpha: f64, seed: u64) -> Self {
        KernelParams { decision: Decision::Permutation { permutations, alpha }, seed, ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CiError> {
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(CiError::Config(format!("ridge must be positive, got {}", self.ridge)));
        }
        if let Bandwidth::Fixed { x, y, z } = self.bandwidth {
            if ![x, y, z].iter().all(|w| *w > 0.0 && w.is_finite()) {
                return Err(CiError::Config("fixed bandwidths must be positive".into()));
            }
        }
        if !(self.lowrank_tol >= 0.0) || self.max_rank == 0 {
            return Err(CiError::Config("low-rank settings out of range".into()));
        }
        match self.decision {
            Decision::Tolerance(tau) if !(tau >= 0.0 && tau.is_finite()) => {
                Err(CiError::Config(format!("tolerance must be non-negative, got {tau}")))
            }
            Decision::Permutation { permutations: 0, .. } => {
                Err(CiError::Config("permutation mode needs at least one permutation".into()))
            }
            Decision::Permutation { alpha, .. } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(CiError::Config(format!("alpha must lie in (0, 1), got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}
