//! Benchmark configuration and the variant switches it carries.

use std::path::PathBuf;

use clap::ValueEnum;
use gridkern::ybus::StorageMode;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Ybus,
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Storage {
    #[default]
    Interleaved,
    Separate,
}

impl From<Storage> for StorageMode {
    fn from(s: Storage) -> Self {
        match s {
            Storage::Interleaved => StorageMode::Interleaved,
            Storage::Separate => StorageMode::Separate,
        }
    }
}

/// How element-wise Jacobian values reach the sparse matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    TwoStep,
    CopyAdd,
    NewMatrix,
}

/// How the Ybus method computes `dS/dθ` and `dS/dV_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Derivatives {
    #[default]
    TwoPass,
    Matmul,
}

/// How the Ybus method turns the derivative matrices into `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Assembly {
    #[default]
    Inplace,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Md,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub case_path: PathBuf,
    pub replicate_k: usize,
    pub reps: usize,
    pub warmup: usize,
    pub methods: Vec<Method>,
    pub storage: Storage,
    pub reduction: Reduction,
    pub derivatives: Derivatives,
    pub assembly: Assembly,
    pub verify: bool,
    /// Half-width of the uniform perturbation added to `vm` and `va`.
    pub perturb: f64,
    /// Flips the sign of one element-wise partial before verification.
    /// Exists only to prove that verification can fail.
    pub inject_sign_error: bool,
}

impl BenchConfig {
    pub fn new(case_path: impl Into<PathBuf>) -> Self {
        Self {
            case_path: case_path.into(),
            replicate_k: 1,
            reps: 10,
            warmup: 2,
            methods: vec![Method::Ybus, Method::Elementwise],
            storage: Storage::default(),
            reduction: Reduction::default(),
            derivatives: Derivatives::default(),
            assembly: Assembly::default(),
            verify: false,
            perturb: 0.0,
            inject_sign_error: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(BenchError::Config("reps must be at least 1".into()));
        }
        if self.replicate_k == 0 {
            return Err(BenchError::Config("replicate must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no method selected".into()));
        }
        if !(self.perturb.is_finite() && self.perturb >= 0.0) {
            return Err(BenchError::Config(format!(
                "perturb must be finite and non-negative, got {}",
                self.perturb
            )));
        }
        Ok(())
    }

    pub fn runs(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}
