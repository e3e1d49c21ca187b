//! Experiment configuration: a versioned TOML document with unknown keys rejected.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use wickheat::covariance::{CovarianceSpec, Regularization, SmoothingParams, SpatialKernel, TemporalKernel};
use wickheat::gaussian_field::LatticeSpec;
use wickheat::paths::InitialDatum;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub covariance: CovarianceConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub regularization: RegularizationConfig,
    /// Explicit Feynman–Kac lattice; without it each (t, x) gets the desk lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub tails: TailsConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub malliavin: MalliavinConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub temporal: TemporalConfig,
    pub spatial: SpatialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalConfig {
    Dirac,
    PowerLaw {
        alpha0: f64,
        #[serde(default = "one")]
        c0: f64,
        #[serde(default = "one")]
        c0_upper: f64,
    },
    Fractional {
        hurst: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialConfig {
    Dirac,
    Riesz {
        alpha: f64,
        #[serde(default = "one")]
        coeff: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    FractionalProduct {
        hurst: Vec<f64>,
    },
    /// Zero-noise test kernel.
    Zero,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Constant { value: f64 },
    Gaussian { amplitude: f64, width: f64 },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t: Vec<f64>,
    /// Spatial points, each of the kernel dimension.
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { epsilon: 0.1, delta: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub n_fields: usize,
    pub n_paths: usize,
    pub n_mc: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig { n_fields: 1024, n_paths: 512, n_mc: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    pub steps_per_unit: f64,
    pub dx: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        let r = Regularization::default();
        RegularizationConfig { steps_per_unit: r.steps_per_unit, dx: r.dx }
    }
}

impl RegularizationConfig {
    pub fn to_regularization(self) -> Regularization {
        Regularization { steps_per_unit: self.steps_per_unit, dx: self.dx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub dx: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub k_max: usize,
    pub n_trunc: usize,
    pub tail_tol: f64,
    /// Use the mollified lattice covariance instead of the regularized unsmoothed one.
    pub smoothed: bool,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig { k_max: 4, n_trunc: 6, tail_tol: 1e-3, smoothed: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailsConfig {
    pub thetas: Vec<f64>,
    pub rho: f64,
    pub moment_orders: Vec<f64>,
    pub right_points: usize,
    pub small_ball_points: usize,
    pub negative_p: Vec<f64>,
}

impl Default for TailsConfig {
    fn default() -> Self {
        TailsConfig {
            thetas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            rho: 3.0,
            moment_orders: vec![1.0, 2.0, 3.0, 4.0],
            right_points: 10,
            small_ball_points: 10,
            negative_p: vec![0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Replace the SPDE ensemble by standard-normal samples.
    pub injected_normal: bool,
    pub n_injected: usize,
    pub right_quantile_low: f64,
    pub right_quantile_high: f64,
    pub right_points: usize,
    pub min_r2: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            injected_normal: false,
            n_injected: 100_000,
            right_quantile_low: 0.90,
            right_quantile_high: 0.995,
            right_points: 20,
            min_r2: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MalliavinConfig {
    pub scaling_t: Vec<f64>,
    pub scaling_steps_per_unit: f64,
    pub scaling_dx: f64,
    pub scaling_n_mc: usize,
    pub scaling_tolerance: f64,
    /// Times of the λ, b table; the envelope constants are fitted at the smallest.
    pub envelope_t: Vec<f64>,
    pub small_ball_t: f64,
    pub n_pairs: usize,
    pub small_ball_points: usize,
    pub negative_p: Vec<f64>,
}

impl Default for MalliavinConfig {
    fn default() -> Self {
        MalliavinConfig {
            scaling_t: vec![0.05, 0.1, 0.2, 0.4],
            scaling_steps_per_unit: 4096.0,
            scaling_dx: 0.02,
            scaling_n_mc: 400_000,
            scaling_tolerance: 0.2,
            envelope_t: vec![0.1, 0.25, 0.5],
            small_ball_t: 0.25,
            n_pairs: 64,
            small_ball_points: 10,
            negative_p: vec![0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub kl_smoothing: Vec<f64>,
    pub lag_points: usize,
    pub lag_min: f64,
    pub lag_max: f64,
    pub bound_rel_tol: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { kl_smoothing: vec![0.1, 0.01], lag_points: 64, lag_min: 1e-2, lag_max: 1.0, bound_rel_tol: 1e-6 }
    }
}

impl ExperimentConfig {
    /// White noise in d = 1, u₀ ≡ 1, one point (0.25, 0).
    pub fn white_default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 20240601,
            output_dir: default_output_dir(),
            covariance: CovarianceConfig { temporal: TemporalConfig::Dirac, spatial: SpatialConfig::Dirac },
            initial: InitialConfig::default(),
            grid: GridConfig { t: vec![0.25], x: vec![vec![0.0]] },
            smoothing: SmoothingConfig::default(),
            budget: BudgetConfig::default(),
            regularization: RegularizationConfig::default(),
            lattice: None,
            moments: MomentsConfig::default(),
            tails: TailsConfig::default(),
            density: DensityConfig::default(),
            malliavin: MalliavinConfig::default(),
            validate: ValidateConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> CliResult<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical re-serialized document, hex encoded. The
    /// output directory is left out: moving outputs does not change a run.
    pub fn hash(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.grid.t.is_empty() || self.grid.x.is_empty() {
            return bad("grid.t and grid.x must be nonempty");
        }
        if self.grid.t.iter().any(|&t| !(t > 0.0)) {
            return bad("grid times must be positive");
        }
        let b = &self.budget;
        if b.n_fields == 0 || b.n_paths == 0 || b.n_mc == 0 {
            return bad("budgets must be positive");
        }
        let spec = self.spec()?;
        if self.grid.x.iter().any(|x| x.len() != spec.dim()) {
            return bad("every grid point must have the kernel dimension");
        }
        self.smoothing_params()?;
        self.initial_datum()?;
        if self.malliavin.scaling_t.len() < 2 || self.malliavin.envelope_t.is_empty() {
            return bad("malliavin.scaling_t needs two times and envelope_t one");
        }
        Ok(())
    }

    pub fn spec(&self) -> CliResult<CovarianceSpec> {
        let temporal = match self.covariance.temporal {
            TemporalConfig::Dirac => TemporalKernel::Dirac,
            TemporalConfig::PowerLaw { alpha0, c0, c0_upper } => TemporalKernel::PowerLaw { alpha0, c0, c0_upper },
            TemporalConfig::Fractional { hurst } => TemporalKernel::Fractional { hurst },
        };
        let spatial = match &self.covariance.spatial {
            SpatialConfig::Dirac => SpatialKernel::Dirac,
            SpatialConfig::Riesz { alpha, coeff, dim } => SpatialKernel::Riesz { alpha: *alpha, coeff: *coeff, dim: *dim },
            SpatialConfig::FractionalProduct { hurst } => SpatialKernel::FractionalProduct { hurst: hurst.clone() },
            SpatialConfig::Zero => SpatialKernel::zero(),
        };
        Ok(CovarianceSpec::new(temporal, spatial)?)
    }

    pub fn smoothing_params(&self) -> CliResult<SmoothingParams> {
        Ok(SmoothingParams::new(self.smoothing.epsilon, self.smoothing.delta)?)
    }

    pub fn initial_datum(&self) -> CliResult<InitialDatum> {
        Ok(match self.initial {
            InitialConfig::Constant { value } => InitialDatum::constant(value)?,
            InitialConfig::Gaussian { amplitude, width } => InitialDatum::gaussian(amplitude, width)?,
        })
    }

    /// Lattice used for the conditioned estimators at (t, x).
    pub fn lattice_for(&self, t: f64, x: &[f64], dim: usize) -> CliResult<LatticeSpec> {
        match self.lattice {
            Some(l) => Ok(LatticeSpec::new(l.dt, l.horizon, l.dx, l.half_width, dim)?),
            None => {
                let reach = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Ok(LatticeSpec::desk(t, reach, dim)?)
            }
        }
    }
}
