//! TOML run configuration.
//!
//! Every section and field is optional; missing values take the defaults
//! below and unknown keys are rejected. Command-line flags are applied on
//! top of the parsed file, so the effective precedence is
//! flags > config file > defaults.
//!
//! Band anchors are one-based here, as they are usually quoted; the library
//! works with zero-based indices.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bands::PlanKind;
use crate::error::{Error, Result};
use crate::metrics::Region;
use crate::schedule::{DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::solver::{BaselineConfig, MuSchedule, PlanSpec, SolverConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorSection,
    pub schedule: ScheduleSection,
    pub solver: SolverSection,
    pub baseline: BaselineSection,
    pub bands: BandsSection,
    pub prior: PriorSection,
    pub paths: PathsSection,
    pub simulate: SimulateSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSection {
    pub shift: usize,
    /// Needed only when `shift = 0`, where the measurement width says
    /// nothing about the band count.
    pub bands: Option<usize>,
    /// Mask read by `simulate`; a random binary mask is drawn otherwise.
    pub mask_file: Option<PathBuf>,
    pub mask_seed: u64,
}

impl Default for OperatorSection {
    fn default() -> Self {
        OperatorSection {
            shift: 2,
            bands: None,
            mask_file: None,
            mask_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Diffsci,
    PnpBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    pub lambda: f64,
    pub zeta: f64,
    pub guidance_scale: f64,
    pub t_start: usize,
    pub step_count: usize,
    pub seed: u64,
    /// Falls back to the value stored in the measurement file.
    pub sigma_n: Option<f64>,
    pub accelerate: bool,
    pub warm_start: bool,
    pub normalize: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            method: Method::Diffsci,
            lambda: d.lambda,
            zeta: d.zeta,
            guidance_scale: d.guidance_scale,
            t_start: d.t_start,
            step_count: d.step_count,
            seed: d.seed,
            sigma_n: None,
            accelerate: d.accelerate,
            warm_start: d.warm_start,
            normalize: d.normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub iterations: usize,
    /// Fixed penalty; when absent it follows `lambda * sigma_n^2 / denoise_sigma^2`.
    pub mu: Option<f64>,
    pub denoise_sigma: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            iterations: 10,
            mu: None,
            denoise_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsSection {
    pub plan: PlanKind,
    /// One-based; defaults to `(round(21/28 * B), B)`.
    pub anchors: Option<[usize; 2]>,
    pub cutoff_nm: f64,
}

impl Default for BandsSection {
    fn default() -> Self {
        BandsSection {
            plan: PlanKind::WavelengthMatched,
            anchors: None,
            cutoff_nm: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorChoice {
    Identity,
    GaussianShrink,
    /// Needs `paths.truth`.
    Oracle,
    /// Needs `prior.endpoint`.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorChoice,
    pub strength: f64,
    pub endpoint: Option<String>,
    pub max_concurrent: usize,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            kind: PriorChoice::GaussianShrink,
            strength: 1.0,
            endpoint: None,
            max_concurrent: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub cube: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub sigma_n: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub peak: f64,
    pub region: Option<Region>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            peak: 1.0,
            region: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let s = &self.schedule;
        DiffusionSchedule::linear(s.steps, s.beta_start, s.beta_end)
    }

    pub fn plan_spec(&self) -> Result<PlanSpec> {
        let anchors = match self.bands.anchors {
            None => None,
            Some([a, b]) if a >= 1 && b >= 1 => Some((a - 1, b - 1)),
            Some(other) => {
                return Err(Error::Config(format!("anchors {other:?} are one-based")));
            }
        };
        Ok(PlanSpec {
            kind: self.bands.plan,
            anchors,
            cutoff_nm: self.bands.cutoff_nm,
        })
    }

    /// Solver settings; `measured_sigma` is used when the config leaves
    /// `sigma_n` unset.
    pub fn solver_config(&self, measured_sigma: f64) -> Result<SolverConfig> {
        let s = &self.solver;
        Ok(SolverConfig {
            lambda: s.lambda,
            zeta: s.zeta,
            guidance_scale: s.guidance_scale,
            t_start: s.t_start,
            step_count: s.step_count,
            seed: s.seed,
            sigma_n: s.sigma_n.unwrap_or(measured_sigma),
            plan: self.plan_spec()?,
            accelerate: s.accelerate,
            warm_start: s.warm_start,
            normalize: s.normalize,
        })
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        let b = &self.baseline;
        BaselineConfig {
            iterations: b.iterations,
            mu: match b.mu {
                Some(m) => MuSchedule::Constant(m),
                None => MuSchedule::FromSigma(b.denoise_sigma),
            },
            denoise_sigma: b.denoise_sigma,
        }
    }
}
