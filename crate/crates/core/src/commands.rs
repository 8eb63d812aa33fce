//! Command implementations behind the `diffsci` binary.
//!
//! Each command reads its inputs from the paths in a [`RunConfig`], writes
//! its artifacts and returns a summary for the caller to print. Outputs
//! depend only on input files, configuration and seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bands::PlanKind;
use crate::cassi::CassiOperator;
use crate::config::{Method, PriorChoice, RunConfig};
use crate::cube::{even_wavelengths, CodedMask, Measurement, SpectralCube};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{self, EvalReport, Region};
use crate::prior::{ExternalPrior, OracleTruth, PriorKind};
use crate::schedule::DiffusionSchedule;
use crate::solver::{run_diffsci, run_pnp_baseline, Reconstruction, SolverConfig, Trace};

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{key} is not set")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub height: usize,
    pub width: usize,
    pub measurement_width: usize,
    pub bands: usize,
    pub sigma_n: f64,
}

/// Reads `paths.cube`, writes `paths.measurement` and `paths.mask`.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let cube = io::read_cube(required(&cfg.paths.cube, "cube")?)?;
    let mask = match &cfg.operator.mask_file {
        Some(p) => io::read_mask(p)?,
        None => CodedMask::random_binary(cube.height(), cube.width(), cfg.operator.mask_seed)?,
    };
    let op = CassiOperator::new(mask, cfg.operator.shift, cube.bands())?;
    let y = op.simulate(&cube, cfg.simulate.sigma_n, cfg.simulate.seed)?;
    io::write_measurement(&y, required(&cfg.paths.measurement, "measurement")?)?;
    io::write_mask(op.mask(), required(&cfg.paths.mask, "mask")?)?;
    Ok(SimulateSummary {
        height: y.height(),
        width: cube.width(),
        measurement_width: y.width(),
        bands: cube.bands(),
        sigma_n: y.noise_sigma(),
    })
}

/// Measurement, operator and optional ground truth for one reconstruction.
#[derive(Debug, Clone)]
pub struct Problem {
    pub op: CassiOperator,
    pub y: Measurement,
    pub wavelengths: Vec<f64>,
    pub truth: Option<SpectralCube>,
}

impl Problem {
    /// Loads `paths.measurement`, `paths.mask` and, if set, `paths.truth`.
    /// The band count comes from the measurement width, or from
    /// `operator.bands` / the truth cube when there is no dispersion.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let y = io::read_measurement(required(&cfg.paths.measurement, "measurement")?)?;
        let mask = io::read_mask(required(&cfg.paths.mask, "mask")?)?;
        let truth = cfg.paths.truth.as_ref().map(io::read_cube).transpose()?;
        let bands = match io::infer_bands(mask.width(), &y)? {
            Some(b) => b,
            None => cfg
                .operator
                .bands
                .or(truth.as_ref().map(|t| t.bands()))
                .ok_or_else(|| Error::Config("operator.bands is required when shift = 0".into()))?,
        };
        let wavelengths = match &truth {
            Some(t) if t.bands() == bands => t.wavelengths().to_vec(),
            Some(t) => return Err(Error::shape(format!("{bands}-band truth"), t.bands())),
            None => even_wavelengths(bands, 450.0, 650.0),
        };
        let op = CassiOperator::new(mask, y.shift(), bands)?;
        Ok(Problem {
            op,
            y,
            wavelengths,
            truth,
        })
    }
}

/// Built-in or external prior selected by `prior.kind`.
pub fn build_prior(
    cfg: &RunConfig,
    schedule: &DiffusionSchedule,
    truth: Option<&SpectralCube>,
) -> Result<PriorKind> {
    match cfg.prior.kind {
        PriorChoice::Identity => Ok(PriorKind::Identity),
        PriorChoice::GaussianShrink => PriorKind::gaussian_shrink(cfg.prior.strength),
        PriorChoice::Oracle => truth
            .map(|t| PriorKind::Oracle(OracleTruth::Cube(t.clone())))
            .ok_or_else(|| Error::Config("oracle prior needs paths.truth".into())),
        PriorChoice::External => {
            let endpoint = cfg
                .prior
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("external prior needs prior.endpoint".into()))?;
            Ok(PriorKind::External(ExternalPrior::connect(
                endpoint,
                schedule,
                cfg.prior.max_concurrent,
            )?))
        }
    }
}

fn solve(
    cfg: &RunConfig,
    solver: &SolverConfig,
    schedule: &DiffusionSchedule,
    problem: &Problem,
    prior: &PriorKind,
) -> Result<Reconstruction> {
    let truth = problem.truth.as_ref();
    match cfg.solver.method {
        Method::Diffsci => run_diffsci(
            solver,
            schedule,
            &problem.op,
            &problem.y,
            &problem.wavelengths,
            prior,
            truth,
        ),
        Method::PnpBaseline => run_pnp_baseline(
            solver,
            schedule,
            &problem.op,
            &problem.y,
            &problem.wavelengths,
            prior,
            &cfg.baseline_config(),
            truth,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructSummary {
    pub steps: usize,
    pub final_residual: Option<f64>,
    pub final_psnr: Option<f64>,
}

/// Writes `paths.output` and, if set, the step trace to `paths.trace`.
pub fn reconstruct(cfg: &RunConfig) -> Result<ReconstructSummary> {
    let output = required(&cfg.paths.output, "output")?;
    let schedule = cfg.schedule()?;
    let problem = Problem::load(cfg)?;
    let solver = cfg.solver_config(problem.y.noise_sigma())?;
    solver.validate(&schedule)?;
    let prior = build_prior(cfg, &schedule, problem.truth.as_ref())?;
    let rec = solve(cfg, &solver, &schedule, &problem, &prior)?;
    io::write_cube(&rec.cube, output)?;
    if let Some(p) = &cfg.paths.trace {
        std::fs::write(p, rec.trace.to_jsonl())?;
    }
    Ok(ReconstructSummary {
        steps: rec.trace.steps.len(),
        final_residual: rec.trace.final_residual(),
        final_psnr: rec.trace.steps.last().and_then(|s| s.psnr),
    })
}

/// Compares two cube files; writes the JSON report when `report` is given.
pub fn evaluate(
    recon: &Path,
    reference: &Path,
    peak: f64,
    region: Option<Region>,
    report: Option<&Path>,
) -> Result<EvalReport> {
    let r = metrics::evaluate(
        &io::read_cube(recon)?,
        &io::read_cube(reference)?,
        peak,
        region,
    )?;
    if let Some(p) = report {
        std::fs::write(p, report_json(&r))?;
    }
    Ok(r)
}

pub fn report_json(r: &EvalReport) -> String {
    serde_json::to_string_pretty(r).expect("serializable") + "\n"
}

/// Ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TStart,
    Steps,
    Lambda,
    Zeta,
    Sc,
    PlanKind,
    Accelerate,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tStart" | "t_start" | "tstart" => Axis::TStart,
            "steps" => Axis::Steps,
            "lambda" => Axis::Lambda,
            "zeta" => Axis::Zeta,
            "sc" | "guidance_scale" => Axis::Sc,
            "planKind" | "plan_kind" | "plan" => Axis::PlanKind,
            "accelerate" => Axis::Accelerate,
            _ => return Err(Error::Config(format!("unknown ablation axis {s:?}"))),
        })
    }
}

fn parse_value<T: FromStr>(axis: Axis, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for axis {axis:?}")))
}

impl Axis {
    /// Applies one sweep value to a base configuration.
    pub fn apply(self, base: &SolverConfig, value: &str) -> Result<SolverConfig> {
        let mut c = base.clone();
        match self {
            Axis::TStart => c.t_start = parse_value(self, value)?,
            Axis::Steps => c.step_count = parse_value(self, value)?,
            Axis::Lambda => c.lambda = parse_value(self, value)?,
            Axis::Zeta => c.zeta = parse_value(self, value)?,
            Axis::Sc => c.guidance_scale = parse_value(self, value)?,
            Axis::PlanKind => c.plan.kind = PlanKind::from_str(value)?,
            Axis::Accelerate => {
                c.accelerate = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad value {value:?} for axis accelerate"
                        )))
                    }
                }
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub value: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_seconds: f64,
    pub final_residual: Option<f64>,
    /// Data residual after every step.
    pub residuals: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<20} {:>9} {:>8} {:>10} {:>12}\n",
            format!("{:?}", self.axis),
            "psnr",
            "ssim",
            "seconds",
            "residual"
        );
        let opt =
            |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<20} {:>9} {:>8} {:>10.3} {:>12}",
                r.value,
                opt(r.psnr, 2),
                opt(r.ssim, 4),
                r.wall_seconds,
                opt(r.final_residual, 6)
            );
            if let Some(e) = &r.error {
                let _ = write!(out, "  error: {e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs one reconstruction per value with a shared seed. A failing cell is
/// recorded in its row and the sweep moves on.
pub fn ablate_problem(
    cfg: &RunConfig,
    schedule: &DiffusionSchedule,
    problem: &Problem,
    prior: &PriorKind,
    axis: Axis,
    values: &[String],
) -> Result<AblationTable> {
    let base = cfg.solver_config(problem.y.noise_sigma())?;
    let rows = values
        .iter()
        .map(|value| {
            let started = Instant::now();
            let outcome = axis.apply(&base, value).and_then(|solver| {
                let rec = solve(cfg, &solver, schedule, problem, prior)?;
                let quality = match &problem.truth {
                    Some(t) => {
                        let r = metrics::evaluate(&rec.cube, t, cfg.metrics.peak, None)?;
                        (Some(r.mean_psnr), Some(r.mean_ssim))
                    }
                    None => (None, None),
                };
                Ok((rec.trace, quality))
            });
            let wall_seconds = started.elapsed().as_secs_f64();
            match outcome {
                Ok((trace, (psnr, ssim))) => AblationRow {
                    value: value.clone(),
                    psnr,
                    ssim,
                    wall_seconds,
                    final_residual: trace.final_residual(),
                    residuals: trace.steps.iter().map(|s| s.residual).collect(),
                    error: None,
                },
                Err(e) => AblationRow {
                    value: value.clone(),
                    psnr: None,
                    ssim: None,
                    wall_seconds,
                    final_residual: None,
                    residuals: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(AblationTable { axis, rows })
}

pub fn ablate(cfg: &RunConfig, axis: Axis, values: &[String]) -> Result<AblationTable> {
    let schedule = cfg.schedule()?;
    let problem = Problem::load(cfg)?;
    let prior = build_prior(cfg, &schedule, problem.truth.as_ref())?;
    ablate_problem(cfg, &schedule, &problem, &prior, axis, values)
}

/// Text summary of a trace file.
pub fn report(trace_path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(trace_path)?;
    let trace = Trace::from_jsonl(&text)?;
    let mut out = String::new();
    if let Some(h) = &trace.header {
        let _ = writeln!(
            out,
            "method {} accelerate {} value_scale {:.6} plan {}",
            h.method,
            h.accelerate,
            h.value_scale,
            h.plan.map_or("-".to_string(), |p| serde_json::to_string(&p)
                .expect("serializable")
                .replace('"', ""))
        );
    }
    let _ = writeln!(
        out,
        "{:>5} {:>5} {:>12} {:>14} {:>9}",
        "step", "t", "rho", "residual", "psnr"
    );
    for s in &trace.steps {
        let _ = writeln!(
            out,
            "{:>5} {:>5} {:>12.4e} {:>14.6e} {:>9}",
            s.step,
            s.t,
            s.rho,
            s.residual,
            s.psnr.map_or("-".into(), |p| format!("{p:.2}"))
        );
    }
    Ok(out)
}

/// Writes a seeded synthetic scene to `path`.
pub fn synth(path: &Path, height: usize, width: usize, bands: usize, seed: u64) -> Result<()> {
    io::write_cube(&crate::synthetic::scene(height, width, bands, seed)?, path)
}
