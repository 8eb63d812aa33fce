//! Half-quadratic-splitting reconstruction.
//!
//! [`run_diffsci`] interleaves a diffusion reverse process with the closed
//! form data-fidelity step; [`run_pnp_baseline`] is the plain alternating
//! scheme without the diffusion wrapper.
//!
//! The data step divides in measurement space by `diag(Phi Phi^T) + mu`.
//! Detector pixels that no band reaches (zero diagonal) are mapped to zero
//! by the adjoint regardless of the quotient, so the solver skips them;
//! the public [`data_step_closed_form`] instead reports them as degenerate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{BandPlan, PlanKind};
use crate::cassi::CassiOperator;
use crate::cube::{Field, Measurement, Plane, SpectralCube, TriImage};
use crate::error::{Error, Result};
use crate::metrics;
use crate::prior::{PriorRequest, ScorePrior};
use crate::schedule::{gaussian_like, timestep_ladder, DiffusionSchedule, SamplerParams};

const DENOM_FLOOR: f64 = 1e-12;

/// Band-plan selection. Anchor indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub kind: PlanKind,
    /// `None` picks bands `round(21/28 * B)` and `B` (one-based).
    pub anchors: Option<(usize, usize)>,
    pub cutoff_nm: f64,
}

impl Default for PlanSpec {
    fn default() -> Self {
        PlanSpec {
            kind: PlanKind::WavelengthMatched,
            anchors: None,
            cutoff_nm: 500.0,
        }
    }
}

impl PlanSpec {
    pub fn sliding() -> Self {
        PlanSpec {
            kind: PlanKind::Sliding,
            ..Default::default()
        }
    }

    pub fn resolved_anchors(&self, bands: usize) -> (usize, usize) {
        self.anchors.unwrap_or_else(|| {
            let a = ((21.0 / 28.0) * bands as f64).round().max(1.0) as usize;
            (a - 1, bands - 1)
        })
    }

    pub fn build(&self, wavelengths: &[f64]) -> Result<BandPlan> {
        let bands = wavelengths.len();
        match self.kind {
            PlanKind::Sliding => BandPlan::sliding(bands),
            PlanKind::Partitioned => BandPlan::partitioned(bands),
            PlanKind::WavelengthMatched => {
                let (a, b) = self.resolved_anchors(bands);
                BandPlan::wavelength_matched(a, b, self.cutoff_nm, wavelengths)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub zeta: f64,
    /// Step size of the data correction.
    pub guidance_scale: f64,
    pub t_start: usize,
    pub step_count: usize,
    pub seed: u64,
    /// Measurement noise level in data units.
    pub sigma_n: f64,
    pub plan: PlanSpec,
    /// Use the accumulated-residual data step.
    pub accelerate: bool,
    /// Start from the noised adjoint estimate instead of pure noise.
    pub warm_start: bool,
    /// Rescale the problem so the adjoint estimate peaks at 1.
    pub normalize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 15.0,
            zeta: 1.0,
            guidance_scale: 1.0,
            t_start: 600,
            step_count: 100,
            seed: 0,
            sigma_n: 0.0,
            plan: PlanSpec::default(),
            accelerate: true,
            warm_start: false,
            normalize: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda {} must be > 0",
                self.lambda
            )));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "guidance scale {} must be >= 0",
                self.guidance_scale
            )));
        }
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_n {} must be >= 0",
                self.sigma_n
            )));
        }
        self.sampler().validate(schedule)
    }

    pub fn sampler(&self) -> SamplerParams {
        SamplerParams {
            zeta: self.zeta,
            t_start: self.t_start,
            step_count: self.step_count,
            seed: self.seed,
        }
    }
}

/// `lambda * sigma_n^2 / sigma_bar_t^2`.
pub fn rho(cfg: &SolverConfig, schedule: &DiffusionSchedule, t: usize) -> Result<f64> {
    rho_for(cfg.lambda, cfg.sigma_n, schedule, t)
}

fn rho_for(lambda: f64, sigma_n: f64, schedule: &DiffusionSchedule, t: usize) -> Result<f64> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidParameter(format!(
            "rho needs 1 <= t <= T, got {t}"
        )));
    }
    Ok(lambda * sigma_n * sigma_n / schedule.sigma_bar(t).powi(2))
}

/// `(r / (diag + mu))` elementwise, in place.
fn divide_by_diag(r: &mut [f64], diag: &Plane, mu: f64, skip_uncovered: bool) -> Result<()> {
    let mut bad = Vec::new();
    for (i, (v, d)) in r.iter_mut().zip(&diag.data).enumerate() {
        let den = d + mu;
        if den <= DENOM_FLOOR {
            if skip_uncovered && *d == 0.0 {
                *v = 0.0;
                continue;
            }
            bad.push((i / diag.width, i % diag.width));
        } else {
            *v /= den;
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::DegeneratePixels { coords: bad })
    }
}

/// `z + scale * Phi^T [ r / (diag + mu) ]`.
fn corrected(
    op: &CassiOperator,
    diag: &Plane,
    z: &SpectralCube,
    mut r: Vec<f64>,
    mu: f64,
    scale: f64,
    skip_uncovered: bool,
) -> Result<SpectralCube> {
    divide_by_diag(&mut r, diag, mu, skip_uncovered)?;
    let mut back = vec![0.0; z.data().len()];
    op.adjoint_into(&r, &mut back);
    let mut out = z.clone();
    for (o, b) in out.values_mut().iter_mut().zip(&back) {
        *o += scale * b;
    }
    Ok(out)
}

fn residual(op: &CassiOperator, y: &Measurement, x: &SpectralCube) -> Vec<f64> {
    let mut r = vec![0.0; y.data().len()];
    op.apply_into(x.data(), &mut r);
    for (v, yv) in r.iter_mut().zip(y.data()) {
        *v = yv - *v;
    }
    r
}

fn check_pair(op: &CassiOperator, y: &Measurement, z: &SpectralCube) -> Result<()> {
    if (y.height(), y.width()) != (op.height(), op.measurement_width()) {
        return Err(Error::shape(
            format!("measurement {}x{}", op.height(), op.measurement_width()),
            y.shape_string(),
        ));
    }
    if (z.height(), z.width(), z.bands()) != (op.height(), op.width(), op.bands()) {
        return Err(Error::shape(
            format!("cube {}x{}x{}", op.height(), op.width(), op.bands()),
            z.shape_string(),
        ));
    }
    Ok(())
}

/// Exact minimiser of `||y - Phi x||^2 + mu ||x - z||^2`:
/// `z + Phi^T [(y - Phi z) / (diag(Phi Phi^T) + mu)]`.
pub fn data_step_closed_form(
    op: &CassiOperator,
    y: &Measurement,
    z: &SpectralCube,
    mu: f64,
) -> Result<SpectralCube> {
    check_pair(op, y, z)?;
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::InvalidParameter(format!("mu {mu} must be >= 0")));
    }
    let diag = op.diag_phi_phi_t();
    corrected(op, &diag, z, residual(op, y, z), mu, 1.0, false)
}

/// Adjoint estimate `Phi^T (y / diag(Phi Phi^T))`, zero where no band reaches.
pub fn adjoint_initialization(
    op: &CassiOperator,
    y: &Measurement,
    wavelengths: &[f64],
) -> Result<SpectralCube> {
    let mut r = y.data().to_vec();
    let diag = op.diag_phi_phi_t();
    divide_by_diag(&mut r, &diag, 0.0, true)?;
    let y = Measurement::new(y.height(), y.width(), y.shift(), r, 0.0)?;
    op.adjoint(&y, wavelengths)
}

/// One trace entry per sampler step (or baseline iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub rho: f64,
    /// `||y - Phi x0_hat||` in data units.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub method: String,
    pub accelerate: bool,
    /// How the accumulated residual is formed on the first step.
    pub first_step_rule: String,
    pub value_scale: f64,
    pub plan: Option<PlanKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub steps: Vec<StepRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
}

impl Trace {
    /// One JSON object per line: the header first, then each step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(
                &serde_json::to_string(&TraceLine::Header(h.clone())).expect("serializable"),
            );
            out.push('\n');
        }
        for s in &self.steps {
            out.push_str(
                &serde_json::to_string(&TraceLine::Step(s.clone())).expect("serializable"),
            );
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut trace = Trace::default();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            match serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("trace line {}: {e}", n + 1)))?
            {
                TraceLine::Header(h) => trace.header = Some(h),
                TraceLine::Step(s) => trace.steps.push(s),
            }
        }
        Ok(trace)
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.steps.last().map(|s| s.residual)
    }
}

const FIRST_STEP_RULE: &str = "y1 := y on the first step, then y1 += y - Phi x_tilde before use";

/// Mutable state of one sampler run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: SpectralCube,
    /// Accumulated residual.
    pub y1: Measurement,
    pub t: usize,
    /// Data steps taken so far.
    pub steps_taken: usize,
    pub trace: Vec<StepRecord>,
}

impl SolverState {
    pub fn new(op: &CassiOperator, x: SpectralCube, t: usize) -> Self {
        SolverState {
            x,
            y1: op.zero_measurement(),
            t,
            steps_taken: 0,
            trace: Vec::new(),
        }
    }
}

/// Accumulated-residual data step.
///
/// Updates `y1 <- y1 + (y - Phi x_tilde)` and returns
/// `x_tilde + sc * Phi^T [(y1 - Phi x_tilde) / (diag + rho)]`. On the first
/// step `y1` is set to `y`, so the result equals the plain closed form.
pub fn data_step_accelerated(
    op: &CassiOperator,
    y: &Measurement,
    state: &mut SolverState,
    x_tilde: &SpectralCube,
    rho: f64,
    sc: f64,
) -> Result<SpectralCube> {
    check_pair(op, y, x_tilde)?;
    let diag = op.diag_phi_phi_t();
    accelerated_step(op, &diag, y, state, x_tilde, rho, sc, false)
}

#[allow(clippy::too_many_arguments)]
fn accelerated_step(
    op: &CassiOperator,
    diag: &Plane,
    y: &Measurement,
    state: &mut SolverState,
    x_tilde: &SpectralCube,
    rho: f64,
    sc: f64,
    skip_uncovered: bool,
) -> Result<SpectralCube> {
    let mut projected = vec![0.0; y.data().len()];
    op.apply_into(x_tilde.data(), &mut projected);
    if state.steps_taken == 0 {
        state.y1.data_mut().copy_from_slice(y.data());
    } else {
        for ((acc, yv), p) in state.y1.data_mut().iter_mut().zip(y.data()).zip(&projected) {
            *acc += yv - p;
        }
    }
    state.steps_taken += 1;
    let r: Vec<f64> = state
        .y1
        .data()
        .iter()
        .zip(&projected)
        .map(|(a, p)| a - p)
        .collect();
    corrected(op, diag, x_tilde, r, rho, sc, skip_uncovered)
}

/// Output of a reconstruction run, in data units.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub cube: SpectralCube,
    pub trace: Trace,
}

fn normalization(
    op: &CassiOperator,
    y: &Measurement,
    wavelengths: &[f64],
    enabled: bool,
) -> Result<f64> {
    if !enabled {
        return Ok(1.0);
    }
    let init = adjoint_initialization(op, y, wavelengths)?;
    let peak = init
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if peak.is_finite() && peak > 0.0 {
        peak
    } else {
        1.0
    })
}

fn scaled_measurement(y: &Measurement, scale: f64, sigma_n: f64) -> Result<Measurement> {
    Measurement::new(
        y.height(),
        y.width(),
        y.shift(),
        y.data().iter().map(|v| v / scale).collect(),
        sigma_n / scale,
    )
}

fn wrap_prior_error(e: Error, t: usize, band: usize) -> Error {
    match e {
        Error::Prior { .. } => e,
        other => Error::Prior {
            t,
            band: Some(band),
            message: other.to_string(),
        },
    }
}

/// Per-band clean estimates recombined into a cube.
fn predict_clean_cube(
    schedule: &DiffusionSchedule,
    plan: &BandPlan,
    prior: &dyn ScorePrior,
    x: &SpectralCube,
    t: usize,
    image_scale: f64,
    value_scale: f64,
) -> Result<SpectralCube> {
    let outputs = (0..plan.bands())
        .into_par_iter()
        .map(|b| {
            let mut img = plan.extract(x, b)?;
            if image_scale != 1.0 {
                img.values_mut().iter_mut().for_each(|v| *v *= image_scale);
            }
            let tr = plan.triple(b)?;
            let req = PriorRequest::new(schedule, &img, t)?
                .with_bands(tr.sources)
                .with_value_scale(value_scale);
            let score = prior.score(&req).map_err(|e| wrap_prior_error(e, t, b))?;
            if !score.same_shape(&img) {
                return Err(wrap_prior_error(
                    Error::shape(img.shape_string(), score.shape_string()),
                    t,
                    b,
                ));
            }
            schedule.predict_clean(&img, &score, t)
        })
        .collect::<Result<Vec<TriImage>>>()?;
    plan.recombine(&outputs, x.wavelengths())
}

fn check_inputs(op: &CassiOperator, y: &Measurement, wavelengths: &[f64]) -> Result<()> {
    if wavelengths.len() != op.bands() {
        return Err(Error::shape(
            format!("{} wavelengths", op.bands()),
            wavelengths.len(),
        ));
    }
    if (y.height(), y.width()) != (op.height(), op.measurement_width()) {
        return Err(Error::shape(
            format!("measurement {}x{}", op.height(), op.measurement_width()),
            y.shape_string(),
        ));
    }
    Ok(())
}

/// Diffusion-prior reconstruction.
///
/// Starting from Gaussian noise at `t_start`, each ladder step predicts a
/// clean cube band by band through the prior, applies the data step
/// (accumulated-residual form when `cfg.accelerate`), derives the implied
/// noise from the current iterate and moves to the next timestep with the
/// zeta-mixed reverse update. The last step lands on `t = 0`, where the
/// iterate equals the final clean estimate.
pub fn run_diffsci(
    cfg: &SolverConfig,
    schedule: &DiffusionSchedule,
    op: &CassiOperator,
    y: &Measurement,
    wavelengths: &[f64],
    prior: &dyn ScorePrior,
    reference: Option<&SpectralCube>,
) -> Result<Reconstruction> {
    cfg.validate(schedule)?;
    check_inputs(op, y, wavelengths)?;
    let plan = cfg.plan.build(wavelengths)?;
    let ladder = timestep_ladder(cfg.t_start, cfg.step_count)?;
    let scale = normalization(op, y, wavelengths, cfg.normalize)?;
    let yn = scaled_measurement(y, scale, cfg.sigma_n)?;
    let diag = op.diag_phi_phi_t();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let template = SpectralCube::new(
        op.height(),
        op.width(),
        op.bands(),
        wavelengths.to_vec(),
        0.0,
    )?;
    let x_init = if cfg.warm_start {
        let init = adjoint_initialization(op, &yn, wavelengths)?;
        let eps = gaussian_like(&init, &mut rng);
        schedule.forward_with_noise(&init, cfg.t_start, &eps)?
    } else {
        gaussian_like(&template, &mut rng)
    };
    let mut state = SolverState::new(op, x_init, cfg.t_start);

    for (step, pair) in ladder.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        state.t = t;
        let rho_t = rho_for(cfg.lambda, yn.noise_sigma(), schedule, t)?;
        let x_tilde = predict_clean_cube(schedule, &plan, prior, &state.x, t, 1.0, scale)?;
        let x0_hat = if cfg.accelerate {
            accelerated_step(
                op,
                &diag,
                &yn,
                &mut state,
                &x_tilde,
                rho_t,
                cfg.guidance_scale,
                true,
            )?
        } else {
            state.steps_taken += 1;
            corrected(
                op,
                &diag,
                &x_tilde,
                residual(op, &yn, &x_tilde),
                rho_t,
                cfg.guidance_scale,
                true,
            )?
        };
        let eps_hat = schedule.implied_noise(&state.x, &x0_hat, t)?;
        let next = schedule.reverse_step(cfg.zeta, &x0_hat, &eps_hat, t, t_next, &mut rng)?;
        if next.first_non_finite().is_some() || x0_hat.first_non_finite().is_some() {
            return Err(Error::NumericalAbort { step, t });
        }
        let resid = residual(op, &yn, &x0_hat);
        let resid_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt() * scale;
        let psnr = reference
            .map(|r| metrics::mean_psnr(&x0_hat.map(|v| v * scale), r, 1.0))
            .transpose()?;
        state.trace.push(StepRecord {
            step,
            t,
            rho: rho_t,
            residual: resid_norm,
            psnr,
        });
        state.x = next;
    }

    let header = TraceHeader {
        method: "diffsci".into(),
        accelerate: cfg.accelerate,
        first_step_rule: FIRST_STEP_RULE.into(),
        value_scale: scale,
        plan: Some(cfg.plan.kind),
    };
    Ok(Reconstruction {
        cube: state.x.map(|v| v * scale),
        trace: Trace {
            header: Some(header),
            steps: state.trace,
        },
    })
}

/// Penalty weights for the plain alternating baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSchedule {
    Constant(f64),
    PerIteration(Vec<f64>),
    /// `lambda * sigma_n^2 / sigma_bar^2` with a fixed `sigma_bar`.
    FromSigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub iterations: usize,
    pub mu: MuSchedule,
    /// Noise level handed to the denoiser; selects the nearest timestep.
    pub denoise_sigma: f64,
}

impl BaselineConfig {
    fn mu(&self, cfg: &SolverConfig, sigma_n: f64, k: usize) -> Result<f64> {
        let mu = match &self.mu {
            MuSchedule::Constant(m) => *m,
            MuSchedule::PerIteration(v) => *v.get(k).ok_or_else(|| {
                Error::InvalidParameter(format!("mu schedule has no entry for iteration {k}"))
            })?,
            MuSchedule::FromSigma(s) => cfg.lambda * sigma_n * sigma_n / (s * s),
        };
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "baseline mu {mu} must be > 0"
            )));
        }
        Ok(mu)
    }
}

/// Alternates the closed-form data step with a per-band denoise on the
/// sliding plan, starting from the adjoint estimate.
///
/// The denoiser treats its input as `x + sigma_bar * n` and is evaluated at
/// the schedule timestep whose noise level is nearest `denoise_sigma`.
#[allow(clippy::too_many_arguments)]
pub fn run_pnp_baseline(
    cfg: &SolverConfig,
    schedule: &DiffusionSchedule,
    op: &CassiOperator,
    y: &Measurement,
    wavelengths: &[f64],
    prior: &dyn ScorePrior,
    baseline: &BaselineConfig,
    reference: Option<&SpectralCube>,
) -> Result<Reconstruction> {
    check_inputs(op, y, wavelengths)?;
    let plan = BandPlan::sliding(op.bands())?;
    let scale = normalization(op, y, wavelengths, cfg.normalize)?;
    let yn = scaled_measurement(y, scale, cfg.sigma_n)?;
    let diag = op.diag_phi_phi_t();
    let t = schedule.nearest_timestep(baseline.denoise_sigma);
    let vp_scale = schedule.alpha_bar(t).sqrt();

    let mut x = adjoint_initialization(op, &yn, wavelengths)?;
    let mut trace = Vec::with_capacity(baseline.iterations);
    for k in 0..baseline.iterations {
        let mu = baseline.mu(cfg, yn.noise_sigma(), k)?;
        let z = predict_clean_cube(schedule, &plan, prior, &x, t, vp_scale, scale)?;
        x = corrected(op, &diag, &z, residual(op, &yn, &z), mu, 1.0, false)?;
        if x.first_non_finite().is_some() {
            return Err(Error::NumericalAbort { step: k, t });
        }
        let resid = residual(op, &yn, &x);
        let psnr = reference
            .map(|r| metrics::mean_psnr(&x.map(|v| v * scale), r, 1.0))
            .transpose()?;
        trace.push(StepRecord {
            step: k,
            t,
            rho: mu,
            residual: resid.iter().map(|v| v * v).sum::<f64>().sqrt() * scale,
            psnr,
        });
    }
    let header = TraceHeader {
        method: "pnp_baseline".into(),
        accelerate: false,
        first_step_rule: "none".into(),
        value_scale: scale,
        plan: Some(PlanKind::Sliding),
    };
    Ok(Reconstruction {
        cube: x.map(|v| v * scale),
        trace: Trace {
            header: Some(header),
            steps: trace,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cassi::dense;
    use crate::cube::{even_wavelengths, CodedMask};
    use crate::prior::{OracleTruth, PriorKind};
    use rand::Rng;

    fn random_instance(
        seed: u64,
        h: usize,
        w: usize,
        b: usize,
        d: usize,
    ) -> (CassiOperator, SpectralCube, Measurement) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = CodedMask::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let op = CassiOperator::new(mask, d, b).unwrap();
        let z = SpectralCube::from_vec(
            h,
            w,
            b,
            even_wavelengths(b, 450.0, 720.0),
            (0..h * w * b).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut y = op.zero_measurement();
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random::<f64>() * 2.0);
        (op, z, y)
    }

    #[test]
    fn scalar_proximal_form() {
        let op = CassiOperator::new(CodedMask::ones(2, 3).unwrap(), 0, 1).unwrap();
        let z = SpectralCube::from_vec(2, 3, 1, vec![500.0], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = Measurement::new(2, 3, 0, vec![6., 5., 4., 3., 2., 1.], 0.0).unwrap();
        let mu = 0.5;
        let x = data_step_closed_form(&op, &y, &z, mu).unwrap();
        for i in 0..6 {
            assert!((x.data()[i] - (y.data()[i] + mu * z.data()[i]) / (1.0 + mu)).abs() < 1e-14);
        }
    }

    #[test]
    fn large_mu_keeps_z() {
        let (op, z, y) = random_instance(1, 5, 5, 3, 1);
        let x = data_step_closed_form(&op, &y, &z, 1e12).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn degenerate_pixels_reported() {
        let mask = CodedMask::new(1, 2, vec![1.0, 0.0]).unwrap();
        let op = CassiOperator::new(mask, 1, 2).unwrap();
        let z = SpectralCube::new(1, 2, 2, vec![1.0, 2.0], 0.0).unwrap();
        let y = Measurement::new(1, 3, 1, vec![1.0, 1.0, 1.0], 0.0).unwrap();
        match data_step_closed_form(&op, &y, &z, 0.0) {
            Err(Error::DegeneratePixels { coords }) => assert_eq!(coords, vec![(0, 2)]),
            other => panic!("{other:?}"),
        }
        assert!(data_step_closed_form(&op, &y, &z, 0.1).is_ok());
    }

    #[test]
    fn matches_dense_normal_equations() {
        for seed in 0..3 {
            let (op, z, y) = random_instance(seed, 8, 8, 4, 1);
            let mu = 0.3;
            let x = data_step_closed_form(&op, &y, &z, mu).unwrap();
            let (rows, cols, m) = dense::assemble(&op);
            let a = nalgebra::DMatrix::from_row_slice(rows, cols, &m);
            let lhs = a.transpose() * &a + nalgebra::DMatrix::identity(cols, cols) * mu;
            let rhs = a.transpose() * nalgebra::DVector::from_column_slice(y.data())
                + nalgebra::DVector::from_column_slice(z.data()) * mu;
            let sol = lhs.lu().solve(&rhs).unwrap();
            let xv = nalgebra::DVector::from_column_slice(x.data());
            assert!((&xv - &sol).norm() <= 1e-6 * sol.norm());
        }
    }

    #[test]
    fn normal_equation_residual() {
        let (op, z, y) = random_instance(9, 6, 7, 3, 2);
        let mu = 0.7;
        let x = data_step_closed_form(&op, &y, &z, mu).unwrap();
        let ax = op.apply(&x).unwrap();
        let atax = op.adjoint(&ax, x.wavelengths()).unwrap();
        let aty = op.adjoint(&y, x.wavelengths()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.data().len() {
            let l = atax.data()[i] + mu * x.data()[i];
            let r = aty.data()[i] + mu * z.data()[i];
            num += (l - r).powi(2);
            den += r * r;
        }
        assert!((num / den).sqrt() <= 1e-8);
    }

    #[test]
    fn first_accelerated_step_matches_closed_form() {
        let (op, z, y) = random_instance(3, 6, 6, 3, 1);
        let mut state = SolverState::new(&op, z.clone(), 10);
        let acc = data_step_accelerated(&op, &y, &mut state, &z, 0.4, 1.0).unwrap();
        let plain = data_step_closed_form(&op, &y, &z, 0.4).unwrap();
        for (a, b) in acc.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(state.y1.data(), y.data());
        assert_eq!(state.steps_taken, 1);
    }

    #[test]
    fn accelerated_step_consistent_point() {
        let (op, z, _) = random_instance(4, 6, 6, 3, 1);
        let y = op.apply(&z).unwrap();
        let mut state = SolverState::new(&op, z.clone(), 10);
        state.y1 = y.clone();
        state.steps_taken = 3;
        let out = data_step_accelerated(&op, &y, &mut state, &z, 0.2, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(state.y1, y);
    }

    #[test]
    fn accelerated_step_accumulates() {
        let (op, z, y) = random_instance(5, 4, 4, 2, 1);
        let mut state = SolverState::new(&op, z.clone(), 10);
        state.steps_taken = 1;
        let y1_before = y.map_clone();
        state.y1 = y1_before.clone();
        data_step_accelerated(&op, &y, &mut state, &z, 0.2, 1.0).unwrap();
        let pz = op.apply(&z).unwrap();
        for i in 0..y.data().len() {
            let expect = y1_before.data()[i] + y.data()[i] - pz.data()[i];
            assert!((state.y1.data()[i] - expect).abs() < 1e-14);
        }
    }

    trait MapClone {
        fn map_clone(&self) -> Self;
    }
    impl MapClone for Measurement {
        fn map_clone(&self) -> Self {
            let mut m = self.clone();
            m.data_mut().iter_mut().for_each(|v| *v *= 0.5);
            m
        }
    }

    #[test]
    fn rho_values() {
        let s = DiffusionSchedule::default();
        let cfg = SolverConfig {
            lambda: 15.0,
            sigma_n: 0.05,
            ..Default::default()
        };
        let ab = s.alpha_bar(600);
        let expect = 15.0 * 0.05 * 0.05 * ab / (1.0 - ab);
        assert!((rho(&cfg, &s, 600).unwrap() - expect).abs() <= 1e-12 * expect);
        let zero = SolverConfig {
            sigma_n: 0.0,
            ..cfg.clone()
        };
        assert_eq!(rho(&zero, &s, 600).unwrap(), 0.0);
        assert!(rho(&cfg, &s, 0).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let t = Trace {
            header: Some(TraceHeader {
                method: "diffsci".into(),
                accelerate: true,
                first_step_rule: FIRST_STEP_RULE.into(),
                value_scale: 0.75,
                plan: Some(PlanKind::Sliding),
            }),
            steps: vec![
                StepRecord {
                    step: 0,
                    t: 600,
                    rho: 0.1,
                    residual: 2.0,
                    psnr: Some(30.0),
                },
                StepRecord {
                    step: 1,
                    t: 1,
                    rho: 0.5,
                    residual: 1.0,
                    psnr: None,
                },
            ],
        };
        assert_eq!(Trace::from_jsonl(&t.to_jsonl()).unwrap(), t);
        assert!(Trace::from_jsonl("{not json").is_err());
    }

    fn smooth_cube(h: usize, w: usize, b: usize) -> SpectralCube {
        let mut data = Vec::with_capacity(h * w * b);
        for k in 0..b {
            for r in 0..h {
                for c in 0..w {
                    let v = 0.5
                        + 0.3 * ((r as f64 / 5.0 + k as f64 * 0.3).sin() * (c as f64 / 7.0).cos());
                    data.push(v);
                }
            }
        }
        SpectralCube::from_vec(h, w, b, even_wavelengths(b, 450.0, 720.0), data).unwrap()
    }

    #[test]
    fn oracle_baseline_monotone_and_exact() {
        let truth = smooth_cube(16, 16, 4);
        let op = CassiOperator::new(CodedMask::random_binary(16, 16, 1).unwrap(), 2, 4).unwrap();
        let y = op.apply(&truth).unwrap();
        let prior = PriorKind::Oracle(OracleTruth::Cube(truth.clone()));
        let cfg = SolverConfig::default();
        let base = BaselineConfig {
            iterations: 5,
            mu: MuSchedule::Constant(0.1),
            denoise_sigma: 0.1,
        };
        let s = DiffusionSchedule::default();
        let rec = run_pnp_baseline(
            &cfg,
            &s,
            &op,
            &y,
            truth.wavelengths(),
            &prior,
            &base,
            Some(&truth),
        )
        .unwrap();
        assert!(metrics::mean_psnr(&rec.cube, &truth, 1.0).unwrap() >= 60.0);
        let res: Vec<f64> = rec.trace.steps.iter().map(|r| r.residual).collect();
        assert!(res.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn zero_iteration_baseline_is_adjoint_init() {
        let truth = smooth_cube(8, 8, 3);
        let op = CassiOperator::new(CodedMask::random_binary(8, 8, 2).unwrap(), 1, 3).unwrap();
        let y = op.apply(&truth).unwrap();
        let base = BaselineConfig {
            iterations: 0,
            mu: MuSchedule::Constant(1.0),
            denoise_sigma: 0.1,
        };
        let s = DiffusionSchedule::default();
        let rec = run_pnp_baseline(
            &SolverConfig::default(),
            &s,
            &op,
            &y,
            truth.wavelengths(),
            &PriorKind::Identity,
            &base,
            None,
        )
        .unwrap();
        let init = adjoint_initialization(&op, &y, truth.wavelengths()).unwrap();
        for (a, b) in rec.cube.data().iter().zip(init.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(rec.trace.steps.is_empty());
    }

    #[test]
    fn baseline_rejects_zero_mu() {
        let truth = smooth_cube(8, 8, 2);
        let op = CassiOperator::new(CodedMask::ones(8, 8).unwrap(), 1, 2).unwrap();
        let y = op.apply(&truth).unwrap();
        let base = BaselineConfig {
            iterations: 2,
            mu: MuSchedule::FromSigma(0.1),
            denoise_sigma: 0.1,
        };
        let s = DiffusionSchedule::default();
        let err = run_pnp_baseline(
            &SolverConfig::default(),
            &s,
            &op,
            &y,
            truth.wavelengths(),
            &PriorKind::Identity,
            &base,
            None,
        );
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn identity_prior_without_guidance_is_pure_reverse_diffusion() {
        let truth = smooth_cube(8, 8, 3);
        let op = CassiOperator::new(CodedMask::random_binary(8, 8, 3).unwrap(), 1, 3).unwrap();
        let y = op.apply(&truth).unwrap();
        let s = DiffusionSchedule::default();
        let cfg = SolverConfig {
            guidance_scale: 0.0,
            zeta: 0.0,
            step_count: 10,
            t_start: 200,
            plan: PlanSpec::sliding(),
            normalize: false,
            ..Default::default()
        };
        let a = run_diffsci(
            &cfg,
            &s,
            &op,
            &y,
            truth.wavelengths(),
            &PriorKind::Identity,
            None,
        )
        .unwrap();
        let b = run_diffsci(
            &cfg,
            &s,
            &op,
            &y,
            truth.wavelengths(),
            &PriorKind::Identity,
            None,
        )
        .unwrap();
        assert_eq!(a.cube, b.cube);
        assert!(a.cube.first_non_finite().is_none());
        // with a zero score and no data term every step just rescales the start noise
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let start = gaussian_like(&truth.zeros_like(), &mut rng);
        let k = 1.0 / s.alpha_bar(200).sqrt();
        for (o, n) in a.cube.data().iter().zip(start.data()) {
            assert!((o - k * n).abs() < 1e-9 * k.max(1.0));
        }
        assert_eq!(a.trace.steps.len(), 10);
    }

    #[test]
    fn prior_errors_carry_band_and_step() {
        struct Failing;
        impl ScorePrior for Failing {
            fn score(&self, _: &PriorRequest<'_>) -> Result<TriImage> {
                Err(Error::External("down".into()))
            }
        }
        let truth = smooth_cube(6, 6, 2);
        let op = CassiOperator::new(CodedMask::ones(6, 6).unwrap(), 1, 2).unwrap();
        let y = op.apply(&truth).unwrap();
        let s = DiffusionSchedule::default();
        let cfg = SolverConfig {
            step_count: 3,
            t_start: 30,
            plan: PlanSpec::sliding(),
            ..Default::default()
        };
        match run_diffsci(&cfg, &s, &op, &y, truth.wavelengths(), &Failing, None) {
            Err(Error::Prior {
                t: 30,
                band: Some(_),
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_anchors_scale_with_band_count() {
        assert_eq!(PlanSpec::default().resolved_anchors(28), (20, 27));
        assert_eq!(PlanSpec::default().resolved_anchors(4), (2, 3));
        assert_eq!(PlanSpec::default().resolved_anchors(1), (0, 0));
    }
}
