//! Score-based priors.
//!
//! The sampler consumes a score `s(x_t, t)` for a three-channel image; the
//! clean estimate is derived from it with [`DiffusionSchedule::predict_clean`].
//! Built-in priors are analytic stand-ins for a trained network. The
//! external prior forwards requests to another process over the wire
//! protocol in [`protocol`].

pub mod protocol;

use crate::cube::{Field, SpectralCube, TriImage};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

pub use protocol::ExternalPrior;

/// One score evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PriorRequest<'a> {
    pub image: &'a TriImage,
    pub t: usize,
    pub alpha_bar: f64,
    /// Redundant with `alpha_bar`; carried for priors that index by noise level.
    pub sigma_bar: f64,
    /// Cube bands that produced the three channels, when known.
    pub bands: Option<[usize; 3]>,
    /// Factor mapping image values back to data units.
    pub value_scale: f64,
}

impl<'a> PriorRequest<'a> {
    pub fn new(schedule: &DiffusionSchedule, image: &'a TriImage, t: usize) -> Result<Self> {
        if t == 0 || t > schedule.steps() {
            return Err(Error::InvalidParameter(format!(
                "prior timestep {t} outside 1..={}",
                schedule.steps()
            )));
        }
        Ok(PriorRequest {
            image,
            t,
            alpha_bar: schedule.alpha_bar(t),
            sigma_bar: schedule.sigma_bar(t),
            bands: None,
            value_scale: 1.0,
        })
    }

    pub fn with_bands(mut self, bands: [usize; 3]) -> Self {
        self.bands = Some(bands);
        self
    }

    pub fn with_value_scale(mut self, scale: f64) -> Self {
        self.value_scale = scale;
        self
    }
}

/// Anything that can produce a score for a noisy three-channel image.
///
/// Implementations must be stateless across requests: the sampler may call
/// them for different bands concurrently and in any order.
pub trait ScorePrior: Send + Sync {
    fn score(&self, req: &PriorRequest<'_>) -> Result<TriImage>;
}

/// Clean-image estimate from the prior's score.
pub fn denoise(
    prior: &dyn ScorePrior,
    schedule: &DiffusionSchedule,
    req: &PriorRequest<'_>,
) -> Result<TriImage> {
    let score = prior.score(req)?;
    schedule.predict_clean(req.image, &score, req.t)
}

/// Ground truth held by the oracle prior.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleTruth {
    Image(TriImage),
    /// Whole cube; requests must name their source bands.
    Cube(SpectralCube),
}

#[derive(Debug)]
pub enum PriorKind {
    /// Zero score.
    Identity,
    /// Score pulling toward a 3-tap `[1/4, 1/2, 1/4]` separable blur.
    GaussianShrink {
        strength: f64,
    },
    /// Exact score of the Gaussian-corrupted ground truth.
    Oracle(OracleTruth),
    External(ExternalPrior),
}

impl PriorKind {
    pub fn gaussian_shrink(strength: f64) -> Result<Self> {
        if !(strength > 0.0 && strength.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "shrink strength {strength} must be > 0"
            )));
        }
        Ok(PriorKind::GaussianShrink { strength })
    }
}

/// `x + strength * (K * x - x)` with `K` the separable `[1/4, 1/2, 1/4]`
/// kernel and replicated edges, applied per channel.
pub fn shrink_blur(image: &TriImage, strength: f64) -> TriImage {
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    let mut tmp = vec![0.0; h * w];
    for c in 0..3 {
        let src = image.channel(c);
        for r in 0..h {
            for col in 0..w {
                let l = src[r * w + col.saturating_sub(1)];
                let m = src[r * w + col];
                let rt = src[r * w + (col + 1).min(w - 1)];
                tmp[r * w + col] = 0.25 * l + 0.5 * m + 0.25 * rt;
            }
        }
        let dst = out.channel_mut(c);
        for r in 0..h {
            let up = r.saturating_sub(1);
            let dn = (r + 1).min(h - 1);
            for col in 0..w {
                let k =
                    0.25 * tmp[up * w + col] + 0.5 * tmp[r * w + col] + 0.25 * tmp[dn * w + col];
                let x = src[r * w + col];
                dst[r * w + col] = x + strength * (k - x);
            }
        }
    }
    out
}

fn oracle_image(truth: &OracleTruth, req: &PriorRequest<'_>) -> Result<TriImage> {
    match truth {
        OracleTruth::Image(img) => Ok(img.clone()),
        OracleTruth::Cube(cube) => {
            let [a, b, c] = req.bands.ok_or_else(|| {
                Error::InvalidParameter("cube oracle needs the request's source bands".into())
            })?;
            for i in [a, b, c] {
                if i >= cube.bands() {
                    return Err(Error::OutOfRange {
                        what: "oracle band",
                        index: i,
                        len: cube.bands(),
                    });
                }
            }
            TriImage::assemble_slices(
                cube.height(),
                cube.width(),
                [cube.band(a), cube.band(b), cube.band(c)],
            )
        }
    }
}

impl ScorePrior for PriorKind {
    fn score(&self, req: &PriorRequest<'_>) -> Result<TriImage> {
        let x = req.image;
        let var = 1.0 - req.alpha_bar;
        match self {
            PriorKind::Identity => Ok(TriImage::zeros(x.height(), x.width())),
            PriorKind::GaussianShrink { strength } => {
                let mut s = shrink_blur(x, *strength);
                for (o, v) in s.values_mut().iter_mut().zip(x.values()) {
                    *o = (*o - v) / var;
                }
                Ok(s)
            }
            PriorKind::Oracle(truth) => {
                let truth = oracle_image(truth, req)?;
                x.check_same_shape(&truth)?;
                let a = req.alpha_bar.sqrt() / req.value_scale;
                let mut s = truth;
                for (o, v) in s.values_mut().iter_mut().zip(x.values()) {
                    *o = (a * *o - v) / var;
                }
                Ok(s)
            }
            PriorKind::External(ext) => ext.score(req),
        }
    }
}
