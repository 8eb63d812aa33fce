//! Reconstruction quality metrics.

use serde::{Deserialize, Serialize};

use crate::cube::{Field, Plane, SpectralCube};
use crate::error::{Error, Result};

/// Reported PSNR when the two inputs are identical.
pub const PSNR_CAP_DB: f64 = 200.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn check_planes(a: &Plane, b: &Plane) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(
            format!("plane {}x{}", a.height, a.width),
            format!("plane {}x{}", b.height, b.width),
        ));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    check_planes(a, b)?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidParameter(format!("peak {peak} must be > 0")));
    }
    Ok(psnr_from_mse(mse(&a.data, &b.data), peak))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted filter, valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|i| k[i] * src[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over every 11x11 window position (Gaussian weights, sigma 1.5),
/// with `C1 = (0.01 peak)^2` and `C2 = (0.03 peak)^2`.
pub fn ssim(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    check_planes(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidParameter(format!("peak {peak} must be > 0")));
    }
    let (h, w) = (a.height, a.width);
    let k = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a.data, h, w, &k);
    let mu_b = filter_valid(&b.data, h, w, &k);
    let aa = filter_valid(&prod(&a.data, &a.data), h, w, &k);
    let bb = filter_valid(&prod(&b.data, &b.data), h, w, &k);
    let ab = filter_valid(&prod(&a.data, &b.data), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Mean intensity per band over `region`.
pub fn spectral_curve(cube: &SpectralCube, region: &Region) -> Result<Vec<f64>> {
    if region.height == 0
        || region.width == 0
        || region.top + region.height > cube.height()
        || region.left + region.width > cube.width()
    {
        return Err(Error::InvalidParameter(format!(
            "region {region:?} outside {}x{}",
            cube.height(),
            cube.width()
        )));
    }
    let n = (region.height * region.width) as f64;
    Ok((0..cube.bands())
        .map(|b| {
            let band = cube.band(b);
            let mut s = 0.0;
            for r in region.top..region.top + region.height {
                s += band
                    [r * cube.width() + region.left..r * cube.width() + region.left + region.width]
                    .iter()
                    .sum::<f64>();
            }
            s / n
        })
        .collect())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between the region-averaged spectra of two cubes.
pub fn spectral_curve_correlation(
    recon: &SpectralCube,
    reference: &SpectralCube,
    region: &Region,
) -> Result<f64> {
    recon.check_same_shape(reference)?;
    pearson(
        &spectral_curve(recon, region)?,
        &spectral_curve(reference, region)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Peak value used for PSNR and SSIM.
    pub peak: f64,
    pub per_band_psnr: Vec<f64>,
    /// Arithmetic mean of the per-band PSNR values, in dB.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_correlation: Option<f64>,
}

/// Per-band PSNR and SSIM plus the optional spectral-curve correlation.
/// Cubes smaller than the 11x11 SSIM window are rejected.
pub fn evaluate(
    recon: &SpectralCube,
    reference: &SpectralCube,
    peak: f64,
    region: Option<Region>,
) -> Result<EvalReport> {
    recon.check_same_shape(reference)?;
    let mut per_band_psnr = Vec::with_capacity(recon.bands());
    let mut ssim_sum = 0.0;
    for b in 0..recon.bands() {
        let (p, q) = (recon.slice_band(b)?, reference.slice_band(b)?);
        per_band_psnr.push(psnr(&p, &q, peak)?);
        ssim_sum += ssim(&p, &q, peak)?;
    }
    let mean_psnr = per_band_psnr.iter().sum::<f64>() / per_band_psnr.len() as f64;
    let spectral_correlation = region
        .map(|r| spectral_curve_correlation(recon, reference, &r))
        .transpose()?;
    Ok(EvalReport {
        peak,
        mean_psnr,
        mean_ssim: ssim_sum / recon.bands() as f64,
        per_band_psnr,
        region,
        spectral_correlation,
    })
}

/// Mean per-band PSNR only; works for any spatial size.
pub fn mean_psnr(recon: &SpectralCube, reference: &SpectralCube, peak: f64) -> Result<f64> {
    recon.check_same_shape(reference)?;
    let mut total = 0.0;
    for b in 0..recon.bands() {
        total += psnr_from_mse(mse(recon.band(b), reference.band(b)), peak);
    }
    Ok(total / recon.bands() as f64)
}
