//! Seeded piecewise-smooth test scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{even_wavelengths, SpectralCube};
use crate::error::Result;

/// A scene of soft-edged blobs over a smooth background. Every blob carries
/// its own Gaussian-shaped spectrum, so neighbouring bands are correlated.
/// Values stay within `[0, 1]`.
pub fn scene(height: usize, width: usize, bands: usize, seed: u64) -> Result<SpectralCube> {
    let wavelengths = even_wavelengths(bands, 450.0, 650.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<[f64; 5]> = (0..6)
        .map(|_| {
            [
                rng.random::<f64>() * height as f64,
                rng.random::<f64>() * width as f64,
                (0.12 + 0.2 * rng.random::<f64>()) * height.min(width) as f64,
                450.0 + 200.0 * rng.random::<f64>(),
                30.0 + 60.0 * rng.random::<f64>(),
            ]
        })
        .collect();
    let tilt = rng.random::<f64>() * std::f64::consts::TAU;
    let mut cube = SpectralCube::new(height, width, bands, wavelengths.clone(), 0.0)?;
    for (b, &wl) in wavelengths.iter().enumerate() {
        let band = cube.band_mut(b);
        for r in 0..height {
            for c in 0..width {
                let (u, v) = (r as f64 / height as f64, c as f64 / width as f64);
                let mut val = 0.15 + 0.1 * (tilt + 3.0 * u + 2.0 * v + wl / 120.0).sin();
                for &[br, bc, rad, peak, spread] in &blobs {
                    let d2 = ((r as f64 - br).powi(2) + (c as f64 - bc).powi(2)) / (rad * rad);
                    let spatial = 1.0 / (1.0 + (4.0 * (d2 - 1.0)).exp());
                    let spectral = (-((wl - peak) / spread).powi(2)).exp();
                    val += 0.35 * spatial * spectral;
                }
                band[r * width + c] = val.clamp(0.0, 1.0);
            }
        }
    }
    Ok(cube)
}
