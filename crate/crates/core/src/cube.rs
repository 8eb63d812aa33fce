//! Dense array types for spectral cubes, coded masks, snapshot measurements
//! and three-channel images.
//!
//! Every type stores `f64` values in a flat vector. Cubes are band-major:
//! the element at `(row, col, band)` lives at `band * H * W + row * W + col`,
//! so a band is one contiguous slice. Band indices are zero-based.

use crate::error::{Error, Result};

/// Element access shared by the array types the sampler operates on.
pub trait Field {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    /// Shape as a short human-readable string, used in error messages.
    fn shape_string(&self) -> String;
    fn same_shape(&self, other: &Self) -> bool;

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.values().iter().position(|v| !v.is_finite())
    }
}

fn check_finite(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(
            format!("{what} of {expected} values"),
            format!("{found} values"),
        ))
    }
}

/// A single `H x W` image plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn filled(height: usize, width: usize, fill: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len("plane", height * width, data.len())?;
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Hyperspectral cube with per-band wavelength metadata in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<f64>,
}

fn check_wavelengths(wavelengths: &[f64]) -> Result<()> {
    for (i, w) in wavelengths.iter().enumerate() {
        if !w.is_finite() || (i > 0 && *w <= wavelengths[i - 1]) {
            return Err(Error::Wavelength { index: i });
        }
    }
    Ok(())
}

impl SpectralCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        wavelengths: Vec<f64>,
        fill: f64,
    ) -> Result<Self> {
        Self::from_vec(
            height,
            width,
            bands,
            wavelengths,
            vec![fill; height * width * bands],
        )
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        bands: usize,
        wavelengths: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidDimensions(format!(
                "cube {height}x{width}x{bands} has an empty axis"
            )));
        }
        check_len("wavelength list", bands, wavelengths.len())?;
        check_wavelengths(&wavelengths)?;
        check_len("cube", height * width * bands, data.len())?;
        check_finite("cube", &data)?;
        Ok(SpectralCube {
            height,
            width,
            bands,
            wavelengths,
            data,
        })
    }

    /// Zero cube with the same shape and wavelengths as `self`.
    pub fn zeros_like(&self) -> Self {
        SpectralCube {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        band * self.height * self.width + row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[self.index(row, col, band)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: f64) {
        let i = self.index(row, col, band);
        self.data[i] = value;
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[band * n..(band + 1) * n]
    }

    /// Copy of one band as a plane.
    pub fn slice_band(&self, band: usize) -> Result<Plane> {
        if band >= self.bands {
            return Err(Error::OutOfRange {
                what: "band",
                index: band,
                len: self.bands,
            });
        }
        Ok(Plane {
            height: self.height,
            width: self.width,
            data: self.band(band).to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SpectralCube {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

impl Field for SpectralCube {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn shape_string(&self) -> String {
        format!("cube {}x{}x{}", self.height, self.width, self.bands)
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.height, self.width, self.bands) == (other.height, other.width, other.bands)
    }
}

/// Evenly spaced wavelengths over `[start, end]` nm; a single band sits at `start`.
pub fn even_wavelengths(bands: usize, start: f64, end: f64) -> Vec<f64> {
    if bands == 1 {
        return vec![start];
    }
    let step = (end - start) / (bands - 1) as f64;
    (0..bands).map(|i| start + step * i as f64).collect()
}

/// Transmission pattern of the coded aperture, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CodedMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "mask {height}x{width} has an empty axis"
            )));
        }
        check_len("mask", height * width, values.len())?;
        check_finite("mask", &values)?;
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "mask value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(CodedMask {
            height,
            width,
            values,
        })
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1.0; height * width])
    }

    /// I.i.d. Bernoulli(0.5) pattern in `{0, 1}`.
    pub fn random_binary(height: usize, width: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..height * width)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// A 2-D snapshot `H x W'` with `W' = W + d (B - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    height: usize,
    width: usize,
    shift: usize,
    data: Vec<f64>,
    noise_sigma: f64,
}

impl Measurement {
    pub fn new(
        height: usize,
        width: usize,
        shift: usize,
        data: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "measurement {height}x{width} has an empty axis"
            )));
        }
        check_len("measurement", height * width, data.len())?;
        check_finite("measurement", &data)?;
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma {noise_sigma} must be finite and >= 0"
            )));
        }
        Ok(Measurement {
            height,
            width,
            shift,
            data,
            noise_sigma,
        })
    }

    pub(crate) fn zeros(height: usize, width: usize, shift: usize) -> Self {
        Measurement {
            height,
            width,
            shift,
            data: vec![0.0; height * width],
            noise_sigma: 0.0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sheared width `W'`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

impl Field for Measurement {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn shape_string(&self) -> String {
        format!(
            "measurement {}x{} (d={})",
            self.height, self.width, self.shift
        )
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.height, self.width) == (other.height, other.width)
    }
}

/// Three-channel image, channel-major (`channel * H * W + row * W + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct TriImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TriImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        TriImage {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len("three-channel image", 3 * height * width, data.len())?;
        check_finite("three-channel image", &data)?;
        Ok(TriImage {
            height,
            width,
            data,
        })
    }

    /// Stacks three equally sized planes in the given channel order.
    pub fn assemble(p1: &Plane, p2: &Plane, p3: &Plane) -> Result<Self> {
        for p in [p2, p3] {
            if (p.height, p.width) != (p1.height, p1.width) {
                return Err(Error::shape(
                    format!("plane {}x{}", p1.height, p1.width),
                    format!("plane {}x{}", p.height, p.width),
                ));
            }
        }
        Self::assemble_slices(p1.height, p1.width, [&p1.data, &p2.data, &p3.data])
    }

    pub(crate) fn assemble_slices(
        height: usize,
        width: usize,
        channels: [&[f64]; 3],
    ) -> Result<Self> {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for c in channels {
            check_len("channel", n, c.len())?;
            data.extend_from_slice(c);
        }
        Ok(TriImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }
}

impl Field for TriImage {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn shape_string(&self) -> String {
        format!("image {}x{}x3", self.height, self.width)
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.height, self.width) == (other.height, other.width)
    }
}
