//! Coded-aperture snapshot spectral sensing operator.
//!
//! One 2-D mask modulates every band; band `b` (zero-based) is then sheared
//! by `d * b` columns and all bands are summed onto a detector of width
//! `W' = W + d (B - 1)`. Samples sheared past the detector edge never occur
//! because the detector is exactly wide enough, so the operator is a plain
//! sum of masked, shifted copies.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::cube::{CodedMask, Field, Measurement, Plane, SpectralCube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CassiOperator {
    mask: CodedMask,
    shift: usize,
    bands: usize,
}

impl CassiOperator {
    pub fn new(mask: CodedMask, shift: usize, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidDimensions(
                "operator needs at least one band".into(),
            ));
        }
        Ok(CassiOperator { mask, shift, bands })
    }

    pub fn mask(&self) -> &CodedMask {
        &self.mask
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Detector width `W + d (B - 1)`.
    pub fn measurement_width(&self) -> usize {
        self.width() + self.shift * (self.bands - 1)
    }

    fn check_cube(&self, x: &SpectralCube) -> Result<()> {
        if (x.height(), x.width(), x.bands()) != (self.height(), self.width(), self.bands) {
            return Err(Error::shape(
                format!("cube {}x{}x{}", self.height(), self.width(), self.bands),
                x.shape_string(),
            ));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Measurement) -> Result<()> {
        if (y.height(), y.width()) != (self.height(), self.measurement_width()) {
            return Err(Error::shape(
                format!("measurement {}x{}", self.height(), self.measurement_width()),
                y.shape_string(),
            ));
        }
        Ok(())
    }

    pub(crate) fn zero_measurement(&self) -> Measurement {
        Measurement::zeros(self.height(), self.measurement_width(), self.shift)
    }

    /// Noiseless forward model `y = Phi x`.
    pub fn apply(&self, x: &SpectralCube) -> Result<Measurement> {
        self.check_cube(x)?;
        let mut y = self.zero_measurement();
        self.apply_into(x.data(), y.data_mut());
        Ok(y)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (h, w, wp) = (self.height(), self.width(), self.measurement_width());
        let mask = self.mask.values();
        out.fill(0.0);
        for b in 0..self.bands {
            let off = b * self.shift;
            let band = &x[b * h * w..(b + 1) * h * w];
            for r in 0..h {
                let src = &band[r * w..(r + 1) * w];
                let m = &mask[r * w..(r + 1) * w];
                let dst = &mut out[r * wp + off..r * wp + off + w];
                for ((d, s), m) in dst.iter_mut().zip(src).zip(m) {
                    *d += m * s;
                }
            }
        }
    }

    /// Adjoint `Phi^T y`; the result carries the supplied wavelengths.
    pub fn adjoint(&self, y: &Measurement, wavelengths: &[f64]) -> Result<SpectralCube> {
        self.check_measurement(y)?;
        let mut data = vec![0.0; self.height() * self.width() * self.bands];
        self.adjoint_into(y.data(), &mut data);
        SpectralCube::from_vec(
            self.height(),
            self.width(),
            self.bands,
            wavelengths.to_vec(),
            data,
        )
    }

    pub(crate) fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let (h, w, wp) = (self.height(), self.width(), self.measurement_width());
        let mask = self.mask.values();
        for b in 0..self.bands {
            let off = b * self.shift;
            let band = &mut out[b * h * w..(b + 1) * h * w];
            for r in 0..h {
                let src = &y[r * wp + off..r * wp + off + w];
                let m = &mask[r * w..(r + 1) * w];
                for ((d, s), m) in band[r * w..(r + 1) * w].iter_mut().zip(src).zip(m) {
                    *d = m * s;
                }
            }
        }
    }

    /// Diagonal of `Phi Phi^T`, shaped like the measurement.
    pub fn diag_phi_phi_t(&self) -> Plane {
        let (h, w, wp) = (self.height(), self.width(), self.measurement_width());
        let mask = self.mask.values();
        let mut out = Plane::filled(h, wp, 0.0);
        for b in 0..self.bands {
            let off = b * self.shift;
            for r in 0..h {
                for c in 0..w {
                    let m = mask[r * w + c];
                    out.data[r * wp + off + c] += m * m;
                }
            }
        }
        out
    }

    /// `Phi x` plus i.i.d. Gaussian noise of standard deviation `sigma_n`.
    pub fn simulate(&self, x: &SpectralCube, sigma_n: f64, seed: u64) -> Result<Measurement> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma {sigma_n} must be finite and >= 0"
            )));
        }
        let mut y = self.apply(x)?;
        if sigma_n > 0.0 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for v in y.data_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += sigma_n * g;
            }
        }
        Ok(y.with_noise_sigma(sigma_n))
    }
}

#[cfg(test)]
pub(crate) mod dense {
    //! Explicit matrix assembly of the sensing operator, for tests only.

    use super::*;

    /// Row-major `n x (H W B)` matrix; rows index `(r, c')`, columns index the
    /// band-major cube layout.
    pub fn assemble(op: &CassiOperator) -> (usize, usize, Vec<f64>) {
        let (h, w, b, d) = (op.height(), op.width(), op.bands(), op.shift());
        let wp = w + d * (b - 1);
        let rows = h * wp;
        let cols = h * w * b;
        let mut m = vec![0.0; rows * cols];
        for band in 0..b {
            for r in 0..h {
                for c in 0..w {
                    let row = r * wp + c + d * band;
                    let col = band * h * w + r * w + c;
                    m[row * cols + col] = op.mask().get(r, c);
                }
            }
        }
        (rows, cols, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::even_wavelengths;
    use rand::{Rng, SeedableRng};

    fn random_instance(
        seed: u64,
        h: usize,
        w: usize,
        b: usize,
        d: usize,
    ) -> (CassiOperator, SpectralCube) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mask = CodedMask::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let x = SpectralCube::from_vec(
            h,
            w,
            b,
            even_wavelengths(b, 450.0, 720.0),
            (0..h * w * b).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        (CassiOperator::new(mask, d, b).unwrap(), x)
    }

    #[test]
    fn identity_sensing() {
        let op = CassiOperator::new(CodedMask::ones(2, 3).unwrap(), 0, 1).unwrap();
        let x = SpectralCube::from_vec(2, 3, 1, vec![500.0], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = op.apply(&x).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(op.adjoint(&y, &[500.0]).unwrap(), x);
        assert_eq!(op.diag_phi_phi_t().data, vec![1.0; 6]);
    }

    #[test]
    fn two_band_shift_by_one() {
        let op = CassiOperator::new(CodedMask::ones(1, 1).unwrap(), 1, 2).unwrap();
        let x = SpectralCube::from_vec(1, 1, 2, vec![500.0, 600.0], vec![3.0, 5.0]).unwrap();
        let y = op.apply(&x).unwrap();
        assert_eq!(y.width(), 2);
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn kaist_geometry() {
        let op = CassiOperator::new(CodedMask::ones(4, 256).unwrap(), 2, 28).unwrap();
        assert_eq!(op.measurement_width(), 310);
    }

    #[test]
    fn full_overlap_diag() {
        let op = CassiOperator::new(CodedMask::ones(3, 3).unwrap(), 0, 3).unwrap();
        assert_eq!(op.diag_phi_phi_t().data, vec![3.0; 9]);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let (op, x) = random_instance(1, 3, 4, 3, 2);
        let y = op.zero_measurement();
        let z = op.adjoint(&y, x.wavelengths()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_matrix() {
        let (op, x) = random_instance(7, 4, 4, 3, 2);
        let (rows, cols, m) = dense::assemble(&op);
        let y = op.apply(&x).unwrap();
        for r in 0..rows {
            let expect: f64 = (0..cols).map(|c| m[r * cols + c] * x.data()[c]).sum();
            assert!((y.data()[r] - expect).abs() <= 1e-12);
        }
        let diag = op.diag_phi_phi_t();
        for r in 0..rows {
            let expect: f64 = (0..cols).map(|c| m[r * cols + c].powi(2)).sum();
            assert!((diag.data[r] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_and_linearity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for seed in 0..10 {
            let (op, x) = random_instance(seed, 5, 6, 4, 1);
            let mut y = op.zero_measurement();
            y.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random::<f64>() - 0.5);
            let lhs: f64 = op
                .apply(&x)
                .unwrap()
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| a * b)
                .sum();
            let aty = op.adjoint(&y, x.wavelengths()).unwrap();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));

            let (_, x2) = random_instance(seed + 100, 5, 6, 4, 1);
            let alpha = 1.7;
            let combo = SpectralCube::from_vec(
                5,
                6,
                4,
                x.wavelengths().to_vec(),
                x.data()
                    .iter()
                    .zip(x2.data())
                    .map(|(a, b)| alpha * a + b)
                    .collect(),
            )
            .unwrap();
            let lhs = op.apply(&combo).unwrap();
            let (y1, y2) = (op.apply(&x).unwrap(), op.apply(&x2).unwrap());
            for ((l, a), b) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
                assert!((l - (alpha * a + b)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn diag_bounded_by_band_count() {
        let (op, _) = random_instance(3, 6, 6, 4, 1);
        assert!(op
            .diag_phi_phi_t()
            .data
            .iter()
            .all(|&v| (0.0..=4.0).contains(&v)));
    }

    #[test]
    fn simulate_noise_statistics() {
        let mask = CodedMask::random_binary(256, 256, 5).unwrap();
        let op = CassiOperator::new(mask, 2, 28).unwrap();
        let x = SpectralCube::new(256, 256, 28, even_wavelengths(28, 450.0, 720.0), 0.5).unwrap();
        let clean = op.apply(&x).unwrap();
        assert_eq!(op.simulate(&x, 0.0, 3).unwrap(), clean);

        let y = op.simulate(&x, 0.05, 11).unwrap();
        assert_eq!(y.width(), 310);
        assert_eq!(y.noise_sigma(), 0.05);
        let n = y.data().len() as f64;
        let resid: Vec<f64> = y
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = resid.iter().sum::<f64>() / n;
        let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.045..=0.055).contains(&std), "std {std}");

        assert_eq!(op.simulate(&x, 0.05, 11).unwrap(), y);
    }

    #[test]
    fn dimension_mismatch() {
        let (op, _) = random_instance(1, 3, 3, 2, 1);
        let wrong = SpectralCube::new(3, 4, 2, vec![1.0, 2.0], 0.0).unwrap();
        assert!(matches!(op.apply(&wrong), Err(Error::ShapeMismatch { .. })));
        let y = Measurement::new(3, 3, 1, vec![0.0; 9], 0.0).unwrap();
        assert!(op.adjoint(&y, &[1.0, 2.0]).is_err());
    }
}
