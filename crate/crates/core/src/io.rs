//! Binary artifact files.
//!
//! All three formats start with a four-byte magic and a little-endian `u32`
//! version, followed by `u32` dimensions and `f32` little-endian values.
//!
//! | file | header after version | payload |
//! |------|----------------------|---------|
//! | cube `MSIC` | `H, W, B`, then `B` wavelengths | `H*W*B`, band-major |
//! | mask `MASK` | `H, W` | `H*W` |
//! | measurement `MEAS` | `H, W', d`, `sigma_n` | `H*W'` |

use std::fs;
use std::path::Path;

use crate::cube::{CodedMask, Measurement, SpectralCube};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"MSIC";
pub const MASK_MAGIC: &[u8; 4] = b"MASK";
pub const MEAS_MAGIC: &[u8; 4] = b"MEAS";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(Error::Truncated {
                expected: 8,
                actual: buf.len() as u64,
            });
        }
        if &buf[..4] != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&buf[..4])
            )));
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn need(&self, bytes: u64) -> Result<()> {
        let expected = self.pos as u64 + bytes;
        if (self.buf.len() as u64) < expected {
            return Err(Error::Truncated {
                expected,
                actual: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    fn take4(&mut self) -> Result<[u8; 4]> {
        self.need(4)?;
        let b = self.buf[self.pos..self.pos + 4]
            .try_into()
            .expect("four bytes");
        self.pos += 4;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take4().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take4().map(f32::from_le_bytes)
    }

    /// `count` values; the whole payload is length-checked up front so a
    /// short file reports the full expected size.
    fn f32s(&mut self, count: u64) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        self.need(bytes)?;
        let out = self.buf[self.pos..self.pos + bytes as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        self.pos += bytes as usize;
        Ok(out)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn product(dims: &[u32]) -> Result<u64> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&n| n <= (usize::MAX / 8) as u64)
        .ok_or_else(|| Error::Format(format!("dimension overflow in {dims:?}")))
}

fn header(magic: &[u8; 4], dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_cube(cube: &SpectralCube) -> Result<Vec<u8>> {
    let mut out = header(CUBE_MAGIC, &[cube.height(), cube.width(), cube.bands()])?;
    push_f32s(&mut out, cube.wavelengths());
    push_f32s(&mut out, cube.data());
    Ok(out)
}

pub fn decode_cube(buf: &[u8]) -> Result<SpectralCube> {
    let mut r = Reader::open(buf, CUBE_MAGIC)?;
    let (h, w, b) = (r.u32()?, r.u32()?, r.u32()?);
    let n = product(&[h, w, b])?;
    let wavelengths = r.f32s(b as u64)?;
    let data = r.f32s(n)?;
    r.finish()?;
    SpectralCube::from_vec(h as usize, w as usize, b as usize, wavelengths, data)
}

pub fn encode_mask(mask: &CodedMask) -> Result<Vec<u8>> {
    let mut out = header(MASK_MAGIC, &[mask.height(), mask.width()])?;
    push_f32s(&mut out, mask.values());
    Ok(out)
}

pub fn decode_mask(buf: &[u8]) -> Result<CodedMask> {
    let mut r = Reader::open(buf, MASK_MAGIC)?;
    let (h, w) = (r.u32()?, r.u32()?);
    let data = r.f32s(product(&[h, w])?)?;
    r.finish()?;
    CodedMask::new(h as usize, w as usize, data)
}

pub fn encode_measurement(y: &Measurement) -> Result<Vec<u8>> {
    let mut out = header(MEAS_MAGIC, &[y.height(), y.width(), y.shift()])?;
    out.extend_from_slice(&(y.noise_sigma() as f32).to_le_bytes());
    push_f32s(&mut out, y.data());
    Ok(out)
}

pub fn decode_measurement(buf: &[u8]) -> Result<Measurement> {
    let mut r = Reader::open(buf, MEAS_MAGIC)?;
    let (h, w, d) = (r.u32()?, r.u32()?, r.u32()?);
    let sigma = r.f32()? as f64;
    let data = r.f32s(product(&[h, w])?)?;
    r.finish()?;
    Measurement::new(h as usize, w as usize, d as usize, data, sigma)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    decode_cube(&read_bytes(path.as_ref())?)
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_cube(cube)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<CodedMask> {
    decode_mask(&read_bytes(path.as_ref())?)
}

pub fn write_mask(mask: &CodedMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask)?)
}

pub fn read_measurement(path: impl AsRef<Path>) -> Result<Measurement> {
    decode_measurement(&read_bytes(path.as_ref())?)
}

pub fn write_measurement(y: &Measurement, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_measurement(y)?)
}

/// Band count implied by a measurement of width `W'` taken through a mask of
/// width `W`. With no dispersion the count cannot be recovered.
pub fn infer_bands(mask_width: usize, y: &Measurement) -> Result<Option<usize>> {
    if y.shift() == 0 {
        if y.width() != mask_width {
            return Err(Error::shape(
                format!("measurement width {mask_width}"),
                y.width(),
            ));
        }
        return Ok(None);
    }
    let extra = y
        .width()
        .checked_sub(mask_width)
        .filter(|e| e % y.shift() == 0)
        .ok_or_else(|| {
            Error::Format(format!(
                "measurement width {} does not fit mask width {} with shift {}",
                y.width(),
                mask_width,
                y.shift()
            ))
        })?;
    Ok(Some(extra / y.shift() + 1))
}
