//! Mapping a many-band cube onto three-channel inputs and back.
//!
//! Each band gets a triple of source bands and a designated output channel
//! whose source is the band itself. After the prior runs on every triple,
//! band `i` of the recombined cube is taken from the designated channel of
//! output `i`; overlapping triples are never averaged.

use crate::cube::{SpectralCube, TriImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandTriple {
    pub sources: [usize; 3],
    pub designated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandPlan {
    triples: Vec<BandTriple>,
}

/// Which plan to build, as selected in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Partitioned,
    Sliding,
    WavelengthMatched,
}

impl std::str::FromStr for PlanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partitioned" => Ok(PlanKind::Partitioned),
            "sliding" => Ok(PlanKind::Sliding),
            "wavelength_matched" | "wavelengthMatched" | "wm" => Ok(PlanKind::WavelengthMatched),
            _ => Err(Error::Config(format!("unknown plan kind {s:?}"))),
        }
    }
}

fn sliding_triple(b: usize, i: usize) -> BandTriple {
    BandTriple {
        sources: [i.saturating_sub(1), i, (i + 1).min(b - 1)],
        designated: 1,
    }
}

impl BandPlan {
    /// Validates indices and the designated-channel law.
    pub fn new(bands: usize, triples: Vec<BandTriple>) -> Result<Self> {
        if triples.len() != bands {
            return Err(Error::shape(format!("{bands} triples"), triples.len()));
        }
        for (i, tr) in triples.iter().enumerate() {
            if let Some(&j) = tr.sources.iter().find(|&&j| j >= bands) {
                return Err(Error::OutOfRange {
                    what: "plan band",
                    index: j,
                    len: bands,
                });
            }
            if tr.designated > 2 || tr.sources[tr.designated] != i {
                return Err(Error::InvalidParameter(format!(
                    "triple {i} designates channel {} with source {:?}",
                    tr.designated, tr.sources
                )));
            }
        }
        Ok(BandPlan { triples })
    }

    /// Adjacent bands `(i-1, i, i+1)`, edge bands repeated at the boundaries.
    pub fn sliding(bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidDimensions(
                "plan needs at least one band".into(),
            ));
        }
        Self::new(
            bands,
            (0..bands).map(|i| sliding_triple(bands, i)).collect(),
        )
    }

    /// Bands whose wavelength lies below `cutoff_nm` are paired with the two
    /// anchor bands as `(i, anchor_a, anchor_b)`, designated channel 0; all
    /// other bands use the sliding rule. Anchors are zero-based.
    pub fn wavelength_matched(
        anchor_a: usize,
        anchor_b: usize,
        cutoff_nm: f64,
        wavelengths: &[f64],
    ) -> Result<Self> {
        let bands = wavelengths.len();
        if bands == 0 {
            return Err(Error::InvalidDimensions(
                "plan needs at least one band".into(),
            ));
        }
        for a in [anchor_a, anchor_b] {
            if a >= bands {
                return Err(Error::OutOfRange {
                    what: "anchor band",
                    index: a,
                    len: bands,
                });
            }
        }
        let triples = wavelengths
            .iter()
            .enumerate()
            .map(|(i, &wl)| {
                if wl < cutoff_nm {
                    BandTriple {
                        sources: [i, anchor_a, anchor_b],
                        designated: 0,
                    }
                } else {
                    sliding_triple(bands, i)
                }
            })
            .collect();
        Self::new(bands, triples)
    }

    /// Non-overlapping consecutive groups of three; a short final group
    /// repeats its last band.
    pub fn partitioned(bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidDimensions(
                "plan needs at least one band".into(),
            ));
        }
        let triples = (0..bands)
            .map(|i| {
                let start = i - i % 3;
                let src = |k: usize| (start + k).min(bands - 1);
                BandTriple {
                    sources: [src(0), src(1), src(2)],
                    designated: i % 3,
                }
            })
            .collect();
        Self::new(bands, triples)
    }

    pub fn bands(&self) -> usize {
        self.triples.len()
    }

    pub fn triple(&self, band: usize) -> Result<&BandTriple> {
        self.triples.get(band).ok_or(Error::OutOfRange {
            what: "band",
            index: band,
            len: self.triples.len(),
        })
    }

    pub fn triples(&self) -> &[BandTriple] {
        &self.triples
    }

    /// Three-channel input for `band`.
    pub fn extract(&self, cube: &SpectralCube, band: usize) -> Result<TriImage> {
        if cube.bands() != self.bands() {
            return Err(Error::shape(
                format!("{}-band cube", self.bands()),
                cube.bands(),
            ));
        }
        let [a, b, c] = self.triple(band)?.sources;
        TriImage::assemble_slices(
            cube.height(),
            cube.width(),
            [cube.band(a), cube.band(b), cube.band(c)],
        )
    }

    /// Writes the designated channel of each output back into a cube
    /// with the given wavelengths.
    pub fn recombine(&self, outputs: &[TriImage], wavelengths: &[f64]) -> Result<SpectralCube> {
        if outputs.len() != self.bands() {
            return Err(Error::shape(
                format!("{} outputs", self.bands()),
                outputs.len(),
            ));
        }
        let (h, w) = (outputs[0].height(), outputs[0].width());
        let mut data = Vec::with_capacity(h * w * self.bands());
        for (out, tr) in outputs.iter().zip(&self.triples) {
            if (out.height(), out.width()) != (h, w) {
                return Err(Error::shape(
                    format!("image {h}x{w}x3"),
                    format!("image {}x{}x3", out.height(), out.width()),
                ));
            }
            data.extend_from_slice(out.channel(tr.designated));
        }
        SpectralCube::from_vec(h, w, self.bands(), wavelengths.to_vec(), data)
    }
}
