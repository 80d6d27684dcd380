use std::fs;
use std::path::Path;

use crate::codec::dct::Block;
use crate::codec::quant::{self, QuantTable};
use crate::error::{Error, Result};

/// Per-channel planes of 8x8 DCT coefficient blocks.
///
/// Planes cover the image padded to multiples of 8. The coefficient `(u, v)`
/// of block `(by, bx)` sits at plane position `(8*by + u, 8*bx + v)`, so a
/// plane has the same geometry as the spatial image it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DctImage {
    width: usize,
    height: usize,
    quality: u8,
    quantized: bool,
    tables: [QuantTable; 2],
    planes: [Vec<f64>; 3],
}

const MAGIC: &[u8; 4] = b"T2CD";
const VERSION: u8 = 1;

impl DctImage {
    /// `width`/`height` are the original image size; planes must cover the
    /// padded size.
    pub fn new(
        width: usize,
        height: usize,
        quality: u32,
        quantized: bool,
        planes: [Vec<f64>; 3],
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("DCT image dimensions must be positive"));
        }
        let quality = quant::validate_quality(quality)?;
        let n = width.div_ceil(8) * 8 * height.div_ceil(8) * 8;
        for p in &planes {
            if p.len() != n {
                return Err(Error::dim(format!(
                    "DCT plane holds {} values, padded {}x{} image needs {n}",
                    p.len(),
                    width,
                    height
                )));
            }
            if quantized && p.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::param("quantized DCT image holds non-integer coefficients"));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("DCT image holds non-finite coefficients".into()));
            }
        }
        Ok(DctImage {
            width,
            height,
            quality,
            quantized,
            tables: quant::tables_for_quality(quality as u32)?,
            planes,
        })
    }

    pub fn zeros(width: usize, height: usize, quality: u32, quantized: bool) -> Result<Self> {
        let n = width.div_ceil(8) * 8 * height.div_ceil(8) * 8;
        Self::new(width, height, quality, quantized, [vec![0.0; n], vec![0.0; n], vec![0.0; n]])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn padded_width(&self) -> usize {
        self.width.div_ceil(8) * 8
    }

    pub fn padded_height(&self) -> usize {
        self.height.div_ceil(8) * 8
    }

    pub fn blocks_x(&self) -> usize {
        self.padded_width() / 8
    }

    pub fn blocks_y(&self) -> usize {
        self.padded_height() / 8
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    /// Luma table for channel 0, chroma for 1 and 2.
    pub fn table(&self, channel: usize) -> &QuantTable {
        &self.tables[usize::from(channel > 0)]
    }

    pub fn tables(&self) -> &[QuantTable; 2] {
        &self.tables
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        &self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<f64>; 3] {
        &self.planes
    }

    pub fn block(&self, channel: usize, by: usize, bx: usize) -> Block {
        let pw = self.padded_width();
        let p = &self.planes[channel];
        std::array::from_fn(|i| p[(by * 8 + i / 8) * pw + bx * 8 + i % 8])
    }

    pub fn set_block(&mut self, channel: usize, by: usize, bx: usize, block: &Block) {
        let pw = self.padded_width();
        let p = &mut self.planes[channel];
        for (i, v) in block.iter().enumerate() {
            p[(by * 8 + i / 8) * pw + bx * 8 + i % 8] = *v;
        }
    }

    /// Applies `f` to every coefficient with its in-block position
    /// `u * 8 + v`.
    pub fn map_with_position(&self, f: impl Fn(usize, f64) -> f64) -> DctImage {
        let pw = self.padded_width();
        let mut out = self.clone();
        for p in &mut out.planes {
            for (i, v) in p.iter_mut().enumerate() {
                let (y, x) = (i / pw, i % pw);
                *v = f((y % 8) * 8 + x % 8, *v);
            }
        }
        out
    }

    /// Multiplies integer coefficients by their quantization step.
    pub fn dequantized(&self) -> DctImage {
        if !self.quantized {
            return self.clone();
        }
        let pw = self.padded_width();
        let mut out = self.clone();
        out.quantized = false;
        for c in 0..3 {
            let t = *self.table(c);
            for (i, v) in out.planes[c].iter_mut().enumerate() {
                let (y, x) = (i / pw, i % pw);
                *v *= t.get((y % 8) * 8 + x % 8);
            }
        }
        out
    }

    /// Divides by the quantization step and rounds half away from zero.
    pub fn requantized(&self) -> DctImage {
        if self.quantized {
            return self.clone();
        }
        let pw = self.padded_width();
        let mut out = self.clone();
        out.quantized = true;
        for c in 0..3 {
            let t = *self.table(c);
            for (i, v) in out.planes[c].iter_mut().enumerate() {
                let (y, x) = (i / pw, i % pw);
                *v = (*v / t.get((y % 8) * 8 + x % 8)).round();
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.planes.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Serializes as a `T2CD` file: magic, version byte, width and height
    /// (u32 LE), quality byte, quantized flag byte, then three planes as
    /// i16 LE (quantized) or f64 LE (dequantized).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.push(self.quality);
        out.push(u8::from(self.quantized));
        for p in &self.planes {
            for &v in p {
                if self.quantized {
                    if v < i16::MIN as f64 || v > i16::MAX as f64 {
                        return Err(Error::Encode(format!("coefficient {v} does not fit in i16")));
                    }
                    out.extend_from_slice(&(v as i16).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 15 || &bytes[..4] != MAGIC {
            return Err(Error::decode(0, "not a T2CD file"));
        }
        if bytes[4] != VERSION {
            return Err(Error::decode(4, format!("unsupported T2CD version {}", bytes[4])));
        }
        let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let quality = bytes[13] as u32;
        let quantized = match bytes[14] {
            0 => false,
            1 => true,
            f => return Err(Error::decode(14, format!("bad quantized flag {f}"))),
        };
        let n = width.div_ceil(8) * 8 * height.div_ceil(8) * 8;
        let size = if quantized { 2 } else { 8 };
        let body = &bytes[15..];
        if body.len() != 3 * n * size {
            return Err(Error::decode(
                15,
                format!("expected {} plane bytes, found {}", 3 * n * size, body.len()),
            ));
        }
        let mut planes: [Vec<f64>; 3] = Default::default();
        for (c, plane) in planes.iter_mut().enumerate() {
            let raw = &body[c * n * size..(c + 1) * n * size];
            *plane = if quantized {
                raw.chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64)
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            };
        }
        Self::new(width, height, quality, quantized, planes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
