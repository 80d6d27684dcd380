//! Low-frequency coefficient selection and global min/max scaling of DCT
//! images before they are used as training data.

use std::fmt;
use std::str::FromStr;

use crate::codec::DctImage;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Which of the 64 in-block positions survive masking, row-major.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct CoefficientMask([bool; 64]);

impl Default for CoefficientMask {
    /// Row 0 columns 0-4, row 1 columns 0-2, row 2 column 0.
    fn default() -> Self {
        let mut keep = [false; 64];
        for (row, cols) in [(0, 5), (1, 3), (2, 1)] {
            for col in 0..cols {
                keep[row * 8 + col] = true;
            }
        }
        CoefficientMask(keep)
    }
}

impl CoefficientMask {
    pub fn new(keep: [bool; 64]) -> Self {
        CoefficientMask(keep)
    }

    pub fn keep_all() -> Self {
        CoefficientMask([true; 64])
    }

    pub fn keeps(&self, pos: usize) -> bool {
        self.0[pos]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&k| k).count()
    }

    /// `1.0` for kept positions, `0.0` elsewhere.
    pub fn weights(&self) -> [f64; 64] {
        self.0.map(|k| if k { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for CoefficientMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &k in &self.0 {
            f.write_str(if k { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for CoefficientMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientMask({self})")
    }
}

/// Parses the 64-character `0`/`1` form.
impl FromStr for CoefficientMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 64 {
            return Err(Error::Config(format!(
                "coefficient mask needs 64 characters, got {}",
                s.len()
            )));
        }
        let mut keep = [false; 64];
        for (k, ch) in keep.iter_mut().zip(s.chars()) {
            *k = match ch {
                '1' => true,
                '0' => false,
                other => {
                    return Err(Error::Config(format!("coefficient mask character {other:?}")))
                }
            };
        }
        Ok(CoefficientMask(keep))
    }
}

/// Zeroes every coefficient outside the mask in all three channels. Works on
/// quantized and dequantized images alike.
pub fn apply_coefficient_mask(img: &DctImage, mask: &CoefficientMask) -> DctImage {
    img.map_with_position(|pos, v| if mask.keeps(pos) { v } else { 0.0 })
}

/// Global scalar bounds used to map coefficients onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRange {
    min_value: f64,
    max_value: f64,
}

impl NormalizationRange {
    pub fn new(min_value: f64, max_value: f64) -> Result<Self> {
        if !min_value.is_finite() || !max_value.is_finite() {
            return Err(Error::param("normalization bounds must be finite"));
        }
        if min_value >= max_value {
            return Err(Error::param(format!(
                "degenerate normalization range [{min_value}, {max_value}]"
            )));
        }
        Ok(NormalizationRange {
            min_value,
            max_value,
        })
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.min_value) / (self.max_value - self.min_value) - 1.0
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        (t + 1.0) / 2.0 * (self.max_value - self.min_value) + self.min_value
    }

    /// Scale and shift of `normalize` as `v * scale + shift`.
    pub fn affine(&self) -> (f64, f64) {
        let scale = 2.0 / (self.max_value - self.min_value);
        (scale, -self.min_value * scale - 1.0)
    }
}

/// Minimum and maximum over every coefficient of every channel of every
/// image.
pub fn compute_dataset_range<'a>(
    imgs: impl IntoIterator<Item = &'a DctImage>,
) -> Result<NormalizationRange> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for img in imgs {
        any = true;
        for v in img.planes().iter().flatten() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !any {
        return Err(Error::param("cannot compute a range over zero images"));
    }
    NormalizationRange::new(lo, hi)
}

/// `[H, W, 3]` tensor of normalized coefficients over the padded planes.
pub fn normalize_dct(img: &DctImage, range: &NormalizationRange) -> Tensor {
    let (h, w) = (img.padded_height(), img.padded_width());
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for c in 0..3 {
            data.push(range.normalize(img.plane(c)[i]));
        }
    }
    Tensor::new([h, w, 3], data).expect("plane geometry")
}

/// Exact affine inverse of [`normalize_dct`]. With `requantize`, the
/// coefficients are divided by their quantization steps and rounded so the
/// result can be entropy coded.
pub fn denormalize_dct(
    t: &Tensor,
    range: &NormalizationRange,
    width: usize,
    height: usize,
    quality: u32,
    requantize: bool,
) -> Result<DctImage> {
    let (ph, pw) = (height.div_ceil(8) * 8, width.div_ceil(8) * 8);
    if t.shape() != [ph, pw, 3] {
        return Err(Error::dim(format!(
            "tensor {:?} does not match a padded {pw}x{ph} DCT image",
            t.shape()
        )));
    }
    let mut planes = [vec![0.0; ph * pw], vec![0.0; ph * pw], vec![0.0; ph * pw]];
    for (i, px) in t.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            planes[c][i] = range.denormalize(px[c]);
        }
    }
    let img = DctImage::new(width, height, quality, false, planes)?;
    Ok(if requantize { img.requantized() } else { img })
}
