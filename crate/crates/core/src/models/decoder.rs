use crate::codec::color::{ycbcr_to_rgb_matrix, YCBCR_OFFSET};
use crate::codec::dct::{basis, LEVEL_SHIFT};
use crate::codec::{entropy_encode, quant, DctImage, JpegBitstream};
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};

/// `[h, w, 3]` quantization steps laid out like a coefficient plane.
pub fn coefficient_divisors(height: usize, width: usize, quality: u32) -> Result<Tensor> {
    let tables = quant::tables_for_quality(quality)?;
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                data.push(tables[usize::from(c > 0)].get((y % 8) * 8 + x % 8));
            }
        }
    }
    Tensor::new([height, width, 3], data)
}

/// Constant locally connected blockwise IDCT (plus the level shift) for one
/// channel of a `height x width` plane.
#[derive(Debug, Clone)]
pub struct IdctLayer {
    weight: Tensor,
    bias: Tensor,
}

impl IdctLayer {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if !height.is_multiple_of(8) || !width.is_multiple_of(8) || height == 0 || width == 0 {
            return Err(Error::dim(format!("{width}x{height} is not block aligned")));
        }
        let mut w = [0.0; 64 * 64];
        for u in 0..8 {
            for v in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        w[(u * 8 + v) * 64 + y * 8 + x] = basis(u, v, y, x);
                    }
                }
            }
        }
        let (bh, bw) = (height / 8, width / 8);
        Ok(IdctLayer {
            weight: Tensor::new([bh, bw, 64, 64], w.repeat(bh * bw))?,
            bias: Tensor::full([bh, bw, 64], LEVEL_SHIFT),
        })
    }

    /// `[n, h, w, 1]` coefficients to `[n, h, w, 1]` samples.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        tape.locally_connected(x, 8, w, Some(b))
    }
}

/// Per-pixel YCbCr -> RGB as a constant 1x1 locally connected layer:
/// `(weight [h, w, 3, 3], bias [h, w, 3])`.
pub fn inverse_colour_layer(height: usize, width: usize) -> (Tensor, Tensor) {
    let m = ycbcr_to_rgb_matrix();
    let mut w = [0.0; 9];
    let mut b = [0.0; 3];
    for out in 0..3 {
        for k in 0..3 {
            w[k * 3 + out] = m[out][k];
            b[out] -= m[out][k] * YCBCR_OFFSET[k];
        }
    }
    let n = height * width;
    (
        Tensor::new([height, width, 3, 3], w.repeat(n)).unwrap(),
        Tensor::new([height, width, 3], b.repeat(n)).unwrap(),
    )
}

/// Parameter-free decoder: dequantize -> blockwise IDCT -> YCbCr to RGB ->
/// clip to `[0, 255]`. Differentiable except where the clip saturates.
#[derive(Debug, Clone)]
pub struct DecoderH {
    steps: Tensor,
    idct: IdctLayer,
    colour: (Tensor, Tensor),
}

impl DecoderH {
    pub fn new(height: usize, width: usize, quality: u32) -> Result<Self> {
        let idct = IdctLayer::new(height, width)?;
        Ok(DecoderH {
            steps: coefficient_divisors(height, width, quality)?,
            idct,
            colour: inverse_colour_layer(height, width),
        })
    }

    /// Quantization steps this decoder multiplies by.
    pub fn steps(&self) -> &Tensor {
        &self.steps
    }

    /// `[n, h, w, 3]` quantized coefficients to RGB.
    pub fn forward(&self, tape: &mut Tape, quantized: Var) -> Result<Var> {
        let deq = tape.mul_const(quantized, &self.steps)?;
        self.decode_dequantized(tape, deq)
    }

    /// Same as [`DecoderH::forward`] minus the dequantization.
    pub fn decode_dequantized(&self, tape: &mut Tape, coeffs: Var) -> Result<Var> {
        let mut planes = Vec::with_capacity(3);
        for c in 0..3 {
            let ch = tape.slice_last(coeffs, c, 1)?;
            planes.push(self.idct.forward(tape, ch)?);
        }
        let ycc = tape.concat_last(&planes)?;
        let w = tape.constant(self.colour.0.clone());
        let b = tape.constant(self.colour.1.clone());
        let rgb = tape.locally_connected(ycc, 1, w, Some(b))?;
        tape.clip(rgb, 0.0, 255.0)
    }
}

/// Rounds one generated `[h, w, 3]` (or `[1, h, w, 3]`) coefficient tensor
/// and entropy codes it. `width`/`height` may crop the padded planes.
pub fn serialize_generated(
    quantized: &Tensor,
    width: usize,
    height: usize,
    quality: u32,
) -> Result<JpegBitstream> {
    let (h, w) = match quantized.shape() {
        &[h, w, 3] | &[1, h, w, 3] => (h, w),
        s => return Err(Error::dim(format!("cannot serialize coefficient tensor {s:?}"))),
    };
    if h != height.div_ceil(8) * 8 || w != width.div_ceil(8) * 8 {
        return Err(Error::dim(format!(
            "{w}x{h} planes do not cover a {width}x{height} image"
        )));
    }
    let mut planes = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    for (i, px) in quantized.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            planes[c][i] = px[c].round();
        }
    }
    entropy_encode(&DctImage::new(width, height, quality, true, planes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{partial_decompress, DecodeStop};

    #[test]
    fn zero_coefficients_decode_to_gray() {
        let dec = DecoderH::new(16, 16, 50).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 16, 16, 3]));
        let out = dec.forward(&mut tape, x).unwrap();
        assert!(tape.value(out).data().iter().all(|v| (v - 128.0).abs() < 1e-9));
    }

    #[test]
    fn serialize_round_trip() {
        let data: Vec<f64> = (0..16 * 8 * 3).map(|i| ((i * 7) % 11) as f64 - 5.2).collect();
        let t = Tensor::new([8, 16, 3], data).unwrap();
        let s = serialize_generated(&t, 16, 8, 75).unwrap();
        assert_eq!(s.as_bytes(), serialize_generated(&t, 16, 8, 75).unwrap().as_bytes());
        let back = partial_decompress(&s, DecodeStop::Quantized).unwrap();
        for (i, px) in t.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                assert_eq!(back.plane(c)[i], px[c].round());
            }
        }
    }

    #[test]
    fn zero_input_is_a_short_stream() {
        let s = serialize_generated(&Tensor::zeros([16, 16, 3]), 16, 16, 50).unwrap();
        // Header, three length prefixes, then 4 blocks of (DC 0, EOB): 6 bits
        // each for luma, 4 bits each for chroma.
        assert_eq!(s.len(), 15 + 12 + 3 + 2 + 2);
    }
}
