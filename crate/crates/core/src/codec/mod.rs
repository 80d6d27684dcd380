//! JPEG-style codec with 4:4:4 sampling and a partial decoder that stops at
//! the DCT coefficients.
//!
//! Compression: RGB -> YCbCr -> level-shifted 8x8 DCT -> quantization ->
//! DPCM/RLE/Huffman. Decompression runs the same stages backwards.

pub mod color;
pub mod dct;
pub mod dct_image;
pub mod entropy;
pub mod huffman;
pub mod image;
pub mod quant;

pub use self::color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use self::dct::{fdct_block, idct_block, Block};
pub use self::dct_image::DctImage;
pub use self::entropy::{entropy_decode, entropy_encode, JpegBitstream};
pub use self::image::{RgbImage, YcbcrImage};
pub use self::quant::{dequantize_block, quant_table_for_quality, quantize_block, ChannelKind, QuantTable};

use crate::error::Result;

/// Where [`partial_decompress`] stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStop {
    /// Integer coefficients straight out of entropy decoding.
    Quantized,
    /// Coefficients multiplied back by their quantization steps.
    Dequantized,
}

/// Colour transform, blockwise DCT and quantization; the encoder state that
/// gets entropy coded.
pub fn encode_to_dct(img: &RgbImage, quality: u32) -> Result<DctImage> {
    let padded = img.pad_to_blocks();
    let ycc = rgb_to_ycbcr(&padded);
    let mut out = DctImage::zeros(img.width(), img.height(), quality, true)?;
    let pw = padded.width();
    for c in 0..3 {
        let table = *out.table(c);
        for by in 0..out.blocks_y() {
            for bx in 0..out.blocks_x() {
                let spatial: Block =
                    std::array::from_fn(|i| ycc.planes[c][(by * 8 + i / 8) * pw + bx * 8 + i % 8]);
                let q = quantize_block(&fdct_block(&spatial), &table);
                out.set_block(c, by, bx, &q.map(|v| v as f64));
            }
        }
    }
    Ok(out)
}

pub fn compress_image(img: &RgbImage, quality: u32) -> Result<JpegBitstream> {
    entropy_encode(&encode_to_dct(img, quality)?)
}

/// Entropy decoding and, optionally, dequantization.
pub fn partial_decompress(bits: &JpegBitstream, stop: DecodeStop) -> Result<DctImage> {
    let q = entropy_decode(bits)?;
    Ok(match stop {
        DecodeStop::Quantized => q,
        DecodeStop::Dequantized => q.dequantized(),
    })
}

/// Blockwise IDCT of (dequantized) coefficients into YCbCr planes covering
/// the padded image.
pub fn dct_to_ycbcr(img: &DctImage) -> YcbcrImage {
    let deq = img.dequantized();
    let (pw, ph) = (deq.padded_width(), deq.padded_height());
    let mut planes = [vec![0.0; pw * ph], vec![0.0; pw * ph], vec![0.0; pw * ph]];
    for (c, plane) in planes.iter_mut().enumerate() {
        for by in 0..deq.blocks_y() {
            for bx in 0..deq.blocks_x() {
                let spatial = idct_block(&deq.block(c, by, bx));
                for (i, v) in spatial.iter().enumerate() {
                    plane[(by * 8 + i / 8) * pw + bx * 8 + i % 8] = *v;
                }
            }
        }
    }
    YcbcrImage {
        width: pw,
        height: ph,
        planes,
    }
}

/// Pixels from a DCT image of either kind, cropped to the original size.
pub fn dct_to_rgb(img: &DctImage) -> RgbImage {
    ycbcr_to_rgb(&dct_to_ycbcr(img)).crop(img.width(), img.height())
}

pub fn decompress_image(bits: &JpegBitstream) -> Result<RgbImage> {
    Ok(dct_to_rgb(&partial_decompress(bits, DecodeStop::Dequantized)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_image_is_all_zero_coefficients() {
        let img = RgbImage::filled(16, 16, [128, 128, 128]);
        let s = compress_image(&img, 50).unwrap();
        let d = partial_decompress(&s, DecodeStop::Quantized).unwrap();
        assert_eq!(d.max_abs(), 0.0);
        assert_eq!(decompress_image(&s).unwrap(), img);
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let mut img = RgbImage::filled(13, 9, [30, 200, 90]);
        img.set_pixel(12, 8, [255, 0, 0]);
        let s = compress_image(&img, 100).unwrap();
        assert_eq!(s.header().unwrap().width, 13);
        let out = decompress_image(&s).unwrap();
        assert_eq!((out.width(), out.height()), (13, 9));
    }
}
