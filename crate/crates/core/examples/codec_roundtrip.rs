//! Compresses a synthetic image at several qualities, decodes it fully and
//! partially, and reports size and distortion.
//!
//! cargo run --release --example codec_roundtrip

use t2ci::codec::{
    compress_image, decompress_image, entropy_decode, partial_decompress, DecodeStop, RgbImage,
};

fn test_card(size: usize) -> RgbImage {
    let mut img = RgbImage::filled(size, size, [0; 3]);
    for y in 0..size {
        for x in 0..size {
            let r = (x * 255 / (size - 1)) as u8;
            let g = (y * 255 / (size - 1)) as u8;
            let dx = x as f64 - size as f64 / 2.0;
            let dy = y as f64 - size as f64 / 2.0;
            let b = if dx * dx + dy * dy < (size * size / 16) as f64 { 230 } else { 40 };
            img.set_pixel(x, y, [r, g, b]);
        }
    }
    img
}

fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mse = a
        .as_bytes()
        .iter()
        .zip(b.as_bytes())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.as_bytes().len() as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

fn main() -> t2ci::Result<()> {
    let img = test_card(64);
    println!("raw size {} bytes", img.as_bytes().len());
    for quality in [10, 50, 90] {
        let bits = compress_image(&img, quality)?;
        let decoded = decompress_image(&bits)?;
        println!("q{quality:>2}: {:5} bytes  psnr {:.2} dB", bits.len(), psnr(&img, &decoded));
    }

    // Stop decoding before the inverse transform.
    let bits = compress_image(&img, 50)?;
    let quantized = partial_decompress(&bits, DecodeStop::Quantized)?;
    let dequantized = partial_decompress(&bits, DecodeStop::Dequantized)?;
    assert_eq!(quantized, entropy_decode(&bits)?);
    let q = quantized.block(0, 0, 0);
    let d = dequantized.block(0, 0, 0);
    println!("luma block (0,0) first row, quantized:   {:?}", &q[..8]);
    println!("luma block (0,0) first row, dequantized: {:?}", &d[..8]);
    println!(
        "{}x{} image, {}x{} blocks per channel",
        quantized.width(),
        quantized.height(),
        quantized.blocks_x(),
        quantized.blocks_y()
    );
    Ok(())
}
