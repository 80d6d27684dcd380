use std::sync::OnceLock;

use crate::codec::image::{RgbImage, YcbcrImage};

/// Rows map `(r, g, b)` to `(Y, Cb, Cr)` before the chroma offset.
pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.1687, -0.3313, 0.5],
    [0.5, -0.4187, -0.0813],
];

pub const YCBCR_OFFSET: [f64; 3] = [0.0, 128.0, 128.0];

/// Exact inverse of [`RGB_TO_YCBCR`].
pub fn ycbcr_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_YCBCR))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

pub fn rgb_pixel_to_ycbcr(rgb: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, (row, off)) in out.iter_mut().zip(RGB_TO_YCBCR.iter().zip(YCBCR_OFFSET)) {
        *o = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2] + off;
    }
    out
}

/// Unrounded, unclipped inverse colour transform.
pub fn ycbcr_pixel_to_rgb_exact(ycc: [f64; 3]) -> [f64; 3] {
    let inv = ycbcr_to_rgb_matrix();
    let d = [ycc[0] - YCBCR_OFFSET[0], ycc[1] - YCBCR_OFFSET[1], ycc[2] - YCBCR_OFFSET[2]];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(inv) {
        *o = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
    }
    out
}

/// Round half away from zero, then clamp to a byte.
pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn ycbcr_pixel_to_rgb(ycc: [f64; 3]) -> [u8; 3] {
    ycbcr_pixel_to_rgb_exact(ycc).map(to_byte)
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> YcbcrImage {
    let n = img.width() * img.height();
    let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, px) in img.as_bytes().chunks_exact(3).enumerate() {
        let ycc = rgb_pixel_to_ycbcr([px[0] as f64, px[1] as f64, px[2] as f64]);
        for c in 0..3 {
            planes[c][i] = ycc[c];
        }
    }
    YcbcrImage {
        width: img.width(),
        height: img.height(),
        planes,
    }
}

pub fn ycbcr_to_rgb(img: &YcbcrImage) -> RgbImage {
    let n = img.width * img.height;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let rgb = ycbcr_pixel_to_rgb([img.planes[0][i], img.planes[1][i], img.planes[2][i]]);
        data.extend_from_slice(&rgb);
    }
    RgbImage::new(img.width, img.height, data).expect("plane sizes match")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn black_keeps_chroma_offsets() {
        assert!(close(rgb_pixel_to_ycbcr([0.0, 0.0, 0.0]), [0.0, 128.0, 128.0]));
    }

    #[test]
    fn white_is_neutral() {
        assert!(close(rgb_pixel_to_ycbcr([255.0; 3]), [255.0, 128.0, 128.0]));
    }

    #[test]
    fn pure_red_by_hand() {
        // 0.299*255, -0.1687*255 + 128, 0.5*255 + 128
        assert!(close(rgb_pixel_to_ycbcr([255.0, 0.0, 0.0]), [76.245, 84.9815, 255.5]));
    }

    #[test]
    fn gray_is_a_fixed_point() {
        assert_eq!(ycbcr_pixel_to_rgb([128.0, 128.0, 128.0]), [128, 128, 128]);
        assert_eq!(ycbcr_pixel_to_rgb([0.0, 128.0, 128.0]), [0, 0, 0]);
    }

    #[test]
    fn inverse_matrix_is_exact() {
        let inv = ycbcr_to_rgb_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| inv[i][k] * RGB_TO_YCBCR[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_within_one_level_on_a_grid() {
        for r in (0..=255).step_by(15) {
            for g in (0..=255).step_by(15) {
                for b in (0..=255).step_by(15) {
                    let ycc = rgb_pixel_to_ycbcr([r as f64, g as f64, b as f64]);
                    let back = ycbcr_pixel_to_rgb(ycc);
                    for (x, y) in back.iter().zip([r, g, b]) {
                        assert!((*x as i32 - y).abs() <= 1);
                    }
                }
            }
        }
    }
}
