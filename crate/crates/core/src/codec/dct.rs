//! Orthonormal 8x8 DCT-II with the JPEG level shift folded in.
//!
//! Blocks are row-major `[y][x]`; coefficients are row-major `[u][v]` where
//! `u` is the vertical and `v` the horizontal frequency.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub type Block = [f64; 64];

pub const LEVEL_SHIFT: f64 = 128.0;

/// `basis[u][x] = c(u) / 2 * cos((2x + 1) u pi / 16)`, `c(0) = 1/sqrt(2)`.
pub fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c / 2.0 * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// Weight from spatial sample `(y, x)` to coefficient `(u, v)`.
pub fn basis(u: usize, v: usize, y: usize, x: usize) -> f64 {
    let m = dct_matrix();
    m[u][y] * m[v][x]
}

/// Forward transform of a block of samples in `[0, 255]` scale; subtracts
/// 128 first.
pub fn fdct_block(block: &Block) -> Block {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    // rows: tmp[y][v] = sum_x (f[y][x] - 128) m[v][x]
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|x| (block[y * 8 + x] - LEVEL_SHIFT) * m[v][x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|y| m[u][y] * tmp[y * 8 + v]).sum();
        }
    }
    out
}

/// Inverse transform; adds 128 back, no clipping.
pub fn idct_block(coeffs: &Block) -> Block {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    // tmp[y][v] = sum_u m[u][y] F[u][v]
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| m[u][y] * coeffs[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * m[v][x]).sum::<f64>() + LEVEL_SHIFT;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mid_gray_block_has_no_energy() {
        let out = fdct_block(&[128.0; 64]);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_block_is_pure_dc() {
        for c in [0.0, 37.0, 200.0, 255.0] {
            let out = fdct_block(&[c; 64]);
            assert!((out[0] - 8.0 * (c - 128.0)).abs() < 1e-9);
            assert!(out[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn zero_coefficients_decode_to_mid_gray() {
        assert!(idct_block(&[0.0; 64]).iter().all(|&v| (v - 128.0).abs() < 1e-12));
    }

    #[test]
    fn dc_of_eight_is_one_level_up() {
        let mut c = [0.0; 64];
        c[0] = 8.0;
        assert!(idct_block(&c).iter().all(|&v| (v - 129.0).abs() < 1e-12));
    }

    #[test]
    fn inverse_is_linear_up_to_the_level_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Block = std::array::from_fn(|_| rng.random_range(-200.0..200.0));
            let b: Block = std::array::from_fn(|_| rng.random_range(-200.0..200.0));
            let sum: Block = std::array::from_fn(|i| a[i] + b[i]);
            let (ia, ib, is) = (idct_block(&a), idct_block(&b), idct_block(&sum));
            for i in 0..64 {
                assert!((is[i] - (ia[i] + ib[i] - LEVEL_SHIFT)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: Block = std::array::from_fn(|_| rng.random_range(0.0..255.0));
            let back = idct_block(&fdct_block(&x));
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }
}
