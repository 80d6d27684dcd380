//! Test oracles written independently of the library code paths they check.

#![allow(dead_code)]

pub mod gradients;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;
use t2ci::codec::huffman::{
    CHROMA_AC_BITS, CHROMA_AC_VALS, CHROMA_DC_BITS, CHROMA_DC_VALS, LUMA_AC_BITS, LUMA_AC_VALS,
    LUMA_DC_BITS, LUMA_DC_VALS,
};
use t2ci::codec::{DctImage, RgbImage};

const ZIGZAG: [(usize, usize); 64] = {
    // (row, col) of the k-th zigzag position, walked diagonally.
    let mut out = [(0, 0); 64];
    let mut k = 0;
    let mut s = 0;
    while s < 15 {
        let mut i = 0;
        while i < 8 {
            let j = s as isize - i as isize;
            if j >= 0 && j < 8 {
                let (r, c) = if s % 2 == 0 { (s - i, i) } else { (i, s - i) };
                out[k] = (r, c);
                k += 1;
            }
            i += 1;
        }
        s += 1;
    }
    out
};

const LUMA_BASE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

fn chroma_base(i: usize) -> u32 {
    let (r, c) = (i / 8, i % 8);
    const TOP: [[u32; 4]; 4] = [[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]];
    if r < 4 && c < 4 {
        TOP[r][c]
    } else {
        99
    }
}

fn quant_step(quality: u32, chroma: bool, i: usize) -> f64 {
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let base = if chroma { chroma_base(i) } else { LUMA_BASE[i] };
    ((base * scale + 50) / 100).clamp(1, 255) as f64
}

/// Canonical Huffman decoding table: (length, code) -> symbol.
struct Codebook(Vec<(u8, u16, u8)>);

impl Codebook {
    fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        let mut out = Vec::new();
        let mut code = 0u16;
        let mut k = 0;
        for (len_minus_one, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                out.push((len_minus_one as u8 + 1, code, vals[k]));
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Codebook(out)
    }
}

struct Bits<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Bits<'_> {
    fn bit(&mut self) -> u16 {
        let b = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        b as u16
    }

    fn take(&mut self, n: u8) -> i32 {
        let mut v = 0i32;
        for _ in 0..n {
            v = (v << 1) | self.bit() as i32;
        }
        v
    }

    fn symbol(&mut self, book: &Codebook) -> u8 {
        let mut code = 0u16;
        for len in 1..=16u8 {
            code = (code << 1) | self.bit();
            if let Some(&(_, _, s)) = book.0.iter().find(|(l, c, _)| *l == len && *c == code) {
                return s;
            }
        }
        panic!("invalid Huffman code");
    }

    /// Size-category value with one's-complement negatives.
    fn signed(&mut self, size: u8) -> i32 {
        if size == 0 {
            return 0;
        }
        let v = self.take(size);
        if v < 1 << (size - 1) {
            v - (1 << size) + 1
        } else {
            v
        }
    }
}

fn idct_sample(f: &[f64; 64], y: usize, x: usize) -> f64 {
    let c = |k: usize| if k == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
    let mut s = 0.0;
    for u in 0..8 {
        for v in 0..8 {
            s += c(u) * c(v) * f[u * 8 + v]
                * ((2 * y + 1) as f64 * u as f64 * PI / 16.0).cos()
                * ((2 * x + 1) as f64 * v as f64 * PI / 16.0).cos();
        }
    }
    s / 4.0 + 128.0
}

/// Gauss-Jordan inverse of the forward colour matrix.
fn colour_inverse() -> [[f64; 3]; 3] {
    let mut a: [[f64; 6]; 3] = [
        [0.299, 0.587, 0.114, 1.0, 0.0, 0.0],
        [-0.1687, -0.3313, 0.5, 0.0, 1.0, 0.0],
        [0.5, -0.4187, -0.0813, 0.0, 0.0, 1.0],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..3 {
            if r != col {
                let f = a[r][col];
                let src = a[col];
                for (v, s) in a[r].iter_mut().zip(src) {
                    *v -= f * s;
                }
            }
        }
    }
    [
        [a[0][3], a[0][4], a[0][5]],
        [a[1][3], a[1][4], a[1][5]],
        [a[2][3], a[2][4], a[2][5]],
    ]
}

/// Decodes a `T2CJ` stream with nothing but the format description.
pub fn reference_decode(stream: &[u8]) -> RgbImage {
    assert_eq!(&stream[..4], b"T2CJ");
    let le = |at: usize| u32::from_le_bytes(stream[at..at + 4].try_into().unwrap()) as usize;
    let (width, height, quality) = (le(5), le(9), stream[13] as u32);
    let (bw, bh) = (width.div_ceil(8), height.div_ceil(8));
    let books = [
        (Codebook::new(&LUMA_DC_BITS, &LUMA_DC_VALS), Codebook::new(&LUMA_AC_BITS, &LUMA_AC_VALS)),
        (Codebook::new(&CHROMA_DC_BITS, &CHROMA_DC_VALS), Codebook::new(&CHROMA_AC_BITS, &CHROMA_AC_VALS)),
    ];
    let mut planes = vec![vec![0.0; bw * 8 * bh * 8]; 3];
    let mut pos = 15;
    for (ch, plane) in planes.iter_mut().enumerate() {
        let len = le(pos);
        pos += 4;
        let (dc, ac) = &books[(ch > 0) as usize];
        let mut bits = Bits {
            bytes: &stream[pos..pos + len],
            pos: 0,
        };
        let mut pred = 0;
        for by in 0..bh {
            for bx in 0..bw {
                let mut zz = [0i32; 64];
                let size = bits.symbol(dc);
                pred += bits.signed(size);
                zz[0] = pred;
                let mut k = 1;
                while k < 64 {
                    let rs = bits.symbol(ac);
                    if rs == 0x00 {
                        break;
                    }
                    k += (rs >> 4) as usize;
                    if rs != 0xf0 {
                        zz[k] = bits.signed(rs & 15);
                    }
                    k += 1;
                }
                let mut f = [0.0; 64];
                for (k, &(r, c)) in ZIGZAG.iter().enumerate() {
                    f[r * 8 + c] = zz[k] as f64 * quant_step(quality, ch > 0, r * 8 + c);
                }
                for y in 0..8 {
                    for x in 0..8 {
                        plane[(by * 8 + y) * bw * 8 + bx * 8 + x] = idct_sample(&f, y, x);
                    }
                }
            }
        }
        pos += len;
    }
    let inv = colour_inverse();
    let mut out = RgbImage::filled(width, height, [0; 3]);
    for y in 0..height {
        for x in 0..width {
            let i = y * bw * 8 + x;
            let d = [planes[0][i], planes[1][i] - 128.0, planes[2][i] - 128.0];
            let px = inv.map(|row| {
                let v = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
                v.round().clamp(0.0, 255.0) as u8
            });
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Noise over a random gradient, with some flat patches.
pub fn random_image<R: Rng>(width: usize, height: usize, rng: &mut R) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
    let noise = rng.random_range(0.0..60.0);
    let mut img = RgbImage::filled(width, height, [0; 3]);
    for y in 0..height {
        for x in 0..width {
            let flat = (x / 16 + y / 16) % 3 == 0;
            let px = std::array::from_fn(|c| {
                let mut v = base[c] + grad[c][0] * x as f64 + grad[c][1] * y as f64;
                if !flat {
                    v += rng.random_range(-noise..=noise);
                }
                v.round().clamp(0.0, 255.0) as u8
            });
            img.set_pixel(x, y, px);
        }
    }
    img
}

/// Direct-loop NHWC convolution with HWIO kernels and symmetric zero padding.
pub fn naive_conv2d(
    x: &[f64],
    (n, h, w, c): (usize, usize, usize, usize),
    k: &[f64],
    (kh, kw, co): (usize, usize, usize),
    stride: usize,
    (pad_top, pad_left): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; n * oh * ow * co];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut s = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride + dy) as isize - pad_top as isize;
                            let ix = (ox * stride + dx) as isize - pad_left as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for i in 0..c {
                                s += x[((b * h + iy as usize) * w + ix as usize) * c + i]
                                    * k[((dy * kw + dx) * c + i) * co + o];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * co + o] = s;
                }
            }
        }
    }
    out
}

/// Random quantized coefficient images of assorted sizes and qualities.
pub fn quantized_image() -> impl Strategy<Value = DctImage> {
    (1usize..=24, 1usize..=24, 1u32..=100).prop_flat_map(|(w, h, q)| {
        let n = w.div_ceil(8) * 8 * h.div_ceil(8) * 8;
        // Mostly zeros, like real quantized data, with the odd large value.
        let coeff = prop_oneof![6 => Just(0i32), 3 => -20i32..=20, 1 => -1023i32..=1023];
        let plane = proptest::collection::vec(coeff.prop_map(f64::from), n);
        [plane.clone(), plane.clone(), plane]
            .prop_map(move |planes| DctImage::new(w, h, q, true, planes).unwrap())
    })
}
