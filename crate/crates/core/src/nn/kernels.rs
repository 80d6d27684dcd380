//! Raw loops behind the convolution and locally connected ops. All layouts
//! are NHWC; convolution kernels are `[kh, kw, c_in, c_out]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`, zero padding split with the smaller
    /// half on the top/left.
    Same,
    /// Output size `floor((in - k) / stride) + 1`, no padding.
    Valid,
}

/// Geometry of a forward convolution mapping `in_h x in_w x c_in` to
/// `out_h x out_w x c_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_padding(input: usize, output: usize, k: usize, stride: usize) -> usize {
    ((output - 1) * stride + k).saturating_sub(input) / 2
}

impl ConvGeom {
    pub fn conv(
        (in_h, in_w, c_in): (usize, usize, usize),
        (kh, kw, c_out): (usize, usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(Error::param("convolution stride must be >= 1"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                (
                    out_h,
                    out_w,
                    same_padding(in_h, out_h, kh, stride),
                    same_padding(in_w, out_w, kw, stride),
                )
            }
            Padding::Valid => {
                if kh > in_h || kw > in_w {
                    return Err(Error::dim(format!(
                        "kernel {kh}x{kw} larger than input {in_h}x{in_w}"
                    )));
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::dim("convolution produces an empty output"));
        }
        Ok(ConvGeom {
            in_h,
            in_w,
            c_in,
            out_h,
            out_w,
            c_out,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Geometry of the convolution whose adjoint is a transposed convolution
    /// taking `in_h x in_w x c_in` to the returned geometry's input size.
    ///
    /// Transposed output size: same -> `in * stride`; valid ->
    /// `(in - 1) * stride + k`.
    pub fn transpose(
        (in_h, in_w, c_in): (usize, usize, usize),
        (kh, kw, c_out): (usize, usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(Error::param("convolution stride must be >= 1"));
        }
        let (big_h, big_w) = match padding {
            Padding::Same => (in_h * stride, in_w * stride),
            Padding::Valid => ((in_h - 1) * stride + kh, (in_w - 1) * stride + kw),
        };
        let g = Self::conv((big_h, big_w, c_out), (kh, kw, c_in), stride, padding)?;
        debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
        Ok(g)
    }

    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw * self.c_in * self.c_out
    }

    #[inline]
    fn input_row(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad_top)
            .filter(|&i| i < self.in_h)
    }

    #[inline]
    fn input_col(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad_left)
            .filter(|&i| i < self.in_w)
    }
}

pub fn conv_forward(x: &[f64], kernel: &[f64], g: &ConvGeom, batch: usize) -> Vec<f64> {
    let (ci, co) = (g.c_in, g.c_out);
    let mut out = vec![0.0; batch * g.out_h * g.out_w * co];
    for b in 0..batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o_off = ((b * g.out_h + oy) * g.out_w + ox) * co;
                let acc = &mut out[o_off..o_off + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let x_off = ((b * g.in_h + iy) * g.in_w + ix) * ci;
                        let k_off = (ky * g.kw + kx) * ci * co;
                        for c in 0..ci {
                            let xv = x[x_off + c];
                            let row = &kernel[k_off + c * co..k_off + (c + 1) * co];
                            for (a, w) in acc.iter_mut().zip(row) {
                                *a += xv * w;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv_forward`] with respect to its input; also the forward
/// pass of a transposed convolution.
pub fn conv_input_grad(dy: &[f64], kernel: &[f64], g: &ConvGeom, batch: usize) -> Vec<f64> {
    let (ci, co) = (g.c_in, g.c_out);
    let mut dx = vec![0.0; batch * g.in_h * g.in_w * ci];
    for b in 0..batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o_off = ((b * g.out_h + oy) * g.out_w + ox) * co;
                let gy = &dy[o_off..o_off + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let x_off = ((b * g.in_h + iy) * g.in_w + ix) * ci;
                        let k_off = (ky * g.kw + kx) * ci * co;
                        for c in 0..ci {
                            let row = &kernel[k_off + c * co..k_off + (c + 1) * co];
                            dx[x_off + c] += row.iter().zip(gy).map(|(w, d)| w * d).sum::<f64>();
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Gradient of [`conv_forward`] with respect to its kernel.
pub fn conv_kernel_grad(x: &[f64], dy: &[f64], g: &ConvGeom, batch: usize) -> Vec<f64> {
    let (ci, co) = (g.c_in, g.c_out);
    let mut dk = vec![0.0; g.kernel_len()];
    for b in 0..batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o_off = ((b * g.out_h + oy) * g.out_w + ox) * co;
                let gy = &dy[o_off..o_off + co];
                for ky in 0..g.kh {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let x_off = ((b * g.in_h + iy) * g.in_w + ix) * ci;
                        let k_off = (ky * g.kw + kx) * ci * co;
                        for c in 0..ci {
                            let xv = x[x_off + c];
                            let row = &mut dk[k_off + c * co..k_off + (c + 1) * co];
                            for (w, d) in row.iter_mut().zip(gy) {
                                *w += xv * d;
                            }
                        }
                    }
                }
            }
        }
    }
    dk
}

/// Unshared block-wise linear map. Each `block x block` patch at block
/// position `(by, bx)` is flattened in `(row, col, channel)` order and
/// multiplied by its own `[block*block*c_in, block*block*c_out]` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalGeom {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub block: usize,
}

impl LocalGeom {
    pub fn new(h: usize, w: usize, c_in: usize, c_out: usize, block: usize) -> Result<Self> {
        if block == 0 || !h.is_multiple_of(block) || !w.is_multiple_of(block) {
            return Err(Error::dim(format!(
                "{h}x{w} input is not divisible into {block}x{block} blocks"
            )));
        }
        Ok(LocalGeom {
            h,
            w,
            c_in,
            c_out,
            block,
        })
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.h / self.block, self.w / self.block)
    }

    pub fn patch_in(&self) -> usize {
        self.block * self.block * self.c_in
    }

    pub fn patch_out(&self) -> usize {
        self.block * self.block * self.c_out
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (bh, bw) = self.blocks();
        [bh, bw, self.patch_in(), self.patch_out()]
    }

    pub fn bias_shape(&self) -> [usize; 3] {
        let (bh, bw) = self.blocks();
        [bh, bw, self.patch_out()]
    }

    fn gather(&self, src: &[f64], b: usize, by: usize, bx: usize, c: usize, dst: &mut [f64]) {
        let n = self.block;
        let mut i = 0;
        for dy in 0..n {
            let row = ((b * self.h + by * n + dy) * self.w + bx * n) * c;
            dst[i..i + n * c].copy_from_slice(&src[row..row + n * c]);
            i += n * c;
        }
    }

    fn scatter_add(&self, dst: &mut [f64], b: usize, by: usize, bx: usize, c: usize, src: &[f64]) {
        let n = self.block;
        let mut i = 0;
        for dy in 0..n {
            let row = ((b * self.h + by * n + dy) * self.w + bx * n) * c;
            for (d, s) in dst[row..row + n * c].iter_mut().zip(&src[i..i + n * c]) {
                *d += s;
            }
            i += n * c;
        }
    }
}

pub fn local_forward(
    x: &[f64],
    weights: &[f64],
    bias: Option<&[f64]>,
    g: &LocalGeom,
    batch: usize,
) -> Vec<f64> {
    let (bh, bw) = g.blocks();
    let (pi, po) = (g.patch_in(), g.patch_out());
    let mut out = vec![0.0; batch * g.h * g.w * g.c_out];
    let mut patch = vec![0.0; pi];
    let mut acc = vec![0.0; po];
    for b in 0..batch {
        for by in 0..bh {
            for bx in 0..bw {
                let blk = by * bw + bx;
                g.gather(x, b, by, bx, g.c_in, &mut patch);
                match bias {
                    Some(bias) => acc.copy_from_slice(&bias[blk * po..(blk + 1) * po]),
                    None => acc.fill(0.0),
                }
                let w = &weights[blk * pi * po..(blk + 1) * pi * po];
                for (i, &xv) in patch.iter().enumerate() {
                    for (a, wv) in acc.iter_mut().zip(&w[i * po..(i + 1) * po]) {
                        *a += xv * wv;
                    }
                }
                g.scatter_add(&mut out, b, by, bx, g.c_out, &acc);
            }
        }
    }
    out
}

/// Returns `(dx, dweights, dbias)`; each is only computed when requested.
pub fn local_backward(
    x: &[f64],
    weights: &[f64],
    dy: &[f64],
    g: &LocalGeom,
    batch: usize,
    want: (bool, bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (bh, bw) = g.blocks();
    let (pi, po) = (g.patch_in(), g.patch_out());
    let mut dx = want.0.then(|| vec![0.0; x.len()]);
    let mut dw = want.1.then(|| vec![0.0; weights.len()]);
    let mut db = want.2.then(|| vec![0.0; bh * bw * po]);
    let mut patch = vec![0.0; pi];
    let mut gout = vec![0.0; po];
    let mut gin = vec![0.0; pi];
    for b in 0..batch {
        for by in 0..bh {
            for bx in 0..bw {
                let blk = by * bw + bx;
                g.gather(dy, b, by, bx, g.c_out, &mut gout);
                let w = &weights[blk * pi * po..(blk + 1) * pi * po];
                if let Some(db) = db.as_mut() {
                    for (d, s) in db[blk * po..(blk + 1) * po].iter_mut().zip(&gout) {
                        *d += s;
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    g.gather(x, b, by, bx, g.c_in, &mut patch);
                    let dw = &mut dw[blk * pi * po..(blk + 1) * pi * po];
                    for (i, &xv) in patch.iter().enumerate() {
                        for (d, gv) in dw[i * po..(i + 1) * po].iter_mut().zip(&gout) {
                            *d += xv * gv;
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    for (i, gi) in gin.iter_mut().enumerate() {
                        *gi = w[i * po..(i + 1) * po]
                            .iter()
                            .zip(&gout)
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                    g.scatter_add(dx, b, by, bx, g.c_in, &gin);
                }
            }
        }
    }
    (dx, dw, db)
}
