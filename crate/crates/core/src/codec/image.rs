use crate::error::{Error, Result};

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Replicates the last row and column up to the next multiple of 8.
    pub fn pad_to_blocks(&self) -> RgbImage {
        let (pw, ph) = (self.width.div_ceil(8) * 8, self.height.div_ceil(8) * 8);
        if (pw, ph) == (self.width, self.height) {
            return self.clone();
        }
        let mut out = RgbImage::filled(pw, ph, [0, 0, 0]);
        for y in 0..ph {
            for x in 0..pw {
                out.set_pixel(x, y, self.pixel(x.min(self.width - 1), y.min(self.height - 1)));
            }
        }
        out
    }

    pub fn crop(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                out.set_pixel(x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                out.set_pixel(x, y, self.pixel(sx, sy));
            }
        }
        out
    }

    /// Per-channel mean intensity.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        sums.map(|s| s / n)
    }
}

/// Three real-valued planes (Y, Cb, Cr), each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct YcbcrImage {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
}
