//! Entropy layer and the `T2CJ` container.
//!
//! ```text
//! "T2CJ"  u8 version  u32 width  u32 height  u8 quality  u8 subsampling (0 = 4:4:4)
//! 3 x { u32 byte_length, Huffman-coded blocks of one channel }
//! ```
//!
//! Within a channel, blocks are visited in raster order. Each block is
//! zigzag-scanned; DC is coded as the difference from the previous block's
//! DC, AC as `(zero-run, size)` symbols with ZRL and end-of-block markers.

use std::fs;
use std::path::Path;

use crate::codec::dct_image::DctImage;
use crate::codec::huffman::{category, extend, value_bits, BitReader, BitWriter, HuffmanTable, ZIGZAG};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"T2CJ";
const VERSION: u8 = 1;
pub const SUBSAMPLING_444: u8 = 0;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1 + 1;

const EOB: u8 = 0x00;
const ZRL: u8 = 0xf0;
const MAX_DC_CATEGORY: u8 = 11;
const MAX_AC_CATEGORY: u8 = 10;

/// Parsed `T2CJ` header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub quality: u8,
    pub subsampling: u8,
}

/// Encoded bytes of a quantized DCT image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegBitstream {
    bytes: Vec<u8>,
}

impl JpegBitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        JpegBitstream { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn header(&self) -> Result<StreamHeader> {
        let b = &self.bytes;
        if b.len() < HEADER_LEN {
            return Err(Error::decode(b.len(), "stream shorter than its header"));
        }
        if &b[..4] != MAGIC {
            return Err(Error::decode(0, "missing T2CJ magic"));
        }
        if b[4] != VERSION {
            return Err(Error::decode(4, format!("unsupported stream version {}", b[4])));
        }
        let width = u32::from_le_bytes(b[5..9].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(b[9..13].try_into().unwrap()) as usize;
        if width == 0 || height == 0 {
            return Err(Error::decode(5, "empty image"));
        }
        if !(1..=100).contains(&b[13]) {
            return Err(Error::decode(13, format!("quality {} outside 1..=100", b[13])));
        }
        if b[14] != SUBSAMPLING_444 {
            return Err(Error::decode(14, format!("unsupported subsampling mode {}", b[14])));
        }
        Ok(StreamHeader {
            width,
            height,
            quality: b[13],
            subsampling: b[14],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, &self.bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::from_bytes(fs::read(path).map_err(|e| Error::io(path, e))?))
    }
}

fn tables(channel: usize) -> (HuffmanTable, HuffmanTable) {
    if channel == 0 {
        (HuffmanTable::luma_dc(), HuffmanTable::luma_ac())
    } else {
        (HuffmanTable::chroma_dc(), HuffmanTable::chroma_ac())
    }
}

fn put_symbol(w: &mut BitWriter, table: &HuffmanTable, symbol: u8) -> Result<()> {
    let (code, len) = table
        .code(symbol)
        .ok_or_else(|| Error::Encode(format!("symbol {symbol:#04x} has no Huffman code")))?;
    w.put(code as u32, len);
    Ok(())
}

fn encode_channel(img: &DctImage, channel: usize) -> Result<Vec<u8>> {
    let (dc_table, ac_table) = tables(channel);
    let mut w = BitWriter::new();
    let mut prev_dc = 0i32;
    for by in 0..img.blocks_y() {
        for bx in 0..img.blocks_x() {
            let block = img.block(channel, by, bx);
            let zz: [i32; 64] = std::array::from_fn(|k| block[ZIGZAG[k]] as i32);

            let diff = zz[0] - prev_dc;
            prev_dc = zz[0];
            let size = category(diff);
            if size > MAX_DC_CATEGORY {
                return Err(Error::Encode(format!("DC difference {diff} exceeds category 11")));
            }
            put_symbol(&mut w, &dc_table, size)?;
            w.put(value_bits(diff, size), size);

            let mut run = 0u8;
            for &v in &zz[1..] {
                if v == 0 {
                    run += 1;
                    continue;
                }
                while run >= 16 {
                    put_symbol(&mut w, &ac_table, ZRL)?;
                    run -= 16;
                }
                let size = category(v);
                if size > MAX_AC_CATEGORY {
                    return Err(Error::Encode(format!("AC coefficient {v} exceeds category 10")));
                }
                put_symbol(&mut w, &ac_table, (run << 4) | size)?;
                w.put(value_bits(v, size), size);
                run = 0;
            }
            if run > 0 {
                put_symbol(&mut w, &ac_table, EOB)?;
            }
        }
    }
    Ok(w.finish())
}

/// Huffman-codes a quantized DCT image.
pub fn entropy_encode(img: &DctImage) -> Result<JpegBitstream> {
    if !img.is_quantized() {
        return Err(Error::Encode("entropy coding needs quantized coefficients".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.push(img.quality());
    out.push(SUBSAMPLING_444);
    for c in 0..3 {
        let seg = encode_channel(img, c)?;
        out.extend_from_slice(&(seg.len() as u32).to_le_bytes());
        out.extend_from_slice(&seg);
    }
    Ok(JpegBitstream { bytes: out })
}

fn decode_channel(
    seg: &[u8],
    base: usize,
    channel: usize,
    blocks: (usize, usize),
    plane: &mut [f64],
    padded_width: usize,
) -> Result<()> {
    let (dc_table, ac_table) = tables(channel);
    let mut r = BitReader::new(seg, base);
    let mut prev_dc = 0i32;
    for by in 0..blocks.0 {
        for bx in 0..blocks.1 {
            let mut zz = [0i32; 64];
            let size = dc_table.decode(&mut r)?;
            if size > MAX_DC_CATEGORY {
                return Err(Error::decode(r.byte_offset(), format!("DC category {size}")));
            }
            let diff = extend(r.bits(size)?, size);
            prev_dc += diff;
            zz[0] = prev_dc;

            let mut k = 1;
            while k < 64 {
                let at = r.byte_offset();
                let sym = ac_table.decode(&mut r)?;
                match sym {
                    EOB => break,
                    ZRL => k += 16,
                    _ => {
                        let (run, size) = ((sym >> 4) as usize, sym & 0x0f);
                        k += run;
                        if k >= 64 {
                            return Err(Error::decode(at, "AC run overflows the block"));
                        }
                        zz[k] = extend(r.bits(size)?, size);
                        k += 1;
                    }
                }
                if k > 64 {
                    return Err(Error::decode(at, "zero run overflows the block"));
                }
            }
            for (k, &v) in zz.iter().enumerate() {
                let n = ZIGZAG[k];
                plane[(by * 8 + n / 8) * padded_width + bx * 8 + n % 8] = v as f64;
            }
        }
    }
    r.finish()
}

/// Exact inverse of [`entropy_encode`].
pub fn entropy_decode(bits: &JpegBitstream) -> Result<DctImage> {
    let h = bits.header()?;
    let mut img = DctImage::zeros(h.width, h.height, h.quality as u32, true)?;
    let (blocks, pw) = ((img.blocks_y(), img.blocks_x()), img.padded_width());
    let mut planes: [Vec<f64>; 3] = img.planes().clone();
    let bytes = bits.as_bytes();
    let mut pos = HEADER_LEN;
    for (c, plane) in planes.iter_mut().enumerate() {
        let len_bytes = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::decode(pos, "missing channel length"))?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let seg = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::decode(pos, "channel segment truncated"))?;
        decode_channel(seg, pos, c, blocks, plane, pw)?;
        pos += len;
    }
    if pos != bytes.len() {
        return Err(Error::decode(pos, "trailing bytes after last channel"));
    }
    img = DctImage::new(h.width, h.height, h.quality as u32, true, planes)?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_block_is_dc_zero_then_eob() {
        let img = DctImage::zeros(8, 8, 50, true).unwrap();
        let s = entropy_encode(&img).unwrap();
        // Y: "00" + "1010" padded with ones -> 0b0010_1011
        let seg_y = &s.as_bytes()[HEADER_LEN + 4..HEADER_LEN + 5];
        assert_eq!(seg_y, &[0b0010_1011]);
        assert_eq!(entropy_decode(&s).unwrap(), img);
    }

    #[test]
    fn dc_is_coded_as_differences() {
        let mut img = DctImage::zeros(16, 8, 50, true).unwrap();
        let mut b = [0.0; 64];
        b[0] = 5.0;
        img.set_block(0, 0, 0, &b);
        b[0] = 8.0;
        img.set_block(0, 0, 1, &b);
        let s = entropy_encode(&img).unwrap();
        // Block 1: cat 3 ("100") + "101" + EOB "1010"; block 2: diff 3 is
        // cat 2 ("011") + "11" + EOB.
        let mut w = BitWriter::new();
        for (v, n) in [(0b100, 3), (0b101, 3), (0b1010, 4), (0b011, 3), (0b11, 2), (0b1010, 4)] {
            w.put(v, n);
        }
        let expect = w.finish();
        let seg = &s.as_bytes()[HEADER_LEN + 4..HEADER_LEN + 4 + expect.len()];
        assert_eq!(seg, &expect[..]);
        assert_eq!(entropy_decode(&s).unwrap(), img);
    }

    #[test]
    fn unquantized_input_is_rejected() {
        let img = DctImage::zeros(8, 8, 50, false).unwrap();
        assert!(matches!(entropy_encode(&img), Err(Error::Encode(_))));
    }

    #[test]
    fn oversized_coefficient_is_an_encode_error() {
        let mut img = DctImage::zeros(8, 8, 50, true).unwrap();
        let mut b = [0.0; 64];
        b[1] = 1024.0;
        img.set_block(0, 0, 0, &b);
        assert!(matches!(entropy_encode(&img), Err(Error::Encode(_))));
    }

    #[test]
    fn invalid_huffman_prefix_reports_offset() {
        let img = DctImage::zeros(8, 8, 50, true).unwrap();
        let mut bytes = entropy_encode(&img).unwrap().as_bytes().to_vec();
        // Nine 1-bits are not a luma DC code.
        bytes[HEADER_LEN + 4] = 0xff;
        let len_pos = HEADER_LEN;
        bytes.splice(len_pos..len_pos + 4, 2u32.to_le_bytes());
        bytes.insert(HEADER_LEN + 5, 0xff);
        let err = entropy_decode(&JpegBitstream::from_bytes(bytes)).unwrap_err();
        assert!(matches!(err, Error::Decode { offset, .. } if offset == HEADER_LEN + 4), "{err}");
    }

    #[test]
    fn empty_and_truncated_streams_fail() {
        assert!(entropy_decode(&JpegBitstream::from_bytes(vec![])).is_err());
        let img = DctImage::zeros(16, 16, 50, true).unwrap();
        let bytes = entropy_encode(&img).unwrap().as_bytes().to_vec();
        for cut in [3, HEADER_LEN, HEADER_LEN + 2, bytes.len() - 1] {
            assert!(matches!(
                entropy_decode(&JpegBitstream::from_bytes(bytes[..cut].to_vec())),
                Err(Error::Decode { .. })
            ));
        }
    }
}
