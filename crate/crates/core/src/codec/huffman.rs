//! Default DC/AC Huffman tables and the bit-level reader and writer.

use crate::error::{Error, Result};

/// Natural-order index of the k-th coefficient in zigzag order.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

pub const LUMA_DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
pub const LUMA_DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
pub const CHROMA_DC_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
pub const CHROMA_DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub const LUMA_AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
pub const LUMA_AC_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

pub const CHROMA_AC_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
pub const CHROMA_AC_VALS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

/// Canonical Huffman code built from a BITS/HUFFVAL pair.
#[derive(Debug, Clone)]
pub struct HuffmanTable {
    /// `(code, length)` per symbol; length 0 means the symbol is absent.
    codes: [(u16, u8); 256],
    /// Largest code of each length (1..=16), or -1 if none.
    max_code: [i32; 17],
    /// Index into `values` of the first code of each length.
    val_ptr: [i32; 17],
    min_code: [i32; 17],
    values: Vec<u8>,
}

impl HuffmanTable {
    pub fn new(bits: &[u8; 16], values: &[u8]) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut max_code = [-1i32; 17];
        let mut min_code = [0i32; 17];
        let mut val_ptr = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0usize;
        for len in 1..=16 {
            let count = bits[len - 1] as usize;
            if count > 0 {
                val_ptr[len] = k as i32;
                min_code[len] = code;
                for _ in 0..count {
                    codes[values[k] as usize] = (code as u16, len as u8);
                    code += 1;
                    k += 1;
                }
                max_code[len] = code - 1;
            }
            code <<= 1;
        }
        HuffmanTable {
            codes,
            max_code,
            val_ptr,
            min_code,
            values: values.to_vec(),
        }
    }

    pub fn luma_dc() -> Self {
        Self::new(&LUMA_DC_BITS, &LUMA_DC_VALS)
    }

    pub fn luma_ac() -> Self {
        Self::new(&LUMA_AC_BITS, &LUMA_AC_VALS)
    }

    pub fn chroma_dc() -> Self {
        Self::new(&CHROMA_DC_BITS, &CHROMA_DC_VALS)
    }

    pub fn chroma_ac() -> Self {
        Self::new(&CHROMA_AC_BITS, &CHROMA_AC_VALS)
    }

    pub fn code(&self, symbol: u8) -> Option<(u16, u8)> {
        let c = self.codes[symbol as usize];
        (c.1 > 0).then_some(c)
    }

    pub fn decode(&self, reader: &mut BitReader<'_>) -> Result<u8> {
        let start = reader.byte_offset();
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | reader.bit()? as i32;
            if code <= self.max_code[len] {
                let idx = self.val_ptr[len] + code - self.min_code[len];
                return Ok(self.values[idx as usize]);
            }
        }
        Err(Error::decode(start, "invalid Huffman code"))
    }
}

/// MSB-first bit packer; [`BitWriter::finish`] pads with 1-bits.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, value: u32, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.nbits += 1;
            if self.nbits == 8 {
                self.bytes.push(self.acc as u8);
                self.acc = 0;
                self.nbits = 0;
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad as u8);
        }
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    /// Offset of `bytes[0]` within the enclosing stream, for error reports.
    base: usize,
    pos: usize,
    bit: u8,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], base: usize) -> Self {
        BitReader {
            bytes,
            base,
            pos: 0,
            bit: 0,
        }
    }

    pub fn byte_offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn bit(&mut self) -> Result<u32> {
        let byte = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::decode(self.byte_offset(), "entropy segment truncated"))?;
        let b = (byte >> (7 - self.bit)) & 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.pos += 1;
        }
        Ok(b as u32)
    }

    pub fn bits(&mut self, n: u8) -> Result<u32> {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }

    /// Checks that only 1-bit padding remains.
    pub fn finish(mut self) -> Result<()> {
        while self.bit != 0 {
            if self.bit()? != 1 {
                return Err(Error::decode(self.byte_offset(), "non-padding bits after last block"));
            }
        }
        if self.pos != self.bytes.len() {
            return Err(Error::decode(self.byte_offset(), "trailing bytes after last block"));
        }
        Ok(())
    }
}

/// Number of bits needed for `|v|` (the JPEG size category).
pub fn category(v: i32) -> u8 {
    (32 - v.unsigned_abs().leading_zeros()) as u8
}

/// Value bits appended after a size category; negatives use one's complement.
pub fn value_bits(v: i32, size: u8) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v - 1) as u32 & ((1u32 << size) - 1)
    }
}

/// Inverse of [`value_bits`].
pub fn extend(bits: u32, size: u8) -> i32 {
    if size == 0 {
        return 0;
    }
    if bits < (1 << (size - 1)) {
        bits as i32 - (1 << size) + 1
    } else {
        bits as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        for &z in &ZIGZAG {
            assert!(!seen[z]);
            seen[z] = true;
        }
        assert_eq!(&ZIGZAG[..6], &[0, 1, 8, 16, 9, 2]);
    }

    #[test]
    fn default_tables_are_complete() {
        for (bits, vals) in [
            (&LUMA_DC_BITS, &LUMA_DC_VALS[..]),
            (&CHROMA_DC_BITS, &CHROMA_DC_VALS[..]),
            (&LUMA_AC_BITS, &LUMA_AC_VALS[..]),
            (&CHROMA_AC_BITS, &CHROMA_AC_VALS[..]),
        ] {
            assert_eq!(bits.iter().map(|&b| b as usize).sum::<usize>(), vals.len());
        }
        // Luma DC category 0 is "00", EOB in luma AC is "1010".
        assert_eq!(HuffmanTable::luma_dc().code(0), Some((0b00, 2)));
        assert_eq!(HuffmanTable::luma_ac().code(0x00), Some((0b1010, 4)));
    }

    #[test]
    fn categories_and_value_bits() {
        assert_eq!(category(0), 0);
        assert_eq!(category(1), 1);
        assert_eq!(category(-1), 1);
        assert_eq!(category(5), 3);
        assert_eq!(category(-1023), 10);
        assert_eq!(category(2047), 11);
        for v in -300..300 {
            let s = category(v);
            assert_eq!(extend(value_bits(v, s), s), v);
        }
    }

    #[test]
    fn writer_reader_round_trip() {
        let mut w = BitWriter::new();
        w.put(0b101, 3);
        w.put(0x3ff, 10);
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes, 0);
        assert_eq!(r.bits(3).unwrap(), 0b101);
        assert_eq!(r.bits(10).unwrap(), 0x3ff);
        r.finish().unwrap();
    }
}
