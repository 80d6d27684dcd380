use crate::codec::dct::Block;
use crate::error::{Error, Result};

/// Base luminance table, natural (row-major) order.
pub const BASE_LUMA: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Base chrominance table, natural (row-major) order.
pub const BASE_CHROMA: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Luma,
    Chroma,
}

impl ChannelKind {
    /// Y is luma, Cb and Cr chroma.
    pub fn of_channel(c: usize) -> Self {
        if c == 0 {
            ChannelKind::Luma
        } else {
            ChannelKind::Chroma
        }
    }
}

/// 8x8 divisor table with entries in `[1, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable([u16; 64]);

impl QuantTable {
    pub fn new(entries: [u16; 64]) -> Result<Self> {
        if entries.iter().any(|&e| !(1..=255).contains(&e)) {
            return Err(Error::param("quantization table entries must lie in [1, 255]"));
        }
        Ok(QuantTable(entries))
    }

    pub fn entries(&self) -> &[u16; 64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i] as f64
    }
}

pub fn validate_quality(quality: u32) -> Result<u8> {
    if (1..=100).contains(&quality) {
        Ok(quality as u8)
    } else {
        Err(Error::param(format!("quality {quality} outside 1..=100")))
    }
}

/// Base table scaled by the conventional quality rule:
/// `scale = 5000 / q` below 50, else `200 - 2q`;
/// `entry = clamp((base * scale + 50) / 100, 1, 255)` in integer arithmetic.
pub fn quant_table_for_quality(quality: u32, kind: ChannelKind) -> Result<QuantTable> {
    let q = validate_quality(quality)? as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let base = match kind {
        ChannelKind::Luma => &BASE_LUMA,
        ChannelKind::Chroma => &BASE_CHROMA,
    };
    let entries = std::array::from_fn(|i| ((base[i] as u32 * scale + 50) / 100).clamp(1, 255) as u16);
    QuantTable::new(entries)
}

/// `[luma, chroma]` tables for a quality factor.
pub fn tables_for_quality(quality: u32) -> Result<[QuantTable; 2]> {
    Ok([
        quant_table_for_quality(quality, ChannelKind::Luma)?,
        quant_table_for_quality(quality, ChannelKind::Chroma)?,
    ])
}

/// Divide and round half away from zero.
pub fn quantize_block(coeffs: &Block, table: &QuantTable) -> [i32; 64] {
    std::array::from_fn(|i| (coeffs[i] / table.get(i)).round() as i32)
}

pub fn dequantize_block(q: &[i32; 64], table: &QuantTable) -> Block {
    std::array::from_fn(|i| q[i] as f64 * table.get(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_fifty_is_the_base_table() {
        let t = quant_table_for_quality(50, ChannelKind::Luma).unwrap();
        assert_eq!(t.entries()[0], 16);
        assert!(t.entries().iter().zip(BASE_LUMA).all(|(&a, b)| a == b as u16));
        let c = quant_table_for_quality(50, ChannelKind::Chroma).unwrap();
        assert!(c.entries().iter().zip(BASE_CHROMA).all(|(&a, b)| a == b as u16));
    }

    #[test]
    fn quality_hundred_is_all_ones() {
        for kind in [ChannelKind::Luma, ChannelKind::Chroma] {
            let t = quant_table_for_quality(100, kind).unwrap();
            assert!(t.entries().iter().all(|&e| e == 1));
        }
    }

    #[test]
    fn quality_one_is_coarse_and_clamped() {
        let t = quant_table_for_quality(1, ChannelKind::Luma).unwrap();
        // 16 * 5000 / 100 = 800 -> 255
        assert_eq!(t.entries()[0], 255);
        assert!(t.entries().iter().all(|&e| (1..=255).contains(&e)));
    }

    #[test]
    fn out_of_range_quality_is_rejected() {
        assert!(matches!(quant_table_for_quality(0, ChannelKind::Luma), Err(Error::Parameter(_))));
        assert!(matches!(quant_table_for_quality(101, ChannelKind::Luma), Err(Error::Parameter(_))));
    }

    #[test]
    fn quantize_by_hand() {
        let t = quant_table_for_quality(50, ChannelKind::Luma).unwrap();
        let mut c = [0.0; 64];
        c[0] = 80.0;
        c[1] = -16.5; // -16.5 / 11 = -1.5 -> -2 (away from zero)
        let q = quantize_block(&c, &t);
        assert_eq!(q[0], 5);
        assert_eq!(q[1], -2);
        assert!(q[2..].iter().all(|&v| v == 0));
        assert_eq!(dequantize_block(&q, &t)[0], 80.0);
        assert_eq!(quantize_block(&[0.0; 64], &t), [0; 64]);
    }
}
