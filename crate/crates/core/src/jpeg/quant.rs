use super::QuantTable;
use crate::error::{Error, Result};

/// Standard luminance quantization table (row-major, natural order).
pub const STD_LUMINANCE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

pub(super) fn quality_to_quant_table(qf: u32) -> Result<QuantTable> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidInput(format!(
            "quality factor {qf} outside 1..=100"
        )));
    }
    let scale = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
    let steps: Vec<u16> = STD_LUMINANCE
        .iter()
        .map(|&base| ((base as u32 * scale + 50) / 100).clamp(1, 255) as u16)
        .collect();
    QuantTable::from_row_major(&steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qf50_is_base_table() {
        let t = quality_to_quant_table(50).unwrap();
        assert_eq!(t.to_row_major(), STD_LUMINANCE);
    }

    #[test]
    fn qf100_is_all_ones() {
        let t = quality_to_quant_table(100).unwrap();
        assert!(t.to_row_major().iter().all(|&s| s == 1));
    }

    #[test]
    fn qf75_matches_libjpeg_dump() {
        // luminance table written by libjpeg (cjpeg -quality 75 / PIL quality=75)
        let want: [u16; 64] = [
            8, 6, 5, 8, 12, 20, 26, 31, 6, 6, 7, 10, 13, 29, 30, 28, 7, 7, 8, 12, 20, 29, 35, 28,
            7, 9, 11, 15, 26, 44, 40, 31, 9, 11, 19, 28, 34, 55, 52, 39, 12, 18, 28, 32, 41, 52,
            57, 46, 25, 32, 39, 44, 52, 61, 60, 51, 36, 46, 48, 49, 56, 50, 52, 50,
        ];
        assert_eq!(quality_to_quant_table(75).unwrap().to_row_major(), want);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(quality_to_quant_table(0).is_err());
        assert!(quality_to_quant_table(101).is_err());
    }
}
