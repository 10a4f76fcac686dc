use std::fs;
use std::path::PathBuf;

use jecrl::jpeg::{decompress, parse_baseline_jpeg, read_jcoef, QuantTable};
use jecrl::Error;

fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn libjpeg_encoded_grids_round_trip() {
    for name in ["dc_only", "laplace_q75", "wide_range_q50", "sparse_q90_opt"] {
        let expected = read_jcoef(&fixture(&format!("{name}.jcoef"))).unwrap();
        let parsed = parse_baseline_jpeg(&fixture(&format!("{name}.jpg"))).unwrap();
        assert_eq!(parsed, expected, "{name}");
    }
}

#[test]
fn dc_only_block_has_single_nonzero() {
    let img = parse_baseline_jpeg(&fixture("dc_only.jpg")).unwrap();
    assert_eq!(img.dims(), (8, 8));
    let nonzero: Vec<_> = img.coefficients().iter().enumerate().filter(|(_, &c)| c != 0).collect();
    assert_eq!(nonzero, vec![(0, &5)]);
}

#[test]
fn pillow_q75_table_and_pixels() {
    let img = parse_baseline_jpeg(&fixture("pillow_q75.jpg")).unwrap();
    assert_eq!(*img.table(), QuantTable::from_quality(75).unwrap());
    // Pillow's decoder output, compared after rounding and clamping ours
    let pgm = fixture("pillow_q75.pgm");
    let pixels = &pgm[pgm.len() - 64 * 64..];
    let ours = decompress(&img);
    let worst = ours
        .iter()
        .zip(pixels)
        .map(|(&p, &q)| (p.round().clamp(0.0, 255.0) - q as f64).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0, "max pixel deviation {worst}");
}

#[test]
fn progressive_and_colour_are_unsupported() {
    for name in ["pillow_progressive.jpg", "pillow_rgb.jpg"] {
        let err = parse_baseline_jpeg(&fixture(name)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVariant(_)), "{name}: {err}");
        assert!(err.to_string().contains("unsupported JPEG variant"));
    }
}

#[test]
fn missing_eoi_is_malformed() {
    let mut bytes = fixture("laplace_q75.jpg");
    assert_eq!(&bytes[bytes.len() - 2..], &[0xFF, 0xD9]);
    bytes.truncate(bytes.len() - 2);
    let err = parse_baseline_jpeg(&bytes).unwrap_err();
    assert!(matches!(err, Error::MalformedJpeg(_)), "{err}");
    assert!(err.to_string().contains("malformed JPEG"));
}

#[test]
fn truncated_streams_are_malformed() {
    let bytes = fixture("sparse_q90_opt.jpg");
    for cut in [1, 3, 20, 100, bytes.len() / 2, bytes.len() - 5] {
        let err = parse_baseline_jpeg(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::MalformedJpeg(_)), "cut {cut}: {err}");
    }
}

#[test]
fn odd_geometry_is_rejected() {
    let mut bytes = fixture("dc_only.jpg");
    // patch the SOF0 width from 8 to 9
    let sof = bytes.windows(2).position(|w| w == [0xFF, 0xC0]).unwrap();
    bytes[sof + 8] = 9;
    let err = parse_baseline_jpeg(&bytes).unwrap_err();
    assert!(matches!(err, Error::UnsupportedGeometry(_)), "{err}");
}
