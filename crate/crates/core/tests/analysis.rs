use jecrl::analysis::{
    accum_grad_matrix, accum_grad_matrix_linear, decode_pgm, detection_error, encode_pgm, filter_spectra, matrix_heatmap,
    mean_matrices, to_gray, top_n_csv, top_n_stats, AccumGradMatrix, AnalysisOptions,
};
use jecrl::env::{bank_filters, preprocess, FilterBank};
use jecrl::jpeg::{decompress, JpegImage, QuantTable};
use jecrl::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, h: usize, w: usize, qf: u32) -> JpegImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefs: Vec<i32> = (0..h * w)
        .map(|_| if rng.gen_bool(0.4) { rng.gen_range(-5..=5) } else { 0 })
        .collect();
    JpegImage::new(Grid::from_vec(h, w, coefs).unwrap(), QuantTable::from_quality(qf).unwrap()).unwrap()
}

/// Perturbs each block's coefficient at mode (k, l) by one and sums the
/// absolute change of one residual channel.
fn fd_entry(img: &JpegImage, bank: FilterBank, fi: usize, k: usize, l: usize) -> f64 {
    let base = preprocess(&decompress(img), bank, f64::INFINITY).unwrap();
    let mut total = 0.0;
    for a in 0..img.blocks_high() {
        for b in 0..img.blocks_wide() {
            let mut p = img.clone();
            p.set_coef(a, b, k, l, img.coef(a, b, k, l) + 1);
            let r = preprocess(&decompress(&p), bank, f64::INFINITY).unwrap();
            for i in 0..img.height() {
                for j in 0..img.width() {
                    total += (r.get(i, j, fi) - base.get(i, j, fi)).abs();
                }
            }
        }
    }
    total
}

#[test]
fn closed_form_matches_finite_differences() {
    let img = random_image(3, 24, 32, 75);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let banks = [FilterBank::Dct8, FilterBank::Dct4, FilterBank::Srm30];
    let mats: Vec<AccumGradMatrix> = banks
        .iter()
        .map(|&b| accum_grad_matrix(&img, b, &AnalysisOptions::default()).unwrap())
        .collect();
    for _ in 0..10 {
        let bi = rng.gen_range(0..banks.len());
        let fi = rng.gen_range(0..mats[bi].matrices.len());
        let (k, l) = (rng.gen_range(0..8), rng.gen_range(0..8));
        let fd = fd_entry(&img, banks[bi], fi, k, l);
        let cf = mats[bi].matrices[fi][k * 8 + l];
        assert!((fd - cf).abs() <= 1e-3 * fd.abs().max(1e-12), "{:?} f{fi} ({k},{l}): fd {fd} closed {cf}", banks[bi]);
    }
}

#[test]
fn entries_are_nonnegative_and_normalize_to_unit_range() {
    let img = random_image(5, 32, 32, 90);
    for bank in [FilterBank::Dct8, FilterBank::Dct4, FilterBank::Srm30] {
        let m = accum_grad_matrix(&img, bank, &AnalysisOptions::default()).unwrap();
        assert_eq!(m.matrices.len(), bank_filters(bank).len());
        assert!(m.matrices.iter().flatten().all(|&v| v >= 0.0));
        for n in m.normalized() {
            let hi = n.iter().cloned().fold(f64::MIN, f64::max);
            let lo = n.iter().cloned().fold(f64::MAX, f64::min);
            assert!((hi - 1.0).abs() < 1e-12 && lo.abs() < 1e-12);
        }
    }
}

#[test]
fn basis_filters_concentrate_on_their_mode_when_block_aligned() {
    let opts = AnalysisOptions {
        block_aligned: true,
        ..AnalysisOptions::default()
    };
    let table = QuantTable::from_quality(75).unwrap();
    let m = accum_grad_matrix_linear(32, 32, &table, FilterBank::Dct8, &opts);
    for (f, mat) in m.matrices.iter().enumerate() {
        for (i, &v) in mat.iter().enumerate() {
            if i == f {
                assert!(v > 1.0, "filter {f}: own mode {v}");
            } else {
                assert!(v.abs() < 1e-9, "filter {f} mode {i}: {v}");
            }
        }
    }
}

#[test]
fn linear_analysis_is_image_independent_without_truncation() {
    let a = random_image(1, 32, 40, 75);
    let b = random_image(2, 32, 40, 75);
    let o = AnalysisOptions::default();
    let ma = accum_grad_matrix(&a, FilterBank::Srm30, &o).unwrap();
    let mb = accum_grad_matrix(&b, FilterBank::Srm30, &o).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(mean_matrices(&[ma.clone(), mb]).unwrap(), ma);
}

#[test]
fn truncation_flag_limits_the_sum() {
    let img = random_image(9, 32, 32, 75);
    let base = accum_grad_matrix(&img, FilterBank::Dct4, &AnalysisOptions::default()).unwrap();
    let wide = AnalysisOptions {
        truncation: Some(1e9),
        ..AnalysisOptions::default()
    };
    let m = accum_grad_matrix(&img, FilterBank::Dct4, &wide).unwrap();
    for (x, y) in base.matrices.iter().flatten().zip(m.matrices.iter().flatten()) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }
    let tight = AnalysisOptions {
        truncation: Some(1e-12),
        ..AnalysisOptions::default()
    };
    let m = accum_grad_matrix(&img, FilterBank::Dct4, &tight).unwrap();
    let (s0, s1): (f64, f64) = (base.matrices.iter().flatten().sum(), m.matrices.iter().flatten().sum());
    assert!(s1 < s0);
}

#[test]
fn top_n_statistics_are_monotone() {
    let table = QuantTable::from_quality(75).unwrap();
    for bank in [FilterBank::Dct8, FilterBank::Dct4, FilterBank::Srm30] {
        let m = accum_grad_matrix_linear(64, 64, &table, bank, &AnalysisOptions::default());
        let st = top_n_stats(&m).unwrap();
        assert_eq!(st.s.len(), 65);
        assert_eq!(st.s[0], 0);
        assert_eq!(st.s[64], 64);
        assert!(st.s.windows(2).all(|w| w[0] <= w[1]));
        for n in 0..=64 {
            assert_eq!(st.rate[n].iter().sum::<usize>(), n * m.matrices.len());
        }
    }
    assert!(top_n_stats(&AccumGradMatrix { bank: "x".into(), matrices: vec![] }).is_err());
}

#[test]
fn dct8_covers_at_least_as_many_modes() {
    let table = QuantTable::from_quality(75).unwrap();
    let s = |b| top_n_stats(&accum_grad_matrix_linear(64, 64, &table, b, &AnalysisOptions::default())).unwrap().s;
    let (d8, d4, srm) = (s(FilterBank::Dct8), s(FilterBank::Dct4), s(FilterBank::Srm30));
    for n in 0..=64 {
        assert!(d8[n] >= d4[n] && d8[n] >= srm[n], "n={n}: {} {} {}", d8[n], d4[n], srm[n]);
    }
    let csv = top_n_csv(&[("dct8".into(), top_n_stats(&accum_grad_matrix_linear(64, 64, &table, FilterBank::Dct8, &AnalysisOptions::default())).unwrap())]);
    assert_eq!(csv.lines().count(), 66);
    assert!(csv.starts_with("n,dct8\n0,0\n"));
}

#[test]
fn dct8_filter_spectra_are_single_modes() {
    for (f, spec) in filter_spectra(FilterBank::Dct8).iter().enumerate() {
        for (i, &v) in spec.iter().enumerate() {
            let want = if i == f { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9);
        }
    }
    assert_eq!(filter_spectra(FilterBank::Srm30).len(), 30);
}

#[test]
fn heatmap_and_pgm_round_trip() {
    let mut m = [0.0; 64];
    m[9] = 3.0;
    let h = matrix_heatmap(&m, 4);
    assert_eq!(h.dims(), (32, 32));
    assert_eq!(*h.get(5, 5), 255);
    assert_eq!(*h.get(0, 0), 0);
    let g = to_gray(&Grid::from_fn(5, 7, |i, j| (i * 7 + j) as f64));
    assert_eq!(decode_pgm(&encode_pgm(&g)).unwrap(), g);
    assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
}

proptest! {
    #[test]
    fn detection_error_is_bounded(c in prop::collection::vec(-10.0f64..10.0, 1..30), s in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let pe = detection_error(&c, &s).unwrap();
        prop_assert!((0.0..=0.5).contains(&pe));
    }

    #[test]
    fn detection_error_ignores_monotone_transforms(c in prop::collection::vec(-5.0f64..5.0, 1..30), s in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let f = |v: &f64| (2.0 * v).exp() + 3.0;
        let pe = detection_error(&c, &s).unwrap();
        let pt = detection_error(&c.iter().map(f).collect::<Vec<_>>(), &s.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(pe, pt);
    }
}
