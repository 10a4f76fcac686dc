use jecrl_wasm_demo::{cost_view, cover_from_rgba, embed_view, gradient_view};

fn rgba(w: usize, h: usize) -> Vec<u8> {
    (0..w * h)
        .flat_map(|n| {
            let (i, j) = (n / w, n % w);
            let v = if j < w / 2 { (60 + i) as u8 } else { ((i * 37 + j * 91) % 200) as u8 + 20 };
            [v, v, v, 255]
        })
        .collect()
}

#[test]
fn covers_are_cropped_to_whole_blocks() {
    let img = cover_from_rgba(&rgba(45, 30), 45, 30, 75).unwrap();
    assert_eq!(img.dims(), (24, 40));
    assert!(cover_from_rgba(&rgba(4, 4), 4, 4, 75).is_err());
    assert!(cover_from_rgba(&[0; 10], 4, 4, 75).is_err());
}

#[test]
fn cost_view_matches_cover_size() {
    let img = cover_from_rgba(&rgba(64, 48), 64, 48, 75).unwrap();
    let v = cost_view(&img);
    assert_eq!((v.height(), v.width()), (48, 64));
    assert_eq!(v.rgba().len(), 4 * 48 * 64);
    assert!(v.summary().contains("UERD"));
}

#[test]
fn embedding_is_seeded() {
    let img = cover_from_rgba(&rgba(64, 64), 64, 64, 90).unwrap();
    let a = embed_view(&img, 0.4, 1).unwrap();
    let b = embed_view(&img, 0.4, 1).unwrap();
    let c = embed_view(&img, 0.4, 2).unwrap();
    assert_eq!(a.gray(), b.gray());
    assert_ne!(a.gray(), c.gray());
    assert!(a.gray().iter().all(|&g| g == 0 || g == 128 || g == 255));
    assert!(embed_view(&img, 100.0, 1).is_err());
}

#[test]
fn gradient_mosaics() {
    let v = gradient_view("dct8", 100).unwrap();
    assert_eq!((v.height(), v.width()), (8 * 33, 8 * 33));
    assert!(v.summary().contains("64 peak"));
    assert_eq!(gradient_view("srm30", 75).unwrap().width(), 6 * 33);
    assert!(gradient_view("sobel", 75).is_err());
}
