use super::*;
use rand::Rng;

fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>())
}

#[test]
fn zero_image_gives_zero_features() {
    let ex = FeatureExtractor::<f32>::fallback(FALLBACK_SEED);
    let img = Image::<f32>::filled(16, 12, 3, 0.0);
    let fm = ex.extract(&img).unwrap();
    assert_eq!(fm.layers.len(), 2);
    for l in &fm.layers {
        assert!(l.data.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn layer_shapes_follow_strides() {
    let ex = FeatureExtractor::<f32>::fallback(FALLBACK_SEED);
    assert_eq!(ex.downsampling(), vec![2, 4]);
    assert_eq!(ex.tap_channels(), vec![32, 64]);
    for (w, h) in [(4, 4), (17, 9), (32, 24)] {
        let fm = ex.extract(&Image::filled(w, h, 3, 0.3f32)).unwrap();
        for l in &fm.layers {
            assert_eq!(l.width, w / l.stride);
            assert_eq!(l.height, h / l.stride);
        }
    }
    assert!(matches!(ex.extract(&Image::filled(3, 8, 3, 0.0f32)), Err(Error::InvalidInput(_))));
}

#[test]
fn channel_mismatch_is_invalid_input() {
    let ex = FeatureExtractor::<f32>::fallback(FALLBACK_SEED);
    assert!(matches!(ex.extract(&Image::filled(8, 8, 1, 0.0f32)), Err(Error::InvalidInput(_))));
}

#[test]
fn shift_by_one_stride_shifts_first_layer() {
    let ex = FeatureExtractor::<f64>::fallback(FALLBACK_SEED);
    let big = random_image(34, 34, 3);
    let a = Image::from_fn(32, 32, 3, |x, y, c| big.get(x, y, c));
    let b = Image::from_fn(32, 32, 3, |x, y, c| big.get(x + 2, y, c));
    let fa = ex.extract(&a).unwrap();
    let fb = ex.extract(&b).unwrap();
    let (la, lb) = (&fa.layers[0], &fb.layers[0]);
    let mut max_dev = 0.0f64;
    // receptive field of block 2 spans a few cells; stay well inside
    for y in 3..la.height - 3 {
        for x in 3..la.width - 4 {
            for c in 0..la.channels {
                let va = la.data[(y * la.width + x + 1) * la.channels + c];
                let vb = lb.data[(y * lb.width + x) * lb.channels + c];
                max_dev = max_dev.max((va - vb).abs());
            }
        }
    }
    assert!(max_dev < 1e-5, "{max_dev}");
}

#[test]
fn gradient_matches_finite_differences() {
    let ex = FeatureExtractor::<f64>::fallback(FALLBACK_SEED);
    let img = random_image(8, 8, 11);
    let (fm, cache) = ex.extract_with_cache(&img).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights: Vec<Vec<f64>> = fm
        .layers
        .iter()
        .map(|l| (0..l.data.len()).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let objective = |fm: &FeatureMap<f64>| -> f64 {
        fm.layers
            .iter()
            .zip(&weights)
            .map(|(l, w)| l.data.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let grad = ex.backward(&cache, &weights).unwrap();
    let h = 1e-6;
    let mut num = vec![0.0; img.data.len()];
    for i in 0..img.data.len() {
        let mut p = img.clone();
        p.data[i] += h;
        let mut m = img.clone();
        m.data[i] -= h;
        num[i] = (objective(&ex.extract(&p).unwrap()) - objective(&ex.extract(&m).unwrap())) / (2.0 * h);
    }
    let diff: f64 = num.iter().zip(&grad.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    assert!(diff / norm < 1e-3, "relative error {}", diff / norm);
}

#[test]
fn extraction_is_deterministic() {
    let ex = FeatureExtractor::<f32>::fallback(FALLBACK_SEED);
    let img = random_image(16, 16, 1).cast::<f32>();
    assert_eq!(ex.extract(&img).unwrap(), ex.extract(&img).unwrap());
    assert_eq!(ex, FeatureExtractor::<f32>::fallback(FALLBACK_SEED));
    assert_ne!(ex, FeatureExtractor::<f32>::fallback(7));
}

#[test]
fn weights_round_trip_bytes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.gtfw");
    let p2 = dir.path().join("b.gtfw");
    let ex = FeatureExtractor::<f32>::fallback(FALLBACK_SEED);
    ex.save_weights(&p1).unwrap();
    let loaded = FeatureExtractor::<f32>::load_weights(&p1, DEFAULT_TAPS).unwrap();
    loaded.save_weights(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let img = random_image(16, 16, 2).cast::<f32>();
    assert_eq!(ex.extract(&img).unwrap(), loaded.extract(&img).unwrap());
}

#[test]
fn truncated_weights_name_the_layer() {
    let bytes = FeatureExtractor::<f32>::fallback(FALLBACK_SEED).to_archive().to_bytes();
    let cut = &bytes[..bytes.len() - 10];
    let err = WeightArchive::read_from(&mut &cut[..]).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("block3.conv3"), "{err}");
}

#[test]
fn bad_magic_and_shape_are_format_errors() {
    let mut bytes = FeatureExtractor::<f32>::fallback(FALLBACK_SEED).to_archive().to_bytes();
    bytes[0] = b'X';
    assert!(matches!(WeightArchive::read_from(&mut &bytes[..]), Err(Error::Format(_))));

    let mut a = WeightArchive::default();
    a.push("block1.conv1.weight", vec![4, 2, 3, 3], vec![0.0; 72]);
    let err = FeatureExtractor::<f32>::from_archive(&a, &[0]).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("block1.conv1.weight"));
}

#[test]
fn fallback_filters_are_orthogonal() {
    let a = FeatureExtractor::<f32>::fallback(FALLBACK_SEED).to_archive();
    let e = a.get("block1.conv1.weight").unwrap();
    let (o, n) = (e.shape[0], e.shape[1] * 9);
    for i in 0..o {
        for j in 0..o {
            let d: f64 = (0..n).map(|k| e.data[i * n + k] as f64 * e.data[j * n + k] as f64).sum();
            let want = if i == j { 2.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-5, "{i},{j}: {d}");
        }
    }
}

#[test]
fn normalize_examples() {
    let (v, z) = normalize_features(&[3.0f64, 4.0, 1.0, 0.0, 0.0, 0.0], 2);
    assert_eq!(z, vec![false, false, true]);
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert_eq!(&v[2..4], &[1.0, 0.0]);
    assert_eq!(&v[4..], &[0.0, 0.0]);
}

proptest::proptest! {
    #[test]
    fn normalized_vectors_have_unit_norm(v in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
        let (n, z) = normalize_features(&v, v.len());
        let norm: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if z[0] {
            proptest::prop_assert!(n.iter().all(|&x| x == 0.0));
        } else {
            proptest::prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
