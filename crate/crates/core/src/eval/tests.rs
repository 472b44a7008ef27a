use proptest::prelude::*;

use super::*;
use crate::features::FeatureExtractor;
use crate::render::RenderOptions;
use crate::scenes::{generate_scene, SyntheticSceneSpec};

fn texture(w: usize, h: usize, phase: f64) -> Image<f64> {
    Image::from_fn(w, h, 3, |x, y, c| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.3 * ((0.4 * x + 0.25 * y + phase + c as f64).sin() * (0.3 * y - 0.2 * x).cos())
    })
}

#[test]
fn identical_images_score_zero() {
    let m = Sifid::<f64>::fallback();
    let a = texture(24, 20, 0.0);
    assert!(m.distance(&a, &a).unwrap() < 1e-6);
}

#[test]
fn distance_is_symmetric() {
    let m = Sifid::<f64>::fallback();
    let a = texture(24, 24, 0.0);
    let b = texture(20, 28, 1.3);
    let ab = m.distance(&a, &b).unwrap();
    let ba = m.distance(&b, &a).unwrap();
    assert!(ab > 0.0);
    assert!((ab - ba).abs() < 1e-6);
}

/// Interior feature of a constant image, computed directly from the weights.
fn constant_feature(ex: &FeatureExtractor<f64>, color: [f64; 3]) -> Vec<f64> {
    let archive = ex.to_archive();
    let mut v = color.to_vec();
    for k in 1..=2 {
        let w = archive.get(&format!("block1.conv{k}.weight")).unwrap();
        let b = archive.get(&format!("block1.conv{k}.bias")).unwrap();
        let (out, inp) = (w.shape[0], w.shape[1]);
        v = (0..out)
            .map(|o| {
                let mut s = b.data[o] as f64;
                for i in 0..inp {
                    let taps: f64 = (0..9).map(|t| w.data[(o * inp + i) * 9 + t] as f64).sum();
                    s += taps * v[i];
                }
                s.max(0.0)
            })
            .collect();
    }
    v
}

#[test]
fn constant_images_reduce_to_mean_distance() {
    let m = Sifid::<f64>::fallback();
    let (ca, cb) = ([0.8, 0.2, 0.3], [0.1, 0.6, 0.9]);
    let a = Image::from_fn(16, 16, 3, |_, _, c| ca[c]);
    let b = Image::from_fn(16, 16, 3, |_, _, c| cb[c]);
    let fa = constant_feature(m.extractor(), ca);
    let fb = constant_feature(m.extractor(), cb);
    let want: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum();
    let got = m.distance(&a, &b).unwrap();
    assert!(want > 0.0);
    assert!((got - want).abs() < 1e-6 * want.max(1.0), "{got} vs {want}");
    let s = m.stats(&a).unwrap();
    assert!(s.covariance.iter().all(|v| v.abs() < 1e-12));
}

fn rotate_hue(img: &Image<f64>, angle: f64) -> Image<f64> {
    let mut out = img.clone();
    let (c, s) = (angle.cos(), angle.sin());
    for p in out.data.chunks_exact_mut(3) {
        let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        let i = 0.595716 * p[0] - 0.274453 * p[1] - 0.321263 * p[2];
        let q = 0.211456 * p[0] - 0.522591 * p[1] + 0.311135 * p[2];
        let (i2, q2) = (c * i - s * q, s * i + c * q);
        p[0] = y + 0.9563 * i2 + 0.6210 * q2;
        p[1] = y - 0.2721 * i2 - 0.6474 * q2;
        p[2] = y - 1.1070 * i2 + 1.7046 * q2;
    }
    out
}

#[test]
fn hue_rotation_hurts_rgb_more_than_gray() {
    let m = Sifid::<f64>::fallback();
    let a = Image::from_fn(24, 24, 3, |x, y, c| {
        let t = ((x / 6 + y / 6) % 3) as f64;
        [[0.8, 0.3, 0.2], [0.2, 0.7, 0.3], [0.3, 0.3, 0.8]][t as usize][c]
    });
    let b = rotate_hue(&a, 2.0);
    let rgb = m.distance(&a, &b).unwrap();
    let gray = m.distance(&grayscale(&a).unwrap(), &grayscale(&b).unwrap()).unwrap();
    assert!(gray < rgb, "gray {gray} rgb {rgb}");
}

#[test]
fn grayscale_uses_bt601() {
    let img = Image::from_vec(1, 1, 3, vec![1.0, 0.5, 0.25]).unwrap();
    let g = grayscale(&img).unwrap();
    let want: f64 = 0.299 + 0.587 * 0.5 + 0.114 * 0.25;
    assert!(g.data.iter().all(|v| (v - want).abs() < 1e-15));
}

#[test]
fn few_positions_use_shrinkage() {
    let m = Sifid::<f64>::fallback();
    let a = texture(3, 3, 0.0);
    let b = texture(3, 3, 2.0);
    let s = m.stats(&a).unwrap();
    assert!(s.samples < 16 && s.shrinkage > 0.0);
    let d = m.distance(&a, &b).unwrap();
    assert!(d.is_finite() && d >= 0.0);
}

#[test]
fn blending_toward_target_does_not_increase_distance() {
    let m = Sifid::<f64>::fallback();
    let (ca, cb) = ([0.9, 0.1, 0.2], [0.2, 0.5, 0.8]);
    let b = Image::from_fn(16, 16, 3, |_, _, c| cb[c]);
    let mut prev = f64::INFINITY;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let a = Image::from_fn(16, 16, 3, |_, _, c| (1.0 - t) * ca[c] + t * cb[c]);
        let d = m.distance(&a, &b).unwrap();
        assert!(d <= prev + 1e-9);
        prev = d;
    }
    assert!(prev < 1e-9);
}

#[test]
fn report_means_and_serialization() {
    let views = vec![
        ViewScores { view: 0, rgb: 1.0, gray: 0.5, depth: 2.0 },
        ViewScores { view: 1, rgb: 3.0, gray: 0.25, depth: 4.0 },
        ViewScores { view: 2, rgb: 2.0, gray: 0.75, depth: 0.0 },
    ];
    let r = MetricReport::from_views("x".into(), "block1".into(), views).unwrap();
    assert_eq!(r.mean.rgb, 2.0);
    assert_eq!(r.mean.gray, 0.5);
    assert_eq!(r.mean.depth, 2.0);
    let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let table = r.to_table();
    assert!(table.contains("RGB") && table.contains("Gray") && table.contains("Depth") && table.contains("mean"));
    assert!(MetricReport::from_views("x".into(), "l".into(), vec![]).is_err());
}

#[test]
fn self_rendered_style_scores_near_zero() {
    let mut spec = SyntheticSceneSpec::two_tone_sphere();
    spec.resolution = [16; 3];
    spec.camera.width = 24;
    spec.camera.height = 24;
    let (data, field) = generate_scene::<f64>(&spec, 2).unwrap();
    let opts = RenderOptions {
        n_samples: 32,
        ..Default::default()
    };
    let cam = data.frames[0].camera.clone();
    let v = render_view(&field, &cam, &opts, false).unwrap();
    let style = StylePair::new(v.rgb, v.depth).unwrap();
    let m = Sifid::<f64>::fallback();
    let r = evaluate_scene(&field, &[cam], &style, &m, &opts).unwrap();
    assert!(r.mean.rgb < 1e-4 && r.mean.gray < 1e-4 && r.mean.depth < 1e-4, "{r:?}");
    assert_eq!(r.extractor, "fallback-seed42");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn scores_are_non_negative_and_symmetric(p1 in 0.0f64..6.0, p2 in 0.0f64..6.0) {
        let m = Sifid::<f64>::fallback();
        let a = texture(12, 12, p1);
        let b = texture(12, 12, p2);
        let ab = m.distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - m.distance(&b, &a).unwrap()).abs() < 1e-6);
    }
}
