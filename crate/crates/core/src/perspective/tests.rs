use super::*;
use crate::features::FALLBACK_SEED;
use crate::losses::StyleLossConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(w: usize, h: usize, seed: u64) -> StylePair<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>());
    let depth = Image::from_fn(w, h, 1, |x, y, _| 1.0 + 0.1 * x as f64 + 0.05 * y as f64 + 0.2 * rng.random::<f64>());
    StylePair::new(rgb, depth).unwrap()
}

#[test]
fn layout_examples() {
    let l = BinLayout::from_centers(vec![2.0, 4.0, 8.0]).unwrap();
    assert_eq!(l.scales, vec![1.0, 0.5, 0.25]);
    let l1 = bin_depths(&[3.0, 5.0, 4.0], 1).unwrap();
    assert_eq!(l1.scales, vec![1.0]);
    assert!((l1.centers[0] - 4.0).abs() < 1e-12);
    assert!(BinLayout::from_centers(vec![2.0, 2.0]).is_err());
    assert!(bin_depths(&[1.0], 0).is_err());
}

#[test]
fn two_depth_clusters_are_recovered_despite_unequal_counts() {
    let mut z = vec![2.0; 700];
    z.extend(vec![6.0; 300]);
    let l = bin_depths(&z, 2).unwrap();
    assert_eq!(l.centers, vec![2.0, 6.0]);
    assert!((l.scales[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn constant_depth_falls_back_to_one_bin() {
    let l = bin_depths(&[3.0; 50], 3).unwrap();
    assert_eq!(l.len(), 1);
    assert_eq!(l.warnings.len(), 1);
}

#[test]
fn assignment_examples() {
    let l = BinLayout::from_centers(vec![2.0, 6.0]).unwrap();
    assert_eq!(l.assign(3.0), 0);
    assert_eq!(l.assign(4.0), 0);
    assert_eq!(l.assign(4.0001), 1);
    let z = Image::from_fn(4, 2, 1, |x, _, _| if x < 2 { 2.1 } else { 5.9 });
    assert_eq!(assign_pixels(&z, &l), vec![0, 0, 1, 1, 0, 0, 1, 1]);
}

#[test]
fn pyramid_examples() {
    let pair = random_pair(64, 64, 1);
    let layout = BinLayout::from_centers(vec![2.0, 4.0, 32.0]).unwrap();
    let p = build_style_pyramid(&pair, &layout).unwrap();
    assert_eq!(p.levels[0], pair);
    assert_eq!((p.levels[1].width(), p.levels[1].height()), (32, 32));
    assert_eq!((p.levels[2].width(), p.levels[2].height()), (8, 8));
    assert_eq!(p.warnings.len(), 1);

    let flat = StylePair::new(Image::filled(20, 12, 3, 0.25f64), Image::filled(20, 12, 1, 3.0f64)).unwrap();
    let p = build_style_pyramid(&flat, &BinLayout::from_centers(vec![1.0, 1.7]).unwrap()).unwrap();
    for lv in &p.levels {
        assert!(lv.rgb.data.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(lv.depth.data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }
}

#[test]
fn position_majority_ties_to_smaller_bin() {
    let layer = FeatureLayer::new("t", 1, 2, 1, 2, vec![0.0f64; 2]).unwrap();
    // 4x2 pixels: left cell has two of each bin, right cell three of bin 1
    let pix = vec![0, 1, 1, 1, 1, 0, 1, 0];
    assert_eq!(position_bins(&pix, 4, &layer, 2), vec![0, 1]);
}

struct Setup {
    ex: FeatureExtractor<f64>,
    content_rgb: FeatureMap<f64>,
    content_depth: FeatureMap<f64>,
    cfg: StyleLossConfig,
}

fn setup() -> Setup {
    let ex = FeatureExtractor::<f64>::fallback(FALLBACK_SEED);
    let content = random_pair(24, 16, 2);
    Setup {
        content_rgb: ex.extract(&content.rgb).unwrap(),
        content_depth: ex.extract(&render_depth_style_input(&content.depth).unwrap()).unwrap(),
        ex,
        cfg: StyleLossConfig::default(),
    }
}

#[test]
fn single_bin_equals_unaugmented() {
    let s = setup();
    let style = random_pair(32, 24, 3);
    let layout = BinLayout::from_centers(vec![3.0]).unwrap();
    let pyr = build_style_pyramid(&style, &layout).unwrap();
    let feats: Vec<_> = pyr.levels.iter().map(|l| StyleFeatures::extract(&s.ex, l).unwrap()).collect();
    let bins = vec![0; 24 * 16];
    let a = layered_style_loss(&s.content_rgb, Some(&s.content_depth), &bins, &feats, &s.cfg).unwrap();
    let plain = StyleFeatures::extract(&s.ex, &style).unwrap();
    let b = style_loss(&s.content_rgb, Some(&s.content_depth), &plain, &s.cfg).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-6);
    assert!(a.loss > 0.0);
}

#[test]
fn per_bin_contributions_match_masked_losses() {
    let s = setup();
    let levels = [random_pair(32, 24, 4), random_pair(16, 12, 5), random_pair(16, 16, 6)];
    let feats: Vec<_> = levels.iter().map(|l| StyleFeatures::extract(&s.ex, l).unwrap()).collect();
    // left half bin 0, right half bin 1, bin 2 empty
    let bins: Vec<usize> = (0..24 * 16).map(|i| usize::from(i % 24 >= 12)).collect();
    let out = layered_style_loss(&s.content_rgb, Some(&s.content_depth), &bins, &feats, &s.cfg).unwrap();
    assert_eq!(out.per_bin[2], 0.0);
    assert_eq!(out.counts[2], 0);
    for b in 0..2 {
        let mut want = 0.0;
        for (li, layer) in s.content_rgb.layers.iter().enumerate() {
            let sr = &feats[b].rgb.layers[li];
            let patches = s.cfg.content_patches(layer, sr).unwrap();
            // each patch here lies entirely on one side, so masks are exact
            let sel: Vec<usize> = patches
                .patches
                .iter()
                .enumerate()
                .filter(|(_, p)| ((p[0] % layer.width) * layer.stride >= 12) == (b == 1))
                .map(|(i, _)| i)
                .collect();
            let full = s
                .cfg
                .evaluate(layer, Some(&s.content_depth.layers[li]), sr, Some(&feats[b].depth.layers[li]), None)
                .unwrap();
            want += sel.iter().map(|&i| full.result.distances[i]).sum::<f64>() / patches.len() as f64;
        }
        assert!((out.per_bin[b] - want).abs() < 1e-9, "bin {b}: {} vs {want}", out.per_bin[b]);
    }
    assert!((out.loss - out.per_bin.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn layout_serializes() {
    let l = bin_depths(&[1.0, 1.1, 5.0, 5.2], 2).unwrap();
    let back: BinLayout = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
    assert_eq!(back, l);
}
