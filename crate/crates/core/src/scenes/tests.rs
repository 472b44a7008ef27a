use super::*;
use crate::render::{render_rays, render_view, RenderOptions};

fn small_sphere_spec() -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        resolution: [48; 3],
        camera: CameraArc {
            width: 24,
            height: 24,
            ..Default::default()
        },
        render: RenderOptions {
            n_samples: 96,
            ..Default::default()
        },
        ..SyntheticSceneSpec::two_tone_sphere()
    }
}

#[test]
fn sphere_center_depth_matches_analytic() {
    let spec = small_sphere_spec();
    let (ds, field) = generate_scene::<f64>(&spec, 1).unwrap();
    let cam = &ds.frames[0].camera;
    let d = ds.frames[0].depth.as_ref().unwrap();
    // even-sized image: average the four center pixels' rays is unnecessary,
    // render the exact center ray instead
    let ray = cam.ray::<f64>(12.0, 12.0);
    let out = render_rays(&field, &[ray], &spec.render, 0, false).unwrap();
    let analytic = spec.camera.distance - 0.5;
    // ray enters the [-1,1] box at distance - 1 and leaves at distance + 1
    let interval = 2.0 / spec.render.n_samples as f64;
    assert!((out[0].depth - analytic).abs() < interval, "{} vs {analytic}", out[0].depth);
    assert!(d.data.iter().all(|v| v.is_finite()));
}

#[test]
fn generation_is_deterministic() {
    let mut spec = small_sphere_spec();
    spec.color_noise = 0.05;
    spec.seed = 9;
    let a = generate_scene::<f32>(&spec, 3).unwrap();
    let b = generate_scene::<f32>(&spec, 3).unwrap();
    assert_eq!(a, b);
    spec.seed = 10;
    assert_ne!(a.1, generate_scene::<f32>(&spec, 3).unwrap().1);
}

#[test]
fn rays_missing_the_scene_return_background_exactly() {
    let spec = small_sphere_spec();
    let field = voxelize::<f64>(&spec).unwrap();
    let cam = Camera::look_at(
        Intrinsics::from_fov(4, 4, 30.0),
        [0.0, 0.0, 3.0],
        [0.0, 0.0, 10.0],
        [0.0, 1.0, 0.0],
    )
    .unwrap();
    let v = render_view(&field, &cam, &RenderOptions::default(), false).unwrap();
    for px in v.rgb.data.chunks(3) {
        assert_eq!(px, &spec.background);
    }
}

#[test]
fn empty_scene_is_rejected() {
    let spec = SyntheticSceneSpec {
        primitives: vec![],
        ..Default::default()
    };
    assert!(matches!(voxelize::<f32>(&spec), Err(Error::InvalidInput(_))));
    let outside = SyntheticSceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Sphere {
                center: [0.9, 0.0, 0.0],
                radius: 0.5,
            },
            albedo: [0.5; 3],
            texture: None,
        }],
        ..Default::default()
    };
    assert!(voxelize::<f32>(&outside).is_err());
}

#[test]
fn dataset_round_trip() {
    let spec = small_sphere_spec();
    let (ds, field) = generate_scene::<f32>(&spec, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_dataset(&ds, &a).unwrap();
    let loaded = load_dataset::<f32>(&a).unwrap();
    save_dataset(&loaded, &b).unwrap();
    assert_eq!(
        std::fs::read(a.join(MANIFEST_NAME)).unwrap(),
        std::fs::read(b.join(MANIFEST_NAME)).unwrap()
    );
    assert_eq!(loaded.cameras(), ds.cameras());
    for (f, g) in loaded.frames.iter().zip(&ds.frames) {
        assert_eq!(f.depth, g.depth);
        let diff = f.image.data.iter().zip(&g.image.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff <= 0.5 / 255.0 + 1e-6);
        let r1 = render_view(&field, &f.camera, &spec.render, false).unwrap();
        let r2 = render_view(&field, &g.camera, &spec.render, false).unwrap();
        assert_eq!(r1, r2);
    }
}

#[test]
fn manifest_validation_errors() {
    let spec = small_sphere_spec();
    let (ds, _) = generate_scene::<f32>(&spec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let mut m = read_manifest(dir.path()).unwrap();
    for r in 0..3 {
        m.frames[0].transform[r][0] *= -1.0;
    }
    write_manifest(dir.path(), &m).unwrap();
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("invalid pose"), "{err}");

    let empty = tempfile::tempdir().unwrap();
    let err = load_dataset::<f32>(empty.path()).unwrap_err();
    assert!(err.to_string().contains(MANIFEST_NAME));

    let mut m = read_manifest(dir.path()).unwrap();
    m.intrinsics.width += 1;
    write_manifest(dir.path(), &m).unwrap();
    assert!(load_dataset::<f32>(dir.path()).is_err());
}

fn quantized_rgb(w: usize, h: usize) -> Image<f32> {
    Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 13 + c * 29) % 256) as f32 / 255.0)
}

#[test]
fn style_pair_loading() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = quantized_rgb(16, 12);
    let depth = Image::from_fn(16, 12, 1, |x, y, _| 1.0 + 0.1 * x as f32 + 0.01 * y as f32);
    let rp = dir.path().join("style.png");
    let dp = dir.path().join(format!("style.{DEPTH_SIDECAR_EXT}"));
    write_png_rgb(&rp, &rgb).unwrap();
    write_depth_sidecar(&dp, &depth).unwrap();
    let (pair, warnings) = load_style_pair::<f32>(&rp, Some(&dp)).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(pair.rgb, rgb);
    assert_eq!(pair.depth, depth);

    let half = Image::from_fn(8, 6, 1, |_, _, _| 1.5f32);
    let hp = dir.path().join("half.png");
    write_depth_png16(&hp, &half).unwrap();
    let (pair, warnings) = load_style_pair::<f32>(&rp, Some(&hp)).unwrap();
    assert_eq!(warnings.len(), 1);
    assert_eq!((pair.depth.width, pair.depth.height), (16, 12));
    assert!(pair.depth.data.iter().all(|&v| (v - 0.5).abs() < 1e-4));

    let err = load_style_pair::<f32>(&rp, Some(&dir.path().join("nope.png"))).unwrap_err();
    assert!(err.to_string().contains("required"), "{err}");
    let err = load_style_pair::<f32>(&rp, None).unwrap_err();
    assert!(err.to_string().contains("required"));
}

#[test]
fn truncated_sidecar_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.depth");
    write_depth_sidecar(&p, &Image::filled(4, 4, 1, 2.0f32)).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_depth_sidecar::<f32>(&p), Err(Error::Format(_))));
}

#[test]
fn procedural_styles_are_valid_and_seeded() {
    for kind in StyleKind::ALL {
        let a = procedural_style::<f32>(kind, 32, 24, 1).unwrap();
        assert_eq!(a, procedural_style::<f32>(kind, 32, 24, 1).unwrap());
        assert!(a.rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.depth.data.iter().all(|v| (1.0..=2.0).contains(v)));
        assert_eq!(StyleKind::parse(kind.name()), Some(kind));
    }
}

#[test]
fn scene_spec_json_round_trip() {
    let spec = SyntheticSceneSpec::default();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<SyntheticSceneSpec>(&text).unwrap(), spec);
}
