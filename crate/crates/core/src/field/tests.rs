use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn spec(n: [usize; 3], channels: usize) -> GridSpec {
    GridSpec::new(n, [-1.0, -0.5, 0.0], [1.0, 0.5, 2.0], channels).unwrap()
}

fn random_dense(spec: GridSpec, rng: &mut ChaCha8Rng) -> VoxelGrid<f64> {
    let vals = (0..spec.dense_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    VoxelGrid::from_dense(spec, vals).unwrap()
}

fn random_interior(spec: &GridSpec, rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|a| rng.random_range(spec.bounds_min[a]..spec.bounds_max[a]))
}

/// Direct eight-corner weighted sum, independent of `Cell`.
fn corner_oracle(grid: &VoxelGrid<f64>, p: [f64; 3], ch: usize) -> f64 {
    let s = grid.spec();
    let h = s.spacing();
    let mut i0 = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let g = ((p[a] - s.bounds_min[a]) / h[a]).clamp(0.0, (s.resolution[a] - 1) as f64);
        let i = (g.floor() as usize).min(s.resolution[a] - 2);
        i0[a] = i;
        t[a] = g - i as f64;
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                acc += w * grid.node_value(i0[0] + dx, i0[1] + dy, i0[2] + dz, ch);
            }
        }
    }
    acc
}

#[test]
fn spec_validation() {
    assert!(GridSpec::new([1, 4, 4], [0.0; 3], [1.0; 3], 1).is_err());
    assert!(GridSpec::new([4, 4, 4], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0], 1).is_err());
    assert!(GridSpec::new([4, 4, 4], [0.0; 3], [1.0; 3], 0).is_err());
}

#[test]
fn constant_grid_interpolates_to_constant() {
    let g = VoxelGrid::dense(spec([4, 5, 6], 2), 0.75f64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<_> = (0..50).map(|_| random_interior(g.spec(), &mut rng)).collect();
    let out = g.trilinear_sample(&pts).unwrap();
    assert!(out.iter().all(|v| (v - 0.75).abs() < 1e-12));
}

#[test]
fn node_positions_return_node_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_dense(spec([4, 4, 4], 3), &mut rng);
    for (ix, iy, iz) in [(0, 0, 0), (1, 2, 3), (3, 3, 3), (2, 0, 1)] {
        let p = g.spec().node_position(ix, iy, iz);
        let v = g.trilinear_sample(&[p]).unwrap();
        for c in 0..3 {
            assert!((v[c] - g.node_value(ix, iy, iz, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn matches_eight_corner_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_dense(spec([4, 4, 4], 2), &mut rng);
    for _ in 0..200 {
        let p = random_interior(g.spec(), &mut rng);
        let v = g.trilinear_sample(&[p]).unwrap();
        for c in 0..2 {
            assert!((v[c] - corner_oracle(&g, p, c)).abs() < 1e-6);
        }
    }
}

#[test]
fn non_finite_points_are_rejected() {
    let g = VoxelGrid::dense(spec([3, 3, 3], 1), 0.0f32).unwrap();
    let err = g.trilinear_sample(&[[0.0, 0.0, 0.5], [f32::NAN, 0.0, 0.0]]).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn clamped_exterior_equals_boundary_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_dense(spec([5, 4, 6], 1), &mut rng);
    for _ in 0..100 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-4.0..4.0));
        let proj = g.spec().clamp_point(p);
        let a = g.trilinear_sample(&[p]).unwrap();
        let b = g.trilinear_sample(&[proj]).unwrap();
        assert_eq!(a, b);
    }
}

fn field_with(density: f64, color: f64) -> RadianceField<f64> {
    RadianceField::dense(&spec([4, 4, 4], 1), density, color, [1.0, 1.0, 1.0]).unwrap()
}

#[test]
fn density_activation_examples() {
    let pts = [[0.1, 0.2, 0.3], [0.9, -0.4, 1.9]];
    let s = field_with(-20.0, 0.0).sample_density(&pts).unwrap();
    assert!(s.iter().all(|&v| (0.0..1e-8).contains(&v)));
    let s = field_with(0.0, 0.0).sample_density(&pts).unwrap();
    assert!(s.iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
}

#[test]
fn color_activation_examples() {
    let pts = [[0.1, 0.2, 0.3]];
    assert_eq!(field_with(0.0, 0.0).sample_color(&pts).unwrap(), vec![[0.5; 3]]);
    let c = field_with(0.0, 20.0).sample_color(&pts).unwrap();
    assert!(c[0].iter().all(|v| (1.0 - v) < 1e-8));
}

#[test]
fn activations_match_oracle_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sp = spec([4, 4, 4], 1);
    let field = RadianceField::new(
        random_dense(sp.with_channels(1), &mut rng),
        random_dense(sp.with_channels(3), &mut rng),
        random_dense(sp.with_channels(3), &mut rng),
        [0.0; 3],
    )
    .unwrap();
    let pts: Vec<_> = (0..64).map(|_| random_interior(&sp, &mut rng)).collect();
    let sig = field.sample_density(&pts).unwrap();
    let col = field.sample_color(&pts).unwrap();
    let def = field.sample_deformation(&pts).unwrap();
    for (i, p) in pts.iter().enumerate() {
        let d = corner_oracle(&field.density, *p, 0);
        assert!((sig[i] - (1.0 + d.exp()).ln()).abs() < 1e-6);
        for c in 0..3 {
            let raw = corner_oracle(&field.color, *p, c);
            assert!((col[i][c] - 1.0 / (1.0 + (-raw).exp())).abs() < 1e-6);
            assert!((def[i][c] - corner_oracle(&field.deformation, *p, c)).abs() < 1e-6);
        }
    }
}

#[test]
fn fresh_deformation_is_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut field = field_with(0.0, 0.0);
    field.deformation = random_dense(spec([4, 4, 4], 3), &mut rng);
    field.init_deformation_zero();
    let pts: Vec<_> = (0..100)
        .map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
        .collect();
    let def = field.sample_deformation(&pts).unwrap();
    for (p, d) in pts.iter().zip(&def) {
        assert_eq!(*d, [0.0; 3]);
        let moved: [f64; 3] = std::array::from_fn(|a| p[a] + d[a]);
        assert_eq!(moved, *p);
    }
}

#[test]
fn constant_deformation_everywhere() {
    let mut field = field_with(0.0, 0.0);
    for (i, v) in field.deformation.params_mut().iter_mut().enumerate() {
        *v = [0.1, -0.2, 0.3][i % 3];
    }
    let d = field.sample_deformation(&[[0.3, 0.1, 1.7], [5.0, 5.0, 5.0]]).unwrap();
    for v in d {
        for (a, b) in v.iter().zip([0.1, -0.2, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn vm_rank_one_ones_reconstructs_three() {
    let sp = GridSpec::new([2, 2, 2], [0.0; 3], [1.0; 3], 1).unwrap();
    let n = factorized_len(&sp, 1);
    let g = VoxelGrid::factorized(sp.clone(), 1, vec![1.0f64; n]).unwrap();
    assert_eq!(g.factorized_reconstruct().unwrap(), vec![3.0; 8]);
    let z = VoxelGrid::factorized(sp.clone(), 1, vec![0.0f64; n]).unwrap();
    assert_eq!(z.factorized_reconstruct().unwrap(), vec![0.0; 8]);
    let d = VoxelGrid::dense(sp, 0.0f64).unwrap();
    assert!(matches!(d.factorized_reconstruct(), Err(Error::Mode(_))));
}

#[test]
fn factorized_sampling_matches_densified() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sp = spec([5, 6, 7], 3);
    let g = VoxelGrid::<f64>::factorized_random(sp, 4, 0.5, &mut rng).unwrap();
    let dense = g.to_dense();
    let pts: Vec<_> = (0..300)
        .map(|_| std::array::from_fn(|a| rng.random_range(-1.5..2.5) * [1.0, 0.5, 1.0][a]))
        .collect();
    let a = g.trilinear_sample(&pts).unwrap();
    let b = dense.trilinear_sample(&pts).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

/// Central differences of `sum_c w_c * value_c` with respect to every parameter.
fn check_param_grad(grid: &VoxelGrid<f64>, p: [f64; 3], w: &[f64]) {
    let cell = grid.locate(p);
    let mut analytic = vec![0.0; grid.params().len()];
    grid.accumulate_grad(&cell, w, &mut analytic);
    let eval = |g: &VoxelGrid<f64>| -> f64 {
        let v = g.trilinear_sample(&[p]).unwrap();
        v.iter().zip(w).map(|(a, b)| a * b).sum()
    };
    let h = 1e-4;
    let mut probe = grid.clone();
    for i in 0..grid.params().len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let fp = eval(&probe);
        probe.params_mut()[i] = orig - h;
        let fm = eval(&probe);
        probe.params_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dense = random_dense(spec([8, 8, 8], 3), &mut rng);
    let fact = VoxelGrid::<f64>::factorized_random(spec([8, 8, 8], 2), 2, 0.7, &mut rng).unwrap();
    for _ in 0..5 {
        let p = random_interior(dense.spec(), &mut rng);
        check_param_grad(&dense, p, &[0.3, -1.2, 0.8]);
        check_param_grad(&fact, p, &[1.1, -0.4]);
    }
}

#[test]
fn point_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dense = random_dense(spec([8, 8, 8], 3), &mut rng);
    let fact = VoxelGrid::<f64>::factorized_random(spec([8, 8, 8], 3), 3, 0.7, &mut rng).unwrap();
    for grid in [&dense, &fact] {
        for _ in 0..50 {
            let p = random_interior(grid.spec(), &mut rng);
            let mut out = [0.0; 3];
            let mut jac = [[0.0; 3]; 3];
            grid.sample_cell_with_jacobian(&grid.locate(p), &mut out, &mut jac);
            for a in 0..3 {
                let h = 1e-6;
                let mut pp = p;
                pp[a] += h;
                let mut pm = p;
                pm[a] -= h;
                let vp = grid.trilinear_sample(&[pp]).unwrap();
                let vm = grid.trilinear_sample(&[pm]).unwrap();
                for c in 0..3 {
                    let fd = (vp[c] - vm[c]) / (2.0 * h);
                    assert!((fd - jac[c][a]).abs() <= 1e-4 * fd.abs().max(1e-2), "{fd} vs {}", jac[c][a]);
                }
            }
        }
    }
}

#[test]
fn clamped_axes_have_zero_positional_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = random_dense(spec([4, 4, 4], 1), &mut rng);
    let mut out = [0.0];
    let mut jac = [[0.0; 3]];
    g.sample_cell_with_jacobian(&g.locate([5.0, 0.1, 0.7]), &mut out, &mut jac);
    assert_eq!(jac[0][0], 0.0);
}

#[test]
fn archive_round_trip_is_exact_for_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sp = spec([4, 5, 3], 1);
    let field = RadianceField::<f32>::new(
        random_dense(sp.clone(), &mut rng).to_dense().cast_params(),
        VoxelGrid::factorized_random(sp.with_channels(3), 2, 1.0, &mut rng).unwrap(),
        VoxelGrid::dense(sp.with_channels(3), 0.0).unwrap(),
        [0.2, 0.4, 0.6],
    )
    .unwrap();
    let mut a = Archive::default();
    field.write_archive(&mut a);
    let bytes = a.to_bytes();
    let back = RadianceField::<f32>::read_archive(&Archive::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
    assert_eq!(field, back);
}

impl VoxelGrid<f64> {
    fn cast_params(&self) -> VoxelGrid<f32> {
        VoxelGrid::from_parts(
            self.spec().clone(),
            self.layout(),
            self.params().iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }
}

#[test]
fn factorized_constant_reconstructs_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = VoxelGrid::<f64>::factorized_constant(spec([4, 5, 3], 2), 3, -1.5, 0.0, &mut rng).unwrap();
    assert!(g.factorized_reconstruct().unwrap().iter().all(|v| (v + 1.5).abs() < 1e-12));
}

#[test]
fn node_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sp = spec([4, 3, 5], 2);
    let g = VoxelGrid::<f64>::factorized_random(sp.clone(), 2, 0.5, &mut rng).unwrap();
    let weights: Vec<f64> = (0..sp.dense_len()).map(|_| rng.random::<f64>() - 0.5).collect();
    let objective = |g: &VoxelGrid<f64>| -> f64 { g.to_dense().params().iter().zip(&weights).map(|(a, b)| a * b).sum() };
    let mut grad = vec![0.0; g.params().len()];
    g.accumulate_node_grad(&weights, &mut grad);
    let h = 1e-6;
    for i in (0..grad.len()).step_by(7) {
        let mut p = g.clone();
        p.params_mut()[i] += h;
        let mut m = g.clone();
        m.params_mut()[i] -= h;
        let num = (objective(&p) - objective(&m)) / (2.0 * h);
        assert!((num - grad[i]).abs() < 1e-6 * (1.0 + num.abs()), "{i}: {num} vs {}", grad[i]);
    }
    let d = g.to_dense();
    let mut gd = vec![0.0; d.params().len()];
    d.accumulate_node_grad(&weights, &mut gd);
    assert_eq!(gd, weights);
}
