use patchreg_core::svf::{self, FieldKind, VectorField};
use patchreg_core::synth::random_smooth_field;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn smooth(seed: u64, size: usize, max: f64) -> VectorField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_smooth_field(&mut rng, size, size, size as f64 / 8.0, max)
}

fn interior_mean_magnitude(f: &VectorField<f64>, border: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for i in border..f.height - border {
        for j in border..f.width - border {
            s += f.magnitude(i, j);
            n += 1.0;
        }
    }
    s / n
}

#[test]
fn exp_of_zero_is_exact_identity() {
    let z = VectorField::<f64>::zeros(32, 32, FieldKind::Velocity);
    let u = svf::exp_field(&z, 7).unwrap();
    assert!(u.data.iter().all(|&v| v == 0.0));
}

/// Largest endpoint difference between 7- and 9-step integration.
fn step_convergence(v: &VectorField<f64>) -> f64 {
    let a = svf::exp_field(v, 7).unwrap();
    let b = svf::exp_field(v, 9).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..a.height {
        for j in 0..a.width {
            worst = worst.max((a.x(i, j) - b.x(i, j)).hypot(a.y(i, j) - b.y(i, j)));
        }
    }
    worst
}

#[test]
fn step_count_self_convergence() {
    let worst = (0..20)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            step_convergence(&random_smooth_field(&mut rng, 32, 32, 8.0, 2.0))
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "7 vs 9 steps differ by {worst}");
}

#[test]
fn constant_fields_form_a_group() {
    for (a, b) in [(1.0, -0.5), (0.7, 1.3), (-1.5, 0.25)] {
        let v = VectorField::<f64>::constant(32, 32, FieldKind::Velocity, a, b);
        let u = svf::exp_field(&v, 7).unwrap();
        let uu = svf::compose(&u, &u).unwrap();
        let u2 = svf::exp_field(&v.scaled(2.0), 7).unwrap();
        for i in 4..28 {
            for j in 4..28 {
                assert!((uu.x(i, j) - u2.x(i, j)).abs() < 1e-4);
                assert!((uu.y(i, j) - u2.y(i, j)).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn inverse_consistency_on_random_fields() {
    let mut total = 0.0;
    for seed in 0..100 {
        let v = smooth(seed, 32, 2.0);
        let fwd = svf::exp_field(&v, 7).unwrap();
        let inv = svf::exp_field(&v.scaled(-1.0), 7).unwrap();
        let r = svf::compose(&inv, &fwd).unwrap();
        total += interior_mean_magnitude(&r, 2);
    }
    let mean = total / 100.0;
    assert!(mean < 0.05, "mean residual {mean}");
}

#[test]
fn integrated_fields_do_not_fold() {
    for seed in 0..100 {
        let v = smooth(1000 + seed, 32, 3.0);
        let u = svf::exp_field(&v, 7).unwrap();
        let jac = svf::jacobian_determinant(&u).unwrap();
        let bad = jac.interior(1).filter(|&d| d <= 0.0).count();
        assert_eq!(bad, 0, "seed {seed}");
    }
}

#[test]
fn resample_units_follow_grid_scale() {
    let f = VectorField::<f64>::constant(8, 8, FieldKind::Displacement, 1.0, -0.5);
    let up = svf::resample(&f, 32, 32).unwrap();
    for i in 0..32 {
        for j in 0..32 {
            assert!((up.x(i, j) - 4.0).abs() < 1e-12);
            assert!((up.y(i, j) + 2.0).abs() < 1e-12);
        }
    }
}
