use patchreg_core::gradcore::Tape;
use patchreg_core::models::fuse_fields;
use patchreg_core::svf::{self, FieldKind, VectorField};
use patchreg_core::synth::{random_smooth_field, synth_pair};
use patchreg_core::training::{pair_loss_value, train_step, Adam, AugmentationSpec, TrainConfig};
use patchreg_core::{Family, Image, Model, ModelConfig, ScaleConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field(seed: u64, size: usize) -> VectorField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_smooth_field(&mut rng, size, size, size as f64 / 4.0, 1.5)
}

/// Corner-aligned bilinear resample with explicit loops, values rescaled by
/// `new / old` per axis.
fn resample_loops(f: &VectorField<f64>, n: usize) -> VectorField<f64> {
    let (h, w) = (f.height, f.width);
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    VectorField::from_fn(n, n, f.kind, |i, j| {
        let (r0, r1, fy) = coord(i, n, h);
        let (c0, c1, fx) = coord(j, n, w);
        let lerp = |get: &dyn Fn(usize, usize) -> f64| {
            let top = get(r0, c0) * (1.0 - fx) + get(r0, c1) * fx;
            let bot = get(r1, c0) * (1.0 - fx) + get(r1, c1) * fx;
            top * (1.0 - fy) + bot * fy
        };
        (
            lerp(&|a, b| f.x(a, b)) * n as f64 / w as f64,
            lerp(&|a, b| f.y(a, b)) * n as f64 / h as f64,
        )
    })
}

#[test]
fn fusion_matches_loop_oracle() {
    let outs = [field(1, 32), field(2, 16), field(3, 8)];
    let weights = [0.5, 0.3, 0.2];
    let got = fuse_fields(&outs, &weights).unwrap();
    let mut expect = vec![0.0; 2 * 32 * 32];
    for (f, w) in outs.iter().zip(weights) {
        let r = resample_loops(f, 32);
        for (e, v) in expect.iter_mut().zip(&r.data) {
            *e += w * v;
        }
    }
    let worst = got
        .data
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn fusion_with_one_hot_weights_is_child_output() {
    let outs = [field(4, 16), field(5, 32), field(6, 8)];
    let got = fuse_fields(&outs, &[1.0, 0.0, 0.0]).unwrap();
    let child = svf::resample(&outs[0], 32, 32).unwrap();
    for (a, b) in got.data.iter().zip(&child.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn multiscale_model_one_hot_weights() {
    let mut cfg = ModelConfig::desk(Family::PureMlp, 32);
    cfg.scales = vec![
        ScaleConfig::plain(8, 1.0),
        ScaleConfig::plain(4, 0.0),
        ScaleConfig::plain(16, 0.0),
    ];
    let mut m = Model::<f64>::new(&cfg).unwrap();
    m.params.perturb(3, 0.05);
    let p = synth_pair::<f64>(2, 32, 2.0).unwrap();
    let mut tape = Tape::new();
    let f = tape.constant([32, 32], p.fix.data.clone()).unwrap();
    let mv = tape.constant([32, 32], p.mov.data.clone()).unwrap();
    let fused = m.net.velocity(&mut tape, &m.params, f, mv).unwrap().read(&tape);
    let child = m.net.children[0]
        .forward(&mut tape, &m.params, f, mv)
        .unwrap()
        .read(&tape);
    assert_eq!((fused.height, child.height), (8, 4));
    let child = svf::resample(&child, 8, 8).unwrap();
    for (a, b) in fused.data.iter().zip(&child.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn zero_head_loss_is_plain_symmetric_mse() {
    for family in Family::ALL {
        let m = Model::<f64>::new(&ModelConfig::desk(family, 32)).unwrap();
        let p = synth_pair::<f64>(7, 32, 2.0).unwrap();
        let l = pair_loss_value(&m.net, &m.params, &p.fix, &p.mov, &TrainConfig::default()).unwrap();
        let n = p.fix.data.len() as f64;
        let sq = |a: &Image<f64>, b: &Image<f64>| {
            a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * (1.0 / n)
        };
        assert_eq!(l.regularizer, 0.0);
        assert_eq!(l.forward_mse, sq(&p.mov, &p.fix));
        assert_eq!(l.inverse_mse, sq(&p.fix, &p.mov));
        assert_eq!(l.total, l.forward_mse + l.inverse_mse);
    }
}

fn interior_residual(r: &patchreg_core::RegistrationResult<f32>, border: usize) -> f64 {
    let res = svf::compose(&r.disp_inverse, &r.disp_forward).unwrap();
    let mut s = 0.0;
    let mut n = 0.0;
    for i in border..res.height - border {
        for j in border..res.width - border {
            s += res.magnitude(i, j) as f64;
            n += 1.0;
        }
    }
    s / n
}

#[test]
fn trained_models_are_inverse_consistent_at_full_resolution() {
    let pairs: Vec<_> = (0..4).map(|s| synth_pair::<f32>(s, 128, 6.0).unwrap()).collect();
    let batch: Vec<_> = pairs.iter().map(|p| (&p.fix, &p.mov)).collect();
    let cfg = TrainConfig {
        lr: 3e-3,
        augmentation: AugmentationSpec::disabled(),
        ..TrainConfig::default()
    };
    for family in Family::ALL {
        let mut m = Model::<f32>::new(&ModelConfig::desk(family, 128)).unwrap();
        let mut opt = Adam::from_config(&cfg);
        let first = train_step(&mut m, &mut opt, &batch, &cfg).unwrap().total;
        let mut last = first;
        for _ in 0..150 {
            last = train_step(&mut m, &mut opt, &batch, &cfg).unwrap().total;
        }
        assert!(last < first, "{family:?}: loss {first} -> {last}");
        let r = m.register(&pairs[0].fix, &pairs[0].mov).unwrap();
        assert_eq!(r.disp_forward.kind, FieldKind::Displacement);
        assert!(r.disp_forward.max_magnitude() > 0.25, "{family:?}: model did not move");
        let res = interior_residual(&r, 2);
        assert!(res < 0.1, "{family:?}: inverse residual {res}");
    }
}

#[test]
fn presets_hold_reference_values() {
    let m = ModelConfig::multi(Family::SwinTrans);
    let triples: Vec<_> = m
        .scales
        .iter()
        .map(|s| (s.patch, s.window.unwrap(), s.heads.unwrap()))
        .collect();
    assert_eq!(triples, vec![(4, 8, 32), (8, 4, 16), (16, 2, 8)]);
    assert_eq!(
        m.scales.iter().map(|s| s.weight).collect::<Vec<_>>(),
        vec![0.5, 0.3, 0.2]
    );
    for f in Family::ALL {
        assert_eq!(ModelConfig::single(f).dim, 128);
        assert_eq!(ModelConfig::single(f).scales[0].weight, 1.0);
    }
    let mut ps = patchreg_core::ParamSet::<f32>::new(0);
    let net = patchreg_core::models::Network::build(&ModelConfig::single(Family::SwinTrans), &mut ps).unwrap();
    assert_eq!((net.children[0].grid_h, net.children[0].grid_w), (32, 32));
}

#[test]
fn param_count_matches_built_models() {
    let mut configs: Vec<ModelConfig> = patchreg_core::models::PRESETS
        .iter()
        .map(|n| ModelConfig::preset(n).unwrap())
        .collect();
    configs.extend(Family::ALL.map(|f| ModelConfig::desk(f, 64)));
    for cfg in configs {
        let m = Model::<f32>::new(&cfg).unwrap();
        assert_eq!(m.params.numel(), cfg.param_count(), "{:?} {:?}", cfg.family, cfg.scales);
    }
}
