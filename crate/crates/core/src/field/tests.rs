#![allow(clippy::needless_range_loop)]

use super::*;
use crate::encoding::{BasisFunction, EncodingConfig, EncodingVariant};
use crate::manifold::{uniform_sample, EigenIndex, MarginalManifold, ProductManifoldSpec, SamplingMode};
use approx::assert_relative_eq;
use ndarray::arr2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn torus(d: usize) -> ProductManifoldSpec {
    ProductManifoldSpec::torus(d).unwrap()
}

/// Random architecture with every parameter (biases included) drawn from U(-1, 1).
fn random_net(enc: &Encoding, widths: &[usize], seed: u64) -> FieldParams<f64> {
    let mut w = vec![enc.len()];
    w.extend_from_slice(widths);
    w.push(1);
    let cfg = FieldConfig { widths: w, activation: Activation::Sine, init_seed: seed, first_layer_gain: 1.0 };
    let mut p = FieldParams::zeros(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.assign(&theta).unwrap();
    p
}

fn one_hot(enc: &Encoding, k: usize) -> FieldParams<f64> {
    let mut w = Array2::zeros((1, enc.len()));
    w[[0, k]] = 1.0;
    FieldParams::from_layers(vec![Layer { weight: w, bias: None }], Activation::Sine).unwrap()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn central_diff(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut t = theta.to_vec();
            t[i] += h;
            let up = f(&t);
            t[i] -= 2.0 * h;
            (up - f(&t)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn init_is_bounded_and_deterministic() {
    let cfg = FieldConfig::new(128, 32, 3);
    let vol = torus(2).volume();
    let a: FieldParams<f64> = init_params(&cfg, vol, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b: FieldParams<f64> = init_params(&cfg, vol, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.flatten(), b.flatten());
    let bound = (3.0 * vol / 128.0).sqrt();
    assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= bound));
    let hidden = (6.0f64 / 32.0).sqrt();
    assert!(a.layers()[1].weight.iter().all(|w| w.abs() <= hidden));
    assert!(a.layers()[0].bias.as_ref().unwrap().iter().all(|&b| b == 0.0));
    assert!(a.layers()[2].bias.is_none());
}

#[test]
fn first_layer_preactivations_are_unit_scale() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(128, vec![10, 10], 4)).unwrap();
    let cfg = FieldConfig::new(128, 64, 2);
    let p: FieldParams<f64> = init_params(&cfg, spec.volume(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 1 << 14, &mut ChaCha8Rng::seed_from_u64(2), SamplingMode::Pseudo).unwrap();
    let u = enc.encode_batch(&pts).dot(&p.layers()[0].weight.t());
    for col in u.columns() {
        let m = col.mean().unwrap();
        let sd = (col.mapv(|v| (v - m).powi(2)).mean().unwrap()).sqrt();
        assert!((0.5..=2.0).contains(&sd), "{sd}");
    }
}

#[test]
fn one_hot_linear_readout() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(10, vec![3, 3], 0)).unwrap();
    let x = Point::new(vec![0.7, -2.1]);
    let eta = enc.encode(&x);
    for k in 0..enc.len() {
        assert_relative_eq!(forward(&one_hot(&enc, k), &enc, &x).unwrap(), eta[k], epsilon = 1e-15);
    }
}

#[test]
fn zero_final_layer_gives_zero_field() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(6, vec![2, 2], 0)).unwrap();
    let mut p = random_net(&enc, &[5, 4], 3);
    p.layers_mut()[2].weight.fill(0.0);
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 20, &mut ChaCha8Rng::seed_from_u64(0), SamplingMode::Pseudo).unwrap();
    assert!(forward_batch(&p, &enc, &pts).unwrap().iter().all(|&v| v == 0.0));
    assert!(laplacian_intrinsic_batch(&p, &enc, &pts).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn two_layer_hand_composition() {
    let spec = torus(1);
    let basis = vec![
        BasisFunction::Separable { factors: vec![EigenIndex::Circle { freq: 1, phase: 0 }] },
        BasisFunction::Separable { factors: vec![EigenIndex::Circle { freq: 2, phase: 1 }] },
    ];
    let enc = Encoding::from_basis(spec, basis).unwrap();
    let w1 = arr2(&[[0.5, -1.5], [2.0, 0.25]]);
    let b1 = ndarray::arr1(&[0.1, -0.3]);
    let w2 = arr2(&[[1.2, -0.7]]);
    let p = FieldParams::from_layers(
        vec![Layer { weight: w1, bias: Some(b1) }, Layer { weight: w2, bias: None }],
        Activation::Sine,
    )
    .unwrap();
    let x = 0.9f64;
    let e1 = x.cos() / PI.sqrt();
    let e2 = (2.0 * x).sin() / PI.sqrt();
    let expect = 1.2 * (0.5 * e1 - 1.5 * e2 + 0.1).sin() - 0.7 * (2.0 * e1 + 0.25 * e2 - 0.3).sin();
    assert_relative_eq!(forward(&p, &enc, &Point::new(vec![x])).unwrap(), expect, epsilon = 1e-15);
}

#[test]
fn param_gradient_matches_central_differences() {
    let spec = torus(2);
    for seed in 0..10 {
        let enc = Encoding::from_config(&spec, &EncodingConfig::separable(6, vec![3, 3], seed)).unwrap();
        let p = random_net(&enc, &[5, 4], seed);
        let x = Point::new(vec![0.3 * seed as f64 - 1.0, 1.1]);
        let g = param_gradient(&p, &enc, &x).unwrap();
        let theta = p.flatten();
        let fd = central_diff(&theta, 1e-5, |t| {
            let mut q = p.clone();
            q.assign(t).unwrap();
            forward(&q, &enc, &x).unwrap()
        });
        for (a, b) in g.iter().zip(&fd) {
            assert!(rel_err(*a, *b, 1e-3) < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn linear_gradient_is_the_encoding() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(7, vec![2, 2], 1)).unwrap();
    let p = random_net(&enc, &[], 5);
    let x = Point::new(vec![-0.4, 2.0]);
    let g = param_gradient(&p, &enc, &x).unwrap();
    for (a, b) in g.iter().zip(enc.encode(&x)) {
        assert_relative_eq!(*a, b, epsilon = 1e-15);
    }
    let v = forward(&p, &enc, &x).unwrap();
    let gd = density_param_gradient(&p, &enc, &x).unwrap();
    for (a, b) in gd.iter().zip(&g) {
        assert_relative_eq!(*a, v.exp() * b, epsilon = 1e-14);
    }
}

#[test]
fn one_hot_laplacian_is_minus_eigenvalue() {
    let spec = torus(3);
    for variant in [EncodingVariant::Separable, EncodingVariant::NonseparableTorus] {
        let cfg = EncodingConfig { k: 20, max_freq: vec![5, 5, 5], variant, seed: 9 };
        let enc = Encoding::from_config(&spec, &cfg).unwrap();
        let x = Point::new(vec![0.2, -0.9, 2.7]);
        let eta = enc.encode(&x);
        for k in 0..enc.len() {
            let lap = laplacian_intrinsic(&one_hot(&enc, k), &enc, &x).unwrap();
            let exact = -(enc.eigenvalues()[k] as f64) * eta[k];
            assert!(rel_err(lap, exact, 1e-3) < 1e-5);
        }
    }
}

fn fourth_order_laplacian(p: &FieldParams<f64>, enc: &Encoding, x: &Point<f64>, h: f64) -> f64 {
    let f = |q: &Point<f64>| forward(p, enc, q).unwrap();
    (0..x.coords.len())
        .map(|d| {
            let at = |t: f64| {
                let mut q = x.clone();
                q.coords[d] += t;
                f(&q)
            };
            (-at(2.0 * h) + 16.0 * at(h) - 30.0 * f(x) + 16.0 * at(-h) - at(-2.0 * h)) / (12.0 * h * h)
        })
        .sum()
}

#[test]
fn intrinsic_laplacian_matches_stencil() {
    let spec = torus(2);
    for seed in 0..5 {
        let enc = Encoding::from_config(&spec, &EncodingConfig::separable(8, vec![3, 3], seed)).unwrap();
        let p = random_net(&enc, &[8, 6], seed + 10);
        let x = Point::new(vec![0.5, -1.3 + 0.4 * seed as f64]);
        let jet = laplacian_intrinsic(&p, &enc, &x).unwrap();
        let fd = fourth_order_laplacian(&p, &enc, &x, 1e-3);
        assert!(rel_err(jet, fd, 1e-2) < 1e-5, "{jet} vs {fd}");
    }
}

#[test]
fn intrinsic_rejects_spheres() {
    let spec = ProductManifoldSpec::new(vec![MarginalManifold::Sphere2]).unwrap();
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(4, vec![2], 0)).unwrap();
    let p = one_hot(&enc, 1);
    assert!(laplacian_intrinsic(&p, &enc, &Point::new(vec![0.0, 0.0, 1.0])).is_err());
}

#[test]
fn extrinsic_sphere_eigenvalues() {
    let spec = ProductManifoldSpec::new(vec![MarginalManifold::Sphere2]).unwrap();
    let enc = Encoding::full_tensor(&spec, &[4]).unwrap();
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 6, &mut ChaCha8Rng::seed_from_u64(5), SamplingMode::Pseudo).unwrap();
    let mut pts = pts;
    pts.push(Point::new(vec![0.0, 0.0, 1.0]));
    pts.push(Point::new(vec![1.0, 0.0, 0.0]));
    for k in 0..enc.len() {
        let p = one_hot(&enc, k);
        let lap = laplacian_extrinsic_batch(&p, &enc, &pts, DEFAULT_STEP).unwrap();
        for (x, l) in pts.iter().zip(lap.iter()) {
            let exact = -(enc.eigenvalues()[k] as f64) * enc.encode(x)[k];
            // floor at the harmonic's scale so nodal points do not dominate
            assert!(rel_err(*l, exact, 0.05 * enc.eigenvalues()[k].max(1) as f64) < 1e-3, "{k} {l} {exact}");
        }
    }
}

#[test]
fn extrinsic_matches_intrinsic_on_torus() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(8, vec![3, 3], 2)).unwrap();
    let p = random_net(&enc, &[8], 4);
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 10, &mut ChaCha8Rng::seed_from_u64(1), SamplingMode::Pseudo).unwrap();
    let a = laplacian_intrinsic_batch(&p, &enc, &pts).unwrap();
    let b = laplacian_extrinsic_batch(&p, &enc, &pts, DEFAULT_STEP).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!(rel_err(*y, *x, 1.0) < 1e-3, "{x} {y}");
    }
}

#[test]
fn extrinsic_constant_field_and_bad_step() {
    let spec = ProductManifoldSpec::new(vec![MarginalManifold::Sphere2, MarginalManifold::Circle]).unwrap();
    let enc = Encoding::full_tensor(&spec, &[0, 0]).unwrap();
    let p = one_hot(&enc, 0);
    let x = Point::new(vec![0.0, 0.6, 0.8, 1.0]);
    assert!(laplacian_extrinsic(&p, &enc, &x, DEFAULT_STEP).unwrap().abs() < 1e-8);
    assert!(laplacian_extrinsic(&p, &enc, &x, 0.0).is_err());
    assert!(laplacian_extrinsic(&p, &enc, &x, -1e-3).is_err());
}

#[test]
fn zero_tau_penalty_gradient() {
    let spec = torus(1);
    let enc = Encoding::full_tensor(&spec, &[2]).unwrap();
    let p = random_net(&enc, &[3], 0);
    let pts = vec![Point::new(vec![0.1])];
    let g = penalty_param_gradient(&p, &enc, &pts, 0.0, PenaltyMethod::Intrinsic).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

fn penalty_value(p: &FieldParams<f64>, enc: &Encoding, pts: &[Point<f64>], tau: f64, m: PenaltyMethod) -> f64 {
    let lap = laplacian_batch(p, enc, pts, m).unwrap();
    tau * enc.spec().volume() * lap.mapv(|l| l * l).mean().unwrap()
}

#[test]
fn penalty_gradient_matches_central_differences() {
    let spec = torus(1);
    let enc = Encoding::full_tensor(&spec, &[2]).unwrap();
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 6, &mut ChaCha8Rng::seed_from_u64(3), SamplingMode::Pseudo).unwrap();
    for (method, h_theta) in [(PenaltyMethod::Intrinsic, 1e-5), (PenaltyMethod::Extrinsic { h: 1e-2 }, 1e-4)] {
        for seed in 0..4 {
            let p = random_net(&enc, &[4, 3], seed);
            let g = penalty_param_gradient(&p, &enc, &pts, 0.3, method).unwrap();
            let fd = central_diff(&p.flatten(), h_theta, |t| {
                let mut q = p.clone();
                q.assign(t).unwrap();
                penalty_value(&q, &enc, &pts, 0.3, method)
            });
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b, 1e-3 * scale) < 1e-4, "{method:?} {a} vs {b}");
            }
        }
    }
}

/// v = sum_k w_k psi_k, Lap v = -sum_k w_k lambda_k psi_k, so
/// d/dw_k [Vol mean (Lap v)^2] = Vol mean[2 (Lap v)(-lambda_k psi_k)].
#[test]
fn linear_penalty_gradient_closed_form() {
    let spec = torus(1);
    let enc = Encoding::full_tensor(&spec, &[3]).unwrap();
    let p = random_net(&enc, &[], 7);
    let w = p.flatten();
    let pts: Vec<Point<f64>> =
        uniform_sample(&spec, 16, &mut ChaCha8Rng::seed_from_u64(4), SamplingMode::Pseudo).unwrap();
    let g = penalty_param_gradient(&p, &enc, &pts, 1.0, PenaltyMethod::Intrinsic).unwrap();
    let vol = 2.0 * PI;
    for k in 0..enc.len() {
        let mut acc = 0.0;
        for x in &pts {
            let eta = enc.encode(x);
            let lap: f64 = (0..enc.len()).map(|j| -w[j] * enc.eigenvalues()[j] as f64 * eta[j]).sum();
            acc += 2.0 * lap * (-(enc.eigenvalues()[k] as f64) * eta[k]);
        }
        assert_relative_eq!(g[k], vol * acc / pts.len() as f64, epsilon = 1e-10, max_relative = 1e-12);
    }
}

#[test]
fn relu_rejects_penalty() {
    let spec = torus(1);
    let enc = Encoding::full_tensor(&spec, &[1]).unwrap();
    let mut cfg = FieldConfig::new(3, 4, 2);
    cfg.activation = Activation::Relu;
    let p: FieldParams<f64> = init_params_seeded(&cfg, spec.volume()).unwrap();
    let pts = vec![Point::new(vec![0.0])];
    assert!(penalty_param_gradient(&p, &enc, &pts, 1.0, PenaltyMethod::Intrinsic).is_err());
    assert!(forward(&p, &enc, &pts[0]).is_ok());
}

#[test]
fn relu_gradient_matches_central_differences() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(5, vec![2, 2], 1)).unwrap();
    let mut p = random_net(&enc, &[6], 2);
    p.activation = Activation::Relu;
    let x = Point::new(vec![0.4, 0.1]);
    let g = param_gradient(&p, &enc, &x).unwrap();
    let fd = central_diff(&p.flatten(), 1e-7, |t| {
        let mut q = p.clone();
        q.assign(t).unwrap();
        forward(&q, &enc, &x).unwrap()
    });
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn single_precision_forward_tracks_double() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(6, vec![3, 3], 0)).unwrap();
    let p64 = random_net(&enc, &[5], 1);
    let cfg = p64.config(0);
    let p32: FieldParams<f32> =
        FieldParams::unflatten(&cfg, &p64.flatten().iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap();
    let x64 = Point::new(vec![0.3, -0.8]);
    let x32 = Point::new(vec![0.3f32, -0.8]);
    let a = forward(&p64, &enc, &x64).unwrap();
    let b = forward(&p32, &enc, &x32).unwrap();
    assert!((a - b as f64).abs() < 1e-5);
    let la = laplacian_intrinsic(&p64, &enc, &x64).unwrap();
    let lb = laplacian_intrinsic(&p32, &enc, &x32).unwrap();
    assert!((la - lb as f64).abs() < 1e-3 * la.abs().max(1.0));
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let spec = torus(2);
    let enc = Encoding::from_config(&spec, &EncodingConfig::separable(8, vec![3, 3], 0)).unwrap();
    let cfg = FieldConfig { init_seed: 17, ..FieldConfig::new(8, 16, 3) };
    let a: FieldParams<f64> = init_params_seeded(&cfg, spec.volume()).unwrap();
    let b: FieldParams<f64> = init_params_seeded(&cfg, spec.volume()).unwrap();
    let pts: Vec<Point<f64>> = uniform_sample(&spec, 33, &mut ChaCha8Rng::seed_from_u64(0), SamplingMode::Qmc).unwrap();
    assert_eq!(forward_batch(&a, &enc, &pts).unwrap(), forward_batch(&b, &enc, &pts).unwrap());
    assert_eq!(laplacian_intrinsic_batch(&a, &enc, &pts).unwrap(), laplacian_intrinsic_batch(&b, &enc, &pts).unwrap());
}

#[test]
fn first_layer_gain_scales_only_the_first_layer() {
    let base = FieldConfig { init_seed: 4, ..FieldConfig::new(8, 6, 3) };
    let scaled = FieldConfig { first_layer_gain: 0.25, ..base.clone() };
    let a: FieldParams<f64> = init_params_seeded(&base, 1.0).unwrap();
    let b: FieldParams<f64> = init_params_seeded(&scaled, 1.0).unwrap();
    for (x, y) in a.layers()[0].weight.iter().zip(b.layers()[0].weight.iter()) {
        assert!((0.25 * x - y).abs() < 1e-14);
    }
    assert_eq!(b.layers()[1..], a.layers()[1..]);
    assert!(FieldConfig { first_layer_gain: 0.0, ..base }.validate().is_err());
}

#[test]
fn mismatched_encoding_is_rejected() {
    let spec = torus(1);
    let enc = Encoding::full_tensor(&spec, &[2]).unwrap();
    let p: FieldParams<f64> = FieldParams::zeros(&FieldConfig::new(4, 3, 2)).unwrap();
    assert!(forward(&p, &enc, &Point::new(vec![0.0])).is_err());
}

proptest! {
    #[test]
    fn flatten_round_trips(seed in 0u64..1000) {
        let enc = Encoding::full_tensor(&torus(1), &[2]).unwrap();
        let p = random_net(&enc, &[4, 3], seed);
        let q = FieldParams::unflatten(&p.config(0), &p.flatten()).unwrap();
        prop_assert_eq!(p, q);
    }

    /// An affine layer acts componentwise on (value, grad, second): feeding
    /// the jets of eta through a one-layer net equals W applied to each
    /// component of the encoding jets.
    #[test]
    fn jets_through_affine_layer_are_componentwise(seed in 0u64..200, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = torus(2);
        let enc = Encoding::from_config(&spec, &EncodingConfig::separable(6, vec![3, 3], seed)).unwrap();
        let p = random_net(&enc, &[], seed);
        let x = Point::new(vec![a, b]);
        let jets = enc.encode_jets(std::slice::from_ref(&x)).unwrap();
        let tape = Tape::forward(&p, jets.clone());
        let w = p.layers()[0].weight.row(0);
        for c in 0..jets.len() {
            let expect = jets[c].row(0).dot(&w);
            prop_assert!((tape.output(c)[0] - expect).abs() < 1e-12);
        }
    }
}
