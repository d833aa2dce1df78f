//! Randomized invariants across modules.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use neuropmd::baselines::{KdeModel, TpbModel};
use neuropmd::checkpoint::Checkpoint;
use neuropmd::encoding::{tensor_set_size, Encoding, EncodingConfig, EncodingVariant};
use neuropmd::field::{forward_batch, init_params_seeded, FieldConfig, FieldDensity};
use neuropmd::manifold::{
    tangent_projection, uniform_sample, MarginalManifold, Point, ProductManifoldSpec, SamplingMode,
};
use neuropmd::metrics::{fisher_rao_values, grid_spectrum, nise_values, Density, FrConvention, Integrator};
use neuropmd::objective::{initial_state, Schedule};
use neuropmd::synthetic::{make_covariance, MixtureComponent, MixtureSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec_strategy() -> impl Strategy<Value = ProductManifoldSpec> {
    prop::collection::vec(prop_oneof![Just(MarginalManifold::Circle), Just(MarginalManifold::Sphere2)], 1..4)
        .prop_map(|m| ProductManifoldSpec::new(m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn product_dims_and_volume(spec in spec_strategy()) {
        let m = spec.marginals();
        prop_assert_eq!(spec.intrinsic_dim(), m.iter().map(|m| m.intrinsic_dim()).sum::<usize>());
        prop_assert_eq!(spec.ambient_dim(), m.iter().map(|m| m.ambient_dim()).sum::<usize>());
        let vol: f64 = m.iter().map(|m| match m { MarginalManifold::Circle => TAU, MarginalManifold::Sphere2 => 2.0 * TAU }).product();
        prop_assert!((spec.volume() - vol).abs() <= 1e-12 * vol);
    }

    #[test]
    fn samples_lie_on_the_manifold(spec in spec_strategy(), seed in 0u64..1000, qmc in any::<bool>()) {
        let mode = if qmc && spec.is_torus() { SamplingMode::Qmc } else { SamplingMode::Pseudo };
        let pts: Vec<Point<f64>> = uniform_sample(&spec, 64, &mut ChaCha8Rng::seed_from_u64(seed), mode).unwrap();
        for p in &pts {
            prop_assert_eq!(p.coords.len(), spec.coord_len());
            let mut at = 0;
            for m in spec.marginals() {
                let block = &p.coords[at..at + m.coord_len()];
                match m {
                    MarginalManifold::Circle => prop_assert!((-PI..PI).contains(&block[0])),
                    MarginalManifold::Sphere2 => {
                        let r = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                        prop_assert!((r - 1.0).abs() <= 1e-12);
                    }
                }
                at += m.coord_len();
            }
        }
    }

    #[test]
    fn sphere_projector_trace_is_two(z in -1.0f64..1.0, phi in -PI..PI) {
        let s = (1.0 - z * z).sqrt();
        let p = tangent_projection(MarginalManifold::Sphere2, &[s * phi.cos(), s * phi.sin(), z]);
        prop_assert!((p.diag().sum() - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn encoding_descriptors_are_distinct_eigenpairs(spec in spec_strategy(), seed in 0u64..1000, k in 1usize..40) {
        let max_freq = vec![3; spec.len()];
        let k = k.min(tensor_set_size(&spec, &max_freq));
        let enc = Encoding::from_config(&spec, &EncodingConfig::separable(k, max_freq, seed)).unwrap();
        prop_assert_eq!(enc.len(), k);
        let distinct: HashSet<String> = enc.basis().iter().map(|b| format!("{b:?}")).collect();
        prop_assert_eq!(distinct.len(), k);
        for (b, &l) in enc.basis().iter().zip(enc.eigenvalues()) {
            prop_assert_eq!(b.eigenvalue(), l);
        }
    }

    #[test]
    fn nonseparable_entries_are_eigenfunctions(seed in 0u64..1000) {
        let spec = ProductManifoldSpec::torus(2).unwrap();
        let cfg = EncodingConfig { k: 12, max_freq: vec![4, 4], variant: EncodingVariant::NonseparableTorus, seed };
        let enc = Encoding::from_config(&spec, &cfg).unwrap();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..4 {
            let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
            let at = |a: f64, b: f64| enc.encode(&Point::angles(&[a, b]));
            let c = at(x[0], x[1]);
            let (xp, xm, yp, ym) = (at(x[0] + h, x[1]), at(x[0] - h, x[1]), at(x[0], x[1] + h), at(x[0], x[1] - h));
            for j in 0..enc.len() {
                let lap = (xp[j] + xm[j] + yp[j] + ym[j] - 4.0 * c[j]) / (h * h);
                let exact = -(enc.eigenvalues()[j] as f64) * c[j];
                let scale = (enc.eigenvalues()[j] as f64).max(1.0) * 0.05;
                prop_assert!((lap - exact).abs() <= 1e-4 * exact.abs().max(scale));
            }
        }
    }

    #[test]
    fn seeded_init_is_deterministic(seed in 0u64..1000, width in 1usize..10, depth in 1usize..4) {
        let cfg = FieldConfig { init_seed: seed, ..FieldConfig::new(6, width, depth) };
        let a = init_params_seeded::<f64>(&cfg, TAU).unwrap().flatten();
        let b = init_params_seeded::<f64>(&cfg, TAU).unwrap().flatten();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn cyclic_schedule_hits_its_corners(w_min in 0.0f64..1.0, span in 0.0f64..1.0, period in 1.0f64..100.0, t in 0.0f64..1.0) {
        let s = Schedule::CyclicTriangular { w_min, w_max: w_min + span, period };
        prop_assert!((s.rate(0.0) - w_min).abs() <= 1e-12);
        prop_assert!((s.rate(period) - w_min).abs() <= 1e-12);
        prop_assert!((s.rate(period / 2.0) - (w_min + span)).abs() <= 1e-12);
        let r = s.rate(t * period);
        let tri = if t <= 0.5 { 2.0 * t } else { 2.0 - 2.0 * t };
        prop_assert!((r - (w_min + span * tri)).abs() <= 1e-12);
    }

    #[test]
    fn kde_is_a_density(seed in 0u64..1000, kappa in 0.0f64..50.0, d in 1usize..3) {
        let spec = ProductManifoldSpec::torus(d).unwrap();
        let data = uniform_sample(&spec, 20, &mut ChaCha8Rng::seed_from_u64(seed), SamplingMode::Pseudo).unwrap();
        let kde = KdeModel::new(data, kappa).unwrap();
        let res = if d == 1 { 2048 } else { 256 };
        let (pts, w) = Integrator::grid(d, res).nodes(&spec).unwrap();
        let vals = kde.density_batch(&pts).unwrap();
        prop_assert!(vals.iter().all(|v| *v >= 0.0));
        let mass: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn tpb_matches_the_one_layer_field(seed in 0u64..1000) {
        let spec = ProductManifoldSpec::torus(2).unwrap();
        let len = tensor_set_size(&spec, &[3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tpb = TpbModel::new(&spec, &[3, 3], 2, &coeffs).unwrap();
        let field = tpb.to_field();
        let pts = uniform_sample(&spec, 32, &mut rng, SamplingMode::Pseudo).unwrap();
        let a = tpb.log_density_batch(&pts).unwrap();
        let b = field.log_density_batch(&pts).unwrap();
        for (a, b) in a.iter().zip(&b) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn wrap_window_three_suffices(seed in 0u64..1000, factor in 1.0f64..100.0, m in prop::collection::vec(-PI..PI, 2)) {
        let cov = make_covariance(2, factor, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let c = MixtureComponent { mean: m, covariance: cov, weight: 1.0 };
        let f3 = MixtureSpec::new(vec![c], 3).unwrap();
        let f5 = f3.with_wrap_window(5).unwrap();
        let pts = uniform_sample(&ProductManifoldSpec::torus(2).unwrap(), 32, &mut ChaCha8Rng::seed_from_u64(seed), SamplingMode::Pseudo).unwrap();
        for p in &pts {
            prop_assert!((f3.density_at(p) - f5.density_at(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_weights_must_sum_to_one(w in prop::collection::vec(0.1f64..10.0, 1..5)) {
        let total: f64 = w.iter().sum();
        let build = |scale: f64| MixtureSpec::new(w.iter().enumerate().map(|(i, &w)| MixtureComponent {
            mean: vec![i as f64 * 0.5 - 1.0],
            covariance: vec![vec![0.2]],
            weight: w * scale,
        }).collect(), 3);
        let f = build(1.0 / total).unwrap();
        let sum: f64 = f.components().iter().map(|c| c.weight).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(build(1.1 / total).is_err());
    }

    #[test]
    fn metrics_vanish_only_at_equality(vals in prop::collection::vec(0.01f64..2.0, 16), bump in 0usize..16) {
        let w = vec![1.0 / 16.0; 16];
        let z: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
        let f: Vec<f64> = vals.iter().map(|v| v / z).collect();
        prop_assert!(nise_values(&f, &f, &w).unwrap() < 1e-12);
        let mut g = f.clone();
        g[bump] *= 1.5;
        let zg: f64 = g.iter().zip(&w).map(|(v, w)| v * w).sum();
        g.iter_mut().for_each(|v| *v /= zg);
        prop_assert!(nise_values(&f, &g, &w).unwrap() > 0.0);
        for c in FrConvention::ALL {
            prop_assert!(fisher_rao_values(&f, &f, &w, c) < 1e-6);
            prop_assert!(fisher_rao_values(&f, &g, &w, c) > 0.0);
        }
    }

    #[test]
    fn fisher_rao_shrinks_along_a_mixing_path(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = vec![1.0 / 32.0; 32];
        let normalize = |v: Vec<f64>| { let z: f64 = v.iter().sum::<f64>() / 32.0; v.into_iter().map(|x| x / z).collect::<Vec<_>>() };
        let f = normalize((0..32).map(|_| rng.random_range(0.05..2.0)).collect());
        let g = normalize((0..32).map(|_| rng.random_range(0.05..2.0)).collect());
        for c in FrConvention::ALL {
            let path: Vec<f64> = (0..5).map(|i| {
                let s = i as f64 / 4.0;
                let h = normalize(g.iter().zip(&f).map(|(g, f)| (1.0 - s) * g + s * f).collect());
                fisher_rao_values(&f, &h, &w, c)
            }).collect();
            prop_assert!(path.windows(2).all(|p| p[1] <= p[0] + 1e-12), "{:?}", path);
        }
    }

    #[test]
    fn parseval_holds_on_random_grids(vals in prop::collection::vec(-3.0f64..3.0, 64)) {
        let a = ndarray::Array2::from_shape_vec((8, 8), vals).unwrap();
        let energy: f64 = grid_spectrum(&a).iter().map(|m| m * m).sum();
        let squares: f64 = a.iter().map(|v| v * v).sum();
        prop_assert!((energy - squares).abs() <= 1e-8 * squares.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoints_round_trip_exactly(spec in spec_strategy(), seed in 0u64..1000) {
        let enc_cfg = EncodingConfig::separable(4, vec![2; spec.len()], seed);
        let field_cfg = FieldConfig { init_seed: seed, ..FieldConfig::new(4, 5, 2) };
        let state = initial_state::<f64>(&spec, &enc_cfg, &field_cfg).unwrap();
        let ck = Checkpoint::from_field(&state, &field_cfg, None, seed);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap().field_state::<f64>().unwrap();
        let pts = uniform_sample(&spec, 16, &mut ChaCha8Rng::seed_from_u64(seed), SamplingMode::Pseudo).unwrap();
        let a = forward_batch(&state.params, &state.encoding, &pts).unwrap();
        let b = forward_batch(&back.params, &back.encoding, &pts).unwrap();
        for (a, b) in a.iter().zip(b.iter()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        let f = FieldDensity::new(back.encoding, back.params).unwrap();
        prop_assert_eq!(f.spec(), spec);
    }
}
