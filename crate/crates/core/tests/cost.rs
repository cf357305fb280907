use elastic_core::arch::{preset, selastic_transform, PRESET_NAMES};
use elastic_core::cost::{
    elastic_cost_floor, model_cost, model_cost_at, random_query, conv_method_cost, verify_elastic_bound, CostQuery, Exact,
    Method, CONVENTION,
};
use elastic_core::network::Network;
use elastic_core::tensor::{Graph, NormMode, Shape, Tensor};
use elastic_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn query(method: Method, n: i128, c: i128, k: i128, b: &[i128], r: &[i128]) -> CostQuery {
    CostQuery {
        method,
        n,
        c,
        k,
        b: b.iter().map(|&v| Exact::from_integer(v)).collect(),
        r: r.to_vec(),
    }
}

#[test]
fn elastic_two_tier_is_five_eighths() {
    let q = query(Method::Elastic, 56, 64, 3, &[2, 2], &[1, 2]);
    let cost = conv_method_cost(&q).unwrap();
    let base = Exact::from_integer(56 * 56 * 64 * 9);
    assert_eq!(cost.flops, base * Exact::new(5, 8));
    assert_eq!(cost.params, Exact::from_integer(64 * 9));
}

#[test]
fn one_branch_elastic_is_single_scale() {
    let q = query(Method::Elastic, 13, 7, 5, &[1], &[1]);
    assert_eq!(conv_method_cost(&q).unwrap(), conv_method_cost(&q.with_method(Method::Single)).unwrap());
}

#[test]
fn all_six_rows() {
    let q = query(Method::Single, 56, 64, 3, &[2, 2], &[1, 2]);
    let unit = Exact::from_integer(56 * 56 * 64 * 9);
    let p = Exact::from_integer(64 * 9);
    let row = |m| conv_method_cost(&q.with_method(m)).unwrap();
    assert_eq!((row(Method::Single).flops, row(Method::Single).params), (unit, p));
    assert_eq!(row(Method::FeaturePyramidConcat).flops, unit * 2);
    assert_eq!(row(Method::FeaturePyramidConcat).params, p * 2);
    assert_eq!(row(Method::FeaturePyramidAdd).flops, unit);
    assert_eq!(row(Method::FilterPyramidDilated).flops, unit);
    // (1² + 2²)/2 = 5/2 of the single-scale cost
    assert_eq!(row(Method::FilterPyramidStandard).flops, unit * Exact::new(5, 2));
    assert_eq!(row(Method::FilterPyramidStandard).params, p * Exact::new(5, 2));
    assert_eq!(row(Method::Elastic).flops, unit * Exact::new(5, 8));
    assert!(row(Method::FilterPyramidStandard).flops >= unit);
}

#[test]
fn invalid_queries_are_input_errors() {
    let cases = [
        query(Method::Elastic, 8, 8, 3, &[2, 3], &[1, 2]),
        query(Method::Elastic, 8, 8, 3, &[1, 1], &[1, 2]),
        query(Method::Elastic, 8, 8, 3, &[2, 2], &[1]),
        query(Method::Elastic, 8, 8, 3, &[2, 2], &[0, 2]),
        query(Method::Elastic, 0, 8, 3, &[1], &[1]),
        query(Method::Elastic, 8, 8, 3, &[], &[]),
    ];
    for q in cases {
        assert!(matches!(conv_method_cost(&q), Err(Error::Input(_))), "{q:?}");
    }
}

#[test]
fn floor_variant_matches_exact_when_divisible() {
    let q = query(Method::Elastic, 56, 64, 3, &[2, 2], &[1, 2]);
    assert_eq!(elastic_cost_floor(&q).unwrap(), conv_method_cost(&q).unwrap());
    let odd = query(Method::Elastic, 7, 64, 3, &[2, 2], &[1, 2]);
    let floor = elastic_cost_floor(&odd).unwrap().flops;
    let exact = conv_method_cost(&odd).unwrap().flops;
    // ⌊7/2⌋² = 9 < 12.25
    assert!(floor < exact);
    assert_eq!(floor, Exact::from_integer(49 * 64 * 9 / 2 + 9 * 64 * 9 / 2));
}

#[test]
fn elastic_bound_over_ten_thousand_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    let report = verify_elastic_bound(|| random_query(&mut rng), 10_000).unwrap();
    assert_eq!(report.counterexample, None);
    assert_eq!(report.trials, 10_000);
    assert!(report.equal > 0 && report.strict > 0);
}

#[test]
fn elastic_bound_separates_equal_and_strict_cases() {
    let q = query(Method::Elastic, 8, 8, 3, &[2, 2], &[1, 1]);
    let report = verify_elastic_bound(|| q.clone(), 3).unwrap();
    assert_eq!((report.equal, report.strict), (3, 0));
    let q = query(Method::Elastic, 8, 8, 3, &[2, 2], &[1, 2]);
    let report = verify_elastic_bound(|| q.clone(), 3).unwrap();
    assert_eq!((report.equal, report.strict), (0, 3));
}

proptest! {
    #[test]
    fn pyramids_never_cheaper_than_single(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng);
        let single = conv_method_cost(&q.with_method(Method::Single)).unwrap();
        for m in [Method::FeaturePyramidConcat, Method::FeaturePyramidAdd, Method::FilterPyramidStandard, Method::FilterPyramidDilated] {
            let c = conv_method_cost(&q.with_method(m)).unwrap();
            prop_assert!(c.flops >= single.flops && c.params >= single.params);
        }
        let e = conv_method_cost(&q).unwrap();
        prop_assert!(e.flops <= single.flops);
        prop_assert_eq!(e.params, single.params);
    }
}

fn within(actual: u64, target: f64, tol: f64) -> bool {
    (actual as f64 / target - 1.0).abs() <= tol
}

#[test]
fn reference_model_sizes() {
    let rows = [
        ("resnext50", 25.0e6, 4.2e9),
        ("resnext50_elastic", 25.2e6, 4.2e9),
        ("resnext50_selastic", 25.0e6, 3.4e9),
        ("densenet201", 20.0e6, 4.4e9),
        ("densenet201_elastic", 19.5e6, 4.3e9),
        ("resnext101", 44.2e6, 8.0e9),
        ("resnext101_elastic", 44.3e6, 7.9e9),
    ];
    for (name, params, flops) in rows {
        let c = model_cost(&preset(name).unwrap()).unwrap();
        assert!(within(c.total_params, params, 0.02), "{name} params {}", c.total_params);
        assert!(within(c.total_flops, flops, 0.05), "{name} flops {}", c.total_flops);
        assert_eq!(c.convention, CONVENTION);
    }
}

#[test]
fn totals_are_sums_of_layers() {
    for name in PRESET_NAMES {
        let c = model_cost(&preset(name).unwrap()).unwrap();
        assert_eq!(c.total_flops, c.per_layer.iter().map(|l| l.flops).sum::<u64>());
        assert_eq!(c.total_params, c.per_layer.iter().map(|l| l.params).sum::<u64>());
        let mut ids: Vec<_> = c.per_layer.iter().map(|l| &l.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.per_layer.len(), "{name}: duplicate layer ids");
    }
}

#[test]
fn resnext50_hand_count() {
    // Independent closed form for the plain bottleneck network.
    let (mut params, mut flops) = (0u64, 0u64);
    let mut conv = |cin: u64, cout: u64, k: u64, g: u64, side: u64| {
        let p = cout * (cin / g) * k * k;
        params += p;
        flops += p * side * side;
    };
    conv(3, 64, 7, 1, 112);
    let mut cin = 64;
    let stages = [(3u64, 128u64, 256u64, 56u64), (4, 256, 512, 28), (6, 512, 1024, 14), (3, 1024, 2048, 7)];
    let mut norms = 64u64;
    for (s, &(n, w, out, side)) in stages.iter().enumerate() {
        for b in 0..n {
            let in_side = if b == 0 && s > 0 { side * 2 } else { side };
            conv(cin, w, 1, 1, in_side);
            conv(w, w, 3, 32, side);
            conv(w, out, 1, 1, side);
            norms += w + w + out;
            if b == 0 {
                conv(cin, out, 1, 1, side);
                norms += out;
            }
            cin = out;
        }
    }
    params += 2 * norms + 2048 * 1000 + 1000;
    flops += 2048 * 1000;
    let c = model_cost(&preset("resnext50").unwrap()).unwrap();
    assert_eq!((c.total_params, c.total_flops), (params, flops));
}

#[test]
fn selastic_cost_law() {
    for name in ["resnext50", "resnext101", "densenet201", "toy_resnext_8", "toy_densenet_8"] {
        let s = preset(name).unwrap();
        let e = selastic_transform(&s).unwrap();
        let (a, b) = (model_cost(&s).unwrap(), model_cost(&e).unwrap());
        assert_eq!(a.total_params, b.total_params);
        assert!(b.total_flops < a.total_flops);
    }
}

/// Symbolic per-layer parameters equal the built network's buffers, layer by layer.
#[test]
fn symbolic_params_match_built_buffers() {
    for name in PRESET_NAMES {
        let spec = preset(name).unwrap();
        let report = model_cost(&spec).unwrap();
        let net = Network::build(&spec, 0).unwrap();
        assert_eq!(net.param_count(), report.total_params, "{name}");
        if !name.starts_with("toy") {
            continue;
        }
        for layer in &report.per_layer {
            let prefix = format!("{}.", layer.id);
            let built: u64 = net
                .store()
                .entries()
                .iter()
                .filter(|e| e.trainable && e.name.starts_with(&prefix))
                .map(|e| e.tensor.data().len() as u64)
                .sum();
            assert_eq!(built, layer.params, "{name} {}", layer.id);
        }
    }
}

/// MACs counted by the executing graph equal the symbolic count.
#[test]
fn symbolic_flops_match_executed_macs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in PRESET_NAMES.iter().filter(|n| n.starts_with("toy")) {
        let spec = preset(name).unwrap();
        let mut net = Network::build(&spec, 0).unwrap();
        for side in [16, 32, 64] {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::randn(Shape::new(1, 3, side, side), 1.0, &mut rng));
            net.forward(&mut g, x, NormMode::Eval, false, false).unwrap();
            let report = model_cost_at(&spec, side).unwrap();
            assert_eq!(g.macs(), report.total_flops, "{name} at {side}");
        }
    }
}

#[test]
fn stress_resolutions_scale_flops() {
    let spec = preset("toy_resnext_8_narrow_elastic").unwrap();
    let base = model_cost(&spec).unwrap().total_flops as f64;
    let half = model_cost_at(&spec, 16).unwrap().total_flops as f64 / base;
    let double = model_cost_at(&spec, 64).unwrap().total_flops as f64 / base;
    assert!((half / 0.25 - 1.0).abs() < 0.02, "{half}");
    assert!((double / 4.0 - 1.0).abs() < 0.02, "{double}");
}

#[test]
fn invalid_stress_resolution_lists_valid_sizes() {
    let spec = preset("toy_resnext_8_elastic").unwrap();
    match model_cost_at(&spec, 30) {
        Err(Error::Input(m)) => assert!(m.contains("16") && m.contains("64"), "{m}"),
        other => panic!("{other:?}"),
    }
}
