use elastic_core::arch::preset;
use elastic_core::block::{ElasticBlock, ElasticBlockSpec, Fraction};
use elastic_core::network::Network;
use elastic_core::nn::{Ctx, ParamStore};
use elastic_core::policy::{
    aggregate, block_scale_score, export_traces, import_traces, per_sample_scores, sig6, trace_batch, trace_image,
    GroupBy, PolicyTrace,
};
use elastic_core::tensor::{ConvConfig, Graph, NormConfig, NormMode, RunningStats, Shape, Tensor};
use elastic_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The scale score with explicit loops over channels and pixels.
fn naive_score(high: &Tensor, low: &Tensor) -> f64 {
    let (hs, ls) = (high.shape(), low.shape());
    let mut sh = 0.0f64;
    for n in 0..hs.n {
        for c in 0..hs.c {
            for y in 0..hs.h {
                for x in 0..hs.w {
                    sh += high.at(n, c, y, x) as f64;
                }
            }
        }
    }
    let mut sl = 0.0f64;
    for n in 0..ls.n {
        for c in 0..ls.c {
            for y in 0..ls.h {
                for x in 0..ls.w {
                    sl += low.at(n, c, y, x) as f64;
                }
            }
        }
    }
    let (h, w, c, n) = (ls.h as f64, ls.w as f64, ls.c as f64, ls.n as f64);
    sh / (4.0 * h * w * c * n) - sl / (h * w * c * n)
}

fn pair(rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let (n, c, h, w) = (rng.gen_range(1..3), rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..9));
    let high = Tensor::uniform(Shape::new(n, c, 2 * h, 2 * w), 0.0, 3.0, rng);
    let low = Tensor::uniform(Shape::new(n, c, h, w), 0.0, 3.0, rng);
    (high, low)
}

#[test]
fn score_matches_triple_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..1000 {
        let (high, low) = pair(&mut rng);
        let s = block_scale_score(&high, &low).unwrap();
        assert!((s - naive_score(&high, &low)).abs() <= 1e-6);
    }
}

#[test]
fn score_of_constant_fields_is_their_difference() {
    for (a, b) in [(0.0f32, 0.0f32), (1.5, 0.25), (0.125, 2.0)] {
        let high = Tensor::full(Shape::new(1, 3, 8, 6), a);
        let low = Tensor::full(Shape::new(1, 3, 4, 3), b);
        assert_eq!(block_scale_score(&high, &low).unwrap(), (a - b) as f64);
    }
}

#[test]
fn shift_raises_score_by_delta() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (high, low) = pair(&mut rng);
        let delta = 0.5f32;
        let mut shifted = high.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += delta);
        let d = block_scale_score(&shifted, &low).unwrap() - block_scale_score(&high, &low).unwrap();
        assert!((d - delta as f64).abs() < 1e-6, "{d}");
    }
}

#[test]
fn per_sample_scores_split_the_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let high = Tensor::uniform(Shape::new(3, 2, 4, 4), 0.0, 1.0, &mut rng);
    let low = Tensor::uniform(Shape::new(3, 2, 2, 2), 0.0, 1.0, &mut rng);
    let scores = per_sample_scores(&high, &low).unwrap();
    for (i, s) in scores.iter().enumerate() {
        let single = block_scale_score(&high.sample(i), &low.sample(i)).unwrap();
        assert!((s - single).abs() < 1e-12);
    }
}

#[test]
fn score_rejects_bad_shape_pairs() {
    let high = Tensor::zeros(Shape::new(1, 2, 4, 4));
    for low in [Shape::new(1, 3, 2, 2), Shape::new(1, 2, 3, 2), Shape::new(2, 2, 2, 2), Shape::new(1, 2, 4, 4)] {
        assert!(matches!(block_scale_score(&high, &Tensor::zeros(low)), Err(Error::Input(_))));
    }
}

fn toy_net(seed: u64) -> Network {
    Network::build(&preset("toy_resnext_8_narrow_elastic").unwrap(), seed).unwrap()
}

#[test]
fn trace_has_one_score_per_elastic_block() {
    let mut net = toy_net(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Tensor::randn(Shape::new(1, 3, 32, 32), 1.0, &mut rng);
    let t = trace_image(&mut net, &img, "a").unwrap();
    assert_eq!(t.scores.len(), net.spec().elastic_block_count());
    assert_eq!(t.scores.len(), 5);
    assert!(t.scores.iter().all(|s| s.is_finite()));
    assert!(t.prediction.unwrap() < 10);
    let again = trace_image(&mut net, &img, "a").unwrap();
    assert_eq!(t, again);
}

#[test]
fn resnext50_elastic_trace_is_seventeen_long() {
    let mut net = Network::build(&preset("resnext50_elastic").unwrap(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // any side on the stride chain works; 64 is far cheaper than 224
    let img = Tensor::randn(Shape::new(1, 3, 64, 64), 1.0, &mut rng);
    let t = trace_image(&mut net, &img, "x").unwrap();
    assert_eq!(t.scores.len(), 17);
}

#[test]
fn batched_traces_equal_single_traces() {
    let mut net = toy_net(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs = Tensor::randn(Shape::new(3, 3, 32, 32), 1.0, &mut rng);
    let ids: Vec<String> = (0..3).map(|i| format!("img{i}")).collect();
    let batch = trace_batch(&mut net, &imgs, &ids, Some(&[1, 2, 3])).unwrap();
    for i in 0..3 {
        let single = trace_image(&mut net, &imgs.sample(i), &ids[i]).unwrap();
        for (a, b) in batch[i].scores.iter().zip(&single.scores) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(batch[i].label, Some(i + 1));
    }
}

#[test]
fn non_elastic_networks_are_rejected() {
    let mut net = Network::build(&preset("toy_resnext_8_narrow").unwrap(), 0).unwrap();
    let img = Tensor::zeros(Shape::new(1, 3, 32, 32));
    assert!(matches!(trace_image(&mut net, &img, "z"), Err(Error::Usage(_))));
    let mut dense = Network::build(&preset("toy_densenet_8_elastic").unwrap(), 0).unwrap();
    assert!(matches!(trace_image(&mut dense, &img, "z"), Err(Error::Usage(_))));
}

#[test]
fn three_tier_blocks_are_rejected() {
    let mut spec = preset("toy_resnext_8_narrow_elastic").unwrap();
    for stage in &mut spec.stages {
        stage.block.branches = vec![
            elastic_core::arch::BranchTemplate {
                scale_ratio: 1,
                width_fraction: Fraction::new(1, 2),
            },
            elastic_core::arch::BranchTemplate {
                scale_ratio: 2,
                width_fraction: Fraction::new(1, 4),
            },
            elastic_core::arch::BranchTemplate {
                scale_ratio: 4,
                width_fraction: Fraction::new(1, 4),
            },
        ];
    }
    let mut net = Network::build(&spec, 0).unwrap();
    let img = Tensor::zeros(Shape::new(1, 3, 32, 32));
    assert!(matches!(trace_image(&mut net, &img, "z"), Err(Error::Usage(_))));
}

#[test]
fn zeroed_low_branch_leaves_the_high_mean() {
    let mut net = toy_net(5);
    let names: Vec<String> = net
        .elastic_blocks()
        .map(|(c, _)| format!("{c}.branch1.spatial_norm"))
        .collect();
    for n in &names {
        for p in ["gamma", "beta"] {
            let id = net.store().find(&format!("{n}.{p}")).unwrap();
            net.store_mut().get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Tensor::randn(Shape::new(1, 3, 32, 32), 1.0, &mut rng);
    let t = trace_image(&mut net, &img, "z").unwrap();

    let mut g = Graph::new();
    let x = g.leaf(img);
    let out = net.forward(&mut g, x, NormMode::Eval, false, true).unwrap();
    for (cap, s) in out.captures.iter().zip(&t.scores) {
        let high = g.value(cap.branches[0].activation);
        let low = g.value(cap.branches[1].activation);
        assert!(low.data().iter().all(|&v| v == 0.0));
        assert_eq!(*s, high.mean());
    }
}

/// Captured activations are the very values the branch computes, recomputed
/// here from raw operators and the block's named weights.
#[test]
fn captures_are_bit_identical_to_the_branch_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = ElasticBlockSpec::resnext_baseline(8, 8, 16, 4, 1)
        .with_branches(&[(1, Fraction::new(1, 2)), (2, Fraction::new(1, 2))])
        .unwrap();
    let mut store = ParamStore::new();
    let block = ElasticBlock::new(spec, &mut store, "b", &mut rng).unwrap();
    for e in store.entries().to_vec() {
        if e.name.contains("running") {
            let id = store.find(&e.name).unwrap();
            let fill = if e.name.ends_with("mean") { 0.1 } else { 0.7 };
            store.get_mut(id).data_mut().fill(fill);
        }
    }
    let input = Tensor::randn(Shape::new(2, 8, 8, 8), 1.0, &mut rng);

    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let mut caps = Vec::new();
    {
        let mut local = store.clone();
        let mut ctx = Ctx::new(&mut g, &mut local, NormMode::Eval, false);
        block.forward_captured(&mut ctx, x, Some(&mut caps)).unwrap();
    }

    let mut o = Graph::new();
    let w = |o: &mut Graph, name: &str| o.leaf(store.get(store.find(name).unwrap()).clone());
    let bn = |o: &mut Graph, v, prefix: &str| {
        let gamma = w(o, &format!("{prefix}.gamma"));
        let beta = w(o, &format!("{prefix}.beta"));
        let mut mean = store.get(store.find(&format!("{prefix}.running_mean")).unwrap()).data().to_vec();
        let mut var = store.get(store.find(&format!("{prefix}.running_var")).unwrap()).data().to_vec();
        let stats = RunningStats {
            mean: &mut mean,
            var: &mut var,
        };
        o.batch_norm(v, gamma, beta, stats, NormConfig::new(NormMode::Eval)).unwrap()
    };
    let xin = o.leaf(input);
    for (i, cap) in caps.iter().enumerate() {
        let p = format!("b.branch{i}");
        let mut h = if cap.scale_ratio == 2 { o.avg_pool2(xin).unwrap() } else { xin };
        let rw = w(&mut o, &format!("{p}.reduce.weight"));
        h = o.conv2d(h, rw, None, ConvConfig { stride: 1, padding: 0, groups: 1 }).unwrap();
        h = bn(&mut o, h, &format!("{p}.reduce_norm"));
        h = o.relu(h);
        let sw = w(&mut o, &format!("{p}.spatial.weight"));
        h = o.conv2d(h, sw, None, ConvConfig { stride: 1, padding: 1, groups: 2 }).unwrap();
        h = bn(&mut o, h, &format!("{p}.spatial_norm"));
        h = o.relu(h);
        assert!(o.value(h).bit_eq(g.value(cap.activation)), "branch {i}");
    }
}

fn trace(id: &str, label: Option<usize>, scores: &[f64]) -> PolicyTrace {
    PolicyTrace {
        image_id: id.into(),
        label,
        prediction: label,
        scores: scores.to_vec(),
    }
}

#[test]
fn aggregate_single_trace_is_its_mean() {
    let t = trace("a", Some(3), &[0.5, -0.25, 1.0]);
    let rows = aggregate(std::slice::from_ref(&t), GroupBy::Category);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mean, t.mean());
    assert!(aggregate(&[], GroupBy::Category).is_empty());
    assert!(aggregate(&[], GroupBy::Block).is_empty());
}

#[test]
fn aggregate_orders_categories_by_score() {
    let traces = [
        trace("a", Some(0), &[2.0, 2.0]),
        trace("b", Some(1), &[-1.0, -1.0]),
        trace("c", Some(0), &[2.0, 2.0]),
        trace("d", Some(2), &[0.5, 0.5]),
    ];
    let rows = aggregate(&traces, GroupBy::Category);
    let keys: Vec<_> = rows.iter().map(|r| r.key).collect();
    assert_eq!(keys, vec![Some(1), Some(2), Some(0)]);
    assert_eq!(rows[2].count, 4);
    let rows = aggregate(&traces, GroupBy::Block);
    assert_eq!(rows.len(), 2);
    assert!((rows[0].mean - 0.875).abs() < 1e-12);
}

#[test]
fn aggregate_matches_flat_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let traces: Vec<_> = (0..60)
        .map(|i| {
            let scores: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            trace(&format!("t{i}"), Some(rng.gen_range(0..4)), &scores)
        })
        .collect();
    for row in aggregate(&traces, GroupBy::Category) {
        let flat: Vec<f64> = traces
            .iter()
            .filter(|t| t.label == row.key)
            .flat_map(|t| t.scores.iter().copied())
            .collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        assert!((row.mean - mean).abs() < 1e-12);
        assert_eq!(row.count, flat.len());
    }
}

#[test]
fn sig6_keeps_six_significant_digits() {
    assert_eq!(sig6(0.0), "0");
    assert_eq!(sig6(1.0), "1");
    assert_eq!(sig6(0.123456789), "0.123457");
    assert_eq!(sig6(-1234567.0), "-1234570");
    assert_eq!(sig6(2.5e-7), "0.00000025");
}

#[test]
fn export_empty_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    export_traces(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "image_id,label,prediction\n");
}

#[test]
fn export_one_trace_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let t = trace("img,0", Some(2), &[0.25, -0.5]);
    export_traces(std::slice::from_ref(&t), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), "image_id,label,prediction,s_1,s_2");
    assert_eq!(import_traces(&path).unwrap(), vec![t]);
}

#[test]
fn hundred_traces_reaggregate_after_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let traces: Vec<_> = (0..100)
        .map(|i| {
            let scores: Vec<f64> = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let label = (i % 7 != 0).then(|| rng.gen_range(0..10));
            trace(&format!("i{i}"), label, &scores)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    export_traces(&traces, &path).unwrap();
    let back = import_traces(&path).unwrap();
    assert_eq!(back.len(), 100);
    for group in [GroupBy::Category, GroupBy::Block] {
        let (a, b) = (aggregate(&traces, group), aggregate(&back, group));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.key, y.key);
            assert!((x.mean - y.mean).abs() < 1e-5);
        }
    }
}

#[test]
fn export_failures_carry_the_path() {
    let path = std::path::Path::new("/nonexistent-dir/traces.csv");
    match export_traces(&[], path) {
        Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
        other => panic!("{other:?}"),
    }
}
