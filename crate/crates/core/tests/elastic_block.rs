use elastic_core::block::{
    BlockKind, Downsample, ElasticBlock, ElasticBlockSpec, Fraction, Resample, Upsample,
};
use elastic_core::nn::{Ctx, ParamStore};
use elastic_core::tensor::gradcheck::{GradCheck, COMPOSITE_TOLERANCE};
use elastic_core::tensor::{ConvConfig, Graph, NormConfig, NormMode, RunningStats, Shape, Tensor, Var};
use elastic_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn half() -> Fraction {
    Fraction::new(1, 2)
}

fn two_tier(spec: ElasticBlockSpec, high: Fraction) -> ElasticBlockSpec {
    spec.with_branches(&[(1, high), (2, Fraction::from_integer(1) - high)])
        .unwrap()
}

/// Random affine and running statistics so eval-mode norms are not identities.
fn perturb_norms(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.entry(id).name.clone();
        let data = store.get_mut(id).data_mut();
        for v in data.iter_mut() {
            if name.ends_with(".gamma") || name.ends_with(".running_var") {
                *v = rng.gen_range(0.5..1.5);
            } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
}

fn build(spec: ElasticBlockSpec, seed: u64) -> (ElasticBlock, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = ElasticBlock::new(spec, &mut store, "blk", &mut rng).unwrap();
    perturb_norms(&mut store, &mut rng);
    (block, store)
}

fn input(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

fn run_block(block: &ElasticBlock, store: &mut ParamStore, x: &Tensor, mode: NormMode) -> Tensor {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let mut ctx = Ctx::new(&mut g, store, mode, false);
    let y = block.forward(&mut ctx, xv).unwrap();
    g.value(y).clone()
}

/// Hand-wired reference network reading weights by name from a store.
struct Oracle {
    g: Graph,
    store: ParamStore,
    mode: NormMode,
}

impl Oracle {
    fn new(store: &ParamStore, mode: NormMode) -> Self {
        Oracle {
            g: Graph::new(),
            store: store.clone(),
            mode,
        }
    }

    fn tensor(&self, name: &str) -> Tensor {
        let id = self.store.find(name).unwrap_or_else(|| panic!("missing {name}"));
        self.store.get(id).clone()
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize, groups: usize) -> Var {
        let w = self.tensor(&format!("{name}.weight"));
        let k = w.shape().h;
        let wv = self.g.leaf(w);
        self.g
            .conv2d(
                x,
                wv,
                None,
                ConvConfig {
                    stride,
                    padding: k / 2,
                    groups,
                },
            )
            .unwrap()
    }

    fn bn(&mut self, x: Var, name: &str) -> Var {
        let gamma = self.g.leaf(self.tensor(&format!("{name}.gamma")));
        let beta = self.g.leaf(self.tensor(&format!("{name}.beta")));
        let mut mean = self.tensor(&format!("{name}.running_mean")).into_data();
        let mut var = self.tensor(&format!("{name}.running_var")).into_data();
        self.g
            .batch_norm(
                x,
                gamma,
                beta,
                RunningStats {
                    mean: &mut mean,
                    var: &mut var,
                },
                NormConfig::new(self.mode),
            )
            .unwrap()
    }

    /// 1×1-BN-ReLU → grouped 3×3-BN-ReLU → 1×1 on one branch, no resampling.
    fn resnext_branch(&mut self, x: Var, prefix: &str, stride: usize, card: usize) -> Var {
        let h = self.conv(x, &format!("{prefix}.reduce"), 1, 1);
        let h = self.bn(h, &format!("{prefix}.reduce_norm"));
        let h = self.g.relu(h);
        let h = self.conv(h, &format!("{prefix}.spatial"), stride, card);
        let h = self.bn(h, &format!("{prefix}.spatial_norm"));
        let h = self.g.relu(h);
        self.conv(h, &format!("{prefix}.expand"), 1, 1)
    }

    fn finish_resnext(&mut self, x: Var, merged: Var, projection: Option<usize>) -> Var {
        let y = self.bn(merged, "blk.merge_norm");
        let shortcut = match projection {
            Some(stride) => {
                let p = self.conv(x, "blk.projection", stride, 1);
                self.bn(p, "blk.projection_norm")
            }
            None => x,
        };
        let s = self.g.add(y, shortcut).unwrap();
        self.g.relu(s)
    }
}

#[test]
fn degenerate_resnext_block_equals_baseline_bottleneck() {
    let cases = [(16, 8, 16, 2, 1), (8, 8, 16, 4, 1), (16, 16, 32, 4, 2)];
    for (i, &(cin, width, cout, card, stride)) in cases.iter().enumerate() {
        let spec = ElasticBlockSpec::resnext_baseline(cin, width, cout, card, stride);
        let (block, mut store) = build(spec, 10 + i as u64);
        let x = input(Shape::new(2, cin, 8, 8), 20 + i as u64);
        for mode in [NormMode::Train, NormMode::Eval] {
            let mut oracle = Oracle::new(&store, mode);
            let xv = oracle.g.leaf(x.clone());
            let h = oracle.resnext_branch(xv, "blk.branch0", stride, card);
            let projection = (cin != cout || stride != 1).then_some(stride);
            let y = oracle.finish_resnext(xv, h, projection);
            let expected = oracle.g.value(y).clone();
            let got = run_block(&block, &mut store, &x, mode);
            assert!(got.bit_eq(&expected), "case {i} {mode:?}: outputs differ");
        }
    }
}

#[test]
fn degenerate_densenet_block_equals_equivalent_form() {
    let spec = ElasticBlockSpec::densenet_baseline(24, 16, 8);
    let (block, mut store) = build(spec, 3);
    let x = input(Shape::new(2, 24, 8, 8), 4);
    for mode in [NormMode::Train, NormMode::Eval] {
        // BN-ReLU-1×1 → BN-ReLU-3×3, concatenated onto the stream.
        let mut o = Oracle::new(&store, mode);
        let xv = o.g.leaf(x.clone());
        let h = o.bn(xv, "blk.pre_norm");
        let h = o.g.relu(h);
        let h = o.conv(h, "blk.branch0.reduce", 1, 1);
        let h = o.bn(h, "blk.branch0.reduce_norm");
        let h = o.g.relu(h);
        let h = o.conv(h, "blk.branch0.spatial", 1, 1);
        let y = o.g.concat(&[xv, h]).unwrap();
        let expected = o.g.value(y).clone();
        let got = run_block(&block, &mut store, &x, mode);
        assert!(got.bit_eq(&expected), "{mode:?}");
        assert_eq!(got.shape().c, 32);
    }
}

#[test]
fn output_resolution_matches_input() {
    let specs = vec![
        two_tier(ElasticBlockSpec::resnext_baseline(16, 8, 16, 4, 1), half()),
        two_tier(ElasticBlockSpec::resnext_baseline(8, 16, 32, 8, 1), Fraction::new(3, 4)),
        ElasticBlockSpec::resnext_baseline(16, 16, 16, 8, 1)
            .with_branches(&[(1, half()), (2, Fraction::new(1, 4)), (4, Fraction::new(1, 4))])
            .unwrap(),
        two_tier(ElasticBlockSpec::densenet_baseline(16, 16, 8), half()),
    ];
    for (i, spec) in specs.into_iter().enumerate() {
        let cout = spec.out_channels;
        let (block, mut store) = build(spec.clone(), i as u64);
        for side in [8usize, 16] {
            let x = input(Shape::new(1, spec.in_channels, side, side), 99);
            let y = run_block(&block, &mut store, &x, NormMode::Train);
            assert_eq!(y.shape(), Shape::new(1, cout, side, side), "spec {i}: {spec}");
        }
    }
}

#[test]
fn two_branch_reference_shape_contract() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(32, 16, 64, 4, 1), half());
    let (block, mut store) = build(spec, 1);
    let y = run_block(&block, &mut store, &input(Shape::new(1, 32, 8, 8), 2), NormMode::Eval);
    assert_eq!(y.shape(), Shape::new(1, 64, 8, 8));
}

#[test]
fn resampling_variants_preserve_resolution() {
    for down in [Downsample::AvgPool, Downsample::Bilinear, Downsample::Nearest, Downsample::TrainedFilter] {
        for up in [Upsample::Bilinear, Upsample::Nearest] {
            let mut spec = two_tier(ElasticBlockSpec::resnext_baseline(8, 8, 8, 2, 1), half());
            spec.resample = Resample { down, up };
            let (block, mut store) = build(spec, 5);
            let y = run_block(&block, &mut store, &input(Shape::new(2, 8, 8, 8), 6), NormMode::Train);
            assert_eq!(y.shape(), Shape::new(2, 8, 8, 8), "{down:?}/{up:?}");
            assert!(y.data().iter().all(|v| v.is_finite()));
        }
    }
}

/// Branch-by-branch reference: each branch computed in its own graph, summed
/// on the host, then merged.
fn reference_two_tier(store: &ParamStore, x: &Tensor, card: [usize; 2], mode: NormMode) -> (Vec<f32>, Tensor) {
    let mut branch_sum = vec![0f32; 0];
    for (b, &r) in [1usize, 2].iter().enumerate() {
        let mut o = Oracle::new(store, mode);
        let xv = o.g.leaf(x.clone());
        let src = if r == 1 { xv } else { o.g.avg_pool2(xv).unwrap() };
        let h = o.resnext_branch(src, &format!("blk.branch{b}"), 1, card[b]);
        let h = if r == 1 {
            h
        } else {
            o.g.bilinear_resize(h, x.shape().h, x.shape().w).unwrap()
        };
        let v = o.g.value(h).data();
        if branch_sum.is_empty() {
            branch_sum = v.to_vec();
        } else {
            branch_sum.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
    }
    let mut o = Oracle::new(store, mode);
    let xv = o.g.leaf(x.clone());
    let shape = Shape::new(x.shape().n, store.get(store.find("blk.merge_norm.gamma").unwrap()).shape().c, x.shape().h, x.shape().w);
    let merged = o.g.leaf(Tensor::from_vec(shape, branch_sum.clone()).unwrap());
    let y = o.finish_resnext(xv, merged, None);
    (branch_sum, o.g.value(y).clone())
}

#[test]
fn merge_equals_sum_of_independent_branches() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(16, 16, 16, 4, 1), half());
    let (block, mut store) = build(spec, 8);
    let x = input(Shape::new(2, 16, 8, 8), 9);
    for mode in [NormMode::Eval, NormMode::Train] {
        let (sum, expected) = reference_two_tier(&store, &x, [2, 2], mode);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let mut ctx = Ctx::new(&mut g, &mut store, mode, false);
        let outs = block.branch_outputs(&mut ctx, xv, None).unwrap();
        let merged = ctx.graph.add_n(&outs).unwrap();
        let y = block.merge(&mut ctx, xv, &outs).unwrap();
        let merged = g.value(merged).data();
        let worst = merged.iter().zip(&sum).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst <= 1e-6, "{mode:?}: branch sum differs by {worst}");
        assert!(g.value(y).max_abs_diff(&expected) <= 1e-5, "{mode:?}");
    }
}

#[test]
fn zeroed_low_branch_leaves_high_branch_plus_residual() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(16, 16, 16, 4, 1), half());
    let (block, mut store) = build(spec, 12);
    let low = block.branch_expand(1).unwrap().weight;
    store.get_mut(low).data_mut().fill(0.0);
    let x = input(Shape::new(2, 16, 8, 8), 13);
    for mode in [NormMode::Train, NormMode::Eval] {
        let mut o = Oracle::new(&store, mode);
        let xv = o.g.leaf(x.clone());
        let h = o.resnext_branch(xv, "blk.branch0", 1, 2);
        let y = o.finish_resnext(xv, h, None);
        let expected = o.g.value(y).clone();
        let got = run_block(&block, &mut store, &x, mode);
        assert!(got.max_abs_diff(&expected) <= 1e-6, "{mode:?}");
    }
}

#[test]
fn zero_weights_and_identity_norms_give_relu() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(8, 8, 8, 2, 1), half());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let block = ElasticBlock::new(spec, &mut store, "blk", &mut rng).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.entry(id).name.ends_with(".weight") {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let x = input(Shape::new(2, 8, 8, 8), 1);
    let y = run_block(&block, &mut store, &x, NormMode::Eval);
    let expected: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(y.data(), &expected[..]);
}

#[test]
fn parameter_count_is_independent_of_the_split() {
    let base = ElasticBlockSpec::resnext_baseline(64, 64, 128, 8, 1);
    let count = |spec: ElasticBlockSpec| build(spec, 0).1.trainable_count();
    let reference = count(base.clone());
    let splits: Vec<Vec<(usize, Fraction)>> = vec![
        vec![(1, half()), (2, half())],
        vec![(1, Fraction::new(3, 4)), (2, Fraction::new(1, 4))],
        vec![(1, Fraction::new(1, 4)), (2, Fraction::new(3, 4))],
        vec![(1, half()), (2, Fraction::new(1, 4)), (4, Fraction::new(1, 4))],
    ];
    for split in splits {
        assert_eq!(count(base.clone().with_branches(&split).unwrap()), reference, "{split:?}");
    }
    let dense = ElasticBlockSpec::densenet_baseline(64, 64, 32);
    assert_eq!(count(two_tier(dense.clone(), half())), count(dense));
}

#[test]
fn flops_fall_as_more_width_moves_to_low_resolution() {
    let base = ElasticBlockSpec::resnext_baseline(64, 64, 64, 8, 1);
    let macs = |spec: ElasticBlockSpec| {
        let (block, mut store) = build(spec, 0);
        let mut g = Graph::new();
        let x = g.leaf(input(Shape::new(1, 64, 16, 16), 0));
        let mut ctx = Ctx::new(&mut g, &mut store, NormMode::Eval, false);
        block.forward(&mut ctx, x).unwrap();
        g.macs()
    };
    let single = macs(base.clone());
    let hi = macs(two_tier(base.clone(), Fraction::new(3, 4)));
    let even = macs(two_tier(base.clone(), half()));
    let lo = macs(two_tier(base, Fraction::new(1, 4)));
    assert!(single > hi && hi > even && even > lo, "{single} {hi} {even} {lo}");
}

#[test]
fn densenet_reference_widths() {
    let spec = two_tier(ElasticBlockSpec::densenet_baseline(64, 128, 32), half());
    assert_eq!(spec.branch_width(0), 64);
    assert_eq!(spec.branch_width(1), 64);
    assert_eq!(spec.kind, BlockKind::DensenetGrowth);
    let (block, mut store) = build(spec, 0);
    let y = run_block(&block, &mut store, &input(Shape::new(1, 64, 8, 8), 0), NormMode::Eval);
    assert_eq!(y.shape(), Shape::new(1, 96, 8, 8));
}

#[test]
fn forward_is_deterministic() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(16, 16, 16, 4, 1), half());
    let x = input(Shape::new(2, 16, 8, 8), 7);
    let (b1, mut s1) = build(spec.clone(), 42);
    let (b2, mut s2) = build(spec, 42);
    let y1 = run_block(&b1, &mut s1, &x, NormMode::Train);
    let y2 = run_block(&b2, &mut s2, &x, NormMode::Train);
    assert!(y1.bit_eq(&y2));
    assert_eq!(s1, s2);
}

#[test]
fn bad_inputs_are_rejected() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(8, 8, 8, 2, 1), half());
    let (block, mut store) = build(spec, 0);
    let mut g = Graph::new();
    let wrong_c = g.leaf(input(Shape::new(1, 4, 8, 8), 0));
    let odd = g.leaf(input(Shape::new(1, 8, 7, 7), 0));
    let mut ctx = Ctx::new(&mut g, &mut store, NormMode::Eval, false);
    assert!(matches!(block.forward(&mut ctx, wrong_c), Err(Error::Shape { .. })));
    assert!(matches!(block.forward(&mut ctx, odd), Err(Error::Config(_))));
}

#[test]
fn full_block_gradient_matches_finite_differences() {
    let spec = two_tier(ElasticBlockSpec::resnext_baseline(8, 8, 8, 2, 1), half());
    let (block, store) = build(spec, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::randn(Shape::new(2, 8, 8, 8), 1.0, &mut rng).with_requires_grad(true);
    let trainable: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    let mut inputs = vec![x];
    inputs.extend(trainable.iter().map(|&id| store.get(id).clone().with_requires_grad(true)));
    let report = GradCheck {
        max_elements: Some(48),
        ..GradCheck::default()
    }
    .run(&inputs, |g, vars| {
        let mut local = store.clone();
        let mut ctx = Ctx::new(g, &mut local, NormMode::Train, true);
        for (&id, &v) in trainable.iter().zip(&vars[1..]) {
            ctx.bind(id, v);
        }
        block.forward(&mut ctx, vars[0])
    })
    .unwrap();
    assert!(report.passes(COMPOSITE_TOLERANCE), "{report:?}");
    assert!(report.checked > 200 && report.skipped < report.checked, "{report:?}");
}
