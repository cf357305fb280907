//! Finite-difference checks of every differentiable operator on randomly
//! drawn shapes, plus the full Elastic block as a deep composition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{ElasticBlock, ElasticBlockSpec, Fraction};
use crate::error::Result;
use crate::nn::{Ctx, ParamStore};
use crate::tensor::gradcheck::{GradCheck, COMPOSITE_TOLERANCE, DEFAULT_STEP, OP_TOLERANCE};
use crate::tensor::{ConvConfig, Graph, NormConfig, NormMode, RunningStats, Shape, Tensor, Var};

/// Aggregated result for one operator over all of its random shapes.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub op: &'static str,
    pub shapes: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub tolerance: f64,
}

impl SuiteCase {
    /// Within tolerance, and at most half of the probes fell on a kink.
    pub fn passes(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0 && self.skipped <= self.checked
    }
}

const LINEAR_STEP: f32 = 0.05;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Operator inputs are drawn uniformly from [-1, 1].
fn grad_input(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).with_requires_grad(true)
}

fn side(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

struct Runner {
    rng: ChaCha8Rng,
    shapes: usize,
    check: GradCheck,
    cases: Vec<SuiteCase>,
}

impl Runner {
    fn case<G>(&mut self, op: &'static str, tolerance: f64, mut gen: G) -> Result<()>
    where
        G: FnMut(&mut ChaCha8Rng) -> Result<(Vec<Tensor>, Build)>,
    {
        let mut case = SuiteCase {
            op,
            shapes: 0,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            tolerance,
        };
        for _ in 0..self.shapes {
            let (inputs, build) = gen(&mut self.rng)?;
            self.check.projection_seed = self.rng.gen();
            let report = self.check.run(&inputs, build)?;
            case.shapes += 1;
            case.max_rel_error = case.max_rel_error.max(report.max_rel_error);
            case.checked += report.checked;
            case.skipped += report.skipped;
        }
        self.cases.push(case);
        Ok(())
    }
}

/// Runs every operator on `shapes_per_op` random shapes.
pub fn run_suite(shapes_per_op: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut r = Runner {
        rng: ChaCha8Rng::seed_from_u64(seed),
        shapes: shapes_per_op,
        check: GradCheck {
            max_elements: Some(48),
            ..GradCheck::default()
        },
        cases: Vec::new(),
    };

    // conv2d and linear are affine in each input, so central differences are
    // exact at any step and a wide one only shrinks f32 rounding noise
    r.check.step = LINEAR_STEP;
    r.case("conv2d", OP_TOLERANCE, |rng| {
        let groups = side(rng, 1, 3);
        let cin = groups * side(rng, 1, 2);
        let cout = groups * side(rng, 1, 2);
        let k = if rng.gen_bool(0.5) { 3 } else { 1 };
        let stride = side(rng, 1, 2);
        let padding = if rng.gen_bool(0.7) { k / 2 } else { 0 };
        let (n, h, w) = (side(rng, 1, 2), side(rng, k, 7), side(rng, k, 7));
        let x = grad_input(Shape::new(n, cin, h, w), rng);
        let wt = grad_input(Shape::new(cout, cin / groups, k, k), rng);
        let b = grad_input(Shape::new(1, cout, 1, 1), rng);
        let cfg = ConvConfig { stride, padding, groups };
        let build: Build = Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), cfg));
        Ok((vec![x, wt, b], build))
    })?;
    r.check.step = DEFAULT_STEP;

    for mode in [NormMode::Train, NormMode::Eval] {
        let op = match mode {
            NormMode::Train => "batch_norm (train)",
            NormMode::Eval => "batch_norm (eval)",
        };
        r.case(op, OP_TOLERANCE, |rng| {
            let c = side(rng, 1, 4);
            let (n, h, w) = (side(rng, 1, 3), side(rng, 1, 4), side(rng, 2, 4));
            let x = grad_input(Shape::new(n, c, h, w), rng);
            let gamma = Tensor::uniform(Shape::new(1, c, 1, 1), 0.5, 1.5, rng).with_requires_grad(true);
            let beta = grad_input(Shape::new(1, c, 1, 1), rng);
            let mean = Tensor::uniform(Shape::new(1, c, 1, 1), -0.5, 0.5, rng).into_data();
            let var = Tensor::uniform(Shape::new(1, c, 1, 1), 0.5, 1.5, rng).into_data();
            let build: Build = Box::new(move |g, v| {
                let (mut m, mut s) = (mean.clone(), var.clone());
                let stats = RunningStats {
                    mean: &mut m,
                    var: &mut s,
                };
                g.batch_norm(v[0], v[1], v[2], stats, NormConfig::new(mode))
            });
            Ok((vec![x, gamma, beta], build))
        })?;
    }

    r.case("relu", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 4), side(rng, 1, 5), side(rng, 1, 5));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| Ok(g.relu(v[0])));
        Ok((vec![x], build))
    })?;

    r.case("avg_pool2", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 3), side(rng, 2, 9), side(rng, 2, 9));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| g.avg_pool2(v[0]));
        Ok((vec![x], build))
    })?;

    r.case("max_pool", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 3), side(rng, 3, 8), side(rng, 3, 8));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| g.max_pool(v[0], 3, 2, 1));
        Ok((vec![x], build))
    })?;

    r.case("bilinear_resize", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 3), side(rng, 1, 6), side(rng, 1, 6));
        let (oh, ow) = (side(rng, 1, 9), side(rng, 1, 9));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| g.bilinear_resize(v[0], oh, ow));
        Ok((vec![x], build))
    })?;

    r.case("nearest_resize", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 3), side(rng, 1, 6), side(rng, 1, 6));
        let (oh, ow) = (side(rng, 1, 9), side(rng, 1, 9));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| g.nearest_resize(v[0], oh, ow));
        Ok((vec![x], build))
    })?;

    r.case("global_avg_pool", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 3), side(rng, 1, 4), side(rng, 1, 6), side(rng, 1, 6));
        let x = grad_input(s, rng);
        let build: Build = Box::new(move |g, v| Ok(g.global_avg_pool(v[0])));
        Ok((vec![x], build))
    })?;

    r.check.step = LINEAR_STEP;
    r.case("linear", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 3), side(rng, 1, 6), side(rng, 1, 2), side(rng, 1, 2));
        let out = side(rng, 1, 5);
        let x = grad_input(s, rng);
        let w = grad_input(Shape::new(out, s.c * s.plane(), 1, 1), rng);
        let b = grad_input(Shape::new(1, out, 1, 1), rng);
        let build: Build = Box::new(move |g, v| g.linear(v[0], v[1], Some(v[2])));
        Ok((vec![x, w, b], build))
    })?;
    r.check.step = DEFAULT_STEP;

    r.case("softmax_cross_entropy", OP_TOLERANCE, |rng| {
        let (n, k) = (side(rng, 1, 4), side(rng, 2, 10));
        let x = Tensor::randn(Shape::new(n, k, 1, 1), 2.0, rng).with_requires_grad(true);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let build: Build = Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels));
        Ok((vec![x], build))
    })?;

    r.case("add_n", OP_TOLERANCE, |rng| {
        let s = Shape::new(side(rng, 1, 2), side(rng, 1, 3), side(rng, 1, 4), side(rng, 1, 4));
        let k = side(rng, 2, 4);
        let xs: Vec<Tensor> = (0..k).map(|_| grad_input(s, rng)).collect();
        let build: Build = Box::new(move |g, v| g.add_n(v));
        Ok((xs, build))
    })?;

    r.case("concat", OP_TOLERANCE, |rng| {
        let (n, h, w) = (side(rng, 1, 2), side(rng, 1, 4), side(rng, 1, 4));
        let cs = [side(rng, 1, 3), side(rng, 1, 3)];
        let xs: Vec<Tensor> = cs.iter().map(|&c| grad_input(Shape::new(n, c, h, w), rng)).collect();
        let build: Build = Box::new(move |g, v| g.concat(v));
        Ok((xs, build))
    })?;

    r.check.max_elements = Some(12);
    r.case("elastic_block", COMPOSITE_TOLERANCE, |rng| {
        let spec = random_block_spec(rng)?;
        let x = grad_input(Shape::new(2, spec.in_channels, 8, 8), rng);
        let mut store = ParamStore::new();
        let block = ElasticBlock::new(spec, &mut store, "block", rng)?;
        let trainable: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
        let mut inputs = vec![x];
        inputs.extend(trainable.iter().map(|&id| store.get(id).clone().with_requires_grad(true)));
        let build: Build = Box::new(move |g, v| {
            let mut local = store.clone();
            let mut ctx = Ctx::new(g, &mut local, NormMode::Train, true);
            for (&id, &var) in trainable.iter().zip(&v[1..]) {
                ctx.bind(id, var);
            }
            block.forward(&mut ctx, v[0])
        });
        Ok((inputs, build))
    })?;

    Ok(r.cases)
}

/// Two-tier block on 8 channels with a random kind and split.
fn random_block_spec(rng: &mut ChaCha8Rng) -> Result<ElasticBlockSpec> {
    let high = [Fraction::new(1, 2), Fraction::new(1, 4), Fraction::new(3, 4)][rng.gen_range(0..3)];
    let split = [(1, high), (2, Fraction::from_integer(1) - high)];
    if rng.gen_bool(0.25) {
        ElasticBlockSpec::densenet_baseline(8, 8, 4).with_branches(&split)
    } else {
        let out = [8, 16][rng.gen_range(0..2)];
        ElasticBlockSpec::resnext_baseline(8, 8, out, 4, 1).with_branches(&split)
    }
}
