//! FLOPs and parameter accounting.
//!
//! One multiply-accumulate counts as one FLOP. Only convolutions and the
//! classifier's matrix product cost anything; bias adds, batch norm,
//! activations, pooling and resampling are free. Parameters are every
//! learnable value, BN affine terms included, running statistics excluded.

use std::fmt;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Family, PlacedBlock, Unit};
use crate::block::{BlockKind, Downsample};
use crate::error::{Error, Result};

pub type Exact = Ratio<i128>;

pub const CONVENTION: &str = "mac=1flop;conv+fc;bias/bn/act/pool/resize=0;params=learnable+bn_affine";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    FeaturePyramidConcat,
    FeaturePyramidAdd,
    FilterPyramidStandard,
    FilterPyramidDilated,
    Elastic,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Single,
        Method::FeaturePyramidConcat,
        Method::FeaturePyramidAdd,
        Method::FilterPyramidStandard,
        Method::FilterPyramidDilated,
        Method::Elastic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::FeaturePyramidConcat => "feature_pyramid_concat",
            Method::FeaturePyramidAdd => "feature_pyramid_add",
            Method::FilterPyramidStandard => "filter_pyramid_standard",
            Method::FilterPyramidDilated => "filter_pyramid_dilated",
            Method::Elastic => "elastic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One convolution on an `n×n×c` input with a `k×k` filter, split into `q`
/// branches. `b[i]` is the branching denominator (branch `i` gets `1/b[i]` of
/// the width) and `r[i]` its scaling ratio.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostQuery {
    pub method: Method,
    pub n: i128,
    pub c: i128,
    pub k: i128,
    pub b: Vec<Exact>,
    pub r: Vec<i128>,
}

impl CostQuery {
    pub fn q(&self) -> usize {
        self.b.len()
    }

    pub fn with_method(&self, method: Method) -> Self {
        CostQuery { method, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.n < 1 || self.c < 1 || self.k < 1 {
            return bad(format!("n, c, k must be positive (got {}, {}, {})", self.n, self.c, self.k));
        }
        if self.b.is_empty() || self.b.len() != self.r.len() {
            return bad(format!("need q >= 1 with |b| = |r| (got {} and {})", self.b.len(), self.r.len()));
        }
        if self.r.iter().any(|&r| r < 1) {
            return bad("scaling ratios must be >= 1".into());
        }
        let one = Exact::from_integer(1);
        if self.b.iter().any(|&b| b <= Exact::from_integer(0)) {
            return bad("branching denominators must be positive".into());
        }
        if self.q() > 1 && self.b.iter().any(|&b| b <= one) {
            return bad("with more than one branch every b_i must exceed 1".into());
        }
        let sum: Exact = self.b.iter().map(|b| b.recip()).sum();
        if sum != one {
            return bad(format!("sum of 1/b_i is {sum}, not 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cost {
    pub flops: Exact,
    pub params: Exact,
}

/// The six rows of the multi-scaling comparison, in exact rationals.
pub fn conv_method_cost(q: &CostQuery) -> Result<Cost> {
    q.validate()?;
    let (n, c, k) = (Exact::from(q.n), Exact::from(q.c), Exact::from(q.k));
    let single = Cost {
        flops: n * n * c * k * k,
        params: c * k * k,
    };
    let branches = || q.b.iter().zip(&q.r).map(|(&b, &r)| (b, Exact::from(r)));
    Ok(match q.method {
        Method::Single | Method::FeaturePyramidAdd | Method::FilterPyramidDilated => single,
        Method::FeaturePyramidConcat => {
            let qc = Exact::from(q.q() as i128) * c;
            Cost {
                flops: n * n * qc * k * k,
                params: qc * k * k,
            }
        }
        Method::FilterPyramidStandard => Cost {
            flops: branches().map(|(b, r)| n * n * c * (k * r) * (k * r) / b).sum(),
            params: branches().map(|(b, r)| c * (k * r) * (k * r) / b).sum(),
        },
        Method::Elastic => Cost {
            flops: branches().map(|(b, r)| (n / r) * (n / r) * c * k * k / b).sum(),
            params: single.params,
        },
    })
}

/// Elastic row with `⌊n/r⌋` feature-map sides, as a real network would see them.
pub fn elastic_cost_floor(q: &CostQuery) -> Result<Cost> {
    q.validate()?;
    let (c, k) = (Exact::from(q.c), Exact::from(q.k));
    let flops = q
        .b
        .iter()
        .zip(&q.r)
        .map(|(&b, &r)| {
            let side = Exact::from(q.n / r);
            side * side * c * k * k / b
        })
        .sum();
    Ok(Cost {
        flops,
        params: c * k * k,
    })
}

/// Random valid query: `q ≤ 8` branches with random width shares and
/// `r ≤ 8`.
pub fn random_query<R: Rng + ?Sized>(rng: &mut R) -> CostQuery {
    let q = rng.gen_range(1..=8usize);
    let shares: Vec<i128> = (0..q).map(|_| rng.gen_range(1..=8)).collect();
    let total: i128 = shares.iter().sum();
    CostQuery {
        method: Method::Elastic,
        n: rng.gen_range(1..=224),
        c: rng.gen_range(1..=512),
        k: [1, 3, 5, 7][rng.gen_range(0..4)],
        b: shares.iter().map(|&s| Exact::new(total, s)).collect(),
        r: (0..q).map(|_| rng.gen_range(1..=8)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundReport {
    pub trials: usize,
    pub strict: usize,
    pub equal: usize,
    pub counterexample: Option<CostQuery>,
}

/// Checks elastic ≤ single-scale FLOPs (equality exactly when every `r_i = 1`)
/// and equal parameters, stopping at the first counterexample.
pub fn verify_elastic_bound<G>(mut generator: G, trials: usize) -> Result<BoundReport>
where
    G: FnMut() -> CostQuery,
{
    let mut report = BoundReport {
        trials: 0,
        strict: 0,
        equal: 0,
        counterexample: None,
    };
    for _ in 0..trials {
        let q = generator().with_method(Method::Elastic);
        let elastic = conv_method_cost(&q)?;
        let single = conv_method_cost(&q.with_method(Method::Single))?;
        report.trials += 1;
        let all_native = q.r.iter().all(|&r| r == 1);
        let ok = elastic.params == single.params
            && if all_native {
                elastic.flops == single.flops
            } else {
                elastic.flops < single.flops
            };
        if !ok {
            report.counterexample = Some(q);
            break;
        }
        if all_native {
            report.equal += 1;
        } else {
            report.strict += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub id: String,
    pub flops: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub arch: String,
    pub input_resolution: usize,
    pub per_layer: Vec<LayerCost>,
    pub total_flops: u64,
    pub total_params: u64,
    pub convention: &'static str,
}

impl CostReport {
    /// Layers whose id starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.per_layer
            .iter()
            .filter(|l| l.id.starts_with(prefix))
            .fold((0, 0), |(f, p), l| (f + l.flops, p + l.params))
    }
}

struct Acc {
    layers: Vec<LayerCost>,
}

impl Acc {
    fn conv(&mut self, id: String, cin: usize, cout: usize, k: usize, groups: usize, out_side: usize) {
        let params = (cout * (cin / groups) * k * k) as u64;
        let flops = params * (out_side * out_side) as u64;
        self.layers.push(LayerCost { id, flops, params });
    }

    fn norm(&mut self, id: String, channels: usize) {
        self.layers.push(LayerCost {
            id,
            flops: 0,
            params: 2 * channels as u64,
        });
    }
}

/// Side after a `k×k` convolution with padding `k/2`.
pub fn conv_side(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

/// Whole-network accounting at the spec's own input resolution.
pub fn model_cost(spec: &ArchSpec) -> Result<CostReport> {
    spec.validate()?;
    let mut acc = Acc { layers: Vec::new() };
    let stem_side = conv_side(spec.input_resolution, spec.stem.kernel, spec.stem.stride);
    acc.conv(
        "stem.conv".into(),
        spec.input_channels,
        spec.stem.channels,
        spec.stem.kernel,
        1,
        stem_side,
    );
    acc.norm("stem.norm".into(), spec.stem.channels);
    for unit in spec.units() {
        match unit {
            Unit::Transition(t) => {
                let p = format!("stage{}.transition", t.stage);
                acc.norm(format!("{p}.norm"), t.in_channels);
                acc.conv(format!("{p}.conv"), t.in_channels, t.out_channels, 1, 1, t.resolution);
            }
            Unit::Block(b) => block_cost(&mut acc, &b),
        }
    }
    let c = spec.feature_channels();
    if spec.classifier.final_norm {
        acc.norm("final_norm".into(), c);
    }
    let k = spec.classifier.num_classes;
    acc.layers.push(LayerCost {
        id: "fc".into(),
        flops: (c * k) as u64,
        params: (c * k + k) as u64,
    });
    let total_flops = acc.layers.iter().map(|l| l.flops).sum();
    let total_params = acc.layers.iter().map(|l| l.params).sum();
    Ok(CostReport {
        arch: spec.name.clone(),
        input_resolution: spec.input_resolution,
        per_layer: acc.layers,
        total_flops,
        total_params,
        convention: CONVENTION,
    })
}

/// Accounting at another input side (the stress-test setting).
pub fn model_cost_at(spec: &ArchSpec, input_resolution: usize) -> Result<CostReport> {
    model_cost(&spec.at_resolution(input_resolution)?)
}

fn block_cost(acc: &mut Acc, b: &PlacedBlock) {
    let s = &b.spec;
    let name = b.coord.to_string();
    let dense = s.kind == BlockKind::DensenetGrowth;
    if dense {
        acc.norm(format!("{name}.pre_norm"), s.in_channels);
    }
    for (i, br) in s.branches.iter().enumerate() {
        let p = format!("{name}.branch{i}");
        let w = s.branch_width(i);
        let r = br.scale_ratio;
        let in_side = b.input_resolution / r;
        let side = b.resolution / r;
        if r > 1 && s.resample.down == Downsample::TrainedFilter {
            acc.conv(format!("{p}.down"), s.in_channels, s.in_channels, 3, s.in_channels, in_side);
        }
        acc.conv(format!("{p}.reduce"), s.in_channels, w, 1, 1, in_side);
        acc.norm(format!("{p}.reduce_norm"), w);
        if dense {
            acc.conv(format!("{p}.spatial"), w, s.growth, 3, 1, side);
        } else {
            acc.conv(format!("{p}.spatial"), w, w, 3, br.cardinality, side);
            acc.norm(format!("{p}.spatial_norm"), w);
            acc.conv(format!("{p}.expand"), w, s.out_channels, 1, 1, side);
        }
    }
    if !dense {
        acc.norm(format!("{name}.merge_norm"), s.out_channels);
        if s.in_channels != s.out_channels || s.stride != 1 {
            acc.conv(format!("{name}.projection"), s.in_channels, s.out_channels, 1, 1, b.resolution);
            acc.norm(format!("{name}.projection_norm"), s.out_channels);
        }
    }
}

impl ArchSpec {
    /// The same network fed `input_resolution`-sized images: every stage
    /// side rescales along the stride chain.
    pub fn at_resolution(&self, input_resolution: usize) -> Result<ArchSpec> {
        let mut out = self.clone();
        out.input_resolution = input_resolution;
        let mut side = out.stem_resolution().unwrap_or(0);
        let mut ok = side > 0;
        for stage in &mut out.stages {
            ok &= side % stage.stride_on_entry == 0;
            side /= stage.stride_on_entry;
            stage.resolution = side;
        }
        if ok && out.validate().is_ok() {
            return Ok(out);
        }
        let valid: Vec<String> = (1..=4 * self.input_resolution)
            .filter(|&r| r != input_resolution && self.at_resolution_quiet(r))
            .map(|r| r.to_string())
            .collect();
        Err(Error::Input(format!(
            "{} cannot run at resolution {input_resolution}; valid sizes up to {}: {}",
            self.name,
            4 * self.input_resolution,
            valid.join(", ")
        )))
    }

    fn at_resolution_quiet(&self, r: usize) -> bool {
        let mut out = self.clone();
        out.input_resolution = r;
        let Some(mut side) = out.stem_resolution() else {
            return false;
        };
        for stage in &mut out.stages {
            if side % stage.stride_on_entry != 0 {
                return false;
            }
            side /= stage.stride_on_entry;
            stage.resolution = side;
        }
        side > 0 && out.validate().is_ok()
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Resnext => "resnext",
            Family::Densenet => "densenet",
        }
    }
}
