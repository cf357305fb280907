//! Elastic blocks: parallel branches that process the input at different
//! resolutions (downsample, transform, upsample) and merge back at the
//! input's native resolution.
//!
//! Two block kinds are supported:
//!
//! * ResNeXt bottleneck. Each branch is `1×1 → BN → ReLU → grouped 3×3 → BN →
//!   ReLU → 1×1`, run at the branch resolution. The branch outputs are
//!   upsampled, summed in branch order, normalized by one shared BN, added to
//!   the (possibly projected) residual and passed through a final ReLU. With a
//!   single `r = 1` branch this is exactly the plain ResNeXt bottleneck.
//! * DenseNet growth layer. The stream is pre-activated once (`BN → ReLU`),
//!   each branch runs `1×1 → BN → ReLU → 3×3` producing `growth` channels, the
//!   upsampled branch outputs are summed and concatenated onto the stream.

use std::fmt;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvParams, Ctx, NormParams, ParamStore};
use crate::tensor::Var;

pub type Fraction = Ratio<u32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    ResnextBottleneck,
    DensenetGrowth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    /// `r×r` average pooling; for `r = 2` this equals half-pixel bilinear.
    #[default]
    AvgPool,
    Bilinear,
    Nearest,
    /// Learned depthwise 3×3 convolution with stride `r`.
    TrainedFilter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resample {
    pub down: Downsample,
    pub up: Upsample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BranchSpec {
    /// Downsampling factor; 1 keeps the native resolution.
    pub scale_ratio: usize,
    /// Share of the bottleneck width (and cardinality) given to this branch.
    pub width_fraction: Fraction,
    pub cardinality: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElasticBlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub bottleneck_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub branches: Vec<BranchSpec>,
    pub residual: bool,
    pub growth: usize,
    pub resample: Resample,
}

impl fmt::Display for ElasticBlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {}→{} (width {}, stride {}) branches [",
            self.kind, self.in_channels, self.out_channels, self.bottleneck_channels, self.stride
        )?;
        for (i, b) in self.branches.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "r={} w={} C={}", b.scale_ratio, b.width_fraction, b.cardinality)?;
        }
        write!(f, "]")
    }
}

impl ElasticBlockSpec {
    /// Plain ResNeXt bottleneck: one native-resolution branch.
    pub fn resnext_baseline(
        in_channels: usize,
        bottleneck_channels: usize,
        out_channels: usize,
        cardinality: usize,
        stride: usize,
    ) -> Self {
        ElasticBlockSpec {
            kind: BlockKind::ResnextBottleneck,
            in_channels,
            bottleneck_channels,
            out_channels,
            stride,
            branches: vec![BranchSpec {
                scale_ratio: 1,
                width_fraction: Fraction::from_integer(1),
                cardinality,
            }],
            residual: true,
            growth: 0,
            resample: Resample::default(),
        }
    }

    /// Plain DenseNet bottleneck layer producing `growth` new channels.
    pub fn densenet_baseline(in_channels: usize, bottleneck_channels: usize, growth: usize) -> Self {
        ElasticBlockSpec {
            kind: BlockKind::DensenetGrowth,
            in_channels,
            bottleneck_channels,
            out_channels: in_channels + growth,
            stride: 1,
            branches: vec![BranchSpec {
                scale_ratio: 1,
                width_fraction: Fraction::from_integer(1),
                cardinality: 1,
            }],
            residual: false,
            growth,
            resample: Resample::default(),
        }
    }

    /// Replaces the branch list with `(scale_ratio, width_fraction)` splits of
    /// this block's total width and cardinality. DenseNet branches keep
    /// ungrouped convolutions.
    pub fn with_branches(mut self, split: &[(usize, Fraction)]) -> Result<Self> {
        let total_card = self.branches.iter().map(|b| b.cardinality).sum::<usize>();
        let dense = self.kind == BlockKind::DensenetGrowth;
        self.branches = split
            .iter()
            .map(|&(r, frac)| {
                let cardinality = if dense {
                    1
                } else {
                    scaled(total_card, frac).ok_or_else(|| {
                        Error::Config(format!("cardinality {total_card} x {frac} is not an integer"))
                    })?
                };
                Ok(BranchSpec {
                    scale_ratio: r,
                    width_fraction: frac,
                    cardinality,
                })
            })
            .collect::<Result<_>>()?;
        self.validate()?;
        Ok(self)
    }

    pub fn max_scale_ratio(&self) -> usize {
        self.branches.iter().map(|b| b.scale_ratio).max().unwrap_or(1)
    }

    pub fn is_elastic(&self) -> bool {
        self.max_scale_ratio() > 1
    }

    /// Bottleneck width of branch `i`.
    pub fn branch_width(&self, i: usize) -> usize {
        scaled(self.bottleneck_channels, self.branches[i].width_fraction)
            .expect("validated specs have integer branch widths")
    }

    /// Checks the structural invariants that do not depend on resolution.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.branches.is_empty() {
            return cfg("block has no branches".into());
        }
        if self.in_channels == 0 || self.bottleneck_channels == 0 || self.out_channels == 0 {
            return cfg(format!("block channels must be positive: {self}"));
        }
        let sum: Fraction = self.branches.iter().map(|b| b.width_fraction).sum();
        if sum != Fraction::from_integer(1) {
            return cfg(format!("branch width fractions sum to {sum}, not 1"));
        }
        if self.branches.len() > 1 && self.branches.iter().any(|b| b.width_fraction >= Fraction::from_integer(1)) {
            return cfg("every branch of a multi-branch block needs a width fraction below 1".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.scale_ratio == 0 {
                return cfg(format!("branch {i}: scale ratio must be at least 1"));
            }
            if b.width_fraction <= Fraction::from_integer(0) {
                return cfg(format!("branch {i}: width fraction must be positive"));
            }
            let Some(width) = scaled(self.bottleneck_channels, b.width_fraction) else {
                return cfg(format!(
                    "branch {i}: width {} x {} is not an integer",
                    self.bottleneck_channels, b.width_fraction
                ));
            };
            if b.cardinality == 0 || width % b.cardinality != 0 {
                return cfg(format!(
                    "branch {i}: width {width} not divisible by cardinality {}",
                    b.cardinality
                ));
            }
        }
        if self.stride != 1 && self.stride != 2 {
            return cfg(format!("stride {} must be 1 or 2", self.stride));
        }
        if self.stride != 1 && self.is_elastic() {
            return cfg("strided blocks cannot carry resolution branches".into());
        }
        match self.kind {
            BlockKind::ResnextBottleneck => {
                if self.growth != 0 {
                    return cfg("resnext blocks have no growth".into());
                }
            }
            BlockKind::DensenetGrowth => {
                if self.growth == 0 || self.out_channels != self.in_channels + self.growth {
                    return cfg(format!(
                        "densenet block must output in + growth channels ({} + {} != {})",
                        self.in_channels, self.growth, self.out_channels
                    ));
                }
                if self.stride != 1 || self.residual {
                    return cfg("densenet growth layers are unstrided and non-residual".into());
                }
            }
        }
        Ok(())
    }

    /// Every branch's scale ratio must divide the feature-map side.
    pub fn validate_resolution(&self, h: usize, w: usize) -> Result<()> {
        for (i, b) in self.branches.iter().enumerate() {
            if h % b.scale_ratio != 0 || w % b.scale_ratio != 0 {
                return Err(Error::Config(format!(
                    "branch {i}: resolution {h}x{w} not divisible by scale ratio {}",
                    b.scale_ratio
                )));
            }
        }
        Ok(())
    }

    fn needs_projection(&self) -> bool {
        self.kind == BlockKind::ResnextBottleneck
            && self.residual
            && (self.in_channels != self.out_channels || self.stride != 1)
    }
}

/// `value · frac` when it is an integer.
pub fn scaled(value: usize, frac: Fraction) -> Option<usize> {
    let v = Fraction::from_integer(value as u32) * frac;
    v.is_integer().then(|| v.to_integer() as usize)
}

#[derive(Clone, Debug)]
struct Branch {
    scale: usize,
    down_filter: Option<ConvParams>,
    reduce: ConvParams,
    reduce_norm: NormParams,
    spatial: ConvParams,
    spatial_norm: Option<NormParams>,
    expand: Option<ConvParams>,
}

/// Post-ReLU activation after a branch's 3×3 stage, as recorded for policy scoring.
#[derive(Clone, Copy, Debug)]
pub struct BranchActivation {
    pub scale_ratio: usize,
    pub activation: Var,
}

/// A block with parameters registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ElasticBlock {
    spec: ElasticBlockSpec,
    branches: Vec<Branch>,
    pre_norm: Option<NormParams>,
    merge_norm: Option<NormParams>,
    projection: Option<(ConvParams, NormParams)>,
}

impl ElasticBlock {
    pub fn new<R: Rng + ?Sized>(
        spec: ElasticBlockSpec,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{name}: {m}")),
            other => other,
        })?;
        let dense = spec.kind == BlockKind::DensenetGrowth;
        let pre_norm = dense
            .then(|| NormParams::new(store, &format!("{name}.pre_norm"), spec.in_channels))
            .transpose()?;
        let mut branches = Vec::with_capacity(spec.branches.len());
        for (i, b) in spec.branches.iter().enumerate() {
            let p = format!("{name}.branch{i}");
            let width = spec.branch_width(i);
            let down_filter = (b.scale_ratio > 1 && spec.resample.down == Downsample::TrainedFilter)
                .then(|| {
                    ConvParams::new(
                        store,
                        &format!("{p}.down"),
                        spec.in_channels,
                        spec.in_channels,
                        3,
                        b.scale_ratio,
                        spec.in_channels,
                        false,
                        rng,
                    )
                })
                .transpose()?;
            let reduce = ConvParams::new(store, &format!("{p}.reduce"), spec.in_channels, width, 1, 1, 1, false, rng)?;
            let reduce_norm = NormParams::new(store, &format!("{p}.reduce_norm"), width)?;
            let (spatial, spatial_norm, expand) = if dense {
                let spatial = ConvParams::new(store, &format!("{p}.spatial"), width, spec.growth, 3, 1, 1, false, rng)?;
                (spatial, None, None)
            } else {
                let spatial = ConvParams::new(
                    store,
                    &format!("{p}.spatial"),
                    width,
                    width,
                    3,
                    spec.stride,
                    b.cardinality,
                    false,
                    rng,
                )?;
                let norm = NormParams::new(store, &format!("{p}.spatial_norm"), width)?;
                let expand =
                    ConvParams::new(store, &format!("{p}.expand"), width, spec.out_channels, 1, 1, 1, false, rng)?;
                (spatial, Some(norm), Some(expand))
            };
            branches.push(Branch {
                scale: b.scale_ratio,
                down_filter,
                reduce,
                reduce_norm,
                spatial,
                spatial_norm,
                expand,
            });
        }
        let merge_norm = (!dense)
            .then(|| NormParams::new(store, &format!("{name}.merge_norm"), spec.out_channels))
            .transpose()?;
        let projection = if spec.needs_projection() {
            let conv = ConvParams::new(
                store,
                &format!("{name}.projection"),
                spec.in_channels,
                spec.out_channels,
                1,
                spec.stride,
                1,
                false,
                rng,
            )?;
            let norm = NormParams::new(store, &format!("{name}.projection_norm"), spec.out_channels)?;
            Some((conv, norm))
        } else {
            None
        };
        Ok(ElasticBlock {
            spec,
            branches,
            pre_norm,
            merge_norm,
            projection,
        })
    }

    pub fn spec(&self) -> &ElasticBlockSpec {
        &self.spec
    }

    /// Learnable parameters of the final 1×1 of branch `i` (ResNeXt kind).
    pub fn branch_expand(&self, i: usize) -> Option<&ConvParams> {
        self.branches.get(i).and_then(|b| b.expand.as_ref())
    }

    /// BN after the 3×3 of branch `i` (ResNeXt kind).
    pub fn branch_spatial_norm(&self, i: usize) -> Option<&NormParams> {
        self.branches.get(i).and_then(|b| b.spatial_norm.as_ref())
    }

    pub fn merge_norm(&self) -> Option<&NormParams> {
        self.merge_norm.as_ref()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        self.forward_captured(ctx, x, None)
    }

    /// Forward pass that optionally records each ResNeXt branch's post-ReLU
    /// 3×3 activation.
    pub fn forward_captured(
        &self,
        ctx: &mut Ctx<'_>,
        x: Var,
        capture: Option<&mut Vec<BranchActivation>>,
    ) -> Result<Var> {
        let outputs = self.branch_outputs(ctx, x, capture)?;
        self.merge(ctx, x, &outputs)
    }

    /// Each branch's output, already upsampled to the input resolution.
    pub fn branch_outputs(
        &self,
        ctx: &mut Ctx<'_>,
        x: Var,
        mut capture: Option<&mut Vec<BranchActivation>>,
    ) -> Result<Vec<Var>> {
        let s = ctx.graph.shape(x);
        if s.c != self.spec.in_channels {
            return Err(Error::shape(
                "elastic_block",
                format!("input has {} channels, block expects {}", s.c, self.spec.in_channels),
            ));
        }
        self.spec.validate_resolution(s.h, s.w)?;
        let source = match &self.pre_norm {
            Some(norm) => {
                let n = norm.forward(ctx, x)?;
                ctx.graph.relu(n)
            }
            None => x,
        };
        let mut outputs = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let input = self.downsample(ctx, br, source)?;
            let h = br.reduce.forward(ctx, input)?;
            let h = br.reduce_norm.forward(ctx, h)?;
            let h = ctx.graph.relu(h);
            let mut h = br.spatial.forward(ctx, h)?;
            if let Some(norm) = &br.spatial_norm {
                let n = norm.forward(ctx, h)?;
                h = ctx.graph.relu(n);
                if let Some(cap) = capture.as_deref_mut() {
                    cap.push(BranchActivation {
                        scale_ratio: br.scale,
                        activation: h,
                    });
                }
            }
            if let Some(expand) = &br.expand {
                h = expand.forward(ctx, h)?;
            }
            if br.scale > 1 {
                let target = ctx.graph.shape(h);
                let (oh, ow) = (target.h * br.scale, target.w * br.scale);
                h = match self.spec.resample.up {
                    Upsample::Bilinear => ctx.graph.bilinear_resize(h, oh, ow)?,
                    Upsample::Nearest => ctx.graph.nearest_resize(h, oh, ow)?,
                };
            }
            outputs.push(h);
        }
        Ok(outputs)
    }

    /// Sums branch outputs in branch order and applies the kind's merge rule.
    pub fn merge(&self, ctx: &mut Ctx<'_>, x: Var, outputs: &[Var]) -> Result<Var> {
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            ctx.graph.add_n(outputs)?
        };
        match self.spec.kind {
            BlockKind::DensenetGrowth => ctx.graph.concat(&[x, merged]),
            BlockKind::ResnextBottleneck => {
                let norm = self.merge_norm.as_ref().expect("resnext blocks own a merge norm");
                let y = norm.forward(ctx, merged)?;
                if !self.spec.residual {
                    return Ok(ctx.graph.relu(y));
                }
                let shortcut = match &self.projection {
                    Some((conv, norm)) => {
                        let p = conv.forward(ctx, x)?;
                        norm.forward(ctx, p)?
                    }
                    None => x,
                };
                let sum = ctx.graph.add(y, shortcut)?;
                Ok(ctx.graph.relu(sum))
            }
        }
    }

    fn downsample(&self, ctx: &mut Ctx<'_>, br: &Branch, x: Var) -> Result<Var> {
        let r = br.scale;
        if r == 1 {
            return Ok(x);
        }
        let s = ctx.graph.shape(x);
        match self.spec.resample.down {
            Downsample::AvgPool => ctx.graph.avg_pool(x, r),
            Downsample::Bilinear => ctx.graph.bilinear_resize(x, s.h / r, s.w / r),
            Downsample::Nearest => ctx.graph.nearest_resize(x, s.h / r, s.w / r),
            Downsample::TrainedFilter => br
                .down_filter
                .as_ref()
                .expect("trained-filter branches own a filter")
                .forward(ctx, x),
        }
    }
}
