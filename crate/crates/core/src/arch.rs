//! Declarative network descriptions, presets and the transforms defined on them.
//!
//! # Config format
//!
//! Architectures are TOML documents:
//!
//! ```toml
//! name = "toy_resnext_8"
//! family = "resnext"            # or "densenet"
//! input_resolution = 32
//! input_channels = 3
//! compression = "1/2"           # densenet transition width factor (optional)
//!
//! [stem]
//! kernel = 3
//! stride = 1
//! channels = 32
//! max_pool = false              # 3×3 stride-2 max pool after the stem conv
//!
//! [[stages]]
//! num_blocks = 2
//! out_channels = 64
//! resolution = 32               # feature map side inside the stage
//! stride_on_entry = 1           # 1 or 2
//! elastic = true
//!
//! [stages.block]
//! bottleneck_channels = 32
//! cardinality = 8               # resnext only
//! growth = 0                    # densenet only
//! branches = [{ scale_ratio = 1, width_fraction = "1/2" }, { scale_ratio = 2, width_fraction = "1/2" }]
//! resample = { down = "avg_pool", up = "bilinear" }
//!
//! [classifier]
//! num_classes = 10
//! final_norm = false            # BN-ReLU before global pooling (densenet)
//! ```
//!
//! Fractions are written as `"p/q"` strings. `branches` and `resample` may be
//! omitted; they default to the two-tier 50/50 split and average-pool
//! downsampling with bilinear upsampling. For densenet stages `out_channels`
//! must equal the stage input plus `num_blocks · growth`, and a stride-2 entry
//! means a transition layer (BN-ReLU-1×1 compression, 2×2 average pool)
//! precedes the stage.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::block::{BlockKind, ElasticBlockSpec, Fraction, Resample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Resnext,
    Densenet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub max_pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchTemplate {
    pub scale_ratio: usize,
    #[serde(with = "fraction_text")]
    pub width_fraction: Fraction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTemplate {
    pub bottleneck_channels: usize,
    #[serde(default = "one")]
    pub cardinality: usize,
    #[serde(default)]
    pub growth: usize,
    /// Split used by eligible blocks of an elastic stage.
    #[serde(default = "two_tier")]
    pub branches: Vec<BranchTemplate>,
    #[serde(default)]
    pub resample: Resample,
}

fn one() -> usize {
    1
}

/// High- and low-resolution halves, as in the reference ResNeXt layouts.
pub fn two_tier() -> Vec<BranchTemplate> {
    vec![
        BranchTemplate {
            scale_ratio: 1,
            width_fraction: Fraction::new(1, 2),
        },
        BranchTemplate {
            scale_ratio: 2,
            width_fraction: Fraction::new(1, 2),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub num_blocks: usize,
    pub out_channels: usize,
    pub resolution: usize,
    pub stride_on_entry: usize,
    pub elastic: bool,
    pub block: BlockTemplate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub num_classes: usize,
    #[serde(default)]
    pub final_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub family: Family,
    pub input_resolution: usize,
    #[serde(default = "three")]
    pub input_channels: usize,
    #[serde(default, with = "opt_fraction_text", skip_serializing_if = "Option::is_none")]
    pub compression: Option<Fraction>,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub classifier: ClassifierSpec,
}

fn three() -> usize {
    3
}

mod fraction_text {
    use super::*;

    pub fn serialize<S: Serializer>(f: &Fraction, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&f.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Fraction, D::Error> {
        let text = String::deserialize(d)?;
        parse_fraction(&text).map_err(serde::de::Error::custom)
    }
}

mod opt_fraction_text {
    use super::*;

    pub fn serialize<S: Serializer>(f: &Option<Fraction>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match f {
            Some(f) => s.serialize_str(&f.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Fraction>, D::Error> {
        let text = Option::<String>::deserialize(d)?;
        text.map(|t| parse_fraction(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Parses `"p/q"` or `"p"`.
pub fn parse_fraction(text: &str) -> Result<Fraction> {
    let bad = || Error::Config(format!("invalid fraction {text:?}, expected p/q"));
    let (p, q) = match text.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (text.trim(), "1"),
    };
    let p: u32 = p.parse().map_err(|_| bad())?;
    let q: u32 = q.parse().map_err(|_| bad())?;
    if q == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(p, q))
}

/// Position of a block inside an architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockCoord {
    pub stage: usize,
    pub block: usize,
}

impl fmt::Display for BlockCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{}.block{}", self.stage, self.block)
    }
}

/// A fully resolved block: its coordinates, spec and working resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacedBlock {
    pub coord: BlockCoord,
    pub spec: ElasticBlockSpec,
    /// Side of the block's input feature map.
    pub input_resolution: usize,
    /// Side of the block's output feature map.
    pub resolution: usize,
}

/// DenseNet transition preceding a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub stage: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Side before pooling.
    pub resolution: usize,
}

/// Ordered units of a network body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Unit {
    Block(PlacedBlock),
    Transition(Transition),
}

impl ArchSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ArchSpec = toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch specs contain only TOML-representable values")
    }

    /// Same network with different per-stage block counts. DenseNet stage
    /// widths follow the new counts.
    pub fn with_block_counts(&self, counts: &[usize]) -> ArchSpec {
        let mut out = self.clone();
        let mut channels = out.stem.channels;
        for (s, (stage, &n)) in out.stages.iter_mut().zip(counts).enumerate() {
            stage.num_blocks = n;
            if self.family == Family::Densenet {
                if s > 0 && stage.stride_on_entry == 2 {
                    channels = self.transition_width(channels);
                }
                channels += n * stage.block.growth;
                stage.out_channels = channels;
            }
        }
        out
    }

    /// Side of the feature map leaving the stem.
    pub fn stem_resolution(&self) -> Option<usize> {
        let conv = self.input_resolution.checked_div(self.stem.stride)?;
        if conv * self.stem.stride != self.input_resolution {
            return None;
        }
        if self.stem.max_pool {
            (conv % 2 == 0).then_some(conv / 2)
        } else {
            Some(conv)
        }
    }

    pub fn min_resolution(&self) -> usize {
        self.stages.iter().map(|s| s.resolution).min().unwrap_or(0)
    }

    /// Elastic eligibility: blocks that stride on entry and blocks operating
    /// at the smallest resolution tier stay single-scale.
    pub fn eligible(&self, coord: BlockCoord) -> bool {
        let Some(stage) = self.stages.get(coord.stage) else {
            return false;
        };
        let strides = self.family == Family::Resnext && coord.block == 0 && stage.stride_on_entry == 2;
        !strides && stage.resolution > self.min_resolution()
    }

    pub fn is_elastic(&self, coord: BlockCoord) -> bool {
        self.stages[coord.stage].elastic && self.eligible(coord)
    }

    pub fn any_elastic(&self) -> bool {
        self.stages.iter().any(|s| s.elastic)
    }

    pub fn elastic_block_count(&self) -> usize {
        self.blocks().filter(|b| b.spec.is_elastic()).count()
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.num_blocks).collect()
    }

    /// Channels entering the classifier.
    pub fn feature_channels(&self) -> usize {
        self.stages.last().map_or(self.stem.channels, |s| s.out_channels)
    }

    fn blocks(&self) -> impl Iterator<Item = PlacedBlock> + '_ {
        self.units().into_iter().filter_map(|u| match u {
            Unit::Block(b) => Some(b),
            Unit::Transition(_) => None,
        })
    }

    pub fn placed_blocks(&self) -> Vec<PlacedBlock> {
        self.blocks().collect()
    }

    /// Body units in execution order. Assumes [`validate`](Self::validate) passed.
    pub fn units(&self) -> Vec<Unit> {
        let mut units = Vec::new();
        let mut channels = self.stem.channels;
        let mut resolution = self.stem_resolution().unwrap_or(0);
        for (s, stage) in self.stages.iter().enumerate() {
            let t = &stage.block;
            if self.family == Family::Densenet && stage.stride_on_entry == 2 {
                let out = self.transition_width(channels);
                units.push(Unit::Transition(Transition {
                    stage: s,
                    in_channels: channels,
                    out_channels: out,
                    resolution,
                }));
                channels = out;
            }
            for b in 0..stage.num_blocks {
                let coord = BlockCoord { stage: s, block: b };
                let input_resolution = resolution;
                let mut spec = match self.family {
                    Family::Resnext => {
                        let stride = if b == 0 { stage.stride_on_entry } else { 1 };
                        ElasticBlockSpec::resnext_baseline(
                            channels,
                            t.bottleneck_channels,
                            stage.out_channels,
                            t.cardinality,
                            stride,
                        )
                    }
                    Family::Densenet => ElasticBlockSpec::densenet_baseline(channels, t.bottleneck_channels, t.growth),
                };
                spec.resample = t.resample;
                if self.is_elastic(coord) {
                    let split: Vec<_> = t.branches.iter().map(|b| (b.scale_ratio, b.width_fraction)).collect();
                    // Validation guarantees the split is well formed.
                    if let Ok(s) = spec.clone().with_branches(&split) {
                        spec = s;
                    }
                }
                if b == 0 {
                    resolution = stage.resolution;
                }
                channels = spec.out_channels;
                units.push(Unit::Block(PlacedBlock {
                    coord,
                    spec,
                    input_resolution: if self.family == Family::Densenet { resolution } else { input_resolution },
                    resolution,
                }));
            }
        }
        units
    }

    fn transition_width(&self, channels: usize) -> usize {
        let f = self.compression.unwrap_or(Fraction::new(1, 2));
        (Fraction::from_integer(channels as u32) * f).to_integer() as usize
    }

    /// Checks every structural invariant; errors name the offending stage or block.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name)));
        if self.stages.is_empty() {
            return cfg("no stages".into());
        }
        if self.input_resolution == 0 || self.input_channels == 0 || self.stem.channels == 0 {
            return cfg("input and stem sizes must be positive".into());
        }
        if self.stem.stride == 0 || self.stem.kernel == 0 || self.stem.kernel % 2 == 0 {
            return cfg("stem kernel must be odd and stride positive".into());
        }
        if self.classifier.num_classes == 0 {
            return cfg("classifier needs at least one class".into());
        }
        let Some(mut resolution) = self.stem_resolution() else {
            return cfg(format!(
                "input resolution {} is not divisible by the stem's total stride",
                self.input_resolution
            ));
        };
        let mut channels = self.stem.channels;
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.num_blocks == 0 {
                return cfg(format!("stage{s}: needs at least one block"));
            }
            if stage.stride_on_entry != 1 && stage.stride_on_entry != 2 {
                return cfg(format!("stage{s}: stride_on_entry must be 1 or 2"));
            }
            if resolution % stage.stride_on_entry != 0 {
                return cfg(format!(
                    "stage{s}: resolution {resolution} not divisible by stride {}",
                    stage.stride_on_entry
                ));
            }
            resolution /= stage.stride_on_entry;
            if stage.resolution != resolution {
                return cfg(format!(
                    "stage{s}: declared resolution {} but the stride chain gives {resolution}",
                    stage.resolution
                ));
            }
            let t = &stage.block;
            match self.family {
                Family::Resnext => {
                    if t.growth != 0 {
                        return cfg(format!("stage{s}: resnext stages take no growth"));
                    }
                    channels = stage.out_channels;
                }
                Family::Densenet => {
                    if s > 0 && stage.stride_on_entry == 2 {
                        channels = self.transition_width(channels);
                    }
                    let expected = channels + stage.num_blocks * t.growth;
                    if stage.out_channels != expected {
                        return cfg(format!(
                            "stage{s}: out_channels {} but {} input channels plus {} x {} growth give {expected}",
                            stage.out_channels, channels, stage.num_blocks, t.growth
                        ));
                    }
                    channels = expected;
                }
            }
            if stage.elastic {
                if t.branches.is_empty() {
                    return cfg(format!("stage{s}: elastic stage without branches"));
                }
                if stage.resolution == self.min_resolution() {
                    return cfg(format!(
                        "stage{s}: elastic is not allowed at the minimum resolution tier {}",
                        stage.resolution
                    ));
                }
            }
        }
        if let Some(f) = self.compression {
            if self.family != Family::Densenet || f <= Fraction::from_integer(0) || f > Fraction::from_integer(1) {
                return cfg(format!("compression {f} must lie in (0, 1] and only applies to densenet"));
            }
        }
        for i in 1..self.stages.len() {
            if self.stages[i].resolution > self.stages[i - 1].resolution {
                return cfg("stage resolutions must be non-increasing".into());
            }
        }
        for unit in self.units() {
            match unit {
                Unit::Block(b) => {
                    b.spec
                        .validate()
                        .and_then(|_| b.spec.validate_resolution(b.input_resolution, b.input_resolution))
                        .map_err(|e| Error::Config(format!("{}: {}: {}", self.name, b.coord, strip(e))))?;
                    if self.is_elastic(b.coord) && !b.spec.is_elastic() {
                        let t = &self.stages[b.coord.stage].block;
                        let split: Vec<_> = t.branches.iter().map(|b| (b.scale_ratio, b.width_fraction)).collect();
                        let base = b.spec.clone();
                        if let Err(e) = base.with_branches(&split) {
                            return Err(Error::Config(format!("{}: {}: {}", self.name, b.coord, strip(e))));
                        }
                    }
                }
                Unit::Transition(t) => {
                    if t.resolution < 2 {
                        return cfg(format!("stage{}: transition input too small to pool", t.stage));
                    }
                }
            }
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Replaces eligible bottlenecks in place with Elastic ones, keeping block
/// counts and widths.
pub fn selastic_transform(spec: &ArchSpec) -> Result<ArchSpec> {
    if spec.any_elastic() {
        return Err(Error::Usage(format!("{} already has elastic stages", spec.name)));
    }
    let mut out = spec.clone();
    out.name = format!("{}_selastic", spec.name);
    let min = spec.min_resolution();
    for stage in &mut out.stages {
        if stage.resolution > min {
            stage.elastic = true;
        }
    }
    out.validate()?;
    Ok(out)
}

/// Outcome of a block-count search.
#[derive(Clone, Debug, PartialEq)]
pub struct Rebalance {
    pub block_counts: Vec<usize>,
    pub flops_ratio: f64,
    pub params_ratio: f64,
}

/// Block counts for `candidate` (an elastic variant of `baseline` with
/// identical widths) that bring its FLOPs within `tolerance` of the baseline.
///
/// Stages at the minimum resolution tier keep the baseline count since their
/// blocks never become Elastic. Every other stage ranges over
/// `1..=max_blocks`, and every elastic stage must keep at least one Elastic
/// block. Among layouts inside the FLOPs band the one minimizing
/// `|F/F0 - 1| + |P/P0 - 1|` wins, ties going to the layout closest to the
/// baseline counts and then to the lexicographically smallest.
pub fn rebalance(baseline: &ArchSpec, candidate: &ArchSpec, tolerance: f64, max_blocks: usize) -> Result<Rebalance> {
    if baseline.stages.len() != candidate.stages.len() {
        return Err(Error::Config("rebalance needs matching stage lists".into()));
    }
    let target = crate::cost::model_cost(baseline)?;
    let (f0, p0) = (target.total_flops as f64, target.total_params as f64);
    let base = baseline.block_counts();
    let min = candidate.min_resolution();
    let free: Vec<usize> = (0..base.len()).filter(|&s| candidate.stages[s].resolution > min).collect();
    let mut counts = base.clone();
    for &s in &free {
        counts[s] = 1;
    }
    let mut best: Option<((f64, usize), Rebalance)> = None;
    loop {
        let trial = candidate.with_block_counts(&counts);
        let covered = trial.stages.iter().enumerate().all(|(s, stage)| {
            !stage.elastic || (0..stage.num_blocks).any(|b| trial.eligible(BlockCoord { stage: s, block: b }))
        });
        if let (true, Ok(report)) = (covered, crate::cost::model_cost(&trial)) {
            let fr = report.total_flops as f64 / f0;
            let pr = report.total_params as f64 / p0;
            if (fr - 1.0).abs() <= tolerance {
                let distance = counts.iter().zip(&base).map(|(a, b)| a.abs_diff(*b)).sum();
                let key = ((fr - 1.0).abs() + (pr - 1.0).abs(), distance);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((
                        key,
                        Rebalance {
                            block_counts: counts.clone(),
                            flops_ratio: fr,
                            params_ratio: pr,
                        },
                    ));
                }
            }
        }
        // odometer over the free stages, last one fastest
        let mut i = free.len();
        loop {
            if i == 0 {
                return best.map(|(_, r)| r).ok_or_else(|| {
                    Error::Config(format!(
                        "no layout of {} within {:.1}% of {} FLOPs",
                        candidate.name,
                        tolerance * 100.0,
                        baseline.name
                    ))
                });
            }
            i -= 1;
            if counts[free[i]] < max_blocks {
                counts[free[i]] += 1;
                break;
            }
            counts[free[i]] = 1;
        }
    }
}

fn resnext_stage(
    num_blocks: usize,
    out_channels: usize,
    resolution: usize,
    stride: usize,
    width: usize,
    cardinality: usize,
    elastic: bool,
) -> StageSpec {
    StageSpec {
        num_blocks,
        out_channels,
        resolution,
        stride_on_entry: stride,
        elastic,
        block: BlockTemplate {
            bottleneck_channels: width,
            cardinality,
            growth: 0,
            branches: two_tier(),
            resample: Resample::default(),
        },
    }
}

/// ImageNet ResNeXt-style network (32×4d widths) with the given block counts.
fn imagenet_resnext(name: &str, blocks: [usize; 4], elastic: bool) -> ArchSpec {
    let res = [56, 28, 14, 7];
    let outs = [256, 512, 1024, 2048];
    let widths = [128, 256, 512, 1024];
    ArchSpec {
        name: name.into(),
        family: Family::Resnext,
        input_resolution: 224,
        input_channels: 3,
        compression: None,
        stem: StemSpec {
            kernel: 7,
            stride: 2,
            channels: 64,
            max_pool: true,
        },
        stages: (0..4)
            .map(|i| {
                let stride = if i == 0 { 1 } else { 2 };
                resnext_stage(blocks[i], outs[i], res[i], stride, widths[i], 32, elastic && i < 3)
            })
            .collect(),
        classifier: ClassifierSpec {
            num_classes: 1000,
            final_norm: false,
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn densenet(
    name: &str,
    input_resolution: usize,
    stem: StemSpec,
    blocks: &[usize],
    resolutions: &[usize],
    growth: usize,
    bottleneck: usize,
    elastic: bool,
    num_classes: usize,
) -> ArchSpec {
    let mut channels = stem.channels;
    let mut stages = Vec::new();
    for (i, (&n, &r)) in blocks.iter().zip(resolutions).enumerate() {
        if i > 0 {
            channels /= 2;
        }
        channels += n * growth;
        stages.push(StageSpec {
            num_blocks: n,
            out_channels: channels,
            resolution: r,
            stride_on_entry: if i == 0 { 1 } else { 2 },
            elastic: elastic && i + 1 < blocks.len(),
            block: BlockTemplate {
                bottleneck_channels: bottleneck,
                cardinality: 1,
                growth,
                branches: two_tier(),
                resample: Resample::default(),
            },
        });
    }
    ArchSpec {
        name: name.into(),
        family: Family::Densenet,
        input_resolution,
        input_channels: 3,
        compression: Some(Fraction::new(1, 2)),
        stem,
        stages,
        classifier: ClassifierSpec {
            num_classes,
            final_norm: true,
        },
    }
}

fn imagenet_densenet(name: &str, blocks: [usize; 4], elastic: bool) -> ArchSpec {
    let stem = StemSpec {
        kernel: 7,
        stride: 2,
        channels: 64,
        max_pool: true,
    };
    densenet(name, 224, stem, &blocks, &[56, 28, 14, 7], 32, 128, elastic, 1000)
}

/// Desk-scale ResNeXt on 32×32 inputs: stages at 32/16/8.
fn toy_resnext(name: &str, blocks: [usize; 3], stem: usize, outs: [usize; 3], widths: [usize; 3], cardinality: usize, elastic: bool) -> ArchSpec {
    let res = [32, 16, 8];
    ArchSpec {
        name: name.into(),
        family: Family::Resnext,
        input_resolution: 32,
        input_channels: 3,
        compression: None,
        stem: StemSpec {
            kernel: 3,
            stride: 1,
            channels: stem,
            max_pool: false,
        },
        stages: (0..3)
            .map(|i| {
                let stride = if i == 0 { 1 } else { 2 };
                resnext_stage(blocks[i], outs[i], res[i], stride, widths[i], cardinality, elastic && i < 2)
            })
            .collect(),
        classifier: ClassifierSpec {
            num_classes: 10,
            final_norm: false,
        },
    }
}

fn toy_densenet(name: &str, blocks: [usize; 3], elastic: bool) -> ArchSpec {
    let stem = StemSpec {
        kernel: 3,
        stride: 1,
        channels: 16,
        max_pool: false,
    };
    densenet(name, 32, stem, &blocks, &[32, 16, 8], 8, 32, elastic, 10)
}

/// Block counts of the elastic toy presets, as found by [`rebalance`] against
/// their baselines with a 5% FLOPs tolerance.
pub const TOY_RESNEXT_ELASTIC_BLOCKS: [usize; 3] = [4, 2, 2];
pub const TOY_DENSENET_ELASTIC_BLOCKS: [usize; 3] = [5, 1, 3];

pub const PRESET_NAMES: &[&str] = &[
    "resnext50",
    "resnext50_selastic",
    "resnext50_elastic",
    "resnext101",
    "resnext101_elastic",
    "densenet201",
    "densenet201_elastic",
    "toy_resnext_8",
    "toy_resnext_8_elastic",
    "toy_resnext_8_narrow",
    "toy_resnext_8_narrow_elastic",
    "toy_densenet_8",
    "toy_densenet_8_elastic",
];

pub fn preset(name: &str) -> Result<ArchSpec> {
    let e = TOY_RESNEXT_ELASTIC_BLOCKS;
    let spec = match name {
        "resnext50" => imagenet_resnext(name, [3, 4, 6, 3], false),
        "resnext50_selastic" => selastic_transform(&imagenet_resnext("resnext50", [3, 4, 6, 3], false))?,
        "resnext50_elastic" => imagenet_resnext(name, [6, 8, 5, 3], true),
        "resnext101" => imagenet_resnext(name, [3, 4, 23, 3], false),
        "resnext101_elastic" => imagenet_resnext(name, [12, 14, 20, 3], true),
        "densenet201" => imagenet_densenet(name, [6, 12, 48, 32], false),
        "densenet201_elastic" => imagenet_densenet(name, [10, 20, 40, 30], true),
        "toy_resnext_8" => toy_resnext(name, [2, 2, 2], 32, [64, 128, 256], [32, 64, 128], 8, false),
        "toy_resnext_8_elastic" => toy_resnext(name, e, 32, [64, 128, 256], [32, 64, 128], 8, true),
        "toy_resnext_8_narrow" => toy_resnext(name, [2, 2, 2], 16, [32, 64, 128], [16, 32, 64], 4, false),
        "toy_resnext_8_narrow_elastic" => toy_resnext(name, e, 16, [32, 64, 128], [16, 32, 64], 4, true),
        "toy_densenet_8" => toy_densenet(name, [3, 3, 3], false),
        "toy_densenet_8_elastic" => toy_densenet(name, TOY_DENSENET_ELASTIC_BLOCKS, true),
        other => {
            return Err(Error::Usage(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Matched (baseline, elastic) toy pairs.
pub fn toy_pairs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("toy_resnext_8", "toy_resnext_8_elastic"),
        ("toy_resnext_8_narrow", "toy_resnext_8_narrow_elastic"),
        ("toy_densenet_8", "toy_densenet_8_elastic"),
    ]
}

/// Preset name or path to a TOML config.
pub fn resolve(name_or_path: &str) -> Result<ArchSpec> {
    if PRESET_NAMES.contains(&name_or_path) {
        return preset(name_or_path);
    }
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return ArchSpec::from_toml(&text);
    }
    preset(name_or_path)
}

impl BlockKind {
    pub fn family(self) -> Family {
        match self {
            BlockKind::ResnextBottleneck => Family::Resnext,
            BlockKind::DensenetGrowth => Family::Densenet,
        }
    }
}
