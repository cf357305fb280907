//! Executable networks built from an [`ArchSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchSpec, BlockCoord, Family, Unit};
use crate::block::{BranchActivation, ElasticBlock};
use crate::error::{Error, Result};
use crate::nn::{ConvParams, Ctx, LinearParams, NormParams, ParamId, ParamStore};
use crate::tensor::{Graph, NormMode, Var};

enum Body {
    Block { coord: BlockCoord, block: ElasticBlock },
    Transition { norm: NormParams, conv: ConvParams },
}

/// Branch activations recorded inside one Elastic block.
#[derive(Clone, Debug)]
pub struct BlockCapture {
    pub coord: BlockCoord,
    pub branches: Vec<BranchActivation>,
}

pub struct Forward {
    pub logits: Var,
    /// Input to the global pool.
    pub features: Var,
    /// Captures of every Elastic block in network order (empty unless asked).
    pub captures: Vec<BlockCapture>,
    /// Graph leaves holding each parameter, for reading gradients back.
    pub bindings: Vec<(ParamId, Var)>,
}

pub struct Network {
    spec: ArchSpec,
    store: ParamStore,
    stem_conv: ConvParams,
    stem_norm: NormParams,
    body: Vec<Body>,
    final_norm: Option<NormParams>,
    fc: LinearParams,
}

impl Network {
    /// Builds and initializes every parameter from `seed`. Identical seeds give
    /// bit-identical parameters.
    pub fn build(spec: &ArchSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem_conv = ConvParams::new(
            &mut store,
            "stem.conv",
            spec.input_channels,
            spec.stem.channels,
            spec.stem.kernel,
            spec.stem.stride,
            1,
            false,
            &mut rng,
        )?;
        let stem_norm = NormParams::new(&mut store, "stem.norm", spec.stem.channels)?;
        let mut body = Vec::new();
        for unit in spec.units() {
            match unit {
                Unit::Block(b) => {
                    let block = ElasticBlock::new(b.spec, &mut store, &b.coord.to_string(), &mut rng)?;
                    body.push(Body::Block { coord: b.coord, block });
                }
                Unit::Transition(t) => {
                    let p = format!("stage{}.transition", t.stage);
                    let norm = NormParams::new(&mut store, &format!("{p}.norm"), t.in_channels)?;
                    let conv = ConvParams::new(
                        &mut store,
                        &format!("{p}.conv"),
                        t.in_channels,
                        t.out_channels,
                        1,
                        1,
                        1,
                        false,
                        &mut rng,
                    )?;
                    body.push(Body::Transition { norm, conv });
                }
            }
        }
        let c = spec.feature_channels();
        let final_norm = spec
            .classifier
            .final_norm
            .then(|| NormParams::new(&mut store, "final_norm", c))
            .transpose()?;
        let fc = LinearParams::new(&mut store, "fc", c, spec.classifier.num_classes, &mut rng)?;
        Ok(Network {
            spec: spec.clone(),
            store,
            stem_conv,
            stem_norm,
            body,
            final_norm,
            fc,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> u64 {
        self.store.trainable_count()
    }

    pub fn elastic_blocks(&self) -> impl Iterator<Item = (BlockCoord, &ElasticBlock)> {
        self.body.iter().filter_map(|b| match b {
            Body::Block { coord, block } if block.spec().is_elastic() => Some((*coord, block)),
            _ => None,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = (BlockCoord, &ElasticBlock)> {
        self.body.iter().filter_map(|b| match b {
            Body::Block { coord, block } => Some((*coord, block)),
            Body::Transition { .. } => None,
        })
    }

    /// Runs the network on `x`. Spatial size may differ from the architecture's input
    /// resolution; the global pool adapts to whatever reaches it.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: NormMode, track_grads: bool, capture: bool) -> Result<Forward> {
        let s = g.shape(x);
        if s.c != self.spec.input_channels {
            return Err(Error::shape(
                "network",
                format!("input has {} channels, {} expects {}", s.c, self.spec.name, self.spec.input_channels),
            ));
        }
        let mut ctx = Ctx::new(g, &mut self.store, mode, track_grads);
        let mut h = self.stem_conv.forward(&mut ctx, x)?;
        h = self.stem_norm.forward(&mut ctx, h)?;
        h = ctx.graph.relu(h);
        if self.spec.stem.max_pool {
            h = ctx.graph.max_pool(h, 3, 2, 1)?;
        }
        let mut captures = Vec::new();
        for unit in &self.body {
            h = match unit {
                Body::Block { coord, block } => {
                    if capture && block.spec().is_elastic() {
                        let mut branches = Vec::new();
                        let y = block.forward_captured(&mut ctx, h, Some(&mut branches))?;
                        captures.push(BlockCapture { coord: *coord, branches });
                        y
                    } else {
                        block.forward(&mut ctx, h)?
                    }
                }
                Body::Transition { norm, conv } => {
                    let n = norm.forward(&mut ctx, h)?;
                    let n = ctx.graph.relu(n);
                    let c = conv.forward(&mut ctx, n)?;
                    ctx.graph.avg_pool2(c)?
                }
            };
        }
        if let Some(norm) = &self.final_norm {
            let n = norm.forward(&mut ctx, h)?;
            h = ctx.graph.relu(n);
        }
        let features = h;
        let pooled = ctx.graph.global_avg_pool(h);
        let logits = self.fc.forward(&mut ctx, pooled)?;
        let bindings = ctx.bindings();
        Ok(Forward {
            logits,
            features,
            captures,
            bindings,
        })
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }
}
