//! Named parameter storage and the parameterized layers networks are built from.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvConfig, Graph, NormConfig, NormMode, RunningStats, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the store's manifest.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers such as running statistics are stored but never optimized.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the manifest order
/// used by checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Number of learnable scalars.
    pub fn trainable_count(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.shape().numel() as u64)
            .sum()
    }

    fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert!(a.0 < b.0, "parameter pair must be ordered");
        let (lo, hi) = self.entries.split_at_mut(b.0);
        (&mut lo[a.0].tensor, &mut hi[0].tensor)
    }
}

/// Per-forward binding of parameters into a graph.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    store: &'a mut ParamStore,
    bound: HashMap<ParamId, Var>,
    pub mode: NormMode,
    track_grads: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, store: &'a mut ParamStore, mode: NormMode, track_grads: bool) -> Self {
        Ctx {
            graph,
            store,
            bound: HashMap::new(),
            mode,
            track_grads,
        }
    }

    /// Leaf for `id`, created on first use within this forward pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let t = entry
            .tensor
            .clone()
            .with_requires_grad(self.track_grads && entry.trainable);
        let v = self.graph.leaf(t);
        self.bound.insert(id, v);
        v
    }

    /// Uses an existing graph node for `id` instead of a fresh leaf.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound.insert(id, var);
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// `(parameter, leaf)` pairs bound so far, sorted by parameter.
    pub fn bindings(&self) -> Vec<(ParamId, Var)> {
        let mut b: Vec<_> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        b.sort();
        b
    }
}

pub fn he_std(fan_in: usize) -> f32 {
    (2.0 / fan_in as f64).sqrt() as f32
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    /// He-normal (fan-in) initialized convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "{name}: groups={groups} must divide in_channels={in_channels} and out_channels={out_channels}"
            )));
        }
        let fan_in = in_channels / groups * kernel * kernel;
        let shape = Shape::new(out_channels, in_channels / groups, kernel, kernel);
        let weight = store.add(format!("{name}.weight"), Tensor::randn(shape, he_std(fan_in), rng), true)?;
        let bias = bias
            .then(|| store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out_channels, 1, 1)), true))
            .transpose()?;
        Ok(ConvParams {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            groups,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(
            x,
            w,
            b,
            ConvConfig {
                stride: self.stride,
                padding: self.padding,
                groups: self.groups,
            },
        )
    }
}

#[derive(Clone, Debug)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub epsilon: f32,
    pub momentum: f32,
}

impl NormParams {
    /// gamma = 1, beta = 0, running statistics at the identity.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let s = Shape::new(1, channels, 1, 1);
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(s, 1.0), true)?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(s), true)?;
        let running_mean = store.add(format!("{name}.running_mean"), Tensor::zeros(s), false)?;
        let running_var = store.add(format!("{name}.running_var"), Tensor::full(s, 1.0), false)?;
        Ok(NormParams {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            epsilon: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let cfg = NormConfig {
            epsilon: self.epsilon,
            momentum: self.momentum,
            mode: ctx.mode,
        };
        let (mean, var) = ctx.store.pair_mut(self.running_mean, self.running_var);
        ctx.graph.batch_norm(
            x,
            gamma,
            beta,
            RunningStats {
                mean: mean.data_mut(),
                var: var.data_mut(),
            },
            cfg,
        )
    }
}

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearParams {
    /// Normal init with std `1/sqrt(fan_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = (1.0 / in_features as f64).sqrt() as f32;
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(Shape::new(out_features, in_features, 1, 1), std, rng),
            true,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out_features, 1, 1)), true)?;
        Ok(LinearParams {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.graph.linear(x, w, Some(b))
    }
}
