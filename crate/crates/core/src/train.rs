//! SGD training with momentum, weight decay and a step learning-rate schedule.
//!
//! The update for every trainable tensor is
//!
//! ```text
//! v ← μ·v + (g + λ·w)
//! w ← w − lr·v
//! ```
//!
//! with `lr = base_lr · decay^k`, where `k` counts the entries of
//! `lr_step_epochs` that are ≤ the current (zero-based) epoch.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{resolve, ArchSpec};
use crate::checkpoint::{Checkpoint, NamedTensor, RngState};
use crate::data::{flip_sample, generate_synthetic, load_cifar10, pad_crop_sample, Dataset, Splits, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::network::Network;
use crate::tensor::{Graph, NormMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Cifar10 {
        dir: PathBuf,
        /// Optional caps on the number of samples used from each split.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Splits> {
        match self {
            DatasetConfig::Synthetic(spec) => generate_synthetic(spec),
            DatasetConfig::Cifar10 {
                dir,
                train_limit,
                test_limit,
            } => {
                let s = load_cifar10(dir)?;
                Ok(Splits {
                    train: s.train.take(train_limit.unwrap_or(usize::MAX)),
                    test: s.test.take(test_limit.unwrap_or(usize::MAX)),
                })
            }
        }
    }

    fn is_cifar(&self) -> bool {
        matches!(self, DatasetConfig::Cifar10 { .. })
    }
}

fn default_momentum() -> f32 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Preset name or path to an architecture TOML file.
    pub arch: String,
    pub epochs: usize,
    pub base_lr: f32,
    #[serde(default)]
    pub lr_step_epochs: Vec<usize>,
    #[serde(default = "default_lr_decay")]
    pub lr_decay_factor: f32,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default)]
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset: DatasetConfig,
}

fn default_lr_decay() -> f32 {
    0.1
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    /// A learning rate of exactly zero is accepted so that a run can be
    /// frozen; every other rate must be positive.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train config: {m}")));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be finite and non-negative, got {}", self.base_lr));
        }
        if !(self.lr_decay_factor > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("lr_decay_factor must be positive, momentum in [0, 1), weight_decay non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        let k = self.lr_step_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr * self.lr_decay_factor.powi(k as i32)
    }

    /// The configured architecture with its classifier sized to the dataset.
    pub fn arch_for(&self, num_classes: usize) -> Result<ArchSpec> {
        let mut spec = resolve(&self.arch)?;
        spec.classifier.num_classes = num_classes;
        spec.validate()?;
        Ok(spec)
    }
}

/// One SGD step on a flat buffer.
pub fn sgd_step(w: &mut [f32], v: &mut [f32], g: &[f32], lr: f32, momentum: f32, weight_decay: f32) {
    for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub top1: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: Network,
    velocity: Vec<Vec<f32>>,
    rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
    pub log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_classes: usize) -> Result<Trainer> {
        config.validate()?;
        let spec = config.arch_for(num_classes)?;
        let net = Network::build(&spec, config.seed)?;
        let velocity = net
            .store()
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![0.0; e.tensor.data().len()] } else { Vec::new() })
            .collect();
        // init draws from stream 0; order and augmentation from stream 1
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            net,
            velocity,
            rng,
            step: 0,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// Trains one epoch over `data` and returns the mean loss and top-1 seen
    /// during training.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::Input("training split is empty".into()));
        }
        let lr = self.config.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let mut x = data.batch(chunk)?;
            for i in 0..chunk.len() {
                if self.config.dataset.is_cifar() {
                    let (dx, dy) = (self.rng.gen_range(0..=8), self.rng.gen_range(0..=8));
                    pad_crop_sample(&mut x, i, 4, dx, dy);
                }
                if self.rng.gen_bool(0.5) {
                    flip_sample(&mut x, i);
                }
            }
            let labels = data.labels_of(chunk);
            let mut g = Graph::new();
            let xv = g.leaf(x);
            let out = self.net.forward(&mut g, xv, NormMode::Train, true, false)?;
            let loss = g.softmax_cross_entropy(out.logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: value,
                    epoch: self.epoch,
                    step: self.step as usize,
                    lr,
                });
            }
            let logits = g.value(out.logits);
            let k = logits.shape().c;
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(i, &l)| crate::policy::argmax(&logits.data()[i * k..(i + 1) * k]) == l)
                .count();
            loss_sum += value as f64 * chunk.len() as f64;
            g.backward(loss)?;
            let (momentum, wd) = (self.config.momentum, self.config.weight_decay);
            for (pid, var) in out.bindings {
                if !self.net.store().entry(pid).trainable {
                    continue;
                }
                let Some(grad) = g.grad(var) else { continue };
                let w = self.net.store_mut().get_mut(pid).data_mut();
                sgd_step(w, &mut self.velocity[pid.index()], grad, lr, momentum, wd);
            }
            self.step += 1;
        }
        self.epoch += 1;
        Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
    }

    /// Runs every configured epoch, logging train and test metrics.
    pub fn fit(&mut self, splits: &Splits) -> Result<()> {
        while self.epoch < self.config.epochs {
            let (loss, top1) = self.train_epoch(&splits.train)?;
            let epoch = self.epoch;
            self.log.push(LogRow {
                epoch,
                split: "train",
                loss,
                top1,
            });
            if !splits.test.is_empty() {
                let m = evaluate(&mut self.net, &splits.test, None)?;
                self.log.push(LogRow {
                    epoch,
                    split: "test",
                    loss: m.loss,
                    top1: m.top1,
                });
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let named = |name: String, t: &crate::tensor::Tensor| NamedTensor {
            name,
            shape: t.shape(),
            data: t.data().to_vec(),
        };
        let entries = self.net.store().entries();
        Checkpoint {
            arch_toml: self.net.spec().to_toml(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            params: entries.iter().map(|e| named(e.name.clone(), &e.tensor)).collect(),
            momentum: entries
                .iter()
                .zip(&self.velocity)
                .filter(|(e, _)| e.trainable)
                .map(|(e, v)| NamedTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape(),
                    data: v.clone(),
                })
                .collect(),
        }
    }
}

/// CSV `epoch,split,loss,top1`.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,split,loss,top1\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.loss, r.top1));
    }
    s
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Loads the dataset, trains and returns the final checkpoint and log.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let splits = config.dataset.load()?;
    train_on(config, &splits)
}

pub fn train_on(config: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), splits.train.num_classes)?;
    t.fit(splits)?;
    Ok(TrainOutcome {
        checkpoint: t.checkpoint(),
        log: t.log,
    })
}
