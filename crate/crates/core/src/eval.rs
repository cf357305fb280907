//! Evaluation, optionally at a resolution other than the training one.
//!
//! When a resolution is given the inputs are bilinearly resized to it and the
//! global pool simply averages whatever feature map reaches it.

use crate::cost::model_cost_at;
use crate::data::{Dataset, Stratum};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::policy::argmax;
use crate::tensor::{Graph, NormMode};

pub const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct StratumMetrics {
    pub stratum: Stratum,
    pub count: usize,
    pub correct: usize,
}

impl StratumMetrics {
    pub fn top1(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.correct as f64 / self.count as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub resolution: usize,
    pub count: usize,
    pub correct: usize,
    pub loss: f64,
    pub top1: f64,
    /// Empty for datasets without stratum tags.
    pub per_stratum: Vec<StratumMetrics>,
    /// Symbolic FLOPs of one image at `resolution`.
    pub flops: u64,
    /// MACs the executing graph counted, per image.
    pub executed_macs: u64,
    /// Elements of one sample's feature map entering the global pool.
    pub pooled_elements: usize,
    pub predictions: Vec<usize>,
}

pub fn evaluate(net: &mut Network, data: &Dataset, resolution: Option<usize>) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    if data.height != data.width {
        return Err(Error::Input(format!("expected square images, got {}x{}", data.height, data.width)));
    }
    let res = resolution.unwrap_or(data.height);
    let flops = model_cost_at(net.spec(), res)?.total_flops;
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    let (mut executed_macs, mut pooled_elements) = (0, 0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let labels = data.labels_of(chunk);
        let mut g = Graph::new();
        let mut x = g.leaf(data.batch(chunk)?);
        if res != data.height {
            x = g.bilinear_resize(x, res, res)?;
        }
        let out = net.forward(&mut g, x, NormMode::Eval, false, false)?;
        let loss = g.softmax_cross_entropy(out.logits, &labels)?;
        loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
        let logits = g.value(out.logits);
        let k = logits.shape().c;
        for (i, &l) in labels.iter().enumerate() {
            let p = argmax(&logits.data()[i * k..(i + 1) * k]);
            correct += usize::from(p == l);
            predictions.push(p);
        }
        executed_macs = g.macs() / chunk.len() as u64;
        let f = g.shape(out.features);
        pooled_elements = f.c * f.plane();
    }
    let per_stratum = match data.strata() {
        Some(strata) => Stratum::ALL
            .iter()
            .map(|&s| {
                let members: Vec<usize> = (0..data.len()).filter(|&i| strata[i] == s).collect();
                StratumMetrics {
                    stratum: s,
                    count: members.len(),
                    correct: members.iter().filter(|&&i| predictions[i] == data.labels[i]).count(),
                }
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(EvalMetrics {
        resolution: res,
        count: data.len(),
        correct,
        loss: loss_sum / data.len() as f64,
        top1: correct as f64 / data.len() as f64,
        per_stratum,
        flops,
        executed_macs,
        pooled_elements,
        predictions,
    })
}

/// Evaluates at each resolution in turn.
pub fn stress(net: &mut Network, data: &Dataset, resolutions: &[usize]) -> Result<Vec<EvalMetrics>> {
    resolutions.iter().map(|&r| evaluate(net, data, Some(r))).collect()
}
