//! Scale policy scores: how strongly an input exercised the high-resolution
//! branch of each Elastic block relative to the low-resolution one.
//!
//! For a block with a native branch activation `x_high` (`2H×2W×C`) and a
//! half-resolution branch activation `x_low` (`H×W×C`), both taken after the
//! 3×3 convolution, batch norm in eval mode and ReLU:
//!
//! ```text
//! S = Σ x_high / (4HWC) − Σ x_low / (HWC)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Graph, NormMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTrace {
    pub image_id: String,
    pub label: Option<usize>,
    pub prediction: Option<usize>,
    /// One score per Elastic block, in network order.
    pub scores: Vec<f64>,
}

impl PolicyTrace {
    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

fn check_pair(high: &Tensor, low: &Tensor) -> Result<()> {
    let (h, l) = (high.shape(), low.shape());
    if h.n != l.n || h.c != l.c || h.h != 2 * l.h || h.w != 2 * l.w {
        return Err(Error::Input(format!(
            "scale score needs x_high = (N, C, 2H, 2W) and x_low = (N, C, H, W), got {h} and {l}"
        )));
    }
    Ok(())
}

/// S over the whole tensors.
pub fn block_scale_score(high: &Tensor, low: &Tensor) -> Result<f64> {
    check_pair(high, low)?;
    Ok(high.mean() - low.mean())
}

/// S for every sample of a batch.
pub fn per_sample_scores(high: &Tensor, low: &Tensor) -> Result<Vec<f64>> {
    check_pair(high, low)?;
    let (h, l) = (high.shape(), low.shape());
    let (hs, ls) = (h.c * h.plane(), l.c * l.plane());
    let mean = |d: &[f32]| d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
    Ok(high
        .data()
        .chunks_exact(hs)
        .zip(low.data().chunks_exact(ls))
        .map(|(h, l)| mean(h) - mean(l))
        .collect())
}

/// One eval-mode forward over `images`; returns a trace per image.
pub fn trace_batch(
    net: &mut Network,
    images: &Tensor,
    ids: &[String],
    labels: Option<&[usize]>,
) -> Result<Vec<PolicyTrace>> {
    let n = images.shape().n;
    if ids.len() != n || labels.is_some_and(|l| l.len() != n) {
        return Err(Error::Input(format!("{n} images but {} ids", ids.len())));
    }
    let blocks: Vec<_> = net.elastic_blocks().map(|(c, b)| (c, b.spec().clone())).collect();
    if blocks.is_empty() {
        return Err(Error::Usage(format!("{} has no Elastic blocks to score", net.spec().name)));
    }
    for (coord, spec) in &blocks {
        let ratios: Vec<_> = spec.branches.iter().map(|b| b.scale_ratio).collect();
        if ratios != [1, 2] || spec.kind != crate::block::BlockKind::ResnextBottleneck {
            return Err(Error::Usage(format!(
                "{coord}: scale scores are defined for two-tier (r = 1, 2) ResNeXt Elastic blocks, found {spec}"
            )));
        }
    }
    let mut g = Graph::new();
    let x = g.leaf(images.clone());
    let out = net.forward(&mut g, x, NormMode::Eval, false, true)?;
    let logits = g.value(out.logits);
    let k = logits.shape().c;
    let mut traces: Vec<PolicyTrace> = (0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            PolicyTrace {
                image_id: ids[i].clone(),
                label: labels.map(|l| l[i]),
                prediction: Some(argmax(row)),
                scores: Vec::with_capacity(blocks.len()),
            }
        })
        .collect();
    for cap in &out.captures {
        let high = cap.branches.iter().find(|b| b.scale_ratio == 1);
        let low = cap.branches.iter().find(|b| b.scale_ratio == 2);
        let (Some(high), Some(low)) = (high, low) else {
            return Err(Error::Usage(format!("{}: missing branch capture", cap.coord)));
        };
        let scores = per_sample_scores(g.value(high.activation), g.value(low.activation))?;
        for (t, s) in traces.iter_mut().zip(scores) {
            t.scores.push(s);
        }
    }
    Ok(traces)
}

/// Trace of a single `1×C×H×W` image.
pub fn trace_image(net: &mut Network, image: &Tensor, image_id: &str) -> Result<PolicyTrace> {
    if image.shape().n != 1 {
        return Err(Error::Input(format!("trace_image takes one image, got batch {}", image.shape().n)));
    }
    let mut t = trace_batch(net, image, &[image_id.to_string()], None)?;
    Ok(t.remove(0))
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Category,
    Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    /// Category label (`None` for unlabeled traces) or block index.
    pub key: Option<usize>,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Category rows average every block of every image in the category; block
/// rows summarize one block's scores across images. Rows are sorted by mean
/// (smallest first), then key.
pub fn aggregate(traces: &[PolicyTrace], group_by: GroupBy) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<Option<usize>, Vec<f64>> = BTreeMap::new();
    for t in traces {
        match group_by {
            GroupBy::Category => groups.entry(t.label).or_default().extend(&t.scores),
            GroupBy::Block => {
                for (i, &s) in t.scores.iter().enumerate() {
                    groups.entry(Some(i)).or_default().push(s);
                }
            }
        }
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(key, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            AggregateRow {
                key,
                count: v.len(),
                mean,
                std: var.sqrt(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.key.cmp(&b.key)));
    rows
}

/// Six significant digits, shortest decimal form.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// CSV with header `image_id,label,prediction,s_1..s_K`; missing labels are
/// empty fields.
pub fn export_traces(traces: &[PolicyTrace], path: &Path) -> Result<()> {
    let k = traces.first().map_or(0, |t| t.scores.len());
    if traces.iter().any(|t| t.scores.len() != k) {
        return Err(Error::Input("traces of one export must share a length".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["image_id".to_string(), "label".into(), "prediction".into()];
    header.extend((1..=k).map(|i| format!("s_{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in traces {
        let mut row = vec![
            t.image_id.clone(),
            t.label.map_or(String::new(), |l| l.to_string()),
            t.prediction.map_or(String::new(), |p| p.to_string()),
        ];
        row.extend(t.scores.iter().map(|&s| sig6(s)));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_traces(path: &Path) -> Result<Vec<PolicyTrace>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 3 || &header[0] != "image_id" || &header[1] != "label" || &header[2] != "prediction" {
        return Err(Error::Format {
            path: path.into(),
            detail: "expected header image_id,label,prediction,s_1..s_K".into(),
        });
    }
    let bad = |detail: String| Error::Format {
        path: path.into(),
        detail,
    };
    let opt = |field: &str| -> Result<Option<usize>> {
        if field.is_empty() {
            Ok(None)
        } else {
            field.parse().map(Some).map_err(|_| bad(format!("bad class id {field:?}")))
        }
    };
    let mut traces = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let scores = record
            .iter()
            .skip(3)
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad score {f:?}"))))
            .collect::<Result<_>>()?;
        traces.push(PolicyTrace {
            image_id: record[0].to_string(),
            label: opt(&record[1])?,
            prediction: opt(&record[2])?,
            scores,
        });
    }
    Ok(traces)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("is_io_error implies an Io kind");
    }
    Error::Format {
        path: path.into(),
        detail: e.to_string(),
    }
}
