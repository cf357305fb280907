//! Datasets: a seeded synthetic multi-scale shape benchmark and the CIFAR-10
//! binary format.
//!
//! # Synthetic images
//!
//! Each image holds one target shape (its class) drawn over a noisy flat
//! background, plus optional one-pixel line distractors that belong to no
//! class. Shapes are filled masks evaluated at pixel centers; colors are
//! random per image, so only geometry identifies the class.
//!
//! Object size is the side of the shape's square frame, drawn from the
//! sample's scale stratum. On a 32-pixel canvas the strata span sides 5–8
//! (small), 10–15 (medium) and 17–24 (large), scaled linearly for other
//! canvases. The stratum tag is checked against the rendered mask: the
//! bounding-box area of the drawn pixels must fall below `(9/32·canvas)²` for
//! small objects, at or above `(16/32·canvas)²` for large ones and in between
//! for medium ones.
//!
//! # CIFAR-10
//!
//! Binary batches are records of one label byte followed by 3072 pixel bytes
//! (R, G, B planes, row-major 32×32). Pixels are scaled to `[0, 1]` and
//! normalized per channel with mean `(0.4914, 0.4822, 0.4465)` and std
//! `(0.2470, 0.2435, 0.2616)`.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Small,
    Medium,
    Large,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Small, Stratum::Medium, Stratum::Large];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Small => "small",
            Stratum::Medium => "medium",
            Stratum::Large => "large",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disk,
    Triangle,
    Ring,
    Cross,
    Diamond,
    Frame,
    Saltire,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Square,
        ShapeKind::Disk,
        ShapeKind::Triangle,
        ShapeKind::Ring,
        ShapeKind::Cross,
        ShapeKind::Diamond,
        ShapeKind::Frame,
        ShapeKind::Saltire,
    ];

    /// Membership of a point in frame coordinates `u, v ∈ [-1, 1]`.
    fn contains(self, u: f64, v: f64) -> bool {
        let (au, av) = (u.abs(), v.abs());
        if au > 1.0 || av > 1.0 {
            return false;
        }
        match self {
            ShapeKind::Square => true,
            ShapeKind::Disk => u * u + v * v <= 1.0,
            ShapeKind::Triangle => au <= (v + 1.0) / 2.0,
            ShapeKind::Ring => {
                let r = u * u + v * v;
                (0.2025..=1.0).contains(&r)
            }
            ShapeKind::Cross => au <= 0.3 || av <= 0.3,
            ShapeKind::Diamond => au + av <= 1.0,
            ShapeKind::Frame => au.max(av) >= 0.55,
            ShapeKind::Saltire => (u - v).abs() <= 0.4 || (u + v).abs() <= 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of shape classes, 2 to 8.
    pub num_classes: usize,
    pub canvas_size: usize,
    /// Inclusive range of objects per image; everything past the target is a
    /// line distractor.
    pub shapes_per_image: (usize, usize),
    /// Probabilities of small, medium and large targets.
    pub scale_distribution: [f64; 3],
    /// Std of the additive Gaussian pixel noise.
    pub noise: f32,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 8,
            canvas_size: 32,
            shapes_per_image: (1, 3),
            scale_distribution: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            noise: 0.08,
            train_samples: 4000,
            test_samples: 1500,
            seed: 0,
        }
    }
}

/// How one synthetic sample was drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub class: usize,
    pub stratum: Stratum,
    /// Top-left corner and side of the target's square frame.
    pub x0: i32,
    pub y0: i32,
    pub size: u32,
}

impl SampleRecord {
    pub fn kind(&self) -> ShapeKind {
        ShapeKind::ALL[self.class]
    }

    pub fn covers(&self, x: usize, y: usize) -> bool {
        let half = self.size as f64 / 2.0;
        let u = (x as f64 + 0.5 - (self.x0 as f64 + half)) / half;
        let v = (y as f64 + 0.5 - (self.y0 as f64 + half)) / half;
        self.kind().contains(u, v)
    }

    /// Bounding-box area of the rendered target on a `canvas`-sized image.
    pub fn measured_area(&self, canvas: usize) -> usize {
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..canvas {
            for x in 0..canvas {
                if self.covers(x, y) {
                    x_lo = x_lo.min(x);
                    x_hi = x_hi.max(x);
                    y_lo = y_lo.min(y);
                    y_hi = y_hi.max(y);
                }
            }
        }
        if x_lo == usize::MAX {
            return 0;
        }
        (x_hi - x_lo + 1) * (y_hi - y_lo + 1)
    }
}

/// Stratum of a measured bounding-box area.
pub fn stratum_of_area(area: usize, canvas: usize) -> Stratum {
    let small = (9 * canvas) as f64 / 32.0;
    let large = (16 * canvas) as f64 / 32.0;
    let a = area as f64;
    if a < small * small {
        Stratum::Small
    } else if a >= large * large {
        Stratum::Large
    } else {
        Stratum::Medium
    }
}

/// Inclusive side range of a stratum's target frames.
pub fn side_range(stratum: Stratum, canvas: usize) -> (usize, usize) {
    let scale = |v: usize| (v * canvas + 16) / 32;
    match stratum {
        Stratum::Small => (scale(5), scale(8)),
        Stratum::Medium => (scale(10), scale(15)),
        Stratum::Large => (scale(17), scale(24)),
    }
}

/// In-memory image classification data, NCHW `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    /// Per-sample generation records (synthetic data only).
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn strata(&self) -> Option<Vec<Stratum>> {
        (!self.records.is_empty()).then(|| self.records.iter().map(|r| r.stratum).collect())
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Gathers `indices` into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(Shape::new(indices.len(), self.channels, self.height, self.width), data)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn take(&self, count: usize) -> Dataset {
        let n = count.min(self.len());
        Dataset {
            images: self.images[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            records: self.records.iter().take(n).copied().collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            images: Vec::new(),
            labels: Vec::new(),
            records: Vec::new(),
        }
    }

    /// Canonical byte encoding: pixels as little-endian `f32`, then labels
    /// and stratum tags as bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.images.len() * 4 + 2 * self.len());
        for v in &self.images {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.labels.iter().map(|&l| l as u8));
        out.extend(self.records.iter().map(|r| r.stratum as u8));
        out
    }
}

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if !(2..=ShapeKind::ALL.len()).contains(&self.num_classes) {
            return bad(format!("num_classes must be 2..=8, got {}", self.num_classes));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo == 0 || hi < lo {
            return bad(format!("shapes_per_image range ({lo}, {hi}) is empty or lacks the target"));
        }
        let p = self.scale_distribution;
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("scale distribution {p:?} must be non-negative and sum to 1"));
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        for (s, &prob) in Stratum::ALL.iter().zip(&p) {
            if prob == 0.0 {
                continue;
            }
            let (min, max) = side_range(*s, self.canvas_size);
            if min < 4 || max + 1 > self.canvas_size {
                return bad(format!(
                    "canvas {} is too small for {s} objects (sides {min}..={max})",
                    self.canvas_size
                ));
            }
        }
        Ok(())
    }
}

/// Deterministic in `spec.seed`: the same spec always yields byte-identical data.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Splits> {
    spec.validate()?;
    let make = |stream: u64, count: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let mut data = Dataset {
            channels: 3,
            height: spec.canvas_size,
            width: spec.canvas_size,
            num_classes: spec.num_classes,
            images: Vec::with_capacity(count * 3 * spec.canvas_size * spec.canvas_size),
            labels: Vec::with_capacity(count),
            records: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let (img, rec) = render_sample(spec, &mut rng);
            data.images.extend_from_slice(&img);
            data.labels.push(rec.class);
            data.records.push(rec);
        }
        data
    };
    Ok(Splits {
        train: make(1, spec.train_samples),
        test: make(2, spec.test_samples),
    })
}

fn pick_stratum(p: &[f64; 3], rng: &mut ChaCha8Rng) -> Stratum {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &w) in Stratum::ALL.iter().zip(p) {
        acc += w;
        if u < acc && w > 0.0 {
            return *s;
        }
    }
    // rounding slack lands on the last stratum with mass
    *Stratum::ALL.iter().zip(p).rev().find(|(_, &w)| w > 0.0).map(|(s, _)| s).unwrap()
}

fn render_sample(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (Vec<f32>, SampleRecord) {
    let n = spec.canvas_size;
    let class = rng.gen_range(0..spec.num_classes);
    let stratum = pick_stratum(&spec.scale_distribution, rng);
    let (min, max) = side_range(stratum, n);
    let mut tries = 0;
    let record = loop {
        tries += 1;
        let size = rng.gen_range(min..=max);
        let x0 = rng.gen_range(0..=(n - size)) as i32;
        let y0 = rng.gen_range(0..=(n - size)) as i32;
        let rec = SampleRecord {
            class,
            stratum,
            x0,
            y0,
            size: size as u32,
        };
        let measured = stratum_of_area(rec.measured_area(n), n);
        if measured == stratum {
            break rec;
        }
        // unreachable for canvases that pass validation; keeps tags truthful regardless
        if tries >= 256 {
            break SampleRecord { stratum: measured, ..rec };
        }
    };

    let background: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let ink: [f32; 3] = std::array::from_fn(|c| {
        let delta: f32 = rng.gen_range(0.3..0.6);
        if background[c] > 0.5 {
            background[c] - delta
        } else {
            background[c] + delta
        }
    });
    let mut img = vec![0.0f32; 3 * n * n];
    for c in 0..3 {
        img[c * n * n..(c + 1) * n * n].fill(background[c]);
    }
    let distractors = rng.gen_range(spec.shapes_per_image.0..=spec.shapes_per_image.1) - 1;
    for _ in 0..distractors {
        let color: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let (ax, ay) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let (bx, by) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let steps = 2 * n;
        for t in 0..=steps {
            let f = t as f64 / steps as f64;
            let x = (ax + (bx - ax) * f) as usize;
            let y = (ay + (by - ay) * f) as usize;
            for c in 0..3 {
                img[(c * n + y.min(n - 1)) * n + x.min(n - 1)] = color[c];
            }
        }
    }
    for y in 0..n {
        for x in 0..n {
            if record.covers(x, y) {
                for c in 0..3 {
                    img[(c * n + y) * n + x] = ink[c];
                }
            }
        }
    }
    for v in &mut img {
        let z: f32 = rng.sample(StandardNormal);
        *v = (*v + spec.noise * z - 0.5) * 2.0;
    }
    (img, record)
}

pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR_RECORD: usize = 1 + 3072;
pub const CIFAR_BATCH_BYTES: usize = 10_000 * CIFAR_RECORD;

/// Reads one binary batch file holding any positive number of records.
pub fn read_cifar_batch(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format {
            path: path.into(),
            detail: format!(
                "{} bytes is not a positive multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    decode_cifar(&bytes, path)
}

fn decode_cifar(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let count = bytes.len() / CIFAR_RECORD;
    let mut data = Dataset {
        channels: 3,
        height: 32,
        width: 32,
        num_classes: 10,
        images: Vec::with_capacity(count * 3072),
        labels: Vec::with_capacity(count),
        records: Vec::new(),
    };
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Format {
                path: path.into(),
                detail: format!("label byte {label} outside 0..10"),
            });
        }
        data.labels.push(label);
        for (c, plane) in rec[1..].chunks_exact(1024).enumerate() {
            data.images
                .extend(plane.iter().map(|&p| (p as f32 / 255.0 - CIFAR_MEAN[c]) / CIFAR_STD[c]));
        }
    }
    Ok(data)
}

fn read_exact_batch(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != CIFAR_BATCH_BYTES {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("expected {CIFAR_BATCH_BYTES} bytes, found {}", bytes.len()),
        });
    }
    decode_cifar(&bytes, path)
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Splits> {
    let mut train: Option<Dataset> = None;
    for i in 1..=5 {
        let part = read_exact_batch(&dir.join(format!("data_batch_{i}.bin")))?;
        match &mut train {
            Some(t) => {
                t.images.extend(part.images);
                t.labels.extend(part.labels);
            }
            None => train = Some(part),
        }
    }
    let test = read_exact_batch(&dir.join("test_batch.bin"))?;
    Ok(Splits {
        train: train.expect("five batches were read"),
        test,
    })
}

/// Horizontal flip of sample `i` of a batch tensor, in place.
pub fn flip_sample(t: &mut Tensor, i: usize) {
    let s = t.shape();
    let per = s.c * s.plane();
    let data = &mut t.data_mut()[i * per..(i + 1) * per];
    for row in data.chunks_exact_mut(s.w) {
        row.reverse();
    }
}

/// Random crop with zero padding `pad` (same output size), in place.
pub fn pad_crop_sample(t: &mut Tensor, i: usize, pad: usize, dx: usize, dy: usize) {
    let s = t.shape();
    let per = s.c * s.plane();
    let data = &mut t.data_mut()[i * per..(i + 1) * per];
    let src = data.to_vec();
    for c in 0..s.c {
        for y in 0..s.h {
            for x in 0..s.w {
                let (sy, sx) = ((y + dy) as isize - pad as isize, (x + dx) as isize - pad as isize);
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w;
                data[(c * s.h + y) * s.w + x] = if inside {
                    src[(c * s.h + sy as usize) * s.w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}
