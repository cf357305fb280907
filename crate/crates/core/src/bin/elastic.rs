use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use elastic_core::arch::{parse_fraction, resolve, ArchSpec};
use elastic_core::checkpoint::Checkpoint;
use elastic_core::cost::{model_cost_at, conv_method_cost, CostQuery, Exact, Method};
use elastic_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use elastic_core::eval::{evaluate, stress, EvalMetrics};
use elastic_core::gradsuite::run_suite;
use elastic_core::network::Network;
use elastic_core::policy::{aggregate, export_traces, sig6, trace_batch, GroupBy};
use elastic_core::train::{log_csv, train, TrainConfig};
use elastic_core::{Error, Result};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

#[derive(Parser)]
#[command(name = "elastic", version, about = "Elastic multi-resolution CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print an architecture's layout and cost summary.
    Describe {
        arch: String,
        /// Print the architecture as a config file instead.
        #[arg(long)]
        toml: bool,
    },
    /// Per-layer FLOPs and parameters.
    Cost {
        arch: String,
        #[arg(long)]
        resolution: Option<usize>,
        /// Per-layer CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every multi-scaling method's cost for one convolution.
    CostCompare {
        #[arg(long)]
        n: i128,
        #[arg(long)]
        c: i128,
        #[arg(long)]
        k: i128,
        #[arg(long)]
        q: usize,
        /// Branching denominators, comma separated (`2,2` or `3/2,3`).
        #[arg(long, value_delimiter = ',')]
        b: Vec<String>,
        /// Scale ratios, comma separated.
        #[arg(long, value_delimiter = ',')]
        r: Vec<i128>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from a TOML config and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Metrics log (`epoch,split,loss,top1`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint at several input resolutions.
    Stress {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        resolutions: Vec<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scale policy traces for a trained checkpoint or a freshly built network.
    Policy {
        #[arg(long, conflicts_with = "arch")]
        checkpoint: Option<PathBuf>,
        #[arg(long, required_unless_present = "checkpoint")]
        arch: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset source; defaults to synthetic images at the arch's resolution.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        limit: usize,
        #[arg(long, value_enum, default_value = "category")]
        group_by: Grouping,
        /// Trace CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks for every operator.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        shapes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grouping {
    Category,
    Block,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        // a reader that hung up early is not a failure
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elastic: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Format {
        path: path.into(),
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Format {
        path: path.into(),
        detail: e.to_string(),
    })
}

fn millions(v: u64) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

fn billions(v: u64) -> String {
    if v >= 100_000_000 {
        format!("{:.2}B", v as f64 / 1e9)
    } else {
        format!("{:.1}M", v as f64 / 1e6)
    }
}

fn exact_text(v: Exact) -> String {
    if v.is_integer() {
        v.to_integer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Describe { arch, toml: true } => write!(std::io::stdout().lock(), "{}", resolve(&arch)?.to_toml()).map_err(|e| Error::io("<stdout>", e))?,
        Command::Describe { arch, toml: false } => describe(&resolve(&arch)?)?,
        Command::Cost { arch, resolution, out } => {
            let spec = resolve(&arch)?;
            let report = model_cost_at(&spec, resolution.unwrap_or(spec.input_resolution))?;
            say!("{} at {}x{}", report.arch, report.input_resolution, report.input_resolution);
            say!("{:<10} {:>14} {:>14}", "part", "params", "flops");
            let mut parts = vec!["stem".to_string()];
            parts.extend((0..spec.stages.len()).map(|s| format!("stage{s}")));
            parts.extend(["final_norm".to_string(), "fc".to_string()]);
            for p in parts {
                let prefix = if p.starts_with("stage") { format!("{p}.") } else { p.clone() };
                let (f, n) = report.subtotal(&prefix);
                if f > 0 || n > 0 {
                    say!("{p:<10} {n:>14} {f:>14}");
                }
            }
            say!("{:<10} {:>14} {:>14}", "total", report.total_params, report.total_flops);
            say!("convention: {}", report.convention);
            if let Some(out) = out {
                let rows: Vec<_> = report
                    .per_layer
                    .iter()
                    .map(|l| vec![l.id.clone(), l.flops.to_string(), l.params.to_string()])
                    .collect();
                write_csv(&out, &["layer", "flops", "params"], &rows)?;
            }
        }
        Command::CostCompare { n, c, k, q, b, r, out } => {
            let b = b.iter().map(|t| parse_fraction(t)).collect::<Result<Vec<_>>>()?;
            if b.len() != q || r.len() != q {
                return Err(Error::Input(format!(
                    "--q {q} needs {q} values for --b and --r, got {} and {}",
                    b.len(),
                    r.len()
                )));
            }
            let query = CostQuery {
                method: Method::Single,
                n,
                c,
                k,
                b: b.into_iter().map(|f| Exact::new(*f.numer() as i128, *f.denom() as i128)).collect(),
                r,
            };
            let single = conv_method_cost(&query)?;
            let mut rows = Vec::new();
            say!("{:<24} {:>16} {:>12} {:>9}", "method", "flops", "params", "vs single");
            for m in Method::ALL {
                let cost = conv_method_cost(&query.with_method(m))?;
                let ratio = cost.flops / single.flops;
                let ratio_f = *ratio.numer() as f64 / *ratio.denom() as f64;
                say!(
                    "{:<24} {:>16} {:>12} {:>9.4}",
                    m.name(),
                    exact_text(cost.flops),
                    exact_text(cost.params),
                    ratio_f
                );
                rows.push(vec![
                    m.name().to_string(),
                    exact_text(cost.flops),
                    exact_text(cost.params),
                    exact_text(ratio),
                ]);
            }
            if let Some(out) = out {
                write_csv(&out, &["method", "flops", "params", "flops_vs_single"], &rows)?;
            }
        }
        Command::Train {
            config,
            checkpoint,
            arch,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            cfg.arch = arch.unwrap_or(cfg.arch);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.validate()?;
            let outcome = train(&cfg)?;
            for row in &outcome.log {
                say!("epoch {:>3} {:<5} loss {:.4} top1 {:.4}", row.epoch, row.split, row.loss, row.top1);
            }
            outcome.checkpoint.save(&checkpoint)?;
            if let Some(out) = out {
                std::fs::write(&out, log_csv(&outcome.log)).map_err(|e| Error::io(&out, e))?;
            }
            say!("checkpoint written to {}", checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            config,
            resolution,
            split,
            out,
        } => {
            let (mut net, data) = restore(&checkpoint, &config, split)?;
            let m = evaluate(&mut net, &data, resolution)?;
            report_metrics(&[m], out.as_deref())?;
        }
        Command::Stress {
            checkpoint,
            config,
            resolutions,
            split,
            out,
        } => {
            let (mut net, data) = restore(&checkpoint, &config, split)?;
            let runs = stress(&mut net, &data, &resolutions)?;
            report_metrics(&runs, out.as_deref())?;
        }
        Command::Policy {
            checkpoint,
            arch,
            seed,
            config,
            limit,
            group_by,
            out,
        } => {
            let mut net = match (&checkpoint, &arch) {
                (Some(path), _) => Checkpoint::load(path)?.network()?,
                (None, Some(arch)) => Network::build(&resolve(arch)?, seed)?,
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let data = match &config {
                Some(path) => TrainConfig::load(path)?.dataset.load()?.test,
                None => {
                    let spec = SyntheticSpec {
                        canvas_size: net.spec().input_resolution,
                        train_samples: 0,
                        test_samples: limit,
                        num_classes: net.spec().classifier.num_classes.clamp(2, 8),
                        ..SyntheticSpec::default()
                    };
                    generate_synthetic(&spec)?.test
                }
            };
            let data = data.take(limit);
            let mut traces = Vec::new();
            let indices: Vec<usize> = (0..data.len()).collect();
            for chunk in indices.chunks(32) {
                let ids: Vec<String> = chunk.iter().map(|i| format!("img{i:05}")).collect();
                let labels = data.labels_of(chunk);
                traces.extend(trace_batch(&mut net, &data.batch(chunk)?, &ids, Some(&labels))?);
            }
            let k = traces.first().map_or(0, |t| t.scores.len());
            say!("{} traces over {k} Elastic blocks", traces.len());
            let (grouping, key) = match group_by {
                Grouping::Category => (GroupBy::Category, "category"),
                Grouping::Block => (GroupBy::Block, "block"),
            };
            say!("{key:>8} {:>6} {:>10} {:>10} {:>10} {:>10}", "count", "mean", "std", "min", "max");
            for row in aggregate(&traces, grouping) {
                let label = row.key.map_or("-".to_string(), |k| match grouping {
                    GroupBy::Block => format!("s_{}", k + 1),
                    GroupBy::Category => k.to_string(),
                });
                say!(
                    "{label:>8} {:>6} {:>10} {:>10} {:>10} {:>10}",
                    row.count,
                    sig6(row.mean),
                    sig6(row.std),
                    sig6(row.min),
                    sig6(row.max)
                );
            }
            if let Some(out) = out {
                export_traces(&traces, &out)?;
            }
        }
        Command::Gradcheck { shapes, seed, out } => {
            let cases = run_suite(shapes, seed)?;
            let mut all = true;
            let mut rows = Vec::new();
            for c in &cases {
                let verdict = if c.passes() { "pass" } else { "FAIL" };
                all &= c.passes();
                say!(
                    "{:<22} {verdict} max_rel_err {:.3e} (tol {:.0e}) shapes {} probes {} skipped {}",
                    c.op, c.max_rel_error, c.tolerance, c.shapes, c.checked, c.skipped
                );
                rows.push(vec![
                    c.op.to_string(),
                    verdict.to_string(),
                    format!("{:e}", c.max_rel_error),
                    format!("{:e}", c.tolerance),
                    c.shapes.to_string(),
                ]);
            }
            if let Some(out) = out {
                write_csv(&out, &["op", "verdict", "max_rel_error", "tolerance", "shapes"], &rows)?;
            }
            if !all {
                eprintln!("elastic: gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn describe(spec: &ArchSpec) -> Result<()> {
    let report = model_cost_at(spec, spec.input_resolution)?;
    say!("{} ({}), input {}x{}", spec.name, spec.family_name(), spec.input_resolution, spec.input_resolution);
    say!("{:<7} {:>6} {:>8} {:>10} {:>8} {:>12}", "stage", "blocks", "elastic", "channels", "side", "params");
    let counts = spec.block_counts();
    for (s, stage) in spec.stages.iter().enumerate() {
        let elastic = spec
            .placed_blocks()
            .iter()
            .filter(|b| b.coord.stage == s && b.spec.is_elastic())
            .count();
        let (_, params) = report.subtotal(&format!("stage{s}."));
        say!(
            "{:<7} {:>6} {:>8} {:>10} {:>8} {:>12}",
            s, counts[s], elastic, stage.out_channels, stage.resolution, params
        );
    }
    say!("Elastic blocks: {}", spec.elastic_block_count());
    say!(
        "params: {} ({})  flops: {} ({})",
        report.total_params,
        millions(report.total_params),
        report.total_flops,
        billions(report.total_flops)
    );
    Ok(())
}

fn restore(checkpoint: &Path, config: &Path, split: Split) -> Result<(Network, Dataset)> {
    let net = Checkpoint::load(checkpoint)?.network()?;
    let splits = TrainConfig::load(config)?.dataset.load()?;
    let data = match split {
        Split::Train => splits.train,
        Split::Test => splits.test,
    };
    Ok((net, data))
}

fn report_metrics(runs: &[EvalMetrics], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for m in runs {
        say!(
            "resolution {:>4}  top1 {:.4}  loss {:.4}  flops {} ({})  pooled features {}",
            m.resolution,
            m.top1,
            m.loss,
            m.flops,
            billions(m.flops),
            m.pooled_elements
        );
        let mut push = |stratum: &str, count: usize, correct: usize| {
            let top1 = if count == 0 { 0.0 } else { correct as f64 / count as f64 };
            rows.push(vec![
                m.resolution.to_string(),
                stratum.to_string(),
                count.to_string(),
                correct.to_string(),
                top1.to_string(),
                m.flops.to_string(),
            ]);
        };
        push("all", m.count, m.correct);
        for s in &m.per_stratum {
            say!("  {:<6} top1 {:.4} ({}/{})", s.stratum.name(), s.top1(), s.correct, s.count);
            push(s.stratum.name(), s.count, s.correct);
        }
    }
    if let Some(out) = out {
        write_csv(out, &["resolution", "stratum", "count", "correct", "top1", "flops"], &rows)?;
    }
    Ok(())
}
