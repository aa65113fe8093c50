use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use dpf_core::engine::{
    network_gradcheck, sample_field, sample_seed, NetworkPredictor, SamplerConfig,
};
use dpf_core::field::{FieldSample, MetricSpaceSpec, SignalSet};
use dpf_core::io::dataset::{write_dataset, LabeledField};
use dpf_core::io::{
    ingest_pixmaps, load_checkpoint, load_dataset, save_checkpoint, synthesize_dataset,
    write_pixmap, Checkpoint, DatasetKind, RunConfig,
};
use dpf_core::metrics::{chamfer, coverage, mmd_chamfer, moment_diagnostics, occupancy_points, psnr, PointSet};
use dpf_core::numerics::GradCheckOptions;
use dpf_core::schedule::NoiseSchedule;
use dpf_core::score::{Architecture, ScoreField};
use dpf_core::Error;

#[derive(Parser)]
#[command(name = "dpf", version, about = "Diffusion probabilistic fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with a hashed manifest
    MakeDataset {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset from same-sized P5/P6 pixmaps
    Ingest {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train a score field and write a checkpoint
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Metrics log; defaults to the checkpoint path with a .log extension
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Draw fields from a checkpoint
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Grid side (or sphere bandwidth); defaults to the training resolution
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        context_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated fields against a dataset
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "psnr")]
        metrics: String,
        /// Evaluate an existing sample directory instead of sampling anew
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the network gradients
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        precision: u32,
        /// Architecture to check: the configured one, or "all"
        #[arg(long)]
        architecture: Option<String>,
        #[arg(long)]
        max_elements: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Monte-Carlo check of the forward noising marginal
    DiagnoseForward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFinite(_) => Failure::Numeric(msg),
            Error::Config(_) => Failure::Usage(msg),
            _ => Failure::Data(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("io error on {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::MakeDataset { kind, count, seed, out } => make_dataset(&kind, count, seed, &out),
        Command::Ingest { out, inputs } => ingest(&inputs, &out),
        Command::Train { config, data, out, resume, log } => {
            train(&config, &data, &out, resume.as_deref(), log)
        }
        Command::Sample { ckpt, count, resolution, context_fraction, seed, out } => {
            sample(&ckpt, count, resolution, context_fraction, seed, &out)
        }
        Command::Eval { ckpt, data, metrics, samples, count, seed, out } => {
            eval(&ckpt, &data, &metrics, samples.as_deref(), count, seed, &out)
        }
        Command::Gradcheck { config, precision, architecture, max_elements, tolerance } => {
            gradcheck(&config, precision, architecture.as_deref(), max_elements, tolerance)
        }
        Command::DiagnoseForward { config, t, draws, seed } => diagnose(&config, t, draws, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn make_dataset(kind: &str, count: usize, seed: u64, out: &Path) -> Outcome {
    let kind = DatasetKind::parse(kind)?;
    if count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let manifest = synthesize_dataset(kind, count, seed, out)?;
    println!("wrote {} fields on {} to {}", manifest.files.len(), manifest.space, out.display());
    Ok(())
}

fn ingest(inputs: &[PathBuf], out: &Path) -> Outcome {
    let manifest = ingest_pixmaps(inputs, out)?;
    println!("ingested {} rasters on {} into {}", manifest.files.len(), manifest.space, out.display());
    Ok(())
}

fn check_data(config: &RunConfig, space: MetricSpaceSpec, signal_dim: usize) -> Outcome {
    if space != config.space || signal_dim != config.model.signal_dim {
        return Err(Failure::Data(format!(
            "dataset holds {signal_dim}-channel fields on {space}, config expects {}-channel fields on {}",
            config.model.signal_dim, config.space
        )));
    }
    Ok(())
}

fn train(config_path: &Path, data: &Path, out: &Path, resume: Option<&Path>, log: Option<PathBuf>) -> Outcome {
    let config = RunConfig::from_path(config_path)?;
    let dataset = load_dataset(data)?;
    check_data(&config, dataset.manifest.space, dataset.manifest.signal_dim)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.ensure_compatible(&config)?;
            ckpt.into_trainer()?
        }
        None => {
            let schedule = NoiseSchedule::from_config(config.schedule)?;
            let model = ScoreField::new(config.model.clone(), schedule.steps())?;
            dpf_core::engine::Trainer::new(model, schedule, config.pairs.clone(), config.train.clone(), config.seed)?
        }
    };
    let log_path = log.unwrap_or_else(|| out.with_extension("log"));
    let file = if trainer.step > 0 {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| io_failure(&log_path, e))?;
    let mut writer = BufWriter::new(file);
    let every = config.train.log_every.max(1);
    let until = config.train.steps;
    let mut write_err = None;
    let result = trainer.run_until(&dataset.fields, until, |r| {
        if r.step % every == 0 || r.step == until {
            let line = format!("step {} loss {:.6} time {:.3}", r.step, r.loss, r.seconds);
            println!("{line}");
            if let Err(e) = writeln!(writer, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    });
    writer.flush().map_err(|e| io_failure(&log_path, e))?;
    if let Some(e) = write_err {
        return Err(io_failure(&log_path, e));
    }
    result?;
    save_checkpoint(out, &Checkpoint::from_trainer(&trainer, &config))?;
    println!("saved checkpoint at step {} to {}", trainer.step, out.display());
    Ok(())
}

fn draw_samples(
    ckpt: &Checkpoint,
    space: &MetricSpaceSpec,
    count: usize,
    rho: f64,
    seed: u64,
) -> Result<Vec<FieldSample>, Failure> {
    let model = ckpt.model()?;
    let schedule = ckpt.schedule()?;
    let predictor = NetworkPredictor { model: &model, params: ckpt.sampling_params() };
    (0..count)
        .map(|i| {
            let cfg = SamplerConfig {
                context_fraction: rho,
                seed: sample_seed(seed, i as u64),
                clamp: ckpt.config.sample.clamp,
            };
            Ok(sample_field(&predictor, &schedule, space, model.config().signal_dim, &cfg)?)
        })
        .collect()
}

fn sample(
    ckpt_path: &Path,
    count: usize,
    resolution: Option<usize>,
    rho: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Outcome {
    if count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let ckpt = load_checkpoint(ckpt_path)?;
    let space = match resolution {
        Some(0) => return Err(Failure::Usage("--resolution must be at least 1".into())),
        Some(r) => ckpt.config.space.with_resolution(r),
        None => ckpt.config.space,
    };
    let rho = rho.unwrap_or(ckpt.config.sample.context_fraction);
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Failure::Usage(format!("--context-fraction {rho} outside (0, 1]")));
    }
    let seed = seed.unwrap_or(ckpt.config.sample.seed);
    let fields = draw_samples(&ckpt, &space, count, rho, seed)?;
    let labeled: Vec<LabeledField> =
        fields.iter().map(|f| LabeledField { field: f.clone(), label: 0 }).collect();
    write_dataset(out, DatasetKind::Generated, seed, &labeled)?;
    if matches!(space, MetricSpaceSpec::Grid2d { .. }) {
        for (i, f) in fields.iter().enumerate() {
            let ext = if f.signal_dim() == 1 { "pgm" } else { "ppm" };
            write_pixmap(f, &out.join(format!("field_{i:05}.{ext}")))?;
        }
    }
    println!("wrote {count} samples on {space} to {}", out.display());
    Ok(())
}

fn point_sets(fields: &[FieldSample]) -> Result<Vec<PointSet>, Failure> {
    fields
        .iter()
        .map(|f| occupancy_points(f).map_err(|e| Failure::Data(format!("occupancy points: {e}"))))
        .collect()
}

fn eval(
    ckpt_path: &Path,
    data: &Path,
    metrics: &str,
    samples: Option<&Path>,
    count: usize,
    seed: u64,
    out: &Path,
) -> Outcome {
    let wanted: Vec<&str> = metrics.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = wanted.iter().find(|m| !["psnr", "chamfer", "coverage", "mmd"].contains(m)) {
        return Err(Failure::Usage(format!("unknown metric {bad:?}")));
    }
    if wanted.is_empty() || count == 0 {
        return Err(Failure::Usage("need at least one metric and one sample".into()));
    }
    let ckpt = load_checkpoint(ckpt_path)?;
    let reference = load_dataset(data)?;
    let generated = match samples {
        Some(dir) => load_dataset(dir)?.fields,
        None => {
            let rho = ckpt.config.sample.context_fraction;
            draw_samples(&ckpt, &reference.manifest.space, count, rho, seed)?
        }
    };
    if generated[0].space != reference.manifest.space {
        return Err(Failure::Data(format!(
            "samples on {} cannot be compared with data on {}",
            generated[0].space, reference.manifest.space
        )));
    }
    let mut report = Map::new();
    report.insert("samples".into(), json!(generated.len()));
    report.insert("reference".into(), json!(reference.fields.len()));
    for metric in &wanted {
        let value = match *metric {
            "psnr" => {
                // nearest-reference PSNR averaged over samples
                let mut total = 0.0;
                for g in &generated {
                    let mut best = f64::MIN;
                    for r in &reference.fields {
                        best = best.max(psnr(g, r)?);
                    }
                    total += best;
                }
                total / generated.len() as f64
            }
            "chamfer" => {
                let (g, r) = (point_sets(&generated)?, point_sets(&reference.fields)?);
                g.iter()
                    .map(|a| r.iter().map(|b| chamfer(a, b)).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
                    / g.len() as f64
            }
            "coverage" => coverage(&point_sets(&generated)?, &point_sets(&reference.fields)?)?,
            "mmd" => mmd_chamfer(&point_sets(&generated)?, &point_sets(&reference.fields)?)?,
            _ => unreachable!(),
        };
        if !value.is_finite() {
            return Err(Failure::Numeric(format!("metric {metric} is not finite")));
        }
        report.insert(metric.to_string(), json!(value));
    }
    let text = serde_json::to_string_pretty(&Value::Object(report)).expect("report serializes");
    std::fs::write(out, format!("{text}\n")).map_err(|e| io_failure(out, e))?;
    println!("{text}");
    Ok(())
}

fn gradcheck(
    config_path: &Path,
    precision: u32,
    architecture: Option<&str>,
    max_elements: Option<usize>,
    tolerance: Option<f64>,
) -> Outcome {
    let config = RunConfig::from_path(config_path)?;
    if precision != 32 && precision != 64 {
        return Err(Failure::Usage(format!("--precision must be 32 or 64, got {precision}")));
    }
    let archs = match architecture {
        None => vec![config.model.architecture],
        Some("all") => vec![
            Architecture::CrossAttention,
            Architecture::TransformerEncoder,
            Architecture::MlpMixer,
        ],
        Some(name) => {
            let arch: Architecture = serde_json::from_value(json!(name))
                .map_err(|_| Failure::Usage(format!("unknown architecture {name:?}")))?;
            vec![arch]
        }
    };
    let tolerance = tolerance.unwrap_or(if precision == 64 { 1e-4 } else { 1e-2 });
    let mut all_passed = true;
    for arch in archs {
        let mut model_cfg = config.model.clone();
        model_cfg.architecture = arch;
        let mut pairs = config.pairs.clone();
        if arch == Architecture::MlpMixer {
            pairs.n_context = model_cfg.n_tokens;
        }
        let model = ScoreField::new(model_cfg, config.schedule.steps)?;
        let opts = GradCheckOptions {
            tolerance,
            max_elements_per_tensor: max_elements,
            seed: config.seed,
            ..Default::default()
        };
        let report = network_gradcheck(&model, &config.space, &pairs, config.seed, precision, opts)?;
        for t in &report.tensors {
            println!(
                "{arch} {:<40} checked {:>5} max_abs {:.3e} rel {:.3e}",
                t.name, t.checked, t.max_abs_error, t.rel_error
            );
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{arch}: {verdict} max relative error {:.3e} (tolerance {:.1e}, {} tensors, precision {precision})",
            report.max_rel_error(),
            tolerance,
            report.tensors.len()
        );
        all_passed &= report.passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Numeric("gradient check exceeded tolerance".into()))
    }
}

fn diagnose(config_path: &Path, t: usize, draws: usize, seed: u64) -> Outcome {
    use rand::SeedableRng;
    let config = RunConfig::from_path(config_path)?;
    let schedule = NoiseSchedule::from_config(config.schedule)?;
    // a deterministic ramp over [-1, 1] as the clean signal
    let n = config.space.num_points();
    let dy = config.model.signal_dim;
    let k = n * dy;
    let y0: Vec<f64> = (0..k).map(|i| if k == 1 { 0.0 } else { 2.0 * i as f64 / (k - 1) as f64 - 1.0 }).collect();
    let y0 = SignalSet::new(n, dy, y0)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = moment_diagnostics(&y0, t, &schedule, draws, &mut rng)?;
    let max_mean_err = r
        .empirical_mean
        .iter()
        .zip(&r.expected_mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mean_var = r.empirical_var.iter().sum::<f64>() / r.empirical_var.len() as f64;
    let report = json!({
        "t": r.t,
        "draws": r.draws,
        "alpha_bar": r.alpha_bar,
        "expected_var": r.expected_var,
        "empirical_var_mean": mean_var,
        "max_abs_mean_error": max_mean_err,
        "z_mean": r.z_mean,
        "z_var": r.z_var,
        "within_3_sigma": r.within(3.0),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
