//! Command-line driver for the elasticity pipeline.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mono_elasticity::data::{build_inference_set, ingest, write_transactions, DatasetSplit, SplitPolicy, YearMonth};
use mono_elasticity::elasticity::{evaluate_demand, evaluate_inference_set, ElasticitySummary, DEFAULT_RELATIVE_DELTA};
use mono_elasticity::model::{build_model, load_model, save_model, ArchitectureConfig, FeatureSchema};
use mono_elasticity::numeric::{gradcheck, GradcheckConfig};
use mono_elasticity::pipeline::{build_dataset, fit_model};
use mono_elasticity::synthetic::{generate_with, read_truth, write_truth, DemandLaw, SyntheticWorld};
use mono_elasticity::trainer::{fit_stats, objective, TrainConfig};
use mono_elasticity::{Error, Exec};

const RESOLVED_CONFIG: &str = "resolved_config.json";
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "mono-elasticity",
    version,
    about = "Monotone demand model and price elasticity toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transaction history with known elasticities.
    Synth(SynthArgs),
    /// Build lag/lead pairs and split them into train, validation and out-of-time sets.
    Build(BuildArgs),
    /// Train the demand model on a built dataset.
    Train(TrainArgs),
    /// Report demand accuracy of a model on a built dataset.
    Evaluate(EvaluateArgs),
    /// Estimate arc elasticities for every item at a given month.
    Elasticity(ElasticityArgs),
    /// Check analytic gradients of the default model against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Use a kinked demand curve instead of constant elasticity.
    #[arg(long)]
    kinked: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    /// Transaction CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ots_months: Option<u32>,
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by `build`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_decay: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ElasticityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Transaction CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Optional truth CSV from `synth`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Month whose prices are perturbed (YYYY-MM); defaults to the latest month.
    #[arg(long)]
    as_of: Option<String>,
    /// Price change as a fraction of the current price.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    items: Option<usize>,
}

/// Everything a command needs, after merging the config file and flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    command: String,
    input: Option<PathBuf>,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    truth: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    sequential: bool,
    world: SyntheticWorld,
    split: SplitPolicy,
    architecture: ArchitectureConfig,
    train: TrainConfig,
    delta: f64,
    as_of: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            input: None,
            data: None,
            model: None,
            truth: None,
            out: None,
            seed: 0,
            sequential: false,
            world: SyntheticWorld::default(),
            split: SplitPolicy::default(),
            architecture: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            delta: DEFAULT_RELATIVE_DELTA,
            as_of: None,
        }
    }
}

impl RunConfig {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    fn out(&self) -> anyhow::Result<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }

    fn required<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        path.as_deref().ok_or_else(|| usage(&format!("--{flag} is required")))
    }
}

/// A usage or configuration problem detected by the driver itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: &str) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.to_owned()))
}

fn load_base(command: &str, common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(&format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| usage(&format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if !cfg.command.is_empty() && cfg.command != command {
        return Err(usage(&format!(
            "config was written for `{}`, not `{command}`",
            cfg.command
        )));
    }
    cfg.command = command.to_owned();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.world.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.sequential |= common.sequential;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn resolve(command: Command) -> anyhow::Result<RunConfig> {
    let cfg = match command {
        Command::Synth(a) => {
            let mut c = load_base("synth", &a.common)?;
            set_path(&mut c.out, a.out);
            set(&mut c.world.items, a.items);
            set(&mut c.world.months, a.months);
            set(&mut c.world.noise_sigma, a.noise_sigma);
            if a.kinked {
                c.world.law = DemandLaw::kinked_default();
            }
            c
        }
        Command::Build(a) => {
            let mut c = load_base("build", &a.common)?;
            set_path(&mut c.input, a.input);
            set_path(&mut c.out, a.out);
            set(&mut c.split.ots_months, a.ots_months);
            set(&mut c.split.validation_fraction, a.validation_fraction);
            c
        }
        Command::Train(a) => {
            let mut c = load_base("train", &a.common)?;
            set_path(&mut c.data, a.data);
            set_path(&mut c.out, a.out);
            set(&mut c.train.epochs, a.epochs);
            set(&mut c.train.batch_size, a.batch_size);
            set(&mut c.train.learning_rate, a.learning_rate);
            set(&mut c.train.l2_decay, a.l2_decay);
            c
        }
        Command::Evaluate(a) => {
            let mut c = load_base("evaluate", &a.common)?;
            set_path(&mut c.model, a.model);
            set_path(&mut c.data, a.data);
            set_path(&mut c.out, a.out);
            c
        }
        Command::Elasticity(a) => {
            let mut c = load_base("elasticity", &a.common)?;
            set_path(&mut c.model, a.model);
            set_path(&mut c.input, a.input);
            set_path(&mut c.truth, a.truth);
            set_path(&mut c.out, a.out);
            set(&mut c.delta, a.delta);
            if a.as_of.is_some() {
                c.as_of = a.as_of;
            }
            c
        }
        Command::Gradcheck(a) => {
            let mut c = load_base("gradcheck", &a.common)?;
            set_path(&mut c.out, a.out);
            c.world.items = a.items.unwrap_or(4);
            c
        }
    };
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let out = cfg.out()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.world.validate()?;
    let out = prepare_out(cfg)?;
    let data = generate_with(&cfg.world, cfg.exec())?;
    write_transactions(create(&out.join("transactions.csv"))?, &data.records)?;
    write_truth(create(&out.join("truth.csv"))?, &data.truth)?;
    eprintln!(
        "wrote {} records for {} items to {}",
        data.records.len(),
        data.truth.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build(cfg: &RunConfig) -> anyhow::Result<()> {
    let input = cfg.required(&cfg.input, "input")?;
    let out = prepare_out(cfg)?;
    let records = ingest(input)?;
    let data = build_dataset(&records, &cfg.split, cfg.seed, cfg.exec())?;
    data.save(&out)?;
    let n = &data.manifest.row_counts;
    eprintln!(
        "pairs: {} train, {} validation, {} out-of-time (schema {})",
        n.train, n.validation, n.out_of_time, data.manifest.schema_hash
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let data_dir = cfg.required(&cfg.data, "data")?;
    cfg.train.validate()?;
    cfg.architecture.validate()?;
    let out = prepare_out(cfg)?;
    let data = DatasetSplit::load(data_dir)?;
    let start = Instant::now();
    let (model, report) = fit_model(&data, &cfg.architecture, &cfg.train)?;
    save_model(&model, &out.join("model.mdnm"))?;
    write_json(&out.join("train_report.json"), &report)?;
    report.write_loss_csv(create(&out.join("loss.csv"))?)?;
    if let Some(last) = report.epochs.last() {
        eprintln!(
            "trained {} epochs in {:.1}s, final train loss {:.5}",
            last.epoch,
            start.elapsed().as_secs_f64(),
            last.train_loss
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluationMetrics {
    schema_hash: String,
    validation: Option<mono_elasticity::elasticity::DemandMetrics>,
    out_of_time: Option<mono_elasticity::elasticity::DemandMetrics>,
}

fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let model_path = cfg.required(&cfg.model, "model")?;
    let data_dir = cfg.required(&cfg.data, "data")?;
    let out = prepare_out(cfg)?;
    let model = load_model(model_path)?;
    let data = DatasetSplit::load(data_dir)?;
    model.ensure_dataset(&data.manifest.schema_hash)?;
    let exec = cfg.exec();
    let metrics_for = |rows: &[_]| -> anyhow::Result<_> {
        if rows.is_empty() {
            Ok(None)
        } else {
            Ok(Some(evaluate_demand(&model, rows, exec)?))
        }
    };
    let metrics = EvaluationMetrics {
        schema_hash: data.manifest.schema_hash.clone(),
        validation: metrics_for(&data.validation)?,
        out_of_time: metrics_for(&data.out_of_time)?,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    if let Some(m) = &metrics.out_of_time {
        eprintln!("out-of-time WMAPE {:.2}% over {} rows", m.wmape, m.rows);
    }
    Ok(())
}

fn cmd_elasticity(cfg: &RunConfig) -> anyhow::Result<()> {
    let model_path = cfg.required(&cfg.model, "model")?;
    let input = cfg.required(&cfg.input, "input")?;
    if !(cfg.delta.is_finite() && cfg.delta != 0.0 && cfg.delta > -1.0) {
        return Err(usage(&format!(
            "--delta must be a non-zero fraction above -1, got {}",
            cfg.delta
        )));
    }
    let out = prepare_out(cfg)?;
    let model = load_model(model_path)?;
    let records = ingest(input)?;
    let as_of = match &cfg.as_of {
        Some(s) => s
            .parse::<YearMonth>()
            .map_err(|e| usage(&format!("invalid --as-of {s:?}: {e}")))?,
        None => records
            .iter()
            .map(|r| r.year_month)
            .max()
            .ok_or_else(|| anyhow!("{} holds no transactions", input.display()))?,
    };
    let set = build_inference_set(&records, as_of)?;
    let report = evaluate_inference_set(&model, &set, cfg.delta, cfg.exec())?;
    report.write_csv(create(&out.join("elasticity.csv"))?)?;
    let truth = match &cfg.truth {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(read_truth(BufReader::new(f))?)
        }
        None => None,
    };
    let summary = ElasticitySummary::new(&report, truth.as_deref())?;
    write_json(&out.join("elasticity_summary.json"), &summary)?;
    eprintln!(
        "{} items: {} valid, {} skipped, {} failed",
        summary.items, summary.valid, summary.skipped, summary.failed
    );
    if summary.positive > 0 {
        bail!(Error::Numeric {
            context: format!("{} positive elasticities", summary.positive)
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckOutput {
    tolerance: f64,
    max_rel_error: f64,
    passed: bool,
    report: mono_elasticity::numeric::GradcheckReport,
}

fn cmd_gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.architecture.validate()?;
    let out = prepare_out(cfg)?;
    let world = SyntheticWorld {
        months: 8,
        ..cfg.world.clone()
    };
    let records = generate_with(&world, cfg.exec())?.records;
    let data = build_dataset(&records, &SplitPolicy::default(), cfg.seed, cfg.exec())?;
    let rows = &data.train[..data.train.len().min(16)];
    let schema = FeatureSchema::from_pairs(&data.manifest.features, &data.train, &data.manifest.schema_hash)?;
    let mut model = build_model(schema, cfg.architecture.clone(), cfg.seed)?;
    model.stats = fit_stats(&model.schema, &model.config, &data.train)?;
    // Constant inputs with zero biases sit exactly on the relu kink.
    for p in model.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
            *v = 0.01 + 0.02 * (i % 5) as f64;
        }
    }
    let batch = model.encode(rows, None)?;
    let targets: Vec<f64> = rows
        .iter()
        .map(|p| model.scale_target(p.target.unwrap_or(0.0)))
        .collect();
    let l2 = cfg.train.l2_decay.max(1e-3);
    let mut params = model.params.clone();
    let report = gradcheck(
        &mut params,
        |tape, store| {
            let mut m = model.clone();
            m.params = store.clone();
            Ok(objective(tape, &m, &batch, &targets, l2)?.0)
        },
        &GradcheckConfig {
            seed: cfg.seed,
            ..GradcheckConfig::default()
        },
    )?;
    let max = report.max_rel_error();
    let output = GradcheckOutput {
        tolerance: GRADCHECK_TOLERANCE,
        max_rel_error: max,
        passed: max < GRADCHECK_TOLERANCE,
        report,
    };
    write_json(&out.join("gradcheck.json"), &output)?;
    eprintln!(
        "max relative error {max:.3e} over {} parameters",
        output.report.entries.len()
    );
    if !output.passed {
        bail!(Error::Numeric {
            context: format!("gradient check: max relative error {max:.3e} exceeds {GRADCHECK_TOLERANCE:e}")
        });
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Io { .. }) => 2,
        Some(
            Error::SchemaMismatch { .. }
            | Error::Integrity(_)
            | Error::ModelFormat(_)
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Json(_),
        ) => 3,
        Some(_) => 4,
        None => 2,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    let cfg = resolve(command)?;
    match cfg.command.as_str() {
        "synth" => cmd_synth(&cfg),
        "build" => cmd_build(&cfg),
        "train" => cmd_train(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "elasticity" => cmd_elasticity(&cfg),
        "gradcheck" => cmd_gradcheck(&cfg),
        other => unreachable!("unhandled command {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
