mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowconv::analysis::{
    churn_for_targets, churn_series, evaluate_ha, evaluate_model, filter_high_churn, hourly_aggregate, layer_sweep,
    method_name, train_and_evaluate, write_churn_csv, write_hourly_csv, write_metrics_csv, write_sweep_csv,
    EvalReport, MetricsRow, Prepared,
};
use flowconv::fcgru::Variant;
use flowconv::ingest::{ingest_trips, read_trips_csv, write_trips_csv, DatasetFile, GridSpec};
use flowconv::synth::{generate, SynthConfig};
use flowconv::train::{write_loss_log, Checkpoint};
use serde::Serialize;

use config::{Overrides, RunConfig};

const CHECKPOINT_FILE: &str = "checkpoint.fcgru";
const LOSS_LOG_FILE: &str = "loss_log.csv";

#[derive(Debug, Parser)]
#[command(name = "flowconv", version, about = "Flow-aware traffic volume prediction")]
struct Cli {
    /// Seed for initialization, shuffling and synthetic data.
    #[arg(long, global = true, env = "FCGRU_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = auto).
    #[arg(long, global = true, env = "FCGRU_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Full,
    Nc,
    Nf,
    Fc,
    Ha,
    /// Every model variant plus HA.
    All,
}

impl Method {
    fn variant(self) -> Option<Variant> {
        match self {
            Method::Full => Some(Variant::Full),
            Method::Nc => Some(Variant::Nc),
            Method::Nf => Some(Variant::Nf),
            Method::Fc => Some(Variant::Fc),
            Method::Ha | Method::All => None,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate a trip CSV into a dataset file.
    Ingest {
        #[arg(long)]
        trips: PathBuf,
        /// Grid JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic commute trips as CSV.
    Synth {
        /// Generator JSON; the built-in 4x4 reference scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the grid JSON needed by `ingest`.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Train one model variant; writes a checkpoint and loss log into `--out`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<Method>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score on the test split and write metrics.csv into `--out`.
    /// `--variant all` trains every variant and reports it next to HA.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<Method>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Flow-churn analysis: churn.csv, hourly_churn.csv and the
    /// high-churn evaluation table.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emd_threshold: Option<f64>,
        /// Also score this model on the high-churn subset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one model per depth and write layer_sweep.csv.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        layers: Vec<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<Method>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Ingest { trips, config, out } => cmd_ingest(&trips, &config, &out, cli.threads),
        Command::Synth { config, out, grid_out } => cmd_synth(config.as_deref(), &out, grid_out.as_deref(), cli.seed),
        Command::Train {
            data,
            config,
            out,
            variant,
            overrides,
        } => {
            let cfg = resolve(config.as_deref(), &overrides, cli.seed, cli.threads, variant)?;
            cmd_train(&data, &cfg, &out)
        }
        Command::Eval {
            data,
            checkpoint,
            config,
            out,
            variant,
            overrides,
        } => {
            let cfg = resolve(config.as_deref(), &overrides, cli.seed, cli.threads, variant)?;
            cmd_eval(&data, checkpoint.as_deref(), &cfg, variant, &out)
        }
        Command::Analyze {
            data,
            out,
            emd_threshold,
            checkpoint,
            config,
            overrides,
        } => {
            let mut cfg = resolve(config.as_deref(), &overrides, cli.seed, cli.threads, None)?;
            if let Some(w) = emd_threshold {
                cfg.emd_threshold = w;
            }
            cmd_analyze(&data, checkpoint.as_deref(), &cfg, &out)
        }
        Command::Sweep {
            data,
            layers,
            out,
            config,
            variant,
            overrides,
        } => {
            let cfg = resolve(config.as_deref(), &overrides, cli.seed, cli.threads, variant)?;
            cmd_sweep(&data, &layers, &cfg, &out)
        }
    }
}

/// flags > file > defaults.
fn resolve(
    path: Option<&Path>,
    overrides: &Overrides,
    seed: Option<u64>,
    threads: usize,
    variant: Option<Method>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant.and_then(Method::variant) {
        cfg.variant = v;
    }
    print_config("run", &Resolved { threads, config: &cfg })?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    threads: usize,
    #[serde(flatten)]
    config: &'a T,
}

fn print_config<T: Serialize>(label: &str, value: &T) -> Result<()> {
    println!("{label} config: {}", serde_json::to_string(value)?);
    Ok(())
}

fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    DatasetFile::read(std::io::BufReader::new(f)).with_context(|| format!("reading dataset {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_ingest(trips: &Path, config: &Path, out: &Path, threads: usize) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading config {}", config.display()))?;
    let grid: GridSpec = serde_json::from_str(&text).with_context(|| format!("parsing config {}", config.display()))?;
    grid.validate().context("invalid grid")?;
    print_config("ingest", &Resolved { threads, config: &grid })?;

    let f = File::open(trips).with_context(|| format!("opening trips {}", trips.display()))?;
    let csv = read_trips_csv(std::io::BufReader::new(f)).with_context(|| format!("reading trips {}", trips.display()))?;
    if csv.malformed > 0 {
        log::warn!("skipped {} malformed rows", csv.malformed);
    }
    let file = ingest_trips(&csv.trips, csv.malformed, &grid)?;
    if file.series.is_empty() {
        log::warn!("no usable trips; dataset has zero intervals");
    }
    file.write(create(out)?)?;
    println!(
        "intervals: {} rejected: {} (out of bounds {}, end before start {}, before t0 {}) malformed: {}",
        file.meta.intervals,
        file.meta.rejected.total(),
        file.meta.rejected.out_of_bounds,
        file.meta.rejected.end_before_start,
        file.meta.rejected.before_t0,
        file.meta.malformed
    );
    Ok(())
}

fn cmd_synth(config: Option<&Path>, out: &Path, grid_out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => SynthConfig::reference(RunConfig::default().seed),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    print_config("synth", &cfg)?;
    let output = generate(&cfg)?;
    write_trips_csv(create(out)?, &output.trips)?;
    if let Some(p) = grid_out {
        serde_json::to_writer_pretty(create(p)?, &cfg.grid)?;
    }
    println!("trips: {} (noise {})", output.trips.len(), output.noise_trips);
    Ok(())
}

fn cmd_train(data: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let file = load_dataset(data)?;
    let prep = Prepared::new(&file, &cfg.split())?;
    let spec = cfg.model(file.meta.m, file.meta.k, cfg.variant);
    let model = train_and_evaluate(&prep, &spec, &cfg.train())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    model.checkpoint.write(create(&out.join(CHECKPOINT_FILE))?)?;
    write_loss_log(create(&out.join(LOSS_LOG_FILE))?, &model.log)?;
    println!(
        "variant: {} selected epoch: {} test rmse: {} mae: {}",
        cfg.variant, model.checkpoint.epoch, model.test.rmse, model.test.mae
    );
    Ok(())
}

fn metrics_row(variant: Option<Variant>, r: &EvalReport) -> MetricsRow {
    MetricsRow {
        method: method_name(variant).to_string(),
        variant: variant.map_or("ha", |v| v.as_str()).to_string(),
        rmse: r.rmse,
        mae: r.mae,
        n: r.instances,
    }
}

/// Without `--variant` the checkpoint decides which model is scored.
fn cmd_eval(data: &Path, checkpoint: Option<&Path>, cfg: &RunConfig, method: Option<Method>, out: &Path) -> Result<()> {
    let file = load_dataset(data)?;
    let split = cfg.split();
    let mut rows = Vec::new();
    match method {
        Some(Method::Ha) => {
            let prep = Prepared::new(&file, &split)?;
            rows.push(metrics_row(None, &evaluate_ha(&prep.raw_view(&prep.test), &prep.grid)?));
        }
        Some(Method::All) => {
            let prep = Prepared::new(&file, &split)?;
            for v in [Variant::Full, Variant::Nc, Variant::Nf, Variant::Fc] {
                let spec = cfg.model(file.meta.m, file.meta.k, v);
                let model = train_and_evaluate(&prep, &spec, &cfg.train())?;
                println!("trained {v}: selected epoch {}", model.checkpoint.epoch);
                rows.push(metrics_row(Some(v), &model.test));
            }
            rows.push(metrics_row(None, &evaluate_ha(&prep.raw_view(&prep.test), &prep.grid)?));
        }
        _ => {
            let Some(path) = checkpoint else {
                bail!("--checkpoint is required unless --variant is ha or all");
            };
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            print_config("checkpoint", &ckpt.spec)?;
            if method.is_some() && ckpt.spec.variant != cfg.variant {
                bail!("checkpoint holds variant {}, not {}", ckpt.spec.variant, cfg.variant);
            }
            let split = flowconv::analysis::SplitConfig {
                history: ckpt.spec.history,
                ..split
            };
            let prep = Prepared::with_scaler(&file, &split, ckpt.scaler.clone())?;
            let r = evaluate_model(&prep.test, &prep.raw, &prep.grid, &ckpt.spec, &ckpt.params, &prep.scaler)?;
            rows.push(metrics_row(Some(ckpt.spec.variant), &r));
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_metrics_csv(create(&out.join("metrics.csv"))?, &rows)?;
    for r in &rows {
        println!("{}: rmse {} mae {} n {}", r.method, r.rmse, r.mae, r.n);
    }
    Ok(())
}

/// One row of the high-churn evaluation table.
#[derive(Debug, Serialize)]
struct FilteredRow {
    method: String,
    subset: &'static str,
    threshold: f64,
    rmse: f64,
    mae: f64,
    n: usize,
}

fn cmd_analyze(data: &Path, checkpoint: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<()> {
    let file = load_dataset(data)?;
    let grid = file.grid().clone();
    let churns = churn_series(&file.series, &grid)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_churn_csv(create(&out.join("churn.csv"))?, &churns, &grid)?;
    write_hourly_csv(create(&out.join("hourly_churn.csv"))?, &hourly_aggregate(&churns, &grid))?;

    let ckpt = checkpoint
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()?;
    let mut split = cfg.split();
    if let Some(c) = &ckpt {
        print_config("checkpoint", &c.spec)?;
        split.history = c.spec.history;
    }
    let prep = match &ckpt {
        Some(c) => Prepared::with_scaler(&file, &split, c.scaler.clone())?,
        None => Prepared::new(&file, &split)?,
    };
    let test_churn = churn_for_targets(&prep.test, &churns);
    let high = filter_high_churn(&prep.test, &test_churn, cfg.emd_threshold)?;
    println!(
        "high-churn test windows: {} of {} (emd > {})",
        high.len(),
        prep.test.len(),
        cfg.emd_threshold
    );

    let mut rows = Vec::new();
    for (subset, ds) in [("all", &prep.test), ("high_churn", &high)] {
        let mut push = |method: &str, r: Option<EvalReport>| {
            let (rmse, mae, n) = r.map_or((f64::NAN, f64::NAN, 0), |r| (r.rmse, r.mae, r.instances));
            rows.push(FilteredRow {
                method: method.to_string(),
                subset,
                threshold: cfg.emd_threshold,
                rmse,
                mae,
                n,
            });
        };
        let nonempty = !ds.is_empty();
        push(method_name(None), nonempty.then(|| evaluate_ha(&prep.raw_view(ds), &grid)).transpose()?);
        if let Some(c) = &ckpt {
            let r = nonempty
                .then(|| evaluate_model(ds, &prep.raw, &grid, &c.spec, &c.params, &prep.scaler))
                .transpose()?;
            push(method_name(Some(c.spec.variant)), r);
        }
    }
    let mut wtr = csv::Writer::from_writer(create(&out.join("high_churn_metrics.csv"))?);
    for r in &rows {
        wtr.serialize(r)?;
        println!("{} [{}]: rmse {} mae {} n {}", r.method, r.subset, r.rmse, r.mae, r.n);
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_sweep(data: &Path, layers: &[usize], cfg: &RunConfig, out: &Path) -> Result<()> {
    if layers.is_empty() {
        bail!("--layers is empty");
    }
    let file = load_dataset(data)?;
    let prep = Prepared::new(&file, &cfg.split())?;
    let base = cfg.model(file.meta.m, file.meta.k, cfg.variant);
    let results = layer_sweep(&prep, &base, &cfg.train(), layers)?;
    let rows: Vec<_> = results.into_iter().map(|(row, _)| row).collect();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_sweep_csv(create(&out.join("layer_sweep.csv"))?, &rows)?;
    for r in &rows {
        println!("layers {}: rmse {} mae {}", r.layers, r.rmse, r.mae);
    }
    Ok(())
}
