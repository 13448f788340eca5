//! `stlinear` command line: dataset conversion and generation, training,
//! evaluation, prediction, efficiency benchmarking, and SVG plots.
//!
//! Configuration precedence everywhere: built-in defaults (the published
//! model setup), then a `--config key=value` file, then explicit flags.
//! `STLINEAR_THREADS` caps training worker threads (default 1).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use stlinear::baselines::{
    DLinear, DLinearForecaster, Forecaster, HistoricalAverage, Persistence, StLinearForecaster,
};
use stlinear::data::{parse_start_time, PreparedData, SeriesDataset};
use stlinear::evaluation::{count_macs, estimate_memory, EvalReport, MacMode};
use stlinear::model::{ModelConfig, StLinear};
use stlinear::synthetic::{self, SyntheticConfig};
use stlinear::training::{train, TrainConfig};
use stlinear::Checkpoint;

mod config;
mod plot;

use config::{resolve, FileConfig};

#[derive(Parser)]
#[command(
    name = "stlinear",
    version,
    about = "Linear spatio-temporal traffic forecasting: decomposition, node embeddings, periodicity learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Convert a CSV series (T rows x N columns, one header line) into the
    /// STF1 binary container plus its .meta sidecar.
    Convert(ConvertArgs),
    /// Generate a synthetic daily+weekly benchmark dataset.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus a per-epoch CSV log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split; optionally run a baseline
    /// side-by-side.
    Eval(EvalArgs),
    /// Dump per-node prediction-vs-truth CSV for one sample.
    Predict(PredictArgs),
    /// Tabulate MACs and memory across node-count and horizon sweeps.
    Bench(BenchArgs),
    /// Render SVG charts from the CSV files other commands produce.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    /// Drop the per-node spatial embeddings (all nodes share weights).
    Spatial,
    /// Drop the time-of-day embedding table.
    Tod,
    /// Drop the day-of-week embedding table.
    Dow,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Dlinear,
    Persistence,
    Ha,
}

#[derive(clap::Args)]
struct ConvertArgs {
    /// Input CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Output .stf path.
    #[arg(long)]
    out: PathBuf,
    /// Series start, ISO-8601 (e.g. 2016-07-01T00:00:00). Falls back to
    /// the input's .meta sidecar.
    #[arg(long)]
    start_time: Option<String>,
    /// Sampling interval in minutes (must divide 1440).
    #[arg(long)]
    interval_minutes: Option<u32>,
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Output .stf path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, default_value_t = 21)]
    days: usize,
    /// Steps per day (must divide 1440); 24 means hourly, 288 means 5-minute.
    #[arg(long, default_value_t = 24)]
    steps_per_day: usize,
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset file (.stf or .csv with a .meta sidecar).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// key=value run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Horizon; sets history = horizon (the evaluation protocol uses
    /// T_h = T_p). Default 12.
    #[arg(long)]
    horizon: Option<usize>,
    /// Moving-average kernel, odd; default is the largest of {3,5,15,25}
    /// that fits the history.
    #[arg(long)]
    kernel: Option<usize>,
    /// Training epochs (default 300).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (default 32).
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate (default 2e-4).
    #[arg(long)]
    lr: Option<f64>,
    /// PRNG seed for init and shuffling (default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Temporal embedding width d (default 32).
    #[arg(long)]
    d: Option<usize>,
    /// Spatial embedding width e (default 8).
    #[arg(long)]
    e: Option<usize>,
    /// Periodicity embedding width c (default 32).
    #[arg(long)]
    c: Option<usize>,
    /// Residual decoder blocks L (default 3).
    #[arg(long)]
    layers: Option<usize>,
    /// Decoder inner width (default: the embedding width).
    #[arg(long)]
    hidden: Option<usize>,
    /// Early-stopping patience in epochs (default: off).
    #[arg(long)]
    patience: Option<usize>,
    /// Loss mask: raw targets at or below this are ignored (default 0).
    #[arg(long)]
    mask_threshold: Option<f64>,
    /// Ablation switches; repeatable.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    /// Checkpoint output path (default <out>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory (default "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Calendar overrides for datasets without a sidecar.
    #[arg(long)]
    start_time: Option<String>,
    #[arg(long)]
    interval_minutes: Option<u32>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Split to evaluate (default test).
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Must match the checkpoint when given (sanity guard).
    #[arg(long)]
    horizon: Option<usize>,
    /// Metric mask threshold on raw targets (default 0).
    #[arg(long, default_value_t = 0.0)]
    mask_threshold: f64,
    /// Also evaluate a baseline on the same split.
    #[arg(long, value_enum)]
    baseline: Option<BaselineKind>,
    /// Epochs used to fit the dlinear baseline (default 30).
    #[arg(long, default_value_t = 30)]
    baseline_epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    start_time: Option<String>,
    #[arg(long)]
    interval_minutes: Option<u32>,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Sample index within the split (default 0).
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Comma-separated node ids (default: the first six).
    #[arg(long)]
    nodes: Option<String>,
    /// Output CSV path (default <out>/predictions.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    start_time: Option<String>,
    #[arg(long)]
    interval_minutes: Option<u32>,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Node counts to sweep (default: the four benchmark sizes).
    #[arg(long, default_value = "170,307,358,883")]
    nodes: String,
    /// Horizons to sweep with T_h = T_p (default 12,24,36,48).
    #[arg(long, default_value = "12,24,36,48")]
    horizons: String,
    /// Training samples per epoch used for the per-epoch column.
    #[arg(long, default_value_t = 1)]
    samples_per_epoch: u64,
    /// Batch size for the training-memory column.
    #[arg(long, default_value_t = 32)]
    batch: u64,
    /// Output CSV (default <out>/bench.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// Training log (epoch, train_loss, val_mae).
    Loss,
    /// Per-horizon metric breakdown.
    Horizons,
    /// Prediction-vs-truth per node.
    Predictions,
    /// MAC scaling sweep (log-scale y).
    Macs,
}

#[derive(clap::Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// Input CSV produced by train/eval/predict/bench.
    #[arg(long)]
    input: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Convert(args) => cmd_convert(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn load_dataset(
    path: &Path,
    start_time: &Option<String>,
    interval_minutes: Option<u32>,
) -> Result<SeriesDataset> {
    let ds = match (start_time, interval_minutes) {
        (Some(s), Some(i)) => SeriesDataset::load_with_meta(path, parse_start_time(s)?, i)?,
        (None, None) => SeriesDataset::load(path)?,
        _ => bail!("--start-time and --interval-minutes must be given together"),
    };
    Ok(ds)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let ds = load_dataset(&args.input, &args.start_time, args.interval_minutes)?;
    ds.save_stf(&args.out)?;
    println!(
        "wrote {}: N={} T={} N_d={} interval={}min start={}",
        args.out.display(),
        ds.n_nodes(),
        ds.n_steps(),
        ds.steps_per_day(),
        ds.interval_minutes(),
        ds.start_time()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let ds = synthetic::generate(&SyntheticConfig {
        nodes: args.nodes,
        days: args.days,
        steps_per_day: args.steps_per_day,
        noise_std: args.noise,
        seed: args.seed,
    })?;
    ds.save_stf(&args.out)?;
    println!(
        "wrote {}: N={} T={} N_d={}",
        args.out.display(),
        ds.n_nodes(),
        ds.n_steps(),
        ds.steps_per_day()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let dataset = args
        .dataset
        .clone()
        .or_else(|| file.get("dataset").map(PathBuf::from))
        .ok_or_else(|| anyhow!("no dataset: pass --dataset or set dataset= in the config file"))?;
    let out_dir = resolve(
        args.out.clone(),
        file.get("out").map(PathBuf::from),
        PathBuf::from("out"),
    );
    ensure_out_dir(&out_dir)?;

    let horizon = resolve(args.horizon, file.parse("horizon")?, 12);
    let ds = load_dataset(&dataset, &args.start_time, args.interval_minutes)?;
    let data = PreparedData::new(ds, horizon, horizon)?;

    let mut cfg = ModelConfig::published(data.ds.n_nodes(), data.ds.steps_per_day(), horizon, horizon);
    cfg.d = resolve(args.d, file.parse("d")?, cfg.d);
    cfg.e = resolve(args.e, file.parse("e")?, cfg.e);
    cfg.c = resolve(args.c, file.parse("c")?, cfg.c);
    cfg.decoder_layers = resolve(args.layers, file.parse("layers")?, cfg.decoder_layers);
    cfg.kernel = resolve(args.kernel, file.parse("kernel")?, cfg.kernel);
    cfg.seed = resolve(args.seed, file.parse("seed")?, cfg.seed);
    let mut ablations = args.ablate.clone();
    if let Some(listed) = file.get("ablate") {
        for item in listed.split(',').filter(|s| !s.trim().is_empty()) {
            ablations.push(match item.trim() {
                "spatial" => Ablation::Spatial,
                "tod" => Ablation::Tod,
                "dow" => Ablation::Dow,
                other => bail!("config ablate: unknown variant '{other}'"),
            });
        }
    }
    for a in &ablations {
        match a {
            Ablation::Spatial => cfg.use_spatial = false,
            Ablation::Tod => cfg.use_time_of_day = false,
            Ablation::Dow => cfg.use_day_of_week = false,
        }
    }
    cfg.hidden = resolve(args.hidden, file.parse("hidden")?, cfg.embedding_dim());

    let tc = TrainConfig {
        epochs: resolve(args.epochs, file.parse("epochs")?, 300),
        batch_size: resolve(args.batch, file.parse("batch")?, 32),
        lr: resolve(args.lr, file.parse("lr")?, 2e-4),
        seed: resolve(args.seed, file.parse("seed")?, 1),
        patience: args.patience.or(file.parse("patience")?),
        loss_mask_threshold: resolve(args.mask_threshold, file.parse("mask_threshold")?, 0.0),
    };

    println!(
        "training on {} nodes, {} steps: horizon {horizon}, kernel {}, d={} e={} c={} L={} hidden={}, {} epochs",
        data.ds.n_nodes(),
        data.ds.n_steps(),
        cfg.kernel,
        cfg.d,
        cfg.e,
        cfg.c,
        cfg.decoder_layers,
        cfg.hidden,
        tc.epochs
    );

    let mut model = StLinear::new(cfg.clone())?;
    let mut log = String::from("epoch,train_loss,val_mae\n");
    let outcome = train(&mut model, &data, data.train(), data.val(), &tc, |s| {
        println!(
            "epoch {:>4}: train loss {:.5}, val MAE {:.5}",
            s.epoch, s.train_loss, s.val_mae
        );
        log.push_str(&format!("{},{:.9},{:.9}\n", s.epoch, s.train_loss, s.val_mae));
    })?;

    let log_path = out_dir.join("train_log.csv");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;

    let ckpt_path = args
        .checkpoint
        .clone()
        .or_else(|| file.get("checkpoint").map(PathBuf::from))
        .unwrap_or_else(|| out_dir.join("model.ckpt"));
    let ckpt = Checkpoint {
        model_cfg: model.cfg.clone(),
        norm: data.norm,
        epoch: outcome.best_epoch,
        best_val_mae: outcome.best_val_mae,
        train_seed: tc.seed,
        params: model.params.clone(),
    };
    ckpt.save(&ckpt_path)?;

    let macs = count_macs(&cfg, MacMode::Training, data.train().len() as u64);
    println!(
        "done: best val MAE {:.5} at epoch {}; {} parameters, {:.3e} training MACs/epoch",
        outcome.best_val_mae,
        outcome.best_epoch,
        macs.parameter_count,
        macs.macs_per_epoch as f64
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn report_lines(report: &EvalReport, label: &str) {
    println!("--- {label} ---");
    print!("{}", report.to_kv());
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.dataset, &args.start_time, args.interval_minutes)?;
    ckpt.check_dataset(&ds)?;
    if let Some(h) = args.horizon {
        if h != ckpt.model_cfg.t_h || h != ckpt.model_cfg.t_p {
            bail!(
                "checkpoint was trained with T_h={} T_p={}, but --horizon {h} was requested",
                ckpt.model_cfg.t_h,
                ckpt.model_cfg.t_p
            );
        }
    }
    let data = PreparedData::new(ds, ckpt.model_cfg.t_h, ckpt.model_cfg.t_p)?
        .with_normalizer(ckpt.norm);
    let samples = data.split(args.split.name())?;

    let mut forecaster = StLinearForecaster::new(ckpt.model());
    let report = stlinear::baselines::evaluate(&mut forecaster, &data, samples, args.mask_threshold)?;
    report_lines(&report, &format!("stlinear on {}", args.split.name()));

    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    ensure_out_dir(&out_dir)?;
    let kv_path = out_dir.join(format!("eval_{}.txt", args.split.name()));
    fs::write(&kv_path, report.to_kv())?;
    let horizons_path = out_dir.join(format!("eval_{}_horizons.csv", args.split.name()));
    fs::write(&horizons_path, report.horizons_csv())?;

    if let Some(kind) = args.baseline {
        let mut baseline: Box<dyn Forecaster> = match kind {
            BaselineKind::Persistence => Box::new(Persistence),
            BaselineKind::Ha => Box::new(HistoricalAverage::new()),
            BaselineKind::Dlinear => Box::new(DLinearForecaster::new(DLinear::new(
                data.ds.n_nodes(),
                ckpt.model_cfg.t_h,
                ckpt.model_cfg.t_p,
                ckpt.model_cfg.kernel,
                ckpt.train_seed,
            )?)),
        };
        let tc = TrainConfig {
            epochs: args.baseline_epochs,
            ..Default::default()
        };
        baseline.fit(&data, &tc, &mut |s| {
            if s.epoch % 10 == 0 {
                println!("[{}] epoch {:>3}: val MAE {:.5}", baseline_name(kind), s.epoch, s.val_mae);
            }
        })?;
        let breport = stlinear::baselines::evaluate(baseline.as_mut(), &data, samples, args.mask_threshold)?;
        report_lines(&breport, &format!("{} on {}", baseline_name(kind), args.split.name()));
        let bpath = out_dir.join(format!("eval_{}_{}.txt", baseline_name(kind), args.split.name()));
        fs::write(&bpath, breport.to_kv())?;
    }

    println!("saved: {} and {}", kv_path.display(), horizons_path.display());
    Ok(())
}

fn baseline_name(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::Dlinear => "dlinear",
        BaselineKind::Persistence => "persistence",
        BaselineKind::Ha => "ha",
    }
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.dataset, &args.start_time, args.interval_minutes)?;
    ckpt.check_dataset(&ds)?;
    let data = PreparedData::new(ds, ckpt.model_cfg.t_h, ckpt.model_cfg.t_p)?
        .with_normalizer(ckpt.norm);
    let samples = data.split(args.split.name())?;
    let sample = *samples.get(args.sample).ok_or_else(|| {
        anyhow!(
            "sample index {} out of range: the {} split has {} samples",
            args.sample,
            args.split.name(),
            samples.len()
        )
    })?;

    let n = data.ds.n_nodes();
    let nodes: Vec<usize> = match &args.nodes {
        Some(list) => list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| anyhow!("bad node id '{v}': {e}"))
            })
            .collect::<Result<_>>()?,
        None => (0..n.min(6)).collect(),
    };
    for &node in &nodes {
        if node >= n {
            bail!("node {node} out of range (dataset has {n})");
        }
    }

    let mut forecaster = StLinearForecaster::new(ckpt.model());
    let mut out = stlinear::Tensor::zeros(&[n, ckpt.model_cfg.t_p]);
    forecaster.predict(&data, &sample, &mut out)?;

    let mut csv = String::from("node,step,truth,prediction\n");
    for &node in &nodes {
        let truth = sample.target(data.ds.values(), node);
        for (h, &t) in truth.iter().enumerate() {
            csv.push_str(&format!("{},{},{:.6},{:.6}\n", node, h + 1, t, out.at2(node, h)));
        }
    }
    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out/predictions.csv"));
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_out_dir(parent)?;
        }
    }
    fs::write(&out_path, csv)?;
    println!(
        "wrote {} (sample anchored at t={}, {} nodes)",
        out_path.display(),
        sample.anchor_t,
        nodes.len()
    );
    Ok(())
}

fn parse_sweep(list: &str, what: &str) -> Result<Vec<usize>> {
    let parsed: Result<Vec<usize>> = list
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| anyhow!("bad {what} '{v}': {e}"))
        })
        .collect();
    let vals = parsed?;
    if vals.is_empty() {
        bail!("empty {what} sweep");
    }
    Ok(vals)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let nodes = parse_sweep(&args.nodes, "node count")?;
    let horizons = parse_sweep(&args.horizons, "horizon")?;

    let mut csv = String::from(
        "mode,n,t_p,macs_per_sample,macs_per_epoch,parameter_count,memory_bytes\n",
    );
    println!(
        "{:<10} {:>5} {:>5} {:>16} {:>18} {:>12} {:>14}",
        "mode", "n", "t_p", "macs/sample", "macs/epoch", "params", "memory(B)"
    );
    for &t_p in &horizons {
        for &n in &nodes {
            let cfg = ModelConfig::published(n, 288, t_p, t_p);
            for (mode, name, batch) in [
                (MacMode::Inference, "inference", 1),
                (MacMode::Training, "training", args.batch),
            ] {
                let r = count_macs(&cfg, mode, args.samples_per_epoch);
                let mem = estimate_memory(&cfg, batch, mode);
                csv.push_str(&format!(
                    "{name},{n},{t_p},{},{},{},{}\n",
                    r.macs_per_sample, r.macs_per_epoch, r.parameter_count, mem
                ));
                println!(
                    "{:<10} {:>5} {:>5} {:>16} {:>18} {:>12} {:>14}",
                    name, n, t_p, r.macs_per_sample, r.macs_per_epoch, r.parameter_count, mem
                );
            }
        }
    }

    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("out/bench.csv"));
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_out_dir(parent)?;
        }
    }
    fs::write(&out_path, csv)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    match args.kind {
        PlotKind::Loss => plot::plot_loss(&args.input, &args.out)?,
        PlotKind::Horizons => plot::plot_horizons(&args.input, &args.out)?,
        PlotKind::Predictions => plot::plot_predictions(&args.input, &args.out)?,
        PlotKind::Macs => plot::plot_macs(&args.input, &args.out)?,
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
