mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusionkit::checks::GradCheckSuite;
use fusionkit::data::{self, generate_synthetic, load_dataset, write_dataset, FeatureSample};
use fusionkit::decoders::{read_predictions, write_predictions, PredictionRecord};
use fusionkit::ensemble::{fuse_predictions, score_records, search_weights};
use fusionkit::train::{evaluate, predict_records, train, write_history, Checkpoint};
use fusionkit::{DecoderKind, Error, ErrorClass, FusionStrategy, LossKind, MetricsReport, ModalityMap, Result};

use config::{load_run_config, load_synth_spec, require_file, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fusionkit", version, about = "Audio-visual feature fusion with joint emotion/valence decoding")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a class-conditional synthetic dataset.
    Synth {
        /// Generator spec (TOML, or JSON by extension).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Hold out a stratified validation split into this file.
        #[arg(long)]
        val_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2, requires = "val_out")]
        val_fraction: f64,
    },
    /// Train one system and write its best-validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or a prediction file against labelled data.
    Eval {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-sample posteriors and valence.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse several systems' predictions at the posterior level.
    Fuse(FuseArgs),
    /// Finite-difference check of every strategy/decoder/loss combination.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training data; overrides `data.train`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation data; without it a stratified split of `--data` is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<FusionStrategy>,
    #[arg(long)]
    decoder: Option<DecoderKind>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Acoustic stream names, comma separated.
    #[arg(long, value_delimiter = ',')]
    acoustic: Option<Vec<String>>,
    /// Visual stream names, comma separated.
    #[arg(long, value_delimiter = ',')]
    visual: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Member prediction files.
    #[arg(required = true)]
    predictions: Vec<PathBuf>,
    /// Fixed weights, one per member, summing to 1.
    #[arg(long, value_delimiter = ',', conflicts_with = "search", required_unless_present = "search")]
    weights: Option<Vec<f64>>,
    /// Grid-search the weights on `--labels`.
    #[arg(long, requires = "labels")]
    search: bool,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fused predictions output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            spec,
            out,
            seed,
            val_out,
            val_fraction,
        } => cmd_synth(&spec, &out, seed, val_out.as_deref(), val_fraction),
        Command::Train(args) => cmd_train(args),
        Command::Eval {
            checkpoint,
            predictions,
            data,
            out,
        } => cmd_eval(checkpoint.as_deref(), predictions.as_deref(), &data, out.as_deref()),
        Command::Predict { checkpoint, data, out } => cmd_predict(&checkpoint, &data, &out),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Gradcheck {
            config,
            dim,
            classes,
            seed,
        } => cmd_gradcheck(config.as_deref(), dim, classes, seed),
    }
}

fn cmd_synth(spec: &Path, out: &Path, seed: Option<u64>, val_out: Option<&Path>, val_fraction: f64) -> Result<()> {
    require_file(spec, "spec")?;
    let spec = load_synth_spec(spec, seed)?;
    let samples = generate_synthetic(&spec)?;
    match val_out {
        Some(val_path) => {
            let s = data::split(&samples, 1.0 - val_fraction, spec.seed)?;
            write_dataset(out, &s.train)?;
            write_dataset(val_path, &s.val)?;
            log::info!("wrote {} + {} samples", s.train.len(), s.val.len());
        }
        None => {
            write_dataset(out, &samples)?;
            log::info!("wrote {} samples to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

/// Streams named `visual*` are visual, everything else acoustic.
fn default_modality(streams: &[&str]) -> ModalityMap {
    let (visual, acoustic): (Vec<&str>, Vec<&str>) = streams.iter().partition(|s| s.starts_with("visual"));
    ModalityMap {
        acoustic: acoustic.into_iter().map(String::from).collect(),
        visual: visual.into_iter().map(String::from).collect(),
    }
}

fn apply_overrides(config: &mut RunConfig, args: &TrainArgs) {
    let t = &mut config.train;
    if let Some(v) = args.strategy {
        t.strategy = v;
    }
    if let Some(v) = args.decoder {
        t.decoder = v;
    }
    if let Some(v) = args.loss {
        t.loss = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.dim {
        t.dim = v;
    }
    if let Some(v) = args.classes {
        t.classes = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if let Some(v) = &args.acoustic {
        t.modality.acoustic = v.clone();
    }
    if let Some(v) = &args.visual {
        t.modality.visual = v.clone();
    }
    if let Some(p) = &args.data {
        config.data.train = Some(p.clone());
    }
    if let Some(p) = &args.val {
        config.data.val = Some(p.clone());
    }
    if let Some(f) = args.val_fraction {
        config.data.val_fraction = f;
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if let Some(c) = &args.config {
        require_file(c, "config")?;
    }
    let mut config = load_run_config(args.config.as_deref())?;
    apply_overrides(&mut config, &args);
    config.train.validate()?;
    let train_path = config
        .data
        .train
        .clone()
        .ok_or_else(|| Error::config("no training data (use --data or data.train)"))?;
    require_file(&train_path, "training data")?;
    if let Some(v) = &config.data.val {
        require_file(v, "validation data")?;
    }

    let classes = config.train.classes;
    let dataset = load_dataset(&train_path, classes)?;
    let (train_set, val_set): (Vec<FeatureSample>, Vec<FeatureSample>) = match &config.data.val {
        Some(v) => (dataset.samples, load_dataset(v, classes)?.samples),
        None => {
            let s = data::split(&dataset.samples, 1.0 - config.data.val_fraction, config.train.seed)?;
            (s.train, s.val)
        }
    };
    let m = &mut config.train.modality;
    if m.acoustic.is_empty() && m.visual.is_empty() {
        *m = default_modality(&dataset.manifest.stream_names());
        log::info!("modality inferred from stream names: {m:?}");
    }

    let outcome = train(&config.train, &train_set, &val_set)?;
    outcome.checkpoint.save(&args.out)?;
    if let Some(h) = &args.history {
        write_history(h, &outcome.history)?;
    }
    println!(
        "best epoch {} of {}: com={:.4}",
        outcome.checkpoint.epoch,
        outcome.history.len(),
        outcome.checkpoint.best_score
    );
    Ok(())
}

fn print_report(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(report)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_eval(checkpoint: Option<&Path>, predictions: Option<&Path>, data: &Path, out: Option<&Path>) -> Result<()> {
    require_file(data, "data")?;
    let report = match (checkpoint, predictions) {
        (Some(c), _) => {
            require_file(c, "checkpoint")?;
            let ckpt = Checkpoint::load(c)?;
            let model = ckpt.model()?;
            let samples = load_dataset(data, model.spec().classes)?.samples;
            evaluate(&model, &samples, ckpt.config.mse_weight)?
        }
        (None, Some(p)) => {
            require_file(p, "predictions")?;
            let records = read_predictions(p)?;
            let samples = load_dataset(data, records[0].probs.len())?.samples;
            score_records(&records, &samples, fusionkit::metrics::COMBINED_MSE_WEIGHT)?
        }
        (None, None) => return Err(Error::config("eval needs --checkpoint or --predictions")),
    };
    print_report(&report, out)
}

fn cmd_predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    require_file(data, "data")?;
    let model = Checkpoint::load(checkpoint)?.model()?;
    let samples = load_dataset(data, model.spec().classes)?.samples;
    let records = predict_records(&model, &samples)?;
    write_predictions(out, &records)?;
    log::info!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    for p in &args.predictions {
        require_file(p, "predictions")?;
    }
    if let Some(l) = &args.labels {
        require_file(l, "labels")?;
    }
    if let Some(c) = &args.config {
        require_file(c, "config")?;
    }
    let config = load_run_config(args.config.as_deref())?;
    let members: Vec<Vec<PredictionRecord>> =
        args.predictions.iter().map(|p| read_predictions(p)).collect::<Result<_>>()?;
    let classes = members[0][0].probs.len();
    let labels = match &args.labels {
        Some(l) => Some(load_dataset(l, classes)?.samples),
        None => None,
    };
    let mse_weight = config.train.mse_weight;

    let (weights, fused) = if args.search {
        let labels = labels.as_deref().ok_or_else(|| Error::config("--search needs --labels"))?;
        let step = args.step.unwrap_or(config.ensemble.step);
        let found = search_weights(&members, labels, step, mse_weight)?;
        log::info!("searched {} weight candidates", found.candidates);
        let fused = fuse_predictions(&members, &found.weights)?;
        (found.weights, fused)
    } else {
        let w = args.weights.clone().ok_or_else(|| Error::config("fuse needs --weights or --search"))?;
        let fused = fuse_predictions(&members, &w)?;
        (w, fused)
    };
    let shown: Vec<String> = weights.iter().map(|k| format!("{k:.4}")).collect();
    println!("weights={}", shown.join(","));
    if let Some(labels) = &labels {
        print_report(&score_records(&fused, labels, mse_weight)?, None)?;
    }
    if let Some(out) = &args.out {
        write_predictions(out, &fused)?;
    }
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>, dim: Option<usize>, classes: Option<usize>, seed: Option<u64>) -> Result<()> {
    if let Some(c) = config {
        require_file(c, "config")?;
    }
    let spec = load_run_config(config)?.gradcheck;
    let suite = GradCheckSuite {
        dim: dim.unwrap_or(spec.dim),
        classes: classes.unwrap_or(spec.classes),
        seed: seed.unwrap_or(spec.seed),
        ..GradCheckSuite::default()
    };
    if suite.dim == 0 || suite.classes < 2 {
        return Err(Error::config("gradcheck needs dim >= 1 and classes >= 2"));
    }
    let mut all = true;
    for check in suite.run_all()? {
        let ok = check.report.passed();
        all &= ok;
        println!(
            "{:<40} max rel err {:.3e} {}",
            check.label(),
            check.report.max_rel_error(),
            if ok { "ok" } else { "FAILED" }
        );
    }
    if all {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Error::Numeric(format!(
            "gradient check exceeded tolerance {:.0e}",
            suite.config.tol
        )))
    }
}
