//! `comfort` command-line driver.

mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use comfort::datapipe::blob::write_atomic;
use comfort::datapipe::{
    load_dataset, load_sequences, preprocess, save_dataset, Dataset, PreprocessConfig, SplitDataset,
};
use comfort::encoder::{load_weights, save_weights, EncoderConfig, EncoderWeights, PositionalKind};
use comfort::library::{memory_report, AdapterLibrary};
use comfort::numerics::{argmax, Matrix};
use comfort::peft::AdapterSpec;
use comfort::synth::{
    gmm_fit, healthy_corpus, make_synthetic_task, reference_healthy_model, GmmModel, SyntheticTaskSpec,
    DEFAULT_COMPONENTS,
};
use comfort::trainer::{finetune, log_text, predict_proba, pretrain, LossScope, StrategyRegistry, TrainConfig};

use manifest::{manifest_path, RunRecorder};

const GMM_FILE: &str = "gmm.toml";

#[derive(Parser, Debug)]
#[command(name = "comfort", version, about = "Health foundation model with a continual adapter library")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Window, split, scale, project and clean a raw recording manifest.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        pca_dim: usize,
        #[arg(long)]
        no_clean: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate synthetic corpora and tasks.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Pre-train the foundation encoder by masked data modeling.
    Pretrain {
        /// Dataset directory; every split is used as unlabelled corpus.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        stop_loss: Option<f64>,
        #[arg(long, value_enum, default_value_t = Positional::Sinusoidal)]
        positional: Positional,
        #[arg(long, value_enum)]
        loss_scope: Option<Scope>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune one task and store its bundle in the library.
    Finetune {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        lib: PathBuf,
        /// Library key; defaults to the dataset name.
        #[arg(long = "task")]
        task_id: Option<String>,
        /// Replace an existing entry.
        #[arg(long)]
        overwrite: bool,
    },
    /// Classify sequences with a stored task bundle.
    Detect {
        #[arg(long)]
        w0: PathBuf,
        #[arg(long)]
        lib: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect or edit an adapter library.
    Library {
        #[command(subcommand)]
        action: LibraryCommand,
    },
    /// Memory breakdown of a library against per-task models.
    ReportMemory {
        #[arg(long)]
        w0: PathBuf,
        #[arg(long)]
        lib: PathBuf,
        /// Also project totals for 1..=N tasks.
        #[arg(long)]
        project: Option<usize>,
    },
    /// Accuracy across ranks or training-data fractions.
    Sweep {
        #[arg(value_enum)]
        axis: SweepAxis,
        /// Comma list (`1,2,4`) or range (`0.1..1.0`, step 0.1, or `a..b:step`).
        #[arg(long)]
        values: String,
        #[command(flatten)]
        task: TaskArgs,
        /// Write the table here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Unlabelled healthy corpus sampled from a Gaussian mixture.
    Corpus {
        /// Instances (one-second tokens) to draw.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fit the mixture to this dataset's train split instead of using the
        /// reference model.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Labelled task: class 0 healthy, the others shifted by `sep` standard deviations.
    Task {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        sep: f64,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        out: PathBuf,
        /// Mixture file written by `synth corpus`; defaults to the reference model.
        #[arg(long)]
        healthy: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        task: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum LibraryCommand {
    List {
        #[arg(long)]
        lib: PathBuf,
    },
    Remove {
        #[arg(long)]
        lib: PathBuf,
        #[arg(long)]
        task: String,
    },
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct TaskArgs {
    #[arg(long)]
    w0: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "lora")]
    method: String,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3)]
    chain: usize,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Positional {
    Sinusoidal,
    Learned,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Scope {
    Masked,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum SweepAxis {
    Rank,
    Fraction,
}

/// Failure with its exit code: 1 usage, 2 data or format, 3 numeric.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(comfort::Error),
}

impl From<comfort::Error> for Failure {
    fn from(e: comfort::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(comfort::Error::Numeric(_)) => 3,
            Failure::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            1 => "usage",
            3 => "numeric",
            _ => "data",
        }
    }

    fn reason(&self) -> String {
        let s = match self {
            Failure::Usage(s) => s.clone(),
            Failure::Core(e) => e.to_string(),
        };
        s.replace('\n', " ")
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error\tusage\t{first}");
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error\t{}\t{}", f.kind(), f.reason());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Preprocess {
            input,
            out,
            pca_dim,
            no_clean,
            seed,
        } => cmd_preprocess(&input, &out, pca_dim, !no_clean, seed),
        Command::Synth(s) => cmd_synth(s),
        Command::Pretrain {
            data,
            out,
            epochs,
            stop_loss,
            positional,
            loss_scope,
            train,
        } => cmd_pretrain(&data, &out, epochs, stop_loss, positional, loss_scope, &train),
        Command::Finetune {
            task,
            lib,
            task_id,
            overwrite,
        } => cmd_finetune(&task, &lib, task_id, overwrite),
        Command::Detect {
            w0,
            lib,
            task,
            input,
            out,
        } => cmd_detect(&w0, &lib, &task, &input, &out),
        Command::Library { action } => cmd_library(action),
        Command::ReportMemory { w0, lib, project } => cmd_report_memory(&w0, &lib, project),
        Command::Sweep {
            axis,
            values,
            task,
            out,
        } => cmd_sweep(axis, &values, &task, out.as_deref()),
    }
}

fn cmd_preprocess(input: &Path, out: &Path, pca_dim: usize, clean: bool, seed: u64) -> CliResult<()> {
    let config = PreprocessConfig {
        pca_dim,
        clean,
        seed,
        ..PreprocessConfig::default()
    };
    let mut rec = RunRecorder::new("preprocess", seed);
    rec.input(input).output(out).config("preprocess", &config);
    let ds = preprocess(input, &config)?;
    save_dataset(out, &ds)?;
    rec.write(&manifest_path(out, true))?;
    println!(
        "{}: {} features, train {} validation {} test {}",
        ds.name,
        ds.features(),
        ds.splits.train.len(),
        ds.splits.validation.len(),
        ds.splits.test.len()
    );
    Ok(())
}

fn cmd_synth(cmd: SynthCommand) -> CliResult<()> {
    match cmd {
        SynthCommand::Corpus {
            n,
            out,
            from,
            dim,
            components,
            seed,
        } => {
            let mut rec = RunRecorder::new("synth corpus", seed);
            let model = match &from {
                Some(dir) => {
                    rec.input(dir);
                    let src = load_dataset(dir)?;
                    let healthy: Vec<Matrix> = src
                        .splits
                        .train
                        .iter()
                        .filter(|s| s.label.map_or(true, |l| l == src.healthy_class))
                        .map(|s| s.tokens.clone())
                        .collect();
                    if healthy.is_empty() {
                        return Err(comfort::Error::Validation("source has no healthy train sequences".into()).into());
                    }
                    gmm_fit(&Matrix::vstack(&healthy)?, components, seed)?
                }
                None => reference_healthy_model(dim, components, seed)?,
            };
            let corpus = healthy_corpus(&model, n, seed.wrapping_add(1))?;
            let ds = Dataset {
                name: "healthy-corpus".into(),
                task: 0,
                class_names: vec!["healthy".into()],
                healthy_class: 0,
                splits: SplitDataset {
                    train: corpus,
                    provenance: vec![format!("{n} instances from a {components}-component mixture, seed {seed}")],
                    ..SplitDataset::default()
                },
            };
            save_dataset(&out, &ds)?;
            write_toml(&out.join(GMM_FILE), &model)?;
            rec.output(&out)
                .config("instances", &(n as u64))
                .config("components", &(components as u64))
                .config("dim", &(model.dim() as u64));
            rec.write(&manifest_path(&out, true))?;
            println!("{} sequences of width {} in {}", ds.splits.train.len(), model.dim(), out.display());
        }
        SynthCommand::Task {
            classes,
            sep,
            per_class,
            out,
            healthy,
            dim,
            task,
            seed,
        } => {
            let mut rec = RunRecorder::new("synth task", seed);
            let base = match &healthy {
                Some(p) => {
                    rec.input(p);
                    read_toml::<GmmModel>(p)?
                }
                None => reference_healthy_model(dim, DEFAULT_COMPONENTS, seed)?,
            };
            let spec = SyntheticTaskSpec::separated(task, &base, classes, sep, per_class, seed)?;
            let ds = make_synthetic_task(&spec)?;
            save_dataset(&out, &ds)?;
            rec.output(&out)
                .config("classes", &(classes as u64))
                .config("sep", &sep)
                .config("per_class", &(per_class as u64))
                .config("task", &task)
                .config("nominal_bayes_accuracy", &spec.nominal_bayes_accuracy);
            rec.write(&manifest_path(&out, true))?;
            println!(
                "{}: {classes} classes, train {} validation {} test {}, nominal Bayes accuracy {:.4}",
                ds.name,
                ds.splits.train.len(),
                ds.splits.validation.len(),
                ds.splits.test.len(),
                spec.nominal_bayes_accuracy
            );
        }
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_toml::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn validated(cfg: TrainConfig) -> CliResult<TrainConfig> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_pretrain(
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    stop_loss: Option<f64>,
    positional: Positional,
    scope: Option<Scope>,
    train: &TrainArgs,
) -> CliResult<()> {
    let mut cfg = train_config(train)?;
    if let Some(e) = epochs {
        cfg.pretrain_epochs = e;
    }
    if let Some(s) = stop_loss {
        cfg.stop_loss = s;
    }
    if let Some(s) = scope {
        cfg.loss_scope = match s {
            Scope::Masked => LossScope::Masked,
            Scope::All => LossScope::All,
        };
    }
    let cfg = validated(cfg)?;
    let ds = load_dataset(data)?;
    let corpus: Vec<_> = ds.splits.splits().into_iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let encoder = EncoderConfig {
        hidden: ds.features(),
        positional: match positional {
            Positional::Sinusoidal => PositionalKind::Sinusoidal,
            Positional::Learned => PositionalKind::Learned,
        },
        ..EncoderConfig::default()
    };
    let mut rec = RunRecorder::new("pretrain", cfg.seed);
    rec.input(data).output(out).config("train", &cfg).config("encoder", &encoder);
    info!("pre-training on {} sequences", corpus.len());
    let outcome = pretrain(&cfg, encoder, &corpus)?;
    save_weights(out, &outcome.weights)?;
    let log = sibling(out, ".loss.tsv");
    write_atomic(&log, outcome.loss_log().as_bytes())?;
    rec.output(&log).config("epochs_run", &(outcome.losses.len() as u64));
    rec.write(&manifest_path(out, false))?;
    println!(
        "{} epochs, final masked loss {:.6}{}",
        outcome.losses.len(),
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        if outcome.stopped_early { " (stop loss reached)" } else { "" }
    );
    Ok(())
}

struct Prepared {
    w0: EncoderWeights,
    data: Dataset,
    spec: AdapterSpec,
    config: TrainConfig,
}

fn prepare(args: &TaskArgs, registry: &StrategyRegistry) -> CliResult<Prepared> {
    let strategy = registry.get(&args.method).map_err(|e| usage(e.to_string()))?;
    let mut cfg = train_config(&args.train)?;
    if let Some(f) = args.fraction {
        cfg.fraction = f;
    }
    if let Some(e) = args.epochs {
        cfg.finetune_epochs = e;
    }
    let spec = AdapterSpec {
        rank: args.rank,
        alpha: args.alpha,
        chain_length: args.chain,
        ..AdapterSpec::new(strategy.method())
    };
    Ok(Prepared {
        w0: load_weights(&args.w0)?.without_head(),
        data: load_dataset(&args.data)?,
        spec,
        config: validated(cfg)?,
    })
}

fn cmd_finetune(args: &TaskArgs, lib_dir: &Path, task_id: Option<String>, overwrite: bool) -> CliResult<()> {
    let registry = StrategyRegistry::default();
    let p = prepare(args, &registry)?;
    let strategy = registry.get(&args.method).map_err(|e| usage(e.to_string()))?;
    let task = task_id.unwrap_or_else(|| p.data.name.clone());
    let lib = AdapterLibrary::open(lib_dir)?;
    if !overwrite && lib.list()?.iter().any(|e| e.task == task) {
        return Err(usage(format!("task {task:?} already in the library; pass --overwrite")));
    }
    let mut rec = RunRecorder::new("finetune", p.config.seed);
    rec.input(&args.w0)
        .input(&args.data)
        .config("train", &p.config)
        .config("method", &args.method)
        .config("rank", &(p.spec.rank as u64))
        .config("alpha", &p.spec.alpha)
        .config("chain", &(p.spec.chain_length as u64))
        .config("task", &task);
    let out = finetune(&p.w0, &p.data, strategy, &p.spec, &task, &p.config)?;
    lib.add(&out.bundle, overwrite)?;
    let log = lib_dir.join(format!("{task}.log.tsv"));
    write_atomic(&log, log_text(&out.log).as_bytes())?;
    rec.output(&lib_dir.join(format!("{task}.cmfb"))).output(&log);
    rec.write(&lib_dir.join(format!("{task}.run.toml")))?;
    println!(
        "{task}: {} train sequences, best epoch {}, validation accuracy {}, test {}",
        out.train_size,
        out.best_epoch,
        out.validation_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
        out.test.summary()
    );
    Ok(())
}

fn cmd_detect(w0: &Path, lib_dir: &Path, task: &str, input: &Path, out: &Path) -> CliResult<()> {
    let w0w = load_weights(w0)?.without_head();
    let lib = AdapterLibrary::open(lib_dir)?;
    let bundle = lib.get(task)?;
    let seqs = load_sequences(input)?;
    let probs = predict_proba(&w0w, &bundle, &seqs)?;
    let names = &bundle.meta.class_names;
    let mut text = String::from("index\tclass\tname");
    for c in 0..bundle.classes() {
        let _ = write!(text, "\tp{c}");
    }
    text.push('\n');
    for i in 0..probs.rows() {
        let c = argmax(probs.row(i));
        let name = names.get(c).map_or("-", String::as_str);
        let _ = write!(text, "{i}\t{c}\t{name}");
        for p in probs.row(i) {
            let _ = write!(text, "\t{p:.6}");
        }
        text.push('\n');
    }
    let mut rec = RunRecorder::new("detect", bundle.meta.seed);
    rec.input(w0).input(lib_dir).input(input).output(out).config("task", &task);
    write_atomic(out, text.as_bytes())?;
    rec.write(&manifest_path(out, false))?;
    println!("{} sequences classified with {task}", probs.rows());
    Ok(())
}

fn cmd_library(action: LibraryCommand) -> CliResult<()> {
    match action {
        LibraryCommand::List { lib } => {
            let lib = AdapterLibrary::open(lib)?;
            println!("task\tmethod\tclasses\tstored_params\tfile");
            for e in lib.list()? {
                println!("{}\t{}\t{}\t{}\t{}", e.task, e.method, e.classes, e.stored_params, e.file);
            }
        }
        LibraryCommand::Remove { lib, task } => {
            let lib = AdapterLibrary::open(lib)?;
            let e = lib.remove(&task)?;
            let _ = std::fs::remove_file(lib.dir().join(format!("{task}.log.tsv")));
            let _ = std::fs::remove_file(lib.dir().join(format!("{task}.run.toml")));
            println!("removed {} ({})", e.task, e.method);
        }
    }
    Ok(())
}

fn cmd_report_memory(w0: &Path, lib_dir: &Path, project: Option<usize>) -> CliResult<()> {
    let w = load_weights(w0)?;
    let bundles = AdapterLibrary::open(lib_dir)?.bundles()?;
    let report = memory_report(&w, &bundles);
    print!("{}", report.to_text());
    if let Some(n) = project {
        println!("tasks\tlibrary_kib\tscratch_kib\tfull_kib");
        for k in 1..=n {
            let (l, s, f) = report.project(k)?;
            println!("{k}\t{:.1}\t{:.1}\t{:.1}", l * 4.0 / 1024.0, s * 4.0 / 1024.0, f * 4.0 / 1024.0);
        }
    }
    Ok(())
}

/// Parses `1,2,4`, `0.1..1.0` (step 0.1) or `a..b:step`.
fn parse_values(s: &str) -> CliResult<Vec<f64>> {
    let bad = || usage(format!("cannot parse sweep values {s:?}"));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((h, st)) => (h, st.trim().parse::<f64>().map_err(|_| bad())?),
            None => (rest, 0.1),
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        // Rounded to 1e-9 so 0.1 + 2·0.1 prints and compares as 0.3.
        return Ok((0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn cmd_sweep(axis: SweepAxis, values: &str, args: &TaskArgs, out: Option<&Path>) -> CliResult<()> {
    let values = parse_values(values)?;
    let registry = StrategyRegistry::default();
    let base = prepare(args, &registry)?;
    let strategy = registry.get(&args.method).map_err(|e| usage(e.to_string()))?;
    let mut table = format!("{}\taccuracy\tf1\tbest_epoch\ttrain_size\n", if axis == SweepAxis::Rank { "rank" } else { "fraction" });
    for &v in &values {
        let (mut spec, mut cfg) = (base.spec.clone(), base.config.clone());
        match axis {
            SweepAxis::Rank => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(usage(format!("rank {v} is not a positive integer")));
                }
                spec.rank = v as usize;
            }
            SweepAxis::Fraction => cfg.fraction = v,
        }
        let cfg = validated(cfg)?;
        let o = finetune(&base.w0, &base.data, strategy, &spec, &base.data.name, &cfg)?;
        let line = format!(
            "{v}\t{:.6}\t{}\t{}\t{}\n",
            o.test.accuracy,
            o.test.f1.map_or("-".into(), |f| format!("{f:.6}")),
            o.best_epoch,
            o.train_size
        );
        print!("{line}");
        table += &line;
    }
    if let Some(path) = out {
        let mut rec = RunRecorder::new("sweep", base.config.seed);
        rec.input(&args.w0)
            .input(&args.data)
            .output(path)
            .config("axis", &format!("{axis:?}").to_lowercase())
            .config("values", &values)
            .config("train", &base.config)
            .config("method", &args.method)
            .config("rank", &(base.spec.rank as u64))
            .config("alpha", &base.spec.alpha)
            .config("chain", &(base.spec.chain_length as u64));
        write_atomic(path, table.as_bytes())?;
        rec.write(&manifest_path(path, false))?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| comfort::Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| {
        Failure::Core(comfort::Error::Format {
            offset: 0,
            reason: format!("{}: {}", path.display(), e.message()),
        })
    })
}

fn write_toml<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| comfort::Error::Validation(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
