use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eeggraph::dataio::{
    generate_synthetic, load_features, load_raw, save_features, slice_epochs, subjects, DataError, SyntheticSpec,
};
use eeggraph::features::extract_features;
use eeggraph::graph::{adjacency_from_epochs, save_adjacency, GraphError};
use eeggraph::model::{save_checkpoint, ModelError};
use eeggraph::report::{
    aggregate_line, emit_confusion, fold_line, load_results, load_sweep, save_loss_traces, save_results, save_sweep,
    ReportError,
};
use eeggraph::train::{loso, sweep, train_fold, LosoSummary, SweepGrid, TrainConfig, TrainError, Variant};
use eeggraph::{Epoch, FeatureSample};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;

/// Graph-based cross-subject EEG emotion recognition.
#[derive(Parser, Debug)]
#[command(name = "eeggraph", version, about)]
struct Cli {
    /// Worker threads for fold-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a directory of raw recordings (one CSV per subject) into a feature file.
    Featurize {
        raw_dir: PathBuf,
        out_file: PathBuf,
        #[arg(long, default_value_t = eeggraph::graph::DEFAULT_BINS)]
        bins: usize,
        /// Sampling rate of the raw recordings in Hz.
        #[arg(long, default_value_t = 128.0)]
        rate: f64,
        /// Also write the mutual-information adjacency of all epochs to this file.
        #[arg(long)]
        adjacency: Option<PathBuf>,
    },
    /// Train on every subject but one and evaluate on the held-out subject.
    Train {
        features_file: PathBuf,
        cfg_file: PathBuf,
        out_dir: PathBuf,
        /// Subject to hold out; defaults to the last subject in the file.
        #[arg(long)]
        holdout: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Leave-one-subject-out evaluation.
    Loso {
        features_file: PathBuf,
        cfg_file: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Leave-one-subject-out evaluation over a lambda/alpha grid.
    Sweep {
        features_file: PathBuf,
        grid_file: PathBuf,
        out_dir: PathBuf,
        /// Base configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a synthetic feature file from a generator spec.
    Synth { spec_file: PathBuf, out_file: PathBuf },
    /// Print the pooled confusion matrix and summary of a results directory.
    Report { results_dir: PathBuf },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    bins: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.bins {
            cfg.bins = v;
        }
    }
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Invalid(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Invalid(_) => EXIT_INVALID,
        }
    }

    fn invalid(context: impl Display, e: impl Display) -> Self {
        Failure::Invalid(format!("{context}: {e}"))
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let cfg = TrainConfig::parse(&read_text(p)?).map_err(|e| Failure::invalid(p.display(), e))?;
            cfg.validate().map_err(|e| Failure::invalid(p.display(), e))?;
            cfg
        }
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()
        .map_err(|e| Failure::invalid("command-line flags", e))?;
    Ok(cfg)
}

fn print_summary(summary: &LosoSummary) {
    for f in &summary.folds {
        println!("{}", fold_line(f));
    }
    println!(
        "{}",
        aggregate_line(summary.mean_accuracy, summary.std_accuracy, summary.mean_epochs)
    );
}

fn featurize(raw_dir: &Path, out_file: &Path, bins: usize, rate: f64, adjacency: Option<&Path>) -> Outcome {
    if bins < 2 {
        return Err(Failure::Invalid(format!("--bins: need at least 2, got {bins}")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Failure::Invalid(format!("--rate: must be positive, got {rate}")));
    }
    let entries = fs::read_dir(raw_dir).map_err(|e| Failure::Io(format!("{}: {e}", raw_dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Invalid(format!("{}: no .csv recordings", raw_dir.display())));
    }
    let mut samples: Vec<FeatureSample> = Vec::new();
    let mut all_epochs: Vec<Epoch> = Vec::new();
    for file in &files {
        let rec = load_raw::<f64>(file, rate)?;
        let epochs = slice_epochs(&rec)?;
        println!("{}: {} epochs", file.display(), epochs.len());
        for epoch in &epochs {
            samples.push(extract_features(epoch, rate).map_err(|e| Failure::invalid(file.display(), e))?);
        }
        if adjacency.is_some() {
            all_epochs.extend(epochs);
        }
    }
    let adj = match adjacency {
        Some(_) => Some(adjacency_from_epochs(&all_epochs, rate, bins)?),
        None => None,
    };
    save_features(out_file, &samples)?;
    if let (Some(path), Some(adj)) = (adjacency, adj) {
        save_adjacency(path, &adj)?;
    }
    println!("samples={} subjects={}", samples.len(), subjects(&samples).len());
    Ok(())
}

fn train(features: &Path, cfg_file: &Path, out_dir: &Path, holdout: Option<&str>, overrides: &Overrides) -> Outcome {
    let cfg = load_config(Some(cfg_file), overrides)?;
    let samples = load_features::<f64>(features)?;
    let ids = subjects(&samples);
    let held_out = match holdout {
        Some(h) if ids.iter().any(|s| s == h) => h.to_string(),
        Some(h) => return Err(Failure::Invalid(format!("--holdout: subject `{h}` not in {}", features.display()))),
        None => ids
            .last()
            .cloned()
            .ok_or_else(|| Failure::Invalid(format!("{}: no samples", features.display())))?,
    };
    let (test, train): (Vec<FeatureSample>, Vec<FeatureSample>) =
        samples.into_iter().partition(|s| s.subject_id == held_out);
    let (params, report) = train_fold(&train, &test, &cfg)?;
    create_dir(out_dir)?;
    save_checkpoint(&out_dir.join("checkpoint.txt"), &params)?;
    let folds = [report];
    save_results(&out_dir.join("results.csv"), &folds)?;
    save_loss_traces(&out_dir.join("loss.csv"), &folds)?;
    write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    print_summary(&LosoSummary::from_folds(folds.to_vec()));
    Ok(())
}

fn run_loso(features: &Path, cfg_file: &Path, out_dir: &Path, overrides: &Overrides) -> Outcome {
    let cfg = load_config(Some(cfg_file), overrides)?;
    let samples = load_features::<f64>(features)?;
    let summary = loso(&samples, &cfg)?;
    create_dir(out_dir)?;
    save_results(&out_dir.join("results.csv"), &summary.folds)?;
    save_loss_traces(&out_dir.join("loss.csv"), &summary.folds)?;
    write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    write_text(&out_dir.join("confusion.txt"), &emit_confusion(&summary.folds)?.to_string())?;
    print_summary(&summary);
    Ok(())
}

fn run_sweep(features: &Path, grid_file: &Path, out_dir: &Path, config: Option<&Path>, overrides: &Overrides) -> Outcome {
    let cfg = load_config(config, overrides)?;
    let grid = SweepGrid::parse(&read_text(grid_file)?).map_err(|e| Failure::invalid(grid_file.display(), e))?;
    if grid.lambdas.is_empty() || grid.alphas.is_empty() {
        return Err(Failure::Invalid(format!("{}: empty grid", grid_file.display())));
    }
    let samples = load_features::<f64>(features)?;
    let rows = sweep(&grid, &samples, &cfg)?;
    create_dir(out_dir)?;
    save_sweep(&out_dir.join("sweep.csv"), &rows)?;
    write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    for r in &rows {
        println!(
            "lambda={} alpha={} {}",
            r.lambda,
            r.alpha,
            aggregate_line(r.mean_accuracy, r.std_accuracy, r.summary.mean_epochs)
        );
    }
    Ok(())
}

fn synth(spec_file: &Path, out_file: &Path) -> Outcome {
    let spec = SyntheticSpec::parse(&read_text(spec_file)?).map_err(|e| Failure::invalid(spec_file.display(), e))?;
    let samples = generate_synthetic::<f64>(&spec)?;
    save_features(out_file, &samples)?;
    println!("samples={} subjects={}", samples.len(), spec.n_subjects);
    Ok(())
}

fn report(results_dir: &Path) -> Outcome {
    let results = results_dir.join("results.csv");
    let sweep_file = results_dir.join("sweep.csv");
    if !results.exists() && !sweep_file.exists() {
        return Err(Failure::Io(format!(
            "{}: neither results.csv nor sweep.csv found",
            results_dir.display()
        )));
    }
    if results.exists() {
        let folds = load_results(&results)?;
        let table = emit_confusion(&folds).map_err(|e| Failure::invalid(results.display(), e))?;
        print!("{table}");
        let summary = LosoSummary::from_folds(folds);
        print_summary(&summary);
    }
    if sweep_file.exists() {
        println!("lambda,alpha,mean_acc,std_acc");
        for [lambda, alpha, mean, std] in load_sweep(&sweep_file)? {
            println!("{lambda},{alpha},{:.2},{:.2}", 100.0 * mean, 100.0 * std);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs: must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("error: --jobs: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = match &cli.command {
        Command::Featurize {
            raw_dir,
            out_file,
            bins,
            rate,
            adjacency,
        } => featurize(raw_dir, out_file, *bins, *rate, adjacency.as_deref()),
        Command::Train {
            features_file,
            cfg_file,
            out_dir,
            holdout,
            overrides,
        } => train(features_file, cfg_file, out_dir, holdout.as_deref(), overrides),
        Command::Loso {
            features_file,
            cfg_file,
            out_dir,
            overrides,
        } => run_loso(features_file, cfg_file, out_dir, overrides),
        Command::Sweep {
            features_file,
            grid_file,
            out_dir,
            config,
            overrides,
        } => run_sweep(features_file, grid_file, out_dir, config.as_deref(), overrides),
        Command::Synth { spec_file, out_file } => synth(spec_file, out_file),
        Command::Report { results_dir } => report(results_dir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Failure::Io(m) | Failure::Invalid(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
