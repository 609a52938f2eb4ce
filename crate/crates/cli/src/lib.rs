//! Command-line driver: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Commands that
//! produce files write them under `--runs-dir/<manifest hash>/`; report
//! commands only print, as a table or as JSON (`--format json`).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
pub mod manifest;
mod output;

pub use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<stancekit::Error> for CliError {
    fn from(e: stancekit::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<stancekit_service::ServiceError> for CliError {
    fn from(e: stancekit_service::ServiceError) -> Self {
        CliError::Data(e.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    #[value(alias = "structured")]
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "stancekit", version, about = "Active-learning stance classification and corpus-shift analytics")]
pub struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Seed shared by every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Use 1 for byte-identical reruns.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Root for run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SliceArgs {
    /// Before slice, START:END (inclusive dates).
    #[arg(long)]
    pub before: Option<String>,
    /// After slice, START:END (inclusive dates).
    #[arg(long)]
    pub after: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StopArgs {
    /// Stop-word file, one word per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Add the built-in Persian baseline stop words.
    #[arg(long)]
    pub persian_stopwords: bool,
    /// N-grams to drop, one per line.
    #[arg(long)]
    pub denylist: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeatureArgs {
    #[arg(long, default_value_t = 18)]
    pub hash_bits: u32,
    /// Drop the hashed n-gram block.
    #[arg(long)]
    pub no_hashed: bool,
    /// Append the mean document embedding (needs --embedding).
    #[arg(long)]
    pub doc_embedding: bool,
    #[arg(long)]
    pub embedding: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub no_class_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageArg {
    Seed,
    Certainty,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityArg {
    Day,
    Week,
    Month,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Read raw line-delimited JSON documents into a clean corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// Language tag to keep, or `any`.
        #[arg(long, default_value = "fa")]
        language: String,
        #[arg(long)]
        from: Option<chrono::NaiveDate>,
        #[arg(long)]
        to: Option<chrono::NaiveDate>,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Keep documents matching any rule of a TOML rule set.
    Filter {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        rules: PathBuf,
    },
    /// Split a corpus into before and after slices.
    Slice {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        before: String,
        #[arg(long)]
        after: String,
    },
    /// Keep documents containing a phrase.
    PhraseFilter {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        phrase: String,
    },
    /// Most frequent n-grams.
    Ngrams {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        top: usize,
        #[command(flatten)]
        stop: StopArgs,
    },
    /// N-grams whose relative frequency moved most between two corpora.
    Movers {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[command(flatten)]
        stop: StopArgs,
    },
    /// Hashtags whose relative frequency moved most between two corpora.
    HashtagMovers {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Train subword word embeddings on a corpus.
    TrainEmbed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 5)]
        min_count: u64,
        #[arg(long, default_value_t = 3)]
        min_n: usize,
        #[arg(long, default_value_t = 6)]
        max_n: usize,
        #[arg(long, default_value_t = 2_000_000)]
        buckets: usize,
    },
    /// Mean embedding vector per document.
    EmbedDocs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Share of documents closest to each reference line.
    MatchLines {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        /// Reference lines, one per line.
        #[arg(long)]
        lines: PathBuf,
    },
    /// Uniform sample without replacement.
    SampleRandom {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        slices: SliceArgs,
        /// Files of document ids to exclude, one id per line.
        #[arg(long)]
        exclude: Vec<PathBuf>,
        #[arg(long)]
        lenient: bool,
    },
    /// Nearest neighbours of annotator exemplars.
    SampleGuided {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        /// Exemplars as JSON lines: annotator_id, text, intended_label.
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long, default_value_t = 25)]
        k: usize,
        #[command(flatten)]
        slices: SliceArgs,
        #[arg(long)]
        exclude: Vec<PathBuf>,
    },
    /// Most confident positive and negative predictions.
    SampleCertainty {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 750)]
        n_positive: usize,
        #[arg(long, default_value_t = 750)]
        n_negative: usize,
        #[arg(long)]
        exclude: Vec<PathBuf>,
    },
    /// Predictions with the smallest top-two margin.
    SampleMargin {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 1500)]
        n: usize,
        #[arg(long)]
        exclude: Vec<PathBuf>,
    },
    /// Cohen's kappa between two label files.
    Kappa {
        /// One label per line, or DOC_ID<TAB>LABEL.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Aggregate annotation records into training labels.
    Resolve {
        #[arg(long)]
        annotations: PathBuf,
        /// Restrict to these document ids, one per line.
        #[arg(long)]
        docs: Option<PathBuf>,
    },
    /// Train the stance classifier on resolved labels.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Resolved label files (JSON lines from `resolve`).
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        /// Warm-start from this model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StageArg::Seed)]
        stage: StageArg,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Held-out precision, recall and F1 averaged over training runs.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "train-labels", required = true)]
        train_labels: Vec<PathBuf>,
        #[arg(long = "test-labels", required = true)]
        test_labels: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Positive vs not-positive.
        #[arg(long)]
        binary: bool,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a corpus with a saved model.
    Infer {
        #[arg(long)]
        corpus: PathBuf,
        /// Model to apply; any stage's model may be chosen.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Stance shares per period, with before/after ratios when slices are given.
    Timeseries {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = GranularityArg::Month)]
        granularity: GranularityArg,
        #[command(flatten)]
        slices: SliceArgs,
    },
    /// Account-creation month histogram of a corpus's authors.
    CreationHist {
        #[arg(long)]
        corpus: PathBuf,
        /// Restrict to these author ids, one per line.
        #[arg(long)]
        authors: Option<PathBuf>,
    },
    /// KL and Bhattacharyya divergence of creation-month distributions.
    Divergence {
        /// Corpora whose authors form the compared sets.
        #[arg(long, required = true)]
        set: Vec<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
        /// Compute D(baseline||set) instead of D(set||baseline).
        #[arg(long)]
        reverse: bool,
        #[arg(long, default_value_t = stancekit::analysis::KL_EPSILON)]
        epsilon: f64,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// End-to-end active-learning run on synthetic data.
    SynthBench {
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Override the synthetic corpus size.
        #[arg(long)]
        docs: Option<usize>,
        /// Override training runs averaged per stage.
        #[arg(long)]
        runs: Option<usize>,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => commands::dispatch(&cli),
    };
    match result {
        Ok(outcome) => {
            let text = match cli.format {
                Format::Table => outcome.table,
                Format::Json => serde_json::to_string_pretty(&outcome.json).expect("reports serialize") + "\n",
            };
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
