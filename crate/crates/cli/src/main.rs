//! Command-line driver for the sparse-lifting pipeline.
//!
//! One subcommand per pipeline stage:
//!
//! * `lift` — train a non-negative factor pair on a dense embedding and
//!   save it as a binary checkpoint (plus a `.vocab` sidecar).
//! * `binarize` — turn a checkpoint into the sparse binary lifting
//!   matrix text format.
//! * `encode` — encode labelled sentences against a lifting matrix and
//!   print SVMlight lines.
//! * `neighbors` — nearest words by shared active dimensions.
//! * `eval` — k-NN cross-validation of a labelled sentence dataset.
//! * `inspect` — structural summary of a lifting matrix, or the word
//!   list of one dimension.
//!
//! Results go to standard output as tab-separated text. Every successful
//! run also emits a JSON manifest recording the resolved parameters:
//! commands that write an output file place it next to that file as
//! `<out>.manifest.json`, commands that print to standard output send the
//! manifest to standard error as a single line.
//!
//! Exit codes: 0 success, 1 usage or validation problem, 2 numerical
//! failure. Worker parallelism is capped with `--threads` (or the
//! `SPLIFT_THREADS` environment variable; 0 means automatic).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use splift_core::eval::{
    cross_validate_dataset, dimension_report, lifting_summary, load_dataset, nearest_words,
};
use splift_core::lift::train;
use splift_core::sparse::{encode_sentence, read_lifting, write_lifting, write_svmlight_line};
use splift_core::{
    AlphaSchedule, Checkpoint, DenseEmbedding, EmbeddingFormat, Error, NlsConfig, Result,
    TrainConfig, Vocabulary,
};

#[derive(Parser)]
#[command(
    name = "splift",
    version,
    about = "Sparse binary lifting of dense word embeddings",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    /// Falls back to the SPLIFT_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a factor pair on a dense embedding and write a checkpoint.
    Lift {
        /// Dense embedding text file.
        #[arg(long)]
        input: PathBuf,
        /// Input format: "glove" (no header) or "word2vec" (count header).
        #[arg(long, default_value = "glove")]
        format: String,
        /// Lifted dimension d'.
        #[arg(long, default_value_t = 1000)]
        dim: usize,
        /// Output checkpoint path; also writes `<out>.vocab` and
        /// `<out>.manifest.json` sidecars.
        #[arg(long)]
        out: PathBuf,
        /// Keep only the most frequent N words (embedding files order
        /// words by descending frequency).
        #[arg(long)]
        top_words: Option<usize>,
        /// Initial coupling weight α.
        #[arg(long, default_value_t = 1.0)]
        alpha_init: f64,
        /// Multiplier applied to α whenever the factors stall apart.
        #[arg(long, default_value_t = 10.0)]
        alpha_growth: f64,
        /// Relative factor distance ‖W−H‖/‖H‖ that counts as converged.
        #[arg(long, default_value_t = 1e-2)]
        closeness: f64,
        /// Relative objective change that ends one α stage.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Total H-update budget across all α stages.
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        /// Seed for the factor initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Binarize a trained checkpoint into the lifting-matrix text format.
    Binarize {
        /// Checkpoint written by `lift` (expects `<factors>.vocab` beside it).
        #[arg(long)]
        factors: PathBuf,
        /// Hash length: average active dimensions per word.
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Output lifting matrix path; also writes `<out>.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode labelled sentences as SVMlight lines on standard output.
    Encode {
        /// Lifting matrix file written by `binarize`.
        #[arg(long)]
        lifting: PathBuf,
        /// Sentence file, one `<label><TAB><sentence>` per line.
        #[arg(long)]
        sentences: PathBuf,
    },
    /// Print the words most similar to a query word.
    Neighbors {
        /// Lifting matrix file written by `binarize`.
        #[arg(long)]
        lifting: PathBuf,
        /// Query word (matched after token normalization).
        #[arg(long)]
        word: String,
        /// How many neighbors to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Cross-validate a k-NN classifier on a labelled sentence dataset.
    Eval {
        /// Lifting matrix file written by `binarize`.
        #[arg(long)]
        lifting: PathBuf,
        /// Dataset file, one `<label><TAB><sentence>` per line.
        #[arg(long)]
        dataset: PathBuf,
        /// Number of cross-validation folds.
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Neighbors consulted per query.
        #[arg(long, default_value_t = 1)]
        knn: usize,
        /// Seed for the fold shuffle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a lifting matrix, or list the words on one dimension.
    Inspect {
        /// Lifting matrix file written by `binarize`.
        #[arg(long)]
        lifting: PathBuf,
        /// Report the words whose vectors activate this dimension
        /// instead of the overall summary.
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Numerical { .. } => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Lift {
            input,
            format,
            dim,
            out,
            top_words,
            alpha_init,
            alpha_growth,
            closeness,
            tol,
            max_iter,
            seed,
        } => cmd_lift(
            &input,
            &format,
            dim,
            &out,
            top_words,
            alpha_init,
            alpha_growth,
            closeness,
            tol,
            max_iter,
            seed,
        ),
        Command::Binarize { factors, k, out } => cmd_binarize(&factors, k, &out),
        Command::Encode { lifting, sentences } => cmd_encode(&lifting, &sentences),
        Command::Neighbors { lifting, word, top } => cmd_neighbors(&lifting, &word, top),
        Command::Eval { lifting, dataset, folds, knn, seed } => {
            cmd_eval(&lifting, &dataset, folds, knn, seed)
        }
        Command::Inspect { lifting, dim } => cmd_inspect(&lifting, dim),
    }
}

/// Resolve the worker-thread cap: explicit flag first, then the
/// SPLIFT_THREADS environment variable, then automatic. A positive cap
/// fixes the global worker pool size; 0 keeps the default (one per core).
fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SPLIFT_THREADS") {
            Ok(raw) => raw.parse::<usize>().map_err(|_| {
                Error::Validation(format!(
                    "SPLIFT_THREADS must be a non-negative integer, got {raw:?}"
                ))
            })?,
            Err(_) => 0,
        },
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("could not size the thread pool: {e}")))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lift(
    input: &Path,
    format: &str,
    dim: usize,
    out: &Path,
    top_words: Option<usize>,
    alpha_init: f64,
    alpha_growth: f64,
    closeness: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let format = EmbeddingFormat::from_name(format)?;
    let mut emb = DenseEmbedding::parse_text(BufReader::new(File::open(input)?), format)?;
    if let Some(n) = top_words {
        emb = emb.take_top_rows(n)?;
    }
    let emb = emb.zero_center();

    let schedule = AlphaSchedule {
        initial: alpha_init,
        growth_factor: alpha_growth,
        closeness_threshold: closeness,
        ..AlphaSchedule::default()
    };
    let config = TrainConfig {
        lifted_dimension: dim,
        outer_tolerance: tol,
        max_outer_iterations: max_iter,
        seed,
        nls: NlsConfig::default(),
    };
    let (factors, report) = train(&emb, &schedule, &config)?;
    if !report.converged {
        eprintln!(
            "warning: stopped before the closeness threshold \
             (final ‖W−H‖/‖H‖ = {:.3e})",
            report.final_closeness
        );
    }

    let checkpoint = Checkpoint {
        factors,
        alpha: report.final_alpha,
        iterations: report.iterations_used as u64,
    };
    write_to_file(out, |w| checkpoint.write(w))?;
    write_to_file(&sidecar(out, "vocab"), |w| {
        for word in emb.vocab().words() {
            writeln!(w, "{word}")?;
        }
        Ok(())
    })?;

    let mut table = String::new();
    for (key, value) in [
        ("words", emb.n_words().to_string()),
        ("input_dimension", emb.dim().to_string()),
        ("lifted_dimension", dim.to_string()),
        ("iterations", report.iterations_used.to_string()),
        ("final_alpha", format!("{:e}", report.final_alpha)),
        ("final_closeness", format!("{:.6e}", report.final_closeness)),
        ("relative_gram_error", format!("{:.6e}", report.relative_gram_error)),
        ("converged", report.converged.to_string()),
    ] {
        table.push_str(&format!("{key}\t{value}\n"));
    }
    print!("{table}");

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "lift",
        "parameters": {
            "format": format_name(format),
            "lifted_dimension": dim,
            "top_words": top_words,
            "alpha_init": schedule.initial,
            "alpha_growth": schedule.growth_factor,
            "closeness": schedule.closeness_threshold,
            "alpha_max": schedule.max_alpha,
            "tol": config.outer_tolerance,
            "max_iter": config.max_outer_iterations,
            "seed": seed,
            "nls_max_iterations": config.nls.max_iterations,
            "nls_tolerance": config.nls.tolerance,
            "nls_step_shrink": config.nls.step_shrink,
            "nls_sufficient_decrease": config.nls.sufficient_decrease,
        },
        "inputs": { "embedding": input.display().to_string() },
        "outputs": {
            "checkpoint": out.display().to_string(),
            "vocabulary": sidecar(out, "vocab").display().to_string(),
        },
        "result": {
            "words": emb.n_words(),
            "iterations": report.iterations_used,
            "final_alpha": report.final_alpha,
            "final_closeness": report.final_closeness,
            "relative_gram_error": report.relative_gram_error,
            "converged": report.converged,
        },
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(Some(out), &manifest)
}

fn cmd_binarize(factors: &Path, k: usize, out: &Path) -> Result<()> {
    let started = Instant::now();
    let checkpoint = Checkpoint::read(BufReader::new(File::open(factors)?))?;
    let vocab_path = sidecar(factors, "vocab");
    let vocab = read_vocab(&vocab_path)?;

    let z = splift_core::sparse::binarize(checkpoint.factors.h(), k)?;
    write_to_file(out, |w| write_lifting(&z, &vocab, w))?;

    let summary = lifting_summary(&z);
    print!(
        "words\t{}\ndimension\t{}\nhash_length\t{}\ntotal_active\t{}\nempty_words\t{}\n",
        summary.n_words,
        summary.dimension,
        summary.hash_length,
        summary.total_active,
        summary.empty_words
    );

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "binarize",
        "parameters": { "k": k },
        "inputs": {
            "checkpoint": factors.display().to_string(),
            "vocabulary": vocab_path.display().to_string(),
        },
        "outputs": { "lifting": out.display().to_string() },
        "result": {
            "words": summary.n_words,
            "dimension": summary.dimension,
            "total_active": summary.total_active,
            "empty_words": summary.empty_words,
            "used_dimensions": summary.used_dimensions,
        },
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(Some(out), &manifest)
}

fn cmd_encode(lifting: &Path, sentences: &Path) -> Result<()> {
    let started = Instant::now();
    let (z, vocab) = read_lifting(BufReader::new(File::open(lifting)?))?;
    let lines = read_labelled_lines(sentences)?;

    let mut vectors = Vec::with_capacity(lines.len());
    for (label, sentence) in &lines {
        vectors.push((label.as_str(), encode_sentence(sentence.split_whitespace(), &z, &vocab)?));
    }
    let mapping = label_mapping(vectors.iter().map(|(label, _)| *label));

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (label, v) in &vectors {
        write_svmlight_line(&mut out, mapping.apply(label), v)?;
    }
    out.flush()?;

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "encode",
        "parameters": {},
        "inputs": {
            "lifting": lifting.display().to_string(),
            "sentences": sentences.display().to_string(),
        },
        "result": {
            "sentences": vectors.len(),
            "label_mapping": mapping.as_json(),
        },
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(None, &manifest)
}

fn cmd_neighbors(lifting: &Path, word: &str, top: usize) -> Result<()> {
    let started = Instant::now();
    let (z, vocab) = read_lifting(BufReader::new(File::open(lifting)?))?;
    let ranked = nearest_words(&z, &vocab, word, top)?;

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (rank, (neighbor, shared)) in ranked.iter().enumerate() {
        writeln!(out, "{}\t{neighbor}\t{shared}", rank + 1)?;
    }
    out.flush()?;

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "neighbors",
        "parameters": { "word": word, "top": top },
        "inputs": { "lifting": lifting.display().to_string() },
        "result": { "returned": ranked.len() },
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(None, &manifest)
}

fn cmd_eval(lifting: &Path, dataset: &Path, folds: usize, knn: usize, seed: u64) -> Result<()> {
    let started = Instant::now();
    let (z, vocab) = read_lifting(BufReader::new(File::open(lifting)?))?;
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let ds = load_dataset(BufReader::new(File::open(dataset)?))?.with_name(name);
    let cv = cross_validate_dataset(&ds, &z, &vocab, folds, knn, seed)?;
    if !cv.stratified {
        eprintln!(
            "warning: a class has fewer than {folds} members; folds are shuffled, not stratified"
        );
    }

    // Per-fold timings go to the manifest, not stdout: the table below is
    // byte-identical across same-seed runs, wall clock never is.
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "fold\taccuracy")?;
    for (f, acc) in cv.fold_accuracies.iter().enumerate() {
        writeln!(out, "{f}\t{acc:.6}")?;
    }
    writeln!(out, "mean\t{:.6}", cv.mean_accuracy)?;
    out.flush()?;

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "eval",
        "parameters": { "folds": folds, "knn": knn, "seed": seed },
        "inputs": {
            "lifting": lifting.display().to_string(),
            "dataset": dataset.display().to_string(),
        },
        "result": {
            "dataset": ds.name(),
            "items": ds.len(),
            "classes": ds.classes().len(),
            "stratified": cv.stratified,
            "mean_accuracy": cv.mean_accuracy,
            "fold_accuracies": cv.fold_accuracies,
            "per_fold_query_seconds": cv.per_fold_query_seconds,
        },
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(None, &manifest)
}

fn cmd_inspect(lifting: &Path, dim: Option<usize>) -> Result<()> {
    let started = Instant::now();
    let (z, vocab) = read_lifting(BufReader::new(File::open(lifting)?))?;

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let detail = match dim {
        Some(d) => {
            let words = dimension_report(&z, &vocab, d)?;
            for word in &words {
                writeln!(out, "{word}")?;
            }
            json!({ "dim": d, "words_on_dimension": words.len() })
        }
        None => {
            let s = lifting_summary(&z);
            for (key, value) in [
                ("n_words", s.n_words),
                ("dimension", s.dimension),
                ("hash_length", s.hash_length),
                ("total_active", s.total_active),
                ("empty_words", s.empty_words),
                ("used_dimensions", s.used_dimensions),
                ("min_word_nnz", s.min_word_nnz),
                ("max_word_nnz", s.max_word_nnz),
            ] {
                writeln!(out, "{key}\t{value}")?;
            }
            json!({
                "n_words": s.n_words,
                "dimension": s.dimension,
                "used_dimensions": s.used_dimensions,
            })
        }
    };
    out.flush()?;

    let manifest = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "inspect",
        "parameters": { "dim": dim },
        "inputs": { "lifting": lifting.display().to_string() },
        "result": detail,
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    emit_manifest(None, &manifest)
}

/// `<path>.<suffix>` with the suffix appended to the full file name
/// (so `model.ckpt` gets `model.ckpt.vocab`, not `model.vocab`).
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", path.display()))
}

fn write_to_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    body(&mut writer)?;
    writer.flush()?;
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| {
        Error::Validation(format!(
            "cannot open vocabulary sidecar {}: {e} (it is written next to the checkpoint by `splift lift`)",
            path.display()
        ))
    })?;
    let words: Vec<String> =
        BufReader::new(file).lines().collect::<std::io::Result<_>>().map_err(Error::Io)?;
    Vocabulary::new(words)
}

/// The manifest goes to `<out>.manifest.json` when the command wrote
/// `out`, and to standard error as one line when results went to
/// standard output.
fn emit_manifest(out: Option<&Path>, manifest: &Value) -> Result<()> {
    match out {
        Some(path) => write_to_file(&sidecar(path, "manifest.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, manifest)
                .map_err(|e| Error::Validation(format!("manifest serialization failed: {e}")))?;
            writeln!(w)?;
            Ok(())
        }),
        None => {
            eprintln!("{manifest}");
            Ok(())
        }
    }
}

fn format_name(format: EmbeddingFormat) -> &'static str {
    match format {
        EmbeddingFormat::Glove => "glove",
        EmbeddingFormat::Word2vec => "word2vec",
    }
}

/// Parse `<label><TAB><sentence>` lines, skipping blank lines, without
/// the dataset-level class-count requirement (encoding a single-class or
/// even empty file is legitimate).
fn read_labelled_lines(path: &Path) -> Result<Vec<(String, String)>> {
    let mut lines = Vec::new();
    for (no, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((label, sentence)) if !label.trim().is_empty() => {
                lines.push((label.trim().to_string(), sentence.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    line: no + 1,
                    message: "expected <label><TAB><sentence>".to_string(),
                });
            }
        }
    }
    Ok(lines)
}

/// SVMlight labels are numeric. Labels that all parse as integers pass
/// through unchanged; otherwise each distinct label maps to its 1-based
/// rank in sorted order, and the mapping is recorded in the manifest.
enum LabelMapping {
    Numeric,
    Ranked(Vec<String>),
}

fn label_mapping<'a>(labels: impl Iterator<Item = &'a str>) -> LabelMapping {
    let mut distinct: Vec<String> = Vec::new();
    let mut all_numeric = true;
    for label in labels {
        all_numeric &= label.parse::<i64>().is_ok();
        if !distinct.iter().any(|d| d == label) {
            distinct.push(label.to_string());
        }
    }
    if all_numeric {
        LabelMapping::Numeric
    } else {
        distinct.sort();
        LabelMapping::Ranked(distinct)
    }
}

impl LabelMapping {
    fn apply(&self, label: &str) -> i64 {
        match self {
            LabelMapping::Numeric => label.parse::<i64>().expect("checked numeric"),
            LabelMapping::Ranked(order) => {
                let rank = order.iter().position(|d| d == label).expect("label seen during scan");
                (rank + 1) as i64
            }
        }
    }

    fn as_json(&self) -> Value {
        match self {
            LabelMapping::Numeric => Value::Null,
            LabelMapping::Ranked(order) => {
                let map: serde_json::Map<String, Value> = order
                    .iter()
                    .enumerate()
                    .map(|(i, label)| (label.clone(), json!(i as i64 + 1)))
                    .collect();
                Value::Object(map)
            }
        }
    }
}
