//! Command-line driver for the multilinguality laboratory.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.

use std::path::PathBuf;

use anyhow::Context;
use mimalloc::MiMalloc;

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

use clap::{Args, Parser, Subcommand};

use mlmlab::corpus::{
    load_corpus, read_archive, split_nonparallel, write_archive, Lang, ParallelCorpus, Split,
    SplitRule,
};
use mlmlab::eval::{evaluate_model, write_matrix_csv, write_report_json, EvalOptions};
use mlmlab::experiment::{
    emit_curves, emit_table_csv, emit_table_text, lookup, read_metric_log, run_experiment,
    write_curves_csv, AggregateResult, LabConfig,
};
use mlmlab::model::{load_checkpoint, pca_project, position_similarity};
use mlmlab::pretrain::build_examples;
use mlmlab::textgen::{generate_text, GenConfig, Style};
use mlmlab::tokenizer::{
    extend_shifted, load_vocabulary, save_vocabulary, tokenize, train_wordpiece,
};
use mlmlab::Error;

#[derive(Parser)]
#[command(
    name = "mlmlab",
    about = "Train tiny bilingual MLM encoders and measure how multilingual they become",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,

    /// Run all numeric kernels on a single thread (exact reproducibility).
    #[arg(long, global = true)]
    single_thread: bool,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key-value config file (see LabConfig keys).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set epochs=30 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> anyhow::Result<LabConfig> {
        let mut cfg = match &self.config {
            Some(p) => LabConfig::from_file(p)?,
            None => LabConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic corpus (grammar-based, deterministic).
    GenCorpus {
        #[arg(long, default_value = "plain")]
        style: String,
        #[arg(long, default_value_t = 2000)]
        lines: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train a monolingual WordPiece vocabulary and extend it to two languages.
    TrainTokenizer {
        #[arg(long)]
        input: PathBuf,
        /// Monolingual vocabulary size (special tokens included).
        #[arg(long, default_value_t = 512)]
        target: usize,
        /// Give the fake language its own special-token ids.
        #[arg(long)]
        shift_special: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_split: bool,
    },

    /// Tokenize a text corpus into a binary archive of both language sides.
    PrepareCorpus {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse every fake-language sentence (inv-order).
        #[arg(long)]
        invert: bool,
        /// Keep only disjoint halves per language (no-parallel).
        #[arg(long)]
        no_parallel: bool,
        #[arg(long)]
        no_split: bool,
        #[arg(long, default_value_t = 256)]
        max_words: usize,
    },

    /// Train static embeddings per language, align them unsupervised, and
    /// write the crosslingual nearest-neighbor table.
    StaticAlign {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// MLM-pretrain an encoder on a prepared corpus archive.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Output directory (defaults to $MLMLAB_OUT/pretrain).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment id whose flag bundle to apply (default "0").
        #[arg(long, default_value = "0")]
        id: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Evaluate a checkpoint: alignment F1, retrieval, translation, mu.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the position-embedding cosine matrix as CSV.
        #[arg(long)]
        possim: Option<PathBuf>,
        /// Write a 2-component PCA of the token table as CSV.
        #[arg(long)]
        pca: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Run a full experiment by ID (multi-seed sweep + aggregation).
    Run {
        #[arg(long)]
        id: String,
        /// Comma-separated seed list (default: 0,42,43,100,101).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output root (defaults to $MLMLAB_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Render aggregated results from an output root as a table.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Merge per-seed metric logs into mean/std curve data.
    Curves {
        /// Experiment directory holding seed*/metrics.csv.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("MLMLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn split_rule(no_split: bool, max_words: usize) -> SplitRule {
    SplitRule {
        enabled: !no_split,
        max_words,
        ..SplitRule::default()
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap treats --help/--version as errors that print to stdout
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if cli.single_thread {
        mlmlab::tensor::set_single_thread(true);
    }
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Diverged { .. }) => 3,
                Some(Error::Config(_)) => 1,
                Some(_) => 2,
                None => 2,
            };
            std::process::exit(code);
        }
    }
}

fn dispatch(cmd: Commands) -> anyhow::Result<()> {
    match cmd {
        Commands::GenCorpus {
            style,
            lines,
            seed,
            out,
        } => {
            let style: Style = style.parse().map_err(Error::Config)?;
            let text = generate_text(&GenConfig { style, lines, seed });
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} lines to {}", lines, out.display());
        }
        Commands::TrainTokenizer {
            input,
            target,
            shift_special,
            out,
            no_split,
        } => {
            let raw = load_corpus(&input, Split::Train, &split_rule(no_split, 256))?;
            let mono = train_wordpiece(&raw, target)?;
            let vocab = extend_shifted(&mono, shift_special);
            save_vocabulary(&vocab, &out)?;
            println!(
                "vocabulary: mono {} total {} ({} sentences, median len {})",
                vocab.mono_size,
                vocab.total_size(),
                raw.sentences.len(),
                raw.median_len()
            );
        }
        Commands::PrepareCorpus {
            input,
            vocab,
            out,
            invert,
            no_parallel,
            no_split,
            max_words,
        } => {
            let vocab = load_vocabulary(&vocab)?;
            let raw = load_corpus(&input, Split::Train, &split_rule(no_split, max_words))?;
            let eng: Vec<Vec<u32>> = raw
                .sentences
                .iter()
                .map(|s| tokenize(s, &vocab, vocab.language(Lang::Eng)).ids)
                .collect();
            let mut corpus =
                ParallelCorpus::from_tokenized(eng, vocab.language(Lang::Fake), invert)?;
            if no_parallel {
                corpus = split_nonparallel(&corpus)?;
            }
            write_archive(&corpus, &out)?;
            println!(
                "archive: {} eng + {} fake sentences (parallel={}, inverted={})",
                corpus.eng.len(),
                corpus.fake.len(),
                corpus.parallel,
                corpus.inverted
            );
        }
        Commands::StaticAlign {
            corpus,
            vocab,
            out_dir,
            seed,
            config,
        } => {
            let lab = config.build()?;
            let vocab = load_vocabulary(&vocab)?;
            let corpus = read_archive(&corpus)?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let prepared = mlmlab::experiment::Prepared {
                vocab,
                train_corpus: corpus,
                dev_corpus: ParallelCorpus {
                    eng: vec![],
                    fake: vec![],
                    parallel: true,
                    inverted: false,
                    shift: 0,
                },
                raw_train: mlmlab::corpus::RawCorpus {
                    sentences: vec![],
                    split: Split::Train,
                    source_name: String::new(),
                },
            };
            let (table, precision) =
                mlmlab::experiment::build_knn_pipeline(&prepared, &lab, seed, Some(&out_dir))?;
            println!(
                "aligned: {} table entries, precision@1 vs gold shift dictionary: {precision:.3}",
                table.entries.len()
            );
        }
        Commands::Pretrain {
            corpus,
            dev,
            vocab,
            out,
            id,
            seed,
            config,
        } => {
            let lab = config.build()?;
            let mut spec = lookup(&id)?;
            spec.seeds = vec![seed];
            let vocab = load_vocabulary(&vocab)?;
            let train_corpus = read_archive(&corpus)?;
            let dev_corpus = read_archive(&dev)?;
            let raw_train = mlmlab::corpus::RawCorpus {
                sentences: vec![],
                split: Split::Train,
                source_name: corpus.display().to_string(),
            };
            let prepared = mlmlab::experiment::Prepared {
                vocab,
                train_corpus,
                dev_corpus,
                raw_train,
            };
            let out = out_root(out).join("pretrain");
            std::fs::create_dir_all(&out)?;
            let run = mlmlab::experiment::run_seed(&spec, &lab, &prepared, seed, Some(&out))?;
            println!(
                "done: train_ppl {:.1} dev_ppl {:.1} mu {:.3} -> {}",
                run.report.train_ppl,
                run.report.dev_ppl,
                run.report.mu,
                out.display()
            );
        }
        Commands::Evaluate {
            checkpoint,
            dev,
            vocab,
            report,
            possim,
            pca,
            config,
        } => {
            let lab = config.build()?;
            let vocab = load_vocabulary(&vocab)?;
            let dev_corpus = read_archive(&dev)?;
            let model = load_checkpoint(&checkpoint)?;
            let opts = EvalOptions {
                max_pairs: lab.eval_max_pairs,
                batch_size: lab.batch_size,
                ..EvalOptions::default()
            };
            let mut rep = evaluate_model(&model, &dev_corpus, &vocab, &opts)?;
            let dev_examples = build_examples(&dev_corpus, &vocab, lab.max_len);
            rep.dev_ppl = mlmlab::pretrain::mlm_perplexity(
                &model,
                &dev_examples,
                &vocab,
                lab.ppl_seed,
                lab.batch_size,
            )?;
            println!(
                "f1_0 {:.3} rho_0 {:.3} tau_0 {:.3} | f1_8 {:.3} rho_8 {:.3} tau_8 {:.3} | mu {:.3} dev_ppl {:.1}",
                rep.f1_0, rep.rho_0, rep.tau_0, rep.f1_8, rep.rho_8, rep.tau_8, rep.mu, rep.dev_ppl
            );
            if let Some(path) = report {
                let fp = serde_json::json!({
                    "checkpoint": checkpoint.display().to_string(),
                    "model": model.config,
                });
                write_report_json(&rep, &fp, &path)?;
            }
            if let Some(path) = possim {
                write_matrix_csv(&position_similarity(&model), &path)?;
            }
            if let Some(path) = pca {
                let (coords, ratios) = pca_project(&model.tok.value, 2)?;
                write_matrix_csv(&coords, &path)?;
                println!("pca explained variance: {ratios:?}");
            }
        }
        Commands::Run {
            id,
            seeds,
            epochs,
            out,
            config,
        } => {
            let lab = config.build()?;
            let mut spec = lookup(&id)?;
            if let Some(s) = seeds {
                spec.seeds = s
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::Config(format!("bad seed: {x}")))
                    })
                    .collect::<Result<Vec<u64>, Error>>()?;
            }
            spec.epochs_override = epochs;
            let out = out_root(out);
            std::fs::create_dir_all(&out)?;
            let agg = run_experiment(&spec, &lab, Some(&out))?;
            print!("{}", emit_table_text(&[agg]));
        }
        Commands::Report { dir, csv } => {
            let mut results: Vec<AggregateResult> = Vec::new();
            for entry in std::fs::read_dir(&dir).with_context(|| format!("{}", dir.display()))? {
                let path = entry?.path().join("aggregate.json");
                if path.is_file() {
                    let text = std::fs::read_to_string(&path)?;
                    results.push(
                        serde_json::from_str(&text)
                            .with_context(|| format!("parsing {}", path.display()))?,
                    );
                }
            }
            if results.is_empty() {
                return Err(
                    Error::data(format!("no aggregate.json under {}", dir.display())).into(),
                );
            }
            results.sort_by(|a, b| a.id.cmp(&b.id));
            print!("{}", emit_table_text(&results));
            if let Some(path) = csv {
                std::fs::write(&path, emit_table_csv(&results))?;
            }
        }
        Commands::Curves { dir, out } => {
            let mut logs = Vec::new();
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("{}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.starts_with("seed"))
                        .unwrap_or(false)
                })
                .collect();
            entries.sort();
            for seed_dir in entries {
                let log = read_metric_log(&seed_dir.join("metrics.csv"))?;
                logs.push(log);
            }
            if logs.is_empty() {
                return Err(
                    Error::data(format!("no seed*/metrics.csv under {}", dir.display())).into(),
                );
            }
            let table = emit_curves(&logs)?;
            if table.flagged {
                eprintln!("note: step grids differed; resampled to the common grid");
            }
            write_curves_csv(&table, &out)?;
            println!(
                "wrote curves for {} steps to {}",
                table.steps.len(),
                out.display()
            );
        }
    }
    Ok(())
}
