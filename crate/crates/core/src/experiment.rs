//! Experiment registry and driver: maps experiment IDs to flag bundles,
//! runs multi-seed sweeps through the full pipeline (corpus variant ->
//! tokenizer -> optional static alignment -> pretraining with hooks ->
//! evaluation), and aggregates the results into table rows and curve data.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, split_nonparallel, Lang, ParallelCorpus, RawCorpus, Split, SplitRule,
};
use crate::eval::{evaluate_model, write_report_json, EvalOptions, EvalReport};
use crate::model::{save_checkpoint, EncoderModel, ModelConfig};
use crate::pretrain::{build_examples, mlm_perplexity, train, Masker, MaskingPolicy, TrainConfig};
use crate::rng::Rng;
use crate::staticemb::{
    build_knn_table, save_embedding, save_knn_table, self_learning_align, train_static,
    AlignOptions, KnnTable, StaticTrainConfig,
};
use crate::tokenizer::{extend_shifted, save_vocabulary, tokenize, train_wordpiece, Vocabulary};
use crate::{Error, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 42, 43, 100, 101];

/// The ablation switches a single experiment bundles together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentFlags {
    pub lang_pos: bool,
    pub shift_special: bool,
    pub no_random: bool,
    pub overparam: bool,
    pub inv_order: bool,
    pub no_parallel: bool,
    pub knn_replace: bool,
    pub untrained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub description: String,
    pub flags: ExperimentFlags,
    pub seeds: Vec<u64>,
    pub epochs_override: Option<usize>,
}

/// Every registered experiment ID with its flag bundle.
pub fn registry() -> Vec<(&'static str, &'static str, ExperimentFlags)> {
    use ExperimentFlags as F;
    let f = F::default;
    vec![
        ("0", "original", f()),
        (
            "1",
            "lang-pos",
            F {
                lang_pos: true,
                ..f()
            },
        ),
        (
            "2",
            "shift-special",
            F {
                shift_special: true,
                ..f()
            },
        ),
        (
            "3",
            "inv-order",
            F {
                inv_order: true,
                ..f()
            },
        ),
        (
            "4",
            "no-random",
            F {
                no_random: true,
                ..f()
            },
        ),
        (
            "5",
            "lang-pos;shift-special",
            F {
                lang_pos: true,
                shift_special: true,
                ..f()
            },
        ),
        (
            "6",
            "lang-pos;no-random",
            F {
                lang_pos: true,
                no_random: true,
                ..f()
            },
        ),
        (
            "7",
            "shift-special;no-random",
            F {
                shift_special: true,
                no_random: true,
                ..f()
            },
        ),
        (
            "8",
            "lang-pos;shift-special;no-random",
            F {
                lang_pos: true,
                shift_special: true,
                no_random: true,
                ..f()
            },
        ),
        (
            "9",
            "lang-pos;inv-order;shift-special;no-random",
            F {
                lang_pos: true,
                inv_order: true,
                shift_special: true,
                no_random: true,
                ..f()
            },
        ),
        (
            "15",
            "overparam",
            F {
                overparam: true,
                ..f()
            },
        ),
        (
            "16",
            "lang-pos;overparam",
            F {
                lang_pos: true,
                overparam: true,
                ..f()
            },
        ),
        (
            "17",
            "lang-pos;shift-special;no-random;overparam",
            F {
                lang_pos: true,
                shift_special: true,
                no_random: true,
                overparam: true,
                ..f()
            },
        ),
        (
            "18",
            "untrained",
            F {
                untrained: true,
                ..f()
            },
        ),
        (
            "19",
            "untrained;lang-pos",
            F {
                untrained: true,
                lang_pos: true,
                ..f()
            },
        ),
        (
            "21",
            "no-parallel",
            F {
                no_parallel: true,
                ..f()
            },
        ),
        (
            "21b",
            "lang-pos;no-parallel",
            F {
                lang_pos: true,
                no_parallel: true,
                ..f()
            },
        ),
        (
            "30",
            "knn-replace",
            F {
                knn_replace: true,
                ..f()
            },
        ),
    ]
}

const RESERVED_IDS: [&str; 14] = [
    "10", "11", "12", "13", "14", "20", "22", "23", "24", "25", "26", "27", "28", "29",
];

/// Look an experiment up by ID. Unknown IDs are an error, never a default.
pub fn lookup(id: &str) -> Result<ExperimentSpec> {
    for (rid, desc, flags) in registry() {
        if rid == id {
            return Ok(ExperimentSpec {
                id: rid.to_string(),
                description: desc.to_string(),
                flags,
                seeds: DEFAULT_SEEDS.to_vec(),
                epochs_override: None,
            });
        }
    }
    if RESERVED_IDS.contains(&id) {
        return Err(Error::Config(format!(
            "experiment id {id} is reserved but not defined"
        )));
    }
    Err(Error::Config(format!("unknown experiment id {id}")))
}

// ---------------------------------------------------------------------------
// lab configuration (key = value file, CLI-overridable)
// ---------------------------------------------------------------------------

/// Full pipeline configuration. The file format is one `key = value` pair
/// per line with `#` comments; every key can also be set on the command
/// line via `--set key=value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabConfig {
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    /// Monolingual wordpiece vocabulary size, special tokens included.
    pub vocab_target: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub dropout: f32,
    pub lr: f64,
    pub overparam_lr: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_grad_norm: f64,
    /// lr shape after warmup: "linear" (to zero) or "constant".
    pub lr_decay: String,
    /// Hook cadence as a fraction of total steps (0.25 = quarters).
    pub eval_fraction: f64,
    pub eval_max_pairs: usize,
    /// Cap on examples used for train-perplexity hooks (0 = all).
    pub ppl_max_examples: usize,
    pub static_dim: usize,
    pub static_window: usize,
    pub static_negatives: usize,
    pub static_epochs: usize,
    pub knn_k: usize,
    pub knn_csls: bool,
    pub split_enabled: bool,
    pub split_max_words: usize,
    /// Fixed seed for dev-perplexity masking (independent of model seed).
    pub ppl_seed: u64,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            train_path: PathBuf::from("data/sample.txt"),
            dev_path: PathBuf::from("data/dev.txt"),
            vocab_target: 512,
            hidden: 64,
            intermediate: 256,
            heads: 1,
            layers: 12,
            max_len: 128,
            dropout: 0.1,
            lr: 2e-3,
            overparam_lr: 1e-4,
            weight_decay: 0.01,
            adam_eps: 1e-6,
            warmup_steps: 50,
            batch_size: 256,
            epochs: 100,
            max_grad_norm: 1.0,
            lr_decay: "linear".into(),
            eval_fraction: 0.25,
            eval_max_pairs: 500,
            ppl_max_examples: 2048,
            static_dim: 100,
            static_window: 5,
            static_negatives: 5,
            static_epochs: 15,
            knn_k: 1,
            knn_csls: false,
            split_enabled: true,
            split_max_words: 256,
            ppl_seed: 1234,
        }
    }
}

impl LabConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let mut cfg = LabConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Set one key (the file and `--set` share this path).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v}")))
        }
        match key {
            "train_path" => self.train_path = PathBuf::from(value),
            "dev_path" => self.dev_path = PathBuf::from(value),
            "vocab_target" => self.vocab_target = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "intermediate" => self.intermediate = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "overparam_lr" => self.overparam_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "lr_decay" => {
                value
                    .parse::<crate::pretrain::LrDecay>()
                    .map_err(Error::Config)?;
                self.lr_decay = value.to_string();
            }
            "eval_fraction" => self.eval_fraction = parse(key, value)?,
            "eval_max_pairs" => self.eval_max_pairs = parse(key, value)?,
            "ppl_max_examples" => self.ppl_max_examples = parse(key, value)?,
            "static_dim" => self.static_dim = parse(key, value)?,
            "static_window" => self.static_window = parse(key, value)?,
            "static_negatives" => self.static_negatives = parse(key, value)?,
            "static_epochs" => self.static_epochs = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "knn_csls" => self.knn_csls = parse(key, value)?,
            "split_enabled" => self.split_enabled = parse(key, value)?,
            "split_max_words" => self.split_max_words = parse(key, value)?,
            "ppl_seed" => self.ppl_seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    pub fn split_rule(&self) -> SplitRule {
        SplitRule {
            enabled: self.split_enabled,
            max_words: self.split_max_words,
            ..SplitRule::default()
        }
    }

    pub fn model_config(&self, flags: &ExperimentFlags, vocab_size: usize) -> ModelConfig {
        let mut cfg = if flags.overparam {
            ModelConfig::overparam(vocab_size)
        } else {
            ModelConfig {
                hidden: self.hidden,
                intermediate: self.intermediate,
                heads: self.heads,
                ..ModelConfig::small(vocab_size)
            }
        };
        cfg.layers = self.layers;
        cfg.max_len = self.max_len;
        cfg.dropout = self.dropout;
        cfg.lang_pos = flags.lang_pos;
        cfg
    }

    pub fn train_config(&self, flags: &ExperimentFlags, seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: if flags.overparam {
                self.overparam_lr
            } else {
                self.lr
            },
            weight_decay: self.weight_decay,
            adam_eps: self.adam_eps,
            warmup_steps: self.warmup_steps,
            batch_size: self.batch_size,
            epochs,
            seed,
            max_len: self.max_len,
            max_grad_norm: self.max_grad_norm,
            lr_decay: self
                .lr_decay
                .parse()
                .unwrap_or(crate::pretrain::LrDecay::Linear),
            ..TrainConfig::default()
        }
    }

    pub fn static_config(&self) -> StaticTrainConfig {
        StaticTrainConfig {
            dim: self.static_dim,
            window: self.static_window,
            negatives: self.static_negatives,
            epochs: self.static_epochs,
            ..StaticTrainConfig::default()
        }
    }
}

// ---------------------------------------------------------------------------
// metric log (curve data)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_ppl: f64,
    pub dev_ppl: f64,
    pub rho0: f64,
    pub rho8: f64,
    pub tau0: f64,
    pub tau8: f64,
    pub mu: f64,
}

pub const METRIC_HEADER: &str = "step,train_ppl,dev_ppl,rho0,rho8,tau0,tau8,mu";

pub fn write_metric_log(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.train_ppl, r.dev_ppl, r.rho0, r.rho8, r.tau0, r.tau8, r.mu
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn read_metric_log(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRIC_HEADER {
                return Err(Error::data(format!(
                    "bad metric header in {}",
                    path.display()
                )));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::data(format!("bad metric row: {line}")));
        }
        let f = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::data(format!("bad number {s}")))
        };
        rows.push(MetricRow {
            step: cols[0]
                .parse()
                .map_err(|_| Error::data(format!("bad step {}", cols[0])))?,
            train_ppl: f(cols[1])?,
            dev_ppl: f(cols[2])?,
            rho0: f(cols[3])?,
            rho8: f(cols[4])?,
            tau0: f(cols[5])?,
            tau8: f(cols[6])?,
            mu: f(cols[7])?,
        });
    }
    Ok(rows)
}

/// Mean/std per metric per step across seeds. Logs whose step grids differ
/// are resampled to the steps common to all logs; `flagged` reports that.
pub struct CurveTable {
    pub steps: Vec<usize>,
    /// metric name -> (mean per step, std per step)
    pub series: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub flagged: bool,
}

pub fn emit_curves(logs: &[Vec<MetricRow>]) -> Result<CurveTable> {
    if logs.is_empty() || logs.iter().any(|l| l.is_empty()) {
        return Err(Error::data("emit_curves: empty log"));
    }
    let mut steps: Vec<usize> = logs[0].iter().map(|r| r.step).collect();
    let mut flagged = false;
    for log in &logs[1..] {
        let s: Vec<usize> = log.iter().map(|r| r.step).collect();
        if s != steps {
            flagged = true;
            steps.retain(|x| s.contains(x));
        }
    }
    if steps.is_empty() {
        return Err(Error::data("emit_curves: no common step grid"));
    }
    let fields: [(&str, fn(&MetricRow) -> f64); 7] = [
        ("train_ppl", |r| r.train_ppl),
        ("dev_ppl", |r| r.dev_ppl),
        ("rho0", |r| r.rho0),
        ("rho8", |r| r.rho8),
        ("tau0", |r| r.tau0),
        ("tau8", |r| r.tau8),
        ("mu", |r| r.mu),
    ];
    let mut series = Vec::new();
    for (name, get) in fields {
        let mut means = Vec::with_capacity(steps.len());
        let mut stds = Vec::with_capacity(steps.len());
        for &s in &steps {
            let vals: Vec<f64> = logs
                .iter()
                .map(|log| get(log.iter().find(|r| r.step == s).unwrap()))
                .collect();
            let (m, sd) = mean_std(&vals);
            means.push(m);
            stds.push(sd);
        }
        series.push((name.to_string(), means, stds));
    }
    Ok(CurveTable {
        steps,
        series,
        flagged,
    })
}

pub fn write_curves_csv(table: &CurveTable, path: &Path) -> Result<()> {
    let mut header = String::from("step");
    for (name, _, _) in &table.series {
        header.push_str(&format!(",{name}_mean,{name}_std"));
    }
    let mut out = header;
    out.push('\n');
    for (i, &s) in table.steps.iter().enumerate() {
        out.push_str(&s.to_string());
        for (_, means, stds) in &table.series {
            out.push_str(&format!(",{},{}", means[i], stds[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Sample standard deviation (n - 1); 0 for a single value.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// running experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateResult {
    pub id: String,
    pub description: String,
    pub seeds: Vec<u64>,
    pub completed: usize,
    pub reports: Vec<EvalReport>,
    /// (seed, error message) for seeds that failed.
    pub failures: Vec<(u64, String)>,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "mu",
    "f1_0",
    "rho_0",
    "tau_0",
    "f1_8",
    "rho_8",
    "tau_8",
    "train_ppl",
    "dev_ppl",
];

impl AggregateResult {
    fn column(report: &EvalReport, name: &str) -> f64 {
        match name {
            "mu" => report.mu,
            "f1_0" => report.f1_0,
            "rho_0" => report.rho_0,
            "tau_0" => report.tau_0,
            "f1_8" => report.f1_8,
            "rho_8" => report.rho_8,
            "tau_8" => report.tau_8,
            "train_ppl" => report.train_ppl,
            "dev_ppl" => report.dev_ppl,
            _ => unreachable!("unknown column"),
        }
    }

    /// (mean, std) of one metric column over the completed seeds.
    pub fn stat(&self, name: &str) -> (f64, f64) {
        let vals: Vec<f64> = self.reports.iter().map(|r| Self::column(r, name)).collect();
        mean_std(&vals)
    }
}

/// Everything a single seed run produced (the caller may keep training
/// artifacts for follow-up analysis).
pub struct SeedRun {
    pub report: EvalReport,
    pub metric_log: Vec<MetricRow>,
    pub model: EncoderModel<f32>,
    pub vocab: Vocabulary,
}

/// The fully-prepared inputs one experiment shares across seeds.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train_corpus: ParallelCorpus,
    pub dev_corpus: ParallelCorpus,
    pub raw_train: RawCorpus,
}

/// Corpus variant + vocabulary for one experiment's flags.
pub fn prepare(lab: &LabConfig, flags: &ExperimentFlags) -> Result<Prepared> {
    let rule = lab.split_rule();
    let raw_train = load_corpus(&lab.train_path, Split::Train, &rule)?;
    let raw_dev = load_corpus(&lab.dev_path, Split::Dev, &rule)?;
    let mono = train_wordpiece(&raw_train, lab.vocab_target)?;
    let vocab = extend_shifted(&mono, flags.shift_special);
    let tokenize_side = |raw: &RawCorpus| -> Vec<Vec<u32>> {
        raw.sentences
            .iter()
            .map(|s| tokenize(s, &vocab, vocab.language(Lang::Eng)).ids)
            .collect()
    };
    let mut train_corpus = ParallelCorpus::from_tokenized(
        tokenize_side(&raw_train),
        vocab.language(Lang::Fake),
        flags.inv_order,
    )?;
    if flags.no_parallel {
        train_corpus = split_nonparallel(&train_corpus)?;
    }
    // evaluation always needs the parallel dev corpus
    let dev_corpus = ParallelCorpus::from_tokenized(
        tokenize_side(&raw_dev),
        vocab.language(Lang::Fake),
        flags.inv_order,
    )?;
    Ok(Prepared {
        vocab,
        train_corpus,
        dev_corpus,
        raw_train,
    })
}

/// Train the per-language static embeddings, align them without supervision,
/// and build the two-direction neighbor table.
pub fn build_knn_pipeline(
    prepared: &Prepared,
    lab: &LabConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(Arc<KnnTable>, f64)> {
    let vocab = &prepared.vocab;
    let cfg = lab.static_config();
    let mut rng_e = Rng::for_stream(seed, 0x73746165, 0); // eng stream
    let mut rng_f = Rng::for_stream(seed, 0x73746166, 1); // independent fake stream
    let emb_e = train_static(
        &prepared.train_corpus.eng,
        &vocab.regular_ids(Lang::Eng),
        Lang::Eng,
        &cfg,
        &mut rng_e,
    )?;
    let emb_f = train_static(
        &prepared.train_corpus.fake,
        &vocab.regular_ids(Lang::Fake),
        Lang::Fake,
        &cfg,
        &mut rng_f,
    )?;
    let opts = AlignOptions {
        seed,
        ..AlignOptions::default()
    };
    let (map_ef, _) = self_learning_align(&emb_e, &emb_f, &opts)?;
    let (map_fe, _) = self_learning_align(&emb_f, &emb_e, &opts)?;
    let fwd = build_knn_table(&emb_e, &map_ef, &emb_f, lab.knn_k, lab.knn_csls)?;
    let bwd = build_knn_table(&emb_f, &map_fe, &emb_e, lab.knn_k, lab.knn_csls)?;
    let table = fwd.merge(bwd);
    // precision@1 of the forward table against the gold shift dictionary
    let shift = vocab.shift();
    let mut hits = 0usize;
    let mut total = 0usize;
    for id in vocab.regular_ids(Lang::Eng) {
        if let Some(nb) = table.neighbors(id) {
            total += 1;
            if nb.first() == Some(&(id + shift)) {
                hits += 1;
            }
        }
    }
    let precision = if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    };
    if let Some(dir) = out_dir {
        save_embedding(&emb_e, &dir.join("static_eng.bin"))?;
        save_embedding(&emb_f, &dir.join("static_fake.bin"))?;
        save_knn_table(&table, &dir.join("knn.txt"))?;
    }
    Ok((Arc::new(table), precision))
}

/// Run one seed of one experiment. `out_dir`, when given, receives the
/// vocabulary, checkpoints, the metric log and the report JSON.
pub fn run_seed(
    spec: &ExperimentSpec,
    lab: &LabConfig,
    prepared: &Prepared,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SeedRun> {
    let vocab = &prepared.vocab;
    let flags = &spec.flags;
    let model_cfg = lab.model_config(flags, vocab.total_size() as usize);
    model_cfg.validate()?;
    let mut epochs = spec.epochs_override.unwrap_or(lab.epochs);
    if flags.no_parallel && spec.epochs_override.is_none() {
        epochs *= 2; // half the data per language, twice the passes
    }
    let tcfg = lab.train_config(flags, seed, epochs);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
        save_vocabulary(vocab, &dir.join("vocab.txt"))?;
    }

    let policy = if flags.knn_replace {
        let (table, precision) = build_knn_pipeline(prepared, lab, seed, out_dir)?;
        eprintln!("  knn table precision@1 vs gold: {precision:.3}");
        MaskingPolicy::knn_replace(table, lab.knn_k)
    } else if flags.no_random {
        MaskingPolicy::no_random()
    } else {
        MaskingPolicy::original()
    };
    let masker = Masker::new(policy, vocab)?;

    let mut model = EncoderModel::<f32>::new(model_cfg, seed);
    let train_examples = build_examples(&prepared.train_corpus, vocab, lab.max_len);
    let dev_examples = build_examples(&prepared.dev_corpus, vocab, lab.max_len);
    let eval_opts = EvalOptions {
        max_pairs: lab.eval_max_pairs,
        batch_size: lab.batch_size,
        ..EvalOptions::default()
    };

    let ppl_cap = if lab.ppl_max_examples == 0 {
        usize::MAX
    } else {
        lab.ppl_max_examples
    };
    let ppl_seed = lab.ppl_seed;
    let measure = |model: &EncoderModel<f32>, step: usize| -> Result<(MetricRow, EvalReport)> {
        let train_ppl = mlm_perplexity(
            model,
            &train_examples[..train_examples.len().min(ppl_cap)],
            vocab,
            ppl_seed,
            lab.batch_size,
        )?;
        let dev_ppl = mlm_perplexity(
            model,
            &dev_examples[..dev_examples.len().min(ppl_cap)],
            vocab,
            ppl_seed,
            lab.batch_size,
        )?;
        let mut report = evaluate_model(model, &prepared.dev_corpus, vocab, &eval_opts)?;
        report.train_ppl = train_ppl;
        report.dev_ppl = dev_ppl;
        report.seed = seed;
        Ok((
            MetricRow {
                step,
                train_ppl,
                dev_ppl,
                rho0: report.rho_0,
                rho8: report.rho_8,
                tau0: report.tau_0,
                tau8: report.tau_8,
                mu: report.mu,
            },
            report,
        ))
    };

    let mut log: Vec<MetricRow> = Vec::new();
    let mut final_report: Option<EvalReport> = None;

    if flags.untrained {
        let (row, report) = measure(&model, 0)?;
        log.push(row);
        final_report = Some(report);
    } else {
        let steps_per_epoch = train_examples.len().div_ceil(tcfg.batch_size);
        let total_steps = steps_per_epoch * tcfg.epochs;
        let eval_every = if lab.eval_fraction > 0.0 {
            ((total_steps as f64 * lab.eval_fraction).round() as usize).max(1)
        } else {
            0
        };
        let mut tcfg = tcfg;
        tcfg.eval_every = eval_every;
        let started = Instant::now();
        let log_ref = &mut log;
        let final_ref = &mut final_report;
        train(
            &mut model,
            &train_examples,
            &masker,
            vocab,
            &tcfg,
            |step, m| {
                let (row, report) = measure(m, step)?;
                eprintln!(
                    "  id {} seed {seed} step {step}/{total_steps}: train_ppl {:.1} dev_ppl {:.1} mu {:.3} ({:.0}s)",
                    spec.id,
                    row.train_ppl,
                    row.dev_ppl,
                    row.mu,
                    started.elapsed().as_secs_f64()
                );
                log_ref.push(row);
                *final_ref = Some(report);
                if let Some(dir) = out_dir {
                    save_checkpoint(m, &dir.join("model.ckpt"))?;
                }
                Ok(())
            },
        )?;
    }
    let report = final_report.expect("at least one hook ran");

    if let Some(dir) = out_dir {
        save_checkpoint(&mut model, &dir.join("model.ckpt"))?;
        write_metric_log(&log, &dir.join("metrics.csv"))?;
        let fingerprint = serde_json::json!({
            "experiment": spec.id,
            "description": spec.description,
            "flags": flags,
            "seed": seed,
            "model": model.config,
            "epochs": epochs,
            "lr": lab.train_config(flags, seed, epochs).lr,
            "vocab_total": vocab.total_size(),
            "max_len_cap": lab.max_len,
        });
        write_report_json(&report, &fingerprint, &dir.join("report.json"))?;
    }
    Ok(SeedRun {
        report,
        metric_log: log,
        model,
        vocab: vocab.clone(),
    })
}

/// Run every seed of an experiment, aggregating over the completed ones.
/// A failed seed is recorded and does not abort the sweep.
pub fn run_experiment(
    spec: &ExperimentSpec,
    lab: &LabConfig,
    out_dir: Option<&Path>,
) -> Result<AggregateResult> {
    let prepared = prepare(lab, &spec.flags)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &seed in &spec.seeds {
        let seed_dir =
            out_dir.map(|d| d.join(format!("id{}", spec.id)).join(format!("seed{seed}")));
        match run_seed(spec, lab, &prepared, seed, seed_dir.as_deref()) {
            Ok(run) => reports.push(run.report),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if reports.is_empty() {
        return Err(Error::data(format!(
            "experiment {}: every seed failed: {failures:?}",
            spec.id
        )));
    }
    let agg = AggregateResult {
        id: spec.id.clone(),
        description: spec.description.clone(),
        seeds: spec.seeds.clone(),
        completed: reports.len(),
        reports,
        failures,
    };
    if let Some(dir) = out_dir {
        let exp_dir = dir.join(format!("id{}", spec.id));
        std::fs::create_dir_all(&exp_dir).map_err(|e| Error::io(exp_dir.clone(), e))?;
        let path = exp_dir.join("aggregate.json");
        std::fs::write(&path, serde_json::to_string_pretty(&agg).unwrap())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(agg)
}

// ---------------------------------------------------------------------------
// table rendering
// ---------------------------------------------------------------------------

/// Text table: one row per experiment, mean with std in parentheses.
pub fn emit_table_text(results: &[AggregateResult]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>4} {:<44} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>6}\n",
        "id",
        "description",
        "mu",
        "f1_0",
        "rho_0",
        "tau_0",
        "f1_8",
        "rho_8",
        "tau_8",
        "train_ppl",
        "dev_ppl",
        "seeds"
    ));
    for r in results {
        out.push_str(&format!("{:>4} {:<44}", r.id, r.description));
        for col in METRIC_COLUMNS {
            let (m, s) = r.stat(col);
            let cell = if col.ends_with("ppl") {
                format!("{m:.0} ({s:.1})")
            } else {
                format!("{m:.2} ({s:.2})")
            };
            out.push_str(&format!(" {cell:>12}"));
        }
        out.push_str(&format!(
            " {:>6}\n",
            format!("{}/{}", r.completed, r.seeds.len())
        ));
    }
    out
}

/// CSV form of the same table (mean and std columns per metric).
pub fn emit_table_csv(results: &[AggregateResult]) -> String {
    let mut header = String::from("id,description,completed,seeds");
    for col in METRIC_COLUMNS {
        header.push_str(&format!(",{col}_mean,{col}_std"));
    }
    let mut out = header;
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{}",
            r.id,
            r.description,
            r.completed,
            r.seeds.len()
        ));
        for col in METRIC_COLUMNS {
            let (m, s) = r.stat(col);
            out.push_str(&format!(",{m},{s}"));
        }
        out.push('\n');
    }
    out
}

/// Parse the CSV emitted by [`emit_table_csv`] back into (id, means) rows.
pub fn parse_table_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let _header = lines.next().ok_or_else(|| Error::data("empty table csv"))?;
    let mut rows = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + 2 * METRIC_COLUMNS.len() {
            return Err(Error::data(format!("bad table row: {line}")));
        }
        let mut vals = Vec::new();
        for i in 0..METRIC_COLUMNS.len() {
            let m: f64 = cols[4 + 2 * i]
                .parse()
                .map_err(|_| Error::data(format!("bad mean in {line}")))?;
            let s: f64 = cols[5 + 2 * i]
                .parse()
                .map_err(|_| Error::data(format!("bad std in {line}")))?;
            vals.push(m);
            vals.push(s);
        }
        rows.push((cols[0].to_string(), vals));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_table_flag_bundles() {
        let id8 = lookup("8").unwrap();
        assert!(id8.flags.lang_pos && id8.flags.shift_special && id8.flags.no_random);
        assert!(!id8.flags.overparam && !id8.flags.untrained);
        let id30 = lookup("30").unwrap();
        assert!(id30.flags.knn_replace);
        assert!(!id30.flags.lang_pos);
        let id17 = lookup("17").unwrap();
        assert!(
            id17.flags.lang_pos
                && id17.flags.shift_special
                && id17.flags.no_random
                && id17.flags.overparam
        );
        let id21b = lookup("21b").unwrap();
        assert!(id21b.flags.lang_pos && id21b.flags.no_parallel);
        let id18 = lookup("18").unwrap();
        assert!(id18.flags.untrained);
        assert_eq!(lookup("0").unwrap().seeds, DEFAULT_SEEDS.to_vec());
    }

    #[test]
    fn reserved_and_unknown_ids_error() {
        for id in ["10", "14", "20", "25", "29"] {
            let err = lookup(id).unwrap_err().to_string();
            assert!(err.contains("reserved"), "{err}");
        }
        assert!(lookup("999").is_err());
        assert!(lookup("banana").is_err());
    }

    #[test]
    fn lab_config_file_and_overrides() {
        let dir = std::env::temp_dir().join("mlmlab_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("lab.cfg");
        std::fs::write(
            &path,
            "# comment\nvocab_target = 256\nlr = 0.001\nknn_csls = true\n",
        )
        .unwrap();
        let mut cfg = LabConfig::from_file(&path).unwrap();
        assert_eq!(cfg.vocab_target, 256);
        assert_eq!(cfg.lr, 0.001);
        assert!(cfg.knn_csls);
        cfg.set("epochs", "7").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("epochs", "x").is_err());
    }

    #[test]
    fn metric_log_round_trip() {
        let rows = vec![
            MetricRow {
                step: 10,
                train_ppl: 100.5,
                dev_ppl: 200.25,
                rho0: 0.1,
                rho8: 0.2,
                tau0: 0.3,
                tau8: 0.4,
                mu: 0.25,
            },
            MetricRow {
                step: 20,
                train_ppl: 50.0,
                dev_ppl: 150.0,
                rho0: 0.15,
                rho8: 0.3,
                tau0: 0.35,
                tau8: 0.45,
                mu: 0.3125,
            },
        ];
        let dir = std::env::temp_dir().join("mlmlab_metrics_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        write_metric_log(&rows, &path).unwrap();
        assert_eq!(read_metric_log(&path).unwrap(), rows);
    }

    fn row(step: usize, mu: f64) -> MetricRow {
        MetricRow {
            step,
            train_ppl: 1.0,
            dev_ppl: 2.0,
            rho0: 0.0,
            rho8: 0.0,
            tau0: 0.0,
            tau8: 0.0,
            mu,
        }
    }

    #[test]
    fn curves_mean_std_and_single_seed() {
        let logs = vec![
            vec![row(5, 0.2), row(10, 0.4)],
            vec![row(5, 0.4), row(10, 0.8)],
        ];
        let t = emit_curves(&logs).unwrap();
        assert!(!t.flagged);
        assert_eq!(t.steps, vec![5, 10]);
        let mu = t.series.iter().find(|(n, _, _)| n == "mu").unwrap();
        assert!((mu.1[0] - 0.3).abs() < 1e-12);
        assert!((mu.1[1] - 0.6).abs() < 1e-12);
        // sample std of {0.2, 0.4} = 0.1414...
        assert!((mu.2[0] - (0.02f64).sqrt()).abs() < 1e-12);
        // single seed: std column all zero
        let t = emit_curves(&logs[..1].to_vec()).unwrap();
        let mu = t.series.iter().find(|(n, _, _)| n == "mu").unwrap();
        assert!(mu.2.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn curves_resample_mismatched_grids() {
        let logs = vec![
            vec![row(5, 0.2), row(10, 0.4), row(15, 0.6)],
            vec![row(5, 0.1), row(15, 0.5)],
        ];
        let t = emit_curves(&logs).unwrap();
        assert!(t.flagged);
        assert_eq!(t.steps, vec![5, 15]);
    }

    #[test]
    fn table_csv_round_trip() {
        let rep = |mu: f64, seed: u64| EvalReport {
            f1_0: 0.9,
            rho_0: 0.1,
            tau_0: 0.8,
            f1_8: 0.95,
            rho_8: 0.85,
            tau_8: 0.7,
            mu,
            train_ppl: 9.0,
            dev_ppl: 200.0,
            seed,
        };
        let results = vec![AggregateResult {
            id: "0".into(),
            description: "original".into(),
            seeds: vec![0, 42],
            completed: 2,
            reports: vec![rep(0.6, 0), rep(0.8, 42)],
            failures: vec![],
        }];
        let csv = emit_table_csv(&results);
        let parsed = parse_table_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, "0");
        let (mean_mu, std_mu) = results[0].stat("mu");
        assert!((parsed[0].1[0] - mean_mu).abs() < 1e-12);
        assert!((parsed[0].1[1] - std_mu).abs() < 1e-12);
        // one data row with all 9 metric columns
        let text = emit_table_text(&results);
        assert_eq!(text.lines().count(), 2);
        // a missing seed is noted in the text row
        let partial = AggregateResult {
            completed: 1,
            reports: vec![rep(0.6, 0)],
            failures: vec![(42, "boom".into())],
            ..results[0].clone()
        };
        let text = emit_table_text(&[partial]);
        assert!(text.contains("1/2"));
    }

    #[test]
    fn mean_std_conventions() {
        let (m, s) = mean_std(&[2.0]);
        assert_eq!((m, s), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64).sqrt()).abs() < 1e-12);
    }
}
