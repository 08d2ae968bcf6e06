use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hiermiml::corpus::{compute_frequency_table, Dataset, SyntheticConfig};
use hiermiml::evaluation::{format_predictions, records_from_annotations, MetricsReport};
use hiermiml::hierarchy::HierarchyTree;
use hiermiml::model::{HeadMode, Mode, ModelConfig};
use hiermiml::par::{self, Execution};
use hiermiml::plot::{csv_columns, line_chart_svg};
use hiermiml::training::{
    self, lambda_sweep, load_checkpoint, run_cross_validation, save_checkpoint, shuffled_ablation, Checkpoint,
    Experiment, PrepConfig, SweepGrid, TrainConfig,
};
use hiermiml::windowing::{format_window, insert_markers, make_windows, single_instance_example, Tokenizer};
use hiermiml::{seed, ErrorKind};
use serde::Serialize;
use thiserror::Error;

use crate::args::*;
use crate::manifest::Manifest;

pub const OUTPUT_DIR_ENV: &str = "HIERMIML_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] hiermiml::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

macro_rules! lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Lib(e.into())
            }
        }
    )*};
}

lib_error!(
    hiermiml::hierarchy::HierarchyError,
    hiermiml::corpus::CorpusError,
    hiermiml::windowing::WindowError,
    hiermiml::model::ModelError,
    hiermiml::training::TrainError,
    hiermiml::training::CheckpointError,
    hiermiml::evaluation::EvalError,
    hiermiml::plot::PlotError
);

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.kind() == ErrorKind::Numerical => 3,
            CliError::Lib(_) | CliError::Io { .. } => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Output directory with a manifest that lists every file written.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn new(out: &OutputArgs, manifest: Manifest) -> Result<Self> {
        let dir = out
            .out
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("hiermiml-out"));
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        Ok(Run { dir, manifest })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.display().to_string(), source })?;
        }
        fs::write(&path, contents).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.outputs.sort();
        let json = self.manifest.to_json();
        let path = self.dir.join("manifest.json");
        fs::write(&path, json).map_err(|source| CliError::Io { path: path.display().to_string(), source })
    }
}

fn load_tree(path: Option<&Path>, run: &mut Run) -> Result<HierarchyTree> {
    let tree = match path {
        Some(p) => HierarchyTree::parse(&read_text(p)?)?,
        None => HierarchyTree::default_tree(),
    };
    run.manifest.hash("hierarchy", tree.to_outline().as_bytes());
    Ok(tree)
}

fn load_corpus(c: &CorpusArgs, run: &mut Run, name: &str) -> Result<Dataset> {
    let ds = Dataset::load(&c.articles, &c.labels)?;
    run.manifest.hash(&format!("{name}_labels"), &read(&c.labels)?);
    let mut joined = Vec::new();
    for a in ds.articles() {
        joined.extend_from_slice(a.id.to_string().as_bytes());
        joined.push(0);
        joined.extend_from_slice(a.text.as_bytes());
        joined.push(0);
    }
    run.manifest.hash(&format!("{name}_articles"), &joined);
    Ok(ds)
}

fn prep_config(w: &WindowArgs) -> PrepConfig {
    PrepConfig {
        window_size: w.window_size,
        stride: w.stride,
        context: w.context,
        marker_budget: w.marker_budget,
        min_frequency: w.min_frequency,
    }
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Miml => Mode::Miml,
        ModeArg::SingleInstance => Mode::SingleInstance,
    }
}

fn execution(threads: usize) -> Execution {
    if threads > 1 {
        par::configure_threads(threads);
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Experiment from flags, validated before any data is read.
fn experiment(args: &ExperimentArgs, tree: HierarchyTree, metric_tree: HierarchyTree) -> Result<Experiment> {
    let mode = mode_of(args.model.mode);
    let o = &args.optim;
    let mut train = match o.preset {
        Preset::Desk => TrainConfig::desk(mode),
        Preset::Published => TrainConfig::published(mode),
    };
    train.lr = o.lr.unwrap_or(train.lr);
    train.weight_decay = o.weight_decay.unwrap_or(train.weight_decay);
    train.dropout = o.dropout.unwrap_or(train.dropout);
    train.batch_size = o.batch_size.unwrap_or(train.batch_size);
    train.epochs = o.epochs.unwrap_or(train.epochs);
    train.eval_every = o.eval_every.unwrap_or(train.eval_every);
    train.lambda_train = o.lambda_train.unwrap_or(train.lambda_train);
    train.lambda_eval = o.lambda_eval.unwrap_or(train.lambda_eval);
    train.seed = o.seed;
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let m = &args.model;
    let mut model = ModelConfig::desk(&tree, 1);
    model.mode = mode;
    model.head_mode = match m.head_mode {
        HeadModeArg::Flat => HeadMode::Flat,
        HeadModeArg::FlatAux => HeadMode::FlatAux,
    };
    model.dim = m.dim;
    model.layers = m.layers;
    model.heads = m.heads;
    model.ffn_dim = m.ffn_dim;
    model.max_positions = m.max_positions;
    train.apply_to(&mut model);
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let prep = prep_config(&args.window);
    if prep.stride == 0 || prep.window_size <= prep.stride {
        return Err(CliError::Usage(format!(
            "--stride {} must be positive and below --window-size {}",
            prep.stride, prep.window_size
        )));
    }
    if prep.window_size > model.max_positions {
        return Err(CliError::Usage(format!(
            "--window-size {} exceeds --max-positions {}",
            prep.window_size, model.max_positions
        )));
    }
    Ok(Experiment { tree, metric_tree, model, prep, train, execution: execution(o.threads) })
}

/// Tree selection shared by train, cv and sweep: the heads use the
/// (optionally shuffled) tree, Tree-F1 always uses the unshuffled one.
fn trees(t: &TreeArgs, run: &mut Run) -> Result<(HierarchyTree, HierarchyTree)> {
    let tree = load_tree(t.hierarchy.as_deref(), run)?;
    match t.shuffle_seed {
        Some(s) => {
            run.manifest.seeds.insert("leaf_shuffle".into(), s);
            Ok((tree.shuffle_leaves(s), tree))
        }
        None => Ok((tree.clone(), tree)),
    }
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    model: &'a ModelConfig,
    prep: &'a PrepConfig,
    train: &'a TrainConfig,
    tree: String,
    metric_tree: String,
}

fn snapshot(exp: &Experiment, run: &mut Run) -> Result<()> {
    let snap = ConfigSnapshot {
        model: &exp.model,
        prep: &exp.prep,
        train: &exp.train,
        tree: exp.tree.to_outline(),
        metric_tree: exp.metric_tree.to_outline(),
    };
    let mut json = serde_json::to_string_pretty(&snap).expect("config serializes");
    json.push('\n');
    run.manifest.hash("config", json.as_bytes());
    run.write("config.json", json)?;
    let s = exp.train.seed;
    for (name, value) in [("seed", s), ("init", seed::derive(s, "init")), ("folds", seed::derive(s, "folds"))] {
        run.manifest.seeds.insert(name.into(), value);
    }
    Ok(())
}

fn tokenizer(vocab: Option<&Path>, train_set: &Dataset, prep: &PrepConfig, run: &mut Run) -> Result<Tokenizer> {
    let tok = match vocab {
        Some(p) => Tokenizer::from_tsv(&read_text(p)?)?,
        None => Tokenizer::build(train_set, prep.min_frequency, prep.marker_budget)?,
    };
    run.manifest.hashes.insert("vocab".into(), tok.fingerprint());
    Ok(tok)
}

fn history_plot(csv: &str, title: &str) -> Result<String> {
    Ok(line_chart_svg(title, "step", "eval micro-F1", &csv_columns(csv, "step", "micro_f1")?)?)
}

pub fn build_vocab(a: &BuildVocabArgs, mut run: Run) -> Result<()> {
    let articles = hiermiml::corpus::load_articles(&a.articles)?;
    let ds = Dataset::new(articles, Vec::new(), hiermiml::corpus::Provenance::Official);
    let tok = Tokenizer::build(&ds, a.min_frequency, a.marker_budget)?;
    run.manifest.hashes.insert("vocab".into(), tok.fingerprint());
    run.write("vocab.tsv", tok.to_tsv())?;
    println!("vocabulary: {} entries", tok.len());
    run.finish()
}

pub fn preprocess(a: &PreprocessArgs, mut run: Run) -> Result<()> {
    let ds = load_corpus(&a.corpus, &mut run, "corpus")?;
    let prep = prep_config(&a.window);
    let tok = tokenizer(a.vocab.as_deref(), &ds, &prep, &mut run)?;
    let mut dump = String::new();
    let (mut units, mut spans) = (0usize, 0usize);
    for article in ds.articles() {
        let anns = ds.annotations_for(article.id);
        if anns.is_empty() {
            continue;
        }
        let ta = tok.tokenize(&article.text);
        match mode_of(a.mode) {
            Mode::Miml => {
                let ms = insert_markers(&ta, anns, &tok)?;
                let ws = make_windows(&ms, prep.window_size, prep.stride)?;
                for w in &ws.windows {
                    units += 1;
                    spans += w.spans.len();
                    dump.push_str(&format_window(article.id, w, &tok));
                    dump.push('\n');
                }
            }
            Mode::SingleInstance => {
                for (i, span) in anns.iter().enumerate() {
                    let ex = single_instance_example(&ta, span, prep.context, &tok)?;
                    let words: Vec<&str> = ex.ids.iter().map(|&id| tok.token(id)).collect();
                    let _ = writeln!(dump, "{}\t{i}\t{}", article.id, words.join(" "));
                    units += 1;
                    spans += 1;
                }
            }
        }
    }
    let name = match a.mode {
        ModeArg::Miml => "windows.txt",
        ModeArg::SingleInstance => "examples.txt",
    };
    run.write(name, dump)?;
    run.write("vocab.tsv", tok.to_tsv())?;
    let per = if units == 0 { 0.0 } else { spans as f64 / units as f64 };
    println!("{units} encoder inputs, {spans} span placements, {per:.3} per input");
    run.finish()
}

fn eval_corpus(e: &EvalCorpusArgs, train_set: &Dataset, run: &mut Run) -> Result<Dataset> {
    match (&e.eval_articles, &e.eval_labels) {
        (Some(articles), Some(labels)) => {
            load_corpus(&CorpusArgs { articles: articles.clone(), labels: labels.clone() }, run, "eval")
        }
        _ => {
            eprintln!("note: no evaluation corpus given; scoring on the training corpus");
            Ok(train_set.clone())
        }
    }
}

pub fn train(a: &TrainArgs, mut run: Run) -> Result<()> {
    let (tree, metric_tree) = trees(&a.tree, &mut run)?;
    let exp = experiment(&a.exp, tree, metric_tree)?;
    snapshot(&exp, &mut run)?;
    let train_set = load_corpus(&a.exp.corpus, &mut run, "train")?;
    let eval_set = eval_corpus(&a.eval, &train_set, &mut run)?;
    let tok = tokenizer(a.exp.vocab.as_deref(), &train_set, &exp.prep, &mut run)?;

    let outcome = training::train(&exp, &tok, &train_set, &eval_set)?;
    let csv = outcome.history.to_csv();
    run.write("metrics.csv", &csv)?;
    run.write("metrics.svg", history_plot(&csv, "Evaluation micro-F1 during training")?)?;
    run.write("report.csv", outcome.best_report.to_csv())?;
    run.write("report.txt", outcome.best_report.to_text())?;
    run.write("predictions.tsv", format_predictions(&outcome.best_predictions))?;
    run.write("vocab.tsv", tok.to_tsv())?;
    let ckpt = run.dir.join("best.ckpt");
    save_checkpoint(&Checkpoint::new(&outcome.best, &tok, &exp.tree), &ckpt)?;
    run.manifest.outputs.push("best.ckpt".into());
    run.manifest.hash("checkpoint", &read(&ckpt)?);
    print!("{}", outcome.best_report.to_text());
    println!("best step: {}", outcome.history.best_step.map_or_else(|| "-".into(), |s| s.to_string()));
    run.finish()
}

pub fn predict(a: &PredictArgs, mut run: Run) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    run.manifest.hash("checkpoint", &read(&a.checkpoint)?);
    let tree = match &a.hierarchy {
        Some(p) => load_tree(Some(p), &mut run)?,
        None => {
            let t = ckpt.tree()?;
            run.manifest.hash("hierarchy", t.to_outline().as_bytes());
            t
        }
    };
    let tok = Tokenizer::from_tsv(&read_text(&a.vocab)?)?;
    run.manifest.hashes.insert("vocab".into(), tok.fingerprint());
    let mut model = ckpt.into_model(&tok, &tree)?;
    if let Some(l) = a.lambda_eval {
        model.config.lambda_eval = l;
        model.config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ds = load_corpus(&a.corpus, &mut run, "corpus")?;
    let prep = prep_config(&a.window);
    let exec = execution(a.threads);
    let cfg = &model.config;
    let prepared =
        training::prepare(&ds, &tok, cfg.mode, &prep, &compute_frequency_table(&ds), cfg.max_positions, exec)?;
    let preds = training::predict(&model, &prepared, &tree, exec)?;
    run.write("predictions.tsv", format_predictions(&preds))?;
    println!("{} prediction rows", preds.len());
    run.finish()
}

pub fn eval(a: &EvalArgs, mut run: Run) -> Result<()> {
    let tree = load_tree(a.hierarchy.as_deref(), &mut run)?;
    let gold = hiermiml::corpus::read_label_file(&a.gold)?;
    let preds = records_from_annotations(&hiermiml::corpus::read_label_file(&a.pred)?);
    run.manifest.hash("gold", &read(&a.gold)?);
    run.manifest.hash("pred", &read(&a.pred)?);
    let report = MetricsReport::compute(&preds, &gold, &tree)?;
    run.write("report.csv", report.to_csv())?;
    print!("{}", report.to_text());
    run.finish()
}

fn jobs(n: usize) -> Execution {
    if n > 1 {
        par::configure_threads(n);
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

pub fn cv(a: &CvArgs, mut run: Run) -> Result<()> {
    if a.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let (tree, metric_tree) = trees(&a.tree, &mut run)?;
    let exp = experiment(&a.exp, tree, metric_tree)?;
    snapshot(&exp, &mut run)?;
    let ds = load_corpus(&a.exp.corpus, &mut run, "corpus")?;
    for f in 0..a.folds {
        run.manifest.seeds.insert(format!("fold{f}"), seed::derive_indexed(exp.train.seed, "fold", f as u64));
    }
    let result = run_cross_validation(&ds, &exp, a.folds, jobs(a.jobs))?;
    run.write("cv.csv", result.to_csv())?;
    for f in &result.folds {
        run.write(&format!("fold{}/metrics.csv", f.fold), f.history.to_csv())?;
    }
    println!("micro-F1 {:.4} ± {:.4} over {} folds", result.micro_f1.mean, result.micro_f1.std, result.micro_f1.count);
    run.finish()
}

pub fn sweep(a: &SweepArgs, mut run: Run) -> Result<()> {
    if a.folds < 2 {
        return Err(CliError::Usage("--folds must be at least 2".into()));
    }
    let grid = match (&a.diagonal, &a.grid) {
        (Some(r), None) => SweepGrid::diagonal(SweepGrid::parse_range(r).map_err(|e| CliError::Usage(e.to_string()))?),
        (None, Some(r)) => SweepGrid::full(SweepGrid::parse_range(r).map_err(|e| CliError::Usage(e.to_string()))?),
        _ => return Err(CliError::Usage("give exactly one of --diagonal or --grid".into())),
    };
    let (tree, metric_tree) = trees(&a.tree, &mut run)?;
    let exp = experiment(&a.exp, tree, metric_tree)?;
    snapshot(&exp, &mut run)?;
    let ds = load_corpus(&a.exp.corpus, &mut run, "corpus")?;
    let table = lambda_sweep(&ds, &exp, &grid, a.folds, jobs(a.jobs))?;
    run.write("sweep.csv", table.to_csv())?;
    let svg =
        line_chart_svg("Cross-validated micro-F1 against λ", "λ (training = eval)", "micro-F1", &table.diagonal())?;
    run.write("sweep.svg", svg)?;
    println!("{} sweep rows", table.rows.len());
    run.finish()
}

pub fn ablate(a: &AblateArgs, mut run: Run) -> Result<()> {
    let tree = load_tree(a.hierarchy.as_deref(), &mut run)?;
    let shuffled = tree.shuffle_leaves(a.shuffle_seed);
    run.manifest.seeds.insert("leaf_shuffle".into(), a.shuffle_seed);
    let exp = experiment(&a.exp, tree.clone(), tree)?;
    snapshot(&exp, &mut run)?;
    let train_set = load_corpus(&a.exp.corpus, &mut run, "train")?;
    let eval_set = eval_corpus(&a.eval, &train_set, &mut run)?;
    let tok = tokenizer(a.exp.vocab.as_deref(), &train_set, &exp.prep, &mut run)?;
    let result = shuffled_ablation(&train_set, &eval_set, &exp, &shuffled, &tok)?;
    run.write("ablation.csv", result.to_csv())?;
    run.write("true/metrics.csv", result.true_tree.history.to_csv())?;
    run.write("shuffled/metrics.csv", result.shuffled.history.to_csv())?;
    run.write("shuffled_tree.txt", result.shuffled_tree.to_outline())?;
    let (configured, aux_only) = result.gap();
    println!("true minus shuffled micro-F1: {configured:.4} at configured λ_eval, {aux_only:.4} aux-only");
    run.finish()
}

pub fn synth(a: &SynthArgs, mut run: Run) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = read_text(p)?;
            run.manifest.hash("synth_config", text.as_bytes());
            SyntheticConfig::parse(&text)?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(n) = a.num_articles {
        cfg.articles = n;
    }
    let tree = load_tree(a.hierarchy.as_deref(), &mut run)?;
    run.manifest.seeds.insert("seed".into(), a.seed);
    let corpus = hiermiml::corpus::generate_synthetic(&cfg, a.seed, &tree)?;
    for article in corpus.dataset.articles() {
        run.write(&format!("articles/article{}.txt", article.id), &article.text)?;
    }
    let labels = format_predictions(&records_from_annotations(corpus.dataset.annotations()));
    run.manifest.hash("labels", labels.as_bytes());
    run.write("labels.tsv", labels)?;
    println!("{} articles, {} label rows", corpus.dataset.articles().len(), corpus.dataset.label_rows());
    run.finish()
}
