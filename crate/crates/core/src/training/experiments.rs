//! Cross-validation, the λ grid sweep and the shuffled-tree ablation.

use std::fmt::Write as _;

use super::prepare::{predict, prepare};
use super::run::{train, RunHistory, TrainOutcome};
use super::{Experiment, TrainError};
use crate::corpus::{compute_frequency_table, make_folds, Dataset};
use crate::evaluation::MetricsReport;
use crate::hierarchy::HierarchyTree;
use crate::par::{self, Execution};
use crate::seed;
use crate::windowing::Tokenizer;

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    /// Folds contributing a value (Tree-F1 over incorrect pairs may be absent).
    pub count: usize,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MetricStats { mean, std, count: values.len() }
    }
}

#[derive(Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub report: MetricsReport,
    pub history: RunHistory,
}

#[derive(Debug)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub micro_f1: MetricStats,
    pub tree_f1_all: MetricStats,
    pub tree_f1_incorrect: MetricStats,
}

impl CvResult {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
            folds.iter().filter_map(|r| f(&r.report)).collect()
        };
        CvResult {
            micro_f1: MetricStats::of(&collect(&|r| Some(r.micro_f1))),
            tree_f1_all: MetricStats::of(&collect(&|r| r.tree_f1_all)),
            tree_f1_incorrect: MetricStats::of(&collect(&|r| r.tree_f1_incorrect)),
            folds,
        }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        let mut out = String::from("fold,micro_f1,tree_f1_all,tree_f1_incorrect,best_step\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{}",
                f.fold,
                f.report.micro_f1,
                opt(f.report.tree_f1_all),
                opt(f.report.tree_f1_incorrect),
                f.history.best_step.map_or_else(String::new, |s| s.to_string())
            );
        }
        let columns: [(&str, StatField); 2] = [("mean", |m| m.mean), ("std", |m| m.std)];
        for (name, s) in columns {
            let _ = writeln!(
                out,
                "{name},{:.6},{:.6},{:.6},",
                s(&self.micro_f1),
                s(&self.tree_f1_all),
                s(&self.tree_f1_incorrect)
            );
        }
        out
    }
}

type StatField = fn(&MetricStats) -> f64;

/// Train and eval tokenizer of one split, built from the training side.
fn split_tokenizer(exp: &Experiment, train_set: &Dataset) -> Result<Tokenizer, TrainError> {
    Ok(Tokenizer::build(train_set, exp.prep.min_frequency, exp.prep.marker_budget)?)
}

/// One fresh model per article-level fold; `jobs` controls whether folds
/// run concurrently.
pub fn run_cross_validation(
    dataset: &Dataset,
    exp: &Experiment,
    k: usize,
    jobs: Execution,
) -> Result<CvResult, TrainError> {
    let splits = make_folds(dataset, k, seed::derive(exp.train.seed, "folds"))?;
    let results = par::map(&splits, jobs, |_, split| {
        let mut fold_exp = exp.clone();
        fold_exp.train.seed = seed::derive_indexed(exp.train.seed, "fold", split.fold as u64);
        let run = || -> Result<TrainOutcome, TrainError> {
            let tok = split_tokenizer(&fold_exp, &split.train)?;
            train(&fold_exp, &tok, &split.train, &split.eval)
        };
        run()
            .map(|o| FoldResult { fold: split.fold, report: o.best_report, history: o.history })
            .map_err(|e| TrainError::Fold { fold: split.fold, source: Box::new(e) })
    });
    Ok(CvResult::from_folds(results.into_iter().collect::<Result<_, _>>()?))
}

/// How λ_eval is chosen for each λ_training value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalPolicy {
    Zero,
    One,
    /// λ_eval = λ_training.
    Diagonal,
}

impl EvalPolicy {
    pub fn name(self) -> &'static str {
        match self {
            EvalPolicy::Zero => "zero",
            EvalPolicy::One => "one",
            EvalPolicy::Diagonal => "diagonal",
        }
    }

    fn lambda(self, lambda_train: f64) -> f64 {
        match self {
            EvalPolicy::Zero => 0.0,
            EvalPolicy::One => 1.0,
            EvalPolicy::Diagonal => lambda_train,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub lambda_train: Vec<f64>,
    pub policies: Vec<EvalPolicy>,
}

impl SweepGrid {
    pub fn diagonal(values: Vec<f64>) -> Self {
        SweepGrid { lambda_train: values, policies: vec![EvalPolicy::Diagonal] }
    }

    /// Every λ_training value under λ_eval ∈ {0, 1, λ_training}.
    pub fn full(values: Vec<f64>) -> Self {
        SweepGrid { lambda_train: values, policies: vec![EvalPolicy::Zero, EvalPolicy::One, EvalPolicy::Diagonal] }
    }

    /// `start:end:step`, inclusive of `end` up to rounding.
    pub fn parse_range(text: &str) -> Result<Vec<f64>, TrainError> {
        let bad = || TrainError::Config(format!("range {text:?} is not start:end:step"));
        let parts: Vec<f64> =
            text.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else { return Err(bad()) };
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
    }

    /// (λ_training, policy, λ_eval) rows in table order.
    pub fn points(&self) -> Vec<(f64, EvalPolicy, f64)> {
        self.lambda_train.iter().flat_map(|&lt| self.policies.iter().map(move |&p| (lt, p, p.lambda(lt)))).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda_train: f64,
    pub policy: EvalPolicy,
    pub lambda_eval: f64,
    pub micro_f1: f64,
    pub micro_f1_std: f64,
    pub tree_f1_all: f64,
    pub tree_f1_incorrect: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("lambda_train,policy,lambda_eval,micro_f1,micro_f1_std,tree_f1_all,tree_f1_incorrect\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.4},{},{:.4},{:.6},{:.6},{:.6},{:.6}",
                r.lambda_train,
                r.policy.name(),
                r.lambda_eval,
                r.micro_f1,
                r.micro_f1_std,
                r.tree_f1_all,
                r.tree_f1_incorrect
            );
        }
        out
    }

    /// (λ, micro-F1) along λ_training = λ_eval.
    pub fn diagonal(&self) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.policy == EvalPolicy::Diagonal).map(|r| (r.lambda_train, r.micro_f1)).collect()
    }
}

/// One cross-validated run per grid point. Points that coincide (such as
/// λ_eval = λ_training = 0 under two policies) reuse the same run.
pub fn lambda_sweep(
    dataset: &Dataset,
    exp: &Experiment,
    grid: &SweepGrid,
    folds: usize,
    jobs: Execution,
) -> Result<SweepTable, TrainError> {
    let mut table = SweepTable::default();
    for (lambda_train, policy, lambda_eval) in grid.points() {
        if let Some(done) = table.rows.iter().find(|r| r.lambda_train == lambda_train && r.lambda_eval == lambda_eval) {
            let row = SweepRow { policy, ..done.clone() };
            table.rows.push(row);
            continue;
        }
        let cv = run_cross_validation(dataset, &exp.with_lambdas(lambda_train, lambda_eval), folds, jobs)?;
        table.rows.push(SweepRow {
            lambda_train,
            policy,
            lambda_eval,
            micro_f1: cv.micro_f1.mean,
            micro_f1_std: cv.micro_f1.std,
            tree_f1_all: cv.tree_f1_all.mean,
            tree_f1_incorrect: cv.tree_f1_incorrect.mean,
        });
    }
    Ok(table)
}

/// Metrics of one tree, at the configured λ_eval and aux-only.
#[derive(Debug)]
pub struct AblationArm {
    pub configured: MetricsReport,
    pub aux_only: MetricsReport,
    pub history: RunHistory,
}

#[derive(Debug)]
pub struct AblationResult {
    pub true_tree: AblationArm,
    pub shuffled: AblationArm,
    pub shuffled_tree: HierarchyTree,
}

impl AblationResult {
    /// True-tree minus shuffled-tree micro-F1 (configured, aux-only).
    pub fn gap(&self) -> (f64, f64) {
        (
            self.true_tree.configured.micro_f1 - self.shuffled.configured.micro_f1,
            self.true_tree.aux_only.micro_f1 - self.shuffled.aux_only.micro_f1,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tree,condition,micro_f1,tree_f1_all,tree_f1_incorrect\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        for (name, arm) in [("true", &self.true_tree), ("shuffled", &self.shuffled)] {
            for (cond, r) in [("configured", &arm.configured), ("aux_only", &arm.aux_only)] {
                let _ = writeln!(
                    out,
                    "{name},{cond},{:.6},{},{}",
                    r.micro_f1,
                    opt(r.tree_f1_all),
                    opt(r.tree_f1_incorrect)
                );
            }
        }
        out
    }
}

fn ablation_arm(
    exp: &Experiment,
    tok: &Tokenizer,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<AblationArm, TrainError> {
    let outcome = train(exp, tok, train_set, eval_set)?;
    let mut aux_model = outcome.best.clone();
    aux_model.config.lambda_eval = 1.0;
    let freq = compute_frequency_table(train_set);
    let cfg = &aux_model.config;
    let prepared = prepare(eval_set, tok, cfg.mode, &exp.prep, &freq, cfg.max_positions, exp.execution)?;
    let preds = predict(&aux_model, &prepared, &exp.tree, exp.execution)?;
    let aux_only = MetricsReport::compute(&preds, eval_set.annotations(), &exp.metric_tree)?;
    Ok(AblationArm { configured: outcome.best_report, aux_only, history: outcome.history })
}

/// Trains on the true tree and on `shuffled_tree` with identical seeds and
/// configs. Tree-F1 is always measured on the true tree.
pub fn shuffled_ablation(
    train_set: &Dataset,
    eval_set: &Dataset,
    exp: &Experiment,
    shuffled_tree: &HierarchyTree,
    tok: &Tokenizer,
) -> Result<AblationResult, TrainError> {
    let mut shuffled_exp = exp.clone();
    shuffled_exp.tree = shuffled_tree.clone();
    shuffled_exp.metric_tree = exp.tree.clone();
    let mut true_exp = exp.clone();
    true_exp.metric_tree = exp.tree.clone();
    Ok(AblationResult {
        true_tree: ablation_arm(&true_exp, tok, train_set, eval_set)?,
        shuffled: ablation_arm(&shuffled_exp, tok, train_set, eval_set)?,
        shuffled_tree: shuffled_tree.clone(),
    })
}
