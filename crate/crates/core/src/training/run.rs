//! The training loop with periodic evaluation and best-checkpoint retention.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::optim::{optimizer_step, OptimizerState};
use super::prepare::{predict, prepare, Prepared};
use super::{Experiment, TrainError};
use crate::corpus::{compute_frequency_table, Dataset};
use crate::evaluation::{MetricsReport, PredictionRecord};
use crate::model::{Instance, Model, Strictness};
use crate::seed;
use crate::windowing::Tokenizer;

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss over the steps since the previous row.
    pub loss: f64,
    pub micro_f1: f64,
    pub tree_f1_all: Option<f64>,
    pub tree_f1_incorrect: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
    /// Step of the retained checkpoint.
    pub best_step: Option<usize>,
}

impl RunHistory {
    pub fn best(&self) -> Option<&HistoryRow> {
        self.rows.iter().find(|r| Some(r.step) == self.best_step)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        let mut out = String::from("step,epoch,loss,micro_f1,tree_f1_all,tree_f1_incorrect\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{}",
                r.step,
                r.epoch,
                r.loss,
                r.micro_f1,
                opt(r.tree_f1_all),
                opt(r.tree_f1_incorrect)
            );
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: RunHistory,
    /// Parameters at the best evaluation.
    pub best: Model,
    pub best_report: MetricsReport,
    pub best_predictions: Vec<PredictionRecord>,
    /// Encoder passes made by the training loop in each epoch.
    pub encode_calls_per_epoch: Vec<usize>,
    pub train_instances: usize,
}

struct Evaluator<'a> {
    exp: &'a Experiment,
    prepared: &'a Prepared,
    eval: &'a Dataset,
}

impl Evaluator<'_> {
    fn run(&self, snapshot: &Model) -> Result<(MetricsReport, Vec<PredictionRecord>), TrainError> {
        let preds = predict(snapshot, self.prepared, &self.exp.tree, self.exp.execution)?;
        let report = MetricsReport::compute(&preds, self.eval.annotations(), &self.exp.metric_tree)?;
        Ok((report, preds))
    }
}

fn diverged(epoch: usize, step: usize, loss: f64, model: &Model, err: Option<&dyn std::error::Error>) -> TrainError {
    let mut detail = format!("loss {loss}, parameters finite: {}", model.params.is_finite());
    if let Some(e) = err {
        let _ = write!(detail, ", cause: {e}");
    }
    TrainError::Diverged { epoch, step, detail }
}

/// Trains from a fresh seeded initialization on `train_set`, evaluating on
/// `eval_set` every `eval_every` steps and after the last step.
pub fn train(
    exp: &Experiment,
    tok: &Tokenizer,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    let tc = &exp.train;
    tc.validate()?;
    let mut cfg = exp.model.clone();
    tc.apply_to(&mut cfg);
    cfg.vocab_size = tok.len();
    cfg.validate()?;
    cfg.check_tree(&exp.tree)?;

    let freq = compute_frequency_table(train_set);
    let train_data = prepare(train_set, tok, cfg.mode, &exp.prep, &freq, cfg.max_positions, exp.execution)?;
    let eval_data = prepare(eval_set, tok, cfg.mode, &exp.prep, &freq, cfg.max_positions, exp.execution)?;
    if train_data.instances.is_empty() {
        return Err(TrainError::Config("training set has no annotated spans".into()));
    }
    let evaluator = Evaluator { exp, prepared: &eval_data, eval: eval_set };

    let mut model = Model::init(cfg, seed::derive(tc.seed, "init"))?;
    let mut state = OptimizerState::new(&model.params, tc.weight_decay);
    let use_dropout = model.config.dropout > 0.0;
    let mut order: Vec<usize> = (0..train_data.instances.len()).collect();

    let mut history = RunHistory::default();
    let mut best: Option<(Model, MetricsReport, Vec<PredictionRecord>)> = None;
    let mut encode_calls_per_epoch = Vec::with_capacity(tc.epochs);
    let (mut loss_sum, mut loss_steps) = (0.0, 0usize);
    let mut step = 0usize;

    let mut record =
        |model: &Model, step: usize, epoch: usize, loss: f64, history: &mut RunHistory| -> Result<(), TrainError> {
            let snapshot = model.clone();
            let (report, preds) = evaluator.run(&snapshot)?;
            history.rows.push(HistoryRow {
                step,
                epoch,
                loss,
                micro_f1: report.micro_f1,
                tree_f1_all: report.tree_f1_all,
                tree_f1_incorrect: report.tree_f1_incorrect,
            });
            if best.as_ref().is_none_or(|(_, b, _)| report.micro_f1 > b.micro_f1) {
                history.best_step = Some(step);
                best = Some((snapshot, report, preds));
            }
            Ok(())
        };

    for epoch in 1..=tc.epochs {
        model.reset_encode_calls();
        order.shuffle(&mut seed::rng(seed::derive_indexed(tc.seed, "shuffle", epoch as u64)));
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_data.instances[i]).collect();
            let step_seed = seed::derive_indexed(tc.seed, "dropout", step as u64);
            let seeds: Vec<Option<u64>> = (0..batch.len())
                .map(|i| use_dropout.then(|| seed::derive_indexed(step_seed, "instance", i as u64)))
                .collect();
            let out = model
                .batch_loss_and_grad(&batch, &exp.tree, &seeds, Strictness::Lenient, exp.execution)
                .map_err(|e| diverged(epoch, step + 1, f64::NAN, &model, Some(&e)))?;
            if !out.loss.is_finite() {
                return Err(diverged(epoch, step + 1, out.loss, &model, None));
            }
            optimizer_step(&mut model.params, &out.grads, &mut state, tc.lr)
                .map_err(|e| diverged(epoch, step + 1, out.loss, &model, Some(&e)))?;
            step += 1;
            loss_sum += out.loss;
            loss_steps += 1;
            if step.is_multiple_of(tc.eval_every) {
                record(&model, step, epoch, loss_sum / loss_steps as f64, &mut history)?;
                (loss_sum, loss_steps) = (0.0, 0);
            }
        }
        encode_calls_per_epoch.push(model.encode_calls());
    }
    if !step.is_multiple_of(tc.eval_every) {
        record(&model, step, tc.epochs, loss_sum / loss_steps.max(1) as f64, &mut history)?;
    }
    let (best, best_report, best_predictions) = best.expect("at least one evaluation");

    Ok(TrainOutcome {
        history,
        best,
        best_report,
        best_predictions,
        encode_calls_per_epoch,
        train_instances: train_data.instances.len(),
    })
}
