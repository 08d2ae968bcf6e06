//! Finite-difference gradient checking on a tiny model. Shared by test
//! targets through `#[path]`.
#![allow(dead_code)]

use hiermiml::hierarchy::HierarchyTree;
use hiermiml::model::{HeadMode, Instance, Mode, Model, ModelConfig, SpanTarget, Strictness};
use hiermiml::par::Execution;
use hiermiml::Technique;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub fn toy_config(tree: &HierarchyTree, lambda: f64, mode: Mode, head_mode: HeadMode) -> ModelConfig {
    ModelConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        vocab_size: 12,
        max_positions: 10,
        classifier_arities: tree.classifier_arities(),
        lambda_train: lambda,
        lambda_eval: lambda,
        mode,
        head_mode,
        dropout: 0.0,
    }
}

pub fn toy_batch() -> Vec<Instance> {
    vec![
        Instance {
            ids: vec![2, 5, 3, 7, 6, 9, 4, 11],
            targets: vec![
                SpanTarget { bop: 0, label: Technique::Doubt, gold: vec![Technique::Doubt, Technique::Repetition] },
                SpanTarget { bop: 2, label: Technique::FlagWaving, gold: vec![Technique::FlagWaving] },
            ],
        },
        Instance {
            ids: vec![8, 2, 10, 3, 5, 1],
            targets: vec![
                SpanTarget { bop: 1, label: Technique::Bandwagon, gold: vec![Technique::Bandwagon] },
                SpanTarget { bop: 3, label: Technique::Slogans, gold: vec![Technique::Slogans] },
            ],
        },
    ]
}

/// Largest |a - n| / max(|a|, |n|, 1e-6) over every scalar parameter.
pub fn max_relative_error(model: &mut Model, tree: &HierarchyTree, batch: &[Instance]) -> f64 {
    let refs: Vec<&Instance> = batch.iter().collect();
    let seeds = vec![None; batch.len()];
    let analytic =
        model.batch_loss_and_grad(&refs, tree, &seeds, Strictness::Strict, Execution::Sequential).unwrap().grads;
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (t, tensor) in analytic.iter().enumerate() {
        for (j, &a) in tensor.iter().enumerate() {
            let original = model.params.slices()[t][j];
            model.params.slices_mut()[t][j] = original + STEP;
            let plus = model.batch_loss(&refs, tree, &seeds, Strictness::Strict).unwrap();
            model.params.slices_mut()[t][j] = original - STEP;
            let minus = model.batch_loss(&refs, tree, &seeds, Strictness::Strict).unwrap();
            model.params.slices_mut()[t][j] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn check(lambda: f64, mode: Mode, head_mode: HeadMode) -> f64 {
    let tree = HierarchyTree::default_tree();
    let cfg = toy_config(&tree, lambda, mode, head_mode);
    // Larger weights than the default init so gradients are not vanishingly small.
    let mut model = Model::init(cfg, 17).unwrap();
    model.params.for_each_mut(|name, xs| {
        if !name.contains("ln") {
            xs.iter_mut().for_each(|x| *x *= 10.0);
        }
    });
    max_relative_error(&mut model, &tree, &toy_batch())
}
