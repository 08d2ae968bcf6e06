//! Flat and auxiliary heads: distributions, losses, label selection.

use ndarray::ArrayView1;

use super::{ModelError, Parameters};
use crate::hierarchy::{HierarchyTree, LeafPath, NodeId, NodeKind};
use crate::technique::{Technique, NUM_TECHNIQUES};

pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// How a zero-probability gold event is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Report [`ModelError::ZeroProbability`].
    Strict,
    /// Clamp the probability at 1e-12.
    #[default]
    Lenient,
}

pub(crate) fn neg_log_prob(log_p: f64, strictness: Strictness) -> Result<f64, ModelError> {
    if log_p.exp() == 0.0 {
        return match strictness {
            Strictness::Strict => Err(ModelError::ZeroProbability),
            Strictness::Lenient => Ok(-PROB_FLOOR.ln()),
        };
    }
    Ok(-log_p.max(PROB_FLOOR.ln()))
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn flat_logits(h: ArrayView1<f64>, params: &Parameters) -> Vec<f64> {
    params.flat.dot(&h).to_vec()
}

pub(crate) fn node_logits(h: ArrayView1<f64>, params: &Parameters, classifier: usize) -> Vec<f64> {
    params.aux[classifier].dot(&h).to_vec()
}

/// p_flat(c) ∝ exp(h · w_c) over the 14 techniques.
pub fn flat_distribution(h: ArrayView1<f64>, params: &Parameters) -> Vec<f64> {
    softmax(&flat_logits(h, params))
}

/// Edge distribution of the classifier at internal node `node`.
pub fn aux_node_distribution(
    h: ArrayView1<f64>,
    params: &Parameters,
    tree: &HierarchyTree,
    node: NodeId,
) -> Result<Vec<f64>, ModelError> {
    match tree.node(node).map_err(|_| ModelError::NotAClassifier(node.0))?.kind {
        NodeKind::Internal { classifier } => Ok(softmax(&node_logits(h, params, classifier))),
        NodeKind::Leaf(_) => Err(ModelError::NotAClassifier(node.0)),
    }
}

/// Path product of edge probabilities for every leaf, accumulated in log
/// space. `node_probs` is indexed by classifier.
pub fn aux_leaf_distribution(node_probs: &[Vec<f64>], tree: &HierarchyTree) -> Vec<f64> {
    let logs: Vec<Vec<f64>> = node_probs.iter().map(|p| p.iter().map(|x| x.ln()).collect()).collect();
    aux_leaf_from_logs(&logs, tree)
}

pub(crate) fn aux_leaf_from_logs(node_log_probs: &[Vec<f64>], tree: &HierarchyTree) -> Vec<f64> {
    Technique::ALL
        .iter()
        .map(|&t| tree.path_of(t).steps.iter().map(|s| node_log_probs[s.classifier][s.edge]).sum::<f64>().exp())
        .collect()
}

/// (1 - λ) p_flat + λ p_aux; the endpoints return the operand unchanged.
pub fn combined_distribution(p_flat: &[f64], p_aux: &[f64], lambda_eval: f64) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=1.0).contains(&lambda_eval) {
        return Err(ModelError::InvalidLambda(lambda_eval));
    }
    if lambda_eval == 0.0 {
        return Ok(p_flat.to_vec());
    }
    if lambda_eval == 1.0 {
        return Ok(p_aux.to_vec());
    }
    Ok(p_flat.iter().zip(p_aux).map(|(f, a)| (1.0 - lambda_eval) * f + lambda_eval * a).collect())
}

pub fn flat_loss(p_flat: &[f64], gold: Technique, strictness: Strictness) -> Result<f64, ModelError> {
    neg_log_prob(p_flat[gold.index()].ln(), strictness)
}

/// Mean negative log-probability of the gold edges along `path`.
pub fn aux_loss(node_probs: &[Vec<f64>], path: &LeafPath, strictness: Strictness) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for step in &path.steps {
        total += neg_log_prob(node_probs[step.classifier][step.edge].ln(), strictness)?;
    }
    Ok(total / path.len() as f64)
}

pub fn overall_loss(l_flat: f64, l_aux: f64, lambda_train: f64) -> f64 {
    (1.0 - lambda_train) * l_flat + lambda_train * l_aux
}

/// Summed per-class binary cross-entropy of sigmoid(h · w_c) against the
/// multi-hot gold set.
pub fn single_instance_bce_loss(h: ArrayView1<f64>, params: &Parameters, labels: &[Technique]) -> f64 {
    bce_from_logits(&flat_logits(h, params), labels)
}

pub(crate) fn multi_hot(labels: &[Technique]) -> [f64; NUM_TECHNIQUES] {
    let mut t = [0.0; NUM_TECHNIQUES];
    for l in labels {
        t[l.index()] = 1.0;
    }
    t
}

pub(crate) fn bce_from_logits(logits: &[f64], labels: &[Technique]) -> f64 {
    let target = multi_hot(labels);
    logits.iter().zip(target).map(|(&z, t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()).sum()
}

/// The `count` most probable techniques, ties to the smaller enum index.
pub fn predict_labels(probs: &[f64], count: usize) -> Result<Vec<Technique>, ModelError> {
    if count == 0 || count > NUM_TECHNIQUES {
        return Err(ModelError::LabelCount(count));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(count).map(|i| Technique::ALL[i]).collect())
}
