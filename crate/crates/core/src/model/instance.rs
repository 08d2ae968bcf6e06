use ndarray::{Array1, Array2, ArrayView1};

use super::encoder::EncoderOptions;
use super::heads::{self, Strictness};
use super::{Gradients, Mode, Model, ModelError, Parameters};
use crate::hierarchy::HierarchyTree;
use crate::par::{self, Execution};
use crate::technique::Technique;

/// A span to classify inside an encoder input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanTarget {
    /// Position of the span's `<bop>` marker.
    pub bop: usize,
    /// Single training label (the rarer gold label).
    pub label: Technique,
    /// Full gold label rows.
    pub gold: Vec<Technique>,
}

/// One encoder input: a window (MIML) or a single-span example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub ids: Vec<u32>,
    pub targets: Vec<SpanTarget>,
}

/// Per-span outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct SpanForward {
    pub h: Array1<f64>,
    pub p_flat: Vec<f64>,
    /// Edge distribution per classifier.
    pub p_nodes: Vec<Vec<f64>>,
    pub p_aux: Vec<f64>,
    pub p_ovr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub loss: f64,
    pub grads: Gradients,
}

fn outer_accumulate(dw: &mut Array2<f64>, dlogits: &[f64], h: ArrayView1<f64>) {
    for (mut row, &d) in dw.rows_mut().into_iter().zip(dlogits) {
        row.scaled_add(d, &h);
    }
}

fn back_through_head(w: &Array2<f64>, dlogits: &[f64], dh: &mut Array1<f64>) {
    for (row, &d) in w.rows().into_iter().zip(dlogits) {
        dh.scaled_add(d, &row);
    }
}

impl Model {
    /// Hidden state at the `<bop>` position.
    pub fn span_representation<'a>(
        &self,
        hidden: &'a Array2<f64>,
        bop: usize,
    ) -> Result<ArrayView1<'a, f64>, ModelError> {
        if bop >= hidden.nrows() {
            return Err(ModelError::PositionOutOfRange(bop));
        }
        Ok(hidden.row(bop))
    }

    /// All head distributions for one span representation.
    pub fn span_forward(&self, h: ArrayView1<f64>, tree: &HierarchyTree) -> SpanForward {
        let p_flat = heads::flat_distribution(h, &self.params);
        let logs: Vec<Vec<f64>> =
            (0..self.params.aux.len()).map(|k| heads::log_softmax(&heads::node_logits(h, &self.params, k))).collect();
        let p_aux = heads::aux_leaf_from_logs(&logs, tree);
        let p_nodes = logs.iter().map(|l| l.iter().map(|x| x.exp()).collect()).collect();
        let p_ovr = heads::combined_distribution(&p_flat, &p_aux, self.config.effective_lambda_eval())
            .expect("validated lambda");
        SpanForward { h: h.to_owned(), p_flat, p_nodes, p_aux, p_ovr }
    }

    /// One encoder pass serving every span of the input.
    pub fn forward(
        &self,
        ids: &[u32],
        bops: &[usize],
        tree: &HierarchyTree,
        opts: EncoderOptions,
    ) -> Result<Vec<SpanForward>, ModelError> {
        let cache = self.encode(ids, opts)?;
        bops.iter().map(|&b| Ok(self.span_forward(self.span_representation(&cache.hidden, b)?, tree))).collect()
    }

    /// Mean l_ovr over the instance's spans; adds its gradient into `grads`.
    pub fn instance_loss_and_grad(
        &self,
        inst: &Instance,
        tree: &HierarchyTree,
        dropout_seed: Option<u64>,
        strictness: Strictness,
        grads: &mut Parameters,
    ) -> Result<f64, ModelError> {
        if inst.targets.is_empty() {
            return Ok(0.0);
        }
        let cache = self.encode(&inst.ids, EncoderOptions { dropout_seed, force_uniform_attention: false })?;
        let lambda = self.config.effective_lambda_train();
        let m = inst.targets.len() as f64;
        let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
        let mut total = 0.0;
        for target in &inst.targets {
            let h = self.span_representation(&cache.hidden, target.bop)?;
            let logits = heads::flat_logits(h, &self.params);
            let mut dh = Array1::zeros(h.len());

            let (l_flat, mut d_flat) = match self.config.mode {
                Mode::Miml => {
                    let logp = heads::log_softmax(&logits);
                    let loss = heads::neg_log_prob(logp[target.label.index()], strictness)?;
                    let mut d: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                    d[target.label.index()] -= 1.0;
                    (loss, d)
                }
                Mode::SingleInstance => {
                    let t = heads::multi_hot(&target.gold);
                    let d = logits.iter().zip(t).map(|(&z, t)| heads::sigmoid(z) - t).collect();
                    (heads::bce_from_logits(&logits, &target.gold), d)
                }
            };
            if lambda < 1.0 {
                d_flat.iter_mut().for_each(|d| *d *= (1.0 - lambda) / m);
                outer_accumulate(&mut grads.flat, &d_flat, h);
                back_through_head(&self.params.flat, &d_flat, &mut dh);
            }

            let mut l_aux = 0.0;
            if lambda > 0.0 {
                let path = tree.path_of(target.label);
                let steps = path.len() as f64;
                for step in &path.steps {
                    let logp = heads::log_softmax(&heads::node_logits(h, &self.params, step.classifier));
                    l_aux += heads::neg_log_prob(logp[step.edge], strictness)? / steps;
                    let mut d: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                    d[step.edge] -= 1.0;
                    d.iter_mut().for_each(|x| *x *= lambda / (steps * m));
                    outer_accumulate(&mut grads.aux[step.classifier], &d, h);
                    back_through_head(&self.params.aux[step.classifier], &d, &mut dh);
                }
            }
            total += heads::overall_loss(l_flat, l_aux, lambda);
            let mut row = d_hidden.row_mut(target.bop);
            row += &dh;
        }
        self.encode_backward(&cache, &d_hidden, grads);
        let loss = total / m;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss"));
        }
        Ok(loss)
    }

    /// Batch-mean loss and gradient. Per-instance work runs under `exec`;
    /// the reduction is sequential in batch order.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[&Instance],
        tree: &HierarchyTree,
        dropout_seeds: &[Option<u64>],
        strictness: Strictness,
        exec: Execution,
    ) -> Result<BatchOutput, ModelError> {
        assert_eq!(batch.len(), dropout_seeds.len());
        let pairs: Vec<(&Instance, Option<u64>)> = batch.iter().copied().zip(dropout_seeds.iter().copied()).collect();
        let parts = par::map(&pairs, exec, |_, (inst, seed)| {
            let mut g = self.params.zeros_like();
            self.instance_loss_and_grad(inst, tree, *seed, strictness, &mut g).map(|l| (l, g))
        });
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for part in parts {
            let (l, g) = part?;
            loss += l * scale;
            grads.add_scaled(&g, scale);
        }
        if !grads.is_finite() {
            return Err(ModelError::NonFinite("gradient"));
        }
        Ok(BatchOutput { loss, grads })
    }

    /// Batch-mean loss without gradients.
    pub fn batch_loss(
        &self,
        batch: &[&Instance],
        tree: &HierarchyTree,
        dropout_seeds: &[Option<u64>],
        strictness: Strictness,
    ) -> Result<f64, ModelError> {
        Ok(self.batch_loss_and_grad(batch, tree, dropout_seeds, strictness, Execution::Sequential)?.loss)
    }
}
