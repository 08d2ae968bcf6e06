//! Turns a dataset into encoder instances and maps spans back to predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{rarer_label, Dataset, FrequencyTable, SpanAnnotation};
use crate::evaluation::PredictionRecord;
use crate::hierarchy::HierarchyTree;
use crate::model::{predict_labels, EncoderOptions, Instance, Mode, Model, ModelError, SpanTarget};
use crate::par::{self, Execution};
use crate::windowing::{
    insert_markers, make_windows, primary_window_for_span, single_instance_example, Tokenizer, WindowError,
    DEFAULT_MARKER_BUDGET,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub window_size: usize,
    pub stride: usize,
    /// Tokens of context on each side of a single-instance example.
    pub context: usize,
    pub marker_budget: usize,
    pub min_frequency: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            window_size: 512,
            stride: 256,
            context: 256,
            marker_budget: DEFAULT_MARKER_BUDGET,
            min_frequency: 1,
        }
    }
}

/// Where a gold span is read out at inference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanRef {
    pub annotation: SpanAnnotation,
    /// Instance holding the span's primary window (or its own example).
    pub instance: usize,
    pub bop: usize,
}

/// Encoder inputs of one dataset. Instances without spans are dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Prepared {
    pub instances: Vec<Instance>,
    pub spans: Vec<SpanRef>,
}

impl Prepared {
    /// Training targets per encoder input.
    pub fn spans_per_instance(&self) -> f64 {
        let targets: usize = self.instances.iter().map(|i| i.targets.len()).sum();
        targets as f64 / self.instances.len().max(1) as f64
    }

    /// Distinct instances read at inference.
    pub fn inference_instances(&self) -> usize {
        let mut ids: Vec<usize> = self.spans.iter().map(|s| s.instance).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

fn target(ann: &SpanAnnotation, bop: usize, freq: &FrequencyTable) -> SpanTarget {
    SpanTarget { bop, label: rarer_label(&ann.labels, freq), gold: ann.labels.clone() }
}

fn prepare_article(
    dataset: &Dataset,
    article_id: u64,
    tok: &Tokenizer,
    mode: Mode,
    prep: &PrepConfig,
    freq: &FrequencyTable,
    max_positions: usize,
) -> Result<Prepared, WindowError> {
    let article = dataset.article(article_id).expect("article listed by the dataset");
    let annotations = dataset.annotations_for(article_id);
    let ta = tok.tokenize(&article.text);
    let mut out = Prepared::default();
    match mode {
        Mode::Miml => {
            let ms = insert_markers(&ta, annotations, tok)?;
            let ws = make_windows(&ms, prep.window_size, prep.stride)?;
            let mut instance_of = BTreeMap::new();
            for w in &ws.windows {
                if w.spans.is_empty() {
                    continue;
                }
                instance_of.insert(w.ordinal, out.instances.len());
                let targets = w.spans.iter().map(|s| target(&annotations[s.span_id], s.bop, freq)).collect();
                out.instances.push(Instance { ids: w.ids.clone(), targets });
            }
            for (span_id, ann) in annotations.iter().enumerate() {
                let ordinal = primary_window_for_span(&ws, span_id)?;
                let bop = ws.windows[ordinal].span(span_id).expect("primary window holds the span").bop;
                out.spans.push(SpanRef { annotation: ann.clone(), instance: instance_of[&ordinal], bop });
            }
        }
        Mode::SingleInstance => {
            for (span_id, ann) in annotations.iter().enumerate() {
                let ex = single_instance_example(&ta, ann, prep.context, tok)
                    .map_err(|_| WindowError::SpanOverlapsNoToken { span_id, start: ann.start, end: ann.end })?
                    .fit_to(max_positions);
                out.spans.push(SpanRef { annotation: ann.clone(), instance: out.instances.len(), bop: ex.bop });
                out.instances.push(Instance { ids: ex.ids, targets: vec![target(ann, ex.bop, freq)] });
            }
        }
    }
    Ok(out)
}

/// Windows every annotated article (MIML) or builds one example per span
/// (single-instance). Training labels use the rarer-label rule under `freq`.
pub fn prepare(
    dataset: &Dataset,
    tok: &Tokenizer,
    mode: Mode,
    prep: &PrepConfig,
    freq: &FrequencyTable,
    max_positions: usize,
    exec: Execution,
) -> Result<Prepared, TrainError> {
    if mode == Mode::Miml && prep.window_size > max_positions {
        return Err(TrainError::Config(format!(
            "window size {} exceeds the encoder's {} positions",
            prep.window_size, max_positions
        )));
    }
    let ids: Vec<u64> =
        dataset.articles().iter().map(|a| a.id).filter(|&id| !dataset.annotations_for(id).is_empty()).collect();
    let parts = par::map(&ids, exec, |_, &id| prepare_article(dataset, id, tok, mode, prep, freq, max_positions));
    let mut all = Prepared::default();
    for part in parts {
        let part = part?;
        let base = all.instances.len();
        all.instances.extend(part.instances);
        all.spans.extend(part.spans.into_iter().map(|s| SpanRef { instance: s.instance + base, ..s }));
    }
    Ok(all)
}

/// Top known-count techniques of p_ovr for every span, one encoder pass
/// per distinct instance.
pub fn predict(
    model: &Model,
    prepared: &Prepared,
    tree: &HierarchyTree,
    exec: Execution,
) -> Result<Vec<PredictionRecord>, TrainError> {
    let mut by_instance: BTreeMap<usize, Vec<&SpanRef>> = BTreeMap::new();
    for s in &prepared.spans {
        by_instance.entry(s.instance).or_default().push(s);
    }
    let groups: Vec<(usize, Vec<&SpanRef>)> = by_instance.into_iter().collect();
    let parts = par::map(&groups, exec, |_, (instance, spans)| -> Result<Vec<PredictionRecord>, ModelError> {
        let bops: Vec<usize> = spans.iter().map(|s| s.bop).collect();
        let outputs = model.forward(&prepared.instances[*instance].ids, &bops, tree, EncoderOptions::default())?;
        let mut records = Vec::new();
        for (span, out) in spans.iter().zip(outputs) {
            let ann = &span.annotation;
            for technique in predict_labels(&out.p_ovr, ann.known_count())? {
                records.push(PredictionRecord {
                    article_id: ann.article_id,
                    start: ann.start,
                    end: ann.end,
                    technique,
                });
            }
        }
        Ok(records)
    });
    let mut records = Vec::new();
    for part in parts {
        records.extend(part?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_frequency_table, Article, Provenance};
    use crate::model::ModelConfig;
    use crate::technique::Technique::*;

    fn dataset() -> Dataset {
        let text = "one two three four five six seven eight nine ten";
        let anns = vec![
            SpanAnnotation::new(1, 0, 7, vec![Doubt, Slogans]),
            SpanAnnotation::new(1, 4, 13, vec![Slogans]),
            SpanAnnotation::new(1, 40, 49, vec![Bandwagon]),
        ];
        Dataset::new(vec![Article::new(1, text), Article::new(2, "no spans here")], anns, Provenance::Synthetic)
    }

    #[test]
    fn miml_windows_share_spans() {
        let ds = dataset();
        let tok = Tokenizer::build(&ds, 1, 8).unwrap();
        let freq = compute_frequency_table(&ds);
        let prep = PrepConfig { window_size: 12, stride: 6, ..PrepConfig::default() };
        let p = prepare(&ds, &tok, Mode::Miml, &prep, &freq, 16, Execution::Sequential).unwrap();
        assert_eq!(p.spans.len(), 3);
        assert!(p.instances.iter().all(|i| !i.targets.is_empty() && i.ids.len() <= 12));
        let first = &p.instances[p.spans[0].instance];
        // {Doubt, Slogans}: Doubt is rarer (1 vs 2).
        let t = first.targets.iter().find(|t| t.bop == p.spans[0].bop).unwrap();
        assert_eq!(t.label, Doubt);
        assert_eq!(first.ids[p.spans[0].bop], tok.bop(0));
    }

    #[test]
    fn single_instance_one_example_per_span() {
        let ds = dataset();
        let tok = Tokenizer::build(&ds, 1, 8).unwrap();
        let freq = compute_frequency_table(&ds);
        let prep = PrepConfig { context: 2, ..PrepConfig::default() };
        let p = prepare(&ds, &tok, Mode::SingleInstance, &prep, &freq, 512, Execution::Sequential).unwrap();
        assert_eq!(p.instances.len(), 3);
        assert_eq!(p.inference_instances(), 3);
        assert_eq!(p.instances[0].ids.len(), 2 + 2 + 2);
    }

    #[test]
    fn window_larger_than_positions_is_rejected() {
        let ds = dataset();
        let tok = Tokenizer::build(&ds, 1, 8).unwrap();
        let freq = compute_frequency_table(&ds);
        let err = prepare(&ds, &tok, Mode::Miml, &PrepConfig::default(), &freq, 64, Execution::Sequential);
        assert!(matches!(err, Err(TrainError::Config(_))));
    }

    #[test]
    fn prediction_rows_follow_known_counts() {
        let ds = dataset();
        let tok = Tokenizer::build(&ds, 1, 8).unwrap();
        let freq = compute_frequency_table(&ds);
        let prep = PrepConfig { window_size: 12, stride: 6, ..PrepConfig::default() };
        let p = prepare(&ds, &tok, Mode::Miml, &prep, &freq, 16, Execution::Sequential).unwrap();
        let tree = HierarchyTree::default_tree();
        let mut cfg = ModelConfig::desk(&tree, tok.len());
        cfg.dim = 8;
        cfg.max_positions = 16;
        let model = Model::init(cfg, 2).unwrap();
        let preds = predict(&model, &p, &tree, Execution::Sequential).unwrap();
        assert_eq!(preds.len(), ds.label_rows());
        assert_eq!(model.encode_calls(), p.inference_instances());
    }
}
