//! Best-match micro-F1, per-class F1, Tree-F1 aggregates and prediction files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::SpanAnnotation;
use crate::hierarchy::HierarchyTree;
use crate::technique::{Technique, NUM_TECHNIQUES};

/// Article id, start and end offset of a span.
type SpanKey = (u64, usize, usize);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("span {article_id}:{start}-{end} has {gold} gold rows but {predicted} predictions")]
    CountMismatch { article_id: u64, start: usize, end: usize, gold: usize, predicted: usize },
    #[error("prediction for span {article_id}:{start}-{end} which has no gold annotation")]
    UnknownSpan { article_id: u64, start: usize, end: usize },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One predicted label row for a gold span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PredictionRecord {
    pub article_id: u64,
    pub start: usize,
    pub end: usize,
    pub technique: Technique,
}

impl PredictionRecord {
    fn key(&self) -> (u64, usize, usize) {
        (self.article_id, self.start, self.end)
    }
}

/// Flattens merged annotations back into one record per label row.
pub fn records_from_annotations(annotations: &[SpanAnnotation]) -> Vec<PredictionRecord> {
    annotations
        .iter()
        .flat_map(|a| {
            a.labels.iter().map(|&technique| PredictionRecord {
                article_id: a.article_id,
                start: a.start,
                end: a.end,
                technique,
            })
        })
        .collect()
}

/// A gold row paired with the prediction credited against it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchedPair {
    pub gold: Technique,
    pub predicted: Technique,
}

impl MatchedPair {
    pub fn is_correct(&self) -> bool {
        self.gold == self.predicted
    }
}

/// Maximum matching inside every span group. Equal labels are paired
/// first (the multiset intersection, which is a maximum matching under
/// label equality); leftovers are paired in enum order.
pub fn match_predictions(
    predictions: &[PredictionRecord],
    golds: &[SpanAnnotation],
) -> Result<Vec<MatchedPair>, EvalError> {
    let mut groups: BTreeMap<SpanKey, (Vec<Technique>, Vec<Technique>)> = BTreeMap::new();
    for g in golds {
        groups.entry(g.key()).or_default().0.extend(&g.labels);
    }
    for p in predictions {
        let (article_id, start, end) = p.key();
        groups.get_mut(&p.key()).ok_or(EvalError::UnknownSpan { article_id, start, end })?.1.push(p.technique);
    }
    let mut pairs = Vec::new();
    for ((article_id, start, end), (mut gold, mut predicted)) in groups {
        if gold.len() != predicted.len() {
            return Err(EvalError::CountMismatch {
                article_id,
                start,
                end,
                gold: gold.len(),
                predicted: predicted.len(),
            });
        }
        gold.sort();
        predicted.sort();
        let (mut gold_left, mut pred_left) = (Vec::new(), Vec::new());
        let (mut i, mut j) = (0, 0);
        while i < gold.len() && j < predicted.len() {
            match gold[i].cmp(&predicted[j]) {
                std::cmp::Ordering::Equal => {
                    pairs.push(MatchedPair { gold: gold[i], predicted: predicted[j] });
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    gold_left.push(gold[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    pred_left.push(predicted[j]);
                    j += 1;
                }
            }
        }
        gold_left.extend(&gold[i..]);
        pred_left.extend(&predicted[j..]);
        pairs.extend(gold_left.into_iter().zip(pred_left).map(|(gold, predicted)| MatchedPair { gold, predicted }));
    }
    Ok(pairs)
}

fn correct_count(pairs: &[MatchedPair]) -> usize {
    pairs.iter().filter(|p| p.is_correct()).count()
}

/// Matched rows over total rows; 0 for an empty gold set.
pub fn micro_f1(predictions: &[PredictionRecord], golds: &[SpanAnnotation]) -> Result<f64, EvalError> {
    let pairs = match_predictions(predictions, golds)?;
    Ok(ratio(correct_count(&pairs), pairs.len()))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold rows of this class.
    pub support: usize,
    pub predicted: usize,
    /// Absent from both gold and predictions; scores are 1 by convention.
    pub vacuous: bool,
}

pub fn per_class_f1(pairs: &[MatchedPair]) -> [ClassScore; NUM_TECHNIQUES] {
    let mut tp = [0usize; NUM_TECHNIQUES];
    let mut gold = [0usize; NUM_TECHNIQUES];
    let mut pred = [0usize; NUM_TECHNIQUES];
    for p in pairs {
        gold[p.gold.index()] += 1;
        pred[p.predicted.index()] += 1;
        if p.is_correct() {
            tp[p.gold.index()] += 1;
        }
    }
    std::array::from_fn(|c| {
        if gold[c] == 0 && pred[c] == 0 {
            return ClassScore { precision: 1.0, recall: 1.0, f1: 1.0, support: 0, predicted: 0, vacuous: true };
        }
        let precision = ratio(tp[c], pred[c]);
        let recall = ratio(tp[c], gold[c]);
        let f1 = if tp[c] == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassScore { precision, recall, f1, support: gold[c], predicted: pred[c], vacuous: false }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeSubset {
    All,
    Incorrect,
}

/// Mean Tree-F1 over the chosen pairs; `None` when the subset is empty.
pub fn tree_f1_aggregate(pairs: &[MatchedPair], tree: &HierarchyTree, subset: TreeSubset) -> Option<f64> {
    let scores: Vec<f64> = pairs
        .iter()
        .filter(|p| subset == TreeSubset::All || !p.is_correct())
        .map(|p| tree.tree_f1_techniques(p.gold, p.predicted))
        .collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub per_class: [ClassScore; NUM_TECHNIQUES],
    pub tree_f1_all: Option<f64>,
    pub tree_f1_incorrect: Option<f64>,
    pub total: usize,
    pub correct: usize,
}

impl MetricsReport {
    pub fn compute(
        predictions: &[PredictionRecord],
        golds: &[SpanAnnotation],
        tree: &HierarchyTree,
    ) -> Result<Self, EvalError> {
        let pairs = match_predictions(predictions, golds)?;
        Ok(Self::from_pairs(&pairs, tree))
    }

    pub fn from_pairs(pairs: &[MatchedPair], tree: &HierarchyTree) -> Self {
        let correct = correct_count(pairs);
        MetricsReport {
            micro_f1: ratio(correct, pairs.len()),
            per_class: per_class_f1(pairs),
            tree_f1_all: tree_f1_aggregate(pairs, tree, TreeSubset::All),
            tree_f1_incorrect: tree_f1_aggregate(pairs, tree, TreeSubset::Incorrect),
            total: pairs.len(),
            correct,
        }
    }

    /// `metric,value` rows followed by one row per technique.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,technique,precision,recall,f1,support,predicted,vacuous\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        let _ = writeln!(out, "micro_f1,,,,{:.6},{},{},", self.micro_f1, self.total, self.correct);
        let _ = writeln!(out, "tree_f1_all,,,,{},,,", opt(self.tree_f1_all));
        let _ = writeln!(out, "tree_f1_incorrect,,,,{},,,", opt(self.tree_f1_incorrect));
        for t in Technique::ALL {
            let s = &self.per_class[t.index()];
            let _ = writeln!(
                out,
                "class,\"{}\",{:.6},{:.6},{:.6},{},{},{}",
                t.name(),
                s.precision,
                s.recall,
                s.f1,
                s.support,
                s.predicted,
                s.vacuous
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "micro-F1           {:.4} ({}/{})", self.micro_f1, self.correct, self.total);
        let _ = writeln!(out, "Tree-F1 all        {}", opt(self.tree_f1_all));
        let _ = writeln!(out, "Tree-F1 incorrect  {}", opt(self.tree_f1_incorrect));
        let _ = writeln!(out, "{:<36} {:>6} {:>6} {:>6} {:>7}", "technique", "P", "R", "F1", "support");
        for t in Technique::ALL {
            let s = &self.per_class[t.index()];
            let flag = if s.vacuous { "  (no support)" } else { "" };
            let _ = writeln!(
                out,
                "{:<36} {:>6.3} {:>6.3} {:>6.3} {:>7}{flag}",
                t.name(),
                s.precision,
                s.recall,
                s.f1,
                s.support
            );
        }
        out
    }
}

/// Submission TSV ordered by (article, start, end, technique name).
pub fn format_predictions(predictions: &[PredictionRecord]) -> String {
    let mut rows: Vec<&PredictionRecord> = predictions.iter().collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.technique.name().cmp(b.technique.name())));
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.article_id, r.technique.name(), r.start, r.end);
    }
    out
}

pub fn write_predictions(predictions: &[PredictionRecord], path: &Path) -> Result<(), EvalError> {
    fs::write(path, format_predictions(predictions))
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Technique::*;

    fn gold(article_id: u64, start: usize, labels: Vec<Technique>) -> SpanAnnotation {
        SpanAnnotation::new(article_id, start, start + 5, labels)
    }

    fn pred(article_id: u64, start: usize, technique: Technique) -> PredictionRecord {
        PredictionRecord { article_id, start, end: start + 5, technique }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let golds = vec![gold(1, 0, vec![Doubt]), gold(1, 10, vec![Slogans])];
        let preds = records_from_annotations(&golds);
        assert_eq!(micro_f1(&preds, &golds).unwrap(), 1.0);
    }

    #[test]
    fn best_match_on_two_label_span() {
        let golds = vec![gold(1, 0, vec![Doubt, Slogans])];
        assert_eq!(micro_f1(&[pred(1, 0, Slogans), pred(1, 0, Doubt)], &golds).unwrap(), 1.0);
        assert_eq!(micro_f1(&[pred(1, 0, Doubt), pred(1, 0, Doubt)], &golds).unwrap(), 0.5);
    }

    #[test]
    fn count_and_span_errors() {
        let golds = vec![gold(1, 0, vec![Doubt, Slogans])];
        assert!(matches!(micro_f1(&[pred(1, 0, Doubt)], &golds), Err(EvalError::CountMismatch { .. })));
        assert!(matches!(micro_f1(&[pred(2, 0, Doubt)], &golds), Err(EvalError::UnknownSpan { .. })));
    }

    #[test]
    fn per_class_hand_fixture() {
        // gold: D, D, S, R, L   pred: D, S, S, R, D
        let golds = vec![
            gold(1, 0, vec![Doubt]),
            gold(1, 10, vec![Doubt]),
            gold(1, 20, vec![Slogans]),
            gold(1, 30, vec![Repetition]),
            gold(1, 40, vec![LoadedLanguage]),
        ];
        let preds = vec![
            pred(1, 0, Doubt),
            pred(1, 10, Slogans),
            pred(1, 20, Slogans),
            pred(1, 30, Repetition),
            pred(1, 40, Doubt),
        ];
        let pairs = match_predictions(&preds, &golds).unwrap();
        let pc = per_class_f1(&pairs);
        let d = pc[Doubt.index()];
        assert_eq!((d.precision, d.recall, d.f1), (0.5, 0.5, 0.5));
        let s = pc[Slogans.index()];
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(pc[Repetition.index()].f1, 1.0);
        let l = pc[LoadedLanguage.index()];
        assert_eq!((l.precision, l.recall, l.f1, l.vacuous), (0.0, 0.0, 0.0, false));
        let w = pc[Whataboutism.index()];
        assert!(w.vacuous && w.f1 == 1.0 && w.support == 0);
    }

    #[test]
    fn single_class_corpus() {
        let golds = vec![gold(1, 0, vec![Doubt]), gold(2, 0, vec![Doubt])];
        let pairs = match_predictions(&records_from_annotations(&golds), &golds).unwrap();
        assert_eq!(per_class_f1(&pairs)[Doubt.index()].f1, 1.0);
    }

    #[test]
    fn tree_f1_subsets() {
        let tree = HierarchyTree::parse("r\n  a\n    Loaded_Language\n    Name_Calling,Labeling\n    Repetition\n    Exaggeration,Minimisation\n    Doubt\n    Appeal_to_fear-prejudice\n    Flag-Waving\n  b\n    Causal_Oversimplification\n    Slogans\n    Appeal_to_Authority\n    Black-and-White_Fallacy\n    Thought-terminating_Cliches\n    Whataboutism,Straw_Men,Red_Herring\n    Bandwagon,Reductio_ad_hitlerum\n").unwrap();
        let correct = vec![MatchedPair { gold: Doubt, predicted: Doubt }];
        assert_eq!(tree_f1_aggregate(&correct, &tree, TreeSubset::All), Some(1.0));
        assert_eq!(tree_f1_aggregate(&correct, &tree, TreeSubset::Incorrect), None);
        let wrong = vec![
            MatchedPair { gold: Doubt, predicted: Slogans },
            MatchedPair { gold: Doubt, predicted: Repetition },
            MatchedPair { gold: Bandwagon, predicted: Whataboutism },
        ];
        let mean = tree_f1_aggregate(&wrong, &tree, TreeSubset::Incorrect).unwrap();
        assert!((mean - 5.0 / 9.0).abs() < 1e-12);
        let mut all = wrong.clone();
        all.push(correct[0]);
        let expected = (1.0 + 3.0 * mean) / 4.0;
        assert!((tree_f1_aggregate(&all, &tree, TreeSubset::All).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn prediction_file_is_sorted_and_stable() {
        let preds = vec![pred(2, 0, Doubt), pred(1, 10, Slogans), pred(1, 10, Doubt), pred(1, 0, Repetition)];
        let text = format_predictions(&preds);
        assert_eq!(text, "1\tRepetition\t0\t5\n1\tDoubt\t10\t15\n1\tSlogans\t10\t15\n2\tDoubt\t0\t5\n");
        let mut reversed = preds.clone();
        reversed.reverse();
        assert_eq!(format_predictions(&reversed), text);
        assert_eq!(format_predictions(&[]), "");
    }

    #[test]
    fn report_renders() {
        let golds = vec![gold(1, 0, vec![Doubt])];
        let report = MetricsReport::compute(&[pred(1, 0, Doubt)], &golds, &HierarchyTree::default_tree()).unwrap();
        assert_eq!((report.total, report.correct), (1, 1));
        assert!(report.to_csv().starts_with("metric,"));
        assert!(report.to_text().contains("micro-F1           1.0000 (1/1)"));
    }
}
