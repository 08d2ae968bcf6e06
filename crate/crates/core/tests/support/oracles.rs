//! Reference implementations written independently of the library's
//! algorithms. Shared by test targets through `#[path]`.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hiermiml::corpus::SpanAnnotation;
use hiermiml::evaluation::PredictionRecord;
use hiermiml::hierarchy::{HierarchyTree, NodeId};
use hiermiml::windowing::{insert_markers, make_windows, TokenizedArticle, Tokenizer};
use hiermiml::{Technique, NUM_TECHNIQUES};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Article id, start and end offset of a span.
type SpanKey = (u64, usize, usize);

/// Node ids from `node` up to the root, following parent links.
pub fn root_path(tree: &HierarchyTree, node: NodeId) -> Vec<NodeId> {
    let mut path = vec![node];
    let mut cur = node;
    while let Some(p) = tree.node(cur).unwrap().parent {
        path.push(p);
        cur = p;
    }
    path
}

/// F1 of the two root paths seen as node sets.
pub fn tree_f1_oracle(tree: &HierarchyTree, gold: NodeId, pred: NodeId) -> f64 {
    let g = root_path(tree, gold);
    let p = root_path(tree, pred);
    let shared = p.iter().filter(|n| g.contains(n)).count() as f64;
    let precision = shared / p.len() as f64;
    let recall = shared / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Best match by trying every ordering of each group's predictions.
pub fn best_match_oracle(predictions: &[PredictionRecord], golds: &[SpanAnnotation]) -> f64 {
    let mut groups: BTreeMap<SpanKey, (Vec<Technique>, Vec<Technique>)> = BTreeMap::new();
    for g in golds {
        groups.entry(g.key()).or_default().0.extend(&g.labels);
    }
    for p in predictions {
        groups.get_mut(&(p.article_id, p.start, p.end)).unwrap().1.push(p.technique);
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for (gold, pred) in groups.values() {
        assert_eq!(gold.len(), pred.len());
        total += gold.len();
        correct += permutations(pred)
            .iter()
            .map(|perm| perm.iter().zip(gold).filter(|(a, b)| a == b).count())
            .max()
            .unwrap_or(0);
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

fn technique(rng: &mut ChaCha8Rng, pool: usize) -> Technique {
    Technique::from_index(rng.random_range(0..pool)).unwrap()
}

/// Random gold spans with groups of 1..=`max_group` labels, and one
/// prediction row per gold row in scrambled order. A small label pool makes
/// duplicate labels and partial matches common.
pub fn random_scorer_fixture(rng: &mut ChaCha8Rng, max_group: usize) -> (Vec<SpanAnnotation>, Vec<PredictionRecord>) {
    let pool = rng.random_range(2..=NUM_TECHNIQUES);
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for article_id in 0..rng.random_range(1..4u64) {
        for s in 0..rng.random_range(1..6usize) {
            let (start, end) = (s * 10, s * 10 + rng.random_range(1..10));
            let n = rng.random_range(1..=max_group);
            let labels: Vec<Technique> = (0..n).map(|_| technique(rng, pool)).collect();
            for i in 0..n {
                let t = if rng.random_bool(0.5) { labels[(i + 1) % n] } else { technique(rng, pool) };
                preds.push(PredictionRecord { article_id, start, end, technique: t });
            }
            golds.push(SpanAnnotation::new(article_id, start, end, labels));
        }
    }
    // Scramble the row order across groups.
    for i in (1..preds.len()).rev() {
        preds.swap(i, rng.random_range(0..=i));
    }
    (golds, preds)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WindowStats {
    pub windows: usize,
    pub spans: usize,
    pub truncated: usize,
    /// Windows where a truncated span encloses another truncated span.
    pub nested_truncations: usize,
}

impl std::ops::AddAssign for WindowStats {
    fn add_assign(&mut self, o: Self) {
        self.windows += o.windows;
        self.spans += o.spans;
        self.truncated += o.truncated;
        self.nested_truncations += o.nested_truncations;
    }
}

/// Windows the article and checks the structural guarantees directly on
/// token ids.
pub fn check_window_structure(
    ta: &TokenizedArticle,
    spans: &[SpanAnnotation],
    tok: &Tokenizer,
    window_size: usize,
    stride: usize,
) -> Result<WindowStats, String> {
    let ms = insert_markers(ta, spans, tok).map_err(|e| e.to_string())?;
    if ms.strip_markers() != ta.ids {
        return Err("marked sequence does not strip back to the article".into());
    }
    let ws = make_windows(&ms, window_size, stride).map_err(|e| e.to_string())?;
    let token_range: Vec<(usize, usize)> = spans.iter().map(|s| ta.token_range(s.start, s.end).unwrap()).collect();
    let mut stats = WindowStats { windows: ws.windows.len(), spans: spans.len(), ..Default::default() };

    for (sid, s) in ms.spans.iter().enumerate() {
        if !ws.windows.iter().any(|w| w.source.contains(&Some(s.bop))) {
            return Err(format!("span {sid}: <bop> appears in no window"));
        }
    }
    for w in &ws.windows {
        if w.len() > window_size {
            return Err(format!("window {} has {} tokens", w.ordinal, w.len()));
        }
        let bops = w.ids.iter().filter(|&&id| tok.is_bop(id)).count();
        let eops = w.ids.iter().filter(|&&id| tok.is_marker(id) && !tok.is_bop(id)).count();
        if bops != eops {
            return Err(format!("window {}: {bops} <bop> vs {eops} <eop>", w.ordinal));
        }
        for ws_span in &w.spans {
            let m = ms.spans[ws_span.span_id].marker;
            if w.ids[ws_span.bop] != tok.bop(m) || w.ids[ws_span.eop] != tok.eop(m) || ws_span.eop <= ws_span.bop {
                return Err(format!("window {}: markers of span {} misplaced", w.ordinal, ws_span.span_id));
            }
        }
        // Appended end markers fill the tail, innermost (highest index) first.
        let cut: Vec<_> = w.spans.iter().filter(|s| s.truncated).collect();
        stats.truncated += cut.len();
        let mut tail: Vec<_> = cut.iter().map(|s| (s.eop, ms.spans[s.span_id].marker)).collect();
        tail.sort();
        if tail.iter().enumerate().any(|(i, &(pos, _))| pos != w.len() - tail.len() + i) {
            return Err(format!("window {}: appended <eop>s are not at the end", w.ordinal));
        }
        if tail.windows(2).any(|p| p[0].1 < p[1].1) {
            return Err(format!("window {}: truncated spans close outer before inner", w.ordinal));
        }
        // Any nested pair present in the window closes inner first.
        let mut nested_cut = false;
        for a in &w.spans {
            for b in &w.spans {
                let (ra, rb) = (token_range[a.span_id], token_range[b.span_id]);
                let strictly_inside = ra.0 <= rb.0 && rb.1 <= ra.1 && ra != rb;
                if strictly_inside && b.eop > a.eop {
                    return Err(format!(
                        "window {}: span {} closes after its enclosing span {}",
                        w.ordinal, b.span_id, a.span_id
                    ));
                }
                nested_cut |= strictly_inside && a.truncated && b.truncated;
            }
        }
        stats.nested_truncations += usize::from(nested_cut);
        // Removing markers leaves a contiguous slice of the article.
        let content: Vec<u32> = w.ids.iter().copied().filter(|&id| !tok.is_marker(id)).collect();
        if let Some(first) = w.source.iter().flatten().find_map(|&p| ms.source[p]) {
            if ta.ids.get(first..first + content.len()) != Some(&content[..]) {
                return Err(format!("window {}: content is not the article slice at {first}", w.ordinal));
            }
        } else if !content.is_empty() {
            return Err(format!("window {}: content without source", w.ordinal));
        }
    }
    Ok(stats)
}
