//! Synthetic corpora whose gold labels are recoverable from the text.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Article, CorpusError, Dataset, FrequencyTable, Provenance, SpanAnnotation};
use crate::hierarchy::HierarchyTree;
use crate::seed;
use crate::technique::{Technique, NUM_TECHNIQUES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Each span contains the trigger word of its technique.
    Trigger,
    /// Each span contains one trigger per internal node on the gold path,
    /// naming the depth and the edge taken there.
    Hierarchy,
}

/// Generator settings, readable from `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub articles: usize,
    pub spans_per_article: usize,
    pub filler_vocab: usize,
    pub gap_min: usize,
    pub gap_max: usize,
    pub span_filler_min: usize,
    pub span_filler_max: usize,
    pub rule: LabelRule,
    pub nested_prob: f64,
    pub overlap_prob: f64,
    pub multi_label_prob: f64,
    /// Interchangeable spellings per trigger; each occurrence picks one.
    pub trigger_variants: usize,
    pub first_article_id: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            articles: 40,
            spans_per_article: 4,
            filler_vocab: 200,
            gap_min: 2,
            gap_max: 10,
            span_filler_min: 1,
            span_filler_max: 4,
            rule: LabelRule::Trigger,
            nested_prob: 0.0,
            overlap_prob: 0.0,
            multi_label_prob: 0.0,
            trigger_variants: 1,
            first_article_id: 1000,
        }
    }
}

impl SyntheticConfig {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let cfg: SyntheticConfig = toml::from_str(text).map_err(|e| CorpusError::Synthetic(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: &str| Err(CorpusError::Synthetic(m.to_string()));
        if self.trigger_variants == 0 {
            return fail("trigger_variants must be at least 1");
        }
        if self.gap_min > self.gap_max {
            return fail("gap_min exceeds gap_max");
        }
        if self.span_filler_min > self.span_filler_max {
            return fail("span_filler_min exceeds span_filler_max");
        }
        if self.filler_vocab == 0 && (self.gap_max > 0 || self.span_filler_max > 0) {
            return fail("filler tokens requested with an empty filler vocabulary");
        }
        if self.spans_per_article > 0 && self.gap_max == 0 && self.overlap_prob > 0.0 {
            return fail("overlapping spans need filler between spans");
        }
        for (name, p) in [
            ("nested_prob", self.nested_prob),
            ("overlap_prob", self.overlap_prob),
            ("multi_label_prob", self.multi_label_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::Synthetic(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    /// Label rows emitted by the generator, per technique.
    pub label_counts: FrequencyTable,
}

pub fn trigger_word(t: Technique) -> String {
    format!("tech{}", t.index())
}

pub fn path_trigger_word(depth: usize, edge: usize) -> String {
    format!("lvl{depth}opt{edge}")
}

fn filler(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    format!("fill{}", rng.random_range(0..vocab))
}

struct Builder<'a> {
    cfg: &'a SyntheticConfig,
    tree: &'a HierarchyTree,
    tokens: Vec<String>,
    // (first token, one past last token, labels)
    spans: Vec<(usize, usize, Vec<Technique>)>,
    counts: [usize; NUM_TECHNIQUES],
}

impl Builder<'_> {
    fn triggers(&self, rng: &mut ChaCha8Rng, t: Technique) -> Vec<String> {
        let words = match self.cfg.rule {
            LabelRule::Trigger => vec![trigger_word(t)],
            LabelRule::Hierarchy => {
                self.tree.path_of(t).steps.iter().enumerate().map(|(d, s)| path_trigger_word(d, s.edge)).collect()
            }
        };
        if self.cfg.trigger_variants == 1 {
            return words;
        }
        words.into_iter().map(|w| format!("{w}v{}", rng.random_range(0..self.cfg.trigger_variants))).collect()
    }

    fn labels(&mut self, rng: &mut ChaCha8Rng) -> Vec<Technique> {
        let first = Technique::ALL[rng.random_range(0..NUM_TECHNIQUES)];
        let mut labels = vec![first];
        if rng.random_bool(self.cfg.multi_label_prob) {
            let second = loop {
                let t = Technique::ALL[rng.random_range(0..NUM_TECHNIQUES)];
                if t != first {
                    break t;
                }
            };
            labels.push(second);
        }
        for t in &labels {
            self.counts[t.index()] += 1;
        }
        labels
    }

    /// Filler words and trigger words of `labels` in random order.
    fn span_body(&self, rng: &mut ChaCha8Rng, labels: &[Technique]) -> Vec<String> {
        let n = rng.random_range(self.cfg.span_filler_min..=self.cfg.span_filler_max);
        let mut body: Vec<String> = (0..n).map(|_| filler(rng, self.cfg.filler_vocab)).collect();
        for t in labels {
            for trig in self.triggers(rng, *t) {
                let at = rng.random_range(0..=body.len());
                body.insert(at, trig);
            }
        }
        body
    }

    fn push_gap(&mut self, rng: &mut ChaCha8Rng) {
        let n = rng.random_range(self.cfg.gap_min..=self.cfg.gap_max);
        for _ in 0..n {
            self.tokens.push(filler(rng, self.cfg.filler_vocab));
        }
    }

    fn push_span(&mut self, rng: &mut ChaCha8Rng) {
        let labels = self.labels(rng);
        let body = self.span_body(rng, &labels);
        let start = if rng.random_bool(self.cfg.overlap_prob) {
            // Start inside the previous span so the two cross.
            match self.spans.last() {
                Some(&(ps, pe, _)) if pe == self.tokens.len() && pe - ps >= 2 => rng.random_range(ps + 1..pe),
                _ => self.tokens.len(),
            }
        } else {
            self.tokens.len()
        };
        if rng.random_bool(self.cfg.nested_prob) {
            let inner_labels = self.labels(rng);
            let inner = self.span_body(rng, &inner_labels);
            let split = rng.random_range(0..=body.len());
            self.tokens.extend(body[..split].iter().cloned());
            let inner_start = self.tokens.len();
            self.tokens.extend(inner);
            let inner_end = self.tokens.len();
            self.tokens.extend(body[split..].iter().cloned());
            self.spans.push((start, self.tokens.len(), labels));
            self.spans.push((inner_start, inner_end, inner_labels));
        } else {
            self.tokens.extend(body);
            self.spans.push((start, self.tokens.len(), labels));
        }
    }
}

/// Deterministic per seed. `tree` supplies the gold paths for the
/// hierarchy rule and is ignored by the trigger rule.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    seed: u64,
    tree: &HierarchyTree,
) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(seed, "synthetic"));
    let mut articles = Vec::with_capacity(cfg.articles);
    let mut annotations = Vec::new();
    let mut counts = [0; NUM_TECHNIQUES];
    for a in 0..cfg.articles {
        let id = cfg.first_article_id + a as u64;
        let mut b = Builder { cfg, tree, tokens: Vec::new(), spans: Vec::new(), counts: [0; NUM_TECHNIQUES] };
        b.push_gap(&mut rng);
        for _ in 0..cfg.spans_per_article {
            b.push_span(&mut rng);
            b.push_gap(&mut rng);
        }
        if b.tokens.is_empty() {
            b.tokens.push("empty".to_string());
        }
        // Join with spaces, ending sentences with a period now and then.
        let mut text = String::new();
        let mut char_spans = Vec::with_capacity(b.tokens.len());
        let mut pos = 0;
        for (i, tok) in b.tokens.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                pos += 1;
            }
            let len = tok.chars().count();
            char_spans.push((pos, pos + len));
            text.push_str(tok);
            pos += len;
            if i % 11 == 10 && !b.spans.iter().any(|&(s, e, _)| s <= i && i + 1 < e) {
                text.push('.');
                pos += 1;
            }
        }
        // Spans may coincide in offsets only if generated identically; merge those.
        let mut spans: Vec<SpanAnnotation> = Vec::new();
        for (s, e, labels) in &b.spans {
            let (start, end) = (char_spans[*s].0, char_spans[*e - 1].1);
            match spans.iter_mut().find(|x| x.start == start && x.end == end) {
                Some(x) => {
                    x.labels.extend(labels);
                    x.labels.sort();
                }
                None => spans.push(SpanAnnotation::new(id, start, end, labels.clone())),
            }
        }
        for (c, n) in counts.iter_mut().zip(b.counts) {
            *c += n;
        }
        annotations.extend(spans);
        articles.push(Article::new(id, text));
    }
    Ok(SyntheticCorpus {
        dataset: Dataset::new(articles, annotations, Provenance::Synthetic),
        label_counts: FrequencyTable(counts),
    })
}
