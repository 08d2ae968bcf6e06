//! Tokenization, span marker insertion and stride windowing.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, SpanAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("span {span_id} [{start}, {end}) overlaps no token")]
    SpanOverlapsNoToken { span_id: usize, start: usize, end: usize },
    #[error("{spans} spans exceed the marker budget of {budget}")]
    MarkerBudget { spans: usize, budget: usize },
    #[error("window size {window_size} must exceed stride {stride} > 0")]
    InvalidStride { window_size: usize, stride: usize },
    #[error("window at offset {offset} cannot hold the {needed} end markers it must append")]
    WindowTooSmall { offset: usize, needed: usize },
    #[error("span {0} appears in no window")]
    SpanNotCovered(usize),
    #[error("vocabulary line {line}: {message}")]
    Vocab { line: usize, message: String },
}

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const FIRST_MARKER: u32 = 2;
pub const DEFAULT_MARKER_BUDGET: usize = 64;

/// Whitespace + punctuation splitter over a corpus vocabulary. Ids 0 and 1
/// are `<pad>` and `<unk>`, followed by `<bop0..>` and `<eop0..>`, then
/// corpus tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    tokens: Vec<String>,
    marker_budget: usize,
}

/// Splits on whitespace, emitting every non-alphanumeric character as its
/// own token. Yields lowercased tokens with their character ranges.
pub fn split_tokens(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let flush = |word: &mut String, start: usize, end: usize, out: &mut Vec<(String, usize, usize)>| {
        if !word.is_empty() {
            out.push((std::mem::take(word), start, end));
        }
    };
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            flush(&mut word, word_start, pos, &mut out);
        } else if ch.is_alphanumeric() {
            if word.is_empty() {
                word_start = pos;
            }
            word.extend(ch.to_lowercase());
        } else {
            flush(&mut word, word_start, pos, &mut out);
            out.push((ch.to_lowercase().collect(), pos, pos + 1));
        }
    }
    let end = text.chars().count();
    flush(&mut word, word_start, end, &mut out);
    out
}

impl Tokenizer {
    fn with_tokens(corpus_tokens: impl IntoIterator<Item = String>, marker_budget: usize) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend((0..marker_budget).map(|n| format!("<bop{n}>")));
        tokens.extend((0..marker_budget).map(|n| format!("<eop{n}>")));
        tokens.extend(corpus_tokens);
        let vocab = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Tokenizer { vocab, tokens, marker_budget }
    }

    /// Vocabulary of tokens seen at least `min_frequency` times, ordered by
    /// descending frequency then lexicographically.
    pub fn build(corpus: &Dataset, min_frequency: usize, marker_budget: usize) -> Result<Self, WindowError> {
        if corpus.articles().is_empty() {
            return Err(WindowError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for article in corpus.articles() {
            for (tok, _, _) in split_tokens(&article.text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_frequency.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::with_tokens(kept.into_iter().map(|(t, _)| t), marker_budget))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn marker_budget(&self) -> usize {
        self.marker_budget
    }

    pub fn bop(&self, n: usize) -> u32 {
        assert!(n < self.marker_budget);
        FIRST_MARKER + n as u32
    }

    pub fn eop(&self, n: usize) -> u32 {
        assert!(n < self.marker_budget);
        FIRST_MARKER + (self.marker_budget + n) as u32
    }

    pub fn is_marker(&self, id: u32) -> bool {
        id >= FIRST_MARKER && id < FIRST_MARKER + 2 * self.marker_budget as u32
    }

    pub fn is_bop(&self, id: u32) -> bool {
        id >= FIRST_MARKER && id < FIRST_MARKER + self.marker_budget as u32
    }

    pub fn id(&self, token: &str) -> u32 {
        self.vocab.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn tokenize(&self, text: &str) -> TokenizedArticle {
        let (ids, char_spans) = split_tokens(text).into_iter().map(|(t, s, e)| (self.id(&t), (s, e))).unzip();
        TokenizedArticle { ids, char_spans }
    }

    /// `token \t id` lines in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{t}\t{i}").unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, WindowError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, id) =
                line.split_once('\t').ok_or(WindowError::Vocab { line: i + 1, message: "missing tab".into() })?;
            if id.trim().parse::<usize>().ok() != Some(i) {
                return Err(WindowError::Vocab { line: i + 1, message: format!("expected id {i}") });
            }
            tokens.push(tok.to_string());
        }
        let budget = tokens.iter().filter(|t| t.starts_with("<bop")).count();
        let corpus: Vec<String> = tokens.iter().skip(2 + 2 * budget).cloned().collect();
        let tok = Self::with_tokens(corpus, budget);
        if tok.tokens != tokens {
            return Err(WindowError::Vocab { line: 0, message: "reserved token layout mismatch".into() });
        }
        Ok(tok)
    }

    /// Hex SHA-256 of the TSV form; checkpoints record it.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedArticle {
    pub ids: Vec<u32>,
    /// Character range `[start, end)` of each token in the article text.
    pub char_spans: Vec<(usize, usize)>,
}

impl TokenizedArticle {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// First and last token overlapping the character range, if any.
    pub fn token_range(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let first = self.char_spans.iter().position(|&(s, e)| s < end && e > start)?;
        let last = self.char_spans.iter().rposition(|&(s, e)| s < end && e > start)?;
        Some((first, last))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkedSpan {
    pub span_id: usize,
    pub marker: usize,
    pub bop: usize,
    pub eop: usize,
}

/// Token ids with `<bopN>`/`<eopN>` pairs around each span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSequence {
    pub ids: Vec<u32>,
    /// Original token index of each position, `None` for markers.
    pub source: Vec<Option<usize>>,
    /// Indexed by span id (position in the input span list).
    pub spans: Vec<MarkedSpan>,
}

impl MarkedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn strip_markers(&self) -> Vec<u32> {
        self.ids.iter().zip(&self.source).filter(|(_, s)| s.is_some()).map(|(id, _)| *id).collect()
    }
}

/// Inserts a marker pair per span. Marker indices follow (start asc, end
/// desc) so enclosing spans get smaller indices; at a shared position,
/// outer `<bop>`s come first and inner `<eop>`s close first.
pub fn insert_markers(
    ta: &TokenizedArticle,
    spans: &[SpanAnnotation],
    tok: &Tokenizer,
) -> Result<MarkedSequence, WindowError> {
    if spans.len() > tok.marker_budget() {
        return Err(WindowError::MarkerBudget { spans: spans.len(), budget: tok.marker_budget() });
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| spans[a].start.cmp(&spans[b].start).then(spans[b].end.cmp(&spans[a].end)).then(a.cmp(&b)));
    let mut marker_of = vec![0; spans.len()];
    for (n, &sid) in order.iter().enumerate() {
        marker_of[sid] = n;
    }
    let mut opens: Vec<Vec<usize>> = vec![Vec::new(); ta.len()];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); ta.len()];
    for (sid, span) in spans.iter().enumerate() {
        let (first, last) = ta.token_range(span.start, span.end).ok_or(WindowError::SpanOverlapsNoToken {
            span_id: sid,
            start: span.start,
            end: span.end,
        })?;
        opens[first].push(sid);
        closes[last].push(sid);
    }
    let mut ids = Vec::with_capacity(ta.len() + 2 * spans.len());
    let mut source = Vec::with_capacity(ids.capacity());
    let mut marked = vec![MarkedSpan { span_id: 0, marker: 0, bop: 0, eop: 0 }; spans.len()];
    for p in 0..ta.len() {
        opens[p].sort_by_key(|&s| marker_of[s]);
        for &sid in &opens[p] {
            marked[sid] = MarkedSpan { span_id: sid, marker: marker_of[sid], bop: ids.len(), eop: 0 };
            ids.push(tok.bop(marker_of[sid]));
            source.push(None);
        }
        ids.push(ta.ids[p]);
        source.push(Some(p));
        closes[p].sort_by_key(|&s| std::cmp::Reverse(marker_of[s]));
        for &sid in &closes[p] {
            marked[sid].eop = ids.len();
            ids.push(tok.eop(marker_of[sid]));
            source.push(None);
        }
    }
    Ok(MarkedSequence { ids, source, spans: marked })
}

/// Placement of one span inside a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpan {
    pub span_id: usize,
    pub bop: usize,
    pub eop: usize,
    /// Span tokens (non-marker) kept between `bop` and `eop`.
    pub span_tokens: usize,
    pub left_context: usize,
    pub right_context: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub ordinal: usize,
    /// Start position in the marked sequence.
    pub offset: usize,
    pub ids: Vec<u32>,
    /// Marked-sequence position of every window token; `None` for
    /// appended end markers.
    pub source: Vec<Option<usize>>,
    pub spans: Vec<WindowSpan>,
}

impl Window {
    pub fn span(&self, span_id: usize) -> Option<&WindowSpan> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    /// Span id -> ordinals of windows holding its `<bop>`.
    pub span_windows: BTreeMap<usize, Vec<usize>>,
}

/// Cuts windows at offsets 0, stride, 2*stride, ... while the offset does
/// not pass the last `<bop>`. Spans cut by the window boundary get their
/// `<eop>`s appended at the end of the window, innermost first, replacing
/// trailing content. End markers whose `<bop>` lies before the window are
/// dropped.
pub fn make_windows(ms: &MarkedSequence, window_size: usize, stride: usize) -> Result<WindowSet, WindowError> {
    if stride == 0 || window_size <= stride {
        return Err(WindowError::InvalidStride { window_size, stride });
    }
    let Some(last_bop) = ms.spans.iter().map(|s| s.bop).max() else {
        return Ok(WindowSet { windows: Vec::new(), span_windows: BTreeMap::new() });
    };
    let mut span_at: HashMap<usize, &MarkedSpan> = HashMap::new();
    for s in &ms.spans {
        span_at.insert(s.bop, s);
        span_at.insert(s.eop, s);
    }
    let mut windows = Vec::new();
    let mut span_windows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut offset = 0;
    while offset <= last_bop {
        let end = (offset + window_size).min(ms.len());
        let cut_spans = |keep_end: usize| -> Vec<&MarkedSpan> {
            ms.spans.iter().filter(|s| s.bop >= offset && s.bop < keep_end && s.eop >= keep_end).collect()
        };
        let mut appended = 0;
        let (keep_end, mut cut) = loop {
            if appended >= window_size {
                return Err(WindowError::WindowTooSmall { offset, needed: appended });
            }
            let keep_end = end.min(offset + window_size - appended);
            let cut = cut_spans(keep_end);
            if cut.len() <= appended {
                break (keep_end, cut);
            }
            appended = cut.len();
        };
        cut.sort_by_key(|s| std::cmp::Reverse(s.marker));

        let mut ids = Vec::with_capacity(window_size);
        let mut source = Vec::with_capacity(window_size);
        for pos in offset..keep_end {
            if ms.source[pos].is_none() {
                let s = span_at[&pos];
                if s.eop == pos && s.bop < offset {
                    continue;
                }
            }
            ids.push(ms.ids[pos]);
            source.push(Some(pos));
        }
        let mut eop_at: HashMap<usize, usize> = HashMap::new();
        for s in &cut {
            eop_at.insert(s.span_id, ids.len());
            ids.push(ms.ids[s.eop]);
            source.push(None);
        }

        // Count content tokens before each window position.
        let mut content_before = Vec::with_capacity(ids.len() + 1);
        content_before.push(0usize);
        for s in &source {
            let is_content = s.is_some_and(|p| ms.source[p].is_some());
            content_before.push(content_before.last().unwrap() + usize::from(is_content));
        }
        let total_content = *content_before.last().unwrap();
        let ordinal = windows.len();
        let mut spans = Vec::new();
        for (wpos, s) in source.iter().enumerate() {
            let Some(p) = *s else { continue };
            if ms.source[p].is_some() {
                continue;
            }
            let ms_span = span_at[&p];
            if ms_span.bop != p {
                continue;
            }
            let truncated = eop_at.contains_key(&ms_span.span_id);
            let eop = match eop_at.get(&ms_span.span_id) {
                Some(&e) => e,
                None => source.iter().position(|x| *x == Some(ms_span.eop)).expect("uncut span keeps its eop"),
            };
            spans.push(WindowSpan {
                span_id: ms_span.span_id,
                bop: wpos,
                eop,
                span_tokens: content_before[eop] - content_before[wpos],
                left_context: content_before[wpos],
                right_context: total_content - content_before[eop + 1],
                truncated,
            });
            span_windows.entry(ms_span.span_id).or_default().push(ordinal);
        }
        windows.push(Window { ordinal, offset, ids, source, spans });
        offset += stride;
    }
    Ok(WindowSet { windows, span_windows })
}

/// The window where the span keeps the most of its tokens, then has the
/// larger smaller-side context, then comes first.
pub fn primary_window_for_span(ws: &WindowSet, span_id: usize) -> Result<usize, WindowError> {
    let ordinals = ws.span_windows.get(&span_id).ok_or(WindowError::SpanNotCovered(span_id))?;
    ordinals
        .iter()
        .copied()
        .max_by_key(|&o| {
            let s = ws.windows[o].span(span_id).expect("indexed span present");
            (s.span_tokens, s.left_context.min(s.right_context), std::cmp::Reverse(o))
        })
        .ok_or(WindowError::SpanNotCovered(span_id))
}

/// A `<bop0> span <eop0>` sequence with surrounding context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingleInstanceExample {
    pub ids: Vec<u32>,
    pub bop: usize,
    pub eop: usize,
}

impl SingleInstanceExample {
    /// Trims context evenly (then the span tail) to at most `max_len` tokens.
    pub fn fit_to(mut self, max_len: usize) -> Self {
        assert!(max_len >= 2, "need room for both markers");
        while self.ids.len() > max_len {
            let left = self.bop;
            let right = self.ids.len() - 1 - self.eop;
            if left == 0 && right == 0 {
                self.ids.remove(self.eop - 1);
                self.eop -= 1;
            } else if left >= right {
                self.ids.remove(0);
                self.bop -= 1;
                self.eop -= 1;
            } else {
                self.ids.pop();
            }
        }
        self
    }
}

pub fn single_instance_example(
    ta: &TokenizedArticle,
    span: &SpanAnnotation,
    context: usize,
    tok: &Tokenizer,
) -> Result<SingleInstanceExample, WindowError> {
    let (first, last) = ta.token_range(span.start, span.end).ok_or(WindowError::SpanOverlapsNoToken {
        span_id: 0,
        start: span.start,
        end: span.end,
    })?;
    let left = first.saturating_sub(context);
    let right = (last + 1 + context).min(ta.len());
    let mut ids = Vec::with_capacity(right - left + 2);
    ids.extend_from_slice(&ta.ids[left..first]);
    let bop = ids.len();
    ids.push(tok.bop(0));
    ids.extend_from_slice(&ta.ids[first..=last]);
    let eop = ids.len();
    ids.push(tok.eop(0));
    ids.extend_from_slice(&ta.ids[last + 1..right]);
    Ok(SingleInstanceExample { ids, bop, eop })
}

/// `article_id \t ordinal \t tokens...` inspection line.
pub fn format_window(article_id: u64, window: &Window, tok: &Tokenizer) -> String {
    let words: Vec<&str> = window.ids.iter().map(|&id| tok.token(id)).collect();
    format!("{article_id}\t{}\t{}", window.ordinal, words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, Provenance};
    use crate::technique::Technique;

    fn corpus(texts: &[&str]) -> Dataset {
        let arts = texts.iter().enumerate().map(|(i, t)| Article::new(i as u64, *t)).collect();
        Dataset::new(arts, vec![], Provenance::Synthetic)
    }

    fn span(start: usize, end: usize) -> SpanAnnotation {
        SpanAnnotation::new(0, start, end, vec![Technique::Doubt])
    }

    /// Tokenizer over words w0..w{n-1}; word i sits at chars [3i, 3i+2).
    fn numbered(n: usize) -> (Tokenizer, TokenizedArticle) {
        let text: Vec<String> = (0..n).map(|i| format!("{:02}", i % 100)).collect();
        let text = text.join(" ");
        let tok = Tokenizer::build(&corpus(&[&text]), 1, 8).unwrap();
        let ta = tok.tokenize(&text);
        (tok, ta)
    }

    fn chars(first: usize, last: usize) -> (usize, usize) {
        (3 * first, 3 * last + 2)
    }

    #[test]
    fn vocab_threshold_and_determinism() {
        let c = corpus(&["a a b"]);
        let tok = Tokenizer::build(&c, 2, 4).unwrap();
        assert_ne!(tok.id("a"), UNK);
        assert_eq!(tok.id("b"), UNK);
        let all = Tokenizer::build(&c, 1, 4).unwrap();
        assert_ne!(all.id("b"), UNK);
        assert_eq!(Tokenizer::build(&c, 1, 4).unwrap(), all);
        assert_eq!(Tokenizer::from_tsv(&all.to_tsv()).unwrap(), all);
        assert!(matches!(Tokenizer::build(&corpus(&[]), 1, 4), Err(WindowError::EmptyCorpus)));
    }

    #[test]
    fn splits_punctuation() {
        let toks: Vec<String> = split_tokens("Don't stop!").into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["don", "'", "t", "stop", "!"]);
        assert!(split_tokens("").is_empty());
        let text = "  Héllo,  wörld…\n";
        let spans = split_tokens(text);
        let chars: Vec<char> = text.chars().collect();
        // tokens plus whitespace gaps rebuild the text
        let mut rebuilt = String::new();
        let mut pos = 0;
        for (_, s, e) in &spans {
            rebuilt.extend(&chars[pos..*s]);
            rebuilt.extend(&chars[*s..*e]);
            pos = *e;
        }
        rebuilt.extend(&chars[pos..]);
        assert_eq!(rebuilt, text);
        assert!(chars[pos..].iter().all(|c| c.is_whitespace()));
    }

    #[test]
    fn single_span_markers() {
        let (tok, ta) = numbered(6);
        let (s, e) = chars(2, 4);
        let ms = insert_markers(&ta, &[span(s, e)], &tok).unwrap();
        assert_eq!(ms.ids[2], tok.bop(0));
        assert_eq!(ms.ids[6], tok.eop(0));
        assert_eq!(ms.strip_markers(), ta.ids);
    }

    #[test]
    fn nested_and_crossing_markers() {
        let (tok, ta) = numbered(10);
        // B nested in A; listed inner-first to check ordering by offsets
        let (a, b) = (chars(1, 6), chars(3, 4));
        let ms = insert_markers(&ta, &[span(b.0, b.1), span(a.0, a.1)], &tok).unwrap();
        assert_eq!(ms.spans[1].marker, 0);
        assert_eq!(ms.spans[0].marker, 1);
        let order: Vec<usize> = vec![ms.spans[1].bop, ms.spans[0].bop, ms.spans[0].eop, ms.spans[1].eop];
        assert!(order.windows(2).all(|w| w[0] < w[1]));

        // A starts first, B ends last
        let (a, b) = (chars(1, 4), chars(3, 7));
        let ms = insert_markers(&ta, &[span(a.0, a.1), span(b.0, b.1)], &tok).unwrap();
        let (sa, sb) = (ms.spans[0], ms.spans[1]);
        assert!(sa.bop < sb.bop && sb.bop < sa.eop && sa.eop < sb.eop);

        // same boundaries at token level: outer opens first, inner closes first
        let ms = insert_markers(&ta, &[span(3, 14), span(3, 8)], &tok).unwrap();
        assert_eq!(ms.ids[1..4], [tok.bop(0), tok.bop(1), ta.ids[1]]);
    }

    #[test]
    fn marker_errors() {
        let (tok, ta) = numbered(4);
        assert!(matches!(insert_markers(&ta, &[span(2, 3)], &tok), Err(WindowError::SpanOverlapsNoToken { .. })));
        let many: Vec<_> = (0..9).map(|_| span(0, 2)).collect();
        assert!(matches!(insert_markers(&ta, &many, &tok), Err(WindowError::MarkerBudget { .. })));
    }

    #[test]
    fn short_sequence_single_window() {
        let (tok, ta) = numbered(298);
        let (s, e) = chars(10, 12);
        let ms = insert_markers(&ta, &[span(s, e)], &tok).unwrap();
        assert_eq!(ms.len(), 300);
        let ws = make_windows(&ms, 512, 256).unwrap();
        assert_eq!(ws.windows.len(), 1);
        assert!(!ws.windows[0].spans[0].truncated);
        assert_eq!(ws.windows[0].ids, ms.ids);
    }

    #[test]
    fn stopping_rule() {
        let (tok, ta) = numbered(898);
        // bop of the last span at marked position 600
        let (s1, e1) = chars(10, 11);
        let (s2, e2) = chars(598, 600);
        let ms = insert_markers(&ta, &[span(s1, e1), span(s2, e2)], &tok).unwrap();
        assert_eq!(ms.len(), 902);
        assert_eq!(ms.spans[1].bop, 600);
        let ws = make_windows(&ms, 512, 256).unwrap();
        let offsets: Vec<usize> = ws.windows.iter().map(|w| w.offset).collect();
        assert_eq!(offsets, vec![0, 256, 512]);
    }

    #[test]
    fn truncated_nested_spans_close_inner_first() {
        let (tok, ta) = numbered(40);
        let (a, b) = (chars(5, 30), chars(8, 25));
        let ms = insert_markers(&ta, &[span(a.0, a.1), span(b.0, b.1)], &tok).unwrap();
        let ws = make_windows(&ms, 16, 8).unwrap();
        let w = &ws.windows[0];
        assert_eq!(w.len(), 16);
        assert_eq!(w.ids[14..], [tok.eop(1), tok.eop(0)]);
        assert!(w.spans.iter().all(|s| s.truncated));
    }

    #[test]
    fn primary_window_criteria() {
        let (tok, ta) = numbered(60);
        let (s, e) = chars(20, 22);
        let ms = insert_markers(&ta, &[span(s, e)], &tok).unwrap();
        let ws = make_windows(&ms, 32, 8).unwrap();
        let chosen = primary_window_for_span(&ws, 0).unwrap();
        let best = ws.windows[chosen].span(0).unwrap();
        for &o in &ws.span_windows[&0] {
            let cand = ws.windows[o].span(0).unwrap();
            assert!(cand.span_tokens <= best.span_tokens);
            if cand.span_tokens == best.span_tokens {
                assert!(cand.left_context.min(cand.right_context) <= best.left_context.min(best.right_context));
            }
        }
        // span at marked 20..=24: offset 0 leaves 20 left / 7 right,
        // offset 8 leaves 12 / 15, offset 16 leaves 4 / 23
        assert_eq!(ws.windows[chosen].offset, 8);
        assert!(matches!(primary_window_for_span(&ws, 3), Err(WindowError::SpanNotCovered(3))));
    }

    #[test]
    fn single_instance_context() {
        let (tok, ta) = numbered(600);
        let (s, e) = chars(0, 2);
        let ex = single_instance_example(&ta, &span(s, e), 256, &tok).unwrap();
        assert_eq!(ex.bop, 0);
        assert_eq!(ex.ids.len(), 3 + 2 + 256);

        let (s, e) = chars(300, 303);
        let ex = single_instance_example(&ta, &span(s, e), 256, &tok).unwrap();
        assert_eq!(ex.ids.len(), 4 + 2 + 512);
        assert_eq!(ex.ids[ex.bop], tok.bop(0));
        assert_eq!(ex.ids[ex.eop], tok.eop(0));

        let ex = single_instance_example(&ta, &span(s, e), 0, &tok).unwrap();
        assert_eq!(ex.ids.len(), 6);

        let fitted = single_instance_example(&ta, &span(s, e), 256, &tok).unwrap().fit_to(64);
        assert_eq!(fitted.ids.len(), 64);
        assert_eq!(fitted.ids[fitted.bop], tok.bop(0));
        assert_eq!(fitted.ids[fitted.eop], tok.eop(0));
        assert_eq!(fitted.eop - fitted.bop, 5);
    }
}
