//! Maps issues onto whole-sentence edit spans in the original trace.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedTrace;
use crate::judge::Issue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchedBy {
    QuoteExact,
    QuoteNormalized,
    SentenceIndex,
}

/// A located edit region. `span` is a byte range aligned to sentence
/// boundaries; `sentences` is the inclusive index range it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpan {
    pub span: (usize, usize),
    pub sentences: (usize, usize),
    pub matched_by: MatchedBy,
}

impl EditSpan {
    pub fn contains_sentence(&self, idx: usize) -> bool {
        self.sentences.0 <= idx && idx <= self.sentences.1
    }
}

fn fold_char(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '\u{FF07}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{FF02}' => '"',
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}' => '-',
        _ => c,
    }
}

/// Normalized text plus, for every normalized char, the byte range of the
/// original char it came from.
struct Normalized {
    text: String,
    /// (normalized byte offset, original start, original end)
    origin: Vec<(usize, usize, usize)>,
}

fn normalize_mapped(text: &str) -> Normalized {
    let mut out = String::with_capacity(text.len());
    let mut origin = Vec::with_capacity(text.len());
    let mut pending_space: Option<(usize, usize)> = None;
    for (pos, c) in text.char_indices() {
        let end = pos + c.len_utf8();
        if c.is_whitespace() {
            if !out.is_empty() && pending_space.is_none() {
                pending_space = Some((pos, end));
            }
            continue;
        }
        if let Some((s, e)) = pending_space.take() {
            origin.push((out.len(), s, e));
            out.push(' ');
        }
        for lc in fold_char(c).to_lowercase() {
            let lc = fold_char(lc);
            if lc.is_whitespace() {
                continue;
            }
            origin.push((out.len(), pos, end));
            out.push(lc);
        }
    }
    Normalized { text: out, origin }
}

/// Collapses whitespace runs, trims, lowercases and folds curly quotes and
/// dashes to their ASCII forms.
pub fn normalize(text: &str) -> String {
    normalize_mapped(text).text
}

fn find_all(haystack: &str, needle: &str) -> Vec<usize> {
    let mut hits = Vec::new();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let at = from + pos;
        hits.push(at);
        let step = haystack[at..].chars().next().map_or(1, char::len_utf8);
        from = at + step;
    }
    hits
}

/// Picks the match whose sentence range is closest to `target`; ties go
/// to the earliest offset.
fn best_cover(
    matches: impl IntoIterator<Item = (usize, usize)>,
    tok: &TokenizedTrace,
    target: usize,
) -> Option<(usize, usize)> {
    matches
        .into_iter()
        .filter_map(|(s, e)| {
            let (first, last) = tok.covering(s, e)?;
            let distance = if target < first {
                first - target
            } else {
                target.saturating_sub(last)
            };
            Some((distance, s, (first, last)))
        })
        .min_by_key(|&(d, s, _)| (d, s))
        .map(|(_, _, cover)| cover)
}

fn sentence_span(tok: &TokenizedTrace, first: usize, last: usize, matched_by: MatchedBy) -> EditSpan {
    EditSpan {
        span: (tok.sentences[first].span.0, tok.sentences[last].span.1),
        sentences: (first, last),
        matched_by,
    }
}

/// Locates a quote (falling back to a sentence index) in `trace`.
///
/// Order: exact substring, then a match in normalized space mapped back to
/// original offsets, then the sentence at `sentence_idx`. The result is
/// widened to the minimal run of whole sentences. `None` means the issue
/// cannot be located.
pub fn locate_quote(quote: &str, sentence_idx: usize, trace: &str, tok: &TokenizedTrace) -> Option<EditSpan> {
    if !quote.trim().is_empty() {
        let exact = find_all(trace, quote).into_iter().map(|s| (s, s + quote.len()));
        if let Some((first, last)) = best_cover(exact, tok, sentence_idx) {
            return Some(sentence_span(tok, first, last, MatchedBy::QuoteExact));
        }
        let needle = normalize(quote);
        if !needle.is_empty() {
            let hay = normalize_mapped(trace);
            let to_original = |ns: usize| -> (usize, usize) {
                let i = hay.origin.partition_point(|&(off, _, _)| off < ns);
                (hay.origin[i].1, hay.origin[i].2)
            };
            let normalized = find_all(&hay.text, &needle).into_iter().map(|ns| {
                let last_char = hay.text[..ns + needle.len()]
                    .char_indices()
                    .next_back()
                    .map_or(ns, |(i, _)| i);
                (to_original(ns).0, to_original(last_char).1)
            });
            if let Some((first, last)) = best_cover(normalized, tok, sentence_idx) {
                return Some(sentence_span(tok, first, last, MatchedBy::QuoteNormalized));
            }
        }
    }
    tok.sentence_at(sentence_idx)
        .ok()
        .map(|_| sentence_span(tok, sentence_idx, sentence_idx, MatchedBy::SentenceIndex))
}

pub fn locate_issue_edit_span(issue: &Issue, trace: &str, tok: &TokenizedTrace) -> Option<EditSpan> {
    locate_quote(&issue.trace_quote, issue.trace_sentence_idx, trace, tok)
}
