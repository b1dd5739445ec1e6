//! Sentence splitting and extraction-chunk grouping.
//!
//! The splitter is rule based. A boundary is placed after `.`, `!` or `?`
//! (plus any closing quotes or brackets directly after it) when the next
//! non-space character is uppercase, a digit, a quote or an opening bracket.
//! A boundary is suppressed when:
//!
//! - the word ending in `.` is a known abbreviation (titles, months, Latin
//!   abbreviations), a single-letter initial, or a dotted initialism such as
//!   `U.S.`;
//! - the terminator sits inside a matched pair of parentheses or quotes.
//!
//! Independently of punctuation, blank lines and lines that start a list item
//! (`1.`, `2)`, `-`, `*`, `•`) always open a new sentence.
//!
//! Offsets are byte offsets into the source string.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Default number of sentences per extraction chunk.
pub const DEFAULT_STRIDE: usize = 28;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "rev", "hon", "gen", "col", "capt", "lt", "sgt",
    "gov", "sen", "rep", "pres", "vs", "etc", "e.g", "i.e", "cf", "al", "approx", "fig", "figs", "no", "nos", "vol",
    "vols", "pp", "ed", "eds", "inc", "ltd", "co", "corp", "dept", "univ", "est", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mon", "tue", "wed", "thu", "fri", "sat", "sun", "a.m", "p.m",
];

/// One sentence of a source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub index: usize,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// A group of consecutive sentences sent to the extractor in one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub sentences: Vec<SentenceSpan>,
    pub text: String,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Splits `text` into ordered, non-overlapping, trimmed sentence spans.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let cuts = boundary_positions(text);
    let mut spans = Vec::new();
    let mut prev = 0;
    for cut in cuts.into_iter().chain(std::iter::once(text.len())) {
        if cut <= prev {
            continue;
        }
        push_trimmed(text, prev, cut, &mut spans);
        prev = cut;
    }
    spans
}

fn push_trimmed(text: &str, from: usize, to: usize, out: &mut Vec<SentenceSpan>) {
    let piece = &text[from..to];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if trimmed.is_empty() {
        return;
    }
    let start = from + lead;
    out.push(SentenceSpan {
        index: out.len(),
        text: trimmed.to_string(),
        start,
        end: start + trimmed.len(),
    });
}

/// Groups sentences greedily into chunks of `stride` sentences.
pub fn build_chunks(sentences: &[SentenceSpan], stride: usize) -> Result<Vec<Chunk>, ConfigError> {
    if stride == 0 {
        return Err(ConfigError::new("stride", "must be at least 1"));
    }
    Ok(sentences
        .chunks(stride)
        .enumerate()
        .map(|(index, group)| Chunk {
            index,
            text: join_sentences(group),
            sentences: group.to_vec(),
        })
        .collect())
}

/// Joins sentences with a single space; used when the original source text
/// is not at hand.
fn join_sentences(group: &[SentenceSpan]) -> String {
    group.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Chunks a response and keeps the original whitespace (including newlines
/// of list items) inside each chunk's text.
pub fn chunk_source(source: &str, sentences: &[SentenceSpan], stride: usize) -> Result<Vec<Chunk>, ConfigError> {
    let mut chunks = build_chunks(sentences, stride)?;
    for chunk in &mut chunks {
        if let (Some(first), Some(last)) = (chunk.sentences.first(), chunk.sentences.last()) {
            if last.end <= source.len() && source.get(first.start..last.end).is_some() {
                chunk.text = source[first.start..last.end].to_string();
            }
        }
    }
    Ok(chunks)
}

fn boundary_positions(text: &str) -> Vec<usize> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let protected = protected_ranges(&chars);
    let in_protected = |pos: usize| protected.iter().any(|&(a, b)| pos > a && pos < b);

    let mut cuts = Vec::new();

    // line-structure boundaries
    let mut line_start = 0usize;
    let mut prev_blank = false;
    for line in text.split_inclusive('\n') {
        let content = line.trim();
        if content.is_empty() {
            prev_blank = true;
        } else {
            if line_start > 0 && (prev_blank || is_list_item(content)) {
                cuts.push(line_start);
            }
            prev_blank = false;
        }
        line_start += line.len();
    }

    // punctuation boundaries
    let n = chars.len();
    let mut i = 0;
    while i < n {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        // swallow runs such as "?!" or "..."
        let mut j = i + 1;
        while j < n && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        while j < n && is_closer(chars[j].1) {
            j += 1;
        }
        let end = if j < n { chars[j].0 } else { text.len() };
        if j >= n || !chars[j].1.is_whitespace() {
            i = j.max(i + 1);
            continue;
        }
        let mut k = j;
        while k < n && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k >= n {
            break;
        }
        let next = chars[k].1;
        let starts_sentence = next.is_uppercase() || next.is_ascii_digit() || is_opener(next);
        let single_period = c == '.' && j > i && chars[i + 1..j].iter().all(|&(_, ch)| !matches!(ch, '.' | '!' | '?'));
        let abbreviation = single_period && (ends_with_abbreviation(text, pos) || is_list_marker(text, pos));
        if starts_sentence && !abbreviation && !in_protected(end) {
            cuts.push(end);
        }
        i = k;
    }

    cuts.sort_unstable();
    cuts.dedup();
    cuts
}

fn is_list_item(line: &str) -> bool {
    let mut chars = line.chars();
    match chars.next() {
        Some('-') | Some('*') | Some('•') => chars.next().is_none_or(char::is_whitespace),
        Some(c) if c.is_ascii_digit() => {
            let rest = line.trim_start_matches(|ch: char| ch.is_ascii_digit());
            let mut r = rest.chars();
            matches!(r.next(), Some('.') | Some(')')) && r.next().is_none_or(char::is_whitespace)
        }
        _ => false,
    }
}

/// True when the period at byte `dot` closes a numbered list marker such
/// as the `1.` opening a line.
fn is_list_marker(text: &str, dot: usize) -> bool {
    let line_start = text[..dot].rfind('\n').map_or(0, |p| p + 1);
    let head = text[line_start..dot].trim_start();
    !head.is_empty() && head.chars().all(|c| c.is_ascii_digit())
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '”' | '’' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '«')
}

/// True when the token that ends at the period at byte `dot` is an
/// abbreviation or initial.
fn ends_with_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(|c: char| c.is_whitespace() || matches!(c, '(' | '[' | '"' | '“' | '\''))
        .map(|p| p + before[p..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = &before[word_start..];
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let mut letters = word.chars();
    // single initial: "J." in "J. K. Rowling"
    if let (Some(first), None) = (letters.next(), letters.next()) {
        return first.is_alphabetic() && first.is_uppercase();
    }
    // dotted initialism: "U.S", "e.g", "Ph.D"
    word.contains('.')
        && word
            .split('.')
            .all(|part| !part.is_empty() && part.len() <= 2 && part.chars().all(char::is_alphabetic))
}

/// Byte ranges (open, close) of matched parentheses and quote pairs. Pairs
/// never span a blank line.
fn protected_ranges(chars: &[(usize, char)]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut parens: Vec<usize> = Vec::new();
    let mut curly: Vec<usize> = Vec::new();
    let mut straight: Option<usize> = None;
    let mut newline_run = 0;
    for (idx, &(pos, c)) in chars.iter().enumerate() {
        if c == '\n' {
            newline_run += 1;
            if newline_run >= 2 {
                parens.clear();
                curly.clear();
                straight = None;
            }
            continue;
        } else if !c.is_whitespace() {
            newline_run = 0;
        }
        match c {
            '(' => parens.push(pos),
            ')' => {
                if let Some(open) = parens.pop() {
                    ranges.push((open, pos));
                }
            }
            '“' => curly.push(pos),
            '”' => {
                if let Some(open) = curly.pop() {
                    ranges.push((open, pos));
                }
            }
            '"' => {
                let prev_alnum = idx > 0 && chars[idx - 1].1.is_alphanumeric();
                match straight.take() {
                    Some(open) => ranges.push((open, pos)),
                    None if !prev_alnum => straight = Some(pos),
                    None => {}
                }
            }
            _ => {}
        }
    }
    ranges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        split_sentences(s).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn empty_input() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n\t ").is_empty());
    }

    #[test]
    fn basic_terminators() {
        assert_eq!(texts("It works. Does it? Yes!"), vec!["It works.", "Does it?", "Yes!"]);
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            texts("Dr. Smith arrived in the U.S. today."),
            vec!["Dr. Smith arrived in the U.S. today."]
        );
        assert_eq!(
            texts("J. K. Rowling wrote it. Then Mr. Potter read it."),
            vec!["J. K. Rowling wrote it.", "Then Mr. Potter read it."]
        );
        assert_eq!(
            texts("Apples, pears, etc. Are fruit."),
            vec!["Apples, pears, etc. Are fruit."]
        );
    }

    #[test]
    fn decimals_and_lowercase_continuations() {
        assert_eq!(
            texts("Pi is 3.14 roughly. it continues."),
            vec!["Pi is 3.14 roughly. it continues."]
        );
        assert_eq!(
            texts("It cost 5 dollars. 10 people paid."),
            vec!["It cost 5 dollars.", "10 people paid."]
        );
    }

    #[test]
    fn quotes_and_parentheses() {
        assert_eq!(
            texts("He said \"Stop. Now.\" Then he left."),
            vec!["He said \"Stop. Now.\"", "Then he left."]
        );
        assert_eq!(
            texts("A note (see Fig. 2. It helps.) follows. Done."),
            vec!["A note (see Fig. 2. It helps.) follows.", "Done."]
        );
        // unmatched bracket does not disable splitting
        assert_eq!(texts("Open ( here. Next one."), vec!["Open ( here.", "Next one."]);
    }

    #[test]
    fn list_items_and_blank_lines() {
        let s = "Here are a few:\n1. NASA Robotics Alliance Project\n2. MUREP funds colleges\n- a bullet\n\nNew paragraph without stop\nsame sentence";
        assert_eq!(
            texts(s),
            vec![
                "Here are a few:",
                "1. NASA Robotics Alliance Project",
                "2. MUREP funds colleges",
                "- a bullet",
                "New paragraph without stop\nsame sentence"
            ]
        );
    }

    #[test]
    fn offsets_slice_source() {
        let s = "  First one.  Second one!\nThird? ";
        for span in split_sentences(s) {
            assert_eq!(&s[span.start..span.end], span.text);
        }
    }

    #[test]
    fn chunk_sizes() {
        let text: String = (0..19).map(|i| format!("Sentence {i} here. ")).collect();
        let spans = split_sentences(&text);
        assert_eq!(spans.len(), 19);
        let chunks = build_chunks(&spans, 10).unwrap();
        assert_eq!(chunks.iter().map(Chunk::len).collect::<Vec<_>>(), vec![10, 9]);
        assert_eq!(build_chunks(&spans, 1).unwrap().len(), 19);
        assert_eq!(build_chunks(&spans[..5], usize::MAX).unwrap().len(), 1);
        assert!(build_chunks(&spans, 0).is_err());
    }

    #[test]
    fn chunk_source_keeps_newlines() {
        let s = "Intro:\n1. One.\n2. Two.";
        let spans = split_sentences(s);
        let chunks = chunk_source(s, &spans, 10).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, s);
    }
}
