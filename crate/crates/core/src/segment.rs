//! Local sentence segmentation.
//!
//! Boundaries are line breaks and `.`, `?`, `!` (plus any closing quotes or
//! brackets) followed by whitespace or end of text. A period that ends a
//! known abbreviation does not close a sentence.

use serde::{Deserialize, Serialize};

const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "cf", "al", "approx", "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr",
    "inc", "corp", "ltd", "fig", "eq", "sec", "u.s", "u.k", "a.m", "p.m", "jan", "feb",
    "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "v",
];

/// Byte range of a trimmed sentence inside its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| !c.is_whitespace() && *c != '(' && *c != '"')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    // single capital letters are not guarded: "Option B." ends a sentence
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Span>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trail = piece.len() - piece.trim_end().len();
    if lead + trail < piece.len() {
        out.push(Span { start: start + lead, end: end - trail });
    }
}

/// Splits `text` into non-empty trimmed sentence spans in order.
pub fn split_sentences(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' {
            push_trimmed(text, start, pos, &mut out);
            start = pos + 1;
            i += 1;
            continue;
        }
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len() && (matches!(chars[j].1, '.' | '?' | '!') || is_closer(chars[j].1)) {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            let abbreviation = c == '.' && ends_with_abbreviation(&text[start..pos]);
            if at_boundary && !abbreviation {
                let end = if j == chars.len() { text.len() } else { chars[j].0 };
                push_trimmed(text, start, end, &mut out);
                start = end;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

/// Convenience wrapper returning the sentence strings.
pub fn sentences(text: &str) -> Vec<&str> {
    split_sentences(text).into_iter().map(|s| s.slice(text)).collect()
}
