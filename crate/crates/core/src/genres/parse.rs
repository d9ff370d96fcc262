//! Extraction of recommendation titles from free-form model replies.
//!
//! Only lines carrying a list marker (`1.`, `1)`, `1:`, `(1)`, `-`, `*`, `+`,
//! `•`, `–`) are considered. Each title is then cleaned:
//!
//! * a leading `**bold**` or `"quoted"` segment is taken as the whole title;
//! * parentheticals containing a four-digit year are removed;
//! * anything after a spaced dash (` - `, ` – `, ` — `) is dropped;
//! * a trailing `by <Author>` is dropped when the author looks like a name
//!   (two to five capitalized words, or one word containing a period);
//! * surrounding quotes and trailing punctuation are trimmed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationItem {
    pub rank: u32,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedList {
    pub items: Vec<RecommendationItem>,
    /// Set when fewer than 60% of the requested items could be extracted.
    pub low_yield: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no list items found in response: {raw:?}")]
    NoItems { raw: String },
}

const BULLETS: [char; 6] = ['-', '*', '+', '•', '–', '—'];

fn strip_marker(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        let mut chars = rest.chars();
        return match chars.next() {
            Some('.') | Some(')') | Some(':') => {
                let after = chars.as_str();
                // "1.5" or "2004.Released" without a gap is not a marker
                if after.is_empty() || after.starts_with(char::is_whitespace) {
                    Some(after)
                } else {
                    None
                }
            }
            _ => None,
        };
    }
    if let Some(rest) = line.strip_prefix('(') {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            return rest[digits..].strip_prefix(')');
        }
        return None;
    }
    // "**1.** Title" style
    if let Some(rest) = line.strip_prefix("**") {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            let rest = &rest[digits..];
            if let Some(r) = rest.strip_prefix(".**").or_else(|| rest.strip_prefix(")**")) {
                return Some(r);
            }
        }
    }
    let first = line.chars().next()?;
    if BULLETS.contains(&first) {
        let rest = &line[first.len_utf8()..];
        // "**Title**" is emphasis, not a bullet
        if first == '*' && rest.starts_with('*') {
            return None;
        }
        if rest.starts_with(char::is_whitespace) {
            return Some(rest);
        }
    }
    None
}

fn leading_delimited<'a>(s: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(open)?;
    let end = rest.find(close)?;
    let inner = rest[..end].trim();
    (!inner.is_empty()).then_some(inner)
}

fn contains_year(s: &str) -> bool {
    let b = s.as_bytes();
    b.windows(4).enumerate().any(|(i, w)| {
        w.iter().all(u8::is_ascii_digit)
            && (i == 0 || !b[i - 1].is_ascii_digit())
            && b.get(i + 4).is_none_or(|c| !c.is_ascii_digit())
    })
}

fn strip_year_parentheticals(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find('(') {
        match rest[open..].find(')') {
            Some(close_rel) => {
                let close = open + close_rel;
                let inner = &rest[open + 1..close];
                out.push_str(&rest[..open]);
                if !contains_year(inner) {
                    out.push_str(&rest[open..=close]);
                }
                rest = &rest[close + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn looks_like_author(s: &str) -> bool {
    let words: Vec<&str> = s.split_whitespace().collect();
    let capitalized = |w: &&str| w.chars().next().is_some_and(char::is_uppercase);
    match words.len() {
        1 => capitalized(&words[0]) && words[0].contains('.'),
        2..=5 => words.iter().all(capitalized),
        _ => false,
    }
}

fn strip_author(s: &str) -> &str {
    if let Some(idx) = s.rfind(" by ") {
        let (head, tail) = (&s[..idx], &s[idx + 4..]);
        if !head.trim().is_empty() && looks_like_author(tail.trim()) {
            return head;
        }
    }
    s
}

fn trim_decoration(s: &str) -> &str {
    s.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’' | '*' | '_' | '`')
    })
    .trim_end_matches([',', ';', ':', '.'])
    .trim()
}

fn clean_title(raw: &str) -> String {
    let s = raw.trim();
    for (open, close) in [("**", "**"), ("__", "__"), ("\"", "\""), ("“", "”"), ("*", "*")] {
        if let Some(inner) = leading_delimited(s, open, close) {
            return trim_decoration(&strip_year_parentheticals(inner)).to_string();
        }
    }
    let s = strip_year_parentheticals(s);
    let mut s = s.as_str();
    for dash in [" - ", " – ", " — "] {
        if let Some(idx) = s.find(dash) {
            if !s[..idx].trim().is_empty() {
                s = &s[..idx];
            }
        }
    }
    let s = strip_author(trim_decoration(s));
    trim_decoration(s).to_string()
}

/// Extracts list entries from a reply, ranking them by position.
///
/// At most `expected_k + 5` items are returned.
pub fn parse_recommendations(text: &str, expected_k: u32) -> Result<ParsedList, ParseError> {
    let cap = expected_k as usize + 5;
    let mut items = Vec::new();
    for line in text.lines() {
        if items.len() >= cap {
            break;
        }
        let Some(body) = strip_marker(line) else {
            continue;
        };
        let title = clean_title(body);
        if title.is_empty() {
            continue;
        }
        items.push(RecommendationItem {
            rank: items.len() as u32 + 1,
            title,
        });
    }
    if items.is_empty() {
        return Err(ParseError::NoItems {
            raw: text.to_string(),
        });
    }
    let low_yield = (items.len() as f64) < 0.6 * expected_k as f64;
    Ok(ParsedList { items, low_yield })
}
