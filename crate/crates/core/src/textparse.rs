//! Parsers for the free-text formats language models answer prompts with:
//! numbered lists, `Label: value` records and single labels.
//!
//! Parsers never talk to a backend. Markdown emphasis (`*`) is removed before
//! matching because models add it unpredictably.

use indexmap::IndexMap;
use thiserror::Error;

use crate::schema::{LabelSchema, ParseKind, ParseRule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no numbered item found")]
    EmptyList,
    #[error("missing field \"{0}\"")]
    MissingField(String),
    #[error("field \"{0}\" appears out of order")]
    OutOfOrder(String),
    #[error("field \"{0}\" is empty")]
    EmptyField(String),
    #[error("unexpected text around the record: {0:?}")]
    ExtraText(String),
    #[error("ambiguous label, candidates {0:?}")]
    Ambiguous(Vec<String>),
    #[error("no label found")]
    NotFound,
    #[error("parse rule is not a fielded record")]
    WrongRule,
}

/// Fields extracted from a `Label: value` response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedRecord {
    /// Expected label (declared spelling) → extracted text, in rule order.
    pub fields: IndexMap<String, String>,
    /// Preamble and trailing sections (e.g. an explanation) not assigned to
    /// any field.
    pub trailing_unparsed: String,
    /// Label text as it appeared in the input, including its colon.
    pub matched_labels: Vec<String>,
}

impl ParsedRecord {
    /// Field value by label, compared case-insensitively.
    pub fn get(&self, label: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(name, _)| name.trim().eq_ignore_ascii_case(label.trim()))
            .map(|(_, value)| value.as_str())
    }
}

pub fn strip_decoration(text: &str) -> String {
    text.replace('*', "")
}

/// Length of a list-number prefix (`1.`, `1)`, `1 -`, `1:`) at the start of
/// `line`, including the whitespace after it.
fn numbered_prefix(line: &str) -> Option<usize> {
    let bytes = line.as_bytes();
    let digits = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 || digits > 4 {
        return None;
    }
    let mut i = digits;
    match bytes.get(i) {
        Some(b'.') | Some(b')') | Some(b':') => i += 1,
        _ => {
            let spaces = bytes[i..].iter().take_while(|b| **b == b' ').count();
            if bytes.get(i + spaces) == Some(&b'-') {
                i += spaces + 1;
            } else {
                return None;
            }
        }
    }
    match bytes.get(i) {
        None => Some(i),
        Some(b) if b.is_ascii_whitespace() => {
            let ws = bytes[i..].iter().take_while(|b| b.is_ascii_whitespace()).count();
            Some(i + ws)
        }
        _ => None,
    }
}

/// Items of a numbered list, in order, without their numbers. Blank and
/// unnumbered lines are skipped; duplicates are preserved.
pub fn parse_numbered_list(text: &str) -> Result<Vec<String>, ParseError> {
    let mut items = Vec::new();
    for line in strip_decoration(text).lines() {
        let line = line.trim_start_matches(|c: char| c.is_whitespace() || c == '#');
        if let Some(prefix) = numbered_prefix(line) {
            let item = line[prefix..].trim();
            if !item.is_empty() {
                items.push(item.to_string());
            }
        }
    }
    if items.is_empty() {
        return Err(ParseError::EmptyList);
    }
    Ok(items)
}

/// Byte offsets where `needle` occurs in `haystack` as a whole word.
fn word_matches(haystack: &str, needle: &str, case_sensitive: bool) -> Vec<usize> {
    let mut found = Vec::new();
    if needle.is_empty() {
        return found;
    }
    for (start, _) in haystack.char_indices() {
        let Some(candidate) = haystack.get(start..start + needle.len()) else {
            continue;
        };
        let equal = if case_sensitive {
            candidate == needle
        } else {
            candidate.eq_ignore_ascii_case(needle)
        };
        if !equal {
            continue;
        }
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[start + needle.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            found.push(start);
        }
    }
    found
}

fn at_line_start(text: &str, pos: usize) -> bool {
    text[..pos]
        .chars()
        .rev()
        .take_while(|c| *c != '\n')
        .all(char::is_whitespace)
}

#[derive(Debug, Clone, Copy)]
struct LabelHit {
    start: usize,
    end: usize,
    line_start: bool,
}

/// Occurrences of a field label: `Label:` anywhere on a word boundary, or a
/// bare `Label` alone on its line.
fn label_hits(text: &str, label: &str, case_sensitive: bool) -> Vec<LabelHit> {
    let label = label.trim();
    let mut hits = Vec::new();
    for start in word_matches(text, label, case_sensitive) {
        let after = start + label.len();
        let rest = &text[after..];
        let gap = rest.len() - rest.trim_start_matches([' ', '\t']).len();
        let line_start = at_line_start(text, start);
        if rest[gap..].starts_with(':') {
            hits.push(LabelHit {
                start,
                end: after + gap + 1,
                line_start,
            });
        } else if line_start && rest[gap..].chars().next().is_none_or(|c| c == '\n' || c == '\r') {
            hits.push(LabelHit {
                start,
                end: after + gap,
                line_start,
            });
        }
    }
    hits
}

/// First hit at or after `from`, preferring hits that start a line.
fn preferred_hit(hits: &[LabelHit], from: usize) -> Option<LabelHit> {
    let after: Vec<&LabelHit> = hits.iter().filter(|h| h.start >= from).collect();
    after
        .iter()
        .find(|h| h.line_start)
        .or_else(|| after.first())
        .map(|h| **h)
}

/// Start of a trailing `Heading:` section (e.g. `Explanation:`) at or after
/// `from`. A heading starts a line or follows sentence-ending punctuation.
fn trailer_start(text: &str, from: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut pos = from;
    while pos < bytes.len() {
        let boundary = pos == 0
            || at_line_start(text, pos)
            || (pos >= 2
                && bytes[pos - 1] == b' '
                && matches!(bytes[pos - 2], b'.' | b'?' | b'!'));
        if boundary && bytes[pos].is_ascii_uppercase() && heading_len(&text[pos..]).is_some() {
            return Some(pos);
        }
        pos += text[pos..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Length of a one-to-three word heading followed by a colon.
fn heading_len(rest: &str) -> Option<usize> {
    let mut words = 0;
    let mut i = 0;
    let bytes = rest.as_bytes();
    loop {
        let word = bytes[i..].iter().take_while(|b| b.is_ascii_alphanumeric()).count();
        if word == 0 {
            return None;
        }
        words += 1;
        i += word;
        match bytes.get(i) {
            Some(b':') => {
                return match bytes.get(i + 1) {
                    None | Some(b' ') | Some(b'\n') | Some(b'\r') | Some(b'\t') => Some(i + 1),
                    _ => None,
                }
            }
            Some(b' ') if words < 3 => i += 1,
            _ => return None,
        }
    }
}

/// Splits a `Label: value` response into the rule's expected fields.
///
/// Each field runs from its label to the next expected label. With
/// `allow_extra_text`, a preamble and any trailing `Heading:` sections after
/// the last field are kept in `trailing_unparsed`.
pub fn parse_fielded_record(text: &str, rule: &ParseRule) -> Result<ParsedRecord, ParseError> {
    let ParseKind::FieldedRecord { labels } = &rule.kind else {
        return Err(ParseError::WrongRule);
    };
    let text = strip_decoration(text);
    let hits: Vec<Vec<LabelHit>> = labels
        .iter()
        .map(|label| label_hits(&text, label, rule.case_sensitive))
        .collect();

    // (label index, hit); an implicit first field has an empty hit at 0.
    let mut chosen: Vec<(usize, LabelHit)> = Vec::with_capacity(labels.len());
    let implicit = LabelHit {
        start: 0,
        end: 0,
        line_start: true,
    };
    if rule.strict_order {
        let mut cursor = 0;
        for (index, label) in labels.iter().enumerate() {
            match preferred_hit(&hits[index], cursor) {
                Some(hit) => {
                    cursor = hit.end;
                    chosen.push((index, hit));
                }
                None if index == 0 && rule.implicit_first => chosen.push((index, implicit)),
                None if !hits[index].is_empty() => return Err(ParseError::OutOfOrder(label.clone())),
                None => return Err(ParseError::MissingField(label.clone())),
            }
        }
    } else {
        for (index, label) in labels.iter().enumerate() {
            match preferred_hit(&hits[index], 0) {
                Some(hit) => chosen.push((index, hit)),
                None if index == 0 && rule.implicit_first => chosen.push((index, implicit)),
                None => return Err(ParseError::MissingField(label.clone())),
            }
        }
        chosen.sort_by_key(|(_, hit)| hit.start);
        // Labels found inside another label's span are not real matches.
        for pair in chosen.windows(2) {
            if pair[1].1.start < pair[0].1.end {
                return Err(ParseError::MissingField(labels[pair[1].0].clone()));
            }
        }
        if rule.implicit_first && chosen[0].0 != 0 && chosen.iter().any(|(i, h)| *i == 0 && h.end == 0) {
            return Err(ParseError::MissingField(labels[0].clone()));
        }
    }

    let first_start = chosen.first().map_or(0, |(_, hit)| hit.start);
    let preamble = text[..first_start].trim();
    if !preamble.is_empty() && !rule.allow_extra_text {
        return Err(ParseError::ExtraText(preamble.to_string()));
    }

    let mut values: Vec<(usize, String)> = Vec::with_capacity(chosen.len());
    let mut matched_labels = Vec::new();
    let mut trailer = "";
    for (position, (index, hit)) in chosen.iter().enumerate() {
        if hit.end > hit.start {
            matched_labels.push(text[hit.start..hit.end].to_string());
        }
        let value_end = match chosen.get(position + 1) {
            Some((_, next)) => next.start,
            None if rule.allow_extra_text => match trailer_start(&text, hit.end) {
                Some(cut) if !text[hit.end..cut].trim().is_empty() => cut,
                _ => text.len(),
            },
            None => text.len(),
        };
        if position + 1 == chosen.len() {
            trailer = text[value_end..].trim();
        }
        let value = text[hit.end..value_end].trim();
        if value.is_empty() {
            return Err(ParseError::EmptyField(labels[*index].clone()));
        }
        values.push((*index, value.to_string()));
    }
    values.sort_by_key(|(index, _)| *index);

    let trailing_unparsed = [preamble, trailer]
        .into_iter()
        .filter(|part| !part.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ParsedRecord {
        fields: values
            .into_iter()
            .map(|(index, value)| (labels[index].clone(), value))
            .collect(),
        trailing_unparsed,
        matched_labels,
    })
}

const PREFERRED_MARKERS: [&str; 3] = ["output", "answer", "label"];

/// Regions of text following an `Output:`, `Answer:` or `LABEL:` marker.
/// A marker that ends its line points at the next nonempty line.
fn preferred_regions(text: &str) -> Vec<&str> {
    let lines: Vec<&str> = text.lines().collect();
    let mut regions = Vec::new();
    for (row, line) in lines.iter().enumerate() {
        let mut region_start = None;
        for marker in PREFERRED_MARKERS {
            for hit in label_hits(line, marker, false) {
                if line[hit.end - 1..].starts_with(':') {
                    region_start = Some(region_start.map_or(hit.end, |s: usize| s.max(hit.end)));
                }
            }
        }
        let Some(start) = region_start else { continue };
        let region = &line[start..];
        if region.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation()).is_empty() {
            if let Some(next) = lines[row + 1..].iter().find(|l| !l.trim().is_empty()) {
                regions.push(*next);
            }
        } else {
            regions.push(region);
        }
    }
    regions
}

/// Schema labels mentioned in `region` after discarding matches nested in a
/// longer matching label, in schema order.
fn labels_in(region: &str, schema: &LabelSchema) -> Vec<String> {
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for (index, label) in schema.labels().iter().enumerate() {
        let label = label.trim();
        for start in word_matches(region, label, false) {
            spans.push((start, start + label.len(), index));
        }
    }
    let kept: Vec<usize> = spans
        .iter()
        .filter(|(start, end, _)| {
            !spans.iter().any(|(s, e, _)| {
                s <= start && end <= e && (e - s) > (end - start)
            })
        })
        .map(|(_, _, index)| *index)
        .collect();
    let mut labels: Vec<usize> = kept;
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|index| schema.labels()[index].clone())
        .collect()
}

fn clean_open_answer(region: &str) -> String {
    let mut answer = region.trim();
    if let Some(rest) = answer.strip_prefix("[X]:").or_else(|| answer.strip_prefix("[x]:")) {
        answer = rest.trim();
    }
    answer
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
        .trim_end_matches(['.', ',', ';'])
        .trim()
        .to_string()
}

/// The schema label `text` commits to.
///
/// Lines introduced by `Output:`, `Answer:` or `LABEL:` are consulted first;
/// the first such region naming a label decides. Otherwise the whole text is
/// searched. When one label is contained in another (`entailment` in
/// `not entailment`) the longer match wins.
pub fn extract_label(text: &str, schema: &LabelSchema) -> Result<String, ParseError> {
    let text = strip_decoration(text);
    if schema.is_open() {
        let region = preferred_regions(&text)
            .into_iter()
            .next()
            .map(str::to_string)
            .or_else(|| {
                let mut lines = text.lines().filter(|l| !l.trim().is_empty());
                let only = lines.next()?;
                lines.next().is_none().then(|| only.to_string())
            })
            .ok_or(ParseError::NotFound)?;
        let answer = clean_open_answer(&region);
        return if answer.is_empty() {
            Err(ParseError::NotFound)
        } else {
            Ok(answer)
        };
    }
    for region in preferred_regions(&text) {
        let found = labels_in(region, schema);
        match found.len() {
            0 => continue,
            1 => return Ok(found.into_iter().next().unwrap_or_default()),
            _ => return Err(ParseError::Ambiguous(found)),
        }
    }
    let found = labels_in(&text, schema);
    match found.len() {
        0 => Err(ParseError::NotFound),
        1 => Ok(found.into_iter().next().unwrap_or_default()),
        _ => Err(ParseError::Ambiguous(found)),
    }
}
