use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::{collapse, Label5, Scheme};
use crate::promptkit::Style;

const DSPY_MARKER: &str = "judgment of the new answer:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub label: &'static str,
    /// Text the label was resolved from.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable judgment ({reason}): {raw:?}")]
pub struct ParseFailure {
    pub raw: String,
    pub reason: String,
}

fn judgment_span() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<judgment>(.*?)</judgment>").expect("valid regex"))
}

fn normalize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized phrases accepted for each label of `scheme`, longest first.
fn vocabulary(scheme: Scheme) -> Vec<(String, &'static str)> {
    let spellings: &[(&str, Label5)] = &[
        ("correct", Label5::Correct),
        ("partially correct but incomplete", Label5::PcIncomplete),
        ("partially correct incomplete", Label5::PcIncomplete),
        ("partially correct", Label5::PcIncomplete),
        ("pc incomplete", Label5::PcIncomplete),
        ("contradictory", Label5::Contradictory),
        ("irrelevant", Label5::Irrelevant),
        ("non domain", Label5::NonDomain),
        ("nondomain", Label5::NonDomain),
    ];
    let mut vocab: Vec<(String, &'static str)> = spellings
        .iter()
        .map(|(s, l)| (s.to_string(), collapse(*l, scheme)))
        .collect();
    for label in scheme.labels() {
        vocab.push((normalize(label), label));
    }
    vocab.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    vocab.dedup_by(|a, b| a.0 == b.0);
    vocab
}

fn resolve(text: &str, scheme: Scheme) -> Option<&'static str> {
    let padded = format!(" {} ", normalize(text));
    vocabulary(scheme)
        .into_iter()
        .find(|(phrase, _)| padded.contains(&format!(" {phrase} ")))
        .map(|(_, label)| label)
}

/// Extract the judgment text from a completion and map it to a label of
/// `scheme`.
///
/// Tagged output uses the last `<judgment>` span. Field-style output uses
/// the text after the last `Judgment of the New Answer:` marker, or the first
/// non-blank line when the completion is only the continuation.
pub fn parse_judgment(raw: &str, scheme: Scheme, style: Style) -> Result<Judgment, ParseFailure> {
    let fail = |reason: &str| ParseFailure {
        raw: raw.to_string(),
        reason: reason.into(),
    };
    let span: &str = match style {
        Style::Cpg => judgment_span()
            .captures_iter(raw)
            .last()
            .map(|c| c.get(1).expect("group 1").as_str())
            .ok_or_else(|| fail("no <judgment> span"))?,
        Style::Dspy => {
            // ASCII lowercasing keeps byte offsets aligned with `raw`.
            let lower = raw.to_ascii_lowercase();
            match lower.rfind(DSPY_MARKER) {
                Some(i) => &raw[i + DSPY_MARKER.len()..],
                None => raw.lines().find(|l| !l.trim().is_empty()).unwrap_or(""),
            }
        }
    };
    let span = span.trim();
    let label = resolve(span, scheme).ok_or_else(|| fail("no label matched"))?;
    Ok(Judgment {
        label,
        raw: span.to_string(),
    })
}
