//! Answer corpora: questions, graded student responses, and the
//! train / unseen-answer / unseen-question / unseen-domain partitions.

mod jsonl;
mod semeval;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{parse_jsonl, parse_jsonl_str, write_jsonl, write_jsonl_string};
pub use semeval::parse_semeval_xml;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("no question files found under {0}")]
    NoQuestionFiles(PathBuf),
    #[error("malformed XML in {path}: {message}")]
    MalformedXml { path: PathBuf, message: String },
    #[error("unknown judgment {value:?} in {path}")]
    UnknownJudgment { path: PathBuf, value: String },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("response {response_id:?} references unknown question {question_id:?}")]
    UnknownQuestion {
        response_id: String,
        question_id: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Five-way gold judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label5 {
    Correct,
    PcIncomplete,
    Contradictory,
    Irrelevant,
    NonDomain,
}

impl Label5 {
    pub const ALL: [Label5; 5] = [
        Label5::Correct,
        Label5::PcIncomplete,
        Label5::Contradictory,
        Label5::Irrelevant,
        Label5::NonDomain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label5::Correct => "correct",
            Label5::PcIncomplete => "partially correct but incomplete",
            Label5::Contradictory => "contradictory",
            Label5::Irrelevant => "irrelevant",
            Label5::NonDomain => "non-domain",
        }
    }

    /// Resolve a judgment string from any of the supported spellings.
    ///
    /// Matching ignores case and treats runs of whitespace, `_` and `-` as a
    /// single separator, so `non_domain`, `Non-Domain` and `non domain` agree.
    pub fn parse_judgment(raw: &str) -> Option<Label5> {
        let key = normalize_judgment(raw);
        let label = match key.as_str() {
            "correct" => Label5::Correct,
            "partially correct but incomplete"
            | "partially correct incomplete"
            | "pc incomplete"
            | "pc inc" => Label5::PcIncomplete,
            "contradictory" | "contra" => Label5::Contradictory,
            "irrelevant" | "irrlvnt" => Label5::Irrelevant,
            "non domain" | "nondomain" | "non dom" => Label5::NonDomain,
            _ => return None,
        };
        Some(label)
    }
}

impl fmt::Display for Label5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label5 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label5::parse_judgment(s).ok_or_else(|| format!("unknown judgment {s:?}"))
    }
}

impl Serialize for Label5 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label5 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn normalize_judgment(raw: &str) -> String {
    raw.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Classification scheme. The 3-way and 2-way schemes are collapses of the
/// 5-way gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "5way")]
    FiveWay,
    #[serde(rename = "3way")]
    ThreeWay,
    #[serde(rename = "2way")]
    TwoWay,
}

pub const INCORRECT: &str = "incorrect";

impl Scheme {
    /// Canonical label strings of the scheme, in reporting order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Scheme::FiveWay => &[
                "correct",
                "partially correct but incomplete",
                "contradictory",
                "irrelevant",
                "non-domain",
            ],
            Scheme::ThreeWay => &["correct", "contradictory", "incorrect"],
            Scheme::TwoWay => &["correct", "incorrect"],
        }
    }

    /// Map a canonical label of this scheme to itself; `None` if the string
    /// is not a label of the scheme.
    pub fn canonical(self, label: &str) -> Option<&'static str> {
        self.labels().iter().copied().find(|l| *l == label)
    }

    /// Label recorded for unparseable completions: `incorrect` where the
    /// scheme has it, `irrelevant` under 5-way.
    pub fn fallback_label(self) -> &'static str {
        match self {
            Scheme::FiveWay => Label5::Irrelevant.as_str(),
            Scheme::ThreeWay | Scheme::TwoWay => INCORRECT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FiveWay => "5way",
            Scheme::ThreeWay => "3way",
            Scheme::TwoWay => "2way",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "5way" | "five" | "fiveway" | "5" => Ok(Scheme::FiveWay),
            "3way" | "three" | "threeway" | "3" => Ok(Scheme::ThreeWay),
            "2way" | "two" | "twoway" | "2" => Ok(Scheme::TwoWay),
            _ => Err(format!(
                "unknown scheme {s:?} (expected 5way, 3way or 2way)"
            )),
        }
    }
}

/// Collapse a 5-way label into the label string of `scheme`.
///
/// 3-way incorrect covers partially-correct-incomplete, irrelevant and
/// non-domain; 2-way incorrect covers everything except correct.
pub fn collapse(label: Label5, scheme: Scheme) -> &'static str {
    match (scheme, label) {
        (Scheme::FiveWay, l) => l.as_str(),
        (_, Label5::Correct) => "correct",
        (Scheme::ThreeWay, Label5::Contradictory) => "contradictory",
        (Scheme::ThreeWay, _) => INCORRECT,
        (Scheme::TwoWay, _) => INCORRECT,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Ua,
    Uq,
    Ud,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Ua, Split::Uq, Split::Ud];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Ua => "ua",
            Split::Uq => "uq",
            Split::Ud => "ud",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "ua" => Ok(Split::Ua),
            "uq" => Ok(Split::Uq),
            "ud" => Ok(Split::Ud),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub reference_answers: Vec<String>,
}

impl Question {
    /// Reference answers joined one per line, as bound into prompts.
    pub fn reference_text(&self) -> String {
        self.reference_answers.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub id: String,
    pub question_id: String,
    pub text: String,
    pub label: Label5,
}

/// An immutable, cross-checked answer corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    questions: BTreeMap<String, Question>,
    splits: BTreeMap<Split, Vec<LabeledResponse>>,
}

impl Corpus {
    /// Assemble a corpus, enforcing id uniqueness, non-empty texts and
    /// question resolution. Split-level invariants (UA/UQ question overlap)
    /// are reported by [`validate`] rather than rejected here.
    pub fn new(
        name: impl Into<String>,
        questions: Vec<Question>,
        splits: BTreeMap<Split, Vec<LabeledResponse>>,
    ) -> Result<Self, CorpusError> {
        let mut qmap = BTreeMap::new();
        for q in questions {
            if q.text.trim().is_empty() {
                return Err(CorpusError::Invalid(format!(
                    "question {:?} has empty text",
                    q.id
                )));
            }
            if qmap.contains_key(&q.id) {
                return Err(CorpusError::DuplicateId {
                    kind: "question",
                    id: q.id,
                });
            }
            qmap.insert(q.id.clone(), q);
        }
        let mut seen = HashSet::new();
        for r in splits.values().flatten() {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    kind: "response",
                    id: r.id.clone(),
                });
            }
            if r.text.trim().is_empty() {
                return Err(CorpusError::Invalid(format!(
                    "response {:?} has empty text",
                    r.id
                )));
            }
            if !qmap.contains_key(&r.question_id) {
                return Err(CorpusError::UnknownQuestion {
                    response_id: r.id.clone(),
                    question_id: r.question_id.clone(),
                });
            }
        }
        let splits = splits.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        Ok(Corpus {
            name: name.into(),
            questions: qmap,
            splits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn questions(&self) -> &BTreeMap<String, Question> {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.get(id)
    }

    /// Responses of a split in corpus order; empty when the split is absent.
    pub fn split(&self, split: Split) -> &[LabeledResponse] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.splits.contains_key(&split)
    }

    pub fn splits(&self) -> impl Iterator<Item = (Split, &[LabeledResponse])> {
        self.splits.iter().map(|(s, v)| (*s, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Responses of `split` grouped by question id, preserving corpus order
    /// within each group.
    pub fn by_question(&self, split: Split) -> BTreeMap<&str, Vec<&LabeledResponse>> {
        let mut groups: BTreeMap<&str, Vec<&LabeledResponse>> = BTreeMap::new();
        for r in self.split(split) {
            groups.entry(r.question_id.as_str()).or_default().push(r);
        }
        groups
    }

    pub fn find_response(&self, id: &str) -> Option<&LabeledResponse> {
        self.splits.values().flatten().find(|r| r.id == id)
    }

    fn question_ids(&self, split: Split) -> BTreeSet<&str> {
        self.split(split)
            .iter()
            .map(|r| r.question_id.as_str())
            .collect()
    }
}

/// Per-split label tallies.
pub type LabelCounts = BTreeMap<Split, BTreeMap<Label5, usize>>;

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, split: Split, label: Label5) -> usize {
        self.counts
            .get(split.as_str())
            .and_then(|m| m.get(label.as_str()))
            .copied()
            .unwrap_or(0)
    }
}

pub fn label_counts(corpus: &Corpus) -> LabelCounts {
    let mut out = LabelCounts::new();
    for (split, responses) in corpus.splits() {
        let row = out.entry(split).or_default();
        for l in Label5::ALL {
            row.insert(l, 0);
        }
        for r in responses {
            *row.entry(r.label).or_default() += 1;
        }
    }
    out
}

/// Check the split-level invariants and tally labels. Never fails; an
/// empty violation list means the corpus is well formed.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    let train = corpus.question_ids(Split::Train);

    for qid in corpus.question_ids(Split::Ua) {
        if !train.contains(qid) {
            violations.push(format!("ua question {qid:?} does not appear in train"));
        }
    }
    for qid in corpus.question_ids(Split::Uq) {
        if train.contains(qid) {
            violations.push(format!("uq question {qid:?} also appears in train"));
        }
    }
    for r in corpus.splits.values().flatten() {
        if !corpus.questions.contains_key(&r.question_id) {
            violations.push(format!(
                "response {:?} references unknown question {:?}",
                r.id, r.question_id
            ));
        }
    }

    let counts = label_counts(corpus)
        .into_iter()
        .map(|(s, row)| {
            (
                s.as_str().to_string(),
                row.into_iter()
                    .map(|(l, n)| (l.as_str().to_string(), n))
                    .collect(),
            )
        })
        .collect();
    ValidationReport { violations, counts }
}
