//! Grading prompt templates, retrieved-example formatting, and single-pass
//! placeholder rendering.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{collapse, Label5, Scheme, Split};
use crate::sha256_hex;
use crate::vstore::Hit;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no template for task {task}, scenario {scenario}, style {style}")]
    UnknownCombination {
        task: Task,
        scenario: Scenario,
        style: Style,
    },
    #[error("template {id}: checksum mismatch (index {expected}, file {actual})")]
    Checksum {
        id: String,
        expected: String,
        actual: String,
    },
    #[error("template {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("missing binding for {{{{{0}}}}}")]
    MissingBinding(Placeholder),
    #[error("unreplaced placeholder at byte {offset}: {snippet:?}")]
    Unreplaced { offset: usize, snippet: String },
    #[error("bad template index: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sb3,
    Sb2,
    Beetle5,
}

impl Task {
    pub fn scheme(self) -> Scheme {
        match self {
            Task::Sb3 => Scheme::ThreeWay,
            Task::Sb2 => Scheme::TwoWay,
            Task::Beetle5 => Scheme::FiveWay,
        }
    }

    /// Template family whose judgment vocabulary matches `scheme`.
    pub fn for_scheme(scheme: Scheme) -> Task {
        match scheme {
            Scheme::ThreeWay => Task::Sb3,
            Scheme::TwoWay => Task::Sb2,
            Scheme::FiveWay => Task::Beetle5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sb3 => "sb3",
            Task::Sb2 => "sb2",
            Task::Beetle5 => "beetle5",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WithExamples,
    WithoutExamples,
}

impl Scenario {
    /// Default for a test split: examples only for unseen answers.
    pub fn for_split(split: Split) -> Scenario {
        match split {
            Split::Train | Split::Ua => Scenario::WithExamples,
            Split::Uq | Split::Ud => Scenario::WithoutExamples,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::WithExamples => "with_examples",
            Scenario::WithoutExamples => "without_examples",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Cpg,
    Dspy,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Cpg => "cpg",
            Style::Dspy => "dspy",
        })
    }
}

impl FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cpg" => Ok(Style::Cpg),
            "dspy" => Ok(Style::Dspy),
            _ => Err(format!(
                "unknown template style {s:?} (expected cpg or dspy)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Question,
    ReferenceAnswer,
    Examples,
    NewAnswer,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::Question,
        Placeholder::ReferenceAnswer,
        Placeholder::Examples,
        Placeholder::NewAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Question => "QUESTION",
            Placeholder::ReferenceAnswer => "REFERENCE_ANSWER",
            Placeholder::Examples => "EXAMPLES",
            Placeholder::NewAnswer => "NEW_ANSWER",
        }
    }

    pub fn token(self) -> String {
        format!("{{{{{}}}}}", self.name())
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A piece of template text: literal bytes or a placeholder slot.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Placeholder),
}

fn tokenize(body: &str) -> Result<Vec<Segment>, (usize, String)> {
    let mut segments = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(pos) = rest.find("{{") {
        let after = &rest[pos + 2..];
        let slot = Placeholder::ALL
            .into_iter()
            .find(|p| after.starts_with(p.name()) && after[p.name().len()..].starts_with("}}"));
        let Some(slot) = slot else {
            let snippet: String = rest[pos..].chars().take(24).collect();
            return Err((offset + pos, snippet));
        };
        if pos > 0 {
            segments.push(Segment::Text(rest[..pos].to_string()));
        }
        segments.push(Segment::Slot(slot));
        let consumed = pos + 4 + slot.name().len();
        rest = &rest[consumed..];
        offset += consumed;
    }
    if !rest.is_empty() {
        segments.push(Segment::Text(rest.to_string()));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub task: Task,
    pub scenario: Scenario,
    pub style: Style,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parse and validate a template body against its declared scenario.
    pub fn new(
        id: impl Into<String>,
        task: Task,
        scenario: Scenario,
        style: Style,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let id = id.into();
        let body = body.into();
        let segments = tokenize(&body).map_err(|(offset, snippet)| PromptError::Invalid {
            id: id.clone(),
            message: format!("unknown placeholder at byte {offset}: {snippet:?}"),
        })?;
        let t = PromptTemplate {
            id,
            task,
            scenario,
            style,
            body,
            segments,
        };
        if !t.has(Placeholder::NewAnswer) {
            return Err(t.invalid("missing {{NEW_ANSWER}}"));
        }
        match (scenario, t.has(Placeholder::Examples)) {
            (Scenario::WithExamples, false) => {
                return Err(t.invalid("with_examples template lacks {{EXAMPLES}}"))
            }
            (Scenario::WithoutExamples, true) => {
                return Err(t.invalid("without_examples template contains {{EXAMPLES}}"))
            }
            _ => {}
        }
        Ok(t)
    }

    fn invalid(&self, message: &str) -> PromptError {
        PromptError::Invalid {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.body.as_bytes())
    }

    pub fn has(&self, p: Placeholder) -> bool {
        self.segments.contains(&Segment::Slot(p))
    }

    /// Distinct placeholders in order of first appearance.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut out = Vec::new();
        for s in &self.segments {
            if let Segment::Slot(p) = s {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    /// Same metadata, different body; used for optimizer candidates.
    pub fn with_body(
        &self,
        id: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        PromptTemplate::new(id, self.task, self.scenario, self.style, body)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PromptError> {
        fs::write(path, &self.body)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateIndexEntry {
    pub id: String,
    pub task: Task,
    pub scenario: Scenario,
    pub style: Style,
    pub path: String,
    pub sha256: String,
}

const BUNDLED_INDEX: &str = include_str!("../templates/index.json");

const BUNDLED_FILES: &[(&str, &str)] = &[
    (
        "sb3-ua-cpg.txt",
        include_str!("../templates/sb3-ua-cpg.txt"),
    ),
    (
        "sb3-uq-cpg.txt",
        include_str!("../templates/sb3-uq-cpg.txt"),
    ),
    (
        "sb3-ua-dspy.txt",
        include_str!("../templates/sb3-ua-dspy.txt"),
    ),
    (
        "sb3-uq-dspy.txt",
        include_str!("../templates/sb3-uq-dspy.txt"),
    ),
    (
        "sb2-ua-cpg.txt",
        include_str!("../templates/sb2-ua-cpg.txt"),
    ),
    (
        "sb2-uq-cpg.txt",
        include_str!("../templates/sb2-uq-cpg.txt"),
    ),
    (
        "beetle5-ua-cpg.txt",
        include_str!("../templates/beetle5-ua-cpg.txt"),
    ),
    (
        "beetle5-uq-cpg.txt",
        include_str!("../templates/beetle5-uq-cpg.txt"),
    ),
];

/// A checksummed collection of templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    fn from_index(
        index: &str,
        read: impl Fn(&str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let entries: Vec<TemplateIndexEntry> =
            serde_json::from_str(index).map_err(|e| PromptError::Index(e.to_string()))?;
        let mut templates = Vec::with_capacity(entries.len());
        for e in entries {
            let body = read(&e.path)?;
            let actual = sha256_hex(body.as_bytes());
            if actual != e.sha256 {
                return Err(PromptError::Checksum {
                    id: e.id,
                    expected: e.sha256,
                    actual,
                });
            }
            templates.push(PromptTemplate::new(
                e.id, e.task, e.scenario, e.style, body,
            )?);
        }
        Ok(TemplateSet { templates })
    }

    /// Templates compiled into the binary, checksums verified.
    pub fn bundled() -> Result<Self, PromptError> {
        TemplateSet::from_index(BUNDLED_INDEX, |path| {
            BUNDLED_FILES
                .iter()
                .find(|(p, _)| *p == path)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| PromptError::Index(format!("bundled template {path} not found")))
        })
    }

    /// Load `index.json` and its template files from a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let index = fs::read_to_string(dir.join("index.json"))?;
        TemplateSet::from_index(&index, |path| Ok(fs::read_to_string(dir.join(path))?))
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn get(
        &self,
        task: Task,
        scenario: Scenario,
        style: Style,
    ) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .iter()
            .find(|t| t.task == task && t.scenario == scenario && t.style == style)
            .ok_or(PromptError::UnknownCombination {
                task,
                scenario,
                style,
            })
    }
}

/// Fetch one of the bundled templates.
pub fn load_template(
    task: Task,
    scenario: Scenario,
    style: Style,
) -> Result<PromptTemplate, PromptError> {
    TemplateSet::bundled()?.get(task, scenario, style).cloned()
}

/// A retrieved answer and its judgment, already in the task's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub answer: String,
    pub judgment: String,
}

/// Convert retrieval hits to examples, collapsing stored 5-way judgments
/// into `scheme`'s label strings. Unrecognized judgments pass through.
pub fn examples_from_hits(hits: &[Hit<'_>], scheme: Scheme) -> Vec<Example> {
    hits.iter()
        .map(|h| Example {
            answer: h.metadata.response_text.clone(),
            judgment: match Label5::parse_judgment(&h.metadata.judgment) {
                Some(l) => collapse(l, scheme).to_string(),
                None => h.metadata.judgment.clone(),
            },
        })
        .collect()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Numbered `Example i:` blocks in rank order, separated by blank lines.
pub fn format_examples(examples: &[Example]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            format!(
                "Example {}:\nAnswer: {}\nJudgment: {}\n",
                i + 1,
                one_line(&e.answer),
                e.judgment
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBindings {
    pub question: Option<String>,
    pub reference_answer: Option<String>,
    pub examples: Option<Vec<Example>>,
    pub new_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Substitute every placeholder once. Bound values are inserted verbatim and
/// never scanned for placeholders.
pub fn render(
    template: &PromptTemplate,
    bindings: &PromptBindings,
) -> Result<Rendered, PromptError> {
    if bindings.new_answer.trim().is_empty() {
        return Err(PromptError::MissingBinding(Placeholder::NewAnswer));
    }
    let mut warnings = Vec::new();
    if bindings.examples.as_ref().is_some_and(|e| !e.is_empty())
        && !template.has(Placeholder::Examples)
    {
        let w = format!(
            "template {} has no {{{{EXAMPLES}}}} slot; supplied examples ignored",
            template.id
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let examples = bindings.examples.as_deref().map(format_examples);
    let mut text = String::with_capacity(template.body.len() + 1024);
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => text.push_str(t),
            Segment::Slot(p) => {
                let value = match p {
                    Placeholder::Question => bindings.question.as_deref(),
                    Placeholder::ReferenceAnswer => bindings.reference_answer.as_deref(),
                    Placeholder::Examples => examples.as_deref(),
                    Placeholder::NewAnswer => Some(bindings.new_answer.as_str()),
                };
                text.push_str(value.ok_or(PromptError::MissingBinding(*p))?);
            }
        }
    }
    Ok(Rendered { text, warnings })
}
