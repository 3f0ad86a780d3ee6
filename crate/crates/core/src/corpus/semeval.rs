//! Reader for the SemEval-2013 student-response XML release.
//!
//! Each file holds one `<question>` with its `<questionText>`, a list of
//! `<referenceAnswer>`s and the graded `<studentAnswer>`s. The split is
//! inferred from the nearest ancestor directory name (`train`,
//! `test-unseen-answers`, ...); files outside any recognised directory are
//! treated as training data.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{Corpus, CorpusError, Label5, LabeledResponse, Question, Split};

const JUDGMENT_ATTRS: [&str; 4] = ["accuracy", "judgment", "judgement", "label"];

pub fn parse_semeval_xml(root: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(CorpusError::MissingDirectory(root.to_path_buf()));
    }

    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::NoQuestionFiles(root.to_path_buf()));
    }

    let mut questions: BTreeMap<String, Question> = BTreeMap::new();
    let mut splits: BTreeMap<Split, Vec<LabeledResponse>> = BTreeMap::new();
    let mut response_ids = HashSet::new();

    for path in &files {
        let split = split_for(root, path);
        let text = fs::read_to_string(path)?;
        let parsed = parse_question_file(path, &text)?;
        questions
            .entry(parsed.question.id.clone())
            .or_insert(parsed.question);
        for mut r in parsed.responses {
            if !response_ids.insert(r.id.clone()) {
                r.id = format!("{}@{}", r.id, split);
                response_ids.insert(r.id.clone());
            }
            splits.entry(split).or_default().push(r);
        }
    }

    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "semeval".into());
    Corpus::new(name, questions.into_values().collect(), splits)
}

fn split_for(root: &Path, file: &Path) -> Split {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let mut dirs: Vec<String> = rel
        .parent()
        .map(|p| {
            p.components()
                .map(|c| c.as_os_str().to_string_lossy().to_lowercase())
                .collect()
        })
        .unwrap_or_default();
    // The root itself may be the split directory.
    if let Some(name) = root.file_name() {
        dirs.insert(0, name.to_string_lossy().to_lowercase());
    }
    dirs.iter()
        .rev()
        .find_map(|d| split_from_dir_name(d))
        .unwrap_or(Split::Train)
}

fn split_from_dir_name(name: &str) -> Option<Split> {
    let squashed: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
    if squashed.contains("unseenanswer") || squashed == "ua" || squashed == "testua" {
        Some(Split::Ua)
    } else if squashed.contains("unseenquestion") || squashed == "uq" || squashed == "testuq" {
        Some(Split::Uq)
    } else if squashed.contains("unseendomain") || squashed == "ud" || squashed == "testud" {
        Some(Split::Ud)
    } else if squashed.contains("train") {
        Some(Split::Train)
    } else {
        None
    }
}

struct ParsedFile {
    question: Question,
    responses: Vec<LabeledResponse>,
}

fn local_name_is(node: roxmltree::Node<'_, '_>, names: &[&str]) -> bool {
    node.is_element()
        && names
            .iter()
            .any(|n| node.tag_name().name().eq_ignore_ascii_case(n))
}

fn node_text(node: roxmltree::Node<'_, '_>) -> String {
    let mut s = String::new();
    for d in node.descendants().filter(|d| d.is_text()) {
        s.push_str(d.text().unwrap_or_default());
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn attr_ci<'a>(node: roxmltree::Node<'a, '_>, names: &[&str]) -> Option<&'a str> {
    node.attributes()
        .find(|a| names.iter().any(|n| a.name().eq_ignore_ascii_case(n)))
        .map(|a| a.value())
}

fn parse_question_file(path: &Path, text: &str) -> Result<ParsedFile, CorpusError> {
    let malformed = |message: String| CorpusError::MalformedXml {
        path: path.to_path_buf(),
        message,
    };
    let doc = roxmltree::Document::parse(text).map_err(|e| malformed(e.to_string()))?;
    let qnode = doc
        .descendants()
        .find(|n| local_name_is(*n, &["question"]))
        .ok_or_else(|| malformed("no <question> element".into()))?;
    let qid = attr_ci(qnode, &["id"])
        .map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .ok_or_else(|| malformed("question has no id".into()))?;
    let qtext = qnode
        .descendants()
        .find(|n| local_name_is(*n, &["questionText", "text"]))
        .map(node_text)
        .ok_or_else(|| malformed("no <questionText> element".into()))?;
    if qtext.is_empty() {
        return Err(malformed(format!("question {qid:?} has empty text")));
    }
    let references = qnode
        .descendants()
        .filter(|n| local_name_is(*n, &["referenceAnswer"]))
        .map(node_text)
        .filter(|t| !t.is_empty())
        .collect();

    let mut responses = Vec::new();
    for (i, node) in qnode
        .descendants()
        .filter(|n| local_name_is(*n, &["studentAnswer"]))
        .enumerate()
    {
        let raw = attr_ci(node, &JUDGMENT_ATTRS).ok_or_else(|| {
            malformed(format!(
                "student answer {} of {qid:?} has no judgment attribute",
                i + 1
            ))
        })?;
        let label = Label5::parse_judgment(raw).ok_or_else(|| CorpusError::UnknownJudgment {
            path: path.to_path_buf(),
            value: raw.to_string(),
        })?;
        let id = attr_ci(node, &["id"])
            .map(str::to_string)
            .unwrap_or_else(|| format!("{qid}.{}", i + 1));
        let text = node_text(node);
        if text.is_empty() {
            return Err(malformed(format!("student answer {id:?} has empty text")));
        }
        responses.push(LabeledResponse {
            id,
            question_id: qid.clone(),
            text,
            label,
        });
    }

    Ok(ParsedFile {
        question: Question {
            id: qid,
            text: qtext,
            reference_answers: references,
        },
        responses,
    })
}
