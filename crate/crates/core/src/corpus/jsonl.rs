use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Corpus, CorpusError, Label5, LabeledResponse, Question, Split};

/// Read the canonical one-record-per-line corpus format. The corpus name is
/// taken from the file stem.
pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_jsonl_str(&name, &text)
}

pub fn parse_jsonl_str(name: &str, text: &str) -> Result<Corpus, CorpusError> {
    let mut questions = Vec::new();
    let mut splits: BTreeMap<Split, Vec<LabeledResponse>> = BTreeMap::new();
    let mut response_lines = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Schema {
            line: lineno,
            field: "<record>".into(),
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Schema {
            line: lineno,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        })?;
        match str_field(obj, "kind", lineno)? {
            "question" => {
                let references = match obj.get("references") {
                    None | Some(Value::Null) => Vec::new(),
                    Some(Value::Array(items)) => items
                        .iter()
                        .map(|v| {
                            v.as_str()
                                .map(str::to_string)
                                .ok_or_else(|| CorpusError::Schema {
                                    line: lineno,
                                    field: "references".into(),
                                    message: "expected an array of strings".into(),
                                })
                        })
                        .collect::<Result<_, _>>()?,
                    Some(_) => {
                        return Err(CorpusError::Schema {
                            line: lineno,
                            field: "references".into(),
                            message: "expected an array of strings".into(),
                        })
                    }
                };
                questions.push(Question {
                    id: str_field(obj, "id", lineno)?.to_string(),
                    text: str_field(obj, "text", lineno)?.to_string(),
                    reference_answers: references,
                });
            }
            "response" => {
                let split: Split =
                    str_field(obj, "split", lineno)?
                        .parse()
                        .map_err(|m| CorpusError::Schema {
                            line: lineno,
                            field: "split".into(),
                            message: m,
                        })?;
                let label_raw = str_field(obj, "label", lineno)?;
                let label =
                    Label5::parse_judgment(label_raw).ok_or_else(|| CorpusError::Schema {
                        line: lineno,
                        field: "label".into(),
                        message: format!("unknown label {label_raw:?}"),
                    })?;
                let text = str_field(obj, "text", lineno)?;
                if text.trim().is_empty() {
                    return Err(CorpusError::Schema {
                        line: lineno,
                        field: "text".into(),
                        message: "empty response text".into(),
                    });
                }
                let r = LabeledResponse {
                    id: str_field(obj, "id", lineno)?.to_string(),
                    question_id: str_field(obj, "question_id", lineno)?.to_string(),
                    text: text.to_string(),
                    label,
                };
                response_lines.push((lineno, r.id.clone()));
                splits.entry(split).or_default().push(r);
            }
            other => {
                return Err(CorpusError::Schema {
                    line: lineno,
                    field: "kind".into(),
                    message: format!("unknown record kind {other:?}"),
                })
            }
        }
    }

    Corpus::new(name, questions, splits).map_err(|e| attach_line(e, &response_lines))
}

fn attach_line(err: CorpusError, response_lines: &[(usize, String)]) -> CorpusError {
    let line_of = |id: &str| {
        response_lines
            .iter()
            .find(|(_, r)| r == id)
            .map(|(l, _)| *l)
    };
    match err {
        CorpusError::UnknownQuestion {
            ref response_id,
            ref question_id,
        } => match line_of(response_id) {
            Some(line) => CorpusError::Schema {
                line,
                field: "question_id".into(),
                message: format!("unknown question {question_id:?}"),
            },
            None => err,
        },
        CorpusError::DuplicateId {
            kind: "response",
            ref id,
        } => match response_lines.iter().filter(|(_, r)| r == id).nth(1) {
            Some((line, _)) => CorpusError::Schema {
                line: *line,
                field: "id".into(),
                message: format!("duplicate response id {id:?}"),
            },
            None => err,
        },
        other => other,
    }
}

fn str_field<'a>(
    obj: &'a Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<&'a str, CorpusError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CorpusError::Schema {
            line,
            field: field.into(),
            message: "expected a string".into(),
        }),
        None => Err(CorpusError::Schema {
            line,
            field: field.into(),
            message: "missing".into(),
        }),
    }
}

pub fn write_jsonl_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for q in corpus.questions().values() {
        let rec = json!({
            "kind": "question",
            "id": q.id,
            "text": q.text,
            "references": q.reference_answers,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    for (split, responses) in corpus.splits() {
        for r in responses {
            let rec = json!({
                "kind": "response",
                "id": r.id,
                "question_id": r.question_id,
                "split": split.as_str(),
                "text": r.text,
                "label": r.label.as_str(),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
    }
    out
}

pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    fs::write(path, write_jsonl_string(corpus))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: &str = r#"{"kind":"question","id":"q1","text":"Why?","references":["Because."]}"#;

    #[test]
    fn three_line_fixture() {
        let text = format!(
            "{Q}\n{}\n{}\n{}\n",
            r#"{"kind":"response","id":"a","question_id":"q1","split":"train","text":"x","label":"correct"}"#,
            r#"{"kind":"response","id":"b","question_id":"q1","split":"train","text":"y","label":"irrelevant"}"#,
            r#"{"kind":"response","id":"c","question_id":"q1","split":"ua","text":"z","label":"contradictory"}"#,
        );
        let c = parse_jsonl_str("fx", &text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.split(Split::Ua)[0].label, Label5::Contradictory);
        assert_eq!(
            c.question("q1").unwrap().reference_answers,
            vec!["Because."]
        );
    }

    #[test]
    fn duplicate_response_id_is_an_error() {
        let text = format!(
            "{Q}\n{}\n{}\n",
            r#"{"kind":"response","id":"a","question_id":"q1","split":"train","text":"x","label":"correct"}"#,
            r#"{"kind":"response","id":"a","question_id":"q1","split":"ua","text":"y","label":"correct"}"#,
        );
        match parse_jsonl_str("fx", &text) {
            Err(CorpusError::Schema { line: 3, field, .. }) => assert_eq!(field, "id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_question_reports_line() {
        let text = format!(
            "{Q}\n{}\n",
            r#"{"kind":"response","id":"a","question_id":"q7","split":"ua","text":"x","label":"correct"}"#,
        );
        match parse_jsonl_str("fx", &text) {
            Err(CorpusError::Schema { line: 2, field, .. }) => assert_eq!(field, "question_id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_line_and_field() {
        let text = format!(
            "{Q}\n{}\n",
            r#"{"kind":"response","id":"a","question_id":"q1","split":"train","text":"x","label":"great"}"#,
        );
        let err = parse_jsonl_str("fx", &text).unwrap_err();
        assert!(
            matches!(err, CorpusError::Schema { line: 2, ref field, .. } if field == "label"),
            "{err}"
        );

        let err = parse_jsonl_str("fx", r#"{"kind":"question","id":"q1"}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 1, ref field, .. } if field == "text"));
    }
}
