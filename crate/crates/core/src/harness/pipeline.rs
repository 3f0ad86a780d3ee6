use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use super::HarnessError;
use crate::corpus::{collapse, Corpus, LabeledResponse, Scheme};
use crate::embed::TextEmbedder;
use crate::glm::{parse_judgment, GenParams, GlmBackend};
use crate::promptkit::{examples_from_hits, render, Placeholder, PromptBindings, PromptTemplate};
use crate::vstore::{RetrievalConfig, StoreError, VectorStore};

/// Everything needed to score one answer: retrieve, render, complete,
/// parse.
pub struct Pipeline<'a> {
    pub corpus: &'a Corpus,
    pub store: &'a VectorStore,
    pub embedder: &'a dyn TextEmbedder,
    pub backend: &'a dyn GlmBackend,
    pub template: &'a PromptTemplate,
    pub retrieval: RetrievalConfig,
    pub scheme: Scheme,
    pub params: GenParams,
    /// Label used when the completion cannot be parsed.
    pub fallback: &'static str,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub response_id: String,
    pub question_id: String,
    pub gold: String,
    pub predicted: String,
    pub parse_failed: bool,
    /// Store indices of the retrieved examples, in rank order.
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
}

impl Pipeline<'_> {
    pub fn prompt_for(
        &self,
        text: &str,
        question_id: &str,
    ) -> Result<(String, Vec<usize>), HarnessError> {
        let question = self.corpus.question(question_id);
        let mut neighbors = Vec::new();
        let examples = if self.template.has(Placeholder::Examples) {
            match self
                .store
                .top_k(text, Some(question_id), self.embedder, self.retrieval)
            {
                Ok(hits) => {
                    neighbors = hits.iter().map(|h| h.index).collect();
                    Some(examples_from_hits(&hits, self.scheme))
                }
                Err(StoreError::EmptyCandidates) => {
                    log::debug!("no retrieval candidates for question {question_id}");
                    Some(Vec::new())
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let bindings = PromptBindings {
            question: question.map(|q| q.text.clone()),
            reference_answer: question.map(|q| q.reference_text()),
            examples,
            new_answer: text.to_string(),
        };
        Ok((render(self.template, &bindings)?.text, neighbors))
    }

    pub fn predict(&self, response: &LabeledResponse) -> Result<Prediction, HarnessError> {
        let (prompt, neighbors) = self.prompt_for(&response.text, &response.question_id)?;
        let raw = self.backend.complete(&prompt, &self.params)?;
        let (predicted, parse_failed) = match parse_judgment(&raw, self.scheme, self.template.style)
        {
            Ok(j) => (j.label, false),
            Err(f) => {
                log::warn!("response {}: {f}", response.id);
                (self.fallback, true)
            }
        };
        Ok(Prediction {
            response_id: response.id.clone(),
            question_id: response.question_id.clone(),
            gold: collapse(response.label, self.scheme).to_string(),
            predicted: predicted.to_string(),
            parse_failed,
            neighbors,
        })
    }

    /// Score responses in order. With `workers > 1` chunks run on scoped
    /// threads and are reassembled in input order.
    pub fn score(&self, responses: &[&LabeledResponse]) -> Result<Scored, HarnessError> {
        let predictions: Vec<Prediction> = if self.workers <= 1 || responses.len() < 2 {
            responses
                .iter()
                .map(|r| self.predict(r))
                .collect::<Result<_, _>>()?
        } else {
            let chunk = responses.len().div_ceil(self.workers);
            std::thread::scope(|s| {
                let handles: Vec<_> = responses
                    .chunks(chunk)
                    .map(|c| {
                        s.spawn(move || {
                            c.iter()
                                .map(|r| self.predict(r))
                                .collect::<Result<Vec<_>, _>>()
                        })
                    })
                    .collect();
                let mut out = Vec::with_capacity(responses.len());
                for h in handles {
                    out.extend(h.join().expect("scoring worker panicked")?);
                }
                Ok::<_, HarnessError>(out)
            })?
        };
        let mut confusion = ConfusionMatrix::new(self.scheme.labels());
        for p in &predictions {
            confusion.record(&p.gold, &p.predicted)?;
            if p.parse_failed {
                confusion.record_parse_failure();
            }
        }
        Ok(Scored {
            predictions,
            confusion,
        })
    }
}
