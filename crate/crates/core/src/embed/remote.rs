use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BaseEmbedder, EmbedError, Vector};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Base embedder served over HTTP: `POST {"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteEmbedder {
            url: url.into(),
            dim,
            agent,
        }
    }
}

impl BaseEmbedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.url, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Remote(format!("status {}", resp.status())));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Remote(format!("bad response body: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Remote(format!(
                "asked for {} vectors, received {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::NonFinite);
                }
                Ok(Vector::from_vec(v))
            })
            .collect()
    }
}
