use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{normalize, BaseEmbedder, EmbedError, Vector};

pub const ADAPTER_FORMAT: &str = "ragscore-adapter";
pub const ADAPTER_VERSION: u32 = 1;

/// Provenance written in front of the weight payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub loss: Option<String>,
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub base_embedder: Option<String>,
    /// Question the adapter was trained for, if question-specific.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    /// Reference to the training-set manifest, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_on: Option<String>,
}

/// Square linear map applied to base embeddings before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAdapter {
    weights: DMatrix<f64>,
    pub header: AdapterHeader,
}

/// Forward pass of one input: the raw projection `W x`, its norm, and the
/// unit vector.
#[derive(Debug, Clone)]
pub struct Projection {
    pub unit: Vector,
    pub norm: f64,
}

impl EmbeddingAdapter {
    pub fn identity(dim: usize) -> Self {
        EmbeddingAdapter {
            weights: DMatrix::identity(dim, dim),
            header: AdapterHeader {
                format: ADAPTER_FORMAT.into(),
                version: ADAPTER_VERSION,
                dim,
                loss: None,
                config: None,
                seed: None,
                base_embedder: None,
                question_id: None,
                trained_on: None,
            },
        }
    }

    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, EmbedError> {
        if weights.nrows() != weights.ncols() {
            return Err(EmbedError::DimensionMismatch {
                expected: weights.nrows(),
                actual: weights.ncols(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let mut a = EmbeddingAdapter::identity(weights.nrows());
        a.weights = weights;
        Ok(a)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.weights *= factor;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.weights
    }

    pub fn project(&self, x: &Vector) -> Result<Projection, EmbedError> {
        if x.len() != self.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let z = &self.weights * x;
        let norm = z.norm();
        let unit = normalize(z)?;
        Ok(Projection { unit, norm })
    }

    /// `normalize(W · base.embed(text))`.
    pub fn embed(&self, base: &dyn BaseEmbedder, text: &str) -> Result<Vector, EmbedError> {
        Ok(self.project(&base.embed(text)?)?.unit)
    }

    /// One JSON header line, then the row-major little-endian `f64` weights.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        let mut header = self.header.clone();
        header.format = ADAPTER_FORMAT.into();
        header.version = ADAPTER_VERSION;
        header.dim = self.dim();
        let line = serde_json::to_string(&header).map_err(|e| EmbedError::Format(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        let d = self.dim();
        let mut buf = Vec::with_capacity(d * d * 8);
        for r in 0..d {
            for c in 0..d {
                buf.extend_from_slice(&self.weights[(r, c)].to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let f = fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, EmbedError> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: AdapterHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| EmbedError::Format(format!("bad header: {e}")))?;
        if header.format != ADAPTER_FORMAT || header.version != ADAPTER_VERSION {
            return Err(EmbedError::Format(format!(
                "unsupported adapter {} v{} (expected {ADAPTER_FORMAT} v{ADAPTER_VERSION})",
                header.format, header.version
            )));
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let d = header.dim;
        if payload.len() != d * d * 8 {
            return Err(EmbedError::Format(format!(
                "expected {} payload bytes for dim {d}, found {}",
                d * d * 8,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut adapter = EmbeddingAdapter::from_weights(DMatrix::from_row_slice(d, d, &values))?;
        adapter.header = header;
        Ok(adapter)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read_from(fs::File::open(path)?)
    }
}
