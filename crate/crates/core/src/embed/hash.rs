use super::{BaseEmbedder, EmbedError, Vector};

pub const DEFAULT_DIM: usize = 384;

/// Deterministic offline embedder: lowercase words and padded character
/// trigrams, signed-hashed (FNV-1a) into `dim` buckets and L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: DEFAULT_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    fn features(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut feats = Vec::new();
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            feats.push(format!("w:{word}"));
            let padded: Vec<char> = std::iter::once('^')
                .chain(word.chars())
                .chain(std::iter::once('$'))
                .collect();
            for tri in padded.windows(3) {
                feats.push(format!("t:{}", tri.iter().collect::<String>()));
            }
        }
        feats
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl BaseEmbedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        let feats = Self::features(text);
        if feats.is_empty() {
            return Err(EmbedError::NoFeatures(text.to_string()));
        }
        let mut v = Vector::zeros(self.dim);
        for f in feats {
            let h = fnv1a(f.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        super::normalize(v)
    }
}
