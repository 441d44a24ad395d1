use crate::clients::{ClientError, EmbeddingClient};

pub const FIXTURE_EMBED_DIM: usize = 256;

/// Offline embedding backend: lowercase, split on non-alphanumerics, hash
/// each word (FNV-1a, 64-bit) into one of `dim` buckets, count, normalize.
/// Text without words embeds to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    dim: usize,
}

impl HashedBagOfWords {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            v[(fnv1a(word.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        crate::vision::descriptor::normalize_in_place(&mut v);
        v
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(FIXTURE_EMBED_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl EmbeddingClient for HashedBagOfWords {
    fn backend_id(&self) -> String {
        format!("hashed-bow-fnv1a-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_fnv_vector() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let e = HashedBagOfWords::default();
        assert_eq!(e.vector("Extrude, the BODY!"), e.vector("extrude the body"));
    }

    #[test]
    fn empty_is_zero_vector() {
        assert!(HashedBagOfWords::default().vector(" ,. ").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_norm() {
        let v = HashedBagOfWords::default().vector("sketch a circle then extrude it");
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
