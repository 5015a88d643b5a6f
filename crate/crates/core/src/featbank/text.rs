use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TEXT_DIM;
use crate::config::stable_hash;
use crate::error::Result;

/// Pooled and token-level text features, 768-d.
pub trait TextEncoder: Send + Sync {
    /// Pooled vector for the whole text. Empty text gives the sentinel vector.
    fn encode(&self, text: &str) -> Result<Array1<f64>>;
    /// At most `cap` token vectors, one row each. Empty text gives a single
    /// sentinel row.
    fn encode_tokens(&self, text: &str, cap: usize) -> Result<Array2<f64>>;
    /// Changes whenever outputs would change; part of the feature cache key.
    fn version(&self) -> String;
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Every token maps to a fixed pseudo-random unit vector seeded by its hash.
#[derive(Debug, Clone, Default)]
pub struct HashingTextEncoder {
    pub salt: u64,
}

const SENTINEL_TOKEN: &str = "\u{0}empty";

impl HashingTextEncoder {
    pub fn new(salt: u64) -> Self {
        HashingTextEncoder { salt }
    }

    pub fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[b"tok", &self.salt.to_le_bytes(), token.as_bytes()]));
        let v: Array1<f64> = (0..TEXT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.dot(&v).sqrt();
        v / n
    }

    pub fn sentinel(&self) -> Array1<f64> {
        self.token_vector(SENTINEL_TOKEN)
    }
}

impl TextEncoder for HashingTextEncoder {
    fn encode(&self, text: &str) -> Result<Array1<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Ok(self.sentinel());
        }
        let mut sum = Array1::zeros(TEXT_DIM);
        for t in &tokens {
            sum += &self.token_vector(t);
        }
        let n = sum.dot(&sum).sqrt();
        Ok(if n > 0.0 { sum / n } else { self.sentinel() })
    }

    fn encode_tokens(&self, text: &str, cap: usize) -> Result<Array2<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() || cap == 0 {
            return Ok(self.sentinel().insert_axis(ndarray::Axis(0)));
        }
        let n = tokens.len().min(cap);
        let mut out = Array2::zeros((n, TEXT_DIM));
        for (i, t) in tokens.iter().take(n).enumerate() {
            out.row_mut(i).assign(&self.token_vector(t));
        }
        Ok(out)
    }

    fn version(&self) -> String {
        format!("hashing-text-1/{}", self.salt)
    }
}
