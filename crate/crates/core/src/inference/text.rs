//! Text encoders used to map free-text phrases into a label space.

use super::table::EmbeddingTable;
use super::InferenceError;

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, InferenceError>;
}

/// Looks phrases up in a table; exact match first, then case-insensitive.
#[derive(Debug, Clone)]
pub struct TableTextEmbedder {
    table: EmbeddingTable,
}

impl TableTextEmbedder {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }
}

impl TextEmbedder for TableTextEmbedder {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, InferenceError> {
        let t = text.trim();
        if let Some(v) = self.table.get(t) {
            return Ok(v.to_vec());
        }
        let lower = t.to_lowercase();
        self.table
            .entries()
            .find(|(l, _)| l.to_lowercase() == lower)
            .map(|(_, v)| v.to_vec())
            .ok_or_else(|| InferenceError::UnknownText(text.to_string()))
    }
}

/// Signed feature hashing of character trigrams, L2-normalised.
#[derive(Debug, Clone, Copy)]
pub struct HashingTextEmbedder {
    dim: usize,
}

impl HashingTextEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl TextEmbedder for HashingTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, InferenceError> {
        let norm: String = text.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        if norm.is_empty() {
            return Err(InferenceError::UnknownText(text.to_string()));
        }
        let chars: Vec<char> = format!("  {norm} ").chars().collect();
        let mut v = vec![0.0f64; self.dim];
        for w in chars.windows(3) {
            let s: String = w.iter().collect();
            let h = fnv1a(s.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| if n > 0.0 { (x / n) as f32 } else { 0.0 }).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_normalised() {
        let e = HashingTextEmbedder::new(32);
        let a = e.embed("standing on").unwrap();
        assert_eq!(a, e.embed("  Standing   on ").unwrap());
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert_ne!(a, e.embed("lying on").unwrap());
        assert!(e.embed("   ").is_err());
    }

    #[test]
    fn table_lookup_is_case_insensitive() {
        let t = EmbeddingTable::new("lookup-text", 1, vec![("Left Of".into(), vec![2.0])]).unwrap();
        let e = TableTextEmbedder::new(t);
        assert_eq!(e.embed("left of").unwrap(), vec![2.0]);
        assert!(matches!(e.embed("right of"), Err(InferenceError::UnknownText(_))));
    }
}
