//! O3ET embedding tables and cosine ranking.

use std::collections::HashMap;
use std::path::Path;

use super::InferenceError;
use crate::formats::{read_file, write_file, ByteReader, ByteWriter, FormatError};

pub const MAGIC: &[u8; 4] = b"O3ET";
pub const VERSION: u32 = 1;
const FORMAT: &str = "O3ET";

/// Labelled vectors living in one embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    space: String,
    dim: usize,
    labels: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn is_zero(v: &[f32]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Sorts by score descending, then label ascending.
pub fn sort_ranked(ranked: &mut [(String, f64)]) {
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl EmbeddingTable {
    pub fn new(space: impl Into<String>, dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self, InferenceError> {
        let space = space.into();
        if entries.is_empty() {
            return Err(InferenceError::Table(format!("table `{space}` has no entries")));
        }
        let mut index = HashMap::new();
        let mut labels = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (k, (label, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(InferenceError::DimensionMismatch {
                    context: format!("table `{space}` entry `{label}`"),
                    expected: dim,
                    found: v.len(),
                });
            }
            if index.insert(label.clone(), k).is_some() {
                return Err(InferenceError::Table(format!("table `{space}` repeats label `{label}`")));
            }
            labels.push(label);
            vectors.push(v);
        }
        Ok(Self {
            space,
            dim,
            labels,
            vectors,
            index,
        })
    }

    pub fn space(&self) -> &str {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.labels.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn get(&self, label: &str) -> Option<&[f32]> {
        self.index.get(label).map(|&k| self.vectors[k].as_slice())
    }

    /// Top `top_k` labels by cosine to `feature` (`top_k == 0` keeps all).
    pub fn rank(&self, feature: &[f32], top_k: usize) -> Result<Vec<(String, f64)>, InferenceError> {
        if feature.len() != self.dim {
            return Err(InferenceError::DimensionMismatch {
                context: format!("feature ranked against table `{}`", self.space),
                expected: self.dim,
                found: feature.len(),
            });
        }
        if is_zero(feature) || feature.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::Unclassifiable);
        }
        let mut ranked: Vec<(String, f64)> = self
            .entries()
            .map(|(l, v)| (l.to_string(), cosine(feature, v)))
            .collect();
        sort_ranked(&mut ranked);
        if top_k > 0 {
            ranked.truncate(top_k);
        }
        Ok(ranked)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(MAGIC, VERSION);
        w.short_string(&self.space);
        w.u32(self.dim as u32);
        w.u64(self.labels.len() as u64);
        for (l, v) in self.labels.iter().zip(&self.vectors) {
            w.short_string(l);
            w.f32_slice(v);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(FORMAT, bytes);
        r.header(MAGIC, VERSION)?;
        let space = r.short_string("space")?;
        let dim = r.u32("dim")? as usize;
        let count = r.u64("count")?;
        let n = r.check_capacity(count, 2 + 4 * dim as u64, "count")?;
        if n == 0 {
            return Err(FormatError::invalid(FORMAT, "count", "table must have at least one entry"));
        }
        let mut entries = Vec::with_capacity(n);
        for k in 0..n {
            let label = r.short_string(&format!("entries[{k}].label"))?;
            let v = r.f32_vec(dim, &format!("entries[{k}].vector"))?;
            entries.push((label, v));
        }
        r.finish()?;
        Self::new(space, dim, entries).map_err(|e| FormatError::invalid(FORMAT, "entries", e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(
            "object-text",
            2,
            vec![
                ("chair".into(), vec![1.0, 0.0]),
                ("table".into(), vec![0.0, 1.0]),
                ("bench".into(), vec![1.0, 0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ranks_with_lexical_ties() {
        let r = table().rank(&[3.0, 0.0], 0).unwrap();
        assert_eq!(r[0], ("bench".to_string(), 1.0));
        assert_eq!(r[1].0, "chair");
        assert_eq!(table().rank(&[0.0, 2.0], 1).unwrap(), vec![("table".to_string(), 1.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(table().rank(&[0.0, 0.0], 1), Err(InferenceError::Unclassifiable)));
        assert!(matches!(table().rank(&[1.0], 1), Err(InferenceError::DimensionMismatch { .. })));
        let dup = EmbeddingTable::new("x", 1, vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]);
        assert!(dup.is_err());
    }

    #[test]
    fn roundtrip() {
        let t = table();
        let b = t.to_bytes();
        let back = EmbeddingTable::from_bytes(&b).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), b);
        let mut bad = b.clone();
        bad[8] = 0xff; // space length
        assert!(EmbeddingTable::from_bytes(&bad).is_err());
    }
}
