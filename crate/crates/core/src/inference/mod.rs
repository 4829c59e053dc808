//! Open-vocabulary scene graphs from fused features, text tables and a
//! relationship decoder.

pub mod decoder;
pub mod table;
pub mod text;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use decoder::{
    DecodeRequest, DecoderError, ExternalDecoder, FallbackDecoder, NearestNeighborDecoder, RelationshipDecoder,
    PROMPT_TEMPLATE,
};
pub use table::{cosine, EmbeddingTable};
pub use text::{HashingTextEmbedder, TableTextEmbedder, TextEmbedder};

use crate::formats::FormatError;
use crate::scene::InstanceId;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("{context}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("feature has zero norm and cannot be classified")]
    Unclassifiable,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("text `{0}` has no embedding")]
    UnknownText(String),
    #[error("no node with id {0}")]
    UnknownNode(InstanceId),
    #[error("no edge ({0}, {1})")]
    UnknownEdge(InstanceId, InstanceId),
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("{0}")]
    Table(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("graph file {path}: {reason}")]
    GraphFile { path: String, reason: String },
}

/// Mean of the 2D and 3D features, or the 3D feature alone.
pub fn fuse(f2d: Option<&[f32]>, f3d: &[f32]) -> Result<Vec<f32>, InferenceError> {
    match f2d {
        None => Ok(f3d.to_vec()),
        Some(a) if a.len() != f3d.len() => Err(InferenceError::DimensionMismatch {
            context: "fusing 2D and 3D features".into(),
            expected: f3d.len(),
            found: a.len(),
        }),
        Some(a) => Ok(a.iter().zip(f3d).map(|(&x, &y)| ((x as f64 + y as f64) / 2.0) as f32).collect()),
    }
}

pub fn classify_node(fused: &[f32], table: &EmbeddingTable, top_k: usize) -> Result<Vec<(String, f64)>, InferenceError> {
    if top_k == 0 {
        return Err(InferenceError::InvalidTopK);
    }
    table.rank(fused, top_k)
}

/// Same ranking as [`classify_node`] against an attribute table.
pub fn query_attribute(fused: &[f32], table: &EmbeddingTable, top_k: usize) -> Result<Vec<(String, f64)>, InferenceError> {
    classify_node(fused, table, top_k)
}

/// Encodes `phrase` and ranks the closed-set `lookup` labels by cosine.
pub fn map_to_label_set(
    phrase: &str,
    lookup: &EmbeddingTable,
    embedder: &dyn TextEmbedder,
    top_k: usize,
) -> Result<Vec<(String, f64)>, InferenceError> {
    if top_k == 0 {
        return Err(InferenceError::InvalidTopK);
    }
    let v = embedder.embed(phrase)?;
    lookup.rank(&v, top_k)
}

pub type Ranked = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedNode {
    pub id: InstanceId,
    pub labels: Ranked,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Fused feature in object space.
    #[serde(default)]
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedEdge {
    pub i: InstanceId,
    pub j: InstanceId,
    /// `None` when decoding failed; `error` then says why.
    pub phrase: Option<String>,
    pub mapped: Ranked,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Fused feature in relationship space.
    #[serde(default)]
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSceneGraph {
    pub nodes: Vec<PredictedNode>,
    pub edges: Vec<PredictedEdge>,
}

impl PredictedSceneGraph {
    pub fn node(&self, id: InstanceId) -> Option<&PredictedNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, i: InstanceId, j: InstanceId) -> Option<&PredictedEdge> {
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn read(path: &Path) -> Result<Self, InferenceError> {
        let err = |reason: String| InferenceError::GraphFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), InferenceError> {
        let text = serde_json::to_string_pretty(self).expect("graph serialises");
        crate::formats::write_file(path, text.as_bytes())?;
        Ok(())
    }
}

/// Per-scene features handed to [`build_graph`], in skeleton order.
#[derive(Debug, Clone, Default)]
pub struct GraphFeatures {
    pub nodes: Vec<InstanceId>,
    pub node_f2d: Vec<Option<Vec<f32>>>,
    pub node_f3d: Vec<Vec<f32>>,
    pub edges: Vec<(InstanceId, InstanceId)>,
    pub edge_f2d: Vec<Option<Vec<f32>>>,
    pub edge_f3d: Vec<Vec<f32>>,
}

pub struct GraphContext<'a> {
    pub objects: &'a EmbeddingTable,
    pub lookup: &'a EmbeddingTable,
    pub embedder: &'a dyn TextEmbedder,
    pub decoder: &'a dyn RelationshipDecoder,
    pub top_k_objects: usize,
    pub top_k_mapped: usize,
    /// Subject/object labels to condition on instead of the predicted ones.
    pub label_override: Option<&'a BTreeMap<InstanceId, String>>,
}

/// Classifies every node, then decodes and maps every edge conditioned on
/// the node labels. Failures are recorded on the affected node or edge.
pub fn build_graph(features: &GraphFeatures, ctx: &GraphContext<'_>) -> Result<PredictedSceneGraph, InferenceError> {
    let mut nodes = Vec::with_capacity(features.nodes.len());
    for (k, &id) in features.nodes.iter().enumerate() {
        let fused = fuse(features.node_f2d[k].as_deref(), &features.node_f3d[k])?;
        let (labels, error) = match classify_node(&fused, ctx.objects, ctx.top_k_objects) {
            Ok(l) => (l, None),
            Err(InferenceError::Unclassifiable) => (Vec::new(), Some(InferenceError::Unclassifiable.to_string())),
            Err(e) => return Err(e),
        };
        nodes.push(PredictedNode {
            id,
            labels,
            error,
            feature: fused,
        });
    }
    let label_of = |id: InstanceId| -> String {
        if let Some(l) = ctx.label_override.and_then(|m| m.get(&id)) {
            return l.clone();
        }
        nodes
            .iter()
            .find(|n| n.id == id)
            .and_then(|n| n.labels.first())
            .map(|l| l.0.clone())
            .unwrap_or_else(|| "object".to_string())
    };
    let mut fused_edges = Vec::with_capacity(features.edges.len());
    for k in 0..features.edges.len() {
        fused_edges.push(fuse(features.edge_f2d[k].as_deref(), &features.edge_f3d[k])?);
    }
    let labels: Vec<(String, String)> = features.edges.iter().map(|&(i, j)| (label_of(i), label_of(j))).collect();
    let reqs: Vec<DecodeRequest<'_>> = fused_edges
        .iter()
        .zip(&labels)
        .map(|(f, (s, o))| DecodeRequest {
            edge_feature: f,
            subject: s,
            object: o,
        })
        .collect();
    let decoded = ctx.decoder.decode_all(&reqs);
    let mut edges = Vec::with_capacity(features.edges.len());
    for ((&(i, j), result), feature) in features.edges.iter().zip(decoded).zip(fused_edges) {
        let edge = match result {
            Ok(phrase) => match map_to_label_set(&phrase, ctx.lookup, ctx.embedder, ctx.top_k_mapped.max(1)) {
                Ok(mapped) => PredictedEdge {
                    i,
                    j,
                    phrase: Some(phrase),
                    mapped,
                    error: None,
                    feature,
                },
                Err(e) => PredictedEdge {
                    i,
                    j,
                    phrase: Some(phrase),
                    mapped: Vec::new(),
                    error: Some(e.to_string()),
                    feature,
                },
            },
            Err(e) => PredictedEdge {
                i,
                j,
                phrase: None,
                mapped: Vec::new(),
                error: Some(e.to_string()),
                feature,
            },
        };
        edges.push(edge);
    }
    Ok(PredictedSceneGraph { nodes, edges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localized {
    pub i: InstanceId,
    pub j: InstanceId,
    pub score: f64,
}

/// Edge whose subject, mapped predicate and object best match the query;
/// ties go to the lowest `(i, j)`.
pub fn localize_triplet(
    graph: &PredictedSceneGraph,
    query: (&str, &str, &str),
    objects: &EmbeddingTable,
    lookup: &EmbeddingTable,
    embedder: &dyn TextEmbedder,
) -> Result<Localized, InferenceError> {
    let (s, p, o) = query;
    let sv = objects.get(s).ok_or_else(|| InferenceError::UnknownText(s.to_string()))?;
    let ov = objects.get(o).ok_or_else(|| InferenceError::UnknownText(o.to_string()))?;
    let pv = embedder.embed(p)?;
    let mut edges: Vec<&PredictedEdge> = graph.edges.iter().collect();
    edges.sort_by_key(|e| (e.i, e.j));
    let mut best: Option<Localized> = None;
    for e in edges {
        let ni = graph.node(e.i).ok_or(InferenceError::UnknownNode(e.i))?;
        let nj = graph.node(e.j).ok_or(InferenceError::UnknownNode(e.j))?;
        let pred = e
            .mapped
            .first()
            .and_then(|(l, _)| lookup.get(l))
            .map_or(0.0, |mv| cosine(&pv, mv));
        let score = (cosine(sv, &ni.feature) + pred + cosine(ov, &nj.feature)) / 3.0;
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Localized { i: e.i, j: e.j, score });
        }
    }
    best.ok_or(InferenceError::EmptyGraph)
}

/// Nodes ranked by cosine between their fused feature and `text`'s object
/// embedding; ties by lowest id.
pub fn query_nodes(graph: &PredictedSceneGraph, text: &str, objects: &EmbeddingTable, top_k: usize) -> Result<Vec<(InstanceId, f64)>, InferenceError> {
    let q = objects.get(text).ok_or_else(|| InferenceError::UnknownText(text.to_string()))?;
    let mut ranked: Vec<(InstanceId, f64)> = graph.nodes.iter().map(|n| (n.id, cosine(q, &n.feature))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if top_k > 0 {
        ranked.truncate(top_k);
    }
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objects() -> EmbeddingTable {
        EmbeddingTable::new(
            "object-text",
            2,
            vec![("chair".into(), vec![1.0, 0.0]), ("table".into(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    fn lookup() -> EmbeddingTable {
        EmbeddingTable::new(
            "lookup-text",
            2,
            vec![("standing on".into(), vec![1.0, 0.0]), ("left of".into(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn fuse_cases() {
        assert_eq!(fuse(None, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse(Some(&[1.0, 0.0]), &[0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(fuse(Some(&[3.0, 4.0]), &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert!(fuse(Some(&[1.0]), &[1.0, 2.0]).is_err());
    }

    fn graph() -> PredictedSceneGraph {
        let lk = lookup();
        let embedder = TableTextEmbedder::new(lk.clone());
        let feats = GraphFeatures {
            nodes: vec![1, 2],
            node_f2d: vec![None, Some(vec![0.0, 1.0])],
            node_f3d: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            edges: vec![(1, 2), (2, 1)],
            edge_f2d: vec![None, None],
            edge_f3d: vec![vec![1.0, 0.1], vec![0.0, 0.0]],
        };
        let pred = EmbeddingTable::new("predicate-text", 2, vec![("standing on".into(), vec![1.0, 0.0]), ("left of".into(), vec![0.0, 1.0])]).unwrap();
        let dec = NearestNeighborDecoder::new(pred);
        let objs = objects();
        let ctx = GraphContext {
            objects: &objs,
            lookup: &lk,
            embedder: &embedder,
            decoder: &dec,
            top_k_objects: 2,
            top_k_mapped: 2,
            label_override: None,
        };
        build_graph(&feats, &ctx).unwrap()
    }

    #[test]
    fn graph_records_failures_per_edge() {
        let g = graph();
        assert_eq!(g.nodes[0].labels[0].0, "chair");
        assert_eq!(g.nodes[1].labels[0].0, "table");
        assert_eq!(g.edges[0].phrase.as_deref(), Some("standing on"));
        assert_eq!(g.edges[0].mapped[0], ("standing on".to_string(), 1.0));
        assert!(g.edges[1].phrase.is_none() && g.edges[1].error.is_some());
        let json = serde_json::to_string(&g).unwrap();
        let back: PredictedSceneGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert!(json.contains(r#""labels":[["chair",1.0],["table",0.0]]"#), "{json}");
    }

    #[test]
    fn localization_prefers_matching_edge() {
        let g = graph();
        let lk = lookup();
        let emb = TableTextEmbedder::new(lk.clone());
        let best = localize_triplet(&g, ("chair", "standing on", "table"), &objects(), &lk, &emb).unwrap();
        assert_eq!((best.i, best.j), (1, 2));
        assert!((best.score - 1.0).abs() < 1e-9);
        let q = query_nodes(&g, "table", &objects(), 0).unwrap();
        assert_eq!(q[0].0, 2);
    }

    #[test]
    fn map_identity_lookup() {
        let lk = lookup();
        let emb = TableTextEmbedder::new(lk.clone());
        assert_eq!(map_to_label_set("left of", &lk, &emb, 1).unwrap()[0].0, "left of");
        assert_eq!(map_to_label_set("left of", &lk, &emb, 5).unwrap().len(), 2);
        assert!(matches!(classify_node(&[1.0, 0.0], &objects(), 0), Err(InferenceError::InvalidTopK)));
    }
}
