//! Read-only interactive queries over one inferred scene graph.
//!
//! Every answer line is tab separated: `label<TAB>score` for rankings,
//! `id<TAB>score` for node queries, `i,j<TAB>score` for localisation.

use crate::config::PipelineConfig;
use crate::inference::{
    classify_node, cosine, localize_triplet, map_to_label_set, query_attribute, DecodeRequest, DecoderError,
    InferenceError, PredictedSceneGraph, TableTextEmbedder, TextEmbedder,
};
use crate::pipeline::{infer_scene, InferenceKit};
use crate::scene::{load_scene, InstanceId};
use crate::Error;

pub const HELP: &str = "commands:
  classify <node-id> [k]
  query \"<text>\" [k]
  relate <i> <j>
  localize \"<subject>\" \"<predicate>\" \"<object>\"
  attr <node-id> <table>
  help
  quit";

const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ReplError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("unknown command {0:?} (try `help`)")]
    UnknownCommand(String),
    #[error("unknown attribute table {0:?}")]
    UnknownTable(String),
    #[error("query disabled: {0:?} is not in the object text table")]
    QueryUnavailable(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("decoder: {0}")]
    Decoder(#[from] DecoderError),
}

pub struct Session {
    pub scene: String,
    pub graph: PredictedSceneGraph,
    kit: InferenceKit,
    object_text: TableTextEmbedder,
    top_k_mapped: usize,
}

fn parse_id(s: &str) -> Result<InstanceId, ReplError> {
    s.parse().map_err(|_| ReplError::Usage(format!("{s:?} is not a node id")))
}

fn parse_k(s: Option<&String>) -> Result<usize, ReplError> {
    match s {
        None => Ok(DEFAULT_K),
        Some(s) => match s.parse() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(ReplError::Usage(format!("{s:?} is not a positive k"))),
        },
    }
}

fn pairs<L: std::fmt::Display>(rows: impl IntoIterator<Item = (L, f64)>) -> Vec<String> {
    rows.into_iter().map(|(l, s)| format!("{l}\t{s:.6}")).collect()
}

impl Session {
    /// Loads the checkpoint and runs inference on the configured scene.
    pub fn open(cfg: &PipelineConfig) -> Result<Self, Error> {
        let scenes = cfg.inference_scenes();
        let path = match &cfg.repl.scene {
            None => scenes
                .first()
                .cloned()
                .ok_or_else(|| crate::config::ConfigError::invalid("scenes", "no scene to open"))?,
            Some(want) => {
                let mut found = None;
                for p in scenes {
                    if p.to_string_lossy() == *want || load_scene(p)?.name == *want {
                        found = Some(p.clone());
                        break;
                    }
                }
                found.ok_or_else(|| crate::config::ConfigError::invalid("repl.scene", format!("no inference scene named {want:?}")))?
            }
        };
        let scene = load_scene(&path)?;
        let kit = InferenceKit::load(cfg)?;
        let graph = infer_scene(cfg, &kit, &scene)?;
        Ok(Self::from_parts(scene.name, graph, kit, cfg.inference.top_k_mapped))
    }

    pub fn from_parts(scene: String, graph: PredictedSceneGraph, kit: InferenceKit, top_k_mapped: usize) -> Self {
        let object_text = TableTextEmbedder::new(kit.tables.objects.clone());
        Self {
            scene,
            graph,
            kit,
            object_text,
            top_k_mapped: top_k_mapped.max(1),
        }
    }

    fn label_of(&self, id: InstanceId) -> String {
        self.graph
            .node(id)
            .and_then(|n| n.labels.first())
            .map_or_else(|| "object".to_string(), |l| l.0.clone())
    }

    /// Runs one command line; `Ok(None)` for blank input.
    pub fn execute(&self, line: &str) -> Result<Option<Vec<String>>, ReplError> {
        let words = shell_words(line)?;
        let Some((cmd, args)) = words.split_first() else {
            return Ok(None);
        };
        let out = match (cmd.as_str(), args) {
            ("help", []) => HELP.lines().map(str::to_string).collect(),
            ("classify", [id, rest @ ..]) if rest.len() <= 1 => {
                let node = self.graph.node(parse_id(id)?).ok_or(InferenceError::UnknownNode(parse_id(id)?))?;
                pairs(classify_node(&node.feature, &self.kit.tables.objects, parse_k(rest.first())?)?)
            }
            ("query", [text, rest @ ..]) if rest.len() <= 1 => {
                let k = parse_k(rest.first())?;
                let q = self.object_text.embed(text).map_err(|e| match e {
                    InferenceError::UnknownText(t) => ReplError::QueryUnavailable(t),
                    other => other.into(),
                })?;
                let mut ranked: Vec<(InstanceId, f64)> =
                    self.graph.nodes.iter().map(|n| (n.id, cosine(&q, &n.feature))).collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.truncate(k);
                pairs(ranked)
            }
            ("relate", [i, j]) => {
                let (i, j) = (parse_id(i)?, parse_id(j)?);
                let edge = self.graph.edge(i, j).ok_or(InferenceError::UnknownEdge(i, j))?;
                let (subject, object) = (self.label_of(i), self.label_of(j));
                let phrase = self.kit.decoder.decode(&DecodeRequest {
                    edge_feature: &edge.feature,
                    subject: &subject,
                    object: &object,
                })?;
                let mapped = map_to_label_set(&phrase, &self.kit.tables.lookup, self.kit.tables.embedder.as_ref(), self.top_k_mapped)?;
                let mut out = vec![format!("phrase\t{phrase}")];
                out.extend(pairs(mapped));
                out
            }
            ("localize", [s, p, o]) => {
                let t = &self.kit.tables;
                let hit = localize_triplet(&self.graph, (s, p, o), &t.objects, &t.lookup, t.embedder.as_ref())?;
                vec![format!("{},{}\t{:.6}", hit.i, hit.j, hit.score)]
            }
            ("attr", [id, table]) => {
                let node = self.graph.node(parse_id(id)?).ok_or(InferenceError::UnknownNode(parse_id(id)?))?;
                let t = self.kit.tables.attributes.get(table).ok_or_else(|| ReplError::UnknownTable(table.clone()))?;
                pairs(query_attribute(&node.feature, t, t.len())?)
            }
            ("help" | "classify" | "query" | "relate" | "localize" | "attr", _) => {
                let usage = HELP.lines().find(|l| l.trim_start().starts_with(cmd.as_str())).unwrap_or(HELP);
                return Err(ReplError::Usage(usage.trim().to_string()));
            }
            _ => return Err(ReplError::UnknownCommand(cmd.clone())),
        };
        Ok(Some(out))
    }
}

/// Splits a command line with shell-style quoting.
fn shell_words(line: &str) -> Result<Vec<String>, ReplError> {
    shlex::split(line).ok_or_else(|| ReplError::Usage("unbalanced quotes".into()))
}
