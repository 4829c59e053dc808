//! Pipeline configuration: one JSON file plus `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eval::EvalConfig;
use crate::features::DEFAULT_SCALES;
use crate::fixture::FixtureConfig;
use crate::net::{ModelConfig, TrainConfig};
use crate::selection::SelectionParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config field `{field}`: {reason}")]
    Parse { field: String, reason: String },
    #[error("bad override {arg:?}: {reason}")]
    Override { arg: String, reason: String },
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Dotted path of the offending field, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Parse { field, .. } | Self::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TablesConfig {
    /// Object-space text table used for node classification and querying.
    pub object: Option<PathBuf>,
    /// Predicate-space table used by the nearest-neighbor decoder.
    pub predicate: Option<PathBuf>,
    /// Closed-set relationship labels in text space.
    pub lookup: Option<PathBuf>,
    /// Free-text phrases in the lookup space; the lookup table is used when absent.
    pub phrases: Option<PathBuf>,
    /// Named attribute tables in object space (e.g. materials).
    pub attributes: BTreeMap<String, PathBuf>,
    /// Attribute table scored against ground-truth attributes by `eval`.
    pub attribute_table: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub scales: Vec<f32>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Drop edges whose instance centres are farther apart than this (metres).
    pub max_pair_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Nearest,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEmbedderKind {
    #[default]
    Table,
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub decoder: DecoderKind,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub max_in_flight: usize,
    /// Retry failed external decodes with the nearest-neighbor decoder.
    pub fallback_to_nearest: bool,
    pub top_k_objects: usize,
    pub top_k_mapped: usize,
    pub text_embedder: TextEmbedderKind,
    /// Dimension of the hashing text embedder.
    pub hashing_dim: usize,
    /// Condition relationship prompts on ground-truth object labels.
    pub use_gt_labels: bool,
    /// Average projected 2D features with the 3D predictions when available.
    pub fuse_2d: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderKind::Nearest,
            endpoint: None,
            timeout_s: crate::inference::decoder::DEFAULT_TIMEOUT.as_secs_f64(),
            max_in_flight: crate::inference::decoder::DEFAULT_MAX_IN_FLIGHT,
            fallback_to_nearest: false,
            top_k_objects: 10,
            top_k_mapped: 5,
            text_embedder: TextEmbedderKind::Table,
            hashing_dim: 64,
            use_gt_labels: false,
            fuse_2d: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplConfig {
    /// Scene name or manifest path; the first inference scene when unset.
    pub scene: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Training scene manifests.
    pub scenes: Vec<PathBuf>,
    /// Scenes for `infer`, `eval` and the REPL; `scenes` when empty.
    pub eval_scenes: Vec<PathBuf>,
    pub work_dir: PathBuf,
    /// Defaults to `<work_dir>/model.o3ck`.
    pub checkpoint: Option<PathBuf>,
    pub tables: TablesConfig,
    /// Class frequency JSON for head/body/tail splits.
    pub frequency: Option<PathBuf>,
    pub selection: SelectionParams,
    pub features: FeaturesConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub fixture: FixtureConfig,
    pub repl: ReplConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenes: Vec::new(),
            eval_scenes: Vec::new(),
            work_dir: PathBuf::from("work"),
            checkpoint: None,
            tables: TablesConfig::default(),
            frequency: None,
            selection: SelectionParams::default(),
            features: FeaturesConfig::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
            fixture: FixtureConfig::default(),
            repl: ReplConfig::default(),
        }
    }
}

/// Splits `key=value`; the value is parsed as JSON and taken as a string
/// when that fails.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let bad = |reason: &str| ConfigError::Override {
        arg: arg.to_string(),
        reason: reason.to_string(),
    };
    let (key, raw) = arg.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(bad("empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn apply_override(root: &mut Value, path: &[String], value: Value, arg: &str) -> Result<(), ConfigError> {
    let mut cur = root;
    for (depth, seg) in path.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| ConfigError::Override {
            arg: arg.to_string(),
            reason: format!("`{}` is not an object", path[..depth].join(".")),
        })?;
        if depth + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a JSON document with overrides applied; no path resolution.
    pub fn from_value(mut root: Value, overrides: &[String]) -> Result<Self, ConfigError> {
        if !root.is_object() {
            return Err(ConfigError::Parse {
                field: "<root>".into(),
                reason: "config must be a JSON object".into(),
            });
        }
        for arg in overrides {
            let (path, value) = parse_override(arg)?;
            apply_override(&mut root, &path, value, arg)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(root).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, applies overrides (which win), validates and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let root: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            field: "<root>".into(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_value(root, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.scenes.iter_mut().chain(self.eval_scenes.iter_mut()).for_each(|p| resolve(base, p));
        resolve(base, &mut self.work_dir);
        resolve(base, &mut self.fixture.out_dir);
        let t = &mut self.tables;
        for p in [&mut self.checkpoint, &mut self.frequency, &mut t.object, &mut t.predicate, &mut t.lookup, &mut t.phrases]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        t.attributes.values_mut().for_each(|p| resolve(base, p));
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let split = |msg: String| {
            let (field, reason) = msg.split_once(' ').unwrap_or((msg.as_str(), ""));
            ConfigError::invalid(field, reason)
        };
        if let Err(crate::scene::SceneError::InvalidParameter(m)) = self.selection.validate() {
            return Err(split(format!("selection.{m}")));
        }
        if self.features.scales.is_empty() {
            return Err(ConfigError::invalid("features.scales", "must list at least one scale"));
        }
        if let Some(s) = self.features.scales.iter().find(|s| !(s.is_finite() && **s >= 1.0)) {
            return Err(ConfigError::invalid("features.scales", format!("scale {s} must be finite and >= 1")));
        }
        if let Some(d) = self.graph.max_pair_distance {
            if !(d > 0.0) {
                return Err(ConfigError::invalid("graph.max_pair_distance", "must be positive"));
            }
        }
        self.model.validate().map_err(split)?;
        self.train.validate().map_err(split)?;
        let inf = &self.inference;
        if !(inf.timeout_s > 0.0 && inf.timeout_s.is_finite()) {
            return Err(ConfigError::invalid("inference.timeout_s", "must be positive"));
        }
        if inf.max_in_flight == 0 {
            return Err(ConfigError::invalid("inference.max_in_flight", "must be >= 1"));
        }
        if inf.top_k_objects == 0 {
            return Err(ConfigError::invalid("inference.top_k_objects", "must be >= 1"));
        }
        if inf.top_k_mapped == 0 {
            return Err(ConfigError::invalid("inference.top_k_mapped", "must be >= 1"));
        }
        if inf.hashing_dim == 0 {
            return Err(ConfigError::invalid("inference.hashing_dim", "must be >= 1"));
        }
        if inf.decoder == DecoderKind::External && inf.endpoint.is_none() {
            return Err(ConfigError::invalid("inference.endpoint", "required by the external decoder"));
        }
        for (name, ks) in [
            ("eval.object_k", &self.eval.object_k),
            ("eval.predicate_k", &self.eval.predicate_k),
            ("eval.triplet_k", &self.eval.triplet_k),
        ] {
            if ks.contains(&0) {
                return Err(ConfigError::invalid(name, "k values must be >= 1"));
            }
        }
        if let Some(name) = &self.tables.attribute_table {
            if !self.tables.attributes.contains_key(name) {
                return Err(ConfigError::invalid("tables.attribute_table", format!("no attribute table named {name:?}")));
            }
        }
        if !(self.fixture.noise >= 0.0 && self.fixture.noise.is_finite()) {
            return Err(ConfigError::invalid("fixture.noise", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.work_dir.join("model.o3ck"))
    }

    pub fn inference_scenes(&self) -> &[PathBuf] {
        if self.eval_scenes.is_empty() {
            &self.scenes
        } else {
            &self.eval_scenes
        }
    }

    /// Working directory of one scene's artifacts.
    pub fn scene_dir(&self, scene: &str) -> PathBuf {
        self.work_dir.join(scene)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_win_and_parse_json() {
        let cfg = PipelineConfig::from_value(
            json!({"selection": {"t_vis": 0.4}, "train": {"epochs": 3}}),
            &["selection.t_vis=0.5".into(), "inference.endpoint=http://x".into(), "features.scales=[1.0]".into()],
        )
        .unwrap();
        assert_eq!(cfg.selection.t_vis, 0.5);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.inference.endpoint.as_deref(), Some("http://x"));
        assert_eq!(cfg.features.scales, vec![1.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = PipelineConfig::from_value(json!({"selection": {"t_vsi": 0.4}}), &[]).unwrap_err();
        assert_eq!(e.field(), Some("selection.t_vsi"), "{e}");
        assert!(e.to_string().contains("t_vsi"));
        let e = PipelineConfig::from_value(json!({"train": {"epochs": "many"}}), &[]).unwrap_err();
        assert_eq!(e.field(), Some("train.epochs"));
        let e = PipelineConfig::from_value(json!({}), &["selection.t_box=2".into()]).unwrap_err();
        assert_eq!(e.field(), Some("selection.t_box"), "{e}");
        let e = PipelineConfig::from_value(json!({}), &["inference.decoder=external".into()]).unwrap_err();
        assert_eq!(e.field(), Some("inference.endpoint"));
        let e = PipelineConfig::from_value(json!({}), &["model.d_obj=0".into()]).unwrap_err();
        assert_eq!(e.field(), Some("model.d_obj"));
        assert!(matches!(
            PipelineConfig::from_value(json!({}), &["novalue".into()]),
            Err(ConfigError::Override { .. })
        ));
        assert!(matches!(
            PipelineConfig::from_value(json!({"train": 3}), &["train.epochs=2".into()]),
            Err(ConfigError::Override { .. })
        ));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"scenes": ["a/manifest.json", "/abs/m.json"], "tables": {"attributes": {"m": "t.o3et"}}}"#).unwrap();
        let cfg = PipelineConfig::load(&path, &[]).unwrap();
        assert_eq!(cfg.scenes[0], dir.path().join("a/manifest.json"));
        assert_eq!(cfg.scenes[1], PathBuf::from("/abs/m.json"));
        assert_eq!(cfg.tables.attributes["m"], dir.path().join("t.o3et"));
        assert_eq!(cfg.checkpoint_path(), dir.path().join("work/model.o3ck"));
    }

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_value(cfg.to_json(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
