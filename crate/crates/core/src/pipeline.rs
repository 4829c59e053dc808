//! Pipeline stages. Each stage reads the artifacts of the previous one from
//! `<work_dir>/<scene>/` and never modifies its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DecoderKind, PipelineConfig, TextEmbedderKind};
use crate::eval::{collect_items, read_counts, report, report_csv, EvalItems, GroundTruth};
use crate::features::{aggregate_targets, CropCache, FilePixelEmbedder, FusedTargets};
use crate::fixture::{generate, FixtureSummary};
use crate::formats::write_file;
use crate::inference::{
    build_graph, EmbeddingTable, ExternalDecoder, FallbackDecoder, GraphContext, GraphFeatures, HashingTextEmbedder,
    NearestNeighborDecoder, PredictedSceneGraph, RelationshipDecoder, TableTextEmbedder, TextEmbedder,
};
use crate::net::{prepare_scene, Checkpoint, GraphModel, ModelConfig, SceneTargets, TrainScene, TrainState};
use crate::scene::{build_skeleton, load_scene, InstanceId, Scene, SceneGraphSkeleton};
use crate::selection::{select_all, SelectionResult, VisibilityTable};
use crate::Error;

pub const SELECTION_FILE: &str = "selection.json";
pub const TARGETS_FILE: &str = "targets.o3ft";
pub const GRAPH_FILE: &str = "graph.json";
pub const HISTORY_FILE: &str = "history.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("artifact serialises");
    write_file(path, text.as_bytes())?;
    Ok(())
}

fn require(path: &Path, what: &'static str) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Training scenes followed by inference scenes, without repeats.
pub fn all_scene_paths(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let mut seen = BTreeSet::new();
    cfg.scenes
        .iter()
        .chain(&cfg.eval_scenes)
        .filter(|p| seen.insert((*p).clone()))
        .cloned()
        .collect()
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<Scene>, Error> {
    if paths.is_empty() {
        return Err(crate::config::ConfigError::invalid("scenes", "no scene manifests configured").into());
    }
    let mut names = BTreeMap::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let scene = load_scene(p)?;
        if let Some(prev) = names.insert(scene.name.clone(), p.clone()) {
            return Err(Error::data(
                format!("scene name {:?}", scene.name),
                format!("used by both {} and {}", prev.display(), p.display()),
            ));
        }
        out.push(scene);
    }
    Ok(out)
}

fn skeleton(cfg: &PipelineConfig, scene: &Scene) -> SceneGraphSkeleton {
    build_skeleton(&scene.instances, cfg.graph.max_pair_distance)
}

/// Generates the synthetic fixture and writes `<out_dir>/pipeline.json`, a
/// ready-to-run config whose paths are relative to the fixture directory.
pub fn gen_fixture(cfg: &PipelineConfig) -> Result<(FixtureSummary, PathBuf), Error> {
    let summary = generate(&cfg.fixture, cfg.selection.t_occ, &cfg.features.scales)?;
    let out = &cfg.fixture.out_dir;
    let rel = |p: &Path| p.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let mut emitted = cfg.clone();
    emitted.scenes = summary.train.iter().map(|p| rel(p)).collect();
    emitted.eval_scenes = summary.heldout.iter().map(|p| rel(p)).collect();
    emitted.work_dir = PathBuf::from("work");
    emitted.checkpoint = None;
    emitted.tables.object = Some(rel(&summary.tables.object));
    emitted.tables.predicate = Some(rel(&summary.tables.predicate));
    emitted.tables.lookup = Some(rel(&summary.tables.lookup));
    emitted.tables.phrases = Some(rel(&summary.tables.phrases));
    emitted.tables.attributes = BTreeMap::from([("materials".to_string(), rel(&summary.tables.materials))]);
    emitted.tables.attribute_table = Some("materials".into());
    emitted.frequency = Some(rel(&summary.frequency));
    emitted.fixture.out_dir = PathBuf::from(".");
    if !emitted.eval.triplet_k.contains(&1) {
        emitted.eval.triplet_k.insert(0, 1);
    }
    let path = out.join("pipeline.json");
    write_json(&path, &emitted.to_json())?;
    Ok((summary, path))
}

/// Writes `selection.json` for every configured scene.
pub fn select_frames(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    for scene in load_scenes(&all_scene_paths(cfg))? {
        let (selection, _) = select_all(&scene, &skeleton(cfg, &scene), &cfg.selection)?;
        let path = cfg.scene_dir(&scene.name).join(SELECTION_FILE);
        write_json(&path, &selection)?;
        written.push(path);
    }
    Ok(written)
}

fn read_selection(path: &Path) -> Result<SelectionResult, Error> {
    require(path, "frame selection (run select-frames)")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::data(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e))
}

/// Aggregates 2D features over the selected frames into `targets.o3ft`.
pub fn extract(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    for scene in load_scenes(&all_scene_paths(cfg))? {
        let dir = cfg.scene_dir(&scene.name);
        let selection = read_selection(&dir.join(SELECTION_FILE))?;
        let crops_path = scene.crop_embeddings.clone().ok_or_else(|| Error::Missing {
            what: "crop embedding cache in manifest",
            path: scene.manifest_path.clone(),
        })?;
        require(&crops_path, "crop embedding cache")?;
        let crops = CropCache::read(&crops_path)?;
        let visibility = VisibilityTable::compute(&scene, cfg.selection.t_occ)?;
        let pixel = FilePixelEmbedder::new(&scene.frames);
        let targets = aggregate_targets(
            &scene,
            &skeleton(cfg, &scene),
            &selection,
            &visibility,
            &pixel,
            &crops,
            &cfg.features.scales,
        )?;
        let path = dir.join(TARGETS_FILE);
        targets.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn read_targets(cfg: &PipelineConfig, scene: &Scene) -> Result<FusedTargets, Error> {
    let path = cfg.scene_dir(&scene.name).join(TARGETS_FILE);
    require(&path, "fused targets (run extract)")?;
    Ok(FusedTargets::read(&path)?)
}

/// Prepared inputs and aligned targets for the training scenes.
pub fn training_data(cfg: &PipelineConfig, model: &ModelConfig) -> Result<Vec<TrainScene>, Error> {
    let mut out = Vec::new();
    for scene in load_scenes(&cfg.scenes)? {
        let inputs = prepare_scene(&scene.cloud, &scene.instances, &skeleton(cfg, &scene), model)?;
        let fused = read_targets(cfg, &scene)?;
        let targets = SceneTargets::align(&inputs, &fused).map_err(|r| Error::data(format!("scene {}", scene.name), r))?;
        out.push(TrainScene {
            name: scene.name,
            inputs,
            targets,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLine>,
    /// Mean distillation loss over the training scenes after the last update.
    pub final_loss: f64,
    #[serde(skip)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Trains from scratch, writing the final checkpoint and `history.json`.
pub fn train(cfg: &PipelineConfig) -> Result<TrainSummary, Error> {
    let data = training_data(cfg, &cfg.model)?;
    let mut state = TrainState::new(cfg.model.clone(), cfg.train.clone());
    let every = cfg.train.checkpoint_every;
    let work = cfg.work_dir.clone();
    let history = state.train(&data, |st, rec| {
        if every > 0 && (rec.epoch + 1) % every == 0 {
            let path = work.join(format!("checkpoint_epoch_{:04}.o3ck", rec.epoch + 1));
            st.checkpoint()
                .write(&path)
                .map_err(|e| crate::net::TrainError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    })?;
    let checkpoint = cfg.checkpoint_path();
    state.checkpoint().write(&checkpoint)?;
    let summary = TrainSummary {
        epochs: history
            .iter()
            .map(|r| EpochLine {
                epoch: r.epoch,
                lr: r.lr,
                loss: r.loss,
            })
            .collect(),
        final_loss: state.evaluate(&data),
        checkpoint,
    };
    write_json(&cfg.work_dir.join(HISTORY_FILE), &summary)?;
    Ok(summary)
}

/// Text tables with dimensions checked against the model.
pub struct Tables {
    pub objects: EmbeddingTable,
    pub predicates: Option<EmbeddingTable>,
    pub lookup: EmbeddingTable,
    pub embedder: Box<dyn TextEmbedder>,
    pub attributes: BTreeMap<String, EmbeddingTable>,
}

fn read_table(path: &Path, field: &str, dim: Option<(usize, &str)>) -> Result<EmbeddingTable, Error> {
    require(path, "embedding table")?;
    let table = EmbeddingTable::read(path)?;
    if let Some((expected, against)) = dim {
        if table.dim() != expected {
            return Err(crate::config::ConfigError::invalid(
                field,
                format!("table dimension {} does not match {against} = {expected}", table.dim()),
            )
            .into());
        }
    }
    Ok(table)
}

pub fn load_tables(cfg: &PipelineConfig, model: &ModelConfig) -> Result<Tables, Error> {
    let t = &cfg.tables;
    let needed = |p: &Option<PathBuf>, field: &str| {
        p.clone()
            .ok_or_else(|| Error::from(crate::config::ConfigError::invalid(field, "required for inference")))
    };
    let objects = read_table(&needed(&t.object, "tables.object")?, "tables.object", Some((model.d_obj, "model.d_obj")))?;
    let predicates = match &t.predicate {
        Some(p) => Some(read_table(p, "tables.predicate", Some((model.d_rel, "model.d_rel")))?),
        None => None,
    };
    let lookup_file = read_table(&needed(&t.lookup, "tables.lookup")?, "tables.lookup", None)?;
    let (lookup, embedder): (EmbeddingTable, Box<dyn TextEmbedder>) = match cfg.inference.text_embedder {
        TextEmbedderKind::Table => {
            let phrases = match &t.phrases {
                Some(p) => read_table(p, "tables.phrases", Some((lookup_file.dim(), "the lookup table dimension")))?,
                None => lookup_file.clone(),
            };
            (lookup_file, Box::new(TableTextEmbedder::new(phrases)))
        }
        TextEmbedderKind::Hashing => {
            let hashing = HashingTextEmbedder::new(cfg.inference.hashing_dim);
            let entries = lookup_file
                .labels()
                .iter()
                .map(|l| Ok((l.to_string(), hashing.embed(l)?)))
                .collect::<Result<Vec<_>, crate::inference::InferenceError>>()?;
            let table = EmbeddingTable::new(lookup_file.space(), hashing.dim(), entries)?;
            (table, Box::new(hashing))
        }
    };
    let mut attributes = BTreeMap::new();
    for (name, p) in &t.attributes {
        let field = format!("tables.attributes.{name}");
        attributes.insert(name.clone(), read_table(p, &field, Some((model.d_obj, "model.d_obj")))?);
    }
    Ok(Tables {
        objects,
        predicates,
        lookup,
        embedder,
        attributes,
    })
}

pub fn make_decoder(cfg: &PipelineConfig, tables: &Tables) -> Result<Box<dyn RelationshipDecoder>, Error> {
    let nearest = || {
        tables
            .predicates
            .clone()
            .map(NearestNeighborDecoder::new)
            .ok_or_else(|| Error::from(crate::config::ConfigError::invalid("tables.predicate", "required by the nearest-neighbor decoder")))
    };
    let inf = &cfg.inference;
    Ok(match inf.decoder {
        DecoderKind::Nearest => Box::new(nearest()?),
        DecoderKind::External => {
            let endpoint = inf.endpoint.as_deref().expect("validated: external decoder has an endpoint");
            let external = ExternalDecoder::new(endpoint, Duration::from_secs_f64(inf.timeout_s), inf.max_in_flight);
            if inf.fallback_to_nearest {
                Box::new(FallbackDecoder {
                    primary: external,
                    fallback: nearest()?,
                })
            } else {
                Box::new(external)
            }
        }
    })
}

/// Model, tables and decoder shared by `infer` and the REPL.
pub struct InferenceKit {
    pub model: GraphModel<f32>,
    pub tables: Tables,
    pub decoder: Box<dyn RelationshipDecoder>,
}

impl InferenceKit {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, Error> {
        let path = cfg.checkpoint_path();
        require(&path, "checkpoint (run train)")?;
        let state = TrainState::from_checkpoint(&Checkpoint::read(&path)?)?;
        let tables = load_tables(cfg, &state.model.config)?;
        let decoder = make_decoder(cfg, &tables)?;
        Ok(Self {
            model: state.model,
            tables,
            decoder,
        })
    }
}

fn rows(m: &crate::net::Mat<f32>) -> Vec<Vec<f32>> {
    (0..m.rows).map(|r| m.row(r).to_vec()).collect()
}

/// Predicts, fuses and decodes the graph of one scene.
pub fn infer_scene(cfg: &PipelineConfig, kit: &InferenceKit, scene: &Scene) -> Result<PredictedSceneGraph, Error> {
    let sk = skeleton(cfg, scene);
    let inputs = prepare_scene(&scene.cloud, &scene.instances, &sk, &kit.model.config)?;
    let fused = if cfg.inference.fuse_2d {
        Some(read_targets(cfg, scene)?)
    } else {
        None
    };
    let (node_out, edge_out) = kit.model.predict(&inputs);
    let edges: Vec<(InstanceId, InstanceId)> = inputs.edge_ids().collect();
    let features = GraphFeatures {
        node_f2d: inputs
            .nodes
            .iter()
            .map(|&id| fused.as_ref().and_then(|f| f.node(id)).and_then(|n| n.feature.clone()))
            .collect(),
        node_f3d: rows(&node_out),
        edge_f2d: edges
            .iter()
            .map(|&(i, j)| fused.as_ref().and_then(|f| f.edge(i, j)).and_then(|e| e.feature.clone()))
            .collect(),
        edge_f3d: rows(&edge_out),
        nodes: inputs.nodes.clone(),
        edges,
    };
    let gt_labels = if cfg.inference.use_gt_labels {
        let path = scene.ground_truth.clone().ok_or_else(|| Error::Missing {
            what: "ground truth in manifest (inference.use_gt_labels)",
            path: scene.manifest_path.clone(),
        })?;
        Some(GroundTruth::read(&path)?.objects)
    } else {
        None
    };
    let ctx = GraphContext {
        objects: &kit.tables.objects,
        lookup: &kit.tables.lookup,
        embedder: kit.tables.embedder.as_ref(),
        decoder: kit.decoder.as_ref(),
        top_k_objects: cfg.inference.top_k_objects,
        top_k_mapped: cfg.inference.top_k_mapped,
        label_override: gt_labels.as_ref(),
    };
    Ok(build_graph(&features, &ctx)?)
}

/// Writes `graph.json` for every inference scene. Decoder failures are
/// recorded on their edges; the first affected scene is reported after all
/// graphs are written.
pub fn infer(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, Error> {
    let kit = InferenceKit::load(cfg)?;
    let mut written = Vec::new();
    let mut failure = None;
    for scene in load_scenes(cfg.inference_scenes())? {
        let graph = infer_scene(cfg, &kit, &scene)?;
        let path = cfg.scene_dir(&scene.name).join(GRAPH_FILE);
        graph.write(&path)?;
        written.push(path);
        let failed: Vec<&str> = graph
            .edges
            .iter()
            .filter(|e| e.phrase.is_none())
            .filter_map(|e| e.error.as_deref())
            .collect();
        if failure.is_none() && !failed.is_empty() {
            failure = Some(Error::External {
                scene: scene.name.clone(),
                failed: failed.len(),
                total: graph.edges.len(),
                first: failed[0].to_string(),
            });
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

/// Scores every inference scene and the pooled set. Writes per-scene and
/// overall `report.json` / `report.csv` and returns the overall report.
pub fn evaluate(cfg: &PipelineConfig) -> Result<Value, Error> {
    let counts = match &cfg.frequency {
        Some(p) => {
            require(p, "class frequency file")?;
            Some(read_counts(p)?)
        }
        None => None,
    };
    let attr_table = match &cfg.tables.attribute_table {
        Some(name) => {
            let p = &cfg.tables.attributes[name];
            require(p, "attribute table")?;
            Some(EmbeddingTable::read(p)?)
        }
        None => None,
    };
    let mut pooled = EvalItems::default();
    for scene in load_scenes(cfg.inference_scenes())? {
        let dir = cfg.scene_dir(&scene.name);
        let graph_path = dir.join(GRAPH_FILE);
        require(&graph_path, "predicted graph (run infer)")?;
        let graph = PredictedSceneGraph::read(&graph_path)?;
        let gt_path = scene.ground_truth.clone().ok_or_else(|| Error::Missing {
            what: "ground truth in manifest",
            path: scene.manifest_path.clone(),
        })?;
        let gt = GroundTruth::read(&gt_path)?;
        let items = collect_items(&graph, &gt, attr_table.as_ref());
        write_report(&dir, &report(&items, &cfg.eval, counts.as_ref())?, None)?;
        pooled.extend(items);
    }
    let overall = report(&pooled, &cfg.eval, counts.as_ref())?;
    write_report(&cfg.work_dir, &overall, Some(cfg))?;
    Ok(overall)
}

fn write_report(dir: &Path, rep: &Value, cfg: Option<&PipelineConfig>) -> Result<(), Error> {
    write_file(&dir.join(REPORT_CSV_FILE), report_csv(rep).as_bytes())?;
    let mut full = rep.clone();
    if let (Some(cfg), Value::Object(m)) = (cfg, &mut full) {
        m.insert("config".into(), cfg.to_json());
    }
    write_json(&dir.join(REPORT_FILE), &full)
}

/// Short human-readable summary of a report.
pub fn report_summary(rep: &Value) -> String {
    let mut lines = Vec::new();
    for section in ["objects", "predicates", "triplets"] {
        if let Some(Value::Object(m)) = rep.get(section) {
            let parts: Vec<String> = m
                .iter()
                .filter(|(k, _)| k.starts_with("R@"))
                .map(|(k, v)| format!("{k}={}", v.as_f64().map_or_else(|| v.to_string(), |x| format!("{x:.4}"))))
                .collect();
            lines.push(format!("{section}: {}", parts.join(" ")));
        }
    }
    if let Some(mean) = rep.pointer("/attributes/mean") {
        lines.push(format!("attributes: top1-mean={mean}"));
    }
    lines.join("\n")
}

/// JSON echo used in command output.
pub fn paths_json(paths: &[PathBuf]) -> Value {
    json!(paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}
