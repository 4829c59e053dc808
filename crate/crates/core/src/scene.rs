//! Scene data model: point cloud with per-point instance ids, instance
//! boxes, pairwise box-union point sets and the scene graph skeleton.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formats::{read_file, write_file, ByteReader, ByteWriter, FormatError};
use crate::projection::{CameraFrame, DepthMap};

pub type InstanceId = u32;

pub const CLOUD_MAGIC: &[u8; 4] = b"O3PC";
const CLOUD_FORMAT: &str = "O3PC";
const CLOUD_RECORD_BYTES: u64 = 12 + 3 + 4;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("{field} length: expected {expected}, found {found}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("unknown instance id {0}")]
    UnknownInstance(InstanceId),
    #[error("pair ({0}, {0}) is not an edge: subject equals object")]
    SelfPair(InstanceId),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<SceneError>,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Points with colours and instance ids; the raw 3D substrate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePointCloud {
    points: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
    instance_ids: Vec<InstanceId>,
}

impl ScenePointCloud {
    pub fn new(
        points: Vec<[f32; 3]>,
        colors: Vec<[u8; 3]>,
        instance_ids: Vec<InstanceId>,
    ) -> Result<Self, SceneError> {
        if points.is_empty() {
            return Err(SceneError::EmptyCloud);
        }
        if colors.len() != points.len() {
            return Err(SceneError::LengthMismatch {
                field: "colors",
                expected: points.len(),
                found: colors.len(),
            });
        }
        if instance_ids.len() != points.len() {
            return Err(SceneError::LengthMismatch {
                field: "instance_ids",
                expected: points.len(),
                found: instance_ids.len(),
            });
        }
        Ok(Self {
            points,
            colors,
            instance_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn instance_ids(&self) -> &[InstanceId] {
        &self.instance_ids
    }

    pub fn point_f64(&self, idx: usize) -> [f64; 3] {
        let p = self.points[idx];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(CLOUD_MAGIC, 1);
        w.u64(self.points.len() as u64);
        for ((p, c), id) in self.points.iter().zip(&self.colors).zip(&self.instance_ids) {
            w.f32_slice(p);
            w.bytes(c);
            w.u32(*id);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SceneError> {
        let mut r = ByteReader::new(CLOUD_FORMAT, bytes);
        r.header(CLOUD_MAGIC, 1)?;
        let count = r.u64("count")?;
        let n = r.check_capacity(count, CLOUD_RECORD_BYTES, "count")?;
        let mut points = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            points.push([r.f32("x")?, r.f32("y")?, r.f32("z")?]);
            let c = r.bytes(3, "rgb")?;
            colors.push([c[0], c[1], c[2]]);
            ids.push(r.u32("instance_id")?);
        }
        r.finish()?;
        Self::new(points, colors, ids)
    }

    pub fn read(path: &Path) -> Result<Self, SceneError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), SceneError> {
        Ok(write_file(path, &self.to_bytes())?)
    }
}

/// Axis-aligned box in metres; membership uses closed intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn around(p: [f32; 3]) -> Self {
        Self { min: p, max: p }
    }

    pub fn grow(&mut self, p: [f32; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.min[a] as f64 + self.max[a] as f64) / 2.0)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(other.min);
        out.grow(other.max);
        out
    }
}

/// Instance ids, their point indices and tight bounding boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    ids: Vec<InstanceId>,
    point_index: BTreeMap<InstanceId, Vec<usize>>,
    aabb: BTreeMap<InstanceId, Aabb>,
}

impl InstanceSet {
    pub fn from_cloud(cloud: &ScenePointCloud) -> Self {
        let mut point_index: BTreeMap<InstanceId, Vec<usize>> = BTreeMap::new();
        let mut aabb: BTreeMap<InstanceId, Aabb> = BTreeMap::new();
        for (idx, (&id, &p)) in cloud.instance_ids.iter().zip(&cloud.points).enumerate() {
            point_index.entry(id).or_default().push(idx);
            aabb.entry(id).and_modify(|b| b.grow(p)).or_insert_with(|| Aabb::around(p));
        }
        Self {
            ids: point_index.keys().copied().collect(),
            point_index,
            aabb,
        }
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.point_index.contains_key(&id)
    }

    pub fn points_of(&self, id: InstanceId) -> Result<&[usize], SceneError> {
        self.point_index
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(SceneError::UnknownInstance(id))
    }

    pub fn aabb(&self, id: InstanceId) -> Result<Aabb, SceneError> {
        self.aabb.get(&id).copied().ok_or(SceneError::UnknownInstance(id))
    }
}

/// Points inside `B_i ∪ B_j` with the 0/1/2 subject/object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPointSet {
    pub i: InstanceId,
    pub j: InstanceId,
    pub indices: Vec<usize>,
    pub points: Vec<[f32; 3]>,
    pub mask: Vec<u8>,
}

pub fn build_pair_set(
    cloud: &ScenePointCloud,
    instances: &InstanceSet,
    i: InstanceId,
    j: InstanceId,
) -> Result<PairPointSet, SceneError> {
    if i == j {
        return Err(SceneError::SelfPair(i));
    }
    let bi = instances.aabb(i)?;
    let bj = instances.aabb(j)?;
    let mut out = PairPointSet {
        i,
        j,
        indices: Vec::new(),
        points: Vec::new(),
        mask: Vec::new(),
    };
    for (idx, (&p, &id)) in cloud.points.iter().zip(&cloud.instance_ids).enumerate() {
        if bi.contains(p) || bj.contains(p) {
            out.indices.push(idx);
            out.points.push(p);
            out.mask.push(if id == i {
                1
            } else if id == j {
                2
            } else {
                0
            });
        }
    }
    Ok(out)
}

/// Optional feature vectors attached to a node or an edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSlots {
    pub f2d: Option<Vec<f32>>,
    pub f3d: Option<Vec<f32>>,
    pub fused: Option<Vec<f32>>,
}

/// Instance nodes and ordered-pair edges, edges sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphSkeleton {
    pub nodes: Vec<InstanceId>,
    pub edges: Vec<(InstanceId, InstanceId)>,
    pub node_slots: Vec<FeatureSlots>,
    pub edge_slots: Vec<FeatureSlots>,
}

impl SceneGraphSkeleton {
    pub fn node_position(&self, id: InstanceId) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    pub fn edge_position(&self, i: InstanceId, j: InstanceId) -> Option<usize> {
        self.edges.binary_search(&(i, j)).ok()
    }
}

/// Fully connected directed graph over the instances, optionally keeping only
/// pairs whose box centres are at most `max_pair_distance` metres apart.
pub fn build_skeleton(instances: &InstanceSet, max_pair_distance: Option<f64>) -> SceneGraphSkeleton {
    let nodes = instances.ids().to_vec();
    let centers: Vec<[f64; 3]> = nodes
        .iter()
        .map(|&id| instances.aabb[&id].center())
        .collect();
    let mut edges = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate() {
            if a == b {
                continue;
            }
            let keep = max_pair_distance.map_or(true, |limit| {
                let d2: f64 = (0..3).map(|k| (centers[a][k] - centers[b][k]).powi(2)).sum();
                d2.sqrt() <= limit
            });
            if keep {
                edges.push((i, j));
            }
        }
    }
    SceneGraphSkeleton {
        node_slots: vec![FeatureSlots::default(); nodes.len()],
        edge_slots: vec![FeatureSlots::default(); edges.len()],
        nodes,
        edges,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InlineCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub instance_ids: Vec<InstanceId>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CloudSource {
    Path(PathBuf),
    Inline(InlineCloud),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameDescriptor {
    pub width: u32,
    pub height: u32,
    pub intrinsics: [f64; 9],
    pub extrinsics: [f64; 12],
    pub depth: PathBuf,
    #[serde(default)]
    pub pixel_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub rgb: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub cloud: CloudSource,
    #[serde(default)]
    pub frames: Vec<FrameDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// A loaded scene. Paths inside are resolved against the manifest directory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub manifest_path: PathBuf,
    pub cloud: ScenePointCloud,
    pub instances: InstanceSet,
    pub frames: Vec<CameraFrame>,
    pub crop_embeddings: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

impl Scene {
    pub fn from_parts(name: impl Into<String>, cloud: ScenePointCloud, frames: Vec<CameraFrame>) -> Self {
        Self {
            name: name.into(),
            manifest_path: PathBuf::new(),
            instances: InstanceSet::from_cloud(&cloud),
            cloud,
            frames,
            crop_embeddings: None,
            ground_truth: None,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_scene(manifest_path: &Path) -> Result<Scene, SceneError> {
    let manifest_err = |reason: String| SceneError::Manifest {
        path: manifest_path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(manifest_path).map_err(|e| manifest_err(e.to_string()))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cloud = match &manifest.cloud {
        CloudSource::Path(p) => ScenePointCloud::read(&resolve(base, p))?,
        CloudSource::Inline(c) => {
            ScenePointCloud::new(c.points.clone(), c.colors.clone(), c.instance_ids.clone())?
        }
    };
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (index, fd) in manifest.frames.iter().enumerate() {
        let wrap = |source: SceneError| SceneError::Frame {
            index,
            source: Box::new(source),
        };
        let depth = DepthMap::read(&resolve(base, &fd.depth)).map_err(|e| wrap(e.into()))?;
        let mut frame =
            CameraFrame::new(fd.width, fd.height, fd.intrinsics, fd.extrinsics, depth).map_err(wrap)?;
        frame.pixel_embeddings = fd.pixel_embeddings.as_ref().map(|p| resolve(base, p));
        frame.rgb = fd.rgb.as_ref().map(|p| resolve(base, p));
        frames.push(frame);
    }
    let name = manifest.name.clone().unwrap_or_else(|| {
        base.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".to_string())
    });
    Ok(Scene {
        name,
        manifest_path: manifest_path.to_path_buf(),
        instances: InstanceSet::from_cloud(&cloud),
        cloud,
        frames,
        crop_embeddings: manifest.crop_embeddings.as_ref().map(|p| resolve(base, p)),
        ground_truth: manifest.ground_truth.as_ref().map(|p| resolve(base, p)),
    })
}
