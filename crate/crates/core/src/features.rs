//! 2D distillation targets: pixel-embedding pooling for objects, multi-scale
//! union-crop encoding for relationships, and averaging across the selected
//! frames.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::formats::{read_file, write_file, ByteReader, ByteWriter, FormatError};
use crate::projection::{splat_points, CameraFrame, PixelBox, ProjectedInstance};
use crate::scene::{InstanceId, Scene, SceneError, SceneGraphSkeleton};
use crate::selection::{SelectionResult, VisibilityTable};

pub const PIXEL_MAGIC: &[u8; 4] = b"O3PE";
pub const CROP_MAGIC: &[u8; 4] = b"O3CE";
pub const TARGETS_MAGIC: &[u8; 4] = b"O3FT";

pub const DEFAULT_SCALES: [f32; 3] = [1.0, 1.5, 2.0];

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{what}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("instance {instance} has no valid pixels in frame {frame}")]
    EmptyPixels { instance: InstanceId, frame: usize },
    #[error("degenerate union box {0:?} (zero area)")]
    DegenerateBox(PixelBox),
    #[error("no scales given")]
    NoScales,
    #[error("frame {0} has no pixel embeddings")]
    MissingPixelEmbeddings(usize),
    #[error("no cached crop embedding for frame {frame}, box {bbox:?}, scale {scale}")]
    MissingCrop { frame: usize, bbox: PixelBox, scale: f32 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Dense `H' × W' × D` embedding grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PixelGrid {
    pub fn new(dim: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, FormatError> {
        if data.len() != dim * height * width {
            return Err(FormatError::invalid(
                "O3PE",
                "data",
                format!("expected {} values, found {}", dim * height * width, data.len()),
            ));
        }
        Ok(Self { dim, height, width, data })
    }

    pub fn at(&self, gx: usize, gy: usize) -> &[f32] {
        let o = (gy * self.width + gx) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// Nearest-neighbour lookup of a full-resolution pixel.
    pub fn sample(&self, x: u32, y: u32, frame_width: u32, frame_height: u32) -> &[f32] {
        let gx = (x as usize * self.width / frame_width as usize).min(self.width - 1);
        let gy = (y as usize * self.height / frame_height as usize).min(self.height - 1);
        self.at(gx, gy)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(PIXEL_MAGIC, 1);
        w.u32(self.dim as u32);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.f32_slice(&self.data);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new("O3PE", bytes);
        r.header(PIXEL_MAGIC, 1)?;
        let dim = r.u32("D")? as u64;
        let height = r.u32("H'")? as u64;
        let width = r.u32("W'")? as u64;
        if dim == 0 {
            return Err(FormatError::invalid("O3PE", "D", "must be positive"));
        }
        if height == 0 || width == 0 {
            return Err(FormatError::invalid("O3PE", "H'", "grid must be non-empty"));
        }
        let n = r.check_capacity(dim.saturating_mul(height).saturating_mul(width), 4, "H'*W'*D")?;
        let data = r.f32_vec(n, "embeddings")?;
        r.finish()?;
        Ok(Self {
            dim: dim as usize,
            height: height as usize,
            width: width as usize,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}

/// Frame index → dense pixel-embedding grid. Implementations must be
/// deterministic and callable from several threads.
pub trait PixelEmbedder: Send + Sync {
    fn grid(&self, frame: usize) -> Result<Arc<PixelGrid>, FeatureError>;
}

/// Reads grids from the per-frame O3PE files named in the manifest.
pub struct FilePixelEmbedder {
    paths: Vec<Option<PathBuf>>,
    cache: Vec<OnceLock<Arc<PixelGrid>>>,
}

impl FilePixelEmbedder {
    pub fn new(frames: &[CameraFrame]) -> Self {
        Self {
            paths: frames.iter().map(|f| f.pixel_embeddings.clone()).collect(),
            cache: frames.iter().map(|_| OnceLock::new()).collect(),
        }
    }
}

impl PixelEmbedder for FilePixelEmbedder {
    fn grid(&self, frame: usize) -> Result<Arc<PixelGrid>, FeatureError> {
        let path = self
            .paths
            .get(frame)
            .and_then(|p| p.as_ref())
            .ok_or(FeatureError::MissingPixelEmbeddings(frame))?;
        if let Some(g) = self.cache[frame].get() {
            return Ok(g.clone());
        }
        let g = Arc::new(PixelGrid::read(path)?);
        Ok(self.cache[frame].get_or_init(|| g).clone())
    }
}

/// Synthetic oracle: every pixel carries the prototype of the instance whose
/// point is nearest to the camera there (background elsewhere), plus
/// optional Gaussian noise seeded per frame.
pub struct PrototypePixelEmbedder {
    grids: Vec<Arc<PixelGrid>>,
}

impl PrototypePixelEmbedder {
    pub fn new(
        scene: &Scene,
        prototypes: &BTreeMap<InstanceId, Vec<f32>>,
        background: &[f32],
        noise: f32,
        seed: u64,
    ) -> Result<Self, FeatureError> {
        let dim = background.len();
        for (id, p) in prototypes {
            if p.len() != dim {
                return Err(FeatureError::DimensionMismatch {
                    what: format!("prototype of instance {id}"),
                    expected: dim,
                    found: p.len(),
                });
            }
        }
        let mut grids = Vec::with_capacity(scene.frames.len());
        for (k, frame) in scene.frames.iter().enumerate() {
            let zbuf = splat_points(frame.size(), frame.intrinsics, frame.extrinsics, &scene.cloud);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let normal = Normal::new(0.0f32, noise.max(0.0)).expect("finite noise");
            let mut data = Vec::with_capacity(zbuf.len() * dim);
            for px in &zbuf {
                let base = px
                    .and_then(|(_, idx)| prototypes.get(&scene.cloud.instance_ids()[idx]))
                    .map(Vec::as_slice)
                    .unwrap_or(background);
                for &v in base {
                    let n = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    data.push(v + n);
                }
            }
            grids.push(Arc::new(PixelGrid {
                dim,
                height: frame.height as usize,
                width: frame.width as usize,
                data,
            }));
        }
        Ok(Self { grids })
    }

    pub fn into_grids(self) -> Vec<Arc<PixelGrid>> {
        self.grids
    }
}

impl PixelEmbedder for PrototypePixelEmbedder {
    fn grid(&self, frame: usize) -> Result<Arc<PixelGrid>, FeatureError> {
        self.grids
            .get(frame)
            .cloned()
            .ok_or(FeatureError::MissingPixelEmbeddings(frame))
    }
}

/// (frame, crop box, scale) → vector. The scale expands the box around its
/// centre, clamped to the image; `frame_size` is `(width, height)`.
pub trait CropEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(
        &self,
        frame: usize,
        frame_size: (u32, u32),
        crop: PixelBox,
        scale: f32,
    ) -> Result<Vec<f32>, FeatureError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropKey {
    pub frame: u32,
    pub bbox: PixelBox,
    pub scale_bits: u32,
}

impl CropKey {
    pub fn new(frame: usize, bbox: PixelBox, scale: f32) -> Self {
        Self {
            frame: frame as u32,
            bbox,
            scale_bits: scale.to_bits(),
        }
    }
}

/// Precomputed crop embeddings (O3CE), looked up by exact key.
#[derive(Debug, Clone, PartialEq)]
pub struct CropCache {
    dim: usize,
    records: Vec<(CropKey, Vec<f32>)>,
    index: HashMap<CropKey, usize>,
}

impl CropCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts or replaces an entry; replacement keeps the original position.
    pub fn insert(&mut self, key: CropKey, v: Vec<f32>) -> Result<(), FeatureError> {
        if v.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                what: "crop embedding".into(),
                expected: self.dim,
                found: v.len(),
            });
        }
        match self.index.get(&key) {
            Some(&i) => self.records[i].1 = v,
            None => {
                self.index.insert(key, self.records.len());
                self.records.push((key, v));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &CropKey) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.records[i].1.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(CROP_MAGIC, 1);
        w.u32(self.dim as u32);
        w.u64(self.records.len() as u64);
        for (k, v) in &self.records {
            w.u32(k.frame);
            w.u32(k.bbox.min_x);
            w.u32(k.bbox.min_y);
            w.u32(k.bbox.max_x);
            w.u32(k.bbox.max_y);
            w.u32(k.scale_bits);
            w.f32_slice(v);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new("O3CE", bytes);
        r.header(CROP_MAGIC, 1)?;
        let dim = r.u32("D")? as usize;
        if dim == 0 {
            return Err(FormatError::invalid("O3CE", "D", "must be positive"));
        }
        let count = r.u64("count")?;
        let n = r.check_capacity(count, 24 + 4 * dim as u64, "count")?;
        let mut cache = Self::new(dim);
        for i in 0..n {
            let frame = r.u32("frame")?;
            let bbox = PixelBox::new(r.u32("box")?, r.u32("box")?, r.u32("box")?, r.u32("box")?);
            if bbox.min_x > bbox.max_x || bbox.min_y > bbox.max_y {
                return Err(FormatError::invalid("O3CE", format!("records[{i}].box"), "min exceeds max"));
            }
            let scale = r.f32("scale")?;
            let v = r.f32_vec(dim, "embedding")?;
            let key = CropKey::new(frame as usize, bbox, scale);
            if cache.index.contains_key(&key) {
                return Err(FormatError::invalid("O3CE", format!("records[{i}]"), "duplicate key"));
            }
            cache.index.insert(key, cache.records.len());
            cache.records.push((key, v));
        }
        r.finish()?;
        Ok(cache)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}

impl CropEmbedder for CropCache {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, frame: usize, _size: (u32, u32), crop: PixelBox, scale: f32) -> Result<Vec<f32>, FeatureError> {
        self.get(&CropKey::new(frame, crop, scale))
            .map(<[f32]>::to_vec)
            .ok_or(FeatureError::MissingCrop {
                frame,
                bbox: crop,
                scale,
            })
    }
}

fn mean_of<'a>(
    rows: impl IntoIterator<Item = &'a [f32]>,
    dim: usize,
    what: &str,
) -> Result<Vec<f32>, FeatureError> {
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for r in rows {
        if r.len() != dim {
            return Err(FeatureError::DimensionMismatch {
                what: what.to_string(),
                expected: dim,
                found: r.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(r) {
            *a += v as f64;
        }
        n += 1;
    }
    Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

/// Average-pooled pixel embedding over the valid projected points.
pub fn object_feature_in_frame(
    embedder: &dyn PixelEmbedder,
    frame: &CameraFrame,
    proj: &ProjectedInstance,
) -> Result<Vec<f32>, FeatureError> {
    if proj.pixels.is_empty() {
        return Err(FeatureError::EmptyPixels {
            instance: proj.instance,
            frame: proj.frame,
        });
    }
    let grid = embedder.grid(proj.frame)?;
    mean_of(
        proj.pixels.iter().map(|&[x, y]| grid.sample(x, y, frame.width, frame.height)),
        grid.dim,
        "pixel embedding",
    )
}

/// Mean of the crop embeddings of `box_i ∪ box_j` over all scales.
pub fn relationship_feature_in_frame(
    embedder: &dyn CropEmbedder,
    frame: usize,
    frame_size: (u32, u32),
    box_i: PixelBox,
    box_j: PixelBox,
    scales: &[f32],
) -> Result<Vec<f32>, FeatureError> {
    if scales.is_empty() {
        return Err(FeatureError::NoScales);
    }
    let union = box_i.union(&box_j);
    if union.extent() == 0 {
        return Err(FeatureError::DegenerateBox(union));
    }
    let crops = scales
        .iter()
        .map(|&s| embedder.embed(frame, frame_size, union, s))
        .collect::<Result<Vec<_>, _>>()?;
    mean_of(crops.iter().map(Vec::as_slice), embedder.dim(), "crop embedding")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTarget {
    pub id: InstanceId,
    pub frames: Vec<usize>,
    /// `None` marks a node without any usable frame.
    pub feature: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTarget {
    pub i: InstanceId,
    pub j: InstanceId,
    pub frames: Vec<usize>,
    pub feature: Option<Vec<f32>>,
}

/// Per-node and per-edge 2D targets, stored unnormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTargets {
    pub dim_obj: usize,
    pub dim_rel: usize,
    pub nodes: Vec<NodeTarget>,
    pub edges: Vec<EdgeTarget>,
}

impl FusedTargets {
    pub fn node(&self, id: InstanceId) -> Option<&NodeTarget> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, i: InstanceId, j: InstanceId) -> Option<&EdgeTarget> {
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn present_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_some()).count()
            + self.edges.iter().filter(|e| e.feature.is_some()).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        fn frames(w: &mut ByteWriter, f: &[usize]) {
            w.u32(f.len() as u32);
            for &k in f {
                w.u32(k as u32);
            }
        }
        let mut w = ByteWriter::with_header(TARGETS_MAGIC, 1);
        w.u32(self.dim_obj as u32);
        w.u32(self.dim_rel as u32);
        w.u32(self.nodes.len() as u32);
        w.u32(self.edges.len() as u32);
        for n in &self.nodes {
            w.u32(n.id);
            w.u8(n.feature.is_some() as u8);
            frames(&mut w, &n.frames);
            if let Some(f) = &n.feature {
                w.f32_slice(f);
            }
        }
        for e in &self.edges {
            w.u32(e.i);
            w.u32(e.j);
            w.u8(e.feature.is_some() as u8);
            frames(&mut w, &e.frames);
            if let Some(f) = &e.feature {
                w.f32_slice(f);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        const F: &str = "O3FT";
        fn presence(r: &mut ByteReader, field: &str) -> Result<bool, FormatError> {
            match r.u8(field)? {
                0 => Ok(false),
                1 => Ok(true),
                b => Err(FormatError::invalid(F, field, format!("presence flag must be 0 or 1, got {b}"))),
            }
        }
        fn frames(r: &mut ByteReader) -> Result<Vec<usize>, FormatError> {
            let n = r.u32("frame_count")? as u64;
            let n = r.check_capacity(n, 4, "frame_count")?;
            (0..n).map(|_| r.u32("frames").map(|k| k as usize)).collect()
        }
        let mut r = ByteReader::new(F, bytes);
        r.header(TARGETS_MAGIC, 1)?;
        let dim_obj = r.u32("D_obj")? as usize;
        let dim_rel = r.u32("D_rel")? as usize;
        let node_count = r.u32("node_count")? as u64;
        let edge_count = r.u32("edge_count")? as u64;
        let node_count = r.check_capacity(node_count, 9, "node_count")?;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let id = r.u32("node.id")?;
            let present = presence(&mut r, "node.present")?;
            let frames = frames(&mut r)?;
            let feature = if present { Some(r.f32_vec(dim_obj, "node.feature")?) } else { None };
            nodes.push(NodeTarget { id, frames, feature });
        }
        let edge_count = r.check_capacity(edge_count, 13, "edge_count")?;
        let mut edges = Vec::with_capacity(edge_count);
        for _ in 0..edge_count {
            let i = r.u32("edge.i")?;
            let j = r.u32("edge.j")?;
            let present = presence(&mut r, "edge.present")?;
            let frames = frames(&mut r)?;
            let feature = if present { Some(r.f32_vec(dim_rel, "edge.feature")?) } else { None };
            edges.push(EdgeTarget { i, j, frames, feature });
        }
        r.finish()?;
        Ok(Self {
            dim_obj,
            dim_rel,
            nodes,
            edges,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}

/// Averages per-frame object and relationship features over the selected
/// frames. Summation runs in ascending frame order, so the result does not
/// depend on the order frames were selected in.
pub fn aggregate_targets(
    scene: &Scene,
    skeleton: &SceneGraphSkeleton,
    selection: &SelectionResult,
    visibility: &VisibilityTable,
    pixel: &dyn PixelEmbedder,
    crop: &dyn CropEmbedder,
    scales: &[f32],
) -> Result<FusedTargets, FeatureError> {
    let mut dim_obj: Option<usize> = None;
    let mut nodes = Vec::with_capacity(skeleton.nodes.len());
    for &id in &skeleton.nodes {
        let mut frames = selection.objects.get(&id).cloned().unwrap_or_default();
        frames.sort_unstable();
        let mut per_frame = Vec::with_capacity(frames.len());
        for &k in &frames {
            let proj = visibility.projection(id, k)?;
            let f = object_feature_in_frame(pixel, &scene.frames[k], proj)?;
            match dim_obj {
                Some(d) if d != f.len() => {
                    return Err(FeatureError::DimensionMismatch {
                        what: format!("object feature of instance {id} in frame {k}"),
                        expected: d,
                        found: f.len(),
                    })
                }
                _ => dim_obj = Some(f.len()),
            }
            per_frame.push(f);
        }
        let feature = if per_frame.is_empty() {
            None
        } else {
            Some(mean_of(per_frame.iter().map(Vec::as_slice), per_frame[0].len(), "object feature")?)
        };
        nodes.push(NodeTarget { id, frames, feature });
    }

    let mut edges = Vec::with_capacity(skeleton.edges.len());
    for &(i, j) in &skeleton.edges {
        let mut selected = selection.pairs.get(&(i, j)).cloned().unwrap_or_default();
        selected.sort_unstable();
        let mut frames = Vec::new();
        let mut per_frame = Vec::new();
        for &k in &selected {
            let (Some(bi), Some(bj)) = (visibility.projection(i, k)?.box2d, visibility.projection(j, k)?.box2d)
            else {
                continue;
            };
            match relationship_feature_in_frame(crop, k, scene.frames[k].size(), bi, bj, scales) {
                Ok(f) => {
                    frames.push(k);
                    per_frame.push(f);
                }
                Err(FeatureError::DegenerateBox(b)) => {
                    log::debug!("edge ({i},{j}) frame {k}: skipping degenerate crop {b:?}");
                }
                Err(e) => return Err(e),
            }
        }
        let feature = if per_frame.is_empty() {
            None
        } else {
            Some(mean_of(per_frame.iter().map(Vec::as_slice), crop.dim(), "relationship feature")?)
        };
        edges.push(EdgeTarget { i, j, frames, feature });
    }

    Ok(FusedTargets {
        dim_obj: dim_obj.unwrap_or(0),
        dim_rel: crop.dim(),
        nodes,
        edges,
    })
}
