//! Deterministic synthetic scenes with oracle embeddings.
//!
//! Four furniture classes are built from boxes and sampled on their surfaces.
//! Six cameras circle each scene; depth maps and pixel embeddings are point
//! splats. Pixel embeddings carry class prototypes, crop embeddings carry the
//! prototype of the pair's relationship, both with Gaussian noise.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eval::GroundTruth;
use crate::features::{CropCache, CropKey, FeatureError, PrototypePixelEmbedder};
use crate::formats::{write_file, FormatError};
use crate::inference::EmbeddingTable;
use crate::projection::{splat_points, CameraFrame, DepthMap};
use crate::scene::{
    Aabb, CloudSource, FrameDescriptor, InstanceId, InstanceSet, Scene, SceneError, SceneManifest, ScenePointCloud,
};
use crate::selection::VisibilityTable;

pub const OBJECT_CLASSES: [&str; 4] = ["table", "chair", "lamp", "cabinet"];
pub const PREDICATE_CLASSES: [&str; 4] = ["standing on", "above", "left of", "in front of"];

/// Closed-set relationship vocabulary of the lookup space.
pub const LOOKUP_LABELS: [&str; 27] = [
    "above",
    "attached to",
    "behind",
    "belonging to",
    "bigger than",
    "build in",
    "close by",
    "connected to",
    "cover",
    "hanging in",
    "hanging on",
    "in front of",
    "inside",
    "leaning against",
    "left of",
    "lower than",
    "lying in",
    "lying on",
    "none",
    "part of",
    "right of",
    "same as",
    "same symmetry as",
    "smaller than",
    "standing in",
    "standing on",
    "supported by",
];

/// Free-text phrases placed next to a lookup label.
pub const SYNONYMS: [(&str, &str); 6] = [
    ("resting on", "standing on"),
    ("on top of", "standing on"),
    ("over", "above"),
    ("to the left of", "left of"),
    ("ahead of", "in front of"),
    ("next to", "close by"),
];

pub const MATERIALS: [(&str, &[&str]); 3] = [
    ("wood", &["table", "cabinet"]),
    ("fabric", &["chair"]),
    ("metal", &["lamp"]),
];

/// Vertical gap (metres) under which one object rests on another.
pub const REST_TOLERANCE: f32 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub noise: f32,
    pub d_obj: usize,
    pub d_rel: usize,
    pub lookup_dim: usize,
    pub points_per_object: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cameras: usize,
    pub camera_radius: f64,
    pub camera_height: f64,
    /// Translation applied to the held-out copies.
    pub holdout_shift: [f32; 3],
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("fixture"),
            seed: 7,
            noise: 0.01,
            d_obj: 16,
            d_rel: 16,
            lookup_dim: 32,
            points_per_object: 160,
            width: 64,
            height: 48,
            focal: 48.0,
            cameras: 6,
            camera_radius: 3.2,
            camera_height: 1.6,
            holdout_shift: [0.37, -0.21, 0.0],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub class: usize,
    pub base: [f32; 3],
}

/// Object layouts of the shipped scenes.
pub fn layouts() -> Vec<Vec<Placement>> {
    let p = |class, x, y, z| Placement { class, base: [x, y, z] };
    vec![
        vec![p(0, 0.0, 0.0, 0.0), p(2, 0.25, 0.1, 0.75), p(1, -1.2, 0.05, 0.0), p(3, 1.3, 0.7, 0.0)],
        vec![p(3, 0.0, 0.0, 0.0), p(2, 0.0, 0.0, 1.1), p(1, 1.1, -0.3, 0.0), p(0, -0.5, 1.4, 0.0)],
        vec![p(0, 0.0, 0.0, 0.0), p(1, 0.15, -1.0, 0.0), p(2, 0.0, 0.1, 1.05), p(3, -1.4, 0.3, 0.0)],
        vec![p(1, -0.9, 0.2, 0.0), p(0, 0.7, 0.5, 0.0), p(2, -0.2, -0.9, 0.0), p(3, 1.0, -1.0, 0.0)],
    ]
}

type Part = ([f32; 3], [f32; 3]);

fn leg_parts(half_x: f32, half_y: f32, w: f32, top: f32) -> Vec<Part> {
    let mut out = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let (cx, cy) = (sx * half_x, sy * half_y);
            out.push(([cx - w, cy - w, 0.0], [cx + w, cy + w, top]));
        }
    }
    out
}

/// Boxes making up a class, relative to its base point.
pub fn class_parts(class: usize) -> Vec<Part> {
    match class {
        0 => {
            let mut v = vec![([-0.6, -0.4, 0.70], [0.6, 0.4, 0.75])];
            v.extend(leg_parts(0.55, 0.35, 0.025, 0.70));
            v
        }
        1 => {
            let mut v = vec![
                ([-0.25, -0.25, 0.42], [0.25, 0.25, 0.47]),
                ([-0.25, 0.20, 0.47], [0.25, 0.25, 0.90]),
            ];
            v.extend(leg_parts(0.21, 0.21, 0.02, 0.42));
            v
        }
        2 => vec![
            ([-0.12, -0.12, 0.0], [0.12, 0.12, 0.03]),
            ([-0.015, -0.015, 0.03], [0.015, 0.015, 0.45]),
            ([-0.15, -0.15, 0.45], [0.15, 0.15, 0.65]),
        ],
        3 => vec![([-0.35, -0.25, 0.0], [0.35, 0.25, 1.1])],
        _ => panic!("unknown fixture class {class}"),
    }
}

/// Area-weighted uniform samples on the faces of `parts`.
fn sample_surface(parts: &[Part], base: [f32; 3], n: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    // Faces as (part, fixed axis, side).
    let mut faces = Vec::new();
    for (pi, (lo, hi)) in parts.iter().enumerate() {
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        for axis in 0..3 {
            let area = (ext[(axis + 1) % 3] * ext[(axis + 2) % 3]) as f64;
            for side in 0..2 {
                faces.push((pi, axis, side, area));
            }
        }
    }
    let total: f64 = faces.iter().map(|f| f.3).sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if pick < f.3 {
                    face = *f;
                    break;
                }
                pick -= f.3;
            }
            let (lo, hi) = parts[face.0];
            let mut p = [0.0f32; 3];
            for k in 0..3 {
                p[k] = if k == face.1 {
                    if face.2 == 0 {
                        lo[k]
                    } else {
                        hi[k]
                    }
                } else {
                    lo[k] + (hi[k] - lo[k]) * rng.random::<f32>()
                };
                p[k] += base[k];
            }
            p
        })
        .collect()
}

fn rests_on(top: &Aabb, bottom: &Aabb) -> bool {
    let overlap = (0..2).all(|k| top.min[k] <= bottom.max[k] && bottom.min[k] <= top.max[k]);
    overlap && (top.min[2] - bottom.max[2]).abs() <= REST_TOLERANCE
}

/// The one directed relationship recorded for an unordered pair:
/// resting contact, then height, then the dominant horizontal axis.
pub fn canonical_relation(a: (InstanceId, &Aabb), b: (InstanceId, &Aabb)) -> (InstanceId, &'static str, InstanceId) {
    let ((ia, ba), (ib, bb)) = (a, b);
    if rests_on(ba, bb) {
        return (ia, "standing on", ib);
    }
    if rests_on(bb, ba) {
        return (ib, "standing on", ia);
    }
    let (ca, cb) = (ba.center(), bb.center());
    if ca[2] > bb.max[2] as f64 {
        return (ia, "above", ib);
    }
    if cb[2] > ba.max[2] as f64 {
        return (ib, "above", ia);
    }
    let (dx, dy) = (cb[0] - ca[0], cb[1] - ca[1]);
    if dx.abs() >= dy.abs() {
        if ca[0] <= cb[0] {
            (ia, "left of", ib)
        } else {
            (ib, "left of", ia)
        }
    } else if ca[1] <= cb[1] {
        (ia, "in front of", ib)
    } else {
        (ib, "in front of", ia)
    }
}

/// Canonical relationship of every unordered instance pair.
pub fn relation_ground_truth(instances: &InstanceSet) -> Result<BTreeMap<(InstanceId, InstanceId), String>, SceneError> {
    let ids = instances.ids();
    let mut out = BTreeMap::new();
    for (x, &a) in ids.iter().enumerate() {
        for &b in &ids[x + 1..] {
            let (ba, bb) = (instances.aabb(a)?, instances.aabb(b)?);
            let (s, p, o) = canonical_relation((a, &ba), (b, &bb));
            out.insert((s, o), p.to_string());
        }
    }
    Ok(out)
}

/// `n` orthonormal vectors of length `dim` (Gram–Schmidt on Gaussian draws).
pub fn orthonormal(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    assert!(n <= dim, "cannot fit {n} orthonormal vectors in {dim} dimensions");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis.into_iter().map(|v| v.into_iter().map(|x| x as f32).collect()).collect()
}

fn normalized(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// World-to-camera `[R | t]` (row-major) for a camera at `eye` looking at
/// `target`, image y pointing down.
pub fn look_at(eye: [f64; 3], target: [f64; 3]) -> [f64; 12] {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let unit = |a: [f64; 3]| {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    let f = unit(sub(target, eye));
    let r = unit(cross(f, [0.0, 0.0, 1.0]));
    let d = cross(f, r);
    let mut e = [0.0; 12];
    for (row, axis) in [r, d, f].iter().enumerate() {
        e[row * 4..row * 4 + 3].copy_from_slice(axis);
        e[row * 4 + 3] = -(axis[0] * eye[0] + axis[1] * eye[1] + axis[2] * eye[2]);
    }
    e
}

/// Prototype vectors shared by all generated scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub objects: Vec<Vec<f32>>,
    pub background: Vec<f32>,
    pub predicates: Vec<Vec<f32>>,
    pub lookup: Vec<Vec<f32>>,
}

impl Prototypes {
    pub fn new(cfg: &FixtureConfig) -> Result<Self, FixtureError> {
        if cfg.d_obj < OBJECT_CLASSES.len() + 1 || cfg.d_rel < PREDICATE_CLASSES.len() || cfg.lookup_dim < LOOKUP_LABELS.len() {
            return Err(FixtureError::Invalid("embedding dimensions too small for the fixture vocabularies".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut objects = orthonormal(OBJECT_CLASSES.len() + 1, cfg.d_obj, &mut rng);
        let background = objects.pop().expect("background vector");
        let predicates = orthonormal(PREDICATE_CLASSES.len(), cfg.d_rel, &mut rng);
        let lookup = orthonormal(LOOKUP_LABELS.len(), cfg.lookup_dim, &mut rng);
        Ok(Self {
            objects,
            background,
            predicates,
            lookup,
        })
    }

    pub fn object_table(&self) -> EmbeddingTable {
        let entries = OBJECT_CLASSES.iter().map(|s| s.to_string()).zip(self.objects.clone()).collect();
        EmbeddingTable::new("object-text", self.background.len(), entries).expect("valid object table")
    }

    pub fn predicate_table(&self) -> EmbeddingTable {
        let entries = PREDICATE_CLASSES.iter().map(|s| s.to_string()).zip(self.predicates.clone()).collect();
        EmbeddingTable::new("predicate-text", self.predicates[0].len(), entries).expect("valid predicate table")
    }

    pub fn lookup_table(&self) -> EmbeddingTable {
        let entries = LOOKUP_LABELS.iter().map(|s| s.to_string()).zip(self.lookup.clone()).collect();
        EmbeddingTable::new("lookup-text", self.lookup[0].len(), entries).expect("valid lookup table")
    }

    /// Lookup labels plus synonyms, each synonym 0.9·label + 0.1·(another label).
    pub fn phrase_table(&self) -> EmbeddingTable {
        let mut entries: Vec<(String, Vec<f32>)> = LOOKUP_LABELS.iter().map(|s| s.to_string()).zip(self.lookup.clone()).collect();
        for (k, (syn, label)) in SYNONYMS.iter().enumerate() {
            let li = LOOKUP_LABELS.iter().position(|l| l == label).expect("synonym target is a lookup label");
            let other = &self.lookup[(li + 1 + k) % LOOKUP_LABELS.len()];
            let v: Vec<f64> = self.lookup[li].iter().zip(other).map(|(&a, &b)| 0.9 * a as f64 + 0.1 * b as f64).collect();
            entries.push((syn.to_string(), normalized(&v)));
        }
        EmbeddingTable::new("lookup-text", self.lookup[0].len(), entries).expect("valid phrase table")
    }

    pub fn material_table(&self) -> EmbeddingTable {
        let entries = MATERIALS
            .iter()
            .map(|(m, classes)| {
                let mut v = vec![0.0f64; self.background.len()];
                for c in classes.iter() {
                    let ci = OBJECT_CLASSES.iter().position(|x| x == c).expect("material class");
                    v.iter_mut().zip(&self.objects[ci]).for_each(|(a, &b)| *a += b as f64);
                }
                (m.to_string(), normalized(&v))
            })
            .collect();
        EmbeddingTable::new("object-text", self.background.len(), entries).expect("valid material table")
    }
}

pub fn material_of(class: &str) -> &'static str {
    MATERIALS
        .iter()
        .find(|(_, cs)| cs.contains(&class))
        .map(|(m, _)| *m)
        .expect("every class has a material")
}

/// A generated scene before it is written to disk.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub classes: BTreeMap<InstanceId, usize>,
    pub relations: BTreeMap<(InstanceId, InstanceId), String>,
}

/// Samples one layout and renders its camera frames (depth only).
pub fn build_scene(
    cfg: &FixtureConfig,
    name: &str,
    layout: &[Placement],
    shift: [f32; 3],
    sample_seed: u64,
) -> Result<GeneratedScene, FixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut ids = Vec::new();
    let mut classes = BTreeMap::new();
    for (k, pl) in layout.iter().enumerate() {
        let id = k as InstanceId + 1;
        classes.insert(id, pl.class);
        let base = [pl.base[0] + shift[0], pl.base[1] + shift[1], pl.base[2] + shift[2]];
        let pts = sample_surface(&class_parts(pl.class), base, cfg.points_per_object, &mut rng);
        let color = [[150u8, 100, 50], [40, 90, 160], [220, 220, 200], [120, 80, 40]][pl.class];
        colors.extend(std::iter::repeat_n(color, pts.len()));
        ids.extend(std::iter::repeat_n(id, pts.len()));
        points.extend(pts);
    }
    let cloud = ScenePointCloud::new(points, colors, ids)?;
    let instances = InstanceSet::from_cloud(&cloud);

    let mut bounds = instances.aabb(instances.ids()[0])?;
    for &id in instances.ids() {
        bounds = bounds.union(&instances.aabb(id)?);
    }
    let c = bounds.center();
    let target = [c[0], c[1], 0.6 + shift[2] as f64];
    let intrinsics = [cfg.focal, 0.0, cfg.width as f64 / 2.0, 0.0, cfg.focal, cfg.height as f64 / 2.0, 0.0, 0.0, 1.0];
    let mut frames = Vec::with_capacity(cfg.cameras);
    for k in 0..cfg.cameras {
        let angle = std::f64::consts::TAU * k as f64 / cfg.cameras as f64 + 0.26;
        let eye = [
            target[0] + cfg.camera_radius * angle.cos(),
            target[1] + cfg.camera_radius * angle.sin(),
            cfg.camera_height + shift[2] as f64,
        ];
        let extrinsics = look_at(eye, target);
        let zbuf = splat_points((cfg.width, cfg.height), intrinsics, extrinsics, &cloud);
        let depth = DepthMap::new(cfg.height, cfg.width, zbuf.iter().map(|z| z.map_or(0.0, |(d, _)| d)).collect())?;
        frames.push(CameraFrame::new(cfg.width, cfg.height, intrinsics, extrinsics, depth)?);
    }
    let relations = relation_ground_truth(&instances)?;
    let mut scene = Scene::from_parts(name, cloud, frames);
    scene.instances = instances;
    Ok(GeneratedScene {
        scene,
        classes,
        relations,
    })
}

/// Crop embeddings for every frame, pair and scale; keys shared by several
/// pairs get the mean of their prototypes, then noise.
pub fn crop_cache(
    gen: &GeneratedScene,
    protos: &Prototypes,
    t_occ: f64,
    scales: &[f32],
    noise: f32,
    seed: u64,
) -> Result<CropCache, FixtureError> {
    let scene = &gen.scene;
    let vis = VisibilityTable::compute(scene, t_occ)?;
    let dim = protos.predicates[0].len();
    let mut acc: BTreeMap<(u32, u32, u32, u32, u32, u32), (CropKey, Vec<f64>, usize)> = BTreeMap::new();
    for (&(i, j), label) in &gen.relations {
        let p = PREDICATE_CLASSES.iter().position(|l| l == label).expect("fixture predicate");
        for k in 0..scene.frames.len() {
            let (Some(bi), Some(bj)) = (vis.projection(i, k)?.box2d, vis.projection(j, k)?.box2d) else {
                continue;
            };
            let union = bi.union(&bj);
            for &s in scales {
                let key = CropKey::new(k, union, s);
                let sort = (k as u32, union.min_x, union.min_y, union.max_x, union.max_y, key.scale_bits);
                let e = acc.entry(sort).or_insert_with(|| (key, vec![0.0; dim], 0));
                e.1.iter_mut().zip(&protos.predicates[p]).for_each(|(a, &b)| *a += b as f64);
                e.2 += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, noise.max(0.0)).expect("finite noise");
    let mut cache = CropCache::new(dim);
    for (_, (key, sum, n)) in acc {
        let v = sum
            .iter()
            .map(|&x| (x / n as f64) as f32 + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 })
            .collect();
        cache.insert(key, v)?;
    }
    Ok(cache)
}

pub fn ground_truth(gen: &GeneratedScene) -> GroundTruth {
    let objects: BTreeMap<InstanceId, String> = gen.classes.iter().map(|(&id, &c)| (id, OBJECT_CLASSES[c].to_string())).collect();
    GroundTruth {
        attributes: Some(objects.iter().map(|(&id, c)| (id, material_of(c).to_string())).collect()),
        objects,
        predicates: gen.relations.iter().map(|(&k, l)| (k, vec![l.clone()])).collect(),
        object_classes: OBJECT_CLASSES.iter().map(|s| s.to_string()).collect(),
        predicate_classes: PREDICATE_CLASSES.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureTables {
    pub object: PathBuf,
    pub predicate: PathBuf,
    pub lookup: PathBuf,
    pub phrases: PathBuf,
    pub materials: PathBuf,
}

/// Paths of everything [`generate`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSummary {
    pub train: Vec<PathBuf>,
    pub heldout: Vec<PathBuf>,
    pub tables: FixtureTables,
    pub frequency: PathBuf,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(value).expect("fixture JSON serialises");
    write_file(path, text.as_bytes())
}

fn write_scene(
    gen: &GeneratedScene,
    dir: &Path,
    protos: &Prototypes,
    cfg: &FixtureConfig,
    t_occ: f64,
    scales: &[f32],
    seed: u64,
) -> Result<PathBuf, FixtureError> {
    let scene = &gen.scene;
    scene.cloud.write(&dir.join("cloud.o3pc"))?;
    let by_instance: BTreeMap<InstanceId, Vec<f32>> = gen.classes.iter().map(|(&id, &c)| (id, protos.objects[c].clone())).collect();
    let grids = PrototypePixelEmbedder::new(scene, &by_instance, &protos.background, cfg.noise, seed)?.into_grids();
    let mut frames = Vec::with_capacity(scene.frames.len());
    for (k, (frame, grid)) in scene.frames.iter().zip(grids).enumerate() {
        let depth = PathBuf::from(format!("frame_{k}.o3dp"));
        let emb = PathBuf::from(format!("frame_{k}.o3pe"));
        frame.depth.write(&dir.join(&depth))?;
        grid.write(&dir.join(&emb))?;
        frames.push(FrameDescriptor {
            width: frame.width,
            height: frame.height,
            intrinsics: frame.intrinsics,
            extrinsics: frame.extrinsics,
            depth,
            pixel_embeddings: Some(emb),
            rgb: None,
        });
    }
    crop_cache(gen, protos, t_occ, scales, cfg.noise, seed ^ 0xc70b)?.write(&dir.join("crops.o3ce"))?;
    write_file(&dir.join("gt.json"), ground_truth(gen).to_json().as_bytes())?;
    let manifest = SceneManifest {
        name: Some(scene.name.clone()),
        cloud: CloudSource::Path("cloud.o3pc".into()),
        frames,
        crop_embeddings: Some("crops.o3ce".into()),
        ground_truth: Some("gt.json".into()),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Writes training scenes, held-out copies (new sampling seed, translated),
/// text tables and class frequencies under `cfg.out_dir`.
pub fn generate(cfg: &FixtureConfig, t_occ: f64, scales: &[f32]) -> Result<FixtureSummary, FixtureError> {
    if cfg.points_per_object == 0 || cfg.cameras == 0 {
        return Err(FixtureError::Invalid("points_per_object and cameras must be positive".into()));
    }
    let protos = Prototypes::new(cfg)?;
    let out = &cfg.out_dir;
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for (k, layout) in layouts().iter().enumerate() {
        let seed = cfg.seed.wrapping_mul(1000).wrapping_add(k as u64);
        let gen = build_scene(cfg, &format!("train_{k}"), layout, [0.0; 3], seed)?;
        for &c in gen.classes.values() {
            *freq.entry(OBJECT_CLASSES[c].to_string()).or_default() += 1;
        }
        for l in gen.relations.values() {
            *freq.entry(l.clone()).or_default() += 1;
        }
        train.push(write_scene(&gen, &out.join(format!("train_{k}")), &protos, cfg, t_occ, scales, seed)?);
        let hseed = seed.wrapping_add(500);
        let held = build_scene(cfg, &format!("heldout_{k}"), layout, cfg.holdout_shift, hseed)?;
        heldout.push(write_scene(&held, &out.join(format!("heldout_{k}")), &protos, cfg, t_occ, scales, hseed)?);
    }
    let tables = FixtureTables {
        object: out.join("tables/objects.o3et"),
        predicate: out.join("tables/predicates.o3et"),
        lookup: out.join("tables/lookup.o3et"),
        phrases: out.join("tables/phrases.o3et"),
        materials: out.join("tables/materials.o3et"),
    };
    protos.object_table().write(&tables.object)?;
    protos.predicate_table().write(&tables.predicate)?;
    protos.lookup_table().write(&tables.lookup)?;
    protos.phrase_table().write(&tables.phrases)?;
    protos.material_table().write(&tables.materials)?;
    let frequency = out.join("frequency.json");
    write_json(&frequency, &freq)?;
    Ok(FixtureSummary {
        train,
        heldout,
        tables,
        frequency,
    })
}
