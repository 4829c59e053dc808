//! Top-k frame selection per object and per object pair.
//!
//! A frame passes for an instance when `vis > t_vis` or when the projected
//! box covers more than `t_box` of the image. Pairs need both instances to
//! pass and are ranked by the smaller of the two visibilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::projection::{project_instance, ProjectedInstance, DEFAULT_T_OCC};
use crate::scene::{InstanceId, Scene, SceneError, SceneGraphSkeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub t_vis: f64,
    pub t_box: f64,
    pub t_occ: f64,
    pub k: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            t_vis: 0.3,
            t_box: 0.2,
            t_occ: DEFAULT_T_OCC,
            k: 5,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidParameter(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        for (name, v) in [("t_vis", self.t_vis), ("t_box", self.t_box)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.t_occ > 0.0) {
            return bad(format!("t_occ must be > 0, got {}", self.t_occ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCandidate {
    pub frame: usize,
    pub score: f64,
    pub area_fraction: f64,
    pub passes: bool,
}

impl FrameCandidate {
    pub fn from_projection(p: &ProjectedInstance, size: (u32, u32), params: &SelectionParams) -> Self {
        let area_fraction = p.area_fraction(size.0, size.1);
        Self {
            frame: p.frame,
            score: p.vis,
            area_fraction,
            passes: p.vis > params.t_vis || area_fraction > params.t_box,
        }
    }
}

/// Passing frames by descending score, then ascending frame index; at most `k`.
pub fn rank_frames(scored: impl IntoIterator<Item = (usize, f64)>, k: usize) -> Vec<usize> {
    let mut v: Vec<(usize, f64)> = scored.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(f, _)| f).collect()
}

fn object_ranking(cands: &[FrameCandidate], k: usize) -> Vec<usize> {
    rank_frames(cands.iter().filter(|c| c.passes).map(|c| (c.frame, c.score)), k)
}

fn pair_ranking(ci: &[FrameCandidate], cj: &[FrameCandidate], k: usize) -> Vec<usize> {
    rank_frames(
        ci.iter()
            .zip(cj)
            .filter(|(a, b)| a.passes && b.passes)
            .map(|(a, b)| (a.frame, a.score.min(b.score))),
        k,
    )
}

/// Projections of every instance into every frame, computed once per scene.
#[derive(Debug, Clone)]
pub struct VisibilityTable {
    projections: BTreeMap<InstanceId, Vec<ProjectedInstance>>,
    sizes: Vec<(u32, u32)>,
}

impl VisibilityTable {
    pub fn compute(scene: &Scene, t_occ: f64) -> Result<Self, SceneError> {
        let mut projections = BTreeMap::new();
        for &id in scene.instances.ids() {
            let per_frame = scene
                .frames
                .iter()
                .enumerate()
                .map(|(k, f)| project_instance(f, k, &scene.cloud, &scene.instances, id, t_occ))
                .collect::<Result<Vec<_>, _>>()?;
            projections.insert(id, per_frame);
        }
        Ok(Self {
            projections,
            sizes: scene.frames.iter().map(|f| f.size()).collect(),
        })
    }

    pub fn projection(&self, id: InstanceId, frame: usize) -> Result<&ProjectedInstance, SceneError> {
        self.projections
            .get(&id)
            .ok_or(SceneError::UnknownInstance(id))?
            .get(frame)
            .ok_or_else(|| SceneError::InvalidParameter(format!("frame {frame} out of range")))
    }

    pub fn candidates(&self, id: InstanceId, params: &SelectionParams) -> Result<Vec<FrameCandidate>, SceneError> {
        let per_frame = self.projections.get(&id).ok_or(SceneError::UnknownInstance(id))?;
        Ok(per_frame
            .iter()
            .zip(&self.sizes)
            .map(|(p, &size)| FrameCandidate::from_projection(p, size, params))
            .collect())
    }

    pub fn object_frames(&self, id: InstanceId, params: &SelectionParams) -> Result<Vec<usize>, SceneError> {
        Ok(object_ranking(&self.candidates(id, params)?, params.k))
    }

    pub fn pair_frames(
        &self,
        i: InstanceId,
        j: InstanceId,
        params: &SelectionParams,
    ) -> Result<Vec<usize>, SceneError> {
        if i == j {
            return Err(SceneError::SelfPair(i));
        }
        let ci = self.candidates(i, params)?;
        let cj = self.candidates(j, params)?;
        Ok(pair_ranking(&ci, &cj, params.k))
    }
}

pub fn select_object_frames(
    scene: &Scene,
    id: InstanceId,
    params: &SelectionParams,
) -> Result<Vec<usize>, SceneError> {
    params.validate()?;
    let cands = object_candidates(scene, id, params)?;
    Ok(object_ranking(&cands, params.k))
}

pub fn select_pair_frames(
    scene: &Scene,
    i: InstanceId,
    j: InstanceId,
    params: &SelectionParams,
) -> Result<Vec<usize>, SceneError> {
    params.validate()?;
    if i == j {
        return Err(SceneError::SelfPair(i));
    }
    let ci = object_candidates(scene, i, params)?;
    let cj = object_candidates(scene, j, params)?;
    Ok(pair_ranking(&ci, &cj, params.k))
}

fn object_candidates(
    scene: &Scene,
    id: InstanceId,
    params: &SelectionParams,
) -> Result<Vec<FrameCandidate>, SceneError> {
    scene
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let p = project_instance(f, k, &scene.cloud, &scene.instances, id, params.t_occ)?;
            Ok(FrameCandidate::from_projection(&p, f.size(), params))
        })
        .collect()
}

/// Selected frames for every node and every edge of a skeleton.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionResult {
    pub objects: BTreeMap<InstanceId, Vec<usize>>,
    pub pairs: BTreeMap<(InstanceId, InstanceId), Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SelectionJson {
    objects: BTreeMap<String, Vec<usize>>,
    pairs: BTreeMap<String, Vec<usize>>,
}

pub fn pair_key(i: InstanceId, j: InstanceId) -> String {
    format!("{i},{j}")
}

pub fn parse_pair_key(s: &str) -> Option<(InstanceId, InstanceId)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl Serialize for SelectionResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SelectionJson {
            objects: self.objects.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            pairs: self.pairs.iter().map(|(&(i, j), v)| (pair_key(i, j), v.clone())).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SelectionResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = SelectionJson::deserialize(d)?;
        let mut out = SelectionResult::default();
        for (k, v) in raw.objects {
            let id = k.parse().map_err(|_| D::Error::custom(format!("bad object key {k:?}")))?;
            out.objects.insert(id, v);
        }
        for (k, v) in raw.pairs {
            let key = parse_pair_key(&k).ok_or_else(|| D::Error::custom(format!("bad pair key {k:?}")))?;
            out.pairs.insert(key, v);
        }
        Ok(out)
    }
}

pub fn select_all(
    scene: &Scene,
    skeleton: &SceneGraphSkeleton,
    params: &SelectionParams,
) -> Result<(SelectionResult, VisibilityTable), SceneError> {
    params.validate()?;
    let table = VisibilityTable::compute(scene, params.t_occ)?;
    let mut result = SelectionResult::default();
    for &id in &skeleton.nodes {
        result.objects.insert(id, table.object_frames(id, params)?);
    }
    for &(i, j) in &skeleton.edges {
        result.pairs.insert((i, j), table.pair_frames(i, j, params)?);
    }
    Ok((result, table))
}
