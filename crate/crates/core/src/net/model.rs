//! Point-set encoders, triplet message passing and the two projection heads.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{Mat, Real};
use crate::scene::{build_pair_set, InstanceId, InstanceSet, SceneError, SceneGraphSkeleton, ScenePointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Object embedding width.
    pub d_obj: usize,
    /// Relationship embedding width.
    pub d_rel: usize,
    /// Width of node and edge features inside the graph.
    pub feature_dim: usize,
    /// Hidden width of message and node-head layers.
    pub hidden_dim: usize,
    /// Hidden widths of the per-point encoder layers.
    pub encoder_widths: Vec<usize>,
    pub gnn_layers: usize,
    /// Linear layers in the node head (the last one projects to `d_obj`).
    pub node_head_layers: usize,
    pub edge_blocks: usize,
    pub edge_tokens: usize,
    pub attention_dim: usize,
    pub position_dim: usize,
    pub node_points: usize,
    pub edge_points: usize,
    /// Replaces every ReLU by the identity and skips layer normalisation.
    pub linear: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_obj: 16,
            d_rel: 16,
            feature_dim: 64,
            hidden_dim: 128,
            encoder_widths: vec![32, 64],
            gnn_layers: 5,
            node_head_layers: 5,
            edge_blocks: 5,
            edge_tokens: 4,
            attention_dim: 32,
            position_dim: 8,
            node_points: 256,
            edge_points: 512,
            linear: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("d_obj", self.d_obj),
            ("d_rel", self.d_rel),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("node_head_layers", self.node_head_layers),
            ("edge_tokens", self.edge_tokens),
            ("attention_dim", self.attention_dim),
            ("node_points", self.node_points),
            ("edge_points", self.edge_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("model.{name} must be positive"));
            }
        }
        if self.encoder_widths.contains(&0) {
            return Err("model.encoder_widths entries must be positive".into());
        }
        if self.position_dim % 2 != 0 {
            return Err("model.position_dim must be even".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Kaiming-normal with the given fan-in.
    Weight { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) {
    out.push(ParamSpec {
        name: format!("{prefix}.w"),
        rows: fan_in,
        cols: fan_out,
        kind: ParamKind::Weight { fan_in },
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{prefix}.b"),
            rows: 1,
            cols: fan_out,
            kind: ParamKind::Zeros,
        });
    }
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    for (suffix, kind) in [("g", ParamKind::Ones), ("b", ParamKind::Zeros)] {
        out.push(ParamSpec {
            name: format!("{prefix}.{suffix}"),
            rows: 1,
            cols: width,
            kind,
        });
    }
}

/// Every parameter tensor of the model, in checkpoint order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    let f = cfg.feature_dim;
    for (prefix, input) in [("node_enc", 3), ("edge_enc", 4)] {
        let mut width = input;
        for (l, &w) in cfg.encoder_widths.iter().chain(std::iter::once(&f)).enumerate() {
            linear_specs(&mut s, &format!("{prefix}.{l}"), width, w, true);
            width = w;
        }
    }
    for k in 0..cfg.gnn_layers {
        linear_specs(&mut s, &format!("gnn.{k}.0"), 3 * f, cfg.hidden_dim, true);
        linear_specs(&mut s, &format!("gnn.{k}.1"), cfg.hidden_dim, 3 * f, true);
    }
    let mut width = f;
    for l in 0..cfg.node_head_layers - 1 {
        linear_specs(&mut s, &format!("node_head.{l}"), width, cfg.hidden_dim, true);
        norm_specs(&mut s, &format!("node_head.{l}.ln"), cfg.hidden_dim);
        width = cfg.hidden_dim;
    }
    linear_specs(&mut s, &format!("node_head.{}", cfg.node_head_layers - 1), width, cfg.d_obj, true);

    let a = cfg.attention_dim;
    linear_specs(&mut s, "edge_head.in", f + cfg.position_dim, a, true);
    for b in 0..cfg.edge_blocks {
        let p = format!("edge_head.block.{b}");
        norm_specs(&mut s, &format!("{p}.ln1"), a);
        linear_specs(&mut s, &format!("{p}.q"), a, a, false);
        linear_specs(&mut s, &format!("{p}.k"), a, a, false);
        linear_specs(&mut s, &format!("{p}.v"), a, a, false);
        linear_specs(&mut s, &format!("{p}.o"), a, a, true);
        norm_specs(&mut s, &format!("{p}.ln2"), a);
        linear_specs(&mut s, &format!("{p}.mlp.0"), a, 2 * a, true);
        linear_specs(&mut s, &format!("{p}.mlp.1"), 2 * a, a, true);
    }
    norm_specs(&mut s, "edge_head.out_ln", a);
    linear_specs(&mut s, "edge_head.out", a, cfg.d_rel, true);
    s
}

/// Named parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Mat<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Params<T> {
    pub fn new(names: Vec<String>, tensors: Vec<Mat<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// Kaiming-normal weights from a ChaCha stream, zero biases, unit gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = parameter_layout(cfg);
        let mut tensors = Vec::with_capacity(layout.len());
        for spec in &layout {
            let n = spec.rows * spec.cols;
            let data: Vec<T> = match spec.kind {
                ParamKind::Weight { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
                ParamKind::Zeros => vec![T::zero(); n],
                ParamKind::Ones => vec![T::one(); n],
            };
            tensors.push(Mat::from_vec(spec.rows, spec.cols, data));
        }
        Self::new(layout.into_iter().map(|s| s.name).collect(), tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params::new(self.names.clone(), self.tensors.iter().map(|t| t.cast()).collect())
    }

    /// True when names and shapes agree with the layout of `cfg`.
    pub fn matches_layout(&self, cfg: &ModelConfig) -> Result<(), String> {
        let layout = parameter_layout(cfg);
        if layout.len() != self.len() {
            return Err(format!("expected {} tensors, found {}", layout.len(), self.len()));
        }
        for (spec, (name, t)) in layout.iter().zip(self.names.iter().zip(&self.tensors)) {
            if &spec.name != name {
                return Err(format!("expected tensor {}, found {name}", spec.name));
            }
            if (spec.rows, spec.cols) != (t.rows, t.cols) {
                return Err(format!(
                    "tensor {name}: expected shape {}x{}, found {}x{}",
                    spec.rows, spec.cols, t.rows, t.cols
                ));
            }
        }
        Ok(())
    }
}

/// Encoder inputs of one scene: normalised, subsampled point sets for every
/// node and edge of the skeleton. Coordinates are kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInputs {
    pub nodes: Vec<InstanceId>,
    /// Edges as `(subject position, object position)` into `nodes`.
    pub edges: Vec<(usize, usize)>,
    pub node_points: Mat<f64>,
    pub node_offsets: Vec<usize>,
    pub edge_points: Mat<f64>,
    pub edge_offsets: Vec<usize>,
}

impl SceneInputs {
    pub fn edge_ids(&self) -> impl Iterator<Item = (InstanceId, InstanceId)> + '_ {
        self.edges.iter().map(|&(a, b)| (self.nodes[a], self.nodes[b]))
    }
}

/// Indices of `budget` points chosen by farthest-point sampling, starting from
/// the point farthest from the origin (points are already centred). Ties go to
/// the lowest index. Returns every index when the set fits the budget.
pub fn farthest_point_subsample(points: &[[f64; 3]], budget: usize) -> Vec<usize> {
    let n = points.len();
    if n <= budget {
        return (0..n).collect();
    }
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let mut first = 0;
    let mut best = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = d2(p, &[0.0; 3]);
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| d2(p, &points[first])).collect();
    while chosen.len() < budget {
        let mut next = 0;
        let mut far = -1.0;
        for (i, &d) in dist.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(d2(&points[i], &points[next]));
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Centres points at `center` and divides by the largest resulting norm.
fn normalise(points: &[[f64; 3]], center: [f64; 3]) -> Vec<[f64; 3]> {
    let centred: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
        .collect();
    let max = centred
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    centred.iter().map(|p| [p[0] * scale, p[1] * scale, p[2] * scale]).collect()
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / points.len() as f64)
}

/// Node point set: centred at the centroid, max-norm scaled, subsampled.
pub fn prepare_node_points(points: &[[f64; 3]], budget: usize) -> Vec<[f64; 3]> {
    let norm = normalise(points, centroid(points));
    farthest_point_subsample(&norm, budget).into_iter().map(|i| norm[i]).collect()
}

/// Edge point set with mask channel: centred at `center`, max-norm scaled,
/// subsampled.
pub fn prepare_edge_points(points: &[[f64; 3]], mask: &[u8], center: [f64; 3], budget: usize) -> Vec<[f64; 4]> {
    let norm = normalise(points, center);
    farthest_point_subsample(&norm, budget)
        .into_iter()
        .map(|i| [norm[i][0], norm[i][1], norm[i][2], mask[i] as f64])
        .collect()
}

pub fn prepare_scene(
    cloud: &ScenePointCloud,
    instances: &InstanceSet,
    skeleton: &SceneGraphSkeleton,
    cfg: &ModelConfig,
) -> Result<SceneInputs, SceneError> {
    let mut node_data = Vec::new();
    let mut node_offsets = vec![0];
    for &id in &skeleton.nodes {
        let pts: Vec<[f64; 3]> = instances
            .points_of(id)?
            .iter()
            .map(|&i| cloud.point_f64(i))
            .collect();
        if pts.is_empty() {
            return Err(SceneError::UnknownInstance(id));
        }
        let prepared = prepare_node_points(&pts, cfg.node_points);
        node_offsets.push(node_offsets.last().unwrap() + prepared.len());
        node_data.extend(prepared.into_iter().flatten());
    }
    let mut edge_data = Vec::new();
    let mut edge_offsets = vec![0];
    let mut edges = Vec::with_capacity(skeleton.edges.len());
    for &(i, j) in &skeleton.edges {
        let pair = build_pair_set(cloud, instances, i, j)?;
        let pts: Vec<[f64; 3]> = pair.points.iter().map(|p| p.map(|v| v as f64)).collect();
        let center = instances.aabb(i)?.union(&instances.aabb(j)?).center();
        let prepared = prepare_edge_points(&pts, &pair.mask, center, cfg.edge_points);
        edge_offsets.push(edge_offsets.last().unwrap() + prepared.len());
        edge_data.extend(prepared.into_iter().flatten());
        let a = skeleton.node_position(i).ok_or(SceneError::UnknownInstance(i))?;
        let b = skeleton.node_position(j).ok_or(SceneError::UnknownInstance(j))?;
        edges.push((a, b));
    }
    Ok(SceneInputs {
        nodes: skeleton.nodes.clone(),
        edges,
        node_points: Mat::from_vec(node_offsets[skeleton.nodes.len()], 3, node_data),
        node_offsets,
        edge_points: Mat::from_vec(*edge_offsets.last().unwrap(), 4, edge_data),
        edge_offsets,
    })
}

/// Fixed sinusoidal tag for token position `t`.
pub fn position_tag(t: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let freq = 1.0 / 10000f64.powf((c / 2 * 2) as f64 / dim as f64);
            if c % 2 == 0 {
                (t as f64 * freq).sin()
            } else {
                (t as f64 * freq).cos()
            }
        })
        .collect()
}

/// Tape handles produced by one forward pass.
pub struct Forward<T> {
    pub tape: Tape<T>,
    /// One handle per parameter tensor, in layout order.
    pub params: Vec<Var>,
    /// `nodes × d_obj`.
    pub node_out: Var,
    /// `edges × d_rel`.
    pub edge_out: Var,
}

struct Builder<'a, T> {
    tape: Tape<T>,
    params: &'a Params<T>,
    vars: Vec<Var>,
    linear: bool,
}

impl<T: Real> Builder<'_, T> {
    fn p(&self, name: &str) -> Var {
        let idx = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[idx]
    }

    fn dense(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.p(&format!("{prefix}.w"));
        let y = self.tape.matmul(x, w);
        match self.params.position(&format!("{prefix}.b")) {
            Some(i) => {
                let b = self.vars[i];
                self.tape.add_row(y, b)
            }
            None => y,
        }
    }

    fn act(&mut self, x: Var) -> Var {
        if self.linear {
            x
        } else {
            self.tape.relu(x)
        }
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        if self.linear {
            return x;
        }
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b)
    }

    fn point_encoder(&mut self, points: Var, offsets: &[usize], prefix: &str, layers: usize) -> Var {
        let mut x = points;
        for l in 0..layers {
            x = self.dense(x, &format!("{prefix}.{l}"));
            x = self.act(x);
        }
        self.tape.segment_max(x, offsets)
    }
}

/// Parameters plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Real> GraphModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let params = Params::init(&config, seed);
        Self { config, params }
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self, String> {
        params.matches_layout(&config)?;
        Ok(Self { config, params })
    }

    /// Node and edge features before the heads: encoders then message passing.
    fn trunk(&self, b: &mut Builder<'_, T>, inputs: &SceneInputs) -> (Var, Var) {
        let layers = self.config.encoder_widths.len() + 1;
        let np = b.tape.leaf(inputs.node_points.cast());
        let mut h = b.point_encoder(np, &inputs.node_offsets, "node_enc", layers);
        let ep = b.tape.leaf(inputs.edge_points.cast());
        let mut e = b.point_encoder(ep, &inputs.edge_offsets, "edge_enc", layers);
        if inputs.edges.is_empty() {
            return (h, e);
        }
        let f = self.config.feature_dim;
        let subj: Vec<usize> = inputs.edges.iter().map(|e| e.0).collect();
        let obj: Vec<usize> = inputs.edges.iter().map(|e| e.1).collect();
        let targets: Vec<usize> = subj.iter().chain(&obj).copied().collect();
        for k in 0..self.config.gnn_layers {
            let hs = b.tape.gather(h, &subj);
            let ho = b.tape.gather(h, &obj);
            let x = b.tape.concat_cols(&[hs, e, ho]);
            let x = b.dense(x, &format!("gnn.{k}.0"));
            let x = b.act(x);
            let x = b.dense(x, &format!("gnn.{k}.1"));
            let ms = b.tape.slice_cols(x, 0, f);
            let en = b.tape.slice_cols(x, f, f);
            let mo = b.tape.slice_cols(x, 2 * f, f);
            e = b.act(en);
            let msgs = b.tape.concat_rows(&[ms, mo]);
            let agg = b.tape.scatter_mean(msgs, &targets, inputs.nodes.len(), Some(h));
            h = b.act(agg);
        }
        (h, e)
    }

    fn node_head(&self, b: &mut Builder<'_, T>, h: Var) -> Var {
        let mut x = h;
        let last = self.config.node_head_layers - 1;
        for l in 0..last {
            x = b.dense(x, &format!("node_head.{l}"));
            x = b.norm(x, &format!("node_head.{l}.ln"));
            x = b.act(x);
        }
        b.dense(x, &format!("node_head.{last}"))
    }

    fn edge_head(&self, b: &mut Builder<'_, T>, e: Var, edges: usize) -> Var {
        let t = self.config.edge_tokens;
        let repeat: Vec<usize> = (0..edges).flat_map(|i| std::iter::repeat_n(i, t)).collect();
        let rep = b.tape.gather(e, &repeat);
        let pd = self.config.position_dim;
        let mut tags = Vec::with_capacity(edges * t * pd);
        for _ in 0..edges {
            for k in 0..t {
                tags.extend(position_tag(k, pd).into_iter().map(T::of));
            }
        }
        let tags = b.tape.leaf(Mat::from_vec(edges * t, pd, tags));
        let x = b.tape.concat_cols(&[rep, tags]);
        let mut x = b.dense(x, "edge_head.in");
        for blk in 0..self.config.edge_blocks {
            let p = format!("edge_head.block.{blk}");
            let y = b.norm(x, &format!("{p}.ln1"));
            let q = b.dense(y, &format!("{p}.q"));
            let k = b.dense(y, &format!("{p}.k"));
            let v = b.dense(y, &format!("{p}.v"));
            let a = b.tape.block_attention(q, k, v, t);
            let a = b.dense(a, &format!("{p}.o"));
            x = b.tape.add(x, a);
            let y = b.norm(x, &format!("{p}.ln2"));
            let y = b.dense(y, &format!("{p}.mlp.0"));
            let y = b.act(y);
            let y = b.dense(y, &format!("{p}.mlp.1"));
            x = b.tape.add(x, y);
        }
        let pooled = b.tape.scatter_mean(x, &repeat, edges, None);
        let pooled = b.norm(pooled, "edge_head.out_ln");
        b.dense(pooled, "edge_head.out")
    }

    fn builder(&self, tape: Tape<T>) -> Builder<'_, T> {
        let mut b = Builder {
            tape,
            params: &self.params,
            vars: Vec::with_capacity(self.params.len()),
            linear: self.config.linear,
        };
        for t in &self.params.tensors {
            let v = b.tape.leaf(t.clone());
            b.vars.push(v);
        }
        b
    }

    /// Full forward pass onto `tape` (pass a kink-tracking tape for gradient checks).
    pub fn forward_on(&self, inputs: &SceneInputs, tape: Tape<T>) -> Forward<T> {
        let mut b = self.builder(tape);
        let (h, e) = self.trunk(&mut b, inputs);
        let node_out = self.node_head(&mut b, h);
        let edge_out = self.edge_head(&mut b, e, inputs.edges.len());
        Forward {
            tape: b.tape,
            params: b.vars,
            node_out,
            edge_out,
        }
    }

    pub fn forward(&self, inputs: &SceneInputs) -> Forward<T> {
        self.forward_on(inputs, Tape::new())
    }

    /// Node head alone on given features (`rows × feature_dim`).
    pub fn forward_node_head(&self, features: &Mat<T>, tape: Tape<T>) -> (Forward<T>, Var) {
        let mut b = self.builder(tape);
        let x = b.tape.leaf(features.clone());
        let out = self.node_head(&mut b, x);
        let fwd = Forward {
            tape: b.tape,
            params: b.vars,
            node_out: out,
            edge_out: out,
        };
        (fwd, x)
    }

    /// Node and edge predictions without keeping the tape around.
    pub fn predict(&self, inputs: &SceneInputs) -> (Mat<T>, Mat<T>) {
        let fwd = self.forward(inputs);
        (fwd.tape.value(fwd.node_out).clone(), fwd.tape.value(fwd.edge_out).clone())
    }

    /// Output of the node encoder alone for one prepared node point set.
    pub fn encode_node_points(&self, points: &[[f64; 3]]) -> Vec<T> {
        let mut b = self.builder(Tape::new());
        let data: Vec<T> = points.iter().flatten().map(|&v| T::of(v)).collect();
        let x = b.tape.leaf(Mat::from_vec(points.len(), 3, data));
        let layers = self.config.encoder_widths.len() + 1;
        let out = b.point_encoder(x, &[0, points.len()], "node_enc", layers);
        b.tape.value(out).data.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_obj: 4,
            d_rel: 5,
            feature_dim: 6,
            hidden_dim: 7,
            encoder_widths: vec![5],
            gnn_layers: 2,
            node_head_layers: 3,
            edge_blocks: 2,
            edge_tokens: 3,
            attention_dim: 6,
            position_dim: 4,
            node_points: 16,
            edge_points: 24,
            linear: false,
        }
    }

    fn inputs() -> SceneInputs {
        let pts = |n: usize, s: f64| (0..n).map(move |i| [(i as f64 * s).sin(), (i as f64 * 1.3 * s).cos(), i as f64 * 0.01]);
        let nodes: Vec<[f64; 3]> = pts(5, 0.7).chain(pts(4, 1.1)).chain(pts(3, 0.4)).collect();
        let edges: Vec<[f64; 4]> = pts(6, 0.9).map(|p| [p[0], p[1], p[2], (p[0] > 0.0) as u8 as f64]).collect();
        SceneInputs {
            nodes: vec![1, 2, 3],
            edges: vec![(0, 1), (1, 0), (2, 0)],
            node_points: Mat::from_vec(12, 3, nodes.into_iter().flatten().collect()),
            node_offsets: vec![0, 5, 9, 12],
            edge_points: Mat::from_vec(6, 4, edges.into_iter().flatten().collect()),
            edge_offsets: vec![0, 2, 4, 6],
        }
    }

    #[test]
    fn layout_matches_init_and_shapes() {
        let cfg = tiny();
        let p = Params::<f32>::init(&cfg, 3);
        p.matches_layout(&cfg).unwrap();
        let (n, e) = GraphModel::from_params(cfg, p).unwrap().predict(&inputs());
        assert_eq!((n.rows, n.cols, e.rows, e.cols), (3, 4, 3, 5));
        assert!(n.data.iter().chain(&e.data).all(|v| v.is_finite()));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = tiny();
        assert_eq!(Params::<f32>::init(&cfg, 9), Params::<f32>::init(&cfg, 9));
        assert_ne!(Params::<f32>::init(&cfg, 9), Params::<f32>::init(&cfg, 10));
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = ModelConfig {
            node_head_layers: 1,
            ..tiny()
        };
        let mut model = GraphModel::<f64>::new(cfg, 1);
        for t in &mut model.params.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (n, e) = model.predict(&inputs());
        assert!(n.data.iter().chain(&e.data).all(|&v| v == 0.0));
    }

    #[test]
    fn no_gnn_layers_is_identity_on_features() {
        // With K = 0 the node head sees the raw encoder output.
        let cfg = ModelConfig {
            gnn_layers: 0,
            ..tiny()
        };
        let model = GraphModel::<f64>::new(cfg, 4);
        let inp = inputs();
        let enc: Vec<f64> = (0..3)
            .flat_map(|n| {
                let rows = inp.node_offsets[n]..inp.node_offsets[n + 1];
                let pts: Vec<[f64; 3]> = rows.map(|r| [inp.node_points.get(r, 0), inp.node_points.get(r, 1), inp.node_points.get(r, 2)]).collect();
                model.encode_node_points(&pts)
            })
            .collect();
        let (head, _) = model.forward_node_head(&Mat::from_vec(3, 6, enc), Tape::new());
        let (n, _) = model.predict(&inp);
        assert!(head.tape.value(head.node_out).max_abs_diff(&n) < 1e-12);
    }

    #[test]
    fn fps_spreads_and_is_exhaustive_under_budget() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 / 10.0, 0.0, 0.0]).collect();
        assert_eq!(farthest_point_subsample(&pts, 20), (0..10).collect::<Vec<_>>());
        assert_eq!(farthest_point_subsample(&pts, 2), vec![0, 9]);
        assert_eq!(farthest_point_subsample(&pts, 3), vec![0, 4, 9]);
    }

    #[test]
    fn normalised_sets_fit_unit_ball() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [i as f64, (i * i) as f64 * 0.1, 3.0]).collect();
        let out = prepare_node_points(&pts, 20);
        assert_eq!(out.len(), 20);
        let max = out.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn position_tags_differ() {
        assert_eq!(position_tag(0, 4), vec![0.0, 1.0, 0.0, 1.0]);
        assert_ne!(position_tag(1, 4), position_tag(2, 4));
    }
}
