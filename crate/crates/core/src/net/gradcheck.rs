//! Analytic gradients against central finite differences.
//!
//! Finite differences are only an oracle where the loss is smooth. ReLU and
//! max-pool make it piecewise smooth, so every evaluation records the tape's
//! activation signature; when the `±h` evaluations land on a different piece
//! than the base point the step is shrunk tenfold and the fallback counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::loss::{distill_loss, SceneTargets};
use super::model::{prepare_scene, GraphModel, ModelConfig, SceneInputs};
use super::tape::Tape;
use super::tensor::Mat;
use crate::scene::{build_skeleton, InstanceSet, ScenePointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Entries probed per tensor: the largest analytic gradient plus random ones.
    pub samples_per_tensor: usize,
    /// Step reductions tried at a kink before the entry is reported as skipped.
    pub max_shrinks: u32,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples_per_tensor: 3,
            max_shrinks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: Vec<GroupError>,
    pub checked: usize,
    /// Entries that needed a smaller step because of a kink.
    pub kink_fallbacks: usize,
    /// Entries still straddling a kink at the smallest step.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn worst_group(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random three-instance scene with random targets (one edge target absent).
pub fn random_instance(cfg: &ModelConfig, seed: u64) -> (SceneInputs, SceneTargets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for id in 0..3u32 {
        let center = [id as f64 * 1.5, rng.random_range(-0.5..0.5), 0.0];
        let n = rng.random_range(8..14);
        for _ in 0..n {
            let p: [f32; 3] = std::array::from_fn(|k| (center[k] + 0.3 * unit.sample(&mut rng)) as f32);
            points.push(p);
            ids.push(id + 10);
        }
    }
    let colors = vec![[0u8; 3]; points.len()];
    let cloud = ScenePointCloud::new(points, colors, ids).expect("non-empty cloud");
    let instances = InstanceSet::from_cloud(&cloud);
    let skeleton = build_skeleton(&instances, None);
    let inputs = prepare_scene(&cloud, &instances, &skeleton, cfg).expect("consistent scene");
    let mut gauss = |rows: usize, cols: usize| {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| unit.sample(&mut rng) as f32).collect())
    };
    let node = gauss(inputs.nodes.len(), cfg.d_obj);
    let edge = gauss(inputs.edges.len(), cfg.d_rel);
    let mut edge_present = vec![true; inputs.edges.len()];
    edge_present[0] = false;
    let targets = SceneTargets {
        node_present: vec![true; inputs.nodes.len()],
        node,
        edge,
        edge_present,
    };
    (inputs, targets)
}

fn loss_with_signature(model: &GraphModel<f64>, inputs: &SceneInputs, targets: &SceneTargets) -> (f64, u64) {
    let mut fwd = model.forward_on(inputs, Tape::with_kink_tracking());
    let l = distill_loss(&mut fwd, targets);
    (fwd.tape.value(l).data[0], fwd.tape.signature())
}

/// Probes `eval` around parameter `(k, i)`; returns the numeric derivative,
/// whether a fallback was needed, and whether the kink persisted.
fn probe<F>(model: &mut GraphModel<f64>, k: usize, i: usize, cfg: &GradCheckConfig, base_sig: u64, eval: &F) -> (f64, bool, bool)
where
    F: Fn(&GraphModel<f64>) -> (f64, u64),
{
    let orig = model.params.tensors[k].data[i];
    let mut h = cfg.step;
    let mut fell_back = false;
    for attempt in 0..=cfg.max_shrinks {
        model.params.tensors[k].data[i] = orig + h;
        let (lp, sp) = eval(model);
        model.params.tensors[k].data[i] = orig - h;
        let (lm, sm) = eval(model);
        model.params.tensors[k].data[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        if sp == base_sig && sm == base_sig {
            return (numeric, fell_back, false);
        }
        if attempt == cfg.max_shrinks {
            return (numeric, true, true);
        }
        fell_back = true;
        h *= 0.1;
    }
    unreachable!()
}

fn check_with<F>(model: &mut GraphModel<f64>, analytic: &[Mat<f64>], cfg: &GradCheckConfig, seed: u64, only: &dyn Fn(&str) -> bool, eval: F) -> GradCheckReport
where
    F: Fn(&GraphModel<f64>) -> (f64, u64),
{
    let (_, base_sig) = eval(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        groups: Vec::new(),
        checked: 0,
        kink_fallbacks: 0,
        skipped: 0,
    };
    for k in 0..model.params.len() {
        let name = model.params.names[k].clone();
        if !only(&name) {
            continue;
        }
        let g = &analytic[k];
        let n = g.data.len();
        let mut entries = vec![(0..n).max_by(|&a, &b| g.data[a].abs().total_cmp(&g.data[b].abs())).unwrap_or(0)];
        while entries.len() < cfg.samples_per_tensor.min(n) {
            entries.push(rng.random_range(0..n));
        }
        let mut group = 0.0f64;
        for i in entries {
            let (numeric, fell_back, kinked) = probe(model, k, i, cfg, base_sig, &eval);
            report.kink_fallbacks += fell_back as usize;
            if kinked {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            group = group.max(relative_error(g.data[i], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(group);
        report.groups.push(GroupError {
            name,
            max_rel_error: group,
        });
    }
    report
}

/// Full model on a random instance, every parameter tensor probed.
pub fn gradient_check(model_cfg: &ModelConfig, seed: u64, cfg: &GradCheckConfig) -> GradCheckReport {
    let (inputs, targets) = random_instance(model_cfg, seed);
    let mut model = GraphModel::<f64>::new(model_cfg.clone(), seed);
    let mut fwd = model.forward(&inputs);
    let loss = distill_loss(&mut fwd, &targets);
    let grads = fwd.tape.backward(loss);
    let analytic: Vec<Mat<f64>> = fwd
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t.rows, t.cols))
        .collect();
    check_with(&mut model, &analytic, cfg, seed, &|_| true, |m| loss_with_signature(m, &inputs, &targets))
}

/// Node head with nonlinearities and normalisation disabled under a linear
/// functional of its output, so finite differences are exact up to roundoff.
pub fn linear_head_check(model_cfg: &ModelConfig, seed: u64, cfg: &GradCheckConfig) -> GradCheckReport {
    let lin_cfg = ModelConfig {
        linear: true,
        ..model_cfg.clone()
    };
    let mut model = GraphModel::<f64>::new(lin_cfg.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gauss = |rows: usize, cols: usize| Mat::from_vec(rows, cols, (0..rows * cols).map(|_| unit.sample(&mut rng)).collect::<Vec<f64>>());
    let features = gauss(4, lin_cfg.feature_dim);
    let probe_vec = gauss(lin_cfg.d_obj, 1);
    let eval = |m: &GraphModel<f64>| {
        let (mut fwd, _) = m.forward_node_head(&features, Tape::new());
        let r = fwd.tape.leaf(probe_vec.clone());
        let col = fwd.tape.matmul(fwd.node_out, r);
        let ones = fwd.tape.leaf(Mat::from_vec(1, features.rows, vec![1.0; features.rows]));
        let s = fwd.tape.matmul(ones, col);
        (fwd, s)
    };
    let (fwd, s) = eval(&model);
    let grads = fwd.tape.backward(s);
    let analytic: Vec<Mat<f64>> = fwd
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t.rows, t.cols))
        .collect();
    check_with(
        &mut model,
        &analytic,
        cfg,
        seed,
        &|name| name.starts_with("node_head."),
        |m| {
            let (fwd, s) = eval(m);
            (fwd.tape.value(s).data[0], 0)
        },
    )
}

/// Gradient of the cosine loss at predictions exactly opposite to their
/// targets: returns `(max |analytic|, max relative error)`.
pub fn anti_parallel_check(dim: usize, seed: u64, step: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let target = Mat::from_vec(3, dim, (0..3 * dim).map(|_| unit.sample(&mut rng)).collect::<Vec<f64>>());
    let mut pred = target.clone();
    pred.data.iter_mut().for_each(|v| *v = -2.0 * *v);
    let present = [true; 3];
    let eval = |p: &Mat<f64>| {
        let mut t = Tape::new();
        let v = t.leaf(p.clone());
        let l = t.cosine_loss(v, target.clone(), &present);
        (t, v, l)
    };
    let (t, v, l) = eval(&pred);
    let g = t.backward(l).get_or_zeros(v, 3, dim);
    let mut max_grad = 0.0f64;
    let mut max_err = 0.0f64;
    for i in 0..pred.data.len() {
        let mut p = pred.clone();
        p.data[i] += step;
        let (tp, _, lp) = eval(&p);
        p.data[i] -= 2.0 * step;
        let (tm, _, lm) = eval(&p);
        let numeric = (tp.value(lp).data[0] - tm.value(lm).data[0]) / (2.0 * step);
        assert!(g.data[i].is_finite());
        max_grad = max_grad.max(g.data[i].abs());
        max_err = max_err.max(relative_error(g.data[i], numeric));
    }
    (max_grad, max_err)
}
