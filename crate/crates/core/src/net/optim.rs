//! AdamW with decoupled weight decay and a cyclic cosine learning rate.

use super::model::Params;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn zeros(params: &Params<f32>) -> Self {
        let shape: Vec<Vec<f32>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            step: 0,
            m: shape.clone(),
            v: shape,
        }
    }

    /// One update. With `lr == 0` parameters are left untouched.
    pub fn update(&mut self, params: &mut Params<f32>, grads: &[Vec<f32>], lr: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (k, tensor) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..tensor.data.len() {
                let gi = g[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                if lr == 0.0 {
                    continue;
                }
                let p = tensor.data[i] as f64;
                let upd = (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS) + weight_decay * p;
                tensor.data[i] = (p - lr * upd) as f32;
            }
        }
    }
}

/// Cosine annealing from `lr` to `lr_min`, restarting every `cycle` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicCosine {
    pub lr: f64,
    pub lr_min: f64,
    pub cycle: usize,
}

impl CyclicCosine {
    pub fn at(&self, epoch: usize) -> f64 {
        let cycle = self.cycle.max(1);
        let phase = (epoch % cycle) as f64 / cycle as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}
