//! Deterministic single-threaded training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{distill_loss, distill_loss_value, SceneTargets};
use super::model::{GraphModel, ModelConfig, SceneInputs};
use super::optim::{AdamState, CyclicCosine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `lr_min = lr_min_ratio · lr` at the end of every cosine cycle.
    pub lr_min_ratio: f64,
    pub cycle_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 5e-4,
            lr_min_ratio: 0.01,
            cycle_epochs: 50,
            weight_decay: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> CyclicCosine {
        CyclicCosine {
            lr: self.lr,
            lr_min: self.lr * self.lr_min_ratio,
            cycle: self.cycle_epochs,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err("train.lr must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.lr_min_ratio) {
            return Err("train.lr_min_ratio must lie in [0, 1]".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err("train.weight_decay must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training scenes")]
    NoScenes,
    #[error("scene {scene}: {reason}")]
    Targets { scene: String, reason: String },
    #[error("loss became non-finite at epoch {epoch} on scene {scene}")]
    Diverged { epoch: usize, scene: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One scene ready for training.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub name: String,
    pub inputs: SceneInputs,
    pub targets: SceneTargets,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean scene loss measured before each scene's update.
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigEcho {
    model: ModelConfig,
    train: TrainConfig,
}

/// Scene visiting order of `epoch`; depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Parameters, optimizer moments and progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: GraphModel<f32>,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub train: TrainConfig,
}

impl TrainState {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        let model = GraphModel::new(model, train.seed);
        let optimizer = AdamState::zeros(&model.params);
        Self {
            model,
            optimizer,
            epoch: 0,
            train,
        }
    }

    pub fn config_echo(&self) -> String {
        serde_json::to_string(&ConfigEcho {
            model: self.model.config.clone(),
            train: self.train.clone(),
        })
        .expect("config serialises")
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.config_echo(),
            &self.model.params,
            self.epoch as u64,
            self.optimizer.clone(),
        )
    }

    /// Restores a state; the checkpoint's config echo defines the model shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let echo: ConfigEcho =
            serde_json::from_str(&ck.config_json).map_err(|e| TrainError::Checkpoint(format!("config echo: {e}")))?;
        let params = ck.params().map_err(TrainError::Checkpoint)?;
        let model = GraphModel::from_params(echo.model, params).map_err(TrainError::Checkpoint)?;
        for (k, t) in model.params.tensors.iter().enumerate() {
            if ck.optimizer.m[k].len() != t.data.len() || ck.optimizer.v[k].len() != t.data.len() {
                return Err(TrainError::Checkpoint(format!("optimizer state of {} has the wrong size", model.params.names[k])));
            }
        }
        Ok(Self {
            model,
            optimizer: ck.optimizer.clone(),
            epoch: ck.epoch as usize,
            train: echo.train,
        })
    }

    /// Forward, backward and one optimizer update on a single scene.
    pub fn step_scene(&mut self, scene: &TrainScene, lr: f64) -> f64 {
        let mut fwd = self.model.forward(&scene.inputs);
        let loss = distill_loss(&mut fwd, &scene.targets);
        let value = fwd.tape.value(loss).data[0] as f64;
        let grads = fwd.tape.backward(loss);
        let flat: Vec<Vec<f32>> = fwd
            .params
            .iter()
            .zip(&self.model.params.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.rows, t.cols).data)
            .collect();
        self.optimizer
            .update(&mut self.model.params, &flat, lr, self.train.weight_decay);
        value
    }

    pub fn run_epoch(&mut self, data: &[TrainScene]) -> Result<EpochRecord, TrainError> {
        if data.is_empty() {
            return Err(TrainError::NoScenes);
        }
        let lr = self.train.schedule().at(self.epoch);
        let mut total = 0.0;
        for idx in epoch_order(self.train.seed, self.epoch, data.len()) {
            let loss = self.step_scene(&data[idx], lr);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch: self.epoch,
                    scene: data[idx].name.clone(),
                });
            }
            total += loss;
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            lr,
            loss: total / data.len() as f64,
        };
        self.epoch += 1;
        Ok(rec)
    }

    /// Trains until `self.train.epochs` epochs are complete. `on_epoch` runs
    /// after every epoch (checkpointing, logging).
    pub fn train<F>(&mut self, data: &[TrainScene], mut on_epoch: F) -> Result<Vec<EpochRecord>, TrainError>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<(), TrainError>,
    {
        for scene in data {
            scene
                .targets
                .check_dims(self.model.config.d_obj, self.model.config.d_rel)
                .map_err(|reason| TrainError::Targets {
                    scene: scene.name.clone(),
                    reason,
                })?;
        }
        let mut history = Vec::new();
        while self.epoch < self.train.epochs {
            let rec = self.run_epoch(data)?;
            log::debug!("epoch {} lr {:.3e} loss {:.6}", rec.epoch, rec.lr, rec.loss);
            on_epoch(self, &rec)?;
            history.push(rec);
        }
        Ok(history)
    }

    /// Mean loss over `data` with the current parameters.
    pub fn evaluate(&self, data: &[TrainScene]) -> f64 {
        let total: f64 = data
            .iter()
            .map(|s| {
                let (n, e) = self.model.predict(&s.inputs);
                distill_loss_value(&n, &e, &s.targets)
            })
            .sum();
        total / data.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tensor::Mat;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_obj: 3,
            d_rel: 3,
            feature_dim: 4,
            hidden_dim: 5,
            encoder_widths: vec![4],
            gnn_layers: 1,
            node_head_layers: 2,
            edge_blocks: 1,
            edge_tokens: 2,
            attention_dim: 4,
            position_dim: 2,
            node_points: 8,
            edge_points: 8,
            linear: false,
        }
    }

    fn scene(shift: f64) -> TrainScene {
        let node_points = Mat::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.7 + shift).sin()).collect());
        let edge_points = Mat::from_vec(4, 4, (0..16).map(|i| (i as f64 * 0.3 + shift).cos()).collect());
        TrainScene {
            name: format!("s{shift}"),
            inputs: SceneInputs {
                nodes: vec![0, 1],
                edges: vec![(0, 1), (1, 0)],
                node_points,
                node_offsets: vec![0, 2, 4],
                edge_points,
                edge_offsets: vec![0, 2, 4],
            },
            targets: SceneTargets {
                node: Mat::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                node_present: vec![true, true],
                edge: Mat::from_vec(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
                edge_present: vec![true, false],
            },
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut st = TrainState::new(tiny(), cfg);
        let before = st.model.params.clone();
        let hist = st.train(&[scene(0.0), scene(1.0)], |_, _| Ok(())).unwrap();
        assert_eq!(st.model.params, before);
        assert_eq!(hist[0].loss, hist[2].loss);
    }

    #[test]
    fn loss_decreases_and_resume_is_exact() {
        let data = [scene(0.0), scene(1.0)];
        let cfg = TrainConfig {
            lr: 1e-2,
            epochs: 20,
            cycle_epochs: 20,
            ..TrainConfig::default()
        };
        let mut full = TrainState::new(tiny(), cfg.clone());
        let hist = full.train(&data, |_, _| Ok(())).unwrap();
        assert!(hist.last().unwrap().loss < hist[0].loss);

        let mut half = TrainState::new(
            tiny(),
            TrainConfig {
                epochs: 10,
                ..cfg.clone()
            },
        );
        half.train(&data, |_, _| Ok(())).unwrap();
        let bytes = half.checkpoint().to_bytes();
        let mut resumed = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.train.epochs = 20;
        resumed.train(&data, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.model.params, full.model.params);
    }

    #[test]
    fn order_depends_on_epoch_only() {
        assert_eq!(epoch_order(3, 5, 10), epoch_order(3, 5, 10));
        let mut o = epoch_order(3, 5, 10);
        o.sort();
        assert_eq!(o, (0..10).collect::<Vec<_>>());
    }
}
