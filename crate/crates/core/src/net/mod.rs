//! Trainable 3D side: encoders, message passing, heads, loss and training.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use loss::SceneTargets;
pub use model::{prepare_scene, GraphModel, ModelConfig, SceneInputs};
pub use tensor::{Mat, Real};
pub use train::{TrainConfig, TrainError, TrainScene, TrainState};
