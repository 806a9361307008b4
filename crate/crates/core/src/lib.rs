pub mod azimuth;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod latent;
pub mod model;
pub mod nn;
pub mod optim;
pub mod render;
pub mod tensor;
pub mod train;

pub use azimuth::AzimuthMode;
pub use error::{Error, Result};
pub use latent::{GaussianLatent, NoiseSource};
pub use model::{ArchPreset, Model, ModelConfig, Objective};
pub use optim::{Adam, AdamConfig, DualOptimizer, Phase};
pub use render::{Pose, Sampling, VoxelGrid, GRID};
pub use tensor::{no_grad, Scalar, Tensor};
pub use train::{run_training, TrainOptions, Trainer};
