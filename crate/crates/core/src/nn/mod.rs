//! Sequence classifiers with hand-derived gradients, Adam training and a
//! binary model container.

mod container;
mod layers;
mod model;
mod optim;
mod spec;
mod tensor;
mod train;

pub use container::{from_bytes, load_model, save_model, to_bytes, ContainerManifest, FORMAT_VERSION, MAGIC};
pub use layers::Layer;
pub use model::{argmax, build_model, loss, parameter_count, Gradients, Model, PipelineManifest, LOSS_CLIP};
pub use optim::{adam_step, reduce_lr_on_plateau, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
pub use spec::*;
pub use tensor::{Real, Tensor};
pub use train::{evaluate, train, EpochRecord, Evaluation, TrainConfig, TrainHistory};
