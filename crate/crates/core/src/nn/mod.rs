//! Layers, the small segmentation CNN, SGD and checkpoint I/O.

mod checkpoint;
mod cnn;
mod layers;
mod optim;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, ParamEntry, CHECKPOINT_FORMAT_VERSION,
};
pub use cnn::{inherit_parameters, pixel_cross_entropy, CnnOutput, InheritReport, SmallCnn};
pub use layers::{Conv2d, Module, Param};
pub use optim::{sgd_step, SgdConfig};
