//! Synthetic shape-segmentation data and segmentation metrics.

mod dataset;
mod dump;
mod metrics;

pub use dataset::{
    class_color, generate_dataset, stack_batch, Geometry, PlacedShape, SynthSample, SynthSpec,
};
pub use dump::{decode_split, encode_split, read_split, write_split, DumpedSplit, MAGIC};
pub use metrics::{argmax_classes, ConfusionMatrix};
