//! Dataset synthesis, the two-stage trainer, optimisation and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use dataset::{build_dataset, build_samples, SamplePair};
pub use pipeline::{run_training, Stage, TrainReport};
pub use trainer::{Stage1Data, Stage2Data, Trainer};
