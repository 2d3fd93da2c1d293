//! Two-stage training, fine-tuning and DDIM sampling.

mod config;
mod data;
mod optim;
mod run;
mod sample;
mod step;

pub use config::{ModelSpec, TrainConfig, STAGE1_LEARNING_RATE, STAGE2_LEARNING_RATE};
pub(crate) use data::frame;
pub use data::{appearance_embedder, BatchSampler, LatentCodec, NoObserver, PreparedSample, SampleInfo, TrainObserver};
pub use optim::{Adam, AdamConfig};
pub use run::{
    finetune, run_training, train_stage1, train_stage2, train_stage2_observed, RunRecord, StepRecord, TrainOutput,
    MOVING_AVERAGE_WINDOW,
};
pub use sample::{
    initial_noise, inputs_from_video, sample, sample_latent, sample_with, ModelPredictor, OraclePredictor, SampleInputs,
    VelocityPredictor, DEFAULT_SAMPLE_STEPS,
};
pub use step::{training_step, SampleTrace, StepOutput};
