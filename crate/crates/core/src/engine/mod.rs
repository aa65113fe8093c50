//! Training and sampling loops over fields.

mod check;
mod sample;
mod train;

pub use check::network_gradcheck;
pub use sample::{
    average_pool_2d, sample_field, sample_field_observed, sample_resolution_free, sample_seed,
    select_context_subset, NetworkPredictor, NoisePredictor, SamplerConfig, StepView,
};
pub use train::{
    ddpm_loss, ddpm_loss_var, make_batch, step_rng, train_step, ContextSource, PairConfig,
    StepRecord, TrainBatch, TrainConfig, TrainItem, Trainer,
};
