//! Staged training: plan, schedule, steps, checkpoints and the run loop.

mod checkpoint;
mod config;
mod plan;
mod run;
mod schedule;
mod step;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_path, ensure_generator_spec, latest_checkpoint, load_checkpoint,
    save_checkpoint, weight_checksums, RunInfo, TrainState,
};
pub use config::{DataConfig, LossConfig, RunConfig};
pub use plan::{make_stage_plan, PlanMode, Stage, StagePlan, STANDARD_EPOCHS};
pub use run::{
    batch_for_epoch, read_log, run_training, LogRow, RunOptions, RunOutcome, RunPaths, CSV_HEADER,
};
pub use schedule::{lr_at_epoch, lr_for, DecayScope, OptimizerConfig};
pub use step::{
    generator_grads, generator_objective, train_step_discriminator, train_step_generator, Batch,
    GeneratorGrads, GeneratorStep, Objective, ObjectiveEnv,
};
