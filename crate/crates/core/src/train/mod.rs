//! Labels, augmentation, optimization and checkpoints.

mod augment;
mod checkpoint;
mod gradcheck;
mod labels;
mod optim;
mod trainer;

pub use augment::{augment, flip_horizontal, translate_vertical, AugmentConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainingSummary, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{check_parameter_groups, GradcheckConfig, GroupCheck, PARAMETER_GROUPS};
pub use labels::{biased_label, biased_label_with_shift, criterion_se, BENCHMARK_SE_D, LABEL_SHIFT_D};
pub use optim::{Adam, AdamConfig};
pub use trainer::{DeltaSampling, LabeledFrame, StepOutcome, TrainConfig, TrainReport, Trainer};
