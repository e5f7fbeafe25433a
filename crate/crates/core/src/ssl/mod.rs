//! Two-view self-distillation with an EMA teacher, sharpened and centered
//! targets, at desk scale.

pub mod augment;
pub mod config;
pub mod head;
pub mod loss;
pub mod trainer;

pub use crate::autodiff::cosine_schedule;
pub use augment::{AugmentationPolicy, ViewTransform};
pub use config::{default_base_lr, DinoConfig};
pub use head::DinoHead;
pub use loss::{dino_loss, dino_loss_on_tape, teacher_targets, view_pairs};
pub use trainer::{ema_update, training_units, DinoModel, DinoTrainer, StepLog, StepStats, TrainerSpec};
