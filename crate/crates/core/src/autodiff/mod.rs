//! Reverse-mode differentiation, parameters and optimizers.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{check_store_gradients, finite_diff_check, GradCheck};
pub use optim::{cosine_schedule, sgd_step, AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamInit, ParamStore, Session};
pub use tape::{ConvGeom, Tape, Var};
