use serde::{Deserialize, Serialize};

use super::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::model::Arch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DinoConfig {
    /// Prototype count (width of the head output).
    pub out_dim: usize,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub student_temp: f64,
    pub teacher_temp: f64,
    pub center_momentum: f64,
    /// Teacher EMA momentum at step 0; follows a cosine to `teacher_momentum_final`.
    pub teacher_momentum: f64,
    pub teacher_momentum_final: f64,
    pub epochs: usize,
    /// Caps the run length; when set it also defines the schedule length.
    pub max_steps: Option<u64>,
    /// `None` picks the per-architecture default ([`default_base_lr`]).
    pub base_lr: Option<f64>,
    pub min_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub augmentation: AugmentationPolicy,
}

impl Default for DinoConfig {
    fn default() -> Self {
        Self {
            out_dim: 256,
            hidden_dim: 128,
            bottleneck_dim: 64,
            student_temp: 0.1,
            teacher_temp: 0.04,
            center_momentum: 0.9,
            teacher_momentum: 0.996,
            teacher_momentum_final: 1.0,
            epochs: 10,
            max_steps: None,
            base_lr: None,
            min_lr: 1e-6,
            batch_size: 32,
            weight_decay: 0.04,
            grad_clip: Some(3.0),
            seed: 0,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

/// 1e-4 for the channel-adaptive and inter-channel encoders, 5e-3 for the
/// per-channel baseline.
pub fn default_base_lr(arch: Arch) -> f64 {
    match arch {
        Arch::OneChannel => 5e-3,
        Arch::Chada | Arch::Interchannel => 1e-4,
    }
}

impl DinoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.student_temp > 0.0 && self.teacher_temp > 0.0) {
            return fail("temperatures must be positive");
        }
        for (name, m) in [
            ("center_momentum", self.center_momentum),
            ("teacher_momentum", self.teacher_momentum),
            ("teacher_momentum_final", self.teacher_momentum_final),
        ] {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::invalid(format!("{name} {m} outside [0, 1]")));
            }
        }
        if self.out_dim == 0 || self.hidden_dim == 0 || self.bottleneck_dim == 0 {
            return fail("head widths must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        let nonneg = |v: f64| v.partial_cmp(&0.0).is_some_and(|o| o.is_ge());
        if self.base_lr.is_some_and(|lr| !nonneg(lr)) || !nonneg(self.min_lr) {
            return fail("learning rates must be non-negative");
        }
        self.augmentation.validate()
    }

    pub fn base_lr_for(&self, arch: Arch) -> f64 {
        self.base_lr.unwrap_or_else(|| default_base_lr(arch))
    }

    /// Schedule length for a dataset of `units` training units.
    pub fn total_steps(&self, units: usize) -> u64 {
        self.max_steps
            .unwrap_or_else(|| (self.epochs * units.div_ceil(self.batch_size)) as u64)
    }
}
