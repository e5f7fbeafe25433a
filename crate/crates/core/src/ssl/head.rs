use rand::Rng;

use super::config::DinoConfig;
use crate::autodiff::{ParamId, ParamInit, Session, Var};
use crate::error::Result;
use crate::model::nn::Linear;
use crate::tensor::Scalar;

/// Projection head: three-layer GELU MLP to a bottleneck, L2 normalization,
/// then cosine similarity against unit-norm prototypes.
#[derive(Clone, Debug)]
pub struct DinoHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    /// `[out_dim, bottleneck]`, one prototype per row.
    pub prototypes: ParamId,
}

impl DinoHead {
    pub fn init<T: Scalar, R: Rng>(init: &mut ParamInit<'_, T, R>, in_dim: usize, config: &DinoConfig) -> Self {
        // Fan-in scaling keeps the bottleneck well away from zero norm, where
        // the normalization is steep.
        let fc = |init: &mut ParamInit<'_, T, R>, name: &str, i: usize, o: usize| {
            Linear::init_with_std(init, name, i, o, true, (1.0 / i as f64).sqrt())
        };
        init.scoped("head", |init| Self {
            fc1: fc(init, "fc1", in_dim, config.hidden_dim),
            fc2: fc(init, "fc2", config.hidden_dim, config.hidden_dim),
            fc3: fc(init, "fc3", config.hidden_dim, config.bottleneck_dim),
            prototypes: init.trunc_normal("prototypes", &[config.out_dim, config.bottleneck_dim], 0.02),
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(sess, x)?;
        let h = sess.tape.gelu(h);
        let h = self.fc2.forward(sess, h)?;
        let h = sess.tape.gelu(h);
        let h = self.fc3.forward(sess, h)?;
        let h = sess.tape.l2_normalize_rows(h)?;
        let p = sess.p(self.prototypes);
        let p = sess.tape.l2_normalize_rows(p)?;
        let pt = sess.tape.transpose(p)?;
        sess.tape.matmul(h, pt)
    }
}
