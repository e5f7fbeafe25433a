use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::ViewTransform;
use super::config::DinoConfig;
use super::head::DinoHead;
use super::loss::{dino_loss_on_tape, teacher_targets};
use crate::autodiff::{cosine_schedule, AdamW, AdamWConfig, Grads, ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::io::checkpoint::{extract_prefixed, insert_prefixed, Checkpoint, CheckpointError, RngState};
use crate::model::{check_layout, Arch, Backbone, EncoderConfig};
use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};

// Stream tags for `crate::rng::stream`.
const INIT: u64 = 0;
const BATCH: u64 = 1;
const AUGMENT: u64 = 2;

/// Backbone plus projection head, laid out in one store as `backbone.*`
/// followed by `head.*`.
#[derive(Clone, Debug)]
pub struct DinoModel {
    pub backbone: Backbone,
    pub head: DinoHead,
}

impl DinoModel {
    pub fn init<T: Scalar>(arch: Arch, encoder: &EncoderConfig, dino: &DinoConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, &[INIT]);
        let mut init = ParamInit::new(&mut store, &mut rng);
        let backbone = init.scoped("backbone", |init| Backbone::init(arch, encoder, init))?;
        let head = DinoHead::init(&mut init, backbone.unit_dim(), dino);
        Ok((Self { backbone, head }, store))
    }

    /// Prototype logits `[1, K]` of one training unit.
    pub fn logits<T: Scalar>(&self, sess: &mut Session<'_, T>, unit: &MultiChannelImage) -> Result<Var> {
        let e = self.backbone.forward_unit(sess, unit)?;
        self.head.forward(sess, e)
    }
}

/// `t <- m t + (1 - m) s`, computed as `t + (1 - m)(s - t)`.
pub fn ema_update<T: Scalar>(teacher: &mut ParamStore<T>, student: &ParamStore<T>, momentum: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::invalid(format!(
            "teacher has {} tensors, student {}",
            teacher.len(),
            student.len()
        )));
    }
    for (t, s) in teacher.entries().iter().zip(student.entries()) {
        if t.value.shape() != s.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ema_update",
                left: t.value.shape().to_vec(),
                right: s.value.shape().to_vec(),
            });
        }
    }
    if momentum == 1.0 {
        return Ok(());
    }
    let rate = T::lit(1.0 - momentum);
    for i in 0..teacher.len() {
        let id = crate::autodiff::ParamId(i);
        let s = student.shared(id).clone();
        if momentum == 0.0 {
            teacher.set(id, (*s).clone())?;
            continue;
        }
        for (t, &sv) in teacher.get_mut(id).data_mut().iter_mut().zip(s.data()) {
            *t += rate * (sv - *t);
        }
    }
    Ok(())
}

/// The units the trainer samples: whole images, or for the per-channel
/// baseline every channel as its own image.
pub fn training_units(arch: Arch, images: &[MultiChannelImage]) -> Result<Vec<MultiChannelImage>> {
    match arch {
        Arch::OneChannel => {
            let mut out = Vec::new();
            for img in images {
                for c in 0..img.channels() {
                    out.push(img.select_channels(&[c])?);
                }
            }
            Ok(out)
        }
        _ => Ok(images.to_vec()),
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub log: StepLog,
    pub teacher_momentum: f64,
    /// Largest gradient magnitude that reached any teacher parameter.
    pub teacher_grad_max_abs: f64,
    pub center_max_abs: f64,
}

/// Everything needed to rebuild a trainer besides its tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub arch: Arch,
    pub encoder: EncoderConfig,
    pub dino: DinoConfig,
    pub total_steps: u64,
}

pub struct DinoTrainer {
    pub spec: TrainerSpec,
    pub model: DinoModel,
    pub student: ParamStore<f32>,
    pub teacher: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub center: Vec<f32>,
    pub step: u64,
}

impl DinoTrainer {
    /// Fresh trainer whose schedules span `units` training units.
    pub fn new(arch: Arch, encoder: EncoderConfig, dino: DinoConfig, units: usize) -> Result<Self> {
        let total_steps = dino.total_steps(units);
        Self::from_spec(TrainerSpec {
            arch,
            encoder,
            dino,
            total_steps,
        })
    }

    pub fn from_spec(spec: TrainerSpec) -> Result<Self> {
        spec.encoder.validate()?;
        spec.dino.validate()?;
        let (model, student) = DinoModel::init::<f32>(spec.arch, &spec.encoder, &spec.dino, spec.dino.seed)?;
        let teacher = student.clone();
        let optimizer = AdamW::new(
            AdamWConfig {
                weight_decay: spec.dino.weight_decay,
                ..AdamWConfig::default()
            },
            &student,
        );
        let center = vec![0.0; spec.dino.out_dim];
        Ok(Self {
            spec,
            model,
            student,
            teacher,
            optimizer,
            center,
            step: 0,
        })
    }

    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let d = &self.spec.dino;
        cosine_schedule(step, self.spec.total_steps, d.base_lr_for(self.spec.arch), d.min_lr)
    }

    pub fn teacher_momentum_at(&self, step: u64) -> f64 {
        let d = &self.spec.dino;
        cosine_schedule(step, self.spec.total_steps, d.teacher_momentum, d.teacher_momentum_final)
    }

    /// Unit indices of the batch at `step`: consecutive slices of a per-epoch
    /// permutation.
    pub fn batch_indices(&self, step: u64, units: usize) -> Vec<usize> {
        let bs = self.spec.dino.batch_size;
        let per_epoch = units.div_ceil(bs).max(1) as u64;
        let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
        let mut perm: Vec<usize> = (0..units).collect();
        perm.shuffle(&mut stream(self.spec.dino.seed, &[BATCH, epoch]));
        perm[(k * bs).min(units)..((k + 1) * bs).min(units)].to_vec()
    }

    /// Two views per unit, student gradients averaged over the batch, an
    /// AdamW step, then the teacher EMA and center updates. `batch` pairs each
    /// unit with its dataset index, which seeds its augmentation.
    pub fn train_step(&mut self, batch: &[(usize, &MultiChannelImage)]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let d = self.spec.dino.clone();
        let step = self.step;
        let lr = self.lr_at(step);
        let momentum = self.teacher_momentum_at(step);
        let mut grads = Grads::zeros_like(&self.student);
        let inv_b = 1.0 / batch.len() as f32;
        let mut loss_sum = 0.0f64;
        let mut teacher_mean = vec![0.0f64; d.out_dim];
        let mut teacher_grad_max = 0.0f64;

        let mut teacher_out = Vec::with_capacity(batch.len());
        for &(index, unit) in batch {
            let views: Vec<MultiChannelImage> = (0..2u64)
                .map(|v| {
                    let mut rng = stream(d.seed, &[AUGMENT, step, index as u64, v]);
                    ViewTransform::sample(&d.augmentation, &mut rng, unit.channels(), unit.height(), unit.width())
                        .apply(unit)
                })
                .collect::<Result<_>>()?;

            // Teacher parameters are bound as constants on a gradient-enabled
            // tape, and only their output values cross into the student tape.
            let mut tsess = Session::frozen(&self.teacher);
            let mut t_logits = Vec::with_capacity(2);
            let mut t_vars = Vec::with_capacity(2);
            for view in &views {
                let t = self.model.logits(&mut tsess, view)?;
                t_logits.push(tsess.tape.value(t).clone());
                t_vars.push(t);
            }
            for t in &t_logits {
                for (acc, &v) in teacher_mean.iter_mut().zip(t.data()) {
                    *acc += v as f64;
                }
            }
            // Backpropagating the teacher's own output must reach none of its
            // parameters.
            let both = tsess.tape.concat_rows(&t_vars)?;
            let total = tsess.tape.sum(both);
            tsess.tape.backward(total)?;
            teacher_grad_max = teacher_grad_max.max(tsess.param_grads().max_abs() as f64);
            teacher_out.push((views, t_logits));
        }
        let n_views = 2.0 * batch.len() as f64;
        teacher_mean.iter_mut().for_each(|m| *m /= n_views);
        // The first batch seeds the center instead of a zero vector, so the
        // opening loss is not flattered by an uncentered teacher.
        if step == 0 {
            for (c, &m) in self.center.iter_mut().zip(&teacher_mean) {
                *c = m as f32;
            }
        }

        for (views, t_logits) in &teacher_out {
            let targets = teacher_targets(t_logits, &self.center, d.teacher_temp)?;
            let mut sess = Session::train(&self.student);
            let s_logits: Vec<Var> = views.iter().map(|v| self.model.logits(&mut sess, v)).collect::<Result<_>>()?;
            let loss = dino_loss_on_tape(&mut sess.tape, &s_logits, &targets, d.student_temp)?;
            let value = sess.tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("distillation loss at step {step}")));
            }
            sess.tape.backward(loss)?;
            loss_sum += value;
            grads.add_scaled(&sess.param_grads(), inv_b);
        }

        let grad_norm = grads.global_norm() as f64;
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {step}")));
        }
        if let Some(clip) = d.grad_clip {
            if grad_norm > clip {
                grads.scale((clip / grad_norm) as f32);
            }
        }
        self.optimizer.step(&mut self.student, &grads, lr)?;
        ema_update(&mut self.teacher, &self.student, momentum)?;
        let cm = d.center_momentum;
        for (c, &m) in self.center.iter_mut().zip(&teacher_mean) {
            *c = (cm * *c as f64 + (1.0 - cm) * m) as f32;
        }
        self.step += 1;
        Ok(StepStats {
            log: StepLog {
                step,
                lr,
                loss: loss_sum / batch.len() as f64,
                grad_norm,
            },
            teacher_momentum: momentum,
            teacher_grad_max_abs: teacher_grad_max,
            center_max_abs: self.center.iter().fold(0.0f64, |m, &c| m.max(c.abs() as f64)),
        })
    }

    /// Trains until `until` steps have been taken (capped by the schedule
    /// length), calling `on_step` after each step.
    pub fn fit(
        &mut self,
        units: &[MultiChannelImage],
        until: u64,
        mut on_step: impl FnMut(&Self, &StepStats) -> Result<()>,
    ) -> Result<Vec<StepStats>> {
        if units.is_empty() {
            return Err(Error::invalid("no training images"));
        }
        let mut out = Vec::new();
        while self.step < until.min(self.spec.total_steps) {
            let idx = self.batch_indices(self.step, units.len());
            let batch: Vec<(usize, &MultiChannelImage)> = idx.iter().map(|&i| (i, &units[i])).collect();
            let stats = self.train_step(&batch)?;
            on_step(self, &stats)?;
            out.push(stats);
        }
        Ok(out)
    }

    /// Teacher backbone weights, laid out for [`DinoTrainer::backbone`].
    pub fn encoder_store(&self) -> ParamStore<f32> {
        extract_prefixed(&self.teacher, "backbone")
    }

    pub fn backbone(&self) -> &Backbone {
        &self.model.backbone
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut params = ParamStore::new();
        insert_prefixed(&mut params, "student", &self.student);
        insert_prefixed(&mut params, "teacher", &self.teacher);
        for (tag, moments) in [("adam_m", &self.optimizer.m), ("adam_v", &self.optimizer.v)] {
            for (e, m) in self.student.entries().iter().zip(moments) {
                params.insert(format!("{tag}.{}", e.name), m.clone(), false);
            }
        }
        params.insert("center", Tensor::new(vec![self.center.len()], self.center.clone())?, false);
        Ok(Checkpoint {
            config: serde_json::to_value(&self.spec).map_err(|e| Error::invalid(e.to_string()))?,
            rng: RngState {
                seed: self.spec.dino.seed,
                counter: self.step,
            },
            step: self.step,
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: TrainerSpec = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::invalid(format!("checkpoint config: {e}")))?;
        let mut t = Self::from_spec(spec)?;
        let student = extract_prefixed(&ckpt.params, "student");
        let teacher = extract_prefixed(&ckpt.params, "teacher");
        check_layout(&t.student, &student)?;
        check_layout(&t.student, &teacher)?;
        for (tag, slot) in [("adam_m", &mut t.optimizer.m), ("adam_v", &mut t.optimizer.v)] {
            let moments = extract_prefixed(&ckpt.params, tag);
            check_layout(&t.student, &moments)?;
            *slot = moments.entries().iter().map(|e| (*e.value).clone()).collect();
        }
        let center_id = ckpt
            .params
            .id("center")
            .ok_or_else(|| CheckpointError::MissingEntry("center".into()))?;
        let center = ckpt.params.get(center_id);
        if center.shape() != [t.spec.dino.out_dim] {
            return Err(CheckpointError::EntryMismatch {
                name: "center".into(),
                expected: vec![t.spec.dino.out_dim],
                found: center.shape().to_vec(),
            }
            .into());
        }
        t.center = center.data().to_vec();
        t.student = student;
        t.teacher = teacher;
        t.step = ckpt.step;
        t.optimizer.step = ckpt.step;
        Ok(t)
    }
}
