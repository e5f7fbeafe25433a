use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{softmax_lastdim, Scalar, Tensor};

/// Student/teacher view pairs: every ordered pair of distinct views, or the
/// single view against itself.
pub fn view_pairs(n: usize) -> Vec<(usize, usize)> {
    if n == 1 {
        return vec![(0, 0)];
    }
    let mut pairs = Vec::new();
    for t in 0..n {
        for s in 0..n {
            if s != t {
                pairs.push((t, s));
            }
        }
    }
    pairs
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Self-distillation cross-entropy, averaged over [`view_pairs`]:
/// `-Σ softmax((t - center) / τ_t) · log_softmax(s / τ_s)`.
pub fn dino_loss(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    center: &[f64],
    student_temp: f64,
    teacher_temp: f64,
) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::invalid(format!(
            "{} student views vs {} teacher views",
            student.len(),
            teacher.len()
        )));
    }
    let k = center.len();
    for v in student.iter().chain(teacher) {
        if v.len() != k {
            return Err(Error::WidthMismatch { left: v.len(), right: k });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("distillation logits".into()));
        }
    }
    let pairs = view_pairs(student.len());
    let mut total = 0.0;
    for &(t, s) in &pairs {
        let shifted: Vec<f64> = teacher[t].iter().zip(center).map(|(a, c)| (a - c) / teacher_temp).collect();
        let p = log_softmax(&shifted);
        let scaled: Vec<f64> = student[s].iter().map(|a| a / student_temp).collect();
        let q = log_softmax(&scaled);
        total -= p.iter().zip(&q).map(|(lp, lq)| lp.exp() * lq).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Sharpened, centered teacher distributions, one `[1, K]` row per view.
pub fn teacher_targets<T: Scalar>(teacher: &[Tensor<T>], center: &[T], teacher_temp: f64) -> Result<Vec<Tensor<T>>> {
    teacher
        .iter()
        .map(|t| {
            if !t.all_finite() {
                return Err(Error::NonFinite("teacher logits".into()));
            }
            let inv = T::lit(1.0 / teacher_temp);
            let shifted: Vec<T> = t.data().iter().zip(center).map(|(&a, &c)| (a - c) * inv).collect();
            softmax_lastdim(&Tensor::new(t.shape().to_vec(), shifted)?)
        })
        .collect()
}

/// The same loss on a tape: teacher targets enter as constants, so no
/// gradient reaches the teacher.
pub fn dino_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, student: &[Var], targets: &[Tensor<T>], student_temp: f64) -> Result<Var> {
    if student.len() != targets.len() || student.is_empty() {
        return Err(Error::invalid("student and teacher view counts differ"));
    }
    let logp: Vec<Var> = student
        .iter()
        .map(|&s| {
            let scaled = tape.scale(s, T::lit(1.0 / student_temp));
            tape.log_softmax(scaled)
        })
        .collect::<Result<_>>()?;
    let targets: Vec<Var> = targets.iter().map(|t| tape.constant(t.clone())).collect();
    let pairs = view_pairs(student.len());
    let mut acc: Option<Var> = None;
    for &(t, s) in &pairs {
        let prod = tape.mul(targets[t], logp[s])?;
        let ce = tape.sum(prod);
        acc = Some(match acc {
            None => ce,
            Some(a) => tape.add(a, ce)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), T::lit(-1.0 / pairs.len() as f64)))
}
