use super::{Classifier, Layer};
use crate::error::{invalid, Result};

/// `teacher ← λ·teacher + (1−λ)·student` over every trainable parameter and
/// every batch-norm running statistic.
pub fn ema_update(teacher: &mut Classifier, student: &Classifier, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("EMA momentum {lambda} outside [0, 1]")));
    }
    if !teacher.same_structure(student) {
        return Err(invalid("teacher and student differ in structure"));
    }
    let blend = |t: &mut [f64], s: &[f64]| {
        for (t, &s) in t.iter_mut().zip(s) {
            *t = lambda * *t + (1.0 - lambda) * s;
        }
    };
    for (t, s) in teacher.layers_mut().iter_mut().zip(student.layers()) {
        match (t, s) {
            (Layer::Affine(t), Layer::Affine(s)) => {
                blend(t.weight.as_mut_slice(), s.weight.as_slice());
                blend(&mut t.bias, &s.bias);
            }
            (Layer::BatchNorm(t), Layer::BatchNorm(s)) => {
                blend(&mut t.gamma, &s.gamma);
                blend(&mut t.beta, &s.beta);
                blend(&mut t.mean, &s.mean);
                blend(&mut t.var, &s.var);
            }
            _ => {}
        }
    }
    Ok(())
}
