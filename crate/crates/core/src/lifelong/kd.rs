use crate::autodiff::{ParameterVector, RealArray, Tape};
use crate::ctc::ctc_loss;
use crate::error::{Error, Result};
use crate::model::{SeqModel, Utterance};

/// Distillation loss between a frozen previous model and the current one.
///
/// Returns the frame-averaged `KL[softmax(z_old/T) ‖ softmax(z_new/T)]` and
/// its gradient with respect to `logits_new`, `(q − p) / (T · frames)`.
pub fn kd_loss(logits_old: &RealArray, logits_new: &RealArray, temperature: f64) -> Result<(f64, RealArray)> {
    if logits_old.shape() != logits_new.shape() {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            lhs: logits_old.shape().to_vec(),
            rhs: logits_new.shape().to_vec(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let inv_t = 1.0 / temperature;
    let log_p = logits_old.map(|v| v * inv_t).log_softmax_rows();
    let log_q = logits_new.map(|v| v * inv_t).log_softmax_rows();
    let frames = logits_new.rows().max(1) as f64;

    let mut value = 0.0;
    let mut grad = RealArray::zeros(logits_new.shape());
    for ((g, lp), lq) in grad.data_mut().iter_mut().zip(log_p.data()).zip(log_q.data()) {
        let p = lp.exp();
        if p > 0.0 {
            value += p * (lp - lq);
        }
        *g = (lq.exp() - p) * inv_t / frames;
    }
    Ok((value.max(0.0) / frames, grad))
}

/// Per-utterance terms of the distillation objective.
#[derive(Debug, Clone)]
pub struct DistillTerms {
    pub ctc: f64,
    pub kd: f64,
    /// Gradient of `ctc + weight · kd` with respect to the parameters.
    pub grad: Vec<f64>,
}

/// CTC loss plus `weight · kd_loss(teacher, student)` on one utterance, where
/// the teacher is the same architecture evaluated at `teacher`.
pub fn distill_loss_and_grad(
    model: &SeqModel,
    theta: &ParameterVector,
    teacher: &ParameterVector,
    utt: &Utterance,
    temperature: f64,
    weight: f64,
) -> Result<DistillTerms> {
    theta.check_layout(teacher)?;
    let old = model.logits(teacher, &utt.features)?;
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, &utt.features)?;
    let ctc = ctc_loss(tape.value(logits), &utt.labels)?;
    let (kd, kd_grad) = kd_loss(&old, tape.value(logits), temperature)?;
    let mut grad = ctc.grad;
    for (g, k) in grad.data_mut().iter_mut().zip(kd_grad.data()) {
        *g += weight * k;
    }
    let head = tape.head(logits, ctc.loss + weight * kd, grad)?;
    let grads = tape.backward(head)?;
    Ok(DistillTerms {
        ctc: ctc.loss,
        kd,
        grad: theta.collect_gradient(&grads, &bound),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> RealArray {
        RealArray::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identical_logits_have_zero_divergence() {
        let z = m(&[&[0.3, -1.0, 2.0], &[0.0, 0.5, 0.5]]);
        let (v, g) = kd_loss(&z, &z, 2.0).unwrap();
        assert!(v.abs() < 1e-15);
        assert!(g.data().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn shift_invariance_per_frame() {
        let old = m(&[&[0.3, -1.0, 2.0], &[0.0, 0.5, 0.5]]);
        let new = m(&[&[1.0, 0.0, -1.0], &[0.2, 0.1, 0.9]]);
        let shifted = m(&[&[4.0, 3.0, 2.0], &[0.2, 0.1, 0.9]]);
        let a = kd_loss(&old, &new, 1.5).unwrap().0;
        let b = kd_loss(&old, &shifted, 1.5).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn two_point_hand_computation() {
        // p = softmax([0,1]), q = softmax([1,0])
        let e = std::f64::consts::E;
        let p1 = e / (1.0 + e);
        let p0 = 1.0 - p1;
        let (q0, q1) = (p1, p0);
        let expected = p0 * (p0 / q0).ln() + p1 * (p1 / q1).ln();
        let (v, _) = kd_loss(&m(&[&[0.0, 1.0]]), &m(&[&[1.0, 0.0]]), 1.0).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = RealArray::zeros(&[2, 3]);
        let b = RealArray::zeros(&[3, 3]);
        assert!(kd_loss(&a, &b, 1.0).is_err());
        assert!(kd_loss(&a, &a, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let old = m(&[&[0.3, -1.0, 2.0], &[0.0, 0.5, 0.5]]);
        let new = m(&[&[1.0, 0.0, -1.0], &[0.2, 0.1, 0.9]]);
        let t = 2.0;
        let (_, g) = kd_loss(&old, &new, t).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut plus = new.clone();
            plus.data_mut()[i] += h;
            let mut minus = new.clone();
            minus.data_mut()[i] -= h;
            let numeric = (kd_loss(&old, &plus, t).unwrap().0 - kd_loss(&old, &minus, t).unwrap().0) / (2.0 * h);
            assert!((numeric - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn distillation_objective_matches_finite_differences() {
        use crate::autodiff::finite_diff_check;
        use crate::model::ModelConfig;
        let model = SeqModel::new(ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 1,
            vocab_size: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let teacher = model.init();
        let mut theta = teacher.clone();
        for (i, v) in theta.as_mut_slice().iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 0.37).sin();
        }
        let rows: Vec<Vec<f64>> = (0..8).map(|t| (0..3).map(|d| ((t * 3 + d) as f64 * 0.7).cos()).collect()).collect();
        let utt = Utterance {
            id: "u".into(),
            features: RealArray::from_rows(&rows).unwrap(),
            labels: vec![1, 2],
            source_task: 0,
        };
        let err = finite_diff_check(
            |p| {
                let t = distill_loss_and_grad(&model, p, &teacher, &utt, 2.0, 0.7)?;
                Ok((t.ctc + 0.7 * t.kd, t.grad))
            },
            &theta,
            1e-6,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_weight_reduces_to_ctc() {
        use crate::model::ModelConfig;
        let model = SeqModel::new(ModelConfig {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            vocab_size: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let theta = model.init();
        let mut teacher = theta.clone();
        teacher.as_mut_slice()[0] += 1.0;
        let utt = Utterance {
            id: "u".into(),
            features: RealArray::filled(&[6, 2], 0.3),
            labels: vec![1],
            source_task: 0,
        };
        let t = distill_loss_and_grad(&model, &theta, &teacher, &utt, 2.0, 0.0).unwrap();
        let (loss, grad) = model.ctc_loss_and_grad(&theta, &utt).unwrap();
        assert_eq!(t.ctc, loss);
        assert_eq!(t.grad, grad);
    }
}
