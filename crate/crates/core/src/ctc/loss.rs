use crate::autodiff::{log_add, RealArray};
use crate::error::{Error, Result};

/// Index reserved for the CTC blank.
pub const BLANK: u32 = 0;

/// Forward and backward variables of the CTC lattice, in log space.
///
/// `alpha[t, s]` includes the emission at frame `t`; `beta[t, s]` covers
/// frames `t+1..` only, so `alpha[t, s] + beta[t, s]` is the log mass of all
/// alignments passing through state `s` at frame `t`.
#[derive(Debug, Clone)]
pub struct LogProbLattice {
    pub alpha: RealArray,
    pub beta: RealArray,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct CtcLoss {
    /// `−log P(labels | logits)`.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits, same shape.
    pub grad: RealArray,
}

/// Fewest frames that can emit `labels`: one per label plus one blank between
/// each pair of equal neighbours.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate(log_probs: &RealArray, labels: &[u32]) -> Result<()> {
    let classes = log_probs.cols();
    if log_probs.shape().len() != 2 || classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "logits must be (frames, vocab+1) with at least one non-blank class, got {:?}",
            log_probs.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l as usize >= classes) {
        return Err(Error::OutOfVocabulary(bad));
    }
    let frames = log_probs.rows();
    let required = min_frames(labels);
    if frames < required {
        return Err(Error::InfeasibleAlignment {
            frames,
            labels: labels.len(),
            required,
        });
    }
    Ok(())
}

fn extended(labels: &[u32]) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Runs the forward-backward recursions over frame log-probabilities.
pub fn ctc_lattice(log_probs: &RealArray, labels: &[u32]) -> Result<LogProbLattice> {
    validate(log_probs, labels)?;
    let ext = extended(labels);
    let states = ext.len();
    let frames = log_probs.rows();
    let neg_inf = f64::NEG_INFINITY;
    let skip_allowed = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![neg_inf; frames * states];
    alpha[0] = log_probs.get(0, ext[0] as usize);
    if states > 1 {
        alpha[1] = log_probs.get(0, ext[1] as usize);
    }
    for t in 1..frames {
        for s in 0..states {
            let prev = &alpha[(t - 1) * states..t * states];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip_allowed(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * states + s] = if acc == neg_inf {
                neg_inf
            } else {
                acc + log_probs.get(t, ext[s] as usize)
            };
        }
    }

    let mut beta = vec![neg_inf; frames * states];
    let last = (frames - 1) * states;
    beta[last + states - 1] = 0.0;
    if states > 1 {
        beta[last + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = (t + 1) * states;
            let emit = |s2: usize| beta[next + s2] + log_probs.get(t + 1, ext[s2] as usize);
            let mut acc = emit(s);
            if s + 1 < states {
                acc = log_add(acc, emit(s + 1));
            }
            if s + 2 < states && skip_allowed(s + 2) {
                acc = log_add(acc, emit(s + 2));
            }
            beta[t * states + s] = acc;
        }
    }

    let mut log_likelihood = alpha[last + states - 1];
    if states > 1 {
        log_likelihood = log_add(log_likelihood, alpha[last + states - 2]);
    }
    if log_likelihood == neg_inf {
        return Err(Error::InfeasibleAlignment {
            frames,
            labels: labels.len(),
            required: min_frames(labels),
        });
    }
    Ok(LogProbLattice {
        alpha: RealArray::new(vec![frames, states], alpha)?,
        beta: RealArray::new(vec![frames, states], beta)?,
        log_likelihood,
    })
}

/// CTC negative log-likelihood of `labels` under unnormalized `logits`
/// (frames × (vocab+1), blank at column 0), with its gradient.
pub fn ctc_loss(logits: &RealArray, labels: &[u32]) -> Result<CtcLoss> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("ctc logits".into()));
    }
    let log_probs = logits.log_softmax_rows();
    let lattice = ctc_lattice(&log_probs, labels)?;
    let ext = extended(labels);
    let classes = logits.cols();
    let total = lattice.log_likelihood;

    let mut grad = log_probs.map(f64::exp);
    for t in 0..logits.rows() {
        // Occupancy mass per class at frame t.
        let mut occupancy = vec![f64::NEG_INFINITY; classes];
        for (s, &sym) in ext.iter().enumerate() {
            let g = lattice.alpha.get(t, s) + lattice.beta.get(t, s);
            occupancy[sym as usize] = log_add(occupancy[sym as usize], g);
        }
        let row = &mut grad.data_mut()[t * classes..(t + 1) * classes];
        for (c, occ) in occupancy.iter().enumerate() {
            if *occ > f64::NEG_INFINITY {
                row[c] -= (occ - total).exp();
            }
        }
    }
    Ok(CtcLoss { loss: -total, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> RealArray {
        RealArray::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let z = logits(&[&[0.3, 1.1, -0.4]]);
        let out = ctc_loss(&z, &[1]).unwrap();
        let expected = -z.log_softmax_rows().get(0, 1);
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        let z = logits(&[&[0.2, -0.5, 0.9], &[1.0, 0.1, -0.3]]);
        let p = z.softmax_rows();
        let (b1, a1) = (p.get(0, 0), p.get(0, 1));
        let (b2, a2) = (p.get(1, 0), p.get(1, 1));
        let expected = -(a1 * a2 + a1 * b2 + b1 * a2).ln();
        let out = ctc_loss(&z, &[1]).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn repeated_labels_need_a_separator() {
        let z = RealArray::zeros(&[2, 3]);
        match ctc_loss(&z, &[1, 1]) {
            Err(Error::InfeasibleAlignment { frames: 2, required: 3, .. }) => {}
            other => panic!("expected infeasible alignment, got {other:?}"),
        }
        assert!(ctc_loss(&RealArray::zeros(&[3, 3]), &[1, 1]).is_ok());
    }

    #[test]
    fn blank_or_out_of_range_labels_are_rejected() {
        let z = RealArray::zeros(&[3, 3]);
        assert!(matches!(ctc_loss(&z, &[0]), Err(Error::OutOfVocabulary(0))));
        assert!(matches!(ctc_loss(&z, &[3]), Err(Error::OutOfVocabulary(3))));
    }

    #[test]
    fn empty_label_sequence_is_all_blank() {
        let z = logits(&[&[0.5, 0.0], &[-0.2, 0.3]]);
        let p = z.softmax_rows();
        let out = ctc_loss(&z, &[]).unwrap();
        assert!((out.loss + (p.get(0, 0) * p.get(1, 0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn min_frames_counts_repeats() {
        assert_eq!(min_frames(&[1, 2, 3]), 3);
        assert_eq!(min_frames(&[1, 1, 2, 2]), 6);
        assert_eq!(min_frames(&[]), 0);
    }
}
