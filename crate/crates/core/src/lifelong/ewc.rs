use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::model::SeqModel;
use crate::autodiff::ParameterVector;

/// Per-parameter nonnegative importance weights, laid out like the flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap(Vec<f64>);

impl ImportanceMap {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Fails if any weight is negative or non-finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("importance weights must be finite and ≥ 0, got {bad}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LayoutMismatch(format!("{what}: expected {expected} entries, got {got}")));
    }
    Ok(())
}

/// Diagonal empirical Fisher: the coordinatewise mean of squared per-utterance
/// CTC gradients over `num_samples` utterances drawn without replacement
/// (the whole dataset when `num_samples >= len`). Utterances that cannot be
/// aligned are skipped.
pub fn fisher_diagonal(
    model: &SeqModel,
    theta: &ParameterVector,
    dataset: &TaskDataset,
    num_samples: usize,
    seed: u64,
) -> Result<ImportanceMap> {
    if dataset.is_empty() {
        return Err(Error::Empty("fisher dataset"));
    }
    if num_samples == 0 {
        return Err(Error::InvalidArgument("fisher needs at least one sample".into()));
    }
    let picked: Vec<usize> = if num_samples >= dataset.len() {
        (0..dataset.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, dataset.len(), num_samples).into_vec();
        idx.sort_unstable();
        idx
    };

    use rayon::prelude::*;
    let grads: Vec<Result<(f64, Vec<f64>)>> = picked
        .par_iter()
        .map(|&i| model.ctc_loss_and_grad(theta, &dataset.utterances[i]))
        .collect();
    let mut fisher = vec![0.0; theta.total_len()];
    let mut used = 0usize;
    for g in grads {
        match g {
            Ok((_, g)) => {
                for (f, v) in fisher.iter_mut().zip(&g) {
                    *f += v * v;
                }
                used += 1;
            }
            Err(Error::InfeasibleAlignment { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Empty("alignable fisher sample"));
    }
    for f in &mut fisher {
        *f /= used as f64;
    }
    ImportanceMap::new(fisher)
}

/// Quadratic consolidation penalty `(λ/2) Σ Ωᵢ (θᵢ − θ*ᵢ)²` and its gradient
/// `λ Ω ⊙ (θ − θ*)`.
pub fn ewc_penalty(theta: &[f64], anchor: &[f64], omega: &ImportanceMap, lambda: f64) -> Result<(f64, Vec<f64>)> {
    check_len("anchor", theta.len(), anchor.len())?;
    check_len("importance", theta.len(), omega.len())?;
    let mut value = 0.0;
    let grad = theta
        .iter()
        .zip(anchor)
        .zip(omega.as_slice())
        .map(|((t, a), w)| {
            let d = t - a;
            value += w * d * d;
            lambda * w * d
        })
        .collect();
    Ok((0.5 * lambda * value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EwcMode {
    /// One anchor per finished task; penalties are summed.
    Separate,
    /// A single anchor whose importance decays: `Ω ← decay·Ω + Ω_new`.
    Online { decay: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub omega: ImportanceMap,
    pub theta_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    mode: EwcMode,
    anchors: Vec<Anchor>,
}

impl EwcState {
    pub fn new(mode: EwcMode) -> Result<Self> {
        if let EwcMode::Online { decay } = mode {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::InvalidConfig(format!("online decay must be in (0, 1], got {decay}")));
            }
        }
        Ok(Self {
            mode,
            anchors: Vec::new(),
        })
    }

    pub fn mode(&self) -> EwcMode {
        self.mode
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Folds a finished task's importance and optimum into the state.
    pub fn consolidate(&mut self, omega_new: ImportanceMap, theta_star_new: Vec<f64>) -> Result<()> {
        check_len("anchor", omega_new.len(), theta_star_new.len())?;
        if let Some(first) = self.anchors.first() {
            check_len("importance", first.omega.len(), omega_new.len())?;
        }
        match self.mode {
            EwcMode::Separate => self.anchors.push(Anchor {
                omega: omega_new,
                theta_star: theta_star_new,
            }),
            EwcMode::Online { decay } => {
                let omega = match self.anchors.pop() {
                    Some(prev) => ImportanceMap::new(
                        prev.omega
                            .as_slice()
                            .iter()
                            .zip(omega_new.as_slice())
                            .map(|(p, n)| decay * p + n)
                            .collect(),
                    )?,
                    None => omega_new,
                };
                self.anchors.push(Anchor {
                    omega,
                    theta_star: theta_star_new,
                });
            }
        }
        Ok(())
    }

    /// Sum of [`ewc_penalty`] over all anchors.
    pub fn penalty(&self, theta: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for a in &self.anchors {
            let (v, g) = ewc_penalty(theta, &a.theta_star, &a.omega, lambda)?;
            value += v;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, RealArray};
    use crate::model::{ModelConfig, Utterance};

    fn imp(v: &[f64]) -> ImportanceMap {
        ImportanceMap::new(v.to_vec()).unwrap()
    }

    #[test]
    fn no_drift_no_penalty() {
        let (v, g) = ewc_penalty(&[1.0, 2.0], &[1.0, 2.0], &imp(&[3.0, 4.0]), 5.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_lambda_no_penalty() {
        let (v, _) = ewc_penalty(&[10.0], &[-3.0], &imp(&[2.0]), 0.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_parameter_arithmetic() {
        let (v, g) = ewc_penalty(&[0.5], &[0.0], &imp(&[1.0]), 2.0).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!((g[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layout_mismatch() {
        assert!(ewc_penalty(&[0.5, 1.0], &[0.0], &imp(&[1.0, 1.0]), 2.0).is_err());
    }

    #[test]
    fn negative_importance_is_rejected() {
        assert!(ImportanceMap::new(vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut theta = ParameterVector::new();
        theta.push("x", RealArray::row(&[0.3, -1.0, 2.5, 0.0])).unwrap();
        let anchor = [0.1, 0.4, 2.0, -1.0];
        let omega = imp(&[0.5, 2.0, 0.0, 1.5]);
        let f = |p: &ParameterVector| ewc_penalty(p.as_slice(), &anchor, &omega, 1.7);
        assert!(finite_diff_check(f, &theta, 1e-5, None).unwrap() < 1e-7);
    }

    #[test]
    fn online_first_task_takes_new_state() {
        let mut s = EwcState::new(EwcMode::Online { decay: 1.0 }).unwrap();
        s.consolidate(imp(&[1.0, 2.0]), vec![0.5, 0.5]).unwrap();
        assert_eq!(s.anchors(), &[Anchor { omega: imp(&[1.0, 2.0]), theta_star: vec![0.5, 0.5] }]);
    }

    #[test]
    fn online_decay_arithmetic() {
        let mut s = EwcState::new(EwcMode::Online { decay: 0.5 }).unwrap();
        s.consolidate(imp(&[2.0]), vec![0.0]).unwrap();
        s.consolidate(imp(&[1.0]), vec![3.0]).unwrap();
        assert_eq!(s.anchors().len(), 1);
        assert_eq!(s.anchors()[0].omega.as_slice(), &[2.0]);
        assert_eq!(s.anchors()[0].theta_star, vec![3.0]);
    }

    #[test]
    fn separate_mode_sums_penalties() {
        let mut s = EwcState::new(EwcMode::Separate).unwrap();
        s.consolidate(imp(&[1.0, 0.5]), vec![0.0, 1.0]).unwrap();
        s.consolidate(imp(&[2.0, 0.0]), vec![1.0, 1.0]).unwrap();
        let theta = [0.5, -0.5];
        let (a, ga) = ewc_penalty(&theta, &[0.0, 1.0], &imp(&[1.0, 0.5]), 0.7).unwrap();
        let (b, gb) = ewc_penalty(&theta, &[1.0, 1.0], &imp(&[2.0, 0.0]), 0.7).unwrap();
        let (v, g) = s.penalty(&theta, 0.7).unwrap();
        assert!((v - (a + b)).abs() < 1e-15);
        for i in 0..2 {
            assert!((g[i] - (ga[i] + gb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_decay_is_rejected() {
        assert!(EwcState::new(EwcMode::Online { decay: 0.0 }).is_err());
        assert!(EwcState::new(EwcMode::Online { decay: 1.5 }).is_err());
    }

    fn tiny_setup() -> (SeqModel, ParameterVector, TaskDataset) {
        let model = SeqModel::new(ModelConfig {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            bidirectional: false,
            downsample_stride: 1,
            vocab_size: 2,
            seed: 3,
        })
        .unwrap();
        let theta = model.init();
        let utt = |id: &str, x: Vec<f64>, labels: Vec<u32>| Utterance {
            id: id.into(),
            features: RealArray::new(vec![x.len() / 2, 2], x).unwrap(),
            labels,
            source_task: 0,
        };
        let ds = TaskDataset {
            task_id: 0,
            vocab_size: 2,
            input_dim: 2,
            utterances: vec![
                utt("a", vec![0.1, 0.9, -0.3, 0.2, 0.5, 0.5], vec![1, 2]),
                utt("b", vec![1.0, -1.0, 0.0, 0.4], vec![2]),
            ],
        };
        (model, theta, ds)
    }

    #[test]
    fn fisher_single_sample_is_squared_gradient() {
        let (model, theta, ds) = tiny_setup();
        let one = TaskDataset {
            utterances: ds.utterances[..1].to_vec(),
            ..ds
        };
        let f = fisher_diagonal(&model, &theta, &one, 1, 0).unwrap();
        let (_, g) = model.ctc_loss_and_grad(&theta, &one.utterances[0]).unwrap();
        for (a, b) in f.as_slice().iter().zip(&g) {
            assert_eq!(*a, b * b);
        }
    }

    #[test]
    fn fisher_full_sampling_averages_squares() {
        let (model, theta, ds) = tiny_setup();
        let f = fisher_diagonal(&model, &theta, &ds, 10, 0).unwrap();
        let (_, g0) = model.ctc_loss_and_grad(&theta, &ds.utterances[0]).unwrap();
        let (_, g1) = model.ctc_loss_and_grad(&theta, &ds.utterances[1]).unwrap();
        for i in 0..g0.len() {
            let expected = 0.5 * (g0[i] * g0[i] + g1[i] * g1[i]);
            assert!((f.as_slice()[i] - expected).abs() <= 1e-15 * expected.max(1.0));
        }
    }

    #[test]
    fn fisher_of_saturated_model_is_zero() {
        // A one-symbol model whose output bias makes the single-frame label
        // certain: the CTC gradient vanishes exactly.
        let model = SeqModel::new(ModelConfig {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 1,
            bidirectional: false,
            downsample_stride: 1,
            vocab_size: 1,
            seed: 1,
        })
        .unwrap();
        let mut theta = model.init();
        let ob = theta.segment_range(theta.index_of("out.b").unwrap());
        theta.as_mut_slice()[ob.start] = -1000.0;
        theta.as_mut_slice()[ob.start + 1] = 1000.0;
        let ds = TaskDataset {
            task_id: 0,
            vocab_size: 1,
            input_dim: 2,
            utterances: vec![Utterance {
                id: "a".into(),
                features: RealArray::row(&[0.2, -0.4]),
                labels: vec![1],
                source_task: 0,
            }],
        };
        let f = fisher_diagonal(&model, &theta, &ds, 1, 0).unwrap();
        assert!(f.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fisher_rejects_empty_dataset() {
        let (model, theta, ds) = tiny_setup();
        let empty = TaskDataset { utterances: vec![], ..ds };
        assert!(fisher_diagonal(&model, &theta, &empty, 1, 0).is_err());
    }
}
