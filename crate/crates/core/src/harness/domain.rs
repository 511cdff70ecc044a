//! Synthetic recognition domains.
//!
//! Each domain draws label sequences from a bigram process and renders them as
//! feature frames: a per-symbol prototype vector held for a random number of
//! frames, plus a domain-wide shift and Gaussian noise. Domains that differ in
//! shift, noise, symbol mix or length stand in for different acoustic and
//! topic conditions.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::RealArray;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::model::Utterance;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub task_id: usize,
    pub vocab_size: usize,
    pub input_dim: usize,
    /// Unnormalized weight of each symbol `1..=vocab_size`.
    pub symbol_weights: Vec<f64>,
    /// Log-odds boost for following symbol `i` with `i % V + 1`.
    pub transition_bias: f64,
    pub noise_sigma: f64,
    pub feature_shift: Vec<f64>,
    pub mean_label_len: f64,
    pub len_spread: f64,
    /// Frames per symbol are uniform on `min_duration..=max_duration`.
    pub min_duration: usize,
    pub max_duration: usize,
    pub num_train: usize,
    pub num_eval: usize,
    pub seed: u64,
    /// Seed of the symbol prototypes; shared across domains so that a symbol
    /// "sounds" the same everywhere up to shift and noise.
    pub prototype_seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("domain {}: {msg}", self.task_id)));
        if self.vocab_size == 0 || self.input_dim == 0 {
            return bad("vocab_size and input_dim must be positive".into());
        }
        if self.symbol_weights.len() != self.vocab_size {
            return bad(format!("{} symbol weights for vocabulary {}", self.symbol_weights.len(), self.vocab_size));
        }
        if self.symbol_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("symbol weights must be finite and non-negative".into());
        }
        if self.symbol_weights.iter().all(|&w| w == 0.0) {
            return bad("symbol weights are all zero".into());
        }
        if self.feature_shift.len() != self.input_dim {
            return bad(format!("shift has {} entries for input_dim {}", self.feature_shift.len(), self.input_dim));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0".into());
        }
        if !(self.mean_label_len >= 1.0 && self.len_spread >= 0.0) {
            return bad("mean_label_len must be >= 1 and len_spread >= 0".into());
        }
        if !self.transition_bias.is_finite() {
            return bad("transition_bias must be finite".into());
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return bad("need 1 <= min_duration <= max_duration".into());
        }
        Ok(())
    }
}

/// Training and held-out splits of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub train: TaskDataset,
    pub eval: TaskDataset,
}

/// One unit-scale Gaussian prototype per symbol `1..=vocab_size`, row `s - 1`.
pub fn prototypes(vocab_size: usize, input_dim: usize, prototype_seed: u64) -> RealArray {
    let mut rng = ChaCha8Rng::seed_from_u64(prototype_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..vocab_size * input_dim).map(|_| normal.sample(&mut rng)).collect();
    RealArray::new(vec![vocab_size, input_dim], data).expect("prototype shape")
}

struct LabelSampler {
    initial: WeightedIndex<f64>,
    /// `next[i]` samples the successor of symbol `i + 1`; `None` when only
    /// symbol `i + 1` has weight, which forces the sequence to stop.
    next: Vec<Option<WeightedIndex<f64>>>,
}

impl LabelSampler {
    fn new(spec: &DomainSpec) -> Result<Self> {
        let v = spec.vocab_size;
        let initial = WeightedIndex::new(&spec.symbol_weights)
            .map_err(|e| Error::InvalidConfig(format!("symbol weights: {e}")))?;
        let next = (0..v)
            .map(|i| {
                let succ = (i + 1) % v;
                let w: Vec<f64> = (0..v)
                    .map(|j| match j {
                        _ if j == i => 0.0,
                        _ if j == succ => spec.symbol_weights[j] * spec.transition_bias.exp(),
                        _ => spec.symbol_weights[j],
                    })
                    .collect();
                WeightedIndex::new(&w).ok()
            })
            .collect();
        Ok(Self { initial, next })
    }

    /// Labels never repeat back to back, so every frame-level symbol run maps
    /// to exactly one label.
    fn sample(&self, rng: &mut impl Rng, len: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut cur = self.initial.sample(rng);
        out.push(cur as u32 + 1);
        while out.len() < len {
            match &self.next[cur] {
                Some(d) => cur = d.sample(rng),
                None => break,
            }
            out.push(cur as u32 + 1);
        }
        out
    }
}

/// Log-normal with the domain's mean and standard deviation: positive and
/// right-skewed, like real utterance durations. `None` for zero spread.
fn length_dist(spec: &DomainSpec) -> Option<LogNormal<f64>> {
    if spec.len_spread == 0.0 {
        return None;
    }
    let m = spec.mean_label_len;
    let var = (1.0 + (spec.len_spread / m).powi(2)).ln();
    Some(LogNormal::new(m.ln() - var / 2.0, var.sqrt()).expect("validated length moments"))
}

fn sample_utterance(
    spec: &DomainSpec,
    protos: &RealArray,
    labels_dist: &LabelSampler,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Utterance {
    let len = match length_dist(spec) {
        None => spec.mean_label_len.round(),
        Some(d) => d.sample(rng).round(),
    }
    .max(1.0) as usize;
    let labels = labels_dist.sample(rng, len);
    let mut data = Vec::new();
    let mut frames = 0;
    for &s in &labels {
        let dur = rng.random_range(spec.min_duration..=spec.max_duration);
        let proto = protos.row_slice(s as usize - 1);
        for _ in 0..dur {
            for (p, shift) in proto.iter().zip(&spec.feature_shift) {
                let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(p + shift + n);
            }
            frames += 1;
        }
    }
    Utterance {
        id,
        features: RealArray::new(vec![frames, spec.input_dim], data).expect("frame shape"),
        labels,
        source_task: spec.task_id,
    }
}

/// Draws a domain's train and eval splits. Deterministic in `spec`.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainData> {
    spec.validate()?;
    let protos = prototypes(spec.vocab_size, spec.input_dim, spec.prototype_seed);
    let labels = LabelSampler::new(spec)?;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("validated sigma");
    let split = |name: &str, count: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(spec.seed, name));
        let utterances = (0..count)
            .map(|i| {
                let id = format!("d{}-{name}-{i:05}", spec.task_id);
                sample_utterance(spec, &protos, &labels, &noise, &mut rng, id)
            })
            .collect();
        TaskDataset {
            task_id: spec.task_id,
            vocab_size: spec.vocab_size,
            input_dim: spec.input_dim,
            utterances,
        }
    };
    Ok(DomainData {
        train: split("train", spec.num_train),
        eval: split("eval", spec.num_eval),
    })
}

/// The three-domain desk benchmark: a long-utterance, clean domain with a
/// skewed symbol mix, then progressively larger, noisier domains with
/// shifted features and shorter, differently distributed label sequences.
pub fn default_domains(seed: u64) -> Vec<DomainSpec> {
    let vocab_size = 6;
    let input_dim = 8;
    let prototype_seed = seed::substream(seed, "prototypes");
    // random direction, fixed length
    let shift = |k: usize, norm: f64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::indexed(seed::substream(seed, "shift"), k as u64));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let v: Vec<f64> = (0..input_dim).map(|_| normal.sample(&mut rng)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| norm * x / len).collect()
    };
    let base = |task_id: usize| DomainSpec {
        task_id,
        vocab_size,
        input_dim,
        symbol_weights: vec![1.0; vocab_size],
        transition_bias: 0.0,
        noise_sigma: 0.1,
        feature_shift: vec![0.0; input_dim],
        mean_label_len: 6.0,
        len_spread: 1.0,
        min_duration: 2,
        max_duration: 4,
        num_train: 200,
        num_eval: 150,
        seed: seed::indexed(seed::substream(seed, "data"), task_id as u64),
        prototype_seed,
    };
    vec![
        DomainSpec {
            symbol_weights: vec![4.0, 4.0, 3.0, 1.0, 0.5, 0.5],
            transition_bias: 1.5,
            noise_sigma: 0.1,
            mean_label_len: 8.0,
            len_spread: 4.0,
            num_train: 200,
            ..base(0)
        },
        DomainSpec {
            symbol_weights: vec![1.0, 2.0, 3.0, 3.0, 2.0, 1.0],
            transition_bias: 0.5,
            noise_sigma: 0.2,
            feature_shift: shift(1, 1.5),
            mean_label_len: 6.0,
            len_spread: 3.2,
            num_train: 400,
            ..base(1)
        },
        DomainSpec {
            symbol_weights: vec![0.5, 0.5, 1.0, 3.0, 4.0, 4.0],
            transition_bias: -0.5,
            noise_sigma: 0.4,
            feature_shift: shift(2, 2.0),
            mean_label_len: 4.0,
            len_spread: 2.4,
            num_train: 600,
            ..base(2)
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DomainSpec {
        let mut s = default_domains(3).remove(0);
        s.num_train = 30;
        s.num_eval = 5;
        s
    }

    #[test]
    fn same_spec_same_data() {
        assert_eq!(generate_domain(&spec()).unwrap(), generate_domain(&spec()).unwrap());
        let mut other = spec();
        other.seed += 1;
        assert_ne!(generate_domain(&spec()).unwrap(), generate_domain(&other).unwrap());
    }

    #[test]
    fn noiseless_frames_decode_by_nearest_prototype() {
        let s = DomainSpec {
            noise_sigma: 0.0,
            feature_shift: vec![0.0; 8],
            ..spec()
        };
        let protos = prototypes(s.vocab_size, s.input_dim, s.prototype_seed);
        let data = generate_domain(&s).unwrap();
        for u in &data.train.utterances {
            let mut path = Vec::new();
            for t in 0..u.frames() {
                let frame = u.features.row_slice(t);
                let nearest = (0..s.vocab_size)
                    .min_by(|&a, &b| {
                        let d = |k: usize| -> f64 {
                            protos.row_slice(k).iter().zip(frame).map(|(p, f)| (p - f).powi(2)).sum()
                        };
                        d(a).total_cmp(&d(b))
                    })
                    .unwrap();
                assert_eq!(protos.row_slice(nearest), frame);
                path.push(nearest as u32 + 1);
            }
            path.dedup();
            assert_eq!(path, u.labels);
            assert!(u.frames() >= 2 * u.labels.len() && u.frames() <= 4 * u.labels.len());
        }
    }

    #[test]
    fn zero_spread_fixes_length() {
        let s = DomainSpec {
            mean_label_len: 6.0,
            len_spread: 0.0,
            ..spec()
        };
        let data = generate_domain(&s).unwrap();
        assert!(data.train.utterances.iter().all(|u| u.labels.len() == 6));
    }

    #[test]
    fn labels_never_repeat_adjacently_and_stay_in_vocab() {
        let data = generate_domain(&spec()).unwrap();
        for u in &data.train.utterances {
            assert!(u.labels.windows(2).all(|w| w[0] != w[1]));
            assert!(u.labels.iter().all(|&l| (1..=6).contains(&l)));
            assert_eq!(u.source_task, 0);
        }
    }

    #[test]
    fn degenerate_weights_are_rejected() {
        let s = DomainSpec {
            symbol_weights: vec![0.0; 6],
            ..spec()
        };
        assert!(generate_domain(&s).is_err());
        let s = DomainSpec {
            symbol_weights: vec![1.0; 5],
            ..spec()
        };
        assert!(generate_domain(&s).is_err());
    }

    #[test]
    fn default_domains_are_distinct() {
        let d = default_domains(0);
        assert_eq!(d.len(), 3);
        assert_eq!(d.iter().map(|s| s.num_train).collect::<Vec<_>>(), [200, 400, 600]);
        for i in 0..3 {
            for j in i + 1..3 {
                let (a, b) = (&d[i], &d[j]);
                assert!(
                    a.symbol_weights != b.symbol_weights
                        || a.feature_shift != b.feature_shift
                        || a.noise_sigma != b.noise_sigma
                        || a.mean_label_len != b.mean_label_len
                );
            }
        }
    }
}
