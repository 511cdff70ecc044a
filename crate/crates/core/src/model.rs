//! Small CTC acoustic model: strided mean-pool downsampling, a linear
//! projection, a stack of tanh recurrent layers (optionally bidirectional) and
//! a linear output layer over `vocab_size + 1` classes with blank at index 0.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParameterVector, RealArray, Tape, Var};
use crate::ctc::{ctc_loss, BLANK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
    pub downsample_stride: usize,
    /// Number of non-blank symbols.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden_dim: 32,
            num_layers: 2,
            bidirectional: false,
            downsample_stride: 2,
            vocab_size: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("downsample_stride", self.downsample_stride),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.downsample_stride)
    }

    fn directions(&self) -> &'static [&'static str] {
        if self.bidirectional {
            &["fwd", "bwd"]
        } else {
            &["fwd"]
        }
    }
}

/// One transcribed training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `(frames, input_dim)`.
    pub features: RealArray,
    /// Symbols in `1..=vocab_size`.
    pub labels: Vec<u32>,
    pub source_task: usize,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self, input_dim: usize, vocab_size: usize) -> Result<()> {
        if self.features.shape().len() != 2 || self.frames() == 0 {
            return Err(Error::InvalidArgument(format!("utterance {} has no frames", self.id)));
        }
        if self.features.cols() != input_dim {
            return Err(Error::ShapeMismatch {
                op: "utterance features",
                lhs: self.features.shape().to_vec(),
                rhs: vec![self.frames(), input_dim],
            });
        }
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument(format!("utterance {} has no labels", self.id)));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l == BLANK || l as usize > vocab_size) {
            return Err(Error::OutOfVocabulary(bad));
        }
        Ok(())
    }
}

/// Stateless model definition; parameters live in a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    config: ModelConfig,
}

struct Layout {
    proj_w: usize,
    proj_b: usize,
    /// Per layer, per direction: (wx, wh, b).
    rnn: Vec<Vec<(usize, usize, usize)>>,
    out_w: usize,
    out_b: usize,
}

impl SeqModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layout(&self) -> Layout {
        let mut idx = 0;
        let mut next = || {
            idx += 1;
            idx - 1
        };
        let proj_w = next();
        let proj_b = next();
        let rnn = (0..self.config.num_layers)
            .map(|_| self.config.directions().iter().map(|_| (next(), next(), next())).collect())
            .collect();
        Layout {
            proj_w,
            proj_b,
            rnn,
            out_w: next(),
            out_b: next(),
        }
    }

    /// Deterministic initialization from `config.seed`: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn init(&self) -> ParameterVector {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            RealArray::new(vec![rows, cols], data).expect("sized")
        };
        let h = cfg.hidden_dim;
        let dirs = cfg.directions();
        let mut p = ParameterVector::new();
        let push = |p: &mut ParameterVector, name: String, a: RealArray| {
            p.push(name, a).expect("unique parameter names");
        };
        push(&mut p, "proj.w".into(), uniform(cfg.input_dim, h));
        push(&mut p, "proj.b".into(), RealArray::zeros(&[1, h]));
        for layer in 0..cfg.num_layers {
            let input = if layer == 0 { h } else { h * dirs.len() };
            for d in dirs {
                push(&mut p, format!("rnn{layer}.{d}.wx"), uniform(input, h));
                push(&mut p, format!("rnn{layer}.{d}.wh"), uniform(h, h));
                push(&mut p, format!("rnn{layer}.{d}.b"), RealArray::zeros(&[1, h]));
            }
        }
        push(&mut p, "out.w".into(), uniform(h * dirs.len(), cfg.num_classes()));
        push(&mut p, "out.b".into(), RealArray::zeros(&[1, cfg.num_classes()]));
        p
    }

    fn recurrent(&self, tape: &mut Tape, input: Var, wx: Var, wh: Var, b: Var) -> Result<Var> {
        let xs = tape.matmul(input, wx)?;
        let xs = tape.add_row(xs, b)?;
        let frames = tape.value(xs).rows();
        let mut states = Vec::with_capacity(frames);
        let first = tape.slice_rows(xs, 0, 1)?;
        let mut h = tape.tanh(first);
        states.push(h);
        for t in 1..frames {
            let x_t = tape.slice_rows(xs, t, t + 1)?;
            let rec = tape.matmul(h, wh)?;
            let pre = tape.add(x_t, rec)?;
            h = tape.tanh(pre);
            states.push(h);
        }
        tape.concat_rows(&states)
    }

    /// Records the forward pass on `tape` and returns the logits node,
    /// shape `(ceil(T / stride), vocab_size + 1)`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, features: &RealArray) -> Result<Var> {
        let cfg = &self.config;
        if features.shape().len() != 2 || features.cols() != cfg.input_dim || features.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                lhs: features.shape().to_vec(),
                rhs: vec![features.rows().max(1), cfg.input_dim],
            });
        }
        let layout = self.layout();
        let x = tape.leaf(features.clone());
        let pooled = tape.mean_pool_rows(x, cfg.downsample_stride)?;
        let proj = tape.matmul(pooled, params.var(layout.proj_w))?;
        let mut hidden = tape.add_row(proj, params.var(layout.proj_b))?;
        for layer in &layout.rnn {
            let mut outputs = Vec::with_capacity(layer.len());
            for (dir, &(wx, wh, b)) in layer.iter().enumerate() {
                let (wx, wh, b) = (params.var(wx), params.var(wh), params.var(b));
                let out = if dir == 0 {
                    self.recurrent(tape, hidden, wx, wh, b)?
                } else {
                    let rev = tape.reverse_rows(hidden);
                    let out = self.recurrent(tape, rev, wx, wh, b)?;
                    tape.reverse_rows(out)
                };
                outputs.push(out);
            }
            hidden = if outputs.len() == 1 {
                outputs[0]
            } else {
                tape.concat_cols(&outputs)?
            };
        }
        let logits = tape.matmul(hidden, params.var(layout.out_w))?;
        tape.add_row(logits, params.var(layout.out_b))
    }

    /// Logits without keeping the tape.
    pub fn logits(&self, theta: &ParameterVector, features: &RealArray) -> Result<RealArray> {
        let mut tape = Tape::new();
        let bound = theta.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, features)?;
        Ok(tape.value(out).clone())
    }

    /// CTC loss of one utterance and its gradient with respect to every parameter.
    pub fn ctc_loss_and_grad(&self, theta: &ParameterVector, utt: &Utterance) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = theta.bind(&mut tape);
        let logits = self.forward(&mut tape, &bound, &utt.features)?;
        let ctc = ctc_loss(tape.value(logits), &utt.labels)?;
        let head = tape.head(logits, ctc.loss, ctc.grad)?;
        let grads = tape.backward(head)?;
        Ok((ctc.loss, theta.collect_gradient(&grads, &bound)))
    }

    pub fn ctc_loss_value(&self, theta: &ParameterVector, utt: &Utterance) -> Result<f64> {
        let logits = self.logits(theta, &utt.features)?;
        Ok(ctc_loss(&logits, &utt.labels)?.loss)
    }
}

/// Mean CTC loss and gradient over a set of utterances.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    /// Utterances skipped because their labels cannot fit the output frames.
    pub skipped: usize,
}

impl SeqModel {
    /// Averages per-utterance CTC gradients. Utterances with an infeasible
    /// alignment are skipped and counted; the call fails only when every
    /// utterance is infeasible. Per-utterance work runs in parallel and is
    /// reduced in input order, so the result is deterministic.
    pub fn mean_ctc_gradient<'a, I>(&self, theta: &ParameterVector, utterances: I) -> Result<BatchGradient>
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        use rayon::prelude::*;
        let utts: Vec<&Utterance> = utterances.into_iter().collect();
        if utts.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let results: Vec<Result<(f64, Vec<f64>)>> =
            utts.par_iter().map(|u| self.ctc_loss_and_grad(theta, u)).collect();
        let mut grad = vec![0.0; theta.total_len()];
        let (mut loss, mut used, mut skipped) = (0.0, 0usize, 0usize);
        let mut first_infeasible = None;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    for (acc, v) in grad.iter_mut().zip(&g) {
                        *acc += v;
                    }
                    used += 1;
                }
                Err(e @ Error::InfeasibleAlignment { .. }) => {
                    skipped += 1;
                    first_infeasible.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            return Err(first_infeasible.expect("nonempty batch"));
        }
        let inv = 1.0 / used as f64;
        for v in &mut grad {
            *v *= inv;
        }
        Ok(BatchGradient {
            loss: loss * inv,
            grad,
            used,
            skipped,
        })
    }
}

const CHECKPOINT_HEADER: &str = "ctc-lifelong checkpoint v1";

/// Writes a text checkpoint. Values use the shortest round-trip decimal form,
/// so loading reproduces every parameter bit for bit.
pub fn checkpoint_to_text(config: &ModelConfig, theta: &ParameterVector) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(out, "input_dim {}", config.input_dim).unwrap();
    writeln!(out, "hidden_dim {}", config.hidden_dim).unwrap();
    writeln!(out, "num_layers {}", config.num_layers).unwrap();
    writeln!(out, "bidirectional {}", config.bidirectional).unwrap();
    writeln!(out, "downsample_stride {}", config.downsample_stride).unwrap();
    writeln!(out, "vocab_size {}", config.vocab_size).unwrap();
    writeln!(out, "seed {}", config.seed).unwrap();
    writeln!(out, "segments {}", theta.num_segments()).unwrap();
    for (i, (name, array)) in theta.segments().enumerate() {
        let dims: Vec<String> = theta.segment_shape(i).iter().map(usize::to_string).collect();
        writeln!(out, "segment {name} {}", dims.join(" ")).unwrap();
        let values: Vec<String> = array.data().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    out
}

pub fn checkpoint_from_text(text: &str) -> Result<(ModelConfig, ParameterVector)> {
    let lines: Vec<&str> = text.lines().collect();
    let line = |i: usize| -> Result<&str> {
        lines.get(i).copied().ok_or_else(|| Error::parse(i + 1, "unexpected end of checkpoint"))
    };
    if line(0)?.trim() != CHECKPOINT_HEADER {
        return Err(Error::parse(1, format!("expected `{CHECKPOINT_HEADER}`")));
    }
    let field = |i: usize, name: &str| -> Result<&str> {
        line(i)?
            .strip_prefix(name)
            .map(str::trim)
            .ok_or_else(|| Error::parse(i + 1, format!("expected `{name}`")))
    };
    let num = |i: usize, name: &str| -> Result<usize> {
        field(i, name)?.parse().map_err(|_| Error::parse(i + 1, format!("bad {name}")))
    };
    let config = ModelConfig {
        input_dim: num(1, "input_dim")?,
        hidden_dim: num(2, "hidden_dim")?,
        num_layers: num(3, "num_layers")?,
        bidirectional: field(4, "bidirectional")?
            .parse()
            .map_err(|_| Error::parse(5, "bad bidirectional"))?,
        downsample_stride: num(5, "downsample_stride")?,
        vocab_size: num(6, "vocab_size")?,
        seed: field(7, "seed")?.parse().map_err(|_| Error::parse(8, "bad seed"))?,
    };
    config.validate()?;
    let count = num(8, "segments")?;
    let mut theta = ParameterVector::new();
    for s in 0..count {
        let head_idx = 9 + 2 * s;
        let head: Vec<&str> = field(head_idx, "segment")?.split_whitespace().collect();
        let (name, dims) = head
            .split_first()
            .ok_or_else(|| Error::parse(head_idx + 1, "missing segment name"))?;
        let shape: Vec<usize> = dims
            .iter()
            .map(|d| d.parse().map_err(|_| Error::parse(head_idx + 1, "bad dimension")))
            .collect::<Result<_>>()?;
        let values: Vec<f64> = line(head_idx + 1)?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::parse(head_idx + 2, "bad value")))
            .collect::<Result<_>>()?;
        let array = RealArray::new(shape, values).map_err(|e| Error::parse(head_idx + 2, e.to_string()))?;
        theta.push(*name, array)?;
    }
    let expected = SeqModel::new(config.clone())?.init();
    theta
        .check_layout(&expected)
        .map_err(|_| Error::parse(9, "segments do not match the model configuration"))?;
    Ok((config, theta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, theta: &ParameterVector) -> Result<()> {
    std::fs::write(path, checkpoint_to_text(config, theta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ParameterVector)> {
    checkpoint_from_text(&std::fs::read_to_string(path)?)
}
