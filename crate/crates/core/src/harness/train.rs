//! The staged training loop.
//!
//! A [`Trainer`] owns the parameters, the optimizer and the per-method state.
//! Stage `k` reads only the stage's own training set and, for GEM, the
//! episodic memory; [`AccessLog`] records every training utterance read so
//! that contract can be checked.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DecodeMode, Method, RunConfig};
use super::metrics::corpus_wer;
use crate::autodiff::{Optimizer, ParameterVector};
use crate::ctc::{beam_decode, greedy_decode};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::lifelong::{
    distill_loss_and_grad, ewc_penalty, fisher_diagonal, gem_project, memory_gradient, EpisodicMemory, EwcMode,
    EwcState, ImportanceMap, SiState,
};
use crate::lm::NGramLM;
use crate::model::{SeqModel, Utterance};
use crate::seed;

/// One evaluation of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub stage: usize,
    pub task: usize,
    pub wer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    /// Mini-batch of the stage's own training set.
    Batch,
    /// Episodic-memory gradient.
    Memory,
    /// Importance estimation after the stage.
    Consolidate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub stage: usize,
    pub kind: AccessKind,
    pub source_task: usize,
    pub id: String,
}

/// Every training utterance the trainer read, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessLog(pub Vec<Access>);

impl AccessLog {
    fn record<'a>(&mut self, stage: usize, kind: AccessKind, utts: impl IntoIterator<Item = &'a Utterance>) {
        self.0.extend(utts.into_iter().map(|u| Access {
            stage,
            kind,
            source_task: u.source_task,
            id: u.id.clone(),
        }));
    }
}

/// Held-out sets and, for LM-fused decoding, one LM per task.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub eval_sets: Vec<TaskDataset>,
    pub lms: Vec<NGramLM>,
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub lm_weight: f64,
}

impl Evaluator {
    pub fn num_tasks(&self) -> usize {
        self.eval_sets.len()
    }

    /// Corpus WER of `theta` on task `task`'s held-out set.
    pub fn wer(&self, model: &SeqModel, theta: &ParameterVector, task: usize) -> Result<f64> {
        let set = self
            .eval_sets
            .get(task)
            .ok_or_else(|| Error::InvalidArgument(format!("no eval set for task {task}")))?;
        let lm = self.lms.get(task);
        let hyps: Vec<Vec<u32>> = set
            .utterances
            .par_iter()
            .map(|u| {
                let logits = model.logits(theta, &u.features)?;
                match self.mode {
                    DecodeMode::Greedy => Ok(greedy_decode(&logits)),
                    DecodeMode::BeamLm => beam_decode(&logits, lm, self.lm_weight, self.beam_width),
                }
            })
            .collect::<Result<_>>()?;
        corpus_wer(set.utterances.iter().zip(&hyps).map(|(u, h)| (u.labels.as_slice(), h.as_slice())))
    }
}

/// Method-specific state carried across stages.
#[derive(Debug, Clone)]
pub enum MethodState {
    Finetune,
    Ewc(EwcState),
    Si {
        tracker: SiState,
        omega: ImportanceMap,
        anchor: Option<Vec<f64>>,
    },
    Kd {
        teacher: Option<ParameterVector>,
    },
    Gem(EpisodicMemory),
}

impl MethodState {
    pub fn new(config: &RunConfig, theta: &ParameterVector, memory_frames: usize, root_seed: u64) -> Result<Self> {
        let r = &config.regularizer;
        Ok(match config.method {
            Method::Finetune => MethodState::Finetune,
            Method::Ewc => MethodState::Ewc(EwcState::new(EwcMode::Separate)?),
            Method::OnlineEwc => MethodState::Ewc(EwcState::new(EwcMode::Online {
                decay: r.ewc_online_decay,
            })?),
            Method::Si => MethodState::Si {
                tracker: SiState::new(theta.flatten(), r.si_xi)?,
                omega: ImportanceMap::zeros(theta.total_len()),
                anchor: None,
            },
            Method::Kd => MethodState::Kd { teacher: None },
            Method::Gem => MethodState::Gem(EpisodicMemory::new(
                memory_frames,
                config.gem_policy(),
                seed::substream(root_seed, "selection"),
            )),
        })
    }

    pub fn memory(&self) -> Option<&EpisodicMemory> {
        match self {
            MethodState::Gem(m) => Some(m),
            _ => None,
        }
    }
}

/// Counters of one trainer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub steps: u64,
    /// Utterances dropped from batches because they could not be aligned.
    pub skipped_utterances: u64,
    /// GEM steps whose gradient was projected.
    pub projections: u64,
}

pub struct Trainer<'a> {
    model: SeqModel,
    config: &'a RunConfig,
    theta: ParameterVector,
    optimizer: Optimizer,
    state: MethodState,
    batch_rng: ChaCha8Rng,
    root_seed: u64,
    stats: TrainStats,
    curve: Vec<CurvePoint>,
    log: Option<AccessLog>,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters from the `init` substream of `root_seed`.
    pub fn new(config: &'a RunConfig, memory_frames: usize, root_seed: u64) -> Result<Self> {
        let model = SeqModel::new(crate::model::ModelConfig {
            seed: seed::substream(root_seed, "init"),
            ..config.model.clone()
        })?;
        let theta = model.init();
        let optimizer = Optimizer::new(config.optimizer.clone(), theta.total_len())?;
        let state = MethodState::new(config, &theta, memory_frames, root_seed)?;
        Ok(Self {
            model,
            config,
            theta,
            optimizer,
            state,
            batch_rng: ChaCha8Rng::seed_from_u64(seed::substream(root_seed, "batch")),
            root_seed,
            stats: TrainStats::default(),
            curve: Vec::new(),
            log: None,
        })
    }

    /// Starts recording every training-utterance read.
    pub fn with_access_log(mut self) -> Self {
        self.log = Some(AccessLog::default());
        self
    }

    pub fn model(&self) -> &SeqModel {
        &self.model
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    pub fn state(&self) -> &MethodState {
        &self.state
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn access_log(&self) -> Option<&AccessLog> {
        self.log.as_ref()
    }

    pub fn into_parts(self) -> (ParameterVector, Vec<CurvePoint>, Option<AccessLog>) {
        (self.theta, self.curve, self.log)
    }

    /// Runs the configured number of epochs over `task`, evaluating tasks
    /// `0..=stage` every `eval_every` steps.
    pub fn train_stage(&mut self, stage: usize, task: &TaskDataset, evaluator: &Evaluator) -> Result<()> {
        if task.is_empty() {
            return Err(Error::Empty("stage training set"));
        }
        let seen = (stage + 1).min(evaluator.num_tasks());
        let mut order: Vec<usize> = (0..task.len()).collect();
        for _ in 0..self.config.epochs_per_stage {
            order.shuffle(&mut self.batch_rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Utterance> = chunk.iter().map(|&i| &task.utterances[i]).collect();
                if let Some(log) = &mut self.log {
                    log.record(stage, AccessKind::Batch, batch.iter().copied());
                }
                self.step(stage, &batch)?;
                let every = self.config.eval_every as u64;
                if every > 0 && self.stats.steps.is_multiple_of(every) {
                    self.evaluate(stage, 0..seen, evaluator)?;
                }
            }
        }
        Ok(())
    }

    /// Evaluates `tasks` at the current step and appends them to the curve.
    pub fn evaluate(
        &mut self,
        stage: usize,
        tasks: impl IntoIterator<Item = usize>,
        evaluator: &Evaluator,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for task in tasks {
            let wer = evaluator.wer(&self.model, &self.theta, task)?;
            self.curve.push(CurvePoint {
                step: self.stats.steps,
                stage,
                task,
                wer,
            });
            out.push(wer);
        }
        Ok(out)
    }

    /// One optimizer step on a mini-batch.
    pub fn step(&mut self, stage: usize, batch: &[&Utterance]) -> Result<()> {
        let r = &self.config.regularizer;
        let (ctc_grad, mut grad, skipped) = match &self.state {
            MethodState::Kd { teacher: Some(teacher) } if r.kd_weight > 0.0 => {
                let (t, w) = (r.kd_temperature, r.kd_weight);
                let per_utt: Vec<Result<_>> = batch
                    .par_iter()
                    .map(|u| distill_loss_and_grad(&self.model, &self.theta, teacher, u, t, w))
                    .collect();
                let mut grad = vec![0.0; self.theta.total_len()];
                let (mut used, mut skipped) = (0usize, 0usize);
                for terms in per_utt {
                    match terms {
                        Ok(terms) => {
                            used += 1;
                            grad.iter_mut().zip(&terms.grad).for_each(|(a, g)| *a += g);
                        }
                        Err(Error::InfeasibleAlignment { .. }) => skipped += 1,
                        Err(e) => return Err(e),
                    }
                }
                if used == 0 {
                    self.stats.skipped_utterances += skipped as u64;
                    return Ok(());
                }
                grad.iter_mut().for_each(|g| *g /= used as f64);
                (None, grad, skipped)
            }
            _ => match self.model.mean_ctc_gradient(&self.theta, batch.iter().copied()) {
                Ok(b) => (Some(b.grad.clone()), b.grad, b.skipped),
                Err(Error::InfeasibleAlignment { .. }) => {
                    self.stats.skipped_utterances += batch.len() as u64;
                    return Ok(());
                }
                Err(e) => return Err(e),
            },
        };
        self.stats.skipped_utterances += skipped as u64;

        let lambda = r.lambda;
        match &self.state {
            MethodState::Ewc(ewc) if lambda > 0.0 && !ewc.anchors().is_empty() => {
                let (_, pg) = ewc.penalty(self.theta.as_slice(), lambda)?;
                grad.iter_mut().zip(&pg).for_each(|(g, p)| *g += p);
            }
            MethodState::Si {
                omega,
                anchor: Some(anchor),
                ..
            } if lambda > 0.0 => {
                let (_, pg) = ewc_penalty(self.theta.as_slice(), anchor, omega, lambda)?;
                grad.iter_mut().zip(&pg).for_each(|(g, p)| *g += p);
            }
            MethodState::Gem(memory) if !memory.is_empty() => {
                if let Some(log) = &mut self.log {
                    log.record(stage, AccessKind::Memory, memory.iter());
                }
                let g_mem = memory_gradient(&self.model, &self.theta, memory)?;
                let p = gem_project(&grad, &g_mem)?;
                self.stats.projections += u64::from(p.projected);
                grad = p.grad;
            }
            _ => {}
        }

        match &mut self.state {
            MethodState::Si { tracker, .. } => {
                let before = self.theta.flatten();
                self.optimizer.step(self.theta.as_mut_slice(), &grad)?;
                let delta: Vec<f64> = self.theta.as_slice().iter().zip(&before).map(|(a, b)| a - b).collect();
                let ctc_grad = ctc_grad.expect("SI steps use the plain CTC gradient");
                tracker.accumulate_step(&ctc_grad, &delta)?;
            }
            _ => self.optimizer.step(self.theta.as_mut_slice(), &grad)?,
        }
        self.stats.steps += 1;
        Ok(())
    }

    /// Snapshot and consolidation after stage `stage` on `task`: importance
    /// for EWC/SI, the frozen teacher for KD, memory rebalancing for GEM.
    pub fn end_stage(&mut self, stage: usize, task: &TaskDataset, lm: Option<&NGramLM>) -> Result<()> {
        let r = &self.config.regularizer;
        match &mut self.state {
            MethodState::Finetune => {}
            MethodState::Ewc(ewc) => {
                // λ = 0 makes the penalty vanish; skip the Fisher pass entirely.
                if r.lambda > 0.0 {
                    let fisher_seed = seed::indexed(seed::substream(self.root_seed, "fisher"), stage as u64);
                    if let Some(log) = &mut self.log {
                        log.record(stage, AccessKind::Consolidate, &task.utterances);
                    }
                    let fisher = fisher_diagonal(&self.model, &self.theta, task, r.fisher_samples, fisher_seed)?;
                    ewc.consolidate(fisher, self.theta.flatten())?;
                }
            }
            MethodState::Si { tracker, omega, anchor } => {
                let theta = self.theta.flatten();
                *omega = tracker.consolidate(omega, &theta)?;
                tracker.reset(theta.clone())?;
                *anchor = Some(theta);
            }
            MethodState::Kd { teacher } => *teacher = Some(self.theta.clone()),
            MethodState::Gem(memory) => memory.rebalance(task, lm)?,
        }
        Ok(())
    }
}
