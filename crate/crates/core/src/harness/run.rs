//! Run modes: sequential stages, the joint multitask bound, and the memory
//! budget sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Method, RunConfig};
use super::domain::{default_domains, generate_domain, DomainSpec};
use super::report::{median, RunReport};
use super::train::{AccessLog, Evaluator, Trainer};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::lifelong::SelectionPolicy;
use crate::lm::NGramLM;
use crate::model::Utterance;
use crate::seed;

/// Generated data of one run: per-task training sets, held-out sets and
/// label LMs.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<TaskDataset>,
    pub eval: Vec<TaskDataset>,
    pub lms: Vec<NGramLM>,
}

impl Benchmark {
    pub fn from_specs(specs: &[DomainSpec], lm_order: usize, lm_add_k: f64) -> Result<Self> {
        let (mut train, mut eval, mut lms) = (Vec::new(), Vec::new(), Vec::new());
        for (k, spec) in specs.iter().enumerate() {
            if spec.task_id != k {
                return Err(Error::InvalidConfig(format!("domain {k} has task_id {}", spec.task_id)));
            }
            let data = generate_domain(spec)?;
            lms.push(NGramLM::train(&data.train.label_corpus(), spec.vocab_size as u32, lm_order, lm_add_k)?);
            train.push(data.train);
            eval.push(data.eval);
        }
        Ok(Self { train, eval, lms })
    }

    /// The configured domains, or the default benchmark for `seed`.
    pub fn for_run(config: &RunConfig, seed: u64) -> Result<Self> {
        let specs = if config.domains.is_empty() {
            default_domains(seed)
        } else {
            config.domains.clone()
        };
        Self::from_specs(&specs, config.lm_order, config.lm_add_k)
    }

    pub fn num_tasks(&self) -> usize {
        self.train.len()
    }

    pub fn evaluator(&self, config: &RunConfig) -> Evaluator {
        Evaluator {
            eval_sets: self.eval.clone(),
            lms: self.lms.clone(),
            mode: config.decode,
            beam_width: config.beam_width,
            lm_weight: config.lm_weight,
        }
    }

    /// Memory capacity in frames: the explicit override, else the configured
    /// fraction of the mean training-set size.
    pub fn memory_frames(&self, config: &RunConfig) -> usize {
        if config.method != Method::Gem {
            return 0;
        }
        config.memory_frames.unwrap_or_else(|| {
            let mean = self.train.iter().map(TaskDataset::total_frames).sum::<usize>() as f64 / self.num_tasks() as f64;
            (config.memory_fraction * mean).round() as usize
        })
    }
}

fn policy_label(config: &RunConfig) -> Option<String> {
    (config.method == Method::Gem).then(|| config.gem_policy().name().to_string())
}

/// Trains on the tasks in order. After each stage every task is evaluated
/// (filling one column of the final matrix) and the method consolidates.
pub fn run_sequential(config: &RunConfig, seed: u64) -> Result<RunReport> {
    let bench = Benchmark::for_run(config, seed)?;
    run_sequential_on(config, &bench, seed, false).map(|(r, _)| r)
}

/// [`run_sequential`] on pre-generated data, optionally logging every
/// training-utterance access.
pub fn run_sequential_on(
    config: &RunConfig,
    bench: &Benchmark,
    seed: u64,
    log_access: bool,
) -> Result<(RunReport, Option<AccessLog>)> {
    config.validate()?;
    if bench.num_tasks() < 2 {
        return Err(Error::InvalidConfig("a sequential run needs at least two domains".into()));
    }
    let evaluator = bench.evaluator(config);
    let budget = bench.memory_frames(config);
    let mut trainer = Trainer::new(config, budget, seed)?;
    if log_access {
        trainer = trainer.with_access_log();
    }
    let n = bench.num_tasks();
    let mut matrix = vec![Vec::with_capacity(n); n];
    let mut stage_ends = Vec::with_capacity(n);
    for (stage, task) in bench.train.iter().enumerate() {
        trainer.train_stage(stage, task, &evaluator)?;
        for (t, wer) in trainer.evaluate(stage, 0..n, &evaluator)?.into_iter().enumerate() {
            matrix[t].push(wer);
        }
        stage_ends.push(trainer.stats().steps);
        trainer.end_stage(stage, task, Some(&bench.lms[stage]))?;
    }
    let (_, curve, log) = trainer.into_parts();
    let report = RunReport::new(config.method.name(), policy_label(config), budget, seed, curve, matrix, stage_ends)?;
    Ok((report, log))
}

/// Draws (task, utterance index) pairs with every task equally likely and
/// utterances uniform within a task.
#[derive(Debug, Clone)]
pub struct TaskBalancedSampler {
    sizes: Vec<usize>,
    rng: ChaCha8Rng,
}

impl TaskBalancedSampler {
    pub fn new(sizes: Vec<usize>, seed: u64) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Empty("task in sampler"));
        }
        Ok(Self {
            sizes,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn draw(&mut self) -> (usize, usize) {
        let task = self.rng.random_range(0..self.sizes.len());
        (task, self.rng.random_range(0..self.sizes[task]))
    }
}

/// Joint training on all tasks with task-balanced batches, for as many
/// optimizer steps as the sequential run takes in total.
pub fn run_multitask(config: &RunConfig, seed: u64) -> Result<RunReport> {
    let bench = Benchmark::for_run(config, seed)?;
    run_multitask_on(config, &bench, seed)
}

pub fn run_multitask_on(config: &RunConfig, bench: &Benchmark, seed: u64) -> Result<RunReport> {
    if bench.num_tasks() < 2 {
        return Err(Error::InvalidConfig("multitask training needs at least two domains".into()));
    }
    let joint = config.with_method(Method::Finetune, None);
    joint.validate()?;
    let evaluator = bench.evaluator(&joint);
    let mut trainer = Trainer::new(&joint, 0, seed)?;
    let steps: usize = bench
        .train
        .iter()
        .map(|t| joint.epochs_per_stage * t.len().div_ceil(joint.batch_size))
        .sum();
    let mut sampler = TaskBalancedSampler::new(
        bench.train.iter().map(TaskDataset::len).collect(),
        seed::substream(seed, "batch"),
    )?;
    let n = bench.num_tasks();
    for _ in 0..steps {
        let batch: Vec<&Utterance> = (0..joint.batch_size)
            .map(|_| {
                let (t, i) = sampler.draw();
                &bench.train[t].utterances[i]
            })
            .collect();
        trainer.step(0, &batch)?;
        let every = joint.eval_every as u64;
        if every > 0 && trainer.stats().steps % every == 0 {
            trainer.evaluate(0, 0..n, &evaluator)?;
        }
    }
    let wers = trainer.evaluate(0, 0..n, &evaluator)?;
    let end = trainer.stats().steps;
    let (_, curve, _) = trainer.into_parts();
    RunReport::new("multitask", None, 0, seed, curve, wers.into_iter().map(|w| vec![w]).collect(), vec![end])
}

/// One run of a memory sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub policy: SelectionPolicy,
    pub memory_fraction: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Median over seeds of `metric` for one (policy, fraction) cell.
    pub fn median_of(&self, policy: SelectionPolicy, fraction: f64, metric: impl Fn(&RunReport) -> f64) -> Option<f64> {
        let v: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.policy == policy && p.memory_fraction == fraction)
            .map(|p| metric(&p.report))
            .collect();
        median(&v)
    }

    pub fn reports(&self) -> Vec<RunReport> {
        self.points.iter().map(|p| p.report.clone()).collect()
    }

    /// WER-vs-budget table: median final WER of each task and the median
    /// averaged WER per (policy, fraction).
    pub fn table_csv(&self) -> Result<String> {
        let mut cells: Vec<(SelectionPolicy, f64)> = Vec::new();
        for p in &self.points {
            if !cells.contains(&(p.policy, p.memory_fraction)) {
                cells.push((p.policy, p.memory_fraction));
            }
        }
        cells.sort_by(|a, b| a.0.name().cmp(b.0.name()).then(a.1.total_cmp(&b.1)));
        let tasks = self.points.first().map_or(0, |p| p.report.final_matrix.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["policy".to_string(), "memory_fraction".into(), "runs".into()];
        header.extend((0..tasks).map(|t| format!("task{t}_wer")));
        header.push("averaged_wer".into());
        w.write_record(&header)?;
        for (policy, fraction) in cells {
            let runs = self
                .points
                .iter()
                .filter(|p| p.policy == policy && p.memory_fraction == fraction)
                .count();
            let mut rec = vec![policy.name().to_string(), fraction.to_string(), runs.to_string()];
            for t in 0..tasks {
                let m = self.median_of(policy, fraction, |r| r.final_wer(t).unwrap_or(f64::NAN));
                rec.push(m.map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(self.median_of(policy, fraction, |r| r.averaged_wer).map(|v| v.to_string()).unwrap_or_default());
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }
}

/// GEM runs for every (policy, memory fraction, seed), in parallel.
pub fn run_memory_sweep(
    config: &RunConfig,
    fractions: &[f64],
    policies: &[SelectionPolicy],
    seeds: &[u64],
) -> Result<SweepReport> {
    if config.method != Method::Gem {
        return Err(Error::InvalidConfig("a memory sweep needs method = \"gem\"".into()));
    }
    let jobs: Vec<(SelectionPolicy, f64, u64)> = policies
        .iter()
        .flat_map(|&p| fractions.iter().flat_map(move |&f| seeds.iter().map(move |&s| (p, f, s))))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(policy, memory_fraction, seed)| {
            let cfg = RunConfig {
                policy: Some(policy),
                memory_fraction,
                memory_frames: None,
                ..config.clone()
            };
            Ok(SweepPoint {
                policy,
                memory_fraction,
                report: run_sequential(&cfg, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points })
}

/// Runs `config` for each seed in parallel.
pub fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<Vec<RunReport>> {
    seeds.par_iter().map(|&s| run_sequential(config, s)).collect()
}
