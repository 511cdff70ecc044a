use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctc_lifelong::harness::{
    aggregate_summary, merge_csv, run_memory_sweep, run_multitask, run_sequential, write_reports, DecodeMode, Method,
    RunConfig, RunReport,
};
use ctc_lifelong::lifelong::SelectionPolicy;
use ctc_lifelong::{Error, Result};

#[derive(Parser)]
#[command(name = "ctc-lifelong", version, about = "Lifelong-learning experiments for CTC sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sequential training with one method.
    Run(RunArgs),
    /// GEM runs over memory budgets and selection policies.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Memory capacities as fractions of the mean task size.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.05")]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "random,median_length")]
        policies: Vec<String>,
    },
    /// Fine-tuning baseline and multitask bound.
    Baseline(RunArgs),
    /// Merge CSV tables written by earlier runs.
    Report {
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        /// Also write median-over-seeds aggregates (summary tables only).
        #[arg(long)]
        aggregate: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed(s); comma-separated for several runs.
    #[arg(long, required = true, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, required = true)]
    out_dir: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    memory_fraction: Option<f64>,
    #[arg(long)]
    memory_frames: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kd_weight: Option<f64>,
    #[arg(long)]
    kd_temperature: Option<f64>,
    /// `greedy` or `beam_lm`.
    #[arg(long)]
    decode: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.method {
            c.method = m.parse()?;
        }
        if let Some(p) = &self.policy {
            c.policy = Some(p.parse()?);
        }
        if let Some(v) = self.memory_fraction {
            c.memory_fraction = v;
        }
        if self.memory_frames.is_some() {
            c.memory_frames = self.memory_frames;
        }
        if let Some(v) = self.epochs {
            c.epochs_per_stage = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = self.lr {
            c.optimizer.lr = v;
        }
        if let Some(v) = self.lambda {
            c.regularizer.lambda = v;
        }
        if let Some(v) = self.kd_weight {
            c.regularizer.kd_weight = v;
        }
        if let Some(v) = self.kd_temperature {
            c.regularizer.kd_temperature = v;
        }
        if let Some(d) = &self.decode {
            c.decode = match d.as_str() {
                "greedy" => DecodeMode::Greedy,
                "beam_lm" => DecodeMode::BeamLm,
                other => return Err(Error::InvalidConfig(format!("unknown decode mode `{other}`"))),
            };
        }
        c.seeds = self.seed.clone();
        c.validate()?;
        Ok(c)
    }
}

fn parallel_runs(config: &RunConfig, run: fn(&RunConfig, u64) -> Result<RunReport>) -> Result<Vec<RunReport>> {
    use rayon::prelude::*;
    config.seeds.par_iter().map(|&s| run(config, s)).collect()
}

fn finish(out_dir: &Path, config: &RunConfig, reports: &[RunReport]) -> Result<()> {
    write_reports(out_dir, reports)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml())?;
    for r in reports {
        let policy = r.policy.as_deref().map(|p| format!(" policy={p}")).unwrap_or_default();
        let rel = r
            .relative_reduction_vs_baseline
            .map(|v| format!(" rel_reduction={v:.4}"))
            .unwrap_or_default();
        println!(
            "{}{policy} budget={} seed={} averaged_wer={:.4}{rel}",
            r.method, r.budget_frames, r.seed, r.averaged_wer
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.config()?;
            let reports = parallel_runs(&config, run_sequential)?;
            finish(&args.out_dir, &config, &reports)
        }
        Command::Sweep { run, fractions, policies } => {
            let mut config = run.config()?;
            config.method = Method::Gem;
            let policies = policies
                .iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<SelectionPolicy>>>()?;
            let sweep = run_memory_sweep(&config, &fractions, &policies, &config.seeds)?;
            finish(&run.out_dir, &config, &sweep.reports())?;
            let table = sweep.table_csv()?;
            print!("{table}");
            std::fs::write(run.out_dir.join("sweep.csv"), table)?;
            Ok(())
        }
        Command::Baseline(args) => {
            let config = args.config()?.with_method(Method::Finetune, None);
            let finetune = parallel_runs(&config, run_sequential)?;
            let mut multitask = parallel_runs(&config, run_multitask)?;
            for (m, f) in multitask.iter_mut().zip(&finetune) {
                m.compare_to(f)?;
            }
            let all: Vec<RunReport> = finetune.into_iter().chain(multitask).collect();
            finish(&args.out_dir, &config, &all)
        }
        Command::Report { out, aggregate, inputs } => {
            let tables = inputs
                .iter()
                .map(std::fs::read_to_string)
                .collect::<std::io::Result<Vec<_>>>()?;
            let merged = merge_csv(&tables)?;
            std::fs::write(&out, &merged)?;
            if let Some(path) = aggregate {
                std::fs::write(path, aggregate_summary(&merged)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
