//! `run-bench`: single studies and repeated experiments.
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, ValueEnum};
use trialforge::bench::{
    repeat_seeds, run_pruning_experiment, run_scaling_experiment, run_suite, suite, BenchReport,
    PruningConfig, ScalingConfig, SurrogateFamily, TestFunction,
};
use trialforge::storage::StorageUrl;
use trialforge::{PrunerSpec, SamplerSpec, Study, StudyOptions};

use crate::{parse_pruner, parse_sampler, parse_storage, CliError, CliResult, Direction};

pub const TRAJECTORY_HEADER: [&str; 7] = ["function", "sampler", "pruner", "n_workers", "repeat", "x", "best"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// One study in the given storage, joined if it exists.
    Study,
    /// Every sampler on every function, repeated.
    Suite,
    /// Pruners compared under a shared step budget.
    Pruning,
    /// One configuration under several worker counts.
    Scaling,
}

#[derive(Debug, Args)]
pub struct RunBenchArgs {
    #[arg(long, value_enum, default_value = "study")]
    mode: Mode,
    #[arg(long, default_value = "memory://", value_parser = parse_storage)]
    storage: StorageUrl,
    #[arg(long, visible_alias = "name", default_value = "bench")]
    study: String,
    #[arg(long, value_enum, default_value = "min")]
    direction: Direction,
    /// Test function; repeat for several. Defaults depend on the mode.
    #[arg(long = "function")]
    functions: Vec<String>,
    /// Sampler spec such as `random`, `tpe` or `mixture(tpe,cmaes,switch=40)`; repeatable.
    #[arg(long = "sampler", value_parser = parse_sampler)]
    samplers: Vec<SamplerSpec>,
    /// Pruner spec such as `nop`, `asha(r=1,eta=4,s=0)` or `median`; repeatable.
    #[arg(long = "pruner", value_parser = parse_pruner)]
    pruners: Vec<PrunerSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_trials: usize,
    #[arg(long, default_value_t = 1)]
    n_workers: usize,
    /// Worker counts for scaling mode.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    /// Learning-curve length. In study mode this switches to the surrogate objective.
    #[arg(long)]
    steps: Option<u64>,
    /// Step budget per pruning run; defaults to 36 full trials.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Stop starting trials after this many seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Write measured wall times instead of zeros.
    #[arg(long)]
    record_timing: bool,
    /// Directory for report.csv, summary.txt and trajectories.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn function(name: &str) -> CliResult<TestFunction> {
    TestFunction::by_name(name).ok_or_else(|| {
        let known: Vec<&str> = suite().iter().map(|f| f.name).collect();
        CliError::Usage(format!("unknown function {name:?} (known: {})", known.join(", ")))
    })
}

impl RunBenchArgs {
    fn functions_or(&self, default: &[&str]) -> CliResult<Vec<TestFunction>> {
        if self.functions.is_empty() {
            default.iter().map(|n| function(n)).collect()
        } else {
            self.functions.iter().map(|n| function(n)).collect()
        }
    }

    fn samplers(&self) -> Vec<SamplerSpec> {
        if self.samplers.is_empty() {
            vec![SamplerSpec::Random]
        } else {
            self.samplers.clone()
        }
    }

    fn pruners(&self) -> Vec<PrunerSpec> {
        if self.pruners.is_empty() {
            vec![PrunerSpec::Nop]
        } else {
            self.pruners.clone()
        }
    }

    fn single<T: Clone>(&self, items: Vec<T>, what: &str) -> CliResult<T> {
        match items.as_slice() {
            [one] => Ok(one.clone()),
            _ => Err(CliError::Usage(format!("{:?} mode takes exactly one {what}", self.mode))),
        }
    }

    fn seeds(&self) -> CliResult<Vec<u64>> {
        if self.repeats == 0 {
            return Err(CliError::Usage("--repeats must be at least 1".into()));
        }
        Ok(repeat_seeds(self.seed, self.repeats))
    }

    fn timeout(&self) -> CliResult<Option<Duration>> {
        self.timeout
            .map(|s| Duration::try_from_secs_f64(s).map_err(|e| CliError::Usage(format!("--timeout: {e}"))))
            .transpose()
    }
}

pub fn run_bench(args: RunBenchArgs) -> CliResult {
    match args.mode {
        Mode::Study => run_study(&args),
        Mode::Suite => {
            let functions = args.functions_or(&suite().iter().map(|f| f.name).collect::<Vec<_>>())?;
            let report = run_suite(&functions, &args.samplers(), args.n_trials, &args.seeds()?)?;
            emit(&args, &report)
        }
        Mode::Pruning => {
            let steps = args.steps.unwrap_or(128);
            let seeds = args.seeds()?;
            let mut report = BenchReport::default();
            for f in args.functions_or(&["hartmann-6d"])? {
                for sampler in args.samplers() {
                    report.merge(run_pruning_experiment(&PruningConfig {
                        family: SurrogateFamily::new(f.clone(), steps),
                        sampler,
                        pruners: args.pruners(),
                        budget: args.budget.unwrap_or(36 * steps),
                        seeds: seeds.clone(),
                    })?);
                }
            }
            emit(&args, &report)
        }
        Mode::Scaling => {
            if args.workers.contains(&0) {
                return Err(CliError::Usage("--workers entries must be at least 1".into()));
            }
            let function = args.single(args.functions_or(&["hartmann-6d"])?, "--function")?;
            let report = run_scaling_experiment(&ScalingConfig {
                family: SurrogateFamily::new(function, args.steps.unwrap_or(16)),
                sampler: args.single(args.samplers(), "--sampler")?,
                pruner: args.single(args.pruners(), "--pruner")?,
                n_trials: args.n_trials,
                n_workers: args.workers.clone(),
                seeds: args.seeds()?,
                timeout: args.timeout()?,
            })?;
            emit(&args, &report)
        }
    }
}

fn run_study(args: &RunBenchArgs) -> CliResult {
    let function = args.single(args.functions_or(&["branin-2d"])?, "--function")?;
    let options = StudyOptions {
        direction: args.direction.into(),
        sampler: args.single(args.samplers(), "--sampler")?,
        pruner: args.single(args.pruners(), "--pruner")?,
        seed: args.seed,
    };
    let storage = args.storage.open()?;
    let study = Study::create(storage, &args.study, options, true)?;
    let timeout = args.timeout()?;
    match args.steps {
        Some(steps) => {
            let family = SurrogateFamily::new(function, steps);
            study.optimize(family.objective(args.seed), args.n_trials, args.n_workers, timeout)?;
        }
        None => study.optimize(function.objective(), args.n_trials, args.n_workers, timeout)?,
    }
    let trials = study.trials()?;
    let best = study.best_trial().ok();
    let mut text = format!("study {:?}: {} trials", study.name(), trials.len());
    if let Some(best) = best {
        text += &format!(
            ", best value {} at trial {}",
            best.value.unwrap_or(f64::NAN),
            best.number
        );
    }
    println!("{text}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let file = fs::File::create(dir.join("trials.csv"))?;
        crate::export::write_trials(std::io::BufWriter::new(file), &trials)?;
    }
    Ok(())
}

pub fn write_trajectories<W: Write>(out: W, report: &BenchReport) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in &report.records {
        for &(x, best) in &r.trajectory {
            w.write_record([
                r.function.clone(),
                r.sampler.clone(),
                r.pruner.clone(),
                r.n_workers.to_string(),
                r.repeat.to_string(),
                x.to_string(),
                best.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}

fn emit(args: &RunBenchArgs, report: &BenchReport) -> CliResult {
    let summary = report.summary();
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            report.write_csv(create(&dir.join("report.csv"))?, args.record_timing)?;
            fs::write(dir.join("summary.txt"), &summary)?;
            write_trajectories(create(&dir.join("trajectories.csv"))?, report)?;
            println!("wrote {} runs to {}", report.records.len(), dir.display());
        }
        None => print!("{summary}"),
    }
    Ok(())
}
