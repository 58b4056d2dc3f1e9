//! `zoac`: train, evaluate and study zeroth-order actor-critic policies.
//!
//! Every config field can be overridden with a dotted flag naming its TOML
//! path, e.g. `--sampler.sigma 0.5` or `--critic.hidden=[64,64]`.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use zoac_core::trainer::read_metrics;
use zoac_core::{
    evaluate_policy, lqr_value_oracle, run_training, value_gap_from_episodes, Checkpoint, EnvSpec, Episode,
    GradientStudy, RunPaths, Trainer, TrainerConfig, ValueFunction, VarianceReport, ZeroValue,
};

#[derive(Parser, Debug)]
#[command(name = "zoac", version, about = "Zeroth-order actor-critic training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write metrics and checkpoints under the output directory.
    Train(TrainArgs),
    /// Noise-free evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Empirical variance of one gradient estimator next to its bound.
    VarianceCheck(VarianceArgs),
    /// ES and ZOAC gradient variance at a fixed policy over several segment counts.
    CompareEstimators(CompareArgs),
    /// Convert a metrics stream to CSV or normalized JSON Lines.
    ExportMetrics(ExportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long, conflicts_with = "resume_latest")]
    resume: Option<PathBuf>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume_latest: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Start-state seed; defaults to the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct StudyArgs {
    /// Config describing the environment, policy and sampler.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Take theta, normalizer, critic and config from a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Value function used by the ZOAC estimator.
    #[arg(long, value_enum, default_value_t = CriticChoice::Zero)]
    critic: CriticChoice,
    /// Seeds the environment states and the noise; defaults to the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report lines to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_enum)]
    estimator: Estimator,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Segments per worker to try; the rollout length is budget / segments.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 16])]
    segments: Vec<usize>,
    /// Steps per worker; defaults to the configured rollout length times segments.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// A metrics file or a run directory.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Estimator {
    Es,
    Zoac,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CriticChoice {
    Zero,
    Checkpoint,
    LqrOracle,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Jsonl,
}

/// Pulls `--section.field value` and `--section.field=value` pairs out of
/// the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter.next().with_context(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn apply_overrides(config: &mut TrainerConfig, overrides: &[(String, String)]) -> Result<()> {
    for (key, value) in overrides {
        config.set(key, value).with_context(|| format!("--{key} {value}"))?;
    }
    Ok(())
}

fn train(args: TrainArgs, overrides: &[(String, String)]) -> Result<()> {
    let mut config = TrainerConfig::load(&args.config)?;
    config.run.seed = args.seed;
    apply_overrides(&mut config, overrides)?;
    config.validate()?;
    let resume = if args.resume_latest {
        RunPaths::new(&args.out_dir).latest_checkpoint()?
    } else {
        args.resume
    };
    let summary = run_training(config, &args.out_dir, resume.as_deref())?;
    println!(
        "{}",
        json!({
            "iterations": summary.iterations,
            "env_steps": summary.env_steps,
            "final_checkpoint": summary.final_checkpoint,
            "metrics": summary.metrics,
            "last_eval_mean": summary.last_eval_mean,
        })
    );
    Ok(())
}

fn restore(path: &Path, overrides: &[(String, String)]) -> Result<Trainer> {
    let ckpt = Checkpoint::load(path)?;
    let mut config = ckpt.header.config.clone();
    apply_overrides(&mut config, overrides)?;
    Ok(Trainer::from_checkpoint(config, &ckpt)?)
}

fn eval(args: EvalArgs, overrides: &[(String, String)]) -> Result<()> {
    let trainer = restore(&args.checkpoint, overrides)?;
    let config = trainer.config();
    let seed = args.seed.unwrap_or(config.run.seed);
    let gamma = config.critic.gamma;
    let episodes = evaluate_policy(
        trainer.policy(),
        trainer.theta(),
        &config.env,
        trainer.active_normalizer(),
        args.episodes,
        seed,
    )?;
    let returns: Vec<f64> = episodes.iter().map(Episode::total_reward).collect();
    let discounted: Vec<f64> = episodes
        .iter()
        .map(|e| e.rewards_to_go(gamma).first().copied().unwrap_or(0.0))
        .collect();
    let gap = trainer.critic().map(|c| value_gap_from_episodes(c, &episodes, gamma));
    println!(
        "{}",
        json!({
            "iteration": trainer.iteration(),
            "episodes": returns.len(),
            "mean_return": returns.iter().sum::<f64>() / returns.len().max(1) as f64,
            "returns": returns,
            "discounted_returns": discounted,
            "lengths": episodes.iter().map(Episode::len).collect::<Vec<_>>(),
            "value_gap": gap,
        })
    );
    Ok(())
}

fn study_trainer(args: &StudyArgs, overrides: &[(String, String)]) -> Result<Trainer> {
    match (&args.checkpoint, &args.config) {
        (Some(path), _) => restore(path, overrides),
        (None, Some(path)) => {
            let mut config = TrainerConfig::load(path)?;
            apply_overrides(&mut config, overrides)?;
            Ok(Trainer::new(config)?)
        }
        (None, None) => {
            let mut config = TrainerConfig::default();
            apply_overrides(&mut config, overrides)?;
            Ok(Trainer::new(config)?)
        }
    }
}

fn critic_for<'a>(choice: CriticChoice, trainer: &'a Trainer) -> Result<Box<dyn ValueFunction + 'a>> {
    Ok(match choice {
        CriticChoice::Zero => Box::new(ZeroValue),
        CriticChoice::Checkpoint => match trainer.critic() {
            Some(c) => Box::new(move |x: &[f64]| c.value(x)),
            None => bail!("the run has no critic"),
        },
        CriticChoice::LqrOracle => {
            let EnvSpec::Lqr(spec) = &trainer.config().env else {
                bail!("--critic lqr-oracle needs an LQR environment");
            };
            if trainer.active_normalizer().is_some() {
                bail!("--critic lqr-oracle needs sampler.normalize_obs = false");
            }
            Box::new(lqr_value_oracle(spec, trainer.theta())?)
        }
    })
}

fn study<'a>(trainer: &'a Trainer, seed: u64, rollout_length: usize, segments: usize) -> GradientStudy<'a> {
    let config = trainer.config();
    GradientStudy {
        env: &config.env,
        policy: trainer.policy(),
        theta: trainer.theta(),
        normalizer: trainer.active_normalizer(),
        table: trainer.table(),
        workers: config.sampler.workers,
        rollout_length,
        segments_per_worker: segments,
        sigma: config.sigma(),
        gamma: config.critic.gamma,
        lambda: config.critic.lambda,
        normalize_advantages: false,
        env_seed: seed,
        noise_seed: seed.wrapping_add(1),
        threads: config.run.threads,
    }
}

fn emit(reports: &[VarianceReport], out: Option<&Path>) -> Result<()> {
    let mut lines = String::new();
    for r in reports {
        let mut value = serde_json::to_value(r)?;
        value["within_bound"] = json!(r.within_bound());
        lines.push_str(&value.to_string());
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(path) = out {
        std::fs::write(path, &lines).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn variance_check(args: VarianceArgs, overrides: &[(String, String)]) -> Result<()> {
    let trainer = study_trainer(&args.study, overrides)?;
    let config = trainer.config();
    let seed = args.study.seed.unwrap_or(config.run.seed);
    let s = study(
        &trainer,
        seed,
        config.sampler.rollout_length,
        config.sampler.segments_per_worker,
    );
    let report = match args.estimator {
        Estimator::Es => s.es_report(args.study.samples)?,
        Estimator::Zoac => {
            let critic = critic_for(args.study.critic, &trainer)?;
            s.zoac_report(critic.as_ref(), args.study.samples)?
        }
    };
    emit(&[report], args.study.out.as_deref())
}

fn compare_estimators(args: CompareArgs, overrides: &[(String, String)]) -> Result<()> {
    let trainer = study_trainer(&args.study, overrides)?;
    let config = trainer.config();
    let seed = args.study.seed.unwrap_or(config.run.seed);
    let budget = args
        .budget
        .unwrap_or(config.sampler.rollout_length * config.sampler.segments_per_worker);
    let critic = critic_for(args.study.critic, &trainer)?;
    let mut reports = Vec::new();
    for &h in &args.segments {
        if h == 0 || budget % h != 0 {
            bail!("segment count {h} does not divide the budget {budget}");
        }
        let s = study(&trainer, seed, budget / h, h);
        reports.push(s.zoac_report(critic.as_ref(), args.study.samples)?);
    }
    reports.push(study(&trainer, seed, budget, 1).es_report(args.study.samples)?);
    emit(&reports, args.study.out.as_deref())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn export_metrics(args: ExportArgs) -> Result<()> {
    let path = if args.metrics.is_dir() {
        RunPaths::new(&args.metrics).metrics
    } else {
        args.metrics
    };
    let records = read_metrics(&path)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    match args.format {
        Format::Jsonl => {
            for r in &records {
                writeln!(sink, "{}", serde_json::to_string(r)?)?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record([
                "iteration",
                "env_steps",
                "eval_mean_return",
                "critic_loss",
                "grad_norm",
                "adv_mean",
                "adv_std",
                "value_gap",
                "phi",
                "mask_usage",
                "beta",
                "wall_time",
            ])?;
            for r in &records {
                w.write_record([
                    r.iteration.to_string(),
                    r.env_steps.to_string(),
                    opt(r.eval_mean_return),
                    opt(r.critic_loss),
                    r.grad_norm.to_string(),
                    r.adv_mean.to_string(),
                    r.adv_std.to_string(),
                    opt(r.value_gap),
                    opt(r.phi),
                    opt(r.mask_usage),
                    opt(r.beta),
                    r.wall_time.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Train(a) => train(a, &overrides),
        Command::Eval(a) => eval(a, &overrides),
        Command::VarianceCheck(a) => variance_check(a, &overrides),
        Command::CompareEstimators(a) => compare_estimators(a, &overrides),
        Command::ExportMetrics(a) => {
            if !overrides.is_empty() {
                bail!("export-metrics takes no config overrides");
            }
            export_metrics(a)
        }
    }
}
