//! The `peginsert` command line.
//!
//! Configuration layers, lowest first: built-in defaults, `--config FILE`,
//! `PEGINSERT_*` environment variables (nested keys joined with `__`, e.g.
//! `PEGINSERT_SAC__BATCH_SIZE=128`), then flags.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use peginsert_core::env::EnvConfig;

use crate::config::{env_overrides, load_layered, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, Actor, MeanAction, ScriptedInsert};
use crate::experiments::{paired_variants, run_ablation, run_transfer, Variant};
use crate::metrics::REPORT_SCHEMA;
use crate::train::{load_policy, Trainer};

#[derive(Debug, Parser)]
#[command(name = "peginsert", version, about = "Learn compliant peg-in-hole insertion with SAC and an adaptive force controller")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed (replaces the configured seed list).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Environment steps to train.
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    /// Rollout workers.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print progress to stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// The policy stored in `--checkpoint`.
    Network,
    /// Straight-line insertion under position control, for sanity checks.
    Scripted,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; resumes when given a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory, model file or run directory to resume from.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a policy deterministically, optionally sweeping goal offsets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Goal-estimate offsets along the hole x axis to sweep (mm).
        #[arg(long = "offset-mm", value_name = "X", value_delimiter = ',', num_args = 1..)]
        offset_mm: Vec<f64>,
        /// Goal-estimate rotation offsets about the hole y axis to sweep (deg).
        #[arg(long = "offset-deg", value_name = "Y", value_delimiter = ',', num_args = 1..)]
        offset_deg: Vec<f64>,
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
        #[arg(long, value_enum, default_value = "network")]
        policy: PolicyKind,
    },
    /// Pretrain with randomization, then compare fine-tuning and training from
    /// scratch on a shifted target.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Configuration whose `env` section defines the target task.
        #[arg(long, value_name = "PATH")]
        target: Option<PathBuf>,
    },
    /// Train an ablated variant alongside the full model.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// full, mlp-policy, no-prev-action or no-Fg-input; repeatable.
        #[arg(long, value_name = "NAME", required = true)]
        variant: Vec<String>,
    },
    /// Render SVG plots from run directories or CSV files.
    Plot {
        /// Run directories, metrics CSVs or trace CSVs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = "plots")]
        out: PathBuf,
        /// Episodes in the return moving average.
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
    /// Compare analytic gradients with central differences on small networks.
    GradCheck {
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
    },
}

/// Configuration from all layers for commands that take [`Common`].
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_layered(common.config.as_deref(), env_overrides(std::env::vars()))?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = common.steps {
        cfg.train.total_steps = n;
    }
    if let Some(w) = common.workers {
        cfg.train.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse and run; returns the process exit code. Output goes to stdout, errors
/// to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, checkpoint } => cmd_train(&common, checkpoint.as_deref()),
        Command::Eval { common, checkpoint, offset_mm, offset_deg, episodes, policy } => {
            cmd_eval(&common, checkpoint.as_deref(), &offset_mm, &offset_deg, episodes, policy)
        }
        Command::Transfer { common, target } => cmd_transfer(&common, target.as_deref()),
        Command::Ablate { common, variant } => {
            let variants = variant.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?;
            cmd_ablate(&common, &variants)
        }
        Command::Plot { inputs, out, window } => {
            for input in &inputs {
                for f in crate::plot::plot_path(input, &out, window)? {
                    println!("{}", f.display());
                }
            }
            Ok(())
        }
        Command::GradCheck { seed } => cmd_grad_check(seed),
    }
}

fn print_summary(s: &crate::train::TrainSummary, threshold: f64) {
    println!("run       {}", s.out.display());
    println!("steps     {}", s.steps);
    println!("success   {:.2}", s.final_success());
    match s.steps_to(threshold) {
        Some(n) => println!("reached {threshold:.2} success at step {n}"),
        None => println!("did not reach {threshold:.2} success"),
    }
}

fn cmd_train(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let mut trainer = match checkpoint {
        Some(ck) => {
            if common.config.is_some() || common.seed.is_some() || common.workers.is_some() {
                return Err(HarnessError::Usage(
                    "a resumed run keeps its checkpoint's config; only --steps and --out apply".into(),
                ));
            }
            Trainer::resume(ck, common.out.as_deref(), common.steps)?
        }
        None => {
            let cfg = resolve_config(common)?;
            let out = cfg.out_dir.clone();
            Trainer::new(cfg, &out)?
        }
    };
    trainer.verbose = common.verbose;
    let threshold = trainer.config().train.success_threshold;
    let s = trainer.run()?;
    print_summary(&s, threshold);
    Ok(())
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReportRow {
    pub offset_mm: f64,
    pub offset_deg: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    /// Seconds at the nominal policy rate.
    pub mean_time_s: f64,
    /// Measured simulation wall time per episode.
    pub mean_wall_ms: f64,
    pub mean_peak_force: f64,
}

/// Evaluate `actor` at every (position, rotation) goal offset. Offsets are
/// added to the configured biases along the hole x axis and about its y axis.
pub fn eval_sweep(
    actor: &dyn Actor,
    env: &EnvConfig,
    offsets: &[(f64, f64)],
    episodes: usize,
    seed: u64,
    traces: usize,
    out: &Path,
) -> Result<Vec<EvalReportRow>> {
    let mut rows = Vec::new();
    for (k, &(mm, deg)) in offsets.iter().enumerate() {
        let mut e = env.clone();
        e.randomization.goal_position_bias[0] += mm * 1e-3;
        e.randomization.goal_orientation_bias[1] += deg.to_radians();
        let outcome = evaluate(actor, &e, episodes, seed, traces)?;
        let dir = if offsets.len() == 1 { out.join("traces") } else { out.join("traces").join(format!("offset-{k}")) };
        if traces > 0 {
            std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
            outcome.write_traces(&dir, traces)?;
        }
        let r = outcome.row(0);
        rows.push(EvalReportRow {
            offset_mm: mm,
            offset_deg: deg,
            episodes,
            success_rate: r.success_rate,
            mean_steps: r.mean_steps,
            mean_time_s: r.mean_time_s,
            mean_wall_ms: outcome.mean_wall_ms(),
            mean_peak_force: r.mean_peak_force,
        });
    }
    let path = out.join("eval_report.csv");
    let mut text = format!("{REPORT_SCHEMA}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    text.push_str(&String::from_utf8_lossy(&w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?));
    std::fs::write(&path, text).map_err(HarnessError::io(&path))?;
    Ok(rows)
}

/// All offset pairs of a sweep; a missing axis contributes zero.
pub fn offset_grid(mm: &[f64], deg: &[f64]) -> Vec<(f64, f64)> {
    let mm = if mm.is_empty() { vec![0.0] } else { mm.to_vec() };
    let deg = if deg.is_empty() { vec![0.0] } else { deg.to_vec() };
    mm.iter().flat_map(|&m| deg.iter().map(move |&d| (m, d))).collect()
}

fn cmd_eval(
    common: &Common,
    checkpoint: Option<&Path>,
    offset_mm: &[f64],
    offset_deg: &[f64],
    episodes: Option<usize>,
    policy: PolicyKind,
) -> Result<()> {
    let loaded = match (policy, checkpoint) {
        (PolicyKind::Network, None) => return Err(HarnessError::Usage("eval needs --checkpoint".into())),
        (PolicyKind::Network, Some(ck)) => Some(load_policy(ck)?),
        (PolicyKind::Scripted, _) => None,
    };
    // The checkpoint's config describes the task it was trained on; an
    // explicit --config replaces it.
    let mut cfg = match (&loaded, &common.config) {
        (Some((_, c)), None) => c.clone(),
        _ => resolve_config(common)?,
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("eval"));
    std::fs::create_dir_all(&out).map_err(HarnessError::io(&out))?;
    let n = episodes.unwrap_or(cfg.eval.episodes);
    let actor: Box<dyn Actor + '_> = match &loaded {
        Some((p, _)) => Box::new(MeanAction(p)),
        None => Box::new(ScriptedInsert),
    };
    let seed = cfg.seed().wrapping_add(cfg.eval.seed_offset);
    let rows =
        eval_sweep(actor.as_ref(), &cfg.env, &offset_grid(offset_mm, offset_deg), n, seed, cfg.eval.traces, &out)?;
    println!("{:>9} {:>9} {:>8} {:>10} {:>9} {:>9}", "offset_mm", "offset_deg", "success", "steps", "time_s", "wall_ms");
    for r in &rows {
        println!(
            "{:>9.2} {:>9.2} {:>8.2} {:>10.1} {:>9.2} {:>9.2}",
            r.offset_mm, r.offset_deg, r.success_rate, r.mean_steps, r.mean_time_s, r.mean_wall_ms
        );
    }
    println!("report    {}", out.join("eval_report.csv").display());
    Ok(())
}

fn cmd_transfer(common: &Common, target: Option<&Path>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(n) = common.steps {
        cfg.transfer.budget_steps = n;
    }
    let target_env = match target {
        Some(p) => Some(load_layered(Some(p), env_overrides([]))?.env),
        None => None,
    };
    let out = cfg.out_dir.clone();
    let outcomes = run_transfer(&cfg, target_env.as_ref(), &out, common.verbose)?;
    let fmt = |s: Option<u64>| s.map_or("-".to_string(), |n| n.to_string());
    println!("{:>6} {:>12} {:>12} {:>12}", "seed", "pretrain", "finetune", "scratch");
    for o in &outcomes {
        println!(
            "{:>6} {:>12.2} {:>12} {:>12}",
            o.seed,
            o.pretrain.final_success,
            fmt(o.finetune.steps_to_threshold),
            fmt(o.scratch.steps_to_threshold)
        );
    }
    println!("report    {}", out.join("report.csv").display());
    Ok(())
}

fn cmd_ablate(common: &Common, variants: &[Variant]) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut all = Vec::new();
    for v in variants {
        for p in paired_variants(*v) {
            if !all.contains(&p) {
                all.push(p);
            }
        }
    }
    let out = cfg.out_dir.clone();
    let rows = run_ablation(&cfg, &all, &out, common.verbose)?;
    println!("{:>16} {:>6} {:>10} {:>8} {:>8}", "variant", "seed", "to_thresh", "auc", "final");
    for r in &rows {
        let to = r.steps_to_threshold.map_or("-".to_string(), |n| n.to_string());
        println!("{:>16} {:>6} {:>10} {:>8.3} {:>8.2}", r.label, r.seed, to, r.auc, r.final_success);
    }
    println!("report    {}", out.join("report.csv").display());
    Ok(())
}

fn cmd_grad_check(seed: u64) -> Result<()> {
    let report = peginsert_core::sac::verify_gradients(seed)?;
    for (name, err) in report.entries() {
        println!("{name:<12} {err:.3e}");
    }
    let worst = report.max();
    if worst <= 1e-4 {
        println!("ok: largest relative error {worst:.3e}");
        Ok(())
    } else {
        Err(HarnessError::Config(format!("gradient check failed: largest relative error {worst:.3e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_grid_is_a_product() {
        assert_eq!(offset_grid(&[], &[]), vec![(0.0, 0.0)]);
        assert_eq!(offset_grid(&[1.0, 2.0], &[]), vec![(1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(offset_grid(&[1.0], &[3.0, 4.0]), vec![(1.0, 3.0), (1.0, 4.0)]);
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(main_with_args(["peginsert", "fly"]), 1);
        assert_eq!(main_with_args(["peginsert", "train", "--steps", "many"]), 1);
        assert_eq!(main_with_args(["peginsert", "ablate", "--variant", "nonsense"]), 1);
        assert_eq!(main_with_args(["peginsert", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing.toml");
        assert_eq!(main_with_args(["peginsert".as_ref(), "train".as_ref(), "--config".as_ref(), missing.as_os_str()]), 2);
    }
}
