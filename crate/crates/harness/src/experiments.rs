//! Paired training experiments: transfer from a randomized source scene to a
//! shifted target, and input/encoder ablations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use peginsert_core::env::EnvConfig;
use peginsert_core::nn::EncoderKind;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{EvalRow, REPORT_SCHEMA};
use crate::train::{steps_to, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Dense layers instead of the temporal convolution over the wrench window.
    MlpPolicy,
    /// Previous action zeroed in the observation.
    NoPrevAction,
    /// Desired force zeroed in the observation.
    NoFgInput,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::MlpPolicy, Variant::NoPrevAction, Variant::NoFgInput];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MlpPolicy => "mlp-policy",
            Variant::NoPrevAction => "no-prev-action",
            Variant::NoFgInput => "no-Fg-input",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            Variant::Full => {}
            Variant::MlpPolicy => cfg.net.encoder = EncoderKind::Mlp,
            Variant::NoPrevAction => cfg.env.episode.observation.hide_prev_action = true,
            Variant::NoFgInput => cfg.env.episode.observation.hide_desired_force = true,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s)).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            HarnessError::Usage(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Mean success over the evaluated span (trapezoid rule, normalized by the
/// span). A single evaluation counts as its own value.
pub fn success_auc(evals: &[EvalRow]) -> f64 {
    match evals {
        [] => 0.0,
        [only] => only.success_rate,
        [first, .., last] => {
            let span = (last.step - first.step) as f64;
            if span == 0.0 {
                return evals.iter().map(|e| e.success_rate).sum::<f64>() / evals.len() as f64;
            }
            let area: f64 = evals
                .windows(2)
                .map(|w| 0.5 * (w[0].success_rate + w[1].success_rate) * (w[1].step - w[0].step) as f64)
                .sum();
            area / span
        }
    }
}

/// One trained run inside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub steps: u64,
    /// First evaluated step at or above the success threshold.
    pub steps_to_threshold: Option<u64>,
    pub auc: f64,
    pub final_success: f64,
}

impl RunResult {
    fn from_evals(label: &str, seed: u64, steps: u64, evals: &[EvalRow], threshold: f64) -> Self {
        Self {
            label: label.to_string(),
            seed,
            steps,
            steps_to_threshold: steps_to(evals, threshold),
            auc: success_auc(evals),
            final_success: evals.last().map_or(0.0, |e| e.success_rate),
        }
    }
}

pub fn write_report(path: &Path, rows: &[RunResult]) -> Result<()> {
    let mut text = format!("{REPORT_SCHEMA}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["label", "seed", "steps", "steps_to_threshold", "auc", "final_success"])
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    text.push_str(&String::from_utf8(w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?).unwrap_or_default());
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn read_report(path: &Path) -> Result<Vec<RunResult>> {
    crate::metrics::read_rows(path, REPORT_SCHEMA)
}

fn train_one(cfg: ExperimentConfig, out: &Path, verbose: bool) -> Result<crate::train::TrainSummary> {
    let mut t = Trainer::new(cfg, out)?;
    t.verbose = verbose;
    t.run()
}

/// Train `variant` and, unless it is `full` itself, the full model under the
/// same seeds and budget. Runs land in `out/<variant>/seed-<n>`; the summary
/// goes to `out/report.csv`.
pub fn run_ablation(cfg: &ExperimentConfig, variants: &[Variant], out: &Path, verbose: bool) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &v in variants {
            let mut c = cfg.clone();
            c.seeds = vec![seed];
            v.apply(&mut c);
            let dir = out.join(v.name()).join(format!("seed-{seed}"));
            if verbose {
                eprintln!("== {v} seed {seed}");
            }
            let s = train_one(c, &dir, verbose)?;
            rows.push(RunResult::from_evals(v.name(), seed, s.steps, &s.evals, cfg.train.success_threshold));
        }
    }
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    write_report(&out.join("report.csv"), &rows)?;
    Ok(rows)
}

/// The variants an `ablate --variant v` run trains.
pub fn paired_variants(v: Variant) -> Vec<Variant> {
    if v == Variant::Full {
        vec![Variant::Full]
    } else {
        vec![Variant::Full, v]
    }
}

/// Target scene of a transfer run: stiffer surface and a systematic error in
/// the goal estimate, otherwise the configured task.
pub fn shifted_target(cfg: &ExperimentConfig) -> EnvConfig {
    let t = &cfg.transfer;
    let mut env = cfg.env.clone();
    env.scene.surface_stiffness *= t.stiffness_scale;
    env.randomization.stiffness = None;
    env.randomization.goal_position_bias = t.goal_bias;
    env
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub seed: u64,
    pub pretrain: RunResult,
    pub finetune: RunResult,
    pub scratch: RunResult,
}

/// Pretrain with randomization on the source task, then fine-tune on the
/// target and, separately, train on the target from scratch with the same
/// budget. `target` replaces the derived shifted scene when given.
pub fn run_transfer(
    cfg: &ExperimentConfig,
    target: Option<&EnvConfig>,
    out: &Path,
    verbose: bool,
) -> Result<Vec<TransferOutcome>> {
    cfg.validate()?;
    let t = &cfg.transfer;
    let target = target.cloned().unwrap_or_else(|| shifted_target(cfg));
    target.validate()?;
    let th = cfg.train.success_threshold;
    let mut outcomes = Vec::new();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let base = out.join(format!("seed-{seed}"));
        let mut source = cfg.clone();
        source.seeds = vec![seed];
        source.env.randomization = t.pretrain_randomization.clone();
        source.train.total_steps = t.pretrain_steps;
        if verbose {
            eprintln!("== pretrain seed {seed}");
        }
        let mut pre = Trainer::new(source, &base.join("pretrain"))?;
        pre.verbose = verbose;
        let ps = pre.run()?;
        let pretrain = RunResult::from_evals("pretrain", seed, ps.steps, &ps.evals, th);

        let mut tuned = cfg.clone();
        tuned.seeds = vec![seed];
        tuned.env = target.clone();
        tuned.train.total_steps = t.budget_steps;
        let scratch_cfg = tuned.clone();
        tuned.sac.warmup = t.finetune_warmup;
        if verbose {
            eprintln!("== fine-tune seed {seed}");
        }
        let mut ft = Trainer::with_agent(tuned, &base.join("finetune"), pre.agent.clone())?;
        ft.verbose = verbose;
        let fs = ft.run()?;
        let finetune = RunResult::from_evals("finetune", seed, fs.steps, &fs.evals, th);

        if verbose {
            eprintln!("== scratch seed {seed}");
        }
        let ss = train_one(scratch_cfg, &base.join("scratch"), verbose)?;
        let scratch = RunResult::from_evals("scratch", seed, ss.steps, &ss.evals, th);
        rows.extend([pretrain.clone(), finetune.clone(), scratch.clone()]);
        outcomes.push(TransferOutcome { seed, pretrain, finetune, scratch });
    }
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    write_report(&out.join("report.csv"), &rows)?;
    Ok(outcomes)
}

/// Directory of one ablation run.
pub fn ablation_run_dir(out: &Path, v: Variant, seed: u64) -> PathBuf {
    out.join(v.name()).join(format!("seed-{seed}"))
}
