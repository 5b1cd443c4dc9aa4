//! Layered experiment configuration: built-in defaults, then a TOML file,
//! then `PEGINSERT_` environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use peginsert_core::env::EnvConfig;
use peginsert_core::nn::NetConfig;
use peginsert_core::sac::SacConfig;
use peginsert_core::sim::{PegHoleScene, RandomizationRanges};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Prefix of environment overrides. Nested keys are joined with `__`, e.g.
/// `PEGINSERT_SAC__BATCH_SIZE=128` or `PEGINSERT_TRAIN__TOTAL_STEPS=5000`.
pub const ENV_PREFIX: &str = "PEGINSERT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Environment steps between deterministic evaluations (and checkpoints).
    pub eval_every: u64,
    /// Rollout workers, each with its own environment.
    pub workers: usize,
    /// Environment steps between refreshes of the workers' policy snapshot.
    pub sync_every: u64,
    /// Stop once an evaluation reaches this success rate.
    pub stop_at_success: Option<f64>,
    /// Success rate that counts as solving the task.
    pub success_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 300_000,
            eval_every: 2_000,
            workers: 1,
            sync_every: 1,
            stop_at_success: None,
            success_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Added to the seed for the evaluation scenes, keeping them apart from
    /// the training scenes.
    pub seed_offset: u64,
    /// Trace CSVs written by `eval` (at most this many episodes).
    pub traces: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 20, seed_offset: 1_000_003, traces: 20 }
    }
}

/// Source pretraining and the shifted target of `transfer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Randomization used while pretraining on the source scene.
    pub pretrain_randomization: RandomizationRanges,
    pub pretrain_steps: u64,
    /// Step budget of both the fine-tuning and the from-scratch run.
    pub budget_steps: u64,
    /// Target surface stiffness relative to the source scene.
    pub stiffness_scale: f64,
    /// Systematic goal-estimate error on the target (m, hole frame).
    pub goal_bias: [f64; 3],
    /// Warm-up steps of random actions when fine-tuning.
    pub finetune_warmup: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        let base = ExperimentConfig::desk_randomization();
        Self {
            pretrain_randomization: RandomizationRanges {
                stiffness: Some([2.0e3, 2.0e5]),
                goal_position_bias: [0.0; 3],
                ..base
            },
            pretrain_steps: 60_000,
            budget_steps: 60_000,
            stiffness_scale: 10.0,
            goal_bias: [0.002, 0.0, 0.0],
            finetune_warmup: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// TOML file holding a `PegHoleScene`; replaces `env.scene` when set.
    pub scene_file: Option<PathBuf>,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub transfer: TransferConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The desk-scale task: a planar cuboid peg with 1 mm clearance, starting
    /// within 20 mm of the hole, pushing with 5 N.
    fn default() -> Self {
        let scene = PegHoleScene {
            planar: true,
            hole_half_width: 0.0055,
            peg_half_width: 0.005,
            ..PegHoleScene::default()
        };
        let mut env = EnvConfig { scene, randomization: Self::desk_randomization(), ..EnvConfig::default() };
        // With the full force weight, lingering in contact out-earns finishing.
        env.episode.force_weight = 0.1;
        let sac = SacConfig { batch_size: 64, capacity: 300_000, ..SacConfig::default() };
        Self {
            scene_file: None,
            env,
            sac,
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            transfer: TransferConfig::default(),
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn desk_randomization() -> RandomizationRanges {
        RandomizationRanges {
            init_position: 0.02,
            init_orientation: 0.0,
            // Wide enough that the untrained controller does not insert by
            // compliance alone.
            goal_position_noise: 0.006,
            goal_orientation_noise: 0.0,
            desired_force: [5.0, 5.0],
            stiffness: None,
            ..RandomizationRanges::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sac.validate()?;
        self.net.validate()?;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.train.workers == 0 {
            return bad("train.workers must be at least 1");
        }
        if self.train.eval_every == 0 || self.train.sync_every == 0 {
            return bad("train.eval_every and train.sync_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.train.success_threshold) {
            return bad("train.success_threshold must be in [0, 1]");
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be positive");
        }
        if !(self.transfer.stiffness_scale > 0.0) {
            return bad("transfer.stiffness_scale must be positive");
        }
        self.transfer.pretrain_randomization.validate()?;
        let net = &self.net;
        if net.action_dim != peginsert_core::env::ACTION_DIM
            || net.proprio_dim != peginsert_core::env::PROPRIO_DIM
            || net.window_len != peginsert_core::env::WINDOW_LEN
            || net.window_channels != peginsert_core::env::WINDOW_CHANNELS
        {
            return bad("net dimensions must match the environment (37 / 12x6 / 24)");
        }
        if let Some(p) = &self.scene_file {
            if !p.exists() {
                return Err(HarnessError::Config(format!("scene file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Seed of the first configured run.
    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(HarnessError::io(path))
    }
}

/// Recursively overwrite `base` with the entries of `over`.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A TOML literal, or a bare string when the text is not valid TOML.
fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Overrides from `(name, value)` pairs; only names with [`ENV_PREFIX`] count.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> toml::Value {
    let mut root = toml::Value::Table(toml::Table::new());
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        let mut leaf = parse_scalar(&raw);
        for key in path.iter().rev() {
            let mut t = toml::Table::new();
            t.insert(key.clone(), leaf);
            leaf = toml::Value::Table(t);
        }
        merge(&mut root, leaf);
    }
    root
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(HarnessError::io(path))
}

/// Defaults, then `file`, then `env` (see [`env_overrides`]).
pub fn load_layered(file: Option<&Path>, env: toml::Value) -> Result<ExperimentConfig> {
    let mut value = toml::Value::try_from(ExperimentConfig::default()).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = read_text(path)?;
        let parsed: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, toml::Value::Table(parsed));
    }
    merge(&mut value, env);
    let mut cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    if let Some(scene) = &cfg.scene_file {
        // Relative scene paths resolve against the config file's directory.
        let path = match file.and_then(Path::parent) {
            Some(dir) if scene.is_relative() && !scene.exists() => dir.join(scene),
            _ => scene.clone(),
        };
        cfg.env.scene = load_scene(&path)?;
        cfg.scene_file = Some(path);
    }
    Ok(cfg)
}

/// Read a scene file.
pub fn load_scene(path: &Path) -> Result<PegHoleScene> {
    let text = read_text(path)?;
    let scene: PegHoleScene =
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    scene.validate()?;
    Ok(scene)
}
