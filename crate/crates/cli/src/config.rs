//! Run configuration: `key = value` lines with dotted keys, `#` comments,
//! strict key checking and flag overrides.

use std::path::{Path, PathBuf};

use mosaic_core::contrastive::{ContrastVariant, Placement};
use mosaic_core::evalharness::{Protocol, Regime};
use mosaic_core::model::ContextVariant;
use mosaic_core::simworld::TaskKind;
use mosaic_core::trainer::TrainConfig;
use mosaic_core::{Error, Result};

pub const DATA_ROOT_ENV: &str = "MOSAIC_DATA_ROOT";

/// Everything any command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_root: PathBuf,
    pub out: PathBuf,
    pub collect_tasks: Vec<TaskKind>,
    pub collect_episodes: usize,
    pub parallel: bool,
    pub train: TrainConfig,
    pub eval: Protocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
        RunConfig {
            seed: 0,
            data_root,
            out: PathBuf::from("runs/default"),
            collect_tasks: TaskKind::ALL.to_vec(),
            collect_episodes: 50,
            parallel: true,
            train: TrainConfig::default(),
            eval: Protocol {
                regime: Regime::SingleTask,
                train_tasks: Vec::new(),
                eval_tasks: Vec::new(),
                episodes: 10,
                checkpoints: 3,
                seed_offset: 0,
            },
        }
    }
}

/// Every accepted key, in the order the resolved config is written.
pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "data.root",
    "data.tasks",
    "data.episodes",
    "exec.parallel",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "train.clip_norm",
    "train.batch_size",
    "train.window",
    "train.steps",
    "train.eval_interval",
    "train.eval_episodes",
    "train.log_interval",
    "train.tasks",
    "train.data_fraction",
    "loss.rep",
    "loss.bc",
    "loss.inv",
    "contrastive.variant",
    "contrastive.placement",
    "contrastive.window_k",
    "contrastive.fixed_step",
    "contrastive.momentum",
    "contrastive.latent",
    "model.variant",
    "model.channels",
    "model.components",
    "model.hidden",
    "attention.heads",
    "attention.temperature",
    "attention.layers",
    "augment.translate",
    "augment.crop",
    "augment.brightness",
    "augment.contrast",
    "augment.saturation",
    "augment.blur_kernel",
    "augment.blur_sigma_min",
    "augment.blur_sigma_max",
    "eval.protocol",
    "eval.train_tasks",
    "eval.tasks",
    "eval.episodes",
    "eval.checkpoints",
    "eval.seed_offset",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn tasks(key: &str, v: &str) -> Result<Vec<TaskKind>> {
    let out = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| TaskKind::from_name(s).map_err(|e| Error::Config(format!("{key}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("{key}: empty task list")));
    }
    Ok(out)
}

/// Like [`tasks`] but empty means "take them from the checkpoint".
fn optional_tasks(key: &str, v: &str) -> Result<Vec<TaskKind>> {
    if v.trim().is_empty() {
        Ok(Vec::new())
    } else {
        tasks(key, v)
    }
}

fn task_list(t: &[TaskKind]) -> String {
    t.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(v),
            "data.root" => self.data_root = PathBuf::from(v),
            "data.tasks" => self.collect_tasks = tasks(key, v)?,
            "data.episodes" => self.collect_episodes = num(key, v)?,
            "exec.parallel" => self.parallel = flag(key, v)?,
            "train.lr" => t.lr = num(key, v)?,
            "train.beta1" => t.beta1 = num(key, v)?,
            "train.beta2" => t.beta2 = num(key, v)?,
            "train.adam_eps" => t.adam_eps = num(key, v)?,
            "train.clip_norm" => t.clip_norm = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.window" => t.window = num(key, v)?,
            "train.steps" => t.steps = num(key, v)?,
            "train.eval_interval" => t.eval_interval = num(key, v)?,
            "train.eval_episodes" => t.eval_episodes = num(key, v)?,
            "train.log_interval" => t.log_interval = num(key, v)?,
            "train.tasks" => t.tasks = tasks(key, v)?,
            "train.data_fraction" => t.data_fraction = num(key, v)?,
            "loss.rep" => t.weights.rep = num(key, v)?,
            "loss.bc" => t.weights.bc = num(key, v)?,
            "loss.inv" => t.weights.inv = num(key, v)?,
            "contrastive.variant" => t.contrast.variant = ContrastVariant::from_name(v)?,
            "contrastive.placement" => t.contrast.placement = Placement::from_name(v)?,
            "contrastive.window_k" => t.contrast.window_k = num(key, v)?,
            "contrastive.fixed_step" => t.contrast.fixed_step = num(key, v)?,
            "contrastive.momentum" => t.contrast.momentum = num(key, v)?,
            "contrastive.latent" => t.contrast.latent = num(key, v)?,
            "model.variant" => t.model.variant = ContextVariant::from_name(v)?,
            "model.channels" => t.model.channels = num(key, v)?,
            "model.components" => t.model.components = num(key, v)?,
            "model.hidden" => t.model.hidden = num(key, v)?,
            "attention.heads" => t.model.attention.heads = num(key, v)?,
            "attention.temperature" => t.model.attention.temperature = num(key, v)?,
            "attention.layers" => t.model.attention.layers = num(key, v)?,
            "augment.translate" => t.augment.translate = num(key, v)?,
            "augment.crop" => t.augment.crop = num(key, v)?,
            "augment.brightness" => t.augment.brightness = num(key, v)?,
            "augment.contrast" => t.augment.contrast = num(key, v)?,
            "augment.saturation" => t.augment.saturation = num(key, v)?,
            "augment.blur_kernel" => t.augment.blur_kernel = num(key, v)?,
            "augment.blur_sigma_min" => t.augment.blur_sigma_min = num(key, v)?,
            "augment.blur_sigma_max" => t.augment.blur_sigma_max = num(key, v)?,
            "eval.protocol" => self.eval.regime = Regime::from_name(v)?,
            "eval.train_tasks" => self.eval.train_tasks = optional_tasks(key, v)?,
            "eval.tasks" => self.eval.eval_tasks = optional_tasks(key, v)?,
            "eval.episodes" => self.eval.episodes = num(key, v)?,
            "eval.checkpoints" => self.eval.checkpoints = num(key, v)?,
            "eval.seed_offset" => self.eval.seed_offset = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "data.root" => self.data_root.display().to_string(),
            "data.tasks" => task_list(&self.collect_tasks),
            "data.episodes" => self.collect_episodes.to_string(),
            "exec.parallel" => self.parallel.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.adam_eps" => t.adam_eps.to_string(),
            "train.clip_norm" => t.clip_norm.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.window" => t.window.to_string(),
            "train.steps" => t.steps.to_string(),
            "train.eval_interval" => t.eval_interval.to_string(),
            "train.eval_episodes" => t.eval_episodes.to_string(),
            "train.log_interval" => t.log_interval.to_string(),
            "train.tasks" => task_list(&t.tasks),
            "train.data_fraction" => t.data_fraction.to_string(),
            "loss.rep" => t.weights.rep.to_string(),
            "loss.bc" => t.weights.bc.to_string(),
            "loss.inv" => t.weights.inv.to_string(),
            "contrastive.variant" => t.contrast.variant.name().to_string(),
            "contrastive.placement" => t.contrast.placement.name().to_string(),
            "contrastive.window_k" => t.contrast.window_k.to_string(),
            "contrastive.fixed_step" => t.contrast.fixed_step.to_string(),
            "contrastive.momentum" => t.contrast.momentum.to_string(),
            "contrastive.latent" => t.contrast.latent.to_string(),
            "model.variant" => t.model.variant.name().to_string(),
            "model.channels" => t.model.channels.to_string(),
            "model.components" => t.model.components.to_string(),
            "model.hidden" => t.model.hidden.to_string(),
            "attention.heads" => t.model.attention.heads.to_string(),
            "attention.temperature" => t.model.attention.temperature.to_string(),
            "attention.layers" => t.model.attention.layers.to_string(),
            "augment.translate" => t.augment.translate.to_string(),
            "augment.crop" => t.augment.crop.to_string(),
            "augment.brightness" => t.augment.brightness.to_string(),
            "augment.contrast" => t.augment.contrast.to_string(),
            "augment.saturation" => t.augment.saturation.to_string(),
            "augment.blur_kernel" => t.augment.blur_kernel.to_string(),
            "augment.blur_sigma_min" => t.augment.blur_sigma_min.to_string(),
            "augment.blur_sigma_max" => t.augment.blur_sigma_max.to_string(),
            "eval.protocol" => self.eval.regime.name().to_string(),
            "eval.train_tasks" => task_list(&self.eval.train_tasks),
            "eval.tasks" => task_list(&self.eval.eval_tasks),
            "eval.episodes" => self.eval.episodes.to_string(),
            "eval.checkpoints" => self.eval.checkpoints.to_string(),
            "eval.seed_offset" => self.eval.seed_offset.to_string(),
            _ => return None,
        })
    }

    /// The resolved config in file syntax; parsing it reproduces `self`.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.collect_episodes == 0 {
            return Err(Error::Config("data.episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.resolved");
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

/// Applies the `key = value` lines of `text`.
pub fn apply_text(cfg: &mut RunConfig, text: &str, origin: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`, got {raw:?}", i + 1)))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{origin}:{}: {m}", i + 1)),
            other => other,
        })?;
    }
    Ok(())
}

/// Defaults, then the file (if any), then `overrides` in order.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        apply_text(&mut cfg, &text, &p.display().to_string())?;
    }
    for (k, v) in overrides {
        cfg.set(k, v).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("flag --set {k}: {m}")),
            other => other,
        })?;
    }
    Ok(cfg)
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\ntrain.lr = 5e-4\ncontrastive.placement = both  # trailing\n").unwrap();
        let cfg = parse_config(Some(&p), &[("train.lr".into(), "1e-4".into())]).unwrap();
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.contrast.placement, Placement::Both);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = RunConfig::default();
        let err = apply_text(&mut cfg, "seed = 1\ncontrastiv.variant = byol\n", "f").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("contrastiv.variant") && msg.contains("f:2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_line_reports_line() {
        let mut cfg = RunConfig::default();
        let err = apply_text(&mut cfg, "\n\nnot an assignment\n", "f").unwrap_err();
        assert!(err.to_string().contains("f:3"));
    }

    #[test]
    fn defaults_are_documented_values() {
        let cfg = parse_config(None, &[]).unwrap();
        let t = &cfg.train;
        assert_eq!((t.lr, t.beta1, t.beta2, t.batch_size), (5e-4, 0.9, 0.999, 30));
        assert_eq!(t.model.components, 8);
        assert_eq!(t.model.attention.temperature, 16.0);
        assert_eq!(t.contrast.variant, ContrastVariant::RandTemp);
        assert_eq!((t.weights.rep, t.weights.bc, t.weights.inv), (1.0, 1.0, 1.0));
        assert_eq!((cfg.eval.episodes, cfg.eval.checkpoints), (10, 3));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("contrastive.variant", "byol").unwrap();
        cfg.set("train.tasks", "push,stack").unwrap();
        cfg.set("train.lr", "0.00031").unwrap();
        let mut back = RunConfig::default();
        apply_text(&mut back, &cfg.render(), "resolved").unwrap();
        assert_eq!(back, cfg);
        for k in KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }
}
