//! Composite-loss optimisation: two-level task-balanced averaging, Adam with
//! global-norm clipping, EMA target maintenance, checkpoint series and
//! fine-tuning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{anchor_rows, init_contrast_params, positive_indices, site_loss, ContrastConfig, Site, TargetNetwork};
use crate::datagen::{augment, make_batch, AugmentConfig, Batch, Dataset, DatasetManifest, TRAIN_WINDOW};
use crate::error::{Error, Result};
use crate::evalharness::quick_success;
use crate::exec::Exec;
use crate::model::{action_bins, save_checkpoint, Bound, Checkpoint, CheckpointMeta, Depth, ModelConfig, ParamStore, Policy};
use crate::simworld::{Observation, TaskKind};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rep: f64,
    pub bc: f64,
    pub inv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rep: 1.0, bc: 1.0, inv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rep", self.rep), ("bc", self.bc), ("inv", self.inv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// `λ_rep·rep + λ_bc·bc + λ_inv·inv`, rejecting non-finite components.
pub fn total_loss(w: &LossWeights, rep: f64, bc: f64, inv: f64) -> Result<f64> {
    for (name, v) in [("rep", rep), ("bc", bc), ("inv", inv)] {
        if !v.is_finite() {
            return Err(Error::Divergence(format!(
                "loss component {name} is {v} (rep {rep}, bc {bc}, inv {inv})"
            )));
        }
    }
    let term = |lambda: f64, v: f64| if lambda == 0.0 { 0.0 } else { lambda * v };
    Ok(term(w.rep, rep) + term(w.bc, bc) + term(w.inv, inv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub window: usize,
    pub steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    /// Rollouts per variation at each evaluation interval; 0 disables.
    pub eval_episodes: usize,
    pub log_interval: u64,
    pub tasks: Vec<TaskKind>,
    pub weights: LossWeights,
    pub contrast: ContrastConfig,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub data_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            batch_size: 30,
            window: TRAIN_WINDOW,
            steps: 5000,
            seed: 0,
            eval_interval: 500,
            eval_episodes: 0,
            log_interval: 10,
            tasks: vec![TaskKind::Reach],
            weights: LossWeights::default(),
            contrast: ContrastConfig::default(),
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            data_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.contrast.validate(self.model.variant)?;
        self.weights.validate()?;
        self.augment.validate()?;
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be positive and betas in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("clip norm and adam epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.steps == 0 || self.eval_interval == 0 || self.log_interval == 0 {
            return Err(Error::Config("batch size, steps, eval and log intervals must be positive".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("the observation window needs at least 2 frames".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("train.tasks is empty".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {} outside (0, 1]", self.data_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub bc: f64,
    pub inv: f64,
    pub rep: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub task: BTreeMap<String, TaskLosses>,
    pub total: f64,
    pub wall_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<BTreeMap<String, f64>>,
}

/// Per-sample weights giving each task equal mass, each variation equal mass
/// within its task and each sample equal mass within its variation.
pub fn sample_weights(keys: &[(TaskKind, usize)]) -> Vec<f64> {
    let mut per_var: BTreeMap<(TaskKind, usize), usize> = BTreeMap::new();
    for k in keys {
        *per_var.entry(*k).or_default() += 1;
    }
    let mut vars_in_task: BTreeMap<TaskKind, usize> = BTreeMap::new();
    for (t, _) in per_var.keys() {
        *vars_in_task.entry(*t).or_default() += 1;
    }
    let n_tasks = vars_in_task.len() as f64;
    keys.iter()
        .map(|k| 1.0 / (n_tasks * vars_in_task[&k.0] as f64 * per_var[k] as f64))
        .collect()
}

/// Two-level mean of per-sample `values` for every task in `keys`.
pub fn task_means(keys: &[(TaskKind, usize)], values: &[f64]) -> BTreeMap<TaskKind, f64> {
    let w = sample_weights(keys);
    let n_tasks = keys.iter().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().len() as f64;
    let mut out = BTreeMap::new();
    for ((k, wi), v) in keys.iter().zip(&w).zip(values) {
        *out.entry(k.0).or_insert(0.0) += wi * n_tasks * v;
    }
    out
}

/// A batch turned into tensors and integer targets.
#[derive(Clone, Debug)]
pub struct Prepared<R> {
    pub batch: usize,
    pub demo_frames: usize,
    pub window: usize,
    pub keys: Vec<(TaskKind, usize)>,
    /// View 1: `[B*Td, H, W, 3]` and `[B*To, H, W, 3]`.
    pub demo: Tensor<R>,
    pub obs: Tensor<R>,
    /// Independently augmented view 2 for the target network.
    pub demo2: Option<Tensor<R>>,
    pub obs2: Option<Tensor<R>>,
    /// `[B*To*3]` action bins and `[B*(To-1)*3]` inverse-dynamics bins.
    pub act_bins: Vec<u8>,
    pub inv_bins: Vec<u8>,
    pub positives: Vec<usize>,
    pub weights: Vec<f64>,
}

fn view<R: Real>(batch: &Batch, aug: &AugmentConfig, model: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<(Tensor<R>, Tensor<R>)> {
    let mut demo: Vec<Observation> = Vec::new();
    let mut obs: Vec<Observation> = Vec::new();
    for s in &batch.slots {
        demo.extend(augment(&s.demo.frames, aug, rng));
        obs.extend(augment(&s.obs, aug, rng));
    }
    let (h, w) = (model.image_h, model.image_w);
    Ok((
        crate::model::frames_tensor(&demo.iter().collect::<Vec<_>>(), h, w)?,
        crate::model::frames_tensor(&obs.iter().collect::<Vec<_>>(), h, w)?,
    ))
}

/// Augments, tensorises and draws contrastive positives for `batch`.
pub fn prepare<R: Real>(batch: &Batch, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Prepared<R>> {
    let b = batch.len();
    let td = cfg.model.demo_frames;
    let to = batch.window;
    for s in &batch.slots {
        if s.demo.frames.len() != td || s.obs.len() != to || s.actions.len() != to {
            return Err(Error::Shape(format!(
                "slot has {} demo frames, {} observations and {} actions; expected {td}, {to}, {to}",
                s.demo.frames.len(),
                s.obs.len(),
                s.actions.len()
            )));
        }
    }
    let (demo, obs) = view(batch, &cfg.augment, &cfg.model, rng)?;
    let (demo2, obs2) = if cfg.contrast.enabled() {
        let (d, o) = view(batch, &cfg.augment, &cfg.model, rng)?;
        (Some(d), Some(o))
    } else {
        (None, None)
    };
    let mut act_bins = Vec::with_capacity(b * to * 3);
    let mut inv_bins = Vec::with_capacity(b * (to - 1) * 3);
    for s in &batch.slots {
        for (t, a) in s.actions.iter().enumerate() {
            let bins = action_bins(a);
            act_bins.extend_from_slice(&bins);
            if t + 1 < to {
                inv_bins.extend_from_slice(&bins);
            }
        }
    }
    let positives = if cfg.contrast.enabled() { positive_indices(b, td, to, &cfg.contrast, rng) } else { Vec::new() };
    let keys: Vec<(TaskKind, usize)> = batch.slots.iter().map(|s| (s.task, s.variation_id)).collect();
    let weights = sample_weights(&keys);
    Ok(Prepared { batch: b, demo_frames: td, window: to, keys, demo, obs, demo2, obs2, act_bins, inv_bins, positives, weights })
}

/// Tape handles of the composed objective. Component vectors are per sample.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub bc: Var,
    pub inv: Var,
    pub rep: Option<Var>,
}

/// Builds the weighted objective on `g`. `target` must be bound without
/// gradients and is required whenever the contrastive term is enabled.
pub fn compose_loss<R: Real>(
    g: &mut Graph<R>,
    policy: &Policy,
    online: &Bound,
    target: Option<&Bound>,
    p: &Prepared<R>,
    contrast: &ContrastConfig,
    weights: &LossWeights,
) -> Result<LossParts> {
    let (b, to) = (p.batch, p.window);
    let layout = policy.config.layout();
    let demo = g.constant(p.demo.clone());
    let obs = g.constant(p.obs.clone());
    let f = policy.forward(g, online, demo, obs, b, Depth::Full)?;
    let pooled = f.obs_post.expect("full depth");

    let raw = policy.action_head(g, online, pooled);
    let nll = g.mixture_nll(raw, &p.act_bins, layout);
    let nll = g.reshape(nll, &[b, to]);
    let bc = g.mean_axis(nll, 1);

    let raw_inv = policy.inverse_head(g, online, pooled, b)?;
    let nll = g.mixture_nll(raw_inv, &p.inv_bins, layout);
    let nll = g.reshape(nll, &[b, to - 1]);
    let inv = g.mean_axis(nll, 1);

    let rep = if contrast.enabled() {
        let target = target.ok_or_else(|| Error::Contract("contrastive loss needs a target network".into()))?;
        let (d2, o2) = match (&p.demo2, &p.obs2) {
            (Some(d), Some(o)) => (g.constant(d.clone()), g.constant(o.clone())),
            _ => return Err(Error::Contract("contrastive loss needs a second augmented view".into())),
        };
        let tf = policy.forward(g, target, d2, o2, b, contrast.target_depth())?;
        let mut acc: Option<Var> = None;
        for &site in contrast.sites() {
            let (on, tg) = match site {
                Site::Pre => (anchor_rows(g, f.demo_pre, f.obs_pre, b), anchor_rows(g, tf.demo_pre, tf.obs_pre, b)),
                Site::Post => {
                    let missing = || Error::Config("post-attention contrast needs an attention context".into());
                    let on = anchor_rows(g, f.demo_post.ok_or_else(missing)?, f.obs_post.ok_or_else(missing)?, b);
                    let tg = anchor_rows(g, tf.demo_post.ok_or_else(missing)?, tf.obs_post.ok_or_else(missing)?, b);
                    (on, tg)
                }
            };
            let l = site_loss(g, online, target, site, on, tg, &p.positives, contrast, b)?;
            acc = Some(match acc {
                Some(a) => g.add(a, l),
                None => l,
            });
        }
        acc
    } else {
        None
    };

    let wbc = g.scale(bc, weights.bc);
    let winv = g.scale(inv, weights.inv);
    let mut per_sample = g.add(wbc, winv);
    if let Some(r) = rep {
        let wr = g.scale(r, weights.rep);
        per_sample = g.add(per_sample, wr);
    }
    let w = g.constant(Tensor::new(&[b], p.weights.iter().map(|&x| R::c(x)).collect()));
    let weighted = g.mul(per_sample, w);
    let total = g.sum_all(weighted);
    Ok(LossParts { total, bc, inv, rep })
}

/// Adam state, one moment pair per parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Clips `grads` to global norm `clip`, then applies one update. Returns
    /// the pre-clip norm.
    pub fn step<R: Real>(&mut self, params: &mut ParamStore<R>, grads: &[(usize, Tensor<R>)], clip: f64) -> Result<f64> {
        let norm = grads.iter().map(|(_, g)| g.sum_sq()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Divergence(format!("gradient norm is {norm}")));
        }
        let scale = if norm > clip { clip / norm } else { 1.0 };
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let p = params.tensor_mut(*id);
            let (m, v) = (&mut self.m[*id], &mut self.v[*id]);
            if m.len() != p.numel() {
                *m = vec![0.0; p.numel()];
                *v = vec![0.0; p.numel()];
            }
            for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.f64() * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *x = R::c(x.f64() - update);
            }
        }
        Ok(norm)
    }
}

/// Owns the online parameters, target network, optimizer state and RNG.
pub struct Trainer {
    pub config: TrainConfig,
    pub policy: Policy,
    pub params: ParamStore<f32>,
    pub target: Option<TargetNetwork<f32>>,
    pub adam: Adam,
    pub step: u64,
    rng: ChaCha8Rng,
    started: Instant,
}

impl Trainer {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let policy = Policy::new(config.model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = policy.init_params::<f32>(&mut rng);
        init_contrast_params(&mut params, &config.contrast, config.model.channels, &mut rng);
        let target = TargetNetwork::from_online(&params, &config.contrast);
        let adam = Adam::new(config.lr, config.beta1, config.beta2, config.adam_eps);
        Ok(Trainer { config, policy, params, target, adam, step: 0, rng, started: Instant::now() })
    }

    /// Continues from pretrained parameters. The architecture comes from the
    /// checkpoint; contrastive heads it lacks are initialised fresh.
    pub fn from_checkpoint(mut config: TrainConfig, ckpt: &Checkpoint) -> Result<Trainer> {
        config.model = ckpt.meta.model;
        config.validate()?;
        let policy = Policy::new(config.model)?;
        policy.check_params(&ckpt.params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fresh = ParamStore::new();
        init_contrast_params(&mut fresh, &config.contrast, config.model.channels, &mut rng);
        let mut params = ckpt.params.subset(|n| !n.starts_with("contrast."));
        for (name, t) in fresh.iter() {
            match ckpt.params.get(name) {
                Some(old) if old.shape() == t.shape() => params.insert(name, old.clone()),
                _ => params.insert(name, t.clone()),
            };
        }
        let mut target = TargetNetwork::from_online(&params, &config.contrast);
        if let (Some(t), Some(saved)) = (target.as_mut(), ckpt.target.as_ref()) {
            for (i, name) in t.params.names().to_vec().iter().enumerate() {
                if let Some(s) = saved.get(name).filter(|s| s.shape() == t.params.tensor(i).shape()) {
                    *t.params.tensor_mut(i) = s.clone();
                }
            }
        }
        let adam = Adam::new(config.lr, config.beta1, config.beta2, config.adam_eps);
        Ok(Trainer { config, policy, params, target, adam, step: 0, rng, started: Instant::now() })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Draws, prepares and trains on one batch.
    pub fn step_on(&mut self, data: &Dataset) -> Result<MetricsRecord> {
        let batch = make_batch(data, self.config.batch_size, self.config.window, &mut self.rng)?;
        self.train_step(&batch)
    }

    /// One optimizer update on `batch`, followed by one EMA update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<MetricsRecord> {
        let prepared = prepare::<f32>(batch, &self.config, &mut self.rng)?;
        let mut g = Graph::new();
        let online = self.params.bind(&mut g, true);
        let target = self.target.as_ref().map(|t| t.params.bind(&mut g, false));
        let parts = compose_loss(&mut g, &self.policy, &online, target.as_ref(), &prepared, &self.config.contrast, &self.config.weights)?;

        let per_sample = |v: Var| g.value(v).data().iter().map(|x| x.f64()).collect::<Vec<f64>>();
        let bc = task_means(&prepared.keys, &per_sample(parts.bc));
        let inv = task_means(&prepared.keys, &per_sample(parts.inv));
        let rep = match parts.rep {
            Some(r) => task_means(&prepared.keys, &per_sample(r)),
            None => bc.keys().map(|&k| (k, 0.0)).collect(),
        };
        let n = bc.len() as f64;
        let mean = |m: &BTreeMap<TaskKind, f64>| m.values().sum::<f64>() / n;
        let total = total_loss(&self.config.weights, mean(&rep), mean(&bc), mean(&inv))
            .map_err(|e| Error::Divergence(format!("step {}: {e}", self.step + 1)))?;

        let grads = g.backward(parts.total);
        self.adam
            .step(&mut self.params, &grads, self.config.clip_norm)
            .map_err(|e| Error::Divergence(format!("step {}: {e}", self.step + 1)))?;
        if let Some(t) = self.target.as_mut() {
            t.ema_update(&self.params, self.config.contrast.momentum)?;
        }
        self.step += 1;
        let task = bc
            .keys()
            .map(|k| (k.name().to_string(), TaskLosses { bc: bc[k], inv: inv[k], rep: rep[k] }))
            .collect();
        Ok(MetricsRecord { step: self.step, task, total, wall_s: self.started.elapsed().as_secs_f64(), eval: None })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let extra = serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null);
        Checkpoint {
            meta: CheckpointMeta::new(self.config.model, self.step, self.config.tasks.clone(), extra),
            params: self.params.clone(),
            target: self.target.as_ref().map(|t| t.params.clone()),
        }
    }
}

/// Steps at which a run of `total` steps saves checkpoints.
pub fn checkpoint_steps(total: u64, eval_interval: u64) -> Vec<u64> {
    let gap = (total / 50).max(1);
    let mut steps: Vec<u64> = (1..=total).filter(|s| s % eval_interval == 0).collect();
    steps.extend((0..3u64).filter_map(|i| total.checked_sub(i * gap)).filter(|&s| s > 0));
    steps.sort_unstable();
    steps.dedup();
    steps
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub last: MetricsRecord,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step:08}.ckpt"))
}

/// Runs the configured number of steps, writing `metrics.jsonl` and the
/// checkpoint series under `run_dir`.
pub fn run(trainer: &mut Trainer, data: &Dataset, run_dir: &Path, exec: Exec) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let metrics = run_dir.join("metrics.jsonl");
    let file = std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    let mut out = std::io::BufWriter::new(file);
    let cfg = trainer.config.clone();
    let saves = checkpoint_steps(cfg.steps, cfg.eval_interval);
    let mut written = Vec::new();
    let mut last = None;
    for _ in 0..cfg.steps {
        let mut rec = trainer.step_on(data)?;
        let s = rec.step;
        let eval_now = s % cfg.eval_interval == 0 || s == cfg.steps;
        if eval_now && cfg.eval_episodes > 0 {
            let rates = quick_success(&trainer.policy, &trainer.params, &cfg.tasks, cfg.eval_episodes, exec)?;
            rec.eval = Some(rates.into_iter().map(|(t, v)| (t.name().to_string(), v)).collect());
        }
        if s % cfg.log_interval == 0 || eval_now || s == 1 {
            let line = serde_json::to_string(&rec).expect("metrics serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(&metrics, e))?;
            out.flush().map_err(|e| Error::io(&metrics, e))?;
        }
        if saves.binary_search(&s).is_ok() {
            let path = checkpoint_path(run_dir, s);
            save_checkpoint(&path, &trainer.checkpoint())?;
            written.push(path);
        }
        last = Some(rec);
    }
    Ok(TrainOutcome { checkpoints: written, metrics, last: last.expect("at least one step") })
}

/// Trains from scratch on the manifest's episodes for `config.tasks`.
pub fn train(config: &TrainConfig, manifest: &DatasetManifest, run_dir: &Path, exec: Exec) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let data = Dataset::load(manifest, Some(&config.tasks), config.data_fraction, exec)?;
    run(&mut trainer, &data, run_dir, exec)
}

/// Full fine-tune of `ckpt` on `task` alone at the given per-variation fraction.
pub fn finetune(
    ckpt: &Checkpoint,
    task: TaskKind,
    fraction: f64,
    config: &TrainConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
    exec: Exec,
) -> Result<TrainOutcome> {
    let cfg = finetune_config(ckpt, task, fraction, config)?;
    let mut trainer = Trainer::from_checkpoint(cfg.clone(), ckpt)?;
    let data = Dataset::load(manifest, Some(&cfg.tasks), cfg.data_fraction, exec)?;
    run(&mut trainer, &data, run_dir, exec)
}

/// Config for fine-tuning `ckpt` on `task`, rejecting checkpoints that saw it.
pub fn finetune_config(ckpt: &Checkpoint, task: TaskKind, fraction: f64, config: &TrainConfig) -> Result<TrainConfig> {
    if ckpt.meta.tasks.contains(&task) {
        return Err(Error::Protocol(format!(
            "checkpoint was trained on {task} ({:?}); fine-tuning needs a held-out task",
            ckpt.meta.tasks
        )));
    }
    Ok(TrainConfig { tasks: vec![task], data_fraction: fraction, model: ckpt.meta.model, ..config.clone() })
}
