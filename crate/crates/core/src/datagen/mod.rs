//! Paired demonstrator/imitator episode collection, persistence, augmentation
//! and evenly mixed batch assembly.

mod augment;
mod batch;
mod disk;

pub use augment::{augment, AugmentConfig};
pub use batch::{make_batch, Batch, Slot};
pub use disk::{read_episode, write_episode};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::simworld::{expert_action, task_by_kind, Action, Env, Morphology, Observation, Role, TaskKind};

/// Frames kept from each demonstration video.
pub const DEMO_FRAMES: usize = 4;
/// Observation window length during training.
pub const TRAIN_WINDOW: usize = 7;
/// Consecutive expert failures tolerated before giving up.
pub const MAX_RETRIES: u64 = 10;
/// Seed block reserved per episode index, so retries never collide.
pub const SEED_STRIDE: u64 = 16;
/// First instance seed of the held-out evaluation range.
pub const EVAL_SEED_START: u64 = 1_000_000;

/// Recorded expert episode: `frames.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub task: TaskKind,
    pub variation_id: usize,
    pub seed: u64,
    pub role: Role,
    pub success: bool,
    pub frames: Vec<Observation>,
    pub actions: Vec<Action>,
}

/// Subsampled demonstration video.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoVideo {
    pub task: TaskKind,
    pub variation_id: usize,
    pub seed: u64,
    pub role: Role,
    pub frames: Vec<Observation>,
}

/// `count` indices spread uniformly over `0..len`, endpoints included.
pub fn demo_indices(len: usize, count: usize) -> Vec<usize> {
    if count == 1 || len <= 1 {
        return vec![0; count];
    }
    (0..count)
        .map(|i| ((i * (len - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

impl Trajectory {
    pub fn to_demo(&self, count: usize) -> DemoVideo {
        DemoVideo {
            task: self.task,
            variation_id: self.variation_id,
            seed: self.seed,
            role: self.role,
            frames: demo_indices(self.frames.len(), count).into_iter().map(|i| self.frames[i].clone()).collect(),
        }
    }
}

/// Single expert rollout from exactly `seed`, successful or not.
pub fn record_expert(task: TaskKind, variation_id: usize, seed: u64, morphology: &Morphology) -> Result<Trajectory> {
    let spec = task_by_kind(task);
    let variation = spec
        .variations
        .get(variation_id)
        .ok_or_else(|| Error::Config(format!("task {task} has no variation {variation_id}")))?;
    let mut env = Env::new(spec, variation_id, seed, morphology)?;
    let mut frames = vec![env.render()];
    let mut actions = Vec::new();
    while !env.done() {
        let a = expert_action(&env.state, variation);
        env.step(a)?;
        actions.push(a);
        frames.push(env.render());
    }
    Ok(Trajectory { task, variation_id, seed, role: morphology.role, success: env.state.success, frames, actions })
}

/// Successful expert episode starting at `seed`, moving to the next seed on failure.
pub fn collect_episode(task: TaskKind, variation_id: usize, seed: u64, morphology: &Morphology) -> Result<Trajectory> {
    for s in seed..seed + MAX_RETRIES {
        let traj = record_expert(task, variation_id, s, morphology)?;
        if traj.success {
            return Ok(traj);
        }
    }
    Err(Error::Environment(format!(
        "expert failed {MAX_RETRIES} consecutive seeds from {seed} on {task} variation {variation_id}"
    )))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub task: TaskKind,
    pub variation: usize,
    pub role: Role,
    pub index: usize,
    pub seed: u64,
    pub steps: usize,
    /// Relative to the dataset root.
    pub path: String,
}

/// Half-open seed interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn contains(&self, seed: u64) -> bool {
        (self.start..self.end).contains(&seed)
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub episodes_per_variation: usize,
    pub tasks: Vec<TaskKind>,
    pub train_seeds: SeedRange,
    pub eval_seeds: SeedRange,
    pub episodes: Vec<EpisodeEntry>,
}

impl DatasetManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(root: &Path) -> Result<DatasetManifest> {
        let path = root.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if m.train_seeds.overlaps(&m.eval_seeds) {
            return Err(Error::format(&path, "train and eval seed ranges overlap"));
        }
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Episode counts per `(task, variation, role)`.
    pub fn counts(&self) -> BTreeMap<(TaskKind, usize, Role), usize> {
        let mut out = BTreeMap::new();
        for e in &self.episodes {
            *out.entry((e.task, e.variation, e.role)).or_insert(0) += 1;
        }
        out
    }
}

fn episode_rel_path(task: TaskKind, variation: usize, role: Role, index: usize) -> String {
    format!("{}/v{}/{}/ep{:04}", task.name(), variation, role.name(), index)
}

/// Collects `episodes_per_variation` successful episodes per variation and
/// morphology for every task and writes them under `out`.
pub fn build_dataset(tasks: &[TaskKind], episodes_per_variation: usize, out: &Path, exec: Exec) -> Result<DatasetManifest> {
    if episodes_per_variation == 0 {
        return Err(Error::Config("episodes_per_variation must be positive".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Config("no tasks requested".into()));
    }
    let mut jobs = Vec::new();
    for &task in tasks {
        for v in 0..task_by_kind(task).variations.len() {
            for role in [Role::Demonstrator, Role::Imitator] {
                for index in 0..episodes_per_variation {
                    jobs.push((task, v, role, index));
                }
            }
        }
    }
    let train_end = episodes_per_variation as u64 * SEED_STRIDE;
    if train_end > EVAL_SEED_START {
        return Err(Error::Config("too many episodes for the training seed range".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results = exec.map_slice(&jobs, |&(task, v, role, index)| -> Result<EpisodeEntry> {
        let traj = collect_episode(task, v, index as u64 * SEED_STRIDE, &Morphology::of(role))?;
        let path = episode_rel_path(task, v, role, index);
        write_episode(&out.join(&path), &traj)?;
        Ok(EpisodeEntry { task, variation: v, role, index, seed: traj.seed, steps: traj.actions.len(), path })
    });
    let mut tasks = tasks.to_vec();
    tasks.sort();
    tasks.dedup();
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        episodes_per_variation,
        tasks,
        train_seeds: SeedRange { start: 0, end: train_end },
        eval_seeds: SeedRange { start: EVAL_SEED_START, end: u64::MAX },
        episodes: results.into_iter().collect::<Result<_>>()?,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Episodes of one variation, split by morphology.
#[derive(Clone, Debug, Default)]
pub struct VariationData {
    pub demonstrator: Vec<Trajectory>,
    pub imitator: Vec<Trajectory>,
}

/// In-memory training set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub variations: BTreeMap<(TaskKind, usize), VariationData>,
}

impl Dataset {
    /// Loads the episodes of `tasks` (all when `None`), keeping the first
    /// `ceil(fraction * n)` episodes of each variation and morphology.
    pub fn load(manifest: &DatasetManifest, tasks: Option<&[TaskKind]>, fraction: f64, exec: Exec) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
        }
        let keep = |t: TaskKind| tasks.is_none_or(|ts| ts.contains(&t));
        let counts = manifest.counts();
        let selected: Vec<&EpisodeEntry> = manifest
            .episodes
            .iter()
            .filter(|e| keep(e.task))
            .filter(|e| {
                let n = counts[&(e.task, e.variation, e.role)];
                e.index < (fraction * n as f64).ceil() as usize
            })
            .collect();
        if let Some(ts) = tasks {
            for t in ts {
                if !selected.iter().any(|e| e.task == *t) {
                    return Err(Error::Data(format!("dataset has no episodes for task {t}")));
                }
            }
        }
        let loaded = exec.map_slice(&selected, |e| read_episode(&manifest.root.join(&e.path)));
        let mut variations: BTreeMap<(TaskKind, usize), VariationData> = BTreeMap::new();
        for (e, traj) in selected.iter().zip(loaded) {
            let traj = traj?;
            let slot = variations.entry((e.task, e.variation)).or_default();
            match e.role {
                Role::Demonstrator => slot.demonstrator.push(traj),
                Role::Imitator => slot.imitator.push(traj),
            }
        }
        if variations.is_empty() {
            return Err(Error::Data("dataset selection is empty".into()));
        }
        Ok(Dataset { variations })
    }

    pub fn from_trajectories(trajs: impl IntoIterator<Item = Trajectory>) -> Dataset {
        let mut variations: BTreeMap<(TaskKind, usize), VariationData> = BTreeMap::new();
        for t in trajs {
            let slot = variations.entry((t.task, t.variation_id)).or_default();
            match t.role {
                Role::Demonstrator => slot.demonstrator.push(t),
                Role::Imitator => slot.imitator.push(t),
            }
        }
        Dataset { variations }
    }

    pub fn keys(&self) -> Vec<(TaskKind, usize)> {
        self.variations.keys().copied().collect()
    }

    pub fn tasks(&self) -> Vec<TaskKind> {
        let mut t: Vec<TaskKind> = self.variations.keys().map(|k| k.0).collect();
        t.dedup();
        t
    }
}

/// Draws a demonstrator demo and an imitator trajectory of the same
/// variation from distinct instance seeds.
pub fn sample_pair<'a>(
    data: &'a Dataset,
    task: TaskKind,
    variation: usize,
    rng: &mut impl Rng,
) -> Result<(DemoVideo, &'a Trajectory)> {
    let v = data
        .variations
        .get(&(task, variation))
        .ok_or_else(|| Error::Data(format!("no episodes for {task} variation {variation}")))?;
    if v.demonstrator.is_empty() || v.imitator.is_empty() {
        return Err(Error::Data(format!("{task} variation {variation} lacks one of the morphologies")));
    }
    let demo = &v.demonstrator[rng.random_range(0..v.demonstrator.len())];
    let candidates: Vec<&Trajectory> = v.imitator.iter().filter(|t| t.seed != demo.seed).collect();
    if candidates.is_empty() {
        return Err(Error::Data(format!(
            "{task} variation {variation} has no imitator episode with a seed other than {}",
            demo.seed
        )));
    }
    let traj = candidates[rng.random_range(0..candidates.len())];
    Ok((demo.to_demo(DEMO_FRAMES), traj))
}
