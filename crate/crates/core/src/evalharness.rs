//! One-shot evaluation: demo-conditioned rollouts on held-out instance
//! seeds, success aggregation over checkpoints and episodes, and run
//! comparison reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{collect_episode, DemoVideo, Trajectory, DEMO_FRAMES, EVAL_SEED_START, SEED_STRIDE};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{load_checkpoint, sample_action, Checkpoint, ParamStore, Policy};
use crate::simworld::{expert_action, task_by_kind, Action, Env, Morphology, Observation, Role, TaskKind, WorldState};

/// Anything that maps the current view to an action.
pub trait Actor {
    /// `state` is available for scripted controllers; learned policies use `obs` only.
    fn act(&mut self, demo: &DemoVideo, obs: &Observation, state: &WorldState) -> Result<Action>;
}

/// Learned policy sampling from its mixture head.
pub struct PolicyActor<'a> {
    pub policy: &'a Policy,
    pub params: &'a ParamStore<f32>,
    pub rng: ChaCha8Rng,
}

impl Actor for PolicyActor<'_> {
    fn act(&mut self, demo: &DemoVideo, obs: &Observation, _state: &WorldState) -> Result<Action> {
        let mix = self.policy.act(self.params, &demo.frames, obs)?;
        Ok(sample_action(&mix, &mut self.rng))
    }
}

/// Scripted expert behind the actor interface.
pub struct ExpertActor;

impl Actor for ExpertActor {
    fn act(&mut self, _demo: &DemoVideo, _obs: &Observation, state: &WorldState) -> Result<Action> {
        Ok(expert_action(state, state.variation()))
    }
}

/// Closed-loop imitator episode conditioned on `demo`.
pub fn rollout(actor: &mut dyn Actor, demo: &DemoVideo, task: TaskKind, variation: usize, seed: u64) -> Result<(bool, Trajectory)> {
    if demo.role != Role::Demonstrator {
        return Err(Error::Protocol("rollout demos must come from the demonstrator".into()));
    }
    if demo.task != task || demo.variation_id != variation {
        return Err(Error::Protocol("demo and rollout variation differ".into()));
    }
    if demo.seed == seed {
        return Err(Error::Protocol(format!("demo and rollout share instance seed {seed}")));
    }
    let spec = task_by_kind(task);
    let mut env = Env::new(spec, variation, seed, &Morphology::imitator())?;
    let mut frames = vec![env.render()];
    let mut actions = Vec::new();
    while !env.done() {
        let a = actor.act(demo, frames.last().expect("frame"), &env.state)?;
        env.step(a)?;
        actions.push(a);
        frames.push(env.render());
    }
    let success = env.state.success;
    Ok((success, Trajectory { task, variation_id: variation, seed, role: Role::Imitator, success, frames, actions }))
}

/// Instance and demo seeds of evaluation episode `index`.
pub fn eval_seeds(index: u64) -> (u64, u64) {
    let base = EVAL_SEED_START + index * 2 * SEED_STRIDE;
    (base, base + SEED_STRIDE)
}

/// Fresh demonstrator demo for an evaluation episode.
pub fn eval_demo(task: TaskKind, variation: usize, demo_seed: u64) -> Result<DemoVideo> {
    Ok(collect_episode(task, variation, demo_seed, &Morphology::demonstrator())?.to_demo(DEMO_FRAMES))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    #[default]
    SingleTask,
    MultiTask,
    NovelTask,
    Finetune,
    NoTraining,
}

impl Regime {
    pub const ALL: [Regime; 5] =
        [Regime::SingleTask, Regime::MultiTask, Regime::NovelTask, Regime::Finetune, Regime::NoTraining];

    pub fn name(self) -> &'static str {
        match self {
            Regime::SingleTask => "single-task",
            Regime::MultiTask => "multi-task",
            Regime::NovelTask => "novel-task",
            Regime::Finetune => "finetune",
            Regime::NoTraining => "no-training",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub regime: Regime,
    pub train_tasks: Vec<TaskKind>,
    pub eval_tasks: Vec<TaskKind>,
    pub episodes: usize,
    pub checkpoints: usize,
    /// Offset into the held-out episode index space.
    pub seed_offset: u64,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.eval_tasks.is_empty() || self.episodes == 0 || self.checkpoints == 0 {
            return Err(Error::Config("protocol needs eval tasks, episodes and checkpoints".into()));
        }
        let overlap = self.eval_tasks.iter().any(|t| self.train_tasks.contains(t));
        match self.regime {
            Regime::NovelTask if overlap => Err(Error::Protocol(format!(
                "novel-task evaluation on {:?} but the model was trained on {:?}",
                self.eval_tasks, self.train_tasks
            ))),
            Regime::SingleTask if self.train_tasks.len() != 1 || self.eval_tasks != self.train_tasks => {
                Err(Error::Protocol("single-task evaluation must use the single training task".into()))
            }
            Regime::MultiTask if self.eval_tasks.iter().any(|t| !self.train_tasks.contains(t)) => {
                Err(Error::Protocol("multi-task evaluation covers training tasks only".into()))
            }
            Regime::Finetune if self.eval_tasks.iter().any(|t| !self.train_tasks.contains(t)) => {
                Err(Error::Protocol("fine-tune evaluation covers the fine-tuned task only".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: TaskKind,
    pub variation: usize,
    pub mean_pct: f64,
    pub std_pct: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub regime: Regime,
    pub train_tasks: Vec<TaskKind>,
    pub eval: Vec<EvalRow>,
    pub config_hash: String,
    pub checkpoints: Vec<String>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl SuccessReport {
    /// Mean success percent over the rows of `task`.
    pub fn task_mean(&self, task: TaskKind) -> Option<f64> {
        let rows: Vec<&EvalRow> = self.eval.iter().filter(|r| r.task == task).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.mean_pct).sum::<f64>() / rows.len() as f64)
    }

    pub fn overall_mean(&self) -> f64 {
        self.eval.iter().map(|r| r.mean_pct).sum::<f64>() / self.eval.len().max(1) as f64
    }
}

/// Mean and population standard deviation in percent.
pub fn success_stats(outcomes: &[bool]) -> (f64, f64) {
    let n = outcomes.len().max(1) as f64;
    let xs: Vec<f64> = outcomes.iter().map(|&s| if s { 100.0 } else { 0.0 }).collect();
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn config_hash(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Outcomes and instance seeds of one (task, variation) cell.
pub type Cell = (TaskKind, usize, Vec<bool>, Vec<u64>);

/// Runs every `(checkpoint, variation, episode)` cell. `make_actor` builds
/// the actor for checkpoint `c` and episode index `e`.
pub fn evaluate_with<'a, F>(protocol: &Protocol, n_checkpoints: usize, exec: Exec, make_actor: F) -> Result<Vec<Cell>>
where
    F: Fn(usize, u64) -> Result<Box<dyn Actor + Send + 'a>> + Sync + Send,
{
    let mut cells = Vec::new();
    for &task in &protocol.eval_tasks {
        for v in 0..task_by_kind(task).variations.len() {
            for c in 0..n_checkpoints {
                for e in 0..protocol.episodes {
                    cells.push((task, v, c, e));
                }
            }
        }
    }
    let outcomes = exec.map_slice(&cells, |&(task, v, c, e)| -> Result<(bool, u64)> {
        let index = protocol.seed_offset + (c * protocol.episodes + e) as u64;
        let (seed, demo_seed) = eval_seeds(index);
        let demo = eval_demo(task, v, demo_seed)?;
        debug_assert!(seed >= EVAL_SEED_START && demo.seed >= EVAL_SEED_START);
        let mut actor = make_actor(c, index)?;
        let (ok, _) = rollout(actor.as_mut(), &demo, task, v, seed)?;
        Ok((ok, seed))
    });
    let mut grouped: BTreeMap<(TaskKind, usize), (Vec<bool>, Vec<u64>)> = BTreeMap::new();
    for ((task, v, _, _), r) in cells.iter().zip(outcomes) {
        let (ok, seed) = r?;
        let slot = grouped.entry((*task, *v)).or_default();
        slot.0.push(ok);
        slot.1.push(seed);
    }
    Ok(grouped.into_iter().map(|((t, v), (o, s))| (t, v, o, s)).collect())
}

fn report_from(protocol: &Protocol, checkpoints: Vec<String>, cells: Vec<Cell>, hash: String) -> SuccessReport {
    let mut seeds = Vec::new();
    let eval = cells
        .into_iter()
        .map(|(task, variation, outcomes, s)| {
            seeds.extend(s);
            let (mean_pct, std_pct) = success_stats(&outcomes);
            EvalRow { task, variation, mean_pct, std_pct, n: outcomes.len() }
        })
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    SuccessReport {
        regime: protocol.regime,
        train_tasks: protocol.train_tasks.clone(),
        eval,
        config_hash: hash,
        checkpoints,
        episodes: protocol.episodes,
        seeds,
    }
}

/// Evaluates loaded checkpoints (or, for `no-training`, the given untrained
/// parameters) under `protocol`.
pub fn evaluate(protocol: &Protocol, checkpoints: &[(String, Checkpoint)], exec: Exec) -> Result<SuccessReport> {
    protocol.validate()?;
    if checkpoints.len() < protocol.checkpoints {
        return Err(Error::Data(format!(
            "protocol needs {} checkpoints, found {}",
            protocol.checkpoints,
            checkpoints.len()
        )));
    }
    let used = &checkpoints[checkpoints.len() - protocol.checkpoints..];
    for (name, c) in used {
        if protocol.regime != Regime::NoTraining {
            let trained: Vec<TaskKind> = c.meta.tasks.clone();
            if protocol.regime == Regime::NovelTask && protocol.eval_tasks.iter().any(|t| trained.contains(t)) {
                return Err(Error::Protocol(format!("checkpoint {name} was trained on an evaluation task")));
            }
        }
    }
    let policies: Vec<Policy> = used.iter().map(|(_, c)| Policy::new(c.meta.model)).collect::<Result<_>>()?;
    for (p, (_, c)) in policies.iter().zip(used) {
        p.check_params(&c.params)?;
    }
    let cells = evaluate_with(protocol, used.len(), exec, |c, index| {
        Ok(Box::new(PolicyActor {
            policy: &policies[c],
            params: &used[c].1.params,
            rng: ChaCha8Rng::seed_from_u64(index ^ 0x5eed),
        }) as Box<dyn Actor + Send + '_>)
    })?;
    let hash = config_hash(&used.iter().map(|(_, c)| &c.meta).collect::<Vec<_>>());
    Ok(report_from(protocol, used.iter().map(|(n, _)| n.clone()).collect(), cells, hash))
}

/// Same grid with the scripted expert in place of the policy.
pub fn evaluate_expert(protocol: &Protocol, exec: Exec) -> Result<SuccessReport> {
    let cells = evaluate_with(protocol, protocol.checkpoints, exec, |_, _| Ok(Box::new(ExpertActor) as Box<dyn Actor + Send + '_>))?;
    Ok(report_from(protocol, vec!["expert".into()], cells, config_hash(&"expert")))
}

/// Success percent per task of one parameter snapshot, used for training curves.
pub fn quick_success(policy: &Policy, params: &ParamStore<f32>, tasks: &[TaskKind], episodes: usize, exec: Exec) -> Result<BTreeMap<TaskKind, f64>> {
    let protocol = Protocol {
        regime: Regime::MultiTask,
        train_tasks: tasks.to_vec(),
        eval_tasks: tasks.to_vec(),
        episodes,
        checkpoints: 1,
        seed_offset: 0,
    };
    let cells = evaluate_with(&protocol, 1, exec, |_, index| {
        Ok(Box::new(PolicyActor { policy, params, rng: ChaCha8Rng::seed_from_u64(index ^ 0x5eed) }) as Box<dyn Actor + Send + '_>)
    })?;
    let mut per_task: BTreeMap<TaskKind, Vec<bool>> = BTreeMap::new();
    for (t, _, o, _) in cells {
        per_task.entry(t).or_default().extend(o);
    }
    Ok(per_task.into_iter().map(|(t, o)| (t, success_stats(&o).0)).collect())
}

/// Checkpoint files of a run directory, oldest first.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = run_dir.join("checkpoints");
    let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads the last `n` checkpoints of a run (or a single checkpoint file).
pub fn load_last_checkpoints(path: &Path, n: usize) -> Result<Vec<(String, Checkpoint)>> {
    let files = if path.is_file() { vec![path.to_path_buf()] } else { list_checkpoints(path)? };
    if files.is_empty() {
        return Err(Error::Data(format!("no checkpoints under {}", path.display())));
    }
    let start = files.len().saturating_sub(n);
    files[start..]
        .iter()
        .map(|f| Ok((f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), load_checkpoint(f)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub reports: Vec<SuccessReport>,
    /// `(step, success percent)` from training-time evaluation, sorted by step.
    pub curve: Vec<(u64, f64)>,
    pub data_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<String>,
    /// Row key `task/regime` to one cell per run.
    pub rows: BTreeMap<String, Vec<Option<f64>>>,
    pub curves: BTreeMap<String, Vec<(u64, f64)>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Reads the reports and metrics curve of one run directory.
pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "run directory missing")));
    }
    let mut reports = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    for p in names {
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("report") && name.ends_with(".json") {
            reports.push(read_json::<SuccessReport>(&p)?);
        }
    }
    let mut curve = Vec::new();
    let metrics = dir.join("metrics.jsonl");
    if metrics.exists() {
        let text = std::fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| Error::format(&metrics, format!("line {}: {e}", i + 1)))?;
            if let (Some(step), Some(eval)) = (v["step"].as_u64(), v["eval"].as_object()) {
                let vals: Vec<f64> = eval.values().filter_map(|x| x.as_f64()).collect();
                if !vals.is_empty() {
                    curve.push((step, vals.iter().sum::<f64>() / vals.len() as f64));
                }
            }
        }
    }
    if reports.is_empty() && curve.is_empty() {
        return Err(Error::format(dir, "run directory has neither reports nor evaluation metrics"));
    }
    curve.sort_by_key(|c| c.0);
    let config = dir.join("config.resolved");
    let data_fraction = std::fs::read_to_string(&config).ok().and_then(|t| {
        t.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "train.data_fraction")
            .and_then(|(_, v)| v.trim().parse().ok())
    });
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    Ok(RunSummary { name, reports, curve, data_fraction })
}

/// Aligns runs into one table keyed by `task/regime`, plus curves.
pub fn compare(runs: &[RunSummary]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Data("report needs at least one run".into()));
    }
    let mut keys = std::collections::BTreeSet::new();
    for r in runs {
        for rep in &r.reports {
            for t in rep.eval.iter().map(|e| e.task) {
                keys.insert((t, rep.regime));
            }
        }
    }
    let mut rows = BTreeMap::new();
    for (task, regime) in keys {
        let cells = runs
            .iter()
            .map(|r| r.reports.iter().rev().find(|rep| rep.regime == regime).and_then(|rep| rep.task_mean(task)))
            .collect();
        rows.insert(format!("{task}/{}", regime.name()), cells);
    }
    let curves = runs
        .iter()
        .filter(|r| !r.curve.is_empty())
        .map(|r| {
            let key = match r.data_fraction {
                Some(f) => format!("{} (fraction {f})", r.name),
                None => r.name.clone(),
            };
            (key, r.curve.clone())
        })
        .collect();
    Ok(Comparison { runs: runs.iter().map(|r| r.name.clone()).collect(), rows, curves })
}

/// Fixed-width text rendering of a [`Comparison`].
pub fn render_table(c: &Comparison) -> String {
    let key_w = c.rows.keys().map(String::len).max().unwrap_or(4).max(4);
    let col_w: Vec<usize> = c.runs.iter().map(|r| r.len().max(7)).collect();
    let mut out = format!("{:<key_w$}", "task");
    for (r, w) in c.runs.iter().zip(&col_w) {
        let _ = write!(out, "  {r:>w$}");
    }
    out.push('\n');
    for (k, cells) in &c.rows {
        let _ = write!(out, "{k:<key_w$}");
        for (v, w) in cells.iter().zip(&col_w) {
            match v {
                Some(x) => {
                    let _ = write!(out, "  {:>w$}", format!("{x:.1}"));
                }
                None => {
                    let _ = write!(out, "  {:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    for (name, curve) in &c.curves {
        let _ = writeln!(out, "\ncurve {name}");
        for (step, s) in curve {
            let _ = writeln!(out, "  {step:>8}  {s:6.1}");
        }
    }
    out
}
