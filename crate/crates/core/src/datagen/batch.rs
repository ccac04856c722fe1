use rand::seq::SliceRandom;
use rand::Rng;

use super::{sample_pair, Dataset, DemoVideo};
use crate::error::{Error, Result};
use crate::simworld::{Action, Observation, TaskKind};

/// One training sample: a demo and a contiguous observation window.
#[derive(Clone, Debug)]
pub struct Slot {
    pub task: TaskKind,
    pub variation_id: usize,
    pub demo: DemoVideo,
    pub obs: Vec<Observation>,
    /// `actions[t]` is taken at `obs[t]`.
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub slots: Vec<Slot>,
    pub window: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// `window` frames of `obs`/`actions` from `start`, padding past the end with
/// the last frame and a stationary action.
fn window_at(frames: &[Observation], actions: &[Action], start: usize, window: usize) -> (Vec<Observation>, Vec<Action>) {
    let last = frames.len() - 1;
    let hold = actions.last().map_or(-1.0, |a| a.grip);
    let obs = (start..start + window).map(|t| frames[t.min(last)].clone()).collect();
    let acts = (start..start + window)
        .map(|t| actions.get(t).copied().unwrap_or(Action::new(0.0, 0.0, hold)))
        .collect();
    (obs, acts)
}

/// Assembles `batch_size` slots spread evenly over every variation of `data`.
pub fn make_batch(data: &Dataset, batch_size: usize, window: usize, rng: &mut impl Rng) -> Result<Batch> {
    let mut keys = data.keys();
    if keys.is_empty() {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if window == 0 || batch_size == 0 {
        return Err(Error::Config("batch size and window must be positive".into()));
    }
    keys.shuffle(rng);
    let mut slots = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let (task, v) = keys[i % keys.len()];
        let (demo, traj) = sample_pair(data, task, v, rng)?;
        let n_actions = traj.actions.len();
        let start = if n_actions > window { rng.random_range(0..=n_actions - window) } else { 0 };
        let (obs, actions) = window_at(&traj.frames, &traj.actions, start, window);
        slots.push(Slot { task, variation_id: v, demo, obs, actions });
    }
    Ok(Batch { slots, window })
}
