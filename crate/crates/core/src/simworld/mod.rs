//! Deterministic 2D tabletop benchmark: four tasks, fourteen variations,
//! seeded instances, two agent morphologies, a flat-shaded renderer and
//! scripted experts.
//!
//! The workspace is the unit square. `x` grows to the right, `y` grows
//! downwards, matching image rows.

mod expert;
mod render;
mod tasks;

pub use expert::{expert_action, expert_success_sweep, run_expert};
pub use render::{render, Observation, BACKGROUND, IMAGE_H, IMAGE_W};
pub use tasks::{registry, task_by_kind, task_by_name, EntityKind, EntitySpec, Goal, Shape, TaskKind, TaskSpec, VariationSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance within which a closing gripper attaches an object.
pub const GRASP_RADIUS: f64 = 0.03;
/// Contact distance at which a sweeping gripper pushes a free object.
pub const PUSH_RADIUS: f64 = 0.02;
/// Minimum pairwise center distance of freshly placed entities.
pub const MIN_SEPARATION: f64 = 0.08;
pub const REACH_TOLERANCE: f64 = 0.04;
pub const STACK_TOLERANCE: f64 = 0.03;
/// Displacement caps per step.
pub const IMITATOR_DELTA: f64 = 0.05;
pub const DEMONSTRATOR_DELTA: f64 = 0.045;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Demonstrator,
    Imitator,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Demonstrator => "demonstrator",
            Role::Imitator => "imitator",
        }
    }

    pub fn from_name(s: &str) -> Result<Role> {
        match s {
            "demonstrator" => Ok(Role::Demonstrator),
            "imitator" => Ok(Role::Imitator),
            other => Err(Error::Config(format!("unknown morphology {other:?}"))),
        }
    }
}

/// How an arm looks and how far it moves per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Morphology {
    pub role: Role,
    pub delta: f64,
    /// Arm base, in workspace coordinates.
    pub base: [f64; 2],
    pub link_color: [u8; 3],
    pub open_color: [u8; 3],
    pub closed_color: [u8; 3],
}

impl Morphology {
    pub fn imitator() -> Self {
        Morphology {
            role: Role::Imitator,
            delta: IMITATOR_DELTA,
            base: [0.5, 0.0],
            link_color: [95, 95, 95],
            open_color: [55, 55, 55],
            closed_color: [15, 15, 15],
        }
    }

    pub fn demonstrator() -> Self {
        Morphology {
            role: Role::Demonstrator,
            delta: DEMONSTRATOR_DELTA,
            base: [0.5, 1.0],
            link_color: [150, 105, 60],
            open_color: [200, 130, 40],
            closed_color: [120, 60, 10],
        }
    }

    pub fn of(role: Role) -> Self {
        match role {
            Role::Demonstrator => Self::demonstrator(),
            Role::Imitator => Self::imitator(),
        }
    }
}

/// `(dx, dy, grip)`, each nominally in `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f32,
    pub dy: f32,
    pub grip: f32,
}

impl Action {
    pub fn new(dx: f32, dy: f32, grip: f32) -> Self {
        Action { dx, dy, grip }
    }

    pub fn clipped(self) -> Self {
        let c = |v: f32| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Action { dx: c(self.dx), dy: c(self.dy), grip: c(self.grip) }
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.dx, self.dy, self.grip]
    }

    pub fn from_array(a: [f32; 3]) -> Self {
        Action { dx: a[0], dy: a[1], grip: a[2] }
    }
}

/// Complete simulator state. Entity positions are indexed by entity id and
/// include static entities (targets, zones, bins).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub task: TaskKind,
    pub variation_id: usize,
    pub role: Role,
    pub gripper: [f64; 2],
    pub closed: bool,
    pub positions: Vec<[f64; 2]>,
    pub held: Option<usize>,
    pub step: usize,
    pub seed: u64,
    /// Latched: once the goal predicate held, it stays reported.
    pub success: bool,
}

impl WorldState {
    pub fn variation(&self) -> &'static VariationSpec {
        &task_by_kind(self.task).variations[self.variation_id]
    }

    pub fn horizon(&self) -> usize {
        task_by_kind(self.task).horizon
    }

    pub fn morphology(&self) -> Morphology {
        Morphology::of(self.role)
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn chebyshev(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Seed for an instance layout; identical for both morphologies.
pub(crate) fn layout_seed(task: TaskKind, variation: usize, seed: u64) -> u64 {
    let mut z = seed
        .wrapping_add((task.id() as u64) << 40)
        .wrapping_add((variation as u64) << 32)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Places every entity and the gripper for instance `seed`.
pub fn reset(task: &TaskSpec, variation_id: usize, seed: u64, morphology: &Morphology) -> Result<WorldState> {
    let variation = task.variations.get(variation_id).ok_or_else(|| {
        Error::Config(format!(
            "task {} has {} variations, got id {variation_id}",
            task.name,
            task.variations.len()
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed(task.kind, variation_id, seed));
    for _ in 0..10_000 {
        if let Some((gripper, positions)) = try_layout(variation, &mut rng) {
            let state = WorldState {
                task: task.kind,
                variation_id,
                role: morphology.role,
                gripper,
                closed: false,
                positions,
                held: None,
                step: 0,
                seed,
                success: false,
            };
            debug_assert!(!is_success(&state, variation));
            return Ok(state);
        }
    }
    Err(Error::Environment(format!("could not place entities for {} seed {seed}", task.name)))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 2] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn try_layout(variation: &VariationSpec, rng: &mut ChaCha8Rng) -> Option<([f64; 2], Vec<[f64; 2]>)> {
    let ents = &variation.entities;
    let mut pos: Vec<[f64; 2]> = Vec::with_capacity(ents.len());
    // Regions first, then everything else.
    let mut order: Vec<usize> = (0..ents.len()).collect();
    order.sort_by_key(|&i| !ents[i].kind.is_region());
    let mut placed: Vec<Option<[f64; 2]>> = vec![None; ents.len()];
    for &i in &order {
        let e = &ents[i];
        let p = match e.kind {
            EntityKind::Zone | EntityKind::Bin => uniform(rng, 0.15, 0.85),
            EntityKind::Target => uniform(rng, 0.1, 0.9),
            EntityKind::Block => uniform(rng, 0.2, 0.8),
        };
        for (j, q) in placed.iter().enumerate() {
            let Some(q) = q else { continue };
            let other = &ents[j];
            let ok = match (e.kind.is_region(), other.kind.is_region()) {
                (true, true) => chebyshev(p, *q) >= 0.25,
                (false, true) | (true, false) => chebyshev(p, *q) >= 0.14,
                (false, false) => {
                    let min = if e.kind == EntityKind::Target { 0.2 } else { 0.15 };
                    dist(p, *q) >= min
                }
            };
            if !ok {
                return None;
            }
        }
        placed[i] = Some(p);
    }
    for p in placed {
        pos.push(p.expect("all placed"));
    }
    let gripper = uniform(rng, 0.05, 0.95);
    if ents.iter().zip(&pos).any(|(e, p)| !e.kind.is_region() && dist(gripper, *p) < 0.1) {
        return None;
    }
    // Long enough approach for a full training window.
    let first = variation.goal.first_subgoal();
    if dist(gripper, pos[first]) < 0.35 {
        return None;
    }
    Some((gripper, pos))
}

/// Advances one step. Errors once the horizon is exhausted.
pub fn step(state: &WorldState, action: Action) -> Result<(WorldState, bool)> {
    let task = task_by_kind(state.task);
    if state.step >= task.horizon {
        return Err(Error::EpisodeExhausted { step: state.step, horizon: task.horizon });
    }
    let variation = &task.variations[state.variation_id];
    let a = action.clipped();
    let delta = Morphology::of(state.role).delta;
    let mut next = state.clone();
    let prev = state.gripper;
    let g = [
        (prev[0] + delta * a.dx as f64).clamp(0.0, 1.0),
        (prev[1] + delta * a.dy as f64).clamp(0.0, 1.0),
    ];
    next.gripper = g;
    if a.grip > 0.0 {
        next.closed = true;
        if next.held.is_none() {
            next.held = variation
                .entities
                .iter()
                .enumerate()
                .filter(|(_, e)| e.kind == EntityKind::Block)
                .map(|(i, _)| (i, dist(g, next.positions[i])))
                .filter(|&(_, d)| d <= GRASP_RADIUS)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
        }
    } else {
        next.closed = false;
        next.held = None;
    }
    if let Some(h) = next.held {
        next.positions[h] = g;
    } else {
        sweep_push(&mut next, variation, prev, g);
    }
    next.step += 1;
    next.success = state.success || is_success(&next, variation);
    let success = next.success;
    Ok((next, success))
}

/// Pushes free blocks whose contact disc the gripper swept into this step.
fn sweep_push(state: &mut WorldState, variation: &VariationSpec, prev: [f64; 2], g: [f64; 2]) {
    let mv = [g[0] - prev[0], g[1] - prev[1]];
    let len = (mv[0] * mv[0] + mv[1] * mv[1]).sqrt();
    if len < 1e-12 {
        return;
    }
    let m = [mv[0] / len, mv[1] / len];
    for (i, e) in variation.entities.iter().enumerate() {
        if e.kind != EntityKind::Block {
            continue;
        }
        let o = state.positions[i];
        // Objects already inside the contact disc (e.g. just released) stay put.
        if dist(o, prev) < 0.5 * PUSH_RADIUS {
            continue;
        }
        let rel = [o[0] - prev[0], o[1] - prev[1]];
        let along = rel[0] * m[0] + rel[1] * m[1];
        let lat = [rel[0] - along * m[0], rel[1] - along * m[1]];
        let lat_len = (lat[0] * lat[0] + lat[1] * lat[1]).sqrt();
        if lat_len >= PUSH_RADIUS || along < 0.0 {
            continue;
        }
        let ahead = (PUSH_RADIUS * PUSH_RADIUS - lat_len * lat_len).sqrt();
        // Contact happens only if the object is within reach of this sweep.
        if along - ahead > len {
            continue;
        }
        let target_along = len + ahead;
        if along >= target_along {
            continue;
        }
        state.positions[i] = [
            (prev[0] + m[0] * target_along + lat[0]).clamp(0.0, 1.0),
            (prev[1] + m[1] * target_along + lat[1]).clamp(0.0, 1.0),
        ];
    }
}

/// Goal predicate of `variation` (not latched).
pub fn is_success(state: &WorldState, variation: &VariationSpec) -> bool {
    let p = &state.positions;
    match variation.goal {
        Goal::Reach { target } => dist(state.gripper, p[target]) <= REACH_TOLERANCE,
        Goal::Place { object, region } => {
            let half = variation.entities[region].half_size;
            chebyshev(p[object], p[region]) <= half
        }
        Goal::Stack { top, base } => state.held != Some(top) && dist(p[top], p[base]) <= STACK_TOLERANCE,
    }
}

/// An environment instance: a state plus the horizon bookkeeping.
#[derive(Clone, Debug)]
pub struct Env {
    pub state: WorldState,
}

impl Env {
    pub fn new(task: &TaskSpec, variation_id: usize, seed: u64, morphology: &Morphology) -> Result<Self> {
        Ok(Env { state: reset(task, variation_id, seed, morphology)? })
    }

    pub fn step(&mut self, action: Action) -> Result<bool> {
        let (next, success) = step(&self.state, action)?;
        self.state = next;
        Ok(success)
    }

    pub fn render(&self) -> Observation {
        render(&self.state, &self.state.morphology())
    }

    pub fn done(&self) -> bool {
        self.state.success || self.state.step >= self.state.horizon()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reach() -> &'static TaskSpec {
        task_by_name("reach").unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_seeded() {
        let m = Morphology::imitator();
        let a = reset(reach(), 0, 7, &m).unwrap();
        let b = reset(reach(), 0, 7, &m).unwrap();
        assert_eq!(a, b);
        let c = reset(reach(), 0, 8, &m).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn reset_rejects_unknown_variation() {
        let pp = task_by_name("pickplace").unwrap();
        assert_eq!(pp.variations.len(), 4);
        assert!(matches!(reset(pp, 5, 0, &Morphology::imitator()), Err(Error::Config(_))));
        assert!(task_by_name("door").is_err());
    }

    #[test]
    fn placements_are_separated_and_fresh_states_fail_goal() {
        let m = Morphology::imitator();
        for task in registry() {
            for v in &task.variations {
                for seed in 0..50 {
                    let s = reset(task, v.variation_id, seed, &m).unwrap();
                    assert!(!is_success(&s, v));
                    for i in 0..s.positions.len() {
                        for j in i + 1..s.positions.len() {
                            assert!(dist(s.positions[i], s.positions[j]) >= MIN_SEPARATION);
                        }
                        if !v.entities[i].kind.is_region() {
                            assert!(dist(s.positions[i], s.gripper) >= MIN_SEPARATION);
                        }
                    }
                }
            }
        }
    }

    fn with_gripper(x: f64, y: f64) -> WorldState {
        let mut s = reset(reach(), 0, 1, &Morphology::imitator()).unwrap();
        s.gripper = [x, y];
        s
    }

    #[test]
    fn step_moves_by_delta_and_clips() {
        let (n, _) = step(&with_gripper(0.5, 0.5), Action::new(1.0, 0.0, -1.0)).unwrap();
        assert!((n.gripper[0] - 0.55).abs() < 1e-12 && (n.gripper[1] - 0.5).abs() < 1e-12);
        let (n, _) = step(&with_gripper(0.99, 0.5), Action::new(1.0, 0.0, -1.0)).unwrap();
        assert_eq!(n.gripper, [1.0, 0.5]);
        // Out-of-range components are clipped first.
        let (n, _) = step(&with_gripper(0.5, 0.5), Action::new(3.0, -7.0, 0.0)).unwrap();
        assert!((n.gripper[0] - 0.55).abs() < 1e-12 && (n.gripper[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn identity_action_only_advances_the_clock() {
        let s = with_gripper(0.5, 0.5);
        let (n, _) = step(&s, Action::new(0.0, 0.0, 0.0)).unwrap();
        let mut expect = s.clone();
        expect.step += 1;
        assert_eq!(n, expect);
    }

    #[test]
    fn stepping_past_horizon_errors() {
        let mut s = with_gripper(0.5, 0.5);
        s.step = reach().horizon;
        assert!(matches!(step(&s, Action::default()), Err(Error::EpisodeExhausted { .. })));
    }

    #[test]
    fn grasp_carries_and_release_drops() {
        let pp = task_by_name("pickplace").unwrap();
        let mut s = reset(pp, 0, 3, &Morphology::imitator()).unwrap();
        let obj = match pp.variations[0].goal {
            Goal::Place { object, .. } => object,
            _ => unreachable!(),
        };
        s.gripper = [s.positions[obj][0] + 0.02, s.positions[obj][1]];
        let (s, _) = step(&s, Action::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.held, Some(obj));
        let (s, _) = step(&s, Action::new(0.0, 1.0, 1.0)).unwrap();
        assert_eq!(s.positions[obj], s.gripper);
        let (s2, _) = step(&s, Action::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(s2.held, None);
        assert_eq!(s2.positions[obj], s.gripper);
    }

    #[test]
    fn sweeping_gripper_pushes_block_without_tunnelling() {
        let push = task_by_name("push").unwrap();
        let mut s = reset(push, 0, 4, &Morphology::imitator()).unwrap();
        let obj = match push.variations[0].goal {
            Goal::Place { object, .. } => object,
            _ => unreachable!(),
        };
        s.positions[obj] = [0.5, 0.5];
        s.gripper = [0.47, 0.5];
        // Full-speed move would pass straight through the block center.
        let (n, _) = step(&s, Action::new(1.0, 0.0, -1.0)).unwrap();
        assert!((n.positions[obj][0] - (0.52 + PUSH_RADIUS)).abs() < 1e-9);
        assert!((n.positions[obj][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stack_predicate_requires_release() {
        let st = task_by_name("stack").unwrap();
        let v = &st.variations[0];
        let Goal::Stack { top, base } = v.goal else { unreachable!() };
        let mut s = reset(st, 0, 2, &Morphology::imitator()).unwrap();
        s.positions[top] = s.positions[base];
        s.gripper = s.positions[base];
        s.held = None;
        assert!(is_success(&s, v));
        s.held = Some(top);
        assert!(!is_success(&s, v));
    }

    #[test]
    fn wrong_object_in_bin_is_not_success() {
        let pp = task_by_name("pickplace").unwrap();
        let v = &pp.variations[0];
        let Goal::Place { object, region } = v.goal else { unreachable!() };
        let wrong = v
            .entities
            .iter()
            .position(|e| e.kind == EntityKind::Block && e.id != object)
            .unwrap();
        let mut s = reset(pp, 0, 5, &Morphology::imitator()).unwrap();
        s.positions[wrong] = s.positions[region];
        assert!(!is_success(&s, v));
        s.positions[object] = s.positions[region];
        assert!(is_success(&s, v));
    }

    #[test]
    fn success_is_latched() {
        let mut s = with_gripper(0.5, 0.5);
        let target = match s.variation().goal {
            Goal::Reach { target } => target,
            _ => unreachable!(),
        };
        s.gripper = s.positions[target];
        let (s, ok) = step(&s, Action::new(0.0, 0.0, -1.0)).unwrap();
        assert!(ok);
        let (_, ok) = step(&s, Action::new(-1.0, -1.0, -1.0)).unwrap();
        assert!(ok);
    }
}
