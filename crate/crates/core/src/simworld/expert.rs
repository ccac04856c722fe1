//! Scripted experts: proportional control toward the current phase sub-goal
//! (approach, grasp, transport, release), with a detour around free blocks
//! the gripper would otherwise bump.

use super::{registry, task_by_kind, Env, Morphology, Role, TaskKind, TaskSpec};
use super::{dist, Action, EntityKind, Goal, VariationSpec, WorldState, GRASP_RADIUS, IMITATOR_DELTA, PUSH_RADIUS};

/// Keep-out radius around blocks that must not be disturbed.
const CLEARANCE: f64 = 0.04;
/// Standoff behind a block before pushing it.
const PUSH_STANDOFF: f64 = 0.045;
const RELEASE_TOLERANCE: f64 = 0.01;

use crate::error::Result;
use crate::exec::Exec;

fn toward(from: [f64; 2], to: [f64; 2], grip: f32) -> Action {
    let dx = ((to[0] - from[0]) / IMITATOR_DELTA).clamp(-1.0, 1.0);
    let dy = ((to[1] - from[1]) / IMITATOR_DELTA).clamp(-1.0, 1.0);
    Action::new(dx as f32, dy as f32, grip)
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < 1e-12 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_dist(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Next waypoint from `g` to `goal` that stays clear of `obstacles`.
fn navigate(g: [f64; 2], goal: [f64; 2], obstacles: &[[f64; 2]]) -> [f64; 2] {
    let blocking = obstacles
        .iter()
        .filter(|&&o| segment_dist(g, goal, o) < CLEARANCE && dist(goal, o) >= CLEARANCE * 0.99)
        .min_by(|a, b| dist(g, **a).total_cmp(&dist(g, **b)));
    let Some(&o) = blocking else { return goal };
    let dir = unit([goal[0] - g[0], goal[1] - g[1]]);
    let normal = [-dir[1], dir[0]];
    let side = (g[0] - o[0]) * normal[0] + (g[1] - o[1]) * normal[1];
    let offset = CLEARANCE + 0.03;
    let mut candidates = [
        [o[0] + normal[0] * offset, o[1] + normal[1] * offset],
        [o[0] - normal[0] * offset, o[1] - normal[1] * offset],
    ];
    if side < 0.0 {
        candidates.swap(0, 1);
    }
    let inside = |p: [f64; 2]| (0.02..=0.98).contains(&p[0]) && (0.02..=0.98).contains(&p[1]);
    let wp = candidates.into_iter().find(|&p| inside(p)).unwrap_or(candidates[0]);
    // Slide along the detour, shifted toward the goal so progress is made.
    [wp[0] + dir[0] * 0.02, wp[1] + dir[1] * 0.02]
}

fn free_blocks(state: &WorldState, variation: &VariationSpec, except: Option<usize>) -> Vec<[f64; 2]> {
    variation
        .entities
        .iter()
        .enumerate()
        .filter(|(i, e)| e.kind == EntityKind::Block && Some(*i) != except && state.held != Some(*i))
        .map(|(i, _)| state.positions[i])
        .collect()
}

/// Pick up `object` and carry it to `dest`, releasing within tolerance when `release` is set.
fn carry(state: &WorldState, variation: &VariationSpec, object: usize, dest: [f64; 2], release: bool) -> Action {
    let g = state.gripper;
    match state.held {
        Some(h) if h == object => {
            if release && dist(g, dest) <= RELEASE_TOLERANCE {
                Action::new(0.0, 0.0, -1.0)
            } else {
                toward(g, dest, 1.0)
            }
        }
        Some(_) => Action::new(0.0, 0.0, -1.0),
        None => {
            let o = state.positions[object];
            if dist(g, o) <= GRASP_RADIUS {
                Action::new(0.0, 0.0, 1.0)
            } else {
                let others = free_blocks(state, variation, Some(object));
                toward(g, navigate(g, o, &others), -1.0)
            }
        }
    }
}

fn push_to(state: &WorldState, variation: &VariationSpec, object: usize, region: usize) -> Action {
    let g = state.gripper;
    if state.held.is_some() {
        return Action::new(0.0, 0.0, -1.0);
    }
    let o = state.positions[object];
    let z = state.positions[region];
    let u = unit([z[0] - o[0], z[1] - o[1]]);
    let rel = [g[0] - o[0], g[1] - o[1]];
    let along = rel[0] * u[0] + rel[1] * u[1];
    let lateral = ((rel[0] - along * u[0]).powi(2) + (rel[1] - along * u[1]).powi(2)).sqrt();
    let behind = along < -0.5 * PUSH_RADIUS && along > -(PUSH_STANDOFF + 0.02) && lateral < 0.01;
    if behind {
        // Drive the block's center onto the region center.
        let aim = [z[0] - u[0] * PUSH_RADIUS + rel[0] - along * u[0], z[1] - u[1] * PUSH_RADIUS + rel[1] - along * u[1]];
        let push_dir = unit([aim[0] - g[0], aim[1] - g[1]]);
        let step = dist(g, aim).min(IMITATOR_DELTA);
        return toward(g, [g[0] + push_dir[0] * step, g[1] + push_dir[1] * step], -1.0);
    }
    let standoff = [o[0] - u[0] * PUSH_STANDOFF, o[1] - u[1] * PUSH_STANDOFF];
    let obstacles = free_blocks(state, variation, None);
    toward(g, navigate(g, standoff, &obstacles), -1.0)
}

/// Expert action for the current state of `variation`.
pub fn expert_action(state: &WorldState, variation: &VariationSpec) -> Action {
    let g = state.gripper;
    match variation.goal {
        Goal::Reach { target } => toward(g, state.positions[target], -1.0),
        Goal::Place { object, region } => {
            if variation.entities[region].kind == EntityKind::Zone {
                push_to(state, variation, object, region)
            } else {
                carry(state, variation, object, state.positions[region], false)
            }
        }
        Goal::Stack { top, base } => carry(state, variation, top, state.positions[base], true),
    }
}

/// Closed-loop expert episode. Returns whether it succeeded and the steps taken.
pub fn run_expert(task: &TaskSpec, variation_id: usize, seed: u64, morphology: &Morphology) -> Result<(bool, usize)> {
    let variation = &task.variations[variation_id];
    let mut env = Env::new(task, variation_id, seed, morphology)?;
    while !env.done() {
        env.step(expert_action(&env.state, variation))?;
    }
    Ok((env.state.success, env.state.step))
}

/// Expert success rate per `(task, variation)` over `seeds` instances.
pub fn expert_success_sweep(seeds: u64, role: Role, exec: Exec) -> Result<Vec<(TaskKind, usize, f64)>> {
    let cells: Vec<(TaskKind, usize)> = registry()
        .iter()
        .flat_map(|t| t.variations.iter().map(move |v| (t.kind, v.variation_id)))
        .collect();
    let m = Morphology::of(role);
    let results = exec.map_slice(&cells, |&(kind, v)| -> Result<(TaskKind, usize, f64)> {
        let task = task_by_kind(kind);
        let mut ok = 0;
        for seed in 0..seeds {
            if run_expert(task, v, seed, &m)?.0 {
                ok += 1;
            }
        }
        Ok((kind, v, ok as f64 / seeds as f64))
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::super::{registry, reset, step, task_by_name, Morphology};
    use super::*;

    fn rollout(task: &super::super::TaskSpec, v: usize, seed: u64, m: &Morphology) -> bool {
        let mut s = reset(task, v, seed, m).unwrap();
        while s.step < task.horizon {
            let a = expert_action(&s, &task.variations[v]);
            let (n, ok) = step(&s, a).unwrap();
            s = n;
            if ok {
                return true;
            }
        }
        false
    }

    #[test]
    fn at_subgoal_command_is_zero() {
        let t = task_by_name("reach").unwrap();
        let mut s = reset(t, 2, 0, &Morphology::imitator()).unwrap();
        s.gripper = s.positions[2];
        let a = expert_action(&s, &t.variations[2]);
        assert!(a.dx.abs() < 1e-6 && a.dy.abs() < 1e-6);
        assert!(a.grip <= 0.0);
    }

    #[test]
    fn actions_stay_in_range() {
        for task in registry() {
            for v in &task.variations {
                let mut s = reset(task, v.variation_id, 9, &Morphology::imitator()).unwrap();
                while s.step < task.horizon && !s.success {
                    let a = expert_action(&s, v);
                    for c in a.to_array() {
                        assert!((-1.0..=1.0).contains(&c));
                    }
                    s = step(&s, a).unwrap().0;
                }
            }
        }
    }

    #[test]
    fn reach_variation_zero_succeeds() {
        let t = task_by_name("reach").unwrap();
        let ok = (0..100).filter(|&s| rollout(t, 0, s, &Morphology::imitator())).count();
        assert!(ok >= 95, "{ok}/100");
    }
}
