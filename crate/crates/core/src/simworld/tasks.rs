use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reach,
    Push,
    PickPlace,
    Stack,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Reach, TaskKind::Push, TaskKind::PickPlace, TaskKind::Stack];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Push => "push",
            TaskKind::PickPlace => "pickplace",
            TaskKind::Stack => "stack",
        }
    }

    pub fn from_name(name: &str) -> Result<TaskKind> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown task {name:?} (expected reach, push, pickplace, stack)")))
    }

    pub fn from_id(id: usize) -> Result<TaskKind> {
        TaskKind::ALL.get(id).copied().ok_or_else(|| Error::Config(format!("unknown task id {id}")))
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    /// Static marker the gripper must reach.
    Target,
    /// Static region objects are pushed into.
    Zone,
    /// Static region objects are carried into.
    Bin,
    /// Movable object.
    Block,
}

impl EntityKind {
    pub fn is_region(self) -> bool {
        matches!(self, EntityKind::Zone | EntityKind::Bin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Diamond,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntitySpec {
    pub id: usize,
    pub kind: EntityKind,
    pub shape: Shape,
    pub color: [u8; 3],
    pub half_size: f64,
}

/// What has to be true at the end of a successful episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Reach { target: usize },
    /// Object center inside a zone or bin.
    Place { object: usize, region: usize },
    Stack { top: usize, base: usize },
}

impl Goal {
    /// Entity the expert heads for first.
    pub fn first_subgoal(&self) -> usize {
        match *self {
            Goal::Reach { target } => target,
            Goal::Place { object, .. } => object,
            Goal::Stack { top, .. } => top,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationSpec {
    pub variation_id: usize,
    pub goal: Goal,
    pub entities: Vec<EntitySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub name: &'static str,
    pub variations: Vec<VariationSpec>,
    pub horizon: usize,
}

const RED: [u8; 3] = [220, 40, 40];
const GREEN: [u8; 3] = [40, 170, 60];
const BLUE: [u8; 3] = [40, 80, 220];
const YELLOW: [u8; 3] = [225, 200, 30];

const BLOCK_HALF: f64 = 0.035;
const REGION_HALF: f64 = 0.08;

fn ent(id: usize, kind: EntityKind, shape: Shape, color: [u8; 3], half_size: f64) -> EntitySpec {
    EntitySpec { id, kind, shape, color, half_size }
}

fn reach() -> TaskSpec {
    let colors = [RED, GREEN, BLUE, YELLOW];
    let entities: Vec<_> = colors
        .iter()
        .enumerate()
        .map(|(i, &c)| ent(i, EntityKind::Target, Shape::Circle, c, 0.035))
        .collect();
    TaskSpec {
        kind: TaskKind::Reach,
        name: "reach",
        variations: (0..4)
            .map(|v| VariationSpec { variation_id: v, goal: Goal::Reach { target: v }, entities: entities.clone() })
            .collect(),
        horizon: 40,
    }
}

/// Two blocks of identical geometry and two regions; variation = object * 2 + region.
fn two_by_two(kind: TaskKind, name: &'static str, objects: [EntitySpec; 2], regions: [EntitySpec; 2], horizon: usize) -> TaskSpec {
    let entities = vec![objects[0].clone(), objects[1].clone(), regions[0].clone(), regions[1].clone()];
    TaskSpec {
        kind,
        name,
        variations: (0..4)
            .map(|v| VariationSpec {
                variation_id: v,
                goal: Goal::Place { object: v / 2, region: 2 + v % 2 },
                entities: entities.clone(),
            })
            .collect(),
        horizon,
    }
}

fn push() -> TaskSpec {
    two_by_two(
        TaskKind::Push,
        "push",
        [
            ent(0, EntityKind::Block, Shape::Square, RED, BLOCK_HALF),
            ent(1, EntityKind::Block, Shape::Square, BLUE, BLOCK_HALF),
        ],
        [
            ent(2, EntityKind::Zone, Shape::Square, [165, 225, 165], REGION_HALF),
            ent(3, EntityKind::Zone, Shape::Square, [225, 180, 235], REGION_HALF),
        ],
        80,
    )
}

fn pickplace() -> TaskSpec {
    two_by_two(
        TaskKind::PickPlace,
        "pickplace",
        [
            ent(0, EntityKind::Block, Shape::Circle, [240, 140, 30], BLOCK_HALF),
            ent(1, EntityKind::Block, Shape::Diamond, [150, 60, 190], 0.045),
        ],
        [
            ent(2, EntityKind::Bin, Shape::Square, [110, 110, 135], REGION_HALF),
            ent(3, EntityKind::Bin, Shape::Square, [160, 125, 85], REGION_HALF),
        ],
        60,
    )
}

fn stack() -> TaskSpec {
    let entities = vec![
        ent(0, EntityKind::Block, Shape::Square, RED, BLOCK_HALF),
        ent(1, EntityKind::Block, Shape::Square, BLUE, BLOCK_HALF),
    ];
    TaskSpec {
        kind: TaskKind::Stack,
        name: "stack",
        variations: vec![
            VariationSpec { variation_id: 0, goal: Goal::Stack { top: 0, base: 1 }, entities: entities.clone() },
            VariationSpec { variation_id: 1, goal: Goal::Stack { top: 1, base: 0 }, entities },
        ],
        horizon: 60,
    }
}

/// All tasks, in id order.
pub fn registry() -> &'static [TaskSpec] {
    static TASKS: OnceLock<Vec<TaskSpec>> = OnceLock::new();
    TASKS.get_or_init(|| vec![reach(), push(), pickplace(), stack()])
}

pub fn task_by_kind(kind: TaskKind) -> &'static TaskSpec {
    &registry()[kind.id()]
}

pub fn task_by_name(name: &str) -> Result<&'static TaskSpec> {
    Ok(task_by_kind(TaskKind::from_name(name)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_shape() {
        let counts: Vec<usize> = registry().iter().map(|t| t.variations.len()).collect();
        assert_eq!(counts, vec![4, 4, 4, 2]);
        assert_eq!(counts.iter().sum::<usize>(), 14);
        for t in registry() {
            assert!(t.horizon >= 1);
            for (i, v) in t.variations.iter().enumerate() {
                assert_eq!(v.variation_id, i);
            }
        }
    }

    #[test]
    fn variations_are_distinct() {
        for t in registry() {
            for a in &t.variations {
                for b in &t.variations {
                    if a.variation_id != b.variation_id {
                        assert!(a.goal != b.goal || a.entities != b.entities);
                    }
                }
            }
        }
    }

    #[test]
    fn confusable_tasks_share_geometry() {
        for kind in [TaskKind::Push, TaskKind::Stack] {
            let v = &task_by_kind(kind).variations[0];
            let blocks: Vec<_> = v.entities.iter().filter(|e| e.kind == EntityKind::Block).collect();
            assert_eq!(blocks.len(), 2);
            assert_eq!(blocks[0].shape, blocks[1].shape);
            assert_eq!(blocks[0].half_size, blocks[1].half_size);
            assert_ne!(blocks[0].color, blocks[1].color);
        }
    }
}
