//! Seconds per training step at three model sizes on Reach data.

use std::time::Instant;

use mosaic_core::datagen::{collect_episode, Dataset};
use mosaic_core::model::ModelConfig;
use mosaic_core::simworld::{Morphology, Role, TaskKind};
use mosaic_core::trainer::{TrainConfig, Trainer};

fn main() {
    let mut trajs = Vec::new();
    for v in 0..4 {
        for i in 0..3u64 {
            for role in [Role::Demonstrator, Role::Imitator] {
                trajs.push(collect_episode(TaskKind::Reach, v, i * 16, &Morphology::of(role)).unwrap());
            }
        }
    }
    let data = Dataset::from_trajectories(trajs);
    for (c, b, hidden) in [(128usize, 30usize, 256usize), (64, 30, 128), (32, 16, 128)] {
        let cfg = TrainConfig { batch_size: b, model: ModelConfig { channels: c, hidden, ..ModelConfig::default() }, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg).unwrap();
        t.step_on(&data).unwrap();
        let start = Instant::now();
        for _ in 0..3 {
            t.step_on(&data).unwrap();
        }
        println!("C={c} B={b}: {:.3} s/step", start.elapsed().as_secs_f64() / 3.0);
    }
}
