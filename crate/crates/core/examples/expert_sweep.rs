use mosaic_core::exec::Exec;
use mosaic_core::simworld::{expert_success_sweep, registry, run_expert, Morphology, Role};

fn main() {
    for role in [Role::Imitator, Role::Demonstrator] {
        for (task, v, rate) in expert_success_sweep(100, role, Exec::Parallel).unwrap() {
            let t = mosaic_core::simworld::task_by_kind(task);
            let steps: Vec<usize> = (0..100).map(|s| run_expert(t, v, s, &Morphology::of(role)).unwrap().1).collect();
            let mean = steps.iter().sum::<usize>() as f64 / 100.0;
            let min = steps.iter().min().unwrap();
            let max = steps.iter().max().unwrap();
            println!("{:?} {task} v{v}: {:.2}  steps mean {mean:.1} min {min} max {max}", role, rate);
        }
    }
    let _ = registry();
}
