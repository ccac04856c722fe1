use std::collections::BTreeMap;

use mosaic_core::contrastive::ContrastConfig;
use mosaic_core::datagen::{collect_episode, make_batch, sample_pair, AugmentConfig, Dataset};
use mosaic_core::model::{
    frames_tensor, head_layout, scaled_softmax_attention, AttentionConfig, Depth, MixtureParams, ModelConfig, Policy,
    BINS, SCALE_FLOOR,
};
use mosaic_core::simworld::{task_by_kind, Morphology, Role, TaskKind};
use mosaic_core::tensor::Graph;
use mosaic_core::trainer::{sample_weights, TrainConfig, Trainer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn reach_data(per_var: u64) -> Dataset {
    let n = task_by_kind(TaskKind::Reach).variations.len();
    let mut trajs = Vec::new();
    for v in 0..n {
        for i in 0..per_var {
            for role in [Role::Demonstrator, Role::Imitator] {
                trajs.push(collect_episode(TaskKind::Reach, v, i * 16, &Morphology::of(role)).unwrap());
            }
        }
    }
    Dataset::from_trajectories(trajs)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        channels: 8,
        attention: AttentionConfig { heads: 2, temperature: 16.0, layers: 1 },
        components: 2,
        hidden: 16,
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoded_mixtures_are_distributions(
        m in 1usize..5,
        seed in any::<u64>(),
        spread in 0.1f64..8.0,
    ) {
        let layout = head_layout(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..layout.row_width()).map(|_| spread * (rand::Rng::random::<f64>(&mut rng) - 0.5)).collect();
        let p = MixtureParams::from_raw(&raw, &layout);
        for d in 0..p.dims() {
            prop_assert!((p.alpha[d].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.s[d].iter().all(|&s| s >= SCALE_FLOOR));
            let probs: Vec<f64> = (0..BINS).map(|b| p.probability(d, b)).collect();
            prop_assert!(probs.iter().all(|&q| q >= 0.0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for b in [0, 1, 128, BINS - 1] {
                prop_assert!((p.log_probability(d, b).exp() - probs[b]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one(
        nq in 1usize..6,
        nk in 1usize..9,
        dim in 1usize..6,
        tau in 0.1f64..20.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..c).map(|_| 6.0 * rand::Rng::random::<f64>(&mut rng) - 3.0).collect()).collect()
        };
        let q = mat(nq, dim);
        let k = mat(nk, dim);
        let eye: Vec<Vec<f64>> = (0..nk).map(|i| (0..nk).map(|j| (i == j) as u8 as f64).collect()).collect();
        for row in scaled_softmax_attention(&q, &k, &eye, tau) {
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_weights_balance_tasks(
        keys in prop::collection::vec((0usize..4, 0usize..3), 1..40),
        copies in 1usize..4,
    ) {
        let keys: Vec<(TaskKind, usize)> = keys.into_iter().map(|(t, v)| (TaskKind::ALL[t], v)).collect();
        let w = sample_weights(&keys);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut mass: BTreeMap<TaskKind, f64> = BTreeMap::new();
        for (k, x) in keys.iter().zip(&w) {
            *mass.entry(k.0).or_default() += x;
        }
        let n_tasks = mass.len() as f64;
        prop_assert!(mass.values().all(|m| (m - 1.0 / n_tasks).abs() < 1e-12));
        let repeated: Vec<_> = keys.iter().flat_map(|k| std::iter::repeat_n(*k, copies)).collect();
        let wr = sample_weights(&repeated);
        for (i, x) in w.iter().enumerate() {
            for j in 0..copies {
                prop_assert!((wr[i * copies + j] * copies as f64 - x).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pairs_share_variation_and_never_share_seed() {
    let data = reach_data(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let keys = data.keys();
    for i in 0..10_000 {
        let (task, v) = keys[i % keys.len()];
        let (demo, traj) = sample_pair(&data, task, v, &mut rng).unwrap();
        assert_eq!((demo.task, demo.variation_id), (task, v));
        assert_eq!((traj.task, traj.variation_id), (task, v));
        assert_eq!(demo.role, Role::Demonstrator);
        assert_eq!(traj.role, Role::Imitator);
        assert_ne!(demo.seed, traj.seed);
    }
}

#[test]
fn batches_spread_evenly_over_variations() {
    let data = reach_data(2);
    let n = data.keys().len();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let batch = make_batch(&data, 30, 3, &mut rng).unwrap();
        let mut counts: BTreeMap<(TaskKind, usize), usize> = BTreeMap::new();
        for s in &batch.slots {
            *counts.entry((s.task, s.variation_id)).or_default() += 1;
            assert_eq!(s.obs.len(), 3);
            assert_eq!(s.actions.len(), 3);
        }
        assert_eq!(counts.len(), n);
        assert!(counts.values().all(|&c| c == 30 / n || c == 30 / n + 1));
    }
}

#[test]
fn rollout_matches_training_forward() {
    let data = reach_data(2);
    let policy = Policy::new(tiny_model()).unwrap();
    let params = policy.init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(12));
    let (demo, traj) = sample_pair(&data, TaskKind::Reach, 1, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    let window: Vec<_> = traj.frames.iter().take(5).collect();
    let (h, w) = (tiny_model().image_h, tiny_model().image_w);

    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let d = g.constant(frames_tensor(&demo.frames.iter().collect::<Vec<_>>(), h, w).unwrap());
    let o = g.constant(frames_tensor(&window, h, w).unwrap());
    let f = policy.forward(&mut g, &b, d, o, 1, Depth::Full).unwrap();
    let raw = policy.action_head(&mut g, &b, f.obs_post.unwrap());
    let rows: Vec<f64> = g.value(raw).data().iter().map(|&v| v as f64).collect();
    let width = head_layout(tiny_model().components).row_width();

    for (t, obs) in window.iter().enumerate() {
        let online = policy.act(&params, &demo.frames, obs).unwrap();
        let batched = MixtureParams::from_raw(&rows[t * width..(t + 1) * width], &tiny_model().layout());
        for d in 0..online.dims() {
            for i in 0..online.components() {
                assert!((online.alpha[d][i] - batched.alpha[d][i]).abs() < 1e-5);
                assert!((online.mu[d][i] - batched.mu[d][i]).abs() <= 1e-5 * online.mu[d][i].abs().max(1.0));
                assert!((online.s[d][i] - batched.s[d][i]).abs() <= 1e-5 * online.s[d][i].max(1.0));
            }
        }
    }
}

#[test]
fn overfits_a_single_batch() {
    let data = reach_data(2);
    let cfg = TrainConfig {
        batch_size: 4,
        window: 3,
        lr: 1e-2,
        model: tiny_model(),
        contrast: ContrastConfig { latent: 8, ..ContrastConfig::default() },
        augment: AugmentConfig::identity(),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg).unwrap();
    let batch = make_batch(&data, 4, 3, trainer.rng()).unwrap();
    let bc = |r: &mosaic_core::trainer::MetricsRecord| r.task.values().map(|l| l.bc).sum::<f64>();
    let first = bc(&trainer.train_step(&batch).unwrap());
    let mut last = first;
    for _ in 1..200 {
        last = bc(&trainer.train_step(&batch).unwrap());
    }
    assert!(last <= 0.5 * first, "bc loss {first} -> {last}");
}
