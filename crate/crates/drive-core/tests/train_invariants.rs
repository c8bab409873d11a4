//! Training-loop invariants that need the full default world.

use drive_core::synth::{synth_world, WorldConfig};
use drive_core::train::{train, LossMode, TrainConfig};

/// Weak monotone trend: the final epoch's mean loss sits below the first
/// epoch's, on the default world, for five fixed seeds and both modes.
#[test]
fn final_epoch_loss_is_below_first_epoch_loss() {
    for mode in [LossMode::Hn, LossMode::Clip] {
        for seed in 0..5u64 {
            let world = synth_world(&WorldConfig {
                seed,
                ..WorldConfig::default()
            })
            .unwrap();
            let cfg = TrainConfig {
                loss_mode: mode,
                seed,
                ..TrainConfig::toy_preset()
            };
            let (_, history) = train(&world, &cfg).unwrap();
            let first = history.epochs.first().unwrap().loss;
            let last = history.epochs.last().unwrap().loss;
            assert!(
                last < first,
                "{mode:?} seed {seed}: expected decreasing trend, got {first} -> {last}"
            );
        }
    }
}

/// Anchors skipped for empty negative sets plus anchors used equals the
/// dataset size, every epoch.
#[test]
fn skipped_plus_used_anchors_account_for_the_dataset() {
    let world = synth_world(&WorldConfig {
        n_samples: 300,
        n_entities: 12,
        n_relations: 4,
        latent_dim: 4,
        ..WorldConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        embed_dim: 4,
        seed: 3,
        ..TrainConfig::toy_preset()
    };
    let (_, history) = train(&world, &cfg).unwrap();
    assert_eq!(
        history.anchors_used + history.anchors_skipped,
        world.samples.len()
    );
    assert_eq!(history.anchors_used, world.hnmap.non_empty_anchors());
}
