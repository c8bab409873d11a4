//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test -p drive-core --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drive_core::config::AppConfig;
use drive_core::dataset_io::{write_hnmap, write_samples};
use drive_core::encoder::EncoderParams;
use drive_core::eval::{emit_report, evaluate, recall_at_1, Direction, ReportFormat};
use drive_core::gradcheck::{audit_gradients, AuditConfig, AuditLoss};
use drive_core::lexicon::EmbeddingLexicon;
use drive_core::linalg::{normalized, Mat};
use drive_core::loss::{batch_loss, clip_loss, hn_loss, hn_text_loss, LossConfig, MiniBatch};
use drive_core::mining::{mine_reference, mine_with_workers, DatasetMode};
use drive_core::similarity::{sweep_threshold, SimilarityConfig};
use drive_core::synth::{synth_world, WorldConfig};
use drive_core::train::{train, LossMode, TrainConfig};
use drive_core::triplet::{Phrase, Sample, Triplet, VerbState};

fn criterion(name: &str, f: impl FnOnce() + UnwindSafe) {
    match catch_unwind(f) {
        Ok(()) => println!("[PASS] {name}"),
        Err(cause) => {
            println!("[FAIL] {name}");
            resume_unwind(cause);
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient audit
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_audit() {
    criterion(
        "criterion 1: gradient audit, 200 seeded configs x 5 losses, max rel err < 1e-5",
        || {
            let start = Instant::now();
            let mut worst = 0.0f64;
            for seed in 0..200u64 {
                for loss in AuditLoss::ALL {
                    let cfg = AuditConfig::from_seed(loss, seed);
                    assert!((4..=16).contains(&cfg.dim));
                    assert!(cfg.hn_rows <= 8);
                    let report = audit_gradients(&cfg).unwrap();
                    assert!(
                        report.max_relative_error < 1e-5,
                        "{loss} seed {seed}: max relative error {}",
                        report.max_relative_error
                    );
                    worst = worst.max(report.max_relative_error);
                }
            }
            let elapsed = start.elapsed();
            assert!(
                elapsed < Duration::from_secs(60),
                "audit took {elapsed:?}, budget is 60 s"
            );
            println!("       worst relative error {worst:.3e}, elapsed {elapsed:.2?}");
        },
    );
}

// ---------------------------------------------------------------------------
// 2. Loss spot values
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_loss_spot_values() {
    criterion("criterion 2: loss spot values match closed forms", || {
        // N = 1: cross-entropy over one class is exactly zero
        let img = Mat::from_rows(&[vec![0.6, 0.8]]);
        let txt = Mat::from_rows(&[vec![0.0, 1.0]]);
        let (loss, _) = clip_loss(&img, &txt, 5.0).unwrap();
        assert_eq!(loss, 0.0);

        // 2x2 orthonormal rows at scale 1: ln(1 + e^-1)
        let eye = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (loss, _) = clip_loss(&eye, &eye, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-9);

        // single orthogonal negative: similarity loss ln 2
        let orth = MiniBatch::new(
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            Mat::from_rows(&[vec![0.0, 1.0]]),
            Mat::from_rows(&[vec![0.0, 1.0]]),
        )
        .unwrap();
        let (l, _) = hn_text_loss(&orth).unwrap();
        assert!((l - 2.0f64.ln()).abs() < 1e-9);

        // composed case, evaluated against the independent closed form
        // ln(1+e^-1) * (1 + (0.615 + 1.223)/2 * ln 2) / 2 = 0.256405...
        let cfg = LossConfig {
            scale: 1.0,
            delta_t: 0.615,
            delta_i: 1.223,
        };
        let (breakdown, _) = hn_loss(&orth, &cfg).unwrap();
        let oracle =
            (1.0 + (-1.0f64).exp()).ln() * (1.0 + 0.5 * (0.615 + 1.223) * 2.0f64.ln()) / 2.0;
        assert!(
            (breakdown.l_hn - oracle).abs() < 1e-6,
            "composed loss {} vs closed form {oracle}",
            breakdown.l_hn
        );
        println!(
            "       composed value {:.9} (closed form {oracle:.9})",
            breakdown.l_hn
        );
    });
}

// ---------------------------------------------------------------------------
// 3. Formula reductions
// ---------------------------------------------------------------------------

fn random_minibatch(dim: usize, hn: usize, seed: u64) -> MiniBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = |_| {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-1.0f64..1.0) + 0.05)
            .collect();
        normalized(&v).unwrap()
    };
    let anchor_text = unit(0);
    let anchor_image = unit(0);
    let texts: Vec<Vec<f64>> = (0..hn).map(&mut unit).collect();
    let images: Vec<Vec<f64>> = (0..hn).map(&mut unit).collect();
    MiniBatch::new(
        anchor_text,
        anchor_image,
        if hn == 0 {
            Mat::zeros(0, dim)
        } else {
            Mat::from_rows(&texts)
        },
        if hn == 0 {
            Mat::zeros(0, dim)
        } else {
            Mat::from_rows(&images)
        },
    )
    .unwrap()
}

#[test]
fn criterion_03_formula_reductions() {
    criterion(
        "criterion 3: zero deltas halve croco; zero croco zeroes the loss",
        || {
            for seed in 0..100u64 {
                let mb = random_minibatch(4 + (seed % 5) as usize, 1 + (seed % 4) as usize, seed);
                let cfg = LossConfig {
                    scale: 1.0 + (seed % 7) as f64,
                    delta_t: 0.0,
                    delta_i: 0.0,
                };
                let (b, _) = hn_loss(&mb, &cfg).unwrap();
                assert!(
                    (b.l_hn - b.l_croco / 2.0).abs() < 1e-12,
                    "seed {seed}: {} vs {}",
                    b.l_hn,
                    b.l_croco / 2.0
                );
            }
            // single-pair mini-batches: croco loss is exactly zero, so the
            // product vanishes no matter the deltas
            for seed in 0..100u64 {
                let mb = random_minibatch(4 + (seed % 5) as usize, 0, seed);
                let cfg = LossConfig {
                    scale: 2.0,
                    delta_t: 0.615 + (seed % 3) as f64,
                    delta_i: 1.223,
                };
                let (b, _) = hn_loss(&mb, &cfg).unwrap();
                assert_eq!(b.l_croco, 0.0);
                assert_eq!(b.l_hn, 0.0);
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 4 & 5. Mining
// ---------------------------------------------------------------------------

/// Clustered planted vocabulary: words within a cluster sit near one
/// direction, so the cosine branch fires within clusters and occasionally
/// across nearby ones; a few synonym sets cross clusters outright.
fn planted_mining_world(
    n_samples: usize,
    seed: u64,
) -> (Vec<Sample>, EmbeddingLexicon, SimilarityConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 6;
    let mut lex = EmbeddingLexicon::new(dim);

    let mut make_cluster_words = |prefix: &str, n_clusters: usize, per: usize| -> Vec<String> {
        let mut words = Vec::new();
        for c in 0..n_clusters {
            let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0f64..1.0)).collect();
            let center = normalized(&center).unwrap();
            for k in 0..per {
                let jitter: Vec<f64> = center
                    .iter()
                    .map(|v| v + rng.random_range(-0.12f64..0.12))
                    .collect();
                let word = format!("{prefix}{c}_{k}");
                lex.insert(&word, jitter);
                words.push(word);
            }
        }
        words
    };

    let entities = make_cluster_words("e", 8, 3);
    let relations = make_cluster_words("r", 4, 3);
    // synonym sets across clusters
    let e0 = entities[0].clone();
    let e9 = entities[9].clone();
    let r0 = relations[0].clone();
    let r6 = relations[6].clone();
    lex.add_synonym_set(&[&e0, &e9]);
    lex.add_synonym_set(&[&r0, &r6]);

    let samples: Vec<Sample> = (0..n_samples)
        .map(|i| {
            let s = &entities[rng.random_range(0..entities.len())];
            let o = &entities[rng.random_range(0..entities.len())];
            let r = &relations[rng.random_range(0..relations.len())];
            Sample {
                id: format!("m{i:05}"),
                raw_caption: format!("{s} {r} {o}"),
                triplet: Triplet::new(Phrase::noun(s), Phrase::verb(r), Phrase::noun(o)),
                state: if rng.random_bool(0.5) {
                    VerbState::Stative
                } else {
                    VerbState::Dynamic
                },
                scene_relation_count: 1,
                object_count: 1,
                image_features: vec![],
                bidirectional_plausible: rng.random_bool(0.9),
            }
        })
        .collect();
    (samples, lex, SimilarityConfig::default())
}

#[test]
fn criterion_04_mining_oracle_equivalence() {
    criterion(
        "criterion 4: optimized mine equals the naive O(n^2) oracle, 20 x 500 samples, both modes",
        || {
            let start = Instant::now();
            for seed in 0..20u64 {
                let (samples, lex, cfg) = planted_mining_world(500, seed);
                for mode in [DatasetMode::Croco, DatasetMode::CrocoD] {
                    let fast = mine_with_workers(&samples, mode, &lex, &cfg, 4).unwrap();
                    let oracle = mine_reference(&samples, mode, &lex, &cfg).unwrap();
                    assert_eq!(fast, oracle, "seed {seed} mode {mode:?}");
                }
            }
            let elapsed = start.elapsed();
            assert!(
                elapsed < Duration::from_secs(30),
                "mining equivalence took {elapsed:?}, budget is 30 s"
            );
            println!("       elapsed {elapsed:.2?}");
        },
    );
}

#[test]
fn criterion_05_hn_set_invariants() {
    criterion(
        "criterion 5: symmetry, no self-membership, worker-count determinism over 50 worlds",
        || {
            for seed in 0..50u64 {
                let (samples, lex, cfg) = planted_mining_world(60, 1000 + seed);
                let map1 = mine_with_workers(&samples, DatasetMode::Croco, &lex, &cfg, 1).unwrap();
                let map2 = mine_with_workers(&samples, DatasetMode::Croco, &lex, &cfg, 2).unwrap();
                let map8 = mine_with_workers(&samples, DatasetMode::Croco, &lex, &cfg, 8).unwrap();
                assert_eq!(map1, map2, "seed {seed}: 1 vs 2 workers");
                assert_eq!(map1, map8, "seed {seed}: 1 vs 8 workers");

                for entry in map1.entries() {
                    assert!(
                        !entry.hn.contains(&entry.anchor),
                        "seed {seed}: self-membership at {}",
                        entry.anchor
                    );
                    for other in &entry.hn {
                        let back = map1.get(other).unwrap();
                        assert!(
                            back.contains(&entry.anchor),
                            "seed {seed}: asymmetric pair ({}, {other})",
                            entry.anchor
                        );
                    }
                }

                // directional mode: no self-membership there either
                let dmap = mine_with_workers(&samples, DatasetMode::CrocoD, &lex, &cfg, 3).unwrap();
                for entry in dmap.entries() {
                    assert!(!entry.hn.contains(&entry.anchor));
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 6 & 7. Qualitative directions
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_hn_loss_beats_clip_loss() {
    criterion(
        "criterion 6: HN training beats CLIP training by >= 5 R@1 points (t2i, mean of 5 seeds)",
        || {
            let start = Instant::now();
            let mut hn_rates = Vec::new();
            let mut clip_rates = Vec::new();
            for seed in 0..5u64 {
                let world = synth_world(&WorldConfig {
                    seed,
                    ..WorldConfig::default()
                })
                .unwrap();
                assert_eq!(world.samples.len(), 2000);
                assert_eq!(world.entities.len(), 30);
                assert_eq!(world.relations.len(), 20);
                for mode in [LossMode::Hn, LossMode::Clip] {
                    let cfg = TrainConfig {
                        loss_mode: mode,
                        seed,
                        ..TrainConfig::toy_preset()
                    };
                    let (params, _) = train(&world, &cfg).unwrap();
                    let r1 = recall_at_1(&params, &world, Direction::TextToImage).unwrap();
                    match mode {
                        LossMode::Hn => hn_rates.push(r1),
                        LossMode::Clip => clip_rates.push(r1),
                    }
                }
            }
            let hn_mean: f64 = hn_rates.iter().sum::<f64>() / hn_rates.len() as f64;
            let clip_mean: f64 = clip_rates.iter().sum::<f64>() / clip_rates.len() as f64;
            let gap = hn_mean - clip_mean;
            let elapsed = start.elapsed();
            assert!(
                gap >= 0.05,
                "mean R@1 gap {gap:.4} (HN {hn_mean:.4} vs CLIP {clip_mean:.4}) below 5 points"
            );
            assert!(
                elapsed < Duration::from_secs(300),
                "qualitative run took {elapsed:?}, budget is 5 min"
            );
            println!(
                "       HN {hn_mean:.4} vs CLIP {clip_mean:.4}, gap {gap:.4}, elapsed {elapsed:.2?}"
            );
        },
    );
}

#[test]
fn criterion_07_stative_relations_are_harder() {
    criterion(
        "criterion 7: stative-subset R@1 strictly below dynamic on all 5 seeds (delta_acc < 0)",
        || {
            for seed in 0..5u64 {
                let world = synth_world(&WorldConfig {
                    seed,
                    stative_attenuation: 0.3,
                    stative_fraction: 0.5,
                    ..WorldConfig::default()
                })
                .unwrap();
                let cfg = TrainConfig {
                    seed,
                    ..TrainConfig::toy_preset()
                };
                let (params, _) = train(&world, &cfg).unwrap();
                let report = evaluate(&params, &world, true, Some("dynamic")).unwrap();
                let stative = report.per_subset["stative"].r1_t2i;
                let dynamic = report.per_subset["dynamic"].r1_t2i;
                let delta = report.delta_acc["stative"];
                assert!(
                    stative < dynamic && delta < 0.0,
                    "seed {seed}: stative {stative:.4} vs dynamic {dynamic:.4}"
                );
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 8. Batch decomposition
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_batch_decomposition_is_bitwise() {
    criterion(
        "criterion 8: batch loss equals the ordered sum of mini-batch losses bitwise, 100 batches",
        || {
            let cfg = LossConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(8108);
            for case in 0..100u64 {
                let count = 1 + (case % 5) as usize;
                let dim = 3 + (case % 6) as usize;
                let mbs: Vec<MiniBatch> = (0..count)
                    .map(|k| random_minibatch(dim, rng.random_range(0..4), case * 31 + k as u64))
                    .collect();
                let (total, grads) = batch_loss(&mbs, &cfg).unwrap();
                let mut expected = 0.0f64;
                for mb in &mbs {
                    let (b, _) = hn_loss(mb, &cfg).unwrap();
                    expected += b.l_hn;
                }
                assert_eq!(
                    total.to_bits(),
                    expected.to_bits(),
                    "case {case}: {total} vs {expected}"
                );
                assert_eq!(grads.len(), mbs.len());
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 9. Threshold sweep recovery
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_threshold_sweep_recovery() {
    criterion(
        "criterion 9: sweep over [0.80, 0.99] recovers tau = 0.90 with F1 = 1.0",
        || {
            // planted pair cosines: positives at or above 0.90, hardest
            // negative at 0.895 so only 0.90 separates perfectly
            let mut lex = EmbeddingLexicon::new(2).with_word("anchor", vec![1.0, 0.0]);
            let planted: [(&str, f64, bool); 7] = [
                ("p1", 0.905, true),
                ("p2", 0.93, true),
                ("p3", 0.96, true),
                ("p4", 0.99, true),
                ("n1", 0.895, false),
                ("n2", 0.84, false),
                ("n3", 0.30, false),
            ];
            for (w, c, _) in planted {
                lex.insert(w, vec![c, (1.0 - c * c).sqrt()]);
            }
            let pairs: Vec<(Phrase, Phrase, bool)> = planted
                .iter()
                .map(|&(w, _, label)| (Phrase::noun("anchor"), Phrase::noun(w), label))
                .collect();
            let result = sweep_threshold(&pairs, &lex, (0.80, 0.99), 0.01).unwrap();
            assert_eq!(result.curve.len(), 20);
            assert!(
                (result.best_tau - 0.90).abs() < 1e-9,
                "best tau {}",
                result.best_tau
            );
            let best = result
                .curve
                .iter()
                .find(|p| (p.tau - result.best_tau).abs() < 1e-12)
                .unwrap();
            assert_eq!(best.f1, 1.0);
        },
    );
}

// ---------------------------------------------------------------------------
// 10. Reproducibility
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_byte_identical_reruns() {
    criterion(
        "criterion 10: identical configs and seeds give byte-identical artifacts",
        || {
            let run = |dir: &std::path::Path| {
                let app = AppConfig::default();
                let world_cfg = WorldConfig {
                    n_entities: 10,
                    n_relations: 5,
                    latent_dim: 4,
                    n_samples: 200,
                    seed: 11,
                    ..WorldConfig::default()
                };
                let world = synth_world(&world_cfg).unwrap();
                let samples_path = dir.join("world.jsonl");
                let hnmap_path = dir.join("world.hn.jsonl");
                write_samples(&samples_path, &world.samples).unwrap();
                write_hnmap(&hnmap_path, &world.hnmap).unwrap();
                drive_core::config::write_sidecar(&samples_path, &app).unwrap();

                let train_cfg = TrainConfig {
                    epochs: 2,
                    seed: 11,
                    ..TrainConfig::toy_preset()
                };
                let (params, history) = train(&world, &train_cfg).unwrap();
                let ckpt = dir.join("params.bin");
                params.save(&ckpt, &app.hash()).unwrap();
                std::fs::write(dir.join("history.csv"), history.to_csv()).unwrap();

                let report = evaluate(&params, &world, true, Some("dynamic")).unwrap();
                let bytes = emit_report(&report, ReportFormat::Json).unwrap();
                std::fs::write(dir.join("report.json"), bytes).unwrap();
            };

            let dir_a = tempfile::tempdir().unwrap();
            let dir_b = tempfile::tempdir().unwrap();
            run(dir_a.path());
            run(dir_b.path());

            for name in [
                "world.jsonl",
                "world.hn.jsonl",
                "world.jsonl.meta.json",
                "params.bin",
                "params.bin.meta.json",
                "history.csv",
                "report.json",
            ] {
                let a = std::fs::read(dir_a.path().join(name)).unwrap();
                let b = std::fs::read(dir_b.path().join(name)).unwrap();
                assert_eq!(a, b, "artifact {name} differs between runs");
            }

            // checkpoints reload to the exact parameters
            let (reloaded, _) = EncoderParams::load(&dir_a.path().join("params.bin")).unwrap();
            let world = synth_world(&WorldConfig {
                n_entities: 10,
                n_relations: 5,
                latent_dim: 4,
                n_samples: 200,
                seed: 11,
                ..WorldConfig::default()
            })
            .unwrap();
            let train_cfg = TrainConfig {
                epochs: 2,
                seed: 11,
                ..TrainConfig::toy_preset()
            };
            let (params, _) = train(&world, &train_cfg).unwrap();
            assert_eq!(params, reloaded);
        },
    );
}
