//! End-to-end training behavior on engineered desk-scale fixtures.

use std::collections::BTreeMap;

use pfedwn::channel::ChannelParams;
use pfedwn::data::{gen_synthetic, ClientShard, Dataset};
use pfedwn::em::EmConfig;
use pfedwn::model::{Arch, TrainConfig};
use pfedwn::pfl::{run_local, run_pfedwn, LoopConfig, PfedwnConfig};
use pfedwn::topology::{Area, Node, Role, Topology};

const DIM: usize = 8;
const N_CLASSES: usize = 6;

/// Draws `per_class` samples for each of the named classes from the shared
/// six-class mixture.
fn class_data(classes: &[usize], per_class: usize, spread: f64, seed: u64) -> Dataset {
    let pool = gen_synthetic(N_CLASSES, DIM, per_class + 400, spread, seed).unwrap();
    let mut take: Vec<usize> = Vec::new();
    for &c in classes {
        let mut got = 0;
        for i in 0..pool.len() {
            if pool.labels[i] == c {
                take.push(i);
                got += 1;
                if got == per_class {
                    break;
                }
            }
        }
    }
    pool.subset(&take)
}

/// Target with a small two-class shard; one neighbor shares the target's
/// class pair with plenty of data, the rest hold disjoint classes.
fn two_cluster_fixture(seed: u64) -> (Topology, BTreeMap<u32, ClientShard>) {
    let spread = 2.0;
    let target_shard = ClientShard {
        client_id: 0,
        train: class_data(&[0, 1], 6, spread, seed),
        test: class_data(&[0, 1], 100, spread, seed + 50),
    };
    let twin = ClientShard {
        client_id: 1,
        train: class_data(&[0, 1], 150, spread, seed + 100),
        test: class_data(&[0, 1], 40, spread, seed + 150),
    };
    let mut shards = BTreeMap::new();
    shards.insert(0, target_shard);
    shards.insert(1, twin);
    for (i, classes) in [[2usize, 3], [3, 4], [4, 5]].iter().enumerate() {
        let id = i as u32 + 2;
        shards.insert(
            id,
            ClientShard {
                client_id: id,
                train: class_data(classes, 75, spread, seed + 200 + id as u64),
                test: class_data(classes, 30, spread, seed + 250 + id as u64),
            },
        );
    }
    // All neighbors sit within a few meters of the target, so every link
    // clears the default error threshold and all four are selected.
    let target = Node { id: 0, position: [25.0, 25.0], role: Role::Target };
    let neighbors = vec![
        Node { id: 1, position: [28.0, 25.0], role: Role::Neighbor },
        Node { id: 2, position: [25.0, 29.0], role: Role::Neighbor },
        Node { id: 3, position: [21.5, 25.0], role: Role::Neighbor },
        Node { id: 4, position: [25.0, 20.5], role: Role::Neighbor },
    ];
    let topology = Topology { area: Area::new(50.0, 50.0), seed, target, neighbors };
    (topology, shards)
}

fn pfedwn_config(seed: u64) -> PfedwnConfig {
    PfedwnConfig {
        base: LoopConfig {
            arch: Arch::Softmax { dim: DIM, n_classes: N_CLASSES },
            train: TrainConfig::full_batch(0.1, 1),
            rounds: 80,
            init_scale: 0.01,
            master_seed: seed,
        },
        alpha: 0.5,
        em: EmConfig::default(),
        em_warmup_epochs: 100,
        refresh_em_each_round: false,
        sample_drops: false,
        record_model_trace: false,
    }
}

#[test]
fn similar_neighbor_lifts_target_accuracy_over_local() {
    let mut pf_total = 0.0;
    let mut local_total = 0.0;
    for seed in 0..5u64 {
        let (topo, shards) = two_cluster_fixture(1000 * (seed + 1));
        let config = pfedwn_config(seed);
        let channel = ChannelParams::default();
        let run = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        assert_eq!(run.selection.selected_ids, vec![1, 2, 3, 4]);
        // The weight mass should concentrate on the distribution twin.
        assert!(run.em_weights[0] > 0.7, "seed {seed}: twin weight {:.3}", run.em_weights[0]);
        let local = run_local(&shards[&0], &config.base).unwrap();
        pf_total += run.metrics.max_test_accuracy;
        local_total += local.metrics.max_test_accuracy;
    }
    let pf = pf_total / 5.0;
    let local = local_total / 5.0;
    assert!(
        pf - local >= 0.02,
        "personalized {pf:.4} vs local {local:.4}: margin {:.2} points",
        100.0 * (pf - local)
    );
}

#[test]
fn transmission_drops_keep_the_loop_running() {
    let (topo, shards) = two_cluster_fixture(7000);
    let mut config = pfedwn_config(3);
    config.sample_drops = true;
    config.base.rounds = 10;
    let run = run_pfedwn(&topo, &ChannelParams::default(), &shards, &config).unwrap();
    assert_eq!(run.metrics.rounds.len(), 10);
    let rerun = run_pfedwn(&topo, &ChannelParams::default(), &shards, &config).unwrap();
    assert_eq!(run.metrics.rounds, rerun.metrics.rounds);
}

#[test]
fn em_refresh_mode_converges_to_similar_weights() {
    let (topo, shards) = two_cluster_fixture(8000);
    let mut config = pfedwn_config(4);
    config.base.rounds = 15;
    config.refresh_em_each_round = true;
    let run = run_pfedwn(&topo, &ChannelParams::default(), &shards, &config).unwrap();
    assert!(run.em_weights[0] > 0.7, "twin weight after refresh {:.3}", run.em_weights[0]);
}
