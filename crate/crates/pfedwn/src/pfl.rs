//! Personalized training loop and baselines.
//!
//! One round: every selected neighbor takes one local epoch and sends its
//! model; the target mixes its own model with the weight-averaged neighbor
//! models, then performs its local epochs. Local-only, FedAvg, and FedProx
//! baselines share the same metric records for comparison.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::channel::ChannelParams;
use crate::data::ClientShard;
use crate::em::{run_em, EmConfig};
use crate::error::{Error, Result};
use crate::model::{
    gradient, local_train, loss, predict, BatchMode, ModelParams, TrainConfig,
};
use crate::rng::substream;
use crate::selection::{select_neighbors, SelectionResult};
use crate::topology::Topology;

/// Neighbors perform exactly one local epoch per round before sending.
const NEIGHBOR_EPOCHS_PER_ROUND: usize = 1;

/// Per-round measurements of the target client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub grad_norm_sq: f64,
    /// Model transmissions this round.
    pub transmissions: usize,
}

/// Full run trace plus summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rounds: Vec<RoundRecord>,
    pub max_test_accuracy: f64,
    pub wall_time_ms: f64,
}

impl Metrics {
    fn from_rounds(rounds: Vec<RoundRecord>, started: Instant) -> Metrics {
        let max_test_accuracy = rounds.iter().map(|r| r.test_accuracy).fold(0.0, f64::max);
        Metrics { rounds, max_test_accuracy, wall_time_ms: started.elapsed().as_secs_f64() * 1e3 }
    }

    pub fn grad_norm_trace(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.grad_norm_sq).collect()
    }
}

/// Shared loop controls for all training modes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub arch: crate::model::Arch,
    pub train: TrainConfig,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Scale of the random parameter initialization.
    pub init_scale: f64,
    pub master_seed: u64,
}

impl LoopConfig {
    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.rounds == 0 {
            return Err(Error::Parameter("rounds must be at least 1".into()));
        }
        Ok(())
    }

    fn init_model(&self, client_id: u32) -> ModelParams {
        let mut rng = substream(self.master_seed, "init", u64::from(client_id));
        ModelParams::random_init(self.arch, self.init_scale, &mut rng)
    }
}

/// Controls specific to the personalized loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PfedwnConfig {
    pub base: LoopConfig,
    /// Mixing weight on the target's own model in the aggregation.
    pub alpha: f64,
    pub em: EmConfig,
    /// Local epochs each selected neighbor runs before the weight
    /// estimation, so its model reflects its data.
    pub em_warmup_epochs: usize,
    /// Re-estimate the weights from the current neighbor models every round
    /// instead of once up front.
    pub refresh_em_each_round: bool,
    /// Sample per-round transmission drops with each link's error
    /// probability; a dropped neighbor leaves the aggregation for the round.
    pub sample_drops: bool,
    /// Keep a copy of the target model after every round, for convergence
    /// diagnostics.
    pub record_model_trace: bool,
}

/// Outcome of a local-only run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub metrics: Metrics,
    pub final_model: ModelParams,
}

/// Outcome of a personalized run.
#[derive(Debug, Clone, PartialEq)]
pub struct PfedwnRun {
    pub metrics: Metrics,
    pub final_model: ModelParams,
    pub selection: SelectionResult,
    /// Estimated aggregation weights, one per selected neighbor (id order).
    pub em_weights: Vec<f64>,
    /// Weight trace from the up-front estimation.
    pub em_trace: Vec<Vec<f64>>,
    /// Largest observed squared distance between a neighbor model and the
    /// target model at aggregation time.
    pub c_estimate: Option<f64>,
    /// Per-round target models, populated when requested.
    pub model_trace: Vec<ModelParams>,
}

/// Outcome of a FedAvg/FedProx run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun {
    pub per_client: BTreeMap<u32, Metrics>,
    pub global_model: ModelParams,
}

/// Convex aggregation `alpha * target + (1 - alpha) * sum_m pi_m * neighbor_m`.
pub fn aggregate(
    target: &ModelParams,
    neighbors: &[ModelParams],
    weights: &[f64],
    alpha: f64,
) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(target.clone());
    }
    if neighbors.is_empty() {
        return Err(Error::Parameter("aggregation with alpha < 1 needs at least one neighbor".into()));
    }
    if neighbors.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} neighbors vs {} weights",
            neighbors.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Parameter("weights must lie on the probability simplex".into()));
    }
    let len = target.values.len();
    for n in neighbors {
        if n.values.len() != len || n.arch != target.arch {
            return Err(Error::DimensionMismatch("aggregation shapes disagree".into()));
        }
    }
    let mut values = Vec::with_capacity(len);
    for (i, t) in target.values.iter().enumerate() {
        let mut mix = 0.0;
        for (n, w) in neighbors.iter().zip(weights) {
            mix += w * n.values[i];
        }
        values.push(alpha * t + (1.0 - alpha) * mix);
    }
    Ok(ModelParams { arch: target.arch, values })
}

/// Fraction of argmax-correct predictions; ties break to the lowest class
/// index.
pub fn evaluate(params: &ModelParams, test: &crate::data::Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Parameter("cannot evaluate on an empty test set".into()));
    }
    let predictions = predict(params, test)?;
    let correct = predictions.iter().zip(&test.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test.len() as f64)
}

fn round_record(
    model: &ModelParams,
    shard: &ClientShard,
    l2: f64,
    round: usize,
    transmissions: usize,
) -> Result<RoundRecord> {
    let g = gradient(model, &shard.train, l2)?;
    Ok(RoundRecord {
        round,
        test_accuracy: evaluate(model, &shard.test)?,
        train_loss: loss(model, &shard.train, l2)?,
        grad_norm_sq: g.iter().map(|v| v * v).sum(),
        transmissions,
    })
}

/// Derives the round's training configuration: the epoch count is set and,
/// in minibatch mode, the shuffle seed is re-keyed per (client, round).
fn round_train_config(base: &TrainConfig, epochs: usize, client: u32, round: usize) -> TrainConfig {
    let batch = match base.batch {
        BatchMode::Full => BatchMode::Full,
        BatchMode::Minibatch { size, seed } => BatchMode::Minibatch {
            size,
            seed: seed
                .wrapping_add(u64::from(client).wrapping_mul(0x9e3779b97f4a7c15))
                .wrapping_add(round as u64),
        },
    };
    TrainConfig { local_epochs: epochs, batch, ..*base }
}

/// Local-only baseline: `rounds` rounds of the target's local epochs.
pub fn run_local(shard: &ClientShard, config: &LoopConfig) -> Result<TrainRun> {
    config.validate()?;
    let started = Instant::now();
    let mut model = config.init_model(shard.client_id);
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let cfg = round_train_config(&config.train, config.train.local_epochs, shard.client_id, round);
        model = local_train(&model, &shard.train, &cfg)?;
        rounds.push(round_record(&model, shard, config.train.l2, round, 0)?);
    }
    Ok(TrainRun { metrics: Metrics::from_rounds(rounds, started), final_model: model })
}

/// The personalized loop: selection, weight estimation, then `rounds` rounds
/// of neighbor updates, aggregation, and target training.
///
/// With no selected neighbors (or `alpha = 1`) the target's trajectory
/// reduces exactly to [`run_local`].
pub fn run_pfedwn(
    topology: &Topology,
    channel_params: &ChannelParams,
    shards: &BTreeMap<u32, ClientShard>,
    config: &PfedwnConfig,
) -> Result<PfedwnRun> {
    config.base.validate()?;
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {}", config.alpha)));
    }
    let started = Instant::now();
    let selection = select_neighbors(topology, channel_params)?;
    let target_id = topology.target.id;
    let target_shard = shards
        .get(&target_id)
        .ok_or_else(|| Error::Parameter(format!("no shard for target client {target_id}")))?;

    // Selected neighbors start from their own initializations and warm up on
    // their own data so their models reflect their distributions.
    let mut neighbor_models: Vec<(u32, ModelParams)> = Vec::new();
    for &id in &selection.selected_ids {
        let shard = shards
            .get(&id)
            .ok_or_else(|| Error::Parameter(format!("no shard for selected neighbor {id}")))?;
        let mut model = config.base.init_model(id);
        if config.em_warmup_epochs > 0 {
            let cfg = round_train_config(&config.base.train, config.em_warmup_epochs, id, 0);
            model = local_train(&model, &shard.train, &cfg)?;
        }
        neighbor_models.push((id, model));
    }

    // Up-front data-similarity estimation over the warmed-up models.
    let (mut em_weights, em_trace) = if neighbor_models.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let models: Vec<ModelParams> = neighbor_models.iter().map(|(_, m)| m.clone()).collect();
        let run = run_em(&target_shard.train, &models, &config.em)?;
        (run.weights, run.trace)
    };

    let mut target_model = config.base.init_model(target_id);
    let mut rounds = Vec::with_capacity(config.base.rounds);
    let mut c_estimate: Option<f64> = None;
    let mut model_trace = Vec::new();
    for round in 1..=config.base.rounds {
        // Neighbor local updates and transmission.
        for (id, model) in &mut neighbor_models {
            let shard = shards.get(id).expect("validated above");
            let cfg = round_train_config(&config.base.train, NEIGHBOR_EPOCHS_PER_ROUND, *id, round);
            *model = local_train(model, &shard.train, &cfg)?;
        }
        let transmissions = neighbor_models.len();

        if config.refresh_em_each_round && !neighbor_models.is_empty() {
            let models: Vec<ModelParams> = neighbor_models.iter().map(|(_, m)| m.clone()).collect();
            em_weights = run_em(&target_shard.train, &models, &config.em)?.weights;
        }

        // Aggregation; dropped links leave the round's mixture and the
        // weights renormalize over the survivors.
        if !neighbor_models.is_empty() && config.alpha < 1.0 {
            let (models, weights) = if config.sample_drops {
                let mut rng = substream(config.base.master_seed, "drops", round as u64);
                let mut kept_models = Vec::new();
                let mut kept_weights = Vec::new();
                for ((id, model), w) in neighbor_models.iter().zip(&em_weights) {
                    let perr = selection.per_neighbor_perr[id];
                    let u: f64 = rand::Rng::random(&mut rng);
                    if u >= perr {
                        kept_models.push(model.clone());
                        kept_weights.push(*w);
                    }
                }
                let total: f64 = kept_weights.iter().sum();
                if total > 0.0 {
                    for w in &mut kept_weights {
                        *w /= total;
                    }
                }
                (kept_models, kept_weights)
            } else {
                let models: Vec<ModelParams> = neighbor_models.iter().map(|(_, m)| m.clone()).collect();
                (models, em_weights.clone())
            };
            for m in &models {
                let dist: f64 = m
                    .values
                    .iter()
                    .zip(&target_model.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                c_estimate = Some(c_estimate.map_or(dist, |c: f64| c.max(dist)));
            }
            if !models.is_empty() && weights.iter().sum::<f64>() > 0.0 {
                target_model = aggregate(&target_model, &models, &weights, config.alpha)?;
            }
        }

        // Target local training.
        let cfg = round_train_config(
            &config.base.train,
            config.base.train.local_epochs,
            target_id,
            round,
        );
        target_model = local_train(&target_model, &target_shard.train, &cfg)?;
        rounds.push(round_record(&target_model, target_shard, config.base.train.l2, round, transmissions)?);
        if config.record_model_trace {
            model_trace.push(target_model.clone());
        }
    }

    Ok(PfedwnRun {
        metrics: Metrics::from_rounds(rounds, started),
        final_model: target_model,
        selection,
        em_weights,
        em_trace,
        c_estimate,
        model_trace,
    })
}

/// Sample-size-weighted federated averaging over the given participants.
pub fn run_fedavg(shards: &[ClientShard], config: &LoopConfig) -> Result<FederatedRun> {
    run_federated(shards, config, 0.0)
}

/// FedAvg with a proximal pull of strength `prox_mu` toward the round's
/// global model during local updates. Zero strength reduces exactly to
/// [`run_fedavg`].
pub fn run_fedprox(shards: &[ClientShard], config: &LoopConfig, prox_mu: f64) -> Result<FederatedRun> {
    if prox_mu < 0.0 {
        return Err(Error::Parameter("prox_mu must be non-negative".into()));
    }
    run_federated(shards, config, prox_mu)
}

fn run_federated(shards: &[ClientShard], config: &LoopConfig, prox_mu: f64) -> Result<FederatedRun> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::Parameter("federated training needs at least one client".into()));
    }
    let started = Instant::now();
    let total: usize = shards.iter().map(|s| s.train.len()).sum();
    if total == 0 {
        return Err(Error::Parameter("no training samples across clients".into()));
    }
    let weights: Vec<f64> = shards.iter().map(|s| s.train.len() as f64 / total as f64).collect();
    let anchor_id = shards.iter().map(|s| s.client_id).min().expect("non-empty");
    let mut global = config.init_model(anchor_id);

    let mut per_client_rounds: BTreeMap<u32, Vec<RoundRecord>> =
        shards.iter().map(|s| (s.client_id, Vec::new())).collect();
    for round in 1..=config.rounds {
        let mut locals = Vec::with_capacity(shards.len());
        for shard in shards {
            let cfg =
                round_train_config(&config.train, config.train.local_epochs, shard.client_id, round);
            locals.push(prox_local_train(&global, &shard.train, &cfg, prox_mu)?);
        }
        let mut values = vec![0.0; global.values.len()];
        for (local, w) in locals.iter().zip(&weights) {
            for (v, x) in values.iter_mut().zip(&local.values) {
                *v += w * x;
            }
        }
        global = ModelParams { arch: global.arch, values };

        for shard in shards {
            let record = round_record(&global, shard, config.train.l2, round, shards.len())?;
            per_client_rounds.get_mut(&shard.client_id).expect("initialized").push(record);
        }
    }

    let per_client = per_client_rounds
        .into_iter()
        .map(|(id, rounds)| (id, Metrics::from_rounds(rounds, started)))
        .collect();
    Ok(FederatedRun { per_client, global_model: global })
}

/// Local training with an optional proximal term `prox_mu * (theta - anchor)`
/// added to every gradient step.
fn prox_local_train(
    anchor: &ModelParams,
    data: &crate::data::Dataset,
    config: &TrainConfig,
    prox_mu: f64,
) -> Result<ModelParams> {
    config.validate()?;
    let mut current = anchor.clone();
    let mut step = 0usize;
    let one_step = |model: &mut ModelParams, batch: &crate::data::Dataset, step: usize| -> Result<()> {
        let grad = gradient(model, batch, config.l2)?;
        for ((v, g), a) in model.values.iter_mut().zip(&grad).zip(&anchor.values) {
            *v -= config.learning_rate * (g + prox_mu * (*v - *a));
        }
        if !model.check_finite() {
            return Err(Error::Divergence { step });
        }
        Ok(())
    };
    match config.batch {
        BatchMode::Full => {
            for _ in 0..config.local_epochs {
                step += 1;
                one_step(&mut current, data, step)?;
            }
        }
        BatchMode::Minibatch { size, seed } => {
            use rand::seq::SliceRandom;
            for epoch in 0..config.local_epochs {
                let mut order: Vec<usize> = (0..data.len()).collect();
                let mut rng = substream(seed, "minibatch", epoch as u64);
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    step += 1;
                    let batch = data.subset(chunk);
                    one_step(&mut current, &batch, step)?;
                }
            }
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, Dataset};
    use crate::model::Arch;
    use crate::topology::{build_topology, PlacementMode, TopologyConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn arch() -> Arch {
        Arch::Softmax { dim: 2, n_classes: 2 }
    }

    fn shard(client_id: u32, seed: u64) -> ClientShard {
        let data = gen_synthetic(2, 2, 40, 1.0, seed).unwrap();
        let (train, test) = split(&data, 0.75, seed).unwrap();
        ClientShard { client_id, train, test }
    }

    fn loop_config(rounds: usize) -> LoopConfig {
        LoopConfig {
            arch: arch(),
            train: TrainConfig::full_batch(0.2, 2),
            rounds,
            init_scale: 0.01,
            master_seed: 11,
        }
    }

    #[test]
    fn aggregate_identity_at_alpha_one() {
        let t = ModelParams::random_init(arch(), 1.0, &mut substream(1, "t", 0));
        let n = ModelParams::random_init(arch(), 1.0, &mut substream(1, "n", 0));
        let out = aggregate(&t, &[n], &[1.0], 1.0).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn aggregate_copies_single_neighbor_at_alpha_zero() {
        let t = ModelParams::random_init(arch(), 1.0, &mut substream(2, "t", 0));
        let n = ModelParams::random_init(arch(), 1.0, &mut substream(2, "n", 0));
        let out = aggregate(&t, std::slice::from_ref(&n), &[1.0], 0.0).unwrap();
        assert_eq!(out.values, n.values);
    }

    #[test]
    fn aggregate_midpoint() {
        let mut t = ModelParams::zeros(arch());
        t.values.iter_mut().for_each(|v| *v = 2.0);
        let n = ModelParams::zeros(arch());
        let out = aggregate(&t, &[n], &[1.0], 0.5).unwrap();
        assert!(out.values.iter().all(|v| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn aggregate_rejects_bad_inputs() {
        let t = ModelParams::zeros(arch());
        let n = ModelParams::zeros(arch());
        assert!(aggregate(&t, std::slice::from_ref(&n), &[1.0], 1.5).is_err());
        assert!(aggregate(&t, &[], &[], 0.5).is_err());
        assert!(aggregate(&t, std::slice::from_ref(&n), &[0.4], 0.5).is_err());
        let other = ModelParams::zeros(Arch::Softmax { dim: 3, n_classes: 2 });
        assert!(aggregate(&t, &[other], &[1.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_stays_in_convex_hull(alpha in 0.0..=1.0f64, w in 0.0..=1.0f64, seed in 0u64..500) {
            let t = ModelParams::random_init(arch(), 1.0, &mut substream(seed, "t", 0));
            let a = ModelParams::random_init(arch(), 1.0, &mut substream(seed, "a", 0));
            let b = ModelParams::random_init(arch(), 1.0, &mut substream(seed, "b", 0));
            let out = aggregate(&t, &[a.clone(), b.clone()], &[w, 1.0 - w], alpha).unwrap();
            for i in 0..out.values.len() {
                let lo = t.values[i].min(a.values[i]).min(b.values[i]) - 1e-12;
                let hi = t.values[i].max(a.values[i]).max(b.values[i]) + 1e-12;
                prop_assert!(out.values[i] >= lo && out.values[i] <= hi);
            }
        }
    }

    #[test]
    fn evaluate_tie_breaks_to_lowest_class() {
        // All-zero parameters tie every logit; prediction falls to class 0,
        // so accuracy on a balanced set is exactly 1/C.
        let data = gen_synthetic(4, 2, 25, 1.0, 3).unwrap();
        let params = ModelParams::zeros(Arch::Softmax { dim: 2, n_classes: 4 });
        let acc = evaluate(&params, &data).unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn evaluate_empty_test_is_error() {
        let empty = Dataset::new(Array2::zeros((0, 2)), vec![], 2).unwrap();
        assert!(evaluate(&ModelParams::zeros(arch()), &empty).is_err());
    }

    #[test]
    fn memorizer_scores_perfectly_on_its_train_set() {
        let s = shard(0, 5);
        let trained = local_train(
            &ModelParams::zeros(arch()),
            &s.train,
            &TrainConfig::full_batch(0.5, 500),
        )
        .unwrap();
        let acc = evaluate(&trained, &s.train).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_gives_flat_loss() {
        let s = shard(0, 6);
        let mut config = loop_config(5);
        config.train.learning_rate = 0.0;
        let run = run_local(&s, &config).unwrap();
        let first = run.metrics.rounds[0].train_loss;
        assert!(run.metrics.rounds.iter().all(|r| r.train_loss == first));
    }

    fn pfedwn_setup(eps: f64) -> (Topology, ChannelParams, BTreeMap<u32, ClientShard>, PfedwnConfig) {
        let topo = build_topology(
            &TopologyConfig { mode: PlacementMode::FixedCount(3), ..Default::default() },
            21,
        )
        .unwrap();
        let channel = ChannelParams { error_threshold: eps, ..ChannelParams::default() };
        let mut shards = BTreeMap::new();
        shards.insert(topo.target.id, shard(topo.target.id, 31));
        for n in &topo.neighbors {
            shards.insert(n.id, shard(n.id, 100 + u64::from(n.id)));
        }
        let config = PfedwnConfig {
            base: loop_config(6),
            alpha: 0.5,
            em: EmConfig::default(),
            em_warmup_epochs: 10,
            refresh_em_each_round: false,
            sample_drops: false,
            record_model_trace: false,
        };
        (topo, channel, shards, config)
    }

    #[test]
    fn no_neighbors_reduces_to_local_bit_exact() {
        let (topo, channel, shards, config) = pfedwn_setup(f64::MIN_POSITIVE);
        let run = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        assert!(run.selection.selected_ids.is_empty());
        let local = run_local(&shards[&topo.target.id], &config.base).unwrap();
        assert_eq!(run.final_model, local.final_model);
        assert_eq!(run.metrics.rounds, local.metrics.rounds);
    }

    #[test]
    fn alpha_one_matches_local_trajectory() {
        let (topo, channel, shards, mut config) = pfedwn_setup(0.9);
        config.alpha = 1.0;
        let run = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        assert!(!run.selection.selected_ids.is_empty());
        let local = run_local(&shards[&topo.target.id], &config.base).unwrap();
        assert_eq!(run.final_model, local.final_model);
        for (a, b) in run.metrics.rounds.iter().zip(&local.metrics.rounds) {
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.grad_norm_sq.to_bits(), b.grad_norm_sq.to_bits());
        }
    }

    #[test]
    fn pfedwn_logs_one_transmission_per_selected_neighbor() {
        let (topo, channel, shards, config) = pfedwn_setup(0.9);
        let run = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        let m = run.selection.selected_ids.len();
        assert!(m > 0);
        assert!(run.metrics.rounds.iter().all(|r| r.transmissions == m));
    }

    #[test]
    fn pfedwn_is_deterministic() {
        let (topo, channel, shards, config) = pfedwn_setup(0.9);
        let a = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        let b = run_pfedwn(&topo, &channel, &shards, &config).unwrap();
        assert_eq!(a.metrics.rounds, b.metrics.rounds);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.em_weights, b.em_weights);
    }

    #[test]
    fn fedprox_zero_mu_equals_fedavg() {
        let shards = vec![shard(0, 41), shard(1, 42), shard(2, 43)];
        let config = loop_config(5);
        let avg = run_fedavg(&shards, &config).unwrap();
        let prox = run_fedprox(&shards, &config, 0.0).unwrap();
        assert_eq!(avg.global_model, prox.global_model);
        for id in [0u32, 1, 2] {
            assert_eq!(avg.per_client[&id].rounds, prox.per_client[&id].rounds);
        }
    }

    #[test]
    fn single_client_fedavg_equals_local() {
        let s = shard(3, 44);
        let config = loop_config(5);
        let fed = run_fedavg(std::slice::from_ref(&s), &config).unwrap();
        let local = run_local(&s, &config).unwrap();
        assert_eq!(fed.global_model, local.final_model);
        for (a, b) in fed.per_client[&3].rounds.iter().zip(&local.metrics.rounds) {
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.grad_norm_sq.to_bits(), b.grad_norm_sq.to_bits());
        }
    }

    #[test]
    fn identical_shards_track_local_trajectory() {
        let s = shard(0, 45);
        let clones = vec![
            ClientShard { client_id: 0, ..s.clone() },
            ClientShard { client_id: 1, ..s.clone() },
            ClientShard { client_id: 2, ..s.clone() },
        ];
        let config = loop_config(4);
        let fed = run_fedavg(&clones, &config).unwrap();
        let local = run_local(&s, &config).unwrap();
        for (a, b) in fed.per_client[&0].rounds.iter().zip(&local.metrics.rounds) {
            assert_abs_diff_eq!(a.train_loss, b.train_loss, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_prox_pins_local_updates_near_anchor() {
        let s = shard(0, 46);
        let anchor = loop_config(1).init_model(0);
        let update_norm = |mu: f64| -> f64 {
            let cfg = TrainConfig { learning_rate: 5e-4, local_epochs: 50, batch: BatchMode::Full, l2: 0.0 };
            let out = prox_local_train(&anchor, &s.train, &cfg, mu).unwrap();
            out.values.iter().zip(&anchor.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let pinned = update_norm(1000.0);
        let free = update_norm(0.0);
        assert!(pinned < free / 10.0, "pinned update {pinned} vs free {free}");
    }

    #[test]
    fn global_model_underperforms_local_under_strong_skew() {
        // Two clients with disjoint class pairs of a four-class mixture: the
        // averaged global model serves the target's test set worse than its
        // own local training.
        let arch4 = Arch::Softmax { dim: 2, n_classes: 4 };
        let make = |classes: [usize; 2], n: usize, seed: u64| -> Dataset {
            let pool = gen_synthetic(4, 2, n + 300, 2.0, seed).unwrap();
            let idx: Vec<usize> = (0..pool.len())
                .filter(|&i| classes.contains(&pool.labels[i]))
                .take(n)
                .collect();
            pool.subset(&idx)
        };
        let mut local_wins = 0;
        for seed in 0..3u64 {
            let target = ClientShard {
                client_id: 0,
                train: make([0, 1], 40, 70 + seed),
                test: make([0, 1], 60, 80 + seed),
            };
            let other = ClientShard {
                client_id: 1,
                train: make([2, 3], 240, 90 + seed),
                test: make([2, 3], 40, 95 + seed),
            };
            let config = LoopConfig {
                arch: arch4,
                train: TrainConfig::full_batch(0.2, 2),
                rounds: 15,
                init_scale: 0.01,
                master_seed: 60 + seed,
            };
            let fed = run_fedavg(&[target.clone(), other], &config).unwrap();
            let local = run_local(&target, &config).unwrap();
            if local.metrics.max_test_accuracy > fed.per_client[&0].max_test_accuracy {
                local_wins += 1;
            }
        }
        assert_eq!(local_wins, 3, "global model matched local under strong skew");
    }

    #[test]
    fn fedprox_default_smoke_run_logs_metrics() {
        let shards = vec![shard(0, 48), shard(1, 49)];
        let run = run_fedprox(&shards, &loop_config(3), 0.01).unwrap();
        assert_eq!(run.per_client.len(), 2);
        assert!(run.per_client.values().all(|m| m.rounds.len() == 3));
    }
}
