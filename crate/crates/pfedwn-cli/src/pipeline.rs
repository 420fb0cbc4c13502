//! Data and topology assembly shared by the experiment modes.

use std::collections::BTreeMap;

use pfedwn::data::{
    dirichlet_partition, gen_synthetic, load_idx, split, standardize, ClientShard, Dataset,
    PartitionSpec,
};
use pfedwn::rng::substream;
use pfedwn::topology::{build_topology, Topology};
use rand::Rng;

use crate::config::{DataSource, ExperimentConfig};
use crate::RunnerError;

/// Builds the layout for the run.
pub fn build_layout(config: &ExperimentConfig) -> Result<Topology, RunnerError> {
    build_topology(&config.to_topology_config(), config.master_seed)
        .map_err(|e| RunnerError::from_module("topology", e))
}

/// Produces the source dataset, partitions it across the target and all
/// neighbors with label-skew Dirichlet proportions, and splits every shard
/// into train/test.
pub fn build_shards(
    config: &ExperimentConfig,
    topology: &Topology,
) -> Result<BTreeMap<u32, ClientShard>, RunnerError> {
    let data = &config.data;
    let source: Dataset = match &data.source {
        DataSource::Synthetic => gen_synthetic(
            data.n_classes,
            data.dim,
            data.per_class_count,
            data.cluster_spread,
            config.master_seed,
        )
        .map_err(|e| RunnerError::from_module("data", e))?,
        DataSource::Idx { images, labels } => {
            load_idx(images, labels).map_err(|e| RunnerError::from_module("data", e))?
        }
    };

    let mut client_ids: Vec<u32> = vec![topology.target.id];
    client_ids.extend(topology.neighbor_ids());

    let spec = PartitionSpec {
        n_clients: client_ids.len(),
        dirichlet_alpha: data.dirichlet_alpha,
        seed: config.master_seed,
    };
    let parts = dirichlet_partition(&source, &spec)
        .map_err(|e| RunnerError::from_module("data", e))?;

    let mut shards = BTreeMap::new();
    for (client_id, indices) in client_ids.into_iter().zip(parts) {
        let shard_data = source.subset(&indices);
        let split_seed: u64 = substream(config.master_seed, "client-split", u64::from(client_id))
            .random();
        let (mut train, mut test) = split(&shard_data, data.train_fraction, split_seed)
            .map_err(|e| RunnerError::from_module("data", e))?;
        if data.standardize {
            standardize(&mut train, &mut [&mut test]);
        }
        shards.insert(client_id, ClientShard { client_id, train, test });
    }
    Ok(shards)
}
