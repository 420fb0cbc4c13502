//! Channel-aware neighbor selection and its sweep experiments.
//!
//! A neighbor joins the collaboration set exactly when its transmission-error
//! probability to the target, computed with every other neighbor acting as an
//! interferer, falls strictly below the error threshold.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::channel::{transmission_error_prob, ChannelParams, LinkBudget};
use crate::error::{Error, Result};
use crate::numeric::mean_and_stderr;
use crate::topology::{build_topology, PlacementMode, TargetRule, Topology, TopologyConfig};

/// Outcome of evaluating one topology under one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Ids of selected neighbors, ascending.
    pub selected_ids: Vec<u32>,
    /// Error probability of every candidate, keyed by id.
    pub per_neighbor_perr: BTreeMap<u32, f64>,
    /// SINR threshold the probabilities were computed with.
    pub gamma_th: f64,
    /// Error threshold the selection used.
    pub epsilon: f64,
}

impl SelectionResult {
    pub fn selected_count(&self) -> usize {
        self.selected_ids.len()
    }
}

/// Evaluates every neighbor of the topology and selects those whose error
/// probability is strictly below the error threshold.
pub fn select_neighbors(topology: &Topology, params: &ChannelParams) -> Result<SelectionResult> {
    let mut per_neighbor_perr = BTreeMap::new();
    for n in &topology.neighbors {
        let budget = LinkBudget::from_topology(topology, n.id, params)?;
        per_neighbor_perr.insert(n.id, transmission_error_prob(&budget, params)?);
    }
    let selected_ids = per_neighbor_perr
        .iter()
        .filter(|(_, p)| **p < params.error_threshold)
        .map(|(id, _)| *id)
        .collect();
    Ok(SelectionResult {
        selected_ids,
        per_neighbor_perr,
        gamma_th: params.sinr_threshold,
        epsilon: params.error_threshold,
    })
}

/// Cartesian grid for selection sweeps. Empty axes fall back to the base
/// parameter value (or, for density, to ten fixed-count neighbors).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub gamma_th: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub density: Vec<f64>,
    pub n_subchannels: Vec<usize>,
}

/// One row of a sweep: a grid point with its replication statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma_th: f64,
    pub epsilon: f64,
    pub density: f64,
    pub n_subchannels: usize,
    pub mean_selected: f64,
    pub stderr: f64,
    pub replications: usize,
}

/// Runs the sweep: for every grid point, the average selected-neighbor count
/// over `replications` independently placed topologies.
///
/// Topologies are keyed by `(density, replication)` and shared across the
/// gamma/epsilon/subchannel axes, so comparisons along those axes are paired.
/// Replications run in parallel; results are reduced in replication order, so
/// output is deterministic for a fixed master seed.
pub fn selection_sweep(
    grid: &SweepGrid,
    base: &ChannelParams,
    area: crate::topology::Area,
    replications: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if replications == 0 {
        return Err(Error::Parameter("replications must be at least 1".into()));
    }
    base.validate()?;
    let gammas = or_default(&grid.gamma_th, base.sinr_threshold);
    let epsilons = or_default(&grid.epsilon, base.error_threshold);
    let subchannels = or_default(&grid.n_subchannels, base.n_subchannels);
    // Density axis: an empty axis means fixed-count placement of ten
    // neighbors, encoded as a negative sentinel so the row still carries a
    // density column.
    let densities: Vec<Option<f64>> = if grid.density.is_empty() {
        vec![None]
    } else {
        grid.density.iter().copied().map(Some).collect()
    };

    let mut rows = Vec::new();
    for density in &densities {
        // Per-replication counts for every (F, gamma, epsilon) combination,
        // computed against the replication's shared topology.
        let per_rep: Vec<Vec<usize>> = (0..replications)
            .into_par_iter()
            .map(|rep| -> Result<Vec<usize>> {
                let topo = sweep_topology(*density, area, master_seed, rep as u64)?;
                let mut counts = Vec::with_capacity(subchannels.len() * gammas.len() * epsilons.len());
                for &nf in &subchannels {
                    for &gamma_th in &gammas {
                        let perrs: Vec<f64> = match &topo {
                            None => Vec::new(),
                            Some(t) => {
                                let mut params = base.clone();
                                params.n_subchannels = nf;
                                params.sinr_threshold = gamma_th;
                                t.neighbors
                                    .iter()
                                    .map(|n| {
                                        let budget = LinkBudget::from_topology(t, n.id, &params)?;
                                        transmission_error_prob(&budget, &params)
                                    })
                                    .collect::<Result<Vec<f64>>>()?
                            }
                        };
                        for &eps in &epsilons {
                            counts.push(perrs.iter().filter(|p| **p < eps).count());
                        }
                    }
                }
                Ok(counts)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut slot = 0;
        for &nf in &subchannels {
            for &gamma_th in &gammas {
                for &eps in &epsilons {
                    let counts: Vec<f64> = per_rep.iter().map(|c| c[slot] as f64).collect();
                    let (mean_selected, stderr) = mean_and_stderr(&counts);
                    rows.push(SweepRow {
                        gamma_th,
                        epsilon: eps,
                        density: density.unwrap_or(0.0),
                        n_subchannels: nf,
                        mean_selected,
                        stderr,
                        replications,
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(rows)
}

/// Builds the shared topology for one sweep replication. A point process
/// that places no nodes yields `None`, which counts as zero selected.
fn sweep_topology(
    density: Option<f64>,
    area: crate::topology::Area,
    master_seed: u64,
    rep: u64,
) -> Result<Option<Topology>> {
    let config = match density {
        Some(d) => TopologyConfig {
            area,
            mode: PlacementMode::Density(d),
            target_rule: TargetRule::NearestCenter,
            min_separation: 1.0,
        },
        None => TopologyConfig {
            area,
            mode: PlacementMode::FixedCount(10),
            target_rule: TargetRule::Center,
            min_separation: 1.0,
        },
    };
    match build_topology(&config, master_seed.wrapping_add(rep.wrapping_mul(0x9e37_79b9))) {
        Ok(t) => Ok(Some(t)),
        Err(Error::EmptyPointProcess) => Ok(None),
        Err(e) => Err(e),
    }
}

fn or_default<T: Copy>(axis: &[T], fallback: T) -> Vec<T> {
    if axis.is_empty() {
        vec![fallback]
    } else {
        axis.to_vec()
    }
}
