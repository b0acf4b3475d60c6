use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use super::training::{local_sgd, train_global_classifier};
use super::{evaluate_all, ClientState, RepRecord, RoundMetrics, RoundPlan, SimulationConfig};
use crate::affinity::{
    aggregate_extractor, raw_weight, update_matrix_row, AffinityMatrix, NeighborSet, WeightVector,
};
use crate::error::{config_err, Result};
use crate::nn::{self, param_l2_distance, ModelParams};
use crate::representation::{class_mean_reps, fuse_with_history, ClassRepresentation, Fusion};
use crate::seed::{rng_for, stream};

/// Everything one selected client sends back to the server.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub client: usize,
    pub neighbors: NeighborSet,
    pub weights: WeightVector,
    /// Extractor after neighbor aggregation, before local training.
    pub aggregated_extractor: Vec<f64>,
    pub model: ModelParams,
    pub current_reps: Vec<ClassRepresentation>,
    pub fusion: Fusion,
}

/// Output of [`run_mocfl_round`].
#[derive(Clone, Debug)]
pub struct MocflRound {
    pub metrics: RoundMetrics,
    pub updates: Vec<ClientUpdate>,
    pub reps: Vec<RepRecord>,
}

/// Client side of one round, computed from an immutable snapshot.
///
/// `neighbor_extractors` are the start-of-round extractors of the clients in
/// `neighbors`, in the same order.
pub fn client_step(
    state: &ClientState,
    neighbors: &NeighborSet,
    neighbor_extractors: &[&[f64]],
    global_classifier: &[f64],
    cfg: &SimulationConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let k = state.id;
    let local = state.model.with_classifier(global_classifier)?;
    let prev = local.extractor();

    let raw = if state.data.validation.is_empty() {
        log::warn!("client {k} has no validation rows; neighbor weights set to zero");
        vec![0.0; neighbor_extractors.len()]
    } else {
        let val = state.data.validation.as_batch()?;
        let loss_local = nn::loss(&local, &val)?;
        neighbor_extractors
            .iter()
            .map(|phi| {
                let loss_recv = nn::loss(&local.with_extractor(phi)?, &val)?;
                Ok(raw_weight(loss_local, loss_recv, param_l2_distance(prev, phi)?))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let weights = WeightVector::from_raw(raw);
    let aggregated_extractor = aggregate_extractor(prev, neighbor_extractors, &weights.normalized)?;

    let mut rng = rng_for(cfg.seed, &[stream::LOCAL_TRAIN, round as u64, k as u64]);
    let model = local_sgd(
        &local.with_extractor(&aggregated_extractor)?,
        &state.data.train,
        cfg.local_lr,
        cfg.batch_size,
        cfg.local_epochs,
        &mut rng,
    )?;

    let arch = model.arch();
    let current_reps = class_mean_reps(arch, model.extractor(), &state.data.train, round)?;
    let fusion = if cfg.recompute_history && state.last_round.is_some() {
        let hist: BTreeMap<usize, ClassRepresentation> = class_mean_reps(
            arch,
            state.model.extractor(),
            &state.data.train,
            state.last_round.unwrap_or(0),
        )?
        .into_iter()
        .map(|r| (r.class, r))
        .collect();
        fuse_with_history(&current_reps, &hist, &cfg.kernel())?
    } else {
        fuse_with_history(&current_reps, &state.history, &cfg.kernel())?
    };

    Ok(ClientUpdate {
        client: k,
        neighbors: neighbors.clone(),
        weights,
        aggregated_extractor,
        model,
        current_reps,
        fusion,
    })
}

/// One MoCFL round.
///
/// Client steps run in parallel against the start-of-round state. The server
/// then applies affinity rows, installs models and pools representations in
/// ascending client order, and trains the global classifier on the pool.
pub fn run_mocfl_round(
    states: &mut [ClientState],
    affinity: &mut AffinityMatrix,
    global_classifier: &mut Vec<f64>,
    plan: &RoundPlan,
    cfg: &SimulationConfig,
) -> Result<MocflRound> {
    let start = Instant::now();
    if affinity.size() != states.len() {
        return Err(config_err(format!(
            "affinity matrix is {0}x{0} but there are {1} clients",
            affinity.size(),
            states.len()
        )));
    }
    let snapshot: &[ClientState] = states;
    let theta: &[f64] = global_classifier;
    let updates: Vec<ClientUpdate> = plan
        .selected
        .par_iter()
        .filter_map(|&k| {
            let s = &snapshot[k];
            if s.data.train.is_empty() {
                log::warn!("client {k} has an empty training split; skipped");
                return None;
            }
            let empty = NeighborSet {
                client: k,
                neighbors: Vec::new(),
            };
            let set = plan.neighbors.get(&k).unwrap_or(&empty);
            let extractors: Vec<&[f64]> = set
                .neighbors
                .iter()
                .map(|&i| snapshot[i].model.extractor())
                .collect();
            Some(client_step(s, set, &extractors, theta, cfg, plan.round))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pool = Vec::new();
    let mut reps = Vec::new();
    let mut kernel_evals = 0;
    for u in &updates {
        update_matrix_row(affinity, &u.neighbors, &u.weights.normalized)?;
        let s = &mut states[u.client];
        s.model = u.model.clone();
        s.history = u.current_reps.iter().map(|r| (r.class, r.clone())).collect();
        s.last_round = Some(plan.round);
        pool.extend(u.fusion.aggregated.iter().cloned());
        kernel_evals += u.fusion.kernel_evals;
        reps.extend(u.fusion.records.iter().map(|&(class, weight, distance)| RepRecord {
            round: plan.round,
            client: u.client,
            class,
            weight,
            distance,
        }));
    }

    let mut rng = rng_for(cfg.seed, &[stream::SERVER_TRAIN, plan.round as u64]);
    *global_classifier = train_global_classifier(
        &cfg.arch,
        global_classifier,
        &pool,
        cfg.global_lr,
        cfg.global_epochs,
        cfg.batch_size,
        &mut rng,
    )?;

    let (avg, per_client) = evaluate_all(states)?;
    Ok(MocflRound {
        metrics: RoundMetrics {
            round: plan.round,
            avg_accuracy: avg,
            client_accuracy: per_client,
            participants: updates.iter().map(|u| u.client).collect(),
            active: plan.active.clone(),
            kernel_evals,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        updates,
        reps,
    })
}
