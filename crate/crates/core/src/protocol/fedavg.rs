use std::time::Instant;

use rayon::prelude::*;

use super::training::local_sgd;
use super::{evaluate_all, ClientState, RoundMetrics, RoundPlan, SimulationConfig};
use crate::error::{config_err, Result};
use crate::nn::{axpy, ModelParams};
use crate::seed::{rng_for, stream};

/// `sum_k (n_k / n) * model_k`, accumulated in the given order.
pub fn weighted_average(models: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = models
        .first()
        .ok_or_else(|| config_err("cannot average zero models"))?;
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(config_err("cannot average models with zero total weight"));
    }
    let mut ext = vec![0.0; first.extractor().len()];
    let mut cls = vec![0.0; first.classifier().len()];
    for (m, n) in models {
        if !m.same_layout(first) {
            return Err(config_err("models to average have different layouts"));
        }
        let w = *n as f64 / total as f64;
        axpy(&mut ext, m.extractor(), w);
        axpy(&mut cls, m.classifier(), w);
    }
    ModelParams::new(first.arch().clone(), ext, cls)
}

/// One FedAvg round: selected clients train from the global model, the server
/// averages by training-set size, and every online client receives the result.
/// Offline clients keep whatever model they last received.
pub fn run_fedavg_round(
    states: &mut [ClientState],
    global: &mut ModelParams,
    plan: &RoundPlan,
    cfg: &SimulationConfig,
) -> Result<RoundMetrics> {
    let start = Instant::now();
    let round = plan.round as u64;
    let trained: Vec<(usize, ModelParams, usize)> = plan
        .selected
        .par_iter()
        .filter_map(|&k| {
            let s = &states[k];
            if s.data.train.is_empty() {
                log::warn!("client {k} has an empty training split; skipped");
                return None;
            }
            let mut rng = rng_for(cfg.seed, &[stream::LOCAL_TRAIN, round, k as u64]);
            Some(
                local_sgd(
                    global,
                    &s.data.train,
                    cfg.local_lr,
                    cfg.batch_size,
                    cfg.local_epochs,
                    &mut rng,
                )
                .map(|m| (k, m, s.data.train.len())),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    if !trained.is_empty() {
        let refs: Vec<(&ModelParams, usize)> = trained.iter().map(|(_, m, n)| (m, *n)).collect();
        *global = weighted_average(&refs)?;
    }
    for &k in &plan.active {
        states[k].model = global.clone();
        states[k].last_round = Some(plan.round);
    }

    let (avg, per_client) = evaluate_all(states)?;
    Ok(RoundMetrics {
        round: plan.round,
        avg_accuracy: avg,
        client_accuracy: per_client,
        participants: trained.iter().map(|(k, _, _)| *k).collect(),
        active: plan.active.clone(),
        kernel_evals: 0,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
