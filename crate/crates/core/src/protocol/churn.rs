use std::collections::BTreeMap;

use rand::seq::index;

use crate::affinity::{select_neighbors, AffinityMatrix, NeighborSet};
use crate::seed::{rng_for, stream, unit_draw};

/// Who takes part in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundPlan {
    pub round: usize,
    /// Online clients, ascending.
    pub active: Vec<usize>,
    /// Clients that compute this round, ascending; a subset of `active`.
    pub selected: Vec<usize>,
    /// Neighbor choices of each selected client (MoCFL only).
    pub neighbors: BTreeMap<usize, NeighborSet>,
}

impl RoundPlan {
    pub fn k(&self) -> usize {
        self.selected.len()
    }
}

/// Independent Bernoulli(`car`) activity per client, keyed on
/// (seed, round, client) so a client's draw never depends on the others.
/// When nobody comes online, the client with the smallest draw is forced on.
pub fn sample_activity(n: usize, car: f64, round: usize, seed: u64) -> Vec<usize> {
    let draws: Vec<f64> = (0..n)
        .map(|k| unit_draw(seed, &[stream::ACTIVITY, round as u64, k as u64]))
        .collect();
    let active: Vec<usize> = (0..n).filter(|&k| draws[k] < car).collect();
    if !active.is_empty() || n == 0 {
        return active;
    }
    let forced = (0..n)
        .min_by(|&a, &b| draws[a].total_cmp(&draws[b]))
        .expect("n > 0");
    vec![forced]
}

/// Number of clients selected from an active pool: `max(floor(C * |active|), 1)`.
pub fn selection_size(participation: f64, active: usize) -> usize {
    // The epsilon keeps products like 0.7 * 10 from flooring to 6.
    (((participation * active as f64) + 1e-9).floor() as usize).clamp(1, active.max(1))
}

/// Samples `K` of the active clients uniformly without replacement.
pub fn plan_round(active: &[usize], participation: f64, seed: u64, round: usize) -> RoundPlan {
    let mut active = active.to_vec();
    active.sort_unstable();
    active.dedup();
    let k = selection_size(participation, active.len()).min(active.len());
    let mut rng = rng_for(seed, &[stream::PLAN, round as u64]);
    let mut selected: Vec<usize> = index::sample(&mut rng, active.len(), k)
        .into_iter()
        .map(|i| active[i])
        .collect();
    selected.sort_unstable();
    RoundPlan {
        round,
        active,
        selected,
        neighbors: BTreeMap::new(),
    }
}

/// Fills `plan.neighbors` for every selected client from the affinity matrix.
pub fn assign_neighbors(plan: &mut RoundPlan, m: &AffinityMatrix, n: usize, seed: u64) {
    for &k in &plan.selected {
        let mut rng = rng_for(seed, &[stream::NEIGHBORS, plan.round as u64, k as u64]);
        plan.neighbors
            .insert(k, select_neighbors(m, k, &plan.active, n, &mut rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_activity() {
        for r in 0..5 {
            assert_eq!(sample_activity(7, 1.0, r, 3), (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_client_always_on() {
        for r in 0..50 {
            assert_eq!(sample_activity(1, 0.01, r, 9), vec![0]);
        }
    }

    #[test]
    fn half_activity_rate() {
        let total: usize = (0..200).map(|r| sample_activity(50, 0.5, r, 21).len()).sum();
        let frac = total as f64 / (200.0 * 50.0);
        assert!((0.45..=0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn selection_sizes() {
        assert_eq!(selection_size(0.1, 3), 1);
        assert_eq!(selection_size(1.0, 3), 3);
        assert_eq!(selection_size(0.7, 10), 7);
        assert_eq!(selection_size(0.5, 5), 2);
    }

    #[test]
    fn full_participation_selects_everyone() {
        let p = plan_round(&[4, 1, 2], 1.0, 0, 0);
        assert_eq!(p.selected, vec![1, 2, 4]);
        assert_eq!(p.active, vec![1, 2, 4]);
    }

    #[test]
    fn plans_are_reproducible() {
        let active: Vec<usize> = (0..20).collect();
        let a = plan_round(&active, 0.3, 5, 7);
        let b = plan_round(&active, 0.3, 5, 7);
        assert_eq!(a, b);
        assert_eq!(a.k(), 6);
        assert!(a.selected.iter().all(|k| active.contains(k)));
        assert_eq!(plan_round(&[0, 1, 2], 0.1, 5, 7).k(), 1);
    }
}
