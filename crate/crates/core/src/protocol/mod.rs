//! Round engine: churn, client sampling, the MoCFL round, the FedAvg
//! baseline and per-client evaluation.

mod churn;
mod eval;
mod fedavg;
mod mocfl;
mod training;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use churn::{assign_neighbors, plan_round, sample_activity, selection_size, RoundPlan};
pub use eval::evaluate_all;
pub use fedavg::{run_fedavg_round, weighted_average};
pub use mocfl::{client_step, run_mocfl_round, ClientUpdate, MocflRound};
pub use training::{local_sgd, train_global_classifier};

use crate::affinity::AffinityMatrix;
use crate::data::ClientDataSplit;
use crate::error::{config_err, Result};
use crate::nn::{ArchitectureSpec, ModelParams};
use crate::representation::{ClassRepresentation, KernelConfig};
use crate::seed::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mocfl,
    Fedavg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mocfl => "mocfl",
            Algorithm::Fedavg => "fedavg",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mocfl" => Ok(Algorithm::Mocfl),
            "fedavg" => Ok(Algorithm::Fedavg),
            other => Err(config_err(format!(
                "unknown algorithm '{other}' (expected mocfl or fedavg)"
            ))),
        }
    }
}

/// Everything a simulation run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub clients: usize,
    /// Fraction `C` of active clients selected each round.
    pub participation: f64,
    pub rounds: usize,
    pub local_lr: f64,
    pub global_lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Server-side classifier epochs per round.
    pub global_epochs: usize,
    /// Neighbors per client; `None` means 3 (capped by the active pool).
    pub neighbors: Option<usize>,
    /// Client activity rate: per-round probability a client is online.
    pub car: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub arch: ArchitectureSpec,
    /// `None` picks the RBF bandwidth from the feature dimension.
    pub kernel: Option<KernelConfig>,
    /// Recompute historical representations with the stored extractor
    /// instead of using the cached ones.
    pub recompute_history: bool,
}

pub const DEFAULT_NEIGHBORS: usize = 3;

impl SimulationConfig {
    /// Defaults: learning rates 0.01, batch 64, one local epoch, 100 rounds,
    /// full participation and activity.
    pub fn new(clients: usize, arch: ArchitectureSpec) -> Self {
        Self {
            clients,
            participation: 1.0,
            rounds: 100,
            local_lr: 0.01,
            global_lr: 0.01,
            batch_size: 64,
            local_epochs: 1,
            global_epochs: 1,
            neighbors: None,
            car: 1.0,
            algorithm: Algorithm::Mocfl,
            seed: 0,
            arch,
            kernel: None,
            recompute_history: false,
        }
    }

    pub fn kernel(&self) -> KernelConfig {
        self.kernel
            .unwrap_or_else(|| KernelConfig::for_feature_dim(self.arch.feature_dim))
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbors.unwrap_or(DEFAULT_NEIGHBORS)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(config_err(format!("{field}: {msg}")));
        if self.clients == 0 {
            return fail("clients", "must be at least 1".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return fail("participation", format!("must lie in (0, 1], got {}", self.participation));
        }
        if !(self.car > 0.0 && self.car <= 1.0) {
            return fail("car", format!("must lie in (0, 1], got {}", self.car));
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return fail("local_lr", format!("must be positive, got {}", self.local_lr));
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return fail("global_lr", format!("must be positive, got {}", self.global_lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1".into());
        }
        if self.global_epochs == 0 {
            return fail("global_epochs", "must be at least 1".into());
        }
        if self.neighbors == Some(0) {
            return fail("neighbors", "must be at least 1".into());
        }
        if let Some(k) = self.kernel {
            KernelConfig::new(k.gamma)?;
        }
        self.arch.validate()
    }
}

/// One simulated client.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub data: ClientDataSplit,
    /// Current personalized model (extractor plus classifier).
    pub model: ModelParams,
    /// Class representations from the last participating round.
    pub history: BTreeMap<usize, ClassRepresentation>,
    pub last_round: Option<usize>,
}

/// Per-round record fed to the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Unweighted mean of `client_accuracy`.
    pub avg_accuracy: f64,
    pub client_accuracy: Vec<f64>,
    /// Clients whose updates were applied, ascending.
    pub participants: Vec<usize>,
    pub active: Vec<usize>,
    /// Kernel evaluations spent on mean-representation discrepancies.
    pub kernel_evals: u64,
    /// Monotonic wall-clock time of the round; not deterministic.
    pub wall_seconds: f64,
}

/// Fusion weight of one (client, class) in one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub round: usize,
    pub client: usize,
    pub class: usize,
    pub weight: f64,
    /// Distance between current and historical representation.
    pub distance: f64,
}

/// What one call to [`Simulation::step`] produced.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub plan: RoundPlan,
    pub metrics: RoundMetrics,
    pub reps: Vec<RepRecord>,
}

/// Full simulation state between rounds.
#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: SimulationConfig,
    states: Vec<ClientState>,
    affinity: AffinityMatrix,
    global_classifier: Vec<f64>,
    global_model: ModelParams,
    round: usize,
}

impl Simulation {
    /// Initializes models from the config seed.
    ///
    /// Under MoCFL every client draws its own model and the server draws the
    /// initial global classifier. Under FedAvg every client starts from the
    /// single initial global model.
    pub fn new(cfg: SimulationConfig, datasets: Vec<ClientDataSplit>) -> Result<Self> {
        cfg.validate()?;
        if datasets.len() != cfg.clients {
            return Err(config_err(format!(
                "clients: config says {} but {} datasets were given",
                cfg.clients,
                datasets.len()
            )));
        }
        for (k, d) in datasets.iter().enumerate() {
            for part in [&d.train, &d.validation, &d.test] {
                if !part.is_empty() && part.dim() != cfg.arch.input_dim {
                    return Err(config_err(format!(
                        "client {k}: data has {} features, architecture expects {}",
                        part.dim(),
                        cfg.arch.input_dim
                    )));
                }
                if part.labels.iter().any(|&l| l >= cfg.arch.classes) {
                    return Err(config_err(format!(
                        "client {k}: labels exceed the architecture's {} classes",
                        cfg.arch.classes
                    )));
                }
            }
        }
        let arch = Arc::new(cfg.arch.clone());
        let global_model = arch.init(&mut rng_for(cfg.seed, &[stream::MODEL_INIT]));
        let global_classifier =
            arch.init_classifier(&mut rng_for(cfg.seed, &[stream::CLASSIFIER_INIT]));
        let states = datasets
            .into_iter()
            .enumerate()
            .map(|(k, data)| {
                let model = match cfg.algorithm {
                    Algorithm::Mocfl => {
                        arch.init(&mut rng_for(cfg.seed, &[stream::MODEL_INIT, k as u64]))
                    }
                    Algorithm::Fedavg => global_model.clone(),
                };
                ClientState {
                    id: k,
                    data,
                    model,
                    history: BTreeMap::new(),
                    last_round: None,
                }
            })
            .collect();
        Ok(Self {
            affinity: AffinityMatrix::identity(cfg.clients),
            cfg,
            states,
            global_classifier,
            global_model,
            round: 0,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.states
    }

    pub fn affinity(&self) -> &AffinityMatrix {
        &self.affinity
    }

    /// Server copy of the classifier handed to next round's MoCFL clients.
    pub fn global_classifier(&self) -> &[f64] {
        &self.global_classifier
    }

    /// FedAvg global model.
    pub fn global_model(&self) -> &ModelParams {
        &self.global_model
    }

    /// Index of the next round to run.
    pub fn round(&self) -> usize {
        self.round
    }

    /// The plan the next [`step`](Self::step) will execute.
    pub fn plan_next(&self) -> RoundPlan {
        let t = self.round;
        let active = sample_activity(self.cfg.clients, self.cfg.car, t, self.cfg.seed);
        let mut plan = plan_round(&active, self.cfg.participation, self.cfg.seed, t);
        if self.cfg.algorithm == Algorithm::Mocfl {
            assign_neighbors(&mut plan, &self.affinity, self.cfg.neighbor_count(), self.cfg.seed);
        }
        plan
    }

    pub fn step(&mut self) -> Result<RoundOutcome> {
        let start = Instant::now();
        let plan = self.plan_next();
        let (mut metrics, reps) = match self.cfg.algorithm {
            Algorithm::Fedavg => (
                run_fedavg_round(&mut self.states, &mut self.global_model, &plan, &self.cfg)?,
                Vec::new(),
            ),
            Algorithm::Mocfl => {
                let out = run_mocfl_round(
                    &mut self.states,
                    &mut self.affinity,
                    &mut self.global_classifier,
                    &plan,
                    &self.cfg,
                )?;
                (out.metrics, out.reps)
            }
        };
        metrics.wall_seconds = start.elapsed().as_secs_f64();
        self.round += 1;
        Ok(RoundOutcome { plan, metrics, reps })
    }
}

/// Runs `cfg.rounds` rounds and returns one record per round.
pub fn run_experiment(cfg: &SimulationConfig, datasets: Vec<ClientDataSplit>) -> Result<Vec<RoundMetrics>> {
    run_experiment_with(cfg, datasets, |_, _| Ok(()))
}

/// Like [`run_experiment`], calling `observe` after every round.
pub fn run_experiment_with<F>(
    cfg: &SimulationConfig,
    datasets: Vec<ClientDataSplit>,
    mut observe: F,
) -> Result<Vec<RoundMetrics>>
where
    F: FnMut(&Simulation, &RoundOutcome) -> Result<()>,
{
    let mut sim = Simulation::new(cfg.clone(), datasets)?;
    let mut out = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let outcome = sim.step()?;
        observe(&sim, &outcome)?;
        out.push(outcome.metrics);
    }
    Ok(out)
}
