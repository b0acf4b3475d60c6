use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::nn::{Activation, ArchitectureSpec, ConvLayer};
use crate::protocol::{Algorithm, SimulationConfig};
use crate::representation::KernelConfig;

/// Where client data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub classes: usize,
    pub rows_per_client: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub centroid_scale: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
    pub categorical: Vec<String>,
    pub alpha: f64,
    pub min_samples: usize,
}

/// Everything needed for one `run`: the protocol settings shared by every
/// repetition plus data, output and repetition settings.
///
/// `sim.seed` and `sim.algorithm` are placeholders; each repetition fills
/// them from `seeds` and `algorithms`. `sim.arch.input_dim` and
/// `sim.arch.classes` are filled once the data is loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimulationConfig,
    pub source: DataSource,
    pub out_dir: PathBuf,
    pub dump_affinity: bool,
    pub dump_reps: bool,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub car: Option<f64>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub dump_affinity: bool,
    pub dump_reps: bool,
    pub source: Option<String>,
    pub csv_path: Option<PathBuf>,
    pub label_column: Option<String>,
}

/// The flat key set accepted in a config file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    source: Option<String>,

    csv_path: Option<PathBuf>,
    label_column: Option<String>,
    categorical: Option<Vec<String>>,
    min_samples: Option<usize>,

    alpha: Option<f64>,
    synth_classes: Option<usize>,
    synth_rows_per_client: Option<usize>,
    synth_input_dim: Option<usize>,
    synth_spread: Option<f64>,
    synth_centroid_scale: Option<f64>,

    clients: Option<usize>,
    participation: Option<f64>,
    rounds: Option<usize>,
    local_lr: Option<f64>,
    global_lr: Option<f64>,
    batch_size: Option<usize>,
    local_epochs: Option<usize>,
    global_epochs: Option<usize>,
    neighbors: Option<usize>,
    car: Option<f64>,
    algorithm: Option<Algorithm>,
    algorithms: Option<Vec<Algorithm>>,
    kernel_gamma: Option<f64>,
    mmd_printed_sign: Option<bool>,
    recompute_history: Option<bool>,

    hidden: Option<Vec<usize>>,
    feature_dim: Option<usize>,
    activation: Option<Activation>,
    conv_filters: Option<Vec<usize>>,
    conv_kernels: Option<Vec<usize>>,

    seed: Option<u64>,
    repetitions: Option<usize>,
    seeds: Option<Vec<u64>>,

    out_dir: Option<PathBuf>,
    dump_affinity: Option<bool>,
    dump_reps: Option<bool>,
}

const DEFAULT_CLIENTS: usize = 10;
const DEFAULT_ALPHA: f64 = 0.3;
const DEFAULT_FEATURE_DIM: usize = 16;
const DEFAULT_HIDDEN: usize = 32;

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    config_err(format!("{name}: {msg}"))
}

/// Reads and validates a config file, then applies `overrides`.
///
/// A relative `csv_path` is resolved against the config file's directory.
pub fn parse_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        let mut msg = e.message().to_owned();
        let key = text
            .lines()
            .nth(line.saturating_sub(1))
            .and_then(|l| l.split_once('='))
            .map(|(k, _)| k.trim());
        if let Some(key) = key.filter(|k| !k.is_empty() && !msg.contains(*k)) {
            msg = format!("{key}: {msg}");
        }
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        }
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(raw, overrides, Some(base))
}

/// Builds a config from flags alone; `overrides.source` must be set.
pub fn config_from_flags(overrides: &Overrides) -> Result<ExperimentConfig> {
    resolve(RawConfig::default(), overrides, None)
}

fn resolve(mut raw: RawConfig, o: &Overrides, base: Option<&Path>) -> Result<ExperimentConfig> {
    if o.source.is_some() {
        raw.source = o.source.clone();
    }
    if o.csv_path.is_some() {
        raw.csv_path = o.csv_path.clone();
    }
    if o.label_column.is_some() {
        raw.label_column = o.label_column.clone();
    }
    if let Some(a) = o.algorithm {
        raw.algorithm = Some(a);
        raw.algorithms = None;
    }
    if o.car.is_some() {
        raw.car = o.car;
    }
    if o.clients.is_some() {
        raw.clients = o.clients;
    }
    if o.rounds.is_some() {
        raw.rounds = o.rounds;
    }
    if o.seed.is_some() {
        raw.seed = o.seed;
        raw.seeds = None;
    }
    if o.out_dir.is_some() {
        raw.out_dir = o.out_dir.clone();
    }
    raw.dump_affinity = Some(o.dump_affinity || raw.dump_affinity.unwrap_or(false));
    raw.dump_reps = Some(o.dump_reps || raw.dump_reps.unwrap_or(false));

    let alpha = raw.alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(field("alpha", format!("must be positive, got {alpha}")));
    }
    let synth_keys = [
        ("synth_classes", raw.synth_classes.is_some()),
        ("synth_rows_per_client", raw.synth_rows_per_client.is_some()),
        ("synth_input_dim", raw.synth_input_dim.is_some()),
        ("synth_spread", raw.synth_spread.is_some()),
        ("synth_centroid_scale", raw.synth_centroid_scale.is_some()),
    ];
    let csv_keys = [
        ("csv_path", raw.csv_path.is_some()),
        ("label_column", raw.label_column.is_some()),
        ("categorical", raw.categorical.is_some()),
        ("min_samples", raw.min_samples.is_some()),
    ];
    let reject = |keys: &[(&str, bool)], source: &str| -> Result<()> {
        match keys.iter().find(|(_, set)| *set) {
            Some((name, _)) => Err(field(name, format!("not allowed with source = \"{source}\""))),
            None => Ok(()),
        }
    };

    let source = match raw.source.as_deref().map(str::trim) {
        None => return Err(field("source", "missing; expected \"synthetic\" or \"csv\"")),
        Some("synthetic") => {
            reject(&csv_keys, "synthetic")?;
            let d = crate::data::SynthSpec::default();
            DataSource::Synthetic(SyntheticSource {
                classes: raw.synth_classes.unwrap_or(d.classes),
                rows_per_client: raw.synth_rows_per_client.unwrap_or(d.rows_per_client),
                input_dim: raw.synth_input_dim.unwrap_or(d.input_dim),
                spread: raw.synth_spread.unwrap_or(d.spread),
                centroid_scale: raw.synth_centroid_scale.unwrap_or(d.centroid_scale),
                alpha,
            })
        }
        Some("csv") => {
            reject(&synth_keys, "csv")?;
            let path = raw
                .csv_path
                .clone()
                .ok_or_else(|| field("csv_path", "required when source = \"csv\""))?;
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path,
            };
            DataSource::Csv(CsvSource {
                path,
                label_column: raw
                    .label_column
                    .clone()
                    .ok_or_else(|| field("label_column", "required when source = \"csv\""))?,
                categorical: raw.categorical.clone().unwrap_or_default(),
                alpha,
                min_samples: raw.min_samples.unwrap_or(6),
            })
        }
        Some(other) => {
            return Err(field("source", format!("expected \"synthetic\" or \"csv\", got \"{other}\"")))
        }
    };
    if let DataSource::Synthetic(s) = &source {
        if s.classes < 2 {
            return Err(field("synth_classes", format!("must be at least 2, got {}", s.classes)));
        }
        if s.rows_per_client < 6 {
            return Err(field(
                "synth_rows_per_client",
                format!("must be at least 6, got {}", s.rows_per_client),
            ));
        }
        if s.input_dim == 0 {
            return Err(field("synth_input_dim", "must be at least 1"));
        }
        if !(s.spread >= 0.0 && s.spread.is_finite()) {
            return Err(field("synth_spread", format!("must be non-negative, got {}", s.spread)));
        }
        if !(s.centroid_scale >= 0.0 && s.centroid_scale.is_finite()) {
            return Err(field(
                "synth_centroid_scale",
                format!("must be non-negative, got {}", s.centroid_scale),
            ));
        }
    }

    let conv = match (raw.conv_filters.take(), raw.conv_kernels.take()) {
        (None, None) => Vec::new(),
        (Some(f), Some(k)) if f.len() == k.len() => f
            .into_iter()
            .zip(k)
            .map(|(filters, kernel)| ConvLayer { filters, kernel })
            .collect(),
        (Some(_), Some(_)) => {
            return Err(field("conv_kernels", "must have the same length as conv_filters"))
        }
        (Some(_), None) => return Err(field("conv_kernels", "required with conv_filters")),
        (None, Some(_)) => return Err(field("conv_filters", "required with conv_kernels")),
    };
    // Input width and class count are placeholders until the data is loaded.
    let (input_dim, classes) = match &source {
        DataSource::Synthetic(s) => (s.input_dim, s.classes),
        DataSource::Csv(_) => (1, 2),
    };
    let arch = ArchitectureSpec {
        input_dim,
        conv,
        hidden: raw.hidden.clone().unwrap_or_else(|| vec![DEFAULT_HIDDEN]),
        feature_dim: raw.feature_dim.unwrap_or(DEFAULT_FEATURE_DIM),
        classes,
        activation: raw.activation.unwrap_or_default(),
    };

    let mut sim = SimulationConfig::new(raw.clients.unwrap_or(DEFAULT_CLIENTS), arch);
    if let Some(v) = raw.participation {
        sim.participation = v;
    }
    if let Some(v) = raw.rounds {
        sim.rounds = v;
    }
    if let Some(v) = raw.local_lr {
        sim.local_lr = v;
    }
    if let Some(v) = raw.global_lr {
        sim.global_lr = v;
    }
    if let Some(v) = raw.batch_size {
        sim.batch_size = v;
    }
    if let Some(v) = raw.local_epochs {
        sim.local_epochs = v;
    }
    if let Some(v) = raw.global_epochs {
        sim.global_epochs = v;
    }
    sim.neighbors = raw.neighbors;
    if let Some(v) = raw.car {
        sim.car = v;
    }
    if let Some(g) = raw.kernel_gamma {
        sim.kernel = Some(KernelConfig::new(g).map_err(|_| {
            field("kernel_gamma", format!("must be positive, got {g}"))
        })?);
    }
    if raw.mmd_printed_sign == Some(true) {
        let mut k = sim.kernel();
        k.printed_sign = true;
        sim.kernel = Some(k);
    }
    sim.recompute_history = raw.recompute_history.unwrap_or(false);
    sim.validate()?;

    let algorithms = match (raw.algorithm, raw.algorithms.clone()) {
        (Some(_), Some(_)) => {
            return Err(field("algorithms", "give either algorithm or algorithms, not both"))
        }
        (Some(a), None) => vec![a],
        (None, Some(list)) if list.is_empty() => {
            return Err(field("algorithms", "must not be empty"))
        }
        (None, Some(mut list)) => {
            let mut seen = std::collections::BTreeSet::new();
            list.retain(|a| seen.insert(*a));
            list
        }
        (None, None) => vec![Algorithm::Mocfl],
    };
    sim.algorithm = algorithms[0];

    let seeds = match (raw.seeds.clone(), raw.repetitions) {
        (Some(_), Some(_)) => return Err(field("seeds", "give either seeds or repetitions, not both")),
        (Some(s), None) if s.is_empty() => return Err(field("seeds", "must not be empty")),
        (Some(mut s), None) => {
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(field("seeds", "must be distinct"));
            }
            s
        }
        (None, Some(0)) => return Err(field("repetitions", "must be at least 1")),
        (None, reps) => {
            let first = raw.seed.unwrap_or(0);
            (0..reps.unwrap_or(1) as u64).map(|i| first.wrapping_add(i)).collect()
        }
    };
    sim.seed = seeds[0];

    Ok(ExperimentConfig {
        sim,
        source,
        out_dir: raw.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        dump_affinity: raw.dump_affinity.unwrap_or(false),
        dump_reps: raw.dump_reps.unwrap_or(false),
        seeds,
        algorithms,
    })
}
