//! Flat `key=value` settings for each command.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Result};
use hoc::format::KeyValues;
use hoc::synth::{ClusterSpec, NoiseKind, NoiseSpec};
use hoc::{EstimatorConfig, PriorVector, TupleMode};

use crate::UsageError;

pub const GENERATE_KEYS: &[&str] = &[
    "k",
    "n",
    "dim",
    "clusters_per_class",
    "separation",
    "spread",
    "prior",
    "noise",
    "eta",
    "matrix",
    "soft_e",
    "seed",
];

pub const ESTIMATE_KEYS: &[&str] = &[
    "rounds",
    "sample_size",
    "max_iters",
    "learning_rate",
    "seed",
    "tuple_mode",
    "sparse_reg_weight",
    "sparse_reg_epsilon",
    "local_size",
    "local_rounds",
    "zeta",
];

pub const TRAIN_KEYS: &[&str] = &["epochs", "lr", "batch_size", "seed", "correction", "test_fraction"];

pub const SWEEP_KEYS: &[&str] = &["grid", "values", "seeds"];

/// Loads `path` if given and rejects keys outside `allowed`.
pub fn load(path: Option<&Path>, allowed: &[&[&str]]) -> Result<KeyValues> {
    let Some(path) = path else {
        return Ok(KeyValues::default());
    };
    let kv = KeyValues::load(path)?;
    let all: Vec<&str> = allowed.iter().flat_map(|keys| keys.iter().copied()).collect();
    kv.reject_unknown(&all)?;
    Ok(kv)
}

fn invalid(kv: &KeyValues, key: &str, message: String) -> anyhow::Error {
    if kv.contains(key) {
        kv.error(key, message).into()
    } else {
        UsageError(message).into()
    }
}

fn get<T: FromStr>(kv: &KeyValues, key: &str, default: T) -> Result<T> {
    Ok(kv.parse_or(key, default)?)
}

#[derive(Clone, Debug)]
pub struct GenerateSettings {
    pub cluster: ClusterSpec,
    pub noise: NoiseSpec,
    pub soft_e: Option<f64>,
    pub seed: u64,
}

impl GenerateSettings {
    pub fn from_kv(kv: &KeyValues, seed_override: Option<u64>) -> Result<Self> {
        let k: usize = get(kv, "k", 2)?;
        let n: usize = get(kv, "n", 1000)?;
        let mut cluster = ClusterSpec::new(k, n);
        cluster.dim = get(kv, "dim", cluster.dim)?;
        cluster.clusters_per_class = get(kv, "clusters_per_class", cluster.clusters_per_class)?;
        cluster.separation = get(kv, "separation", cluster.separation)?;
        cluster.spread = get(kv, "spread", cluster.spread)?;
        if let Some(prior) = kv.parse_list::<f64>("prior")? {
            cluster.prior = PriorVector::new(prior).map_err(|e| invalid(kv, "prior", e.to_string()))?;
        }
        cluster.validate().map_err(|e| {
            let key = ["separation", "spread", "prior", "k", "n", "dim", "clusters_per_class"]
                .into_iter()
                .find(|key| e.to_string().contains(key))
                .unwrap_or("k");
            invalid(kv, key, e.to_string())
        })?;

        let kind: NoiseKind = match kv.get("noise") {
            Some(v) => v.parse().map_err(|e: hoc::HocError| invalid(kv, "noise", e.to_string()))?,
            None => NoiseKind::Symmetric,
        };
        let eta: f64 = get(kv, "eta", 0.0)?;
        if !(0.0..1.0).contains(&eta) {
            return Err(invalid(kv, "eta", format!("eta = {eta} must lie in [0, 1)")));
        }
        let matrix = match kv.get("matrix") {
            Some(file) => {
                let base = kv.path().parent().unwrap_or(Path::new("."));
                Some(hoc::format::read_matrix(&base.join(file))?)
            }
            None => None,
        };
        let seed = seed_override.unwrap_or(get(kv, "seed", 0)?);
        let noise = NoiseSpec { kind, eta, matrix, seed };
        noise.validate(k).map_err(|e| invalid(kv, "matrix", e.to_string()))?;
        let soft_e: Option<f64> = kv.parse_opt("soft_e")?;
        if let Some(e) = soft_e {
            if !(e >= 0.0 && e < 1.0 / k as f64) {
                return Err(invalid(kv, "soft_e", format!("soft_e = {e} must lie in [0, 1/k)")));
            }
        }
        Ok(GenerateSettings {
            cluster,
            noise,
            soft_e,
            seed,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EstimateSettings {
    pub config: EstimatorConfig,
    /// Sparse weight for local estimation (the global solve keeps `config`'s).
    pub local_sparse_weight: f64,
    pub local_size: Option<usize>,
    pub local_rounds: Option<usize>,
    pub zeta: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct EstimateOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub sample_size: Option<usize>,
    pub zeta: Option<f64>,
}

impl EstimateSettings {
    pub fn from_kv(kv: &KeyValues, over: &EstimateOverrides) -> Result<Self> {
        let d = EstimatorConfig::default();
        let tuple_mode: TupleMode = match kv.get("tuple_mode") {
            Some(v) => v.parse().map_err(|e: hoc::HocError| invalid(kv, "tuple_mode", e.to_string()))?,
            None => d.tuple_mode,
        };
        let sparse_reg_weight: f64 = get(kv, "sparse_reg_weight", d.sparse_reg_weight)?;
        let config = EstimatorConfig {
            rounds: over.rounds.unwrap_or(get(kv, "rounds", d.rounds)?),
            sample_size: over.sample_size.unwrap_or(get(kv, "sample_size", d.sample_size)?),
            max_iters: get(kv, "max_iters", d.max_iters)?,
            learning_rate: get(kv, "learning_rate", d.learning_rate)?,
            seed: over.seed.unwrap_or(get(kv, "seed", d.seed)?),
            tuple_mode,
            sparse_reg_weight,
            sparse_reg_epsilon: get(kv, "sparse_reg_epsilon", d.sparse_reg_epsilon)?,
        };
        config.validate(None).map_err(|e| {
            let key = ESTIMATE_KEYS
                .iter()
                .find(|key| e.to_string().contains(*key))
                .copied()
                .unwrap_or("rounds");
            invalid(kv, key, e.to_string())
        })?;
        let local_sparse_weight = if kv.contains("sparse_reg_weight") {
            sparse_reg_weight
        } else {
            EstimatorConfig::local_default().sparse_reg_weight
        };
        let zeta = over.zeta.or(kv.parse_opt("zeta")?);
        if let Some(z) = zeta {
            if !(0.0..=1.0).contains(&z) {
                return Err(invalid(kv, "zeta", format!("zeta = {z} must lie in [0, 1]")));
            }
        }
        Ok(EstimateSettings {
            config,
            local_sparse_weight,
            local_size: kv.parse_opt("local_size")?,
            local_rounds: kv.parse_opt("local_rounds")?,
            zeta,
        })
    }

    /// Clamps the sample size to the dataset, with a warning.
    pub fn fit_to(&mut self, n: usize) {
        if self.config.sample_size > n {
            log::warn!("sample_size {} exceeds N = {n}; using {n}", self.config.sample_size);
            self.config.sample_size = n;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Correction {
    None,
    Truth,
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub correction: Correction,
    pub test_fraction: f64,
}

impl TrainSettings {
    pub fn from_kv(kv: &KeyValues, seed_override: Option<u64>, correction: Option<&str>) -> Result<Self> {
        let correction = match correction.or(kv.get("correction")) {
            None | Some("none") => Correction::None,
            Some("truth") => Correction::Truth,
            Some(path) => {
                let base = if correction.is_some() {
                    Path::new(".")
                } else {
                    kv.path().parent().unwrap_or(Path::new("."))
                };
                Correction::File(base.join(path))
            }
        };
        let s = TrainSettings {
            epochs: get(kv, "epochs", 10)?,
            lr: get(kv, "lr", 0.5)?,
            batch_size: get(kv, "batch_size", hoc::train::DEFAULT_BATCH_SIZE)?,
            seed: seed_override.unwrap_or(get(kv, "seed", 0)?),
            correction,
            test_fraction: get(kv, "test_fraction", 0.2)?,
        };
        if !(s.lr > 0.0) {
            return Err(invalid(kv, "lr", format!("lr = {} must be positive", s.lr)));
        }
        if s.batch_size == 0 {
            return Err(invalid(kv, "batch_size", "batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&s.test_fraction) {
            return Err(invalid(
                kv,
                "test_fraction",
                format!("test_fraction = {} must lie in [0, 1)", s.test_fraction),
            ));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAxis {
    N,
    Eta,
}

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub axis: GridAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSettings {
    /// `seeds` is a count; runs use seeds `base_seed..base_seed + seeds`.
    pub fn from_kv(kv: &KeyValues, base_seed: u64) -> Result<Self> {
        let axis = match kv.get("grid") {
            Some("n") => GridAxis::N,
            Some("eta") => GridAxis::Eta,
            Some(other) => return Err(invalid(kv, "grid", format!("grid must be `n` or `eta`, got `{other}`"))),
            None => bail!(UsageError("sweep config needs `grid` (n or eta)".into())),
        };
        let values: Vec<f64> = kv
            .parse_list("values")?
            .ok_or_else(|| UsageError("sweep config needs `values`".into()))?;
        for v in &values {
            let ok = match axis {
                GridAxis::N => *v >= 3.0 && v.fract() == 0.0,
                GridAxis::Eta => (0.0..1.0).contains(v),
            };
            if !ok {
                return Err(invalid(kv, "values", format!("grid value {v} is out of range")));
            }
        }
        let count: u64 = kv.parse_or("seeds", 1)?;
        if count == 0 {
            return Err(invalid(kv, "seeds", "seeds must be at least 1".into()));
        }
        let seeds = (base_seed..base_seed + count).collect();
        Ok(SweepSettings { axis, values, seeds })
    }
}
