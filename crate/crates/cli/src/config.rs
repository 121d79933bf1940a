//! Sweep configuration: a flat `key = value` document.
//!
//! ```text
//! # comments start with '#'
//! grid = feeder19.grid              # relative to the config file
//! model = dc                        # dc | lc | ldf
//! samples = 200, 500, 1000, 2000
//! seeds = 0-9                       # items are `n` or inclusive `a-b`
//! method = kci                      # kci | pcorr | oracle
//! decision = tolerance              # kci only: tolerance | permutation
//! tolerances = 3.5e-11, 1.2e-10     # tau, or alpha for alpha-driven tests
//! permutations = 200
//! bandwidth = median                # median | <width>
//! ridge = 1e-3
//! kernel_seed = 0
//! outer = scalar                    # scalar | full
//! p_law = gaussian(0,1)
//! q_law = gaussian(0,1)
//! prune_to_tree = false
//! output = results.csv              # optional
//! measurements_dir = cells          # optional: per-cell measurement CSVs
//! ```
//!
//! `tolerances` holds `tau` for the kernel test in tolerance mode and the
//! significance level for permutation mode and `pcorr`. It may be omitted
//! for `oracle`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridtopo::ci_test::{Bandwidth, Decision, KernelParams};
use gridtopo::learner::OuterComponents;
use gridtopo::power_flow::PfModel;
use gridtopo::sampling::{Distribution, InjectionConfig};

use crate::commands::Method;
use crate::{read_file, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionKind {
    Tolerance,
    Permutation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: PathBuf,
    pub model: PfModel,
    pub injection: InjectionConfig,
    pub samples: Vec<usize>,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub decision: DecisionKind,
    pub tolerances: Vec<f64>,
    pub permutations: usize,
    pub bandwidth: Bandwidth,
    pub ridge: f64,
    pub kernel_seed: u64,
    pub outer: OuterComponents,
    pub prune_to_tree: bool,
    pub output: Option<PathBuf>,
    pub measurements_dir: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "grid",
    "model",
    "samples",
    "seeds",
    "method",
    "decision",
    "tolerances",
    "permutations",
    "bandwidth",
    "ridge",
    "kernel_seed",
    "outer",
    "p_law",
    "q_law",
    "prune_to_tree",
    "output",
    "measurements_dir",
];

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(format!("{key}: cannot parse `{s}`"))))
        .collect()
}

fn seeds(v: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad(format!("seeds: cannot parse `{item}`")));
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad(format!("seeds: empty range `{item}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

pub fn parse_bandwidth(v: &str) -> Result<Bandwidth, CliError> {
    if v == "median" {
        return Ok(Bandwidth::Median);
    }
    match v.parse::<f64>() {
        Ok(w) if w > 0.0 && w.is_finite() => Ok(Bandwidth::Fixed { x: w, y: w, z: w }),
        _ => Err(bad(format!("bandwidth must be `median` or a positive width, got `{v}`"))),
    }
}

pub fn parse_outer(v: &str) -> Result<OuterComponents, CliError> {
    match v {
        "scalar" => Ok(OuterComponents::Scalar),
        "full" => Ok(OuterComponents::Full),
        _ => Err(bad(format!("outer must be `scalar` or `full`, got `{v}`"))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(format!("{key}: expected true or false, got `{v}`"))),
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&read_file(path)?, base)?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(bad(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if kv.insert(k, v).is_some() {
                return Err(bad(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let need = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing key `{k}`")));
        let path = |v: &str| base.join(v);

        let method: Method = need("method")?.parse()?;
        let mut injection = InjectionConfig::default();
        for (key, slot) in [("p_law", &mut injection.default_p), ("q_law", &mut injection.default_q)] {
            if let Some(v) = kv.get(key) {
                *slot = v.parse::<Distribution>().map_err(|e| bad(format!("{key}: {e}")))?;
            }
        }
        let tolerances = match (kv.get("tolerances"), method) {
            (Some(v), _) => list("tolerances", v)?,
            (None, Method::Oracle) => vec![0.0],
            (None, _) => return Err(bad("missing key `tolerances`")),
        };
        let defaults = KernelParams::default();
        let cfg = ExperimentConfig {
            grid: path(need("grid")?),
            model: need("model")?.parse().map_err(|e| bad(format!("model: {e}")))?,
            injection,
            samples: list("samples", need("samples")?)?,
            seeds: seeds(need("seeds")?)?,
            method,
            decision: match kv.get("decision").copied().unwrap_or("tolerance") {
                "tolerance" => DecisionKind::Tolerance,
                "permutation" => DecisionKind::Permutation,
                v => return Err(bad(format!("decision must be `tolerance` or `permutation`, got `{v}`"))),
            },
            tolerances,
            permutations: match kv.get("permutations") {
                Some(v) => v.parse().map_err(|_| bad(format!("permutations: cannot parse `{v}`")))?,
                None => 200,
            },
            bandwidth: kv.get("bandwidth").map_or(Ok(defaults.bandwidth), |v| parse_bandwidth(v))?,
            ridge: match kv.get("ridge") {
                Some(v) => v.parse().map_err(|_| bad(format!("ridge: cannot parse `{v}`")))?,
                None => defaults.ridge,
            },
            kernel_seed: match kv.get("kernel_seed") {
                Some(v) => v.parse().map_err(|_| bad(format!("kernel_seed: cannot parse `{v}`")))?,
                None => 0,
            },
            outer: kv.get("outer").map_or(Ok(OuterComponents::Scalar), |v| parse_outer(v))?,
            prune_to_tree: kv.get("prune_to_tree").map_or(Ok(false), |v| parse_bool("prune_to_tree", v))?,
            output: kv.get("output").map(|v| path(v)),
            measurements_dir: kv.get("measurements_dir").map(|v| path(v)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.samples.is_empty() || self.seeds.is_empty() || self.tolerances.is_empty() {
            return Err(bad("samples, seeds and tolerances must be non-empty"));
        }
        if self.samples.contains(&0) {
            return Err(bad("sample sizes must be positive"));
        }
        let alpha_driven =
            self.method == Method::Pcorr || (self.method == Method::Kci && self.decision == DecisionKind::Permutation);
        for &t in &self.tolerances {
            let ok = if alpha_driven { t > 0.0 && t < 1.0 } else { t >= 0.0 && t.is_finite() };
            if !ok {
                return Err(bad(format!("tolerance {t} is out of range for method {}", self.method)));
            }
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(bad(format!("ridge must be positive, got {}", self.ridge)));
        }
        if self.method == Method::Kci && self.decision == DecisionKind::Permutation && self.permutations == 0 {
            return Err(bad("permutation mode needs at least one permutation"));
        }
        Ok(())
    }

    fn check_files(&self) -> Result<(), CliError> {
        if !self.grid.is_file() {
            return Err(bad(format!("grid file {} does not exist", self.grid.display())));
        }
        Ok(())
    }

    /// Kernel parameters for one threshold value of the sweep.
    pub fn kernel_params(&self, threshold: f64) -> KernelParams {
        let decision = match self.decision {
            DecisionKind::Tolerance => Decision::Tolerance(threshold),
            DecisionKind::Permutation => Decision::Permutation { permutations: self.permutations, alpha: threshold },
        };
        KernelParams {
            bandwidth: self.bandwidth,
            ridge: self.ridge,
            decision,
            seed: self.kernel_seed,
            ..KernelParams::default()
        }
    }
}
