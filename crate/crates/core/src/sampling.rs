//! Independent nodal injections pushed through a power-flow model.
//!
//! Injection `j` at node `n` is drawn from the counter stream
//! `CounterRng::new(seed).split(2 n + c)` at draw index `j`, where `c` is 0
//! for active and 1 for reactive power. Adding or removing nodes therefore
//! never changes another node's samples.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{NodeId, OperationalTree};
use crate::power_flow::{InjectionVector, LineParams, ModelSolver, PfModel, PowerFlowError};
use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("node {0} is not a load node")]
    UnknownNode(NodeId),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("measurement file: {0}")]
    Format(String),
    #[error("measurement file holds model `{found}`, expected `{expected}`")]
    ModelMismatch { expected: PfModel, found: PfModel },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    ShiftedExponential {
        rate: f64,
        shift: f64,
    },
    /// A load held fixed, e.g. constant active power under LinDistFlow.
    Constant(f64),
}

impl Distribution {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: String| Err(SamplingError::Distribution(m));
        match *self {
            Distribution::Gaussian { mean, std } if !(std > 0.0) || !mean.is_finite() || !std.is_finite() => {
                bad(format!("gaussian std must be positive, got {std}"))
            }
            Distribution::Uniform { lo, hi } if !(hi > lo) || !lo.is_finite() || !hi.is_finite() => {
                bad(format!("uniform needs hi > lo, got [{lo}, {hi}]"))
            }
            Distribution::ShiftedExponential { rate, shift }
                if !(rate > 0.0) || !rate.is_finite() || !shift.is_finite() =>
            {
                bad(format!("exponential rate must be positive, got {rate}"))
            }
            Distribution::Constant(v) if !v.is_finite() => bad(format!("constant must be finite, got {v}")),
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Gaussian { mean, .. } => mean,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::ShiftedExponential { rate, shift } => shift + 1.0 / rate,
            Distribution::Constant(v) => v,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Gaussian { std, .. } => std * std,
            Distribution::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Distribution::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
            Distribution::Constant(_) => 0.0,
        }
    }

    /// Draw `j` from a stream.
    pub fn sample(&self, rng: &CounterRng, j: u64) -> f64 {
        match *self {
            Distribution::Gaussian { mean, std } => mean + std * rng.normal_at(j),
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform_at(2 * j),
            Distribution::ShiftedExponential { rate, shift } => shift - rng.uniform_at(2 * j).ln() / rate,
            Distribution::Constant(v) => v,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Gaussian { mean, std } => write!(f, "gaussian({mean},{std})"),
            Distribution::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Distribution::ShiftedExponential { rate, shift } => {
                write!(f, "shifted_exponential({rate},{shift})")
            }
            Distribution::Constant(v) => write!(f, "constant({v})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = SamplingError;

    /// `gaussian(mean,std)`, `uniform(lo,hi)`, `shifted_exponential(rate,shift)` or `constant(v)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SamplingError::Distribution(format!("cannot parse `{s}`"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(err)?;
        let body = s[open + 1..].strip_suffix(')').ok_or_else(err)?;
        let args: Vec<f64> =
            body.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err())?;
        let d = match (&s[..open], args.as_slice()) {
            ("gaussian", &[mean, std]) => Distribution::Gaussian { mean, std },
            ("uniform", &[lo, hi]) => Distribution::Uniform { lo, hi },
            ("shifted_exponential", &[rate, shift]) => Distribution::ShiftedExponential { rate, shift },
            ("constant", &[v]) => Distribution::Constant(v),
            _ => return Err(err()),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Power {
    Active,
    Reactive,
}

/// Per-node injection laws with defaults for unlisted nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionConfig {
    pub default_p: Distribution,
    pub default_q: Distribution,
    pub overrides: BTreeMap<(NodeId, Power), Distribution>,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        let unit = Distribution::Gaussian { mean: 0.0, std: 1.0 };
        InjectionConfig { default_p: unit, default_q: unit, overrides: BTreeMap::new() }
    }
}

impl InjectionConfig {
    pub fn law(&self, node: NodeId, power: Power) -> Distribution {
        self.overrides.get(&(node, power)).copied().unwrap_or(match power {
            Power::Active => self.default_p,
            Power::Reactive => self.default_q,
        })
    }

    pub fn validate(&self, loads: &[NodeId]) -> Result<(), SamplingError> {
        self.default_p.validate()?;
        self.default_q.validate()?;
        for (&(node, _), d) in &self.overrides {
            if !loads.contains(&node) {
                return Err(SamplingError::UnknownNode(node));
            }
            d.validate()?;
        }
        Ok(())
    }

    /// Per-node variances of `p` then `q`, in `loads` order.
    pub fn variances(&self, loads: &[NodeId]) -> (Vec<f64>, Vec<f64>) {
        (
            loads.iter().map(|&n| self.law(n, Power::Active).variance()).collect(),
            loads.iter().map(|&n| self.law(n, Power::Reactive).variance()).collect(),
        )
    }
}

fn stream_id(node: NodeId, power: Power) -> u64 {
    2 * node as u64 + matches!(power, Power::Reactive) as u64
}

/// Draw `j` of the injection vector over `loads`.
pub fn draw_injection(cfg: &InjectionConfig, loads: &[NodeId], seed: u64, j: u64) -> InjectionVector {
    let root = CounterRng::new(seed);
    let draw = |n: NodeId, pw: Power| cfg.law(n, pw).sample(&root.split(stream_id(n, pw)), j);
    InjectionVector {
        p: loads.iter().map(|&n| draw(n, Power::Active)).collect(),
        q: loads.iter().map(|&n| draw(n, Power::Reactive)).collect(),
    }
}

pub fn draw_injections(
    cfg: &InjectionConfig,
    loads: &[NodeId],
    m: usize,
    seed: u64,
) -> Result<Vec<InjectionVector>, SamplingError> {
    if m == 0 {
        return Err(SamplingError::NoSamples);
    }
    cfg.validate(loads)?;
    Ok((0..m as u64).map(|j| draw_injection(cfg, loads, seed, j)).collect())
}

/// `m` samples of the measured voltage components, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    model: PfModel,
    nodes: Vec<NodeId>,
    seed: u64,
    rows: usize,
    data: Vec<f64>,
}

impl MeasurementMatrix {
    pub fn new(model: PfModel, nodes: Vec<NodeId>, seed: u64, data: Vec<f64>) -> Result<Self, SamplingError> {
        let width = nodes.len() * model.n_components();
        if width == 0 || data.is_empty() || !data.len().is_multiple_of(width) {
            return Err(SamplingError::Format(format!("{} values do not fill rows of width {width}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SamplingError::Format("non-finite entry".into()));
        }
        let rows = data.len() / width;
        Ok(MeasurementMatrix { model, nodes, seed, rows, data })
    }

    pub fn model(&self) -> PfModel {
        self.model
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.nodes.len() * self.model.n_components()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn node_position(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Column index of component `comp` of `node`.
    pub fn column_index(&self, node: NodeId, comp: usize) -> Option<usize> {
        let k = self.model.n_components();
        (comp < k).then_some(())?;
        self.node_position(node).map(|p| p * k + comp)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        let w = self.width();
        (0..self.rows).map(|i| self.data[i * w + col]).collect()
    }

    pub fn node_columns(&self, node: NodeId) -> Option<Vec<Vec<f64>>> {
        let k = self.model.n_components();
        let p = self.node_position(node)?;
        Some((0..k).map(|c| self.column(p * k + c)).collect())
    }

    /// Copy restricted to the first `m` rows.
    pub fn head(&self, m: usize) -> Self {
        let m = m.min(self.rows);
        MeasurementMatrix {
            model: self.model,
            nodes: self.nodes.clone(),
            seed: self.seed,
            rows: m,
            data: self.data[..m * self.width()].to_vec(),
        }
    }

    pub fn expect_model(&self, model: PfModel) -> Result<(), SamplingError> {
        if self.model != model {
            return Err(SamplingError::ModelMismatch { expected: model, found: self.model });
        }
        Ok(())
    }

    /// CSV with a `# model=.. seed=.. nodes=..` header and 17 significant
    /// digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 25);
        let nodes: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        writeln!(out, "# model={} seed={} nodes={}", self.model, self.seed, nodes.join(",")).unwrap();
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(doc: &str) -> Result<Self, SamplingError> {
        let ferr = |m: String| SamplingError::Format(m);
        let mut lines = doc.lines();
        let header = lines.next().ok_or_else(|| ferr("empty document".into()))?;
        let header = header.strip_prefix('#').ok_or_else(|| ferr("missing `#` header".into()))?;
        let (mut model, mut seed, mut nodes) = (None, None, None);
        for tok in header.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| ferr(format!("bad header token `{tok}`")))?;
            match k {
                "model" => model = Some(v.parse::<PfModel>().map_err(ferr)?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| ferr(format!("bad seed: {e}")))?),
                "nodes" => {
                    nodes = Some(
                        v.split(',')
                            .map(|s| s.parse::<NodeId>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|e| ferr(format!("bad node list: {e}")))?,
                    )
                }
                _ => return Err(ferr(format!("unknown header key `{k}`"))),
            }
        }
        let model = model.ok_or_else(|| ferr("header lacks model".into()))?;
        let seed = seed.ok_or_else(|| ferr("header lacks seed".into()))?;
        let nodes = nodes.ok_or_else(|| ferr("header lacks nodes".into()))?;
        let width = nodes.len() * model.n_components();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for v in line.split(',') {
                data.push(v.trim().parse::<f64>().map_err(|e| ferr(format!("row {}: {e}", i + 1)))?);
            }
            if data.len() - before != width {
                return Err(ferr(format!("row {} has {} values, expected {width}", i + 1, data.len() - before)));
            }
        }
        if data.is_empty() {
            return Err(ferr("no sample rows".into()));
        }
        MeasurementMatrix::new(model, nodes, seed, data)
    }
}

/// Samples `m` voltage rows of `model` on tree `t`.
pub fn generate_measurements(
    t: &OperationalTree,
    lp: &LineParams,
    cfg: &InjectionConfig,
    model: PfModel,
    m: usize,
    seed: u64,
) -> Result<MeasurementMatrix, SamplingError> {
    if m == 0 {
        return Err(SamplingError::NoSamples);
    }
    let loads = t.load_nodes().to_vec();
    cfg.validate(&loads)?;
    let solver = ModelSolver::new(t, lp, model)?;
    let width = loads.len() * model.n_components();
    let mut data = vec![0.0; m * width];
    for (j, row) in data.chunks_mut(width).enumerate() {
        let inj = draw_injection(cfg, &loads, seed, j as u64);
        solver.solve_row(&inj, row)?;
    }
    MeasurementMatrix::new(model, loads, seed, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_parsing() {
        assert_eq!("gaussian(0,1)".parse::<Distribution>().unwrap(), Distribution::Gaussian { mean: 0.0, std: 1.0 });
        assert_eq!(
            "shifted_exponential(2, 0.5)".parse::<Distribution>().unwrap(),
            Distribution::ShiftedExponential { rate: 2.0, shift: 0.5 }
        );
        assert!("gaussian(0,0)".parse::<Distribution>().is_err());
        assert!("uniform(1,1)".parse::<Distribution>().is_err());
        assert!("shifted_exponential(-1,0)".parse::<Distribution>().is_err());
        assert!("poisson(3)".parse::<Distribution>().is_err());
        let d = Distribution::Uniform { lo: -1.5, hi: 2.0 };
        assert_eq!(d.to_string().parse::<Distribution>().unwrap(), d);
    }

    #[test]
    fn degenerate_gaussian_rejected() {
        let cfg = InjectionConfig { default_p: Distribution::Gaussian { mean: 0.0, std: 0.0 }, ..Default::default() };
        assert!(matches!(draw_injections(&cfg, &[1, 2], 5, 0), Err(SamplingError::Distribution(_))));
        assert_eq!(draw_injections(&InjectionConfig::default(), &[1], 0, 0), Err(SamplingError::NoSamples));
    }

    #[test]
    fn override_for_unknown_node_rejected() {
        let mut cfg = InjectionConfig::default();
        cfg.overrides.insert((9, Power::Active), Distribution::Constant(1.0));
        assert_eq!(cfg.validate(&[1, 2]), Err(SamplingError::UnknownNode(9)));
    }

    #[test]
    fn same_seed_same_draws() {
        let cfg = InjectionConfig::default();
        let a = draw_injections(&cfg, &[1, 2, 3], 20, 11).unwrap();
        let b = draw_injections(&cfg, &[1, 2, 3], 20, 11).unwrap();
        assert_eq!(a, b);
        let c = draw_injections(&cfg, &[1, 2, 3], 20, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn node_streams_ignore_node_set() {
        let cfg = InjectionConfig::default();
        let a = draw_injections(&cfg, &[1, 2, 3], 10, 5).unwrap();
        let b = draw_injections(&cfg, &[3, 7], 10, 5).unwrap();
        for j in 0..10 {
            assert_eq!(a[j].p[2], b[j].p[0]);
            assert_eq!(a[j].q[2], b[j].q[0]);
        }
    }

    #[test]
    fn csv_errors() {
        assert!(MeasurementMatrix::from_csv("").is_err());
        assert!(MeasurementMatrix::from_csv("# model=dc seed=1 nodes=1,2\n1.0,2.0\n3.0\n").is_err());
        assert!(MeasurementMatrix::from_csv("# model=dc seed=1 nodes=1,2\n").is_err());
        assert!(MeasurementMatrix::from_csv("model=dc seed=1 nodes=1\n1.0\n").is_err());
        let mm = MeasurementMatrix::from_csv("# model=lc seed=3 nodes=4\n1.0,2.0\n").unwrap();
        assert_eq!(mm.n_rows(), 1);
        assert!(matches!(mm.expect_model(PfModel::Dc), Err(SamplingError::ModelMismatch { .. })));
    }
}
