use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use gridtopo::ci_test::KernelParams;
use gridtopo::graphical_model::{
    build_gm, empirical_precision, gaussian_theta_precision, invert_covariance, measurement_covariance,
    precision_zero_pattern, PrecisionMatrix,
};
use gridtopo::grid::{Edge, GridGraph};
use gridtopo::learner::{
    evaluate, learn_topology, KciTester, LearnError, LearnOptions, LearnedTopology, OuterComponents, PcorrTester,
    QuartetTest, StatCache, TopologyMetrics,
};
use gridtopo::power_flow::{LineParams, PfModel};
use gridtopo::sampling::{generate_measurements, InjectionConfig, MeasurementMatrix};

use crate::CliError;

/// Quartet test used by `learn` and `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Kci,
    /// Fisher-z partial correlation on the sample covariance.
    Pcorr,
    /// Partial correlation on the exact population covariance of the true tree.
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Kci => "kci",
            Method::Pcorr => "pcorr",
            Method::Oracle => "oracle",
        })
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kci" => Ok(Method::Kci),
            "pcorr" => Ok(Method::Pcorr),
            "oracle" => Ok(Method::Oracle),
            _ => Err(CliError::Config(format!("unknown method `{s}` (expected kci, pcorr or oracle)"))),
        }
    }
}

pub fn cmd_spur(grid: &GridGraph, k: usize, seed: u64) -> Result<String, CliError> {
    Ok(grid.spur(k, seed)?.to_string())
}

pub fn cmd_simulate(
    grid: &GridGraph,
    model: PfModel,
    injection: &InjectionConfig,
    samples: usize,
    seed: u64,
) -> Result<MeasurementMatrix, CliError> {
    let t = grid.operational_tree()?;
    injection.validate(t.load_nodes())?;
    Ok(generate_measurements(&t, &LineParams::from_grid(grid), injection, model, samples, seed)?)
}

#[derive(Clone, Debug)]
pub struct LearnSettings {
    pub method: Method,
    /// Kernel settings, including the tolerance or permutation decision.
    pub kernel: KernelParams,
    pub outer: OuterComponents,
    /// Significance level of the sample partial-correlation test.
    pub alpha: f64,
    /// Injection laws assumed by the exact-covariance oracle.
    pub injection: InjectionConfig,
    pub model: PfModel,
    pub prune_to_tree: bool,
    /// Skip the depth check and the scoring against the grid's own tree.
    pub blind: bool,
}

impl Default for LearnSettings {
    fn default() -> Self {
        LearnSettings {
            method: Method::Kci,
            kernel: KernelParams::default(),
            outer: OuterComponents::Scalar,
            alpha: 0.05,
            injection: InjectionConfig::default(),
            model: PfModel::Dc,
            prune_to_tree: false,
            blind: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnReport {
    pub learned: LearnedTopology,
    pub metrics: Option<TopologyMetrics>,
}

/// Learns the topology of `grid` from `mm` (unused by the oracle). A shared
/// `cache` lets kernel runs that differ only in their threshold reuse
/// statistics.
pub fn run_learn(
    grid: &GridGraph,
    mm: Option<&MeasurementMatrix>,
    s: &LearnSettings,
    cache: Option<Arc<StatCache>>,
) -> Result<LearnReport, CliError> {
    let t = grid.operational_tree()?;
    let need_mm = || mm.ok_or_else(|| CliError::Config(format!("method {} needs measurements", s.method)));
    let tester: Box<dyn QuartetTest + '_> = match s.method {
        Method::Kci => {
            let mut kt = KciTester::new(need_mm()?, s.kernel)?.with_outer(s.outer);
            if let Some(c) = cache {
                kt = kt.with_cache(c);
            }
            Box::new(kt)
        }
        Method::Pcorr => Box::new(PcorrTester::sample(need_mm()?, s.alpha)),
        Method::Oracle => {
            let model = mm.map_or(s.model, |m| m.model());
            Box::new(PcorrTester::exact(&t, &LineParams::from_grid(grid), model, &s.injection)?)
        }
    };
    let opts = LearnOptions { truth: (!s.blind).then_some(&t), prune_to_tree: s.prune_to_tree };
    let learned = learn_topology(grid, tester.as_ref(), opts)?;
    let metrics = (!s.blind).then(|| evaluate(&learned, &t));
    Ok(LearnReport { learned, metrics })
}

/// Edge export of a learning run, with a summary block unless blind.
pub fn cmd_learn(grid: &GridGraph, mm: Option<&MeasurementMatrix>, s: &LearnSettings) -> Result<String, CliError> {
    let r = run_learn(grid, mm, s, None)?;
    Ok(r.learned.to_export(r.metrics.as_ref()))
}

/// Result of comparing a precision sparsity pattern with the Markov graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GmReport {
    pub source: &'static str,
    pub model: PfModel,
    pub tolerance: f64,
    pub gm_edges: usize,
    pub missing: Vec<Edge>,
    pub extra: Vec<Edge>,
}

impl GmReport {
    pub fn matches(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

impl fmt::Display for GmReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[Edge]| {
            let mut s = String::new();
            for (i, e) in v.iter().enumerate() {
                let _ = write!(s, "{}{}-{}", if i > 0 { " " } else { "" }, e.a(), e.b());
            }
            s
        };
        writeln!(f, "source={}", self.source)?;
        writeln!(f, "model={}", self.model)?;
        writeln!(f, "tolerance={}", self.tolerance)?;
        writeln!(f, "gm_edges={}", self.gm_edges)?;
        writeln!(f, "missing={}", join(&self.missing))?;
        writeln!(f, "extra={}", join(&self.extra))?;
        writeln!(f, "matches={}", self.matches())
    }
}

/// Compares the precision pattern (empirical when `mm` is given, otherwise
/// exact for `model`) against the Markov graph of the grid's tree. Couplings
/// at most `tol` times the largest off-diagonal coupling count as zero.
pub fn cmd_gmcheck(
    grid: &GridGraph,
    mm: Option<&MeasurementMatrix>,
    model: PfModel,
    injection: &InjectionConfig,
    tol: f64,
) -> Result<GmReport, CliError> {
    if !(0.0..1.0).contains(&tol) {
        return Err(CliError::Config(format!("tolerance must lie in [0, 1), got {tol}")));
    }
    let t = grid.operational_tree()?;
    let lp = LineParams::from_grid(grid);
    let (source, model, pm): (_, _, PrecisionMatrix) = match mm {
        Some(mm) => ("empirical", mm.model(), empirical_precision(mm)?),
        None if model == PfModel::Dc => {
            let (vp, _) = injection.variances(t.load_nodes());
            ("exact", model, gaussian_theta_precision(&t, &lp, &vp)?)
        }
        None => {
            let prec = invert_covariance(&measurement_covariance(&t, &lp, model, injection)?)?;
            (
                "exact",
                model,
                PrecisionMatrix { nodes: t.load_nodes().to_vec(), block: model.n_components(), matrix: prec },
            )
        }
    };
    let gm = build_gm(&t);
    let pattern = precision_zero_pattern(&pm, tol);
    let want: &BTreeSet<Edge> = gm.edges();
    let got: &BTreeSet<Edge> = pattern.edges();
    Ok(GmReport {
        source,
        model,
        tolerance: tol,
        gm_edges: want.len(),
        missing: want.difference(got).copied().collect(),
        extra: got.difference(want).copied().collect(),
    })
}

/// The partial topology of a structural failure, or the error itself.
pub(crate) fn structural_partial(e: CliError) -> Result<(LearnedTopology, String), CliError> {
    match e {
        CliError::Learn(LearnError::Structural { reason, partial }) => Ok((*partial, reason)),
        e => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH6: &str = "node 0 substation\nnode 1\nnode 2\nnode 3\nnode 4\nnode 5\nnode 6\n\
        edge 0 1 r=0.01 x=0.04 status=operational\nedge 1 2 r=0.01 x=0.05 status=operational\n\
        edge 2 3 r=0.02 x=0.04 status=operational\nedge 3 4 r=0.01 x=0.03 status=operational\n\
        edge 4 5 r=0.01 x=0.04 status=operational\nedge 5 6 r=0.02 x=0.05 status=operational\n";

    fn path6() -> GridGraph {
        PATH6.parse().unwrap()
    }

    #[test]
    fn method_round_trip() {
        for m in [Method::Kci, Method::Pcorr, Method::Oracle] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("ges".parse::<Method>().is_err());
    }

    #[test]
    fn spur_zero_is_identity() {
        let g = path6();
        assert_eq!(cmd_spur(&g, 0, 9).unwrap(), g.to_string());
        assert!(matches!(cmd_spur(&g, 11, 9), Err(CliError::Grid(_))));
    }

    #[test]
    fn oracle_learns_spurred_path() {
        let g = path6().spur(4, 2).unwrap();
        let s = LearnSettings { method: Method::Oracle, ..Default::default() };
        let r = run_learn(&g, None, &s, None).unwrap();
        assert_eq!(r.metrics.unwrap().errors, 0);
        let export = cmd_learn(&g, None, &s).unwrap();
        assert!(export.ends_with("errors=0\nrelative_error=0.000000\n"), "{export}");
    }

    #[test]
    fn kci_without_measurements_is_config_error() {
        let e = run_learn(&path6(), None, &LearnSettings::default(), None).unwrap_err();
        assert_eq!(e.category(), "config");
    }

    #[test]
    fn blind_run_has_no_metrics() {
        let g = path6().spur(3, 1).unwrap();
        let s = LearnSettings { method: Method::Oracle, blind: true, ..Default::default() };
        let r = run_learn(&g, None, &s, None).unwrap();
        assert!(r.metrics.is_none());
        assert!(!cmd_learn(&g, None, &s).unwrap().contains("# summary"));
    }

    #[test]
    fn exact_gmcheck_matches_for_dc_and_lc() {
        let g = path6();
        for model in [PfModel::Dc, PfModel::Lc] {
            let r = cmd_gmcheck(&g, None, model, &InjectionConfig::default(), 1e-9).unwrap();
            assert!(r.matches(), "{r}");
            assert_eq!(r.gm_edges, 5 + 4);
        }
    }
}
