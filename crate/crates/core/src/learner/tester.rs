//! Quartet tests as seen by the learner.
//!
//! A quartet `(a, b, c, d)` asks whether `X_c ⊥ X_d | X_a, X_b`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use super::LearnError;
use crate::ci_test::{
    partial_corr_ci, CiMethod, CiTestResult, Decision, KciConditioner, KciSide, KernelParams, PcorrMode, Role,
};
use crate::graphical_model::{build_gm, measurement_covariance, sample_covariance, separates, MarkovGraph};
use crate::grid::{NodeId, OperationalTree};
use crate::power_flow::{LineParams, PfModel};
use crate::rng::CounterRng;
use crate::sampling::{InjectionConfig, MeasurementMatrix};

pub trait QuartetTest: Sync {
    fn method(&self) -> CiMethod;

    /// Tests `X_c ⊥ X_d | X_a, X_b` for each `(c, d)` in order. With
    /// `stop_at_first`, stops after the first independent verdict.
    fn run(
        &self,
        a: NodeId,
        b: NodeId,
        pairs: &[(NodeId, NodeId)],
        stop_at_first: bool,
    ) -> Result<Vec<CiTestResult>, LearnError>;
}

fn run_each(
    pairs: &[(NodeId, NodeId)],
    stop_at_first: bool,
    mut test: impl FnMut(NodeId, NodeId) -> Result<CiTestResult, LearnError>,
) -> Result<Vec<CiTestResult>, LearnError> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(c, d) in pairs {
        let r = test(c, d)?;
        out.push(r);
        if stop_at_first && r.independent {
            break;
        }
    }
    Ok(out)
}

/// Exact verdicts from vertex separation in the Markov graph of a known tree.
pub struct SeparationOracle {
    gm: MarkovGraph,
}

impl SeparationOracle {
    pub fn new(t: &OperationalTree) -> Self {
        SeparationOracle { gm: build_gm(t) }
    }
}

impl QuartetTest for SeparationOracle {
    fn method(&self) -> CiMethod {
        CiMethod::Separation
    }

    fn run(
        &self,
        a: NodeId,
        b: NodeId,
        pairs: &[(NodeId, NodeId)],
        stop_at_first: bool,
    ) -> Result<Vec<CiTestResult>, LearnError> {
        run_each(pairs, stop_at_first, |c, d| {
            let stat = if separates(&self.gm, (a, b), c, d) { 0.0 } else { 1.0 };
            Ok(CiTestResult::from_threshold(stat, 0.0, CiMethod::Separation))
        })
    }
}

/// Column layout of node-major measurements.
#[derive(Clone, Debug)]
struct Layout {
    position: HashMap<NodeId, usize>,
    k: usize,
    scalar: usize,
}

impl Layout {
    fn new(nodes: &[NodeId], model: PfModel) -> Self {
        Layout {
            position: nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect(),
            k: model.n_components(),
            scalar: model.scalar_component(),
        }
    }

    fn pos(&self, n: NodeId) -> Result<usize, LearnError> {
        self.position.get(&n).copied().ok_or(LearnError::MissingNode(n))
    }

    fn scalar_col(&self, n: NodeId) -> Result<usize, LearnError> {
        Ok(self.pos(n)? * self.k + self.scalar)
    }

    fn cols(&self, n: NodeId) -> Result<impl Iterator<Item = usize>, LearnError> {
        let p = self.pos(n)?;
        Ok(p * self.k..(p + 1) * self.k)
    }
}

/// Gaussian partial-correlation test on a population or sample covariance.
/// The outer nodes use their scalar component; the conditioning set uses
/// every component of `a` and `b`.
pub struct PcorrTester {
    cov: DMatrix<f64>,
    layout: Layout,
    mode: PcorrMode,
}

impl PcorrTester {
    /// Population covariance implied by the tree, line parameters and
    /// injection laws.
    pub fn exact(
        t: &OperationalTree,
        lp: &LineParams,
        model: PfModel,
        cfg: &InjectionConfig,
    ) -> Result<Self, LearnError> {
        let cov = measurement_covariance(t, lp, model, cfg)?;
        Ok(PcorrTester { cov, layout: Layout::new(t.load_nodes(), model), mode: PcorrMode::Exact })
    }

    /// Sample covariance with a Fisher z-test at `alpha`.
    pub fn sample(mm: &MeasurementMatrix, alpha: f64) -> Self {
        PcorrTester {
            cov: sample_covariance(mm),
            layout: Layout::new(mm.nodes(), mm.model()),
            mode: PcorrMode::Fisher { alpha, n_samples: mm.n_rows() },
        }
    }
}

impl QuartetTest for PcorrTester {
    fn method(&self) -> CiMethod {
        CiMethod::PartialCorr
    }

    fn run(
        &self,
        a: NodeId,
        b: NodeId,
        pairs: &[(NodeId, NodeId)],
        stop_at_first: bool,
    ) -> Result<Vec<CiTestResult>, LearnError> {
        let cond: Vec<usize> = self.layout.cols(a)?.chain(self.layout.cols(b)?).collect();
        run_each(pairs, stop_at_first, |c, d| {
            let (ci, di) = (self.layout.scalar_col(c)?, self.layout.scalar_col(d)?);
            Ok(partial_corr_ci(&self.cov, ci, di, &cond, self.mode)?)
        })
    }
}

/// Which components of the outer nodes `c, d` enter a kernel test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OuterComponents {
    /// Phase angle (DC) or magnitude deviation (LC, LinDistFlow).
    #[default]
    Scalar,
    Full,
}

type QuartetKey = [NodeId; 4];

/// Kernel statistics (and p-values, in permutation mode) keyed by quartet.
/// Sharing one cache between testers that differ only in `tau` or `alpha`
/// avoids recomputing statistics.
#[derive(Debug, Default)]
pub struct StatCache(Mutex<HashMap<QuartetKey, (f64, Option<f64>)>>);

impl StatCache {
    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Kernel conditional-independence test on a measurement matrix.
pub struct KciTester<'m> {
    mm: &'m MeasurementMatrix,
    layout: Layout,
    kp: KernelParams,
    outer: OuterComponents,
    cache: Arc<StatCache>,
}

impl<'m> KciTester<'m> {
    pub fn new(mm: &'m MeasurementMatrix, kp: KernelParams) -> Result<Self, LearnError> {
        kp.validate()?;
        Ok(KciTester {
            mm,
            layout: Layout::new(mm.nodes(), mm.model()),
            kp,
            outer: OuterComponents::Scalar,
            cache: Arc::default(),
        })
    }

    pub fn with_outer(mut self, outer: OuterComponents) -> Self {
        self.outer = outer;
        self
    }

    pub fn with_cache(mut self, cache: Arc<StatCache>) -> Self {
        self.cache = cache;
        self
    }

    fn node_cols(&self, n: NodeId) -> Result<Vec<Vec<f64>>, LearnError> {
        Ok(self.layout.cols(n)?.map(|c| self.mm.column(c)).collect())
    }

    fn outer_cols(&self, n: NodeId) -> Result<Vec<Vec<f64>>, LearnError> {
        match self.outer {
            OuterComponents::Scalar => Ok(vec![self.mm.column(self.layout.scalar_col(n)?)]),
            OuterComponents::Full => self.node_cols(n),
        }
    }

    fn seed_for(&self, key: &QuartetKey) -> u64 {
        key.iter().fold(CounterRng::new(self.kp.seed), |r, &n| r.split(n as u64)).u64_at(0)
    }

    fn decide(&self, stat: f64, p: Option<f64>) -> CiTestResult {
        match (self.kp.decision, p) {
            (Decision::Permutation { alpha, .. }, Some(p)) => CiTestResult::from_p_value(stat, p, alpha, CiMethod::Kci),
            (Decision::Tolerance(tau), _) => CiTestResult::from_threshold(stat, tau, CiMethod::Kci),
            (Decision::Permutation { .. }, None) => unreachable!("permutation results always carry a p-value"),
        }
    }
}

impl QuartetTest for KciTester<'_> {
    fn method(&self) -> CiMethod {
        CiMethod::Kci
    }

    fn run(
        &self,
        a: NodeId,
        b: NodeId,
        pairs: &[(NodeId, NodeId)],
        stop_at_first: bool,
    ) -> Result<Vec<CiTestResult>, LearnError> {
        let (a, b) = (a.min(b), a.max(b));
        let mut cond: Option<KciConditioner> = None;
        let mut sides: HashMap<(NodeId, bool), KciSide> = HashMap::new();
        run_each(pairs, stop_at_first, |c, d| {
            let (c, d) = (c.min(d), c.max(d));
            let key = [a, b, c, d];
            let permuting = matches!(self.kp.decision, Decision::Permutation { .. });
            let cached = self.cache.0.lock().unwrap().get(&key).copied().filter(|v| v.1.is_some() == permuting);
            let (stat, p) = match cached {
                Some(v) => v,
                None => {
                    if cond.is_none() {
                        let mut z = self.node_cols(a)?;
                        z.extend(self.node_cols(b)?);
                        cond = Some(KciConditioner::new(&z, self.mm.n_rows(), &self.kp)?);
                    }
                    let cond = cond.as_ref().unwrap();
                    for (n, left) in [(c, true), (d, false)] {
                        if let Entry::Vacant(slot) = sides.entry((n, left)) {
                            let role = if left { Role::Left } else { Role::Right };
                            slot.insert(cond.side(&self.outer_cols(n)?, role, &self.kp)?);
                        }
                    }
                    let (sc, sd) = (&sides[&(c, true)], &sides[&(d, false)]);
                    let stat = cond.statistic(sc, sd);
                    let p = match self.kp.decision {
                        Decision::Permutation { permutations, .. } => {
                            Some(cond.p_value(sc, sd, permutations, self.seed_for(&key), &self.kp))
                        }
                        Decision::Tolerance(_) => None,
                    };
                    self.cache.0.lock().unwrap().insert(key, (stat, p));
                    (stat, p)
                }
            };
            Ok(self.decide(stat, p))
        })
    }
}
