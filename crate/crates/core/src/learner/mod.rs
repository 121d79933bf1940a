//! Two-stage tree recovery.
//!
//! Stage one keeps a candidate edge `(a, b)` between load nodes when some
//! quartet `(c, d)` with `c ~ a` and `d ~ b` in the candidate graph is
//! separated by `{a, b}`. This finds every edge whose endpoints both have
//! further load neighbours. Stage two walks the recovered non-leaf nodes
//! from the outside in and attaches each remaining node `l` to the first
//! non-leaf node `a` for which `X_l ⊥ X_c | X_a, X_b` along a recovered
//! path `a - b - c`.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::{debug, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::ci_test::{CiError, CiTestResult};
use crate::graphical_model::GraphModelError;
use crate::grid::{CandidateGraph, Edge, GridGraph, NodeId, OperationalTree};
use crate::sampling::SamplingError;

mod tester;

pub use tester::{KciTester, OuterComponents, PcorrTester, QuartetTest, SeparationOracle, StatCache};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("tree violates the depth assumption: longest load-node path has {diameter} edges, need at least 4")]
    Depth { diameter: usize },
    #[error("candidate edge set is empty")]
    EmptyCandidates,
    #[error("node {0} has no measurements")]
    MissingNode(NodeId),
    #[error("leaf attachment failed: {reason}")]
    Structural { reason: String, partial: Box<LearnedTopology> },
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Model(#[from] GraphModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// The quartet whose verdict added an edge: `X_c ⊥ X_d | X_a, X_b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evidence {
    pub a: NodeId,
    pub b: NodeId,
    pub c: NodeId,
    pub d: NodeId,
    pub statistic: f64,
    pub p_value: Option<f64>,
}

impl Evidence {
    fn new(a: NodeId, b: NodeId, c: NodeId, d: NodeId, r: &CiTestResult) -> Self {
        Evidence { a, b, c, d, statistic: r.statistic, p_value: r.p_value }
    }
}

/// Result of a learning run. `edges` never contains the substation edge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnedTopology {
    pub edges: BTreeSet<Edge>,
    pub nonleaf_nodes: BTreeSet<NodeId>,
    pub leaf_nodes: BTreeSet<NodeId>,
    pub evidence: BTreeMap<Edge, Evidence>,
    pub tests_run: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopologyMetrics {
    pub false_positives: usize,
    pub false_negatives: usize,
    pub errors: usize,
    pub relative_error: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LearnOptions<'t> {
    /// Ground truth, used only for the depth check.
    pub truth: Option<&'t OperationalTree>,
    pub prune_to_tree: bool,
}

/// Outcome of the non-leaf stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NonleafStage {
    pub edges: BTreeSet<Edge>,
    pub nonleaf_nodes: BTreeSet<NodeId>,
    pub evidence: BTreeMap<Edge, Evidence>,
    pub tests_run: usize,
}

/// Upper bound on the number of tests a run may execute:
/// every stage-one quartet plus `D_max` leaf tests per node.
pub fn test_budget(cand: &CandidateGraph, n_nodes: usize) -> usize {
    let quartets: usize = cand.edges().iter().map(|&e| cand.candidate_quartets(e).len()).sum();
    quartets + n_nodes * cand.max_degree()
}

/// A candidate edge, its quartet pairs and their test results.
type EdgeScan = (Edge, Vec<(NodeId, NodeId)>, Vec<CiTestResult>);

pub fn learn_nonleaf_edges(cand: &CandidateGraph, test: &dyn QuartetTest) -> Result<NonleafStage, LearnError> {
    if cand.edges().is_empty() {
        return Err(LearnError::EmptyCandidates);
    }
    let edges: Vec<Edge> = cand.edges().iter().copied().collect();
    let scans: Vec<EdgeScan> = edges
        .par_iter()
        .map(|&e| {
            let pairs = cand.candidate_quartets(e);
            let results = test.run(e.a(), e.b(), &pairs, true)?;
            Ok((e, pairs, results))
        })
        .collect::<Result<_, LearnError>>()?;
    let mut stage = NonleafStage::default();
    for (e, pairs, results) in scans {
        stage.tests_run += results.len();
        if let Some((i, r)) = results.iter().enumerate().find(|(_, r)| r.independent) {
            let (c, d) = pairs[i];
            debug!("non-leaf edge {e} via ({c}, {d}), statistic {:e}", r.statistic);
            stage.edges.insert(e);
            stage.nonleaf_nodes.extend([e.a(), e.b()]);
            stage.evidence.insert(e, Evidence::new(e.a(), e.b(), c, d, r));
        }
    }
    Ok(stage)
}

/// Neighbours of `n` in an edge set.
fn neighbours(edges: &BTreeSet<Edge>, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    edges.iter().filter_map(move |e| e.other(n))
}

/// Chooses the next non-leaf node to process and, when it has leaf
/// candidates, the path `a - b - c` used to test them. Nodes with one
/// unprocessed non-leaf neighbour come first, then isolated ones, each in id
/// order.
fn next_leaf_anchor(
    remaining: &BTreeSet<NodeId>,
    nonleaf_edges: &BTreeSet<Edge>,
    recovered: &BTreeSet<Edge>,
    has_leaves: impl Fn(NodeId) -> bool,
) -> Option<(NodeId, Option<(NodeId, NodeId)>)> {
    let rem_nbrs =
        |a: NodeId| -> Vec<NodeId> { neighbours(nonleaf_edges, a).filter(|n| remaining.contains(n)).collect() };
    let third = |a: NodeId, b: NodeId| neighbours(recovered, b).filter(|&c| c != a).min();
    let by_degree = |k: usize| remaining.iter().copied().filter(move |&a| rem_nbrs(a).len() == k);
    for a in by_degree(1) {
        if !has_leaves(a) {
            return Some((a, None));
        }
        let b = rem_nbrs(a)[0];
        if let Some(c) = third(a, b) {
            return Some((a, Some((b, c))));
        }
    }
    for a in by_degree(0) {
        if !has_leaves(a) {
            return Some((a, None));
        }
        let mut bs: Vec<NodeId> = neighbours(recovered, a).collect();
        bs.sort_unstable();
        if let Some(bc) = bs.into_iter().find_map(|b| third(a, b).map(|c| (b, c))) {
            return Some((a, Some(bc)));
        }
    }
    None
}

/// Attaches the remaining load nodes to the recovered non-leaf nodes.
pub fn attach_leaves(
    stage: &NonleafStage,
    cand: &CandidateGraph,
    loads: &[NodeId],
    test: &dyn QuartetTest,
) -> Result<LearnedTopology, LearnError> {
    let mut out = LearnedTopology {
        edges: stage.edges.clone(),
        nonleaf_nodes: stage.nonleaf_nodes.clone(),
        leaf_nodes: loads.iter().copied().filter(|n| !stage.nonleaf_nodes.contains(n)).collect(),
        evidence: stage.evidence.clone(),
        tests_run: stage.tests_run,
    };
    let mut remaining = stage.nonleaf_nodes.clone();
    while !remaining.is_empty() {
        let leaf_nbrs =
            |a: NodeId| -> Vec<NodeId> { cand.neighbors(a).filter(|l| out.leaf_nodes.contains(l)).collect() };
        let Some((a, path)) = next_leaf_anchor(&remaining, &stage.edges, &out.edges, |a| !leaf_nbrs(a).is_empty())
        else {
            let reason = format!("no recovered non-leaf node among {remaining:?} has a usable path a - b - c");
            return Err(LearnError::Structural { reason, partial: Box::new(out) });
        };
        remaining.remove(&a);
        let Some((b, c)) = path else { continue };
        let leaves = leaf_nbrs(a);
        let pairs: Vec<(NodeId, NodeId)> = leaves.iter().map(|&l| (l, c)).collect();
        let results = test.run(a, b, &pairs, false)?;
        out.tests_run += results.len();
        for (&l, r) in leaves.iter().zip(&results) {
            if r.independent {
                debug!("leaf {l} attached to {a} via ({l} ⊥ {c} | {a}, {b}), statistic {:e}", r.statistic);
                let e = Edge::new(a, l);
                out.edges.insert(e);
                out.evidence.insert(e, Evidence::new(a, b, l, c, r));
                out.leaf_nodes.remove(&l);
            }
        }
    }
    Ok(out)
}

/// Full two-stage recovery on the candidate graph of `g`.
pub fn learn_topology(
    g: &GridGraph,
    test: &dyn QuartetTest,
    opts: LearnOptions<'_>,
) -> Result<LearnedTopology, LearnError> {
    match opts.truth {
        Some(t) => {
            let diameter = t.load_diameter();
            if diameter < 4 {
                return Err(LearnError::Depth { diameter });
            }
        }
        None => warn!("no ground truth: the depth assumption cannot be checked"),
    }
    let cand = g.candidate_graph();
    let stage = learn_nonleaf_edges(&cand, test)?;
    let mut learned = attach_leaves(&stage, &cand, &g.load_nodes(), test)?;
    if opts.prune_to_tree {
        prune_to_tree(&mut learned);
    }
    Ok(learned)
}

/// Scores recovered load-node edges against the truth.
pub fn evaluate(learned: &LearnedTopology, truth: &OperationalTree) -> TopologyMetrics {
    let want = truth.load_edges();
    let root = truth.root_edge();
    let got: BTreeSet<Edge> = learned.edges.iter().copied().filter(|&e| e != root).collect();
    let false_positives = got.difference(&want).count();
    let false_negatives = want.difference(&got).count();
    let errors = false_positives + false_negatives;
    TopologyMetrics {
        false_positives,
        false_negatives,
        errors,
        relative_error: if want.is_empty() { 0.0 } else { errors as f64 / want.len() as f64 },
    }
}

/// Path between `from` and `to` in a forest given as adjacency lists.
fn forest_path(adj: &BTreeMap<NodeId, BTreeSet<NodeId>>, from: NodeId, to: NodeId) -> Option<Vec<Edge>> {
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut stack = vec![from];
    prev.insert(from, from);
    while let Some(u) = stack.pop() {
        if u == to {
            let mut path = Vec::new();
            let mut v = to;
            while v != from {
                let p = prev[&v];
                path.push(Edge::new(p, v));
                v = p;
            }
            return Some(path);
        }
        for &v in adj.get(&u).into_iter().flatten() {
            if let Entry::Vacant(slot) = prev.entry(v) {
                slot.insert(u);
                stack.push(v);
            }
        }
    }
    None
}

/// Removes edges until the recovered set is acyclic: while a cycle exists,
/// the edge on it with the largest triggering statistic is dropped (ties go
/// to the larger edge).
pub fn prune_to_tree(learned: &mut LearnedTopology) {
    let stat = |l: &LearnedTopology, e: &Edge| l.evidence.get(e).map_or(f64::INFINITY, |ev| ev.statistic);
    loop {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let mut cycle = None;
        for &e in &learned.edges {
            if let Some(mut path) = forest_path(&adj, e.a(), e.b()) {
                path.push(e);
                cycle = Some(path);
                break;
            }
            adj.entry(e.a()).or_default().insert(e.b());
            adj.entry(e.b()).or_default().insert(e.a());
        }
        let Some(cycle) = cycle else { return };
        let worst = *cycle.iter().max_by(|x, y| stat(learned, x).total_cmp(&stat(learned, y)).then(x.cmp(y))).unwrap();
        debug!("pruning {worst} to break a cycle");
        learned.edges.remove(&worst);
        learned.evidence.remove(&worst);
    }
}

impl LearnedTopology {
    /// `u v statistic` lines, then a summary block when metrics are given.
    pub fn to_export(&self, metrics: Option<&TopologyMetrics>) -> String {
        let mut out = String::from("# u v statistic\n");
        for e in &self.edges {
            let s = self.evidence.get(e).map_or(f64::NAN, |ev| ev.statistic);
            let _ = writeln!(out, "{} {} {:.9e}", e.a(), e.b(), s);
        }
        if let Some(m) = metrics {
            let _ = write!(
                out,
                "# summary\nfalse_positives={}\nfalse_negatives={}\nerrors={}\nrelative_error={:.6}\n",
                m.false_positives, m.false_negatives, m.errors, m.relative_error
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power_flow::{LineParams, PfModel};
    use crate::sampling::InjectionConfig;

    fn grid(tree: &[(NodeId, NodeId)], spurious: &[(NodeId, NodeId)]) -> GridGraph {
        let n = tree.iter().chain(spurious).flat_map(|&(a, b)| [a, b]).max().unwrap() + 1;
        let mut text = String::from("node 0 substation\n");
        for i in 1..n {
            text.push_str(&format!("node {i}\n"));
        }
        for &(a, b) in tree {
            text.push_str(&format!("edge {a} {b} r=0.02 x=0.04 status=operational\n"));
        }
        for &(a, b) in spurious {
            text.push_str(&format!("edge {a} {b} r=0.02 x=0.04 status=open\n"));
        }
        text.parse().unwrap()
    }

    fn path5() -> GridGraph {
        grid(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], &[(1, 4)])
    }

    fn exact_tester(g: &GridGraph) -> PcorrTester {
        let t = g.operational_tree().unwrap();
        let lp = LineParams::from_grid(g);
        PcorrTester::exact(&t, &lp, PfModel::Dc, &InjectionConfig::default()).unwrap()
    }

    fn set(pairs: &[(NodeId, NodeId)]) -> BTreeSet<Edge> {
        pairs.iter().map(|&(a, b)| Edge::new(a, b)).collect()
    }

    #[test]
    fn path_nonleaf_stage() {
        let g = path5();
        let stage = learn_nonleaf_edges(&g.candidate_graph(), &exact_tester(&g)).unwrap();
        assert_eq!(stage.edges, set(&[(2, 3), (3, 4)]));
        assert_eq!(stage.nonleaf_nodes, BTreeSet::from([2, 3, 4]));
        let ev = stage.evidence[&Edge::new(2, 3)];
        assert_eq!((ev.c, ev.d), (1, 4));
    }

    #[test]
    fn path_leaf_stage() {
        let g = path5();
        let test = exact_tester(&g);
        let cand = g.candidate_graph();
        let stage = learn_nonleaf_edges(&cand, &test).unwrap();
        let learned = attach_leaves(&stage, &cand, &g.load_nodes(), &test).unwrap();
        assert_eq!(learned.edges, set(&[(1, 2), (2, 3), (3, 4), (4, 5)]));
        let ev = learned.evidence[&Edge::new(1, 2)];
        assert_eq!((ev.a, ev.b, ev.c, ev.d), (2, 3, 1, 4));
        let ev = learned.evidence[&Edge::new(4, 5)];
        assert_eq!((ev.a, ev.b, ev.c, ev.d), (4, 3, 5, 2));
        assert!(learned.leaf_nodes.is_empty());
    }

    #[test]
    fn shallow_tree_refused() {
        let g = grid(&[(0, 1), (1, 2), (2, 3), (3, 4)], &[]);
        let t = g.operational_tree().unwrap();
        let test = SeparationOracle::new(&t);
        let err = learn_topology(&g, &test, LearnOptions { truth: Some(&t), ..Default::default() }).unwrap_err();
        assert!(matches!(err, LearnError::Depth { diameter: 3 }));
    }

    #[test]
    fn identity_candidates_recovered() {
        let g = grid(&[(0, 1), (1, 2), (2, 3), (2, 4), (4, 5), (5, 6), (5, 7), (3, 8)], &[]);
        let t = g.operational_tree().unwrap();
        let learned =
            learn_topology(&g, &SeparationOracle::new(&t), LearnOptions { truth: Some(&t), ..Default::default() })
                .unwrap();
        assert_eq!(learned.edges, t.load_edges());
    }

    #[test]
    fn no_leaf_candidates_leaves_edges_unchanged() {
        let stage = NonleafStage {
            edges: set(&[(1, 2), (2, 3)]),
            nonleaf_nodes: BTreeSet::from([1, 2, 3]),
            ..Default::default()
        };
        let g = path5();
        let t = g.operational_tree().unwrap();
        let out =
            attach_leaves(&stage, &CandidateGraph::new(stage.edges.clone()), &[1, 2, 3], &SeparationOracle::new(&t))
                .unwrap();
        assert_eq!(out.edges, stage.edges);
        assert_eq!(out.tests_run, 0);
    }

    #[test]
    fn cycle_in_nonleaf_edges_is_structural_failure() {
        let stage = NonleafStage {
            edges: set(&[(1, 2), (2, 3), (1, 3)]),
            nonleaf_nodes: BTreeSet::from([1, 2, 3]),
            ..Default::default()
        };
        let g = path5();
        let t = g.operational_tree().unwrap();
        let err = attach_leaves(&stage, &g.candidate_graph(), &g.load_nodes(), &SeparationOracle::new(&t)).unwrap_err();
        match err {
            LearnError::Structural { partial, .. } => assert_eq!(partial.edges, stage.edges),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn evaluation_counts() {
        let g = path5();
        let t = g.operational_tree().unwrap();
        let mut learned = LearnedTopology { edges: t.load_edges(), ..Default::default() };
        let m = evaluate(&learned, &t);
        assert_eq!((m.false_positives, m.false_negatives, m.errors), (0, 0, 0));
        learned.edges.remove(&Edge::new(2, 3));
        let m = evaluate(&learned, &t);
        assert_eq!((m.false_positives, m.false_negatives), (0, 1));
        learned.edges.extend([Edge::new(2, 3), Edge::new(1, 4)]);
        let m = evaluate(&learned, &t);
        assert_eq!((m.false_positives, m.false_negatives, m.errors), (1, 0, 1));
        assert_eq!(m.relative_error, 0.25);
        learned.edges.insert(t.root_edge());
        assert_eq!(evaluate(&learned, &t).errors, 1);
    }

    #[test]
    fn pruning_drops_weakest_cycle_edge() {
        let mut l = LearnedTopology { edges: set(&[(1, 2), (2, 3), (1, 3), (3, 4)]), ..Default::default() };
        for (e, s) in [((1, 2), 0.1), ((2, 3), 0.5), ((1, 3), 0.3), ((3, 4), 9.0)] {
            let e = Edge::new(e.0, e.1);
            l.evidence.insert(e, Evidence { a: e.a(), b: e.b(), c: 0, d: 0, statistic: s, p_value: None });
        }
        prune_to_tree(&mut l);
        assert_eq!(l.edges, set(&[(1, 2), (1, 3), (3, 4)]));
    }

    #[test]
    fn budget_holds_on_path() {
        let g = path5();
        let cand = g.candidate_graph();
        let t = g.operational_tree().unwrap();
        let learned = learn_topology(&g, &SeparationOracle::new(&t), LearnOptions::default()).unwrap();
        assert!(learned.tests_run <= test_budget(&cand, g.n_nodes()));
    }

    #[test]
    fn export_format() {
        let g = path5();
        let t = g.operational_tree().unwrap();
        let learned = learn_topology(&g, &exact_tester(&g), LearnOptions::default()).unwrap();
        let m = evaluate(&learned, &t);
        let text = learned.to_export(Some(&m));
        assert!(text.starts_with("# u v statistic\n1 2 "));
        assert!(text.ends_with("errors=0\nrelative_error=0.000000\n"));
    }
}
