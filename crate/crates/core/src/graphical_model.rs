//! The chordal Markov graph of load voltages and the Gaussian precision
//! structure that realises it.
//!
//! For a radial tree, the voltage at a load node is conditionally
//! independent of everything else given the nodes within two hops. The
//! graph therefore holds the tree edges between load nodes plus an edge
//! between every pair of load nodes that share a neighbour. The substation is
//! a constant and carries no vertex.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::grid::{Edge, NodeId, OperationalTree};
use crate::power_flow::{LineParams, ModelSolver, PfModel, PowerFlowError, WeightKind};
use crate::sampling::{InjectionConfig, MeasurementMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphModelError {
    #[error("variance for node {0} must be positive")]
    Variance(NodeId),
    #[error("expected {expected} variances, got {got}")]
    Length { expected: usize, got: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    FromTree,
    FromPrecision,
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovGraph {
    vertices: Vec<NodeId>,
    edges: BTreeSet<Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    provenance: Provenance,
}

impl MarkovGraph {
    pub fn new(
        vertices: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = Edge>,
        provenance: Provenance,
    ) -> Self {
        let vertices: BTreeSet<NodeId> = vertices.into_iter().collect();
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            vertices.iter().map(|&v| (v, BTreeSet::new())).collect();
        let mut set = BTreeSet::new();
        for e in edges {
            if e.a() == e.b() || !vertices.contains(&e.a()) || !vertices.contains(&e.b()) {
                continue;
            }
            set.insert(e);
            adjacency.get_mut(&e.a()).unwrap().insert(e.b());
            adjacency.get_mut(&e.b()).unwrap().insert(e.a());
        }
        MarkovGraph { vertices: vertices.into_iter().collect(), edges: set, adjacency, provenance }
    }

    pub fn vertices(&self) -> &[NodeId] {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&v).into_iter().flat_map(|s| s.iter().copied())
    }

    /// One `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            writeln!(s, "{} {}", e.a(), e.b()).unwrap();
        }
        s
    }
}

/// Markov graph of the load voltages on tree `t`.
pub fn build_gm(t: &OperationalTree) -> MarkovGraph {
    let root = t.root();
    let mut edges = Vec::new();
    for e in t.edges() {
        if !e.touches(root) {
            edges.push(e);
        }
    }
    for mid in 0..t.n_nodes() {
        let nb: Vec<NodeId> = t.neighbors(mid).iter().copied().filter(|&v| v != root).collect();
        for (i, &u) in nb.iter().enumerate() {
            for &w in &nb[i + 1..] {
                edges.push(Edge::new(u, w));
            }
        }
    }
    MarkovGraph::new(t.load_nodes().iter().copied(), edges, Provenance::FromTree)
}

/// Perfect-elimination check on a maximum-cardinality-search order.
pub fn is_chordal(g: &MarkovGraph) -> bool {
    let n = g.vertices.len();
    let idx: BTreeMap<NodeId, usize> = g.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let adj: Vec<Vec<usize>> = g.vertices.iter().map(|v| g.neighbors(*v).map(|u| idx[&u]).collect()).collect();

    let mut weight = vec![0usize; n];
    let mut position = vec![usize::MAX; n];
    for step in 0..n {
        let v =
            (0..n).filter(|&v| position[v] == usize::MAX).max_by_key(|&v| (weight[v], std::cmp::Reverse(v))).unwrap();
        position[v] = step;
        for &u in &adj[v] {
            if position[u] == usize::MAX {
                weight[u] += 1;
            }
        }
    }
    // Each vertex's earlier-numbered neighbours, minus the latest of them,
    // must all be adjacent to that latest one.
    for v in 0..n {
        let earlier: Vec<usize> = adj[v].iter().copied().filter(|&u| position[u] < position[v]).collect();
        if let Some(&latest) = earlier.iter().max_by_key(|&&u| position[u]) {
            for &u in &earlier {
                if u != latest && !adj[latest].contains(&u) {
                    return false;
                }
            }
        }
    }
    true
}

/// True when removing `cut` disconnects `c` from `d`.
pub fn separates(g: &MarkovGraph, cut: (NodeId, NodeId), c: NodeId, d: NodeId) -> bool {
    let blocked = |v: NodeId| v == cut.0 || v == cut.1;
    let mut seen = BTreeSet::from([c]);
    let mut queue = VecDeque::from([c]);
    while let Some(u) = queue.pop_front() {
        if u == d {
            return false;
        }
        for w in g.neighbors(u) {
            if !blocked(w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    true
}

/// Dense symmetric precision matrix indexed by `nodes`, with `block`
/// consecutive rows per node.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionMatrix {
    pub nodes: Vec<NodeId>,
    pub block: usize,
    pub matrix: DMatrix<f64>,
}

impl PrecisionMatrix {
    /// Largest absolute entry of the block coupling nodes `i` and `j`.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let k = self.block;
        let mut best = 0.0f64;
        for r in 0..k {
            for c in 0..k {
                best = best.max(self.matrix[(i * k + r, j * k + c)].abs());
            }
        }
        best
    }
}

/// `H_beta diag(1 / var) H_beta`, the DC phase precision for independent
/// active injections with variances `omega_p` (load-node order).
pub fn gaussian_theta_precision(
    t: &OperationalTree,
    lp: &LineParams,
    omega_p: &[f64],
) -> Result<PrecisionMatrix, GraphModelError> {
    let n = t.n_loads();
    if omega_p.len() != n {
        return Err(GraphModelError::Length { expected: n, got: omega_p.len() });
    }
    if let Some(i) = omega_p.iter().position(|v| !(*v > 0.0)) {
        return Err(GraphModelError::Variance(t.load_nodes()[i]));
    }
    let h = crate::power_flow::reduced_laplacian(t, &lp.beta(), WeightKind::Beta)?.matrix;
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for c in 0..n {
                s += h[(a, c)] * h[(b, c)] / omega_p[c];
            }
            out[(a, b)] = s;
        }
    }
    Ok(PrecisionMatrix { nodes: t.load_nodes().to_vec(), block: 1, matrix: out })
}

/// Edge `(a, b)` whenever the coupling exceeds `tol` times the largest
/// off-diagonal coupling.
pub fn precision_zero_pattern(pm: &PrecisionMatrix, tol: f64) -> MarkovGraph {
    let n = pm.nodes.len();
    let mut max_off = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            max_off = max_off.max(pm.coupling(i, j));
        }
    }
    let mut edges = Vec::new();
    if max_off > 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                if pm.coupling(i, j) > tol * max_off {
                    edges.push(Edge::new(pm.nodes[i], pm.nodes[j]));
                }
            }
        }
    }
    MarkovGraph::new(pm.nodes.iter().copied(), edges, Provenance::FromPrecision)
}

/// Unbiased sample covariance of all measured components.
pub fn sample_covariance(mm: &MeasurementMatrix) -> DMatrix<f64> {
    let w = mm.width();
    let m = mm.n_rows();
    let mut mean = vec![0.0; w];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(mm.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = DMatrix::zeros(w, w);
    let mut centered = vec![0.0; w];
    for i in 0..m {
        for (c, (v, mu)) in centered.iter_mut().zip(mm.row(i).iter().zip(&mean)) {
            *c = v - mu;
        }
        for a in 0..w {
            let ca = centered[a];
            for b in a..w {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    let denom = (m.max(2) - 1) as f64;
    for a in 0..w {
        for b in a..w {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Inverse of a covariance matrix; a ridge of `1e-8 trace / n` is added
/// when the spectrum spans more than twelve orders of magnitude.
pub fn invert_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphModelError> {
    let n = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let mut work = cov.clone();
    if !(max > 0.0) {
        return Err(GraphModelError::NotPositiveDefinite);
    }
    if min < 1e-12 * max {
        let ridge = 1e-8 * cov.trace() / n as f64;
        for i in 0..n {
            work[(i, i)] += ridge;
        }
    }
    work.cholesky().map(|c| c.inverse()).ok_or(GraphModelError::NotPositiveDefinite)
}

/// Inverse sample covariance of a measurement matrix.
pub fn empirical_precision(mm: &MeasurementMatrix) -> Result<PrecisionMatrix, GraphModelError> {
    let prec = invert_covariance(&sample_covariance(mm))?;
    Ok(PrecisionMatrix { nodes: mm.nodes().to_vec(), block: mm.model().n_components(), matrix: prec })
}

/// Population covariance of the measured components (node-major, as in a
/// measurement row) for independent injections drawn from `cfg`.
pub fn measurement_covariance(
    t: &OperationalTree,
    lp: &LineParams,
    model: PfModel,
    cfg: &InjectionConfig,
) -> Result<DMatrix<f64>, GraphModelError> {
    let (a, _) = ModelSolver::new(t, lp, model)?.response()?;
    let (vp, vq) = cfg.variances(t.load_nodes());
    let var = DVector::from_iterator(vp.len() + vq.len(), vp.into_iter().chain(vq));
    let scaled = &a * DMatrix::from_diagonal(&var);
    Ok(scaled * a.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_tree(n_loads: usize) -> OperationalTree {
        let edges: Vec<Edge> = (0..n_loads).map(|i| Edge::new(i, i + 1)).collect();
        OperationalTree::from_edges(n_loads + 1, 0, &edges).unwrap()
    }

    fn edges(pairs: &[(NodeId, NodeId)]) -> BTreeSet<Edge> {
        pairs.iter().map(|&(a, b)| Edge::new(a, b)).collect()
    }

    /// Tree of a small feeder: S=0 - a=1, a-b=2, b-c=3, b-d=4, d-e=5, e-f=6, e-g=7.
    fn letter_tree() -> OperationalTree {
        OperationalTree::from_edges(
            8,
            0,
            &[(0, 1), (1, 2), (2, 3), (2, 4), (4, 5), (5, 6), (5, 7)].map(|(a, b)| Edge::new(a, b)),
        )
        .unwrap()
    }

    #[test]
    fn path_gm() {
        let gm = build_gm(&path_tree(5));
        assert_eq!(gm.edges(), &edges(&[(1, 2), (2, 3), (3, 4), (4, 5), (1, 3), (2, 4), (3, 5)]));
        assert_eq!(gm.to_edge_list().lines().count(), 7);
    }

    #[test]
    fn star_gm_is_complete() {
        let t =
            OperationalTree::from_edges(5, 0, &[Edge::new(0, 1), Edge::new(1, 2), Edge::new(1, 3), Edge::new(1, 4)])
                .unwrap();
        let gm = build_gm(&t);
        assert_eq!(gm.edges().len(), 6);
    }

    #[test]
    fn cliques_around_nonleaf_nodes() {
        let gm = build_gm(&letter_tree());
        // every non-leaf node together with its load neighbours is a clique
        for (centre, nb) in [(2, vec![1, 3, 4]), (4, vec![2, 5]), (5, vec![4, 6, 7])] {
            let mut all = nb.clone();
            all.push(centre);
            for (i, &u) in all.iter().enumerate() {
                for &w in &all[i + 1..] {
                    assert!(gm.has_edge(u, w), "missing {u}-{w}");
                }
            }
        }
        assert!(!gm.has_edge(1, 5));
        assert!(is_chordal(&gm));
    }

    #[test]
    fn chordality_small_cases() {
        let c4 = MarkovGraph::new(1..=4, edges(&[(1, 2), (2, 3), (3, 4), (1, 4)]), Provenance::Explicit);
        assert!(!is_chordal(&c4));
        let c4_chord = MarkovGraph::new(1..=4, edges(&[(1, 2), (2, 3), (3, 4), (1, 4), (1, 3)]), Provenance::Explicit);
        assert!(is_chordal(&c4_chord));
        let c5_one_chord =
            MarkovGraph::new(1..=5, edges(&[(1, 2), (2, 3), (3, 4), (4, 5), (1, 5), (1, 3)]), Provenance::Explicit);
        assert!(!is_chordal(&c5_one_chord));
    }

    #[test]
    fn separation_on_letter_tree() {
        // Removing the two ends of an operational edge between non-leaf nodes
        // splits the graph; removing two nodes that are not adjacent does not.
        let gm = build_gm(&letter_tree());
        assert!(separates(&gm, (5, 4), 6, 2));
        assert!(separates(&gm, (5, 4), 7, 3));
        let others: Vec<NodeId> = (1..=7).filter(|&v| v != 5 && v != 2).collect();
        for (i, &c) in others.iter().enumerate() {
            for &d in &others[i + 1..] {
                assert!(!separates(&gm, (5, 2), c, d), "{c} {d}");
            }
        }
    }

    #[test]
    fn separation_on_path() {
        let gm = build_gm(&path_tree(5));
        assert!(separates(&gm, (2, 3), 1, 4));
        assert!(separates(&gm, (2, 3), 1, 5));
        assert!(!separates(&gm, (2, 4), 1, 3));
    }

    #[test]
    fn precision_path_example() {
        let t = path_tree(2);
        let lp = LineParams::from_impedances(t.edges().into_iter().map(|e| (e, 0.0, 1.0)));
        let pm = gaussian_theta_precision(&t, &lp, &[1.0, 1.0]).unwrap();
        assert_eq!(pm.matrix, DMatrix::from_row_slice(2, 2, &[5.0, -3.0, -3.0, 2.0]));
        assert!(matches!(gaussian_theta_precision(&t, &lp, &[1.0, 0.0]), Err(GraphModelError::Variance(2))));
    }

    #[test]
    fn precision_entries_follow_tree_distance() {
        let t = letter_tree();
        let lp = LineParams::from_impedances(
            t.edges().into_iter().enumerate().map(|(i, e)| (e, 0.01 * i as f64, 0.5 + 0.1 * i as f64)),
        );
        let var: Vec<f64> = (0..7).map(|i| 1.0 + 0.3 * i as f64).collect();
        let pm = gaussian_theta_precision(&t, &lp, &var).unwrap();
        let beta = lp.beta();
        for (i, &a) in t.load_nodes().iter().enumerate() {
            let dist = t.distances_from(a);
            for (j, &b) in t.load_nodes().iter().enumerate() {
                let v = pm.matrix[(i, j)];
                match dist[b] {
                    0 | 1 => {}
                    2 => {
                        let c = *t.neighbors(a).iter().find(|c| t.has_edge(**c, b)).unwrap();
                        let k = t.load_index(c).unwrap();
                        let want = beta.get(a, c).unwrap() * beta.get(b, c).unwrap() / var[k];
                        assert!((v - want).abs() <= 1e-12 * want.abs(), "{a} {b}: {v} vs {want}");
                    }
                    _ => assert_eq!(v, 0.0, "{a} {b}"),
                }
            }
        }
    }

    #[test]
    fn diagonal_precision_has_no_edges() {
        let pm = PrecisionMatrix {
            nodes: vec![1, 2, 3],
            block: 1,
            matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
        };
        assert!(precision_zero_pattern(&pm, 0.05).edges().is_empty());
    }
}
