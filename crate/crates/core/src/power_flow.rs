//! Lossless linear power-flow models on a radial tree.
//!
//! Injection vectors hold *net* injection (generation minus consumption) at
//! every load node, in [`OperationalTree::load_nodes`] order. The substation
//! is the reference bus with `theta = 0`, `v = 1`, `phi = v^2 = 1`; its values
//! are never stored.
//!
//! * DC: `p = H_beta theta`.
//! * Linear coupled (LC): `p = H_beta theta + H_g eps`, `q = -H_g theta + H_beta eps`.
//! * LinDistFlow: downstream flows `p_{a->b} = consumption_b + sum of flows out of b`,
//!   then `phi_b = phi_a - 2 (r_ab p_{a->b} + x_ab q_{a->b})`. Flows are
//!   expressed in consumption terms, so the solver negates the injections.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{Edge, GridGraph, NodeId, OperationalTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("no weight for tree edge {0}")]
    MissingWeight(Edge),
    #[error("non-positive weight {1} on edge {0}")]
    NonPositiveWeight(Edge, f64),
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{model} model needs voltage component `{component}`")]
    MissingComponent { model: PfModel, component: &'static str },
    #[error("LinDistFlow inversion needs the held active injections")]
    MissingActive,
    #[error("singular system")]
    Singular,
    #[error("non-finite entry")]
    NonFinite,
}

/// Which linear power-flow law produced a set of voltages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PfModel {
    Dc,
    Lc,
    LinDistFlow,
}

impl PfModel {
    pub fn tag(&self) -> &'static str {
        match self {
            PfModel::Dc => "dc",
            PfModel::Lc => "lc",
            PfModel::LinDistFlow => "ldf",
        }
    }

    /// Names of the measured components per node, in storage order.
    pub fn components(&self) -> &'static [&'static str] {
        match self {
            PfModel::Dc => &["theta"],
            PfModel::Lc => &["theta", "eps"],
            PfModel::LinDistFlow => &["phi"],
        }
    }

    pub fn n_components(&self) -> usize {
        self.components().len()
    }

    /// Component tested at the two outer nodes of a quartet: the phase for
    /// DC, the magnitude deviation for LC, `phi` for LinDistFlow.
    pub fn scalar_component(&self) -> usize {
        match self {
            PfModel::Dc => 0,
            PfModel::Lc => 1,
            PfModel::LinDistFlow => 0,
        }
    }
}

impl fmt::Display for PfModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PfModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dc" => Ok(PfModel::Dc),
            "lc" => Ok(PfModel::Lc),
            "ldf" | "lindistflow" => Ok(PfModel::LinDistFlow),
            _ => Err(format!("unknown power-flow model `{s}`")),
        }
    }
}

/// Per-edge positive weights keyed by undirected edge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeWeights(HashMap<Edge, f64>);

impl EdgeWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: NodeId, b: NodeId, w: f64) {
        self.0.insert(Edge::new(a, b), w);
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.0.get(&Edge::new(a, b)).copied()
    }
}

impl FromIterator<(Edge, f64)> for EdgeWeights {
    fn from_iter<I: IntoIterator<Item = (Edge, f64)>>(iter: I) -> Self {
        EdgeWeights(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineParam {
    pub r: f64,
    pub x: f64,
    pub g: f64,
    pub beta: f64,
}

/// `g_ab = r/(x^2 + r^2)` and `beta_ab = x/(x^2 + r^2)` for every line.
#[derive(Clone, Debug, Default)]
pub struct LineParams(HashMap<Edge, LineParam>);

impl LineParams {
    pub fn from_grid(grid: &GridGraph) -> Self {
        LineParams(
            grid.lines().iter().map(|l| (l.edge(), LineParam { r: l.r, x: l.x, g: l.g(), beta: l.beta() })).collect(),
        )
    }

    pub fn from_impedances(items: impl IntoIterator<Item = (Edge, f64, f64)>) -> Self {
        LineParams(
            items
                .into_iter()
                .map(|(e, r, x)| {
                    let den = x * x + r * r;
                    (e, LineParam { r, x, g: r / den, beta: x / den })
                })
                .collect(),
        )
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<&LineParam> {
        self.0.get(&Edge::new(a, b))
    }

    pub fn beta(&self) -> EdgeWeights {
        self.0.iter().map(|(e, p)| (*e, p.beta)).collect()
    }

    pub fn g(&self) -> EdgeWeights {
        self.0.iter().map(|(e, p)| (*e, p.g)).collect()
    }

    /// Parameters of the line from each non-root node to its parent.
    fn upward(&self, t: &OperationalTree) -> Result<Vec<LineParam>, PowerFlowError> {
        let mut out = vec![LineParam { r: 0.0, x: 0.0, g: 0.0, beta: 0.0 }; t.n_nodes()];
        for &n in t.load_nodes() {
            let p = t.parent(n).expect("load node has a parent");
            out[n] = *self.get(n, p).ok_or(PowerFlowError::MissingWeight(Edge::new(n, p)))?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectionVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionVector {
    pub fn zeros(n: usize) -> Self {
        InjectionVector { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    fn check(&self, n: usize) -> Result<(), PowerFlowError> {
        check_len(&self.p, n)?;
        check_len(&self.q, n)
    }
}

/// Nodal voltages over load nodes; which fields are present depends on the model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoltageVector {
    pub theta: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
}

/// Flow on each operational edge, directed away from the substation, in
/// consumption terms (power delivered into the subtree below `to`).
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedFlow {
    pub from: NodeId,
    pub to: NodeId,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineFlows(Vec<DirectedFlow>);

impl LineFlows {
    pub fn iter(&self) -> impl Iterator<Item = &DirectedFlow> {
        self.0.iter()
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> Option<&DirectedFlow> {
        self.0.iter().find(|f| f.from == from && f.to == to)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Beta,
    G,
    Custom,
}

/// Weighted Laplacian with the substation row and column removed.
#[derive(Clone, Debug)]
pub struct ReducedLaplacian {
    pub matrix: DMatrix<f64>,
    pub kind: WeightKind,
}

fn check_len(v: &[f64], n: usize) -> Result<(), PowerFlowError> {
    if v.len() != n {
        return Err(PowerFlowError::Length { expected: n, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PowerFlowError::NonFinite);
    }
    Ok(())
}

pub fn reduced_laplacian(
    t: &OperationalTree,
    weights: &EdgeWeights,
    kind: WeightKind,
) -> Result<ReducedLaplacian, PowerFlowError> {
    let n = t.n_loads();
    let mut h = DMatrix::zeros(n, n);
    for e in t.edges() {
        let w = weights.get(e.a(), e.b()).ok_or(PowerFlowError::MissingWeight(e))?;
        if !(w > 0.0) {
            return Err(PowerFlowError::NonPositiveWeight(e, w));
        }
        let (ia, ib) = (t.load_index(e.a()), t.load_index(e.b()));
        if let Some(i) = ia {
            h[(i, i)] += w;
        }
        if let Some(j) = ib {
            h[(j, j)] += w;
        }
        if let (Some(i), Some(j)) = (ia, ib) {
            h[(i, j)] -= w;
            h[(j, i)] -= w;
        }
    }
    Ok(ReducedLaplacian { matrix: h, kind })
}

/// Like [`reduced_laplacian`] but zero weights are allowed (used for `H_g`
/// when lines are purely reactive).
fn reduced_laplacian_nonneg(t: &OperationalTree, up: &[f64]) -> DMatrix<f64> {
    let n = t.n_loads();
    let mut h = DMatrix::zeros(n, n);
    for &c in t.load_nodes() {
        let w = up[c];
        let i = t.load_index(c).unwrap();
        h[(i, i)] += w;
        if let Some(j) = t.parent(c).and_then(|p| t.load_index(p)) {
            h[(j, j)] += w;
            h[(i, j)] -= w;
            h[(j, i)] -= w;
        }
    }
    h
}

/// Tree-traversal DC solver: flows accumulate leaf to root, angles root to leaf.
#[derive(Clone, Debug)]
pub struct DcSolver {
    order: Vec<NodeId>,
    parent: Vec<Option<NodeId>>,
    pos: Vec<usize>,
    beta_up: Vec<f64>,
    root: NodeId,
}

impl DcSolver {
    pub fn new(t: &OperationalTree, lp: &LineParams) -> Result<Self, PowerFlowError> {
        let up = lp.upward(t)?;
        Self::with_weights(t, up.iter().map(|p| p.beta).collect())
    }

    fn with_weights(t: &OperationalTree, beta_up: Vec<f64>) -> Result<Self, PowerFlowError> {
        for &n in t.load_nodes() {
            if !(beta_up[n] > 0.0) {
                let e = Edge::new(n, t.parent(n).unwrap());
                return Err(PowerFlowError::NonPositiveWeight(e, beta_up[n]));
            }
        }
        let mut pos = vec![usize::MAX; t.n_nodes()];
        for &n in t.load_nodes() {
            pos[n] = t.load_index(n).unwrap();
        }
        Ok(DcSolver {
            order: t.order().to_vec(),
            parent: (0..t.n_nodes()).map(|n| t.parent(n)).collect(),
            pos,
            beta_up,
            root: t.root(),
        })
    }

    pub fn n_loads(&self) -> usize {
        self.order.len() - 1
    }

    /// Writes `theta` solving `H_beta theta = p` into `out`.
    pub fn solve_into(&self, p: &[f64], out: &mut [f64]) {
        let mut flow = vec![0.0; self.parent.len()];
        for &n in self.order.iter().rev() {
            if n == self.root {
                continue;
            }
            flow[n] += p[self.pos[n]];
            let par = self.parent[n].unwrap();
            flow[par] += flow[n];
        }
        for &n in &self.order {
            if n == self.root {
                continue;
            }
            let par = self.parent[n].unwrap();
            let base = if par == self.root { 0.0 } else { out[self.pos[par]] };
            out[self.pos[n]] = base + flow[n] / self.beta_up[n];
        }
    }

    pub fn solve(&self, p: &[f64]) -> Result<Vec<f64>, PowerFlowError> {
        check_len(p, self.n_loads())?;
        let mut out = vec![0.0; self.n_loads()];
        self.solve_into(p, &mut out);
        Ok(out)
    }
}

pub fn solve_dc(t: &OperationalTree, lp: &LineParams, p: &[f64]) -> Result<Vec<f64>, PowerFlowError> {
    DcSolver::new(t, lp)?.solve(p)
}

/// Dense inverse of the LC block system
/// `[p; q] = [[H_beta, H_g], [-H_g, H_beta]] [theta; eps]`. Lossless lines
/// (`H_g = 0`) decouple into two DC solves.
#[derive(Clone, Debug)]
pub struct LcSolver {
    block: DMatrix<f64>,
    inverse: LcInverse,
}

#[derive(Clone, Debug)]
enum LcInverse {
    Dense(DMatrix<f64>),
    Decoupled(DcSolver),
}

impl LcSolver {
    pub fn new(t: &OperationalTree, lp: &LineParams) -> Result<Self, PowerFlowError> {
        let up = lp.upward(t)?;
        let hb = reduced_laplacian(t, &lp.beta(), WeightKind::Beta)?.matrix;
        let hg = reduced_laplacian_nonneg(t, &up.iter().map(|p| p.g).collect::<Vec<_>>());
        let n = t.n_loads();
        let mut block = DMatrix::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(&hb);
        block.view_mut((0, n), (n, n)).copy_from(&hg);
        block.view_mut((n, 0), (n, n)).copy_from(&(-&hg));
        block.view_mut((n, n), (n, n)).copy_from(&hb);
        let inverse = if hg.iter().all(|v| *v == 0.0) {
            LcInverse::Decoupled(DcSolver::new(t, lp)?)
        } else {
            LcInverse::Dense(block.clone().lu().try_inverse().ok_or(PowerFlowError::Singular)?)
        };
        Ok(LcSolver { block, inverse })
    }

    pub fn n_loads(&self) -> usize {
        self.block.nrows() / 2
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn solve(&self, inj: &InjectionVector) -> Result<(Vec<f64>, Vec<f64>), PowerFlowError> {
        let n = self.n_loads();
        inj.check(n)?;
        match &self.inverse {
            LcInverse::Decoupled(dc) => Ok((dc.solve(&inj.p)?, dc.solve(&inj.q)?)),
            LcInverse::Dense(inv) => {
                let rhs = DVector::from_iterator(2 * n, inj.p.iter().chain(&inj.q).copied());
                let x = inv * rhs;
                Ok((x.rows(0, n).iter().copied().collect(), x.rows(n, n).iter().copied().collect()))
            }
        }
    }
}

pub fn solve_lc(
    t: &OperationalTree,
    lp: &LineParams,
    inj: &InjectionVector,
) -> Result<(Vec<f64>, Vec<f64>), PowerFlowError> {
    LcSolver::new(t, lp)?.solve(inj)
}

#[derive(Clone, Debug)]
pub struct LdfSolver {
    order: Vec<NodeId>,
    parent: Vec<Option<NodeId>>,
    pos: Vec<usize>,
    up: Vec<LineParam>,
    root: NodeId,
}

impl LdfSolver {
    pub fn new(t: &OperationalTree, lp: &LineParams) -> Result<Self, PowerFlowError> {
        let mut pos = vec![usize::MAX; t.n_nodes()];
        for &n in t.load_nodes() {
            pos[n] = t.load_index(n).unwrap();
        }
        Ok(LdfSolver {
            order: t.order().to_vec(),
            parent: (0..t.n_nodes()).map(|n| t.parent(n)).collect(),
            pos,
            up: lp.upward(t)?,
            root: t.root(),
        })
    }

    pub fn n_loads(&self) -> usize {
        self.order.len() - 1
    }

    /// Downstream consumption flows into each non-root node, indexed by node id.
    fn flows(&self, inj: &InjectionVector) -> (Vec<f64>, Vec<f64>) {
        let mut fp = vec![0.0; self.parent.len()];
        let mut fq = vec![0.0; self.parent.len()];
        for &n in self.order.iter().rev() {
            if n == self.root {
                continue;
            }
            fp[n] -= inj.p[self.pos[n]];
            fq[n] -= inj.q[self.pos[n]];
            let par = self.parent[n].unwrap();
            fp[par] += fp[n];
            fq[par] += fq[n];
        }
        (fp, fq)
    }

    pub fn solve_phi_into(&self, inj: &InjectionVector, out: &mut [f64]) {
        let (fp, fq) = self.flows(inj);
        for &n in &self.order {
            if n == self.root {
                continue;
            }
            let par = self.parent[n].unwrap();
            let base = if par == self.root { 1.0 } else { out[self.pos[par]] };
            out[self.pos[n]] = base - 2.0 * (self.up[n].r * fp[n] + self.up[n].x * fq[n]);
        }
    }

    pub fn solve(&self, inj: &InjectionVector) -> Result<(Vec<f64>, LineFlows), PowerFlowError> {
        inj.check(self.n_loads())?;
        let mut phi = vec![0.0; self.n_loads()];
        self.solve_phi_into(inj, &mut phi);
        let (fp, fq) = self.flows(inj);
        let mut flows: Vec<DirectedFlow> = self
            .order
            .iter()
            .filter(|&&n| n != self.root)
            .map(|&n| DirectedFlow { from: self.parent[n].unwrap(), to: n, p: fp[n], q: fq[n] })
            .collect();
        flows.sort_by_key(|f| f.to);
        Ok((phi, LineFlows(flows)))
    }
}

pub fn solve_lindistflow(
    t: &OperationalTree,
    grid: &GridGraph,
    inj: &InjectionVector,
) -> Result<(Vec<f64>, LineFlows), PowerFlowError> {
    LdfSolver::new(t, &LineParams::from_grid(grid))?.solve(inj)
}

/// Any of the three models, set up once and applied to many injection draws.
#[derive(Clone, Debug)]
pub enum ModelSolver {
    Dc(DcSolver),
    Lc(LcSolver),
    LinDistFlow(LdfSolver),
}

impl ModelSolver {
    pub fn new(t: &OperationalTree, lp: &LineParams, model: PfModel) -> Result<Self, PowerFlowError> {
        Ok(match model {
            PfModel::Dc => ModelSolver::Dc(DcSolver::new(t, lp)?),
            PfModel::Lc => ModelSolver::Lc(LcSolver::new(t, lp)?),
            PfModel::LinDistFlow => ModelSolver::LinDistFlow(LdfSolver::new(t, lp)?),
        })
    }

    pub fn model(&self) -> PfModel {
        match self {
            ModelSolver::Dc(_) => PfModel::Dc,
            ModelSolver::Lc(_) => PfModel::Lc,
            ModelSolver::LinDistFlow(_) => PfModel::LinDistFlow,
        }
    }

    pub fn n_loads(&self) -> usize {
        match self {
            ModelSolver::Dc(s) => s.n_loads(),
            ModelSolver::Lc(s) => s.n_loads(),
            ModelSolver::LinDistFlow(s) => s.n_loads(),
        }
    }

    pub fn solve(&self, inj: &InjectionVector) -> Result<VoltageVector, PowerFlowError> {
        inj.check(self.n_loads())?;
        Ok(match self {
            ModelSolver::Dc(s) => VoltageVector { theta: Some(s.solve(&inj.p)?), ..Default::default() },
            ModelSolver::Lc(s) => {
                let (theta, eps) = s.solve(inj)?;
                VoltageVector { theta: Some(theta), eps: Some(eps), phi: None }
            }
            ModelSolver::LinDistFlow(s) => VoltageVector { phi: Some(s.solve(inj)?.0), ..Default::default() },
        })
    }

    /// Measured components laid out node-major, as in a measurement row.
    pub fn solve_row(&self, inj: &InjectionVector, row: &mut [f64]) -> Result<(), PowerFlowError> {
        let v = self.solve(inj)?;
        let n = self.n_loads();
        match self.model() {
            PfModel::Dc => row[..n].copy_from_slice(v.theta.as_deref().unwrap()),
            PfModel::LinDistFlow => row[..n].copy_from_slice(v.phi.as_deref().unwrap()),
            PfModel::Lc => {
                let (th, ep) = (v.theta.unwrap(), v.eps.unwrap());
                for i in 0..n {
                    row[2 * i] = th[i];
                    row[2 * i + 1] = ep[i];
                }
            }
        }
        Ok(())
    }

    /// Affine response `row = offset + A [p; q]` of the measured components.
    pub fn response(&self) -> Result<(DMatrix<f64>, DVector<f64>), PowerFlowError> {
        let n = self.n_loads();
        let k = self.model().n_components();
        let mut row = vec![0.0; n * k];
        self.solve_row(&InjectionVector::zeros(n), &mut row)?;
        let offset = DVector::from_vec(row.clone());
        let mut a = DMatrix::zeros(n * k, 2 * n);
        for j in 0..2 * n {
            let mut inj = InjectionVector::zeros(n);
            if j < n {
                inj.p[j] = 1.0;
            } else {
                inj.q[j - n] = 1.0;
            }
            self.solve_row(&inj, &mut row)?;
            for i in 0..n * k {
                a[(i, j)] = row[i] - offset[i];
            }
        }
        Ok((a, offset))
    }
}

/// Inverts a model: voltages back to the injections that produced them.
///
/// DC recovers `p` only (`q` is returned as zeros). LC recovers both. The
/// LinDistFlow map from `(p, q)` to `phi` is not injective, so, as with a
/// load held at constant active power, the active injections must be
/// supplied in `held_active`; `q` is then recovered exactly.
pub fn recover_injections(
    t: &OperationalTree,
    lp: &LineParams,
    v: &VoltageVector,
    model: PfModel,
    held_active: Option<&[f64]>,
) -> Result<InjectionVector, PowerFlowError> {
    let n = t.n_loads();
    fn need<'v>(c: &'v Option<Vec<f64>>, model: PfModel, component: &'static str) -> Result<&'v [f64], PowerFlowError> {
        c.as_deref().ok_or(PowerFlowError::MissingComponent { model, component })
    }
    match model {
        PfModel::Dc => {
            let theta = need(&v.theta, model, "theta")?;
            check_len(theta, n)?;
            let h = reduced_laplacian(t, &lp.beta(), WeightKind::Beta)?.matrix;
            let p = &h * DVector::from_column_slice(theta);
            Ok(InjectionVector { p: p.iter().copied().collect(), q: vec![0.0; n] })
        }
        PfModel::Lc => {
            let theta = need(&v.theta, model, "theta")?;
            let eps = need(&v.eps, model, "eps")?;
            check_len(theta, n)?;
            check_len(eps, n)?;
            let s = LcSolver::new(t, lp)?;
            let x = DVector::from_iterator(2 * n, theta.iter().chain(eps).copied());
            let pq = s.block() * x;
            Ok(InjectionVector {
                p: pq.rows(0, n).iter().copied().collect(),
                q: pq.rows(n, n).iter().copied().collect(),
            })
        }
        PfModel::LinDistFlow => {
            let phi = need(&v.phi, model, "phi")?;
            let p = held_active.ok_or(PowerFlowError::MissingActive)?;
            check_len(phi, n)?;
            check_len(p, n)?;
            let up = lp.upward(t)?;
            let pos = |node: NodeId| t.load_index(node).unwrap();
            // Downstream active consumption per node.
            let mut fp = vec![0.0; t.n_nodes()];
            for &node in t.order().iter().rev() {
                if node == t.root() {
                    continue;
                }
                fp[node] -= p[pos(node)];
                let par = t.parent(node).unwrap();
                fp[par] += fp[node];
            }
            // Reactive flow into each node from the voltage drop across its upstream line.
            let mut fq = vec![0.0; t.n_nodes()];
            for &node in t.load_nodes() {
                let par = t.parent(node).unwrap();
                let phi_par = if par == t.root() { 1.0 } else { phi[pos(par)] };
                fq[node] = ((phi_par - phi[pos(node)]) / 2.0 - up[node].r * fp[node]) / up[node].x;
            }
            let mut q = vec![0.0; n];
            for &node in t.load_nodes() {
                let downstream: f64 = t.children(node).map(|c| fq[c]).sum();
                q[pos(node)] = -(fq[node] - downstream);
            }
            Ok(InjectionVector { p: p.to_vec(), q })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n_loads: usize) -> OperationalTree {
        let edges: Vec<Edge> = (0..n_loads).map(|i| Edge::new(i, i + 1)).collect();
        OperationalTree::from_edges(n_loads + 1, 0, &edges).unwrap()
    }

    fn unit(t: &OperationalTree, r: f64, x: f64) -> LineParams {
        LineParams::from_impedances(t.edges().into_iter().map(|e| (e, r, x)))
    }

    fn ones(t: &OperationalTree) -> EdgeWeights {
        t.edges().into_iter().map(|e| (e, 1.0)).collect()
    }

    #[test]
    fn path_laplacian() {
        let t = path(2);
        let h = reduced_laplacian(&t, &ones(&t), WeightKind::Custom).unwrap().matrix;
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn star_laplacian() {
        let t = OperationalTree::from_edges(4, 0, &[Edge::new(0, 1), Edge::new(1, 2), Edge::new(1, 3)]).unwrap();
        let h = reduced_laplacian(&t, &ones(&t), WeightKind::Custom).unwrap().matrix;
        let want = DMatrix::from_row_slice(3, 3, &[3.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
        assert_eq!(h, want);
    }

    #[test]
    fn laplacian_weight_errors() {
        let t = path(2);
        let mut w = EdgeWeights::new();
        w.insert(0, 1, 1.0);
        assert_eq!(
            reduced_laplacian(&t, &w, WeightKind::Custom).unwrap_err(),
            PowerFlowError::MissingWeight(Edge::new(1, 2))
        );
        w.insert(1, 2, 0.0);
        assert!(matches!(reduced_laplacian(&t, &w, WeightKind::Custom), Err(PowerFlowError::NonPositiveWeight(..))));
    }

    #[test]
    fn dc_hand_example() {
        // r = 0, x = 1 gives beta = 1.
        let t = path(2);
        let theta = solve_dc(&t, &unit(&t, 0.0, 1.0), &[1.0, 0.0]).unwrap();
        assert_eq!(theta, vec![1.0, 1.0]);
        let zero = solve_dc(&t, &unit(&t, 0.0, 1.0), &[0.0, 0.0]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn lc_hand_example() {
        // r = x = 1 gives g = beta = 1/2. Block [[H, H], [-H, H]] with
        // H = [[1, -1/2], [-1/2, 1/2]]; solving by hand for p = (1, 0), q = 0
        // yields theta = (1, 1), eps = (1, 1).
        let t = path(2);
        let inj = InjectionVector { p: vec![1.0, 0.0], q: vec![0.0, 0.0] };
        let (theta, eps) = solve_lc(&t, &unit(&t, 1.0, 1.0), &inj).unwrap();
        for (got, want) in theta.iter().chain(&eps).zip([1.0, 1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let (theta, eps) = solve_lc(&t, &unit(&t, 1.0, 1.0), &InjectionVector::zeros(2)).unwrap();
        assert!(theta.iter().chain(&eps).all(|v| *v == 0.0));
    }

    #[test]
    fn ldf_single_load() {
        let t = path(1);
        let lp = unit(&t, 0.05, 0.05);
        let inj = InjectionVector { p: vec![-1.0], q: vec![-1.0] };
        let (phi, flows) = LdfSolver::new(&t, &lp).unwrap().solve(&inj).unwrap();
        let f = flows.get(0, 1).unwrap();
        assert_eq!((f.p, f.q), (1.0, 1.0));
        assert!((phi[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ldf_path_telescopes() {
        let t = path(2);
        let lp = unit(&t, 1.0, 1.0);
        let inj = InjectionVector { p: vec![-1.0, -1.0], q: vec![-1.0, -1.0] };
        let (phi, flows) = LdfSolver::new(&t, &lp).unwrap().solve(&inj).unwrap();
        assert_eq!(flows.get(0, 1).unwrap().p, 2.0);
        assert_eq!(flows.get(1, 2).unwrap().p, 1.0);
        // phi1 = 1 - 2(2 + 2) = -7, phi2 = -7 - 2(1 + 1) = -11
        assert_eq!(phi, vec![-7.0, -11.0]);
        let (phi, _) = LdfSolver::new(&t, &lp).unwrap().solve(&InjectionVector::zeros(2)).unwrap();
        assert_eq!(phi, vec![1.0, 1.0]);
    }

    #[test]
    fn recover_needs_matching_components() {
        let t = path(2);
        let lp = unit(&t, 0.1, 0.2);
        let v = VoltageVector { theta: Some(vec![0.0, 0.0]), ..Default::default() };
        assert!(matches!(
            recover_injections(&t, &lp, &v, PfModel::Lc, None),
            Err(PowerFlowError::MissingComponent { component: "eps", .. })
        ));
        let inj = recover_injections(&t, &lp, &v, PfModel::Dc, None).unwrap();
        assert_eq!(inj, InjectionVector::zeros(2));
        let v = VoltageVector { phi: Some(vec![1.0, 1.0]), ..Default::default() };
        assert_eq!(
            recover_injections(&t, &lp, &v, PfModel::LinDistFlow, None).unwrap_err(),
            PowerFlowError::MissingActive
        );
    }

    #[test]
    fn model_tags_parse() {
        for m in [PfModel::Dc, PfModel::Lc, PfModel::LinDistFlow] {
            assert_eq!(m.tag().parse::<PfModel>().unwrap(), m);
        }
        assert!("ac".parse::<PfModel>().is_err());
    }
}
