//! Candidate grid graph, its operational radial tree, and neighbourhood queries.
//!
//! A grid document is line oriented:
//!
//! ```text
//! # comment
//! node 0 substation
//! node 1
//! edge 0 1 r=0.01 x=0.05 status=operational
//! ```
//!
//! Node ids must be the contiguous range `0..n`. Exactly one node is the
//! substation; the operational lines must form a tree rooted there whose root
//! has a single child.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::CounterRng;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge ({a}, {b}) has non-positive reactance x={x}")]
    Reactance { a: NodeId, b: NodeId, x: f64 },
    #[error("edge ({a}, {b}) has invalid resistance r={r}")]
    Resistance { a: NodeId, b: NodeId, r: f64 },
    #[error("expected exactly one substation, found {0}")]
    SubstationCount(usize),
    #[error("node ids must be contiguous from 0; missing {0}")]
    NonContiguous(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("operational lines are not radial: {0}")]
    NotRadial(String),
    #[error("substation must have exactly one operational line, found {0}")]
    RootEdge(usize),
    #[error("grid already has {0} open lines; spurious edges need a pure tree")]
    NotPureTree(usize),
    #[error("requested {requested} spurious edges but only {available} load-node pairs are free")]
    TooManySpurious { requested: usize, available: usize },
}

/// Undirected edge with endpoints stored in increasing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(NodeId, NodeId);

impl Edge {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn a(&self) -> NodeId {
        self.0
    }

    pub fn b(&self) -> NodeId {
        self.1
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.0 == n || self.1 == n
    }

    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.0 == n {
            Some(self.1)
        } else if self.1 == n {
            Some(self.0)
        } else {
            None
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineStatus {
    Operational,
    Open,
}

impl LineStatus {
    fn as_str(&self) -> &'static str {
        match self {
            LineStatus::Operational => "operational",
            LineStatus::Open => "open",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub is_substation: bool,
}

/// A line with per-unit impedance `r + i x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub a: NodeId,
    pub b: NodeId,
    pub r: f64,
    pub x: f64,
    pub status: LineStatus,
}

impl Line {
    pub fn edge(&self) -> Edge {
        Edge::new(self.a, self.b)
    }

    /// Conductance-like weight `r / (x^2 + r^2)`.
    pub fn g(&self) -> f64 {
        self.r / (self.x * self.x + self.r * self.r)
    }

    /// Susceptance-like weight `x / (x^2 + r^2)`.
    pub fn beta(&self) -> f64 {
        self.x / (self.x * self.x + self.r * self.r)
    }
}

/// Validated candidate network: every line, operational or open.
#[derive(Clone, Debug)]
pub struct GridGraph {
    nodes: Vec<Node>,
    lines: Vec<Line>,
    index: HashMap<Edge, usize>,
    substation: NodeId,
}

impl GridGraph {
    pub fn new(mut nodes: Vec<Node>, lines: Vec<Line>) -> Result<Self, GridError> {
        nodes.sort_by_key(|n| n.id);
        for w in nodes.windows(2) {
            if w[0].id == w[1].id {
                return Err(GridError::DuplicateNode(w[0].id));
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(GridError::NonContiguous(i));
            }
        }
        let subs: Vec<_> = nodes.iter().filter(|n| n.is_substation).collect();
        if subs.len() != 1 {
            return Err(GridError::SubstationCount(subs.len()));
        }
        let substation = subs[0].id;

        let mut index = HashMap::with_capacity(lines.len());
        for (i, l) in lines.iter().enumerate() {
            if l.a >= nodes.len() {
                return Err(GridError::UnknownNode(l.a));
            }
            if l.b >= nodes.len() {
                return Err(GridError::UnknownNode(l.b));
            }
            if l.a == l.b {
                return Err(GridError::SelfLoop(l.a));
            }
            if !(l.x > 0.0) || !l.x.is_finite() {
                return Err(GridError::Reactance { a: l.a, b: l.b, x: l.x });
            }
            if !(l.r >= 0.0) || !l.r.is_finite() {
                return Err(GridError::Resistance { a: l.a, b: l.b, r: l.r });
            }
            if index.insert(l.edge(), i).is_some() {
                return Err(GridError::DuplicateEdge(l.edge().a(), l.edge().b()));
            }
        }
        Ok(GridGraph { nodes, lines, index, substation })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn substation(&self) -> NodeId {
        self.substation
    }

    pub fn load_nodes(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| !n.is_substation).map(|n| n.id).collect()
    }

    pub fn line(&self, a: NodeId, b: NodeId) -> Option<&Line> {
        self.index.get(&Edge::new(a, b)).map(|&i| &self.lines[i])
    }

    pub fn operational_lines(&self) -> impl Iterator<Item = &Line> {
        self.lines.iter().filter(|l| l.status == LineStatus::Operational)
    }

    /// Largest node degree over all lines.
    pub fn max_degree(&self) -> usize {
        let mut deg = vec![0usize; self.nodes.len()];
        for l in &self.lines {
            deg[l.a] += 1;
            deg[l.b] += 1;
        }
        deg.into_iter().max().unwrap_or(0)
    }

    /// Candidate lines between load nodes, regardless of status. Lines
    /// incident to the substation are known a priori and never learned.
    pub fn candidate_graph(&self) -> CandidateGraph {
        CandidateGraph::new(
            self.lines.iter().filter(|l| l.a != self.substation && l.b != self.substation).map(|l| l.edge()),
        )
    }

    pub fn operational_tree(&self) -> Result<OperationalTree, GridError> {
        let edges: Vec<Edge> = self.operational_lines().map(|l| l.edge()).collect();
        OperationalTree::from_edges(self.nodes.len(), self.substation, &edges)
    }

    /// Copy of this grid with extra lines appended.
    pub fn with_lines(&self, extra: impl IntoIterator<Item = Line>) -> Result<Self, GridError> {
        let mut lines = self.lines.clone();
        lines.extend(extra);
        GridGraph::new(self.nodes.clone(), lines)
    }

    /// Copy of a pure tree grid with `k` open lines added between load nodes,
    /// drawn uniformly without replacement from the unconnected pairs.
    /// Impedances are drawn uniformly between the smallest and largest
    /// existing values.
    pub fn spur(&self, k: usize, seed: u64) -> Result<Self, GridError> {
        let open = self.lines.iter().filter(|l| l.status == LineStatus::Open).count();
        if open > 0 {
            return Err(GridError::NotPureTree(open));
        }
        self.operational_tree()?;
        let loads = self.load_nodes();
        let mut free: Vec<Edge> = loads
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| loads[i + 1..].iter().map(move |&b| Edge::new(a, b)))
            .filter(|e| !self.index.contains_key(e))
            .collect();
        if k > free.len() {
            return Err(GridError::TooManySpurious { requested: k, available: free.len() });
        }
        let range = |f: fn(&Line) -> f64| {
            let v = self.lines.iter().map(f);
            (v.clone().fold(f64::INFINITY, f64::min), v.fold(f64::NEG_INFINITY, f64::max))
        };
        let (r_lo, r_hi) = range(|l| l.r);
        let (x_lo, x_hi) = range(|l| l.x);
        let mut s = CounterRng::new(seed).stream();
        let mut extra = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + s.below((free.len() - i) as u64) as usize;
            free.swap(i, j);
            let e = free[i];
            let r = r_lo + (r_hi - r_lo) * s.next_f64();
            let x = x_lo + (x_hi - x_lo) * s.next_f64();
            extra.push(Line { a: e.a(), b: e.b(), r, x, status: LineStatus::Open });
        }
        self.with_lines(extra)
    }

    /// Copy of this grid keeping only lines accepted by `keep`.
    pub fn filter_lines(&self, keep: impl Fn(&Line) -> bool) -> Self {
        let lines: Vec<Line> = self.lines.iter().copied().filter(|l| keep(l)).collect();
        GridGraph::new(self.nodes.clone(), lines).expect("subset of a valid grid is valid")
    }
}

impl FromStr for GridGraph {
    type Err = GridError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut nodes = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let perr = |msg: String| GridError::Parse { line: lineno, msg };
            match toks[0] {
                "node" => {
                    let id = toks
                        .get(1)
                        .ok_or_else(|| perr("missing node id".into()))?
                        .parse::<NodeId>()
                        .map_err(|e| perr(format!("bad node id: {e}")))?;
                    let is_substation = match toks.get(2) {
                        None => false,
                        Some(&"substation") => true,
                        Some(t) => return Err(perr(format!("unexpected token `{t}`"))),
                    };
                    if toks.len() > 3 {
                        return Err(perr("trailing tokens".into()));
                    }
                    nodes.push(Node { id, is_substation });
                }
                "edge" => {
                    if toks.len() != 6 {
                        return Err(perr(format!("expected 6 tokens, found {}", toks.len())));
                    }
                    let node = |t: &str| t.parse::<NodeId>().map_err(|e| perr(format!("bad node id `{t}`: {e}")));
                    let a = node(toks[1])?;
                    let b = node(toks[2])?;
                    let kv = |t: &str, key: &str| -> Result<String, GridError> {
                        t.strip_prefix(key)
                            .and_then(|s| s.strip_prefix('='))
                            .map(str::to_owned)
                            .ok_or_else(|| perr(format!("expected `{key}=...`, found `{t}`")))
                    };
                    let num =
                        |s: String, key: &str| s.parse::<f64>().map_err(|e| perr(format!("bad {key} value: {e}")));
                    let r = num(kv(toks[3], "r")?, "r")?;
                    let x = num(kv(toks[4], "x")?, "x")?;
                    let status = match kv(toks[5], "status")?.as_str() {
                        "operational" => LineStatus::Operational,
                        "open" => LineStatus::Open,
                        s => return Err(perr(format!("unknown status `{s}`"))),
                    };
                    lines.push(Line { a, b, r, x, status });
                }
                t => return Err(perr(format!("unknown record `{t}`"))),
            }
        }
        GridGraph::new(nodes, lines)
    }
}

impl fmt::Display for GridGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            if n.is_substation {
                writeln!(f, "node {} substation", n.id)?;
            } else {
                writeln!(f, "node {}", n.id)?;
            }
        }
        for l in &self.lines {
            writeln!(f, "edge {} {} r={} x={} status={}", l.a, l.b, l.r, l.x, l.status.as_str())?;
        }
        Ok(())
    }
}

/// Radial operational topology rooted at the substation.
#[derive(Clone, Debug)]
pub struct OperationalTree {
    root: NodeId,
    parent: Vec<Option<NodeId>>,
    adjacency: Vec<Vec<NodeId>>,
    order: Vec<NodeId>,
    depth: usize,
    loads: Vec<NodeId>,
    load_pos: Vec<Option<usize>>,
}

impl OperationalTree {
    /// Builds the tree spanned by `edges` over nodes `0..n_nodes`.
    pub fn from_edges(n_nodes: usize, root: NodeId, edges: &[Edge]) -> Result<Self, GridError> {
        if root >= n_nodes {
            return Err(GridError::UnknownNode(root));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for e in edges {
            if e.b() >= n_nodes {
                return Err(GridError::UnknownNode(e.b()));
            }
            adjacency[e.a()].push(e.b());
            adjacency[e.b()].push(e.a());
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
        }
        if adjacency[root].len() != 1 {
            return Err(GridError::RootEdge(adjacency[root].len()));
        }
        if edges.len() + 1 != n_nodes {
            // Either a cycle or a disconnected node; find out which for the message.
            let msg = if edges.len() + 1 > n_nodes {
                "operational lines contain a cycle".to_string()
            } else {
                "a load node is disconnected".to_string()
            };
            return Err(GridError::NotRadial(msg));
        }

        let mut parent = vec![None; n_nodes];
        let mut seen = vec![false; n_nodes];
        let mut hops = vec![0usize; n_nodes];
        let mut order = Vec::with_capacity(n_nodes);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                } else if parent[u] != Some(v) {
                    return Err(GridError::NotRadial(format!("cycle through edge ({u}, {v})")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GridError::NotRadial(format!("node {missing} is disconnected")));
        }
        let depth = hops.iter().copied().max().unwrap_or(0);
        let loads: Vec<NodeId> = (0..n_nodes).filter(|&n| n != root).collect();
        let mut load_pos = vec![None; n_nodes];
        for (i, &n) in loads.iter().enumerate() {
            load_pos[n] = Some(i);
        }
        Ok(OperationalTree { root, parent, adjacency, order, depth, loads, load_pos })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// The single load node attached to the substation.
    pub fn root_child(&self) -> NodeId {
        self.adjacency[self.root][0]
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n]
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adjacency[n]
    }

    pub fn children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[n].iter().copied().filter(move |&c| self.parent[c] == Some(n))
    }

    /// Longest root-to-leaf hop count.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Nodes in breadth-first order from the root (root first).
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// Non-substation nodes in increasing id order.
    pub fn load_nodes(&self) -> &[NodeId] {
        &self.loads
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Position of a load node in [`Self::load_nodes`].
    pub fn load_index(&self, n: NodeId) -> Option<usize> {
        self.load_pos.get(n).copied().flatten()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        n < self.adjacency.len()
    }

    /// All operational edges, sorted.
    pub fn edges(&self) -> Vec<Edge> {
        let mut e: Vec<Edge> = (0..self.n_nodes()).filter_map(|n| self.parent[n].map(|p| Edge::new(n, p))).collect();
        e.sort_unstable();
        e
    }

    pub fn root_edge(&self) -> Edge {
        Edge::new(self.root, self.root_child())
    }

    /// Operational edges between load nodes (the learnable part of the tree).
    pub fn load_edges(&self) -> BTreeSet<Edge> {
        let re = self.root_edge();
        self.edges().into_iter().filter(|&e| e != re).collect()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a) && self.contains(b) && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Hop distances from `src` to every node.
    pub fn distances_from(&self, src: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes at tree distance 1 or 2 from `a`, excluding `a`.
    pub fn two_hop_neighborhood(&self, a: NodeId) -> Result<BTreeSet<NodeId>, GridError> {
        if !self.contains(a) {
            return Err(GridError::UnknownNode(a));
        }
        let mut out = BTreeSet::new();
        for &b in &self.adjacency[a] {
            out.insert(b);
            out.extend(self.adjacency[b].iter().copied());
        }
        out.remove(&a);
        Ok(out)
    }

    /// Longest path, in edges, using load nodes only.
    ///
    /// Recovery needs at least three non-leaf load nodes, which is exactly a
    /// load-only path of four or more edges.
    pub fn load_diameter(&self) -> usize {
        let loads_adj = |u: NodeId| self.adjacency[u].iter().copied().filter(|&v| v != self.root);
        let far = |src: NodeId| {
            let mut dist = vec![usize::MAX; self.n_nodes()];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            let mut best = (0, src);
            while let Some(u) = queue.pop_front() {
                if dist[u] > best.0 {
                    best = (dist[u], u);
                }
                for v in loads_adj(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            best
        };
        let (_, end) = far(self.root_child());
        far(end).0
    }

    /// Load nodes with two or more load-node neighbours.
    pub fn nonleaf_loads(&self) -> BTreeSet<NodeId> {
        self.loads
            .iter()
            .copied()
            .filter(|&n| self.adjacency[n].iter().filter(|&&v| v != self.root).count() >= 2)
            .collect()
    }
}

/// The learnable candidate edge set over load nodes.
#[derive(Clone, Debug, Default)]
pub struct CandidateGraph {
    edges: BTreeSet<Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl CandidateGraph {
    pub fn new(edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut g = CandidateGraph::default();
        for e in edges {
            if e.a() == e.b() {
                continue;
            }
            g.edges.insert(e);
            g.adjacency.entry(e.a()).or_default().insert(e.b());
            g.adjacency.entry(e.b()).or_default().insert(e.a());
        }
        g
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&n).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adjacency.get(&n).map_or(0, |s| s.len())
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Pairs `(c, d)` with `(a, c)` and `(d, b)` candidate edges, `c, d`
    /// outside `{a, b}` and `c != d`, in sorted order. A pair reachable in
    /// both orientations (both nodes adjacent to both `a` and `b`) is listed once.
    pub fn candidate_quartets(&self, ab: Edge) -> Vec<(NodeId, NodeId)> {
        let (a, b) = (ab.a(), ab.b());
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in self.neighbors(a).filter(|&c| c != a && c != b) {
            for d in self.neighbors(b).filter(|&d| d != a && d != b && d != c) {
                if seen.insert(Edge::new(c, d)) {
                    out.push((c, d));
                }
            }
        }
        out
    }
}
