//! Synthetic feeders: labelled trees from Prüfer sequences and random
//! grids with spurious candidate lines.

use crate::grid::{Edge, GridError, GridGraph, Line, LineStatus, Node, NodeId};
use crate::rng::CounterRng;

/// Tree on `0..seq.len() + 2` encoded by a Prüfer sequence.
pub fn prufer_decode(seq: &[usize]) -> Vec<Edge> {
    let n = seq.len() + 2;
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("a leaf always exists");
        edges.push(Edge::new(leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push(Edge::new(rest[0], rest[1]));
    edges
}

/// Every labelled tree on `0..n` (`n^(n-2)` of them), in lexicographic
/// order of their Prüfer sequences.
pub fn labelled_trees(n: usize) -> impl Iterator<Item = Vec<Edge>> {
    assert!(n >= 2);
    let len = n - 2;
    let total = n.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut seq = vec![0; len];
        for s in seq.iter_mut().rev() {
            *s = code % n;
            code /= n;
        }
        prufer_decode(&seq)
    })
}

/// Grid whose loads `1..=n_loads` carry `load_tree` (labels `0..n_loads`
/// shifted by one) and whose substation 0 feeds load `root_child`. Line
/// impedances are drawn from `seed`: `r` in [0.005, 0.02], `x` in [0.02, 0.08].
pub fn grid_from_load_tree(load_tree: &[Edge], root_child: NodeId, seed: u64) -> Result<GridGraph, GridError> {
    let n_loads = load_tree.len() + 1;
    let nodes = (0..=n_loads).map(|id| Node { id, is_substation: id == 0 }).collect();
    let mut s = CounterRng::new(seed).stream();
    let mut line = |a, b| Line {
        a,
        b,
        r: 0.005 + 0.015 * s.next_f64(),
        x: 0.02 + 0.06 * s.next_f64(),
        status: LineStatus::Operational,
    };
    let mut lines = vec![line(0, root_child)];
    lines.extend(load_tree.iter().map(|e| line(e.a() + 1, e.b() + 1)));
    GridGraph::new(nodes, lines)
}

/// Uniform random labelled feeder with `n_loads` loads and `spurious` open
/// lines.
pub fn random_grid(n_loads: usize, spurious: usize, seed: u64) -> Result<GridGraph, GridError> {
    assert!(n_loads >= 2);
    let rng = CounterRng::new(seed);
    let mut s = rng.split(0).stream();
    let seq: Vec<usize> = (0..n_loads - 2).map(|_| s.below(n_loads as u64) as usize).collect();
    let root_child = 1 + s.below(n_loads as u64) as usize;
    grid_from_load_tree(&prufer_decode(&seq), root_child, rng.split(1).u64_at(0))?
        .spur(spurious, rng.split(2).u64_at(0))
}
