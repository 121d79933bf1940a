//! Learner behaviour with exact conditional-independence oracles.

use std::collections::BTreeSet;

use gridtopo::grid::{Edge, GridGraph, Line, LineStatus};
use gridtopo::learner::{learn_topology, test_budget, LearnOptions, PcorrTester, SeparationOracle};
use gridtopo::power_flow::{LineParams, PfModel};
use gridtopo::sampling::InjectionConfig;
use gridtopo::synth::{grid_from_load_tree, labelled_trees, random_grid};

fn complete(g: &GridGraph) -> GridGraph {
    let loads = g.load_nodes();
    let extra: Vec<Line> = loads
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| loads[i + 1..].iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| g.line(a, b).is_none())
        .map(|(a, b)| Line { a, b, r: 0.01, x: 0.05, status: LineStatus::Open })
        .collect();
    g.with_lines(extra).unwrap()
}

fn check_separation(g: &GridGraph) {
    let t = g.operational_tree().unwrap();
    let learned = learn_topology(g, &SeparationOracle::new(&t), LearnOptions { truth: Some(&t), ..Default::default() })
        .unwrap_or_else(|e| panic!("{e}\n{g}"));
    assert_eq!(learned.edges, t.load_edges(), "\n{g}");
    assert!(learned.tests_run <= test_budget(&g.candidate_graph(), g.n_nodes()));
}

#[test]
fn separation_oracle_exhaustive_small_trees() {
    let mut checked = 0;
    for n_loads in 5..=6 {
        for tree in labelled_trees(n_loads) {
            for root_child in 1..=n_loads {
                let g = grid_from_load_tree(&tree, root_child, 0).unwrap();
                if g.operational_tree().unwrap().load_diameter() < 4 {
                    continue;
                }
                check_separation(&g);
                check_separation(&complete(&g));
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn separation_and_covariance_oracles_on_random_grids() {
    let mut seed = 0u64;
    let mut done = 0;
    while done < 120 {
        seed += 1;
        let n_loads = 5 + (seed % 9) as usize;
        let spurious = (seed as usize * 7) % (n_loads + 2);
        let Ok(g) = random_grid(n_loads, spurious, seed) else { continue };
        let t = g.operational_tree().unwrap();
        if t.load_diameter() < 4 {
            continue;
        }
        check_separation(&g);
        let lp = LineParams::from_grid(&g);
        let pc = PcorrTester::exact(&t, &lp, PfModel::Dc, &InjectionConfig::default()).unwrap();
        let learned = learn_topology(&g, &pc, LearnOptions::default()).unwrap();
        assert_eq!(learned.edges, t.load_edges(), "\n{g}");
        done += 1;
    }
}

#[test]
fn bundled_feeder_with_covariance_oracle() {
    let g: GridGraph = include_str!("../data/feeder19.grid").parse().unwrap();
    let t = g.operational_tree().unwrap();
    assert_eq!(t.n_loads(), 19);
    assert_eq!(g.lines().len(), 39);
    assert!(t.depth() > 3);
    let lp = LineParams::from_grid(&g);
    let pc = PcorrTester::exact(&t, &lp, PfModel::Dc, &InjectionConfig::default()).unwrap();
    let cand = g.candidate_graph();
    let stage = gridtopo::learner::learn_nonleaf_edges(&cand, &pc).unwrap();
    let nonleaf = t.nonleaf_loads();
    let want: BTreeSet<Edge> =
        t.load_edges().into_iter().filter(|e| nonleaf.contains(&e.a()) && nonleaf.contains(&e.b())).collect();
    assert_eq!(stage.edges, want);
    let learned = learn_topology(&g, &pc, LearnOptions { truth: Some(&t), ..Default::default() }).unwrap();
    assert_eq!(learned.edges, t.load_edges());
}
