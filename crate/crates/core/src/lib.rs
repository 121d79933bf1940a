//! Topology recovery for radial distribution grids from nodal voltage
//! samples.
//!
//! The operational network is a tree rooted at the substation. Voltages
//! obtained from a linearised power flow driven by independent injections
//! form a graphical model whose edges are the tree edges plus all node pairs
//! two hops apart. The learner recovers the tree by testing conditional
//! independence of quartets of nodes.

pub mod ci_test;
pub mod graphical_model;
pub mod grid;
pub mod learner;
pub mod power_flow;
pub mod rng;
pub mod sampling;
pub mod synth;
