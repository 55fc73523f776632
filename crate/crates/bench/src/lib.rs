//! Shared fixtures for the benchmarks.

use dagtraj_core::dag::{DiGraph, Edge};
use dagtraj_core::labeling::DEFAULT_EPS_I;
use dagtraj_core::synthetic::{generate_corpus, ScenarioKind, SyntheticSpec};
use dagtraj_core::{build_ground_truth_graph, Heuristic, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Erdős–Rényi digraph with uniform edge confidences.
pub fn random_digraph(seed: u64, n: usize, p: f64) -> DiGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.gen_bool(p) {
                edges.push(Edge::new(s, d, rng.gen::<f64>()));
            }
        }
    }
    DiGraph::new(n, edges).expect("random graph is valid")
}

/// Dense traffic scenes of 10 to 14 agents.
pub fn congested_corpus(count: usize) -> Vec<Scene> {
    let spec = SyntheticSpec {
        kinds: vec![ScenarioKind::Congested],
        agents: [10, 14],
        seed: 10,
        ..SyntheticSpec::default()
    };
    generate_corpus(&spec, count).expect("congested corpus")
}

pub fn edge_count(scenes: &[Scene], heuristic: Heuristic) -> usize {
    scenes
        .iter()
        .map(|s| build_ground_truth_graph(s, heuristic, DEFAULT_EPS_I).expect("labels").edge_count())
        .sum()
}
