//! Directed interaction graphs: elementary-cycle enumeration, removal of
//! low-confidence cyclic edges, and level scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{EdgeLabel, InteractionGraph};

/// Above this many elementary cycles, dagification switches to DFS
/// back-edge removal.
pub const CYCLE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub conf: f64,
}

impl Edge {
    pub fn new(src: usize, dst: usize, conf: f64) -> Self {
        Self { src, dst, conf }
    }
}

/// Directed graph with per-edge confidences. May contain cycles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiGraph {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
}

impl DiGraph {
    pub fn new(n_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        let g = Self { n_nodes, edges };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        for e in &self.edges {
            for node in [e.src, e.dst] {
                if node >= self.n_nodes {
                    return Err(Error::UnknownNode {
                        node,
                        n_nodes: self.n_nodes,
                    });
                }
            }
            if e.src == e.dst {
                return Err(Error::SelfLoop(e.src));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated successor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            adj[e.src].push(e.dst);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Directed acyclic graph plus its level partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
    pub levels: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a DAG, failing with `CycleDetected` if the edges contain a cycle.
    pub fn new(n_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        let graph = DiGraph::new(n_nodes, edges)?;
        let levels = schedule(&graph)?;
        Ok(Self {
            n_nodes,
            edges: graph.edges,
            levels,
        })
    }

    pub fn edgeless(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            edges: Vec::new(),
            levels: if n_nodes == 0 { Vec::new() } else { vec![(0..n_nodes).collect()] },
        }
    }

    /// Sorted parent list of every node.
    pub fn parents(&self) -> Vec<Vec<usize>> {
        let mut pa = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            pa[e.dst].push(e.src);
        }
        for list in &mut pa {
            list.sort_unstable();
            list.dedup();
        }
        pa
    }

    pub fn level_of(&self) -> Vec<usize> {
        let mut lv = vec![0; self.n_nodes];
        for (l, nodes) in self.levels.iter().enumerate() {
            for &n in nodes {
                lv[n] = l;
            }
        }
        lv
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Longest-path levels by Kahn's algorithm.
fn schedule(graph: &DiGraph) -> Result<Vec<Vec<usize>>> {
    let adj = graph.adjacency();
    let mut indeg = vec![0usize; graph.n_nodes];
    for list in &adj {
        for &w in list {
            indeg[w] += 1;
        }
    }
    let mut level = vec![0usize; graph.n_nodes];
    let mut frontier: Vec<usize> = (0..graph.n_nodes).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = frontier.pop() {
        seen += 1;
        for &w in &adj[v] {
            level[w] = level[w].max(level[v] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                frontier.push(w);
            }
        }
    }
    if seen != graph.n_nodes {
        return Err(Error::CycleDetected);
    }
    let depth = level.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut levels = vec![Vec::new(); depth];
    for (v, &l) in level.iter().enumerate() {
        levels[l].push(v);
    }
    Ok(levels)
}

/// Recomputes the level partition of `dag` from its edges.
pub fn level_schedule(dag: &Dag) -> Result<Vec<Vec<usize>>> {
    schedule(&DiGraph::new(dag.n_nodes, dag.edges.clone())?)
}

// ---------------------------------------------------------------------------
// Johnson's algorithm

struct Johnson<'a, F: FnMut(&[usize])> {
    adj: &'a [Vec<usize>],
    in_scc: Vec<bool>,
    blocked: Vec<bool>,
    blocked_by: Vec<Vec<usize>>,
    stack: Vec<usize>,
    start: usize,
    found: usize,
    limit: usize,
    visit: F,
}

impl<F: FnMut(&[usize])> Johnson<'_, F> {
    fn unblock(&mut self, u: usize) {
        let mut work = vec![u];
        while let Some(u) = work.pop() {
            if !self.blocked[u] {
                continue;
            }
            self.blocked[u] = false;
            work.append(&mut self.blocked_by[u]);
        }
    }

    fn circuit(&mut self, v: usize) -> bool {
        let mut closed = false;
        self.stack.push(v);
        self.blocked[v] = true;
        let adj = self.adj;
        for &w in &adj[v] {
            if self.found >= self.limit {
                break;
            }
            if !self.in_scc[w] {
                continue;
            }
            if w == self.start {
                self.found += 1;
                (self.visit)(&self.stack);
                closed = true;
            } else if !self.blocked[w] && self.circuit(w) {
                closed = true;
            }
        }
        if closed {
            self.unblock(v);
        } else {
            for &w in &adj[v] {
                if self.in_scc[w] && !self.blocked_by[w].contains(&v) {
                    self.blocked_by[w].push(v);
                }
            }
        }
        self.stack.pop();
        closed
    }
}

/// Nodes of the strongly connected component containing `root` within the
/// subgraph induced by nodes `>= root`.
fn scc_of(adj: &[Vec<usize>], root: usize) -> Vec<bool> {
    let n = adj.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut work = vec![root];
        seen[root] = true;
        while let Some(v) = work.pop() {
            let mut step = |w: usize| {
                if w >= root && !seen[w] {
                    seen[w] = true;
                    work.push(w);
                }
            };
            if forward {
                adj[v].iter().for_each(|&w| step(w));
            } else {
                (0..n).filter(|&u| adj[u].binary_search(&v).is_ok()).for_each(&mut step);
            }
        }
        seen
    };
    let fwd = reach(true);
    let back = reach(false);
    fwd.iter().zip(&back).map(|(a, b)| *a && *b).collect()
}

/// Calls `visit` with each elementary cycle, lowest node first, stopping
/// after `limit` cycles. Returns the number of cycles visited.
pub fn for_each_cycle<F: FnMut(&[usize])>(graph: &DiGraph, limit: usize, visit: F) -> Result<usize> {
    graph.check()?;
    let adj = graph.adjacency();
    let n = graph.n_nodes;
    let mut j = Johnson {
        adj: &adj,
        in_scc: vec![false; n],
        blocked: vec![false; n],
        blocked_by: vec![Vec::new(); n],
        stack: Vec::new(),
        start: 0,
        found: 0,
        limit,
        visit,
    };
    for s in 0..n {
        if j.found >= limit {
            break;
        }
        let scc = scc_of(&adj, s);
        if scc.iter().filter(|&&b| b).count() < 2 {
            continue;
        }
        j.in_scc = scc;
        j.start = s;
        for v in 0..n {
            j.blocked[v] = false;
            j.blocked_by[v].clear();
        }
        j.circuit(s);
    }
    Ok(j.found)
}

/// All elementary cycles, each rotated to start at its lowest node, in
/// lexicographic order.
pub fn enumerate_cycles(graph: &DiGraph) -> Result<Vec<Vec<usize>>> {
    let mut cycles = Vec::new();
    for_each_cycle(graph, usize::MAX, |c| cycles.push(c.to_vec()))?;
    cycles.sort();
    Ok(cycles)
}

// ---------------------------------------------------------------------------
// Dagification

fn lower_confidence(a: &Edge, b: &Edge) -> bool {
    a.conf < b.conf || (a.conf == b.conf && (a.src, a.dst) < (b.src, b.dst))
}

fn weakest<'a>(edges: impl Iterator<Item = &'a Edge>) -> Option<Edge> {
    edges.fold(None, |best: Option<Edge>, e| match best {
        Some(b) if !lower_confidence(e, &b) => Some(b),
        _ => Some(*e),
    })
}

/// Edges lying on at least one elementary cycle, or `None` if there are
/// more than `limit` cycles.
fn cyclic_edges(graph: &DiGraph, limit: usize) -> Result<Option<BTreeSet<(usize, usize)>>> {
    let mut on_cycle = BTreeSet::new();
    let count = for_each_cycle(graph, limit.saturating_add(1), |c| {
        for i in 0..c.len() {
            on_cycle.insert((c[i], c[(i + 1) % c.len()]));
        }
    })?;
    Ok((count <= limit).then_some(on_cycle))
}

/// Some cycle closed by a DFS back edge, as its edge list.
fn back_edge_cycle(graph: &DiGraph) -> Option<Vec<(usize, usize)>> {
    let adj = graph.adjacency();
    let n = graph.n_nodes;
    // 0 = unvisited, 1 = on the DFS path, 2 = finished.
    let mut state = vec![0u8; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut path = vec![root];
        let mut next = vec![0usize];
        state[root] = 1;
        while let Some(&v) = path.last() {
            let i = *next.last().unwrap();
            if i < adj[v].len() {
                *next.last_mut().unwrap() += 1;
                let w = adj[v][i];
                match state[w] {
                    0 => {
                        state[w] = 1;
                        path.push(w);
                        next.push(0);
                    }
                    1 => {
                        let from = path.iter().position(|&u| u == w).unwrap();
                        let nodes = &path[from..];
                        let mut edges: Vec<_> = nodes.windows(2).map(|p| (p[0], p[1])).collect();
                        edges.push((v, w));
                        return Some(edges);
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                path.pop();
                next.pop();
            }
        }
    }
    None
}

/// Result of dagification, including the removed edges in removal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dagified {
    pub dag: Dag,
    pub removed: Vec<Edge>,
}

/// Removes the globally weakest cycle edge, one per iteration, until no
/// cycle remains.
pub fn dagify_with_limit(graph: &DiGraph, limit: usize) -> Result<Dagified> {
    graph.check()?;
    let mut current = graph.clone();
    let mut removed = Vec::new();
    loop {
        let candidates: Option<BTreeSet<(usize, usize)>> = match cyclic_edges(&current, limit)? {
            Some(set) if set.is_empty() => break,
            Some(set) => Some(set),
            None => back_edge_cycle(&current).map(|c| c.into_iter().collect()),
        };
        let Some(candidates) = candidates else { break };
        let victim = weakest(current.edges.iter().filter(|e| candidates.contains(&(e.src, e.dst)))).expect("a cycle has at least one edge");
        current.edges.retain(|e| (e.src, e.dst) != (victim.src, victim.dst));
        removed.push(victim);
    }
    let dag = Dag::new(current.n_nodes, current.edges)?;
    Ok(Dagified { dag, removed })
}

pub fn dagify(graph: &DiGraph) -> Result<Dag> {
    Ok(dagify_with_limit(graph, CYCLE_LIMIT)?.dag)
}

/// Checks that `probs` is a finite probability vector.
pub fn check_simplex(m: usize, n: usize, probs: &[f64; 3]) -> Result<()> {
    let bad = |reason: String| Err(Error::MalformedProbabilities { m, n, reason });
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return bad(format!("entries must be finite and non-negative, got {probs:?}"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return bad(format!("entries sum to {sum}"));
    }
    Ok(())
}

/// Argmax class per pair; directional winners become one edge each.
pub fn graph_from_predictions(n_agents: usize, probs: &BTreeMap<(usize, usize), [f64; 3]>) -> Result<DiGraph> {
    let mut edges = Vec::new();
    for (&(m, n), p) in probs {
        check_simplex(m, n, p)?;
        let mut best = 0;
        for c in 1..3 {
            if p[c] > p[best] {
                best = c;
            }
        }
        match EdgeLabel::ALL[best] {
            EdgeLabel::NoInteraction => {}
            EdgeLabel::MInfluencesN => edges.push(Edge::new(m, n, p[best])),
            EdgeLabel::NInfluencesM => edges.push(Edge::new(n, m, p[best])),
        }
    }
    DiGraph::new(n_agents, edges)
}

/// DAG of a labeled interaction graph, every edge with confidence 1.
pub fn dag_from_labels(graph: &InteractionGraph) -> Result<Dag> {
    let edges = graph.directed_edges().into_iter().map(|(s, d)| Edge::new(s, d, 1.0)).collect();
    dagify(&DiGraph::new(graph.n_agents, edges)?)
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Serialize, Deserialize)]
struct DagRecord {
    n_nodes: usize,
    edges: Vec<Edge>,
}

impl DiGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: DagRecord = serde_json::from_str(text)?;
        DiGraph::new(rec.n_nodes, rec.edges)
    }
}

impl Dag {
    pub fn to_json(&self) -> Result<String> {
        crate::scene::to_json_padded(&DagRecord {
            n_nodes: self.n_nodes,
            edges: self.edges.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: DagRecord = serde_json::from_str(text)?;
        Dag::new(rec.n_nodes, rec.edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_digraph<R: Rng>(rng: &mut R, n: usize, p: f64) -> DiGraph {
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.gen_bool(p) {
                    edges.push(Edge::new(s, d, rng.gen_range(0.0..1.0)));
                }
            }
        }
        DiGraph::new(n, edges).unwrap()
    }

    /// Exhaustive simple-path search from each start node through larger
    /// nodes only.
    pub(crate) fn brute_force_cycles(graph: &DiGraph) -> Vec<Vec<usize>> {
        fn walk(adj: &[Vec<usize>], start: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            let v = *path.last().unwrap();
            for &w in &adj[v] {
                if w == start {
                    out.push(path.clone());
                } else if w > start && !path.contains(&w) {
                    path.push(w);
                    walk(adj, start, path, out);
                    path.pop();
                }
            }
        }
        let adj = graph.adjacency();
        let mut out = Vec::new();
        for s in 0..graph.n_nodes {
            walk(&adj, s, &mut vec![s], &mut out);
        }
        out.sort();
        out
    }

    /// Independent acyclicity check by repeatedly deleting sinks.
    pub(crate) fn is_acyclic(n: usize, edges: &[Edge]) -> bool {
        let mut alive = vec![true; n];
        loop {
            let sink = (0..n).find(|&v| alive[v] && !edges.iter().any(|e| e.src == v && alive[e.dst]));
            match sink {
                Some(v) => alive[v] = false,
                None => return alive.iter().all(|a| !a),
            }
        }
    }

    fn edges(list: &[(usize, usize, f64)]) -> Vec<Edge> {
        list.iter().map(|&(s, d, c)| Edge::new(s, d, c)).collect()
    }

    #[test]
    fn acyclic_graph_has_no_cycles() {
        let g = DiGraph::new(4, edges(&[(0, 1, 0.5), (1, 2, 0.5), (0, 3, 0.5)])).unwrap();
        assert!(enumerate_cycles(&g).unwrap().is_empty());
    }

    #[test]
    fn triangle_reports_one_cycle() {
        let g = DiGraph::new(3, edges(&[(1, 2, 0.5), (2, 0, 0.5), (0, 1, 0.5)])).unwrap();
        assert_eq!(enumerate_cycles(&g).unwrap(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn self_loop_rejected() {
        assert!(matches!(DiGraph::new(2, edges(&[(1, 1, 0.5)])), Err(Error::SelfLoop(1))));
        assert!(matches!(
            DiGraph::new(2, edges(&[(0, 4, 0.5)])),
            Err(Error::UnknownNode { node: 4, n_nodes: 2 })
        ));
    }

    #[test]
    fn johnson_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let n = rng.gen_range(1..=8);
            let g = random_digraph(&mut rng, n, 0.3);
            assert_eq!(enumerate_cycles(&g).unwrap(), brute_force_cycles(&g));
        }
    }

    #[test]
    fn complete_graph_cycle_count() {
        // K_n has sum_{k=2}^{n} C(n,k) (k-1)! elementary cycles.
        let n = 6;
        let mut list = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d {
                    list.push(Edge::new(s, d, 0.5));
                }
            }
        }
        let g = DiGraph::new(n, list).unwrap();
        let choose = |n: usize, k: usize| (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1));
        let fact = |k: usize| (1..=k).product::<usize>();
        let expect: usize = (2..=n).map(|k| choose(n, k) * fact(k - 1)).sum();
        assert_eq!(enumerate_cycles(&g).unwrap().len(), expect);
    }

    #[test]
    fn dagify_acyclic_is_identity() {
        let e = edges(&[(0, 1, 0.2), (1, 2, 0.3)]);
        let out = dagify_with_limit(&DiGraph::new(3, e.clone()).unwrap(), CYCLE_LIMIT).unwrap();
        assert_eq!(out.dag.edges, e);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn dagify_triangle_removes_weakest() {
        let g = DiGraph::new(3, edges(&[(0, 1, 0.9), (1, 2, 0.8), (2, 0, 0.7)])).unwrap();
        let out = dagify_with_limit(&g, CYCLE_LIMIT).unwrap();
        assert_eq!(out.removed, edges(&[(2, 0, 0.7)]));
        assert_eq!(out.dag.edges, edges(&[(0, 1, 0.9), (1, 2, 0.8)]));
    }

    #[test]
    fn dagify_two_disjoint_two_cycles() {
        let g = DiGraph::new(4, edges(&[(0, 1, 0.6), (1, 0, 0.4), (2, 3, 0.3), (3, 2, 0.8)])).unwrap();
        let out = dagify_with_limit(&g, CYCLE_LIMIT).unwrap();
        let mut removed: Vec<_> = out.removed.iter().map(|e| (e.src, e.dst)).collect();
        removed.sort();
        assert_eq!(removed, vec![(1, 0), (2, 3)]);
    }

    #[test]
    fn dagify_confidence_tie_uses_smallest_pair() {
        let g = DiGraph::new(2, edges(&[(1, 0, 0.5), (0, 1, 0.5)])).unwrap();
        let out = dagify_with_limit(&g, CYCLE_LIMIT).unwrap();
        assert_eq!((out.removed[0].src, out.removed[0].dst), (0, 1));
    }

    #[test]
    fn safety_valve_still_yields_dag() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = random_digraph(&mut rng, 9, 0.5);
            let out = dagify_with_limit(&g, 2).unwrap();
            assert!(is_acyclic(out.dag.n_nodes, &out.dag.edges));
        }
    }

    #[test]
    fn dagify_random_sparse_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..=20);
            let g = random_digraph(&mut rng, n, 0.15);
            let initial_cycles = enumerate_cycles(&g).unwrap().len();
            let out = dagify_with_limit(&g, CYCLE_LIMIT).unwrap();
            assert!(is_acyclic(n, &out.dag.edges));
            assert!(out.removed.len() <= initial_cycles);
            // Replay removals: each edge must be on a cycle when removed.
            let mut cur = g.clone();
            for e in &out.removed {
                let cyc = enumerate_cycles(&cur).unwrap();
                assert!(cyc
                    .iter()
                    .any(|c| (0..c.len()).any(|i| (c[i], c[(i + 1) % c.len()]) == (e.src, e.dst))));
                cur.edges.retain(|x| (x.src, x.dst) != (e.src, e.dst));
            }
        }
    }

    #[test]
    fn levels_examples() {
        assert_eq!(Dag::new(5, vec![]).unwrap().levels, vec![vec![0, 1, 2, 3, 4]]);
        let chain = Dag::new(3, edges(&[(0, 1, 1.0), (1, 2, 1.0)])).unwrap();
        assert_eq!(chain.levels, vec![vec![0], vec![1], vec![2]]);
        let diamond = Dag::new(4, edges(&[(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])).unwrap();
        assert_eq!(diamond.levels, vec![vec![0], vec![1, 2], vec![3]]);
        assert_eq!(level_schedule(&diamond).unwrap(), diamond.levels);
        assert_eq!(Dag::edgeless(5).levels, Dag::new(5, vec![]).unwrap().levels);
        assert!(matches!(Dag::new(2, edges(&[(0, 1, 1.0), (1, 0, 1.0)])), Err(Error::CycleDetected)));
    }

    #[test]
    fn predictions_to_graph() {
        let probs = BTreeMap::from([
            ((0, 1), [1.0, 0.0, 0.0]),
            ((2, 5), [0.1, 0.6, 0.3]),
            ((3, 4), [0.2, 0.4, 0.4]),
            ((0, 3), [0.2, 0.1, 0.7]),
        ]);
        let g = graph_from_predictions(6, &probs).unwrap();
        assert_eq!(g.edges, edges(&[(3, 0, 0.7), (2, 5, 0.6), (3, 4, 0.4)]));
        let bad = BTreeMap::from([((0, 1), [0.5, 0.6, 0.0])]);
        assert!(matches!(
            graph_from_predictions(2, &bad),
            Err(Error::MalformedProbabilities { m: 0, n: 1, .. })
        ));
    }

    #[test]
    fn dag_json_round_trip() {
        let d = Dag::new(3, edges(&[(0, 2, 0.123456789), (1, 2, 1.0)])).unwrap();
        assert_eq!(Dag::from_json(&d.to_json().unwrap()).unwrap(), d);
    }

    proptest! {
        #[test]
        fn levels_respect_edges(seed in any::<u64>(), n in 1usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_digraph(&mut rng, n, 0.2);
            let dag = dagify(&g).unwrap();
            let lv = dag.level_of();
            for e in &dag.edges {
                prop_assert!(lv[e.src] < lv[e.dst]);
            }
            let pa = dag.parents();
            for v in 0..n {
                let expect = pa[v].iter().map(|&p| lv[p] + 1).max().unwrap_or(0);
                prop_assert_eq!(lv[v], expect);
            }
        }
    }
}
