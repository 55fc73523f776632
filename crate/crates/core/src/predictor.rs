//! Pairwise interaction classifier over encoded agent features and its
//! conversion to a predicted DAG.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dag::{dagify, graph_from_predictions, Dag};
use crate::encoder::POSITION_SCALE;
use crate::error::{shape_mismatch, Error, Result};
use crate::labeling::InteractionGraph;
use crate::numerics::blocks::{Mlp, MlpSpec, TypePairEncoder};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor2;
use crate::scene::{AgentType, Scene};

#[derive(Debug, Clone)]
pub struct GraphPredictor {
    pub f_dist: Mlp,
    pub f_type: TypePairEncoder,
    pub f_edge: Mlp,
    pub f_int: Mlp,
    pub hidden: usize,
}

/// Canonical pairs `(m, n)`, `m < n`, over the evaluated agents.
pub fn evaluated_pairs(scene: &Scene) -> Vec<(usize, usize)> {
    let ev = scene.evaluated_agents();
    let mut pairs = Vec::new();
    for (i, &m) in ev.iter().enumerate() {
        for &n in &ev[i + 1..] {
            pairs.push((m, n));
        }
    }
    pairs
}

impl GraphPredictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, type_embed: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            f_dist: Mlp::new(store, &format!("{name}.dist"), &MlpSpec::new(&[2, hidden, hidden]), rng)?,
            f_type: TypePairEncoder::new(store, &format!("{name}.type"), AgentType::ALL.len(), type_embed, hidden, rng)?,
            f_edge: Mlp::new(store, &format!("{name}.edge"), &MlpSpec::new(&[4 * hidden, hidden, hidden]), rng)?,
            f_int: Mlp::new(store, &format!("{name}.int"), &MlpSpec::new(&[hidden, hidden, 3]), rng)?,
            hidden,
        })
    }

    /// `f_edge([h_m || h_n || f_dist(p_m - p_n) || f_type(a_m, a_n)])` at the
    /// present step, one row per pair.
    pub fn edge_features(&self, tape: &mut Tape, features: Var, scene: &Scene, pairs: &[(usize, usize)]) -> Result<Var> {
        let n = tape.shape(features).0;
        if n != scene.n_agents() {
            return Err(shape_mismatch(
                "edge features",
                format!("{} agents", scene.n_agents()),
                format!("{n} feature rows"),
            ));
        }
        if pairs.is_empty() {
            return Ok(tape.constant(Tensor2::zeros(0, self.hidden)));
        }
        let mut dist = Tensor2::zeros(pairs.len(), 2);
        for (r, &(m, k)) in pairs.iter().enumerate() {
            let (sm, sk) = (scene.agents[m].present(), scene.agents[k].present());
            if !sm.valid || !sk.valid {
                return Err(Error::InvalidScene(format!("pair ({m}, {k}) lacks a valid present position")));
            }
            dist.row_mut(r).copy_from_slice(&[
                (sm.position[0] - sk.position[0]) * POSITION_SCALE,
                (sm.position[1] - sk.position[1]) * POSITION_SCALE,
            ]);
        }
        let dist = tape.constant(dist);
        let dist = self.f_dist.forward(tape, dist)?;
        let types: Vec<(usize, usize)> = pairs
            .iter()
            .map(|&(m, k)| (scene.agents[m].agent_type.index(), scene.agents[k].agent_type.index()))
            .collect();
        let ty = self.f_type.forward(tape, &types)?;
        let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let hm = tape.gather_rows(features, &first);
        let hn = tape.gather_rows(features, &second);
        let cat = tape.concat_cols(&[hm, hn, dist, ty]);
        self.f_edge.forward(tape, cat)
    }

    /// Class probabilities `(no_interaction, m_influences_n, n_influences_m)`.
    pub fn classify_edges(&self, tape: &mut Tape, edge_features: Var) -> Result<Var> {
        if tape.shape(edge_features).0 == 0 {
            return Ok(tape.constant(Tensor2::zeros(0, 3)));
        }
        let logits = self.f_int.forward(tape, edge_features)?;
        Ok(tape.softmax_rows(logits))
    }
}

/// Collects per-pair probabilities into an interaction graph with argmax labels.
pub fn predicted_graph(n_agents: usize, pairs: &[(usize, usize)], probs: &Tensor2) -> Result<InteractionGraph> {
    let mut map = BTreeMap::new();
    let mut graph = InteractionGraph::new(n_agents);
    for (r, &pair) in pairs.iter().enumerate() {
        let p = [probs.get(r, 0), probs.get(r, 1), probs.get(r, 2)];
        let mut best = 0;
        for c in 1..3 {
            if p[c] > p[best] {
                best = c;
            }
        }
        graph.labels.insert(pair, crate::labeling::EdgeLabel::ALL[best]);
        map.insert(pair, p);
    }
    graph.probabilities = Some(map);
    Ok(graph)
}

/// Argmax graph of the predictions, dagified.
pub fn dag_from_probabilities(graph: &InteractionGraph) -> Result<Dag> {
    let empty = BTreeMap::new();
    let probs = graph.probabilities.as_ref().unwrap_or(&empty);
    dagify(&graph_from_predictions(graph.n_agents, probs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::tests::constant_velocity_track;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, GraphPredictor) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = GraphPredictor::new(&mut store, "gp", 5, 3, &mut rng).unwrap();
        (store, p)
    }

    fn scene(n: usize) -> Scene {
        let agents = (0..n)
            .map(|i| constant_velocity_track(i, [i as f64 * 3.0, -(i as f64)], [5.0, 1.0], 4, 3))
            .collect();
        Scene {
            scene_id: "gp".into(),
            agents,
            t_obs: 4,
            t_fut: 3,
            dt: 0.1,
        }
    }

    fn random_features(tape: &mut Tape, n: usize, hidden: usize) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        tape.constant(Tensor2::from_vec(n, hidden, (0..n * hidden).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
    }

    #[test]
    fn pair_count_is_n_choose_2() {
        for n in 1..6 {
            assert_eq!(evaluated_pairs(&scene(n)).len(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn swapped_pair_gives_different_features() {
        let (store, gp) = setup();
        let s = scene(2);
        let mut tape = Tape::new(&store);
        let f = random_features(&mut tape, 2, 5);
        let e = gp.edge_features(&mut tape, f, &s, &[(0, 1), (1, 0)]).unwrap();
        let v = tape.value(e);
        assert_ne!(v.row(0), v.row(1));
    }

    #[test]
    fn coincident_positions_give_zero_distance_input() {
        let (store, gp) = setup();
        let mut s = scene(2);
        s.agents[1] = constant_velocity_track(1, [0.0, 0.0], [5.0, 1.0], 4, 3);
        let mut tape = Tape::new(&store);
        let f = random_features(&mut tape, 2, 5);
        let with_pair = gp.edge_features(&mut tape, f, &s, &[(0, 1)]).unwrap();
        // Recompute by hand with a zero distance input.
        let zero = tape.constant(Tensor2::zeros(1, 2));
        let d = gp.f_dist.forward(&mut tape, zero).unwrap();
        let ty = gp.f_type.forward(&mut tape, &[(0, 0)]).unwrap();
        let h0 = tape.gather_rows(f, &[0]);
        let h1 = tape.gather_rows(f, &[1]);
        let cat = tape.concat_cols(&[h0, h1, d, ty]);
        let manual = gp.f_edge.forward(&mut tape, cat).unwrap();
        assert_eq!(tape.value(with_pair), tape.value(manual));
    }

    #[test]
    fn zero_logits_are_uniform_and_rows_sum_to_one() {
        let (mut store, gp) = setup();
        let s = scene(4);
        let pairs = evaluated_pairs(&s);
        {
            let mut tape = Tape::new(&store);
            let f = random_features(&mut tape, 4, 5);
            let e = gp.edge_features(&mut tape, f, &s, &pairs).unwrap();
            let p = gp.classify_edges(&mut tape, e).unwrap();
            for r in 0..pairs.len() {
                assert!((tape.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let last = gp.f_int.layers.last().unwrap();
        for id in [last.w, last.b.unwrap()] {
            store.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new(&store);
        let f = random_features(&mut tape, 4, 5);
        let e = gp.edge_features(&mut tape, f, &s, &pairs).unwrap();
        let p = gp.classify_edges(&mut tape, e).unwrap();
        assert!(tape.value(p).data.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn predicted_graph_and_dag() {
        let probs = Tensor2::from_rows(&[vec![0.1, 0.6, 0.3], vec![0.2, 0.1, 0.7], vec![0.9, 0.05, 0.05]]).unwrap();
        let g = predicted_graph(3, &[(0, 1), (0, 2), (1, 2)], &probs).unwrap();
        let dag = dag_from_probabilities(&g).unwrap();
        assert_eq!(dag.edges.iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>(), vec![(0, 1), (2, 0)]);
        assert_eq!(dag.levels, vec![vec![2], vec![0], vec![1]]);
    }
}
