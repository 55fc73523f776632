//! Ground-truth pairwise interaction labels from future trajectories.
//!
//! Two heuristics are provided. The sparse one runs the collision checker
//! over all future timestep pairs inside a time window and takes the first
//! colliding pair; the dense one only asks whether two future paths ever come
//! within the sum of the agents' lengths. In both cases the agent that reaches
//! the conflict point first is the influencer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collision::{poses_collide, Footprint, Pose};
use crate::error::{Error, Result};
use crate::scene::{AgentState, AgentTrack, Scene};

/// Default interaction window in seconds.
pub const DEFAULT_EPS_I: f64 = 2.5;

/// Label of the canonical pair `(m, n)` with `m < n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    NoInteraction,
    MInfluencesN,
    NInfluencesM,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 3] = [EdgeLabel::NoInteraction, EdgeLabel::MInfluencesN, EdgeLabel::NInfluencesM];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn is_interaction(self) -> bool {
        self != EdgeLabel::NoInteraction
    }

    /// Same relation seen from the swapped pair.
    pub fn flipped(self) -> Self {
        match self {
            EdgeLabel::NoInteraction => EdgeLabel::NoInteraction,
            EdgeLabel::MInfluencesN => EdgeLabel::NInfluencesM,
            EdgeLabel::NInfluencesM => EdgeLabel::MInfluencesN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    Sparse,
    Dense,
}

impl std::str::FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Heuristic::Sparse),
            "dense" => Ok(Heuristic::Dense),
            other => Err(Error::InvalidConfig(format!("unknown heuristic {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionGraph {
    pub n_agents: usize,
    pub labels: BTreeMap<(usize, usize), EdgeLabel>,
    pub probabilities: Option<BTreeMap<(usize, usize), [f64; 3]>>,
}

impl InteractionGraph {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n_agents,
            ..Default::default()
        }
    }

    /// Directed influencer-to-reactor edges.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .filter_map(|(&(m, n), &label)| match label {
                EdgeLabel::NoInteraction => None,
                EdgeLabel::MInfluencesN => Some((m, n)),
                EdgeLabel::NInfluencesM => Some((n, m)),
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.labels.values().filter(|l| l.is_interaction()).count()
    }
}

/// Window length in timesteps: `floor(eps_i / dt)`.
pub fn window_steps(eps_i: f64, dt: f64) -> usize {
    ((eps_i / dt) + 1e-9).floor().max(0.0) as usize
}

fn pose(state: &AgentState) -> Pose {
    Pose::new(state.position, state.yaw)
}

/// Smallest `(min{t_m, t_n}, max{t_m, t_n}, t_m)` among qualifying pairs.
/// Pairs are visited in exactly that order, so the first hit is the argmin.
fn first_pair<F>(len_m: usize, len_n: usize, window: Option<usize>, mut qualifies: F) -> Option<(usize, usize)>
where
    F: FnMut(usize, usize) -> bool,
{
    let horizon = len_m.max(len_n);
    for lo in 0..horizon {
        let hi_end = match window {
            Some(w) => (lo + w).min(horizon - 1),
            None => horizon - 1,
        };
        for hi in lo..=hi_end {
            if lo < len_m && hi < len_n && qualifies(lo, hi) {
                return Some((lo, hi));
            }
            if hi != lo && hi < len_m && lo < len_n && qualifies(hi, lo) {
                return Some((hi, lo));
            }
        }
    }
    None
}

fn direction(t_m: usize, t_n: usize, id_m: usize, id_n: usize) -> EdgeLabel {
    use std::cmp::Ordering::*;
    match t_m.cmp(&t_n) {
        Less => EdgeLabel::MInfluencesN,
        Greater => EdgeLabel::NInfluencesM,
        Equal if id_m < id_n => EdgeLabel::MInfluencesN,
        Equal => EdgeLabel::NInfluencesM,
    }
}

/// Sparse collision-window heuristic. `track_m` plays the role of `m`.
pub fn label_pair_sparse(track_m: &AgentTrack, track_n: &AgentTrack, eps_i: f64, dt: f64) -> Result<EdgeLabel> {
    let fut_m = track_m.future_or_err()?;
    let fut_n = track_n.future_or_err()?;
    let foot_m = Footprint::new(track_m.length, track_m.width)?;
    let foot_n = Footprint::new(track_n.length, track_n.width)?;
    let window = window_steps(eps_i, dt);
    let hit = first_pair(fut_m.len(), fut_n.len(), Some(window), |a, b| {
        let (sm, sn) = (&fut_m[a], &fut_n[b]);
        sm.valid && sn.valid && poses_collide(&pose(sm), &foot_m, &pose(sn), &foot_n)
    });
    Ok(match hit {
        None => EdgeLabel::NoInteraction,
        Some((a, b)) => direction(a, b, track_m.agent_id, track_n.agent_id),
    })
}

/// Dense distance heuristic: any pair of future coordinates within the sum
/// of the two agents' lengths.
pub fn label_pair_dense(track_m: &AgentTrack, track_n: &AgentTrack) -> Result<EdgeLabel> {
    let fut_m = track_m.future_or_err()?;
    let fut_n = track_n.future_or_err()?;
    let threshold = track_m.length + track_n.length;
    let hit = first_pair(fut_m.len(), fut_n.len(), None, |a, b| {
        let (sm, sn) = (&fut_m[a], &fut_n[b]);
        sm.valid && sn.valid && (sm.position[0] - sn.position[0]).hypot(sm.position[1] - sn.position[1]) <= threshold
    });
    Ok(match hit {
        None => EdgeLabel::NoInteraction,
        Some((a, b)) => direction(a, b, track_m.agent_id, track_n.agent_id),
    })
}

pub fn label_pair(track_m: &AgentTrack, track_n: &AgentTrack, heuristic: Heuristic, eps_i: f64, dt: f64) -> Result<EdgeLabel> {
    match heuristic {
        Heuristic::Sparse => label_pair_sparse(track_m, track_n, eps_i, dt),
        Heuristic::Dense => label_pair_dense(track_m, track_n),
    }
}

/// Labels every unordered pair of evaluated agents.
pub fn build_ground_truth_graph(scene: &Scene, heuristic: Heuristic, eps_i: f64) -> Result<InteractionGraph> {
    let evaluated = scene.evaluated_agents();
    let mut graph = InteractionGraph::new(scene.n_agents());
    for (i, &m) in evaluated.iter().enumerate() {
        for &n in &evaluated[i + 1..] {
            let label = label_pair(&scene.agents[m], &scene.agents[n], heuristic, eps_i, scene.dt)?;
            graph.labels.insert((m, n), label);
        }
    }
    Ok(graph)
}

/// Agents incident to at least one interacting edge.
pub fn interactive_agents(graph: &InteractionGraph) -> BTreeSet<usize> {
    graph
        .labels
        .iter()
        .filter(|(_, l)| l.is_interaction())
        .flat_map(|(&(m, n), _)| [m, n])
        .collect()
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    m: usize,
    n: usize,
    label: EdgeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct GraphRecord {
    n_agents: usize,
    edges: Vec<EdgeRecord>,
}

impl InteractionGraph {
    pub fn to_json(&self) -> Result<String> {
        let edges = self
            .labels
            .iter()
            .map(|(&(m, n), &label)| EdgeRecord {
                m,
                n,
                label,
                probs: self.probabilities.as_ref().and_then(|p| p.get(&(m, n)).copied()),
            })
            .collect();
        crate::scene::to_json_padded(&GraphRecord {
            n_agents: self.n_agents,
            edges,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: GraphRecord = serde_json::from_str(text)?;
        let mut graph = InteractionGraph::new(rec.n_agents);
        let mut probs = BTreeMap::new();
        for e in rec.edges {
            if e.m >= e.n || e.n >= rec.n_agents {
                return Err(Error::InvalidScene(format!(
                    "edge ({}, {}) must satisfy m < n < {}",
                    e.m, e.n, rec.n_agents
                )));
            }
            graph.labels.insert((e.m, e.n), e.label);
            if let Some(p) = e.probs {
                probs.insert((e.m, e.n), p);
            }
        }
        if !probs.is_empty() {
            graph.probabilities = Some(probs);
        }
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
