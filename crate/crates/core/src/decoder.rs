//! Factorized joint decoding over a DAG and the non-factorized baseline.
//!
//! Every agent has `K` working feature copies. Sources are decoded
//! marginally; every other node first aggregates its parents' encoded
//! futures with graph attention, updates its working feature with a GRU
//! (message as input, feature as hidden state) and is then decoded.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::encoder::TrajectoryHead;
use crate::error::{shape_mismatch, Error, Result};
use crate::numerics::blocks::{GraphAttention, GruCell, Mlp, MlpSpec, TypePairEncoder};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Segment, Tape, Var};
use crate::numerics::tensor::Tensor2;
use crate::scene::{AgentType, RigidTransform};

/// Conditioning blocks: ENCODE, decoder-side type MLP, AGG and COMB.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub encode: Mlp,
    pub f_type: TypePairEncoder,
    pub agg: GraphAttention,
    pub comb: GruCell,
}

impl Conditioning {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        type_embed: usize,
        t_fut: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            encode: Mlp::new(
                store,
                &format!("{name}.encode"),
                &MlpSpec::new(&[2 * t_fut, hidden, hidden, hidden]),
                rng,
            )?,
            f_type: TypePairEncoder::new(store, &format!("{name}.type"), AgentType::ALL.len(), type_embed, hidden, rng)?,
            agg: GraphAttention::new(store, &format!("{name}.agg"), hidden, hidden, hidden, rng)?,
            comb: GruCell::new(store, &format!("{name}.comb"), hidden, hidden, rng)?,
        })
    }
}

/// Per-(modality, agent) call counts gathered during decoding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeTrace {
    pub n_agents: usize,
    pub decode_calls: Vec<usize>,
    pub comb_calls: Vec<usize>,
    /// `(k, n)` in decode order.
    pub order: Vec<(usize, usize)>,
}

impl DecodeTrace {
    fn new(k: usize, n: usize) -> Self {
        Self {
            n_agents: n,
            decode_calls: vec![0; k * n],
            comb_calls: vec![0; k * n],
            order: Vec::new(),
        }
    }
}

/// Row `t` of the result is the step displacement of the offset sequence
/// `o`: `o_0` for the first step, `o_t - o_{t-1}` after.
pub fn displacement_matrix(t_fut: usize) -> Tensor2 {
    let mut d = Tensor2::zeros(2 * t_fut, 2 * t_fut);
    for t in 0..t_fut {
        for c in 0..2 {
            d.set(2 * t + c, 2 * t + c, 1.0);
            if t + 1 < t_fut {
                d.set(2 * t + c, 2 * (t + 1) + c, -1.0);
            }
        }
    }
    d
}

/// Decoded multi-modal offsets, modality-major rows `k * N + n`, each with
/// `2 T_fut` coordinates relative to the agent's present position.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub offsets: Var,
}

/// Decodes all `K x N` rows in DAG order. `teacher[n]`, when present,
/// replaces agent `n`'s predicted offsets as the input to ENCODE.
#[allow(clippy::too_many_arguments)]
pub fn decode_factorized(
    tape: &mut Tape,
    head: &TrajectoryHead,
    cond: &Conditioning,
    features: Var,
    types: &[AgentType],
    dag: &Dag,
    teacher: Option<&[Option<Vec<f64>>]>,
    mut trace: Option<&mut DecodeTrace>,
) -> Result<Decoded> {
    let n = tape.shape(features).0;
    let k_modes = head.modes;
    let width = 2 * head.t_fut;
    if dag.n_nodes != n {
        return Err(Error::AgentMismatch(format!(
            "dag has {} nodes, features cover {n} agents",
            dag.n_nodes
        )));
    }
    if types.len() != n {
        return Err(shape_mismatch("decoder agent types", format!("{n}"), format!("{}", types.len())));
    }
    if let Some(t) = teacher {
        if t.len() != n {
            return Err(shape_mismatch("teacher futures", format!("{n} agents"), format!("{}", t.len())));
        }
        if let Some(bad) = t.iter().flatten().find(|v| v.len() != width) {
            return Err(shape_mismatch(
                "teacher future",
                format!("{width} values"),
                format!("{}", bad.len()),
            ));
        }
    }
    if let Some(tr) = trace.as_deref_mut() {
        *tr = DecodeTrace::new(k_modes, n);
    }
    if n == 0 {
        return Ok(Decoded {
            offsets: tape.constant(Tensor2::zeros(0, width)),
        });
    }
    let parents = dag.parents();
    let idx = |k: usize, v: usize| k * n + v;
    let mut working: Vec<(Var, usize)> = (0..k_modes).flat_map(|_| (0..n).map(|v| (features, v))).collect();
    let mut preds: Vec<Option<(Var, usize)>> = vec![None; k_modes * n];
    let mut encoded: Vec<Option<(Var, usize)>> = vec![None; k_modes * n];
    let diff = tape.constant(displacement_matrix(head.t_fut));

    for level in &dag.levels {
        let rows: Vec<(usize, usize)> = (0..k_modes).flat_map(|k| level.iter().map(move |&v| (k, v))).collect();
        let conditioned: Vec<(usize, usize)> = rows.iter().copied().filter(|&(_, v)| !parents[v].is_empty()).collect();
        if !conditioned.is_empty() {
            // ENCODE every parent future not yet encoded.
            let mut missing: Vec<(usize, usize)> = Vec::new();
            for &(k, v) in &conditioned {
                for &m in &parents[v] {
                    if encoded[idx(k, m)].is_none() && !missing.contains(&(k, m)) {
                        missing.push((k, m));
                    }
                }
            }
            if !missing.is_empty() {
                let mut picks = Vec::with_capacity(missing.len());
                for &(k, m) in &missing {
                    let forced = teacher.and_then(|t| t[m].as_ref());
                    picks.push(match forced {
                        Some(future) => (tape.constant(Tensor2::row_vector(future)), 0),
                        None => preds[idx(k, m)].ok_or_else(|| Error::InvalidConfig(format!("parent {m} decoded after child")))?,
                    });
                }
                let off = tape.stack_rows(&picks);
                let disp = tape.matmul(off, diff);
                let enc = cond.encode.forward(tape, disp)?;
                for (i, &(k, m)) in missing.iter().enumerate() {
                    encoded[idx(k, m)] = Some((enc, i));
                }
            }
            // Messages e_m + a_mn grouped by receiver.
            let mut msg_rows = Vec::new();
            let mut state_rows = Vec::new();
            let mut type_pairs = Vec::new();
            let mut segments: Vec<Segment> = Vec::new();
            for &(k, v) in &conditioned {
                segments.push((msg_rows.len(), parents[v].len()));
                for &m in &parents[v] {
                    msg_rows.push(encoded[idx(k, m)].expect("parent encoded"));
                    state_rows.push(working[idx(k, v)]);
                    type_pairs.push((types[m].index(), types[v].index()));
                }
            }
            let e = tape.stack_rows(&msg_rows);
            let a = cond.f_type.forward(tape, &type_pairs)?;
            let b = tape.add(e, a);
            let states = tape.stack_rows(&state_rows);
            let agg = cond.agg.forward(tape, b, states, &segments)?;
            let hidden_rows: Vec<(Var, usize)> = conditioned.iter().map(|&(k, v)| working[idx(k, v)]).collect();
            let hidden = tape.stack_rows(&hidden_rows);
            let updated = cond.comb.forward(tape, agg.messages, hidden)?;
            for (i, &(k, v)) in conditioned.iter().enumerate() {
                working[idx(k, v)] = (updated, i);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.comb_calls[idx(k, v)] += 1;
                }
            }
        }
        let picks: Vec<(Var, usize)> = rows.iter().map(|&(k, v)| working[idx(k, v)]).collect();
        let modes: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let out = head.decode_rows(tape, &picks, &modes)?;
        for (i, &(k, v)) in rows.iter().enumerate() {
            preds[idx(k, v)] = Some((out, i));
            if let Some(tr) = trace.as_deref_mut() {
                tr.decode_calls[idx(k, v)] += 1;
                tr.order.push((k, v));
            }
        }
    }
    let all: Vec<(Var, usize)> = preds
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::AgentMismatch(format!("agent {} missing from the dag levels", i % n))))
        .collect::<Result<_>>()?;
    Ok(Decoded {
        offsets: tape.stack_rows(&all),
    })
}

/// Every agent decoded marginally for every modality.
pub fn decode_nonfactorized(tape: &mut Tape, head: &TrajectoryHead, features: Var) -> Result<Decoded> {
    let offsets = head.decode_all(tape, features)?;
    let n = tape.shape(features).0;
    if n == 0 {
        return Ok(Decoded { offsets });
    }
    let all: Vec<(Var, usize)> = (0..head.modes * n).map(|i| (offsets, i)).collect();
    Ok(Decoded {
        offsets: tape.stack_rows(&all),
    })
}

// ---------------------------------------------------------------------------
// Bundles

/// `K` joint futures; `modes[k][i]` is the coordinate sequence of agent
/// `agent_ids[i]` in modality `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub k: usize,
    pub agent_ids: Vec<usize>,
    pub modes: Vec<Vec<Vec<[f64; 2]>>>,
}

impl TrajectoryBundle {
    /// Converts modality-major offset rows into absolute coordinates: adds
    /// each agent's present position, then maps back through `transform`.
    pub fn from_offsets(offsets: &Tensor2, k: usize, present: &[[f64; 2]], transform: &RigidTransform) -> Result<Self> {
        let n = present.len();
        if offsets.rows != k * n || !offsets.cols.is_multiple_of(2) {
            return Err(shape_mismatch(
                "bundle offsets",
                format!("{} x even", k * n),
                format!("{} x {}", offsets.rows, offsets.cols),
            ));
        }
        let t_fut = offsets.cols / 2;
        let modes = (0..k)
            .map(|m| {
                (0..n)
                    .map(|a| {
                        let row = offsets.row(m * n + a);
                        (0..t_fut)
                            .map(|t| transform.invert_point([present[a][0] + row[2 * t], present[a][1] + row[2 * t + 1]]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            k,
            agent_ids: (0..n).collect(),
            modes,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn t_fut(&self) -> usize {
        self.modes.first().and_then(|m| m.first()).map_or(0, Vec::len)
    }

    /// Position of `agent_id` in `agent_ids`.
    pub fn slot(&self, agent_id: usize) -> Option<usize> {
        self.agent_ids.iter().position(|&a| a == agent_id)
    }

    pub fn trajectory(&self, k: usize, agent_id: usize) -> Option<&[[f64; 2]]> {
        self.slot(agent_id).map(|s| self.modes[k][s].as_slice())
    }

    pub fn all_finite(&self) -> bool {
        self.modes.iter().flatten().flatten().all(|p| p[0].is_finite() && p[1].is_finite())
    }

    /// Keeps only the first `k` modalities.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            k: k.min(self.k),
            agent_ids: self.agent_ids.clone(),
            modes: self.modes[..k.min(self.k)].to_vec(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleAgent {
    agent_id: usize,
    modes: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct BundleRecord {
    #[serde(rename = "K")]
    k: usize,
    agents: Vec<BundleAgent>,
}

impl TrajectoryBundle {
    pub fn to_json(&self) -> Result<String> {
        let agents = self
            .agent_ids
            .iter()
            .enumerate()
            .map(|(i, &agent_id)| BundleAgent {
                agent_id,
                modes: self.modes.iter().map(|m| m[i].clone()).collect(),
            })
            .collect();
        crate::scene::to_json_padded(&BundleRecord { k: self.k, agents })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: BundleRecord = serde_json::from_str(text)?;
        if let Some(bad) = rec.agents.iter().find(|a| a.modes.len() != rec.k) {
            return Err(Error::InvalidScene(format!(
                "agent {} has {} modes, expected {}",
                bad.agent_id,
                bad.modes.len(),
                rec.k
            )));
        }
        let modes = (0..rec.k)
            .map(|k| rec.agents.iter().map(|a| a.modes[k].clone()).collect())
            .collect();
        Ok(Self {
            k: rec.k,
            agent_ids: rec.agents.iter().map(|a| a.agent_id).collect(),
            modes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
