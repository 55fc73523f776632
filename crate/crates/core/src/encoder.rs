//! Map-free agent encoder: a GRU over each agent's preprocessed history,
//! a linear projection, and one round of agent-to-agent attention. Also
//! holds the auxiliary proposal decoder that reads the encoded features.

use rand::Rng;

use crate::error::{shape_mismatch, Result};
use crate::numerics::blocks::{one_hot, Dense, GraphAttention, GruCell, Mlp, MlpSpec, ResidualBlock};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Segment, Tape, Var};
use crate::numerics::tensor::Tensor2;
use crate::scene::{preprocess, PreprocessedHistory, Scene};

/// Width of one history step: displacement (2), velocity (2), yaw (1).
pub const STEP_WIDTH: usize = 5;
/// Velocities are fed in units of 10 m/s.
pub const VELOCITY_SCALE: f64 = 0.1;
/// Relative positions are fed in units of 20 m.
pub const POSITION_SCALE: f64 = 0.05;
/// Agent-to-agent attention radius in meters.
pub const A2A_RADIUS: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct HistoryEncoder {
    pub gru: GruCell,
    pub proj: Dense,
    pub rel: Mlp,
    pub attention: GraphAttention,
    pub hidden: usize,
}

/// Neighbor edges grouped by receiver: `(sources, receivers, segments)`.
pub(crate) type NeighborEdges = (Vec<usize>, Vec<usize>, Vec<Segment>);

/// Pairs within `radius` of each other at the present step, grouped by
/// receiver; agents without a valid present state take no part.
pub(crate) fn neighbor_edges(present: &[Option<[f64; 2]>], radius: f64) -> NeighborEdges {
    let (mut src, mut dst, mut segments) = (Vec::new(), Vec::new(), Vec::new());
    for (n, pn) in present.iter().enumerate() {
        let start = src.len();
        if let Some(pn) = pn {
            for (m, pm) in present.iter().enumerate() {
                let Some(pm) = pm else { continue };
                if m != n && (pm[0] - pn[0]).hypot(pm[1] - pn[1]) <= radius {
                    src.push(m);
                    dst.push(n);
                }
            }
        }
        segments.push((start, src.len() - start));
    }
    (src, dst, segments)
}

pub(crate) fn present_of(scene: &Scene) -> Vec<Option<[f64; 2]>> {
    scene
        .agents
        .iter()
        .map(|a| {
            let p = a.present();
            p.valid.then_some(p.position)
        })
        .collect()
}

impl HistoryEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, gru_hidden: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            gru: GruCell::new(store, &format!("{name}.gru"), STEP_WIDTH, gru_hidden, rng)?,
            proj: Dense::new(store, &format!("{name}.proj"), gru_hidden, hidden, rng)?,
            rel: Mlp::new(store, &format!("{name}.rel"), &MlpSpec::new(&[2, hidden, hidden]), rng)?,
            attention: GraphAttention::new(store, &format!("{name}.a2a"), hidden, hidden, hidden, rng)?,
            hidden,
        })
    }

    /// Per-agent features (one row per agent) from preprocessed history and
    /// present positions.
    pub fn encode_history(&self, tape: &mut Tape, history: &PreprocessedHistory, present: &[Option<[f64; 2]>]) -> Result<Var> {
        let n = history.agents.len();
        if present.len() != n {
            return Err(shape_mismatch(
                "encoder present positions",
                format!("{n} agents"),
                format!("{}", present.len()),
            ));
        }
        if n == 0 {
            return Ok(tape.constant(Tensor2::zeros(0, self.hidden)));
        }
        let t_obs = history.agents[0].len();
        if let Some(bad) = history.agents.iter().find(|a| a.len() != t_obs) {
            return Err(shape_mismatch(
                "encoder history length",
                format!("{t_obs} steps"),
                format!("{} steps", bad.len()),
            ));
        }
        let mut h = tape.constant(Tensor2::zeros(n, self.gru.hidden));
        for t in 0..t_obs {
            let mut x = Tensor2::zeros(n, STEP_WIDTH);
            let mut mask = vec![false; n];
            for (i, steps) in history.agents.iter().enumerate() {
                let s = &steps[t];
                if s.valid {
                    x.row_mut(i).copy_from_slice(&[
                        s.displacement[0],
                        s.displacement[1],
                        s.velocity[0] * VELOCITY_SCALE,
                        s.velocity[1] * VELOCITY_SCALE,
                        s.yaw,
                    ]);
                    mask[i] = true;
                }
            }
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let xv = tape.constant(x);
            let stepped = self.gru.forward(tape, xv, h)?;
            h = tape.select_rows(&mask, stepped, h);
        }
        let feats = self.proj.forward(tape, h)?;
        self.interact(tape, feats, present)
    }

    pub fn encode(&self, tape: &mut Tape, scene: &Scene) -> Result<Var> {
        self.encode_history(tape, &preprocess(scene), &present_of(scene))
    }

    /// `h_n + sum_m alpha_mn W1 (h_m + f_rel(p_m - p_n))` over neighbors.
    fn interact(&self, tape: &mut Tape, feats: Var, present: &[Option<[f64; 2]>]) -> Result<Var> {
        let (src, dst, segments) = neighbor_edges(present, A2A_RADIUS);
        if src.is_empty() {
            return Ok(feats);
        }
        let mut rel = Tensor2::zeros(src.len(), 2);
        for (e, (&m, &n)) in src.iter().zip(&dst).enumerate() {
            let (pm, pn) = (
                present[m].expect("neighbor has a position"),
                present[n].expect("receiver has a position"),
            );
            rel.row_mut(e)
                .copy_from_slice(&[(pm[0] - pn[0]) * POSITION_SCALE, (pm[1] - pn[1]) * POSITION_SCALE]);
        }
        let rel = tape.constant(rel);
        let rel = self.rel.forward(tape, rel)?;
        let hm = tape.gather_rows(feats, &src);
        let messages = tape.add(hm, rel);
        let states = tape.gather_rows(feats, &dst);
        let agg = self.attention.forward(tape, messages, states, &segments)?;
        Ok(tape.add(feats, agg.messages))
    }
}

/// Residual block plus linear layer over `[h || one_hot(k)]`, emitting
/// `2 T_fut` coordinates relative to the agent's present position.
#[derive(Debug, Clone)]
pub struct TrajectoryHead {
    pub block: ResidualBlock,
    pub out: Dense,
    pub modes: usize,
    pub t_fut: usize,
}

impl TrajectoryHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        modes: usize,
        t_fut: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            block: ResidualBlock::new(store, &format!("{name}.res"), hidden + modes, hidden, rng)?,
            out: Dense::new(store, &format!("{name}.out"), hidden, 2 * t_fut, rng)?,
            modes,
            t_fut,
        })
    }

    /// Decodes rows of `features` (one per entry of `picks`) for the given
    /// modality indices.
    pub fn decode_rows(&self, tape: &mut Tape, picks: &[(Var, usize)], modes: &[usize]) -> Result<Var> {
        let h = tape.stack_rows(picks);
        let oh = tape.constant(one_hot(modes, self.modes));
        let x = tape.concat_cols(&[h, oh]);
        let y = self.block.forward(tape, x)?;
        self.out.forward(tape, y)
    }

    /// All `modes x agents` rows, modality-major (`row = k * N + n`).
    pub fn decode_all(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let n = tape.shape(features).0;
        let picks: Vec<(Var, usize)> = (0..self.modes).flat_map(|_| (0..n).map(move |i| (features, i))).collect();
        let modes: Vec<usize> = (0..self.modes).flat_map(|k| std::iter::repeat_n(k, n)).collect();
        if picks.is_empty() {
            return Ok(tape.constant(Tensor2::zeros(0, 2 * self.t_fut)));
        }
        self.decode_rows(tape, &picks, &modes)
    }
}

/// Auxiliary decoder of `K_prop` joint proposals.
#[derive(Debug, Clone)]
pub struct ProposalDecoder {
    pub head: TrajectoryHead,
}

impl ProposalDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        k_prop: usize,
        t_fut: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            head: TrajectoryHead::new(store, name, hidden, k_prop, t_fut, rng)?,
        })
    }

    /// `K_prop * N` rows of relative coordinates, modality-major.
    pub fn decode(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.head.decode_all(tape, features)
    }
}
