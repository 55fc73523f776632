//! Scene representation, history preprocessing, frame normalization and the
//! JSON scene file format.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling interval (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Bicyclist,
    Motorcyclist,
    Bus,
}

impl AgentType {
    pub const ALL: [AgentType; 5] = [
        AgentType::Vehicle,
        AgentType::Pedestrian,
        AgentType::Bicyclist,
        AgentType::Motorcyclist,
        AgentType::Bus,
    ];

    /// Default (length, width) in meters when a track carries no footprint.
    pub fn default_footprint(self) -> (f64, f64) {
        match self {
            AgentType::Vehicle => (4.0, 2.0),
            AgentType::Pedestrian => (0.7, 0.7),
            AgentType::Bicyclist => (2.0, 0.7),
            AgentType::Motorcyclist => (2.0, 0.7),
            AgentType::Bus => (12.5, 2.5),
        }
    }

    /// Dense index used for learned type embeddings.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = angle - two_pi * ((angle + PI) / two_pi).floor();
    if wrapped >= PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub yaw: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn new(position: [f64; 2], velocity: [f64; 2], yaw: f64) -> Self {
        Self {
            position,
            velocity,
            yaw: wrap_angle(yaw),
            valid: true,
        }
    }

    pub fn invalid() -> Self {
        Self {
            position: [0.0; 2],
            velocity: [0.0; 2],
            yaw: 0.0,
            valid: false,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: usize,
    pub agent_type: AgentType,
    pub length: f64,
    pub width: f64,
    pub past: Vec<AgentState>,
    pub future: Option<Vec<AgentState>>,
    pub evaluate: bool,
}

impl AgentTrack {
    /// State at the present timestep (last observed).
    pub fn present(&self) -> &AgentState {
        self.past.last().expect("track has at least one past state")
    }

    pub fn future_or_err(&self) -> Result<&[AgentState]> {
        self.future.as_deref().ok_or(Error::MissingFuture(self.agent_id))
    }

    /// An agent counts for evaluation when flagged and observed at both
    /// the present and the final future timestep.
    pub fn is_evaluated(&self) -> bool {
        self.evaluate && self.present().valid && self.future.as_ref().and_then(|f| f.last()).is_some_and(|s| s.valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub agents: Vec<AgentTrack>,
    pub t_obs: usize,
    pub t_fut: usize,
    pub dt: f64,
}

impl Scene {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 {
            return Err(Error::InvalidScene("T_obs must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidScene(format!("dt must be positive, got {}", self.dt)));
        }
        for (idx, agent) in self.agents.iter().enumerate() {
            if agent.agent_id != idx {
                return Err(Error::InvalidScene(format!(
                    "agent ids must be dense and ordered; position {idx} holds id {}",
                    agent.agent_id
                )));
            }
            if !(agent.width > 0.0) || agent.length < agent.width {
                return Err(Error::InvalidScene(format!(
                    "agent {idx}: need length >= width > 0, got {}x{}",
                    agent.length, agent.width
                )));
            }
            if agent.past.len() != self.t_obs {
                return Err(Error::InvalidScene(format!(
                    "agent {idx}: expected {} past states, got {}",
                    self.t_obs,
                    agent.past.len()
                )));
            }
            if let Some(future) = &agent.future {
                if future.len() != self.t_fut {
                    return Err(Error::InvalidScene(format!(
                        "agent {idx}: expected {} future states, got {}",
                        self.t_fut,
                        future.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of agents that take part in evaluation and interaction labeling.
    pub fn evaluated_agents(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.is_evaluated()).map(|a| a.agent_id).collect()
    }

    pub fn present_positions(&self) -> Vec<[f64; 2]> {
        self.agents.iter().map(|a| a.present().position).collect()
    }

    /// Ground-truth future coordinates per agent, `None` when any future
    /// state is missing or invalid.
    pub fn future_coords(&self) -> Vec<Option<Vec<[f64; 2]>>> {
        self.agents
            .iter()
            .map(|a| {
                let fut = a.future.as_ref()?;
                if fut.iter().all(|s| s.valid) {
                    Some(fut.iter().map(|s| s.position).collect())
                } else {
                    None
                }
            })
            .collect()
    }
}

/// One preprocessed history step: `[displacement, velocity, yaw]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryStep {
    pub displacement: [f64; 2],
    pub velocity: [f64; 2],
    pub yaw: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedHistory {
    pub agents: Vec<Vec<HistoryStep>>,
}

/// Converts past positions into per-step displacements. The first step (and
/// any step whose own or previous state is invalid) gets a zero displacement.
pub fn preprocess(scene: &Scene) -> PreprocessedHistory {
    let agents = scene
        .agents
        .iter()
        .map(|agent| {
            agent
                .past
                .iter()
                .enumerate()
                .map(|(t, state)| {
                    if !state.valid {
                        return HistoryStep {
                            displacement: [0.0; 2],
                            velocity: [0.0; 2],
                            yaw: 0.0,
                            valid: false,
                        };
                    }
                    let displacement = match t.checked_sub(1).map(|p| &agent.past[p]) {
                        Some(prev) if prev.valid => [state.position[0] - prev.position[0], state.position[1] - prev.position[1]],
                        _ => [0.0; 2],
                    };
                    HistoryStep {
                        displacement,
                        velocity: state.velocity,
                        yaw: state.yaw,
                        valid: true,
                    }
                })
                .collect()
        })
        .collect();
    PreprocessedHistory { agents }
}

/// Rigid world-to-local transform: `local = R(-theta) * (world - origin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub origin: [f64; 2],
    pub theta: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            origin: [0.0; 2],
            theta: 0.0,
        }
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        self.apply_vector([p[0] - self.origin[0], p[1] - self.origin[1]])
    }

    pub fn apply_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    pub fn apply_yaw(&self, yaw: f64) -> f64 {
        wrap_angle(yaw - self.theta)
    }

    pub fn invert_point(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.invert_vector(p);
        [v[0] + self.origin[0], v[1] + self.origin[1]]
    }

    pub fn invert_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn invert_yaw(&self, yaw: f64) -> f64 {
        wrap_angle(yaw + self.theta)
    }

    fn map_state(&self, state: &AgentState, inverse: bool) -> AgentState {
        if !state.valid {
            return *state;
        }
        if inverse {
            AgentState {
                position: self.invert_point(state.position),
                velocity: self.invert_vector(state.velocity),
                yaw: self.invert_yaw(state.yaw),
                valid: true,
            }
        } else {
            AgentState {
                position: self.apply_point(state.position),
                velocity: self.apply_vector(state.velocity),
                yaw: self.apply_yaw(state.yaw),
                valid: true,
            }
        }
    }

    fn map_scene(&self, scene: &Scene, inverse: bool) -> Scene {
        let mut out = scene.clone();
        for agent in &mut out.agents {
            for s in agent.past.iter_mut() {
                *s = self.map_state(s, inverse);
            }
            if let Some(fut) = agent.future.as_mut() {
                for s in fut.iter_mut() {
                    *s = self.map_state(s, inverse);
                }
            }
        }
        out
    }

    pub fn apply_scene(&self, scene: &Scene) -> Scene {
        self.map_scene(scene, false)
    }

    pub fn invert_scene(&self, scene: &Scene) -> Scene {
        self.map_scene(scene, true)
    }
}

/// Centers the scene on `anchor`'s present position and rotates it so the
/// anchor's present heading is zero.
pub fn normalize(scene: &Scene, anchor: usize) -> Result<(Scene, RigidTransform)> {
    let agent = scene.agents.get(anchor).ok_or(Error::UnusableAnchor(anchor))?;
    let present = agent.present();
    if !present.valid {
        return Err(Error::UnusableAnchor(anchor));
    }
    let transform = RigidTransform {
        origin: present.position,
        theta: present.yaw,
    };
    Ok((transform.apply_scene(scene), transform))
}

/// Agent whose present position is closest to the centroid of all valid
/// present positions; ties go to the lowest id.
pub fn pick_eval_anchor(scene: &Scene) -> Result<usize> {
    let valid: Vec<(usize, [f64; 2])> = scene
        .agents
        .iter()
        .filter(|a| a.present().valid)
        .map(|a| (a.agent_id, a.present().position))
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidAgents);
    }
    let n = valid.len() as f64;
    let cx = valid.iter().map(|(_, p)| p[0]).sum::<f64>() / n;
    let cy = valid.iter().map(|(_, p)| p[1]).sum::<f64>() / n;
    let mut best = valid[0].0;
    let mut best_dist = f64::INFINITY;
    for &(id, p) in &valid {
        let d = (p[0] - cx).hypot(p[1] - cy);
        if d < best_dist {
            best = id;
            best_dist = d;
        }
    }
    Ok(best)
}

/// Uniformly random agent with a valid present state.
pub fn pick_random_anchor<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Result<usize> {
    let valid: Vec<usize> = scene.agents.iter().filter(|a| a.present().valid).map(|a| a.agent_id).collect();
    if valid.is_empty() {
        return Err(Error::NoValidAgents);
    }
    Ok(valid[rng.gen_range(0..valid.len())])
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    t: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    yaw: f64,
    valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentRecord {
    agent_id: usize,
    agent_type: AgentType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    states: Vec<StateRecord>,
    #[serde(default = "default_true")]
    evaluate: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneRecord {
    scene_id: String,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(rename = "T_obs")]
    t_obs: usize,
    #[serde(rename = "T_fut")]
    t_fut: usize,
    agents: Vec<AgentRecord>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn state_record(t: usize, s: &AgentState) -> StateRecord {
    StateRecord {
        t,
        x: s.position[0],
        y: s.position[1],
        vx: s.velocity[0],
        vy: s.velocity[1],
        yaw: s.yaw,
        valid: s.valid,
    }
}

impl From<&Scene> for SceneRecord {
    fn from(scene: &Scene) -> Self {
        let agents = scene
            .agents
            .iter()
            .map(|a| {
                let mut states: Vec<StateRecord> = a.past.iter().enumerate().map(|(t, s)| state_record(t, s)).collect();
                if let Some(fut) = &a.future {
                    states.extend(fut.iter().enumerate().map(|(t, s)| state_record(scene.t_obs + t, s)));
                }
                AgentRecord {
                    agent_id: a.agent_id,
                    agent_type: a.agent_type,
                    length: Some(a.length),
                    width: Some(a.width),
                    states,
                    evaluate: a.evaluate,
                }
            })
            .collect();
        SceneRecord {
            scene_id: scene.scene_id.clone(),
            dt: scene.dt,
            t_obs: scene.t_obs,
            t_fut: scene.t_fut,
            agents,
        }
    }
}

impl TryFrom<SceneRecord> for Scene {
    type Error = Error;

    fn try_from(rec: SceneRecord) -> Result<Self> {
        let horizon = rec.t_obs + rec.t_fut;
        let mut agents = Vec::with_capacity(rec.agents.len());
        let mut records = rec.agents;
        records.sort_by_key(|a| a.agent_id);
        for a in records {
            let (dl, dw) = a.agent_type.default_footprint();
            let mut slots: Vec<Option<AgentState>> = vec![None; horizon];
            for s in &a.states {
                if s.t >= horizon {
                    return Err(Error::InvalidScene(format!(
                        "agent {}: timestep {} outside 0..{horizon}",
                        a.agent_id, s.t
                    )));
                }
                let state = AgentState {
                    position: [s.x, s.y],
                    velocity: [s.vx, s.vy],
                    yaw: s.yaw,
                    valid: s.valid,
                };
                if slots[s.t].replace(state).is_some() {
                    return Err(Error::InvalidScene(format!("agent {}: duplicate timestep {}", a.agent_id, s.t)));
                }
            }
            let has_future = slots[rec.t_obs..].iter().any(Option::is_some);
            let fill = |s: Option<AgentState>| s.unwrap_or_else(AgentState::invalid);
            let past = slots[..rec.t_obs].iter().copied().map(fill).collect();
            let future = has_future.then(|| slots[rec.t_obs..].iter().copied().map(fill).collect());
            agents.push(AgentTrack {
                agent_id: a.agent_id,
                agent_type: a.agent_type,
                length: a.length.unwrap_or(dl),
                width: a.width.unwrap_or(dw),
                past,
                future,
                evaluate: a.evaluate,
            });
        }
        let scene = Scene {
            scene_id: rec.scene_id,
            agents,
            t_obs: rec.t_obs,
            t_fut: rec.t_fut,
            dt: rec.dt,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// JSON formatter that writes every float with at least nine significant
/// digits while keeping the shortest round-trip representation.
#[derive(Debug, Default, Clone, Copy)]
pub struct PaddedFloatFormatter;

pub(crate) fn format_padded(value: f64) -> String {
    let mut s = format!("{value}");
    let significant = s.chars().filter(char::is_ascii_digit).skip_while(|&c| c == '0').count().max(1);
    if significant < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        // Leading zeros after the point do not count; a value of exactly zero
        // still receives nine digits.
        let pad = if value == 0.0 { 8 } else { 9 - significant };
        s.extend(std::iter::repeat_n('0', pad));
    }
    s
}

impl serde_json::ser::Formatter for PaddedFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_padded(value).as_bytes())
    }
}

/// Serializes any value with [`PaddedFloatFormatter`].
pub fn to_json_padded<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PaddedFloatFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

impl Scene {
    pub fn to_json(&self) -> Result<String> {
        to_json_padded(&SceneRecord::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: SceneRecord = serde_json::from_str(text)?;
        Scene::try_from(rec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Loads every `*.json` scene in a directory, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scene::load(p)).collect()
}
