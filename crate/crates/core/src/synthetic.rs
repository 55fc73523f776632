//! Seeded synthetic driving scenes whose sparse interaction graph is known
//! by construction.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{build_ground_truth_graph, Heuristic, DEFAULT_EPS_I};
use crate::scene::{AgentState, AgentTrack, AgentType, RigidTransform, Scene, DEFAULT_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Two agents meet at a junction; the later one adapts to arrive a
    /// moment after the first has passed. One edge per pair.
    CrossingPassYield,
    /// A single-lane convoy where each follower repeats its leader's
    /// acceleration after a delay. A path graph.
    LeaderFollowerChain,
    /// A ramp agent merges ahead of a main-lane agent, which adapts.
    Merge,
    /// Parallel lanes without conflicts. No edges.
    NonInteractive,
    /// Two dense convoys crossing each other. Not verified against an
    /// intended graph.
    Congested,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub position: f64,
    pub velocity: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            position: 0.01,
            velocity: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Scene `i` uses `kinds[i % kinds.len()]`.
    pub kinds: Vec<ScenarioKind>,
    /// Inclusive range of participating agents (chain length, twice the
    /// number of crossings or merges, lanes, or convoy total).
    pub agents: [usize; 2],
    /// Inclusive range of extra non-interacting agents.
    pub distractors: [usize; 2],
    pub noise: NoiseScales,
    pub seed: u64,
    pub t_obs: usize,
    pub t_fut: usize,
    pub dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kinds: vec![ScenarioKind::CrossingPassYield, ScenarioKind::LeaderFollowerChain],
            agents: [2, 4],
            distractors: [0, 0],
            noise: NoiseScales::default(),
            seed: 0,
            t_obs: 10,
            t_fut: 30,
            dt: DEFAULT_DT,
        }
    }
}

impl SyntheticSpec {
    pub fn single(kind: ScenarioKind, agents: [usize; 2], seed: u64) -> Self {
        Self {
            kinds: vec![kind],
            agents,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.kinds.is_empty() {
            return fail("at least one scenario kind is required");
        }
        if self.agents[0] < 1 || self.agents[0] > self.agents[1] {
            return fail("agent count range must satisfy 1 <= min <= max");
        }
        if self.distractors[0] > self.distractors[1] {
            return fail("distractor range must satisfy min <= max");
        }
        if !(self.noise.position >= 0.0 && self.noise.velocity >= 0.0) {
            return fail("noise scales must be non-negative");
        }
        if self.t_obs < 2 || self.t_fut < 10 {
            return fail("need at least 2 observed and 10 future steps");
        }
        if !(self.dt > 0.0) {
            return fail("dt must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Straight or polyline path with a piecewise-constant acceleration
/// profile. Times are relative to the present step.
#[derive(Debug, Clone)]
struct Motion {
    path: Vec<[f64; 2]>,
    /// Arc position at the present step.
    s0: f64,
    v0: f64,
    /// `(start time, acceleration)`, ascending; zero before the first.
    accel: Vec<(f64, f64)>,
}

impl Motion {
    fn straight(through: [f64; 2], heading: f64, s_present: f64, v0: f64) -> Self {
        let d = [heading.cos(), heading.sin()];
        Self {
            path: vec![
                [through[0] - 1000.0 * d[0], through[1] - 1000.0 * d[1]],
                [through[0] + 1000.0 * d[0], through[1] + 1000.0 * d[1]],
            ],
            s0: 1000.0 + s_present,
            v0,
            accel: Vec::new(),
        }
    }

    /// `(arc position, speed)` at time `tau`; speed never drops below zero.
    fn kinematics(&self, tau: f64) -> (f64, f64) {
        if tau <= 0.0 {
            return (self.s0 + self.v0 * tau, self.v0);
        }
        let (mut s, mut v, mut t) = (self.s0, self.v0, 0.0);
        let mut a = 0.0;
        let mut i = 0;
        while t < tau {
            while i < self.accel.len() && self.accel[i].0 <= t {
                a = self.accel[i].1;
                i += 1;
            }
            let next = self.accel.get(i).map_or(tau, |seg| seg.0.min(tau));
            let mut h = next - t;
            if a < 0.0 && v + a * h < 0.0 {
                h = -v / a;
                s += v * h + 0.5 * a * h * h;
                v = 0.0;
                t = next;
                continue;
            }
            s += v * h + 0.5 * a * h * h;
            v += a * h;
            t = next;
        }
        (s, v)
    }

    fn pose(&self, s: f64) -> ([f64; 2], f64) {
        let mut rest = s;
        let last = self.path.len() - 2;
        for i in 0..=last {
            let (a, b) = (self.path[i], self.path[i + 1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if rest <= len || i == last {
                let h = (b[1] - a[1]).atan2(b[0] - a[0]);
                return ([a[0] + rest * h.cos(), a[1] + rest * h.sin()], h);
            }
            rest -= len;
        }
        unreachable!("path has at least one segment")
    }

    fn state(&self, tau: f64) -> AgentState {
        let (s, v) = self.kinematics(tau);
        let (p, h) = self.pose(s);
        AgentState::new(p, [v * h.cos(), v * h.sin()], h)
    }

    /// First time at which the arc position reaches `target`.
    fn arrival(&self, target: f64, horizon: f64) -> Option<f64> {
        let steps = (horizon / 1e-3).ceil() as usize;
        (0..=steps).map(|i| i as f64 * 1e-3).find(|&t| self.kinematics(t).0 >= target)
    }
}

struct Layout {
    motions: Vec<Motion>,
    edges: Vec<(usize, usize)>,
    verify: bool,
}

fn horizon(spec: &SyntheticSpec) -> f64 {
    spec.t_fut as f64 * spec.dt
}

fn crossing(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, center: [f64; 2], base: usize, out: &mut Layout) -> bool {
    let th = horizon(spec);
    let heading_p = rng.gen_range(-PI..PI);
    let turn = rng.gen_range(1.1..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (vp, vy) = (rng.gen_range(8.0..12.0), rng.gen_range(8.0..12.0));
    let tau_p0 = rng.gen_range(0.6..1.2);
    let mut passer = Motion::straight(center, heading_p, -vp * tau_p0, vp);
    passer.accel.push((0.0, rng.gen_range(-1.5..2.0)));
    let Some(tau_p) = passer.arrival(passer.s0 + vp * tau_p0, th) else {
        return false;
    };
    let gap = rng.gen_range(0.8..1.4);
    let tau_y = tau_p + gap;
    let dist_y = vy * (tau_p0 + rng.gen_range(0.3..1.0));
    let ay = 2.0 * (dist_y - vy * tau_y) / (tau_y * tau_y);
    if tau_y > th - 0.3 || vy + ay * th < 0.5 {
        return false;
    }
    let mut yielder = Motion::straight(center, heading_p + turn, -dist_y, vy);
    yielder.accel.push((0.0, ay));
    out.motions.push(passer);
    out.motions.push(yielder);
    out.edges.push((base, base + 1));
    true
}

fn merge(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, point: [f64; 2], base: usize, out: &mut Layout) -> bool {
    let th = horizon(spec);
    let heading = rng.gen_range(-PI..PI);
    let angle = rng.gen_range(0.26..0.44) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (vm, vn) = (rng.gen_range(8.0..12.0), rng.gen_range(9.0..13.0));
    let tau_m0 = rng.gen_range(0.5..1.1);
    let ramp_h = heading + angle;
    let start = [point[0] - 200.0 * ramp_h.cos(), point[1] - 200.0 * ramp_h.sin()];
    let end = [point[0] + 1000.0 * heading.cos(), point[1] + 1000.0 * heading.sin()];
    let mut merger = Motion {
        path: vec![start, point, end],
        s0: 200.0 - vm * tau_m0,
        v0: vm,
        accel: vec![(0.0, rng.gen_range(-1.0..1.5))],
    };
    let Some(tau_m) = merger.arrival(200.0, th) else {
        return false;
    };
    merger.accel.push((tau_m, 0.0));
    let tau_n = tau_m + rng.gen_range(1.0..1.6);
    let dist_n = vn * (tau_m0 + rng.gen_range(0.3..0.9));
    let an = 2.0 * (dist_n - vn * tau_n) / (tau_n * tau_n);
    if tau_n > th - 0.3 || vn + an * th < 0.5 {
        return false;
    }
    let mut main = Motion::straight(point, heading, -dist_n, vn);
    main.accel.push((0.0, an));
    out.motions.push(merger);
    out.motions.push(main);
    out.edges.push((base, base + 1));
    true
}

fn convoy(rng: &mut ChaCha8Rng, origin: [f64; 2], heading: f64, n: usize, headway: (f64, f64), base: usize, out: &mut Layout, edges: bool) {
    let v = rng.gen_range(8.0..12.0);
    let a = rng.gen_range(-2.0..1.5);
    let delay = rng.gen_range(0.3..0.6);
    let mut s = 0.0;
    for i in 0..n {
        if i > 0 {
            s -= v * rng.gen_range(headway.0..headway.1);
        }
        let mut m = Motion::straight(origin, heading, s, v);
        m.accel.push((i as f64 * delay, a));
        out.motions.push(m);
        if edges && i > 0 {
            out.edges.push((base + i - 1, base + i));
        }
    }
}

fn layout(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, kind: ScenarioKind) -> Option<Layout> {
    let n = rng.gen_range(spec.agents[0]..=spec.agents[1]);
    let mut out = Layout {
        motions: Vec::new(),
        edges: Vec::new(),
        verify: true,
    };
    match kind {
        ScenarioKind::CrossingPassYield | ScenarioKind::Merge => {
            for j in 0..(n / 2).max(1) {
                let at = [150.0 * j as f64, 150.0 * j as f64];
                let base = out.motions.len();
                let ok = if kind == ScenarioKind::Merge {
                    merge(rng, spec, at, base, &mut out)
                } else {
                    crossing(rng, spec, at, base, &mut out)
                };
                if !ok {
                    return None;
                }
            }
        }
        ScenarioKind::LeaderFollowerChain => {
            let heading = rng.gen_range(-PI..PI);
            convoy(rng, [0.0, 0.0], heading, n, (1.5, 2.0), 0, &mut out, true);
        }
        ScenarioKind::NonInteractive => {
            let heading = rng.gen_range(-PI..PI);
            let normal = [-heading.sin(), heading.cos()];
            for i in 0..n {
                let off = 7.0 * i as f64;
                let at = [normal[0] * off, normal[1] * off];
                out.motions
                    .push(Motion::straight(at, heading, rng.gen_range(-20.0..20.0), rng.gen_range(4.0..14.0)));
            }
        }
        ScenarioKind::Congested => {
            let heading = rng.gen_range(-PI..PI);
            let first = n / 2;
            convoy(rng, [0.0, 0.0], heading, first, (0.9, 1.4), 0, &mut out, false);
            convoy(rng, [0.0, 0.0], heading + PI / 2.0, n - first, (0.9, 1.4), first, &mut out, false);
            // Offset the second convoy so the crossing happens inside the horizon.
            let shift = rng.gen_range(0.5..1.5) * 10.0;
            for m in &mut out.motions[first..] {
                m.s0 -= shift;
            }
            out.verify = false;
        }
    }
    Some(out)
}

fn add_distractors(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, out: &mut Layout) {
    let count = rng.gen_range(spec.distractors[0]..=spec.distractors[1]);
    if count == 0 {
        return;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let steps = spec.t_obs + spec.t_fut;
    for m in &out.motions {
        for k in 0..steps {
            let p = m.state((k as f64 - (spec.t_obs - 1) as f64) * spec.dt).position;
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
    }
    let dir = if rng.gen_bool(0.5) { 0.0 } else { PI };
    for i in 0..count {
        let y = hi[1] + 15.0 + 8.0 * i as f64;
        let x = rng.gen_range(lo[0]..=hi[0].max(lo[0] + 1.0));
        out.motions.push(Motion::straight([x, y], dir, 0.0, rng.gen_range(4.0..12.0)));
    }
}

fn realize(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, kind: ScenarioKind, index: usize) -> Result<Option<Scene>> {
    let Some(mut lay) = layout(rng, spec, kind) else {
        return Ok(None);
    };
    add_distractors(rng, spec, &mut lay);
    let pos_noise = Normal::new(0.0, spec.noise.position).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let vel_noise = Normal::new(0.0, spec.noise.velocity).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let transform = RigidTransform {
        origin: [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)],
        theta: rng.gen_range(-PI..PI),
    };
    let mut perm: Vec<usize> = (0..lay.motions.len()).collect();
    perm.shuffle(rng);
    let (length, width) = AgentType::Vehicle.default_footprint();
    let mut tracks: Vec<Option<AgentTrack>> = vec![None; perm.len()];
    for (core, motion) in lay.motions.iter().enumerate() {
        let states: Vec<AgentState> = (0..spec.t_obs + spec.t_fut)
            .map(|k| {
                let mut s = motion.state((k as f64 - (spec.t_obs - 1) as f64) * spec.dt);
                for c in 0..2 {
                    s.position[c] += pos_noise.sample(rng);
                    s.velocity[c] += vel_noise.sample(rng);
                }
                s
            })
            .collect();
        let id = perm[core];
        tracks[id] = Some(AgentTrack {
            agent_id: id,
            agent_type: AgentType::Vehicle,
            length,
            width,
            past: states[..spec.t_obs].to_vec(),
            future: Some(states[spec.t_obs..].to_vec()),
            evaluate: true,
        });
    }
    let local = Scene {
        scene_id: format!("{}-{}-{index:05}", kind_name(kind), spec.seed),
        agents: tracks.into_iter().map(|t| t.expect("every slot filled")).collect(),
        t_obs: spec.t_obs,
        t_fut: spec.t_fut,
        dt: spec.dt,
    };
    let scene = transform.invert_scene(&local);
    scene.validate()?;
    if lay.verify {
        let graph = build_ground_truth_graph(&scene, Heuristic::Sparse, DEFAULT_EPS_I)?;
        let got: BTreeSet<(usize, usize)> = graph.directed_edges().into_iter().collect();
        let want: BTreeSet<(usize, usize)> = lay.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        if got != want {
            return Ok(None);
        }
    }
    Ok(Some(scene))
}

fn kind_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::CrossingPassYield => "crossing",
        ScenarioKind::LeaderFollowerChain => "chain",
        ScenarioKind::Merge => "merge",
        ScenarioKind::NonInteractive => "parallel",
        ScenarioKind::Congested => "congested",
    }
}

const MAX_ATTEMPTS: usize = 500;

/// Scene `index` of the corpus, independent of how many others are drawn.
pub fn generate_scene(spec: &SyntheticSpec, index: usize) -> Result<Scene> {
    spec.validate()?;
    let kind = spec.kinds[index % spec.kinds.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = realize(&mut rng, spec, kind, index)? {
            return Ok(scene);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not realize a {kind:?} scene after {MAX_ATTEMPTS} attempts"
    )))
}

pub fn generate_corpus(spec: &SyntheticSpec, count: usize) -> Result<Vec<Scene>> {
    (0..count).map(|i| generate_scene(spec, i)).collect()
}
