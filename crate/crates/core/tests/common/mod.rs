#![allow(dead_code)]

use dagtraj_core::model::{ModelKind, ModelSpec};
use dagtraj_core::{AgentState, AgentTrack, AgentType, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Agents on gently accelerating straight paths with consistent velocities.
pub fn random_scene(seed: u64, n: usize, t_obs: usize, t_fut: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.1;
    let agents = (0..n)
        .map(|id| {
            let p0 = [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)];
            let heading: f64 = rng.gen_range(-3.1..3.1);
            let speed = rng.gen_range(2.0..12.0);
            let accel = rng.gen_range(-1.0..1.0);
            let state = |k: usize| {
                let t = k as f64 * dt;
                let s = speed * t + 0.5 * accel * t * t;
                let v = speed + accel * t;
                let (sn, cs) = heading.sin_cos();
                AgentState::new([p0[0] + s * cs, p0[1] + s * sn], [v * cs, v * sn], heading)
            };
            let agent_type = AgentType::ALL[rng.gen_range(0..AgentType::ALL.len())];
            let (length, width) = agent_type.default_footprint();
            AgentTrack {
                agent_id: id,
                agent_type,
                length,
                width,
                past: (0..t_obs).map(state).collect(),
                future: Some((t_obs..t_obs + t_fut).map(state).collect()),
                evaluate: true,
            }
        })
        .collect();
    Scene {
        scene_id: format!("random-{seed}"),
        agents,
        t_obs,
        t_fut,
        dt,
    }
}

pub fn tiny_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        hidden: 5,
        gru_hidden: 4,
        type_embed: 3,
        t_fut: 4,
        k: 2,
        k_prop: 3,
    }
}
