//! Winner-takes-all regression, proposal and interaction losses.

use crate::dag::Dag;
use crate::decoder::TrajectoryBundle;
use crate::error::{Error, Result};
use crate::labeling::{build_ground_truth_graph, EdgeLabel, InteractionGraph};
use crate::model::Model;
use crate::numerics::tape::{smooth_l1_elem, Tape, Var};
use crate::numerics::tensor::Tensor2;
use crate::predictor::evaluated_pairs;
use crate::scene::Scene;
use crate::train::config::TrainConfig;

/// Regression targets of a normalized scene as offsets from each agent's
/// present position.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTargets {
    /// `N x 2 T_fut`, zero where no valid target exists.
    pub offsets: Tensor2,
    /// 1 for coordinates of valid future steps of evaluated agents.
    pub mask: Tensor2,
    /// Number of valid `(agent, step)` pairs.
    pub count: usize,
    /// Complete futures of evaluated agents, for teacher forcing.
    pub teacher: Vec<Option<Vec<f64>>>,
}

pub fn scene_targets(scene: &Scene) -> SceneTargets {
    let (n, t) = (scene.n_agents(), scene.t_fut);
    let mut offsets = Tensor2::zeros(n, 2 * t);
    let mut mask = Tensor2::zeros(n, 2 * t);
    let mut count = 0;
    let mut teacher = vec![None; n];
    for a in scene.evaluated_agents() {
        let track = &scene.agents[a];
        let p = track.present().position;
        let fut = track.future.as_deref().expect("evaluated agents have futures");
        for (s, st) in fut.iter().enumerate().filter(|(_, st)| st.valid) {
            offsets.set(a, 2 * s, st.position[0] - p[0]);
            offsets.set(a, 2 * s + 1, st.position[1] - p[1]);
            mask.set(a, 2 * s, 1.0);
            mask.set(a, 2 * s + 1, 1.0);
            count += 1;
        }
        if fut.iter().all(|s| s.valid) {
            teacher[a] = Some(offsets.row(a).to_vec());
        }
    }
    SceneTargets {
        offsets,
        mask,
        count,
        teacher,
    }
}

fn tile(t: &Tensor2, k: usize) -> Tensor2 {
    let mut data = Vec::with_capacity(t.data.len() * k);
    for _ in 0..k {
        data.extend_from_slice(&t.data);
    }
    Tensor2 {
        rows: t.rows * k,
        cols: t.cols,
        data,
    }
}

/// `min_k (1 / count) sum smooth_l1(pred_k - truth)` over masked coordinates
/// of modality-major offset rows.
pub fn wta_loss(tape: &mut Tape, pred: Var, k: usize, targets: &SceneTargets) -> Result<Var> {
    let n = targets.offsets.rows;
    let expected = (k * n, targets.offsets.cols);
    if tape.shape(pred) != expected {
        return Err(crate::error::shape_mismatch(
            "wta prediction",
            format!("{expected:?}"),
            format!("{:?}", tape.shape(pred)),
        ));
    }
    if targets.count == 0 || n == 0 {
        return Ok(tape.constant(Tensor2::zeros(1, 1)));
    }
    let truth = tape.constant(tile(&targets.offsets, k));
    let mask = tape.constant(tile(&targets.mask, k));
    let diff = tape.sub(pred, truth);
    let masked = tape.mul(diff, mask);
    let per = tape.smooth_l1(masked);
    let per = tape.block_sum(per, n);
    let per = tape.scale(per, 1.0 / targets.count as f64);
    Ok(tape.min_rows(per))
}

/// Plain evaluation of the joint winner-takes-all loss of a bundle against
/// a scene's futures, in the bundle's coordinates.
pub fn loss_joint_wta(bundle: &TrajectoryBundle, scene: &Scene) -> Result<f64> {
    let agents = scene.evaluated_agents();
    let mut best = f64::INFINITY;
    let mut count = 0;
    for k in 0..bundle.k {
        let mut total = 0.0;
        count = 0;
        for &a in &agents {
            let pred = bundle
                .trajectory(k, a)
                .ok_or_else(|| Error::AgentMismatch(format!("bundle has no trajectory for agent {a}")))?;
            let fut = scene.agents[a].future.as_deref().expect("evaluated agents have futures");
            if pred.len() != fut.len() {
                return Err(Error::AgentMismatch(format!(
                    "agent {a} has {} predicted steps, {} true",
                    pred.len(),
                    fut.len()
                )));
            }
            for (p, s) in pred.iter().zip(fut).filter(|(_, s)| s.valid) {
                total += smooth_l1_elem(p[0] - s.position[0]) + smooth_l1_elem(p[1] - s.position[1]);
                count += 1;
            }
        }
        best = best.min(total);
    }
    Ok(if count == 0 || bundle.k == 0 { 0.0 } else { best / count as f64 })
}

/// Canonical evaluated pairs with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTargets {
    pub pairs: Vec<(usize, usize)>,
    pub classes: Vec<usize>,
}

pub fn pair_targets(scene: &Scene, graph: &InteractionGraph) -> PairTargets {
    let pairs = evaluated_pairs(scene);
    let classes = pairs
        .iter()
        .map(|p| graph.labels.get(p).copied().unwrap_or(EdgeLabel::NoInteraction).class_index())
        .collect();
    PairTargets { pairs, classes }
}

pub fn ground_truth_pair_targets(scene: &Scene, cfg: &TrainConfig) -> Result<PairTargets> {
    Ok(pair_targets(scene, &build_ground_truth_graph(scene, cfg.heuristic, cfg.eps_i)?))
}

/// Loss value and its components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub interaction: f64,
    pub regression: f64,
    pub proposal: f64,
}

fn proposal_term(tape: &mut Tape, model: &Model, feats: Var, targets: &SceneTargets, cfg: &TrainConfig) -> Result<Option<Var>> {
    if !cfg.proposal_loss {
        return Ok(None);
    }
    let props = model.proposal.decode(tape, feats)?;
    Ok(Some(wta_loss(tape, props, model.spec.k_prop, targets)?))
}

fn finish(tape: &mut Tape, main: Var, prop: Option<Var>, stage1: bool) -> (Var, LossParts) {
    let main_value = tape.value(main).data[0];
    let mut parts = LossParts::default();
    if stage1 {
        parts.interaction = main_value;
    } else {
        parts.regression = main_value;
    }
    let total = match prop {
        Some(p) => {
            parts.proposal = tape.value(p).data[0];
            tape.add(main, p)
        }
        None => main,
    };
    parts.total = tape.value(total).data[0];
    (total, parts)
}

/// `L_int + L_prop` on a normalized scene.
pub fn loss_stage1(tape: &mut Tape, model: &Model, scene: &Scene, pairs: &PairTargets, cfg: &TrainConfig) -> Result<(Var, LossParts)> {
    let targets = scene_targets(scene);
    let feats = model.features(tape, scene)?;
    let probs = model.edge_probabilities(tape, feats, scene, &pairs.pairs)?;
    let int = tape.focal(probs, &pairs.classes, cfg.gamma, cfg.alpha);
    let prop = proposal_term(tape, model, feats, &targets, cfg)?;
    Ok(finish(tape, int, prop, true))
}

/// `L_reg + L_prop` on a normalized scene decoded over `dag`.
pub fn loss_stage2(tape: &mut Tape, model: &Model, scene: &Scene, dag: &Dag, cfg: &TrainConfig) -> Result<(Var, LossParts)> {
    let targets = scene_targets(scene);
    let feats = model.features(tape, scene)?;
    let teacher = cfg.teacher_forcing.then_some(targets.teacher.as_slice());
    let decoded = model.decode(tape, feats, scene, dag, teacher)?;
    let reg = wta_loss(tape, decoded.offsets, model.spec.k, &targets)?;
    let prop = proposal_term(tape, model, feats, &targets, cfg)?;
    Ok(finish(tape, reg, prop, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::tests::constant_velocity_track;
    use crate::labeling::Heuristic;
    use crate::model::{ModelKind, ModelSpec};
    use crate::numerics::loss::focal_loss;
    use crate::scene::{normalize, AgentState};
    use proptest::prelude::*;

    fn one_step_scene() -> Scene {
        let mut t = constant_velocity_track(0, [0.0, 0.0], [0.0, 0.0], 2, 1);
        t.future = Some(vec![AgentState::new([0.0, 0.0], [0.0, 0.0], 0.0)]);
        Scene {
            scene_id: "w".into(),
            agents: vec![t],
            t_obs: 2,
            t_fut: 1,
            dt: 0.1,
        }
    }

    #[test]
    fn wta_two_mode_example() {
        let s = one_step_scene();
        let b = TrajectoryBundle {
            k: 2,
            agent_ids: vec![0],
            modes: vec![vec![vec![[0.5, 0.0]]], vec![vec![[2.0, 0.0]]]],
        };
        assert_eq!(loss_joint_wta(&b, &s).unwrap(), 0.125);
        let store = crate::numerics::params::ParamStore::new();
        let mut tape = Tape::new(&store);
        let pred = tape.constant(Tensor2::from_rows(&[vec![0.5, 0.0], vec![2.0, 0.0]]).unwrap());
        let l = wta_loss(&mut tape, pred, 2, &scene_targets(&s)).unwrap();
        assert_eq!(tape.value(l).data[0], 0.125);
    }

    fn random_scene(seed: u64, n: usize, t_fut: usize) -> Scene {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let agents = (0..n)
            .map(|i| {
                constant_velocity_track(
                    i,
                    [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)],
                    [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)],
                    4,
                    t_fut,
                )
            })
            .collect();
        Scene {
            scene_id: format!("r{seed}"),
            agents,
            t_obs: 4,
            t_fut,
            dt: 0.1,
        }
    }

    fn random_bundle(seed: u64, scene: &Scene, k: usize) -> TrajectoryBundle {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let modes = (0..k)
            .map(|_| {
                scene
                    .agents
                    .iter()
                    .map(|a| {
                        a.future
                            .as_ref()
                            .unwrap()
                            .iter()
                            .map(|s| [s.position[0] + rng.gen_range(-3.0..3.0), s.position[1] + rng.gen_range(-3.0..3.0)])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TrajectoryBundle {
            k,
            agent_ids: (0..scene.n_agents()).collect(),
            modes,
        }
    }

    proptest! {
        #[test]
        fn wta_matches_brute_force(seed in 0u64..1000, n in 1usize..4, k in 1usize..5) {
            let s = random_scene(seed, n, 4);
            let b = random_bundle(seed, &s, k);
            let brute = (0..k)
                .map(|m| {
                    let mut total = 0.0;
                    for a in 0..n {
                        for (p, st) in b.modes[m][a].iter().zip(s.agents[a].future.as_ref().unwrap()) {
                            total += smooth_l1_elem(p[0] - st.position[0]) + smooth_l1_elem(p[1] - st.position[1]);
                        }
                    }
                    total / (n * 4) as f64
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!((loss_joint_wta(&b, &s).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn appending_a_mode_never_increases_wta(seed in 0u64..1000, n in 1usize..4, k in 1usize..5) {
            let s = random_scene(seed, n, 4);
            let b = random_bundle(seed, &s, k + 1);
            prop_assert!(loss_joint_wta(&b, &s).unwrap() <= loss_joint_wta(&b.truncated(k), &s).unwrap());
        }
    }

    #[test]
    fn wta_is_zero_when_a_mode_is_exact() {
        let s = random_scene(3, 3, 4);
        let mut b = random_bundle(3, &s, 3);
        b.modes[1] = s
            .agents
            .iter()
            .map(|a| a.future.as_ref().unwrap().iter().map(|st| st.position).collect())
            .collect();
        assert_eq!(loss_joint_wta(&b, &s).unwrap(), 0.0);
    }

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            hidden: 8,
            gru_hidden: 6,
            type_embed: 4,
            t_fut: 4,
            k: 3,
            k_prop: 4,
        }
    }

    #[test]
    fn stage1_is_sum_of_components() {
        let cfg = TrainConfig::default();
        let (s, _) = normalize(&random_scene(11, 3, 4), 0).unwrap();
        let model = Model::build(&spec(ModelKind::GraphPredictor), 2).unwrap();
        let pairs = ground_truth_pair_targets(&s, &cfg).unwrap();
        let mut tape = Tape::new(&model.store);
        let (_, parts) = loss_stage1(&mut tape, &model, &s, &pairs, &cfg).unwrap();

        let mut tape2 = Tape::new(&model.store);
        let feats = model.features(&mut tape2, &s).unwrap();
        let probs = model.edge_probabilities(&mut tape2, feats, &s, &pairs.pairs).unwrap();
        let probs = tape2.value(probs).clone();
        let focal: f64 = pairs
            .classes
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                focal_loss(&[probs.get(r, 0), probs.get(r, 1), probs.get(r, 2)], c, cfg.gamma, &cfg.alpha)
                    .unwrap()
                    .value
            })
            .sum::<f64>()
            / pairs.pairs.len() as f64;
        let props = model.proposal.decode(&mut tape2, feats).unwrap();
        let bundle = TrajectoryBundle::from_offsets(
            tape2.value(props),
            4,
            &s.present_positions(),
            &crate::scene::RigidTransform::identity(),
        )
        .unwrap();
        let prop = loss_joint_wta(&bundle, &s).unwrap();
        assert!((parts.interaction - focal).abs() < 1e-12);
        assert!((parts.proposal - prop).abs() < 1e-12);
        assert_eq!(parts.total, parts.interaction + parts.proposal);

        let off = TrainConfig {
            proposal_loss: false,
            ..cfg.clone()
        };
        let mut tape3 = Tape::new(&model.store);
        let (_, only) = loss_stage1(&mut tape3, &model, &s, &pairs, &off).unwrap();
        assert_eq!(only.total, parts.interaction);
    }

    #[test]
    fn edgeless_stage2_equals_baseline() {
        for seed in 0..5 {
            let cfg = TrainConfig::default();
            let (s, _) = normalize(&random_scene(seed, 4, 4), 1).unwrap();
            let f = Model::build(&spec(ModelKind::Factorized), seed).unwrap();
            let b = Model::build(&spec(ModelKind::NonFactorized), seed).unwrap();
            let dag = Dag::edgeless(4);
            let mut tf = Tape::new(&f.store);
            let mut tb = Tape::new(&b.store);
            let (_, pf) = loss_stage2(&mut tf, &f, &s, &dag, &cfg).unwrap();
            let (_, pb) = loss_stage2(&mut tb, &b, &s, &dag, &cfg).unwrap();
            assert_eq!(pf, pb);
        }
    }

    #[test]
    fn teacher_forcing_changes_only_conditioned_agents() {
        let cfg = TrainConfig::default();
        let (s, _) = normalize(&random_scene(5, 3, 4), 0).unwrap();
        let f = Model::build(&spec(ModelKind::Factorized), 5).unwrap();
        let dag = Dag::new(3, vec![crate::dag::Edge::new(0, 1, 1.0)]).unwrap();
        let mut t1 = Tape::new(&f.store);
        let (_, forced) = loss_stage2(&mut t1, &f, &s, &dag, &cfg).unwrap();
        let free_cfg = TrainConfig {
            teacher_forcing: false,
            ..cfg
        };
        let mut t2 = Tape::new(&f.store);
        let (_, free) = loss_stage2(&mut t2, &f, &s, &dag, &free_cfg).unwrap();
        assert_eq!(forced.proposal, free.proposal);
        assert!(forced.regression.is_finite() && free.regression.is_finite());
    }

    #[test]
    fn pair_targets_follow_graph() {
        let s = random_scene(1, 3, 4);
        let mut g = InteractionGraph::new(3);
        g.labels.insert((0, 2), EdgeLabel::NInfluencesM);
        let p = pair_targets(&s, &g);
        assert_eq!(p.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(p.classes, vec![0, 2, 0]);
        let cfg = TrainConfig {
            heuristic: Heuristic::Dense,
            ..TrainConfig::default()
        };
        assert_eq!(ground_truth_pair_targets(&s, &cfg).unwrap().pairs.len(), 3);
    }
}
