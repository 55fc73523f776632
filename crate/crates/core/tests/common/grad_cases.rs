//! Finite-difference cases shared by the gradient tests and the acceptance run.

use dagtraj_core::dag::{Dag, Edge};
use dagtraj_core::model::{Model, ModelKind};
use dagtraj_core::numerics::blocks::{Activation, Dense, GraphAttention, GruCell, Mlp, MlpSpec, ResidualBlock, TypePairEncoder};
use dagtraj_core::numerics::{grad_check, GradReport, ParamStore, Tape, Tensor2, Var};
use dagtraj_core::predictor::evaluated_pairs;
use dagtraj_core::scene::normalize;
use dagtraj_core::train::losses::ground_truth_pair_targets;
use dagtraj_core::train::{loss_stage1, loss_stage2, TrainConfig};
use dagtraj_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common;

pub const TOL: f64 = 1e-5;

pub type Case = fn() -> Result<GradReport>;

/// Every block and loss, by name.
pub const CASES: [(&str, Case); 10] = [
    ("dense+mlp", dense_and_mlp),
    ("residual", residual_blocks),
    ("gru", gru_unrolled),
    ("attention", graph_attention_with_uneven_segments),
    ("type pairs", type_pair_encoder),
    ("ops", elementwise_and_structural_ops),
    ("segments+focal", segment_softmax_and_focal),
    ("stage2", stage2_marginal_rollout),
    ("stage2 teacher", stage2_teacher_forced),
    ("stage1", stage1),
];

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum of every output entry, so each one carries a distinct gradient.
fn project(tape: &mut Tape, out: Var, rng_seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (r, c) = tape.shape(out);
    let w = tape.constant(random(&mut rng, r, c));
    let prod = tape.mul(out, w);
    tape.sum_all(prod)
}

fn check<F>(store: &ParamStore, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    grad_check(store, f, TOL)
}

fn dense_and_mlp() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "d", 4, 3, &mut rng).unwrap();
    let mlp = Mlp::new(&mut store, "m", &MlpSpec::new(&[3, 6, 2]).with_output(Activation::Relu), &mut rng).unwrap();
    let x = random(&mut rng, 5, 4);
    check(&store, |tape| {
        let xv = tape.constant(x.clone());
        let h = dense.forward(tape, xv)?;
        let y = mlp.forward(tape, h)?;
        Ok(project(tape, y, 2))
    })
}

fn residual_blocks() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let same = ResidualBlock::new(&mut store, "same", 4, 4, &mut rng).unwrap();
    let proj = ResidualBlock::new(&mut store, "proj", 4, 6, &mut rng).unwrap();
    let x = random(&mut rng, 3, 4);
    check(&store, |tape| {
        let xv = tape.constant(x.clone());
        let a = same.forward(tape, xv)?;
        let b = proj.forward(tape, a)?;
        Ok(project(tape, b, 4))
    })
}

fn gru_unrolled() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", 3, 4, &mut rng).unwrap();
    let xs: Vec<Tensor2> = (0..3).map(|_| random(&mut rng, 2, 3)).collect();
    let h0 = random(&mut rng, 2, 4);
    check(&store, |tape| {
        let mut h = tape.constant(h0.clone());
        for x in &xs {
            let xv = tape.constant(x.clone());
            h = cell.forward(tape, xv, h)?;
        }
        Ok(project(tape, h, 6))
    })
}

fn graph_attention_with_uneven_segments() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let att = GraphAttention::new(&mut store, "att", 3, 4, 5, &mut rng).unwrap();
    let msgs = random(&mut rng, 6, 3);
    let states = random(&mut rng, 6, 4);
    let segments = [(0, 1), (1, 3), (4, 0), (4, 2)];
    check(&store, |tape| {
        let m = tape.constant(msgs.clone());
        let s = tape.constant(states.clone());
        let out = att.forward(tape, m, s, &segments)?;
        let a = project(tape, out.messages, 8);
        let b = project(tape, out.weights, 9);
        Ok(tape.add(a, b))
    })
}

fn type_pair_encoder() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let enc = TypePairEncoder::new(&mut store, "ty", 5, 3, 4, &mut rng).unwrap();
    check(&store, |tape| {
        let out = enc.forward(tape, &[(0, 1), (4, 4), (2, 0)])?;
        Ok(project(tape, out, 10))
    })
}

fn elementwise_and_structural_ops() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&mut rng, 4, 3).map(|v| 3.0 * v)).unwrap();
    let b = store.add("b", random(&mut rng, 4, 3)).unwrap();
    check(&store, |tape| {
        let (va, vb) = (tape.param(a), tape.param(b));
        let s = tape.sigmoid(va);
        let t = tape.tanh(vb);
        let l = tape.leaky_relu(va, 0.2);
        let o = tape.one_minus(s);
        let m = tape.mul(o, t);
        let cat = tape.concat_cols(&[m, l]);
        let sl = tape.slice_cols(cat, 1, 5);
        let sm = tape.softmax_rows(sl);
        let sel = tape.select_rows(&[true, false, true, false], sm, sl);
        let g = tape.gather_rows(sel, &[3, 0, 0]);
        let st = tape.stack_rows(&[(g, 1), (sel, 2)]);
        let h = tape.smooth_l1(va);
        let bs = tape.block_sum(h, 2);
        let mn = tape.min_rows(bs);
        let p = project(tape, st, 12);
        Ok(tape.add(p, mn))
    })
}

fn segment_softmax_and_focal() -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let logits = store.add("z", random(&mut rng, 5, 1)).unwrap();
    let values = store.add("v", random(&mut rng, 5, 2)).unwrap();
    let cls = store.add("c", random(&mut rng, 4, 3)).unwrap();
    check(&store, |tape| {
        let z = tape.param(logits);
        let v = tape.param(values);
        let w = tape.segment_softmax(z, &[(0, 2), (2, 0), (2, 3)]);
        let agg = tape.segment_weighted_sum(w, v, &[(0, 2), (2, 0), (2, 3)]);
        let c = tape.param(cls);
        let p = tape.softmax_rows(c);
        let f = tape.focal(p, &[0, 2, 1, 2], 5.0, [1.0, 2.0, 4.0]);
        let s = project(tape, agg, 14);
        Ok(tape.add(s, f))
    })
}

/// Levels {0, 5}, {1, 3}, {2, 4}.
pub fn three_level_dag() -> Dag {
    Dag::new(
        6,
        vec![
            Edge::new(0, 1, 1.0),
            Edge::new(1, 2, 1.0),
            Edge::new(0, 3, 1.0),
            Edge::new(3, 4, 1.0),
            Edge::new(5, 4, 1.0),
        ],
    )
    .unwrap()
}

fn stage2(teacher_forcing: bool) -> Result<GradReport> {
    let dag = three_level_dag();
    if dag.levels.len() != 3 {
        return Err(Error::InvalidConfig(format!("expected 3 levels, got {}", dag.levels.len())));
    }
    let (scene, _) = normalize(&common::random_scene(21, 6, 4, 4), 2)?;
    let model = Model::build(&common::tiny_spec(ModelKind::Factorized), 21)?;
    let cfg = TrainConfig {
        teacher_forcing,
        ..TrainConfig::default()
    };
    check(&model.store, |tape| Ok(loss_stage2(tape, &model, &scene, &dag, &cfg)?.0))
}

fn stage2_marginal_rollout() -> Result<GradReport> {
    stage2(false)
}

fn stage2_teacher_forced() -> Result<GradReport> {
    stage2(true)
}

fn stage1() -> Result<GradReport> {
    let (scene, _) = normalize(&common::random_scene(22, 4, 4, 4), 0)?;
    let model = Model::build(&common::tiny_spec(ModelKind::GraphPredictor), 22)?;
    let cfg = TrainConfig::default();
    let targets = ground_truth_pair_targets(&scene, &cfg)?;
    assert_eq!(targets.pairs, evaluated_pairs(&scene));
    check(&model.store, |tape| Ok(loss_stage1(tape, &model, &scene, &targets, &cfg)?.0))
}
