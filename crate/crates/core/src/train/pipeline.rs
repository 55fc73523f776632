//! Two-stage training and corpus evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag::{dag_from_labels, Dag};
use crate::error::{Error, Result};
use crate::labeling::build_ground_truth_graph;
use crate::metrics::{scene_metrics, MetricReport};
use crate::model::{Model, ModelKind};
use crate::numerics::tape::{Tape, Var};
use crate::scene::{normalize, pick_random_anchor, Scene};
use crate::train::config::{DagSource, TrainConfig};
use crate::train::losses::{ground_truth_pair_targets, loss_stage1, loss_stage2, LossParts, PairTargets};
use crate::train::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub interaction: f64,
    pub regression: f64,
    pub proposal: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Focal-loss probabilities clamped at the floor.
    pub clamp_events: usize,
}

impl TrainLog {
    pub fn losses(&self, stage: &str) -> Vec<f64> {
        self.epochs.iter().filter(|e| e.stage == stage).map(|e| e.loss).collect()
    }
}

/// Initialization seed of the stage-1 model and data stream ids per stage.
fn stage_seed(cfg: &TrainConfig, stage: u64) -> u64 {
    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage)
}

fn check_corpus(corpus: &[Scene]) -> Result<usize> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidConfig("training corpus is empty".into()))?;
    for scene in corpus {
        scene.validate()?;
        if scene.t_fut != first.t_fut {
            return Err(Error::InvalidScene(format!(
                "scene {} has T_fut {}, corpus uses {}",
                scene.scene_id, scene.t_fut, first.t_fut
            )));
        }
    }
    Ok(first.t_fut)
}

/// Minibatch Adam over shuffled scenes, each normalized on a random anchor.
/// Gradients are averaged in batch order, so runs are reproducible.
fn fit<F>(
    model: &mut Model,
    corpus: &[Scene],
    cfg: &TrainConfig,
    stage: &str,
    epochs: usize,
    stream: u64,
    log: &mut TrainLog,
    mut loss_fn: F,
) -> Result<()>
where
    F: FnMut(&mut Tape, &Model, usize, &Scene) -> Result<(Var, LossParts)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut adam = Adam::new(&model.store);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..epochs {
        let lr = cfg.lr.rate(epoch);
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.store.zeros_like();
            for &i in batch {
                let scene = &corpus[i];
                let (local, _) = normalize(scene, pick_random_anchor(scene, &mut rng)?)?;
                let mut tape = Tape::new(&model.store);
                let (loss, parts) = loss_fn(&mut tape, model, i, &local)?;
                if !parts.total.is_finite() {
                    return Err(Error::Divergence(format!(
                        "{stage} epoch {epoch}: non-finite loss on scene {}",
                        scene.scene_id
                    )));
                }
                log.clamp_events += tape.clamp_events();
                grads.add_assign(&tape.backward(loss));
                sums.total += parts.total;
                sums.interaction += parts.interaction;
                sums.regression += parts.regression;
                sums.proposal += parts.proposal;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(Error::Divergence(format!("{stage} epoch {epoch}: non-finite gradient")));
            }
            adam.step(&mut model.store, &grads, lr);
        }
        let n = corpus.len() as f64;
        log.epochs.push(EpochLog {
            stage: stage.to_string(),
            epoch,
            lr,
            loss: sums.total / n,
            interaction: sums.interaction / n,
            regression: sums.regression / n,
            proposal: sums.proposal / n,
        });
    }
    Ok(())
}

/// Trains the interaction graph predictor with its own encoder.
pub fn train_stage1(corpus: &[Scene], cfg: &TrainConfig, log: &mut TrainLog) -> Result<Model> {
    cfg.validate()?;
    let t_fut = check_corpus(corpus)?;
    let targets: Vec<PairTargets> = corpus.iter().map(|s| ground_truth_pair_targets(s, cfg)).collect::<Result<_>>()?;
    let mut model = Model::build(&cfg.model_spec(ModelKind::GraphPredictor, t_fut), stage_seed(cfg, 1))?;
    fit(&mut model, corpus, cfg, "stage1", cfg.epochs_stage1, 1, log, |tape, m, i, scene| {
        loss_stage1(tape, m, scene, &targets[i], cfg)
    })?;
    Ok(model)
}

/// Trains a joint decoder over the given per-scene DAGs. A non-factorized
/// model ignores them.
pub fn train_stage2(corpus: &[Scene], dags: &[Dag], kind: ModelKind, cfg: &TrainConfig, log: &mut TrainLog) -> Result<Model> {
    cfg.validate()?;
    let t_fut = check_corpus(corpus)?;
    if kind == ModelKind::GraphPredictor {
        return Err(Error::InvalidConfig("stage 2 trains a trajectory decoder".into()));
    }
    if dags.len() != corpus.len() {
        return Err(Error::InvalidConfig(format!("{} dags for {} scenes", dags.len(), corpus.len())));
    }
    let mut model = Model::build(&cfg.model_spec(kind, t_fut), stage_seed(cfg, 2))?;
    let stage = if kind == ModelKind::Factorized { "stage2" } else { "baseline" };
    fit(&mut model, corpus, cfg, stage, cfg.epochs_stage2, 2, log, |tape, m, i, scene| {
        loss_stage2(tape, m, scene, &dags[i], cfg)
    })?;
    Ok(model)
}

pub fn ground_truth_dags(corpus: &[Scene], cfg: &TrainConfig) -> Result<Vec<Dag>> {
    corpus
        .iter()
        .map(|s| dag_from_labels(&build_ground_truth_graph(s, cfg.heuristic, cfg.eps_i)?))
        .collect()
}

/// DAGs predicted once per scene by a frozen stage-1 model.
pub fn learned_dags(stage1: &Model, corpus: &[Scene]) -> Result<Vec<Dag>> {
    corpus.iter().map(|s| stage1.predict_dag(s)).collect()
}

pub fn edgeless_dags(corpus: &[Scene]) -> Vec<Dag> {
    corpus.iter().map(|s| Dag::edgeless(s.n_agents())).collect()
}

#[derive(Debug, Clone)]
pub struct TwoStage {
    pub stage1: Model,
    pub stage2: Model,
    pub log: TrainLog,
}

/// Stage 1, then stage 2 over DAGs from `cfg.dag_source`. Ground-truth DAGs
/// skip stage-1 inference entirely.
pub fn train_two_stage(corpus: &[Scene], cfg: &TrainConfig) -> Result<TwoStage> {
    let mut log = TrainLog::default();
    let stage1 = train_stage1(corpus, cfg, &mut log)?;
    let dags = match cfg.dag_source {
        DagSource::Learned => learned_dags(&stage1, corpus)?,
        DagSource::GroundTruth => ground_truth_dags(corpus, cfg)?,
    };
    let stage2 = train_stage2(corpus, &dags, ModelKind::Factorized, cfg, &mut log)?;
    Ok(TwoStage { stage1, stage2, log })
}

/// Corpus metrics of `model` decoding each scene over `dags[i]`.
pub fn evaluate_corpus(model: &Model, corpus: &[Scene], dags: &[Dag], cfg: &TrainConfig, label: &str) -> Result<MetricReport> {
    if dags.len() != corpus.len() {
        return Err(Error::InvalidConfig(format!("{} dags for {} scenes", dags.len(), corpus.len())));
    }
    let mut per_scene = Vec::with_capacity(corpus.len());
    for (scene, dag) in corpus.iter().zip(dags) {
        let bundle = model.predict_bundle(scene, dag)?;
        let graph = build_ground_truth_graph(scene, cfg.heuristic, cfg.eps_i)?;
        per_scene.push(scene_metrics(&bundle, scene, &graph, None)?);
    }
    Ok(MetricReport::aggregate(label, per_scene))
}
