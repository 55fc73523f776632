//! Model assembly: parameter layout, checkpoints and inference helpers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::decoder::{decode_factorized, decode_nonfactorized, Conditioning, Decoded, TrajectoryBundle};
use crate::encoder::{HistoryEncoder, ProposalDecoder, TrajectoryHead};
use crate::error::{Error, Result};
use crate::labeling::InteractionGraph;
use crate::numerics::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Tape, Var};
use crate::predictor::{dag_from_probabilities, evaluated_pairs, predicted_graph, GraphPredictor};
use crate::scene::{normalize, pick_eval_anchor, AgentType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Stage-1 interaction graph predictor.
    GraphPredictor,
    /// Stage-2 factorized joint predictor.
    Factorized,
    /// Marginal decoding of every agent, no conditioning.
    NonFactorized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden: usize,
    pub gru_hidden: usize,
    pub type_embed: usize,
    pub t_fut: usize,
    pub k: usize,
    pub k_prop: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} must be positive")));
        if self.hidden == 0 {
            return bad("hidden");
        }
        if self.gru_hidden == 0 {
            return bad("gru_hidden");
        }
        if self.type_embed == 0 {
            return bad("type_embed");
        }
        if self.t_fut == 0 {
            return bad("t_fut");
        }
        if self.k == 0 {
            return bad("k");
        }
        if self.k_prop == 0 {
            return bad("k_prop");
        }
        Ok(())
    }
}

/// A parameter store plus the blocks addressing it. Parameters are created
/// in a fixed order (encoder, proposals, then the kind-specific blocks), so
/// a factorized and a non-factorized model built from the same seed share
/// identical encoder, proposal and trajectory head weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub encoder: HistoryEncoder,
    pub proposal: ProposalDecoder,
    pub head: Option<TrajectoryHead>,
    pub conditioning: Option<Conditioning>,
    pub predictor: Option<GraphPredictor>,
}

impl Model {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, t) = (spec.hidden, spec.t_fut);
        let encoder = HistoryEncoder::new(&mut store, "enc", spec.gru_hidden, h, &mut rng)?;
        let proposal = ProposalDecoder::new(&mut store, "prop", h, spec.k_prop, t, &mut rng)?;
        let (mut head, mut conditioning, mut predictor) = (None, None, None);
        match spec.kind {
            ModelKind::GraphPredictor => {
                predictor = Some(GraphPredictor::new(&mut store, "ig", h, spec.type_embed, &mut rng)?);
            }
            ModelKind::NonFactorized | ModelKind::Factorized => {
                head = Some(TrajectoryHead::new(&mut store, "dec", h, spec.k, t, &mut rng)?);
                if spec.kind == ModelKind::Factorized {
                    conditioning = Some(Conditioning::new(&mut store, "cond", h, spec.type_embed, t, &mut rng)?);
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            store,
            encoder,
            proposal,
            head,
            conditioning,
            predictor,
        })
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        save_checkpoint(dir, &self.store, seed, &serde_json::to_value(&self.spec)?)?;
        Ok(())
    }

    /// Rebuilds the model layout from the manifest and installs the stored
    /// tensors, which must match it name for name and shape for shape.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let (store, manifest) = load_checkpoint(dir)?;
        let spec: ModelSpec = serde_json::from_value(manifest.model.clone())?;
        let mut model = Self::build(&spec, manifest.seed)?;
        if model.store.names() != store.names() {
            return Err(Error::Checkpoint("tensor names do not match the model layout".into()));
        }
        for id in store.ids() {
            if store.get(id).shape() != model.store.get(id).shape() {
                return Err(Error::Checkpoint(format!("tensor {} has the wrong shape", store.name(id))));
            }
        }
        model.store = store;
        Ok((model, manifest.seed))
    }

    fn require<'a, T>(&self, block: &'a Option<T>, what: &str) -> Result<&'a T> {
        block
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("a {:?} model has no {what}", self.spec.kind)))
    }

    pub fn features(&self, tape: &mut Tape, scene: &Scene) -> Result<Var> {
        self.encoder.encode(tape, scene)
    }

    /// Edge class probabilities for `pairs`, one row per pair.
    pub fn edge_probabilities(&self, tape: &mut Tape, features: Var, scene: &Scene, pairs: &[(usize, usize)]) -> Result<Var> {
        let predictor = self.require(&self.predictor, "graph predictor")?;
        let ef = predictor.edge_features(tape, features, scene, pairs)?;
        predictor.classify_edges(tape, ef)
    }

    /// Joint offsets: factorized over `dag` when the model has conditioning
    /// blocks, marginal otherwise (the DAG is then ignored).
    pub fn decode(
        &self,
        tape: &mut Tape,
        features: Var,
        scene: &Scene,
        dag: &Dag,
        teacher: Option<&[Option<Vec<f64>>]>,
    ) -> Result<Decoded> {
        let head = self.require(&self.head, "trajectory head")?;
        match &self.conditioning {
            Some(cond) => {
                let types: Vec<AgentType> = scene.agents.iter().map(|a| a.agent_type).collect();
                decode_factorized(tape, head, cond, features, &types, dag, teacher, None)
            }
            None => decode_nonfactorized(tape, head, features),
        }
    }

    /// Predicted interaction graph over the evaluated pairs of `scene`.
    pub fn predict_graph(&self, scene: &Scene) -> Result<InteractionGraph> {
        let (local, _) = normalize(scene, pick_eval_anchor(scene)?)?;
        let mut tape = Tape::new(&self.store);
        let feats = self.features(&mut tape, &local)?;
        let pairs = evaluated_pairs(&local);
        let probs = self.edge_probabilities(&mut tape, feats, &local, &pairs)?;
        predicted_graph(scene.n_agents(), &pairs, tape.value(probs))
    }

    pub fn predict_dag(&self, scene: &Scene) -> Result<Dag> {
        dag_from_probabilities(&self.predict_graph(scene)?)
    }

    /// Joint trajectories in world coordinates.
    pub fn predict_bundle(&self, scene: &Scene, dag: &Dag) -> Result<TrajectoryBundle> {
        let (local, transform) = normalize(scene, pick_eval_anchor(scene)?)?;
        let mut tape = Tape::new(&self.store);
        let feats = self.features(&mut tape, &local)?;
        let decoded = self.decode(&mut tape, feats, &local, dag, None)?;
        let bundle = TrajectoryBundle::from_offsets(tape.value(decoded.offsets), self.spec.k, &local.present_positions(), &transform)?;
        if !bundle.all_finite() {
            return Err(Error::Divergence(format!("non-finite prediction in scene {}", scene.scene_id)));
        }
        Ok(bundle)
    }
}
