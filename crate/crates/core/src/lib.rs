//! Joint multi-agent trajectory prediction over directed acyclic interaction graphs.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod collision;
pub mod dag;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod predictor;
pub mod scene;
pub mod synthetic;
pub mod train;

pub use collision::{collision_threshold, poses_collide, Footprint, Pose};
pub use dag::{dagify, enumerate_cycles, graph_from_predictions, level_schedule, Dag, DiGraph, Edge};
pub use decoder::{decode_factorized, decode_nonfactorized, TrajectoryBundle};
pub use error::{Error, Result};
pub use labeling::{build_ground_truth_graph, interactive_agents, EdgeLabel, Heuristic, InteractionGraph};
pub use metrics::{format_table, format_table_filtered, MetricReport, SceneMetrics};
pub use model::{Model, ModelKind, ModelSpec};
pub use scene::{AgentState, AgentTrack, AgentType, PreprocessedHistory, Scene};
pub use synthetic::{generate_corpus, generate_scene, ScenarioKind, SyntheticSpec};
pub use train::{DagSource, TrainConfig, TrainLog};
