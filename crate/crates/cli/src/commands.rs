use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dagtraj_core::dag::{dag_from_labels, dagify_with_limit, CYCLE_LIMIT};
use dagtraj_core::numerics::{grad_check, Tape};
use dagtraj_core::predictor::dag_from_probabilities;
use dagtraj_core::scene::{load_corpus, normalize, pick_eval_anchor};
use dagtraj_core::synthetic::generate_scene;
use dagtraj_core::train::losses::ground_truth_pair_targets;
use dagtraj_core::train::{
    edgeless_dags, evaluate_corpus, ground_truth_dags, learned_dags, loss_stage1, loss_stage2, train_stage1, train_stage2, TrainLog,
};
use dagtraj_core::{
    build_ground_truth_graph, format_table_filtered, Dag, DagSource, DiGraph, Edge, Error, Heuristic, InteractionGraph, MetricReport,
    Model, ModelKind, ModelSpec, ScenarioKind, Scene, SyntheticSpec, TrainConfig,
};

use crate::{svg, StageArg};

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn corpus(dir: &Path) -> Result<Vec<Scene>> {
    let scenes = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    if scenes.is_empty() {
        bail!(Error::InvalidConfig(format!("no scenes in {}", dir.display())));
    }
    Ok(scenes)
}

fn config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p).with_context(|| format!("loading config {}", p.display()))?),
        None => Ok(TrainConfig::default()),
    }
}

pub fn gen(spec: Option<PathBuf>, count: usize, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SyntheticSpec::from_json(&read(&p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSpec::default(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..count {
        let scene = generate_scene(&spec, i)?;
        scene.save(&out.join(format!("scene_{i:05}.json")))?;
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

pub fn label(heuristic: Heuristic, eps_i: f64, corpus_dir: &Path, out: &Path) -> Result<()> {
    let scenes = corpus(corpus_dir)?;
    let mut edges = 0;
    for scene in &scenes {
        let graph = build_ground_truth_graph(scene, heuristic, eps_i).with_context(|| format!("labeling {}", scene.scene_id))?;
        edges += graph.edge_count();
        write(&out.join(format!("{}.json", scene.scene_id)), &graph.to_json()?)?;
    }
    println!("labeled {} scenes, {edges} interaction edges", scenes.len());
    Ok(())
}

pub fn dagify(input: &Path, out: Option<&Path>) -> Result<()> {
    let text = read(input)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let (dag, removed) = if value.get("n_agents").is_some() {
        let graph = InteractionGraph::from_json(&text)?;
        let dag = match &graph.probabilities {
            None => dag_from_labels(&graph)?,
            Some(p) if p.len() == graph.labels.len() => dag_from_probabilities(&graph)?,
            Some(_) => bail!(Error::InvalidScene("probs must be given for every edge or for none".into())),
        };
        let removed = graph.edge_count() - dag.edges.len();
        (dag, removed)
    } else {
        let mut out = dagify_with_limit(&DiGraph::from_json(&text)?, CYCLE_LIMIT)?;
        (std::mem::replace(&mut out.dag, Dag::edgeless(0)), out.removed.len())
    };
    eprintln!("{} edges kept, {removed} removed, {} levels", dag.edges.len(), dag.levels.len());
    let json = dag.to_json()?;
    match out {
        Some(p) => write(p, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn summarize(log: &TrainLog, stage: &str) {
    if let Some(last) = log.epochs.iter().rev().find(|e| e.stage == stage) {
        println!("{stage}: {} epochs, final loss {:.6}", last.epoch + 1, last.loss);
    }
}

pub fn train(
    config_path: Option<&Path>,
    corpus_dir: &Path,
    stage: StageArg,
    out: &Path,
    stage1_path: Option<&Path>,
    baseline: bool,
) -> Result<()> {
    let cfg = config(config_path)?;
    let scenes = corpus(corpus_dir)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.json"), &cfg.to_json()?)?;
    let mut log = TrainLog::default();
    let result = train_stages(&cfg, &scenes, stage, out, stage1_path, baseline, &mut log);
    write(
        &out.join("train_log.json"),
        &serde_json::to_string_pretty(&log).map_err(Error::from)?,
    )?;
    result?;
    for s in ["stage1", "stage2", "baseline"] {
        summarize(&log, s);
    }
    if log.clamp_events > 0 {
        println!("{} focal probabilities clamped", log.clamp_events);
    }
    Ok(())
}

fn train_stages(
    cfg: &TrainConfig,
    scenes: &[Scene],
    stage: StageArg,
    out: &Path,
    stage1_path: Option<&Path>,
    baseline: bool,
    log: &mut TrainLog,
) -> Result<()> {
    let mut stage1 = None;
    if stage != StageArg::Two {
        let model = train_stage1(scenes, cfg, log)?;
        model.save(&out.join("stage1"), cfg.seed)?;
        stage1 = Some(model);
    }
    if stage != StageArg::One {
        let dags = match cfg.dag_source {
            DagSource::GroundTruth => ground_truth_dags(scenes, cfg)?,
            DagSource::Learned => {
                let model = match stage1 {
                    Some(m) => m,
                    None => {
                        let path = stage1_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("stage1"));
                        load_kind(&path, ModelKind::GraphPredictor)?
                    }
                };
                learned_dags(&model, scenes)?
            }
        };
        train_stage2(scenes, &dags, ModelKind::Factorized, cfg, log)?.save(&out.join("stage2"), cfg.seed)?;
    }
    if baseline {
        train_stage2(scenes, &edgeless_dags(scenes), ModelKind::NonFactorized, cfg, log)?.save(&out.join("baseline"), cfg.seed)?;
    }
    Ok(())
}

fn load_kind(path: &Path, kind: ModelKind) -> Result<Model> {
    let (model, _) = Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if model.spec.kind != kind {
        bail!(Error::Checkpoint(format!(
            "{} holds a {:?} model, expected {kind:?}",
            path.display(),
            model.spec.kind
        )));
    }
    Ok(model)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub metrics: String,
    pub baseline: Option<PathBuf>,
    pub stage1: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn existing(path: PathBuf) -> Option<PathBuf> {
    path.is_dir().then_some(path)
}

pub fn eval(mut args: EvalArgs) -> Result<()> {
    // A `train` output root supplies every checkpoint it contains.
    let root = args.checkpoint.clone();
    if !root.join(dagtraj_core::numerics::checkpoint::MANIFEST_FILE).exists() && root.join("stage2").is_dir() {
        args.checkpoint = root.join("stage2");
        args.stage1 = args.stage1.or_else(|| existing(root.join("stage1")));
        args.baseline = args.baseline.or_else(|| existing(root.join("baseline")));
        if args.config.is_none() && root.join("config.json").exists() {
            args.config = Some(root.join("config.json"));
        }
    }
    let cfg = config(args.config.as_deref())?;
    let keep = metric_filter(&args.metrics)?;
    let scenes = corpus(&args.corpus)?;

    let (model, _) = Model::load(&args.checkpoint).with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let mut reports = Vec::new();
    if let Some(path) = &args.baseline {
        let base = load_kind(path, ModelKind::NonFactorized)?;
        reports.push(evaluate_corpus(&base, &scenes, &edgeless_dags(&scenes), &cfg, "non-factorized")?);
    }
    let report = match model.spec.kind {
        ModelKind::NonFactorized => evaluate_corpus(&model, &scenes, &edgeless_dags(&scenes), &cfg, "non-factorized")?,
        ModelKind::Factorized => {
            let dags = match &args.stage1 {
                Some(path) => learned_dags(&load_kind(path, ModelKind::GraphPredictor)?, &scenes)?,
                None => ground_truth_dags(&scenes, &cfg)?,
            };
            evaluate_corpus(&model, &scenes, &dags, &cfg, "factorized")?
        }
        ModelKind::GraphPredictor => bail!(Error::Checkpoint(format!(
            "{} is a relation predictor; pass it with --stage1",
            args.checkpoint.display()
        ))),
    };
    reports.push(report);

    let refs: Vec<&MetricReport> = reports.iter().collect();
    print!(
        "{}",
        format_table_filtered(&refs, |name| keep.as_ref().is_none_or(|k| k.iter().any(|m| m == name)))
    );
    if let Some(path) = &args.report {
        write(path, &serde_json::to_string_pretty(&reports).map_err(Error::from)?)?;
    }
    Ok(())
}

fn metric_filter(spec: &str) -> Result<Option<Vec<String>>> {
    if spec == "all" {
        return Ok(None);
    }
    let known: Vec<&str> = MetricReport::aggregate("", Vec::new()).rows().into_iter().map(|r| r.0).collect();
    let names: Vec<String> = spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    for n in &names {
        if !known.contains(&n.as_str()) {
            bail!(Error::InvalidConfig(format!(
                "unknown metric {n}; expected one of {}",
                known.join(", ")
            )));
        }
    }
    Ok(Some(names))
}

pub fn gradcheck(seed: u64, tolerance: f64) -> Result<()> {
    let spec = SyntheticSpec {
        t_obs: 4,
        t_fut: 10,
        ..SyntheticSpec::single(ScenarioKind::NonInteractive, [4, 4], seed)
    };
    let raw = generate_scene(&spec, 0)?;
    let (scene, _) = normalize(&raw, pick_eval_anchor(&raw)?)?;
    let dag = Dag::new(4, vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0), Edge::new(0, 3, 1.0)])?;
    let model_spec = |kind| ModelSpec {
        kind,
        hidden: 5,
        gru_hidden: 4,
        type_embed: 3,
        t_fut: spec.t_fut,
        k: 2,
        k_prop: 3,
    };
    let cfg = TrainConfig::default();
    let mut failed = false;
    let mut check =
        |name: &str, model: &Model, f: &dyn Fn(&mut Tape, &Model) -> dagtraj_core::Result<dagtraj_core::numerics::Var>| -> Result<()> {
            let report = grad_check(&model.store, |tape| f(tape, model), tolerance)?;
            let verdict = if report.passed() { "ok" } else { "FAILED" };
            println!(
                "{name:<12} {} params  max relative error {:.3e}  {verdict}",
                model.store.scalar_count(),
                report.max_rel_error
            );
            failed |= !report.passed();
            Ok(())
        };
    let targets = ground_truth_pair_targets(&scene, &cfg)?;
    let ig = Model::build(&model_spec(ModelKind::GraphPredictor), seed)?;
    check("stage1", &ig, &|tape, m| Ok(loss_stage1(tape, m, &scene, &targets, &cfg)?.0))?;
    let fact = Model::build(&model_spec(ModelKind::Factorized), seed)?;
    check("stage2", &fact, &|tape, m| Ok(loss_stage2(tape, m, &scene, &dag, &cfg)?.0))?;
    let base = Model::build(&model_spec(ModelKind::NonFactorized), seed)?;
    check("baseline", &base, &|tape, m| Ok(loss_stage2(tape, m, &scene, &dag, &cfg)?.0))?;
    if failed {
        bail!(Error::InvalidConfig(format!("gradient check above tolerance {tolerance:e}")));
    }
    Ok(())
}

pub fn plot_emit(report: &Path, out: &Path) -> Result<()> {
    let text = read(report)?;
    let reports: Vec<MetricReport> = match serde_json::from_str(&text) {
        Ok(list) => list,
        Err(_) => vec![MetricReport::from_json(&text).with_context(|| format!("parsing {}", report.display()))?],
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, body) in svg::charts(&reports) {
        write(&out.join(name), &body)?;
    }
    println!("wrote plots to {}", out.display());
    Ok(())
}
