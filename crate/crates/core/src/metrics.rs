//! Joint and interactive evaluation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collision::{poses_collide, Footprint, Pose};
use crate::decoder::TrajectoryBundle;
use crate::error::{Error, Result};
use crate::labeling::{interactive_agents, InteractionGraph};
use crate::scene::{AgentTrack, Scene};

/// Lateral miss threshold in meters.
pub const EPS_LAT: f64 = 1.0;
/// Displacements shorter than this keep the previous heading.
pub const STATIONARY_EPS: f64 = 1e-6;
/// Constant-velocity FDE thresholds of the filtered interactive metrics.
pub const CV_FILTERS: [f64; 2] = [3.0, 5.0];

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_coverage(bundle: &TrajectoryBundle, scene: &Scene, agents: &[usize]) -> Result<()> {
    for &a in agents {
        let Some(slot) = bundle.slot(a) else {
            return Err(Error::AgentMismatch(format!("bundle has no trajectory for agent {a}")));
        };
        for (k, mode) in bundle.modes.iter().enumerate() {
            if mode[slot].len() != scene.t_fut {
                return Err(Error::AgentMismatch(format!(
                    "agent {a} mode {k} has {} steps, expected {}",
                    mode[slot].len(),
                    scene.t_fut
                )));
            }
        }
    }
    if bundle.k == 0 {
        return Err(Error::AgentMismatch("bundle has no modalities".into()));
    }
    Ok(())
}

/// Final and average displacement error of one agent in one modality.
fn agent_errors(pred: &[[f64; 2]], track: &AgentTrack) -> (f64, f64) {
    let future = track.future.as_deref().unwrap_or(&[]);
    let mut total = 0.0;
    let mut count = 0;
    for (p, s) in pred.iter().zip(future) {
        if s.valid {
            total += dist(*p, s.position);
            count += 1;
        }
    }
    let last = future.len() - 1;
    (dist(pred[last], future[last].position), total / count.max(1) as f64)
}

/// Scene-averaged `(FDE, ADE)` of every modality over `agents`.
fn per_mode_errors(bundle: &TrajectoryBundle, scene: &Scene, agents: &[usize]) -> Vec<(f64, f64)> {
    (0..bundle.k)
        .map(|k| {
            let (mut f, mut a) = (0.0, 0.0);
            for &id in agents {
                let (fde, ade) = agent_errors(bundle.trajectory(k, id).expect("coverage checked"), &scene.agents[id]);
                f += fde;
                a += ade;
            }
            let n = agents.len().max(1) as f64;
            (f / n, a / n)
        })
        .collect()
}

fn argmin_lowest(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
}

/// `(minFDE, minADE, best_k)` over the evaluated agents; the two minima
/// are taken independently and `best_k` is the lowest minimum-FDE mode.
pub fn joint_min_fde_ade(bundle: &TrajectoryBundle, scene: &Scene) -> Result<(f64, f64, usize)> {
    let agents = scene.evaluated_agents();
    check_coverage(bundle, scene, &agents)?;
    let errs = per_mode_errors(bundle, scene, &agents);
    let (best_k, min_fde) = argmin_lowest(errs.iter().map(|e| e.0));
    let min_ade = errs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    Ok((min_fde, min_ade, best_k))
}

/// Longitudinal tolerance as a function of final speed.
pub fn eps_long(speed: f64) -> f64 {
    if speed <= 1.4 {
        1.0
    } else if speed <= 11.0 {
        1.0 + (speed - 1.4) / (11.0 - 1.4)
    } else {
        2.0
    }
}

/// Endpoint error decomposed in the ground-truth final heading frame.
pub fn miss(pred_end: [f64; 2], truth_end: [f64; 2], truth_final_velocity: [f64; 2], truth_final_yaw: f64) -> bool {
    let (s, c) = truth_final_yaw.sin_cos();
    let (ex, ey) = (pred_end[0] - truth_end[0], pred_end[1] - truth_end[1]);
    let long = ex * c + ey * s;
    let lat = -ex * s + ey * c;
    let speed = truth_final_velocity[0].hypot(truth_final_velocity[1]);
    lat.abs() > EPS_LAT || long.abs() > eps_long(speed)
}

/// Fraction of `agents` missing in modality `k`.
fn miss_fraction(bundle: &TrajectoryBundle, scene: &Scene, agents: &[usize], k: usize) -> f64 {
    let misses = agents
        .iter()
        .filter(|&&id| {
            let pred = bundle.trajectory(k, id).expect("coverage checked");
            let fut = scene.agents[id].future.as_deref().expect("evaluated agents have futures");
            let last = fut.last().expect("non-empty future");
            miss(*pred.last().expect("non-empty prediction"), last.position, last.velocity, last.yaw)
        })
        .count();
    misses as f64 / agents.len().max(1) as f64
}

pub fn scene_miss_rate(bundle: &TrajectoryBundle, scene: &Scene) -> Result<f64> {
    let agents = scene.evaluated_agents();
    check_coverage(bundle, scene, &agents)?;
    Ok((0..bundle.k)
        .map(|k| miss_fraction(bundle, scene, &agents, k))
        .fold(f64::INFINITY, f64::min))
}

/// Headings along a predicted path: direction to the next point, carried
/// over stationary steps (starting from `present_yaw`); the last step
/// repeats the one before it.
pub fn predicted_headings(path: &[[f64; 2]], present_yaw: f64) -> Vec<f64> {
    let mut yaws = Vec::with_capacity(path.len());
    let mut last = present_yaw;
    for w in path.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        if dx.hypot(dy) >= STATIONARY_EPS {
            last = dy.atan2(dx);
        }
        yaws.push(last);
    }
    if !path.is_empty() {
        yaws.push(last);
    }
    yaws
}

/// Per modality: `(any collision, collision not involving ego)`.
pub fn mode_collisions(bundle: &TrajectoryBundle, scene: &Scene, ego: Option<usize>) -> Result<Vec<(bool, bool)>> {
    let agents = scene.evaluated_agents();
    check_coverage(bundle, scene, &agents)?;
    let feet: Vec<Footprint> = agents
        .iter()
        .map(|&a| Footprint::new(scene.agents[a].length, scene.agents[a].width))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(bundle.k);
    for k in 0..bundle.k {
        let paths: Vec<&[[f64; 2]]> = agents.iter().map(|&a| bundle.trajectory(k, a).expect("coverage checked")).collect();
        let yaws: Vec<Vec<f64>> = agents
            .iter()
            .zip(&paths)
            .map(|(&a, p)| predicted_headings(p, scene.agents[a].present().yaw))
            .collect();
        let (mut any, mut cross) = (false, false);
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                let involves_ego = ego == Some(agents[i]) || ego == Some(agents[j]);
                if cross || (any && involves_ego) {
                    continue;
                }
                let hit = (0..scene.t_fut).any(|t| {
                    poses_collide(
                        &Pose::new(paths[i][t], yaws[i][t]),
                        &feet[i],
                        &Pose::new(paths[j][t], yaws[j][t]),
                        &feet[j],
                    )
                });
                if hit {
                    any = true;
                    cross |= !involves_ego;
                }
            }
        }
        out.push((any, cross));
    }
    Ok(out)
}

/// `(SCR, CrossCol)`.
pub fn scene_collision_rate(bundle: &TrajectoryBundle, scene: &Scene, ego: Option<usize>) -> Result<(f64, f64)> {
    let flags = mode_collisions(bundle, scene, ego)?;
    let k = flags.len() as f64;
    Ok((
        flags.iter().filter(|f| f.0).count() as f64 / k,
        flags.iter().filter(|f| f.1).count() as f64 / k,
    ))
}

/// Scene miss rate over modalities free of non-ego collisions; 1 when
/// every modality has one.
pub fn conditional_miss_rate(bundle: &TrajectoryBundle, scene: &Scene, ego: Option<usize>) -> Result<f64> {
    let flags = mode_collisions(bundle, scene, ego)?;
    let agents = scene.evaluated_agents();
    Ok((0..bundle.k)
        .filter(|&k| !flags[k].1)
        .map(|k| miss_fraction(bundle, scene, &agents, k))
        .fold(1.0, f64::min))
}

/// Rolls the mean observed velocity forward from the present position.
pub fn constant_velocity_rollout(track: &AgentTrack, dt: f64, t_fut: usize) -> Result<Vec<[f64; 2]>> {
    let valid: Vec<[f64; 2]> = track.past.iter().filter(|s| s.valid).map(|s| s.velocity).collect();
    if valid.is_empty() {
        return Err(Error::NoValidVelocity(track.agent_id));
    }
    let present = track.present();
    if !present.valid {
        return Err(Error::InvalidScene(format!("agent {} has no valid present state", track.agent_id)));
    }
    let n = valid.len() as f64;
    let v = [
        valid.iter().map(|v| v[0]).sum::<f64>() / n,
        valid.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    let p = present.position;
    Ok((1..=t_fut)
        .map(|s| [p[0] + v[0] * dt * s as f64, p[1] + v[1] * dt * s as f64])
        .collect())
}

/// Final displacement error of the constant-velocity rollout.
pub fn constant_velocity_fde(track: &AgentTrack, dt: f64, t_fut: usize) -> Result<f64> {
    let roll = constant_velocity_rollout(track, dt, t_fut)?;
    let fut = track.future_or_err()?;
    Ok(dist(*roll.last().expect("t_fut > 0"), fut.last().expect("t_fut > 0").position))
}

/// Evaluated interactive agents, dropping those whose constant-velocity
/// FDE is below `d_filter` when `d_filter > 0`.
pub fn interactive_metric_agents(scene: &Scene, gt_graph: &InteractionGraph, d_filter: f64) -> Result<Vec<usize>> {
    let inter: BTreeSet<usize> = interactive_agents(gt_graph);
    let mut out = Vec::new();
    for a in scene.evaluated_agents() {
        if !inter.contains(&a) {
            continue;
        }
        if d_filter > 0.0 && constant_velocity_fde(&scene.agents[a], scene.dt, scene.t_fut)? < d_filter {
            continue;
        }
        out.push(a);
    }
    Ok(out)
}

/// `(iminFDE_d, iminADE_d)` of the globally best modality over the selected
/// interactive agents; `None` when no agent qualifies.
pub fn interactive_metrics(
    bundle: &TrajectoryBundle,
    scene: &Scene,
    gt_graph: &InteractionGraph,
    d_filter: f64,
) -> Result<Option<(f64, f64)>> {
    let (_, _, best_k) = joint_min_fde_ade(bundle, scene)?;
    let agents = interactive_metric_agents(scene, gt_graph, d_filter)?;
    if agents.is_empty() {
        return Ok(None);
    }
    let (mut f, mut a) = (0.0, 0.0);
    for &id in &agents {
        let (fde, ade) = agent_errors(bundle.trajectory(best_k, id).expect("coverage checked"), &scene.agents[id]);
        f += fde;
        a += ade;
    }
    let n = agents.len() as f64;
    Ok(Some((f / n, a / n)))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    pub best_k: usize,
    #[serde(rename = "SMR")]
    pub smr: f64,
    #[serde(rename = "SCR")]
    pub scr: f64,
    #[serde(rename = "CrossCol")]
    pub cross_col: f64,
    #[serde(rename = "CMR")]
    pub cmr: f64,
    /// `(FDE, ADE)` for the plain and each filtered interactive variant.
    pub interactive: Vec<Option<(f64, f64)>>,
}

pub fn scene_metrics(bundle: &TrajectoryBundle, scene: &Scene, gt_graph: &InteractionGraph, ego: Option<usize>) -> Result<SceneMetrics> {
    let (min_fde, min_ade, best_k) = joint_min_fde_ade(bundle, scene)?;
    let (scr, cross_col) = scene_collision_rate(bundle, scene, ego)?;
    let mut interactive = vec![interactive_metrics(bundle, scene, gt_graph, 0.0)?];
    for d in CV_FILTERS {
        interactive.push(interactive_metrics(bundle, scene, gt_graph, d)?);
    }
    Ok(SceneMetrics {
        scene_id: scene.scene_id.clone(),
        min_fde,
        min_ade,
        best_k,
        smr: scene_miss_rate(bundle, scene)?,
        scr,
        cross_col,
        cmr: conditional_miss_rate(bundle, scene, ego)?,
        interactive,
    })
}

/// Corpus means; interactive metrics average only the scenes that define them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub scenes: usize,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "SMR")]
    pub smr: f64,
    #[serde(rename = "SCR")]
    pub scr: f64,
    #[serde(rename = "CrossCol")]
    pub cross_col: f64,
    #[serde(rename = "CMR")]
    pub cmr: f64,
    #[serde(rename = "iminFDE")]
    pub imin_fde: Option<f64>,
    #[serde(rename = "iminADE")]
    pub imin_ade: Option<f64>,
    #[serde(rename = "iminFDE_3")]
    pub imin_fde_3: Option<f64>,
    #[serde(rename = "iminADE_3")]
    pub imin_ade_3: Option<f64>,
    #[serde(rename = "iminFDE_5")]
    pub imin_fde_5: Option<f64>,
    #[serde(rename = "iminADE_5")]
    pub imin_ade_5: Option<f64>,
    pub per_scene: Vec<SceneMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn aggregate(label: &str, per_scene: Vec<SceneMetrics>) -> Self {
        let pick = |ix: usize, fde: bool| mean_opt(per_scene.iter().map(|s| s.interactive[ix].map(|p| if fde { p.0 } else { p.1 })));
        Self {
            label: label.to_string(),
            scenes: per_scene.len(),
            min_fde: mean(per_scene.iter().map(|s| s.min_fde)),
            min_ade: mean(per_scene.iter().map(|s| s.min_ade)),
            smr: mean(per_scene.iter().map(|s| s.smr)),
            scr: mean(per_scene.iter().map(|s| s.scr)),
            cross_col: mean(per_scene.iter().map(|s| s.cross_col)),
            cmr: mean(per_scene.iter().map(|s| s.cmr)),
            imin_fde: pick(0, true),
            imin_ade: pick(0, false),
            imin_fde_3: pick(1, true),
            imin_ade_3: pick(1, false),
            imin_fde_5: pick(2, true),
            imin_ade_5: pick(2, false),
            per_scene,
        }
    }

    /// `(name, value)` of every corpus metric in display order.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("minFDE", Some(self.min_fde)),
            ("minADE", Some(self.min_ade)),
            ("SMR", Some(self.smr)),
            ("SCR", Some(self.scr)),
            ("CrossCol", Some(self.cross_col)),
            ("CMR", Some(self.cmr)),
            ("iminFDE", self.imin_fde),
            ("iminADE", self.imin_ade),
            ("iminFDE_3", self.imin_fde_3),
            ("iminADE_3", self.imin_ade_3),
            ("iminFDE_5", self.imin_fde_5),
            ("iminADE_5", self.imin_ade_5),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Aligned plain-text table with one column per report and, for two
/// reports, a column of differences (second minus first).
pub fn format_table(reports: &[&MetricReport]) -> String {
    format_table_filtered(reports, |_| true)
}

/// [`format_table`] restricted to the metrics whose name passes `keep`.
pub fn format_table_filtered(reports: &[&MetricReport], keep: impl Fn(&str) -> bool) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(reports.iter().map(|r| r.label.clone()));
    let with_delta = reports.len() == 2;
    if with_delta {
        header.push("delta".to_string());
    }
    let mut lines = vec![header];
    let rows: Vec<_> = reports.iter().map(|r| r.rows()).collect();
    for i in 0..rows.first().map_or(0, Vec::len) {
        if !keep(rows[0][i].0) {
            continue;
        }
        let mut line = vec![rows[0][i].0.to_string()];
        line.extend(rows.iter().map(|r| cell(r[i].1)));
        if with_delta {
            line.push(cell(rows[0][i].1.zip(rows[1][i].1).map(|(a, b)| b - a)));
        }
        lines.push(line);
    }
    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::tests::constant_velocity_track;
    use crate::labeling::EdgeLabel;
    use crate::scene::{AgentState, AgentType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth_bundle(scene: &Scene, k: usize) -> TrajectoryBundle {
        let mode: Vec<Vec<[f64; 2]>> = scene
            .agents
            .iter()
            .map(|a| a.future.as_ref().unwrap().iter().map(|s| s.position).collect())
            .collect();
        TrajectoryBundle {
            k,
            agent_ids: (0..scene.n_agents()).collect(),
            modes: vec![mode; k],
        }
    }

    fn scene_of(agents: Vec<AgentTrack>) -> Scene {
        let t_obs = agents[0].past.len();
        let t_fut = agents[0].future.as_ref().unwrap().len();
        Scene {
            scene_id: "m".into(),
            agents,
            t_obs,
            t_fut,
            dt: 0.1,
        }
    }

    fn shift(b: &mut TrajectoryBundle, k: usize, agent: usize, dx: f64) {
        for p in &mut b.modes[k][agent] {
            p[0] += dx;
        }
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let s = scene_of(vec![constant_velocity_track(0, [0.0, 0.0], [5.0, 0.0], 3, 5)]);
        let b = truth_bundle(&s, 1);
        assert_eq!(joint_min_fde_ade(&b, &s).unwrap(), (0.0, 0.0, 0));
        assert_eq!(scene_miss_rate(&b, &s).unwrap(), 0.0);
    }

    #[test]
    fn min_fde_picks_best_mode() {
        let s = scene_of(vec![constant_velocity_track(0, [0.0, 0.0], [5.0, 0.0], 3, 5)]);
        let mut b = truth_bundle(&s, 2);
        b.modes[0][0].last_mut().unwrap()[0] += 2.0;
        b.modes[1][0].last_mut().unwrap()[0] += 1.0;
        let (fde, _, k) = joint_min_fde_ade(&b, &s).unwrap();
        assert_eq!((fde, k), (1.0, 1));
    }

    #[test]
    fn missing_agent_is_an_error() {
        let s = scene_of(vec![
            constant_velocity_track(0, [0.0, 0.0], [5.0, 0.0], 3, 5),
            constant_velocity_track(1, [0.0, 50.0], [5.0, 0.0], 3, 5),
        ]);
        let mut b = truth_bundle(&s, 1);
        b.agent_ids = vec![0, 7];
        assert!(matches!(joint_min_fde_ade(&b, &s), Err(Error::AgentMismatch(_))));
    }

    #[test]
    fn eps_long_boundaries() {
        assert_eq!(eps_long(1.4), 1.0);
        assert_eq!(eps_long(11.0), 2.0);
        assert!((eps_long(6.2) - 1.5).abs() < 1e-15);
        assert_eq!(eps_long(0.0), 1.0);
        assert_eq!(eps_long(30.0), 2.0);
        for v in [0.0, 1.4, 5.0, 11.0, 20.0] {
            assert!(!miss([3.0, 4.0], [3.0, 4.0], [v, 0.0], 0.3));
        }
    }

    #[test]
    fn miss_uses_truth_heading_frame() {
        // Heading along +y: a 1.5 m error along x is lateral.
        assert!(miss([1.5, 0.0], [0.0, 0.0], [0.0, 10.0], std::f64::consts::FRAC_PI_2));
        // The same error along y is longitudinal and within 1.9 m at 10 m/s.
        assert!(!miss([0.0, 1.5], [0.0, 0.0], [0.0, 10.0], std::f64::consts::FRAC_PI_2));
    }

    #[test]
    fn one_in_four_misses() {
        let agents = (0..4)
            .map(|i| constant_velocity_track(i, [0.0, 20.0 * i as f64], [5.0, 0.0], 3, 5))
            .collect();
        let s = scene_of(agents);
        let mut b = truth_bundle(&s, 1);
        shift(&mut b, 0, 2, 5.0);
        assert_eq!(scene_miss_rate(&b, &s).unwrap(), 0.25);
    }

    fn static_track(id: usize, at: [f64; 2], t_fut: usize) -> AgentTrack {
        let s = AgentState::new(at, [0.0, 0.0], 0.0);
        AgentTrack {
            agent_id: id,
            agent_type: AgentType::Vehicle,
            length: 4.0,
            width: 2.0,
            past: vec![s; 3],
            future: Some(vec![s; t_fut]),
            evaluate: true,
        }
    }

    #[test]
    fn collision_rates() {
        let s = scene_of(vec![static_track(0, [0.0, 0.0], 10), static_track(1, [20.0, 0.0], 10)]);
        let mut b = truth_bundle(&s, 6);
        assert_eq!(scene_collision_rate(&b, &s, None).unwrap(), (0.0, 0.0));
        assert_eq!(conditional_miss_rate(&b, &s, None).unwrap(), scene_miss_rate(&b, &s).unwrap());
        // Mode 3: agent 1 jumps onto agent 0 at t = 5.
        b.modes[3][1][5] = [0.0, 0.0];
        assert_eq!(scene_collision_rate(&b, &s, None).unwrap(), (1.0 / 6.0, 1.0 / 6.0));
        assert_eq!(scene_collision_rate(&b, &s, Some(0)).unwrap(), (1.0 / 6.0, 0.0));
        for k in 0..6 {
            b.modes[k][1][5] = [0.0, 0.0];
        }
        assert_eq!(conditional_miss_rate(&b, &s, None).unwrap(), 1.0);
    }

    #[test]
    fn headings_carry_over_stationary_steps() {
        let path = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let y = predicted_headings(&path, 0.5);
        assert_eq!(
            y,
            vec![
                0.5,
                0.0,
                std::f64::consts::FRAC_PI_2,
                std::f64::consts::FRAC_PI_2,
                std::f64::consts::FRAC_PI_2
            ]
        );
    }

    #[test]
    fn constant_velocity_cases() {
        let t = constant_velocity_track(0, [1.0, 2.0], [3.0, -1.0], 5, 8);
        assert!(constant_velocity_fde(&t, 0.1, 8).unwrap() < 1e-12);
        let still = static_track(0, [4.0, 4.0], 6);
        assert!(constant_velocity_rollout(&still, 0.1, 6).unwrap().iter().all(|p| *p == [4.0, 4.0]));
        let mut none = still.clone();
        none.past.iter_mut().for_each(|s| s.valid = false);
        assert!(matches!(constant_velocity_rollout(&none, 0.1, 6), Err(Error::NoValidVelocity(0))));
    }

    #[test]
    fn constant_velocity_under_uniform_acceleration() {
        // x(t) = t^2 / 2 sampled at t = 0.0 .. 0.9, future to t = 3.9.
        let state = |t: f64| AgentState::new([0.5 * t * t, 0.0], [t, 0.0], 0.0);
        let track = AgentTrack {
            agent_id: 0,
            agent_type: AgentType::Vehicle,
            length: 4.0,
            width: 2.0,
            past: (0..10).map(|i| state(i as f64 * 0.1)).collect(),
            future: Some((10..40).map(|i| state(i as f64 * 0.1)).collect()),
            evaluate: true,
        };
        let v_avg = 0.45;
        let expect = 0.5 * 3.9f64.powi(2) - (0.5 * 0.9f64.powi(2) + v_avg * 3.0);
        assert!((constant_velocity_fde(&track, 0.1, 30).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn interactive_metrics_filters() {
        let s = scene_of(vec![
            constant_velocity_track(0, [0.0, 0.0], [5.0, 0.0], 3, 5),
            constant_velocity_track(1, [0.0, 30.0], [5.0, 0.0], 3, 5),
        ]);
        let b = truth_bundle(&s, 2);
        let mut g = InteractionGraph::new(2);
        g.labels.insert((0, 1), EdgeLabel::NoInteraction);
        assert_eq!(interactive_metrics(&b, &s, &g, 0.0).unwrap(), None);
        g.labels.insert((0, 1), EdgeLabel::MInfluencesN);
        assert_eq!(interactive_metrics(&b, &s, &g, 0.0).unwrap(), Some((0.0, 0.0)));
        // Constant-velocity agents are filtered out by any positive d.
        assert_eq!(interactive_metrics(&b, &s, &g, 3.0).unwrap(), None);
    }

    #[test]
    fn report_aggregation_and_table() {
        let s = scene_of(vec![constant_velocity_track(0, [0.0, 0.0], [5.0, 0.0], 3, 5)]);
        let mut b = truth_bundle(&s, 1);
        shift(&mut b, 0, 0, 2.0);
        let g = InteractionGraph::new(1);
        let m = scene_metrics(&b, &s, &g, None).unwrap();
        let r = MetricReport::aggregate("a", vec![m.clone(), m]);
        assert_eq!(r.min_fde, 2.0);
        assert_eq!(r.imin_fde, None);
        let back = MetricReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let mut r2 = r.clone();
        r2.label = "b".into();
        r2.min_fde = 1.5;
        let table = format_table(&[&r, &r2]);
        assert!(table.lines().nth(1).unwrap().ends_with("-0.5000"));
        assert!(table.contains("n/a"));
    }

    #[test]
    fn random_bundles_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(1..5);
            let agents = (0..n)
                .map(|i| {
                    constant_velocity_track(
                        i,
                        [rng.gen_range(-20.0..20.0), 10.0 * i as f64],
                        [rng.gen_range(0.0..10.0), 0.0],
                        3,
                        6,
                    )
                })
                .collect();
            let s = scene_of(agents);
            let k = rng.gen_range(1..5);
            let mut b = truth_bundle(&s, k);
            for m in 0..k {
                for a in 0..n {
                    for p in &mut b.modes[m][a] {
                        p[0] += rng.gen_range(-3.0..3.0);
                        p[1] += rng.gen_range(-3.0..3.0);
                    }
                }
            }
            let fde_k: Vec<f64> = (0..k)
                .map(|m| {
                    (0..n)
                        .map(|a| dist(b.modes[m][a][5], s.agents[a].future.as_ref().unwrap()[5].position))
                        .sum::<f64>()
                        / n as f64
                })
                .collect();
            let (fde, _, best) = joint_min_fde_ade(&b, &s).unwrap();
            assert_eq!(fde, fde_k.iter().copied().fold(f64::INFINITY, f64::min));
            assert_eq!(fde_k[best], fde);
            assert!(fde_k[..best].iter().all(|&f| f > fde));
        }
    }
}
