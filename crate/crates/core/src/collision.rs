//! Circle-footprint collision checking between two agent poses.

use crate::error::{Error, Result};

/// Agent footprint approximated by equal circles laid along the heading axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
    pub circle_centers: Vec<f64>,
}

impl Footprint {
    /// `max(1, round(length / width))` circles evenly spaced on
    /// `[-(length - width) / 2, (length - width) / 2]`.
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::NonPositiveWidth(width));
        }
        let length = length.max(width);
        let count = ((length / width).round() as usize).max(1);
        let half_span = (length - width) / 2.0;
        let circle_centers = if count == 1 {
            vec![0.0]
        } else {
            let step = 2.0 * half_span / (count - 1) as f64;
            (0..count).map(|i| -half_span + step * i as f64).collect()
        };
        Ok(Self {
            length,
            width,
            circle_centers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: [f64; 2],
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: [f64; 2], yaw: f64) -> Self {
        Self { position, yaw }
    }
}

/// Center-distance threshold `(w_i + w_j) / sqrt(3.8)`.
pub fn collision_threshold(width_i: f64, width_j: f64) -> Result<f64> {
    if !(width_i > 0.0) {
        return Err(Error::NonPositiveWidth(width_i));
    }
    if !(width_j > 0.0) {
        return Err(Error::NonPositiveWidth(width_j));
    }
    Ok((width_i + width_j) / 3.8f64.sqrt())
}

fn circle_positions<'a>(pose: &Pose, foot: &'a Footprint) -> impl Iterator<Item = [f64; 2]> + 'a {
    let (s, c) = pose.yaw.sin_cos();
    let p = pose.position;
    foot.circle_centers.iter().map(move |&off| [p[0] + off * c, p[1] + off * s])
}

/// True iff some pair of circle centers lies strictly closer than the
/// collision threshold.
pub fn poses_collide(pose_i: &Pose, foot_i: &Footprint, pose_j: &Pose, foot_j: &Footprint) -> bool {
    let threshold = (foot_i.width + foot_j.width) / 3.8f64.sqrt();
    // Cheap reject on the bounding radius of both circle chains.
    let reach = threshold + foot_i.circle_centers.last().map_or(0.0, |c| c.abs()) + foot_j.circle_centers.last().map_or(0.0, |c| c.abs());
    let dx = pose_i.position[0] - pose_j.position[0];
    let dy = pose_i.position[1] - pose_j.position[1];
    if dx * dx + dy * dy >= reach * reach {
        return false;
    }
    let centers_j: Vec<[f64; 2]> = circle_positions(pose_j, foot_j).collect();
    circle_positions(pose_i, foot_i).any(|ci| centers_j.iter().any(|cj| (ci[0] - cj[0]).hypot(ci[1] - cj[1]) < threshold))
}
