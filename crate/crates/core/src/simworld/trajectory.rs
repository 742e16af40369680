use serde::{Deserialize, Serialize};

use super::{Corridor, Shape, SimError, TrajectorySpec};
use crate::posegraph::Pose2;

/// Traversal of one corridor from arc position `from_s` to `to_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Leg {
    pub corridor: usize,
    pub from_s: f64,
    pub to_s: f64,
}

impl Leg {
    fn length(&self) -> f64 {
        (self.to_s - self.from_s).abs()
    }

    fn pose_at(&self, c: &Corridor, along: f64) -> Pose2 {
        let dir = (self.to_s - self.from_s).signum();
        let p = c.point_at(self.from_s + dir * along);
        let (_, ang) = c.axis();
        let heading = if dir >= 0.0 { ang } else { ang + std::f64::consts::PI };
        Pose2::new(p[0], p[1], heading)
    }
}

fn corr(start: [f64; 2], end: [f64; 2]) -> Corridor {
    Corridor {
        start,
        end,
        template: 0,
    }
}

fn leg(corridor: usize, from_s: f64, to_s: f64) -> Leg {
    Leg {
        corridor,
        from_s,
        to_s,
    }
}

/// Corridors (templates unassigned) and the legs that traverse them.
pub(crate) fn layout(spec: &TrajectorySpec) -> (Vec<Corridor>, Vec<Leg>) {
    let a = spec.scale;
    match spec.shape {
        Shape::SquareLoop | Shape::LongTrack => {
            let b = if spec.shape == Shape::SquareLoop { a } else { 0.3 * a };
            let corridors = vec![
                corr([0.0, 0.0], [a, 0.0]),
                corr([a, 0.0], [a, b]),
                corr([a, b], [0.0, b]),
                corr([0.0, b], [0.0, 0.0]),
            ];
            let legs = vec![
                leg(0, a / 2.0, a),
                leg(1, 0.0, b),
                leg(2, 0.0, a),
                leg(3, 0.0, b),
                leg(0, 0.0, a / 2.0),
            ];
            (corridors, legs)
        }
        Shape::FigureEight => {
            // Large loop to the right of the crossing, small loop to the
            // lower left; one horizontal corridor runs through the crossing.
            let (l_big, h_big) = (a, 2.0 * a / 3.0);
            let (l_small, h_small) = (a / 2.0, a / 2.0);
            let corridors = vec![
                corr([-l_small, 0.0], [l_big, 0.0]),
                corr([l_big, 0.0], [l_big, h_big]),
                corr([l_big, h_big], [0.0, h_big]),
                corr([0.0, h_big], [0.0, -h_small]),
                corr([0.0, -h_small], [-l_small, -h_small]),
                corr([-l_small, -h_small], [-l_small, 0.0]),
            ];
            let legs = vec![
                leg(0, l_small, l_small + l_big),
                leg(1, 0.0, h_big),
                leg(2, 0.0, l_big),
                leg(3, 0.0, h_big + h_small),
                leg(4, 0.0, l_small),
                leg(5, 0.0, h_small),
                leg(0, 0.0, l_small),
            ];
            (corridors, legs)
        }
        Shape::NineLoop => {
            // Up a tail into a loop, round the loop, back down the tail.
            let (tail, h, w) = (a / 2.0, a, 0.625 * a);
            let corridors = vec![
                corr([0.0, -tail], [0.0, h]),
                corr([0.0, h], [-w, h]),
                corr([-w, h], [-w, 0.0]),
                corr([-w, 0.0], [0.0, 0.0]),
            ];
            let legs = vec![
                leg(0, 0.0, tail + h),
                leg(1, 0.0, w),
                leg(2, 0.0, h),
                leg(3, 0.0, w),
                leg(0, tail, 0.0),
            ];
            (corridors, legs)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose2,
    /// Arc length travelled so far.
    pub arc: f64,
    /// Index of the leg (corridor traversal) the sample lies on.
    pub leg: usize,
    /// Set on the one frame emitted while dwelling.
    pub dwell: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub index: usize,
    pub t_start: f64,
    pub arc: f64,
    pub pose: Pose2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub dwells: Vec<Dwell>,
    pub length: f64,
}

fn pose_at_arc(corridors: &[Corridor], legs: &[Leg], arc: f64) -> (Pose2, usize) {
    let mut rest = arc;
    for (i, l) in legs.iter().enumerate() {
        let last = i + 1 == legs.len();
        if rest < l.length() || last {
            return (l.pose_at(&corridors[l.corridor], rest.min(l.length())), i);
        }
        rest -= l.length();
    }
    unreachable!("layouts have at least one leg")
}

/// Constant-speed traversal of the shape sampled at `frame_rate_hz`, with a
/// dwell of `pause_duration` every `pause_every` metres of arc length.
/// While dwelling only the first frame is kept; a final frame is added at the
/// end of the path if the clock does not land on it.
pub fn generate_trajectory(spec: &TrajectorySpec, frame_rate_hz: f64) -> Result<Trajectory, SimError> {
    if !(spec.scale > 0.0 && spec.speed > 0.0 && spec.pause_every > 0.0 && spec.pause_duration > 0.0)
        || !(frame_rate_hz > 0.0)
    {
        return Err(SimError::InvalidConfig("trajectory magnitudes must be positive".into()));
    }
    let (corridors, legs) = layout(spec);
    let length: f64 = legs.iter().map(Leg::length).sum();
    let n_dwells = (length / spec.pause_every + 1e-9).floor() as usize;
    let dwells: Vec<Dwell> = (0..n_dwells)
        .map(|k| {
            let arc = ((k + 1) as f64 * spec.pause_every).min(length);
            Dwell {
                index: k,
                t_start: arc / spec.speed + k as f64 * spec.pause_duration,
                arc,
                pose: pose_at_arc(&corridors, &legs, arc).0,
            }
        })
        .collect();
    let end_time = length / spec.speed + n_dwells as f64 * spec.pause_duration;

    let mut samples: Vec<TrajectorySample> = Vec::new();
    let mut tick: u64 = 0;
    let mut next_dwell = 0;
    loop {
        let t = tick as f64 / frame_rate_hz;
        if t > end_time + 1e-9 {
            break;
        }
        tick += 1;
        // Skip past dwells that ended before t.
        while next_dwell < dwells.len() && t >= dwells[next_dwell].t_start + spec.pause_duration {
            next_dwell += 1;
        }
        let in_dwell = next_dwell < dwells.len() && t >= dwells[next_dwell].t_start;
        let (arc, dwell) = if in_dwell {
            let d = &dwells[next_dwell];
            if samples.last().and_then(|s| s.dwell) == Some(d.index) {
                continue;
            }
            (d.arc, Some(d.index))
        } else {
            ((t - next_dwell as f64 * spec.pause_duration) * spec.speed, None)
        };
        let arc = arc.min(length);
        // A stationary robot produces no new frame.
        if dwell.is_none() && samples.last().is_some_and(|s| s.arc >= arc - 1e-9) {
            continue;
        }
        let (pose, leg) = pose_at_arc(&corridors, &legs, arc);
        samples.push(TrajectorySample {
            t,
            pose,
            arc,
            leg,
            dwell,
        });
    }
    if samples.last().is_none_or(|s| s.arc < length - 1e-9) {
        let (pose, leg) = pose_at_arc(&corridors, &legs, length);
        samples.push(TrajectorySample {
            t: end_time,
            pose,
            arc: length,
            leg,
            dwell: None,
        });
    }
    Ok(Trajectory {
        samples,
        dwells,
        length,
    })
}
