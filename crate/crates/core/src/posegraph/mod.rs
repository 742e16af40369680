//! SE(2) pose graphs: group algebra, edge residuals, Levenberg-Marquardt
//! optimization and the trajectory alignment primitives used for scoring.

mod align;
mod optimize;
mod skyline;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::KeyframeId;

pub use align::{kabsch_align, rmse, RigidTransform2};
pub use optimize::{optimize, LmSettings, OptimizeReport, Optimized};
pub use skyline::SkylineMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseGraphError {
    #[error("edge {from}->{to} references a missing node")]
    DanglingEdge { from: KeyframeId, to: KeyframeId },
    #[error("edge endpoints must differ (node {0})")]
    SelfLoop(KeyframeId),
    #[error("graph is disconnected: {unreached} node(s) unreachable from anchor {anchor}")]
    DisconnectedGraph { anchor: KeyframeId, unreached: usize },
    #[error("information matrix of edge {from}->{to} is not symmetric positive definite")]
    BadInformation { from: KeyframeId, to: KeyframeId },
    #[error("normal equations are not positive definite")]
    SingularSystem,
    #[error("trajectory lengths differ: {est} estimated vs {gt} ground truth")]
    LengthMismatch { est: usize, gt: usize },
    #[error("alignment needs at least two distinct points")]
    DegenerateAlignment,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory CSV: {0}")]
    Csv(String),
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, b: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * b.x - s * b.y,
            self.y + s * b.x + c * b.y,
            self.theta + b.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.theta,
        )
    }

    /// `self^-1 * b`: the pose of `b` expressed in the frame of `self`.
    pub fn between(&self, b: &Pose2) -> Pose2 {
        self.inverse().compose(b)
    }

    /// Applies the pose as a rigid transform to a point.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// Relative-pose constraint: `relative` is the pose of `to` in the frame of `from`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub from: KeyframeId,
    pub to: KeyframeId,
    pub relative: Pose2,
    pub information: Matrix3<f64>,
    pub kind: EdgeKind,
}

impl GraphEdge {
    /// Edge whose information is the inverse of a diagonal covariance.
    pub fn with_sigmas(
        from: KeyframeId,
        to: KeyframeId,
        relative: Pose2,
        sigma_xy: f64,
        sigma_theta: f64,
        kind: EdgeKind,
    ) -> Self {
        let ixy = 1.0 / (sigma_xy * sigma_xy);
        let it = 1.0 / (sigma_theta * sigma_theta);
        Self {
            from,
            to,
            relative,
            information: Matrix3::from_diagonal(&Vector3::new(ixy, ixy, it)),
            kind,
        }
    }

    fn information_is_spd(&self) -> bool {
        let m = &self.information;
        let sym = (m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1.0);
        sym && m.iter().all(|v| v.is_finite()) && m.cholesky().is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: BTreeMap<KeyframeId, Pose2>,
    pub edges: Vec<GraphEdge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: KeyframeId, pose: Pose2) {
        self.nodes.insert(id, pose);
    }

    pub fn add_edge(&mut self, edge: GraphEdge) -> Result<(), PoseGraphError> {
        if edge.from == edge.to {
            return Err(PoseGraphError::SelfLoop(edge.from));
        }
        if !self.nodes.contains_key(&edge.from) || !self.nodes.contains_key(&edge.to) {
            return Err(PoseGraphError::DanglingEdge {
                from: edge.from,
                to: edge.to,
            });
        }
        if !edge.information_is_spd() {
            return Err(PoseGraphError::BadInformation {
                from: edge.from,
                to: edge.to,
            });
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn loop_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop)
    }

    /// Undirected adjacency over all edges.
    pub fn adjacency(&self) -> BTreeMap<KeyframeId, BTreeSet<KeyframeId>> {
        let mut adj: BTreeMap<KeyframeId, BTreeSet<KeyframeId>> =
            self.nodes.keys().map(|&k| (k, BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(e.from).or_default().insert(e.to);
            adj.entry(e.to).or_default().insert(e.from);
        }
        adj
    }

    /// Breadth-first hop counts from `start`, up to `max_depth` hops.
    pub fn hop_distances(
        &self,
        start: KeyframeId,
        max_depth: Option<usize>,
    ) -> BTreeMap<KeyframeId, usize> {
        let adj = self.adjacency();
        hop_distances(&adj, &[start], max_depth)
    }

    pub fn total_error(&self) -> Result<f64, PoseGraphError> {
        total_error(self)
    }
}

/// Multi-source BFS over an adjacency map.
pub fn hop_distances(
    adj: &BTreeMap<KeyframeId, BTreeSet<KeyframeId>>,
    sources: &[KeyframeId],
    max_depth: Option<usize>,
) -> BTreeMap<KeyframeId, usize> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in sources {
        if adj.contains_key(&s) && dist.insert(s, 0).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        if max_depth.is_some_and(|m| d >= m) {
            continue;
        }
        for &m in &adj[&n] {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                e.insert(d + 1);
                queue.push_back(m);
            }
        }
    }
    dist
}

fn endpoints<'a>(
    edge: &GraphEdge,
    nodes: &'a BTreeMap<KeyframeId, Pose2>,
) -> Result<(&'a Pose2, &'a Pose2), PoseGraphError> {
    match (nodes.get(&edge.from), nodes.get(&edge.to)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(PoseGraphError::DanglingEdge {
            from: edge.from,
            to: edge.to,
        }),
    }
}

fn residual_of(edge: &GraphEdge, xi: &Pose2, xj: &Pose2) -> Vector3<f64> {
    let d = edge.relative.between(&xi.between(xj));
    Vector3::new(d.x, d.y, wrap_angle(d.theta))
}

/// Error of the predicted relative pose against the measurement, expressed
/// in the measurement frame, angle wrapped.
pub fn residual(
    edge: &GraphEdge,
    nodes: &BTreeMap<KeyframeId, Pose2>,
) -> Result<Vector3<f64>, PoseGraphError> {
    let (xi, xj) = endpoints(edge, nodes)?;
    Ok(residual_of(edge, xi, xj))
}

/// Analytic Jacobians of [`residual`] with respect to the `from` and `to`
/// node parameters `(x, y, theta)`.
pub fn residual_jacobians(
    edge: &GraphEdge,
    nodes: &BTreeMap<KeyframeId, Pose2>,
) -> Result<(Matrix3<f64>, Matrix3<f64>), PoseGraphError> {
    let (xi, xj) = endpoints(edge, nodes)?;
    Ok(jacobians_of(edge, xi, xj))
}

fn jacobians_of(edge: &GraphEdge, xi: &Pose2, xj: &Pose2) -> (Matrix3<f64>, Matrix3<f64>) {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = edge.relative.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // Rz^T * Ri^T, and Rz^T * d(Ri^T)/dtheta_i * (tj - ti)
    let c = cz * ci - sz * si; // cos(theta_i + theta_z)
    let s = cz * si + sz * ci; // sin(theta_i + theta_z)
    let rot = nalgebra::Matrix2::new(c, s, -s, c);
    let drot = nalgebra::Matrix2::new(-s, c, -c, -s);
    let dtheta = drot * nalgebra::Vector2::new(dx, dy);

    let mut ja = Matrix3::zeros();
    ja.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-rot));
    ja[(0, 2)] = dtheta[0];
    ja[(1, 2)] = dtheta[1];
    ja[(2, 2)] = -1.0;

    let mut jb = Matrix3::zeros();
    jb.fixed_view_mut::<2, 2>(0, 0).copy_from(&rot);
    jb[(2, 2)] = 1.0;
    (ja, jb)
}

/// Sum of information-weighted squared residuals.
pub fn total_error(graph: &PoseGraph) -> Result<f64, PoseGraphError> {
    graph.edges.iter().try_fold(0.0, |acc, e| {
        let r = residual(e, &graph.nodes)?;
        Ok(acc + (r.transpose() * e.information * r)[0])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub keyframe_id: KeyframeId,
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
}

impl TrajectoryRow {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x_m, self.y_m, self.theta_rad)
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], w: W) -> Result<(), PoseGraphError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| PoseGraphError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| PoseGraphError::Csv(e.to_string()))
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TrajectoryRow>, PoseGraphError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PoseGraphError::Csv(e.to_string()))
}
