use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use super::skyline::SkylineMatrix;
use super::{hop_distances, jacobians_of, residual_of, total_error, PoseGraph, PoseGraphError};
use crate::KeyframeId;

/// Relative error change below which the optimizer stops.
pub const RELATIVE_TOLERANCE: f64 = 1e-9;
/// Total error treated as an exact fit (round-off of a consistent graph).
pub const CONSISTENT_ERROR: f64 = 1e-20;
const MAX_DAMPING: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmSettings {
    pub max_iters: usize,
    pub damping_init: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iters: 50,
            damping_init: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizeReport {
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_error: f64,
    pub final_error: f64,
    /// Error after the initial state and after every accepted step.
    pub error_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Optimized {
    pub graph: PoseGraph,
    pub report: OptimizeReport,
}

/// Levenberg-Marquardt on the information-weighted squared residuals. The
/// lowest node id is held fixed as the gauge anchor. A step is kept only if
/// it lowers the error; damping is divided by 10 after an accepted step and
/// multiplied by 10 after a rejected one.
pub fn optimize(
    graph: &PoseGraph,
    max_iters: usize,
    damping_init: f64,
) -> Result<Optimized, PoseGraphError> {
    for e in &graph.edges {
        super::endpoints(e, &graph.nodes)?;
        if e.from == e.to {
            return Err(PoseGraphError::SelfLoop(e.from));
        }
        if !e.information_is_spd() {
            return Err(PoseGraphError::BadInformation {
                from: e.from,
                to: e.to,
            });
        }
    }
    let Some(&anchor) = graph.nodes.keys().next() else {
        return Ok(Optimized {
            graph: graph.clone(),
            report: OptimizeReport::default(),
        });
    };
    let reached = hop_distances(&graph.adjacency(), &[anchor], None);
    if reached.len() != graph.nodes.len() {
        return Err(PoseGraphError::DisconnectedGraph {
            anchor,
            unreached: graph.nodes.len() - reached.len(),
        });
    }

    let initial_error = total_error(graph)?;
    let mut report = OptimizeReport {
        initial_error,
        final_error: initial_error,
        error_trace: vec![initial_error],
        ..Default::default()
    };
    let mut current = graph.clone();
    if initial_error <= CONSISTENT_ERROR || graph.edges.is_empty() {
        return Ok(Optimized {
            graph: current,
            report,
        });
    }

    let (order, first) = block_order(graph, anchor);

    let mut damping = damping_init;
    let mut error = initial_error;
    while report.iterations < max_iters {
        let (mut h, b) = normal_equations(&current, &order, &first);
        let n = h.dim();
        let mean_diag = (0..n).map(|i| h.get(i, i)).sum::<f64>() / n.max(1) as f64;
        for i in 0..n {
            h.add(i, i, damping * mean_diag);
        }
        report.iterations += 1;
        if !h.factorize() {
            damping *= 10.0;
            if damping > MAX_DAMPING {
                return Err(PoseGraphError::SingularSystem);
            }
            continue;
        }
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let step = h.solve_factored(&neg_b);

        let mut candidate = current.clone();
        for (&id, &blk) in &order {
            let p = candidate.nodes.get_mut(&id).expect("ordered node exists");
            *p = super::Pose2::new(
                p.x + step[3 * blk],
                p.y + step[3 * blk + 1],
                p.theta + step[3 * blk + 2],
            );
        }
        let new_error = total_error(&candidate)?;
        if new_error < error {
            let rel = (error - new_error) / error;
            current = candidate;
            error = new_error;
            report.accepted_steps += 1;
            report.error_trace.push(error);
            damping /= 10.0;
            if rel < RELATIVE_TOLERANCE || error <= CONSISTENT_ERROR {
                break;
            }
        } else {
            damping *= 10.0;
            if damping > MAX_DAMPING {
                break;
            }
        }
    }
    report.final_error = error;
    Ok(Optimized {
        graph: current,
        report,
    })
}

/// Variable block order (anchor excluded) and its skyline envelope: id order
/// or reverse Cuthill-McKee, whichever stores fewer entries. Long loop edges
/// make id order nearly dense; the bandwidth-reducing order keeps the
/// factorization cheap.
fn block_order(graph: &PoseGraph, anchor: KeyframeId) -> (BTreeMap<KeyframeId, usize>, Vec<usize>) {
    let ids: Vec<KeyframeId> = graph.nodes.keys().copied().filter(|&k| k != anchor).collect();
    let natural: BTreeMap<KeyframeId, usize> = ids.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let natural_first = envelope(graph, &natural);
    let rcm = reverse_cuthill_mckee(graph, &ids, anchor);
    let rcm_first = envelope(graph, &rcm);
    let size = |first: &[usize]| first.iter().enumerate().map(|(r, &f)| r + 1 - f).sum::<usize>();
    if size(&rcm_first) < size(&natural_first) {
        (rcm, rcm_first)
    } else {
        (natural, natural_first)
    }
}

fn reverse_cuthill_mckee(graph: &PoseGraph, ids: &[KeyframeId], anchor: KeyframeId) -> BTreeMap<KeyframeId, usize> {
    let mut adj: BTreeMap<KeyframeId, Vec<KeyframeId>> = ids.iter().map(|&k| (k, Vec::new())).collect();
    for e in &graph.edges {
        if e.from != anchor && e.to != anchor && e.from != e.to {
            adj.get_mut(&e.from).expect("endpoint checked").push(e.to);
            adj.get_mut(&e.to).expect("endpoint checked").push(e.from);
        }
    }
    for list in adj.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree = |k: &KeyframeId| adj[k].len();
    let mut seeds: Vec<KeyframeId> = ids.to_vec();
    seeds.sort_by_key(|k| (degree(k), *k));
    let mut visited: std::collections::BTreeSet<KeyframeId> = std::collections::BTreeSet::new();
    let mut sequence = Vec::with_capacity(ids.len());
    for s in seeds {
        if !visited.insert(s) {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(k) = queue.pop_front() {
            sequence.push(k);
            let mut next: Vec<KeyframeId> = adj[&k].iter().copied().filter(|n| !visited.contains(n)).collect();
            next.sort_by_key(|n| (degree(n), *n));
            for n in next {
                visited.insert(n);
                queue.push_back(n);
            }
        }
    }
    sequence.iter().rev().enumerate().map(|(i, &k)| (k, i)).collect()
}

/// First stored column of each scalar row of the Hessian.
fn envelope(graph: &PoseGraph, order: &BTreeMap<KeyframeId, usize>) -> Vec<usize> {
    let mut first_block: Vec<usize> = (0..order.len()).collect();
    for e in &graph.edges {
        if let (Some(&a), Some(&b)) = (order.get(&e.from), order.get(&e.to)) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first_block[hi] = first_block[hi].min(lo);
        }
    }
    first_block
        .iter()
        .flat_map(|&f| std::iter::repeat_n(3 * f, 3))
        .collect()
}

fn normal_equations(
    graph: &PoseGraph,
    order: &BTreeMap<KeyframeId, usize>,
    first: &[usize],
) -> (SkylineMatrix, Vec<f64>) {
    let mut h = SkylineMatrix::new(first.to_vec());
    let mut b = vec![0.0; first.len()];
    for e in &graph.edges {
        let xi = &graph.nodes[&e.from];
        let xj = &graph.nodes[&e.to];
        let r = residual_of(e, xi, xj);
        let (ja, jb) = jacobians_of(e, xi, xj);
        let blocks = [(order.get(&e.from), ja), (order.get(&e.to), jb)];
        let wr: Vector3<f64> = e.information * r;
        for (bi, ji) in &blocks {
            let Some(&bi) = bi else { continue };
            let g = ji.transpose() * wr;
            for k in 0..3 {
                b[3 * bi + k] += g[k];
            }
            for (bj, jj) in &blocks {
                let Some(&bj) = bj else { continue };
                if bj > bi {
                    continue;
                }
                let blk: Matrix3<f64> = ji.transpose() * e.information * jj;
                for r in 0..3 {
                    for c in 0..3 {
                        let (gr, gc) = (3 * bi + r, 3 * bj + c);
                        if gc <= gr {
                            h.add(gr, gc, blk[(r, c)]);
                        }
                    }
                }
            }
        }
    }
    (h, b)
}

#[cfg(test)]
mod tests {
    use super::super::{EdgeKind, GraphEdge, Pose2};
    use super::*;

    fn edge(from: KeyframeId, to: KeyframeId, rel: Pose2, kind: EdgeKind) -> GraphEdge {
        GraphEdge::with_sigmas(from, to, rel, 0.1, 0.05, kind)
    }

    #[test]
    fn consistent_graph_unchanged() {
        let mut g = PoseGraph::new();
        let poses = [
            Pose2::identity(),
            Pose2::new(1.0, 0.0, 0.5),
            Pose2::new(1.5, 0.8, 1.2),
        ];
        for (i, p) in poses.iter().enumerate() {
            g.add_node(i as KeyframeId, *p);
        }
        for i in 0..2 {
            let rel = poses[i].between(&poses[i + 1]);
            g.add_edge(edge(i as KeyframeId, i as KeyframeId + 1, rel, EdgeKind::Odometry))
                .unwrap();
        }
        let out = optimize(&g, 20, 1e-4).unwrap();
        assert!(out.report.initial_error <= CONSISTENT_ERROR);
        assert_eq!(out.report.final_error, out.report.initial_error);
        assert_eq!(out.report.iterations, 0);
        assert_eq!(out.graph, g);
    }

    #[test]
    fn noisy_square_with_exact_loop() {
        // Four corners of a 10 m square, odometry corrupted by hand.
        let truth = [
            Pose2::new(0.0, 0.0, 0.0),
            Pose2::new(10.0, 0.0, std::f64::consts::FRAC_PI_2),
            Pose2::new(10.0, 10.0, std::f64::consts::PI),
            Pose2::new(0.0, 10.0, -std::f64::consts::FRAC_PI_2),
        ];
        let noise = [
            Pose2::new(0.3, -0.2, 0.05),
            Pose2::new(-0.25, 0.3, -0.04),
            Pose2::new(0.2, 0.15, 0.06),
        ];
        let mut g = PoseGraph::new();
        let mut est = truth[0];
        g.add_node(0, est);
        for i in 0..3 {
            let z = truth[i].between(&truth[i + 1]).compose(&noise[i]);
            est = est.compose(&z);
            g.add_node(i as KeyframeId + 1, est);
            g.add_edge(edge(i as KeyframeId, i as KeyframeId + 1, z, EdgeKind::Odometry))
                .unwrap();
        }
        g.add_edge(edge(3, 0, truth[3].between(&truth[0]), EdgeKind::Loop))
            .unwrap();
        let out = optimize(&g, 50, 1e-4).unwrap();
        assert!(out.report.final_error * 10.0 <= out.report.initial_error);
        assert_eq!(out.graph.nodes[&0], g.nodes[&0]);
        for w in out.report.error_trace.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn disconnected_and_bad_information() {
        let mut g = PoseGraph::new();
        for i in 0..3 {
            g.add_node(i, Pose2::identity());
        }
        g.add_edge(edge(0, 1, Pose2::new(1.0, 0.0, 0.0), EdgeKind::Odometry))
            .unwrap();
        assert_eq!(
            optimize(&g, 10, 1e-4).unwrap_err(),
            PoseGraphError::DisconnectedGraph {
                anchor: 0,
                unreached: 1
            }
        );
        let mut bad = edge(1, 2, Pose2::identity(), EdgeKind::Odometry);
        bad.information = Matrix3::zeros();
        g.edges.push(bad);
        assert_eq!(
            optimize(&g, 10, 1e-4).unwrap_err(),
            PoseGraphError::BadInformation { from: 1, to: 2 }
        );
    }

    #[test]
    fn odometry_chain_has_zero_error() {
        let mut g = PoseGraph::new();
        let mut p = Pose2::identity();
        g.add_node(0, p);
        for i in 1..20 {
            let z = Pose2::new(0.5, 0.0, 0.1);
            p = p.compose(&z);
            g.add_node(i, p);
            g.add_edge(edge(i - 1, i, z, EdgeKind::Odometry)).unwrap();
        }
        let out = optimize(&g, 10, 1e-4).unwrap();
        assert!(out.report.final_error < 1e-20);
    }
}
