//! Loop-closure candidate selection under three host policies, each in a
//! vanilla and a Wi-Fi-gated mode, and the per-frame pipeline that drives
//! them.
//!
//! Per frame the pipeline associates the latest Wi-Fi signature, finds the
//! similar clusters (gated mode only), asks the policy for candidates,
//! matches the frame against each candidate, adds the odometry edge and the
//! best loop edge to the pose graph, updates the clusters and optimizes the
//! graph on schedule. Every decision is a deterministic function of the
//! dataset, the parameters and the run seed; wall-clock timings are recorded
//! for reporting only.

mod orb;
mod rgbd;
mod rtab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterStore, SimilarClusters};
use crate::frontend::{match_frames, Covisibility, FrameView, MatchParams};
use crate::posegraph::{optimize, EdgeKind, GraphEdge, PoseGraph, PoseGraphError, TrajectoryRow};
use crate::signature::{associate_frames, signatures_from_log, Signature};
use crate::simworld::Dataset;
use crate::KeyframeId;

pub use orb::{orb_candidates, orb_cluster_management, OrbIndexes};
pub use rgbd::{rgbd_candidates, RgbdParams};
pub use rtab::{rtab_step, MemoryState, RtabContext, RtabParams, RtabStep};

/// Scan rows without a dwell index are split into dwells on time gaps longer
/// than this (s).
pub const SCAN_GAP_S: f64 = 5.0;

#[derive(Debug, Error)]
pub enum GatingError {
    #[error("bad dataset at frame {frame}: {reason}")]
    BadDataset { frame: usize, reason: String },
    #[error("memory state corrupted: {0}")]
    MemoryCorruption(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    PoseGraph(#[from] PoseGraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Rgbd,
    Rtab,
    Orb,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Rgbd, Policy::Rtab, Policy::Orb];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Rgbd => "rgbd",
            Policy::Rtab => "rtab",
            Policy::Orb => "orb",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgbd" => Ok(Policy::Rgbd),
            "rtab" => Ok(Policy::Rtab),
            "orb" => Ok(Policy::Orb),
            _ => Err(format!("unknown policy `{s}` (valid: rgbd, rtab, orb)")),
        }
    }
}

/// Deterministic cost units charged per operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// One frame-to-frame comparison.
    pub comparison: f64,
    /// One signature-to-representative similarity evaluation.
    pub similarity_eval: f64,
    /// One cluster-management operation (assignment, index insert,
    /// retrieval or immunization).
    pub management_op: f64,
    /// One optimizer iteration.
    pub optimize_iteration: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            comparison: 1.0,
            similarity_eval: 0.05,
            management_op: 0.05,
            optimize_iteration: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub policy: Policy,
    pub gated: bool,
    pub min_matches: usize,
    pub inlier_distance: f64,
    pub wifi_threshold: f64,
    pub rgbd: RgbdParams,
    pub rtab: RtabParams,
    pub keep_probability: f64,
    pub match_sigma_xy: f64,
    pub match_sigma_theta: f64,
    /// Accepted matches closer in time than this (s) are local, not loops.
    pub loop_min_time_gap: f64,
    pub optimize_every: usize,
    pub lm_max_iters: usize,
    pub lm_damping_init: f64,
    pub cost: CostModel,
}

impl Default for PolicyParams {
    fn default() -> Self {
        let m = MatchParams::default();
        Self {
            policy: Policy::Orb,
            gated: true,
            min_matches: m.min_matches,
            inlier_distance: m.inlier_distance,
            wifi_threshold: 0.85,
            rgbd: RgbdParams::default(),
            rtab: RtabParams::default(),
            keep_probability: m.keep_probability,
            match_sigma_xy: m.sigma_xy,
            match_sigma_theta: m.sigma_theta,
            loop_min_time_gap: 30.0,
            optimize_every: 25,
            lm_max_iters: 50,
            lm_damping_init: 1e-4,
            cost: CostModel::default(),
        }
    }
}

impl PolicyParams {
    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            min_matches: self.min_matches,
            inlier_distance: self.inlier_distance,
            keep_probability: self.keep_probability,
            sigma_xy: self.match_sigma_xy,
            sigma_theta: self.match_sigma_theta,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.wifi_threshold > 0.0 && self.wifi_threshold <= 1.0) {
            return Err(format!("wifi_threshold must be in (0, 1], got {}", self.wifi_threshold));
        }
        if !(self.inlier_distance > 0.0) {
            return Err("inlier_distance must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return Err("keep_probability must be in [0, 1]".into());
        }
        if !(self.match_sigma_xy > 0.0 && self.match_sigma_theta > 0.0) {
            return Err("match sigmas must be positive".into());
        }
        if self.rtab.real_time_threshold.is_some_and(|t| !(t > 0.0)) {
            return Err("real_time_threshold must be positive".into());
        }
        Ok(())
    }
}

/// What happened at one pipeline step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopEvent {
    pub step: usize,
    /// The current keyframe.
    pub from: KeyframeId,
    /// Older end of the loop edge added this step, if any.
    pub to: Option<KeyframeId>,
    pub accepted: bool,
    pub candidate_count: usize,
    pub comparisons_cost: f64,
    /// Matches of the loop edge.
    pub num_matches: usize,
    /// Accepted matches with recent keyframes (no loop edge).
    pub local_matches: usize,
    /// Accepted matches old enough to close a loop.
    pub loop_matches: usize,
    pub similar_clusters: usize,
    /// Gated inverted-index runs: whether the candidates were a subset of
    /// what the global index would have returned.
    pub subset_of_vanilla: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryTraceRow {
    pub step: usize,
    pub stm: usize,
    pub wm: usize,
    pub ltm: usize,
    pub immune: usize,
    pub transfers: usize,
    pub retrievals: usize,
}

/// Deterministic costs and wall-clock seconds per category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCosts {
    pub loop_closure: f64,
    pub clustering: f64,
    pub management: f64,
    pub optimization: f64,
    pub loop_closure_s: f64,
    pub clustering_s: f64,
    pub management_s: f64,
    pub optimization_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dataset: String,
    pub seed: u64,
    pub params: PolicyParams,
    pub graph: PoseGraph,
    pub store: ClusterStore,
    pub events: Vec<LoopEvent>,
    pub memory_trace: Vec<MemoryTraceRow>,
    pub costs: RunCosts,
    pub frame_times: BTreeMap<KeyframeId, f64>,
    pub optimizer_runs: usize,
}

impl RunRecord {
    /// Loop edges accepted during the run as `(older, newer)` pairs, in step order.
    pub fn loop_edges(&self) -> Vec<(KeyframeId, KeyframeId)> {
        self.events
            .iter()
            .filter_map(|e| e.to.filter(|_| e.accepted).map(|to| (to, e.from)))
            .collect()
    }

    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        self.graph
            .nodes
            .iter()
            .map(|(&k, p)| TrajectoryRow {
                keyframe_id: k,
                t_s: self.frame_times.get(&k).copied().unwrap_or(0.0),
                x_m: p.x,
                y_m: p.y,
                theta_rad: p.theta,
            })
            .collect()
    }

    pub fn write_events_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_memory_trace_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["step", "stm", "wm", "ltm", "immune", "transfers", "retrievals"])?;
        for r in &self.memory_trace {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_frames(ds: &Dataset) -> Result<(), GatingError> {
    for (i, f) in ds.frames.iter().enumerate() {
        let bad = |reason: String| Err(GatingError::BadDataset { frame: i, reason });
        if f.appearance.words().is_empty() {
            return bad(format!("keyframe {} has no visual words", f.id));
        }
        if !(f.t.is_finite()) {
            return bad("non-finite timestamp".into());
        }
        if i > 0 {
            let prev = &ds.frames[i - 1];
            if f.id <= prev.id {
                return bad(format!("keyframe ids must increase ({} after {})", f.id, prev.id));
            }
            if f.t < prev.t {
                return bad("frames are not time-ordered".into());
            }
        }
    }
    Ok(())
}

/// Runs the full pipeline over a dataset.
pub fn run_pipeline(ds: &Dataset, params: &PolicyParams, seed: u64) -> Result<RunRecord, GatingError> {
    params
        .validate()
        .map_err(|reason| GatingError::BadDataset { frame: 0, reason })?;
    check_frames(ds)?;
    let signatures: Vec<Signature> = signatures_from_log(&ds.scans, SCAN_GAP_S);
    let times: Vec<f64> = ds.frames.iter().map(|f| f.t).collect();
    let association = if signatures.is_empty() {
        if params.gated && !ds.frames.is_empty() {
            return Err(GatingError::BadDataset {
                frame: 0,
                reason: "gated run needs Wi-Fi scans".into(),
            });
        }
        Vec::new()
    } else {
        associate_frames(&times, &signatures).expect("signatures non-empty")
    };

    let mp = params.match_params();
    let cost = params.cost;
    let odo = ds.config.odometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5247_4244);

    let mut graph = PoseGraph::new();
    let mut adjacency: BTreeMap<KeyframeId, BTreeSet<KeyframeId>> = BTreeMap::new();
    let mut prior: Vec<KeyframeId> = Vec::new();
    let mut store = ClusterStore::new();
    let mut covis = Covisibility::new();
    let mut indexes = OrbIndexes::new();
    let mut memory = MemoryState::new();
    let mut events = Vec::with_capacity(ds.frames.len());
    let mut memory_trace = Vec::new();
    let mut costs = RunCosts::default();
    let mut last_matches: Vec<KeyframeId> = Vec::new();
    let mut last_opt_iters = 0usize;
    let mut optimizer_runs = 0;
    let by_id: BTreeMap<KeyframeId, usize> = ds.frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    let view = |k: KeyframeId| {
        let f = &ds.frames[by_id[&k]];
        FrameView {
            id: f.id,
            appearance: &f.appearance,
            sighting: f.sighting(),
        }
    };

    for (step, frame) in ds.frames.iter().enumerate() {
        let cur = frame.id;
        let prev = prior.last().copied();
        let signature = association.get(step).map(|&s| &signatures[s]);

        // Similar clusters.
        let clock = Instant::now();
        let similar: Option<SimilarClusters> = match (params.gated, signature) {
            (true, Some(sig)) => {
                costs.clustering += store.len() as f64 * cost.similarity_eval;
                Some(store.similar_clusters(sig, params.wifi_threshold)?)
            }
            _ => None,
        };
        costs.clustering_s += clock.elapsed().as_secs_f64();

        // Candidates.
        let clock = Instant::now();
        let mut management_ops = 0usize;
        let mut subset_of_vanilla = None;
        let candidates: Vec<KeyframeId> = match params.policy {
            Policy::Rgbd => {
                let members = similar.as_ref().map(|s| store.members_of(s));
                rgbd_candidates(&prior, &adjacency, members.as_deref(), &params.rgbd, &mut rng)
            }
            Policy::Rtab => {
                let members: Option<BTreeSet<KeyframeId>> =
                    similar.as_ref().map(|s| store.members_of(s).into_iter().collect());
                let anchors: Vec<KeyframeId> = prev.into_iter().chain(last_matches.iter().copied()).collect();
                let ctx = RtabContext {
                    current: cur,
                    similar_members: members.as_ref(),
                    adjacency: &adjacency,
                    anchors: &anchors,
                    base_cost: last_opt_iters as f64 * cost.optimize_iteration,
                    comparison_cost: cost.comparison,
                };
                let out = rtab_step(&mut memory, &ctx, &params.rtab)?;
                if params.gated {
                    management_ops += out.retrievals.len() + out.newly_immune;
                }
                memory_trace.push(MemoryTraceRow {
                    step,
                    stm: memory.stm.len(),
                    wm: memory.wm.len(),
                    ltm: memory.ltm.len(),
                    immune: memory.immune.len(),
                    transfers: out.transfers.len(),
                    retrievals: out.retrievals.len(),
                });
                out.candidates
            }
            Policy::Orb => {
                let c = orb_candidates(&frame.appearance, similar.as_ref(), &indexes);
                if similar.is_some() {
                    let global: BTreeSet<KeyframeId> = indexes.global.query(&frame.appearance).into_iter().collect();
                    subset_of_vanilla = Some(c.iter().all(|k| global.contains(k)));
                }
                c
            }
        };

        // Matching.
        let me = view(cur);
        let mut accepted: Vec<KeyframeId> = Vec::new();
        let mut best: Option<(usize, KeyframeId, crate::posegraph::Pose2)> = None;
        let (mut local_matches, mut loop_matches) = (0, 0);
        for &c in &candidates {
            let r = match_frames(&view(c), &me, &mp, seed);
            if !r.accepted {
                continue;
            }
            accepted.push(c);
            let older = &ds.frames[by_id[&c]];
            if frame.t - older.t <= params.loop_min_time_gap {
                local_matches += 1;
                continue;
            }
            loop_matches += 1;
            let rel = r.relative.expect("accepted match has a transform");
            let better = match best {
                None => true,
                Some((n, k, _)) => r.num_matches > n || (r.num_matches == n && c < k),
            };
            if better {
                best = Some((r.num_matches, c, rel));
            }
        }
        let comparisons_cost = candidates.len() as f64 * cost.comparison;
        costs.loop_closure += comparisons_cost;
        costs.loop_closure_s += clock.elapsed().as_secs_f64();

        // Graph update.
        let init = match prev {
            Some(p) => graph.nodes[&p].compose(&frame.odom_delta),
            None => crate::posegraph::Pose2::identity(),
        };
        graph.add_node(cur, init);
        adjacency.entry(cur).or_default();
        let link = |a: KeyframeId, b: KeyframeId, adj: &mut BTreeMap<KeyframeId, BTreeSet<KeyframeId>>| {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        };
        if let Some(p) = prev {
            let (sxy, sth) = odo.sigmas_for_step(frame.odom_delta.translation_norm());
            graph.add_edge(GraphEdge::with_sigmas(p, cur, frame.odom_delta, sxy, sth, EdgeKind::Odometry))?;
            link(p, cur, &mut adjacency);
        }
        if let Some((_, c, rel)) = best {
            graph.add_edge(GraphEdge::with_sigmas(
                c,
                cur,
                rel,
                params.match_sigma_xy,
                params.match_sigma_theta,
                EdgeKind::Loop,
            ))?;
            link(c, cur, &mut adjacency);
        }
        prior.push(cur);
        if params.policy == Policy::Orb {
            covis.update(cur, prev.into_iter().chain(accepted.iter().copied()));
            indexes.global.insert(cur, &frame.appearance);
        }

        // Cluster management.
        let clock = Instant::now();
        if let (Some(sim), Some(sig)) = (&similar, signature) {
            if params.policy == Policy::Orb {
                orb_cluster_management(cur, &frame.appearance, sig, &covis, sim, &mut store, &mut indexes)?;
                management_ops += 2;
            } else {
                let neighbors: BTreeSet<KeyframeId> = prev.into_iter().chain(accepted.iter().copied()).collect();
                store.assign(cur, sig, &neighbors, sim)?;
                management_ops += 1;
            }
        }
        costs.management += management_ops as f64 * cost.management_op;
        costs.management_s += clock.elapsed().as_secs_f64();

        // Optimization.
        last_opt_iters = 0;
        if best.is_some() || (params.optimize_every > 0 && graph.nodes.len().is_multiple_of(params.optimize_every)) {
            let clock = Instant::now();
            let out = optimize(&graph, params.lm_max_iters, params.lm_damping_init)?;
            graph = out.graph;
            last_opt_iters = out.report.iterations;
            optimizer_runs += 1;
            costs.optimization += last_opt_iters as f64 * cost.optimize_iteration;
            costs.optimization_s += clock.elapsed().as_secs_f64();
        }

        events.push(LoopEvent {
            step,
            from: cur,
            to: best.map(|b| b.1),
            accepted: best.is_some(),
            candidate_count: candidates.len(),
            comparisons_cost,
            num_matches: best.map_or(0, |b| b.0),
            local_matches,
            loop_matches,
            similar_clusters: similar.as_ref().map_or(0, SimilarClusters::len),
            subset_of_vanilla,
        });
        last_matches = accepted;
    }

    if !graph.nodes.is_empty() {
        let clock = Instant::now();
        let out = optimize(&graph, params.lm_max_iters, params.lm_damping_init)?;
        graph = out.graph;
        optimizer_runs += 1;
        costs.optimization += out.report.iterations as f64 * cost.optimize_iteration;
        costs.optimization_s += clock.elapsed().as_secs_f64();
    }

    Ok(RunRecord {
        dataset: ds.name.clone(),
        seed,
        params: params.clone(),
        graph,
        store,
        events,
        memory_trace,
        costs,
        frame_times: ds.frames.iter().map(|f| (f.id, f.t)).collect(),
        optimizer_runs,
    })
}
