//! Metrics over completed runs: loop-closure FP/FN against ground truth,
//! aligned trajectory error, compute ledgers, the similarity-versus-distance
//! curve and the localization error CDF.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterStore};
use crate::frontend::{shared_word_count, Appearance};
use crate::gating::{RunRecord, SCAN_GAP_S};
use crate::posegraph::{kabsch_align, rmse, Pose2, PoseGraphError};
use crate::signature::{associate_frames, cosine_similarity, signatures_from_log, Signature};
use crate::simworld::Dataset;
use crate::KeyframeId;

/// Default index tolerance when matching loop edges to ground-truth pairs.
pub const MATCH_RADIUS: u32 = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate and ground truth share no keyframe ids")]
    NoCorrespondence,
    #[error("localization map is empty")]
    EmptyMap,
    #[error("dataset has no Wi-Fi signatures")]
    NoSignatures,
    #[error("map fraction must be in (0, 1), got {0}")]
    BadSplit(f64),
    #[error(transparent)]
    PoseGraph(#[from] PoseGraphError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Percent of detections that are false.
    pub fp_pct: f64,
    /// Percent of true closures that were missed.
    pub fn_pct: f64,
}

fn near(edge: (KeyframeId, KeyframeId), gt: (KeyframeId, KeyframeId), radius: u32) -> bool {
    edge.0.abs_diff(gt.0) <= radius && edge.1.abs_diff(gt.1) <= radius
}

fn ordered(e: (KeyframeId, KeyframeId)) -> (KeyframeId, KeyframeId) {
    (e.0.min(e.1), e.0.max(e.1))
}

/// Scores accepted loop edges against ground-truth pairs. An edge is a true
/// detection when both endpoints lie within `radius` frames of some gt pair,
/// otherwise a false positive. A gt pair with no edge nearby is a false
/// negative; every other gt pair counts once as a true positive, however many
/// edges landed near it.
pub fn score_loops(
    edges: &[(KeyframeId, KeyframeId)],
    gt_pairs: &BTreeSet<(KeyframeId, KeyframeId)>,
    radius: u32,
) -> LoopScore {
    let edges: Vec<_> = edges.iter().map(|&e| ordered(e)).collect();
    let false_positives = edges
        .iter()
        .filter(|&&e| !gt_pairs.iter().any(|&g| near(e, g, radius)))
        .count();
    let true_positives = gt_pairs
        .iter()
        .filter(|&&g| edges.iter().any(|&e| near(e, g, radius)))
        .count();
    let false_negatives = gt_pairs.len() - true_positives;
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    LoopScore {
        true_positives,
        false_positives,
        false_negatives,
        fp_pct: pct(false_positives, edges.len()),
        fn_pct: pct(false_negatives, gt_pairs.len()),
    }
}

/// RMSE of the estimated positions after rigid alignment onto ground truth,
/// over the keyframe ids present in both.
pub fn trajectory_error(
    estimate: &BTreeMap<KeyframeId, Pose2>,
    gt: &BTreeMap<KeyframeId, Pose2>,
) -> Result<f64, EvalError> {
    let (est, truth): (Vec<[f64; 2]>, Vec<[f64; 2]>) = estimate
        .iter()
        .filter_map(|(k, p)| gt.get(k).map(|g| (p.position(), g.position())))
        .unzip();
    if est.is_empty() {
        return Err(EvalError::NoCorrespondence);
    }
    if est.len() == 1 {
        return Ok(0.0);
    }
    let t = kabsch_align(&est, &truth)?;
    let aligned: Vec<[f64; 2]> = est.iter().map(|&p| t.apply(p)).collect();
    Ok(rmse(&aligned, &truth)?)
}

/// Ground-truth poses of a dataset keyed by keyframe id.
pub fn gt_poses(ds: &Dataset) -> BTreeMap<KeyframeId, Pose2> {
    ds.frames.iter().map(|f| (f.id, f.gt_pose)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub cost: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComputeLedger {
    pub loop_closure_cost: CostEntry,
    pub clustering_overhead: CostEntry,
    pub management_overhead: CostEntry,
}

impl ComputeLedger {
    pub fn overhead_cost(&self) -> f64 {
        self.clustering_overhead.cost + self.management_overhead.cost
    }
}

pub fn ledger(run: &RunRecord) -> ComputeLedger {
    let c = &run.costs;
    ComputeLedger {
        loop_closure_cost: CostEntry {
            cost: c.loop_closure,
            seconds: c.loop_closure_s,
        },
        clustering_overhead: CostEntry {
            cost: c.clustering,
            seconds: c.clustering_s,
        },
        management_overhead: CostEntry {
            cost: c.management,
            seconds: c.management_s,
        },
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or there are fewer than two points.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub distance_m: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityCurve {
    pub points: Vec<CurvePoint>,
    pub spearman: Option<f64>,
}

impl SimilarityCurve {
    /// CSV with a `# spearman=` footer line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "distance_m,similarity")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.distance_m, p.similarity)?;
        }
        match self.spearman {
            Some(r) => writeln!(w, "# spearman={r}"),
            None => writeln!(w, "# spearman=nan"),
        }
    }
}

/// Ground-truth position of each signature: where the latest frame at or
/// before its collection time was.
fn signature_positions(ds: &Dataset, sigs: &[Signature]) -> Vec<Option<[f64; 2]>> {
    sigs.iter()
        .map(|s| {
            let i = ds.frames.partition_point(|f| f.t <= s.collected_at);
            i.checked_sub(1).map(|i| ds.frames[i].gt_pose.position())
        })
        .collect()
}

/// Cosine similarity against ground-truth distance for every pair of dwell
/// signatures, with its Spearman correlation.
pub fn similarity_distance_curve(ds: &Dataset) -> SimilarityCurve {
    let sigs = signatures_from_log(&ds.scans, SCAN_GAP_S);
    let pos = signature_positions(ds, &sigs);
    let mut points = Vec::new();
    for i in 0..sigs.len() {
        for j in i + 1..sigs.len() {
            let (Some(a), Some(b)) = (pos[i], pos[j]) else { continue };
            let Ok(similarity) = cosine_similarity(&sigs[i], &sigs[j]) else { continue };
            points.push(CurvePoint {
                distance_m: ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
                similarity,
            });
        }
    }
    let (d, s): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.distance_m, p.similarity)).unzip();
    SimilarityCurve {
        spearman: spearman(&d, &s),
        points,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    /// Ascending errors (m).
    pub errors: Vec<f64>,
    /// Cumulative fraction of queries at or below each error.
    pub fractions: Vec<f64>,
}

impl CdfCurve {
    pub fn from_errors(mut errors: Vec<f64>) -> Self {
        errors.sort_by(f64::total_cmp);
        let n = errors.len() as f64;
        let fractions = (1..=errors.len()).map(|i| i as f64 / n).collect();
        Self { errors, fractions }
    }

    /// Fraction of queries with error at most `e`.
    pub fn fraction_within(&self, e: f64) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.partition_point(|&x| x <= e) as f64 / self.errors.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "error_m,fraction")?;
        for (e, f) in self.errors.iter().zip(&self.fractions) {
            writeln!(w, "{e},{f}")?;
        }
        Ok(())
    }
}

/// A frame as seen by the localization experiment.
#[derive(Clone, Debug)]
pub struct LocFrame<'a> {
    pub id: KeyframeId,
    pub position: [f64; 2],
    pub appearance: &'a Appearance,
    pub signature: &'a Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub cdf: CdfCurve,
    /// Queries with no similar cluster, matched against the whole map.
    pub fallbacks: usize,
    pub map_frames: usize,
    pub query_frames: usize,
}

/// Localizes each query against the map: among the map frames in the
/// clusters similar to the query's signature, the one sharing the most
/// visual words wins (lowest id on ties). Queries without a similar cluster
/// search the whole map. Errors are ground-truth distances.
pub fn localize_queries(
    map: &[LocFrame<'_>],
    store: &ClusterStore,
    queries: &[LocFrame<'_>],
    threshold: f64,
) -> Result<Localization, EvalError> {
    if map.is_empty() {
        return Err(EvalError::EmptyMap);
    }
    let by_id: BTreeMap<KeyframeId, &LocFrame<'_>> = map.iter().map(|f| (f.id, f)).collect();
    let mut errors = Vec::with_capacity(queries.len());
    let mut fallbacks = 0;
    for q in queries {
        let similar = store.similar_clusters(q.signature, threshold)?;
        let members: Vec<&LocFrame<'_>> = store
            .members_of(&similar)
            .into_iter()
            .filter_map(|k| by_id.get(&k).copied())
            .collect();
        let pool: Vec<&LocFrame<'_>> = if members.is_empty() {
            fallbacks += 1;
            map.iter().collect()
        } else {
            members
        };
        let best = pool
            .iter()
            .map(|m| (shared_word_count(m.appearance.words(), q.appearance.words()), m))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.id.cmp(&a.1.id)))
            .map(|(_, m)| m)
            .expect("pool non-empty");
        let d = ((best.position[0] - q.position[0]).powi(2) + (best.position[1] - q.position[1]).powi(2)).sqrt();
        errors.push(d);
    }
    Ok(Localization {
        cdf: CdfCurve::from_errors(errors),
        fallbacks,
        map_frames: map.len(),
        query_frames: queries.len(),
    })
}

/// Frame `i` goes to the map when `floor((i+1)·f) > floor(i·f)`, spreading
/// map frames evenly through the sequence.
pub fn is_map_frame(i: usize, map_fraction: f64) -> bool {
    ((i + 1) as f64 * map_fraction).floor() > (i as f64 * map_fraction).floor()
}

/// Splits a dataset into map and query frames, clusters the map frames in
/// order (each linked to the previous map frame) and localizes the queries.
pub fn localize_dataset(ds: &Dataset, map_fraction: f64, threshold: f64) -> Result<Localization, EvalError> {
    if !(map_fraction > 0.0 && map_fraction < 1.0) {
        return Err(EvalError::BadSplit(map_fraction));
    }
    if ds.frames.is_empty() {
        return Err(EvalError::EmptyMap);
    }
    let sigs = signatures_from_log(&ds.scans, SCAN_GAP_S);
    let times: Vec<f64> = ds.frames.iter().map(|f| f.t).collect();
    let assoc = associate_frames(&times, &sigs).map_err(|_| EvalError::NoSignatures)?;
    let (mut map, mut queries) = (Vec::new(), Vec::new());
    for (i, f) in ds.frames.iter().enumerate() {
        let lf = LocFrame {
            id: f.id,
            position: f.gt_pose.position(),
            appearance: &f.appearance,
            signature: &sigs[assoc[i]],
        };
        if is_map_frame(i, map_fraction) {
            map.push(lf);
        } else {
            queries.push(lf);
        }
    }
    let mut store = ClusterStore::new();
    let mut prev: Option<KeyframeId> = None;
    for m in &map {
        let similar = store.similar_clusters(m.signature, threshold)?;
        store.assign(m.id, m.signature, &prev.into_iter().collect(), &similar)?;
        prev = Some(m.id);
    }
    localize_queries(&map, &store, &queries, threshold)
}

/// One line of `report.csv`: the run key followed by its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub seed: u64,
    pub policy: String,
    pub gated: bool,
    pub min_matches: usize,
    pub inlier_distance: f64,
    pub wifi_threshold: f64,
    /// `inf` or a cost budget.
    pub real_time_threshold: String,
    pub rmse_m: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp_pct: f64,
    pub fn_pct: f64,
    pub loop_cost: f64,
    pub overhead_cost: f64,
    pub clusters: usize,
    pub wall_ms: f64,
}

/// Column holding wall-clock time; everything else is deterministic.
pub const WALL_TIME_COLUMN: &str = "wall_ms";

impl ReportRow {
    pub fn from_run(run: &RunRecord, ds: &Dataset) -> Result<Self, EvalError> {
        let score = score_loops(&run.loop_edges(), &ds.gt_loop_pairs, MATCH_RADIUS);
        let l = ledger(run);
        let p = &run.params;
        let c = &run.costs;
        Ok(Self {
            dataset: run.dataset.clone(),
            seed: run.seed,
            policy: p.policy.to_string(),
            gated: p.gated,
            min_matches: p.min_matches,
            inlier_distance: p.inlier_distance,
            wifi_threshold: p.wifi_threshold,
            real_time_threshold: format_threshold(p.rtab.real_time_threshold),
            rmse_m: trajectory_error(&run.graph.nodes, &gt_poses(ds))?,
            fp: score.false_positives,
            fn_: score.false_negatives,
            fp_pct: score.fp_pct,
            fn_pct: score.fn_pct,
            loop_cost: l.loop_closure_cost.cost,
            overhead_cost: l.overhead_cost(),
            clusters: run.store.len(),
            wall_ms: 1e3 * (c.loop_closure_s + c.clustering_s + c.management_s + c.optimization_s),
        })
    }

    /// Identity of the run within a report.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            self.dataset,
            self.seed,
            self.policy,
            self.gated,
            self.min_matches,
            self.inlier_distance,
            self.wifi_threshold,
            self.real_time_threshold
        )
    }
}

pub fn format_threshold(t: Option<f64>) -> String {
    t.map_or_else(|| "inf".to_string(), |t| t.to_string())
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_report_csv<R: std::io::Read>(r: R) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}
