//! Short-, working- and long-term memory for the memory-managed policy.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::GatingError;
use crate::posegraph::hop_distances;
use crate::KeyframeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtabParams {
    pub stm_capacity: usize,
    /// Cost budget per step; `None` disables transfers to long-term memory.
    pub real_time_threshold: Option<f64>,
    pub wm_transfer_batch: usize,
}

impl Default for RtabParams {
    fn default() -> Self {
        Self {
            stm_capacity: 10,
            real_time_threshold: None,
            wm_transfer_batch: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryState {
    pub stm: VecDeque<KeyframeId>,
    pub wm: BTreeSet<KeyframeId>,
    pub ltm: BTreeSet<KeyframeId>,
    pub immune: BTreeSet<KeyframeId>,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.stm.len() + self.wm.len() + self.ltm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pools are pairwise disjoint and immunity only applies inside WM.
    pub fn check(&self) -> Result<(), GatingError> {
        let stm: BTreeSet<_> = self.stm.iter().copied().collect();
        let corrupt = |m: String| Err(GatingError::MemoryCorruption(m));
        if stm.len() != self.stm.len() {
            return corrupt("duplicate keyframe in STM".into());
        }
        if let Some(k) = stm.intersection(&self.wm).next() {
            return corrupt(format!("keyframe {k} in both STM and WM"));
        }
        if let Some(k) = stm.intersection(&self.ltm).next() {
            return corrupt(format!("keyframe {k} in both STM and LTM"));
        }
        if let Some(k) = self.wm.intersection(&self.ltm).next() {
            return corrupt(format!("keyframe {k} in both WM and LTM"));
        }
        if let Some(k) = self.immune.difference(&self.wm).next() {
            return corrupt(format!("immune keyframe {k} outside WM"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RtabStep {
    pub candidates: Vec<KeyframeId>,
    pub transfers: Vec<KeyframeId>,
    pub retrievals: Vec<KeyframeId>,
    /// Keyframes that became immune this step.
    pub newly_immune: usize,
}

/// Inputs of one memory-management step besides the memory itself.
pub struct RtabContext<'a> {
    pub current: KeyframeId,
    /// Members of the clusters similar to the current signature (gated mode).
    pub similar_members: Option<&'a BTreeSet<KeyframeId>>,
    pub adjacency: &'a BTreeMap<KeyframeId, BTreeSet<KeyframeId>>,
    /// Keyframes the priority is measured from: the newest graph node and
    /// the previous step's visual matches.
    pub anchors: &'a [KeyframeId],
    /// Cost of the step besides comparisons (optimization).
    pub base_cost: f64,
    pub comparison_cost: f64,
}

/// One step of memory management:
/// 1. the current keyframe enters STM and STM overflow moves to WM;
/// 2. in gated mode, WM members of similar clusters become immune and LTM
///    members are retrieved into WM (also immune); immunity of everything
///    else is cleared;
/// 3. candidates are taken from WM (restricted to similar-cluster members
///    when gated);
/// 4. if the projected cost of the next step, `|WM|` comparisons plus the
///    base cost, exceeds the threshold, non-immune WM keyframes furthest in
///    graph hops from the anchors (oldest first on ties) move to LTM in
///    batches until it fits.
pub fn rtab_step(
    state: &mut MemoryState,
    ctx: &RtabContext<'_>,
    params: &RtabParams,
) -> Result<RtabStep, GatingError> {
    let mut out = RtabStep::default();
    state.stm.push_back(ctx.current);
    while state.stm.len() > params.stm_capacity {
        let old = state.stm.pop_front().expect("non-empty");
        state.wm.insert(old);
    }

    match ctx.similar_members {
        Some(members) => {
            let kept: BTreeSet<_> = state.immune.intersection(members).copied().collect();
            state.immune = kept;
            let carried = state.immune.len();
            for &m in members {
                if state.ltm.remove(&m) {
                    state.wm.insert(m);
                    out.retrievals.push(m);
                }
                if state.wm.contains(&m) {
                    state.immune.insert(m);
                }
            }
            out.newly_immune = state.immune.len() - carried;
            out.candidates = state.wm.intersection(members).copied().collect();
        }
        None => {
            state.immune.clear();
            out.candidates = state.wm.iter().copied().collect();
        }
    }

    if let Some(threshold) = params.real_time_threshold {
        let projected = |wm: usize| wm as f64 * ctx.comparison_cost + ctx.base_cost;
        if projected(state.wm.len()) > threshold {
            let hops = hop_distances(ctx.adjacency, ctx.anchors, None);
            let mut order: Vec<(usize, KeyframeId)> = state
                .wm
                .iter()
                .filter(|k| !state.immune.contains(k))
                .map(|&k| (hops.get(&k).copied().unwrap_or(usize::MAX), k))
                .collect();
            // Furthest first, then oldest.
            order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let batch = params.wm_transfer_batch.max(1);
            let mut queue = order.into_iter().map(|(_, k)| k);
            'outer: while projected(state.wm.len()) > threshold {
                for _ in 0..batch {
                    let Some(k) = queue.next() else { break 'outer };
                    state.wm.remove(&k);
                    state.ltm.insert(k);
                    out.transfers.push(k);
                }
            }
        }
    }
    state.check()?;
    Ok(out)
}
