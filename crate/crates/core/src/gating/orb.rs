//! Candidate selection and cluster management of the inverted-index policy.

use std::collections::{BTreeMap, BTreeSet};

use crate::clustering::{AssignmentOutcome, ClusterError, ClusterStore, SimilarClusters};
use crate::frontend::{Appearance, Covisibility, InvertedIndex};
use crate::signature::Signature;
use crate::{ClusterId, KeyframeId};

/// Global word index plus one index per cluster.
#[derive(Clone, Debug, Default)]
pub struct OrbIndexes {
    pub global: InvertedIndex,
    pub per_cluster: BTreeMap<ClusterId, InvertedIndex>,
}

impl OrbIndexes {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Vanilla mode (`similar == None`) queries the global index; gated mode
/// queries only the indexes of the similar clusters, in similarity order.
pub fn orb_candidates(
    appearance: &Appearance,
    similar: Option<&SimilarClusters>,
    indexes: &OrbIndexes,
) -> Vec<KeyframeId> {
    match similar {
        None => indexes.global.query(appearance),
        Some(sim) => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for c in sim.ids() {
                if let Some(idx) = indexes.per_cluster.get(&c) {
                    for k in idx.query(appearance) {
                        if seen.insert(k) {
                            out.push(k);
                        }
                    }
                }
            }
            out
        }
    }
}

/// Assigns the current keyframe to a cluster through its co-visible
/// keyframes (which include every accepted match) and inserts it into that
/// cluster's index, creating a fresh index for a new cluster. Returns the
/// outcome and the number of index postings written.
pub fn orb_cluster_management(
    current: KeyframeId,
    appearance: &Appearance,
    signature: &Signature,
    covis: &Covisibility,
    similar: &SimilarClusters,
    store: &mut ClusterStore,
    indexes: &mut OrbIndexes,
) -> Result<(AssignmentOutcome, usize), ClusterError> {
    let neighbors: BTreeSet<KeyframeId> = covis.neighbors(current).collect();
    let outcome = store.assign(current, signature, &neighbors, similar)?;
    let postings = indexes
        .per_cluster
        .entry(outcome.cluster())
        .or_default()
        .insert(current, appearance);
    Ok((outcome, postings))
}
