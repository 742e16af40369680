//! Incremental Wi-Fi clusters over keyframes.
//!
//! Each cluster keeps the signature it was created with as its
//! representative; that representative never changes. A keyframe joins an
//! existing cluster only when the cluster is similar to the keyframe's
//! signature *and* the keyframe gained a visual edge into it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::signature::{cosine_similarity, Signature, SignatureError};
use crate::{ClusterId, KeyframeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("keyframe {0} is already assigned to a cluster")]
    DuplicateAssignment(KeyframeId),
    #[error("similarity threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub id: ClusterId,
    representative: Signature,
    members: Vec<KeyframeId>,
}

impl Cluster {
    pub fn representative(&self) -> &Signature {
        &self.representative
    }

    /// Members in insertion order.
    pub fn members(&self) -> &[KeyframeId] {
        &self.members
    }
}

/// Clusters sorted by descending similarity, ties broken by ascending id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarClusters {
    entries: Vec<(ClusterId, f64)>,
}

impl SimilarClusters {
    pub fn entries(&self) -> &[(ClusterId, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, id: ClusterId) -> bool {
        self.entries.iter().any(|&(c, _)| c == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    /// Builds the list from unordered (id, score) pairs.
    pub fn from_scores(mut entries: Vec<(ClusterId, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "cluster", rename_all = "snake_case")]
pub enum AssignmentOutcome {
    Joined(ClusterId),
    Created(ClusterId),
}

impl AssignmentOutcome {
    pub fn cluster(self) -> ClusterId {
        match self {
            AssignmentOutcome::Joined(c) | AssignmentOutcome::Created(c) => c,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterStore {
    clusters: Vec<Cluster>,
    index: BTreeMap<KeyframeId, ClusterId>,
}

impl ClusterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn get(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.get(id as usize)
    }

    pub fn cluster_of(&self, kf: KeyframeId) -> Option<ClusterId> {
        self.index.get(&kf).copied()
    }

    pub fn assigned(&self) -> impl Iterator<Item = (KeyframeId, ClusterId)> + '_ {
        self.index.iter().map(|(&k, &c)| (k, c))
    }

    /// Clusters whose representative scores at least `threshold` against `sig`.
    pub fn similar_clusters(
        &self,
        sig: &Signature,
        threshold: f64,
    ) -> Result<SimilarClusters, ClusterError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ClusterError::BadThreshold(threshold));
        }
        let mut hits = Vec::new();
        for c in &self.clusters {
            let score = cosine_similarity(sig, &c.representative)?;
            if score >= threshold {
                hits.push((c.id, score));
            }
        }
        Ok(SimilarClusters::from_scores(hits))
    }

    /// Places `kf` into the most similar cluster reachable through one of
    /// `neighbors`, or opens a new cluster represented by `sig`.
    pub fn assign(
        &mut self,
        kf: KeyframeId,
        sig: &Signature,
        neighbors: &BTreeSet<KeyframeId>,
        similar: &SimilarClusters,
    ) -> Result<AssignmentOutcome, ClusterError> {
        if self.index.contains_key(&kf) {
            return Err(ClusterError::DuplicateAssignment(kf));
        }
        let linked: BTreeSet<ClusterId> = neighbors
            .iter()
            .filter_map(|n| self.index.get(n).copied())
            .collect();
        // `similar` is already ordered by score then id.
        let target = similar.ids().find(|c| linked.contains(c));
        let outcome = match target {
            Some(c) => {
                self.clusters[c as usize].members.push(kf);
                AssignmentOutcome::Joined(c)
            }
            None => {
                if sig.is_empty() {
                    return Err(SignatureError::EmptySignature.into());
                }
                let id = self.clusters.len() as ClusterId;
                self.clusters.push(Cluster {
                    id,
                    representative: sig.clone(),
                    members: vec![kf],
                });
                AssignmentOutcome::Created(id)
            }
        };
        self.index.insert(kf, outcome.cluster());
        Ok(outcome)
    }

    /// Members of the listed clusters, in cluster-score order then insertion order.
    pub fn members_of(&self, similar: &SimilarClusters) -> Vec<KeyframeId> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in similar.ids() {
            if let Some(cluster) = self.get(c) {
                for &m in &cluster.members {
                    if seen.insert(m) {
                        out.push(m);
                    }
                }
            }
        }
        out
    }

    /// Writes `cluster_id,keyframe_id` rows.
    pub fn write_membership_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cluster_id", "keyframe_id"])?;
        for c in &self.clusters {
            for m in &c.members {
                wtr.write_record([c.id.to_string(), m.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// One JSON object per cluster with its representative signature.
    pub fn write_representatives_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            cluster_id: ClusterId,
            size: usize,
            representative: &'a Signature,
        }
        for c in &self.clusters {
            let row = Row {
                cluster_id: c.id,
                size: c.members.len(),
                representative: &c.representative,
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
