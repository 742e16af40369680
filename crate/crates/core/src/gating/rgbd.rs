//! Candidate selection of the random-keyframe policy.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::posegraph::hop_distances;
use crate::KeyframeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgbdParams {
    pub n_predecessors: usize,
    pub geodesic_depth: usize,
    pub n_random_keyframes: usize,
}

impl Default for RgbdParams {
    fn default() -> Self {
        Self {
            n_predecessors: 3,
            geodesic_depth: 2,
            n_random_keyframes: 10,
        }
    }
}

/// Candidates for a new keyframe given the keyframes already in the graph
/// (`prior`, ascending): the newest `n_predecessors`, everything within
/// `geodesic_depth` hops of the newest, and then either `n_random_keyframes`
/// drawn uniformly from the rest (`similar_members == None`) or the members
/// of the similar clusters (gated).
pub fn rgbd_candidates<R: Rng + ?Sized>(
    prior: &[KeyframeId],
    adjacency: &BTreeMap<KeyframeId, BTreeSet<KeyframeId>>,
    similar_members: Option<&[KeyframeId]>,
    params: &RgbdParams,
    rng: &mut R,
) -> Vec<KeyframeId> {
    let Some(&newest) = prior.last() else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |k: KeyframeId, out: &mut Vec<KeyframeId>| {
        if seen.insert(k) {
            out.push(k);
        }
    };
    for &k in prior.iter().rev().take(params.n_predecessors) {
        push(k, &mut out);
    }
    for &k in hop_distances(adjacency, &[newest], Some(params.geodesic_depth)).keys() {
        push(k, &mut out);
    }
    match similar_members {
        Some(members) => {
            for &k in members {
                push(k, &mut out);
            }
        }
        None => {
            let rest: Vec<KeyframeId> = prior.iter().copied().filter(|k| !out.contains(k)).collect();
            let n = params.n_random_keyframes.min(rest.len());
            let mut picks: Vec<KeyframeId> = sample(rng, rest.len(), n).into_iter().map(|i| rest[i]).collect();
            picks.sort_unstable();
            for k in picks {
                push(k, &mut out);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(n: KeyframeId) -> (Vec<KeyframeId>, BTreeMap<KeyframeId, BTreeSet<KeyframeId>>) {
        let prior: Vec<KeyframeId> = (0..n).collect();
        let mut adj: BTreeMap<KeyframeId, BTreeSet<KeyframeId>> = BTreeMap::new();
        for &i in &prior {
            adj.entry(i).or_default();
            if i > 0 {
                adj.get_mut(&(i - 1)).unwrap().insert(i);
                adj.get_mut(&i).unwrap().insert(i - 1);
            }
        }
        (prior, adj)
    }

    #[test]
    fn first_frame_has_no_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let adj = BTreeMap::new();
        assert!(rgbd_candidates(&[], &adj, None, &RgbdParams::default(), &mut rng).is_empty());
    }

    #[test]
    fn gated_without_similar_clusters_is_local_only() {
        let (prior, adj) = chain(50);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = rgbd_candidates(&prior, &adj, Some(&[]), &RgbdParams::default(), &mut rng);
        let set: BTreeSet<_> = c.iter().copied().collect();
        assert_eq!(set, (47..50).collect());
    }

    #[test]
    fn vanilla_draws_exactly_n_random() {
        let (prior, adj) = chain(100);
        let params = RgbdParams {
            n_random_keyframes: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = rgbd_candidates(&prior, &adj, None, &params, &mut rng);
        let local: BTreeSet<KeyframeId> = (97..100).collect();
        let extra: Vec<_> = c.iter().filter(|k| !local.contains(k)).collect();
        assert_eq!(extra.len(), 5);
        let uniq: BTreeSet<_> = c.iter().collect();
        assert_eq!(uniq.len(), c.len());
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(c, rgbd_candidates(&prior, &adj, None, &params, &mut rng2));
    }

    #[test]
    fn geodesic_neighbors_follow_loop_edges() {
        let (prior, mut adj) = chain(30);
        adj.get_mut(&29).unwrap().insert(2);
        adj.get_mut(&2).unwrap().insert(29);
        let params = RgbdParams {
            n_random_keyframes: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = rgbd_candidates(&prior, &adj, None, &params, &mut rng);
        for k in [1, 2, 3, 27, 28, 29] {
            assert!(c.contains(&k), "{k} missing from {c:?}");
        }
    }
}
