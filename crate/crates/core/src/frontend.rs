//! Synthetic stand-in for a visual front end.
//!
//! Frames carry bags of visual words drawn from a scene template. Matching
//! two frames counts shared words (thinned by a seeded per-pair dropout),
//! applies the min-matches test and then a geometric feasibility check on
//! the transform the appearances imply. Frames from different corridors that
//! share a template imply a transform that has nothing to do with their true
//! geometry; that is how perceptual aliasing produces false loop closures.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::posegraph::Pose2;
use crate::KeyframeId;

pub type WordId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appearance {
    /// Sorted multiset of visual words.
    words: Vec<WordId>,
    /// Scene template that generated the words (simulation metadata).
    pub place_template: u32,
}

impl Appearance {
    pub fn new(mut words: Vec<WordId>, place_template: u32) -> Self {
        words.sort_unstable();
        Self {
            words,
            place_template,
        }
    }

    pub fn words(&self) -> &[WordId] {
        &self.words
    }

    pub fn distinct_words(&self) -> impl Iterator<Item = WordId> + '_ {
        let mut last = None;
        self.words.iter().copied().filter(move |&w| {
            let fresh = last != Some(w);
            last = Some(w);
            fresh
        })
    }
}

/// Size of the multiset intersection of two sorted word lists.
pub fn shared_word_count(a: &[WordId], b: &[WordId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Where a frame really is and where its appearance says it is: `local` is
/// the pose in the coordinate frame of the scene template. Only the
/// simulator knows either.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sighting {
    pub world: Pose2,
    pub local: Pose2,
}

#[derive(Clone, Copy, Debug)]
pub struct FrameView<'a> {
    pub id: KeyframeId,
    pub appearance: &'a Appearance,
    pub sighting: Sighting,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub min_matches: usize,
    /// Largest translation (m) a transform estimate may span.
    pub inlier_distance: f64,
    /// Probability that each shared word survives matching.
    pub keep_probability: f64,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            min_matches: 20,
            inlier_distance: 3.0,
            keep_probability: 0.8,
            sigma_xy: 0.05,
            sigma_theta: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub num_matches: usize,
    /// Pose of the second frame in the frame of the first.
    pub relative: Option<Pose2>,
    pub accepted: bool,
}

fn pair_seed(run_seed: u64, a: KeyframeId, b: KeyframeId) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut z = run_seed ^ (u64::from(lo) << 32 | u64::from(hi)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn truncated(normal: &Normal<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    normal.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)
}

/// Matches frame `b` against frame `a`. Deterministic in the frame ids,
/// appearances, parameters and `run_seed`.
pub fn match_frames(
    a: &FrameView<'_>,
    b: &FrameView<'_>,
    params: &MatchParams,
    run_seed: u64,
) -> MatchResult {
    let shared = shared_word_count(a.appearance.words(), b.appearance.words());
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(run_seed, a.id, b.id));
    let num_matches = (0..shared)
        .filter(|_| rng.random_bool(params.keep_probability.clamp(0.0, 1.0)))
        .count();
    let rejected = MatchResult {
        num_matches,
        relative: None,
        accepted: false,
    };
    if num_matches < params.min_matches.max(1) {
        return rejected;
    }
    // Words from different templates share no geometry: no consistent
    // transform exists.
    if a.appearance.place_template != b.appearance.place_template {
        return rejected;
    }
    let implied = a.sighting.local.between(&b.sighting.local);
    if implied.translation_norm() > params.inlier_distance {
        return rejected;
    }
    let n_xy = Normal::new(0.0, params.sigma_xy).expect("finite sigma");
    let n_t = Normal::new(0.0, params.sigma_theta).expect("finite sigma");
    let noise = Pose2::new(
        truncated(&n_xy, params.sigma_xy, &mut rng),
        truncated(&n_xy, params.sigma_xy, &mut rng),
        truncated(&n_t, params.sigma_theta, &mut rng),
    );
    MatchResult {
        num_matches,
        relative: Some(implied.compose(&noise)),
        accepted: true,
    }
}

/// Visual word -> keyframes that observed it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<WordId, BTreeSet<KeyframeId>>,
    size: usize,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Number of posting entries touched by an insert.
    pub fn insert(&mut self, kf: KeyframeId, appearance: &Appearance) -> usize {
        let mut n = 0;
        let mut added = false;
        for w in appearance.distinct_words() {
            added |= self.postings.entry(w).or_default().insert(kf);
            n += 1;
        }
        if added {
            self.size += 1;
        }
        n
    }

    /// Keyframes sharing at least one word, by shared-word count descending
    /// then id ascending.
    pub fn query(&self, appearance: &Appearance) -> Vec<KeyframeId> {
        let mut counts: HashMap<KeyframeId, usize> = HashMap::new();
        for w in appearance.distinct_words() {
            if let Some(kfs) = self.postings.get(&w) {
                for &k in kfs {
                    *counts.entry(k).or_insert(0) += 1;
                }
            }
        }
        let mut out: Vec<(KeyframeId, usize)> = counts.into_iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(k, _)| k).collect()
    }
}

/// Symmetric keyframe co-visibility links.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Covisibility {
    links: BTreeMap<KeyframeId, BTreeSet<KeyframeId>>,
}

impl Covisibility {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn neighbors(&self, kf: KeyframeId) -> impl Iterator<Item = KeyframeId> + '_ {
        self.links.get(&kf).into_iter().flatten().copied()
    }

    pub fn contains(&self, a: KeyframeId, b: KeyframeId) -> bool {
        self.links.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Links `kf` with every matched keyframe.
    pub fn update(&mut self, kf: KeyframeId, matched: impl IntoIterator<Item = KeyframeId>) {
        for m in matched {
            if m == kf {
                continue;
            }
            self.links.entry(kf).or_default().insert(m);
            self.links.entry(m).or_default().insert(kf);
        }
    }
}
