//! Simulated indoor worlds: corridor floor plans, access points behind
//! walls, log-distance radio propagation, trajectories with Wi-Fi dwells,
//! bag-of-words appearances with perceptual aliasing, and noisy odometry.
//!
//! Everything is a pure function of a [`WorldConfig`] and a seed. Separate
//! random streams feed the layout, appearance, radio and odometry draws, so
//! switching one noise source off leaves the others unchanged.

mod io;
mod presets;
mod trajectory;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Appearance, Sighting, WordId};
use crate::posegraph::Pose2;
use crate::signature::{mask_bssid, ApId, LoggedScan, MacAddr, ScanReading};
use crate::KeyframeId;

pub use io::{load_dataset, save_dataset};
pub use presets::{preset, preset_names, preset_worlds};
pub use trajectory::{generate_trajectory, Dwell, Trajectory, TrajectorySample};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown preset `{name}` (valid: {valid})")]
    UnknownPreset { name: String, valid: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Schema {
        file: &'static str,
        line: u64,
        message: String,
    },
    #[error("world.json: {0}")]
    Json(String),
}

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub walls: Vec<Wall>,
    pub bounds: Bounds,
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Proper crossing of two segments (touching endpoints do not count).
fn segments_cross(p: Point, q: Point, w: &Wall) -> bool {
    let d1 = orient(p, q, w.a);
    let d2 = orient(p, q, w.b);
    let d3 = orient(w.a, w.b, p);
    let d4 = orient(w.a, w.b, q);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

impl FloorPlan {
    /// Number of walls the straight segment `p -> q` passes through.
    pub fn wall_crossings(&self, p: Point, q: Point) -> usize {
        self.walls.iter().filter(|w| segments_cross(p, q, w)).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: ApId,
    pub position: Point,
    pub tx_power_at_1m: f64,
    /// BSSIDs advertised, differing in the low nibble of the last octet.
    pub radios: u8,
}

impl AccessPoint {
    pub fn bssids(&self) -> impl Iterator<Item = MacAddr> + '_ {
        let base = self.id.mac().to_u64();
        (0..u64::from(self.radios.min(16))).map(move |r| MacAddr::from_u64(base | r))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub path_loss_exponent: f64,
    /// Attenuation per wall crossing (dB).
    pub wall_loss: f64,
    pub noise_sigma: f64,
    /// Readings below this level (dBm) are not reported.
    pub visibility_floor: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.0,
            wall_loss: 5.0,
            noise_sigma: 2.0,
            visibility_floor: -95.0,
        }
    }
}

/// Received power (dBm) of `ap` at `pos`, or `None` below the visibility
/// floor. Log-distance path loss with a 1 m reference, a fixed loss per wall
/// crossed by the line of sight, and Gaussian shadowing.
pub fn rssi_at<R: Rng + ?Sized>(
    ap: &AccessPoint,
    pos: Point,
    plan: &FloorPlan,
    params: &PropagationParams,
    rng: &mut R,
) -> Option<f64> {
    let d = ((pos[0] - ap.position[0]).powi(2) + (pos[1] - ap.position[1]).powi(2)).sqrt();
    let walls = plan.wall_crossings(ap.position, pos) as f64;
    let mut p = ap.tx_power_at_1m
        - 10.0 * params.path_loss_exponent * d.max(1.0).log10()
        - params.wall_loss * walls;
    if params.noise_sigma > 0.0 {
        p += Normal::new(0.0, params.noise_sigma).expect("finite sigma").sample(rng);
    }
    (p >= params.visibility_floor).then_some(p.min(0.0))
}

/// A straight corridor. Its local frame has the x axis along `start -> end`;
/// the landmark strip of its template is laid out along that axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub start: Point,
    pub end: Point,
    pub template: u32,
}

impl Corridor {
    pub fn length(&self) -> f64 {
        ((self.end[0] - self.start[0]).powi(2) + (self.end[1] - self.start[1]).powi(2)).sqrt()
    }

    fn axis(&self) -> (Point, f64) {
        let len = self.length();
        let u = [
            (self.end[0] - self.start[0]) / len,
            (self.end[1] - self.start[1]) / len,
        ];
        (u, u[1].atan2(u[0]))
    }

    pub fn point_at(&self, s: f64) -> Point {
        let (u, _) = self.axis();
        [self.start[0] + s * u[0], self.start[1] + s * u[1]]
    }

    /// Pose in the corridor frame: arc position, lateral offset, heading
    /// relative to the axis.
    pub fn local_pose(&self, world: &Pose2) -> Pose2 {
        let (u, ang) = self.axis();
        let dx = world.x - self.start[0];
        let dy = world.y - self.start[1];
        Pose2::new(dx * u[0] + dy * u[1], u[0] * dy - u[1] * dx, world.theta - ang)
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let (u, _) = self.axis();
        let dx = p[0] - self.start[0];
        let dy = p[1] - self.start[1];
        let s = (dx * u[0] + dy * u[1]).clamp(0.0, self.length());
        let c = self.point_at(s);
        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    SquareLoop,
    FigureEight,
    NineLoop,
    LongTrack,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub shape: Shape,
    pub scale: f64,
    pub speed: f64,
    pub pause_every: f64,
    pub pause_duration: f64,
}

/// Template per corridor; corridors sharing a template look identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AliasingConfig {
    pub n_templates: u32,
    pub corridor_assignment: Vec<u32>,
}

/// How rooms, partitions and access points are laid out along corridors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub corridor_width: f64,
    /// Depth of the room rows on either side of a corridor.
    pub room_depth: f64,
    /// Spacing of partition walls between rooms; 0 disables them.
    pub partition_spacing: f64,
    /// Spacing of walls (doors) across the corridor itself; 0 disables them.
    pub cross_wall_spacing: f64,
    pub n_aps: usize,
    pub tx_power_at_1m: f64,
    pub radios_per_ap: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    /// Distance between landmark words along a corridor (m).
    pub landmark_spacing: f64,
    /// Landmarks within this arc distance are in view (m).
    pub view_range: f64,
    pub observe_probability: f64,
    /// Size of the pool of generic, place-independent words.
    pub generic_pool: u32,
    pub generic_per_frame: usize,
}

impl Default for AppearanceParams {
    fn default() -> Self {
        Self {
            landmark_spacing: 0.1,
            view_range: 3.0,
            observe_probability: 0.9,
            generic_pool: 100,
            generic_per_frame: 6,
        }
    }
}

/// Odometry noise standard deviations per meter travelled, plus a
/// systematic heading error per meter (an uncalibrated wheel base or gyro
/// bias).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometryNoise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    #[serde(default)]
    pub heading_bias: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            sigma_xy: 0.01,
            sigma_theta: 0.002,
            heading_bias: 0.0,
        }
    }
}

impl OdometryNoise {
    /// Information weights of an odometry step of the given length. Very
    /// short steps are floored so the matrix stays finite.
    pub fn sigmas_for_step(&self, len: f64) -> (f64, f64) {
        let len = len.max(0.05);
        (
            (self.sigma_xy * len).max(1e-6),
            (self.sigma_theta * len).max(1e-7),
        )
    }
}

/// Complete recipe for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub name: String,
    pub trajectory: TrajectorySpec,
    pub layout: LayoutParams,
    pub propagation: PropagationParams,
    pub aliasing: AliasingConfig,
    pub appearance: AppearanceParams,
    pub odometry: OdometryNoise,
    pub frame_rate_hz: f64,
    pub scans_per_dwell: usize,
    /// Ground-truth loop pairs: closer than this (m)...
    pub loop_max_separation: f64,
    /// ...and further apart in time than this (s).
    pub loop_min_time_gap: f64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let t = &self.trajectory;
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(t.scale > 0.0 && t.speed > 0.0 && t.pause_every > 0.0 && t.pause_duration > 0.0) {
            return bad("trajectory magnitudes must be positive");
        }
        if !(self.frame_rate_hz > 0.0) || self.scans_per_dwell == 0 {
            return bad("frame rate and scans per dwell must be positive");
        }
        if t.pause_duration * self.frame_rate_hz < 1.0 {
            return bad("a dwell must span at least one frame period");
        }
        let p = &self.propagation;
        if !(p.path_loss_exponent > 0.0 && p.wall_loss >= 0.0 && p.noise_sigma >= 0.0) {
            return bad("propagation parameters out of range");
        }
        let n_corr = trajectory::layout(t).0.len();
        let a = &self.aliasing;
        if a.corridor_assignment.len() != n_corr {
            return Err(SimError::InvalidConfig(format!(
                "{:?} has {n_corr} corridors but {} template assignments",
                t.shape,
                a.corridor_assignment.len()
            )));
        }
        if a.corridor_assignment.iter().any(|&x| x >= a.n_templates) {
            return bad("template assignment out of range");
        }
        let ap = &self.appearance;
        if !(ap.landmark_spacing > 0.0 && ap.view_range > 0.0) || !(0.0..=1.0).contains(&ap.observe_probability) {
            return bad("appearance parameters out of range");
        }
        if self.layout.n_aps == 0 || self.layout.radios_per_ap == 0 || self.layout.radios_per_ap > 16 {
            return bad("need at least one AP with 1..=16 radios");
        }
        Ok(())
    }
}

/// The static world a dataset is generated in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub plan: FloorPlan,
    pub aps: Vec<AccessPoint>,
    pub propagation: PropagationParams,
    pub corridors: Vec<Corridor>,
}

impl World {
    /// Corridor carrying `template` nearest to `p`.
    pub fn corridor_for(&self, template: u32, p: Point) -> Option<&Corridor> {
        self.corridors
            .iter()
            .filter(|c| c.template == template)
            .min_by(|a, b| a.distance_to(p).total_cmp(&b.distance_to(p)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: KeyframeId,
    pub t: f64,
    pub gt_pose: Pose2,
    /// Measured motion since the previous frame (identity for the first).
    pub odom_delta: Pose2,
    pub appearance: Appearance,
    /// Pose in the frame of the corridor whose template it shows.
    pub local_pose: Pose2,
}

impl Frame {
    pub fn sighting(&self) -> Sighting {
        Sighting {
            world: self.gt_pose,
            local: self.local_pose,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub config: WorldConfig,
    pub world: World,
    pub frames: Vec<Frame>,
    pub scans: Vec<LoggedScan>,
    /// Ordered pairs `(a, b)` with `a < b`.
    pub gt_loop_pairs: BTreeSet<(KeyframeId, KeyframeId)>,
}

impl Dataset {
    pub fn dwell_count(&self) -> usize {
        self.scans
            .iter()
            .filter_map(|s| s.dwell_index)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

// Independent random streams.
const STREAM_LAYOUT: u64 = 1;
const STREAM_APPEARANCE: u64 = 2;
const STREAM_RADIO: u64 = 3;
const STREAM_ODOMETRY: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn ap_id(index: usize) -> ApId {
    mask_bssid(MacAddr::from_u64(0x0200_0000_0000 | ((index as u64) << 4)))
}

/// Lays out walls and access points around the corridors of `config`.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<World, SimError> {
    config.validate()?;
    let (mut corridors, _) = trajectory::layout(&config.trajectory);
    for (c, &t) in corridors.iter_mut().zip(&config.aliasing.corridor_assignment) {
        c.template = t;
    }
    let lay = &config.layout;
    let half = lay.corridor_width / 2.0;
    let outer = half + lay.room_depth;
    let mut walls = Vec::new();
    let at = |c: &Corridor, s: f64, lat: f64| -> Point {
        let p = c.point_at(s);
        let (u, _) = c.axis();
        [p[0] - u[1] * lat, p[1] + u[0] * lat]
    };
    for c in &corridors {
        let len = c.length();
        for side in [-1.0, 1.0] {
            walls.push(Wall {
                a: at(c, 0.0, side * half),
                b: at(c, len, side * half),
            });
            if lay.partition_spacing > 0.0 {
                let mut s = lay.partition_spacing;
                while s < len - 1e-9 {
                    walls.push(Wall {
                        a: at(c, s, side * half),
                        b: at(c, s, side * outer),
                    });
                    s += lay.partition_spacing;
                }
            }
        }
        if lay.cross_wall_spacing > 0.0 {
            let mut s = lay.cross_wall_spacing;
            while s < len - 1e-9 {
                walls.push(Wall {
                    a: at(c, s, -half),
                    b: at(c, s, half),
                });
                s += lay.cross_wall_spacing;
            }
        }
    }

    // APs spread over the corridors in proportion to length, alternating
    // sides, each in the middle of a room row with some jitter along it.
    let mut rng = stream(seed, STREAM_LAYOUT);
    let total: f64 = corridors.iter().map(Corridor::length).sum();
    let spacing = total / lay.n_aps as f64;
    let mut aps = Vec::with_capacity(lay.n_aps);
    for i in 0..lay.n_aps {
        let mut arc = (i as f64 + 0.5) * spacing + rng.random_range(-0.3..0.3) * spacing;
        arc = arc.clamp(0.0, total - 1e-6);
        let mut k = 0;
        while arc > corridors[k].length() && k + 1 < corridors.len() {
            arc -= corridors[k].length();
            k += 1;
        }
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        let lat = side * (half + lay.room_depth * rng.random_range(0.3..0.7));
        aps.push(AccessPoint {
            id: ap_id(i),
            position: at(&corridors[k], arc.min(corridors[k].length()), lat),
            tx_power_at_1m: lay.tx_power_at_1m,
            radios: lay.radios_per_ap,
        });
    }

    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    let pts = walls.iter().flat_map(|w| [w.a, w.b]).chain(aps.iter().map(|a| a.position));
    for p in pts {
        for i in 0..2 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    Ok(World {
        plan: FloorPlan {
            walls,
            bounds: Bounds { min, max },
        },
        aps,
        propagation: config.propagation,
        corridors,
    })
}

fn landmark_words(
    corridor: &Corridor,
    s: f64,
    params: &AppearanceParams,
    rng: &mut ChaCha8Rng,
) -> Vec<WordId> {
    // Word ids of template t start at (t + 1) * TEMPLATE_STRIDE.
    const TEMPLATE_STRIDE: u64 = 100_000;
    let base = (u64::from(corridor.template) + 1) * TEMPLATE_STRIDE;
    let n = (corridor.length() / params.landmark_spacing).floor() as i64;
    let lo = ((s - params.view_range) / params.landmark_spacing).ceil().max(0.0) as i64;
    let hi = (((s + params.view_range) / params.landmark_spacing).floor() as i64).min(n);
    (lo..=hi)
        .filter(|_| rng.random_bool(params.observe_probability))
        .map(|k| (base + k as u64) as WordId)
        .collect()
}

/// Generates a complete dataset for `config` in `world`.
pub fn synthesize(config: &WorldConfig, world: &World, seed: u64) -> Result<Dataset, SimError> {
    config.validate()?;
    let traj = generate_trajectory(&config.trajectory, config.frame_rate_hz)?;
    let (_, legs) = trajectory::layout(&config.trajectory);

    let mut app_rng = stream(seed, STREAM_APPEARANCE);
    let mut odo_rng = stream(seed, STREAM_ODOMETRY);
    let mut frames: Vec<Frame> = Vec::with_capacity(traj.samples.len());
    for (i, smp) in traj.samples.iter().enumerate() {
        let template = world.corridors[legs[smp.leg].corridor].template;
        // Same lookup the dataset loader uses, so saved datasets reload exactly.
        let corridor = world
            .corridor_for(template, [smp.pose.x, smp.pose.y])
            .expect("leg corridor carries its own template");
        let local_pose = corridor.local_pose(&smp.pose);
        let mut words = landmark_words(corridor, local_pose.x, &config.appearance, &mut app_rng);
        for _ in 0..config.appearance.generic_per_frame {
            words.push(app_rng.random_range(0..config.appearance.generic_pool.max(1)));
        }
        let odom_delta = match frames.last() {
            None => Pose2::identity(),
            Some(prev) => {
                let truth = prev.gt_pose.between(&smp.pose);
                let (sxy, sth) = config.odometry.sigmas_for_step(truth.translation_norm());
                let draw = |sigma: f64, on: bool, rng: &mut ChaCha8Rng| {
                    if on {
                        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
                    } else {
                        0.0
                    }
                };
                let xy_on = config.odometry.sigma_xy > 0.0;
                let bias = config.odometry.heading_bias * truth.translation_norm();
                let noise = Pose2::new(
                    draw(sxy, xy_on, &mut odo_rng),
                    draw(sxy, xy_on, &mut odo_rng),
                    bias + draw(sth, config.odometry.sigma_theta > 0.0, &mut odo_rng),
                );
                truth.compose(&noise)
            }
        };
        frames.push(Frame {
            id: i as KeyframeId,
            t: smp.t,
            gt_pose: smp.pose,
            odom_delta,
            appearance: Appearance::new(words, corridor.template),
            local_pose,
        });
    }

    let mut radio_rng = stream(seed, STREAM_RADIO);
    let mut scans = Vec::new();
    for d in &traj.dwells {
        let pos = [d.pose.x, d.pose.y];
        for j in 0..config.scans_per_dwell {
            let t = d.t_start
                + (j as f64 + 0.5) * config.trajectory.pause_duration / config.scans_per_dwell as f64;
            for ap in &world.aps {
                for bssid in ap.bssids() {
                    if let Some(rssi) = rssi_at(ap, pos, &world.plan, &world.propagation, &mut radio_rng) {
                        scans.push(LoggedScan {
                            reading: ScanReading::new(t, bssid, rssi).expect("rssi clamped to <= 0"),
                            dwell_index: Some(d.index),
                        });
                    }
                }
            }
        }
    }

    let gt_loop_pairs = loop_pairs(&frames, config.loop_max_separation, config.loop_min_time_gap);
    Ok(Dataset {
        name: config.name.clone(),
        seed,
        config: config.clone(),
        world: world.clone(),
        frames,
        scans,
        gt_loop_pairs,
    })
}

/// Frame pairs closer than `max_sep` metres and more than `min_gap` seconds apart.
pub fn loop_pairs(
    frames: &[Frame],
    max_sep: f64,
    min_gap: f64,
) -> BTreeSet<(KeyframeId, KeyframeId)> {
    let mut out = BTreeSet::new();
    for (i, a) in frames.iter().enumerate() {
        for b in &frames[i + 1..] {
            let d = ((a.gt_pose.x - b.gt_pose.x).powi(2) + (a.gt_pose.y - b.gt_pose.y).powi(2)).sqrt();
            if d < max_sep && (b.t - a.t).abs() > min_gap {
                out.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    out
}

/// Builds the world and dataset for a preset or custom config in one go.
pub fn generate(config: &WorldConfig, seed: u64) -> Result<Dataset, SimError> {
    let world = build_world(config, seed)?;
    synthesize(config, &world, seed)
}
