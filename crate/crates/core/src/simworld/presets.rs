use super::{
    AliasingConfig, AppearanceParams, LayoutParams, OdometryNoise, PropagationParams, Shape,
    SimError, TrajectorySpec, WorldConfig,
};

const NAMES: [&str; 4] = ["c_hall", "b_hall", "j_hall", "a_hall"];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

fn base(name: &str, shape: Shape, scale: f64, layout: LayoutParams, aliasing: AliasingConfig) -> WorldConfig {
    WorldConfig {
        name: name.to_string(),
        trajectory: TrajectorySpec {
            shape,
            scale,
            speed: 1.0,
            pause_every: 4.0,
            pause_duration: 10.0,
        },
        layout,
        propagation: PropagationParams::default(),
        aliasing,
        appearance: AppearanceParams::default(),
        odometry: OdometryNoise {
            heading_bias: 0.001,
            ..OdometryNoise::default()
        },
        frame_rate_hz: 2.0,
        scans_per_dwell: 5,
        loop_max_separation: 2.0,
        loop_min_time_gap: 30.0,
    }
}

fn layout(n_aps: usize, partition_spacing: f64, cross_wall_spacing: f64) -> LayoutParams {
    LayoutParams {
        corridor_width: 2.0,
        room_depth: 5.0,
        partition_spacing,
        cross_wall_spacing,
        n_aps,
        tx_power_at_1m: -30.0,
        radios_per_ap: 2,
    }
}

/// Named world recipes:
/// - `c_hall`: square loop of 20 m corridors, 35 APs, densely partitioned;
///   opposite corridors look identical.
/// - `b_hall`: figure-eight, 40 APs; two corridor pairs look identical.
/// - `j_hall`: a loop on a tail walked out and back, 70 APs, no aliasing.
/// - `a_hall`: long open track, 45 APs, few walls, no aliasing.
pub fn preset(name: &str) -> Result<WorldConfig, SimError> {
    let cfg = match name {
        "c_hall" => base(
            name,
            Shape::SquareLoop,
            20.0,
            layout(35, 4.0, 10.0),
            AliasingConfig {
                n_templates: 2,
                corridor_assignment: vec![0, 1, 0, 1],
            },
        ),
        "b_hall" => base(
            name,
            Shape::FigureEight,
            24.0,
            layout(40, 3.0, 8.0),
            AliasingConfig {
                n_templates: 4,
                corridor_assignment: vec![0, 1, 2, 3, 2, 1],
            },
        ),
        "j_hall" => base(
            name,
            Shape::NineLoop,
            40.0,
            layout(70, 3.0, 6.0),
            AliasingConfig {
                n_templates: 4,
                corridor_assignment: vec![0, 1, 2, 3],
            },
        ),
        "a_hall" => base(
            name,
            Shape::LongTrack,
            80.0,
            layout(45, 0.0, 20.0),
            AliasingConfig {
                n_templates: 4,
                corridor_assignment: vec![0, 1, 2, 3],
            },
        ),
        _ => {
            return Err(SimError::UnknownPreset {
                name: name.to_string(),
                valid: NAMES.join(", "),
            })
        }
    };
    Ok(cfg)
}

pub fn preset_worlds() -> Vec<WorldConfig> {
    NAMES.iter().map(|n| preset(n).expect("built-in preset")).collect()
}
