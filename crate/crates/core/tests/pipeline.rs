//! End-to-end pipeline runs on the simulated presets.

use std::collections::BTreeMap;

use wifi_slam::eval::{gt_poses, ledger, score_loops, trajectory_error, ReportRow, MATCH_RADIUS};
use wifi_slam::gating::{run_pipeline, Policy, PolicyParams};
use wifi_slam::posegraph::Pose2;
use wifi_slam::simworld::{generate, preset, Dataset};

fn dataset(name: &str, seed: u64) -> Dataset {
    generate(&preset(name).unwrap(), seed).unwrap()
}

fn params(policy: Policy, gated: bool) -> PolicyParams {
    PolicyParams {
        policy,
        gated,
        ..PolicyParams::default()
    }
}

/// Dead reckoning from the first ground-truth pose.
fn odometry_only(ds: &Dataset) -> BTreeMap<u32, Pose2> {
    let mut pose = ds.frames[0].gt_pose;
    let mut out = BTreeMap::new();
    for (i, f) in ds.frames.iter().enumerate() {
        if i > 0 {
            pose = pose.compose(&f.odom_delta);
        }
        out.insert(f.id, pose);
    }
    out
}

#[test]
fn every_policy_runs_on_every_preset() {
    for name in ["a_hall", "c_hall"] {
        let ds = dataset(name, 1);
        for policy in Policy::ALL {
            for gated in [false, true] {
                let run = run_pipeline(&ds, &params(policy, gated), 3).unwrap();
                assert_eq!(run.events.len(), ds.frames.len());
                assert_eq!(run.graph.nodes.len(), ds.frames.len());
                let row = ReportRow::from_run(&run, &ds).unwrap();
                assert!(row.rmse_m.is_finite());
                if !gated {
                    assert_eq!(row.overhead_cost, 0.0);
                }
            }
        }
    }
}

#[test]
fn gated_loop_closure_beats_dead_reckoning() {
    let ds = dataset("c_hall", 2);
    let gt = gt_poses(&ds);
    let drift = trajectory_error(&odometry_only(&ds), &gt).unwrap();
    let run = run_pipeline(&ds, &params(Policy::Orb, true), 2).unwrap();
    let closed = trajectory_error(&run.graph.nodes, &gt).unwrap();
    assert!(!run.loop_edges().is_empty());
    assert!(closed < drift, "loop closed {closed} vs odometry {drift}");
}

#[test]
fn gated_runs_detect_loops_without_false_positives() {
    let ds = dataset("c_hall", 4);
    let run = run_pipeline(&ds, &params(Policy::Orb, true), 4).unwrap();
    let score = score_loops(&run.loop_edges(), &ds.gt_loop_pairs, MATCH_RADIUS);
    assert_eq!(score.false_positives, 0);
    assert!(score.true_positives > 0);
}

#[test]
fn gating_cuts_loop_closure_cost() {
    let ds = dataset("b_hall", 5);
    let vanilla = ledger(&run_pipeline(&ds, &params(Policy::Orb, false), 5).unwrap());
    let gated = ledger(&run_pipeline(&ds, &params(Policy::Orb, true), 5).unwrap());
    assert!(gated.loop_closure_cost.cost < vanilla.loop_closure_cost.cost);
    assert_eq!(vanilla.overhead_cost(), 0.0);
    assert!(gated.overhead_cost() > 0.0);
}

#[test]
fn larger_site_pays_more_overhead_per_frame() {
    let per_frame = |name: &str| {
        let ds = dataset(name, 6);
        let run = run_pipeline(&ds, &params(Policy::Orb, true), 6).unwrap();
        ledger(&run).overhead_cost() / ds.frames.len() as f64
    };
    let (small, large) = (per_frame("a_hall"), per_frame("j_hall"));
    assert!(small < large, "a_hall {small} vs j_hall {large}");
}

#[test]
fn runs_are_deterministic() {
    let ds = dataset("a_hall", 8);
    for policy in Policy::ALL {
        let p = params(policy, true);
        let a = run_pipeline(&ds, &p, 8).unwrap();
        let b = run_pipeline(&ds, &p, 8).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.graph.nodes, b.graph.nodes);
        assert_eq!(a.memory_trace, b.memory_trace);
    }
}
