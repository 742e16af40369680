//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use wifi_slam::clustering::ClusterStore;
use wifi_slam::eval::{
    gt_poses, ledger, localize_dataset, score_loops, similarity_distance_curve, trajectory_error, MATCH_RADIUS,
};
use wifi_slam::frontend::{Appearance, InvertedIndex};
use wifi_slam::gating::{run_pipeline, Policy, PolicyParams};
use wifi_slam::posegraph::{
    kabsch_align, optimize, residual, residual_jacobians, EdgeKind, GraphEdge, Pose2, PoseGraph,
};
use wifi_slam::signature::{mask_bssid, MacAddr, Signature};
use wifi_slam::simworld::{generate, preset, Dataset};

/// Real-time threshold (cost units per step) that forces working-memory
/// flushes before the j_hall revisits.
const TIGHT_THRESHOLD: f64 = 70.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn dataset(name: &str, seed: u64) -> Dataset {
    generate(&preset(name).unwrap(), seed).unwrap()
}

fn params(policy: Policy, gated: bool) -> PolicyParams {
    PolicyParams {
        policy,
        gated,
        ..Default::default()
    }
}

fn aliasing_false_positives() -> Outcome {
    let start = Instant::now();
    let cells: Vec<(&str, usize, u64)> = ["b_hall", "c_hall"]
        .into_iter()
        .flat_map(|n| [10, 15].into_iter().flat_map(move |m| (0..20).map(move |s| (n, m, s))))
        .collect();
    let results: Vec<(&str, usize, usize, usize)> = cells
        .par_iter()
        .map(|&(name, mm, seed)| {
            let ds = dataset(name, seed);
            let fp = |gated| {
                let p = PolicyParams {
                    min_matches: mm,
                    ..params(Policy::Orb, gated)
                };
                let r = run_pipeline(&ds, &p, seed).unwrap();
                score_loops(&r.loop_edges(), &ds.gt_loop_pairs, MATCH_RADIUS).false_positives
            };
            (name, mm, fp(false), fp(true))
        })
        .collect();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for name in ["b_hall", "c_hall"] {
        for mm in [10, 15] {
            let cell: Vec<_> = results.iter().filter(|r| r.0 == name && r.1 == mm).collect();
            let vanilla = cell.iter().filter(|r| r.2 >= 1).count();
            let gated_clean = cell.iter().filter(|r| r.3 == 0).count();
            pass &= vanilla * 5 >= cell.len() * 4 && gated_clean == cell.len();
            parts.push(format!("{name}/mm{mm}: vanilla FP in {vanilla}/20, gated clean {gated_clean}/20"));
        }
    }
    Outcome {
        pass,
        detail: format!("{}; {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
    }
}

struct RtabPair {
    vanilla_fn_pct: f64,
    gated_fn_pct: f64,
    vanilla_rmse: f64,
    gated_rmse: f64,
}

fn rtab_runs() -> Vec<RtabPair> {
    (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let ds = dataset("j_hall", seed);
            let run = |gated| {
                let mut p = params(Policy::Rtab, gated);
                p.rtab.real_time_threshold = Some(TIGHT_THRESHOLD);
                let r = run_pipeline(&ds, &p, seed).unwrap();
                let s = score_loops(&r.loop_edges(), &ds.gt_loop_pairs, MATCH_RADIUS);
                (s.fn_pct, trajectory_error(&r.graph.nodes, &gt_poses(&ds)).unwrap())
            };
            let (vf, vr) = run(false);
            let (gf, gr) = run(true);
            RtabPair {
                vanilla_fn_pct: vf,
                gated_fn_pct: gf,
                vanilla_rmse: vr,
                gated_rmse: gr,
            }
        })
        .collect()
}

fn memory_recovery(runs: &[RtabPair]) -> Outcome {
    let vanilla_all_missed = runs.iter().filter(|r| r.vanilla_fn_pct == 100.0).count();
    let worst_gated = runs.iter().map(|r| r.gated_fn_pct).fold(0.0, f64::max);
    Outcome {
        pass: vanilla_all_missed == runs.len() && worst_gated <= 20.0,
        detail: format!(
            "vanilla FN 100% in {vanilla_all_missed}/{} seeds, worst gated FN {worst_gated:.1}%",
            runs.len()
        ),
    }
}

fn accuracy_direction(runs: &[RtabPair]) -> Outcome {
    let scenarios: Vec<&RtabPair> = runs.iter().filter(|r| r.vanilla_fn_pct == 100.0).collect();
    let worst = scenarios
        .iter()
        .map(|r| r.gated_rmse / r.vanilla_rmse)
        .fold(0.0, f64::max);
    let mean_v = scenarios.iter().map(|r| r.vanilla_rmse).sum::<f64>() / scenarios.len().max(1) as f64;
    let mean_g = scenarios.iter().map(|r| r.gated_rmse).sum::<f64>() / scenarios.len().max(1) as f64;
    Outcome {
        pass: !scenarios.is_empty() && worst < 0.5,
        detail: format!(
            "{} scenarios, worst gated/vanilla RMSE ratio {worst:.3} (mean {mean_g:.3} m vs {mean_v:.3} m)",
            scenarios.len()
        ),
    }
}

fn compute_reduction() -> Outcome {
    let per_seed: Vec<(f64, usize, bool)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let ds = dataset("j_hall", seed);
            let v = run_pipeline(&ds, &params(Policy::Orb, false), seed).unwrap();
            let g = run_pipeline(&ds, &params(Policy::Orb, true), seed).unwrap();
            let ratio = ledger(&g).loop_closure_cost.cost / ledger(&v).loop_closure_cost.cost;
            let subset = g.events.iter().all(|e| e.subset_of_vanilla == Some(true));
            (ratio, g.store.len(), subset)
        })
        .collect();
    let mean = per_seed.iter().map(|r| r.0).sum::<f64>() / per_seed.len() as f64;
    let min_clusters = per_seed.iter().map(|r| r.1).min().unwrap();
    let subsets = per_seed.iter().all(|r| r.2);
    Outcome {
        pass: mean <= 0.85 && min_clusters >= 8 && subsets,
        detail: format!(
            "mean gated/vanilla loop cost {mean:.3}, min clusters {min_clusters}, candidate subsets {}",
            if subsets { "100%" } else { "violated" }
        ),
    }
}

fn overhead_bound() -> Outcome {
    let cells: Vec<(&str, Policy, u64)> = ["c_hall", "b_hall", "j_hall", "a_hall"]
        .into_iter()
        .flat_map(|n| Policy::ALL.into_iter().flat_map(move |p| (0..3).map(move |s| (n, p, s))))
        .collect();
    let ratios: Vec<(&str, f64)> = cells
        .par_iter()
        .map(|&(name, policy, seed)| {
            let ds = dataset(name, seed);
            let v = ledger(&run_pipeline(&ds, &params(policy, false), seed).unwrap());
            let g = ledger(&run_pipeline(&ds, &params(policy, true), seed).unwrap());
            (name, g.overhead_cost() / v.loop_closure_cost.cost)
        })
        .collect();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (n, r) in ratios {
        let w = worst.entry(n).or_insert(0.0);
        *w = w.max(r);
    }
    let pass = worst.values().all(|&r| r <= 0.10);
    let detail = worst
        .iter()
        .map(|(n, r)| format!("{n} {:.1}%", 100.0 * r))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass,
        detail: format!("worst overhead / vanilla loop cost: {detail}"),
    }
}

fn similarity_trend() -> Outcome {
    let rhos: Vec<(f64, f64)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = preset("b_hall").unwrap();
            cfg.propagation.noise_sigma = 2.0;
            let noisy = similarity_distance_curve(&generate(&cfg, seed).unwrap()).spearman.unwrap();
            cfg.propagation.noise_sigma = 0.0;
            let clean = similarity_distance_curve(&generate(&cfg, seed).unwrap()).spearman.unwrap();
            (clean, noisy)
        })
        .collect();
    let worst_clean = rhos.iter().map(|r| r.0).fold(f64::MIN, f64::max);
    let worst_noisy = rhos.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    Outcome {
        pass: worst_clean < -0.5 && worst_noisy < -0.3,
        detail: format!("worst spearman: {worst_clean:.3} at 0 dB, {worst_noisy:.3} at 2 dB"),
    }
}

fn random_pose(rng: &mut ChaCha8Rng, span: f64) -> Pose2 {
    Pose2::new(
        rng.random_range(-span..span),
        rng.random_range(-span..span),
        rng.random_range(-3.0..3.0),
    )
}

fn random_graph(rng: &mut ChaCha8Rng) -> PoseGraph {
    let n = rng.random_range(3..12u32);
    let mut g = PoseGraph::new();
    let truth: Vec<Pose2> = (0..n).map(|_| random_pose(rng, 10.0)).collect();
    for (i, p) in truth.iter().enumerate() {
        let jitter = Pose2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2));
        g.add_node(i as u32, p.compose(&jitter));
    }
    let noisy = |rng: &mut ChaCha8Rng, a: &Pose2, b: &Pose2| {
        a.between(b)
            .compose(&Pose2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05)))
    };
    for i in 1..n {
        let rel = noisy(rng, &truth[i as usize - 1], &truth[i as usize]);
        g.add_edge(GraphEdge::with_sigmas(i - 1, i, rel, 0.1, 0.05, EdgeKind::Odometry)).unwrap();
    }
    for _ in 0..rng.random_range(1..5) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            let rel = noisy(rng, &truth[a as usize], &truth[b as usize]);
            g.add_edge(GraphEdge::with_sigmas(a, b, rel, 0.2, 0.1, EdgeKind::Loop)).unwrap();
        }
    }
    g
}

fn numerical_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Kabsch on exact rigid copies.
    let mut worst_rmsd: f64 = 0.0;
    for _ in 0..100 {
        let t = random_pose(&mut rng, 50.0);
        let est: Vec<[f64; 2]> = (0..rng.random_range(3..40))
            .map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)])
            .collect();
        let gt: Vec<[f64; 2]> = est.iter().map(|&p| t.transform_point(p)).collect();
        let fit = kabsch_align(&est, &gt).unwrap();
        let sq: f64 = est
            .iter()
            .zip(&gt)
            .map(|(&e, g)| {
                let a = fit.apply(e);
                (a[0] - g[0]).powi(2) + (a[1] - g[1]).powi(2)
            })
            .sum();
        worst_rmsd = worst_rmsd.max((sq / est.len() as f64).sqrt());
    }

    // Analytic Jacobians against central differences.
    let mut worst_jac: f64 = 0.0;
    let h = 1e-6;
    let mut graphs = Vec::new();
    for _ in 0..50 {
        let g = random_graph(&mut rng);
        for e in &g.edges {
            let (ja, jb) = residual_jacobians(e, &g.nodes).unwrap();
            for (node, j) in [(e.from, ja), (e.to, jb)] {
                for k in 0..3 {
                    let shifted = |d: f64| {
                        let mut nodes = g.nodes.clone();
                        let p = nodes.get_mut(&node).unwrap();
                        match k {
                            0 => p.x += d,
                            1 => p.y += d,
                            _ => p.theta += d,
                        }
                        residual(e, &nodes).unwrap()
                    };
                    let (plus, minus) = (shifted(h), shifted(-h));
                    for row in 0..3 {
                        let mut diff = plus[row] - minus[row];
                        if row == 2 {
                            diff = wifi_slam::posegraph::wrap_angle(diff);
                        }
                        let fd = diff / (2.0 * h);
                        let rel = (fd - j[(row, k)]).abs() / j[(row, k)].abs().max(1.0);
                        worst_jac = worst_jac.max(rel);
                    }
                }
            }
        }
        graphs.push(g);
    }

    // LM error never rises over accepted steps.
    let mut monotone = true;
    for g in &graphs {
        let out = optimize(g, 50, 1e-4).unwrap();
        monotone &= out.report.error_trace.windows(2).all(|w| w[1] <= w[0]);
    }
    Outcome {
        pass: worst_rmsd < 1e-9 && worst_jac < 1e-6 && monotone,
        detail: format!(
            "kabsch worst RMSD {worst_rmsd:.1e}, jacobian worst rel err {worst_jac:.1e}, LM monotone {monotone}"
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut index_ok = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=500u32);
        let vocab = rng.random_range(5..400u32);
        let mut idx = InvertedIndex::new();
        let mut stored: Vec<(u32, BTreeSet<u32>)> = Vec::new();
        for k in 0..n {
            let words: Vec<u32> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..vocab)).collect();
            idx.insert(k, &Appearance::new(words.clone(), 0));
            stored.push((k, words.into_iter().collect()));
        }
        let q: Vec<u32> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..vocab)).collect();
        let qs: BTreeSet<u32> = q.iter().copied().collect();
        let mut brute: Vec<(usize, u32)> = stored
            .iter()
            .map(|(k, w)| (w.intersection(&qs).count(), *k))
            .filter(|(c, _)| *c > 0)
            .collect();
        brute.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<u32> = brute.into_iter().map(|(_, k)| k).collect();
        if idx.query(&Appearance::new(q, 0)) == expected {
            index_ok += 1;
        }
    }

    let mut clusters_ok = 0;
    for _ in 0..100 {
        let n_aps = rng.random_range(1..12u64);
        let sig = |rng: &mut ChaCha8Rng| {
            let mut entries = BTreeMap::new();
            for a in 0..n_aps {
                if rng.random_bool(0.7) {
                    entries.insert(mask_bssid(MacAddr::from_u64(a << 4)), rng.random_range(0.0..60.0));
                }
            }
            if entries.is_empty() {
                entries.insert(mask_bssid(MacAddr::from_u64(0)), rng.random_range(1.0..60.0));
            }
            Signature::new(entries, 0.0, 0).unwrap()
        };
        let mut store = ClusterStore::new();
        let mut reps: Vec<Signature> = Vec::new();
        for k in 0..rng.random_range(1..40u32) {
            let s = sig(&mut rng);
            let none = store.similar_clusters(&s, 1.0).unwrap();
            // Empty neighbor set: every keyframe opens its own cluster.
            store.assign(k, &s, &BTreeSet::new(), &none).unwrap();
            reps.push(s);
        }
        let q = sig(&mut rng);
        let thr = rng.random_range(0.05..1.0);
        let cosine = |a: &Signature, b: &Signature| {
            let dot: f64 = a.entries().iter().filter_map(|(k, v)| b.entries().get(k).map(|w| v * w)).sum();
            let na = a.entries().values().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.entries().values().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        };
        let expected: BTreeSet<u32> = reps
            .iter()
            .enumerate()
            .filter(|(_, r)| cosine(&q, r) >= thr)
            .map(|(i, _)| i as u32)
            .collect();
        let got: BTreeSet<u32> = store.similar_clusters(&q, thr).unwrap().ids().collect();
        if got == expected {
            clusters_ok += 1;
        }
    }
    Outcome {
        pass: index_ok == 100 && clusters_ok == 100,
        detail: format!("index query {index_ok}/100, similar clusters {clusters_ok}/100"),
    }
}

fn read_without_wall_time(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    if path.file_name().unwrap() != "report.csv" {
        return text;
    }
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|h| *h == wifi_slam::eval::WALL_TIME_COLUMN).unwrap();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(wall);
            cols.join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_wifislam");
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for round in 0..2 {
        let root = tmp.path().join(format!("round{round}"));
        let data = root.join("data");
        let out = root.join("run");
        let ok = Command::new(bin)
            .args(["gen", "--world", "c_hall", "--seed", "4", "--out"])
            .arg(&data)
            .status()
            .unwrap()
            .success()
            && Command::new(bin)
                .arg("run")
                .arg(&data)
                .args(["--seed", "4", "--policy", "rtab", "--gated", "true", "--real-time-threshold", "40", "--out"])
                .arg(&out)
                .status()
                .unwrap()
                .success();
        if !ok {
            return Outcome {
                pass: false,
                detail: "command failed".into(),
            };
        }
        let mut files = BTreeMap::new();
        for dir in [&data, &out] {
            for entry in std::fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                let rel = p.strip_prefix(&root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, read_without_wall_time(&p));
            }
        }
        trees.push(files);
    }
    let same = trees[0] == trees[1];
    Outcome {
        pass: same && trees[0].len() >= 10,
        detail: format!("{} files compared, identical {same}", trees[0].len()),
    }
}

fn localization_cdf() -> Outcome {
    let fractions: Vec<f64> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            localize_dataset(&dataset("c_hall", seed), 0.4, 0.85)
                .unwrap()
                .cdf
                .fraction_within(4.0)
        })
        .collect();
    let worst = fractions.iter().copied().fold(1.0, f64::min);
    Outcome {
        pass: worst >= 0.9,
        detail: format!("worst fraction within 4 m: {:.1}%", 100.0 * worst),
    }
}

fn main() {
    let rtab = rtab_runs();
    let results = [
        ("1 perceptual aliasing", aliasing_false_positives()),
        ("2 memory recovery", memory_recovery(&rtab)),
        ("3 accuracy direction", accuracy_direction(&rtab)),
        ("4 compute reduction", compute_reduction()),
        ("5 overhead bound", overhead_bound()),
        ("6 similarity trend", similarity_trend()),
        ("7 numerical oracles", numerical_oracles()),
        ("8 oracle equivalence", oracle_equivalence()),
        ("9 determinism", determinism()),
        ("10 localization cdf", localization_cdf()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
