//! `wifislam`: dataset generation, single runs, parameter sweeps and report
//! emission for the Wi-Fi gated loop-closure testbed.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wifi_slam::eval::{
    format_threshold, localize_dataset, read_report_csv, similarity_distance_curve, write_report_csv, ReportRow,
};
use wifi_slam::gating::{run_pipeline, Policy, PolicyParams, RunRecord};
use wifi_slam::posegraph::write_trajectory_csv;
use wifi_slam::simworld::{generate, load_dataset, preset, save_dataset, Dataset, SimError, WorldConfig};

#[derive(Parser)]
#[command(name = "wifislam", version, about = "Wi-Fi gated loop-closure testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset.
    Gen(GenArgs),
    /// Run one pipeline configuration over a dataset.
    Run(RunArgs),
    /// Run every cell of a parameter grid over a dataset.
    Sweep(SweepArgs),
    /// Emit the Wi-Fi similarity versus distance curve.
    Curve(CurveArgs),
    /// Localize query frames against a map split of a dataset.
    Localize(LocalizeArgs),
    /// Merge report rows from run and sweep directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Preset name or path to a dataset's world.json.
    #[arg(long)]
    world: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override the RSSI shadowing noise (dB).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Override the odometry heading bias (rad per meter).
    #[arg(long)]
    heading_bias: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct ParamFlags {
    /// TOML file with `seed` and a `[params]` table; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long, action = clap::ArgAction::Set)]
    gated: Option<bool>,
    #[arg(long)]
    min_matches: Option<usize>,
    #[arg(long)]
    inlier_distance: Option<f64>,
    #[arg(long)]
    wifi_threshold: Option<f64>,
    /// `inf` or a cost budget per step.
    #[arg(long, value_parser = parse_threshold)]
    real_time_threshold: Option<Threshold>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory written by `gen`.
    dataset: PathBuf,
    #[command(flatten)]
    flags: ParamFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    dataset: PathBuf,
    /// TOML grid file.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: number of processors).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CurveArgs {
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    dataset: PathBuf,
    /// Fraction of frames used for the map.
    #[arg(long, default_value_t = 0.4)]
    split: f64,
    #[arg(long, default_value_t = 0.85)]
    wifi_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories containing `report.csv`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Threshold(Option<f64>);

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Threshold(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Threshold(Some(v))),
        _ => Err(format!("expected `inf` or a positive number, got `{s}`")),
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> std::result::Result<T, Failure>;
    fn data(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

#[derive(Deserialize)]
struct WorldFile {
    config: WorldConfig,
}

fn world_config(world: &str) -> CmdResult<WorldConfig> {
    let path = Path::new(world);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
        let wf: WorldFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .usage()?;
        return Ok(wf.config);
    }
    preset(world).usage()
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let mut cfg = world_config(&a.world)?;
    if let Some(s) = a.noise_sigma {
        cfg.propagation.noise_sigma = s;
    }
    if let Some(b) = a.heading_bias {
        cfg.odometry.heading_bias = b;
    }
    let ds = generate(&cfg, a.seed).map_err(|e| match e {
        SimError::InvalidConfig(_) | SimError::UnknownPreset { .. } => Failure::Usage(e.into()),
        other => Failure::Data(other.into()),
    })?;
    save_dataset(&ds, &a.out).data()?;
    println!(
        "{}: {} frames, {} dwells, {} APs, {} ground-truth loop pairs -> {}",
        ds.name,
        ds.frames.len(),
        ds.dwell_count(),
        ds.world.aps.len(),
        ds.gt_loop_pairs.len(),
        a.out.display()
    );
    Ok(())
}

/// Effective configuration of a run, written next to its outputs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: Option<u64>,
    params: PolicyParams,
}

fn resolve(flags: &ParamFlags) -> CmdResult<(u64, PolicyParams)> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
            toml::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .usage()?
        }
        None => RunConfig::default(),
    };
    let p = &mut cfg.params;
    if let Some(v) = flags.policy {
        p.policy = v;
    }
    if let Some(v) = flags.gated {
        p.gated = v;
    }
    if let Some(v) = flags.min_matches {
        p.min_matches = v;
    }
    if let Some(v) = flags.inlier_distance {
        p.inlier_distance = v;
    }
    if let Some(v) = flags.wifi_threshold {
        p.wifi_threshold = v;
    }
    if let Some(Threshold(v)) = flags.real_time_threshold {
        p.rtab.real_time_threshold = v;
    }
    p.validate().map_err(|e| Failure::Usage(anyhow!(e)))?;
    let seed = flags
        .seed
        .or(cfg.seed)
        .ok_or_else(|| Failure::Usage(anyhow!("a seed is required (--seed or `seed` in the config file)")))?;
    Ok((seed, cfg.params))
}

fn load(dir: &Path) -> CmdResult<Dataset> {
    load_dataset(dir)
        .with_context(|| format!("loading dataset {}", dir.display()))
        .data()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Runs one configuration and writes its artifacts into `out`.
fn execute(ds: &Dataset, seed: u64, params: &PolicyParams, out: &Path) -> CmdResult<ReportRow> {
    let run = run_pipeline(ds, params, seed).data()?;
    let row = ReportRow::from_run(&run, ds).data()?;
    write_run(&run, seed, &row, out).data()?;
    Ok(row)
}

fn write_run(run: &RunRecord, seed: u64, row: &ReportRow, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trajectory_csv(&run.trajectory_rows(), create(&out.join("trajectory.csv"))?)?;
    let mut w = create(&out.join("loop_events.jsonl"))?;
    run.write_events_jsonl(&mut w)?;
    w.flush()?;
    run.write_memory_trace_csv(create(&out.join("memory_trace.csv"))?)?;
    run.store.write_membership_csv(create(&out.join("clusters.csv"))?)?;
    let mut w = create(&out.join("representatives.jsonl"))?;
    run.store.write_representatives_jsonl(&mut w)?;
    w.flush()?;
    let cfg = RunConfig {
        seed: Some(seed),
        params: run.params.clone(),
    };
    fs::write(out.join("config.toml"), toml::to_string_pretty(&cfg)?)?;
    write_report_csv(std::slice::from_ref(row), create(&out.join("report.csv"))?)?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let (seed, params) = resolve(&a.flags)?;
    let ds = load(&a.dataset)?;
    let row = execute(&ds, seed, &params, &a.out)?;
    println!(
        "{} {} gated={} rt={}: rmse {:.3} m, fp {}, fn {} ({:.1}%), loop cost {}, overhead {}",
        row.dataset,
        row.policy,
        row.gated,
        row.real_time_threshold,
        row.rmse_m,
        row.fp,
        row.fn_,
        row.fn_pct,
        row.loop_cost,
        row.overhead_cost
    );
    Ok(())
}

/// Sweep grid: every listed value of every field, Cartesian product.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    seed: u64,
    /// Base parameters the grid varies.
    #[serde(default)]
    params: PolicyParams,
    #[serde(default)]
    grid: GridAxes,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GridAxes {
    policy: Vec<Policy>,
    gated: Vec<bool>,
    min_matches: Vec<usize>,
    inlier_distance: Vec<f64>,
    wifi_threshold: Vec<f64>,
    real_time_threshold: Vec<toml::Value>,
}

fn threshold_value(v: &toml::Value) -> Result<Option<f64>> {
    match v {
        toml::Value::String(s) => parse_threshold(s).map(|t| t.0).map_err(|e| anyhow!(e)),
        toml::Value::Integer(i) => parse_threshold(&i.to_string()).map(|t| t.0).map_err(|e| anyhow!(e)),
        toml::Value::Float(f) => parse_threshold(&f.to_string()).map(|t| t.0).map_err(|e| anyhow!(e)),
        other => bail!("real_time_threshold entries must be numbers or \"inf\", got {other}"),
    }
}

fn expand(grid: &Grid) -> Result<Vec<PolicyParams>> {
    let g = &grid.grid;
    let thresholds = g.real_time_threshold.iter().map(threshold_value).collect::<Result<Vec<_>>>()?;
    let mut cells = vec![grid.params.clone()];
    fn axis<T: Clone>(cells: Vec<PolicyParams>, values: &[T], set: impl Fn(&mut PolicyParams, T)) -> Vec<PolicyParams> {
        if values.is_empty() {
            return cells;
        }
        let set = &set;
        cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    set(&mut c, v.clone());
                    c
                })
            })
            .collect()
    }
    cells = axis(cells, &g.policy, |c, v| c.policy = v);
    cells = axis(cells, &g.gated, |c, v| c.gated = v);
    cells = axis(cells, &g.min_matches, |c, v| c.min_matches = v);
    cells = axis(cells, &g.inlier_distance, |c, v| c.inlier_distance = v);
    cells = axis(cells, &g.wifi_threshold, |c, v| c.wifi_threshold = v);
    cells = axis(cells, &thresholds, |c, v| c.rtab.real_time_threshold = v);
    for c in &cells {
        c.validate().map_err(|e| anyhow!(e))?;
    }
    Ok(cells)
}

fn cell_dir(p: &PolicyParams) -> String {
    format!(
        "{}_{}_mm{}_in{}_wt{}_rt{}",
        p.policy,
        if p.gated { "gated" } else { "vanilla" },
        p.min_matches,
        p.inlier_distance,
        p.wifi_threshold,
        format_threshold(p.rtab.real_time_threshold)
    )
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let text = fs::read_to_string(&a.grid)
        .with_context(|| format!("reading {}", a.grid.display()))
        .usage()?;
    let grid: Grid = toml::from_str(&text)
        .with_context(|| format!("parsing grid {}", a.grid.display()))
        .usage()?;
    let cells = expand(&grid).context("invalid grid").usage()?;
    let ds = load(&a.dataset)?;
    fs::create_dir_all(&a.out).context("creating sweep directory").data()?;

    let report_path = a.out.join("report.csv");
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    if report_path.exists() {
        let existing = read_report_csv(File::open(&report_path).data()?)
            .context("reading existing report.csv")
            .data()?;
        rows.extend(existing.into_iter().map(|r| (r.key(), r)));
    }
    let key_of = |p: &PolicyParams| {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            ds.name,
            grid.seed,
            p.policy,
            p.gated,
            p.min_matches,
            p.inlier_distance,
            p.wifi_threshold,
            format_threshold(p.rtab.real_time_threshold)
        )
    };
    let todo: Vec<&PolicyParams> = cells.iter().filter(|c| !rows.contains_key(&key_of(c))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")
        .usage()?;
    let fresh: Vec<CmdResult<ReportRow>> = pool.install(|| {
        todo.par_iter()
            .map(|p| execute(&ds, grid.seed, p, &a.out.join("cells").join(cell_dir(p))))
            .collect()
    });
    let computed = fresh.len();
    for r in fresh {
        let r = r?;
        rows.insert(r.key(), r);
    }
    let ordered: Vec<ReportRow> = cells.iter().filter_map(|c| rows.get(&key_of(c)).cloned()).collect();
    write_report_csv(&ordered, create(&report_path).data()?).data()?;
    println!(
        "{} cells ({} computed, {} reused) -> {}",
        cells.len(),
        computed,
        cells.len() - computed,
        report_path.display()
    );
    Ok(())
}

fn output_file(out: &Path, name: &str) -> Result<PathBuf> {
    if out.extension().is_some() {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(out.to_path_buf())
    } else {
        fs::create_dir_all(out)?;
        Ok(out.join(name))
    }
}

fn cmd_curve(a: CurveArgs) -> CmdResult {
    let ds = load(&a.dataset)?;
    if ds.dwell_count() < 2 {
        return Err(Failure::Data(anyhow!("need at least two Wi-Fi dwells")));
    }
    let curve = similarity_distance_curve(&ds);
    let path = output_file(&a.out, "similarity_curve.csv").data()?;
    let mut w = create(&path).data()?;
    curve.write_csv(&mut w).data()?;
    w.flush().data()?;
    match curve.spearman {
        Some(r) => println!("{} pairs, spearman {r:.3} -> {}", curve.points.len(), path.display()),
        None => println!("{} pairs, spearman undefined -> {}", curve.points.len(), path.display()),
    }
    Ok(())
}

fn cmd_localize(a: LocalizeArgs) -> CmdResult {
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(Failure::Usage(anyhow!("--split must be in (0, 1)")));
    }
    let ds = load(&a.dataset)?;
    let loc = localize_dataset(&ds, a.split, a.wifi_threshold).data()?;
    let path = output_file(&a.out, "cdf.csv").data()?;
    let mut w = create(&path).data()?;
    loc.cdf.write_csv(&mut w).data()?;
    w.flush().data()?;
    println!(
        "{} map / {} query frames, {:.1}% within 4 m, {} fallbacks -> {}",
        loc.map_frames,
        loc.query_frames,
        100.0 * loc.cdf.fraction_within(4.0),
        loc.fallbacks,
        path.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join("report.csv") } else { input.clone() };
        let file = File::open(&path).with_context(|| format!("opening {}", path.display())).data()?;
        for r in read_report_csv(file).with_context(|| format!("reading {}", path.display())).data()? {
            rows.insert(r.key(), r);
        }
    }
    let rows: Vec<ReportRow> = rows.into_values().collect();
    let path = output_file(&a.out, "report.csv").data()?;
    write_report_csv(&rows, create(&path).data()?).data()?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}
