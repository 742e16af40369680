//! Dataset directories: `frames.csv`, `scans.csv`, `loops_gt.csv` and
//! `world.json`. Floats are written in shortest round-trip form, so a saved
//! dataset loads back bit-identical.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Frame, SimError, World, WorldConfig};
use crate::frontend::{Appearance, WordId};
use crate::posegraph::Pose2;
use crate::signature::read_scan_log;
use crate::KeyframeId;

const FRAMES_HEADER: [&str; 10] = [
    "id", "t_s", "gt_x", "gt_y", "gt_theta", "odo_dx", "odo_dy", "odo_dtheta", "template_id", "words",
];

#[derive(Serialize, Deserialize)]
struct WorldFile {
    name: String,
    seed: u64,
    config: WorldConfig,
    world: World,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => SimError::Io {
            path: path.display().to_string(),
            source,
        },
        other => SimError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(format!("{other:?}")),
        },
    }
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let p = dir.join("frames.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&p).map_err(io_err(&p))?));
    w.write_record(FRAMES_HEADER).map_err(csv_err(&p))?;
    for f in &ds.frames {
        let words: Vec<String> = f.appearance.words().iter().map(u32::to_string).collect();
        w.write_record([
            f.id.to_string(),
            f.t.to_string(),
            f.gt_pose.x.to_string(),
            f.gt_pose.y.to_string(),
            f.gt_pose.theta.to_string(),
            f.odom_delta.x.to_string(),
            f.odom_delta.y.to_string(),
            f.odom_delta.theta.to_string(),
            f.appearance.place_template.to_string(),
            words.join("|"),
        ])
        .map_err(csv_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("scans.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&p).map_err(io_err(&p))?));
    w.write_record(["timestamp_s", "bssid", "rssi_dbm", "dwell_index"])
        .map_err(csv_err(&p))?;
    for s in &ds.scans {
        w.write_record([
            s.reading.timestamp.to_string(),
            s.reading.bssid.to_string(),
            s.reading.rssi.to_string(),
            s.dwell_index.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("loops_gt.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&p).map_err(io_err(&p))?));
    w.write_record(["id_a", "id_b"]).map_err(csv_err(&p))?;
    for (a, b) in &ds.gt_loop_pairs {
        w.write_record([a.to_string(), b.to_string()]).map_err(csv_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("world.json");
    let file = WorldFile {
        name: ds.name.clone(),
        seed: ds.seed,
        config: ds.config.clone(),
        world: ds.world.clone(),
    };
    let mut out = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
    serde_json::to_writer_pretty(&mut out, &file).map_err(|e| SimError::Json(e.to_string()))?;
    out.write_all(b"\n").map_err(io_err(&p))?;
    out.flush().map_err(io_err(&p))?;
    Ok(())
}

fn open(path: &Path) -> Result<File, SimError> {
    File::open(path).map_err(io_err(path))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SimError> {
    let p = dir.join("world.json");
    let wf: WorldFile =
        serde_json::from_reader(std::io::BufReader::new(open(&p)?)).map_err(|e| SimError::Json(e.to_string()))?;

    let schema = |file: &'static str, line: u64, message: String| SimError::Schema { file, line, message };

    let p = dir.join("frames.csv");
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(open(&p)?));
    let headers = rdr
        .headers()
        .map_err(|e| schema("frames.csv", 1, e.to_string()))?
        .clone();
    if headers.iter().ne(FRAMES_HEADER) {
        return Err(schema(
            "frames.csv",
            1,
            format!("expected header `{}`", FRAMES_HEADER.join(",")),
        ));
    }
    let mut frames: Vec<Frame> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            schema("frames.csv", e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| schema("frames.csv", line, m);
        let num = |i: usize| -> Result<f64, SimError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad {} `{}`", FRAMES_HEADER[i], &rec[i])))
        };
        let id: KeyframeId = rec[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad id `{}`", &rec[0])))?;
        let template: u32 = rec[8]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad template_id `{}`", &rec[8])))?;
        let words: Vec<WordId> = rec[9]
            .split('|')
            .filter(|w| !w.trim().is_empty())
            .map(|w| w.trim().parse::<WordId>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(format!("bad words `{}`", &rec[9])))?;
        if words.is_empty() {
            return Err(err(format!("frame {id} has no words")));
        }
        let t = num(1)?;
        if let Some(prev) = frames.last() {
            if id != prev.id + 1 {
                return Err(err(format!("frame ids must be consecutive, {} follows {}", id, prev.id)));
            }
            if t < prev.t {
                return Err(err(format!("frame {id} goes back in time")));
            }
        }
        let gt_pose = Pose2::new(num(2)?, num(3)?, num(4)?);
        let corridor = wf
            .world
            .corridor_for(template, [gt_pose.x, gt_pose.y])
            .ok_or_else(|| err(format!("no corridor carries template {template}")))?;
        frames.push(Frame {
            id,
            t,
            gt_pose,
            odom_delta: Pose2::new(num(5)?, num(6)?, num(7)?),
            local_pose: corridor.local_pose(&gt_pose),
            appearance: Appearance::new(words, template),
        });
    }

    let p = dir.join("scans.csv");
    let scans = read_scan_log(std::io::BufReader::new(open(&p)?)).map_err(|e| match e {
        crate::signature::SignatureError::Parse { line, message } => schema("scans.csv", line, message),
        other => schema("scans.csv", 0, other.to_string()),
    })?;

    let p = dir.join("loops_gt.csv");
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(open(&p)?));
    let mut gt_loop_pairs = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema("loops_gt.csv", e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<KeyframeId, SimError> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| schema("loops_gt.csv", line, format!("bad id in column {i}")))
        };
        let (a, b) = (parse(0)?, parse(1)?);
        gt_loop_pairs.insert((a.min(b), a.max(b)));
    }

    Ok(Dataset {
        name: wf.name,
        seed: wf.seed,
        config: wf.config,
        world: wf.world,
        frames,
        scans,
        gt_loop_pairs,
    })
}
