//! Wi-Fi signatures: scan ingestion, per-AP aggregation and cosine similarity.
//!
//! A physical access point advertises several BSSIDs (one per band and per
//! access-control profile) that differ only in the low nibble of the last
//! octet. Readings are folded onto a masked [`ApId`] before averaging, so a
//! [`Signature`] has one entry per physical AP.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// RSSI floor (dBm) mapped to zero strength.
pub const RSSI_FLOOR_DBM: f64 = -100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("malformed MAC address `{0}`")]
    MalformedMac(String),
    #[error("RSSI must be non-positive dBm, got {0}")]
    PositiveRssi(f64),
    #[error("signature strength must be non-negative, got {0}")]
    NegativeStrength(f64),
    #[error("empty scan window")]
    EmptyScanWindow,
    #[error("empty signature")]
    EmptySignature,
    #[error("no signatures to associate frames with")]
    NoSignatures,
    #[error("scan log line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// A 48-bit MAC address as read from a scan.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }

    pub fn to_u64(self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MacAddr {
    type Err = SignatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SignatureError::MalformedMac(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.trim().split(':');
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 {
                return Err(bad());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of a physical access point: a BSSID with the low nibble of the
/// final octet cleared.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
#[serde(transparent)]
pub struct ApId(MacAddr);

impl ApId {
    pub fn mac(self) -> MacAddr {
        self.0
    }
}

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl<'de> Deserialize<'de> for ApId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(mask_bssid(MacAddr::deserialize(d)?))
    }
}

/// Folds a BSSID onto the AP that advertises it.
pub fn mask_bssid(bssid: MacAddr) -> ApId {
    let mut o = bssid.0;
    o[5] &= 0xF0;
    ApId(MacAddr(o))
}

/// Maps dBm onto a non-negative strength: dB above the -100 dBm floor.
pub fn strength_of(rssi_dbm: f64) -> f64 {
    (rssi_dbm - RSSI_FLOOR_DBM).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReading {
    pub timestamp: f64,
    pub bssid: MacAddr,
    pub rssi: f64,
}

impl ScanReading {
    pub fn new(timestamp: f64, bssid: MacAddr, rssi: f64) -> Result<Self, SignatureError> {
        if rssi > 0.0 || rssi.is_nan() {
            return Err(SignatureError::PositiveRssi(rssi));
        }
        Ok(Self {
            timestamp,
            bssid,
            rssi,
        })
    }
}

/// Per-AP strengths aggregated over one dwell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    entries: BTreeMap<ApId, f64>,
    pub collected_at: f64,
    pub pause_index: usize,
}

impl Signature {
    pub fn new(
        entries: BTreeMap<ApId, f64>,
        collected_at: f64,
        pause_index: usize,
    ) -> Result<Self, SignatureError> {
        if let Some(&bad) = entries.values().find(|v| !(**v >= 0.0)) {
            return Err(SignatureError::NegativeStrength(bad));
        }
        Ok(Self {
            entries,
            collected_at,
            pause_index,
        })
    }

    pub fn entries(&self) -> &BTreeMap<ApId, f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy with every strength multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self, SignatureError> {
        let entries = self.entries.iter().map(|(&ap, &s)| (ap, s * k)).collect();
        Signature::new(entries, self.collected_at, self.pause_index)
    }
}

/// Averages readings per AP (in dBm) and converts them to strengths.
pub fn signature_from_window(
    readings: &[ScanReading],
    pause_index: usize,
) -> Result<Signature, SignatureError> {
    if readings.is_empty() {
        return Err(SignatureError::EmptyScanWindow);
    }
    let mut acc: BTreeMap<ApId, (f64, usize)> = BTreeMap::new();
    let mut t_sum = 0.0;
    for r in readings {
        let e = acc.entry(mask_bssid(r.bssid)).or_insert((0.0, 0));
        e.0 += r.rssi;
        e.1 += 1;
        t_sum += r.timestamp;
    }
    let entries = acc
        .into_iter()
        .map(|(ap, (sum, n))| (ap, strength_of(sum / n as f64)))
        .collect();
    Signature::new(entries, t_sum / readings.len() as f64, pause_index)
}

/// Cosine similarity over the union of APs; absent APs count as zero.
pub fn cosine_similarity(a: &Signature, b: &Signature) -> Result<f64, SignatureError> {
    if a.is_empty() || b.is_empty() {
        return Err(SignatureError::EmptySignature);
    }
    let norm_a: f64 = a.entries.values().map(|v| v * v).sum();
    let norm_b: f64 = b.entries.values().map(|v| v * v).sum();
    let dot = sorted_dot(&a.entries, &b.entries);
    if dot == 0.0 || norm_a == 0.0 || norm_b == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (norm_a * norm_b).sqrt()).clamp(0.0, 1.0))
}

fn sorted_dot(a: &BTreeMap<ApId, f64>, b: &BTreeMap<ApId, f64>) -> f64 {
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    let mut dot = 0.0;
    while let (Some((ka, va)), Some((kb, vb))) = (ia.peek(), ib.peek()) {
        match ka.cmp(kb) {
            std::cmp::Ordering::Less => {
                ia.next();
            }
            std::cmp::Ordering::Greater => {
                ib.next();
            }
            std::cmp::Ordering::Equal => {
                dot += *va * *vb;
                ia.next();
                ib.next();
            }
        }
    }
    dot
}

/// For each frame timestamp, the index of the latest signature collected at
/// or before it. Frames that precede every signature borrow the first one.
pub fn associate_frames(
    frame_times: &[f64],
    signatures: &[Signature],
) -> Result<Vec<usize>, SignatureError> {
    if signatures.is_empty() {
        return Err(SignatureError::NoSignatures);
    }
    Ok(frame_times
        .iter()
        .map(|&t| {
            signatures
                .partition_point(|s| s.collected_at <= t)
                .saturating_sub(1)
        })
        .collect())
}

/// One row of a scan log; `dwell_index` is present in simulator output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoggedScan {
    pub reading: ScanReading,
    pub dwell_index: Option<usize>,
}

/// Reads a `timestamp_s,bssid,rssi_dbm[,dwell_index]` CSV scan log.
pub fn read_scan_log<R: Read>(reader: R) -> Result<Vec<LoggedScan>, SignatureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header_err = |message: String| SignatureError::Parse { line: 1, message };
    let headers = rdr.headers().map_err(|e| header_err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_t), Some(c_b), Some(c_r)) = (col("timestamp_s"), col("bssid"), col("rssi_dbm"))
    else {
        return Err(header_err(format!(
            "expected header timestamp_s,bssid,rssi_dbm, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    };
    let c_dwell = col("dwell_index");

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SignatureError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| SignatureError::Parse { line, message };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let t: f64 = field(c_t)
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", field(c_t))))?;
        let bssid: MacAddr = field(c_b).parse().map_err(|e: SignatureError| err(e.to_string()))?;
        let rssi: f64 = field(c_r)
            .parse()
            .map_err(|_| err(format!("bad rssi `{}`", field(c_r))))?;
        let reading = ScanReading::new(t, bssid, rssi).map_err(|e| err(e.to_string()))?;
        let dwell_index = match c_dwell {
            Some(c) => Some(
                field(c)
                    .parse()
                    .map_err(|_| err(format!("bad dwell_index `{}`", field(c))))?,
            ),
            None => None,
        };
        out.push(LoggedScan {
            reading,
            dwell_index,
        });
    }
    Ok(out)
}

/// Groups a scan log into one signature per dwell. Rows without a dwell index
/// are split on gaps longer than `gap_s` between consecutive timestamps.
pub fn signatures_from_log(scans: &[LoggedScan], gap_s: f64) -> Vec<Signature> {
    let mut groups: Vec<Vec<ScanReading>> = Vec::new();
    let mut last: Option<(Option<usize>, f64)> = None;
    for s in scans {
        let new_group = match (last, s.dwell_index) {
            (None, _) => true,
            (Some((Some(prev), _)), Some(cur)) => prev != cur,
            (Some((_, t_prev)), _) => s.reading.timestamp - t_prev > gap_s,
        };
        if new_group {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(s.reading);
        last = Some((s.dwell_index, s.reading.timestamp));
    }
    groups
        .iter()
        .enumerate()
        .filter_map(|(i, g)| signature_from_window(g, i).ok())
        .collect()
}
