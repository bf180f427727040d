//! Loading, validation and rasterization of sensor streams and annotations.
//!
//! All streams are assumed to share one session clock (a constant per-stream
//! offset is supported). Everything is brought onto a 20 Hz frame grid where
//! frame `k` is at time `k / 20` seconds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACCEL_RATE_HZ: f64 = 20.0;
pub const PROXIMITY_RATE_HZ: f64 = 1.0;

pub const PROXIMITY_FILE: &str = "proximity.csv";
pub const ANNOTATION_FILE: &str = "annotations.csv";
pub const ACCEL_SUFFIX: &str = "_accel.csv";

const SNAP: f64 = 1e-6;

/// First frame index `k` with `k / rate >= t`, tolerant to decimal
/// round-off in `t`.
pub fn frame_at_or_after(t: f64, rate_hz: f64) -> usize {
    let x = t * rate_hz;
    let r = x.round();
    let k = if (x - r).abs() < SNAP { r } else { x.ceil() };
    k.max(0.0) as usize
}

/// Number of whole frames in `duration_s`, tolerant to round-off.
pub fn frames_in(duration_s: f64, rate_hz: f64) -> usize {
    let x = duration_s * rate_hz;
    let r = x.round();
    let k = if (x - r).abs() < SNAP { r } else { x.floor() };
    k.max(0.0) as usize
}

/// Common frame grid shared by every channel of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformTimeline {
    pub rate_hz: f64,
    pub n_frames: usize,
}

impl UniformTimeline {
    pub fn from_duration(duration_s: f64) -> Self {
        Self {
            rate_hz: ACCEL_RATE_HZ,
            n_frames: frames_in(duration_s, ACCEL_RATE_HZ),
        }
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 / self.rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.rate_hz
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, 0, format!("{other:?}")),
        })
}

fn check_header(
    path: &Path,
    rdr: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::parse(
            path,
            0,
            format!(
                "expected header {}, found {}",
                expected.join(","),
                found.join(",")
            ),
        ));
    }
    Ok(())
}

fn field<'r>(
    path: &Path,
    row: usize,
    rec: &'r csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<&'r str> {
    match rec.get(i) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::parse(path, row, format!("missing {name}"))),
    }
}

fn float_field(
    path: &Path,
    row: usize,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<f64> {
    let raw = field(path, row, rec, i, name)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::parse(path, row, format!("{name} is not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, row, format!("{name} is not finite")));
    }
    Ok(v)
}

/// One participant's tri-axial acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelStream {
    pub participant_id: String,
    pub rate_hz: f64,
    /// Session time of the first sample.
    pub t0: f64,
    /// Constant clock correction added to every timestamp.
    #[serde(default)]
    pub offset_s: f64,
    pub times: Vec<f64>,
    pub samples: Vec<[f64; 3]>,
}

/// Acceleration on the frame grid; `present[k]` is false inside gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelGrid {
    pub values: Vec<[f32; 3]>,
    pub present: Vec<bool>,
}

impl AccelGrid {
    /// True when every frame in `[start, end)` has a sample.
    pub fn covers(&self, start: usize, end: usize) -> bool {
        end <= self.present.len() && self.present[start..end].iter().all(|&p| p)
    }
}

impl AccelStream {
    /// A gap-free stream sampled exactly at `t0 + i / rate_hz`.
    pub fn uniform(
        participant_id: impl Into<String>,
        t0: f64,
        rate_hz: f64,
        samples: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let times = (0..samples.len())
            .map(|i| t0 + i as f64 / rate_hz)
            .collect();
        let s = Self {
            participant_id: participant_id.into(),
            rate_hz,
            t0,
            offset_s: 0.0,
            times,
            samples,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "{}: rate must be positive",
                self.participant_id
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::Data(format!(
                "{}: no acceleration samples",
                self.participant_id
            )));
        }
        if self.samples.len() != self.times.len() {
            return Err(Error::Data(format!(
                "{}: times and samples differ in length",
                self.participant_id
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "{}: timestamps not increasing",
                self.participant_id
            )));
        }
        Ok(())
    }

    /// Time span from the first sample to one period past the last.
    pub fn duration_s(&self) -> f64 {
        self.times.last().copied().unwrap_or(self.t0) - self.t0 + 1.0 / self.rate_hz
    }

    /// Session time one period past the last sample.
    pub fn end_s(&self) -> f64 {
        self.t0 + self.offset_s + self.duration_s()
    }

    /// Spans (in session seconds) where consecutive samples are more than
    /// 1.5 periods apart.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        let period = 1.0 / self.rate_hz;
        self.times
            .windows(2)
            .filter(|w| w[1] - w[0] > 1.5 * period)
            .map(|w| (w[0] + self.offset_s + period, w[1] + self.offset_s))
            .collect()
    }

    /// Nearest-sample resampling onto the frame grid; frames with no sample
    /// within half a grid period are marked absent.
    pub fn to_grid(&self, timeline: &UniformTimeline) -> AccelGrid {
        let n = timeline.n_frames;
        let mut values = vec![[0.0f32; 3]; n];
        let mut present = vec![false; n];
        let half = 0.5 / timeline.rate_hz + 1e-9;
        let mut j = 0;
        for k in 0..n {
            let t = timeline.time_of(k);
            while j + 1 < self.times.len()
                && (self.times[j + 1] + self.offset_s - t).abs()
                    <= (self.times[j] + self.offset_s - t).abs()
            {
                j += 1;
            }
            if (self.times[j] + self.offset_s - t).abs() <= half {
                let s = self.samples[j];
                values[k] = [s[0] as f32, s[1] as f32, s[2] as f32];
                present[k] = true;
            }
        }
        AccelGrid { values, present }
    }
}

fn participant_from_accel_path(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Data(format!("{}: unreadable file name", path.display())))?;
    name.strip_suffix(ACCEL_SUFFIX)
        .filter(|id| !id.is_empty())
        .map(str::to_string)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: expected <participant>{ACCEL_SUFFIX}",
                path.display()
            ))
        })
}

/// Reads `<participant_id>_accel.csv` (header `t,x,y,z`).
pub fn load_accel_stream(path: &Path) -> Result<AccelStream> {
    let participant_id = participant_from_accel_path(path)?;
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["t", "x", "y", "z"])?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        if rec.len() > 4 {
            return Err(Error::parse(
                path,
                row,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let t = float_field(path, row, &rec, 0, "t")?;
        let x = float_field(path, row, &rec, 1, "x")?;
        let y = float_field(path, row, &rec, 2, "y")?;
        let z = float_field(path, row, &rec, 3, "z")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::parse(
                    path,
                    row,
                    format!("timestamp {t} does not follow {prev}"),
                ));
            }
        }
        times.push(t);
        samples.push([x, y, z]);
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 1, "no samples"));
    }
    Ok(AccelStream {
        participant_id,
        rate_hz: ACCEL_RATE_HZ,
        t0: times[0],
        offset_s: 0.0,
        times,
        samples,
    })
}

pub fn write_accel_stream(path: &Path, stream: &AccelStream) -> Result<()> {
    use std::fmt::Write;
    let mut out = String::from("t,x,y,z\n");
    for (t, s) in stream.times.iter().zip(&stream.samples) {
        let _ = writeln!(out, "{t},{},{},{}", s[0], s[1], s[2]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Neighbors detected by one participant, per whole second.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProximityStream {
    pub detector_id: String,
    pub detections: BTreeMap<u32, BTreeSet<String>>,
    /// Session length in seconds covered by the stream.
    pub n_seconds: u32,
}

impl ProximityStream {
    pub fn new(detector_id: impl Into<String>, n_seconds: u32) -> Self {
        Self {
            detector_id: detector_id.into(),
            detections: BTreeMap::new(),
            n_seconds,
        }
    }

    pub fn detects(&self, second: u32, other: &str) -> bool {
        self.detections
            .get(&second)
            .is_some_and(|s| s.contains(other))
    }

    pub fn n_detections(&self) -> usize {
        self.detections.values().map(BTreeSet::len).sum()
    }
}

/// All proximity streams of a session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProximityLog {
    pub streams: BTreeMap<String, ProximityStream>,
    pub n_seconds: u32,
    pub self_detections_dropped: usize,
}

impl ProximityLog {
    /// Stream for `id`, or an empty one when it never detected anyone.
    pub fn stream(&self, id: &str) -> ProximityStream {
        self.streams
            .get(id)
            .cloned()
            .unwrap_or_else(|| ProximityStream::new(id, self.n_seconds))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProximityOptions {
    /// Self-detections are an error instead of being dropped.
    pub strict: bool,
    /// Known participants; others are rejected.
    pub participants: Option<BTreeSet<String>>,
    /// Session length; defaults to one past the last second in the file.
    pub n_seconds: Option<u32>,
}

/// Reads a session proximity file (header `t,detector,detected`).
pub fn load_proximity_events(path: &Path, opts: &ProximityOptions) -> Result<ProximityLog> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["t", "detector", "detected"])?;
    let mut log = ProximityLog::default();
    let mut max_t: Option<u32> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        let raw_t = field(path, row, &rec, 0, "t")?;
        let t: u32 = raw_t.parse().map_err(|_| {
            Error::parse(
                path,
                row,
                format!("t must be a whole second, got {raw_t:?}"),
            )
        })?;
        let detector = field(path, row, &rec, 1, "detector")?;
        let detected = field(path, row, &rec, 2, "detected")?;
        if let Some(known) = &opts.participants {
            for id in [detector, detected] {
                if !known.contains(id) {
                    return Err(Error::parse(
                        path,
                        row,
                        format!("unknown participant {id:?}"),
                    ));
                }
            }
        }
        if let Some(n) = opts.n_seconds {
            if t >= n {
                return Err(Error::parse(
                    path,
                    row,
                    format!("second {t} is outside the {n} s session"),
                ));
            }
        }
        if detector == detected {
            if opts.strict {
                return Err(Error::parse(
                    path,
                    row,
                    format!("{detector} detects itself"),
                ));
            }
            log.self_detections_dropped += 1;
            continue;
        }
        max_t = Some(max_t.map_or(t, |m| m.max(t)));
        log.streams
            .entry(detector.to_string())
            .or_insert_with(|| ProximityStream::new(detector, 0))
            .detections
            .entry(t)
            .or_default()
            .insert(detected.to_string());
    }
    if log.self_detections_dropped > 0 {
        log::warn!(
            "{}: dropped {} self-detections",
            path.display(),
            log.self_detections_dropped
        );
    }
    log.n_seconds = opts.n_seconds.unwrap_or_else(|| max_t.map_or(0, |m| m + 1));
    if let Some(known) = &opts.participants {
        for id in known {
            log.streams
                .entry(id.clone())
                .or_insert_with(|| ProximityStream::new(id.as_str(), 0));
        }
    }
    for s in log.streams.values_mut() {
        s.n_seconds = log.n_seconds;
    }
    Ok(log)
}

pub fn write_proximity_events(path: &Path, log: &ProximityLog) -> Result<()> {
    use std::fmt::Write;
    let mut rows: Vec<(u32, &str, &str)> = Vec::new();
    for s in log.streams.values() {
        for (&t, ids) in &s.detections {
            for id in ids {
                rows.push((t, &s.detector_id, id));
            }
        }
    }
    rows.sort();
    let mut out = String::from("t,detector,detected\n");
    for (t, a, b) in rows {
        let _ = writeln!(out, "{t},{a},{b}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-second pair proximity: 1 when either participant detected the other.
pub fn pair_proximity(a: &ProximityStream, b: &ProximityStream) -> Result<Vec<u8>> {
    if a.n_seconds != b.n_seconds {
        return Err(Error::Data(format!(
            "proximity spans differ: {} covers {} s, {} covers {} s",
            a.detector_id, a.n_seconds, b.detector_id, b.n_seconds
        )));
    }
    let mut out = vec![0u8; a.n_seconds as usize];
    for (x, y) in [(a, b), (b, a)] {
        for (&t, ids) in &x.detections {
            if ids.contains(&y.detector_id) && (t as usize) < out.len() {
                out[t as usize] = 1;
            }
        }
    }
    Ok(out)
}

/// Zero-order hold from 1 Hz to `target_rate_hz`.
pub fn upsample_proximity(seq: &[u8], target_rate_hz: usize) -> Result<Vec<u8>> {
    if seq.is_empty() || target_rate_hz == 0 {
        return Err(Error::Data(
            "upsampling needs a non-empty sequence and a positive rate".into(),
        ));
    }
    Ok(seq
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, target_rate_hz))
        .collect())
}

/// One annotated conversational group over a time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub group_id: String,
    pub members: BTreeSet<String>,
}

/// Ground truth: group memberships and speaking spans, half-open `[start, end)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub fformations: Vec<FormationInterval>,
    pub speaking: BTreeMap<String, Vec<(f64, f64)>>,
}

fn merge_spans(spans: &mut Vec<(f64, f64)>) {
    spans.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for &(s, e) in spans.iter() {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    *spans = merged;
}

impl AnnotationTrack {
    /// Validates intervals and merges overlapping speaking spans.
    pub fn new(
        fformations: Vec<FormationInterval>,
        speaking: BTreeMap<String, Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let mut track = Self {
            fformations,
            speaking,
        };
        for f in &track.fformations {
            if !(f.end_s > f.start_s) {
                return Err(Error::Data(format!(
                    "group {} has end <= start",
                    f.group_id
                )));
            }
            if f.members.is_empty() {
                return Err(Error::Data(format!("group {} has no members", f.group_id)));
            }
        }
        for (id, spans) in track.speaking.iter_mut() {
            if spans.iter().any(|(s, e)| !(e > s)) {
                return Err(Error::Data(format!(
                    "speaking span of {id} has end <= start"
                )));
            }
            merge_spans(spans);
        }
        track.check_membership_overlaps()?;
        Ok(track)
    }

    fn check_membership_overlaps(&self) -> Result<()> {
        let mut per: BTreeMap<&str, Vec<(f64, f64, &str)>> = BTreeMap::new();
        for f in &self.fformations {
            for m in &f.members {
                per.entry(m)
                    .or_default()
                    .push((f.start_s, f.end_s, &f.group_id));
            }
        }
        for (id, mut spans) in per {
            spans.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            for w in spans.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::Data(format!(
                        "{id} is in groups {} and {} at the same time ({}s)",
                        w[0].2, w[1].2, w[1].0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn participants(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.speaking.keys().cloned().collect();
        for f in &self.fformations {
            out.extend(f.members.iter().cloned());
        }
        out
    }
}

/// Reads the annotation file (header `kind,start,end,subject,group`).
pub fn load_annotations(path: &Path) -> Result<AnnotationTrack> {
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        &mut rdr,
        &["kind", "start", "end", "subject", "group"],
    )?;
    let mut fformations = Vec::new();
    let mut speaking: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        let kind = field(path, row, &rec, 0, "kind")?;
        let start = float_field(path, row, &rec, 1, "start")?;
        let end = float_field(path, row, &rec, 2, "end")?;
        if !(end > start) {
            return Err(Error::parse(path, row, "end must be after start"));
        }
        let subject = field(path, row, &rec, 3, "subject")?;
        match kind {
            "fformation" => {
                let group_id = field(path, row, &rec, 4, "group")?.to_string();
                let members: BTreeSet<String> = subject
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                if members.is_empty() {
                    return Err(Error::parse(path, row, "empty member list"));
                }
                fformations.push(FormationInterval {
                    start_s: start,
                    end_s: end,
                    group_id,
                    members,
                });
            }
            "speaking" => {
                if subject.contains(';') {
                    return Err(Error::parse(
                        path,
                        row,
                        "speaking rows name one participant",
                    ));
                }
                speaking
                    .entry(subject.to_string())
                    .or_default()
                    .push((start, end));
            }
            other => return Err(Error::parse(path, row, format!("unknown kind {other:?}"))),
        }
    }
    AnnotationTrack::new(fformations, speaking).map_err(|e| match e {
        Error::Data(m) => Error::parse(path, 0, m),
        e => e,
    })
}

pub fn write_annotations(path: &Path, track: &AnnotationTrack) -> Result<()> {
    use std::fmt::Write;
    let mut out = String::from("kind,start,end,subject,group\n");
    for f in &track.fformations {
        let members: Vec<&str> = f.members.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "fformation,{},{},{},{}",
            f.start_s,
            f.end_s,
            members.join(";"),
            f.group_id
        );
    }
    for (id, spans) in &track.speaking {
        for (s, e) in spans {
            let _ = writeln!(out, "speaking,{s},{e},{id},");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-frame ground truth for every participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasters {
    pub n_frames: usize,
    /// Index into `group_names` per frame, `None` when not in a group.
    pub membership: BTreeMap<String, Vec<Option<u32>>>,
    pub speaking: BTreeMap<String, Vec<bool>>,
    pub group_names: Vec<String>,
}

impl Rasters {
    pub fn membership_of(&self, id: &str) -> Option<&[Option<u32>]> {
        self.membership.get(id).map(Vec::as_slice)
    }

    pub fn speaking_of(&self, id: &str) -> Option<&[bool]> {
        self.speaking.get(id).map(Vec::as_slice)
    }
}

/// Rasterizes intervals onto the frame grid: frame `k` is inside `[s, e)`
/// iff `s <= k / rate < e`. `participants` get rows even when never
/// annotated.
pub fn evaluate_annotations(
    track: &AnnotationTrack,
    timeline: &UniformTimeline,
    participants: &[String],
) -> Result<Rasters> {
    let n = timeline.n_frames;
    let rate = timeline.rate_hz;
    let mut ids: BTreeSet<String> = participants.iter().cloned().collect();
    ids.extend(track.participants());
    let mut membership: BTreeMap<String, Vec<Option<u32>>> =
        ids.iter().map(|id| (id.clone(), vec![None; n])).collect();
    let mut speaking: BTreeMap<String, Vec<bool>> =
        ids.iter().map(|id| (id.clone(), vec![false; n])).collect();
    let mut group_names: Vec<String> = Vec::new();
    let mut group_index: BTreeMap<&str, u32> = BTreeMap::new();
    for f in &track.fformations {
        let g = *group_index.entry(&f.group_id).or_insert_with(|| {
            group_names.push(f.group_id.clone());
            (group_names.len() - 1) as u32
        });
        let a = frame_at_or_after(f.start_s, rate).min(n);
        let b = frame_at_or_after(f.end_s, rate).min(n);
        for m in &f.members {
            let row = membership.get_mut(m).expect("member registered");
            for (k, slot) in row[a..b].iter_mut().enumerate() {
                match slot {
                    Some(other) if *other != g => {
                        return Err(Error::Data(format!(
                            "{m} is in groups {} and {} at frame {}",
                            group_names[*other as usize],
                            f.group_id,
                            a + k
                        )));
                    }
                    _ => *slot = Some(g),
                }
            }
        }
    }
    for (id, spans) in &track.speaking {
        let row = speaking.get_mut(id).expect("speaker registered");
        for &(s, e) in spans {
            let a = frame_at_or_after(s, rate).min(n);
            let b = frame_at_or_after(e, rate).min(n);
            row[a..b].fill(true);
        }
    }
    Ok(Rasters {
        n_frames: n,
        membership,
        speaking,
        group_names,
    })
}

/// Everything recorded for one continuous annotated segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub name: String,
    pub participants: Vec<String>,
    pub accel: BTreeMap<String, AccelStream>,
    pub proximity: ProximityLog,
    pub annotations: AnnotationTrack,
    pub duration_s: f64,
}

impl Session {
    /// Session length is the latest acceleration stream end, truncated to
    /// whole seconds.
    pub fn from_parts(
        name: impl Into<String>,
        accel: Vec<AccelStream>,
        proximity: ProximityLog,
        annotations: AnnotationTrack,
    ) -> Result<Self> {
        if accel.is_empty() {
            return Err(Error::Data("session has no acceleration streams".into()));
        }
        let mut map = BTreeMap::new();
        for s in accel {
            s.validate()?;
            if map.insert(s.participant_id.clone(), s).is_some() {
                return Err(Error::Data("duplicate acceleration stream".into()));
            }
        }
        let duration_s = map.values().map(AccelStream::end_s).fold(0.0f64, f64::max);
        let duration_s = frames_in(duration_s, PROXIMITY_RATE_HZ) as f64;
        let participants: Vec<String> = map.keys().cloned().collect();
        Ok(Self {
            name: name.into(),
            participants,
            accel: map,
            proximity,
            annotations,
            duration_s,
        })
    }

    /// Loads `<id>_accel.csv` files, `proximity.csv` and `annotations.csv`
    /// from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut accel_paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(ACCEL_SUFFIX))
            })
            .collect();
        accel_paths.sort();
        let accel = accel_paths
            .iter()
            .map(|p| load_accel_stream(p))
            .collect::<Result<Vec<_>>>()?;
        let annotations = load_annotations(&dir.join(ANNOTATION_FILE))?;
        let ids: BTreeSet<String> = accel.iter().map(|s| s.participant_id.clone()).collect();
        let end = accel.iter().map(AccelStream::end_s).fold(0.0f64, f64::max);
        let opts = ProximityOptions {
            strict: false,
            participants: Some(ids),
            n_seconds: Some(frames_in(end, PROXIMITY_RATE_HZ) as u32),
        };
        let proximity = load_proximity_events(&dir.join(PROXIMITY_FILE), &opts)?;
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("session")
            .to_string();
        Self::from_parts(name, accel, proximity, annotations)
    }

    /// Writes the session in the loader's file formats.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, s) in &self.accel {
            write_accel_stream(&dir.join(format!("{id}{ACCEL_SUFFIX}")), s)?;
        }
        write_proximity_events(&dir.join(PROXIMITY_FILE), &self.proximity)?;
        write_annotations(&dir.join(ANNOTATION_FILE), &self.annotations)
    }

    pub fn timeline(&self) -> UniformTimeline {
        UniformTimeline::from_duration(self.duration_s)
    }
}
