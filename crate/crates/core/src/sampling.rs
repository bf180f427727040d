//! Sliding windows, pairwise multichannel samples and their labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameMatrix;
use crate::ingestion::{
    evaluate_annotations, frames_in, pair_proximity, upsample_proximity, AccelGrid, Session,
    ACCEL_RATE_HZ,
};
use crate::parallel::{self, Execution};

pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const DEFAULT_MEMBERSHIP_THRESHOLD: f64 = 0.66;
pub const DEFAULT_SPEAKING_THRESHOLD: f64 = 0.30;

/// Absolute slack when comparing a frame count against `threshold * frames`.
const FRACTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_s: f64,
    pub overlap_frac: f64,
    pub rate_hz: f64,
}

impl WindowSpec {
    pub fn new(length_s: f64) -> Result<Self> {
        let s = Self {
            length_s,
            overlap_frac: DEFAULT_OVERLAP,
            rate_hz: ACCEL_RATE_HZ,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.length_s > 0.0) || !(self.rate_hz > 0.0) {
            return bad(format!("window length and rate must be positive: {self:?}"));
        }
        if !(0.0..1.0).contains(&self.overlap_frac) {
            return bad(format!("overlap must be in [0, 1): {}", self.overlap_frac));
        }
        let frames = self.length_s * self.rate_hz;
        if (frames - frames.round()).abs() > 1e-9 {
            return bad(format!(
                "{} s at {} Hz is not a whole number of frames",
                self.length_s, self.rate_hz
            ));
        }
        let stride = frames.round() * (1.0 - self.overlap_frac);
        if (stride - stride.round()).abs() > 1e-9 || stride.round() < 1.0 {
            return bad(format!(
                "stride of {stride} frames is not a positive integer"
            ));
        }
        Ok(())
    }

    pub fn frames_per_window(&self) -> usize {
        (self.length_s * self.rate_hz).round() as usize
    }

    pub fn stride_frames(&self) -> usize {
        (self.frames_per_window() as f64 * (1.0 - self.overlap_frac)).round() as usize
    }
}

/// Frames `[start_frame, end_frame)` of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Windows starting at every multiple of the stride that fit in the session.
/// A session shorter than one window yields no windows.
pub fn enumerate_windows(duration_s: f64, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    let total = frames_in(duration_s, spec.rate_hz);
    let len = spec.frames_per_window();
    let stride = spec.stride_frames();
    if total < len {
        return Ok(Vec::new());
    }
    let count = (total - len) / stride + 1;
    Ok((0..count)
        .map(|i| Window {
            index: i,
            start_frame: i * stride,
            end_frame: i * stride + len,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputCombo {
    /// Channels 0-5: P1 x,y,z then P2 x,y,z.
    Acceleration,
    /// Channel 0: pair proximity.
    Proximity,
    /// Channels 0-5 acceleration, 6 proximity.
    Fusion,
}

impl InputCombo {
    pub const ALL: [InputCombo; 3] = [
        InputCombo::Acceleration,
        InputCombo::Proximity,
        InputCombo::Fusion,
    ];

    pub fn n_channels(self) -> usize {
        match self {
            InputCombo::Acceleration => 6,
            InputCombo::Proximity => 1,
            InputCombo::Fusion => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputCombo::Acceleration => "acceleration",
            InputCombo::Proximity => "proximity",
            InputCombo::Fusion => "fusion",
        }
    }
}

impl std::str::FromStr for InputCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acceleration" | "accel" => Ok(InputCombo::Acceleration),
            "proximity" | "prox" => Ok(InputCombo::Proximity),
            "fusion" => Ok(InputCombo::Fusion),
            _ => Err(Error::Config(format!("unknown input combination {s:?}"))),
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Same group vs not.
    #[default]
    Binary,
    /// No interaction plus the three unordered role pairs.
    Joint4,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Joint4 => 4,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Binary => &["negative", "positive"],
            Task::Joint4 => &[
                "no_interaction",
                "speaker_speaker",
                "speaker_listener",
                "listener_listener",
            ],
        }
    }
}

/// Unordered participant pair, stored with the smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair(pub String, pub String);

impl Pair {
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Self {
        let (x, y) = (x.into(), y.into());
        if x <= y {
            Pair(x, y)
        } else {
            Pair(y, x)
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleLabel {
    NoInteraction = 0,
    SpeakerSpeaker = 1,
    SpeakerListener = 2,
    ListenerListener = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Minimum co-grouped fraction of the window for a positive pair.
    pub membership: f64,
    /// Minimum speaking fraction of the window for a speaker.
    pub speaking: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            membership: DEFAULT_MEMBERSHIP_THRESHOLD,
            speaking: DEFAULT_SPEAKING_THRESHOLD,
        }
    }
}

fn at_least(count: usize, total: usize, threshold: f64) -> bool {
    count as f64 + FRACTION_EPS >= threshold * total as f64
}

/// Frames of the window in which both participants carry the same group.
pub fn co_grouped_frames(m1: &[Option<u32>], m2: &[Option<u32>], window: &Window) -> usize {
    let r = window.start_frame..window.end_frame;
    m1[r.clone()]
        .iter()
        .zip(&m2[r])
        .filter(|(a, b)| a.is_some() && a == b)
        .count()
}

/// Positive iff the pair shares a group for at least `threshold` of the window.
pub fn label_membership(
    m1: &[Option<u32>],
    m2: &[Option<u32>],
    window: &Window,
    threshold: f64,
) -> Membership {
    if at_least(co_grouped_frames(m1, m2, window), window.len(), threshold) {
        Membership::Positive
    } else {
        Membership::Negative
    }
}

/// Role pair of an in-group pair; speakers talk for at least `threshold` of
/// the window.
pub fn label_roles(
    s1: &[bool],
    s2: &[bool],
    window: &Window,
    membership: Membership,
    threshold: f64,
) -> RoleLabel {
    if membership == Membership::Negative {
        return RoleLabel::NoInteraction;
    }
    let r = window.start_frame..window.end_frame;
    let speaker = |s: &[bool]| {
        at_least(
            s[r.clone()].iter().filter(|&&v| v).count(),
            window.len(),
            threshold,
        )
    };
    match (speaker(s1), speaker(s2)) {
        (true, true) => RoleLabel::SpeakerSpeaker,
        (false, false) => RoleLabel::ListenerListener,
        _ => RoleLabel::SpeakerListener,
    }
}

/// Multichannel matrix for one pair and window, or `None` when either
/// participant's acceleration has a gap inside the window.
pub fn build_pair_sample(
    p1: &AccelGrid,
    p2: &AccelGrid,
    proximity_20hz: &[u8],
    window: &Window,
    combo: InputCombo,
) -> Option<FrameMatrix> {
    let (a, b) = (window.start_frame, window.end_frame);
    if !p1.covers(a, b) || !p2.covers(a, b) || proximity_20hz.len() < b {
        return None;
    }
    let ch = combo.n_channels();
    let mut m = FrameMatrix::zeros(b - a, ch);
    let data = m.as_mut_slice();
    for (row, k) in data.chunks_exact_mut(ch).zip(a..b) {
        match combo {
            InputCombo::Proximity => row[0] = proximity_20hz[k] as f32,
            InputCombo::Acceleration | InputCombo::Fusion => {
                row[..3].copy_from_slice(&p1.values[k]);
                row[3..6].copy_from_slice(&p2.values[k]);
                if combo == InputCombo::Fusion {
                    row[6] = proximity_20hz[k] as f32;
                }
            }
        }
    }
    Some(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pair: Pair,
    /// Index of the session the window was cut from.
    pub segment: usize,
    pub window_index: usize,
    pub start_frame: usize,
    pub membership: Membership,
    pub role: RoleLabel,
    #[serde(skip)]
    pub data: FrameMatrix,
}

impl Default for FrameMatrix {
    fn default() -> Self {
        FrameMatrix::zeros(0, 0)
    }
}

impl PairSample {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Binary => match self.membership {
                Membership::Negative => 0,
                Membership::Positive => 1,
            },
            Task::Joint4 => self.role as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub window: WindowSpec,
    pub combo: InputCombo,
    pub task: Task,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    /// Sorted by `(pair, segment, window_index)`.
    pub samples: Vec<PairSample>,
    pub label_counts: Vec<usize>,
    /// Pair windows dropped for missing acceleration.
    pub skipped: usize,
}

/// Builds every (pair, window) sample across `sessions`; windows never span
/// two sessions.
pub fn build_dataset(
    sessions: &[Session],
    config: &DatasetConfig,
    exec: Execution,
) -> Result<Dataset> {
    config.window.validate()?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (segment, session) in sessions.iter().enumerate() {
        if session.participants.len() < 2 {
            return Err(Error::Data(format!(
                "session {} has {} participant(s); pairs need at least two",
                session.name,
                session.participants.len()
            )));
        }
        let timeline = session.timeline();
        let windows = enumerate_windows(session.duration_s, &config.window)?;
        let rasters = evaluate_annotations(&session.annotations, &timeline, &session.participants)?;
        let grids: BTreeMap<&str, AccelGrid> = session
            .accel
            .iter()
            .map(|(id, s)| (id.as_str(), s.to_grid(&timeline)))
            .collect();
        let ids = &session.participants;
        let pairs: Vec<(usize, usize)> = (0..ids.len())
            .flat_map(|i| (i + 1..ids.len()).map(move |j| (i, j)))
            .collect();
        let rate = config.window.rate_hz.round() as usize;
        let per_pair: Vec<Result<(Vec<PairSample>, usize)>> =
            parallel::map_range(exec, pairs.len(), |p| {
                let (i, j) = pairs[p];
                let pair = Pair::new(ids[i].as_str(), ids[j].as_str());
                let (a, b) = (pair.first(), pair.second());
                let prox =
                    pair_proximity(&session.proximity.stream(a), &session.proximity.stream(b))?;
                let prox20 = if prox.is_empty() {
                    Vec::new()
                } else {
                    upsample_proximity(&prox, rate)?
                };
                let (ma, mb) = (
                    rasters.membership_of(a).expect("roster"),
                    rasters.membership_of(b).expect("roster"),
                );
                let (sa, sb) = (
                    rasters.speaking_of(a).expect("roster"),
                    rasters.speaking_of(b).expect("roster"),
                );
                let mut out = Vec::with_capacity(windows.len());
                let mut skipped = 0;
                for w in &windows {
                    let Some(data) =
                        build_pair_sample(&grids[a], &grids[b], &prox20, w, config.combo)
                    else {
                        skipped += 1;
                        continue;
                    };
                    let membership = label_membership(ma, mb, w, config.thresholds.membership);
                    let role = label_roles(sa, sb, w, membership, config.thresholds.speaking);
                    out.push(PairSample {
                        pair: pair.clone(),
                        segment,
                        window_index: w.index,
                        start_frame: w.start_frame,
                        membership,
                        role,
                        data,
                    });
                }
                Ok((out, skipped))
            });
        for r in per_pair {
            let (s, k) = r?;
            samples.extend(s);
            skipped += k;
        }
    }
    samples.sort_by(|x, y| {
        (&x.pair, x.segment, x.window_index).cmp(&(&y.pair, y.segment, y.window_index))
    });
    let mut label_counts = vec![0; config.task.n_classes()];
    for s in &samples {
        label_counts[s.label(config.task)] += 1;
    }
    Ok(Dataset {
        config: *config,
        samples,
        label_counts,
        skipped,
    })
}

/// Samples and positives per pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairStats {
    pub pair: Pair,
    pub samples: usize,
    pub positives: usize,
}

const DATASET_MAGIC: &[u8; 8] = b"FFDSET01";

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: DatasetConfig,
    frames: usize,
    channels: usize,
    skipped: usize,
    label_counts: Vec<usize>,
    samples: Vec<PairSample>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.config.task.n_classes()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.label(self.config.task))
            .collect()
    }

    pub fn pairs(&self) -> BTreeSet<Pair> {
        self.samples.iter().map(|s| s.pair.clone()).collect()
    }

    pub fn pair_stats(&self) -> Vec<PairStats> {
        let mut map: BTreeMap<&Pair, (usize, usize)> = BTreeMap::new();
        for s in &self.samples {
            let e = map.entry(&s.pair).or_default();
            e.0 += 1;
            e.1 += usize::from(s.membership == Membership::Positive);
        }
        map.into_iter()
            .map(|(p, (n, pos))| PairStats {
                pair: p.clone(),
                samples: n,
                positives: pos,
            })
            .collect()
    }

    pub fn label_counts_of(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &i in indices {
            counts[self.samples[i].label(self.config.task)] += 1;
        }
        counts
    }

    pub fn frames(&self) -> usize {
        self.samples
            .first()
            .map_or(self.config.window.frames_per_window(), |s| s.data.frames())
    }

    pub fn channels(&self) -> usize {
        self.config.combo.n_channels()
    }

    /// Writes a single-file container: magic, manifest length (u64 LE), JSON
    /// manifest, then every sample's frames as f32 LE in manifest order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            config: self.config,
            frames: self.frames(),
            channels: self.channels(),
            skipped: self.skipped,
            label_counts: self.label_counts.clone(),
            samples: self.samples.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(DATASET_MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for s in &self.samples {
            for v in s.data.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != DATASET_MAGIC {
            return Err(bad("not a dataset container"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + mlen)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let per = manifest.frames * manifest.channels;
        let data = &bytes[16 + mlen..];
        if data.len() != per * 4 * manifest.samples.len() {
            return Err(bad("sample data length does not match the manifest"));
        }
        let mut samples = manifest.samples;
        for (i, s) in samples.iter_mut().enumerate() {
            let vals = data[i * per * 4..(i + 1) * per * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            s.data = FrameMatrix::new(manifest.frames, manifest.channels, vals)?;
        }
        Ok(Self {
            config: manifest.config,
            samples,
            label_counts: manifest.label_counts,
            skipped: manifest.skipped,
        })
    }
}
