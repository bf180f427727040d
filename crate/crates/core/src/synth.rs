//! Synthetic mingling sessions with planted groups, speaking turns and noisy
//! sensors.
//!
//! Acceleration on each axis is the sum of three parts:
//!
//! * white noise with standard deviation `accel_noise`;
//! * while the participant speaks, `speaker_energy` times a smooth gesture
//!   process (unit-variance AR(1) with pole `gesture_pole`);
//! * `coordination_gain · sin(2π f t + φ + d(t))`, where the frequency `f`,
//!   axis phases `φ` and the random-walk drift `d(t)` are shared by every
//!   member of a group. Participants standing alone get a private component
//!   of the same kind, so only its *agreement* between two people carries
//!   information about membership.
//!
//! Proximity is generated per pair and second: co-grouped pairs are detected
//! with probability `p_tp`, all others with `p_fp`, and each detection is
//! attributed to one randomly chosen side of the pair.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{
    AccelStream, AnnotationTrack, FormationInterval, ProximityLog, ProximityStream, Session,
    ACCEL_RATE_HZ,
};

/// Acceleration values are rounded to this many decimal places, which keeps
/// the CSV export compact; the text round trip stays exact.
const ACCEL_DECIMALS: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub session_s: u32,
    pub min_group_size: usize,
    pub max_group_size: usize,
    /// Probability that a participant is left standing alone when a new
    /// arrangement is drawn.
    pub singleton_prob: f64,
    /// Mean duration of one group arrangement; durations are exponential,
    /// rounded to whole seconds and at least `min_group_lifetime_s`.
    pub mean_group_lifetime_s: f64,
    pub min_group_lifetime_s: u32,
    /// Turn lengths are uniform in `[min_turn_s, max_turn_s]`.
    pub min_turn_s: f64,
    pub max_turn_s: f64,
    /// Probability that a second group member talks during a turn.
    pub overlap_prob: f64,
    pub p_tp: f64,
    pub p_fp: f64,
    pub accel_noise: f64,
    pub speaker_energy: f64,
    /// Per-frame autocorrelation of the speaking gesture process.
    pub gesture_pole: f64,
    pub coordination_gain: f64,
    /// Range of the shared movement frequency in Hz.
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Standard deviation of the phase drift per frame, in radians.
    pub phase_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 12,
            session_s: 600,
            min_group_size: 2,
            max_group_size: 7,
            singleton_prob: 0.1,
            mean_group_lifetime_s: 90.0,
            min_group_lifetime_s: 30,
            min_turn_s: 5.0,
            max_turn_s: 12.0,
            overlap_prob: 0.15,
            p_tp: 0.9,
            p_fp: 0.05,
            accel_noise: 0.5,
            speaker_energy: 2.5,
            gesture_pole: 0.95,
            coordination_gain: 0.5,
            min_freq_hz: 0.2,
            max_freq_hz: 1.5,
            phase_drift: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_participants < 2 {
            return bad(format!(
                "n_participants must be at least 2, got {}",
                self.n_participants
            ));
        }
        if self.min_group_size < 2 || self.max_group_size < self.min_group_size {
            return bad(format!(
                "group sizes must satisfy 2 <= min <= max, got {}..{}",
                self.min_group_size, self.max_group_size
            ));
        }
        if self.max_group_size > self.n_participants {
            return bad(format!(
                "max_group_size {} exceeds the {} participants",
                self.max_group_size, self.n_participants
            ));
        }
        for (name, p) in [
            ("singleton_prob", self.singleton_prob),
            ("overlap_prob", self.overlap_prob),
            ("p_tp", self.p_tp),
            ("p_fp", self.p_fp),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.session_s == 0 {
            return bad("session_s must be positive".into());
        }
        if !(self.mean_group_lifetime_s > 0.0) || self.min_group_lifetime_s == 0 {
            return bad("group lifetimes must be positive".into());
        }
        if !(self.min_turn_s > 0.0) || self.max_turn_s < self.min_turn_s {
            return bad(format!(
                "turn lengths must satisfy 0 < min <= max, got {}..{}",
                self.min_turn_s, self.max_turn_s
            ));
        }
        if !(0.0..1.0).contains(&self.gesture_pole) {
            return bad(format!(
                "gesture_pole must be in [0, 1), got {}",
                self.gesture_pole
            ));
        }
        if !(self.min_freq_hz > 0.0)
            || self.max_freq_hz < self.min_freq_hz
            || self.max_freq_hz >= ACCEL_RATE_HZ / 2.0
        {
            return bad("movement frequencies must be positive, ordered and below Nyquist".into());
        }
        for (name, v) in [
            ("accel_noise", self.accel_noise),
            ("speaker_energy", self.speaker_energy),
            ("coordination_gain", self.coordination_gain),
            ("phase_drift", self.phase_drift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        Ok(())
    }

    /// Also checks that the session can hold at least one window of `window_s`.
    pub fn validate_for_window(&self, window_s: f64) -> Result<()> {
        self.validate()?;
        if (self.session_s as f64) < window_s {
            return Err(Error::Config(format!(
                "session of {} s is shorter than a {window_s} s window",
                self.session_s
            )));
        }
        Ok(())
    }
}

/// One speaking turn inside a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTurn {
    pub start_s: f64,
    pub end_s: f64,
    pub speakers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGroup {
    pub group_id: String,
    pub members: Vec<String>,
    pub freq_hz: f64,
    pub turns: Vec<LatentTurn>,
}

/// One arrangement of participants, constant over `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSegment {
    pub start_s: u32,
    pub end_s: u32,
    pub groups: Vec<LatentGroup>,
    pub singletons: Vec<String>,
}

/// The generating schedule, written for debugging only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub config: SynthConfig,
    pub segments: Vec<LatentSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub session: Session,
    pub latent: Latent,
}

pub const LATENT_FILE: &str = "latent.json";

impl SynthSession {
    /// Writes the ingestion file formats plus the latent schedule.
    pub fn export(&self, dir: &Path) -> Result<()> {
        self.session.save(dir)?;
        let path = dir.join(LATENT_FILE);
        let json = serde_json::to_string_pretty(&self.latent)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

pub fn participant_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("P{i:0width$}")).collect()
}

fn draw_arrangement(
    cfg: &SynthConfig,
    ids: &[String],
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<String>>, Vec<String>) {
    let mut pool = ids.to_vec();
    pool.shuffle(rng);
    let mut groups = Vec::new();
    let mut singles = Vec::new();
    while !pool.is_empty() {
        if pool.len() < cfg.min_group_size || rng.random_bool(cfg.singleton_prob) {
            singles.push(pool.pop().expect("non-empty"));
            continue;
        }
        let hi = cfg.max_group_size.min(pool.len());
        let size = rng.random_range(cfg.min_group_size..=hi);
        let mut g = pool.split_off(pool.len() - size);
        g.sort();
        groups.push(g);
    }
    singles.sort();
    (groups, singles)
}

fn draw_turns(
    cfg: &SynthConfig,
    members: &[String],
    start: f64,
    end: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<LatentTurn> {
    let mut order = members.to_vec();
    order.shuffle(rng);
    let mut turns = Vec::new();
    let mut t = start;
    let mut k = 0;
    while t < end {
        let len = if cfg.max_turn_s > cfg.min_turn_s {
            rng.random_range(cfg.min_turn_s..=cfg.max_turn_s)
        } else {
            cfg.min_turn_s
        };
        // Turn boundaries on the 20 Hz frame grid.
        let stop = ((t + len) * ACCEL_RATE_HZ).round() / ACCEL_RATE_HZ;
        let stop = stop.min(end);
        let main = order[k % order.len()].clone();
        let mut speakers = vec![main.clone()];
        if rng.random_bool(cfg.overlap_prob) {
            let others: Vec<&String> = order.iter().filter(|m| **m != main).collect();
            speakers.push(others[rng.random_range(0..others.len())].clone());
            speakers.sort();
        }
        turns.push(LatentTurn {
            start_s: t,
            end_s: stop,
            speakers,
        });
        t = stop;
        k += 1;
    }
    turns
}

fn quantize(v: f64) -> f64 {
    let s = 10f64.powi(ACCEL_DECIMALS);
    (v * s).round() / s
}

/// Draws a complete session; a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids = participant_ids(cfg.n_participants);
    let lifetime =
        Exp::new(1.0 / cfg.mean_group_lifetime_s).map_err(|e| Error::Config(e.to_string()))?;

    // Group schedule.
    let mut segments = Vec::new();
    let mut start = 0u32;
    let mut gid = 0usize;
    while start < cfg.session_s {
        let d = (lifetime.sample(&mut rng).round() as u32).max(cfg.min_group_lifetime_s);
        let end = start.saturating_add(d).min(cfg.session_s);
        let (groups, singletons) = draw_arrangement(cfg, &ids, &mut rng);
        let groups = groups
            .into_iter()
            .map(|members| {
                gid += 1;
                let freq_hz = rng.random_range(cfg.min_freq_hz..=cfg.max_freq_hz);
                let turns = draw_turns(cfg, &members, start as f64, end as f64, &mut rng);
                LatentGroup {
                    group_id: format!("G{gid}"),
                    members,
                    freq_hz,
                    turns,
                }
            })
            .collect();
        segments.push(LatentSegment {
            start_s: start,
            end_s: end,
            groups,
            singletons,
        });
        start = end;
    }

    let n_frames = cfg.session_s as usize * ACCEL_RATE_HZ as usize;
    let rate = ACCEL_RATE_HZ;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    // Shared movement component and speaking mask per participant and frame.
    let mut shared = vec![vec![[0.0f64; 3]; n_frames]; ids.len()];
    let mut speaking = vec![vec![false; n_frames]; ids.len()];
    for seg in &segments {
        let (f0, f1) = (
            seg.start_s as usize * rate as usize,
            seg.end_s as usize * rate as usize,
        );
        let mut movers: Vec<(Vec<usize>, f64)> = seg
            .groups
            .iter()
            .map(|g| {
                (
                    g.members.iter().map(|m| index[m.as_str()]).collect(),
                    g.freq_hz,
                )
            })
            .collect();
        for s in &seg.singletons {
            movers.push((
                vec![index[s.as_str()]],
                rng.random_range(cfg.min_freq_hz..=cfg.max_freq_hz),
            ));
        }
        for (members, freq) in movers {
            let phase: [f64; 3] =
                std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
            let mut drift = 0.0;
            for k in f0..f1 {
                drift += cfg.phase_drift * unit.sample(&mut rng);
                let t = k as f64 / rate;
                let v: [f64; 3] = std::array::from_fn(|a| {
                    cfg.coordination_gain
                        * (std::f64::consts::TAU * freq * t + phase[a] + drift).sin()
                });
                for &m in &members {
                    shared[m][k] = v;
                }
            }
        }
        for g in &seg.groups {
            for turn in &g.turns {
                let (a, b) = (
                    (turn.start_s * rate).round() as usize,
                    (turn.end_s * rate).round() as usize,
                );
                for s in &turn.speakers {
                    speaking[index[s.as_str()]][a..b].fill(true);
                }
            }
        }
    }

    let mut accel = Vec::with_capacity(ids.len());
    let innovation = (1.0 - cfg.gesture_pole * cfg.gesture_pole).sqrt();
    for (i, id) in ids.iter().enumerate() {
        let mut gesture: [f64; 3] = std::array::from_fn(|_| unit.sample(&mut rng));
        let samples: Vec<[f64; 3]> = (0..n_frames)
            .map(|k| {
                std::array::from_fn(|a| {
                    gesture[a] = cfg.gesture_pole * gesture[a] + innovation * unit.sample(&mut rng);
                    let mut v = shared[i][k][a] + cfg.accel_noise * unit.sample(&mut rng);
                    if speaking[i][k] {
                        v += cfg.speaker_energy * gesture[a];
                    }
                    quantize(v)
                })
            })
            .collect();
        accel.push(AccelStream::uniform(id.as_str(), 0.0, rate, samples)?);
    }

    // Proximity, one Bernoulli draw per pair and second.
    let mut proximity = ProximityLog {
        n_seconds: cfg.session_s,
        ..Default::default()
    };
    for id in &ids {
        proximity
            .streams
            .insert(id.clone(), ProximityStream::new(id.as_str(), cfg.session_s));
    }
    for seg in &segments {
        let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (gi, g) in seg.groups.iter().enumerate() {
            for m in &g.members {
                group_of.insert(m, gi);
            }
        }
        for t in seg.start_s..seg.end_s {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    let together = matches!(
                        (group_of.get(ids[i].as_str()), group_of.get(ids[j].as_str())),
                        (Some(a), Some(b)) if a == b
                    );
                    let p = if together { cfg.p_tp } else { cfg.p_fp };
                    if rng.random_bool(p) {
                        let (det, seen) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
                        proximity
                            .streams
                            .get_mut(&ids[det])
                            .expect("stream")
                            .detections
                            .entry(t)
                            .or_default()
                            .insert(ids[seen].clone());
                    }
                }
            }
        }
    }

    // Annotations emitted from the schedule.
    let mut fformations = Vec::new();
    let mut spans: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for seg in &segments {
        for g in &seg.groups {
            fformations.push(FormationInterval {
                start_s: seg.start_s as f64,
                end_s: seg.end_s as f64,
                group_id: g.group_id.clone(),
                members: g.members.iter().cloned().collect::<BTreeSet<_>>(),
            });
            for turn in &g.turns {
                for s in &turn.speakers {
                    spans
                        .entry(s.clone())
                        .or_default()
                        .push((turn.start_s, turn.end_s));
                }
            }
        }
    }
    let annotations = AnnotationTrack::new(fformations, spans)?;
    let session =
        Session::from_parts(format!("synth-{}", cfg.seed), accel, proximity, annotations)?;
    Ok(SynthSession {
        session,
        latent: Latent {
            config: cfg.clone(),
            segments,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{evaluate_annotations, pair_proximity};
    use crate::parallel::Execution;
    use crate::sampling::{
        build_dataset, DatasetConfig, InputCombo, Membership, Task, Thresholds, WindowSpec,
    };

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_participants: 6,
            session_s: 120,
            max_group_size: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let mut c = small(1);
        c.max_group_size = 9;
        assert!(generate(&c).is_err());
        let mut c = small(1);
        c.p_tp = 1.5;
        assert!(generate(&c).is_err());
        let mut c = small(1);
        c.min_group_size = 1;
        assert!(generate(&c).is_err());
        assert!(small(1).validate_for_window(200.0).is_err());
    }

    #[test]
    fn memberships_tile_without_overlap() {
        let s = generate(&small(3)).unwrap();
        for seg in &s.latent.segments {
            let mut seen: Vec<&String> = seg
                .groups
                .iter()
                .flat_map(|g| &g.members)
                .chain(&seg.singletons)
                .collect();
            seen.sort();
            assert_eq!(seen.len(), 6);
            seen.dedup();
            assert_eq!(seen.len(), 6);
            for g in &seg.groups {
                assert!((2..=4).contains(&g.members.len()));
                assert_eq!(g.turns.first().unwrap().start_s, seg.start_s as f64);
                assert_eq!(g.turns.last().unwrap().end_s, seg.end_s as f64);
            }
        }
        assert_eq!(s.latent.segments.last().unwrap().end_s, 120);
        assert_eq!(s.session.duration_s, 120.0);
    }

    #[test]
    fn export_is_deterministic_and_reloads_exactly() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = generate(&small(9)).unwrap();
        s.export(a.path()).unwrap();
        generate(&small(9)).unwrap().export(b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 6 + 3);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap()
            );
        }
        let mut loaded = Session::load(a.path()).unwrap();
        loaded.name = s.session.name.clone();
        assert_eq!(loaded, s.session);
        assert_ne!(generate(&small(10)).unwrap().session, s.session);
    }

    #[test]
    fn noiseless_proximity_is_a_membership_oracle() {
        let cfg = SynthConfig {
            p_tp: 1.0,
            p_fp: 0.0,
            coordination_gain: 0.0,
            ..small(5)
        };
        let s = generate(&cfg).unwrap();
        let dcfg = DatasetConfig {
            window: WindowSpec::new(15.0).unwrap(),
            combo: InputCombo::Proximity,
            task: Task::Binary,
            thresholds: Thresholds::default(),
        };
        let d = build_dataset(
            std::slice::from_ref(&s.session),
            &dcfg,
            Execution::sequential(),
        )
        .unwrap();
        assert!(d.label_counts[1] > 0 && d.label_counts[0] > 0);
        for sample in &d.samples {
            let prox = sample.data.column(0);
            let frac = prox.iter().filter(|&&v| v == 1.0).count() as f64;
            let thresholded = frac + 1e-9 >= 0.66 * prox.len() as f64;
            assert_eq!(thresholded, sample.membership == Membership::Positive);
        }
    }

    fn co_grouped_seconds(s: &SynthSession) -> Vec<(String, String, Vec<bool>)> {
        let tl = s.session.timeline();
        let r = evaluate_annotations(&s.session.annotations, &tl, &s.session.participants).unwrap();
        let ids = &s.session.participants;
        let mut out = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let (a, b) = (
                    r.membership_of(&ids[i]).unwrap(),
                    r.membership_of(&ids[j]).unwrap(),
                );
                let secs = (0..s.session.duration_s as usize)
                    .map(|t| {
                        let k = t * 20;
                        a[k].is_some() && a[k] == b[k]
                    })
                    .collect();
                out.push((ids[i].clone(), ids[j].clone(), secs));
            }
        }
        out
    }

    #[test]
    fn detection_rates_converge() {
        let cfg = SynthConfig {
            session_s: 1200,
            p_tp: 0.8,
            p_fp: 0.1,
            ..small(11)
        };
        let s = generate(&cfg).unwrap();
        let (mut n1, mut k1, mut n0, mut k0) = (0f64, 0f64, 0f64, 0f64);
        for (a, b, together) in co_grouped_seconds(&s) {
            let prox = pair_proximity(
                &s.session.proximity.stream(&a),
                &s.session.proximity.stream(&b),
            )
            .unwrap();
            for (t, &g) in together.iter().enumerate() {
                if g {
                    n1 += 1.0;
                    k1 += prox[t] as f64;
                } else {
                    n0 += 1.0;
                    k0 += prox[t] as f64;
                }
            }
        }
        let bound = |p: f64, n: f64| 3.0 * (p * (1.0 - p) / n).sqrt();
        assert!((k1 / n1 - 0.8).abs() < bound(0.8, n1), "{}", k1 / n1);
        assert!((k0 / n0 - 0.1).abs() < bound(0.1, n0), "{}", k0 / n0);
    }

    #[test]
    fn uninformative_proximity_has_no_mutual_information() {
        let cfg = SynthConfig {
            session_s: 1800,
            p_tp: 0.3,
            p_fp: 0.3,
            ..small(12)
        };
        let s = generate(&cfg).unwrap();
        let mut table = [[0f64; 2]; 2];
        for (a, b, together) in co_grouped_seconds(&s) {
            let prox = pair_proximity(
                &s.session.proximity.stream(&a),
                &s.session.proximity.stream(&b),
            )
            .unwrap();
            for (t, &g) in together.iter().enumerate() {
                table[g as usize][prox[t] as usize] += 1.0;
            }
        }
        let n: f64 = table.iter().flatten().sum();
        let mut mi = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                let pxy = table[x][y] / n;
                let px = (table[x][0] + table[x][1]) / n;
                let py = (table[0][y] + table[1][y]) / n;
                if pxy > 0.0 {
                    mi += pxy * (pxy / (px * py)).ln();
                }
            }
        }
        assert!(mi < 1e-3, "mutual information {mi}");
    }

    #[test]
    fn speaking_time_matches_turns() {
        let s = generate(&small(2)).unwrap();
        let mut expected: BTreeMap<String, f64> = BTreeMap::new();
        for seg in &s.latent.segments {
            for g in &seg.groups {
                for t in &g.turns {
                    for sp in &t.speakers {
                        *expected.entry(sp.clone()).or_default() += t.end_s - t.start_s;
                    }
                }
            }
        }
        for (id, spans) in &s.session.annotations.speaking {
            let total: f64 = spans.iter().map(|(a, b)| b - a).sum();
            assert!((total - expected[id]).abs() < 1e-9);
        }
    }
}
