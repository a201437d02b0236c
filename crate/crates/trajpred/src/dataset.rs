//! Annotation-file ingest: parsing, velocity derivation, 8+12 frame
//! windowing, and seeded splits. Positions stay in dataset-native units.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type FrameId = i64;
pub type PedId = i64;

/// Number of observed frames per sample.
pub const OBS_LEN: usize = 8;
/// Number of predicted frames per sample.
pub const PRED_LEN: usize = 12;
/// Full window length.
pub const SEQ_LEN: usize = OBS_LEN + PRED_LEN;

/// One annotation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: FrameId,
    pub ped: PedId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub vx: f64,
    pub vy: f64,
}

/// Column layouts we accept. The swapped variant covers dataset
/// distributions that store the coordinates as (y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum ColumnOrder {
    #[default]
    FramePedXY,
    FramePedYX,
}

impl ColumnOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], ",").as_str() {
            "frame,ped,x,y" => Ok(ColumnOrder::FramePedXY),
            "frame,ped,y,x" => Ok(ColumnOrder::FramePedYX),
            other => Err(Error::Config(format!(
                "unknown column order {other:?} (expected frame,ped,x,y or frame,ped,y,x)"
            ))),
        }
    }
}

impl fmt::Display for ColumnOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnOrder::FramePedXY => write!(f, "frame,ped,x,y"),
            ColumnOrder::FramePedYX => write!(f, "frame,ped,y,x"),
        }
    }
}

/// The benchmark scenes the evaluation tables are keyed by.
pub const DATASET_PRESETS: [&str; 6] = ["ETH", "HOTEL", "UNIV1", "UNIV3", "ZARA1", "ZARA2"];

pub fn canonical_dataset_name(name: &str) -> String {
    let upper = name.to_ascii_uppercase();
    DATASET_PRESETS
        .iter()
        .find(|p| **p == upper)
        .map(|p| p.to_string())
        .unwrap_or(upper)
}

/// Parses a whitespace- or comma-separated annotation stream into points
/// sorted by `(frame, ped)`. Lines starting with `#` are comments. Duplicate
/// `(frame, ped)` pairs and malformed lines are reported with their line
/// number; an empty stream is an error.
pub fn parse_dataset<R: BufRead>(reader: R, columns: ColumnOrder) -> Result<Vec<TrackPoint>> {
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 4 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("field {} ({:?}) is not numeric", i + 1, fields[i]),
            })
        };
        let frame_f = num(0)?;
        let ped_f = num(1)?;
        let (a, b) = (num(2)?, num(3)?);
        let (x, y) = match columns {
            ColumnOrder::FramePedXY => (a, b),
            ColumnOrder::FramePedYX => (b, a),
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: "non-finite coordinate".into(),
            });
        }
        points.push(TrackPoint {
            frame: frame_f.round() as FrameId,
            ped: ped_f.round() as PedId,
            x,
            y,
        });
    }
    if points.is_empty() {
        return Err(Error::Data("no annotation rows found".into()));
    }
    points.sort_by_key(|p| (p.frame, p.ped));
    for w in points.windows(2) {
        if w[0].frame == w[1].frame && w[0].ped == w[1].ped {
            return Err(Error::Data(format!(
                "duplicate (frame, ped) pair ({}, {})",
                w[0].frame, w[0].ped
            )));
        }
    }
    Ok(points)
}

/// Serializes points back to the canonical 4-column layout.
pub fn write_points(points: &[TrackPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&format!("{} {} {} {}\n", p.frame, p.ped, p.x, p.y));
    }
    out
}

/// Velocity between two consecutive track points of the same pedestrian:
/// `v = (p_t - p_{t-1}) / dt` with `dt = (frame gap) * frame_period`.
pub fn compute_velocity(prev: &TrackPoint, cur: &TrackPoint, frame_period: f64) -> Result<Velocity> {
    if prev.ped != cur.ped {
        return Err(Error::Data(format!(
            "velocity across different pedestrians ({} vs {})",
            prev.ped, cur.ped
        )));
    }
    let dt = (cur.frame - prev.frame) as f64 * frame_period;
    if dt <= 0.0 {
        return Err(Error::Data(format!(
            "non-positive dt between frames {} and {}",
            prev.frame, cur.frame
        )));
    }
    Ok(Velocity {
        vx: (cur.x - prev.x) / dt,
        vy: (cur.y - prev.y) / dt,
    })
}

/// A 20-frame window over one scene: every listed pedestrian is present at
/// all 20 frames, with positions and track-derived velocities per frame.
/// The first [`OBS_LEN`] frames are the observed horizon.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    /// The 20 annotated frame ids, ascending.
    pub frames: Vec<FrameId>,
    /// Pedestrian ids, ascending.
    pub peds: Vec<PedId>,
    /// `positions[p][t]` for pedestrian index `p` at window frame `t`.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// `velocities[p][t]`, derived from the full track (the first point of a
    /// track carries velocity zero).
    pub velocities: Vec<Vec<[f64; 2]>>,
}

impl SequenceSample {
    pub fn start_frame(&self) -> FrameId {
        self.frames[0]
    }

    pub fn n_peds(&self) -> usize {
        self.peds.len()
    }
}

/// Windows sorted points into samples of `obs + pred` consecutive annotated
/// frames, advancing the window start by `stride` annotated frames. A
/// pedestrian joins a sample only if present at every frame of the window;
/// windows with no qualifying pedestrian are dropped.
pub fn build_sequences(
    points: &[TrackPoint],
    obs: usize,
    pred: usize,
    stride: usize,
    frame_period: f64,
) -> Result<Vec<SequenceSample>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if frame_period <= 0.0 {
        return Err(Error::Config("frame_period must be positive".into()));
    }
    let win = obs + pred;

    type PerFrame = BTreeMap<FrameId, ([f64; 2], [f64; 2])>;
    // Track index: ped -> ordered (frame -> (position, velocity)).
    let mut tracks: BTreeMap<PedId, Vec<TrackPoint>> = BTreeMap::new();
    for p in points {
        tracks.entry(p.ped).or_default().push(*p);
    }
    let mut by_ped: BTreeMap<PedId, PerFrame> = BTreeMap::new();
    for (ped, track) in &mut tracks {
        track.sort_by_key(|p| p.frame);
        let mut per_frame = BTreeMap::new();
        for (i, p) in track.iter().enumerate() {
            let vel = if i == 0 {
                Velocity { vx: 0.0, vy: 0.0 }
            } else {
                compute_velocity(&track[i - 1], p, frame_period)?
            };
            per_frame.insert(p.frame, ([p.x, p.y], [vel.vx, vel.vy]));
        }
        by_ped.insert(*ped, per_frame);
    }

    let mut frames: Vec<FrameId> = points.iter().map(|p| p.frame).collect();
    frames.dedup(); // points are sorted by (frame, ped)

    let mut samples = Vec::new();
    if frames.len() < win {
        return Ok(samples);
    }
    let mut start = 0usize;
    while start + win <= frames.len() {
        let window = &frames[start..start + win];
        let mut peds = Vec::new();
        for (ped, per_frame) in &by_ped {
            if window.iter().all(|f| per_frame.contains_key(f)) {
                peds.push(*ped);
            }
        }
        if !peds.is_empty() {
            let mut positions = Vec::with_capacity(peds.len());
            let mut velocities = Vec::with_capacity(peds.len());
            for ped in &peds {
                let per_frame = &by_ped[ped];
                positions.push(window.iter().map(|f| per_frame[f].0).collect());
                velocities.push(window.iter().map(|f| per_frame[f].1).collect());
            }
            samples.push(SequenceSample {
                frames: window.to_vec(),
                peds,
                positions,
                velocities,
            });
        }
        start += stride;
    }
    Ok(samples)
}

/// One pedestrian's `(id, position, velocity)` at some frame.
pub type FrameState = (PedId, [f64; 2], [f64; 2]);

/// Per-frame scene states over a whole dataset: every pedestrian present at
/// the frame, with its position and track-derived velocity. This is the
/// full-frame view the scores-file exporter works from (samples are windows
/// over it).
pub fn frame_states(
    points: &[TrackPoint],
    frame_period: f64,
) -> Result<BTreeMap<FrameId, Vec<FrameState>>> {
    let mut tracks: BTreeMap<PedId, Vec<TrackPoint>> = BTreeMap::new();
    for p in points {
        tracks.entry(p.ped).or_default().push(*p);
    }
    let mut by_frame: BTreeMap<FrameId, Vec<FrameState>> = BTreeMap::new();
    for (ped, track) in &mut tracks {
        track.sort_by_key(|p| p.frame);
        for (i, p) in track.iter().enumerate() {
            let vel = if i == 0 {
                Velocity { vx: 0.0, vy: 0.0 }
            } else {
                compute_velocity(&track[i - 1], p, frame_period)?
            };
            by_frame
                .entry(p.frame)
                .or_default()
                .push((*ped, [p.x, p.y], [vel.vx, vel.vy]));
        }
    }
    for states in by_frame.values_mut() {
        states.sort_by_key(|s| s.0);
    }
    Ok(by_frame)
}

/// Index sets of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic seeded shuffle followed by a partition at the given
/// fractions (train gets `floor(f0 n)`, validation `floor(f1 n)`, test the
/// rest).
pub fn split_dataset(n_samples: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let n_train = (n_samples as f64 * fractions[0]).floor() as usize;
    let n_val = (n_samples as f64 * fractions[1]).floor() as usize;
    let train = order[..n_train].to_vec();
    let val = order[n_train..(n_train + n_val).min(n_samples)].to_vec();
    let test = order[(n_train + n_val).min(n_samples)..].to_vec();
    Ok(Split { train, val, test })
}
