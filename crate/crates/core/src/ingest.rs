//! Annotation parsing, fixed-horizon sample cutting and scene splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no records")]
    Empty,
    #[error("line {line}: duplicate record for frame {frame_id}, agent {agent_id}")]
    Duplicate {
        line: usize,
        frame_id: i64,
        agent_id: i64,
    },
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("invalid horizon: t_obs = {t_obs}, t_pred = {t_pred}")]
    InvalidHorizon { t_obs: usize, t_pred: usize },
}

/// A position in world metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
}

impl TrajPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: TrajPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for TrajPoint {
    type Output = TrajPoint;
    fn add(self, o: TrajPoint) -> TrajPoint {
        TrajPoint::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for TrajPoint {
    type Output = TrajPoint;
    fn sub(self, o: TrajPoint) -> TrajPoint {
        TrajPoint::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for TrajPoint {
    type Output = TrajPoint;
    fn mul(self, s: f64) -> TrajPoint {
        TrajPoint::new(self.x * s, self.y * s)
    }
}

impl fmt::Display for TrajPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: i64,
    /// Strictly increasing by frame id.
    pub frames: Vec<(i64, TrajPoint)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub frame_interval_s: f64,
    /// Smallest positive gap between distinct frame ids. Two annotated frames
    /// are consecutive when their ids differ by exactly this much.
    pub frame_step: i64,
    /// Sorted by agent id.
    pub tracks: Vec<AgentTrack>,
    pub bounds: (TrajPoint, TrajPoint),
}

pub const DEFAULT_FRAME_INTERVAL_S: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub t_obs: usize,
    pub t_pred: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { t_obs: 8, t_pred: 12 }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.t_obs < 2 || self.t_pred < 1 {
            return Err(IngestError::InvalidHorizon {
                t_obs: self.t_obs,
                t_pred: self.t_pred,
            });
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.t_obs + self.t_pred
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub scene: String,
    pub agent_id: i64,
    /// Frame id of the first observed point.
    pub t0: i64,
    /// Frame id of the first predicted point.
    pub t1: i64,
    pub observed: Vec<TrajPoint>,
    pub ground_truth: Vec<TrajPoint>,
    pub neighbor_ids: Vec<i64>,
}

impl TrajectorySample {
    pub fn last_observed(&self) -> TrajPoint {
        *self.observed.last().expect("observed is never empty")
    }
}

/// Supported annotation layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotationFormat {
    /// One record per line: `frame_id agent_id x y`, whitespace or comma
    /// delimited, world metres.
    #[default]
    FrameRows,
}

pub fn parse_annotations(path: &Path, format: AnnotationFormat) -> Result<Scene, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_reader(&name, BufReader::new(file), format)
}

pub fn parse_str(name: &str, text: &str) -> Result<Scene, IngestError> {
    parse_reader(name, text.as_bytes(), AnnotationFormat::FrameRows)
}

pub fn parse_reader<R: BufRead>(
    name: &str,
    reader: R,
    _format: AnnotationFormat,
) -> Result<Scene, IngestError> {
    let mut by_agent: BTreeMap<i64, BTreeMap<i64, TrajPoint>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: name.to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(IngestError::Malformed {
                line: lineno,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let frame_id = parse_id(fields[0], lineno, "frame_id")?;
        let agent_id = parse_id(fields[1], lineno, "agent_id")?;
        let x = parse_coord(fields[2], lineno, "x")?;
        let y = parse_coord(fields[3], lineno, "y")?;
        let track = by_agent.entry(agent_id).or_default();
        if track.insert(frame_id, TrajPoint::new(x, y)).is_some() {
            return Err(IngestError::Duplicate {
                line: lineno,
                frame_id,
                agent_id,
            });
        }
    }
    if by_agent.is_empty() {
        return Err(IngestError::Empty);
    }
    let tracks = by_agent
        .into_iter()
        .map(|(agent_id, frames)| AgentTrack {
            agent_id,
            frames: frames.into_iter().collect(),
        })
        .collect();
    Ok(Scene::from_tracks(name, tracks))
}

fn parse_id(field: &str, line: usize, what: &str) -> Result<i64, IngestError> {
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    // Some distributions write ids as floats ("780.0").
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(IngestError::Malformed {
            line,
            msg: format!("{what} is not an integer: {field:?}"),
        }),
    }
}

fn parse_coord(field: &str, line: usize, what: &str) -> Result<f64, IngestError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::Malformed {
            line,
            msg: format!("{what} is not a finite number: {field:?}"),
        }),
    }
}

impl Scene {
    /// Builds a scene from tracks, sorting everything and recomputing bounds
    /// and the frame step.
    pub fn from_tracks(name: &str, mut tracks: Vec<AgentTrack>) -> Scene {
        tracks.retain(|t| !t.frames.is_empty());
        tracks.sort_by_key(|t| t.agent_id);
        for t in &mut tracks {
            t.frames.sort_by_key(|(f, _)| *f);
        }
        let mut lo = TrajPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = TrajPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (_, p) in tracks.iter().flat_map(|t| t.frames.iter()) {
            lo = TrajPoint::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = TrajPoint::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if tracks.is_empty() {
            lo = TrajPoint::default();
            hi = TrajPoint::default();
        }
        let frame_ids: BTreeSet<i64> = tracks
            .iter()
            .flat_map(|t| t.frames.iter().map(|(f, _)| *f))
            .collect();
        let frame_step = frame_ids
            .iter()
            .zip(frame_ids.iter().skip(1))
            .map(|(a, b)| b - a)
            .min()
            .unwrap_or(1);
        Scene {
            name: name.to_string(),
            frame_interval_s: DEFAULT_FRAME_INTERVAL_S,
            frame_step,
            tracks,
            bounds: (lo, hi),
        }
    }

    pub fn with_name(mut self, name: &str) -> Scene {
        self.name = name.to_string();
        self
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.tracks.iter().filter_map(|t| t.frames.first()).map(|f| f.0).min()
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.tracks.iter().filter_map(|t| t.frames.last()).map(|f| f.0).max()
    }

    pub fn num_records(&self) -> usize {
        self.tracks.iter().map(|t| t.frames.len()).sum()
    }

    /// Positions per timeline slot, from the first to the last frame in steps
    /// of `frame_step`. Slots without annotations are empty. Within a slot,
    /// positions follow ascending agent id.
    pub fn detections(&self) -> Vec<(i64, Vec<TrajPoint>)> {
        let (Some(first), Some(last)) = (self.first_frame(), self.last_frame()) else {
            return Vec::new();
        };
        let step = self.frame_step.max(1);
        let n = ((last - first) / step + 1) as usize;
        let mut slots: Vec<(i64, Vec<TrajPoint>)> =
            (0..n).map(|k| (first + k as i64 * step, Vec::new())).collect();
        for track in &self.tracks {
            for &(f, p) in &track.frames {
                if (f - first) % step == 0 {
                    slots[((f - first) / step) as usize].1.push(p);
                }
            }
        }
        slots
    }

    /// Writes the scene back in `frame_id agent_id x y` rows, sorted by frame
    /// then agent. Floats use the shortest round-tripping representation.
    pub fn write_annotations<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut rows: Vec<(i64, i64, TrajPoint)> = self
            .tracks
            .iter()
            .flat_map(|t| t.frames.iter().map(move |&(f, p)| (f, t.agent_id, p)))
            .collect();
        rows.sort_by_key(|r| (r.0, r.1));
        for (f, a, p) in rows {
            writeln!(w, "{f}\t{a}\t{}\t{}", p.x, p.y)?;
        }
        Ok(())
    }
}

/// Cuts every window of `t_obs + t_pred` consecutive annotated frames.
///
/// Window starts are aligned to the scene timeline: a start is taken when its
/// slot index (relative to the scene's first frame) is a multiple of
/// `stride`, so all agents share window starts. Output is ordered by
/// `(t0, agent_id)`.
pub fn build_samples(scene: &Scene, horizon: HorizonConfig, stride: usize) -> Vec<TrajectorySample> {
    let stride = stride.max(1) as i64;
    let step = scene.frame_step.max(1);
    let Some(first) = scene.first_frame() else {
        return Vec::new();
    };
    let total = horizon.total();
    let mut out = Vec::new();
    for track in &scene.tracks {
        if track.frames.len() < total {
            continue;
        }
        for start in 0..=track.frames.len() - total {
            let t0 = track.frames[start].0;
            if (t0 - first) % step != 0 || ((t0 - first) / step) % stride != 0 {
                continue;
            }
            let window = &track.frames[start..start + total];
            let consecutive = window.windows(2).all(|w| w[1].0 - w[0].0 == step);
            if !consecutive {
                continue;
            }
            let t1 = window[horizon.t_obs].0;
            let t2 = t0 + total as i64 * step;
            let neighbor_ids = scene
                .tracks
                .iter()
                .filter(|o| o.agent_id != track.agent_id)
                .filter(|o| o.frames.iter().any(|(f, _)| *f >= t0 && *f < t2))
                .map(|o| o.agent_id)
                .collect();
            out.push(TrajectorySample {
                scene: scene.name.clone(),
                agent_id: track.agent_id,
                t0,
                t1,
                observed: window[..horizon.t_obs].iter().map(|f| f.1).collect(),
                ground_truth: window[horizon.t_obs..].iter().map(|f| f.1).collect(),
                neighbor_ids,
            });
        }
    }
    out.sort_by_key(|s| (s.t0, s.agent_id));
    out
}

/// Leave-one-scene-out split: the held-out scene's samples form the test set,
/// all other scenes form the training set (in scene order).
pub fn split_leave_one_out(
    scenes: &[Scene],
    held_out: &str,
    horizon: HorizonConfig,
    stride: usize,
) -> Result<(Vec<TrajectorySample>, Vec<TrajectorySample>), IngestError> {
    if !scenes.iter().any(|s| s.name == held_out) {
        return Err(IngestError::UnknownScene(held_out.to_string()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for scene in scenes {
        let samples = build_samples(scene, horizon, stride);
        if scene.name == held_out {
            test.extend(samples);
        } else {
            train.extend(samples);
        }
    }
    Ok((train, test))
}

/// Writes one JSON object per sample.
pub fn write_manifest<W: Write>(samples: &[TrajectorySample], mut w: W) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> io::Result<Vec<TrajectorySample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
