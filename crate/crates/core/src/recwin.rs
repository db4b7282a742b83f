//! Record-period selection over a detection stream.
//!
//! Frames are fed one at a time into an accumulator. The open window is
//! saved once it holds `n_max` positions, or once it spans `t_max` frames
//! while holding at least `n_min` positions. A window that reaches `t_max`
//! frames with fewer than `n_min` positions is discarded. Discarding never
//! touches the last saved window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Scene, TrajPoint};

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("invalid record window config: {0}")]
    InvalidConfig(String),
    #[error("t_p = {t_p} exceeds the {available} frames provided")]
    BeyondStream { t_p: usize, available: usize },
    #[error("scene {0:?} has no frames")]
    EmptyScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Maximum window length in frames.
    pub t_max: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            t_max: 150,
            n_min: 50,
            n_max: 1000,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.t_max < 1 {
            return Err(WindowError::InvalidConfig("t_max must be >= 1".into()));
        }
        if self.n_min > self.n_max {
            return Err(WindowError::InvalidConfig(format!(
                "n_min ({}) must not exceed n_max ({})",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordWindow {
    /// Contiguous frame ids.
    pub frames: Vec<i64>,
    /// Detections of those frames, in frame order then input order.
    pub positions: Vec<TrajPoint>,
}

impl RecordWindow {
    pub fn last_frame(&self) -> Option<i64> {
        self.frames.last().copied()
    }
}

/// Streaming form of the selection loop.
#[derive(Debug, Clone)]
pub struct WindowSelector {
    config: WindowConfig,
    open: RecordWindow,
    saved: Option<RecordWindow>,
}

impl WindowSelector {
    pub fn new(config: WindowConfig) -> Self {
        Self {
            config,
            open: RecordWindow::default(),
            saved: None,
        }
    }

    /// Adds one frame. Returns the window if this frame closed and saved it.
    pub fn push(&mut self, frame: i64, positions: &[TrajPoint]) -> Option<RecordWindow> {
        self.open.frames.push(frame);
        self.open.positions.extend_from_slice(positions);

        let count = self.open.positions.len();
        let span = self.open.frames.len();
        let c = &self.config;
        if count >= c.n_max || (span >= c.t_max && count >= c.n_min) {
            let done = std::mem::take(&mut self.open);
            self.saved = Some(done.clone());
            Some(done)
        } else {
            if span >= c.t_max {
                self.open = RecordWindow::default();
            }
            None
        }
    }

    pub fn saved(&self) -> Option<&RecordWindow> {
        self.saved.as_ref()
    }
}

/// Runs the selection over frames `1..=t_p` of `detections` (where
/// `detections[k]` holds frame `k + 1`) and returns the last saved window.
pub fn select_record_window(
    detections: &[Vec<TrajPoint>],
    config: WindowConfig,
    t_p: usize,
) -> Result<Option<RecordWindow>, WindowError> {
    config.validate()?;
    if t_p > detections.len() {
        return Err(WindowError::BeyondStream {
            t_p,
            available: detections.len(),
        });
    }
    let mut selector = WindowSelector::new(config);
    for (k, frame) in detections[..t_p].iter().enumerate() {
        selector.push(k as i64 + 1, frame);
    }
    Ok(selector.saved().cloned())
}

/// A window together with the frame at which it was saved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedWindow {
    pub saved_at: i64,
    pub window: RecordWindow,
}

/// Every window saved while streaming the whole scene, in save order.
pub fn windows_for_dataset(scene: &Scene, config: WindowConfig) -> Result<Vec<SavedWindow>, WindowError> {
    config.validate()?;
    let detections = scene.detections();
    if detections.is_empty() {
        return Err(WindowError::EmptyScene(scene.name.clone()));
    }
    let mut selector = WindowSelector::new(config);
    Ok(detections
        .iter()
        .filter_map(|(frame, positions)| {
            selector.push(*frame, positions).map(|window| SavedWindow {
                saved_at: *frame,
                window,
            })
        })
        .collect())
}

/// Time-indexed view over the saved windows of one scene.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WindowIndex {
    pub windows: Vec<SavedWindow>,
}

impl WindowIndex {
    pub fn build(scene: &Scene, config: WindowConfig) -> Result<Self, WindowError> {
        Ok(Self {
            windows: windows_for_dataset(scene, config)?,
        })
    }

    /// Index of the latest window saved strictly before `t1`, so no frame at
    /// or after the prediction start leaks into the map. `None` when no window
    /// has been saved yet; callers fall back to an empty map.
    pub fn lookup(&self, t1: i64) -> Option<usize> {
        let n = self.windows.partition_point(|w| w.saved_at < t1);
        n.checked_sub(1)
    }

    pub fn get(&self, idx: usize) -> &RecordWindow {
        &self.windows[idx].window
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}
