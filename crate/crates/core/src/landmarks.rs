//! Canonical landmark data model and the landmark bundle file format.
//!
//! A bundle holds one view (source or edited) of a video as a per-frame
//! stream of 478-point face meshes and 33-point body poses. A missed
//! detection is an absent (`null`) array for that frame, never NaN
//! coordinates.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of points in a face mesh with iris refinement.
pub const FACE_POINTS: usize = 478;
/// Number of points in a body pose.
pub const POSE_POINTS: usize = 33;

/// Face mesh indices consumed by the channel extractors.
pub mod face_idx {
    /// Mouth corners.
    pub const MOUTH_LEFT_CORNER: usize = 61;
    pub const MOUTH_RIGHT_CORNER: usize = 291;
    /// Upper/lower lip pairs used for vertical lip separation.
    pub const LIP_PAIRS: [(usize, usize); 4] = [(13, 14), (82, 87), (312, 317), (0, 17)];

    pub const RIGHT_EYE_CORNER_A: usize = 33;
    pub const RIGHT_EYE_CORNER_B: usize = 133;
    pub const RIGHT_EYE_UPPER_LID: usize = 159;
    pub const RIGHT_EYE_LOWER_LID: usize = 145;
    pub const RIGHT_IRIS_CENTER: usize = 468;

    pub const LEFT_EYE_CORNER_A: usize = 362;
    pub const LEFT_EYE_CORNER_B: usize = 263;
    pub const LEFT_EYE_UPPER_LID: usize = 386;
    pub const LEFT_EYE_LOWER_LID: usize = 374;
    pub const LEFT_IRIS_CENTER: usize = 473;
}

/// Body pose indices consumed by the channel extractors.
pub mod pose_idx {
    pub const LEFT_SHOULDER: usize = 11;
    pub const RIGHT_SHOULDER: usize = 12;
    pub const LEFT_ELBOW: usize = 13;
    pub const RIGHT_ELBOW: usize = 14;
    pub const LEFT_WRIST: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
    pub const LEFT_HIP: usize = 23;
    pub const RIGHT_HIP: usize = 24;
}

/// A 2D landmark in normalized image coordinates. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct LandmarkPoint {
    pub x: f64,
    pub y: f64,
}

impl LandmarkPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }
}

impl std::ops::Sub for LandmarkPoint {
    type Output = Self;

    fn sub(self, other: Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }
}

impl From<[f64; 2]> for LandmarkPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<LandmarkPoint> for [f64; 2] {
    fn from(p: LandmarkPoint) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub frame_index: usize,
    pub face: Option<Vec<LandmarkPoint>>,
    pub pose: Option<Vec<LandmarkPoint>>,
}

impl LandmarkFrame {
    pub fn has(&self, subsystem: Subsystem) -> bool {
        match subsystem {
            Subsystem::Face => self.face.is_some(),
            Subsystem::Pose => self.pose.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Source,
    Edited,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Source => "source",
            View::Edited => "edited",
        })
    }
}

/// Landmark detector subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsystem {
    Face,
    Pose,
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subsystem::Face => "face",
            Subsystem::Pose => "pose",
        })
    }
}

/// One view of a video as a validated landmark stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkBundle {
    pub video_id: String,
    pub view: View,
    pub fps: f64,
    pub frames: Vec<LandmarkFrame>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("bundle has no frames")]
    NoFrames,
    #[error("fps must be a positive finite number, got {0}")]
    InvalidFps(f64),
    #[error("frame at position {position} has frame_index {found}, expected {position}")]
    FrameIndex { position: usize, found: usize },
    #[error("frame {frame}: {subsystem} has {found} points, expected {expected}")]
    PointCount {
        frame: usize,
        subsystem: Subsystem,
        found: usize,
        expected: usize,
    },
    #[error("frame {frame}: {subsystem} point {point} has a non-finite coordinate")]
    NonFinite {
        frame: usize,
        subsystem: Subsystem,
        point: usize,
    },
}

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("malformed landmark JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(#[from] SchemaError),
    #[error("pair {pair_id}: source has {source_frames} frames but edited has {edited_frames}")]
    LengthMismatch {
        pair_id: String,
        source_frames: usize,
        edited_frames: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<LandmarkError>,
    },
}

impl LandmarkBundle {
    /// Checks every bundle invariant, reporting the first violation in frame order.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SchemaError::InvalidFps(self.fps));
        }
        if self.frames.is_empty() {
            return Err(SchemaError::NoFrames);
        }
        for (position, frame) in self.frames.iter().enumerate() {
            if frame.frame_index != position {
                return Err(SchemaError::FrameIndex {
                    position,
                    found: frame.frame_index,
                });
            }
            check_points(
                position,
                Subsystem::Face,
                frame.face.as_deref(),
                FACE_POINTS,
            )?;
            check_points(
                position,
                Subsystem::Pose,
                frame.pose.as_deref(),
                POSE_POINTS,
            )?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LandmarkError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| LandmarkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        parse_bundle(&bytes).map_err(|e| LandmarkError::File {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }
}

fn check_points(
    frame: usize,
    subsystem: Subsystem,
    points: Option<&[LandmarkPoint]>,
    expected: usize,
) -> Result<(), SchemaError> {
    let Some(points) = points else {
        return Ok(());
    };
    if points.len() != expected {
        return Err(SchemaError::PointCount {
            frame,
            subsystem,
            found: points.len(),
            expected,
        });
    }
    if let Some(point) = points.iter().position(|p| !p.is_finite()) {
        return Err(SchemaError::NonFinite {
            frame,
            subsystem,
            point,
        });
    }
    Ok(())
}

/// Parses and validates a landmark bundle from raw JSON bytes.
pub fn parse_bundle(bytes: &[u8]) -> Result<LandmarkBundle, LandmarkError> {
    let bundle: LandmarkBundle = serde_json::from_slice(bytes)?;
    bundle.validate()?;
    Ok(bundle)
}

/// Fraction of frames in which `subsystem` produced a detection.
pub fn detection_coverage(bundle: &LandmarkBundle, subsystem: Subsystem) -> f64 {
    if bundle.frames.is_empty() {
        return 0.0;
    }
    let present = bundle.frames.iter().filter(|f| f.has(subsystem)).count();
    present as f64 / bundle.frames.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    EditedPair,
    IdenticalPair,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::EditedPair => "edited_pair",
            PairKind::IdenticalPair => "identical_pair",
        })
    }
}

/// A frame-aligned source/edited pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub kind: PairKind,
    pub source: LandmarkBundle,
    pub edited: LandmarkBundle,
}

impl PairRecord {
    pub fn new(
        pair_id: impl Into<String>,
        kind: PairKind,
        source: LandmarkBundle,
        edited: LandmarkBundle,
    ) -> Result<Self, LandmarkError> {
        let pair_id = pair_id.into();
        if source.len() != edited.len() {
            return Err(LandmarkError::LengthMismatch {
                pair_id,
                source_frames: source.len(),
                edited_frames: edited.len(),
            });
        }
        Ok(Self {
            pair_id,
            kind,
            source,
            edited,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.source.len()
    }

    /// Loads a pair record file, resolving relative bundle paths against the
    /// directory containing the pair file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LandmarkError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| LandmarkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: PairFile = serde_json::from_slice(&bytes).map_err(|e| LandmarkError::File {
            path: path.to_path_buf(),
            source: Box::new(e.into()),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let source = LandmarkBundle::load(base.join(&file.source))?;
        let edited = LandmarkBundle::load(base.join(&file.edited))?;
        Self::new(file.pair_id, file.kind, source, edited)
    }
}

/// On-disk pair record: bundle paths rather than inline bundles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFile {
    pub pair_id: String,
    pub kind: PairKind,
    pub source: PathBuf,
    pub edited: PathBuf,
}
