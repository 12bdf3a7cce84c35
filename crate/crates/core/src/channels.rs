//! Motion-channel extraction from landmark bundles.
//!
//! Four channels are derived per frame: speech (mouth aspect ratio), gaze
//! (iris position inside the eye box, averaged over both eyes), blink
//! (negated eye aspect ratio, so closures are positive peaks) and pose (six
//! upper-body features). Every value is a ratio of landmark differences or an
//! angle, except the wrist heights which are plain coordinate differences.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::landmarks::{face_idx, pose_idx, LandmarkBundle, LandmarkPoint};

/// Extents below this are treated as corrupt geometry.
pub const MIN_EXTENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Speech,
    Gaze,
    Blink,
    Pose,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Speech,
        Channel::Gaze,
        Channel::Blink,
        Channel::Pose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Speech => "speech",
            Channel::Gaze => "gaze",
            Channel::Blink => "blink",
            Channel::Pose => "pose",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "speech" => Ok(Channel::Speech),
            "gaze" => Ok(Channel::Gaze),
            "blink" => Ok(Channel::Blink),
            "pose" => Ok(Channel::Pose),
            other => Err(format!(
                "unknown channel '{other}' (expected speech, gaze, blink or pose)"
            )),
        }
    }
}

/// Processing stage of a signal. Stages only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Interpolated,
    Smoothed,
    Normalized,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Raw,
        Stage::Interpolated,
        Stage::Smoothed,
        Stage::Normalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Interpolated => "interpolated",
            Stage::Smoothed => "smoothed",
            Stage::Normalized => "normalized",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

/// One scalar component of a motion channel over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSignal {
    pub channel: Channel,
    pub component: String,
    pub values: Vec<Option<f64>>,
    pub stage: Stage,
}

impl ChannelSignal {
    pub fn raw(channel: Channel, component: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            channel,
            component: component.into(),
            values,
            stage: Stage::Raw,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.values.len() as f64
        }
    }

    /// All values, if none are missing.
    pub fn dense(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// A copy carrying `values` at `stage`.
    pub fn with_values(&self, values: Vec<f64>, stage: Stage) -> Self {
        Self {
            channel: self.channel,
            component: self.component.clone(),
            values: values.into_iter().map(Some).collect(),
            stage,
        }
    }
}

/// A frame whose landmarks could not produce a value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateGeometry {
    pub frame_index: usize,
    pub component: String,
    pub reason: String,
}

/// Extracted signals plus the degenerate frames that were set missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    pub signals: T,
    pub warnings: Vec<DegenerateGeometry>,
}

type FrameResult<T> = Result<T, &'static str>;

fn checked_extent(extent: f64, what: &'static str) -> FrameResult<f64> {
    if extent.abs() < MIN_EXTENT {
        Err(what)
    } else {
        Ok(extent)
    }
}

/// Mouth aspect ratio: mean lip-pair separation over mouth width.
pub fn mouth_aspect_ratio(face: &[LandmarkPoint]) -> FrameResult<f64> {
    let width = checked_extent(
        face[face_idx::MOUTH_LEFT_CORNER].distance(face[face_idx::MOUTH_RIGHT_CORNER]),
        "mouth width below 1e-9",
    )?;
    let separation: f64 = face_idx::LIP_PAIRS
        .iter()
        .map(|&(up, down)| face[up].distance(face[down]))
        .sum::<f64>()
        / 4.0;
    Ok(separation / width)
}

struct EyeBox {
    iris: usize,
    start: usize,
    end: usize,
    upper: usize,
    lower: usize,
}

// `start`/`end` order both eyes the same way along the image x axis so that
// averaging the two eyes keeps horizontal gaze instead of cancelling it.
const RIGHT_EYE: EyeBox = EyeBox {
    iris: face_idx::RIGHT_IRIS_CENTER,
    start: face_idx::RIGHT_EYE_CORNER_A,
    end: face_idx::RIGHT_EYE_CORNER_B,
    upper: face_idx::RIGHT_EYE_UPPER_LID,
    lower: face_idx::RIGHT_EYE_LOWER_LID,
};

const LEFT_EYE: EyeBox = EyeBox {
    iris: face_idx::LEFT_IRIS_CENTER,
    start: face_idx::LEFT_EYE_CORNER_A,
    end: face_idx::LEFT_EYE_CORNER_B,
    upper: face_idx::LEFT_EYE_UPPER_LID,
    lower: face_idx::LEFT_EYE_LOWER_LID,
};

fn eye_gaze(face: &[LandmarkPoint], eye: &EyeBox) -> FrameResult<(f64, f64)> {
    let iris = face[eye.iris];
    let x0 = face[eye.start].x;
    let y0 = face[eye.upper].y;
    let width = checked_extent(face[eye.end].x - x0, "eye horizontal extent below 1e-9")?;
    let height = checked_extent(face[eye.lower].y - y0, "eye vertical extent below 1e-9")?;
    Ok((
        2.0 * (iris.x - x0) / width - 1.0,
        2.0 * (iris.y - y0) / height - 1.0,
    ))
}

/// Normalized iris position `(g_x, g_y)` in `[-1, 1]²`, averaged over both eyes.
pub fn gaze_vector(face: &[LandmarkPoint]) -> FrameResult<(f64, f64)> {
    let (rx, ry) = eye_gaze(face, &RIGHT_EYE)?;
    let (lx, ly) = eye_gaze(face, &LEFT_EYE)?;
    Ok((0.5 * (rx + lx), 0.5 * (ry + ly)))
}

/// Negated mean eye aspect ratio of both eyes.
pub fn blink_value(face: &[LandmarkPoint]) -> FrameResult<f64> {
    let ratio = |upper: usize, lower: usize, a: usize, b: usize| -> FrameResult<f64> {
        let width = checked_extent(face[a].distance(face[b]), "eye width below 1e-9")?;
        Ok(face[upper].distance(face[lower]) / width)
    };
    let right = ratio(
        face_idx::RIGHT_EYE_UPPER_LID,
        face_idx::RIGHT_EYE_LOWER_LID,
        face_idx::RIGHT_EYE_CORNER_A,
        face_idx::RIGHT_EYE_CORNER_B,
    )?;
    let left = ratio(
        face_idx::LEFT_EYE_UPPER_LID,
        face_idx::LEFT_EYE_LOWER_LID,
        face_idx::LEFT_EYE_CORNER_B,
        face_idx::LEFT_EYE_CORNER_A,
    )?;
    Ok(-0.5 * (right + left))
}

fn vector_angle(v: LandmarkPoint, what: &'static str) -> FrameResult<f64> {
    checked_extent(v.norm(), what)?;
    Ok(v.y.atan2(v.x))
}

/// Interior angle at `joint` in `[0, π]`.
fn joint_angle(a: LandmarkPoint, joint: LandmarkPoint, b: LandmarkPoint) -> FrameResult<f64> {
    let u = a - joint;
    let v = b - joint;
    checked_extent(u.norm(), "upper arm length below 1e-9")?;
    checked_extent(v.norm(), "forearm length below 1e-9")?;
    let cross = u.x * v.y - u.y * v.x;
    let dot = u.x * v.x + u.y * v.y;
    Ok(cross.abs().atan2(dot))
}

pub const POSE_COMPONENTS: [&str; 6] = [
    "shoulder_angle",
    "torso_angle",
    "left_elbow_angle",
    "right_elbow_angle",
    "left_wrist_height",
    "right_wrist_height",
];

/// The six pose features for one frame, in [`POSE_COMPONENTS`] order.
pub fn pose_features(pose: &[LandmarkPoint]) -> [FrameResult<f64>; 6] {
    use pose_idx::*;
    let ls = pose[LEFT_SHOULDER];
    let rs = pose[RIGHT_SHOULDER];
    let shoulder_mid = ls.midpoint(rs);
    let hip_mid = pose[LEFT_HIP].midpoint(pose[RIGHT_HIP]);
    [
        vector_angle(rs - ls, "shoulder span below 1e-9"),
        vector_angle(hip_mid - shoulder_mid, "torso length below 1e-9"),
        joint_angle(ls, pose[LEFT_ELBOW], pose[LEFT_WRIST]),
        joint_angle(rs, pose[RIGHT_ELBOW], pose[RIGHT_WRIST]),
        Ok(ls.y - pose[LEFT_WRIST].y),
        Ok(rs.y - pose[RIGHT_WRIST].y),
    ]
}

/// Removes ±2π jumps between consecutive valid samples. Missing samples are skipped.
pub fn unwrap_angles(values: &mut [Option<f64>]) {
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for v in values.iter_mut().flatten() {
        let raw = *v;
        if let Some(p) = prev {
            let jump = raw - p;
            if jump.abs() > PI {
                offset -= TAU * (jump / TAU).round();
            }
        }
        prev = Some(raw);
        *v = raw + offset;
    }
}

fn face_component<T: Copy>(
    bundle: &LandmarkBundle,
    component: &str,
    f: impl Fn(&[LandmarkPoint]) -> FrameResult<T>,
    warnings: &mut Vec<DegenerateGeometry>,
) -> Vec<Option<T>> {
    bundle
        .frames
        .iter()
        .map(|frame| {
            let face = frame.face.as_deref()?;
            match f(face) {
                Ok(v) => Some(v),
                Err(reason) => {
                    warnings.push(DegenerateGeometry {
                        frame_index: frame.frame_index,
                        component: component.to_string(),
                        reason: reason.to_string(),
                    });
                    None
                }
            }
        })
        .collect()
}

pub fn speech_signal(bundle: &LandmarkBundle) -> Extraction<ChannelSignal> {
    let mut warnings = Vec::new();
    let values = face_component(bundle, "mar", mouth_aspect_ratio, &mut warnings);
    Extraction {
        signals: ChannelSignal::raw(Channel::Speech, "mar", values),
        warnings,
    }
}

pub fn gaze_signal(bundle: &LandmarkBundle) -> Extraction<(ChannelSignal, ChannelSignal)> {
    let mut warnings = Vec::new();
    let pairs = face_component(bundle, "gaze", gaze_vector, &mut warnings);
    let xs = pairs.iter().map(|p| p.map(|(x, _)| x)).collect();
    let ys = pairs.iter().map(|p| p.map(|(_, y)| y)).collect();
    Extraction {
        signals: (
            ChannelSignal::raw(Channel::Gaze, "gaze_x", xs),
            ChannelSignal::raw(Channel::Gaze, "gaze_y", ys),
        ),
        warnings,
    }
}

pub fn blink_signal(bundle: &LandmarkBundle) -> Extraction<ChannelSignal> {
    let mut warnings = Vec::new();
    let values = face_component(bundle, "blink", blink_value, &mut warnings);
    Extraction {
        signals: ChannelSignal::raw(Channel::Blink, "blink", values),
        warnings,
    }
}

/// Six pose series. The two orientation angles are unwrapped.
pub fn pose_signals(bundle: &LandmarkBundle) -> Extraction<[ChannelSignal; 6]> {
    let mut warnings = Vec::new();
    let mut columns: [Vec<Option<f64>>; 6] = Default::default();
    for frame in &bundle.frames {
        match frame.pose.as_deref() {
            None => columns.iter_mut().for_each(|c| c.push(None)),
            Some(pose) => {
                for (k, feature) in pose_features(pose).into_iter().enumerate() {
                    match feature {
                        Ok(v) => columns[k].push(Some(v)),
                        Err(reason) => {
                            warnings.push(DegenerateGeometry {
                                frame_index: frame.frame_index,
                                component: POSE_COMPONENTS[k].to_string(),
                                reason: reason.to_string(),
                            });
                            columns[k].push(None);
                        }
                    }
                }
            }
        }
    }
    unwrap_angles(&mut columns[0]);
    unwrap_angles(&mut columns[1]);
    let mut it = columns.into_iter().enumerate();
    let signals = std::array::from_fn(|_| {
        let (k, values) = it.next().expect("six columns");
        ChannelSignal::raw(Channel::Pose, POSE_COMPONENTS[k], values)
    });
    Extraction { signals, warnings }
}

/// All ten component signals of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub speech: ChannelSignal,
    pub gaze: [ChannelSignal; 2],
    pub blink: ChannelSignal,
    pub pose: [ChannelSignal; 6],
}

impl ChannelSet {
    pub fn extract(bundle: &LandmarkBundle) -> Extraction<ChannelSet> {
        let speech = speech_signal(bundle);
        let gaze = gaze_signal(bundle);
        let blink = blink_signal(bundle);
        let pose = pose_signals(bundle);
        let mut warnings = speech.warnings;
        warnings.extend(gaze.warnings);
        warnings.extend(blink.warnings);
        warnings.extend(pose.warnings);
        Extraction {
            signals: ChannelSet {
                speech: speech.signals,
                gaze: [gaze.signals.0, gaze.signals.1],
                blink: blink.signals,
                pose: pose.signals,
            },
            warnings,
        }
    }

    pub fn channel(&self, channel: Channel) -> &[ChannelSignal] {
        match channel {
            Channel::Speech => std::slice::from_ref(&self.speech),
            Channel::Gaze => &self.gaze,
            Channel::Blink => std::slice::from_ref(&self.blink),
            Channel::Pose => &self.pose,
        }
    }

    /// Components in canonical order: speech, gaze x/y, blink, six pose features.
    pub fn components(&self) -> impl Iterator<Item = &ChannelSignal> {
        Channel::ALL
            .into_iter()
            .flat_map(|c| self.channel(c).iter())
    }

    pub fn frame_count(&self) -> usize {
        self.speech.len()
    }

    /// Applies `f` to every component, short-circuiting on the first error.
    pub fn try_map<E>(
        &self,
        mut f: impl FnMut(&ChannelSignal) -> Result<ChannelSignal, E>,
    ) -> Result<ChannelSet, E> {
        let gaze = [f(&self.gaze[0])?, f(&self.gaze[1])?];
        let speech = f(&self.speech)?;
        let blink = f(&self.blink)?;
        let mut pose = Vec::with_capacity(6);
        for p in &self.pose {
            pose.push(f(p)?);
        }
        Ok(ChannelSet {
            speech,
            gaze,
            blink,
            pose: pose.try_into().expect("six pose components"),
        })
    }
}

/// Writes `(frame_index, channel, component, value, missing_flag)` rows.
/// Missing values are written as empty cells with `missing_flag = 1`.
pub fn write_channel_dump<W: Write>(set: &ChannelSet, writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "frame_index",
        "channel",
        "component",
        "value",
        "missing_flag",
    ])?;
    for signal in set.components() {
        for (i, v) in signal.values.iter().enumerate() {
            let (value, flag) = match v {
                Some(x) => (x.to_string(), "0"),
                None => (String::new(), "1"),
            };
            out.write_record([
                i.to_string().as_str(),
                signal.channel.name(),
                &signal.component,
                &value,
                flag,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
