//! Edit-fidelity and identity metrics over precomputed embeddings, plus the
//! synchronization block of the evaluation table.
//!
//! All metrics are means of cosine similarities, so every reported value lies
//! in `[-1, 1]` and is invariant to rescaling any individual embedding.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{self, ChannelCorrelations, DiscardReason};
use crate::dsp::DspConfig;
use crate::landmarks::PairRecord;

/// Vectors (or vector differences) shorter than this have no direction.
pub const MIN_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingModels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<String>,
}

/// Embeddings for one evaluated pair. `face_edit_frames[t]` is `None` when no
/// face was detected in edited frame `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub pair_id: String,
    #[serde(default)]
    pub models: EmbeddingModels,
    pub src_frames: Vec<Vec<f64>>,
    pub edit_frames: Vec<Vec<f64>>,
    pub key: Vec<f64>,
    pub src_first: Vec<f64>,
    pub face_edit_frames: Vec<Option<Vec<f64>>>,
    pub face_key: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_source: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_target: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("malformed embedding JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("embedding schema violation: {0}")]
    Schema(String),
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
        source: Box<EmbeddingError>,
    },
}

fn schema(msg: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Schema(msg.into())
}

impl EmbeddingBundle {
    pub fn frame_count(&self) -> usize {
        self.edit_frames.len()
    }

    pub fn image_dim(&self) -> usize {
        self.key.len()
    }

    pub fn face_dim(&self) -> usize {
        self.face_key.len()
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.text_source
            .as_ref()
            .or(self.text_target.as_ref())
            .map(Vec::len)
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let t = self.edit_frames.len();
        if t == 0 {
            return Err(schema("bundle has no frames"));
        }
        if self.src_frames.len() != t || self.face_edit_frames.len() != t {
            return Err(schema(format!(
                "frame counts differ: src_frames {}, edit_frames {t}, face_edit_frames {}",
                self.src_frames.len(),
                self.face_edit_frames.len()
            )));
        }
        let d_img = self.image_dim();
        let d_face = self.face_dim();
        if d_img == 0 || d_face == 0 {
            return Err(schema("embedding dimensionality must be positive"));
        }
        let check = |name: &str, v: &[f64], dim: usize| -> Result<(), EmbeddingError> {
            if v.len() != dim {
                return Err(schema(format!(
                    "{name} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(schema(format!("{name} contains non-finite values")));
            }
            Ok(())
        };
        check("key", &self.key, d_img)?;
        check("src_first", &self.src_first, d_img)?;
        for (i, (s, e)) in self.src_frames.iter().zip(&self.edit_frames).enumerate() {
            check(&format!("src_frames[{i}]"), s, d_img)?;
            check(&format!("edit_frames[{i}]"), e, d_img)?;
        }
        check("face_key", &self.face_key, d_face)?;
        for (i, f) in self.face_edit_frames.iter().enumerate() {
            if let Some(f) = f {
                check(&format!("face_edit_frames[{i}]"), f, d_face)?;
            }
        }
        if let Some(d_text) = self.text_dim() {
            for (name, v) in [
                ("text_source", &self.text_source),
                ("text_target", &self.text_target),
            ] {
                if let Some(v) = v {
                    check(name, v, d_text)?;
                }
            }
        }
        Ok(())
    }
}

/// Header of the binary-sidecar variant of the embedding file.
///
/// The sidecar holds row-major float32 values in this order: `src_frames`
/// (T×image), `edit_frames` (T×image), `key`, `src_first`, `face_edit_frames`
/// (T×face, rows of frames listed in `face_missing` are present but ignored),
/// `face_key`, then `text_source` and `text_target` when flagged present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub pair_id: String,
    #[serde(default)]
    pub models: EmbeddingModels,
    pub frames: usize,
    pub dims: EmbeddingDims,
    #[serde(default)]
    pub face_missing: Vec<usize>,
    #[serde(default)]
    pub has_text_source: bool,
    #[serde(default)]
    pub has_text_target: bool,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub image: usize,
    pub face: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    /// Relative to the header file's directory.
    pub path: PathBuf,
    pub dtype: String,
    pub byte_order: String,
}

impl EmbeddingHeader {
    fn expected_floats(&self) -> usize {
        let t = self.frames;
        let text = self.dims.text.unwrap_or(0)
            * (self.has_text_source as usize + self.has_text_target as usize);
        (2 * t + 2) * self.dims.image + (t + 1) * self.dims.face + text
    }

    pub fn decode(&self, payload: &[u8]) -> Result<EmbeddingBundle, EmbeddingError> {
        if self.payload.dtype != "float32" || self.payload.byte_order != "little" {
            return Err(schema(format!(
                "unsupported payload encoding {}/{} (expected float32/little)",
                self.payload.dtype, self.payload.byte_order
            )));
        }
        if (self.has_text_source || self.has_text_target) && self.dims.text.is_none() {
            return Err(schema(
                "text embeddings flagged present but dims.text missing",
            ));
        }
        let expected = self.expected_floats();
        if payload.len() != expected * 4 {
            return Err(schema(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                expected * 4
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        let (t, di, df) = (self.frames, self.dims.image, self.dims.face);
        let src_frames = (0..t).map(|_| take(di)).collect();
        let edit_frames = (0..t).map(|_| take(di)).collect();
        let key = take(di);
        let src_first = take(di);
        if let Some(&bad) = self.face_missing.iter().find(|&&i| i >= t) {
            return Err(schema(format!("face_missing index {bad} out of range")));
        }
        let face_edit_frames = (0..t)
            .map(|i| {
                let row = take(df);
                (!self.face_missing.contains(&i)).then_some(row)
            })
            .collect();
        let face_key = take(df);
        let dt = self.dims.text.unwrap_or(0);
        let text_source = self.has_text_source.then(|| take(dt));
        let text_target = self.has_text_target.then(|| take(dt));
        let bundle = EmbeddingBundle {
            pair_id: self.pair_id.clone(),
            models: self.models.clone(),
            src_frames,
            edit_frames,
            key,
            src_first,
            face_edit_frames,
            face_key,
            text_source,
            text_target,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Encodes `bundle` as a header plus float32 little-endian payload.
pub fn encode_binary(
    bundle: &EmbeddingBundle,
    payload_path: impl Into<PathBuf>,
) -> (EmbeddingHeader, Vec<u8>) {
    let mut bytes = Vec::new();
    let mut put = |v: &[f64]| {
        v.iter()
            .for_each(|&x| bytes.extend_from_slice(&(x as f32).to_le_bytes()))
    };
    bundle.src_frames.iter().for_each(|v| put(v));
    bundle.edit_frames.iter().for_each(|v| put(v));
    put(&bundle.key);
    put(&bundle.src_first);
    let zeros = vec![0.0; bundle.face_dim()];
    for f in &bundle.face_edit_frames {
        put(f.as_deref().unwrap_or(&zeros));
    }
    put(&bundle.face_key);
    if let Some(v) = &bundle.text_source {
        put(v);
    }
    if let Some(v) = &bundle.text_target {
        put(v);
    }
    let header = EmbeddingHeader {
        pair_id: bundle.pair_id.clone(),
        models: bundle.models.clone(),
        frames: bundle.frame_count(),
        dims: EmbeddingDims {
            image: bundle.image_dim(),
            face: bundle.face_dim(),
            text: bundle.text_dim(),
        },
        face_missing: (0..bundle.frame_count())
            .filter(|&i| bundle.face_edit_frames[i].is_none())
            .collect(),
        has_text_source: bundle.text_source.is_some(),
        has_text_target: bundle.text_target.is_some(),
        payload: Payload {
            path: payload_path.into(),
            dtype: "float32".into(),
            byte_order: "little".into(),
        },
    };
    (header, bytes)
}

/// Parses an inline JSON embedding bundle.
pub fn parse_embedding_bundle(bytes: &[u8]) -> Result<EmbeddingBundle, EmbeddingError> {
    let bundle: EmbeddingBundle = serde_json::from_slice(bytes)?;
    bundle.validate()?;
    Ok(bundle)
}

/// Loads either an inline JSON bundle or a header with a binary sidecar.
pub fn load_embedding_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle, EmbeddingError> {
    let path = path.as_ref();
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| EmbeddingError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let wrap = |e: EmbeddingError| EmbeddingError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    };
    let bytes = read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| wrap(e.into()))?;
    if value.get("payload").is_some() {
        let header: EmbeddingHeader = serde_json::from_value(value).map_err(|e| wrap(e.into()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let payload = read(&base.join(&header.payload.path))?;
        header.decode(&payload).map_err(wrap)
    } else {
        let bundle: EmbeddingBundle = serde_json::from_value(value).map_err(|e| wrap(e.into()))?;
        bundle.validate().map_err(wrap)?;
        Ok(bundle)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("global edit direction is undefined (difference norm below 1e-9)")]
    UndefinedDirection,
    #[error("every frame was skipped (edit equals source in all {0} frames)")]
    AllFramesSkipped(usize),
    #[error("required text embeddings are missing")]
    MissingTextEmbeddings,
    #[error("no face detected in any edited frame")]
    NoFacesDetected,
    #[error("{0} has near-zero norm")]
    DegenerateEmbedding(String),
    #[error("text embeddings have dimension {text}, image embeddings {image}")]
    DimensionMismatch { image: usize, text: usize },
}

/// A per-frame mean with the frames it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMean {
    pub score: f64,
    pub frames_used: usize,
    pub frames_skipped: usize,
    /// Per-frame cosine; `None` for skipped frames.
    pub per_frame: Vec<Option<f64>>,
}

impl FrameMean {
    fn from_per_frame(per_frame: Vec<Option<f64>>) -> Option<Self> {
        let used: Vec<f64> = per_frame.iter().flatten().copied().collect();
        if used.is_empty() {
            return None;
        }
        Some(Self {
            score: used.iter().sum::<f64>() / used.len() as f64,
            frames_used: used.len(),
            frames_skipped: per_frame.len() - used.len(),
            per_frame,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n >= MIN_NORM).then(|| v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn direction(to: &[f64], from: &[f64]) -> Option<Vec<f64>> {
    let diff: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
    unit(&diff)
}

fn directional_against(b: &EmbeddingBundle, global: &[f64]) -> Result<FrameMean, MetricError> {
    let per_frame = b
        .edit_frames
        .iter()
        .zip(&b.src_frames)
        .map(|(e, s)| direction(e, s).map(|v| dot(&v, global)))
        .collect();
    FrameMean::from_per_frame(per_frame).ok_or(MetricError::AllFramesSkipped(b.frame_count()))
}

/// Mean cosine between per-frame edit directions and the keyframe edit direction.
pub fn directional_clip_image(b: &EmbeddingBundle) -> Result<FrameMean, MetricError> {
    let d = direction(&b.key, &b.src_first).ok_or(MetricError::UndefinedDirection)?;
    directional_against(b, &d)
}

fn text_pair(b: &EmbeddingBundle) -> Result<(&[f64], &[f64]), MetricError> {
    match (&b.text_source, &b.text_target) {
        (Some(s), Some(t)) => Ok((s, t)),
        _ => Err(MetricError::MissingTextEmbeddings),
    }
}

fn check_text_dim(b: &EmbeddingBundle, text: &[f64]) -> Result<(), MetricError> {
    if text.len() != b.image_dim() {
        return Err(MetricError::DimensionMismatch {
            image: b.image_dim(),
            text: text.len(),
        });
    }
    Ok(())
}

/// Mean cosine between per-frame edit directions and the source→target text direction.
pub fn directional_clip_text_dual(b: &EmbeddingBundle) -> Result<FrameMean, MetricError> {
    let (source, target) = text_pair(b)?;
    check_text_dim(b, target)?;
    let d = direction(target, source).ok_or(MetricError::UndefinedDirection)?;
    directional_against(b, &d)
}

/// Mean cosine between each edited frame and the target text.
pub fn clip_text_align(b: &EmbeddingBundle) -> Result<FrameMean, MetricError> {
    let target = b
        .text_target
        .as_deref()
        .ok_or(MetricError::MissingTextEmbeddings)?;
    check_text_dim(b, target)?;
    let t = unit(target).ok_or_else(|| MetricError::DegenerateEmbedding("text_target".into()))?;
    let per_frame = b
        .edit_frames
        .iter()
        .enumerate()
        .map(|(i, e)| {
            unit(e)
                .map(|e| Some(dot(&e, &t)))
                .ok_or_else(|| MetricError::DegenerateEmbedding(format!("edit_frames[{i}]")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameMean::from_per_frame(per_frame).expect("at least one frame"))
}

/// Mean cosine between each detected edited face and the keyframe face.
pub fn arcface_similarity(b: &EmbeddingBundle) -> Result<FrameMean, MetricError> {
    let key =
        unit(&b.face_key).ok_or_else(|| MetricError::DegenerateEmbedding("face_key".into()))?;
    let per_frame = b
        .face_edit_frames
        .iter()
        .enumerate()
        .map(|(i, f)| match f {
            None => Ok(None),
            Some(f) => unit(f)
                .map(|f| Some(dot(&f, &key)))
                .ok_or_else(|| MetricError::DegenerateEmbedding(format!("face_edit_frames[{i}]"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    FrameMean::from_per_frame(per_frame).ok_or(MetricError::NoFacesDetected)
}

/// Synchronization block: the same channel correlations used for curation.
pub fn eval_sync(pair: &PairRecord, dsp: &DspConfig) -> Result<ChannelCorrelations, DiscardReason> {
    curation::pair_correlations(pair, dsp)
}

/// One table cell: a value or an N/A with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_skipped: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub na_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame: Option<Vec<Option<f64>>>,
}

impl MetricCell {
    pub fn value(v: f64) -> Self {
        Self {
            value: Some(v),
            frames_used: None,
            frames_skipped: None,
            na_reason: None,
            per_frame: None,
        }
    }

    pub fn na(reason: impl Into<String>) -> Self {
        Self {
            value: None,
            frames_used: None,
            frames_skipped: None,
            na_reason: Some(reason.into()),
            per_frame: None,
        }
    }

    fn from_result(r: Result<FrameMean, MetricError>, traces: bool) -> Self {
        match r {
            Ok(m) => Self {
                value: Some(m.score),
                frames_used: Some(m.frames_used),
                frames_skipped: Some(m.frames_skipped),
                na_reason: None,
                per_frame: traces.then_some(m.per_frame),
            },
            Err(e) => Self::na(e.to_string()),
        }
    }
}

/// Embedding-based metrics for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pair_id: String,
    pub directional_clip_image: MetricCell,
    pub directional_clip_text_dual: MetricCell,
    pub clip_text_align: MetricCell,
    pub arcface_sim: MetricCell,
}

pub fn evaluate_embeddings(b: &EmbeddingBundle, traces: bool) -> MetricReport {
    MetricReport {
        pair_id: b.pair_id.clone(),
        directional_clip_image: MetricCell::from_result(directional_clip_image(b), traces),
        directional_clip_text_dual: MetricCell::from_result(directional_clip_text_dual(b), traces),
        clip_text_align: MetricCell::from_result(clip_text_align(b), traces),
        arcface_sim: MetricCell::from_result(arcface_similarity(b), traces),
    }
}

/// Table rows as `(block, row label)`, in presentation order.
pub const TABLE_ROWS: [(&str, &str); 8] = [
    ("Synchronization", "Speech Corr."),
    ("Synchronization", "Gaze Corr."),
    ("Synchronization", "Blink Corr."),
    ("Synchronization", "Pose Corr."),
    ("Edit Fidelity", "Directional CLIP (image)"),
    ("Edit Fidelity", "Directional CLIP (text-dual)"),
    ("Edit Fidelity", "CLIP-Text Align."),
    ("Identity Preservation", "ArcFace Sim."),
];

/// Full evaluation row for one pair, in [`TABLE_ROWS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub pair_id: String,
    pub cells: Vec<MetricCell>,
}

impl PairEvaluation {
    pub fn new(
        pair_id: String,
        sync: Option<Result<ChannelCorrelations, DiscardReason>>,
        metrics: Option<MetricReport>,
    ) -> Self {
        let sync_cells: Vec<MetricCell> = match sync {
            Some(Ok(c)) => [c.speech, c.gaze, c.blink, c.pose]
                .into_iter()
                .map(MetricCell::value)
                .collect(),
            Some(Err(reason)) => (0..4)
                .map(|_| MetricCell::na(format!("discarded: {reason}")))
                .collect(),
            None => (0..4)
                .map(|_| MetricCell::na("no landmark pair supplied"))
                .collect(),
        };
        let metric_cells: Vec<MetricCell> = match metrics {
            Some(m) => vec![
                m.directional_clip_image,
                m.directional_clip_text_dual,
                m.clip_text_align,
                m.arcface_sim,
            ],
            None => (0..4)
                .map(|_| MetricCell::na("no embedding bundle supplied"))
                .collect(),
        };
        Self {
            pair_id,
            cells: sync_cells.into_iter().chain(metric_cells).collect(),
        }
    }
}

/// Unweighted mean over pairs (in pair_id order) of each row, ignoring N/A
/// cells. A row with no values is `None`.
pub fn aggregate(rows: &[PairEvaluation]) -> Vec<Option<f64>> {
    let mut sorted: Vec<&PairEvaluation> = rows.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    (0..TABLE_ROWS.len())
        .map(|r| {
            let vals: Vec<f64> = sorted
                .iter()
                .filter_map(|p| p.cells.get(r).and_then(|c| c.value))
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}
