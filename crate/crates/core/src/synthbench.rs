//! Synthetic landmark pairs with controlled desynchronization.
//!
//! The source view follows smooth parameterized motions: a period-20 mouth
//! cycle, a period-20 eyelid cycle, slow gaze drift and a slow arm/shoulder
//! swing. The edited view replays the same motions delayed by `lag_frames`,
//! then gets Gaussian coordinate noise and whole-frame detection dropout.
//! Only landmarks read by the channel extractors move; every other point is
//! a static filler.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{score_pair, ScoringWeights};
use crate::dsp::DspConfig;
use crate::evalmetrics::{EmbeddingBundle, EmbeddingModels};
use crate::landmarks::{
    face_idx, pose_idx, LandmarkBundle, LandmarkFrame, LandmarkPoint, PairKind, PairRecord, View,
    FACE_POINTS, POSE_POINTS,
};

/// Period (frames) of the mouth and eyelid cycles.
pub const FAST_PERIOD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("ranking fidelity needs at least 10 specs, got {0}")]
    TooFewSpecs(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub fps: f64,
    /// Delay of the edited view; positive means the edited view lags behind.
    pub lag_frames: i64,
    pub noise_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub kind: PairKind,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_frames: 81,
            fps: 20.0,
            lag_frames: 0,
            noise_sigma: 0.0,
            dropout_rate: 0.0,
            seed: 0,
            kind: PairKind::EditedPair,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_frames < 2 {
            return bad(format!(
                "n_frames must be at least 2, got {}",
                self.n_frames
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.lag_frames.unsigned_abs() as usize >= self.n_frames {
            return bad(format!(
                "|lag_frames| {} must be below n_frames {}",
                self.lag_frames, self.n_frames
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }

    pub fn pair_id(&self) -> String {
        let kind = match self.kind {
            PairKind::EditedPair => "e",
            PairKind::IdenticalPair => "i",
        };
        format!("synth-{kind}-s{}-lag{}", self.seed, self.lag_frames)
    }
}

/// Per-seed phases of the generating motions.
#[derive(Debug, Clone, Copy)]
struct Motion {
    phase: [f64; 9],
}

impl Motion {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
        }
    }

    fn wave(&self, k: usize, period: f64, t: f64) -> f64 {
        (TAU * t / period + self.phase[k]).sin()
    }

    /// Lip separation relative to mouth width.
    fn mouth(&self, t: f64) -> f64 {
        0.25 + 0.2 * self.wave(0, FAST_PERIOD, t)
    }

    /// Eye aspect ratio, dipping to 0.05 once per cycle.
    fn eye_ratio(&self, t: f64) -> f64 {
        0.175 + 0.125 * self.wave(1, FAST_PERIOD, t)
    }

    fn gaze(&self, t: f64) -> (f64, f64) {
        (0.4 * self.wave(2, 200.0, t), 0.3 * self.wave(3, 160.0, t))
    }

    fn shoulder_tilt(&self, t: f64) -> f64 {
        0.08 * self.wave(4, 240.0, t)
    }

    fn hip_shift(&self, t: f64) -> f64 {
        0.03 * self.wave(5, 280.0, t)
    }

    fn elbows(&self, t: f64) -> (f64, f64) {
        (
            2.1 + 0.45 * self.wave(6, 324.0, t),
            2.1 + 0.45 * self.wave(7, 324.0, t),
        )
    }
}

const FILLER_FACE: LandmarkPoint = LandmarkPoint::new(0.5, 0.42);
const FILLER_POSE: LandmarkPoint = LandmarkPoint::new(0.5, 0.6);

fn face_at(m: &Motion, t: f64) -> Vec<LandmarkPoint> {
    let mut f = vec![FILLER_FACE; FACE_POINTS];
    let (mouth_y, mouth_w) = (0.55, 0.16);
    f[face_idx::MOUTH_LEFT_CORNER] = LandmarkPoint::new(0.5 - mouth_w / 2.0, mouth_y);
    f[face_idx::MOUTH_RIGHT_CORNER] = LandmarkPoint::new(0.5 + mouth_w / 2.0, mouth_y);
    let sep = m.mouth(t) * mouth_w;
    for (&(up, down), (x, k)) in
        face_idx::LIP_PAIRS
            .iter()
            .zip([(0.5, 1.0), (0.47, 0.8), (0.53, 0.8), (0.5, 1.4)])
    {
        f[up] = LandmarkPoint::new(x, mouth_y - k * sep / 2.0);
        f[down] = LandmarkPoint::new(x, mouth_y + k * sep / 2.0);
    }
    let ear = m.eye_ratio(t);
    let (gx, gy) = m.gaze(t);
    let eye_w = 0.08;
    let eyes = [
        (
            0.42,
            face_idx::RIGHT_EYE_CORNER_A,
            face_idx::RIGHT_EYE_CORNER_B,
            face_idx::RIGHT_EYE_UPPER_LID,
            face_idx::RIGHT_EYE_LOWER_LID,
            face_idx::RIGHT_IRIS_CENTER,
        ),
        (
            0.58,
            face_idx::LEFT_EYE_CORNER_A,
            face_idx::LEFT_EYE_CORNER_B,
            face_idx::LEFT_EYE_UPPER_LID,
            face_idx::LEFT_EYE_LOWER_LID,
            face_idx::LEFT_IRIS_CENTER,
        ),
    ];
    for (cx, a, b, up, down, iris) in eyes {
        let cy = 0.36;
        let half_h = ear * eye_w / 2.0;
        f[a] = LandmarkPoint::new(cx - eye_w / 2.0, cy);
        f[b] = LandmarkPoint::new(cx + eye_w / 2.0, cy);
        f[up] = LandmarkPoint::new(cx, cy - half_h);
        f[down] = LandmarkPoint::new(cx, cy + half_h);
        f[iris] = LandmarkPoint::new(cx + gx * eye_w / 2.0, cy + gy * half_h);
    }
    f
}

fn rotate(v: LandmarkPoint, angle: f64) -> LandmarkPoint {
    let (s, c) = angle.sin_cos();
    LandmarkPoint::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn pose_at(m: &Motion, t: f64) -> Vec<LandmarkPoint> {
    let mut p = vec![FILLER_POSE; POSE_POINTS];
    let mid = LandmarkPoint::new(0.5, 0.72);
    let tilt = m.shoulder_tilt(t);
    let half = LandmarkPoint::new(0.15 * tilt.cos(), 0.15 * tilt.sin());
    // Frontal view: the subject's left side appears on the image right.
    let ls = LandmarkPoint::new(mid.x + half.x, mid.y + half.y);
    let rs = LandmarkPoint::new(mid.x - half.x, mid.y - half.y);
    p[pose_idx::LEFT_SHOULDER] = ls;
    p[pose_idx::RIGHT_SHOULDER] = rs;
    let hip_x = 0.5 + m.hip_shift(t);
    p[pose_idx::LEFT_HIP] = LandmarkPoint::new(hip_x + 0.1, 0.98);
    p[pose_idx::RIGHT_HIP] = LandmarkPoint::new(hip_x - 0.1, 0.98);

    let (alpha_l, alpha_r) = m.elbows(t);
    let splay: f64 = 0.25;
    for (shoulder, outward, alpha, elbow_idx, wrist_idx) in [
        (ls, 1.0, alpha_l, pose_idx::LEFT_ELBOW, pose_idx::LEFT_WRIST),
        (
            rs,
            -1.0,
            alpha_r,
            pose_idx::RIGHT_ELBOW,
            pose_idx::RIGHT_WRIST,
        ),
    ] {
        let elbow = LandmarkPoint::new(
            shoulder.x + outward * 0.14 * splay.sin(),
            shoulder.y + 0.14 * splay.cos(),
        );
        let back = shoulder - elbow;
        let back = LandmarkPoint::new(back.x / back.norm(), back.y / back.norm());
        let fore = rotate(back, outward * alpha);
        p[elbow_idx] = elbow;
        p[wrist_idx] = LandmarkPoint::new(elbow.x + 0.12 * fore.x, elbow.y + 0.12 * fore.y);
    }
    p
}

fn render(m: &Motion, n_frames: usize, delay: f64) -> Vec<LandmarkFrame> {
    (0..n_frames)
        .map(|i| {
            let t = i as f64 - delay;
            LandmarkFrame {
                frame_index: i,
                face: Some(face_at(m, t)),
                pose: Some(pose_at(m, t)),
            }
        })
        .collect()
}

/// Builds the source/edited pair described by `spec`. Pure function of `spec`.
pub fn generate_pair(spec: &SynthSpec) -> Result<PairRecord, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = Motion::sample(&mut rng);
    let video_id = spec.pair_id();
    let source = LandmarkBundle {
        video_id: video_id.clone(),
        view: View::Source,
        fps: spec.fps,
        frames: render(&motion, spec.n_frames, 0.0),
    };
    let mut frames = render(&motion, spec.n_frames, spec.lag_frames as f64);

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for frame in &mut frames {
            for pts in [frame.face.as_mut(), frame.pose.as_mut()]
                .into_iter()
                .flatten()
            {
                for p in pts.iter_mut() {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
        }
    }
    let n_drop = (spec.dropout_rate * spec.n_frames as f64).round() as usize;
    if n_drop > 0 {
        for i in rand::seq::index::sample(&mut rng, spec.n_frames, n_drop) {
            frames[i].face = None;
            frames[i].pose = None;
        }
    }
    let edited = LandmarkBundle {
        video_id,
        view: View::Edited,
        fps: spec.fps,
        frames,
    };
    Ok(PairRecord::new(spec.pair_id(), spec.kind, source, edited)
        .expect("views rendered with equal length"))
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// ranking is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Spearman ρ between |lag| and sync score; 0 when degenerate.
    pub rho: f64,
    pub degenerate: bool,
    pub scored: usize,
    pub discarded: usize,
    /// `(lag_frames, sync_score)` for every non-discarded spec.
    pub points: Vec<(i64, f64)>,
}

pub fn ranking_fidelity(specs: &[SynthSpec]) -> Result<FidelityReport, SynthError> {
    ranking_fidelity_with(specs, &ScoringWeights::default(), &DspConfig::default())
}

/// Scores every spec's pair and rank-correlates |lag| against sync score.
pub fn ranking_fidelity_with(
    specs: &[SynthSpec],
    weights: &ScoringWeights,
    dsp: &DspConfig,
) -> Result<FidelityReport, SynthError> {
    if specs.len() < 10 {
        return Err(SynthError::TooFewSpecs(specs.len()));
    }
    let mut points = Vec::with_capacity(specs.len());
    let mut discarded = 0;
    for spec in specs {
        let pair = generate_pair(spec)?;
        match score_pair(&pair, weights, dsp).sync_score {
            Some(s) => points.push((spec.lag_frames, s)),
            None => discarded += 1,
        }
    }
    let lags: Vec<f64> = points
        .iter()
        .map(|(l, _)| l.unsigned_abs() as f64)
        .collect();
    let scores: Vec<f64> = points.iter().map(|(_, s)| *s).collect();
    let rho = if points.len() >= 2 {
        spearman(&lags, &scores)
    } else {
        None
    };
    Ok(FidelityReport {
        rho: rho.unwrap_or(0.0),
        degenerate: rho.is_none(),
        scored: points.len(),
        discarded,
        points,
    })
}

/// Lags 0..=9 for each of `seeds` seeds at the given noise level.
pub fn standard_suite(seeds: u64, noise_sigma: f64) -> Vec<SynthSpec> {
    (0..seeds)
        .flat_map(|seed| {
            (0..10).map(move |lag| SynthSpec {
                lag_frames: lag,
                noise_sigma,
                seed,
                ..SynthSpec::default()
            })
        })
        .collect()
}

/// Parameters for a synthetic embedding bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSynthSpec {
    pub pair_id: String,
    pub frames: usize,
    pub image_dim: usize,
    pub face_dim: usize,
    /// Magnitude of the edit offset relative to unit-variance embeddings.
    pub edit_strength: f64,
    pub noise_sigma: f64,
    pub face_dropout: f64,
    pub with_text: bool,
    pub seed: u64,
}

impl Default for EmbeddingSynthSpec {
    fn default() -> Self {
        Self {
            pair_id: "synth".into(),
            frames: 81,
            image_dim: 32,
            face_dim: 16,
            edit_strength: 2.0,
            noise_sigma: 0.5,
            face_dropout: 0.0,
            with_text: true,
            seed: 0,
        }
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| std_normal(rng)).collect()
}

/// Random embeddings where each edited frame is its source frame shifted
/// along one edit direction plus noise. Deterministic in `spec`.
pub fn generate_embeddings(spec: &EmbeddingSynthSpec) -> EmbeddingBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dir = gaussian(&mut rng, spec.image_dim);
    let dn = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dir: Vec<f64> = dir.iter().map(|x| x / dn).collect();
    let shifted = |v: &[f64], rng: &mut ChaCha8Rng, noise: f64| -> Vec<f64> {
        v.iter()
            .zip(&dir)
            .map(|(x, d)| x + spec.edit_strength * d + noise * std_normal(rng))
            .collect()
    };
    let n = spec.frames.max(1);
    let src_frames: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, spec.image_dim)).collect();
    let edit_frames = src_frames
        .iter()
        .map(|s| shifted(s, &mut rng, spec.noise_sigma))
        .collect();
    let src_first = src_frames[0].clone();
    let key = shifted(&src_first, &mut rng, 0.0);
    let face_key = gaussian(&mut rng, spec.face_dim);
    let face_edit_frames = (0..n)
        .map(|_| {
            let drop = rng.random::<f64>() < spec.face_dropout;
            let f: Vec<f64> = face_key
                .iter()
                .map(|x| x + spec.noise_sigma * std_normal(&mut rng))
                .collect();
            (!drop).then_some(f)
        })
        .collect();
    let (text_source, text_target) = if spec.with_text {
        let s = gaussian(&mut rng, spec.image_dim);
        let t = shifted(&s, &mut rng, spec.noise_sigma);
        (Some(s), Some(t))
    } else {
        (None, None)
    };
    EmbeddingBundle {
        pair_id: spec.pair_id.clone(),
        models: EmbeddingModels {
            image: Some("synthetic".into()),
            text: spec.with_text.then(|| "synthetic".into()),
            face: Some("synthetic".into()),
        },
        src_frames,
        edit_frames,
        key,
        src_first,
        face_edit_frames,
        face_key,
        text_source,
        text_target,
    }
}
