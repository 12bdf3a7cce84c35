//! Pair scoring and training-set curation.
//!
//! Each pair is reduced to four channel correlations between its source and
//! edited views. Their convex combination is the synchronization score used
//! to rank pairs; the ranking feeds a manifest builder that reproduces the
//! filtered 3:1 edited/identical mix and the baseline compositions used in
//! ablations.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::channels::{Channel, ChannelSet, Stage};
use crate::dsp::{self, DspConfig, DspError};
use crate::landmarks::{detection_coverage, PairKind, PairRecord, Subsystem, View};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("cannot drop {0}: every remaining weight would be zero")]
    InvalidDrop(Channel),
    #[error("channel sets differ in frame count ({left} vs {right})")]
    FrameCountMismatch { left: usize, right: usize },
    #[error("{component} is at stage {found}, correlation needs normalized signals")]
    NotNormalized { component: String, found: Stage },
    #[error(transparent)]
    Coverage(#[from] DspError),
    #[error("insufficient pairs for {composition} manifest: {}", format_shortfalls(.shortfalls))]
    InsufficientPairs {
        composition: Composition,
        shortfalls: Vec<Shortfall>,
    },
    #[error("invalid ratio '{0}' (expected A:B with non-negative integers, not both zero)")]
    InvalidRatio(String),
}

/// Per-pool deficit reported by [`CurationError::InsufficientPairs`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub pool: String,
    pub needed: usize,
    pub available: usize,
}

fn format_shortfalls(s: &[Shortfall]) -> String {
    s.iter()
        .map(|s| {
            format!(
                "{} needs {} but only {} available (short {})",
                s.pool,
                s.needed,
                s.available,
                s.needed - s.available
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Channel weights of the synchronization score. Always normalized to sum 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoringWeights {
    pub speech: f64,
    pub gaze: f64,
    pub blink: f64,
    pub pose: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            speech: 0.40,
            gaze: 0.30,
            blink: 0.15,
            pose: 0.15,
        }
    }
}

impl ScoringWeights {
    /// Builds weights from non-negative relative values, rescaled to sum 1.
    pub fn new(speech: f64, gaze: f64, blink: f64, pose: f64) -> Result<Self, CurationError> {
        let raw = [speech, gaze, blink, pose];
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CurationError::InvalidWeights(format!(
                "weights must be finite and non-negative, got {raw:?}"
            )));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(CurationError::InvalidWeights("weights sum to zero".into()));
        }
        // Already-normalized input is kept verbatim so that re-loading an
        // echoed config reproduces the same bits.
        if (total - 1.0).abs() <= 1e-12 {
            return Ok(Self {
                speech,
                gaze,
                blink,
                pose,
            });
        }
        Ok(Self {
            speech: speech / total,
            gaze: gaze / total,
            blink: blink / total,
            pose: pose / total,
        })
    }

    pub fn from_array(w: [f64; 4]) -> Result<Self, CurationError> {
        Self::new(w[0], w[1], w[2], w[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.speech, self.gaze, self.blink, self.pose]
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Speech => self.speech,
            Channel::Gaze => self.gaze,
            Channel::Blink => self.blink,
            Channel::Pose => self.pose,
        }
    }
}

impl<'de> Deserialize<'de> for ScoringWeights {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            speech: f64,
            gaze: f64,
            blink: f64,
            pose: f64,
        }
        let r = Raw::deserialize(d)?;
        ScoringWeights::new(r.speech, r.gaze, r.blink, r.pose).map_err(serde::de::Error::custom)
    }
}

impl FromStr for ScoringWeights {
    type Err = CurationError;

    /// Parses `s,g,b,p`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CurationError::InvalidWeights(format!("'{s}': {e}")))?;
        let arr: [f64; 4] = parts.try_into().map_err(|_| {
            CurationError::InvalidWeights(format!("'{s}': expected four comma-separated values"))
        })?;
        Self::from_array(arr)
    }
}

/// Zeroes one channel's weight and renormalizes the rest.
pub fn leave_one_out_weights(
    base: &ScoringWeights,
    drop: Channel,
) -> Result<ScoringWeights, CurationError> {
    let mut w = base.as_array();
    let idx = Channel::ALL
        .iter()
        .position(|&c| c == drop)
        .expect("channel in ALL");
    w[idx] = 0.0;
    if w.iter().all(|&v| v == 0.0) {
        return Err(CurationError::InvalidDrop(drop));
    }
    ScoringWeights::from_array(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCorrelations {
    pub speech: f64,
    pub gaze: f64,
    pub blink: f64,
    pub pose: f64,
}

impl ChannelCorrelations {
    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Speech => self.speech,
            Channel::Gaze => self.gaze,
            Channel::Blink => self.blink,
            Channel::Pose => self.pose,
        }
    }

    pub fn weighted(&self, weights: &ScoringWeights) -> f64 {
        weights.speech * self.speech
            + weights.gaze * self.gaze
            + weights.blink * self.blink
            + weights.pose * self.pose
    }
}

/// Correlation of one channel between two normalized channel sets. Multi-
/// component channels (gaze, pose) average their component correlations.
pub fn channel_correlation(
    a: &ChannelSet,
    b: &ChannelSet,
    channel: Channel,
) -> Result<f64, CurationError> {
    if a.frame_count() != b.frame_count() {
        return Err(CurationError::FrameCountMismatch {
            left: a.frame_count(),
            right: b.frame_count(),
        });
    }
    let (ca, cb) = (a.channel(channel), b.channel(channel));
    let mut total = 0.0;
    for (sa, sb) in ca.iter().zip(cb) {
        for s in [sa, sb] {
            if s.stage != Stage::Normalized {
                return Err(CurationError::NotNormalized {
                    component: s.component.clone(),
                    found: s.stage,
                });
            }
        }
        total += dsp::pearson_zero_lag(sa, sb)?;
    }
    Ok(total / ca.len() as f64)
}

pub fn correlate_sets(
    a: &ChannelSet,
    b: &ChannelSet,
) -> Result<ChannelCorrelations, CurationError> {
    Ok(ChannelCorrelations {
        speech: channel_correlation(a, b, Channel::Speech)?,
        gaze: channel_correlation(a, b, Channel::Gaze)?,
        blink: channel_correlation(a, b, Channel::Blink)?,
        pose: channel_correlation(a, b, Channel::Pose)?,
    })
}

/// Why a pair was excluded from ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscardReason {
    DetectionCoverage {
        view: View,
        subsystem: Subsystem,
        coverage: f64,
        required: f64,
    },
    SparseSignal {
        view: View,
        component: String,
        valid_fraction: f64,
        required: f64,
    },
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::DetectionCoverage {
                view,
                subsystem,
                coverage,
                required,
            } => {
                write!(
                    f,
                    "{view} {subsystem} coverage {coverage:.3} < {required:.3}"
                )
            }
            DiscardReason::SparseSignal {
                view,
                component,
                valid_fraction,
                required,
            } => {
                write!(
                    f,
                    "{view} {component} valid fraction {valid_fraction:.3} < {required:.3}"
                )
            }
        }
    }
}

/// Both views of a pair taken through extraction and the DSP chain.
#[derive(Debug, Clone)]
pub struct ProcessedPair {
    pub source: ChannelSet,
    pub edited: ChannelSet,
    pub degenerate_frames: usize,
}

/// Extracts and conditions both views, failing with the first coverage problem.
pub fn process_pair(
    pair: &PairRecord,
    dsp_cfg: &DspConfig,
) -> Result<ProcessedPair, DiscardReason> {
    let mut degenerate_frames = 0;
    let mut run = |view: View| -> Result<ChannelSet, DiscardReason> {
        let bundle = match view {
            View::Source => &pair.source,
            View::Edited => &pair.edited,
        };
        let extraction = ChannelSet::extract(bundle);
        degenerate_frames += extraction.warnings.len();
        extraction.signals.try_map(|s| {
            dsp::process(s, dsp_cfg).map_err(|e| match e {
                DspError::TooSparse {
                    component,
                    valid_fraction,
                    required,
                } => DiscardReason::SparseSignal {
                    view,
                    component,
                    valid_fraction,
                    required,
                },
                other => unreachable!("raw extracted signals only fail on coverage: {other}"),
            })
        })
    };
    let source = run(View::Source)?;
    let edited = run(View::Edited)?;
    Ok(ProcessedPair {
        source,
        edited,
        degenerate_frames,
    })
}

/// Correlations between the two views of a pair, as reported for evaluation.
pub fn pair_correlations(
    pair: &PairRecord,
    dsp_cfg: &DspConfig,
) -> Result<ChannelCorrelations, DiscardReason> {
    let p = process_pair(pair, dsp_cfg)?;
    Ok(correlate_sets(&p.source, &p.edited)
        .expect("processed sets are normalized and frame-aligned"))
}

/// Scoring result for one pair. Correlations and score are `None` when discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair_id: String,
    pub kind: PairKind,
    pub speech_corr: Option<f64>,
    pub gaze_corr: Option<f64>,
    pub blink_corr: Option<f64>,
    pub pose_corr: Option<f64>,
    pub sync_score: Option<f64>,
    pub coverage_face: f64,
    pub coverage_pose: f64,
    pub degenerate_frames: usize,
    pub discarded: bool,
    pub discard_reason: Option<DiscardReason>,
}

impl PairScore {
    pub fn correlations(&self) -> Option<ChannelCorrelations> {
        Some(ChannelCorrelations {
            speech: self.speech_corr?,
            gaze: self.gaze_corr?,
            blink: self.blink_corr?,
            pose: self.pose_corr?,
        })
    }

    /// Same pair scored under different weights. Discarded pairs stay discarded.
    pub fn reweighted(&self, weights: &ScoringWeights) -> PairScore {
        PairScore {
            sync_score: self.correlations().map(|c| c.weighted(weights)),
            ..self.clone()
        }
    }
}

/// Scores a pair, gating detection coverage at `dsp_cfg.min_valid_fraction`.
pub fn score_pair(pair: &PairRecord, weights: &ScoringWeights, dsp_cfg: &DspConfig) -> PairScore {
    score_pair_gated(pair, weights, dsp_cfg, dsp_cfg.min_valid_fraction)
}

/// Scores a pair. Any view whose face or pose detection coverage falls below
/// `coverage_threshold`, or any component too sparse to interpolate, discards
/// the whole pair.
pub fn score_pair_gated(
    pair: &PairRecord,
    weights: &ScoringWeights,
    dsp_cfg: &DspConfig,
    coverage_threshold: f64,
) -> PairScore {
    let cov = |s| detection_coverage(&pair.source, s).min(detection_coverage(&pair.edited, s));
    let mut score = PairScore {
        pair_id: pair.pair_id.clone(),
        kind: pair.kind,
        speech_corr: None,
        gaze_corr: None,
        blink_corr: None,
        pose_corr: None,
        sync_score: None,
        coverage_face: cov(Subsystem::Face),
        coverage_pose: cov(Subsystem::Pose),
        degenerate_frames: 0,
        discarded: false,
        discard_reason: None,
    };
    let gate = [View::Source, View::Edited].into_iter().find_map(|view| {
        let bundle = if view == View::Source {
            &pair.source
        } else {
            &pair.edited
        };
        [Subsystem::Face, Subsystem::Pose]
            .into_iter()
            .find_map(|subsystem| {
                let coverage = detection_coverage(bundle, subsystem);
                (coverage < coverage_threshold).then_some(DiscardReason::DetectionCoverage {
                    view,
                    subsystem,
                    coverage,
                    required: coverage_threshold,
                })
            })
    });
    let processed = match gate {
        Some(reason) => Err(reason),
        None => process_pair(pair, dsp_cfg),
    };
    match processed {
        Err(reason) => {
            score.discarded = true;
            score.discard_reason = Some(reason);
        }
        Ok(p) => {
            let c = correlate_sets(&p.source, &p.edited)
                .expect("processed sets are normalized and frame-aligned");
            score.degenerate_frames = p.degenerate_frames;
            score.speech_corr = Some(c.speech);
            score.gaze_corr = Some(c.gaze);
            score.blink_corr = Some(c.blink);
            score.pose_corr = Some(c.pose);
            score.sync_score = Some(c.weighted(weights));
        }
    }
    score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Filtered,
    IdOnly,
    EditOnly,
    Random,
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Composition::Filtered => "filtered",
            Composition::IdOnly => "id_only",
            Composition::EditOnly => "edit_only",
            Composition::Random => "random",
        })
    }
}

impl FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filtered" => Ok(Composition::Filtered),
            "id_only" => Ok(Composition::IdOnly),
            "edit_only" => Ok(Composition::EditOnly),
            "random" => Ok(Composition::Random),
            other => Err(format!(
                "unknown composition '{other}' (expected filtered, id_only, edit_only or random)"
            )),
        }
    }
}

/// Edited-to-identical ratio, written `A:B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub edited: u32,
    pub identical: u32,
}

impl Default for Ratio {
    fn default() -> Self {
        Self {
            edited: 3,
            identical: 1,
        }
    }
}

impl Ratio {
    /// Splits `total` into `(edited, identical)` counts, rounding to nearest.
    pub fn split(&self, total: usize) -> (usize, usize) {
        let (e, i) = (self.edited as usize, self.identical as usize);
        let edited = (total * e + (e + i) / 2) / (e + i);
        (edited, total - edited)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.edited, self.identical)
    }
}

impl FromStr for Ratio {
    type Err = CurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CurationError::InvalidRatio(s.to_string());
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let edited = a.trim().parse().map_err(|_| bad())?;
        let identical = b.trim().parse().map_err(|_| bad())?;
        if edited == 0 && identical == 0 {
            return Err(bad());
        }
        Ok(Self { edited, identical })
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub kind: PairKind,
    pub sync_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationManifest {
    pub composition: Composition,
    pub target_size: usize,
    pub edited_to_identical_ratio: Ratio,
    pub seed: u64,
    pub edited_count: usize,
    pub identical_count: usize,
    pub accepted: Vec<ManifestEntry>,
}

/// Descending score, then ascending pair_id. Unscored entries sort last.
fn rank_order(a: &PairScore, b: &PairScore) -> Ordering {
    match (a.sync_score, b.sync_score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| a.pair_id.cmp(&b.pair_id))
}

/// Non-discarded pairs in rank order.
pub fn rank(scores: &[PairScore]) -> Vec<&PairScore> {
    let mut ranked: Vec<&PairScore> = scores
        .iter()
        .filter(|s| !s.discarded && s.sync_score.is_some())
        .collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    ranked
}

/// Assembles a training manifest from scored pairs.
///
/// `filtered` takes the top-ranked pairs of each kind in the configured
/// ratio; `id_only`/`edit_only` take the top-ranked pairs of one kind;
/// `random` samples uniformly (seeded) from every scored pair, discarded or
/// not, ignoring scores.
pub fn build_manifest(
    scores: &[PairScore],
    target_size: usize,
    ratio: Ratio,
    composition: Composition,
    seed: u64,
) -> Result<CurationManifest, CurationError> {
    let ranked = rank(scores);
    let of_kind = |k: PairKind| ranked.iter().copied().filter(move |s| s.kind == k);
    let pool_name = |k: PairKind| format!("{k} (non-discarded)");

    let mut picked: Vec<&PairScore> = match composition {
        Composition::Filtered | Composition::IdOnly | Composition::EditOnly => {
            let (n_edit, n_ident) = match composition {
                Composition::Filtered => ratio.split(target_size),
                Composition::IdOnly => (0, target_size),
                _ => (target_size, 0),
            };
            let mut shortfalls = Vec::new();
            for (kind, needed) in [
                (PairKind::EditedPair, n_edit),
                (PairKind::IdenticalPair, n_ident),
            ] {
                let available = of_kind(kind).count();
                if needed > available {
                    shortfalls.push(Shortfall {
                        pool: pool_name(kind),
                        needed,
                        available,
                    });
                }
            }
            if !shortfalls.is_empty() {
                return Err(CurationError::InsufficientPairs {
                    composition,
                    shortfalls,
                });
            }
            of_kind(PairKind::EditedPair)
                .take(n_edit)
                .chain(of_kind(PairKind::IdenticalPair).take(n_ident))
                .collect()
        }
        Composition::Random => {
            let mut pool: Vec<&PairScore> = scores.iter().collect();
            pool.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
            if target_size > pool.len() {
                return Err(CurationError::InsufficientPairs {
                    composition,
                    shortfalls: vec![Shortfall {
                        pool: "all pairs".into(),
                        needed: target_size,
                        available: pool.len(),
                    }],
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, pool.len(), target_size)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        }
    };
    picked.sort_by(|a, b| rank_order(a, b));

    let count = |k: PairKind| picked.iter().filter(|s| s.kind == k).count();
    Ok(CurationManifest {
        composition,
        target_size,
        edited_to_identical_ratio: ratio,
        seed,
        edited_count: count(PairKind::EditedPair),
        identical_count: count(PairKind::IdenticalPair),
        accepted: picked
            .into_iter()
            .map(|s| ManifestEntry {
                pair_id: s.pair_id.clone(),
                kind: s.kind,
                sync_score: s.sync_score,
            })
            .collect(),
    })
}
