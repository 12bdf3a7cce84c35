//! Signal conditioning and zero-lag correlation.
//!
//! Every component signal goes through the same chain before it is
//! correlated: gap interpolation, Savitzky-Golay smoothing and z-score
//! normalization. Correlation is the plain Pearson coefficient at lag 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelSignal, Stage};

/// Below this population variance a series is treated as constant.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    /// Savitzky-Golay window length (odd).
    pub sg_window: usize,
    /// Savitzky-Golay polynomial order (< window).
    pub sg_order: usize,
    /// Denominator guard in the z-score.
    pub z_epsilon: f64,
    /// Minimum fraction of valid samples needed to interpolate a signal.
    pub min_valid_fraction: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sg_window: 9,
            sg_order: 2,
            z_epsilon: 1e-6,
            min_valid_fraction: 0.5,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.sg_window == 0 || self.sg_window.is_multiple_of(2) {
            return Err(DspError::InvalidConfig(format!(
                "sg_window must be odd and positive, got {}",
                self.sg_window
            )));
        }
        if self.sg_order >= self.sg_window {
            return Err(DspError::InvalidConfig(format!(
                "sg_order {} must be below sg_window {}",
                self.sg_order, self.sg_window
            )));
        }
        if !(self.z_epsilon.is_finite() && self.z_epsilon > 0.0) {
            return Err(DspError::InvalidConfig(format!(
                "z_epsilon must be positive, got {}",
                self.z_epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(DspError::InvalidConfig(format!(
                "min_valid_fraction must lie in [0, 1], got {}",
                self.min_valid_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("invalid dsp config: {0}")]
    InvalidConfig(String),
    #[error("{component}: expected stage {expected}, found {found}")]
    Stage {
        component: String,
        expected: Stage,
        found: Stage,
    },
    #[error("{component}: only {valid_fraction:.3} of samples valid, need {required:.3}")]
    TooSparse {
        component: String,
        valid_fraction: f64,
        required: f64,
    },
    #[error("{component}: contains missing samples")]
    HasGaps { component: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 samples, got {0}")]
    TooShort(usize),
}

fn expect_stage(signal: &ChannelSignal, expected: Stage) -> Result<(), DspError> {
    if signal.stage != expected {
        return Err(DspError::Stage {
            component: signal.component.clone(),
            expected,
            found: signal.stage,
        });
    }
    Ok(())
}

fn dense(signal: &ChannelSignal) -> Result<Vec<f64>, DspError> {
    signal.dense().ok_or_else(|| DspError::HasGaps {
        component: signal.component.clone(),
    })
}

/// Fills missing samples: linear between valid neighbours, nearest-value
/// extension at the ends. `None` if there is no valid sample at all.
pub fn fill_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let valid: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (&first, &last) = (valid.first()?, valid.last()?);
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    let at = |i: usize| values[i].expect("valid index");
    out.extend(std::iter::repeat_n(at(first), first));
    for w in valid.windows(2) {
        let (i0, i1) = (w[0], w[1]);
        let (y0, y1) = (at(i0), at(i1));
        out.push(y0);
        let span = (i1 - i0) as f64;
        for i in i0 + 1..i1 {
            let frac = (i - i0) as f64 / span;
            out.push(y0 + frac * (y1 - y0));
        }
    }
    out.push(at(last));
    out.extend(std::iter::repeat_n(at(last), values.len() - last - 1));
    Some(out)
}

pub fn interpolate_gaps(
    signal: &ChannelSignal,
    cfg: &DspConfig,
) -> Result<ChannelSignal, DspError> {
    expect_stage(signal, Stage::Raw)?;
    let valid_fraction = signal.valid_fraction();
    let too_sparse = || DspError::TooSparse {
        component: signal.component.clone(),
        valid_fraction,
        required: cfg.min_valid_fraction,
    };
    if valid_fraction < cfg.min_valid_fraction {
        return Err(too_sparse());
    }
    let filled = fill_gaps(&signal.values).ok_or_else(too_sparse)?;
    Ok(signal.with_values(filled, Stage::Interpolated))
}

/// Savitzky-Golay smoother with precomputed least-squares weights.
///
/// Interior samples use the centred window. The first and last `window / 2`
/// samples are read off the polynomial fitted to the first and last full
/// windows, so any polynomial of degree `<= order` passes through unchanged
/// everywhere, edges included.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    /// `weights[p]` evaluates the window fit at offset `p` in `0..window`.
    weights: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, order: usize) -> Self {
        assert!(window % 2 == 1, "window must be odd");
        let order = order.min(window - 1);
        let half = (window / 2) as f64;
        let scale = if half > 0.0 { half } else { 1.0 };
        let cols = order + 1;
        let powers = |p: usize| -> Vec<f64> {
            let x = (p as f64 - half) / scale;
            std::iter::successors(Some(1.0), |v| Some(v * x))
                .take(cols)
                .collect()
        };
        let design = DMatrix::from_fn(window, cols, |r, c| powers(r)[c]);
        let pinv = design
            .pseudo_inverse(1e-14)
            .expect("Vandermonde design with distinct nodes has full column rank");
        let weights = (0..window)
            .map(|p| {
                let v = powers(p);
                (0..window)
                    .map(|k| (0..cols).map(|c| v[c] * pinv[(c, k)]).sum())
                    .collect()
            })
            .collect();
        Self { window, weights }
    }

    /// Window and order actually used for a series of length `len`: the window
    /// shrinks to the largest odd length that fits.
    pub fn effective(len: usize, window: usize, order: usize) -> (usize, usize) {
        let mut w = window.min(len.max(1));
        if w.is_multiple_of(2) {
            w -= 1;
        }
        (w, order.min(w - 1))
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let w = self.window;
        assert!(n >= w, "series shorter than window");
        if w == 1 {
            return values.to_vec();
        }
        let half = w / 2;
        let dot = |start: usize, p: usize| -> f64 {
            self.weights[p]
                .iter()
                .zip(&values[start..start + w])
                .map(|(c, y)| c * y)
                .sum()
        };
        (0..n)
            .map(|i| {
                if i < half {
                    dot(0, i)
                } else if i + half >= n {
                    dot(n - w, i + w - n)
                } else {
                    dot(i - half, half)
                }
            })
            .collect()
    }
}

/// Smooths a dense series, shrinking the window for short inputs.
pub fn smooth(values: &[f64], window: usize, order: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (w, k) = SavitzkyGolay::effective(values.len(), window, order);
    SavitzkyGolay::new(w, k).apply(values)
}

pub fn savitzky_golay(signal: &ChannelSignal, cfg: &DspConfig) -> Result<ChannelSignal, DspError> {
    expect_stage(signal, Stage::Interpolated)?;
    let values = dense(signal)?;
    Ok(signal.with_values(
        smooth(&values, cfg.sg_window, cfg.sg_order),
        Stage::Smoothed,
    ))
}

/// Population mean and standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(x - mean) / (std + eps)` with the population standard deviation.
pub fn zscore(values: &[f64], eps: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, std) = moments(values);
    let denom = std + eps;
    values.iter().map(|v| (v - mean) / denom).collect()
}

pub fn z_normalize(signal: &ChannelSignal, cfg: &DspConfig) -> Result<ChannelSignal, DspError> {
    expect_stage(signal, Stage::Smoothed)?;
    let values = dense(signal)?;
    Ok(signal.with_values(zscore(&values, cfg.z_epsilon), Stage::Normalized))
}

/// Pearson coefficient at zero lag; 0 when either series is (near) constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, DspError> {
    if a.len() != b.len() {
        return Err(DspError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(DspError::TooShort(a.len()));
    }
    let (ma, _) = moments(a);
    let (mb, _) = moments(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let n = a.len() as f64;
    if saa / n < MIN_VARIANCE || sbb / n < MIN_VARIANCE {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_zero_lag(a: &ChannelSignal, b: &ChannelSignal) -> Result<f64, DspError> {
    expect_stage(a, Stage::Normalized)?;
    expect_stage(b, Stage::Normalized)?;
    pearson(&dense(a)?, &dense(b)?)
}

/// Runs a raw signal through the whole chain, returning every stage in order.
pub fn process_stages(
    signal: &ChannelSignal,
    cfg: &DspConfig,
) -> Result<[ChannelSignal; 4], DspError> {
    let interpolated = interpolate_gaps(signal, cfg)?;
    let smoothed = savitzky_golay(&interpolated, cfg)?;
    let normalized = z_normalize(&smoothed, cfg)?;
    Ok([signal.clone(), interpolated, smoothed, normalized])
}

/// Runs a raw signal through the whole chain.
pub fn process(signal: &ChannelSignal, cfg: &DspConfig) -> Result<ChannelSignal, DspError> {
    let [_, _, _, normalized] = process_stages(signal, cfg)?;
    Ok(normalized)
}
