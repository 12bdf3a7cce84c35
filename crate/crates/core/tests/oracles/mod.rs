//! Independent reference computations written directly from the formulas.
//! Shared by the core integration tests and the acceptance target.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syncurator_core::evalmetrics::{EmbeddingBundle, EmbeddingModels};
use syncurator_core::landmarks::{LandmarkBundle, LandmarkFrame, LandmarkPoint, View};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pt(p: &[LandmarkPoint], i: usize) -> (f64, f64) {
    (p[i].x, p[i].y)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn mar(face: &[LandmarkPoint]) -> f64 {
    let num = dist(pt(face, 13), pt(face, 14))
        + dist(pt(face, 82), pt(face, 87))
        + dist(pt(face, 312), pt(face, 317))
        + dist(pt(face, 0), pt(face, 17));
    num / 4.0 / dist(pt(face, 61), pt(face, 291))
}

pub fn gaze(face: &[LandmarkPoint]) -> (f64, f64) {
    // (iris, start corner, end corner, upper lid, lower lid)
    let eyes = [(468, 33, 133, 159, 145), (473, 362, 263, 386, 374)];
    let mut gx = 0.0;
    let mut gy = 0.0;
    for (iris, start, end, up, low) in eyes {
        let (ix, iy) = pt(face, iris);
        let (sx, _) = pt(face, start);
        let (ex, _) = pt(face, end);
        let (_, uy) = pt(face, up);
        let (_, ly) = pt(face, low);
        gx += 2.0 * (ix - sx) / (ex - sx) - 1.0;
        gy += 2.0 * (iy - uy) / (ly - uy) - 1.0;
    }
    (gx / 2.0, gy / 2.0)
}

pub fn blink(face: &[LandmarkPoint]) -> f64 {
    let ear_r = dist(pt(face, 159), pt(face, 145)) / dist(pt(face, 33), pt(face, 133));
    let ear_l = dist(pt(face, 386), pt(face, 374)) / dist(pt(face, 263), pt(face, 362));
    -(ear_r + ear_l) / 2.0
}

fn angle_between(a: (f64, f64), j: (f64, f64), b: (f64, f64)) -> f64 {
    let u = (a.0 - j.0, a.1 - j.1);
    let v = (b.0 - j.0, b.1 - j.1);
    let c = (u.0 * v.0 + u.1 * v.1) / (dist(a, j) * dist(b, j));
    c.clamp(-1.0, 1.0).acos()
}

/// Per-frame pose features before unwrapping.
pub fn pose(p: &[LandmarkPoint]) -> [f64; 6] {
    let (l, r) = (pt(p, 11), pt(p, 12));
    let sm = ((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0);
    let hm = ((p[23].x + p[24].x) / 2.0, (p[23].y + p[24].y) / 2.0);
    [
        (r.1 - l.1).atan2(r.0 - l.0),
        (hm.1 - sm.1).atan2(hm.0 - sm.0),
        angle_between(l, pt(p, 13), pt(p, 15)),
        angle_between(r, pt(p, 14), pt(p, 16)),
        l.1 - p[15].y,
        r.1 - p[16].y,
    ]
}

/// Removes 2π jumps between consecutive present samples.
pub fn unwrap(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(values.len());
    let mut prev_raw: Option<f64> = None;
    let mut offset = 0.0;
    for v in values {
        match *v {
            None => out.push(None),
            Some(x) => {
                if let Some(p) = prev_raw {
                    let d = x - p;
                    offset -= tau * (d / tau).round();
                }
                prev_raw = Some(x);
                out.push(Some(x + offset));
            }
        }
    }
    out
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<LandmarkPoint> {
    (0..n)
        .map(|_| LandmarkPoint::new(r.random(), r.random()))
        .collect()
}

/// Uniformly random landmark coordinates with occasional missing detections.
pub fn random_bundle(r: &mut ChaCha8Rng, frames: usize, missing: f64) -> LandmarkBundle {
    LandmarkBundle {
        video_id: "rand".into(),
        view: View::Source,
        fps: 20.0,
        frames: (0..frames)
            .map(|i| LandmarkFrame {
                frame_index: i,
                face: (r.random::<f64>() >= missing).then(|| random_points(r, 478)),
                pose: (r.random::<f64>() >= missing).then(|| random_points(r, 33)),
            })
            .collect(),
    }
}

/// Solves the order-`k` least-squares fit of `ys` at abscissae `xs` via the
/// normal equations and returns the polynomial evaluated at `at`.
pub fn lsq_poly_eval(xs: &[f64], ys: &[f64], k: usize, at: f64) -> f64 {
    let m = k + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&x, &y) in xs.iter().zip(ys) {
        for i in 0..m {
            for j in 0..m {
                a[i][j] += x.powi((i + j) as i32);
            }
            a[i][m] += x.powi(i as i32) * y;
        }
    }
    // Gauss-Jordan with partial pivoting.
    for c in 0..m {
        let p = (c..m)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for i in 0..m {
            if i != c {
                let f = a[i][c] / a[c][c];
                for j in c..=m {
                    a[i][j] -= f * a[c][j];
                }
            }
        }
    }
    (0..m).map(|i| a[i][m] / a[i][i] * at.powi(i as i32)).sum()
}

/// Savitzky-Golay by explicit per-window regression. Edge samples use the
/// fit of the first/last full window.
pub fn sg(y: &[f64], w: usize, k: usize) -> Vec<f64> {
    let h = w / 2;
    let n = y.len();
    (0..n)
        .map(|t| {
            let c = t.clamp(h, n - 1 - h);
            let xs: Vec<f64> = (c - h..=c + h).map(|j| j as f64 - c as f64).collect();
            lsq_poly_eval(&xs, &y[c - h..=c + h], k, t as f64 - c as f64)
        })
        .collect()
}

pub fn interpolate(values: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    (0..values.len())
        .map(|i| {
            if let Some(v) = values[i] {
                return v;
            }
            let before = known.iter().rev().find(|(j, _)| *j < i);
            let after = known.iter().find(|(j, _)| *j > i);
            match (before, after) {
                (Some(&(x0, y0)), Some(&(x1, y1))) => {
                    (i as f64 - x0 as f64) * (y1 - y0) / (x1 as f64 - x0 as f64) + y0
                }
                (Some(&(_, y)), None) | (None, Some(&(_, y))) => y,
                (None, None) => f64::NAN,
            }
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn directional_image(b: &EmbeddingBundle) -> f64 {
    let d = diff(&b.key, &b.src_first);
    let s: Vec<f64> = b
        .edit_frames
        .iter()
        .zip(&b.src_frames)
        .map(|(e, s)| cosine(&diff(e, s), &d))
        .collect();
    s.iter().sum::<f64>() / s.len() as f64
}

pub fn directional_text(b: &EmbeddingBundle) -> f64 {
    let d = diff(
        b.text_target.as_ref().unwrap(),
        b.text_source.as_ref().unwrap(),
    );
    let s: Vec<f64> = b
        .edit_frames
        .iter()
        .zip(&b.src_frames)
        .map(|(e, s)| cosine(&diff(e, s), &d))
        .collect();
    s.iter().sum::<f64>() / s.len() as f64
}

pub fn text_align(b: &EmbeddingBundle) -> f64 {
    let t = b.text_target.as_ref().unwrap();
    b.edit_frames.iter().map(|e| cosine(e, t)).sum::<f64>() / b.edit_frames.len() as f64
}

pub fn arcface(b: &EmbeddingBundle) -> f64 {
    let present: Vec<f64> = b
        .face_edit_frames
        .iter()
        .flatten()
        .map(|f| cosine(f, &b.face_key))
        .collect();
    present.iter().sum::<f64>() / present.len() as f64
}

fn vector(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Random embedding bundle with `missing_faces` face rows removed.
pub fn random_embeddings(
    r: &mut ChaCha8Rng,
    frames: usize,
    dim: usize,
    face_dim: usize,
    missing_faces: usize,
) -> EmbeddingBundle {
    let src_frames: Vec<Vec<f64>> = (0..frames).map(|_| vector(r, dim)).collect();
    let mut face_edit_frames: Vec<Option<Vec<f64>>> =
        (0..frames).map(|_| Some(vector(r, face_dim))).collect();
    for i in rand::seq::index::sample(r, frames, missing_faces) {
        face_edit_frames[i] = None;
    }
    EmbeddingBundle {
        pair_id: "rand".into(),
        models: EmbeddingModels::default(),
        src_first: src_frames[0].clone(),
        edit_frames: (0..frames).map(|_| vector(r, dim)).collect(),
        src_frames,
        key: vector(r, dim),
        face_edit_frames,
        face_key: vector(r, face_dim),
        text_source: Some(vector(r, dim)),
        text_target: Some(vector(r, dim)),
    }
}
