//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use syncurator::config::RunConfig;
use syncurator_core::channels::ChannelSet;
use syncurator_core::curation::{
    leave_one_out_weights, score_pair, ChannelCorrelations, ScoringWeights,
};
use syncurator_core::dsp;
use syncurator_core::evalmetrics::{
    arcface_similarity, clip_text_align, directional_clip_image, directional_clip_text_dual,
    EmbeddingBundle,
};
use syncurator_core::landmarks::{LandmarkBundle, LandmarkPoint, PairKind};
use syncurator_core::synthbench::{generate_pair, ranking_fidelity, standard_suite, SynthSpec};
use syncurator_core::{Channel, DspConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn constants() -> Check {
    let c = RunConfig::default();
    ensure(c.weights.as_array() == [0.40, 0.30, 0.15, 0.15], || {
        format!("weights {:?}", c.weights)
    })?;
    ensure(c.dsp.sg_window == 9 && c.dsp.sg_order == 2, || {
        format!("SG {}/{}", c.dsp.sg_window, c.dsp.sg_order)
    })?;
    ensure(c.dsp.z_epsilon == 1e-6, || {
        format!("z_epsilon {}", c.dsp.z_epsilon)
    })?;
    ensure(c.target_size == 512, || format!("target {}", c.target_size))?;
    ensure(
        c.ratio.to_string() == "3:1" && c.ratio.split(512) == (384, 128),
        || format!("ratio {}", c.ratio),
    )?;
    Ok("weights 0.40/0.30/0.15/0.15, SG 9/2, eps 1e-6, 512 @ 3:1 -> 384+128".into())
}

fn dsp_suite() -> Check {
    let start = Instant::now();
    let mut r = oracles::rng(101);
    let mut sg_dev = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(9..120);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        sg_dev = sg_dev.max(max_dev(&dsp::smooth(&y, 9, 2), &oracles::sg(&y, 9, 2)));
    }
    let mut poly_dev = 0.0f64;
    for _ in 0..100 {
        let (a, b, c) = (
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-0.05..0.05),
        );
        let y: Vec<f64> = (0..81)
            .map(|t| a + b * t as f64 + c * (t * t) as f64)
            .collect();
        poly_dev = poly_dev.max(max_dev(&dsp::smooth(&y, 9, 2), &y));
    }
    let mut pearson_dev = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(3..200);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| 0.3 * x + r.random_range(-1.0..1.0))
            .collect();
        pearson_dev =
            pearson_dev.max((dsp::pearson(&a, &b).unwrap() - oracles::pearson(&a, &b)).abs());
    }
    let mut interp_dev = 0.0f64;
    for _ in 0..100 {
        let mut v: Vec<Option<f64>> = (0..81).map(|_| Some(r.random_range(-3.0..3.0))).collect();
        for i in rand::seq::index::sample(&mut r, 79, 16) {
            v[i + 1] = None;
        }
        interp_dev = interp_dev.max(max_dev(
            &dsp::fill_gaps(&v).unwrap(),
            &oracles::interpolate(&v),
        ));
    }
    let elapsed = start.elapsed();
    ensure(sg_dev <= 1e-9, || format!("SG deviation {sg_dev:e}"))?;
    ensure(poly_dev <= 1e-9, || {
        format!("polynomial deviation {poly_dev:e}")
    })?;
    ensure(pearson_dev <= 1e-12, || {
        format!("Pearson deviation {pearson_dev:e}")
    })?;
    ensure(interp_dev <= 1e-12, || {
        format!("interpolation deviation {interp_dev:e}")
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("runtime {elapsed:?}")
    })?;
    Ok(format!(
        "SG {sg_dev:.1e}, poly {poly_dev:.1e}, Pearson {pearson_dev:.1e}, interp {interp_dev:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn oracle_columns(b: &LandmarkBundle) -> Vec<Vec<Option<f64>>> {
    let face: Vec<Option<&[LandmarkPoint]>> = b.frames.iter().map(|f| f.face.as_deref()).collect();
    let pose: Vec<Option<[f64; 6]>> = b
        .frames
        .iter()
        .map(|f| f.pose.as_deref().map(oracles::pose))
        .collect();
    let mut cols = vec![
        face.iter().map(|f| f.map(oracles::mar)).collect(),
        face.iter().map(|f| f.map(|f| oracles::gaze(f).0)).collect(),
        face.iter().map(|f| f.map(|f| oracles::gaze(f).1)).collect(),
        face.iter().map(|f| f.map(oracles::blink)).collect(),
    ];
    for k in 0..6 {
        let col: Vec<Option<f64>> = pose.iter().map(|p| p.map(|p| p[k])).collect();
        cols.push(if k < 2 { oracles::unwrap(&col) } else { col });
    }
    cols
}

fn series_dev(a: &[Option<f64>], b: &[Option<f64>]) -> Result<f64, String> {
    let mut dev = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (Some(x), Some(y)) => dev = dev.max((x - y).abs()),
            (None, None) => {}
            _ => return Err("missing-sample mask differs".into()),
        }
    }
    Ok(dev)
}

// Near-closed lids put gaze_y in the hundreds; deviation is measured per unit magnitude above 1.
fn scaled_dev(a: &[Option<f64>], b: &[Option<f64>]) -> Result<f64, String> {
    let scale: Vec<Option<f64>> = a.iter().map(|v| v.map(|v| v.abs().max(1.0))).collect();
    let mut dev = 0.0f64;
    for ((x, y), k) in a.iter().zip(b).zip(&scale) {
        match (x, y, k) {
            (Some(x), Some(y), Some(k)) => dev = dev.max((x - y).abs() / k),
            (None, None, _) => {}
            _ => return Err("missing-sample mask differs".into()),
        }
    }
    Ok(dev)
}

fn transformed(b: &LandmarkBundle, s: f64, dx: f64, dy: f64) -> LandmarkBundle {
    let mut out = b.clone();
    for f in &mut out.frames {
        for pts in [f.face.as_mut(), f.pose.as_mut()].into_iter().flatten() {
            for p in pts.iter_mut() {
                *p = LandmarkPoint::new(s * p.x + dx, s * p.y + dy);
            }
        }
    }
    out
}

fn channel_suite() -> Check {
    let mut r = oracles::rng(202);
    let mut oracle_dev = 0.0f64;
    for _ in 0..50 {
        let frames = r.random_range(5..40);
        let b = oracles::random_bundle(&mut r, frames, 0.15);
        let set = ChannelSet::extract(&b).signals;
        for (sig, want) in set.components().zip(oracle_columns(&b)) {
            oracle_dev = oracle_dev.max(series_dev(&sig.values, &want)?);
        }
    }
    // Invariance on face-shaped geometry: noisy synthetic bundles.
    let mut inv_dev = 0.0f64;
    for i in 0..50 {
        let spec = SynthSpec {
            lag_frames: r.random_range(0..10),
            noise_sigma: 0.004,
            dropout_rate: 0.1,
            seed: 1000 + i,
            ..Default::default()
        };
        let b = generate_pair(&spec).map_err(|e| e.to_string())?.edited;
        let (s, dx, dy) = (
            r.random_range(0.25..4.0),
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
        );
        let base = ChannelSet::extract(&b).signals;
        let moved = ChannelSet::extract(&transformed(&b, s, dx, dy)).signals;
        for (a, m) in base.components().zip(moved.components()) {
            let k = if a.component.ends_with("wrist_height") {
                s
            } else {
                1.0
            };
            let scaled: Vec<Option<f64>> = a.values.iter().map(|v| v.map(|v| v * k)).collect();
            inv_dev = inv_dev.max(scaled_dev(&scaled, &m.values)?);
        }
    }
    ensure(oracle_dev <= 1e-12, || {
        format!("oracle deviation {oracle_dev:e}")
    })?;
    ensure(inv_dev <= 1e-9, || {
        format!("invariance deviation {inv_dev:e}")
    })?;
    Ok(format!(
        "oracle {oracle_dev:.1e} over 50 bundles, scale/translation {inv_dev:.1e}"
    ))
}

fn filter_fidelity() -> Check {
    let start = Instant::now();
    let (w, cfg) = (ScoringWeights::default(), DspConfig::default());
    let mut rhos = Vec::new();
    for sigma in [0.0, 0.0025, 0.005] {
        let rep = ranking_fidelity(&standard_suite(20, sigma)).map_err(|e| e.to_string())?;
        ensure(!rep.degenerate && rep.rho <= -0.9, || {
            format!("rho {} at sigma {sigma}", rep.rho)
        })?;
        rhos.push(rep.rho);
    }
    let mut ident_dev = 0.0f64;
    let mut dropped = 0;
    for seed in 0..20 {
        let ident = score_pair(
            &generate_pair(&SynthSpec {
                seed,
                kind: PairKind::IdenticalPair,
                ..Default::default()
            })
            .unwrap(),
            &w,
            &cfg,
        );
        ident_dev = ident_dev.max((ident.sync_score.unwrap_or(f64::NAN) - 1.0).abs());
        let d = score_pair(
            &generate_pair(&SynthSpec {
                seed,
                dropout_rate: 0.6,
                ..Default::default()
            })
            .unwrap(),
            &w,
            &cfg,
        );
        dropped += d.discarded as usize;
    }
    let elapsed = start.elapsed();
    ensure(ident_dev <= 1e-6, || {
        format!("identical pair deviation {ident_dev:e}")
    })?;
    ensure(dropped == 20, || {
        format!("{dropped}/20 dropout-0.6 pairs discarded")
    })?;
    ensure(elapsed < Duration::from_secs(60), || {
        format!("runtime {elapsed:?}")
    })?;
    Ok(format!(
        "rho {:.4}/{:.4}/{:.4} at sigma 0/0.0025/0.005, identical |1-s| {ident_dev:.1e}, 20/20 dropout discarded, {:.1}s",
        rhos[0],
        rhos[1],
        rhos[2],
        elapsed.as_secs_f64()
    ))
}

fn metric_suite() -> Check {
    let mut r = oracles::rng(303);
    let mut dev = 0.0f64;
    for _ in 0..50 {
        let frames = r.random_range(4..20);
        let missing = r.random_range(0..frames);
        let b = oracles::random_embeddings(&mut r, frames, 16, 8, missing);
        let got = [
            directional_clip_image(&b).map_err(|e| e.to_string())?.score,
            directional_clip_text_dual(&b)
                .map_err(|e| e.to_string())?
                .score,
            clip_text_align(&b).map_err(|e| e.to_string())?.score,
            arcface_similarity(&b).map_err(|e| e.to_string())?.score,
        ];
        let want = [
            oracles::directional_image(&b),
            oracles::directional_text(&b),
            oracles::text_align(&b),
            oracles::arcface(&b),
        ];
        dev = dev.max(max_dev(&got, &want));
    }
    ensure(dev <= 1e-9, || format!("oracle deviation {dev:e}"))?;

    let base = EmbeddingBundle {
        pair_id: "trivial".into(),
        models: Default::default(),
        src_frames: vec![vec![1.0, 0.0, 0.0]; 4],
        edit_frames: vec![vec![1.0, 1.0, 0.0]; 4],
        key: vec![1.0, 1.0, 0.0],
        src_first: vec![1.0, 0.0, 0.0],
        face_edit_frames: vec![Some(vec![0.3, 0.4]); 4],
        face_key: vec![0.3, 0.4],
        text_source: Some(vec![1.0, 0.0, 0.0]),
        text_target: Some(vec![1.0, 2.0, 0.0]),
    };
    let mut opposed = base.clone();
    opposed.key = vec![1.0, -1.0, 0.0];
    let mut ortho = base.clone();
    ortho.text_target = Some(vec![1.0, 0.0, 5.0]);
    ortho.face_edit_frames = vec![Some(vec![-0.4, 0.3]); 4];
    let mut parallel = base.clone();
    parallel.text_target = Some(vec![2.0, 2.0, 0.0]);
    let trivial = [
        (
            "dir-image aligned",
            directional_clip_image(&base).unwrap().score,
            1.0,
        ),
        (
            "dir-image opposed",
            directional_clip_image(&opposed).unwrap().score,
            -1.0,
        ),
        (
            "dir-text aligned",
            directional_clip_text_dual(&base).unwrap().score,
            1.0,
        ),
        (
            "dir-text orthogonal",
            directional_clip_text_dual(&ortho).unwrap().score,
            0.0,
        ),
        (
            "text-align parallel",
            clip_text_align(&parallel).unwrap().score,
            1.0,
        ),
        (
            "arcface self",
            arcface_similarity(&base).unwrap().score,
            1.0,
        ),
        (
            "arcface orthogonal",
            arcface_similarity(&ortho).unwrap().score,
            0.0,
        ),
    ];
    for (name, got, want) in trivial {
        ensure((got - want).abs() <= 1e-15, || {
            format!("{name}: {got} != {want}")
        })?;
    }
    Ok(format!(
        "oracle {dev:.1e} over 50 bundles, 7 trivial cases exact"
    ))
}

fn run_bin(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_syncurator"))
        .args(args)
        .env_remove("SYNCURATOR_CONFIG")
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    run_bin(
        &[
            "synth",
            "--out",
            "data",
            "--seeds",
            "2",
            "--identical",
            "4",
            "--noise",
            "0.003",
            "--dropout",
            "0.1",
            "--embeddings",
        ],
        d,
    )?;
    let files = [
        "scores.json",
        "manifest.json",
        "random/manifest.json",
        "metrics.json",
        "metrics.csv",
    ];
    for (run, jobs) in [("a", "1"), ("b", "4")] {
        run_bin(&["score", "data/pairs", "--out", run, "--jobs", jobs], d)?;
        let scores = format!("{run}/scores.json");
        run_bin(
            &[
                "filter",
                "--scores",
                &scores,
                "--target-size",
                "8",
                "--out",
                run,
            ],
            d,
        )?;
        let random = format!("{run}/random");
        run_bin(
            &[
                "filter",
                "--scores",
                &scores,
                "--target-size",
                "8",
                "--composition",
                "random",
                "--seed",
                "7",
                "--out",
                &random,
            ],
            d,
        )?;
        run_bin(
            &[
                "eval",
                "--pairs",
                "data/pairs",
                "--embeddings",
                "data/embeddings",
                "--out",
                run,
                "--jobs",
                jobs,
            ],
            d,
        )?;
    }
    for f in files {
        let a = fs::read(d.join("a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(d.join("b").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    // Re-running from the config echo reproduces the output.
    run_bin(
        &[
            "score",
            "data/pairs",
            "--config",
            "a/scores.json",
            "--out",
            "c",
        ],
        d,
    )?;
    ensure(
        fs::read(d.join("a/scores.json")).ok() == fs::read(d.join("c/scores.json")).ok(),
        || "echo rerun differs".into(),
    )?;
    Ok(format!(
        "{} outputs byte-identical across reruns and --jobs 1/4, echo rerun identical",
        files.len()
    ))
}

fn leave_one_out() -> Check {
    let cfg = DspConfig::default();
    let mut checked = 0;
    for drop in Channel::ALL {
        let w =
            leave_one_out_weights(&ScoringWeights::default(), drop).map_err(|e| e.to_string())?;
        ensure(w.get(drop) == 0.0, || format!("{drop} weight not zeroed"))?;
        for lag in 0..10 {
            let pair = generate_pair(&SynthSpec {
                lag_frames: lag,
                noise_sigma: 0.004,
                seed: 77,
                ..Default::default()
            })
            .unwrap();
            let s = score_pair(&pair, &w, &cfg);
            let c = s.correlations().ok_or("pair discarded")?;
            for v in [-1.0, -0.3, 0.0, 0.6, 1.0] {
                let mut m: ChannelCorrelations = c;
                match drop {
                    Channel::Speech => m.speech = v,
                    Channel::Gaze => m.gaze = v,
                    Channel::Blink => m.blink = v,
                    Channel::Pose => m.pose = v,
                }
                ensure(m.weighted(&w) == s.sync_score.unwrap(), || {
                    format!("{drop}: score moved with its correlation")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} substitutions, score bit-identical for each dropped channel"
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("constants fidelity", constants),
        ("DSP oracle suite", dsp_suite),
        ("channel formula suite", channel_suite),
        ("filter fidelity benchmark", filter_fidelity),
        ("metric oracle suite", metric_suite),
        ("determinism", determinism),
        ("leave-one-out machinery", leave_one_out),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
