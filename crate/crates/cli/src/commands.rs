use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use syncurator_core::channels::ChannelSet;
use syncurator_core::curation::{build_manifest, score_pair_gated, CurationManifest, PairScore};
use syncurator_core::dsp::process_stages;
use syncurator_core::evalmetrics::{
    aggregate, encode_binary, eval_sync, evaluate_embeddings, load_embedding_bundle,
    EmbeddingBundle, MetricCell, PairEvaluation, TABLE_ROWS,
};
use syncurator_core::landmarks::{PairFile, PairKind, PairRecord};
use syncurator_core::synthbench::{
    generate_embeddings, generate_pair, EmbeddingSynthSpec, SynthSpec,
};
use syncurator_core::{Channel, Stage};

use crate::args::SynthArgs;
use crate::config::{usage, Header, RunConfig};
use crate::io::{cell, discover, read_json, write_json, write_text};

/// Result of a command that ran to completion, possibly skipping inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Outcome {
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputError {
    pub path: String,
    pub error: String,
}

impl InputError {
    fn new(path: &Path, error: impl ToString) -> Self {
        let path = path.display().to_string();
        let error = error.to_string();
        let error = error
            .strip_prefix(&format!("{path}: "))
            .map(str::to_string)
            .unwrap_or(error);
        Self { path, error }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresFile {
    pub header: Header,
    pub scores: Vec<PairScore>,
    #[serde(default)]
    pub errors: Vec<InputError>,
}

/// Reads a scores file, also accepting a bare array of scores.
pub fn read_scores(path: &Path) -> anyhow::Result<(Option<Header>, Vec<PairScore>)> {
    let value = read_json(path)?;
    let parse = |v: serde_json::Value| -> anyhow::Result<Vec<PairScore>> {
        serde_json::from_value(v).with_context(|| format!("{}: invalid score rows", path.display()))
    };
    match value {
        serde_json::Value::Array(_) => Ok((None, parse(value)?)),
        serde_json::Value::Object(mut obj) => {
            let scores = obj
                .remove("scores")
                .with_context(|| format!("{}: no `scores` field", path.display()))?;
            let header = obj
                .remove("header")
                .map(serde_json::from_value)
                .transpose()
                .with_context(|| format!("{}: invalid header", path.display()))?;
            Ok((header, parse(scores)?))
        }
        _ => bail!("{}: expected an object or array", path.display()),
    }
}

/// Loads every pair file, keeping the first file per pair_id.
fn load_pairs(files: &[PathBuf]) -> (Vec<PairRecord>, Vec<InputError>) {
    let loaded: Vec<_> = files.par_iter().map(|f| (f, PairRecord::load(f))).collect();
    let mut seen = BTreeMap::new();
    let mut errors = Vec::new();
    for (path, result) in loaded {
        match result {
            Ok(pair) if seen.contains_key(&pair.pair_id) => {
                errors.push(InputError::new(
                    path,
                    format!("duplicate pair_id '{}'", pair.pair_id),
                ));
            }
            Ok(pair) => {
                seen.insert(pair.pair_id.clone(), pair);
            }
            Err(e) => errors.push(InputError::new(path, e)),
        }
    }
    (seen.into_values().collect(), errors)
}

fn report_errors(errors: &[InputError]) {
    for e in errors {
        eprintln!("error: {}: {}", e.path, e.error);
    }
}

pub fn score(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> anyhow::Result<Outcome> {
    let files = discover(inputs, ".pair.json")?;
    if files.is_empty() {
        return Err(usage("no pair files found"));
    }
    let weights = cfg.effective_weights()?;
    let (pairs, errors) = load_pairs(&files);
    let mut scores: Vec<PairScore> = pairs
        .par_iter()
        .map(|p| score_pair_gated(p, &weights, &cfg.dsp, cfg.coverage_threshold))
        .collect();
    scores.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    report_errors(&errors);
    let file = ScoresFile {
        header: Header::new("score", cfg),
        scores,
        errors,
    };
    write_json(&out.join("scores.json"), &file)?;
    eprintln!(
        "scored {} pairs ({} discarded), {} inputs failed",
        file.scores.len(),
        file.scores.iter().filter(|s| s.discarded).count(),
        file.errors.len()
    );
    Ok(Outcome {
        failures: file.errors.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub header: Header,
    /// Config hash of the scores file the manifest was built from.
    pub scores_config_sha256: Option<String>,
    pub manifest: CurationManifest,
}

pub fn filter(cfg: &RunConfig, scores_path: &Path, out: &Path) -> anyhow::Result<Outcome> {
    let (scores_header, scores) = read_scores(scores_path)?;
    let weights = cfg.effective_weights()?;
    let scores: Vec<PairScore> = scores.iter().map(|s| s.reweighted(&weights)).collect();
    let manifest = build_manifest(
        &scores,
        cfg.target_size,
        cfg.ratio,
        cfg.composition,
        cfg.seed,
    )?;
    eprintln!(
        "manifest: {} edited + {} identical ({})",
        manifest.edited_count, manifest.identical_count, manifest.composition
    );
    let file = ManifestFile {
        header: Header::new("filter", cfg),
        scores_config_sha256: scores_header.map(|h| h.config_sha256),
        manifest,
    };
    write_json(&out.join("manifest.json"), &file)?;
    Ok(Outcome::default())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableColumn {
    pub block: String,
    pub metric: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub header: Header,
    pub columns: Vec<TableColumn>,
    pub pairs: Vec<PairEvaluation>,
    /// Unweighted mean over pairs of each column, skipping N/A cells.
    pub mean: Vec<Option<f64>>,
    #[serde(default)]
    pub errors: Vec<InputError>,
}

fn load_embeddings(files: &[PathBuf]) -> (BTreeMap<String, EmbeddingBundle>, Vec<InputError>) {
    let loaded: Vec<_> = files
        .par_iter()
        .map(|f| (f, load_embedding_bundle(f)))
        .collect();
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (path, result) in loaded {
        match result {
            Ok(b) if map.contains_key(&b.pair_id) => {
                errors.push(InputError::new(
                    path,
                    format!("duplicate pair_id '{}'", b.pair_id),
                ));
            }
            Ok(b) => {
                map.insert(b.pair_id.clone(), b);
            }
            Err(e) => errors.push(InputError::new(path, e)),
        }
    }
    (map, errors)
}

pub fn eval(
    cfg: &RunConfig,
    pairs: &[PathBuf],
    embeddings: &[PathBuf],
    traces: bool,
    out: &Path,
) -> anyhow::Result<Outcome> {
    if pairs.is_empty() && embeddings.is_empty() {
        return Err(usage("eval needs --pairs and/or --embeddings"));
    }
    let (pairs, mut errors) = load_pairs(&discover(pairs, ".pair.json")?);
    let (embs, emb_errors) = load_embeddings(&discover(embeddings, ".emb.json")?);
    errors.extend(emb_errors);

    let pairs: BTreeMap<&str, &PairRecord> =
        pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let mut ids: Vec<&str> = pairs
        .keys()
        .copied()
        .chain(embs.keys().map(String::as_str))
        .collect();
    ids.sort();
    ids.dedup();
    let rows: Vec<PairEvaluation> = ids
        .par_iter()
        .map(|id| {
            let sync = pairs.get(id).map(|p| eval_sync(p, &cfg.dsp));
            let metrics = embs.get(*id).map(|b| evaluate_embeddings(b, traces));
            PairEvaluation::new(id.to_string(), sync, metrics)
        })
        .collect();
    report_errors(&errors);

    let header = Header::new("eval", cfg);
    let mean = aggregate(&rows);
    write_text(
        &out.join("metrics.csv"),
        &metrics_csv(&header, &rows, &mean)?,
    )?;
    let file = MetricsFile {
        header,
        columns: TABLE_ROWS
            .iter()
            .map(|(b, m)| TableColumn {
                block: b.to_string(),
                metric: m.to_string(),
            })
            .collect(),
        pairs: rows,
        mean,
        errors,
    };
    write_json(&out.join("metrics.json"), &file)?;
    eprintln!(
        "evaluated {} pairs, {} inputs failed",
        file.pairs.len(),
        file.errors.len()
    );
    Ok(Outcome {
        failures: file.errors.len(),
    })
}

const NA: &str = "N/A";

fn table_cell(c: &MetricCell) -> String {
    c.value
        .map(|v| v.to_string())
        .unwrap_or_else(|| NA.to_string())
}

/// Two header rows (block, metric), one row per pair, then the mean row.
fn metrics_csv(
    header: &Header,
    rows: &[PairEvaluation],
    mean: &[Option<f64>],
) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("block").chain(TABLE_ROWS.iter().map(|(b, _)| *b)))?;
    w.write_record(std::iter::once("pair_id").chain(TABLE_ROWS.iter().map(|(_, m)| *m)))?;
    for r in rows {
        w.write_record(std::iter::once(r.pair_id.clone()).chain(r.cells.iter().map(table_cell)))?;
    }
    w.write_record(
        std::iter::once("mean".to_string()).chain(
            mean.iter()
                .map(|m| m.map(|v| v.to_string()).unwrap_or_else(|| NA.into())),
        ),
    )?;
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(header.csv_comment() + &body)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthFile {
    pub header: Header,
    pub specs: Vec<SynthSpec>,
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs, out: &Path) -> anyhow::Result<Outcome> {
    let mut specs = Vec::new();
    for seed in 0..a.seeds {
        for &lag in &a.lags {
            specs.push(SynthSpec {
                n_frames: a.frames,
                fps: a.fps,
                lag_frames: lag,
                noise_sigma: a.noise,
                dropout_rate: a.dropout,
                seed,
                kind: PairKind::EditedPair,
            });
        }
    }
    for seed in 0..a.identical {
        specs.push(SynthSpec {
            n_frames: a.frames,
            fps: a.fps,
            seed,
            kind: PairKind::IdenticalPair,
            ..SynthSpec::default()
        });
    }
    if specs.is_empty() {
        return Err(usage(
            "synth produced no specs (check --seeds, --lags, --identical)",
        ));
    }
    for s in &specs {
        s.validate().map_err(|e| usage(e.to_string()))?;
    }
    specs
        .par_iter()
        .try_for_each(|spec| write_synthetic(spec, a, out))?;
    write_json(
        &out.join("synth.json"),
        &SynthFile {
            header: Header::new("synth", cfg),
            specs: specs.clone(),
        },
    )?;
    eprintln!("wrote {} synthetic pairs to {}", specs.len(), out.display());
    Ok(Outcome::default())
}

fn write_synthetic(spec: &SynthSpec, a: &SynthArgs, out: &Path) -> anyhow::Result<()> {
    let pair = generate_pair(spec)?;
    let id = &pair.pair_id;
    let src_name = format!("{id}.source.json");
    let edit_name = format!("{id}.edited.json");
    write_text(
        &out.join("landmarks").join(&src_name),
        &pair.source.to_json(),
    )?;
    write_text(
        &out.join("landmarks").join(&edit_name),
        &pair.edited.to_json(),
    )?;
    let file = PairFile {
        pair_id: id.clone(),
        kind: pair.kind,
        source: Path::new("..").join("landmarks").join(src_name),
        edited: Path::new("..").join("landmarks").join(edit_name),
    };
    write_json(&out.join("pairs").join(format!("{id}.pair.json")), &file)?;
    if a.embeddings {
        let bundle = generate_embeddings(&EmbeddingSynthSpec {
            pair_id: id.clone(),
            frames: spec.n_frames,
            face_dropout: spec.dropout_rate,
            seed: embedding_seed(spec),
            ..EmbeddingSynthSpec::default()
        });
        let dir = out.join("embeddings");
        if a.binary {
            let payload_name = format!("{id}.emb.f32");
            let (header, bytes) = encode_binary(&bundle, &payload_name);
            write_json(&dir.join(format!("{id}.emb.json")), &header)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(payload_name), bytes)?;
        } else {
            write_json(&dir.join(format!("{id}.emb.json")), &bundle)?;
        }
    }
    Ok(())
}

/// Distinct embedding stream per synthetic pair.
fn embedding_seed(spec: &SynthSpec) -> u64 {
    let kind = matches!(spec.kind, PairKind::IdenticalPair) as u64;
    spec.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((spec.lag_frames as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(kind)
}

pub fn trace(
    cfg: &RunConfig,
    pair_path: &Path,
    stages: &[Stage],
    channels: &[Channel],
    out: &Path,
) -> anyhow::Result<Outcome> {
    let pair = PairRecord::load(pair_path).map_err(|e| anyhow::anyhow!(e))?;
    let stages: Vec<Stage> = if stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        stages.to_vec()
    };
    let channels: Vec<Channel> = if channels.is_empty() {
        Channel::ALL.to_vec()
    } else {
        channels.to_vec()
    };
    let mut failures = 0;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "view", "channel", "component", "stage", "value"])?;
    for (view, bundle) in [("source", &pair.source), ("edited", &pair.edited)] {
        let set = ChannelSet::extract(bundle).signals;
        for &channel in &channels {
            for sig in set.channel(channel) {
                let processed = match process_stages(sig, &cfg.dsp) {
                    Ok(all) => all.to_vec(),
                    Err(e) => {
                        eprintln!(
                            "error: {view} {}: {e}; only the raw stage is exported",
                            sig.component
                        );
                        failures += 1;
                        vec![sig.clone()]
                    }
                };
                for s in processed.iter().filter(|s| stages.contains(&s.stage)) {
                    for (t, v) in s.values.iter().enumerate() {
                        w.write_record([
                            t.to_string(),
                            view.into(),
                            channel.to_string(),
                            s.component.clone(),
                            s.stage.to_string(),
                            cell(*v),
                        ])?;
                    }
                }
            }
        }
    }
    let body = String::from_utf8(w.into_inner()?)?;
    let header = Header::new("trace", cfg);
    write_text(
        &out.join(format!("{}.trace.csv", pair.pair_id)),
        &(header.csv_comment() + &body),
    )?;
    Ok(Outcome { failures })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub config_sha256: String,
    pub composition: String,
    pub target_size: usize,
    pub edited_count: usize,
    pub identical_count: usize,
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub config_sha256: String,
    pub columns: Vec<TableColumn>,
    pub mean: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub header: Header,
    pub scores_config_sha256: Option<String>,
    pub pairs: Vec<PairScore>,
    pub manifest: Option<ManifestSummary>,
    pub metrics: Option<MetricSummary>,
}

pub fn report(
    cfg: &RunConfig,
    scores: &Path,
    manifest: Option<&Path>,
    metrics: Option<&Path>,
    out: &Path,
) -> anyhow::Result<Outcome> {
    let (scores_header, pairs) = read_scores(scores)?;
    let manifest = manifest
        .map(|p| -> anyhow::Result<ManifestSummary> {
            let f: ManifestFile = serde_json::from_value(read_json(p)?)
                .with_context(|| format!("{}: not a manifest", p.display()))?;
            Ok(ManifestSummary {
                config_sha256: f.header.config_sha256,
                composition: f.manifest.composition.to_string(),
                target_size: f.manifest.target_size,
                edited_count: f.manifest.edited_count,
                identical_count: f.manifest.identical_count,
                accepted: f.manifest.accepted.into_iter().map(|e| e.pair_id).collect(),
            })
        })
        .transpose()?;
    let metrics = metrics
        .map(|p| -> anyhow::Result<MetricSummary> {
            let f: MetricsFile = serde_json::from_value(read_json(p)?)
                .with_context(|| format!("{}: not a metrics file", p.display()))?;
            Ok(MetricSummary {
                config_sha256: f.header.config_sha256,
                columns: f.columns,
                mean: f.mean,
            })
        })
        .transpose()?;
    write_json(
        &out.join("report.json"),
        &RunReport {
            header: Header::new("report", cfg),
            scores_config_sha256: scores_header.map(|h| h.config_sha256),
            pairs,
            manifest,
            metrics,
        },
    )?;
    Ok(Outcome::default())
}
