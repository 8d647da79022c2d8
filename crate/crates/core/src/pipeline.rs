//! Stage orchestration and the run directory layout.
//!
//! ```text
//! <out>/ingest_warnings.jsonl
//! <out>/diagnostics.json   (+ diagnostics.html)
//! <out>/clusters.json, clusters.csv
//! <out>/sanitized.csv, run.json
//! <out>/decisions.jsonl    (curator log, append-only)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{cluster_pipeline, ClusterParams, ClusterSet};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, write_warnings, Dataset};
use crate::embedding::{coverage_check, load_store, restrict_to_coverage, table_paths, CoverageReport, EmbeddingStore};
use crate::error::{Error, Result};
use crate::report::render_diagnostics_html;
use crate::sanitize::{apply_curator_decisions, read_decision_log, run_sanitization, DecisionWarning, SanitizationRun};
use crate::similarity::{build_diagnostics, DiagnosticsReport, ImageDiagnostics};

pub const INGEST_WARNINGS: &str = "ingest_warnings.jsonl";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const DIAGNOSTICS_HTML: &str = "diagnostics.html";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const SANITIZED_CSV: &str = "sanitized.csv";
pub const RUN_JSON: &str = "run.json";

/// Loaded, coverage-checked inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    pub coverage: CoverageReport,
    pub input_hashes: BTreeMap<String, String>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let dataset = load_dataset(&cfg.dataset)?;
    let store = load_store(&cfg.image_emb, &cfg.label_emb)?;
    let coverage = coverage_check(&store, &dataset);
    let dataset = if coverage.is_complete() {
        dataset
    } else if cfg.allow_partial {
        tracing::warn!(
            missing_images = coverage.missing_images.len(),
            missing_labels = coverage.missing_labels.len(),
            "partial coverage; dropping uncovered items"
        );
        restrict_to_coverage(&dataset, &store)?
    } else {
        return Err(coverage.into_error());
    };
    Ok(Inputs {
        dataset,
        store,
        coverage,
        input_hashes: hash_inputs(cfg)?,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of each embedding file, plus one digest over every dataset file
/// (name and content, in name order).
pub fn hash_inputs(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut hashes = BTreeMap::new();
    for (name, base) in [("image_emb", &cfg.image_emb), ("label_emb", &cfg.label_emb)] {
        let (bin, manifest) = table_paths(base);
        hashes.insert(format!("{name}.bin"), sha256_file(&bin)?);
        hashes.insert(format!("{name}.manifest.json"), sha256_file(&manifest)?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&cfg.dataset)
        .map_err(|e| Error::io(&cfg.dataset, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        h.update(f.file_name().unwrap_or_default().as_encoded_bytes());
        h.update([0u8]);
        h.update(fs::read(f).map_err(|e| Error::io(f, e))?);
        h.update([0u8]);
    }
    hashes.insert("dataset".into(), hex::encode(h.finalize()));
    Ok(hashes)
}

/// Writes via a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `diagnostics.json` body: the per-image array.
pub fn diagnostics_json(report: &DiagnosticsReport) -> Vec<u8> {
    let images: &[ImageDiagnostics] = &report.images;
    let mut out = serde_json::to_vec_pretty(images).expect("diagnostics serialize");
    out.push(b'\n');
    out
}

pub fn write_diagnostics(dir: &Path, report: &DiagnosticsReport, html: bool) -> Result<()> {
    ensure_dir(dir)?;
    write_atomic(&dir.join(DIAGNOSTICS_JSON), &diagnostics_json(report))?;
    if html {
        write_atomic(&dir.join(DIAGNOSTICS_HTML), render_diagnostics_html(report).as_bytes())?;
    }
    Ok(())
}

pub fn write_clusters(dir: &Path, set: &ClusterSet) -> Result<()> {
    ensure_dir(dir)?;
    write_atomic(&dir.join(CLUSTERS_JSON), &set.to_json())?;
    write_atomic(&dir.join(CLUSTERS_CSV), &set.to_csv())
}

pub fn diagnose(cfg: &RunConfig, inputs: &Inputs) -> Result<DiagnosticsReport> {
    ensure_dir(&cfg.out)?;
    write_warnings(&cfg.out.join(INGEST_WARNINGS), &inputs.dataset.warnings)?;
    let report = build_diagnostics(&inputs.dataset, &inputs.store, cfg.top_k, &cfg.rules)?;
    write_diagnostics(&cfg.out, &report, cfg.html)?;
    Ok(report)
}

pub fn cluster(cfg: &RunConfig, inputs: &Inputs) -> Result<ClusterSet> {
    let set = cluster_pipeline(&inputs.dataset.vocabulary, &inputs.store, &cfg.cluster)?;
    write_clusters(&cfg.out, &set)?;
    Ok(set)
}

/// Everything a full run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Computed {
    pub diagnostics: DiagnosticsReport,
    pub clusters: ClusterSet,
    pub run: SanitizationRun,
    pub decision_warnings: Vec<DecisionWarning>,
}

/// Pure part of a full run: diagnostics, clustering with `params`,
/// sanitization and decision replay.
pub fn compute(cfg: &RunConfig, inputs: &Inputs, params: &ClusterParams) -> Result<Computed> {
    let diagnostics = build_diagnostics(&inputs.dataset, &inputs.store, cfg.top_k, &cfg.rules)?;
    compute_with_diagnostics(cfg, inputs, params, diagnostics)
}

pub fn compute_with_diagnostics(
    cfg: &RunConfig,
    inputs: &Inputs,
    params: &ClusterParams,
    diagnostics: DiagnosticsReport,
) -> Result<Computed> {
    let clusters = cluster_pipeline(&inputs.dataset.vocabulary, &inputs.store, params)?;
    let run = run_sanitization(&inputs.dataset, &inputs.store, &clusters, Some(&diagnostics))?;
    let decisions = read_decision_log(&cfg.decisions_path())?;
    let (run, decision_warnings) = apply_curator_decisions(run, &decisions, &inputs.dataset.vocabulary, &inputs.store)?;
    Ok(Computed {
        diagnostics,
        clusters,
        run,
        decision_warnings,
    })
}

#[derive(Serialize)]
struct RunFile<'a> {
    config: &'a RunConfig,
    input_hashes: &'a BTreeMap<String, String>,
    coverage: &'a CoverageReport,
    ingest_warnings: usize,
    artifacts: BTreeMap<&'static str, &'static str>,
    decision_warnings: &'a [DecisionWarning],
    #[serde(flatten)]
    run: &'a SanitizationRun,
}

/// Serialized `run.json`.
pub fn run_json(cfg: &RunConfig, inputs: &Inputs, computed: &Computed) -> Vec<u8> {
    let file = RunFile {
        config: cfg,
        input_hashes: &inputs.input_hashes,
        coverage: &inputs.coverage,
        ingest_warnings: inputs.dataset.warnings.len(),
        artifacts: [("clusters", CLUSTERS_JSON), ("diagnostics", DIAGNOSTICS_JSON), ("sanitized", SANITIZED_CSV)]
            .into_iter()
            .collect(),
        decision_warnings: &computed.decision_warnings,
        run: &computed.run,
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("run serializes");
    out.push(b'\n');
    out
}

/// Writes the sanitization artifacts (`sanitized.csv`, `run.json`).
pub fn write_run(cfg: &RunConfig, inputs: &Inputs, computed: &Computed) -> Result<()> {
    ensure_dir(&cfg.out)?;
    write_atomic(&cfg.out.join(SANITIZED_CSV), &computed.run.to_csv())?;
    write_atomic(&cfg.out.join(RUN_JSON), &run_json(cfg, inputs, computed))
}

/// Full run: every artifact of the run directory.
pub fn sanitize(cfg: &RunConfig, inputs: &Inputs) -> Result<Computed> {
    ensure_dir(&cfg.out)?;
    write_warnings(&cfg.out.join(INGEST_WARNINGS), &inputs.dataset.warnings)?;
    let computed = compute(cfg, inputs, &cfg.cluster)?;
    write_diagnostics(&cfg.out, &computed.diagnostics, cfg.html)?;
    write_clusters(&cfg.out, &computed.clusters)?;
    write_run(cfg, inputs, &computed)?;
    Ok(computed)
}

#[derive(Deserialize)]
struct RunFileConfig {
    config: RunConfig,
}

/// Reads back the effective configuration stored in `<dir>/run.json`.
pub fn read_run_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join(RUN_JSON);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let f: RunFileConfig = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
    Ok(f.config)
}
