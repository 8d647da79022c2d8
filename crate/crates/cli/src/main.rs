//! `labelsweep`: diagnose, cluster and sanitize a multi-label image dataset,
//! then review the result over HTTP.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 incomplete embedding coverage,
//! 64 usage error, 75 port already in use.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use labelsweep_core::config::PartialConfig;
use labelsweep_core::pipeline::{self, load_inputs, read_run_config};
use labelsweep_core::report::fmt_sim;
use labelsweep_core::{Error, Flag, MergeAnchor, Provenance, RunConfig};
use labelsweep_service::Session;
use serde_json::json;
use tracing_subscriber::EnvFilter;

const EXIT_FAILURE: u8 = 1;
const EXIT_COVERAGE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_PORT_IN_USE: u8 = 75;

#[derive(Parser)]
#[command(name = "labelsweep", version, about = "Label diagnostics, clustering and sanitization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every image against its own labels and the whole vocabulary.
    Diagnose(Settings),
    /// Cluster the label vocabulary.
    Cluster(Settings),
    /// Full run: diagnostics, clusters, one final label per image.
    Sanitize(Settings),
    /// Serve the review API over a completed run directory (`--out`).
    Serve {
        #[command(flatten)]
        settings: Settings,
        /// Directory of UI assets to serve at `/` instead of the built-in page.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Settings {
    /// TOML file with any of the settings below (kebab-case keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory: images plus one CSV sidecar per image.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Image embedding store (`<path>.bin` + `<path>.manifest.json`).
    #[arg(long)]
    image_emb: Option<PathBuf>,
    /// Label embedding store.
    #[arg(long)]
    label_emb: Option<PathBuf>,
    /// Output (run) directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// DBSCAN neighborhood radius in cosine distance [default: 0.07].
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    /// DBSCAN core-point threshold, counting the point itself [default: 1].
    #[arg(long)]
    min_samples: Option<usize>,
    /// Clusters smaller than this are merged into their nearest neighbor; 0 disables [default: 2].
    #[arg(long)]
    merge_threshold: Option<usize>,
    /// Distance anchor for merging [default: centroid].
    #[arg(long, value_parser = ["centroid", "representative"])]
    merge_anchor: Option<String>,
    /// Best vocabulary matches kept per image [default: 10].
    #[arg(long)]
    top_k: Option<usize>,
    /// Flag replace-candidate when sim(L) - sim(A) exceeds this [default: 0.0].
    #[arg(long, allow_negative_numbers = true)]
    gap_threshold: Option<f64>,
    /// Flag weak-label when sim(A) is below this [default: 0.2].
    #[arg(long, allow_negative_numbers = true)]
    weak_threshold: Option<f64>,
    /// Drop images and labels without vectors instead of failing.
    #[arg(long)]
    allow_partial: bool,
    /// Port for `serve` [default: 8750].
    #[arg(long)]
    serve_port: Option<u16>,
    /// Curator decision log [default: <out>/decisions.jsonl].
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Also write diagnostics.html.
    #[arg(long)]
    html: bool,
}

impl Settings {
    fn partial(&self) -> PartialConfig {
        PartialConfig {
            dataset: self.dataset.clone(),
            image_emb: self.image_emb.clone(),
            label_emb: self.label_emb.clone(),
            out: self.out.clone(),
            eps: self.eps,
            min_samples: self.min_samples,
            merge_threshold: self.merge_threshold,
            merge_anchor: self.merge_anchor.as_deref().map(|s| s.parse::<MergeAnchor>().expect("checked by clap")),
            top_k: self.top_k,
            gap_threshold: self.gap_threshold,
            weak_threshold: self.weak_threshold,
            allow_partial: self.allow_partial.then_some(true),
            serve_port: self.serve_port,
            decisions: self.decisions.clone(),
            html: self.html.then_some(true),
        }
    }

    /// Flags over config file over `base` (or defaults).
    fn resolve(&self, base: Option<&RunConfig>) -> Result<RunConfig, Failure> {
        let file = match &self.config {
            Some(path) => PartialConfig::from_toml_file(path)?,
            None => PartialConfig::default(),
        };
        Ok(self.partial().over(file).resolve(base)?)
    }
}

enum Failure {
    Core(Error),
    PortInUse(u16, std::io::Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn report(&self) -> (u8, serde_json::Value) {
        match self {
            Failure::Core(e) => {
                let code = match e {
                    Error::InvalidConfig(_) => EXIT_USAGE,
                    Error::CoverageIncomplete { .. } => EXIT_COVERAGE,
                    _ => EXIT_FAILURE,
                };
                let mut body = json!({ "error": e.kind(), "message": e.to_string() });
                if let Error::CoverageIncomplete {
                    missing_images,
                    missing_labels,
                } = e
                {
                    body["missing_images"] = json!(missing_images);
                    body["missing_labels"] = json!(missing_labels);
                }
                (code, body)
            }
            Failure::PortInUse(port, e) => (
                EXIT_PORT_IN_USE,
                json!({ "error": "port_in_use", "port": port, "message": e.to_string() }),
            ),
            Failure::Io(msg) => (EXIT_FAILURE, json!({ "error": "io", "message": msg })),
        }
    }
}

fn reduction_line(set: &labelsweep_core::ClusterSet) -> String {
    let p = &set.params;
    format!(
        "labels: {} \u{2192} {} clusters (eps {}, min_samples {}, merge_threshold {}, {} merges)",
        set.distinct_labels,
        set.cluster_count,
        p.eps,
        p.min_samples,
        p.merge_threshold,
        set.merge_log.len()
    )
}

fn flag_line(counts: &std::collections::BTreeMap<Flag, usize>) -> String {
    Flag::ALL
        .iter()
        .map(|f| format!("{f} {}", counts.get(f).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn diagnose(settings: &Settings) -> Result<(), Failure> {
    let cfg = settings.resolve(None)?;
    let inputs = load_inputs(&cfg)?;
    let report = pipeline::diagnose(&cfg, &inputs)?;
    let mean_gap = report.images.iter().map(|d| d.gap).sum::<f64>() / report.images.len().max(1) as f64;
    println!("diagnosed {} images; flags: {}", report.images.len(), flag_line(&report.flag_counts));
    println!("mean gap {}", fmt_sim(mean_gap));
    println!("wrote {}", cfg.out.join(pipeline::DIAGNOSTICS_JSON).display());
    Ok(())
}

fn cluster(settings: &Settings) -> Result<(), Failure> {
    let cfg = settings.resolve(None)?;
    let inputs = load_inputs(&cfg)?;
    let set = pipeline::cluster(&cfg, &inputs)?;
    println!("{}", reduction_line(&set));
    println!("wrote {}", cfg.out.join(pipeline::CLUSTERS_JSON).display());
    Ok(())
}

fn sanitize(settings: &Settings) -> Result<(), Failure> {
    let cfg = settings.resolve(None)?;
    let inputs = load_inputs(&cfg)?;
    let computed = pipeline::sanitize(&cfg, &inputs)?;
    let s = &computed.run.summary;
    println!("{}", reduction_line(&computed.clusters));
    println!(
        "final labels: {} distinct across {} images; curator overrides {}",
        s.final_distinct_labels,
        s.image_count,
        s.provenance_counts.get(&Provenance::CuratorOverride).copied().unwrap_or(0)
    );
    println!("flags: {}", flag_line(&s.flag_counts));
    if !computed.decision_warnings.is_empty() {
        println!("decision log: {} warning(s), see run.json", computed.decision_warnings.len());
    }
    println!("wrote {}", cfg.out.join(pipeline::SANITIZED_CSV).display());
    Ok(())
}

fn serve(settings: &Settings, ui_dir: Option<PathBuf>) -> Result<(), Failure> {
    let out = settings.out.clone().ok_or_else(|| Error::InvalidConfig("--out (run directory) is required".into()))?;
    let base = read_run_config(&out)?;
    let mut cfg = settings.resolve(Some(&base))?;
    cfg.out = out;
    let port = cfg.serve_port;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = labelsweep_service::bind(port).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => Failure::PortInUse(port, e),
            _ => Failure::Io(e.to_string()),
        })?;
        let session = Arc::new(Session::open(cfg.clone())?);
        println!("{}", reduction_line(&session.snapshot().computed.clusters));
        println!("serving {} on http://127.0.0.1:{port}/", cfg.out.display());
        let app = labelsweep_service::router(session, ui_dir);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        labelsweep_service::serve(listener, app, shutdown)
            .await
            .map_err(|e| Failure::Io(e.to_string()))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("LABELSWEEP_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.render().to_string().trim_end() }));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match &cli.command {
        Command::Diagnose(s) => diagnose(s),
        Command::Cluster(s) => cluster(s),
        Command::Sanitize(s) => sanitize(s),
        Command::Serve { settings, ui_dir } => serve(settings, ui_dir.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, body) = f.report();
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
