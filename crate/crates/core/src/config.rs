//! Run configuration. Precedence is command-line flags, then a TOML config
//! file, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterParams, MergeAnchor};
use crate::error::{Error, Result};
use crate::similarity::FlagRules;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_SERVE_PORT: u16 = 8750;

/// Effective configuration, embedded verbatim in `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub image_emb: PathBuf,
    pub label_emb: PathBuf,
    pub out: PathBuf,
    pub cluster: ClusterParams,
    pub top_k: usize,
    pub rules: FlagRules,
    pub allow_partial: bool,
    pub serve_port: u16,
    /// Decision log; defaults to `<out>/decisions.jsonl`.
    pub decisions: Option<PathBuf>,
    pub html: bool,
}

impl RunConfig {
    /// Defaults for everything except the paths.
    pub fn with_paths(dataset: impl Into<PathBuf>, image_emb: impl Into<PathBuf>, label_emb: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            image_emb: image_emb.into(),
            label_emb: label_emb.into(),
            out: out.into(),
            cluster: ClusterParams::default(),
            top_k: DEFAULT_TOP_K,
            rules: FlagRules::default(),
            allow_partial: false,
            serve_port: DEFAULT_SERVE_PORT,
            decisions: None,
            html: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        if self.top_k < 1 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if !self.rules.gap_threshold.is_finite() || !self.rules.weak_threshold.is_finite() {
            return Err(Error::InvalidConfig("flag thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn decisions_path(&self) -> PathBuf {
        self.decisions
            .clone()
            .unwrap_or_else(|| self.out.join("decisions.jsonl"))
    }
}

/// Every setting optional; one layer of the precedence stack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PartialConfig {
    pub dataset: Option<PathBuf>,
    pub image_emb: Option<PathBuf>,
    pub label_emb: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub eps: Option<f64>,
    pub min_samples: Option<usize>,
    pub merge_threshold: Option<usize>,
    pub merge_anchor: Option<MergeAnchor>,
    pub top_k: Option<usize>,
    pub gap_threshold: Option<f64>,
    pub weak_threshold: Option<f64>,
    pub allow_partial: Option<bool>,
    pub serve_port: Option<u16>,
    pub decisions: Option<PathBuf>,
    pub html: Option<bool>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($field:ident),*) => {
        PartialConfig { $($field: $hi.$field.or($lo.$field)),* }
    };
}

impl PartialConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// `self` wins wherever it has a value.
    pub fn over(self, lower: PartialConfig) -> PartialConfig {
        overlay!(
            self, lower, dataset, image_emb, label_emb, out, eps, min_samples, merge_threshold,
            merge_anchor, top_k, gap_threshold, weak_threshold, allow_partial, serve_port, decisions, html
        )
    }

    /// Fills remaining gaps from `base` (or built-in defaults when a path is
    /// missing everywhere) and validates.
    pub fn resolve(self, base: Option<&RunConfig>) -> Result<RunConfig> {
        let missing = |name: &str| Error::InvalidConfig(format!("--{name} is required"));
        let path = |v: Option<PathBuf>, b: Option<&PathBuf>, name: &str| v.or_else(|| b.cloned()).ok_or_else(|| missing(name));
        let defaults = RunConfig::with_paths("", "", "", "");
        let base_ref = base.unwrap_or(&defaults);
        let cfg = RunConfig {
            dataset: path(self.dataset, base.map(|b| &b.dataset), "dataset")?,
            image_emb: path(self.image_emb, base.map(|b| &b.image_emb), "image-emb")?,
            label_emb: path(self.label_emb, base.map(|b| &b.label_emb), "label-emb")?,
            out: path(self.out, base.map(|b| &b.out), "out")?,
            cluster: ClusterParams {
                eps: self.eps.unwrap_or(base_ref.cluster.eps),
                min_samples: self.min_samples.unwrap_or(base_ref.cluster.min_samples),
                merge_threshold: self.merge_threshold.unwrap_or(base_ref.cluster.merge_threshold),
                merge_anchor: self.merge_anchor.unwrap_or(base_ref.cluster.merge_anchor),
            },
            top_k: self.top_k.unwrap_or(base_ref.top_k),
            rules: FlagRules {
                gap_threshold: self.gap_threshold.unwrap_or(base_ref.rules.gap_threshold),
                weak_threshold: self.weak_threshold.unwrap_or(base_ref.rules.weak_threshold),
            },
            allow_partial: self.allow_partial.unwrap_or(base_ref.allow_partial),
            serve_port: self.serve_port.unwrap_or(base_ref.serve_port),
            decisions: self.decisions.or_else(|| base_ref.decisions.clone()),
            html: self.html.unwrap_or(base_ref.html),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
