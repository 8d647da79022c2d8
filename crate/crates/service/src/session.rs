//! Session state: immutable inputs plus a swappable snapshot of the current run.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use labelsweep_core::pipeline::{self, compute, compute_with_diagnostics, read_run_config, Computed, Inputs};
use labelsweep_core::sanitize::{append_decision, apply_curator_decisions, check_decision};
use labelsweep_core::{ClusterParams, Decision, Error, RunConfig};

/// One version of the run. Never mutated once published.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub cfg: RunConfig,
    pub computed: Computed,
}

#[derive(Debug)]
pub enum SessionError {
    Busy,
    StaleVersion { expected: u64, current: u64 },
    Core(Error),
}

impl From<Error> for SessionError {
    fn from(e: Error) -> Self {
        SessionError::Core(e)
    }
}

pub struct Session {
    inputs: Inputs,
    snapshot: RwLock<Arc<Snapshot>>,
    reclustering: AtomicBool,
    // serializes every mutation (re-cluster commit, decision append)
    gate: tokio::sync::Mutex<()>,
}

struct BusyFlag<'a>(&'a AtomicBool);

impl Drop for BusyFlag<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Session {
    /// Loads inputs, recomputes the run and replays the decision log. Version 1.
    pub fn open(cfg: RunConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let inputs = pipeline::load_inputs(&cfg)?;
        let computed = compute(&cfg, &inputs, &cfg.cluster)?;
        Ok(Session {
            inputs,
            snapshot: RwLock::new(Arc::new(Snapshot {
                version: 1,
                cfg,
                computed,
            })),
            reclustering: AtomicBool::new(false),
            gate: tokio::sync::Mutex::new(()),
        })
    }

    /// Opens the run stored in `dir` (its `run.json` supplies the configuration).
    pub fn open_run_dir(dir: &Path) -> Result<Self, Error> {
        let mut cfg = read_run_config(dir)?;
        cfg.out = dir.to_path_buf();
        Session::open(cfg)
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn is_reclustering(&self) -> bool {
        self.reclustering.load(Ordering::Acquire)
    }

    fn publish(&self, snap: Snapshot) -> Arc<Snapshot> {
        let snap = Arc::new(snap);
        *self.snapshot.write().expect("snapshot lock") = snap.clone();
        snap
    }

    fn check_version(current: u64, expected: Option<u64>) -> Result<(), SessionError> {
        match expected {
            Some(v) if v != current => Err(SessionError::StaleVersion { expected: v, current }),
            _ => Ok(()),
        }
    }

    /// Re-clusters with `params`, re-applies the decision log and persists the
    /// new version under `<out>/versions/v<N>/` as well as at the top level.
    pub async fn recluster(
        self: &Arc<Self>,
        params: ClusterParams,
        expected_version: Option<u64>,
    ) -> Result<Arc<Snapshot>, SessionError> {
        params.validate()?;
        if self
            .reclustering
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(SessionError::Busy);
        }
        let _flag = BusyFlag(&self.reclustering);
        let _gate = self.gate.lock().await;
        let current = self.snapshot();
        Self::check_version(current.version, expected_version)?;

        let this = self.clone();
        let next = tokio::task::spawn_blocking(move || -> Result<Snapshot, Error> {
            let mut cfg = current.cfg.clone();
            cfg.cluster = params;
            let version = current.version + 1;
            let computed = compute_with_diagnostics(&cfg, &this.inputs, &params, current.computed.diagnostics.clone())?;
            pipeline::write_clusters(&cfg.out.join("versions").join(format!("v{version}")), &computed.clusters)?;
            pipeline::write_clusters(&cfg.out, &computed.clusters)?;
            pipeline::write_run(&cfg, &this.inputs, &computed)?;
            Ok(Snapshot { version, cfg, computed })
        })
        .await
        .expect("re-cluster task panicked")?;
        tracing::info!(
            version = next.version,
            clusters = next.computed.clusters.cluster_count,
            "re-clustered"
        );
        Ok(self.publish(next))
    }

    /// Validates, durably appends and applies one curator decision.
    pub async fn decide(&self, decision: Decision, expected_version: Option<u64>) -> Result<Arc<Snapshot>, SessionError> {
        let _gate = self.gate.lock().await;
        let current = self.snapshot();
        Self::check_version(current.version, expected_version)?;
        check_decision(&decision, &current.computed.run, &self.inputs.dataset.vocabulary)?;

        let path = current.cfg.decisions_path();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        append_decision(&path, &decision)?;
        let (run, _) = apply_curator_decisions(
            current.computed.run.clone(),
            std::slice::from_ref(&decision),
            &self.inputs.dataset.vocabulary,
            &self.inputs.store,
        )?;
        let computed = Computed {
            run,
            ..current.computed.clone()
        };
        pipeline::write_run(&current.cfg, &self.inputs, &computed)?;
        Ok(self.publish(Snapshot {
            version: current.version,
            cfg: current.cfg.clone(),
            computed,
        }))
    }
}
