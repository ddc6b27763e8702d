use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use hint_core::em::{IterationRecord, ProgressEvent};
use hint_core::ingest::MaskVolume;
use hint_core::persistence::read_snapshot;
use hint_core::pipeline::{resume_analysis, Analysis, AnalysisSetup, RunHooks};
use hint_core::Result;
use serde::Serialize;
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::maps::{MapPayload, MapRef};

/// EM progress as reported by the status endpoint and the event stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EmStatus {
    pub live: bool,
    pub iteration: usize,
    pub termination: Option<&'static str>,
    pub history: Vec<HistoryEntry>,
    pub error: Option<String>,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub maxit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryEntry {
    pub iteration: usize,
    pub delta_global: f64,
    pub delta_local: f64,
    pub log_likelihood: f64,
}

impl From<&IterationRecord> for HistoryEntry {
    fn from(r: &IterationRecord) -> Self {
        HistoryEntry {
            iteration: r.iteration,
            delta_global: r.delta_global,
            delta_local: r.delta_local,
            log_likelihood: r.log_likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum EmEvent {
    #[serde(rename_all = "camelCase")]
    Iteration {
        iteration: usize,
        delta_global: f64,
        delta_local: f64,
        log_likelihood: f64,
        elapsed_secs: f64,
    },
    Finished {
        iteration: usize,
        reason: &'static str,
    },
    Failed {
        message: String,
    },
}

impl EmEvent {
    pub fn name(&self) -> &'static str {
        match self {
            EmEvent::Iteration { .. } => "iteration",
            EmEvent::Finished { .. } => "finished",
            EmEvent::Failed { .. } => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, EmEvent::Iteration { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredMask {
    /// 1-based.
    pub id: usize,
    pub source: String,
    pub cutoff: f64,
    pub count: usize,
    #[serde(skip)]
    pub mask: MaskVolume,
}

/// One analysis folder being served.
pub struct Session {
    pub id: String,
    dir: PathBuf,
    pub setup: AnalysisSetup,
    fitted: RwLock<Option<Arc<Analysis>>>,
    cache: RwLock<HashMap<String, Arc<MapPayload>>>,
    masks: RwLock<Vec<StoredMask>>,
    status: Mutex<EmStatus>,
    stop: Arc<AtomicBool>,
    events: broadcast::Sender<EmEvent>,
}

impl Session {
    /// Loads the setup and, if present, the finished fit.
    pub fn open(dir: impl AsRef<Path>) -> Result<Arc<Self>> {
        let dir = dir.as_ref().to_path_buf();
        let setup = AnalysisSetup::open(&dir)?;
        let fitted = if setup.is_fitted() {
            Some(Arc::new(Analysis::open(&dir)?))
        } else {
            None
        };
        let history = match &fitted {
            Some(a) => a.state.history.iter().map(HistoryEntry::from).collect(),
            None => Vec::new(),
        };
        let status = EmStatus {
            live: false,
            iteration: fitted.as_ref().map(|a| a.state.iteration).unwrap_or(0),
            termination: fitted.as_ref().and_then(|a| a.state.termination).map(|t| t.as_str()),
            history,
            error: None,
            epsilon1: setup.config.epsilon1,
            epsilon2: setup.config.epsilon2,
            maxit: setup.config.maxit,
        };
        let (events, _) = broadcast::channel(1024);
        Ok(Arc::new(Session {
            id: uuid::Uuid::new_v4().to_string(),
            dir,
            setup,
            fitted: RwLock::new(fitted),
            cache: RwLock::new(HashMap::new()),
            masks: RwLock::new(Vec::new()),
            status: Mutex::new(status),
            stop: Arc::new(AtomicBool::new(false)),
            events,
        }))
    }

    pub fn prefix(&self) -> &str {
        &self.setup.layout.prefix
    }

    pub fn mask(&self) -> &MaskVolume {
        &self.setup.mask
    }

    pub fn fitted(&self) -> Result<Arc<Analysis>, ApiError> {
        self.fitted
            .read()
            .expect("fitted lock")
            .clone()
            .ok_or_else(|| ApiError::unavailable("the analysis has no finished fit yet"))
    }

    pub fn status(&self) -> EmStatus {
        self.status.lock().expect("status lock").clone()
    }

    /// Status plus a receiver that sees every later event.
    pub fn subscribe(&self) -> (EmStatus, broadcast::Receiver<EmEvent>) {
        let st = self.status.lock().expect("status lock");
        (st.clone(), self.events.subscribe())
    }

    /// Cached payload of a model map.
    pub fn map(&self, r: MapRef) -> Result<Arc<MapPayload>, ApiError> {
        let key = r.key();
        if let Some(p) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let a = self.fitted()?;
        let p = Arc::new(MapPayload::from_maps(&[r.compute(&a)?], self.mask().dims()));
        self.cache.write().expect("cache lock").insert(key, p.clone());
        Ok(p)
    }

    pub fn masks(&self) -> Vec<StoredMask> {
        self.masks.read().expect("mask lock").clone()
    }

    pub fn stored_mask(&self, id: usize) -> Result<StoredMask, ApiError> {
        self.masks
            .read()
            .expect("mask lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("mask {} does not exist", id + 1)))
    }

    pub fn add_mask(&self, source: String, cutoff: f64, mask: MaskVolume) -> StoredMask {
        let mut masks = self.masks.write().expect("mask lock");
        let m = StoredMask {
            id: masks.len() + 1,
            source,
            cutoff,
            count: mask.count(),
            mask,
        };
        masks.push(m.clone());
        m
    }

    /// Continues EM from the latest snapshot on a worker thread.
    pub fn start_live(self: &Arc<Self>, maxit: Option<usize>) -> Result<std::thread::JoinHandle<()>, ApiError> {
        let history = match self.setup.layout.snapshots()?.pop() {
            Some((_, path)) => read_snapshot::<f64>(&path)?.state.history,
            None => return Err(ApiError::conflict("no snapshot to resume from")),
        };
        {
            let mut st = self.status.lock().expect("status lock");
            if st.live {
                return Err(ApiError::conflict("an EM run is already live"));
            }
            st.live = true;
            st.termination = None;
            st.error = None;
            st.iteration = history.last().map(|h| h.iteration).unwrap_or(0);
            st.history = history.iter().map(HistoryEntry::from).collect();
            if let Some(m) = maxit {
                st.maxit = m;
            }
        }
        self.stop.store(false, Ordering::SeqCst);
        let me = self.clone();
        Ok(std::thread::spawn(move || me.live_run(maxit)))
    }

    fn live_run(&self, maxit: Option<usize>) {
        let mut progress = |e: &ProgressEvent| {
            let ev = EmEvent::Iteration {
                iteration: e.iteration,
                delta_global: e.delta_global,
                delta_local: e.delta_local,
                log_likelihood: e.log_likelihood,
                elapsed_secs: e.elapsed_secs,
            };
            let mut st = self.status.lock().expect("status lock");
            st.iteration = e.iteration;
            st.history.push(HistoryEntry {
                iteration: e.iteration,
                delta_global: e.delta_global,
                delta_local: e.delta_local,
                log_likelihood: e.log_likelihood,
            });
            let _ = self.events.send(ev);
        };
        let hooks = RunHooks {
            progress: Some(&mut progress),
            stop: Some(&self.stop),
        };
        let result = resume_analysis(&self.dir, None, maxit, hooks);
        let mut st = self.status.lock().expect("status lock");
        st.live = false;
        match result {
            Ok(a) => {
                let reason = a.state.termination.map(|t| t.as_str()).unwrap_or("max-iterations");
                st.termination = Some(reason);
                st.iteration = a.state.iteration;
                st.history = a.state.history.iter().map(HistoryEntry::from).collect();
                *self.fitted.write().expect("fitted lock") = Some(Arc::new(a));
                self.cache.write().expect("cache lock").clear();
                let _ = self.events.send(EmEvent::Finished {
                    iteration: st.iteration,
                    reason,
                });
            }
            Err(e) => {
                st.error = Some(e.to_string());
                let _ = self.events.send(EmEvent::Failed { message: e.to_string() });
            }
        }
    }

    /// Requests a stop at the end of the current iteration.
    pub fn request_stop(&self) -> Result<(), ApiError> {
        if !self.status.lock().expect("status lock").live {
            return Err(ApiError::conflict("no EM run is live"));
        }
        self.stop.store(true, Ordering::SeqCst);
        Ok(())
    }
}
