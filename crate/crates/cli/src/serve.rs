//! HTTP scoring service over a generated dataset.
//!
//! Clients fetch prompts and media, then post responses for scoring. Ground
//! truth, permutations and generation details never leave the process. Every
//! score is appended to a JSONL log, and the running aggregates are rebuilt
//! from that log on startup.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use jigsaw_core::manifest::{dataset_root, read_dataset, ManifestRecord};
use jigsaw_core::reward::{parse_rational, RewardSpec, Validity};
use jigsaw_core::scoring::{score_record, Aggregate, Aggregator, ScoreLine};
use jigsaw_core::video::is_frame_file;
use jigsaw_core::Modality;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SCORE_LOG: &str = "scores.jsonl";

/// Task as shown to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub modality: Modality,
    pub k: usize,
    pub prompt: String,
    pub media: Vec<MediaView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaView {
    pub path: String,
    /// One URL for an image; one per frame for a video clip.
    pub urls: Vec<String>,
}

/// The fields replay needs from a score log line.
#[derive(Deserialize)]
struct LoggedScore {
    validity: Validity,
    /// Exact total as a fraction, so replay reproduces the aggregates.
    total_exact: String,
}

struct ScoreLog {
    file: File,
    aggregate: Aggregator,
}

pub struct ServeState {
    records: HashMap<String, ManifestRecord>,
    /// Media entries listed in the manifest; nothing else is served.
    media: HashSet<String>,
    root: PathBuf,
    spec: RewardSpec,
    log: Mutex<ScoreLog>,
}

fn replay(path: &Path) -> Result<Aggregator, CliError> {
    let mut agg = Aggregator::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(agg),
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from a crash is skipped rather than fatal
        let parsed: LoggedScore = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{}:{}: skipping unreadable score line: {e}", path.display(), i + 1);
                continue;
            }
        };
        let total = parse_rational(&parsed.total_exact)
            .map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
        agg.add(total, parsed.validity);
    }
    Ok(agg)
}

impl ServeState {
    /// Loads the dataset at `dataset` and replays `score_log` (default
    /// `<dataset>/scores.jsonl`).
    pub fn open(dataset: &Path, spec: RewardSpec, score_log: Option<&Path>) -> Result<Self, CliError> {
        let root = dataset_root(dataset);
        let records = read_dataset(dataset)?
            .into_iter()
            .map(|r| (r.task_id.clone(), r))
            .collect::<HashMap<_, _>>();
        let media = records.values().flat_map(|r| r.media.iter().cloned()).collect();
        let log_path = score_log.map(Path::to_path_buf).unwrap_or_else(|| root.join(DEFAULT_SCORE_LOG));
        let aggregate = replay(&log_path)?;
        let log_err = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", log_path.display()));
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(log_err)?;
        // start a fresh line after a torn write
        let len = file.metadata().map_err(log_err)?.len();
        if len > 0 {
            let mut last = [0u8];
            let mut reader = File::open(&log_path).map_err(log_err)?;
            reader.seek(SeekFrom::Start(len - 1)).map_err(log_err)?;
            reader.read_exact(&mut last).map_err(log_err)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(log_err)?;
            }
        }
        log::info!(
            "loaded {} tasks; replayed {} scores from {}",
            records.len(),
            aggregate.count(),
            log_path.display()
        );
        Ok(ServeState {
            records,
            media,
            root,
            spec,
            log: Mutex::new(ScoreLog { file, aggregate }),
        })
    }

    pub fn task_count(&self) -> usize {
        self.records.len()
    }

    pub fn task_view(&self, id: &str) -> Option<TaskView> {
        let r = self.records.get(id)?;
        let media = r
            .media
            .iter()
            .map(|rel| MediaView {
                path: rel.clone(),
                urls: media_urls(&self.root, rel),
            })
            .collect();
        Some(TaskView {
            task_id: r.task_id.clone(),
            modality: r.modality,
            k: r.k,
            prompt: r.prompt.clone(),
            media,
        })
    }

    /// Scores a response and appends it to the log. The aggregate update and
    /// the log write happen under one lock, so they never disagree.
    pub fn score(&self, id: &str, response_text: &str) -> Result<Option<ScoreLine>, CliError> {
        let Some(record) = self.records.get(id) else {
            return Ok(None);
        };
        let line = score_record(record, response_text, &self.spec)?;
        let mut entry = serde_json::to_value(&line).map_err(|e| CliError::Runtime(e.to_string()))?;
        entry["total_exact"] = line.breakdown.total.to_string().into();
        let mut text = entry.to_string();
        text.push('\n');
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        log.file
            .write_all(text.as_bytes())
            .and_then(|_| log.file.flush())
            .map_err(|e| CliError::Runtime(format!("score log: {e}")))?;
        log.aggregate.add_breakdown(&line.breakdown);
        Ok(Some(line))
    }

    pub fn stats(&self) -> Aggregate {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).aggregate.snapshot()
    }

    /// Resolves a `/media/` path. Only files listed as task media (or frames
    /// inside a listed clip directory) resolve; manifests, logs and previews
    /// stay private.
    pub fn media_file(&self, rel: &str) -> Option<PathBuf> {
        let listed = self.media.contains(rel)
            || rel
                .rsplit_once('/')
                .is_some_and(|(dir, name)| self.media.contains(dir) && is_frame_file(Path::new(name)));
        let rel = Path::new(rel);
        if !listed || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return None;
        }
        let path = self.root.join(rel);
        let canonical = path.canonicalize().ok()?;
        let root = self.root.canonicalize().ok()?;
        (canonical.starts_with(&root) && canonical.is_file()).then_some(canonical)
    }
}

fn media_urls(root: &Path, rel: &str) -> Vec<String> {
    let path = root.join(rel);
    if path.is_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&path)
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        names.into_iter().map(|n| format!("/media/{rel}/{n}")).collect()
    } else {
        vec![format!("/media/{rel}")]
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn healthz(State(state): State<Arc<ServeState>>) -> Response {
    Json(serde_json::json!({ "status": "ok", "tasks": state.task_count() })).into_response()
}

async fn get_task(State(state): State<Arc<ServeState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.task_view(&id) {
        Some(view) => Json(view).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown task {id}")),
    }
}

async fn post_score(State(state): State<Arc<ServeState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")),
    };
    let Some(text) = value.get("response_text").and_then(|v| v.as_str()) else {
        return error(StatusCode::BAD_REQUEST, "missing string field response_text");
    };
    let state = state.clone();
    let text = text.to_string();
    let result = tokio::task::spawn_blocking(move || state.score(&id, &text).map(|l| (id, l))).await;
    match result {
        Ok(Ok((_, Some(line)))) => Json(line).into_response(),
        Ok(Ok((id, None))) => error(StatusCode::NOT_FOUND, format!("unknown task {id}")),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_stats(State(state): State<Arc<ServeState>>) -> Response {
    Json(state.stats()).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn get_media(State(state): State<Arc<ServeState>>, UrlPath(rel): UrlPath<String>) -> Response {
    let Some(path) = state.media_file(&rel) else {
        return error(StatusCode::NOT_FOUND, "no such media");
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "no such media"),
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/score", post(post_score))
        .route("/stats", get(get_stats))
        .route("/media/{*path}", get(get_media))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn run_server(state: Arc<ServeState>, addr: &str) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
    log::info!("listening on http://{local}");
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
}
