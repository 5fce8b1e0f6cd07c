//! HTTP/JSON review service over a pipeline output directory.
//!
//! The service reads stage artifacts and writes only two kinds of sidecar:
//! `parts/<scene>/selection.json` and `nav/reviews.json`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::annotation_paths;
use crate::ingest::files::{read_json, write_json};
use crate::ingest::manifest::{load_manifest, load_pose, Manifest};
use crate::ingest::vocab::Vocabulary;
use crate::nav::{EpisodeResult, SuiteReport};
use crate::parts::ClusterSelection;
use crate::pipeline::{load_cluster_index, load_episode_results, load_suite_report, Layout, SEMANTIC_STEM};
use crate::semmap::SemanticGrid;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub addr: SocketAddr,
    /// Static UI assets served under `/ui/`.
    pub ui: Option<PathBuf>,
}

struct FrameView {
    scene: String,
    id: String,
    /// Camera position on the floor plane.
    xy: Option<[f64; 2]>,
    rgb: Option<String>,
    ground_truth: Option<String>,
}

pub struct AppState {
    layout: Layout,
    data_root: PathBuf,
    ui: Option<PathBuf>,
    manifest: Manifest,
    vocab: Vocabulary,
    frames: Vec<FrameView>,
    scene_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    reviews_lock: Mutex<()>,
}

/// A 4xx/5xx reply with a JSON `{"error": ...}` body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::MissingPrerequisite(_) => StatusCode::NOT_FOUND,
            Error::Invalid { .. } | Error::InvalidCluster { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), e.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn url(prefix: &str, rel: &Path) -> String {
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    format!("{prefix}/{}", parts.join("/"))
}

impl AppState {
    pub fn load(manifest: &Path, out: &Path, ui: Option<PathBuf>) -> Result<Self> {
        let manifest = load_manifest(manifest)?;
        let vocab = Vocabulary::load(&manifest.vocabulary)?;
        let data_root = manifest.path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let rel = |p: &Option<PathBuf>| {
            p.as_ref()
                .and_then(|p| p.strip_prefix(&data_root).ok())
                .map(|r| url("/data", r))
        };
        let mut frames = Vec::new();
        for (scene, f) in manifest.frames() {
            let xy = match &f.pose {
                Some(p) => {
                    let t = *load_pose(p)?.translation();
                    Some([t.x, t.y])
                }
                None => None,
            };
            frames.push(FrameView {
                scene: scene.id.clone(),
                id: f.id.clone(),
                xy,
                rgb: rel(&f.rgb),
                ground_truth: rel(&f.ground_truth),
            });
        }
        Ok(Self {
            layout: Layout::new(out),
            data_root,
            ui,
            manifest,
            vocab,
            frames,
            scene_locks: Mutex::new(HashMap::new()),
            reviews_lock: Mutex::new(()),
        })
    }

    fn scene_lock(&self, scene: &str) -> Arc<Mutex<()>> {
        self.scene_locks
            .lock()
            .expect("lock table poisoned")
            .entry(scene.to_string())
            .or_default()
            .clone()
    }

    fn out_url(&self, path: &Path) -> Option<String> {
        path.strip_prefix(&self.layout.root).ok().map(|r| url("/files", r))
    }

    fn check_scene(&self, id: &str) -> std::result::Result<(), ApiError> {
        self.manifest
            .scene(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found(format!("unknown scene `{id}`")))
    }

    fn reviews(&self) -> Result<BTreeMap<String, u8>> {
        let path = self.layout.reviews();
        if path.exists() {
            read_json(&path)
        } else {
            Ok(BTreeMap::new())
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{id}/clusters", get(scene_clusters))
        .route("/api/scenes/{id}/cluster-selection", post(select_cluster))
        .route("/api/episodes", get(list_episodes))
        .route("/api/episodes/{id}", get(episode_detail))
        .route("/api/episodes/{id}/review", post(review_episode))
        .route("/api/frames/{id}/annotation", get(frame_annotation))
        .route("/files/{*path}", get(out_file))
        .route("/data/{*path}", get(data_file))
        .route("/ui/{*path}", get(ui_file))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

/// Binds `config.addr` and serves until the process is stopped.
pub async fn serve(config: ServeConfig) -> Result<()> {
    let state = Arc::new(AppState::load(&config.manifest, &config.out, config.ui.clone())?);
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| Error::io(config.addr.to_string(), e))?;
    log::info!("serving {} on http://{}", config.out.display(), config.addr);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(config.addr.to_string(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneArtifacts {
    pub fused: bool,
    pub verified: bool,
    pub map: bool,
    pub clusters: bool,
    pub selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub frames: usize,
    pub artifacts: SceneArtifacts,
}

async fn list_scenes(State(s): State<Arc<AppState>>) -> ApiResult<Vec<SceneSummary>> {
    let out = s
        .manifest
        .scenes
        .iter()
        .map(|scene| {
            let first = scene.frames.first().map(|f| f.id.as_str()).unwrap_or("");
            SceneSummary {
                id: scene.id.clone(),
                frames: scene.frames.len(),
                artifacts: SceneArtifacts {
                    fused: annotation_paths(&s.layout.fused(&scene.id), first)[0].exists(),
                    verified: annotation_paths(&s.layout.verified(&scene.id), first)[0].exists(),
                    map: SemanticGrid::paths(&s.layout.maps(&scene.id), SEMANTIC_STEM)[2].exists(),
                    clusters: s.layout.parts(&scene.id).join("clusters.json").exists(),
                    selection: s.layout.selection(&scene.id).exists(),
                },
            }
        })
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub index: usize,
    pub segments: usize,
    pub montage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClusters {
    pub scene: String,
    pub container: String,
    pub k: usize,
    pub clusters: Vec<ClusterView>,
    /// The persisted selection, which may be newer than the clustering run.
    pub selection: Option<ClusterSelection>,
}

async fn scene_clusters(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SceneClusters> {
    s.check_scene(&id)?;
    let index = load_cluster_index(&s.layout, &id)?;
    let dir = s.layout.parts(&id);
    let clusters = index
        .montages
        .iter()
        .enumerate()
        .map(|(i, m)| ClusterView {
            index: i,
            segments: index.sizes[i],
            montage: s.out_url(&dir.join(m)).expect("under out"),
        })
        .collect();
    let sidecar = s.layout.selection(&id);
    let selection = if sidecar.exists() {
        Some(read_json(&sidecar)?)
    } else {
        None
    };
    Ok(Json(SceneClusters {
        scene: id,
        container: index.container,
        k: index.clustering.k,
        clusters,
        selection,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReply {
    pub scene: String,
    pub selection: ClusterSelection,
    /// Part masks the parts stage will produce for this selection.
    pub part_masks: usize,
    pub path: String,
}

async fn select_cluster(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<ClusterSelection>, JsonRejection>,
) -> ApiResult<SelectionReply> {
    s.check_scene(&id)?;
    let Json(selection) = body?;
    if selection.part.trim().is_empty() {
        return Err(ApiError::bad_request("part name must not be empty"));
    }
    let index = load_cluster_index(&s.layout, &id)?;
    if selection.cluster >= index.clustering.k {
        return Err(ApiError::bad_request(format!(
            "cluster {} out of range for k = {}",
            selection.cluster, index.clustering.k
        )));
    }
    let path = s.layout.selection(&id);
    {
        let lock = s.scene_lock(&id);
        let _guard = lock.lock().expect("scene lock poisoned");
        write_json(&path, &selection)?;
    }
    Ok(Json(SelectionReply {
        scene: id,
        part_masks: index.sizes[selection.cluster],
        path: s.out_url(&path).expect("under out"),
        selection,
    }))
}

/// Manual success over reviewed episodes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualRun {
    pub seed: u64,
    pub reviewed: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualSummary {
    pub episodes: usize,
    pub reviewed: usize,
    /// Percentage of episodes with a verdict.
    pub coverage: f64,
    pub success_rate: Option<f64>,
    pub runs: Vec<ManualRun>,
}

pub fn manual_summary(results: &[EpisodeResult], reviews: &BTreeMap<String, u8>, seeds: &[u64]) -> ManualSummary {
    let rate = |s: usize, n: usize| (n > 0).then(|| s as f64 / n as f64 * 100.0);
    let tally = |filter: &dyn Fn(&EpisodeResult) -> bool| {
        let verdicts: Vec<u8> = results
            .iter()
            .filter(|r| filter(r))
            .filter_map(|r| reviews.get(&r.episode.id()).copied())
            .collect();
        (verdicts.len(), verdicts.iter().filter(|&&v| v == 1).count())
    };
    let (reviewed, successes) = tally(&|_| true);
    ManualSummary {
        episodes: results.len(),
        reviewed,
        coverage: rate(reviewed, results.len()).unwrap_or(0.0),
        success_rate: rate(successes, reviewed),
        runs: seeds
            .iter()
            .map(|&seed| {
                let (reviewed, successes) = tally(&|r| r.episode.seed == seed);
                ManualRun {
                    seed,
                    reviewed,
                    successes,
                    success_rate: rate(successes, reviewed),
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeListItem {
    pub id: String,
    pub scene: String,
    pub seed: u64,
    pub target: String,
    pub success: bool,
    pub review: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeList {
    pub automatic: SuiteReport,
    pub manual: ManualSummary,
    pub episodes: Vec<EpisodeListItem>,
}

fn episode_list(s: &AppState) -> Result<EpisodeList> {
    let results = load_episode_results(&s.layout)?;
    let automatic = load_suite_report(&s.layout)?;
    let reviews = s.reviews()?;
    let seeds: Vec<u64> = automatic.runs.iter().map(|r| r.seed).collect();
    let episodes = results
        .iter()
        .map(|r| {
            let id = r.episode.id();
            EpisodeListItem {
                review: reviews.get(&id).copied(),
                id,
                scene: r.episode.scene.clone(),
                seed: r.episode.seed,
                target: s.vocab.name(r.episode.target).unwrap_or("?").to_string(),
                success: r.success,
            }
        })
        .collect();
    Ok(EpisodeList {
        manual: manual_summary(&results, &reviews, &seeds),
        automatic,
        episodes,
    })
}

async fn list_episodes(State(s): State<Arc<AppState>>) -> ApiResult<EpisodeList> {
    Ok(Json(episode_list(&s)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDetail {
    pub id: String,
    pub target: String,
    pub result: EpisodeResult,
    pub map: Option<String>,
    pub final_view: Option<String>,
    pub review: Option<u8>,
}

fn find_episode(s: &AppState, id: &str) -> std::result::Result<EpisodeResult, ApiError> {
    load_episode_results(&s.layout)?
        .into_iter()
        .find(|r| r.episode.id() == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown episode `{id}`")))
}

async fn episode_detail(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<EpisodeDetail> {
    let result = find_episode(&s, &id)?;
    let scene = &result.episode.scene;
    let maps = s.layout.maps(scene);
    let render = maps.join(format!("{SEMANTIC_STEM}_render.png"));
    let final_view = if SemanticGrid::paths(&maps, SEMANTIC_STEM)[2].exists() {
        let grid = SemanticGrid::load(&maps, SEMANTIC_STEM)?;
        nearest_view(&s.frames, scene, grid.georef.cell_center(result.stop))
    } else {
        None
    };
    Ok(Json(EpisodeDetail {
        target: s.vocab.name(result.episode.target).unwrap_or("?").to_string(),
        map: render.exists().then(|| s.out_url(&render).expect("under out")),
        review: s.reviews()?.get(&id).copied(),
        final_view,
        id,
        result,
    }))
}

/// RGB of the frame whose camera is closest (in plan) to `at`.
fn nearest_view(frames: &[FrameView], scene: &str, at: [f64; 2]) -> Option<String> {
    frames
        .iter()
        .filter(|f| f.scene == scene && f.rgb.is_some())
        .filter_map(|f| f.xy.map(|xy| ((xy[0] - at[0]).hypot(xy[1] - at[1]), f)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
        .and_then(|(_, f)| f.rgb.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub success: u8,
}

async fn review_episode(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<ReviewRequest>, JsonRejection>,
) -> ApiResult<EpisodeList> {
    let Json(req) = body?;
    if req.success > 1 {
        return Err(ApiError::bad_request("success must be 0 or 1"));
    }
    find_episode(&s, &id)?;
    {
        let _guard = s.reviews_lock.lock().expect("reviews lock poisoned");
        let mut reviews = s.reviews()?;
        reviews.insert(id, req.success);
        write_json(&s.layout.reviews(), &reviews)?;
    }
    Ok(Json(episode_list(&s)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLayers {
    pub frame: String,
    pub scene: String,
    /// Layer name to PNG URL; only layers that exist are listed.
    pub layers: BTreeMap<String, String>,
}

async fn frame_annotation(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<AnnotationLayers> {
    let f = s
        .frames
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown frame `{id}`")))?;
    let mut layers = BTreeMap::new();
    if let Some(u) = &f.rgb {
        layers.insert("rgb".to_string(), u.clone());
    }
    if let Some(u) = &f.ground_truth {
        layers.insert("ground_truth".to_string(), u.clone());
    }
    for (stage, dir) in [
        ("fused", s.layout.fused(&f.scene)),
        ("verified", s.layout.verified(&f.scene)),
    ] {
        let [semantic, instance, _] = annotation_paths(&dir, &f.id);
        for (layer, path) in [("semantic", semantic), ("instance", instance)] {
            if path.exists() {
                layers.insert(format!("{stage}_{layer}"), s.out_url(&path).expect("under out"));
            }
        }
    }
    let parts = s
        .layout
        .parts(&f.scene)
        .join("parts")
        .join(format!("{}_parts.png", f.id));
    if parts.exists() {
        layers.insert("parts".to_string(), s.out_url(&parts).expect("under out"));
    }
    Ok(Json(AnnotationLayers {
        frame: f.id.clone(),
        scene: f.scene.clone(),
        layers,
    }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("csv") => "text/csv; charset=utf-8",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("jsonl") | Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Serves `rel` from under `root`, refusing anything that climbs out.
fn serve_file(root: &Path, rel: &str) -> Response {
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return ApiError::bad_request("invalid path").into_response();
    }
    let path = root.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => ApiError::not_found(format!("no file {}", rel.display())).into_response(),
    }
}

async fn out_file(State(s): State<Arc<AppState>>, UrlPath(rel): UrlPath<String>) -> Response {
    serve_file(&s.layout.root, &rel)
}

async fn data_file(State(s): State<Arc<AppState>>, UrlPath(rel): UrlPath<String>) -> Response {
    serve_file(&s.data_root, &rel)
}

async fn ui_file(State(s): State<Arc<AppState>>, UrlPath(rel): UrlPath<String>) -> Response {
    match &s.ui {
        Some(root) => serve_file(root, &rel),
        None => ApiError::not_found("no UI assets configured").into_response(),
    }
}
