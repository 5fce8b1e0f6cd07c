//! Stage orchestration over a manifest and a fixed output layout.
//!
//! ```text
//! <out>/fused/<scene>/      <frame>_semantic.png, _instance.png, _instances.json
//! <out>/verified/<scene>/   same layout as fused/
//! <out>/eval/               report.json, report.txt
//! <out>/maps/<scene>/       semantic.{png,json}, semantic_height.png, semantic_render.png,
//!                           embeddings.{fseg,json} when frames carry embeddings
//! <out>/nav/                episodes.csv, episodes.json, summary.json; reviews.json (sidecar)
//! <out>/parts/<scene>/      clusters.json, cluster_<i>.png, parts/; selection.json (sidecar)
//! <out>/logs/<stage>.jsonl  per-item timing and warnings
//! ```
//!
//! Every artifact except the logs is a pure function of the inputs and the
//! stage configuration, independent of the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accumulate_confusion, ConfusionMatrix, EvalReport};
use crate::fuse::{
    annotation_paths, fuse_frame, load_annotation, save_annotation, FrameInputs, FuseConfig, FusedAnnotation,
};
use crate::geometry::{Intrinsics, Pose};
use crate::ingest::features::{FeatureTable, FloatMatrix, SegmentKey};
use crate::ingest::files::{
    load_depth, load_label_image, load_rgb_png, read_json, save_rgb_png, write_atomic, write_json,
};
use crate::ingest::manifest::{load_intrinsics, load_manifest, load_pose, FrameRecord, Manifest, SceneRecord};
use crate::ingest::records::{DetectionSet, SegmentSet};
use crate::ingest::vocab::Vocabulary;
use crate::mv::{apply_verified, verify_frame, CloudCache, MvConfig, View};
use crate::nav::{
    run_suite, write_episode_csv, EpisodeResult, EpisodeRow, GoalSource, NavScene, SuiteConfig, SuiteReport,
};
use crate::parts::{
    backproject_cluster, candidate_segments, cluster_montage, kmeans, save_montage, ClusterSelection, Clustering,
    KMeansConfig,
};
use crate::raster::{DepthImage, Raster};
use crate::semmap::{build_embedding_grid, build_semantic_grid, EmbeddingGrid, MapConfig, MapFrame, SemanticGrid};

pub const SEMANTIC_STEM: &str = "semantic";
pub const EMBEDDING_STEM: &str = "embeddings";
pub const SELECTION_FILE: &str = "selection.json";
pub const REVIEWS_FILE: &str = "reviews.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fuse,
    Verify,
    Eval,
    Map,
    Navigate,
    Parts,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Fuse,
        Stage::Verify,
        Stage::Eval,
        Stage::Map,
        Stage::Navigate,
        Stage::Parts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fuse => "fuse",
            Stage::Verify => "verify",
            Stage::Eval => "eval",
            Stage::Map => "map",
            Stage::Navigate => "navigate",
            Stage::Parts => "parts",
        }
    }
}

/// Where every stage reads and writes under the output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn fused(&self, scene: &str) -> PathBuf {
        self.root.join("fused").join(scene)
    }

    pub fn verified(&self, scene: &str) -> PathBuf {
        self.root.join("verified").join(scene)
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn maps(&self, scene: &str) -> PathBuf {
        self.root.join("maps").join(scene)
    }

    pub fn nav(&self) -> PathBuf {
        self.root.join("nav")
    }

    pub fn parts(&self, scene: &str) -> PathBuf {
        self.root.join("parts").join(scene)
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn selection(&self, scene: &str) -> PathBuf {
        self.parts(scene).join(SELECTION_FILE)
    }

    pub fn reviews(&self) -> PathBuf {
        self.nav().join(REVIEWS_FILE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub resolution: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub padding: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        let d = MapConfig::default();
        Self {
            resolution: d.resolution,
            z_min: d.z_min,
            z_max: d.z_max,
            padding: d.padding,
        }
    }
}

impl MapParams {
    pub fn config(&self, vocab: &Vocabulary) -> MapConfig {
        MapConfig {
            resolution: self.resolution,
            z_min: self.z_min,
            z_max: self.z_max,
            padding: self.padding,
            ..MapConfig::for_vocabulary(vocab)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavParams {
    pub seeds: Vec<u64>,
    pub episodes_per_scene: usize,
    pub success_radius: f64,
    pub goal_source: GoalSource,
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            episodes_per_scene: 1,
            success_radius: crate::nav::DEFAULT_SUCCESS_RADIUS,
            goal_source: GoalSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartsParams {
    pub container: String,
    pub k: usize,
    pub seed: u64,
    pub kmeans: KMeansConfig,
    /// Overrides the scene's selection sidecar when set.
    pub selection: Option<ClusterSelection>,
    pub tile: usize,
}

impl Default for PartsParams {
    fn default() -> Self {
        Self {
            container: "cabinet".into(),
            k: 3,
            seed: 0,
            kmeans: KMeansConfig::default(),
            selection: None,
            tile: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// 0 means the available parallelism.
    pub workers: usize,
    pub fuse: FuseConfig,
    pub mv: MvConfig,
    pub map: MapParams,
    pub nav: NavParams,
    pub parts: PartsParams,
}

impl StageConfig {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            out: out.into(),
            workers: 0,
            fuse: FuseConfig::default(),
            mv: MvConfig::default(),
            map: MapParams::default(),
            nav: NavParams::default(),
            parts: PartsParams::default(),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.out)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.fuse;
        if !(0.0..=1.0).contains(&f.prompt_threshold) || !(0.0..=1.0).contains(&f.min_detection_score) {
            return Err(Error::invalid("stage config", "fusion thresholds must lie in [0, 1]"));
        }
        if !(self.mv.depth_tolerance > 0.0) {
            return Err(Error::invalid("stage config", "depth tolerance must be positive"));
        }
        if !(self.map.resolution > 0.0) || !(self.map.z_min <= self.map.z_max) || self.map.padding < 0.0 {
            return Err(Error::invalid(
                "stage config",
                "map resolution, height band or padding out of range",
            ));
        }
        if self.nav.seeds.is_empty() || !(self.nav.success_radius >= 0.0) {
            return Err(Error::invalid(
                "stage config",
                "navigation needs seeds and a nonnegative radius",
            ));
        }
        if self.parts.k == 0 || self.parts.tile == 0 {
            return Err(Error::invalid("stage config", "parts k and tile must be positive"));
        }
        Ok(())
    }
}

/// One line of `logs/<stage>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub scene: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub ms: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub items: usize,
    pub warnings: usize,
}

/// A loaded manifest plus its vocabulary.
pub struct Context {
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub layout: Layout,
}

impl Context {
    pub fn load(config: &StageConfig) -> Result<Self> {
        config.validate()?;
        let manifest = load_manifest(&config.manifest)?;
        let vocab = Vocabulary::load(&manifest.vocabulary)?;
        Ok(Self {
            manifest,
            vocab,
            layout: config.layout(),
        })
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    let n = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))
}

fn write_log(layout: &Layout, stage: Stage, mut records: Vec<LogRecord>) -> Result<usize> {
    records.sort_by(|a, b| (&a.scene, &a.item).cmp(&(&b.scene, &b.item)));
    let mut text = String::new();
    let mut warnings = 0;
    for r in &records {
        warnings += r.warnings.len();
        for w in &r.warnings {
            log::warn!("{} {}/{}: {w}", r.stage, r.scene, r.item.as_deref().unwrap_or("-"));
        }
        text.push_str(&serde_json::to_string(r).expect("log record serializes"));
        text.push('\n');
    }
    write_atomic(&layout.logs().join(format!("{}.jsonl", stage.name())), text.as_bytes())?;
    Ok(warnings)
}

fn timed<T>(
    stage: Stage,
    scene: &str,
    item: Option<&str>,
    f: impl FnOnce() -> Result<(T, Vec<String>)>,
) -> Result<(T, LogRecord)> {
    let t0 = Instant::now();
    let (value, warnings) = f()?;
    Ok((
        value,
        LogRecord {
            stage: stage.name().into(),
            scene: scene.into(),
            item: item.map(String::from),
            ms: t0.elapsed().as_secs_f64() * 1e3,
            warnings,
        },
    ))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPrerequisite(path))
    }
}

/// Runs one stage.
pub fn run_stage(stage: Stage, config: &StageConfig) -> Result<StageOutcome> {
    let ctx = Context::load(config)?;
    let pool = pool(config.workers)?;
    let (items, records) = pool.install(|| match stage {
        Stage::Fuse => fuse_stage(&ctx, config),
        Stage::Verify => verify_stage(&ctx, config),
        Stage::Eval => eval_stage(&ctx),
        Stage::Map => map_stage(&ctx, config),
        Stage::Navigate => navigate_stage(&ctx, config),
        Stage::Parts => parts_stage(&ctx, config),
    })?;
    let warnings = write_log(&ctx.layout, stage, records)?;
    log::info!("{}: {items} items, {warnings} warnings", stage.name());
    Ok(StageOutcome { stage, items, warnings })
}

/// Runs the stages in order, stopping at the first error.
pub fn run_all(stages: &[Stage], config: &StageConfig) -> Result<Vec<StageOutcome>> {
    stages.iter().map(|&s| run_stage(s, config)).collect()
}

type StageRun = Result<(usize, Vec<LogRecord>)>;

fn fuse_stage(ctx: &Context, config: &StageConfig) -> StageRun {
    let jobs: Vec<(&SceneRecord, &FrameRecord)> = ctx.manifest.frames().collect();
    let records = jobs
        .par_iter()
        .map(|&(scene, frame)| {
            let (_, rec) = timed(Stage::Fuse, &scene.id, Some(&frame.id), || {
                let segments = SegmentSet::load(frame.require(&frame.segments, "segments")?)?;
                let semantic = load_label_image(frame.require(&frame.semantic, "semantic")?)?;
                let detections = frame.detections.as_deref().map(DetectionSet::load).transpose()?;
                let manual = frame.manual_boxes.as_deref().map(DetectionSet::load).transpose()?;
                let fused = fuse_frame(
                    FrameInputs {
                        segments: &segments,
                        semantic: &semantic,
                        detections: detections.as_ref(),
                        manual_boxes: manual.as_ref(),
                    },
                    &ctx.vocab,
                    &config.fuse,
                )?;
                save_annotation(&fused.annotation, &ctx.layout.fused(&scene.id), &frame.id)?;
                let warnings = fused
                    .skipped
                    .iter()
                    .map(|s| format!("detection {} ({:?}) skipped: {}", s.index, s.provenance, s.reason))
                    .collect();
                Ok(((), warnings))
            })?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((jobs.len(), records))
}

/// Geometry of one frame.
struct Posed {
    depth: DepthImage,
    intrinsics: Intrinsics,
    pose: Pose,
}

fn load_posed(frame: &FrameRecord, depth_scale: f64) -> Result<Posed> {
    Ok(Posed {
        depth: load_depth(frame.require(&frame.depth, "depth")?, depth_scale)?,
        intrinsics: load_intrinsics(frame.require(&frame.intrinsics, "intrinsics")?)?,
        pose: load_pose(frame.require(&frame.pose, "pose")?)?,
    })
}

fn load_stage_annotations(dir: &Path, scene: &SceneRecord) -> Result<Vec<FusedAnnotation>> {
    scene
        .frames
        .par_iter()
        .map(|f| {
            require(annotation_paths(dir, &f.id)[0].clone())?;
            load_annotation(dir, &f.id)
        })
        .collect()
}

fn verify_stage(ctx: &Context, config: &StageConfig) -> StageRun {
    let mut records = Vec::new();
    let mut items = 0;
    for scene in &ctx.manifest.scenes {
        let fused = load_stage_annotations(&ctx.layout.fused(&scene.id), scene)?;
        let posed: Vec<Posed> = scene
            .frames
            .par_iter()
            .map(|f| load_posed(f, ctx.manifest.depth_scale))
            .collect::<Result<_>>()?;
        let views: Vec<View<'_>> = scene
            .frames
            .iter()
            .zip(&fused)
            .zip(&posed)
            .map(|((f, a), p)| View {
                id: &f.id,
                labels: &a.semantic,
                depth: Some(&p.depth),
                intrinsics: Some(&p.intrinsics),
                pose: Some(&p.pose),
            })
            .collect();
        let cache = CloudCache::new();
        let out_dir = ctx.layout.verified(&scene.id);
        let multiview = ctx.manifest.multiview;
        let scene_records = views
            .par_iter()
            .zip(&fused)
            .map(|(view, ann)| {
                let (_, rec) = timed(Stage::Verify, &scene.id, Some(view.id), || {
                    let mut warnings = Vec::new();
                    let out = if multiview {
                        let verified = verify_frame(view, &views, &config.mv, Some(&cache))?;
                        let changed = verified
                            .as_slice()
                            .iter()
                            .zip(ann.semantic.as_slice())
                            .filter(|(a, b)| a != b)
                            .count();
                        if changed > 0 {
                            warnings.push(format!("{changed} pixels relabelled"));
                        }
                        apply_verified(ann, &verified)?
                    } else {
                        warnings.push("manifest is not multi-view; annotation copied unchanged".into());
                        ann.clone()
                    };
                    save_annotation(&out, &out_dir, view.id)?;
                    Ok(((), warnings))
                })?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        items += scene.frames.len();
        records.extend(scene_records);
    }
    Ok((items, records))
}

/// Verified annotations when the verify stage has run for this scene, else
/// fused ones.
fn annotation_source(layout: &Layout, scene: &SceneRecord) -> Result<(&'static str, PathBuf)> {
    let first = scene.frames.first().map(|f| f.id.as_str()).unwrap_or("");
    let verified = layout.verified(&scene.id);
    if annotation_paths(&verified, first)[0].exists() {
        return Ok(("verified", verified));
    }
    let fused = layout.fused(&scene.id);
    require(annotation_paths(&fused, first)[0].clone())?;
    Ok(("fused", fused))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub sources: BTreeMap<String, String>,
    pub overall: EvalReport,
    pub scenes: BTreeMap<String, EvalReport>,
}

fn eval_stage(ctx: &Context) -> StageRun {
    let mut records = Vec::new();
    let mut overall = ConfusionMatrix::new();
    let mut total_frames = 0;
    let mut scenes = BTreeMap::new();
    let mut sources = BTreeMap::new();
    for scene in &ctx.manifest.scenes {
        let (source, dir) = annotation_source(&ctx.layout, scene)?;
        sources.insert(scene.id.clone(), source.to_string());
        let scored: Vec<&FrameRecord> = scene.frames.iter().filter(|f| f.ground_truth.is_some()).collect();
        let per_frame = scored
            .par_iter()
            .map(|f| {
                timed(Stage::Eval, &scene.id, Some(&f.id), || {
                    require(annotation_paths(&dir, &f.id)[0].clone())?;
                    let pred = load_annotation(&dir, &f.id)?.semantic;
                    let gt = load_label_image(f.require(&f.ground_truth, "ground truth")?)?;
                    let mut cm = ConfusionMatrix::new();
                    accumulate_confusion(&pred, &gt, &mut cm)?;
                    Ok((cm, Vec::new()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cm = ConfusionMatrix::new();
        for (frame_cm, rec) in per_frame {
            cm.merge(&frame_cm);
            records.push(rec);
        }
        overall.merge(&cm);
        total_frames += scored.len();
        scenes.insert(scene.id.clone(), EvalReport::build(&cm, &ctx.vocab, scored.len()));
    }
    let report = EvalOutput {
        sources,
        overall: EvalReport::build(&overall, &ctx.vocab, total_frames),
        scenes,
    };
    let dir = ctx.layout.eval();
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(&dir.join("report.txt"), report.overall.to_table().as_bytes())?;
    Ok((total_frames, records))
}

/// A fixed colour per class id for map renders.
pub fn class_color(id: u16) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let h = (id as u32).wrapping_mul(0x9E37_79B1);
    [(h >> 24) as u8 | 0x30, (h >> 16) as u8 | 0x30, (h >> 8) as u8 | 0x30]
}

pub fn render_grid(grid: &SemanticGrid) -> Raster<[u8; 3]> {
    grid.cells.map(|&c| class_color(c))
}

fn map_stage(ctx: &Context, config: &StageConfig) -> StageRun {
    let map_config = config.map.config(&ctx.vocab);
    let mut records = Vec::new();
    for scene in &ctx.manifest.scenes {
        let (_, rec) = timed(Stage::Map, &scene.id, None, || {
            let (source, dir) = annotation_source(&ctx.layout, scene)?;
            let annotations = load_stage_annotations(&dir, scene)?;
            let posed: Vec<Posed> = scene
                .frames
                .par_iter()
                .map(|f| load_posed(f, ctx.manifest.depth_scale))
                .collect::<Result<_>>()?;
            let embeddings: Vec<Option<FloatMatrix>> = scene
                .frames
                .par_iter()
                .map(|f| f.embeddings.as_deref().map(FloatMatrix::load).transpose())
                .collect::<Result<_>>()?;
            let frames: Vec<MapFrame<'_>> = scene
                .frames
                .iter()
                .zip(&annotations)
                .zip(&posed)
                .zip(&embeddings)
                .map(|(((f, a), p), e)| MapFrame {
                    id: &f.id,
                    depth: &p.depth,
                    intrinsics: &p.intrinsics,
                    pose: &p.pose,
                    labels: Some(&a.semantic),
                    embeddings: e.as_ref(),
                })
                .collect();
            let out = ctx.layout.maps(&scene.id);
            let grid = build_semantic_grid(&frames, &map_config, ctx.vocab.max_id())?;
            grid.save(&out, SEMANTIC_STEM)?;
            save_rgb_png(&render_grid(&grid), &out.join(format!("{SEMANTIC_STEM}_render.png")))?;
            log::info!("map {}: labels from {source}", scene.id);
            let mut warnings = Vec::new();
            let with_embeddings: Vec<MapFrame<'_>> =
                frames.iter().filter(|f| f.embeddings.is_some()).copied().collect();
            if !with_embeddings.is_empty() {
                if with_embeddings.len() < frames.len() {
                    warnings.push(format!(
                        "{} frames lack embeddings",
                        frames.len() - with_embeddings.len()
                    ));
                }
                let mut emb_config = map_config.clone();
                emb_config.extent = Some(grid.georef.extent());
                build_embedding_grid(&with_embeddings, &emb_config)?.save(&out, EMBEDDING_STEM)?;
            }
            Ok(((), warnings))
        })?;
        records.push(rec);
    }
    Ok((ctx.manifest.scenes.len(), records))
}

/// Loads every scene's map as a navigation scene.
pub fn load_nav_scenes(ctx: &Context, goal_source: GoalSource) -> Result<Vec<NavScene>> {
    let queries: BTreeMap<String, Vec<f32>> = match (&ctx.manifest.text_embeddings, goal_source) {
        (Some(path), GoalSource::EmbeddingQuery) => read_json(path)?,
        _ => BTreeMap::new(),
    };
    let mut out = Vec::new();
    for scene in &ctx.manifest.scenes {
        let dir = ctx.layout.maps(&scene.id);
        require(SemanticGrid::paths(&dir, SEMANTIC_STEM)[2].clone())?;
        let grid = SemanticGrid::load(&dir, SEMANTIC_STEM)?;
        let mut ns = NavScene::new(&scene.id, grid, &ctx.vocab)?;
        if goal_source == GoalSource::EmbeddingQuery {
            let [_, index] = EmbeddingGrid::paths(&dir, EMBEDDING_STEM);
            if index.exists() {
                ns.embeddings = Some(EmbeddingGrid::load(&dir, EMBEDDING_STEM)?);
            }
            ns.queries = queries
                .iter()
                .filter_map(|(name, v)| ctx.vocab.id(name).map(|id| (id, v.clone())))
                .collect();
        }
        out.push(ns);
    }
    Ok(out)
}

fn navigate_stage(ctx: &Context, config: &StageConfig) -> StageRun {
    let t0 = Instant::now();
    let scenes = load_nav_scenes(ctx, config.nav.goal_source)?;
    let mut suite = SuiteConfig::for_vocabulary(&ctx.vocab);
    suite.episodes_per_scene = config.nav.episodes_per_scene;
    suite.nav.success_radius = config.nav.success_radius;
    suite.nav.goal_source = config.nav.goal_source;
    let (results, report) = run_suite(&scenes, &suite, &config.nav.seeds)?;
    let dir = ctx.layout.nav();
    let rows: Vec<EpisodeRow> = results.iter().map(|r| EpisodeRow::new(r, &ctx.vocab)).collect();
    write_episode_csv(&rows, &dir.join("episodes.csv"))?;
    write_json(&dir.join("episodes.json"), &results)?;
    write_json(&dir.join("summary.json"), &report)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3 / results.len().max(1) as f64;
    let records = results
        .iter()
        .map(|r| LogRecord {
            stage: Stage::Navigate.name().into(),
            scene: r.episode.scene.clone(),
            item: Some(r.episode.id()),
            ms,
            warnings: r.reason.iter().map(|s| format!("failed: {s}")).collect(),
        })
        .collect();
    Ok((results.len(), records))
}

pub fn load_episode_results(layout: &Layout) -> Result<Vec<EpisodeResult>> {
    read_json(&require(layout.nav().join("episodes.json"))?)
}

pub fn load_suite_report(layout: &Layout) -> Result<SuiteReport> {
    read_json(&require(layout.nav().join("summary.json"))?)
}

/// The clustering of one scene's candidate segments as written by the parts
/// stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndex {
    pub scene: String,
    pub container: String,
    pub ids: Vec<SegmentKey>,
    /// Container detection index per clustered segment.
    pub containers: Vec<usize>,
    pub sizes: Vec<usize>,
    pub montages: Vec<String>,
    pub clustering: Clustering,
    pub selection: Option<ClusterSelection>,
    /// Number of part masks produced by the selection.
    pub part_masks: Option<usize>,
}

pub fn load_cluster_index(layout: &Layout, scene: &str) -> Result<ClusterIndex> {
    read_json(&require(layout.parts(scene).join("clusters.json"))?)
}

fn parts_stage(ctx: &Context, config: &StageConfig) -> StageRun {
    let p = &config.parts;
    let container = ctx
        .vocab
        .id(&p.container)
        .ok_or_else(|| Error::invalid("parts", format!("container class `{}` not in vocabulary", p.container)))?;
    let mut records = Vec::new();
    for scene in &ctx.manifest.scenes {
        let (_, rec) = timed(Stage::Parts, &scene.id, None, || {
            let mut warnings = Vec::new();
            let fused_dir = ctx.layout.fused(&scene.id);
            for f in &scene.frames {
                require(annotation_paths(&fused_dir, &f.id)[0].clone())?;
            }
            let features_path = scene.features.as_deref().ok_or_else(|| Error::MissingFrameData {
                frame: scene.id.clone(),
                what: "features".into(),
            })?;
            let table = FeatureTable::load(features_path)?;
            let loaded: Vec<(SegmentSet, Option<DetectionSet>)> = scene
                .frames
                .par_iter()
                .map(|f| {
                    Ok((
                        SegmentSet::load(f.require(&f.segments, "segments")?)?,
                        f.detections.as_deref().map(DetectionSet::load).transpose()?,
                    ))
                })
                .collect::<Result<_>>()?;
            let mut containers = BTreeMap::new();
            for (f, (segs, dets)) in scene.frames.iter().zip(&loaded) {
                for c in candidate_segments(segs, dets.as_ref(), container) {
                    containers.insert(
                        SegmentKey {
                            frame: f.id.clone(),
                            segment: c.segment,
                        },
                        c.detection,
                    );
                }
            }
            let candidates = table.filter(|k| containers.contains_key(k));
            if candidates.len() < containers.len() {
                warnings.push(format!(
                    "{} candidate segments have no features",
                    containers.len() - candidates.len()
                ));
            }
            let out = ctx.layout.parts(&scene.id);
            if candidates.is_empty() {
                warnings.push("no candidate segments; nothing clustered".into());
                return Ok(((), warnings));
            }
            let k = p.k.min(candidates.len());
            if k < p.k {
                warnings.push(format!("k reduced to {k}: only {} candidates", candidates.len()));
            }
            let clustering = kmeans(&candidates.features, k, p.seed, &p.kmeans)?;

            let segments: BTreeMap<String, SegmentSet> = scene
                .frames
                .iter()
                .zip(&loaded)
                .map(|(f, (s, _))| (f.id.clone(), s.clone()))
                .collect();
            let rgb: BTreeMap<&str, Raster<[u8; 3]>> = scene
                .frames
                .par_iter()
                .filter_map(|f| {
                    f.rgb
                        .as_deref()
                        .map(|path| load_rgb_png(path).map(|r| (f.id.as_str(), r)))
                })
                .collect::<Result<_>>()?;
            let mut montages = Vec::new();
            for c in 0..k {
                let items: Vec<_> = clustering
                    .members(c)
                    .into_iter()
                    .map(|i| {
                        let key = &candidates.ids[i];
                        let segs = &segments[&key.frame];
                        (
                            rgb.get(key.frame.as_str()),
                            segs.get(key.segment).expect("candidate segment"),
                            segs.width(),
                        )
                    })
                    .collect();
                let name = format!("cluster_{c}.png");
                save_montage(&cluster_montage(&items, p.tile, 8), &out.join(&name))?;
                montages.push(name);
            }

            let sidecar = ctx.layout.selection(&scene.id);
            let selection = match &p.selection {
                Some(s) => Some(s.clone()),
                None if sidecar.exists() => Some(read_json::<ClusterSelection>(&sidecar)?),
                None => None,
            };
            let mut part_masks = None;
            if let Some(sel) = &selection {
                let set = backproject_cluster(&clustering, &candidates.ids, sel, &segments, &containers)?;
                let dims = segments.iter().map(|(f, s)| (f.clone(), s.dims())).collect();
                let parts_dir = out.join("parts");
                if parts_dir.exists() {
                    std::fs::remove_dir_all(&parts_dir).map_err(|e| Error::io(&parts_dir, e))?;
                }
                set.save(&parts_dir, &dims)?;
                part_masks = Some(set.parts.len());
            }
            let index = ClusterIndex {
                scene: scene.id.clone(),
                container: p.container.clone(),
                containers: candidates.ids.iter().map(|k| containers[k]).collect(),
                ids: candidates.ids.clone(),
                sizes: clustering.sizes(),
                montages,
                clustering,
                selection,
                part_masks,
            };
            write_json(&out.join("clusters.json"), &index)?;
            Ok(((), warnings))
        })?;
        records.push(rec);
    }
    Ok((ctx.manifest.scenes.len(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{standard_dataset, RenderOptions};

    #[test]
    fn all_stages_on_the_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = standard_dataset(&dir.path().join("data"), &RenderOptions::default()).unwrap();
        let mut config = StageConfig::new(&manifest, dir.path().join("out"));
        config.parts.k = 2;
        config.parts.selection = Some(ClusterSelection {
            cluster: 0,
            part: "handle".into(),
        });
        let outcomes = run_all(&Stage::ALL, &config).unwrap();
        assert_eq!(outcomes.len(), 6);
        let layout = config.layout();
        let report: EvalOutput = read_json(&layout.eval().join("report.json")).unwrap();
        assert!(report.overall.miou.unwrap() > 0.95, "{:?}", report.overall.miou);
        let summary: serde_json::Value = read_json(&layout.nav().join("summary.json")).unwrap();
        for key in ["R1", "R2", "R3", "Avg-SR"] {
            assert!(summary.get(key).is_some(), "{key}");
        }
        let index = load_cluster_index(&layout, "kitchen").unwrap();
        assert_eq!(index.clustering.k, 2);
        assert!(index.part_masks.is_some());
    }

    #[test]
    fn missing_prerequisite_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = standard_dataset(&dir.path().join("data"), &RenderOptions::default()).unwrap();
        let config = StageConfig::new(&manifest, dir.path().join("out"));
        match run_stage(Stage::Verify, &config) {
            Err(Error::MissingPrerequisite(p)) => assert!(p.starts_with(config.layout().fused("living"))),
            other => panic!("{other:?}"),
        }
    }
}
