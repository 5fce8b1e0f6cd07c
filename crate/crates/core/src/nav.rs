//! Object-goal navigation on top-down semantic grids: navigability, goal
//! selection, A* planning and seeded episode suites.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::f64::consts::SQRT_2;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::files::write_atomic;
use crate::ingest::vocab::{Vocabulary, VOID};
use crate::raster::{Mask, Raster};
use crate::semmap::{localize_class, query_embedding_grid, Cell, EmbeddingGrid, SemanticGrid};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 1.0;

pub const REASON_ABSENT: &str = "class-not-in-map";
pub const REASON_NO_GOAL: &str = "no-navigable-goal";
pub const REASON_UNREACHABLE: &str = "unreachable";
pub const REASON_TOO_FAR: &str = "stopped-too-far";
pub const REASON_NO_QUERY: &str = "no-query-embedding";

#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    pub navigable: Mask,
    pub resolution: f64,
}

impl NavGrid {
    pub fn new(navigable: Mask, resolution: f64) -> Self {
        Self { navigable, resolution }
    }

    pub fn width(&self) -> usize {
        self.navigable.width()
    }

    pub fn height(&self) -> usize {
        self.navigable.height()
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width() && c.y < self.height()
    }

    pub fn is_navigable(&self, c: Cell) -> bool {
        self.contains(c) && *self.navigable.get(c.x, c.y)
    }

    pub fn navigable_cells(&self) -> Vec<Cell> {
        let w = self.width();
        self.navigable
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n)
            .map(|(i, _)| Cell::new(i % w, i / w))
            .collect()
    }

    fn neighbors4(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        let (x, y) = (c.x as isize, c.y as isize);
        [(x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)]
            .into_iter()
            .filter(move |&(nx, ny)| {
                nx >= 0 && ny >= 0 && (nx as usize) < self.width() && (ny as usize) < self.height()
            })
            .map(|(nx, ny)| Cell::new(nx as usize, ny as usize))
    }
}

/// Floor cells plus undetected cells with at least two 4-adjacent floor cells.
pub fn navigable_mask(grid: &SemanticGrid, vocab: &Vocabulary) -> Result<NavGrid> {
    let floor = vocab
        .floor()
        .ok_or_else(|| Error::invalid("vocabulary", "no `floor` class defined"))?;
    let cells = &grid.cells;
    let (w, h) = cells.dims();
    let is_floor = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && *cells.get(x as usize, y as usize) == floor
    };
    let mask = Raster::from_fn(w, h, |x, y| match *cells.get(x, y) {
        c if c == floor => true,
        VOID => {
            let (x, y) = (x as isize, y as isize);
            [(x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)]
                .into_iter()
                .filter(|&(a, b)| is_floor(a, b))
                .count()
                >= 2
        }
        _ => false,
    });
    if mask.count_ones() == 0 {
        return Err(Error::NoNavigable(" in map".into()));
    }
    Ok(NavGrid::new(mask, grid.georef.resolution))
}

/// Breadth-first search outward from all `targets` at once over 4-adjacency,
/// through any cell; the first level containing a navigable cell yields its
/// raster-scan-first such cell.
pub fn nearest_navigable(nav: &NavGrid, targets: &[Cell]) -> Result<Cell> {
    if targets.is_empty() {
        return Err(Error::invalid("targets", "empty target set"));
    }
    let mut seen = Raster::filled(nav.width(), nav.height(), false);
    let mut level: Vec<Cell> = Vec::new();
    for &t in targets {
        if !nav.contains(t) {
            return Err(Error::invalid("targets", format!("cell {t} outside the grid")));
        }
        if !*seen.get(t.x, t.y) {
            seen.set(t.x, t.y, true);
            level.push(t);
        }
    }
    while !level.is_empty() {
        if let Some(best) = level
            .iter()
            .filter(|&&c| nav.is_navigable(c))
            .min_by_key(|c| c.raster_key())
        {
            return Ok(*best);
        }
        let mut next = Vec::new();
        for &c in &level {
            for n in nav.neighbors4(c) {
                if !*seen.get(n.x, n.y) {
                    seen.set(n.x, n.y, true);
                    next.push(n);
                }
            }
        }
        level = next;
    }
    Err(Error::NoNavigable(" reachable from the target".into()))
}

/// Path cost as counts of straight and diagonal steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl StepCost {
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn add(self, diagonal: bool) -> Self {
        Self {
            straight: self.straight + !diagonal as u32,
            diagonal: self.diagonal + diagonal as u32,
        }
    }

    fn plus(self, o: Self) -> Self {
        Self {
            straight: self.straight + o.straight,
            diagonal: self.diagonal + o.diagonal,
        }
    }
}

/// Octile distance, as step counts.
pub fn octile(a: Cell, b: Cell) -> StepCost {
    let dx = a.x.abs_diff(b.x) as u32;
    let dy = a.y.abs_diff(b.y) as u32;
    StepCost {
        straight: dx.max(dy) - dx.min(dy),
        diagonal: dx.min(dy),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub steps: StepCost,
}

impl GridPath {
    pub fn cost(&self) -> f64 {
        self.steps.value()
    }
}

/// 8-connected moves from `c`: straight cost 1, diagonal √2. A diagonal is
/// allowed unless both orthogonal cells it passes between are blocked.
pub fn moves(nav: &NavGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    let (x, y) = (c.x as isize, c.y as isize);
    let ok = move |a: isize, b: isize| a >= 0 && b >= 0 && nav.is_navigable(Cell::new(a as usize, b as usize));
    (-1isize..=1)
        .flat_map(|dy| (-1isize..=1).map(move |dx| (dx, dy)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            if !ok(nx, ny) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !ok(x + dx, y) && !ok(x, y + dy) {
                return None;
            }
            Some((Cell::new(nx as usize, ny as usize), diagonal))
        })
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    h: f64,
    index: usize,
}

impl PartialEq for Open {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Open {
    // Reversed for the max-heap: lowest f, then lowest h, then lowest index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.h.total_cmp(&self.h))
            .then(o.index.cmp(&self.index))
    }
}

/// Optimal 8-connected path, or `None` when the goal is unreachable.
pub fn astar(nav: &NavGrid, start: Cell, goal: Cell) -> Result<Option<GridPath>> {
    for (what, c) in [("start", start), ("goal", goal)] {
        if !nav.is_navigable(c) {
            return Err(Error::invalid(what, format!("cell {c} is not navigable")));
        }
    }
    let w = nav.width();
    let idx = |c: Cell| c.y * w + c.x;
    let n = nav.navigable.len();
    let mut g: Vec<Option<StepCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = Some(StepCost::default());
    let h0 = octile(start, goal).value();
    open.push(Open {
        f: h0,
        h: h0,
        index: idx(start),
    });
    while let Some(Open { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        let c = Cell::new(index % w, index / w);
        let gc = g[index].expect("queued cells have a cost");
        if c == goal {
            let mut cells = vec![c];
            let mut i = index;
            while parent[i] != usize::MAX {
                i = parent[i];
                cells.push(Cell::new(i % w, i / w));
            }
            cells.reverse();
            return Ok(Some(GridPath { cells, steps: gc }));
        }
        for (m, diagonal) in moves(nav, c) {
            let j = idx(m);
            if closed[j] {
                continue;
            }
            let cand = gc.add(diagonal);
            if g[j].is_none_or(|old| cand.value() < old.value()) {
                g[j] = Some(cand);
                parent[j] = index;
                let h = octile(m, goal);
                open.push(Open {
                    f: cand.plus(h).value(),
                    h: h.value(),
                    index: j,
                });
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalSource {
    /// Plan to the nearest navigable cell of the target's map cells.
    #[default]
    SemanticMap,
    /// Plan to the nearest navigable cell of the embedding-grid argmax.
    EmbeddingQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub success_radius: f64,
    pub goal_source: GoalSource,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            success_radius: DEFAULT_SUCCESS_RADIUS,
            goal_source: GoalSource::default(),
        }
    }
}

/// Everything an episode needs about one scene.
#[derive(Debug, Clone)]
pub struct NavScene {
    pub id: String,
    pub grid: SemanticGrid,
    pub nav: NavGrid,
    pub embeddings: Option<EmbeddingGrid>,
    /// Text embedding per class id, for embedding-query goals.
    pub queries: BTreeMap<u16, Vec<f32>>,
}

impl NavScene {
    pub fn new(id: impl Into<String>, grid: SemanticGrid, vocab: &Vocabulary) -> Result<Self> {
        let nav = navigable_mask(&grid, vocab)?;
        Ok(Self {
            id: id.into(),
            grid,
            nav,
            embeddings: None,
            queries: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub scene: String,
    pub seed: u64,
    pub index: usize,
    pub start: Cell,
    pub target: u16,
}

impl Episode {
    pub fn id(&self) -> String {
        format!("{}-s{}-e{}", self.scene, self.seed, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: Episode,
    pub goal: Option<Cell>,
    pub stop: Cell,
    /// Path length in cells, start and stop included.
    pub path_len: usize,
    pub cost: Option<f64>,
    pub success: bool,
    pub reason: Option<String>,
}

fn failed(episode: &Episode, goal: Option<Cell>, reason: &str) -> EpisodeResult {
    EpisodeResult {
        episode: episode.clone(),
        goal,
        stop: episode.start,
        path_len: 1,
        cost: None,
        success: false,
        reason: Some(reason.to_string()),
    }
}

/// Plans from the start, STOPs at the end of the path and scores the stop
/// against the nearest navigable cell of the target's true map cells.
pub fn run_episode(scene: &NavScene, episode: &Episode, config: &NavConfig) -> Result<EpisodeResult> {
    if !scene.nav.is_navigable(episode.start) {
        return Err(Error::InvalidStart {
            x: episode.start.x,
            y: episode.start.y,
        });
    }
    let cells = localize_class(&scene.grid, episode.target);
    if cells.is_empty() {
        return Ok(failed(episode, None, REASON_ABSENT));
    }
    let Ok(goal) = nearest_navigable(&scene.nav, &cells) else {
        return Ok(failed(episode, None, REASON_NO_GOAL));
    };
    let plan_to = match config.goal_source {
        GoalSource::SemanticMap => goal,
        GoalSource::EmbeddingQuery => {
            let query = scene.embeddings.as_ref().zip(scene.queries.get(&episode.target));
            let Some(Ok(cell)) = query.map(|(g, q)| query_embedding_grid(g, q)) else {
                return Ok(failed(episode, Some(goal), REASON_NO_QUERY));
            };
            match nearest_navigable(&scene.nav, &[cell]) {
                Ok(c) => c,
                Err(_) => return Ok(failed(episode, Some(goal), REASON_NO_GOAL)),
            }
        }
    };
    let Some(path) = astar(&scene.nav, episode.start, plan_to)? else {
        return Ok(failed(episode, Some(goal), REASON_UNREACHABLE));
    };
    let stop = *path.cells.last().expect("paths are nonempty");
    let dx = stop.x as f64 - goal.x as f64;
    let dy = stop.y as f64 - goal.y as f64;
    let success = dx.hypot(dy) * scene.nav.resolution <= config.success_radius;
    Ok(EpisodeResult {
        episode: episode.clone(),
        goal: Some(goal),
        stop,
        path_len: path.cells.len(),
        cost: Some(path.cost()),
        success,
        reason: (!success).then(|| REASON_TOO_FAR.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub episodes_per_scene: usize,
    /// Classes never drawn as targets (floor, walls and the like).
    pub exclude: BTreeSet<u16>,
    pub nav: NavConfig,
}

impl SuiteConfig {
    pub fn for_vocabulary(vocab: &Vocabulary) -> Self {
        Self {
            episodes_per_scene: 1,
            exclude: vocab.background().clone(),
            nav: NavConfig::default(),
        }
    }
}

/// Draws episodes for one seed: per scene in order, a target among the
/// detected non-excluded classes and a start among the navigable cells.
pub fn sample_episodes(scenes: &[NavScene], config: &SuiteConfig, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for scene in scenes {
        let targets: Vec<u16> = scene
            .grid
            .detected_classes()
            .into_iter()
            .filter(|c| !config.exclude.contains(c))
            .collect();
        let starts = scene.nav.navigable_cells();
        if targets.is_empty() {
            log::warn!("scene {}: no candidate target class; skipped", scene.id);
            continue;
        }
        for index in 0..config.episodes_per_scene {
            let target = *targets.choose(&mut rng).expect("nonempty");
            let start = *starts.choose(&mut rng).expect("navigable_mask guarantees a cell");
            out.push(Episode {
                scene: scene.id.clone(),
                seed,
                index,
                start,
                target,
            });
        }
    }
    out
}

/// Runs episodes concurrently; results keep the input order.
pub fn run_episodes(scenes: &[NavScene], episodes: &[Episode], config: &NavConfig) -> Result<Vec<EpisodeResult>> {
    let by_id: BTreeMap<&str, &NavScene> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    episodes
        .par_iter()
        .map(|e| {
            let scene = by_id
                .get(e.scene.as_str())
                .ok_or_else(|| Error::invalid("episode", format!("unknown scene `{}`", e.scene)))?;
            run_episode(scene, e, config)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n−1) standard deviation; 0 spread for a single value.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// Per-seed success rates `R1..Rn` plus their mean and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub goal_source: GoalSource,
    pub success_radius: f64,
    #[serde(flatten)]
    pub rates: BTreeMap<String, f64>,
    #[serde(rename = "Avg-SR")]
    pub avg_sr: MeanStd,
    pub runs: Vec<RunSummary>,
}

pub fn summarize(results: &[EpisodeResult], seeds: &[u64], config: &NavConfig) -> SuiteReport {
    let runs: Vec<RunSummary> = seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mine: Vec<_> = results.iter().filter(|r| r.episode.seed == seed).collect();
            let successes = mine.iter().filter(|r| r.success).count();
            RunSummary {
                name: format!("R{}", i + 1),
                seed,
                episodes: mine.len(),
                successes,
                success_rate: if mine.is_empty() {
                    0.0
                } else {
                    100.0 * successes as f64 / mine.len() as f64
                },
            }
        })
        .collect();
    let rates: Vec<f64> = runs.iter().map(|r| r.success_rate).collect();
    SuiteReport {
        goal_source: config.goal_source,
        success_radius: config.success_radius,
        rates: runs.iter().map(|r| (r.name.clone(), r.success_rate)).collect(),
        avg_sr: mean_std(&rates),
        runs,
    }
}

/// Samples and runs one episode set per seed.
pub fn run_suite(
    scenes: &[NavScene],
    config: &SuiteConfig,
    seeds: &[u64],
) -> Result<(Vec<EpisodeResult>, SuiteReport)> {
    let episodes: Vec<Episode> = seeds.iter().flat_map(|&s| sample_episodes(scenes, config, s)).collect();
    let results = run_episodes(scenes, &episodes, &config.nav)?;
    let report = summarize(&results, seeds, &config.nav);
    Ok((results, report))
}

/// One line of the per-episode CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: String,
    pub scene: String,
    pub seed: u64,
    pub target: String,
    pub start: String,
    pub stop: String,
    pub goal: String,
    pub path_len: usize,
    pub cost: String,
    pub success: u8,
    pub reason: String,
}

impl EpisodeRow {
    pub fn new(r: &EpisodeResult, vocab: &Vocabulary) -> Self {
        let e = &r.episode;
        Self {
            episode: e.id(),
            scene: e.scene.clone(),
            seed: e.seed,
            target: vocab
                .name(e.target)
                .map_or_else(|| e.target.to_string(), str::to_string),
            start: e.start.to_string(),
            stop: r.stop.to_string(),
            goal: r.goal.map(|g| g.to_string()).unwrap_or_default(),
            path_len: r.path_len,
            cost: r.cost.map(|c| format!("{c:.6}")).unwrap_or_default(),
            success: r.success as u8,
            reason: r.reason.clone().unwrap_or_default(),
        }
    }
}

pub fn write_episode_csv(rows: &[EpisodeRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid("episode csv", e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid("episode csv", e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Malformed {
        file: path.to_path_buf(),
        field: "csv".into(),
        reason: e.to_string(),
    })?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Malformed {
            file: path.to_path_buf(),
            field: "row".into(),
            reason: e.to_string(),
        })
}
