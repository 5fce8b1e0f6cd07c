use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fuselabel::fixtures::{self, RenderOptions, SceneSpec};
use fuselabel::ingest::read_json;
use fuselabel::nav::GoalSource;
use fuselabel::parts::ClusterSelection;
use fuselabel::pipeline::{run_all, run_stage, Stage, StageConfig};
use fuselabel::service::{serve, ServeConfig};

#[derive(Parser)]
#[command(
    name = "fuselabel",
    version,
    about = "Label fusion, mapping and navigation for indoor RGB-D scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-view fusion of segments, semantics and detections.
    Fuse(StageArgs),
    /// Multi-view verification of fused annotations.
    Verify(StageArgs),
    /// mIoU of verified (or fused) annotations against ground truth.
    Eval(StageArgs),
    /// Top-down semantic and embedding grids.
    Map(StageArgs),
    /// Object-goal navigation suite over the maps.
    Navigate(StageArgs),
    /// Candidate clustering and part back-projection.
    Parts(StageArgs),
    /// Every stage in order.
    Run(StageArgs),
    /// HTTP review service.
    Serve(ServeArgs),
    /// Writes a synthetic box-world dataset.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long, env = "FUSELABEL_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "FUSELABEL_OUT")]
    out: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long, env = "FUSELABEL_WORKERS", default_value_t = 0)]
    workers: usize,

    /// Inside-box area fraction for prompt segments.
    #[arg(long, env = "FUSELABEL_TAU")]
    tau: Option<f64>,
    #[arg(long, env = "FUSELABEL_MIN_SCORE")]
    min_score: Option<f64>,
    /// Use detector masks instead of composing from segments.
    #[arg(long, env = "FUSELABEL_COARSE_MASKS")]
    coarse_masks: bool,

    #[arg(long, env = "FUSELABEL_REFERENCES")]
    references: Option<usize>,
    /// Depth cross-check tolerance in meters.
    #[arg(long, env = "FUSELABEL_DEPTH_TOLERANCE")]
    depth_tolerance: Option<f64>,
    #[arg(long, env = "FUSELABEL_ROTATION_WEIGHT")]
    rotation_weight: Option<f64>,

    /// Grid cell size in meters.
    #[arg(long, env = "FUSELABEL_RESOLUTION")]
    resolution: Option<f64>,
    #[arg(long, env = "FUSELABEL_Z_MIN")]
    z_min: Option<f64>,
    #[arg(long, env = "FUSELABEL_Z_MAX")]
    z_max: Option<f64>,
    #[arg(long, env = "FUSELABEL_PADDING")]
    padding: Option<f64>,

    #[arg(long, env = "FUSELABEL_SEEDS", value_delimiter = ',', alias = "seed")]
    seeds: Option<Vec<u64>>,
    #[arg(long, env = "FUSELABEL_EPISODES_PER_SCENE")]
    episodes_per_scene: Option<usize>,
    #[arg(long, env = "FUSELABEL_SUCCESS_RADIUS")]
    success_radius: Option<f64>,
    #[arg(long, env = "FUSELABEL_GOAL_SOURCE", value_parser = parse_goal_source)]
    goal_source: Option<GoalSource>,

    #[arg(long, env = "FUSELABEL_CONTAINER")]
    container: Option<String>,
    #[arg(long, env = "FUSELABEL_K")]
    k: Option<usize>,
    #[arg(long, env = "FUSELABEL_KMEANS_SEED")]
    kmeans_seed: Option<u64>,
    #[arg(long, env = "FUSELABEL_MAX_ITERS")]
    max_iters: Option<usize>,
    #[arg(long, env = "FUSELABEL_TOL")]
    tol: Option<f64>,
    /// Cluster raw features instead of L2-normalized ones.
    #[arg(long, env = "FUSELABEL_NO_NORMALIZE")]
    no_normalize: bool,
    /// Selected cluster; overrides the scene's selection file.
    #[arg(long, env = "FUSELABEL_CLUSTER", requires = "part")]
    cluster: Option<usize>,
    /// Part name for the selected cluster.
    #[arg(long, env = "FUSELABEL_PART")]
    part: Option<String>,
}

fn parse_goal_source(s: &str) -> Result<GoalSource, String> {
    match s {
        "semantic-map" => Ok(GoalSource::SemanticMap),
        "embedding-query" => Ok(GoalSource::EmbeddingQuery),
        _ => Err("expected semantic-map or embedding-query".into()),
    }
}

impl StageArgs {
    fn config(&self) -> StageConfig {
        let mut c = StageConfig::new(&self.manifest, &self.out);
        c.workers = self.workers;
        macro_rules! set {
            ($($field:expr => $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg.clone() { $field = v; })*
            };
        }
        set! {
            c.fuse.prompt_threshold => self.tau,
            c.fuse.min_detection_score => self.min_score,
            c.mv.references => self.references,
            c.mv.depth_tolerance => self.depth_tolerance,
            c.mv.rotation_weight => self.rotation_weight,
            c.map.resolution => self.resolution,
            c.map.z_min => self.z_min,
            c.map.z_max => self.z_max,
            c.map.padding => self.padding,
            c.nav.seeds => self.seeds,
            c.nav.episodes_per_scene => self.episodes_per_scene,
            c.nav.success_radius => self.success_radius,
            c.nav.goal_source => self.goal_source,
            c.parts.container => self.container,
            c.parts.k => self.k,
            c.parts.seed => self.kmeans_seed,
            c.parts.kmeans.max_iters => self.max_iters,
            c.parts.kmeans.tol => self.tol,
        }
        c.fuse.use_coarse_masks |= self.coarse_masks;
        c.parts.kmeans.normalize &= !self.no_normalize;
        if let (Some(cluster), Some(part)) = (self.cluster, &self.part) {
            c.parts.selection = Some(ClusterSelection {
                cluster,
                part: part.clone(),
            });
        }
        c
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "FUSELABEL_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "FUSELABEL_OUT")]
    out: PathBuf,
    #[arg(long, env = "FUSELABEL_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of built review-UI assets, served under /ui/.
    #[arg(long, env = "FUSELABEL_UI")]
    ui: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, env = "FUSELABEL_OUT")]
    out: PathBuf,
    /// Scene spec JSON files; the standard living room and cabinet wall
    /// when omitted.
    #[arg(long = "spec")]
    specs: Vec<PathBuf>,
    /// Void predicted labels this many pixels around instance boundaries.
    #[arg(long, default_value_t = 0)]
    erode: usize,
    /// Also write per-pixel embeddings.
    #[arg(long)]
    embeddings: bool,
}

fn run(cli: Cli) -> fuselabel::Result<()> {
    let stage = |s: Stage, a: &StageArgs| -> fuselabel::Result<()> {
        let outcome = run_stage(s, &a.config())?;
        println!("{}: {} items, {} warnings", s.name(), outcome.items, outcome.warnings);
        Ok(())
    };
    match cli.command {
        Command::Fuse(a) => stage(Stage::Fuse, &a),
        Command::Verify(a) => stage(Stage::Verify, &a),
        Command::Eval(a) => {
            stage(Stage::Eval, &a)?;
            let report =
                std::fs::read_to_string(a.out.join("eval").join("report.txt")).map_err(|e| fuselabel::Error::Io {
                    path: a.out.join("eval/report.txt"),
                    source: e,
                })?;
            print!("{report}");
            Ok(())
        }
        Command::Map(a) => stage(Stage::Map, &a),
        Command::Navigate(a) => stage(Stage::Navigate, &a),
        Command::Parts(a) => stage(Stage::Parts, &a),
        Command::Run(a) => {
            for o in run_all(&Stage::ALL, &a.config())? {
                println!("{}: {} items, {} warnings", o.stage.name(), o.items, o.warnings);
            }
            Ok(())
        }
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| fuselabel::Error::Io {
                path: "tokio runtime".into(),
                source: e,
            })?;
            runtime.block_on(serve(ServeConfig {
                manifest: a.manifest,
                out: a.out,
                addr: a.addr,
                ui: a.ui,
            }))
        }
        Command::Fixture(a) => {
            let options = RenderOptions {
                erode: a.erode,
                embeddings: a.embeddings,
                ..RenderOptions::default()
            };
            let manifest = if a.specs.is_empty() {
                fixtures::standard_dataset(&a.out, &options)?
            } else {
                let vocab = fixtures::fixture_vocabulary();
                let scenes = a
                    .specs
                    .iter()
                    .map(|p| fixtures::render_scene(&read_json::<SceneSpec>(p)?, &vocab, &options))
                    .collect::<fuselabel::Result<Vec<_>>>()?;
                fixtures::write_dataset(&scenes, &vocab, &a.out)?
            };
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
