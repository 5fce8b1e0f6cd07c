//! Writes the synthetic dataset and runs every stage over it, as the
//! `fuselabel run` command does. Pass an output directory to keep the results.

use fuselabel::fixtures::{self, RenderOptions};
use fuselabel::pipeline::{run_all, Stage, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().to_path_buf(), Into::into);
    let options = RenderOptions {
        erode: 1,
        embeddings: true,
        ..RenderOptions::default()
    };
    let manifest = fixtures::standard_dataset(&root.join("data"), &options)?;
    let config = StageConfig::new(&manifest, root.join("out"));
    for o in run_all(&Stage::ALL, &config)? {
        println!("{:<9} {:>4} items {:>3} warnings", o.stage.name(), o.items, o.warnings);
    }
    print!("{}", std::fs::read_to_string(root.join("out/eval/report.txt"))?);
    println!("{}", std::fs::read_to_string(root.join("out/nav/summary.json"))?);
    Ok(())
}
