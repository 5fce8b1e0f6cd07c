//! Builds a top-down semantic map from posed frames, checks it against the
//! analytic layout of the scene and prints it as text.

use fuselabel::fixtures::{self, expected_grid, fixture_vocabulary, render_scene, RenderOptions};
use fuselabel::semmap::{build_semantic_grid, localize_class, Cell, MapConfig};

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    let spec = fixtures::living_room("living", 1);
    let scene = render_scene(&spec, &vocab, &RenderOptions::default())?;
    let config = MapConfig::for_vocabulary(&vocab);
    let grid = build_semantic_grid(&scene.map_frames(true), &config, vocab.max_id())?;
    let expected = expected_grid(&spec, &vocab, &config)?;

    let g = grid.georef;
    let differing = grid
        .cells
        .as_slice()
        .iter()
        .zip(expected.cells.as_slice())
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "{}x{} cells of {} m at origin {:?}; {differing} differ from the layout",
        g.width, g.height, g.resolution, g.origin
    );
    for c in grid.detected_classes() {
        let cells = localize_class(&grid, c);
        println!("  {:<8} {:>5} cells", vocab.name(c).unwrap_or("?"), cells.len());
    }

    let glyph = |c: u16| match c {
        0 => ' ',
        c => vocab.name(c).and_then(|n| n.chars().next()).unwrap_or('?'),
    };
    for y in (0..g.height).step_by(2) {
        let row: String = (0..g.width)
            .step_by(2)
            .map(|x| glyph(grid.get(Cell::new(x, y))))
            .collect();
        println!("{row}");
    }
    Ok(())
}
