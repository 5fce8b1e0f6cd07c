//! mIoU over a whole synthetic scene, overall and over small objects.

use fuselabel::eval::{accumulate_confusion, ConfusionMatrix, EvalReport};
use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, RenderOptions};

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    let options = RenderOptions {
        erode: 1,
        ..RenderOptions::default()
    };
    let scene = render_scene(&fixtures::cabinet_wall("kitchen", 12), &vocab, &options)?;
    let mut cm = ConfusionMatrix::new();
    for f in &scene.frames {
        accumulate_confusion(&f.semantic, &f.ground_truth, &mut cm)?;
    }
    let report = EvalReport::build(&cm, &vocab, scene.frames.len());
    print!("{}", report.to_table());
    Ok(())
}
