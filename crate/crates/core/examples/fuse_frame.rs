//! Fuses the segment, semantic and detection streams of one synthetic frame
//! and scores the result against ground truth.

use fuselabel::eval::{accumulate_confusion, ConfusionMatrix, EvalReport};
use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, RenderOptions};
use fuselabel::fuse::{fuse_frame, FrameInputs, FuseConfig};

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    // Erosion voids the predicted labels near object boundaries, which the
    // segment vote and the detection masks then fill back in.
    let options = RenderOptions {
        erode: 2,
        ..RenderOptions::default()
    };
    let scene = render_scene(&fixtures::living_room("living", 1), &vocab, &options)?;
    let frame = &scene.frames[20];

    let fused = fuse_frame(
        FrameInputs {
            segments: &frame.segments,
            semantic: &frame.semantic,
            detections: Some(&frame.detections),
            manual_boxes: None,
        },
        &vocab,
        &FuseConfig::default(),
    )?;

    let mut before = ConfusionMatrix::new();
    accumulate_confusion(&frame.semantic, &frame.ground_truth, &mut before)?;
    let mut after = ConfusionMatrix::new();
    accumulate_confusion(&fused.annotation.semantic, &frame.ground_truth, &mut after)?;

    println!(
        "frame {}: {} instances, {} skipped detections",
        frame.id,
        fused.annotation.meta.len(),
        fused.skipped.len()
    );
    println!(
        "raw semantic stream\n{}",
        EvalReport::build(&before, &vocab, 1).to_table()
    );
    println!("fused annotation\n{}", EvalReport::build(&after, &vocab, 1).to_table());
    Ok(())
}
