//! Corrupts one object's labels in one frame and lets the overlapping views
//! vote the region back to its true class.

use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, CorruptRegion, Corruption, RenderOptions};
use fuselabel::mv::{verify_frame, MvConfig, View};

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    let mut spec = fixtures::living_room("living", 1);
    let target = spec.cameras[20].id.clone();
    spec.corruption.push(Corruption {
        frame: target.clone(),
        region: CorruptRegion::Object { object: 0 },
        class: "bed".into(),
    });
    let scene = render_scene(&spec, &vocab, &RenderOptions::default())?;
    let views: Vec<View<'_>> = scene
        .frames
        .iter()
        .map(|f| View {
            id: &f.id,
            labels: &f.semantic,
            depth: Some(&f.depth),
            intrinsics: Some(&scene.intrinsics),
            pose: Some(&f.pose),
        })
        .collect();
    let t = views.iter().find(|v| v.id == target).expect("target view");
    let frame = scene.frame(&target).expect("target frame");

    let wrong = |labels: &[u16]| {
        labels
            .iter()
            .zip(frame.ground_truth.as_slice())
            .filter(|(a, b)| a != b)
            .count()
    };
    let verified = verify_frame(t, &views, &MvConfig::default(), None)?;
    println!("frame {target}");
    println!("  mislabeled before verification: {}", wrong(frame.semantic.as_slice()));
    println!("  mislabeled after verification:  {}", wrong(verified.as_slice()));
    Ok(())
}
