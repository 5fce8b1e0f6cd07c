//! Clusters the segments found inside cabinet boxes and turns the cluster a
//! reviewer would pick into part masks.

use std::collections::BTreeMap;

use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, RenderOptions};
use fuselabel::ingest::SegmentKey;
use fuselabel::parts::{backproject_cluster, candidate_segments, cluster_table, ClusterSelection, KMeansConfig};

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    let scene = render_scene(
        &fixtures::cabinet_wall("kitchen", 12),
        &vocab,
        &RenderOptions::default(),
    )?;
    let cabinet = vocab.id("cabinet").expect("fixture class");

    let mut containers = BTreeMap::new();
    for f in &scene.frames {
        for c in candidate_segments(&f.segments, Some(&f.detections), cabinet) {
            containers.insert(
                SegmentKey {
                    frame: f.id.clone(),
                    segment: c.segment,
                },
                c.detection,
            );
        }
    }
    let table = scene.features.filter(|k| containers.contains_key(k));
    let clustering = cluster_table(&table, 2, 0, &KMeansConfig::default())?;

    for c in 0..clustering.k {
        let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
        for i in clustering.members(c) {
            let class = scene.segment_classes[&table.ids[i]];
            *classes.entry(vocab.name(class).unwrap_or("?")).or_default() += 1;
        }
        println!("cluster {c}: {classes:?}");
    }

    let handle = vocab.id("handle").expect("fixture class");
    let chosen = (0..clustering.k)
        .max_by_key(|&c| {
            clustering
                .members(c)
                .iter()
                .filter(|&&i| scene.segment_classes[&table.ids[i]] == handle)
                .count()
        })
        .expect("k > 0");
    let segments = scene
        .frames
        .iter()
        .map(|f| (f.id.clone(), f.segments.clone()))
        .collect();
    let selection = ClusterSelection {
        cluster: chosen,
        part: "handle".into(),
    };
    let parts = backproject_cluster(&clustering, &table.ids, &selection, &segments, &containers)?;
    let pixels: usize = parts.parts.iter().map(|p| p.pixels.len()).sum();
    println!(
        "selected cluster {chosen}: {} part masks over {} frames, {pixels} pixels",
        parts.parts.len(),
        parts.frames().len()
    );
    Ok(())
}
