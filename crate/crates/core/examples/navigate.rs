//! Object-goal navigation over maps of random rooms, three seeds.

use fuselabel::fixtures::{self, expected_grid, fixture_vocabulary};
use fuselabel::nav::{run_suite, NavScene, SuiteConfig};
use fuselabel::semmap::MapConfig;

fn main() -> fuselabel::Result<()> {
    let vocab = fixture_vocabulary();
    let config = MapConfig::for_vocabulary(&vocab);
    let scenes = (0..5)
        .map(|i| {
            let spec = fixtures::random_room(&format!("room{i}"), i, 5, [5.0, 4.0]);
            NavScene::new(spec.id.clone(), expected_grid(&spec, &vocab, &config)?, &vocab)
        })
        .collect::<fuselabel::Result<Vec<_>>>()?;

    let suite = SuiteConfig {
        episodes_per_scene: 4,
        ..SuiteConfig::for_vocabulary(&vocab)
    };
    let (results, report) = run_suite(&scenes, &suite, &[1, 2, 3])?;
    for r in results.iter().take(6) {
        println!(
            "{:<16} target {:<8} path {:>3} cells  {}",
            r.episode.id(),
            vocab.name(r.episode.target).unwrap_or("?"),
            r.path_len,
            if r.success {
                "success"
            } else {
                r.reason.as_deref().unwrap_or("failure")
            }
        );
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}
