use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fuselabel::eval::{accumulate_confusion, miou, ConfusionMatrix};
use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, RenderOptions, RenderedScene};
use fuselabel::fuse::vote_segment_labels;
use fuselabel::geometry::Pose;
use fuselabel::ingest::{FloatMatrix, SegmentSet};
use fuselabel::mv::{region_votes, ClassCounts};
use fuselabel::nav::{astar, moves, octile, NavGrid};
use fuselabel::parts::{kmeans, KMeansConfig};
use fuselabel::raster::{LabelImage, Raster};
use fuselabel::semmap::{build_embedding_grid, build_semantic_grid, query_embedding_grid, Cell, MapConfig};

fn label_image(w: usize, h: usize, max: u16) -> impl Strategy<Value = LabelImage> {
    proptest::collection::vec(0..=max, w * h).prop_map(move |v| Raster::from_vec(w, h, v).unwrap())
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_vote_is_constant_majority_and_idempotent(
        ids in label_image(12, 9, 4),
        semantic in label_image(12, 9, 6),
    ) {
        let segments = SegmentSet::from_components(&ids, Some(0));
        let once = vote_segment_labels(&segments, &semantic).unwrap();
        for seg in segments.segments() {
            let mut votes: BTreeMap<u16, usize> = BTreeMap::new();
            for &p in seg.pixels() {
                *votes.entry(semantic.as_slice()[p as usize]).or_default() += 1;
            }
            let label = once.as_slice()[seg.pixels()[0] as usize];
            prop_assert!(seg.pixels().iter().all(|&p| once.as_slice()[p as usize] == label));
            let top = *votes.values().max().unwrap();
            prop_assert_eq!(votes[&label], top);
            prop_assert!(votes.iter().all(|(&c, &n)| n < top || c >= label));
        }
        let covered: std::collections::BTreeSet<u32> =
            segments.segments().iter().flat_map(|s| s.pixels().iter().copied()).collect();
        for (i, (&a, &b)) in once.as_slice().iter().zip(semantic.as_slice()).enumerate() {
            if !covered.contains(&(i as u32)) {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert_eq!(vote_segment_labels(&segments, &once).unwrap(), once);
    }

    #[test]
    fn region_vote_scores_are_bounded_and_winner_is_max(
        own in 1u16..6,
        size in 1usize..40,
        refs in proptest::collection::vec(proptest::collection::vec((0u16..6, 0u32..40), 0..4), 0..5),
    ) {
        // A reference hits each pixel at most once, so its counts sum to at
        // most the region size.
        let per_reference: Vec<ClassCounts> = refs
            .into_iter()
            .map(|pairs| {
                let mut budget = size as u32;
                let mut counts = ClassCounts::new();
                for (c, n) in pairs {
                    let n = n.min(budget);
                    budget -= n;
                    *counts.entry(c).or_default() += n;
                }
                counts
            })
            .collect();
        let t = region_votes(own, size, &per_reference);
        prop_assert_eq!(t.denominator(), size as u64 * (per_reference.len() as u64 + 1));
        let total: f64 = t.scores().values().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!(t.score(own) >= 1.0 / (per_reference.len() as f64 + 1.0));
        let w = t.winner();
        let best = t.scores().keys().map(|&c| t.numerator(c)).max().unwrap();
        prop_assert_eq!(t.numerator(w), best);
        if t.numerator(own) == best {
            prop_assert_eq!(w, own);
        }
        if per_reference.is_empty() {
            prop_assert_eq!(w, own);
            prop_assert_eq!(t.score(own), 1.0);
        }
    }

    #[test]
    fn confusion_merge_matches_joint_accumulation(
        a in label_image(8, 6, 5),
        b in label_image(8, 6, 5),
        c in label_image(8, 6, 5),
        d in label_image(8, 6, 5),
    ) {
        let mut joint = ConfusionMatrix::new();
        accumulate_confusion(&a, &b, &mut joint).unwrap();
        accumulate_confusion(&c, &d, &mut joint).unwrap();
        let mut left = ConfusionMatrix::new();
        accumulate_confusion(&a, &b, &mut left).unwrap();
        let mut right = ConfusionMatrix::new();
        accumulate_confusion(&c, &d, &mut right).unwrap();
        left.merge(&right);
        for g in 0..=5 {
            for p in 0..=5 {
                prop_assert_eq!(left.get(g, p), joint.get(g, p));
            }
        }
        if let Ok(m) = miou(&joint, None) {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn perfect_prediction_scores_one(gt in label_image(8, 6, 5)) {
        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&gt, &gt, &mut cm).unwrap();
        if gt.as_slice().iter().any(|&v| v != 0) {
            prop_assert_eq!(miou(&cm, None).unwrap(), 1.0);
        }
    }

    #[test]
    fn astar_paths_are_valid_optimal_and_symmetric(
        blocked in proptest::collection::vec(proptest::bool::weighted(0.3), 14 * 11),
        picks in proptest::collection::vec(any::<proptest::sample::Index>(), 2),
    ) {
        let mask = Raster::from_vec(14, 11, blocked.iter().map(|b| !b).collect()).unwrap();
        let nav = NavGrid::new(mask, 0.1);
        let free = nav.navigable_cells();
        prop_assume!(free.len() >= 2);
        let (s, g) = (free[picks[0].index(free.len())], free[picks[1].index(free.len())]);
        let there = astar(&nav, s, g).unwrap();
        let back = astar(&nav, g, s).unwrap();
        prop_assert_eq!(there.is_some(), back.is_some());
        if let (Some(p), Some(q)) = (there, back) {
            prop_assert_eq!(p.cells.first(), Some(&s));
            prop_assert_eq!(p.cells.last(), Some(&g));
            let (mut straight, mut diagonal) = (0, 0);
            for w in p.cells.windows(2) {
                let step = moves(&nav, w[0]).find(|(c, _)| *c == w[1]);
                prop_assert!(step.is_some(), "illegal step {} -> {}", w[0], w[1]);
                if step.unwrap().1 { diagonal += 1 } else { straight += 1 }
            }
            prop_assert_eq!((p.steps.straight, p.steps.diagonal), (straight, diagonal));
            prop_assert_eq!(p.steps, q.steps);
            prop_assert!(p.cost() >= octile(s, g).value() - 1e-12);
        }
    }

    #[test]
    fn kmeans_assignments_are_nearest_and_deterministic(
        rows in 3usize..40,
        k in 1usize..5,
        seed in any::<u64>(),
        data in proptest::collection::vec(-5.0f32..5.0, 40 * 3),
        normalize in any::<bool>(),
    ) {
        prop_assume!(k <= rows);
        let m = FloatMatrix::new(rows, 3, data[..rows * 3].to_vec()).unwrap();
        let config = KMeansConfig { normalize, ..KMeansConfig::default() };
        let c = kmeans(&m, k, seed, &config).unwrap();
        prop_assert_eq!(&kmeans(&m, k, seed, &config).unwrap(), &c);
        prop_assert_eq!(c.sizes().iter().sum::<usize>(), rows);
        for w in c.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        }
        let mut inertia = 0.0;
        for i in 0..rows {
            let mut p: Vec<f64> = m.row(i).iter().map(|&v| v as f64).collect();
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if normalize && norm > 0.0 {
                p.iter_mut().for_each(|v| *v /= norm);
            }
            let own = sq(&p, &c.centroids[c.assignments[i]]);
            prop_assert!(c.centroids.iter().all(|q| own <= sq(&p, q)));
            inertia += own;
        }
        prop_assert!((inertia - c.inertia).abs() <= 1e-9 * inertia.max(1.0));
    }

    #[test]
    fn float_matrix_bytes_round_trip(rows in 0usize..6, dim in 1usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..rows * dim).map(|_| rng.random()).collect();
        let m = FloatMatrix::new(rows, dim, data).unwrap();
        prop_assert_eq!(FloatMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn segment_set_file_round_trip(ids in label_image(10, 7, 3)) {
        let set = SegmentSet::from_components(&ids, Some(0));
        let back = SegmentSet::from_file(set.to_file()).unwrap();
        prop_assert_eq!(back.segments().len(), set.segments().len());
        for (a, b) in set.segments().iter().zip(back.segments()) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(a.pixels(), b.pixels());
        }
    }

    #[test]
    fn pose_row_major_round_trip(
        eye in proptest::array::uniform3(-5.0f64..5.0),
        target in proptest::array::uniform3(-5.0f64..5.0),
    ) {
        let (e, t) = (nalgebra::Vector3::from(eye), nalgebra::Vector3::from(target));
        prop_assume!((t - e).norm() > 0.1 && (t - e).normalize().z.abs() < 0.99);
        let pose = Pose::look_at(e, t, nalgebra::Vector3::z()).unwrap();
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        prop_assert_eq!(back.to_row_major(), pose.to_row_major());
        let p = nalgebra::Vector3::new(eye[1], target[0], eye[2]);
        prop_assert!((pose.world_to_camera(&pose.camera_to_world(&p)) - p).norm() < 1e-9);
    }
}

fn living() -> &'static RenderedScene {
    static SCENE: OnceLock<RenderedScene> = OnceLock::new();
    SCENE.get_or_init(|| {
        let options = RenderOptions {
            embeddings: true,
            ..RenderOptions::default()
        };
        render_scene(&fixtures::living_room("living", 3), &fixture_vocabulary(), &options).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn maps_do_not_depend_on_frame_order(seed in any::<u64>(), keep in 8usize..56) {
        let scene = living();
        let vocab = fixture_vocabulary();
        let config = MapConfig::for_vocabulary(&vocab);
        let mut frames = scene.map_frames(false);
        frames.truncate(keep);
        let grid = build_semantic_grid(&frames, &config, vocab.max_id()).unwrap();
        let emb = build_embedding_grid(&frames, &config).unwrap();
        frames.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build_semantic_grid(&frames, &config, vocab.max_id()).unwrap(), grid);
        prop_assert_eq!(build_embedding_grid(&frames, &config).unwrap(), emb);
    }

    #[test]
    fn embedding_query_ignores_positive_scale(class in 4u16..13, exponent in -8i32..8) {
        let scene = living();
        let vocab = fixture_vocabulary();
        let grid = build_embedding_grid(&scene.map_frames(false), &MapConfig::for_vocabulary(&vocab)).unwrap();
        let query = fixtures::class_center(class, grid.dim);
        let cell: Cell = query_embedding_grid(&grid, &query).unwrap();
        let scale = 2f32.powi(exponent);
        let scaled: Vec<f32> = query.iter().map(|v| v * scale).collect();
        prop_assert_eq!(query_embedding_grid(&grid, &scaled).unwrap(), cell);
    }
}
