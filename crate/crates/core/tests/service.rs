mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fuselabel::fixtures::{self, fixture_vocabulary, render_scene, RenderOptions};
use fuselabel::ingest::SegmentKey;
use fuselabel::parts::PartAnnotationSet;
use fuselabel::pipeline::{run_all, run_stage, Stage, StageConfig};
use fuselabel::service::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    config: StageConfig,
}

fn prepared() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixtures::standard_dataset(&dir.path().join("data"), &RenderOptions::default()).unwrap();
    let mut config = StageConfig::new(&manifest, dir.path().join("out"));
    config.parts.k = 2;
    run_all(&Stage::ALL, &config).unwrap();
    Fixture { _dir: dir, config }
}

fn app(f: &Fixture) -> axum::Router {
    router(Arc::new(
        AppState::load(&f.config.manifest, &f.config.out, None).unwrap(),
    ))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// Keys of the handle segments the fixture planted in the kitchen scene.
fn planted_handles() -> BTreeSet<SegmentKey> {
    let vocab = fixture_vocabulary();
    let scene = render_scene(
        &fixtures::cabinet_wall("kitchen", 12),
        &vocab,
        &RenderOptions::default(),
    )
    .unwrap();
    let handle = vocab.id("handle").unwrap();
    scene
        .segment_classes
        .iter()
        .filter(|(_, &c)| c == handle)
        .map(|(k, _)| k.clone())
        .collect()
}

#[tokio::test]
async fn scenes_list_artifacts() {
    let f = prepared();
    let (status, body) = call(&app(&f), "GET", "/api/scenes", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["living", "kitchen"]);
    let a = &body[1]["artifacts"];
    assert_eq!(a["fused"], true);
    assert_eq!(a["map"], true);
    assert_eq!(a["clusters"], true);
    assert_eq!(a["selection"], false);
}

#[tokio::test]
async fn cluster_selection_round_trip() {
    let f = prepared();
    let app = app(&f);
    let (status, clusters) = call(&app, "GET", "/api/scenes/kitchen/clusters", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(clusters["k"], 2);
    for c in clusters["clusters"].as_array().unwrap() {
        let (s, _) = call(&app, "GET", c["montage"].as_str().unwrap(), None).await;
        assert_eq!(s, StatusCode::OK);
    }

    // Pick the cluster whose members are the planted handles, as a reviewer
    // looking at the montages would.
    let planted = planted_handles();
    let index = fuselabel::pipeline::load_cluster_index(&f.config.layout(), "kitchen").unwrap();
    let chosen = (0..2)
        .find(|&c| {
            index
                .clustering
                .members(c)
                .iter()
                .all(|&i| planted.contains(&index.ids[i]))
        })
        .expect("a pure handle cluster");

    let (status, reply) = call(
        &app,
        "POST",
        "/api/scenes/kitchen/cluster-selection",
        Some(json!({"cluster": chosen, "part": "cabinet handle"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["part_masks"], planted.len());
    let sidecar = f.config.layout().selection("kitchen");
    assert!(sidecar.exists());

    // The service wrote nothing but the sidecar; the parts stage consumes it.
    run_stage(Stage::Parts, &f.config).unwrap();
    let set = PartAnnotationSet::load(&f.config.layout().parts("kitchen").join("parts")).unwrap();
    assert_eq!(set.part, "cabinet handle");
    let got: BTreeSet<SegmentKey> = set
        .parts
        .iter()
        .map(|p| SegmentKey {
            frame: p.frame.clone(),
            segment: p.segment,
        })
        .collect();
    assert_eq!(got, planted);
    let segments = load_segments(&f, "kitchen");
    for p in &set.parts {
        let seg = segments[&p.frame].get(p.segment).unwrap();
        assert_eq!(p.pixels, seg.pixels());
    }

    // Re-selection overwrites.
    let (status, _) = call(
        &app,
        "POST",
        "/api/scenes/kitchen/cluster-selection",
        Some(json!({"cluster": 1 - chosen, "part": "door"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, clusters) = call(&app, "GET", "/api/scenes/kitchen/clusters", None).await;
    assert_eq!(clusters["selection"]["part"], "door");
}

fn load_segments(f: &Fixture, scene: &str) -> std::collections::BTreeMap<String, fuselabel::ingest::SegmentSet> {
    let m = fuselabel::ingest::load_manifest(&f.config.manifest).unwrap();
    m.scene(scene)
        .unwrap()
        .frames
        .iter()
        .map(|fr| {
            (
                fr.id.clone(),
                fuselabel::ingest::SegmentSet::load(fr.segments.as_deref().unwrap()).unwrap(),
            )
        })
        .collect()
}

#[tokio::test]
async fn selection_rejects_bad_requests() {
    let f = prepared();
    let app = app(&f);
    let (status, body) = call(
        &app,
        "POST",
        "/api/scenes/kitchen/cluster-selection",
        Some(json!({"cluster": 9, "part": "handle"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("out of range"));

    let (status, body) = call(
        &app,
        "POST",
        "/api/scenes/kitchen/cluster-selection",
        Some(json!({"part": 3})),
    )
    .await;
    assert!(status.is_client_error());
    assert!(body["error"].is_string());

    let (status, body) = call(&app, "GET", "/api/scenes/attic/clusters", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    assert!(!f.config.layout().selection("kitchen").exists());
}

#[tokio::test]
async fn episode_review_round_trip() {
    let f = prepared();
    let app = app(&f);
    let before = std::fs::read(f.config.layout().nav().join("summary.json")).unwrap();
    let (status, list) = call(&app, "GET", "/api/episodes", None).await;
    assert_eq!(status, StatusCode::OK);
    let episodes = list["episodes"].as_array().unwrap().clone();
    assert_eq!(episodes.len(), 6);
    assert_eq!(list["manual"]["reviewed"], 0);
    assert_eq!(list["manual"]["success_rate"], Value::Null);
    let automatic = list["automatic"].clone();

    let first = episodes[0]["id"].as_str().unwrap();
    let (status, detail) = call(&app, "GET", &format!("/api/episodes/{first}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(detail["map"].as_str().unwrap().ends_with("semantic_render.png"));
    assert!(detail["final_view"].as_str().unwrap().starts_with("/data/"));
    assert!(detail["result"]["stop"].is_object());

    let (status, after) = call(
        &app,
        "POST",
        &format!("/api/episodes/{first}/review"),
        Some(json!({"success": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after["manual"]["reviewed"], 1);
    assert_eq!(after["manual"]["success_rate"], 0.0);
    assert_eq!(after["automatic"], automatic);

    for e in &episodes[1..] {
        let id = e["id"].as_str().unwrap();
        call(
            &app,
            "POST",
            &format!("/api/episodes/{id}/review"),
            Some(json!({"success": 1})),
        )
        .await;
    }
    let (_, full) = call(&app, "GET", "/api/episodes", None).await;
    assert_eq!(full["manual"]["coverage"], 100.0);
    let manual = full["manual"].clone();
    assert!((manual["success_rate"].as_f64().unwrap() - 500.0 / 6.0).abs() < 1e-9);

    // A fresh service over the same directory reproduces the state, and the
    // stage artifact is untouched.
    let (_, reloaded) = call(&self::app(&f), "GET", "/api/episodes", None).await;
    assert_eq!(reloaded["manual"], manual);
    assert_eq!(
        std::fs::read(f.config.layout().nav().join("summary.json")).unwrap(),
        before
    );

    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/episodes/{first}/review"),
        Some(json!({"success": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, "POST", "/api/episodes/nope/review", Some(json!({"success": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frame_layers_and_files() {
    let f = prepared();
    let app = app(&f);
    let (status, body) = call(&app, "GET", "/api/frames/living_f000/annotation", None).await;
    assert_eq!(status, StatusCode::OK);
    let layers = body["layers"].as_object().unwrap();
    for key in [
        "rgb",
        "ground_truth",
        "fused_semantic",
        "fused_instance",
        "verified_semantic",
    ] {
        assert!(layers.contains_key(key), "{key}");
    }
    let resp = app
        .clone()
        .oneshot(
            Request::get(layers["fused_semantic"].as_str().unwrap())
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");

    let (status, _) = call(&app, "GET", "/files/../data/manifest.json", None).await;
    assert!(status.is_client_error());
    let (status, _) = call(&app, "GET", "/api/frames/nope/annotation", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, "GET", "/api/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn missing_artifacts_are_404_json() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixtures::standard_dataset(&dir.path().join("data"), &RenderOptions::default()).unwrap();
    let out = dir.path().join("out");
    let app = router(Arc::new(AppState::load(&manifest, &out, None).unwrap()));
    for uri in ["/api/episodes", "/api/scenes/kitchen/clusters"] {
        let (status, body) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(body["error"].as_str().unwrap().contains(&out.display().to_string()));
    }
    assert!(!Path::new(&out).exists());
}

#[tokio::test]
async fn service_writes_only_sidecars() {
    let f = prepared();
    let out = f.config.out.clone();
    let sidecars = ["nav/reviews.json", "parts/kitchen/selection.json"];
    let before = common::hash_tree(&out, &sidecars);
    let data = common::hash_tree(f.config.manifest.parent().unwrap(), &[]);
    let app = app(&f);
    for uri in [
        "/api/scenes",
        "/api/episodes",
        "/api/scenes/kitchen/clusters",
        "/api/frames/kitchen_f000/annotation",
    ] {
        assert_eq!(call(&app, "GET", uri, None).await.0, StatusCode::OK, "{uri}");
    }
    let (_, list) = call(&app, "GET", "/api/episodes", None).await;
    let id = list["episodes"][0]["id"].as_str().unwrap().to_string();
    call(
        &app,
        "POST",
        &format!("/api/episodes/{id}/review"),
        Some(json!({"success": 1})),
    )
    .await;
    call(
        &app,
        "POST",
        "/api/scenes/kitchen/cluster-selection",
        Some(json!({"cluster": 0, "part": "knob"})),
    )
    .await;
    for s in sidecars {
        assert!(out.join(s).exists(), "{s}");
    }
    assert_eq!(common::hash_tree(&out, &sidecars), before);
    assert_eq!(common::hash_tree(f.config.manifest.parent().unwrap(), &[]), data);
}
