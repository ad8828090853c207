//! Offline build, persistence and online grounding across module boundaries.

use std::sync::Arc;

use cartier::dataset::{detector_vocabulary, generate_synthetic, load_trajectory, save_trajectory, SyntheticConfig};
use cartier::geometry::point_to_aabb_distance;
use cartier::grounding::{
    ground_query, CacheMode, GroundingError, LlmClient, LlmParams, MockBackend, MockStrategy, OfflineBackend,
    PromptTemplate, ResponseCache,
};
use cartier::index::{accumulate_grid, build_object_depth, build_object_viewpoint, SpatialIndex, WordHashEmbedder};

fn small_scene() -> cartier::dataset::SyntheticDataset {
    let cfg = SyntheticConfig { seed: 21, object_count: 6, waypoint_count: 12, ..SyntheticConfig::default() };
    generate_synthetic(&cfg).unwrap()
}

#[test]
fn saved_trajectory_rebuilds_identical_indices() {
    let data = small_scene();
    let tmp = tempfile::tempdir().unwrap();
    save_trajectory(&data.trajectory, &tmp.path().join("t")).unwrap();
    let loaded = load_trajectory(&tmp.path().join("t")).unwrap();
    assert_eq!(loaded, data.trajectory);
    assert_eq!(build_object_depth(&loaded, 0.8).unwrap(), build_object_depth(&data.trajectory, 0.8).unwrap());
    assert_eq!(
        build_object_viewpoint(&loaded, 0.8, true).unwrap(),
        build_object_viewpoint(&data.trajectory, 0.8, true).unwrap()
    );
}

#[test]
fn every_index_kind_survives_a_round_trip() {
    let data = small_scene();
    let emb = WordHashEmbedder::new(16);
    let tmp = tempfile::tempdir().unwrap();
    let indices = [
        SpatialIndex::Object(build_object_depth(&data.trajectory, 0.8).unwrap()),
        SpatialIndex::Object(build_object_viewpoint(&data.trajectory, 0.8, false).unwrap()),
        SpatialIndex::Grid(accumulate_grid(&data.trajectory, &emb, 0.2).unwrap()),
    ];
    for (i, idx) in indices.iter().enumerate() {
        let path = tmp.path().join(format!("index-{i}.json"));
        idx.save(&path).unwrap();
        let back = SpatialIndex::load(&path).unwrap();
        assert_eq!(back.kind(), idx.kind());
        for label in detector_vocabulary(&data.trajectory, 0.8) {
            let a = idx.lookup(&label, Some(&emb)).unwrap();
            let b = back.lookup(&label, Some(&emb)).unwrap();
            assert_eq!(a.label, b.label);
            // Grid means are stored as f32, which may move a near-tie.
            assert!(a.point.distance(&b.point) < 0.5, "{label}: {:?} vs {:?}", a.point, b.point);
        }
    }
}

#[test]
fn recorded_answers_replay_without_a_backend() {
    let data = small_scene();
    let vocab = detector_vocabulary(&data.trajectory, 0.8);
    let index = SpatialIndex::Object(build_object_depth(&data.trajectory, 0.8).unwrap());
    let template = PromptTemplate::default();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cache.jsonl");

    let recorder = LlmClient::new(Arc::new(MockBackend::new(MockStrategy::Keyword)), LlmParams::new("m"))
        .unwrap()
        .with_cache(Arc::new(ResponseCache::open(&path).unwrap()), CacheMode::Record);
    let mut recorded = Vec::new();
    for q in &data.queries {
        let g = ground_query(&vocab, &q.text, &template, &recorder, &index, None).unwrap();
        let truth = data.truth.objects.iter().find(|o| o.label == g.label).unwrap();
        assert!(point_to_aabb_distance(&g.point, &truth.aabb) < 1e-6);
        recorded.push(g);
    }

    let replayer = LlmClient::new(Arc::new(OfflineBackend), LlmParams::new("m"))
        .unwrap()
        .with_cache(Arc::new(ResponseCache::open(&path).unwrap()), CacheMode::Replay);
    for (q, g) in data.queries.iter().zip(&recorded) {
        assert_eq!(&ground_query(&vocab, &q.text, &template, &replayer, &index, None).unwrap(), g);
    }
    let miss = ground_query(&vocab, "an unrecorded request", &template, &replayer, &index, None);
    assert!(matches!(miss, Err(GroundingError::CacheMiss { .. })), "{miss:?}");
}
