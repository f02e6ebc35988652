use std::path::{Path, PathBuf};
use std::time::Duration;

use framelens_core::artifact::{load_artifact, load_report, FrameStatus};
use framelens_core::gateway::mock::{Behavior, FailureScript, MockProvider};
use framelens_core::gateway::{ApiKey, EndpointConfig, HttpGateway, RetryPolicy};
use framelens_core::media::{MediaTool, TestPattern};
use framelens_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use framelens_core::validate::GeometryPolicy;
use serde_json::{json, Value};

fn video(dir: &Path, seconds: f64) -> PathBuf {
    let path = dir.join("clip.mp4");
    MediaTool::from_env()
        .generate_test_video(&path, TestPattern::Bars, seconds, 30, 160, 120)
        .expect("ffmpeg must be installed to run pipeline tests");
    path
}

fn config(video: &Path, out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(video, out);
    c.retry = RetryPolicy {
        max_retries: 2,
        backoff_base: Duration::from_millis(1),
        backoff_factor: 2.0,
    };
    c
}

fn gateway(mock: &MockProvider) -> HttpGateway {
    HttpGateway::new(EndpointConfig {
        base_url: mock.base_url(),
        api_key: Some(ApiKey::new("pipeline-test-key")),
        model_id: "mock-vlm".into(),
        timeout_s: 10.0,
        ..EndpointConfig::default()
    })
    .unwrap()
}

fn without_timestamp(path: &Path) -> Value {
    let mut v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("created_at");
    v
}

#[tokio::test]
async fn all_batches_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 10.0);
    let out = dir.path().join("out");
    let mock = MockProvider::serve(FailureScript::default(), 0).await.unwrap();
    let run = run_pipeline(&config(&v, &out), &MediaTool::from_env(), &gateway(&mock))
        .await
        .unwrap();
    let a = &run.artifact;
    assert_eq!(a.frames.len(), 10);
    assert_eq!(a.ok_count(), 10);
    assert!(a.failures.is_empty());
    assert_eq!(mock.request_count(), 3);
    for f in &a.frames {
        assert_eq!(f.detections.len(), 1 + f.frame_index as usize % 2);
        assert_eq!(f.detections[0].analysis_result["emotion"], "neutral");
    }
    assert_eq!(run.artifact_path, out.join("clip.detections.json"));
    assert_eq!(&load_artifact(&run.artifact_path).unwrap(), a);
    let report = load_report(&run.report_path).unwrap();
    assert_eq!(report.batches.len(), 3);
    assert!(report.batches.iter().all(|b| b.accepted()));
    assert_eq!(a.inference.model_id, "mock-vlm");
    mock.shutdown().await;
}

#[tokio::test]
async fn failed_batch_marks_only_its_frames() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 10.0);
    let mock = MockProvider::serve(FailureScript::default(), 0).await.unwrap();
    let gw = gateway(&mock);
    let tool = MediaTool::from_env();

    let clean = run_pipeline(&config(&v, &dir.path().join("clean")), &tool, &gw).await.unwrap();
    mock.reset(FailureScript::new(vec![
        Behavior::Synthesize,
        Behavior::ReplyText { text: "I cannot identify people in these images.".into() },
    ]));
    let run = run_pipeline(&config(&v, &dir.path().join("partial")), &tool, &gw).await.unwrap();
    let a = &run.artifact;
    assert_eq!(a.frames.len(), 10);
    let failed: Vec<u32> = a
        .frames
        .iter()
        .filter(|f| f.status == FrameStatus::Failed)
        .map(|f| f.frame_index)
        .collect();
    assert_eq!(failed, vec![4, 5, 6, 7]);
    assert_eq!(a.failures.len(), 1);
    assert_eq!(a.failures[0].batch_index, 1);
    assert_eq!(a.failures[0].error_kind, "no_json_found");
    assert_eq!(a.failures[0].frame_indices, vec![4, 5, 6, 7]);
    for (x, y) in a.frames.iter().zip(&clean.artifact.frames) {
        if x.status == FrameStatus::Ok {
            assert_eq!(x, y, "batch independence at frame {}", x.frame_index);
        }
    }
    mock.shutdown().await;
}

#[tokio::test]
async fn provider_errors_after_retries_fail_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 4.0);
    let status = |code| Behavior::HttpStatus { code, retry_after_s: None };
    let mock = MockProvider::serve(FailureScript::new(vec![status(500), status(502), status(503)]), 0)
        .await
        .unwrap();
    let run = run_pipeline(&config(&v, dir.path()), &MediaTool::from_env(), &gateway(&mock))
        .await
        .unwrap();
    assert_eq!(run.artifact.failed_count(), 4);
    assert_eq!(run.artifact.failures[0].error_kind, "server_error");
    assert_eq!(mock.request_count(), 3);
    mock.shutdown().await;
}

#[tokio::test]
async fn parallel_run_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 10.0);
    let mock = MockProvider::serve(FailureScript::default(), 0).await.unwrap();
    let gw = gateway(&mock);
    let tool = MediaTool::from_env();
    let seq = run_pipeline(&config(&v, &dir.path().join("a")), &tool, &gw).await.unwrap();
    let seq2 = run_pipeline(&config(&v, &dir.path().join("b")), &tool, &gw).await.unwrap();
    let mut pc = config(&v, &dir.path().join("c"));
    pc.parallel_batches = 3;
    pc.batch_size = 2;
    let mut sc = config(&v, &dir.path().join("d"));
    sc.batch_size = 2;
    let par = run_pipeline(&pc, &tool, &gw).await.unwrap();
    let seq_small = run_pipeline(&sc, &tool, &gw).await.unwrap();

    assert_eq!(without_timestamp(&seq.artifact_path), without_timestamp(&seq2.artifact_path));
    assert_eq!(
        std::fs::read(&seq.report_path).unwrap(),
        std::fs::read(&seq2.report_path).unwrap()
    );
    assert_eq!(without_timestamp(&par.artifact_path), without_timestamp(&seq_small.artifact_path));
    mock.shutdown().await;
}

#[tokio::test]
async fn structurally_invalid_frame_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 2.0);
    let good = json!({"person_id": 0, "bbox": {"x_min": 1, "y_min": 1, "x_max": 50, "y_max": 60}, "confidence": 0.7, "analysis_result": {"emotion": "calm"}});
    let bad = json!({"person_id": 0, "bbox": {"x_min": 1, "y_min": 1, "x_max": 50, "y_max": 60}, "confidence": 1.7, "analysis_result": {"emotion": "calm"}});
    let reply = json!({"0": [good], "1": [bad]}).to_string();
    let mock = MockProvider::serve(FailureScript::new(vec![Behavior::ReplyText { text: reply }]), 0)
        .await
        .unwrap();
    let run = run_pipeline(&config(&v, dir.path()), &MediaTool::from_env(), &gateway(&mock))
        .await
        .unwrap();
    let a = &run.artifact;
    assert_eq!(a.frames[0].status, FrameStatus::Ok);
    assert_eq!(a.frames[0].detections.len(), 1);
    assert_eq!(a.frames[1].status, FrameStatus::Failed);
    assert_eq!(a.failures.len(), 1);
    assert_eq!(a.failures[0].error_kind, "structural_rejection");
    assert_eq!(a.failures[0].frame_indices, vec![1]);
    assert!(a.failures[0].detail.contains("range: confidence"), "{}", a.failures[0].detail);
    let report = load_report(&run.report_path).unwrap();
    assert_eq!(report.batches[0].structural_errors.len(), 1);
    mock.shutdown().await;
}

#[tokio::test]
async fn clamp_policy_sanitizes_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 1.0);
    let reply = json!({"0": [
        {"person_id": 0, "bbox": {"x_min": 100, "y_min": 10, "x_max": 400, "y_max": 90}, "confidence": 0.5, "analysis_result": {"emotion": "x"}},
        {"person_id": 1, "bbox": {"x_min": 50, "y_min": 10, "x_max": 20, "y_max": 90}, "confidence": 0.5, "analysis_result": {"emotion": "x"}}
    ]})
    .to_string();
    let mock = MockProvider::serve(FailureScript::new(vec![]).with_default(Behavior::ReplyText { text: reply }), 0)
        .await
        .unwrap();
    let tool = MediaTool::from_env();
    let gw = gateway(&mock);

    let mut c = config(&v, &dir.path().join("clamp"));
    c.geometry_policy = GeometryPolicy::Clamp;
    let run = run_pipeline(&c, &tool, &gw).await.unwrap();
    let dets = &run.artifact.frames[0].detections;
    assert_eq!(dets.len(), 1);
    assert_eq!((dets[0].bbox.x_min, dets[0].bbox.x_max), (100, 160));
    let report = load_report(&run.report_path).unwrap();
    assert_eq!(report.batches[0].geometric_warnings.len(), 2);

    let mut w = config(&v, &dir.path().join("warn"));
    w.geometry_policy = GeometryPolicy::Warn;
    let run = run_pipeline(&w, &tool, &gw).await.unwrap();
    assert_eq!(run.artifact.frames[0].detections.len(), 2);
    assert_eq!(run.artifact.frames[0].detections[0].bbox.x_max, 400);
    mock.shutdown().await;
}

#[tokio::test]
async fn auth_failure_aborts_with_stub() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(dir.path(), 10.0);
    let out = dir.path().join("out");
    let mock = MockProvider::serve(
        FailureScript::new(vec![]).with_default(Behavior::HttpStatus { code: 401, retry_after_s: None }),
        0,
    )
    .await
    .unwrap();
    let err = run_pipeline(&config(&v, &out), &MediaTool::from_env(), &gateway(&mock))
        .await
        .unwrap_err();
    assert!(matches!(err, PipelineError::AuthFailed(_)), "{err}");
    assert!(!out.join("clip.detections.json").exists());
    let stub: Value = serde_json::from_slice(&std::fs::read(out.join("clip.abort.json")).unwrap()).unwrap();
    assert_eq!(stub["error_kind"], "auth_failed");
    assert_eq!(mock.request_count(), 1, "credential errors are not retried");
    mock.shutdown().await;
}

#[tokio::test]
async fn fatal_setup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProvider::serve(FailureScript::default(), 0).await.unwrap();
    let gw = gateway(&mock);
    let tool = MediaTool::from_env();

    let err = run_pipeline(&config(&dir.path().join("nope.mp4"), dir.path()), &tool, &gw)
        .await
        .unwrap_err();
    assert!(matches!(err, PipelineError::Media(_)), "{err}");

    let v = video(dir.path(), 1.0);
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"").unwrap();
    let err = run_pipeline(&config(&v, &blocker), &tool, &gw).await.unwrap_err();
    assert!(matches!(err, PipelineError::OutputDir { .. }), "{err}");

    let mut c = config(&v, dir.path());
    c.batch_size = 0;
    assert!(matches!(run_pipeline(&c, &tool, &gw).await, Err(PipelineError::Config(_))));
    assert_eq!(mock.request_count(), 0);
    mock.shutdown().await;
}
