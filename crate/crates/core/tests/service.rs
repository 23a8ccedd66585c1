use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dermafuse::fusion::{build_router, AppState, ServiceConfig, ServiceLimits};
use dermafuse::synthetic::{toy_registry, write_png, write_stub_models};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "svc-test";
type Case<'a> = (Vec<(&'a str, &'a [u8])>, StatusCode, &'a str);

const STORY: &str = "Crimson patches with a raised border on my forearm.";

fn state(dir: &Path, limits: ServiceLimits, record_timings: bool) -> Arc<AppState> {
    write_stub_models(&dir.join("models"), &toy_registry()).unwrap();
    let cfg = ServiceConfig {
        vision_checkpoint: dir.join("models/vision"),
        adapter_checkpoint: dir.join("models/text"),
        registry_version: None,
        top_n: 3,
        chain: "2".into(),
        record_timings,
        limits,
    };
    Arc::new(AppState::from_config(&cfg).unwrap())
}

fn png(dir: &Path, side: u32) -> Vec<u8> {
    let p = dir.join(format!("img{side}.png"));
    write_png(&p, side, side, [30, 60, 210]);
    std::fs::read(p).unwrap()
}

fn form(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in parts {
        let disposition = if *name == "image" {
            "Content-Disposition: form-data; name=\"image\"; filename=\"a.png\"\r\n\r\n".to_string()
        } else {
            format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n")
        };
        body.extend_from_slice(format!("--{BOUNDARY}\r\n{disposition}").as_bytes());
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn post(state: &Arc<AppState>, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::post("/v1/diagnose")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    let resp = build_router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("<none>")
}

#[tokio::test]
async fn rejects_bad_requests_with_codes() {
    let dir = tempfile::tempdir().unwrap();
    let limits = ServiceLimits {
        max_upload_bytes: 4096,
        max_narrative_chars: 60,
    };
    let st = state(dir.path(), limits, false);
    let img = png(dir.path(), 8);
    let story = STORY.as_bytes();
    let long = "x".repeat(61);

    let cases: Vec<Case> = vec![
        (vec![("narrative", story)], StatusCode::BAD_REQUEST, "missing_field"),
        (vec![("image", &img), ("narrative", story), ("extra", b"1")], StatusCode::BAD_REQUEST, "unknown_field"),
        (vec![("image", &img), ("narrative", story), ("top_n", b"three")], StatusCode::BAD_REQUEST, "invalid_parameter"),
        (vec![("image", &img), ("narrative", story), ("top_n", b"0")], StatusCode::BAD_REQUEST, "invalid_parameter"),
        (vec![("image", &img), ("narrative", story), ("top_n", b"5")], StatusCode::BAD_REQUEST, "invalid_parameter"),
        (vec![("image", &img), ("narrative", story), ("k", b"sideways")], StatusCode::BAD_REQUEST, "invalid_parameter"),
        (vec![("image", &img), ("narrative", story), ("k", b"0")], StatusCode::BAD_REQUEST, "invalid_parameter"),
        (
            vec![("image", &img), ("narrative", long.as_bytes())],
            StatusCode::PAYLOAD_TOO_LARGE,
            "narrative_too_long",
        ),
    ];
    for (parts, status, expected) in cases {
        let (got, body) = post(&st, form(&parts)).await;
        assert_eq!((got, code(&body)), (status, expected), "{body}");
        assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    }

    let big = vec![0u8; 8192];
    let (got, body) = post(&st, form(&[("image", &big), ("narrative", story)])).await;
    assert_eq!((got, code(&body)), (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large"), "{body}");

    let (got, _) = post(&st, form(&[("image", &img), ("narrative", &[b'y'; 60])])).await;
    assert_eq!(got, StatusCode::OK);
}

#[tokio::test]
async fn repeated_requests_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), ServiceLimits::default(), false);
    let img = png(dir.path(), 12);
    let a = form(&[("image", &img), ("narrative", STORY.as_bytes())]);
    let b = form(&[("image", &img), ("narrative", b"dry flaky scale"), ("k", b"direct"), ("top_n", b"1")]);

    let (_, first) = post(&st, a.clone()).await;
    let (_, other) = post(&st, b).await;
    let (_, again) = post(&st, a).await;
    assert_eq!(first, again);
    assert_eq!(other["mode"]["kind"], "direct");
    assert_eq!(other["image_topn"]["top"].as_array().unwrap().len(), 1);
    assert_eq!(first["mode"]["k"], 2);
    assert!(first.get("timings").is_none());
}

#[tokio::test]
async fn timings_reported_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), ServiceLimits::default(), true);
    let img = png(dir.path(), 12);
    let (status, body) = post(&st, form(&[("image", &img), ("narrative", STORY.as_bytes())])).await;
    assert_eq!(status, StatusCode::OK);
    let t = &body["timings"];
    for key in ["vision_ms", "text_ms", "total_ms"] {
        assert!(t[key].as_f64().is_some_and(|v| v >= 0.0), "{t}");
    }
    assert!(t["total_ms"].as_f64() >= t["vision_ms"].as_f64());
}
