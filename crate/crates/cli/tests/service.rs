mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{small_spec, synth_fixture, Fixture};
use finercam_cli::commands::open_workspace;
use finercam_cli::service::router;
use finercam_cli::workspace::Workspace;
use finercam_core::cam::{explain, normalize, ExplanationTarget, FeatureStack, Method};
use finercam_core::eval::{evaluate_sample, EvalConfig, EvalSample};
use finercam_core::grid::Image;
use finercam_core::head::load_head;
use finercam_core::tensor_store::{Dataset, TensorFile};

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &axum::Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn app(f: &Fixture) -> (axum::Router, Arc<Workspace>) {
    let ws = Arc::new(open_workspace(&f.manifest, &f.head, None).unwrap());
    (router(ws.clone(), None), ws)
}

#[tokio::test]
async fn classes_samples_and_images() {
    let f = synth_fixture(&small_spec());
    let (app, ws) = app(&f);
    let (status, body) = get(&app, "/api/classes").await;
    assert_eq!(status, StatusCode::OK);
    let classes: Vec<String> = serde_json::from_slice(&body).unwrap();
    assert_eq!(classes, ws.dataset.manifest.classes);

    let (_, body) = get(&app, "/api/samples").await;
    let all: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(all.len(), 176);
    let (_, body) = get(&app, "/api/samples?class=3").await;
    let three: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(three.len(), 22);
    assert!(three.iter().all(|s| s["class_id"] == 3 && s["class_name"] == classes[3]));
    let (_, body) = get(&app, &format!("/api/samples?class={}", classes[3])).await;
    assert_eq!(serde_json::from_slice::<Vec<Value>>(&body).unwrap(), three);
    assert_eq!(get(&app, "/api/samples?class=nine").await.0, StatusCode::BAD_REQUEST);

    let (status, png) = get(&app, "/api/image/test_0000").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(get(&app, "/api/image/missing").await.0, StatusCode::NOT_FOUND);

    let (status, body) = get(&app, "/api/similarity").await;
    assert_eq!(status, StatusCode::OK);
    let profile: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(profile["mean_by_rank"].as_array().unwrap().len(), 7);
}

/// The saliency of a request computed straight from the core library.
fn direct_saliency(f: &Fixture, sample_id: &str, target: usize, refs: &[usize], gamma: f32, method: Method) -> Vec<u8> {
    let ds = Dataset::open(&f.manifest).unwrap();
    let head = load_head(&f.head).unwrap();
    let record = ds.sample(sample_id).unwrap();
    let features = FeatureStack::from_tensor(&ds.features(record).unwrap()).unwrap();
    let image = Image::from_tensor(&ds.image(record).unwrap()).unwrap();
    let map = explain(&features, Some(&head), &ExplanationTarget::finer(target, refs, gamma, method), None).unwrap();
    normalize(&map.upsampled(image.height(), image.width())).unwrap().grid.to_tensor().encode()
}

#[tokio::test]
async fn explain_echoes_request_and_matches_library() {
    let f = synth_fixture(&small_spec());
    let (app, _) = app(&f);
    let mut payloads = Vec::new();
    for gamma in [0.0, 0.6] {
        let req = json!({"sample_id": "test_0004", "gamma": gamma, "references": "auto:3"});
        let (status, body) = post(&app, "/api/explain", &req).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["metadata"]["sample_id"], "test_0004");
        assert_eq!(body["metadata"]["gamma"], gamma);
        assert_eq!(body["metadata"]["references"], "auto:3");
        let target = body["target_class"].as_u64().unwrap() as usize;
        assert_eq!(target, 4);
        let refs: Vec<usize> = serde_json::from_value(body["references_used"].clone()).unwrap();
        assert_eq!(refs.len(), 3);
        let saliency = BASE64.decode(body["saliency"].as_str().unwrap()).unwrap();
        assert_eq!(saliency, direct_saliency(&f, "test_0004", target, &refs, gamma as f32, Method::Grad));
        assert_eq!(TensorFile::decode(&saliency).unwrap().shape(), &[32, 32]);
        let overlay = BASE64.decode(body["overlay"].as_str().unwrap()).unwrap();
        assert_eq!(&overlay[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(body["logits"].as_array().unwrap().len(), 8);
        payloads.push(body);
    }
    assert_ne!(payloads[0]["saliency"], payloads[1]["saliency"]);

    // Identical requests give identical responses.
    let (_, again) = post(&app, "/api/explain", &json!({"sample_id": "test_0004", "gamma": 0.6, "references": "auto:3"})).await;
    assert_eq!(again, payloads[1]);
}

#[tokio::test]
async fn explain_errors() {
    let f = synth_fixture(&small_spec());
    let (app, _) = app(&f);
    let cases = [
        (json!({"sample_id": "nope"}), StatusCode::NOT_FOUND),
        (json!({"sample_id": "test_0000", "gamma": 5}), StatusCode::BAD_REQUEST),
        (json!({"sample_id": "test_0000", "references": "auto:8"}), StatusCode::BAD_REQUEST),
        (json!({"sample_id": "test_0000", "references": [0], "target_class": 0}), StatusCode::BAD_REQUEST),
        (json!({"sample_id": "test_0000", "method": "magic"}), StatusCode::BAD_REQUEST),
        (json!({"sample": "test_0000"}), StatusCode::BAD_REQUEST),
    ];
    for (req, want) in cases {
        let (status, body) = post(&app, "/api/explain", &req).await;
        assert_eq!(status, want, "{req}");
        assert!(body["error"].is_string());
    }
    let raw = Request::post("/api/explain").body(Body::from("{oops")).unwrap();
    assert_eq!(call(&app, raw).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn relative_drop_matches_eval_harness() {
    let f = synth_fixture(&small_spec());
    let (app, ws) = app(&f);
    let backend = ws.backend.as_deref().unwrap();
    for id in ["test_0001", "test_0006"] {
        let (status, body) = post(&app, "/api/relative_drop", &json!({"sample_id": id})).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let s = ws.load_sample(id).unwrap();
        let sample = EvalSample {
            sample_id: id,
            image: &s.image,
            features: &s.features,
            label: s.record.class_id,
            bbox: s.record.bbox,
        };
        let report = evaluate_sample(backend, Some(&ws.head), &sample, &EvalConfig::default()).unwrap();
        let rd = body["relative_drop"].as_f64().unwrap();
        assert!((rd - report.rd(0.05).unwrap()).abs() < 1e-6, "{rd} vs {:?}", report.rd(0.05));
    }
    let (status, _) = post(&app, "/api/relative_drop", &json!({"sample_id": "test_0001", "fraction": 1.5})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn backendless_service_refuses_model_calls() {
    let f = synth_fixture(&small_spec());
    let ws = Workspace::open(&f.manifest, &f.head, None).unwrap();
    let app = router(Arc::new(ws), None);
    let (status, _) = post(&app, "/api/relative_drop", &json!({"sample_id": "test_0001"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = post(&app, "/api/explain", &json!({"sample_id": "test_0001", "method": "score"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = post(&app, "/api/explain", &json!({"sample_id": "test_0001"})).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn static_assets_are_served() {
    let f = synth_fixture(&small_spec());
    let assets = f.path("assets");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<p>explorer</p>").unwrap();
    let ws = Arc::new(open_workspace(&f.manifest, &f.head, None).unwrap());
    let app = router(ws, Some(&assets));
    let (status, body) = get(&app, "/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>explorer</p>");
    assert_eq!(get(&app, "/api/classes").await.0, StatusCode::OK);
}
