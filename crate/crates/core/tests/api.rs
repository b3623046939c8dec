mod common;

use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use foodcurate::manifest::{load_manifest, Stage};
use foodcurate::pipeline::calibration::{decision_log_path, read_decision_log};
use foodcurate::pipeline::server::{router, CategoryView, SharedSession};
use foodcurate::pipeline::{run_pending, run_stage, Action, CalibrationSession, Progress, QueueItem};
use foodcurate::synth::CorpusPlan;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    _dir: tempfile::TempDir,
    fx: common::Fixture,
    session: SharedSession,
}

impl Api {
    fn new() -> Api {
        let dir = tempfile::tempdir().unwrap();
        let fx = common::Fixture::new(dir.path(), &CorpusPlan::default());
        let cfg = fx.config();
        run_stage(&cfg, Stage::Ingest, &fx.manifest, false).unwrap();
        fx.write_scores();
        run_pending(&cfg, &fx.manifest, Stage::Foodness).unwrap();
        let session = Arc::new(Mutex::new(CalibrationSession::open(&fx.manifest).unwrap()));
        Api { _dir: dir, fx, session }
    }

    async fn call(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = router(self.session.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
    }

    async fn get<T: serde::de::DeserializeOwned>(&self, uri: &str) -> T {
        let (status, body) = self.call(Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK, "{uri}");
        serde_json::from_slice(&body).unwrap()
    }

    async fn post(&self, body: Value) -> StatusCode {
        let req = Request::post("/api/decision")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.call(req).await.0
    }
}

#[tokio::test]
async fn queue_is_ordered_and_limited() {
    let api = Api::new();
    let q: Vec<QueueItem> = api.get("/api/queue?limit=50").await;
    assert_eq!(q.len(), 24);
    for w in q.windows(2) {
        let (a, b) = (w[0].foodness_score.unwrap(), w[1].foodness_score.unwrap());
        assert!(a < b || (a == b && w[0].image_id < w[1].image_id));
    }
    assert_eq!(q[0].thumbnail_url, format!("/api/image/{}", q[0].image_id));
    let short: Vec<QueueItem> = api.get("/api/queue?limit=5").await;
    assert_eq!(short, q[..5]);
    let cat: Vec<QueueItem> = api.get("/api/queue?category_id=1").await;
    assert!(cat.iter().all(|i| i.category_id == 1 && i.category == "satay"));
}

#[tokio::test]
async fn decisions_update_progress_and_queue() {
    let api = Api::new();
    let q: Vec<QueueItem> = api.get("/api/queue").await;
    let p: Progress = api.get("/api/progress").await;
    assert_eq!((p.total, p.decided, p.removed, p.reassigned), (24, 0, 0, 0));

    assert_eq!(api.post(json!({"image_id": q[0].image_id, "action": "confirm", "reviewer": "r1"})).await, StatusCode::OK);
    assert_eq!(
        api.post(json!({"image_id": q[1].image_id, "action": "reassign", "category_id": 2})).await,
        StatusCode::OK
    );
    assert_eq!(
        api.post(json!({"image_id": q[2].image_id, "action": "remove", "reason": "not_food"})).await,
        StatusCode::OK
    );
    assert_eq!(api.post(json!({"image_id": q[3].image_id, "action": "skip"})).await, StatusCode::OK);

    let p: Progress = api.get("/api/progress").await;
    assert_eq!((p.total, p.decided, p.removed, p.reassigned), (24, 3, 1, 1));
    let after: Vec<QueueItem> = api.get("/api/queue").await;
    assert_eq!(after.len(), 21);
    assert_eq!(after.last().unwrap().image_id, q[3].image_id);
    assert!(after.iter().all(|i| i.image_id != q[0].image_id));

    let cats: Vec<CategoryView> = api.get("/api/categories").await;
    assert_eq!(cats.len(), 3);
    assert_eq!(cats.iter().map(|c| c.active_count).sum::<u64>(), 23);

    let log = read_decision_log(&decision_log_path(&api.fx.manifest)).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(log[0].reviewer, "r1");
    assert!(log[0].timestamp > 0);
    assert_eq!(log[1].action, Action::Reassign { category_id: 2 });
}

#[tokio::test]
async fn error_statuses() {
    let api = Api::new();
    let q: Vec<QueueItem> = api.get("/api/queue").await;
    let id = &q[0].image_id;
    assert_eq!(api.post(json!({"image_id": "nope", "action": "confirm"})).await, StatusCode::NOT_FOUND);
    assert_eq!(
        api.post(json!({"image_id": id, "action": "reassign", "category_id": 99})).await,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(api.post(json!({"image_id": id, "action": "remove", "reason": "blurry"})).await, StatusCode::OK);
    assert_eq!(api.post(json!({"image_id": id, "action": "confirm"})).await, StatusCode::CONFLICT);
    assert!(api.post(json!({"image_id": id, "action": "explode"})).await.is_client_error());
    // Rejected requests never reach the log.
    assert_eq!(read_decision_log(&decision_log_path(&api.fx.manifest)).unwrap().len(), 1);

    let (status, _) = api.call(Request::get("/api/image/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn image_bytes_are_png_of_the_formatted_copy() {
    let api = Api::new();
    let q: Vec<QueueItem> = api.get("/api/queue?limit=1").await;
    let (status, body) = api.call(Request::get(&q[0].thumbnail_url).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let m = load_manifest(&api.fx.manifest).unwrap();
    let rec = m.record(&q[0].image_id).unwrap();
    let served = foodcurate::imaging::decode_and_validate(&body, 1).unwrap();
    assert_eq!(served, foodcurate::imaging::load_image(rec.pixel_path()).unwrap());
}

#[tokio::test]
async fn served_decisions_fold_into_the_calibrate_stage() {
    let api = Api::new();
    let q: Vec<QueueItem> = api.get("/api/queue").await;
    for item in &q[..4] {
        api.post(json!({"image_id": item.image_id, "action": "remove", "reason": "not_food"})).await;
    }
    let report = run_stage(&api.fx.config(), Stage::Calibrate, &api.fx.manifest, false).unwrap();
    assert_eq!((report.input_count, report.kept_count, report.removed_count), (24, 20, 4));
}

#[test]
fn real_socket_round_trip() {
    let api = Api::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(api.session.clone());
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    write!(stream, "GET /api/progress HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    let body: Value = serde_json::from_str(text.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["total"], 24);
}
