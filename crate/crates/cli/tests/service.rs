use std::path::PathBuf;
use std::sync::Arc;

use aqua_cli::commands::build_icon_db;
use aqua_cli::config::ServiceConfig;
use aqua_cli::service::{start, AppState, CORRELATION_HEADER};
use aqua_core::clients::{ClientSet, Unconfigured};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::{json, Value};

const MENU_QUESTION: &str = "How did you get this menu to appear?";

fn demo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn config(data_dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig { data_dir: data_dir.to_path_buf(), fixture_dir: Some(demo().join("clients")), ..Default::default() }
}

fn seed_icon_db(cfg: &ServiceConfig) {
    build_icon_db(Some(&demo().join("help")), Some(&demo().join("commands")), &cfg.icon_db_dir(), "Fusion 360").unwrap();
}

struct Server {
    base: String,
    http: reqwest::Client,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(state: Arc<AppState>) -> Self {
        let (addr, handle) = start(state, "127.0.0.1:0").await.unwrap();
        Self { base: format!("http://{addr}"), http: reqwest::Client::new(), handle }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn post_json(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.http.post(self.url(path)).json(body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> Value {
        self.http.get(self.url(path)).send().await.unwrap().json().await.unwrap()
    }

    async fn post_anchor(&self, video_id: &str, image: Vec<u8>, t: f64, bbox: &str, label: &str) -> (StatusCode, Value) {
        let form = Form::new()
            .part("image", Part::bytes(image).file_name("crop.png").mime_str("image/png").unwrap())
            .text("timestamp_s", t.to_string())
            .text("bbox", bbox.to_string())
            .text("label", label.to_string());
        let r = self.http.post(self.url(&format!("/videos/{video_id}/anchors"))).multipart(form).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    fn stop(self) {
        self.handle.abort();
    }
}

fn phone_stand_video() -> Value {
    let t: Value = serde_json::from_slice(&std::fs::read(demo().join("videos/phone_stand.json")).unwrap()).unwrap();
    json!({ "title": t["title"], "transcript": t["sentences"], "frame_size": [1280, 720] })
}

fn menu_png() -> Vec<u8> {
    std::fs::read(demo().join("anchors/marking_menu.png")).unwrap()
}

/// Video registered, menu anchor uploaded, index built.
async fn seeded(server: &Server) -> (String, String) {
    let (s, v) = server.post_json("/videos", &phone_stand_video()).await;
    assert!(s.is_success(), "{v}");
    let video_id = v["video_id"].as_str().unwrap().to_string();
    let (s, a) = server.post_anchor(&video_id, menu_png(), 19.0, "600,300,48,48", "#Anchor1").await;
    assert_eq!(s, StatusCode::CREATED, "{a}");
    let anchor_id = a["anchor_id"].as_str().unwrap().to_string();
    let corpus = demo().join("corpus");
    let (s, r) = server.post_json("/corpus/reindex", &json!({ "corpus_dir": corpus })).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    (video_id, anchor_id)
}

fn without_timing(mut v: Value) -> Value {
    v["trace"]["wall_time_ms"] = json!(0);
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_what_is_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(AppState::open(config(dir.path())).unwrap()).await;
    let h = server.get("/health").await;
    assert_eq!(h["status"], "ok");
    assert_eq!(h["index_loaded"], false);
    assert_eq!(h["manifest_loaded"], false);
    let (s, _) = server.post_json("/corpus/reindex", &json!({ "corpus_dir": demo().join("corpus") })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(server.get("/health").await["index_loaded"], true);
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn video_registration() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(AppState::open(config(dir.path())).unwrap()).await;

    let (s, first) = server.post_json("/videos", &phone_stand_video()).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, again) = server.post_json("/videos", &phone_stand_video()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["video_id"], again["video_id"]);

    let unsorted = json!({ "title": "x", "frame_size": [10, 10], "transcript": [
        {"text": "b", "start_s": 5.0, "end_s": 6.0}, {"text": "a", "start_s": 0.0, "end_s": 1.0}] });
    assert_eq!(server.post_json("/videos", &unsorted).await.0, StatusCode::BAD_REQUEST);

    let mut named = phone_stand_video();
    named["video_id"] = json!("tutorial-1");
    assert_eq!(server.post_json("/videos", &named).await.0, StatusCode::CREATED);
    named["title"] = json!("Another title");
    assert_eq!(server.post_json("/videos", &named).await.0, StatusCode::CONFLICT);

    let vtt = json!({ "title": "vtt", "frame_size": [640, 360],
        "transcript": "WEBVTT\n\n00:00:01.000 --> 00:00:02.000\nHello there.\n" });
    assert_eq!(server.post_json("/videos", &vtt).await.0, StatusCode::CREATED);
    assert_eq!(server.post_json("/videos", &json!({ "title": "x" })).await.0, StatusCode::BAD_REQUEST);
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn anchor_creation_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    seed_icon_db(&cfg);
    let server = Server::start(AppState::open(cfg).unwrap()).await;
    let (_, v) = server.post_json("/videos", &phone_stand_video()).await;
    let vid = v["video_id"].as_str().unwrap();

    // A 40x40 crop of a known icon, captured at a smaller UI scale.
    let icon = image::open(demo().join("commands/Marking Menu.png")).unwrap();
    let small = icon.resize_exact(40, 40, image::imageops::FilterType::Triangle);
    let mut png = Vec::new();
    small.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
    let (s, a) = server.post_anchor(vid, png.clone(), 19.0, "100,100,40,40", "#menu").await;
    assert_eq!(s, StatusCode::CREATED, "{a}");
    assert!(a["description"]["composed"].as_str().unwrap().contains("Marking Menu"), "{a}");

    assert_eq!(server.post_anchor(vid, png.clone(), 19.0, "1260,700,40,40", "#edge").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(server.post_anchor(vid, png.clone(), 20.0, "0,0,40,40", "#menu").await.0, StatusCode::CONFLICT);
    assert_eq!(server.post_anchor(vid, png.clone(), 20.0, "0,0,41,40", "#size").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(server.post_anchor(vid, b"not an image".to_vec(), 1.0, "0,0,4,4", "#junk").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let huge = vec![0u8; 8 * 1024 * 1024 + 1];
    assert_eq!(server.post_anchor(vid, huge, 1.0, "0,0,4,4", "#huge").await.0, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(server.post_anchor("nope", png, 1.0, "0,0,40,40", "#x").await.0, StatusCode::NOT_FOUND);

    // Another session may reuse a label.
    let form = Form::new()
        .part("image", Part::bytes(menu_png()).file_name("c.png"))
        .text("timestamp_s", "3")
        .text("bbox", r#"{"x":0,"y":0,"w":48,"h":48}"#)
        .text("label", "#menu")
        .text("session", "second");
    let r = server.http.post(server.url(&format!("/videos/{vid}/anchors"))).multipart(form).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn question_answering_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    seed_icon_db(&cfg);
    let server = Server::start(AppState::open(cfg).unwrap()).await;
    let (vid, aid) = seeded(&server).await;

    let q = json!({ "video_id": vid, "text": MENU_QUESTION, "anchor_ids": [aid], "condition": "full_pipeline" });
    let r = server.http.post(server.url("/questions")).header(CORRELATION_HEADER, "req-42").json(&q).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()[CORRELATION_HEADER], "req-42");
    let a: Value = r.json().await.unwrap();
    assert!(a["text"].as_str().unwrap().starts_with("The menu shown is the Marking Menu"), "{a}");
    let (_, b) = server.post_json("/questions", &q).await;
    assert_eq!(without_timing(a), without_timing(b));

    let mut only = q.clone();
    only["condition"] = json!("question_only");
    let (s, a) = server.post_json("/questions", &only).await;
    assert_eq!(s, StatusCode::OK);
    assert!(a["trace"]["warnings"].to_string().contains("ignores 1 anchor"));

    let mut bad = q.clone();
    bad["video_id"] = json!("unknown");
    assert_eq!(server.post_json("/questions", &bad).await.0, StatusCode::NOT_FOUND);
    let mut bad = q.clone();
    bad["anchor_ids"] = json!(["a0000000000000000"]);
    assert_eq!(server.post_json("/questions", &bad).await.0, StatusCode::NOT_FOUND);
    let mut bad = q.clone();
    bad["anchor_ids"] = json!([]);
    assert_eq!(server.post_json("/questions", &bad).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = q.clone();
    bad["condition"] = json!("everything");
    assert_eq!(server.post_json("/questions", &bad).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = q.clone();
    bad["text"] = json!("   ");
    assert_eq!(server.post_json("/questions", &bad).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn upstream_failure_is_502_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let mut clients = ClientSet::fixture(&demo().join("clients")).unwrap();
    clients.chat = Arc::new(Unconfigured("chat"));
    let server = Server::start(AppState::with_clients(cfg, clients).unwrap()).await;
    let (_, v) = server.post_json("/videos", &phone_stand_video()).await;
    let q = json!({ "video_id": v["video_id"], "text": "What is this?", "condition": "question_video", "asked_at_s": 16.0 });
    let (s, body) = server.post_json("/questions", &q).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(body["trace"]["context_sentences"].as_array().unwrap().len(), 2, "{body}");
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn reindex_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(AppState::open(config(dir.path())).unwrap()).await;
    let (s, r) = server.post_json("/corpus/reindex", &json!({ "corpus_dir": demo().join("corpus") })).await;
    assert_eq!(s, StatusCode::OK);
    let chunks = r["chunks"].as_u64().unwrap();
    assert!(chunks > 0);

    let missing = dir.path().join("no-such-dir");
    assert_eq!(server.post_json("/corpus/reindex", &json!({ "corpus_dir": missing })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(server.get("/health").await["index_chunks"], chunks);

    let empty = tempfile::tempdir().unwrap();
    let (s, r) = server.post_json("/corpus/reindex", &json!({ "corpus_dir": empty.path() })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["chunks"], 0);
    assert!(!r["warnings"].as_array().unwrap().is_empty());
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_reproduces_answers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    seed_icon_db(&cfg);
    let server = Server::start(AppState::open(cfg.clone()).unwrap()).await;
    let (vid, aid) = seeded(&server).await;
    let q = json!({ "video_id": vid, "text": MENU_QUESTION, "anchor_ids": [aid], "condition": "full" });
    let (_, before) = server.post_json("/questions", &q).await;
    server.stop();

    let server = Server::start(AppState::open(cfg).unwrap()).await;
    let h = server.get("/health").await;
    assert_eq!(h["index_loaded"], true);
    assert_eq!(h["manifest_loaded"], true);
    let (s, after) = server.post_json("/questions", &q).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(without_timing(before), without_timing(after));
    server.stop();
}

#[tokio::test(flavor = "multi_thread")]
async fn reindex_under_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    seed_icon_db(&cfg);
    let server = Arc::new(Server::start(AppState::open(cfg).unwrap()).await);
    let (vid, aid) = seeded(&server).await;

    let mut tasks = Vec::new();
    for i in 0..100 {
        let server = server.clone();
        let condition = ["full_pipeline", "question_video", "question_only"][i % 3];
        let q = json!({ "video_id": vid, "text": MENU_QUESTION, "anchor_ids": [aid], "condition": condition });
        tasks.push(tokio::spawn(async move { server.post_json("/questions", &q).await.0 }));
    }
    let reindexer = {
        let server = server.clone();
        tokio::spawn(async move {
            let mut statuses = Vec::new();
            for _ in 0..5 {
                statuses.push(server.post_json("/corpus/reindex", &json!({ "corpus_dir": demo().join("corpus") })).await.0);
            }
            statuses
        })
    };
    let mut failed = 0;
    for t in tasks {
        if t.await.unwrap() != StatusCode::OK {
            failed += 1;
        }
    }
    assert_eq!(failed, 0);
    assert!(reindexer.await.unwrap().iter().all(|s| *s == StatusCode::OK));
}
