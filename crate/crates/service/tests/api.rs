use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use satbot_core::embedding::{hash_embed, EmbeddingError, EmbeddingProvider, EmbeddingStore};
use satbot_core::engine::parse_script;
use satbot_core::model::Speaker;
use satbot_core::{Config, Deployment};
use satbot_service::api::{AskResponse, CreateSessionResponse, HealthResponse, HistoryResponse, MessageResponse};
use satbot_service::{router, AppState, Ready};
use serde_json::{json, Value};
use tower::ServiceExt;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn config(dir: &Path) -> Config {
    let mut cfg = Config::load(&assets().join("sat.toml")).unwrap();
    cfg.persistence_dir = dir.to_path_buf();
    cfg
}

fn app(dir: &Path) -> Router {
    let d = Deployment::<f64>::load(config(dir)).unwrap();
    router(AppState::with(Ready::open(d).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, seed: u64) -> CreateSessionResponse {
    let (st, v) = call(app, "POST", "/api/session", Some(json!({ "seed": seed }))).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn say(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "text": text }))).await
}

async fn history(app: &Router, id: &str) -> HistoryResponse {
    let (st, v) = call(app, "GET", &format!("/api/session/{id}/history"), None).await;
    assert_eq!(st, StatusCode::OK);
    serde_json::from_value(v).unwrap()
}

fn script(name: &str) -> Vec<String> {
    parse_script(&std::fs::read_to_string(assets().join("scripts").join(name)).unwrap())
}

#[tokio::test]
async fn session_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());

    let a = create(&app, 42).await;
    let b = create(&app, 42).await;
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.greeting, b.greeting);
    assert!(!a.greeting.is_empty());
    assert_eq!(history(&app, &a.session_id).await.turns.len(), a.greeting.len());

    let mut recommended = Vec::new();
    let mut bot_lines = 0;
    let inputs = script("happy_path.txt");
    for (i, input) in inputs.iter().enumerate() {
        let (st, v) = say(&app, &a.session_id, input).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        let m: MessageResponse = serde_json::from_value(v).unwrap();
        bot_lines += m.bot_utterances.len();
        recommended.extend(m.recommended_exercises);
        assert_eq!(m.ended, i + 1 == inputs.len());
    }
    assert!(!recommended.is_empty());
    assert!(recommended.iter().all(|e| !e.title.is_empty()));

    let h = history(&app, &a.session_id).await;
    assert_eq!(h.turns.len(), a.greeting.len() + inputs.len() + bot_lines);
    assert!(h.turns.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

    let (st, v) = say(&app, &a.session_id, "باز هم").await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conversation ended");
    assert_eq!(history(&app, &a.session_id).await, h);
}

#[tokio::test]
async fn request_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let s = create(&app, 1).await;

    assert_eq!(say(&app, "nope", "سلام").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/session/nope/history", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(say(&app, &s.session_id, "  \t").await.0, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", &format!("/api/session/{}/message", s.session_id), Some(json!({"txt": "x"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(history(&app, &s.session_id).await.turns.len(), s.greeting.len());

    // No body draws a seed.
    let (st, v) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(st, StatusCode::CREATED);
    assert!(v["seed"].is_u64());
}

#[tokio::test]
async fn teacher_endpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let q = "تکنیک خوددلبستگی چیست";
    let (st, v) = call(&app, "POST", "/api/teacher/ask", Some(json!({ "question": q }))).await;
    assert_eq!(st, StatusCode::OK);
    let a: AskResponse = serde_json::from_value(v.clone()).unwrap();
    assert!((a.score - 1.0).abs() < 1e-9);
    assert_eq!(a.qa_id.as_deref(), Some("01_sat_definition"));
    let (_, again) = call(&app, "POST", "/api/teacher/ask", Some(json!({ "question": q }))).await;
    assert_eq!(again, v);

    let (st, _) = call(&app, "POST", "/api/teacher/ask", Some(json!({ "question": "   " }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn confidence_floor_yields_null_answer() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.teacher.confidence_floor = 0.99;
    let app = router(AppState::with(Ready::open(Deployment::<f64>::load(cfg).unwrap()).unwrap()));
    let (st, v) = call(&app, "POST", "/api/teacher/ask", Some(json!({ "question": "zebra quantum" }))).await;
    assert_eq!(st, StatusCode::OK);
    let a: AskResponse = serde_json::from_value(v).unwrap();
    assert_eq!((a.answer, a.qa_id), (None, None));
    assert!(a.score < 0.99);
}

#[tokio::test]
async fn health_reports_asset_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (st, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(st, StatusCode::OK);
    let h: HealthResponse = serde_json::from_value(v).unwrap();
    assert_eq!(h.format, "SATLOG1");
    for role in ["flow_graph", "pools", "qa", "emotion_training", "negation", "classifier:feedback_q", "lexicon:sad_event_q"] {
        let hash = &h.assets[role];
        assert_eq!(hash.len(), 64, "{role}");
    }
    assert_eq!(h.version.len(), 64);
}

#[tokio::test]
async fn not_ready_is_unavailable() {
    let app = router(AppState::<f64>::loading());
    for (m, uri) in [("POST", "/api/session"), ("GET", "/api/health"), ("POST", "/api/teacher/ask")] {
        let (st, v) = call(&app, m, uri, Some(json!({}))).await;
        assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_eq!(v["error"], "service not ready");
    }
}

#[tokio::test]
async fn history_survives_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let mut before = Vec::new();
    {
        let app = app(tmp.path());
        for (seed, name) in [(3, "happy_path.txt"), (4, "formal_sadness.txt"), (5, "clarify_defaults.txt")] {
            let s = create(&app, seed).await;
            for input in script(name).iter().take(3) {
                assert_eq!(say(&app, &s.session_id, input).await.0, StatusCode::OK);
            }
            before.push(history(&app, &s.session_id).await);
        }
    }
    let app = app(tmp.path());
    for h in &before {
        let after = history(&app, &h.session_id).await;
        assert_eq!(serde_json::to_vec(&after).unwrap(), serde_json::to_vec(h).unwrap());
    }

    // A reloaded session continues exactly as an uninterrupted one would.
    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh = self::app(fresh_dir.path());
    let s = create(&fresh, 3).await;
    let inputs = script("happy_path.txt");
    for input in &inputs {
        say(&fresh, &s.session_id, input).await;
    }
    for input in &inputs[3..] {
        say(&app, &before[0].session_id, input).await;
    }
    let texts = |h: HistoryResponse| h.turns.into_iter().map(|t| (t.speaker, t.text, t.node_id)).collect::<Vec<_>>();
    assert_eq!(
        texts(history(&app, &before[0].session_id).await),
        texts(history(&fresh, &s.session_id).await)
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_to_one_session_serialize() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let s = create(&app, 11).await;
    let inputs = ["نمیدانم", "شاید", "چیزی نمی‌دانم", "بعدا"];
    let handles: Vec<_> = inputs
        .iter()
        .map(|t| {
            let (app, id, t) = (app.clone(), s.session_id.clone(), t.to_string());
            tokio::spawn(async move { say(&app, &id, &t).await })
        })
        .collect();
    for h in handles {
        let (st, v) = h.await.unwrap();
        assert!(st == StatusCode::OK || st == StatusCode::CONFLICT, "{st} {v}");
    }
    let h = history(&app, &s.session_id).await;
    let mut users: Vec<_> = h.turns.iter().filter(|t| t.speaker == Speaker::User).map(|t| t.text.as_str()).collect();
    users.sort();
    let mut expected = inputs.to_vec();
    expected.sort();
    assert_eq!(users, expected);
    // Every user turn is answered before the next one is taken.
    assert!(!h.turns.windows(2).any(|w| w[0].speaker == Speaker::User && w[1].speaker == Speaker::User));
}

/// Embeds like the fallback, but stalls on texts containing `SLOW`.
struct SlowProvider {
    dimension: usize,
}

impl EmbeddingProvider for SlowProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if texts.iter().any(|t| t.contains("SLOW")) {
            std::thread::sleep(Duration::from_millis(1500));
        }
        Ok(texts
            .iter()
            .map(|t| hash_embed::<f64>(t, self.dimension).into_values())
            .collect())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_embedding_does_not_block_other_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let store = EmbeddingStore::<f64>::fallback(cfg.embedding.dimension)
        .with_remote(Arc::new(SlowProvider {
            dimension: cfg.embedding.dimension,
        }));
    let d = Deployment::load_with_store(cfg, Arc::new(store)).unwrap();
    let app = router(AppState::with(Ready::open(d).unwrap()));
    let a = create(&app, 1).await;
    let b = create(&app, 2).await;

    let started = Instant::now();
    let slow = {
        let (app, id) = (app.clone(), a.session_id.clone());
        tokio::spawn(async move {
            let r = say(&app, &id, "SLOW سلام").await;
            (r, started.elapsed())
        })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (st, _) = say(&app, &b.session_id, "سلام").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/api/health", None).await.0, StatusCode::OK);
    let fast = started.elapsed();
    let ((st, _), slow_elapsed) = slow.await.unwrap();
    assert_eq!(st, StatusCode::OK);
    assert!(slow_elapsed >= Duration::from_millis(1500));
    assert!(fast < Duration::from_millis(1000), "other session waited {fast:?}");
}
