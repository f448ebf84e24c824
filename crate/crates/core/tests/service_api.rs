use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use choicelab::analysis::one_sample_t;
use choicelab::parsing::extract_json_blocks;
use choicelab::service::{create_session, router, AppState, SessionConfig, SessionStore, TrialPool};

const X: &str = "policy-rl-step240";
const Y: &str = "policy-base";

fn pool(n: usize) -> TrialPool {
    let mut p = TrialPool::default();
    for i in 0..n {
        let id = format!("p{i:02}");
        p.problem_text.insert(id.clone(), format!("Option A: ${i} for sure.\nOption B: 50% chance of ${}.", 3 * i));
        p.completions_x.insert(
            id.clone(),
            "1. The expected value of B is higher.\n```json\n{\"option_A\": 30, \"option_B\": 70}\n```".to_string(),
        );
        p.completions_y.insert(id, "Most people prefer a sure thing. {\"option_A\": 60, \"option_B\": 40}".to_string());
    }
    p
}

fn state(store: SessionStore) -> AppState {
    AppState::new(store, pool(15), SessionConfig { model_x: X.into(), model_y: Y.into(), ..SessionConfig::default() })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn new_session(app: &Router, seed: u64) -> String {
    let (status, v) = call(app, "POST", "/api/v1/sessions", Some(json!({"seed": seed}))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["n_trials"], 10);
    v["session_id"].as_str().unwrap().to_string()
}

fn text_fields(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(a) => a.iter().for_each(|x| text_fields(x, out)),
        Value::Object(m) => m.iter().for_each(|(k, x)| {
            out.push(k.clone());
            text_fields(x, out)
        }),
        _ => {}
    }
}

/// Play a whole session, choosing model X on the trials listed in `pick_x`.
async fn play(app: &Router, store: &SessionStore, id: &str, pick_x: &[usize]) {
    let session = store.snapshot(id).unwrap();
    for i in 0..10 {
        let (status, v) = call(app, "GET", &format!("/api/v1/sessions/{id}/trial"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["complete"], false);
        assert_eq!(v["trial"]["index"], i);
        // blinding: no model identity, no parsable prediction anywhere in the payload
        let mut fields = Vec::new();
        text_fields(&v, &mut fields);
        for f in &fields {
            assert!(!f.contains(X) && !f.contains(Y) && !f.contains("model_x"), "identity leaked: {f}");
            assert!(extract_json_blocks(f).is_empty(), "JSON served: {f}");
        }
        let x_left = session.trials[i].left_model == X;
        let want_x = pick_x.contains(&i);
        let choice = if x_left == want_x { "left" } else { "right" };
        let (status, r) = call(
            app,
            "POST",
            &format!("/api/v1/sessions/{id}/responses"),
            Some(json!({"trial": i, "choice": choice, "confidence": 40 + i})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED, "{r}");
        assert_eq!(r["answered"], i + 1);
    }
    let (_, v) = call(app, "GET", &format!("/api/v1/sessions/{id}/trial"), None).await;
    assert_eq!(v["complete"], true);
}

#[tokio::test]
async fn scripted_sessions_match_offline_statistics() {
    let st = state(SessionStore::in_memory());
    let store = st.store.clone();
    let app = router(st);
    // per-session counts of model-X choices; 123 of 200, i.e. 61.5%
    let counts = [3, 3, 3, 4, 4, 4, 5, 5, 6, 6, 6, 6, 7, 7, 8, 8, 8, 10, 10, 10];
    for (s, &k) in counts.iter().enumerate() {
        let id = new_session(&app, 100 + s as u64).await;
        let picks: Vec<usize> = (0..k).collect();
        play(&app, &store, &id, &picks).await;
        let (_, summary) = call(&app, "GET", &format!("/api/v1/sessions/{id}/results"), None).await;
        assert_eq!(summary["preference_rate"].as_f64().unwrap(), k as f64 / 10.0);
        assert_eq!(summary["complete"], true);
    }
    assert_eq!(store.snapshot(&store.summaries()[0].session_id).unwrap().responses.iter().flatten().count(), 10);
    // an abandoned session stays out of the aggregate
    let partial = new_session(&app, 999).await;
    call(&app, "POST", &format!("/api/v1/sessions/{partial}/responses"), Some(json!({"trial": 0, "choice": "left", "confidence": 5})))
        .await;

    let (status, agg) = call(&app, "GET", "/api/v1/results", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(agg["n_complete"], 20);
    assert_eq!(agg["sessions"].as_array().unwrap().len(), 21);
    let rates: Vec<f64> = counts.iter().map(|&k| k as f64 / 10.0).collect();
    let offline = one_sample_t(&rates, 0.5).unwrap();
    assert_eq!(agg["mean_rate"].as_f64().unwrap(), rates.iter().sum::<f64>() / 20.0);
    assert_eq!(agg["t_test"]["t"].as_f64().unwrap(), offline.t);
    assert_eq!(agg["t_test"]["df"], 19);
    assert!((offline.t - 2.21).abs() < 0.01, "t = {}", offline.t);
}

#[tokio::test]
async fn error_statuses() {
    let app = router(state(SessionStore::in_memory()));
    let (s, v) = call(&app, "GET", "/api/v1/sessions/nope/trial", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (s, _) = call(&app, "POST", "/api/v1/sessions/nope/responses", Some(json!({"bogus": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/v1/sessions/nope/results", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let id = new_session(&app, 1).await;
    let url = format!("/api/v1/sessions/{id}/responses");
    for bad in [
        json!({"trial": 0, "choice": "left", "confidence": 101}),
        json!({"trial": 0, "choice": "left", "confidence": -1}),
        json!({"trial": 0, "choice": "middle", "confidence": 50}),
        json!({"trial": 0, "choice": "left"}),
        json!({"trial": 3, "choice": "left", "confidence": 50}),
        json!({"trial": 10, "choice": "left", "confidence": 50}),
    ] {
        let (s, v) = call(&app, "POST", &url, Some(bad.clone())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad} -> {v}");
    }
    let (s, _) = call(&app, "POST", &url, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let ok = json!({"trial": 0, "choice": "right", "confidence": 100});
    assert_eq!(call(&app, "POST", &url, Some(ok.clone())).await.0, StatusCode::CREATED);
    assert_eq!(call(&app, "POST", &url, Some(ok)).await.0, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/api/v1/sessions", Some(json!({"seed": "x"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn too_small_pool_is_unavailable() {
    let app = router(AppState::new(SessionStore::in_memory(), pool(4), SessionConfig::default()));
    let (s, _) = call(&app, "POST", "/api/v1/sessions", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let id = {
        let app = router(state(SessionStore::open(&log).unwrap()));
        let id = new_session(&app, 5).await;
        let url = format!("/api/v1/sessions/{id}/responses");
        for t in 0..3 {
            let (s, _) = call(&app, "POST", &url, Some(json!({"trial": t, "choice": "left", "confidence": 70}))).await;
            assert_eq!(s, StatusCode::CREATED);
        }
        id
    };
    let st = state(SessionStore::open(&log).unwrap());
    let store = st.store.clone();
    let app = router(st);
    let (_, v) = call(&app, "GET", &format!("/api/v1/sessions/{id}/trial"), None).await;
    assert_eq!(v["trial"]["index"], 3);
    assert_eq!(store.snapshot(&id).unwrap().answered(), 3);
}

#[tokio::test]
async fn static_assets_and_fallback() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><p>app</p>").unwrap();
    std::fs::write(dir.path().join("main.js"), "console.log(1)").unwrap();
    let mut st = state(SessionStore::in_memory());
    st.static_dir = Some(dir.path().to_path_buf());
    let app = router(st);
    let get = |uri: &'static str| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
            let ct = resp.headers().get("content-type").map(|h| h.to_str().unwrap().to_string());
            let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
            (ct, String::from_utf8(body.to_vec()).unwrap())
        }
    };
    let (ct, body) = get("/main.js").await;
    assert!(ct.unwrap().starts_with("text/javascript") && body.contains("console"));
    let (_, body) = get("/session/abc").await;
    assert!(body.contains("<p>app</p>"));
    let resp = app.clone().oneshot(Request::get("/../secret").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let resp = app.oneshot(Request::get("/api/v1/unknown").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[test]
fn sides_are_balanced() {
    let cfg = SessionConfig { model_x: X.into(), model_y: Y.into(), ..SessionConfig::default() };
    let p = pool(15);
    let (mut left_x, mut total) = (0usize, 0usize);
    for seed in 0..10_000 {
        let s = create_session(&cfg, &p, seed, Default::default()).unwrap();
        let mut ids: Vec<_> = s.trials.iter().map(|t| t.problem_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10, "problems repeat within a session");
        left_x += s.trials.iter().filter(|t| t.left_model == X).count();
        total += s.trials.len();
    }
    let frac = left_x as f64 / total as f64;
    // 100k fair coins: sd 0.0016
    assert!((frac - 0.5).abs() < 0.01, "model X on the left {frac}");
}
