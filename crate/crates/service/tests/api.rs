use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sortflow::eval::replay;
use sortflow::learn::FactorizedPolicy;
use sortflow::prefgen::{
    generate_preferences, serialize_state, FixedProposals, PrefParams, PrefState, PreferenceDataset,
};
use sortflow::sim::{read_shift_logs, Action, SimConfig, SystemState};
use sortflow_service::{router, AppState, ServiceConfig, Suggestions, HUMAN_SOURCE};
use tower::ServiceExt;

fn app() -> Router {
    router(AppState::with_policy(ServiceConfig::default(), None))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn send_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = send(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn create(app: &Router, body: Value) -> String {
    let (s, v) = send_json(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn fresh_session_is_at_tick_zero() {
    let app = app();
    let id = create(&app, json!({"seed": 4})).await;
    let (s, v) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["tick"], 0);
    assert_eq!(v["done"], false);
    let (_, trace) = send_json(&app, "GET", &format!("/sessions/{id}/trace?format=json"), None).await;
    assert_eq!(trace["records"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn same_seed_gives_identical_initial_states() {
    let app = app();
    let a = create(&app, json!({"seed": 9})).await;
    let b = create(&app, json!({"seed": 9})).await;
    assert_ne!(a, b);
    let (_, va) = send_json(&app, "GET", &format!("/sessions/{a}/state"), None).await;
    let (_, vb) = send_json(&app, "GET", &format!("/sessions/{b}/state"), None).await;
    assert_eq!(va["state_json"], vb["state_json"]);
    assert_eq!(va["state_text"], vb["state_text"]);
}

#[tokio::test]
async fn malformed_config_reports_fields() {
    let app = app();
    let (s, v) = send_json(
        &app,
        "POST",
        "/sessions",
        Some(json!({"config": {"base_rate": [-1.0, 1.0, 1.0]}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_config");
    assert!(
        v["details"]
            .as_array()
            .unwrap()
            .iter()
            .any(|d| d["field"] == "base_rate[0]"),
        "{v}"
    );
    let (s, v) = send_json(&app, "POST", "/sessions", Some(json!({"config": {"no_such_field": 1}}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["message"].as_str().unwrap().contains("no_such_field"));
    let (s, v) = send(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&v));
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = app();
    for (m, path) in [
        ("GET", "/sessions/nope/state"),
        ("GET", "/sessions/nope/suggestions"),
        ("GET", "/sessions/nope/trace"),
    ] {
        let (s, v) = send_json(&app, m, path, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(v["code"], "session_not_found");
        assert!(v.get("message").is_some() && v.get("details").is_some());
    }
    let (s, _) = send_json(&app, "POST", "/sessions/nope/action", Some(json!({"action": []}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn state_text_matches_serializer() {
    let app = app();
    let id = create(&app, json!({"seed": 2})).await;
    send_json(
        &app,
        "POST",
        &format!("/sessions/{id}/action"),
        Some(json!({"action": []})),
    )
    .await;
    let (_, v) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (_, trace) = send(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    let log = &read_shift_logs(&trace[..]).unwrap()[0];
    let state: SystemState = serde_json::from_value(v["state_json"].clone()).unwrap();
    assert_eq!(v["state_text"].as_str().unwrap(), serialize_state(&state, &log.config));
}

#[tokio::test]
async fn choosing_a_records_one_human_pair() {
    let app = app();
    let id = create(&app, json!({"seed": 1})).await;
    let (s, sug) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(s, StatusCode::OK);
    let sug: Suggestions = serde_json::from_value(sug).unwrap();
    assert_eq!(sug.candidates.len(), 2);
    assert_ne!(sug.candidates[0].action, sug.candidates[1].action);
    let (s, v) = send_json(
        &app,
        "POST",
        &format!("/sessions/{id}/action"),
        Some(json!({"choice": "A", "rationale": "line 2 is starving"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["tick"], 1);
    let (_, trace) = send_json(&app, "GET", &format!("/sessions/{id}/trace?format=json"), None).await;
    let prefs = trace["preferences"].as_array().unwrap();
    assert_eq!(prefs.len(), 1);
    assert_eq!(prefs[0]["provenance"]["source"], HUMAN_SOURCE);
    assert_eq!(prefs[0]["provenance"]["rationale"], "line 2 is starving");
    let chosen: Action = serde_json::from_value(prefs[0]["chosen"].clone()).unwrap();
    assert_eq!(chosen, sug.candidates[0].action);
}

#[tokio::test]
async fn custom_action_records_two_pairs() {
    let app = app();
    let id = create(&app, json!({"seed": 3})).await;
    let (_, sug) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    let sug: Suggestions = serde_json::from_value(sug).unwrap();
    let (_, st) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let state: SystemState = serde_json::from_value(st["state_json"].clone()).unwrap();
    let config = SimConfig::default();
    // A valid single move distinct from both suggestions.
    let custom = (0..200u64)
        .map(|k| {
            let mut rng = sortflow::seed::rng(k);
            sortflow::agents::random_valid_move(&state, &config, &mut rng)
                .effective(&state)
                .canonical()
        })
        .find(|a| !a.is_empty() && sug.candidates.iter().all(|c| &c.action != a))
        .unwrap();
    let (s, v) = send_json(
        &app,
        "POST",
        &format!("/sessions/{id}/action"),
        Some(json!({"action": custom})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["preferences"].as_array().unwrap().len(), 2);
    for p in v["preferences"].as_array().unwrap() {
        assert_eq!(serde_json::from_value::<Action>(p["chosen"].clone()).unwrap(), custom);
    }
}

#[tokio::test]
async fn invalid_custom_action_leaves_tick_unchanged() {
    let app = app();
    let id = create(&app, json!({"seed": 5})).await;
    let bad = json!({"action": [{"worker_id": "ghost", "to_line": 1, "to_stage": 1}]});
    let (s, v) = send_json(&app, "POST", &format!("/sessions/{id}/action"), Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_action");
    let (_, st) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["tick"], 0);
    let (s, v) = send_json(
        &app,
        "POST",
        &format!("/sessions/{id}/action"),
        Some(json!({"choice": "A"})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "no_suggestions");
    let (s, _) = send_json(
        &app,
        "POST",
        &format!("/sessions/{id}/action"),
        Some(json!({"bogus": 1})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn duplicate_empty_suggestions_are_made_distinct() {
    // Without a trained policy the first suggestion keeps staffing; when the
    // greedy heuristic also proposes nothing the second one must differ.
    let app = app();
    for seed in 0..20 {
        let id = create(&app, json!({"seed": seed})).await;
        let (_, sug) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
        let sug: Suggestions = serde_json::from_value(sug).unwrap();
        assert!(sug.candidates[0].action.is_empty());
        if sug.candidates.len() == 2 {
            assert!(!sug.candidates[1].action.is_empty());
        }
    }
}

#[tokio::test]
async fn suggestion_scores_match_preference_generator() {
    let app = app();
    let id = create(&app, json!({"seed": 7})).await;
    let (_, sug) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    let sug: Suggestions = serde_json::from_value(sug).unwrap();
    let (_, trace) = send(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    let log = &read_shift_logs(&trace[..]).unwrap()[0];
    let states = vec![PrefState {
        state: log.initial().clone(),
        config: log.config.clone(),
    }];
    let fixed = FixedProposals {
        name: "suggestions".into(),
        candidates: vec![sug.candidates.iter().map(|c| c.action.clone()).collect()],
    };
    let params = PrefParams {
        margin: 0.0,
        ..Default::default()
    };
    let ds = generate_preferences(&states, &fixed, &params).unwrap();
    for p in &ds.pairs {
        for (a, score) in [(&p.chosen, p.score_chosen), (&p.rejected, p.score_rejected)] {
            if let Some(c) = sug.candidates.iter().find(|c| &c.action == a) {
                assert_eq!(c.predicted_score, score);
            }
        }
    }
}

#[tokio::test]
async fn full_episode_trace_replays_exactly_and_export_round_trips() {
    let app = router(AppState::with_policy(
        ServiceConfig::default(),
        Some(FactorizedPolicy::random(8, 1.0, 3)),
    ));
    let id = create(&app, json!({"seed": 11})).await;
    let len = SimConfig::default().episode_length;
    let mut picks = Vec::new();
    for t in 0..len {
        let (_, sug) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
        let sug: Suggestions = serde_json::from_value(sug).unwrap();
        assert_eq!(sug.tick, t);
        picks.push(sug.candidates[0].action.clone());
        let (s, _) = send_json(
            &app,
            "POST",
            &format!("/sessions/{id}/action"),
            Some(json!({"choice": "A"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, st) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["done"], true);
    let (s, v) = send_json(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "session_done");

    let (_, trace) = send(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    let log = &read_shift_logs(&trace[..]).unwrap()[0];
    assert_eq!(log.records.len() as u32, len);
    let rep = replay(log, &log.config).unwrap();
    assert_eq!(rep.records, log.records);

    let (s, body) = send(&app, "GET", &format!("/preferences/export?session_id={id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let ds = PreferenceDataset::read_jsonl(&body[..]).unwrap();
    // One pair per tick that offered two candidates.
    assert!(!ds.pairs.is_empty() && ds.pairs.len() <= len as usize);
    assert_eq!(ds.header.n_pairs, ds.pairs.len());
    for p in &ds.pairs {
        assert_eq!(p.provenance.source, HUMAN_SOURCE);
        assert_eq!(p.chosen, picks[p.provenance.state_index]);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_are_serialized() {
    let app = app();
    let id = create(&app, json!({"seed": 13})).await;
    let mut handles = Vec::new();
    for _ in 0..30 {
        let app = app.clone();
        let uri = format!("/sessions/{id}/action");
        handles.push(tokio::spawn(async move {
            send_json(&app, "POST", &uri, Some(json!({"action": []}))).await
        }));
    }
    let mut ticks = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        ticks.push(v["tick"].as_u64().unwrap());
    }
    ticks.sort_unstable();
    assert_eq!(ticks, (1..=30).collect::<Vec<u64>>());
    let (_, trace) = send_json(&app, "GET", &format!("/sessions/{id}/trace?format=json"), None).await;
    let recorded: Vec<u64> = trace["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["tick"].as_u64().unwrap())
        .collect();
    assert_eq!(recorded, (0..30).collect::<Vec<u64>>());
}
