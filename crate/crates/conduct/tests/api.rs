use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{Days, NaiveDate};
use dacrm_conduct::{router, AppState, Store};
use dacrm_core::replay::ReplayFile;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path, token: Option<&str>) -> Router {
    let store = Store::open(dir).expect("store opens");
    router(AppState {
        store: Arc::new(store),
        token: token.map(str::to_string),
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn pancreatic() -> ReplayFile {
    ReplayFile::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/pancreatic.toml")).unwrap()
}

const START: &str = "2004-03-01";

fn day(d: f64) -> String {
    let start: NaiveDate = START.parse().unwrap();
    (start + Days::new(d as u64)).to_string()
}

async fn create(app: &Router, file: &ReplayFile) -> String {
    let (status, body) = call(
        app,
        "POST",
        "/trials",
        Some(json!({
            "name": file.name,
            "start_date": START,
            "horizon_days": file.horizon_days,
            "start_dose": file.start_dose,
            "dose_labels": file.dose_labels,
            "seed": 7,
            "design": file.design,
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["trial_id"].as_str().unwrap().to_string()
}

/// Runs the pancreatic trial through the API, asking for a decision at the
/// first patient of each cohort. Returns the decisions keyed by day.
async fn conduct_pancreatic(app: &Router) -> (String, Vec<(f64, Value)>) {
    let file = pancreatic();
    let id = create(app, &file).await;
    let mut events: Vec<(f64, u32)> = file
        .patients
        .iter()
        .filter_map(|p| p.dlt_day.map(|d| (d, p.id)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut events = events.into_iter().peekable();
    let mut cohort = None;
    let mut decisions = Vec::new();
    for p in &file.patients {
        while let Some(&(d, pid)) = events.peek().filter(|e| e.0 <= p.day_on) {
            let (s, b) = call(
                app,
                "POST",
                &format!("/trials/{id}/patients/{pid}/event"),
                Some(json!({ "date": day(d) })),
            )
            .await;
            assert_eq!(s, StatusCode::OK, "{b}");
            events.next();
        }
        if cohort != Some(p.cohort) {
            cohort = Some(p.cohort);
            let (s, rec) = call(
                app,
                "GET",
                &format!("/trials/{id}/recommendation?asof={}", day(p.day_on)),
                None,
            )
            .await;
            assert_eq!(s, StatusCode::OK, "{rec}");
            decisions.push((p.day_on, rec));
        }
        // cohorts never move more than one level, so no override is needed
        let (s, b) = call(
            app,
            "POST",
            &format!("/trials/{id}/patients"),
            Some(json!({ "arrival": day(p.day_on), "dose": p.dose })),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED, "{b}");
        assert_eq!(b["patient_id"], json!(p.id));
    }
    for (d, pid) in events {
        let (s, b) = call(
            app,
            "POST",
            &format!("/trials/{id}/patients/{pid}/event"),
            Some(json!({ "date": day(d) })),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{b}");
    }
    (id, decisions)
}

fn pi_hat(rec: &Value) -> Vec<f64> {
    rec["pi_hat"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect()
}

#[tokio::test]
async fn pancreatic_trial_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (id, decisions) = conduct_pancreatic(&app).await;

    let reference = [
        (70.0, [0.113, 0.131, 0.148, 0.165], "escalate", 3),
        (301.0, [0.007, 0.012, 0.019, 0.027], "stay", 4),
        (455.0, [0.126, 0.177, 0.228, 0.275], "deescalate", 2),
    ];
    for (d, pi, action, dose) in reference {
        let rec = &decisions.iter().find(|(day, _)| *day == d).unwrap().1;
        for (got, want) in pi_hat(rec).iter().zip(pi) {
            assert!((got - want).abs() <= 0.05, "day {d}: {got} vs {want}");
        }
        assert_eq!(rec["action"], json!(action), "day {d}: {rec}");
        assert_eq!(rec["recommended_dose"], json!(dose), "day {d}");
    }
    assert_eq!(decisions.last().unwrap().1["recommended_label"], json!("30 mg/m2"));

    let (s, hist) = call(&app, "GET", &format!("/trials/{id}/history"), None).await;
    assert_eq!(s, StatusCode::OK);
    let log = hist["decisions"].as_array().unwrap();
    assert_eq!(log.len(), 6);
    // day 364: the clinicians gave 40 after the design said stay at 50
    assert_eq!(log[4]["recommended_dose"], json!(4));
    assert_eq!(log[4]["actual_dose"], json!(3));
    assert!(log
        .iter()
        .all(|d| d["recorded_at"].is_string() && d["snapshot"].is_array()));

    let (_, summary) = call(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(summary["patients"].as_array().unwrap().len(), 18);
    assert_eq!(
        summary["patients"][10]["event_date"],
        json!(day(pancreatic().patients[10].dlt_day.unwrap()))
    );
}

#[tokio::test]
async fn empty_trial_recommends_the_start_dose_with_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let mut file = pancreatic();
    file.start_dose = 1;
    let id = create(&app, &file).await;
    let (s, rec) = call(&app, "GET", &format!("/trials/{id}/recommendation?asof={START}"), None).await;
    assert_eq!(s, StatusCode::OK, "{rec}");
    assert_eq!(rec["action"], json!("stay"));
    assert_eq!(rec["recommended_dose"], json!(1));
    assert_eq!(rec["pending"], json!(0));
    for (got, want) in pi_hat(&rec).iter().zip([0.231, 0.266, 0.297, 0.327]) {
        assert!((got - want).abs() < 5e-4, "{got} vs {want}");
    }
}

#[tokio::test]
async fn identical_requests_give_identical_recommendations() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let file = pancreatic();
    let id = create(&app, &file).await;
    for p in &file.patients[..6] {
        let (s, b) = call(
            &app,
            "POST",
            &format!("/trials/{id}/patients"),
            Some(json!({ "arrival": day(p.day_on), "dose": p.dose })),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED, "{b}");
    }
    let uri = format!("/trials/{id}/recommendation?asof={}", day(160.0));
    let (_, a) = call(&app, "GET", &uri, None).await;
    let (_, b) = call(&app, "GET", &uri, None).await;
    assert_eq!(a, b);
    assert!(a["pending"].as_u64().unwrap() > 0, "{a}");

    // a second store with the same inputs reaches the same seed and estimate
    let other = tempfile::tempdir().unwrap();
    let app2 = self::app(other.path(), None);
    let id2 = create(&app2, &file).await;
    for p in &file.patients[..6] {
        call(
            &app2,
            "POST",
            &format!("/trials/{id2}/patients"),
            Some(json!({ "arrival": day(p.day_on), "dose": p.dose })),
        )
        .await;
    }
    let (_, c) = call(
        &app2,
        "GET",
        &format!("/trials/{id2}/recommendation?asof={}", day(160.0)),
        None,
    )
    .await;
    assert_eq!(a, c);
}

#[tokio::test]
async fn errors_carry_status_and_json_body() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let file = pancreatic();

    let (s, b) = call(&app, "GET", "/trials/trial-9999/history", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(b["error"], json!("not_found"));

    let id = create(&app, &file).await;
    let enroll =
        |arrival: String, dose: usize, over: bool| json!({ "arrival": arrival, "dose": dose, "override": over });
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(enroll(day(10.0), 2, false)),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);

    // backdated arrival
    let (s, b) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(enroll(day(5.0), 2, false)),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{b}");
    assert_eq!(b["error"], json!("validation"));

    // toxicity before the patient arrived, and after the window closed
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients/1/event"),
        Some(json!({ "date": day(9.0) })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients/1/event"),
        Some(json!({ "date": day(80.0) })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients/7/event"),
        Some(json!({ "date": day(20.0) })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // a second toxicity for the same patient
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients/1/event"),
        Some(json!({ "date": day(30.0) })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, b) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients/1/event"),
        Some(json!({ "date": day(31.0) })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["error"], json!("conflict"));

    // skipping from dose 2 to 4 needs an explicit override
    let (s, b) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(enroll(day(40.0), 4, false)),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{b}");
    let (s, b) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(enroll(day(40.0), 4, true)),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{b}");

    // asof before the latest arrival, malformed dates and bodies
    let (s, _) = call(
        &app,
        "GET",
        &format!("/trials/{id}/recommendation?asof={}", day(20.0)),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, b) = call(
        &app,
        "GET",
        &format!("/trials/{id}/recommendation?asof=yesterday"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(b["error"], json!("validation"));
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(json!({ "dose": 1 })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(enroll(day(41.0), 9, true)),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    // nothing rejected reached the log
    let (_, summary) = call(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(summary["patients"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn bad_design_is_rejected_at_creation() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (s, b) = call(
        &app,
        "POST",
        "/trials",
        Some(json!({
            "start_date": START,
            "horizon_days": 63,
            "design": { "skeleton": [0.3, 0.2], "target": 0.2 },
        })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{b}");
    let (s, _) = call(&app, "GET", "/trials", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn stop_recommendation_blocks_enrollment_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let mut file = pancreatic();
    file.start_dose = 1;
    let id = create(&app, &file).await;
    for k in 0..4u64 {
        let arrival = day(k as f64);
        call(
            &app,
            "POST",
            &format!("/trials/{id}/patients"),
            Some(json!({ "arrival": arrival, "dose": 1 })),
        )
        .await;
        let (s, _) = call(
            &app,
            "POST",
            &format!("/trials/{id}/patients/{}/event", k + 1),
            Some(json!({ "date": day(k as f64 + 5.0) })),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, rec) = call(
        &app,
        "GET",
        &format!("/trials/{id}/recommendation?asof={}", day(10.0)),
        None,
    )
    .await;
    assert_eq!(rec["action"], json!("stop_safety"), "{rec}");
    let (s, b) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(json!({ "arrival": day(11.0), "dose": 1 })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{b}");
    let (s, _) = call(
        &app,
        "POST",
        &format!("/trials/{id}/patients"),
        Some(json!({ "arrival": day(11.0), "dose": 1, "override": true })),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some("s3cret"));
    let (s, b) = call(&app, "GET", "/trials", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(b["error"], json!("unauthorized"));
    let (s, _) = call_with(&app, "GET", "/trials", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call_with(&app, "GET", "/trials", None, Some("s3cret")).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn restart_recovers_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before, summary) = {
        let app = app(dir.path(), None);
        let (id, _) = conduct_pancreatic(&app).await;
        let (_, h) = call(&app, "GET", &format!("/trials/{id}/history"), None).await;
        let (_, s) = call(&app, "GET", &format!("/trials/{id}"), None).await;
        (id, h, s)
    };
    // more than one snapshot interval of log lines, so recovery uses both
    let trial_dir = dir.path().join("trials").join(&id);
    assert!(trial_dir.join("snapshot.json").exists());

    let app = app(dir.path(), None);
    let (_, after) = call(&app, "GET", &format!("/trials/{id}/history"), None).await;
    let (_, summary2) = call(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(before, after);
    assert_eq!(summary, summary2);

    // the log alone is enough
    std::fs::remove_file(trial_dir.join("snapshot.json")).unwrap();
    let app = self::app(dir.path(), None);
    let (_, from_log) = call(&app, "GET", &format!("/trials/{id}/history"), None).await;
    assert_eq!(before, from_log);

    // a torn final line was never acknowledged and is dropped
    let log = trial_dir.join("log.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"type\":\"enrolled\",\"at\":");
    std::fs::write(&log, text).unwrap();
    let app = self::app(dir.path(), None);
    let (_, torn) = call(&app, "GET", &format!("/trials/{id}"), None).await;
    assert_eq!(summary, torn);
}

#[tokio::test]
async fn logged_decision_is_reproducible_from_its_snapshot_and_seed() {
    use dacrm_core::replay::days_to_months;
    use dacrm_core::trial::estimate_snapshot;
    use dacrm_core::{DesignKind, TrialSnapshot};

    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (id, _) = conduct_pancreatic(&app).await;
    let (_, hist) = call(&app, "GET", &format!("/trials/{id}/history"), None).await;
    let file = pancreatic();
    let design = file
        .design
        .config(DesignKind::DaCrm, days_to_months(file.horizon_days))
        .unwrap();
    for d in hist["decisions"].as_array().unwrap() {
        let patients = serde_json::from_value(d["snapshot"].clone()).unwrap();
        let snap = TrialSnapshot::new(patients, design.crm.clone(), design.hazard.clone()).unwrap();
        let est = estimate_snapshot(&snap, &design, d["seed"].as_u64().unwrap()).unwrap();
        assert_eq!(serde_json::to_value(&est.pi_hat).unwrap(), d["pi_hat"]);
    }
}
