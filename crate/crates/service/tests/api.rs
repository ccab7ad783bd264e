mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use vidi_service::api::{resolve_asset, router};
use vidi_service::RunStore;

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|_| panic!("not json: {}", String::from_utf8_lossy(&self.body)))
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    use tower::ServiceExt;
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

async fn wait_complete(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let r = call(app, "GET", &format!("/api/runs/{id}"), None)
            .await
            .json();
        match r["status"].as_str().unwrap() {
            "complete" | "failed" => return r,
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("run {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_api_workflow() {
    let f = common::fixture(3);
    let store = Arc::new(RunStore::open(f.data_dir()).unwrap());
    let app = router(store.clone());

    assert_eq!(call(&app, "GET", "/api/runs", None).await.json(), json!([]));

    let config = serde_json::to_value(&f.config).unwrap();
    let created = call(&app, "POST", "/api/runs", Some(config)).await;
    assert_eq!(created.status, StatusCode::ACCEPTED);
    let id = created.json()["run_id"].as_str().unwrap().to_string();
    let run = wait_complete(&app, &id).await;
    assert_eq!(run["status"], "complete", "{run}");

    let runs = call(&app, "GET", "/api/runs", None).await.json();
    assert_eq!(runs.as_array().unwrap().len(), 1);

    let sweep = call(&app, "GET", &format!("/api/runs/{id}/sweep"), None)
        .await
        .json();
    assert_eq!(sweep["chosen_k"], run["k"]);
    assert_eq!(sweep["entries"].as_array().unwrap().len(), 5);
    let csv = call(
        &app,
        "GET",
        &format!("/api/assets/{}", sweep["csv_ref"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(csv.status, StatusCode::OK);
    assert_eq!(csv.content_type.as_deref(), Some("text/csv"));
    assert!(csv
        .body
        .starts_with(b"k,homogeneity,completeness,v_measure,inertia,seed"));

    let clusters = call(&app, "GET", &format!("/api/runs/{id}/clusters"), None)
        .await
        .json();
    let k = run["k"].as_u64().unwrap() as usize;
    assert_eq!(clusters["clusters"].as_array().unwrap().len(), k);
    assert_eq!(clusters["quality"], run["quality"]);
    let total: u64 = clusters["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["size"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 9);

    let detail = call(&app, "GET", &format!("/api/runs/{id}/clusters/0"), None)
        .await
        .json();
    let rows = detail["gallery"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), detail["members"].as_array().unwrap().len());
    let fav = rows[0]["overlays"][0]["favorable"].as_str().unwrap();
    assert!(
        fav.starts_with(&format!("{id}/overlays/")) && fav.ends_with(".mild.fav.png"),
        "{fav}"
    );
    let png = call(&app, "GET", &format!("/api/assets/{fav}"), None).await;
    assert_eq!(png.status, StatusCode::OK);
    assert_eq!(png.content_type.as_deref(), Some("image/png"));
    assert!(png.body.starts_with(b"\x89PNG"));

    assert_eq!(
        call(&app, "GET", &format!("/api/runs/{id}/clusters/{k}"), None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );

    // annotations
    let url = format!("/api/runs/{id}/clusters/0/annotations");
    let bad = call(
        &app,
        "POST",
        &url,
        Some(json!({"verdict": "relabel", "author": "dr"})),
    )
    .await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(bad.json()["error"], "InvalidLabel");
    let ok = call(
        &app,
        "POST",
        &url,
        Some(json!({"verdict": "accept", "author": "dr"})),
    )
    .await;
    assert_eq!(ok.status, StatusCode::CREATED);
    let view = call(&app, "GET", &url, None).await.json();
    assert_eq!(view["latest"]["verdict"], "accept");
    call(
        &app,
        "POST",
        &url,
        Some(json!({"verdict": "relabel", "assigned_label": "severe", "author": "dr"})),
    )
    .await;
    let view = call(&app, "GET", &url, None).await.json();
    assert_eq!(view["history"].as_array().unwrap().len(), 2);
    assert_eq!(view["latest"]["assigned_label"], "severe");
    let detail = call(&app, "GET", &format!("/api/runs/{id}/clusters/0"), None)
        .await
        .json();
    assert_eq!(detail["annotation"]["verdict"], "relabel");

    let export = call(
        &app,
        "GET",
        &format!("/api/runs/{id}/annotations/export"),
        None,
    )
    .await;
    assert_eq!(export.status, StatusCode::OK);
    let text = String::from_utf8(export.body).unwrap();
    assert_eq!(text.lines().count(), 1 + 9);
    let expert = text.lines().filter(|l| l.ends_with(",expert")).count();
    assert_eq!(
        expert as u64,
        clusters["clusters"][0]["size"].as_u64().unwrap()
    );

    // recluster at the chosen k reproduces the sweep row
    let child = call(
        &app,
        "POST",
        &format!("/api/runs/{id}/recluster"),
        Some(json!({"k": k, "seed": run["config"]["seed"]})),
    )
    .await;
    assert_eq!(child.status, StatusCode::ACCEPTED);
    let child_id = child.json()["run_id"].as_str().unwrap().to_string();
    let child = wait_complete(&app, &child_id).await;
    assert_eq!(child["parent"], id.as_str());
    let row = sweep["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["k"] == k as u64)
        .unwrap()
        .clone();
    assert_eq!(child["quality"], row["quality"]);
    let too_big = call(
        &app,
        "POST",
        &format!("/api/runs/{id}/recluster"),
        Some(json!({"k": 100})),
    )
    .await;
    assert_eq!(too_big.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(too_big.json()["error"], "KTooLarge");

    // GETs leave the store untouched
    let before = common::files_under(store.root());
    for uri in [
        format!("/api/runs/{id}"),
        format!("/api/runs/{id}/clusters"),
        "/api/runs".to_string(),
    ] {
        call(&app, "GET", &uri, None).await;
    }
    assert_eq!(common::files_under(store.root()), before);
}

#[tokio::test]
async fn errors_and_asset_safety() {
    let f = common::fixture(1);
    let store = Arc::new(RunStore::open(f.data_dir()).unwrap());
    let app = router(store.clone());

    let missing = call(&app, "GET", "/api/runs/01ARZ3NDEKTSV4RRFFQ69G5FAV", None).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.json()["error"], "RunNotFound");
    assert_eq!(
        call(&app, "GET", "/api/runs/x/annotations/export", None)
            .await
            .status,
        StatusCode::NOT_FOUND
    );

    let mut both = serde_json::to_value(&f.config).unwrap();
    both["k"] = json!(3);
    let r = call(&app, "POST", "/api/runs", Some(both)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "InvalidConfig");

    std::fs::write(f.dir.path().join("secret.txt"), "x").unwrap();
    for uri in [
        "/api/assets/..%2Fsecret.txt",
        "/api/assets/%2E%2E/%2E%2E/secret.txt",
        "/api/assets/runs/../../secret.txt",
        "/api/assets/nothing/here.png",
    ] {
        let r = call(&app, "GET", uri, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
    }
    assert!(resolve_asset(&store, "../secret.txt").is_err());
    assert!(resolve_asset(&store, "/etc/passwd").is_err());
}
