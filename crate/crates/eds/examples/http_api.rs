// Drives the annotation HTTP API in-process: fetch tasks, submit votes from
// three simulated experts, watch progress, then resolve.
//
// ```bash
// cargo run -p eds --example http_api
// ```

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use eds::server::{router, AppState};
use eds_core::annotation::ExpertId;
use eds_core::discovery::{build_suspects_per_model, union_dedupe};
use eds_core::service::AnnotationStore;
use eds_core::synthetic::{generate, SyntheticConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> anyhow::Result<Value> {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))?;
    let response = app.clone().oneshot(request).await?;
    let status = response.status();
    let bytes = response.into_body().collect().await?.to_bytes();
    let value: Value = serde_json::from_slice(&bytes)?;
    anyhow::ensure!(status.is_success(), "{method} {uri}: {status} {value}");
    Ok(value)
}

pub fn run_example() -> anyhow::Result<()> {
    let synth = generate(&SyntheticConfig {
        num_items: 200,
        num_queries: 8,
        ..SyntheticConfig::default()
    })?;
    let per_model = synth
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &synth.corpus, 2))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    let experts = ["alice", "bob", "carol"];
    let store = AnnotationStore::in_memory(&suspects, experts.iter().copied().map(ExpertId::new).collect::<eds_core::Result<Vec<_>>>()?)?;
    let labels_out = std::env::temp_dir().join(format!("eds-http-api-{}.tsv", std::process::id()));
    let state = Arc::new(AppState::new(store, synth.corpus.clone(), suspects.clone(), synth.models.clone(), &labels_out));
    let app = router(state, None);

    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(async {
        for expert in experts {
            loop {
                let batch = call(&app, "GET", &format!("/api/tasks?expert={expert}&n=5"), None).await?;
                let pairs = batch["pairs"].as_array().cloned().unwrap_or_default();
                if pairs.is_empty() {
                    break;
                }
                for task in pairs {
                    let id = task["pair_id"].as_u64().unwrap_or_default() as usize;
                    let truth = synth.is_positive(&suspects.pairs()[id].pair);
                    let label = i64::from(truth != (expert == "carol" && id.is_multiple_of(4)));
                    call(&app, "POST", "/api/votes", Some(json!({ "pair_id": id, "expert": expert, "label": label }))).await?;
                }
            }
            let progress = call(&app, "GET", "/api/progress", None).await?;
            println!(
                "{expert:<6} done: {} votes logged, {}/{} pairs fully reviewed",
                progress["votes_logged"], progress["fully_reviewed"], progress["total_pairs"]
            );
        }
        let progress = call(&app, "GET", "/api/progress", None).await?;
        println!("running p_k = {:.3}", progress["running_p_k"].as_f64().unwrap_or(f64::NAN));
        let detail = call(&app, "GET", "/api/pairs/0", None).await?;
        println!("pair 0: {} vs {}, votes {}", detail["query"], detail["candidate"], detail["votes"]);
        let summary = call(&app, "POST", "/api/resolve", None).await?;
        println!("resolved {} pairs, {} positive -> {}", summary["pairs"], summary["positives"], summary["path"]);
        let report = call(&app, "GET", "/api/metrics?model=alpha", None).await?;
        println!("alpha HR@1 = {:.3}, HR@5 = {:.3}", report["hr"]["1"].as_f64().unwrap_or(f64::NAN), report["hr"]["5"].as_f64().unwrap_or(f64::NAN));
        anyhow::Ok(())
    })?;
    std::fs::remove_file(&labels_out).ok();
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
