use std::collections::HashMap;
use std::path::Path;

use rankforge::annotation::{NoisyOracle, Phase, Response, TaskKind};
use rankforge_service::{serve_on, AppState, ExportPayload, ResponseAck, SessionManifest, TaskPayload};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

struct Server {
    base: String,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<std::io::Result<()>>,
}

async fn start(dir: &Path) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel::<()>();
    let state = AppState::new(dir, None).unwrap();
    let handle = tokio::spawn(serve_on(listener, state, async {
        let _ = rx.await;
    }));
    Server { base, stop, handle }
}

async fn stop(server: Server) {
    server.stop.send(()).unwrap();
    server.handle.await.unwrap().unwrap();
}

fn ids() -> Vec<String> {
    (0..30).map(|i| format!("img-{i:02}")).collect()
}

fn oracle() -> NoisyOracle {
    let latent: HashMap<String, f64> = ids().into_iter().enumerate().map(|(i, id)| (id, ((i * 17) % 30) as f64 / 30.0)).collect();
    NoisyOracle::new(4.0, latent, 11).unwrap()
}

fn answer(task: &TaskKind, oracle: &mut NoisyOracle) -> Response {
    match task {
        TaskKind::SortSublist { ids } => Response::Sort { order: oracle.sort(ids).unwrap() },
        TaskKind::Compare { id_a, id_b } => {
            let choice = if oracle.prefers(id_a, id_b).unwrap() { id_a.clone() } else { id_b.clone() };
            Response::Compare { choice }
        }
    }
}

/// Runs a scripted annotation, optionally restarting the service after
/// `restart_after` accepted responses. Also undoes and re-answers response 5.
async fn run(restart_after: Option<usize>) -> Vec<(String, usize)> {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::Client::new();
    let mut server = start(dir.path()).await;
    let created: SessionManifest = client
        .post(format!("{}/sessions", server.base))
        .json(&json!({ "item_ids": ids(), "n_sub": 6, "seed": 3 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let sid = created.session_id.clone();
    let mut oracle = oracle();
    let mut answered = 0;
    let mut undone = false;
    loop {
        if Some(answered) == restart_after {
            stop(server).await;
            server = start(dir.path()).await;
            // a token from before the restart still matches the persisted state
        }
        let resp = client.get(format!("{}/sessions/{sid}/task", server.base)).send().await.unwrap();
        if resp.status() == 409 {
            break;
        }
        let task: TaskPayload = resp.json().await.unwrap();
        let reply = answer(&task.task.kind, &mut oracle);
        let ack: ResponseAck = client
            .post(format!("{}/sessions/{sid}/response", server.base))
            .json(&json!({ "task_token": task.task_token, "response": reply }))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        answered += 1;
        assert_eq!(ack.progress.answered, answered);
        if answered == 5 && !undone {
            undone = true;
            let stale = client
                .post(format!("{}/sessions/{sid}/response", server.base))
                .json(&json!({ "task_token": task.task_token, "response": reply }))
                .send()
                .await
                .unwrap();
            assert_eq!(stale.status(), 409);
            let back: ResponseAck = client
                .post(format!("{}/sessions/{sid}/response", server.base))
                .json(&json!({ "undo": true }))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            assert_eq!(back.progress.answered, 4);
            assert_eq!(back.task_token.as_deref(), Some(task.task_token.as_str()));
            // re-answer the same task with the same reply
            let again: ResponseAck = client
                .post(format!("{}/sessions/{sid}/response", server.base))
                .json(&json!({ "task_token": task.task_token, "response": reply }))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            assert_eq!(again.progress.answered, 5);
        }
        if ack.phase == Phase::Done {
            assert!(ack.task_token.is_none());
        }
    }
    let export: ExportPayload =
        client.get(format!("{}/sessions/{sid}/export", server.base)).send().await.unwrap().json().await.unwrap();
    let manifest: SessionManifest =
        client.get(format!("{}/sessions/{sid}", server.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(manifest.phase, Phase::Done);
    assert!(dir.path().join("exports").join(format!("{sid}.ranks.jsonl")).exists());
    stop(server).await;
    export.ranking.into_iter().map(|e| (e.id, e.rank)).collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_mid_session_gives_identical_export() {
    let baseline = run(None).await;
    assert_eq!(baseline.len(), 30);
    let mut ranks: Vec<usize> = baseline.iter().map(|(_, r)| *r).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=30).collect::<Vec<_>>());
    for restart in [1, 3, 17, 40] {
        assert_eq!(run(Some(restart)).await, baseline, "restart after {restart} responses");
    }
}
