use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;

use d2k_client::{connect, probe, Connections, RemoteStore, RemoteSweep};
use d2k_core::pipeline::*;
use d2k_core::store::{DatasetQuery, StoreResponse};
use d2k_core::sweep::{MessageType, SweepMessage, Target};
use d2k_core::wire::{read_frame, write_frame};
use d2k_service::{spawn, Running, ServeOptions};
use serde_json::{json, Value};

const SMALL: &str = r#"
seed = 3
[[sites]]
name = "alpha"
instance_id = "arm-alpha"
train = 4
evaluation = 1
velocity_scaling = [0.8, 1.0]
acceleration_scaling = [0.8, 1.0]
n_waypoints = 3
seed = 8

[training]
folds = 2
configs_per_round = 2
agents = 2
[training.space]
n_recurrent_layers = { min = 1, max = 1 }
hidden_size = [16]
learning_rate = { min = 0.005, max = 0.01 }
sequence_length = [16]
batch_size = [4]
epochs = { min = 2, max = 2 }
unfrozen_layers = { min = 0, max = 0 }
"#;

fn server(dir: &std::path::Path) -> Running {
    spawn(ServeOptions {
        store_dir: Some(dir.join("store")),
        repo_dir: Some(dir.join("repo")),
        store_listen: Some("tcp://127.0.0.1:0".parse().unwrap()),
        sweep_listen: Some(Endpoint::Unix(dir.join("sweep.sock"))),
        http_listen: Some("127.0.0.1:0".into()),
        config_timeout: None,
    })
    .unwrap()
}

fn exchange<S: std::io::Read + Write>(w: &mut S, r: &mut BufReader<S>, msg: Value) -> Value {
    write_frame(w, msg.to_string().as_bytes()).unwrap();
    w.flush().unwrap();
    serde_json::from_slice(&read_frame(r).unwrap().unwrap()).unwrap()
}

#[test]
fn unknown_requests_get_error_replies_and_the_connection_survives() {
    let dir = tempfile::tempdir().unwrap();
    let running = server(dir.path());

    let Endpoint::Unix(path) = running.bound.sweep.clone().unwrap() else { panic!() };
    let mut s = UnixStream::connect(path).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let reply = exchange(&mut s, &mut r, json!({ "type": "launch_rockets" }));
    assert_eq!(reply["type"], "error");
    assert_eq!(reply["error"]["code"], "unknown_type");
    let reply = exchange(&mut s, &mut r, json!({ "type": "status" }));
    assert_eq!(reply["type"], "status");
    assert_eq!(reply["overview"]["rounds"], json!([]));

    let Endpoint::Tcp(addr) = running.bound.store.clone().unwrap() else { panic!() };
    let mut s = TcpStream::connect(addr).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let reply = exchange(&mut s, &mut r, json!({ "verb": "drop_tables" }));
    assert_eq!((reply["ok"].clone(), reply["error"]["code"].clone()), (json!(false), json!("unknown_verb")));
    let reply = exchange(&mut s, &mut r, json!({ "verb": "count" }));
    assert_eq!(reply["result"]["count"], 0);
}

#[test]
fn http_routes_share_the_handlers() {
    let dir = tempfile::tempdir().unwrap();
    let running = server(dir.path());
    let Endpoint::Http(base) = running.bound.http.clone().unwrap() else { panic!() };
    let client = reqwest::blocking::Client::new();

    let health: Value = serde_json::from_slice(&client.get(format!("{base}/health")).send().unwrap().bytes().unwrap()).unwrap();
    assert_eq!(health, json!({ "ok": true, "store": true, "sweep": true }));

    let resp = client.post(format!("{base}/v1/store")).body("{not json").send().unwrap();
    assert_eq!(resp.status(), 200);
    let reply: StoreResponse = serde_json::from_slice(&resp.bytes().unwrap()).unwrap();
    assert_eq!(reply.error.unwrap().code, "malformed_request");

    let reply: SweepMessage = serde_json::from_slice(
        &client.post(format!("{base}/v1/sweep")).body(r#"{"type":"best","target":"foundation"}"#).send().unwrap().bytes().unwrap(),
    )
    .unwrap();
    assert_eq!(reply.kind, MessageType::Error);
    assert_eq!(reply.error.unwrap().code, "no_model");
}

fn pipeline_round_trip(conn: Connections) {
    let mut config = PipelineConfig::from_toml_str(SMALL).unwrap();
    let reports = tempfile::tempdir().unwrap();
    config.report_dir = reports.path().to_path_buf();
    let run = run_site(&config, conn.store.as_ref(), "alpha").unwrap();
    assert_eq!(run.record_ids.len(), 5);
    assert_eq!(conn.store.count(&DatasetQuery::all()).unwrap(), 5);

    let report = run_nightly(&config, conn.store.as_ref(), conn.sweep.as_ref(), &Target::Foundation).unwrap();
    assert!(report.completed(), "{:?}", report.aborted);
    // The server scored the accepted model against its own store.
    let runs = report.round.as_ref().unwrap().runs.len();
    let eval = report.evaluation.unwrap();
    assert!(eval.mae.is_finite() && eval.mae <= eval.theoretical_max_mae);
    assert_eq!(conn.sweep.history(&Target::Foundation).unwrap().len(), runs);
}

#[test]
fn pipeline_runs_against_framed_services() {
    let dir = tempfile::tempdir().unwrap();
    let running = server(dir.path());
    let (store, sweep) = (running.bound.store.clone().unwrap(), running.bound.sweep.clone().unwrap());
    probe(&store).unwrap();
    pipeline_round_trip(connect(&store, &sweep).unwrap());
}

#[test]
fn pipeline_runs_against_http_service() {
    let dir = tempfile::tempdir().unwrap();
    let running = server(dir.path());
    let http = running.bound.http.clone().unwrap();
    probe(&http).unwrap();
    pipeline_round_trip(connect(&http, &http).unwrap());
}

#[test]
fn stopped_service_reads_as_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let running = server(dir.path());
    let (store_ep, sweep_ep) = (running.bound.store.clone().unwrap(), running.bound.sweep.clone().unwrap());
    let store = RemoteStore::new(&store_ep).unwrap();
    let sweep = RemoteSweep::new(&sweep_ep).unwrap();
    use d2k_core::pipeline::{StoreApi, SweepApi};
    assert_eq!(store.count(&DatasetQuery::all()).unwrap(), 0);
    running.shutdown();

    assert_eq!(store.count(&DatasetQuery::all()).unwrap_err().code(), "unavailable");
    assert_eq!(sweep.overview().unwrap_err().code(), "unavailable");
    assert!(probe(&store_ep).is_err());
}
