use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn midar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_midar")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = midar(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    if text.trim().is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_str(&text).unwrap()
    }
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn exit_codes() {
    assert_eq!(midar(&["--help"]).status.code(), Some(0));
    assert_eq!(midar(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(midar(&[]).status.code(), Some(1));
    assert_eq!(midar(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(midar(&["build-graph", "--frames", "/nonexistent", "--out", "/tmp/x"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let samples = p(dir.path(), "s.csv");
    fs::write(&samples, "length,width,height\n4,2,1.5\n8,4,3\n12,6,3.5\n").unwrap();
    let out = midar(&["fit-height", "--samples", &samples, "--out", &p(dir.path(), "h.json")]);
    assert_eq!(out.status.code(), Some(3), "collinear samples are a numeric failure");
    let frames = p(dir.path(), "f.ndjson");
    fs::write(&frames, "").unwrap();
    let out = midar(&["--threshold", "2", "build-graph", "--frames", &frames, "--out", &p(dir.path(), "g")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (frames, labels, params) = (p(d, "frames.ndjson"), p(d, "labels.ndjson"), p(d, "params.json"));

    let report = ok(&["--seed", "3", "synth", "--n-frames", "40", "--frames-out", &frames, "--labels-out", &labels]);
    assert_eq!(report["frames"], 40);

    let history = p(d, "history.csv");
    let report = ok(&[
        "--seed", "1", "train", "--frames", &frames, "--labels", &labels, "--out", &params, "--epochs", "3", "--hidden",
        "8", "--lr", "1e-3", "--history", &history,
    ]);
    assert_eq!(report["epochs"], 3);
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 4);

    let roc = p(d, "roc.csv");
    let report = ok(&["eval", "--params", &params, "--frames", &frames, "--labels", &labels, "--roc", &roc]);
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(fs::read_to_string(&roc).unwrap().starts_with("fpr,tpr"));

    let graphs = p(d, "graphs.ndjson");
    ok(&["build-graph", "--frames", &frames, "--out", &graphs]);
    let g = lines(Path::new(&graphs));
    assert_eq!(g.len(), 40);
    assert_eq!(g[0]["nodes"][0]["id"], "ego");

    for model in ["midar", "perfect", "dropout"] {
        let out = p(d, &format!("{model}.ndjson"));
        ok(&["apply", "--frames", &frames, "--model", model, "--params", &params, "--out", &out]);
        let outcomes = lines(Path::new(&out));
        assert!(!outcomes.is_empty());
        assert!(outcomes.iter().all(|o| o["distance"].as_f64().is_some()));
    }
    let out = midar(&["apply", "--frames", &frames, "--model", "midar", "--out", &p(d, "x")]);
    assert_eq!(out.status.code(), Some(1), "midar without params is a usage error");

    let fused = p(d, "fused.ndjson");
    ok(&["fuse", "--outcomes", &p(d, "perfect.ndjson"), "--out", &fused]);
    assert_eq!(lines(Path::new(&fused)).len(), 40);

    let table = p(d, "table.csv");
    let report = ok(&["extract-dropout", "--outcomes", &p(d, "dropout.ndjson"), "--bounds", "20,54", "--out", &table]);
    assert_eq!(report["buckets"].as_array().unwrap().len(), 2);
    ok(&["extract-dropout", "--frames", &frames, "--labels", &labels, "--bounds", "30,54", "--out", &p(d, "t.json")]);
    ok(&["apply", "--frames", &frames, "--model", "dropout", "--table", &table, "--out", &p(d, "again.ndjson")]);
}

#[test]
fn label_command_matches_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gt = p(d, "gt.ndjson");
    let preds = p(d, "preds.ndjson");
    fs::write(
        &gt,
        r#"{"scene_id":"s","frame_id":"1","ego":{"x":0,"y":0,"heading":0},"vehicles":[{"id":"a","x":10,"y":0,"w":2,"l":4,"h":1.5,"heading":0},{"id":"b","x":20,"y":5,"w":2,"l":4,"h":1.5,"heading":0}]}
"#,
    )
    .unwrap();
    fs::write(
        &preds,
        r#"{"scene_id":"s","frame_id":"1","boxes":[{"id":"p","x":10.1,"y":0,"w":2,"l":4,"h":1.5,"heading":0,"score":0.9},{"id":"q","x":20,"y":5,"w":2,"l":4,"h":1.5,"heading":0,"score":0.2}]}
"#,
    )
    .unwrap();
    let out = p(d, "labels.ndjson");
    let report = ok(&["label", "--gt", &gt, "--preds", &preds, "--out", &out]);
    assert_eq!((report["tp"].as_u64(), report["fn"].as_u64(), report["fp"].as_u64()), (Some(1), Some(1), Some(0)));
    let labels = lines(Path::new(&out));
    assert_eq!(labels[0]["vehicle_id"], "a");
    assert_eq!(labels[0]["label"], 0);
    assert_eq!(labels[1]["label"], 1);
}

#[test]
fn ingest_fit_height_and_welch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let samples = concat!(env!("CARGO_MANIFEST_DIR"), "/data/vehicle_dims_sample.csv");
    let hm = p(d, "height.json");
    let report = ok(&["fit-height", "--samples", samples, "--out", &hm]);
    assert_eq!(report["samples"], 30);

    let csv = p(d, "traj.csv");
    fs::write(&csv, "frame_id,vehicle_id,x,y,length,width,heading\n1,a,0,0,4.5,1.8,0\n1,b,10,0,4.5,1.8,0\n2,b,11,0,4.5,1.8,0\n").unwrap();
    let frames = p(d, "frames.ndjson");
    let report = ok(&["ingest", "--trajectory", &csv, "--avs", "a,b", "--height-model", &hm, "--out", &frames]);
    assert_eq!(report["frames"], 3);
    assert_eq!(report["skipped_pairs"], 1);
    ok(&["apply", "--frames", &frames, "--model", "perfect", "--out", &p(d, "o.ndjson")]);

    let (a, b) = (p(d, "a.txt"), p(d, "b.txt"));
    fs::write(&a, "1\n2\n3\n4\n").unwrap();
    fs::write(&b, "1\n2\n3\n4\n").unwrap();
    let report = ok(&["welch", "--a", &a, "--b", &b]);
    assert_eq!(report["p"], 0.5);
}

#[test]
fn serve_over_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_midar"))
        .args(["serve", "--model", "perfect"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let frame = r#"{"scene_id":"s","frame_id":"1","ego":{"x":0,"y":0,"heading":0},"vehicles":[{"id":"a","x":10,"y":0,"w":2,"l":4,"h":1.5,"heading":0}]}"#;
    let mut stdin = child.stdin.take().unwrap();
    writeln!(stdin, r#"{{"request_id":1,"frame":{frame}}}"#).unwrap();
    writeln!(stdin, "oops").unwrap();
    writeln!(stdin, r#"{{"request_id":3,"model":"dropout","frame":{frame}}}"#).unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let resp: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(resp.len(), 3);
    assert_eq!(resp[0]["outcomes"][0]["label"], 0);
    assert_eq!(resp[1]["error"]["kind"], "malformed");
    assert_eq!(resp[2]["request_id"], 3);
}
