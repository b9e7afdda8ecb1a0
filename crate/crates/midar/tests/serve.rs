use std::io::Cursor;

use midar::serve::{handle_line, serve_loop, Response, ServeDefaults};
use midar_core::model::{Hyper, ModelParams, Weights};
use midar_core::rmlos::FeatureStats;
use rand::SeedableRng;
use serde_json::{json, Value};

fn frame(n: usize) -> Value {
    let vehicles: Vec<Value> = (0..n)
        .map(|i| json!({"id": format!("v{i}"), "x": 8.0 + 4.0 * i as f64, "y": (i % 3) as f64 * 3.5, "w": 1.8, "l": 4.5, "h": 1.5, "heading": 0.0}))
        .collect();
    json!({"scene_id": "s", "frame_id": "f", "ego": {"id": "av", "x": 0.0, "y": 0.0, "heading": 0.0, "z_offset": 1.8}, "vehicles": vehicles})
}

fn params() -> ModelParams {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let hyper = Hyper {
        hidden_dim: 8,
        ..Hyper::default()
    };
    ModelParams::new(Weights::glorot(8, &mut rng), hyper, FeatureStats::identity()).unwrap()
}

fn run(input: &str, params: Option<&ModelParams>) -> Vec<Value> {
    let mut out = Vec::new();
    serve_loop(Cursor::new(input.as_bytes()), &mut out, params, &ServeDefaults::default()).unwrap();
    String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn perfect_model_single_vehicle() {
    let req = json!({"request_id": "r1", "model": "perfect", "frame": frame(1)});
    let resp = run(&format!("{req}\n"), None);
    assert_eq!(
        resp,
        [json!({"request_id": "r1", "outcomes": [{"vehicle_id": "v0", "label": 0, "score": 1.0}]})]
    );
}

#[test]
fn malformed_line_does_not_stop_the_loop() {
    let good = json!({"request_id": 2, "model": "perfect", "frame": frame(2)});
    let input = format!("{{not json\n{{\"request_id\": 1, \"model\": \"perfect\"}}\n\n{good}\n");
    let resp = run(&input, None);
    assert_eq!(resp.len(), 3);
    assert_eq!(resp[0]["request_id"], Value::Null);
    assert_eq!(resp[0]["error"]["kind"], "malformed");
    assert_eq!(resp[1]["request_id"], 1);
    assert_eq!(resp[1]["error"]["kind"], "malformed");
    assert_eq!(resp[2]["outcomes"].as_array().unwrap().len(), 2);
}

#[test]
fn error_kinds() {
    let d = ServeDefaults::default();
    let kind = |r: Response| match r {
        Response::Error { error, .. } => error.kind,
        Response::Outcomes { .. } => "none".into(),
    };
    let req = |model: &str, f: Value| json!({"request_id": 0, "model": model, "frame": f}).to_string();
    assert_eq!(kind(handle_line(&req("lidar", frame(1)), None, &d)), "unknown_model");
    assert_eq!(kind(handle_line(&req("midar", frame(1)), None, &d)), "missing_params");
    let mut bad = frame(1);
    bad["vehicles"][0]["w"] = json!(-1.0);
    assert_eq!(kind(handle_line(&req("perfect", bad), None, &d)), "invalid_frame");
    let preset = json!({"request_id": 0, "model": "dropout", "preset": "nope", "frame": frame(1)}).to_string();
    assert_eq!(kind(handle_line(&preset, None, &d)), "unknown_preset");
    assert_eq!(kind(handle_line("\u{0}", None, &d)), "malformed");
}

#[test]
fn thousand_requests_in_order_and_replayable() {
    let p = params();
    let models = ["midar", "perfect", "dropout"];
    let mut input = String::new();
    for i in 0..1000 {
        let req = json!({"request_id": i, "model": models[i % 3], "seed": i / 7, "frame": frame(i % 12)});
        input.push_str(&req.to_string());
        input.push('\n');
    }
    let first = run(&input, Some(&p));
    assert_eq!(first.len(), 1000);
    for (i, r) in first.iter().enumerate() {
        assert_eq!(r["request_id"], json!(i));
        let outcomes = r["outcomes"].as_array().expect("no errors");
        assert_eq!(outcomes.len(), i % 12);
        for o in outcomes {
            let score = o["score"].as_f64().unwrap();
            let label = o["label"].as_u64().unwrap();
            assert!((0.0..=1.0).contains(&score) && label <= 1);
            if models[i % 3] == "midar" {
                assert_eq!(label == 1, score >= 0.4);
            }
        }
    }
    assert_eq!(run(&input, Some(&p)), first);
}

#[test]
fn dropout_requests_depend_only_on_request() {
    let req = |id: u32, seed: u64| json!({"request_id": id, "model": "dropout", "preset": "trajectory", "seed": seed, "frame": frame(10)});
    let a = run(&format!("{}\n{}\n", req(1, 5), req(2, 6)), None);
    let b = run(&format!("{}\n", req(9, 5)), None);
    assert_eq!(a[0]["outcomes"], b[0]["outcomes"]);
}
