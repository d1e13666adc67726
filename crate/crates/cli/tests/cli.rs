use std::path::Path;
use std::process::{Command, Output};

use emm_core::geometry::{project_camera_point, translation_angle, CameraIntrinsics, RotationMatrix};
use nalgebra::Vector3;

fn emm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emm")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_documents_every_flag() {
    let subcommands = [
        "synth-gen",
        "train",
        "eval",
        "chance",
        "eight-point",
        "verify-identity",
        "quantize-sweep",
        "attention-sweep",
        "emm-demo",
    ];
    for sub in subcommands {
        let out = emm(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help failed");
        let text = String::from_utf8(out.stdout).unwrap();
        // A documented flag has text after its value name, either on the same
        // line or wrapped onto the next one.
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| l.trim_start().starts_with("--")) {
            let words: Vec<&str> = line.split_whitespace().collect();
            let inline = words.iter().skip(1).any(|w| !w.starts_with('<') && !w.starts_with("--"));
            let wrapped = lines.get(i + 1).is_some_and(|n| {
                let t = n.trim_start();
                !t.is_empty() && !t.starts_with('-')
            });
            assert!(inline || wrapped, "{sub}: undocumented flag line '{line}'");
        }
        assert!(text.contains("--threads") && text.contains("--seed"));
    }
}

#[test]
fn missing_input_is_a_one_line_json_error() {
    let out = emm(&["eight-point", "--input", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim_end()).unwrap();
    assert!(v["message"].as_str().unwrap().contains("missing.csv"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, r#"{"points": 10000, "colour": "red"}"#).unwrap();
    let out = emm(&["synth-gen", "--dist", "2ds", "--count", "2", "--out", path(&dir.path().join("d.jsonl")), "--scene", path(&scene)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("colour"));

    let cfg = dir.path().join("mlp.json");
    std::fs::write(&cfg, r#"{"hidden_width": 8, "dropout": 0.5}"#).unwrap();
    let out = emm(&["train", "--task", "rotation", "--dist", "2ds", "--count", "4", "--config", path(&cfg), "--out", path(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_distribution_name_is_a_usage_error() {
    let out = emm(&["chance", "--dist", "4d", "--task", "rotation"]);
    assert!(!out.status.success());
}

#[test]
fn verify_identity_passes() {
    let out = emm(&["verify-identity", "--trials", "50", "--grids", "4,8,24"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["grids"].as_array().unwrap().len(), 3);
}

#[test]
fn verify_identity_failure_exits_two() {
    // A negative tolerance can never be met.
    let out = emm(&["verify-identity", "--trials", "5", "--grids", "4", "--tolerance", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eight_point_recovers_a_known_pose() {
    let cam = CameraIntrinsics::synthetic();
    let r = RotationMatrix::from_euler_zyx(0.1, -0.2, 0.05);
    let t = Vector3::new(0.6, -0.1, 0.3);
    let mut csv = String::from("x1,y1,x2,y2\n");
    let mut k = 0;
    for i in 0..400 {
        let p = Vector3::new(((i * 37) % 41) as f64 / 20.0 - 1.0, ((i * 53) % 43) as f64 / 21.0 - 1.0, 3.0 + (i % 7) as f64 * 0.3);
        let a = project_camera_point(&p, &cam);
        let b = project_camera_point(&(r.apply(&p) + t), &cam);
        if a.valid && b.valid {
            let (x, x2) = (cam.normalize(a.u, a.v), cam.normalize(b.u, b.v));
            csv.push_str(&format!("{},{},{},{}\n", x.x, x.y, x2.x, x2.y));
            k += 1;
        }
    }
    assert!(k >= 50);
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.csv");
    std::fs::write(&input, csv).unwrap();
    let out = emm(&["eight-point", "--input", path(&input)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let got: Vec<f64> = v["translation"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let angle = translation_angle(&Vector3::new(got[0], got[1], got[2]), &t).unwrap();
    assert!(angle < 1e-6, "translation off by {angle}°");
    assert!(v["max_epipolar_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let ok = |o: Output| assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    ok(emm(&["--seed", "3", "synth-gen", "--dist", "2dm", "--count", "60", "--out", path(&d("train.jsonl"))]));
    ok(emm(&["--seed", "4", "synth-gen", "--dist", "2dm", "--count", "20", "--out", path(&d("test.jsonl"))]));
    std::fs::write(d("mlp.json"), r#"{"hidden_width": 16, "epochs": 2, "batch_size": 16}"#).unwrap();
    for name in ["m1", "m2"] {
        ok(emm(&[
            "--seed", "5", "train", "--task", "translation", "--data", path(&d("train.jsonl")),
            "--config", path(&d("mlp.json")), "--out", path(&d(name)), "--log", path(&d(&format!("{name}.log.json"))),
        ]));
    }
    assert_eq!(std::fs::read(d("m1")).unwrap(), std::fs::read(d("m2")).unwrap());
    let out = emm(&["eval", "--model", path(&d("m1")), "--test", path(&d("test.jsonl")), "--threshold", "30", "--cdf", path(&d("cdf.csv"))]);
    ok(out.clone());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["test_instances"], 20);
    assert_eq!(v["model_seed"], 5);
    let cdf = std::fs::read_to_string(d("cdf.csv")).unwrap();
    assert!(cdf.starts_with("error_deg,fraction"));
}

#[test]
fn attention_sweep_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("a.csv");
    let out = emm(&["attention-sweep", "--patches", "16", "--out", path(&out_path)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,m_fraction,mode,energy_fraction");
    // 15 partial match counts, two modes each.
    assert_eq!(lines.len(), 1 + 30);
}
