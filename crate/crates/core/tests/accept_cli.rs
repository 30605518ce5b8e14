use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use ctrkit::evacuation::EvacuationReport;
use ctrkit::inverse_kinematics::MovePlan;
use ctrkit::kinematics::{forward_kinematics, JointConfig, DEFAULT_SEGMENTS};
use ctrkit::presets;
use ctrkit::tube_shape::PlanarShape;

fn ctrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrkit"))
        .args(args)
        .env_remove("CTRKIT_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ctrkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_code(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is error JSON");
    v["error"]["code"].as_str().unwrap().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fk_writes_tip_pose_and_backbone() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fk", "--joints", "10,20,1.57", "--out-dir", path(dir.path())]);
    let pose: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tip_pose.json")).unwrap()).unwrap();
    let expected = forward_kinematics(
        &presets::nylon_tube_shape(),
        &JointConfig::new(10.0, 20.0, 1.57),
        DEFAULT_SEGMENTS,
    )
    .unwrap();
    let tip: Vec<f64> = serde_json::from_value(pose["tip_position"].clone()).unwrap();
    let want = expected.tip_position();
    assert_eq!(tip, vec![want.x, want.y, want.z]);
    let backbone = fs::read_to_string(dir.path().join("backbone.csv")).unwrap();
    assert_eq!(backbone.lines().next(), Some("x,y,z"));
    assert_eq!(backbone.lines().count(), DEFAULT_SEGMENTS + 2);
}

#[test]
fn ik_batch_round_trips_a_target_grid() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.csv");
    let mut text = String::from("x,y,z\n");
    for i in 0..6 {
        for j in 0..8 {
            let angle = j as f64 * std::f64::consts::TAU / 8.0;
            let r = 2.0 + 1.5 * i as f64;
            text.push_str(&format!("{},{},{}\n", r * angle.cos(), r * angle.sin(), 30.0 + 5.0 * i as f64));
        }
    }
    fs::write(&targets, text).unwrap();
    let csv = ok(&["ik", "--targets", path(&targets)]);
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "roundtrip_error").unwrap();
    let status = headers.iter().position(|h| h == "status").unwrap();
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        assert_eq!(&r[status], "ok");
        assert!(r[col].parse::<f64>().unwrap() < 0.01);
        n += 1;
    }
    assert_eq!(n, 48);
}

#[test]
fn ik_single_target_plan_reloads() {
    let text = ok(&["ik", "--target", "3,-4,40", "--current", "10,5,0.2"]);
    let v: Value = serde_json::from_str(&text).unwrap();
    let plan: MovePlan = serde_json::from_value(v["plan"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&plan).unwrap(), v["plan"]);
    assert!(v["roundtrip_error"].as_f64().unwrap() < 1e-9);
    assert!(plan.theta_command > plan.nominal.theta);
}

#[test]
fn unreachable_target_reports_error_json() {
    let out = ctrkit(&["ik", "--target", "40,0,40"]);
    assert_eq!(error_code(&out), "E_UNREACHABLE");
}

#[test]
fn design_table_ratio_matches_loc_over_roc() {
    let csv = ok(&["design", "--table1"]);
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let mut checked = 0;
    for r in rows.deserialize::<std::collections::HashMap<String, String>>() {
        let r = r.unwrap();
        if r["roc_mm"].is_empty() {
            continue;
        }
        let fk: f64 = r["f_over_k"].parse().unwrap();
        let ratio: f64 = r["loc_mm"].parse::<f64>().unwrap() / r["roc_mm"].parse::<f64>().unwrap();
        assert!((fk - ratio).abs() < 1e-6);
        checked += 1;
    }
    assert_eq!(checked, 3);
    let md = ok(&["design", "--table1", "--format", "markdown"]);
    assert!(md.starts_with("| tube |"));
}

#[test]
fn check_roc_at_the_strain_limit() {
    let v: Value = serde_json::from_str(&ok(&["design", "--check-roc", "30", "--kappa-limit", "0"])).unwrap();
    assert_eq!(v["pass"], Value::Bool(true));
    let v: Value = serde_json::from_str(&ok(&["design", "--check-roc", "25", "--kappa-limit", "0"])).unwrap();
    assert_eq!(v["pass"], Value::Bool(false));
}

#[test]
fn fitted_shape_reloads_into_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let shape = presets::nylon_tube_shape();
    let mut text = String::from("x_mm,y_mm\n");
    for i in 0..=40 {
        let x = shape.x_max_total() * i as f64 / 40.0;
        text.push_str(&format!("{x},{}\n", shape.f(x)));
    }
    let samples = dir.path().join("centerline.csv");
    fs::write(&samples, text).unwrap();
    let fitted: Value = serde_json::from_str(&ok(&["fit-shape", "--centerline", path(&samples)])).unwrap();
    let reloaded: PlanarShape = serde_json::from_value(fitted["shape"].clone()).unwrap();
    assert!((reloaded.arc_total() - shape.arc_total()).abs() < 1e-6);

    let config = serde_json::json!({
        "shape": { "source": "inline", "shape": fitted["shape"] },
        "inner_tube": { "r_od": 3.0, "r_id": 2.0, "length_total": 250.0, "deflectable_arc": reloaded.arc_total() },
    });
    let cfg = dir.path().join("robot.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let v: Value = serde_json::from_str(&ok(&["validate-config", "--config", path(&cfg)])).unwrap();
    assert_eq!(v["valid"], Value::Bool(true));

    let by_path = serde_json::json!({ "shape": { "source": "centerline", "path": "centerline.csv" } });
    fs::write(&cfg, by_path.to_string()).unwrap();
    ok(&["fk", "--config", path(&cfg), "--joints", "0,10,0"]);
}

#[test]
fn validate_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let doc = serde_json::json!({
        "travel": { "d_min": 10.0, "d_max": 5.0 },
        "outer_tube": { "r_od": 3.5, "r_id": 2.0, "length_total": 200.0, "deflectable_arc": 0.0 },
        "evacuation": { "policy": { "aspiration_radius": 1.0 } },
    });
    fs::write(&cfg, doc.to_string()).unwrap();
    let out = ctrkit(&["validate-config", "--config", path(&cfg)]);
    assert_eq!(error_code(&out), "E_CONFIG");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut codes: Vec<String> = v["issues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["code"].as_str().unwrap().to_string())
        .collect();
    codes.sort();
    assert_eq!(codes, ["E_CLEARANCE", "E_POLICY", "E_TRAVEL"]);

    let out = ctrkit(&["fk", "--config", path(&cfg), "--joints", "0,0,0"]);
    assert_eq!(error_code(&out), "E_CONFIG");
}

#[test]
fn motor_sim_emits_a_trace() {
    let csv = ok(&["motor-sim", "--axis", "rot", "--setpoint-deg", "18"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,position_deg,err_counts,V,region"));
    assert!(csv.lines().count() > 100);
    let summary: Value = serde_json::from_str(&ok(&["motor-sim", "--setpoint-deg", "18", "--format", "json"])).unwrap();
    assert_eq!(summary["settled"], Value::Bool(true));
    assert_eq!(summary["setpoint_counts"], 200);
}

#[test]
fn torsion_grid_shape() {
    let csv = ok(&["torsion", "--s-steps", "5", "--theta-steps", "3"]);
    assert_eq!(csv.lines().count(), 1 + 6 * 4);
    let last = csv.lines().last().unwrap();
    // full insertion carries no twist
    assert!(last.split(',').skip(2).all(|v| v.parse::<f64>().unwrap() == 0.0), "{last}");
}

#[test]
fn evacuation_is_deterministic_and_reloads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["evacuate", "--seed", "3", "--out-dir", path(a.path()), "--export-phantom", path(&a.path().join("clot.json"))]);
    ok(&["evacuate", "--seed", "3", "--out-dir", path(b.path())]);
    let ra = fs::read(a.path().join("evacuation_report.json")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("evacuation_report.json")).unwrap());
    assert_eq!(
        fs::read(a.path().join("evacuation_targets.csv")).unwrap(),
        fs::read(b.path().join("evacuation_targets.csv")).unwrap()
    );
    let report: EvacuationReport = serde_json::from_slice(&ra).unwrap();
    assert!(report.success && report.final_ml < 15.0);
    let again = serde_json::to_string_pretty(&report).unwrap() + "\n";
    assert_eq!(again.as_bytes(), &ra[..]);

    let c = tempfile::tempdir().unwrap();
    ok(&["evacuate", "--seed", "3", "--phantom", path(&a.path().join("clot.json")), "--out-dir", path(c.path())]);
    assert_eq!(ra, fs::read(c.path().join("evacuation_report.json")).unwrap());
}

#[test]
fn register_from_fiducial_files() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("image.csv");
    let robot = dir.path().join("robot.csv");
    fs::write(&image, "x,y,z\n60,0,0\n0,60,10\n-60,0,20\n0,-60,30\n").unwrap();
    // 90 degrees about z, then (1, 2, 3)
    fs::write(&robot, "x,y,z\n1,62,3\n-59,2,13\n1,-58,23\n61,2,33\n").unwrap();
    let v: Value = serde_json::from_str(&ok(&["register", "--image", path(&image), "--robot", path(&robot)])).unwrap();
    assert!(v["rms_fiducial_error"].as_f64().unwrap() < 1e-9);
    let t = &v["transform"];
    assert!((t[0][3].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((t[1][0].as_f64().unwrap() - 1.0).abs() < 1e-9);

    fs::write(&robot, "x,y,z\n1,62,3\n").unwrap();
    assert_eq!(error_code(&ctrkit(&["register", "--image", path(&image), "--robot", path(&robot)])), "E_REGISTRATION");
}
