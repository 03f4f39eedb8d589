use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scene_nav::geometry::{write_obj, TriMesh, Vec3};
use scene_nav::guidance::{AnchorTuple, TrajectoryState};
use scene_nav::metrics::{MotionSequence, ObjectTask, RigidPose};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scene-nav"));
    c.env_remove("SCENE_NAV_LOG");
    c
}

fn run(cmd: &str, dir: &Path, args: &[&str]) -> Output {
    bin().arg(cmd).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(p)).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn map_writes_artifacts_and_is_byte_stable() {
    let tmp = TempDir::new().unwrap();
    let files = ["map.csv", "map.png", "map_meta.json", "effective_config.toml"];
    let mut first = Vec::new();
    for round in 0..2 {
        let o = run("map", tmp.path(), &["--fixture", "desk_room", "--output", "a"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| read(tmp.path().join("a").join(f))).collect();
        if round == 0 {
            first = bytes;
        } else {
            assert!(first == bytes, "rebuild changed the map artifacts");
        }
    }
    let meta = json(tmp.path().join("a/map_meta.json"));
    let csv = String::from_utf8(read(tmp.path().join("a/map.csv"))).unwrap();
    assert_eq!(csv.lines().count() as u64, 1 + meta["frame"]["height"].as_u64().unwrap());
}

#[test]
fn missing_scene_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let o = run("map", tmp.path(), &["--scene", "does_not_exist.obj"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = run("map", tmp.path(), &["--set", "map.cell_size=0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plan_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let o = run("plan", tmp.path(), &["--fixture", "desk_room", "--output", "ok"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan = json(tmp.path().join("ok/plan.json"));
    assert!(plan["plan"]["dense_path"].as_array().unwrap().len() > 2);
    assert_eq!(plan["plan"]["frame_schedule"][1], 38);
    assert!(tmp.path().join("ok/plan_overlay.png").exists());

    // Keypoint 1 sits inside the shelf.
    write(tmp.path(), "bad.json", "[[0.45, 3.05], [2.5, 3.0], [3.75, 3.05]]");
    let o = run("plan", tmp.path(), &["--fixture", "desk_room", "--keypoints", "bad.json"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[1]") && err.contains("keypoint 1"), "{err}");
}

#[test]
fn walled_off_goal_is_no_path() {
    let tmp = TempDir::new().unwrap();
    let c = |a: [f64; 3], b: [f64; 3]| TriMesh::cuboid(Vec3::from(a), Vec3::from(b));
    let mesh = TriMesh::merge(&[
        c([0.0, 0.0, -0.1], [4.0, 4.0, 0.0]),
        c([2.0, 2.0, 0.0], [3.0, 2.1, 2.0]),
        c([2.0, 2.9, 0.0], [3.0, 3.0, 2.0]),
        c([2.0, 2.1, 0.0], [2.1, 2.9, 2.0]),
        c([2.9, 2.1, 0.0], [3.0, 2.9, 2.0]),
    ]);
    write(tmp.path(), "box.obj", &write_obj(&mesh));
    write(tmp.path(), "kp.json", "[[0.5, 0.5], [2.55, 2.55]]");
    let o = run(
        "plan",
        tmp.path(),
        &["--scene", "box.obj", "--keypoints", "kp.json", "--set", "plan.blocked_above=0"],
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failing segment: 0"));
}

#[test]
fn lambda_sweep_lowers_density_on_corridor() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "[scene]\nfixture = \"corridor\"\n[map]\nkernel_radius = 3\n[plan]\nlambda_sweep = [0.0, 0.5, 2.0]\nstep_cost = \"density_only\"\n[output]\ndir = \"sweep\"\n",
    );
    let o = run("plan", tmp.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let _ = run("map", tmp.path(), &["--config", cfg.to_str().unwrap()]);
    let csv = String::from_utf8(read(tmp.path().join("sweep/map.csv"))).unwrap();
    let grid: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let mut sums = Vec::new();
    for label in ["0", "0.5", "2"] {
        let doc = json(tmp.path().join(format!("sweep/plan_lambda_{label}.json")));
        let cells = doc["plan"]["dense_path"].as_array().unwrap();
        let recomputed: f64 = cells
            .iter()
            .map(|c| grid[c[1].as_u64().unwrap() as usize][c[0].as_u64().unwrap() as usize])
            .sum();
        let reported = doc["density_sum"].as_f64().unwrap();
        assert!((recomputed - reported).abs() <= 1e-6 * cells.len() as f64, "{label}: {recomputed} vs {reported}");
        sums.push(reported);
    }
    assert!(sums[0] > sums[2], "{sums:?}");
    assert!(sums.windows(2).all(|w| w[1] <= w[0]), "{sums:?}");
}

fn guide_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--fixture", "desk_room", "--set", "map.kernel_radius=3", "--set", "guide.params.lambda2=0"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn guide_identity_zero_loss_and_descent() {
    let tmp = TempDir::new().unwrap();
    let o = run("guide", tmp.path(), &guide_args(&["--output", "base"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let input = tmp.path().join("base/guided_trajectory.json");

    let o = run(
        "guide",
        tmp.path(),
        &guide_args(&["--set", "guide.params.tau=0", "--set", "guide.trajectory=\"base/guided_trajectory.json\"", "--output", "tau0"]),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&input), read(tmp.path().join("tau0/guided_trajectory.json")));

    // Anchors read off the trajectory itself are satisfied exactly.
    let traj = TrajectoryState::from_json(&String::from_utf8(read(&input)).unwrap()).unwrap();
    let frames: Vec<usize> = (0..traj.frames()).step_by(38).collect();
    let roots: Vec<[f64; 3]> = frames.iter().map(|&f| traj.root(f).into()).collect();
    write(tmp.path(), "anchors.json", &AnchorTuple::from_schedule(&roots, &frames).to_json().unwrap());
    let o = run(
        "guide",
        tmp.path(),
        &guide_args(&["--set", "guide.trajectory=\"base/guided_trajectory.json\"", "--set", "guide.anchors=\"anchors.json\"", "--output", "sat"]),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = String::from_utf8(read(tmp.path().join("sat/guidance_log.csv"))).unwrap();
    assert_eq!(log.lines().count(), 11);
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[2..], ["0", "0", "0", "0"], "{line}");
    }

    let o = run(
        "guide",
        tmp.path(),
        &guide_args(&["--set", "guide.params.lambda3=0", "--set", "guide.params.guided_timesteps=\"all\"", "--output", "convex"]),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = String::from_utf8(read(tmp.path().join("convex/guidance_log.csv"))).unwrap();
    let root: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(root.len(), 50);
    assert!(root.windows(2).all(|w| w[1] <= w[0]), "{root:?}");
    assert!(root[49] < root[0] * 1e-3);
}

fn unit_box_scene(dir: &Path) {
    write(dir, "box.obj", &write_obj(&TriMesh::cuboid(Vec3::new(0.0, -0.5, 0.0), Vec3::new(1.0, 0.5, 1.0))));
}

fn sweep_sequence(frames: usize, x0: f64, dx: f64, objects: bool) -> MotionSequence {
    MotionSequence {
        frame_rate: 30.0,
        body: (0..frames).map(|f| vec![Vec3::new(x0 + dx * f as f64, 0.0, 0.5)]).collect(),
        hand_vertices: Vec::new(),
        objects: if objects {
            (0..frames).map(|f| RigidPose::from_translation(Vec3::new(3.0 + 0.01 * f as f64, 2.0, 0.0))).collect()
        } else {
            Vec::new()
        },
    }
}

#[test]
fn eval_reports_and_batches() {
    let tmp = TempDir::new().unwrap();
    unit_box_scene(tmp.path());
    // 40 frames sweeping x from -1.05 to 2.85: frames with 0 < x < 1 are inside.
    let seq = sweep_sequence(40, -1.05, 0.1, true);
    let inside = seq.body.iter().filter(|b| b[0].x > 0.0 && b[0].x < 1.0).count();
    write(tmp.path(), "sweep.json", &seq.to_json().unwrap());
    let last = seq.objects.last().unwrap().translation;
    let task = ObjectTask {
        start: seq.objects[0],
        target: RigidPose::from_translation(Vec3::from(last)),
    };
    write(tmp.path(), "task.json", &serde_json::to_string(&task).unwrap());
    let o = run(
        "eval",
        tmp.path(),
        &["--scene", "box.obj", "--set", "eval.sequences=[\"sweep.json\"]", "--set", "eval.task=\"task.json\"", "--output", "one"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(tmp.path().join("one/report.json"));
    assert_eq!(r["Rate"], true);
    assert_eq!(r["Dist."], 0.0);
    assert_eq!(r["Pene. Rate"].as_f64().unwrap(), inside as f64 / 40.0);

    write(tmp.path(), "b.json", &sweep_sequence(10, 5.0, 0.0, false).to_json().unwrap());
    write(tmp.path(), "c.json", &sweep_sequence(10, 0.5, 0.0, false).to_json().unwrap());
    let o = run(
        "eval",
        tmp.path(),
        &["--scene", "box.obj", "--set", "eval.sequences=[\"sweep.json\",\"b.json\",\"c.json\"]", "--output", "batch"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(tmp.path().join("batch/metrics.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("sweep,") && rows[1].starts_with("b,") && rows[2].starts_with("c,"));
    assert!(rows[1].contains(",0.000000,0.000000,0.000000,") && rows[2].contains(",1.000000,"));

    // Object frames that do not line up with the body are rejected.
    let mut bad = sweep_sequence(5, 0.0, 0.0, true);
    bad.objects.pop();
    std::fs::write(tmp.path().join("bad.json"), serde_json::to_string(&serde_json::json!({"schema_version": 1, "sequence": bad})).unwrap()).unwrap();
    let o = run("eval", tmp.path(), &["--scene", "box.obj", "--set", "eval.sequences=[\"bad.json\"]"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_flags_and_echo() {
    let tmp = TempDir::new().unwrap();
    let sub = tmp.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    write(&sub, "kp.json", "[[0.45, 3.05], [3.75, 3.05]]");
    let cfg = write(&sub, "run.toml", "[scene]\nfixture = \"desk_room\"\n[plan]\nkeypoints = \"kp.json\"\nlambda = 0.5\n");
    let o = run("plan", tmp.path(), &["--config", cfg.to_str().unwrap(), "--lambda", "0", "--print-config"]);
    assert_eq!(code(&o), 0);
    let echoed = String::from_utf8(o.stdout).unwrap();
    assert!(echoed.contains("lambda = 0.0"), "{echoed}");
    assert!(echoed.contains(&sub.join("kp.json").display().to_string()));
    let o = run("plan", tmp.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo = String::from_utf8(read(sub.join("out/effective_config.toml"))).unwrap();
    assert!(echo.contains("lambda = 0.5"));
    assert_eq!(json(sub.join("out/plan.json"))["lambda"], 0.5);
}
