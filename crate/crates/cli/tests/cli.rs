//! Runs the `vidpose` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn vidpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidpose"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn metrics(out: &Output) -> Vec<(String, String)> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect()
}

fn metric(out: &Output, key: &str) -> f64 {
    metrics(out)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key} in {}", String::from_utf8_lossy(&out.stdout)))
        .1
        .parse()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_solve_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.frames = 16\ncamera.init_scale = 1.1\n");
    let data = tmp.path().join("data");
    let sim = vidpose(&["simulate", "--config", &cfg, "--out", s(&data)]);
    assert!(sim.status.success());
    assert_eq!(metric(&sim, "frames"), 16.0);

    let sol = tmp.path().join("sol");
    let solve = vidpose(&["solve", "--config", &cfg, s(&data), "--out", s(&sol)]);
    assert!(
        solve.status.success(),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    assert_eq!(metric(&solve, "frames"), 16.0);
    assert!(metric(&solve, "keyframes") >= 2.0);
    for f in [
        "trajectory.txt",
        "intrinsics.txt",
        "report.txt",
        "points.ply",
    ] {
        assert!(sol.join(f).is_file(), "{f} missing");
    }

    let traj = sol.join("trajectory.txt");
    let gt = data.join("groundtruth.txt");
    let eval = vidpose(&[
        "eval",
        s(&traj),
        s(&gt),
        "--est-intrinsics",
        s(&sol.join("intrinsics.txt")),
        "--gt-intrinsics",
        s(&data.join("intrinsics.txt")),
    ]);
    assert!(eval.status.success());
    assert_eq!(metric(&eval, "pairs"), 16.0);
    assert!(metric(&eval, "ate_rel") < 1e-3);
    assert!(metric(&eval, "focal") < 0.2);

    let same = vidpose(&["eval", s(&gt), s(&gt)]);
    for key in ["ate", "rte", "rre"] {
        assert!(metric(&same, key).abs() < 1e-12, "{key}");
    }
}

#[test]
fn missing_dataset_reports_error_class_and_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vidpose(&[
        "solve",
        s(&tmp.path().join("nowhere")),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error="), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.frames = 4\nsolver.iterations = 3\n");
    let out = vidpose(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        s(&tmp.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("solver.iterations"), "{err}");
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn disabling_the_mask_hurts_on_dynamic_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.frames = 24\nsim.dynamic = true\n");
    let data = tmp.path().join("data");
    assert!(vidpose(&["simulate", "--config", &cfg, "--out", s(&data)])
        .status
        .success());
    let gt = data.join("groundtruth.txt");
    let mut ate = Vec::new();
    for (name, extra) in [("masked", None), ("open", Some("--no-mask"))] {
        let sol = tmp.path().join(name);
        let mut args = vec!["solve", "--config", &cfg, s(&data), "--out", s(&sol)];
        args.extend(extra);
        assert!(vidpose(&args).status.success());
        ate.push(metric(
            &vidpose(&["eval", s(&sol.join("trajectory.txt")), s(&gt)]),
            "ate_rel",
        ));
    }
    assert!(ate[1] > 5.0 * ate[0], "{ate:?}");
}

#[test]
fn tracker_writes_matches_from_exported_frames() {
    let tmp = tempfile::tempdir().unwrap();
    // Full-length video so inter-frame motion stays within the tracker's range.
    let cfg = write_config(tmp.path(), "export.images = true\nexport.max_gap = 1\n");
    let data = tmp.path().join("data");
    assert!(vidpose(&["simulate", "--config", &cfg, "--out", s(&data)])
        .status
        .success());
    let matches = tmp.path().join("matches.txt");
    let frames = tmp.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for f in 0..6 {
        let name = format!("{f:05}_0.vpe");
        std::fs::copy(data.join("frames").join(&name), frames.join(&name)).unwrap();
    }
    let out = vidpose(&["track", s(&frames), "--out", s(&matches), "--max-gap", "2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(metric(&out, "frames"), 6.0);
    assert!(metric(&out, "tracks") > 0.0);

    let sampson = vidpose(&[
        "sampson",
        s(&data.join("groundtruth.txt")),
        s(&data.join("intrinsics.txt")),
        s(&matches),
    ]);
    assert!(
        sampson.status.success(),
        "{}",
        String::from_utf8_lossy(&sampson.stderr)
    );
    assert!(metric(&sampson, "pairs") > 0.0);
    // Mostly sub-pixel; a few border features drift.
    assert!(metric(&sampson, "sampson") < 0.5);
}
