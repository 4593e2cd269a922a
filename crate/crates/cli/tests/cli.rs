use std::path::Path;
use std::process::Command;

use flowslider::bench::{DETAIL_CSV_HEADER, TRAJECTORY_CSV_HEADER};
use flowslider::geometry::ANGLE_CSV_HEADER;
use flowslider_cli::{render_plot, AxisMap, PlotKind, RunManifest, MANIFEST_FILE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowslider"))
}

fn run(args: &[&str]) -> std::process::Output {
    bin().args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> RunManifest {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let dir = args.iter().position(|a| *a == "--out-dir").map(|i| args[i + 1]).unwrap();
    RunManifest::read(&Path::new(dir).join(MANIFEST_FILE)).unwrap()
}

fn digest<'a>(m: &'a RunManifest, name: &str) -> &'a str {
    &m.output(name).unwrap_or_else(|| panic!("{name} missing")).sha256
}

#[test]
fn exit_codes_and_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let out = run(&["edit", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    assert_eq!(run(&["edit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let out = run(&["edit", "--T", "0", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error class=invalid_argument message="), "{stderr}");

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"seed\": 1,\n \"bogus\": 2}").unwrap();
    let out = run(&["edit", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error class=parse "));
}

#[test]
fn flowslider_at_unit_strength_matches_flowedit_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 11, "scenario": "two_gaussian", "sample_index": 3}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = cfg.to_str().unwrap();
    let ma = run_ok(&["edit", "--config", c, "--s", "1", "--variant", "flowslider", "--out-dir", a.to_str().unwrap()]);
    let mb = run_ok(&["edit", "--config", c, "--s", "1", "--variant", "flowedit", "--out-dir", b.to_str().unwrap()]);
    for name in ["x_edit.csv", "angles.csv", "trajectory.csv"] {
        assert_eq!(digest(&ma, name), digest(&mb, name), "{name}");
    }
    // the JSON result records which variant produced it
    assert_ne!(digest(&ma, "edit_result.json"), digest(&mb, "edit_result.json"));
}

#[test]
fn negative_strength_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("neg");
    let m = run_ok(&["edit", "--s", "-2.5", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(m.config.s, -2.5);
    let m = run_ok(&["reverse", "--strengths", "-2,0,2", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(m.config.strengths, Some(vec![-2.0, 0.0, 2.0]));
    let text = std::fs::read_to_string(out.join("reverse.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 3);
}

#[test]
fn two_gaussian_sweep_has_five_rows_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    run_ok(&["sweep", "--suite", "two_gaussian", "--seed", "5", "--out-dir", out.to_str().unwrap()]);
    let detail = std::fs::read_to_string(out.join("detail.csv")).unwrap();
    let mut lines = detail.lines();
    assert_eq!(lines.next(), Some(DETAIL_CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    let slider = rows.iter().filter(|r| r.split(',').nth(1) == Some("flowslider")).count();
    assert_eq!(slider, 8 * 5);
    // knob sweeps add five rows per sample each
    assert_eq!(rows.len(), 8 * 15);
    let errors = std::fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1);
}

#[test]
fn ablation_covers_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablate");
    run_ok(&["ablate", "--suite", "two_gaussian", "--strengths", "0.5,1,2", "--out-dir", out.to_str().unwrap()]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    for v in ["flowedit", "flowslider", "naive_scaling", "linear_interp"] {
        assert!(summary.lines().any(|l| l.split(',').nth(1) == Some(v)), "{v}");
    }
}

#[test]
fn manifest_replay_reproduces_digests() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let m1 = run_ok(&["angles", "--suite", "two_gaussian", "--seed", "3", "--strengths", "1,3", "--out-dir", first.to_str().unwrap()]);
    let second = dir.path().join("second");
    let manifest = first.join(MANIFEST_FILE);
    let m2 = run_ok(&["angles", "--config", manifest.to_str().unwrap(), "--out-dir", second.to_str().unwrap()]);
    assert_eq!(m1.outputs, m2.outputs);
    assert_eq!(m1.seed, 3);

    // a manifest replays only the command that wrote it
    let out = run(&["sweep", "--config", manifest.to_str().unwrap(), "--out-dir", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plot_from_angles_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("angles.csv");
    let mut text = format!("{ANGLE_CSV_HEADER}\n");
    for k in 0..10 {
        text.push_str(&format!("{k},0.5,90,1,1\n"));
    }
    std::fs::write(&csv, &text).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ma = run_ok(&["plot", "--angles", csv.to_str().unwrap(), "--out-dir", a.to_str().unwrap()]);
    let mb = run_ok(&["plot", "--angles", csv.to_str().unwrap(), "--out-dir", b.to_str().unwrap()]);
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.inputs[0].sha256, flowslider_cli::manifest::sha256_hex(text.as_bytes()));
    let svg = std::fs::read_to_string(a.join("angle_hist.svg")).unwrap();
    let occupied: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"bar\"") && !l.contains("data-count=\"0\"")).collect();
    assert_eq!(occupied.len(), 1, "{svg}");
    assert!(occupied[0].contains("data-count=\"10\""));
}

#[test]
fn empty_plot_says_no_data() {
    for kind in [PlotKind::AngleHist, PlotKind::Tradeoff, PlotKind::Trajectory2d] {
        let svg = render_plot(kind, &format!("{}\n", kind.header())).unwrap();
        assert!(svg.contains("no data"), "{kind:?}");
    }
}

#[test]
fn tradeoff_points_sit_at_declared_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    run_ok(&["sweep", "--suite", "two_gaussian", "--out-dir", out.to_str().unwrap()]);
    let detail = std::fs::read_to_string(out.join("detail.csv")).unwrap();
    let svg = std::fs::read_to_string(out.join("tradeoff.svg")).unwrap();
    let axes = AxisMap::from_svg(&svg).unwrap();
    let attr = |line: &str, name: &str| -> f64 {
        let start = line.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
        line[start..].split('"').next().unwrap().parse().unwrap()
    };
    let points: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"point\"")).collect();
    let rows: Vec<Vec<f64>> = detail
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            vec![f[3].parse().unwrap(), f[5].parse().unwrap()]
        })
        .collect();
    assert_eq!(points.len(), rows.len());
    for (p, r) in points.iter().zip(&rows) {
        assert!((attr(p, "cx") - axes.px(r[0])).abs() <= 1e-6);
        assert!((attr(p, "cy") - axes.py(r[1])).abs() <= 1e-6);
    }
}

#[test]
fn sample_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    run_ok(&["sample", "--samples", "3", "--T", "10", "--condition", "tar", "--out-dir", out.to_str().unwrap()]);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some(TRAJECTORY_CSV_HEADER));
    assert_eq!(traj.lines().count(), 1 + 3 * 11);
    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 4);
}
