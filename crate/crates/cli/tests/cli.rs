use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn mapforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapforge")).args(args).output().expect("spawn mapforge")
}

fn ok(args: &[&str]) -> Output {
    let out = mapforge(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One generated scene with 10 points per element, written to `dir/scene_0000.json`.
fn small_scene(dir: &Path) -> PathBuf {
    ok(&["gen", "--out", s(dir), "--seed", "2", "--points", "10"]);
    dir.join("scene_0000.json")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_is_deterministic_and_schema_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--out", s(&a), "--seed", "11", "--scenes", "100"]);
    ok(&["gen", "--out", s(&b), "--seed", "11", "--scenes", "100"]);
    for i in 0..100 {
        let name = format!("scene_{i:04}.json");
        let bytes = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&name)).unwrap(), "{name}");
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["version"], "mapforge/1");
        assert_eq!(v["dim"], 2);
        let els = v["elements"].as_array().unwrap();
        assert_eq!(els.len(), 9);
        for e in els {
            let pts = e["points"].as_array().unwrap();
            assert_eq!(pts.len(), 20);
            for p in pts {
                let (x, y) = (p[0].as_f64().unwrap(), p[1].as_f64().unwrap());
                assert!((-15.0..=15.0).contains(&x) && (-30.0..=30.0).contains(&y));
            }
            assert_eq!(e["closed"], e["class"] == "ped_crossing");
            assert_eq!(e["directed"], e["class"] == "centerline");
        }
    }
}

#[test]
fn gen_with_zero_counts_writes_empty_scene() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "gen",
        "--out",
        s(dir.path()),
        "--dividers",
        "0",
        "--boundaries",
        "0",
        "--crossings",
        "0",
        "--centerlines",
        "0",
    ]);
    let v = read_json(&dir.path().join("scene_0000.json"));
    assert!(v["elements"].as_array().unwrap().is_empty());
}

#[test]
fn exact_perturbation_round_trips_to_perfect_map() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    let pred = dir.path().join("pred.json");
    let res = dir.path().join("res.json");
    ok(&["gen", "--out", s(&gt), "--seed", "3", "--scenes", "4"]);
    ok(&["perturb", "--gt", s(&gt), "--out", s(&pred), "--sigma", "0", "--drop", "0", "--spurious", "0"]);
    ok(&["eval", "--gt", s(&gt), "--pred", s(&pred), "--json-out", s(&res)]);
    assert_eq!(read_json(&res)["map"].as_f64().unwrap(), 1.0);
}

#[test]
fn eval_matches_reference_fixture() {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("res.json");
    let out =
        ok(&["eval", "--gt", s(&f.join("eval_gt")), "--pred", s(&f.join("eval_pred.json")), "--json-out", s(&res)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("mAP"));
    let (got, want) = (read_json(&res), read_json(&f.join("eval_expected.json")));
    assert_eq!(got["thresholds"], want["thresholds"]);
    let close = |a: &Value, b: &Value| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() <= 1e-12;
    assert!(close(&got["map"], &want["map"]), "{} vs {}", got["map"], want["map"]);
    let (gc, wc) = (got["classes"].as_array().unwrap(), want["classes"].as_array().unwrap());
    assert_eq!(gc.len(), wc.len());
    for (g, w) in gc.iter().zip(wc) {
        assert_eq!(g["class"], w["class"]);
        assert_eq!(g["num_gt"], w["num_gt"]);
        for (a, b) in g["ap_at"].as_array().unwrap().iter().zip(w["ap_at"].as_array().unwrap()) {
            assert!(close(a, b), "{}: {a} vs {b}", g["class"]);
        }
    }
}

#[test]
fn bev_raster_matches_golden_mask() {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bev.pgm");
    ok(&[
        "raster",
        "--gt",
        s(&f.join("raster_scene.json")),
        "--bev",
        "--cell-size",
        "0.3",
        "--line-width",
        "0.5",
        "--out",
        s(&out),
    ]);
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(f.join("raster_golden.pgm")).unwrap());
}

#[test]
fn pv_raster_has_requested_size() {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pv.pgm");
    ok(&[
        "raster",
        "--gt",
        s(&f.join("raster_scene.json")),
        "--pv",
        "--width",
        "320",
        "--height",
        "180",
        "--out",
        s(&out),
    ]);
    let bytes = std::fs::read(out).unwrap();
    let header = b"P5\n320 180\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 320 * 180);
    assert!(bytes[header.len()..].contains(&255));
}

#[test]
fn fit_zero_iterations_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let gt = small_scene(dir.path());
    let p = |n: &str| dir.path().join(n);
    ok(&["fit", "--gt", s(&gt), "--iters", "0", "--trace-out", s(&p("t0.csv")), "--pred-out", s(&p("p0.json"))]);
    let t0 = std::fs::read_to_string(p("t0.csv")).unwrap();
    let rows: Vec<&str> = t0.lines().collect();
    assert_eq!(rows.len(), 2, "header plus the initial snapshot: {t0}");
    assert!(rows[1].starts_with("0,,"));
    assert_eq!(read_json(&p("p0.json"))["version"], "mapforge/1");

    let base = ["fit", "--gt", s(&gt), "--iters", "20", "--one2many-k", "0"];
    let with = |mode: &str, tag: &str| {
        let (t, q) = (p(&format!("t_{tag}.csv")), p(&format!("p_{tag}.json")));
        let mut args = base.to_vec();
        args.extend(["--mode", mode, "--trace-out", s(&t), "--pred-out", s(&q)]);
        ok(&args);
        std::fs::read_to_string(t).unwrap()
    };
    let perm = with("perm_equiv", "perm");
    let fixed = with("fixed_order", "fixed");
    assert_eq!(perm.lines().count(), fixed.lines().count());
    assert_ne!(perm, fixed);
}

#[test]
fn plot_draws_one_shape_per_element() {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("o.svg");
    ok(&[
        "plot",
        "--gt",
        s(&f.join("eval_gt/scene_0001.json")),
        "--pred",
        s(&f.join("eval_pred.json")),
        "--scene-id",
        "1",
        "--out",
        s(&svg),
    ]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches(r#"class="gt "#).count(), 3);
    assert_eq!(text.matches(r#"class="pred "#).count(), 4);

    let empty = dir.path().join("scene.json");
    ok(&[
        "gen",
        "--out",
        s(dir.path()),
        "--dividers",
        "0",
        "--boundaries",
        "0",
        "--crossings",
        "0",
        "--centerlines",
        "0",
    ]);
    std::fs::rename(dir.path().join("scene_0000.json"), &empty).unwrap();
    ok(&["plot", "--gt", s(&empty), "--out", s(&svg)]);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<?xml") && !text.contains("<poly"));
}

#[test]
fn bench_attn_without_timing_is_deterministic() {
    let a = ok(&["bench-attn", "--ns", "10,20", "--nv", "5", "--d", "4", "--no-timing"]);
    let b = ok(&["bench-attn", "--ns", "10,20", "--nv", "5", "--d", "4", "--no-timing"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "variant,N,N_v,d,score_entries,flops,peak_score_bytes,median_seconds");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(',')));
    assert!(rows.iter().any(|r| r.starts_with("vanilla,10,5,4,2500,")));
}

#[test]
fn exit_codes() {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mapforge(&["eval"]).status.code(), Some(2));
    assert_eq!(mapforge(&["raster", "--gt", s(&f.join("raster_scene.json")), "--out", "x.pgm"]).status.code(), Some(2));

    let missing = mapforge(&["eval", "--gt", "/nonexistent/none.json", "--pred", s(&f.join("eval_pred.json"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let unwritable = blocker.join("sub/out.pgm");
    let r = mapforge(&["raster", "--gt", s(&f.join("raster_scene.json")), "--bev", "--out", s(&unwritable)]);
    assert_eq!(r.status.code(), Some(2));

    // Prediction file refers to scene 1 but only one ground-truth scene is given.
    let r = mapforge(&["eval", "--gt", s(&f.join("eval_gt/scene_0000.json")), "--pred", s(&f.join("eval_pred.json"))]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));

    let r = mapforge(&[
        "fit",
        "--gt",
        s(&small_scene(dir.path())),
        "--iters",
        "5",
        "--lr",
        "1e308",
        "--schedule",
        "constant",
        "--trace-out",
        s(&dir.path().join("t.csv")),
        "--pred-out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}
