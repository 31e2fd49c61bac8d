//! Acceptance run: one line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use trailcam_core::evaluation::{match_detections, ConfusionCounts, ScoredBox};
use trailcam_core::explain::ttest::t_cdf;
use trailcam_core::imaging::{MeanImage, Plane};
use trailcam_core::similarity::{
    rti, rti_between, structure_matrix, SimilarityParams, WindowGeometry,
};
use trailcam_core::synth::{dyadic, shifted, value_noise, SceneSpec};
use trailcam_core::BoundingBox;

const BIN: &str = env!("CARGO_BIN_EXE_trailcam");

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("spawn trailcam")
}

fn run_ok(args: &[&str]) -> Result<Value, String> {
    let o = run(args);
    ensure!(
        o.status.code() == Some(0),
        "`trailcam {}` exited {:?}: {}",
        args.join(" "),
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).map_err(|e| format!("stdout of {}: {e}", args[0]))
}

fn f(v: &Value, key: &str) -> Result<f64, String> {
    v[key]
        .as_f64()
        .ok_or_else(|| format!("no number at {key} in {v}"))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).expect("write fixture");
    p
}

fn tp_counts() -> Value {
    json!({"sites": [
        {"site_id": "site1", "total": 346, "successes": 333},
        {"site_id": "site2", "total": 342, "successes": 322},
        {"site_id": "site3", "total": 502, "successes": 478}
    ]})
}

fn tn_counts() -> Value {
    json!({"sites": [
        {"site_id": "site1", "images": 541, "successes": [541, 540, 541]},
        {"site_id": "site2", "images": 540, "successes": [533, 530, 532]},
        {"site_id": "site3", "images": 621, "successes": [619, 615, 619]}
    ]})
}

fn tp_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let counts = write(dir.path(), "tp.json", &tp_counts());
    let out = dir.path().join("r");
    let start = Instant::now();
    let r = run_ok(&["tp-exp", "--replay", s(&counts), "--out", s(&out)])?;
    let elapsed = start.elapsed();
    let r94 = run_ok(&[
        "tp-exp",
        "--replay",
        s(&counts),
        "--mu0",
        "0.94",
        "--out",
        s(&out),
    ])?;
    let (p, ub, p94) = (
        f(&r, "p_value")?,
        f(&r, "upper_bound")?,
        f(&r94, "p_value")?,
    );
    ensure!(
        r["n"] == 1190 && f(&r, "successes")? == 1133.0,
        "counts {r}"
    );
    ensure!((p - 0.63).abs() <= 0.01, "p = {p}");
    ensure!((ub - 0.962).abs() <= 0.001, "upper bound = {ub}");
    ensure!((p94 - 0.97).abs() <= 0.01, "p at 0.94 = {p94}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "p={p:.4} ub={ub:.4} p(0.94)={p94:.4} in {elapsed:.2?}"
    ))
}

fn tn_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let counts = write(dir.path(), "tn.json", &tn_counts());
    let start = Instant::now();
    let r = run_ok(&[
        "tn-exp",
        "--replay",
        s(&counts),
        "--out",
        s(&dir.path().join("r")),
    ])?;
    let elapsed = start.elapsed();
    let (p, ub) = (f(&r, "p_value")?, f(&r, "upper_bound")?);
    ensure!(
        r["n"] == 1702 && f(&r, "successes")? == 1690.0,
        "counts {r}"
    );
    ensure!(p >= 0.999, "p = {p}");
    ensure!((ub - 0.996).abs() <= 0.001, "upper bound = {ub}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("p={p:.6} ub={ub:.4} in {elapsed:.2?}"))
}

fn variance_checks() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("r");
    let tp = run_ok(&[
        "tp-exp",
        "--replay",
        s(&write(dir.path(), "tp.json", &tp_counts())),
        "--out",
        s(&out),
    ])?;
    let tn = run_ok(&[
        "tn-exp",
        "--replay",
        s(&write(dir.path(), "tn.json", &tn_counts())),
        "--out",
        s(&out),
    ])?;
    let a = format!("{:.1}", f(&tp["variance_check"], "variance")?);
    let b = format!("{:.1}", f(&tn["variance_check"], "variance")?);
    ensure!(a == "56.5" && b == "80.8", "got {a} and {b}");
    ensure!(
        tp["variance_check"]["ok"] == true && tn["variance_check"]["ok"] == true,
        "threshold not cleared"
    );
    Ok(format!("{a} and {b}, both above 10"))
}

/// Textbook two-pass population statistics over one window.
fn oracle_structure(
    a: &[f32],
    b: &[f32],
    width: usize,
    x0: usize,
    y0: usize,
    win: usize,
    c3: f64,
) -> f64 {
    let px = |d: &[f32], x: usize, y: usize| d[(y0 + y) * width + x0 + x] as f64;
    let n = (win * win) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..win {
        for x in 0..win {
            mx += px(a, x, y);
            my += px(b, x, y);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for y in 0..win {
        for x in 0..win {
            let (u, v) = (px(a, x, y) - mx, px(b, x, y) - my);
            vx += u * u;
            vy += v * v;
            cxy += u * v;
        }
    }
    (cxy / n + c3) / ((vx / n).sqrt() * (vy / n).sqrt() + c3)
}

fn geometry() -> Check {
    let side = 1500;
    let a = vec![0.5f32; side * side];
    let b = value_noise(side, side, 50, 1)
        .iter()
        .map(|v| dyadic(0.5 + 0.2 * v))
        .collect::<Vec<_>>();
    let m = structure_matrix(
        &Plane::new(side, side, &a).map_err(|e| e.to_string())?,
        &Plane::new(side, side, &b).map_err(|e| e.to_string())?,
        &WindowGeometry::default(),
        &SimilarityParams::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        m.rows == 5 && m.cols == 5 && m.values.len() == 25,
        "{}x{}",
        m.rows,
        m.cols
    );

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let geo = WindowGeometry {
        window: 4,
        stride: 2,
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let params = if rng.gen_bool(0.5) {
            SimilarityParams::default()
        } else {
            SimilarityParams::unregularized()
        };
        let x: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = structure_matrix(
            &Plane::new(8, 8, &x).map_err(|e| e.to_string())?,
            &Plane::new(8, 8, &y).map_err(|e| e.to_string())?,
            &geo,
            &params,
        )
        .map_err(|e| e.to_string())?;
        ensure!(m.rows == 3 && m.cols == 3, "8x8 grid {}x{}", m.rows, m.cols);
        for r in 0..3 {
            for c in 0..3 {
                let want = oracle_structure(&x, &y, 8, c * 2, r * 2, 4, params.c3);
                worst = worst.max((m.get(r, c) - want).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!("5x5 grid; 100 random windows within {worst:.1e}"))
}

fn random_mean(rng: &mut ChaCha8Rng, side: usize) -> Result<MeanImage, String> {
    let cell = rng.gen_range(10..200);
    let amp = rng.gen_range(0.05f32..0.45);
    let base = rng.gen_range(0.45f32..0.55);
    let noise = value_noise(side, side, cell, rng.gen());
    let values = noise
        .iter()
        .map(|v| (base + amp * v).clamp(0.0, 1.0))
        .collect();
    MeanImage::from_mean(side, side, values, rng.gen_range(1..100)).map_err(|e| e.to_string())
}

fn rti_identity_symmetry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (geo, params) = (WindowGeometry::default(), SimilarityParams::default());
    let mut worst = 0.0f64;
    let mut prev = random_mean(&mut rng, 1500)?;
    for i in 0..20 {
        let a = random_mean(&mut rng, 1500)?;
        let own = rti_between(&a, &a, &geo, &params).map_err(|e| e.to_string())?;
        ensure!(own == 0.0, "image {i}: RTI(a,a) = {own:e}");
        let ab = rti_between(&a, &prev, &geo, &params).map_err(|e| e.to_string())?;
        let ba = rti_between(&prev, &a, &geo, &params).map_err(|e| e.to_string())?;
        worst = worst.max((ab - ba).abs());
        prev = a;
    }
    ensure!(worst <= 1e-12, "asymmetry {worst:e}");
    Ok(format!(
        "20 images at exactly 0; asymmetry within {worst:.1e}"
    ))
}

fn drift_scenario() -> Check {
    let start = Instant::now();
    let side = 1500;
    let (geo, params) = (WindowGeometry::default(), SimilarityParams::default());
    let scene = SceneSpec::new(side, side, 2024);
    let base = scene.render();
    let mean = |v: Vec<f32>| MeanImage::from_mean(side, side, v, 30).map_err(|e| e.to_string());
    let reference = mean(base.clone())?;
    let mut shift_rtis = Vec::new();
    for c in [-24.0f32, -5.0, 1.0, 13.0, 30.0] {
        let lit = mean(shifted(&base, c / 256.0).map_err(|e| e.to_string())?)?;
        shift_rtis.push(rti_between(&reference, &lit, &geo, &params).map_err(|e| e.to_string())?);
    }
    ensure!(
        shift_rtis.iter().all(|r| *r == 0.0),
        "illumination shifts gave {shift_rtis:?}"
    );

    let moved = scene
        .displaced(0, -0.25 * side as f64, 0.2 * side as f64)
        .map_err(|e| e.to_string())?;
    let moved_mean = mean(moved.render())?;
    let m = structure_matrix(
        &reference.plane().map_err(|e| e.to_string())?,
        &moved_mean.plane().map_err(|e| e.to_string())?,
        &geo,
        &params,
    )
    .map_err(|e| e.to_string())?;
    let low = m.values.iter().filter(|v| **v <= 0.6).count();
    let moved_rti = rti(&m);
    ensure!(low >= 2, "only {low} windows at or below 0.6");
    ensure!(moved_rti > 0.1, "displacement RTI {moved_rti}");

    // the same situation through the CLI, on rendered frames
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path();
    run_ok(&[
        "synth",
        "--out",
        s(data),
        "--sites",
        "1",
        "--days",
        "2",
        "--frames",
        "10",
        "--width",
        "1600",
        "--height",
        "1600",
        "--crop",
        "1500",
        "--drift-site",
        "1",
        "--seed",
        "5",
    ])?;
    let (manifest, cfg, out) = (
        data.join("manifest.csv"),
        data.join("trailcam.toml"),
        data.join("r"),
    );
    let common = ["--config", s(&cfg), "--out", s(&out)];
    let mut args = vec!["mean", s(&manifest), "--date", "2019-07-01"];
    args.extend(common);
    run_ok(&args)?;
    let mut args = vec!["drift-check", s(&manifest), "--date", "2019-07-02"];
    args.extend(common);
    let o = run(&args);
    let code = o.status.code();
    ensure!(
        code == Some(3),
        "drift-check exited {code:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let d: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let cli_rti = f(&d[0]["rtis"][0], "rti")?;
    ensure!(cli_rti > 0.1, "CLI RTI {cli_rti}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "shifts RTI 0; displacement {low} windows <= 0.6, RTI {moved_rti:.3}; CLI RTI {cli_rti:.3} exit 3; {elapsed:.1?}"
    ))
}

/// CDF by the substitution t = sqrt(df)·tan θ, which leaves cos^(df−1) θ
/// to integrate; the normalizer is the same integral up to π/2.
fn oracle_t_cdf(t: f64, df: f64) -> f64 {
    let g = |th: f64| ((df - 1.0) * th.cos().ln()).exp();
    let simpson = |hi: f64| {
        let n = 20_000;
        let h = hi / n as f64;
        let mut acc = g(0.0) + g(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        acc * h / 3.0
    };
    let half = simpson(std::f64::consts::FRAC_PI_2);
    let theta = (t / df.sqrt()).atan();
    let part = simpson(theta.abs()) / (2.0 * half);
    if t >= 0.0 {
        0.5 + part
    } else {
        0.5 - part
    }
}

fn student_t() -> Check {
    let mut worst = 0.0f64;
    for df in [5.0, 30.0, 1189.0, 5105.0] {
        for i in 0..=100 {
            let t = -5.0 + 0.1 * i as f64;
            let got = t_cdf(t, df).map_err(|e| e.to_string())?;
            let want = oracle_t_cdf(t, df);
            let dev = (got - want).abs();
            ensure!(dev <= 1e-6, "df {df} t {t}: {got} vs {want}");
            worst = worst.max(dev);
        }
    }
    Ok(format!("404 points within {worst:.1e}"))
}

fn metric_replays() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("r");
    let day = json!({"sites": [
        {"site_id": "site1", "tp": 97, "fn": 13, "tn": 261, "fp": 7},
        {"site_id": "site2", "tp": 102, "fn": 11, "tn": 254, "fp": 8},
        {"site_id": "site3", "tp": 147, "fn": 28, "tn": 294, "fp": 17}
    ]});
    let c = run_ok(&[
        "eval-classify",
        "--replay",
        s(&write(dir.path(), "day.json", &day)),
        "--out",
        s(&out),
    ])?;
    let total = &c["total"];
    ensure!(
        total["tp"] == 346 && total["fn"] == 52 && total["tn"] == 809 && total["fp"] == 32,
        "totals {total}"
    );
    let (sens, spec) = (
        100.0 * f(total, "sensitivity")?,
        100.0 * f(total, "specificity")?,
    );
    ensure!(
        sens.round() == 87.0 && spec.round() == 96.0,
        "sensitivity {sens}, specificity {spec}"
    );
    let notes = c["discrepancies"].as_array().map_or(0, Vec::len);
    ensure!(notes > 0, "no discrepancy notes for classification replay");

    let det = json!({"tp": 526, "tn": 1534, "fp": 125, "fn": 35, "avg_iou": 0.68});
    let d = run_ok(&[
        "eval-detect",
        "--replay",
        s(&write(dir.path(), "det.json", &det)),
        "--out",
        s(&out),
    ])?;
    let det_sens = format!("{:.1}", 100.0 * f(&d, "sensitivity")?);
    let iou_pct = format!("{:.0}%", 100.0 * f(&d, "avg_iou")?);
    ensure!(det_sens == "93.8", "detector sensitivity {det_sens}");
    ensure!(iou_pct == "68%", "avg IoU {iou_pct}");
    let det_notes = d["discrepancies"].as_array().cloned().unwrap_or_default();
    ensure!(
        det_notes.iter().any(|n| n["quantity"] == "sensitivity"),
        "no detector sensitivity note in {det_notes:?}"
    );

    // a single match with IoU exactly 0.68 reports on the same scale
    let gt = BoundingBox {
        x: 0.0,
        y: 0.0,
        w: 100.0,
        h: 100.0,
        class_name: String::new(),
    };
    let est = ScoredBox::new(
        BoundingBox {
            w: 68.0,
            ..gt.clone()
        },
        0.9,
    );
    let o = match_detections(&[est], &[gt], 0.4).map_err(|e| e.to_string())?;
    let avg = o.avg_iou().ok_or("no match")?;
    ensure!((avg - 0.68).abs() < 1e-12, "matched IoU {avg}");
    ensure!(
        o.counts() == ConfusionCounts::new(1, 0, 0, 0),
        "counts {:?}",
        o.counts()
    );
    Ok(format!(
        "sens {sens:.1}% spec {spec:.1}%; detector sens {det_sens}% IoU {iou_pct}; {} notes",
        notes + det_notes.len()
    ))
}

/// The whole CLI pipeline into `dir`; returns the two experiment summaries.
fn pipeline(dir: &Path, seed: &str) -> Result<(Value, Value), String> {
    run_ok(&[
        "synth",
        "--out",
        s(dir),
        "--seed",
        seed,
        "--drift-site",
        "2",
    ])?;
    let manifest = dir.join("manifest.csv");
    let cfg = dir.join("trailcam.toml");
    let out = dir.join("r");
    let m = s(&manifest);
    let with = |args: &[&str]| {
        let mut a = args.to_vec();
        a.extend(["--config", s(&cfg), "--out", s(&out)]);
        a.iter().map(|x| x.to_string()).collect::<Vec<_>>()
    };
    let call = |args: &[&str]| {
        let a = with(args);
        run_ok(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    call(&["ingest", m])?;
    let crop = call(&["crop", m])?;
    let kept = crop.as_object().ok_or("crop summary")?;
    ensure!(
        kept.values().all(|v| v["passes"] == true),
        "retention {crop}"
    );
    call(&["sample", m])?;
    call(&["mean", m, "--date", "2019-07-01"])?;
    let a = with(&["drift-check", m, "--date", "2019-07-02"]);
    let o = run(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ensure!(
        o.status.code() == Some(3),
        "drift-check exited {:?}",
        o.status.code()
    );
    call(&["rti-matrix"])?;
    call(&["predict", m])?;
    let preds = out.join("predictions.csv");
    call(&["eval-classify", m, s(&preds)])?;
    call(&["twin", m, "--image", "site1_20190701_000"])?;
    let tp = call(&["tp-exp", m])?;
    let tn = call(&["tn-exp", m])?;
    Ok((tp, tn))
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (tp, tn) = pipeline(dir.path(), "11")?;
    let elapsed = start.elapsed();
    let (tr, nr) = (f(&tp, "success_rate")?, f(&tn, "success_rate")?);
    ensure!(tr == 1.0 && nr == 1.0, "success rates {tr} and {nr}");
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "TP n={} rate {tr}; TN n={} rate {nr}; {elapsed:.1?}",
        tp["n"], tn["n"]
    ))
}

fn reports(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).expect("readable dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json" || x == "csv") {
                let rel = p.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}

fn determinism() -> Check {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    pipeline(a.path(), "23")?;
    pipeline(b.path(), "23")?;
    let (ra, rb) = (reports(a.path()), reports(b.path()));
    ensure!(ra.keys().eq(rb.keys()), "different report sets");
    let differing: Vec<_> = ra
        .iter()
        .filter(|(k, v)| rb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure!(differing.is_empty(), "differing: {differing:?}");
    Ok(format!("{} JSON/CSV files identical", ra.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("tp experiment replay", tp_replay),
        ("tn experiment replay", tn_replay),
        ("normal approximation checks", variance_checks),
        ("windowed matrix geometry", geometry),
        ("rti identity and symmetry", rti_identity_symmetry),
        ("synthetic drift scenario", drift_scenario),
        ("student t cdf", student_t),
        ("metric replays", metric_replays),
        ("end-to-end run", end_to_end),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed();
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail} ({t:.2?})"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why} ({t:.2?})");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
