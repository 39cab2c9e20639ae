//! Acceptance suite: one PASS/FAIL line per criterion on stdout.
//!
//! Runs without the libtest harness so the lines are always visible.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;
use tvseg_core::backends::ScoredMaskCandidate;
use tvseg_core::config::{Overrides, RunConfig};
use tvseg_core::datasets::SynthSpec;
use tvseg_core::evalstats::{aggregate, paired_t_test, read_results_csv};
use tvseg_core::geom::{dice, nms, rle_decode, rle_encode, BinaryMask, BoxSet, ScoredBox};
use tvseg_core::pipeline::{run_benchmark, RunOptions};
use tvseg_core::segmenting::{restrict_to_top_k, select_mask, SelectionPolicy};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    let detail = format!("{detail}; {:.2} s (limit {} s)", took.as_secs_f64(), limit.as_secs());
    if took < limit {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_mask(rng: &mut StdRng, max_side: u32) -> BinaryMask {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let p: f64 = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    };
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p)).unwrap()
}

fn dice_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let a = random_mask(&mut rng, 64);
        let b = BinaryMask::from_fn(a.width(), a.height(), |_, _| rng.random_bool(0.4)).unwrap();
        let b = if i % 7 == 0 { a.clone() } else { b };
        // set-intersection reference over plain pixel lists
        let fa: std::collections::HashSet<(u32, u32)> = a.foreground_pixels().collect();
        let fb: std::collections::HashSet<(u32, u32)> = b.foreground_pixels().collect();
        let inter = fa.intersection(&fb).count() as u64;
        let denom = (fa.len() + fb.len()) as u64;
        let expected = if denom == 0 {
            1.0
        } else {
            (2 * inter) as f64 / denom as f64
        };
        let got = dice(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs());
        ensure!(worst <= 1e-12, "pair {i}: dice {got} vs reference {expected}");
    }
    within(
        start,
        Duration::from_secs(2),
        format!("500 pairs, max deviation {worst:e}"),
    )
}

fn ref_iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> f64 {
    let area = |r: (u32, u32, u32, u32)| u64::from(r.2 - r.0) * u64::from(r.3 - r.1);
    let iw = a.2.min(b.2).saturating_sub(a.0.max(b.0));
    let ih = a.3.min(b.3).saturating_sub(a.1.max(b.1));
    let inter = u64::from(iw) * u64::from(ih);
    inter as f64 / (area(a) + area(b) - inter) as f64
}

fn nms_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let thresholds = [0.0, 0.3, 0.5, 0.9, 1.0];
    let mut checked = 0;
    for set in 0..1000 {
        let n = rng.random_range(0..=10);
        let mut raw: Vec<((u32, u32, u32, u32), f64)> = Vec::new();
        for _ in 0..n {
            if !raw.is_empty() && rng.random_bool(0.15) {
                let j = rng.random_range(0..raw.len());
                raw.push(raw[j]);
                continue;
            }
            let x0 = rng.random_range(0..24);
            let y0 = rng.random_range(0..24);
            let c = (x0, y0, x0 + rng.random_range(1..9), y0 + rng.random_range(1..9));
            // coarse scores so ties are common
            let s = f64::from(rng.random_range(1..=4u32)) / 4.0;
            raw.push((c, s));
        }
        let mut set_in = BoxSet::new();
        for (c, s) in &raw {
            set_in.insert(ScoredBox::new(c.0, c.1, c.2, c.3, *s).unwrap());
        }
        // reference: dedupe, stable sort by (score desc, area desc), greedy keep
        let mut uniq: Vec<((u32, u32, u32, u32), f64)> = Vec::new();
        for r in &raw {
            if !uniq.iter().any(|u| u.0 == r.0 && u.1.to_bits() == r.1.to_bits()) {
                uniq.push(*r);
            }
        }
        let area = |c: &(u32, u32, u32, u32)| u64::from(c.2 - c.0) * u64::from(c.3 - c.1);
        uniq.sort_by(|a, b| b.1.total_cmp(&a.1).then(area(&b.0).cmp(&area(&a.0))));
        for &t in &thresholds {
            let mut kept: Vec<((u32, u32, u32, u32), f64)> = Vec::new();
            for u in &uniq {
                if kept.iter().all(|k| ref_iou(k.0, u.0) <= t) {
                    kept.push(*u);
                }
            }
            let got: Vec<((u32, u32, u32, u32), f64)> =
                nms(&set_in, t).iter().map(|b| (b.coords(), b.score())).collect();
            ensure!(got == kept, "set {set} threshold {t}: {got:?} vs reference {kept:?}");
            checked += 1;
        }
    }
    within(
        start,
        Duration::from_secs(2),
        format!("{checked} (set, threshold) cases identical"),
    )
}

fn rle_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    for i in 0..10_000 {
        let m = random_mask(&mut rng, 48);
        let back = rle_decode(&rle_encode(&m)).map_err(|e| format!("mask {i}: {e}"))?;
        ensure!(back == m, "mask {i}: decode(encode(m)) != m");
    }
    let (mut same, mut differ) = (0, 0);
    for i in 0..1000 {
        let a = random_mask(&mut rng, 32);
        let b = match i % 3 {
            // identical content built independently
            0 => BinaryMask::from_bools(a.width(), a.height(), &a.to_bools()).unwrap(),
            // one flipped pixel
            1 => {
                let mut b = a.clone();
                let (x, y) = (rng.random_range(0..a.width()), rng.random_range(0..a.height()));
                b.set(x, y, !a.get(x, y));
                b
            }
            _ => random_mask(&mut rng, 32),
        };
        let equal_codes = rle_encode(&a) == rle_encode(&b);
        ensure!(
            equal_codes == (a == b),
            "pair {i}: encodings equal {equal_codes}, masks equal {}",
            a == b
        );
        if a == b {
            same += 1
        } else {
            differ += 1
        }
    }
    within(
        start,
        Duration::from_secs(5),
        format!("10000 round-trips; 1000 pairs ({same} equal, {differ} different) encode uniquely"),
    )
}

fn rect_mask(rng: &mut StdRng, w: u32, h: u32) -> BinaryMask {
    let x0 = rng.random_range(0..w - 1);
    let y0 = rng.random_range(0..h - 1);
    let x1 = rng.random_range(x0 + 1..=w);
    let y1 = rng.random_range(y0 + 1..=h);
    BinaryMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y)).unwrap()
}

fn topk_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let ks = [1, 2, 3, 5, 10];
    let mut violations = 0;
    for _ in 0..200 {
        let gt = rect_mask(&mut rng, 32, 32).union(&rect_mask(&mut rng, 32, 32)).unwrap();
        let pool_size = rng.random_range(0..=12);
        let mut pool = Vec::new();
        for i in 0..pool_size {
            // several candidates may come from the same box
            let source = i / rng.random_range(1..=2);
            pool.push(ScoredMaskCandidate {
                mask: rect_mask(&mut rng, 32, 32),
                predicted_quality: rng.random(),
                source_index: Some(source),
                source_box: None,
            });
        }
        let mut prev = f64::NEG_INFINITY;
        for k in ks {
            let cands = restrict_to_top_k(&pool, k);
            let d = if cands.is_empty() {
                dice(&BinaryMask::new(32, 32).unwrap(), &gt).unwrap()
            } else {
                let i = select_mask(&cands, SelectionPolicy::OracleDice, Some(&gt)).map_err(|e| e.to_string())?;
                dice(&cands[i].mask, &gt).unwrap()
            };
            if d < prev {
                violations += 1;
            }
            prev = d;
        }
    }
    ensure!(violations == 0, "{violations} violations");
    within(
        start,
        Duration::from_secs(10),
        "200 pools, k in {1,2,3,5,10}, 0 violations".into(),
    )
}

fn perfect_backends(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = root.join("perfect");
    let cfg = setup(
        &dir,
        &SynthSpec {
            n: 50,
            seed: 50,
            ..Default::default()
        },
        "run.toml",
        &format!("{MOCK_BACKENDS}{ALL_METHODS}"),
    );
    let out = tvseg(&["run", "--config", cfg.to_str().unwrap()]);
    ensure!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows =
        read_results_csv(std::fs::File::open(dir.join("out/results.csv")).unwrap()).map_err(|e| e.to_string())?;
    ensure!(rows.len() == 200, "expected 200 rows, got {}", rows.len());
    if let Some(bad) = rows.iter().find(|r| r.dice != Some(1.0)) {
        return Err(format!("{} / {}: Dice {:?}", bad.method, bad.sample_id, bad.dice));
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/report.json")).unwrap()).unwrap();
    for m in report["methods"].as_array().unwrap() {
        let p = &m["pooled"];
        ensure!(
            p["mean"] == 1.0 && p["ci_low"] == 1.0 && p["ci_high"] == 1.0,
            "{}: pooled {p}",
            m["label"]
        );
    }
    within(
        start,
        Duration::from_secs(10),
        "4 methods x 50 samples, all Dice 1.0, CI width 0".into(),
    )
}

fn degradation(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = root.join("degrade");
    let spec = SynthSpec {
        n: 50,
        seed: 50,
        ..Default::default()
    };
    let mut means = Vec::new();
    let mut per_sigma: Vec<Vec<((String, String), f64)>> = Vec::new();
    for sigma in [0.0, 2.0, 4.0, 8.0] {
        let body = format!(
            r#"
[backends.chat]
endpoint = "mock:scripted-chat"
[backends.detector]
endpoint = "mock:oracle-detector"
[backends.segmenter]
endpoint = "mock:threshold-segmenter"
[mocks.scripted_chat]
script = "data/chat_script.json"
[mocks.oracle_detector]
jitter = {sigma:.1}
[[methods]]
kind = "tv_sam"
"#
        );
        let path = setup(&dir, &spec, &format!("sigma{sigma}.toml"), &body);
        let cfg = RunConfig::load(&path, Overrides::default()).map_err(|e| e.to_string())?;
        let mut prepared = cfg.prepare().map_err(|e| e.to_string())?;
        let opts = RunOptions {
            jobs: 4,
            prompt_cache: false,
        };
        let outcome = run_benchmark(&prepared.manifest, &cfg.methods, &mut prepared.pipeline, &opts)
            .map_err(|e| e.to_string())?;
        let values: Vec<((String, String), f64)> = outcome
            .results
            .iter()
            .map(|r| ((r.dataset.clone(), r.sample_id.clone()), r.dice.unwrap_or(0.0)))
            .collect();
        let dice: Vec<f64> = values.iter().map(|v| v.1).collect();
        means.push(aggregate(&dice).map_err(|e| e.to_string())?.mean);
        per_sigma.push(values);
    }
    ensure!(
        means.windows(2).all(|w| w[0] >= w[1]),
        "pooled means not non-increasing: {means:?}"
    );
    let t = paired_t_test(&per_sigma[0], &per_sigma[3]).map_err(|e| e.to_string())?;
    ensure!(t.p < 0.01, "sigma 0 vs 8: p = {}", t.p);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    within(
        start,
        Duration::from_secs(30),
        format!(
            "means over sigma 0/2/4/8 = [{}]; sigma 0 vs 8 t = {:.2}, p = {:.2e}",
            shown.join(", "),
            t.t,
            t.p
        ),
    )
}

fn close(got: f64, want: f64) -> bool {
    ((got - want) / want).abs() <= 1e-9
}

fn stats_oracle() -> Outcome {
    let start = Instant::now();
    // frozen from scipy.stats (t.ppf / ttest_rel)
    let cases: [(&[f64], f64, f64); 2] = [
        (&[0.2, 0.4, 0.6, 0.8], 0.08914794864782422, 0.9108520513521758),
        (
            &[0.91, 0.78, 0.85, 0.66, 0.97, 0.88, 0.72, 0.81, 0.94, 0.69],
            0.7442161371840925,
            0.8977838628159074,
        ),
    ];
    for (values, lo, hi) in cases {
        let a = aggregate(values).map_err(|e| e.to_string())?;
        ensure!(
            close(a.ci_low, lo) && close(a.ci_high, hi),
            "CI [{}, {}] vs [{lo}, {hi}]",
            a.ci_low,
            a.ci_high
        );
    }
    let keyed = |v: &[f64]| v.iter().enumerate().map(|(i, &x)| (i, x)).collect::<Vec<_>>();
    let diffs = [0.05, -0.02, 0.10, 0.03, 0.07];
    let t = paired_t_test(&keyed(&diffs), &keyed(&[0.0; 5])).map_err(|e| e.to_string())?;
    ensure!(
        close(t.t, 2.282941668133139) && close(t.p, 0.08451194577806809) && t.df == 4.0,
        "t-test on fixed diffs: {t:?}"
    );
    let a = [0.82, 0.75, 0.91, 0.64, 0.88, 0.79, 0.93, 0.70];
    let b = [0.78, 0.77, 0.85, 0.55, 0.86, 0.70, 0.90, 0.71];
    let t = paired_t_test(&keyed(&a), &keyed(&b)).map_err(|e| e.to_string())?;
    ensure!(
        close(t.t, 2.567091381115174) && close(t.p, 0.037165187462119095) && t.df == 7.0,
        "paired t-test: {t:?}"
    );

    let one = aggregate(&[0.42]).map_err(|e| e.to_string())?;
    ensure!(
        one.degenerate && one.ci_low == 0.42 && one.ci_high == 0.42,
        "n=1: {one:?}"
    );
    let shifted: Vec<f64> = a.iter().map(|x| x + 0.05).collect();
    let t = paired_t_test(&keyed(&shifted), &keyed(&a)).map_err(|e| e.to_string())?;
    ensure!(
        t.degenerate && t.t == f64::INFINITY && t.p == 0.0,
        "constant nonzero differences: {t:?}"
    );
    let t = paired_t_test(&keyed(&a), &keyed(&a)).map_err(|e| e.to_string())?;
    ensure!(t.t == 0.0 && t.p == 1.0, "identical arms: {t:?}");
    within(
        start,
        Duration::from_secs(2),
        "2 CIs, 2 t-tests within 1e-9; n=1, zero-variance, identical arms".into(),
    )
}

const REPORT_FILES: [&str; 3] = ["results.csv", "report.md", "report.json"];

fn loopback(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = root.join("loopback");
    let body = format!("{NOISY_BACKENDS}{ALL_METHODS}");
    let spec = SynthSpec {
        n: 20,
        shapes: 2,
        seed: 9,
        ..Default::default()
    };
    let local = setup(&dir, &spec, "local.toml", &body);
    let out = tvseg(&[
        "run",
        "--config",
        local.to_str().unwrap(),
        "--output",
        dir.join("local").to_str().unwrap(),
    ]);
    ensure!(
        out.status.success(),
        "in-process run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let server = Server::start(&local);
    let remote = setup(&dir, &spec, "remote.toml", &remote_body(&body, &server.url()));
    let out = tvseg(&[
        "run",
        "--config",
        remote.to_str().unwrap(),
        "--output",
        dir.join("remote").to_str().unwrap(),
    ]);
    let status = server.interrupt();
    ensure!(
        out.status.success(),
        "remote run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    ensure!(status.success(), "server exit {status:?}");
    for f in REPORT_FILES {
        let a = std::fs::read(dir.join("local").join(f)).unwrap();
        let b = std::fs::read(dir.join("remote").join(f)).unwrap();
        ensure!(a == b, "{f} differs between in-process and loopback runs");
    }
    within(
        start,
        Duration::from_secs(20),
        "results.csv, report.md, report.json byte-identical over the socket".into(),
    )
}

fn determinism(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = root.join("determinism");
    let spec = SynthSpec {
        n: 30,
        shapes: 2,
        seed: 13,
        ..Default::default()
    };
    let cfg = setup(
        &dir,
        &spec,
        "run.toml",
        &format!("{NOISY_BACKENDS}{ALL_METHODS}\n[sweep]\nks = [1, 2, 3, 5, 10]\n"),
    );
    let cfg = cfg.to_str().unwrap();
    let mut outputs: HashMap<&str, Vec<Vec<Vec<u8>>>> = HashMap::new();
    for (cmd, jobs, tag) in [
        ("run", "1", "run-1a"),
        ("run", "1", "run-1b"),
        ("run", "8", "run-8"),
        ("sweep", "1", "sweep-1a"),
        ("sweep", "1", "sweep-1b"),
        ("sweep", "8", "sweep-8"),
    ] {
        let out_dir = dir.join(tag);
        let out = tvseg(&[
            cmd,
            "--config",
            cfg,
            "--jobs",
            jobs,
            "--output",
            out_dir.to_str().unwrap(),
        ]);
        ensure!(
            out.status.success(),
            "{cmd} --jobs {jobs} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.entry(cmd).or_default().push(read(&out_dir, &REPORT_FILES));
    }
    for (cmd, runs) in &outputs {
        ensure!(
            runs.iter().all(|r| r == &runs[0]),
            "{cmd} outputs differ across repeats or job counts"
        );
    }
    within(
        start,
        Duration::from_secs(60),
        "run and sweep, 3 executions each (jobs 1, 1, 8), byte-identical".into(),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("dice oracle equivalence", Box::new(dice_oracle)),
        ("NMS oracle equivalence", Box::new(nms_oracle)),
        ("RLE round-trip and uniqueness", Box::new(rle_roundtrip)),
        ("TOP-k oracle monotonicity", Box::new(topk_monotonicity)),
        ("perfect-backend end-to-end", Box::new(|| perfect_backends(root))),
        ("degradation ordering", Box::new(|| degradation(root))),
        ("statistics oracle", Box::new(stats_oracle)),
        ("loopback equivalence", Box::new(|| loopback(root))),
        ("determinism across --jobs", Box::new(|| determinism(root))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
