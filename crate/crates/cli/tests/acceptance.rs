//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use predsafe::classify::{
    classify_geometry, density_for_count, heading_change_deg, partition, ClassifyConfig, Partition,
    SceneClass,
};
use predsafe::ingest::{parse_predictions, parse_scene, write_predictions, write_scene};
use predsafe::metrics::{displacement_errors, mie, stratified_report, MieDenominator};
use predsafe::synth::{gen_corpus, gen_scene, predict_cv, AgentCount, PathShape, SynthSpec};
use predsafe::{
    AgentTrack, DensityLevel, GeometryType, Grouping, Horizon, Lane, MetricConfig, MetricRecord,
    PredictionSet, Scene, SemanticCondition, SemanticMap, TrajPoint,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// MIE arithmetic

/// (label, ADE_o, ADE_w, FDE_o, FDE_w, MIE_A, MIE_F) as printed.
const PRINTED_ROWS: [(&str, f64, f64, f64, f64, f64, f64); 6] = [
    ("single", 2.2402, 2.0743, 5.1576, 4.6749, 0.1153, 0.2241),
    ("few", 2.1612, 2.0224, 4.7180, 4.2950, 0.0972, 0.2041),
    ("medium", 1.9751, 1.8587, 4.1527, 3.8803, 0.0853, 0.1386),
    ("many", 1.9809, 1.8181, 4.1722, 3.7113, 0.1206, 0.2401),
    ("straight", 1.9493, 1.8238, 4.1516, 3.8061, 0.0929, 0.1771),
    ("curved", 2.4259, 2.2624, 5.4093, 4.9716, 0.1087, 0.1963),
];

fn mie_table_reproduction() -> Outcome {
    let cfg = MetricConfig {
        mie_denominator: MieDenominator::WithMap,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for (label, ao, aw, fo, fw, ma, mf) in PRINTED_ROWS {
        for (what, o, w, printed) in [("MIE_A", ao, aw, ma), ("MIE_F", fo, fw, mf)] {
            let got = mie(o, w, &cfg).map_err(|e| e.to_string())?;
            let diff = (got - printed).abs();
            ensure(diff <= 0.001, || {
                format!("{label} {what}: {got:.5} vs printed {printed}")
            })?;
            worst = worst.max(diff);
        }
    }
    Ok(format!(
        "12/12 values within 0.001 (max deviation {worst:.5})"
    ))
}

fn canonical_form() -> Outcome {
    let got = mie(1.9754, 1.8558, &MetricConfig::default()).map_err(|e| e.to_string())?;
    ensure((got - 0.0851).abs() <= 1e-4, || {
        format!("got {got:.5}, want 0.0851")
    })?;
    ensure((got - 0.0807).abs() > 1e-3, || {
        format!("got {got:.5}, which unexpectedly matches the printed overall 0.0807")
    })?;
    Ok(format!("{got:.4}; differs from the printed overall 0.0807"))
}

// ---------------------------------------------------------------------------
// min-of-K

fn brute_min_of_k(samples: &[Vec<TrajPoint>], truth: &[TrajPoint]) -> (f64, f64) {
    let mut best_ade = f64::INFINITY;
    let mut best_fde = f64::INFINITY;
    for s in samples {
        let mut total = 0.0;
        for (p, q) in s.iter().zip(truth) {
            total += ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
        }
        best_ade = best_ade.min(total / truth.len() as f64);
        let (p, q) = (s[s.len() - 1], truth[truth.len() - 1]);
        best_fde = best_fde.min(((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt());
    }
    (best_ade, best_fde)
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

fn min_of_k_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d69_6e6b);
    let cfg = MetricConfig::default();
    let pt = |rng: &mut ChaCha8Rng| {
        TrajPoint::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        )
    };
    for case in 0..1000 {
        let k = rng.random_range(1..=5);
        let t = rng.random_range(1..=6);
        let truth: Vec<TrajPoint> = (0..t).map(|_| pt(&mut rng)).collect();
        let samples: Vec<Vec<TrajPoint>> = (0..k)
            .map(|_| (0..t).map(|_| pt(&mut rng)).collect())
            .collect();
        let (ade, fde) = displacement_errors(&samples, &truth, &cfg).map_err(|e| e.to_string())?;
        let (bade, bfde) = brute_min_of_k(&samples, &truth);
        ensure(rel_close(ade, bade) && rel_close(fde, bfde), || {
            format!("case {case} (K={k}, T={t}): ({ade}, {fde}) vs brute ({bade}, {bfde})")
        })?;
    }
    Ok("1000 instances with K <= 5, T <= 6 agree to 1e-12 relative".into())
}

// ---------------------------------------------------------------------------
// partition

fn random_corpus(rng: &mut ChaCha8Rng, index: usize) -> Vec<Scene> {
    let n_specs = rng.random_range(1..=3);
    let specs: Vec<SynthSpec> = (0..n_specs)
        .map(|j| {
            let geometry = if rng.random_bool(0.5) {
                PathShape::Straight
            } else {
                PathShape::Arc {
                    radius_m: rng.random_range(15.0..500.0),
                }
            };
            let lo = rng.random_range(1..=10);
            SynthSpec {
                name: format!("c{index}-{j}"),
                n_scenes: rng.random_range(1..=6),
                agents_per_scene: AgentCount::Range(lo, lo + rng.random_range(0..=6)),
                geometry,
                speed_mps: rng.random_range(0.5..20.0),
                dt: 0.5,
                history: 4,
                future: 6,
                map_included: rng.random_bool(0.6),
                noise_sigma_m: rng.random_range(0.0..0.3),
                seed: rng.random(),
            }
        })
        .collect();
    gen_corpus(&specs).expect("valid specs")
}

fn partition_laws() -> Outcome {
    let cfg = ClassifyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7061_7274);
    let mut total_scenes = 0;
    for c in 0..500 {
        let scenes = random_corpus(&mut rng, c);
        let p = partition(&scenes, &cfg).map_err(|e| e.to_string())?;
        ensure(p.cells.len() == 8, || {
            format!("corpus {c}: {} cells", p.cells.len())
        })?;
        let mut members: Vec<&String> = p.cells.values().flatten().collect();
        let listed = members.len();
        members.sort();
        members.dedup();
        ensure(members.len() == listed, || {
            format!("corpus {c}: a scene sits in two cells")
        })?;
        let mut ids: Vec<&String> = scenes.iter().map(|s| &s.scene_id).collect();
        ids.sort();
        ensure(members == ids, || {
            format!("corpus {c}: union of cells differs from the corpus")
        })?;
        total_scenes += scenes.len();
    }
    use DensityLevel::*;
    for (n, want) in [
        (1, Single),
        (2, Few),
        (3, Few),
        (4, Medium),
        (8, Medium),
        (9, Many),
    ] {
        let got = density_for_count(n, &cfg);
        ensure(got == want, || format!("count {n}: {got} vs {want}"))?;
    }
    Ok(format!(
        "500 corpora ({total_scenes} scenes) disjoint and exhaustive; bins at 1,2,3,4,8,9 correct"
    ))
}

// ---------------------------------------------------------------------------
// geometry

fn arc(radius: f64, length: f64, n: usize) -> Vec<TrajPoint> {
    (0..=n)
        .map(|i| {
            let th = length / radius * i as f64 / n as f64;
            TrajPoint::new(radius * th.sin(), radius * (1.0 - th.cos()))
        })
        .collect()
}

fn lane_scene(centerline: Vec<TrajPoint>, anchor: TrajPoint) -> Scene {
    Scene {
        scene_id: "g".into(),
        dt: 0.5,
        agents: vec![AgentTrack {
            agent_id: "a".into(),
            history: vec![anchor; 4],
            future: vec![anchor; 6],
        }],
        map: Some(SemanticMap {
            lanes: vec![Lane {
                lane_id: "l".into(),
                centerline,
            }],
        }),
    }
}

fn geometry_oracle() -> Outcome {
    let expected = 34.377;
    let curve = arc(50.0, 30.0, 6000);
    let deg = heading_change_deg(&curve, 30.0).map_err(|e| e.to_string())?;
    ensure((deg - expected).abs() <= 0.01, || format!("arc: {deg} deg"))?;

    let cfg = ClassifyConfig {
        curvature_window_m: 30.0,
        ..Default::default()
    };
    let (tau, deg) = classify_geometry(&lane_scene(curve.clone(), curve[3000]), &cfg);
    ensure(
        tau == GeometryType::Curved && (deg - expected).abs() <= 0.01,
        || format!("arc lane classified {tau} at {deg} deg"),
    )?;
    let (tau, _) = classify_geometry(
        &lane_scene(curve.clone(), curve[3000]),
        &ClassifyConfig::default(),
    );
    ensure(tau == GeometryType::Curved, || {
        format!("default window classified {tau}")
    })?;

    let line: Vec<TrajPoint> = (0..31)
        .map(|i| TrajPoint::new(3.0 * i as f64, 1.5 * i as f64))
        .collect();
    let deg0 = heading_change_deg(&line, 30.0).map_err(|e| e.to_string())?;
    ensure(deg0.abs() <= 1e-9, || format!("collinear: {deg0} deg"))?;
    let (tau, _) = classify_geometry(
        &lane_scene(line, TrajPoint::new(45.0, 22.5)),
        &ClassifyConfig::default(),
    );
    ensure(tau == GeometryType::Straight, || {
        format!("collinear lane classified {tau}")
    })?;
    Ok(format!(
        "R=50 arc over 30 m: {deg:.4} deg, curved; collinear: {deg0:e} deg, straight"
    ))
}

// ---------------------------------------------------------------------------
// constant-velocity closed form

fn cv_closed_form() -> Outcome {
    let (r, v, t) = (50.0f64, 10.0f64, 3.0f64);
    let th = v * t / r;
    let closed = (r * th.sin() - v * t).hypot(r * (1.0 - th.cos()));
    ensure((closed - 8.9104).abs() < 5e-5, || {
        format!("closed form {closed}")
    })?;

    let spec = SynthSpec {
        name: "cv".into(),
        n_scenes: 4,
        agents_per_scene: AgentCount::Fixed(1),
        geometry: PathShape::Arc { radius_m: r },
        speed_mps: v,
        dt: 0.5,
        history: 4,
        future: 6,
        map_included: false,
        noise_sigma_m: 0.0,
        seed: 11,
    };
    let cfg = MetricConfig::default();
    let mut worst = 0.0f64;
    for i in 0..spec.n_scenes {
        let scene = gen_scene(&spec, i);
        let p = predict_cv(&scene, 1, 0.0, 0, SemanticCondition::WithoutMap)
            .map_err(|e| e.to_string())?;
        let agent = &scene.agents[0];
        let (_, fde) = displacement_errors(&p.per_agent[&agent.agent_id], &agent.future, &cfg)
            .map_err(|e| e.to_string())?;
        worst = worst.max((fde - closed).abs());
    }
    ensure(worst <= 1e-6, || {
        format!("max |FDE - {closed:.9}| = {worst:e}")
    })?;
    Ok(format!(
        "FDE {closed:.6} m (closed form), max deviation {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// end to end through the binary

fn predsafe(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_predsafe"))
        .args(args)
        .env_remove("PREDSAFE_CONFIG")
        .output()
        .map_err(|e| format!("spawning predsafe: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "predsafe {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn synth_mixed_grid(dir: &Path) -> Result<PathBuf, String> {
    let data = dir.join("data");
    predsafe(&[
        "synth",
        "--preset",
        "mixed_grid",
        "--seed",
        "7",
        "--out",
        s(&data),
    ])?;
    Ok(data)
}

fn evaluate(data: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    predsafe(&[
        "evaluate",
        "--scenes",
        s(data),
        "--preds-with",
        s(&data.join("with_map")),
        "--preds-without",
        s(&data.join("without_map")),
        "--out",
        s(out),
        "--jobs",
        jobs,
        "--format",
        "csv",
    ])
    .map(|_| ())
}

fn read_csv<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    csv::Reader::from_path(path)
        .and_then(|mut r| r.deserialize().collect())
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(serde::Deserialize)]
struct ClassRow {
    scene_id: String,
    agent_count: usize,
    rho: DensityLevel,
    tau: GeometryType,
    heading_change_deg: f64,
}

fn qualitative_finding(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let data = synth_mixed_grid(tmp)?;
    let out = tmp.join("qualitative");
    evaluate(&data, &out, "4")?;

    let classes: Vec<ClassRow> = read_csv(&out.join("classification.csv"))?;
    let records: Vec<MetricRecord> = read_csv(&out.join("metrics.csv"))?;
    let partition = Partition::from_classes(
        classes
            .into_iter()
            .map(|c| SceneClass {
                scene_id: c.scene_id,
                agent_count: c.agent_count,
                rho: c.rho,
                tau: c.tau,
                heading_change_deg: c.heading_change_deg,
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let rows = stratified_report(
        &partition,
        &records,
        Grouping::Full,
        &MetricConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(rows.len() == 8, || format!("{} full rows", rows.len()))?;

    let table = std::fs::read_to_string(out.join("report_full.csv")).map_err(|e| e.to_string())?;
    ensure(table.lines().count() == 9, || {
        "report_full.csv should have 8 data rows".into()
    })?;

    let (mut min_curved, mut max_straight) = (f64::INFINITY, 0.0f64);
    for r in &rows {
        let m = r.metrics.ok_or_else(|| format!("{} is empty", r.group))?;
        let (a, f) = (
            m.mie_a.ok_or_else(|| format!("{}: no MIE_A", r.group))?,
            m.mie_f.ok_or_else(|| format!("{}: no MIE_F", r.group))?,
        );
        match r.group.tau {
            Some(GeometryType::Curved) => {
                ensure(a > 0.0 && f > 0.0, || {
                    format!("{}: MIE_A {a}, MIE_F {f}", r.group)
                })?;
                min_curved = min_curved.min(a.min(f));
            }
            _ => {
                ensure(a.abs() < 1e-6 && f.abs() < 1e-6, || {
                    format!("{}: MIE_A {a:e}, MIE_F {f:e}", r.group)
                })?;
                max_straight = max_straight.max(a.abs().max(f.abs()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "curved MIE >= {min_curved:.4}, straight |MIE| <= {max_straight:.1e}, {secs:.1} s end to end"
    ))
}

fn tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism(tmp: &Path) -> Outcome {
    let data = tmp.join("data");
    if !data.exists() {
        synth_mixed_grid(tmp)?;
    }
    let mut runs = Vec::new();
    for (i, jobs) in ["1", "4", "16", "1"].into_iter().enumerate() {
        let out = tmp.join(format!("det-{i}"));
        evaluate(&data, &out, jobs)?;
        runs.push((jobs, tree(&out)?));
    }
    let (_, first) = &runs[0];
    ensure(first.len() > 5, || {
        format!("only {} files written", first.len())
    })?;
    for (jobs, files) in &runs[1..] {
        ensure(files == first, || {
            let differing: Vec<_> = first
                .iter()
                .filter(|(k, v)| files.get(*k) != Some(v))
                .map(|(k, _)| k.display().to_string())
                .collect();
            format!("--jobs {jobs} differs in {differing:?}")
        })?;
    }

    let again = tmp.join("synth-again");
    predsafe(&[
        "synth",
        "--preset",
        "mixed_grid",
        "--seed",
        "7",
        "--out",
        s(&again),
    ])?;
    ensure(tree(&again)? == tree(&data)?, || {
        "synth output differs between runs".into()
    })?;
    Ok(format!(
        "{} files byte-identical across --jobs 1/4/16 and a rerun",
        first.len()
    ))
}

// ---------------------------------------------------------------------------
// round trip

fn any_coord(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-1e4..1e4),
        1 => rng.random_range(-1_000_000i64..1_000_000) as f64 / 1e4,
        2 => loop {
            let x = f64::from_bits(rng.random());
            if x.is_finite() {
                break x;
            }
        },
        _ => [0.0, -0.0, 1e-300, 5e-324, f64::MAX, f64::MIN_POSITIVE][rng.random_range(0..6)],
    }
}

fn any_id(rng: &mut ChaCha8Rng, prefix: &str) -> String {
    const CHARS: &[char] = &[
        'a',
        'Z',
        '0',
        '-',
        '_',
        ' ',
        '"',
        '\\',
        '/',
        'é',
        '\u{1F697}',
        '\t',
    ];
    let tail: String = (0..rng.random_range(0..8))
        .map(|_| CHARS[rng.random_range(0..CHARS.len())])
        .collect();
    format!("{prefix}{tail}")
}

fn random_scene(rng: &mut ChaCha8Rng, h: Horizon) -> Scene {
    let pts = |rng: &mut ChaCha8Rng, n: usize| -> Vec<TrajPoint> {
        (0..n)
            .map(|_| TrajPoint::new(any_coord(rng), any_coord(rng)))
            .collect()
    };
    let agents = (0..rng.random_range(1..6))
        .map(|i| AgentTrack {
            agent_id: format!("{}#{i}", any_id(rng, "a")),
            history: pts(rng, h.history),
            future: pts(rng, h.future),
        })
        .collect();
    let map = rng.random_bool(0.7).then(|| SemanticMap {
        lanes: (0..rng.random_range(0..4))
            .map(|i| {
                let mut p =
                    TrajPoint::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4));
                let mut centerline = vec![p];
                for _ in 0..rng.random_range(1..10) {
                    p = TrajPoint::new(
                        p.x + rng.random_range(0.01..5.0),
                        p.y + rng.random_range(-5.0..5.0),
                    );
                    centerline.push(p);
                }
                Lane {
                    lane_id: format!("{}#{i}", any_id(rng, "l")),
                    centerline,
                }
            })
            .collect(),
    });
    Scene {
        scene_id: any_id(rng, "s"),
        dt: rng.random_range(0.01..2.0),
        agents,
        map,
    }
}

fn random_preds(rng: &mut ChaCha8Rng) -> PredictionSet {
    let (k, t) = (rng.random_range(1..=6), rng.random_range(1..=8));
    let per_agent = (0..rng.random_range(0..6))
        .map(|i| {
            let samples = (0..k)
                .map(|_| {
                    (0..t)
                        .map(|_| TrajPoint::new(any_coord(rng), any_coord(rng)))
                        .collect()
                })
                .collect();
            (format!("{}#{i}", any_id(rng, "a")), samples)
        })
        .collect();
    PredictionSet {
        scene_id: any_id(rng, "s"),
        model_id: any_id(rng, "m"),
        condition: if rng.random_bool(0.5) {
            SemanticCondition::WithMap
        } else {
            SemanticCondition::WithoutMap
        },
        per_agent,
    }
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7274);
    for i in 0..1000 {
        let h = Horizon {
            history: rng.random_range(1..=8),
            future: rng.random_range(1..=12),
        };
        let scene = random_scene(&mut rng, h);
        let back = parse_scene(&write_scene(&scene), &h).map_err(|e| format!("scene {i}: {e}"))?;
        ensure(back == scene, || {
            format!("scene {i} changed after a round trip")
        })?;

        let preds = random_preds(&mut rng);
        let back =
            parse_predictions(&write_predictions(&preds)).map_err(|e| format!("preds {i}: {e}"))?;
        ensure(back == preds, || {
            format!("prediction set {i} changed after a round trip")
        })?;
    }
    Ok("1000 scenes and 1000 prediction sets survive write then parse unchanged".into())
}

// ---------------------------------------------------------------------------

fn report(name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();

    let mut results: Vec<(&str, Outcome)> = vec![
        ("mie-table-reproduction", mie_table_reproduction()),
        ("mie-canonical-form", canonical_form()),
    ];
    let substitutes: Vec<(&str, Outcome)> = vec![
        ("min-of-k-oracle", min_of_k_oracle()),
        ("partition-laws", partition_laws()),
        ("geometry-oracle", geometry_oracle()),
        ("cv-closed-form", cv_closed_form()),
        ("qualitative-finding", qualitative_finding(tmp.path())),
        ("determinism", determinism(tmp.path())),
        ("round-trip", round_trip()),
    ];
    let failed: Vec<&str> = substitutes
        .iter()
        .filter(|(_, o)| o.is_err())
        .map(|(n, _)| *n)
        .collect();
    results.push((
        "absolute-values-substituted",
        if failed.is_empty() {
            Ok(
                "dataset-scale ADE/FDE not reproduced; all substitute property suites below pass"
                    .into(),
            )
        } else {
            Err(format!("substitute suites failing: {failed:?}"))
        },
    ));
    results.extend(substitutes);

    let mut ok = true;
    for (name, outcome) in &results {
        ok &= report(name, outcome);
    }
    let passed = results.iter().filter(|(_, o)| o.is_ok()).count();
    println!(
        "{passed}/{} acceptance criteria passed in {:.1} s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !ok {
        std::process::exit(1);
    }
}
