use predsafe::classify::{partition, ClassifyConfig};
use predsafe::metrics::{evaluate_pairs, stratified_report, Grouping, MetricConfig};
use predsafe::synth::{
    gen_corpus, gen_scene, predict_ctr, predict_cv, AgentCount, PathShape, Preset, SynthSpec,
};
use predsafe::{GeometryType, SemanticCondition, TrajPoint};

fn spec(geometry: PathShape, agents: AgentCount, noise: f64) -> SynthSpec {
    SynthSpec {
        name: "oracle".into(),
        n_scenes: 8,
        agents_per_scene: agents,
        geometry,
        speed_mps: 10.0,
        dt: 0.5,
        history: 4,
        future: 6,
        map_included: true,
        noise_sigma_m: noise,
        seed: 2024,
    }
}

fn circumcenter(a: TrajPoint, b: TrajPoint, c: TrajPoint) -> TrajPoint {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let a2 = a.x * a.x + a.y * a.y;
    let b2 = b.x * b.x + b.y * b.y;
    let c2 = c.x * c.x + c.y * c.y;
    TrajPoint::new(
        (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
        (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
    )
}

#[test]
fn arc_points_lie_on_the_circle() {
    let sp = spec(
        PathShape::Arc { radius_m: 50.0 },
        AgentCount::Range(1, 6),
        0.0,
    );
    for i in 0..sp.n_scenes {
        let s = gen_scene(&sp, i);
        let lane = &s.map.as_ref().unwrap().lanes[0].centerline;
        let n = lane.len();
        let center = circumcenter(lane[0], lane[n / 2], lane[n - 1]);
        for a in &s.agents {
            for p in a.full_path() {
                assert!((p.distance(&center) - 50.0).abs() < 1e-9);
            }
        }
        for p in lane {
            assert!((p.distance(&center) - 50.0).abs() < 1e-9);
        }
    }
}

/// Closed form: the tangent extrapolation after time `t` on a circle of
/// radius `r` at speed `v`, measured against the true arc position.
fn chord_vs_arc(r: f64, v: f64, t: f64) -> f64 {
    let th = v * t / r;
    (r * th.sin() - v * t).hypot(r * (1.0 - th.cos()))
}

/// Brute-force simulation of the same quantity: march both the arc and the
/// tangent line in small increments.
fn simulate(r: f64, v: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let (mut ax, mut ay, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let omega = v / r;
    for _ in 0..steps {
        // exact integration of each small circular piece
        let next = heading + omega * h;
        ax += r * (next.sin() - heading.sin());
        ay += r * (heading.cos() - next.cos());
        heading = next;
    }
    let (lx, ly) = (v * t, 0.0);
    (ax - lx).hypot(ay - ly)
}

#[test]
fn cv_fde_on_arc_matches_closed_form() {
    let expected = chord_vs_arc(50.0, 10.0, 3.0);
    assert!((expected - 8.9104).abs() < 5e-5);
    assert!((simulate(50.0, 10.0, 3.0, 100_000) - expected).abs() < 1e-9);

    let sp = spec(PathShape::Arc { radius_m: 50.0 }, AgentCount::Fixed(1), 0.0);
    for i in 0..sp.n_scenes {
        let s = gen_scene(&sp, i);
        let p = predict_cv(&s, 1, 0.0, 0, SemanticCondition::WithoutMap).unwrap();
        let truth = &s.agents[0].future;
        let pred = &p.per_agent[&s.agents[0].agent_id][0];
        let fde = pred[5].distance(&truth[5]);
        assert!((fde - expected).abs() < 1e-6, "scene {i}: {fde}");
    }
}

#[test]
fn ctr_is_exact_on_noise_free_arcs() {
    let sp = spec(
        PathShape::Arc { radius_m: 50.0 },
        AgentCount::Range(1, 10),
        0.0,
    );
    for i in 0..sp.n_scenes {
        let s = gen_scene(&sp, i);
        let p = predict_ctr(&s, 3, 0.0, 9, SemanticCondition::WithMap).unwrap();
        for a in &s.agents {
            for sample in &p.per_agent[&a.agent_id] {
                for (q, t) in sample.iter().zip(&a.future) {
                    assert!(q.distance(t) < 1e-6);
                }
            }
        }
    }
}

#[test]
fn noisy_min_of_k_stays_within_bound_on_straight_scenes() {
    let sp = spec(PathShape::Straight, AgentCount::Range(1, 4), 0.0);
    let cfg = MetricConfig::default();
    for i in 0..sp.n_scenes {
        let s = gen_scene(&sp, i);
        let clean = predict_cv(&s, 1, 0.0, 5, SemanticCondition::WithoutMap).unwrap();
        let noisy = predict_cv(&s, 20, 0.1, 5, SemanticCondition::WithoutMap).unwrap();
        let clean = evaluate_pairs(&[(&s, &clean)], &cfg).unwrap();
        let noisy = evaluate_pairs(&[(&s, &noisy)], &cfg).unwrap();
        for (c, n) in clean.iter().zip(&noisy) {
            assert!(n.ade >= 0.0 && n.ade <= c.ade + 3.0 * 0.1);
        }
    }
}

#[test]
fn map_dependency_shows_on_curves_only() {
    let specs = Preset::MixedGrid.specs(17, 0.5, 4, 6);
    let scenes = gen_corpus(&specs).unwrap();
    let p = partition(&scenes, &ClassifyConfig::default()).unwrap();
    assert!(
        p.cells.values().all(|c| !c.is_empty()),
        "mixed grid covers every cell"
    );

    let with: Vec<_> = scenes
        .iter()
        .map(|s| predict_ctr(s, 20, 0.0, 1, SemanticCondition::WithMap).unwrap())
        .collect();
    let without: Vec<_> = scenes
        .iter()
        .map(|s| predict_cv(s, 20, 0.0, 1, SemanticCondition::WithoutMap).unwrap())
        .collect();
    let pairs: Vec<_> = scenes
        .iter()
        .zip(&with)
        .chain(scenes.iter().zip(&without))
        .collect();
    let cfg = MetricConfig::default();
    let records = evaluate_pairs(&pairs, &cfg).unwrap();
    let rows = stratified_report(&p, &records, Grouping::Full, &cfg).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let m = r.metrics.unwrap();
        let (a, f) = (m.mie_a.unwrap(), m.mie_f.unwrap());
        match r.group.tau.unwrap() {
            GeometryType::Curved => assert!(a > 0.0 && f > 0.0, "{}: {a} {f}", r.group),
            GeometryType::Straight => {
                assert!(a.abs() < 1e-6 && f.abs() < 1e-6, "{}: {a} {f}", r.group)
            }
        }
    }
}
