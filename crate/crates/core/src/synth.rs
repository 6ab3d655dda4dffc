//! Synthetic corpora and reference predictors.
//!
//! Scenes place agents at constant speed on a straight line or a circular
//! arc, optionally with a lane centerline along the same path. Two baseline
//! predictors are provided: constant velocity (exact on straight motion)
//! and constant turn rate (exact on arcs).
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded from the 64-bit
//! seed mixed with a FNV-1a hash of the spec name, with one stream per scene
//! index. Trigonometry goes through `libm` so generated files are identical
//! across platforms.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{
    AgentTrack, Lane, PredictionSet, Scene, SemanticCondition, SemanticMap, TrajPoint,
};

/// Longitudinal spacing between consecutive agents on the shared path.
pub const AGENT_SPACING_M: f64 = 8.0;
/// Lane extension beyond the first and last agent positions.
pub const LANE_MARGIN_M: f64 = 15.0;
/// Approximate spacing of lane centerline samples.
pub const LANE_STEP_M: f64 = 1.0;
/// Turn angles per step below this are treated as straight motion.
pub const STRAIGHT_TURN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(
        "scene {scene_id:?}: turn-rate estimation needs at least 3 history points, found {found}"
    )]
    HistoryTooShort { scene_id: String, found: usize },
    #[error("K must be >= 1")]
    ZeroSamples,
    #[error("noise deviation must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentCount {
    Fixed(usize),
    /// Inclusive range.
    Range(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathShape {
    Straight,
    Arc { radius_m: f64 },
}

/// Parameters of one family of synthetic scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Scene ids are `{name}-{index:04}`.
    pub name: String,
    pub n_scenes: usize,
    pub agents_per_scene: AgentCount,
    pub geometry: PathShape,
    pub speed_mps: f64,
    pub dt: f64,
    pub history: usize,
    pub future: usize,
    pub map_included: bool,
    /// Positional noise added to generated tracks.
    pub noise_sigma_m: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.name.is_empty() {
            return bad("name must be non-empty");
        }
        match self.agents_per_scene {
            AgentCount::Fixed(0) => return bad("agents_per_scene must be >= 1"),
            AgentCount::Range(lo, hi) if lo == 0 || lo > hi => {
                return bad("agents_per_scene range must satisfy 1 <= lo <= hi")
            }
            _ => {}
        }
        if let PathShape::Arc { radius_m } = self.geometry {
            if !(radius_m.is_finite() && radius_m > 0.0) {
                return bad("arc radius must be > 0");
            }
        }
        if !(self.speed_mps.is_finite() && self.speed_mps >= 0.0) {
            return bad("speed must be >= 0");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if self.history == 0 || self.future == 0 {
            return bad("history and future lengths must be >= 1");
        }
        if !(self.noise_sigma_m.is_finite() && self.noise_sigma_m >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        Ok(())
    }
}

/// FNV-1a, used to derive seeds and streams from identifiers.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Rigid placement of a local path frame.
#[derive(Debug, Clone, Copy)]
struct Frame {
    origin: TrajPoint,
    cos: f64,
    sin: f64,
}

impl Frame {
    fn place(&self, x: f64, y: f64) -> TrajPoint {
        TrajPoint::new(
            self.origin.x + self.cos * x - self.sin * y,
            self.origin.y + self.sin * x + self.cos * y,
        )
    }
}

/// Position at arc length `s` along the local path. Arcs start at the
/// origin heading +x and turn toward `side` (+1 left, -1 right).
fn local_path(shape: PathShape, side: f64, s: f64) -> (f64, f64) {
    match shape {
        PathShape::Straight => (s, 0.0),
        PathShape::Arc { radius_m } => {
            let theta = s / radius_m;
            (
                radius_m * libm::sin(theta),
                side * radius_m * (1.0 - libm::cos(theta)),
            )
        }
    }
}

/// Generates scene `index` of `spec`. A pure function of the spec and index.
pub fn gen_scene(spec: &SynthSpec, index: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(&spec.name));
    rng.set_stream(index as u64);

    let n_agents = match spec.agents_per_scene {
        AgentCount::Fixed(n) => n,
        AgentCount::Range(lo, hi) => rng.random_range(lo..=hi),
    };
    let angle = rng.random::<f64>() * TAU;
    let frame = Frame {
        origin: TrajPoint::new(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
        ),
        cos: libm::cos(angle),
        sin: libm::sin(angle),
    };
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let noise = (spec.noise_sigma_m > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma_m).expect("validated noise sigma"));

    let steps = spec.history + spec.future;
    let step_len = spec.speed_mps * spec.dt;
    let mut agents = Vec::with_capacity(n_agents);
    for j in 0..n_agents {
        let s0 = j as f64 * AGENT_SPACING_M;
        let mut points: Vec<TrajPoint> = (0..steps)
            .map(|i| {
                let (x, y) = local_path(spec.geometry, side, s0 + step_len * i as f64);
                frame.place(x, y)
            })
            .collect();
        if let Some(normal) = &noise {
            for p in &mut points {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
            }
        }
        let future = points.split_off(spec.history);
        agents.push(AgentTrack {
            agent_id: format!("agent-{j:02}"),
            history: points,
            future,
        });
    }

    let map = spec.map_included.then(|| {
        let start = -LANE_MARGIN_M;
        let end =
            (n_agents - 1) as f64 * AGENT_SPACING_M + step_len * (steps - 1) as f64 + LANE_MARGIN_M;
        let count = ((end - start) / LANE_STEP_M).ceil() as usize + 1;
        let step = (end - start) / (count - 1) as f64;
        let centerline = (0..count)
            .map(|i| {
                let (x, y) = local_path(spec.geometry, side, start + step * i as f64);
                frame.place(x, y)
            })
            .collect();
        SemanticMap {
            lanes: vec![Lane {
                lane_id: "lane-0".to_string(),
                centerline,
            }],
        }
    });

    Scene {
        scene_id: format!("{}-{index:04}", spec.name),
        dt: spec.dt,
        agents,
        map,
    }
}

/// Every scene of every spec, in spec order then index order.
pub fn gen_corpus(specs: &[SynthSpec]) -> Result<Vec<Scene>, SynthError> {
    for s in specs {
        s.validate()?;
    }
    Ok(specs
        .iter()
        .flat_map(|spec| (0..spec.n_scenes).map(move |i| (spec, i)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(spec, i)| gen_scene(spec, i))
        .collect())
}

/// Named corpus layouts available from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    StraightSparse,
    CurvedDense,
    /// Covers all eight (density, geometry) cells.
    MixedGrid,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::StraightSparse, Self::CurvedDense, Self::MixedGrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::StraightSparse => "straight_sparse",
            Self::CurvedDense => "curved_dense",
            Self::MixedGrid => "mixed_grid",
        }
    }

    pub fn specs(&self, seed: u64, dt: f64, history: usize, future: usize) -> Vec<SynthSpec> {
        let base = |name: String, n_scenes, agents, geometry| SynthSpec {
            name,
            n_scenes,
            agents_per_scene: agents,
            geometry,
            speed_mps: 10.0,
            dt,
            history,
            future,
            map_included: true,
            noise_sigma_m: 0.0,
            seed,
        };
        let arc = PathShape::Arc { radius_m: 50.0 };
        match self {
            Self::StraightSparse => vec![base(
                self.as_str().to_string(),
                24,
                AgentCount::Range(1, 3),
                PathShape::Straight,
            )],
            Self::CurvedDense => vec![base(
                self.as_str().to_string(),
                24,
                AgentCount::Range(9, 14),
                arc,
            )],
            Self::MixedGrid => {
                let mut out = Vec::new();
                for (label, count) in [("single", 1), ("few", 3), ("medium", 6), ("many", 12)] {
                    for (shape_label, shape) in [("straight", PathShape::Straight), ("curved", arc)]
                    {
                        out.push(base(
                            format!("mixed_grid-{label}-{shape_label}"),
                            6,
                            AgentCount::Fixed(count),
                            shape,
                        ));
                    }
                }
                out
            }
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

/// Motion state at the last observed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: TrajPoint,
    /// Radians, tangent direction at `position`.
    pub heading: f64,
    /// Arc length travelled per step.
    pub step_len: f64,
    /// Heading change per step, radians; zero for straight motion.
    pub turn_per_step: f64,
}

fn heading_of(a: &TrajPoint, b: &TrajPoint) -> f64 {
    libm::atan2(b.y - a.y, b.x - a.x)
}

/// Estimates position, tangent heading, speed and turn rate at the last
/// history point.
///
/// With at least three distinct history points the turn per step is the
/// mean signed angle between consecutive chords. A chord of a circle points
/// half a step behind the tangent at its end, so the heading is the last
/// chord direction advanced by half the turn and the step length is the arc
/// subtended by the mean chord. Both are exact for noiseless constant-speed
/// motion on a line or circle.
pub fn estimate_kinematics(history: &[TrajPoint]) -> Kinematics {
    let position = *history.last().expect("history has at least one point");
    let still = Kinematics {
        position,
        heading: 0.0,
        step_len: 0.0,
        turn_per_step: 0.0,
    };
    if history.len() < 2 {
        return still;
    }
    let chords: Vec<f64> = history.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let last = history.len() - 1;
    let last_heading = heading_of(&history[last - 1], &history[last]);
    let last_chord = chords[chords.len() - 1];
    if last_chord <= crate::scene::MIN_POINT_SEPARATION {
        return still;
    }
    let degenerate = chords
        .iter()
        .any(|&c| c <= crate::scene::MIN_POINT_SEPARATION);
    if history.len() < 3 || degenerate {
        return Kinematics {
            position,
            heading: last_heading,
            step_len: last_chord,
            turn_per_step: 0.0,
        };
    }

    let turns: Vec<f64> = history
        .windows(3)
        .map(|w| {
            let (ax, ay) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let (bx, by) = (w[2].x - w[1].x, w[2].y - w[1].y);
            libm::atan2(ax * by - ay * bx, ax * bx + ay * by)
        })
        .collect();
    let mut turn = turns.iter().sum::<f64>() / turns.len() as f64;
    if turn.abs() < STRAIGHT_TURN_EPS {
        turn = 0.0;
    }
    let chord = chords.iter().sum::<f64>() / chords.len() as f64;
    let half = turn / 2.0;
    let step_len = if turn == 0.0 {
        chord
    } else {
        chord * half / libm::sin(half)
    };
    Kinematics {
        position,
        heading: last_heading + half,
        step_len,
        turn_per_step: turn,
    }
}

fn roll_straight(k: &Kinematics, steps: usize) -> Vec<TrajPoint> {
    let (c, s) = (libm::cos(k.heading), libm::sin(k.heading));
    (1..=steps)
        .map(|i| {
            let d = k.step_len * i as f64;
            TrajPoint::new(k.position.x + d * c, k.position.y + d * s)
        })
        .collect()
}

fn roll_turning(k: &Kinematics, steps: usize) -> Vec<TrajPoint> {
    if k.turn_per_step == 0.0 {
        return roll_straight(k, steps);
    }
    let radius = k.step_len / k.turn_per_step;
    let (s0, c0) = (libm::sin(k.heading), libm::cos(k.heading));
    (1..=steps)
        .map(|i| {
            let h = k.heading + k.turn_per_step * i as f64;
            TrajPoint::new(
                k.position.x + radius * (libm::sin(h) - s0),
                k.position.y + radius * (c0 - libm::cos(h)),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceModel {
    ConstantVelocity,
    ConstantTurnRate,
}

impl ReferenceModel {
    pub fn model_id(&self) -> &'static str {
        match self {
            Self::ConstantVelocity => "cv",
            Self::ConstantTurnRate => "ctr",
        }
    }
}

/// Produces `k` samples per agent. Sample 1 is the noiseless rollout;
/// samples 2..k add i.i.d. Gaussian noise of deviation `noise_sigma_m` to
/// each coordinate. The noise draws depend only on (seed, scene_id), so both
/// models receive identical perturbations.
pub fn predict(
    model: ReferenceModel,
    scene: &Scene,
    k: usize,
    noise_sigma_m: f64,
    seed: u64,
    condition: SemanticCondition,
) -> Result<PredictionSet, SynthError> {
    if k == 0 {
        return Err(SynthError::ZeroSamples);
    }
    if !(noise_sigma_m.is_finite() && noise_sigma_m >= 0.0) {
        return Err(SynthError::InvalidNoise(noise_sigma_m));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(&scene.scene_id));
    let noise = (noise_sigma_m > 0.0).then(|| Normal::new(0.0, noise_sigma_m).expect("checked"));

    let mut per_agent = std::collections::BTreeMap::new();
    for agent in &scene.agents {
        if model == ReferenceModel::ConstantTurnRate && agent.history.len() < 3 {
            return Err(SynthError::HistoryTooShort {
                scene_id: scene.scene_id.clone(),
                found: agent.history.len(),
            });
        }
        let kin = estimate_kinematics(&agent.history);
        let steps = agent.future.len();
        let base = match model {
            ReferenceModel::ConstantVelocity => roll_straight(&kin, steps),
            ReferenceModel::ConstantTurnRate => roll_turning(&kin, steps),
        };
        let mut samples = Vec::with_capacity(k);
        samples.push(base.clone());
        for _ in 1..k {
            let mut s = base.clone();
            if let Some(normal) = &noise {
                for p in &mut s {
                    p.x += normal.sample(&mut rng);
                    p.y += normal.sample(&mut rng);
                }
            }
            samples.push(s);
        }
        per_agent.insert(agent.agent_id.clone(), samples);
    }

    Ok(PredictionSet {
        scene_id: scene.scene_id.clone(),
        model_id: model.model_id().to_string(),
        condition,
        per_agent,
    })
}

pub fn predict_cv(
    scene: &Scene,
    k: usize,
    noise_sigma_m: f64,
    seed: u64,
    condition: SemanticCondition,
) -> Result<PredictionSet, SynthError> {
    predict(
        ReferenceModel::ConstantVelocity,
        scene,
        k,
        noise_sigma_m,
        seed,
        condition,
    )
}

pub fn predict_ctr(
    scene: &Scene,
    k: usize,
    noise_sigma_m: f64,
    seed: u64,
    condition: SemanticCondition,
) -> Result<PredictionSet, SynthError> {
    predict(
        ReferenceModel::ConstantTurnRate,
        scene,
        k,
        noise_sigma_m,
        seed,
        condition,
    )
}
