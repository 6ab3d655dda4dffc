//! Domain types shared across the harness.
//!
//! A [`Scene`] holds agent tracks (observed history plus ground-truth future)
//! and an optional [`SemanticMap`]. A [`PredictionSet`] holds one model's K
//! sampled futures per agent for one scene, evaluated under one
//! [`SemanticCondition`]. Scenes are partitioned into strata keyed by
//! [`DensityLevel`] and [`GeometryType`]; the semantic condition is an
//! evaluation axis, so every scene is evaluated under both conditions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Observed history length in timesteps.
pub const DEFAULT_HISTORY: usize = 4;
/// Predicted future length in timesteps.
pub const DEFAULT_FUTURE: usize = 6;
/// Seconds per timestep.
pub const DEFAULT_DT: f64 = 0.5;
/// Number of sampled futures per agent.
pub const DEFAULT_K: usize = 20;

/// Minimum separation between consecutive lane centerline points, meters.
pub const MIN_POINT_SEPARATION: f64 = 1e-9;

/// A planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
}

impl TrajPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &TrajPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for TrajPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

// Points travel as two-element arrays `[x, y]`.
impl Serialize for TrajPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TrajPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PointVisitor;

        impl<'de> Visitor<'de> for PointVisitor {
            type Value = TrajPoint;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a two-element [x, y] array of finite numbers")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<TrajPoint, A::Error> {
                let x: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let y: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                let p = TrajPoint { x, y };
                if !p.is_finite() {
                    return Err(de::Error::custom("non-finite coordinate"));
                }
                Ok(p)
            }
        }

        deserializer.deserialize_seq(PointVisitor)
    }
}

/// One agent's observed history and ground-truth future.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    pub history: Vec<TrajPoint>,
    pub future: Vec<TrajPoint>,
}

impl AgentTrack {
    pub fn last_observed(&self) -> Option<&TrajPoint> {
        self.history.last()
    }

    /// History followed by future, as a single polyline.
    pub fn full_path(&self) -> Vec<TrajPoint> {
        self.history
            .iter()
            .chain(self.future.iter())
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub lane_id: String,
    pub centerline: Vec<TrajPoint>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticMap {
    pub lanes: Vec<Lane>,
}

/// One evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub dt: f64,
    pub agents: Vec<AgentTrack>,
    pub map: Option<SemanticMap>,
}

impl Scene {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }

    /// Future length shared by all agents, taken from the first agent.
    pub fn future_len(&self) -> Option<usize> {
        self.agents.first().map(|a| a.future.len())
    }
}

/// History and future lengths every scene must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub history: usize,
    pub future: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Self {
            history: DEFAULT_HISTORY,
            future: DEFAULT_FUTURE,
        }
    }
}

/// Whether the model was given the semantic map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticCondition {
    WithMap,
    WithoutMap,
}

impl SemanticCondition {
    pub const ALL: [SemanticCondition; 2] = [Self::WithMap, Self::WithoutMap];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WithMap => "with_map",
            Self::WithoutMap => "without_map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityLevel {
    Single,
    Few,
    Medium,
    Many,
}

impl DensityLevel {
    pub const ALL: [DensityLevel; 4] = [Self::Single, Self::Few, Self::Medium, Self::Many];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Few => "few",
            Self::Medium => "medium",
            Self::Many => "many",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryType {
    Straight,
    Curved,
}

impl GeometryType {
    pub const ALL: [GeometryType; 2] = [Self::Straight, Self::Curved];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Curved => "curved",
        }
    }
}

/// Error returned when parsing one of the stratum enums from text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} value {value:?}")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! impl_enum_text {
    ($ty:ty, $kind:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty>::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| UnknownVariant {
                        kind: $kind,
                        value: s.to_string(),
                    })
            }
        }
    };
}

impl_enum_text!(SemanticCondition, "condition");
impl_enum_text!(DensityLevel, "density level");
impl_enum_text!(GeometryType, "geometry type");

/// Index of one scenario subset. Ordered by condition, then density, then
/// geometry, each in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub sigma: SemanticCondition,
    pub rho: DensityLevel,
    pub tau: GeometryType,
}

impl StratumKey {
    /// All sixteen combinations in sort order.
    pub fn all() -> impl Iterator<Item = StratumKey> {
        SemanticCondition::ALL.into_iter().flat_map(|sigma| {
            DensityLevel::ALL.into_iter().flat_map(move |rho| {
                GeometryType::ALL
                    .into_iter()
                    .map(move |tau| StratumKey { sigma, rho, tau })
            })
        })
    }
}

/// Sampled futures for every predicted agent in one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scene_id: String,
    pub model_id: String,
    pub condition: SemanticCondition,
    /// agent_id -> K sampled trajectories of length T.
    pub per_agent: BTreeMap<String, Vec<Vec<TrajPoint>>>,
}

impl PredictionSet {
    /// Samples per agent; `None` when no agent was predicted.
    pub fn k(&self) -> Option<usize> {
        self.per_agent.values().next().map(Vec::len)
    }

    /// Trajectory length; `None` when no agent was predicted.
    pub fn horizon(&self) -> Option<usize> {
        self.per_agent
            .values()
            .next()
            .and_then(|samples| samples.first())
            .map(Vec::len)
    }
}

/// ADE/FDE of one agent under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scene_id: String,
    pub agent_id: String,
    pub condition: SemanticCondition,
    pub ade: f64,
    pub fde: f64,
}

/// Row key of a stratified report. `None` on an axis means the axis is
/// folded (aggregated over).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub rho: Option<DensityLevel>,
    pub tau: Option<GeometryType>,
}

impl GroupKey {
    pub const OVERALL: GroupKey = GroupKey {
        rho: None,
        tau: None,
    };

    pub fn contains(&self, rho: DensityLevel, tau: GeometryType) -> bool {
        self.rho.is_none_or(|r| r == rho) && self.tau.is_none_or(|t| t == tau)
    }

    pub fn label(&self) -> String {
        match (self.rho, self.tau) {
            (None, None) => "overall".to_string(),
            (Some(r), None) => r.to_string(),
            (None, Some(t)) => t.to_string(),
            (Some(r), Some(t)) => format!("{r}/{t}"),
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Errors of both conditions side by side plus the derived MIE values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumMetrics {
    pub ade_o: f64,
    pub ade_w: f64,
    pub fde_o: f64,
    pub fde_w: f64,
    /// `None` when the MIE denominator vanishes.
    pub mie_a: Option<f64>,
    pub mie_f: Option<f64>,
}

/// One row of a stratified report.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumReport {
    pub group: GroupKey,
    /// Agents in the stratum's scenes.
    pub sample_size: usize,
    /// Absent when the stratum is empty.
    pub metrics: Option<StratumMetrics>,
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn check_points(field: &str, points: &[TrajPoint], out: &mut Vec<Violation>) {
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            out.push(Violation::new(
                format!("{field}[{i}]"),
                "coordinate must be finite",
            ));
        }
    }
}

/// Checks every scene invariant against the expected horizon. An empty
/// result means the scene is well formed.
pub fn validate_scene(scene: &Scene, horizon: &Horizon) -> Vec<Violation> {
    let mut out = Vec::new();

    if scene.scene_id.is_empty() {
        out.push(Violation::new("scene_id", "must be non-empty"));
    }
    if !(scene.dt.is_finite() && scene.dt > 0.0) {
        out.push(Violation::new("dt", "must be finite and > 0"));
    }
    if scene.agents.is_empty() {
        out.push(Violation::new("agents", "at least one agent required"));
    }

    let mut seen = HashSet::new();
    for (i, agent) in scene.agents.iter().enumerate() {
        let base = format!("agents[{i}]");
        if agent.agent_id.is_empty() {
            out.push(Violation::new(
                format!("{base}.agent_id"),
                "must be non-empty",
            ));
        } else if !seen.insert(agent.agent_id.as_str()) {
            out.push(Violation::new(
                format!("{base}.agent_id"),
                format!("agent_id {:?} must be unique", agent.agent_id),
            ));
        }
        if agent.history.len() != horizon.history {
            out.push(Violation::new(
                format!("{base}.history"),
                format!(
                    "history length {} != expected {}",
                    agent.history.len(),
                    horizon.history
                ),
            ));
        }
        if agent.future.len() != horizon.future {
            out.push(Violation::new(
                format!("{base}.future"),
                format!(
                    "future length {} != expected {}",
                    agent.future.len(),
                    horizon.future
                ),
            ));
        }
        check_points(&format!("{base}.history"), &agent.history, &mut out);
        check_points(&format!("{base}.future"), &agent.future, &mut out);
    }

    if let Some(map) = &scene.map {
        let mut lane_ids = HashSet::new();
        for (i, lane) in map.lanes.iter().enumerate() {
            let base = format!("map.lanes[{i}]");
            if lane.lane_id.is_empty() {
                out.push(Violation::new(
                    format!("{base}.lane_id"),
                    "must be non-empty",
                ));
            } else if !lane_ids.insert(lane.lane_id.as_str()) {
                out.push(Violation::new(
                    format!("{base}.lane_id"),
                    format!("lane_id {:?} must be unique", lane.lane_id),
                ));
            }
            if lane.centerline.len() < 2 {
                out.push(Violation::new(
                    format!("{base}.centerline"),
                    "centerline needs at least 2 points",
                ));
            }
            check_points(&format!("{base}.centerline"), &lane.centerline, &mut out);
            for (j, w) in lane.centerline.windows(2).enumerate() {
                if w[0].distance(&w[1]) <= MIN_POINT_SEPARATION {
                    out.push(Violation::new(
                        format!("{base}.centerline[{}]", j + 1),
                        "consecutive centerline points must be distinct",
                    ));
                }
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: &str, h: usize, t: usize) -> AgentTrack {
        AgentTrack {
            agent_id: id.to_string(),
            history: (0..h).map(|i| TrajPoint::new(i as f64, 0.0)).collect(),
            future: (h..h + t).map(|i| TrajPoint::new(i as f64, 0.0)).collect(),
        }
    }

    fn scene(agents: Vec<AgentTrack>) -> Scene {
        Scene {
            scene_id: "s".into(),
            dt: 0.5,
            agents,
            map: None,
        }
    }

    #[test]
    fn well_formed_scene_has_no_violations() {
        let s = scene(vec![track("a1", 4, 6)]);
        assert!(validate_scene(&s, &Horizon::default()).is_empty());
    }

    #[test]
    fn short_history_is_named() {
        let s = scene(vec![track("a1", 3, 6)]);
        let v = validate_scene(&s, &Horizon::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "agents[0].history");
        assert!(v[0].rule.contains("history length"));
    }

    #[test]
    fn duplicate_agent_is_named() {
        let s = scene(vec![track("a1", 4, 6), track("a1", 4, 6)]);
        let v = validate_scene(&s, &Horizon::default());
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("unique"));
    }

    #[test]
    fn bad_dt_nan_and_lanes() {
        let mut s = scene(vec![track("a1", 4, 6)]);
        s.dt = 0.0;
        s.agents[0].future[2].y = f64::NAN;
        s.map = Some(SemanticMap {
            lanes: vec![Lane {
                lane_id: "l".into(),
                centerline: vec![TrajPoint::new(0.0, 0.0), TrajPoint::new(0.0, 0.0)],
            }],
        });
        let v = validate_scene(&s, &Horizon::default());
        let fields: Vec<_> = v.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(
            fields,
            ["dt", "agents[0].future[2]", "map.lanes[0].centerline[1]"]
        );
    }

    #[test]
    fn no_agents_is_a_violation() {
        let v = validate_scene(&scene(vec![]), &Horizon::default());
        assert_eq!(v[0].field, "agents");
    }

    #[test]
    fn stratum_keys_are_totally_ordered() {
        let keys: Vec<_> = StratumKey::all().collect();
        assert_eq!(keys.len(), 16);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(keys[0].sigma, SemanticCondition::WithMap);
        assert_eq!(keys[15].tau, GeometryType::Curved);
    }

    #[test]
    fn enum_text_round_trips() {
        for c in SemanticCondition::ALL {
            assert_eq!(c.as_str().parse::<SemanticCondition>().unwrap(), c);
        }
        assert!("medium".parse::<DensityLevel>().is_ok());
        assert!("bendy".parse::<GeometryType>().is_err());
    }

    #[test]
    fn group_labels() {
        let k = GroupKey {
            rho: Some(DensityLevel::Many),
            tau: Some(GeometryType::Curved),
        };
        assert_eq!(k.label(), "many/curved");
        assert_eq!(GroupKey::OVERALL.label(), "overall");
        assert!(GroupKey::OVERALL < k);
    }
}
