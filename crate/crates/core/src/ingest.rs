//! Line-delimited interchange format for scenes and prediction sets.
//!
//! Each line of a `*.scenes.jsonl` file is one scene document:
//!
//! ```text
//! {"scene_id": str, "dt": number,
//!  "agents": [{"agent_id": str, "history": [[x,y]×H], "future": [[x,y]×T]}],
//!  "map": {"lanes": [{"lane_id": str, "centerline": [[x,y]…]}]} | null}
//! ```
//!
//! Each line of a `*.preds.jsonl` file is one prediction document:
//!
//! ```text
//! {"scene_id": str, "model_id": str, "condition": "with_map"|"without_map",
//!  "predictions": [{"agent_id": str, "samples": [[[x,y]×T]×K]}]}
//! ```
//!
//! The schema is strict: unknown fields are rejected. An optional
//! `"format": 1` field is accepted on both document kinds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::scene::{
    validate_scene, AgentTrack, Horizon, Lane, PredictionSet, Scene, SemanticCondition,
    SemanticMap, TrajPoint, Violation, MIN_POINT_SEPARATION,
};

pub const FORMAT_VERSION: u64 = 1;
pub const SCENES_SUFFIX: &str = ".scenes.jsonl";
pub const PREDS_SUFFIX: &str = ".preds.jsonl";

/// Why a single document failed to parse.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("semantic error at {path}: {message}")]
    Semantic { path: String, message: String },
    #[error("non-uniform sample count at {path}: expected K={expected}, found {found}")]
    NonUniformK {
        path: String,
        expected: usize,
        found: usize,
    },
}

impl ParseError {
    /// Stable machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "syntax",
            Self::Schema { .. } => "schema",
            Self::Semantic { .. } => "semantic",
            Self::NonUniformK { .. } => "non_uniform_k",
        }
    }

    /// Field path inside the document, `$` for the root.
    pub fn path(&self) -> &str {
        match self {
            Self::Syntax { .. } => "$",
            Self::Schema { path, .. }
            | Self::Semantic { path, .. }
            | Self::NonUniformK { path, .. } => path,
        }
    }

    fn schema(path: &FieldPath, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }

    fn semantic(path: &FieldPath, message: impl Into<String>) -> Self {
        Self::Semantic {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

type Result<T, E = ParseError> = std::result::Result<T, E>;

#[derive(Clone)]
struct FieldPath(String);

impl FieldPath {
    fn root() -> Self {
        Self("$".to_string())
    }
    fn key(&self, k: &str) -> Self {
        Self(format!("{}.{k}", self.0))
    }
    fn index(&self, i: usize) -> Self {
        Self(format!("{}[{i}]", self.0))
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| ParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Checks key sets; returns the object on success.
fn expect_object<'a>(
    v: &'a Value,
    path: &FieldPath,
    required: &[&str],
    optional: &[&str],
) -> Result<&'a Map<String, Value>> {
    let obj = v.as_object().ok_or_else(|| {
        ParseError::schema(path, format!("expected object, found {}", type_name(v)))
    })?;
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(ParseError::schema(&path.key(key), "unknown field"));
        }
    }
    for key in required {
        if !obj.contains_key(*key) {
            return Err(ParseError::schema(&path.key(key), "missing field"));
        }
    }
    if let Some(fmt) = obj.get("format") {
        if fmt.as_u64() != Some(FORMAT_VERSION) {
            return Err(ParseError::schema(
                &path.key("format"),
                format!("unsupported format {fmt}, expected {FORMAT_VERSION}"),
            ));
        }
    }
    Ok(obj)
}

fn expect_array<'a>(v: &'a Value, path: &FieldPath) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| ParseError::schema(path, format!("expected array, found {}", type_name(v))))
}

fn expect_string(v: &Value, path: &FieldPath) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| ParseError::schema(path, format!("expected string, found {}", type_name(v))))
}

fn expect_id(v: &Value, path: &FieldPath) -> Result<String> {
    let s = expect_string(v, path)?;
    if s.is_empty() {
        return Err(ParseError::semantic(path, "identifier must be non-empty"));
    }
    Ok(s)
}

/// A JSON number. Strings spelling a non-finite float (`"NaN"`, `"inf"`)
/// are reported as semantic errors, every other non-number as a schema error.
fn expect_number(v: &Value, path: &FieldPath) -> Result<f64> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ParseError::semantic(path, "number must be finite")),
        Value::String(s) => match s.trim().parse::<f64>() {
            Ok(x) if !x.is_finite() => Err(ParseError::semantic(
                path,
                format!("non-finite value {s:?}"),
            )),
            _ => Err(ParseError::schema(path, "expected number, found string")),
        },
        other => Err(ParseError::schema(
            path,
            format!("expected number, found {}", type_name(other)),
        )),
    }
}

fn expect_point(v: &Value, path: &FieldPath) -> Result<TrajPoint> {
    let arr = expect_array(v, path)?;
    if arr.len() != 2 {
        return Err(ParseError::schema(
            path,
            format!("point must have 2 coordinates, found {}", arr.len()),
        ));
    }
    Ok(TrajPoint {
        x: expect_number(&arr[0], &path.index(0))?,
        y: expect_number(&arr[1], &path.index(1))?,
    })
}

fn expect_polyline(v: &Value, path: &FieldPath) -> Result<Vec<TrajPoint>> {
    expect_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, p)| expect_point(p, &path.index(i)))
        .collect()
}

fn expect_len(points: &[TrajPoint], expected: usize, name: &str, path: &FieldPath) -> Result<()> {
    if points.len() != expected {
        return Err(ParseError::schema(
            path,
            format!("{name} has {} points, expected {expected}", points.len()),
        ));
    }
    Ok(())
}

fn parse_agent(v: &Value, path: &FieldPath, horizon: &Horizon) -> Result<AgentTrack> {
    let obj = expect_object(v, path, &["agent_id", "history", "future"], &[])?;
    let agent_id = expect_id(&obj["agent_id"], &path.key("agent_id"))?;
    let hp = path.key("history");
    let history = expect_polyline(&obj["history"], &hp)?;
    expect_len(&history, horizon.history, "history", &hp)?;
    let fp = path.key("future");
    let future = expect_polyline(&obj["future"], &fp)?;
    expect_len(&future, horizon.future, "future", &fp)?;
    Ok(AgentTrack {
        agent_id,
        history,
        future,
    })
}

fn parse_map(v: &Value, path: &FieldPath) -> Result<Option<SemanticMap>> {
    if v.is_null() {
        return Ok(None);
    }
    let obj = expect_object(v, path, &["lanes"], &[])?;
    let lp = path.key("lanes");
    let mut lanes = Vec::new();
    let mut ids = HashSet::new();
    for (i, lv) in expect_array(&obj["lanes"], &lp)?.iter().enumerate() {
        let p = lp.index(i);
        let lobj = expect_object(lv, &p, &["lane_id", "centerline"], &[])?;
        let idp = p.key("lane_id");
        let lane_id = expect_id(&lobj["lane_id"], &idp)?;
        if !ids.insert(lane_id.clone()) {
            return Err(ParseError::semantic(
                &idp,
                format!("duplicate lane_id {lane_id:?}"),
            ));
        }
        let cp = p.key("centerline");
        let centerline = expect_polyline(&lobj["centerline"], &cp)?;
        if centerline.len() < 2 {
            return Err(ParseError::schema(
                &cp,
                format!(
                    "centerline has {} points, expected at least 2",
                    centerline.len()
                ),
            ));
        }
        if let Some(j) = centerline
            .windows(2)
            .position(|w| w[0].distance(&w[1]) <= MIN_POINT_SEPARATION)
        {
            return Err(ParseError::semantic(
                &cp.index(j + 1),
                "consecutive centerline points must be distinct",
            ));
        }
        lanes.push(Lane {
            lane_id,
            centerline,
        });
    }
    Ok(Some(SemanticMap { lanes }))
}

/// Parses one scene document. History and future lengths are checked
/// against `horizon`.
pub fn parse_scene(text: &str, horizon: &Horizon) -> Result<Scene> {
    let root = FieldPath::root();
    let value = parse_json(text)?;
    let obj = expect_object(
        &value,
        &root,
        &["scene_id", "dt", "agents", "map"],
        &["format"],
    )?;

    let scene_id = expect_id(&obj["scene_id"], &root.key("scene_id"))?;

    let dtp = root.key("dt");
    let dt = expect_number(&obj["dt"], &dtp)?;
    if dt <= 0.0 {
        return Err(ParseError::semantic(
            &dtp,
            format!("dt must be > 0, found {dt}"),
        ));
    }

    let ap = root.key("agents");
    let raw_agents = expect_array(&obj["agents"], &ap)?;
    if raw_agents.is_empty() {
        return Err(ParseError::schema(&ap, "at least one agent required"));
    }
    let mut agents = Vec::with_capacity(raw_agents.len());
    let mut ids = HashSet::new();
    for (i, av) in raw_agents.iter().enumerate() {
        let p = ap.index(i);
        let agent = parse_agent(av, &p, horizon)?;
        if !ids.insert(agent.agent_id.clone()) {
            return Err(ParseError::semantic(
                &p.key("agent_id"),
                format!("duplicate agent_id {:?}", agent.agent_id),
            ));
        }
        agents.push(agent);
    }

    let map = parse_map(&obj["map"], &root.key("map"))?;

    let scene = Scene {
        scene_id,
        dt,
        agents,
        map,
    };
    debug_assert!(validate_scene(&scene, horizon).is_empty());
    Ok(scene)
}

/// Parses one prediction document. K and T must be uniform within the
/// document; T is checked against a scene later by [`validate_pair`].
pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let root = FieldPath::root();
    let value = parse_json(text)?;
    let obj = expect_object(
        &value,
        &root,
        &["scene_id", "model_id", "condition", "predictions"],
        &["format"],
    )?;

    let scene_id = expect_id(&obj["scene_id"], &root.key("scene_id"))?;
    let model_id = expect_id(&obj["model_id"], &root.key("model_id"))?;
    let cp = root.key("condition");
    let condition = expect_string(&obj["condition"], &cp)?
        .parse::<SemanticCondition>()
        .map_err(|e| ParseError::schema(&cp, e.to_string()))?;

    let pp = root.key("predictions");
    let mut per_agent = BTreeMap::new();
    let mut expected_k: Option<usize> = None;
    let mut expected_t: Option<usize> = None;
    for (i, entry) in expect_array(&obj["predictions"], &pp)?.iter().enumerate() {
        let ep = pp.index(i);
        let eobj = expect_object(entry, &ep, &["agent_id", "samples"], &[])?;
        let idp = ep.key("agent_id");
        let agent_id = expect_id(&eobj["agent_id"], &idp)?;
        let sp = ep.key("samples");
        let raw_samples = expect_array(&eobj["samples"], &sp)?;
        if raw_samples.is_empty() {
            return Err(ParseError::schema(&sp, "at least one sample required"));
        }
        match expected_k {
            None => expected_k = Some(raw_samples.len()),
            Some(k) if k != raw_samples.len() => {
                return Err(ParseError::NonUniformK {
                    path: sp.to_string(),
                    expected: k,
                    found: raw_samples.len(),
                })
            }
            Some(_) => {}
        }
        let mut samples = Vec::with_capacity(raw_samples.len());
        for (k, sv) in raw_samples.iter().enumerate() {
            let kp = sp.index(k);
            let traj = expect_polyline(sv, &kp)?;
            if traj.is_empty() {
                return Err(ParseError::schema(&kp, "sampled trajectory is empty"));
            }
            match expected_t {
                None => expected_t = Some(traj.len()),
                Some(t) => expect_len(&traj, t, "sampled trajectory", &kp)?,
            }
            samples.push(traj);
        }
        if per_agent.insert(agent_id.clone(), samples).is_some() {
            return Err(ParseError::semantic(
                &idp,
                format!("duplicate agent_id {agent_id:?}"),
            ));
        }
    }

    Ok(PredictionSet {
        scene_id,
        model_id,
        condition,
        per_agent,
    })
}

/// Consistency between a scene and a prediction set for it.
pub fn validate_pair(scene: &Scene, preds: &PredictionSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if scene.scene_id != preds.scene_id {
        out.push(Violation::new(
            "scene_id",
            format!(
                "prediction scene_id {:?} does not match scene {:?}",
                preds.scene_id, scene.scene_id
            ),
        ));
    }
    for (agent_id, samples) in &preds.per_agent {
        let Some(agent) = scene.agent(agent_id) else {
            out.push(Violation::new(
                format!("predictions.{agent_id}"),
                format!("agent {agent_id:?} is not in scene {:?}", scene.scene_id),
            ));
            continue;
        };
        if let Some(bad) = samples.iter().find(|s| s.len() != agent.future.len()) {
            out.push(Violation::new(
                format!("predictions.{agent_id}"),
                format!(
                    "horizon mismatch: predicted T={} vs scene T={}",
                    bad.len(),
                    agent.future.len()
                ),
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct AgentDoc<'a> {
    agent_id: &'a str,
    history: &'a [TrajPoint],
    future: &'a [TrajPoint],
}

#[derive(Serialize)]
struct SceneDoc<'a> {
    scene_id: &'a str,
    dt: f64,
    agents: Vec<AgentDoc<'a>>,
    map: Option<&'a SemanticMap>,
}

#[derive(Serialize)]
struct PredEntryDoc<'a> {
    agent_id: &'a str,
    samples: &'a [Vec<TrajPoint>],
}

#[derive(Serialize)]
struct PredDoc<'a> {
    scene_id: &'a str,
    model_id: &'a str,
    condition: SemanticCondition,
    predictions: Vec<PredEntryDoc<'a>>,
}

// Numbers are written in shortest round-trip form, which reproduces every
// f64 exactly on re-parse.
fn to_line<T: Serialize>(doc: &T) -> String {
    serde_json::to_string(doc).expect("interchange documents contain only finite numbers")
}

/// Serializes a scene as a single line (no trailing newline).
pub fn write_scene(scene: &Scene) -> String {
    to_line(&SceneDoc {
        scene_id: &scene.scene_id,
        dt: scene.dt,
        agents: scene
            .agents
            .iter()
            .map(|a| AgentDoc {
                agent_id: &a.agent_id,
                history: &a.history,
                future: &a.future,
            })
            .collect(),
        map: scene.map.as_ref(),
    })
}

/// Serializes a prediction set as a single line (no trailing newline).
pub fn write_predictions(preds: &PredictionSet) -> String {
    to_line(&PredDoc {
        scene_id: &preds.scene_id,
        model_id: &preds.model_id,
        condition: preds.condition,
        predictions: preds
            .per_agent
            .iter()
            .map(|(agent_id, samples)| PredEntryDoc { agent_id, samples })
            .collect(),
    })
}

/// Errors raised while assembling a corpus from files.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Document {
        path: PathBuf,
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no {condition} predictions were supplied")]
    MissingCondition { condition: SemanticCondition },
    #[error("scene {scene_id:?} has no {condition} prediction")]
    Uncovered {
        scene_id: String,
        condition: SemanticCondition,
    },
}

/// Where a document came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub path: PathBuf,
    pub line: usize,
}

/// Files making up an evaluation corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub scene_files: Vec<PathBuf>,
    pub prediction_files: BTreeMap<SemanticCondition, Vec<PathBuf>>,
}

/// Scenes in lexicographic scene_id order plus prediction sets keyed by
/// scene and condition.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub scenes: Vec<Scene>,
    pub predictions: BTreeMap<(String, SemanticCondition), PredictionSet>,
    /// model_id seen under each condition.
    pub models: BTreeMap<SemanticCondition, String>,
}

/// Expands directories into the files carrying `suffix`; plain files pass
/// through. Output is sorted.
pub fn collect_files(paths: &[PathBuf], suffix: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|source| CorpusError::Io {
                path: p.clone(),
                source,
            })?;
            for entry in entries {
                let entry = entry.map_err(|source| CorpusError::Io {
                    path: p.clone(),
                    source,
                })?;
                let path = entry.path();
                if path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(suffix))
                {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .split('\n')
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Parses every scene line in `files`. Duplicate scene ids are rejected.
pub fn load_scenes(files: &[PathBuf], horizon: &Horizon) -> Result<Vec<Scene>, CorpusError> {
    let mut scenes: Vec<Scene> = Vec::new();
    let mut origins: HashMap<String, Origin> = HashMap::new();
    for path in files {
        for (line, text) in read_lines(path)? {
            let scene = parse_scene(&text, horizon).map_err(|source| CorpusError::Document {
                path: path.clone(),
                line,
                source,
            })?;
            if let Some(prev) = origins.get(&scene.scene_id) {
                return Err(CorpusError::Invalid {
                    path: path.clone(),
                    line,
                    message: format!(
                        "duplicate scene_id {:?} (first seen at {}:{})",
                        scene.scene_id,
                        prev.path.display(),
                        prev.line
                    ),
                });
            }
            origins.insert(
                scene.scene_id.clone(),
                Origin {
                    path: path.clone(),
                    line,
                },
            );
            scenes.push(scene);
        }
    }
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(scenes)
}

impl CorpusManifest {
    /// Loads and cross-checks every file. Each prediction must resolve to a
    /// loaded scene, carry the condition it was listed under, and pass
    /// [`validate_pair`]. A single model_id is allowed per condition, and
    /// every scene needs a prediction under both conditions.
    pub fn load(&self, horizon: &Horizon) -> Result<Corpus, CorpusError> {
        let scenes = load_scenes(&self.scene_files, horizon)?;
        let index: HashMap<&str, usize> = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.scene_id.as_str(), i))
            .collect();

        let mut predictions = BTreeMap::new();
        let mut models: BTreeMap<SemanticCondition, String> = BTreeMap::new();
        for (&condition, files) in &self.prediction_files {
            for path in files {
                for (line, text) in read_lines(path)? {
                    let invalid = |message: String| CorpusError::Invalid {
                        path: path.clone(),
                        line,
                        message,
                    };
                    let preds =
                        parse_predictions(&text).map_err(|source| CorpusError::Document {
                            path: path.clone(),
                            line,
                            source,
                        })?;
                    if preds.condition != condition {
                        return Err(invalid(format!(
                            "expected condition {condition}, found {}",
                            preds.condition
                        )));
                    }
                    match models.get(&condition) {
                        Some(m) if *m != preds.model_id => {
                            return Err(invalid(format!(
                                "mixed model ids under {condition}: {m:?} and {:?}",
                                preds.model_id
                            )))
                        }
                        Some(_) => {}
                        None => {
                            models.insert(condition, preds.model_id.clone());
                        }
                    }
                    let Some(&si) = index.get(preds.scene_id.as_str()) else {
                        return Err(invalid(format!(
                            "scene_id {:?} does not match any loaded scene",
                            preds.scene_id
                        )));
                    };
                    let violations = validate_pair(&scenes[si], &preds);
                    if !violations.is_empty() {
                        let joined: Vec<_> = violations.iter().map(|v| v.to_string()).collect();
                        return Err(invalid(joined.join("; ")));
                    }
                    let key = (preds.scene_id.clone(), condition);
                    if predictions.insert(key, preds).is_some() {
                        return Err(invalid(format!(
                            "duplicate {condition} prediction for this scene"
                        )));
                    }
                }
            }
        }

        for condition in SemanticCondition::ALL {
            if !models.contains_key(&condition) {
                return Err(CorpusError::MissingCondition { condition });
            }
            if let Some(s) = scenes
                .iter()
                .find(|s| !predictions.contains_key(&(s.scene_id.clone(), condition)))
            {
                return Err(CorpusError::Uncovered {
                    scene_id: s.scene_id.clone(),
                    condition,
                });
            }
        }

        Ok(Corpus {
            scenes,
            predictions,
            models,
        })
    }
}
