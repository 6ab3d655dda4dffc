//! Displacement errors, aggregation, and the map-dependency (MIE) metric.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Partition;
use crate::scene::{
    DensityLevel, GeometryType, GroupKey, MetricRecord, PredictionSet, Scene, SemanticCondition,
    StratumMetrics, StratumReport, TrajPoint,
};

/// How the K samples of one agent collapse into a single error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KAggregation {
    #[default]
    MinOverK,
    MeanOverK,
}

/// What counts as one sample when averaging over a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Agent,
    Scene,
}

/// Which error normalizes the MIE difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MieDenominator {
    #[default]
    WithoutMap,
    WithMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricConfig {
    pub k_aggregation: KAggregation,
    pub weighting: Weighting,
    pub mie_denominator: MieDenominator,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no sampled trajectories")]
    NoSamples,
    #[error("sample {sample} has {found} points, ground truth has {expected}")]
    LengthMismatch {
        sample: usize,
        expected: usize,
        found: usize,
    },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("scene {scene_id:?} agent {agent_id:?}: {source}")]
    Agent {
        scene_id: String,
        agent_id: String,
        #[source]
        source: Box<MetricsError>,
    },
    #[error("agent {agent_id:?} is not in scene {scene_id:?}")]
    UnknownAgent { scene_id: String, agent_id: String },
    #[error("prediction for scene {found:?} paired with scene {expected:?}")]
    SceneMismatch { expected: String, found: String },
    #[error("cannot aggregate an empty record list")]
    EmptyAggregate,
    #[error("records mix conditions {0} and {1}")]
    MixedConditions(SemanticCondition, SemanticCondition),
    #[error("MIE denominator must be > 0, got {0}")]
    NonPositiveDenominator(f64),
    #[error("record for scene {0:?} which is not in the partition")]
    UnknownScene(String),
    #[error("stratum {group} has scenes but no {condition} records")]
    MissingCondition {
        group: GroupKey,
        condition: SemanticCondition,
    },
}

/// ADE and FDE of one agent over its K samples.
///
/// Per sample, ADE is the mean Euclidean distance over all T steps and FDE
/// the distance at the last step. The two are reduced independently, so
/// under min-of-K they may come from different samples.
pub fn displacement_errors(
    samples: &[Vec<TrajPoint>],
    truth: &[TrajPoint],
    cfg: &MetricConfig,
) -> Result<(f64, f64), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    if !truth.iter().all(TrajPoint::is_finite) {
        return Err(MetricsError::NonFinite);
    }
    let t = truth.len();
    let mut ade_acc = match cfg.k_aggregation {
        KAggregation::MinOverK => f64::INFINITY,
        KAggregation::MeanOverK => 0.0,
    };
    let mut fde_acc = ade_acc;
    for (k, sample) in samples.iter().enumerate() {
        if sample.len() != t {
            return Err(MetricsError::LengthMismatch {
                sample: k,
                expected: t,
                found: sample.len(),
            });
        }
        if !sample.iter().all(TrajPoint::is_finite) {
            return Err(MetricsError::NonFinite);
        }
        let dist_sum: f64 = sample.iter().zip(truth).map(|(p, q)| p.distance(q)).sum();
        let ade = dist_sum / t as f64;
        let fde = sample[t - 1].distance(&truth[t - 1]);
        match cfg.k_aggregation {
            KAggregation::MinOverK => {
                ade_acc = ade_acc.min(ade);
                fde_acc = fde_acc.min(fde);
            }
            KAggregation::MeanOverK => {
                ade_acc += ade;
                fde_acc += fde;
            }
        }
    }
    if cfg.k_aggregation == KAggregation::MeanOverK {
        ade_acc /= samples.len() as f64;
        fde_acc /= samples.len() as f64;
    }
    Ok((ade_acc, fde_acc))
}

/// One record per predicted agent, in agent_id order.
pub fn scene_metrics(
    scene: &Scene,
    preds: &PredictionSet,
    cfg: &MetricConfig,
) -> Result<Vec<MetricRecord>, MetricsError> {
    if scene.scene_id != preds.scene_id {
        return Err(MetricsError::SceneMismatch {
            expected: scene.scene_id.clone(),
            found: preds.scene_id.clone(),
        });
    }
    preds
        .per_agent
        .iter()
        .map(|(agent_id, samples)| {
            let agent = scene
                .agent(agent_id)
                .ok_or_else(|| MetricsError::UnknownAgent {
                    scene_id: scene.scene_id.clone(),
                    agent_id: agent_id.clone(),
                })?;
            let (ade, fde) = displacement_errors(samples, &agent.future, cfg).map_err(|e| {
                MetricsError::Agent {
                    scene_id: scene.scene_id.clone(),
                    agent_id: agent_id.clone(),
                    source: Box::new(e),
                }
            })?;
            Ok(MetricRecord {
                scene_id: scene.scene_id.clone(),
                agent_id: agent_id.clone(),
                condition: preds.condition,
                ade,
                fde,
            })
        })
        .collect()
}

/// Computes records for many (scene, predictions) pairs on the current rayon
/// pool. Output order follows the input order regardless of pool size.
pub fn evaluate_pairs(
    pairs: &[(&Scene, &PredictionSet)],
    cfg: &MetricConfig,
) -> Result<Vec<MetricRecord>, MetricsError> {
    let per_scene: Vec<Result<Vec<MetricRecord>, MetricsError>> = pairs
        .par_iter()
        .map(|(scene, preds)| scene_metrics(scene, preds, cfg))
        .collect();
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean errors over a set of records from a single condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateError {
    pub ade: f64,
    pub fde: f64,
    /// Agents or scenes, depending on the weighting.
    pub n: usize,
}

/// Averages records of one condition. Records are summed in
/// (scene_id, agent_id) order, so the result does not depend on input order.
pub fn aggregate(
    records: &[MetricRecord],
    cfg: &MetricConfig,
) -> Result<AggregateError, MetricsError> {
    let first = records.first().ok_or(MetricsError::EmptyAggregate)?;
    if let Some(other) = records.iter().find(|r| r.condition != first.condition) {
        return Err(MetricsError::MixedConditions(
            first.condition,
            other.condition,
        ));
    }
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.scene_id, &a.agent_id).cmp(&(&b.scene_id, &b.agent_id)));

    match cfg.weighting {
        Weighting::Agent => {
            let n = sorted.len();
            let (ade, fde) = sorted
                .iter()
                .fold((0.0, 0.0), |(a, f), r| (a + r.ade, f + r.fde));
            Ok(AggregateError {
                ade: ade / n as f64,
                fde: fde / n as f64,
                n,
            })
        }
        Weighting::Scene => {
            let mut scene_means: Vec<(f64, f64)> = Vec::new();
            for group in sorted.chunk_by(|a, b| a.scene_id == b.scene_id) {
                let m = group.len() as f64;
                let (a, f) = group
                    .iter()
                    .fold((0.0, 0.0), |(a, f), r| (a + r.ade, f + r.fde));
                scene_means.push((a / m, f / m));
            }
            let n = scene_means.len();
            let (ade, fde) = scene_means
                .iter()
                .fold((0.0, 0.0), |(a, f), (sa, sf)| (a + sa, f + sf));
            Ok(AggregateError {
                ade: ade / n as f64,
                fde: fde / n as f64,
                n,
            })
        }
    }
}

/// Map Information Effectiveness: the without-map minus with-map error,
/// normalized by the square root of the configured error. Positive values
/// mean the model does better with the map.
///
/// Equal errors yield 0 even when the denominator vanishes.
pub fn mie(error_o: f64, error_w: f64, cfg: &MetricConfig) -> Result<f64, MetricsError> {
    let numerator = error_o - error_w;
    let denom = match cfg.mie_denominator {
        MieDenominator::WithoutMap => error_o,
        MieDenominator::WithMap => error_w,
    };
    if numerator == 0.0 {
        return Ok(0.0);
    }
    if denom.is_nan() || denom <= 0.0 {
        return Err(MetricsError::NonPositiveDenominator(denom));
    }
    Ok(numerator / denom.sqrt())
}

/// Row families of a stratified report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    Density,
    Geometry,
    Full,
}

impl Grouping {
    pub const ALL: [Grouping; 4] = [Self::Overall, Self::Density, Self::Geometry, Self::Full];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Overall => "overall",
            Self::Density => "density",
            Self::Geometry => "geometry",
            Self::Full => "full",
        }
    }

    pub fn keys(&self) -> Vec<GroupKey> {
        match self {
            Self::Overall => vec![GroupKey::OVERALL],
            Self::Density => DensityLevel::ALL
                .into_iter()
                .map(|r| GroupKey {
                    rho: Some(r),
                    tau: None,
                })
                .collect(),
            Self::Geometry => GeometryType::ALL
                .into_iter()
                .map(|t| GroupKey {
                    rho: None,
                    tau: Some(t),
                })
                .collect(),
            Self::Full => DensityLevel::ALL
                .into_iter()
                .flat_map(|r| {
                    GeometryType::ALL.into_iter().map(move |t| GroupKey {
                        rho: Some(r),
                        tau: Some(t),
                    })
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown grouping {s:?}"))
    }
}

/// Builds the rows of one grouping from a partition and the records of both
/// conditions. Empty strata produce rows with `metrics: None`.
pub fn stratified_report(
    partition: &Partition,
    records: &[MetricRecord],
    grouping: Grouping,
    cfg: &MetricConfig,
) -> Result<Vec<StratumReport>, MetricsError> {
    let mut cell_of: BTreeMap<&str, (DensityLevel, GeometryType)> = BTreeMap::new();
    for s in &partition.scenes {
        cell_of.insert(s.scene_id.as_str(), (s.rho, s.tau));
    }
    for r in records {
        if !cell_of.contains_key(r.scene_id.as_str()) {
            return Err(MetricsError::UnknownScene(r.scene_id.clone()));
        }
    }

    let mut rows = Vec::new();
    for group in grouping.keys() {
        let sample_size: usize = partition
            .scenes
            .iter()
            .filter(|s| group.contains(s.rho, s.tau))
            .map(|s| s.agent_count)
            .sum();
        if sample_size == 0 {
            rows.push(StratumReport {
                group,
                sample_size,
                metrics: None,
            });
            continue;
        }
        let mut by_condition = [Vec::new(), Vec::new()];
        for r in records {
            let (rho, tau) = cell_of[r.scene_id.as_str()];
            if group.contains(rho, tau) {
                let slot = match r.condition {
                    SemanticCondition::WithMap => 0,
                    SemanticCondition::WithoutMap => 1,
                };
                by_condition[slot].push(r.clone());
            }
        }
        let mut agg = [None, None];
        for (slot, condition) in SemanticCondition::ALL.into_iter().enumerate() {
            if by_condition[slot].is_empty() {
                return Err(MetricsError::MissingCondition { group, condition });
            }
            agg[slot] = Some(aggregate(&by_condition[slot], cfg)?);
        }
        let (w, o) = (agg[0].unwrap(), agg[1].unwrap());
        rows.push(StratumReport {
            group,
            sample_size,
            metrics: Some(StratumMetrics {
                ade_o: o.ade,
                ade_w: w.ade,
                fde_o: o.fde,
                fde_w: w.fde,
                mie_a: mie(o.ade, w.ade, cfg).ok(),
                mie_f: mie(o.fde, w.fde, cfg).ok(),
            }),
        });
    }
    Ok(rows)
}
