//! Table rendering, failure flagging and plot-data export.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classify::Partition;
use crate::scene::{
    DensityLevel, GeometryType, Lane, MetricRecord, PredictionSet, Scene, SemanticCondition,
    StratumReport, TrajPoint,
};

pub const DEFAULT_FAILURE_THRESHOLD_M: f64 = 10.0;
pub const DEFAULT_FAILURE_TOP_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    #[default]
    #[serde(alias = "md")]
    Markdown,
}

impl TableFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "md",
        }
    }
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(format!("unknown table format {s:?}")),
        }
    }
}

const COLUMNS: [&str; 8] = [
    "group",
    "sample_size",
    "ADE_o",
    "ADE_w",
    "FDE_o",
    "FDE_w",
    "MIE_A",
    "MIE_F",
];

const ABSENT: &str = "-";

fn fixed4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map(fixed4).unwrap_or_else(|| ABSENT.to_string())
}

fn cells(row: &StratumReport) -> [String; 8] {
    let m = row.metrics.as_ref();
    [
        row.group.label(),
        row.sample_size.to_string(),
        opt4(m.map(|m| m.ade_o)),
        opt4(m.map(|m| m.ade_w)),
        opt4(m.map(|m| m.fde_o)),
        opt4(m.map(|m| m.fde_w)),
        opt4(m.and_then(|m| m.mie_a)),
        opt4(m.and_then(|m| m.mie_f)),
    ]
}

/// Renders report rows sorted by group key. Numbers carry four decimals;
/// absent values print as `-`.
pub fn render_table(reports: &[StratumReport], format: TableFormat) -> String {
    let mut rows: Vec<&StratumReport> = reports.iter().collect();
    rows.sort_by_key(|r| r.group);
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&cells(r).join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(COLUMNS.len() - 1));
            for r in rows {
                let _ = writeln!(out, "| {} |", cells(r).join(" | "));
            }
        }
    }
    out
}

/// An agent-level prediction flagged for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureCase {
    pub scene_id: String,
    pub agent_id: String,
    pub condition: SemanticCondition,
    pub fde: f64,
    pub ade: f64,
    pub rho: Option<DensityLevel>,
    pub tau: Option<GeometryType>,
    /// 1-based position in the sorted output.
    pub rank: usize,
}

fn worst_first(a: &MetricRecord, b: &MetricRecord) -> Ordering {
    b.fde
        .total_cmp(&a.fde)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| a.agent_id.cmp(&b.agent_id))
        .then_with(|| a.condition.cmp(&b.condition))
}

/// Records whose FDE exceeds `threshold_m`, together with the `top_n` worst
/// by FDE, sorted worst first. Ties break on (scene_id, agent_id,
/// condition). Either criterion can be disabled with `None` / 0.
pub fn flag_failures(
    records: &[MetricRecord],
    threshold_m: Option<f64>,
    top_n: usize,
    partition: Option<&Partition>,
) -> Vec<FailureCase> {
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| worst_first(a, b));
    // duplicates count once
    let mut seen = BTreeSet::new();
    sorted.retain(|r| seen.insert((r.scene_id.as_str(), r.agent_id.as_str(), r.condition)));

    sorted
        .into_iter()
        .enumerate()
        .filter(|(i, r)| *i < top_n || threshold_m.is_some_and(|t| r.fde > t))
        .enumerate()
        .map(|(rank, (_, r))| {
            let class = partition.and_then(|p| p.get(&r.scene_id));
            FailureCase {
                scene_id: r.scene_id.clone(),
                agent_id: r.agent_id.clone(),
                condition: r.condition,
                fde: r.fde,
                ade: r.ade,
                rho: class.map(|c| c.rho),
                tau: class.map(|c| c.tau),
                rank: rank + 1,
            }
        })
        .collect()
}

/// CSV listing of failure cases.
pub fn render_failures(cases: &[FailureCase]) -> String {
    let mut out = String::from("rank,scene_id,agent_id,condition,rho,tau,ade,fde\n");
    for c in cases {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.rank,
            c.scene_id,
            c.agent_id,
            c.condition,
            c.rho.map(|r| r.as_str()).unwrap_or(ABSENT),
            c.tau.map(|t| t.as_str()).unwrap_or(ABSENT),
            fixed4(c.ade),
            fixed4(c.fde),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthTrack {
    pub agent_id: String,
    pub history: Vec<TrajPoint>,
    pub future: Vec<TrajPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleGroup {
    pub agent_id: String,
    pub samples: Vec<Vec<TrajPoint>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSamples {
    pub with_map: Option<Vec<SampleGroup>>,
    pub without_map: Option<Vec<SampleGroup>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentError {
    pub agent_id: String,
    pub condition: SemanticCondition,
    pub ade: f64,
    pub fde: f64,
}

/// Everything an external plotter needs to overlay predictions on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotBundle {
    pub scene_id: String,
    pub lanes: Vec<Lane>,
    pub truth: Vec<TruthTrack>,
    pub samples: ConditionSamples,
    pub errors: Vec<AgentError>,
}

fn sample_groups(scene: &Scene, preds: Option<&PredictionSet>) -> Option<Vec<SampleGroup>> {
    preds.map(|p| {
        p.per_agent
            .iter()
            .filter(|(id, _)| scene.agent(id).is_some())
            .map(|(agent_id, samples)| SampleGroup {
                agent_id: agent_id.clone(),
                samples: samples.clone(),
            })
            .collect()
    })
}

/// Collects scene geometry, ground truth, samples of both conditions and
/// the scene's error records into one bundle. Entities not belonging to the
/// scene are dropped.
pub fn export_plot_bundle(
    scene: &Scene,
    preds_with: Option<&PredictionSet>,
    preds_without: Option<&PredictionSet>,
    records: &[MetricRecord],
) -> PlotBundle {
    let mut errors: Vec<AgentError> = records
        .iter()
        .filter(|r| r.scene_id == scene.scene_id && scene.agent(&r.agent_id).is_some())
        .map(|r| AgentError {
            agent_id: r.agent_id.clone(),
            condition: r.condition,
            ade: r.ade,
            fde: r.fde,
        })
        .collect();
    errors.sort_by(|a, b| (&a.agent_id, a.condition).cmp(&(&b.agent_id, b.condition)));

    PlotBundle {
        scene_id: scene.scene_id.clone(),
        lanes: scene
            .map
            .as_ref()
            .map(|m| m.lanes.clone())
            .unwrap_or_default(),
        truth: scene
            .agents
            .iter()
            .map(|a| TruthTrack {
                agent_id: a.agent_id.clone(),
                history: a.history.clone(),
                future: a.future.clone(),
            })
            .collect(),
        samples: ConditionSamples {
            with_map: sample_groups(scene, preds_with),
            without_map: sample_groups(scene, preds_without),
        },
        errors,
    }
}

pub fn write_plot_bundle(bundle: &PlotBundle) -> String {
    serde_json::to_string(bundle).expect("plot bundles contain only finite numbers")
}

pub fn parse_plot_bundle(text: &str) -> Result<PlotBundle, serde_json::Error> {
    serde_json::from_str(text)
}
