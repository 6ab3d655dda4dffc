//! Density and geometry classification, and the partition of a corpus into
//! (density, geometry) strata.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rayon::prelude::*;

use crate::scene::{DensityLevel, GeometryType, Scene, TrajPoint, MIN_POINT_SEPARATION};

/// Parameters of the density and geometry classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyConfig {
    /// Inclusive lower agent count of each density level, in level order.
    /// Level `i` covers `[bounds[i], bounds[i + 1])`; the last level is
    /// unbounded above.
    pub density_bins: [usize; 4],
    pub curvature_threshold_deg: f64,
    pub curvature_window_m: f64,
    pub roi_radius_m: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            density_bins: [1, 2, 4, 9],
            curvature_threshold_deg: 15.0,
            curvature_window_m: 20.0,
            roi_radius_m: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("density bins must start at 1 and be strictly increasing, got {0:?}")]
    DensityBins([usize; 4]),
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("polyline has fewer than 2 distinct points")]
    DegeneratePolyline,
    #[error("duplicate scene_id {0:?}")]
    DuplicateScene(String),
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        let b = self.density_bins;
        if b[0] != 1 || !b.windows(2).all(|w| w[0] < w[1]) {
            return Err(ClassifyError::DensityBins(b));
        }
        for (name, value) in [
            ("curvature_threshold_deg", self.curvature_threshold_deg),
            ("curvature_window_m", self.curvature_window_m),
            ("roi_radius_m", self.roi_radius_m),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ClassifyError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// Density level for a given agent count.
pub fn density_for_count(count: usize, cfg: &ClassifyConfig) -> DensityLevel {
    let idx = cfg
        .density_bins
        .iter()
        .rposition(|&lo| count >= lo)
        .unwrap_or(0);
    DensityLevel::ALL[idx]
}

pub fn classify_density(scene: &Scene, cfg: &ClassifyConfig) -> DensityLevel {
    density_for_count(scene.agents.len(), cfg)
}

/// Largest absolute cumulative heading change, in degrees, over any
/// contiguous run of segments whose total length is at most `window_m`.
///
/// The cumulative change of a run is the sum of the signed turn angles
/// between its consecutive segments. Repeated consecutive points are
/// collapsed before segmenting.
pub fn heading_change_deg(polyline: &[TrajPoint], window_m: f64) -> Result<f64, ClassifyError> {
    let mut pts: Vec<TrajPoint> = Vec::with_capacity(polyline.len());
    for p in polyline {
        if pts
            .last()
            .is_none_or(|q: &TrajPoint| q.distance(p) > MIN_POINT_SEPARATION)
        {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(ClassifyError::DegeneratePolyline);
    }

    let seg_len: Vec<f64> = pts.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let n = seg_len.len();
    // turn[i] is the signed angle from segment i to segment i + 1.
    let turn: Vec<f64> = pts
        .windows(3)
        .map(|w| {
            let (ax, ay) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let (bx, by) = (w[2].x - w[1].x, w[2].y - w[1].y);
            (ax * by - ay * bx).atan2(ax * bx + ay * by)
        })
        .collect();

    // prefix[j] = sum of turn[0..j]; a run of segments i..=j accumulates
    // prefix[j] - prefix[i].
    let mut prefix = Vec::with_capacity(n);
    prefix.push(0.0);
    for t in &turn {
        prefix.push(prefix.last().unwrap() + t);
    }
    let mut len_prefix = Vec::with_capacity(n + 1);
    len_prefix.push(0.0);
    for l in &seg_len {
        len_prefix.push(len_prefix.last().unwrap() + l);
    }

    let slack = window_m.abs() * 1e-12 + 1e-12;
    let fits = |i: usize, j: usize| len_prefix[j + 1] - len_prefix[i] <= window_m + slack;

    // Sliding window over run ends; deques hold indices of the running max
    // and min of prefix[] within the admissible range for start i.
    let mut best = 0.0f64;
    let mut max_q: VecDeque<usize> = VecDeque::new();
    let mut min_q: VecDeque<usize> = VecDeque::new();
    let mut end = 0usize;
    for start in 0..n {
        if end < start {
            end = start;
        }
        while end < n && fits(start, end) {
            while max_q.back().is_some_and(|&b| prefix[b] <= prefix[end]) {
                max_q.pop_back();
            }
            max_q.push_back(end);
            while min_q.back().is_some_and(|&b| prefix[b] >= prefix[end]) {
                min_q.pop_back();
            }
            min_q.push_back(end);
            end += 1;
        }
        while max_q.front().is_some_and(|&f| f < start) {
            max_q.pop_front();
        }
        while min_q.front().is_some_and(|&f| f < start) {
            min_q.pop_front();
        }
        if let (Some(&hi), Some(&lo)) = (max_q.front(), min_q.front()) {
            let base = prefix[start];
            best = best
                .max((prefix[hi] - base).abs())
                .max((prefix[lo] - base).abs());
        }
    }
    Ok(best.to_degrees())
}

/// Road geometry of a scene plus the largest heading change observed.
///
/// Lanes with any centerline point inside `roi_radius_m` of some agent's
/// last observed position are examined. Without a map, or when no lane
/// reaches the ROI, the agents' own history+future paths are examined
/// instead. The scene is curved iff the largest heading change strictly
/// exceeds the threshold.
pub fn classify_geometry(scene: &Scene, cfg: &ClassifyConfig) -> (GeometryType, f64) {
    let anchors: Vec<TrajPoint> = scene
        .agents
        .iter()
        .filter_map(|a| a.last_observed().copied())
        .collect();
    let r = cfg.roi_radius_m;

    let lanes: Vec<&[TrajPoint]> = scene
        .map
        .iter()
        .flat_map(|m| m.lanes.iter())
        .filter(|lane| {
            lane.centerline
                .iter()
                .any(|p| anchors.iter().any(|a| a.distance(p) <= r))
        })
        .map(|lane| lane.centerline.as_slice())
        .collect();

    let changes: Vec<f64> = if lanes.is_empty() {
        scene
            .agents
            .iter()
            .filter_map(|a| heading_change_deg(&a.full_path(), cfg.curvature_window_m).ok())
            .collect()
    } else {
        lanes
            .into_iter()
            .filter_map(|c| heading_change_deg(c, cfg.curvature_window_m).ok())
            .collect()
    };
    let max = changes.into_iter().fold(0.0f64, f64::max);
    let tau = if max > cfg.curvature_threshold_deg {
        GeometryType::Curved
    } else {
        GeometryType::Straight
    };
    (tau, max)
}

/// Classification of a single scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneClass {
    pub scene_id: String,
    pub agent_count: usize,
    pub rho: DensityLevel,
    pub tau: GeometryType,
    pub heading_change_deg: f64,
}

pub fn classify_scene(scene: &Scene, cfg: &ClassifyConfig) -> SceneClass {
    let (tau, heading_change_deg) = classify_geometry(scene, cfg);
    SceneClass {
        scene_id: scene.scene_id.clone(),
        agent_count: scene.agents.len(),
        rho: classify_density(scene, cfg),
        tau,
        heading_change_deg,
    }
}

/// Scenes split into (density, geometry) cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    /// Every one of the eight cells is present, possibly empty. Scene ids
    /// within a cell are sorted.
    pub cells: BTreeMap<(DensityLevel, GeometryType), Vec<String>>,
    /// Per-scene records sorted by scene_id.
    pub scenes: Vec<SceneClass>,
}

impl Partition {
    /// Assembles a partition from per-scene classifications.
    pub fn from_classes(mut scenes: Vec<SceneClass>) -> Result<Self, ClassifyError> {
        scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        if let Some(w) = scenes.windows(2).find(|w| w[0].scene_id == w[1].scene_id) {
            return Err(ClassifyError::DuplicateScene(w[0].scene_id.clone()));
        }
        let mut cells: BTreeMap<_, Vec<String>> = DensityLevel::ALL
            .into_iter()
            .flat_map(|r| {
                GeometryType::ALL
                    .into_iter()
                    .map(move |t| ((r, t), Vec::new()))
            })
            .collect();
        for s in &scenes {
            cells
                .get_mut(&(s.rho, s.tau))
                .expect("all cells present")
                .push(s.scene_id.clone());
        }
        Ok(Self { cells, scenes })
    }

    pub fn get(&self, scene_id: &str) -> Option<&SceneClass> {
        self.scenes
            .binary_search_by(|s| s.scene_id.as_str().cmp(scene_id))
            .ok()
            .map(|i| &self.scenes[i])
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Classifies every scene (in parallel on the current rayon pool) and
/// groups them into cells.
pub fn partition(scenes: &[Scene], cfg: &ClassifyConfig) -> Result<Partition, ClassifyError> {
    let mut seen = HashSet::new();
    for s in scenes {
        if !seen.insert(s.scene_id.as_str()) {
            return Err(ClassifyError::DuplicateScene(s.scene_id.clone()));
        }
    }
    let classes: Vec<SceneClass> = scenes.par_iter().map(|s| classify_scene(s, cfg)).collect();
    Partition::from_classes(classes)
}
