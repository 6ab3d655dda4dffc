//! Run configuration: a TOML file of flat keys, with command-line flags
//! applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use predsafe::classify::ClassifyConfig;
use predsafe::metrics::{KAggregation, MieDenominator, Weighting};
use predsafe::report::{TableFormat, DEFAULT_FAILURE_THRESHOLD_M, DEFAULT_FAILURE_TOP_N};
use predsafe::synth::Preset;
use predsafe::{
    Grouping, Horizon, MetricConfig, DEFAULT_DT, DEFAULT_FUTURE, DEFAULT_HISTORY, DEFAULT_K,
};

use crate::error::CliError;

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "PREDSAFE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub history: usize,
    pub future: usize,
    pub dt: f64,
    pub k: usize,

    pub density_bins: [usize; 4],
    pub curvature_threshold_deg: f64,
    pub curvature_window_m: f64,
    pub roi_radius_m: f64,

    pub k_aggregation: KAggregation,
    pub weighting: Weighting,
    pub mie_denominator: MieDenominator,

    pub failure_threshold_m: f64,
    pub failure_top_n: usize,
    pub groupings: Vec<Grouping>,
    pub format: TableFormat,
    /// Write plot bundles for scenes with flagged failures.
    pub plots: bool,
    /// Worker threads; 0 picks the number of available cores.
    pub jobs: usize,

    pub seed: u64,
    pub preset: Preset,
    /// Positional noise on samples 2..K of the synthetic predictors.
    pub pred_noise_sigma_m: f64,

    pub scenes: Vec<PathBuf>,
    pub preds_with: Vec<PathBuf>,
    pub preds_without: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let classify = ClassifyConfig::default();
        let metrics = MetricConfig::default();
        Self {
            history: DEFAULT_HISTORY,
            future: DEFAULT_FUTURE,
            dt: DEFAULT_DT,
            k: DEFAULT_K,
            density_bins: classify.density_bins,
            curvature_threshold_deg: classify.curvature_threshold_deg,
            curvature_window_m: classify.curvature_window_m,
            roi_radius_m: classify.roi_radius_m,
            k_aggregation: metrics.k_aggregation,
            weighting: metrics.weighting,
            mie_denominator: metrics.mie_denominator,
            failure_threshold_m: DEFAULT_FAILURE_THRESHOLD_M,
            failure_top_n: DEFAULT_FAILURE_TOP_N,
            groupings: Grouping::ALL.to_vec(),
            format: TableFormat::default(),
            plots: true,
            jobs: 0,
            seed: 0,
            preset: Preset::MixedGrid,
            pred_noise_sigma_m: 0.0,
            scenes: Vec::new(),
            preds_with: Vec::new(),
            preds_without: Vec::new(),
            out: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document. Relative paths inside it are taken
    /// relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.scenes.iter_mut().for_each(rebase);
        cfg.preds_with.iter_mut().for_each(rebase);
        cfg.preds_without.iter_mut().for_each(rebase);
        if let Some(out) = cfg.out.as_mut() {
            rebase(out);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }

    /// Config from `path` if given, else defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn horizon(&self) -> Horizon {
        Horizon {
            history: self.history,
            future: self.future,
        }
    }

    pub fn classify(&self) -> ClassifyConfig {
        ClassifyConfig {
            density_bins: self.density_bins,
            curvature_threshold_deg: self.curvature_threshold_deg,
            curvature_window_m: self.curvature_window_m,
            roi_radius_m: self.roi_radius_m,
        }
    }

    pub fn metrics(&self) -> MetricConfig {
        MetricConfig {
            k_aggregation: self.k_aggregation,
            weighting: self.weighting,
            mie_denominator: self.mie_denominator,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.history == 0 || self.future == 0 {
            return usage(format!(
                "history and future must be >= 1, got {} and {}",
                self.history, self.future
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return usage(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.k == 0 {
            return usage("k must be >= 1".into());
        }
        self.classify().validate()?;
        if !(self.failure_threshold_m.is_finite() && self.failure_threshold_m > 0.0) {
            return usage(format!(
                "failure_threshold_m must be finite and > 0, got {}",
                self.failure_threshold_m
            ));
        }
        if self.groupings.is_empty() {
            return usage("groupings must name at least one grouping".into());
        }
        if !(self.pred_noise_sigma_m.is_finite() && self.pred_noise_sigma_m >= 0.0) {
            return usage(format!(
                "pred_noise_sigma_m must be finite and >= 0, got {}",
                self.pred_noise_sigma_m
            ));
        }
        Ok(())
    }

    pub fn thread_count(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("an output directory is required (--out)".into()))
    }
}
