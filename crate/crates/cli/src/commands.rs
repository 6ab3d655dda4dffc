//! The four subcommands. Each computes everything in memory first and only
//! then hands its files to [`Staged::commit`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use predsafe::classify::{classify_scene, Partition, SceneClass};
use predsafe::ingest::{
    collect_files, load_scenes, write_predictions, write_scene, Corpus, CorpusManifest,
    PREDS_SUFFIX, SCENES_SUFFIX,
};
use predsafe::metrics::{evaluate_pairs, stratified_report};
use predsafe::report::{
    export_plot_bundle, flag_failures, render_failures, render_table, write_plot_bundle,
    FailureCase, TableFormat,
};
use predsafe::synth::{gen_corpus, predict_ctr, predict_cv};
use predsafe::{
    DensityLevel, GeometryType, Grouping, MetricRecord, Scene, SemanticCondition, StratumReport,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Staged;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CLASSIFICATION_FILE: &str = "classification.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const PLOTS_DIR: &str = "plots";

/// Tolerance when comparing a scene's dt with the configured one.
const DT_TOLERANCE: f64 = 1e-9;

pub fn report_file_name(grouping: Grouping, format: TableFormat) -> String {
    format!("report_{}.{}", grouping.as_str(), format.extension())
}

/// Scene ids become file names; anything outside a safe set is replaced.
pub fn plot_file_name(scene_id: &str) -> String {
    let safe: String = scene_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{PLOTS_DIR}/{safe}.plot.json")
}

fn in_pool<T: Send>(
    cfg: &RunConfig,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count())
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassRow {
    scene_id: String,
    agent_count: usize,
    rho: DensityLevel,
    tau: GeometryType,
    heading_change_deg: f64,
}

impl From<&SceneClass> for ClassRow {
    fn from(c: &SceneClass) -> Self {
        Self {
            scene_id: c.scene_id.clone(),
            agent_count: c.agent_count,
            rho: c.rho,
            tau: c.tau,
            heading_change_deg: c.heading_change_deg,
        }
    }
}

impl From<ClassRow> for SceneClass {
    fn from(r: ClassRow) -> Self {
        Self {
            scene_id: r.scene_id,
            agent_count: r.agent_count,
            rho: r.rho,
            tau: r.tau,
            heading_change_deg: r.heading_change_deg,
        }
    }
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Internal(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Internal(format!("csv: {e}")))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn classification_csv(partition: &Partition) -> Result<Vec<u8>, CliError> {
    // an empty corpus still gets a header line
    if partition.scenes.is_empty() {
        return Ok(b"scene_id,agent_count,rho,tau,heading_change_deg\n".to_vec());
    }
    to_csv(partition.scenes.iter().map(ClassRow::from))
}

pub fn metrics_csv(records: &[MetricRecord]) -> Result<Vec<u8>, CliError> {
    if records.is_empty() {
        return Ok(b"scene_id,agent_id,condition,ade,fde\n".to_vec());
    }
    to_csv(records)
}

fn classify_all(scenes: &[Scene], cfg: &RunConfig) -> Result<Partition, CliError> {
    let ccfg = cfg.classify();
    let classes: Vec<SceneClass> = scenes
        .par_iter()
        .map(|s| classify_scene(s, &ccfg))
        .collect();
    Ok(Partition::from_classes(classes)?)
}

/// Tables for every configured grouping plus the flagged failures.
pub struct Reports {
    pub tables: Vec<(Grouping, Vec<StratumReport>)>,
    pub failures: Vec<FailureCase>,
}

pub fn build_reports(
    partition: &Partition,
    records: &[MetricRecord],
    cfg: &RunConfig,
) -> Result<Reports, CliError> {
    let mcfg = cfg.metrics();
    let mut tables = Vec::new();
    for &g in &cfg.groupings {
        tables.push((g, stratified_report(partition, records, g, &mcfg)?));
    }
    let failures = flag_failures(
        records,
        Some(cfg.failure_threshold_m),
        cfg.failure_top_n,
        Some(partition),
    );
    Ok(Reports { tables, failures })
}

fn stage_reports(staged: &mut Staged, reports: &Reports, format: TableFormat) {
    for (g, rows) in &reports.tables {
        staged.add(report_file_name(*g, format), render_table(rows, format));
    }
    staged.add(FAILURES_FILE, render_failures(&reports.failures));
}

fn check_corpus(corpus: &Corpus, cfg: &RunConfig) -> Result<(), CliError> {
    for s in &corpus.scenes {
        if (s.dt - cfg.dt).abs() > DT_TOLERANCE {
            return Err(CliError::Data(format!(
                "scene {:?} has dt {} but the configuration expects {}",
                s.scene_id, s.dt, cfg.dt
            )));
        }
    }
    for ((scene_id, condition), p) in &corpus.predictions {
        if let Some(k) = p.k().filter(|&k| k != cfg.k) {
            return Err(CliError::Data(format!(
                "{condition} prediction for scene {scene_id:?} has {k} samples per agent but the configuration expects k = {}",
                cfg.k
            )));
        }
    }
    Ok(())
}

/// Everything `evaluate` computes, before anything is written.
pub struct Evaluation {
    pub corpus: Corpus,
    pub partition: Partition,
    pub records: Vec<MetricRecord>,
    pub reports: Reports,
}

pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation, CliError> {
    cfg.validate()?;
    if cfg.scenes.is_empty() {
        return Err(CliError::Usage("no scene inputs given (--scenes)".into()));
    }
    in_pool(cfg, || {
        let mut manifest = CorpusManifest {
            scene_files: collect_files(&cfg.scenes, SCENES_SUFFIX)?,
            ..Default::default()
        };
        for (condition, paths) in [
            (SemanticCondition::WithMap, &cfg.preds_with),
            (SemanticCondition::WithoutMap, &cfg.preds_without),
        ] {
            if !paths.is_empty() {
                manifest
                    .prediction_files
                    .insert(condition, collect_files(paths, PREDS_SUFFIX)?);
            }
        }
        let corpus = manifest.load(&cfg.horizon())?;
        check_corpus(&corpus, cfg)?;

        let partition = classify_all(&corpus.scenes, cfg)?;
        let mut pairs = Vec::with_capacity(2 * corpus.scenes.len());
        for s in &corpus.scenes {
            for c in SemanticCondition::ALL {
                pairs.push((s, &corpus.predictions[&(s.scene_id.clone(), c)]));
            }
        }
        let records = evaluate_pairs(&pairs, &cfg.metrics())?;
        drop(pairs);
        let reports = build_reports(&partition, &records, cfg)?;
        Ok(Evaluation {
            corpus,
            partition,
            records,
            reports,
        })
    })
}

pub fn stage_evaluation(ev: &Evaluation, cfg: &RunConfig) -> Result<Staged, CliError> {
    let mut staged = Staged::new();
    stage_reports(&mut staged, &ev.reports, cfg.format);
    staged.add(METRICS_FILE, metrics_csv(&ev.records)?);
    staged.add(CLASSIFICATION_FILE, classification_csv(&ev.partition)?);

    if cfg.plots {
        let scene_ids: BTreeSet<&str> = ev
            .reports
            .failures
            .iter()
            .map(|f| f.scene_id.as_str())
            .collect();
        for id in scene_ids {
            let Ok(i) = ev
                .corpus
                .scenes
                .binary_search_by(|s| s.scene_id.as_str().cmp(id))
            else {
                continue;
            };
            let scene = &ev.corpus.scenes[i];
            let get = |c| ev.corpus.predictions.get(&(scene.scene_id.clone(), c));
            let scene_records: Vec<MetricRecord> = ev
                .records
                .iter()
                .filter(|r| r.scene_id == scene.scene_id)
                .cloned()
                .collect();
            let bundle = export_plot_bundle(
                scene,
                get(SemanticCondition::WithMap),
                get(SemanticCondition::WithoutMap),
                &scene_records,
            );
            staged.add(plot_file_name(&scene.scene_id), write_plot_bundle(&bundle));
        }
    }
    Ok(staged)
}

pub fn summary(ev: &Evaluation) -> String {
    let agents: usize = ev.partition.scenes.iter().map(|s| s.agent_count).sum();
    let model = |c| ev.corpus.models.get(&c).map_or("-", String::as_str);
    let mut out = format!(
        "evaluated {} scenes, {} agents (with_map: {}, without_map: {}); {} failure cases flagged\n",
        ev.partition.len(),
        agents,
        model(SemanticCondition::WithMap),
        model(SemanticCondition::WithoutMap),
        ev.reports.failures.len(),
    );
    if let Some((_, rows)) = ev
        .reports
        .tables
        .iter()
        .find(|(g, _)| *g == Grouping::Overall)
    {
        out.push_str(&render_table(rows, TableFormat::Markdown));
    }
    out
}

pub fn run_evaluate(cfg: &RunConfig) -> Result<String, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let ev = evaluate(cfg)?;
    let staged = stage_evaluation(&ev, cfg)?;
    let n = staged.len();
    staged.commit(&out)?;
    Ok(format!(
        "{}wrote {n} files to {}\n",
        summary(&ev),
        out.display()
    ))
}

pub fn run_classify(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    if cfg.scenes.is_empty() {
        return Err(CliError::Usage("no scene inputs given (--scenes)".into()));
    }
    let csv = in_pool(cfg, || {
        let files = collect_files(&cfg.scenes, SCENES_SUFFIX)?;
        let scenes = load_scenes(&files, &cfg.horizon())?;
        classification_csv(&classify_all(&scenes, cfg)?)
    })?;
    match &cfg.out {
        Some(out) => {
            let mut staged = Staged::new();
            staged.add(CLASSIFICATION_FILE, csv);
            staged.commit(out)?;
            Ok(format!(
                "wrote {}\n",
                out.join(CLASSIFICATION_FILE).display()
            ))
        }
        None => String::from_utf8(csv).map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn jsonl(lines: impl IntoIterator<Item = String>) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// Relative paths of the three files `synth` writes for `preset`.
pub fn synth_file_names(preset: &str) -> [PathBuf; 3] {
    [
        PathBuf::from(format!("{preset}{SCENES_SUFFIX}")),
        Path::new(SemanticCondition::WithMap.as_str()).join(format!("{preset}{PREDS_SUFFIX}")),
        Path::new(SemanticCondition::WithoutMap.as_str()).join(format!("{preset}{PREDS_SUFFIX}")),
    ]
}

pub fn run_synth(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    let name = cfg.preset.as_str();
    let staged = in_pool(cfg, || {
        let specs = cfg.preset.specs(cfg.seed, cfg.dt, cfg.history, cfg.future);
        let scenes = gen_corpus(&specs)?;
        let (k, noise, seed) = (cfg.k, cfg.pred_noise_sigma_m, cfg.seed);
        let with = scenes
            .par_iter()
            .map(|s| {
                predict_ctr(s, k, noise, seed, SemanticCondition::WithMap)
                    .map(|p| write_predictions(&p))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let without = scenes
            .par_iter()
            .map(|s| {
                predict_cv(s, k, noise, seed, SemanticCondition::WithoutMap)
                    .map(|p| write_predictions(&p))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let [scene_file, with_file, without_file] = synth_file_names(name);
        let mut staged = Staged::new();
        staged.add(scene_file, jsonl(scenes.iter().map(write_scene)));
        staged.add(with_file, jsonl(with));
        staged.add(without_file, jsonl(without));
        Ok((staged, scenes.len()))
    })?;
    let (staged, n) = staged;
    staged.commit(&out)?;
    Ok(format!(
        "wrote {n} {name} scenes with ctr (with_map) and cv (without_map) predictions to {}\n",
        out.display()
    ))
}

/// Rebuilds the tables and failure list from the metric and classification
/// files of an earlier `evaluate` run in `from`.
pub fn run_report(cfg: &RunConfig, from: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| from.to_path_buf());
    let classes: Vec<ClassRow> = from_csv(&from.join(CLASSIFICATION_FILE))?;
    let records: Vec<MetricRecord> = from_csv(&from.join(METRICS_FILE))?;
    let partition = Partition::from_classes(classes.into_iter().map(SceneClass::from).collect())?;
    let reports = build_reports(&partition, &records, cfg)?;
    let mut staged = Staged::new();
    stage_reports(&mut staged, &reports, cfg.format);
    let n = staged.len();
    staged.commit(&out)?;
    Ok(format!(
        "rebuilt reports for {} scenes and {} records; wrote {n} files to {}\n",
        partition.len(),
        records.len(),
        out.display()
    ))
}
