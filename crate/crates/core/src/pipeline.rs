//! Stage orchestration over a run directory. Every stage reads its
//! predecessor's files and writes its own, so stages can be rerun or resumed
//! independently.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Augmenter};
use crate::clustering::{assign_sqi, density_ratio_guard, hdbscan, kmeans, ClusterResult, FrozenGate, HdbscanParams, Scaler, NOISE};
use crate::conditioning::{condition_trace, ConditioningConfig, RawTrace, Window};
use crate::encoder::{embed_corpus, load_checkpoint, save_checkpoint, train, Encoder, EncoderConfig, TrainFailure, TrainTelemetry};
use crate::error::{param_err, Error, Result};
use crate::io::{self, ClusterRow, FeatureFile, SignatureRow};
use crate::matrix::Matrix;
use crate::metrics::{agreement, prevalence_match, template_sqi, validity, BaselineConfig, NoisePolicy, ValidityReport};
use crate::rng::derive_key;
use crate::topology::{signatures, TopoConfig, TopoSignature};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const KMEANS_STREAM: u64 = 0x4b4d_4541;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    /// `None` means `max(25, ceil(n / 100))`.
    pub min_cluster_size: Option<usize>,
    /// `None` means equal to the minimum cluster size.
    pub min_samples: Option<usize>,
    pub density_ratio_threshold: f64,
    pub kmeans_k: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: None,
            min_samples: None,
            density_ratio_threshold: 1.5,
            kmeans_k: 2,
        }
    }
}

impl ClusteringConfig {
    pub fn params(&self, n: usize) -> HdbscanParams {
        let auto = HdbscanParams::for_corpus(n);
        let min_cluster_size = self.min_cluster_size.unwrap_or(auto.min_cluster_size);
        HdbscanParams {
            min_cluster_size,
            min_samples: self.min_samples.unwrap_or(min_cluster_size),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// `None` scores the binary SQI partition with noise folded into poor.
    pub noise_policy: Option<NoisePolicy>,
}

/// Which stages `run` executes. A disabled stage reuses the artifact already
/// in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub train: bool,
    pub embed: bool,
    pub topo: bool,
    pub cluster: bool,
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { train: true, embed: true, topo: true, cluster: true, evaluate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; it replaces `encoder.seed` when the config is resolved.
    pub seed: u64,
    pub stages: StageToggles,
    pub conditioning: ConditioningConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub topology: TopoConfig,
    pub clustering: ClusteringConfig,
    pub metrics: MetricsConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: StageToggles::default(),
            conditioning: ConditioningConfig::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::desk(),
            topology: TopoConfig::default(),
            clustering: ClusteringConfig::default(),
            metrics: MetricsConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format { what: "config", detail: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Parameter(format!("config {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    /// Applies a seed override, propagates the seed and checks every
    /// cross-field constraint.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        self.encoder.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.conditioning.validate()?;
        Augmenter::new(self.augment.clone())?;
        self.encoder.validate()?;
        self.topology.validate()?;
        self.baseline.validate()?;
        if self.encoder.input_len != self.conditioning.win_len {
            return param_err(format!(
                "encoder.input_len {} differs from conditioning.win_len {}",
                self.encoder.input_len, self.conditioning.win_len
            ));
        }
        if self.augment.fs_hz != self.conditioning.target_fs_hz {
            return param_err(format!(
                "augment.fs_hz {} differs from conditioning.target_fs_hz {}",
                self.augment.fs_hz, self.conditioning.target_fs_hz
            ));
        }
        let c = &self.clustering;
        if c.min_cluster_size.is_some_and(|m| m < 2) || c.min_samples.is_some_and(|m| m < 1) {
            return param_err("clustering.min_cluster_size must be >= 2 and min_samples >= 1");
        }
        if !(c.density_ratio_threshold.is_finite() && c.density_ratio_threshold > 0.0) {
            return param_err("clustering.density_ratio_threshold must be positive");
        }
        if c.kmeans_k < 2 {
            return param_err("clustering.kmeans_k must be >= 2");
        }
        Ok(())
    }
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn windows(&self) -> PathBuf {
        self.root.join("windows.ppgw")
    }
    pub fn window_index(&self) -> PathBuf {
        self.root.join("windows.csv")
    }
    pub fn condition_report(&self) -> PathBuf {
        self.root.join("condition.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("encoder.pgck")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.jsonl")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.pgfe")
    }
    pub fn signatures_csv(&self) -> PathBuf {
        self.root.join("signatures.csv")
    }
    pub fn signatures_bin(&self) -> PathBuf {
        self.root.join("signatures.pgts")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.csv")
    }
    pub fn cluster_summary(&self) -> PathBuf {
        self.root.join("clusters.json")
    }
    pub fn gate_model(&self) -> PathBuf {
        self.root.join("gate_model.json")
    }
    pub fn truth(&self) -> PathBuf {
        self.root.join("truth.csv")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    /// Records a stage duration; zero when `deterministic` is set.
    pub fn record_timing(&self, stage: &str, started: Instant, deterministic: bool) -> Result<()> {
        let path = self.timings();
        let mut timings: BTreeMap<String, f64> = if path.exists() { io::read_json(&path)? } else { BTreeMap::new() };
        let secs = if deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
        timings.insert(stage.to_string(), secs);
        io::write_json(&path, &timings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInput {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub inputs: usize,
    pub traces: usize,
    pub windows: usize,
    pub degenerate: usize,
    pub skipped: Vec<SkippedInput>,
}

/// Like [`condition_trace`], but a trace too short for a single window
/// (including an empty one) simply yields no windows.
pub fn condition_or_empty(trace: &RawTrace, cfg: &ConditioningConfig) -> Result<Vec<Window>> {
    let resampled_len = trace.samples.len() as f64 * cfg.target_fs_hz / trace.fs_hz;
    if trace.samples.is_empty() || resampled_len.round() < cfg.win_len as f64 {
        return Ok(Vec::new());
    }
    condition_trace(trace, cfg)
}

/// Reads and conditions every input. Unreadable or malformed files are
/// skipped and listed; it is an error only when nothing could be read.
pub fn condition_inputs(paths: &[PathBuf], cfg: &ConditioningConfig) -> Result<(Vec<Window>, ConditionSummary)> {
    if paths.is_empty() {
        return param_err("no inputs");
    }
    let mut windows = Vec::new();
    let mut summary = ConditionSummary { inputs: paths.len(), traces: 0, windows: 0, degenerate: 0, skipped: Vec::new() };
    for path in paths {
        match io::read_trace(path).and_then(|t| condition_or_empty(&t, cfg)) {
            Ok(w) => {
                summary.traces += 1;
                windows.extend(w);
            }
            Err(e) => summary.skipped.push(SkippedInput { path: path.display().to_string(), error: e.to_string() }),
        }
    }
    if summary.traces == 0 {
        return Err(Error::Format {
            what: "inputs",
            detail: format!("none of the {} inputs could be read", paths.len()),
        });
    }
    summary.windows = windows.len();
    summary.degenerate = windows.iter().filter(|w| w.degenerate).count();
    Ok((windows, summary))
}

pub fn stage_condition(dir: &RunDir, cfg: &RunConfig, inputs: &[PathBuf], deterministic: bool) -> Result<ConditionSummary> {
    let started = Instant::now();
    let (windows, summary) = condition_inputs(inputs, &cfg.conditioning)?;
    io::write_windows(&dir.windows(), &dir.window_index(), &windows, cfg.conditioning.win_len)?;
    io::write_json(&dir.condition_report(), &summary)?;
    dir.record_timing("condition", started, deterministic)?;
    Ok(summary)
}

/// Writes an already conditioned corpus, e.g. from the synthetic generator.
pub fn stage_import_windows(dir: &RunDir, cfg: &RunConfig, windows: &[Window], truth: Option<&[u8]>) -> Result<()> {
    io::write_windows(&dir.windows(), &dir.window_index(), windows, cfg.conditioning.win_len)?;
    let summary = ConditionSummary {
        inputs: 0,
        traces: 0,
        windows: windows.len(),
        degenerate: windows.iter().filter(|w| w.degenerate).count(),
        skipped: Vec::new(),
    };
    io::write_json(&dir.condition_report(), &summary)?;
    if let Some(truth) = truth {
        io::write_truth_csv(&dir.truth(), truth)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    #[serde(flatten)]
    pub telemetry: TrainTelemetry,
    pub timestamp_unix_s: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn usable(windows: &[Window]) -> (Vec<u64>, Vec<Window>) {
    windows
        .iter()
        .enumerate()
        .filter(|(_, w)| !w.degenerate)
        .map(|(i, w)| (i as u64, w.clone()))
        .unzip()
}

/// Trains the encoder on the non-degenerate windows and writes the
/// checkpoint plus a JSON-lines log. On divergence the last good parameters
/// are still saved before the error is returned.
pub fn stage_train(
    dir: &RunDir,
    cfg: &RunConfig,
    deterministic: bool,
    mut on_epoch: impl FnMut(&TrainTelemetry),
) -> Result<Vec<TrainTelemetry>> {
    let started = Instant::now();
    let windows = io::read_windows(&dir.windows(), &dir.window_index())?;
    let (_, corpus) = usable(&windows);
    let encoder = Encoder::new(&cfg.encoder)?;
    let augmenter = Augmenter::new(cfg.augment.clone())?;
    let mut log = std::io::BufWriter::new(fs::File::create(dir.train_log())?);
    let mut log_err = None;
    let result = train(&encoder, &augmenter, &corpus, encoder.init_params::<f32>(cfg.seed), |t| {
        let mut t = t.clone();
        if deterministic {
            t.wall_time_s = 0.0;
        }
        let record = TrainLogRecord { telemetry: t.clone(), timestamp_unix_s: unix_now() };
        if let Err(e) = serde_json::to_writer(&mut log, &record).map_err(Error::from).and_then(|_| Ok(writeln!(log)?)) {
            log_err.get_or_insert(e);
        }
        on_epoch(&t);
    });
    log.flush()?;
    if let Some(e) = log_err {
        return Err(e);
    }
    match result {
        Ok(trained) => {
            save_checkpoint(&dir.checkpoint(), &cfg.encoder, &trained.params)?;
            dir.record_timing("train", started, deterministic)?;
            Ok(trained.telemetry)
        }
        Err(TrainFailure::Diverged { epoch, detail, last_good }) => {
            save_checkpoint(&dir.checkpoint(), &cfg.encoder, &last_good.params)?;
            Err(Error::Training { epoch, detail })
        }
        Err(TrainFailure::Invalid(e)) => Err(e),
    }
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainTelemetry>> {
    let text = String::from_utf8(io::read_artifact(path)?).map_err(|_| Error::Format { what: "train log", detail: "not UTF-8".into() })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<TrainLogRecord>(l)?.telemetry))
        .collect()
}

/// Loads a checkpoint and checks it against the configured window length.
pub fn load_encoder(path: &Path, cfg: &RunConfig) -> Result<(Encoder, crate::encoder::EncoderParams<f32>)> {
    let (enc_cfg, params) = load_checkpoint(path)?;
    if enc_cfg.input_len != cfg.conditioning.win_len {
        return Err(Error::ModelMismatch(format!(
            "checkpoint expects windows of {} samples, configuration produces {}",
            enc_cfg.input_len, cfg.conditioning.win_len
        )));
    }
    let encoder = Encoder::new(&enc_cfg)?;
    Ok((encoder, params))
}

pub fn stage_embed(dir: &RunDir, cfg: &RunConfig, deterministic: bool) -> Result<FeatureFile> {
    let started = Instant::now();
    let windows = io::read_windows(&dir.windows(), &dir.window_index())?;
    let (encoder, params) = load_encoder(&dir.checkpoint(), cfg)?;
    let (ids, corpus) = usable(&windows);
    let features = embed_corpus(&encoder, &params, &corpus)?;
    let file = FeatureFile { window_ids: ids, features };
    io::write_features(&dir.features(), &file)?;
    dir.record_timing("embed", started, deterministic)?;
    Ok(file)
}

pub fn stage_topo(dir: &RunDir, cfg: &RunConfig, deterministic: bool) -> Result<Vec<SignatureRow>> {
    let started = Instant::now();
    let file = io::read_features(&dir.features())?;
    let sigs = signatures(&file.features, &cfg.topology)?;
    let rows: Vec<SignatureRow> = file.window_ids.iter().zip(&sigs).map(|(&id, s)| SignatureRow::new(id, s)).collect();
    io::write_signatures_csv(&dir.signatures_csv(), &rows)?;
    io::write_signatures_bin(&dir.signatures_bin(), &rows)?;
    dir.record_timing("topo", started, deterministic)?;
    Ok(rows)
}

pub fn signature_matrix(rows: &[SignatureRow]) -> Result<Matrix> {
    Matrix::from_vec(rows.len(), 4, rows.iter().flat_map(|r| r.signature().to_array()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub n_windows: usize,
    pub n_clustered: usize,
    pub n_degenerate: usize,
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub sizes: Vec<usize>,
    pub stabilities: Vec<f64>,
    pub noise: usize,
    pub clean_cluster_id: i64,
    /// `null` when only one cluster was found.
    pub density_ratio: Option<f64>,
    pub low_confidence: bool,
    /// Share of all windows with SQI clean.
    pub acceptance_rate: f64,
    /// Shares of the clustered windows per cluster, then noise.
    pub cluster_shares: Vec<f64>,
    pub noise_share: f64,
}

/// The frozen model written next to the cluster labels for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub win_len: usize,
    pub topology: TopoConfig,
    pub gate: FrozenGate,
}

/// Per-window SQI over the whole corpus: degenerate windows are poor.
pub fn full_sqi(n_windows: usize, ids: &[u64], result: &ClusterResult) -> Vec<u8> {
    let mut sqi = vec![0u8; n_windows];
    for (&id, &s) in ids.iter().zip(&result.sqi) {
        sqi[id as usize] = s;
    }
    sqi
}

pub fn stage_cluster(dir: &RunDir, cfg: &RunConfig, deterministic: bool) -> Result<ClusterSummary> {
    let started = Instant::now();
    let rows = io::read_signatures_csv(&dir.signatures_csv())?;
    let windows = io::read_windows(&dir.windows(), &dir.window_index())?;
    let n_windows = windows.len();
    if let Some(r) = rows.iter().find(|r| r.window_id as usize >= n_windows || windows[r.window_id as usize].degenerate) {
        return Err(Error::Format {
            what: "signatures",
            detail: format!("window_id {} is not a usable window of this corpus", r.window_id),
        });
    }
    let raw = signature_matrix(&rows)?;
    let scaler = Scaler::fit(&raw)?;
    let z = scaler.transform(&raw)?;
    let params = cfg.clustering.params(rows.len());
    let result = assign_sqi(hdbscan(&z, &params)?)?;

    let mut out: Vec<ClusterRow> = (0..n_windows as u64)
        .map(|id| ClusterRow { window_id: id, label: NOISE, sqi: 0, core_distance: None })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        out[r.window_id as usize] = ClusterRow {
            window_id: r.window_id,
            label: result.labels[i],
            sqi: result.sqi[i],
            core_distance: Some(result.core_distances[i]),
        };
    }
    io::write_cluster_csv(&dir.clusters(), &out)?;

    let sizes = result.cluster_sizes();
    let noise = result.labels.iter().filter(|&&l| l == NOISE).count();
    let n = rows.len() as f64;
    let accepted = out.iter().filter(|r| r.sqi == 1).count();
    let summary = ClusterSummary {
        n_windows,
        n_clustered: rows.len(),
        n_degenerate: windows.iter().filter(|w| w.degenerate).count(),
        min_cluster_size: params.min_cluster_size,
        min_samples: params.min_samples,
        cluster_shares: sizes.iter().map(|&s| s as f64 / n).collect(),
        sizes,
        stabilities: result.stabilities.clone(),
        noise,
        clean_cluster_id: result.clean_cluster_id,
        density_ratio: result.density_ratio.is_finite().then_some(result.density_ratio),
        low_confidence: density_ratio_guard(result.density_ratio, cfg.clustering.density_ratio_threshold),
        acceptance_rate: accepted as f64 / n_windows as f64,
        noise_share: noise as f64 / n,
    };
    io::write_json(&dir.cluster_summary(), &summary)?;
    let model = GateModel {
        win_len: cfg.conditioning.win_len,
        topology: cfg.topology.clone(),
        gate: FrozenGate::fit(scaler, &z, &result)?,
    };
    io::write_json(&dir.gate_model(), &model)?;
    dir.record_timing("cluster", started, deterministic)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub initial_mean_view_cosine: f64,
    pub final_mean_view_cosine: f64,
}

impl TrainingSummary {
    pub fn from_log(log: &[TrainTelemetry]) -> Option<Self> {
        let (first, last) = (log.first()?, log.last()?);
        Some(Self {
            epochs: log.len(),
            initial_loss: first.loss,
            final_loss: last.loss,
            loss_ratio: last.loss / first.loss,
            initial_mean_view_cosine: first.mean_view_cosine,
            final_mean_view_cosine: last.mean_view_cosine,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_windows: usize,
    pub n_degenerate: usize,
    pub n_sources: usize,
    pub win_len: usize,
}

/// One validity evaluation; `error` is set when the metrics are undefined
/// (for instance a single label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityEntry {
    pub space: String,
    pub labels: String,
    pub report: Option<ValidityReport>,
    pub error: Option<String>,
}

fn validity_entry(space: &str, labels_name: &str, points: &Matrix, labels: &[i64], policy: Option<NoisePolicy>) -> ValidityEntry {
    match validity(points, labels, policy) {
        Ok(report) => ValidityEntry { space: space.into(), labels: labels_name.into(), report: Some(report), error: None },
        Err(e) => ValidityEntry { space: space.into(), labels: labels_name.into(), report: None, error: Some(e.to_string()) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub n_clusters: usize,
    pub acceptance_rate: Option<f64>,
    pub validity: ValidityEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub q: f64,
    pub accepted: usize,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub pipeline_agreement: f64,
    pub baseline_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: RunConfig,
    pub timings_s: BTreeMap<String, f64>,
    pub corpus: CorpusStats,
    pub training: Option<TrainingSummary>,
    pub clusters: ClusterSummary,
    /// Headline scores under `metrics.noise_policy`.
    pub validity: ValidityEntry,
    /// Signature and embedding space, binary and raw labels, both noise policies.
    pub validity_grid: Vec<ValidityEntry>,
    pub ablations: Vec<AblationArm>,
    pub baseline: BaselineSummary,
    pub ground_truth: Option<TruthSummary>,
}

fn binary_labels(sqi: &[u8]) -> Vec<i64> {
    sqi.iter().map(|&s| s as i64).collect()
}

fn hdbscan_arm(name: &str, points: &Matrix, params: &HdbscanParams, policy: Option<NoisePolicy>) -> Result<AblationArm> {
    let out = hdbscan(points, params)?;
    let n_clusters = out.stabilities.len();
    Ok(match assign_sqi(out) {
        Ok(result) => {
            let labels = if policy.is_some() { result.labels.clone() } else { binary_labels(&result.sqi) };
            AblationArm {
                name: name.into(),
                n_clusters,
                acceptance_rate: Some(result.acceptance_rate()),
                validity: validity_entry(name, label_set(policy), points, &labels, policy),
            }
        }
        Err(Error::NoCleanStratum) => AblationArm {
            name: name.into(),
            n_clusters,
            acceptance_rate: None,
            validity: ValidityEntry {
                space: name.into(),
                labels: label_set(policy).into(),
                report: None,
                error: Some(Error::NoCleanStratum.to_string()),
            },
        },
        Err(e) => return Err(e),
    })
}

fn label_set(policy: Option<NoisePolicy>) -> &'static str {
    match policy {
        None => "binary_sqi",
        Some(NoisePolicy::NoiseAsCluster) => "raw_noise_as_cluster",
        Some(NoisePolicy::NoiseExcluded) => "raw_noise_excluded",
    }
}

fn kmeans_arm(name: &str, points: &Matrix, k: usize, seed: u64) -> Result<AblationArm> {
    let km = kmeans(points, k, seed)?;
    Ok(AblationArm {
        name: name.into(),
        n_clusters: k,
        acceptance_rate: None,
        validity: validity_entry(name, "kmeans", points, &km.labels, None),
    })
}

/// Builds the run report from the persisted artifacts alone.
pub fn stage_evaluate(dir: &RunDir, cfg: &RunConfig, deterministic: bool) -> Result<RunReport> {
    let started = Instant::now();
    let windows = io::read_windows(&dir.windows(), &dir.window_index())?;
    let features = io::read_features(&dir.features())?;
    let sig_rows = io::read_signatures_csv(&dir.signatures_csv())?;
    let cluster_rows = io::read_cluster_csv(&dir.clusters())?;
    let clusters: ClusterSummary = io::read_json(&dir.cluster_summary())?;
    if cluster_rows.len() != windows.len() || features.window_ids.len() != sig_rows.len() {
        return Err(Error::Format {
            what: "run directory",
            detail: "window, feature, signature and cluster files disagree in length; rerun the stages".into(),
        });
    }
    let training = if dir.train_log().exists() { TrainingSummary::from_log(&read_train_log(&dir.train_log())?) } else { None };

    let sig_z = crate::clustering::standardize(&signature_matrix(&sig_rows)?)?;
    let feats = &features.features;
    let by_id: Vec<&ClusterRow> = sig_rows.iter().map(|r| &cluster_rows[r.window_id as usize]).collect();
    let raw_labels: Vec<i64> = by_id.iter().map(|r| r.label).collect();
    let bin_labels: Vec<i64> = by_id.iter().map(|r| r.sqi as i64).collect();
    let policy = cfg.metrics.noise_policy;

    let headline_labels = if policy.is_some() { &raw_labels } else { &bin_labels };
    let headline = validity_entry("signatures", label_set(policy), &sig_z, headline_labels, policy);
    let mut grid = Vec::new();
    for (space, points) in [("signatures", &sig_z), ("embeddings", feats)] {
        grid.push(validity_entry(space, "binary_sqi", points, &bin_labels, None));
        for p in [NoisePolicy::NoiseAsCluster, NoisePolicy::NoiseExcluded] {
            grid.push(validity_entry(space, label_set(Some(p)), points, &raw_labels, Some(p)));
        }
    }

    let params = cfg.clustering.params(sig_rows.len());
    let kseed = derive_key(cfg.seed, &[KMEANS_STREAM]);
    let k = cfg.clustering.kmeans_k;
    let ablations = vec![
        AblationArm {
            name: "ssl_ph_hdbscan".into(),
            n_clusters: clusters.sizes.len(),
            acceptance_rate: Some(clusters.acceptance_rate),
            validity: ValidityEntry { space: "ssl_ph_hdbscan".into(), ..headline.clone() },
        },
        kmeans_arm("ssl_ph_kmeans", &sig_z, k, kseed)?,
        hdbscan_arm("ssl_hdbscan", feats, &params, policy)?,
        kmeans_arm("ssl_kmeans", feats, k, kseed)?,
    ];

    let sqi: Vec<u8> = cluster_rows.iter().map(|r| r.sqi).collect();
    let q = cfg.baseline.q.unwrap_or(clusters.acceptance_rate);
    let scores: Vec<f64> = windows
        .iter()
        .map(|w| if w.degenerate { 0.0 } else { template_sqi(&w.samples, cfg.conditioning.target_fs_hz, &cfg.baseline) })
        .collect();
    let base = prevalence_match(&scores, q)?;
    let baseline = BaselineSummary {
        q,
        accepted: base.iter().filter(|&&b| b == 1).count(),
        agreement: agreement(&sqi, &base)?,
    };
    let ground_truth = if dir.truth().exists() {
        let truth = io::read_truth_csv(&dir.truth())?;
        if truth.len() != windows.len() || truth.iter().enumerate().any(|(i, t)| t.window_id as usize != i) {
            return Err(Error::Format { what: "truth", detail: "truth rows do not match the windows".into() });
        }
        let t: Vec<u8> = truth.iter().map(|t| t.truth).collect();
        Some(TruthSummary { pipeline_agreement: agreement(&sqi, &t)?, baseline_agreement: agreement(&base, &t)? })
    } else {
        None
    };

    dir.record_timing("evaluate", started, deterministic)?;
    let timings_s: BTreeMap<String, f64> = io::read_json(&dir.timings())?;
    let mut sources: Vec<&str> = windows.iter().map(|w| w.source_id.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        deterministic,
        config: cfg.clone(),
        timings_s,
        corpus: CorpusStats {
            n_windows: windows.len(),
            n_degenerate: windows.iter().filter(|w| w.degenerate).count(),
            n_sources: sources.len(),
            win_len: cfg.conditioning.win_len,
        },
        training,
        clusters,
        validity: headline,
        validity_grid: grid,
        ablations,
        baseline,
        ground_truth,
    };
    io::write_json(&dir.report(), &report)?;
    Ok(report)
}

/// Runs the enabled stages after conditioning.
pub fn run_stages(dir: &RunDir, cfg: &RunConfig, deterministic: bool, on_epoch: impl FnMut(&TrainTelemetry)) -> Result<Option<RunReport>> {
    if cfg.stages.train {
        stage_train(dir, cfg, deterministic, on_epoch)?;
    }
    if cfg.stages.embed {
        stage_embed(dir, cfg, deterministic)?;
    }
    if cfg.stages.topo {
        stage_topo(dir, cfg, deterministic)?;
    }
    if cfg.stages.cluster {
        stage_cluster(dir, cfg, deterministic)?;
    }
    if cfg.stages.evaluate {
        return stage_evaluate(dir, cfg, deterministic).map(Some);
    }
    Ok(None)
}

/// Frozen inference: windows in, one SQI per window out.
pub struct Gate {
    encoder: Encoder,
    params: crate::encoder::EncoderParams<f32>,
    model: GateModel,
}

impl Gate {
    pub fn load(checkpoint: &Path, model: &Path, cfg: &RunConfig) -> Result<Self> {
        let (encoder, params) = load_encoder(checkpoint, cfg)?;
        let model: GateModel = io::read_json(model)?;
        if model.win_len != cfg.conditioning.win_len {
            return Err(Error::ModelMismatch(format!(
                "gate model was fitted on windows of {} samples, configuration produces {}",
                model.win_len, cfg.conditioning.win_len
            )));
        }
        if model.gate.dim() != TopoSignature::NAMES.len() || model.gate.centroids.iter().any(|c| c.len() != model.gate.dim()) {
            return Err(Error::ModelMismatch(format!("gate model has dimension {}, signatures have 4", model.gate.dim())));
        }
        Ok(Self { encoder, params, model })
    }

    pub fn classify(&self, windows: &[Window]) -> Result<Vec<u8>> {
        if let Some(w) = windows.iter().find(|w| w.samples.len() != self.encoder.config().input_len) {
            return Err(Error::ModelMismatch(format!(
                "window has {} samples, encoder expects {}",
                w.samples.len(),
                self.encoder.config().input_len
            )));
        }
        let (ids, usable) = usable(windows);
        let mut sqi = vec![0u8; windows.len()];
        if usable.is_empty() {
            return Ok(sqi);
        }
        let feats = embed_corpus(&self.encoder, &self.params, &usable)?;
        let sigs = signatures(&feats, &self.model.topology)?;
        for (&id, s) in ids.iter().zip(&sigs) {
            sqi[id as usize] = self.model.gate.classify(&s.to_array());
        }
        Ok(sqi)
    }
}
