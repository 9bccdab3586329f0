//! Stage drivers behind the command line: scan, analyze, bench, report.
//!
//! Each stage reads the previous stage's files under the output directory
//! and rewrites its own. Outputs are sorted and contain no timestamps, so a
//! rerun over the same inputs produces identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::adapter::{DeviceAdapter, ShellAdapter};
use crate::bench::sim::{SimProfile, SimulatedDevice};
use crate::bench::{run_jobs, BenchConfig, BenchJob, JobRecord, DEFAULT_BATTERY_VOLTAGE_V};
use crate::catalog::{FormatCatalog, OpTable, SignalTable};
use crate::corpus::{discover_packages, enumerate_candidates, extract_entry, ingest_package, AppPackage, CorpusError};
use crate::detect::{builtin_rules, validate_candidate, ValidationResult, Verdict};
use crate::fingerprint::{fingerprint, weight_sparsity, DEFAULT_SPARSITY_EPSILON};
use crate::ir::{parse_source, sha256_hex, ModelSource, PARSED_FRAMEWORKS};
use crate::metrics::model_stats;
use crate::optscan::{scan_cloud_apis, scan_native_libs, scan_optimizations};
use crate::records::{load_annotations, Annotation, ModelAnalysis, ModelRecord, PackageRecord, SkipRecord};
use crate::report::{build_report, export_csv, export_json, import_json, model_digests, CorpusReport, JSON_FILE};

pub const SCAN_FILE: &str = "scan/packages.json";
pub const MODELS_FILE: &str = "analyze/models.json";
pub const SKIPPED_FILE: &str = "analyze/skipped.json";
pub const CACHE_DIR: &str = "analyze/cache";
pub const BENCH_LOG: &str = "bench/results.jsonl";
pub const DEVICES_FILE: &str = "bench/devices.json";
pub const REPORT_DIR: &str = "report";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Decode { path: String, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} output not found; run that stage first")]
    MissingStage(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Simulator,
    Shell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: String,
    pub kind: DeviceKind,
    #[serde(default = "default_voltage")]
    pub battery_voltage_v: f64,
    /// adb serial for shell devices; defaults to the id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimProfile>,
}

fn default_voltage() -> f64 {
    DEFAULT_BATTERY_VOLTAGE_V
}

impl DeviceProfile {
    pub fn simulator(profile: SimProfile) -> Self {
        DeviceProfile {
            id: profile.device_id.clone(),
            kind: DeviceKind::Simulator,
            battery_voltage_v: DEFAULT_BATTERY_VOLTAGE_V,
            serial: None,
            simulator: Some(profile),
        }
    }

    fn adapter(&self) -> Box<dyn DeviceAdapter> {
        match self.kind {
            DeviceKind::Simulator => {
                let mut p = self.simulator.clone().unwrap_or_else(|| SimProfile::new(&self.id));
                p.device_id = self.id.clone();
                Box::new(SimulatedDevice::new(p))
            }
            DeviceKind::Shell => Box::new(ShellAdapter::new(self.serial.clone().unwrap_or_else(|| self.id.clone()))),
        }
    }
}

fn default_batches() -> Vec<u32> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Defaults to the corpus directory name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_label: Option<String>,
    /// Relative paths resolve against the corpus directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default = "default_epsilon")]
    pub sparsity_epsilon: f64,
    #[serde(default = "default_batches")]
    pub batch_sizes: Vec<u32>,
    #[serde(default = "default_bench")]
    pub bench: BenchConfig,
    #[serde(default = "default_devices", rename = "device")]
    pub devices: Vec<DeviceProfile>,
}

fn default_epsilon() -> f64 {
    DEFAULT_SPARSITY_EPSILON
}

fn default_bench() -> BenchConfig {
    BenchConfig { signal_deadline_ms: 10_000, ..BenchConfig::default() }
}

fn default_devices() -> Vec<DeviceProfile> {
    let mut sim = SimProfile::new("sim-0");
    sim.a_ms_per_flop = 1e-5;
    sim.b_ms = 2.0;
    sim.jitter_ms = 0.1;
    sim.seed = 42;
    vec![DeviceProfile::simulator(sim)]
}

impl Default for Config {
    fn default() -> Self {
        Config {
            snapshot_label: None,
            annotations: None,
            sparsity_epsilon: default_epsilon(),
            batch_sizes: default_batches(),
            bench: default_bench(),
            devices: default_devices(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let c: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.sparsity_epsilon >= 0.0 && self.sparsity_epsilon.is_finite()) {
            return bad(format!("sparsity_epsilon must be non-negative, got {}", self.sparsity_epsilon));
        }
        if self.batch_sizes.is_empty() {
            return bad("batch_sizes is empty".into());
        }
        for &b in &self.batch_sizes {
            BenchConfig { batch_size: b, ..self.bench.clone() }
                .check()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        let mut seen = BTreeSet::new();
        for d in &self.devices {
            if !seen.insert(&d.id) {
                return bad(format!("duplicate device id {:?}", d.id));
            }
            if !(d.battery_voltage_v > 0.0 && d.battery_voltage_v.is_finite()) {
                return bad(format!("device {}: battery_voltage_v must be positive", d.id));
            }
            if let Some(s) = &d.simulator {
                s.check().map_err(|m| PipelineError::Config(format!("device {}: {m}", d.id)))?;
            }
        }
        Ok(())
    }
}

pub struct Pipeline {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub config: Config,
    pub jobs: usize,
    catalog: FormatCatalog,
    signals: SignalTable,
    ops: OpTable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanSummary {
    pub packages: usize,
    pub unreadable: usize,
    pub valid_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzeSummary {
    pub models: usize,
    pub skipped: usize,
    pub cache_hits: usize,
}

/// Writes `bytes` through a temporary sibling so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("records serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Decode { path: path.display().to_string(), detail: e.to_string() })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Decode {
                path: format!("{}:{}", path.display(), i + 1),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Drops the last extension, keeping the directory.
fn stem(entry: &str) -> &str {
    let base_start = entry.rfind('/').map_or(0, |i| i + 1);
    match entry[base_start..].rfind('.') {
        Some(dot) if dot > 0 => &entry[..base_start + dot],
        _ => entry,
    }
}

fn companion_for(framework: &str, entry: &str) -> Option<(&'static str, bool)> {
    let lower = entry.to_ascii_lowercase();
    match framework {
        "caffe" if lower.ends_with(".prototxt") || lower.ends_with(".pbtxt") => Some((".caffemodel", false)),
        "caffe" if lower.ends_with(".caffemodel") => Some((".prototxt", true)),
        "ncnn" if lower.ends_with(".param") => Some((".bin", false)),
        _ => None,
    }
}

/// One parse attempt: primary entry plus an optional companion entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ModelUnit {
    entry: String,
    companion: Option<String>,
    frameworks: Vec<String>,
}

/// Groups valid candidates into parse units. A weights file whose structure
/// file is also present is folded into that file's unit.
fn model_units(pkg: &PackageRecord, entries: &BTreeSet<&str>) -> Vec<ModelUnit> {
    let mut by_entry: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in pkg.valid_candidates() {
        let fw = c.candidate.matched_framework.as_str();
        if PARSED_FRAMEWORKS.contains(&fw) {
            by_entry.entry(&c.candidate.entry_name).or_default().insert(fw);
        }
    }
    let valid_as = |entry: &str, fw: &str| by_entry.get(entry).is_some_and(|s| s.contains(fw));
    let mut units = Vec::new();
    for (entry, fws) in &by_entry {
        let mut frameworks = Vec::new();
        let mut companion = None;
        for fw in fws {
            match companion_for(fw, entry) {
                Some((ext, true)) => {
                    let structure = format!("{}{ext}", stem(entry));
                    if valid_as(&structure, fw) {
                        continue;
                    }
                }
                Some((ext, false)) => {
                    let other = format!("{}{ext}", stem(entry));
                    if entries.contains(other.as_str()) {
                        companion = Some(other);
                    }
                }
                None => {}
            }
            frameworks.push(fw.to_string());
        }
        if !frameworks.is_empty() {
            units.push(ModelUnit { entry: entry.to_string(), companion, frameworks });
        }
    }
    units
}

impl Pipeline {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>, config: Config, jobs: usize) -> Self {
        Pipeline {
            corpus: corpus.into(),
            out: out.into(),
            config,
            jobs: jobs.max(1),
            catalog: FormatCatalog::builtin(),
            signals: SignalTable::builtin(),
            ops: OpTable::builtin(),
        }
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build().expect("thread pool")
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn snapshot_label(&self) -> String {
        self.config.snapshot_label.clone().unwrap_or_else(|| {
            self.corpus.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }

    fn packages_by_id(&self) -> Result<HashMap<String, PathBuf>, PipelineError> {
        Ok(discover_packages(&self.corpus)?
            .into_iter()
            .map(|p| (crate::corpus::package_id(&p), p))
            .collect())
    }

    fn scan_package(&self, path: &Path) -> PackageRecord {
        let pkg = match ingest_package(path) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping package {}: {e}", path.display());
                return PackageRecord {
                    package_id: crate::corpus::package_id(path),
                    category: None,
                    entry_count: 0,
                    candidates: vec![],
                    native_libs: vec![],
                    cloud_apis: vec![],
                    error: Some(e.to_string()),
                };
            }
        };
        let mut bytes: HashMap<String, Option<Vec<u8>>> = HashMap::new();
        let mut candidates: Vec<ValidationResult> = enumerate_candidates(&pkg, &self.catalog)
            .into_iter()
            .map(|c| {
                let data = bytes.entry(c.entry_name.clone()).or_insert_with(|| match extract_entry(&pkg, &c.entry_name) {
                    Ok(b) => Some(b),
                    Err(e) => {
                        log::warn!("{}: cannot read {}: {e}", pkg.id, c.entry_name);
                        None
                    }
                });
                match data {
                    Some(d) => validate_candidate(builtin_rules(), &c, d),
                    None => ValidationResult { candidate: c, verdict: Verdict::Invalid, rule_fired: None },
                }
            })
            .collect();
        candidates.sort_by(|a, b| a.candidate.cmp(&b.candidate));
        log::info!("{}: {} candidates", pkg.id, candidates.len());
        PackageRecord {
            package_id: pkg.id.clone(),
            category: pkg.category().map(str::to_string),
            entry_count: pkg.entries.len(),
            candidates,
            native_libs: scan_native_libs(&pkg, &self.signals),
            cloud_apis: scan_cloud_apis(&pkg, &self.signals),
            error: None,
        }
    }

    pub fn scan(&self) -> Result<ScanSummary, PipelineError> {
        let paths = discover_packages(&self.corpus)?;
        let records: Vec<PackageRecord> = self.pool().install(|| paths.par_iter().map(|p| self.scan_package(p)).collect());
        write_json(&self.path(SCAN_FILE), &records)?;
        Ok(ScanSummary {
            packages: records.len(),
            unreadable: records.iter().filter(|r| r.error.is_some()).count(),
            valid_candidates: records.iter().map(|r| r.valid_candidates().count()).sum(),
        })
    }

    fn load_scan(&self) -> Result<Vec<PackageRecord>, PipelineError> {
        let p = self.path(SCAN_FILE);
        if !p.is_file() {
            return Err(PipelineError::MissingStage("scan"));
        }
        read_json(&p)
    }

    fn analyze_unit(&self, pkg: &AppPackage, rec: &PackageRecord, unit: &ModelUnit) -> Result<(ModelRecord, bool), SkipRecord> {
        let skip = |framework: &str, reason: String| SkipRecord {
            package_id: rec.package_id.clone(),
            entry: unit.entry.clone(),
            framework: framework.to_string(),
            reason,
        };
        let first = unit.frameworks[0].as_str();
        let primary = extract_entry(pkg, &unit.entry).map_err(|e| skip(first, e.to_string()))?;
        let companion = match &unit.companion {
            Some(c) => Some(extract_entry(pkg, c).map_err(|e| skip(first, e.to_string()))?),
            None => None,
        };
        let size_bytes = (primary.len() + companion.as_ref().map_or(0, Vec::len)) as u64;
        let mut last_err = String::new();
        for fw in &unit.frameworks {
            let parts: Vec<&[u8]> = std::iter::once(fw.as_bytes()).chain(std::iter::once(&primary[..])).chain(companion.as_deref()).collect();
            let key = sha256_hex(&parts);
            let cache = self.path(CACHE_DIR).join(format!("{key}.json"));
            let (analysis, hit) = match read_json::<ModelAnalysis>(&cache) {
                Ok(a) => (a, true),
                Err(_) => {
                    let mut src = ModelSource::new(fw, &primary);
                    if let Some(c) = &companion {
                        src = src.with_companion(c);
                    }
                    let g = match parse_source(&src, &self.ops) {
                        Ok(g) => g,
                        Err(e) => {
                            last_err = format!("{fw}: {e}");
                            continue;
                        }
                    };
                    let stats = match model_stats(&g) {
                        Ok(s) => s,
                        Err(e) => {
                            last_err = format!("{fw}: {e}");
                            continue;
                        }
                    };
                    let mut optimization = scan_optimizations(&g);
                    optimization.sparsity = weight_sparsity(&g, self.config.sparsity_epsilon).ok();
                    let a = ModelAnalysis { stats, fingerprint: fingerprint(&g), optimization };
                    if let Err(e) = write_json(&cache, &a) {
                        log::warn!("cache write failed: {e}");
                    }
                    (a, false)
                }
            };
            return Ok((
                ModelRecord {
                    package_id: rec.package_id.clone(),
                    entry: unit.entry.clone(),
                    companion: unit.companion.clone(),
                    framework: fw.clone(),
                    category: rec.category.clone(),
                    size_bytes,
                    analysis,
                },
                hit,
            ));
        }
        Err(skip(first, last_err))
    }

    pub fn analyze(&self) -> Result<AnalyzeSummary, PipelineError> {
        let scan = self.load_scan()?;
        let paths = self.packages_by_id()?;
        let outcomes: Vec<Vec<Result<(ModelRecord, bool), SkipRecord>>> = self.pool().install(|| {
            scan.par_iter()
                .filter(|r| r.error.is_none())
                .map(|rec| {
                    let pkg = match paths.get(&rec.package_id).map(|p| ingest_package(p)) {
                        Some(Ok(p)) => p,
                        other => {
                            let why = match other {
                                Some(Err(e)) => e.to_string(),
                                _ => "package no longer in corpus".to_string(),
                            };
                            log::warn!("{}: {why}", rec.package_id);
                            return vec![];
                        }
                    };
                    let entries: BTreeSet<&str> = pkg.entries.iter().map(|e| e.name.as_str()).collect();
                    model_units(rec, &entries).iter().map(|u| self.analyze_unit(&pkg, rec, u)).collect()
                })
                .collect()
        });
        let mut models = Vec::new();
        let mut skipped = Vec::new();
        let mut cache_hits = 0;
        for o in outcomes.into_iter().flatten() {
            match o {
                Ok((m, hit)) => {
                    cache_hits += usize::from(hit);
                    models.push(m);
                }
                Err(s) => {
                    log::warn!("skipped {}/{}: {}", s.package_id, s.entry, s.reason);
                    skipped.push(s);
                }
            }
        }
        models.sort_by(|a, b| (&a.package_id, &a.entry).cmp(&(&b.package_id, &b.entry)));
        skipped.sort();
        write_json(&self.path(MODELS_FILE), &models)?;
        write_json(&self.path(SKIPPED_FILE), &skipped)?;
        Ok(AnalyzeSummary { models: models.len(), skipped: skipped.len(), cache_hits })
    }

    fn load_models(&self) -> Result<Vec<ModelRecord>, PipelineError> {
        let p = self.path(MODELS_FILE);
        if !p.is_file() {
            return Err(PipelineError::MissingStage("analyze"));
        }
        read_json(&p)
    }

    /// One job per (device, unique model, batch size), in that order.
    pub fn bench_jobs(&self, models: &[ModelRecord]) -> Result<Vec<(BenchJob, Vec<u8>)>, PipelineError> {
        let mut reps: BTreeMap<&str, &ModelRecord> = BTreeMap::new();
        for m in models {
            reps.entry(m.digest()).or_insert(m);
        }
        let paths = self.packages_by_id()?;
        let mut payloads = BTreeMap::new();
        for (digest, m) in &reps {
            let path = paths
                .get(&m.package_id)
                .ok_or_else(|| PipelineError::Config(format!("package {} not in corpus", m.package_id)))?;
            let pkg = ingest_package(path)?;
            payloads.insert(*digest, extract_entry(&pkg, &m.entry)?);
        }
        let mut devices: Vec<&DeviceProfile> = self.config.devices.iter().collect();
        devices.sort_by(|a, b| a.id.cmp(&b.id));
        let mut jobs = Vec::new();
        for d in devices {
            for (digest, m) in &reps {
                let ext = m.entry.rsplit_once('.').map_or("bin", |(_, e)| e);
                for &batch in &self.config.batch_sizes {
                    let job = BenchJob {
                        job_id: format!("{}/{}/b{batch}", d.id, &digest[..16]),
                        model_id: digest.to_string(),
                        model_file: format!("{}.{ext}", &digest[..16]),
                        model_flops: m.analysis.stats.total_flops,
                        config: BenchConfig { batch_size: batch, ..self.config.bench.clone() },
                        device_id: d.id.clone(),
                    };
                    jobs.push((job, payloads[digest].clone()));
                }
            }
        }
        Ok(jobs)
    }

    pub fn bench(&self) -> Result<Vec<JobRecord>, PipelineError> {
        let models = self.load_models()?;
        let jobs = self.bench_jobs(&models)?;
        let adapters = self.config.devices.iter().map(DeviceProfile::adapter).collect();
        let mut log = Vec::new();
        let records = run_jobs(&jobs, adapters, &mut log).map_err(io_err(Path::new(BENCH_LOG)))?;
        write_atomic(&self.path(BENCH_LOG), &log)?;
        let voltages: BTreeMap<&str, f64> =
            self.config.devices.iter().map(|d| (d.id.as_str(), d.battery_voltage_v)).collect();
        write_json(&self.path(DEVICES_FILE), &voltages)?;
        Ok(records)
    }

    fn annotations(&self) -> Result<Vec<Annotation>, PipelineError> {
        let path = match &self.config.annotations {
            Some(p) => self.corpus.join(p),
            None => self.corpus.join(ANNOTATIONS_FILE),
        };
        if !path.is_file() {
            if self.config.annotations.is_some() {
                return Err(PipelineError::Config(format!("annotations file {} not found", path.display())));
            }
            log::warn!("no annotations file; task sections will be empty");
            return Ok(vec![]);
        }
        load_annotations(&path).map_err(PipelineError::Config)
    }

    fn optional<T>(&self, what: &str, loaded: Result<T, PipelineError>) -> Result<Option<T>, PipelineError> {
        match loaded {
            Ok(v) => Ok(Some(v)),
            Err(PipelineError::MissingStage(_)) => {
                log::warn!("no {what} output found");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Report for this output directory. `baseline` is another output
    /// directory to compare snapshots against.
    pub fn report(&self, baseline: Option<&Path>) -> Result<(CorpusReport, Vec<String>), PipelineError> {
        let packages = self.optional("scan", self.load_scan())?;
        let models = self.optional("analyze", self.load_models())?;
        let skipped: Vec<SkipRecord> = match self.path(SKIPPED_FILE) {
            p if p.is_file() => read_json(&p)?,
            _ => vec![],
        };
        let log = self.path(BENCH_LOG);
        let bench = if log.is_file() { Some(read_jsonl::<JobRecord>(&log)?) } else { None };
        let devices = self.path(DEVICES_FILE);
        let battery_voltage_v = if devices.is_file() { read_json(&devices)? } else { BTreeMap::new() };
        let baseline = baseline.map(load_snapshot).transpose()?;
        let inputs = crate::report::ReportInputs {
            snapshot_label: self.snapshot_label(),
            packages,
            models,
            skipped_models: skipped.len(),
            bench,
            annotations: self.annotations()?,
            battery_voltage_v,
            baseline,
        };
        let (report, warnings) = build_report(&inputs);
        for w in &warnings {
            log::warn!("{w}");
        }
        let dir = self.path(REPORT_DIR);
        if dir.is_dir() {
            for e in fs::read_dir(&dir).map_err(io_err(&dir))?.flatten() {
                if e.path().extension().is_some_and(|x| x == "csv") {
                    fs::remove_file(e.path()).map_err(io_err(&e.path()))?;
                }
            }
        }
        write_atomic(&dir.join(JSON_FILE), &export_json(&report))?;
        for (name, bytes) in export_csv(&report) {
            write_atomic(&dir.join(name), &bytes)?;
        }
        Ok((report, warnings))
    }
}

/// A previous snapshot: its report if one was written, otherwise its
/// analyze output.
pub fn load_snapshot(out_dir: &Path) -> Result<CorpusReport, PipelineError> {
    let report = out_dir.join(REPORT_DIR).join(JSON_FILE);
    if report.is_file() {
        let bytes = fs::read(&report).map_err(io_err(&report))?;
        return import_json(&bytes).map_err(|e| PipelineError::Decode { path: report.display().to_string(), detail: e.to_string() });
    }
    let models = out_dir.join(MODELS_FILE);
    if !models.is_file() {
        return Err(PipelineError::Config(format!("{} holds no report or analyze output", out_dir.display())));
    }
    let models: Vec<ModelRecord> = read_json(&models)?;
    let label = out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut r = CorpusReport::empty(label);
    r.model_digests = model_digests(&models);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        Config::default().check().unwrap();
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn config_parses_devices() {
        let c = Config::from_toml_str(
            r#"
snapshot_label = "2021"
batch_sizes = [1, 5]
[bench]
measured_runs = 3
[[device]]
id = "pixel"
kind = "simulator"
battery_voltage_v = 3.7
[device.simulator]
b_ms = 4.0
seed = 9
[[device]]
id = "a10"
kind = "shell"
serial = "R58M"
"#,
        )
        .unwrap();
        assert_eq!(c.devices.len(), 2);
        assert_eq!(c.devices[0].simulator.as_ref().unwrap().b_ms, 4.0);
        assert_eq!(c.bench.measured_runs, 3);
        assert_eq!(c.bench.warmup_runs, 5);
        assert!(Config::from_toml_str("batch_sizes = [3]").is_err());
        assert!(Config::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn stems_keep_directories() {
        assert_eq!(stem("assets/face.prototxt"), "assets/face");
        assert_eq!(stem("a.b/c"), "a.b/c");
        assert_eq!(stem("x.param"), "x");
    }
}
