//! Corpus-level aggregation and table/figure data exports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{
    mflops_per_sw, scenario_discharge, JobRecord, JobStatus, ScenarioSpec, DEFAULT_BATTERY_VOLTAGE_V,
};
use crate::fingerprint::{corpus_uniqueness, FingerprintRecord};
use crate::metrics::corpus_layer_histogram;
use crate::records::{Annotation, ModelRecord, PackageRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const UNCATEGORIZED: &str = "uncategorized";

pub const SECTIONS: &[&str] = &[
    "table2_totals",
    "fig4_layer_histograms",
    "fig9_flops_params_by_task",
    "fig5_latency_ecdf",
    "fig8_energy_power_efficiency",
    "table4_task_table",
    "table5_scenarios",
    "fig7_snapshot_diff",
    "fig10_cloud_apis",
    "optimization_summary",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("unsupported export format {0:?}")]
    UnsupportedFormat(String),
    #[error("unreadable report: {0}")]
    Parse(String),
    #[error("report schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },
}

/// Empirical CDF as `(value, fraction ≤ value)` pairs, strictly increasing
/// in value. Equal values collapse into one point.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, ReportError> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(ReportError::NonFinite(*bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == *v {
            continue;
        }
        out.push((*v, (i + 1) as f64 / n as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub apps: usize,
    pub apps_with_frameworks: usize,
    pub apps_with_models: usize,
    pub total_models: usize,
    pub unique_models: usize,
    pub shared_20_models: usize,
    pub fine_tuned_models: usize,
    pub skipped_models: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkCount {
    pub apps: usize,
    pub model_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub apps: usize,
    pub apps_with_models: usize,
    pub model_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table2 {
    pub totals: Totals,
    pub per_framework: BTreeMap<String, FrameworkCount>,
    pub per_category: BTreeMap<String, CategoryCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskModelRow {
    pub task: String,
    pub modality: String,
    pub model_id: String,
    pub flops: u64,
    pub params: u64,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub device: String,
    pub model_id: String,
    pub batch_size: u32,
    pub mean_latency_ms: f64,
    pub energy_per_inference_j: f64,
    pub mean_power_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency_mflop_per_sw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub modality: String,
    pub models: usize,
    pub unique_models: usize,
    pub apps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub package: String,
    pub entry: String,
    pub device: String,
    pub inference_count: u64,
    pub energy_per_inference_j: f64,
    pub battery_voltage_v: f64,
    pub discharge_mah: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDiff {
    pub category: String,
    pub additions: usize,
    pub removals: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub baseline: String,
    pub current: String,
    pub categories: Vec<CategoryDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorCount {
    pub apps: usize,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudApiSummary {
    pub apps_with_cloud_apis: usize,
    pub per_vendor: BTreeMap<String, VendorCount>,
    /// category -> vendor -> apps
    pub per_category: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRow {
    pub model_id: String,
    pub clustering: bool,
    pub pruning: bool,
    pub dequantize_layers: usize,
    pub int8_weight_fraction: f64,
    pub int8_activation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub models: usize,
    pub clustering: usize,
    pub pruning: usize,
    pub dequantize: usize,
    pub int8_weights: usize,
    pub int8_activation: usize,
    pub per_model: Vec<OptimizationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: u32,
    pub snapshot_label: String,
    /// category -> sorted model digests, kept for snapshot comparison
    #[serde(default)]
    pub model_digests: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table2_totals: Option<Table2>,
    /// modality -> layer category -> fraction
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig4_layer_histograms: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig9_flops_params_by_task: Option<Vec<TaskModelRow>>,
    /// device -> ECDF of mean single-input latency (ms)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig5_latency_ecdf: Option<BTreeMap<String, Vec<(f64, f64)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig8_energy_power_efficiency: Option<Vec<EnergyRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table4_task_table: Option<Vec<TaskRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table5_scenarios: Option<Vec<ScenarioRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig7_snapshot_diff: Option<SnapshotDiff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig10_cloud_apis: Option<CloudApiSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization_summary: Option<OptimizationSummary>,
}

impl CorpusReport {
    pub fn empty(snapshot_label: impl Into<String>) -> Self {
        CorpusReport {
            schema_version: SCHEMA_VERSION,
            snapshot_label: snapshot_label.into(),
            model_digests: BTreeMap::new(),
            table2_totals: None,
            fig4_layer_histograms: None,
            fig9_flops_params_by_task: None,
            fig5_latency_ecdf: None,
            fig8_energy_power_efficiency: None,
            table4_task_table: None,
            table5_scenarios: None,
            fig7_snapshot_diff: None,
            fig10_cloud_apis: None,
            optimization_summary: None,
        }
    }

    /// Names of the sections present, in canonical order.
    pub fn sections(&self) -> Vec<&'static str> {
        let present = [
            self.table2_totals.is_some(),
            self.fig4_layer_histograms.is_some(),
            self.fig9_flops_params_by_task.is_some(),
            self.fig5_latency_ecdf.is_some(),
            self.fig8_energy_power_efficiency.is_some(),
            self.table4_task_table.is_some(),
            self.table5_scenarios.is_some(),
            self.fig7_snapshot_diff.is_some(),
            self.fig10_cloud_apis.is_some(),
            self.optimization_summary.is_some(),
        ];
        SECTIONS.iter().zip(present).filter(|(_, p)| *p).map(|(s, _)| *s).collect()
    }
}

/// Stage outputs feeding a report. Absent stages leave their sections out.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub snapshot_label: String,
    pub packages: Option<Vec<PackageRecord>>,
    pub models: Option<Vec<ModelRecord>>,
    pub skipped_models: usize,
    pub bench: Option<Vec<JobRecord>>,
    pub annotations: Vec<Annotation>,
    /// device id -> battery voltage
    pub battery_voltage_v: BTreeMap<String, f64>,
    pub baseline: Option<CorpusReport>,
}

fn category_of(c: &Option<String>) -> String {
    c.clone().unwrap_or_else(|| UNCATEGORIZED.to_string())
}

fn annotation_index(annotations: &[Annotation]) -> HashMap<(&str, &str), &Annotation> {
    annotations.iter().map(|a| ((a.package.as_str(), a.entry.as_str()), a)).collect()
}

fn annotated<'a>(
    models: &'a [ModelRecord],
    index: &HashMap<(&str, &str), &'a Annotation>,
) -> Vec<(&'a ModelRecord, &'a Annotation)> {
    models
        .iter()
        .filter_map(|m| index.get(&(m.package_id.as_str(), m.entry.as_str())).map(|a| (m, *a)))
        .collect()
}

pub fn model_digests(models: &[ModelRecord]) -> BTreeMap<String, Vec<String>> {
    let mut by_cat: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in models {
        by_cat.entry(category_of(&m.category)).or_default().insert(m.digest().to_string());
    }
    by_cat.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// Per category: digests present in `b` but not `a` are additions, the
/// converse are removals. Sorted by additions − removals, then category.
pub fn diff_snapshots(a: &BTreeMap<String, Vec<String>>, b: &BTreeMap<String, Vec<String>>) -> Vec<CategoryDiff> {
    let empty = Vec::new();
    let cats: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let mut out: Vec<CategoryDiff> = cats
        .into_iter()
        .map(|c| {
            let old: BTreeSet<&String> = a.get(c).unwrap_or(&empty).iter().collect();
            let new: BTreeSet<&String> = b.get(c).unwrap_or(&empty).iter().collect();
            CategoryDiff {
                category: c.clone(),
                additions: new.difference(&old).count(),
                removals: old.difference(&new).count(),
            }
        })
        .collect();
    out.sort_by(|x, y| {
        let net = |d: &CategoryDiff| d.additions as i64 - d.removals as i64;
        net(x).cmp(&net(y)).then_with(|| x.category.cmp(&y.category))
    });
    out
}

fn table2(packages: &[PackageRecord], models: &[ModelRecord], skipped: usize) -> Table2 {
    let fps: Vec<FingerprintRecord> = models.iter().map(|m| m.analysis.fingerprint.clone()).collect();
    let u = corpus_uniqueness(&fps);
    let mut models_per_pkg: BTreeMap<&str, usize> = BTreeMap::new();
    let mut per_framework: BTreeMap<String, FrameworkCount> = BTreeMap::new();
    for m in models {
        *models_per_pkg.entry(&m.package_id).or_default() += 1;
        per_framework
            .entry(m.framework.clone())
            .or_insert(FrameworkCount { apps: 0, model_count: 0 })
            .model_count += 1;
    }
    let mut per_category: BTreeMap<String, CategoryCount> = BTreeMap::new();
    let mut apps_with_frameworks = 0;
    let mut apps_with_models = 0;
    for p in packages {
        let frameworks = p.frameworks();
        for f in &frameworks {
            per_framework.entry(f.clone()).or_insert(FrameworkCount { apps: 0, model_count: 0 }).apps += 1;
        }
        let has_fw = !frameworks.is_empty();
        let has_model = p.valid_candidates().next().is_some();
        apps_with_frameworks += usize::from(has_fw);
        apps_with_models += usize::from(has_model);
        let c = per_category
            .entry(category_of(&p.category))
            .or_insert(CategoryCount { apps: 0, apps_with_models: 0, model_count: 0 });
        c.apps += 1;
        c.apps_with_models += usize::from(has_model);
        c.model_count += models_per_pkg.get(p.package_id.as_str()).copied().unwrap_or(0);
    }
    Table2 {
        totals: Totals {
            apps: packages.len(),
            apps_with_frameworks,
            apps_with_models,
            total_models: models.len(),
            unique_models: u.unique_count,
            shared_20_models: u.shared_20_count,
            fine_tuned_models: u.fine_tuned_count,
            skipped_models: skipped,
        },
        per_framework,
        per_category,
    }
}

fn fig9(pairs: &[(&ModelRecord, &Annotation)]) -> Vec<TaskModelRow> {
    let rows: BTreeSet<(String, String, String, u64, u64, bool)> = pairs
        .iter()
        .map(|(m, a)| {
            let s = &m.analysis.stats;
            (a.task.clone(), a.modality.clone(), m.model_id().to_string(), s.total_flops, s.total_params, s.incomplete)
        })
        .collect();
    rows.into_iter()
        .map(|(task, modality, model_id, flops, params, incomplete)| TaskModelRow {
            task,
            modality,
            model_id,
            flops,
            params,
            incomplete,
        })
        .collect()
}

fn table4(pairs: &[(&ModelRecord, &Annotation)]) -> Vec<TaskRow> {
    let mut groups: BTreeMap<(String, String), (usize, BTreeSet<&str>, BTreeSet<&str>)> = BTreeMap::new();
    for (m, a) in pairs {
        let g = groups.entry((a.task.clone(), a.modality.clone())).or_default();
        g.0 += 1;
        g.1.insert(m.digest());
        g.2.insert(&m.package_id);
    }
    groups
        .into_iter()
        .map(|((task, modality), (models, digests, apps))| TaskRow {
            task,
            modality,
            models,
            unique_models: digests.len(),
            apps: apps.len(),
        })
        .collect()
}

fn optimization(models: &[ModelRecord]) -> OptimizationSummary {
    let mut by_id: BTreeMap<&str, &ModelRecord> = BTreeMap::new();
    for m in models {
        by_id.entry(m.model_id()).or_insert(m);
    }
    let per_model: Vec<OptimizationRow> = by_id
        .into_iter()
        .map(|(id, m)| {
            let o = &m.analysis.optimization;
            OptimizationRow {
                model_id: id.to_string(),
                clustering: o.clustering.present,
                pruning: o.pruning.present,
                dequantize_layers: o.quantization.dequantize_layers,
                int8_weight_fraction: o.quantization.int8_weight_fraction,
                int8_activation: o.quantization.int8_activation,
                sparsity: o.sparsity,
            }
        })
        .collect();
    OptimizationSummary {
        models: per_model.len(),
        clustering: per_model.iter().filter(|r| r.clustering).count(),
        pruning: per_model.iter().filter(|r| r.pruning).count(),
        dequantize: per_model.iter().filter(|r| r.dequantize_layers > 0).count(),
        int8_weights: per_model.iter().filter(|r| r.int8_weight_fraction > 0.0).count(),
        int8_activation: per_model.iter().filter(|r| r.int8_activation).count(),
        per_model,
    }
}

fn cloud_apis(packages: &[PackageRecord]) -> CloudApiSummary {
    let mut per_vendor: BTreeMap<String, VendorCount> = BTreeMap::new();
    let mut per_category: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut apps = 0;
    for p in packages {
        let vendors: BTreeSet<&str> = p.cloud_apis.iter().map(|h| h.vendor.as_str()).collect();
        apps += usize::from(!vendors.is_empty());
        for h in &p.cloud_apis {
            per_vendor.entry(h.vendor.as_str().to_string()).or_insert(VendorCount { apps: 0, hits: 0 }).hits += 1;
        }
        for v in vendors {
            per_vendor.get_mut(v).expect("vendor counted above").apps += 1;
            *per_category.entry(category_of(&p.category)).or_default().entry(v.to_string()).or_default() += 1;
        }
    }
    CloudApiSummary { apps_with_cloud_apis: apps, per_vendor, per_category }
}

fn ok_results(jobs: &[JobRecord]) -> impl Iterator<Item = (&JobRecord, &crate::bench::BenchResult)> {
    jobs.iter()
        .filter(|j| j.status == JobStatus::Ok)
        .filter_map(|j| j.result.as_ref().map(|r| (j, r)))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fig5(jobs: &[JobRecord]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut per_device: BTreeMap<String, BTreeMap<&str, f64>> = BTreeMap::new();
    for (j, r) in ok_results(jobs).filter(|(j, r)| j.batch_size == 1 && !r.latencies_ms.is_empty()) {
        per_device.entry(j.device_id.clone()).or_default().insert(&j.model_id, mean(&r.latencies_ms));
    }
    per_device
        .into_iter()
        .filter_map(|(d, lat)| {
            let values: Vec<f64> = lat.into_values().collect();
            ecdf(&values).ok().map(|e| (d, e))
        })
        .collect()
}

fn fig8(jobs: &[JobRecord]) -> Vec<EnergyRow> {
    let mut rows: Vec<EnergyRow> = ok_results(jobs)
        .map(|(j, r)| EnergyRow {
            device: j.device_id.clone(),
            model_id: j.model_id.clone(),
            batch_size: j.batch_size,
            mean_latency_ms: if r.latencies_ms.is_empty() { 0.0 } else { mean(&r.latencies_ms) },
            energy_per_inference_j: r.energy_per_inference_j,
            mean_power_w: r.mean_power_w,
            efficiency_mflop_per_sw: r.efficiency_flops_per_j.map(mflops_per_sw),
        })
        .collect();
    rows.sort_by(|a, b| (&a.device, &a.model_id, a.batch_size).cmp(&(&b.device, &b.model_id, b.batch_size)));
    rows.dedup_by(|a, b| (&a.device, &a.model_id, a.batch_size) == (&b.device, &b.model_id, b.batch_size));
    rows
}

fn table5(
    pairs: &[(&ModelRecord, &Annotation)],
    jobs: &[JobRecord],
    voltages: &BTreeMap<String, f64>,
) -> Vec<ScenarioRow> {
    let mut energy: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for (j, r) in ok_results(jobs).filter(|(j, _)| j.batch_size == 1) {
        energy.entry((j.model_id.as_str(), j.device_id.as_str())).or_insert(r.energy_per_inference_j);
    }
    let mut rows = Vec::new();
    for (m, a) in pairs {
        let Some(s) = a.scenario else { continue };
        let spec = ScenarioSpec::for_scenario(s, a.audio_window_s);
        for ((_, device), e) in energy.range((m.digest(), "")..).take_while(|((id, _), _)| *id == m.digest()) {
            let v = voltages.get(*device).copied().unwrap_or(DEFAULT_BATTERY_VOLTAGE_V);
            rows.push(ScenarioRow {
                scenario: s.as_str().to_string(),
                package: a.package.clone(),
                entry: a.entry.clone(),
                device: device.to_string(),
                inference_count: spec.inference_count,
                energy_per_inference_j: *e,
                battery_voltage_v: v,
                discharge_mah: scenario_discharge(&spec, *e, v),
            });
        }
    }
    rows.sort_by(|a, b| {
        (&a.scenario, &a.package, &a.entry, &a.device).cmp(&(&b.scenario, &b.package, &b.entry, &b.device))
    });
    rows
}

/// Builds every section whose inputs are available. The second value lists
/// one warning per omitted section.
pub fn build_report(inputs: &ReportInputs) -> (CorpusReport, Vec<String>) {
    let mut r = CorpusReport::empty(inputs.snapshot_label.clone());
    let mut warnings = Vec::new();
    let mut omit = |section: &str, why: &str| warnings.push(format!("{section} omitted: {why}"));
    let index = annotation_index(&inputs.annotations);
    let pairs = inputs.models.as_deref().map(|m| annotated(m, &index));

    match (&inputs.packages, &inputs.models) {
        (Some(p), Some(m)) => r.table2_totals = Some(table2(p, m, inputs.skipped_models)),
        _ => omit("table2_totals", "needs scan and analyze output"),
    }
    match &pairs {
        Some(pairs) => {
            let hist = corpus_layer_histogram(pairs.iter().map(|(m, a)| (&m.analysis.stats, a.modality.as_str())));
            r.fig4_layer_histograms = Some(hist);
            r.fig9_flops_params_by_task = Some(fig9(pairs));
            r.table4_task_table = Some(table4(pairs));
        }
        None => {
            for s in ["fig4_layer_histograms", "fig9_flops_params_by_task", "table4_task_table"] {
                omit(s, "needs analyze output");
            }
        }
    }
    match &inputs.bench {
        Some(jobs) => {
            r.fig5_latency_ecdf = Some(fig5(jobs));
            r.fig8_energy_power_efficiency = Some(fig8(jobs));
            match &pairs {
                Some(pairs) => r.table5_scenarios = Some(table5(pairs, jobs, &inputs.battery_voltage_v)),
                None => omit("table5_scenarios", "needs analyze output"),
            }
        }
        None => {
            for s in ["fig5_latency_ecdf", "fig8_energy_power_efficiency", "table5_scenarios"] {
                omit(s, "no bench output");
            }
        }
    }
    if let Some(m) = &inputs.models {
        r.model_digests = model_digests(m);
        r.optimization_summary = Some(optimization(m));
    } else {
        omit("optimization_summary", "needs analyze output");
    }
    match (&inputs.baseline, &inputs.models) {
        (Some(base), Some(_)) => {
            r.fig7_snapshot_diff = Some(SnapshotDiff {
                baseline: base.snapshot_label.clone(),
                current: r.snapshot_label.clone(),
                categories: diff_snapshots(&base.model_digests, &r.model_digests),
            })
        }
        (Some(_), None) => omit("fig7_snapshot_diff", "needs analyze output"),
        (None, _) => {}
    }
    match &inputs.packages {
        Some(p) => r.fig10_cloud_apis = Some(cloud_apis(p)),
        None => omit("fig10_cloud_apis", "needs scan output"),
    }
    (r, warnings)
}

// ---- export ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub const JSON_FILE: &str = "report.json";

/// `(file name, bytes)` pairs: one JSON document, or one CSV per table.
pub fn export(report: &CorpusReport, format: &str) -> Result<Vec<(String, Vec<u8>)>, ReportError> {
    Ok(match format.parse::<ExportFormat>()? {
        ExportFormat::Json => vec![(JSON_FILE.to_string(), export_json(report))],
        ExportFormat::Csv => export_csv(report),
    })
}

/// Pretty JSON with object keys sorted at every level.
pub fn export_json(report: &CorpusReport) -> Vec<u8> {
    let mut v = serde_json::to_value(report).expect("report serializes");
    v.sort_all_objects();
    let mut out = serde_json::to_vec_pretty(&v).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn import_json(bytes: &[u8]) -> Result<CorpusReport, ReportError> {
    let r: CorpusReport = serde_json::from_slice(bytes).map_err(|e| ReportError::Parse(e.to_string()))?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(ReportError::SchemaVersion { found: r.schema_version });
    }
    Ok(r)
}

struct Table {
    name: &'static str,
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn tables(r: &CorpusReport) -> Vec<Table> {
    let mut out = Vec::new();
    if let Some(t) = &r.table2_totals {
        let tt = &t.totals;
        out.push(Table {
            name: "table2_totals",
            header: &["metric", "value"],
            rows: [
                ("apps", tt.apps),
                ("apps_with_frameworks", tt.apps_with_frameworks),
                ("apps_with_models", tt.apps_with_models),
                ("total_models", tt.total_models),
                ("unique_models", tt.unique_models),
                ("shared_20_models", tt.shared_20_models),
                ("fine_tuned_models", tt.fine_tuned_models),
                ("skipped_models", tt.skipped_models),
            ]
            .iter()
            .map(|(k, v)| vec![k.to_string(), v.to_string()])
            .collect(),
        });
        out.push(Table {
            name: "table2_frameworks",
            header: &["framework", "model_count"],
            rows: t.per_framework.iter().map(|(f, c)| vec![f.clone(), c.model_count.to_string()]).collect(),
        });
        out.push(Table {
            name: "table2_framework_apps",
            header: &["framework", "apps"],
            rows: t.per_framework.iter().map(|(f, c)| vec![f.clone(), c.apps.to_string()]).collect(),
        });
        out.push(Table {
            name: "table2_categories",
            header: &["category", "apps", "apps_with_models", "model_count"],
            rows: t
                .per_category
                .iter()
                .map(|(k, c)| {
                    vec![k.clone(), c.apps.to_string(), c.apps_with_models.to_string(), c.model_count.to_string()]
                })
                .collect(),
        });
    }
    if let Some(h) = &r.fig4_layer_histograms {
        out.push(Table {
            name: "fig4_layer_histograms",
            header: &["modality", "layer_type", "fraction"],
            rows: h
                .iter()
                .flat_map(|(m, cats)| cats.iter().map(move |(c, f)| vec![m.clone(), c.clone(), f.to_string()]))
                .collect(),
        });
    }
    if let Some(rows) = &r.fig9_flops_params_by_task {
        out.push(Table {
            name: "fig9_flops_params_by_task",
            header: &["task", "modality", "model_id", "flops", "params", "incomplete"],
            rows: rows
                .iter()
                .map(|x| {
                    vec![
                        x.task.clone(),
                        x.modality.clone(),
                        x.model_id.clone(),
                        x.flops.to_string(),
                        x.params.to_string(),
                        x.incomplete.to_string(),
                    ]
                })
                .collect(),
        });
    }
    if let Some(e) = &r.fig5_latency_ecdf {
        out.push(Table {
            name: "fig5_latency_ecdf",
            header: &["device", "latency_ms", "fraction"],
            rows: e
                .iter()
                .flat_map(|(d, pts)| pts.iter().map(move |(v, f)| vec![d.clone(), v.to_string(), f.to_string()]))
                .collect(),
        });
    }
    if let Some(rows) = &r.fig8_energy_power_efficiency {
        out.push(Table {
            name: "fig8_energy_power_efficiency",
            header: &[
                "device",
                "model_id",
                "batch_size",
                "mean_latency_ms",
                "energy_per_inference_j",
                "mean_power_w",
                "efficiency_mflop_per_sw",
            ],
            rows: rows
                .iter()
                .map(|x| {
                    vec![
                        x.device.clone(),
                        x.model_id.clone(),
                        x.batch_size.to_string(),
                        x.mean_latency_ms.to_string(),
                        x.energy_per_inference_j.to_string(),
                        x.mean_power_w.to_string(),
                        opt(x.efficiency_mflop_per_sw),
                    ]
                })
                .collect(),
        });
    }
    if let Some(rows) = &r.table4_task_table {
        out.push(Table {
            name: "table4_task_table",
            header: &["task", "modality", "models", "unique_models", "apps"],
            rows: rows
                .iter()
                .map(|x| {
                    vec![
                        x.task.clone(),
                        x.modality.clone(),
                        x.models.to_string(),
                        x.unique_models.to_string(),
                        x.apps.to_string(),
                    ]
                })
                .collect(),
        });
    }
    if let Some(rows) = &r.table5_scenarios {
        out.push(Table {
            name: "table5_scenarios",
            header: &[
                "scenario",
                "package",
                "entry",
                "device",
                "inference_count",
                "energy_per_inference_j",
                "battery_voltage_v",
                "discharge_mah",
            ],
            rows: rows
                .iter()
                .map(|x| {
                    vec![
                        x.scenario.clone(),
                        x.package.clone(),
                        x.entry.clone(),
                        x.device.clone(),
                        x.inference_count.to_string(),
                        x.energy_per_inference_j.to_string(),
                        x.battery_voltage_v.to_string(),
                        x.discharge_mah.to_string(),
                    ]
                })
                .collect(),
        });
    }
    if let Some(d) = &r.fig7_snapshot_diff {
        out.push(Table {
            name: "fig7_snapshot_diff",
            header: &["category", "additions", "removals"],
            rows: d
                .categories
                .iter()
                .map(|c| vec![c.category.clone(), c.additions.to_string(), c.removals.to_string()])
                .collect(),
        });
    }
    if let Some(c) = &r.fig10_cloud_apis {
        out.push(Table {
            name: "fig10_cloud_apis",
            header: &["vendor", "apps", "hits"],
            rows: c
                .per_vendor
                .iter()
                .map(|(v, n)| vec![v.clone(), n.apps.to_string(), n.hits.to_string()])
                .collect(),
        });
        out.push(Table {
            name: "fig10_cloud_apis_by_category",
            header: &["category", "vendor", "apps"],
            rows: c
                .per_category
                .iter()
                .flat_map(|(cat, vs)| vs.iter().map(move |(v, n)| vec![cat.clone(), v.clone(), n.to_string()]))
                .collect(),
        });
    }
    if let Some(o) = &r.optimization_summary {
        out.push(Table {
            name: "optimization_summary",
            header: &[
                "model_id",
                "clustering",
                "pruning",
                "dequantize_layers",
                "int8_weight_fraction",
                "int8_activation",
                "sparsity",
            ],
            rows: o
                .per_model
                .iter()
                .map(|x| {
                    vec![
                        x.model_id.clone(),
                        x.clustering.to_string(),
                        x.pruning.to_string(),
                        x.dequantize_layers.to_string(),
                        x.int8_weight_fraction.to_string(),
                        x.int8_activation.to_string(),
                        opt(x.sparsity),
                    ]
                })
                .collect(),
        });
    }
    out
}

pub fn export_csv(report: &CorpusReport) -> Vec<(String, Vec<u8>)> {
    tables(report)
        .into_iter()
        .map(|t| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(t.header).expect("in-memory write");
            for row in &t.rows {
                w.write_record(row).expect("in-memory write");
            }
            (format!("{}.csv", t.name), w.into_inner().expect("in-memory flush"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_collapses_duplicates() {
        assert_eq!(ecdf(&[1.0, 2.0, 2.0, 4.0]).unwrap(), vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]);
        assert_eq!(ecdf(&[]), Err(ReportError::EmptyInput));
        assert!(matches!(ecdf(&[1.0, f64::NAN]), Err(ReportError::NonFinite(_))));
    }

    fn digests(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs.iter().map(|(c, d)| (c.to_string(), d.iter().map(|s| s.to_string()).collect())).collect()
    }

    #[test]
    fn diff_counts_category_moves_twice() {
        let a = digests(&[("games", &["x", "y"]), ("tools", &["z"])]);
        let b = digests(&[("games", &["x"]), ("tools", &["z", "y", "w"]), ("music", &["m"])]);
        let d = diff_snapshots(&a, &b);
        let get = |c: &str| d.iter().find(|x| x.category == c).unwrap().clone();
        assert_eq!((get("games").additions, get("games").removals), (0, 1));
        assert_eq!((get("tools").additions, get("tools").removals), (2, 0));
        assert_eq!((get("music").additions, get("music").removals), (1, 0));
        let order: Vec<&str> = d.iter().map(|x| x.category.as_str()).collect();
        assert_eq!(order, ["games", "music", "tools"]);
        assert!(diff_snapshots(&a, &a).iter().all(|x| x.additions == 0 && x.removals == 0));
    }

    #[test]
    fn unsupported_format_is_rejected() {
        let r = CorpusReport::empty("s");
        assert_eq!(export(&r, "xlsx"), Err(ReportError::UnsupportedFormat("xlsx".into())));
        assert_eq!(export(&r, "json").unwrap()[0].0, JSON_FILE);
    }

    #[test]
    fn json_round_trips_with_sorted_keys() {
        let mut r = CorpusReport::empty("2021-03");
        r.fig5_latency_ecdf = Some(BTreeMap::from([("dev".to_string(), ecdf(&[0.1, 0.2, 0.30000000000000004]).unwrap())]));
        r.fig7_snapshot_diff = Some(SnapshotDiff {
            baseline: "a".into(),
            current: "b".into(),
            categories: vec![CategoryDiff { category: "games".into(), additions: 1, removals: 0 }],
        });
        let bytes = export_json(&r);
        assert_eq!(import_json(&bytes).unwrap(), r);
        let text = String::from_utf8(bytes.clone()).unwrap();
        let keys: Vec<usize> = ["fig5_latency_ecdf", "fig7_snapshot_diff", "model_digests", "schema_version", "snapshot_label"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert_eq!(export_json(&import_json(&bytes).unwrap()), bytes);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut r = CorpusReport::empty("s");
        r.schema_version = 99;
        let bytes = serde_json::to_vec(&r).unwrap();
        assert_eq!(import_json(&bytes), Err(ReportError::SchemaVersion { found: 99 }));
    }

    #[test]
    fn csv_tables_have_fixed_headers() {
        let mut r = CorpusReport::empty("s");
        r.table2_totals = Some(Table2 {
            totals: Totals {
                apps: 2,
                apps_with_frameworks: 1,
                apps_with_models: 1,
                total_models: 3,
                unique_models: 2,
                shared_20_models: 0,
                fine_tuned_models: 0,
                skipped_models: 0,
            },
            per_framework: BTreeMap::from([("tflite".to_string(), FrameworkCount { apps: 1, model_count: 3 })]),
            per_category: BTreeMap::new(),
        });
        let files = export_csv(&r);
        let fw = files.iter().find(|(n, _)| n == "table2_frameworks.csv").unwrap();
        assert_eq!(String::from_utf8(fw.1.clone()).unwrap(), "framework,model_count\ntflite,3\n");
        let cats = files.iter().find(|(n, _)| n == "table2_categories.csv").unwrap();
        assert_eq!(String::from_utf8(cats.1.clone()).unwrap(), "category,apps,apps_with_models,model_count\n");
    }
}
