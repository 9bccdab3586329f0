//! Benchmark orchestration against device adapters, energy integration,
//! efficiency and battery-discharge scenarios.

pub mod adapter;
pub mod signal;
pub mod sim;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapter::{AdapterError, DeviceAdapter, DeviceCommand, RunSpec, ShellAdapter};
pub use signal::SignalListener;
pub use sim::{SimProfile, SimulatedDevice};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 5000.0;
pub const DEFAULT_BATTERY_VOLTAGE_V: f64 = 3.85;
pub const BATCH_SIZES: [u32; 5] = [1, 2, 5, 10, 25];

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BenchError {
    #[error("adapter timed out in state {0:?}")]
    AdapterTimeout(JobState),
    #[error("device refused: {0}")]
    DeviceRefused(String),
    #[error("completion signal not received within {0} ms")]
    SignalLost(u64),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("bad device report: {0}")]
    BadReport(String),
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("power trace is empty")]
    EmptyTrace,
    #[error("power trace shorter than the measured window")]
    TraceTooShort,
    #[error("zero energy")]
    ZeroEnergy,
}

fn d_warmup() -> u32 {
    5
}
fn d_measured() -> u32 {
    20
}
fn d_sleep() -> u64 {
    50
}
fn one() -> u32 {
    1
}
fn d_deadline() -> u64 {
    120_000
}
fn d_poll() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "d_warmup")]
    pub warmup_runs: u32,
    #[serde(default = "d_measured")]
    pub measured_runs: u32,
    #[serde(default = "d_sleep")]
    pub inter_run_sleep_ms: u64,
    #[serde(default = "one")]
    pub batch_size: u32,
    #[serde(default = "one")]
    pub threads: u32,
    /// Pin to this many top cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affinity: Option<u32>,
    #[serde(default = "d_deadline")]
    pub signal_deadline_ms: u64,
    #[serde(default = "d_poll")]
    pub poll_interval_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup_runs: d_warmup(),
            measured_runs: d_measured(),
            inter_run_sleep_ms: d_sleep(),
            batch_size: 1,
            threads: 1,
            affinity: None,
            signal_deadline_ms: d_deadline(),
            poll_interval_ms: d_poll(),
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.measured_runs < 1 {
            return bad("measured_runs must be at least 1".into());
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return bad(format!("batch_size {} not one of {BATCH_SIZES:?}", self.batch_size));
        }
        if self.threads < 1 {
            return bad("threads must be at least 1".into());
        }
        if let Some(a) = self.affinity {
            if a > self.threads {
                return bad(format!("affinity {a} exceeds {} threads", self.threads));
            }
        }
        if self.poll_interval_ms == 0 {
            return bad("poll_interval_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchJob {
    pub job_id: String,
    pub model_id: String,
    /// File name of the model on the device.
    pub model_file: String,
    /// FLOPs of one single-sample inference.
    pub model_flops: u64,
    pub config: BenchConfig,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub baseline_w: f64,
}

impl PowerTrace {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// What the device harness writes after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub job_id: String,
    pub warmup_ms: Vec<f64>,
    pub measured_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub job_id: String,
    pub latencies_ms: Vec<f64>,
    /// Net of baseline.
    pub energy_j: f64,
    pub mean_power_w: f64,
    pub throughput_ips: f64,
    pub efficiency_flops_per_j: Option<f64>,
    pub energy_per_inference_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Push,
    AssertState,
    PowerOff,
    WaitPowerOff,
    Warmup,
    Measure,
    Signal,
    PowerOn,
    Collect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Ok,
    Failed,
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub model_id: String,
    pub device_id: String,
    pub batch_size: u32,
    pub status: JobStatus,
    pub states: Vec<JobState>,
    pub signal_received: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BenchError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<BenchResult>,
}

impl JobRecord {
    pub fn state_reached(&self) -> Option<JobState> {
        self.states.last().copied()
    }
}

/// E = Σ max(Pᵢ − baseline, 0) / rate over the first `window_s` seconds.
/// Negative net power is clamped to zero.
pub fn integrate_energy(trace: &PowerTrace, window_s: f64) -> Result<f64, BenchError> {
    if trace.samples.is_empty() {
        return Err(BenchError::EmptyTrace);
    }
    let n = (window_s * trace.sample_rate_hz).round() as usize;
    if n > trace.samples.len() {
        return Err(BenchError::TraceTooShort);
    }
    let net: f64 = trace.samples[..n].iter().map(|p| (p - trace.baseline_w).max(0.0)).sum();
    Ok(net / trace.sample_rate_hz)
}

/// FLOPs per joule, numerically equal to FLOP/s per watt.
pub fn efficiency(total_flops: u64, energy_j: f64) -> Result<f64, BenchError> {
    if energy_j <= 0.0 {
        return Err(BenchError::ZeroEnergy);
    }
    Ok(total_flops as f64 / energy_j)
}

/// FLOPs per joule rendered as MFLOP/sW.
pub fn mflops_per_sw(flops_per_j: f64) -> f64 {
    flops_per_j / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "sound_recognition_1h")]
    SoundRecognition1h,
    #[serde(rename = "typing_275_words")]
    Typing275Words,
    #[serde(rename = "segmentation_1h_15fps")]
    Segmentation1h15fps,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SoundRecognition1h => "sound_recognition_1h",
            Scenario::Typing275Words => "typing_275_words",
            Scenario::Segmentation1h15fps => "segmentation_1h_15fps",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        [Scenario::SoundRecognition1h, Scenario::Typing275Words, Scenario::Segmentation1h15fps]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

pub const DEFAULT_AUDIO_WINDOW_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: Scenario,
    pub inference_count: u64,
    pub note: String,
}

impl ScenarioSpec {
    pub fn segmentation_1h_15fps() -> Self {
        ScenarioSpec {
            name: Scenario::Segmentation1h15fps,
            inference_count: 15 * 3600,
            note: "15 frames/s for one hour".into(),
        }
    }

    pub fn typing_275_words() -> Self {
        ScenarioSpec {
            name: Scenario::Typing275Words,
            inference_count: 275,
            note: "one next-word prediction per word".into(),
        }
    }

    pub fn sound_recognition_1h(audio_window_s: f64) -> Self {
        let w = if audio_window_s > 0.0 { audio_window_s } else { DEFAULT_AUDIO_WINDOW_S };
        ScenarioSpec {
            name: Scenario::SoundRecognition1h,
            inference_count: (3600.0 / w).ceil() as u64,
            note: format!("one inference per {w} s audio window for one hour"),
        }
    }

    pub fn for_scenario(s: Scenario, audio_window_s: Option<f64>) -> Self {
        match s {
            Scenario::Segmentation1h15fps => Self::segmentation_1h_15fps(),
            Scenario::Typing275Words => Self::typing_275_words(),
            Scenario::SoundRecognition1h => Self::sound_recognition_1h(audio_window_s.unwrap_or(DEFAULT_AUDIO_WINDOW_S)),
        }
    }
}

/// mAh = count × E / (V × 3600) × 1000.
pub fn scenario_discharge(spec: &ScenarioSpec, per_inference_energy_j: f64, battery_voltage_v: f64) -> f64 {
    spec.inference_count as f64 * per_inference_energy_j / (battery_voltage_v * 3600.0) * 1000.0
}

fn adapter_err(state: JobState, e: AdapterError) -> BenchError {
    match e {
        AdapterError::Timeout => BenchError::AdapterTimeout(state),
        AdapterError::Refused(m) => BenchError::DeviceRefused(m),
        AdapterError::Transport(m) => BenchError::Transport(m),
    }
}

fn reduce(job: &BenchJob, report: DeviceReport, trace: PowerTrace) -> Result<BenchResult, BenchError> {
    let cfg = &job.config;
    if report.job_id != job.job_id {
        return Err(BenchError::BadReport(format!("report for {:?}", report.job_id)));
    }
    if report.measured_ms.len() != cfg.measured_runs as usize {
        return Err(BenchError::BadReport(format!(
            "{} measured latencies, expected {}",
            report.measured_ms.len(),
            cfg.measured_runs
        )));
    }
    let busy_s: f64 = report.measured_ms.iter().sum::<f64>() / 1000.0;
    let energy_j = integrate_energy(&trace, trace.duration_s())?;
    let inferences = cfg.measured_runs as u64 * cfg.batch_size as u64;
    let executed = job.model_flops.saturating_mul(inferences);
    Ok(BenchResult {
        job_id: job.job_id.clone(),
        latencies_ms: report.measured_ms,
        energy_j,
        mean_power_w: if busy_s > 0.0 { energy_j / busy_s } else { 0.0 },
        throughput_ips: if busy_s > 0.0 { inferences as f64 / busy_s } else { 0.0 },
        efficiency_flops_per_j: efficiency(executed, energy_j).ok(),
        energy_per_inference_j: energy_j / inferences as f64,
    })
}

fn parse_file<T: for<'de> Deserialize<'de>>(files: &[(String, Vec<u8>)], name: &str) -> Result<T, BenchError> {
    let (_, data) = files
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| BenchError::BadReport(format!("{name} missing")))?;
    serde_json::from_slice(data).map_err(|e| BenchError::BadReport(format!("{name}: {e}")))
}

/// Drives one job through the full state machine. Failures are recorded in
/// the returned record together with every state entered.
pub fn run_job(job: &BenchJob, payload: &[u8], adapter: &mut dyn DeviceAdapter) -> JobRecord {
    let mut states = Vec::new();
    let mut signal_received = false;
    let outcome = drive(job, payload, adapter, &mut states, &mut signal_received);
    if outcome.is_err() && states.contains(&JobState::PowerOff) && !states.contains(&JobState::PowerOn) {
        let _ = adapter.set_power(true);
    }
    let (status, error, result) = match outcome {
        Ok(r) => (JobStatus::Ok, None, Some(r)),
        Err(e) => {
            log::warn!("job {} failed in {:?}: {e}", job.job_id, states.last());
            (JobStatus::Failed, Some(e), None)
        }
    };
    JobRecord {
        job_id: job.job_id.clone(),
        model_id: job.model_id.clone(),
        device_id: job.device_id.clone(),
        batch_size: job.config.batch_size,
        status,
        states,
        signal_received,
        error,
        result,
    }
}

fn drive(
    job: &BenchJob,
    payload: &[u8],
    adapter: &mut dyn DeviceAdapter,
    states: &mut Vec<JobState>,
    signal_received: &mut bool,
) -> Result<BenchResult, BenchError> {
    let cfg = &job.config;
    cfg.check()?;

    states.push(JobState::Push);
    adapter
        .push(&[(job.model_file.clone(), payload.to_vec())])
        .map_err(|e| adapter_err(JobState::Push, e))?;

    states.push(JobState::AssertState);
    let listener = SignalListener::bind(Duration::from_millis(cfg.poll_interval_ms))
        .map_err(|e| BenchError::Transport(e.to_string()))?;
    let spec = RunSpec {
        job_id: job.job_id.clone(),
        model_file: job.model_file.clone(),
        model_flops: job.model_flops,
        warmup_runs: cfg.warmup_runs,
        measured_runs: cfg.measured_runs,
        inter_run_sleep_ms: cfg.inter_run_sleep_ms,
        batch_size: cfg.batch_size,
        threads: cfg.threads,
        affinity: cfg.affinity,
        signal_addr: listener.addr(),
    };
    adapter
        .exec(&DeviceCommand::Arm(spec))
        .map_err(|e| adapter_err(JobState::AssertState, e))?;

    states.push(JobState::PowerOff);
    adapter.set_power(false).map_err(|e| adapter_err(JobState::PowerOff, e))?;

    // the device runs unobserved until its signal arrives
    states.extend([JobState::WaitPowerOff, JobState::Warmup, JobState::Measure, JobState::Signal]);
    let deadline = Duration::from_millis(cfg.signal_deadline_ms);
    if adapter.await_signal(&listener, &job.job_id, deadline).is_none() {
        return Err(BenchError::SignalLost(cfg.signal_deadline_ms));
    }
    *signal_received = true;

    states.push(JobState::PowerOn);
    adapter.set_power(true).map_err(|e| adapter_err(JobState::PowerOn, e))?;

    states.push(JobState::Collect);
    let files = adapter
        .pull(&[adapter::REPORT_FILE, adapter::TRACE_FILE])
        .map_err(|e| adapter_err(JobState::Collect, e))?;
    let report: DeviceReport = parse_file(&files, adapter::REPORT_FILE)?;
    let trace: PowerTrace = parse_file(&files, adapter::TRACE_FILE)?;
    reduce(job, report, trace)
}

/// Runs jobs with one worker per device and strictly serial execution on
/// each device. Records are written by a single writer in job order, so the
/// log does not depend on scheduling.
pub fn run_jobs<W: Write>(
    jobs: &[(BenchJob, Vec<u8>)],
    adapters: Vec<Box<dyn DeviceAdapter>>,
    log: &mut W,
) -> std::io::Result<Vec<JobRecord>> {
    let mut by_device: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (job, _)) in jobs.iter().enumerate() {
        by_device.entry(job.device_id.clone()).or_default().push(i);
    }
    let mut adapters: BTreeMap<String, Box<dyn DeviceAdapter>> =
        adapters.into_iter().map(|a| (a.device_id().to_string(), a)).collect();
    let (tx, rx) = mpsc::channel::<(usize, JobRecord)>();
    let mut records: Vec<Option<JobRecord>> = vec![None; jobs.len()];
    let mut next = 0;
    std::thread::scope(|scope| -> std::io::Result<()> {
        for (device, idx) in by_device {
            let tx = tx.clone();
            match adapters.remove(&device) {
                Some(mut adapter) => {
                    scope.spawn(move || {
                        for i in idx {
                            let (job, payload) = &jobs[i];
                            let rec = run_job(job, payload, adapter.as_mut());
                            if tx.send((i, rec)).is_err() {
                                break;
                            }
                        }
                    });
                }
                None => {
                    for i in idx {
                        let job = &jobs[i].0;
                        let rec = JobRecord {
                            job_id: job.job_id.clone(),
                            model_id: job.model_id.clone(),
                            device_id: job.device_id.clone(),
                            batch_size: job.config.batch_size,
                            status: JobStatus::Failed,
                            states: vec![],
                            signal_received: false,
                            error: Some(BenchError::DeviceRefused(format!("no adapter for device {device}"))),
                            result: None,
                        };
                        let _ = tx.send((i, rec));
                    }
                }
            }
        }
        drop(tx);
        for (i, rec) in rx {
            records[i] = Some(rec);
            while let Some(Some(r)) = records.get(next) {
                serde_json::to_writer(&mut *log, r)?;
                log.write_all(b"\n")?;
                next += 1;
            }
        }
        Ok(())
    })?;
    log.flush()?;
    Ok(records.into_iter().map(|r| r.expect("every job reports")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(samples: Vec<f64>, rate: f64, baseline: f64) -> PowerTrace {
        PowerTrace { sample_rate_hz: rate, samples, baseline_w: baseline }
    }

    #[test]
    fn constant_power() {
        let t = trace(vec![2.0; 1000], 100.0, 0.0);
        assert!((integrate_energy(&t, 10.0).unwrap() - 20.0).abs() < 1e-9);
        let t = trace(vec![2.0; 1000], 100.0, 0.5);
        assert!((integrate_energy(&t, 10.0).unwrap() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn negative_net_power_is_clamped() {
        let t = trace(vec![0.2, 1.0, 0.0, 1.0], 1.0, 0.5);
        assert_eq!(integrate_energy(&t, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn trace_errors() {
        assert_eq!(integrate_energy(&trace(vec![], 10.0, 0.0), 0.0), Err(BenchError::EmptyTrace));
        assert_eq!(integrate_energy(&trace(vec![1.0; 10], 10.0, 0.0), 2.0), Err(BenchError::TraceTooShort));
    }

    #[test]
    fn efficiency_ratio() {
        assert_eq!(mflops_per_sw(efficiency(1_000_000_000, 1.0).unwrap()), 1000.0);
        assert_eq!(efficiency(10, 0.5).unwrap(), 2.0 * efficiency(10, 1.0).unwrap());
        assert_eq!(efficiency(10, 0.0), Err(BenchError::ZeroEnergy));
    }

    #[test]
    fn scenario_counts() {
        assert_eq!(ScenarioSpec::segmentation_1h_15fps().inference_count, 54_000);
        assert_eq!(ScenarioSpec::typing_275_words().inference_count, 275);
        assert_eq!(ScenarioSpec::sound_recognition_1h(1.0).inference_count, 3600);
        assert_eq!(ScenarioSpec::sound_recognition_1h(0.975).inference_count, 3693);
        assert_eq!(scenario_discharge(&ScenarioSpec::typing_275_words(), 0.0, 3.85), 0.0);
        for s in ["sound_recognition_1h", "typing_275_words", "segmentation_1h_15fps"] {
            let v = Scenario::parse(s).unwrap();
            assert_eq!(v.as_str(), s);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{s}\""));
        }
    }

    #[test]
    fn config_checks() {
        assert!(BenchConfig::default().check().is_ok());
        let bad = |f: fn(&mut BenchConfig)| {
            let mut c = BenchConfig::default();
            f(&mut c);
            c.check().is_err()
        };
        assert!(bad(|c| c.measured_runs = 0));
        assert!(bad(|c| c.batch_size = 3));
        assert!(bad(|c| c.affinity = Some(4)));
    }

    fn job(id: &str, device: &str) -> BenchJob {
        BenchJob {
            job_id: id.into(),
            model_id: "m".into(),
            model_file: "m.tflite".into(),
            model_flops: 1000,
            config: BenchConfig { inter_run_sleep_ms: 0, signal_deadline_ms: 5000, poll_interval_ms: 1, ..BenchConfig::default() },
            device_id: device.into(),
        }
    }

    #[test]
    fn full_state_sequence() {
        let mut dev = SimulatedDevice::new(SimProfile::new("d"));
        let rec = run_job(&job("j", "d"), b"model", &mut dev);
        assert_eq!(rec.status, JobStatus::Ok);
        assert_eq!(
            rec.states,
            vec![
                JobState::Push,
                JobState::AssertState,
                JobState::PowerOff,
                JobState::WaitPowerOff,
                JobState::Warmup,
                JobState::Measure,
                JobState::Signal,
                JobState::PowerOn,
                JobState::Collect
            ]
        );
        let r = rec.result.unwrap();
        assert_eq!(r.latencies_ms, vec![10.0; 20]);
        // 2 W over 20 × 10 ms
        assert!((r.energy_j - 0.4).abs() < 1e-9);
        assert!((r.throughput_ips - 100.0).abs() < 1e-9);
        assert!((r.efficiency_flops_per_j.unwrap() - 20_000.0 / 0.4).abs() < 1e-6);
    }

    struct Refusing;
    impl DeviceAdapter for Refusing {
        fn device_id(&self) -> &str {
            "r"
        }
        fn push(&mut self, _: &[(String, Vec<u8>)]) -> Result<(), AdapterError> {
            Ok(())
        }
        fn exec(&mut self, _: &DeviceCommand) -> Result<String, AdapterError> {
            Err(AdapterError::Timeout)
        }
        fn set_power(&mut self, _: bool) -> Result<(), AdapterError> {
            Ok(())
        }
        fn pull(&mut self, _: &[&str]) -> Result<Vec<(String, Vec<u8>)>, AdapterError> {
            Ok(vec![])
        }
    }

    #[test]
    fn failure_records_state_reached() {
        let rec = run_job(&job("j", "r"), b"", &mut Refusing);
        assert_eq!(rec.status, JobStatus::Failed);
        assert_eq!(rec.state_reached(), Some(JobState::AssertState));
        assert_eq!(rec.error, Some(BenchError::AdapterTimeout(JobState::AssertState)));
    }

    #[test]
    fn log_is_in_job_order_across_devices() {
        let jobs: Vec<(BenchJob, Vec<u8>)> = (0..6)
            .map(|i| (job(&format!("j{i}"), ["a", "b", "c"][i % 3]), b"x".to_vec()))
            .collect();
        let adapters: Vec<Box<dyn DeviceAdapter>> =
            vec![Box::new(SimulatedDevice::new(SimProfile::new("a"))), Box::new(SimulatedDevice::new(SimProfile::new("b")))];
        let mut out = Vec::new();
        let recs = run_jobs(&jobs, adapters, &mut out).unwrap();
        let ids: Vec<String> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<JobRecord>(l).unwrap().job_id)
            .collect();
        assert_eq!(ids, vec!["j0", "j1", "j2", "j3", "j4", "j5"]);
        assert_eq!(recs[2].error, Some(BenchError::DeviceRefused("no adapter for device c".into())));
        assert_eq!(recs[0].status, JobStatus::Ok);
    }
}
