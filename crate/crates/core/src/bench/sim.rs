//! In-process stand-in for a handset on a power monitor. Time is virtual:
//! latencies come from `a·FLOPs·batch + b` plus optional seeded jitter, and
//! the power trace is synthesized from the same schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::{AdapterError, DeviceAdapter, DeviceCommand, RunSpec, REPORT_FILE, TRACE_FILE};
use super::signal::send_done;
use super::{DeviceReport, PowerTrace};
use crate::ir::sha256_hex;

fn default_b() -> f64 {
    10.0
}
fn default_power() -> f64 {
    2.0
}
fn default_baseline() -> f64 {
    0.5
}
fn default_rate() -> f64 {
    super::DEFAULT_SAMPLE_RATE_HZ
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimProfile {
    #[serde(default)]
    pub device_id: String,
    /// Milliseconds per executed FLOP.
    #[serde(default)]
    pub a_ms_per_flop: f64,
    #[serde(default = "default_b")]
    pub b_ms: f64,
    /// Power drawn above baseline while an inference runs.
    #[serde(default = "default_power")]
    pub power_w: f64,
    #[serde(default = "default_baseline")]
    pub baseline_w: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// Half-width of the uniform latency jitter.
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub seed: u64,
    /// When false the device never sends its completion signal.
    #[serde(default = "yes")]
    pub signals: bool,
    /// Wall-clock delay before the completion signal is sent.
    #[serde(default)]
    pub signal_delay_ms: u64,
}

impl SimProfile {
    pub fn new(device_id: impl Into<String>) -> Self {
        SimProfile {
            device_id: device_id.into(),
            a_ms_per_flop: 0.0,
            b_ms: default_b(),
            power_w: default_power(),
            baseline_w: default_baseline(),
            sample_rate_hz: default_rate(),
            jitter_ms: 0.0,
            seed: 0,
            signals: true,
            signal_delay_ms: 0,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let nonneg = [
            ("a_ms_per_flop", self.a_ms_per_flop),
            ("b_ms", self.b_ms),
            ("power_w", self.power_w),
            ("baseline_w", self.baseline_w),
            ("jitter_ms", self.jitter_ms),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        Ok(())
    }
}

pub struct SimulatedDevice {
    profile: SimProfile,
    files: BTreeSet<String>,
    armed: Option<RunSpec>,
    outputs: BTreeMap<String, Vec<u8>>,
    signal_threads: Vec<thread::JoinHandle<()>>,
}

impl SimulatedDevice {
    pub fn new(profile: SimProfile) -> Self {
        SimulatedDevice {
            profile,
            files: BTreeSet::new(),
            armed: None,
            outputs: BTreeMap::new(),
            signal_threads: Vec::new(),
        }
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    fn rng_for(&self, job_id: &str) -> ChaCha8Rng {
        let digest = sha256_hex(&[job_id.as_bytes()]);
        let salt = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        ChaCha8Rng::seed_from_u64(self.profile.seed ^ salt)
    }

    /// Latencies for all runs of `spec`, warmup first.
    pub fn latencies(&self, spec: &RunSpec) -> Vec<f64> {
        let p = &self.profile;
        let mut rng = self.rng_for(&spec.job_id);
        let base = p.a_ms_per_flop * spec.model_flops as f64 * spec.batch_size as f64 + p.b_ms;
        (0..spec.warmup_runs + spec.measured_runs)
            .map(|_| {
                let jitter = if p.jitter_ms > 0.0 { rng.random_range(-p.jitter_ms..=p.jitter_ms) } else { 0.0 };
                (base + jitter).max(0.0)
            })
            .collect()
    }

    /// Samples over the measured runs and the sleeps between them.
    pub fn trace(&self, measured_ms: &[f64], sleep_ms: f64) -> PowerTrace {
        let p = &self.profile;
        let to_sample = |ms: f64| (ms * p.sample_rate_hz / 1000.0).round() as usize;
        let mut active = Vec::with_capacity(measured_ms.len());
        let mut t = 0.0;
        for (k, lat) in measured_ms.iter().enumerate() {
            if k > 0 {
                t += sleep_ms;
            }
            active.push((to_sample(t), to_sample(t + lat)));
            t += lat;
        }
        let mut samples = vec![p.baseline_w; to_sample(t)];
        for (start, end) in active {
            for s in &mut samples[start..end] {
                *s = p.baseline_w + p.power_w;
            }
        }
        PowerTrace { sample_rate_hz: p.sample_rate_hz, samples, baseline_w: p.baseline_w }
    }

    fn run(&mut self, spec: RunSpec) {
        let all = self.latencies(&spec);
        let (warmup, measured) = all.split_at(spec.warmup_runs as usize);
        let report = DeviceReport {
            job_id: spec.job_id.clone(),
            warmup_ms: warmup.to_vec(),
            measured_ms: measured.to_vec(),
        };
        let trace = self.trace(measured, spec.inter_run_sleep_ms as f64);
        self.outputs.insert(REPORT_FILE.into(), serde_json::to_vec(&report).expect("report serializes"));
        self.outputs.insert(TRACE_FILE.into(), serde_json::to_vec(&trace).expect("trace serializes"));
        if self.profile.signals {
            let delay = Duration::from_millis(self.profile.signal_delay_ms);
            let (addr, job) = (spec.signal_addr, spec.job_id);
            self.signal_threads.push(thread::spawn(move || {
                thread::sleep(delay);
                if let Err(e) = send_done(addr, &job) {
                    log::debug!("signal for {job} not delivered: {e}");
                }
            }));
        }
    }
}

impl DeviceAdapter for SimulatedDevice {
    fn device_id(&self) -> &str {
        &self.profile.device_id
    }

    fn push(&mut self, files: &[(String, Vec<u8>)]) -> Result<(), AdapterError> {
        self.files.extend(files.iter().map(|(n, _)| n.clone()));
        Ok(())
    }

    fn exec(&mut self, command: &DeviceCommand) -> Result<String, AdapterError> {
        match command {
            DeviceCommand::Arm(spec) => {
                if self.armed.is_some() {
                    return Err(AdapterError::Refused("a job is already armed".into()));
                }
                if !self.files.contains(&spec.model_file) {
                    return Err(AdapterError::Refused(format!("{} not on device", spec.model_file)));
                }
                self.outputs.clear();
                self.armed = Some(spec.clone());
                Ok(String::new())
            }
            DeviceCommand::Shell(_) => Ok(String::new()),
        }
    }

    fn set_power(&mut self, on: bool) -> Result<(), AdapterError> {
        if !on {
            if let Some(spec) = self.armed.take() {
                self.run(spec);
            }
        }
        Ok(())
    }

    fn pull(&mut self, paths: &[&str]) -> Result<Vec<(String, Vec<u8>)>, AdapterError> {
        paths
            .iter()
            .map(|p| {
                self.outputs
                    .get(*p)
                    .map(|d| (p.to_string(), d.clone()))
                    .ok_or_else(|| AdapterError::Refused(format!("{p} not found")))
            })
            .collect()
    }
}

impl Drop for SimulatedDevice {
    fn drop(&mut self) {
        for t in self.signal_threads.drain(..) {
            let _ = t.join();
        }
    }
}
