use std::time::{Duration, Instant};

use prospector::bench::sim::{SimProfile, SimulatedDevice};
use prospector::bench::{
    integrate_energy, run_job, run_jobs, scenario_discharge, BenchConfig, BenchError, BenchJob, JobState, JobStatus,
    PowerTrace, ScenarioSpec,
};
use prospector::bench::adapter::DeviceAdapter;

fn job(id: &str, device: &str, config: BenchConfig) -> BenchJob {
    BenchJob {
        job_id: id.into(),
        model_id: format!("model-{id}"),
        model_file: "m.tflite".into(),
        model_flops: 1_000_000,
        config,
        device_id: device.into(),
    }
}

#[test]
fn constant_latency_simulator() {
    let mut p = SimProfile::new("sim");
    p.a_ms_per_flop = 0.0;
    p.b_ms = 10.0;
    let mut dev = SimulatedDevice::new(p);
    let cfg = BenchConfig { warmup_runs: 5, measured_runs: 20, ..BenchConfig::default() };
    let rec = run_job(&job("j", "sim", cfg), b"model", &mut dev);
    assert_eq!(rec.status, JobStatus::Ok, "{rec:?}");
    assert!(rec.signal_received);
    let r = rec.result.unwrap();
    assert_eq!(r.latencies_ms, vec![10.0; 20]);
    assert_eq!(rec.states.last(), Some(&JobState::Collect));
}

fn seeded_log() -> Vec<u8> {
    let mut jobs = Vec::new();
    for (i, dev) in ["a", "b", "a", "b", "a"].iter().enumerate() {
        let cfg = BenchConfig { warmup_runs: 2, measured_runs: 6, inter_run_sleep_ms: 5, ..BenchConfig::default() };
        jobs.push((job(&format!("job{i}"), dev, cfg), b"weights".to_vec()));
    }
    let adapters: Vec<Box<dyn DeviceAdapter>> = ["a", "b"]
        .iter()
        .map(|d| {
            let mut p = SimProfile::new(*d);
            p.a_ms_per_flop = 1e-6;
            p.jitter_ms = 0.7;
            p.seed = 1234;
            Box::new(SimulatedDevice::new(p)) as Box<dyn DeviceAdapter>
        })
        .collect();
    let mut log = Vec::new();
    let records = run_jobs(&jobs, adapters, &mut log).unwrap();
    assert!(records.iter().all(|r| r.status == JobStatus::Ok));
    log
}

#[test]
fn seeded_runs_give_identical_logs() {
    let a = seeded_log();
    let b = seeded_log();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn silent_device_loses_the_signal_at_the_deadline() {
    let mut p = SimProfile::new("mute");
    p.signals = false;
    let mut dev = SimulatedDevice::new(p);
    let poll = 20;
    let deadline = 300;
    let cfg = BenchConfig { signal_deadline_ms: deadline, poll_interval_ms: poll, ..BenchConfig::default() };
    let start = Instant::now();
    let rec = run_job(&job("j", "mute", cfg), b"m", &mut dev);
    let took = start.elapsed();
    assert_eq!(rec.error, Some(BenchError::SignalLost(deadline)));
    assert_eq!(rec.state_reached(), Some(JobState::Signal));
    assert!(!rec.signal_received);
    let lo = Duration::from_millis(deadline);
    assert!(took >= lo && took <= lo + Duration::from_millis(poll), "{took:?}");
}

#[test]
fn zero_deadline_records_signal_lost() {
    let mut dev = SimulatedDevice::new(SimProfile::new("d"));
    let cfg = BenchConfig { signal_deadline_ms: 0, ..BenchConfig::default() };
    let rec = run_job(&job("j", "d", cfg), b"m", &mut dev);
    assert_eq!(rec.error, Some(BenchError::SignalLost(0)));
}

#[test]
fn traces_integrate_to_closed_forms() {
    let rate = 5000.0;
    let baseline = 0.5;
    // constant 2 W above baseline for 1.5 s
    let constant = PowerTrace { sample_rate_hz: rate, samples: vec![baseline + 2.0; 7500], baseline_w: baseline };
    let e = integrate_energy(&constant, 1.5).unwrap();
    assert!((e - 3.0).abs() <= 2.0 / rate, "{e}");
    // triangle peaking at 4 W above baseline, 2 s wide
    let n = (2.0 * rate) as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            baseline + 4.0 * (1.0 - (t - 1.0).abs())
        })
        .collect();
    let tri = PowerTrace { sample_rate_hz: rate, samples, baseline_w: baseline };
    let e = integrate_energy(&tri, 2.0).unwrap();
    assert!((e - 4.0).abs() <= 4.0 / rate, "{e}");
}

fn sig(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits - 1, x)
}

#[test]
fn scenario_discharge_values() {
    let seg = scenario_discharge(&ScenarioSpec::segmentation_1h_15fps(), 0.5, 3.85);
    assert_eq!(sig(seg, 4), sig(27000.0 / (3.85 * 3600.0) * 1000.0, 4));
    assert_eq!(sig(seg, 4), sig(1948.05, 4));
    let typing = scenario_discharge(&ScenarioSpec::typing_275_words(), 0.001, 3.85);
    assert_eq!(sig(typing, 4), sig(0.275 / (3.85 * 3600.0) * 1000.0, 4));
    // 0.0198 is the three-figure rendering of 0.01984
    assert_eq!(sig(typing, 3), sig(0.0198, 3));
    assert_eq!(scenario_discharge(&ScenarioSpec::typing_275_words(), 0.0, 3.85), 0.0);
}

#[test]
fn simulator_trace_energy_matches_schedule() {
    let mut p = SimProfile::new("s");
    p.b_ms = 4.0;
    p.power_w = 3.0;
    let mut dev = SimulatedDevice::new(p);
    let cfg = BenchConfig { warmup_runs: 0, measured_runs: 10, inter_run_sleep_ms: 6, ..BenchConfig::default() };
    let r = run_job(&job("j", "s", cfg), b"m", &mut dev).result.unwrap();
    // 10 runs × 4 ms × 3 W
    assert!((r.energy_j - 0.12).abs() < 1e-9, "{}", r.energy_j);
    assert!((r.energy_per_inference_j - 0.012).abs() < 1e-12);
    assert!((r.throughput_ips - 250.0).abs() < 1e-9);
}
