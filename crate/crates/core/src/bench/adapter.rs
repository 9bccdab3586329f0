//! Device adapter interface and the shell-transport stub.

use std::net::SocketAddr;
use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::signal::{SignalListener, SignalReceipt};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("operation timed out")]
    Timeout,
    #[error("device refused: {0}")]
    Refused(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// What the device-side harness should run once external power is cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub job_id: String,
    pub model_file: String,
    pub model_flops: u64,
    pub warmup_runs: u32,
    pub measured_runs: u32,
    pub inter_run_sleep_ms: u64,
    pub batch_size: u32,
    pub threads: u32,
    pub affinity: Option<u32>,
    pub signal_addr: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeviceCommand {
    /// Checks the device is idle with the model in place, then arms the
    /// harness to start when external power goes off.
    Arm(RunSpec),
    Shell(String),
}

/// Files the device harness leaves behind for collection.
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "power_trace.json";

pub trait DeviceAdapter: Send {
    fn device_id(&self) -> &str;
    fn push(&mut self, files: &[(String, Vec<u8>)]) -> Result<(), AdapterError>;
    fn exec(&mut self, command: &DeviceCommand) -> Result<String, AdapterError>;
    fn set_power(&mut self, on: bool) -> Result<(), AdapterError>;
    fn await_signal(
        &mut self,
        listener: &SignalListener,
        job_id: &str,
        deadline: Duration,
    ) -> Option<SignalReceipt> {
        listener.await_done(job_id, deadline)
    }
    fn pull(&mut self, paths: &[&str]) -> Result<Vec<(String, Vec<u8>)>, AdapterError>;
}

/// Talks to a real handset through `adb`. Power switching needs an external
/// power monitor, which this adapter does not drive.
pub struct ShellAdapter {
    serial: String,
    remote_dir: String,
    adb: String,
}

impl ShellAdapter {
    pub fn new(serial: impl Into<String>) -> Self {
        ShellAdapter {
            serial: serial.into(),
            remote_dir: "/data/local/tmp/prospector".into(),
            adb: "adb".into(),
        }
    }

    fn adb(&self, args: &[&str]) -> Result<Vec<u8>, AdapterError> {
        let out = Command::new(&self.adb)
            .arg("-s")
            .arg(&self.serial)
            .args(args)
            .output()
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        if !out.status.success() {
            return Err(AdapterError::Refused(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        Ok(out.stdout)
    }
}

impl DeviceAdapter for ShellAdapter {
    fn device_id(&self) -> &str {
        &self.serial
    }

    fn push(&mut self, files: &[(String, Vec<u8>)]) -> Result<(), AdapterError> {
        let transport = |e: std::io::Error| AdapterError::Transport(e.to_string());
        for (name, data) in files {
            let remote = format!("{}/{name}", self.remote_dir);
            let mut child = Command::new(&self.adb)
                .args(["-s", &self.serial, "exec-in", "sh", "-c", &format!("cat > '{remote}'")])
                .stdin(Stdio::piped())
                .spawn()
                .map_err(transport)?;
            child.stdin.take().expect("piped stdin").write_all(data).map_err(transport)?;
            if !child.wait().map_err(transport)?.success() {
                return Err(AdapterError::Refused(format!("push of {name} failed")));
            }
        }
        Ok(())
    }

    fn exec(&mut self, command: &DeviceCommand) -> Result<String, AdapterError> {
        let line = match command {
            DeviceCommand::Shell(s) => s.clone(),
            DeviceCommand::Arm(spec) => {
                let json = serde_json::to_string(spec).map_err(|e| AdapterError::Transport(e.to_string()))?;
                format!(
                    "am broadcast -a org.prospector.ARM --es spec '{}'",
                    json.replace('\'', "'\\''")
                )
            }
        };
        let out = self.adb(&["shell", &line])?;
        Ok(String::from_utf8_lossy(&out).into_owned())
    }

    fn set_power(&mut self, _on: bool) -> Result<(), AdapterError> {
        Err(AdapterError::Refused("no power monitor attached".into()))
    }

    fn pull(&mut self, paths: &[&str]) -> Result<Vec<(String, Vec<u8>)>, AdapterError> {
        paths
            .iter()
            .map(|p| {
                let data = self.adb(&["exec-out", "cat", &format!("{}/{p}", self.remote_dir)])?;
                Ok((p.to_string(), data))
            })
            .collect()
    }
}
