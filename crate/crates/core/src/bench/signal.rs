//! Completion signal: the device sends one line `DONE <job_id>\n` over TCP.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

/// Non-blocking listener on a loopback port, polled until the expected line
/// arrives or the deadline passes.
pub struct SignalListener {
    listener: TcpListener,
    poll_interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalReceipt {
    pub line: String,
    pub waited: Duration,
}

impl SignalListener {
    pub fn bind(poll_interval: Duration) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        Ok(SignalListener { listener, poll_interval })
    }

    pub fn addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn poll_interval(&self) -> Duration {
        self.poll_interval
    }

    /// Waits for `DONE <job_id>`. Lines for other jobs are ignored.
    /// Returns `None` once `deadline` has elapsed.
    pub fn await_done(&self, job_id: &str, deadline: Duration) -> Option<SignalReceipt> {
        let start = Instant::now();
        let want = format!("DONE {job_id}");
        loop {
            if start.elapsed() >= deadline {
                return None;
            }
            match self.listener.accept() {
                Ok((stream, _)) => {
                    if let Some(line) = read_line(stream, deadline.saturating_sub(start.elapsed())) {
                        if line == want {
                            return Some(SignalReceipt { line, waited: start.elapsed() });
                        }
                        log::debug!("ignoring signal line {line:?}");
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(self.poll_interval),
                Err(e) => {
                    log::warn!("signal listener: {e}");
                    thread::sleep(self.poll_interval);
                }
            }
        }
    }
}

fn read_line(stream: TcpStream, budget: Duration) -> Option<String> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(budget.max(Duration::from_millis(1)))).ok()?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line).ok()?;
    Some(line.trim_end_matches(['\r', '\n']).to_string())
}

/// Device side of the signal.
pub fn send_done(addr: SocketAddr, job_id: &str) -> std::io::Result<()> {
    let mut s = TcpStream::connect(addr)?;
    s.write_all(format!("DONE {job_id}\n").as_bytes())?;
    s.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receives_matching_line() {
        let l = SignalListener::bind(Duration::from_millis(2)).unwrap();
        let addr = l.addr();
        let t = thread::spawn(move || {
            send_done(addr, "other").unwrap();
            send_done(addr, "job-1").unwrap();
        });
        let r = l.await_done("job-1", Duration::from_secs(5)).unwrap();
        assert_eq!(r.line, "DONE job-1");
        t.join().unwrap();
    }

    #[test]
    fn times_out_without_signal() {
        let l = SignalListener::bind(Duration::from_millis(5)).unwrap();
        let start = Instant::now();
        assert!(l.await_done("job", Duration::from_millis(60)).is_none());
        let waited = start.elapsed();
        assert!(waited >= Duration::from_millis(60) && waited < Duration::from_millis(60 + 50), "{waited:?}");
        assert!(l.await_done("job", Duration::ZERO).is_none());
    }
}
