//! Multi-instance open-loop HTTP benchmark.

use std::fmt;
use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::cli::BenchConfig;
use super::instance::{GuestOutput, Instance, InstanceConfig};
use super::HarnessError;
use crate::guest::{GuestConfig, DEFAULT_MAC, HELLO_BODY, HELLO_PATH};
use crate::trace::Tracer;
use crate::usernet::{ForwardRule, NicConfig, SUPPORTED_MODEL};
use crate::wire::http::{parse_response, HttpRequest};
use crate::wire::MacAddress;

const BOOT_TIMEOUT: Duration = Duration::from_secs(5);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub instance: usize,
    /// HTTP status, or 0 when no response was received.
    pub status: u16,
    pub ok: bool,
    /// From the scheduled send time to the end of the response.
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencySummary {
    pub requests: usize,
    pub errors: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile over sorted values.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencySummary {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut lat = Vec::new();
        let mut errors = 0;
        for s in samples {
            lat.push(s.latency_us);
            errors += usize::from(!s.ok);
        }
        lat.sort_unstable();
        let ms = |us: u64| us as f64 / 1000.0;
        LatencySummary {
            requests: lat.len(),
            errors,
            p50_ms: ms(percentile(&lat, 50.0)),
            p95_ms: ms(percentile(&lat, 95.0)),
            p99_ms: ms(percentile(&lat, 99.0)),
            max_ms: ms(lat.last().copied().unwrap_or(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub ports: Vec<u16>,
    pub per_instance: Vec<LatencySummary>,
    pub aggregate: LatencySummary,
    pub samples: Vec<Sample>,
    pub served: Vec<u64>,
}

impl BenchReport {
    /// Every instance answered at least one request successfully.
    pub fn all_served(&self) -> bool {
        (0..self.ports.len()).all(|i| self.samples.iter().any(|s| s.instance == i && s.ok))
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10}{:>6}{:>10}{:>8}{:>10}{:>10}{:>10}{:>10}",
            "instance", "port", "requests", "errors", "p50_ms", "p95_ms", "p99_ms", "max_ms"
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, port: &str, s: &LatencySummary| {
            writeln!(
                f,
                "{:<10}{:>6}{:>10}{:>8}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                name, port, s.requests, s.errors, s.p50_ms, s.p95_ms, s.p99_ms, s.max_ms
            )
        };
        for (i, s) in self.per_instance.iter().enumerate() {
            row(f, &i.to_string(), &self.ports[i].to_string(), s)?;
        }
        row(f, "all", "-", &self.aggregate)
    }
}

/// Guest MAC for bench instance `i`; instance 0 uses the default.
pub fn instance_mac(i: usize) -> MacAddress {
    let mut m = DEFAULT_MAC.0;
    let tail = u16::from_be_bytes([m[4], m[5]]).wrapping_add(i as u16);
    m[4..6].copy_from_slice(&tail.to_be_bytes());
    MacAddress(m)
}

/// One GET with `Connection: close`; returns status and body.
pub fn http_get(
    addr: SocketAddr,
    path: &str,
    timeout: Duration,
) -> std::io::Result<(u16, Vec<u8>)> {
    let mut s = TcpStream::connect_timeout(&addr, timeout)?;
    s.set_read_timeout(Some(timeout))?;
    s.set_write_timeout(Some(timeout))?;
    s.set_nodelay(true)?;
    let mut req = HttpRequest::get(path);
    req.headers.push(("Host".into(), addr.to_string()));
    req.headers.push(("Connection".into(), "close".into()));
    s.write_all(&req.encode())?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        match parse_response(&buf, false) {
            Ok(Some(r)) => return Ok((r.status, r.body)),
            Ok(None) => {}
            Err(e) => return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
        }
        let n = s.read(&mut chunk)?;
        if n == 0 {
            return match parse_response(&buf, true) {
                Ok(Some(r)) => Ok((r.status, r.body)),
                Ok(None) => Err(std::io::ErrorKind::UnexpectedEof.into()),
                Err(e) => Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            };
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

/// Boots `config.instances` instances, drives each at `rate` requests/s for
/// `duration` seconds, and writes one line per request to `lines`.
pub fn run_bench(config: &BenchConfig, lines: &mut dyn Write) -> Result<BenchReport, HarnessError> {
    let mut instances = Vec::new();
    let mut ports = Vec::new();
    for i in 0..config.instances {
        let port = config.base_port + i as u16;
        let nic = NicConfig {
            model: SUPPORTED_MODEL.into(),
            id: format!("bench{i}"),
            forwards: vec![ForwardRule::tcp(port, 80)],
        };
        let guest = GuestConfig {
            mac: instance_mac(i),
            ..GuestConfig::default()
        };
        let inst = Instance::start(InstanceConfig {
            guest,
            nic,
            tracer: Tracer::disabled(),
            output: GuestOutput::Memory(Default::default()),
        })
        .map_err(|e| HarnessError::InstanceBoot {
            instance: i,
            reason: e.to_string(),
        })?;
        if inst.wait_bound(BOOT_TIMEOUT).is_none() {
            return Err(HarnessError::InstanceBoot {
                instance: i,
                reason: "no DHCP lease within 5 s".into(),
            });
        }
        instances.push(inst);
        ports.push(port);
    }

    let per_instance = (config.rate * config.duration).round().max(1.0) as usize;
    let interval = Duration::from_secs_f64(1.0 / config.rate);
    let expect_hello = config.path == HELLO_PATH;
    let (tx, rx) = mpsc::channel();
    let start = Instant::now() + Duration::from_millis(20);
    let mut schedulers = Vec::new();
    for (i, &port) in ports.iter().enumerate() {
        let tx = tx.clone();
        let path = config.path.clone();
        schedulers.push(thread::spawn(move || {
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            let mut workers = Vec::new();
            for k in 0..per_instance {
                let due = start + interval.mul_f64(k as f64);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
                let (tx, path) = (tx.clone(), path.clone());
                workers.push(thread::spawn(move || {
                    let result = http_get(addr, &path, REQUEST_TIMEOUT);
                    let latency_us =
                        Instant::now().saturating_duration_since(due).as_micros() as u64;
                    let (status, ok) = match result {
                        Ok((status, body)) => {
                            let ok = if expect_hello {
                                status == 200 && body == HELLO_BODY.as_bytes()
                            } else {
                                status < 500
                            };
                            (status, ok)
                        }
                        Err(_) => (0, false),
                    };
                    let _ = tx.send(Sample {
                        instance: i,
                        status,
                        ok,
                        latency_us,
                    });
                }));
            }
            for w in workers {
                let _ = w.join();
            }
        }));
    }
    drop(tx);
    for s in schedulers {
        let _ = s.join();
    }
    let mut samples: Vec<Sample> = rx.into_iter().collect();
    samples.sort_by_key(|s| (s.instance, s.latency_us));
    for s in &samples {
        writeln!(
            lines,
            "instance={} status={} latency_us={}",
            s.instance, s.status, s.latency_us
        )
        .map_err(HarnessError::Io)?;
    }
    let served = instances
        .into_iter()
        .map(|inst| inst.shutdown().requests_served)
        .collect();
    let per: Vec<LatencySummary> = (0..ports.len())
        .map(|i| LatencySummary::from_samples(samples.iter().filter(|s| s.instance == i)))
        .collect();
    Ok(BenchReport {
        aggregate: LatencySummary::from_samples(&samples),
        per_instance: per,
        ports,
        samples,
        served,
    })
}
