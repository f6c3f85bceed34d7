//! Runtime-enableable trace points with glob-pattern selection.
//!
//! A [`Tracer`] is built once at startup from a list of patterns and a sink.
//! Device models resolve their trace points up front with [`Tracer::point`];
//! a point whose name matches no pattern holds nothing and its `emit` is a
//! single branch. Event arguments are passed as closures and are only
//! formatted for matching events.

use std::fmt;
use std::fs::File;
use std::io::{self, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot open trace file {path}: {source}")]
    Sink { path: PathBuf, source: io::Error },
}

/// Case-sensitive glob where `*` matches any run of characters, including none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracePattern(String);

impl TracePattern {
    pub fn new(glob: impl Into<String>) -> Self {
        Self(glob.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, name: &str) -> bool {
        matches(&self.0, name)
    }
}

impl From<&str> for TracePattern {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Glob match supporting only `*`.
pub fn matches(pattern: &str, name: &str) -> bool {
    let p = pattern.as_bytes();
    let n = name.as_bytes();
    let (mut pi, mut ni) = (0, 0);
    // position of the last `*` seen and the name index it is currently absorbing up to
    let mut backtrack: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && p[pi] == b'*' {
            backtrack = Some((pi, ni));
            pi += 1;
        } else if pi < p.len() && p[pi] == n[ni] {
            pi += 1;
            ni += 1;
        } else if let Some((star, absorbed)) = backtrack {
            pi = star + 1;
            ni = absorbed + 1;
            backtrack = Some((star, absorbed + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub name: String,
    pub timestamp_ns: u64,
    pub args: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.args.is_empty() {
            write!(f, "{} t={}", self.name, self.timestamp_ns)
        } else {
            write!(f, "{} {} t={}", self.name, self.args, self.timestamp_ns)
        }
    }
}

impl TraceEvent {
    /// Parses a line produced by the text sinks.
    pub fn parse_line(line: &str) -> Option<TraceEvent> {
        let (body, ts) = line.trim_end().rsplit_once(" t=")?;
        let timestamp_ns = ts.parse().ok()?;
        let (name, args) = body.split_once(' ').unwrap_or((body, ""));
        Some(TraceEvent {
            name: name.to_string(),
            timestamp_ns,
            args: args.to_string(),
        })
    }
}

/// In-memory event log, shareable with tests and tooling.
#[derive(Debug, Clone, Default)]
pub struct TraceLog(Arc<Mutex<Vec<TraceEvent>>>);

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.0.lock().unwrap().clone()
    }

    pub fn names(&self) -> Vec<String> {
        self.0
            .lock()
            .unwrap()
            .iter()
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, ev: TraceEvent) {
        self.0.lock().unwrap().push(ev);
    }
}

#[derive(Debug, Clone)]
pub enum TraceSink {
    Stderr,
    File(PathBuf),
    Memory(TraceLog),
}

enum Output {
    Writer(Mutex<Box<dyn Write + Send>>),
    Memory(TraceLog),
}

struct Inner {
    patterns: Vec<TracePattern>,
    output: Output,
    origin: Instant,
    formatted: AtomicU64,
}

/// Immutable trace configuration plus its sink. Cloning shares the sink.
#[derive(Clone)]
pub struct Tracer {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tracer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracer")
            .field("patterns", &self.inner.patterns)
            .finish()
    }
}

impl Default for Tracer {
    fn default() -> Self {
        Self::disabled()
    }
}

impl Tracer {
    /// Opens the sink and freezes the pattern list.
    pub fn enable(patterns: Vec<TracePattern>, sink: TraceSink) -> Result<Tracer, TraceError> {
        let output = match sink {
            TraceSink::Stderr => Output::Writer(Mutex::new(Box::new(io::stderr()))),
            TraceSink::File(path) => {
                let file = File::create(&path).map_err(|source| TraceError::Sink {
                    path: path.clone(),
                    source,
                })?;
                Output::Writer(Mutex::new(Box::new(LineWriter::new(file))))
            }
            TraceSink::Memory(log) => Output::Memory(log),
        };
        Ok(Tracer {
            inner: Arc::new(Inner {
                patterns,
                output,
                origin: Instant::now(),
                formatted: AtomicU64::new(0),
            }),
        })
    }

    pub fn disabled() -> Tracer {
        Tracer {
            inner: Arc::new(Inner {
                patterns: Vec::new(),
                output: Output::Memory(TraceLog::new()),
                origin: Instant::now(),
                formatted: AtomicU64::new(0),
            }),
        }
    }

    pub fn to_file(patterns: Vec<TracePattern>, path: &Path) -> Result<Tracer, TraceError> {
        Self::enable(patterns, TraceSink::File(path.to_path_buf()))
    }

    pub fn patterns(&self) -> &[TracePattern] {
        &self.inner.patterns
    }

    pub fn enabled(&self, name: &str) -> bool {
        self.inner.patterns.iter().any(|p| p.matches(name))
    }

    /// Emits `name` if any pattern matches; `args` runs only in that case.
    pub fn emit<F: FnOnce() -> String>(&self, name: &str, args: F) {
        if self.enabled(name) {
            self.write(name, args);
        }
    }

    /// Resolves a named trace point against the pattern list once.
    pub fn point(&self, name: &'static str) -> TracePoint {
        TracePoint {
            name,
            tracer: self.enabled(name).then(|| self.clone()),
        }
    }

    /// Number of argument closures that have been run.
    pub fn formatted_count(&self) -> u64 {
        self.inner.formatted.load(Ordering::Relaxed)
    }

    fn write<F: FnOnce() -> String>(&self, name: &str, args: F) {
        let args = args();
        self.inner.formatted.fetch_add(1, Ordering::Relaxed);
        let ev = TraceEvent {
            name: name.to_string(),
            timestamp_ns: self.inner.origin.elapsed().as_nanos() as u64,
            args,
        };
        match &self.inner.output {
            Output::Memory(log) => log.push(ev),
            Output::Writer(w) => {
                let line = format!("{ev}\n");
                let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
                // a failing trace sink must not take the emulator down
                let _ = w.write_all(line.as_bytes()).and_then(|_| w.flush());
            }
        }
    }
}

/// A trace point resolved at construction time.
#[derive(Clone)]
pub struct TracePoint {
    name: &'static str,
    tracer: Option<Tracer>,
}

impl fmt::Debug for TracePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TracePoint({}, {})",
            self.name,
            if self.tracer.is_some() { "on" } else { "off" }
        )
    }
}

impl TracePoint {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn is_enabled(&self) -> bool {
        self.tracer.is_some()
    }

    #[inline]
    pub fn emit<F: FnOnce() -> String>(&self, args: F) {
        if let Some(t) = &self.tracer {
            t.write(self.name, args);
        }
    }
}
