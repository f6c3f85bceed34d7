//! Threaded runtime around a [`Node`]: host listeners for forward rules,
//! socket reader/writer threads, and the single event loop that owns all
//! guest-facing state. Threads talk to the loop only through a channel.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddr, SocketAddrV4, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::node::{LinkCounters, Node};
use super::HarnessError;
use crate::guest::GuestConfig;
use crate::trace::Tracer;
use crate::usernet::{ConnId, Counters, ForwardRule, HostAction, NicConfig};

const READ_CHUNK: usize = 16 * 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
/// Upper bound on a loop wait with no timers armed.
const IDLE_WAIT: Duration = Duration::from_millis(100);

enum Event {
    Accepted { rule: usize, stream: TcpStream },
    Data { conn: ConnId, data: Vec<u8> },
    Eof { conn: ConnId },
    ReadFailed { conn: ConnId },
    Connected { conn: ConnId, stream: TcpStream },
    ConnectFailed { conn: ConnId },
    Stop,
}

enum WriteCmd {
    Data(Vec<u8>),
    ShutdownWrite,
}

/// Where guest stdout lines go.
#[derive(Clone)]
pub enum GuestOutput {
    /// Printed to the process stdout, with an optional prefix.
    Print(Option<String>),
    Memory(Arc<Mutex<Vec<String>>>),
}

impl GuestOutput {
    fn emit(&self, line: &str) {
        match self {
            GuestOutput::Print(None) => println!("{line}"),
            GuestOutput::Print(Some(p)) => println!("{p}{line}"),
            GuestOutput::Memory(buf) => buf
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(line.to_string()),
        }
    }
}

pub struct InstanceConfig {
    pub guest: GuestConfig,
    pub nic: NicConfig,
    pub tracer: Tracer,
    pub output: GuestOutput,
}

/// Snapshot taken when the event loop exits.
#[derive(Debug, Clone, Copy, Default)]
pub struct InstanceStats {
    pub usernet: Counters,
    pub link: LinkCounters,
    pub requests_served: u64,
}

#[derive(Default)]
struct Shared {
    bound: Mutex<Option<Ipv4Addr>>,
    cv: Condvar,
}

pub struct Instance {
    tx: Sender<Event>,
    stop: Arc<AtomicBool>,
    shared: Arc<Shared>,
    listen_addrs: Vec<SocketAddr>,
    acceptors: Vec<JoinHandle<()>>,
    event_loop: Option<JoinHandle<InstanceStats>>,
}

fn host_bind_addr(rule: &ForwardRule) -> SocketAddrV4 {
    SocketAddrV4::new(
        rule.host_addr.unwrap_or(Ipv4Addr::UNSPECIFIED),
        rule.host_port,
    )
}

impl Instance {
    /// Binds every forward rule's host port, boots the node and starts the
    /// event loop. Fails without leaving listeners behind.
    pub fn start(config: InstanceConfig) -> Result<Instance, HarnessError> {
        let mut listeners = Vec::new();
        for rule in &config.nic.forwards {
            let addr = host_bind_addr(rule);
            let l =
                TcpListener::bind(addr).map_err(|source| HarnessError::Bind { addr, source })?;
            listeners.push(l);
        }
        let node = Node::boot(config.guest, &config.nic, &config.tracer, Instant::now())?;

        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared::default());
        let mut listen_addrs = Vec::new();
        let mut acceptors = Vec::new();
        for (rule, l) in listeners.into_iter().enumerate() {
            listen_addrs.push(l.local_addr().map_err(HarnessError::Io)?);
            let (tx, stop) = (tx.clone(), stop.clone());
            acceptors.push(thread::spawn(move || accept_loop(l, rule, tx, stop)));
        }
        let mut el = EventLoop {
            node,
            rules: config.nic.forwards.clone(),
            rx,
            tx: tx.clone(),
            writers: HashMap::new(),
            output: config.output,
            shared: shared.clone(),
        };
        let event_loop = thread::Builder::new()
            .name("instance-loop".into())
            .spawn(move || el.run())
            .map_err(HarnessError::Io)?;
        Ok(Instance {
            tx,
            stop,
            shared,
            listen_addrs,
            acceptors,
            event_loop: Some(event_loop),
        })
    }

    /// Actual bound listener addresses, in rule order.
    pub fn listen_addrs(&self) -> &[SocketAddr] {
        &self.listen_addrs
    }

    /// Waits until the guest holds a DHCP lease.
    pub fn wait_bound(&self, timeout: Duration) -> Option<Ipv4Addr> {
        let guard = self.shared.bound.lock().unwrap_or_else(|e| e.into_inner());
        let (guard, _) = self
            .shared
            .cv
            .wait_timeout_while(guard, timeout, |b| b.is_none())
            .unwrap_or_else(|e| e.into_inner());
        *guard
    }

    /// Stops accepting, closes all relayed connections and joins every thread.
    pub fn shutdown(mut self) -> InstanceStats {
        self.stop_all()
    }

    fn stop_all(&mut self) -> InstanceStats {
        self.stop.store(true, Ordering::SeqCst);
        for addr in &self.listen_addrs {
            // wake the blocking accept
            let wake = match addr {
                SocketAddr::V4(a) if a.ip().is_unspecified() => {
                    SocketAddr::from((Ipv4Addr::LOCALHOST, a.port()))
                }
                a => *a,
            };
            let _ = TcpStream::connect_timeout(&wake, Duration::from_millis(200));
        }
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
        let _ = self.tx.send(Event::Stop);
        self.event_loop
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_default()
    }
}

impl Drop for Instance {
    fn drop(&mut self) {
        if self.event_loop.is_some() {
            self.stop_all();
        }
    }
}

fn accept_loop(listener: TcpListener, rule: usize, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        if tx.send(Event::Accepted { rule, stream }).is_err() {
            return;
        }
    }
}

fn read_loop(mut stream: TcpStream, conn: ConnId, tx: Sender<Event>) {
    let mut buf = vec![0u8; READ_CHUNK];
    loop {
        let ev = match stream.read(&mut buf) {
            Ok(0) => Event::Eof { conn },
            Ok(n) => Event::Data {
                conn,
                data: buf[..n].to_vec(),
            },
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => Event::ReadFailed { conn },
        };
        let last = !matches!(ev, Event::Data { .. });
        if tx.send(ev).is_err() || last {
            return;
        }
    }
}

fn write_loop(mut stream: TcpStream, rx: Receiver<WriteCmd>) {
    while let Ok(cmd) = rx.recv() {
        match cmd {
            WriteCmd::Data(d) => {
                if stream.write_all(&d).is_err() {
                    break;
                }
            }
            WriteCmd::ShutdownWrite => {
                let _ = stream.shutdown(Shutdown::Write);
            }
        }
    }
    // channel closed: the stack is done with this connection
    let _ = stream.shutdown(Shutdown::Both);
}

struct EventLoop {
    node: Node,
    rules: Vec<ForwardRule>,
    rx: Receiver<Event>,
    tx: Sender<Event>,
    writers: HashMap<ConnId, Sender<WriteCmd>>,
    output: GuestOutput,
    shared: Arc<Shared>,
}

impl EventLoop {
    fn run(&mut self) -> InstanceStats {
        self.after_pump();
        loop {
            let now = Instant::now();
            let wait = self
                .node
                .next_deadline()
                .map_or(IDLE_WAIT, |d| d.saturating_duration_since(now))
                .min(IDLE_WAIT);
            match self.rx.recv_timeout(wait) {
                Ok(Event::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(ev) => {
                    self.handle(ev);
                    // batch whatever else is already queued
                    while let Ok(ev) = self.rx.try_recv() {
                        if matches!(ev, Event::Stop) {
                            return self.finish();
                        }
                        self.handle(ev);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.node.pump(Instant::now());
            self.after_pump();
        }
        self.finish()
    }

    fn finish(&mut self) -> InstanceStats {
        self.writers.clear();
        let line_flush: Vec<String> = self.node.guest.take_stdout();
        for l in line_flush {
            self.output.emit(&l);
        }
        InstanceStats {
            usernet: self.node.net.counters(),
            link: self.node.link(),
            requests_served: self.node.guest.counters().requests_served,
        }
    }

    fn handle(&mut self, ev: Event) {
        let now = Instant::now();
        let net = &mut self.node.net;
        match ev {
            Event::Accepted { rule, stream } => {
                match net.host_connection_in(&self.rules[rule], now) {
                    Ok(conn) => self.attach(conn, stream),
                    Err(_) => drop(stream),
                }
            }
            Event::Data { conn, data } => net.host_data(conn, &data, now),
            Event::Eof { conn } => net.host_eof(conn, now),
            Event::ReadFailed { conn } => net.host_reset(conn),
            Event::Connected { conn, stream } => {
                self.attach(conn, stream);
                self.node.net.host_connected(conn, now);
            }
            Event::ConnectFailed { conn } => net.host_connect_failed(conn),
            Event::Stop => {}
        }
        self.node.pump(now);
        self.after_pump();
    }

    fn attach(&mut self, conn: ConnId, stream: TcpStream) {
        let (Ok(reader), writer) = (stream.try_clone(), stream) else {
            return;
        };
        let (wtx, wrx) = mpsc::channel();
        self.writers.insert(conn, wtx);
        let tx = self.tx.clone();
        thread::spawn(move || read_loop(reader, conn, tx));
        thread::spawn(move || write_loop(writer, wrx));
    }

    fn after_pump(&mut self) {
        for action in self.node.net.poll_host_actions() {
            match action {
                HostAction::Connect { conn, addr } => {
                    let tx = self.tx.clone();
                    thread::spawn(move || {
                        let ev = match TcpStream::connect_timeout(&addr.into(), CONNECT_TIMEOUT) {
                            Ok(stream) => Event::Connected { conn, stream },
                            Err(_) => Event::ConnectFailed { conn },
                        };
                        let _ = tx.send(ev);
                    });
                }
                HostAction::Send { conn, data } => {
                    if let Some(w) = self.writers.get(&conn) {
                        let _ = w.send(WriteCmd::Data(data));
                    }
                }
                HostAction::ShutdownWrite { conn } => {
                    if let Some(w) = self.writers.get(&conn) {
                        let _ = w.send(WriteCmd::ShutdownWrite);
                    }
                }
                HostAction::Close { conn } => {
                    self.writers.remove(&conn);
                }
            }
        }
        for line in self.node.guest.take_stdout() {
            self.output.emit(&line);
        }
        if let Some(ip) = self.node.guest_ip() {
            let mut b = self.shared.bound.lock().unwrap_or_else(|e| e.into_inner());
            if b.is_none() {
                *b = Some(ip);
                self.shared.cv.notify_all();
            }
        }
    }
}
