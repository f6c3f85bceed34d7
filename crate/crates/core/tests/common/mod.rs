//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Everything here is written independently of the library code it
//! checks.

#![allow(dead_code)]

pub mod ring;

use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use espemu::guest::{GuestConfig, GuestMode};
use espemu::harness::{GuestOutput, Instance, InstanceConfig};
use espemu::trace::Tracer;
use espemu::usernet::parse_nic_config;

/// RFC 1071 checksum, one 16-bit word at a time with an end-around carry
/// after every addition.
pub fn oracle_checksum(data: &[u8]) -> u16 {
    let mut sum: u16 = 0;
    let mut i = 0;
    while i < data.len() {
        let hi = data[i] as u16;
        let lo = if i + 1 < data.len() {
            data[i + 1] as u16
        } else {
            0
        };
        let word = (hi << 8) | lo;
        let (s, carry) = sum.overflowing_add(word);
        sum = s + carry as u16;
        i += 2;
    }
    !sum
}

/// TCP checksum with the pseudo-header spelled out byte by byte.
pub fn oracle_tcp_checksum(src: Ipv4Addr, dst: Ipv4Addr, segment: &[u8]) -> u16 {
    let mut buf = Vec::new();
    buf.extend_from_slice(&src.octets());
    buf.extend_from_slice(&dst.octets());
    buf.push(0);
    buf.push(6);
    buf.push((segment.len() >> 8) as u8);
    buf.push(segment.len() as u8);
    buf.extend_from_slice(segment);
    oracle_checksum(&buf)
}

/// Multicast filter bit: top six bits of the bit-reversed complement of the
/// standard reflected CRC-32.
pub fn oracle_hash_bit(mac: &[u8; 6]) -> u32 {
    (!crc32fast::hash(mac)).reverse_bits() >> 26
}

/// A TCP port that was free a moment ago.
pub fn free_port() -> u16 {
    TcpListener::bind((Ipv4Addr::LOCALHOST, 0))
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub struct Running {
    pub instance: Instance,
    pub port: u16,
    pub stdout: Arc<Mutex<Vec<String>>>,
    pub tracer: Tracer,
}

impl Running {
    pub fn addr(&self) -> SocketAddr {
        SocketAddr::from((Ipv4Addr::LOCALHOST, self.port))
    }

    pub fn stdout(&self) -> Vec<String> {
        self.stdout.lock().unwrap().clone()
    }
}

/// Starts an in-process instance forwarding a fresh host port to guest port 80
/// and waits for the DHCP lease.
pub fn start(mode: GuestMode, tracer: Tracer) -> Running {
    for _ in 0..5 {
        let port = free_port();
        let nic = parse_nic_config(&format!(
            "user,model=open_eth,id=t0,hostfwd=tcp::{port}-:80"
        ))
        .unwrap();
        let stdout = Arc::new(Mutex::new(Vec::new()));
        let config = InstanceConfig {
            guest: GuestConfig {
                mode,
                ..GuestConfig::default()
            },
            nic,
            tracer: tracer.clone(),
            output: GuestOutput::Memory(stdout.clone()),
        };
        // the port may have been taken in between; try another
        let Ok(instance) = Instance::start(config) else {
            continue;
        };
        instance
            .wait_bound(Duration::from_secs(5))
            .expect("guest obtains a lease");
        return Running {
            instance,
            port,
            stdout,
            tracer,
        };
    }
    panic!("no free port found");
}

/// Pushes `data` through `addr` in random-sized writes on one thread while
/// another reads the echo back. Returns the bytes received.
pub fn echo_round_trip(addr: SocketAddr, data: Arc<Vec<u8>>, seed: u64) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .unwrap();
    stream.set_nodelay(true).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let w = std::thread::spawn(move || {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pos = 0;
        while pos < data.len() {
            let n = rng.gen_range(1..=65536).min(data.len() - pos);
            writer.write_all(&data[pos..pos + n]).unwrap();
            pos += n;
            if rng.gen_ratio(1, 16) {
                std::thread::sleep(Duration::from_micros(rng.gen_range(0..500)));
            }
        }
        writer.shutdown(std::net::Shutdown::Write).unwrap();
    });
    let mut out = Vec::new();
    let mut reader = stream;
    reader.read_to_end(&mut out).unwrap();
    w.join().unwrap();
    out
}

/// The `espemu` binary running `run` against an image, with stdout lines
/// collected in the background.
pub struct Booted {
    pub child: std::process::Child,
    pub lines: Arc<Mutex<Vec<String>>>,
    pub port: u16,
}

pub fn espemu() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_espemu"))
}

/// Writes a sample image into `dir` and returns its path.
pub fn sample_image(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("flash.bin");
    let status = espemu()
        .args(["flash", "sample", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    path
}

impl Booted {
    /// Spawns the emulator and waits until the guest reports its listener.
    pub fn spawn(image: &std::path::Path, port: u16, extra: &[&str]) -> Booted {
        use std::io::BufRead;
        use std::process::Stdio;
        let mut child = espemu()
            .args(["run", "-nographic", "-machine", "esp32", "-nic"])
            .arg(format!(
                "user,model=open_eth,id=lo0,hostfwd=tcp::{port}-:80"
            ))
            .arg("-drive")
            .arg(format!("file={},if=mtd,format=raw", image.display()))
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let lines = Arc::new(Mutex::new(Vec::new()));
        let (tx, rx) = std::sync::mpsc::channel();
        let out = child.stdout.take().unwrap();
        let sink = lines.clone();
        std::thread::spawn(move || {
            for line in std::io::BufReader::new(out).lines().map_while(Result::ok) {
                if line.starts_with("http server listening") {
                    let _ = tx.send(());
                }
                sink.lock().unwrap().push(line);
            }
        });
        let ready = rx.recv_timeout(Duration::from_secs(5));
        let mut b = Booted { child, lines, port };
        if ready.is_err() {
            let _ = b.child.kill();
            panic!("emulator did not come up: {:?}", b.lines());
        }
        b
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::from((Ipv4Addr::LOCALHOST, self.port))
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().unwrap().clone()
    }

    /// Sends SIGINT and waits for exit.
    pub fn interrupt(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        std::process::Command::new("kill")
            .args(["-INT", &pid])
            .status()
            .unwrap();
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        loop {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s;
            }
            if std::time::Instant::now() > deadline {
                let _ = self.child.kill();
                panic!("emulator ignored SIGINT");
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Booted {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// What reached the guest while unsolicited traffic was thrown at the stack.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct FirewallOutcome {
    pub offered: u64,
    pub dropped_unsolicited: u64,
    pub frames_to_guest: u64,
    pub connections_accepted: u64,
    pub app_bytes_in: u64,
    pub flows_created: usize,
}

/// Boots a node with a live forwarded connection, then offers `count`
/// randomized inbound frames from outside the slirp network together with
/// host events naming connections that do not exist. Counts are deltas
/// measured across the barrage.
pub fn firewall_probe(count: u32, seed: u64) -> FirewallOutcome {
    use espemu::harness::Node;
    use espemu::wire::*;
    use rand::{Rng, SeedableRng};
    use std::time::Instant;

    let nic = parse_nic_config("user,model=open_eth,hostfwd=tcp::8000-:80").unwrap();
    let now = Instant::now();
    let mut node = Node::boot(GuestConfig::default(), &nic, &Tracer::disabled(), now).unwrap();
    node.pump(now);
    let rule = nic.forwards[0].clone();
    let live = node.net.host_connection_in(&rule, now).unwrap();
    node.pump(now);

    let guest_before = node.guest.counters();
    let link_before = node.link();
    let flows_before = node.net.flow_count();
    let unsolicited_before = node.net.counters().unsolicited;
    let guest_mac = GuestConfig::default().mac;
    let guest_ip = node.guest_ip().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let src = Ipv4Addr::new(rng.gen_range(1..224), rng.gen(), rng.gen(), rng.gen());
        let payload: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
        let ip = match i % 3 {
            0 => {
                let seg = TcpSegment {
                    src_port: rng.gen_range(1..65535),
                    dst_port: [80, rng.gen_range(1..65535)][rng.gen_range(0..2)],
                    seq: rng.gen(),
                    ack: rng.gen(),
                    flags: TcpFlags::from_bits(rng.gen_range(0..32)),
                    window: rng.gen(),
                    payload,
                };
                Ipv4Packet::new(src, guest_ip, PROTO_TCP, seg.encode(src, guest_ip))
            }
            1 => {
                let d = UdpDatagram {
                    src_port: rng.gen(),
                    dst_port: rng.gen(),
                    payload,
                };
                Ipv4Packet::new(src, guest_ip, PROTO_UDP, d.encode(src, guest_ip))
            }
            _ => Ipv4Packet::new(src, guest_ip, rng.gen(), payload),
        };
        let dst = if rng.gen() {
            guest_mac
        } else {
            MacAddress::BROADCAST
        };
        let frame = EthernetFrame::new(
            dst,
            MacAddress([2, 0, 0, 0, 0, rng.gen()]),
            ETHERTYPE_IPV4,
            ip.encode().unwrap(),
        );
        node.net.external_frame_in(&encode_frame(&frame).unwrap());
        let ghost = espemu::usernet::ConnId(live.0 + 1 + u64::from(i));
        node.net.host_connected(ghost, now);
        node.net
            .host_data(ghost, b"GET /hello HTTP/1.1\r\n\r\n", now);
        node.net.host_eof(ghost, now);
        node.pump(now);
    }
    let g = node.guest.counters();
    FirewallOutcome {
        offered: u64::from(count),
        dropped_unsolicited: node.net.counters().unsolicited - unsolicited_before,
        frames_to_guest: node.link().net_to_guest - link_before.net_to_guest,
        connections_accepted: g.connections_accepted - guest_before.connections_accepted,
        app_bytes_in: g.app_bytes_in - guest_before.app_bytes_in,
        flows_created: node.net.flow_count().saturating_sub(flows_before),
    }
}
