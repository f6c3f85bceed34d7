//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Uses fixed host ports 8000..=8007.

mod common;

use std::net::{Ipv4Addr, SocketAddr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{Booted, FirewallOutcome};
use espemu::guest::{GuestConfig, GuestMode};
use espemu::harness::{http_get, run_bench, BenchConfig, GuestOutput, Instance, InstanceConfig};
use espemu::mac::events;
use espemu::trace::{TraceEvent, TraceLog, TracePattern, TraceSink, Tracer};
use espemu::usernet::parse_nic_config;
use rand::{Rng, RngCore, SeedableRng};

const E2E_BUDGET: Duration = Duration::from_secs(5);
const RING_BUDGET: Duration = Duration::from_secs(10);
const ECHO_BUDGET: Duration = Duration::from_secs(10);
const BENCH_BUDGET: Duration = Duration::from_secs(15);

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2e(image: &std::path::Path) -> Outcome {
    let start = Instant::now();
    let node = Booted::spawn(image, 8000, &[]);
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, 8000));
    let (status, body) =
        http_get(addr, "/hello", Duration::from_secs(5)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let code = node.interrupt();
    check(status == 200, || format!("status {status}"))?;
    check(body == b"Hello World!", || {
        format!("body {:?}", String::from_utf8_lossy(&body))
    })?;
    check(took < E2E_BUDGET, || format!("took {took:?}"))?;
    check(code.success(), || format!("exit {code:?}"))?;
    Ok(format!(
        "200 \"Hello World!\" in {:.0} ms",
        took.as_secs_f64() * 1e3
    ))
}

fn dhcp(image: &std::path::Path) -> Outcome {
    let port = common::free_port();
    let node = Booted::spawn(image, port, &[]);
    let lines = node.lines();
    let _ = node.interrupt();
    let want = "example_netif_eth: bound to 10.0.2.15 netmask 255.255.255.0 gw 10.0.2.2";
    check(lines.iter().any(|l| l == want), || {
        format!("log was {lines:?}")
    })?;
    let via_api = common::start(GuestMode::Http, Tracer::disabled());
    let lease = via_api.instance.wait_bound(Duration::from_secs(1));
    check(lease == Some(Ipv4Addr::new(10, 0, 2, 15)), || {
        format!("lease {lease:?}")
    })?;
    Ok("lease 10.0.2.15, bind line logged".into())
}

fn trace_order(image: &std::path::Path, dir: &std::path::Path) -> Outcome {
    let path = dir.join("trace.log");
    let node = Booted::spawn(
        image,
        common::free_port(),
        &[
            "--trace",
            "open_eth*",
            "-trace-file",
            path.to_str().unwrap(),
        ],
    );
    http_get(node.addr(), "/hello", Duration::from_secs(5)).map_err(|e| e.to_string())?;
    let _ = node.interrupt();
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let names: Vec<String> = text
        .lines()
        .filter_map(TraceEvent::parse_line)
        .map(|e| e.name)
        .collect();
    let first = |n: &str| names.iter().position(|x| x == n);
    let order = [
        events::MII_READ,
        events::DESC_WRITE,
        events::START_XMIT,
        events::RECEIVE,
    ];
    let idx: Vec<Option<usize>> = order.iter().map(|n| first(n)).collect();
    check(idx.iter().all(Option::is_some), || {
        format!("missing first events {idx:?}")
    })?;
    check(idx.windows(2).all(|w| w[0] < w[1]), || {
        format!("first indices {idx:?} out of order")
    })?;
    let required = [
        events::REG_READ,
        events::REG_WRITE,
        events::MII_READ,
        events::MII_WRITE,
        events::DESC_READ,
        events::DESC_WRITE,
        events::START_XMIT,
        events::RECEIVE,
        events::RECEIVE_DESC,
        events::UPDATE_IRQ,
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|n| first(n).is_none())
        .collect();
    check(missing.is_empty(), || format!("missing {missing:?}"))?;

    // multicast acceptance has its own trace event, driven directly
    let log = TraceLog::new();
    let tracer = Tracer::enable(
        vec![TracePattern::new("open_eth*")],
        TraceSink::Memory(log.clone()),
    )
    .unwrap();
    let mut dev = espemu::mac::OpenEth::new(&tracer);
    let group = [0x01, 0x00, 0x5e, 0x00, 0x00, 0xfb];
    let bit = common::oracle_hash_bit(&group);
    dev.reg_write(espemu::mac::regs::HASH0 + 4 * (bit / 32), 1 << (bit % 32));
    dev.reg_write(espemu::mac::regs::MODER, espemu::mac::regs::MODER_RXEN);
    let mut frame = group.to_vec();
    frame.resize(60, 0);
    dev.receive(&frame);
    check(
        log.names().iter().any(|n| n == events::RECEIVE_MCAST),
        || "no receive_mcast event".into(),
    )?;
    Ok(format!(
        "{} events, ordering holds, all 10 kinds present, receive_mcast seen",
        names.len()
    ))
}

fn firewall() -> Outcome {
    let o = common::firewall_probe(1000, 0xF1BE);
    let clean = FirewallOutcome {
        offered: 1000,
        dropped_unsolicited: 1000,
        ..Default::default()
    };
    check(o == clean, || format!("{o:?}"))?;
    Ok("1000 unsolicited frames, 0 leaks".into())
}

fn ring() -> Outcome {
    let start = Instant::now();
    for seed in 0..100 {
        let (dev, model) = common::ring::run_seed(seed, 1000, 8);
        check(dev == model, || format!("seed {seed} diverges"))?;
    }
    let took = start.elapsed();
    check(took < RING_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "100 seeds x 1000 steps equal in {:.2} s",
        took.as_secs_f64()
    ))
}

fn checksums() -> Outcome {
    use espemu::wire::{ipv4_checksum, tcp_checksum};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC5);
    for i in 0..10_000 {
        let header: Vec<u8> = (0..rng.gen_range(10..=30) * 2).map(|_| rng.gen()).collect();
        let got = ipv4_checksum(&header).map_err(|e| e.to_string())?;
        check(got == common::oracle_checksum(&header), || {
            format!("ipv4 input {i}")
        })?;
        let (s, d) = (
            Ipv4Addr::from(rng.gen::<u32>()),
            Ipv4Addr::from(rng.gen::<u32>()),
        );
        let seg: Vec<u8> = (0..rng.gen_range(20..=1480)).map(|_| rng.gen()).collect();
        check(
            tcp_checksum(s, d, &seg) == common::oracle_tcp_checksum(s, d, &seg),
            || format!("tcp input {i}"),
        )?;
    }
    let example = [
        0x45, 0, 0, 0x3c, 0x1c, 0x46, 0x40, 0, 0x40, 6, 0, 0, 0xac, 0x10, 0x0a, 0x63, 0xac, 0x10,
        0x0a, 0x0c,
    ];
    let (oracle, got) = (
        common::oracle_checksum(&example),
        ipv4_checksum(&example).unwrap(),
    );
    check(oracle == 0xB1E6 && got == 0xB1E6, || {
        format!("example oracle {oracle:#x} impl {got:#x}")
    })?;
    Ok("10000 inputs equal, example 0xB1E6".into())
}

fn echo() -> Outcome {
    let node = common::start(GuestMode::Echo, Tracer::disabled());
    let mut data = vec![0u8; 1 << 20];
    rand_chacha::ChaCha8Rng::seed_from_u64(1).fill_bytes(&mut data);
    let data = Arc::new(data);
    let start = Instant::now();
    let back = common::echo_round_trip(node.addr(), data.clone(), 2);
    let took = start.elapsed();
    let (want, got) = (crc32fast::hash(&data), crc32fast::hash(&back));
    check(back.len() == data.len(), || {
        format!("{} of {} bytes", back.len(), data.len())
    })?;
    check(want == got && back == *data, || {
        format!("digest {got:08x} != {want:08x}")
    })?;
    check(took < ECHO_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "1 MiB identical (crc32 {got:08x}) in {:.2} s",
        took.as_secs_f64()
    ))
}

fn flash() -> Outcome {
    use espemu::flash::*;
    let table = generate_table("default").unwrap();
    let app = app_image(&GuestConfig::default());
    let layout = FlashLayout::default();
    let img = merge(&bootloader_image(), &table, &app, layout).map_err(|e| e.to_string())?;
    let report = inspect(&img.bytes, layout).map_err(|e| e.to_string())?;
    check(report.layout == layout, || {
        format!("layout {}", report.layout)
    })?;
    check(report.entries == table, || {
        format!("entries {:?}", report.entries)
    })?;
    check(report.segments[2].crc32 == crc32fast::hash(&app), || {
        "app crc".into()
    })?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for t in 0..1000 {
        let mut at = 0x9000u32;
        let entries: Vec<PartitionEntry> = (0..rng.gen_range(1..=20))
            .map(|i| {
                let size = rng.gen_range(1..=32) * 0x1000;
                let label: String = (0..rng.gen_range(0..=16))
                    .map(|_| rng.gen_range(b'a'..=b'z') as char)
                    .collect();
                let e = PartitionEntry {
                    ptype: rng.gen_range(0..2),
                    subtype: rng.gen(),
                    offset: at,
                    size,
                    label,
                    flags: i % 2,
                };
                at += size;
                e
            })
            .collect();
        let raw = serialize_partition_table(&entries).map_err(|e| e.to_string())?;
        let back = parse_partition_table(&raw).map_err(|e| e.to_string())?;
        check(back == entries, || format!("table {t} differs"))?;
    }
    Ok("merge/inspect exact, 1000 tables identical".into())
}

fn bench() -> Outcome {
    let cfg = BenchConfig {
        instances: 8,
        base_port: 8000,
        rate: 20.0,
        duration: 5.0,
        path: "/hello".into(),
    };
    let start = Instant::now();
    let mut sink = Vec::new();
    let r = run_bench(&cfg, &mut sink).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let a = &r.aggregate;
    check(a.errors == 0, || format!("{} errors", a.errors))?;
    check(r.all_served() && r.ports.len() == 8, || {
        "not every port served".into()
    })?;
    let mono = |s: &espemu::harness::LatencySummary| {
        s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms && s.p99_ms <= s.max_ms
    };
    check(mono(a) && r.per_instance.iter().all(mono), || {
        "percentiles not monotonic".into()
    })?;
    let sum: usize = r.per_instance.iter().map(|s| s.requests).sum();
    check(sum == a.requests && a.requests == 800, || {
        format!("aggregate {} vs sum {sum}", a.requests)
    })?;
    check(took < BENCH_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "800 requests, 0 errors, p50 {:.2} ms p99 {:.2} ms, {:.1} s",
        a.p50_ms,
        a.p99_ms,
        took.as_secs_f64()
    ))
}

fn boot_and_request(pattern: &str) -> Result<(u64, usize), String> {
    let log = TraceLog::new();
    let tracer = Tracer::enable(
        vec![TracePattern::new(pattern)],
        TraceSink::Memory(log.clone()),
    )
    .unwrap();
    let port = common::free_port();
    let nic = parse_nic_config(&format!("user,model=open_eth,hostfwd=tcp::{port}-:80")).unwrap();
    let inst = Instance::start(InstanceConfig {
        guest: GuestConfig::default(),
        nic,
        tracer: tracer.clone(),
        output: GuestOutput::Memory(Default::default()),
    })
    .map_err(|e| e.to_string())?;
    inst.wait_bound(Duration::from_secs(5)).ok_or("no lease")?;
    let (status, _) = http_get(
        SocketAddr::from((Ipv4Addr::LOCALHOST, port)),
        "/hello",
        Duration::from_secs(5),
    )
    .map_err(|e| e.to_string())?;
    check(status == 200, || format!("status {status}"))?;
    inst.shutdown();
    Ok((tracer.formatted_count(), log.len()))
}

fn laziness() -> Outcome {
    let (formatted, logged) = boot_and_request("nomatch*")?;
    check(formatted == 0 && logged == 0, || {
        format!("{formatted} callbacks ran")
    })?;
    let (control, _) = boot_and_request("open_eth*")?;
    check(control > 0, || "control run formatted nothing".into())?;
    Ok(format!("0 callbacks unmatched ({control} when matched)"))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let image = common::sample_image(dir.path());
    let criteria: Vec<Criterion> = vec![
        ("end-to-end request", Box::new(|| e2e(&image))),
        ("dhcp lease", Box::new(|| dhcp(&image))),
        (
            "trace phase ordering",
            Box::new(|| trace_order(&image, dir.path())),
        ),
        ("firewall", Box::new(firewall)),
        ("descriptor ring oracle", Box::new(ring)),
        ("checksum oracles", Box::new(checksums)),
        ("stream fidelity", Box::new(echo)),
        ("flash round trip", Box::new(flash)),
        ("scale benchmark", Box::new(bench)),
        ("trace laziness", Box::new(laziness)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
