//! Seeded synthetic data: a small labeled packet trace for the extraction
//! pipeline, and a labeled three-class feature set with one class behind a
//! nonlinear boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{LabeledRow, BENIGN};
use crate::flowmeter::{Endpoint, FlowKey, FlowLabels, PacketRecord, TCP};

const UDP: u8 = 17;

fn packet(ts: f64, src: &Endpoint, dst: &Endpoint, protocol: u8, len: u64) -> PacketRecord {
    PacketRecord {
        timestamp: ts,
        src_ip: src.ip.clone(),
        dst_ip: dst.ip.clone(),
        src_port: src.port,
        dst_port: dst.port,
        protocol,
        ip_total_length: len,
        syn: false,
        ack: false,
        fin: false,
        cwr: false,
    }
}

fn tcp(ts: f64, src: &Endpoint, dst: &Endpoint, len: u64, syn: bool, ack: bool, fin: bool) -> PacketRecord {
    PacketRecord {
        syn,
        ack,
        fin,
        ..packet(ts, src, dst, TCP, len)
    }
}

/// A labeled packet trace: web sessions and DNS lookups (benign), SYN
/// floods (`dos`) and port scans (`portscan`). Packets are sorted by
/// timestamp; every flow has a label entry.
pub fn packet_trace(flows: usize, seed: u64) -> (Vec<PacketRecord>, FlowLabels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packets = Vec::new();
    let mut labels = FlowLabels::default();
    let server = |i: u32| format!("192.168.10.{}", 10 + i % 5);
    for f in 0..flows {
        let start = f as f64 * 2.5 + rng.gen_range(0.0..2.0);
        let client = Endpoint {
            ip: format!("10.0.{}.{}", (f / 200) % 250, f % 200 + 1),
            port: 20_000 + (f as u16 % 40_000),
        };
        let kind = rng.gen_range(0..10);
        let (label, family, proto, dst) = match kind {
            0..=4 => {
                let dst = Endpoint { ip: server(f as u32), port: 443 };
                let mut t = start;
                packets.push(tcp(t, &client, &dst, 60, true, false, false));
                t += rng.gen_range(0.001..0.05);
                packets.push(tcp(t, &dst, &client, 60, true, true, false));
                t += rng.gen_range(0.001..0.05);
                packets.push(tcp(t, &client, &dst, 52, false, true, false));
                for _ in 0..rng.gen_range(1..6) {
                    t += rng.gen_range(0.01..0.3);
                    packets.push(tcp(t, &client, &dst, rng.gen_range(200..700), false, true, false));
                    t += rng.gen_range(0.01..0.2);
                    packets.push(tcp(t, &dst, &client, rng.gen_range(600..1500), false, true, false));
                }
                t += rng.gen_range(0.01..0.1);
                packets.push(tcp(t, &client, &dst, 52, false, true, true));
                t += rng.gen_range(0.001..0.05);
                packets.push(tcp(t, &dst, &client, 52, false, true, true));
                ("0", BENIGN, TCP, dst)
            }
            5..=6 => {
                let dst = Endpoint { ip: "192.168.10.3".into(), port: 53 };
                packets.push(packet(start, &client, &dst, UDP, rng.gen_range(60..90)));
                let reply = start + rng.gen_range(0.002..0.04);
                packets.push(packet(reply, &dst, &client, UDP, rng.gen_range(90..300)));
                ("0", BENIGN, UDP, dst)
            }
            7..=8 => {
                let dst = Endpoint { ip: server(0), port: 80 };
                let mut t = start;
                for _ in 0..rng.gen_range(8..20) {
                    packets.push(tcp(t, &client, &dst, 40, true, false, false));
                    t += rng.gen_range(0.0005..0.005);
                }
                ("1", "dos", TCP, dst)
            }
            _ => {
                let dst = Endpoint { ip: server(1), port: rng.gen_range(1..1024) };
                packets.push(tcp(start, &client, &dst, 44, true, false, false));
                ("1", "portscan", TCP, dst)
            }
        };
        labels.insert(FlowKey::new(client, dst, proto), label.into(), family.into());
    }
    packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    (packets, labels)
}

/// Three-class task in `[-1, 1]^dims`. Class 0 (`benign`) occupies
/// `x0 > 0` and is linearly separable. The rest is split between class 1
/// (`flood`) and class 2 (`stealth`) by a checkerboard on `(x1, x2)` with
/// `cells` squares per axis, so class 2 needs a nonlinear boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckerTask {
    pub samples: usize,
    pub dims: usize,
    pub cells: usize,
    /// Gap around `x0 = 0` left empty so class 0 is cleanly separable.
    pub margin: f64,
}

impl Default for CheckerTask {
    fn default() -> Self {
        Self {
            samples: 30_000,
            dims: 8,
            cells: 3,
            margin: 0.1,
        }
    }
}

pub const CHECKER_CLASSES: [&str; 3] = [BENIGN, "flood", "stealth"];

impl CheckerTask {
    pub fn feature_names(&self) -> Vec<String> {
        (0..self.dims).map(|i| format!("f{i}")).collect()
    }

    pub fn generate(&self, seed: u64) -> Vec<LabeledRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = self.cells as f64 / 2.0;
        (0..self.samples)
            .map(|_| {
                let mut x: Vec<f64> = (0..self.dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
                while x[0].abs() < self.margin {
                    x[0] = rng.gen_range(-1.0..1.0);
                }
                let class = if x[0] > 0.0 {
                    0
                } else {
                    let cx = ((x[1] + 1.0) * half).floor() as i64;
                    let cy = ((x[2] + 1.0) * half).floor() as i64;
                    if (cx + cy) % 2 == 0 {
                        1
                    } else {
                        2
                    }
                };
                LabeledRow {
                    features: x,
                    attack: class != 0,
                    family: CHECKER_CLASSES[class].to_string(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmeter::{meter_trace, FlowTableConfig};

    #[test]
    fn trace_is_sorted_and_fully_labeled() {
        let (packets, labels) = packet_trace(60, 3);
        assert!(packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let flows = meter_trace(&packets, FlowTableConfig::default()).unwrap();
        assert_eq!(flows.len(), 60);
        assert!(flows.iter().all(|f| labels.get(&f.key).is_some()));
        assert_eq!(packet_trace(60, 3).0, packets);
    }

    #[test]
    fn checker_task_balance() {
        let rows = CheckerTask { samples: 3000, ..Default::default() }.generate(1);
        let count = |f: &str| rows.iter().filter(|r| r.family == f).count();
        assert!((count("benign") as f64 / 3000.0 - 0.5).abs() < 0.05);
        assert!(count("stealth") > 500);
        assert!(count("flood") > 500);
    }
}
