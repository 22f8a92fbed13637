//! Bidirectional five-tuple flow metering producing the 31-value CAIA
//! feature vector.
//!
//! Packets come from a packet-record CSV
//! (`timestamp,src_ip,dst_ip,src_port,dst_port,protocol,ip_total_length,syn,ack,fin,cwr`).
//! Flows are keyed on the unordered endpoint pair plus protocol. The
//! direction of a flow's first packet is its forward direction. A flow is
//! closed once it has been idle longer than the timeout (or, in lifetime
//! mode, once it has existed longer than the timeout), and everything still
//! resident is closed on [`FlowTable::flush`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TCP: u8 = 6;
pub const DEFAULT_TIMEOUT_SECS: f64 = 1800.0;
pub const FEATURE_COUNT: usize = 31;

pub const PACKET_CSV_HEADER: [&str; 11] = [
    "timestamp",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "ip_total_length",
    "syn",
    "ack",
    "fin",
    "cwr",
];

/// Column names of the feature CSV, in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "flowDurationMilliseconds",
    "sourceTransportPort",
    "destinationTransportPort",
    "protocolIdentifier",
    "octetTotalCount",
    "fwdIpTotalLengthMean",
    "fwdIpTotalLengthMin",
    "fwdIpTotalLengthMax",
    "fwdIpTotalLengthStdev",
    "fwdInterPacketTimeSecondsMean",
    "fwdInterPacketTimeSecondsMin",
    "fwdInterPacketTimeSecondsMax",
    "fwdInterPacketTimeSecondsStdev",
    "fwdPacketTotalCount",
    "fwdTcpSynTotalCount",
    "fwdTcpAckTotalCount",
    "fwdTcpFinTotalCount",
    "fwdTcpCwrTotalCount",
    "bwdIpTotalLengthMean",
    "bwdIpTotalLengthMin",
    "bwdIpTotalLengthMax",
    "bwdIpTotalLengthStdev",
    "bwdInterPacketTimeSecondsMean",
    "bwdInterPacketTimeSecondsMin",
    "bwdInterPacketTimeSecondsMax",
    "bwdInterPacketTimeSecondsStdev",
    "bwdPacketTotalCount",
    "bwdTcpSynTotalCount",
    "bwdTcpAckTotalCount",
    "bwdTcpFinTotalCount",
    "bwdTcpCwrTotalCount",
];

/// Offset of the forward block inside a [`FeatureVector`].
pub const FWD_OFFSET: usize = 5;
/// Offset of the backward block inside a [`FeatureVector`].
pub const BWD_OFFSET: usize = 18;
/// Width of one directional block.
pub const DIRECTION_WIDTH: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub timestamp: f64,
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub ip_total_length: u64,
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
    pub cwr: bool,
}

impl PacketRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(format!("timestamp {} must be finite and >= 0", self.timestamp));
        }
        if self.protocol != TCP && (self.syn || self.ack || self.fin || self.cwr) {
            return Err(format!(
                "TCP flags set on non-TCP packet (protocol {})",
                self.protocol
            ));
        }
        Ok(())
    }

    /// The same packet travelling the other way.
    pub fn reversed(&self) -> PacketRecord {
        PacketRecord {
            src_ip: self.dst_ip.clone(),
            dst_ip: self.src_ip.clone(),
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..self.clone()
        }
    }

    fn source(&self) -> Endpoint {
        Endpoint {
            ip: self.src_ip.clone(),
            port: self.src_port,
        }
    }

    fn destination(&self) -> Endpoint {
        Endpoint {
            ip: self.dst_ip.clone(),
            port: self.dst_port,
        }
    }

    fn to_csv_fields(&self) -> [String; 11] {
        let b = |v: bool| if v { "1" } else { "0" }.to_string();
        [
            self.timestamp.to_string(),
            self.src_ip.clone(),
            self.dst_ip.clone(),
            self.src_port.to_string(),
            self.dst_port.to_string(),
            self.protocol.to_string(),
            self.ip_total_length.to_string(),
            b(self.syn),
            b(self.ack),
            b(self.fin),
            b(self.cwr),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: String,
    pub port: u16,
}

/// Direction-independent flow identity: the two endpoints in canonical
/// (lexicographic) order plus the protocol.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub low: Endpoint,
    pub high: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(a: Endpoint, b: Endpoint, protocol: u8) -> Self {
        if a <= b {
            Self {
                low: a,
                high: b,
                protocol,
            }
        } else {
            Self {
                low: b,
                high: a,
                protocol,
            }
        }
    }

    pub fn of(pkt: &PacketRecord) -> Self {
        Self::new(pkt.source(), pkt.destination(), pkt.protocol)
    }
}

/// Mean, min, max and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stdev: f64,
}

/// Two-pass summary of a list. An empty list summarizes to all zeros.
pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Summary {
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        stdev: var.sqrt(),
    }
}

/// Streaming counterpart of [`summarize`] (Welford update).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn summary(&self) -> Summary {
        if self.count == 0 {
            return Summary::default();
        }
        // Rounding can push the mean a hair outside [min, max].
        let mean = self.mean.clamp(self.min, self.max);
        Summary {
            mean,
            min: self.min,
            max: self.max,
            stdev: (self.m2.max(0.0) / self.count as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct DirectionStats {
    packets: u64,
    lengths: RunningStats,
    last_timestamp: Option<f64>,
    gaps: RunningStats,
    syn: u64,
    ack: u64,
    fin: u64,
    cwr: u64,
}

impl DirectionStats {
    fn push(&mut self, pkt: &PacketRecord) {
        self.packets += 1;
        self.lengths.push(pkt.ip_total_length as f64);
        if let Some(prev) = self.last_timestamp {
            self.gaps.push((pkt.timestamp - prev).max(0.0));
        }
        self.last_timestamp = Some(self.last_timestamp.map_or(pkt.timestamp, |p| p.max(pkt.timestamp)));
        self.syn += pkt.syn as u64;
        self.ack += pkt.ack as u64;
        self.fin += pkt.fin as u64;
        self.cwr += pkt.cwr as u64;
    }

    fn write_into(&self, out: &mut [f64]) {
        let len = self.lengths.summary();
        let gap = self.gaps.summary();
        out.copy_from_slice(&[
            len.mean,
            len.min,
            len.max,
            len.stdev,
            gap.mean,
            gap.min,
            gap.max,
            gap.stdev,
            self.packets as f64,
            self.syn as f64,
            self.ack as f64,
            self.fin as f64,
            self.cwr as f64,
        ]);
    }
}

/// Running state of one resident flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAccumulator {
    pub key: FlowKey,
    /// Source endpoint of the first packet; defines the forward direction.
    pub initiator: Endpoint,
    pub responder: Endpoint,
    pub first_timestamp: f64,
    pub last_timestamp: f64,
    pub octets: u64,
    seq: u64,
    forward: DirectionStats,
    backward: DirectionStats,
}

impl FlowAccumulator {
    fn start(pkt: &PacketRecord, seq: u64) -> Self {
        Self {
            key: FlowKey::of(pkt),
            initiator: pkt.source(),
            responder: pkt.destination(),
            first_timestamp: pkt.timestamp,
            last_timestamp: pkt.timestamp,
            octets: 0,
            seq,
            forward: DirectionStats::default(),
            backward: DirectionStats::default(),
        }
    }

    fn push(&mut self, pkt: &PacketRecord) {
        self.first_timestamp = self.first_timestamp.min(pkt.timestamp);
        self.last_timestamp = self.last_timestamp.max(pkt.timestamp);
        self.octets += pkt.ip_total_length;
        let is_forward = pkt.src_ip == self.initiator.ip && pkt.src_port == self.initiator.port;
        if is_forward {
            self.forward.push(pkt);
        } else {
            self.backward.push(pkt);
        }
    }

    pub fn packet_count(&self) -> u64 {
        self.forward.packets + self.backward.packets
    }

    pub fn features(&self) -> FeatureVector {
        let mut v = [0.0; FEATURE_COUNT];
        v[0] = (self.last_timestamp - self.first_timestamp) * 1000.0;
        v[1] = self.initiator.port as f64;
        v[2] = self.responder.port as f64;
        v[3] = self.key.protocol as f64;
        v[4] = self.octets as f64;
        self.forward
            .write_into(&mut v[FWD_OFFSET..FWD_OFFSET + DIRECTION_WIDTH]);
        self.backward
            .write_into(&mut v[BWD_OFFSET..BWD_OFFSET + DIRECTION_WIDTH]);
        FeatureVector(v)
    }

    fn finish(self) -> CompletedFlow {
        CompletedFlow {
            features: self.features(),
            key: self.key,
            initiator: self.initiator,
            responder: self.responder,
            first_timestamp: self.first_timestamp,
            last_timestamp: self.last_timestamp,
        }
    }
}

/// The 31 CAIA values of one flow, ordered as [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }

    pub fn duration_ms(&self) -> f64 {
        self.0[0]
    }

    pub fn forward(&self) -> &[f64] {
        &self.0[FWD_OFFSET..FWD_OFFSET + DIRECTION_WIDTH]
    }

    pub fn backward(&self) -> &[f64] {
        &self.0[BWD_OFFSET..BWD_OFFSET + DIRECTION_WIDTH]
    }

    /// Exchange the forward and backward blocks and the two port fields.
    pub fn mirrored(&self) -> FeatureVector {
        let mut v = self.0;
        v.swap(1, 2);
        for i in 0..DIRECTION_WIDTH {
            v.swap(FWD_OFFSET + i, BWD_OFFSET + i);
        }
        FeatureVector(v)
    }
}

/// A finalized flow with its identity, for label joins.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedFlow {
    pub key: FlowKey,
    pub initiator: Endpoint,
    pub responder: Endpoint,
    pub first_timestamp: f64,
    pub last_timestamp: f64,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeoutMode {
    /// Close after `timeout` seconds without a packet.
    Idle,
    /// Close once `timeout` seconds have passed since the first packet.
    Lifetime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTableConfig {
    pub timeout: f64,
    pub mode: TimeoutMode,
    /// How far (seconds) a timestamp may lag the latest one seen.
    pub reorder_tolerance: f64,
}

impl Default for FlowTableConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT_SECS,
            mode: TimeoutMode::Idle,
            reorder_tolerance: 0.0,
        }
    }
}

/// Single-writer table of resident flows.
#[derive(Debug)]
pub struct FlowTable {
    config: FlowTableConfig,
    flows: HashMap<FlowKey, FlowAccumulator>,
    // (reference-time bits, seq): reference time is last (idle) or first
    // (lifetime) timestamp. Non-negative f64 bit patterns sort numerically.
    expiry: BTreeSet<(u64, u64)>,
    by_seq: BTreeMap<u64, FlowKey>,
    next_seq: u64,
    latest: Option<f64>,
}

impl FlowTable {
    pub fn new(config: FlowTableConfig) -> Result<Self> {
        if !(config.timeout.is_finite() && config.timeout >= 0.0) {
            return Err(Error::Config(format!("timeout {} must be >= 0", config.timeout)));
        }
        if !(config.reorder_tolerance.is_finite() && config.reorder_tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "reorder tolerance {} must be >= 0",
                config.reorder_tolerance
            )));
        }
        Ok(Self {
            config,
            flows: HashMap::new(),
            expiry: BTreeSet::new(),
            by_seq: BTreeMap::new(),
            next_seq: 0,
            latest: None,
        })
    }

    pub fn config(&self) -> &FlowTableConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    fn reference_time(&self, flow: &FlowAccumulator) -> f64 {
        match self.config.mode {
            TimeoutMode::Idle => flow.last_timestamp,
            TimeoutMode::Lifetime => flow.first_timestamp,
        }
    }

    /// Fold one packet into the table. Flows that timed out by the packet's
    /// timestamp are returned (in first-packet order) before the packet is
    /// applied. A rejected packet leaves the table untouched.
    pub fn ingest(&mut self, pkt: &PacketRecord) -> Result<Vec<CompletedFlow>> {
        pkt.validate().map_err(|reason| Error::MalformedRecord { line: 0, reason })?;
        if let Some(latest) = self.latest {
            if pkt.timestamp < latest - self.config.reorder_tolerance {
                return Err(Error::OutOfOrder {
                    timestamp: pkt.timestamp,
                    latest,
                    tolerance: self.config.reorder_tolerance,
                });
            }
        }
        self.latest = Some(self.latest.map_or(pkt.timestamp, |l| l.max(pkt.timestamp)));

        let expired = self.expire(pkt.timestamp);

        let key = FlowKey::of(pkt);
        let old_ref = self.flows.get(&key).map(|f| (self.reference_time(f), f.seq));
        if let Some((t, seq)) = old_ref {
            self.expiry.remove(&(t.to_bits(), seq));
        }
        let seq = match self.flows.get(&key) {
            Some(f) => f.seq,
            None => {
                let seq = self.next_seq;
                self.next_seq += 1;
                self.by_seq.insert(seq, key.clone());
                self.flows.insert(key.clone(), FlowAccumulator::start(pkt, seq));
                seq
            }
        };
        let flow = self.flows.get_mut(&key).expect("flow inserted above");
        flow.push(pkt);
        let t = match self.config.mode {
            TimeoutMode::Idle => flow.last_timestamp,
            TimeoutMode::Lifetime => flow.first_timestamp,
        };
        self.expiry.insert((t.to_bits(), seq));
        Ok(expired)
    }

    fn expire(&mut self, now: f64) -> Vec<CompletedFlow> {
        let mut seqs = Vec::new();
        for &(bits, seq) in &self.expiry {
            if now - f64::from_bits(bits) > self.config.timeout {
                seqs.push((bits, seq));
            } else {
                break;
            }
        }
        for entry in &seqs {
            self.expiry.remove(entry);
        }
        let mut seqs: Vec<u64> = seqs.into_iter().map(|(_, s)| s).collect();
        seqs.sort_unstable();
        seqs.into_iter().map(|s| self.remove(s)).collect()
    }

    fn remove(&mut self, seq: u64) -> CompletedFlow {
        let key = self.by_seq.remove(&seq).expect("seq index in sync");
        self.flows.remove(&key).expect("flow index in sync").finish()
    }

    /// Close every resident flow, in first-packet order.
    pub fn flush(&mut self) -> Vec<CompletedFlow> {
        self.expiry.clear();
        let seqs: Vec<u64> = self.by_seq.keys().copied().collect();
        seqs.into_iter().map(|s| self.remove(s)).collect()
    }
}

/// Run a whole trace through a fresh table and flush it.
pub fn meter_trace(packets: &[PacketRecord], config: FlowTableConfig) -> Result<Vec<CompletedFlow>> {
    let mut table = FlowTable::new(config)?;
    let mut out = Vec::new();
    for pkt in packets {
        out.extend(table.ingest(pkt)?);
    }
    out.extend(table.flush());
    Ok(out)
}

fn parse_bool(field: &str, name: &str) -> Result<bool, String> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("{name}: expected 0 or 1, got {other:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, String> {
    field
        .trim()
        .parse()
        .map_err(|_| format!("{name}: cannot parse {field:?}"))
}

/// Parse one packet-record CSV row (already split into fields).
pub fn parse_packet(record: &csv::StringRecord) -> Result<PacketRecord, String> {
    if record.len() != PACKET_CSV_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            PACKET_CSV_HEADER.len(),
            record.len()
        ));
    }
    let f = |i: usize| &record[i];
    let pkt = PacketRecord {
        timestamp: parse_num(f(0), "timestamp")?,
        src_ip: f(1).trim().to_string(),
        dst_ip: f(2).trim().to_string(),
        src_port: parse_num(f(3), "src_port")?,
        dst_port: parse_num(f(4), "dst_port")?,
        protocol: parse_num(f(5), "protocol")?,
        ip_total_length: parse_num(f(6), "ip_total_length")?,
        syn: parse_bool(f(7), "syn")?,
        ack: parse_bool(f(8), "ack")?,
        fin: parse_bool(f(9), "fin")?,
        cwr: parse_bool(f(10), "cwr")?,
    };
    if pkt.src_ip.is_empty() || pkt.dst_ip.is_empty() {
        return Err("empty address".into());
    }
    pkt.validate()?;
    Ok(pkt)
}

pub fn write_packets<W: Write>(packets: &[PacketRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PACKET_CSV_HEADER)?;
    for p in packets {
        w.write_record(p.to_csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a packet CSV strictly: the first bad row is an error.
pub fn read_packets<R: Read>(reader: R) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &PACKET_CSV_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        out.push(parse_packet(&rec).map_err(|reason| Error::MalformedRecord { line, reason })?);
    }
    Ok(out)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("header must start with {}", expected.join(",")),
        });
    }
    Ok(())
}

/// Ground-truth labels keyed by flow (endpoint pair + protocol).
#[derive(Debug, Clone, Default)]
pub struct FlowLabels {
    by_key: HashMap<FlowKey, (String, String)>,
}

pub const LABEL_CSV_HEADER: [&str; 7] = [
    "src_ip", "src_port", "dst_ip", "dst_port", "protocol", "label", "family",
];

impl FlowLabels {
    pub fn insert(&mut self, key: FlowKey, label: String, family: String) {
        self.by_key.insert(key, (label, family));
    }

    pub fn get(&self, key: &FlowKey) -> Option<(&str, &str)> {
        self.by_key.get(key).map(|(l, f)| (l.as_str(), f.as_str()))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Read a label sidecar with columns `src_ip,src_port,dst_ip,dst_port,protocol,label,family`.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        check_header(rdr.headers()?, &LABEL_CSV_HEADER)?;
        let mut labels = FlowLabels::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(i as u64 + 2, |p| p.line());
            let bad = |reason: String| Error::MalformedRecord { line, reason };
            if rec.len() != LABEL_CSV_HEADER.len() {
                return Err(bad(format!("expected 7 fields, found {}", rec.len())));
            }
            let a = Endpoint {
                ip: rec[0].trim().to_string(),
                port: parse_num(&rec[1], "src_port").map_err(bad)?,
            };
            let b = Endpoint {
                ip: rec[2].trim().to_string(),
                port: parse_num(&rec[3], "dst_port").map_err(bad)?,
            };
            let proto: u8 = parse_num(&rec[4], "protocol").map_err(bad)?;
            labels.insert(
                FlowKey::new(a, b, proto),
                rec[5].trim().to_string(),
                rec[6].trim().to_string(),
            );
        }
        Ok(labels)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut rows: Vec<_> = self.by_key.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LABEL_CSV_HEADER)?;
        for (k, (label, family)) in rows {
            w.write_record([
                k.low.ip.as_str(),
                &k.low.port.to_string(),
                k.high.ip.as_str(),
                &k.high.port.to_string(),
                &k.protocol.to_string(),
                label,
                family,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A packet row that was skipped during extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub packets: u64,
    pub flows: u64,
    pub rejected: Vec<Rejection>,
    pub unlabeled_flows: u64,
}

fn format_row(flow: &CompletedFlow, labels: Option<&FlowLabels>, unlabeled: &mut u64) -> Vec<String> {
    let mut row: Vec<String> = flow.features.values().iter().map(f64::to_string).collect();
    if let Some(labels) = labels {
        match labels.get(&flow.key) {
            Some((l, f)) => {
                row.push(l.to_string());
                row.push(f.to_string());
            }
            None => {
                *unlabeled += 1;
                row.push(String::new());
                row.push(String::new());
            }
        }
    }
    row
}

/// Stream a packet CSV into a feature CSV. Malformed or out-of-order rows
/// are skipped and reported; they never abort the run.
pub fn extract<R: Read, W: Write>(
    input: R,
    output: W,
    config: FlowTableConfig,
    labels: Option<&FlowLabels>,
) -> Result<ExtractReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    check_header(rdr.headers()?, &PACKET_CSV_HEADER)?;
    let mut w = csv::Writer::from_writer(output);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    if labels.is_some() {
        header.extend(["label", "family"]);
    }
    w.write_record(&header)?;

    let mut table = FlowTable::new(config)?;
    let mut report = ExtractReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rejected.push(Rejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let pkt = match parse_packet(&record) {
            Ok(p) => p,
            Err(reason) => {
                report.rejected.push(Rejection { line, reason });
                continue;
            }
        };
        match table.ingest(&pkt) {
            Ok(done) => {
                report.packets += 1;
                for flow in done {
                    report.flows += 1;
                    w.write_record(format_row(&flow, labels, &mut report.unlabeled_flows))?;
                }
            }
            Err(e) => report.rejected.push(Rejection {
                line,
                reason: e.to_string(),
            }),
        }
    }
    for flow in table.flush() {
        report.flows += 1;
        w.write_record(format_row(&flow, labels, &mut report.unlabeled_flows))?;
    }
    w.flush()?;
    Ok(report)
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}
