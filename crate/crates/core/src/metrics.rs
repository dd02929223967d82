//! Run records, summaries and their CSV / JSON export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::TrafficClass;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run has no flows")]
    NoFlows,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub flow: u32,
    pub class: TrafficClass,
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
    /// First DATA packet put on the wire, ns.
    pub start_ns: u64,
    /// Last DATA packet received, ns; `None` while incomplete.
    pub end_ns: Option<u64>,
    pub fct_ns: Option<u64>,
    pub ideal_ns: u64,
    pub retransmits: u64,
    pub timeouts: u64,
    pub trims_seen: u64,
    /// Packets not yet delivered when the run stopped.
    pub residual_pkts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortRecord {
    /// Node id of the switch.
    pub switch: u32,
    pub tier: u8,
    pub port: u16,
    pub upward: bool,
    pub max_pkts: usize,
    pub max_bytes: u64,
    pub avg_pkts: f64,
    pub tx_bytes: u64,
    pub tx_pkts: u64,
    pub trimmed: u64,
    pub marked: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub data_pkts_sent: u64,
    pub data_bytes_sent: u64,
    pub retransmits: u64,
    pub timeouts: u64,
    /// Intact DATA bytes that reached a receiver, duplicates included.
    pub delivered_bytes: u64,
    pub duplicate_pkts: u64,
    /// Payload bytes of DATA packets that were trimmed.
    pub trimmed_bytes: u64,
    pub trims: u64,
    pub header_drops: u64,
    pub control_drops: u64,
    pub acks_sent: u64,
    pub nacks_sent: u64,
    pub ecn_marks: u64,
    pub ecn_acks: u64,
    pub unknown_feedback: u64,
    /// Upward lookups whose entropy part exceeded the live uplink count.
    pub remaps: u64,
    pub decays: u64,
    pub steady_sends: u64,
    pub skipped_draws: u64,
    pub fallbacks: u64,
    pub events: u64,
}

impl Counters {
    /// Every DATA byte sent is either delivered intact or trimmed en route.
    pub fn conserves_bytes(&self) -> bool {
        self.data_bytes_sent == self.delivered_bytes + self.trimmed_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortBytes {
    pub flow: u32,
    pub switch: u32,
    pub port: u16,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time_ns: u64,
    pub switch: u32,
    pub port: u16,
    pub class: TrafficClass,
    pub pkts: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub complete: bool,
    pub flows: Vec<FlowRecord>,
    pub max_fct_ns: u64,
    pub avg_fct_ns: f64,
    pub ideal_max_ns: u64,
    pub ratio: f64,
    pub end_ns: u64,
    pub last_ack_ns: u64,
    pub ports: Vec<PortRecord>,
    pub counters: Counters,
    pub port_bytes: Vec<PortBytes>,
}

impl RunSummary {
    pub fn from_records(
        flows: Vec<FlowRecord>,
        ports: Vec<PortRecord>,
        counters: Counters,
        port_bytes: Vec<PortBytes>,
        end_ns: u64,
        last_ack_ns: u64,
    ) -> Result<Self, MetricsError> {
        if flows.is_empty() {
            return Err(MetricsError::NoFlows);
        }
        let complete = flows.iter().all(|f| f.fct_ns.is_some());
        let fcts: Vec<u64> = flows.iter().filter_map(|f| f.fct_ns).collect();
        let max_fct_ns = fcts.iter().copied().max().unwrap_or(0);
        let avg_fct_ns = if fcts.is_empty() {
            0.0
        } else {
            fcts.iter().map(|&f| f as f64).sum::<f64>() / fcts.len() as f64
        };
        let ideal_max_ns = flows.iter().map(|f| f.ideal_ns).max().unwrap_or(0);
        let ratio = if complete && ideal_max_ns > 0 {
            max_fct_ns as f64 / ideal_max_ns as f64
        } else {
            f64::NAN
        };
        Ok(Self {
            complete,
            flows,
            max_fct_ns,
            avg_fct_ns,
            ideal_max_ns,
            ratio,
            end_ns,
            last_ack_ns,
            ports,
            counters,
            port_bytes,
        })
    }

    /// Flows that did not finish, with their undelivered packet counts.
    pub fn residuals(&self) -> Vec<(u32, u32)> {
        self.flows
            .iter()
            .filter(|f| f.fct_ns.is_none())
            .map(|f| (f.flow, f.residual_pkts))
            .collect()
    }

    /// Max-FCT restricted to one class.
    pub fn class_max_fct(&self, class: TrafficClass) -> Option<u64> {
        self.flows.iter().filter(|f| f.class == class).filter_map(|f| f.fct_ns).max()
    }

    /// Per-port max queue depth in packets, over ports that carried traffic.
    pub fn port_max_depths(&self) -> Vec<usize> {
        self.ports.iter().filter(|p| p.tx_pkts > 0).map(|p| p.max_pkts).collect()
    }

    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            complete: self.complete,
            flows: self.flows.len(),
            max_fct_ns: self.max_fct_ns,
            avg_fct_ns: fixed(self.avg_fct_ns, 1),
            ideal_max_ns: self.ideal_max_ns,
            ratio: fixed(self.ratio, 6),
            end_ns: self.end_ns,
            data_pkts_sent: self.counters.data_pkts_sent,
            retransmits: self.counters.retransmits,
            trims: self.counters.trims,
            ecn_marks: self.counters.ecn_marks,
            nacks: self.counters.nacks_sent,
            timeouts: self.counters.timeouts,
            remaps: self.counters.remaps,
            max_queue_pkts: self.ports.iter().map(|p| p.max_pkts).max().unwrap_or(0),
        }
    }

    /// summary.csv: one run row.
    pub fn write_summary_csv(&self, path: &Path) -> Result<(), MetricsError> {
        write_rows(path, &[self.summary_row()])
    }

    /// flows.csv: one row per flow.
    pub fn write_flows_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let rows: Vec<FlowRow> = self.flows.iter().map(FlowRow::from).collect();
        write_rows(path, &rows)
    }

    pub fn write_ports_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let rows: Vec<PortRow> = self.ports.iter().map(PortRow::from).collect();
        write_rows(path, &rows)
    }

    pub fn write_port_bytes_csv(&self, path: &Path) -> Result<(), MetricsError> {
        write_rows(path, &self.port_bytes)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.summary_row())?;
        w.write_all(b"\n").map_err(io_err(path))?;
        Ok(())
    }
}

/// Renders `v` with `digits` decimals so repeated runs diff cleanly.
pub fn fixed(v: f64, digits: usize) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.digits$}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub complete: bool,
    pub flows: usize,
    pub max_fct_ns: u64,
    pub avg_fct_ns: String,
    pub ideal_max_ns: u64,
    pub ratio: String,
    pub end_ns: u64,
    pub data_pkts_sent: u64,
    pub retransmits: u64,
    pub trims: u64,
    pub ecn_marks: u64,
    pub nacks: u64,
    pub timeouts: u64,
    pub remaps: u64,
    pub max_queue_pkts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub flow: u32,
    pub class: TrafficClass,
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
    pub start_ns: u64,
    pub end_ns: Option<u64>,
    pub fct_ns: Option<u64>,
    pub ideal_ns: u64,
    pub retransmits: u64,
    pub timeouts: u64,
    pub trims_seen: u64,
}

impl From<&FlowRecord> for FlowRow {
    fn from(f: &FlowRecord) -> Self {
        Self {
            flow: f.flow,
            class: f.class,
            src: f.src,
            dst: f.dst,
            bytes: f.bytes,
            start_ns: f.start_ns,
            end_ns: f.end_ns,
            fct_ns: f.fct_ns,
            ideal_ns: f.ideal_ns,
            retransmits: f.retransmits,
            timeouts: f.timeouts,
            trims_seen: f.trims_seen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortRow {
    pub switch: u32,
    pub tier: u8,
    pub port: u16,
    pub upward: bool,
    pub max_pkts: usize,
    pub max_bytes: u64,
    pub avg_pkts: String,
    pub tx_bytes: u64,
    pub trimmed: u64,
    pub marked: u64,
    pub dropped: u64,
}

impl From<&PortRecord> for PortRow {
    fn from(p: &PortRecord) -> Self {
        Self {
            switch: p.switch,
            tier: p.tier,
            port: p.port,
            upward: p.upward,
            max_pkts: p.max_pkts,
            max_bytes: p.max_bytes,
            avg_pkts: fixed(p.avg_pkts, 4),
            tx_bytes: p.tx_bytes,
            trimmed: p.trimmed,
            marked: p.marked,
            dropped: p.dropped,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), MetricsError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<Result<_, _>>().map_err(MetricsError::from)
}

/// queues.csv in long format.
pub fn write_queue_samples(path: &Path, samples: &[QueueSample]) -> Result<(), MetricsError> {
    write_rows(path, samples)
}

/// Time-average of a port's packet depth from periodic samples by
/// trapezoidal integration. Samples absent at a tick mean an empty queue.
pub fn trapezoid_average(samples: &[(u64, usize)], period_ns: u64, end_ns: u64) -> f64 {
    if end_ns == 0 || period_ns == 0 {
        return 0.0;
    }
    let ticks = end_ns / period_ns;
    let mut depth = vec![0f64; ticks as usize + 1];
    for &(t, d) in samples {
        let i = (t / period_ns) as usize;
        if i < depth.len() {
            depth[i] = d as f64;
        }
    }
    let mut area = 0.0;
    for w in depth.windows(2) {
        area += (w[0] + w[1]) * 0.5 * period_ns as f64;
    }
    area / (ticks * period_ns) as f64
}

/// (x, y, series) triple for plot-data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigPoint {
    pub x: String,
    pub y: String,
    pub series: String,
}

impl FigPoint {
    pub fn new(x: impl ToString, y: f64, series: impl ToString) -> Self {
        Self {
            x: x.to_string(),
            y: fixed(y, 6),
            series: series.to_string(),
        }
    }
}

pub fn write_figdata(dir: &Path, name: &str, points: &[FigPoint]) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(&dir.join(format!("{name}.csv")), points)
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolated quantile; NaN for an empty slice.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(flow: u32, fct: Option<u64>, ideal: u64) -> FlowRecord {
        FlowRecord {
            flow,
            class: TrafficClass::Sprayed,
            src: flow,
            dst: flow + 1,
            bytes: 1000,
            start_ns: 0,
            end_ns: fct,
            fct_ns: fct,
            ideal_ns: ideal,
            retransmits: 0,
            timeouts: 0,
            trims_seen: 0,
            residual_pkts: if fct.is_some() { 0 } else { 3 },
        }
    }

    fn summary(flows: Vec<FlowRecord>) -> RunSummary {
        RunSummary::from_records(flows, Vec::new(), Counters::default(), Vec::new(), 0, 0).unwrap()
    }

    #[test]
    fn zero_flows_is_an_error() {
        let e = RunSummary::from_records(Vec::new(), Vec::new(), Counters::default(), Vec::new(), 0, 0);
        assert!(matches!(e, Err(MetricsError::NoFlows)));
    }

    #[test]
    fn ratio_uses_max_ideal() {
        let s = summary(vec![record(0, Some(120), 100), record(1, Some(150), 110)]);
        assert_eq!(s.max_fct_ns, 150);
        assert_eq!(s.avg_fct_ns, 135.0);
        assert!((s.ratio - 150.0 / 110.0).abs() < 1e-12);
        assert!(s.complete);
    }

    #[test]
    fn incomplete_runs_are_flagged() {
        let s = summary(vec![record(0, Some(120), 100), record(1, None, 100)]);
        assert!(!s.complete);
        assert!(s.ratio.is_nan());
        assert_eq!(s.residuals(), vec![(1, 3)]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary(vec![record(0, Some(120), 100), record(1, Some(150), 110)]);
        let p = dir.path().join("flows.csv");
        s.write_flows_csv(&p).unwrap();
        let back: Vec<FlowRow> = read_rows(&p).unwrap();
        let expect: Vec<FlowRow> = s.flows.iter().map(FlowRow::from).collect();
        assert_eq!(back, expect);
        let p = dir.path().join("summary.csv");
        s.write_summary_csv(&p).unwrap();
        let back: Vec<SummaryRow> = read_rows(&p).unwrap();
        assert_eq!(back, vec![s.summary_row()]);
    }

    #[test]
    fn json_export_has_fixed_fields() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary(vec![record(0, Some(120), 100)]);
        let p = dir.path().join("summary.json");
        s.write_json(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let obj = v.as_object().unwrap();
        for key in ["complete", "flows", "max_fct_ns", "ratio", "remaps"] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert_eq!(obj["ratio"], "1.200000");
    }

    #[test]
    fn trapezoid_of_constant_is_exact() {
        let samples: Vec<(u64, usize)> = (0..=10).map(|i| (i * 10, 4)).collect();
        assert!((trapezoid_average(&samples, 10, 100) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(quantile(&v, 0.95), 4.8);
        assert!(median(&[]).is_nan());
    }
}
