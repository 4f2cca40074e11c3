//! Run metrics and their CSV rendering.

use crate::client::LatencyRecord;
use crate::namespace::OpKind;
use crate::{SimTime, NANOS_PER_SEC};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ns: f64,
    pub p95_ns: u64,
    pub p99_ns: u64,
}

impl LatencyStats {
    pub fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let pct = |q: f64| v[((v.len() as f64 * q).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            count: v.len() as u64,
            mean_ns: v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64,
            p95_ns: pct(0.95),
            p99_ns: pct(0.99),
        }
    }
}

/// Per-request recirculation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecircCount {
    pub op: OpKind,
    pub depth: usize,
    pub hit: bool,
    pub resolution: u32,
    pub lock_wait: u32,
    pub cross_pipe: u32,
}

impl RecircCount {
    pub fn total(&self) -> u32 {
        self.resolution + self.lock_wait
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub scheme: String,
    pub n_servers: usize,
    /// Window throughput is measured over.
    pub window_ns: SimTime,
    /// Time the last event ran.
    pub end_ns: SimTime,
    pub issued: u64,
    pub completed: u64,
    pub completed_in_window: u64,
    pub throughput: f64,
    pub all: LatencyStats,
    pub read: LatencyStats,
    pub write: LatencyStats,
    pub hits: u64,
    pub hit_rate: f64,
    pub total_recirculations: u64,
    pub mean_recirculations: f64,
    pub mean_resolution: f64,
    pub mean_lock_wait: f64,
    pub cross_pipe: u64,
    pub server_load: Vec<u64>,
    pub starved_writes: u64,
    pub hot_reports: u64,
    pub admissions: u64,
    pub admitted_paths: u64,
    pub evictions: u64,
    pub evicted_paths: u64,
    pub aborted_admissions: u64,
    pub client_retransmissions: u64,
    pub server_retransmissions: u64,
    pub duplicate_seq: u64,
    /// Completions per simulated second.
    pub per_second: Vec<u64>,
    pub violations: Vec<String>,
    pub records: Vec<LatencyRecord>,
    pub recirculations: Vec<RecircCount>,
    pub events: Vec<String>,
}

impl Metrics {
    pub const CSV_HEADER: &'static str =
        "scheme,n_servers,completed,throughput_ops,mean_ns,p95_ns,p99_ns,\
read_mean_ns,read_p95_ns,read_p99_ns,write_mean_ns,write_p95_ns,write_p99_ns,hit_rate,\
mean_recirculations,mean_resolution,mean_lock_wait,total_recirculations,cross_pipe,max_server_load,\
min_server_load,starved_writes,hot_reports,admissions,evictions,aborted,violations";

    pub fn csv_row(&self) -> String {
        let max = self.server_load.iter().max().copied().unwrap_or(0);
        let min = self.server_load.iter().min().copied().unwrap_or(0);
        format!(
            "{},{},{},{:.1},{:.0},{},{},{:.0},{},{},{:.0},{},{},{:.4},{:.3},{:.3},{:.3},{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.n_servers,
            self.completed,
            self.throughput,
            self.all.mean_ns,
            self.all.p95_ns,
            self.all.p99_ns,
            self.read.mean_ns,
            self.read.p95_ns,
            self.read.p99_ns,
            self.write.mean_ns,
            self.write.p95_ns,
            self.write.p99_ns,
            self.hit_rate,
            self.mean_recirculations,
            self.mean_resolution,
            self.mean_lock_wait,
            self.total_recirculations,
            self.cross_pipe,
            max,
            min,
            self.starved_writes,
            self.hot_reports,
            self.admissions,
            self.evictions,
            self.aborted_admissions,
            self.violations.len()
        )
    }

    /// Mean of `per_second` over whole seconds in `[from, to)`.
    pub fn mean_rate(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.per_second.len());
        if from >= to {
            return 0.0;
        }
        self.per_second[from..to].iter().sum::<u64>() as f64 / (to - from) as f64
    }
}

/// Accumulates completions while a run progresses.
#[derive(Debug, Default)]
pub(crate) struct Collector {
    pub all: Vec<u64>,
    pub read: Vec<u64>,
    pub write: Vec<u64>,
    pub hits: u64,
    pub resolution: u64,
    pub lock_wait: u64,
    pub cross_pipe: u64,
    pub per_second: Vec<u64>,
    pub in_window: u64,
    pub last_completion: SimTime,
    pub records: Vec<LatencyRecord>,
    pub recirc: Vec<RecircCount>,
}

impl Collector {
    pub fn record(&mut self, r: LatencyRecord, window: Option<SimTime>, keep: bool) {
        self.all.push(r.latency);
        if r.op.is_read() {
            self.read.push(r.latency);
        } else {
            self.write.push(r.latency);
        }
        self.hits += r.hit as u64;
        self.resolution += r.resolution as u64;
        self.lock_wait += r.lock_wait as u64;
        self.cross_pipe += r.cross_pipe as u64;
        self.last_completion = self.last_completion.max(r.completed_at);
        let sec = (r.completed_at / NANOS_PER_SEC) as usize;
        if window.is_none_or(|w| r.completed_at <= w) {
            self.in_window += 1;
            if self.per_second.len() <= sec {
                self.per_second.resize(sec + 1, 0);
            }
            self.per_second[sec] += 1;
        }
        if keep {
            self.recirc.push(RecircCount {
                op: r.op,
                depth: r.depth,
                hit: r.hit,
                resolution: r.resolution,
                lock_wait: r.lock_wait,
                cross_pipe: r.cross_pipe,
            });
            self.records.push(r);
        }
    }
}
