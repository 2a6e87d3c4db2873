use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    pub bytes: f64,
    pub transactions: u64,
    pub busy_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreBusy {
    pub card: usize,
    pub core: usize,
    pub busy_s: f64,
    pub fraction: f64,
}

/// One op execution, recorded when tracing is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpEvent {
    pub batch: usize,
    pub op: String,
    pub start: f64,
    pub finish: f64,
    /// Time each non-weight input became available where the op ran.
    pub inputs_ready: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub requests: usize,
    pub completed: usize,
    pub in_flight: usize,
    pub batches: usize,
    /// Per-request latency (s) of post-warmup completions, in completion order.
    pub latencies_s: Vec<f64>,
    pub percentiles: Option<Percentiles>,
    /// Completions per second over the post-warmup window.
    pub throughput_rps: f64,
    /// From time zero to the last completion.
    pub span_s: f64,
    pub core_busy: Vec<CoreBusy>,
    /// Share of card-executed op time per op kind.
    pub op_share: BTreeMap<String, f64>,
    pub links: BTreeMap<String, LinkStats>,
    pub nic_bytes: f64,
    /// Switch traversals of sparse-to-dense edges (2 host-mediated, 1 p2p).
    pub sparse_dense_traversals: u64,
    /// Indices sent over the switch on SLS index edges, the bytes that
    /// took, and the bytes the compiled shapes would have taken.
    pub index_count: u64,
    pub index_bytes: f64,
    pub index_static_bytes: f64,
    pub deadline_misses: usize,
    pub mean_wasted_fraction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<OpEvent>,
}

impl SimReport {
    pub fn total_transactions(&self) -> u64 {
        self.links.values().map(|l| l.transactions).sum()
    }

    pub fn total_pcie_bytes(&self) -> f64 {
        self.links.values().map(|l| l.bytes).sum()
    }

    /// Op kinds by descending share, ties by name.
    pub fn breakdown(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self.op_share.iter().map(|(k, v)| (k.clone(), *v)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }
}

/// Nearest-rank percentile of ascending `sorted`: the value at 1-based
/// index `ceil(x/100 * N)`.
pub fn nearest_rank(sorted: &[f64], x: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((x / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn percentiles(values: &[f64]) -> Option<Percentiles> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Percentiles {
        p50: nearest_rank(&v, 50.0)?,
        p90: nearest_rank(&v, 90.0)?,
        p99: nearest_rank(&v, 99.0)?,
    })
}

/// A machine-readable report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub text: String,
    pub rows: Vec<MetricRow>,
}

impl Summary {
    /// `metric,value` lines with a header; values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.metric, r.value);
        }
        out
    }
}

/// Renders a report: the op-kind breakdown in descending share, the
/// latency/throughput row and the traffic table. Percentile rows are
/// omitted when nothing completed.
pub fn summarize_report(r: &SimReport) -> Summary {
    let mut rows = Vec::new();
    let mut row = |metric: String, value: f64| rows.push(MetricRow { metric, value });
    let mut text = String::new();

    let _ = writeln!(text, "op breakdown");
    let breakdown = r.breakdown();
    for (kind, share) in &breakdown {
        let _ = writeln!(text, "  {kind:<12} {:>6.1}%", share * 100.0);
        row(format!("op_share.{kind}"), *share);
    }
    let sum: f64 = breakdown.iter().map(|(_, s)| s).sum();
    let _ = writeln!(text, "  {:<12} {:>6.1}%", "total", sum * 100.0);

    let _ = writeln!(text, "\nlatency and throughput");
    let _ = writeln!(
        text,
        "  requests {}  completed {}  in flight {}  batches {}  deadline misses {}",
        r.requests, r.completed, r.in_flight, r.batches, r.deadline_misses
    );
    row("requests".into(), r.requests as f64);
    row("completed".into(), r.completed as f64);
    row("in_flight".into(), r.in_flight as f64);
    row("batches".into(), r.batches as f64);
    row("deadline_misses".into(), r.deadline_misses as f64);
    row("throughput_rps".into(), r.throughput_rps);
    row("span_s".into(), r.span_s);
    row("mean_wasted_fraction".into(), r.mean_wasted_fraction);
    if let Some(p) = r.percentiles {
        let _ = writeln!(
            text,
            "  throughput {:.2} req/s  p50 {:.3} ms  p90 {:.3} ms  p99 {:.3} ms",
            r.throughput_rps,
            p.p50 * 1e3,
            p.p90 * 1e3,
            p.p99 * 1e3
        );
        row("latency_p50_s".into(), p.p50);
        row("latency_p90_s".into(), p.p90);
        row("latency_p99_s".into(), p.p99);
    }
    let mean_busy = if r.core_busy.is_empty() {
        0.0
    } else {
        r.core_busy.iter().map(|c| c.fraction).sum::<f64>() / r.core_busy.len() as f64
    };
    let _ = writeln!(text, "  mean core busy {:.1}%", mean_busy * 100.0);
    row("mean_core_busy".into(), mean_busy);

    let _ = writeln!(text, "\ntraffic");
    let _ = writeln!(text, "  {:<14} {:>14} {:>8} {:>12}", "link", "bytes", "txns", "busy ms");
    for (name, l) in &r.links {
        let _ = writeln!(text, "  {name:<14} {:>14.0} {:>8} {:>12.3}", l.bytes, l.transactions, l.busy_s * 1e3);
        row(format!("link.{name}.bytes"), l.bytes);
        row(format!("link.{name}.transactions"), l.transactions as f64);
        row(format!("link.{name}.busy_s"), l.busy_s);
    }
    let _ = writeln!(text, "  {:<14} {:>14.0}", "nic", r.nic_bytes);
    let _ = writeln!(text, "  sparse-to-dense switch traversals {}", r.sparse_dense_traversals);
    row("nic_bytes".into(), r.nic_bytes);
    row("pcie_transactions".into(), r.total_transactions() as f64);
    row("sparse_dense_traversals".into(), r.sparse_dense_traversals as f64);
    row("index_count".into(), r.index_count as f64);
    row("index_bytes".into(), r.index_bytes);
    row("index_static_bytes".into(), r.index_static_bytes);
    Summary { text, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_ramp() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(50.0));
        assert_eq!(nearest_rank(&v, 99.0), Some(99.0));
        assert_eq!(nearest_rank(&v, 100.0), Some(100.0));
        assert_eq!(nearest_rank(&[3.0], 1.0), Some(3.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn breakdown_rows_descend() {
        let mut r = SimReport::default();
        r.op_share.insert("SLS".into(), 0.4);
        r.op_share.insert("FC".into(), 0.6);
        let s = summarize_report(&r);
        let kinds: Vec<&str> = s.rows.iter().filter_map(|m| m.metric.strip_prefix("op_share.")).collect();
        assert_eq!(kinds, vec!["FC", "SLS"]);
        let total: f64 = s.rows.iter().filter(|m| m.metric.starts_with("op_share.")).map(|m| m.value).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_report_has_counters_only() {
        let s = summarize_report(&SimReport::default());
        assert!(s.rows.iter().all(|m| !m.metric.starts_with("latency_")));
        assert!(s.rows.iter().any(|m| m.metric == "completed" && m.value == 0.0));
        assert!(s.to_csv().starts_with("metric,value\n"));
    }
}
