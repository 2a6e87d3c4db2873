use serde::{Deserialize, Serialize};

use super::config::{ActivationTier, HardwareConfig};
use super::residency::{ResidencyPlan, Tier};
use super::{HwError, Result};
use crate::graph::{op_cost_stats_with_lookups, op_traffic, ComputeGraph, DType, OpKind, OpNode};

/// Numeric precision an op computes in; selects the peak rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Int8,
    Fp16,
    Fp32,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Int8 => "int8",
            Precision::Fp16 => "fp16",
            Precision::Fp32 => "fp32",
        }
    }
}

/// Precision implied by an op's activation dtypes. Conversions, SLS and data
/// movement run on the vector units and are priced at the fp16 rate.
pub fn compute_precision(g: &ComputeGraph, op: &OpNode) -> Precision {
    if op.kind.is_conversion() || matches!(op.kind, OpKind::SLS | OpKind::Concat | OpKind::Tile | OpKind::Transpose) {
        return Precision::Fp16;
    }
    let dtype = op
        .inputs
        .iter()
        .filter(|t| !g.is_weight(t))
        .filter_map(|t| g.tensors.get(t))
        .map(|s| s.dtype)
        .find(|d| d.is_numeric_payload());
    match dtype {
        Some(DType::Int8) => Precision::Int8,
        Some(DType::Fp32) => Precision::Fp32,
        _ => Precision::Fp16,
    }
}

/// Where an op runs: on the host CPU or on `cores` cores of one card.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "on")]
pub enum Placement {
    Host,
    Card { card: usize, cores: usize },
}

/// The roofline's individual resource times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyTerms {
    pub compute: f64,
    pub sram: f64,
    pub lpddr: f64,
    /// Host DRAM, or host-resident weights streamed over the card link.
    pub host: f64,
    pub overhead: f64,
}

impl LatencyTerms {
    pub fn total(&self) -> f64 {
        self.compute.max(self.sram).max(self.lpddr).max(self.host) + self.overhead
    }
}

pub fn op_latency_terms(
    g: &ComputeGraph,
    op: &OpNode,
    precision: Precision,
    placement: Placement,
    residency: &ResidencyPlan,
    hw: &HardwareConfig,
    lookups: Option<f64>,
) -> Result<LatencyTerms> {
    let stats = op_cost_stats_with_lookups(g, op, lookups)?;
    let eff = hw.efficiency(op.kind);
    let mut terms = LatencyTerms {
        overhead: hw.launch_overhead_s,
        ..Default::default()
    };
    match placement {
        Placement::Host => {
            terms.compute = stats.flops / (eff * hw.host.cpu_peak_flops);
            terms.host = stats.bytes_moved / hw.host.host_dram_bw;
        }
        Placement::Card { card, cores } => {
            let c = hw.cards.get(card).ok_or(HwError::UnknownCard(card))?;
            if cores == 0 || cores > c.cores {
                return Err(HwError::Invalid(format!("{cores} cores requested on a {}-core card", c.cores)));
            }
            let frac = cores as f64 / c.cores as f64;
            if stats.flops > 0.0 {
                let peak = match precision {
                    Precision::Int8 => c.peak_int8_ops,
                    Precision::Fp16 => c.peak_fp16_flops,
                    Precision::Fp32 => {
                        return Err(HwError::NoPeak {
                            op: op.id.clone(),
                            precision: precision.name(),
                        })
                    }
                };
                terms.compute = stats.flops / (eff * peak * frac);
            }
            let (mut sram, mut lpddr, mut host) = (0.0, 0.0, 0.0);
            let opaque = matches!(op.kind, OpKind::Custom | OpKind::RoiAlignLike | OpKind::HostDecode)
                && op.attrs.bytes.is_some();
            if opaque {
                lpddr = stats.bytes_moved;
            } else {
                let traffic = op_traffic(g, op, lookups)?;
                let act_bytes: f64 = traffic.iter().filter(|t| !g.is_weight(&t.tensor)).map(|t| t.bytes).sum();
                let sram_free = c.sram_bytes.saturating_sub(residency.sram_bytes) as f64;
                let act_in_sram = hw.activation_tier == ActivationTier::Sram && act_bytes <= sram_free;
                for t in traffic {
                    let tier = if act_in_sram && !g.is_weight(&t.tensor) { Tier::Sram } else { residency.tier_of(&t.tensor) };
                    match tier {
                        Tier::Sram => sram += t.bytes,
                        Tier::Lpddr => lpddr += t.bytes,
                        Tier::HostDram => host += t.bytes,
                    }
                }
            }
            let link_bw = f64::from(hw.links.card_lanes) * hw.links.lane_bw;
            terms.sram = sram / (c.sram_bw * frac);
            terms.lpddr = lpddr / (c.lpddr_bw * frac);
            terms.host = host / (link_bw * frac);
        }
    }
    Ok(terms)
}

/// Roofline latency: the slowest of compute and each memory tier, plus the
/// fixed launch overhead. Compute and bandwidth scale with the fraction of
/// the card's cores assigned.
pub fn op_latency(
    g: &ComputeGraph,
    op: &OpNode,
    precision: Precision,
    placement: Placement,
    residency: &ResidencyPlan,
    hw: &HardwareConfig,
) -> Result<f64> {
    op_latency_terms(g, op, precision, placement, residency, hw, None).map(|t| t.total())
}

/// An interconnect hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Host to switch (x16 by default).
    HostUplink,
    /// Card to switch (x4 by default).
    Card(usize),
    Nic,
}

impl Link {
    pub fn name(self) -> String {
        match self {
            Link::HostUplink => "host_uplink".into(),
            Link::Card(i) => format!("card{i}_link"),
            Link::Nic => "nic".into(),
        }
    }
}

/// Bytes/s of a link.
pub fn link_bw(link: Link, hw: &HardwareConfig) -> Result<f64> {
    match link {
        Link::HostUplink => Ok(f64::from(hw.links.host_lanes) * hw.links.lane_bw),
        Link::Card(i) if i < hw.cards.len() => Ok(f64::from(hw.links.card_lanes) * hw.links.lane_bw),
        Link::Card(i) => Err(HwError::UnknownLink(format!("card{i}_link"))),
        Link::Nic => Ok(hw.nic_bw_bits / 8.0),
    }
}

/// `transactions * overhead + bytes / link_bw`. The NIC has no
/// per-transaction term.
pub fn transfer_latency(bytes: f64, link: Link, transactions: u64, hw: &HardwareConfig) -> Result<f64> {
    if !(bytes >= 0.0) {
        return Err(HwError::Invalid(format!("negative transfer size {bytes}")));
    }
    let bw = link_bw(link, hw)?;
    let per_txn = if link == Link::Nic { 0.0 } else { hw.links.transaction_overhead_s };
    Ok(transactions as f64 * per_txn + bytes / bw)
}
