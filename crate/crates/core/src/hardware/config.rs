use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HwError, Result};
use crate::graph::OpKind;

/// The node description shipped with the repository.
pub const DEFAULT_NODE_TOML: &str = include_str!("../../../../configs/default_node.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Card {
    pub cores: usize,
    /// Aggregate over all cores, ops/s.
    pub peak_int8_ops: f64,
    pub peak_fp16_flops: f64,
    /// Shared on-chip cache.
    pub sram_bytes: u64,
    pub sram_bw: f64,
    pub lpddr_bytes: u64,
    pub lpddr_bw: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Host {
    pub cpu_peak_flops: f64,
    pub host_dram_bw: f64,
    pub host_dram_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub present: bool,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Links {
    /// Host to switch.
    pub host_lanes: u32,
    /// Each card to switch.
    pub card_lanes: u32,
    /// Effective bytes/s per lane.
    pub lane_bw: f64,
    pub transaction_overhead_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub cards: Vec<Card>,
    pub host: Host,
    pub nic_bw_bits: f64,
    pub switch: Switch,
    pub links: Links,
    pub p2p_enabled: bool,
    pub launch_overhead_s: f64,
    #[serde(default)]
    pub efficiency: BTreeMap<OpKind, f64>,
    /// Where activations are priced. `sram` keeps an op's activations in the
    /// shared cache when they fit beside the SRAM-resident weights.
    #[serde(default)]
    pub activation_tier: ActivationTier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationTier {
    #[default]
    Lpddr,
    Sram,
}

/// Aggregate figures of merit of a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwSummary {
    pub cards: usize,
    pub card_memory_gb: f64,
    pub total_power_w: f64,
    pub peak_tops: f64,
    pub tops_per_watt: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HwError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl HardwareConfig {
    /// Parses and validates a TOML node description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HardwareConfig = toml::from_str(text).map_err(|e| HwError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_node() -> Self {
        Self::from_toml(DEFAULT_NODE_TOML).expect("shipped default config is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        if self.cards.is_empty() {
            return Err(HwError::Invalid("at least one card is required".into()));
        }
        for (i, c) in self.cards.iter().enumerate() {
            if c.cores == 0 {
                return Err(HwError::Invalid(format!("card {i}: at least one core is required")));
            }
            positive(&format!("card {i} peak_int8_ops"), c.peak_int8_ops)?;
            positive(&format!("card {i} peak_fp16_flops"), c.peak_fp16_flops)?;
            positive(&format!("card {i} sram_bw"), c.sram_bw)?;
            positive(&format!("card {i} lpddr_bw"), c.lpddr_bw)?;
            positive(&format!("card {i} power_w"), c.power_w)?;
            if c.sram_bytes == 0 || c.lpddr_bytes == 0 {
                return Err(HwError::Invalid(format!("card {i}: memory capacities must be positive")));
            }
            if c.peak_int8_ops < c.peak_fp16_flops {
                return Err(HwError::Invalid(format!("card {i}: int8 peak below fp16 peak")));
            }
        }
        positive("host cpu_peak_flops", self.host.cpu_peak_flops)?;
        positive("host host_dram_bw", self.host.host_dram_bw)?;
        positive("host host_dram_gb", self.host.host_dram_gb)?;
        positive("nic_bw_bits", self.nic_bw_bits)?;
        positive("links lane_bw", self.links.lane_bw)?;
        if self.switch.power_w < 0.0 {
            return Err(HwError::Invalid("switch power_w must not be negative".into()));
        }
        if !(self.links.transaction_overhead_s >= 0.0) || !(self.launch_overhead_s >= 0.0) {
            return Err(HwError::Invalid("overheads must not be negative".into()));
        }
        for (name, lanes) in [("host_lanes", self.links.host_lanes), ("card_lanes", self.links.card_lanes)] {
            if ![1, 2, 4, 8, 16].contains(&lanes) {
                return Err(HwError::Invalid(format!("{name} must be one of 1, 2, 4, 8, 16; got {lanes}")));
            }
        }
        for (kind, &eff) in &self.efficiency {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(HwError::Invalid(format!("efficiency of {kind} must be in (0, 1], got {eff}")));
            }
        }
        Ok(())
    }

    pub fn efficiency(&self, kind: OpKind) -> f64 {
        self.efficiency.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn summary(&self) -> HwSummary {
        let card_power: f64 = self.cards.iter().map(|c| c.power_w).sum();
        let switch_power = if self.switch.present { self.switch.power_w } else { 0.0 };
        let total_power_w = card_power + switch_power;
        let peak_tops = self.cards.iter().map(|c| c.peak_int8_ops).sum::<f64>() / 1e12;
        HwSummary {
            cards: self.cards.len(),
            card_memory_gb: self.cards.iter().map(|c| c.lpddr_bytes as f64).sum::<f64>() / 1e9,
            total_power_w,
            peak_tops,
            tops_per_watt: peak_tops / total_power_w,
        }
    }

    /// Copy with exactly `n` cards; new cards clone the first.
    pub fn with_cards(&self, n: usize) -> Self {
        let mut cfg = self.clone();
        let template = cfg.cards[0].clone();
        cfg.cards.resize(n, template);
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_node_summary() {
        let s = HardwareConfig::default_node().summary();
        assert_eq!(s.cards, 6);
        assert_eq!(s.card_memory_gb, 96.0);
        assert_eq!(s.total_power_w, 91.0);
        assert_eq!(s.peak_tops, 180.0);
        assert_eq!(s.tops_per_watt, 180.0 / 91.0);
    }

    #[test]
    fn no_cards_rejected() {
        let mut cfg = HardwareConfig::default_node();
        cfg.cards.clear();
        let err = HardwareConfig::from_toml(&cfg.to_toml()).unwrap_err();
        assert!(err.to_string().contains("at least one card"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = HardwareConfig::default_node();
        assert_eq!(HardwareConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn efficiency_keys_are_op_kinds() {
        let text = DEFAULT_NODE_TOML.replace("[efficiency]\n", "[efficiency]\nPool = 0.06\n");
        let cfg = HardwareConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.efficiency(OpKind::Pool), 0.06);
        assert_eq!(cfg.efficiency(OpKind::FC), 1.0);
        let bad = DEFAULT_NODE_TOML.replace("[efficiency]\n", "[efficiency]\nPool = 1.5\n");
        assert!(matches!(HardwareConfig::from_toml(&bad), Err(HwError::Invalid(_))));
    }

    #[test]
    fn schema_violations_are_distinct_from_bad_values() {
        assert!(matches!(HardwareConfig::from_toml("cards = 3"), Err(HwError::Schema(_))));
        let text = DEFAULT_NODE_TOML.replacen("card_lanes = 4", "card_lanes = 3", 1);
        assert!(matches!(HardwareConfig::from_toml(&text), Err(HwError::Invalid(_))));
    }
}
