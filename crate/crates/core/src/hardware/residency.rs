use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::Card;
use super::{HwError, Result};
use crate::graph::{op_traffic, ComputeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Sram,
    #[default]
    Lpddr,
    HostDram,
}

/// Static placement of weight tensors in one card's memory tiers. Tensors not
/// listed (activations included) live in LPDDR.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidencyPlan {
    pub tiers: BTreeMap<String, Tier>,
    pub sram_bytes: u64,
    pub lpddr_bytes: u64,
    pub host_bytes: u64,
}

impl ResidencyPlan {
    pub fn tier_of(&self, tensor: &str) -> Tier {
        self.tiers.get(tensor).copied().unwrap_or_default()
    }

    pub fn total_bytes(&self) -> u64 {
        self.sram_bytes + self.lpddr_bytes + self.host_bytes
    }

    fn place(&mut self, name: &str, bytes: u64, tier: Tier) {
        self.tiers.insert(name.to_string(), tier);
        match tier {
            Tier::Sram => self.sram_bytes += bytes,
            Tier::Lpddr => self.lpddr_bytes += bytes,
            Tier::HostDram => self.host_bytes += bytes,
        }
    }
}

/// Bytes of each weight read per inference: the reuse benefit that ranks
/// SRAM candidates (a constant request rate scales every entry equally).
pub fn weight_reuse(g: &ComputeGraph) -> Result<BTreeMap<String, f64>> {
    let mut reuse: BTreeMap<String, f64> = g.weights.keys().map(|w| (w.clone(), 0.0)).collect();
    for op in &g.ops {
        for t in op_traffic(g, op, None)? {
            if let Some(r) = reuse.get_mut(&t.tensor) {
                *r += t.bytes;
            }
        }
    }
    Ok(reuse)
}

/// Places `weights` (every graph weight when `None`) on one card. `pins`
/// fixes tiers up front; the rest fill SRAM greedily by reuse benefit
/// (ties by name), skipping tensors that no longer fit, and go to LPDDR.
pub fn plan_residency_with(
    g: &ComputeGraph,
    card: &Card,
    weights: Option<&[String]>,
    pins: &BTreeMap<String, Tier>,
) -> Result<ResidencyPlan> {
    let reuse = weight_reuse(g)?;
    let names: Vec<&String> = match weights {
        Some(list) => list.iter().collect(),
        None => g.weights.keys().collect(),
    };
    let mut plan = ResidencyPlan::default();
    let mut free: Vec<(&String, u64, f64)> = Vec::new();
    for name in names {
        let info = g.weights.get(name.as_str()).ok_or_else(|| HwError::UnknownTensor(name.clone()))?;
        match pins.get(name.as_str()) {
            Some(&tier) => plan.place(name, info.bytes, tier),
            None => free.push((name, info.bytes, reuse.get(name.as_str()).copied().unwrap_or(0.0))),
        }
    }
    if plan.sram_bytes > card.sram_bytes {
        return Err(HwError::Overflow {
            tier: "sram",
            deficit: plan.sram_bytes - card.sram_bytes,
        });
    }
    free.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    for (name, bytes, _) in free {
        let tier = if plan.sram_bytes + bytes <= card.sram_bytes {
            Tier::Sram
        } else {
            Tier::Lpddr
        };
        plan.place(name, bytes, tier);
    }
    if plan.lpddr_bytes > card.lpddr_bytes {
        return Err(HwError::Overflow {
            tier: "lpddr",
            deficit: plan.lpddr_bytes - card.lpddr_bytes,
        });
    }
    Ok(plan)
}

/// Residency of every weight of `g` on `card`, at the graph's dtypes.
pub fn plan_residency(g: &ComputeGraph, card: &Card) -> Result<ResidencyPlan> {
    plan_residency_with(g, card, None, &BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, OpKind, OpNode, TensorSpec};
    use crate::hardware::HardwareConfig;

    /// `n` independent FCs over 1 MB int8 weights.
    fn fcs(n: usize) -> ComputeGraph {
        let mut g = ComputeGraph::new();
        for i in 0..n {
            g.add_input(TensorSpec::new(format!("x{i}"), vec![i + 1, 1000], DType::Int8));
            g.add_weight(TensorSpec::new(format!("w{i:02}"), vec![1000, 1000], DType::Int8));
            g.add_op(OpNode::new(
                format!("fc{i}"),
                OpKind::FC,
                vec![format!("x{i}"), format!("w{i:02}")],
                vec![format!("y{i}")],
            ));
        }
        crate::graph::infer_shapes(&g).unwrap()
    }

    #[test]
    fn small_model_fits_in_sram() {
        let card = HardwareConfig::default_node().cards[0].clone();
        let plan = plan_residency(&fcs(5), &card).unwrap();
        assert_eq!(plan.sram_bytes, 5_000_000);
        assert_eq!(plan.lpddr_bytes, 0);
    }

    #[test]
    fn greedy_fill_to_capacity() {
        let card = HardwareConfig::default_node().cards[0].clone();
        let plan = plan_residency(&fcs(60), &card).unwrap();
        assert_eq!(plan.sram_bytes, 24_000_000);
        assert_eq!(plan.lpddr_bytes, 36_000_000);
        // equal reuse: ties go by name
        for i in 0..24 {
            assert_eq!(plan.tier_of(&format!("w{i:02}")), Tier::Sram);
        }
        assert_eq!(plan.tier_of("w24"), Tier::Lpddr);
    }

    #[test]
    fn shared_weight_wins_sram() {
        let mut g = fcs(30);
        g.add_op(OpNode::new("again", OpKind::FC, vec!["x0".into(), "w29".into()], vec!["y29b".into()]));
        let g = crate::graph::infer_shapes(&g).unwrap();
        let card = HardwareConfig::default_node().cards[0].clone();
        let plan = plan_residency(&g, &card).unwrap();
        assert_eq!(plan.tier_of("w29"), Tier::Sram);
        assert_eq!(plan.tier_of("w22"), Tier::Sram);
        assert_eq!(plan.tier_of("w23"), Tier::Lpddr);
    }

    #[test]
    fn lpddr_overflow_names_deficit() {
        let mut card = HardwareConfig::default_node().cards[0].clone();
        card.sram_bytes = 1;
        card.lpddr_bytes = 4_000_000;
        let err = plan_residency(&fcs(5), &card).unwrap_err();
        assert_eq!(
            err,
            HwError::Overflow {
                tier: "lpddr",
                deficit: 1_000_000
            }
        );
    }
}
