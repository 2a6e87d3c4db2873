use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PartitionError, Result};
use crate::graph::{ComputeGraph, OpKind};
use crate::hardware::Card;

/// One embedding table as the table placer sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInfo {
    /// Weight tensor name.
    pub table: String,
    /// SLS ops reading the table.
    pub ops: Vec<String>,
    pub bytes: u64,
    /// Estimated lookup time per batch, or `None` when the ops carry no
    /// lookup annotation.
    pub load: Option<f64>,
}

impl TableInfo {
    fn load_or_zero(&self) -> f64 {
        self.load.unwrap_or(0.0)
    }
}

/// Table-to-card assignment: `cards[c]` lists indices into the table list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAssignment {
    pub cards: Vec<Vec<usize>>,
}

impl TableAssignment {
    pub fn card_loads(&self, tables: &[TableInfo]) -> Vec<f64> {
        self.cards.iter().map(|ts| ts.iter().map(|&t| tables[t].load_or_zero()).sum()).collect()
    }

    pub fn card_bytes(&self, tables: &[TableInfo]) -> Vec<u64> {
        self.cards.iter().map(|ts| ts.iter().map(|&t| tables[t].bytes).sum()).collect()
    }

    pub fn max_load(&self, tables: &[TableInfo]) -> f64 {
        self.card_loads(tables).into_iter().fold(0.0, f64::max)
    }

    pub fn card_of(&self, table: usize) -> Option<usize> {
        self.cards.iter().position(|ts| ts.contains(&table))
    }
}

/// Collects the embedding tables of the SLS ops in `ops`, with the estimated
/// per-batch lookup time `avg_lookups * items * row_bytes / lpddr_bw`.
pub fn sls_tables(g: &ComputeGraph, ops: &[String], card: &Card) -> Result<Vec<TableInfo>> {
    let mut tables: Vec<TableInfo> = Vec::new();
    for id in ops {
        let op = g.op(id).ok_or_else(|| PartitionError::UnknownOp(id.clone()))?;
        if op.kind != OpKind::SLS {
            continue;
        }
        let name = op.attrs.table.clone().unwrap_or_else(|| op.inputs[0].clone());
        let spec = g.tensor(&name).ok_or_else(|| PartitionError::UnknownOp(name.clone()))?;
        let items = g.tensor(&op.outputs[0]).map_or(1, |t| t.shape.first().copied().unwrap_or(1));
        let dim = spec.shape.get(1).copied().unwrap_or(1);
        let load = op
            .attrs
            .avg_lookups
            .map(|a| a * items as f64 * spec.dtype.row_bytes(dim) as f64 / card.lpddr_bw);
        match tables.iter_mut().find(|t| t.table == name) {
            Some(t) => {
                t.ops.push(id.clone());
                t.load = match (t.load, load) {
                    (Some(a), Some(b)) => Some(a + b),
                    (a, b) => a.or(b),
                };
            }
            None => tables.push(TableInfo {
                table: name,
                ops: vec![id.clone()],
                bytes: spec.bytes(),
                load,
            }),
        }
    }
    Ok(tables)
}

fn overflow(tables: &[TableInfo], capacity: &[u64]) -> PartitionError {
    let need: u64 = tables.iter().map(|t| t.bytes).sum();
    let have: u64 = capacity.iter().sum();
    PartitionError::Capacity {
        what: "embedding tables",
        deficit: need.saturating_sub(have).max(1),
    }
}

/// Largest table first, each to the card with the most remaining capacity
/// (ties to the lowest card index).
pub fn assign_tables_by_capacity(tables: &[TableInfo], capacity: &[u64]) -> Result<TableAssignment> {
    let mut free = capacity.to_vec();
    let mut cards = vec![Vec::new(); capacity.len()];
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by(|&a, &b| tables[b].bytes.cmp(&tables[a].bytes).then(a.cmp(&b)));
    for t in order {
        let c = (0..free.len())
            .max_by(|&a, &b| free[a].cmp(&free[b]).then(b.cmp(&a)))
            .ok_or_else(|| overflow(tables, capacity))?;
        if free[c] < tables[t].bytes {
            return Err(overflow(tables, capacity));
        }
        free[c] -= tables[t].bytes;
        cards[c].push(t);
    }
    Ok(TableAssignment { cards })
}

/// The naive baseline: table `t` goes to card `t mod n`, moving on to the
/// next card with room when that one is full.
pub fn assign_tables_by_count(tables: &[TableInfo], capacity: &[u64]) -> Result<TableAssignment> {
    let n = capacity.len();
    let mut free = capacity.to_vec();
    let mut cards = vec![Vec::new(); n];
    for (t, info) in tables.iter().enumerate() {
        let c = (0..n)
            .map(|k| (t + k) % n.max(1))
            .find(|&c| free[c] >= info.bytes)
            .ok_or_else(|| overflow(tables, capacity))?;
        free[c] -= info.bytes;
        cards[c].push(t);
    }
    Ok(TableAssignment { cards })
}

fn lpt(tables: &[TableInfo], capacity: &[u64]) -> Result<TableAssignment> {
    let n = capacity.len();
    let mut free = capacity.to_vec();
    let mut load = vec![0.0f64; n];
    let mut cards = vec![Vec::new(); n];
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by(|&a, &b| {
        tables[b]
            .load_or_zero()
            .total_cmp(&tables[a].load_or_zero())
            .then(tables[b].bytes.cmp(&tables[a].bytes))
            .then(a.cmp(&b))
    });
    for t in order {
        let c = (0..n)
            .filter(|&c| free[c] >= tables[t].bytes)
            .min_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)))
            .ok_or_else(|| overflow(tables, capacity))?;
        free[c] -= tables[t].bytes;
        load[c] += tables[t].load_or_zero();
        cards[c].push(t);
    }
    Ok(TableAssignment { cards })
}

/// Moves single tables off the most loaded card while that lowers the
/// maximum load and capacity allows.
fn improve(tables: &[TableInfo], capacity: &[u64], a: &mut TableAssignment) {
    loop {
        let loads = a.card_loads(tables);
        let bytes = a.card_bytes(tables);
        let (hot, &max) = loads
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))
            .expect("at least one card");
        let mut best: Option<(usize, usize, f64)> = None;
        for (pos, &t) in a.cards[hot].iter().enumerate() {
            let l = tables[t].load_or_zero();
            for c in 0..loads.len() {
                if c == hot || bytes[c] + tables[t].bytes > capacity[c] {
                    continue;
                }
                let peak = (loads[c] + l).max(max - l);
                if peak < max && best.is_none_or(|(_, _, p)| peak < p) {
                    best = Some((pos, c, peak));
                }
            }
        }
        let Some((pos, c, _)) = best else { return };
        let t = a.cards[hot].remove(pos);
        a.cards[c].push(t);
    }
}

/// Lookup-aware table placement: longest-processing-time first onto the
/// least loaded card with room, refined by single-table moves. Without any
/// lookup annotation this balances table counts. The count-balanced
/// baseline is returned instead if it happens to be better.
pub fn balance_sls(tables: &[TableInfo], capacity: &[u64]) -> Result<TableAssignment> {
    let naive = assign_tables_by_count(tables, capacity)?;
    if tables.iter().all(|t| t.load.is_none()) {
        return Ok(naive);
    }
    let mut a = lpt(tables, capacity)?;
    improve(tables, capacity, &mut a);
    if naive.max_load(tables) < a.max_load(tables) {
        return Ok(naive);
    }
    Ok(a)
}

/// Lookup-skew fixture: `count` equally sized tables whose loads follow
/// Zipf(`alpha`) over popularity rank (the hottest table has load 1), in a
/// seeded random order.
pub fn zipf_tables(count: usize, alpha: f64, bytes: u64, seed: u64) -> Vec<TableInfo> {
    let mut loads: Vec<f64> = (1..=count).map(|r| (r as f64).powf(-alpha)).collect();
    loads.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    loads
        .into_iter()
        .enumerate()
        .map(|(i, load)| TableInfo {
            table: format!("table{i}"),
            ops: vec![format!("sls{i}")],
            bytes,
            load: Some(load),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(loads: &[f64], bytes: u64) -> Vec<TableInfo> {
        loads
            .iter()
            .enumerate()
            .map(|(i, &l)| TableInfo {
                table: format!("t{i}"),
                ops: vec![format!("sls{i}")],
                bytes,
                load: Some(l),
            })
            .collect()
    }

    #[test]
    fn heavy_table_gets_its_own_card() {
        let t = tables(&[100.0, 1.0, 1.0, 1.0], 10);
        let a = balance_sls(&t, &[100, 100]).unwrap();
        let heavy = a.card_of(0).unwrap();
        assert_eq!(a.cards[heavy], vec![0]);
        let mut rest = a.cards[1 - heavy].clone();
        rest.sort();
        assert_eq!(rest, vec![1, 2, 3]);
    }

    #[test]
    fn identical_tables_match_naive() {
        let t = tables(&[2.0; 12], 10);
        let cap = [1000; 6];
        let a = balance_sls(&t, &cap).unwrap();
        let n = assign_tables_by_count(&t, &cap).unwrap();
        assert_eq!(a.card_loads(&t), n.card_loads(&t));
        assert!(a.cards.iter().all(|c| c.len() == 2));
    }

    #[test]
    fn greedy_capacity_spreads_equal_tables() {
        let t = tables(&[1.0; 12], 10);
        let a = assign_tables_by_capacity(&t, &[1000; 6]).unwrap();
        assert!(a.cards.iter().all(|c| c.len() == 2));
        assert_eq!(a.cards[0], vec![0, 6]);
    }

    #[test]
    fn capacity_forces_split() {
        // 20 GB over 16 GB cards
        let t = tables(&[1.0; 10], 2_000_000_000);
        let cap = [16_000_000_000u64; 6];
        let a = assign_tables_by_capacity(&t, &cap).unwrap();
        let bytes = a.card_bytes(&t);
        assert!(bytes.iter().filter(|&&b| b > 0).count() >= 2);
        assert!(bytes.iter().all(|&b| b <= cap[0]));
        let err = assign_tables_by_capacity(&t, &[16_000_000_000]).unwrap_err();
        assert_eq!(
            err,
            PartitionError::Capacity {
                what: "embedding tables",
                deficit: 4_000_000_000
            }
        );
    }

    #[test]
    fn unannotated_tables_balance_counts() {
        let mut t = tables(&[1.0; 5], 1);
        for x in &mut t {
            x.load = None;
        }
        let a = balance_sls(&t, &[10, 10]).unwrap();
        assert_eq!(a.cards, vec![vec![0, 2, 4], vec![1, 3]]);
    }
}
