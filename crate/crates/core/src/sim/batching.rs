use serde::{Deserialize, Serialize};

use super::{Result, SimError};

/// How queued requests are grouped into device batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchPolicy {
    /// FIFO groups of up to `n` requests.
    FixedSize { n: usize },
    /// Each request is padded to its smallest covering boundary; only
    /// requests sharing a boundary are grouped, FIFO, up to `n`.
    LengthBucketed { boundaries: Vec<usize>, n: usize },
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy::FixedSize { n: 1 }
    }
}

impl BatchPolicy {
    pub fn max_requests(&self) -> usize {
        match self {
            BatchPolicy::FixedSize { n } | BatchPolicy::LengthBucketed { n, .. } => (*n).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BatchPolicy::FixedSize { n } if *n == 0 => Err(SimError::Invalid("batch size must be positive".into())),
            BatchPolicy::LengthBucketed { n, .. } if *n == 0 => {
                Err(SimError::Invalid("batch size must be positive".into()))
            }
            BatchPolicy::LengthBucketed { boundaries, .. } if boundaries.is_empty() => {
                Err(SimError::Invalid("at least one padding boundary is required".into()))
            }
            _ => Ok(()),
        }
    }

    /// Padded length of an item, if the policy pads.
    pub fn padded_len(&self, len: usize) -> Result<Option<usize>> {
        match self {
            BatchPolicy::FixedSize { .. } => Ok(None),
            BatchPolicy::LengthBucketed { boundaries, .. } => {
                let max = boundaries.iter().copied().max().unwrap_or(0);
                boundaries
                    .iter()
                    .copied()
                    .filter(|&b| b >= len)
                    .min()
                    .map(Some)
                    .ok_or(SimError::ItemTooLong { len, max })
            }
        }
    }
}

/// One formed batch: positions into the queue it was formed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub members: Vec<usize>,
    pub padded_len: Option<usize>,
    /// `sum(padded - actual) / sum(padded)`; 0 without padding.
    pub wasted_fraction: f64,
}

/// Groups `lengths` (one per queued item, in FIFO order) into batches.
pub fn form_batches(lengths: &[usize], policy: &BatchPolicy) -> Result<Vec<Batch>> {
    policy.validate()?;
    let n = policy.max_requests();
    let mut padded = Vec::with_capacity(lengths.len());
    for &len in lengths {
        padded.push(policy.padded_len(len)?);
    }
    let mut open: Vec<Batch> = Vec::new();
    let mut done: Vec<Batch> = Vec::new();
    for (i, p) in padded.iter().enumerate() {
        let slot = open.iter().position(|b| b.padded_len == *p);
        let b = match slot {
            Some(s) => &mut open[s],
            None => {
                open.push(Batch {
                    members: Vec::new(),
                    padded_len: *p,
                    wasted_fraction: 0.0,
                });
                open.last_mut().expect("just pushed")
            }
        };
        b.members.push(i);
        if b.members.len() == n {
            let full = open.remove(slot.unwrap_or(open.len() - 1));
            done.push(full);
        }
    }
    done.extend(open);
    // batches are emitted in order of their oldest member
    done.sort_by_key(|b| b.members[0]);
    for b in &mut done {
        if let Some(p) = b.padded_len {
            let total = (p * b.members.len()) as f64;
            let actual: usize = b.members.iter().map(|&i| lengths[i]).sum();
            b.wasted_fraction = if total > 0.0 { (total - actual as f64) / total } else { 0.0 };
        }
    }
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buckets(n: usize) -> BatchPolicy {
        BatchPolicy::LengthBucketed {
            boundaries: vec![32, 64, 128, 512],
            n,
        }
    }

    #[test]
    fn empty_queue() {
        assert!(form_batches(&[], &BatchPolicy::FixedSize { n: 4 }).unwrap().is_empty());
    }

    #[test]
    fn pads_to_covering_boundary() {
        let b = form_batches(&[10, 30, 60], &buckets(8)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].members.clone(), b[0].padded_len), (vec![0, 1], Some(32)));
        assert_eq!((b[1].members.clone(), b[1].padded_len), (vec![2], Some(64)));
        assert!((b[0].wasted_fraction - 24.0 / 64.0).abs() < 1e-12);
        assert!((b[1].wasted_fraction - 4.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn fifo_fill() {
        let b = form_batches(&[7; 6], &BatchPolicy::FixedSize { n: 4 }).unwrap();
        let sizes: Vec<usize> = b.iter().map(|b| b.members.len()).collect();
        assert_eq!(sizes, vec![4, 2]);
        assert_eq!(b[0].wasted_fraction, 0.0);
    }

    #[test]
    fn too_long_is_an_error() {
        assert!(matches!(form_batches(&[600], &buckets(2)), Err(SimError::ItemTooLong { len: 600, max: 512 })));
    }
}
