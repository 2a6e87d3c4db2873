use super::rowwise::RowwiseQuantTable;
use super::{NumericsError, Result};

/// Embedding table operand of an SLS.
#[derive(Debug, Clone, Copy)]
pub enum SlsTable<'a> {
    Dense { data: &'a [f32], rows: usize, dim: usize },
    Rowwise(&'a RowwiseQuantTable),
}

impl SlsTable<'_> {
    pub fn rows(&self) -> usize {
        match self {
            SlsTable::Dense { rows, .. } => *rows,
            SlsTable::Rowwise(t) => t.rows,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SlsTable::Dense { dim, .. } => *dim,
            SlsTable::Rowwise(t) => t.dim,
        }
    }

    fn row_into(&self, r: usize, out: &mut [f32]) {
        match self {
            SlsTable::Dense { data, dim, .. } => out.copy_from_slice(&data[r * dim..(r + 1) * dim]),
            SlsTable::Rowwise(t) => t.dequantize_row_into(r, out),
        }
    }
}

fn check(table: &SlsTable<'_>, indices: &[i64], lengths: &[i64]) -> Result<()> {
    let mut total = 0i64;
    for (b, &l) in lengths.iter().enumerate() {
        if l < 0 {
            return Err(NumericsError::NegativeLength { item: b, length: l });
        }
        total += l;
    }
    if total != indices.len() as i64 {
        return Err(NumericsError::LengthSum {
            lengths: total,
            indices: indices.len(),
        });
    }
    let rows = table.rows();
    if let Some(&bad) = indices.iter().find(|&&i| i < 0 || i as usize >= rows) {
        return Err(NumericsError::IndexOutOfRange { index: bad, rows });
    }
    Ok(())
}

/// Sums the rows of one pooling segment in ascending position order, in fp32.
/// The accumulator starts as a copy of the first row.
fn pool_general(table: &SlsTable<'_>, segment: &[i64], out: &mut [f32], scratch: &mut [f32]) {
    let Some((&first, rest)) = segment.split_first() else {
        out.fill(0.0);
        return;
    };
    table.row_into(first as usize, out);
    for &i in rest {
        table.row_into(i as usize, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += *s;
        }
    }
}

fn run(table: SlsTable<'_>, indices: &[i64], lengths: &[i64], fast_path: bool) -> Result<Vec<f32>> {
    check(&table, indices, lengths)?;
    let dim = table.dim();
    let mut out = vec![0.0f32; lengths.len() * dim];
    let mut scratch = vec![0.0f32; dim];
    let mut pos = 0usize;
    for (b, &l) in lengths.iter().enumerate() {
        let segment = &indices[pos..pos + l as usize];
        let row = &mut out[b * dim..(b + 1) * dim];
        if fast_path && segment.len() == 1 {
            table.row_into(segment[0] as usize, row);
        } else {
            pool_general(&table, segment, row, &mut scratch);
        }
        pos += l as usize;
    }
    Ok(out)
}

/// SparseLengthsSum: output row `b` is the sum of the (dequantized) table rows
/// named by item `b`'s index segment. A single-index segment takes the plain
/// lookup path, which is bit-identical to the general path.
pub fn sls_reference(table: SlsTable<'_>, indices: &[i64], lengths: &[i64]) -> Result<Vec<f32>> {
    run(table, indices, lengths, true)
}

/// The pooling path alone, without the single-lookup shortcut.
pub fn sls_general(table: SlsTable<'_>, indices: &[i64], lengths: &[i64]) -> Result<Vec<f32>> {
    run(table, indices, lengths, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: [f32; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];

    fn dense() -> SlsTable<'static> {
        SlsTable::Dense {
            data: &T,
            rows: 3,
            dim: 2,
        }
    }

    #[test]
    fn pooled_sum() {
        assert_eq!(sls_reference(dense(), &[0, 2], &[2]).unwrap(), vec![6.0, 8.0]);
    }

    #[test]
    fn single_lookup_is_the_row() {
        assert_eq!(sls_reference(dense(), &[1], &[1]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn empty_pool_is_zero() {
        assert_eq!(sls_reference(dense(), &[], &[0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            sls_reference(dense(), &[3], &[1]),
            Err(NumericsError::IndexOutOfRange { index: 3, rows: 3 })
        );
        assert!(matches!(
            sls_reference(dense(), &[0], &[-1, 2]),
            Err(NumericsError::NegativeLength { .. })
        ));
        assert!(matches!(sls_reference(dense(), &[0, 1], &[1]), Err(NumericsError::LengthSum { .. })));
    }

    #[test]
    fn negative_zero_row_survives_both_paths() {
        let data = [-0.0f32, 1.0];
        let t = SlsTable::Dense {
            data: &data,
            rows: 1,
            dim: 2,
        };
        let a = sls_reference(t, &[0], &[1]).unwrap();
        let b = sls_general(t, &[0], &[1]).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}
