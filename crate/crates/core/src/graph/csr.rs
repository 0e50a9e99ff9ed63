/// Compressed sparse rows of `u32` values keyed by node index.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    offsets: Vec<usize>,
    values: Vec<u32>,
}

impl Csr {
    /// Groups `(row, value)` pairs by row, keeping input order within a row.
    pub fn from_pairs(rows: usize, pairs: impl Iterator<Item = (u32, u32)> + Clone) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for (r, _) in pairs.clone() {
            counts[r as usize + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut values = vec![0u32; counts[rows]];
        for (r, v) in pairs {
            let slot = &mut cursor[r as usize];
            values[*slot] = v;
            *slot += 1;
        }
        Csr {
            offsets: counts,
            values,
        }
    }

    /// Sorts each row and removes duplicates.
    pub fn sorted_unique(self) -> Self {
        let rows = self.offsets.len().saturating_sub(1);
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut values = Vec::with_capacity(self.values.len());
        offsets.push(0);
        for r in 0..rows {
            let mut row = self.values[self.offsets[r]..self.offsets[r + 1]].to_vec();
            row.sort_unstable();
            row.dedup();
            values.extend_from_slice(&row);
            offsets.push(values.len());
        }
        Csr { offsets, values }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.values[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn total(&self) -> usize {
        self.values.len()
    }
}
