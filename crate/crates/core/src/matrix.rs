//! Dense per-account feature matrices and their CSV form.
//!
//! CSV layout: header `address,<p>1..<p>d` where `<p>` is `f` for manual
//! features and `e` for embeddings; rows follow the matrix's id order.

use std::collections::HashMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::graph::AccountId;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("row {row} has {found} columns, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("account {0} not present in feature matrix")]
    UnknownAccount(AccountId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major feature matrix keyed by account id. Ids may repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<AccountId>,
    dim: usize,
    data: Vec<f64>,
    prefix: char,
    index: HashMap<AccountId, usize>,
}

impl FeatureMatrix {
    pub const MANUAL_PREFIX: char = 'f';
    pub const EMBEDDING_PREFIX: char = 'e';

    pub fn from_rows(
        ids: Vec<AccountId>,
        rows: Vec<Vec<f64>>,
        dim: usize,
        prefix: char,
    ) -> Result<Self, MatrixError> {
        if ids.len() != rows.len() {
            return Err(MatrixError::DimensionMismatch {
                row: rows.len(),
                expected: ids.len(),
                found: rows.len(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(MatrixError::DimensionMismatch {
                    row: i,
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(Self::from_flat(ids, dim, data, prefix))
    }

    /// `data.len()` must equal `ids.len() * dim`.
    pub fn from_flat(ids: Vec<AccountId>, dim: usize, data: Vec<f64>, prefix: char) -> Self {
        assert_eq!(data.len(), ids.len() * dim, "flat buffer does not match shape");
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            index.entry(id.clone()).or_insert(i);
        }
        FeatureMatrix {
            ids,
            dim,
            data,
            prefix,
            index,
        }
    }

    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn prefix(&self) -> char {
        self.prefix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the first row with this id.
    pub fn position(&self, id: &AccountId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_of(&self, id: &AccountId) -> Option<&[f64]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn contains(&self, id: &AccountId) -> bool {
        self.index.contains_key(id)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// New matrix with the rows of `ids`, in that order.
    pub fn select(&self, ids: &[AccountId]) -> Result<FeatureMatrix, MatrixError> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = self
                .row_of(id)
                .ok_or_else(|| MatrixError::UnknownAccount(id.clone()))?;
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix::from_flat(ids.to_vec(), self.dim, data, self.prefix))
    }

    /// Returns `a·self + b·other`; both must share ids and dimension.
    pub fn linear_combination(&self, a: f64, other: &FeatureMatrix, b: f64) -> FeatureMatrix {
        assert_eq!(self.ids, other.ids);
        assert_eq!(self.dim, other.dim);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        FeatureMatrix::from_flat(self.ids.clone(), self.dim, data, self.prefix)
    }

    /// Rescales each row to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalized(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MatrixError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = Vec::with_capacity(self.dim + 1);
        header.push("address".to_string());
        header.extend((1..=self.dim).map(|j| format!("{}{j}", self.prefix)));
        out.write_record(&header).map_err(csv_io)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for i in 0..self.rows() {
            record.clear();
            record.push(self.ids[i].to_string());
            // Debug formatting of f64 is the shortest representation that round-trips.
            record.extend(self.row(i).iter().map(|x| format!("{x:?}")));
            out.write_record(&record).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<FeatureMatrix, MatrixError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers().map_err(csv_malformed)?.clone();
        if header.get(0).map(|h| h.eq_ignore_ascii_case("address")) != Some(true) {
            return Err(MatrixError::Malformed {
                line: 1,
                reason: "first column must be `address`".into(),
            });
        }
        let dim = header.len() - 1;
        let prefix = header
            .get(1)
            .and_then(|h| h.chars().next())
            .unwrap_or(Self::MANUAL_PREFIX);
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_malformed)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let id = AccountId::new(&rec[0]).map_err(|_| MatrixError::Malformed {
                line,
                reason: "empty address".into(),
            })?;
            ids.push(id);
            for field in rec.iter().skip(1) {
                let v = field.parse::<f64>().map_err(|_| MatrixError::Malformed {
                    line,
                    reason: format!("`{field}` is not a number"),
                })?;
                data.push(v);
            }
        }
        Ok(FeatureMatrix::from_flat(ids, dim, data, prefix))
    }
}

fn csv_io(e: csv::Error) -> MatrixError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MatrixError::Io(io),
        other => MatrixError::Malformed {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn csv_malformed(e: csv::Error) -> MatrixError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MatrixError::Io(io),
        other => MatrixError::Malformed {
            line,
            reason: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 3), 0..8)) {
            let ids: Vec<AccountId> = (0..rows.len()).map(|i| AccountId::from(format!("0x{i:02}").as_str())).collect();
            let m = FeatureMatrix::from_rows(ids, rows, 3, 'e').unwrap();
            let mut buf = Vec::new();
            m.write_csv(&mut buf).unwrap();
            let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn header_uses_prefix() {
        let m = FeatureMatrix::from_rows(vec!["a".into()], vec![vec![1.0, 2.5]], 2, 'f').unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "address,f1,f2\na,1.0,2.5\n");
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = FeatureMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0], vec![1.0, 2.0]],
            1,
            'f',
        )
        .unwrap_err();
        assert!(matches!(err, MatrixError::DimensionMismatch { row: 1, .. }));
    }

    #[test]
    fn select_and_normalize() {
        let m = FeatureMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![3.0, 4.0], vec![0.0, 0.0]],
            2,
            'e',
        )
        .unwrap();
        let s = m.select(&["b".into(), "a".into()]).unwrap();
        assert_eq!(s.row(1), &[3.0, 4.0]);
        let n = m.l2_normalized();
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert!(matches!(m.select(&["zz".into()]), Err(MatrixError::UnknownAccount(_))));
    }
}
