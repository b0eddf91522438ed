//! Nonnegative basis matrices with unit row sums.

use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::data::SiteSet;
use crate::util::fmt_f64;
use crate::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-10;

/// `n x L` matrix whose rows lie on the probability simplex. Row `i` holds the
/// basis functions evaluated at location `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    b: Array2<f64>,
}

impl BasisMatrix {
    pub fn new(b: Array2<f64>) -> Result<Self> {
        if b.ncols() == 0 || b.nrows() == 0 {
            return Err(Error::validation("basis matrix must be nonempty"));
        }
        for (i, row) in b.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::validation(format!("basis row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::validation(format!("basis row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { b })
    }

    /// Rescales every row to sum to one; rows must have a positive sum.
    pub fn from_weights(mut w: Array2<f64>) -> Result<Self> {
        for mut row in w.rows_mut() {
            let s: f64 = row.sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numerical("basis row has no positive weight".into()));
            }
            row.mapv_inplace(|v| v / s);
        }
        Self::new(w)
    }

    /// Single basis function, identically one.
    pub fn constant(n: usize) -> Self {
        Self {
            b: Array2::ones((n, 1)),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.b.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.b.row(i)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.b
    }

    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let mut out = Array2::zeros(self.b.dim());
        for (dst, &src) in order.iter().enumerate() {
            out.column_mut(dst).assign(&self.b.column(src));
        }
        Self { b: out }
    }
}

/// Column means `v_l = (1/n) sum_i B_il`; they sum to one.
pub fn contributions(basis: &BasisMatrix) -> Vec<f64> {
    let n = basis.n_rows() as f64;
    basis.b.columns().into_iter().map(|c| c.sum() / n).collect()
}

/// Column order by decreasing contribution (stable on ties).
pub fn contribution_order(basis: &BasisMatrix) -> Vec<usize> {
    let v = contributions(basis);
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    order
}

/// Writes `id,b1,...,bL`.
pub fn save_basis(path: impl AsRef<Path>, basis: &BasisMatrix, ids: &[String]) -> Result<()> {
    if ids.len() != basis.n_rows() {
        return Err(Error::validation("id count does not match basis rows"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=basis.n_basis()).map(|l| format!("b{l}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(basis.b.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `id,b1,...,bL` and aligns rows to `sites`.
pub fn load_basis(path: impl AsRef<Path>, sites: &SiteSet) -> Result<BasisMatrix> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let l = reader.headers()?.len().saturating_sub(1);
    if l == 0 {
        return Err(Error::parse(path, "expected header `id,b1,...,bL`"));
    }
    let mut b = Array2::from_elem((sites.len(), l), f64::NAN);
    let mut seen = vec![false; sites.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or("").trim();
        let i = sites
            .position(id)
            .ok_or_else(|| Error::parse(path, format!("row {}: unknown site id {id:?}", line + 1)))?;
        seen[i] = true;
        for k in 0..l {
            let raw = record.get(k + 1).unwrap_or("").trim();
            b[[i, k]] = raw
                .parse()
                .map_err(|_| Error::parse(path, format!("row {}: {raw:?} is not a number", line + 1)))?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::parse(path, format!("no row for site {:?}", sites.ids()[i])));
    }
    BasisMatrix::new(b)
}
