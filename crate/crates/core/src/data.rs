//! Sites, observation panels, rank transforms and fold splitting.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::util::{average_ranks, dist, fmt_f64, stream_rng};
use crate::{Error, Result};

/// Planar observation locations with unique identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    ids: Vec<String>,
    coords: Vec<[f64; 2]>,
    index: HashMap<String, usize>,
}

impl SiteSet {
    pub fn new(ids: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::validation(format!(
                "{} site ids but {} coordinate pairs",
                ids.len(),
                coords.len()
            )));
        }
        if ids.len() < 2 {
            return Err(Error::validation("at least 2 sites are required"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate site id {id:?}")));
            }
        }
        if let Some((i, _)) = coords
            .iter()
            .enumerate()
            .find(|(_, c)| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(Error::validation(format!(
                "site {:?} has a non-finite coordinate",
                ids[i]
            )));
        }
        Ok(Self { ids, coords, index })
    }

    /// Sites named `s1..sN`.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Result<Self> {
        let ids = (1..=coords.len()).map(|i| format!("s{i}")).collect();
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.coords[i], self.coords[j])
    }

    /// All unordered pair distances `(i, j, d)` with `i < j`.
    pub fn pair_distances(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j, self.distance(i, j)));
            }
        }
        out
    }

    pub fn median_distance(&self) -> f64 {
        let d: Vec<f64> = self.pair_distances().into_iter().map(|p| p.2).collect();
        crate::util::median(&d)
    }

    pub fn diameter(&self) -> f64 {
        self.pair_distances()
            .into_iter()
            .map(|p| p.2)
            .fold(0.0, f64::max)
    }
}

/// Reads a sites CSV with header `id,x,y`.
pub fn load_sites(path: impl AsRef<Path>) -> Result<SiteSet> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let header: Vec<&str> = headers.iter().map(str::trim).collect();
    if header != ["id", "x", "y"] {
        return Err(Error::parse(path, "expected header `id,x,y`"));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| -> Result<f64> {
            let raw = record.get(k).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| {
                Error::parse(path, format!("row {}: {raw:?} is not a number", line + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("row {}: coordinate {raw:?} is not finite", line + 1),
                ));
            }
            Ok(v)
        };
        ids.push(record.get(0).unwrap_or("").trim().to_string());
        coords.push([field(1)?, field(2)?]);
    }
    SiteSet::new(ids, coords)
}

pub fn save_sites(path: impl AsRef<Path>, sites: &SiteSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x", "y"])?;
    for (id, c) in sites.ids().iter().zip(sites.coords()) {
        w.write_record([id.as_str(), &fmt_f64(c[0]), &fmt_f64(c[1])])?;
    }
    w.flush()?;
    Ok(())
}

/// `n_s x n_t` observations with a mask of observed cells.
///
/// Construction checks shapes, `n_t >= 2` and finiteness of observed values.
/// The per-site minimum of two observations is checked by the consumers that
/// need it (rank transforms and madograms), so that sparse training panels and
/// prior-only panels remain representable.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPanel {
    site_ids: Vec<String>,
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl FieldPanel {
    pub fn new(site_ids: Vec<String>, values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (n_s, n_t) = values.dim();
        if mask.dim() != (n_s, n_t) {
            return Err(Error::validation("mask and values have different shapes"));
        }
        if site_ids.len() != n_s {
            return Err(Error::validation(format!(
                "{} site ids for {n_s} panel rows",
                site_ids.len()
            )));
        }
        if n_t < 2 {
            return Err(Error::validation("a panel needs at least 2 time replicates"));
        }
        for ((i, t), v) in values.indexed_iter() {
            if mask[[i, t]] && !v.is_finite() {
                return Err(Error::validation(format!(
                    "observed value at site {:?}, time {} is not finite",
                    site_ids[i],
                    t + 1
                )));
            }
        }
        Ok(Self {
            site_ids,
            values,
            mask,
        })
    }

    pub fn fully_observed(site_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(site_ids, values, mask)
    }

    pub fn n_sites(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        self.mask[[i, t]]
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        self.mask[[i, t]].then(|| self.values[[i, t]])
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Same values with a replaced mask; cells may only be hidden, never revealed.
    pub fn with_mask(&self, mask: Array2<bool>) -> Result<Self> {
        if mask.dim() != self.mask.dim() {
            return Err(Error::validation("mask shape does not match panel"));
        }
        let mut combined = mask;
        combined.zip_mut_with(&self.mask, |m, &orig| *m = *m && orig);
        Ok(Self {
            site_ids: self.site_ids.clone(),
            values: self.values.clone(),
            mask: combined,
        })
    }

    pub fn with_site_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_sites() {
            return Err(Error::validation("site id count does not match panel rows"));
        }
        self.site_ids = ids;
        Ok(self)
    }

    /// Observed values of site `i` in time order.
    pub fn observed_row(&self, i: usize) -> Vec<f64> {
        self.values
            .row(i)
            .iter()
            .zip(self.mask.row(i))
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn check_min_observed(&self, min: usize) -> Result<()> {
        for (i, id) in self.site_ids.iter().enumerate() {
            let m = self.mask.row(i).iter().filter(|&&b| b).count();
            if m < min {
                return Err(Error::validation(format!(
                    "site {id:?} has {m} observed times, at least {min} required"
                )));
            }
        }
        Ok(())
    }
}

/// Reads a panel CSV with header `id,t1,...,tN`; empty cells are missing.
/// Rows may come in any order and are aligned to `sites`.
pub fn load_panel(path: impl AsRef<Path>, sites: &SiteSet) -> Result<FieldPanel> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("id") || headers.len() < 3 {
        return Err(Error::parse(path, "expected header `id,t1,...,tN`"));
    }
    let n_t = headers.len() - 1;
    let n_s = sites.len();
    let mut values = Array2::<f64>::zeros((n_s, n_t));
    let mut mask = Array2::from_elem((n_s, n_t), false);
    let mut seen = vec![false; n_s];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or("").trim();
        let i = sites.position(id).ok_or_else(|| {
            Error::parse(path, format!("row {}: unknown site id {id:?}", line + 1))
        })?;
        if record.len() != n_t + 1 {
            return Err(Error::parse(
                path,
                format!(
                    "row {}: expected {} fields, found {}",
                    line + 1,
                    n_t + 1,
                    record.len()
                ),
            ));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::parse(path, format!("site {id:?} appears twice")));
        }
        for t in 0..n_t {
            let raw = record.get(t + 1).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| {
                Error::parse(path, format!("row {}: {raw:?} is not a number", line + 1))
            })?;
            values[[i, t]] = v;
            mask[[i, t]] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            path,
            format!("no row for site {:?}", sites.ids()[i]),
        ));
    }
    FieldPanel::new(sites.ids().to_vec(), values, mask)
}

pub fn save_panel(path: impl AsRef<Path>, panel: &FieldPanel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=panel.n_times()).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (i, id) in panel.site_ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..panel.n_times()).map(|t| match panel.get(i, t) {
            Some(v) => fmt_f64(v),
            None => String::new(),
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Maps every site's observed series to unit Fréchet through its empirical
/// ranks: `z = -1 / ln(rank / (m + 1))` with `m` observed values at the site.
/// Tied values share their average rank. Missing cells stay missing.
pub fn rank_transform_frechet(panel: &FieldPanel) -> Result<FieldPanel> {
    panel.check_min_observed(2)?;
    let mut values = Array2::<f64>::zeros(panel.values.dim());
    for i in 0..panel.n_sites() {
        let observed: Vec<usize> = (0..panel.n_times())
            .filter(|&t| panel.mask[[i, t]])
            .collect();
        let series: Vec<f64> = observed.iter().map(|&t| panel.values[[i, t]]).collect();
        let m = series.len() as f64;
        for (&t, r) in observed.iter().zip(average_ranks(&series)) {
            values[[i, t]] = -1.0 / (r / (m + 1.0)).ln();
        }
    }
    FieldPanel::new(panel.site_ids.clone(), values, panel.mask.clone())
}

/// Fold label (1-based) of every observed panel cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: Array2<Option<u32>>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, i: usize, t: usize) -> Option<usize> {
        self.folds[[i, t]].map(|f| f as usize)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for f in self.folds.iter().flatten() {
            sizes[*f as usize - 1] += 1;
        }
        sizes
    }

    /// Observed cells outside fold `fold`.
    pub fn training_mask(&self, fold: usize) -> Array2<bool> {
        self.folds.mapv(|f| matches!(f, Some(x) if x as usize != fold))
    }

    /// Cells `(site, time)` of fold `fold`, row-major.
    pub fn test_cells(&self, fold: usize) -> Vec<(usize, usize)> {
        self.folds
            .indexed_iter()
            .filter(|(_, f)| **f == Some(fold as u32))
            .map(|(idx, _)| idx)
            .collect()
    }
}

/// Uniformly random partition of the observed cells into `k` folds whose
/// sizes differ by at most one; the first `n mod k` folds get the extra cell.
pub fn kfold_split(panel: &FieldPanel, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::validation("k-fold split needs k >= 2"));
    }
    let mut cells: Vec<(usize, usize)> = panel
        .mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|(idx, _)| idx)
        .collect();
    if cells.len() < k {
        return Err(Error::validation(format!(
            "{} observed cells cannot fill {k} folds",
            cells.len()
        )));
    }
    cells.shuffle(&mut stream_rng(seed, 0));
    let mut folds = Array2::from_elem(panel.mask.dim(), None);
    for (pos, (i, t)) in cells.into_iter().enumerate() {
        folds[[i, t]] = Some((pos % k + 1) as u32);
    }
    Ok(FoldAssignment { k, folds })
}

/// Writes `site_id,time_index,fold` with 1-based time indices.
pub fn save_folds(path: impl AsRef<Path>, folds: &FoldAssignment, panel: &FieldPanel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["site_id", "time_index", "fold"])?;
    for ((i, t), f) in folds.folds.indexed_iter() {
        if let Some(f) = f {
            w.write_record([
                panel.site_ids()[i].clone(),
                (t + 1).to_string(),
                f.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_folds(path: impl AsRef<Path>, panel: &FieldPanel) -> Result<FoldAssignment> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let index: HashMap<&str, usize> = panel
        .site_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut folds = Array2::from_elem(panel.mask.dim(), None);
    let mut k = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::parse(path, format!("row {}: malformed fold record", line + 1));
        let i = *index.get(record.get(0).unwrap_or("").trim()).ok_or_else(bad)?;
        let t: usize = record.get(1).unwrap_or("").trim().parse().map_err(|_| bad())?;
        let f: u32 = record.get(2).unwrap_or("").trim().parse().map_err(|_| bad())?;
        if t == 0 || t > panel.n_times() || f == 0 || !panel.is_observed(i, t - 1) {
            return Err(bad());
        }
        folds[[i, t - 1]] = Some(f);
        k = k.max(f as usize);
    }
    Ok(FoldAssignment { k, folds })
}
