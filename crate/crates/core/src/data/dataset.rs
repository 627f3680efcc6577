use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Standard deviations are floored here before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-scoring statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Windows of `t` steps by `d` channels, stored time-major per window,
/// with row-aligned annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub t: usize,
    pub d: usize,
    pub windows: Vec<f64>,
    pub ids: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub domains: Vec<usize>,
    /// Ground-truth factor rows, when known.
    pub factors: Option<Vec<Vec<f64>>>,
    pub norm_stats: Option<NormStats>,
}

impl SeriesDataset {
    pub fn new(
        t: usize,
        d: usize,
        windows: Vec<f64>,
        ids: Vec<String>,
        labels: Vec<Option<usize>>,
        domains: Vec<usize>,
    ) -> Result<Self> {
        let ds = SeriesDataset {
            t,
            d,
            windows,
            ids,
            labels,
            domains,
            factors: None,
            norm_stats: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_factors(mut self, factors: Vec<Vec<f64>>) -> Result<Self> {
        self.factors = Some(factors);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.d == 0 {
            return Err(Error::contract("window length and channel count must be positive"));
        }
        let n = self.ids.len();
        if self.windows.len() != n * self.t * self.d {
            return Err(Error::contract(format!(
                "{} values do not form {n} windows of {} x {}",
                self.windows.len(),
                self.t,
                self.d
            )));
        }
        if self.labels.len() != n || self.domains.len() != n {
            return Err(Error::contract(format!(
                "annotation lengths differ: ids {n}, labels {}, domains {}",
                self.labels.len(),
                self.domains.len()
            )));
        }
        if let Some(f) = &self.factors {
            if f.len() != n {
                return Err(Error::contract(format!("{} factor rows for {n} windows", f.len())));
            }
            if let Some(k) = f.first().map(Vec::len) {
                if k == 0 || f.iter().any(|row| row.len() != k) {
                    return Err(Error::contract("factor rows must share a positive width"));
                }
            }
        }
        if let Some(s) = &self.norm_stats {
            if s.mean.len() != self.d || s.std.len() != self.d {
                return Err(Error::contract("normalization statistics do not match the channel count"));
            }
        }
        if self.windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("dataset contains non-finite values"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.t * self.d
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_len();
        &self.windows[i * w..(i + 1) * w]
    }

    /// Windows as an `N x T x D` tensor.
    pub fn tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset("no windows to convert".into()));
        }
        Tensor::from_f64(vec![self.len(), self.t, self.d], &self.windows)
    }

    pub fn num_factors(&self) -> Option<usize> {
        self.factors.as_ref().and_then(|f| f.first().map(Vec::len))
    }

    /// One more than the largest label, or 0 when unlabeled.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    pub fn subset(&self, rows: &[usize]) -> SeriesDataset {
        let w = self.window_len();
        let mut windows = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            windows.extend_from_slice(self.window(r));
        }
        SeriesDataset {
            t: self.t,
            d: self.d,
            windows,
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            domains: rows.iter().map(|&r| self.domains[r]).collect(),
            factors: self.factors.as_ref().map(|f| rows.iter().map(|&r| f[r].clone()).collect()),
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn rows_in_domain(&self, domain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domains[i] == domain).collect()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &SeriesDataset) -> Result<SeriesDataset> {
        if self.t != other.t || self.d != other.d {
            return Err(Error::contract(format!(
                "cannot concatenate {}x{} windows with {}x{}",
                self.t, self.d, other.t, other.d
            )));
        }
        let mut out = self.clone();
        out.windows.extend_from_slice(&other.windows);
        out.ids.extend(other.ids.iter().cloned());
        out.labels.extend_from_slice(&other.labels);
        out.domains.extend_from_slice(&other.domains);
        out.factors = match (&self.factors, &other.factors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        out.validate()?;
        Ok(out)
    }

    pub(crate) fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (row, id) in self.ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::Parse {
                    path: String::new(),
                    row: Some(row + 1),
                    message: format!("duplicate id {id:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Cuts a time-major series of `len x d` values into non-overlapping windows
/// of `t` steps, dropping the trailing remainder.
pub fn windowize(series: &[f64], d: usize, t: usize) -> Result<Vec<Vec<f64>>> {
    if d == 0 || t == 0 {
        return Err(Error::contract("window length and channel count must be positive"));
    }
    if series.len() % d != 0 {
        return Err(Error::contract(format!("{} values are not a whole number of {d}-channel steps", series.len())));
    }
    Ok(series.chunks_exact(t * d).map(<[f64]>::to_vec).collect())
}

/// Per-channel z-scoring with the given statistics, or with statistics
/// computed from `ds` when none are given.
pub fn normalize(ds: &SeriesDataset, stats: Option<&NormStats>) -> Result<(SeriesDataset, NormStats)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot normalize an empty dataset".into()));
    }
    let d = ds.d;
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != d || s.std.len() != d {
                return Err(Error::contract(format!(
                    "statistics for {} channels applied to {d}-channel data",
                    s.mean.len()
                )));
            }
            s.clone()
        }
        None => channel_stats(ds),
    };
    let std: Vec<f64> = stats
        .std
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            if s < STD_FLOOR {
                log::warn!("channel {c} has near-zero variance; std floored at {STD_FLOOR}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    let mut out = ds.clone();
    for (i, v) in out.windows.iter_mut().enumerate() {
        let c = i % d;
        *v = (*v - stats.mean[c]) / std[c];
    }
    out.norm_stats = Some(stats.clone());
    Ok((out, stats))
}

fn channel_stats(ds: &SeriesDataset) -> NormStats {
    let d = ds.d;
    let count = (ds.windows.len() / d) as f64;
    let mut mean = vec![0.0; d];
    for (i, v) in ds.windows.iter().enumerate() {
        mean[i % d] += v;
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; d];
    for (i, v) in ds.windows.iter().enumerate() {
        let e = v - mean[i % d];
        var[i % d] += e * e;
    }
    let std = var.iter().map(|v| (v / count).sqrt()).collect();
    NormStats { mean, std }
}
