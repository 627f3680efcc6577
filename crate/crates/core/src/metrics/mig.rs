use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Fewest rows MIG is computed on.
pub const MIG_MIN_ROWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigConfig {
    /// Equal-width bins per latent dimension.
    pub latent_bins: usize,
    /// Bins for factors with more distinct values than this.
    pub factor_bins: usize,
}

impl Default for MigConfig {
    fn default() -> Self {
        MigConfig {
            latent_bins: 20,
            factor_bins: 10,
        }
    }
}

/// Codes in `0..bins` from equal-width bins over the empirical range; a
/// constant input maps to code 0.
pub fn equal_width_codes(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

/// Discrete codes for a factor column: rank of the value among distinct
/// values when there are at most `bins` of them, equal-width bins otherwise.
pub fn factor_codes(values: &[f64], bins: usize) -> Vec<usize> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= bins {
        values
            .iter()
            .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("value present"))
            .collect()
    } else {
        equal_width_codes(values, bins)
    }
}

fn counts(codes: &[usize]) -> Vec<f64> {
    let k = codes.iter().max().map_or(0, |&m| m + 1);
    let mut c = vec![0.0; k];
    for &x in codes {
        c[x] += 1.0;
    }
    c
}

/// Plug-in entropy in nats.
pub fn discrete_entropy(codes: &[usize]) -> f64 {
    let n = codes.len() as f64;
    -counts(codes)
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| c / n * (c / n).ln())
        .sum::<f64>()
}

/// Plug-in mutual information in nats from the joint histogram.
pub fn discrete_mutual_info(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "mutual information of unaligned codes");
    let n = a.len() as f64;
    let (ca, cb) = (counts(a), counts(b));
    let kb = cb.len();
    let mut joint = vec![0.0; ca.len() * kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
    }
    let mut mi = 0.0;
    for (i, &pa) in ca.iter().enumerate() {
        for (j, &pb) in cb.iter().enumerate() {
            let c = joint[i * kb + j];
            if c > 0.0 {
                mi += c / n * (c * n / (pa * pb)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information gap of `latents: B x |Z|` against factor rows.
/// Factors with a single observed value are skipped.
pub fn mig(latents: &Tensor<f64>, factors: &[Vec<f64>], cfg: &MigConfig) -> Result<f64> {
    let shape = latents.shape();
    if shape.len() != 2 {
        return Err(Error::contract(format!("latents must be B x |Z|, got {shape:?}")));
    }
    let (b, z) = (shape[0], shape[1]);
    if b < MIG_MIN_ROWS {
        return Err(Error::contract(format!("MIG needs at least {MIG_MIN_ROWS} rows, got {b}")));
    }
    if factors.len() != b {
        return Err(Error::contract(format!("{} factor rows for {b} latent rows", factors.len())));
    }
    if cfg.latent_bins < 2 || cfg.factor_bins < 2 {
        return Err(Error::contract("MIG needs at least 2 bins"));
    }
    let k = factors.first().map_or(0, Vec::len);
    let latent_codes: Vec<Vec<usize>> = (0..z)
        .map(|j| {
            let col: Vec<f64> = (0..b).map(|i| latents.data()[i * z + j]).collect();
            equal_width_codes(&col, cfg.latent_bins)
        })
        .collect();
    let mut gaps = Vec::with_capacity(k);
    for f in 0..k {
        let col: Vec<f64> = factors.iter().map(|row| row[f]).collect();
        let codes = factor_codes(&col, cfg.factor_bins);
        let h = discrete_entropy(&codes);
        if h <= 0.0 {
            log::warn!("factor {f} is constant and is skipped by MIG");
            continue;
        }
        let mut mis: Vec<f64> = latent_codes.iter().map(|lc| discrete_mutual_info(lc, &codes)).collect();
        mis.sort_by(|a, b| b.total_cmp(a));
        let second = mis.get(1).copied().unwrap_or(0.0);
        gaps.push(((mis[0] - second) / h).clamp(0.0, 1.0));
    }
    if gaps.is_empty() {
        return Err(Error::Undefined("MIG: every factor is constant".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn oracle_mi(a: &[usize], b: &[usize]) -> f64 {
        // independent formulation: H(A) + H(B) − H(A, B)
        let h = |keys: Vec<(usize, usize)>| {
            let mut m = std::collections::BTreeMap::new();
            for k in &keys {
                *m.entry(*k).or_insert(0usize) += 1;
            }
            let n = keys.len() as f64;
            -m.values().map(|&c| c as f64 / n * (c as f64 / n).ln()).sum::<f64>()
        };
        h(a.iter().map(|&x| (x, 0)).collect()) + h(b.iter().map(|&y| (0, y)).collect())
            - h(a.iter().copied().zip(b.iter().copied()).collect())
    }

    #[test]
    fn mi_matches_entropy_oracle() {
        let mut r = rng::stream(1, &[]);
        for size in [2, 7, 20] {
            let a: Vec<usize> = (0..500).map(|_| r.random_range(0..size)).collect();
            let b: Vec<usize> = a.iter().map(|&x| if r.random_bool(0.6) { x } else { r.random_range(0..size) }).collect();
            assert!((discrete_mutual_info(&a, &b) - oracle_mi(&a, &b)).abs() < 1e-9);
        }
    }

    fn factor_rows(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn constant_latents_give_zero() {
        let v: Vec<f64> = (0..200).map(|i| (i % 5) as f64).collect();
        let z = Tensor::full(vec![200, 3], 0.7);
        assert_eq!(mig(&z, &factor_rows(&v), &MigConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn copied_factor_scores_high() {
        let mut r = rng::stream(2, &[]);
        let v: Vec<f64> = (0..1000).map(|_| r.random_range(0..5) as f64).collect();
        let mut data = Vec::new();
        for &x in &v {
            data.push(x);
            data.push(r.random_range(-1.0..1.0));
            data.push(r.random_range(-1.0..1.0));
        }
        let z = Tensor::new(vec![1000, 3], data).unwrap();
        let m = mig(&z, &factor_rows(&v), &MigConfig::default()).unwrap();
        assert!(m >= 0.9, "{m}");
    }

    #[test]
    fn duplicated_copies_have_no_gap() {
        let v: Vec<f64> = (0..300).map(|i| (i % 4) as f64).collect();
        let data: Vec<f64> = v.iter().flat_map(|&x| [x, x]).collect();
        let z = Tensor::new(vec![300, 2], data).unwrap();
        assert!(mig(&z, &factor_rows(&v), &MigConfig::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let z = Tensor::full(vec![50, 2], 0.0);
        assert!(mig(&z, &vec![vec![1.0]; 50], &MigConfig::default()).is_err());
        let z = Tensor::full(vec![100, 2], 0.0);
        assert!(matches!(
            mig(&z, &vec![vec![1.0]; 100], &MigConfig::default()),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn factor_codes_use_ranks_or_bins() {
        assert_eq!(factor_codes(&[2.0, 0.5, 2.0, 1.0], 10), vec![2, 0, 2, 1]);
        let many: Vec<f64> = (0..100).map(f64::from).collect();
        let codes = factor_codes(&many, 10);
        assert_eq!(codes[0], 0);
        assert_eq!(codes[99], 9);
        assert_eq!(codes[50], 5);
    }
}
