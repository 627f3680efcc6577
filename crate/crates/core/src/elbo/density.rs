use std::f64::consts::PI;

use crate::nets::{GaussianPosterior, Posterior};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result, Scalar};

/// `ln(2π) / 2`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian log density of a point: per-dimension terms and total.
pub fn gaussian_log_density<S: Scalar>(z: &[S], mean: &[S], log_std: &[S]) -> Result<(Vec<S>, S)> {
    if z.len() != mean.len() || z.len() != log_std.len() {
        return Err(Error::contract(format!(
            "density shapes differ: z {}, mean {}, log_std {}",
            z.len(),
            mean.len(),
            log_std.len()
        )));
    }
    let half = S::of(0.5);
    let c = S::of(HALF_LN_2PI);
    let per_dim: Vec<S> = z
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&z, &m), &ls)| {
            let u = (z - m) / ls.exp();
            -half * u * u - ls - c
        })
        .collect();
    let total = per_dim.iter().copied().sum();
    Ok((per_dim, total))
}

/// Elementwise (broadcasting) diagonal Gaussian log density.
pub fn gaussian_logpdf<'g, S: Scalar>(z: Var<'g, S>, mean: Var<'g, S>, log_std: Var<'g, S>) -> Var<'g, S> {
    let u = (z - mean) * (-log_std).exp();
    u.square().scale(S::of(-0.5)) - log_std - S::of(HALF_LN_2PI)
}

/// Elementwise standard normal log density.
pub fn standard_normal_logpdf<'g, S: Scalar>(z: Var<'g, S>) -> Var<'g, S> {
    z.square().scale(S::of(-0.5)) - S::of(HALF_LN_2PI)
}

/// Per-dimension `KL(N(μ, σ²) ‖ N(0, 1)) = ½(μ² + σ² − 1) − log σ`, `B x |Z|`.
pub fn kl_diag_gaussian<'g, S: Scalar>(post: &Posterior<'g, S>) -> Var<'g, S> {
    let var = (post.log_std.scale(S::of(2.0))).exp();
    ((post.mean.square() + var) - S::one()).scale(S::of(0.5)) - post.log_std
}

/// [`kl_diag_gaussian`] on plain tensors.
pub fn kl_diag_gaussian_tensor<S: Scalar>(post: &GaussianPosterior<S>) -> Tensor<S> {
    let half = S::of(0.5);
    let data = post
        .mean
        .data()
        .iter()
        .zip(post.log_std.data())
        .map(|(&m, &ls)| half * (m * m + (ls + ls).exp() - S::one()) - ls)
        .collect();
    Tensor::new(post.mean.shape().to_vec(), data).expect("posterior shape")
}

/// Batch mean of `−½‖x − x̂‖² − (T·D/2) ln 2π`.
pub fn recon_loglik<'g, S: Scalar>(x: Var<'g, S>, x_hat: Var<'g, S>) -> Result<Var<'g, S>> {
    let (sx, sh) = (x.shape(), x_hat.shape());
    if sx != sh {
        return Err(Error::contract(format!("reconstruction shape {sh:?} differs from input {sx:?}")));
    }
    let b = sx[0];
    let per_sample: usize = sx[1..].iter().product();
    let constant = S::of(per_sample as f64 * 0.5 * (2.0 * PI).ln());
    Ok((x - x_hat).square().sum().scale(S::of(-0.5 / b as f64)) - constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::Graph;

    #[test]
    fn unit_density_at_origin() {
        let (_, total) = gaussian_log_density(&[0.0], &[0.0], &[0.0]).unwrap();
        assert!((total - (-0.5 * (2.0 * PI).ln())).abs() < 1e-15);
        assert!((total + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn density_at_mean_depends_only_on_scale() {
        let ls = [0.3, -0.7, 1.1];
        let (_, a) = gaussian_log_density(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &ls).unwrap();
        let (_, b) = gaussian_log_density(&[-4.0, 0.0, 9.0], &[-4.0, 0.0, 9.0], &ls).unwrap();
        let expected = -ls.iter().sum::<f64>() - 1.5 * (2.0 * PI).ln();
        assert!((a - expected).abs() < 1e-14);
        assert_eq!(a, b);
    }

    #[test]
    fn density_integrates_to_one() {
        // tensor-product Simpson quadrature over ±8σ of a random 3-D Gaussian
        let mean = [0.4, -1.2, 0.9];
        let ls = [-0.3, 0.2, 0.5];
        let n = 120;
        let axes: Vec<Vec<(f64, f64)>> = (0..3)
            .map(|d| {
                let s = f64::exp(ls[d]);
                let (lo, hi) = (mean[d] - 8.0 * s, mean[d] + 8.0 * s);
                let h = (hi - lo) / n as f64;
                (0..=n)
                    .map(|i| {
                        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                        (lo + i as f64 * h, w * h / 3.0)
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for &(x, wx) in &axes[0] {
            for &(y, wy) in &axes[1] {
                for &(z, wz) in &axes[2] {
                    let (_, lp) = gaussian_log_density(&[x, y, z], &mean, &ls).unwrap();
                    total += wx * wy * wz * lp.exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn kl_closed_form_values() {
        let g = Graph::<f64>::new();
        let post = Posterior {
            mean: g.constant(&Tensor::from_f64(vec![1, 3], &[0.0, 1.0, 0.0]).unwrap()),
            log_std: g.constant(&Tensor::from_f64(vec![1, 3], &[0.0, 0.0, 2f64.ln()]).unwrap()),
        };
        let kl = kl_diag_gaussian(&post).value();
        assert_eq!(kl.data()[0], 0.0);
        assert!((kl.data()[1] - 0.5).abs() < 1e-15);
        assert!((kl.data()[2] - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-14);
        assert!((kl.data()[2] - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_of_wide_gaussian_by_quadrature() {
        // KL(N(0, 4) ‖ N(0, 1)) = ∫ q (log q − log p)
        let n = 4000;
        let (lo, hi) = (-24.0, 24.0);
        let h = (hi - lo) / n as f64;
        let mut kl = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let (_, lq) = gaussian_log_density(&[x], &[0.0], &[2f64.ln()]).unwrap();
            let (_, lp) = gaussian_log_density(&[x], &[0.0], &[0.0]).unwrap();
            kl += w * h / 3.0 * lq.exp() * (lq - lp);
        }
        let post = GaussianPosterior {
            mean: Tensor::zeros(vec![1, 1]),
            log_std: Tensor::from_f64(vec![1, 1], &[2f64.ln()]).unwrap(),
        };
        let closed: f64 = kl_diag_gaussian_tensor(&post).item();
        assert!((kl - closed).abs() < 1e-9, "{kl} vs {closed}");
    }

    #[test]
    fn recon_loglik_values() {
        let g = Graph::<f64>::new();
        let x = g.constant(&Tensor::uniform(vec![2, 4, 3], 1.0, &mut rng::stream(1, &[])));
        let same = recon_loglik(x, x).unwrap().item();
        assert_eq!(same, -(12.0 / 2.0) * (2.0 * PI).ln());

        let a = g.constant(&Tensor::from_f64(vec![1, 1, 1], &[1.0]).unwrap());
        let b = g.constant(&Tensor::from_f64(vec![1, 1, 1], &[0.0]).unwrap());
        let v = recon_loglik(a, b).unwrap().item();
        assert!((v - (-0.5 - 0.5 * (2.0 * PI).ln())).abs() < 1e-15);
    }

    #[test]
    fn recon_loglik_matches_density_sum() {
        let mut r = rng::stream(3, &[]);
        let xt = Tensor::<f64>::uniform(vec![3, 5, 2], 2.0, &mut r);
        let ht = Tensor::<f64>::uniform(vec![3, 5, 2], 2.0, &mut r);
        // oracle: sum of unit-variance Gaussian log densities per sample, then batch mean
        let mut oracle = 0.0;
        for i in 0..3 {
            let (_, lp) = gaussian_log_density(xt.row(i), ht.row(i), &[0.0; 10]).unwrap();
            oracle += lp / 3.0;
        }
        let g = Graph::new();
        let v = recon_loglik(g.constant(&xt), g.constant(&ht)).unwrap().item();
        assert!((v - oracle).abs() < 1e-10);
    }
}
