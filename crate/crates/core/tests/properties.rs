use dts_core::data::{load_csv, normalize, write_csv, Schema, SeriesDataset};
use dts_core::elbo::{decompose_minibatch, objective, DecompositionTerms, ObjectiveConfig, ObjectiveMode};
use dts_core::group::{split_latent, LatentSpec};
use dts_core::metrics::{mig, MigConfig};
use dts_core::nets::Posterior;
use dts_core::tensor::{grad_check, Graph, Tensor, Var};
use dts_core::Result;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Weighted sum so that no output coordinate's gradient is trivially 1.
fn weigh<'g>(g: &'g Graph<f64>, y: Var<'g, f64>) -> Var<'g, f64> {
    let n: usize = y.shape().iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    (y * g.constant(&tensor(y.shape(), w))).sum()
}

fn binary_mix<'g>(g: &'g Graph<f64>, p: &[Var<'g, f64>]) -> Result<Var<'g, f64>> {
    let prod = p[0] * p[1] + p[0] - p[1];
    let quot = p[0] / p[1].square().offset(1.0);
    let mm = p[0].matmul(p[2]);
    let cat = g.concat(&[prod, quot], 1);
    Ok(weigh(g, cat) + weigh(g, mm))
}

type Unary = for<'g> fn(Var<'g, f64>) -> Var<'g, f64>;

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn unary_primitives_pass_grad_check(v in values(6)) {
        let ops: [(&str, Unary); 7] = [
            ("tanh", |x| x.tanh()),
            ("sigmoid", |x| x.sigmoid()),
            ("exp", |x| x.exp()),
            ("softplus", |x| x.softplus()),
            ("square", |x| x.square()),
            ("scale", |x| x.scale(-1.7)),
            ("ln", |x| x.exp().offset(0.5).ln()),
        ];
        let t = tensor(vec![2, 3], v);
        for (name, op) in ops {
            let err = grad_check(|g, p| Ok(weigh(g, op(p[0]))), &[t.clone()], 1e-5).unwrap();
            prop_assert!(err < 1e-6, "{name}: {err:e}");
        }
    }

    #[test]
    fn reductions_pass_grad_check(v in values(12)) {
        let t = tensor(vec![3, 4], v);
        let checks: [(&str, Unary); 6] = [
            ("sum", |x| x.sum()),
            ("mean", |x| x.mean()),
            ("sum_axis", |x| x.sum_axis(1)),
            ("mean_axis", |x| x.mean_axis(0)),
            ("logsumexp", |x| x.logsumexp(1)),
            ("slice", |x| x.slice(1, 1, 2)),
        ];
        for (name, op) in checks {
            let err = grad_check(|g, p| Ok(weigh(g, op(p[0]))), &[t.clone()], 1e-5).unwrap();
            prop_assert!(err < 1e-6, "{name}: {err:e}");
        }
    }

    #[test]
    fn binary_primitives_pass_grad_check(a in values(6), b in values(6), m in values(6)) {
        let (ta, tb, tm) = (tensor(vec![2, 3], a), tensor(vec![2, 3], b), tensor(vec![3, 2], m));
        let ps = [ta, tb, tm];
        let err = grad_check(binary_mix, &ps, 1e-5).unwrap();
        prop_assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn composed_chains_pass_grad_check(v in values(6)) {
        let t = tensor(vec![2, 3], v);
        let err = grad_check(
            |g, p| Ok(weigh(g, p[0].tanh().exp().softplus().scale(0.5).sigmoid().logsumexp(1))),
            &[t],
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "{err:e}");
    }

    #[test]
    fn segments_split_and_rejoin(sizes in prop::collection::vec(1usize..4, 1..4), seed in 0u64..100) {
        let spec = LatentSpec::from_sizes(&sizes).unwrap();
        let total = spec.total();
        let data: Vec<f64> = (0..3 * total).map(|i| (i as f64 + seed as f64).sin()).collect();
        let t = tensor(vec![3, total], data);
        let g = Graph::new();
        let z = g.constant(&t);
        let parts = split_latent(z, &spec).unwrap();
        prop_assert_eq!(parts.len(), sizes.len());
        for (p, s) in parts.iter().zip(&sizes) {
            prop_assert_eq!(p.shape(), vec![3, *s]);
        }
        prop_assert_eq!(g.concat(&parts, 1).value(), t);
    }

    #[test]
    fn mig_is_a_fraction(lat in prop::collection::vec(-3.0f64..3.0, 300), f0 in prop::collection::vec(0usize..4, 100), f1 in values(100)) {
        let latents = tensor(vec![100, 3], lat);
        let factors: Vec<Vec<f64>> = (0..100).map(|i| vec![f0[i] as f64, f1[i]]).collect();
        match mig(&latents, &factors, &MigConfig::default()) {
            Ok(m) => prop_assert!((0.0..=1.0).contains(&m), "{m}"),
            Err(e) => prop_assert!(matches!(e, dts_core::Error::Undefined(_)), "{e}"),
        }
    }

    #[test]
    fn decomposition_ignores_row_order(mean in values(8), log_std in prop::collection::vec(-1.0f64..0.5, 8), eps in values(8), shift in 1usize..4) {
        let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let eval = |rows: &[usize]| {
            let g = Graph::new();
            let m = g.constant(&tensor(vec![4, 2], mean.clone())).select_rows(rows);
            let s = g.constant(&tensor(vec![4, 2], log_std.clone())).select_rows(rows);
            let e = g.constant(&tensor(vec![4, 2], eps.clone())).select_rows(rows);
            let z = m + s.exp() * e;
            let d = decompose_minibatch(z, &Posterior { mean: m, log_std: s }, 10).unwrap();
            d.values(0.0)
        };
        let (a, b) = (eval(&[0, 1, 2, 3]), eval(&perm));
        prop_assert!((a.index_code_mi - b.index_code_mi).abs() < 1e-12);
        prop_assert!((a.total_correlation - b.total_correlation).abs() < 1e-12);
        prop_assert!((a.dimension_kl - b.dimension_kl).abs() < 1e-12);
    }

    #[test]
    fn objective_mode_identities(mi in -5.0f64..5.0, tc in -5.0f64..5.0, dk in -5.0f64..5.0, recon in -50.0f64..0.0, beta in 1.0f64..8.0) {
        let t = DecompositionTerms { index_code_mi: mi, total_correlation: tc, dimension_kl: dk, recon_loglik: recon };
        let dts0 = ObjectiveConfig::new(ObjectiveMode::Dts, 0.0, beta, 10).unwrap();
        let b = ObjectiveConfig::beta(beta, 10).unwrap();
        prop_assert_eq!(objective(&dts0, &t).unwrap(), objective(&b, &t).unwrap());
        prop_assert_eq!(objective(&ObjectiveConfig::beta(1.0, 10).unwrap(), &t).unwrap(), objective(&ObjectiveConfig::vanilla(10), &t).unwrap());
    }

    #[test]
    fn csv_round_trip(rows in 1usize..6, t in 1usize..5, d in 1usize..3, seed in 0u64..50) {
        let windows: Vec<f64> = (0..rows * t * d).map(|i| ((i as u64 * 7 + seed) as f64).sqrt() - 3.0).collect();
        let ids = (0..rows).map(|i| format!("r{i}")).collect();
        let labels = (0..rows).map(|i| (i % 2 == 0).then_some(i % 3)).collect();
        let domains = (0..rows).map(|i| i % 2).collect();
        let ds = SeriesDataset::new(t, d, windows, ids, labels, domains).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&path, &ds).unwrap();
        let back = load_csv(&path, &Schema { t, d, k: 0 }).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn normalization_standardizes_channels(v in prop::collection::vec(-10.0f64..10.0, 40)) {
        let ds = SeriesDataset::new(5, 2, v, (0..4).map(|i| i.to_string()).collect(), vec![None; 4], vec![0; 4]).unwrap();
        let (n, stats) = normalize(&ds, None).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = n.windows.iter().skip(c).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if stats.std[c] > 1e-8 {
                let var = vals.iter().map(|x| x * x).sum::<f64>() / vals.len() as f64;
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }
}
