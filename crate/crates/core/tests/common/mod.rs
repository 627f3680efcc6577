#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use dts_core::elbo::ObjectiveConfig;
use dts_core::group::{adversarial_losses, adversarial_losses_plain, group_elbo, AdaptBatch, GroupModel, LatentSpec};
use dts_core::nets::ModelConfig;
use dts_core::rng;
use dts_core::tensor::{Graph, Tensor};

pub fn tiny_group_model(seed: u64) -> GroupModel<f64> {
    let cfg = ModelConfig::new(1, 3, LatentSpec::class_domain(2, 2).unwrap()).unwrap();
    GroupModel::new(cfg, 3, seed).unwrap()
}

/// Four rows: two labeled source rows followed by two target rows.
pub fn tiny_batch() -> (Tensor<f64>, Tensor<f64>, AdaptBatch) {
    let x = Tensor::uniform(vec![4, 5, 1], 1.5, &mut rng::stream(21, &[]));
    let noise = Tensor::uniform(vec![4, 4], 1.0, &mut rng::stream(22, &[]));
    let batch = AdaptBatch {
        source_rows: vec![0, 1],
        labels: vec![2, 0],
        domains: vec![0, 0, 1, 1],
    };
    (x, noise, batch)
}

/// Largest absolute difference between the parameter gradients of the GRL
/// loss and those of the explicit two-objective form: encoder and decoder
/// descend `task − λ·adv`, the classifiers descend `task + adv`.
pub fn grl_vs_explicit(model: &GroupModel<f64>, lambda: f64) -> f64 {
    let (x, noise, batch) = tiny_batch();
    let obj = ObjectiveConfig::dts_default(8);

    let g = Graph::new();
    let p = g.bind(&model.store);
    let e = group_elbo(model, &p, g.constant(&x), &noise, &obj).unwrap();
    let l = adversarial_losses(model, &p, e.pass.z, &batch, lambda).unwrap();
    let grl = g.backward(e.pass.loss + l.combined(1.0, 1.0)).unwrap();

    let g1 = Graph::new();
    let p1 = g1.bind(&model.store);
    let e1 = group_elbo(model, &p1, g1.constant(&x), &noise, &obj).unwrap();
    let l1 = adversarial_losses_plain(model, &p1, e1.pass.z, &batch).unwrap();
    let task = l1.task_m.unwrap() + l1.task_n;
    let adv = l1.adv_m + l1.adv_n.unwrap();
    let enc = g1.backward(e1.pass.loss + task - adv.scale(lambda)).unwrap();

    let g2 = Graph::new();
    let p2 = g2.bind(&model.store);
    let e2 = group_elbo(model, &p2, g2.constant(&x), &noise, &obj).unwrap();
    let l2 = adversarial_losses_plain(model, &p2, e2.pass.z, &batch).unwrap();
    let cls = g2.backward(l2.combined(1.0, 1.0)).unwrap();

    let mut worst = 0.0f64;
    for (i, param) in model.store.iter().enumerate() {
        let id = dts_core::tensor::ParamId(i);
        let want = if i < model.vae_param_count() { enc.param(id) } else { cls.param(id) };
        let got = grl.param(id).expect("every parameter gets a gradient");
        let want = want.expect("every parameter gets a gradient");
        assert_eq!(got.shape(), param.value.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

pub fn dts() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dts"))
}

pub fn run_dts(args: &[&str]) -> Output {
    dts().args(args).output().expect("dts binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
