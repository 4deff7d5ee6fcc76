mod common;

use common::{live_params, max_diff, toy_config, toy_task};
use metatrack::detector::{Detector, HeadStyle, ParamSet};
use metatrack::meta::{
    adapt, meta_gradient, meta_step, outer_variables, prepare, set_loss, AdamState, MetaConfig,
    MetaVars, Prepared,
};
use metatrack::{Graph, Tensor, Var};

/// Gradient of the mean loss over `set` at `params`, trainable entries only.
fn plain_grad(det: &Detector, params: &ParamSet<f64>, set: &[Prepared<f64>]) -> Vec<Tensor<f64>> {
    let g = Graph::new();
    let vars = MetaVars::new(&g, params, false);
    let loss = set_loss(det, &vars.theta, set).unwrap();
    let wrt: Vec<Var<'_, f64>> = params.trainable().iter().map(|&i| vars.theta[i]).collect();
    g.grad(loss, &wrt, false)
        .unwrap()
        .iter()
        .map(Var::value)
        .collect()
}

fn setup(style: HeadStyle) -> (Detector, ParamSet<f64>) {
    let cfg = toy_config(style, false);
    (Detector::new(cfg.clone()).unwrap(), live_params(&cfg, 0.05))
}

fn meta(steps: usize) -> MetaConfig {
    MetaConfig {
        inner_steps: steps,
        epochs: 1,
        ..Default::default()
    }
}

#[test]
fn zero_rates_give_the_plain_target_gradient() {
    for style in [HeadStyle::AnchorFree, HeadStyle::AnchorBased] {
        let (det, params) = setup(style);
        let params = params.fill_lrs(0.0);
        let task = toy_task();
        let target = prepare(&det, &params, &task.target).unwrap();
        let expect = plain_grad(&det, &params, &target);
        for first_order in [false, true] {
            let mg = meta_gradient(
                &det,
                &params,
                &task,
                &meta(3),
                &[0.1, 0.2, 0.3, 0.4],
                first_order,
            )
            .unwrap();
            let d = max_diff(&mg.theta, &expect);
            assert!(d < 1e-12, "{style} first_order={first_order}: {d:e}");
        }
    }
}

#[test]
fn single_weight_schedules_reduce_to_endpoint_gradients() {
    let (det, params) = setup(HeadStyle::AnchorFree);
    let task = toy_task();
    let support = prepare(&det, &params, &task.support).unwrap();
    let target = prepare(&det, &params, &task.target).unwrap();
    let adapted = adapt(&det, &params, &support, 2).unwrap();

    // only theta_0 counts: the rates cannot matter
    let mg = meta_gradient(&det, &params, &task, &meta(2), &[1.0, 0.0, 0.0], false).unwrap();
    assert!(max_diff(&mg.theta, &plain_grad(&det, &params, &target)) < 1e-12);
    assert!(mg.lrs.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));

    // only theta_K counts, inner gradients detached: d theta_K / d theta_0 = I
    let mg = meta_gradient(&det, &params, &task, &meta(2), &[0.0, 0.0, 1.0], true).unwrap();
    let expect = plain_grad(&det, adapted.adapted(), &target);
    let d = max_diff(&mg.theta, &expect);
    assert!(d < 1e-10, "{d:e}");
}

#[test]
fn one_step_first_order_gradients_match_hand_derivation() {
    for style in [HeadStyle::AnchorFree, HeadStyle::AnchorBased] {
        let (det, params) = setup(style);
        let task = toy_task();
        let support = prepare(&det, &params, &task.support).unwrap();
        let target = prepare(&det, &params, &task.target).unwrap();
        let theta1 = adapt(&det, &params, &support, 1).unwrap().adapted().clone();
        let gs0 = plain_grad(&det, &params, &support);
        let gt0 = plain_grad(&det, &params, &target);
        let gt1 = plain_grad(&det, &theta1, &target);
        let gamma = [0.3, 0.7];
        let mg = meta_gradient(&det, &params, &task, &meta(1), &gamma, true).unwrap();

        let theta: Vec<Tensor<f64>> = gt0
            .iter()
            .zip(&gt1)
            .map(|(a, b)| a.zip_map(b, |u, v| gamma[0] * u + gamma[1] * v).unwrap())
            .collect();
        let d = max_diff(&mg.theta, &theta);
        assert!(d < 1e-12, "{style} theta: {d:e}");

        // d/d alpha of -alpha * g_s, seen through the target loss at theta_1
        let lrs: Vec<Tensor<f64>> = params
            .lrs()
            .iter()
            .zip(gs0.iter().zip(&gt1))
            .map(|(lr, (s, t))| {
                let per = s.numel() / lr.numel();
                let mut acc = vec![0.0; lr.numel()];
                for (i, (a, b)) in s.data().iter().zip(t.data()).enumerate() {
                    acc[i / per] -= gamma[1] * a * b;
                }
                Tensor::new(lr.shape().to_vec(), acc).unwrap()
            })
            .collect();
        let d = max_diff(&mg.lrs, &lrs);
        assert!(d < 1e-12, "{style} rates: {d:e}");
    }
}

#[test]
fn one_kernel_rate_moves_only_that_kernel() {
    let (det, params) = setup(HeadStyle::AnchorBased);
    let zero = params.fill_lrs(0.0);
    let trainable = zero.trainable();
    let (slot, &entry) = trainable
        .iter()
        .enumerate()
        .find(|(_, &i)| {
            zero.entries()[i].weight.shape().len() == 4 && zero.entries()[i].weight.shape()[0] > 1
        })
        .expect("a multi-kernel convolution");
    let mut lrs = zero.lrs();
    let kernel = 1;
    lrs[slot] = Tensor::from_fn(lrs[slot].shape().to_vec(), |c| {
        if c == kernel {
            0.5
        } else {
            0.0
        }
    });
    let params = zero.with_lrs(lrs).unwrap();
    let support = prepare(&det, &params, &toy_task().support).unwrap();
    let next = adapt(&det, &params, &support, 1).unwrap().adapted().clone();

    for (i, (a, b)) in params.entries().iter().zip(next.entries()).enumerate() {
        if i != entry {
            assert_eq!(a.weight, b.weight, "{} moved", a.name);
            continue;
        }
        let per = a.weight.numel() / a.weight.shape()[0];
        let changed: Vec<usize> = a
            .weight
            .data()
            .iter()
            .zip(b.weight.data())
            .enumerate()
            .filter(|(_, (u, v))| u != v)
            .map(|(j, _)| j / per)
            .collect();
        assert!(!changed.is_empty());
        assert!(
            changed.iter().all(|&c| c == kernel),
            "kernels {changed:?} moved"
        );
    }
}

#[test]
fn frozen_entries_are_untouched_by_outer_updates() {
    let mut cfg = toy_config(HeadStyle::AnchorFree, true);
    cfg.frozen_prefix_layers = 1;
    let det = Detector::new(cfg.clone()).unwrap();
    let params = live_params(&cfg, 0.05);
    let frozen: Vec<usize> = (0..params.len())
        .filter(|&i| !params.entries()[i].trainable)
        .collect();
    assert!(!frozen.is_empty());
    let mc = MetaConfig {
        inner_steps: 2,
        epochs: 2,
        first_order_epochs: 0,
        outer_lr: 1e-2,
        ..Default::default()
    };
    let mut adam = AdamState::new(&outer_variables(&params, true));
    let mut cur = params.clone();
    for epoch in 0..2 {
        cur = meta_step(&det, &cur, &[toy_task()], &mc, &mut adam, epoch)
            .unwrap()
            .params;
    }
    for &i in &frozen {
        let (a, b) = (&params.entries()[i].weight, &cur.entries()[i].weight);
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    assert!(params
        .trainable()
        .iter()
        .any(|&i| params.entries()[i].weight != cur.entries()[i].weight));
}

#[test]
fn second_order_terms_change_the_gradient() {
    let (det, params) = setup(HeadStyle::AnchorFree);
    let task = toy_task();
    let gamma = [0.2, 0.3, 0.5];
    let full = meta_gradient(&det, &params, &task, &meta(2), &gamma, false).unwrap();
    let first = meta_gradient(&det, &params, &task, &meta(2), &gamma, true).unwrap();
    assert_eq!(full.loss, first.loss);
    assert!(max_diff(&full.theta, &first.theta) > 1e-8);
}
