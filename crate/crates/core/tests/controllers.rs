mod common;

use common::{kink_free, rng, scalarize};
use ppro::autodiff::{grad_check, Adam, AdamConfig, Tape};
use ppro::controllers::{
    decide_break, head_forward, input_width, l2u_scan, l2u_select, loss_l2b, loss_l2b_value, loss_l2u_value, loss_weight,
    loss_weight_value, merged_controller_loss, normalized_errors, ControllerParams, ControllerVars, Head,
};
use ppro::Matrix;
use proptest::prelude::*;

#[test]
fn break_loss_vanishes_when_continue_matches_normalized_error() {
    let c = [0.4, 0.8, 1.2, 1.6];
    let target = normalized_errors(&c);
    for (a, b) in target.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(loss_l2b_value(&c, &target).abs() < 1e-15);
    // every term off by 0.1
    let shifted: Vec<f64> = [0.1, 0.4333333333333333, 0.5666666666666667, 0.9].to_vec();
    assert!((loss_l2b_value(&c, &shifted) - 0.1).abs() < 1e-12);
}

#[test]
fn degenerate_errors_normalize_to_zero() {
    assert_eq!(normalized_errors(&[0.7, 0.7, 0.7]), vec![0.0; 3]);
    assert_eq!(normalized_errors(&[2.0]), vec![0.0]);
}

#[test]
fn update_loss_rewards_updating_on_improvement() {
    // updating where the error dropped lowers the loss
    let better = loss_l2u_value(&[vec![0.9]], &[vec![0.2]], &[vec![0.6]]);
    let worse = loss_l2u_value(&[vec![0.9]], &[vec![0.8]], &[vec![0.6]]);
    assert!((better - 0.9 * -0.4).abs() < 1e-12);
    assert!((worse - 0.9 * 0.2).abs() < 1e-12);
}

#[test]
fn weight_objective_peaks_at_half_error_over_lambda() {
    let c = [0.4, 0.8, 1.2, 1.6];
    let lambda1 = 1.0;
    let peak: Vec<f64> = c.iter().map(|v| v / (2.0 * lambda1)).collect();
    let best = loss_weight_value(&peak, &c, lambda1);
    let mean_sq = c.iter().map(|v| v * v).sum::<f64>() / 4.0;
    assert!((best - mean_sq / (4.0 * lambda1)).abs() < 1e-12);
    for i in 0..4 {
        for d in [-0.01, 0.01] {
            let mut w = peak.clone();
            w[i] += d;
            assert!(loss_weight_value(&w, &c, lambda1) < best);
        }
    }
}

/// Gradient ascent on `L_w` through the weight head, with one-hot inputs so
/// each node's weight is free.
fn fit_weight_head(c: &[f64], lambda1: f64) -> Vec<f64> {
    let m = c.len();
    let mut params = ControllerParams::init(1, 8, &mut rng(3));
    let mut input = Matrix::zeros(m, input_width(1));
    for i in 0..m {
        input[(i, i)] = 1.0;
    }
    let mut adam = Adam::new(AdamConfig::new(0.01, 0.0));
    for _ in 0..4000 {
        let mut t = Tape::new();
        let vars = params.load(&mut t, true);
        let x = t.constant(input.clone());
        let w = head_forward(&mut t, &vars, x, Head::Weight);
        let lw = loss_weight(&mut t, w, c, lambda1);
        let lp = t.constant(Matrix::scalar(0.0));
        let loss = merged_controller_loss(&mut t, lp, lw, 1.0);
        let g = t.backward(loss).unwrap();
        let grads: Vec<Matrix> = vars_list(&vars).iter().map(|&v| g.wrt(v)).collect();
        adam.step(&mut params.tensors_mut(), &grads);
    }
    params.evaluate(&input, Head::Weight)
}

fn vars_list(v: &ControllerVars) -> [ppro::autodiff::Var; 6] {
    [v.shared.0, v.shared.1, v.prop.0, v.prop.1, v.weight.0, v.weight.1]
}

#[test]
fn weight_head_converges_to_fixed_point() {
    for (lambda1, scale) in [(1.0, 1.0), (0.1, 0.1)] {
        let c: Vec<f64> = [0.4, 0.8, 1.2, 1.6].iter().map(|v| v * scale).collect();
        let w = fit_weight_head(&c, lambda1);
        for (wi, ci) in w.iter().zip(&c) {
            let target = ci / (2.0 * lambda1);
            assert!((wi - target).abs() < 1e-3, "λ1={lambda1}: {w:?}");
        }
    }
}

#[test]
fn merged_loss_gradient_reaches_shared_layer() {
    let width = input_width(2);
    let shapes = [(6, width), (width, 5), (1, 5), (5, 1), (1, 1), (5, 1), (1, 1)];
    let c = [0.3, 1.1, 0.2, 0.9, 2.0, 0.4];
    for instance in 0..5 {
        let params = kink_free(&shapes, 200 + instance);
        let report = grad_check(
            |t, v| {
                let vars = ControllerVars {
                    shared: (v[1], v[2]),
                    prop: (v[3], v[4]),
                    weight: (v[5], v[6]),
                };
                let p = head_forward(t, &vars, v[0], Head::Propagation);
                let w = head_forward(t, &vars, v[0], Head::Weight);
                let lp = loss_l2b(t, &c, p);
                let lw = loss_weight(t, w, &c, 0.5);
                merged_controller_loss(t, lp, lw, 2.0)
            },
            &params,
            1e-4,
            1e-3,
        );
        assert!(report.passed(), "instance {instance}: {}", report.worst());
    }

    // the shared layer sees both heads
    let params = ControllerParams::init(2, 5, &mut rng(4));
    let input = common::random_matrix(6, width, &mut rng(5));
    let mut t = Tape::new();
    let vars = params.load(&mut t, true);
    let x = t.constant(input);
    let w = head_forward(&mut t, &vars, x, Head::Weight);
    let lw = loss_weight(&mut t, w, &c, 0.5);
    let lp = t.constant(Matrix::scalar(0.0));
    let loss = merged_controller_loss(&mut t, lp, lw, 1.0);
    let g = t.backward(loss).unwrap();
    assert!(g.wrt(vars.shared.0).as_slice().iter().any(|&v| v != 0.0));
    assert!(g.wrt(vars.prop.0).as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn heads_are_differentiable_alone() {
    let width = input_width(1);
    let shapes = [(4, width), (width, 3), (1, 3), (3, 1), (1, 1), (3, 1), (1, 1)];
    for head in [Head::Propagation, Head::Weight] {
        let params = kink_free(&shapes, 9);
        let report = grad_check(
            |t, v| {
                let vars = ControllerVars {
                    shared: (v[1], v[2]),
                    prop: (v[3], v[4]),
                    weight: (v[5], v[6]),
                };
                let out = head_forward(t, &vars, v[0], head);
                scalarize(t, out, 1)
            },
            &params,
            1e-4,
            1e-3,
        );
        assert!(report.passed(), "{head:?}: {}", report.worst());
    }
}

#[test]
fn l2u_scan_sees_the_running_best() {
    let h: Vec<Matrix> = (0..4).map(|k| Matrix::filled(2, 1, k as f64)).collect();
    let mut seen = Vec::new();
    let (best, steps) = l2u_scan(&h, &[0, 1], 0.5, |k, best, steps| {
        seen.push((k, best[(0, 0)], steps[0]));
        // node 0 updates at steps 1 and 3, node 1 never
        vec![if k == 2 { 0.1 } else { 0.9 }, 0.0]
    });
    assert_eq!(seen, vec![(1, 0.0, 0), (2, 1.0, 1), (3, 1.0, 1)]);
    assert_eq!(steps, vec![3, 0]);
    assert_eq!(best.as_slice(), &[3.0, 0.0]);
}

#[test]
fn checkpoint_names_round_trip() {
    let params = ControllerParams::init(3, 4, &mut rng(6));
    assert_eq!(ControllerParams::from_named(&params.named()).unwrap(), params);
}

fn probs_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..10).prop_flat_map(|(steps, n)| proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, n), steps))
}

proptest! {
    #[test]
    fn normalized_errors_are_affine_invariant(
        c in proptest::collection::vec(-10.0..10.0f64, 2..20),
        a in 0.1..10.0f64,
        b in -5.0..5.0f64,
    ) {
        let base = normalized_errors(&c);
        let moved: Vec<f64> = c.iter().map(|v| a * v + b).collect();
        for (x, y) in base.iter().zip(normalized_errors(&moved)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(base.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn break_steps_grow_with_epsilon(probs in probs_strategy(), e1 in 0.0..1.0f64, e2 in 0.0..1.0f64) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = decide_break(&probs, lo);
        let b = decide_break(&probs, hi);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        prop_assert!(b.iter().all(|&l| (1..=probs.len()).contains(&l)));
    }

    #[test]
    fn l2u_picks_the_last_confident_step(probs in probs_strategy(), eps in 0.0..1.0f64) {
        let n = probs[0].len();
        let h: Vec<Matrix> = (0..=probs.len()).map(|k| Matrix::filled(n, 2, k as f64)).collect();
        let (best, steps) = l2u_select(&probs, &h, eps);
        for i in 0..n {
            let want = (1..=probs.len()).rev().find(|&k| probs[k - 1][i] > eps).unwrap_or(0);
            prop_assert_eq!(steps[i], want);
            prop_assert_eq!(best[(i, 0)], want as f64);
        }
    }
}
