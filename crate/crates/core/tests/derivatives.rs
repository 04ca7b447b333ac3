mod common;

use common::*;
use panel_qpe::kernels::{KernelSpec, SmootherSpec};
use panel_qpe::sqr_core::{sqr_eval, Want};
use panel_qpe::EvalSpec;
use rand::Rng;

fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let num = analytic.iter().zip(fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let den = analytic.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    num / den.max(1e-12)
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let k = KernelSpec::epanechnikov(1);
    let sm = SmootherSpec::fourth_order();
    let mut r = rng(4242);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for pt in 0..100 {
        let p = random_panel(3, 25, r.random_range(-2.0..2.0), 1000 + pt);
        let x0 = r.random_range(-0.8..0.8);
        let tau = r.random_range(0.1..0.9);
        let h = r.random_range(0.4..1.0);
        let b = r.random_range(0.3..1.5);
        let s = EvalSpec::new(vec![x0], tau, h, b, vec![-1.0], vec![1.0]).unwrap();
        let theta: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let ev = |th: &[f64], w: Want| sqr_eval(&th[..3], &th[3..], &p, &s, &k, &sm, w);

        let at = ev(&theta, Want::Hessian);
        let fd_g: Vec<f64> = (0..4)
            .map(|c| central_diff(|th| ev(th, Want::Value).value, &theta, c, 1e-5))
            .collect();
        worst_g = worst_g.max(rel_err(&at.gradient(), &fd_g));

        let analytic_h: Vec<f64> = at.dense_hessian().iter().copied().collect();
        let mut fd_h = vec![0.0; 16];
        for c in 0..4 {
            for row in 0..4 {
                // column-major, as nalgebra iterates
                fd_h[c * 4 + row] = central_diff(|th| ev(th, Want::Gradient).gradient()[row], &theta, c, 1e-5);
            }
        }
        worst_h = worst_h.max(rel_err(&analytic_h, &fd_h));
    }
    assert!(worst_g < 1e-6, "gradient rel err {worst_g:e}");
    assert!(worst_h < 1e-5, "hessian rel err {worst_h:e}");
}

#[test]
fn symmetric_configuration_has_zero_gradient() {
    // residuals +-0.3 at each of z = +-0.5 and +-0.6 at z = +-0.2, at the median
    let x = vec![-0.5, 0.5, -0.5, 0.5, -0.2, 0.2, -0.2, 0.2];
    let y = vec![0.3, 0.3, -0.3, -0.3, 0.6, 0.6, -0.6, -0.6];
    let p = panel_qpe::PanelData::from_dense(1, 8, 1, y, x).unwrap();
    let s = EvalSpec::new(vec![0.0], 0.5, 1.0, 0.5, vec![-1.0], vec![1.0]).unwrap();
    let k = KernelSpec::epanechnikov(1);
    let ev = sqr_eval(&[0.0], &[0.0], &p, &s, &k, &SmootherSpec::fourth_order(), Want::Gradient);
    assert!(ev.grad_eta[0].abs() < 1e-15);
    assert!(ev.grad_beta[0].abs() < 1e-15);
}

#[test]
fn smoother_matches_closed_form() {
    let sm = SmootherSpec::fourth_order();
    for k in 0..=40 {
        let v = -1.2 + 0.06 * k as f64;
        assert!((sm.g(v) - g4(v)).abs() < 1e-14);
        assert!((sm.G(v) - big_g4(v)).abs() < 1e-14);
        assert!((sm.derivs(v).1 - g4_prime(v)).abs() < 1e-12);
    }
    let fd = (sm.g(0.3 + 1e-5) - sm.g(0.3 - 1e-5)) / 2e-5;
    assert!((sm.derivs(0.3).1 - fd).abs() < 1e-7);
}
