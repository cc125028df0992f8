//! Finite-difference checks of every tape op and of the composed models.

use fusionkit::autodiff::{check_gradients, grad_check, GradCheckConfig, Graph, Tensor, Var};
use fusionkit::checks::GradCheckSuite;
use fusionkit::decoders::DecoderKind;
use fusionkit::fusion::FusionStrategy;
use fusionkit::loss::{uncertainty_loss, LossKind};
use fusionkit::Result;
use proptest::prelude::*;

const OP_TOL: f64 = 1e-6;

fn strict() -> GradCheckConfig {
    GradCheckConfig {
        step: 1e-5,
        tol: OP_TOL,
        ..GradCheckConfig::default()
    }
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |data| Tensor::new(rows, cols, data).unwrap())
}

/// Contracts an arbitrary node to a scalar with fixed pseudo-random weights
/// so no output entry is ignored by the check.
fn project(g: &mut Graph, x: Var) -> Result<Var> {
    let (r, c) = g.value(x).shape();
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect();
    let w = g.constant(Tensor::new(r, c, w)?);
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

fn assert_passes(report: fusionkit::autodiff::GradCheckReport) {
    assert!(report.passed(), "max rel error {} in {:?}", report.max_rel_error(), report.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_adjoint((m, k, n) in (1usize..=8, 1usize..=8, 1usize..=8), seed in any::<u64>()) {
        let a = Tensor::new(m, k, (0..m * k).map(|i| ((seed as usize ^ i) % 17) as f64 / 4.25 - 2.0).collect()).unwrap();
        let b = Tensor::new(k, n, (0..k * n).map(|i| ((seed as usize).wrapping_mul(31) ^ i) as f64 % 4.0 - 2.0).collect()).unwrap();
        let report = grad_check(|g, p| { let y = g.matmul(p[0], p[1])?; project(g, y) }, &[a, b], strict()).unwrap();
        assert_passes(report);
    }

    #[test]
    fn elementwise_adjoints(x in tensor(3, 4), y in tensor(3, 4)) {
        let report = grad_check(|g, p| {
            let s = g.add(p[0], p[1])?;
            let d = g.sub(s, p[1])?;
            let m = g.mul(d, p[1])?;
            let t = g.tanh(m);
            let e = g.exp(t);
            let sc = g.scale(e, -0.7);
            let off = g.add_scalar(sc, 3.0);
            let l = g.log(off)?;
            project(g, l)
        }, &[x, y], strict()).unwrap();
        assert_passes(report);
    }

    #[test]
    fn softmax_family_adjoints(x in tensor(4, 5)) {
        let report = grad_check(|g, p| {
            let s = g.softmax_rows(p[0]);
            let l = g.log_softmax_rows(p[0]);
            let a = project(g, s)?;
            let b = project(g, l)?;
            g.add(a, b)
        }, &[x], strict()).unwrap();
        assert_passes(report);
    }

    #[test]
    fn structural_adjoints(x in tensor(3, 2), y in tensor(3, 4), bias in tensor(1, 6)) {
        let report = grad_check(|g, p| {
            let c = g.concat_cols(&[p[0], p[1]])?;
            let c = g.add_row(c, p[2])?;
            let left = g.slice_cols(c, 1, 5)?;
            let m = g.mean(left)?;
            let s = g.sum(c);
            let pr = project(g, left)?;
            let a = g.add(m, s)?;
            g.add(a, pr)
        }, &[x, y, bias], strict()).unwrap();
        assert_passes(report);
    }

    #[test]
    fn softmax_rows_are_distributions(x in tensor(5, 6)) {
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax_rows(v);
        let out = g.value(s);
        for r in 0..out.rows() {
            let row = out.row_slice(r);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_backward_doubles(x in tensor(3, 3), w in tensor(3, 2)) {
        let mut g = Graph::new();
        let xv = g.param(x);
        let wv = g.param(w);
        let y = g.matmul(xv, wv).unwrap();
        let t = g.tanh(y);
        let s = g.softmax_rows(t);
        let root = project(&mut g, s).unwrap();
        g.backward(root).unwrap();
        let once = (g.grad(xv).clone(), g.grad(wv).clone());
        g.backward(root).unwrap();
        for (a, b) in once.0.data().iter().zip(g.grad(xv).data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
        for (a, b) in once.1.data().iter().zip(g.grad(wv).data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn forward_is_bit_deterministic(x in tensor(4, 3), w in tensor(3, 3)) {
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.matmul(xv, wv).unwrap();
            let s = g.softmax_rows(y);
            g.value(s).clone()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn sum_of_product_gradient_matches_differences() {
    let a = Tensor::from_rows(&[[0.3, -1.1, 0.7], [1.9, 0.2, -0.4]]).unwrap();
    let b = Tensor::from_rows(&[[1.0, 0.5], [-0.25, 2.0], [0.75, -1.5]]).unwrap();
    let report = grad_check(
        |g, p| {
            let y = g.matmul(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a, b],
        strict(),
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn corrupted_adjoint_is_caught() {
    // f(x) = sum(tanh(x)); the "adjoint" below forgets the square in 1 - tanh².
    let x = Tensor::row(vec![0.4, -0.9, 1.3]);
    let f = |p: &[Tensor]| Ok(p[0].data().iter().map(|v| v.tanh()).sum());
    let wrong = Tensor::row(x.data().iter().map(|v| 1.0 - v.tanh()).collect());
    let report = check_gradients(f, &[x.clone()], &[wrong], strict()).unwrap();
    assert!(!report.passed());
    assert!(report.max_rel_error() > 1e-2, "{}", report.max_rel_error());

    let right = Tensor::row(x.data().iter().map(|v| 1.0 - v.tanh().powi(2)).collect());
    assert!(check_gradients(f, &[x], &[right], strict()).unwrap().passed());
}

#[test]
fn uncertainty_gradient_at_unit_weights() {
    // rho = ln δ, so dL/drho1 = δ1 · dL/dδ1 = 1 · (-2 L_e/δ1³ + 1/(1+δ1)) = -1.5.
    let mut g = Graph::new();
    let le = g.param(Tensor::scalar(1.0));
    let lv = g.param(Tensor::scalar(2.0));
    let r1 = g.param(Tensor::scalar(0.0));
    let r2 = g.param(Tensor::scalar(0.0));
    let l = uncertainty_loss(&mut g, le, lv, r1, r2).unwrap();
    g.backward(l).unwrap();
    assert!((g.grad(r1).item().unwrap() + 1.5).abs() < 1e-12);
    // dL/dL_e = 1/δ1², dL/dL_v = 1/(2δ2²)
    assert!((g.grad(le).item().unwrap() - 1.0).abs() < 1e-15);
    assert!((g.grad(lv).item().unwrap() - 0.5).abs() < 1e-15);

    let params = vec![
        Tensor::scalar(0.8),
        Tensor::scalar(1.7),
        Tensor::scalar(0.3),
        Tensor::scalar(-0.6),
    ];
    let report = grad_check(|g, p| uncertainty_loss(g, p[0], p[1], p[2], p[3]), &params, strict()).unwrap();
    assert_passes(report);
}

#[test]
fn every_model_combination_passes() {
    let suite = GradCheckSuite::default();
    for strategy in FusionStrategy::ALL {
        for decoder in DecoderKind::ALL {
            for loss in LossKind::ALL {
                let c = suite.check(strategy, decoder, loss).unwrap();
                assert!(c.report.passed(), "{}: {}", c.label(), c.report.max_rel_error());
            }
        }
    }
}
