use proptest::prelude::*;

use super::*;

fn field(h: usize, w: usize, v: &[f64]) -> ScalarField {
    ScalarField::new(h, w, v.to_vec()).unwrap()
}

/// Independent central-difference gradient of a plain function.
fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn add_constants() {
    let tape = Tape::new();
    let a = tape.constant(ScalarField::filled(2, 3, 2.0));
    let s = a + 3.0;
    assert!(s.field().values().iter().all(|&v| v == 5.0));
}

#[test]
fn sqrt_value_and_gradient() {
    let tape = Tape::new();
    let x = tape.param(4.0);
    let y = x.sqrt();
    assert_eq!(y.scalar(), 2.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.scalar(x), 0.25);
}

#[test]
fn sqrt_clamps_negative_argument() {
    let tape = Tape::new();
    let x = tape.param(-1.0);
    let y = x.sqrt();
    assert_eq!(y.scalar(), 0.0);
    assert_eq!(tape.backward(y).unwrap().scalar(x), 0.0);
}

#[test]
fn abs_smooth_at_zero() {
    let tape = Tape::new();
    let x = tape.param(0.0);
    let y = x.abs_smooth();
    assert!((y.scalar() - 1e-6).abs() < 1e-18);
    assert_eq!(tape.backward(y).unwrap().scalar(x), 0.0);
}

#[test]
fn div_guards_tiny_denominator() {
    let tape = Tape::new();
    let a = tape.param(1.0);
    let b = tape.param(0.0);
    let y = a / b;
    assert_eq!(y.scalar(), 1e12);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.scalar(b), 0.0);
}

#[test]
fn mean_examples() {
    let tape = Tape::new();
    let a = tape.constant(ScalarField::filled(4, 4, 2.0));
    assert_eq!(a.mean().scalar(), 2.0);
    let b = tape.param(field(2, 2, &[0.0, 0.0, 0.0, 4.0]));
    let m = b.mean();
    assert_eq!(m.scalar(), 1.0);
    let g = tape.backward(m).unwrap().field(b);
    assert!(g.values().iter().all(|&v| v == 0.25));
}

#[test]
fn diff_of_constant_is_zero() {
    let tape = Tape::new();
    let a = tape.constant(ScalarField::filled(3, 4, 7.0));
    for axis in [Axis::U, Axis::V] {
        assert!(a.diff(axis).field().values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn diff_forward_with_zero_padding() {
    let tape = Tape::new();
    let a = tape.constant(field(2, 4, &[0., 1., 3., 6., 0., 1., 3., 6.]));
    let d = a.diff(Axis::U).field();
    assert_eq!(d.values(), &[1., 2., 3., 0., 1., 2., 3., 0.]);
    let dv = a.diff(Axis::V).field();
    assert!(dv.values().iter().all(|&v| v == 0.0));
}

#[test]
fn diff_backward_matches_central_differences() {
    let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
    let tape = Tape::new();
    let xv = tape.param(field(3, 4, &x));
    let loss = (xv.diff(Axis::U) * 1.5 + xv.diff(Axis::V).square()).sum();
    let analytic = tape.backward(loss).unwrap().field(xv);
    let numeric = central_diff(
        |p| {
            let f = field(3, 4, p);
            let du = ops::forward_diff(&f, Axis::U);
            let dv = ops::forward_diff(&f, Axis::V);
            du.values().iter().map(|v| 1.5 * v).sum::<f64>()
                + dv.values().iter().map(|v| v * v).sum::<f64>()
        },
        &x,
        1e-4,
    );
    for (a, n) in analytic.values().iter().zip(&numeric) {
        assert!((a - n).abs() < 1e-8 + 1e-6 * n.abs(), "{a} vs {n}");
    }
    // telescoping pattern of the plain sum
    let tape = Tape::new();
    let xv = tape.param(field(2, 4, &x[..8]));
    let g = tape.backward(xv.diff(Axis::U).sum()).unwrap().field(xv);
    assert_eq!(g.values(), &[-1., 0., 0., 1., -1., 0., 0., 1.]);
}

#[test]
fn diff_rejects_scalar() {
    let tape = Tape::new();
    let s = tape.scalar(1.0);
    let _ = s.diff(Axis::U);
    assert!(matches!(tape.fault(), Some(EngineError::Dimension { op: "diff", .. })));
}

#[test]
fn bilinear_identity_grid() {
    let tape = Tape::new();
    let f = field(3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    let src = tape.constant(f.clone());
    let u = tape.constant(ScalarField::from_fn(3, 3, |_, c| c as f64));
    let v = tape.constant(ScalarField::from_fn(3, 3, |r, _| r as f64));
    let (out, mask) = src.sample_bilinear(u, v);
    assert_eq!(out.field(), f);
    assert!(mask.values().iter().all(|&m| m == 1.0));
}

#[test]
fn bilinear_half_pixel_midpoint() {
    let tape = Tape::new();
    let src = tape.constant(field(2, 2, &[0., 2., 0., 2.]));
    let u = tape.constant(ScalarField::from_fn(2, 2, |_, c| c as f64 + 0.5));
    let v = tape.constant(ScalarField::from_fn(2, 2, |r, _| r as f64));
    let (out, mask) = src.sample_bilinear(u, v);
    let out = out.field();
    assert_eq!(out.get(0, 0), 1.0);
    assert_eq!(out.get(1, 0), 1.0);
    assert_eq!(mask.values(), &[1., 0., 1., 0.]);
    assert_eq!(out.get(0, 1), 0.0);
}

#[test]
fn bilinear_coordinate_gradient_matches_central_differences() {
    let src: Vec<f64> = (0..25).map(|i| ((i * 37 % 11) as f64) / 10.0).collect();
    let us: Vec<f64> = (0..25).map(|i| 0.37 + ((i * 13) % 31) as f64 / 10.0).collect();
    let vs: Vec<f64> = (0..25).map(|i| 0.23 + ((i * 17) % 29) as f64 / 10.0).collect();
    let weights: Vec<f64> = (0..25).map(|i| 1.0 + (i % 3) as f64).collect();
    let tape = Tape::new();
    let s = tape.param(field(5, 5, &src));
    let u = tape.param(field(5, 5, &us));
    let v = tape.param(field(5, 5, &vs));
    let wv = tape.constant(field(5, 5, &weights));
    let (out, _) = s.sample_bilinear(u, v);
    let loss = (out * wv).sum();
    let grads = tape.backward(loss).unwrap();
    let eval = |uu: &[f64], vv: &[f64]| {
        let (o, _) = ops::bilinear_forward(&field(5, 5, &src), &field(5, 5, uu), &field(5, 5, vv));
        o.values().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
    };
    let nu = central_diff(|p| eval(p, &vs), &us, 1e-6);
    let nv = central_diff(|p| eval(&us, p), &vs, 1e-6);
    for (a, n) in grads.field(u).values().iter().zip(&nu) {
        assert!(relative_error(*a, *n, 1e-8) < 1e-4, "{a} vs {n}");
    }
    for (a, n) in grads.field(v).values().iter().zip(&nv) {
        assert!(relative_error(*a, *n, 1e-8) < 1e-4, "{a} vs {n}");
    }
}

#[test]
fn quadratic_gradient() {
    let tape = Tape::new();
    let x = tape.param(ScalarField::filled(3, 4, 3.0));
    let g = tape.backward(x.square().mean()).unwrap().field(x);
    assert!(g.values().iter().all(|&v| (v - 6.0 / 12.0).abs() < 1e-15));
}

#[test]
fn disconnected_leaf_has_zero_gradient() {
    let tape = Tape::new();
    let x = tape.param(ScalarField::filled(2, 2, 1.0));
    let y = tape.param(ScalarField::filled(2, 2, 5.0));
    let grads = tape.backward(x.mean()).unwrap();
    assert_eq!(grads.field(y), ScalarField::zeros(2, 2));
    assert_eq!(grads.param_count(), 2);
}

#[test]
fn backward_rejects_field_loss() {
    let tape = Tape::new();
    let x = tape.param(ScalarField::filled(2, 2, 1.0));
    assert!(matches!(tape.backward(x * 2.0), Err(EngineError::Contract(_))));
}

#[test]
fn shape_mismatch_is_recorded() {
    let tape = Tape::new();
    let a = tape.param(ScalarField::filled(2, 2, 1.0));
    let b = tape.param(ScalarField::filled(3, 2, 1.0));
    let c = (a + b).mean();
    assert!(matches!(
        tape.backward(c),
        Err(EngineError::Dimension { op: "add", .. })
    ));
}

#[test]
fn non_finite_reports_op() {
    let tape = Tape::new();
    let a = tape.param(1000.0);
    let _ = a.exp();
    assert!(matches!(
        tape.fault(),
        Some(EngineError::NonFinite { op: "exp", .. })
    ));
}

#[test]
fn grad_check_linear_is_exact() {
    let leaves = vec![Value::Field(ScalarField::from_fn(4, 4, |r, c| (r * 4 + c) as f64 * 0.1))];
    let report = grad_check(|_, x| x[0].mean(), &leaves, &GradCheckConfig::default()).unwrap();
    assert!(report.max_rel_error < 1e-10, "{}", report.max_rel_error);
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let counter = Cell::new(0.0);
    let leaves = vec![Value::Scalar(1.0)];
    let res = grad_check(
        |_, x| {
            counter.set(counter.get() + 1.0);
            x[0] * counter.get()
        },
        &leaves,
        &GradCheckConfig::default(),
    );
    assert!(matches!(res, Err(EngineError::Contract(_))));
}

#[test]
fn grad_check_subsamples() {
    let leaves = vec![Value::Field(ScalarField::filled(4, 4, 0.5))];
    let cfg = GradCheckConfig {
        max_samples_per_leaf: Some(5),
        ..GradCheckConfig::default()
    };
    let report = grad_check(|_, x| x[0].square().sum(), &leaves, &cfg).unwrap();
    assert_eq!(report.leaves[0].checked, 5);
}

#[test]
fn backward_is_linear() {
    let x0 = ScalarField::from_fn(3, 3, |r, c| 0.3 + 0.2 * r as f64 - 0.1 * c as f64);
    let grad_of = |a: f64, b: f64| {
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        let l1 = x.square().mean();
        let l2 = (x.exp() * x.diff(Axis::U)).sum();
        let loss = l1 * a + l2 * b;
        tape.backward(loss).unwrap().field(x)
    };
    let g1 = grad_of(1.0, 0.0);
    let g2 = grad_of(0.0, 1.0);
    let g = grad_of(2.5, -0.7);
    for i in 0..9 {
        let expect = 2.5 * g1.values()[i] - 0.7 * g2.values()[i];
        assert!((g.values()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn forward_is_reproducible() {
    let x0 = ScalarField::from_fn(4, 5, |r, c| ((r * 5 + c) as f64).sin());
    let run = || {
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        (x.softplus() * x.box3() + x.cos()).mean().scalar()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn box3_of_constant_is_constant() {
    let tape = Tape::new();
    let a = tape.constant(ScalarField::filled(3, 5, 2.0));
    assert!(a
        .box3()
        .field()
        .values()
        .iter()
        .all(|&v| (v - 2.0).abs() < 1e-15));
}

fn smooth_field(h: usize, w: usize) -> impl Strategy<Value = ScalarField> {
    proptest::collection::vec(0.2f64..1.5, h * w).prop_map(move |v| ScalarField::new(h, w, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unary_primitives_pass_grad_check(x in smooth_field(3, 4)) {
        let leaves = vec![Value::Field(x)];
        let report = grad_check(
            |_, v| {
                let x = v[0];
                (x.sqrt() + x.abs_smooth() * 0.5 + x.exp() * 0.1 + x.softplus()
                    + x.sin() - x.cos() + x.square() + (-x).abs() + x.recip())
                .mean()
            },
            &leaves,
            &GradCheckConfig::default(),
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-3, "{:?}", report);
    }

    #[test]
    fn binary_primitives_pass_grad_check(a in smooth_field(3, 3), b in smooth_field(3, 3), s in 0.3f64..2.0) {
        // keep min/max away from ties
        let b = b.zip_map(&a, |bv, av| if (bv - av).abs() < 0.05 { bv + 0.1 } else { bv });
        let leaves = vec![Value::Field(a), Value::Field(b), Value::Scalar(s)];
        let report = grad_check(
            |_, v| {
                let (a, b, s) = (v[0], v[1], v[2]);
                ((a + b) * s + (a - b) * (a / b) + a.min(b) * 2.0 + a.max(b) + (a * s).clamp(-10.0, 10.0))
                    .mean()
            },
            &leaves,
            &GradCheckConfig::default(),
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-3, "{:?}", report);
    }

    #[test]
    fn stencil_primitives_pass_grad_check(a in smooth_field(4, 5)) {
        let leaves = vec![Value::Field(a)];
        let report = grad_check(
            |_, v| {
                let a = v[0];
                (a.box3().square() + a.diff(Axis::U).square() * 3.0 + a.diff(Axis::V) * a).sum()
            },
            &leaves,
            &GradCheckConfig::default(),
        ).unwrap();
        prop_assert!(report.max_rel_error < 1e-3, "{:?}", report);
    }
}
