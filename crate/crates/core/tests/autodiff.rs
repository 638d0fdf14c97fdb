#![allow(clippy::needless_range_loop)]

use ergodic::autodiff::{evaluate_with_gradient, Scalar};
use ergodic::dual::Dual;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Expr {
    X(usize),
    C(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// `a / (1 + b^2)`
    Div(Box<Expr>, Box<Expr>),
    /// `exp(0.3 a)`
    Exp(Box<Expr>),
    /// `ln(1 + a^2)`
    Ln(Box<Expr>),
    Powi(Box<Expr>, i32),
    Neg(Box<Expr>),
}

impl Expr {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Expr::X(i) => x[*i],
            Expr::C(c) => S::constant(*c),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / (b.eval(x).square() + 1.0),
            Expr::Exp(a) => (a.eval(x) * 0.3).exp(),
            Expr::Ln(a) => (a.eval(x).square() + 1.0).ln(),
            Expr::Powi(a, k) => a.eval(x).powi(*k),
            Expr::Neg(a) => -a.eval(x),
        }
    }
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(Expr::X),
        (-2.0f64..2.0).prop_map(Expr::C),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(a.into(), b.into())),
            inner.clone().prop_map(|a| Expr::Exp(a.into())),
            inner.clone().prop_map(|a| Expr::Ln(a.into())),
            (inner.clone(), 2i32..4).prop_map(|(a, k)| Expr::Powi(a.into(), k)),
            inner.prop_map(|a| Expr::Neg(a.into())),
        ]
    })
}

proptest! {
    #[test]
    fn reverse_mode_matches_central_differences(
        e in expr(),
        x in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let (v, g) = evaluate_with_gradient(|a| e.eval(a), &x).unwrap();
        prop_assert_eq!(v.to_bits(), e.eval(&x).to_bits());
        let h = 1e-6;
        for k in 0..3 {
            let mut p = x.clone();
            let mut m = x.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (e.eval(&p) - e.eval(&m)) / (2.0 * h);
            let tol = 1e-5 * (1.0 + fd.abs().max(g[k].abs()));
            prop_assert!((fd - g[k]).abs() <= tol, "coord {}: fd {} vs {}", k, fd, g[k]);
        }
    }

    #[test]
    fn forward_mode_matches_reverse_mode(
        e in expr(),
        x in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let (v, g) = evaluate_with_gradient(|a| e.eval(a), &x).unwrap();
        let dx: Vec<Dual<3>> = x.iter().enumerate().map(|(i, v)| Dual::variable(*v, i)).collect();
        let out = e.eval(&dx);
        prop_assert!((out.value - v).abs() <= 1e-12 * (1.0 + v.abs()));
        for k in 0..3 {
            prop_assert!((out.tangent[k] - g[k]).abs() <= 1e-9 * (1.0 + g[k].abs()));
        }
    }
}

#[test]
fn detached_subexpression_contributes_value_only() {
    let (v, g) = evaluate_with_gradient(|x| x[0] * x[0].detach() + x[1], &[3.0, 1.0]).unwrap();
    assert_eq!(v, 10.0);
    assert_eq!(g, vec![3.0, 1.0]);
}
