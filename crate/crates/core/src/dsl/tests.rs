use proptest::prelude::*;

use super::*;

fn field(src: &[&str]) -> VectorField {
    VectorField::parse(src, "test").unwrap()
}

fn grushin() -> SdeModel {
    SdeModel::new("grushin", field(&["0", "0"]), vec![field(&["1", "0"]), field(&["0", "x1"])]).unwrap()
}

fn picard() -> SdeModel {
    SdeModel::new(
        "picard",
        field(&["0", "0", "0"]),
        vec![field(&["1", "0", "0"]), field(&["0", "1", "x1"])],
    )
    .unwrap()
}

#[test]
fn parses_projection() {
    let e = parse_field_expr("x1", 2).unwrap();
    assert_eq!(e.expr(), &Expr::Var(0));
    assert_eq!(e.eval::<f64, f64>(&[4.5, -1.0]).unwrap(), 4.5);
}

#[test]
fn evaluates_with_precedence() {
    let e = parse_field_expr("sin(x1)*x2 + 3", 2).unwrap();
    assert_eq!(e.eval::<f64, f64>(&[0.0, 5.0]).unwrap(), 3.0);
    let p = parse_field_expr("2 + 3*x1^2 - -x2/4", 2).unwrap();
    assert_eq!(p.eval::<f64, f64>(&[2.0, 8.0]).unwrap(), 2.0 + 12.0 + 2.0);
    let neg = parse_field_expr("-x1^2", 1).unwrap();
    assert_eq!(neg.eval::<f64, f64>(&[3.0]).unwrap(), -9.0);
    let pw = parse_field_expr("pow(x1 + 1, 3) + x1^(-1) + x1^-2", 1).unwrap();
    assert!((pw.eval::<f64, f64>(&[2.0]).unwrap() - (27.0 + 0.5 + 0.25)).abs() < 1e-15);
}

#[test]
fn rejects_out_of_range_variable() {
    assert_eq!(
        parse_field_expr("x3", 2),
        Err(ParseError::VariableOutOfRange { index: 3, dim: 2, pos: 0 }).map(|()| unreachable!())
    );
}

#[test]
fn reports_errors_with_positions() {
    assert!(matches!(parse_field_expr("foo(x1)", 1), Err(ParseError::UnknownFunction { pos: 0, .. })));
    assert!(matches!(parse_field_expr("x1 + y", 1), Err(ParseError::UnknownIdentifier { pos: 5, .. })));
    assert!(matches!(parse_field_expr("x1 + ", 1), Err(ParseError::Syntax { pos: 5, .. })));
    assert!(matches!(parse_field_expr("(x1", 1), Err(ParseError::Syntax { pos: 3, .. })));
    assert!(matches!(parse_field_expr("x1 ^ 0.5", 1), Err(ParseError::Syntax { .. })));
    assert!(matches!(parse_field_expr("x0", 1), Err(ParseError::UnknownIdentifier { .. })));
    assert!(matches!(parse_field_expr("x1 $ 2", 1), Err(ParseError::Syntax { pos: 3, .. })));
    assert_eq!(parse_field_expr("  ", 1).unwrap_err(), ParseError::Empty);
}

#[test]
fn domain_errors_name_the_component() {
    let f = field(&["1", "log(x1)"]);
    let err = f.eval(&[-1.0, 0.0]).unwrap_err();
    assert_eq!(err.component, 1);
    assert_eq!(err.kind, DomainKind::LogNonPositive);
    let g = field(&["1/x2", "0"]);
    assert_eq!(g.eval(&[1.0, 0.0]).unwrap_err().kind, DomainKind::DivisionByZero);
    let h = field(&["sqrt(x1)", "0"]);
    assert_eq!(h.eval(&[-0.1, 0.0]).unwrap_err().kind, DomainKind::SqrtNegative);
}

#[test]
fn eval_field_examples() {
    assert_eq!(picard().eval_field(2, &[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    assert_eq!(grushin().eval_field(2, &[2.0, 7.0]).unwrap(), vec![0.0, 2.0]);
    assert_eq!(grushin().eval_field(0, &[2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    let err = SdeModel::new("bad", field(&["log(x1)"]), vec![field(&["1"])])
        .unwrap()
        .eval_field(0, &[0.0])
        .unwrap_err();
    assert_eq!(err.field, Some(0));
}

#[test]
fn jacobian_examples() {
    let g = grushin();
    for x in [[0.0, 0.0], [1.5, -3.0]] {
        let j = g.jacobian_field(2, &x).unwrap();
        assert_eq!(j.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.jacobian_field(1, &x).unwrap().max_abs(), 0.0);
    }
    // exp component against a central-difference oracle
    let f = field(&["exp(x1)", "x2"]);
    let x = [0.3, 1.0];
    let ad = f.jacobian(&x).unwrap()[(0, 0)];
    let h = 1e-5;
    let fd = (f.eval(&[x[0] + h, x[1]]).unwrap()[0] - f.eval(&[x[0] - h, x[1]]).unwrap()[0]) / (2.0 * h);
    assert!((ad - 0.3f64.exp()).abs() < 1e-15);
    assert!(((ad - fd) / fd).abs() <= 1e-8);
}

#[test]
fn lie_bracket_examples() {
    let g = grushin();
    for x in [[0.0, 0.0], [0.7, -2.0], [-3.0, 11.0]] {
        assert_eq!(g.lie_bracket(1, 2, &x).unwrap(), vec![0.0, 1.0]);
        assert_eq!(g.lie_bracket(2, 2, &x).unwrap(), vec![0.0, 0.0]);
    }
    // linear fields: [Bx, Cx] = (CB - BC)x
    let b = [[1.0, 2.0], [-0.5, 3.0]];
    let c = [[0.0, -1.0], [4.0, 0.25]];
    let lin = |m: [[f64; 2]; 2]| {
        field(&[
            &format!("{}*x1 + {}*x2", m[0][0], m[0][1]),
            &format!("{}*x1 + {}*x2", m[1][0], m[1][1]),
        ])
    };
    let model = SdeModel::new("lin", lin(b), vec![lin(c)]).unwrap();
    let x = [0.4, -1.3];
    let bm = crate::linalg::Matrix::from_rows(&[b[0].to_vec(), b[1].to_vec()]);
    let cm = crate::linalg::Matrix::from_rows(&[c[0].to_vec(), c[1].to_vec()]);
    let comm = cm.mul(&bm).sub(&bm.mul(&cm));
    let expected = comm.mul_vec(&x);
    let got = model.lie_bracket(0, 1, &x).unwrap();
    assert!(crate::linalg::max_abs_diff(&got, &expected) < 1e-14);
}

#[test]
fn hormander_examples() {
    let g = grushin().hormander_probe(&[0.0, 5.0], 3).unwrap();
    assert_eq!(g.ranks_by_depth, vec![1, 2]);
    assert_eq!((g.rank, g.depth_achieved), (2, 1));

    let ell = SdeModel::new("e2", field(&["0", "0"]), vec![field(&["1", "0"]), field(&["0", "1"])]).unwrap();
    let r = ell.hormander_probe(&[0.3, 0.1], 2).unwrap();
    assert_eq!((r.rank, r.depth_achieved), (2, 0));

    let p = picard().hormander_probe(&[0.0, 0.0, 0.0], 2).unwrap();
    assert_eq!(p.ranks_by_depth, vec![2, 3]);
    assert_eq!((p.rank, p.depth_achieved), (3, 1));

    let degenerate = SdeModel::new("d", field(&["0", "0"]), vec![field(&["1", "0"])]).unwrap();
    let d = degenerate.hormander_probe(&[0.0, 0.0], 3).unwrap();
    assert_eq!(d.rank, 1);
    assert_eq!(d.depth_achieved, 0);
}

#[test]
fn hormander_rank_ignores_field_order() {
    let a = picard();
    let b = SdeModel::new(
        "picard-swapped",
        field(&["0", "0", "0"]),
        vec![field(&["0", "1", "x1"]), field(&["1", "0", "0"])],
    )
    .unwrap();
    for x in [[0.0, 0.0, 0.0], [0.5, -1.0, 2.0]] {
        assert_eq!(a.hormander_probe(&x, 3).unwrap().rank, b.hormander_probe(&x, 3).unwrap().rank);
    }
}

#[test]
fn detects_deterministic_pullbacks() {
    let asian = SdeModel::new("at", field(&["0", "x1"]), vec![field(&["0.3", "0"])]).unwrap();
    assert!(asian.pullbacks_deterministic());
    assert!(!grushin().pullbacks_deterministic());
}

#[test]
fn spec_round_trip() {
    let spec = picard().to_spec();
    let again = SdeModel::from_spec(&spec).unwrap();
    assert_eq!(again, picard());
    let mut bad = spec.clone();
    bad.diffusion[0].pop();
    assert!(matches!(SdeModel::from_spec(&bad), Err(ModelError::Dimension(_))));
}

#[test]
fn works_in_single_precision() {
    let e = parse_field_expr("tanh(x1)*x2", 2).unwrap();
    let g = e.gradient(&[0.5f32, 2.0]).unwrap();
    assert!((g[1] - 0.5f32.tanh()).abs() < 1e-6);
}

fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.1f64..5.0).prop_map(Expr::Const),
        (0..dim).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), 1..4i32).prop_map(|(a, n)| Expr::Pow(Box::new(a), n)),
            inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Tanh, Box::new(a))),
            inner.prop_map(|a| Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Cos, Box::new(a))))),
        ]
    })
}

proptest! {
    #[test]
    fn display_parse_round_trip(e in arb_expr(3)) {
        let printed = e.to_string();
        let back = parse_field_expr(&printed, 3).unwrap();
        prop_assert_eq!(back.expr(), &e, "printed as {}", printed);
    }

    #[test]
    fn symbolic_derivative_matches_dual(e in arb_expr(2), x in prop::array::uniform2(-1.5f64..1.5)) {
        let f = FieldExpr::new(e, 2);
        let g = f.gradient(&x).unwrap();
        for k in 0..2 {
            let s: f64 = f.derivative(k).eval(&x).unwrap();
            prop_assert!((s - g[k]).abs() <= 1e-9 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn bracket_is_bilinear_and_antisymmetric(
        x in prop::array::uniform2(-2.0f64..2.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let f = ["sin(x2)", "x1*x2"];
        let g = ["x1^2", "exp(x1/3)"];
        let h = ["tanh(x1 + x2)", "1 + x2^2"];
        let combo = [
            format!("({a:?})*({}) + ({b:?})*({})", f[0], g[0]),
            format!("({a:?})*({}) + ({b:?})*({})", f[1], g[1]),
        ];
        let fields = vec![field(&f), field(&g), field(&h), VectorField::parse(&combo, "c").unwrap()];
        let m = SdeModel::new("bl", field(&["0", "0"]), fields).unwrap();
        let fh = m.lie_bracket(1, 3, &x).unwrap();
        let gh = m.lie_bracket(2, 3, &x).unwrap();
        let ch = m.lie_bracket(4, 3, &x).unwrap();
        let hc = m.lie_bracket(3, 4, &x).unwrap();
        for j in 0..2 {
            let lin = a * fh[j] + b * gh[j];
            prop_assert!((ch[j] - lin).abs() <= 1e-12 * (1.0 + lin.abs()) * 10.0);
            prop_assert!((ch[j] + hc[j]).abs() <= 1e-12 * (1.0 + ch[j].abs()));
        }
    }

    #[test]
    fn symbolic_bracket_matches_numeric(x in prop::array::uniform2(-2.0f64..2.0)) {
        let f = field(&["sin(x2)", "x1*x2"]);
        let g = field(&["x1^2", "exp(x1/3)"]);
        let m = SdeModel::new("sb", field(&["0", "0"]), vec![f.clone(), g.clone()]).unwrap();
        let numeric = m.lie_bracket(1, 2, &x).unwrap();
        let symbolic = f.bracket(&g).eval(&x).unwrap();
        prop_assert!(crate::linalg::max_abs_diff(&numeric, &symbolic) < 1e-12);
    }
}
