use fpmv_core::expr::{parse, Point, Signature, Var};
use proptest::prelude::*;

const SMOOTH: [&str; 8] = [
    "x1^2*u - sin(x2)*exp(u/3)",
    "1+u^2/(1+u^2)",
    "tanh(u)*cos(x1*x2)",
    "atan(x1-u)/(2+x2^2)",
    "sqrt(4+u^2+x1^2)",
    "log(3+sin(u*x1))",
    "-(x2-u)^3+2*x1*x2*u",
    "exp(-x1^2)*(u-1)^4",
];

fn central_difference(src: &str, x: [f64; 2], u: f64, var: Var) -> f64 {
    let e = parse(src, Signature::coefficient(2)).unwrap();
    let h = 1e-6;
    let at = |s: f64| {
        let (mut xs, mut us) = (x, u);
        match var {
            Var::X(i) => xs[i] += s,
            Var::U => us += s,
            Var::T => unreachable!(),
        }
        e.eval(&Point::new(&xs, us)).unwrap()
    };
    (at(h) - at(-h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partials_match_central_differences(
        k in 0usize..SMOOTH.len(),
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        u in -2.0f64..2.0,
    ) {
        let src = SMOOTH[k];
        let e = parse(src, Signature::coefficient(2)).unwrap();
        let x = [x1, x2];
        for var in [Var::X(0), Var::X(1), Var::U] {
            let p = e.eval_with_partial(&Point::new(&x, u), var).unwrap();
            prop_assert!(!p.kink);
            prop_assert_eq!(p.value, e.eval(&Point::new(&x, u)).unwrap());
            let fd = central_difference(src, x, u, var);
            prop_assert!(
                (p.partial - fd).abs() <= 1e-6 * (1.0 + p.partial.abs()),
                "{src} d/{var:?} at ({x1},{x2},{u}): ad {} fd {fd}", p.partial
            );
        }
    }

    #[test]
    fn display_round_trips_through_the_parser(k in 0usize..SMOOTH.len()) {
        let e = parse(SMOOTH[k], Signature::coefficient(2)).unwrap();
        let again = parse(&e.to_string(), Signature::coefficient(2)).unwrap();
        prop_assert_eq!(e, again);
    }
}
