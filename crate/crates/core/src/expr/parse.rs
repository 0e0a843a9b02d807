use super::{BinOp, Expr, Func, Signature, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected one of [{}]", expected.join(", "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

const OPERAND: &[&str] = &["number", "variable", "function", "(", "-"];

/// Parse `src` against the variable signature `sig`.
pub fn parse(src: &str, sig: Signature) -> Result<Expr, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, sig };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax(&["+", "-", "*", "/", "^", "end of input"]));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    sig: Signature,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax(&self, expected: &[&'static str]) -> ParseError {
        ParseError::Syntax { offset: self.pos, expected: expected.to_vec() }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.atom()?;
        while self.eat(b'^') {
            let negative = self.eat(b'-');
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let next = self.src.get(self.pos).copied();
            if start == self.pos || matches!(next, Some(b'.' | b'e' | b'E')) {
                self.pos = start;
                return Err(self.syntax(&["integer exponent"]));
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
            let mut n: i32 = digits.parse().map_err(|_| {
                ParseError::Syntax { offset: start, expected: vec!["exponent fitting in i32"] }
            })?;
            if negative {
                n = -n;
            }
            base = Expr::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax(&[")"]));
                }
                Ok(e)
            }
            _ => Err(self.syntax(OPERAND)),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax(&["number"]));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save + 1;
                return Err(self.syntax(&["exponent digits"]));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let v: f64 = text
            .parse()
            .map_err(|_| ParseError::Syntax { offset: start, expected: vec!["number"] })?;
        Ok(Expr::Num(v))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        let unknown = || ParseError::UnknownIdentifier { name: name.to_string(), offset: start };

        if self.peek() == Some(b'(') {
            let func = Func::lookup(name).ok_or_else(unknown)?;
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while args.len() < func.arity() {
                if !self.eat(b',') {
                    return Err(self.syntax(&[","]));
                }
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.syntax(&[")"]));
            }
            return Ok(Expr::Call(func, args));
        }

        if Func::lookup(name).is_some() {
            return Err(self.syntax(&["("]));
        }
        let var = match name {
            "u" => Var::U,
            "t" if self.sig.time => Var::T,
            _ => {
                let idx = name
                    .strip_prefix('x')
                    .filter(|s| !s.starts_with('0'))
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&k| k >= 1 && k <= self.sig.dim)
                    .ok_or_else(unknown)?;
                Var::X(idx - 1)
            }
        };
        Ok(Expr::Var(var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig() -> Signature {
        Signature::coefficient(2)
    }

    #[test]
    fn atomic_and_structural() {
        assert_eq!(parse("u", sig()).unwrap(), Expr::Var(Var::U));
        assert_eq!(
            parse("2+sin(u)", sig()).unwrap(),
            Expr::binary(BinOp::Add, Expr::Num(2.0), Expr::call(Func::Sin, vec![Expr::Var(Var::U)]))
        );
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ binds tighter than unary minus, which binds tighter than * /.
        let e = parse("-u^2*3", sig()).unwrap();
        let expected = Expr::binary(
            BinOp::Mul,
            Expr::Neg(Box::new(Expr::Pow(Box::new(Expr::Var(Var::U)), 2))),
            Expr::Num(3.0),
        );
        assert_eq!(e, expected);
        let e = parse("1-2-3", sig()).unwrap();
        assert_eq!(
            e,
            Expr::binary(
                BinOp::Sub,
                Expr::binary(BinOp::Sub, Expr::Num(1.0), Expr::Num(2.0)),
                Expr::Num(3.0)
            )
        );
        let e = parse("8/4/2", sig()).unwrap();
        assert_eq!(e.eval(&super::super::Point::new(&[0.0, 0.0], 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn errors_carry_offsets() {
        match parse("1+", sig()) {
            Err(ParseError::Syntax { offset, expected }) => {
                assert_eq!(offset, 2);
                assert!(expected.contains(&"number"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            parse("x3+u", sig()),
            Err(ParseError::UnknownIdentifier { name: "x3".into(), offset: 0 })
        );
        assert_eq!(
            parse("u*foo(u)", sig()),
            Err(ParseError::UnknownIdentifier { name: "foo".into(), offset: 2 })
        );
        assert!(matches!(parse("t", sig()), Err(ParseError::UnknownIdentifier { .. })));
        assert!(parse("t", Signature::space_time(1)).is_ok());
        assert!(matches!(parse("u^1.5", sig()), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("", sig()), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("min(u)", sig()), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("(u", sig()), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("u u", sig()), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("1.5e-3", sig()).unwrap(), Expr::Num(1.5e-3));
        assert_eq!(parse(".25", sig()).unwrap(), Expr::Num(0.25));
        assert_eq!(parse("u^-2", sig()).unwrap(), Expr::Pow(Box::new(Expr::Var(Var::U)), -2));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            Just(Expr::Var(Var::U)),
            (0usize..2).prop_map(|i| Expr::Var(Var::X(i))),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), -4i32..5).prop_map(|(e, n)| Expr::Pow(Box::new(e), n)),
                (
                    prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::binary(op, l, r)),
                (0usize..8, inner.clone()).prop_map(|(k, e)| Expr::call(Func::ALL[k], vec![e])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn unparse_reparse_is_structural_identity(e in arb_expr()) {
            let text = e.to_string();
            let back = parse(&text, sig()).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(parse(&back.to_string(), sig()).unwrap(), e);
        }
    }
}
