use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::{Expr, ExprError, SymbolTable};

/// Parses a polynomial expression.
///
/// Grammar (whitespace is ignored between tokens):
///
/// ```text
/// expr    := term (('+' | '-') term)*
/// term    := unary ('*' unary)*
/// unary   := '-' unary | power
/// power   := primary ('^' INTEGER)*
/// primary := NUMBER | IDENT | '(' expr ')'
/// NUMBER  := DIGITS ['.' DIGITS] ['/' DIGITS] | '.' DIGITS ['/' DIGITS]
/// ```
///
/// `a/b` is only valid as a literal; there is no division operator.
pub fn parse_expr(text: &str, symbols: &SymbolTable) -> Result<Expr, ExprError> {
    let mut parser = Parser {
        src: text.as_bytes(),
        pos: 0,
        symbols,
    };
    let e = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.src.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    symbols: &'a SymbolTable,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Expr::mul(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.primary()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            let digits = self.digits();
            if digits.is_empty() {
                return Err(self.error("exponent must be a nonnegative integer literal"));
            }
            let k = digits
                .parse::<u32>()
                .map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: "exponent out of range".into(),
                })?;
            base = Expr::pow(base, k);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                match self.symbols.index_of(name) {
                    Some(i) => Ok(Expr::Var(i)),
                    None => Err(ExprError::Undeclared {
                        name: name.to_string(),
                        offset: start,
                    }),
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn digits(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let int_part = self.digits();
        let mut frac_part = String::new();
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac_part = self.digits();
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(ExprError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mantissa: BigInt = format!("0{int_part}{frac_part}")
            .parse()
            .expect("digits only");
        let mut value = BigRational::new(mantissa, scale);

        // optional `/DIGITS` denominator
        let save = self.pos;
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b'/') {
            self.pos += 1;
            self.skip_ws();
            let denom_start = self.pos;
            let denom = self.digits();
            if denom.is_empty() {
                return Err(self.error("expected integer denominator after `/`"));
            }
            let d: BigInt = denom.parse().expect("digits only");
            if d.is_zero() {
                return Err(ExprError::Syntax {
                    offset: denom_start,
                    message: "zero denominator".into(),
                });
            }
            value /= BigRational::from_integer(d);
        } else {
            self.pos = save;
        }
        debug_assert!(value.to_f64().is_some());
        Ok(Expr::constant(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms() -> SymbolTable {
        SymbolTable::new(["p", "x1", "x2"])
    }

    #[test]
    fn precedence_and_associativity() {
        let s = syms();
        let v = [2.0, 3.0, 5.0];
        let cases = [
            ("x1 - x2 - p", 3.0 - 5.0 - 2.0),
            ("x1 + x2 * p", 3.0 + 10.0),
            ("-x1^2", -9.0),
            ("x1^2^0", 1.0),
            ("2*x1^2*x2", 90.0),
            ("(x1 - x2)*p", -4.0),
            ("3/4*x1", 2.25),
            ("-.5*x2", -2.5),
        ];
        for (text, want) in cases {
            let e = parse_expr(text, &s).unwrap();
            assert_eq!(e.eval(&v), want, "{text}");
        }
    }

    #[test]
    fn example_expressions_parse() {
        let s = syms();
        let h1 = parse_expr("x1 - p", &s).unwrap();
        assert_eq!(h1.eval(&[1.0, 4.0, 0.0]), 3.0);
        let g1 = parse_expr("0.5*x1 - 0.5*x1^2 - x2", &s).unwrap();
        assert_eq!(g1.symbols_used(), vec![1, 2]);
    }

    #[test]
    fn undeclared_identifier_is_named() {
        let err = parse_expr("x1 + y", &syms()).unwrap_err();
        assert_eq!(
            err,
            ExprError::Undeclared {
                name: "y".into(),
                offset: 5
            }
        );
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let s = syms();
        let cases = [
            ("x1 +", 4),
            ("x1 ^ p", 5),
            ("(x1", 3),
            ("x1 x2", 3),
            ("1/0", 2),
            ("x1^-2", 3),
            ("x1 / 2", 3),
        ];
        for (text, offset) in cases {
            match parse_expr(text, &s) {
                Err(ExprError::Syntax { offset: got, .. }) => assert_eq!(got, offset, "{text}"),
                other => panic!("{text}: expected syntax error, got {other:?}"),
            }
        }
    }
}
