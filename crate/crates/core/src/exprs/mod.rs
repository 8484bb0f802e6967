//! Polynomial expressions over declared parameters and variables.
//!
//! Expressions are parsed from text, differentiated symbolically and
//! evaluated in floating point. Literals are kept as exact rationals so that
//! derived coefficients (for instance the `0.5 - x1` gradient of
//! `0.5*x1 - 0.5*x1^2`) stay exact until evaluation.

mod parse;
mod poly;
mod problem;

use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub use parse::parse_expr;
pub use poly::Polynomial;
pub use problem::{
    assemble_reference, DerivativeTables, ProblemError, ProblemFile, ProblemSpec, ReferenceData, ReferencePoint,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared identifier `{name}` at byte {offset}")]
    Undeclared { name: String, offset: usize },
    #[error("unbound identifier `{0}`")]
    Unbound(String),
}

/// Ordered list of identifiers an expression may refer to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolTable {
    names: Vec<String>,
}

impl SymbolTable {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Exact rational literal with its floating-point image cached.
#[derive(Debug, Clone)]
pub struct Literal {
    exact: BigRational,
    approx: f64,
}

impl Literal {
    pub fn new(exact: BigRational) -> Self {
        let approx = exact.to_f64().unwrap_or(f64::NAN);
        Self { exact, approx }
    }

    pub fn from_integer(value: i64) -> Self {
        Self::new(BigRational::from_integer(value.into()))
    }

    pub fn exact(&self) -> &BigRational {
        &self.exact
    }

    pub fn value(&self) -> f64 {
        self.approx
    }
}

impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

/// Expression tree. Variables are indices into the owning [`SymbolTable`].
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Literal),
    Var(usize),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, u32),
}

impl Expr {
    pub fn constant(value: BigRational) -> Self {
        Expr::Const(Literal::new(value))
    }

    pub fn zero() -> Self {
        Expr::Const(Literal::from_integer(0))
    }

    pub fn one() -> Self {
        Expr::Const(Literal::from_integer(1))
    }

    fn as_const(&self) -> Option<&BigRational> {
        match self {
            Expr::Const(lit) => Some(&lit.exact),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Zero::is_zero)
    }

    fn is_one(&self) -> bool {
        self.as_const().is_some_and(One::is_one)
    }

    // Smart constructors fold constants and drop neutral elements.

    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(lit) => Expr::constant(-lit.exact),
            Expr::Neg(inner) => Arc::unwrap_or_clone(inner),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(base: Expr, exponent: u32) -> Expr {
        match exponent {
            0 => Expr::one(),
            1 => base,
            k => match base.as_const() {
                Some(c) => Expr::constant(num_traits::pow(c.clone(), k as usize)),
                None => Expr::Pow(Arc::new(base), k),
            },
        }
    }

    /// Partial derivative with respect to symbol `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.derivative(var)),
            Expr::Add(a, b) => Expr::add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => Expr::sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(var), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Pow(base, k) => {
                let inner = base.derivative(var);
                if inner.is_zero() {
                    return Expr::zero();
                }
                let coeff = Expr::constant(BigRational::from_integer((*k).into()));
                Expr::mul(
                    Expr::mul(coeff, Expr::pow((**base).clone(), k - 1)),
                    inner,
                )
            }
        }
    }

    /// Evaluates with `values[i]` bound to symbol `i`.
    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Expr::Const(lit) => lit.approx,
            Expr::Var(i) => values[*i],
            Expr::Neg(a) => -a.eval(values),
            Expr::Add(a, b) => a.eval(values) + b.eval(values),
            Expr::Sub(a, b) => a.eval(values) - b.eval(values),
            Expr::Mul(a, b) => a.eval(values) * b.eval(values),
            Expr::Pow(a, k) => a.eval(values).powi(*k as i32),
        }
    }

    /// Evaluates against named bindings; every referenced identifier must be bound.
    pub fn eval_named(
        &self,
        symbols: &SymbolTable,
        bindings: &std::collections::HashMap<String, f64>,
    ) -> Result<f64, ExprError> {
        let mut values = vec![f64::NAN; symbols.len()];
        for idx in self.symbols_used() {
            let name = symbols.name(idx);
            values[idx] = *bindings
                .get(name)
                .ok_or_else(|| ExprError::Unbound(name.to_string()))?;
        }
        Ok(self.eval(&values))
    }

    /// Sorted, deduplicated symbol indices referenced by the expression.
    pub fn symbols_used(&self) -> Vec<usize> {
        fn walk(e: &Expr, out: &mut Vec<usize>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(i) => out.push(*i),
                Expr::Neg(a) | Expr::Pow(a, _) => walk(a, out),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn to_polynomial(&self, nsyms: usize) -> Polynomial {
        Polynomial::from_expr(self, nsyms)
    }

    /// Renders the expression with identifier names; the output parses back
    /// to an equivalent expression.
    pub fn display<'a>(&'a self, symbols: &'a SymbolTable) -> DisplayExpr<'a> {
        DisplayExpr { expr: self, symbols }
    }
}

pub struct DisplayExpr<'a> {
    expr: &'a Expr,
    symbols: &'a SymbolTable,
}

// Binding strength used to decide where parentheses are needed.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(lit) => {
            if lit.exact.is_negative() {
                0
            } else if lit.exact.is_integer() {
                5
            } else {
                // a fraction literal is a single token but reads badly as a power base
                4
            }
        }
        Expr::Var(_) => 5,
    }
}

impl DisplayExpr<'_> {
    fn child<'b>(&'b self, e: &'b Expr) -> DisplayExpr<'b> {
        DisplayExpr {
            expr: e,
            symbols: self.symbols,
        }
    }

    fn write_wrapped(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
        if precedence(e) < min {
            write!(f, "({})", self.child(e))
        } else {
            write!(f, "{}", self.child(e))
        }
    }
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Const(lit) => {
                let r = &lit.exact;
                if r.is_negative() {
                    write!(f, "-")?;
                }
                let abs = r.abs();
                if abs.is_integer() {
                    write!(f, "{}", abs.numer())
                } else {
                    write!(f, "{}/{}", abs.numer(), abs.denom())
                }
            }
            Expr::Var(i) => write!(f, "{}", self.symbols.name(*i)),
            Expr::Neg(a) => {
                write!(f, "-")?;
                self.write_wrapped(f, a, 3)
            }
            Expr::Add(a, b) => {
                self.write_wrapped(f, a, 1)?;
                write!(f, " + ")?;
                self.write_wrapped(f, b, 2)
            }
            Expr::Sub(a, b) => {
                self.write_wrapped(f, a, 1)?;
                write!(f, " - ")?;
                self.write_wrapped(f, b, 2)
            }
            Expr::Mul(a, b) => {
                self.write_wrapped(f, a, 2)?;
                write!(f, "*")?;
                self.write_wrapped(f, b, 3)
            }
            Expr::Pow(a, k) => {
                self.write_wrapped(f, a, 5)?;
                write!(f, "^{k}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms() -> SymbolTable {
        SymbolTable::new(["p", "x1", "x2"])
    }

    #[test]
    fn derivative_of_example_constraint() {
        let s = syms();
        let g1 = parse_expr("0.5*x1 - 0.5*x1^2 - x2", &s).unwrap();
        let d = g1.derivative(1);
        assert_eq!(d.eval(&[0.0, 0.0, 0.0]), 0.5);
        assert_eq!(d.eval(&[0.0, 2.0, 0.0]), -1.5);
        let expected = parse_expr("0.5 - x1", &s).unwrap();
        assert_eq!(
            d.to_polynomial(3),
            expected.to_polynomial(3),
            "got {}",
            d.display(&s)
        );
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let s = syms();
        for text in ["3", "1/7", "0.25", "-2"] {
            let e = parse_expr(text, &s).unwrap();
            assert_eq!(e.derivative(1), Expr::zero());
        }
    }

    #[test]
    fn derivative_of_example_mapping_row() {
        let s = syms();
        let h2 = parse_expr("-x2 + x2^2", &s).unwrap();
        assert_eq!(h2.derivative(2).eval(&[0.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn evaluation_examples() {
        let s = syms();
        let g1 = parse_expr("0.5*x1 - 0.5*x1^2 - x2", &s).unwrap();
        assert_eq!(g1.eval(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(g1.eval(&[0.0, 1.0, 1.0]), -1.0);
        let pow0 = parse_expr("x1^0", &s).unwrap();
        assert_eq!(pow0.eval(&[0.0, 123.5, 0.0]), 1.0);
        let id = parse_expr("x1", &s).unwrap();
        assert_eq!(id.eval(&[0.0, 3.0, 0.0]), 3.0);
    }

    #[test]
    fn named_evaluation_reports_unbound() {
        let s = syms();
        let e = parse_expr("x1 - p", &s).unwrap();
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("x1".to_string(), 2.0);
        assert_eq!(
            e.eval_named(&s, &bindings),
            Err(ExprError::Unbound("p".into()))
        );
        bindings.insert("p".to_string(), 0.5);
        assert_eq!(e.eval_named(&s, &bindings), Ok(1.5));
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let s = syms();
        let e = parse_expr("x1^3*x2 - 2*x1*x2^2 + p*x1*x2", &s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = e.derivative(i).derivative(j).to_polynomial(3);
                let b = e.derivative(j).derivative(i).to_polynomial(3);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn display_round_trips() {
        let s = syms();
        for text in [
            "0.5*x1 - 0.5*x1^2 - x2",
            "-(x1 - x2)^2",
            "x1 - (x2 - p)",
            "-3/4*x1*(x2 + 1)^3",
            "2*-x1",
            "(1/3)^2*x1",
        ] {
            let e = parse_expr(text, &s).unwrap();
            let printed = e.display(&s).to_string();
            let back = parse_expr(&printed, &s).unwrap();
            assert_eq!(
                e.to_polynomial(3),
                back.to_polynomial(3),
                "{text} -> {printed}"
            );
        }
    }
}
