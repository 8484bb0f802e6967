use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;

use super::Expr;

/// Canonical sparse polynomial: exponent vector -> exact coefficient.
///
/// Used to compare expressions exactly (e.g. mixed partial derivatives)
/// without relying on the shape of the expression tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    nsyms: usize,
    terms: BTreeMap<Vec<u32>, BigRational>,
}

impl Polynomial {
    fn constant(nsyms: usize, c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(vec![0; nsyms], c);
        }
        Self { nsyms, terms }
    }

    fn variable(nsyms: usize, i: usize) -> Self {
        let mut exps = vec![0; nsyms];
        exps[i] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(exps, BigRational::from_integer(1.into()));
        Self { nsyms, terms }
    }

    pub fn from_expr(e: &Expr, nsyms: usize) -> Self {
        match e {
            Expr::Const(lit) => Self::constant(nsyms, lit.exact().clone()),
            Expr::Var(i) => Self::variable(nsyms, *i),
            Expr::Neg(a) => Self::from_expr(a, nsyms).scale(&BigRational::from_integer((-1).into())),
            Expr::Add(a, b) => Self::from_expr(a, nsyms).plus(&Self::from_expr(b, nsyms)),
            Expr::Sub(a, b) => {
                let nb = Self::from_expr(b, nsyms).scale(&BigRational::from_integer((-1).into()));
                Self::from_expr(a, nsyms).plus(&nb)
            }
            Expr::Mul(a, b) => Self::from_expr(a, nsyms).times(&Self::from_expr(b, nsyms)),
            Expr::Pow(a, k) => {
                let base = Self::from_expr(a, nsyms);
                let mut acc = Self::constant(nsyms, BigRational::from_integer(1.into()));
                for _ in 0..*k {
                    acc = acc.times(&base);
                }
                acc
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], &BigRational)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), v))
    }

    /// Total degree; zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn scale(mut self, c: &BigRational) -> Self {
        if c.is_zero() {
            self.terms.clear();
            return self;
        }
        for v in self.terms.values_mut() {
            *v = &*v * c;
        }
        self
    }

    fn plus(mut self, other: &Self) -> Self {
        for (k, v) in &other.terms {
            let entry = self.terms.entry(k.clone()).or_insert_with(BigRational::zero);
            *entry = &*entry + v;
            if entry.is_zero() {
                self.terms.remove(k);
            }
        }
        self
    }

    fn times(&self, other: &Self) -> Self {
        let mut out = Self {
            nsyms: self.nsyms,
            terms: BTreeMap::new(),
        };
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let k: Vec<u32> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                let entry = out.terms.entry(k.clone()).or_insert_with(BigRational::zero);
                *entry = &*entry + va * vb;
                if entry.is_zero() {
                    out.terms.remove(&k);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::exprs::{parse_expr, SymbolTable};

    #[test]
    fn expansion_cancels() {
        let s = SymbolTable::new(["x", "y"]);
        let e = parse_expr("(x + y)^2 - x^2 - 2*x*y - y^2", &s).unwrap();
        assert!(e.to_polynomial(2).is_zero());
        let f = parse_expr("(x - 1)^3", &s).unwrap();
        assert_eq!(f.to_polynomial(2).degree(), 3);
    }
}
