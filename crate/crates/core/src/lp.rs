//! Dense front end for the `minilp` simplex solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// `eq` rows: `a·x = b`; `le` rows: `a·x ≤ b`; per-variable bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
    bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            eq: Vec::new(),
            le: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn eq(&mut self, row: &[f64], rhs: f64) -> &mut Self {
        debug_assert_eq!(row.len(), self.n);
        self.eq.push((row.to_vec(), rhs));
        self
    }

    pub fn le(&mut self, row: &[f64], rhs: f64) -> &mut Self {
        debug_assert_eq!(row.len(), self.n);
        self.le.push((row.to_vec(), rhs));
        self
    }

    pub fn bound(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    pub fn bound_all(&mut self, lo: f64, hi: f64) -> &mut Self {
        for b in &mut self.bounds {
            *b = (lo, hi);
        }
        self
    }

    pub fn maximize(&self, objective: &[f64]) -> LpOutcome {
        debug_assert_eq!(objective.len(), self.n);
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..self.n)
            .map(|i| problem.add_var(objective[i], self.bounds[i]))
            .collect();
        let sparse = |row: &[f64]| -> Vec<(minilp::Variable, f64)> {
            row.iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(i, &a)| (vars[i], a))
                .collect()
        };
        for (row, rhs) in &self.eq {
            problem.add_constraint(sparse(row).as_slice(), ComparisonOp::Eq, *rhs);
        }
        for (row, rhs) in &self.le {
            problem.add_constraint(sparse(row).as_slice(), ComparisonOp::Le, *rhs);
        }
        match problem.solve() {
            Ok(sol) => {
                let x = DVector::from_iterator(self.n, vars.iter().map(|v| *sol.var_value(*v)));
                LpOutcome::Optimal {
                    x,
                    value: sol.objective(),
                }
            }
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self.maximize(&vec![0.0; self.n]), LpOutcome::Optimal { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // max x + y  s.t. x + 2y ≤ 4, x ≤ 2, y ≥ 0
        let mut lp = LinearProgram::new(2);
        lp.le(&[1.0, 2.0], 4.0).bound(0, f64::NEG_INFINITY, 2.0).bound(1, 0.0, f64::INFINITY);
        match lp.maximize(&[1.0, 1.0]) {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 3.0).abs() < 1e-12);
                assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.eq(&[1.0], 1.0).bound(0, 2.0, 3.0);
        assert_eq!(lp.maximize(&[1.0]), LpOutcome::Infeasible);
        let lp = LinearProgram::new(1);
        assert_eq!(lp.maximize(&[1.0]), LpOutcome::Unbounded);
    }
}
