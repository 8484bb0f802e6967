use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_expr, Expr, ExprError, SymbolTable};
use crate::cones::ConeSpec;

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: String,
    pub parameters: Vec<String>,
    pub variables: Vec<String>,
    #[serde(rename = "H")]
    pub h: Vec<String>,
    pub g: Vec<String>,
    pub cone: ConeSpec,
    pub reference: ReferencePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub p: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("g[{index}] depends on parameter `{name}`; constraints may only involve variables")]
    ConstraintUsesParameter { index: usize, name: String },
    #[error("identifier `{0}` declared more than once")]
    DuplicateIdentifier(String),
    #[error("invalid cone: {0}")]
    Cone(String),
}

impl From<serde_json::Error> for ProblemError {
    fn from(err: serde_json::Error) -> Self {
        ProblemError::Json {
            line: err.line(),
            column: err.column(),
            // serde_json appends " at line L column C"; the variant already carries it
            message: {
                let text = err.to_string();
                let suffix = format!(" at line {} column {}", err.line(), err.column());
                text.strip_suffix(&suffix).map(str::to_string).unwrap_or(text)
            },
        }
    }
}

/// Parsed and validated problem: `0 ∈ H(p,x) + N̂_Γ(x)` with `Γ = g⁻¹(D)`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// Parameters first, then variables.
    pub symbols: SymbolTable,
    pub n_params: usize,
    pub n_vars: usize,
    pub h: Vec<Expr>,
    pub g: Vec<Expr>,
    pub cone: ConeSpec,
    pub p_ref: DVector<f64>,
    pub x_ref: DVector<f64>,
    source: ProblemFile,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let file: ProblemFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: ProblemFile) -> Result<Self, ProblemError> {
        let mut names = file.parameters.clone();
        names.extend(file.variables.iter().cloned());
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(ProblemError::DuplicateIdentifier(name.clone()));
            }
        }
        let symbols = SymbolTable::new(names);
        let n_params = file.parameters.len();
        let n_vars = file.variables.len();

        if file.h.len() != n_vars {
            return Err(ProblemError::Dimension(format!(
                "H has {} components but there are {} variables",
                file.h.len(),
                n_vars
            )));
        }
        if file.reference.p.len() != n_params || file.reference.x.len() != n_vars {
            return Err(ProblemError::Dimension(format!(
                "reference point has p of length {} and x of length {}, expected {} and {}",
                file.reference.p.len(),
                file.reference.x.len(),
                n_params,
                n_vars
            )));
        }
        let cone_dim = file.cone.dim().map_err(ProblemError::Cone)?;
        if cone_dim != file.g.len() {
            return Err(ProblemError::Dimension(format!(
                "cone has dimension {} but g has {} components",
                cone_dim,
                file.g.len()
            )));
        }

        let h = file
            .h
            .iter()
            .enumerate()
            .map(|(i, text)| {
                parse_expr(text, &symbols).map_err(|source| ProblemError::Expr {
                    field: format!("H[{i}]"),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let g = file
            .g
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let e = parse_expr(text, &symbols).map_err(|source| ProblemError::Expr {
                    field: format!("g[{i}]"),
                    source,
                })?;
                if let Some(&sym) = e.symbols_used().iter().find(|&&s| s < n_params) {
                    return Err(ProblemError::ConstraintUsesParameter {
                        index: i,
                        name: symbols.name(sym).to_string(),
                    });
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            name: file.name.clone(),
            symbols,
            n_params,
            n_vars,
            h,
            g,
            cone: file.cone.clone(),
            p_ref: DVector::from_vec(file.reference.p.clone()),
            x_ref: DVector::from_vec(file.reference.x.clone()),
            source: file,
        })
    }

    pub fn n_constraints(&self) -> usize {
        self.g.len()
    }

    pub fn file(&self) -> &ProblemFile {
        &self.source
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.source).expect("problem file serializes")
    }

    /// Same problem with a different reference point.
    pub fn with_reference(&self, p: &[f64], x: &[f64]) -> Result<Self, ProblemError> {
        let mut file = self.source.clone();
        file.reference = ReferencePoint {
            p: p.to_vec(),
            x: x.to_vec(),
        };
        Self::from_file(file)
    }

    pub fn symbol_values(&self, p: &DVector<f64>, x: &DVector<f64>) -> Vec<f64> {
        p.iter().chain(x.iter()).copied().collect()
    }
}

/// Symbolic first and second derivatives of `H` and `g`.
#[derive(Debug, Clone)]
pub struct DerivativeTables {
    n_params: usize,
    n_vars: usize,
    h: Vec<Expr>,
    g: Vec<Expr>,
    h_dp: Vec<Vec<Expr>>,
    h_dx: Vec<Vec<Expr>>,
    g_dx: Vec<Vec<Expr>>,
    g_dxx: Vec<Vec<Vec<Expr>>>,
}

impl DerivativeTables {
    pub fn new(spec: &ProblemSpec) -> Self {
        let l = spec.n_params;
        let n = spec.n_vars;
        let h_dp = spec
            .h
            .iter()
            .map(|hi| (0..l).map(|j| hi.derivative(j)).collect())
            .collect();
        let h_dx = spec
            .h
            .iter()
            .map(|hi| (0..n).map(|j| hi.derivative(l + j)).collect())
            .collect();
        let g_dx: Vec<Vec<Expr>> = spec
            .g
            .iter()
            .map(|gi| (0..n).map(|j| gi.derivative(l + j)).collect())
            .collect();
        let g_dxx = g_dx
            .iter()
            .map(|row| {
                row.iter()
                    .map(|dj| (0..n).map(|k| dj.derivative(l + k)).collect())
                    .collect()
            })
            .collect();
        Self {
            n_params: l,
            n_vars: n,
            h: spec.h.clone(),
            g: spec.g.clone(),
            h_dp,
            h_dx,
            g_dx,
            g_dxx,
        }
    }

    fn values(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(p.len(), self.n_params);
        debug_assert_eq!(x.len(), self.n_vars);
        p.iter().chain(x.iter()).copied().collect()
    }

    pub fn h_value(&self, p: &[f64], x: &[f64]) -> DVector<f64> {
        let v = self.values(p, x);
        DVector::from_iterator(self.h.len(), self.h.iter().map(|e| e.eval(&v)))
    }

    pub fn h_jacobian_x(&self, p: &[f64], x: &[f64]) -> DMatrix<f64> {
        let v = self.values(p, x);
        let n = self.n_vars;
        DMatrix::from_fn(n, n, |i, j| self.h_dx[i][j].eval(&v))
    }

    pub fn g_value(&self, x: &[f64]) -> DVector<f64> {
        let v = self.values(&vec![0.0; self.n_params], x);
        DVector::from_iterator(self.g.len(), self.g.iter().map(|e| e.eval(&v)))
    }

    pub fn g_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.values(&vec![0.0; self.n_params], x);
        DMatrix::from_fn(self.g.len(), self.n_vars, |i, j| self.g_dx[i][j].eval(&v))
    }

    pub fn g_hessians(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let v = self.values(&vec![0.0; self.n_params], x);
        let n = self.n_vars;
        self.g_dxx
            .iter()
            .map(|h| DMatrix::from_fn(n, n, |j, k| h[j][k].eval(&v)))
            .collect()
    }

    pub fn evaluate(&self, p: &[f64], x: &[f64]) -> ReferenceData {
        let v = self.values(p, x);
        let n = self.n_vars;
        let l = self.n_params;
        let h_value = self.h_value(p, x);
        ReferenceData {
            grad_p_h: DMatrix::from_fn(n, l, |i, j| self.h_dp[i][j].eval(&v)),
            grad_x_h: DMatrix::from_fn(n, n, |i, j| self.h_dx[i][j].eval(&v)),
            jac_g: self.g_jacobian(x),
            hess_g: self.g_hessians(x),
            g_value: self.g_value(x),
            x_star: -&h_value,
            h_value,
        }
    }

    /// Symbolic entry `∂²g_i/∂x_j∂x_k`.
    pub fn g_second(&self, i: usize, j: usize, k: usize) -> &Expr {
        &self.g_dxx[i][j][k]
    }

    /// Symbolic entry `∂g_i/∂x_j`.
    pub fn g_first(&self, i: usize, j: usize) -> &Expr {
        &self.g_dx[i][j]
    }

    /// Symbolic entry `∂H_i/∂x_j`.
    pub fn h_dx(&self, i: usize, j: usize) -> &Expr {
        &self.h_dx[i][j]
    }

    /// Symbolic entry `∂H_i/∂p_j`.
    pub fn h_dp(&self, i: usize, j: usize) -> &Expr {
        &self.h_dp[i][j]
    }
}

/// Derivatives of the problem data at the reference point `(p̄, x̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    /// `∇ₚH(p̄,x̄)`, n×l.
    pub grad_p_h: DMatrix<f64>,
    /// `∇ₓH(p̄,x̄)`, n×n.
    pub grad_x_h: DMatrix<f64>,
    /// `∇g(x̄)`, s×n.
    pub jac_g: DMatrix<f64>,
    /// `∇²gᵢ(x̄)` for each constraint component.
    pub hess_g: Vec<DMatrix<f64>>,
    pub g_value: DVector<f64>,
    pub h_value: DVector<f64>,
    /// `x* = −H(p̄,x̄)`.
    pub x_star: DVector<f64>,
}

impl ReferenceData {
    pub fn n_vars(&self) -> usize {
        self.grad_x_h.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.grad_p_h.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.jac_g.nrows()
    }

    /// `∇²⟨λ, g⟩(x̄) = Σ λᵢ ∇²gᵢ(x̄)`.
    pub fn hessian_contraction(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_vars();
        self.hess_g
            .iter()
            .zip(lambda.iter())
            .fold(DMatrix::zeros(n, n), |acc, (h, &l)| acc + h * l)
    }
}

pub fn assemble_reference(spec: &ProblemSpec) -> ReferenceData {
    let tables = DerivativeTables::new(spec);
    tables.evaluate(spec.p_ref.as_slice(), spec.x_ref.as_slice())
}
