//! Second-order chain rules for `N̂_Γ`, `Γ = g⁻¹(D)`.
//!
//! The cone `D` is reduced locally at `g(x̄)` to a product of half-lines
//! `{ aᵢᵀz ≤ 0 }` (active facets, Lorentz boundary pieces linearized through
//! `‖z̄‖ − z₀`) plus, for Lorentz blocks sitting at the apex with a vanishing
//! multiplier, the block itself. Everything downstream works with the rows
//! `bᵢ = ∇g(x̄)ᵀaᵢ` and the multipliers `μᵢ` recovered here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{
    orthant_regular_rule, orthant_rule, ComponentImage, ComponentRule, ConeError, ConeSpec,
};
use crate::exprs::ReferenceData;
use crate::linalg;
use crate::lorentz::{LorentzSpec, Position};
use crate::lp::LinearProgram;
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("reference point is infeasible: {0}")]
    Infeasible(String),
    #[error("x* = -H(p,x) is not a regular normal to the constraint set: {0}")]
    NotNormal(String),
    #[error("nondegeneracy (A2) fails: constraint Jacobian has rank {rank} < {rows}")]
    Degenerate { rank: usize, rows: usize },
    #[error("direction is not tangent to the graph of the normal cone map: {0}")]
    NotTangent(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// Which constraint of `D` produced a reduced row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowSource {
    Orthant { index: usize },
    Hrep { index: usize },
    LorentzFacet { block: usize, index: usize },
    LorentzBoundary { block: usize },
    LorentzPolarApex { block: usize, component: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Strictly positive multiplier (or an interior polar multiplier at a
    /// Lorentz apex): the row behaves like an equality.
    Equality,
    /// Zero multiplier: complementarity between `bᵢᵀu ≤ 0` and `ζᵢ ≥ 0`.
    Complementary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRow {
    pub source: RowSource,
    /// Row in the space of `D`.
    pub a: DVector<f64>,
    /// `∇g(x̄)ᵀa`.
    pub b: DVector<f64>,
    pub mu: f64,
    pub kind: RowKind,
}

/// A Lorentz block at the apex with zero multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ApexBlock {
    pub block: usize,
    pub offset: usize,
    pub spec: LorentzSpec,
    /// Rows of `∇g(x̄)` belonging to the block.
    pub jac: DMatrix<f64>,
    /// Facet rows describing the same block (`s ≤ 2` only).
    pub facet_rows: Vec<usize>,
}

impl ApexBlock {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Whether the block is handled only through its own calculus (`s ≥ 3`).
    pub fn is_curved(&self) -> bool {
        self.facet_rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub lambda: Vec<f64>,
}

/// Rank certificate of the reduced constraint Jacobian `∇b(x̄)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub holds: bool,
    pub rank: usize,
    pub rows: usize,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub source: RowSource,
    pub a: Vec<f64>,
    pub mu: f64,
    pub kind: RowKind,
}

/// Serializable view of the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub rows: Vec<RowSummary>,
    pub apex_blocks: Vec<usize>,
    pub curved: bool,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub data: ReferenceData,
    pub cone: ConeSpec,
    pub tol: Tolerances,
    pub lambda: DVector<f64>,
    pub rows: Vec<ReducedRow>,
    pub apex_blocks: Vec<ApexBlock>,
    /// `Σ μ ∇²h` of the boundary rows, in the space of `D`.
    pub curvature: DMatrix<f64>,
    /// `∇²⟨λ̄, g⟩(x̄)`.
    pub hess_lambda: DMatrix<f64>,
    /// `∇ₓH + ∇²⟨λ̄,g⟩ + ∇gᵀ(Σμ∇²h)∇g`.
    pub lagrangian: DMatrix<f64>,
    pub nondegeneracy: Nondegeneracy,
}

/// A structural constraint before the multiplier is known.
enum Structural {
    Row(RowSource, DVector<f64>, Option<usize>),
    Boundary { block: usize, offset: usize, spec: LorentzSpec, grad: DVector<f64> },
    Apex { block: usize, offset: usize, spec: LorentzSpec },
}

impl Structural {
    fn width(&self) -> usize {
        match self {
            Structural::Row(..) | Structural::Boundary { .. } => 1,
            Structural::Apex { spec, .. } => spec.dim,
        }
    }
}

fn embed(s: usize, offset: usize, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(s);
    out.rows_mut(offset, v.len()).copy_from(v);
    out
}

fn structure(cone: &ConeSpec, z: &DVector<f64>, tol: &Tolerances) -> Result<Vec<Structural>, ChainError> {
    let s = z.len();
    let act = tol.activity;
    if !cone.contains(z, act) {
        return Err(ChainError::Infeasible(format!("g(x̄) = {:?} lies outside D", z.as_slice())));
    }
    let mut out = Vec::new();
    match cone {
        ConeSpec::OrthantNonpositive { .. } => {
            for i in 0..s {
                if z[i] >= -act {
                    let mut e = DVector::zeros(s);
                    e[i] = 1.0;
                    out.push(Structural::Row(RowSource::Orthant { index: i }, e, None));
                }
            }
        }
        ConeSpec::PolyhedralHrep { rows } => {
            for (i, r) in rows.iter().enumerate() {
                let a = DVector::from_column_slice(r);
                let scale = a.norm() * z.norm().max(1.0);
                if a.dot(z).abs() <= act * scale {
                    out.push(Structural::Row(RowSource::Hrep { index: i }, a, None));
                }
            }
        }
        ConeSpec::LorentzProduct { .. } => {
            for (block, (offset, spec)) in cone.lorentz_blocks().into_iter().enumerate() {
                let zb = z.rows(offset, spec.dim).into_owned();
                if let Some(facets) = spec.hrep_rows() {
                    for (index, f) in facets.iter().enumerate() {
                        let scale = zb.norm().max(1.0);
                        if f.dot(&zb).abs() <= act * scale {
                            out.push(Structural::Row(
                                RowSource::LorentzFacet { block, index },
                                embed(s, offset, f),
                                Some(block),
                            ));
                        }
                    }
                    continue;
                }
                match spec.position(&zb, act) {
                    Position::Interior => {}
                    Position::Apex => out.push(Structural::Apex { block, offset, spec }),
                    Position::Boundary => {
                        let c = spec.canonical(&zb);
                        let m = spec.dim - 1;
                        let bar = c.rows(0, m).into_owned();
                        let w = &bar / bar.norm();
                        let mut gc = DVector::from_element(spec.dim, -1.0);
                        gc.rows_mut(0, m).copy_from(&w);
                        out.push(Structural::Boundary {
                            block,
                            offset,
                            spec,
                            grad: embed(s, offset, &spec.from_canonical(&gc)),
                        });
                    }
                    other => {
                        return Err(ChainError::Infeasible(format!(
                            "Lorentz block {block} of g(x̄) is {other:?}"
                        )))
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Columns spanning the admissible multipliers, one group per structural item.
fn multiplier_basis(items: &[Structural], s: usize) -> DMatrix<f64> {
    let k: usize = items.iter().map(Structural::width).sum();
    let mut g = DMatrix::zeros(s, k);
    let mut col = 0;
    for it in items {
        match it {
            Structural::Row(_, a, _) | Structural::Boundary { grad: a, .. } => {
                g.set_column(col, a);
                col += 1;
            }
            Structural::Apex { offset, spec, .. } => {
                for j in 0..spec.dim {
                    g[(offset + j, col)] = 1.0;
                    col += 1;
                }
            }
        }
    }
    g
}

fn certificate(m: &DMatrix<f64>, tol: f64) -> Nondegeneracy {
    let rows = m.nrows();
    let singular_values: Vec<f64> = if rows == 0 || m.ncols() == 0 {
        vec![0.0; rows.min(m.ncols())]
    } else {
        let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    };
    let rank = linalg::rank(m, tol);
    Nondegeneracy {
        holds: rank == rows,
        rank,
        rows,
        singular_values,
    }
}

/// Nondegeneracy: full row rank of the reduced Jacobian `∇b(x̄)`.
pub fn check_nondegeneracy(
    data: &ReferenceData,
    cone: &ConeSpec,
    tol: &Tolerances,
) -> Result<Nondegeneracy, ChainError> {
    let items = structure(cone, &data.g_value, tol)?;
    let basis = multiplier_basis(&items, data.n_constraints());
    Ok(certificate(&(basis.transpose() * &data.jac_g), tol.rank))
}

pub fn recover_multiplier(
    data: &ReferenceData,
    cone: &ConeSpec,
    tol: &Tolerances,
) -> Result<Multiplier, ChainError> {
    reduce(data, cone, tol).map(|m| Multiplier {
        lambda: m.lambda.iter().copied().collect(),
    })
}

/// Builds the reduced model at the reference point.
pub fn reduce(data: &ReferenceData, cone: &ConeSpec, tol: &Tolerances) -> Result<ReducedModel, ChainError> {
    let s = data.n_constraints();
    let n = data.n_vars();
    let items = structure(cone, &data.g_value, tol)?;
    let basis = multiplier_basis(&items, s);
    if linalg::rank(&basis, tol.rank) < basis.ncols() {
        return Err(ChainError::Unsupported(
            "active constraints of D are linearly dependent; no local reduction to an orthant".into(),
        ));
    }
    let jb = basis.transpose() * &data.jac_g;
    let nondegeneracy = certificate(&jb, tol.rank);

    let (theta, residual) = linalg::lstsq(&jb.transpose(), &data.x_star, tol.rank);
    let scale = data.x_star.norm().max(1.0);
    if residual > tol.residual * scale {
        return Err(ChainError::NotNormal(format!(
            "∇g(x̄)ᵀλ = x* has no solution with λ in the normal cone (residual {residual:.3e})"
        )));
    }
    if !nondegeneracy.holds {
        return Err(ChainError::Degenerate {
            rank: nondegeneracy.rank,
            rows: nondegeneracy.rows,
        });
    }
    let lambda = &basis * &theta;

    let mut rows = Vec::new();
    let mut apex_blocks = Vec::new();
    let mut curvature = DMatrix::zeros(s, s);
    let mut facet_rows: Vec<(usize, usize)> = Vec::new();
    let mut col = 0;
    let signed = |mu: f64, what: String| -> Result<f64, ChainError> {
        if mu < -tol.activity.max(tol.residual) * scale {
            Err(ChainError::NotNormal(format!("{what} has negative multiplier {mu:.3e}")))
        } else {
            Ok(mu.max(0.0))
        }
    };
    for it in &items {
        match it {
            Structural::Row(source, a, block) => {
                let mu = signed(theta[col], format!("{source:?}"))?;
                col += 1;
                if let Some(b) = block {
                    facet_rows.push((*b, rows.len()));
                }
                rows.push(ReducedRow {
                    source: *source,
                    b: data.jac_g.transpose() * a,
                    a: a.clone(),
                    mu,
                    kind: if mu > tol.activity { RowKind::Equality } else { RowKind::Complementary },
                });
            }
            Structural::Boundary { block, offset, spec, grad } => {
                let mu = signed(theta[col], format!("Lorentz block {block}"))?;
                col += 1;
                if mu > 0.0 {
                    let zb = data.g_value.rows(*offset, spec.dim).into_owned();
                    let c = spec.canonical(&zb);
                    let m = spec.dim - 1;
                    let bar = c.rows(0, m).into_owned();
                    let nrm = bar.norm();
                    let w = &bar / nrm;
                    let mut hc = DMatrix::zeros(spec.dim, spec.dim);
                    hc.view_mut((0, 0), (m, m))
                        .copy_from(&((DMatrix::identity(m, m) - &w * w.transpose()) / nrm));
                    let p = spec.permutation();
                    let hd = p.transpose() * hc * p * mu;
                    let mut view = curvature.view_mut((*offset, *offset), (spec.dim, spec.dim));
                    view += hd;
                }
                rows.push(ReducedRow {
                    source: RowSource::LorentzBoundary { block: *block },
                    b: data.jac_g.transpose() * grad,
                    a: grad.clone(),
                    mu,
                    kind: if mu > tol.activity { RowKind::Equality } else { RowKind::Complementary },
                });
            }
            Structural::Apex { block, offset, spec } => {
                let lb = theta.rows(col, spec.dim).into_owned();
                col += spec.dim;
                match spec.position(&-&lb, tol.activity) {
                    Position::Apex => apex_blocks.push(ApexBlock {
                        block: *block,
                        offset: *offset,
                        spec: *spec,
                        jac: data.jac_g.rows(*offset, spec.dim).into_owned(),
                        facet_rows: Vec::new(),
                    }),
                    Position::Interior => {
                        for j in 0..spec.dim {
                            let mut e = DVector::zeros(s);
                            e[offset + j] = 1.0;
                            rows.push(ReducedRow {
                                source: RowSource::LorentzPolarApex { block: *block, component: j },
                                b: data.jac_g.row(offset + j).transpose(),
                                a: e,
                                mu: lb[j],
                                kind: RowKind::Equality,
                            });
                        }
                    }
                    Position::Boundary => {
                        return Err(ChainError::Unsupported(format!(
                            "Lorentz block {block} at the apex with a multiplier on the boundary of the polar cone"
                        )))
                    }
                    _ => {
                        return Err(ChainError::NotNormal(format!(
                            "multiplier of Lorentz block {block} is not in the polar cone"
                        )))
                    }
                }
            }
        }
    }

    // Planar blocks at the apex with zero multiplier also keep their projection view.
    for (block, (offset, spec)) in cone.lorentz_blocks().into_iter().enumerate() {
        if spec.dim > 2 {
            continue;
        }
        let idx: Vec<usize> = facet_rows.iter().filter(|(b, _)| *b == block).map(|(_, r)| *r).collect();
        let facets = spec.hrep_rows().map_or(0, |f| f.len());
        if spec.dim == 2 && idx.len() == facets && idx.iter().all(|&r| rows[r].kind == RowKind::Complementary) {
            apex_blocks.push(ApexBlock {
                block,
                offset,
                spec,
                jac: data.jac_g.rows(offset, spec.dim).into_owned(),
                facet_rows: idx,
            });
        }
    }
    apex_blocks.sort_by_key(|b| b.block);

    let hess_lambda = data.hessian_contraction(&lambda);
    let lagrangian =
        &data.grad_x_h + &hess_lambda + data.jac_g.transpose() * &curvature * &data.jac_g;
    debug_assert_eq!(lagrangian.nrows(), n);
    Ok(ReducedModel {
        data: data.clone(),
        cone: cone.clone(),
        tol: *tol,
        lambda,
        rows,
        apex_blocks,
        curvature,
        hess_lambda,
        lagrangian,
        nondegeneracy,
    })
}

/// Result of a successful tangency test.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTangent {
    /// `ξ` in the space of `D`.
    pub xi: DVector<f64>,
    /// Row multipliers `ζ`.
    pub zeta: DVector<f64>,
    /// `ξ` restricted to each curved apex block.
    pub apex_xi: Vec<DVector<f64>>,
    /// Rank of the `ξ`-system; equal to its width when `ξ` is unique.
    pub rank: usize,
    pub unique: bool,
}

impl ReducedModel {
    pub fn n(&self) -> usize {
        self.data.n_vars()
    }

    pub fn l(&self) -> usize {
        self.data.n_params()
    }

    pub fn s(&self) -> usize {
        self.data.n_constraints()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn curved_blocks(&self) -> impl Iterator<Item = &ApexBlock> {
        self.apex_blocks.iter().filter(|b| b.is_curved())
    }

    pub fn has_curved_blocks(&self) -> bool {
        self.curved_blocks().next().is_some()
    }

    /// `B` with rows `bᵢᵀ`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.m(), self.n());
        for (i, r) in self.rows.iter().enumerate() {
            b.set_row(i, &r.b.transpose());
        }
        b
    }

    /// `R` with rows `aᵢᵀ`.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.m(), self.s());
        for (i, row) in self.rows.iter().enumerate() {
            r.set_row(i, &row.a.transpose());
        }
        r
    }

    /// The second-order term of the graph tangent: `∇²⟨λ̄,g⟩ + ∇gᵀ(Σμ∇²h)∇g`.
    pub fn second_order(&self) -> DMatrix<f64> {
        &self.hess_lambda + self.data.jac_g.transpose() * &self.curvature * &self.data.jac_g
    }

    /// `ξ = Rᵀζ + Cv (+ apex parts)` in the space of `D`.
    pub fn xi_of(&self, u: &DVector<f64>, zeta: &DVector<f64>, apex_xi: &[DVector<f64>]) -> DVector<f64> {
        let mut xi = self.r_matrix().transpose() * zeta + &self.curvature * (&self.data.jac_g * u);
        for (b, x) in self.curved_blocks().zip(apex_xi) {
            let mut view = xi.rows_mut(b.offset, b.dim());
            view += x;
        }
        xi
    }

    pub fn multiplier(&self) -> Multiplier {
        Multiplier {
            lambda: self.lambda.iter().copied().collect(),
        }
    }

    pub fn summary(&self) -> ReductionSummary {
        ReductionSummary {
            rows: self
                .rows
                .iter()
                .map(|r| RowSummary {
                    source: r.source,
                    a: r.a.iter().copied().collect(),
                    mu: r.mu,
                    kind: r.kind,
                })
                .collect(),
            apex_blocks: self.apex_blocks.iter().map(|b| b.block).collect(),
            curved: self.has_curved_blocks(),
        }
    }

    /// The `ξ`-system `[B; ∇g_b]ᵀθ = rhs` shared by the tangent and coderivative rules.
    fn xi_system(&self) -> DMatrix<f64> {
        let mut blocks: Vec<DMatrix<f64>> = vec![self.b_matrix()];
        for b in self.curved_blocks() {
            blocks.push(b.jac.clone());
        }
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        linalg::vstack(&refs).transpose()
    }

    fn split_theta(&self, theta: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let m = self.m();
        let zeta = theta.rows(0, m).into_owned();
        let mut off = m;
        let apex = self
            .curved_blocks()
            .map(|b| {
                let v = theta.rows(off, b.dim()).into_owned();
                off += b.dim();
                v
            })
            .collect();
        (zeta, apex)
    }

    fn solve_xi(&self, u: &DVector<f64>, ustar: &DVector<f64>) -> (DVector<f64>, f64, usize) {
        let a = self.xi_system();
        let rhs = ustar - self.second_order() * u;
        if a.ncols() == 0 {
            return (DVector::zeros(0), rhs.norm(), 0);
        }
        let (theta, residual) = linalg::lstsq(&a, &rhs, self.tol.rank);
        (theta, residual, linalg::rank(&a, self.tol.rank))
    }

    /// Violation of the componentwise tangency conditions for fixed `(u, θ)`.
    fn component_defect(&self, u: &DVector<f64>, zeta: &DVector<f64>, apex: &[DVector<f64>]) -> f64 {
        let mut d: f64 = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            let v = r.b.dot(u);
            match r.kind {
                RowKind::Equality => d = d.max(v.abs()),
                RowKind::Complementary => {
                    let z = zeta[i];
                    d = d.max(v.max(0.0)).max((-z).max(0.0)).max(v.abs().min(z.abs()));
                }
            }
        }
        for (b, xi) in self.curved_blocks().zip(apex) {
            let v = &b.jac * u;
            let kv = (b.spec.project(&v) - &v).norm();
            let kx = b.spec.project(xi).norm();
            d = d.max(kv).max(kx).max(v.dot(xi).abs());
        }
        d
    }

    /// Distance-like defect of `(u, u*)` from the graph tangent cone.
    pub fn tangent_defect(&self, u: &DVector<f64>, ustar: &DVector<f64>) -> f64 {
        let (theta, residual, _) = self.solve_xi(u, ustar);
        let (zeta, apex) = self.split_theta(&theta);
        residual.max(self.component_defect(u, &zeta, &apex))
    }

    /// `(u, u*) ∈ T_{Gr N̂_Γ}(x̄, x̄*)`: returns the unique `ξ`.
    pub fn gamma_graph_tangent(&self, u: &DVector<f64>, ustar: &DVector<f64>) -> Result<GraphTangent, ChainError> {
        let scale = u.norm().max(ustar.norm()).max(1.0);
        let (theta, residual, rank) = self.solve_xi(u, ustar);
        if residual > self.tol.residual * scale {
            return Err(ChainError::NotTangent(format!(
                "u* − ∇²⟨λ̄,g⟩u is not in the range of ∇gᵀ (residual {residual:.3e})"
            )));
        }
        let (zeta, apex_xi) = self.split_theta(&theta);
        let defect = self.component_defect(u, &zeta, &apex_xi);
        if defect > self.tol.residual * scale {
            return Err(ChainError::NotTangent(format!(
                "(∇g u, ξ) violates the tangent cone of the graph of N_D by {defect:.3e}"
            )));
        }
        Ok(GraphTangent {
            xi: self.xi_of(u, &zeta, &apex_xi),
            unique: rank == theta.len(),
            zeta,
            apex_xi,
            rank,
        })
    }

    fn rules_for(&self, tangent: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<Vec<ComponentRule>, ChainError> {
        let tol = self.tol.activity.max(self.tol.residual);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.kind == RowKind::Equality {
                    return Ok(ComponentRule::FreeOutputZeroInput);
                }
                Ok(match tangent {
                    Some((u, zeta)) => orthant_rule(i, 0.0, r.mu, r.b.dot(u), zeta[i], tol)?,
                    None => orthant_rule(i, 0.0, r.mu, 0.0, 0.0, tol)?,
                })
            })
            .collect()
    }

    /// `D*N̂_Γ((x̄,x̄*); (u,u*))(w)` as a structured set.
    pub fn gamma_dirlim_coderiv(
        &self,
        u: &DVector<f64>,
        ustar: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<CoderivSet, ChainError> {
        if self.has_curved_blocks() {
            return Err(ChainError::Unsupported(
                "structured coderivative sets for Lorentz blocks of dimension ≥ 3".into(),
            ));
        }
        let t = self.gamma_graph_tangent(u, ustar)?;
        let rules = self.rules_for(Some((u, &t.zeta)))?;
        Ok(self.coderiv_set(&rules, w))
    }

    /// `D̂*N̂_Γ(x̄, x̄*)(w)`.
    pub fn gamma_regular_coderiv(&self, w: &DVector<f64>) -> Result<CoderivSet, ChainError> {
        if self.has_curved_blocks() {
            return Err(ChainError::Unsupported(
                "structured coderivative sets for Lorentz blocks of dimension ≥ 3".into(),
            ));
        }
        let tol = self.tol.activity.max(self.tol.residual);
        let rules = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| match r.kind {
                RowKind::Equality => Ok(ComponentRule::FreeOutputZeroInput),
                RowKind::Complementary => orthant_regular_rule(i, 0.0, r.mu, tol),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.coderiv_set(&rules, w))
    }

    fn coderiv_set(&self, rules: &[ComponentRule], w: &DVector<f64>) -> CoderivSet {
        let tol = self.tol.residual * w.norm().max(1.0);
        CoderivSet {
            offset: self.second_order() * w,
            generators: self.rows.iter().map(|r| r.b.clone()).collect(),
            images: rules
                .iter()
                .zip(&self.rows)
                .map(|(rule, r)| rule.image(r.b.dot(w), tol))
                .collect(),
        }
    }
}

/// `offset + Σ ηᵢ bᵢ` with `ηᵢ` ranging over `images[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoderivSet {
    pub offset: DVector<f64>,
    pub generators: Vec<DVector<f64>>,
    pub images: Vec<ComponentImage>,
}

impl CoderivSet {
    pub fn is_empty(&self) -> bool {
        self.images.contains(&ComponentImage::Empty)
    }

    /// The set is `{offset}` when every free component vanishes.
    pub fn is_singleton(&self) -> bool {
        !self.is_empty() && self.images.iter().all(|&i| i == ComponentImage::Zero)
    }

    pub fn contains(&self, wstar: &DVector<f64>, tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let k = self.generators.len();
        let n = self.offset.len();
        let target = wstar - &self.offset;
        if k == 0 {
            return target.norm() <= tol;
        }
        // feasibility of Σ ηᵢbᵢ = target with ηᵢ in its image (slack-minimizing LP)
        let nv = k + 2 * n;
        let mut lp = LinearProgram::new(nv);
        for row in 0..n {
            let mut r = vec![0.0; nv];
            for (i, g) in self.generators.iter().enumerate() {
                r[i] = g[row];
            }
            r[k + row] = 1.0;
            r[k + n + row] = -1.0;
            lp.eq(&r, target[row]);
        }
        for (i, img) in self.images.iter().enumerate() {
            match img {
                ComponentImage::Zero => lp.bound(i, 0.0, 0.0),
                ComponentImage::NonNegative => lp.bound(i, 0.0, f64::INFINITY),
                _ => lp.bound(i, f64::NEG_INFINITY, f64::INFINITY),
            };
        }
        for j in k..nv {
            lp.bound(j, 0.0, f64::INFINITY);
        }
        let mut obj = vec![0.0; nv];
        for o in obj.iter_mut().skip(k) {
            *o = -1.0;
        }
        lp.maximize(&obj).value().is_some_and(|v| -v <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::assemble_reference;
    use crate::fixtures;
    use crate::ProblemFile;
    use nalgebra::dvector;

    fn model(spec: &crate::ProblemSpec) -> ReducedModel {
        reduce(&assemble_reference(spec), &spec.cone, &Tolerances::default()).unwrap()
    }

    fn spec_of(h: &[&str], g: &[&str], cone: ConeSpec, x: Vec<f64>) -> crate::ProblemSpec {
        let n = x.len();
        crate::ProblemSpec::from_file(ProblemFile {
            name: "t".into(),
            parameters: vec!["p".into()],
            variables: (1..=n).map(|i| format!("x{i}")).collect(),
            h: h.iter().map(|s| s.to_string()).collect(),
            g: g.iter().map(|s| s.to_string()).collect(),
            cone,
            reference: crate::exprs::ReferencePoint { p: vec![0.0], x },
        })
        .unwrap()
    }

    #[test]
    fn multipliers_of_the_reference_problems() {
        let tol = Tolerances::default();
        for spec in [fixtures::example1(), fixtures::example2()] {
            let m = recover_multiplier(&assemble_reference(&spec), &spec.cone, &tol).unwrap();
            assert_eq!(m.lambda, vec![0.0, 0.0]);
        }
        let m = recover_multiplier(&assemble_reference(&fixtures::quadratic()), &ConeSpec::OrthantNonpositive { dim: 1 }, &tol)
            .unwrap();
        assert!((m.lambda[0] - 1.0).abs() < 1e-12);

        let spec = spec_of(&["x1 - 2", "x2 - 3"], &["x1", "x2"], ConeSpec::OrthantNonpositive { dim: 2 }, vec![0.0, 0.0]);
        let m = recover_multiplier(&assemble_reference(&spec), &spec.cone, &tol).unwrap();
        assert!((m.lambda[0] - 2.0).abs() < 1e-12 && (m.lambda[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nondegeneracy_examples() {
        let tol = Tolerances::default();
        for spec in [fixtures::example1(), fixtures::example2()] {
            let nd = check_nondegeneracy(&assemble_reference(&spec), &spec.cone, &tol).unwrap();
            assert!(nd.holds);
            assert_eq!(nd.rank, 2);
        }
        let spec = spec_of(&["x1 - p", "x2"], &["x1", "x1"], ConeSpec::OrthantNonpositive { dim: 2 }, vec![0.0, 0.0]);
        let data = assemble_reference(&spec);
        let nd = check_nondegeneracy(&data, &spec.cone, &tol).unwrap();
        assert!(!nd.holds);
        assert_eq!((nd.rank, nd.rows), (1, 2));
        assert!(matches!(reduce(&data, &spec.cone, &tol), Err(ChainError::Degenerate { .. })));
    }

    #[test]
    fn infeasible_and_non_normal_references_are_errors() {
        let tol = Tolerances::default();
        let spec = spec_of(&["x1 - p"], &["x1"], ConeSpec::OrthantNonpositive { dim: 1 }, vec![1.0]);
        assert!(matches!(reduce(&assemble_reference(&spec), &spec.cone, &tol), Err(ChainError::Infeasible(_))));
        // x* = (−1) would need λ = −1
        let spec = spec_of(&["x1 + 1"], &["x1"], ConeSpec::OrthantNonpositive { dim: 1 }, vec![0.0]);
        assert!(matches!(reduce(&assemble_reference(&spec), &spec.cone, &tol), Err(ChainError::NotNormal(_))));
    }

    #[test]
    fn tangent_of_first_example_branch() {
        let m = model(&fixtures::example1());
        for q in [-1.0, -0.25] {
            // ξ = 0 forces u* = ∇gᵀξ = 0 on this branch
            let t = m.gamma_graph_tangent(&dvector![q, 0.0], &dvector![0.0, 0.0]).unwrap();
            assert_eq!(t.xi, dvector![0.0, 0.0]);
            assert!(t.unique);
            assert!(m.gamma_graph_tangent(&dvector![q, 0.0], &dvector![q, 0.0]).is_err());
        }
    }

    #[test]
    fn range_failure_is_not_tangent() {
        let spec = spec_of(&["x1 - p", "x2"], &["x1"], ConeSpec::OrthantNonpositive { dim: 1 }, vec![0.0, 0.0]);
        let m = model(&spec);
        assert!(matches!(
            m.gamma_graph_tangent(&dvector![0.0, 0.0], &dvector![0.0, 1.0]),
            Err(ChainError::NotTangent(_))
        ));
    }

    #[test]
    fn quadratic_tangent_has_xi_equal_to_slope() {
        let m = model(&fixtures::quadratic());
        for s in [-2.0, 0.0, 0.5, 3.0] {
            let t = m.gamma_graph_tangent(&dvector![1.0, 0.0], &dvector![2.0, s]).unwrap();
            assert!((t.xi[0] - s).abs() < 1e-12);
        }
        let set = m.gamma_dirlim_coderiv(&dvector![1.0, 0.0], &dvector![2.0, 0.0], &dvector![1.0, 0.0]).unwrap();
        assert!((&set.offset - dvector![2.0, 0.0]).norm() < 1e-12);
        assert!(set.contains(&dvector![2.0, 7.0], 1e-9));
        assert!(!set.contains(&dvector![2.5, 7.0], 1e-9));
        let reg = m.gamma_regular_coderiv(&dvector![1.0, 0.0]).unwrap();
        assert!(reg.contains(&dvector![2.0, -1.0], 1e-9));
    }

    #[test]
    fn first_example_coderivative_on_the_interior_branch_is_zero() {
        let m = model(&fixtures::example1());
        for w in [dvector![1.0, 0.0], dvector![-0.3, 2.0]] {
            let set = m.gamma_dirlim_coderiv(&dvector![-1.0, 0.0], &dvector![0.0, 0.0], &w).unwrap();
            assert!(set.is_singleton());
            assert_eq!(set.offset, dvector![0.0, 0.0]);
        }
    }

    #[test]
    fn zero_direction_reduces_to_limiting_union() {
        let spec = spec_of(&["x1 - p", "x2"], &["x1", "x2"], ConeSpec::OrthantNonpositive { dim: 2 }, vec![0.0, 0.0]);
        let m = model(&spec);
        let z = dvector![0.0, 0.0];
        let set = m.gamma_dirlim_coderiv(&z, &z, &dvector![1.0, -1.0]).unwrap();
        assert_eq!(set.images, vec![ComponentImage::NonNegative, ComponentImage::Zero]);
        let set = m.gamma_dirlim_coderiv(&z, &z, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(set.images, vec![ComponentImage::Real, ComponentImage::Real]);
        // the regular coderivative only sees the corner
        let reg = m.gamma_regular_coderiv(&dvector![1.0, -1.0]).unwrap();
        assert!(reg.is_empty());
    }

    #[test]
    fn tangent_is_positively_homogeneous() {
        let m = model(&fixtures::example1());
        let u = dvector![-2.0, -1.0];
        let ustar = dvector![1.5, -3.0];
        let t = m.gamma_graph_tangent(&u, &ustar).unwrap();
        assert!((&t.zeta - dvector![3.0, 0.0]).norm() < 1e-12);
        for s in [0.5, 2.0, 10.0] {
            let ts = m.gamma_graph_tangent(&(&u * s), &(&ustar * s)).unwrap();
            assert!((ts.xi - &t.xi * s).norm() <= 1e-12);
        }
    }

    #[test]
    fn second_example_keeps_the_planar_apex_block() {
        let m = model(&fixtures::example2());
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.apex_blocks.len(), 1);
        assert_eq!(m.apex_blocks[0].facet_rows, vec![0, 1]);
        assert_eq!(m.b_matrix(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, -2.0]));
    }

    #[test]
    fn boundary_lorentz_block_gets_curvature() {
        // g(x) = (x1, x2, x3) at (1, 0, 1) with axis last: on the boundary of 𝒦₃
        let spec = spec_of(
            &["x1 - 1 + p", "x2", "x3 - 1"],
            &["x1", "x2", "x3"],
            ConeSpec::LorentzProduct { blocks: vec![3], axis: crate::cones::Axis::Last },
            vec![1.0, 0.0, 1.0],
        );
        let data = assemble_reference(&spec);
        // x* = −H = (0,0,0) here; shift x* onto the normal direction (1,0,−1)
        let mut data2 = data.clone();
        data2.x_star = dvector![1.0, 0.0, -1.0];
        let m = reduce(&data2, &spec.cone, &Tolerances::default()).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].kind, RowKind::Equality);
        assert!((m.rows[0].mu - 1.0).abs() < 1e-12);
        assert!((m.curvature[(1, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(m.curvature[(0, 0)], 0.0);
        let m0 = reduce(&data, &spec.cone, &Tolerances::default()).unwrap();
        assert_eq!(m0.rows[0].kind, RowKind::Complementary);
    }
}
