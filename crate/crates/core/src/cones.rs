//! Polyhedral cone geometry and the componentwise calculus of the
//! nonpositive orthant.
//!
//! Conventions: an inequality row `a` describes the halfspace `{v | a·v ≤ 0}`;
//! coderivative components are tagged sets, never point clouds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::lorentz::LorentzSpec;
use crate::lp::{LinearProgram, LpOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    First,
    Last,
}

/// The closed cone `D` in `Γ = g⁻¹(D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConeSpec {
    OrthantNonpositive { dim: usize },
    /// `{z | aᵢ·z ≤ 0 for every row aᵢ}`.
    PolyhedralHrep { rows: Vec<Vec<f64>> },
    LorentzProduct { blocks: Vec<usize>, axis: Axis },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConeError {
    #[error("point is not in the cone (violation {violation:.3e})")]
    NotInCone { violation: f64 },
    #[error("vector is not a regular normal at the given point: {0}")]
    NotInNormalCone(String),
    #[error("({0}) is not on the graph of the normal-cone map")]
    NotInGraph(String),
    #[error("direction is not tangent to the graph at component {index}")]
    NotTangent { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    Unsupported(String),
}

impl ConeSpec {
    pub fn dim(&self) -> Result<usize, String> {
        match self {
            ConeSpec::OrthantNonpositive { dim } => {
                if *dim == 0 {
                    Err("orthant dimension must be at least 1".into())
                } else {
                    Ok(*dim)
                }
            }
            ConeSpec::PolyhedralHrep { rows } => {
                let first = rows.first().ok_or("H-representation needs at least one row")?;
                let s = first.len();
                if s == 0 {
                    return Err("H-representation rows must be nonempty".into());
                }
                for (i, r) in rows.iter().enumerate() {
                    if r.len() != s {
                        return Err(format!("row {i} has length {}, expected {s}", r.len()));
                    }
                    if r.iter().any(|a| !a.is_finite()) {
                        return Err(format!("row {i} has a non-finite entry"));
                    }
                    if r.iter().all(|&a| a == 0.0) {
                        return Err(format!("row {i} is zero"));
                    }
                }
                Ok(s)
            }
            ConeSpec::LorentzProduct { blocks, .. } => {
                if blocks.is_empty() || blocks.contains(&0) {
                    Err("Lorentz blocks must be nonempty with dimensions ≥ 1".into())
                } else {
                    Ok(blocks.iter().sum())
                }
            }
        }
    }

    /// Lorentz blocks with their offsets into `ℝˢ`.
    pub fn lorentz_blocks(&self) -> Vec<(usize, LorentzSpec)> {
        match self {
            ConeSpec::LorentzProduct { blocks, axis } => {
                let mut off = 0;
                blocks
                    .iter()
                    .map(|&b| {
                        let item = (off, LorentzSpec::new(b, *axis));
                        off += b;
                        item
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Halfspace rows when `D` is polyhedral (Lorentz blocks of dimension ≤ 2 are).
    pub fn polyhedral_rows(&self) -> Option<DMatrix<f64>> {
        let s = self.dim().ok()?;
        match self {
            ConeSpec::OrthantNonpositive { dim } => Some(DMatrix::identity(*dim, *dim)),
            ConeSpec::PolyhedralHrep { rows } => Some(DMatrix::from_fn(rows.len(), s, |i, j| rows[i][j])),
            ConeSpec::LorentzProduct { .. } => {
                let mut out: Vec<DVector<f64>> = Vec::new();
                for (off, block) in self.lorentz_blocks() {
                    for r in block.hrep_rows()? {
                        let mut full = DVector::zeros(s);
                        full.rows_mut(off, block.dim).copy_from(&r);
                        out.push(full);
                    }
                }
                Some(linalg::rows_to_matrix(&out, s))
            }
        }
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        match self {
            ConeSpec::LorentzProduct { .. } => self
                .lorentz_blocks()
                .iter()
                .all(|(off, b)| b.contains(&z.rows(*off, b.dim).into_owned(), tol)),
            _ => {
                let a = self.polyhedral_rows().expect("polyhedral variant");
                (a * z).iter().all(|&x| x <= tol)
            }
        }
    }

    /// Euclidean projection onto `D`. Halfspace cones go through active-set
    /// enumeration, which is exponential in the row count but exact.
    pub fn project(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            ConeSpec::OrthantNonpositive { .. } => w.map(|x| x.min(0.0)),
            ConeSpec::LorentzProduct { .. } => {
                let mut out = w.clone();
                for (off, b) in self.lorentz_blocks() {
                    let p = b.project(&w.rows(off, b.dim).into_owned());
                    out.rows_mut(off, b.dim).copy_from(&p);
                }
                out
            }
            ConeSpec::PolyhedralHrep { .. } => {
                let a = self.polyhedral_rows().expect("polyhedral variant");
                project_hrep(&a, w)
            }
        }
    }
}

fn project_hrep(a: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let m = a.nrows();
    let tol = 1e-12 * w.norm().max(1.0);
    if (a * w).iter().all(|&x| x <= tol) {
        return w.clone();
    }
    let mut best: Option<DVector<f64>> = None;
    for mask in 1u64..(1u64 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let aj = DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)]);
        let (mu, _) = linalg::lstsq(&(&aj * aj.transpose()), &(&aj * w), 1e-12);
        if mu.iter().any(|&x| x < -tol) {
            continue;
        }
        let y = w - aj.transpose() * mu;
        if (a * &y).iter().all(|&x| x <= tol * 10.0) && best.as_ref().is_none_or(|b| (&y - w).norm() < (b - w).norm()) {
            best = Some(y);
        }
    }
    // the apex is always feasible
    best.unwrap_or_else(|| DVector::zeros(w.len()))
}

/// Nonnegative `μ` with `Σ μᵢ gensᵢ = target` up to `tol` in the 1-norm.
pub fn nonneg_combination(
    gens: &[DVector<f64>],
    target: &DVector<f64>,
    tol: f64,
) -> Option<DVector<f64>> {
    let k = gens.len();
    let s = target.len();
    if k == 0 {
        return (target.norm() <= tol).then(|| DVector::zeros(0));
    }
    // variables: μ (k), slack⁺ (s), slack⁻ (s); minimize Σ slack.
    let nv = k + 2 * s;
    let mut lp = LinearProgram::new(nv);
    lp.bound_all(0.0, f64::INFINITY);
    for j in 0..s {
        let mut row = vec![0.0; nv];
        for (i, g) in gens.iter().enumerate() {
            row[i] = g[j];
        }
        row[k + j] = -1.0;
        row[k + s + j] = 1.0;
        lp.eq(&row, target[j]);
    }
    let mut obj = vec![0.0; nv];
    for o in obj.iter_mut().skip(k) {
        *o = -1.0;
    }
    match lp.maximize(&obj) {
        LpOutcome::Optimal { x, value } if -value <= tol => Some(x.rows(0, k).into_owned()),
        _ => None,
    }
}

/// A cone `{v | E v = 0, A v ≤ 0}` kept together with its generators.
#[derive(Debug, Clone)]
pub struct PolyhedralCone {
    dim: usize,
    eq: Vec<DVector<f64>>,
    ineq: Vec<DVector<f64>>,
    /// Orthonormal basis of the lineality space, as columns.
    lineality: DMatrix<f64>,
    /// Extreme rays of the pointed part (unit length).
    rays: Vec<DVector<f64>>,
    tol: f64,
}

/// A face: the active inequality rows, the rays spanning it (together with
/// the lineality space) and a point of its relative interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub active: Vec<usize>,
    pub rays: Vec<DVector<f64>>,
    pub witness: DVector<f64>,
}

const GEOMETRY_TOL: f64 = 1e-9;

impl PolyhedralCone {
    pub fn from_hrep(dim: usize, eq: Vec<DVector<f64>>, ineq: Vec<DVector<f64>>) -> Self {
        let tol = GEOMETRY_TOL;
        let all: Vec<DVector<f64>> = eq.iter().chain(ineq.iter()).cloned().collect();
        let lineality = linalg::nullspace(&linalg::rows_to_matrix(&all, dim), 1e-10);
        let mut cone = Self {
            dim,
            eq,
            ineq,
            lineality,
            rays: Vec::new(),
            tol,
        };
        cone.rays = cone.compute_rays();
        cone
    }

    pub fn orthant(dim: usize) -> Self {
        let ineq = (0..dim).map(|i| unit(dim, i)).collect();
        Self::from_hrep(dim, Vec::new(), ineq)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eq_rows(&self) -> &[DVector<f64>] {
        &self.eq
    }

    pub fn ineq_rows(&self) -> &[DVector<f64>] {
        &self.ineq
    }

    pub fn rays(&self) -> &[DVector<f64>] {
        &self.rays
    }

    pub fn lineality(&self) -> &DMatrix<f64> {
        &self.lineality
    }

    fn compute_rays(&self) -> Vec<DVector<f64>> {
        let k = self.ineq.len();
        assert!(k <= 20, "face enumeration is exponential in the number of rows");
        let mut base: Vec<DVector<f64>> = self.eq.clone();
        for c in self.lineality.column_iter() {
            base.push(c.into_owned());
        }
        let mut rays: Vec<DVector<f64>> = Vec::new();
        for mask in 0u32..(1 << k) {
            if mask.count_ones() as usize >= self.dim {
                continue;
            }
            let mut rows = base.clone();
            rows.extend((0..k).filter(|i| mask & (1 << i) != 0).map(|i| self.ineq[i].clone()));
            let null = linalg::nullspace(&linalg::rows_to_matrix(&rows, self.dim), 1e-10);
            if null.ncols() != 1 {
                continue;
            }
            let r = null.column(0).normalize();
            for cand in [r.clone(), -r] {
                let ok = self.ineq.iter().all(|a| a.dot(&cand) <= self.tol);
                if ok && !rays.iter().any(|x| (x - &cand).norm() <= 1e-9) {
                    rays.push(cand);
                }
            }
        }
        rays
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        let scale = v.norm().max(1.0);
        self.eq.iter().all(|e| e.dot(v).abs() <= tol * scale)
            && self.ineq.iter().all(|a| a.dot(v) <= tol * scale)
    }

    /// `C° = {y | ⟨y, x⟩ ≤ 0 ∀x ∈ C}`: inequalities from the rays, equalities
    /// from the lineality space.
    pub fn polar(&self) -> PolyhedralCone {
        let eq = self.lineality.column_iter().map(|c| c.into_owned()).collect();
        PolyhedralCone::from_hrep(self.dim, eq, self.rays.clone())
    }

    /// All faces, ordered by their active sets.
    pub fn faces(&self) -> Vec<Face> {
        let k = self.ineq.len();
        let mut faces: Vec<Face> = Vec::new();
        for mask in 0u32..(1 << k) {
            let rays: Vec<DVector<f64>> = self
                .rays
                .iter()
                .filter(|r| {
                    (0..k)
                        .filter(|i| mask & (1 << i) != 0)
                        .all(|i| self.ineq[i].dot(r).abs() <= self.tol)
                })
                .cloned()
                .collect();
            let witness = rays
                .iter()
                .fold(DVector::zeros(self.dim), |acc, r| acc + r);
            let active: Vec<usize> = (0..k)
                .filter(|&i| self.ineq[i].dot(&witness).abs() <= self.tol)
                .collect();
            if !faces.iter().any(|f| f.active == active) {
                faces.push(Face {
                    active,
                    rays,
                    witness,
                });
            }
        }
        faces.sort_by(|a, b| a.active.cmp(&b.active));
        faces
    }

    /// Index of the face whose relative interior contains `v`.
    pub fn face_of(&self, v: &DVector<f64>, tol: f64) -> Option<usize> {
        if !self.contains(v, tol) {
            return None;
        }
        let scale = v.norm().max(1.0);
        let active: Vec<usize> = (0..self.ineq.len())
            .filter(|&i| self.ineq[i].dot(v).abs() <= tol * scale)
            .collect();
        self.faces().iter().position(|f| f.active == active)
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

/// `K = T_D(z) ∩ [λ]^⊥` for polyhedral `D`.
pub fn critical_cone(
    cone: &ConeSpec,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    tol: f64,
) -> Result<PolyhedralCone, ConeError> {
    let a = cone
        .polyhedral_rows()
        .ok_or_else(|| ConeError::Unsupported("critical cone needs a polyhedral cone".into()))?;
    let s = a.ncols();
    if z.len() != s || lambda.len() != s {
        return Err(ConeError::Dimension {
            expected: s,
            got: z.len().min(lambda.len()),
        });
    }
    let az = &a * z;
    let violation = az.iter().fold(0.0_f64, |m, &x| m.max(x));
    if violation > tol {
        return Err(ConeError::NotInCone { violation });
    }
    let active: Vec<usize> = (0..a.nrows()).filter(|&i| az[i].abs() <= tol).collect();
    let gens: Vec<DVector<f64>> = active.iter().map(|&i| a.row(i).transpose()).collect();
    let mu = nonneg_combination(&gens, lambda, tol.max(1e-9)).ok_or_else(|| {
        ConeError::NotInNormalCone(format!(
            "λ is not a nonnegative combination of the active rows {active:?}"
        ))
    })?;
    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    for (g, &m) in gens.into_iter().zip(mu.iter()) {
        if m > tol {
            eq.push(g);
        } else {
            ineq.push(g);
        }
    }
    Ok(PolyhedralCone::from_hrep(s, eq, ineq))
}

/// Admissible values of one output component of a coderivative of `N_{ℝ₋}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentImage {
    Zero,
    Real,
    NonNegative,
    Empty,
}

impl ComponentImage {
    pub fn contains(self, x: f64, tol: f64) -> bool {
        match self {
            ComponentImage::Zero => x.abs() <= tol,
            ComponentImage::Real => true,
            ComponentImage::NonNegative => x >= -tol,
            ComponentImage::Empty => false,
        }
    }

    pub fn is_subset_of(self, other: ComponentImage) -> bool {
        use ComponentImage::*;
        matches!(
            (self, other),
            (Empty, _) | (_, Real) | (Zero, Zero) | (Zero, NonNegative) | (NonNegative, NonNegative)
        )
    }
}

/// One linear piece of a component's coderivative graph, over the pair
/// `(w, η)` = (input, output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// `w = 0`, `η` free.
    InputZero,
    /// `η = 0`, `w` free.
    OutputZero,
    /// `w ≥ 0`, `η ≥ 0`.
    BothNonNegative,
}

/// How one orthant component's coderivative acts on its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRule {
    /// Output `{0}` for every input.
    ZeroOutput,
    /// Output `ℝ` if the input vanishes, else empty.
    FreeOutputZeroInput,
    /// The union of the three pieces of the limiting normal cone at the kink.
    LimitingUnion,
    /// The regular normal cone at the kink.
    RegularCorner,
}

impl ComponentRule {
    pub fn pieces(self) -> &'static [Piece] {
        match self {
            ComponentRule::ZeroOutput => &[Piece::OutputZero],
            ComponentRule::FreeOutputZeroInput => &[Piece::InputZero],
            ComponentRule::LimitingUnion => {
                &[Piece::InputZero, Piece::OutputZero, Piece::BothNonNegative]
            }
            ComponentRule::RegularCorner => &[Piece::BothNonNegative],
        }
    }

    pub fn image(self, w: f64, tol: f64) -> ComponentImage {
        match self {
            ComponentRule::ZeroOutput => ComponentImage::Zero,
            ComponentRule::FreeOutputZeroInput => {
                if w.abs() <= tol {
                    ComponentImage::Real
                } else {
                    ComponentImage::Empty
                }
            }
            ComponentRule::LimitingUnion => {
                if w.abs() <= tol {
                    ComponentImage::Real
                } else if w > 0.0 {
                    ComponentImage::NonNegative
                } else {
                    ComponentImage::Zero
                }
            }
            ComponentRule::RegularCorner => {
                if w >= -tol {
                    ComponentImage::NonNegative
                } else {
                    ComponentImage::Empty
                }
            }
        }
    }
}

fn check_graph(z: f64, lambda: f64, tol: f64, i: usize) -> Result<(), ConeError> {
    if z > tol || lambda < -tol || (z < -tol && lambda.abs() > tol) {
        return Err(ConeError::NotInGraph(format!(
            "component {i}: z = {z:e}, λ = {lambda:e}"
        )));
    }
    Ok(())
}

/// Directional rule for component `i` at `(z, λ)` in direction `(v, ξ)`.
pub fn orthant_rule(
    i: usize,
    z: f64,
    lambda: f64,
    v: f64,
    xi: f64,
    tol: f64,
) -> Result<ComponentRule, ConeError> {
    check_graph(z, lambda, tol, i)?;
    let not_tangent = ConeError::NotTangent { index: i };
    if z < -tol {
        return if xi.abs() <= tol { Ok(ComponentRule::ZeroOutput) } else { Err(not_tangent) };
    }
    if lambda > tol {
        return if v.abs() <= tol {
            Ok(ComponentRule::FreeOutputZeroInput)
        } else {
            Err(not_tangent)
        };
    }
    if v > tol || xi < -tol || (v.abs() > tol && xi.abs() > tol) {
        return Err(not_tangent);
    }
    Ok(if v < -tol {
        ComponentRule::ZeroOutput
    } else if xi > tol {
        ComponentRule::FreeOutputZeroInput
    } else {
        ComponentRule::LimitingUnion
    })
}

/// Rule of the regular coderivative of `N_{ℝ₋}` at `(z, λ)`.
pub fn orthant_regular_rule(i: usize, z: f64, lambda: f64, tol: f64) -> Result<ComponentRule, ConeError> {
    check_graph(z, lambda, tol, i)?;
    Ok(if z < -tol {
        ComponentRule::ZeroOutput
    } else if lambda > tol {
        ComponentRule::FreeOutputZeroInput
    } else {
        ComponentRule::RegularCorner
    })
}

fn check_lengths(expected: usize, vs: &[&DVector<f64>]) -> Result<(), ConeError> {
    for v in vs {
        if v.len() != expected {
            return Err(ConeError::Dimension {
                expected,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Whether `(v, ξ) ∈ T_{Gr N_{ℝˢ₋}}(z, λ)`.
pub fn orthant_graph_tangent(
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    v: &DVector<f64>,
    xi: &DVector<f64>,
    tol: f64,
) -> Result<bool, ConeError> {
    check_lengths(z.len(), &[lambda, v, xi])?;
    for i in 0..z.len() {
        check_graph(z[i], lambda[i], tol, i)?;
    }
    Ok((0..z.len()).all(|i| orthant_rule(i, z[i], lambda[i], v[i], xi[i], tol).is_ok()))
}

/// Componentwise image of the directional limiting coderivative of `N_{ℝˢ₋}`
/// at `(z, λ)` in direction `(v, ξ)`, applied to the input `w`.
pub fn orthant_dirlim_coderiv(
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    v: &DVector<f64>,
    xi: &DVector<f64>,
    w: &DVector<f64>,
    tol: f64,
) -> Result<Vec<ComponentImage>, ConeError> {
    check_lengths(z.len(), &[lambda, v, xi, w])?;
    (0..z.len())
        .map(|i| orthant_rule(i, z[i], lambda[i], v[i], xi[i], tol).map(|r| r.image(w[i], tol)))
        .collect()
}
