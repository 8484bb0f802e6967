//! Critical directions: all `(q, u, ξ)` with
//! `0 = ∇ₚH q + ∇ₓ𝓛 u + ∇gᵀξ`, `(∇g u, ξ) ∈ T_{Gr N_D}(g(x̄), λ̄)`.
//!
//! On the reduced model this is a homogeneous affine variational inequality
//! over the rows `bᵢ`. Faces are indexed by the set `J₀` of complementary rows
//! with `bᵢᵀu = 0`; within a face every row is in one of four states, and the
//! nonempty state patterns are found by small LPs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ReducedModel, RowKind};
use crate::linalg;
use crate::lorentz::Position;
use crate::lp::{LinearProgram, LpOutcome};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AviError {
    #[error("{0} complementary rows exceed the face enumeration limit of {1}")]
    TooManyRows(usize, usize),
    #[error("exact enumeration is not available: {0}")]
    Unsupported(String),
}

pub const MAX_COMPLEMENTARY_ROWS: usize = 16;

/// State of one reduced row along a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowState {
    /// Equality row: `bᵢᵀu = 0`, `ζᵢ` free.
    Eq,
    /// `bᵢᵀu < 0`, `ζᵢ = 0`.
    Neg,
    /// `bᵢᵀu = 0`, `ζᵢ > 0`.
    Pos,
    /// `bᵢᵀu = 0`, `ζᵢ = 0`.
    Bi,
}

/// Closed polyhedral cone of parameter directions `{ q | cᵀq ≤ 0 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub closure: Vec<Vec<f64>>,
}

impl Region {
    pub fn contains(&self, q: &DVector<f64>, tol: f64) -> bool {
        let scale = q.norm().max(1.0);
        self.closure
            .iter()
            .all(|c| c.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>() <= tol * scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BranchSolution {
    /// `u = U q`, `ζ = Z q`, `ξ = Ξ q` on the region.
    Linear {
        u: DMatrix<f64>,
        zeta: DMatrix<f64>,
        xi: DMatrix<f64>,
    },
    /// Singular face: the solutions form the polyhedral cone of `y = (q,u,ζ)`
    /// in the span of `basis` satisfying the face's sign conditions.
    Affine { basis: DMatrix<f64> },
}

/// A nonempty pattern of row states within a face.
#[derive(Debug, Clone, PartialEq)]
pub struct SubPattern {
    pub states: Vec<RowState>,
    /// A point `y = (q, u, ζ)` in the relative interior (zero-free where possible).
    pub representative: DVector<f64>,
    /// Whether the pattern contains a direction with `(q, u) ≠ 0`.
    pub nonzero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalBranch {
    pub face: Vec<usize>,
    pub region: Region,
    pub solution: BranchSolution,
    pub patterns: Vec<SubPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AviOptions {
    pub execution: Execution,
    pub seed: u64,
    /// Random unit `q` tested when coverage cannot be decided exactly.
    pub coverage_samples: usize,
    /// Parameter directions sampled on the Lorentz (`s ≥ 3`) path.
    pub curved_q_samples: usize,
    pub lp_tol: f64,
    pub residual_tol: f64,
}

impl Default for AviOptions {
    fn default() -> Self {
        Self {
            execution: Execution::Parallel,
            seed: 0,
            coverage_samples: 1000,
            curved_q_samples: 24,
            lp_tol: 1e-7,
            residual_tol: 1e-9,
        }
    }
}

/// Dimensions of `y = (q, u, ζ)`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub l: usize,
    pub n: usize,
    pub m: usize,
}

impl Layout {
    pub fn of(model: &ReducedModel) -> Self {
        Self {
            l: model.l(),
            n: model.n(),
            m: model.m(),
        }
    }

    pub fn width(&self) -> usize {
        self.l + self.n + self.m
    }

    pub fn q(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.l).into_owned()
    }

    pub fn u(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.l, self.n).into_owned()
    }

    pub fn zeta(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.l + self.n, self.m).into_owned()
    }
}

/// Linear data of one face: `E y = 0` plus sign rows (`rᵀy ≤ 0`).
struct FaceSystem {
    eq: DMatrix<f64>,
    /// `(row index, coefficient row)` for closure inequalities.
    signs: Vec<(usize, DVector<f64>)>,
}

fn u_row(lay: &Layout, b: &DVector<f64>) -> DVector<f64> {
    let mut r = DVector::zeros(lay.width());
    r.rows_mut(lay.l, lay.n).copy_from(b);
    r
}

fn zeta_row(lay: &Layout, i: usize, coeff: f64) -> DVector<f64> {
    let mut r = DVector::zeros(lay.width());
    r[lay.l + lay.n + i] = coeff;
    r
}

fn face_system(model: &ReducedModel, face: &[usize]) -> FaceSystem {
    let lay = Layout::of(model);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let p = &model.data.grad_p_h;
    let b = model.b_matrix();
    for k in 0..lay.n {
        let mut r = DVector::zeros(lay.width());
        for j in 0..lay.l {
            r[j] = p[(k, j)];
        }
        for j in 0..lay.n {
            r[lay.l + j] = model.lagrangian[(k, j)];
        }
        for i in 0..lay.m {
            r[lay.l + lay.n + i] = b[(i, k)];
        }
        rows.push(r);
    }
    let mut signs = Vec::new();
    for (i, row) in model.rows.iter().enumerate() {
        if row.kind == RowKind::Equality || face.contains(&i) {
            rows.push(u_row(&lay, &row.b));
            if row.kind == RowKind::Complementary {
                signs.push((i, zeta_row(&lay, i, -1.0)));
            }
        } else {
            rows.push(zeta_row(&lay, i, 1.0));
            signs.push((i, u_row(&lay, &row.b)));
        }
    }
    FaceSystem {
        eq: linalg::rows_to_matrix(&rows, lay.width()),
        signs,
    }
}

fn complementary_rows(model: &ReducedModel) -> Vec<usize> {
    (0..model.m()).filter(|&i| model.rows[i].kind == RowKind::Complementary).collect()
}

/// Maximizes the common strictness `t` of the strict rows within the box.
fn strict_point(eq: &DMatrix<f64>, strict: &[DVector<f64>], width: usize, lp_tol: f64) -> Option<DVector<f64>> {
    let mut lp = LinearProgram::new(width + 1);
    for r in eq.row_iter() {
        let mut row: Vec<f64> = r.iter().copied().collect();
        row.push(0.0);
        lp.eq(&row, 0.0);
    }
    for s in strict {
        let mut row: Vec<f64> = s.iter().copied().collect();
        row.push(1.0);
        lp.le(&row, 0.0);
    }
    lp.bound_all(-1.0, 1.0);
    lp.bound(width, 0.0, 1.0);
    let mut obj = vec![0.0; width + 1];
    obj[width] = 1.0;
    match lp.maximize(&obj) {
        LpOutcome::Optimal { x, value } if value > lp_tol => Some(x.rows(0, width).into_owned()),
        _ => None,
    }
}

fn qu_part_nonzero(lay: &Layout, basis: &DMatrix<f64>, tol: f64) -> Option<DVector<f64>> {
    (0..basis.ncols())
        .map(|j| basis.column(j).into_owned())
        .find(|c| c.rows(0, lay.l + lay.n).norm() > tol)
}

fn patterns_of(model: &ReducedModel, face: &[usize], sys: &FaceSystem, opts: &AviOptions) -> Vec<SubPattern> {
    let lay = Layout::of(model);
    let jf: Vec<usize> = face.to_vec();
    let mut out = Vec::new();
    for mask in 0..(1usize << jf.len()) {
        let mut states: Vec<RowState> = model
            .rows
            .iter()
            .map(|r| if r.kind == RowKind::Equality { RowState::Eq } else { RowState::Neg })
            .collect();
        let mut eq_rows: Vec<DVector<f64>> = sys.eq.row_iter().map(|r| r.transpose()).collect();
        let mut strict = Vec::new();
        for (k, &i) in jf.iter().enumerate() {
            if mask & (1 << k) != 0 {
                states[i] = RowState::Pos;
                strict.push(zeta_row(&lay, i, -1.0));
            } else {
                states[i] = RowState::Bi;
                eq_rows.push(zeta_row(&lay, i, 1.0));
            }
        }
        for (i, r) in &sys.signs {
            if states[*i] == RowState::Neg {
                strict.push(r.clone());
            }
        }
        let eq = linalg::rows_to_matrix(&eq_rows, lay.width());
        if strict.is_empty() {
            let basis = linalg::nullspace(&eq, model.tol.rank);
            let rep = qu_part_nonzero(&lay, &basis, 1e-9);
            out.push(SubPattern {
                states,
                nonzero: rep.is_some(),
                representative: rep.unwrap_or_else(|| DVector::zeros(lay.width())),
            });
        } else if let Some(y) = strict_point(&eq, &strict, lay.width(), opts.lp_tol) {
            let y = polish(&eq, &y);
            out.push(SubPattern {
                states,
                nonzero: true,
                representative: y,
            });
        }
    }
    out
}

/// Projects an LP point back onto the equality subspace.
fn polish(eq: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if eq.nrows() == 0 {
        return y.clone();
    }
    linalg::project_to_kernel(eq, y, 1e-12)
}

fn fmt_coef(c: f64) -> String {
    let r = (c * 1e9).round() / 1e9;
    format!("{r}")
}

fn region_label(l: usize, closure: &[Vec<f64>]) -> String {
    if closure.is_empty() {
        return "all q".into();
    }
    if l == 1 {
        let le = closure.iter().any(|c| c[0] > 0.0);
        let ge = closure.iter().any(|c| c[0] < 0.0);
        return match (le, ge) {
            (true, true) => "q = 0".into(),
            (true, false) => "q <= 0".into(),
            (false, true) => "q >= 0".into(),
            (false, false) => "all q".into(),
        };
    }
    closure
        .iter()
        .map(|c| {
            let terms: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 1e-12)
                .map(|(j, v)| format!("{}*q{}", fmt_coef(*v), j + 1))
                .collect();
            format!("{} <= 0", terms.join(" + "))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn analyze_face(model: &ReducedModel, face: Vec<usize>, opts: &AviOptions) -> Option<CriticalBranch> {
    let lay = Layout::of(model);
    let sys = face_system(model, &face);
    let patterns: Vec<SubPattern> = patterns_of(model, &face, &sys, opts)
        .into_iter()
        .filter(|p| p.nonzero)
        .collect();
    if patterns.is_empty() {
        return None;
    }
    // (u, ζ) block of the face system
    let muz = sys.eq.columns(lay.l, lay.n + lay.m).into_owned();
    let pq = sys.eq.columns(0, lay.l).into_owned();
    let sq = lay.n + lay.m;
    let (solution, region) = match linalg::solve_square(&muz, &(-&pq), model.tol.rank) {
        Some(sol) if muz.nrows() == sq => {
            let u = sol.rows(0, lay.n).into_owned();
            let zeta = sol.rows(lay.n, lay.m).into_owned();
            let xi = model.r_matrix().transpose() * &zeta + &model.curvature * &model.data.jac_g * &u;
            let mut full = DMatrix::zeros(lay.width(), lay.l);
            full.view_mut((0, 0), (lay.l, lay.l)).copy_from(&DMatrix::identity(lay.l, lay.l));
            full.view_mut((lay.l, 0), (sq, lay.l)).copy_from(&sol);
            let closure: Vec<Vec<f64>> = sys
                .signs
                .iter()
                .map(|(_, r)| (r.transpose() * &full).transpose())
                .filter(|c| c.norm() > 1e-12)
                .map(|c| c.iter().copied().collect())
                .collect();
            let label = region_label(lay.l, &closure);
            (BranchSolution::Linear { u, zeta, xi }, Region { label, closure })
        }
        _ => (
            BranchSolution::Affine {
                basis: linalg::nullspace(&sys.eq, model.tol.rank),
            },
            Region {
                label: "projection of a polyhedral cone (singular face)".into(),
                closure: Vec::new(),
            },
        ),
    };
    Some(CriticalBranch {
        face,
        region,
        solution,
        patterns,
    })
}

/// Enumerates all faces with a nonzero critical direction, sorted by face.
pub fn enumerate_critical_branches(model: &ReducedModel, opts: &AviOptions) -> Result<Vec<CriticalBranch>, AviError> {
    if model.has_curved_blocks() {
        return Err(AviError::Unsupported(
            "Lorentz blocks of dimension ≥ 3 at the apex use the sampled path".into(),
        ));
    }
    let comp = complementary_rows(model);
    if comp.len() > MAX_COMPLEMENTARY_ROWS {
        return Err(AviError::TooManyRows(comp.len(), MAX_COMPLEMENTARY_ROWS));
    }
    let mut faces: Vec<Vec<usize>> = (0..(1usize << comp.len()))
        .map(|mask| {
            comp.iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect()
        })
        .collect();
    faces.sort();
    let found = par::map_ordered(opts.execution, &faces, |f| analyze_face(model, f.clone(), opts));
    Ok(found.into_iter().flatten().collect())
}

impl CriticalBranch {
    /// Whether some solution of this face exists at `q`.
    pub fn contains_q(&self, model: &ReducedModel, q: &DVector<f64>, opts: &AviOptions) -> bool {
        match &self.solution {
            BranchSolution::Linear { .. } => self.region.contains(q, opts.residual_tol),
            BranchSolution::Affine { .. } => self.solve_at(model, q).is_some(),
        }
    }

    /// A solution `(u, ζ)` at `q` for singular faces (LP with `q` fixed).
    fn solve_at(&self, model: &ReducedModel, q: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let lay = Layout::of(model);
        let sys = face_system(model, &self.face);
        let w = lay.width();
        let mut lp = LinearProgram::new(w);
        for r in sys.eq.row_iter() {
            let row: Vec<f64> = r.iter().copied().collect();
            lp.eq(&row, 0.0);
        }
        for (_, r) in &sys.signs {
            let row: Vec<f64> = r.iter().copied().collect();
            lp.le(&row, 0.0);
        }
        let bound = 1e6 * q.norm().max(1.0);
        lp.bound_all(-bound, bound);
        for j in 0..lay.l {
            lp.bound(j, q[j], q[j]);
        }
        match lp.maximize(&vec![0.0; w]) {
            LpOutcome::Optimal { x, .. } => {
                let y = x;
                Some((lay.u(&y), lay.zeta(&y)))
            }
            _ => None,
        }
    }
}

/// One element of `DS(p̄,x̄)(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsElement {
    pub face: Vec<usize>,
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
    /// Directions spanning the affine hull of the face's solutions at `q`
    /// (empty for nonsingular faces).
    pub directions: Vec<Vec<f64>>,
}

/// `{ (u, ξ) }` over all faces at `q`, deduplicated.
pub fn solutions_at(model: &ReducedModel, branches: &[CriticalBranch], q: &DVector<f64>, opts: &AviOptions) -> Vec<DsElement> {
    let lay = Layout::of(model);
    let mut out: Vec<DsElement> = Vec::new();
    for br in branches {
        let elem = match &br.solution {
            BranchSolution::Linear { u, xi, .. } => {
                if !br.region.contains(q, opts.residual_tol) {
                    continue;
                }
                DsElement {
                    face: br.face.clone(),
                    u: (u * q).iter().copied().collect(),
                    xi: (xi * q).iter().copied().collect(),
                    directions: Vec::new(),
                }
            }
            BranchSolution::Affine { basis } => {
                let Some((u, zeta)) = br.solve_at(model, q) else {
                    continue;
                };
                let xi = model.xi_of(&u, &zeta, &[]);
                // directions with q = 0
                let qpart = basis.rows(0, lay.l).into_owned();
                let ker = linalg::nullspace(&qpart, model.tol.rank);
                let dirs = basis * ker;
                let upart = dirs.rows(lay.l, lay.n).into_owned();
                let directions = (0..upart.ncols())
                    .map(|j| upart.column(j).into_owned())
                    .filter(|c| c.norm() > 1e-12)
                    .map(|c| c.iter().copied().collect())
                    .collect();
                DsElement {
                    face: br.face.clone(),
                    u: u.iter().copied().collect(),
                    xi: xi.iter().copied().collect(),
                    directions,
                }
            }
        };
        let dup = out.iter().any(|e| {
            e.directions.is_empty()
                && elem.directions.is_empty()
                && e.u.iter().zip(&elem.u).all(|(a, b)| (a - b).abs() <= 1e-9)
                && e.xi.iter().zip(&elem.xi).all(|(a, b)| (a - b).abs() <= 1e-9)
        });
        if !dup {
            out.push(elem);
        }
    }
    out
}

/// Outcome of the coverage test (every `q` admits a critical direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: bool,
    pub exact: bool,
    pub method: String,
    pub uncovered: Option<Vec<f64>>,
}

fn covered_by(model: &ReducedModel, branches: &[CriticalBranch], q: &DVector<f64>, opts: &AviOptions) -> bool {
    // q = 0 is always covered by (u, ξ) = 0
    q.norm() == 0.0 || branches.iter().any(|b| b.contains_q(model, q, opts))
}

fn unit_vectors(l: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    crate::lorentz::sphere_points(l, count, seed)
}

/// Representatives of every full-dimensional cell of the arrangement of the
/// hyperplanes `{cᵀq = 0}` in `ℝ²`.
fn planar_cells(normals: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut angles: Vec<f64> = Vec::new();
    for c in normals {
        let a = (-c[0]).atan2(c[1]);
        for t in [a, a + std::f64::consts::PI] {
            angles.push(t.rem_euclid(std::f64::consts::TAU));
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if angles.is_empty() {
        return vec![DVector::from_vec(vec![1.0, 0.0])];
    }
    (0..angles.len())
        .map(|i| {
            let a = angles[i];
            let b = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + std::f64::consts::TAU };
            let mid = 0.5 * (a + b);
            DVector::from_vec(vec![mid.cos(), mid.sin()])
        })
        .collect()
}

fn sign_vector(normals: &[DVector<f64>], q: &DVector<f64>) -> Option<Vec<bool>> {
    normals
        .iter()
        .map(|c| {
            let v = c.dot(q);
            if v.abs() < 1e-9 {
                None
            } else {
                Some(v > 0.0)
            }
        })
        .collect()
}

/// Cell representatives in `ℝ³`; returns `None` when the cell count from
/// Euler's formula on the sphere is not reached.
fn spatial_cells(normals: &[DVector<f64>], seed: u64) -> Option<Vec<DVector<f64>>> {
    // distinct planes
    let mut planes: Vec<DVector<f64>> = Vec::new();
    for c in normals {
        let c = c.normalize();
        if !planes.iter().any(|p| (p - &c).norm() < 1e-9 || (p + &c).norm() < 1e-9) {
            planes.push(c);
        }
    }
    let k = planes.len();
    if k == 0 {
        return Some(vec![DVector::from_vec(vec![1.0, 0.0, 0.0])]);
    }
    // vertices on the sphere: ± intersection lines of plane pairs
    let mut verts: Vec<DVector<f64>> = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let d = planes[i].cross(&planes[j]).normalize();
            for v in [d.clone(), -d] {
                if !verts.iter().any(|w| (w - &v).norm() < 1e-9) {
                    verts.push(v);
                }
            }
        }
    }
    let expected = if k == 1 {
        2
    } else {
        let e: usize = planes
            .iter()
            .map(|p| verts.iter().filter(|v| p.dot(v).abs() < 1e-9).count())
            .sum();
        2 + e - verts.len()
    };
    let mut cands: Vec<DVector<f64>> = Vec::new();
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            cands.push((&verts[i] + &verts[j]).normalize());
            for t in j + 1..verts.len() {
                let s = &verts[i] + &verts[j] + &verts[t];
                if s.norm() > 1e-9 {
                    cands.push(s.normalize());
                }
            }
        }
    }
    cands.extend(unit_vectors(3, 2000, seed));
    let mut cells: Vec<(Vec<bool>, DVector<f64>)> = Vec::new();
    for q in cands {
        if let Some(sv) = sign_vector(&planes, &q) {
            if !cells.iter().any(|(s, _)| *s == sv) {
                cells.push((sv, q));
            }
        }
    }
    (cells.len() == expected).then(|| cells.into_iter().map(|(_, q)| q).collect())
}

/// Condition (i): every parameter direction admits a critical direction.
pub fn check_direction_coverage(model: &ReducedModel, branches: &[CriticalBranch], opts: &AviOptions) -> Coverage {
    let l = model.l();
    let test = |qs: Vec<DVector<f64>>, exact: bool, method: &str| {
        let misses = par::map_ordered(opts.execution, &qs, |q| !covered_by(model, branches, q, opts));
        match qs.iter().zip(misses).find(|(_, m)| *m) {
            Some((q, _)) => Coverage {
                covered: false,
                exact: true,
                method: method.into(),
                uncovered: Some(q.iter().copied().collect()),
            },
            None => Coverage {
                covered: true,
                exact,
                method: method.into(),
                uncovered: None,
            },
        }
    };
    if l == 0 {
        return Coverage {
            covered: true,
            exact: true,
            method: "no parameters".into(),
            uncovered: None,
        };
    }
    if l == 1 {
        return test(
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            true,
            "q = +1 and q = -1",
        );
    }
    let all_linear = branches.iter().all(|b| matches!(b.solution, BranchSolution::Linear { .. }));
    if all_linear && l <= 3 {
        let normals: Vec<DVector<f64>> = branches
            .iter()
            .flat_map(|b| b.region.closure.iter().map(|c| DVector::from_column_slice(c)))
            .collect();
        let cells = if l == 2 { Some(planar_cells(&normals)) } else { spatial_cells(&normals, opts.seed) };
        if let Some(cells) = cells {
            return test(cells, true, "one point per cell of the region arrangement");
        }
    }
    test(
        unit_vectors(l, opts.coverage_samples, opts.seed),
        false,
        "random unit parameter directions",
    )
}

// ---------------------------------------------------------------------------
// Lorentz blocks of dimension ≥ 3 at the apex: sampled directions.

/// State of a curved apex block along a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockState {
    /// `∇g_b u ∈ int 𝒦`, `ξ_b = 0`.
    Interior,
    /// `∇g_b u = 0`, `ξ_b ∈ 𝒦°`.
    Apex,
    /// `∇g_b u ∈ bd 𝒦 \ {0}`, `ξ_b = t·J∇g_b u`, `t ≥ 0`.
    Boundary,
}

/// One sampled critical direction on the curved path.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSample {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
    pub zeta: DVector<f64>,
    pub apex_xi: Vec<DVector<f64>>,
    pub xi: DVector<f64>,
    pub row_states: Vec<RowState>,
    pub block_states: Vec<BlockState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBranches {
    pub samples: Vec<DirectionSample>,
    /// Linear systems that were singular and therefore skipped.
    pub skipped: usize,
    pub uncovered: Option<DVector<f64>>,
}

fn block_j(spec: &crate::lorentz::LorentzSpec) -> DMatrix<f64> {
    let s = spec.dim;
    let mut j = DMatrix::identity(s, s);
    j[(s - 1, s - 1)] = -1.0;
    let p = spec.permutation();
    p.transpose() * j * p
}

/// Solves the linear system for a fixed `q`, row face and block states (and
/// boundary slope `t`). Returns `(u, ζ, ξ_b)`.
fn curved_solve(
    model: &ReducedModel,
    q: &DVector<f64>,
    face: &[usize],
    states: &[BlockState],
    t: f64,
) -> Option<(DVector<f64>, DVector<f64>, Vec<DVector<f64>>)> {
    let n = model.n();
    let m = model.m();
    let blocks: Vec<_> = model.curved_blocks().collect();
    let apex_dims: Vec<usize> = blocks
        .iter()
        .zip(states)
        .map(|(b, s)| if *s == BlockState::Apex { b.dim() } else { 0 })
        .collect();
    let na: usize = apex_dims.iter().sum();
    let width = n + m + na;
    let mut lmat = model.lagrangian.clone();
    for (b, s) in blocks.iter().zip(states) {
        if *s == BlockState::Boundary {
            lmat += b.jac.transpose() * block_j(&b.spec) * &b.jac * t;
        }
    }
    let bm = model.b_matrix();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let pq = &model.data.grad_p_h * q;
    for k in 0..n {
        let mut r = DVector::zeros(width);
        for j in 0..n {
            r[j] = lmat[(k, j)];
        }
        for i in 0..m {
            r[n + i] = bm[(i, k)];
        }
        let mut off = n + m;
        for (b, d) in blocks.iter().zip(&apex_dims) {
            for j in 0..*d {
                r[off + j] = b.jac[(j, k)];
            }
            off += d;
        }
        rows.push(r);
        rhs.push(-pq[k]);
    }
    for (i, row) in model.rows.iter().enumerate() {
        let mut r = DVector::zeros(width);
        if row.kind == RowKind::Equality || face.contains(&i) {
            r.rows_mut(0, n).copy_from(&row.b);
        } else {
            r[n + i] = 1.0;
        }
        rows.push(r);
        rhs.push(0.0);
    }
    for (b, s) in blocks.iter().zip(states) {
        if *s == BlockState::Apex {
            for j in 0..b.dim() {
                let mut r = DVector::zeros(width);
                r.rows_mut(0, n).copy_from(&b.jac.row(j).transpose());
                rows.push(r);
                rhs.push(0.0);
            }
        }
    }
    let a = linalg::rows_to_matrix(&rows, width);
    let sol = linalg::solve_square(&a, &DMatrix::from_column_slice(rhs.len(), 1, &rhs), model.tol.rank)?;
    let sol = sol.column(0).into_owned();
    let u = sol.rows(0, n).into_owned();
    let zeta = sol.rows(n, m).into_owned();
    let mut off = n + m;
    let apex: Vec<DVector<f64>> = blocks
        .iter()
        .zip(states)
        .map(|(b, s)| match s {
            BlockState::Apex => {
                let v = sol.rows(off, b.dim()).into_owned();
                off += b.dim();
                v
            }
            BlockState::Interior => DVector::zeros(b.dim()),
            BlockState::Boundary => block_j(&b.spec) * (&b.jac * &u) * t,
        })
        .collect();
    Some((u, zeta, apex))
}

fn curved_accept(
    model: &ReducedModel,
    face: &[usize],
    states: &[BlockState],
    u: &DVector<f64>,
    zeta: &DVector<f64>,
    apex: &[DVector<f64>],
    tol: f64,
) -> Option<Vec<RowState>> {
    let mut row_states = Vec::with_capacity(model.m());
    let scale = u.norm().max(zeta.norm()).max(1.0);
    let tol = tol * scale;
    for (i, r) in model.rows.iter().enumerate() {
        let v = r.b.dot(u);
        row_states.push(match r.kind {
            RowKind::Equality => RowState::Eq,
            RowKind::Complementary if face.contains(&i) => {
                if zeta[i] < -tol {
                    return None;
                }
                if zeta[i] > tol { RowState::Pos } else { RowState::Bi }
            }
            RowKind::Complementary => {
                if v > tol {
                    return None;
                }
                if v < -tol { RowState::Neg } else { RowState::Bi }
            }
        });
    }
    for ((b, s), xi) in model.curved_blocks().zip(states).zip(apex) {
        let v = &b.jac * u;
        let ok = match s {
            BlockState::Interior => b.spec.position(&v, tol) == Position::Interior,
            BlockState::Apex => b.spec.contains(&-xi, tol),
            BlockState::Boundary => b.spec.position(&v, tol) == Position::Boundary,
        };
        if !ok {
            return None;
        }
    }
    Some(row_states)
}

fn state_combos(k: usize) -> Vec<Vec<BlockState>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|c| {
                [BlockState::Interior, BlockState::Apex, BlockState::Boundary].into_iter().map(move |s| {
                    let mut c = c.clone();
                    c.push(s);
                    c
                })
            })
            .filter(|c| c.iter().filter(|s| **s == BlockState::Boundary).count() <= 1)
            .collect();
    }
    out
}

fn boundary_slopes() -> Vec<f64> {
    let mut ts = vec![0.0];
    ts.extend((0..=80).map(|k| 10f64.powf(-4.0 + 0.1 * k as f64)));
    ts
}

/// Samples critical directions when curved apex blocks are present.
pub fn sampled_branches(model: &ReducedModel, opts: &AviOptions) -> Result<SampledBranches, AviError> {
    let comp = complementary_rows(model);
    if comp.len() > MAX_COMPLEMENTARY_ROWS {
        return Err(AviError::TooManyRows(comp.len(), MAX_COMPLEMENTARY_ROWS));
    }
    let l = model.l();
    let mut qs: Vec<DVector<f64>> = Vec::new();
    for k in 0..l {
        for sgn in [1.0, -1.0] {
            let mut e = DVector::zeros(l);
            e[k] = sgn;
            qs.push(e);
        }
    }
    if l > 1 {
        qs.extend(unit_vectors(l, opts.curved_q_samples, opts.seed));
    }
    let faces: Vec<Vec<usize>> = (0..(1usize << comp.len()))
        .map(|mask| comp.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, &i)| i).collect())
        .collect();
    let combos = state_combos(model.curved_blocks().count());
    let tol = opts.residual_tol.max(1e-9);

    let per_q = par::map_ordered(opts.execution, &qs, |q| {
        let mut found = Vec::new();
        let mut skipped = 0;
        for face in &faces {
            for states in &combos {
                let boundary = states.iter().position(|s| *s == BlockState::Boundary);
                let accept = |t: f64, found: &mut Vec<DirectionSample>| -> bool {
                    let Some((u, zeta, apex)) = curved_solve(model, q, face, states, t) else {
                        return false;
                    };
                    if let Some(row_states) = curved_accept(model, face, states, &u, &zeta, &apex, tol) {
                        let xi = model.xi_of(&u, &zeta, &apex);
                        found.push(DirectionSample {
                            q: q.clone(),
                            u,
                            zeta,
                            apex_xi: apex,
                            xi,
                            row_states,
                            block_states: states.clone(),
                        });
                    }
                    true
                };
                match boundary {
                    None => {
                        if !accept(0.0, &mut found) {
                            skipped += 1;
                        }
                    }
                    Some(bi) => {
                        let block = model.curved_blocks().nth(bi).expect("block index");
                        let phi = |t: f64| {
                            curved_solve(model, q, face, states, t).map(|(u, _, _)| {
                                let c = block.spec.canonical(&(&block.jac * &u));
                                let s = c.len();
                                c[s - 1] - c.rows(0, s - 1).norm()
                            })
                        };
                        let ts = boundary_slopes();
                        let vals: Vec<Option<f64>> = ts.iter().map(|&t| phi(t)).collect();
                        for k in 0..ts.len() {
                            let Some(a) = vals[k] else { continue };
                            if a.abs() <= tol {
                                accept(ts[k], &mut found);
                            }
                            if k + 1 < ts.len() {
                                if let Some(b) = vals[k + 1] {
                                    if a * b < 0.0 {
                                        let (mut lo, mut hi, mut flo) = (ts[k], ts[k + 1], a);
                                        for _ in 0..200 {
                                            let mid = 0.5 * (lo + hi);
                                            let Some(fm) = phi(mid) else { break };
                                            if fm * flo <= 0.0 {
                                                hi = mid;
                                            } else {
                                                lo = mid;
                                                flo = fm;
                                            }
                                        }
                                        accept(0.5 * (lo + hi), &mut found);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (found, skipped)
    });
    let mut samples = Vec::new();
    let mut skipped = 0;
    let mut uncovered = None;
    for (q, (found, sk)) in qs.iter().zip(per_q) {
        if found.is_empty() && uncovered.is_none() {
            uncovered = Some(q.clone());
        }
        samples.extend(found);
        skipped += sk;
    }
    Ok(SampledBranches {
        samples,
        skipped,
        uncovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::reduce;
    use crate::exprs::assemble_reference;
    use crate::{fixtures, Tolerances};
    use nalgebra::dvector;

    fn model(spec: &crate::ProblemSpec) -> ReducedModel {
        reduce(&assemble_reference(spec), &spec.cone, &Tolerances::default()).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9)
    }

    fn has(ds: &[DsElement], u: &[f64], xi: &[f64]) -> bool {
        ds.iter().any(|e| close(&e.u, u) && close(&e.xi, xi))
    }

    #[test]
    fn first_example_branches() {
        let m = model(&fixtures::example1());
        let opts = AviOptions::default();
        let br = enumerate_critical_branches(&m, &opts).unwrap();
        let neg = solutions_at(&m, &br, &dvector![-1.0], &opts);
        assert_eq!(neg.len(), 3);
        assert!(has(&neg, &[-1.0, 0.0], &[0.0, 0.0]));
        assert!(has(&neg, &[-4.0 / 3.0, 2.0 / 3.0], &[0.0, 2.0 / 3.0]));
        assert!(has(&neg, &[-4.0 / 3.0, -2.0 / 3.0], &[2.0 / 3.0, 0.0]));
        let pos = solutions_at(&m, &br, &dvector![1.0], &opts);
        assert_eq!(pos.len(), 1);
        assert!(has(&pos, &[0.0, 0.0], &[1.0, 1.0]));
        let cov = check_direction_coverage(&m, &br, &opts);
        assert!(cov.covered && cov.exact);
    }

    #[test]
    fn second_example_branches() {
        let m = model(&fixtures::example2());
        let opts = AviOptions::default();
        let br = enumerate_critical_branches(&m, &opts).unwrap();
        for q in [-1.0, -0.5] {
            let ds = solutions_at(&m, &br, &dvector![q], &opts);
            assert_eq!(ds.len(), 3);
            assert!(has(&ds, &[q, 0.0], &[0.0, 0.0]));
            assert!(has(&ds, &[4.0 / 3.0 * q, -2.0 / 3.0 * q], &[-q / 3.0, q / 3.0]));
            assert!(has(&ds, &[4.0 / 3.0 * q, 2.0 / 3.0 * q], &[q / 3.0, q / 3.0]));
        }
        let ds = solutions_at(&m, &br, &dvector![2.0], &opts);
        assert_eq!(ds.len(), 1);
        assert!(has(&ds, &[0.0, 0.0], &[0.0, -2.0]));
    }

    #[test]
    fn regions_are_half_lines() {
        let m = model(&fixtures::example1());
        let br = enumerate_critical_branches(&m, &AviOptions::default()).unwrap();
        let labels: Vec<&str> = br.iter().map(|b| b.region.label.as_str()).collect();
        assert_eq!(labels, vec!["q <= 0", "q <= 0", "q >= 0", "q <= 0"]);
    }

    #[test]
    fn planar_cells_cover_all_sectors() {
        let normals = vec![dvector![1.0, 0.0], dvector![0.0, 1.0]];
        let cells = planar_cells(&normals);
        assert_eq!(cells.len(), 4);
        let mut signs: Vec<Vec<bool>> = cells.iter().map(|q| sign_vector(&normals, q).unwrap()).collect();
        signs.sort();
        signs.dedup();
        assert_eq!(signs.len(), 4);
    }

    #[test]
    fn spatial_cells_match_euler_count() {
        let normals = vec![dvector![1.0, 0.0, 0.0], dvector![0.0, 1.0, 0.0], dvector![0.0, 0.0, 1.0]];
        assert_eq!(spatial_cells(&normals, 1).unwrap().len(), 8);
        let normals = vec![dvector![1.0, 0.0, 0.0]];
        assert_eq!(spatial_cells(&normals, 1).unwrap().len(), 2);
    }
}
