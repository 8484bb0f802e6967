//! The verification driver.
//!
//! Along every critical direction `(q, u, ξ)` the adjoint system
//! `0 ∈ ∇ₓ𝓛ᵀv* + ∇gᵀ D*N̂_D((g(x̄),λ̄); (∇g u, ξ))(∇g v*)` must force `v* = 0`
//! (mode iv) or `∇ₚHᵀv* = 0` (mode iii). On the reduced model the coderivative
//! splits into finitely many linear pieces; each combination of pieces is a
//! polyhedral cone that is inspected by linear algebra and small LPs.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avi::{
    self, AviError, AviOptions, BlockState, BranchSolution, Coverage, CriticalBranch, DsElement, Layout, RowState,
};
use crate::chain::{self, ChainError, Nondegeneracy, ReducedModel, ReductionSummary, RowKind};
use crate::cones::{ComponentRule, Piece};
use crate::exprs::{assemble_reference, ReferencePoint};
use crate::linalg;
use crate::lorentz::{self, CaseTag, CoderivFamily, LorentzSpec};
use crate::lp::{LinearProgram, LpOutcome};
use crate::par::{self, Execution};
use crate::{ProblemSpec, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("reference point is not a solution: {0}")]
    ReferenceInfeasible(String),
    #[error("the graphical derivative formula is only available once the criterion has verified the Aubin property")]
    NotVerified,
    #[error("parameter direction has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All adjoint solutions vanish.
    Iv,
    /// All adjoint solutions lie in `ker ∇ₚHᵀ`; metric subregularity is assumed.
    Iii,
}

/// How planar Lorentz blocks at the apex enter the adjoint system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorentzRoute {
    /// Through the coderivative of the projection (`u* = −d`, `y = −∇g v*`).
    Projection,
    /// Through the two facet rows of the planar cone.
    Polyhedral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub mode: Mode,
    pub compare_mordukhovich: bool,
    pub lorentz_route: LorentzRoute,
    pub tol: Tolerances,
    pub execution: Execution,
    pub seed: u64,
    /// Sphere points per curved block for the `s ≥ 3` witness search.
    pub witness_samples: usize,
    /// Grid of `α` (and convex weights) for the `s ≥ 3` witness search.
    pub witness_alpha_grid: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Iv,
            compare_mordukhovich: true,
            lorentz_route: LorentzRoute::Projection,
            tol: Tolerances::default(),
            execution: Execution::Parallel,
            seed: 0,
            witness_samples: 256,
            witness_alpha_grid: 21,
        }
    }
}

impl VerifyOptions {
    fn avi(&self) -> AviOptions {
        AviOptions {
            execution: self.execution,
            seed: self.seed,
            lp_tol: self.tol.lp,
            residual_tol: self.tol.residual,
            ..AviOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implication {
    Pass,
    Fail,
    Undecided,
}

/// The critical direction a witness belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
}

/// A nonzero solution of an adjoint system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointWitness {
    pub v_star: Vec<f64>,
    /// Outputs of the row coderivatives, one per entry of `rows`.
    pub eta: Vec<f64>,
    pub rows: Vec<usize>,
    /// Auxiliary vectors of the Lorentz blocks, concatenated.
    pub d: Vec<f64>,
    /// Coderivative pieces active in the witness.
    pub pieces: Vec<String>,
    pub face: Option<Vec<usize>>,
    pub direction: Option<DirectionRecord>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    AubinVerified,
    CriterionFailed { witness: AdjointWitness },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub region: String,
    pub face: Vec<usize>,
    /// `u` as a linear map of `q` (rows), when the face is nonsingular.
    pub u: Option<Vec<Vec<f64>>>,
    pub xi: Option<Vec<Vec<f64>>>,
    pub patterns: Vec<Vec<RowState>>,
    pub implication: Implication,
    pub exact: bool,
    pub witness: Option<AdjointWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MordukhovichReport {
    pub trivial_only: bool,
    pub exact: bool,
    pub witness: Option<AdjointWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsMap {
    pub face: Vec<usize>,
    pub region: String,
    pub u: Option<Vec<Vec<f64>>>,
    pub xi: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsSample {
    pub q: Vec<f64>,
    pub elements: Vec<DsElement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsReport {
    pub maps: Vec<DsMap>,
    pub samples: Vec<DsSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub problem: String,
    pub reference: ReferencePoint,
    pub mode: Mode,
    pub verdict: Verdict,
    pub multiplier: Option<Vec<f64>>,
    pub nondegenerate: Option<Nondegeneracy>,
    pub reduction: Option<ReductionSummary>,
    pub coverage: Option<Coverage>,
    pub branches: Vec<BranchReport>,
    pub mordukhovich: Option<MordukhovichReport>,
    #[serde(rename = "DS")]
    pub ds: Option<DsReport>,
    pub caveats: Vec<String>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        crate::json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Human-readable mirror of the JSON report.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "problem: {}", self.problem);
        let _ = writeln!(s, "reference: p = {:?}, x = {:?}", self.reference.p, self.reference.x);
        let _ = writeln!(s, "mode: {}", match self.mode {
            Mode::Iv => "iv",
            Mode::Iii => "iii",
        });
        if let Some(m) = &self.multiplier {
            let _ = writeln!(s, "multiplier: {}", fmt_vec(m));
        }
        if let Some(nd) = &self.nondegenerate {
            let _ = writeln!(s, "nondegenerate: {} (rank {} of {})", nd.holds, nd.rank, nd.rows);
        }
        if let Some(c) = &self.coverage {
            let _ = writeln!(
                s,
                "coverage: {} ({}{})",
                if c.covered { "all parameter directions" } else { "INCOMPLETE" },
                c.method,
                if c.exact { ", exact" } else { ", sampled" }
            );
        }
        let _ = writeln!(s, "branches:");
        for b in &self.branches {
            let u = b.u.as_ref().map(|m| fmt_mat(m)).unwrap_or_else(|| "affine family".into());
            let xi = b.xi.as_ref().map(|m| fmt_mat(m)).unwrap_or_else(|| "affine family".into());
            let _ = writeln!(
                s,
                "  face {:?}  region {}  u = {} q  xi = {} q  -> {:?}",
                b.face, b.region, u, xi, b.implication
            );
        }
        if let Some(m) = &self.mordukhovich {
            let _ = match &m.witness {
                Some(w) => writeln!(s, "classical criterion: fails (v* = {})", fmt_vec(&w.v_star)),
                None if m.trivial_only => writeln!(s, "classical criterion: only the trivial solution"),
                None => writeln!(s, "classical criterion: undecided"),
            };
        }
        if let Some(ds) = &self.ds {
            for sample in &ds.samples {
                let _ = writeln!(s, "DS at q = {}:", fmt_vec(&sample.q));
                for e in &sample.elements {
                    let _ = writeln!(s, "  u = {}  xi = {}", fmt_vec(&e.u), fmt_vec(&e.xi));
                }
            }
        }
        let _ = match &self.verdict {
            Verdict::AubinVerified => writeln!(s, "verdict: Aubin property verified"),
            Verdict::CriterionFailed { witness } => {
                writeln!(s, "verdict: criterion failed (v* = {})", fmt_vec(&witness.v_star))
            }
            Verdict::Inconclusive { reason } => writeln!(s, "verdict: inconclusive ({reason})"),
        };
        for c in &self.caveats {
            let _ = writeln!(s, "note: {c}");
        }
        s
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{}", clean(*x))).collect();
    format!("({})", parts.join(", "))
}

fn fmt_mat(m: &[Vec<f64>]) -> String {
    if m.iter().all(|r| r.len() == 1) {
        let col: Vec<f64> = m.iter().map(|r| r[0]).collect();
        return fmt_vec(&col);
    }
    let rows: Vec<String> = m.iter().map(|r| fmt_vec(r)).collect();
    format!("[{}]", rows.join("; "))
}

fn clean(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Adjoint systems.

/// A block handled through the projection coderivative.
#[derive(Debug, Clone)]
struct BlockVars {
    spec: LorentzSpec,
    jac: DMatrix<f64>,
    curved: bool,
    facet_rows: Vec<usize>,
}

/// Variable layout `[v* (n) | η (rows) | d (blocks) | ρ (planar blocks)]`.
#[derive(Debug, Clone)]
struct AdjointLayout {
    n: usize,
    rows: Vec<usize>,
    blocks: Vec<BlockVars>,
}

impl AdjointLayout {
    fn new(model: &ReducedModel, route: LorentzRoute) -> Self {
        let blocks: Vec<BlockVars> = model
            .apex_blocks
            .iter()
            .filter(|b| b.is_curved() || route == LorentzRoute::Projection)
            .map(|b| BlockVars {
                spec: b.spec,
                jac: b.jac.clone(),
                curved: b.is_curved(),
                facet_rows: b.facet_rows.clone(),
            })
            .collect();
        let skip: Vec<usize> = blocks.iter().flat_map(|b| b.facet_rows.iter().copied()).collect();
        Self {
            n: model.n(),
            rows: (0..model.m()).filter(|i| !skip.contains(i)).collect(),
            blocks,
        }
    }

    fn eta(&self, k: usize) -> usize {
        self.n + k
    }

    fn d_offset(&self, b: usize) -> usize {
        self.n + self.rows.len() + self.blocks[..b].iter().map(|x| x.spec.dim).sum::<usize>()
    }

    fn base_width(&self) -> usize {
        self.n + self.rows.len() + self.blocks.iter().map(|b| b.spec.dim).sum::<usize>()
    }

    fn rho(&self, b: usize) -> usize {
        self.base_width() + b
    }

    fn width(&self) -> usize {
        self.base_width() + self.blocks.len()
    }

    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.n).map(|i| format!("v{i}")).collect();
        v.extend(self.rows.iter().map(|i| format!("eta{}", i + 1)));
        let single = self.blocks.len() == 1;
        for (b, blk) in self.blocks.iter().enumerate() {
            for j in 1..=blk.spec.dim {
                v.push(if single { format!("d{j}") } else { format!("d{}_{j}", b + 1) });
            }
        }
        v
    }
}

/// The linear part `Lᵀv* + Σ bᵢηᵢ + Σ ∇g_bᵀ(d_b − ∇g_b v*) = 0` of the adjoint system.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSystem {
    pub variables: Vec<String>,
    pub matrix: DMatrix<f64>,
}

fn base_matrix(model: &ReducedModel, lay: &AdjointLayout, width: usize) -> DMatrix<f64> {
    let n = lay.n;
    let mut m = DMatrix::zeros(n, width);
    let mut vpart = model.lagrangian.transpose();
    for b in &lay.blocks {
        vpart -= b.jac.transpose() * &b.jac;
    }
    m.view_mut((0, 0), (n, n)).copy_from(&vpart);
    for (k, &i) in lay.rows.iter().enumerate() {
        m.view_mut((0, lay.eta(k)), (n, 1)).copy_from(&model.rows[i].b);
    }
    for (bi, b) in lay.blocks.iter().enumerate() {
        let off = lay.d_offset(bi);
        m.view_mut((0, off), (n, b.spec.dim)).copy_from(&b.jac.transpose());
    }
    m
}

/// Base adjoint equations over `(v*, η, d)`.
pub fn assemble_adjoint_system(model: &ReducedModel, route: LorentzRoute) -> AdjointSystem {
    let lay = AdjointLayout::new(model, route);
    AdjointSystem {
        variables: lay.names(),
        matrix: base_matrix(model, &lay, lay.base_width()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum BlockRule {
    Family(CoderivFamily),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Rules {
    rows: Vec<ComponentRule>,
    blocks: Vec<BlockRule>,
}

/// One linear constraint set: `E x = 0`, `G x ≤ 0`.
#[derive(Debug, Clone)]
struct Combo {
    eq: Vec<DVector<f64>>,
    le: Vec<DVector<f64>>,
    labels: Vec<String>,
}

fn row_piece(lay: &AdjointLayout, model: &ReducedModel, k: usize, piece: Piece, width: usize) -> Combo {
    let i = lay.rows[k];
    let mut w = DVector::zeros(width);
    w.rows_mut(0, lay.n).copy_from(&model.rows[i].b);
    let mut eta = DVector::zeros(width);
    eta[lay.eta(k)] = 1.0;
    match piece {
        Piece::InputZero => Combo {
            eq: vec![w],
            le: vec![],
            labels: vec![format!("row {}: b·v* = 0", i + 1)],
        },
        Piece::OutputZero => Combo {
            eq: vec![eta],
            le: vec![],
            labels: vec![format!("row {}: eta = 0", i + 1)],
        },
        Piece::BothNonNegative => Combo {
            eq: vec![],
            le: vec![-w, -eta],
            labels: vec![format!("row {}: b·v* >= 0, eta >= 0", i + 1)],
        },
    }
}

/// Planar piece rows mapped onto `(v*, d_b, ρ_b)`.
fn block_piece(lay: &AdjointLayout, b: usize, piece: &lorentz::PlanarPiece, width: usize) -> Combo {
    let blk = &lay.blocks[b];
    let p = blk.spec.permutation();
    let off = lay.d_offset(b);
    let map = |r: &[f64; 5]| {
        let mut out = DVector::zeros(width);
        let ru = DVector::from_column_slice(&r[0..2]);
        let ry = DVector::from_column_slice(&r[2..4]);
        // u* = −d, y = −∇g_b v* (canonical: Π·)
        let dcoef = -(p.transpose() * &ru);
        let vcoef = -(blk.jac.transpose() * p.transpose() * &ry);
        out.rows_mut(off, 2).copy_from(&dcoef);
        let mut vpart = out.rows_mut(0, lay.n);
        vpart += vcoef;
        out[lay.rho(b)] = r[4];
        out
    };
    Combo {
        eq: piece.eq.iter().map(map).collect(),
        le: piece.le.iter().map(map).collect(),
        labels: vec![format!("block {}: {}", b + 1, piece.label)],
    }
}

/// Linear constraints for a curved block with a fixed map `y = M u*`, i.e. `∇g_b v* = M d_b`.
fn block_map(lay: &AdjointLayout, b: usize, mat: &DMatrix<f64>, width: usize, label: String) -> Combo {
    let blk = &lay.blocks[b];
    let off = lay.d_offset(b);
    let s = blk.spec.dim;
    let eq = (0..s)
        .map(|j| {
            let mut r = DVector::zeros(width);
            r.rows_mut(0, lay.n).copy_from(&blk.jac.row(j).transpose());
            for k in 0..s {
                r[off + k] = -mat[(j, k)];
            }
            r
        })
        .collect();
    Combo {
        eq,
        le: vec![],
        labels: vec![label],
    }
}

fn merge(parts: &[&Combo]) -> Combo {
    let mut c = Combo {
        eq: vec![],
        le: vec![],
        labels: vec![],
    };
    for p in parts {
        c.eq.extend(p.eq.iter().cloned());
        c.le.extend(p.le.iter().cloned());
        c.labels.extend(p.labels.iter().cloned());
    }
    c
}

fn cartesian(choices: &[Vec<Combo>]) -> Vec<Combo> {
    let mut out = vec![Combo {
        eq: vec![],
        le: vec![],
        labels: vec![],
    }];
    for opts in choices {
        let mut next = Vec::with_capacity(out.len() * opts.len());
        for base in &out {
            for o in opts {
                next.push(merge(&[base, o]));
            }
        }
        out = next;
    }
    out
}

/// The function of `v*` that must vanish.
fn target(model: &ReducedModel, lay: &AdjointLayout, mode: Mode, width: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(0, width);
    let v = match mode {
        Mode::Iv => DMatrix::identity(lay.n, lay.n),
        Mode::Iii => model.data.grad_p_h.transpose(),
    };
    t = t.resize(v.nrows(), width, 0.0);
    t.view_mut((0, 0), (v.nrows(), lay.n)).copy_from(&v);
    t
}

enum ComboOutcome {
    Pass,
    Fail(DVector<f64>),
}

fn check_combo(combo: &Combo, base: &DMatrix<f64>, target: &DMatrix<f64>, tol: &Tolerances) -> ComboOutcome {
    let width = base.ncols();
    let mut eq_rows: Vec<DVector<f64>> = base.row_iter().map(|r| r.transpose()).collect();
    eq_rows.extend(combo.eq.iter().cloned());
    let e = linalg::rows_to_matrix(&eq_rows, width);
    let ker = linalg::nullspace(&e, tol.rank);
    if ker.ncols() == 0 || (target * &ker).amax() <= 1e-12 {
        return ComboOutcome::Pass;
    }
    if combo.le.is_empty() {
        let tk = target * &ker;
        let j = (0..ker.ncols())
            .max_by(|&a, &b| tk.column(a).norm().total_cmp(&tk.column(b).norm()))
            .expect("nonempty kernel");
        return ComboOutcome::Fail(ker.column(j).into_owned());
    }
    let mut lp = LinearProgram::new(width);
    for r in &eq_rows {
        lp.eq(r.as_slice(), 0.0);
    }
    for r in &combo.le {
        lp.le(r.as_slice(), 0.0);
    }
    lp.bound_all(-1.0, 1.0);
    for k in 0..target.nrows() {
        for sign in [1.0, -1.0] {
            let obj: Vec<f64> = target.row(k).iter().map(|x| sign * x).collect();
            if let LpOutcome::Optimal { x, value } = lp.maximize(&obj) {
                if value > tol.lp {
                    return ComboOutcome::Fail(x);
                }
            }
        }
    }
    ComboOutcome::Pass
}

/// Normalizes `‖v*‖ = 1` and projects onto the active constraints.
fn polish_witness(x: &DVector<f64>, combo: &Combo, base: &DMatrix<f64>, n: usize) -> (DVector<f64>, f64) {
    let width = base.ncols();
    let vn = x.rows(0, n).norm();
    let mut y = if vn > 0.0 { x / vn } else { x.clone() };
    let mut rows: Vec<DVector<f64>> = base.row_iter().map(|r| r.transpose()).collect();
    rows.extend(combo.eq.iter().cloned());
    let scale = y.norm().max(1.0);
    rows.extend(combo.le.iter().filter(|g| g.dot(&y).abs() <= 1e-7 * scale).cloned());
    let a = linalg::rows_to_matrix(&rows, width);
    let z = linalg::project_to_kernel(&a, &y, 1e-12);
    let zn = z.rows(0, n).norm();
    if zn > 0.5 {
        let z = z / zn;
        if residual(&z, combo, base) <= residual(&y, combo, base) {
            y = z;
        }
    }
    let r = residual(&y, combo, base);
    (y, r)
}

fn residual(x: &DVector<f64>, combo: &Combo, base: &DMatrix<f64>) -> f64 {
    let mut r = (base * x).amax();
    for e in &combo.eq {
        r = r.max(e.dot(x).abs());
    }
    for g in &combo.le {
        r = r.max(g.dot(x).max(0.0));
    }
    r
}

fn witness_from(
    x: &DVector<f64>,
    combo: &Combo,
    base: &DMatrix<f64>,
    lay: &AdjointLayout,
) -> AdjointWitness {
    let (y, res) = polish_witness(x, combo, base, lay.n);
    let bw = lay.base_width();
    let dstart = lay.n + lay.rows.len();
    AdjointWitness {
        v_star: y.rows(0, lay.n).iter().map(|v| clean(*v)).collect(),
        eta: y.rows(lay.n, lay.rows.len()).iter().copied().collect(),
        rows: lay.rows.clone(),
        d: y.rows(dstart, bw - dstart).iter().copied().collect(),
        pieces: combo.labels.clone(),
        face: None,
        direction: None,
        residual: res,
    }
}

fn rule_pieces(rule: ComponentRule) -> &'static [Piece] {
    rule.pieces()
}

/// Enumerates every piece combination of the exact (planar) rules.
fn exact_combos(model: &ReducedModel, lay: &AdjointLayout, rules: &Rules, width: usize) -> Vec<Combo> {
    let mut choices: Vec<Vec<Combo>> = Vec::new();
    for (k, rule) in rules.rows.iter().enumerate() {
        choices.push(rule_pieces(*rule).iter().map(|p| row_piece(lay, model, k, *p, width)).collect());
    }
    for (b, rule) in rules.blocks.iter().enumerate() {
        let BlockRule::Family(f) = rule;
        let blk = &lay.blocks[b];
        if blk.curved {
            // only the linear families are enumerated exactly
            let s = blk.spec.dim;
            match f {
                CoderivFamily::Identity => {
                    choices.push(vec![block_map(lay, b, &DMatrix::identity(s, s), width, format!("block {}: identity", b + 1))])
                }
                CoderivFamily::Zero => {
                    choices.push(vec![block_map(lay, b, &DMatrix::zeros(s, s), width, format!("block {}: zero", b + 1))])
                }
                _ => {}
            }
            continue;
        }
        choices.push(lorentz::planar_pieces(*f).iter().map(|p| block_piece(lay, b, p, width)).collect());
    }
    cartesian(&choices)
}

fn is_exact(lay: &AdjointLayout, rules: &Rules) -> bool {
    lay.blocks.iter().zip(&rules.blocks).all(|(b, BlockRule::Family(f))| {
        !b.curved || matches!(f, CoderivFamily::Identity | CoderivFamily::Zero)
    })
}

/// Outcome of one adjoint implication check.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    Pass,
    Fail(AdjointWitness),
    Undecided(String),
}

struct Checker<'a> {
    model: &'a ReducedModel,
    lay: AdjointLayout,
    base: DMatrix<f64>,
    target: DMatrix<f64>,
    opts: &'a VerifyOptions,
}

impl<'a> Checker<'a> {
    fn new(model: &'a ReducedModel, mode: Mode, opts: &'a VerifyOptions) -> Self {
        let lay = AdjointLayout::new(model, opts.lorentz_route);
        let width = lay.width();
        Self {
            base: base_matrix(model, &lay, width),
            target: target(model, &lay, mode, width),
            model,
            lay,
            opts,
        }
    }

    fn check(&self, rules: &Rules) -> CheckOutcome {
        let width = self.lay.width();
        let combos = exact_combos(self.model, &self.lay, rules, width);
        for c in &combos {
            if let ComboOutcome::Fail(x) = check_combo(c, &self.base, &self.target, &self.opts.tol) {
                return CheckOutcome::Fail(witness_from(&x, c, &self.base, &self.lay));
            }
        }
        if is_exact(&self.lay, rules) {
            return CheckOutcome::Pass;
        }
        self.sampled(rules, &combos)
    }

    /// Witness search over sampled members of the curved families.
    fn sampled(&self, rules: &Rules, combos: &[Combo]) -> CheckOutcome {
        let width = self.lay.width();
        let curved: Vec<(usize, CoderivFamily)> = self
            .lay
            .blocks
            .iter()
            .zip(&rules.blocks)
            .enumerate()
            .filter(|(_, (b, BlockRule::Family(f)))| b.curved && !matches!(f, CoderivFamily::Identity | CoderivFamily::Zero))
            .map(|(i, (_, BlockRule::Family(f)))| (i, *f))
            .collect();
        let maps = |seed_shift: u64| -> Vec<Vec<(String, DMatrix<f64>)>> {
            curved
                .iter()
                .map(|(b, f)| family_maps(&self.lay.blocks[*b].spec, *f, self.opts, seed_shift + *b as u64))
                .collect()
        };
        let per_block = maps(self.opts.seed);
        let count = per_block.iter().map(Vec::len).max().unwrap_or(0);
        // row pieces restricted to the linear ones; equality-only systems allow nullspace tests
        let linear_combos: Vec<&Combo> = combos.iter().filter(|c| c.le.is_empty()).collect();
        let found = par::map_range(self.opts.execution, count, |k| {
            let parts: Vec<Combo> = curved
                .iter()
                .zip(&per_block)
                .map(|((b, _), ms)| {
                    let (label, m) = &ms[k % ms.len()];
                    block_map(&self.lay, *b, m, width, format!("block {}: {label}", b + 1))
                })
                .collect();
            for c in &linear_combos {
                let mut all: Vec<&Combo> = vec![c];
                all.extend(parts.iter());
                let combo = merge(&all);
                if let ComboOutcome::Fail(x) = check_combo(&combo, &self.base, &self.target, &self.opts.tol) {
                    let w = witness_from(&x, &combo, &self.base, &self.lay);
                    if w.residual <= self.opts.tol.residual {
                        return Some(w);
                    }
                }
            }
            None
        });
        match found.into_iter().flatten().next() {
            Some(w) => CheckOutcome::Fail(w),
            None => CheckOutcome::Undecided(
                "Lorentz block of dimension ≥ 3: no witness among the sampled family members".into(),
            ),
        }
    }
}

/// Sampled members `M` (with `y = M u*`) of a curved family, in the user's ordering.
fn family_maps(spec: &LorentzSpec, f: CoderivFamily, opts: &VerifyOptions, seed: u64) -> Vec<(String, DMatrix<f64>)> {
    let s = spec.dim;
    let p = spec.permutation();
    let back = |m: DMatrix<f64>| p.transpose() * m * &p;
    let mut ws: Vec<DVector<f64>> = Vec::new();
    for k in 0..s - 1 {
        for sgn in [1.0, -1.0] {
            let mut e = DVector::zeros(s - 1);
            e[k] = sgn;
            ws.push(e);
        }
    }
    ws.extend(lorentz::sphere_points(s - 1, opts.witness_samples, seed));
    let grid = opts.witness_alpha_grid.max(2);
    let alphas: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let with_c = matches!(
        f,
        CoderivFamily::CFamily | CoderivFamily::CFamilyPlusA | CoderivFamily::CFamilyPlusB | CoderivFamily::Limiting
    );
    let with_a = matches!(f, CoderivFamily::CFamilyPlusA | CoderivFamily::Limiting);
    let with_b = matches!(f, CoderivFamily::CFamilyPlusB | CoderivFamily::Limiting);
    let mut out = Vec::new();
    if f == CoderivFamily::Limiting {
        out.push(("identity".to_string(), DMatrix::identity(s, s)));
        out.push(("zero".to_string(), DMatrix::zeros(s, s)));
    }
    for w in &ws {
        for &a in &alphas {
            if with_c {
                out.push((format!("C(w={:?}, alpha={a})", w.as_slice()), back(lorentz::c_matrix(w, a))));
            }
            // conv{u*, Au*}: (1−t)I + tA; the admissibility of A depends on u* and
            // is checked on the witness afterwards
            if with_a {
                let m = DMatrix::identity(s, s) * (1.0 - a) + lorentz::a_matrix(w) * a;
                out.push((format!("conv A(w={:?}), t={a}", w.as_slice()), back(m)));
            }
            if with_b {
                let m = DMatrix::identity(s, s) * (1.0 - a) + lorentz::b_matrix(w) * a;
                out.push((format!("conv B(w={:?}), t={a}", w.as_slice()), back(m)));
            }
        }
    }
    out
}

fn orthant_rule_of(state: RowState) -> ComponentRule {
    match state {
        RowState::Eq | RowState::Pos => ComponentRule::FreeOutputZeroInput,
        RowState::Neg => ComponentRule::ZeroOutput,
        RowState::Bi => ComponentRule::LimitingUnion,
    }
}

/// Case tag of a planar apex block from the states of its two facet rows.
fn planar_tag(a: RowState, b: RowState) -> Option<CaseTag> {
    use RowState::*;
    match (a, b) {
        (Neg, Neg) => Some(CaseTag::IntK),
        (Neg, Bi) | (Bi, Neg) => Some(CaseTag::BdK),
        (Neg, Pos) | (Pos, Neg) => Some(CaseTag::Outside),
        (Pos, Pos) => Some(CaseTag::IntPolar),
        (Pos, Bi) | (Bi, Pos) => Some(CaseTag::BdPolar),
        _ => None,
    }
}

fn family_of(tag: Option<CaseTag>) -> CoderivFamily {
    tag.map_or(CoderivFamily::Limiting, lorentz::coderiv_family_at_apex)
}

fn rules_from_states(lay: &AdjointLayout, states: &[RowState], curved_tags: &[Option<CaseTag>]) -> Rules {
    let rows = lay.rows.iter().map(|&i| orthant_rule_of(states[i])).collect();
    let mut curved = curved_tags.iter();
    let blocks = lay
        .blocks
        .iter()
        .map(|b| {
            if b.curved {
                BlockRule::Family(family_of(*curved.next().expect("tag per curved block")))
            } else {
                let r = &b.facet_rows;
                BlockRule::Family(family_of(planar_tag(states[r[0]], states[r[1]])))
            }
        })
        .collect();
    Rules { rows, blocks }
}

fn mordukhovich_rules(model: &ReducedModel, lay: &AdjointLayout) -> Rules {
    Rules {
        rows: lay
            .rows
            .iter()
            .map(|&i| match model.rows[i].kind {
                RowKind::Equality => ComponentRule::FreeOutputZeroInput,
                RowKind::Complementary => ComponentRule::LimitingUnion,
            })
            .collect(),
        blocks: lay.blocks.iter().map(|_| BlockRule::Family(CoderivFamily::Limiting)).collect(),
    }
}

/// Per-branch result with the direction that produced a witness.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCheck {
    pub implication: Implication,
    pub witness: Option<AdjointWitness>,
    pub note: Option<String>,
}

fn direction_record(model: &ReducedModel, y: &DVector<f64>) -> DirectionRecord {
    let lay = Layout::of(model);
    let u = lay.u(y);
    let zeta = lay.zeta(y);
    DirectionRecord {
        q: to_vec(&lay.q(y)),
        u: to_vec(&u),
        xi: to_vec(&model.xi_of(&u, &zeta, &[])),
    }
}

fn aggregate(outcomes: Vec<(CheckOutcome, Option<DirectionRecord>, Vec<usize>)>) -> BranchCheck {
    let mut undecided = None;
    for (o, dir, face) in outcomes {
        match o {
            CheckOutcome::Fail(mut w) => {
                w.direction = dir;
                w.face = Some(face);
                return BranchCheck {
                    implication: Implication::Fail,
                    witness: Some(w),
                    note: None,
                };
            }
            CheckOutcome::Undecided(r) => undecided = Some(r),
            CheckOutcome::Pass => {}
        }
    }
    match undecided {
        Some(r) => BranchCheck {
            implication: Implication::Undecided,
            witness: None,
            note: Some(r),
        },
        None => BranchCheck {
            implication: Implication::Pass,
            witness: None,
            note: None,
        },
    }
}

/// Checks the adjoint implication on every state pattern of one face.
pub fn check_adjoint_implication(model: &ReducedModel, branch: &CriticalBranch, mode: Mode, opts: &VerifyOptions) -> BranchCheck {
    let checker = Checker::new(model, mode, opts);
    let mut cache: HashMap<Rules, CheckOutcome> = HashMap::new();
    let outcomes = branch
        .patterns
        .iter()
        .filter(|p| p.nonzero)
        .map(|p| {
            let rules = rules_from_states(&checker.lay, &p.states, &[]);
            let o = cache.entry(rules.clone()).or_insert_with(|| checker.check(&rules)).clone();
            (o, Some(direction_record(model, &p.representative)), branch.face.clone())
        })
        .collect();
    aggregate(outcomes)
}

/// The adjoint implication along the direction `(0, 0)` with the full limiting coderivative.
pub fn mordukhovich_check(model: &ReducedModel, opts: &VerifyOptions) -> MordukhovichReport {
    let checker = Checker::new(model, Mode::Iv, opts);
    let rules = mordukhovich_rules(model, &checker.lay);
    match checker.check(&rules) {
        CheckOutcome::Pass => MordukhovichReport {
            trivial_only: true,
            exact: true,
            witness: None,
        },
        CheckOutcome::Fail(w) => MordukhovichReport {
            trivial_only: false,
            exact: true,
            witness: Some(w),
        },
        CheckOutcome::Undecided(_) => MordukhovichReport {
            trivial_only: false,
            exact: false,
            witness: None,
        },
    }
}

/// Whether the given `v*` solves the non-directional adjoint inclusion; returns the completed witness.
pub fn mordukhovich_membership(model: &ReducedModel, v_star: &DVector<f64>, opts: &VerifyOptions) -> Option<AdjointWitness> {
    let lay = AdjointLayout::new(model, opts.lorentz_route);
    let width = lay.width();
    let base = base_matrix(model, &lay, width);
    let rules = mordukhovich_rules(model, &lay);
    for combo in exact_combos(model, &lay, &rules, width) {
        let mut lp = LinearProgram::new(width);
        for r in base.row_iter() {
            let row: Vec<f64> = r.iter().copied().collect();
            lp.eq(&row, 0.0);
        }
        for r in &combo.eq {
            lp.eq(r.as_slice(), 0.0);
        }
        for r in &combo.le {
            lp.le(r.as_slice(), 0.0);
        }
        lp.bound_all(-1e6, 1e6);
        for j in 0..lay.n {
            lp.bound(j, v_star[j], v_star[j]);
        }
        if let LpOutcome::Optimal { x, .. } = lp.maximize(&vec![0.0; width]) {
            let res = residual(&x, &combo, &base);
            if res <= 1e-7 {
                return Some(AdjointWitness {
                    v_star: to_vec(v_star),
                    eta: x.rows(lay.n, lay.rows.len()).iter().copied().collect(),
                    rows: lay.rows.clone(),
                    d: x.rows(lay.n + lay.rows.len(), lay.base_width() - lay.n - lay.rows.len()).iter().copied().collect(),
                    pieces: combo.labels.clone(),
                    face: None,
                    direction: None,
                    residual: res,
                });
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Driver.

/// Everything computed by one verification run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: Option<ReducedModel>,
    pub branches: Vec<CriticalBranch>,
    pub report: VerificationReport,
    avi: AviOptions,
}

impl Analysis {
    /// `DS(p̄,x̄)(q)`; refused unless the criterion verified the Aubin property.
    pub fn derivative(&self, q: &[f64]) -> Result<Vec<DsElement>, VerifyError> {
        if self.report.verdict != Verdict::AubinVerified {
            return Err(VerifyError::NotVerified);
        }
        let model = self.model.as_ref().ok_or(VerifyError::NotVerified)?;
        if q.len() != model.l() {
            return Err(VerifyError::Dimension {
                expected: model.l(),
                got: q.len(),
            });
        }
        Ok(avi::solutions_at(model, &self.branches, &DVector::from_column_slice(q), &self.avi))
    }
}

fn inconclusive(reason: impl Into<String>) -> Verdict {
    Verdict::Inconclusive { reason: reason.into() }
}

fn empty_report(spec: &ProblemSpec, opts: &VerifyOptions, verdict: Verdict) -> VerificationReport {
    VerificationReport {
        problem: spec.name.clone(),
        reference: spec.file().reference.clone(),
        mode: opts.mode,
        verdict,
        multiplier: None,
        nondegenerate: None,
        reduction: None,
        coverage: None,
        branches: Vec::new(),
        mordukhovich: None,
        ds: None,
        caveats: Vec::new(),
    }
}

pub fn analyze(spec: &ProblemSpec, opts: &VerifyOptions) -> Result<Analysis, VerifyError> {
    let data = assemble_reference(spec);
    let avi_opts = opts.avi();
    let mut caveats = Vec::new();
    if opts.mode == Mode::Iii {
        caveats.push("mode iii assumes metric subregularity of the linearized map; it is not checked".to_string());
    }
    let model = match chain::reduce(&data, &spec.cone, &opts.tol) {
        Ok(m) => m,
        Err(ChainError::Infeasible(s) | ChainError::NotNormal(s)) => return Err(VerifyError::ReferenceInfeasible(s)),
        Err(e @ ChainError::Degenerate { .. }) => {
            let mut report = empty_report(spec, opts, inconclusive(format!("A2 fails: {e}")));
            report.nondegenerate = chain::check_nondegeneracy(&data, &spec.cone, &opts.tol).ok();
            report.caveats = caveats;
            return Ok(Analysis {
                model: None,
                branches: Vec::new(),
                report,
                avi: avi_opts,
            });
        }
        Err(e) => {
            let mut report = empty_report(spec, opts, inconclusive(e.to_string()));
            report.caveats = caveats;
            return Ok(Analysis {
                model: None,
                branches: Vec::new(),
                report,
                avi: avi_opts,
            });
        }
    };
    let mut report = empty_report(spec, opts, Verdict::AubinVerified);
    report.multiplier = Some(to_vec(&model.lambda));
    report.nondegenerate = Some(model.nondegeneracy.clone());
    report.reduction = Some(model.summary());
    if opts.compare_mordukhovich {
        report.mordukhovich = Some(mordukhovich_check(&model, opts));
    }

    if model.has_curved_blocks() {
        let verdict = curved_path(&model, opts, &avi_opts, &mut report, &mut caveats);
        report.verdict = verdict;
        report.caveats = caveats;
        return Ok(Analysis {
            model: Some(model),
            branches: Vec::new(),
            report,
            avi: avi_opts,
        });
    }

    let branches = match avi::enumerate_critical_branches(&model, &avi_opts) {
        Ok(b) => b,
        Err(e @ (AviError::TooManyRows(..) | AviError::Unsupported(_))) => {
            report.verdict = inconclusive(e.to_string());
            report.caveats = caveats;
            return Ok(Analysis {
                model: Some(model),
                branches: Vec::new(),
                report,
                avi: avi_opts,
            });
        }
    };
    let coverage = avi::check_direction_coverage(&model, &branches, &avi_opts);
    let checks = par::map_ordered(opts.execution, &branches, |b| check_adjoint_implication(&model, b, opts.mode, opts));
    let mut failed: Option<AdjointWitness> = None;
    let mut undecided: Option<String> = None;
    for (b, c) in branches.iter().zip(&checks) {
        let (u, xi) = match &b.solution {
            BranchSolution::Linear { u, xi, .. } => (Some(matrix_rows(u)), Some(matrix_rows(xi))),
            BranchSolution::Affine { .. } => (None, None),
        };
        if c.implication == Implication::Fail && failed.is_none() {
            failed = c.witness.clone();
        }
        if c.implication == Implication::Undecided && undecided.is_none() {
            undecided = c.note.clone();
        }
        report.branches.push(BranchReport {
            region: b.region.label.clone(),
            face: b.face.clone(),
            u,
            xi,
            patterns: b.patterns.iter().map(|p| p.states.clone()).collect(),
            implication: c.implication,
            exact: c.implication != Implication::Undecided,
            witness: c.witness.clone(),
        });
    }
    let verdict = if !coverage.covered {
        inconclusive(format!(
            "condition (i) fails: no critical direction for q = {}",
            fmt_vec(coverage.uncovered.as_deref().unwrap_or(&[]))
        ))
    } else if let Some(w) = failed {
        Verdict::CriterionFailed { witness: w }
    } else if !coverage.exact {
        inconclusive("coverage of parameter directions was only sampled")
    } else if let Some(r) = undecided {
        inconclusive(r)
    } else {
        Verdict::AubinVerified
    };
    report.coverage = Some(coverage);
    if verdict == Verdict::AubinVerified {
        let l = model.l();
        let mut samples = Vec::new();
        for k in 0..l {
            for sgn in [-1.0, 1.0] {
                let mut q = DVector::zeros(l);
                q[k] = sgn;
                samples.push(DsSample {
                    q: to_vec(&q),
                    elements: avi::solutions_at(&model, &branches, &q, &avi_opts),
                });
            }
        }
        report.ds = Some(DsReport {
            maps: report
                .branches
                .iter()
                .map(|b| DsMap {
                    face: b.face.clone(),
                    region: b.region.clone(),
                    u: b.u.clone(),
                    xi: b.xi.clone(),
                })
                .collect(),
            samples,
        });
    } else {
        caveats.push("DS is reported only when the criterion verifies the Aubin property".into());
    }
    report.verdict = verdict;
    report.caveats = caveats;
    Ok(Analysis {
        model: Some(model),
        branches,
        report,
        avi: avi_opts,
    })
}

fn curved_path(
    model: &ReducedModel,
    opts: &VerifyOptions,
    avi_opts: &AviOptions,
    report: &mut VerificationReport,
    caveats: &mut Vec<String>,
) -> Verdict {
    caveats.push(
        "Lorentz blocks of dimension ≥ 3 at the apex: critical directions and coderivative families are sampled; \
         the Aubin property is never certified on this path"
            .into(),
    );
    let sampled = match avi::sampled_branches(model, avi_opts) {
        Ok(s) => s,
        Err(e) => return inconclusive(e.to_string()),
    };
    let checker = Checker::new(model, opts.mode, opts);
    let mut cache: HashMap<Rules, CheckOutcome> = HashMap::new();
    let mut groups: Vec<(String, Vec<RowState>, Vec<BlockState>, Vec<(CheckOutcome, DirectionRecord)>)> = Vec::new();
    for smp in &sampled.samples {
        if smp.q.norm() == 0.0 && smp.u.norm() == 0.0 {
            continue;
        }
        let tags: Vec<Option<CaseTag>> = model
            .curved_blocks()
            .zip(&smp.apex_xi)
            .map(|(b, xi)| {
                let v = &b.jac * &smp.u;
                b.spec.classify(&(&v + xi), &v, opts.tol.residual.max(1e-9)).ok()
            })
            .collect();
        let rules = rules_from_states(&checker.lay, &smp.row_states, &tags);
        let o = cache.entry(rules.clone()).or_insert_with(|| checker.check(&rules)).clone();
        let label = format!("{:?} / {:?}", smp.row_states, smp.block_states);
        let rec = DirectionRecord {
            q: to_vec(&smp.q),
            u: to_vec(&smp.u),
            xi: to_vec(&smp.xi),
        };
        match groups.iter_mut().find(|g| g.0 == label) {
            Some(g) => g.3.push((o, rec)),
            None => groups.push((label, smp.row_states.clone(), smp.block_states.clone(), vec![(o, rec)])),
        }
    }
    let mut failed = None;
    for (label, states, _, outs) in groups {
        let first = outs.first().map(|(_, r)| r.clone());
        let check = aggregate(outs.into_iter().map(|(o, r)| (o, Some(r), Vec::new())).collect());
        if check.implication == Implication::Fail && failed.is_none() {
            failed = check.witness.clone();
        }
        report.branches.push(BranchReport {
            region: format!("sampled: {label}"),
            face: Vec::new(),
            u: first.as_ref().map(|r| vec![r.u.clone()]),
            xi: first.as_ref().map(|r| vec![r.xi.clone()]),
            patterns: vec![states],
            implication: check.implication,
            exact: false,
            witness: check.witness,
        });
    }
    report.coverage = Some(Coverage {
        covered: sampled.uncovered.is_none(),
        exact: false,
        method: format!("{} sampled parameter directions", avi_opts.curved_q_samples.max(1)),
        uncovered: sampled.uncovered.as_ref().map(to_vec),
    });
    match failed {
        Some(w) => Verdict::CriterionFailed { witness: w },
        None => inconclusive("Lorentz blocks of dimension ≥ 3 are only sampled"),
    }
}

/// Runs the full pipeline and returns the report.
pub fn verify_aubin(spec: &ProblemSpec, opts: &VerifyOptions) -> Result<VerificationReport, VerifyError> {
    analyze(spec, opts).map(|a| a.report)
}

/// `DS(p̄,x̄)(q)` via a fresh verification run.
pub fn solution_map_derivative(spec: &ProblemSpec, opts: &VerifyOptions, q: &[f64]) -> Result<Vec<DsElement>, VerifyError> {
    analyze(spec, opts)?.derivative(q)
}

/// Helper for tests and the probe: the reduced model of a problem.
pub fn reduced_model(spec: &ProblemSpec, tol: &Tolerances) -> Result<ReducedModel, ChainError> {
    chain::reduce(&assemble_reference(spec), &spec.cone, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::dvector;

    #[test]
    fn first_example_is_verified() {
        let report = verify_aubin(&fixtures::example1(), &VerifyOptions::default()).unwrap();
        assert_eq!(report.verdict, Verdict::AubinVerified, "{}", report.to_text());
        assert_eq!(report.branches.len(), 4);
        assert!(report.branches.iter().all(|b| b.implication == Implication::Pass));
        let m = report.mordukhovich.unwrap();
        assert!(!m.trivial_only);
        assert!(m.witness.is_some());
    }

    #[test]
    fn second_example_is_verified() {
        let report = verify_aubin(&fixtures::example2(), &VerifyOptions::default()).unwrap();
        assert_eq!(report.verdict, Verdict::AubinVerified, "{}", report.to_text());
        let m = report.mordukhovich.unwrap();
        assert!(m.witness.is_some());
    }

    #[test]
    fn second_example_routes_agree() {
        for mode in [Mode::Iv, Mode::Iii] {
            let a = verify_aubin(&fixtures::example2(), &VerifyOptions { mode, ..VerifyOptions::default() }).unwrap();
            let b = verify_aubin(
                &fixtures::example2(),
                &VerifyOptions {
                    mode,
                    lorentz_route: LorentzRoute::Polyhedral,
                    ..VerifyOptions::default()
                },
            )
            .unwrap();
            assert_eq!(a.verdict, b.verdict);
            let ia: Vec<_> = a.branches.iter().map(|x| x.implication).collect();
            let ib: Vec<_> = b.branches.iter().map(|x| x.implication).collect();
            assert_eq!(ia, ib);
            assert_eq!(
                a.mordukhovich.unwrap().trivial_only,
                b.mordukhovich.unwrap().trivial_only
            );
        }
    }

    #[test]
    fn second_example_adjoint_rows() {
        let m = reduced_model(&fixtures::example2(), &Tolerances::default()).unwrap();
        let sys = assemble_adjoint_system(&m, LorentzRoute::Projection);
        assert_eq!(sys.variables, vec!["v1", "v2", "d1", "d2"]);
        assert_eq!(sys.matrix, DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 0.0, -1.0, 0.0, -5.0, 2.0, 0.0]));
    }

    #[test]
    fn classical_witness_of_first_example() {
        let m = reduced_model(&fixtures::example1(), &Tolerances::default()).unwrap();
        let w = mordukhovich_membership(&m, &dvector![-0.5, 1.0], &VerifyOptions::default()).unwrap();
        assert!((w.eta[0]).abs() < 1e-9 && (w.eta[1] - 1.0).abs() < 1e-9);
        assert!(mordukhovich_membership(&m, &dvector![1.0, 0.0], &VerifyOptions::default()).is_none());
    }

    #[test]
    fn derivative_refused_without_verification() {
        let spec = crate::ProblemSpec::from_file(crate::ProblemFile {
            name: "dup".into(),
            parameters: vec!["p".into()],
            variables: vec!["x1".into(), "x2".into()],
            h: vec!["x1 - p".into(), "x2".into()],
            g: vec!["x1".into(), "x1".into()],
            cone: crate::cones::ConeSpec::OrthantNonpositive { dim: 2 },
            reference: ReferencePoint {
                p: vec![0.0],
                x: vec![0.0, 0.0],
            },
        })
        .unwrap();
        let a = analyze(&spec, &VerifyOptions::default()).unwrap();
        assert!(matches!(a.report.verdict, Verdict::Inconclusive { ref reason } if reason.starts_with("A2 fails")));
        assert_eq!(a.derivative(&[1.0]), Err(VerifyError::NotVerified));
    }

    #[test]
    fn report_json_round_trips() {
        for spec in [fixtures::example1(), fixtures::example2(), fixtures::quadratic()] {
            let report = verify_aubin(&spec, &VerifyOptions::default()).unwrap();
            let back = VerificationReport::from_json(&report.to_json()).unwrap();
            assert_eq!(report, back);
        }
    }

    #[test]
    fn planar_tags_match_the_classifier() {
        let k = LorentzSpec::new(2, crate::cones::Axis::Last);
        let rows = k.hrep_rows().unwrap();
        // v in int K
        let v = dvector![0.0, 1.0];
        assert_eq!(k.classify(&v, &v, 1e-9).unwrap(), planar_tag(RowState::Neg, RowState::Neg).unwrap());
        // v on the ray of facet 0, ξ along facet 0's normal
        let v = dvector![1.0, 1.0];
        assert!(rows[0].dot(&v).abs() < 1e-15);
        let xi = &rows[0] * 0.5;
        assert_eq!(k.classify(&(&v + &xi), &v, 1e-9).unwrap(), planar_tag(RowState::Pos, RowState::Neg).unwrap());
        assert_eq!(k.classify(&v, &v, 1e-9).unwrap(), planar_tag(RowState::Bi, RowState::Neg).unwrap());
        let z = dvector![0.0, 0.0];
        let xi = &rows[0] + &rows[1];
        assert_eq!(k.classify(&xi, &z, 1e-9).unwrap(), planar_tag(RowState::Pos, RowState::Pos).unwrap());
        assert_eq!(k.classify(&rows[1], &z, 1e-9).unwrap(), planar_tag(RowState::Bi, RowState::Pos).unwrap());
        assert_eq!(planar_tag(RowState::Bi, RowState::Bi), None);
    }
}
