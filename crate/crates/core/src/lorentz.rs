//! Lorentz (second-order) cone calculus.
//!
//! `𝒦 = {(z₀, z̄) | z₀ ≥ ‖z̄‖}`. Internally every block is handled in the
//! *canonical* ordering `(z̄, z₀)` — axis last — which is also the ordering of
//! the matrices `C(w,α)`, `A`, `B` below; [`LorentzSpec`] converts from the
//! user's axis convention.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_free::standard_normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::Axis;
use crate::par::{self, Execution};

mod rand_distr_free {
    use rand::Rng;

    /// Box–Muller standard normal sample.
    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LorentzError {
    #[error("k differs from P(h) by {0:.3e}; (h,k) is not a tangent direction of the projection graph")]
    NotTangent(f64),
    #[error("the zero direction has no case tag")]
    ZeroDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LorentzSpec {
    pub dim: usize,
    pub axis: Axis,
}

/// Where a point sits relative to `𝒦` and `𝒦°`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Apex,
    Interior,
    PolarInterior,
    Boundary,
    PolarBoundary,
    Outside,
}

/// The five kinds of nonzero directions `(h, k)` with `k = P_𝒦(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    IntK,
    IntPolar,
    Outside,
    BdK,
    BdPolar,
}

/// Directional limiting coderivative of `P_𝒦` at the apex `(0, 0)`.
///
/// The C-families range over every `w` on the unit sphere of `ℝ^{s−1}` and
/// `α ∈ [0, 1]`. `Limiting` is the non-directional limiting coderivative
/// (zero direction): the regular coderivative together with all the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoderivFamily {
    Identity,
    Zero,
    CFamily,
    CFamilyPlusA,
    CFamilyPlusB,
    Limiting,
}

impl LorentzSpec {
    pub fn new(dim: usize, axis: Axis) -> Self {
        assert!(dim >= 1, "Lorentz cone dimension must be at least 1");
        Self { dim, axis }
    }

    /// Reorders to `(z̄, z₀)`.
    pub fn canonical(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.axis {
            Axis::Last => z.clone(),
            Axis::First => DVector::from_fn(self.dim, |i, _| z[(i + 1) % self.dim]),
        }
    }

    pub fn from_canonical(&self, c: &DVector<f64>) -> DVector<f64> {
        match self.axis {
            Axis::Last => c.clone(),
            Axis::First => DVector::from_fn(self.dim, |i, _| c[(i + self.dim - 1) % self.dim]),
        }
    }

    /// Permutation matrix `Π` with `canonical(z) = Π z`.
    pub fn permutation(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| match self.axis {
            Axis::Last => f64::from(u8::from(i == j)),
            Axis::First => f64::from(u8::from(j == (i + 1) % self.dim)),
        })
    }

    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        let (bar, z0) = split(&self.canonical(z));
        z0 >= bar.norm() - tol
    }

    pub fn position(&self, z: &DVector<f64>, tol: f64) -> Position {
        let (bar, z0) = split(&self.canonical(z));
        let n = bar.norm();
        let scale = tol * z.norm().max(1.0);
        if z.norm() <= tol {
            Position::Apex
        } else if z0 > n + scale {
            Position::Interior
        } else if -z0 > n + scale {
            Position::PolarInterior
        } else if (z0 - n).abs() <= scale {
            Position::Boundary
        } else if (z0 + n).abs() <= scale {
            Position::PolarBoundary
        } else {
            Position::Outside
        }
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        self.from_canonical(&project_canonical(&self.canonical(z)))
    }

    /// Projection onto `𝒦° = −𝒦`.
    pub fn project_polar(&self, z: &DVector<f64>) -> DVector<f64> {
        -self.project(&-z)
    }

    /// `P′_𝒦(z; h)`.
    pub fn dir_derivative(&self, z: &DVector<f64>, h: &DVector<f64>, tol: f64) -> DVector<f64> {
        let zc = self.canonical(z);
        let hc = self.canonical(h);
        let (bar, z0) = split(&zc);
        let n = bar.norm();
        let s = self.dim;
        let out = match self.position(z, tol) {
            Position::Apex => project_canonical(&hc),
            Position::Interior => hc,
            Position::PolarInterior => DVector::zeros(s),
            Position::Outside => {
                let w = bar / n;
                jacobian_outside(&w, z0 / n) * hc
            }
            Position::Boundary => {
                let w = bar / n;
                let (hbar, h0) = split(&hc);
                let slope = w.dot(&hbar) - h0;
                if slope > 0.0 {
                    hc - lift(&w, -1.0) * (0.5 * slope)
                } else {
                    hc
                }
            }
            Position::PolarBoundary => {
                let w = bar / n;
                let (hbar, h0) = split(&hc);
                let slope = w.dot(&hbar) + h0;
                if slope > 0.0 {
                    lift(&w, 1.0) * (0.5 * slope)
                } else {
                    DVector::zeros(s)
                }
            }
        };
        self.from_canonical(&out)
    }

    /// Tags a nonzero tangent direction `(h, k)` of `Gr P_𝒦` at the apex.
    pub fn classify(&self, h: &DVector<f64>, k: &DVector<f64>, tol: f64) -> Result<CaseTag, LorentzError> {
        let scale = h.norm().max(k.norm());
        if scale <= tol {
            return Err(LorentzError::ZeroDirection);
        }
        let gap = (k - self.project(h)).norm();
        if gap > tol * scale.max(1.0) {
            return Err(LorentzError::NotTangent(gap));
        }
        Ok(match self.position(h, tol) {
            Position::Interior => CaseTag::IntK,
            Position::PolarInterior => CaseTag::IntPolar,
            Position::Outside => CaseTag::Outside,
            Position::Boundary => CaseTag::BdK,
            Position::PolarBoundary => CaseTag::BdPolar,
            Position::Apex => return Err(LorentzError::ZeroDirection),
        })
    }

    /// Halfspace description for `s ≤ 2` (in the user's ordering).
    pub fn hrep_rows(&self) -> Option<Vec<DVector<f64>>> {
        let rows: Vec<DVector<f64>> = match self.dim {
            1 => vec![DVector::from_element(1, -1.0)],
            2 => vec![
                DVector::from_vec(vec![1.0, -1.0]),
                DVector::from_vec(vec![-1.0, -1.0]),
            ],
            _ => return None,
        };
        Some(rows.iter().map(|r| self.from_canonical(r)).collect())
    }
}

fn split(c: &DVector<f64>) -> (DVector<f64>, f64) {
    let s = c.len();
    (c.rows(0, s - 1).into_owned(), c[s - 1])
}

fn lift(w: &DVector<f64>, last: f64) -> DVector<f64> {
    let mut out = DVector::zeros(w.len() + 1);
    out.rows_mut(0, w.len()).copy_from(w);
    out[w.len()] = last;
    out
}

fn project_canonical(c: &DVector<f64>) -> DVector<f64> {
    let (bar, z0) = split(c);
    let n = bar.norm();
    if n <= z0 {
        c.clone()
    } else if n <= -z0 {
        DVector::zeros(c.len())
    } else {
        lift(&(bar / n), 1.0) * (0.5 * (z0 + n))
    }
}

fn jacobian_outside(w: &DVector<f64>, t: f64) -> DMatrix<f64> {
    let m = w.len();
    let mut j = DMatrix::zeros(m + 1, m + 1);
    let top = DMatrix::identity(m, m) * (1.0 + t) - w * w.transpose() * t;
    j.view_mut((0, 0), (m, m)).copy_from(&top);
    j.view_mut((0, m), (m, 1)).copy_from(w);
    j.view_mut((m, 0), (1, m)).copy_from(&w.transpose());
    j[(m, m)] = 1.0;
    j * 0.5
}

/// `C(w,α) = ½ [[2αI + (1−2α)wwᵀ, w], [wᵀ, 1]]`.
pub fn c_matrix(w: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
    let m = w.len();
    let mut c = DMatrix::zeros(m + 1, m + 1);
    let top = DMatrix::identity(m, m) * (2.0 * alpha) + w * w.transpose() * (1.0 - 2.0 * alpha);
    c.view_mut((0, 0), (m, m)).copy_from(&top);
    c.view_mut((0, m), (m, 1)).copy_from(w);
    c.view_mut((m, 0), (1, m)).copy_from(&w.transpose());
    c[(m, m)] = 1.0;
    c * 0.5
}

/// `A = I + ½ [[−wwᵀ, w], [wᵀ, −1]]`.
pub fn a_matrix(w: &DVector<f64>) -> DMatrix<f64> {
    let m = w.len();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    a.view_mut((0, 0), (m, m)).copy_from(&(-(w * w.transpose())));
    a.view_mut((0, m), (m, 1)).copy_from(w);
    a.view_mut((m, 0), (1, m)).copy_from(&w.transpose());
    a[(m, m)] = -1.0;
    DMatrix::identity(m + 1, m + 1) + a * 0.5
}

/// `B = ½ [[wwᵀ, w], [wᵀ, 1]]`.
pub fn b_matrix(w: &DVector<f64>) -> DMatrix<f64> {
    let l = lift(w, 1.0);
    &l * l.transpose() * 0.5
}

/// `⟨(−w, 1), u*⟩ ≥ 0` selects `A ∈ 𝒜(u*)`.
pub fn a_admissible(w: &DVector<f64>, ustar: &DVector<f64>) -> f64 {
    lift(&-w, 1.0).dot(ustar)
}

/// `⟨(w, 1), u*⟩ ≥ 0` selects `B ∈ ℬ(u*)`.
pub fn b_admissible(w: &DVector<f64>, ustar: &DVector<f64>) -> f64 {
    lift(w, 1.0).dot(ustar)
}

pub fn coderiv_family_at_apex(tag: CaseTag) -> CoderivFamily {
    match tag {
        CaseTag::IntK => CoderivFamily::Identity,
        CaseTag::IntPolar => CoderivFamily::Zero,
        CaseTag::Outside => CoderivFamily::CFamily,
        CaseTag::BdK => CoderivFamily::CFamilyPlusA,
        CaseTag::BdPolar => CoderivFamily::CFamilyPlusB,
    }
}

/// How `y` was produced from `u*` (canonical coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MembershipWitness {
    Identity,
    Zero,
    C { w: Vec<f64>, alpha: f64 },
    ConvA { w: Vec<f64>, weight: f64 },
    ConvB { w: Vec<f64>, weight: f64 },
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    CertifiedIn(MembershipWitness),
    CertifiedOut,
    Undecided { best_residual: f64 },
}

impl Membership {
    pub fn is_in(&self) -> bool {
        matches!(self, Membership::CertifiedIn(_))
    }
}

/// Sampling budget for `s > 2` membership queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub sphere_samples: usize,
    pub refine_steps: usize,
    pub seed: u64,
    pub tol: f64,
    pub execution: Execution,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            sphere_samples: 10_000,
            refine_steps: 200,
            seed: 0,
            tol: 1e-9,
            execution: Execution::Parallel,
        }
    }
}

/// Deterministic pseudo-random points on the unit sphere of `ℝᵐ`.
pub fn sphere_points(m: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = DVector::from_fn(m, |_, _| standard_normal(&mut rng));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        })
        .collect()
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Best `y ≈ P + t·Q` over `t ∈ [0,1]` for fixed matrices: returns `(t, residual)`.
fn best_on_segment(p: &DVector<f64>, q: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let a = p - y;
    let qq = q.norm_squared();
    let t = if qq > 0.0 { clamp01(-a.dot(q) / qq) } else { 0.0 };
    (t, (a + q * t).norm())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    C,
    A,
    B,
}

/// Residual of the best member of one parametric part for a fixed `w`.
fn part_residual(part: Part, w: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    match part {
        Part::C => {
            let p = c_matrix(w, 0.0) * u;
            let q = (c_matrix(w, 1.0) - c_matrix(w, 0.0)) * u;
            best_on_segment(&p, &q, y)
        }
        Part::A => {
            if a_admissible(w, u) < 0.0 {
                return (0.0, f64::INFINITY);
            }
            let q = (a_matrix(w) * u) - u;
            best_on_segment(u, &q, y)
        }
        Part::B => {
            if b_admissible(w, u) < 0.0 {
                return (0.0, f64::INFINITY);
            }
            let q = (b_matrix(w) * u) - u;
            best_on_segment(u, &q, y)
        }
    }
}

fn witness_for(part: Part, w: &DVector<f64>, t: f64) -> MembershipWitness {
    let w = w.iter().copied().collect();
    match part {
        Part::C => MembershipWitness::C { w, alpha: t },
        Part::A => MembershipWitness::ConvA { w, weight: t },
        Part::B => MembershipWitness::ConvB { w, weight: t },
    }
}

fn regular_contains(u: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    let (ybar, y0) = split(y);
    let d = u - y;
    let (dbar, d0) = split(&d);
    y0 >= ybar.norm() - tol && d0 >= dbar.norm() - tol
}

/// Decides `y ∈ f(u*)` for a block given in the user's ordering.
pub fn family_membership(
    spec: &LorentzSpec,
    family: CoderivFamily,
    ustar: &DVector<f64>,
    y: &DVector<f64>,
    opts: &SamplingOptions,
) -> Membership {
    let u = spec.canonical(ustar);
    let y = spec.canonical(y);
    let tol = opts.tol * u.norm().max(y.norm()).max(1.0);
    let s = spec.dim;

    let identity = (&y - &u).norm() <= tol;
    let zero = y.norm() <= tol;
    let parts: &[Part] = match family {
        CoderivFamily::Identity => {
            return if identity {
                Membership::CertifiedIn(MembershipWitness::Identity)
            } else {
                Membership::CertifiedOut
            }
        }
        CoderivFamily::Zero => {
            return if zero {
                Membership::CertifiedIn(MembershipWitness::Zero)
            } else {
                Membership::CertifiedOut
            }
        }
        CoderivFamily::CFamily => &[Part::C],
        CoderivFamily::CFamilyPlusA => &[Part::C, Part::A],
        CoderivFamily::CFamilyPlusB => &[Part::C, Part::B],
        CoderivFamily::Limiting => {
            if identity {
                return Membership::CertifiedIn(MembershipWitness::Identity);
            }
            if zero {
                return Membership::CertifiedIn(MembershipWitness::Zero);
            }
            if regular_contains(&u, &y, tol) {
                return Membership::CertifiedIn(MembershipWitness::Regular);
            }
            &[Part::C, Part::A, Part::B]
        }
    };
    // conv{u*, Au*} and conv{u*, Bu*} contain u* itself
    if identity && parts.len() > 1 {
        return Membership::CertifiedIn(MembershipWitness::Identity);
    }
    if s == 1 {
        // the unit sphere of ℝ⁰ is empty
        return Membership::CertifiedOut;
    }
    // Every member has the form M u* with 0 ≼ M ≼ I, hence ⟨y, u*⟩ ≥ ‖y‖².
    if y.dot(&u) < y.norm_squared() - tol {
        return Membership::CertifiedOut;
    }
    if s == 2 {
        let mut found = None;
        for part in parts {
            for wv in [1.0, -1.0] {
                let w = DVector::from_element(1, wv);
                let (t, r) = part_residual(*part, &w, &u, &y);
                if r <= tol {
                    found = Some(witness_for(*part, &w, t));
                    break;
                }
            }
            if found.is_some() {
                break;
            }
        }
        return match found {
            Some(w) => Membership::CertifiedIn(w),
            None => Membership::CertifiedOut,
        };
    }
    sampled_membership(s - 1, parts, &u, &y, tol, opts)
}

fn sampled_membership(
    m: usize,
    parts: &[Part],
    u: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
    opts: &SamplingOptions,
) -> Membership {
    let points = sphere_points(m, opts.sphere_samples.max(1), opts.seed);
    let mut best: Option<(f64, Part, DVector<f64>)> = None;
    for &part in parts {
        let scored = par::map_ordered(opts.execution, &points, |w| part_residual(part, w, u, y).1);
        for (w, r) in points.iter().zip(scored) {
            if best.as_ref().is_none_or(|(b, _, _)| r < *b) {
                best = Some((r, part, w.clone()));
            }
        }
    }
    let Some((mut r, part, mut w)) = best else {
        return Membership::Undecided { best_residual: f64::INFINITY };
    };
    // Local refinement: random perturbations with a shrinking radius.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut radius = 0.1;
    for _ in 0..opts.refine_steps {
        if r <= tol {
            break;
        }
        let step = DVector::from_fn(m, |_, _| standard_normal(&mut rng)) * radius;
        let cand = (&w + step).normalize();
        let rc = part_residual(part, &cand, u, y).1;
        if rc < r {
            r = rc;
            w = cand;
        } else {
            radius *= 0.97;
        }
    }
    if r <= tol {
        let (t, _) = part_residual(part, &w, u, y);
        Membership::CertifiedIn(witness_for(part, &w, t))
    } else {
        Membership::Undecided { best_residual: r }
    }
}

/// Projection-side query equivalent to `p ∈ D̂*N_D(a,b)(q)`:
/// `output ∈ D̂*P_D(base)(input)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionQuery {
    /// Point `(a + b, a)` of `Gr P_D`.
    pub base: (DVector<f64>, DVector<f64>),
    pub input: DVector<f64>,
    pub output: DVector<f64>,
}

pub fn convert_projection_normal(
    a: &DVector<f64>,
    b: &DVector<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
) -> ProjectionQuery {
    ProjectionQuery {
        base: (a + b, a.clone()),
        input: -q - p,
        output: -q,
    }
}

/// Direction `(v, ξ)` of `Gr N_D` as the direction `(v + ξ, v)` of `Gr P_D`.
pub fn projection_direction(v: &DVector<f64>, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (v + xi, v.clone())
}

/// Linear pieces of a planar (`s = 2`) family, over the canonical variables
/// `[u₁, u₂, y₁, y₂, ρ]` where `ρ` is an auxiliary scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPiece {
    pub label: String,
    pub eq: Vec<[f64; 5]>,
    pub le: Vec<[f64; 5]>,
}

pub fn planar_pieces(family: CoderivFamily) -> Vec<PlanarPiece> {
    let identity = PlanarPiece {
        label: "identity".into(),
        eq: vec![[-1.0, 0.0, 1.0, 0.0, 0.0], [0.0, -1.0, 0.0, 1.0, 0.0]],
        le: vec![],
    };
    let zero = PlanarPiece {
        label: "zero".into(),
        eq: vec![[0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0]],
        le: vec![],
    };
    // y = C(w) u*, C(w) = ½[[1, w], [w, 1]]
    let c = |w: f64| PlanarPiece {
        label: format!("C(w={w})"),
        eq: vec![[-0.5, -0.5 * w, 1.0, 0.0, 0.0], [-0.5 * w, -0.5, 0.0, 1.0, 0.0]],
        le: vec![],
    };
    // y = u* + ρ (w, −1), with (A − I)u* = (B − I)u* = ½β (w, −1), β = u₂ − w u₁
    let conv_eq = |w: f64| {
        vec![
            [-1.0, 0.0, 1.0, 0.0, -w],
            [0.0, -1.0, 0.0, 1.0, 1.0],
        ]
    };
    let a = |w: f64| PlanarPiece {
        label: format!("conv(u*, A(w={w})u*)"),
        eq: conv_eq(w),
        le: vec![
            [w, -1.0, 0.0, 0.0, 0.0],        // β ≥ 0
            [0.0, 0.0, 0.0, 0.0, -1.0],      // ρ ≥ 0
            [0.5 * w, -0.5, 0.0, 0.0, 1.0],  // ρ ≤ β/2
        ],
    };
    let b = |w: f64, positive: bool| {
        let sign = if positive { 1.0 } else { -1.0 };
        PlanarPiece {
            label: format!("conv(u*, B(w={w})u*), β{}0", if positive { "≥" } else { "≤" }),
            eq: conv_eq(w),
            le: vec![
                [-w, -1.0, 0.0, 0.0, 0.0],                      // w u₁ + u₂ ≥ 0
                [sign * w, -sign, 0.0, 0.0, 0.0],               // sign·β ≥ 0
                [0.0, 0.0, 0.0, 0.0, -sign],                    // sign·ρ ≥ 0
                [sign * 0.5 * w, -sign * 0.5, 0.0, 0.0, sign],  // sign·ρ ≤ sign·β/2
            ],
        }
    };
    let regular = PlanarPiece {
        label: "regular".into(),
        eq: vec![],
        le: vec![
            // y ∈ 𝒦
            [0.0, 0.0, 1.0, -1.0, 0.0],
            [0.0, 0.0, -1.0, -1.0, 0.0],
            // u* − y ∈ 𝒦
            [1.0, -1.0, -1.0, 1.0, 0.0],
            [-1.0, -1.0, 1.0, 1.0, 0.0],
        ],
    };
    let cs = || vec![c(1.0), c(-1.0)];
    match family {
        CoderivFamily::Identity => vec![identity],
        CoderivFamily::Zero => vec![zero],
        CoderivFamily::CFamily => cs(),
        CoderivFamily::CFamilyPlusA => {
            let mut v = cs();
            v.extend([a(1.0), a(-1.0)]);
            v
        }
        CoderivFamily::CFamilyPlusB => {
            let mut v = cs();
            v.extend([b(1.0, true), b(1.0, false), b(-1.0, true), b(-1.0, false)]);
            v
        }
        CoderivFamily::Limiting => {
            let mut v = vec![regular, identity, zero];
            v.extend(cs());
            v.extend([a(1.0), a(-1.0)]);
            v.extend([b(1.0, true), b(1.0, false), b(-1.0, true), b(-1.0, false)]);
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn last(s: usize) -> LorentzSpec {
        LorentzSpec::new(s, Axis::Last)
    }

    #[test]
    fn projection_examples() {
        let k = LorentzSpec::new(3, Axis::First);
        let inside = dvector![1.0, 0.0, 0.0];
        assert_eq!(k.project(&inside), inside);
        assert_eq!(k.project(&dvector![-1.0, 0.0, 0.0]), dvector![0.0, 0.0, 0.0]);
        assert_eq!(last(2).project(&dvector![1.0, 0.0]), dvector![0.5, 0.5]);
    }

    #[test]
    fn planar_projection_matches_grid_search() {
        let k = last(2);
        let z = dvector![1.0, 0.0];
        // brute force over a fine grid of 𝒦 ∩ [−2,2]²
        let mut best = (f64::INFINITY, dvector![0.0, 0.0]);
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let p = dvector![-2.0 + 4.0 * i as f64 / n as f64, 4.0 * j as f64 / n as f64 / 2.0];
                if k.contains(&p, 0.0) {
                    let d = (&p - &z).norm();
                    if d < best.0 {
                        best = (d, p);
                    }
                }
            }
        }
        assert!((k.project(&z) - best.1).norm() <= 0.011);
    }

    #[test]
    fn axis_conventions_agree() {
        let first = LorentzSpec::new(3, Axis::First);
        let lst = LorentzSpec::new(3, Axis::Last);
        let z = dvector![0.3, 2.0, -1.0]; // z₀ = 0.3 first
        let zl = dvector![2.0, -1.0, 0.3];
        assert!((first.canonical(&z) - &zl).norm() == 0.0);
        assert_eq!(first.from_canonical(&zl), z);
        assert!((first.permutation() * &z - &zl).norm() == 0.0);
        assert!((first.canonical(&first.project(&z)) - lst.project(&zl)).norm() < 1e-15);
    }

    #[test]
    fn c_matrix_fixes_its_ray_in_the_plane() {
        for w in [1.0, -1.0] {
            let wv = dvector![w];
            for alpha in [0.0, 0.3, 1.0] {
                let c = c_matrix(&wv, alpha);
                assert_eq!(&c * dvector![w, 1.0], dvector![w, 1.0]);
                assert_eq!(c, c.transpose());
            }
        }
        assert_eq!(c_matrix(&dvector![-1.0], 0.7), DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        assert_eq!(c_matrix(&dvector![1.0], 0.2), DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
    }

    #[test]
    fn apex_families_follow_the_case_tags() {
        assert_eq!(coderiv_family_at_apex(CaseTag::IntK), CoderivFamily::Identity);
        assert_eq!(coderiv_family_at_apex(CaseTag::IntPolar), CoderivFamily::Zero);
        assert_eq!(coderiv_family_at_apex(CaseTag::Outside), CoderivFamily::CFamily);
        assert_eq!(coderiv_family_at_apex(CaseTag::BdK), CoderivFamily::CFamilyPlusA);
        assert_eq!(coderiv_family_at_apex(CaseTag::BdPolar), CoderivFamily::CFamilyPlusB);
    }

    #[test]
    fn planar_case_tags_of_the_second_example() {
        let k = last(2);
        let q = -1.0;
        let h = dvector![0.0, -q];
        assert_eq!(k.classify(&h, &h, 1e-9).unwrap(), CaseTag::IntK);
        let h = dvector![-5.0 / 3.0 * q, -q];
        let kk = dvector![-4.0 / 3.0 * q, -4.0 / 3.0 * q];
        assert_eq!(k.classify(&h, &kk, 1e-9).unwrap(), CaseTag::Outside);
        let q = 1.0;
        assert_eq!(k.classify(&dvector![0.0, -q], &dvector![0.0, 0.0], 1e-9).unwrap(), CaseTag::IntPolar);
        assert!(matches!(
            k.classify(&dvector![0.0, 1.0], &dvector![0.0, 0.0], 1e-9),
            Err(LorentzError::NotTangent(_))
        ));
    }

    #[test]
    fn membership_basic_cases() {
        let k = last(2);
        let opts = SamplingOptions::default();
        let u = dvector![0.3, -0.7];
        assert!(family_membership(&k, CoderivFamily::Identity, &u, &u, &opts).is_in());
        assert_eq!(
            family_membership(&k, CoderivFamily::Identity, &u, &dvector![0.0, 0.0], &opts),
            Membership::CertifiedOut
        );
        // A(u*) condition holds for both w when u* = (0, 1); u* itself is a member
        let u = dvector![0.0, 1.0];
        for w in [1.0, -1.0] {
            assert!(a_admissible(&dvector![w], &u) >= 0.0);
        }
        assert!(family_membership(&k, CoderivFamily::CFamilyPlusA, &u, &u, &opts).is_in());
        // C(−1) u* for the planar family
        let u = dvector![2.0, -1.0];
        let y = c_matrix(&dvector![-1.0], 0.0) * &u;
        assert!(family_membership(&k, CoderivFamily::CFamily, &u, &y, &opts).is_in());
        assert_eq!(
            family_membership(&k, CoderivFamily::CFamily, &u, &dvector![1.0, 1.0], &opts),
            Membership::CertifiedOut
        );
    }

    #[test]
    fn sampled_membership_recovers_a_c_member() {
        let k = last(3);
        let w = dvector![0.6, 0.8];
        let u = dvector![0.2, -1.0, 0.5];
        let y = c_matrix(&w, 0.25) * &u;
        let opts = SamplingOptions {
            sphere_samples: 2000,
            refine_steps: 4000,
            ..SamplingOptions::default()
        };
        match family_membership(&k, CoderivFamily::CFamily, &u, &y, &SamplingOptions { tol: 1e-6, ..opts }) {
            Membership::CertifiedIn(MembershipWitness::C { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn planar_pieces_reproduce_exact_membership() {
        // y = A(w)u* and y = B(w)u* satisfy the corresponding conv pieces at weight 1
        let u = dvector![0.4, 1.0];
        for w in [1.0, -1.0] {
            let wv = dvector![w];
            let y = a_matrix(&wv) * &u;
            let beta = u[1] - w * u[0];
            let rho = 0.5 * beta;
            let x = [u[0], u[1], y[0], y[1], rho];
            let piece = planar_pieces(CoderivFamily::CFamilyPlusA)
                .into_iter()
                .find(|p| p.label == format!("conv(u*, A(w={w})u*)"))
                .unwrap();
            for row in &piece.eq {
                let r: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                assert!(r.abs() < 1e-14);
            }
            for row in &piece.le {
                let r: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                assert!(r <= 1e-14);
            }
            assert!((b_matrix(&wv) * &u - &u - (a_matrix(&wv) * &u - &u)).norm() < 1e-15);
        }
    }
}
