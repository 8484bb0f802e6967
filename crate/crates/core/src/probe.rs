//! Numerical cross-checks. Nothing here feeds a verdict: sampling cannot
//! certify a local Lipschitz property, it can only make a wrong answer
//! conspicuous.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{self, ChainError};
use crate::cones::ConeSpec;
use crate::exprs::{assemble_reference, DerivativeTables};
use crate::linalg;
use crate::lorentz::LorentzSpec;
use crate::par::{self, Execution};
use crate::{ProblemSpec, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("invalid probe options: {0}")]
    Options(String),
    #[error("too many activity patterns ({0}); the grid solver is meant for small problems")]
    TooManyPatterns(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

const MAX_PATTERNS: usize = 4096;
const NEWTON_ITERATIONS: usize = 100;
const NEWTON_HALVINGS: usize = 30;
const NEWTON_TOL: f64 = 1e-12;
const ROOT_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Radius of the parameter ball around `p̄`.
    pub radius: f64,
    /// Number of parameter pairs.
    pub samples: usize,
    /// Radius of the neighbourhood `V` of `x̄`.
    pub neighborhood: f64,
    /// Newton seeds per coordinate of the search box.
    pub resolution: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            radius: 0.05,
            samples: 200,
            neighborhood: 0.25,
            resolution: 5,
            seed: 42,
            execution: Execution::Parallel,
        }
    }
}

impl ProbeOptions {
    fn validate(&self) -> Result<(), ProbeError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ProbeError::Options("radius must be positive".into()));
        }
        if !(self.neighborhood > 0.0 && self.neighborhood.is_finite()) {
            return Err(ProbeError::Options("neighborhood must be positive".into()));
        }
        if self.samples == 0 || self.resolution == 0 {
            return Err(ProbeError::Options("sample count and resolution must be at least 1".into()));
        }
        Ok(())
    }
}

/// A solution of the generalized equation with its multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeRoot {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockPattern {
    Interior,
    Apex,
    Boundary,
}

#[derive(Debug, Clone)]
struct Pattern {
    active: Vec<usize>,
    blocks: Vec<BlockPattern>,
}

/// `D` split into halfspace rows and curved Lorentz blocks.
#[derive(Debug, Clone)]
struct ConeParts {
    s: usize,
    rows: DMatrix<f64>,
    curved: Vec<(usize, LorentzSpec)>,
}

impl ConeParts {
    fn of(cone: &ConeSpec) -> Self {
        let s = cone.dim().expect("validated cone");
        match cone {
            ConeSpec::LorentzProduct { .. } => {
                let mut rows = Vec::new();
                let mut curved = Vec::new();
                for (off, b) in cone.lorentz_blocks() {
                    match b.hrep_rows() {
                        Some(rs) => {
                            for r in rs {
                                let mut full = DVector::zeros(s);
                                full.rows_mut(off, b.dim).copy_from(&r);
                                rows.push(full);
                            }
                        }
                        None => curved.push((off, b)),
                    }
                }
                Self {
                    s,
                    rows: linalg::rows_to_matrix(&rows, s),
                    curved,
                }
            }
            _ => Self {
                s,
                rows: cone.polyhedral_rows().expect("polyhedral"),
                curved: Vec::new(),
            },
        }
    }

    fn patterns(&self) -> Result<Vec<Pattern>, ProbeError> {
        let m = self.rows.nrows();
        let count = (1usize << m.min(40)).saturating_mul(3usize.saturating_pow(self.curved.len() as u32));
        if m >= 40 || count > MAX_PATTERNS {
            return Err(ProbeError::TooManyPatterns(count));
        }
        let mut out = Vec::with_capacity(count);
        for mask in 0..(1usize << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            let k = self.curved.len();
            for code in 0..3usize.pow(k as u32) {
                let mut c = code;
                let blocks = (0..k)
                    .map(|_| {
                        let b = match c % 3 {
                            0 => BlockPattern::Interior,
                            1 => BlockPattern::Apex,
                            _ => BlockPattern::Boundary,
                        };
                        c /= 3;
                        b
                    })
                    .collect();
                out.push(Pattern {
                    active: active.clone(),
                    blocks,
                });
            }
        }
        Ok(out)
    }
}

fn unknowns(pattern: &Pattern, parts: &ConeParts) -> usize {
    pattern.active.len()
        + pattern
            .blocks
            .iter()
            .zip(&parts.curved)
            .map(|(b, (_, spec))| match b {
                BlockPattern::Interior => 0,
                BlockPattern::Apex => spec.dim,
                BlockPattern::Boundary => 1,
            })
            .sum::<usize>()
}

/// Outward normal `(z̄/‖z̄‖, −1)` of the Lorentz boundary, in the user's ordering.
fn boundary_normal(spec: &LorentzSpec, z: &DVector<f64>) -> DVector<f64> {
    let c = spec.canonical(z);
    let s = spec.dim;
    let bar = c.rows(0, s - 1).into_owned();
    let nb = bar.norm().max(1e-300);
    let mut n = DVector::zeros(s);
    n.rows_mut(0, s - 1).copy_from(&(bar / nb));
    n[s - 1] = -1.0;
    spec.from_canonical(&n)
}

fn boundary_value(spec: &LorentzSpec, z: &DVector<f64>) -> f64 {
    let c = spec.canonical(z);
    c.rows(0, spec.dim - 1).norm() - c[spec.dim - 1]
}

struct GeSystem<'a> {
    tables: &'a DerivativeTables,
    parts: &'a ConeParts,
    p: &'a [f64],
    n: usize,
}

impl GeSystem<'_> {
    fn multiplier(&self, pattern: &Pattern, x: &[f64], y: &[f64], g: &DVector<f64>) -> DVector<f64> {
        let mut lambda = DVector::zeros(self.parts.s);
        let mut k = 0;
        for &i in &pattern.active {
            lambda += self.parts.rows.row(i).transpose() * y[k];
            k += 1;
        }
        let _ = x;
        for (b, (off, spec)) in pattern.blocks.iter().zip(&self.parts.curved) {
            match b {
                BlockPattern::Interior => {}
                BlockPattern::Apex => {
                    for j in 0..spec.dim {
                        lambda[off + j] = y[k + j];
                    }
                    k += spec.dim;
                }
                BlockPattern::Boundary => {
                    let zb = g.rows(*off, spec.dim).into_owned();
                    let nrm = boundary_normal(spec, &zb) * y[k];
                    lambda.rows_mut(*off, spec.dim).copy_from(&nrm);
                    k += 1;
                }
            }
        }
        lambda
    }

    fn residual(&self, pattern: &Pattern, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
        let y: Vec<f64> = z.rows(n, z.len() - n).iter().copied().collect();
        let g = self.tables.g_value(&x);
        let lambda = self.multiplier(pattern, &x, &y, &g);
        let stat = self.tables.h_value(self.p, &x) + self.tables.g_jacobian(&x).transpose() * &lambda;
        let mut out: Vec<f64> = stat.iter().copied().collect();
        for &i in &pattern.active {
            out.push(self.parts.rows.row(i).dot(&g.transpose()));
        }
        for (b, (off, spec)) in pattern.blocks.iter().zip(&self.parts.curved) {
            let zb = g.rows(*off, spec.dim).into_owned();
            match b {
                BlockPattern::Interior => {}
                BlockPattern::Apex => out.extend(zb.iter()),
                BlockPattern::Boundary => out.push(boundary_value(spec, &zb)),
            }
        }
        DVector::from_vec(out)
    }

    /// `λ = M y` when no curved block sits on its boundary.
    fn multiplier_map(&self, pattern: &Pattern) -> Option<DMatrix<f64>> {
        let k = unknowns(pattern, self.parts);
        let mut m = DMatrix::zeros(self.parts.s, k);
        let mut c = 0;
        for &i in &pattern.active {
            m.set_column(c, &self.parts.rows.row(i).transpose());
            c += 1;
        }
        for (b, (off, spec)) in pattern.blocks.iter().zip(&self.parts.curved) {
            match b {
                BlockPattern::Interior => {}
                BlockPattern::Apex => {
                    for j in 0..spec.dim {
                        m[(off + j, c + j)] = 1.0;
                    }
                    c += spec.dim;
                }
                BlockPattern::Boundary => return None,
            }
        }
        Some(m)
    }

    /// Exact KKT Jacobian `[[∇ₓH + Σλᵢ∇²gᵢ, ∇gᵀM], [Mᵀ∇g, 0]]`, or central
    /// differences when the multiplier depends on `x`.
    fn jacobian(&self, pattern: &Pattern, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let k = z.len();
        if let Some(m) = self.multiplier_map(pattern) {
            let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
            let lambda = &m * z.rows(n, k - n);
            let jg = self.tables.g_jacobian(&x);
            let mut top = self.tables.h_jacobian_x(self.p, &x);
            for (li, hess) in lambda.iter().zip(self.tables.g_hessians(&x)) {
                if *li != 0.0 {
                    top += hess * *li;
                }
            }
            let side = jg.transpose() * &m;
            let mut jac = DMatrix::zeros(k, k);
            jac.view_mut((0, 0), (n, n)).copy_from(&top);
            jac.view_mut((0, n), (n, k - n)).copy_from(&side);
            jac.view_mut((n, 0), (k - n, n)).copy_from(&side.transpose());
            return jac;
        }
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let h = 1e-6 * z[j].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let col = (self.residual(pattern, &zp) - self.residual(pattern, &zm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    /// Damped Newton: full steps halved until the residual norm decreases.
    fn newton(&self, pattern: &Pattern, mut z: DVector<f64>) -> Option<DVector<f64>> {
        let mut f = self.residual(pattern, &z);
        for _ in 0..NEWTON_ITERATIONS {
            if !f.iter().all(|v| v.is_finite()) {
                return None;
            }
            if f.amax() <= NEWTON_TOL {
                return Some(z);
            }
            let jac = self.jacobian(pattern, &z);
            let step = match jac.clone().lu().solve(&(-&f)) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => linalg::lstsq(&jac, &(-&f), 1e-12).0,
            };
            let norm = f.norm();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=NEWTON_HALVINGS {
                let trial = &z + &step * alpha;
                let ft = self.residual(pattern, &trial);
                if ft.norm() < norm {
                    z = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (f.amax() <= ROOT_TOL).then_some(z)
    }

    /// Accepts a converged point if its multiplier is feasible for the pattern.
    fn root(&self, pattern: &Pattern, z: &DVector<f64>) -> Option<GeRoot> {
        let n = self.n;
        let x: Vec<f64> = z.rows(0, n).iter().copied().collect();
        let y: Vec<f64> = z.rows(n, z.len() - n).iter().copied().collect();
        let g = self.tables.g_value(&x);
        let lambda = self.multiplier(pattern, &x, &y, &g);
        let ag = &self.parts.rows * &g;
        if ag.iter().any(|v| *v > ROOT_TOL) {
            return None;
        }
        if y[..pattern.active.len()].iter().any(|m| *m < -ROOT_TOL) {
            return None;
        }
        let mut k = pattern.active.len();
        for (b, (off, spec)) in pattern.blocks.iter().zip(&self.parts.curved) {
            let zb = g.rows(*off, spec.dim).into_owned();
            let lb = lambda.rows(*off, spec.dim).into_owned();
            let ok = match b {
                BlockPattern::Interior => spec.contains(&zb, ROOT_TOL),
                BlockPattern::Apex => {
                    k += spec.dim;
                    spec.contains(&-lb, ROOT_TOL)
                }
                BlockPattern::Boundary => {
                    let t = y[k];
                    k += 1;
                    t >= -ROOT_TOL && spec.canonical(&zb)[spec.dim - 1] >= 0.0
                }
            };
            if !ok {
                return None;
            }
        }
        let stat = self.tables.h_value(self.p, &x) + self.tables.g_jacobian(&x).transpose() * &lambda;
        let residual = stat.amax().max(lambda.dot(&g).abs());
        (residual <= ROOT_TOL).then(|| GeRoot {
            x,
            lambda: lambda.iter().copied().collect(),
            residual,
        })
    }
}

fn grid(lo: &[f64], hi: &[f64], resolution: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let r = resolution;
    let total = r.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|i| {
                    let k = idx % r;
                    idx /= r;
                    if r == 1 {
                        0.5 * (lo[i] + hi[i])
                    } else {
                        lo[i] + (hi[i] - lo[i]) * k as f64 / (r - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

fn dedupe(mut roots: Vec<GeRoot>) -> Vec<GeRoot> {
    roots.sort_by(|a, b| {
        a.x.iter()
            .zip(&b.x)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<GeRoot> = Vec::new();
    for r in roots {
        let close = out.iter().any(|o| {
            o.x.iter().zip(&r.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= DEDUP_TOL
        });
        if !close {
            out.push(r);
        }
    }
    out
}

/// All roots of `0 ∈ H(p,x) + N̂_Γ(x)` in the box `[lo, hi]` found from a seed grid.
pub fn solve_ge_grid(
    spec: &ProblemSpec,
    p: &[f64],
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    execution: Execution,
) -> Result<Vec<GeRoot>, ProbeError> {
    let tables = DerivativeTables::new(spec);
    solve_with(&tables, &spec.cone, spec.n_vars, spec.n_params, p, lo, hi, resolution, execution)
}

#[allow(clippy::too_many_arguments)]
fn solve_with(
    tables: &DerivativeTables,
    cone: &ConeSpec,
    n: usize,
    l: usize,
    p: &[f64],
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    execution: Execution,
) -> Result<Vec<GeRoot>, ProbeError> {
    if p.len() != l || lo.len() != n || hi.len() != n {
        return Err(ProbeError::Dimension(format!(
            "expected {l} parameters and a box in ℝ^{n}, got {} and {}/{}",
            p.len(),
            lo.len(),
            hi.len()
        )));
    }
    if resolution == 0 {
        return Err(ProbeError::Options("resolution must be at least 1".into()));
    }
    let parts = ConeParts::of(cone);
    let patterns = parts.patterns()?;
    let seeds = grid(lo, hi, resolution);
    let sys = GeSystem { tables, parts: &parts, p, n };
    let jobs: Vec<(usize, usize)> = (0..patterns.len())
        .flat_map(|a| (0..seeds.len()).map(move |b| (a, b)))
        .collect();
    let found = par::map_ordered(execution, &jobs, |&(a, b)| {
        let pat = &patterns[a];
        let mut z = DVector::zeros(n + unknowns(pat, &parts));
        z.rows_mut(0, n).copy_from(&DVector::from_column_slice(&seeds[b]));
        let z = sys.newton(pat, z)?;
        let root = sys.root(pat, &z)?;
        let inside = root.x.iter().enumerate().all(|(i, v)| *v >= lo[i] - ROOT_TOL && *v <= hi[i] + ROOT_TOL);
        inside.then_some(root)
    });
    Ok(dedupe(found.into_iter().flatten().collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    /// `sup_{x ∈ S(p1)∩V} dist(x, S(p2))`.
    pub excess: f64,
    pub distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAnomaly {
    pub pair: usize,
    pub p: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kappa_hat: Option<f64>,
    pub pairs: Vec<ProbePair>,
    pub anomalies: Vec<ProbeAnomaly>,
}

impl ProbeReport {
    pub fn to_json(&self) -> String {
        crate::json::to_string_pretty(self).expect("probe report serializes")
    }
}

fn ball_point(rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64) -> Vec<f64> {
    let l = center.len();
    loop {
        let v = DVector::from_fn(l, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return (center + v * radius).iter().copied().collect();
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Empirical Aubin modulus: `max ‖·‖`-ratio of `e(S(p1)∩V, S(p2))` over `‖p1 − p2‖`.
pub fn sample_aubin_modulus(spec: &ProblemSpec, opts: &ProbeOptions) -> Result<ProbeReport, ProbeError> {
    opts.validate()?;
    let tables = DerivativeTables::new(spec);
    let n = spec.n_vars;
    let xr: Vec<f64> = spec.x_ref.iter().copied().collect();
    // S(p2) is searched in a larger box so that nearby points just outside V count
    let lo: Vec<f64> = xr.iter().map(|v| v - 2.0 * opts.neighborhood).collect();
    let hi: Vec<f64> = xr.iter().map(|v| v + 2.0 * opts.neighborhood).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.samples)
        .map(|_| {
            let a = ball_point(&mut rng, &spec.p_ref, opts.radius);
            let b = ball_point(&mut rng, &spec.p_ref, opts.radius);
            (a, b)
        })
        .collect();
    let solved = par::map_ordered(opts.execution, &pairs, |(a, b)| {
        let sa = solve_with(&tables, &spec.cone, n, spec.n_params, a, &lo, &hi, opts.resolution, Execution::Sequential);
        let sb = solve_with(&tables, &spec.cone, n, spec.n_params, b, &lo, &hi, opts.resolution, Execution::Sequential);
        (sa, sb)
    });
    let mut report = ProbeReport {
        kappa_hat: None,
        pairs: Vec::new(),
        anomalies: Vec::new(),
    };
    let in_v = |r: &GeRoot| dist(&r.x, &xr) <= opts.neighborhood;
    for (k, ((a, b), (sa, sb))) in pairs.iter().zip(solved).enumerate() {
        let (sa, sb) = (sa?, sb?);
        let va: Vec<&GeRoot> = sa.iter().filter(|r| in_v(r)).collect();
        let mut empty = false;
        for (p, set) in [(a, &va), (b, &sb.iter().filter(|r| in_v(r)).collect())] {
            if set.is_empty() {
                empty = true;
                report.anomalies.push(ProbeAnomaly {
                    pair: k,
                    p: p.clone(),
                    reason: "no solution found in V".into(),
                });
            }
        }
        if empty {
            continue;
        }
        let excess = va
            .iter()
            .map(|r| sb.iter().map(|s| dist(&r.x, &s.x)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        let distance = dist(a, b);
        if distance == 0.0 {
            continue;
        }
        let ratio = excess / distance;
        report.kappa_hat = Some(report.kappa_hat.map_or(ratio, |kh: f64| kh.max(ratio)));
        report.pairs.push(ProbePair {
            p1: a.clone(),
            p2: b.clone(),
            excess,
            distance,
            ratio,
        });
    }
    Ok(report)
}

/// A point of `Gr N̂_Γ` with the multiplier certifying `x* ∈ ∇g(x)ᵀN_D(g(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    pub x: DVector<f64>,
    pub x_star: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Membership oracle and curve sampler for `Gr N̂_Γ` near `(x̄, x̄*)`.
#[derive(Debug, Clone)]
pub struct GammaGraph {
    tables: DerivativeTables,
    cone: ConeSpec,
    pub x_ref: DVector<f64>,
    pub x_star_ref: DVector<f64>,
    pub lambda_ref: DVector<f64>,
    g_ref: DVector<f64>,
}

impl GammaGraph {
    pub fn new(spec: &ProblemSpec, tol: &Tolerances) -> Result<Self, ProbeError> {
        let data = assemble_reference(spec);
        let model = chain::reduce(&data, &spec.cone, tol)?;
        Ok(Self {
            tables: DerivativeTables::new(spec),
            cone: spec.cone.clone(),
            x_ref: spec.x_ref.clone(),
            x_star_ref: data.x_star.clone(),
            lambda_ref: model.lambda.clone(),
            g_ref: data.g_value.clone(),
        })
    }

    /// `g(x) ∈ D`, `μ ∈ N_D(g(x))` (Moreau test) and `x* = ∇g(x)ᵀμ`, all up to `tol`.
    pub fn contains(&self, pt: &GraphPoint, tol: f64) -> bool {
        let x: Vec<f64> = pt.x.iter().copied().collect();
        let g = self.tables.g_value(&x);
        if !self.cone.contains(&g, tol) {
            return false;
        }
        let back = self.cone.project(&(&g + &pt.mu));
        if (back - &g).amax() > tol * (1.0 + pt.mu.amax()) {
            return false;
        }
        (self.tables.g_jacobian(&x).transpose() * &pt.mu - &pt.x_star).amax() <= tol * (1.0 + pt.x_star.amax())
    }

    /// The graph point `P(t)` on the curve determined by `(ω, d)`: with
    /// `w = g(x̄) + λ̄ + tω`, take `z = Π_D(w)`, `μ = w − z` and solve
    /// `g(x̄ + td + ∇g(x̄)ᵀc) = z` for `c`. Keeping the correction in a fixed
    /// subspace makes the curve polynomial in `t` whenever `g` is quadratic.
    pub fn point_along(&self, t: f64, omega: &DVector<f64>, d: &DVector<f64>) -> Option<GraphPoint> {
        let w = &self.g_ref + &self.lambda_ref + omega * t;
        let z = self.cone.project(&w);
        let mu = &w - &z;
        let xr: Vec<f64> = self.x_ref.iter().copied().collect();
        let jt = self.tables.g_jacobian(&xr).transpose();
        let base = &self.x_ref + d * t;
        let mut c = DVector::zeros(z.len());
        let mut x = base.clone();
        for _ in 0..50 {
            let xs: Vec<f64> = x.iter().copied().collect();
            let r = self.tables.g_value(&xs) - &z;
            if r.amax() <= 1e-16 * (1.0 + z.amax()) {
                break;
            }
            let j = self.tables.g_jacobian(&xs) * &jt;
            let (step, _) = linalg::lstsq(&j, &r, 1e-12);
            c -= step;
            x = &base + &jt * &c;
        }
        let xs: Vec<f64> = x.iter().copied().collect();
        if (self.tables.g_value(&xs) - &z).amax() > 1e-13 {
            return None;
        }
        let x_star = self.tables.g_jacobian(&xs).transpose() * &mu;
        Some(GraphPoint { x, x_star, mu })
    }
}

/// One sampled curve and its limiting direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSample {
    /// Richardson-extrapolated `(u, u*)` from the two smallest `t`.
    pub u: DVector<f64>,
    pub u_star: DVector<f64>,
    /// Raw difference quotients `(t, (x − x̄)/t, (x* − x̄*)/t)`.
    pub quotients: Vec<(f64, DVector<f64>, DVector<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentProbe {
    pub samples: Vec<TangentSample>,
    /// Curves on which `g(x) = z` could not be solved or the oracle refused a point.
    pub skipped: usize,
}

/// Difference quotients of graph points along random curves through `(x̄, x̄*)`.
pub fn brute_force_tangent(graph: &GammaGraph, ts: &[f64], samples: usize, seed: u64, execution: Execution) -> TangentProbe {
    let mut ts: Vec<f64> = ts.iter().copied().filter(|t| *t > 0.0).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    let n = graph.x_ref.len();
    let s = graph.g_ref.len();
    // (ω, d) on the unit sphere of ℝ^{s+n}
    let dirs: Vec<(DVector<f64>, DVector<f64>)> = crate::lorentz::sphere_points(s + n, samples, seed)
        .into_iter()
        .map(|v| (v.rows(0, s).into_owned(), v.rows(s, n).into_owned()))
        .collect();
    let out = par::map_ordered(execution, &dirs, |(omega, d)| {
        let mut quotients = Vec::new();
        for &t in &ts {
            let pt = graph.point_along(t, omega, d)?;
            if !graph.contains(&pt, 1e-10) {
                return None;
            }
            quotients.push((t, (&pt.x - &graph.x_ref) / t, (&pt.x_star - &graph.x_star_ref) / t));
        }
        let k = quotients.len();
        let (u, u_star) = match k {
            0 => return None,
            1 => (quotients[0].1.clone(), quotients[0].2.clone()),
            _ => {
                let (t1, q1, r1) = &quotients[k - 2];
                let (t2, q2, r2) = &quotients[k - 1];
                let c = t1 - t2;
                ((q2 * *t1 - q1 * *t2) / c, (r2 * *t1 - r1 * *t2) / c)
            }
        };
        Some(TangentSample { u, u_star, quotients })
    });
    let skipped = out.iter().filter(|o| o.is_none()).count();
    TangentProbe {
        samples: out.into_iter().flatten().collect(),
        skipped,
    }
}
