//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report is always printed; exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use aubin_core::avi::{self, AviOptions};
use aubin_core::chain::ReducedModel;
use aubin_core::cones::{Axis, PolyhedralCone};
use aubin_core::exprs::DerivativeTables;
use aubin_core::lorentz::{CaseTag, LorentzSpec};
use aubin_core::probe::{brute_force_tangent, sample_aubin_modulus, GammaGraph, ProbeOptions};
use aubin_core::verify::{
    analyze, assemble_adjoint_system, mordukhovich_check, mordukhovich_membership, reduced_model, verify_aubin,
    LorentzRoute, Verdict, VerifyOptions,
};
use aubin_core::{fixtures, Execution, ProblemSpec, Tolerances};
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// `(u₁, u₂, ξ₁, ξ₂)` for every element of `DS(q)`.
fn ds_tuples(spec: &ProblemSpec, q: f64) -> Result<Vec<[f64; 4]>, String> {
    let analysis = analyze(spec, &VerifyOptions::default()).map_err(|e| e.to_string())?;
    let elems = analysis.derivative(&[q]).map_err(|e| e.to_string())?;
    Ok(elems.iter().map(|e| [e.u[0], e.u[1], e.xi[0], e.xi[1]]).collect())
}

fn same_set(got: &[[f64; 4]], want: &[[f64; 4]], tol: f64) -> Result<f64, String> {
    ensure(got.len() == want.len(), format!("expected {} elements, got {got:?}", want.len()))?;
    let mut worst: f64 = 0.0;
    for w in want {
        let err = got
            .iter()
            .map(|g| g.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        ensure(err <= tol, format!("{w:?} missing from {got:?}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn criterion1() -> Outcome {
    let spec = fixtures::example1();
    let e1 = same_set(
        &ds_tuples(&spec, -1.0)?,
        &[[-1.0, 0.0, 0.0, 0.0], [-4.0 / 3.0, 2.0 / 3.0, 0.0, 2.0 / 3.0], [-4.0 / 3.0, -2.0 / 3.0, 2.0 / 3.0, 0.0]],
        1e-9,
    )?;
    let e2 = same_set(&ds_tuples(&spec, 1.0)?, &[[0.0, 0.0, 1.0, 1.0]], 1e-9)?;
    Ok(format!("3 branches at q=-1, 1 at q=+1, max error {:.1e}", e1.max(e2)))
}

fn criterion2() -> Outcome {
    let start = Instant::now();
    let report = verify_aubin(&fixtures::example1(), &VerifyOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(report.verdict == Verdict::AubinVerified, format!("verdict {:?}", report.verdict))?;
    ensure(secs < 1.0, format!("took {secs:.3} s"))?;
    Ok(format!("AubinVerified in {:.0} ms", secs * 1e3))
}

fn criterion3() -> Outcome {
    let opts = VerifyOptions::default();
    let model = reduced_model(&fixtures::example1(), &opts.tol).map_err(|e| e.to_string())?;
    let m = mordukhovich_check(&model, &opts);
    let w = m.witness.ok_or("no classical witness found")?;
    ensure(w.v_star.iter().any(|v| v.abs() > 0.5), "witness is zero")?;
    let fixed = mordukhovich_membership(&model, &dvector![-0.5, 1.0], &opts).ok_or("v* = (-0.5, 1) rejected")?;
    Ok(format!(
        "witness v* = ({:.4}, {:.4}); (-0.5, 1) accepted with eta = ({:.3}, {:.3})",
        w.v_star[0], w.v_star[1], fixed.eta[0], fixed.eta[1]
    ))
}

fn criterion4() -> Outcome {
    let spec = fixtures::example2();
    let mut worst: f64 = 0.0;
    for q in [-1.0, -0.25, -3.0] {
        worst = worst.max(same_set(
            &ds_tuples(&spec, q)?,
            &[
                [q, 0.0, 0.0, 0.0],
                [4.0 / 3.0 * q, -2.0 / 3.0 * q, -1.0 / 3.0 * q, 1.0 / 3.0 * q],
                [4.0 / 3.0 * q, 2.0 / 3.0 * q, 1.0 / 3.0 * q, 1.0 / 3.0 * q],
            ],
            1e-9,
        )?);
    }
    for q in [1.0, 0.5, 2.0] {
        worst = worst.max(same_set(&ds_tuples(&spec, q)?, &[[0.0, 0.0, 0.0, -q]], 1e-9)?);
    }
    let report = verify_aubin(&spec, &VerifyOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.verdict == Verdict::AubinVerified, format!("verdict {:?}", report.verdict))?;
    Ok(format!("branches match for q in ±{{0.25,…,3}} (max error {worst:.1e}); AubinVerified"))
}

fn criterion5() -> Outcome {
    let model = reduced_model(&fixtures::example2(), &Tolerances::default()).map_err(|e| e.to_string())?;
    let sys = assemble_adjoint_system(&model, LorentzRoute::Projection);
    ensure(sys.variables == ["v1", "v2", "d1", "d2"], format!("variables {:?}", sys.variables))?;
    let want = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 0.0, -1.0, 0.0, -5.0, 2.0, 0.0]);
    ensure(sys.matrix == want, format!("got {}", sys.matrix))?;
    Ok("rows (-d2, -5 v2 + 2 d1), coefficients exact".into())
}

fn random_vec(rng: &mut ChaCha8Rng, s: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(s, |_, _| rng.gen_range(-scale..=scale))
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut moreau: f64 = 0.0;
    let mut fd: f64 = 0.0;
    let mut tags = [0usize; 5];
    for s in [2usize, 3, 5] {
        for axis in [Axis::Last, Axis::First] {
            let k = LorentzSpec::new(s, axis);
            for _ in 0..10_000 {
                let z = random_vec(&mut rng, s, 3.0);
                let p = k.project(&z);
                let q = k.project_polar(&z);
                moreau = moreau.max((&p + &q - &z).amax()).max(p.dot(&q).abs());
            }
            let mut tested = 0;
            while tested < 1000 {
                let z = random_vec(&mut rng, s, 2.0);
                let c = k.canonical(&z);
                let (bar, z0) = (c.rows(0, s - 1).norm(), c[s - 1]);
                // stay away from the boundaries of K and K°
                if (bar - z0.abs()).abs() < 0.1 || z.norm() < 0.1 {
                    continue;
                }
                tested += 1;
                let h = random_vec(&mut rng, s, 1.0);
                let t = 1e-6;
                let fdiff = (k.project(&(&z + &h * t)) - k.project(&(&z - &h * t))) / (2.0 * t);
                let d = k.dir_derivative(&z, &h, 1e-12);
                fd = fd.max((fdiff - d).amax());
            }
            for i in 0..1000 {
                // mix generic directions with ones exactly on the boundaries
                let mut h = random_vec(&mut rng, s, 1.0);
                let c = k.canonical(&h);
                let nb = c.rows(0, s - 1).norm();
                match i % 4 {
                    1 => {
                        let mut c2 = c.clone();
                        c2[s - 1] = nb;
                        h = k.from_canonical(&c2);
                    }
                    2 => {
                        let mut c2 = c.clone();
                        c2[s - 1] = -nb;
                        h = k.from_canonical(&c2);
                    }
                    _ => {}
                }
                let kk = k.project(&h);
                let tag = k.classify(&h, &kk, 1e-9).map_err(|e| format!("{h}: {e}"))?;
                let idx = match tag {
                    CaseTag::IntK => 0,
                    CaseTag::IntPolar => 1,
                    CaseTag::Outside => 2,
                    CaseTag::BdK => 3,
                    CaseTag::BdPolar => 4,
                };
                // the tag must agree with an independent reading of (h, k)
                let expect = if (&kk - &h).amax() <= 1e-9 {
                    if k.canonical(&h)[s - 1] > k.canonical(&h).rows(0, s - 1).norm() + 1e-9 { 0 } else { 3 }
                } else if kk.amax() <= 1e-9 {
                    if -k.canonical(&h)[s - 1] > k.canonical(&h).rows(0, s - 1).norm() + 1e-9 { 1 } else { 4 }
                } else {
                    2
                };
                ensure(idx == expect, format!("{h}: tag {tag:?}"))?;
                tags[idx] += 1;
            }
        }
    }
    ensure(moreau <= 1e-12, format!("Moreau defect {moreau:e}"))?;
    ensure(fd <= 1e-6, format!("finite-difference gap {fd:e}"))?;
    ensure(tags.iter().all(|&c| c > 0), format!("some tag never seen: {tags:?}"))?;
    Ok(format!("Moreau {moreau:.1e}, P' vs FD {fd:.1e}, tags {tags:?}"))
}

fn criterion7() -> Outcome {
    let tol = Tolerances::default();
    let mut worst: f64 = 0.0;
    let mut total = 0;
    for spec in [fixtures::quadratic(), fixtures::example1(), fixtures::example2()] {
        let graph = GammaGraph::new(&spec, &tol).map_err(|e| e.to_string())?;
        let model: ReducedModel = reduced_model(&spec, &tol).map_err(|e| e.to_string())?;
        let mut loose = model.clone();
        loose.tol.residual = 1e-5;
        let probe = brute_force_tangent(&graph, &[1e-2, 1e-3], 1000, 7, Execution::Parallel);
        ensure(probe.skipped == 0, format!("{}: {} curves skipped", spec.name, probe.skipped))?;
        for s in &probe.samples {
            let d = model.tangent_defect(&s.u, &s.u_star);
            ensure(d <= 1e-5, format!("{}: defect {d:e} at u = {}", spec.name, s.u))?;
            let t = loose.gamma_graph_tangent(&s.u, &s.u_star).map_err(|e| format!("{}: {e}", spec.name))?;
            ensure(t.unique, format!("{}: xi not unique (rank {})", spec.name, t.rank))?;
            worst = worst.max(d);
        }
        total += probe.samples.len();
    }
    Ok(format!("{total} extrapolated quotients, max defect {worst:.1e}, xi unique on all"))
}

fn criterion8() -> Outcome {
    for m in 1..=6 {
        let n = PolyhedralCone::orthant(m).faces().len();
        ensure(n == 1 << m, format!("orthant of dim {m}: {n} faces"))?;
    }
    // brute force over the grid (q, u) ∈ [−1, 1]³ with step 1/50
    let spec = fixtures::example1();
    let model = reduced_model(&spec, &Tolerances::default()).map_err(|e| e.to_string())?;
    let opts = AviOptions::default();
    let branches = avi::enumerate_critical_branches(&model, &opts).map_err(|e| e.to_string())?;
    let b = DMatrix::from_columns(&[model.rows[0].b.clone(), model.rows[1].b.clone()]);
    let binv = b.clone().try_inverse().ok_or("rows not independent")?;
    let pgrad = model.data.grad_p_h.column(0).into_owned();
    let mut found = 0;
    let mut worst: f64 = 0.0;
    let grid: Vec<f64> = (-50..=50).map(|k| k as f64 / 50.0).collect();
    for &q in &grid {
        let sols = avi::solutions_at(&model, &branches, &dvector![q], &opts);
        for &u1 in &grid {
            for &u2 in &grid {
                let u = dvector![u1, u2];
                let zeta = -(&binv * (&pgrad * q + &model.lagrangian * &u));
                let bu = b.transpose() * &u;
                let ok = (0..2).all(|i| zeta[i] >= -1e-12 && bu[i] <= 1e-12 && (zeta[i] * bu[i]).abs() <= 1e-12);
                if !ok {
                    continue;
                }
                found += 1;
                let d = sols
                    .iter()
                    .map(|e| (DVector::from_column_slice(&e.u) - &u).norm())
                    .fold(f64::INFINITY, f64::min);
                ensure(d <= 1e-6, format!("grid solution (q, u) = ({q}, {u}) is {d:e} from every branch"))?;
                worst = worst.max(d);
            }
        }
    }
    ensure(found > 0, "grid search found no solutions at all")?;
    Ok(format!("2^m faces for m ≤ 6; {found} grid solutions, max distance {worst:.1e}"))
}

fn criterion9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
    for name in fixtures::BUILTIN_NAMES {
        let spec = fixtures::builtin(name).expect("fixture");
        let t = DerivativeTables::new(&spec);
        let (l, n) = (spec.n_params, spec.n_vars);
        for _ in 0..100 {
            let p: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let data = t.evaluate(&p, &x);
            let h = 1e-6;
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let dh = (t.h_value(&p, &xp) - t.h_value(&p, &xm)) / (2.0 * h);
                let dg = (t.g_value(&xp) - t.g_value(&xm)) / (2.0 * h);
                let dj = (t.g_jacobian(&xp) - t.g_jacobian(&xm)) / (2.0 * h);
                for i in 0..n {
                    worst = worst.max(rel(data.grad_x_h[(i, j)], dh[i]));
                }
                for i in 0..dg.len() {
                    worst = worst.max(rel(data.jac_g[(i, j)], dg[i]));
                    for k in 0..n {
                        worst = worst.max(rel(data.hess_g[i][(k, j)], dj[(i, k)]));
                    }
                }
            }
            for j in 0..l {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[j] += h;
                pm[j] -= h;
                let dh = (t.h_value(&pp, &x) - t.h_value(&pm, &x)) / (2.0 * h);
                for i in 0..n {
                    worst = worst.max(rel(data.grad_p_h[(i, j)], dh[i]));
                }
            }
        }
    }
    ensure(worst <= 1e-6, format!("relative error {worst:e}"))?;
    Ok(format!("100 points per fixture, max relative error {worst:.1e}"))
}

fn criterion10() -> Outcome {
    let opts = ProbeOptions {
        radius: 0.05,
        samples: 200,
        seed: 42,
        ..ProbeOptions::default()
    };
    let start = Instant::now();
    let r = sample_aubin_modulus(&fixtures::example1(), &opts).map_err(|e| e.to_string())?;
    ensure(r.anomalies.is_empty(), format!("{} empty sections", r.anomalies.len()))?;
    let k = r.kappa_hat.ok_or("no usable pairs")?;
    ensure(k.is_finite(), "kappa_hat not finite")?;
    Ok(format!(
        "kappa_hat = {k:.4} over {} pairs, no empty sections ({:.2} s; whole-suite time is in the test log)",
        r.pairs.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Example 1 critical branches", criterion1),
        ("Example 1 verdict and runtime", criterion2),
        ("Example 1 classical comparison", criterion3),
        ("Example 2 branches and verdict", criterion4),
        ("Example 2 adjoint reduction", criterion5),
        ("Lorentz projection properties", criterion6),
        ("chain rule vs sampled graph tangents", criterion7),
        ("orthant faces and branch completeness", criterion8),
        ("symbolic derivatives vs finite differences", criterion9),
        ("probe sanity", criterion10),
    ];
    panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 10 passed in {:.2} s", 10 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
