use aubin_core::cones::{Axis, ConeSpec};
use aubin_core::exprs::ReferencePoint;
use aubin_core::fixtures;
use aubin_core::verify::{verify_aubin, LorentzRoute, Mode, Verdict, VerifyError, VerifyOptions};
use aubin_core::{ProblemFile, ProblemSpec};

fn problem(vars: &[&str], h: &[&str], g: &[&str], cone: ConeSpec, x: Vec<f64>) -> ProblemSpec {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    ProblemSpec::from_file(ProblemFile {
        name: "test".into(),
        parameters: vec!["p".into()],
        variables: strings(vars),
        h: strings(h),
        g: strings(g),
        cone,
        reference: ReferencePoint { p: vec![0.0], x },
    })
    .unwrap()
}

fn mode(m: Mode) -> VerifyOptions {
    VerifyOptions {
        mode: m,
        ..VerifyOptions::default()
    }
}

#[test]
fn mode_iii_verifies_the_examples_with_a_caveat() {
    for spec in [fixtures::example1(), fixtures::example2(), fixtures::quadratic()] {
        let report = verify_aubin(&spec, &mode(Mode::Iii)).unwrap();
        assert_eq!(report.verdict, Verdict::AubinVerified, "{}", spec.name);
        assert!(!report.caveats.is_empty());
    }
}

#[test]
fn polyhedral_route_matches_projection_route() {
    let spec = fixtures::example2();
    let a = verify_aubin(&spec, &VerifyOptions::default()).unwrap();
    let b = verify_aubin(
        &spec,
        &VerifyOptions {
            lorentz_route: LorentzRoute::Polyhedral,
            ..VerifyOptions::default()
        },
    )
    .unwrap();
    assert_eq!(a.verdict, b.verdict);
    let implications = |r: &aubin_core::verify::VerificationReport| {
        r.branches.iter().map(|b| b.implication).collect::<Vec<_>>()
    };
    assert_eq!(implications(&a), implications(&b));
}

#[test]
fn dependent_active_gradients_are_inconclusive() {
    let spec = problem(
        &["x1", "x2"],
        &["x1 - p", "x2"],
        &["x1", "x1"],
        ConeSpec::OrthantNonpositive { dim: 2 },
        vec![0.0, 0.0],
    );
    match verify_aubin(&spec, &VerifyOptions::default()).unwrap().verdict {
        Verdict::Inconclusive { reason } => assert!(reason.starts_with("A2 fails"), "{reason}"),
        v => panic!("unexpected verdict {v:?}"),
    }
}

#[test]
fn infeasible_reference_is_an_error() {
    let mut file = fixtures::example1_file();
    file.reference.x = vec![0.0, 1.0];
    let spec = ProblemSpec::from_file(file).unwrap();
    assert!(matches!(
        verify_aubin(&spec, &VerifyOptions::default()),
        Err(VerifyError::ReferenceInfeasible(_))
    ));
}

// The second component of H does not depend on x2, so the graph of S is
// Lipschitz in p but the adjoint system has the nonzero solution v* = (0, 1)
// that mode (iv) rejects and mode (iii) accepts.
#[test]
fn parameter_blind_component_fails_mode_iv_only() {
    let spec = problem(
        &["x1", "x2"],
        &["x1 - p", "0*x2"],
        &["x1 - 1"],
        ConeSpec::OrthantNonpositive { dim: 1 },
        vec![0.0, 0.0],
    );
    match verify_aubin(&spec, &mode(Mode::Iv)).unwrap().verdict {
        Verdict::CriterionFailed { witness } => {
            assert!(witness.v_star[0].abs() < 1e-9);
            assert!((witness.v_star[1].abs() - 1.0).abs() < 1e-9);
        }
        v => panic!("unexpected verdict {v:?}"),
    }
    assert_eq!(verify_aubin(&spec, &mode(Mode::Iii)).unwrap().verdict, Verdict::AubinVerified);
}

// S(p) is empty for p < 0, so no critical direction exists for q < 0.
#[test]
fn empty_branch_is_reported_as_uncovered() {
    let spec = problem(
        &["x"],
        &["0*x - p"],
        &["x"],
        ConeSpec::OrthantNonpositive { dim: 1 },
        vec![0.0],
    );
    match verify_aubin(&spec, &VerifyOptions::default()).unwrap().verdict {
        Verdict::Inconclusive { reason } => assert!(reason.contains("condition (i)"), "{reason}"),
        v => panic!("unexpected verdict {v:?}"),
    }
}

// x = Π_K((p,0,0)) for a three-dimensional ice-cream cone: Lipschitz, but the
// curved apex can only be sampled, so the verdict must not claim verification.
#[test]
fn curved_apex_is_never_certified() {
    let spec = problem(
        &["x1", "x2", "x3"],
        &["x1 - p", "x2", "x3"],
        &["x1", "x2", "x3"],
        ConeSpec::LorentzProduct {
            blocks: vec![3],
            axis: Axis::Last,
        },
        vec![0.0, 0.0, 0.0],
    );
    let report = verify_aubin(&spec, &VerifyOptions::default()).unwrap();
    assert!(matches!(report.verdict, Verdict::Inconclusive { .. }), "{:?}", report.verdict);
    assert!(report.ds.is_none());
}

#[test]
fn sequential_and_parallel_reports_agree() {
    let spec = fixtures::example1();
    let run = |execution| {
        verify_aubin(
            &spec,
            &VerifyOptions {
                execution,
                ..VerifyOptions::default()
            },
        )
        .unwrap()
        .to_json()
    };
    assert_eq!(
        run(aubin_core::Execution::Parallel),
        run(aubin_core::Execution::Sequential)
    );
}
