use aubin_core::cones::{Axis, ConeSpec, PolyhedralCone};
use aubin_core::fixtures;
use aubin_core::lorentz::{sphere_points, LorentzSpec};
use aubin_core::verify::{analyze, VerificationReport, VerifyOptions};
use nalgebra::DVector;
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim).prop_map(DVector::from_vec)
}

fn axis() -> impl Strategy<Value = Axis> {
    prop_oneof![Just(Axis::First), Just(Axis::Last)]
}

fn lorentz_case() -> impl Strategy<Value = (LorentzSpec, DVector<f64>)> {
    (2usize..6, axis()).prop_flat_map(|(s, a)| (Just(LorentzSpec::new(s, a)), vector(s)))
}

proptest! {
    #[test]
    fn moreau_decomposition((k, w) in lorentz_case()) {
        let p = k.project(&w);
        let q = k.project_polar(&w);
        let scale = 1.0 + w.norm();
        prop_assert!((&p + &q - &w).norm() <= 1e-12 * scale);
        prop_assert!(p.dot(&q).abs() <= 1e-10 * scale * scale);
        prop_assert!(k.contains(&p, 1e-10 * scale));
    }

    #[test]
    fn lorentz_projection_is_idempotent((k, w) in lorentz_case()) {
        let p = k.project(&w);
        prop_assert!((k.project(&p) - &p).norm() <= 1e-12 * (1.0 + w.norm()));
    }

    #[test]
    fn cone_projection_lands_in_the_cone(w in vector(3), blocks in prop_oneof![Just(vec![3]), Just(vec![1, 2])]) {
        let cones = [
            ConeSpec::OrthantNonpositive { dim: 3 },
            ConeSpec::LorentzProduct { blocks, axis: Axis::Last },
            ConeSpec::PolyhedralHrep { rows: vec![vec![1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0]] },
        ];
        for cone in &cones {
            let p = cone.project(&w);
            prop_assert!(cone.contains(&p, 1e-9), "{:?} {:?}", cone, p);
            prop_assert!((cone.project(&p) - &p).norm() <= 1e-9);
            // the residual is normal to the cone at the projection
            prop_assert!((&w - &p).dot(&p).abs() <= 1e-8 * (1.0 + w.norm_squared()));
        }
    }

    #[test]
    fn orthant_has_all_faces(m in 1usize..6) {
        prop_assert_eq!(PolyhedralCone::orthant(m).faces().len(), 1 << m);
    }

    #[test]
    fn sphere_points_are_unit(m in 1usize..6, count in 1usize..50, seed in any::<u64>()) {
        let pts = sphere_points(m, count, seed);
        prop_assert!(pts.len() >= count);
        for v in pts {
            prop_assert_eq!(v.len(), m);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
        }
    }
}

fn sorted_us(elements: &[aubin_core::avi::DsElement], scale: f64) -> Vec<Vec<f64>> {
    let mut us: Vec<Vec<f64>> = elements
        .iter()
        .map(|e| e.u.iter().map(|x| x * scale).collect())
        .collect();
    us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    us
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn derivative_is_positively_homogeneous(q in -5.0..5.0f64, t in 0.1..10.0f64, which in 0usize..3) {
        let spec = [fixtures::example1(), fixtures::example2(), fixtures::quadratic()][which].clone();
        let analysis = analyze(&spec, &VerifyOptions::default()).unwrap();
        let at_q = analysis.derivative(&[q]).unwrap();
        let at_tq = analysis.derivative(&[t * q]).unwrap();
        let a = sorted_us(&at_q, t);
        let b = sorted_us(&at_tq, 1.0);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (xi, yi) in x.iter().zip(y) {
                prop_assert!((xi - yi).abs() <= 1e-9 * (1.0 + yi.abs()));
            }
        }
    }
}

#[test]
fn reports_round_trip_through_json() {
    for spec in [fixtures::example1(), fixtures::example2(), fixtures::quadratic()] {
        let report = analyze(&spec, &VerifyOptions::default()).unwrap().report;
        let text = report.to_json();
        let back = VerificationReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), text);
    }
}
