//! Built-in problems: the two worked examples and a small quadratic one.

use crate::cones::{Axis, ConeSpec};
use crate::exprs::{ProblemFile, ProblemSpec, ReferencePoint};

pub const BUILTIN_NAMES: [&str; 3] = ["example1", "example2", "quadratic"];

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn example1_file() -> ProblemFile {
    ProblemFile {
        name: "example1".into(),
        parameters: strings(&["p"]),
        variables: strings(&["x1", "x2"]),
        h: strings(&["x1 - p", "-x2 + x2^2"]),
        g: strings(&[
            "0.5*x1 - 0.5*x1^2 - x2",
            "0.5*x1 - 0.5*x1^2 + x2",
        ]),
        cone: ConeSpec::OrthantNonpositive { dim: 2 },
        reference: ReferencePoint {
            p: vec![0.0],
            x: vec![0.0, 0.0],
        },
    }
}

/// Second example: a planar Lorentz cone with the cone axis stored last.
pub fn example2_file() -> ProblemFile {
    ProblemFile {
        name: "example2".into(),
        parameters: strings(&["p"]),
        variables: strings(&["x1", "x2"]),
        h: strings(&["x1 - p", "-x2"]),
        g: strings(&["2*x2", "-x1"]),
        cone: ConeSpec::LorentzProduct {
            blocks: vec![2],
            axis: Axis::Last,
        },
        reference: ReferencePoint {
            p: vec![0.0],
            x: vec![0.0, 0.0],
        },
    }
}

/// `g(x) = x2 + x1² ≤ 0` with a strictly positive multiplier at the origin.
pub fn quadratic_file() -> ProblemFile {
    ProblemFile {
        name: "quadratic".into(),
        parameters: strings(&["p"]),
        variables: strings(&["x1", "x2"]),
        h: strings(&["x1 - p", "x2 - 1"]),
        g: strings(&["x2 + x1^2"]),
        cone: ConeSpec::OrthantNonpositive { dim: 1 },
        reference: ReferencePoint {
            p: vec![0.0],
            x: vec![0.0, 0.0],
        },
    }
}

pub fn example1() -> ProblemSpec {
    ProblemSpec::from_file(example1_file()).expect("builtin fixture is valid")
}

pub fn example2() -> ProblemSpec {
    ProblemSpec::from_file(example2_file()).expect("builtin fixture is valid")
}

pub fn quadratic() -> ProblemSpec {
    ProblemSpec::from_file(quadratic_file()).expect("builtin fixture is valid")
}

pub fn builtin(name: &str) -> Option<ProblemSpec> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        "quadratic" => Some(quadratic()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_round_trip_through_json() {
        for name in BUILTIN_NAMES {
            let spec = builtin(name).unwrap();
            let again = ProblemSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(again.file(), spec.file());
        }
    }
}
