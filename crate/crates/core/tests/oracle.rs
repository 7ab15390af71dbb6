mod common;

use flame::oracle::{bias_matrix, bias_matrix_symbolic, oracle_flame, Allocation, BiasMatrix};
use flame::Rational;
use num_rational::Rational64;
use num_traits::Zero;

fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

#[test]
fn single_covariate_matches_brute_force() {
    let (valid, bias) = common::p1_brute_force();
    let m = bias_matrix::<Rational64>(1, false).unwrap();
    assert_eq!(m.valid_count, valid);
    for (e, want) in m.entries.iter().zip(&bias) {
        assert_eq!(&[e.alpha[0], e.alpha[1], e.beta[0], e.beta[1]], want);
    }
    assert_eq!(valid, 3);
    assert_eq!(bias[0][3], r(1, 3));
    assert_eq!(bias[1][3], r(-1, 3));
}

#[test]
fn two_covariate_matrix() {
    let m = bias_matrix::<Rational64>(2, false).unwrap();
    assert_eq!(m.valid_count, 59);
    // bin index: x1 is bit 0
    let want = [(20, 41), (-20, 41), (20, -41), (-20, -41)];
    for (b, &(b1, b2)) in want.iter().enumerate() {
        let e = &m.entries[b];
        assert_eq!(e.beta[1], r(b1, 59));
        assert_eq!(e.beta[2], r(b2, 118));
        assert!(e.beta[0].is_zero());
        assert!(e.alpha.iter().all(Zero::is_zero));
    }
}

#[test]
fn fast_and_symbolic_enumerations_agree_for_three_covariates() {
    let fast = bias_matrix::<Rational64>(3, false).unwrap();
    let slow = bias_matrix_symbolic::<Rational64>(3).unwrap();
    assert_eq!(fast, slow);
}

#[test]
fn alpha_and_homogeneous_terms_vanish() {
    for p in 1..=3 {
        let m = bias_matrix::<Rational>(p, false).unwrap();
        for e in &m.entries {
            assert!(e.alpha.iter().all(Zero::is_zero), "p = {p}");
            assert!(e.beta[0].is_zero(), "p = {p}");
        }
    }
}

#[test]
fn flipping_a_bit_negates_its_coefficient() {
    for p in 1..=3 {
        let m: BiasMatrix<Rational64> = bias_matrix(p, false).unwrap();
        for b in 0..1usize << p {
            for j in 0..p {
                let f = b ^ (1 << j);
                for i in 1..=p {
                    let (x, y) = (m.entries[b].beta[i], m.entries[f].beta[i]);
                    if i == j + 1 {
                        assert_eq!(x, -y);
                    } else {
                        assert_eq!(x, y);
                    }
                }
            }
        }
    }
}

#[test]
fn complement_closure_and_alpha_cancellation() {
    for p in 1..=3usize {
        for idx in 0..1u64 << (2 << p) {
            let a = Allocation::from_index(idx, p);
            let c = a.complement();
            let ea = oracle_flame::<Rational64>(&a, p);
            let ec = oracle_flame::<Rational64>(&c, p);
            assert_eq!(ea.is_some(), ec.is_some(), "allocation {idx}");
            if let (Some(ea), Some(ec)) = (ea, ec) {
                // same groups with the arms swapped: α parts are exact negatives
                for (x, y) in ea.iter().zip(&ec) {
                    for (s, t) in x.alpha.iter().zip(&y.alpha) {
                        assert!((*s + *t).is_zero());
                    }
                }
            }
        }
    }
}

#[test]
fn report_json_shape() {
    let m = bias_matrix::<Rational>(2, false).unwrap();
    let v = serde_json::to_value(m.report().unwrap()).unwrap();
    assert_eq!(v["valid_count"], 59);
    assert_eq!(v["entries"][0]["beta_coeffs"][2], serde_json::json!([41, 118]));
    assert_eq!(v["entries"][0]["beta_coeffs"][1], serde_json::json!([20, 59]));
    assert!(m.table().contains("(20·β1 + 41/2·β2) / 59"));
}
