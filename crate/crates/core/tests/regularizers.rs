mod common;

use apgd_core::regularizers::{Family, RegularizerSpec};
use common::{dphi_ref, phi_ref, prox_oracle};
use nalgebra::DVector;
use proptest::prelude::*;

const FAMILIES: [Family; 4] = [Family::L1, Family::Mcp, Family::Scad, Family::CappedL1];

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(FAMILIES.to_vec())
}

/// A legal shape parameter for the family.
fn gamma_for(family: Family, u: f64) -> f64 {
    match family {
        Family::L1 => 1.0,
        Family::Mcp | Family::CappedL1 => 0.2 + 4.8 * u,
        Family::Scad => 2.1 + 5.0 * u,
    }
}

/// Spec and a step inside the strong-convexity region.
fn spec_and_step() -> impl Strategy<Value = (RegularizerSpec, f64)> {
    (family(), 0.0..1.0f64, 0.1..3.0f64, 0.01..0.9f64, 0.01..2.0f64).prop_map(|(f, u, w, frac, raw)| {
        let spec = RegularizerSpec::new(f, gamma_for(f, u), w).unwrap();
        let nu = spec.weak_convexity();
        let step = if nu > 0.0 { frac / nu } else { raw };
        (spec, step)
    })
}

#[test]
fn documented_values() {
    let l1 = RegularizerSpec::new(Family::L1, 1.0, 1.0).unwrap();
    let mcp = RegularizerSpec::new(Family::Mcp, 1.0, 1.0).unwrap();
    let capped = RegularizerSpec::new(Family::CappedL1, 1.0, 1.0).unwrap();
    assert_eq!(l1.phi(0.7), 0.7);
    assert_eq!(mcp.phi(2.0), 0.5);
    assert_eq!(capped.phi(0.3), 0.3);
    assert_eq!(capped.phi(5.0), 0.5);
    assert_eq!(l1.phi_derivative(3.2).unwrap(), 1.0);
    assert_eq!(mcp.phi_derivative(2.0).unwrap(), 0.0);
    assert!(l1.phi_derivative(0.0).is_err());

    assert_eq!(l1.prox(1.5, 0.5).unwrap().value, 1.0);
    assert!(mcp.prox(0.0, 0.5).unwrap().is_zero);
    // inverse step 2
    assert!((mcp.prox(0.75, 0.5).unwrap().value - 0.5).abs() < 1e-8);
    assert!(mcp.prox(0.4, 0.5).unwrap().is_zero);
    assert_eq!(mcp.prox(2.0, 0.5).unwrap().value, 2.0);

    let v = l1.prox_vector(&DVector::from_vec(vec![1.5, -1.5]), 0.5).unwrap();
    assert_eq!(v.values.as_slice(), &[1.0, -1.0]);
    assert_eq!(v.support, vec![0, 1]);
    let z = mcp.prox_vector(&DVector::zeros(4), 0.5).unwrap();
    assert!(z.values.iter().all(|&x| x == 0.0) && z.support.is_empty());
}

#[test]
fn rejects_bad_specs_and_steps() {
    assert!(RegularizerSpec::new(Family::Scad, 2.0, 1.0).is_err());
    assert!(RegularizerSpec::new(Family::Mcp, 0.0, 1.0).is_err());
    assert!(RegularizerSpec::new(Family::L1, 1.0, -1.0).is_err());
    let mcp = RegularizerSpec::new(Family::Mcp, 1.0, 1.0).unwrap();
    assert!(mcp.prox(1.0, 1.0).is_err());
    assert!(mcp.prox(1.0, 2.0).is_err());
    assert!(mcp.prox(1.0, 0.0).is_err());
}

#[test]
fn scad_derivative_matches_finite_difference() {
    let a = 3.7;
    let spec = RegularizerSpec::new(Family::Scad, a, 1.0).unwrap();
    for k in 1..50 {
        let t = 1.0 + (a - 1.0) * k as f64 / 50.0;
        let h = 1e-6;
        let fd = (spec.phi(t + h) - spec.phi(t - h)) / (2.0 * h);
        let d = spec.phi_derivative(t).unwrap();
        assert!((d - (a - t) / (a - 1.0)).abs() < 1e-12);
        assert!((d - fd).abs() < 1e-6, "t = {t}: {d} vs {fd}");
    }
}

#[test]
fn weak_convexity_constants() {
    let mcp = RegularizerSpec::new(Family::Mcp, 2.0, 1.0).unwrap();
    let scad = RegularizerSpec::new(Family::Scad, 3.7, 1.0).unwrap();
    let capped = RegularizerSpec::new(Family::CappedL1, 4.0, 1.0).unwrap();
    let l1 = RegularizerSpec::new(Family::L1, 1.0, 1.0).unwrap();
    assert_eq!(l1.weak_convexity(), 0.0);
    assert_eq!(mcp.weak_convexity(), 0.5);
    assert!((scad.weak_convexity() - 1.0 / 2.7).abs() < 1e-15);
    assert_eq!(capped.weak_convexity(), 0.25);
}

/// The amenability conditions on a logarithmic grid.
#[test]
fn amenable_on_grid() {
    let grid: Vec<f64> = (0..400).map(|k| 10f64.powf(-4.0 + 7.0 * k as f64 / 399.0)).collect();
    for f in FAMILIES {
        for gamma in [gamma_for(f, 0.1), gamma_for(f, 0.7)] {
            let spec = RegularizerSpec::new(f, gamma, 1.0).unwrap();
            assert_eq!(spec.phi(0.0), 0.0);
            let mu = spec.weak_convexity();
            for w in grid.windows(3) {
                let (a, b, c) = (w[0], w[1], w[2]);
                assert_eq!(spec.phi(b), spec.phi(-b));
                assert!(spec.phi(b) >= spec.phi(a), "{f} not nondecreasing at {b}");
                assert!(spec.phi(b) / b <= spec.phi(a) / a + 1e-12, "{f}: phi(t)/t increases at {b}");
                if f != Family::CappedL1 {
                    // phi + mu t^2 / 2 is convex
                    let g = |t: f64| spec.phi(t) + 0.5 * mu * t * t;
                    let chord = g(a) + (g(c) - g(a)) * (b - a) / (c - a);
                    assert!(g(b) <= chord + 1e-10 * (1.0 + chord.abs()), "{f} not weakly convex at {b}");
                }
            }
            let h = 1e-9;
            assert!((spec.phi(h) / h - 1.0).abs() < 1e-6, "{f}: slope at zero");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phi_matches_reference(f in family(), u in 0.0..1.0f64, w in 0.1..3.0f64, t in -20.0..20.0f64) {
        let gamma = gamma_for(f, u);
        let spec = RegularizerSpec::new(f, gamma, w).unwrap();
        prop_assert!((spec.phi(t) - w * phi_ref(f, gamma, t)).abs() <= 1e-12 * (1.0 + t.abs()));
        if t > 0.0 && (f != Family::CappedL1 || (t - gamma / 2.0).abs() > 1e-9) {
            prop_assert!((spec.phi_derivative(t).unwrap() - w * dphi_ref(f, gamma, t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn prox_matches_brute_force((spec, step) in spec_and_step(), y in -10.0..10.0f64) {
        let (x, gap) = prox_oracle(spec.family(), spec.gamma(), spec.weight(), y, step);
        prop_assume!(gap > 1e-10);
        let got = spec.prox(y, step).unwrap();
        prop_assert!((got.value - x).abs() <= 1e-6, "prox {} oracle {}", got.value, x);
        prop_assert_eq!(got.is_zero, got.value == 0.0);
    }

    #[test]
    fn prox_is_odd_monotone_and_shrinks((spec, step) in spec_and_step(), y in -10.0..10.0f64, dy in 0.0..1.0f64) {
        let p = |y: f64| spec.prox(y, step).unwrap().value;
        prop_assert_eq!(p(-y), -p(y));
        prop_assert!(p(y + dy) >= p(y));
        prop_assert!(p(y).abs() <= y.abs());
        let th = spec.threshold(step);
        if y.abs() <= th {
            prop_assert_eq!(p(y), 0.0);
        } else if spec.family() != Family::CappedL1 {
            // between soft thresholding and the identity
            prop_assert!(p(y).abs() >= y.abs() - step * spec.weight() - 1e-12);
        }
    }

    #[test]
    fn prox_vector_is_entrywise((spec, step) in spec_and_step(), ys in prop::collection::vec(-10.0..10.0f64, 0..100)) {
        let y = DVector::from_vec(ys.clone());
        let out = spec.prox_vector(&y, step).unwrap();
        for (k, &v) in ys.iter().enumerate() {
            prop_assert_eq!(out.values[k], spec.prox(v, step).unwrap().value);
        }
        let support: Vec<usize> = (0..ys.len()).filter(|&k| out.values[k] != 0.0).collect();
        prop_assert_eq!(out.support, support);
    }
}
