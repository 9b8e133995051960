use std::f64::consts::PI;

use proptest::prelude::*;

use polarlab::conformal::{canonical_lift, conformal_invariants, embed, lift_catalog, transform_field, willmore};
use polarlab::gridcalc::{Field, GridSpec, Scheme};
use polarlab::job::{JobConfig, Step};
use polarlab::polar::{from_coords, polar_transform, product_polar_seed, verify_polar};
use polarlab::pseudolinalg::{random_isometry, Signature};
use polarlab::surfaces::{clifford_torus, product_surface, Curve};
use polarlab::tolerances::Tolerances;
use polarlab::transforms::{darboux_construct, spectral_transform};
use polarlab::{Error, C64};

fn tol() -> Tolerances {
    Tolerances::default()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn random_motions_preserve_isometry(seed in any::<u64>(), scale in 0.0f64..1.0) {
        let sig = Signature::new(4, 2).unwrap();
        let t = random_isometry(sig, scale, seed);
        let eta = sig.metric_matrix();
        let defect = (t.transpose() * &eta * &t - eta).amax();
        prop_assert!(defect < 1e-9, "{defect}");
    }

    #[test]
    fn wirtinger_derivative_of_trig_polynomial(a in -2.0f64..2.0, b in -2.0f64..2.0, k in 1i32..4) {
        let spec = GridSpec::torus(32, 32, 2.0 * PI, 2.0 * PI).unwrap().with_scheme(Scheme::Spectral);
        let k = k as f64;
        let f = Field::scalar_fn(spec, |u, v| C64::new(a * (k * u).sin() + b * (k * v).cos(), 0.0));
        let want = Field::scalar_fn(spec, |u, v| C64::new(a * k * (k * u).cos(), b * k * (k * v).sin()) * 0.5);
        let err = f.d_z().sub(&want).unwrap().sup_interior();
        prop_assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn invariant_density_is_conformally_invariant(seed in any::<u64>()) {
        let def = clifford_torus();
        let spec = def.grid(24, 24).unwrap();
        let big = embed(&def.sample(&spec), 0.0, &tol()).unwrap();
        let frame = canonical_lift(&big, None, &tol()).unwrap();
        let inv = conformal_invariants(&frame);
        let t = random_isometry(big.sig(), 0.4, seed);
        let moved = canonical_lift(&transform_field(&t, &big).unwrap(), None, &tol()).unwrap();
        let minv = conformal_invariants(&moved);
        let dg = frame.points().iter().map(|&p| (inv.g.val(p) - minv.g.val(p)).norm()).fold(0.0, f64::max);
        prop_assert!(dg < 1e-7, "{dg}");
        let dw = (willmore(&frame, &inv).unwrap() - willmore(&moved, &minv).unwrap()).abs();
        prop_assert!(dw < 1e-7, "{dw}");
    }

    #[test]
    fn polar_sections_keep_their_length(angle in 0.0f64..(2.0 * PI), c in prop_oneof![Just(1.0f64), Just(4.0f64)]) {
        let def = product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap();
        let (frame, inv) = lift_catalog(&def, &def.grid(48, 48).unwrap(), &tol()).unwrap();
        let x = vec![c.sqrt() * angle.cos(), c.sqrt() * angle.sin()];
        let ps = from_coords(&frame, &inv, x, c, &tol()).unwrap();
        let r = verify_polar(&ps);
        prop_assert!(r.length < 1e-9 * c, "{r:?}");
        prop_assert!(r.parallel < 1e-6 && r.condition_i < 1e-8, "{r:?}");
    }

    #[test]
    fn product_seeds_have_unit_length(theta in 0.0f64..(2.0 * PI)) {
        let def = product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.8).unwrap()).unwrap();
        let (frame, inv) = lift_catalog(&def, &def.grid(48, 48).unwrap(), &tol()).unwrap();
        let seed = product_polar_seed(&def, &frame, theta).unwrap();
        prop_assert!((frame.y.sig().dot(&seed, &seed) - 1.0).abs() < 1e-12);
        prop_assert!(polar_transform(&frame, &inv, &seed, 1.0, &tol()).is_ok());
    }

    #[test]
    fn configs_round_trip(c_tilde in -1.0f64..1.0, theta in prop_oneof![-2.0f64..-0.1, 0.1f64..2.0], nu in 8usize..80) {
        let text = format!(
            r#"{{"surface": {{"name": "clifford_torus"}}, "grid": {{"nu": {nu}, "nv": 16}},
                "pipeline": [{{"step": "polar"}}, {{"step": "spectral", "c_tilde": {c_tilde}}},
                             {{"step": "permute-darboux", "theta": {theta}}}]}}"#
        );
        let cfg = JobConfig::from_json(&text).unwrap();
        let again = JobConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(serde_json::to_value(&cfg).unwrap(), serde_json::to_value(&again).unwrap());
        let is_spectral = matches!(cfg.pipeline[1], Step::Spectral { .. });
        prop_assert!(is_spectral);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn spectral_shift_moves_only_the_schwarzian(c_tilde in -0.6f64..0.6) {
        let (frame, inv) = lift_catalog(&clifford_torus(), &clifford_torus().grid(32, 32).unwrap(), &tol()).unwrap();
        let st = spectral_transform(&frame, &inv, c_tilde, None, &tol()).unwrap();
        prop_assert!(st.residuals.schwarzian < 1e-4, "{:?}", st.residuals);
        prop_assert!(st.residuals.kappa_norm < 1e-4, "{:?}", st.residuals);
    }
}

#[test]
fn darboux_parameter_must_be_nonzero() {
    let (frame, inv) = lift_catalog(&clifford_torus(), &clifford_torus().grid(16, 16).unwrap(), &tol()).unwrap();
    let xi = vec![0.0; frame.y.sig().dim()];
    let e = darboux_construct(&frame, &inv, 0.0, C64::new(1.0, 0.0), &xi, &tol()).unwrap_err();
    assert!(matches!(e, Error::Parameter(_)));
}
