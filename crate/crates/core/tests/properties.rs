use lsw_core::energy::g1_radial;
use lsw_core::harmonics::{norm3, LegendreSeries, SphereGrid};
use proptest::prelude::*;

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm3(v);
    (n > 1e-3).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_power_series_converges(
        k in 0usize..=3,
        r in prop_oneof![0.05f64..0.6, 1.8f64..8.0],
        d in prop::array::uniform3(-1.0f64..1.0),
        y in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (Some(d), Some(y)) = (unit(d), unit(y)) else { return Ok(()) };
        let s = LegendreSeries::new(k, [r * d[0], r * d[1], r * d[2]], 120).unwrap();
        let e = s.exact(y);
        prop_assert!((s.eval(y) - e).abs() <= 1e-9 * e, "{} vs {}", s.eval(y), e);
    }

    #[test]
    fn g1_is_increasing(a in 0.01f64..0.95, b in 0.01f64..0.95) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        prop_assert!(g1_radial(lo).unwrap() < g1_radial(hi).unwrap());
    }

    #[test]
    fn transform_round_trip(coeffs in prop::collection::vec(-1.0f64..1.0, 49)) {
        let grid = SphereGrid::new(6);
        let mut f = lsw_core::harmonics::HarmonicField::zeros(6);
        f.coeffs.copy_from_slice(&coeffs);
        let back = grid.analyze(&grid.synthesize(&f), 6).unwrap();
        for (a, b) in back.coeffs.iter().zip(&coeffs) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }
}
