use besm_core::capacity::{det_growth_bound, phi_eps, phi_knot};
use besm_core::linalg::{
    adjugate, det, gram_schmidt_qr, singular_values, svd, Matrix,
};
use besm_core::muckenhoupt::{default_separation, normalize_ball};
use besm_core::process::TimeChange;
use besm_core::sampling::{batch_means, stream};
use besm_core::weights::{
    calibrate_haar_mass, claim_1d_bound, qr_cube_integral, sample_region, CubeSpec, Interval,
    WeightSpec,
};
use proptest::prelude::*;

fn square(max_d: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_d).prop_flat_map(|d| {
        prop::collection::vec(-3.0f64..3.0, d * d)
            .prop_map(move |v| Matrix::from_row_major(d, v).unwrap())
    })
}

fn pair(max_d: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max_d).prop_flat_map(|d| {
        (
            prop::collection::vec(-3.0f64..3.0, d * d),
            prop::collection::vec(-1.0f64..1.0, d * d),
        )
            .prop_map(move |(a, b)| {
                (Matrix::from_row_major(d, a).unwrap(), Matrix::from_row_major(d, b).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn qr_factors_meet_invariants(x in square(6)) {
        prop_assume!(det(&x).abs() > 1e-6);
        let f = gram_schmidt_qr(&x).unwrap();
        prop_assert!(f.check(&x).is_ok(), "{:?}", f.check(&x));
    }

    #[test]
    fn adjugate_identity(x in square(6)) {
        let d = x.dim();
        let lhs = &x * &adjugate(&x);
        let rhs = Matrix::identity(d).scale(det(&x));
        prop_assert!((&lhs - &rhs).norm() <= 1e-8 * (1.0 + x.norm().powi(d as i32)));
    }

    #[test]
    fn abs_det_is_product_of_singular_values(x in square(6)) {
        let dx = det(&x).abs();
        prop_assume!(dx > 1e-8);
        let p: f64 = singular_values(&x).as_slice().iter().product();
        prop_assert!((p - dx).abs() <= 1e-8 * dx, "{p} vs {dx}");
    }

    #[test]
    fn singular_values_are_lipschitz((x, v) in pair(6)) {
        let a = singular_values(&x);
        let b = singular_values(&(&x + &v));
        let dist: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist <= v.norm() * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn normalized_ball_is_separated_and_contains_original(
        sigma in prop::collection::vec(1e-3f64..1e9, 1..=6),
        r in 1e-3f64..10.0,
    ) {
        let mut sigma = sigma;
        sigma.sort_by(|a, b| b.total_cmp(a));
        let ball = normalize_ball(&sigma, r).unwrap();
        let a = default_separation(sigma.len());
        prop_assert!(ball.satisfies_separation(a).is_ok());
        let shift: f64 = sigma.iter().zip(&ball.sigma).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt();
        prop_assert!(shift <= (ball.radius - r) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn claim_bound_with_equality_only_at_zero(
        alpha in -0.999f64..-1e-3,
        beta in 0.0f64..5.0,
        a in 0.0f64..2.0,
        len in 1e-3f64..3.0,
        at_zero in any::<bool>(),
    ) {
        let a = if at_zero { 0.0 } else { a.max(1e-3) };
        let c = claim_1d_bound(alpha, beta, a, a + len).unwrap();
        if at_zero {
            prop_assert!((c.lhs - c.rhs).abs() <= 1e-12 * c.rhs);
        } else {
            prop_assert!(c.lhs < c.rhs);
        }
    }

    #[test]
    fn geometric_telescoping_identity(a in 1e-6f64..100.0, k in 0u32..=20) {
        let mut sum = 1.0 + a;
        for j in 1..=k {
            sum += a * (1.0 + a).powi(j as i32);
        }
        let target = (1.0 + a).powi(k as i32 + 1);
        prop_assert!((sum - target).abs() <= 1e-12 * target);
    }

    #[test]
    fn growth_constant_grows_under_scaling(
        (x, v) in pair(5),
        s in 1.0f64..10.0,
        k_frac in 0.0f64..1.0,
    ) {
        let d = x.dim();
        let k = ((k_frac * d as f64) as usize).min(d - 1);
        let xk = svd(&x).truncate(k);
        prop_assume!(k == 0 || singular_values(&xk).as_slice()[k - 1] > 1e-6);
        let v = if v.norm() > 1.0 { v.scale(0.999 / v.norm()) } else { v };
        let base = det_growth_bound(&xk, k, &v).unwrap();
        let scaled = det_growth_bound(&xk.scale(s), k, &v).unwrap();
        prop_assert!(scaled.c_k >= base.c_k * (1.0 - 1e-12));
    }

    #[test]
    fn phi_is_monotone_and_lipschitz(eps in 0.05f64..0.6, u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let (t1, t2) = ((u.min(w)) * eps, (u.max(w)) * eps);
        let (p1, p2) = (phi_eps(t1, eps).unwrap(), phi_eps(t2, eps).unwrap());
        prop_assert!(p2 <= p1 + 1e-15);
        let k = phi_knot(eps);
        let lip = (k / eps).powf(eps - 1.0) + eps.powf(-1.0 / eps);
        prop_assert!(p1 - p2 <= lip * (t2 - t1) * (1.0 + 1e-9) + 1e-15);
        prop_assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn clock_is_nondecreasing(
        steps in prop::collection::vec((1e-4f64..0.1, prop::collection::vec(-2.0f64..2.0, 4)), 1..50),
    ) {
        let mut times = vec![0.0];
        let mut states = vec![Matrix::identity(2)];
        for (h, e) in &steps {
            times.push(times.last().unwrap() + h);
            states.push(Matrix::from_row_major(2, e.clone()).unwrap());
        }
        let tc = TimeChange::from_states(&times, &states);
        prop_assert_eq!(tc.a[0], 0.0);
        prop_assert!(tc.a.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn phi_vanishes_from_eps_on() {
    for eps in [0.05, 0.1, 0.25, 0.5] {
        for t in [eps, 1.5 * eps, 10.0] {
            assert_eq!(phi_eps(t, eps).unwrap(), 0.0);
        }
    }
}

// The Haar mass is calibrated on the unit cube; here it predicts the volume of
// a different region, measured by independent rejection sampling.
#[test]
fn calibrated_mass_predicts_lebesgue_volume() {
    for d in [2usize, 3] {
        let mu = calibrate_haar_mass(d, 17, 200_000).unwrap();
        let cube = CubeSpec::new(d, |i, j| {
            if i == j {
                Interval::new(0.5, 1.5).unwrap()
            } else {
                Interval::new(-0.5, 0.25).unwrap()
            }
        })
        .unwrap();
        let closed = qr_cube_integral(WeightSpec::new(0.0).unwrap(), &cube).unwrap();
        let volume = sample_region(&cube, &mut stream(0, 0, 0)).2;
        let frac = batch_means(23, 99, 400_000, 1, |rng, obs| {
            obs[0] = f64::from(u8::from(sample_region(&cube, rng).1));
        })[0];
        let (mc, mc_se) = (frac.mean * volume, frac.stderr * volume);
        let (pred, pred_se) = (mu.value * closed, mu.stderr * closed);
        let comb = (mc_se.powi(2) + pred_se.powi(2)).sqrt();
        assert!((mc - pred).abs() <= 3.0 * comb, "d={d}: mc {mc} ± {mc_se}, predicted {pred} ± {pred_se}");
    }
}
