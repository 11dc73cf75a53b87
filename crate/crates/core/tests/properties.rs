use gyromix_core::compensator::fit_correction;
use gyromix_core::geometry::{
    homography_array_to_flow, rodrigues, Homography, HomographyArray, RotationVector,
};
use gyromix_core::gyro::{format_gyro_log, integrate_rotation, parse_gyro_log, GyroSample};
use gyromix_core::mixtures::{estimate_mixture, Correspondence, MixtureParams};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

proptest! {
    #[test]
    fn log_inverts_rodrigues(v in vec3(1.7)) {
        prop_assume!(v.norm() > 1e-6);
        let back = rodrigues(&RotationVector(v)).unwrap().log();
        prop_assert!((back.0 - v).norm() < 1e-9, "{v} -> {}", back.0);
    }

    #[test]
    fn integration_splits_at_any_time(
        rates in prop::collection::vec(vec3(2.0), 4..12),
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        c in 0.0..1.0f64,
    ) {
        let samples: Vec<GyroSample> = rates
            .iter()
            .enumerate()
            .map(|(i, w)| GyroSample::from_ns(i as i64 * 5_000_000, *w))
            .collect();
        let span = samples.last().unwrap().t;
        let mut t = [a * span, b * span, c * span];
        t.sort_by(f64::total_cmp);
        let whole = integrate_rotation(&samples, t[0], t[2]).unwrap();
        let first = integrate_rotation(&samples, t[0], t[1]).unwrap();
        let second = integrate_rotation(&samples, t[1], t[2]).unwrap();
        // Steps are fourth order, so a cut inside a sample interval moves the
        // truncation error; a cut at a sample leaves every step unchanged.
        let h = samples[1].t;
        let w_max = rates.iter().map(|w| w.norm()).fold(0.0, f64::max);
        let dw_max = rates.windows(2).map(|p| (p[1] - p[0]).norm() / h).fold(0.0, f64::max);
        let bound = h.powi(5) * w_max * w_max * dw_max + 1e-12;
        let gap = whole.geodesic_distance(&second.mul(&first));
        prop_assert!(gap < bound, "gap {gap:e} over bound {bound:e}");
        let knot = samples[samples.partition_point(|s| s.t < t[1]).min(samples.len() - 1)].t;
        let (lo, hi) = (t[0].min(knot), t[2].max(knot));
        let whole = integrate_rotation(&samples, lo, hi).unwrap();
        let first = integrate_rotation(&samples, lo, knot).unwrap();
        let second = integrate_rotation(&samples, knot, hi).unwrap();
        let gap = whole.geodesic_distance(&second.mul(&first));
        prop_assert!(gap < 1e-12, "gap at sample {gap:e}");
    }

    #[test]
    fn translation_arrays_give_constant_flow(tx in -40.0..40.0f64, ty in -40.0..40.0f64, n in 1usize..8) {
        let arr = HomographyArray::new(vec![Homography::translation(tx, ty); n], 30).unwrap();
        let flow = homography_array_to_flow(&arr, 40, 30).unwrap();
        for uv in flow.data() {
            prop_assert!((uv[0] - tx).abs() < 1e-12 && (uv[1] - ty).abs() < 1e-12);
        }
    }

    #[test]
    fn gyro_log_round_trips(rows in prop::collection::vec((0i64..1i64 << 50, vec3(10.0)), 1..20)) {
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        rows.dedup_by_key(|r| r.0);
        let parsed = parse_gyro_log(format_gyro_log(&rows).as_bytes()).unwrap();
        prop_assert_eq!(parsed.len(), rows.len());
        for (p, (ns, w)) in parsed.iter().zip(&rows) {
            prop_assert_eq!(*p, GyroSample::from_ns(*ns, *w));
        }
    }
}

/// Noise-free correspondences of a pose `x2 = R x1 + t` through `k`.
fn two_view(rot: Vector3<f64>, t: Vector3<f64>, pts: &[(f64, f64, f64)]) -> Vec<Correspondence> {
    let r = *rodrigues(&RotationVector(rot)).unwrap().matrix();
    let k = Matrix3::new(300.0, 0.0, 160.0, 0.0, 300.0, 120.0, 0.0, 0.0, 1.0);
    pts.iter()
        .map(|&(x, y, z)| {
            let x1 = Vector3::new(x * z, y * z, z);
            let (p1, p2) = (k * x1, k * (r * x1 + t));
            Correspondence::new(p1.x / p1.z, p1.y / p1.z, p2.x / p2.z, p2.y / p2.z)
        })
        .collect()
}

fn pose_strategy() -> impl Strategy<Value = Vec<Correspondence>> {
    (
        vec3(0.2),
        vec3(0.5).prop_filter("translation", |t| t.norm() > 0.1),
        prop::collection::vec((-0.5..0.5f64, -0.4..0.4f64, 2.0..8.0f64), 12..40),
    )
        .prop_map(|(r, t, pts)| two_view(r, t, &pts))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_fundamental_satisfies_epipolar_constraint(cs in pose_strategy()) {
        let fm = estimate_mixture(&cs, &MixtureParams::new(1, 240)).unwrap();
        prop_assert!((fm.coefficients().norm() - fm.mats[0].norm()).abs() < 1e-12);
        let f = fm.mats[0] / fm.mats[0].norm();
        for c in &cs {
            let a = Vector3::new(c.p1.x, c.p1.y, 1.0);
            let b = Vector3::new(c.p2.x, c.p2.y, 1.0);
            let r = (a.transpose() * f * b)[0] / (a.norm() * b.norm());
            prop_assert!(r.abs() < 1e-9, "residual {r}");
        }
        prop_assert!(f.determinant().abs() < 1e-9);
    }

    #[test]
    fn mixture_ignores_correspondence_order(cs in pose_strategy(), seed in 0usize..1000) {
        let params = MixtureParams::new(4, 240).with_sigma(24.0);
        let mut shuffled = cs.clone();
        let n = shuffled.len();
        shuffled.rotate_left(seed % n);
        shuffled.swap(0, n - 1);
        let f = estimate_mixture(&cs, &params).unwrap().coefficients();
        let g = estimate_mixture(&shuffled, &params).unwrap().coefficients();
        let cos = f.dot(&g).abs() / (f.norm() * g.norm());
        prop_assert!(cos > 1.0 - 1e-9, "cos {cos}");
    }
}

fn random_array(rots: &[Vector3<f64>]) -> HomographyArray {
    let k = Matrix3::new(300.0, 0.0, 160.0, 0.0, 300.0, 120.0, 0.0, 0.0, 1.0);
    let hs = rots
        .iter()
        .map(|v| {
            let r = rodrigues(&RotationVector(*v)).unwrap();
            Homography::new(k * r.matrix() * k.try_inverse().unwrap()).unwrap()
        })
        .collect();
    HomographyArray::new(hs, 240).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_recovers_a_fixed_correction(
        rots in prop::collection::vec(prop::collection::vec(vec3(0.1), 3), 0..8),
        shift in prop::array::uniform2(-8.0..8.0f64),
        skew in -0.02..0.02f64,
    ) {
        let c = Matrix3::new(1.0 + skew, 0.01, shift[0], -0.005, 1.0, shift[1], 0.0, 0.0, 1.0);
        // Affine, so scaling targets to h22 = 1 keeps them exactly C G.
        // Rotations about each axis keep the normal equations well posed.
        let spread = (0..6).map(|i| {
            let mut v = Vector3::zeros();
            v[i % 3] = if i < 3 { 0.2 } else { -0.2 };
            vec![v; 3]
        });
        let pairs: Vec<(HomographyArray, HomographyArray)> = rots
            .iter()
            .cloned()
            .chain(spread)
            .map(|r| {
                let g = random_array(&r);
                let t = g
                    .patches()
                    .iter()
                    .map(|h| Homography::new(c * h.matrix()).unwrap())
                    .collect();
                (g, HomographyArray::new(t, 240).unwrap())
            })
            .collect();
        let fit = fit_correction(&pairs, 320, 240).unwrap();
        for m in fit.mats() {
            let m = m / m[(2, 2)];
            prop_assert!((m - c).abs().max() < 1e-8, "{m} vs {c}");
        }
        prop_assert!(fit.bias().norm() < 1e-6);

        let mut reversed = pairs.clone();
        reversed.reverse();
        let again = fit_correction(&reversed, 320, 240).unwrap();
        for (a, b) in fit.mats().iter().zip(again.mats()) {
            prop_assert!((a - b).abs().max() < 1e-9);
        }
    }
}
