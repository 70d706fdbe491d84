use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dti::{eig3_sym, fa_map, fit_tensor, fractional_anisotropy, TensorFitter};

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Minimum distance to a dense polyline sampling of the arc.
fn sampled_distance(arc: &Arc, p: [f64; 3], samples: usize) -> f64 {
    (0..=samples)
        .map(|i| dist(p, arc.point(i as f64 / samples as f64)))
        .fold(f64::INFINITY, f64::min)
}

fn quiet(spec: PhantomSpec) -> PhantomSpec {
    PhantomSpec { sigma: 0.0, ..spec }
}

#[test]
fn arc_geometry() {
    let arc = Arc::new([0.0, 0.0, 0.0], [10.0, 0.0, 0.0], 5.0).unwrap();
    // Sagitta equal to half the chord is a half circle.
    assert!((arc.length() - 5.0 * std::f64::consts::PI).abs() < 1e-12);
    let mid = arc.point(0.5);
    assert!(dist(mid, [5.0, 5.0, 0.0]) < 1e-12);
    assert!(dist(arc.point(1.0), [10.0, 0.0, 0.0]) < 1e-12);
    let straight = Arc::new([1.0, 2.0, 3.0], [1.0, 2.0, 9.0], 0.0).unwrap();
    assert_eq!(straight.length(), 6.0);
    let n = straight.nearest([4.0, 2.0, 5.0]);
    assert_eq!(n.distance, 3.0);
    assert_eq!(n.tangent, [0.0, 0.0, 1.0]);
    assert!(Arc::new([1.0; 3], [1.0; 3], 2.0).is_none());
}

#[test]
fn arc_distance_matches_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..20.0));
        let e: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..20.0));
        let sag = rng.random_range(-12.0..12.0);
        let arc = Arc::new(s, e, sag).unwrap();
        for _ in 0..50 {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..25.0));
            let exact = arc.nearest(p).distance;
            let approx = sampled_distance(&arc, p, 20_000);
            // Chord sampling can only overestimate, by at most h²/(8R)-ish.
            assert!(exact <= approx + 1e-9 && approx - exact < 1e-3, "{exact} vs {approx}");
        }
        // Tangents are unit length and orthogonal to the radial offset on the arc.
        let t = arc.nearest(arc.point(0.3)).tangent;
        assert!(((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt() - 1.0).abs() < 1e-12);
        let ahead = arc.point(0.3 + 1e-6);
        let behind = arc.point(0.3 - 1e-6);
        let fd = [ahead[0] - behind[0], ahead[1] - behind[1], ahead[2] - behind[2]];
        let fdn = (fd[0] * fd[0] + fd[1] * fd[1] + fd[2] * fd[2]).sqrt();
        let cos = (t[0] * fd[0] + t[1] * fd[1] + t[2] * fd[2]) / fdn;
        assert!(cos > 1.0 - 1e-8, "{cos}");
    }
}

#[test]
fn mask_matches_distance_field() {
    let spec = PhantomSpec::desk();
    let (_, truth) = ground_truth(&spec).unwrap();
    let arc = spec.arc().unwrap();
    let (mut count, mut boundary) = (0, 0);
    for x in 0..32 {
        for y in 0..32 {
            for z in 0..32 {
                let d = sampled_distance(&arc, [x as f64, y as f64, z as f64], 4000);
                let flat = (x * 32 + y) * 32 + z;
                if (d - spec.radius).abs() > 1e-4 {
                    assert_eq!(truth.is_set(flat), d <= spec.radius, "voxel {x},{y},{z} at {d}");
                    count += (d <= spec.radius) as usize;
                } else {
                    boundary += 1;
                }
            }
        }
    }
    // Voxels exactly on the tube surface may fall either way in floating point.
    assert!(truth.count() >= count && truth.count() <= count + boundary);
    assert!(count > 500, "{count}");
}

#[test]
fn noise_free_fit_recovers_diffusivities() {
    let spec = quiet(PhantomSpec::desk());
    let case = make_phantom(&spec).unwrap();
    assert_eq!(case.scan, case.rescan);
    let all = BinaryMask::filled(spec.dims, true).unwrap();
    let fitted = fit_tensor(&case.scan, &case.gradients, &all).unwrap();
    let fa = fa_map(&fitted).unwrap();
    let fa_tract = fractional_anisotropy([spec.lambda_par, spec.lambda_perp, spec.lambda_perp]);
    for i in 0..case.truth.volume().voxel_count() {
        let ev = eig3_sym(&fitted.tensor_at(i)).values;
        if case.truth.is_set(i) {
            assert!((ev[0] - spec.lambda_par).abs() < 1e-6);
            assert!((ev[1] - spec.lambda_perp).abs() < 1e-6 && (ev[2] - spec.lambda_perp).abs() < 1e-6);
            assert!((fa.data()[i] as f64 - fa_tract).abs() < 1e-3);
        } else {
            assert!(ev.iter().all(|l| (l - spec.background).abs() < 1e-6));
            assert!(fa.data()[i] < 1e-3);
        }
    }
}

#[test]
fn noise_free_fa_in_double_precision() {
    let spec = quiet(PhantomSpec::desk());
    let (field, truth) = ground_truth(&spec).unwrap();
    let g = spec.gradients().unwrap();
    let fitter = TensorFitter::new(&g).unwrap();
    let fa_tract = fractional_anisotropy([spec.lambda_par, spec.lambda_perp, spec.lambda_perp]);
    let n = truth.volume().voxel_count();
    for i in (0..n).step_by(7) {
        let d = field.tensor_at(i);
        let (_, fit) = fitter.fit_voxel(&forward_signal(spec.s0, &d, &g));
        let fa = fractional_anisotropy(eig3_sym(&fit).values);
        if truth.is_set(i) {
            // The stored tensor is f32, so compare against its own eigenvalues.
            let exact = fractional_anisotropy(eig3_sym(&d).values);
            assert!((fa - exact).abs() < 1e-8);
            assert!((exact - fa_tract).abs() < 1e-6);
        } else {
            assert!(fa < 1e-10, "{fa}");
        }
    }
}

#[test]
fn rician_noise_is_seeded_and_non_negative() {
    let spec = PhantomSpec { seed: 5, ..PhantomSpec::desk() };
    let a = make_phantom(&spec).unwrap();
    let b = make_phantom(&spec).unwrap();
    assert_eq!(a.scan, b.scan);
    assert_ne!(a.scan, a.rescan);
    assert!(a.scan.data().iter().chain(a.rescan.data()).all(|&v| v >= 0.0));
    let c = make_phantom(&PhantomSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(a.scan, c.scan);
}

#[test]
fn wm_mask_contains_tract() {
    let spec = PhantomSpec::desk();
    let case = make_phantom(&spec).unwrap();
    let n = case.truth.volume().voxel_count();
    assert!((0..n).all(|i| !case.truth.is_set(i) || case.wm.is_set(i)));
    assert!(case.wm.count() > case.truth.count() * 5);
    assert!(!case.wm.is_set(0));
}

#[test]
fn invalid_specs() {
    let too_wide = PhantomSpec {
        radius: 9.0,
        ..PhantomSpec::desk()
    };
    assert!(matches!(too_wide.validate(), Err(Error::Spec(_))));
    let out = PhantomSpec {
        end: [40.0, 9.0, 16.0],
        ..PhantomSpec::desk()
    };
    assert!(matches!(make_phantom(&out), Err(Error::Spec(_))));
    let inverted = PhantomSpec {
        lambda_par: 0.2e-3,
        ..PhantomSpec::desk()
    };
    assert!(matches!(inverted.validate(), Err(Error::Spec(_))));
    assert!(PhantomSpec::clinical_shaped().validate().is_ok());
    let bad = Jitter {
        radius_min: 4.0,
        radius_max: 3.0,
        ..Jitter::default()
    };
    assert!(matches!(cohort_specs(&PhantomSpec::desk(), &bad, [1, 0, 0]), Err(Error::Spec(_))));
}

#[test]
fn single_unjittered_subject_is_the_base() {
    let base = PhantomSpec { seed: 42, ..PhantomSpec::desk() };
    let cohort = make_cohort(&base, &Jitter::none(base.radius), [1, 0, 0]).unwrap();
    let direct = make_phantom(&base).unwrap();
    assert_eq!(cohort[0].0.phantom, base);
    assert_eq!(cohort[0].1.scan, direct.scan);
    assert_eq!(cohort[0].1.truth, direct.truth);
}

#[test]
fn cohort_is_deterministic_and_in_range() {
    let base = PhantomSpec { seed: 9, ..PhantomSpec::desk() };
    let jitter = Jitter::default();
    let a = cohort_specs(&base, &jitter, [24, 4, 4]).unwrap();
    let b = cohort_specs(&base, &jitter, [24, 4, 4]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 32);
    assert_eq!(a.iter().filter(|s| s.split == Split::Train).count(), 24);
    assert_eq!(a.iter().filter(|s| s.split == Split::Validate).count(), 4);
    assert_eq!(a[31].split, Split::Test);
    let mut ids: Vec<&str> = a.iter().map(|s| s.subject.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 32);
    for s in &a {
        assert!(s.phantom.radius >= jitter.radius_min && s.phantom.radius <= jitter.radius_max);
        let (_, truth) = ground_truth(&s.phantom).unwrap();
        assert!(truth.count() > 0);
    }
    let seeds: std::collections::BTreeSet<u64> = a.iter().map(|s| s.phantom.seed).collect();
    assert_eq!(seeds.len(), 32);
}
