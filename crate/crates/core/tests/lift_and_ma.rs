//! The C² layer: lifts, sandwich bounds, common level sets and their
//! Monge–Ampère measures, against closed forms and independent solvers.

use lemnika_core::atomizer::{construct_pair, tail_plan, CertifyConfig};
use lemnika_core::cpoly::FactoredPoly;
use lemnika_core::grid::GridSpec;
use lemnika_core::homlift::*;
use lemnika_core::mamass::*;
use lemnika_core::potential::PlanarMeasure;
use lemnika_core::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn lifted(measure: &str, model: &CircledSetModel, n: usize) -> LiftedPair {
    let mu = PlanarMeasure::builtin(measure, GridSpec { half_side: 12.0, h: 0.05 }).unwrap();
    let (k, m) = tail_plan(n).unwrap();
    let pair = construct_pair(&mu, k, Some(m), 0.25, CertifyConfig { grid_n: 101, ..Default::default() }).unwrap();
    LiftedPair::from_pair(&pair, model).unwrap()
}

fn ball_pair(n: usize) -> LiftedPair {
    lifted("ball", &CircledSetModel::ball(), n)
}

/// Uniform point on the unit sphere of C².
fn sphere_point(rng: &mut ChaCha8Rng) -> (Complex64, Complex64) {
    let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let r = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c(g[0] / r, g[1] / r), c(g[2] / r, g[3] / r))
}

#[test]
fn lemma_lift_matches_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ball = CircledSetModel::ball();
    let bidisk = CircledSetModel::bidisk();
    let ell = CircledSetModel::ellipsoid(2.0);
    for _ in 0..500 {
        let (z, w) = sphere_point(&mut rng);
        let s: f64 = rng.random_range(0.05..20.0);
        let (z, w) = (z * s, w * s);
        let want = (z.norm_sqr() + w.norm_sqr()).sqrt().ln().max(0.0);
        assert!((extremal_eval(&ball, z, w) - want).abs() < 1e-9);
        let want = z.norm().ln().max(w.norm().ln()).max(0.0);
        assert!((extremal_eval(&bidisk, z, w) - want).abs() < 1e-9);
        let want = (0.5 * (z.norm_sqr() + 2.0 * w.norm_sqr()).ln()).max(0.0);
        assert!((extremal_eval(&ell, z, w) - want).abs() < 1e-9);
    }
    // The grid-backed model follows the same closed form away from the
    // origin, up to the grid's potential error.
    let mu = PlanarMeasure::builtin("ball", GridSpec { half_side: 12.0, h: 0.05 }).unwrap();
    let custom = CircledSetModel::custom(mu, 0.0);
    for (z, w) in [(c(1.0, 0.0), c(0.5, 0.5)), (c(0.0, 0.0), c(2.0, 0.0)), (c(0.01, 0.0), c(3.0, 1.0))] {
        let want = 0.5 * (z.norm_sqr() + w.norm_sqr()).ln();
        assert!((robin_eval(&custom, z, w).unwrap() - want).abs() < 1e-3);
    }
}

#[test]
fn un_bounded_by_u_tilde_plus_log2_over_n() {
    let pair = ball_pair(12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..4000 {
        let (z, w) = sphere_point(&mut rng);
        let s: f64 = 10f64.powf(rng.random_range(-1.0..1.5));
        let (z, w) = (z * s, w * s);
        let un = u_n_eval(&pair, z, w);
        assert!(un <= u_tilde_eval(&pair, z, w) + 2f64.ln() / 12.0 + 1e-12);
    }
    // Far field: within ε + 2/n of ρ_K.
    let eps = pair.epsilon.unwrap();
    for _ in 0..200 {
        let (z, w) = sphere_point(&mut rng);
        let (z, w) = (z * 1e3, w * 1e3);
        let rho = robin_eval(&CircledSetModel::ball(), z, w).unwrap();
        assert!((u_n_eval(&pair, z, w) - rho).abs() <= eps + 2.0 / 12.0);
    }
}

#[test]
fn un_converges_off_the_boundary() {
    let model = CircledSetModel::ball();
    let grid = SandwichGrid { polar: 21, azimuthal: 24, radii: vec![0.5, 0.7, 1.5, 2.0, 3.0] };
    let pts: Vec<_> = grid
        .points()
        .into_iter()
        .filter(|&(z, w)| robin_eval(&model, z, w).unwrap().abs() >= 0.2)
        .collect();
    let mut sups = Vec::new();
    for n in [12, 24, 48, 96] {
        let pair = ball_pair(n);
        let sup = pts
            .iter()
            .map(|&(z, w)| (u_n_eval(&pair, z, w) - extremal_eval(&model, z, w)).abs())
            .fold(0.0, f64::max);
        sups.push(sup);
    }
    assert!(sups.windows(2).all(|s| s[1] <= s[0]), "{sups:?}");
    assert!(*sups.last().unwrap() < 0.1, "{sups:?}");
}

#[test]
fn ball_pair_sandwich() {
    let pair = ball_pair(24);
    let eps = pair.epsilon.unwrap();
    let rep = sandwich_check(&CircledSetModel::ball(), &pair, eps, &SandwichGrid::default());
    assert!(rep.n_samples >= 10_000);
    assert!(rep.pass, "{rep:?}");
    assert!(rep.max_upper_excess <= 1e-9);
}

#[test]
fn chebyshev_completion_of_zn_on_sphere_is_trivial() {
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Product grid on the sphere: (cos φ e^{iθ}, sin φ e^{iψ}). On the circle
    // φ = 0 the mean of |z³ + R|² is 1 + Σ|c_{i0}|², so no R beats sup = 1.
    let mut samples = Vec::new();
    for a in 0..=8 {
        let phi = 0.5 * std::f64::consts::PI * a as f64 / 8.0;
        for i in 0..12 {
            for j in 0..12 {
                let (th, ps) = (TAU * i as f64 / 12.0, TAU * j as f64 / 12.0);
                samples.push((Complex64::from_polar(phi.cos(), th), Complex64::from_polar(phi.sin(), ps)));
            }
        }
    }
    let h: Vec<Complex64> = samples.iter().map(|(z, _)| z.powu(n as u32)).collect();
    let gap = 1e-4;
    let res = chebyshev_complete(&h, &samples, n, gap, 400).unwrap();
    assert!(res.relative_gap <= gap, "{res:?}");
    assert!((res.sup_norm - 1.0).abs() <= gap);
    // Coefficients of pure powers of z are pinned to 0 by the φ = 0 circle;
    // the optimum is not unique in the others (R = ½w² is also optimal).
    let pinned = ((1.0 + gap) * (1.0 + gap) - 1.0f64).sqrt();
    for ((i, j), coef) in &res.coefficients {
        if *j == 0 {
            assert!(coef.norm() <= pinned, "z^{i}: {coef}");
        }
    }
    let sup = |r: &dyn Fn(Complex64, Complex64) -> Complex64| {
        samples.iter().zip(&h).map(|(&(z, w), hv)| (hv + r(z, w)).norm()).fold(0.0, f64::max)
    };
    let zero_sup = sup(&|_, _| c(0.0, 0.0));
    assert!(res.sup_norm >= zero_sup * (1.0 - gap) - 1e-12);
    // Random candidates never beat the completion.
    for _ in 0..50 {
        let coefs: Vec<Complex64> = res.coefficients.iter().map(|_| c(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect();
        let monos = lower_monomials(n);
        let r = |z: Complex64, w: Complex64| -> Complex64 {
            monos.iter().zip(&coefs).map(|(&(i, j), a)| a * z.powu(i as u32) * w.powu(j as u32)).sum()
        };
        assert!(sup(&r) >= res.sup_norm * (1.0 - gap));
    }
    // Coordinate-descent optimality: no single real direction improves.
    for m in 0..res.coefficients.len() {
        for dir in [c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)] {
            for step in [1e-1, 1e-2, 1e-3] {
                let r = |z: Complex64, w: Complex64| res.eval_correction(z, w) + {
                    let ((i, j), _) = res.coefficients[m];
                    dir * step * z.powu(i as u32) * w.powu(j as u32)
                };
                assert!(sup(&r) >= res.sup_norm * (1.0 - gap));
            }
        }
    }
}

#[test]
fn bidisk_common_level_set_is_torus_grid() {
    for n in [2usize, 4] {
        let pair = LiftedPair::bidisk(n);
        let sol = solve_common_level_sets(&pair).unwrap();
        assert_eq!(sol.points.len(), n * n);
        for p in &sol.points {
            assert_eq!(p.local_degree, 1);
            assert!((p.z.powu(n as u32) - 1.0).norm() < 1e-10 && (p.w.powu(n as u32) - 1.0).norm() < 1e-10);
        }
        let mu = discrete_ma_measure(&sol.points, n);
        assert!((mu.total_mass - TAU * TAU).abs() < 1e-9);
        for a in &mu.atoms {
            assert!((a.weight - TAU * TAU / (n * n) as f64).abs() < 1e-12);
        }
        assert!(support_localization(&mu, &CircledSetModel::bidisk()) < 1e-9);
    }
}

#[test]
fn local_degree_two_toy_and_empty_measure() {
    let p = LevelSetPoint { z: c(0.0, 0.0), w: c(0.0, 0.0), local_degree: 2, residual: 0.0, jacobian: 0.0, flagged: true };
    let mu = discrete_ma_measure(&[p], 2);
    assert!((mu.total_mass - 2.0 * TAU * TAU / 4.0).abs() < 1e-12);
    let empty = discrete_ma_measure(&[], 5);
    assert!(empty.empty && empty.total_mass == 0.0);
}

/// Newton on `(P - 1, Q - 1)` from random starts, collecting distinct roots.
fn dense_newton(pair: &LiftedPair, starts: usize, seed: u64) -> Vec<(Complex64, Complex64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<(Complex64, Complex64)> = Vec::new();
    for _ in 0..starts {
        let (mut z, mut w) = sphere_point(&mut rng);
        let s: f64 = rng.random_range(0.8..1.25);
        z *= s;
        w *= s;
        let mut ok = false;
        for _ in 0..80 {
            let (pv, qv) = (pair.p.eval(z, w), pair.q.eval(z, w));
            let (pz, pw) = pair.p.log_gradient(z, w);
            let (qz, qw) = pair.q.log_gradient(z, w);
            let (a, b, cc, d) = (pv * pz, pv * pw, qv * qz, qv * qw);
            let det = a * d - b * cc;
            if det.norm() < 1e-300 || !det.is_finite() {
                break;
            }
            let (f1, f2) = (pv - 1.0, qv - 1.0);
            let dz = (d * f1 - b * f2) / det;
            let dw = (a * f2 - cc * f1) / det;
            z -= dz;
            w -= dw;
            if !(z.is_finite() && w.is_finite()) || z.norm() + w.norm() > 10.0 {
                break;
            }
            if dz.norm() + dw.norm() < 1e-14 {
                ok = true;
                break;
            }
        }
        let res = (pair.p.eval(z, w) - 1.0).norm().max((pair.q.eval(z, w) - 1.0).norm());
        if ok && res < 1e-9 && !found.iter().any(|&(a, b)| (a - z).norm() + (b - w).norm() < 1e-7) {
            found.push((z, w));
        }
    }
    found
}

#[test]
fn ball_level_set_matches_random_start_newton() {
    let n = 6;
    let pair = ball_pair(n);
    let sol = solve_common_level_sets(&pair).unwrap();
    assert_eq!(sol.degree_sum as usize, n * n);
    assert!(sol.max_residual <= 1e-8);
    let oracle = dense_newton(&pair, 4000, 7);
    assert_eq!(oracle.len(), n * n);
    for (z, w) in oracle {
        assert!(
            sol.points.iter().any(|p| (p.z - z).norm() + (p.w - w).norm() < 1e-8),
            "oracle root ({z}, {w}) missing"
        );
    }
}

#[test]
fn ma_mass_conservation_ball_and_ellipsoids() {
    let cases: Vec<(String, CircledSetModel, ReferenceKind)> = vec![
        ("ball".into(), CircledSetModel::ball(), ReferenceKind::Ball),
        ("ellipsoid:0.5".into(), CircledSetModel::ellipsoid(0.5), ReferenceKind::Ellipsoid { c: 0.5 }),
        ("ellipsoid:2".into(), CircledSetModel::ellipsoid(2.0), ReferenceKind::Ellipsoid { c: 2.0 }),
    ];
    for (name, model, kind) in cases {
        let mut measures = Vec::new();
        for n in [6, 12] {
            let pair = lifted(&name, &model, n);
            let sol = solve_common_level_sets(&pair).unwrap();
            assert_eq!(sol.degree_sum as usize, n * n, "{name} n={n}");
            assert!(sol.max_residual <= 1e-8);
            let mu = discrete_ma_measure(&sol.points, n);
            assert!((mu.total_mass - TAU * TAU).abs() < 1e-6);
            assert!((mu.moment((0, 0, 0, 0)).re - mu.total_mass).abs() < 1e-9);
            assert!(mu.atoms.iter().all(|a| a.weight > 0.0));
            measures.push(mu);
        }
        let rep = weak_star_report(&measures, kind);
        assert_eq!(rep.rows.len(), 2 * moment_indices(4).len());
        for s in &rep.summaries {
            assert!(s.max_abs_error.is_finite());
        }
    }
}

#[test]
fn reference_moments_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let indices = [(1, 0, 1, 0), (0, 1, 0, 1), (1, 1, 1, 1), (2, 0, 2, 0), (1, 0, 0, 1), (2, 1, 2, 1)];
    let samples = 1_000_000;
    let mut ball = vec![Complex64::new(0.0, 0.0); indices.len()];
    let mut ell = vec![Complex64::new(0.0, 0.0); indices.len()];
    let cval = 2.0f64;
    for _ in 0..samples {
        let (z, w) = sphere_point(&mut rng);
        let we = w / cval.sqrt();
        for (k, &(a, b, cc, d)) in indices.iter().enumerate() {
            ball[k] += z.powu(a) * w.powu(b) * z.conj().powu(cc) * w.conj().powu(d);
            ell[k] += z.powu(a) * we.powu(b) * z.conj().powu(cc) * we.conj().powu(d);
        }
    }
    let scale = TAU * TAU / samples as f64;
    for (k, &idx) in indices.iter().enumerate() {
        for (mc, kind) in [(ball[k] * scale, ReferenceKind::Ball), (ell[k] * scale, ReferenceKind::Ellipsoid { c: cval })] {
            let r = reference_moments(kind, idx);
            let tol = 1e-2 * r.norm().max(TAU * TAU * 0.05);
            assert!((mc - r).norm() <= tol, "{kind:?} {idx:?}: mc {mc} vs {r}");
        }
    }
    assert!((reference_moments(ReferenceKind::Ball, (1, 0, 1, 0)).re - TAU * TAU / 2.0).abs() < 1e-12);
    assert_eq!(reference_moments(ReferenceKind::Ball, (1, 0, 0, 1)).norm(), 0.0);
    assert!((reference_moments(ReferenceKind::Bidisk, (1, 0, 1, 0)).re - TAU * TAU).abs() < 1e-12);
}

#[test]
fn bidisk_moments_exact() {
    let measures: Vec<_> = [4usize, 8]
        .iter()
        .map(|&n| discrete_ma_measure(&solve_common_level_sets(&LiftedPair::bidisk(n)).unwrap().points, n))
        .collect();
    let rep = weak_star_report(&measures, ReferenceKind::Bidisk);
    for row in &rep.rows {
        let (a, b, cc, d) = row.index;
        if a.max(b).max(cc).max(d) < row.n as u32 {
            assert!(row.abs_error < 1e-9, "{row:?}");
        }
    }
}

#[test]
fn support_localization_detects_far_atom() {
    let pair = LiftedPair::bidisk(4);
    let sol = solve_common_level_sets(&pair).unwrap();
    let mut mu = discrete_ma_measure(&sol.points, 4);
    mu.atoms.push(Atom { z: c(5.0, 0.0), w: c(0.0, 0.0), weight: 1.0, local_degree: 1 });
    assert!(support_localization(&mu, &CircledSetModel::bidisk()) > 1.0);
}

#[test]
fn sobolev_bidisk_trend() {
    let model = CircledSetModel::bidisk();
    let mut values = Vec::new();
    for n in [8usize, 16] {
        let pair = LiftedPair::bidisk(n);
        let sol = solve_common_level_sets(&pair).unwrap();
        let mu = discrete_ma_measure(&sol.points, n);
        let rep = sobolev_diagnostic(|z, w| u_n_eval(&pair, z, w), &model, &mu.atoms, 1.5, 14);
        assert!(rep.excised_fraction < 0.01);
        values.push(rep.l2_distance);
    }
    assert!(values[1] < values[0], "{values:?}");
    let rep = sobolev_diagnostic(|z, w| extremal_eval(&model, z, w), &model, &[], 1.5, 14);
    assert!(rep.l2_distance <= 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn homogeneous_lift_is_log_homogeneous(
        roots in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 0..8),
        extra in 0usize..4,
        lam in (0.01f64..50.0, 0.0f64..TAU),
        zw in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
    ) {
        let zeros: Vec<Complex64> = roots.iter().map(|&(a, b)| c(a, b)).collect();
        let n = zeros.len() + extra;
        prop_assume!(n > 0);
        let h = homogenize(&FactoredPoly::from_roots(&zeros), n).unwrap();
        let (z, w) = (c(zw.0, zw.1), c(zw.2, zw.3));
        let l = Complex64::from_polar(lam.0, lam.1);
        let base = h.log_abs(z, w);
        prop_assume!(base.is_finite() && base > -30.0);
        let scaled = h.log_abs(l * z, l * w);
        prop_assert!((scaled - base - n as f64 * lam.0.ln()).abs() < 1e-10);
        // Complex homogeneity of the value itself.
        let v = h.eval(z, w) * l.powu(n as u32);
        prop_assert!((h.eval(l * z, l * w) - v).norm() <= 1e-9 * v.norm().max(1e-300));
    }
}
