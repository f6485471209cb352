use lemnika_core::cpoly::{expand, roots, FactoredPoly, Zero};
use lemnika_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Zeros with log-uniform modulus in `[1, radius]`.
fn planted_log_uniform(seed: u64, degree: usize, radius: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..degree)
        .map(|_| Complex64::from_polar(radius.powf(rng.random()), rng.random::<f64>() * TAU))
        .collect()
}

/// Zeros uniform (by area) in the disk of the given radius.
fn planted_uniform(seed: u64, degree: usize, radius: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..degree)
        .map(|_| Complex64::from_polar(radius * rng.random::<f64>().sqrt(), rng.random::<f64>() * TAU))
        .collect()
}

/// Greedy nearest matching, returning per-planted-zero errors.
fn match_errors(found: &[Complex64], want: &[Complex64]) -> Vec<(usize, f64)> {
    let mut used = vec![false; found.len()];
    want.iter()
        .enumerate()
        .map(|(i, w)| {
            let (j, d) = found
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, f)| (j, (f - w).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            used[j] = true;
            (i, d)
        })
        .collect()
}

fn flatten(est: &[lemnika_core::cpoly::RootEstimate]) -> Vec<Complex64> {
    est.iter().flat_map(|r| std::iter::repeat_n(r.at, r.mult as usize)).collect()
}

/// First-order sensitivity of zero `j` to relative perturbations of the
/// stored coefficients: `Σ|c_i||u|^i / |p'(u)|`, evaluated in log form.
fn condition(want: &[Complex64], j: usize, c: &lemnika_core::cpoly::CoeffPoly) -> f64 {
    let sigma = c.var_scale();
    let u = want[j] / sigma;
    let log_num = c
        .coefficients
        .iter()
        .enumerate()
        .map(|(i, ci)| ci.norm() * u.norm().powi(i as i32))
        .sum::<f64>()
        .ln()
        + c.log2_scale as f64 * std::f64::consts::LN_2;
    // |p'(t_j)| in u: 2^scale-free product over the other zeros.
    let log_deriv: f64 = want
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(_, t)| ((want[j] - t) / sigma).norm().ln())
        .sum();
    // The product is monic in u up to 2^log2_scale / σ^N; the leading stored
    // coefficient carries that factor.
    let lead = c.coefficients.last().unwrap().norm().ln() + c.log2_scale as f64 * std::f64::consts::LN_2;
    (log_num - lead - log_deriv).exp() * sigma
}

#[test]
fn degree_30_planted_roots_recovered() {
    let want = planted_uniform(7, 30, 2.0);
    let c = expand(&FactoredPoly::from_roots(&want)).unwrap();
    let got = roots(&c, 1e-10).unwrap();
    let flat = flatten(&got);
    assert_eq!(flat.len(), 30);
    let worst = match_errors(&flat, &want).into_iter().map(|(_, d)| d).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst:e}");
    assert!(got.iter().all(|r| r.residual <= 1e-10));
}

#[test]
fn well_conditioned_sets_recovered_to_1e6() {
    for (seed, degree) in [(11, 50), (12, 100), (13, 150), (14, 200)] {
        let want = planted_log_uniform(seed, degree, 1e3);
        let c = expand(&FactoredPoly::from_roots(&want)).unwrap();
        let got = roots(&c, 1e-10).unwrap();
        let flat = flatten(&got);
        assert_eq!(flat.len(), degree);
        for (i, d) in match_errors(&flat, &want) {
            assert!(d / want[i].norm().max(1.0) < 1e-6, "degree {degree}, zero {i}: {d:e}");
        }
    }
}

#[test]
fn uniform_disk_sets_certified_and_within_conditioning() {
    for (seed, degree, radius) in [(1, 50, 1.0), (2, 100, 10.0), (3, 200, 1e3), (4, 200, 1.0)] {
        let want = planted_uniform(seed, degree, radius);
        let c = expand(&FactoredPoly::from_roots(&want)).unwrap();
        let got = roots(&c, 1e-10).unwrap();
        let worst = got.iter().map(|r| r.residual).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "degree {degree}: residual {worst:e}");
        let flat = flatten(&got);
        assert_eq!(flat.len(), degree);
        for (i, d) in match_errors(&flat, &want) {
            // Expansion rounding is normwise rather than componentwise, so the
            // componentwise condition number understates the sensitivity of
            // small coefficients; the 1e4 factor absorbs that plus matching.
            let bound = 1e4 * f64::EPSILON * degree as f64 * condition(&want, i, &c);
            assert!(d <= bound.max(1e-10 * want[i].norm().max(1.0)), "degree {degree}, zero {i}: {d:e} > {bound:e}");
        }
    }
}

#[test]
fn multiple_zero_reported_with_multiplicity() {
    let f = FactoredPoly::new(
        vec![Zero { at: Complex64::new(0.3, -0.2), mult: 2 }, Zero::simple(Complex64::new(2.0, 0.0))],
        0.0,
        0.0,
    );
    let got = roots(&expand(&f).unwrap(), 1e-10).unwrap();
    assert!(got.iter().any(|r| r.mult == 2));
}
