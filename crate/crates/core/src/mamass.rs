//! The common level set `K_n = {P = Q = 1}` and the atomic Monge-Ampère
//! measure `(dd^c U_n)² = (2π)²/n² · Σ D_j δ_{ζ_j}`.
//!
//! On `z ≠ 0` write `w = t·z`; then `P = Q = 1` becomes `p(t) = q(t)` together
//! with `zⁿ = 1/p(t)`, so each root of `p - q` carries a fiber of `n` points.

use crate::cpoly::{aberth, cluster, polish, FactoredDifference, FactoredPoly, NewtonTarget};
use crate::homlift::{robin_eval, CircledSetModel, LiftedPair};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaError {
    #[error("leading coefficients agree; {deficit} solutions escape to the plane z = 0")]
    DegenerateLeading { deficit: usize },
    #[error("P and Q appear to share a factor")]
    CommonFactorSuspected,
    #[error("pair degrees differ")]
    DegreeMismatch,
}

/// A point of `K_n` with its local mapping degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetPoint {
    pub z: Complex64,
    pub w: Complex64,
    pub local_degree: u32,
    /// `max(|P - 1|, |Q - 1|)` after polishing.
    pub residual: f64,
    /// `|det J| / (|∇P|·|∇Q|)`.
    pub jacobian: f64,
    /// Set when the normalized Jacobian is below `1e-8`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSolution {
    pub points: Vec<LevelSetPoint>,
    /// Roots `t_j` of `p - q`.
    pub fibers: Vec<Complex64>,
    /// Roots discarded because `|p(t_j)| ≤ 1e-12`.
    pub skipped_fibers: usize,
    pub degree_sum: u32,
    pub max_residual: f64,
}

fn leading_coefficient(p: &FactoredPoly, n: usize) -> Complex64 {
    if p.degree() == n {
        p.leading().to_complex()
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Starting points for `p - q`: the zeros of `p`, spread slightly so that
/// repeated zeros do not coincide, plus points on a circle if `p` has too few.
fn starts(p: &FactoredPoly, q: &FactoredPoly, n: usize) -> Vec<Complex64> {
    let base = if p.degree() >= q.degree() { p } else { q };
    let scale = base.zeros.iter().map(|z| z.at.norm()).fold(1.0, f64::max);
    let mut out = Vec::with_capacity(n);
    for (j, zero) in base.zeros.iter().enumerate() {
        let m = zero.mult as usize;
        let radius = if m > 1 { 0.1 * zero.at.norm().max(1.0) } else { 1e-3 * scale };
        for i in 0..m {
            let angle = TAU * i as f64 / m as f64 + 0.7 + 2.399 * j as f64;
            out.push(zero.at + Complex64::from_polar(radius, angle));
        }
    }
    let mut i = 0;
    while out.len() < n {
        out.push(Complex64::from_polar(scale, TAU * i as f64 / n as f64 + 0.3));
        i += 1;
    }
    out.truncate(n);
    out
}

/// Newton on `(P - 1, Q - 1)` in C²; returns the point, residual and
/// normalized Jacobian.
fn newton2(pair: &LiftedPair, mut z: Complex64, mut w: Complex64) -> (Complex64, Complex64, f64, f64) {
    let eval = |z: Complex64, w: Complex64| {
        let p = pair.p.eval(z, w);
        let q = pair.q.eval(z, w);
        (p, q)
    };
    let (mut p, mut q) = eval(z, w);
    let mut res = (p - 1.0).norm().max((q - 1.0).norm());
    for _ in 0..20 {
        if res <= 1e-15 {
            break;
        }
        let (pz, pw) = pair.p.log_gradient(z, w);
        let (qz, qw) = pair.q.log_gradient(z, w);
        let (a, b, c, d) = (p * pz, p * pw, q * qz, q * qw);
        let det = a * d - b * c;
        if det.norm() == 0.0 || !det.is_finite() {
            break;
        }
        let (f, g) = (p - 1.0, q - 1.0);
        let dz = (d * f - b * g) / det;
        let dw = (a * g - c * f) / det;
        let (nz, nw) = (z - dz, w - dw);
        let (np, nq) = eval(nz, nw);
        let nres = (np - 1.0).norm().max((nq - 1.0).norm());
        if !(nres < res) {
            break;
        }
        (z, w, p, q, res) = (nz, nw, np, nq, nres);
    }
    let (pz, pw) = pair.p.log_gradient(z, w);
    let (qz, qw) = pair.q.log_gradient(z, w);
    let (a, b, c, d) = (p * pz, p * pw, q * qz, q * qw);
    let det = (a * d - b * c).norm();
    let scale = (a.norm_sqr() + b.norm_sqr()).sqrt() * (c.norm_sqr() + d.norm_sqr()).sqrt();
    let jac = if scale > 0.0 { det / scale } else { 0.0 };
    (z, w, res, jac)
}

/// All points of `{P = Q = 1}` with local degrees.
pub fn solve_common_level_sets(pair: &LiftedPair) -> Result<LevelSetSolution, MaError> {
    let n = pair.n;
    if pair.p.n != pair.q.n {
        return Err(MaError::DegreeMismatch);
    }
    let (p, q) = (&pair.p.slice, &pair.q.slice);
    let (lp, lq) = (leading_coefficient(p, n), leading_coefficient(q, n));
    if lp.norm() == 0.0 && lq.norm() == 0.0 {
        // Both lifts are divisible by z.
        return Err(MaError::CommonFactorSuspected);
    }
    if (lp - lq).norm() <= 1e-12 * lp.norm().max(lq.norm()) {
        if p == q {
            return Err(MaError::CommonFactorSuspected);
        }
        return Err(MaError::DegenerateLeading { deficit: n });
    }
    let target = FactoredDifference { p, q, degree: n };
    let (roots, _, _) = aberth(&target, starts(p, q, n), 1000);
    let roots: Vec<Complex64> = roots.into_iter().map(|r| polish(&target, r, 5)).collect();
    if roots.iter().all(|r| target.residual(*r) > 1e-6) {
        return Err(MaError::CommonFactorSuspected);
    }
    let mut skipped = 0;
    let mut fibers = Vec::new();
    for &t in &roots {
        if p.log_abs(t) <= (1e-12f64).ln() {
            skipped += 1;
        } else {
            fibers.push(t);
        }
    }
    let raw: Vec<(Complex64, Complex64, f64, f64)> = fibers
        .par_iter()
        .flat_map_iter(|&t| {
            let lg = p.eval_log(t);
            (0..n).map(move |k| {
                let z = Complex64::from_polar((-lg.log_mod / n as f64).exp(), (-lg.phase + TAU * k as f64) / n as f64);
                (z, t)
            })
        })
        .map(|(z, t)| newton2(pair, z, t * z))
        .collect();
    // Merge coincident solutions.
    let scale = raw.iter().map(|r| r.0.norm().max(r.1.norm())).fold(1.0, f64::max);
    let mut points: Vec<LevelSetPoint> = Vec::with_capacity(raw.len());
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].0.re.total_cmp(&raw[b].0.re));
    let tol = 1e-6 * scale;
    let mut merged = vec![false; raw.len()];
    for (pos, &i) in order.iter().enumerate() {
        if merged[i] {
            continue;
        }
        let (z, w, res, jac) = raw[i];
        let mut degree = 1;
        for &j in order[pos + 1..].iter().take_while(|&&j| raw[j].0.re - z.re < tol) {
            if !merged[j] && (raw[j].0 - z).norm() < tol && (raw[j].1 - w).norm() < tol {
                merged[j] = true;
                degree += 1;
            }
        }
        points.push(LevelSetPoint { z, w, local_degree: degree, residual: res, jacobian: jac, flagged: jac < 1e-8 });
    }
    // Deterministic order independent of the merge sweep.
    points.sort_by(|a, b| a.z.re.total_cmp(&b.z.re).then(a.z.im.total_cmp(&b.z.im)).then(a.w.re.total_cmp(&b.w.re)));
    let degree_sum = points.iter().map(|p| p.local_degree).sum();
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);
    Ok(LevelSetSolution { points, fibers, skipped_fibers: skipped, degree_sum, max_residual })
}

/// Distinct roots of `p - q` up to `threshold`, for diagnostics.
pub fn distinct_fibers(sol: &LevelSetSolution, threshold: f64) -> Vec<(Complex64, u32)> {
    cluster(&sol.fibers, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: Complex64,
    pub w: Complex64,
    pub weight: f64,
    pub local_degree: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMAMeasure {
    pub atoms: Vec<Atom>,
    pub n: usize,
    pub total_mass: f64,
    /// Set for an empty measure.
    pub empty: bool,
}

impl DiscreteMAMeasure {
    /// `Σ weight · z^a w^b z̄^c w̄^d`.
    pub fn moment(&self, (a, b, c, d): (u32, u32, u32, u32)) -> Complex64 {
        self.atoms
            .iter()
            .map(|at| at.weight * at.z.powu(a) * at.w.powu(b) * at.z.conj().powu(c) * at.w.conj().powu(d))
            .sum()
    }

    /// Atoms as CSV rows `re z, im z, re w, im w, weight`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_z,im_z,re_w,im_w,weight\n");
        for a in &self.atoms {
            s.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", a.z.re, a.z.im, a.w.re, a.w.im, a.weight));
        }
        s
    }
}

/// Weights `D_j (2π)²/n²`.
pub fn discrete_ma_measure(points: &[LevelSetPoint], n: usize) -> DiscreteMAMeasure {
    let unit = (TAU * TAU) / (n * n).max(1) as f64;
    let atoms: Vec<Atom> = points
        .iter()
        .map(|p| Atom { z: p.z, w: p.w, weight: p.local_degree as f64 * unit, local_degree: p.local_degree })
        .collect();
    let total_mass = atoms.iter().map(|a| a.weight).sum();
    DiscreteMAMeasure { empty: atoms.is_empty(), atoms, n, total_mass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceKind {
    Ball,
    Bidisk,
    /// `{|z|² + c|w|² ≤ 1}`, the image of the ball under `w ↦ w/√c`.
    Ellipsoid { c: f64 },
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Moments of `(dd^c V_K)²`: `(2π)²` times the normalized uniform measure on
/// the torus or the sphere.
pub fn reference_moments(kind: ReferenceKind, (a, b, c, d): (u32, u32, u32, u32)) -> Complex64 {
    if a != c || b != d {
        return Complex64::new(0.0, 0.0);
    }
    let mass = TAU * TAU;
    let v = match kind {
        ReferenceKind::Bidisk => mass,
        ReferenceKind::Ball => mass * factorial(a) * factorial(b) / factorial(a + b + 1),
        ReferenceKind::Ellipsoid { c: cc } => {
            mass * factorial(a) * factorial(b) / factorial(a + b + 1) * cc.powi(-(b as i32))
        }
    };
    Complex64::new(v, 0.0)
}

/// Multi-indices with `a + b + c + d ≤ total`.
pub fn moment_indices(total: u32) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    for a in 0..=total {
        for b in 0..=total - a {
            for c in 0..=total - a - b {
                for d in 0..=total - a - b - c {
                    out.push((a, b, c, d));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub index: (u32, u32, u32, u32),
    pub discrete: Complex64,
    pub reference: Complex64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub total_mass: f64,
    pub max_abs_error: f64,
    pub rms_error: f64,
    /// Error of the `(1,0,1,0)` moment.
    pub z_second_moment_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub kind: ReferenceKind,
    pub rows: Vec<MomentRow>,
    pub summaries: Vec<MomentSummary>,
    /// `max_abs_error` nonincreasing along the list.
    pub max_error_nonincreasing: bool,
    pub z_second_moment_nonincreasing: bool,
}

/// Moments of total degree ≤ 4 for each measure against the limit.
pub fn weak_star_report(mu_list: &[DiscreteMAMeasure], kind: ReferenceKind) -> MomentReport {
    let indices = moment_indices(4);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for mu in mu_list {
        let mut max_abs_error: f64 = 0.0;
        let mut sq = 0.0;
        for &index in &indices {
            let discrete = mu.moment(index);
            let reference = reference_moments(kind, index);
            let abs_error = (discrete - reference).norm();
            max_abs_error = max_abs_error.max(abs_error);
            sq += abs_error * abs_error;
            rows.push(MomentRow { n: mu.n, index, discrete, reference, abs_error });
        }
        let z2 = (mu.moment((1, 0, 1, 0)) - reference_moments(kind, (1, 0, 1, 0))).norm();
        summaries.push(MomentSummary {
            n: mu.n,
            total_mass: mu.total_mass,
            max_abs_error,
            rms_error: (sq / indices.len() as f64).sqrt(),
            z_second_moment_error: z2,
        });
    }
    let nonincreasing = |f: fn(&MomentSummary) -> f64| summaries.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    MomentReport {
        kind,
        max_error_nonincreasing: nonincreasing(|s| s.max_abs_error),
        z_second_moment_nonincreasing: nonincreasing(|s| s.z_second_moment_error),
        rows,
        summaries,
    }
}

/// `max |ρ_K|` over the atoms.
pub fn support_localization(mu: &DiscreteMAMeasure, model: &CircledSetModel) -> f64 {
    mu.atoms
        .iter()
        .map(|a| robin_eval(model, a.z, a.w).map_or(f64::INFINITY, f64::abs))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    /// Discrete `‖∇f - ∇V_K‖_{L²}` over the ball.
    pub l2_distance: f64,
    pub cells_in_ball: usize,
    pub excised: usize,
    pub excised_fraction: f64,
}

/// Central-difference gradients of `f` and of `V_K` on a `g⁴` grid in the
/// real coordinates of C², restricted to `|(z, w)| < radius`; grid points
/// within `1e-3` of an atom are dropped.
pub fn sobolev_diagnostic<F: Fn(Complex64, Complex64) -> f64 + Sync>(
    f: F,
    model: &CircledSetModel,
    atoms: &[Atom],
    radius: f64,
    g: usize,
) -> SobolevReport {
    const EXCISE: f64 = 1e-3;
    let step = 2.0 * radius / g as f64;
    let fd = 1e-5 * radius;
    let coord = |i: usize| -radius + (i as f64 + 0.5) * step;
    let vk = |z: Complex64, w: Complex64| crate::homlift::extremal_eval(model, z, w);
    let cells: Vec<[f64; 4]> = (0..g.pow(4))
        .map(|idx| [coord(idx % g), coord(idx / g % g), coord(idx / (g * g) % g), coord(idx / (g * g * g))])
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>() < radius * radius)
        .collect();
    let contrib: Vec<Option<f64>> = cells
        .par_iter()
        .map(|x| {
            let z = Complex64::new(x[0], x[1]);
            let w = Complex64::new(x[2], x[3]);
            if atoms.iter().any(|a| ((a.z - z).norm_sqr() + (a.w - w).norm_sqr()).sqrt() < EXCISE) {
                return None;
            }
            let mut s = 0.0;
            for axis in 0..4 {
                let mut e = [0.0; 4];
                e[axis] = fd;
                let plus = (z + Complex64::new(e[0], e[1]), w + Complex64::new(e[2], e[3]));
                let minus = (z - Complex64::new(e[0], e[1]), w - Complex64::new(e[2], e[3]));
                let df = (f(plus.0, plus.1) - f(minus.0, minus.1)) / (2.0 * fd);
                let dv = (vk(plus.0, plus.1) - vk(minus.0, minus.1)) / (2.0 * fd);
                s += (df - dv) * (df - dv);
            }
            Some(s)
        })
        .collect();
    let excised = contrib.iter().filter(|c| c.is_none()).count();
    let vol = step.powi(4);
    let total: f64 = contrib.iter().flatten().sum::<f64>() * vol;
    SobolevReport {
        l2_distance: total.sqrt(),
        cells_in_ball: cells.len(),
        excised,
        excised_fraction: excised as f64 / cells.len().max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpoly::Zero;
    use crate::homlift::{monomial, HomogeneousPoly};

    #[test]
    fn bidisk_four() {
        let sol = solve_common_level_sets(&LiftedPair::bidisk(4)).unwrap();
        assert_eq!(sol.points.len(), 16);
        assert_eq!(sol.degree_sum, 16);
        for p in &sol.points {
            assert!((p.z.powu(4) - 1.0).norm() < 1e-12 && (p.w.powu(4) - 1.0).norm() < 1e-12);
            assert_eq!(p.local_degree, 1);
        }
        let mu = discrete_ma_measure(&sol.points, 4);
        assert!((mu.total_mass - TAU * TAU).abs() < 1e-12);
        assert!(mu.atoms.iter().all(|a| (a.weight - TAU * TAU / 16.0).abs() < 1e-14));
    }

    #[test]
    fn squares_at_n_two() {
        let sol = solve_common_level_sets(&LiftedPair::new(monomial(2, 0), monomial(0, 2)).unwrap()).unwrap();
        let mut pts: Vec<(f64, f64)> = sol.points.iter().map(|p| (p.z.re, p.w.re)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
        for (g, w) in pts.iter().zip(want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_leading_coefficients_rejected() {
        // P = (w - z)(w + z), Q = (w - 2z)(w + 2z): p - q = 3 has degree 0.
        let p = HomogeneousPoly { slice: FactoredPoly::from_roots(&[Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]), n: 2 };
        let q = HomogeneousPoly { slice: FactoredPoly::from_roots(&[Complex64::new(2.0, 0.0), Complex64::new(-2.0, 0.0)]), n: 2 };
        let pair = LiftedPair::new(p.clone(), q).unwrap();
        assert_eq!(solve_common_level_sets(&pair), Err(MaError::DegenerateLeading { deficit: 2 }));
        let same = LiftedPair::new(p.clone(), p).unwrap();
        assert_eq!(solve_common_level_sets(&same), Err(MaError::CommonFactorSuspected));
    }

    #[test]
    fn local_degree_two_toy() {
        // The map (z, w) ↦ (z, w²) has local degree 2 at the origin.
        let weights = discrete_ma_measure(
            &[LevelSetPoint {
                z: Complex64::new(0.0, 0.0),
                w: Complex64::new(0.0, 0.0),
                local_degree: 2,
                residual: 0.0,
                jacobian: 0.0,
                flagged: true,
            }],
            2,
        );
        assert!((weights.total_mass - 2.0 * TAU * TAU / 4.0).abs() < 1e-14);
        let empty = discrete_ma_measure(&[], 3);
        assert!(empty.empty && empty.total_mass == 0.0);
    }

    #[test]
    fn reference_values() {
        let m = TAU * TAU;
        assert_eq!(reference_moments(ReferenceKind::Bidisk, (1, 0, 1, 0)).re, m);
        assert!((reference_moments(ReferenceKind::Ball, (1, 0, 1, 0)).re - m / 2.0).abs() < 1e-14);
        assert_eq!(reference_moments(ReferenceKind::Ball, (1, 0, 0, 1)).norm(), 0.0);
        assert!((reference_moments(ReferenceKind::Ball, (1, 1, 1, 1)).re - m / 6.0).abs() < 1e-14);
        assert_eq!(moment_indices(4).len(), 70);
    }

    #[test]
    fn bidisk_moments_exact_below_n() {
        let sol = solve_common_level_sets(&LiftedPair::bidisk(8)).unwrap();
        let mu = discrete_ma_measure(&sol.points, 8);
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    for d in 0..8 {
                        let err = (mu.moment((a, b, c, d)) - reference_moments(ReferenceKind::Bidisk, (a, b, c, d))).norm();
                        assert!(err < 1e-9, "{a}{b}{c}{d}: {err}");
                    }
                }
            }
        }
        assert!(support_localization(&mu, &CircledSetModel::bidisk()) < 1e-9);
        let mut bad = mu.clone();
        bad.atoms.push(Atom { z: Complex64::new(3.0, 0.0), w: Complex64::new(0.0, 0.0), weight: 1.0, local_degree: 1 });
        assert!(support_localization(&bad, &CircledSetModel::bidisk()) > 1.0);
    }

    #[test]
    fn multiple_tail_zero_start_points_are_distinct() {
        let p = FactoredPoly::new(vec![Zero { at: Complex64::new(5.0, 0.0), mult: 3 }], 0.0, 0.0);
        let s = starts(&p, &p, 3);
        assert_eq!(s.len(), 3);
        assert!((s[0] - s[1]).norm() > 0.1);
    }

    #[test]
    fn sobolev_of_extremal_is_zero() {
        let model = CircledSetModel::ball();
        let rep = sobolev_diagnostic(|z, w| crate::homlift::extremal_eval(&model, z, w), &model, &[], 1.5, 8);
        assert!(rep.l2_distance <= 1e-3);
        assert_eq!(rep.excised, 0);
    }
}
