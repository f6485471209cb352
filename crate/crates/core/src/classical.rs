//! One-variable baselines: Fekete points, Chebyshev polynomials, closed-form
//! extremal functions, lemniscate containment and the arcsine law.

use crate::cpoly::FactoredPoly;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("no closed-form extremal function for this set")]
    UnsupportedKind,
    #[error("candidate grid has {grid} points, need at least {needed}")]
    GridTooSmall { grid: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetKind {
    Disk { r: f64 },
    Interval { a: f64, b: f64 },
    Cloud,
}

/// A compact set with a finite candidate grid inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSet1D {
    pub kind: SetKind,
    pub candidates: Vec<Complex64>,
    pub spacing: f64,
}

impl CompactSet1D {
    /// `m` equispaced points including both endpoints.
    pub fn interval(a: f64, b: f64, m: usize) -> Self {
        let m = m.max(2);
        let spacing = (b - a) / (m - 1) as f64;
        let candidates = (0..m).map(|i| Complex64::new(if i + 1 == m { b } else { a + i as f64 * spacing }, 0.0)).collect();
        Self { kind: SetKind::Interval { a, b }, candidates, spacing }
    }

    /// `m` points on the boundary circle, where the Vandermonde product and
    /// polynomial sup norms are attained.
    pub fn disk(r: f64, m: usize) -> Self {
        let candidates = (0..m).map(|j| Complex64::from_polar(r, TAU * j as f64 / m as f64)).collect();
        Self { kind: SetKind::Disk { r }, candidates, spacing: TAU * r / m as f64 }
    }

    pub fn cloud(points: Vec<Complex64>) -> Self {
        Self { kind: SetKind::Cloud, candidates: points, spacing: f64::NAN }
    }

    /// Points on `∂(K^ε)`, the boundary of the ε-neighbourhood.
    pub fn neighbourhood_boundary(&self, eps: f64, m: usize) -> Vec<Complex64> {
        match self.kind {
            SetKind::Disk { r } => (0..m).map(|j| Complex64::from_polar(r + eps, TAU * j as f64 / m as f64)).collect(),
            SetKind::Interval { a, b } => {
                // Stadium: two segments and two half circles.
                let q = m / 4;
                let mut out = Vec::with_capacity(4 * q);
                for i in 0..q {
                    let x = a + (b - a) * (i as f64 + 0.5) / q as f64;
                    out.push(Complex64::new(x, eps));
                    out.push(Complex64::new(x, -eps));
                    let th = PI * (i as f64 + 0.5) / q as f64 - FRAC_PI_2;
                    out.push(Complex64::new(b, 0.0) + Complex64::from_polar(eps, th));
                    out.push(Complex64::new(a, 0.0) - Complex64::from_polar(eps, th));
                }
                out
            }
            SetKind::Cloud => self
                .candidates
                .iter()
                .flat_map(|&c| (0..8).map(move |j| c + Complex64::from_polar(eps, TAU * j as f64 / 8.0)))
                .filter(|z| self.candidates.iter().all(|c| (z - c).norm() >= eps * (1.0 - 1e-12)))
                .collect(),
        }
    }
}

fn log_vandermonde(points: &[Complex64]) -> f64 {
    let mut s = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            s += (a - b).norm().ln();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeketeResult {
    pub points: Vec<Complex64>,
    /// `Σ_{j<k} log|a_j - a_k|`.
    pub log_vandermonde: f64,
    /// Value after every accepted exchange; nondecreasing.
    pub history: Vec<f64>,
    pub brute_force: bool,
}

fn combinations(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        f(&idx);
        let mut i = n;
        while i > 0 && idx[i - 1] == m - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Approximate Fekete points on the candidate grid.
///
/// Tiny problems (n ≤ 4, at most 64 candidates) are solved exactly. Otherwise
/// a Leja sequence seeds an exchange iteration that moves one point at a time
/// to the best candidate until no move increases the Vandermonde product.
pub fn fekete_points(k: &CompactSet1D, n: usize) -> Result<FeketeResult, ClassicalError> {
    let grid = &k.candidates;
    let m = grid.len();
    if m < 4 * n {
        return Err(ClassicalError::GridTooSmall { grid: m, needed: 4 * n });
    }
    if n == 0 {
        return Ok(FeketeResult { points: Vec::new(), log_vandermonde: 0.0, history: vec![0.0], brute_force: true });
    }
    if n <= 4 && m <= 64 {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        combinations(m, n, |idx| {
            let pts: Vec<Complex64> = idx.iter().map(|&i| grid[i]).collect();
            let v = log_vandermonde(&pts);
            if v > best.0 {
                best = (v, pts);
            }
        });
        return Ok(FeketeResult { log_vandermonde: best.0, history: vec![best.0], points: best.1, brute_force: true });
    }
    // Leja seed: start at the candidate of largest modulus.
    let first = (0..m).max_by(|&a, &b| grid[a].norm().total_cmp(&grid[b].norm()).then(b.cmp(&a))).unwrap_or(0);
    let mut chosen = vec![first];
    let mut score: Vec<f64> = grid.iter().map(|c| (c - grid[first]).norm().ln()).collect();
    while chosen.len() < n {
        let next = (0..m)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)))
            .expect("grid larger than n");
        for (i, s) in score.iter_mut().enumerate() {
            *s += (grid[i] - grid[next]).norm().ln();
        }
        chosen.push(next);
    }
    let mut value = log_vandermonde(&chosen.iter().map(|&i| grid[i]).collect::<Vec<_>>());
    let mut history = vec![value];
    loop {
        let mut improved = false;
        for j in 0..n {
            let others: Vec<Complex64> = chosen.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, &i)| grid[i]).collect();
            let contrib = |c: Complex64| others.iter().map(|o| (c - o).norm().ln()).sum::<f64>();
            let current = contrib(grid[chosen[j]]);
            let (best_i, best_v) = (0..m)
                .into_par_iter()
                .map(|i| (i, contrib(grid[i])))
                .reduce(|| (usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
            if best_v > current + 1e-13 * current.abs().max(1.0) {
                chosen[j] = best_i;
                value += best_v - current;
                history.push(value);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    let mut points: Vec<Complex64> = chosen.iter().map(|&i| grid[i]).collect();
    points.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let log_vandermonde = log_vandermonde(&points);
    Ok(FeketeResult { points, log_vandermonde, history, brute_force: false })
}

/// `V_K(z)` for a disk or an interval.
pub fn extremal_1d(k: &CompactSet1D, z: Complex64) -> Result<f64, ClassicalError> {
    match k.kind {
        SetKind::Disk { r } => Ok((z.norm() / r).ln().max(0.0)),
        SetKind::Interval { a, b } => {
            let x = (2.0 * z - (a + b)) / (b - a);
            // √(x-1)·√(x+1) selects the branch with |x + s| ≥ 1.
            let s = (x - 1.0).sqrt() * (x + 1.0).sqrt();
            Ok((x + s).norm().ln().max(0.0))
        }
        SetKind::Cloud => Err(ClassicalError::UnsupportedKind),
    }
}

/// `T_n(x) = cos(n·arccos x)`, continued by `cosh` outside `[-1, 1]`.
pub fn chebyshev_poly(n: u32, x: f64) -> f64 {
    let nf = n as f64;
    if x.abs() <= 1.0 {
        (nf * x.acos()).cos()
    } else {
        let sign = if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
        sign * (nf * x.abs().acosh()).cosh()
    }
}

/// Three-term recurrence `T_{k+1} = 2x T_k - T_{k-1}`.
pub fn chebyshev_recurrence(n: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for _ in 1..n {
        (prev, cur) = (cur, 2.0 * x * cur - prev);
    }
    cur
}

/// Zeros `cos((2j-1)π/(2n))` of `T_n`.
pub fn chebyshev_zeros(n: usize) -> Vec<Complex64> {
    (1..=n).map(|j| Complex64::new(((2 * j - 1) as f64 * PI / (2 * n) as f64).cos(), 0.0)).collect()
}

/// Monic `2^{1-n} T_n` in factored form.
pub fn monic_chebyshev(n: usize) -> FactoredPoly {
    FactoredPoly::from_roots(&chebyshev_zeros(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemniscateReport {
    /// `log‖p‖_K` on the candidate grid.
    pub log_norm: f64,
    /// Sup on a 4× refined grid does not exceed the grid value by more than
    /// `1e-9` relative.
    pub attained_on_grid: bool,
    /// `min (log|p| - log‖p‖_K)` over `∂(K^ε)`; positive means `𝒦_p ⊂ K^ε`.
    pub outer_margin: f64,
    /// `max (log|p| - log‖p‖_K)` over the grid; `≤ 0` by construction.
    pub inner_excess: f64,
    pub pass: bool,
}

fn refined(k: &CompactSet1D) -> Vec<Complex64> {
    match k.kind {
        SetKind::Interval { a, b } => CompactSet1D::interval(a, b, 4 * k.candidates.len()).candidates,
        SetKind::Disk { r } => CompactSet1D::disk(r, 4 * k.candidates.len()).candidates,
        SetKind::Cloud => k.candidates.clone(),
    }
}

/// Checks `K ⊂ {|p| ≤ ‖p‖_K} ⊂ K^ε` on samples.
pub fn lemniscate_sandwich(p: &FactoredPoly, k: &CompactSet1D, eps: f64) -> LemniscateReport {
    let log_norm = k.candidates.iter().map(|&z| p.log_abs(z)).fold(f64::NEG_INFINITY, f64::max);
    let fine = refined(k).iter().map(|&z| p.log_abs(z)).fold(f64::NEG_INFINITY, f64::max);
    let attained_on_grid = fine <= log_norm + 1e-9;
    let outer_margin = k
        .neighbourhood_boundary(eps, 4096)
        .iter()
        .map(|&z| p.log_abs(z) - log_norm)
        .fold(f64::INFINITY, f64::min);
    let inner_excess = k.candidates.iter().map(|&z| p.log_abs(z) - log_norm).fold(f64::NEG_INFINITY, f64::max);
    LemniscateReport {
        log_norm,
        attained_on_grid,
        outer_margin,
        inner_excess,
        pass: attained_on_grid && outer_margin > 0.0 && inner_excess <= 0.0,
    }
}

/// Arcsine distribution function on `[-1, 1]`.
pub fn arcsine_cdf(x: f64) -> f64 {
    (0.5 + x.clamp(-1.0, 1.0).asin() / PI).clamp(0.0, 1.0)
}

/// Kolmogorov distance between the empirical law of `Re ζ` and the
/// arcsine law.
pub fn counting_measure_distance(zeros: &[Complex64]) -> f64 {
    let mut xs: Vec<f64> = zeros.iter().map(|z| z.re).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = arcsine_cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Whether every point is real to within `tol`.
pub fn all_real(points: &[Complex64], tol: f64) -> bool {
    points.iter().all(|z| z.im.abs() <= tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinWalshReport {
    pub n: usize,
    /// `max ((1/n) log(|F|/‖F‖_K) - V_K)` over the samples; `≤ 0` expected.
    pub max_excess: f64,
    /// `V_K(z₀) - (1/n) log(|F(z₀)|/‖F‖_K)` at the probe point.
    pub gap_at_probe: f64,
}

/// Bernstein–Walsh comparison for the Fekete polynomial `Π(z - a_j)`.
pub fn bernstein_walsh(k: &CompactSet1D, points: &[Complex64], samples: &[Complex64], probe: Complex64) -> Result<BernsteinWalshReport, ClassicalError> {
    let f = FactoredPoly::from_roots(points);
    let n = points.len() as f64;
    let fine = refined(k);
    let log_norm = fine.iter().chain(&k.candidates).map(|&z| f.log_abs(z)).fold(f64::NEG_INFINITY, f64::max);
    let mut max_excess = f64::NEG_INFINITY;
    for &z in samples {
        let v = extremal_1d(k, z)?;
        max_excess = max_excess.max((f.log_abs(z) - log_norm) / n - v);
    }
    let gap_at_probe = extremal_1d(k, probe)? - (f.log_abs(probe) - log_norm) / n;
    Ok(BernsteinWalshReport { n: points.len(), max_excess, gap_at_probe })
}
