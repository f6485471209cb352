//! Circled sets in C², their Robin functions, and homogeneous lifts of
//! one-variable approximants.
//!
//! A circled set is determined by the slice `u(t) = ρ_K(1, t)`; the Robin
//! function is `ρ_K(z, w) = log|z| + u(w/z)` and `V_K = max(0, ρ_K)`. A
//! polynomial `p(t) = c·Π(t - t_j)` lifts to `P(z, w) = c·Π(w - t_j z)·z^{n-deg p}`.

use crate::atomizer::{ApproximantPair, Disk, ExceptionalIndex};
use crate::cpoly::{FactoredPoly, LogComplex, Zero};
use crate::potential::PlanarMeasure;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("the Robin function is undefined at the origin")]
    OriginUndefined,
    #[error("polynomial of degree {degree} cannot be lifted to degree {n}")]
    DegreeExceeded { degree: usize, n: usize },
    #[error("pair degrees differ: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("sample matrix has numerical rank {rank} < {unknowns}")]
    IllConditioned { rank: usize, unknowns: usize },
    #[error("need at least {needed} samples on K, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Ball,
    Bidisk,
    Ellipsoid { c: f64 },
    CustomGrid,
}

/// A circled set described by its slice.
#[derive(Debug, Clone)]
pub struct CircledSetModel {
    pub kind: ModelKind,
    /// `lim (u(t) - log|t|)`, i.e. `ρ_K(0, 1)`.
    pub tail_const: f64,
    /// `u(0)` of the raw slice; the lifted polynomials absorb it.
    pub slice_offset: f64,
    /// Slice measure for custom models; `u - u(0)` is its potential.
    pub measure: Option<PlanarMeasure>,
}

impl CircledSetModel {
    pub fn ball() -> Self {
        Self { kind: ModelKind::Ball, tail_const: 0.0, slice_offset: 0.0, measure: None }
    }

    pub fn bidisk() -> Self {
        Self { kind: ModelKind::Bidisk, tail_const: 0.0, slice_offset: 0.0, measure: None }
    }

    /// `{|z|² + c|w|² ≤ 1}`.
    pub fn ellipsoid(c: f64) -> Self {
        Self { kind: ModelKind::Ellipsoid { c }, tail_const: 0.5 * c.ln(), slice_offset: 0.0, measure: None }
    }

    /// Slice `u = V_μ + offset` for an admissible measure `μ`.
    pub fn custom(mu: PlanarMeasure, offset: f64) -> Self {
        let tail_const = offset + mu.limit_constant();
        Self { kind: ModelKind::CustomGrid, tail_const, slice_offset: offset, measure: Some(mu) }
    }

    /// Parses `ball`, `bidisk`, `ellipsoid:c` (with optional `builtin:`).
    pub fn builtin(name: &str) -> Option<Self> {
        let name = name.strip_prefix("builtin:").unwrap_or(name);
        match name {
            "ball" => Some(Self::ball()),
            "bidisk" => Some(Self::bidisk()),
            _ => name.strip_prefix("ellipsoid:").and_then(|c| c.parse().ok()).filter(|c: &f64| *c > 0.0).map(Self::ellipsoid),
        }
    }

    /// `u(t) = ρ_K(1, t)`.
    pub fn slice(&self, t: Complex64) -> f64 {
        let r2 = t.norm_sqr();
        match self.kind {
            ModelKind::Ball => 0.5 * r2.ln_1p(),
            ModelKind::Bidisk => 0.5 * r2.ln().max(0.0),
            ModelKind::Ellipsoid { c } => 0.5 * (c * r2).ln_1p(),
            ModelKind::CustomGrid => {
                self.slice_offset + self.measure.as_ref().expect("custom model carries its measure").potential(t)
            }
        }
    }
}

/// `ρ_K(z, w)`, evaluated through the larger coordinate.
pub fn robin_eval(m: &CircledSetModel, z: Complex64, w: Complex64) -> Result<f64, LiftError> {
    let (az, aw) = (z.norm(), w.norm());
    if az == 0.0 && aw == 0.0 {
        return Err(LiftError::OriginUndefined);
    }
    Ok(match m.kind {
        ModelKind::Ball => 0.5 * (az * az + aw * aw).ln(),
        ModelKind::Bidisk => az.ln().max(aw.ln()),
        ModelKind::Ellipsoid { c } => 0.5 * (az * az + c * aw * aw).ln(),
        ModelKind::CustomGrid => {
            if az >= aw {
                az.ln() + m.slice(w / z)
            } else if az == 0.0 {
                aw.ln() + m.tail_const
            } else {
                // ρ(z, w) = log|w| + ρ(z/w, 1), and ρ(s, 1) = log|s| + u(1/s).
                let s = z / w;
                aw.ln() + s.norm().ln() + m.slice(s.inv())
            }
        }
    })
}

/// `V_K = max(0, ρ_K)`, with `V_K(0, 0) = 0`.
pub fn extremal_eval(m: &CircledSetModel, z: Complex64, w: Complex64) -> f64 {
    robin_eval(m, z, w).map_or(0.0, |r| r.max(0.0))
}

/// `c·Π(w - t_j z)^{m_j}·z^{n - Σm_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousPoly {
    #[serde(flatten)]
    pub slice: FactoredPoly,
    pub n: usize,
}

impl HomogeneousPoly {
    pub fn deficit(&self) -> usize {
        self.n - self.slice.degree()
    }

    /// `log P(z, w)` with the phase accumulated factor by factor.
    pub fn eval_log(&self, z: Complex64, w: Complex64) -> LogComplex {
        let mut log_mod = self.slice.log_constant;
        let mut phase = self.slice.phase_constant;
        for zero in &self.slice.zeros {
            let d = w - zero.at * z;
            let m = zero.mult as f64;
            log_mod += m * d.norm().ln();
            phase += m * d.arg();
        }
        let d = self.deficit() as f64;
        if d > 0.0 {
            log_mod += d * z.norm().ln();
            phase += d * z.arg();
        }
        LogComplex { log_mod, phase: phase.rem_euclid(TAU) }
    }

    pub fn log_abs(&self, z: Complex64, w: Complex64) -> f64 {
        if z == Complex64::new(0.0, 0.0) {
            return self.eval_log(z, w).log_mod;
        }
        // log|P(z, w)| = n·log|z| + log|p(w/z)| uses the blocked product.
        self.n as f64 * z.norm().ln() + self.slice.log_abs(w / z)
    }

    pub fn eval(&self, z: Complex64, w: Complex64) -> Complex64 {
        self.eval_log(z, w).to_complex()
    }

    /// Gradient `(∂P/∂z, ∂P/∂w) / P`.
    pub fn log_gradient(&self, z: Complex64, w: Complex64) -> (Complex64, Complex64) {
        let mut gz = Complex64::new(0.0, 0.0);
        let mut gw = Complex64::new(0.0, 0.0);
        for zero in &self.slice.zeros {
            let inv = zero.mult as f64 / (w - zero.at * z);
            gz -= zero.at * inv;
            gw += inv;
        }
        let d = self.deficit();
        if d > 0 {
            gz += d as f64 / z;
        }
        (gz, gw)
    }
}

/// Lifts `p` to a homogeneous polynomial of degree `n`.
pub fn homogenize(p: &FactoredPoly, n: usize) -> Result<HomogeneousPoly, LiftError> {
    let degree = p.degree();
    if degree > n {
        return Err(LiftError::DegreeExceeded { degree, n });
    }
    Ok(HomogeneousPoly { slice: p.clone(), n })
}

/// The monomial `z^a w^b` as a homogeneous polynomial.
pub fn monomial(a: usize, b: usize) -> HomogeneousPoly {
    let zeros = if b > 0 { vec![Zero { at: Complex64::new(0.0, 0.0), mult: b as u32 }] } else { Vec::new() };
    HomogeneousPoly { slice: FactoredPoly::new(zeros, 0.0, 0.0), n: a + b }
}

/// Lifted pair together with the cones over the one-variable exceptional
/// disks, where only the upper bound is claimed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPair {
    #[serde(rename = "P")]
    pub p: HomogeneousPoly,
    #[serde(rename = "Q")]
    pub q: HomogeneousPoly,
    pub n: usize,
    /// Disks in the slice variable `t = w/z`.
    pub exceptional: Vec<Disk>,
    /// Certified one-variable error, when known.
    pub epsilon: Option<f64>,
}

impl LiftedPair {
    pub fn new(p: HomogeneousPoly, q: HomogeneousPoly) -> Result<Self, LiftError> {
        if p.n != q.n {
            return Err(LiftError::DegreeMismatch(p.n, q.n));
        }
        Ok(Self { n: p.n, p, q, exceptional: Vec::new(), epsilon: None })
    }

    /// The exact bidisk pair `(zⁿ, wⁿ)`.
    pub fn bidisk(n: usize) -> Self {
        Self::new(monomial(n, 0), monomial(0, n)).expect("equal degrees")
    }

    /// Lifts an atomized pair for `model`, absorbing the slice offset `u(0)`
    /// into both constants.
    pub fn from_pair(pair: &ApproximantPair, model: &CircledSetModel) -> Result<Self, LiftError> {
        let n = pair.degree();
        let mut p = homogenize(&pair.p.poly, n)?;
        let mut q = homogenize(&pair.q.poly, n)?;
        p.slice.log_constant += n as f64 * model.slice_offset;
        q.slice.log_constant += n as f64 * model.slice_offset;
        let exceptional = pair.p.exceptional.iter().chain(&pair.q.exceptional).copied().collect();
        Ok(Self { n, p, q, exceptional, epsilon: Some(pair.certificate.sup_error_off_exceptional) })
    }

    /// `max((1/n)log|P|, (1/n)log|Q|)`.
    pub fn max_form(&self, z: Complex64, w: Complex64) -> f64 {
        let nf = self.n as f64;
        (self.p.log_abs(z, w) / nf).max(self.q.log_abs(z, w) / nf)
    }
}

/// `ũ_n = max((1/n)log|P|, (1/n)log|Q|, 0)`.
pub fn u_tilde_eval(pair: &LiftedPair, z: Complex64, w: Complex64) -> f64 {
    pair.max_form(z, w).max(0.0)
}

/// `U_n = max((1/n)log|P - 1|, (1/n)log|Q - 1|)`.
///
/// Both terms come from the log-polar form of `P` and `Q`, so neither a huge
/// `|P|` nor one close to 1 loses accuracy; see [`LogComplex::log_abs_minus_one`].
pub fn u_n_eval(pair: &LiftedPair, z: Complex64, w: Complex64) -> f64 {
    let nf = pair.n as f64;
    let a = pair.p.eval_log(z, w).log_abs_minus_one();
    let b = pair.q.eval_log(z, w).log_abs_minus_one();
    a.max(b) / nf
}

/// Product grid of directions on the unit sphere and radial scales.
///
/// By homogeneity every quantity here is invariant under `(z, w) ↦ e^{is}(z, w)`,
/// so directions are `(cos θ, sin θ·e^{iβ})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichGrid {
    pub polar: usize,
    pub azimuthal: usize,
    pub radii: Vec<f64>,
}

impl Default for SandwichGrid {
    fn default() -> Self {
        Self { polar: 41, azimuthal: 50, radii: vec![0.25, 0.5, 1.0, 2.0, 4.0] }
    }
}

impl SandwichGrid {
    pub fn points(&self) -> Vec<(Complex64, Complex64)> {
        let mut out = Vec::with_capacity(self.polar * self.azimuthal * self.radii.len());
        for &r in &self.radii {
            for i in 0..self.polar {
                let theta = 0.5 * PI * i as f64 / (self.polar - 1).max(1) as f64;
                for j in 0..self.azimuthal {
                    let beta = TAU * j as f64 / self.azimuthal as f64;
                    // At θ = π/2 the first coordinate is exactly zero.
                    let z = if i + 1 == self.polar { 0.0 } else { r * theta.cos() };
                    out.push((Complex64::new(z, 0.0), Complex64::from_polar(r * theta.sin(), beta)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub n_samples: usize,
    pub n_exceptional: usize,
    pub epsilon: f64,
    pub upper_slack: f64,
    /// `max (max_form - ρ_K)` over all samples.
    pub max_upper_excess: f64,
    /// `max (ρ_K - max_form)` over samples outside the exceptional cones.
    pub max_lower_deficit: f64,
    /// `max |max(0, max_form) - V_K|` outside the exceptional cones.
    pub max_extremal_error: f64,
    pub worst_upper_point: (Complex64, Complex64),
    pub worst_lower_point: (Complex64, Complex64),
    pub upper_ok: bool,
    pub lower_ok: bool,
    pub extremal_ok: bool,
    pub pass: bool,
}

/// Verifies `ρ_K - ε ≤ max_form ≤ ρ_K + 1e-9` and `|max(0, max_form) - V_K| ≤ ε`.
pub fn sandwich_check(m: &CircledSetModel, pair: &LiftedPair, eps: f64, grid: &SandwichGrid) -> SandwichReport {
    const UPPER_SLACK: f64 = 1e-9;
    // Rounding in log|z| + log|w|-type sums; keeps ε = 0 meaningful.
    const ROUNDOFF: f64 = 1e-12;
    let points = grid.points();
    let index = ExceptionalIndex::new(pair.exceptional.iter());
    let rows: Vec<(f64, f64, bool)> = points
        .par_iter()
        .map(|&(z, w)| {
            let rho = robin_eval(m, z, w).expect("grid avoids the origin");
            let form = pair.max_form(z, w);
            let exceptional = z != Complex64::new(0.0, 0.0) && index.contains(w / z);
            (rho, form, exceptional)
        })
        .collect();
    let mut rep = SandwichReport {
        n_samples: points.len(),
        n_exceptional: 0,
        epsilon: eps,
        upper_slack: UPPER_SLACK,
        max_upper_excess: f64::NEG_INFINITY,
        max_lower_deficit: f64::NEG_INFINITY,
        max_extremal_error: 0.0,
        worst_upper_point: points[0],
        worst_lower_point: points[0],
        upper_ok: false,
        lower_ok: false,
        extremal_ok: false,
        pass: false,
    };
    for (&pt, &(rho, form, exceptional)) in points.iter().zip(&rows) {
        if form - rho > rep.max_upper_excess {
            rep.max_upper_excess = form - rho;
            rep.worst_upper_point = pt;
        }
        if exceptional {
            rep.n_exceptional += 1;
            continue;
        }
        if rho - form > rep.max_lower_deficit {
            rep.max_lower_deficit = rho - form;
            rep.worst_lower_point = pt;
        }
        rep.max_extremal_error = rep.max_extremal_error.max((form.max(0.0) - rho.max(0.0)).abs());
    }
    rep.upper_ok = rep.max_upper_excess <= UPPER_SLACK;
    rep.lower_ok = rep.max_lower_deficit <= eps + ROUNDOFF;
    rep.extremal_ok = rep.max_extremal_error <= eps + ROUNDOFF;
    rep.pass = rep.upper_ok && rep.lower_ok && rep.extremal_ok;
    rep
}

/// Lower-degree correction found by [`chebyshev_complete`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevCompletion {
    /// Coefficients of `z^i w^j`, `i + j < n`, in [`lower_monomials`] order.
    pub coefficients: Vec<((usize, usize), Complex64)>,
    /// `max_s |H(s) + R(s)|`.
    pub sup_norm: f64,
    /// `max_s |H(s)|`.
    pub uncorrected_sup: f64,
    /// Certified lower bound on the discrete minimax value.
    pub lower_bound: f64,
    /// `(sup_norm - lower_bound) / sup_norm`.
    pub relative_gap: f64,
    pub iterations: usize,
}

impl ChebyshevCompletion {
    pub fn eval_correction(&self, z: Complex64, w: Complex64) -> Complex64 {
        self.coefficients.iter().map(|&((i, j), c)| c * z.powu(i as u32) * w.powu(j as u32)).sum()
    }
}

/// Exponents `(i, j)` with `i + j ≤ n - 1`, by total degree then `i`.
pub fn lower_monomials(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|d| (0..=d).rev().map(move |i| (i, d - i))).collect()
}

/// Discrete complex minimax `min_R max_s |H(s) + R(s)|` over polynomials of
/// degree `< n`, by Lawson's iteratively reweighted least squares.
///
/// Every Lawson iterate yields the lower bound `(Σ w_s |r_s|²)^{1/2}` for
/// weights summing to one, which certifies the gap.
pub fn chebyshev_complete(
    h_values: &[Complex64],
    samples: &[(Complex64, Complex64)],
    n: usize,
    gap_tol: f64,
    max_iter: usize,
) -> Result<ChebyshevCompletion, LiftError> {
    let monos = lower_monomials(n);
    let uncorrected_sup = h_values.iter().map(|h| h.norm()).fold(0.0, f64::max);
    if monos.is_empty() {
        return Ok(ChebyshevCompletion {
            coefficients: Vec::new(),
            sup_norm: uncorrected_sup,
            uncorrected_sup,
            lower_bound: uncorrected_sup,
            relative_gap: 0.0,
            iterations: 0,
        });
    }
    let needed = 10 * 2 * monos.len();
    if samples.len() < needed {
        return Err(LiftError::TooFewSamples { needed, got: samples.len() });
    }
    let ns = samples.len();
    let phi = DMatrix::from_fn(ns, monos.len(), |s, m| {
        let (z, w) = samples[s];
        z.powu(monos[m].0 as u32) * w.powu(monos[m].1 as u32)
    });
    let h = DVector::from_column_slice(h_values);
    {
        let sv = phi.clone().svd(false, false).singular_values;
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * top).count();
        if rank < monos.len() {
            return Err(LiftError::IllConditioned { rank, unknowns: monos.len() });
        }
    }
    let mut weights = vec![1.0 / ns as f64; ns];
    let mut best_c = DVector::zeros(monos.len());
    let mut best_sup = uncorrected_sup;
    let mut lower: f64 = 0.0;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let sq: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let a = DMatrix::from_fn(ns, monos.len(), |s, m| phi[(s, m)] * sq[s]);
        let b = DVector::from_fn(ns, |s, _| -h[s] * sq[s]);
        let c = a.svd(true, true).solve(&b, 1e-14).expect("U and V were requested");
        let r = &phi * &c + &h;
        let mods: Vec<f64> = r.iter().map(|v| v.norm()).collect();
        let weighted: f64 = weights.iter().zip(&mods).map(|(w, m)| w * m * m).sum();
        lower = lower.max(weighted.sqrt());
        let sup = mods.iter().copied().fold(0.0, f64::max);
        if sup < best_sup {
            best_sup = sup;
            best_c = c;
        }
        if best_sup - lower <= gap_tol * best_sup {
            break;
        }
        let total: f64 = weights.iter().zip(&mods).map(|(w, m)| w * m).sum();
        if total <= 0.0 {
            break;
        }
        for (w, m) in weights.iter_mut().zip(&mods) {
            *w *= m / total;
        }
    }
    Ok(ChebyshevCompletion {
        coefficients: monos.into_iter().zip(best_c.iter().copied()).collect(),
        sup_norm: best_sup,
        uncorrected_sup,
        lower_bound: lower,
        relative_gap: if best_sup > 0.0 { (best_sup - lower) / best_sup } else { 0.0 },
        iterations,
    })
}
