//! Complex polynomials in one variable.
//!
//! Everything potential-theoretic is evaluated in factored form,
//! `log|c| + Σ m_j log|z - t_j|`, which stays accurate at degrees in the
//! thousands. Coefficient form exists only so that roots can be found, and
//! [`expand`] keeps it representable by rescaling with powers of two.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("coefficient rescaling overflowed while expanding a degree-{degree} polynomial")]
    Overflow { degree: usize },
    #[error("degree {0} exceeds the expansion limit of 2048")]
    DegreeTooLarge(usize),
    #[error("root finding needs a polynomial of degree at least 1")]
    ConstantPolynomial,
    #[error("simultaneous iteration did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize, best: Vec<RootEstimate> },
}

/// A zero with its multiplicity. Serialized as `[re, im, mult]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, u32)", into = "(f64, f64, u32)")]
pub struct Zero {
    pub at: Complex64,
    pub mult: u32,
}

impl Zero {
    pub fn simple(at: Complex64) -> Self {
        Self { at, mult: 1 }
    }
}

impl From<(f64, f64, u32)> for Zero {
    fn from((re, im, mult): (f64, f64, u32)) -> Self {
        Self { at: Complex64::new(re, im), mult }
    }
}

impl From<Zero> for (f64, f64, u32) {
    fn from(z: Zero) -> Self {
        (z.at.re, z.at.im, z.mult)
    }
}

/// A complex number stored as `exp(log_mod + i·phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogComplex {
    pub log_mod: f64,
    pub phase: f64,
}

impl LogComplex {
    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.log_mod.exp(), self.phase)
    }

    /// `log|self - 1|`, exact in the sense that no intermediate overflows and
    /// there is no cancellation beyond what `log_mod` and `phase` carry.
    pub fn log_abs_minus_one(self) -> f64 {
        let l = self.log_mod;
        if l == f64::NEG_INFINITY {
            return 0.0;
        }
        let s = (0.5 * self.phase).sin();
        if l > 0.0 {
            let x = (-l).exp();
            let d = (-l).exp_m1();
            l + 0.5 * (d * d + 4.0 * x * s * s).ln()
        } else {
            let y = l.exp();
            let d = l.exp_m1();
            0.5 * (d * d + 4.0 * y * s * s).ln()
        }
    }
}

/// `c · Π (t - t_j)^{m_j}` with `c = exp(log_constant + i·phase_constant)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredPoly {
    pub zeros: Vec<Zero>,
    pub log_constant: f64,
    #[serde(default)]
    pub phase_constant: f64,
}

impl FactoredPoly {
    pub fn new(zeros: Vec<Zero>, log_constant: f64, phase_constant: f64) -> Self {
        Self { zeros, log_constant, phase_constant }
    }

    pub fn from_roots(roots: &[Complex64]) -> Self {
        Self::new(roots.iter().copied().map(Zero::simple).collect(), 0.0, 0.0)
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(Vec::new(), c.norm().ln(), c.arg())
    }

    pub fn degree(&self) -> usize {
        self.zeros.iter().map(|z| z.mult as usize).sum()
    }

    /// `log|f(z)|`; `-inf` exactly at a zero.
    ///
    /// Squared distances are multiplied in blocks of eight before taking a
    /// logarithm; with distances in `[1e-19, 1e18]` no block can leave the
    /// normal range of f64. Blocks falling outside `[1e-280, 1e280]` are
    /// recomputed factor by factor.
    pub fn log_abs(&self, z: Complex64) -> f64 {
        let mut acc = 0.0;
        for block in self.zeros.chunks(8) {
            let mut prod = 1.0;
            let mut simple = true;
            for zero in block {
                let d = (z - zero.at).norm_sqr();
                if zero.mult == 1 {
                    prod *= d;
                } else {
                    simple = false;
                    break;
                }
            }
            if simple && prod > 1e-280 && prod < 1e280 {
                acc += prod.ln();
            } else {
                for zero in block {
                    acc += zero.mult as f64 * (z - zero.at).norm_sqr().ln();
                }
            }
        }
        self.log_constant + 0.5 * acc
    }

    pub fn eval_log(&self, z: Complex64) -> LogComplex {
        let mut log_mod = self.log_constant;
        let mut phase = self.phase_constant;
        for zero in &self.zeros {
            let d = z - zero.at;
            let m = zero.mult as f64;
            log_mod += m * d.norm().ln();
            phase += m * d.arg();
        }
        LogComplex { log_mod, phase }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.eval_log(z).to_complex()
    }

    /// `f'(z)/f(z) = Σ m_j / (z - t_j)`.
    pub fn log_derivative(&self, z: Complex64) -> Complex64 {
        self.zeros.iter().map(|zero| zero.mult as f64 / (z - zero.at)).sum()
    }

    /// Leading coefficient, i.e. the constant `c`.
    pub fn leading(&self) -> LogComplex {
        LogComplex { log_mod: self.log_constant, phase: self.phase_constant }
    }
}

/// Ascending coefficients in a rescaled variable: the represented polynomial
/// is `2^log2_scale · Σ coefficients[j] u^j` with `t = 2^log2_var_scale · u`.
///
/// The variable scaling matters once zeros spread over many orders of
/// magnitude; without it the coefficient range of a degree-200 product with
/// zeros of modulus ~10³ leaves the exponent range of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffPoly {
    pub coefficients: Vec<Complex64>,
    pub log2_scale: i64,
    #[serde(default)]
    pub log2_var_scale: i64,
}

impl CoeffPoly {
    /// Builds from unscaled ascending coefficients, normalizing so that the
    /// largest stored modulus lies in `[1, 2)` and dropping negligible
    /// top-degree terms (below `1e-14` of the largest).
    pub fn from_coefficients(coefficients: Vec<Complex64>) -> Self {
        let mut p = Self { coefficients, log2_scale: 0, log2_var_scale: 0 };
        p.normalize();
        p.truncate(1e-14);
        p
    }

    pub fn zero() -> Self {
        Self { coefficients: Vec::new(), log2_scale: 0, log2_var_scale: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coefficients.len().checked_sub(1)
    }

    pub fn max_abs(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn normalize(&mut self) {
        let m = self.max_abs();
        if m == 0.0 || !m.is_finite() {
            return;
        }
        let e = m.log2().floor() as i32;
        let f = 2f64.powi(-e);
        for c in &mut self.coefficients {
            *c *= f;
        }
        self.log2_scale += e as i64;
    }

    fn truncate(&mut self, rel: f64) {
        let m = self.max_abs();
        while let Some(last) = self.coefficients.last() {
            if last.norm() <= rel * m || m == 0.0 {
                self.coefficients.pop();
            } else {
                break;
            }
        }
    }

    /// Value of the stored (scaled) polynomial; multiply by `2^log2_scale`
    /// for the true value.
    pub fn eval_scaled(&self, z: Complex64) -> Complex64 {
        self.coefficients
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// Plain coefficients of `p(t)`; may over- or underflow for wide zero sets.
    pub fn coefficients_in_t(&self) -> Vec<Complex64> {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let e = self.log2_scale - self.log2_var_scale * j as i64;
                c * 2f64.powi(e as i32)
            })
            .collect()
    }

    pub fn var_scale(&self) -> f64 {
        2f64.powi(self.log2_var_scale as i32)
    }

    pub fn eval(&self, t: Complex64) -> Complex64 {
        self.eval_scaled(t / self.var_scale()) * 2f64.powi(self.log2_scale as i32)
    }

    /// `|p(t)| / (max|c_j| · max(1,|u|)^deg)` with `u = t / 2^log2_var_scale`,
    /// i.e. the backward error of the stored coefficients.
    pub fn normalized_residual(&self, t: Complex64) -> f64 {
        self.normalized_residual_u(t / self.var_scale())
    }

    fn normalized_residual_u(&self, r: Complex64) -> f64 {
        let deg = self.degree().unwrap_or(0) as f64;
        let m = self.max_abs();
        if m == 0.0 {
            return 0.0;
        }
        let big = r.norm().max(1.0);
        // Evaluate in the reversed variable when |r| > 1 to avoid overflow.
        let v = if r.norm() <= 1.0 {
            self.eval_scaled(r).norm()
        } else {
            let inv = 1.0 / r;
            let rev = self
                .coefficients
                .iter()
                .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * inv + c);
            // p(r) = r^deg · rev(1/r), and we divide by |r|^deg.
            return rev.norm() / m * (r.norm() / big).powf(deg);
        };
        v / m / big.powf(deg)
    }
}

/// Incremental convolution with power-of-two rescaling after every factor.
pub fn expand(f: &FactoredPoly) -> Result<CoeffPoly, PolyError> {
    let degree = f.degree();
    if degree > 2048 {
        return Err(PolyError::DegreeTooLarge(degree));
    }
    // Variable scale: power of two nearest the mean log-modulus of the
    // nonzero zeros.
    let (sum, count) = f
        .zeros
        .iter()
        .filter(|z| z.at.norm() > 0.0)
        .fold((0.0, 0.0), |(s, c), z| (s + z.mult as f64 * z.at.norm().log2(), c + z.mult as f64));
    let log2_var_scale = if count > 0.0 { (sum / count).round() as i64 } else { 0 };
    let sigma = 2f64.powi(log2_var_scale as i32);
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    // ∏(t - t_j) = σ^N ∏(u - t_j/σ)
    let mut log2_scale: i64 = log2_var_scale * degree as i64;
    for zero in &f.zeros {
        let at = zero.at / sigma;
        for _ in 0..zero.mult {
            let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
            for (j, &c) in coeffs.iter().enumerate() {
                next[j + 1] += c;
                next[j] -= c * at;
            }
            let m = next.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if !m.is_finite() || m == 0.0 {
                return Err(PolyError::Overflow { degree });
            }
            let e = m.log2().floor() as i32;
            let s = 2f64.powi(-e);
            for c in &mut next {
                *c *= s;
            }
            log2_scale += e as i64;
            coeffs = next;
        }
    }
    let log2_c = f.log_constant / LN_2;
    let whole = log2_c.floor();
    let frac = Complex64::from_polar((log2_c - whole).exp2(), f.phase_constant);
    for c in &mut coeffs {
        *c *= frac;
    }
    if !whole.is_finite() || whole.abs() > 1e15 {
        return Err(PolyError::Overflow { degree });
    }
    let mut p = CoeffPoly { coefficients: coeffs, log2_scale: log2_scale + whole as i64, log2_var_scale };
    p.normalize();
    Ok(p)
}

/// Coefficientwise `a - b` on a common scale. Leading terms that cancel to
/// below `1e-12` of the larger operand are dropped; a full cancellation
/// yields the zero polynomial.
pub fn subtract(a: &CoeffPoly, b: &CoeffPoly) -> CoeffPoly {
    if a.log2_var_scale != b.log2_var_scale && !a.is_zero() && !b.is_zero() {
        let v = a.log2_var_scale.max(b.log2_var_scale);
        return subtract(&rescale_variable(a, v), &rescale_variable(b, v));
    }
    if b.is_zero() {
        return a.clone();
    }
    if a.is_zero() {
        let mut neg = b.clone();
        for c in &mut neg.coefficients {
            *c = -*c;
        }
        return neg;
    }
    let e = a.log2_scale.max(b.log2_scale);
    let fa = 2f64.powi((a.log2_scale - e) as i32);
    let fb = 2f64.powi((b.log2_scale - e) as i32);
    let n = a.coefficients.len().max(b.coefficients.len());
    let ref_mag = (a.max_abs() * fa).max(b.max_abs() * fb);
    let mut out: Vec<Complex64> = (0..n)
        .map(|j| {
            let ca = a.coefficients.get(j).copied().unwrap_or_default() * fa;
            let cb = b.coefficients.get(j).copied().unwrap_or_default() * fb;
            ca - cb
        })
        .collect();
    while let Some(last) = out.last() {
        if last.norm() <= 1e-12 * ref_mag {
            out.pop();
        } else {
            break;
        }
    }
    let mut p = CoeffPoly { coefficients: out, log2_scale: e, log2_var_scale: a.log2_var_scale };
    p.normalize();
    p
}

/// Re-expresses `p` in the variable `t / 2^log2_var_scale`.
pub fn rescale_variable(p: &CoeffPoly, log2_var_scale: i64) -> CoeffPoly {
    let shift = (log2_var_scale - p.log2_var_scale) as i32;
    let coefficients = p
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, &c)| c * 2f64.powi(shift * j as i32))
        .collect();
    let mut out = CoeffPoly { coefficients, log2_scale: p.log2_scale, log2_var_scale };
    out.normalize();
    out
}

/// A root estimate with its residual certificate and clustered multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootEstimate {
    pub at: Complex64,
    pub residual: f64,
    pub mult: u32,
}

/// Something a simultaneous root iteration can drive: it must report its
/// degree and the Newton correction `f/f'` at a point.
pub trait NewtonTarget {
    fn degree(&self) -> usize;
    /// `f(z)/f'(z)`, or `None` when `z` is an exact root.
    fn newton_ratio(&self, z: Complex64) -> Option<Complex64>;
    /// Scale-free residual used for certificates and stopping.
    fn residual(&self, z: Complex64) -> f64;
}

/// Operates in the stored variable `u`; callers rescale by [`CoeffPoly::var_scale`].
impl NewtonTarget for CoeffPoly {
    fn degree(&self) -> usize {
        CoeffPoly::degree(self).unwrap_or(0)
    }

    fn newton_ratio(&self, z: Complex64) -> Option<Complex64> {
        let c = &self.coefficients;
        let n = c.len() - 1;
        if z.norm() <= 1.0 {
            let mut p = Complex64::new(0.0, 0.0);
            let mut dp = Complex64::new(0.0, 0.0);
            for &cj in c.iter().rev() {
                dp = dp * z + p;
                p = p * z + cj;
            }
            if p == Complex64::new(0.0, 0.0) {
                return None;
            }
            Some(p / dp)
        } else {
            // p(z) = z^n r(1/z) with r the reversed polynomial.
            let y = 1.0 / z;
            let mut r = Complex64::new(0.0, 0.0);
            let mut dr = Complex64::new(0.0, 0.0);
            for &cj in c.iter() {
                dr = dr * y + r;
                r = r * y + cj;
            }
            if r == Complex64::new(0.0, 0.0) {
                return None;
            }
            // p'/p = n/z - y^2 r'(y)/r(y)
            let logd = n as f64 * y - y * y * dr / r;
            Some(1.0 / logd)
        }
    }

    fn residual(&self, z: Complex64) -> f64 {
        self.normalized_residual_u(z)
    }
}

/// `p - q` for two factored polynomials, evaluated without expansion.
///
/// Both operands are evaluated in log form and rescaled by the larger
/// modulus before subtracting, so the only cancellation left is the one
/// intrinsic to the root problem.
pub struct FactoredDifference<'a> {
    pub p: &'a FactoredPoly,
    pub q: &'a FactoredPoly,
    pub degree: usize,
}

impl FactoredDifference<'_> {
    fn scaled(&self, z: Complex64) -> (Complex64, Complex64, Complex64, Complex64) {
        let lp = self.p.eval_log(z);
        let lq = self.q.eval_log(z);
        let s = lp.log_mod.max(lq.log_mod);
        let pv = Complex64::from_polar((lp.log_mod - s).exp(), lp.phase);
        let qv = Complex64::from_polar((lq.log_mod - s).exp(), lq.phase);
        (pv, qv, self.p.log_derivative(z), self.q.log_derivative(z))
    }
}

impl NewtonTarget for FactoredDifference<'_> {
    fn degree(&self) -> usize {
        self.degree
    }

    fn newton_ratio(&self, z: Complex64) -> Option<Complex64> {
        let (pv, qv, sp, sq) = self.scaled(z);
        let f = pv - qv;
        if f == Complex64::new(0.0, 0.0) {
            return None;
        }
        let mut df = Complex64::new(0.0, 0.0);
        if pv != Complex64::new(0.0, 0.0) {
            df += pv * sp;
        }
        if qv != Complex64::new(0.0, 0.0) {
            df -= qv * sq;
        }
        if !df.is_finite() {
            return None;
        }
        Some(f / df)
    }

    fn residual(&self, z: Complex64) -> f64 {
        let (pv, qv, _, _) = self.scaled(z);
        (pv - qv).norm() / (pv.norm() + qv.norm())
    }
}

/// Initial guesses from the upper convex hull of `(j, log|c_j|)`: each hull
/// edge contributes as many points as its width, on a circle whose radius
/// matches the edge slope.
pub fn newton_polygon_guesses(c: &CoeffPoly) -> Vec<Complex64> {
    let n = c.coefficients.len() - 1;
    let logs: Vec<f64> = c
        .coefficients
        .iter()
        .map(|v| if v.norm() > 0.0 { v.norm().ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut hull: Vec<usize> = Vec::new();
    for j in 0..=n {
        if logs[j] == f64::NEG_INFINITY {
            continue;
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Keep b only if it lies strictly above segment a-j.
            let cross = (b - a) as f64 * (logs[j] - logs[a]) - (j - a) as f64 * (logs[b] - logs[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    let mut guesses = Vec::with_capacity(n);
    let sigma = 0.7;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let width = b - a;
        let radius = ((logs[a] - logs[b]) / width as f64).exp();
        for i in 0..width {
            let angle = 2.0 * PI * i as f64 / width as f64 + 2.0 * PI * a as f64 / n as f64 + sigma;
            guesses.push(Complex64::from_polar(radius, angle));
        }
    }
    while guesses.len() < n {
        let i = guesses.len();
        guesses.push(Complex64::from_polar(1.0, 2.0 * PI * i as f64 / n as f64 + sigma));
    }
    guesses
}

/// Aberth-Ehrlich iteration from the supplied starting points. Returns the
/// final iterates and whether every one of them converged.
pub fn aberth<T: NewtonTarget + Sync>(
    target: &T,
    mut z: Vec<Complex64>,
    max_sweeps: usize,
) -> (Vec<Complex64>, bool, usize) {
    let n = z.len();
    let mut done = vec![false; n];
    for sweep in 0..max_sweeps {
        let mut all = true;
        for i in 0..n {
            if done[i] {
                continue;
            }
            let Some(ratio) = target.newton_ratio(z[i]) else {
                done[i] = true;
                continue;
            };
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    let d = z[i] - z[j];
                    if d != Complex64::new(0.0, 0.0) {
                        s += 1.0 / d;
                    }
                }
            }
            let denom = Complex64::new(1.0, 0.0) - ratio * s;
            let step = if denom.is_finite() && denom.norm() > 0.0 { ratio / denom } else { ratio };
            if !step.is_finite() {
                // Nudge off a pole of the correction.
                let bump = Complex64::new(1e-8, 1e-8) * (1.0 + z[i].norm());
                z[i] += bump;
                all = false;
                continue;
            }
            z[i] -= step;
            if step.norm() <= 4.0 * f64::EPSILON * z[i].norm().max(1e-300) {
                done[i] = true;
            } else {
                all = false;
            }
        }
        if all {
            return (z, true, sweep + 1);
        }
    }
    let ok = done.iter().all(|&d| d);
    (z, ok, max_sweeps)
}

/// Newton steps that are kept only while they reduce the residual.
pub fn polish<T: NewtonTarget>(target: &T, z: Complex64, steps: usize) -> Complex64 {
    let mut best = z;
    let mut best_res = target.residual(z);
    let mut cur = z;
    for _ in 0..steps {
        let Some(r) = target.newton_ratio(cur) else {
            return cur;
        };
        cur -= r;
        let res = target.residual(cur);
        if res < best_res {
            best = cur;
            best_res = res;
        } else {
            break;
        }
    }
    best
}

/// Merges estimates closer than `threshold` into one root with summed
/// multiplicity, placed at the arithmetic mean of the cluster.
pub fn cluster(roots: &[Complex64], threshold: f64) -> Vec<(Complex64, u32)> {
    let mut out: Vec<(Complex64, u32, Complex64)> = Vec::new();
    for &r in roots {
        if let Some(entry) = out.iter_mut().find(|(c, _, _)| (*c - r).norm() < threshold) {
            entry.1 += 1;
            entry.2 += r;
            entry.0 = entry.2 / entry.1 as f64;
        } else {
            out.push((r, 1, r));
        }
    }
    out.into_iter().map(|(c, m, _)| (c, m)).collect()
}

/// All roots of `c` with normalized-residual certificates.
pub fn roots(c: &CoeffPoly, tol: f64) -> Result<Vec<RootEstimate>, PolyError> {
    let deg = c.degree().unwrap_or(0);
    if deg == 0 {
        return Err(PolyError::ConstantPolynomial);
    }
    // Exact zeros at the origin are split off first.
    let lead_zero = c.coefficients.iter().take_while(|v| v.norm() == 0.0).count();
    let reduced = CoeffPoly {
        coefficients: c.coefficients[lead_zero..].to_vec(),
        log2_scale: c.log2_scale,
        log2_var_scale: c.log2_var_scale,
    };
    let mut found: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); lead_zero];
    let mut converged = true;
    if reduced.coefficients.len() > 1 {
        let start = newton_polygon_guesses(&reduced);
        let (z, ok, _) = aberth(&reduced, start, 500);
        converged = ok;
        found.extend(z.into_iter().map(|r| polish(&reduced, r, 3)));
    }
    // Iteration runs in the scaled variable u; report t = σu.
    let sigma = c.var_scale();
    let scale = found.iter().map(|r| r.norm()).fold(1.0, f64::max);
    let clustered = cluster(&found, 1e-7 * scale);
    let estimates: Vec<RootEstimate> = clustered
        .into_iter()
        .map(|(u, mult)| RootEstimate { at: u * sigma, residual: c.normalized_residual_u(u), mult })
        .collect();
    if !converged && estimates.iter().any(|r| r.residual > tol) {
        return Err(PolyError::NonConvergence { sweeps: 500, best: estimates });
    }
    Ok(estimates)
}
