//! Atomization: a measure becomes the zero set of a pair of polynomials whose
//! normalized max-log-modulus tracks the potential away from tiny disks.
//!
//! Every partition piece contributes one zero near its center of mass. The
//! mass outside the tail square is represented by a single zero of
//! multiplicity `k` far out (at `±10·r∞`), and the constant `c0` absorbs the
//! difference between `∫log|z-ζ|dμ` and `V`. With `F = e^{-kM·c0}(1-z/w)^k
//! ∏(z-ζ_l)` and weight `1/(kM)`, the normalized log-modulus is termwise the
//! discretization of `V`.

use crate::cpoly::{FactoredPoly, Zero};
use crate::equipartition::{classify_normal, partition, partition_tail_free, PartitionError};
use crate::grid::{GridSpec, Rect};
use crate::potential::{
    select_tail_parameters, select_tail_parameters_fixed_m, PlanarMeasure, Tail, TailError, TailParameters,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum AtomizeError {
    #[error("no point of rectangle {0} keeps the required separation from earlier zeros")]
    SeparationFailure(usize),
    #[error("certified error {best_error} still above target after k = {k_max}")]
    BudgetExceeded { k_max: usize, best_error: f64, best: Box<ApproximantPair> },
    #[error(transparent)]
    Tail(#[from] TailError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("tail square half-side {needed} exceeds the grid half-side {grid} and the measure has no closed form to regrid")]
    GridTooSmall { needed: f64, grid: f64 },
    #[error("tail path needs M ≥ 3, got {0}")]
    InvalidM(usize),
}

/// Disk serialized as `[re, im, radius]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct Disk {
    pub center: Complex64,
    pub radius: f64,
}

impl From<(f64, f64, f64)> for Disk {
    fn from((re, im, radius): (f64, f64, f64)) -> Self {
        Self { center: Complex64::new(re, im), radius }
    }
}

impl From<Disk> for (f64, f64, f64) {
    fn from(d: Disk) -> Self {
        (d.center.re, d.center.im, d.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomizedPolynomial {
    #[serde(flatten)]
    pub poly: FactoredPoly,
    pub degree: usize,
    pub norm_weight: f64,
    pub exceptional: Vec<Disk>,
}

impl AtomizedPolynomial {
    /// `norm_weight · log|F(z)|`.
    pub fn normalized_log_abs(&self, z: Complex64) -> f64 {
        self.norm_weight * self.poly.log_abs(z)
    }

    /// Multiplies by `e^{-N·s}`, lowering the normalized log-modulus by `s`.
    pub fn shift_down(&mut self, s: f64) {
        self.poly.log_constant -= self.degree as f64 * s;
    }
}

/// Point-in-union-of-disks queries; disks are bucketed by center abscissa.
pub struct ExceptionalIndex {
    small: Vec<Disk>,
    small_radius: f64,
    large: Vec<Disk>,
}

impl ExceptionalIndex {
    pub fn new<'a>(disks: impl IntoIterator<Item = &'a Disk>) -> Self {
        let all: Vec<Disk> = disks.into_iter().copied().collect();
        let min_r = all.iter().map(|d| d.radius).fold(f64::INFINITY, f64::min);
        let small_radius = if min_r.is_finite() { min_r } else { 0.0 };
        let (mut small, large): (Vec<Disk>, Vec<Disk>) = all.into_iter().partition(|d| d.radius <= small_radius);
        small.sort_by(|a, b| a.center.re.total_cmp(&b.center.re));
        Self { small, small_radius, large }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        if self.large.iter().any(|d| (z - d.center).norm() < d.radius) {
            return true;
        }
        let lo = self.small.partition_point(|d| d.center.re < z.re - self.small_radius);
        self.small[lo..]
            .iter()
            .take_while(|d| d.center.re <= z.re + self.small_radius)
            .any(|d| (z - d.center).norm() < d.radius)
    }
}

/// Spatial hash for the greedy separation rule.
struct Separation {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Complex64>>,
}

impl Separation {
    fn new(cell: f64) -> Self {
        Self { cell, buckets: HashMap::new() }
    }

    fn key(&self, z: Complex64) -> (i64, i64) {
        ((z.re / self.cell).floor() as i64, (z.im / self.cell).floor() as i64)
    }

    fn clear_of(&self, z: Complex64) -> bool {
        let (i, j) = self.key(z);
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(v) = self.buckets.get(&(i + di, j + dj)) {
                    if v.iter().any(|p| (p - z).norm() <= self.cell) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, z: Complex64) {
        let key = self.key(z);
        self.buckets.entry(key).or_default().push(z);
    }
}

/// Base points (before the `k^{-5}` perturbation) for every rectangle.
///
/// Normal rectangles use their center of mass. Non-normal ones take the first
/// of {center of mass, 32×32 interior lattice} lying farther than `3k^{-5}`
/// from every base chosen so far, so that after perturbing the two zero sets
/// in opposite directions all pairwise distances still exceed `k^{-5}`.
pub fn base_points(p: &crate::equipartition::Partition, k: usize) -> Result<Vec<Complex64>, AtomizeError> {
    let step = (k as f64).powi(-5);
    let mut sep = Separation::new(3.0 * step);
    let mut bases = vec![Complex64::new(0.0, 0.0); p.rectangles.len()];
    for (l, r) in p.rectangles.iter().enumerate() {
        if r.normal {
            bases[l] = r.center_of_mass;
            sep.insert(r.center_of_mass);
        }
    }
    for (l, r) in p.rectangles.iter().enumerate() {
        if r.normal {
            continue;
        }
        let b = &r.bounds;
        let lattice = (0..32 * 32).map(|n| {
            let (i, j) = (n % 32, n / 32);
            Complex64::new(b.x0 + (i as f64 + 0.5) * b.width() / 32.0, b.y0 + (j as f64 + 0.5) * b.height() / 32.0)
        });
        let chosen = std::iter::once(r.center_of_mass)
            .chain(lattice)
            .find(|&c| sep.clear_of(c))
            .ok_or(AtomizeError::SeparationFailure(l))?;
        sep.insert(chosen);
        bases[l] = chosen;
    }
    Ok(bases)
}

/// Zeros `base_l + k^{-5}·e^{i·phase}`.
pub fn place_zeros(
    p: &crate::equipartition::Partition,
    k: usize,
    perturbation_phase: f64,
) -> Result<Vec<Complex64>, AtomizeError> {
    let delta = Complex64::from_polar((k as f64).powi(-5), perturbation_phase);
    Ok(base_points(p, k)?.into_iter().map(|b| b + delta).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailChoice<'a> {
    Tail(&'a TailParameters),
    /// Compactly supported measure; `c0 = ∫ log|ζ| dμ`.
    TailFree { c0: f64 },
}

/// Builds `F` from the zeros.
///
/// The leading coefficients of the two polynomials of a pair must differ, so
/// that `p - q` keeps full degree and the common level set `{P = Q = 1}` of the
/// homogeneous lifts has no points on `{z = 0}`. Their moduli agree by
/// construction; when the phases agree as well, the secondary polynomial gets
/// the unimodular factor `-1`, which changes no modulus.
pub fn assemble(zeros: &[Complex64], tail: TailChoice, which: Which, k: usize) -> AtomizedPolynomial {
    let radius = (k as f64).powi(-10);
    let mut exceptional: Vec<Disk> = zeros.iter().map(|&center| Disk { center, radius }).collect();
    let mut factors: Vec<Zero> = zeros.iter().copied().map(Zero::simple).collect();
    // (1 - z/w)^k = (-1/w)^k (z - w)^k
    let tail_phase = |w: Complex64| (k as f64 * (PI - w.arg())).rem_euclid(TAU);
    let (log_constant, phase, degree) = match tail {
        TailChoice::Tail(tp) => {
            let w = match which {
                Which::Primary => tp.w_primary,
                Which::Secondary => tp.w_secondary,
            };
            factors.push(Zero { at: w, mult: k as u32 });
            exceptional.push(Disk { center: w, radius: w.norm() / 20.0 });
            let lc = -((k * tp.m) as f64) * tp.c0 - k as f64 * w.norm().ln();
            let mut phase = tail_phase(w);
            if which == Which::Secondary && phases_coincide(phase, tail_phase(tp.w_primary)) {
                phase += PI;
            }
            (lc, phase, k * tp.m)
        }
        TailChoice::TailFree { c0 } => {
            let n = zeros.len();
            let phase = if which == Which::Secondary { PI } else { 0.0 };
            (-(n as f64) * c0, phase, n)
        }
    };
    AtomizedPolynomial {
        poly: FactoredPoly::new(factors, log_constant, phase.rem_euclid(TAU)),
        degree,
        norm_weight: 1.0 / degree as f64,
        exceptional,
    }
}

fn phases_coincide(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d) < 1e-6
}

/// Sampling plan for [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Points per side of the outer and inner sample grids.
    pub grid_n: usize,
    /// Points on each far-field circle.
    pub far_points: usize,
    /// Probes inside each exceptional disk.
    pub probes: usize,
    /// Local ascents started from the largest one-sided violations.
    pub climbs: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { grid_n: 201, far_points: 256, probes: 8, climbs: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `sup |V - approx|` over samples in no exceptional disk (and the limit
    /// at infinity).
    pub sup_error_off_exceptional: f64,
    /// `max (approx - V)` over every sample, exceptional probes included.
    pub upper_bound_violation: f64,
    /// `upper_bound_violation - ε`: the one-sided bound with slack `ε`.
    pub claim_violation: f64,
    pub epsilon: f64,
    /// Samples entering the two-sided sup.
    pub n_samples: usize,
    pub n_exceptional_probes: usize,
    /// Half-side `L` of the outer sample square.
    pub window: f64,
    pub grid_n: usize,
    pub far_radius: f64,
    /// `None` when the worst value is the limit at infinity.
    pub worst_point: Option<Complex64>,
    pub worst_upper_point: Option<Complex64>,
    /// `lim (approx - V)` as `|z| → ∞`.
    pub asymptotic_gap: f64,
    /// Spread of `approx - V` on the far circle.
    pub far_field_spread: f64,
    pub exceptional_sets_disjoint: bool,
}

struct Sample {
    z: Complex64,
    two_sided: bool,
}

fn disks_disjoint(a: &[Disk], b: &[Disk]) -> bool {
    // Sweep over b sorted by abscissa; every disk of a only needs the window
    // of b-centers within its radius plus the largest b radius.
    let mut sorted: Vec<Disk> = b.to_vec();
    sorted.sort_by(|x, y| x.center.re.total_cmp(&y.center.re));
    let max_b = sorted.iter().map(|d| d.radius).fold(0.0, f64::max);
    a.iter().all(|da| {
        let reach = da.radius + max_b;
        let lo = sorted.partition_point(|d| d.center.re < da.center.re - reach);
        sorted[lo..]
            .iter()
            .take_while(|d| d.center.re <= da.center.re + reach)
            .all(|db| (da.center - db.center).norm() >= da.radius + db.radius)
    })
}

/// Compass search for a local maximum of `f`, from `z` with initial `step`.
fn climb(f: &impl Fn(Complex64) -> f64, mut z: Complex64, mut step: f64) -> (Complex64, f64) {
    let dirs: Vec<Complex64> = (0..8).map(|j| Complex64::from_polar(1.0, TAU * j as f64 / 8.0)).collect();
    let mut best = f(z);
    let floor = 1e-10 * (1.0 + z.norm());
    for _ in 0..400 {
        if step < floor {
            break;
        }
        let cand = dirs
            .iter()
            .map(|d| z + d * step)
            .map(|c| (c, f(c)))
            .fold(None, |acc: Option<(Complex64, f64)>, (c, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((c, v)),
            });
        match cand {
            Some((c, v)) if v > best => {
                z = c;
                best = v;
            }
            _ => step *= 0.5,
        }
    }
    (z, best)
}

/// Samples the potential and the pair's max-form on nested grids, far-field
/// circles and probes inside the exceptional disks.
///
/// `extent` is the tail square half-side (or the support radius on the
/// tail-free path) and `r_infty` the tail radius (0 without tail).
pub fn certify(
    p: &AtomizedPolynomial,
    q: &AtomizedPolynomial,
    mu: &PlanarMeasure,
    extent: f64,
    r_infty: f64,
    eps: f64,
    cfg: CertifyConfig,
) -> ErrorReport {
    let v = mu.evaluator();
    let window = 2.0 * (10.0 * r_infty).max(extent);
    let far_radius = 100.0 * window;
    let ep = ExceptionalIndex::new(p.exceptional.iter());
    let eq = ExceptionalIndex::new(q.exceptional.iter());
    let excluded = |z: Complex64| ep.contains(z) || eq.contains(z);

    let mut samples: Vec<Sample> = Vec::new();
    let n = cfg.grid_n.max(2);
    for half in [window, 1.5 * extent] {
        for j in 0..n {
            for i in 0..n {
                let z = Complex64::new(
                    -half + 2.0 * half * i as f64 / (n - 1) as f64,
                    -half + 2.0 * half * j as f64 / (n - 1) as f64,
                );
                samples.push(Sample { z, two_sided: !excluded(z) });
            }
        }
    }
    // Log-spaced circles from the window out to the far field.
    let rings = 8;
    for ring in 0..=rings {
        let r = window * 100f64.powf(ring as f64 / rings as f64);
        for j in 0..cfg.far_points {
            let z = Complex64::from_polar(r, TAU * (j as f64 + 0.5) / cfg.far_points as f64);
            samples.push(Sample { z, two_sided: !excluded(z) });
        }
    }
    let mut probes = 0;
    for d in p.exceptional.iter().chain(q.exceptional.iter()) {
        for j in 0..cfg.probes {
            let z = d.center + Complex64::from_polar(0.5 * d.radius, TAU * j as f64 / cfg.probes as f64);
            samples.push(Sample { z, two_sided: false });
            probes += 1;
        }
    }

    let approx = |z: Complex64| p.normalized_log_abs(z).max(q.normalized_log_abs(z));
    let gap = |z: Complex64| approx(z) - v(z);
    let mut diffs: Vec<f64> = samples.par_iter().map(|s| gap(s.z)).collect();

    // The one-sided bound is driven by isolated peaks between zeros; climb
    // from the best samples so the shift is not limited by grid spacing.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| diffs[b].total_cmp(&diffs[a]).then(a.cmp(&b)));
    let inner_step = 3.0 * extent / (n - 1) as f64;
    let starts: Vec<(Complex64, f64)> = order
        .iter()
        .take(cfg.climbs)
        .map(|&i| (samples[i].z, inner_step.max(1e-3 * samples[i].z.norm())))
        .collect();
    let climbed: Vec<(Complex64, f64)> = starts.par_iter().map(|&(z, step)| climb(&gap, z, step)).collect();
    for (z, d) in climbed {
        samples.push(Sample { z, two_sided: !excluded(z) });
        diffs.push(d);
    }

    let mut sup = 0.0;
    let mut worst_point = Some(Complex64::new(0.0, 0.0));
    let mut upper = f64::NEG_INFINITY;
    let mut worst_upper_point = Some(Complex64::new(0.0, 0.0));
    let mut n_samples = 0;
    let mut far_min = f64::INFINITY;
    let mut far_max = f64::NEG_INFINITY;
    for (s, &d) in samples.iter().zip(&diffs) {
        if d > upper {
            upper = d;
            worst_upper_point = Some(s.z);
        }
        if s.two_sided {
            n_samples += 1;
            if d.abs() > sup {
                sup = d.abs();
                worst_point = Some(s.z);
            }
        }
        if (s.z.norm() - far_radius).abs() < 1e-9 * far_radius {
            far_min = far_min.min(d);
            far_max = far_max.max(d);
        }
    }
    // The limit at infinity is the leading-coefficient balance.
    let c_inf = mu.limit_constant();
    let gap_p = p.norm_weight * p.poly.log_constant;
    let gap_q = q.norm_weight * q.poly.log_constant;
    let asymptotic_gap = gap_p.max(gap_q) - c_inf;
    if asymptotic_gap.abs() > sup {
        sup = asymptotic_gap.abs();
        worst_point = None;
    }
    if asymptotic_gap > upper {
        upper = asymptotic_gap;
        worst_upper_point = None;
    }
    ErrorReport {
        sup_error_off_exceptional: sup,
        upper_bound_violation: upper,
        claim_violation: upper - eps,
        epsilon: eps,
        n_samples,
        n_exceptional_probes: probes,
        window,
        grid_n: n,
        far_radius,
        worst_point,
        worst_upper_point,
        asymptotic_gap,
        far_field_spread: far_max - far_min,
        exceptional_sets_disjoint: disks_disjoint(&p.exceptional, &q.exceptional),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximantPair {
    #[serde(rename = "P")]
    pub p: AtomizedPolynomial,
    #[serde(rename = "Q")]
    pub q: AtomizedPolynomial,
    pub epsilon_target: f64,
    pub certificate: ErrorReport,
    /// Downward shift `s` applied to both polynomials.
    pub shift: f64,
    pub k: usize,
    pub tail: Option<TailParameters>,
    pub pieces: usize,
    pub normal_pieces: usize,
    pub worst_aspect_ratio: f64,
    pub zero_mass_gaps: usize,
}

impl ApproximantPair {
    pub fn degree(&self) -> usize {
        self.p.degree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomizeConfig {
    pub k_start: usize,
    pub k_max: usize,
    pub certify: CertifyConfig,
}

impl Default for AtomizeConfig {
    fn default() -> Self {
        Self { k_start: 8, k_max: 256, certify: CertifyConfig::default() }
    }
}

/// Rebuilds a closed-form measure on a grid wide enough for `needed`.
fn ensure_grid_covers(mu: &PlanarMeasure, needed: f64) -> Result<Option<PlanarMeasure>, AtomizeError> {
    let grid_half = match mu.tail {
        Tail::Radial { half_side, .. } => half_side,
        Tail::None => return Ok(None),
    };
    if needed <= grid_half {
        return Ok(None);
    }
    match mu.exact {
        Some(profile) => {
            let h = mu.grid.h;
            let half_side = ((1.25 * needed) / h).ceil() * h;
            Ok(Some(PlanarMeasure::from_profile(profile, GridSpec { half_side, h })))
        }
        None => Err(AtomizeError::GridTooSmall { needed, grid: grid_half }),
    }
}

/// One construction at fixed `k` (and `M` on the tail path), certified and
/// shifted so that the max-form stays below `V` on the sample set.
fn build(
    mu: &PlanarMeasure,
    tail: Option<&TailParameters>,
    k: usize,
    eps: f64,
    cfg: CertifyConfig,
) -> Result<ApproximantPair, AtomizeError> {
    let (mut part, choice, extent, r_infty) = match tail {
        Some(tp) => (partition(mu, tp.r, k, tp.m)?, TailChoice::Tail(tp), tp.r, tp.r_infty),
        None => {
            let part = partition_tail_free(mu, k)?;
            let b = part.region;
            let extent = [b.x0, b.x1, b.y0, b.y1].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (part, TailChoice::TailFree { c0: mu.log_moment() }, extent, 0.0)
        }
    };
    let (normal, _) = classify_normal(&mut part, mu.a_max);
    let bases = base_points(&part, k)?;
    let step = (k as f64).powi(-5);
    let zp: Vec<Complex64> = bases.iter().map(|b| b + Complex64::new(step, 0.0)).collect();
    let zq: Vec<Complex64> = bases.iter().map(|b| b - Complex64::new(step, 0.0)).collect();
    let mut p = assemble(&zp, choice, Which::Primary, k);
    let mut q = assemble(&zq, choice, Which::Secondary, k);
    let first = certify(&p, &q, mu, extent, r_infty, eps, cfg);
    let shift = first.upper_bound_violation.max(0.0);
    p.shift_down(shift);
    q.shift_down(shift);
    let certificate = certify(&p, &q, mu, extent, r_infty, eps, cfg);
    Ok(ApproximantPair {
        p,
        q,
        epsilon_target: eps,
        certificate,
        shift,
        k,
        tail: tail.cloned(),
        pieces: part.rectangles.len(),
        normal_pieces: normal.len(),
        worst_aspect_ratio: part.worst_aspect_ratio,
        zero_mass_gaps: part.zero_mass_gaps,
    })
}

/// Tail accuracy `η = ε/10`, capped at 1/3 so that loose targets still give
/// `M ≥ 3`.
fn tail_eta(eps: f64) -> f64 {
    (eps / 10.0).min(1.0 / 3.0)
}

/// Doubles `k` from `k_start` until the shifted pair is certified to `eps`.
///
/// A `k` too small for the separation rule (`3k^{-5}` exceeds the size of
/// some pieces) is skipped; the error is returned only if no `k` in the
/// schedule produced a pair.
pub fn atomize_pair(mu: &PlanarMeasure, eps: f64, cfg: AtomizeConfig) -> Result<ApproximantPair, AtomizeError> {
    let eta = tail_eta(eps);
    let tail = match select_tail_parameters(mu, eta) {
        Ok(tp) => Some(tp),
        Err(TailError::TailFree) => None,
        Err(e) => return Err(e.into()),
    };
    let regridded = match &tail {
        Some(tp) => ensure_grid_covers(mu, tp.r)?,
        None => None,
    };
    let (mu, tail) = match regridded {
        Some(m) => {
            let tp = select_tail_parameters(&m, eta)?;
            (std::borrow::Cow::Owned(m), Some(tp))
        }
        None => (std::borrow::Cow::Borrowed(mu), tail),
    };
    let mut best: Option<ApproximantPair> = None;
    let mut separation = None;
    let mut k = cfg.k_start.max(1);
    while k <= cfg.k_max {
        let pair = match build(&mu, tail.as_ref(), k, eps, cfg.certify) {
            Ok(pair) => pair,
            Err(e @ AtomizeError::SeparationFailure(_)) => {
                separation = Some(e);
                k *= 2;
                continue;
            }
            Err(e) => return Err(e),
        };
        if pair.certificate.sup_error_off_exceptional <= eps {
            return Ok(pair);
        }
        if best.as_ref().is_none_or(|b| pair.certificate.sup_error_off_exceptional < b.certificate.sup_error_off_exceptional) {
            best = Some(pair);
        }
        k *= 2;
    }
    let Some(best) = best else {
        return Err(separation.unwrap_or(AtomizeError::InvalidM(0)));
    };
    Err(AtomizeError::BudgetExceeded {
        k_max: cfg.k_max,
        best_error: best.certificate.sup_error_off_exceptional,
        best: Box::new(best),
    })
}

/// Pair of prescribed size: `k` pieces per unit of `1/M` mass on the tail
/// path (degree `kM`), or `2k` pieces without tail (degree `2k`). The
/// certificate reports the achieved error against `eps`.
pub fn construct_pair(
    mu: &PlanarMeasure,
    k: usize,
    m: Option<usize>,
    eps: f64,
    cfg: CertifyConfig,
) -> Result<ApproximantPair, AtomizeError> {
    match mu.tail {
        Tail::None => build(mu, None, k, eps, cfg),
        Tail::Radial { .. } => {
            let m = m.ok_or(AtomizeError::InvalidM(0))?;
            if m < 3 {
                return Err(AtomizeError::InvalidM(m));
            }
            let tp = select_tail_parameters_fixed_m(mu, m)?;
            match ensure_grid_covers(mu, tp.r)? {
                Some(wide) => {
                    let tp = select_tail_parameters_fixed_m(&wide, m)?;
                    build(&wide, Some(&tp), k, eps, cfg)
                }
                None => build(mu, Some(&tp), k, eps, cfg),
            }
        }
    }
}

/// `(k, M)` realizing degree `n = kM` on the tail path: `k = 2` when `n/2 ≥ 3`
/// is available, else the smallest divisor leaving `M ≥ 3`.
pub fn tail_plan(n: usize) -> Option<(usize, usize)> {
    (2..=n).chain(std::iter::once(1)).find(|&k| n % k == 0 && n / k >= 3).map(|k| (k, n / k))
}

/// Rectangle helper re-exported for callers assembling custom regions.
pub fn square(half_side: f64) -> Rect {
    Rect::square(half_side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equipartition::{partition_pieces, Partition};
    use crate::grid::{DensityGrid, GridSpec};
    use crate::potential::Profile;

    fn uniform_square() -> PlanarMeasure {
        let mut grid = DensityGrid::zeros(GridSpec { half_side: 1.0, h: 0.05 });
        grid.values.iter_mut().for_each(|x| *x = 0.25);
        PlanarMeasure { a_max: 0.25, grid, tail: Tail::None, exact: None }
    }

    fn four_pieces(k: usize) -> Partition {
        let mu = uniform_square();
        let mut p = partition_pieces(&mu, &mu.mass_table(), Rect::square(1.0), 4, 0.25, k, 5).unwrap();
        classify_normal(&mut p, mu.a_max);
        p
    }

    #[test]
    fn zeros_near_quadrant_centers() {
        let p = four_pieces(4);
        let z = place_zeros(&p, 4, 0.0).unwrap();
        let centers = [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)];
        for (re, im) in centers {
            let c = Complex64::new(re, im);
            let d = z.iter().map(|w| (w - c).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 4f64.powi(-5) + 1e-12);
        }
    }

    #[test]
    fn opposite_phases_separate_zero_sets() {
        let p = four_pieces(4);
        let a = place_zeros(&p, 4, 0.0).unwrap();
        let b = place_zeros(&p, 4, PI).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(((x - y).norm() - 2.0 * 4f64.powi(-5)).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_only_assembly() {
        let tp = TailParameters {
            eta: 0.9,
            r: 1.0,
            m: 2,
            r_infty: 3.0,
            w_primary: Complex64::new(30.0, 0.0),
            w_secondary: Complex64::new(-30.0, 0.0),
            c0: 0.4,
            tail_mass: 0.5,
            far_density: 0.0,
        };
        let f = assemble(&[], TailChoice::Tail(&tp), Which::Primary, 1);
        assert_eq!(f.degree, 2);
        // norm_weight·log|F(0)| = -c0
        assert!((f.normalized_log_abs(Complex64::new(0.0, 0.0)) + 0.4).abs() < 1e-14);
        let z = Complex64::new(2.0, 1.0);
        let want = -0.4 + 0.5 * (1.0 - z / 30.0).norm().ln();
        assert!((f.normalized_log_abs(z) - want).abs() < 1e-14);
        assert!((f.exceptional[0].radius - 1.5).abs() < 1e-14);
    }

    #[test]
    fn secondary_leading_coefficient_differs() {
        let z = [Complex64::new(0.1, 0.0)];
        let p = assemble(&z, TailChoice::TailFree { c0: 0.0 }, Which::Primary, 1);
        let q = assemble(&z, TailChoice::TailFree { c0: 0.0 }, Which::Secondary, 1);
        let lead_diff = p.poly.leading().to_complex() - q.poly.leading().to_complex();
        assert!((lead_diff.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn leading_coefficients_differ_for_every_k() {
        let mu = PlanarMeasure::from_profile(Profile::Ball, GridSpec { half_side: 12.0, h: 0.1 });
        let tp = select_tail_parameters_fixed_m(&mu, 4).unwrap();
        for k in 1..6 {
            let p = assemble(&[], TailChoice::Tail(&tp), Which::Primary, k);
            let q = assemble(&[], TailChoice::Tail(&tp), Which::Secondary, k);
            let d = p.poly.leading().to_complex() - q.poly.leading().to_complex();
            assert!(d.norm() > 1.9 * p.poly.leading().to_complex().norm(), "k = {k}");
        }
    }

    #[test]
    fn exceptional_index_queries() {
        let disks = [
            Disk { center: Complex64::new(0.0, 0.0), radius: 1e-3 },
            Disk { center: Complex64::new(1.0, 0.0), radius: 1e-3 },
            Disk { center: Complex64::new(50.0, 0.0), radius: 2.0 },
        ];
        let idx = ExceptionalIndex::new(disks.iter());
        assert!(idx.contains(Complex64::new(1.0005, 0.0)));
        assert!(!idx.contains(Complex64::new(1.002, 0.0)));
        assert!(idx.contains(Complex64::new(51.0, 1.0)));
    }

    #[test]
    fn vacuous_tolerance_stops_at_first_k() {
        let mu = PlanarMeasure::from_profile(Profile::Ball, GridSpec { half_side: 12.0, h: 0.1 });
        let cfg = AtomizeConfig { certify: CertifyConfig { grid_n: 41, ..Default::default() }, ..Default::default() };
        // ε/10 would give η = 1; the cap keeps the tail accuracy valid.
        for eps in [10.0, 4.0] {
            let pair = atomize_pair(&mu, eps, cfg).unwrap();
            assert_eq!(pair.k, 8);
            assert!(pair.certificate.upper_bound_violation <= 1e-9);
        }
    }

    #[test]
    fn degree_plan() {
        assert_eq!(tail_plan(8), Some((2, 4)));
        assert_eq!(tail_plan(24), Some((2, 12)));
        assert_eq!(tail_plan(6), Some((2, 3)));
        assert_eq!(tail_plan(5), Some((1, 5)));
        assert_eq!(tail_plan(2), None);
    }
}
