//! Probability measures on C and their logarithmic potentials
//! `V(z) = ∫ log|1 - z/ζ| dμ(ζ)`.
//!
//! A measure is a piecewise-constant density on a grid covering `Q_{R0}` plus,
//! optionally, a radial closed form describing the mass outside the grid.

use crate::grid::{gauss_legendre_on, log_rect_integral, DensityGrid, GridSpec, MassTable, Rect};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("computed density {value:e} at {at} is below -1e-8; the input is not subharmonic")]
    NonSubharmonic { at: Complex64, value: f64 },
    #[error("grid mass changes by {change:e} between h and h/2")]
    GridTooCoarse { change: f64 },
    #[error("refinement depth {0} exceeds the budget of 12")]
    QuadratureBudgetExceeded(u32),
    #[error("unknown builtin measure `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TailError {
    #[error("eta = {0} is outside (0, 1/2)")]
    InvalidEta(f64),
    #[error("the measure is compactly supported inside the grid; use the tail-free path")]
    TailFree,
    #[error("no square carries tail mass 1/{m} after 200 bisection steps (achieved {achieved:e})")]
    NoSuchR { m: usize, achieved: f64 },
    #[error("density stays above eta far out for every M up to {0}")]
    SmallaUnreachable(usize),
}

/// Radial closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    /// Riesz measure of `½log(1+|t|²)`: density `1/(π(1+r²)²)`.
    Ball,
    /// Riesz measure of `½log(1+c|t|²)`.
    Ellipsoid { c: f64 },
    /// Uniform on the annulus `inner ≤ |t| ≤ outer`.
    Ring { inner: f64, outer: f64 },
}

fn ball_survival(x: f64) -> f64 {
    1.0 / (1.0 + x * x)
}

/// `∫_{|ζ|>x} log|ζ| dμ` for the ball profile.
fn ball_log_beyond(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x.ln() / (1.0 + x * x) + 0.5 * (1.0 / (x * x)).ln_1p()
}

impl Profile {
    fn stretch(&self) -> f64 {
        match *self {
            Profile::Ball => 1.0,
            Profile::Ellipsoid { c } => c,
            Profile::Ring { .. } => 1.0,
        }
    }

    pub fn density(&self, r: f64) -> f64 {
        match *self {
            Profile::Ball | Profile::Ellipsoid { .. } => {
                let c = self.stretch();
                let q = 1.0 + c * r * r;
                c / (PI * q * q)
            }
            Profile::Ring { inner, outer } => {
                if (inner..=outer).contains(&r) {
                    1.0 / (PI * (outer * outer - inner * inner))
                } else {
                    0.0
                }
            }
        }
    }

    /// `μ(|ζ| > r)`.
    pub fn survival(&self, r: f64) -> f64 {
        match *self {
            Profile::Ball | Profile::Ellipsoid { .. } => ball_survival(self.stretch().sqrt() * r),
            Profile::Ring { inner, outer } => {
                let s = r.clamp(inner, outer);
                (outer * outer - s * s) / (outer * outer - inner * inner)
            }
        }
    }

    /// `∫_{|ζ|>r} log|ζ| dμ`.
    pub fn log_moment_beyond(&self, r: f64) -> f64 {
        match *self {
            Profile::Ball | Profile::Ellipsoid { .. } => {
                let c = self.stretch();
                let x = c.sqrt() * r;
                ball_log_beyond(x) - 0.5 * c.ln() * ball_survival(x)
            }
            Profile::Ring { inner, outer } => {
                if r >= outer {
                    return 0.0;
                }
                let f = |s: f64| s * s * s.ln() - 0.5 * s * s;
                (f(outer) - f(r.max(inner))) / (outer * outer - inner * inner)
            }
        }
    }

    /// Closed-form `V(z)` (depends on `|z|` only).
    pub fn potential(&self, r: f64) -> f64 {
        match *self {
            Profile::Ball | Profile::Ellipsoid { .. } => 0.5 * (self.stretch() * r * r).ln_1p(),
            Profile::Ring { inner, outer } => {
                if r <= inner {
                    return 0.0;
                }
                let s = r.min(outer);
                let part = |s: f64| s * s * (r / s).ln() + 0.5 * s * s;
                (part(s) - part(inner)) / (outer * outer - inner * inner)
            }
        }
    }

    /// `lim V(z) - log|z| = -∫ log|ζ| dμ`.
    pub fn limit_constant(&self) -> f64 {
        -self.log_moment_beyond(0.0)
    }

    pub fn has_tail(&self) -> bool {
        !matches!(self, Profile::Ring { .. })
    }

    /// `∫_{|ζ|>ρ} log|1 - z/ζ| dμ(ζ)`.
    pub fn potential_beyond(&self, rho: f64, z: Complex64) -> f64 {
        let r = z.norm();
        if r <= rho {
            return 0.0;
        }
        r.ln() * (self.survival(rho) - self.survival(r)) - (self.log_moment_beyond(rho) - self.log_moment_beyond(r))
    }

    /// `μ(C \ Q_R)` via angular quadrature over one octant.
    pub fn mass_outside_square(&self, half_side: f64) -> f64 {
        4.0 / PI
            * gauss_legendre_on(48, 0.0, FRAC_PI_4)
                .iter()
                .map(|&(t, w)| w * self.survival(half_side / t.cos()))
                .sum::<f64>()
    }

    /// `∫_{C \ Q_R} log|ζ| dμ`.
    pub fn log_moment_outside_square(&self, half_side: f64) -> f64 {
        4.0 / PI
            * gauss_legendre_on(48, 0.0, FRAC_PI_4)
                .iter()
                .map(|&(t, w)| w * self.log_moment_beyond(half_side / t.cos()))
                .sum::<f64>()
    }

    /// Cell averages of the density, exact up to quadrature: 4×4 Gauss nodes
    /// for the smooth profiles, 8×8 sub-sampling for the discontinuous ring.
    fn cell_average(&self, cell: &Rect) -> f64 {
        match self {
            Profile::Ring { .. } => {
                let n = 8;
                let (dx, dy) = (cell.width() / n as f64, cell.height() / n as f64);
                let mut acc = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        let x = cell.x0 + (i as f64 + 0.5) * dx;
                        let y = cell.y0 + (j as f64 + 0.5) * dy;
                        acc += self.density(x.hypot(y));
                    }
                }
                acc / (n * n) as f64
            }
            _ => {
                let qx = gauss_legendre_on(4, cell.x0, cell.x1);
                let qy = gauss_legendre_on(4, cell.y0, cell.y1);
                let mut acc = 0.0;
                for &(y, wy) in &qy {
                    for &(x, wx) in &qx {
                        acc += wx * wy * self.density(x.hypot(y));
                    }
                }
                acc / cell.area()
            }
        }
    }
}

/// Mass outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tail {
    None,
    /// `profile` restricted to `C \ Q_{half_side}`.
    Radial { profile: Profile, half_side: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarMeasure {
    pub grid: DensityGrid,
    pub tail: Tail,
    pub a_max: f64,
    /// Closed form of the whole measure, when the grid samples one exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Profile>,
}

impl PlanarMeasure {
    pub fn from_profile(profile: Profile, spec: GridSpec) -> Self {
        let mut grid = DensityGrid::zeros(spec);
        let nx = grid.nx;
        let rows: Vec<Vec<f64>> = (0..grid.ny)
            .into_par_iter()
            .map(|j| (0..nx).map(|i| profile.cell_average(&grid.cell(i, j))).collect())
            .collect();
        grid.values = rows.into_iter().flatten().collect();
        let tail = if profile.has_tail() {
            Tail::Radial { profile, half_side: spec.half_side }
        } else {
            // Compact support: remove the sub-sampling error in the mass.
            let m = grid.total_mass();
            grid.values.iter_mut().for_each(|v| *v /= m);
            Tail::None
        };
        let a_max = grid.max_value().max(match tail {
            Tail::Radial { profile, half_side } => profile.density(half_side),
            Tail::None => 0.0,
        });
        Self { grid, tail, a_max, exact: Some(profile) }
    }

    /// `ball`, `bidisk`, `ellipsoid:<c>`.
    pub fn builtin(name: &str, spec: GridSpec) -> Result<Self, PotentialError> {
        Ok(Self::from_profile(parse_profile(name)?, spec))
    }

    pub fn grid_mass(&self) -> f64 {
        self.grid.total_mass()
    }

    pub fn tail_mass(&self) -> f64 {
        match self.tail {
            Tail::None => 0.0,
            Tail::Radial { profile, half_side } => profile.mass_outside_square(half_side),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.grid_mass() + self.tail_mass()
    }

    pub fn mass_table(&self) -> MassTable {
        MassTable::new(&self.grid)
    }

    /// `μ(C \ Q_R)`.
    pub fn mass_outside_square(&self, table: &MassTable, half_side: f64) -> f64 {
        match self.tail {
            Tail::Radial { profile, half_side: r0 } if half_side >= r0 => profile.mass_outside_square(half_side),
            _ => (table.total() - table.mass(&Rect::square(half_side))).max(0.0) + self.tail_mass(),
        }
    }

    /// `∫_{C \ Q_R} log|ζ| dμ`.
    pub fn log_moment_outside_square(&self, half_side: f64) -> f64 {
        match self.tail {
            Tail::Radial { profile, half_side: r0 } if half_side >= r0 => profile.log_moment_outside_square(half_side),
            _ => {
                let inside = Rect::square(half_side);
                let mut acc = 0.0;
                for j in 0..self.grid.ny {
                    let mut row = 0.0;
                    for i in 0..self.grid.nx {
                        let a = self.grid.value(i, j);
                        if a == 0.0 {
                            continue;
                        }
                        let cell = self.grid.cell(i, j);
                        let whole = cell_log_integral(&cell, Complex64::new(0.0, 0.0), 2);
                        let clipped = cell
                            .intersect(&inside)
                            .map_or(0.0, |c| cell_log_integral(&c, Complex64::new(0.0, 0.0), 2));
                        row += a * (whole - clipped);
                    }
                    acc += row;
                }
                acc + self.tail_log_moment()
            }
        }
    }

    fn tail_log_moment(&self) -> f64 {
        match self.tail {
            Tail::None => 0.0,
            Tail::Radial { profile, half_side } => profile.log_moment_outside_square(half_side),
        }
    }

    /// `∫ log|ζ| dμ`.
    pub fn log_moment(&self) -> f64 {
        grid_log_potential(&self.grid, Complex64::new(0.0, 0.0), 2) + self.tail_log_moment()
    }

    /// `c∞ = lim (V(z) - log|z|)`, from the closed form when available so
    /// that it matches [`Self::potential`].
    pub fn limit_constant(&self) -> f64 {
        match self.exact {
            Some(p) => p.limit_constant(),
            None => -self.log_moment(),
        }
    }

    /// `V(z)`: closed form when available, quadrature otherwise.
    pub fn potential(&self, z: Complex64) -> f64 {
        match self.exact {
            Some(p) => p.potential(z.norm()),
            None => PotentialEvaluator::new(self, QuadConfig::default()).map(|e| e.eval(z)).unwrap_or(f64::NAN),
        }
    }

    /// Evaluator that amortizes per-measure setup over many points.
    pub fn evaluator(&self) -> Box<dyn Fn(Complex64) -> f64 + Sync + '_> {
        match self.exact {
            Some(p) => Box::new(move |z: Complex64| p.potential(z.norm())),
            None => {
                let e = PotentialEvaluator::new(self, QuadConfig::default()).expect("default depth is within budget");
                Box::new(move |z| e.eval(z))
            }
        }
    }

    /// Density at a point: grid cell value inside the grid, tail profile outside.
    pub fn density_at(&self, z: Complex64) -> f64 {
        let g = &self.grid;
        let b = g.bounds();
        if b.contains(z) {
            let i = (((z.re - g.x0) / g.h) as usize).min(g.nx - 1);
            let j = (((z.im - g.y0) / g.h) as usize).min(g.ny - 1);
            return g.value(i, j);
        }
        match self.tail {
            Tail::None => 0.0,
            Tail::Radial { profile, .. } => profile.density(z.norm()),
        }
    }
}

pub fn parse_profile(name: &str) -> Result<Profile, PotentialError> {
    let name = name.strip_prefix("builtin:").unwrap_or(name);
    match name {
        "ball" => Ok(Profile::Ball),
        "bidisk" => Ok(Profile::Ring { inner: 0.95, outer: 1.05 }),
        _ => {
            if let Some(c) = name.strip_prefix("ellipsoid:") {
                let c: f64 = c.parse().map_err(|_| PotentialError::UnknownBuiltin(name.into()))?;
                if c > 0.0 && c.is_finite() {
                    return Ok(Profile::Ellipsoid { c });
                }
            }
            Err(PotentialError::UnknownBuiltin(name.into()))
        }
    }
}

/// Recursive refinement of one cell: midpoint once the piece is more than two
/// of its own sizes away from `z`, 2×2 subdivision otherwise, and the exact
/// rectangle integral at the deepest level.
fn cell_log_integral(cell: &Rect, z: Complex64, depth: u32) -> f64 {
    let size = cell.width().max(cell.height());
    if cell.distance(z) > 2.0 * size {
        return cell.area() * (cell.center() - z).norm().ln();
    }
    if depth == 0 {
        return log_rect_integral(cell, z);
    }
    let c = cell.center();
    [
        Rect::new(cell.x0, cell.y0, c.re, c.im),
        Rect::new(c.re, cell.y0, cell.x1, c.im),
        Rect::new(cell.x0, c.im, c.re, cell.y1),
        Rect::new(c.re, c.im, cell.x1, cell.y1),
    ]
    .iter()
    .map(|r| cell_log_integral(r, z, depth - 1))
    .sum()
}

/// `∫_grid log|ζ - z| a(ζ) dσ(ζ)`. Row sums in parallel, combined in row
/// order, so the result does not depend on the thread count.
fn grid_log_potential(grid: &DensityGrid, z: Complex64, depth: u32) -> f64 {
    let h = grid.h;
    let area = h * h;
    let rows: Vec<f64> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let y = grid.y0 + (j as f64 + 0.5) * h;
            let row = &grid.values[j * grid.nx..(j + 1) * grid.nx];
            let mut acc = 0.0;
            for (i, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let x = grid.x0 + (i as f64 + 0.5) * h;
                let d = (x - z.re).hypot(y - z.im);
                acc += if d > 2.0 * SQRT_2 * h + 0.5 * SQRT_2 * h {
                    a * area * d.ln()
                } else {
                    a * cell_log_integral(&grid.cell(i, j), z, depth)
                };
            }
            acc
        })
        .collect();
    rows.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Levels of 2×2 subdivision for cells near the evaluation point.
    pub refine_depth: u32,
    /// Gauss nodes per direction and octant for the tail between `Q_{R0}`
    /// and its circumscribed disk.
    pub corner_nodes: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { refine_depth: 2, corner_nodes: 24 }
    }
}

/// Quadrature evaluation of `V`, with the grid log-moment and the tail nodes
/// precomputed.
pub struct PotentialEvaluator<'a> {
    mu: &'a PlanarMeasure,
    cfg: QuadConfig,
    grid_k0: f64,
    /// `(ζ, weight·density)` covering `D(0, R0√2) \ Q_{R0}`.
    corner: Vec<(Complex64, f64)>,
}

impl<'a> PotentialEvaluator<'a> {
    pub fn new(mu: &'a PlanarMeasure, cfg: QuadConfig) -> Result<Self, PotentialError> {
        if cfg.refine_depth > 12 {
            return Err(PotentialError::QuadratureBudgetExceeded(cfg.refine_depth));
        }
        let grid_k0 = grid_log_potential(&mu.grid, Complex64::new(0.0, 0.0), cfg.refine_depth);
        let mut corner = Vec::new();
        if let Tail::Radial { profile, half_side } = mu.tail {
            let rho = half_side * SQRT_2;
            for oct in 0..8 {
                let a = oct as f64 * FRAC_PI_4;
                for (t, wt) in gauss_legendre_on(cfg.corner_nodes, a, a + FRAC_PI_4) {
                    let smin = half_side / t.cos().abs().max(t.sin().abs());
                    for (s, ws) in gauss_legendre_on(cfg.corner_nodes, smin, rho) {
                        corner.push((Complex64::from_polar(s, t), wt * ws * s * profile.density(s)));
                    }
                }
            }
        }
        Ok(Self { mu, cfg, grid_k0, corner })
    }

    /// Contribution of the mass outside the grid.
    pub fn tail_part(&self, z: Complex64) -> f64 {
        match self.mu.tail {
            Tail::None => 0.0,
            Tail::Radial { profile, half_side } => {
                let far = profile.potential_beyond(half_side * SQRT_2, z);
                let near: f64 = self.corner.iter().map(|&(zeta, w)| w * (1.0 - z / zeta).norm().ln()).sum();
                far + near
            }
        }
    }

    pub fn eval(&self, z: Complex64) -> f64 {
        grid_log_potential(&self.mu.grid, z, self.cfg.refine_depth) - self.grid_k0 + self.tail_part(z)
    }

    pub fn grid_log_moment(&self) -> f64 {
        self.grid_k0
    }
}

/// `V(z)` by quadrature with default refinement.
pub fn potential_eval(mu: &PlanarMeasure, z: Complex64) -> Result<f64, PotentialError> {
    potential_eval_with(mu, z, QuadConfig::default())
}

pub fn potential_eval_with(mu: &PlanarMeasure, z: Complex64, cfg: QuadConfig) -> Result<f64, PotentialError> {
    Ok(PotentialEvaluator::new(mu, cfg)?.eval(z))
}

fn nine_point_density(u: &[f64], stride: usize, i: usize, j: usize, h: f64) -> f64 {
    let at = |di: isize, dj: isize| u[((j as isize + dj) as usize) * stride + (i as isize + di) as usize];
    let edges = at(1, 0) + at(-1, 0) + at(0, 1) + at(0, -1);
    let diags = at(1, 1) + at(1, -1) + at(-1, 1) + at(-1, -1);
    (4.0 * edges + diags - 20.0 * at(0, 0)) / (6.0 * h * h) / (2.0 * PI)
}

fn laplacian_grid<F: Fn(Complex64) -> f64 + Sync>(u: &F, spec: GridSpec) -> (DensityGrid, Option<(Complex64, f64)>) {
    let mut grid = DensityGrid::zeros(spec);
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let stride = nx + 2;
    let samples: Vec<f64> = (0..ny + 2)
        .into_par_iter()
        .flat_map_iter(|j| {
            let y = grid.y0 + (j as f64 - 0.5) * h;
            let x0 = grid.x0;
            (0..nx + 2).map(move |i| u(Complex64::new(x0 + (i as f64 - 0.5) * h, y)))
        })
        .collect();
    let mut worst: Option<(Complex64, f64)> = None;
    for j in 0..ny {
        for i in 0..nx {
            let d = nine_point_density(&samples, stride, i + 1, j + 1, h);
            if d < 0.0 && worst.is_none_or(|(_, w)| d < w) {
                worst = Some((grid.cell_center(i, j), d));
            }
            grid.values[j * nx + i] = d.max(0.0);
        }
    }
    (grid, worst)
}

/// Riesz measure `(1/2π)Δu` sampled at cell centers.
///
/// The Laplacian uses the isotropic nine-point stencil, whose truncation error
/// vanishes to sixth order on harmonic functions; the five-point stencil
/// leaves `O(h²)` negative noise next to the singularities of functions like
/// `log|t|`. Values in `[-1e-8, 0)` are set to zero; anything more negative is
/// reported. The grid mass is compared against a run at `h/2`.
pub fn riesz_density<F: Fn(Complex64) -> f64 + Sync>(
    u: F,
    spec: GridSpec,
    tail: Tail,
) -> Result<PlanarMeasure, PotentialError> {
    let (grid, worst) = laplacian_grid(&u, spec);
    if let Some((at, value)) = worst {
        if value < -1e-8 {
            return Err(PotentialError::NonSubharmonic { at, value });
        }
    }
    let (fine, _) = laplacian_grid(&u, GridSpec { half_side: spec.half_side, h: 0.5 * spec.h });
    let change = (grid.total_mass() - fine.total_mass()).abs();
    if change > 1e-3 {
        return Err(PotentialError::GridTooCoarse { change });
    }
    let a_max = grid.max_value();
    Ok(PlanarMeasure { grid, tail, a_max, exact: None })
}

/// Convolution with the bump `(1 - r²/h²)³`, normalized per source cell over
/// the target cells inside the grid so that no mass leaves it.
///
/// A radius below half a cell reaches no neighbor and returns the input.
pub fn mollify(mu: &PlanarMeasure, h: f64) -> PlanarMeasure {
    let g = &mu.grid;
    if h <= 0.0 || h < 0.5 * g.h {
        return mu.clone();
    }
    let reach = (h / g.h).ceil() as isize;
    let mut stencil = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let d2 = ((di * di + dj * dj) as f64) * g.h * g.h;
            if d2 < h * h {
                let t = 1.0 - d2 / (h * h);
                stencil.push((di, dj, t * t * t));
            }
        }
    }
    if stencil.len() == 1 {
        return mu.clone();
    }
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    let mut out = vec![0.0; g.values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let a = g.values[(j * nx + i) as usize];
            if a == 0.0 {
                continue;
            }
            let inside = |&(di, dj, _): &&(isize, isize, f64)| {
                let (ti, tj) = (i + di, j + dj);
                ti >= 0 && tj >= 0 && ti < nx && tj < ny
            };
            let norm: f64 = stencil.iter().filter(inside).map(|s| s.2).sum();
            for &(di, dj, w) in stencil.iter().filter(inside) {
                out[((j + dj) * nx + i + di) as usize] += a * w / norm;
            }
        }
    }
    let grid = DensityGrid { values: out, ..g.clone() };
    let tail_sup = match mu.tail {
        Tail::Radial { profile, half_side } => profile.density(half_side),
        Tail::None => 0.0,
    };
    PlanarMeasure { a_max: grid.max_value().max(tail_sup), grid, tail: mu.tail, exact: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub total_mass: f64,
    pub log_moment: f64,
    /// `(R, V(R) - log R)` at the three probe radii.
    pub limit_samples: Vec<(f64, f64)>,
    pub c_infinity: f64,
    pub limit_deviation: f64,
    pub pass: bool,
    pub reasons: Vec<String>,
}

/// `∫_cell |log|ζ|| dσ`; cells crossing the unit circle are split 4×4.
fn cell_abs_log_integral(cell: &Rect) -> f64 {
    let o = Complex64::new(0.0, 0.0);
    let corners = cell.corners();
    let rmin = cell.distance(o);
    let rmax = corners.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if rmax <= 1.0 {
        -cell_log_integral(cell, o, 2)
    } else if rmin >= 1.0 {
        cell_log_integral(cell, o, 2)
    } else {
        let n = 4;
        let (dx, dy) = (cell.width() / n as f64, cell.height() / n as f64);
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let sub = Rect::new(
                    cell.x0 + i as f64 * dx,
                    cell.y0 + j as f64 * dy,
                    cell.x0 + (i + 1) as f64 * dx,
                    cell.y0 + (j + 1) as f64 * dy,
                );
                acc += log_rect_integral(&sub, o).abs();
            }
        }
        acc
    }
}

pub fn check_admissibility(mu: &PlanarMeasure) -> AdmissibilityReport {
    let total_mass = mu.total_mass();
    let g = &mu.grid;
    let mut log_moment = 0.0;
    for j in 0..g.ny {
        let mut row = 0.0;
        for i in 0..g.nx {
            let a = g.value(i, j);
            if a > 0.0 {
                row += a * cell_abs_log_integral(&g.cell(i, j));
            }
        }
        log_moment += row;
    }
    if let Tail::Radial { profile, half_side } = mu.tail {
        // Tail lies outside Q_{R0}; with R0 ≥ 1 the logarithm is positive there.
        log_moment += profile.log_moment_outside_square(half_side).abs();
    }
    let r0 = g.bounds().x1.abs().max(g.bounds().x0.abs());
    let mut reasons = Vec::new();
    let limit_samples: Vec<(f64, f64)> = match PotentialEvaluator::new(mu, QuadConfig::default()) {
        Ok(e) => [1e3, 1e4, 1e5]
            .iter()
            .map(|s| {
                let r = s * r0;
                (r, e.eval(Complex64::new(r, 0.0)) - r.ln())
            })
            .collect(),
        Err(err) => {
            reasons.push(err.to_string());
            Vec::new()
        }
    };
    let lo = limit_samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = limit_samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let limit_deviation = hi - lo;
    let c_infinity = limit_samples.last().map_or(f64::NAN, |s| s.1);
    if (total_mass - 1.0).abs() > 1e-6 {
        reasons.push(format!("total mass {total_mass} differs from 1 by more than 1e-6"));
    }
    if !log_moment.is_finite() {
        reasons.push("log-moment is not finite".into());
    }
    if !(limit_deviation <= 1e-2) {
        reasons.push(format!("V(z) - log|z| varies by {limit_deviation:e} over the probe radii"));
    }
    AdmissibilityReport {
        total_mass,
        log_moment,
        limit_samples,
        c_infinity,
        limit_deviation,
        pass: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailParameters {
    pub eta: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub r_infty: f64,
    pub w_primary: Complex64,
    pub w_secondary: Complex64,
    pub c0: f64,
    /// Achieved `μ(C \ Q_R)`.
    pub tail_mass: f64,
    /// `max a` over `|z| > R/3`.
    pub far_density: f64,
}

impl TailParameters {
    pub fn smalla_holds(&self) -> bool {
        self.far_density <= self.eta
    }
}

/// Largest density over `|z| > radius`, assuming any tail profile decreases
/// radially beyond the grid.
fn max_density_beyond(mu: &PlanarMeasure, radius: f64) -> f64 {
    let g = &mu.grid;
    let mut best: f64 = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let a = g.value(i, j);
            if a > best {
                let far = g.cell(i, j).corners().iter().map(|c| c.norm()).fold(0.0, f64::max);
                if far > radius {
                    best = a;
                }
            }
        }
    }
    if let Tail::Radial { profile, half_side } = mu.tail {
        best = best.max(profile.density(radius.max(half_side)));
    }
    best
}

/// Half-side `R` with `μ(C \ Q_R) = 1/m`.
fn solve_tail_square(mu: &PlanarMeasure, table: &MassTable, m: usize) -> Result<(f64, f64), TailError> {
    let target = 1.0 / m as f64;
    let f = |r: f64| mu.mass_outside_square(table, r);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(TailError::NoSuchR { m, achieved: f(hi) });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let r = 0.5 * (lo + hi);
    let achieved = f(r);
    if ((achieved - target) / target).abs() > 1e-6 {
        return Err(TailError::NoSuchR { m, achieved });
    }
    Ok((r, achieved))
}

fn tail_parameters_for(mu: &PlanarMeasure, table: &MassTable, m: usize, eta: f64) -> Result<TailParameters, TailError> {
    let (r, tail_mass) = solve_tail_square(mu, table, m)?;
    let outside = mu.log_moment_outside_square(r);
    let c0 = mu.log_moment() - outside;
    let r_infty = (m as f64 * outside).exp();
    let w = Complex64::new(10.0 * r_infty, 0.0);
    Ok(TailParameters {
        eta,
        r,
        m,
        r_infty,
        w_primary: w,
        w_secondary: -w,
        c0,
        tail_mass,
        far_density: max_density_beyond(mu, r / 3.0),
    })
}

/// Tail square, tail atom and normalizing constant for a target accuracy.
///
/// `M = ⌈1/η⌉ + 1`. When the density is still above `η` beyond `R/3`, `M` is
/// increased (which pushes `R` out) rather than moving `R` alone, so that the
/// tail mass stays exactly `1/M`.
pub fn select_tail_parameters(mu: &PlanarMeasure, eta: f64) -> Result<TailParameters, TailError> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(TailError::InvalidEta(eta));
    }
    if matches!(mu.tail, Tail::None) {
        return Err(TailError::TailFree);
    }
    let table = mu.mass_table();
    let mut m = (1.0 / eta - 1e-9).ceil() as usize + 1;
    let cap = 64 * m + 10_000;
    while m <= cap {
        let tp = tail_parameters_for(mu, &table, m, eta)?;
        if tp.smalla_holds() {
            return Ok(tp);
        }
        m += 1;
    }
    Err(TailError::SmallaUnreachable(cap))
}

/// Tail parameters for a prescribed `M ≥ 3`, with `η = 1/(M-1)` (the
/// largest `η` that yields this `M`). The `far_density` field tells whether
/// the small-density condition holds; small `M` is used for low-degree
/// constructions where it may not.
pub fn select_tail_parameters_fixed_m(mu: &PlanarMeasure, m: usize) -> Result<TailParameters, TailError> {
    if matches!(mu.tail, Tail::None) {
        return Err(TailError::TailFree);
    }
    if m < 3 {
        return Err(TailError::InvalidEta(1.0 / (m.max(1) as f64 - 1.0).max(0.0)));
    }
    tail_parameters_for(mu, &mu.mass_table(), m, 1.0 / (m as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse(profile: Profile) -> PlanarMeasure {
        PlanarMeasure::from_profile(profile, GridSpec { half_side: 12.0, h: 0.1 })
    }

    #[test]
    fn ball_profile_closed_forms_consistent() {
        let p = Profile::Ball;
        // V(r) = log r · (1 - T(r)) + L(r) - L(0) with L(0) = 0.
        for r in [0.1f64, 0.7, 1.0, 3.0, 40.0] {
            let v = r.ln() * (1.0 - p.survival(r)) + p.log_moment_beyond(r) - p.log_moment_beyond(0.0);
            assert!((v - p.potential(r)).abs() < 1e-13, "r = {r}");
        }
        assert!(p.limit_constant().abs() < 1e-15);
    }

    #[test]
    fn ellipsoid_limit_constant() {
        for c in [0.5, 2.0, 7.0] {
            let p = Profile::Ellipsoid { c };
            assert!((p.limit_constant() - 0.5 * f64::ln(c)).abs() < 1e-13);
            let big = 1e7;
            assert!((p.potential(big) - big.ln() - p.limit_constant()).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_closed_forms_consistent() {
        let p = Profile::Ring { inner: 0.95, outer: 1.05 };
        for r in [0.5f64, 0.97, 1.0, 1.2, 10.0] {
            let v = r.ln() * (1.0 - p.survival(r)) + p.log_moment_beyond(r) - p.log_moment_beyond(0.0);
            assert!((v - p.potential(r)).abs() < 1e-13, "r = {r}");
        }
        assert_eq!(p.potential(0.5), 0.0);
    }

    #[test]
    fn square_tail_mass_matches_disk_bounds() {
        let p = Profile::Ball;
        let m = p.mass_outside_square(5.0);
        assert!(m < p.survival(5.0) && m > p.survival(5.0 * SQRT_2));
    }

    #[test]
    fn ball_measure_has_unit_mass() {
        let mu = coarse(Profile::Ball);
        assert!((mu.total_mass() - 1.0).abs() < 1e-9, "{}", mu.total_mass());
        // Cell averages sit slightly below the peak value 1/π.
        assert!(mu.a_max < 1.0 / PI && mu.a_max > 1.0 / PI - 5e-3);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        // Piecewise-constant cells shift ∫log|ζ|dμ by about -h²/6 (the
        // within-cell density slope against the log kernel); at h = 0.1 that
        // is 1.7e-3.
        let mu = coarse(Profile::Ball);
        let e = PotentialEvaluator::new(&mu, QuadConfig::default()).unwrap();
        assert!(e.eval(Complex64::new(0.0, 0.0)).abs() < 1e-12);
        for z in [Complex64::new(0.3, 0.2), Complex64::new(5.0, -2.0), Complex64::new(15.0, 3.0), Complex64::new(100.0, 0.0)] {
            let want = Profile::Ball.potential(z.norm());
            assert!((e.eval(z) - want).abs() < 2e-3, "{z}: {} vs {want}", e.eval(z));
        }
    }

    #[test]
    fn budget_guard() {
        let mu = coarse(Profile::Ball);
        let cfg = QuadConfig { refine_depth: 13, ..Default::default() };
        assert_eq!(
            potential_eval_with(&mu, Complex64::new(1.0, 0.0), cfg),
            Err(PotentialError::QuadratureBudgetExceeded(13))
        );
    }

    #[test]
    fn riesz_density_of_ball_slice() {
        // Stencil error at the origin is about 0.42·h².
        let spec = GridSpec { half_side: 1.0, h: 0.01 };
        let mu = riesz_density(|t: Complex64| 0.5 * t.norm_sqr().ln_1p(), spec, Tail::None).unwrap();
        for (i, j) in [(100, 100), (130, 90), (180, 20)] {
            let c = mu.grid.cell_center(i, j);
            // Hand-derived: Δ½log(1+r²) = 2/(1+r²)².
            let exact = 2.0 / (1.0 + c.norm_sqr()).powi(2) / (2.0 * PI);
            let got = mu.grid.value(i, j);
            assert!((got - exact).abs() < 1e-4, "{c}: {got} vs {exact}");
        }
    }

    #[test]
    fn riesz_density_of_harmonic_function_vanishes() {
        let spec = GridSpec { half_side: 3.0, h: 0.1 };
        // Sampled only away from the origin: shift the annulus grid.
        let u = |t: Complex64| (t + Complex64::new(10.0, 0.0)).norm().ln();
        let mu = riesz_density(u, spec, Tail::None).unwrap();
        assert!(mu.grid.max_value() < 1e-8);
    }

    #[test]
    fn nonsubharmonic_input_rejected() {
        let spec = GridSpec { half_side: 1.0, h: 0.1 };
        let r = riesz_density(|t: Complex64| -t.norm_sqr(), spec, Tail::None);
        assert!(matches!(r, Err(PotentialError::NonSubharmonic { .. })));
    }

    #[test]
    fn mollify_preserves_mass_and_zero_is_identity() {
        let mut mu = PlanarMeasure::from_profile(Profile::Ring { inner: 0.95, outer: 1.05 }, GridSpec { half_side: 2.0, h: 0.05 });
        assert_eq!(mollify(&mu, 0.0), mu);
        let before = mu.grid_mass();
        let smooth = mollify(&mu, 0.2);
        assert!((smooth.grid_mass() - before).abs() < 1e-12);
        assert!(smooth.a_max <= mu.a_max);
        // Spike column.
        mu.grid.values.iter_mut().for_each(|v| *v = 0.0);
        let n = mu.grid.nx;
        mu.grid.values[(n / 2) * n + n / 2] = 1.0 / (0.05 * 0.05);
        let spread = mollify(&mu, 0.2);
        assert!((spread.grid_mass() - 1.0).abs() < 1e-12);
        let touched = spread.grid.values.iter().filter(|&&v| v > 0.0).count();
        assert!(touched > 40);
    }

    #[test]
    fn tail_parameters_for_ball() {
        let mu = coarse(Profile::Ball);
        let tp = select_tail_parameters(&mu, 0.1).unwrap();
        assert_eq!(tp.m, 11);
        assert!(((tp.tail_mass - 1.0 / 11.0) * 11.0).abs() < 1e-6);
        assert!(tp.r_infty > tp.r / SQRT_2);
        assert!(tp.smalla_holds());
        assert!((tp.w_primary + tp.w_secondary).norm() < 1e-12);
    }

    #[test]
    fn ring_is_tail_free() {
        let mu = PlanarMeasure::builtin("bidisk", GridSpec { half_side: 2.0, h: 0.05 }).unwrap();
        assert_eq!(select_tail_parameters(&mu, 0.1), Err(TailError::TailFree));
        assert_eq!(select_tail_parameters(&mu, 0.7), Err(TailError::InvalidEta(0.7)));
    }

    #[test]
    fn admissibility_of_half_mass_fails() {
        let mut mu = coarse(Profile::Ball);
        mu.grid.values.iter_mut().for_each(|v| *v *= 0.5);
        mu.tail = Tail::None;
        let rep = check_admissibility(&mu);
        assert!(!rep.pass);
    }
}
