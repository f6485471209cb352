//! Piecewise-constant densities on a uniform grid.
//!
//! A cell carries a constant density, so masses of arbitrary axis-parallel
//! rectangles are exact (bilinear interpolation of the summed-area table), and
//! so are integrals of `log|ζ - z|` over a cell, via the closed-form
//! antiderivative [`log_rect_integral`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Axis-parallel rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// The square `Q_R = [-R, R]²`.
    pub fn square(half_side: f64) -> Self {
        Self::new(-half_side, -half_side, half_side, half_side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diam(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn aspect_ratio(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        if w.min(h) == 0.0 {
            f64::INFINITY
        } else {
            w.max(h) / w.min(h)
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.x0 && z.re <= self.x1 && z.im >= self.y0 && z.im <= self.y1
    }

    pub fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1));
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    /// Distance from `z` to the rectangle (0 inside).
    pub fn distance(&self, z: Complex64) -> f64 {
        let dx = (self.x0 - z.re).max(0.0).max(z.re - self.x1);
        let dy = (self.y0 - z.im).max(0.0).max(z.im - self.y1);
        dx.hypot(dy)
    }

    pub fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.x0, self.y0),
            Complex64::new(self.x1, self.y0),
            Complex64::new(self.x1, self.y1),
            Complex64::new(self.x0, self.y1),
        ]
    }
}

fn g(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return 0.0;
    }
    let mut v = x * y * r2.ln() - 3.0 * x * y;
    if x != 0.0 {
        v += x * x * (y / x).atan();
    }
    if y != 0.0 {
        v += y * y * (x / y).atan();
    }
    v
}

/// `∫∫_rect log|ζ - z| dσ(ζ)`, exact up to rounding.
///
/// Uses `∂²G/∂x∂y = log(x² + y²)` for the `G` above. Subject to cancellation
/// when the rectangle is far from `z`; meant for near-field cells.
pub fn log_rect_integral(rect: &Rect, z: Complex64) -> f64 {
    let (ax, bx) = (rect.x0 - z.re, rect.x1 - z.re);
    let (ay, by) = (rect.y0 - z.im, rect.y1 - z.im);
    0.5 * (g(bx, by) - g(ax, by) - g(bx, ay) + g(ax, ay))
}

/// Grid specification for builtin profiles: `[-half_side, half_side]²` with
/// cell size `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_side: f64,
    pub h: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_side: 12.0, h: 0.05 }
    }
}

impl GridSpec {
    pub fn cells_per_side(&self) -> usize {
        (2.0 * self.half_side / self.h).round() as usize
    }
}

/// Row-major density values; cell `(i, j)` covers
/// `[x0 + i·h, x0 + (i+1)·h] × [y0 + j·h, y0 + (j+1)·h]` and is stored at
/// `values[j·nx + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.cells_per_side();
        Self {
            x0: -spec.half_side,
            y0: -spec.half_side,
            h: spec.h,
            nx: n,
            ny: n,
            values: vec![0.0; n * n],
        }
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(self.x0, self.y0, self.x0 + self.nx as f64 * self.h, self.y0 + self.ny as f64 * self.h)
    }

    pub fn cell(&self, i: usize, j: usize) -> Rect {
        let x = self.x0 + i as f64 * self.h;
        let y = self.y0 + j as f64 * self.h;
        Rect::new(x, y, x + self.h, y + self.h)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Row sums accumulated left to right, then rows bottom to top: a fixed
    /// order, so results are bit-stable.
    pub fn total_mass(&self) -> f64 {
        let cell_area = self.h * self.h;
        self.values
            .chunks(self.nx)
            .map(|row| row.iter().sum::<f64>())
            .sum::<f64>()
            * cell_area
    }

    /// Index range of cells overlapping `r` (clamped to the grid).
    pub fn cell_range(&self, r: &Rect) -> Option<(usize, usize, usize, usize)> {
        let b = self.bounds();
        let c = r.intersect(&b)?;
        let i0 = ((c.x0 - self.x0) / self.h).floor().max(0.0) as usize;
        let j0 = ((c.y0 - self.y0) / self.h).floor().max(0.0) as usize;
        let i1 = (((c.x1 - self.x0) / self.h).ceil() as usize).min(self.nx);
        let j1 = (((c.y1 - self.y0) / self.h).ceil() as usize).min(self.ny);
        (i0 < i1 && j0 < j1).then_some((i0, i1, j0, j1))
    }

    /// Smallest rectangle containing every cell with positive density.
    pub fn support_bounds(&self) -> Option<Rect> {
        let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
        for j in 0..self.ny {
            for i in 0..self.nx {
                if self.value(i, j) > 0.0 {
                    i0 = i0.min(i);
                    i1 = i1.max(i + 1);
                    j0 = j0.min(j);
                    j1 = j1.max(j + 1);
                }
            }
        }
        (i0 != usize::MAX).then(|| {
            Rect::new(
                self.x0 + i0 as f64 * self.h,
                self.y0 + j0 as f64 * self.h,
                self.x0 + i1 as f64 * self.h,
                self.y0 + j1 as f64 * self.h,
            )
        })
    }
}

/// Summed-area table: `cum[j·(nx+1) + i]` is the mass of the first `i`
/// columns and `j` rows.
#[derive(Debug, Clone)]
pub struct MassTable {
    grid_x0: f64,
    grid_y0: f64,
    h: f64,
    nx: usize,
    ny: usize,
    cum: Vec<f64>,
}

impl MassTable {
    pub fn new(grid: &DensityGrid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let area = grid.h * grid.h;
        let mut cum = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..ny {
            let mut row = 0.0;
            for i in 0..nx {
                row += grid.value(i, j) * area;
                cum[(j + 1) * (nx + 1) + i + 1] = cum[j * (nx + 1) + i + 1] + row;
            }
        }
        Self { grid_x0: grid.x0, grid_y0: grid.y0, h: grid.h, nx, ny, cum }
    }

    /// Mass of `[x0, x] × [y0, y]`, exact for piecewise-constant density.
    fn cumulative(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.grid_x0) / self.h).clamp(0.0, self.nx as f64);
        let fy = ((y - self.grid_y0) / self.h).clamp(0.0, self.ny as f64);
        let i = (fx.floor() as usize).min(self.nx.saturating_sub(1));
        let j = (fy.floor() as usize).min(self.ny.saturating_sub(1));
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let w = self.nx + 1;
        let c00 = self.cum[j * w + i];
        let c10 = self.cum[j * w + i + 1];
        let c01 = self.cum[(j + 1) * w + i];
        let c11 = self.cum[(j + 1) * w + i + 1];
        c00 + tx * (c10 - c00) + ty * (c01 - c00) + tx * ty * (c11 - c10 - c01 + c00)
    }

    pub fn mass(&self, r: &Rect) -> f64 {
        if r.x1 <= r.x0 || r.y1 <= r.y0 {
            return 0.0;
        }
        let m = self.cumulative(r.x1, r.y1) - self.cumulative(r.x0, r.y1) - self.cumulative(r.x1, r.y0)
            + self.cumulative(r.x0, r.y0);
        m.max(0.0)
    }

    pub fn total(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    x.into_iter().zip(w).map(|(xi, wi)| (m + r * xi, r * wi)).collect()
}
