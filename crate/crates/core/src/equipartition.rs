//! Equal-mass rectangular partitions of a measure restricted to a square.
//!
//! A node owed `m` pieces is cut perpendicular to its longer side so that the
//! lower part carries `⌊m/2⌋/m` of the node mass; the recursion stops at
//! `m = 1`. The result is a true partition (multiplicity one) whose leaves all
//! carry the same mass up to the bisection tolerance. Unlike an overlapping
//! near-square cover, aspect ratios are not bounded; the worst one is
//! recorded.

use crate::grid::{MassTable, Rect};
use crate::potential::PlanarMeasure;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("k(M-1) = {0} pieces is not a positive count")]
    NonIntegerPieces(i64),
    #[error("rectangle {0:?} carries no mass")]
    ZeroMass(Rect),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRectangle {
    #[serde(flatten)]
    pub bounds: Rect,
    pub mass: f64,
    #[serde(rename = "com")]
    pub center_of_mass: Complex64,
    pub diam: f64,
    pub aspect_ratio: f64,
    pub normal: bool,
}

impl MassRectangle {
    pub fn elongated(&self) -> bool {
        self.aspect_ratio > 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub rectangles: Vec<MassRectangle>,
    pub k: usize,
    /// Mass bookkeeping parameter: pieces carry `1/(kM)`.
    #[serde(rename = "M")]
    pub m: usize,
    pub region: Rect,
    pub piece_mass: f64,
    pub multiplicity_max: usize,
    /// Cuts that fell into zero-density slabs and were placed at the middle of
    /// the gap.
    pub zero_mass_gaps: usize,
    pub worst_aspect_ratio: f64,
}

impl Partition {
    pub fn max_relative_mass_deviation(&self) -> f64 {
        self.rectangles
            .iter()
            .map(|r| ((r.mass - self.piece_mass) / self.piece_mass).abs())
            .fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.rectangles.iter().map(|r| r.mass).sum()
    }

    /// `1 / (3 (M·A)^{1/2} k^{1/2})`, the smallest diameter compatible with
    /// density at most `A`.
    pub fn min_diameter_bound(&self, a_max: f64) -> f64 {
        1.0 / (3.0 * (self.m as f64 * a_max).sqrt() * (self.k as f64).sqrt())
    }

    /// Largest number of leaves sharing an interior point, by checking
    /// pairwise interior overlaps (leaves sorted by `x0`).
    fn measure_multiplicity(rects: &[MassRectangle]) -> usize {
        let mut idx: Vec<usize> = (0..rects.len()).collect();
        idx.sort_by(|&a, &b| rects[a].bounds.x0.total_cmp(&rects[b].bounds.x0));
        let tol = 1e-12;
        let mut overlaps = 0;
        for (n, &a) in idx.iter().enumerate() {
            let ra = &rects[a].bounds;
            for &b in &idx[n + 1..] {
                let rb = &rects[b].bounds;
                if rb.x0 >= ra.x1 - tol {
                    break;
                }
                let ix = ra.x1.min(rb.x1) - ra.x0.max(rb.x0);
                let iy = ra.y1.min(rb.y1) - ra.y0.max(rb.y0);
                if ix > tol && iy > tol {
                    overlaps += 1;
                }
            }
        }
        // One leaf everywhere unless some pair overlaps; the pairwise test
        // bounds the multiplicity from below by two in that case.
        if overlaps == 0 {
            1
        } else {
            2
        }
    }
}

/// Lowest and highest cut coordinates at which the mass below reaches the
/// target, so zero-mass gaps can be split down the middle.
fn cut_interval(f: impl Fn(f64) -> f64, lo: f64, hi: f64, target: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..60 {
        let c = 0.5 * (a + b);
        if f(c) >= target {
            b = c;
        } else {
            a = c;
        }
    }
    let c_lo = b;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..60 {
        let c = 0.5 * (a + b);
        if f(c) <= target {
            a = c;
        } else {
            b = c;
        }
    }
    (c_lo, a.max(c_lo))
}

struct Splitter<'a> {
    table: &'a MassTable,
    leaves: Vec<Rect>,
    gaps: usize,
}

impl Splitter<'_> {
    fn split(&mut self, rect: Rect, pieces: usize) {
        if pieces == 1 {
            self.leaves.push(rect);
            return;
        }
        let node_mass = self.table.mass(&rect);
        let lower = pieces / 2;
        let target = lower as f64 / pieces as f64 * node_mass;
        let along_x = rect.width() >= rect.height();
        let table = self.table;
        let (lo, hi) = if along_x { (rect.x0, rect.x1) } else { (rect.y0, rect.y1) };
        let below = |c: f64| {
            let r = if along_x { Rect { x1: c, ..rect } } else { Rect { y1: c, ..rect } };
            table.mass(&r)
        };
        let (c_lo, c_hi) = cut_interval(below, lo, hi, target);
        if c_hi - c_lo > 1e-9 * (hi - lo) {
            self.gaps += 1;
        }
        let cut = 0.5 * (c_lo + c_hi);
        let (first, second) = if along_x {
            (Rect { x1: cut, ..rect }, Rect { x0: cut, ..rect })
        } else {
            (Rect { y1: cut, ..rect }, Rect { y0: cut, ..rect })
        };
        self.split(first, lower);
        self.split(second, pieces - lower);
    }
}

/// `∫_r ζ dμ / μ(r)`, summing cell overlaps.
pub fn center_of_mass(r: &Rect, mu: &PlanarMeasure) -> Result<Complex64, PartitionError> {
    let g = &mu.grid;
    let Some((i0, i1, j0, j1)) = g.cell_range(r) else {
        return Err(PartitionError::ZeroMass(*r));
    };
    let mut mass = 0.0;
    let mut moment = Complex64::new(0.0, 0.0);
    for j in j0..j1 {
        for i in i0..i1 {
            let a = g.value(i, j);
            if a == 0.0 {
                continue;
            }
            if let Some(o) = g.cell(i, j).intersect(r) {
                let m = a * o.area();
                mass += m;
                moment += o.center() * m;
            }
        }
    }
    if mass <= 0.0 {
        return Err(PartitionError::ZeroMass(*r));
    }
    Ok(moment / mass)
}

/// Splits `mu` restricted to `region` into `pieces` rectangles, each meant
/// to carry `piece_mass`. `k` and `m` are recorded for classification.
pub fn partition_pieces(
    mu: &PlanarMeasure,
    table: &MassTable,
    region: Rect,
    pieces: usize,
    piece_mass: f64,
    k: usize,
    m: usize,
) -> Result<Partition, PartitionError> {
    if pieces == 0 {
        return Err(PartitionError::NonIntegerPieces(0));
    }
    let mut s = Splitter { table, leaves: Vec::with_capacity(pieces), gaps: 0 };
    s.split(region, pieces);
    let mut rectangles = Vec::with_capacity(pieces);
    for b in &s.leaves {
        rectangles.push(MassRectangle {
            bounds: *b,
            mass: table.mass(b),
            center_of_mass: center_of_mass(b, mu)?,
            diam: b.diam(),
            aspect_ratio: b.aspect_ratio(),
            normal: false,
        });
    }
    let worst_aspect_ratio = rectangles.iter().map(|r| r.aspect_ratio).fold(1.0, f64::max);
    let multiplicity_max = Partition::measure_multiplicity(&rectangles);
    Ok(Partition {
        rectangles,
        k,
        m,
        region,
        piece_mass,
        multiplicity_max,
        zero_mass_gaps: s.gaps,
        worst_aspect_ratio,
    })
}

/// `k(M-1)` pieces of mass `1/(kM)` covering `mu` restricted to `Q_R`.
pub fn partition(mu: &PlanarMeasure, half_side: f64, k: usize, m: usize) -> Result<Partition, PartitionError> {
    let count = k as i64 * (m as i64 - 1);
    if count < 1 {
        return Err(PartitionError::NonIntegerPieces(count));
    }
    let table = mu.mass_table();
    partition_pieces(mu, &table, Rect::square(half_side), count as usize, 1.0 / (k * m) as f64, k, m)
}

/// `2k` pieces of mass `1/(2k)` covering a compactly supported `mu`.
pub fn partition_tail_free(mu: &PlanarMeasure, k: usize) -> Result<Partition, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NonIntegerPieces(0));
    }
    let table = mu.mass_table();
    let region = mu.grid.support_bounds().ok_or(PartitionError::ZeroMass(mu.grid.bounds()))?;
    let total = table.mass(&region);
    partition_pieces(mu, &table, region, 2 * k, total / (2 * k) as f64, k, 2)
}

/// Diameter threshold `k^{1/3} / (3 (M·A)^{1/2} k^{1/2})`.
pub fn normal_threshold(k: usize, m: usize, a_max: f64) -> f64 {
    let k = k as f64;
    k.cbrt() / (3.0 * (m as f64 * a_max).sqrt() * k.sqrt())
}

/// Marks rectangles with diameter at most the threshold as normal and
/// returns the normal and non-normal index sets.
pub fn classify_normal(p: &mut Partition, a_max: f64) -> (Vec<usize>, Vec<usize>) {
    let t = normal_threshold(p.k, p.m, a_max);
    let (mut normal, mut other) = (Vec::new(), Vec::new());
    for (l, r) in p.rectangles.iter_mut().enumerate() {
        r.normal = r.diam <= t;
        if r.normal {
            normal.push(l);
        } else {
            other.push(l);
        }
    }
    (normal, other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DensityGrid, GridSpec};
    use crate::potential::Tail;

    fn uniform(half_side: f64, h: f64) -> PlanarMeasure {
        let mut grid = DensityGrid::zeros(GridSpec { half_side, h });
        let v = 1.0 / (4.0 * half_side * half_side);
        grid.values.iter_mut().for_each(|x| *x = v);
        PlanarMeasure { a_max: v, grid, tail: Tail::None, exact: None }
    }

    #[test]
    fn uniform_square_into_four() {
        let mu = uniform(1.0, 0.1);
        let table = mu.mass_table();
        let p = partition_pieces(&mu, &table, Rect::square(1.0), 4, 0.25, 1, 5).unwrap();
        assert_eq!(p.rectangles.len(), 4);
        for r in &p.rectangles {
            assert!((r.mass - 0.25).abs() < 1e-12);
            assert!((r.bounds.width() - 1.0).abs() < 1e-12 && (r.bounds.height() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.multiplicity_max, 1);
    }

    #[test]
    fn unit_square_halves() {
        let mut grid = DensityGrid { x0: 0.0, y0: 0.0, h: 0.1, nx: 10, ny: 10, values: vec![1.0; 100] };
        grid.values.iter_mut().for_each(|x| *x = 1.0);
        let mu = PlanarMeasure { a_max: 1.0, grid, tail: Tail::None, exact: None };
        let table = mu.mass_table();
        let p = partition_pieces(&mu, &table, Rect::new(0.0, 0.0, 1.0, 1.0), 2, 0.5, 1, 2).unwrap();
        let c: Vec<_> = p.rectangles.iter().map(|r| r.center_of_mass).collect();
        assert!((c[0] - Complex64::new(0.25, 0.5)).norm() < 1e-12);
        assert!((c[1] - Complex64::new(0.75, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn linear_density_center_of_mass() {
        let n = 200;
        let h = 1.0 / n as f64;
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                values[j * n + i] = (i as f64 + 0.5) * h * 2.0;
            }
        }
        let grid = DensityGrid { x0: 0.0, y0: 0.0, h, nx: n, ny: n, values };
        let mu = PlanarMeasure { a_max: 2.0, grid, tail: Tail::None, exact: None };
        let c = center_of_mass(&Rect::new(0.0, 0.0, 1.0, 1.0), &mu).unwrap();
        assert!((c.re - 2.0 / 3.0).abs() < 1e-3);
        assert!((c.im - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_gap_cut_in_middle() {
        // Mass in two columns at the edges; the single cut lands mid-gap.
        let n = 10;
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            values[j * n] = 5.0;
            values[j * n + n - 1] = 5.0;
        }
        let grid = DensityGrid { x0: 0.0, y0: 0.0, h: 0.1, nx: n, ny: n, values };
        let mu = PlanarMeasure { a_max: 5.0, grid, tail: Tail::None, exact: None };
        let table = mu.mass_table();
        let p = partition_pieces(&mu, &table, Rect::new(0.0, 0.0, 1.0, 1.0), 2, 0.5, 1, 2).unwrap();
        assert_eq!(p.zero_mass_gaps, 1);
        assert!((p.rectangles[0].bounds.x1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_rectangle_has_no_center() {
        let mu = uniform(1.0, 0.1);
        assert!(matches!(center_of_mass(&Rect::new(5.0, 5.0, 6.0, 6.0), &mu), Err(PartitionError::ZeroMass(_))));
    }

    #[test]
    fn piece_count_guard() {
        let mu = uniform(1.0, 0.1);
        assert_eq!(partition(&mu, 1.0, 1, 1), Err(PartitionError::NonIntegerPieces(0)));
    }

    #[test]
    fn classification_threshold() {
        let mu = uniform(1.0, 0.05);
        let mut p = partition(&mu, 1.0, 1, 5).unwrap();
        let t = normal_threshold(1, 5, mu.a_max);
        assert!((t - 1.0 / (3.0 * (5.0 * mu.a_max).sqrt())).abs() < 1e-15);
        let (normal, other) = classify_normal(&mut p, mu.a_max);
        assert_eq!(normal.len() + other.len(), 4);
        for l in other {
            assert!(p.rectangles[l].diam > t);
        }
    }
}
