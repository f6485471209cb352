//! Equal-mass partitions checked leaf by leaf against a brute-force overlap
//! sum over the density cells.

use lemnika_core::equipartition::*;
use lemnika_core::grid::{DensityGrid, GridSpec, Rect};
use lemnika_core::potential::{select_tail_parameters, PlanarMeasure, Tail};
use proptest::prelude::*;

/// `μ(r)` by summing `a_cell · |cell ∩ r|` over every cell.
fn brute_mass(mu: &PlanarMeasure, r: &Rect) -> f64 {
    let g = &mu.grid;
    let mut s = 0.0;
    for j in 0..g.ny {
        let row: f64 = (0..g.nx)
            .filter_map(|i| g.cell(i, j).intersect(r).map(|o| g.value(i, j) * o.area()))
            .sum();
        s += row;
    }
    s
}

fn uniform(half_side: f64, h: f64) -> PlanarMeasure {
    let mut grid = DensityGrid::zeros(GridSpec { half_side, h });
    let v = 1.0 / (4.0 * half_side * half_side);
    grid.values.iter_mut().for_each(|x| *x = v);
    PlanarMeasure { a_max: v, grid, tail: Tail::None, exact: None }
}

#[test]
fn ball_partition_k40_m11() {
    let mu = PlanarMeasure::builtin("ball", GridSpec::default()).unwrap();
    let tp = select_tail_parameters(&mu, 0.1).unwrap();
    assert_eq!(tp.m, 11);
    let p = partition(&mu, tp.r, 40, 11).unwrap();
    assert_eq!(p.rectangles.len(), 400);
    assert_eq!(p.multiplicity_max, 1);
    let piece = 1.0 / 440.0;
    let worst = p
        .rectangles
        .iter()
        .map(|r| ((brute_mass(&mu, &r.bounds) - piece) / piece).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
    assert!((p.total_mass() - 10.0 / 11.0).abs() < 1e-5);
    let bound = p.min_diameter_bound(mu.a_max);
    for r in &p.rectangles {
        assert!(r.diam >= bound, "{} < {bound}", r.diam);
        let c = r.center_of_mass;
        assert!(r.bounds.contains(c));
    }
}

#[test]
fn uniform_symmetric_cases_are_exact() {
    let mu = uniform(1.0, 0.05);
    let table = mu.mass_table();
    let p = partition_pieces(&mu, &table, Rect::square(1.0), 16, 1.0 / 16.0, 4, 5).unwrap();
    for r in &p.rectangles {
        assert!((r.mass - 1.0 / 16.0).abs() < 1e-12);
        assert!((r.bounds.width() - 0.5).abs() < 1e-12 && (r.bounds.height() - 0.5).abs() < 1e-12);
        assert!((r.center_of_mass - r.bounds.center()).norm() < 1e-12);
    }
}

#[test]
fn large_k_uniform_partition_is_all_normal() {
    let mu = uniform(1.0, 0.02);
    let mut p = partition(&mu, 1.0, 400, 2).unwrap();
    let (normal, other) = classify_normal(&mut p, mu.a_max);
    assert_eq!(normal.len(), 400);
    assert!(other.is_empty());
    // k = 1 keeps a well-defined threshold.
    let t = normal_threshold(1, 2, mu.a_max);
    assert!((t - 1.0 / (3.0 * (2.0 * mu.a_max).sqrt())).abs() < 1e-15);
}

#[test]
fn far_out_ball_rectangle_center_of_mass_is_inside() {
    let mu = PlanarMeasure::builtin("ball", GridSpec::default()).unwrap();
    let r = Rect::new(9.0, -3.0, 9.5, -2.2);
    assert!(r.contains(center_of_mass(&r, &mu).unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn leaf_invariants(k in 1usize..12, m in 2usize..8, which in 0usize..3) {
        let name = ["ball", "ellipsoid:0.5", "ellipsoid:2"][which];
        let mu = PlanarMeasure::builtin(name, GridSpec { half_side: 8.0, h: 0.1 }).unwrap();
        let eta = 1.0 / (m as f64 - 0.5);
        let tp = select_tail_parameters(&mu, eta.min(0.49)).unwrap();
        let p = partition(&mu, tp.r, k, tp.m).unwrap();
        prop_assert_eq!(p.rectangles.len(), k * (tp.m - 1));
        prop_assert_eq!(p.multiplicity_max, 1);
        let restricted = (tp.m - 1) as f64 / tp.m as f64;
        prop_assert!((p.total_mass() - restricted).abs() < 1e-5);
        prop_assert!(p.max_relative_mass_deviation() <= 1e-3);
        let bound = p.min_diameter_bound(mu.a_max);
        for r in &p.rectangles {
            prop_assert!(r.diam >= bound);
            prop_assert!(r.bounds.contains(r.center_of_mass));
        }
        // Leaves tile the region.
        let area: f64 = p.rectangles.iter().map(|r| r.bounds.area()).sum();
        prop_assert!((area - p.region.area()).abs() < 1e-9 * p.region.area());
    }

    #[test]
    fn center_of_mass_is_stable_under_grid_refinement(k in 1usize..6) {
        let coarse = PlanarMeasure::builtin("ball", GridSpec { half_side: 8.0, h: 0.05 }).unwrap();
        let fine = PlanarMeasure::builtin("ball", GridSpec { half_side: 8.0, h: 0.025 }).unwrap();
        let tp = select_tail_parameters(&coarse, 0.3).unwrap();
        let p = partition(&coarse, tp.r, k, tp.m).unwrap();
        for r in &p.rectangles {
            let a = center_of_mass(&r.bounds, &coarse).unwrap();
            let b = center_of_mass(&r.bounds, &fine).unwrap();
            prop_assert!((a - b).norm() <= 1e-3 * r.diam, "{} vs {}", (a - b).norm(), r.diam);
        }
    }
}
