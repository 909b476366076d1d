//! Euclidean projection onto the feasible departure set: every
//! (class, length) row nonnegative with its demand as total.
//!
//! Row-wise, the projection of `g` is `max(g + s, 0)` where the multiplier
//! `s` solves `sum max(g_n + s, 0) = m`. The left side is piecewise linear
//! and nondecreasing in `s`, so it can be solved exactly by scanning sorted
//! breakpoints or by a monotone Newton iteration.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DemandProfile, DeparturePattern, Tensor3};

/// Lagrange multiplier of one row's mass constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMultiplier {
    pub sigma: f64,
}

/// Exact multiplier by sorting the row.
pub fn solve_multiplier(g_row: &[f64], mass: f64) -> Result<RowMultiplier> {
    if !(mass > 0.0) {
        return Err(Error::EmptyRow(mass));
    }
    let mut sorted = g_row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // With the top j entries active, s = (m - sum_{i<j} g_i) / j; the active
    // set is the largest j whose smallest member stays positive.
    let mut prefix = 0.0;
    let mut sigma = f64::NAN;
    for (j, &g) in sorted.iter().enumerate() {
        prefix += g;
        let candidate = (mass - prefix) / (j + 1) as f64;
        if g + candidate > 0.0 {
            sigma = candidate;
        } else {
            break;
        }
    }
    Ok(RowMultiplier { sigma })
}

/// Newton iteration on the piecewise-linear mass map, optionally warm
/// started. Iterates approach the root from the right and terminate after
/// at most `g_row.len()` active-set changes.
pub fn solve_multiplier_newton(
    g_row: &[f64],
    mass: f64,
    warm: Option<f64>,
) -> Result<RowMultiplier> {
    if !(mass > 0.0) {
        return Err(Error::EmptyRow(mass));
    }
    let excess = |s: f64| -> (f64, usize) {
        let mut total = 0.0;
        let mut active = 0;
        for &g in g_row {
            if g + s > 0.0 {
                total += g + s;
                active += 1;
            }
        }
        (total - mass, active)
    };
    let min_g = g_row.iter().copied().fold(f64::INFINITY, f64::min);
    // every entry active here, so the map is at least `mass`
    let upper = -min_g + mass / g_row.len() as f64;
    let mut s = match warm {
        Some(w) if w.is_finite() && excess(w).0 >= 0.0 => w,
        _ => upper,
    };
    for _ in 0..=2 * g_row.len() + 2 {
        let (e, active) = excess(s);
        if e <= 0.0 || active == 0 {
            break;
        }
        let next = s - e / active as f64;
        if !(next < s) {
            break;
        }
        s = next;
    }
    Ok(RowMultiplier { sigma: s })
}

fn project_row(g_row: &[f64], mass: f64, out: &mut [f64]) {
    if !(mass > 0.0) {
        out.fill(0.0);
        return;
    }
    // already feasible rows are fixed points
    if g_row.iter().all(|&g| g >= 0.0) && g_row.iter().sum::<f64>() == mass {
        out.copy_from_slice(g_row);
        return;
    }
    let sigma = solve_multiplier(g_row, mass)
        .map(|r| r.sigma)
        .unwrap_or(0.0);
    for (o, &g) in out.iter_mut().zip(g_row) {
        *o = (g + sigma).max(0.0);
    }
}

/// Project every row of `g` onto its demand simplex.
pub fn project(g: &Tensor3, demand: &DemandProfile) -> Result<DeparturePattern> {
    let (nk, nl, nn) = g.dims();
    if nk != demand.n_classes() || nl != demand.n_length() {
        return Err(Error::DimensionMismatch(format!(
            "tensor {:?} vs demand {}x{}",
            g.dims(),
            demand.n_classes(),
            demand.n_length()
        )));
    }
    let mut out = Tensor3::zeros(g.dims());
    out.as_mut_slice()
        .par_chunks_mut(nn.max(1))
        .enumerate()
        .for_each(|(row, chunk)| {
            let (k, l) = (row / nl, row % nl);
            project_row(g.row(k, l), demand.get(k, l), chunk);
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn feasible_input_is_fixed() {
        let d = DemandProfile::from_vec(1, 1, vec![6.0]).unwrap();
        let g = Tensor3::from_vec((1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(project(&g, &d).unwrap(), g);
    }

    #[test]
    fn constant_row_becomes_uniform() {
        let d = DemandProfile::from_vec(1, 1, vec![10.0]).unwrap();
        let g = Tensor3::from_vec((1, 1, 4), vec![7.0; 4]).unwrap();
        let p = project(&g, &d).unwrap();
        for &x in p.as_slice() {
            assert_relative_eq!(x, 2.5);
        }
    }

    #[test]
    fn worked_three_vector() {
        let d = DemandProfile::from_vec(1, 1, vec![3.0]).unwrap();
        let g = Tensor3::from_vec((1, 1, 3), vec![3.0, 1.0, 0.0]).unwrap();
        let p = project(&g, &d).unwrap();
        assert_eq!(p.as_slice(), &[2.5, 0.5, 0.0]);
        assert_eq!(solve_multiplier(&[3.0, 1.0, 0.0], 3.0).unwrap().sigma, -0.5);
    }

    #[test]
    fn multiplier_examples() {
        assert_eq!(solve_multiplier(&[0.0; 5], 5.0).unwrap().sigma, 1.0);
        assert_eq!(solve_multiplier(&[10.0, -10.0], 1.0).unwrap().sigma, -9.0);
        assert_eq!(
            solve_multiplier(&[1.0], 0.0).unwrap_err().code(),
            "empty_row"
        );
        assert_eq!(
            solve_multiplier_newton(&[1.0], -1.0, None)
                .unwrap_err()
                .code(),
            "empty_row"
        );
    }

    #[test]
    fn zero_mass_row_is_zero() {
        let d = DemandProfile::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let g = Tensor3::from_vec((1, 2, 2), vec![5.0, 3.0, 0.2, 0.4]).unwrap();
        let p = project(&g, &d).unwrap();
        assert_eq!(p.row(0, 0), &[0.0, 0.0]);
        assert_relative_eq!(p.row(0, 1)[0] + p.row(0, 1)[1], 1.0);
    }

    #[test]
    fn newton_agrees_with_sort() {
        let rows: [(&[f64], f64); 4] = [
            (&[3.0, 1.0, 0.0], 3.0),
            (&[10.0, -10.0], 1.0),
            (&[-5.0, -6.0, -7.0, 0.5], 12.0),
            (&[0.1, 0.2, 0.3, 0.4, 0.5], 0.05),
        ];
        for (g, m) in rows {
            let a = solve_multiplier(g, m).unwrap().sigma;
            let b = solve_multiplier_newton(g, m, None).unwrap().sigma;
            let c = solve_multiplier_newton(g, m, Some(a + 3.0)).unwrap().sigma;
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch() {
        let d = DemandProfile::zeros(2, 2);
        assert!(project(&Tensor3::zeros((1, 2, 3)), &d).is_err());
    }

    /// Closest point over every support set's affine projection.
    fn brute_force(g: &[f64], m: f64) -> Vec<f64> {
        let n = g.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let s = (m - support.iter().map(|&i| g[i]).sum::<f64>()) / support.len() as f64;
            let mut x = vec![0.0; n];
            let mut ok = true;
            for &i in &support {
                x[i] = g[i] + s;
                ok &= x[i] >= 0.0;
            }
            if !ok {
                continue;
            }
            let d: f64 = x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
        best.unwrap().1
    }

    fn row_project(g: &[f64], m: f64) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        project_row(g, m, &mut out);
        out
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_brute_force(g in prop::collection::vec(-5.0f64..5.0, 6), m in 0.01f64..10.0) {
            let p = row_project(&g, m);
            let b = brute_force(&g, m);
            for (x, y) in p.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn feasible_and_idempotent(g in prop::collection::vec(-50.0f64..50.0, 1..40), m in 0.01f64..100.0) {
            let p = row_project(&g, m);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let total: f64 = p.iter().sum();
            prop_assert!((total - m).abs() <= 1e-10 * m.max(1.0));
            let q = row_project(&p, m);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() <= 1e-10 * m.max(1.0));
            }
        }

        #[test]
        fn nonexpansive(
            pair in (1usize..20).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )),
            m in 0.1f64..20.0,
        ) {
            let (g, h) = pair;
            let (pg, ph) = (row_project(&g, m), row_project(&h, m));
            let dp: f64 = pg.iter().zip(&ph).map(|(a, b)| (a - b).powi(2)).sum();
            let dg: f64 = g.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(dp.sqrt() <= dg.sqrt() + 1e-9);
        }

        #[test]
        fn variational_inequality(g in prop::collection::vec(-10.0f64..10.0, 2..12), m in 0.1f64..20.0, w in prop::collection::vec(0.0f64..1.0, 12)) {
            // <g - P(g), y - P(g)> <= 0 for feasible y
            let p = row_project(&g, m);
            let wsum: f64 = w[..g.len()].iter().sum::<f64>().max(1e-12);
            let y: Vec<f64> = w[..g.len()].iter().map(|v| v / wsum * m).collect();
            let ip: f64 = g.iter().zip(&p).zip(&y).map(|((gi, pi), yi)| (gi - pi) * (yi - pi)).sum();
            prop_assert!(ip <= 1e-8 * m.max(1.0));
        }
    }
}
