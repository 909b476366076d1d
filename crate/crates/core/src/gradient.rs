//! Exact gradient of the discrete social cost with respect to the departure
//! pattern.
//!
//! The discrete system is linearised into four operators:
//!
//! * `Z`: `dz_n = sum_{j<n} dt V'(H_j) dH_j` (strictly causal),
//! * `H`: sensitivity of `H_n` to `dz_{<=n}`; the exit density term
//!   `-k(z_n) dz_n` plus, for each past cell, the line integral of the
//!   departure density along the threshold `z_n - z(s)`,
//! * `F`: sensitivity of `H_n` to departures, the fraction of each past cell
//!   still travelling,
//! * `L`: sensitivity of each cell's cost to `dz` through its arrival time.
//!
//! `dH = H Z dH + F df` is lower triangular with zero diagonal in `dH`, so
//! it is solved by forward recursion. The gradient runs the transpose of
//! that recursion backwards; no matrix is inverted or densified.

use rayon::prelude::*;

use crate::cost::{cost_field, total_cost, CostField};
use crate::dynamics::{solve_dynamics, BathtubState, Inflow};
use crate::error::{Error, Result};
use crate::model::{CostParams, DeparturePattern, Grid, InitialState, SpeedFunction, Tensor3};
use crate::overlap::Threshold;

/// Overlap of one past departure cell column with the travelling region.
#[derive(Debug, Clone)]
struct PastCell {
    m: usize,
    /// First length cell cut by the threshold line.
    first: usize,
    /// Fraction above the line for `first..first + fractions.len()`.
    fractions: Vec<f64>,
    /// Cells from here up are entirely above the line.
    full_from: usize,
}

/// `dTA = sum coef[i] * dz[idx[i]]` for one (length, time) cell.
#[derive(Debug, Clone, Copy)]
struct ArrivalRow {
    idx: [usize; 4],
    coef: [f64; 4],
}

/// Linearised operators at one departure pattern.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    dims: (usize, usize, usize),
    /// `dt * V'(H_j)` for `j = 0..=N`.
    z_slope: Vec<f64>,
    /// Row `n` holds the coefficients of `dz_0..=dz_n` in `dH_n`.
    h_rows: Vec<Vec<f64>>,
    f_rows: Vec<Vec<PastCell>>,
    arrival_rows: Vec<ArrivalRow>,
    marginal: Tensor3,
    extrapolated: Vec<bool>,
}

/// Linear response to a departure variation.
#[derive(Debug, Clone)]
pub struct Variation {
    /// `N + 1` accumulation variations.
    pub delta_h: Vec<f64>,
    /// `N + 2` distance variations; the last node is the extension used by
    /// arrivals past the horizon.
    pub delta_z: Vec<f64>,
    pub delta_j: Tensor3,
}

/// Assemble the operators for pattern `f` from its solved state and cost
/// field.
pub fn build_operators(
    f: &DeparturePattern,
    state: &BathtubState,
    init: &InitialState,
    speed: &SpeedFunction,
    field: &CostField,
) -> Result<GradientWorkspace> {
    let grid = &state.grid;
    let dims = grid.pattern_shape();
    if f.dims() != dims || field.j.dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "pattern {:?}, cost field {:?}, grid {:?}",
            f.dims(),
            field.j.dims(),
            dims
        )));
    }
    let (_, nl, nn) = dims;
    let dt = grid.dt();
    let dx = grid.dx();
    let inflow = Inflow::new(f);
    let z = &state.z;

    let z_slope = state
        .accumulation
        .iter()
        .map(|&h| dt * speed.derivative(h))
        .collect();

    let rows: Vec<(Vec<f64>, Vec<PastCell>)> = (0..=nn)
        .into_par_iter()
        .map(|n| {
            let mut h_row = vec![0.0; n + 1];
            h_row[n] -= init.density(z[n]);
            let mut past = Vec::new();
            for m in (0..n).rev() {
                let th = Threshold::new(z[n], z[m], z[m + 1]);
                if th.a >= grid.x_max {
                    break;
                }
                let (lo, hi) = th.partial_range(dx, nl);
                let mut fractions = Vec::with_capacity(hi - lo);
                for l in lo..hi {
                    let x_lo = l as f64 * dx;
                    fractions.push(th.fraction(x_lo, dx));
                    let mass = inflow.cell(l, m);
                    if mass != 0.0 {
                        let (u0, u1) = th.crossing(x_lo, dx);
                        let c = mass / dx;
                        let first = u1 - u0;
                        let second = 0.5 * (u1 * u1 - u0 * u0);
                        h_row[n] -= c * first;
                        h_row[m] += c * (first - second);
                        h_row[m + 1] += c * second;
                    }
                }
                past.push(PastCell {
                    m,
                    first: lo,
                    fractions,
                    full_from: hi,
                });
            }
            (h_row, past)
        })
        .collect();
    let (h_rows, f_rows): (Vec<_>, Vec<_>) = rows.into_iter().unzip();

    let mut arrival_rows = Vec::with_capacity(nl * nn);
    for l in 0..nl {
        for n in 0..nn {
            let seg = field.segments[l * nn + n];
            let inv_v = 1.0 / state.speed[seg.m];
            arrival_rows.push(ArrivalRow {
                idx: [n, n + 1, seg.m, seg.m + 1],
                coef: [
                    0.5 * inv_v,
                    0.5 * inv_v,
                    -(1.0 - seg.w) * inv_v,
                    -seg.w * inv_v,
                ],
            });
        }
    }

    Ok(GradientWorkspace {
        dims,
        z_slope,
        h_rows,
        f_rows,
        arrival_rows,
        marginal: field.marginal.clone(),
        extrapolated: field.extrapolated.clone(),
    })
}

impl GradientWorkspace {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    fn n_time(&self) -> usize {
        self.dims.2
    }

    /// Entry `(n, m)` of the `Z` operator, `n, m` in `0..=N + 1`.
    pub fn z_coeff(&self, n: usize, m: usize) -> f64 {
        if m < n && m < self.z_slope.len() {
            self.z_slope[m]
        } else {
            0.0
        }
    }

    /// Entry `(n, i)` of the `H` operator: coefficient of `dz_i` in `dH_n`.
    pub fn h_coeff(&self, n: usize, i: usize) -> f64 {
        self.h_rows[n].get(i).copied().unwrap_or(0.0)
    }

    /// Entry of the `F` operator: fraction of departures in cell `(l, m)`
    /// still in the network at node `n`.
    pub fn f_coeff(&self, n: usize, l: usize, m: usize) -> f64 {
        for cell in &self.f_rows[n] {
            if cell.m == m {
                if l >= cell.full_from {
                    return 1.0;
                }
                if l >= cell.first {
                    return cell.fractions[l - cell.first];
                }
                return 0.0;
            }
        }
        0.0
    }

    /// Nonzero pattern of the `L` operator row for length cell `l`,
    /// departure cell `n`, before scaling by the cost slope: pairs of
    /// (node, coefficient).
    pub fn arrival_row(&self, l: usize, n: usize) -> [(usize, f64); 4] {
        let r = self.arrival_rows[l * self.n_time() + n];
        std::array::from_fn(|i| (r.idx[i], r.coef[i]))
    }

    /// Cost slope `dJ/dTA` for one cell.
    pub fn cost_slope(&self, k: usize, l: usize, n: usize) -> f64 {
        self.marginal.get(k, l, n)
    }

    pub fn is_extrapolated(&self, l: usize, n: usize) -> bool {
        self.extrapolated[l * self.n_time() + n]
    }

    /// `F df` at node `n`.
    fn apply_f(&self, n: usize, inflow: &Inflow) -> f64 {
        let mut sum = 0.0;
        for cell in &self.f_rows[n] {
            sum += inflow.suffix(cell.m, cell.full_from);
            for (i, frac) in cell.fractions.iter().enumerate() {
                sum += frac * inflow.cell(cell.first + i, cell.m);
            }
        }
        sum
    }

    /// Forward recursion `dH = H Z dH + F df`, then `dz = Z dH` and
    /// `dJ = L dz`.
    pub fn propagate_variation(&self, delta_f: &Tensor3) -> Result<Variation> {
        if delta_f.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "variation {:?} vs workspace {:?}",
                delta_f.dims(),
                self.dims
            )));
        }
        let (nk, nl, nn) = self.dims;
        let inflow = Inflow::new(delta_f);
        let mut dz = vec![0.0; nn + 2];
        let mut dh = vec![0.0; nn + 1];
        for n in 0..=nn {
            if n > 0 {
                dz[n] = dz[n - 1] + self.z_slope[n - 1] * dh[n - 1];
            }
            let coupled: f64 = self.h_rows[n].iter().zip(&dz).map(|(c, d)| c * d).sum();
            dh[n] = coupled + self.apply_f(n, &inflow);
        }
        dz[nn + 1] = dz[nn] + self.z_slope[nn] * dh[nn];

        let mut dj = Tensor3::zeros(self.dims);
        for l in 0..nl {
            for n in 0..nn {
                let r = &self.arrival_rows[l * nn + n];
                let dta: f64 = r.idx.iter().zip(&r.coef).map(|(&i, c)| c * dz[i]).sum();
                for k in 0..nk {
                    dj.set(k, l, n, self.marginal.get(k, l, n) * dta);
                }
            }
        }
        Ok(Variation {
            delta_h: dh,
            delta_z: dz,
            delta_j: dj,
        })
    }

    /// Transpose of `df -> dJ`: returns `v` with `<w, dJ(df)> = <v, df>`.
    pub fn adjoint(&self, weights: &Tensor3) -> Result<Tensor3> {
        if weights.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "adjoint seed {:?} vs workspace {:?}",
                weights.dims(),
                self.dims
            )));
        }
        let (nk, nl, nn) = self.dims;
        let mut zbar = vec![0.0; nn + 2];
        for l in 0..nl {
            for n in 0..nn {
                let s: f64 = (0..nk)
                    .map(|k| weights.get(k, l, n) * self.marginal.get(k, l, n))
                    .sum();
                if s != 0.0 {
                    let r = &self.arrival_rows[l * nn + n];
                    for (&i, c) in r.idx.iter().zip(&r.coef) {
                        zbar[i] += s * c;
                    }
                }
            }
        }

        let mut hbar = vec![0.0; nn + 1];
        let mut cell_bar = vec![0.0; nl * nn];
        // full_bar[m][l]: adds to every length cell >= l in column m
        let mut full_bar = vec![0.0; nn * (nl + 1)];

        zbar[nn] += zbar[nn + 1];
        hbar[nn] += zbar[nn + 1] * self.z_slope[nn];
        for n in (0..=nn).rev() {
            let hb = hbar[n];
            if hb != 0.0 {
                for (zb, c) in zbar.iter_mut().zip(&self.h_rows[n]) {
                    *zb += hb * c;
                }
                for cell in &self.f_rows[n] {
                    full_bar[cell.m * (nl + 1) + cell.full_from] += hb;
                    for (i, frac) in cell.fractions.iter().enumerate() {
                        cell_bar[(cell.first + i) * nn + cell.m] += hb * frac;
                    }
                }
            }
            if n > 0 {
                zbar[n - 1] += zbar[n];
                hbar[n - 1] += zbar[n] * self.z_slope[n - 1];
            }
        }
        for m in 0..nn {
            let mut running = 0.0;
            for l in 0..nl {
                running += full_bar[m * (nl + 1) + l];
                cell_bar[l * nn + m] += running;
            }
        }
        Ok(Tensor3::from_fn(self.dims, |_, l, m| cell_bar[l * nn + m]))
    }
}

/// `grad I = J + (marginal congestion term)`, same shape as `f`.
pub fn gradient(
    f: &DeparturePattern,
    state: &BathtubState,
    init: &InitialState,
    speed: &SpeedFunction,
    field: &CostField,
) -> Result<Tensor3> {
    let ws = build_operators(f, state, init, speed, field)?;
    gradient_from(&ws, f, field)
}

pub fn gradient_from(
    ws: &GradientWorkspace,
    f: &DeparturePattern,
    field: &CostField,
) -> Result<Tensor3> {
    let marginal = ws.adjoint(f)?;
    Ok(field.j.axpy(1.0, &marginal))
}

/// One coordinate of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateCheck {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub analytic: f64,
    /// Central difference with step `eps`.
    pub fd: f64,
    pub rel_err: f64,
    /// False when the one-sided slopes disagree, i.e. the step crosses a
    /// kink of the objective (schedule kink, speed breakpoint, index flip).
    pub smooth: bool,
}

/// Compare `grad` against central differences of the full nonlinear
/// objective at the given coordinates.
#[allow(clippy::too_many_arguments)]
pub fn check_coordinates(
    f: &DeparturePattern,
    grad: &Tensor3,
    init: &InitialState,
    speed: &SpeedFunction,
    params: &CostParams,
    grid: &Grid,
    coords: &[(usize, usize, usize)],
    eps: f64,
) -> Result<Vec<CoordinateCheck>> {
    if f.dims() != grad.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            f.dims(),
            grad.dims()
        )));
    }
    let objective = |g: &Tensor3| -> Result<f64> {
        let s = solve_dynamics(g, init, speed, grid)?;
        total_cost(g, &cost_field(&s, params)?)
    };
    let center = objective(f)?;
    coords
        .par_iter()
        .map(|&(k, l, n)| {
            let mut g = f.clone();
            g.add(k, l, n, eps);
            let up = objective(&g)?;
            g.add(k, l, n, -2.0 * eps);
            let down = objective(&g)?;
            let fd = (up - down) / (2.0 * eps);
            let (fwd, bwd) = ((up - center) / eps, (center - down) / eps);
            let analytic = grad.get(k, l, n);
            let scale = analytic.abs().max(fd.abs());
            let rel_err = if scale > 0.0 {
                (analytic - fd).abs() / scale
            } else {
                0.0
            };
            Ok(CoordinateCheck {
                k,
                l,
                n,
                analytic,
                fd,
                rel_err,
                smooth: (fwd - bwd).abs() <= 1e-4 * fwd.abs().max(bwd.abs()),
            })
        })
        .collect()
}
