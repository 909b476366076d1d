//! Forward solution of the generalized bathtub system.
//!
//! The march is explicit: at node `n` the accumulation is the initial tail
//! mass beyond `z_n` plus every departed traveller whose trip length exceeds
//! the distance covered since departure; then `v_n = V(H_n)` and
//! `z_{n+1} = z_n + dt * v_n`. Departures are uniform within each
//! (length, time) cell and `z` is linear between nodes, so the convolution
//! is integrated exactly cell by cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeparturePattern, Grid, InitialState, SpeedFunction, Violation};
use crate::overlap::Threshold;

/// Below this exit density (travellers per meter) the supply cap is ignored.
pub const SUPPLY_DENSITY_GUARD: f64 = 1e-9;

/// Solved trajectories on the time nodes `t_0..=t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BathtubState {
    /// Distance covered by the virtual traveller.
    pub z: Vec<f64>,
    /// Travellers in the network.
    pub accumulation: Vec<f64>,
    /// Common speed.
    pub speed: Vec<f64>,
    pub grid: Grid,
    pub departures: DeparturePattern,
}

/// Arrival instant, flagged when it lies past the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub extrapolated: bool,
}

/// Location of a distance on the piecewise-linear `z`: it is reached at
/// `t_m + w * dt`, on the segment `[z_m, z_{m+1}]`. `m == N` denotes the
/// extension past the horizon at the final speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub m: usize,
    pub w: f64,
}

impl BathtubState {
    pub fn n_time(&self) -> usize {
        self.z.len() - 1
    }

    /// Distance covered by time `t`, linear between nodes; past the horizon
    /// it continues at the final speed.
    pub fn z_at(&self, t: f64) -> f64 {
        let dt = self.grid.dt();
        let n = self.n_time();
        if t <= 0.0 {
            return 0.0;
        }
        let s = t / dt;
        let m = s.floor() as usize;
        if m >= n {
            return self.z[n] + (t - n as f64 * dt) * self.speed[n];
        }
        let u = s - m as f64;
        self.z[m] + u * (self.z[m + 1] - self.z[m])
    }

    pub(crate) fn locate(&self, distance: f64) -> Segment {
        let n = self.n_time();
        if distance <= 0.0 {
            return Segment { m: 0, w: 0.0 };
        }
        if distance > self.z[n] {
            let step = self.grid.dt() * self.speed[n];
            return Segment {
                m: n,
                w: (distance - self.z[n]) / step,
            };
        }
        // first node with z >= distance; z is strictly increasing
        let upper = self.z.partition_point(|&z| z < distance);
        let m = upper - 1;
        Segment {
            m,
            w: (distance - self.z[m]) / (self.z[m + 1] - self.z[m]),
        }
    }

    /// Time at which the virtual traveller has covered `distance`.
    pub fn invert_z(&self, distance: f64) -> Result<f64> {
        if !(distance >= 0.0) {
            return Err(Error::Domain(format!("negative distance {distance}")));
        }
        let seg = self.locate(distance);
        Ok(self.grid.dt() * (seg.m as f64 + seg.w))
    }

    /// Arrival time of a trip of length `x` departing at `t`.
    pub fn arrival_time(&self, x: f64, t: f64) -> Result<Arrival> {
        if !(x >= 0.0) || !(t >= 0.0) {
            return Err(Error::Domain(format!("arrival_time({x}, {t})")));
        }
        let time = self.invert_z(x + self.z_at(t))?;
        Ok(Arrival {
            time,
            extrapolated: time > self.grid.t_end,
        })
    }
}

/// Downstream outflow capacity per time node (travellers per second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyConstraint {
    pub sigma: Vec<f64>,
    pub sigma_min: f64,
}

impl SupplyConstraint {
    pub fn constant(grid: &Grid, sigma: f64) -> Self {
        Self {
            sigma: vec![sigma; grid.n_time + 1],
            sigma_min: sigma,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.sigma.len() != grid.n_time + 1 {
            out.push(Violation {
                code: "supply_shape",
                message: format!(
                    "supply has {} samples, grid has {} nodes",
                    self.sigma.len(),
                    grid.n_time + 1
                ),
            });
        }
        if !(self.sigma_min > 0.0) {
            out.push(Violation {
                code: "supply_floor",
                message: format!("sigma_min={} must be > 0", self.sigma_min),
            });
        }
        for (n, &s) in self.sigma.iter().enumerate() {
            if !(s >= self.sigma_min) || !(s > 0.0) {
                out.push(Violation {
                    code: "supply_floor",
                    message: format!("sigma[{n}]={s} below sigma_min={}", self.sigma_min),
                });
            }
        }
        out
    }
}

/// Per-cell departures summed over classes, with suffix sums over length so
/// that the fully-travelling part of a time cell is one lookup.
pub(crate) struct Inflow {
    n_length: usize,
    n_time: usize,
    /// `L x N`, row-major by length cell.
    cells: Vec<f64>,
    /// `N x (L + 1)`: `suffix[m][l] = sum over l' >= l of cells[l'][m]`.
    suffix: Vec<f64>,
}

impl Inflow {
    pub fn new(f: &DeparturePattern) -> Self {
        let (_, n_length, n_time) = f.dims();
        let cells = f.class_sum();
        let mut suffix = vec![0.0; n_time * (n_length + 1)];
        for m in 0..n_time {
            let row = &mut suffix[m * (n_length + 1)..(m + 1) * (n_length + 1)];
            for l in (0..n_length).rev() {
                row[l] = row[l + 1] + cells[l * n_time + m];
            }
        }
        Self {
            n_length,
            n_time,
            cells,
            suffix,
        }
    }

    #[inline]
    pub fn cell(&self, l: usize, m: usize) -> f64 {
        self.cells[l * self.n_time + m]
    }

    #[inline]
    pub fn suffix(&self, m: usize, l: usize) -> f64 {
        self.suffix[m * (self.n_length + 1) + l]
    }
}

/// Travellers present at node `n` given `z_0..=z_n`.
fn accumulation_at(n: usize, z: &[f64], inflow: &Inflow, init: &InitialState, grid: &Grid) -> f64 {
    let dx = grid.dx();
    let mut total = init.tail_mass(z[n]);
    for m in (0..n).rev() {
        let th = Threshold::new(z[n], z[m], z[m + 1]);
        if th.a >= grid.x_max {
            break;
        }
        let (lo, hi) = th.partial_range(dx, grid.n_length);
        let mut cell_sum = inflow.suffix(m, hi);
        for l in lo..hi {
            let mass = inflow.cell(l, m);
            if mass != 0.0 {
                cell_sum += mass * th.fraction(l as f64 * dx, dx);
            }
        }
        total += cell_sum;
    }
    total
}

/// Density of remaining distance at the exit, `k(z_n) + int F(z_n - z(s), s) ds`.
fn exit_density_at(n: usize, z: &[f64], inflow: &Inflow, init: &InitialState, grid: &Grid) -> f64 {
    let dx = grid.dx();
    let mut total = init.density(z[n]);
    for m in (0..n).rev() {
        let th = Threshold::new(z[n], z[m], z[m + 1]);
        if th.a >= grid.x_max {
            break;
        }
        let (lo, hi) = th.partial_range(dx, grid.n_length);
        for l in lo..hi {
            let mass = inflow.cell(l, m);
            if mass != 0.0 {
                let (u0, u1) = th.crossing(l as f64 * dx, dx);
                total += mass * (u1 - u0) / dx;
            }
        }
    }
    total
}

fn check_shapes(f: &DeparturePattern, init: &InitialState, grid: &Grid) -> Result<()> {
    if f.dims() != grid.pattern_shape() {
        return Err(Error::DimensionMismatch(format!(
            "pattern {:?} vs grid {:?}",
            f.dims(),
            grid.pattern_shape()
        )));
    }
    if init.density_edges().len() != grid.n_length + 1 {
        return Err(Error::DimensionMismatch(format!(
            "initial density has {} samples, grid needs {}",
            init.density_edges().len(),
            grid.n_length + 1
        )));
    }
    Ok(())
}

fn march(
    f: &DeparturePattern,
    init: &InitialState,
    speed: &SpeedFunction,
    grid: &Grid,
    supply: Option<&SupplyConstraint>,
) -> Result<BathtubState> {
    check_shapes(f, init, grid)?;
    let n_time = grid.n_time;
    let dt = grid.dt();
    let inflow = Inflow::new(f);
    let mut z = Vec::with_capacity(n_time + 1);
    let mut acc = Vec::with_capacity(n_time + 1);
    let mut vel = Vec::with_capacity(n_time + 1);
    z.push(0.0);
    for n in 0..=n_time {
        let h = accumulation_at(n, &z, &inflow, init, grid);
        if !h.is_finite() {
            return Err(Error::NumericalBlowup {
                index: n,
                what: "accumulation",
            });
        }
        let mut v = speed.eval(h);
        if let Some(sup) = supply {
            let density = exit_density_at(n, &z, &inflow, init, grid);
            if density >= SUPPLY_DENSITY_GUARD {
                v = v.min(sup.sigma[n] / density);
            }
        }
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NumericalBlowup {
                index: n,
                what: "speed",
            });
        }
        acc.push(h);
        vel.push(v);
        if n < n_time {
            z.push(z[n] + dt * v);
        }
    }
    Ok(BathtubState {
        z,
        accumulation: acc,
        speed: vel,
        grid: grid.clone(),
        departures: f.clone(),
    })
}

/// Solve `z`, `H`, `v` forward in time for departure pattern `f`.
pub fn solve_dynamics(
    f: &DeparturePattern,
    init: &InitialState,
    speed: &SpeedFunction,
    grid: &Grid,
) -> Result<BathtubState> {
    march(f, init, speed, grid, None)
}

/// As [`solve_dynamics`], with speed additionally capped so that the exit
/// flow never exceeds the downstream supply.
pub fn solve_dynamics_with_supply(
    f: &DeparturePattern,
    init: &InitialState,
    speed: &SpeedFunction,
    supply: &SupplyConstraint,
    grid: &Grid,
) -> Result<BathtubState> {
    let violations = supply.validate(grid);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    march(f, init, speed, grid, Some(supply))
}

/// Exit-side density of remaining distance at node `n` (travellers per meter).
pub fn exit_density(
    state: &BathtubState,
    f: &DeparturePattern,
    init: &InitialState,
    n: usize,
) -> Result<f64> {
    check_shapes(f, init, &state.grid)?;
    if n > state.n_time() {
        return Err(Error::Domain(format!("time index {n} past horizon")));
    }
    Ok(exit_density_at(
        n,
        &state.z,
        &Inflow::new(f),
        init,
        &state.grid,
    ))
}

/// Network exit demand `Delta(t_n)`: exit density times `V(H_n)`
/// (travellers per second).
pub fn network_outflow_demand(
    state: &BathtubState,
    f: &DeparturePattern,
    init: &InitialState,
    speed: &SpeedFunction,
    n: usize,
) -> Result<f64> {
    Ok(exit_density(state, f, init, n)? * speed.eval(state.accumulation[n]))
}
