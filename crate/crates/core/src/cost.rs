//! Per-traveller schedule cost and the total social cost.
//!
//! Costs are sampled at departure-cell centers: length `(l + 1/2) dx`,
//! departure `(n + 1/2) dt`.

use crate::dynamics::{BathtubState, Segment};
use crate::error::{Error, Result};
use crate::model::{CostParams, DeparturePattern, Tensor3};

/// Convex penalty on the arrival offset `lateness = TA - ta` (negative when
/// early).
pub trait SchedulePenalty: Send + Sync {
    fn penalty(&self, lateness: f64) -> f64;
    /// Derivative in `lateness`; at a kink, any subgradient.
    fn slope(&self, lateness: f64) -> f64;
}

/// Piecewise-linear earliness/lateness penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyLate {
    pub beta: f64,
    pub gamma: f64,
}

impl SchedulePenalty for EarlyLate {
    fn penalty(&self, lateness: f64) -> f64 {
        self.beta * (-lateness).max(0.0) + self.gamma * lateness.max(0.0)
    }

    /// Exact arrival takes the late branch.
    fn slope(&self, lateness: f64) -> f64 {
        if lateness < 0.0 {
            -self.beta
        } else {
            self.gamma
        }
    }
}

impl CostParams {
    pub fn schedule(&self) -> EarlyLate {
        EarlyLate {
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

pub(crate) fn cost_of_arrival(
    arrival: f64,
    depart: f64,
    desired: f64,
    t_end: f64,
    params: &CostParams,
    penalty: &dyn SchedulePenalty,
) -> f64 {
    params.alpha * (arrival - depart)
        + penalty.penalty(arrival - desired)
        + params.terminal_penalty_rate * (arrival - t_end).max(0.0)
}

fn cost_slope(
    arrival: f64,
    desired: f64,
    t_end: f64,
    params: &CostParams,
    penalty: &dyn SchedulePenalty,
) -> f64 {
    let terminal = if arrival > t_end {
        params.terminal_penalty_rate
    } else {
        0.0
    };
    params.alpha + penalty.slope(arrival - desired) + terminal
}

/// Cost of one traveller with desired arrival `ta`, trip length `x`,
/// departing at `t`.
pub fn trip_cost(
    ta: f64,
    x: f64,
    t: f64,
    state: &BathtubState,
    params: &CostParams,
) -> Result<f64> {
    trip_cost_with(ta, x, t, state, params, &params.schedule())
}

pub fn trip_cost_with(
    ta: f64,
    x: f64,
    t: f64,
    state: &BathtubState,
    params: &CostParams,
    penalty: &dyn SchedulePenalty,
) -> Result<f64> {
    let arrival = state.arrival_time(x, t)?;
    Ok(cost_of_arrival(
        arrival.time,
        t,
        ta,
        state.grid.t_end,
        params,
        penalty,
    ))
}

/// Cost per traveller at every (class, length cell, departure cell), with
/// the arrival map cached for the gradient.
#[derive(Debug, Clone)]
pub struct CostField {
    /// `K x L x N` cost per traveller.
    pub j: Tensor3,
    /// `L x N` arrival times, row-major by length cell.
    pub ta: Vec<f64>,
    /// `L x N` flags for arrivals past the horizon.
    pub extrapolated: Vec<bool>,
    /// `dJ/dTA` per cell.
    pub(crate) marginal: Tensor3,
    pub(crate) segments: Vec<Segment>,
}

impl CostField {
    pub fn arrival(&self, l: usize, n: usize) -> f64 {
        self.ta[l * self.j.dims().2 + n]
    }
}

pub fn cost_field(state: &BathtubState, params: &CostParams) -> Result<CostField> {
    cost_field_with(state, params, &params.schedule())
}

pub fn cost_field_with(
    state: &BathtubState,
    params: &CostParams,
    penalty: &dyn SchedulePenalty,
) -> Result<CostField> {
    let grid = &state.grid;
    let dims = grid.pattern_shape();
    let (nk, nl, nn) = dims;
    let dt = grid.dt();
    let mut ta = Vec::with_capacity(nl * nn);
    let mut segments = Vec::with_capacity(nl * nn);
    let mut extrapolated = Vec::with_capacity(nl * nn);
    for l in 0..nl {
        let x = grid.length_center(l);
        for n in 0..nn {
            let target = x + 0.5 * (state.z[n] + state.z[n + 1]);
            let seg = state.locate(target);
            let time = dt * (seg.m as f64 + seg.w);
            if !time.is_finite() {
                return Err(Error::NumericalBlowup {
                    index: n,
                    what: "arrival time",
                });
            }
            ta.push(time);
            extrapolated.push(time > grid.t_end);
            segments.push(seg);
        }
    }
    let mut j = Tensor3::zeros(dims);
    let mut marginal = Tensor3::zeros(dims);
    for k in 0..nk {
        let desired = grid.arrival_times[k];
        for l in 0..nl {
            for n in 0..nn {
                let arrival = ta[l * nn + n];
                let depart = grid.time_center(n);
                j.set(
                    k,
                    l,
                    n,
                    cost_of_arrival(arrival, depart, desired, grid.t_end, params, penalty),
                );
                marginal.set(
                    k,
                    l,
                    n,
                    cost_slope(arrival, desired, grid.t_end, params, penalty),
                );
            }
        }
    }
    Ok(CostField {
        j,
        ta,
        extrapolated,
        marginal,
        segments,
    })
}

/// Social cost `sum f * J`; `f` already counts travellers per cell.
pub fn total_cost(f: &DeparturePattern, field: &CostField) -> Result<f64> {
    if f.dims() != field.j.dims() {
        return Err(Error::DimensionMismatch(format!(
            "pattern {:?} vs cost field {:?}",
            f.dims(),
            field.j.dims()
        )));
    }
    Ok(f.dot(&field.j))
}

/// Social cost split by arrival class.
pub fn class_costs(f: &DeparturePattern, field: &CostField) -> Result<Vec<f64>> {
    if f.dims() != field.j.dims() {
        return Err(Error::DimensionMismatch(format!(
            "pattern {:?} vs cost field {:?}",
            f.dims(),
            field.j.dims()
        )));
    }
    let (nk, nl, _) = f.dims();
    Ok((0..nk)
        .map(|k| {
            (0..nl)
                .map(|l| {
                    f.row(k, l)
                        .iter()
                        .zip(field.j.row(k, l))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solve_dynamics;
    use crate::model::{Grid, InitialState, SpeedFunction};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_state(speed: f64) -> BathtubState {
        let g = Grid::new(3600.0, 36, 12_000.0, 12, vec![1800.0, 2400.0]);
        let f = Tensor3::zeros(g.pattern_shape());
        solve_dynamics(
            &f,
            &InitialState::empty(&g),
            &SpeedFunction::constant(speed),
            &g,
        )
        .unwrap()
    }

    #[test]
    fn on_time_arrival_costs_travel_time_only() {
        let s = free_state(10.0);
        let p = CostParams::lyon(5.0);
        // 6000 m at 10 m/s = 600 s; depart 1200 to arrive 1800
        assert_relative_eq!(
            trip_cost(1800.0, 6000.0, 1200.0, &s, &p).unwrap(),
            600.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lyon_parameters_late_and_early() {
        let s = free_state(10.0);
        let p = CostParams::lyon(5.0);
        assert_relative_eq!(p.beta, 0.4 + 1.0 / 9.0, max_relative = 1e-15);
        assert_relative_eq!(p.gamma, 1.5 + 5.0 / 9.0, max_relative = 1e-15);
        let late = trip_cost(1800.0, 6000.0, 1260.0, &s, &p).unwrap();
        assert_relative_eq!(late, 600.0 + 60.0 * (1.5 + 5.0 / 9.0), max_relative = 1e-12);
        assert!((late - 723.33).abs() < 5e-3);
        let early = trip_cost(1800.0, 6000.0, 1140.0, &s, &p).unwrap();
        assert!((early - 630.67).abs() < 5e-3);
    }

    #[test]
    fn free_flow_field_matches_closed_form() {
        let s = free_state(10.0);
        let p = CostParams::new(1.0, 0.5, 2.0, 0.0);
        let field = cost_field(&s, &p).unwrap();
        let g = &s.grid;
        for k in 0..2 {
            for l in 0..12 {
                for n in 0..36 {
                    let x = g.length_center(l);
                    let t = g.time_center(n);
                    let arr = t + x / 10.0;
                    let d = arr - g.arrival_times[k];
                    let want = x / 10.0 + if d < 0.0 { -0.5 * d } else { 2.0 * d };
                    assert_relative_eq!(
                        field.j.get(k, l, n),
                        want,
                        max_relative = 1e-12,
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_grid_field_is_trip_cost() {
        let g = Grid::new(600.0, 1, 1000.0, 1, vec![300.0]);
        let f = Tensor3::from_vec((1, 1, 1), vec![5.0]).unwrap();
        let s = solve_dynamics(
            &f,
            &InitialState::empty(&g),
            &SpeedFunction::constant(4.0),
            &g,
        )
        .unwrap();
        let p = CostParams::new(1.0, 0.5, 2.0, 0.3);
        let field = cost_field(&s, &p).unwrap();
        let direct = trip_cost(300.0, 500.0, 300.0, &s, &p).unwrap();
        assert_relative_eq!(field.j.get(0, 0, 0), direct, max_relative = 1e-14);
    }

    #[test]
    fn field_agrees_with_pointwise_calls_on_random_state() {
        let g = Grid::new(1200.0, 24, 6000.0, 6, vec![600.0, 900.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Tensor3::from_fn(g.pattern_shape(), |_, _, _| 10.0 * rng.gen::<f64>());
        let sp = SpeedFunction::new(vec![(0.0, 15.0), (200.0, 3.0)], 1.0, 15.0);
        let init = InitialState::from_fn(&g, |_| 0.02);
        let s = solve_dynamics(&f, &init, &sp, &g).unwrap();
        let p = CostParams::new(1.0, 0.6, 2.5, 0.7);
        let field = cost_field(&s, &p).unwrap();
        for k in 0..2 {
            for l in 0..6 {
                for n in 0..24 {
                    let direct = trip_cost(
                        g.arrival_times[k],
                        g.length_center(l),
                        g.time_center(n),
                        &s,
                        &p,
                    )
                    .unwrap();
                    assert_relative_eq!(field.j.get(k, l, n), direct, max_relative = 1e-10);
                    assert!(field.arrival(l, n) >= g.time_center(n));
                }
            }
        }
    }

    #[test]
    fn total_cost_examples() {
        let s = free_state(10.0);
        let p = CostParams::new(1.0, 0.5, 2.0, 0.0);
        let field = cost_field(&s, &p).unwrap();
        let zero = Tensor3::zeros(field.j.dims());
        assert_eq!(total_cost(&zero, &field).unwrap(), 0.0);
        let mut one = zero.clone();
        one.set(1, 4, 7, 1.0);
        assert_eq!(total_cost(&one, &field).unwrap(), field.j.get(1, 4, 7));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Tensor3::from_fn(field.j.dims(), |_, _, _| rng.gen::<f64>());
        assert_relative_eq!(
            total_cost(&f.scaled(2.0), &field).unwrap(),
            2.0 * total_cost(&f, &field).unwrap(),
            max_relative = 1e-14
        );
        let bad = Tensor3::zeros((1, 1, 1));
        assert!(total_cost(&bad, &field).is_err());
    }

    #[test]
    fn schedule_slopes_by_finite_difference() {
        let pen = EarlyLate {
            beta: 0.5,
            gamma: 2.0,
        };
        for d in [-300.0, -1.0, 1.0, 250.0] {
            let h = 1e-3;
            let fd = (pen.penalty(d + h) - pen.penalty(d - h)) / (2.0 * h);
            assert_relative_eq!(fd, pen.slope(d), max_relative = 1e-9);
        }
        assert_eq!(pen.slope(0.0), 2.0);
    }

    #[test]
    fn congestion_only_adds_cost() {
        let g = Grid::new(3600.0, 36, 12_000.0, 12, vec![1800.0, 2400.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Tensor3::from_fn(g.pattern_shape(), |_, _, _| 5.0 * rng.gen::<f64>());
        let sp = SpeedFunction::new(vec![(0.0, 12.0), (300.0, 4.0), (800.0, 1.5)], 1.0, 12.0);
        let s = solve_dynamics(&f, &InitialState::empty(&g), &sp, &g).unwrap();
        let p = CostParams::new(1.0, 0.5, 2.0, 0.0);
        let field = cost_field(&s, &p).unwrap();
        let free_time: f64 = (0..2)
            .flat_map(|k| (0..12).map(move |l| (k, l)))
            .map(|(k, l)| f.row(k, l).iter().sum::<f64>() * g.length_center(l) / 12.0)
            .sum();
        assert!(total_cost(&f, &field).unwrap() >= p.alpha * free_time);
    }

    #[test]
    fn custom_penalty_plugs_in() {
        struct Quadratic;
        impl SchedulePenalty for Quadratic {
            fn penalty(&self, d: f64) -> f64 {
                1e-3 * d * d
            }
            fn slope(&self, d: f64) -> f64 {
                2e-3 * d
            }
        }
        let s = free_state(10.0);
        let p = CostParams::new(1.0, 0.5, 2.0, 0.0);
        let c = trip_cost_with(1800.0, 6000.0, 1300.0, &s, &p, &Quadratic).unwrap();
        assert_relative_eq!(c, 600.0 + 1e-3 * 100.0 * 100.0, max_relative = 1e-12);
    }
}
