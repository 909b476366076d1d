//! Projected-gradient search for the social optimum.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost::{cost_field, total_cost, CostField};
use crate::dynamics::{solve_dynamics, BathtubState};
use crate::error::{Error, Result};
use crate::gradient::gradient;
use crate::model::{
    feasible_mass_check, DemandProfile, DeparturePattern, Grid, SpeedFunction, Tensor3,
};
use crate::projection::project;
use crate::scenario::Scenario;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `theta0 / tau`
    DivergentSeries,
    Fixed,
    /// Halve the step until the objective does not increase; the next
    /// iteration starts from the accepted step times `growth`.
    HalvingOnIncrease {
        growth: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub theta0: f64,
    pub rule: StepRule,
}

impl StepSchedule {
    /// One step moves a typical row's mass by about one time cell's worth of
    /// cost difference.
    pub fn default_for(scenario: &Scenario) -> Self {
        let rows = scenario
            .demand
            .as_slice()
            .iter()
            .filter(|&&m| m > 0.0)
            .count()
            .max(1);
        let mean_row = scenario.demand.total() / rows as f64;
        let theta0 = if mean_row > 0.0 {
            mean_row / (scenario.params.alpha * scenario.grid.dt())
        } else {
            1.0
        };
        Self {
            theta0,
            rule: StepRule::HalvingOnIncrease { growth: 1.5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    pub schedule: StepSchedule,
    pub max_iter: usize,
    /// Absolute residual target; `None` means 1e-4 times the first residual.
    pub stop_tol: Option<f64>,
    pub keep_trajectories: bool,
}

impl OptimizerOptions {
    pub fn default_for(scenario: &Scenario) -> Self {
        Self {
            schedule: StepSchedule::default_for(scenario),
            max_iter: 100,
            stop_tol: None,
            keep_trajectories: true,
        }
    }
}

/// Network state of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub z: Vec<f64>,
    pub accumulation: Vec<f64>,
    pub speed: Vec<f64>,
}

impl Trajectory {
    pub fn of(state: &BathtubState) -> Self {
        Self {
            z: state.z.clone(),
            accumulation: state.accumulation.clone(),
            speed: state.speed.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based; record 1 is the starting pattern.
    pub iter: usize,
    pub objective: f64,
    pub best: f64,
    /// Residual of the current accepted iterate.
    pub residual: f64,
    pub step: f64,
    /// Objective evaluations spent on this iteration (backtracking).
    pub evaluations: usize,
    pub seconds: f64,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationHistory {
    pub records: Vec<IterationRecord>,
    pub best_pattern: DeparturePattern,
    pub best_objective: f64,
    pub converged: bool,
}

/// Everything computed for one pattern.
pub struct Evaluation {
    pub state: BathtubState,
    pub field: CostField,
    pub objective: f64,
}

pub fn evaluate(f: &DeparturePattern, scenario: &Scenario) -> Result<Evaluation> {
    let state = solve_dynamics(f, &scenario.init, &scenario.speed, &scenario.grid)?;
    let field = cost_field(&state, &scenario.params)?;
    let objective = total_cost(f, &field)?;
    if !objective.is_finite() {
        return Err(Error::NumericalBlowup {
            index: 0,
            what: "objective",
        });
    }
    Ok(Evaluation {
        state,
        field,
        objective,
    })
}

/// Objective of an arbitrary feasible pattern.
pub fn evaluate_baseline(f: &DeparturePattern, scenario: &Scenario) -> Result<f64> {
    if !feasible_mass_check(f, &scenario.demand, 1e-9)? {
        return Err(Error::InfeasibleBaseline);
    }
    Ok(evaluate(f, scenario)?.objective)
}

/// `|| f - P(f - theta_ref * grad) ||`.
pub fn stationarity_residual(
    f: &DeparturePattern,
    grad: &Tensor3,
    m: &DemandProfile,
    theta_ref: f64,
) -> Result<f64> {
    if f.dims() != grad.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            f.dims(),
            grad.dims()
        )));
    }
    let p = project(&f.axpy(-theta_ref, grad), m)?;
    Ok(f.axpy(-1.0, &p).norm())
}

/// Each row departs in the cell from which a free-flow trip of the row's
/// center length arrives on time.
pub fn initial_solution(
    demand: &DemandProfile,
    speed: &SpeedFunction,
    grid: &Grid,
) -> DeparturePattern {
    let v_free = speed.eval(0.0);
    let dt = grid.dt();
    Tensor3::from_fn(grid.pattern_shape(), |k, l, n| {
        let t = grid.arrival_times[k] - grid.length_center(l) / v_free;
        let cell = ((t / dt).floor().max(0.0) as usize).min(grid.n_time - 1);
        if n == cell {
            demand.get(k, l)
        } else {
            0.0
        }
    })
}

/// Random point of the feasible set: each row split by normalised
/// exponential weights.
pub fn random_pattern(demand: &DemandProfile, grid: &Grid, rng: &mut impl Rng) -> DeparturePattern {
    let (nk, nl, nn) = grid.pattern_shape();
    let mut f = Tensor3::zeros((nk, nl, nn));
    for k in 0..nk {
        for l in 0..nl {
            let w: Vec<f64> = (0..nn).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let s: f64 = w.iter().sum();
            let m = demand.get(k, l);
            for (x, wi) in f.row_mut(k, l).iter_mut().zip(&w) {
                *x = m * wi / s;
            }
        }
    }
    f
}

pub fn optimize(scenario: &Scenario, options: &OptimizerOptions) -> Result<OptimizationHistory> {
    let start = initial_solution(&scenario.demand, &scenario.speed, &scenario.grid);
    optimize_from(start, scenario, options)
}

pub fn optimize_from(
    start: DeparturePattern,
    scenario: &Scenario,
    options: &OptimizerOptions,
) -> Result<OptimizationHistory> {
    let clock = Instant::now();
    let theta_ref = 1.0 / scenario.params.alpha;
    let schedule = options.schedule;
    if !(schedule.theta0 > 0.0) {
        return Err(Error::Domain(format!(
            "theta0={} must be > 0",
            schedule.theta0
        )));
    }

    let differentiate = |f: &DeparturePattern, ev: &Evaluation| -> Result<(Tensor3, f64)> {
        let g = gradient(f, &ev.state, &scenario.init, &scenario.speed, &ev.field)?;
        let r = stationarity_residual(f, &g, &scenario.demand, theta_ref)?;
        Ok((g, r))
    };

    let mut current = project(&start, &scenario.demand)?;
    let ev = evaluate(&current, scenario)?;
    let (mut grad, mut residual) = differentiate(&current, &ev)?;
    let mut objective = ev.objective;
    let mut best = (objective, current.clone());
    let tol = options.stop_tol.unwrap_or(1e-4 * residual);
    let mut theta = schedule.theta0;
    let keep = |ev: &Evaluation| options.keep_trajectories.then(|| Trajectory::of(&ev.state));

    let mut records = vec![IterationRecord {
        iter: 1,
        objective,
        best: objective,
        residual,
        step: theta,
        evaluations: 1,
        seconds: clock.elapsed().as_secs_f64(),
        trajectory: keep(&ev),
    }];
    let mut converged = residual <= tol;

    let mut tau = 1;
    while !converged && records.len() < options.max_iter {
        let mut step = match schedule.rule {
            StepRule::DivergentSeries => schedule.theta0 / tau as f64,
            _ => theta,
        };
        let mut evaluations = 0;
        let (candidate, ev) = loop {
            let candidate = project(&current.axpy(-step, &grad), &scenario.demand)?;
            let ev = evaluate(&candidate, scenario)?;
            evaluations += 1;
            match schedule.rule {
                StepRule::HalvingOnIncrease { .. }
                    if ev.objective > objective && evaluations < MAX_HALVINGS =>
                {
                    step *= 0.5;
                }
                _ => break (candidate, ev),
            }
        };
        if let StepRule::HalvingOnIncrease { growth } = schedule.rule {
            if ev.objective > objective {
                // no decrease at any tried step: numerically stationary
                converged = true;
                break;
            }
            theta = step * growth;
        }
        (grad, residual) = differentiate(&candidate, &ev)?;
        current = candidate;
        objective = ev.objective;
        tau += 1;
        if objective < best.0 {
            best = (objective, current.clone());
        }
        records.push(IterationRecord {
            iter: records.len() + 1,
            objective,
            best: best.0,
            residual,
            step,
            evaluations,
            seconds: clock.elapsed().as_secs_f64(),
            trajectory: keep(&ev),
        });
        converged = residual <= tol;
    }

    Ok(OptimizationHistory {
        records,
        best_pattern: best.1,
        best_objective: best.0,
        converged,
    })
}

/// Run from `starts` seeded perturbations of the initial solution (start 0
/// is unperturbed) in parallel; histories come back in start order.
pub fn multi_start(
    scenario: &Scenario,
    options: &OptimizerOptions,
    starts: usize,
    seed: u64,
) -> Result<Vec<OptimizationHistory>> {
    let base = initial_solution(&scenario.demand, &scenario.speed, &scenario.grid);
    (0..starts.max(1))
        .into_par_iter()
        .map(|i| {
            let start = if i == 0 {
                base.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let noise = random_pattern(&scenario.demand, &scenario.grid, &mut rng);
                let mix = rng.gen_range(0.1..0.5);
                base.scaled(1.0 - mix).axpy(mix, &noise)
            };
            optimize_from(start, scenario, options)
        })
        .collect()
}

/// Index of the lowest objective (first on ties).
pub fn best_of(histories: &[OptimizationHistory]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in histories.iter().enumerate() {
        if best.map_or(true, |b| h.best_objective < histories[b].best_objective) {
            best = Some(i);
        }
    }
    best
}
