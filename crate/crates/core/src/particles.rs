//! Trip-based simulation: every traveller is a particle whose remaining
//! distance shrinks at the common network speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost::{cost_of_arrival, SchedulePenalty};
use crate::error::{Error, Result};
use crate::model::{CostParams, DeparturePattern, Grid, InitialState, SpeedFunction};

/// Above this many active particles the per-step update runs in parallel.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub class_id: usize,
    pub depart: f64,
    pub desired: f64,
    pub length: f64,
    pub arrival: Option<f64>,
    pub cost: Option<f64>,
    /// Still in the network at the horizon; arrival extrapolated.
    pub unfinished: bool,
}

impl TripRecord {
    pub fn new(class_id: usize, depart: f64, desired: f64, length: f64) -> Self {
        Self {
            class_id,
            depart,
            desired,
            length,
            arrival: None,
            cost: None,
            unfinished: false,
        }
    }
}

/// Integer counts with the same total as `round(sum)`: floor every entry,
/// then hand the leftover units to the largest fractional parts (lowest
/// index first on ties).
pub fn largest_remainder(values: &[f64]) -> Vec<usize> {
    let total = values.iter().sum::<f64>().round().max(0.0) as usize;
    let mut counts: Vec<usize> = values.iter().map(|v| v.max(0.0).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = values[a].max(0.0) - values[a].max(0.0).floor();
        let fb = values[b].max(0.0) - values[b].max(0.0).floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// One particle per traveller (after rounding), uniform within its cell.
pub fn sample_trips(f: &DeparturePattern, grid: &Grid, seed: u64) -> Vec<TripRecord> {
    let counts = largest_remainder(f.as_slice());
    let (_, nl, nn) = f.dims();
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (cell, &c) in counts.iter().enumerate() {
        let (k, l, n) = (cell / (nl * nn), (cell / nn) % nl, cell % nn);
        for _ in 0..c {
            let depart = (n as f64 + rng.gen::<f64>()) * dt;
            let length = (l as f64 + rng.gen::<f64>()) * dx;
            out.push(TripRecord::new(k, depart, grid.arrival_times[k], length));
        }
    }
    out
}

/// About `n_particles` particles, each standing for `weight` travellers.
pub fn sample_trips_scaled(
    f: &DeparturePattern,
    grid: &Grid,
    n_particles: usize,
    seed: u64,
) -> (Vec<TripRecord>, f64) {
    let total = f.sum();
    if !(total > 0.0) || n_particles == 0 {
        return (Vec::new(), 1.0);
    }
    let scale = n_particles as f64 / total;
    let trips = sample_trips(&f.scaled(scale), grid, seed);
    (trips, 1.0 / scale)
}

/// Remaining lengths of the travellers already present at `t = 0`, one
/// particle per `weight` travellers, drawn from the piecewise-linear density.
pub fn initial_particles(init: &InitialState, weight: f64, seed: u64) -> Vec<f64> {
    let edges = init.density_edges();
    let cells = edges.len().saturating_sub(1);
    if cells == 0 {
        return Vec::new();
    }
    let dx = init.x_max() / cells as f64;
    let masses: Vec<f64> = edges
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * dx / weight)
        .collect();
    let counts = largest_remainder(&masses);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (l, &c) in counts.iter().enumerate() {
        let (a, b) = (edges[l], edges[l + 1]);
        for _ in 0..c {
            // inverse CDF of density a + (b - a) u on [0, 1]
            let p: f64 = rng.gen::<f64>() * 0.5 * (a + b);
            let u = if (b - a).abs() < 1e-12 * (a + b) {
                p / a
            } else {
                (-a + (a * a + 2.0 * (b - a) * p).sqrt()) / (b - a)
            };
            out.push((l as f64 + u.clamp(0.0, 1.0)) * dx);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub t: Vec<f64>,
    pub accumulation: Vec<f64>,
    pub speed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    pub trips: Vec<TripRecord>,
    pub trajectory: ParticleTrajectory,
    pub weight: f64,
    pub entered: usize,
    pub exited: usize,
    /// Trip particles still active at the horizon.
    pub active_at_end: usize,
}

#[derive(Debug, Clone, Copy)]
struct Active {
    /// Trip index, or `None` for initial load.
    trip: Option<usize>,
    remaining: f64,
}

/// March particles over the grid's time steps. Accumulation is counted at
/// the start of each step (times `weight`); exits inside a step are placed
/// by linear interpolation. Trips still running at `t_end` get an arrival
/// extrapolated at the final speed and are flagged unfinished.
pub fn simulate_particles(
    mut trips: Vec<TripRecord>,
    init_particles: &[f64],
    speed: &SpeedFunction,
    grid: &Grid,
    params: &CostParams,
    penalty: &dyn SchedulePenalty,
    weight: f64,
) -> Result<ParticleRun> {
    if !(grid.dt() > 0.0) {
        return Err(Error::Domain(format!("dt={} must be > 0", grid.dt())));
    }
    let dt = grid.dt();
    let nt = grid.n_time;
    let mut order: Vec<usize> = (0..trips.len()).collect();
    order.sort_by(|&a, &b| trips[a].depart.total_cmp(&trips[b].depart).then(a.cmp(&b)));
    let mut next = 0;

    let mut active: Vec<Active> = init_particles
        .iter()
        .map(|&x| Active {
            trip: None,
            remaining: x,
        })
        .collect();
    let mut traj = ParticleTrajectory {
        t: Vec::with_capacity(nt + 1),
        accumulation: Vec::with_capacity(nt + 1),
        speed: Vec::with_capacity(nt + 1),
    };
    let (mut entered, mut exited) = (0usize, 0usize);
    let mut arrivals: Vec<(usize, f64)> = Vec::new();

    for n in 0..nt {
        let t0 = n as f64 * dt;
        let t1 = (n + 1) as f64 * dt;
        let h = weight * active.len() as f64;
        let v = speed.eval(h);
        traj.t.push(t0);
        traj.accumulation.push(h);
        traj.speed.push(v);

        let advance = |p: &mut Active| {
            let before = p.remaining;
            p.remaining -= v * dt;
            (p.remaining <= 0.0).then(|| t0 + before / v)
        };
        let exits: Vec<Option<f64>> = if active.len() > PAR_THRESHOLD {
            active.par_iter_mut().map(advance).collect()
        } else {
            active.iter_mut().map(advance).collect()
        };
        let mut keep = Vec::with_capacity(active.len());
        for (p, e) in active.into_iter().zip(exits) {
            match e {
                Some(time) => {
                    if let Some(i) = p.trip {
                        arrivals.push((i, time));
                        exited += 1;
                    }
                }
                None => keep.push(p),
            }
        }
        active = keep;

        while next < order.len() && trips[order[next]].depart < t1 {
            let i = order[next];
            next += 1;
            entered += 1;
            let trip = &trips[i];
            let remaining = trip.length - (t1 - trip.depart) * v;
            if remaining <= 0.0 {
                arrivals.push((i, trip.depart + trip.length / v));
                exited += 1;
            } else {
                active.push(Active {
                    trip: Some(i),
                    remaining,
                });
            }
        }
    }

    let t_end = nt as f64 * dt;
    let h = weight * active.len() as f64;
    let v = speed.eval(h);
    traj.t.push(t_end);
    traj.accumulation.push(h);
    traj.speed.push(v);

    for (i, time) in arrivals {
        trips[i].arrival = Some(time);
    }
    let mut active_at_end = 0;
    for p in &active {
        if let Some(i) = p.trip {
            trips[i].arrival = Some(t_end + p.remaining / v);
            trips[i].unfinished = true;
            active_at_end += 1;
        }
    }
    for &i in &order[next..] {
        let trip = &mut trips[i];
        trip.arrival = Some(trip.depart + trip.length / v);
        trip.unfinished = true;
    }
    for trip in trips.iter_mut() {
        let arrival = trip.arrival.expect("set above");
        trip.cost = Some(cost_of_arrival(
            arrival,
            trip.depart,
            trip.desired,
            grid.t_end,
            params,
            penalty,
        ));
    }

    Ok(ParticleRun {
        trips,
        trajectory: traj,
        weight,
        entered,
        exited,
        active_at_end,
    })
}

/// Statistics over a group of trips.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub unfinished: usize,
    pub mean_cost: f64,
    pub cost_std: f64,
    pub mean_abs_delay_min: f64,
}

impl GroupStats {
    fn of<'a>(trips: impl Iterator<Item = &'a TripRecord>) -> Self {
        let (mut n, mut unfinished) = (0usize, 0usize);
        let (mut sum, mut sum_sq, mut delay) = (0.0, 0.0, 0.0);
        for t in trips {
            let c = t.cost.unwrap_or(f64::NAN);
            n += 1;
            unfinished += t.unfinished as usize;
            sum += c;
            sum_sq += c * c;
            delay += (t.arrival.unwrap_or(f64::NAN) - t.desired).abs() / 60.0;
        }
        if n == 0 {
            return Self {
                count: 0,
                unfinished: 0,
                mean_cost: 0.0,
                cost_std: 0.0,
                mean_abs_delay_min: 0.0,
            };
        }
        let mean = sum / n as f64;
        Self {
            count: n,
            unfinished,
            mean_cost: mean,
            cost_std: (sum_sq / n as f64 - mean * mean).max(0.0).sqrt(),
            mean_abs_delay_min: delay / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripReport {
    /// Indexed by class id.
    pub classes: Vec<GroupStats>,
    pub overall: GroupStats,
    /// Trips still running at the horizon, valued with the terminal cost.
    pub unfinished: GroupStats,
}

/// Per-class cost and delay summary. Every record must carry an arrival.
pub fn aggregate(records: &[TripRecord]) -> Result<TripReport> {
    if let Some(index) = records
        .iter()
        .position(|r| r.arrival.is_none() || r.cost.is_none())
    {
        return Err(Error::UnfinishedTrip { index });
    }
    let n_classes = records.iter().map(|r| r.class_id + 1).max().unwrap_or(0);
    Ok(TripReport {
        classes: (0..n_classes)
            .map(|k| GroupStats::of(records.iter().filter(|r| r.class_id == k)))
            .collect(),
        overall: GroupStats::of(records.iter()),
        unfinished: GroupStats::of(records.iter().filter(|r| r.unfinished)),
    })
}
