//! Value types shared by every solver stage: the discretization grid, the
//! speed-accumulation law, demand, departure patterns, the initial network
//! load and cost parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time/length discretization plus the finite set of desired
/// arrival instants.
///
/// Time nodes are `t_n = n * dt` for `n = 0..=n_time`; departure cell `n`
/// covers `[t_n, t_{n+1})`. Length cell `l` covers `[l * dx, (l + 1) * dx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_end: f64,
    pub n_time: usize,
    pub x_max: f64,
    pub n_length: usize,
    pub arrival_times: Vec<f64>,
}

impl Grid {
    pub fn new(
        t_end: f64,
        n_time: usize,
        x_max: f64,
        n_length: usize,
        arrival_times: Vec<f64>,
    ) -> Self {
        Self {
            t_end,
            n_time,
            x_max,
            n_length,
            arrival_times,
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_time as f64
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.n_length as f64
    }

    pub fn n_classes(&self) -> usize {
        self.arrival_times.len()
    }

    pub fn time_node(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Midpoint of departure cell `n`.
    pub fn time_center(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt()
    }

    pub fn length_edge(&self, l: usize) -> f64 {
        l as f64 * self.dx()
    }

    /// Midpoint of length cell `l`.
    pub fn length_center(&self, l: usize) -> f64 {
        (l as f64 + 0.5) * self.dx()
    }

    /// Shape `(K, L, N)` of departure tensors on this grid.
    pub fn pattern_shape(&self) -> (usize, usize, usize) {
        (self.n_classes(), self.n_length, self.n_time)
    }
}

/// Piecewise-linear, nonincreasing speed law `V(H)` clamped to
/// `[v_min, v_max]`. Constant extension outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedFunction {
    pub breakpoints: Vec<(f64, f64)>,
    pub v_min: f64,
    pub v_max: f64,
}

impl SpeedFunction {
    pub fn new(breakpoints: Vec<(f64, f64)>, v_min: f64, v_max: f64) -> Self {
        Self {
            breakpoints,
            v_min,
            v_max,
        }
    }

    /// Load-independent speed.
    pub fn constant(speed: f64) -> Self {
        Self::new(vec![(0.0, speed)], speed, speed)
    }

    pub fn eval(&self, accumulation: f64) -> f64 {
        let raw = self.raw(accumulation);
        raw.clamp(self.v_min, self.v_max)
    }

    /// Left derivative of `eval`.
    pub fn derivative(&self, accumulation: f64) -> f64 {
        let bp = &self.breakpoints;
        if bp.len() < 2 {
            return 0.0;
        }
        // segment i spans (H_i, H_{i+1}]
        let Some(i) = bp
            .windows(2)
            .position(|w| accumulation > w[0].0 && accumulation <= w[1].0)
        else {
            return 0.0;
        };
        let (h0, v0) = bp[i];
        let (h1, v1) = bp[i + 1];
        let raw = self.raw(accumulation);
        // the clamp is active on the left side of the point
        if raw > self.v_max || raw < self.v_min {
            return 0.0;
        }
        let slope = (v1 - v0) / (h1 - h0);
        if (raw == self.v_max && slope > 0.0) || (raw == self.v_min && slope < 0.0) {
            return 0.0;
        }
        slope
    }

    fn raw(&self, accumulation: f64) -> f64 {
        let bp = &self.breakpoints;
        match bp.len() {
            0 => self.v_max,
            1 => bp[0].1,
            _ => {
                if accumulation <= bp[0].0 {
                    return bp[0].1;
                }
                for w in bp.windows(2) {
                    let ((h0, v0), (h1, v1)) = (w[0], w[1]);
                    if accumulation <= h1 {
                        let s = (accumulation - h0) / (h1 - h0);
                        return v0 + s * (v1 - v0);
                    }
                }
                bp[bp.len() - 1].1
            }
        }
    }
}

/// Dense `K x L x N` tensor indexed by (arrival class, length cell, time cell).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

/// Travellers of class `(k, l)` departing in time cell `n`.
pub type DeparturePattern = Tensor3;

impl Tensor3 {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for {:?}, got {}",
                dims.0 * dims.1 * dims.2,
                dims,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for k in 0..dims.0 {
            for l in 0..dims.1 {
                for n in 0..dims.2 {
                    data.push(f(k, l, n));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, n: usize) -> usize {
        (k * self.dims.1 + l) * self.dims.2 + n
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, n: usize) -> f64 {
        self.data[self.index(k, l, n)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, n: usize, value: f64) {
        let i = self.index(k, l, n);
        self.data[i] = value;
    }

    #[inline]
    pub fn add(&mut self, k: usize, l: usize, n: usize, value: f64) {
        let i = self.index(k, l, n);
        self.data[i] += value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, k: usize, l: usize) -> &[f64] {
        let start = self.index(k, l, 0);
        &self.data[start..start + self.dims.2]
    }

    pub fn row_mut(&mut self, k: usize, l: usize) -> &mut [f64] {
        let start = self.index(k, l, 0);
        let n = self.dims.2;
        &mut self.data[start..start + n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Tensor3 {
        self.map(|x| x * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Tensor3) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + factor * b)
                .collect(),
        }
    }

    /// Sum over the arrival-class axis, giving an `L x N` row-major matrix.
    pub fn class_sum(&self) -> Vec<f64> {
        let (nk, nl, nn) = self.dims;
        let mut out = vec![0.0; nl * nn];
        for k in 0..nk {
            for (o, x) in out
                .iter_mut()
                .zip(&self.data[k * nl * nn..(k + 1) * nl * nn])
            {
                *o += x;
            }
        }
        out
    }
}

/// Travellers per (arrival class, length cell).
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    n_classes: usize,
    n_length: usize,
    counts: Vec<f64>,
}

impl DemandProfile {
    pub fn zeros(n_classes: usize, n_length: usize) -> Self {
        Self {
            n_classes,
            n_length,
            counts: vec![0.0; n_classes * n_length],
        }
    }

    pub fn from_vec(n_classes: usize, n_length: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != n_classes * n_length {
            return Err(Error::DimensionMismatch(format!(
                "demand needs {} entries, got {}",
                n_classes * n_length,
                counts.len()
            )));
        }
        Ok(Self {
            n_classes,
            n_length,
            counts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_length(&self) -> usize {
        self.n_length
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.counts[k * self.n_length + l]
    }

    pub fn set(&mut self, k: usize, l: usize, value: f64) {
        self.counts[k * self.n_length + l] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn class_total(&self, k: usize) -> f64 {
        self.counts[k * self.n_length..(k + 1) * self.n_length]
            .iter()
            .sum()
    }
}

/// Initial traveller density over remaining distance, sampled at the `L + 1`
/// length-cell edges and linear in between. Zero beyond `x_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    density: Vec<f64>,
    dx: f64,
    tail: Vec<f64>,
}

impl InitialState {
    pub fn new(density: Vec<f64>, dx: f64) -> Self {
        let n = density.len();
        let mut tail = vec![0.0; n];
        for j in (0..n.saturating_sub(1)).rev() {
            tail[j] = tail[j + 1] + 0.5 * dx * (density[j] + density[j + 1]);
        }
        Self { density, dx, tail }
    }

    pub fn empty(grid: &Grid) -> Self {
        Self::new(vec![0.0; grid.n_length + 1], grid.dx())
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        let dx = grid.dx();
        Self::new((0..=grid.n_length).map(|j| f(j as f64 * dx)).collect(), dx)
    }

    pub fn density_edges(&self) -> &[f64] {
        &self.density
    }

    pub fn x_max(&self) -> f64 {
        self.dx * (self.density.len().saturating_sub(1)) as f64
    }

    /// Travellers initially present.
    pub fn total(&self) -> f64 {
        self.tail.first().copied().unwrap_or(0.0)
    }

    /// `k(x)`: linear interpolation of the edge samples.
    pub fn density(&self, x: f64) -> f64 {
        let Some((j, u)) = self.locate(x) else {
            return 0.0;
        };
        self.density[j] * (1.0 - u) + self.density[j + 1] * u
    }

    /// `h(x)`: travellers whose remaining distance exceeds `x`.
    pub fn tail_mass(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.total();
        }
        let Some((j, u)) = self.locate(x) else {
            return 0.0;
        };
        let within = self.dx
            * (self.density[j] * 0.5 * (1.0 - u) * (1.0 - u)
                + self.density[j + 1] * 0.5 * (1.0 - u * u));
        within + self.tail[j + 1]
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let cells = self.density.len().checked_sub(1)?;
        if cells == 0 || x < 0.0 || x >= self.x_max() {
            return None;
        }
        let s = x / self.dx;
        let j = (s.floor() as usize).min(cells - 1);
        Some((j, s - j as f64))
    }
}

/// Scheduling cost rates. Travel time costs `alpha` per second, early
/// arrival `beta`, late arrival `gamma`; trips still running at the end of
/// the horizon additionally pay `terminal_penalty_rate` per second of
/// projected travel beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub terminal_penalty_rate: f64,
}

impl CostParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, terminal_penalty_rate: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            terminal_penalty_rate,
        }
    }

    /// Preference set used for the Lyon experiments with heterogeneity index
    /// `k`: `beta = 0.4 + 0.2 k / 9`, `gamma = 1.5 + k / 9`.
    pub fn lyon(k: f64) -> Self {
        Self::new(1.0, 0.4 + 0.2 * k / 9.0, 1.5 + k / 9.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl Violation {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Collect every invariant violation of a scenario. Empty means valid. The
/// report is sorted so it does not depend on check order.
pub fn validate_scenario(
    grid: &Grid,
    demand: &DemandProfile,
    init: &InitialState,
    speed: &SpeedFunction,
    params: &CostParams,
) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(grid.t_end.is_finite() && grid.t_end > 0.0) || grid.n_time == 0 {
        out.push(Violation::new(
            "grid_time",
            format!("t_end={} n_time={}", grid.t_end, grid.n_time),
        ));
    }
    if !(grid.x_max.is_finite() && grid.x_max > 0.0) || grid.n_length == 0 {
        out.push(Violation::new(
            "grid_length",
            format!("x_max={} n_length={}", grid.x_max, grid.n_length),
        ));
    }
    if grid.arrival_times.is_empty() {
        out.push(Violation::new("arrival_times_empty", "no arrival classes"));
    }
    for (i, w) in grid.arrival_times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            out.push(Violation::new(
                "arrival_times_order",
                format!(
                    "arrival_times[{}]={} !< arrival_times[{}]={}",
                    i,
                    w[0],
                    i + 1,
                    w[1]
                ),
            ));
        }
    }
    for (i, &ta) in grid.arrival_times.iter().enumerate() {
        if !(ta >= 0.0 && ta <= grid.t_end) {
            out.push(Violation::new(
                "arrival_time_range",
                format!("arrival_times[{i}]={ta} outside [0, {}]", grid.t_end),
            ));
        }
    }

    if !(speed.v_min > 0.0) {
        out.push(Violation::new(
            "speed_floor",
            format!("v_min={} must be > 0", speed.v_min),
        ));
    }
    if !(speed.v_max >= speed.v_min) || !speed.v_max.is_finite() {
        out.push(Violation::new(
            "speed_bounds",
            format!("v_min={} v_max={}", speed.v_min, speed.v_max),
        ));
    }
    if speed.breakpoints.is_empty() {
        out.push(Violation::new("speed_breakpoints", "no breakpoints"));
    }
    for (i, &(h, v)) in speed.breakpoints.iter().enumerate() {
        if !(v > 0.0) || v < speed.v_min {
            out.push(Violation::new(
                "speed_floor",
                format!(
                    "breakpoint {i} (H={h}) has speed {v} below v_min={}",
                    speed.v_min
                ),
            ));
        }
        if v > speed.v_max {
            out.push(Violation::new(
                "speed_ceiling",
                format!(
                    "breakpoint {i} (H={h}) has speed {v} above v_max={}",
                    speed.v_max
                ),
            ));
        }
        if h < 0.0 || !h.is_finite() {
            out.push(Violation::new(
                "speed_breakpoint_range",
                format!("breakpoint {i} at H={h}"),
            ));
        }
    }
    for (i, w) in speed.breakpoints.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            out.push(Violation::new(
                "speed_breakpoint_order",
                format!("breakpoint {} accumulation not increasing", i + 1),
            ));
        }
        if w[1].1 > w[0].1 {
            out.push(Violation::new(
                "speed_increasing",
                format!("speed rises between breakpoints {i} and {}", i + 1),
            ));
        }
    }

    if demand.n_classes() != grid.n_classes() || demand.n_length() != grid.n_length {
        out.push(Violation::new(
            "demand_shape",
            format!(
                "demand is {}x{}, grid expects {}x{}",
                demand.n_classes(),
                demand.n_length(),
                grid.n_classes(),
                grid.n_length
            ),
        ));
    }
    for k in 0..demand.n_classes() {
        for l in 0..demand.n_length() {
            let m = demand.get(k, l);
            if !m.is_finite() {
                out.push(Violation::new(
                    "nonfinite_demand",
                    format!("class {k} cell {l}"),
                ));
            } else if m < 0.0 {
                out.push(Violation::new(
                    "negative_demand",
                    format!("class {k} cell {l} has {m}"),
                ));
            }
        }
    }

    if init.density_edges().len() != grid.n_length + 1 {
        out.push(Violation::new(
            "density_shape",
            format!(
                "initial density has {} edge samples, grid expects {}",
                init.density_edges().len(),
                grid.n_length + 1
            ),
        ));
    }
    for (j, &k) in init.density_edges().iter().enumerate() {
        if !(k >= 0.0) || !k.is_finite() {
            out.push(Violation::new(
                "negative_density",
                format!("edge {j} has {k}"),
            ));
        }
    }

    if !(params.beta > 0.0) {
        out.push(Violation::new(
            "cost_beta",
            format!("beta={} must be > 0", params.beta),
        ));
    }
    if !(params.alpha > params.beta) {
        out.push(Violation::new(
            "cost_alpha_beta",
            format!("alpha={} must exceed beta={}", params.alpha, params.beta),
        ));
    }
    if !(params.gamma > 0.0) {
        out.push(Violation::new(
            "cost_gamma",
            format!("gamma={} must be > 0", params.gamma),
        ));
    }
    if !(params.terminal_penalty_rate >= 0.0) {
        out.push(Violation::new(
            "cost_terminal",
            format!("terminal_penalty_rate={}", params.terminal_penalty_rate),
        ));
    }

    out.sort();
    out
}

/// True iff `f >= 0` and each row carries its demand to within
/// `tol * max(1, m)`.
pub fn feasible_mass_check(f: &DeparturePattern, m: &DemandProfile, tol: f64) -> Result<bool> {
    let (nk, nl, _) = f.dims();
    if nk != m.n_classes() || nl != m.n_length() {
        return Err(Error::DimensionMismatch(format!(
            "pattern {:?} vs demand {}x{}",
            f.dims(),
            m.n_classes(),
            m.n_length()
        )));
    }
    if f.as_slice().iter().any(|&x| !(x >= 0.0)) {
        return Ok(false);
    }
    for k in 0..nk {
        for l in 0..nl {
            let target = m.get(k, l);
            let mass: f64 = f.row(k, l).iter().sum();
            if (mass - target).abs() > tol * target.max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(3600.0, 60, 10_000.0, 10, vec![1800.0, 2700.0])
    }

    fn speed() -> SpeedFunction {
        SpeedFunction::new(vec![(0.0, 15.0), (100.0, 10.0), (300.0, 2.0)], 1.0, 15.0)
    }

    fn demand() -> DemandProfile {
        DemandProfile::from_vec(2, 10, (0..20).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn well_formed_scenario_is_valid() {
        let g = grid();
        let v = validate_scenario(
            &g,
            &demand(),
            &InitialState::empty(&g),
            &speed(),
            &CostParams::lyon(5.0),
        );
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn zero_speed_breakpoint_is_flagged() {
        let g = grid();
        let s = SpeedFunction::new(vec![(0.0, 15.0), (100.0, 0.0)], 1.0, 15.0);
        let v = validate_scenario(
            &g,
            &demand(),
            &InitialState::empty(&g),
            &s,
            &CostParams::lyon(5.0),
        );
        assert!(v.iter().any(|x| x.code == "speed_floor"));
    }

    #[test]
    fn negative_demand_is_flagged() {
        let g = grid();
        let mut d = demand();
        d.set(1, 3, -2.0);
        let v = validate_scenario(
            &g,
            &d,
            &InitialState::empty(&g),
            &speed(),
            &CostParams::lyon(5.0),
        );
        assert_eq!(v.iter().filter(|x| x.code == "negative_demand").count(), 1);
    }

    #[test]
    fn alpha_must_exceed_beta() {
        let g = grid();
        let v = validate_scenario(
            &g,
            &demand(),
            &InitialState::empty(&g),
            &speed(),
            &CostParams::new(0.5, 0.6, 2.0, 0.0),
        );
        assert_eq!(v[0].code, "cost_alpha_beta");
    }

    #[test]
    fn report_is_sorted_and_deterministic() {
        let g = Grid::new(-1.0, 0, 0.0, 0, vec![5.0, 1.0]);
        let d = DemandProfile::zeros(1, 1);
        let i = InitialState::new(vec![-1.0], 1.0);
        let s = SpeedFunction::new(vec![(0.0, 0.0), (1.0, 2.0)], 0.0, 1.0);
        let p = CostParams::new(0.0, 0.0, 0.0, -1.0);
        let a = validate_scenario(&g, &d, &i, &s, &p);
        let b = validate_scenario(&g, &d, &i, &s, &p);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.len() > 8);
    }

    #[test]
    fn mass_check_examples() {
        let m = demand();
        let mut f = Tensor3::zeros((2, 10, 5));
        for k in 0..2 {
            for l in 0..10 {
                f.set(k, l, 0, m.get(k, l));
            }
        }
        assert!(feasible_mass_check(&f, &m, 1e-12).unwrap());
        assert!(!feasible_mass_check(&f.scaled(1.1), &m, 1e-6).unwrap());
        let mut g = f.clone();
        g.set(0, 0, 3, -1e-12);
        assert!(!feasible_mass_check(&g, &m, 1e-6).unwrap());
        let bad = Tensor3::zeros((3, 10, 5));
        assert_eq!(
            feasible_mass_check(&bad, &m, 1e-6).unwrap_err().code(),
            "dimension_mismatch"
        );
    }

    #[test]
    fn speed_interpolates_and_clamps() {
        let s = speed();
        assert_eq!(s.eval(0.0), 15.0);
        assert_relative_eq!(s.eval(50.0), 12.5);
        assert_relative_eq!(s.eval(200.0), 6.0);
        assert_eq!(s.eval(1e9), 2.0);
        assert_relative_eq!(s.derivative(50.0), -0.05);
        // left derivative at a breakpoint
        assert_relative_eq!(s.derivative(100.0), -0.05);
        assert_relative_eq!(s.derivative(100.0 + 1e-9), -0.04);
        assert_eq!(s.derivative(0.0), 0.0);
        assert_eq!(s.derivative(400.0), 0.0);
        let c = SpeedFunction::constant(7.0);
        assert_eq!(c.eval(123.0), 7.0);
        assert_eq!(c.derivative(123.0), 0.0);
    }

    #[test]
    fn tail_mass_matches_trapezoid() {
        let g = grid();
        let init = InitialState::from_fn(&g, |x| 0.01 * (1.0 - x / 10_000.0));
        // exact integral of a linear density
        assert_relative_eq!(init.total(), 0.01 * 10_000.0 / 2.0, max_relative = 1e-12);
        let x = 2345.0;
        let exact = 0.01 * (10_000.0 - x) * (10_000.0 - x) / (2.0 * 10_000.0);
        assert_relative_eq!(init.tail_mass(x), exact, max_relative = 1e-12);
        assert_eq!(init.tail_mass(10_000.0), 0.0);
        assert_eq!(init.tail_mass(20_000.0), 0.0);
        assert_eq!(init.density(10_000.0), 0.0);
    }

    proptest! {
        #[test]
        fn speed_is_bounded_and_monotone(h1 in 0.0f64..500.0, h2 in 0.0f64..500.0) {
            let s = speed();
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            prop_assert!(s.eval(lo) >= s.eval(hi));
            prop_assert!(s.eval(h1) >= s.v_min && s.eval(h1) <= s.v_max);
        }

        #[test]
        fn tail_mass_is_nonincreasing(
            edges in proptest::collection::vec(0.0f64..5.0, 11),
            a in 0.0f64..12.0,
            b in 0.0f64..12.0,
        ) {
            let init = InitialState::new(edges, 1.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(init.tail_mass(lo) >= init.tail_mass(hi) - 1e-12);
            prop_assert!((init.tail_mass(0.0) - init.total()).abs() < 1e-12);
            // derivative of h is -k
            let x = 0.5 + lo * 0.75;
            let eps = 1e-6;
            let fd = (init.tail_mass(x + eps) - init.tail_mass(x - eps)) / (2.0 * eps);
            prop_assert!((fd + init.density(x)).abs() < 1e-5);
        }
    }
}
