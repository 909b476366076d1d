//! A complete problem instance and the built-in synthetic generators.

use crate::dynamics::SupplyConstraint;
use crate::model::{
    validate_scenario, CostParams, DemandProfile, Grid, InitialState, SpeedFunction, Violation,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub grid: Grid,
    pub demand: DemandProfile,
    pub init: InitialState,
    pub speed: SpeedFunction,
    pub params: CostParams,
    pub supply: Option<SupplyConstraint>,
}

impl Scenario {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = validate_scenario(
            &self.grid,
            &self.demand,
            &self.init,
            &self.speed,
            &self.params,
        );
        if let Some(s) = &self.supply {
            out.extend(s.validate(&self.grid));
            out.sort();
        }
        out
    }
}

/// Names accepted by [`generate`].
pub const GENERATORS: [&str; 3] = ["paris-scaled", "lyon-like", "constant-speed"];

pub fn generate(name: &str, total: Option<f64>) -> Option<Scenario> {
    match name {
        "paris-scaled" => Some(paris_scaled(total.unwrap_or(10_000.0))),
        "lyon-like" => Some(lyon_like(total.unwrap_or(11_235.0))),
        "constant-speed" => Some(constant_speed(total.unwrap_or(150.0))),
        _ => None,
    }
}

/// Three arrival classes at 8:00, 8:30 and 9:00 (clock starts at 6:00) and
/// two trip-length bands, [0, 18] km and [18, 42] km, uniform within each.
/// The speed law is scaled with `total` so congestion stays comparable.
pub fn paris_scaled(total: f64) -> Scenario {
    let grid = Grid::new(
        21_600.0,
        180,
        42_000.0,
        14,
        vec![7_200.0, 9_000.0, 10_800.0],
    );
    // (short band, long band) share per class
    let shares = [(0.12, 0.18), (0.20, 0.30), (0.08, 0.12)];
    let split = 6; // cells 0..6 cover [0, 18] km
    let mut demand = DemandProfile::zeros(3, grid.n_length);
    for (k, &(short, long)) in shares.iter().enumerate() {
        for l in 0..grid.n_length {
            let m = if l < split {
                total * short / split as f64
            } else {
                total * long / (grid.n_length - split) as f64
            };
            demand.set(k, l, m);
        }
    }
    let speed = SpeedFunction::new(
        vec![
            (0.0, 13.9),
            (0.2 * total, 9.0),
            (0.5 * total, 4.5),
            (0.8 * total, 2.5),
        ],
        1.0,
        13.9,
    );
    Scenario {
        label: "paris-scaled".into(),
        init: InitialState::empty(&grid),
        grid,
        demand,
        speed,
        params: CostParams::new(1.0, 0.5, 2.0, 0.0),
        supply: None,
    }
}

/// Seven classes every 30 minutes from 7:00 (clock starts at 6:00) with
/// short urban trips. Class sizes and mean lengths follow a published
/// morning-peak profile; lengths are drawn from a gamma(2) shape.
pub fn lyon_like(total: f64) -> Scenario {
    let counts = [1543.0, 1555.0, 1732.0, 2056.0, 1691.0, 1328.0, 1330.0];
    let mean_km = [2.53, 2.58, 2.55, 2.65, 2.63, 2.70, 2.63];
    let count_sum: f64 = counts.iter().sum();
    let arrivals = (0..7).map(|k| 3_600.0 + 1_800.0 * k as f64).collect();
    let grid = Grid::new(21_600.0, 360, 10_000.0, 25, arrivals);
    let dx = grid.dx();
    let mut demand = DemandProfile::zeros(7, grid.n_length);
    for k in 0..7 {
        let theta = mean_km[k] * 1000.0 / 2.0;
        let weights: Vec<f64> = (0..grid.n_length)
            .map(|l| {
                let x = (l as f64 + 0.5) * dx;
                x * (-x / theta).exp()
            })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let class_total = total * counts[k] / count_sum;
        for (l, w) in weights.iter().enumerate() {
            demand.set(k, l, class_total * w / wsum);
        }
    }
    let scale = total / 11_235.0;
    let speed = SpeedFunction::new(
        vec![
            (0.0, 13.28),
            (300.0 * scale, 11.0),
            (900.0 * scale, 6.0),
            (1_600.0 * scale, 2.5),
        ],
        1.0,
        13.28,
    );
    Scenario {
        label: "lyon-like".into(),
        init: InitialState::empty(&grid),
        grid,
        demand,
        speed,
        params: CostParams::lyon(5.0),
        supply: None,
    }
}

/// Load-independent 10 m/s network on a 3x5x60 grid. Desired arrival
/// times sit on cell boundaries so that every (class, length) cell has a
/// departure cell whose center arrives exactly on time.
pub fn constant_speed(total: f64) -> Scenario {
    let grid = Grid::new(3_600.0, 60, 3_000.0, 5, vec![1_200.0, 1_800.0, 2_400.0]);
    let rows = (grid.n_classes() * grid.n_length) as f64;
    let demand = DemandProfile::from_vec(3, 5, vec![total / rows; 15]).expect("shape");
    Scenario {
        label: "constant-speed".into(),
        init: InitialState::empty(&grid),
        grid,
        demand,
        speed: SpeedFunction::constant(10.0),
        params: CostParams::new(1.0, 0.5, 2.0, 0.0),
        supply: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generators_are_valid() {
        for name in GENERATORS {
            let s = generate(name, None).unwrap();
            assert!(s.validate().is_empty(), "{name}: {:?}", s.validate());
            assert_eq!(s.label, name);
        }
        assert!(generate("nope", None).is_none());
    }

    #[test]
    fn paris_shares() {
        let s = paris_scaled(10_000.0);
        assert_relative_eq!(s.demand.total(), 10_000.0, max_relative = 1e-12);
        let band = |k: usize, short: bool| -> f64 {
            (0..14)
                .filter(|&l| (l < 6) == short)
                .map(|l| s.demand.get(k, l))
                .sum()
        };
        let expected = [(1200.0, 1800.0), (2000.0, 3000.0), (800.0, 1200.0)];
        for (k, (a, b)) in expected.iter().enumerate() {
            assert_relative_eq!(band(k, true), *a, max_relative = 1e-12);
            assert_relative_eq!(band(k, false), *b, max_relative = 1e-12);
        }
        // uniform within a band
        assert_relative_eq!(s.demand.get(1, 0), s.demand.get(1, 5));
        assert_relative_eq!(s.demand.get(1, 6), s.demand.get(1, 13));
        assert_eq!(s.grid.length_edge(6), 18_000.0);
    }

    #[test]
    fn lyon_class_sizes() {
        let s = lyon_like(11_235.0);
        assert_relative_eq!(s.demand.total(), 11_235.0, max_relative = 1e-12);
        assert_relative_eq!(s.demand.class_total(3), 2056.0, max_relative = 1e-12);
        assert_eq!(s.grid.arrival_times[0], 3_600.0);
        assert_eq!(s.grid.arrival_times[6], 14_400.0);
    }
}
