//! Scenario files (TOML plus CSV side files) and result CSVs.
//!
//! Layout of a scenario file:
//!
//! ```toml
//! label = "paris-scaled"
//!
//! [grid]
//! t_end = 21600.0
//! n_time = 180
//! x_max = 42000.0
//! n_length = 14
//! arrival_times = [7200.0, 9000.0, 10800.0]
//!
//! [speed]                 # either inline breakpoints or file = "speed.csv"
//! v_min = 1.0
//! v_max = 13.9
//! breakpoints = [[0.0, 13.9], [2000.0, 9.0]]
//!
//! [cost]
//! alpha = 1.0
//! beta = 0.5
//! gamma = 2.0
//!
//! [supply]                # optional; constant sigma or file = "supply.csv"
//! sigma_min = 1.0
//! sigma = 4.0
//!
//! [files]
//! demand = "demand.csv"   # class,length_cell,count
//! initial = "initial.csv" # edge,density (optional, empty network if absent)
//! trips = "trips.csv"     # origin_len_m,desired_arrival_s,count (instead of demand)
//! ```
//!
//! Relative paths are resolved against the scenario file's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SupplyConstraint;
use crate::error::{Error, Result};
use crate::model::{
    CostParams, DemandProfile, DeparturePattern, Grid, InitialState, SpeedFunction, Tensor3,
};
use crate::optimizer::{OptimizationHistory, Trajectory};
use crate::particles::{ParticleTrajectory, TripRecord, TripReport};
use crate::scenario::Scenario;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    label: String,
    grid: Grid,
    speed: SpeedSection,
    cost: CostParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supply: Option<SupplySection>,
    files: FilesSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeedSection {
    v_min: f64,
    v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    breakpoints: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupplySection {
    sigma_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trips: Option<String>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::Config {
        message: format!("cannot open {}: {e}", path.display()),
        line: None,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Rows of a headed numeric CSV with the expected columns.
fn read_numeric(path: &Path, columns: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != columns {
        return Err(Error::Config {
            message: format!(
                "{}: expected header {}, found {}",
                path.display(),
                columns.join(","),
                found.join(",")
            ),
            line: Some(1),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut row = Vec::with_capacity(columns.len());
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Config {
                message: format!("{}: cannot parse {field:?} as a number", path.display()),
                line: Some(line),
            })?;
            row.push(v);
        }
        out.push((line, row));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::Config {
        message: format!("{}: {e}", path.display()),
        line,
    }
}

fn index_field(path: &Path, line: usize, v: f64, bound: usize, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v >= bound as f64 {
        return Err(Error::Config {
            message: format!("{}: {what} {v} outside 0..{bound}", path.display()),
            line: Some(line),
        });
    }
    Ok(v as usize)
}

fn read_demand(path: &Path, grid: &Grid) -> Result<DemandProfile> {
    let mut d = DemandProfile::zeros(grid.n_classes(), grid.n_length);
    for (line, row) in read_numeric(path, &["class", "length_cell", "count"])? {
        let k = index_field(path, line, row[0], grid.n_classes(), "class")?;
        let l = index_field(path, line, row[1], grid.n_length, "length_cell")?;
        d.set(k, l, d.get(k, l) + row[2]);
    }
    Ok(d)
}

/// Aggregate individual trips into the grid: the class is the nearest
/// desired-arrival instant, the length cell the one containing the trip.
fn read_trips(path: &Path, grid: &Grid) -> Result<DemandProfile> {
    let mut d = DemandProfile::zeros(grid.n_classes(), grid.n_length);
    let dx = grid.dx();
    for (line, row) in read_numeric(path, &["origin_len_m", "desired_arrival_s", "count"])? {
        let (len, ta, count) = (row[0], row[1], row[2]);
        if !(len >= 0.0 && len <= grid.x_max) {
            return Err(Error::Config {
                message: format!(
                    "{}: trip length {len} outside [0, {}]",
                    path.display(),
                    grid.x_max
                ),
                line: Some(line),
            });
        }
        let k = grid
            .arrival_times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - ta).abs().total_cmp(&(b.1 - ta).abs()))
            .map(|(k, _)| k)
            .ok_or_else(|| Error::config("grid has no arrival classes"))?;
        let l = ((len / dx) as usize).min(grid.n_length - 1);
        d.set(k, l, d.get(k, l) + count);
    }
    Ok(d)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        message: format!("cannot read {}: {e}", path.display()),
        line: None,
    })?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Config {
        message: format!("{}: {}", path.display(), e.message()),
        line: e.span().map(|s| line_of(&text, s.start)),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };
    let grid = file.grid;
    if grid.n_length == 0 || grid.n_time == 0 {
        return Err(Error::Validation(crate::model::validate_scenario(
            &grid,
            &DemandProfile::zeros(0, 0),
            &InitialState::new(Vec::new(), 1.0),
            &SpeedFunction::constant(1.0),
            &file.cost,
        )));
    }

    let breakpoints = match (&file.speed.breakpoints, &file.speed.file) {
        (Some(b), None) => b.clone(),
        (None, Some(f)) => read_numeric(&resolve(f), &["accumulation", "speed"])?
            .into_iter()
            .map(|(_, r)| (r[0], r[1]))
            .collect(),
        _ => {
            return Err(Error::config(
                "[speed] needs exactly one of `breakpoints` or `file`",
            ))
        }
    };
    let speed = SpeedFunction::new(breakpoints, file.speed.v_min, file.speed.v_max);

    let demand = match (&file.files.demand, &file.files.trips) {
        (Some(d), None) => read_demand(&resolve(d), &grid)?,
        (None, Some(t)) => read_trips(&resolve(t), &grid)?,
        _ => {
            return Err(Error::config(
                "[files] needs exactly one of `demand` or `trips`",
            ))
        }
    };

    let init = match &file.files.initial {
        Some(p) => {
            let p = resolve(p);
            let rows = read_numeric(&p, &["edge", "density"])?;
            let mut edges = vec![0.0; grid.n_length + 1];
            for (line, row) in rows {
                let j = index_field(&p, line, row[0], grid.n_length + 1, "edge")?;
                edges[j] = row[1];
            }
            InitialState::new(edges, grid.dx())
        }
        None => InitialState::empty(&grid),
    };

    let supply = match file.supply {
        None => None,
        Some(s) => Some(match (s.sigma, &s.file) {
            (Some(c), None) => SupplyConstraint {
                sigma: vec![c; grid.n_time + 1],
                sigma_min: s.sigma_min,
            },
            (None, Some(f)) => {
                let p = resolve(f);
                let mut sigma = vec![f64::NAN; grid.n_time + 1];
                for (line, row) in read_numeric(&p, &["node", "sigma"])? {
                    let n = index_field(&p, line, row[0], grid.n_time + 1, "node")?;
                    sigma[n] = row[1];
                }
                SupplyConstraint {
                    sigma,
                    sigma_min: s.sigma_min,
                }
            }
            _ => {
                return Err(Error::config(
                    "[supply] needs exactly one of `sigma` or `file`",
                ))
            }
        }),
    };

    let scenario = Scenario {
        label: file.label,
        grid,
        demand,
        init,
        speed,
        params: file.cost,
        supply,
    };
    let violations = scenario.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(scenario)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `scenario.toml` plus its CSV side files into `dir`. Values are
/// written in shortest round-trip form, so loading gives back the same
/// scenario.
pub fn save_scenario(dir: impl AsRef<Path>, scenario: &Scenario) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;

    let mut demand = String::from("class,length_cell,count\n");
    for k in 0..scenario.demand.n_classes() {
        for l in 0..scenario.demand.n_length() {
            writeln!(demand, "{k},{l},{:?}", scenario.demand.get(k, l)).unwrap();
        }
    }
    write_file(&dir.join("demand.csv"), &demand)?;

    let mut initial = String::from("edge,density\n");
    for (j, v) in scenario.init.density_edges().iter().enumerate() {
        writeln!(initial, "{j},{v:?}").unwrap();
    }
    write_file(&dir.join("initial.csv"), &initial)?;

    let supply = match &scenario.supply {
        None => None,
        Some(s) => {
            let mut text = String::from("node,sigma\n");
            for (n, v) in s.sigma.iter().enumerate() {
                writeln!(text, "{n},{v:?}").unwrap();
            }
            write_file(&dir.join("supply.csv"), &text)?;
            Some(SupplySection {
                sigma_min: s.sigma_min,
                sigma: None,
                file: Some("supply.csv".into()),
            })
        }
    };

    let file = ScenarioFile {
        label: scenario.label.clone(),
        grid: scenario.grid.clone(),
        speed: SpeedSection {
            v_min: scenario.speed.v_min,
            v_max: scenario.speed.v_max,
            breakpoints: Some(scenario.speed.breakpoints.clone()),
            file: None,
        },
        cost: scenario.params,
        supply,
        files: FilesSection {
            demand: Some("demand.csv".into()),
            initial: Some("initial.csv".into()),
            trips: None,
        },
    };
    let text = toml::to_string(&file).map_err(|e| Error::config(e.to_string()))?;
    let path = dir.join("scenario.toml");
    write_file(&path, &text)?;
    Ok(path)
}

/// `%.12g`: 12 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e12)`.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed).to_string()
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Files written and their data-row counts (header excluded).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, usize)>,
}

impl Manifest {
    fn add(&mut self, name: &str, rows: usize) {
        self.entries.push((name.to_string(), rows));
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for (name, rows) in &self.entries {
            writeln!(s, "{name} {rows}").unwrap();
        }
        s
    }
}

/// Everything a `solve-so` run produces.
pub struct SolveOutput<'a> {
    pub scenario: &'a Scenario,
    pub history: &'a OptimizationHistory,
    /// Trajectory of the returned pattern.
    pub trajectory: &'a Trajectory,
    pub class_costs: &'a [f64],
}

fn write_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: &[String],
    manifest: &mut Manifest,
) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 48);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_file(&dir.join(name), &text)?;
    manifest.add(name, rows.len());
    Ok(())
}

fn trajectory_rows(grid: &Grid, z: &[f64], h: &[f64], v: &[f64]) -> Vec<String> {
    (0..h.len())
        .map(|n| {
            format!(
                "{},{},{},{}",
                fmt12(grid.time_node(n)),
                fmt12(z[n]),
                fmt12(h[n]),
                fmt12(v[n])
            )
        })
        .collect()
}

pub fn pattern_rows(f: &DeparturePattern) -> Vec<String> {
    let (nk, nl, nn) = f.dims();
    let mut rows = Vec::with_capacity(nk * nl * nn);
    for k in 0..nk {
        for l in 0..nl {
            for n in 0..nn {
                rows.push(format!("{k},{l},{n},{}", fmt12(f.get(k, l, n))));
            }
        }
    }
    rows
}

/// Write history.csv, f_star.csv, trajectory.csv, trajectories.csv (one
/// block per iteration, when kept), summary.txt and manifest.txt.
pub fn emit_results(out_dir: impl AsRef<Path>, out: &SolveOutput) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    create_dir(dir)?;
    let mut manifest = Manifest::default();
    let grid = &out.scenario.grid;

    let history: Vec<String> = out
        .history
        .records
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.iter,
                fmt12(r.objective),
                fmt12(r.best),
                fmt12(r.residual),
                fmt12(r.step),
                fmt12(r.seconds)
            )
        })
        .collect();
    write_csv(
        dir,
        "history.csv",
        "iter,objective,best,residual,step,seconds",
        &history,
        &mut manifest,
    )?;

    write_csv(
        dir,
        "f_star.csv",
        "k,l,n,count",
        &pattern_rows(&out.history.best_pattern),
        &mut manifest,
    )?;

    let t = out.trajectory;
    write_csv(
        dir,
        "trajectory.csv",
        "t,z,H,v",
        &trajectory_rows(grid, &t.z, &t.accumulation, &t.speed),
        &mut manifest,
    )?;

    let mut per_iter = Vec::new();
    for r in &out.history.records {
        if let Some(t) = &r.trajectory {
            for row in trajectory_rows(grid, &t.z, &t.accumulation, &t.speed) {
                per_iter.push(format!("{},{row}", r.iter));
            }
        }
    }
    if !per_iter.is_empty() {
        write_csv(
            dir,
            "trajectories.csv",
            "iter,t,z,H,v",
            &per_iter,
            &mut manifest,
        )?;
    }

    let total = out.scenario.demand.total();
    let mut summary = String::new();
    writeln!(summary, "scenario {}", out.scenario.label).unwrap();
    writeln!(summary, "travellers {}", fmt12(total)).unwrap();
    writeln!(summary, "iterations {}", out.history.records.len()).unwrap();
    writeln!(summary, "converged {}", out.history.converged).unwrap();
    writeln!(summary, "total_cost {}", fmt12(out.history.best_objective)).unwrap();
    let avg = if total > 0.0 {
        out.history.best_objective / total
    } else {
        0.0
    };
    writeln!(summary, "average_cost {}", fmt12(avg)).unwrap();
    if let (Some(first), Some(last)) = (out.history.records.first(), out.history.records.last()) {
        writeln!(summary, "initial_objective {}", fmt12(first.objective)).unwrap();
        writeln!(summary, "initial_residual {}", fmt12(first.residual)).unwrap();
        writeln!(summary, "final_residual {}", fmt12(last.residual)).unwrap();
    }
    for (k, c) in out.class_costs.iter().enumerate() {
        let m = out.scenario.demand.class_total(k);
        let mean = if m > 0.0 { c / m } else { 0.0 };
        writeln!(
            summary,
            "class {k} travellers {} average_cost {}",
            fmt12(m),
            fmt12(mean)
        )
        .unwrap();
    }
    write_file(&dir.join("summary.txt"), &summary)?;
    manifest.add("summary.txt", summary.lines().count());

    manifest.add("manifest.txt", manifest.entries.len() + 1);
    write_file(&dir.join("manifest.txt"), &manifest.render())?;
    Ok(manifest)
}

/// Write trips.csv, trajectory.csv, report.csv and manifest.txt for a
/// particle run.
pub fn emit_particles(
    out_dir: impl AsRef<Path>,
    trips: &[TripRecord],
    trajectory: &ParticleTrajectory,
    report: &TripReport,
) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    create_dir(dir)?;
    let mut manifest = Manifest::default();
    let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
    let rows: Vec<String> = trips
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{},{},{},{}",
                t.class_id,
                fmt12(t.depart),
                fmt12(t.desired),
                fmt12(t.length),
                opt(t.arrival),
                opt(t.cost),
                t.unfinished as u8
            )
        })
        .collect();
    write_csv(
        dir,
        "trips.csv",
        "class,depart,desired,length,arrival,cost,unfinished",
        &rows,
        &mut manifest,
    )?;

    let rows: Vec<String> = (0..trajectory.t.len())
        .map(|n| {
            format!(
                "{},{},{}",
                fmt12(trajectory.t[n]),
                fmt12(trajectory.accumulation[n]),
                fmt12(trajectory.speed[n])
            )
        })
        .collect();
    write_csv(dir, "trajectory.csv", "t,H,v", &rows, &mut manifest)?;

    let mut rows = Vec::new();
    let mut group = |name: String, g: &crate::particles::GroupStats| {
        rows.push(format!(
            "{name},{},{},{},{},{}",
            g.count,
            g.unfinished,
            fmt12(g.mean_cost),
            fmt12(g.cost_std),
            fmt12(g.mean_abs_delay_min)
        ));
    };
    for (k, g) in report.classes.iter().enumerate() {
        group(k.to_string(), g);
    }
    group("all".into(), &report.overall);
    group("unfinished".into(), &report.unfinished);
    write_csv(
        dir,
        "report.csv",
        "class,count,unfinished,mean_cost,cost_std,mean_abs_delay_min",
        &rows,
        &mut manifest,
    )?;

    manifest.add("manifest.txt", manifest.entries.len() + 1);
    write_file(&dir.join("manifest.txt"), &manifest.render())?;
    Ok(manifest)
}

/// Write a tensor as `k,l,n,<value_name>` rows.
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor3, value_name: &str) -> Result<()> {
    let mut text = format!("k,l,n,{value_name}\n");
    for r in pattern_rows(t) {
        text.push_str(&r);
        text.push('\n');
    }
    write_file(path.as_ref(), &text)
}

/// Read a `k,l,n,<value>` CSV into a tensor of the given shape. Cells not
/// listed are zero.
pub fn read_tensor(path: impl AsRef<Path>, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 4 || &headers[0] != "k" || &headers[1] != "l" || &headers[2] != "n" {
        return Err(Error::Config {
            message: format!("{}: expected header k,l,n,<value>", path.display()),
            line: Some(1),
        });
    }
    let name = headers[3].to_string();
    let cols = ["k", "l", "n", name.as_str()];
    drop(rdr);
    let mut t = Tensor3::zeros(dims);
    for (line, row) in read_numeric(path, &cols)? {
        let k = index_field(path, line, row[0], dims.0, "k")?;
        let l = index_field(path, line, row[1], dims.1, "l")?;
        let n = index_field(path, line, row[2], dims.2, "n")?;
        t.set(k, l, n, row[3]);
    }
    Ok(t)
}
