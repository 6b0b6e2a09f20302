//! Finite-difference and characteristic solutions of
//! `∂P/∂t + α·∂P/∂a = −μ(a)·P` with the birth-integral boundary at `a = 0`.

use std::io::Write;
use std::path::Path;

use crate::autodiff::Dual2;
use crate::demography::{birth_integral, Domain, MortalityModel, InitialProfile, Problem};
use crate::networks::Surrogate;
use crate::{Error, Result};

/// Node counts of the age-time lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub na: usize,
    pub nt: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { na: 201, nt: 601 }
    }
}

impl GridSpec {
    pub fn new(na: usize, nt: usize) -> Result<Self> {
        if na < 2 || nt < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 nodes per axis (got {na}×{nt})"
            )));
        }
        Ok(Self { na, nt })
    }

    pub fn da(&self, domain: &Domain) -> f64 {
        domain.a0 / (self.na - 1) as f64
    }

    pub fn dt(&self, domain: &Domain) -> f64 {
        domain.span() / (self.nt - 1) as f64
    }

    pub fn age(&self, domain: &Domain, i: usize) -> f64 {
        if i + 1 == self.na {
            domain.a0
        } else {
            i as f64 * self.da(domain)
        }
    }

    pub fn year(&self, domain: &Domain, n: usize) -> f64 {
        if n + 1 == self.nt {
            domain.t_max
        } else {
            domain.t_min + n as f64 * self.dt(domain)
        }
    }

    /// Rejects grids with `α·Δt > Δa`.
    pub fn check_cfl(&self, domain: &Domain) -> Result<()> {
        let (da, dt) = (self.da(domain), self.dt(domain));
        let alpha_dt = domain.alpha * dt;
        if alpha_dt > da {
            return Err(Error::Cfl { alpha_dt, dt, da });
        }
        Ok(())
    }
}

/// Density on an age-time lattice. Stored time-major: column `n` (all ages
/// at year `n`) is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: GridSpec,
    domain: Domain,
    values: Vec<f64>,
    clamp_events: usize,
}

impl Field {
    pub fn zeros(domain: Domain, grid: GridSpec) -> Self {
        Self {
            grid,
            domain,
            values: vec![0.0; grid.na * grid.nt],
            clamp_events: 0,
        }
    }

    /// Samples `f(age, year)` on the lattice.
    pub fn from_fn(domain: Domain, grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(domain, grid);
        for n in 0..grid.nt {
            let year = grid.year(&domain, n);
            for i in 0..grid.na {
                field.values[n * grid.na + i] = f(grid.age(&domain, i), year);
            }
        }
        field
    }

    /// Evaluates a surrogate on the lattice through normalized coordinates.
    pub fn from_surrogate(domain: Domain, grid: GridSpec, model: &impl Surrogate) -> Self {
        Self::from_fn(domain, grid, |a, t| model.eval(domain.a_norm(a), domain.t_norm(t)))
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of negative updates clamped to zero while solving.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.values[n * self.grid.na + i]
    }

    pub fn column(&self, n: usize) -> &[f64] {
        &self.values[n * self.grid.na..(n + 1) * self.grid.na]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Linear interpolation of column `n` at `age`.
    pub fn interpolate_column(&self, n: usize, age: f64) -> f64 {
        interp_uniform(self.column(n), self.grid.da(&self.domain), age)
    }

    /// `∫ P(a, t_n) da` by the trapezoid rule on the lattice.
    pub fn total_population(&self, n: usize) -> f64 {
        let col = self.column(n);
        let da = self.grid.da(&self.domain);
        da * (col.iter().sum::<f64>() - 0.5 * (col[0] + col[col.len() - 1]))
    }

    /// Writes `age,year,density` rows, age outer and year inner.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "age,year,density")?;
        for i in 0..self.grid.na {
            let age = self.grid.age(&self.domain, i);
            for n in 0..self.grid.nt {
                writeln!(w, "{},{},{}", age, self.grid.year(&self.domain, n), self.get(i, n))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Field::write_csv`]. The lattice must be
    /// uniform in both axes and start at age zero; aging speed is taken from
    /// `alpha` since the file does not record it.
    pub fn read_csv(path: &Path, alpha: f64) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = csv::Reader::from_path(path)?;
        if reader.headers()?.iter().collect::<Vec<_>>() != ["age", "year", "density"] {
            return Err(malformed("expected header 'age,year,density'".into()));
        }
        let mut rows = Vec::new();
        for (k, row) in reader.records().enumerate() {
            let row = row?;
            let parsed: Option<Vec<f64>> = row.iter().map(|s| s.trim().parse().ok()).collect();
            match parsed {
                Some(v) if v.len() == 3 => rows.push((v[0], v[1], v[2])),
                _ => return Err(malformed(format!("row {}: expected three numbers", k + 2))),
            }
        }
        if rows.is_empty() {
            return Err(malformed("no data rows".into()));
        }
        let nt = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if rows.len() % nt != 0 {
            return Err(malformed("rows do not form a lattice".into()));
        }
        let na = rows.len() / nt;
        let grid = GridSpec::new(na, nt).map_err(|e| malformed(e.to_string()))?;
        let (a0, t_min, t_max) = (rows[rows.len() - 1].0, rows[0].1, rows[nt - 1].1);
        if rows[0].0 != 0.0 {
            return Err(malformed("ages must start at zero".into()));
        }
        let mut domain = Domain::new(a0, t_min, t_max).map_err(|e| malformed(e.to_string()))?;
        domain.alpha = alpha;
        let mut field = Self::zeros(domain, grid);
        let tol = 1e-9;
        for i in 0..na {
            for n in 0..nt {
                let (age, year, density) = rows[i * nt + n];
                let (ea, ey) = (grid.age(&domain, i), grid.year(&domain, n));
                if (age - ea).abs() > tol * a0.max(1.0) || (year - ey).abs() > tol * t_max.abs().max(1.0) {
                    return Err(malformed(format!(
                        "row {}: ({age}, {year}) is off the uniform lattice",
                        i * nt + n + 2
                    )));
                }
                field.values[n * na + i] = density;
            }
        }
        Ok(field)
    }
}

/// Bilinear interpolation of a field in normalized coordinates. Tangents
/// are the slopes of the bilinear patch containing the point.
impl Surrogate for Field {
    fn eval_dual(&self, a: Dual2, t: Dual2) -> Dual2 {
        let (na, nt) = (self.grid.na, self.grid.nt);
        let x = (a.value * (na - 1) as f64).clamp(0.0, (na - 1) as f64);
        let y = (t.value * (nt - 1) as f64).clamp(0.0, (nt - 1) as f64);
        let i = (x.floor() as usize).min(na - 2);
        let n = (y.floor() as usize).min(nt - 2);
        let (fx, fy) = (x - i as f64, y - n as f64);
        let (p00, p10) = (self.get(i, n), self.get(i + 1, n));
        let (p01, p11) = (self.get(i, n + 1), self.get(i + 1, n + 1));
        let value = p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy;
        let d_x = ((p10 - p00) * (1.0 - fy) + (p11 - p01) * fy) * (na - 1) as f64;
        let d_y = ((p01 - p00) * (1.0 - fx) + (p11 - p10) * fx) * (nt - 1) as f64;
        Dual2::new(value, d_x * a.da + d_y * t.da, d_x * a.dt + d_y * t.dt)
    }
}

fn interp_uniform(col: &[f64], h: f64, x: f64) -> f64 {
    let s = (x / h).clamp(0.0, (col.len() - 1) as f64);
    let i = (s.floor() as usize).min(col.len() - 2);
    let f = s - i as f64;
    col[i] * (1.0 - f) + col[i + 1] * f
}

/// Explicit first-order upwind in age, forward Euler in time. The boundary
/// node of each new column is the birth integral over that column's
/// freshly updated interior.
pub fn solve_upwind(problem: &Problem, grid: GridSpec) -> Result<Field> {
    problem.validate()?;
    let domain = problem.domain;
    grid.check_cfl(&domain)?;
    let (na, nt) = (grid.na, grid.nt);
    let (da, dt) = (grid.da(&domain), grid.dt(&domain));
    let courant = domain.alpha * dt / da;
    let decay: Vec<f64> = (0..na).map(|i| dt * problem.mu(grid.age(&domain, i))).collect();

    let mut field = Field::zeros(domain, grid);
    for i in 0..na {
        field.values[i] = problem.initial(grid.age(&domain, i))?;
    }
    for n in 0..nt - 1 {
        let (done, rest) = field.values.split_at_mut((n + 1) * na);
        let prev = &done[n * na..];
        let next = &mut rest[..na];
        for i in 1..na {
            let mut v = prev[i] - courant * (prev[i] - prev[i - 1]) - decay[i] * prev[i];
            if !v.is_finite() {
                return Err(Error::non_finite(format!("upwind update at age node {i}, step {}", n + 1)));
            }
            if v < 0.0 {
                v = 0.0;
                field.clamp_events += 1;
            }
            next[i] = v;
        }
        let year = grid.year(&domain, n + 1);
        next[0] = birth_integral(|a| interp_uniform(next, da, a), year, problem.births, &problem.quadrature)?;
    }
    Ok(field)
}

/// Exact solution of the `b ≡ 0` problem along characteristics:
/// `P = P₀(a − αΔ)·exp(−(1/α)∫_{a−αΔ}^{a} μ(s) ds)`, `Δ = t − t_min`.
pub fn characteristic_solution(
    a: f64,
    t: f64,
    domain: &Domain,
    mortality: &MortalityModel,
    profile: &InitialProfile,
) -> Result<f64> {
    domain.check_age(a)?;
    if !(domain.t_min..=domain.t_max).contains(&t) {
        return Err(Error::OutOfDomain {
            what: "year",
            value: t,
            lo: domain.t_min,
            hi: domain.t_max,
        });
    }
    let origin = a - domain.alpha * (t - domain.t_min);
    if origin < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "({a}, {t}) traces back to the birth boundary; no closed form without births"
        )));
    }
    let exposure = mortality.cumulative(a) - mortality.cumulative(origin);
    Ok(profile.density(origin)? * (-exposure / domain.alpha).exp())
}

/// `‖A − B‖₂ / ‖B‖₂` with `B` the reference.
pub fn relative_l2(field: &Field, reference: &Field) -> Result<f64> {
    relative_l2_values(field.values(), reference.values(), field.grid() == reference.grid())
}

/// Largest pointwise `|A − B|` on a shared lattice.
pub fn max_abs_difference(a: &Field, b: &Field) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::InvalidArgument("fields live on different lattices".into()));
    }
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

pub(crate) fn relative_l2_values(a: &[f64], b: &[f64], same_grid: bool) -> Result<f64> {
    if !same_grid || a.len() != b.len() {
        return Err(Error::InvalidArgument("fields live on different lattices".into()));
    }
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("reference field has zero norm".into()));
    }
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::PolicyScenario;

    #[test]
    fn cfl_examples() {
        let d = Domain::default();
        GridSpec::new(101, 301).unwrap().check_cfl(&d).unwrap();
        GridSpec::default().check_cfl(&d).unwrap();
        let err = GridSpec::new(201, 5).unwrap().check_cfl(&d).unwrap_err();
        match err {
            Error::Cfl { alpha_dt, dt, da } => {
                assert!((dt - 7.5).abs() < 1e-12);
                assert!((alpha_dt - 2.25).abs() < 1e-12);
                assert!((da - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(GridSpec::new(1, 5).is_err());
    }

    #[test]
    fn constant_transport() {
        let d = Domain::default();
        let problem = Problem {
            mortality: MortalityModel::default().scaled(0.0),
            profile: InitialProfile::constant(d.a0, 0.7).unwrap(),
            ..Problem::without_births()
        };
        let grid = GridSpec::new(51, 31).unwrap();
        let f = solve_upwind(&problem, grid).unwrap();
        // node i at step n only sees the empty boundary once n > i
        for n in 0..grid.nt {
            for i in n..grid.na {
                assert!((f.get(i, n) - 0.7).abs() < 1e-12, "({i}, {n})");
            }
        }
        assert_eq!(f.get(0, 1), 0.0);
        assert_eq!(f.clamp_events(), 0);
    }

    #[test]
    fn pure_decay_population_nonincreasing() {
        let problem = Problem::without_births();
        let f = solve_upwind(&problem, GridSpec::new(101, 301).unwrap()).unwrap();
        for n in 1..301 {
            assert!(f.total_population(n) <= f.total_population(n - 1) + 1e-12);
        }
        assert_eq!(f.clamp_events(), 0);
    }

    #[test]
    fn default_configuration_never_clamps() {
        for s in PolicyScenario::ALL {
            let f = solve_upwind(&Problem::new(s), GridSpec::default()).unwrap();
            assert_eq!(f.clamp_events(), 0);
            assert!(f.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn discrete_boundary_identity() {
        let problem = Problem::new(PolicyScenario::ThreeChild);
        let grid = GridSpec::new(101, 301).unwrap();
        let f = solve_upwind(&problem, grid).unwrap();
        for n in 1..grid.nt {
            let year = grid.year(&problem.domain, n);
            let b = birth_integral(|a| f.interpolate_column(n, a), year, problem.births, &problem.quadrature).unwrap();
            assert!((f.get(0, n) - b).abs() < 1e-12);
        }
        assert!(f.get(0, 1) > 1.5);
    }

    #[test]
    fn characteristic_examples() {
        let (d, m, p) = (Domain::default(), MortalityModel::default(), InitialProfile::default());
        for a in [0.0, 12.5, 60.0, 100.0] {
            assert_eq!(characteristic_solution(a, 2024.0, &d, &m, &p).unwrap(), p.density(a).unwrap());
        }
        let v = characteristic_solution(40.0, 2034.0, &d, &m, &p).unwrap();
        let exponent = (m.mu0 * 3.0 + m.slope * (40.0f64.powi(2) - 37.0f64.powi(2)) / 2.0) / 0.3;
        let expected = p.density(37.0).unwrap() * (-exponent).exp();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.818_992_615_273).abs() < 1e-11);
        let doubled = characteristic_solution(40.0, 2034.0, &d, &m.scaled(2.0), &p).unwrap();
        let p0 = p.density(37.0).unwrap();
        assert!((doubled / p0 - (v / p0).powi(2)).abs() < 1e-14);
        assert!(characteristic_solution(5.0, 2054.0, &d, &m, &p).is_err());
    }

    /// Smooth positive profile sampled finely enough that its kinks are negligible.
    pub(crate) fn smooth_profile() -> InitialProfile {
        let knots = (0..=1000)
            .map(|k| {
                let a = k as f64 * 0.1;
                (a, 0.5 + 0.5 * (-((a - 30.0) / 30.0).powi(2)).exp())
            })
            .collect();
        InitialProfile::new(knots).unwrap()
    }

    pub(crate) fn sup_error_away_from_front(problem: &Problem, grid: GridSpec) -> f64 {
        let d = problem.domain;
        let f = solve_upwind(problem, grid).unwrap();
        let mut worst = 0.0f64;
        for n in 0..grid.nt {
            for i in 0..grid.na {
                let (a, t) = (grid.age(&d, i), grid.year(&d, n));
                if a >= 20.0 {
                    let exact = characteristic_solution(a, t, &d, &problem.mortality, &problem.profile).unwrap();
                    worst = worst.max((f.get(i, n) - exact).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn upwind_matches_characteristics_to_first_order() {
        let mut problem = Problem::without_births();
        problem.profile = smooth_profile();
        let coarse = sup_error_away_from_front(&problem, GridSpec::new(101, 301).unwrap());
        let fine = sup_error_away_from_front(&problem, GridSpec::new(201, 601).unwrap());
        let ratio = coarse / fine;
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn kinked_profile_converges_more_slowly() {
        // Numerical diffusion rounds each kink over a width ~ √Δa.
        let problem = Problem::without_births();
        let coarse = sup_error_away_from_front(&problem, GridSpec::new(101, 301).unwrap());
        let fine = sup_error_away_from_front(&problem, GridSpec::new(201, 601).unwrap());
        let ratio = coarse / fine;
        assert!(fine < coarse && (ratio - 2f64.sqrt()).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn relative_l2_examples() {
        let d = Domain::default();
        let g = GridSpec::new(5, 4).unwrap();
        let b = Field::from_fn(d, g, |a, t| 1.0 + a / 100.0 + (t - 2024.0) / 30.0);
        assert_eq!(relative_l2(&b, &b).unwrap(), 0.0);
        let scaled = b.map(|v| 1.1 * v);
        assert!((relative_l2(&scaled, &b).unwrap() - 0.1).abs() < 1e-12);
        let mut bumped = b.clone();
        bumped.values[7] += 0.25;
        let norm = b.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((relative_l2(&bumped, &b).unwrap() - 0.25 / norm).abs() < 1e-15);
        let other = Field::zeros(d, GridSpec::new(4, 5).unwrap());
        assert!(relative_l2(&other, &b).is_err());
        assert!(relative_l2(&b, &Field::zeros(d, g)).is_err());
    }

    #[test]
    fn bilinear_surrogate_reproduces_linear_fields() {
        let d = Domain::default();
        let g = GridSpec::new(11, 7).unwrap();
        let f = Field::from_fn(d, g, |a, t| 0.5 + 0.01 * a - 0.02 * (t - 2024.0));
        let (a, t) = crate::autodiff::seed_inputs(0.437, 0.61);
        let v = f.eval_dual(a, t);
        assert!((v.value - (0.5 + 0.01 * 43.7 - 0.02 * 0.61 * 30.0)).abs() < 1e-12);
        assert!((v.da - 1.0).abs() < 1e-12);
        assert!((v.dt + 0.6).abs() < 1e-12);
    }

    #[test]
    fn csv_export_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let d = Domain::default();
        let f = Field::from_fn(d, GridSpec::new(3, 2).unwrap(), |a, t| a + t);
        f.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "age,year,density");
        assert_eq!(lines[1], "0,2024,2024");
        assert_eq!(lines[2], "0,2054,2054");
        assert_eq!(lines[3], "50,2024,2074");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn csv_round_trip_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let d = Domain::default();
        let f = Field::from_fn(d, GridSpec::new(11, 7).unwrap(), |a, t| (a * 0.1).sin() + t * 1e-3);
        f.write_csv(&path).unwrap();
        let back = Field::read_csv(&path, d.alpha).unwrap();
        assert_eq!(back, f);
        assert_eq!(relative_l2(&back, &f).unwrap(), 0.0);
        let scaled = f.map(|v| 1.1 * v);
        assert!((relative_l2(&scaled, &f).unwrap() - 0.1).abs() < 1e-12);
        assert!(max_abs_difference(&scaled, &f).unwrap() > 0.0);
        let other = Field::from_fn(d, GridSpec::new(5, 7).unwrap(), |_, _| 1.0);
        assert!(max_abs_difference(&other, &f).is_err());
        assert!(relative_l2(&other, &f).is_err());
    }

    #[test]
    fn malformed_field_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        for text in [
            "",
            "age,year,density\n",
            "a,b,c\n0,2024,1\n",
            "age,year,density\n0,2024,x\n",
            "age,year,density\n0,2024,1\n0,2054,1\n50,2024,1\n",
            "age,year,density\n0,2024,1\n0,2054,1\n50,2024,1\n50,2054,1\n70,2024,1\n70,2054,1\n",
        ] {
            std::fs::write(&path, text).unwrap();
            assert!(Field::read_csv(&path, 0.3).is_err(), "{text:?}");
        }
    }
}
