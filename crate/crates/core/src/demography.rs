//! Coefficient functions of the population model: the age-time domain,
//! mortality, policy-dependent fertility, the initial age profile and the
//! trapezoid quadrature for the birth integral.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

/// Age-time rectangle `[0, a0] × [t_min, t_max]` and the aging speed `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub a0: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub alpha: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self::new(100.0, 2024.0, 2054.0).expect("default domain is valid")
    }
}

impl Domain {
    /// Builds a domain with `alpha = (t_max - t_min) / a0`.
    pub fn new(a0: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(a0 > 0.0) || !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "domain needs a0 > 0 and t_max > t_min (got a0={a0}, t=[{t_min}, {t_max}])"
            )));
        }
        Ok(Self {
            a0,
            t_min,
            t_max,
            alpha: (t_max - t_min) / a0,
        })
    }

    /// Ages advance one year per year (`alpha = 1`).
    pub fn with_physical_aging(mut self) -> Self {
        self.alpha = 1.0;
        self
    }

    pub fn span(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn age(&self, a_norm: f64) -> f64 {
        a_norm * self.a0
    }

    pub fn year(&self, t_norm: f64) -> f64 {
        self.t_min + t_norm * self.span()
    }

    pub fn a_norm(&self, age: f64) -> f64 {
        age / self.a0
    }

    pub fn t_norm(&self, year: f64) -> f64 {
        (year - self.t_min) / self.span()
    }

    pub(crate) fn check_age(&self, a: f64) -> Result<()> {
        if (0.0..=self.a0).contains(&a) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                what: "age",
                value: a,
                lo: 0.0,
                hi: self.a0,
            })
        }
    }
}

/// Gompertz-style mortality: linear below the breakpoint, exponential above.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MortalityModel {
    pub mu0: f64,
    pub slope: f64,
    pub breakpoint: f64,
    pub exp_rate: f64,
}

impl Default for MortalityModel {
    fn default() -> Self {
        Self {
            mu0: 0.006805083,
            slope: 0.0003,
            breakpoint: 60.0,
            exp_rate: 0.06,
        }
    }
}

impl MortalityModel {
    /// Rate at the breakpoint; the exponential branch starts from here.
    pub fn breakpoint_rate(&self) -> f64 {
        self.mu0 + self.slope * self.breakpoint
    }

    /// `μ(a)`, without a domain check.
    pub fn rate(&self, a: f64) -> f64 {
        if a < self.breakpoint {
            self.mu0 + self.slope * a
        } else {
            self.breakpoint_rate() * (self.exp_rate * (a - self.breakpoint)).exp()
        }
    }

    /// Closed-form antiderivative `∫₀ᵃ μ(s) ds`.
    pub fn cumulative(&self, a: f64) -> f64 {
        let linear = |s: f64| self.mu0 * s + 0.5 * self.slope * s * s;
        if a < self.breakpoint {
            linear(a)
        } else {
            let c = self.breakpoint_rate();
            linear(self.breakpoint)
                + c / self.exp_rate * ((self.exp_rate * (a - self.breakpoint)).exp() - 1.0)
        }
    }

    /// Multiplies every rate by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            mu0: self.mu0 * k,
            slope: self.slope * k,
            ..*self
        }
    }
}

/// `μ(a)` on the domain.
pub fn mortality(domain: &Domain, model: &MortalityModel, a: f64) -> Result<f64> {
    domain.check_age(a)?;
    Ok(model.rate(a))
}

/// Quadratic base age-specific fertility, supported on `[20, 35]`.
pub fn base_asfr(a: f64) -> f64 {
    if (20.0..=35.0).contains(&a) {
        0.0022 * (a - 20.0) * (35.0 - a)
    } else {
        0.0
    }
}

/// Lower and upper ages of the base fertility support.
pub const FERTILE_AGES: (f64, f64) = (20.0, 35.0);

/// The three fertility policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyScenario {
    ThreeChild,
    SeparateTwoChild,
    UniversalTwoChild,
}

impl PolicyScenario {
    pub const ALL: [PolicyScenario; 3] = [
        PolicyScenario::ThreeChild,
        PolicyScenario::SeparateTwoChild,
        PolicyScenario::UniversalTwoChild,
    ];

    /// `(year, increment)` steps of the multiplier.
    pub fn steps(self) -> &'static [(f64, f64)] {
        match self {
            PolicyScenario::ThreeChild => &[(2014.0, 0.2), (2016.0, 0.2), (2021.0, 0.2)],
            PolicyScenario::SeparateTwoChild | PolicyScenario::UniversalTwoChild => {
                &[(2024.0, 0.2)]
            }
        }
    }

    pub fn cap(self) -> f64 {
        match self {
            PolicyScenario::SeparateTwoChild => 0.20,
            PolicyScenario::ThreeChild | PolicyScenario::UniversalTwoChild => 0.25,
        }
    }

    /// `1 + Σ increment·1[t ≥ year]`.
    pub fn multiplier(self, t: f64) -> f64 {
        1.0 + self
            .steps()
            .iter()
            .filter(|(year, _)| t >= *year)
            .map(|(_, inc)| inc)
            .sum::<f64>()
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyScenario::ThreeChild => "three-child",
            PolicyScenario::SeparateTwoChild => "separate-two-child",
            PolicyScenario::UniversalTwoChild => "universal-two-child",
        }
    }
}

impl fmt::Display for PolicyScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three-child" => Ok(PolicyScenario::ThreeChild),
            "separate-two-child" | "two-child" => Ok(PolicyScenario::SeparateTwoChild),
            "universal-two-child" => Ok(PolicyScenario::UniversalTwoChild),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected three-child, separate-two-child, universal-two-child)"
            ))),
        }
    }
}

/// `b(a, t) = min(base_asfr(a)·multiplier(t), cap)`.
pub fn fertility(a: f64, t: f64, scenario: PolicyScenario) -> f64 {
    (base_asfr(a) * scenario.multiplier(t)).min(scenario.cap())
}

/// Source of births on the boundary `a = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Births {
    /// `b ≡ 0`: the pure transport-decay problem.
    None,
    Policy(PolicyScenario),
}

impl Births {
    pub fn rate(self, a: f64, t: f64) -> f64 {
        match self {
            Births::None => 0.0,
            Births::Policy(s) => fertility(a, t, s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Births::None => "none",
            Births::Policy(s) => s.name(),
        }
    }
}

impl FromStr for Births {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            Ok(Births::None)
        } else {
            s.parse().map(Births::Policy)
        }
    }
}

/// Piecewise-linear initial density `P(a, t_min)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialProfile {
    knots: Vec<(f64, f64)>,
}

impl Default for InitialProfile {
    fn default() -> Self {
        Self {
            knots: vec![
                (0.0, 0.85),
                (20.0, 0.95),
                (35.0, 1.00),
                (60.0, 0.80),
                (80.0, 0.45),
                (100.0, 0.05),
            ],
        }
    }
}

impl InitialProfile {
    /// Validates knots: at least two, ages strictly increasing, densities positive.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument("profile needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument(format!(
                    "profile ages must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(a, d)) = knots.iter().find(|(a, d)| !(*d > 0.0) || !a.is_finite() || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "profile density must be positive and finite (age {a}: {d})"
            )));
        }
        Ok(Self { knots })
    }

    /// A constant profile over `[0, a0]`.
    pub fn constant(a0: f64, density: f64) -> Result<Self> {
        Self::new(vec![(0.0, density), (a0, density)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Checks that the knots span `[0, a0]`.
    pub fn check_covers(&self, domain: &Domain) -> Result<()> {
        let first = self.knots[0].0;
        let last = self.knots[self.knots.len() - 1].0;
        if first > 0.0 || last < domain.a0 {
            return Err(Error::InvalidArgument(format!(
                "profile covers [{first}, {last}] but the domain needs [0, {}]",
                domain.a0
            )));
        }
        Ok(())
    }

    /// Linear interpolation between the bracketing knots.
    pub fn density(&self, a: f64) -> Result<f64> {
        let (lo, hi) = (self.knots[0].0, self.knots[self.knots.len() - 1].0);
        if !(lo..=hi).contains(&a) {
            return Err(Error::OutOfDomain {
                what: "age",
                value: a,
                lo,
                hi,
            });
        }
        let k = self.knots.partition_point(|(x, _)| *x <= a);
        if k == self.knots.len() {
            return Ok(self.knots[k - 1].1);
        }
        let (a1, d1) = self.knots[k - 1];
        let (a2, d2) = self.knots[k];
        Ok(d1 + (d2 - d1) * (a - a1) / (a2 - a1))
    }

    /// Reads an `age,density` CSV.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["age", "density"] {
            return Err(Error::Malformed {
                path: path.to_owned(),
                reason: format!("expected header 'age,density', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut knots = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Malformed {
                        path: path.to_owned(),
                        reason: format!("row {}: unparseable field {i}", line + 2),
                    })
            };
            knots.push((parse(0)?, parse(1)?));
        }
        Self::new(knots)
    }
}

/// `P(a, t_min)` from the profile.
pub fn initial_density(a: f64, profile: &InitialProfile) -> Result<f64> {
    profile.density(a)
}

/// Composite trapezoid rule on an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    lo: f64,
    hi: f64,
    nodes: Vec<(f64, f64)>,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::fertile(61).expect("61 nodes is valid")
    }
}

impl Quadrature {
    pub fn trapezoid(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "trapezoid rule needs n >= 2 and hi > lo (n={n}, [{lo}, {hi}])"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|j| {
                let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
                let a = if j == n - 1 { hi } else { lo + j as f64 * h };
                (a, w)
            })
            .collect();
        Ok(Self { lo, hi, nodes })
    }

    /// Trapezoid rule over the fertile ages.
    pub fn fertile(n: usize) -> Result<Self> {
        Self::trapezoid(FERTILE_AGES.0, FERTILE_AGES.1, n)
    }

    /// `(age, weight)` pairs.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// `Σ wⱼ·b(aⱼ, t)·eval(aⱼ)` over the quadrature nodes.
pub fn birth_integral(
    mut eval: impl FnMut(f64) -> f64,
    t: f64,
    births: Births,
    quad: &Quadrature,
) -> Result<f64> {
    let mut total = 0.0;
    for &(a, w) in quad.nodes() {
        let b = births.rate(a, t);
        if b == 0.0 {
            continue;
        }
        let p = eval(a);
        if !p.is_finite() {
            return Err(Error::non_finite(format!("birth integrand at age {a}, year {t}")));
        }
        total += w * b * p;
    }
    Ok(total)
}

/// Everything that defines one instance of the population problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub domain: Domain,
    pub mortality: MortalityModel,
    pub births: Births,
    pub profile: InitialProfile,
    pub quadrature: Quadrature,
}

impl Problem {
    /// Default coefficients for a policy scenario.
    pub fn new(scenario: PolicyScenario) -> Self {
        Self {
            domain: Domain::default(),
            mortality: MortalityModel::default(),
            births: Births::Policy(scenario),
            profile: InitialProfile::default(),
            quadrature: Quadrature::default(),
        }
    }

    /// The `b ≡ 0` problem with default coefficients.
    pub fn without_births() -> Self {
        Self {
            births: Births::None,
            ..Self::new(PolicyScenario::ThreeChild)
        }
    }

    pub fn mu(&self, a: f64) -> f64 {
        self.mortality.rate(a)
    }

    pub fn fertility(&self, a: f64, t: f64) -> f64 {
        self.births.rate(a, t)
    }

    pub fn initial(&self, a: f64) -> Result<f64> {
        self.profile.density(a)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.check_covers(&self.domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_domain() {
        let d = Domain::default();
        assert_eq!((d.a0, d.t_min, d.t_max), (100.0, 2024.0, 2054.0));
        assert!((d.alpha - 0.3).abs() < 1e-15);
        assert!(Domain::new(0.0, 2024.0, 2054.0).is_err());
        assert!(Domain::new(100.0, 2054.0, 2024.0).is_err());
        assert_eq!(d.with_physical_aging().alpha, 1.0);
    }

    #[test]
    fn mortality_examples() {
        let (d, m) = (Domain::default(), MortalityModel::default());
        assert_eq!(mortality(&d, &m, 0.0).unwrap(), 0.006805083);
        let below = m.mu0 + m.slope * 60.0;
        assert!((below - 0.024805083).abs() < 1e-15);
        assert!((mortality(&d, &m, 60.0).unwrap() - below).abs() < 1e-12);
        let at70 = mortality(&d, &m, 70.0).unwrap();
        assert!((at70 - 0.024805083 * 0.6f64.exp()).abs() < 1e-12);
        assert!((at70 - 0.045198).abs() < 1e-6);
        assert!(mortality(&d, &m, -1.0).is_err());
        assert!(mortality(&d, &m, 100.5).is_err());
    }

    #[test]
    fn mortality_continuous_and_monotone() {
        let m = MortalityModel::default();
        let left = m.mu0 + m.slope * 60.0;
        assert!((m.rate(60.0) - left).abs() < 1e-12);
        assert!((m.rate(60.0 - 1e-12) - m.rate(60.0)).abs() < 1e-12);
        let mut prev = m.rate(0.0);
        for k in 1..=1000 {
            let r = m.rate(k as f64 * 0.1);
            assert!(r >= prev && r >= 0.0);
            prev = r;
        }
    }

    #[test]
    fn cumulative_matches_midpoint_sum() {
        let m = MortalityModel::default();
        for &(lo, hi) in &[(0.0, 37.0), (37.0, 40.0), (50.0, 75.0), (61.0, 100.0)] {
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let sum: f64 = (0..n).map(|k| m.rate(lo + (k as f64 + 0.5) * h) * h).sum();
            let exact = m.cumulative(hi) - m.cumulative(lo);
            assert!((sum - exact).abs() < 1e-9 * exact.max(1.0), "[{lo}, {hi}]");
        }
    }

    #[test]
    fn base_asfr_examples() {
        assert_eq!(base_asfr(20.0), 0.0);
        assert_eq!(base_asfr(27.5), 0.0022 * 7.5 * 7.5);
        assert!((base_asfr(27.5) - 0.12375).abs() < 1e-15);
        assert_eq!(base_asfr(40.0), 0.0);
        assert_eq!(base_asfr(35.0), 0.0);
    }

    #[test]
    fn fertility_examples() {
        assert!((fertility(27.5, 2030.0, PolicyScenario::ThreeChild) - 0.198).abs() < 1e-15);
        assert!((fertility(27.5, 2030.0, PolicyScenario::SeparateTwoChild) - 0.1485).abs() < 1e-15);
        for s in PolicyScenario::ALL {
            assert_eq!(fertility(50.0, 2040.0, s), 0.0);
        }
        assert_eq!(PolicyScenario::ThreeChild.multiplier(2024.0), 1.6 + 0.0 * 1.0);
        assert_eq!(PolicyScenario::SeparateTwoChild.multiplier(2023.9), 1.0);
    }

    #[test]
    fn multiplier_nondecreasing() {
        for s in PolicyScenario::ALL {
            let mut prev = s.multiplier(2000.0);
            for k in 0..=700 {
                let m = s.multiplier(2000.0 + k as f64 * 0.1);
                assert!(m >= prev);
                prev = m;
            }
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in PolicyScenario::ALL {
            assert_eq!(s.name().parse::<PolicyScenario>().unwrap(), s);
        }
        assert_eq!("two-child".parse::<PolicyScenario>().unwrap(), PolicyScenario::SeparateTwoChild);
        assert!("one-child".parse::<PolicyScenario>().is_err());
        assert_eq!("none".parse::<Births>().unwrap(), Births::None);
    }

    #[test]
    fn initial_profile_examples() {
        let p = InitialProfile::default();
        assert_eq!(initial_density(35.0, &p).unwrap(), 1.00);
        assert!((initial_density(10.0, &p).unwrap() - 0.90).abs() < 1e-15);
        assert_eq!(initial_density(100.0, &p).unwrap(), 0.05);
        assert!(initial_density(101.0, &p).is_err());
        p.check_covers(&Domain::default()).unwrap();
    }

    #[test]
    fn profile_validation() {
        assert!(InitialProfile::new(vec![(0.0, 1.0)]).is_err());
        assert!(InitialProfile::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(InitialProfile::new(vec![(0.0, 1.0), (100.0, 0.0)]).is_err());
        let short = InitialProfile::new(vec![(0.0, 1.0), (50.0, 1.0)]).unwrap();
        assert!(short.check_covers(&Domain::default()).is_err());
    }

    #[test]
    fn profile_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "age,density\n0,1\n50,0.5\n100,0.25\n").unwrap();
        let p = InitialProfile::from_csv(&path).unwrap();
        assert_eq!(p.density(75.0).unwrap(), 0.375);
        std::fs::write(&path, "a,d\n0,1\n100,1\n").unwrap();
        assert!(InitialProfile::from_csv(&path).is_err());
        std::fs::write(&path, "age,density\n0,x\n100,1\n").unwrap();
        assert!(InitialProfile::from_csv(&path).is_err());
    }

    #[test]
    fn quadrature_weights_sum_to_length() {
        for n in [2, 3, 31, 61, 1000] {
            let q = Quadrature::fertile(n).unwrap();
            let s: f64 = q.nodes().iter().map(|(_, w)| w).sum();
            assert!((s - 15.0).abs() < 1e-12);
            assert_eq!(q.nodes()[n - 1].0, 35.0);
        }
        assert!(Quadrature::fertile(1).is_err());
        assert!(Quadrature::trapezoid(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn birth_integral_examples() {
        let q = Quadrature::default();
        let three = Births::Policy(PolicyScenario::ThreeChild);
        let sep = Births::Policy(PolicyScenario::SeparateTwoChild);
        assert_eq!(birth_integral(|_| 0.0, 2030.0, three, &q).unwrap(), 0.0);
        let exact: f64 = 1.6 * 0.0022 * 562.5;
        assert!((exact - 1.98).abs() < 1e-12);
        assert!((birth_integral(|_| 1.0, 2030.0, three, &q).unwrap() - 1.98).abs() < 1e-3);
        assert!((birth_integral(|_| 1.0, 2054.0, sep, &q).unwrap() - 1.485).abs() < 1e-3);
        assert_eq!(birth_integral(|_| 1.0, 2030.0, Births::None, &q).unwrap(), 0.0);
        assert!(birth_integral(|_| f64::NAN, 2030.0, three, &q).is_err());
    }

    /// Exact ∫₂₀³⁵ (a−20)(35−a)·(c0 + c1·a + c2·a²) da via 5-point Gauss–Legendre,
    /// which is exact for quartics.
    fn gauss_oracle(c: [f64; 3]) -> f64 {
        let nodes = [
            (0.0, 128.0 / 225.0),
            (0.538_469_310_105_683_1, (322.0 + 13.0 * 70f64.sqrt()) / 900.0),
            (-0.538_469_310_105_683_1, (322.0 + 13.0 * 70f64.sqrt()) / 900.0),
            (0.906_179_845_938_664, (322.0 - 13.0 * 70f64.sqrt()) / 900.0),
            (-0.906_179_845_938_664, (322.0 - 13.0 * 70f64.sqrt()) / 900.0),
        ];
        nodes
            .iter()
            .map(|&(x, w)| {
                let a = 27.5 + 7.5 * x;
                w * 7.5 * (a - 20.0) * (35.0 - a) * (c[0] + c[1] * a + c[2] * a * a)
            })
            .sum()
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        let s = Births::Policy(PolicyScenario::SeparateTwoChild);
        for c in [[1.0, 0.0, 0.0], [0.3, -0.02, 0.001], [2.0, 0.1, -0.003]] {
            let exact = 1.2 * 0.0022 * gauss_oracle(c);
            let err = |n| {
                let q = Quadrature::fertile(n).unwrap();
                let v = birth_integral(|a| c[0] + c[1] * a + c[2] * a * a, 2030.0, s, &q).unwrap();
                (v - exact).abs()
            };
            let mut prev = err(16);
            for n in [31, 61, 121] {
                let e = err(n);
                let ratio = prev / e;
                assert!((3.6..=4.4).contains(&ratio), "c={c:?} n={n} ratio={ratio}");
                prev = e;
            }
        }
    }
}
