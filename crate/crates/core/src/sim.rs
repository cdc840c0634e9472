//! Euler–Maruyama simulation of `dX = S(X) dt + dW`.

use std::fmt::Write as _;
use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::law::InvariantLaw;
use crate::model::ShiftDriftModel;
use crate::rng::CounterRng;

/// States beyond this magnitude abort the simulation.
pub const DIVERGENCE_BOUND: f64 = 1e6;

const NOISE_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;

/// A discretely sampled trajectory `X_0, X_dt, …, X_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    values: Vec<f64>,
    theta_true: Option<f64>,
    seed: u64,
}

impl Path {
    pub fn new(dt: f64, values: Vec<f64>, theta_true: Option<f64>, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if values.len() < 2 {
            return Err(Error::Domain("a path needs at least two samples".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("path value at index {i}")));
        }
        Ok(Self {
            dt,
            values,
            theta_true,
            seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of increments.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    /// Observation horizon `T = dt · steps`.
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn theta_true(&self) -> Option<f64> {
        self.theta_true
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Left endpoints `X_0 … X_{N−1}`.
    pub fn left_points(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// The same path translated by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            theta_true: self.theta_true.map(|t| t + c),
            ..self.clone()
        }
    }

    /// Header `# dt=… theta0=…|NA seed=…`, then one value per line with
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(26 * self.values.len() + 64);
        let theta = self
            .theta_true
            .map_or_else(|| "NA".to_string(), |t| format!("{t}"));
        let _ = writeln!(s, "# dt={} theta0={} seed={}", self.dt, theta, self.seed);
        for v in &self.values {
            let _ = writeln!(s, "{v:.16e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty path file".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("path file must start with a '#' header".into()))?;
        let (mut dt, mut theta, mut seed) = (None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header field {field:?}")))?;
            let bad = || Error::Format(format!("bad value for {k}: {v:?}"));
            match k {
                "dt" => dt = Some(v.parse::<f64>().map_err(|_| bad())?),
                "theta0" => {
                    theta = Some(if v == "NA" {
                        None
                    } else {
                        Some(v.parse::<f64>().map_err(|_| bad())?)
                    })
                }
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(Error::Format(format!("unknown header field {k:?}"))),
            }
        }
        let dt = dt.ok_or_else(|| Error::Format("missing dt".into()))?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad value on data line {}: {l:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Path::new(dt, values, theta.flatten(), seed.unwrap_or(0))
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// How `X_0` is chosen.
#[derive(Debug, Clone, Copy)]
pub enum InitRule<'a> {
    Fixed(f64),
    /// Inverse-CDF draw from the invariant law (shifted by θ0).
    Stationary(&'a InvariantLaw),
}

/// Source of the Gaussian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// `Z_k` keyed by `(seed, k)`.
    Seeded(u64),
    /// All `Z_k = 0`; the stationary draw uses the median. For tests.
    Zero,
}

impl Noise {
    fn seed(&self) -> u64 {
        match self {
            Noise::Seeded(s) => *s,
            Noise::Zero => 0,
        }
    }
}

/// Horizon and step of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !(horizon >= 10.0 * dt) {
            return Err(Error::Domain(format!(
                "horizon {horizon} must be at least 10 time steps of {dt}"
            )));
        }
        Ok(Self { horizon, dt })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

fn initial_state(init: InitRule<'_>, shift: f64, noise: Noise) -> Result<f64> {
    match init {
        InitRule::Fixed(x0) => Ok(x0),
        InitRule::Stationary(law) => {
            let p = match noise {
                Noise::Seeded(seed) => CounterRng::new(seed).substream(INIT_STREAM).uniform(0),
                Noise::Zero => 0.5,
            };
            Ok(law.inverse_cdf(p.clamp(1e-9 + 1e-15, 1.0 - 1e-9 - 1e-15))? + shift)
        }
    }
}

fn euler_maruyama(
    drift: impl Fn(f64) -> f64,
    x0: f64,
    time: TimeGrid,
    noise: Noise,
) -> Result<Vec<f64>> {
    let n = time.steps();
    let dt = time.dt;
    let sqrt_dt = dt.sqrt();
    let rng = CounterRng::new(noise.seed()).substream(NOISE_STREAM);
    let mut values = Vec::with_capacity(n + 1);
    let mut x = x0;
    values.push(x);
    for k in 0..n {
        let z = match noise {
            Noise::Seeded(_) => rng.normal(k as u64),
            Noise::Zero => 0.0,
        };
        x = x + drift(x) * dt + sqrt_dt * z;
        if !(x.abs() <= DIVERGENCE_BOUND) {
            return Err(Error::SimulationDiverged {
                step: k + 1,
                value: x,
            });
        }
        values.push(x);
    }
    Ok(values)
}

/// Path of `dX = S*(X − θ0) dt + dW`.
pub fn simulate_path(
    model: &ShiftDriftModel,
    theta0: f64,
    time: TimeGrid,
    noise: Noise,
    init: InitRule<'_>,
) -> Result<Path> {
    let (lo, hi) = model.theta_interval();
    if !(theta0 >= lo && theta0 <= hi) {
        return Err(Error::Domain(format!(
            "theta0={theta0} outside the parameter interval [{lo}, {hi}]"
        )));
    }
    let x0 = initial_state(init, theta0, noise)?;
    let values = euler_maruyama(|x| model.drift_star(x - theta0), x0, time, noise)?;
    Path::new(time.dt, values, Some(theta0), noise.seed())
}

/// Path under an arbitrary drift `S` (not necessarily of shift form).
/// A stationary start draws from the invariant law passed in, unshifted.
pub fn alternative_path(
    drift: &dyn Fn(f64) -> f64,
    time: TimeGrid,
    noise: Noise,
    init: InitRule<'_>,
) -> Result<Path> {
    let x0 = initial_state(init, 0.0, noise)?;
    let values = euler_maruyama(drift, x0, time, noise)?;
    Path::new(time.dt, values, None, noise.seed())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> ShiftDriftModel {
        ShiftDriftModel::ou(1.0).unwrap()
    }

    #[test]
    fn zero_noise_recursion() {
        let t = TimeGrid::new(1.0, 0.1).unwrap();
        let p = simulate_path(&ou(), 0.0, t, Noise::Zero, InitRule::Fixed(1.0)).unwrap();
        assert_eq!(p.values()[1], 0.9);
        for (k, v) in p.values().iter().enumerate() {
            assert!((v - 0.9f64.powi(k as i32)).abs() < 1e-15);
        }
        let q = alternative_path(&|x| -2.0 * x, t, Noise::Zero, InitRule::Fixed(1.0)).unwrap();
        assert_eq!(q.values()[1], 0.8);
    }

    #[test]
    fn deterministic_given_seed() {
        let law = InvariantLaw::build_default(&ou()).unwrap();
        let t = TimeGrid::new(20.0, 0.01).unwrap();
        let a = simulate_path(&ou(), 1.0, t, Noise::Seeded(9), InitRule::Stationary(&law)).unwrap();
        let b = simulate_path(&ou(), 1.0, t, Noise::Seeded(9), InitRule::Stationary(&law)).unwrap();
        assert_eq!(a, b);
        let c =
            simulate_path(&ou(), 1.0, t, Noise::Seeded(10), InitRule::Stationary(&law)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.steps(), 2000);
        assert!((a.horizon() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn alternative_with_null_drift_matches_bitwise() {
        let t = TimeGrid::new(10.0, 0.01).unwrap();
        let a = simulate_path(&ou(), 0.0, t, Noise::Seeded(3), InitRule::Fixed(0.4)).unwrap();
        let b = alternative_path(&|x| -x, t, Noise::Seeded(3), InitRule::Fixed(0.4)).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = TimeGrid::new(1.0, 0.1).unwrap();
        assert!(simulate_path(&ou(), 11.0, t, Noise::Zero, InitRule::Fixed(0.0)).is_err());
        assert!(TimeGrid::new(0.5, 0.1).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let t = TimeGrid::new(100.0, 0.1).unwrap();
        let err = alternative_path(&|x| x * x, t, Noise::Zero, InitRule::Fixed(10.0)).unwrap_err();
        match err {
            Error::SimulationDiverged { step, .. } => assert!(step > 0 && step < 100),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = TimeGrid::new(1.0, 0.1).unwrap();
        let p = simulate_path(&ou(), 0.5, t, Noise::Seeded(77), InitRule::Fixed(0.1)).unwrap();
        let text = p.to_csv();
        assert!(text.starts_with("# dt=0.1 theta0=0.5 seed=77\n"));
        assert_eq!(Path::from_csv(&text).unwrap(), p);
        let q = alternative_path(&|x| -x, t, Noise::Zero, InitRule::Fixed(0.0)).unwrap();
        assert!(q.to_csv().contains("theta0=NA"));
        assert_eq!(Path::from_csv(&q.to_csv()).unwrap(), q);
        assert!(Path::from_csv("1.0\n2.0\n").is_err());
        assert!(Path::from_csv("# dt=0.1 bogus=1\n1\n2\n").is_err());
    }
}
