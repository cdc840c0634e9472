#![allow(dead_code)]

use shiftcvm::{InitRule, InvariantLaw, Noise, Path, ShiftDriftModel, TimeGrid};

pub fn ou() -> ShiftDriftModel {
    ShiftDriftModel::ou(1.0).unwrap()
}

pub fn ou_law() -> InvariantLaw {
    InvariantLaw::build_default(&ou()).unwrap()
}

pub fn ou_path(law: &InvariantLaw, theta0: f64, horizon: f64, seed: u64) -> Path {
    shiftcvm::simulate_path(
        law.model(),
        theta0,
        TimeGrid::new(horizon, 0.01).unwrap(),
        Noise::Seeded(seed),
        InitRule::Stationary(law),
    )
    .unwrap()
}

/// Trapezoid on `[a, b]` with about `n` cells.
pub fn integrate(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let v: Vec<f64> = (0..=n).map(|i| f(a + i as f64 * h)).collect();
    shiftcvm::grid::trapezoid(h, &v)
}

/// Integral over the law's effective support, split at the given points so
/// jumps of the integrand fall on cell boundaries.
pub fn integrate_split(law: &InvariantLaw, breaks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let (a, b) = law.effective_support();
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.windows(2)
        .map(|w| {
            let n = ((w[1] - w[0]) / 1e-3).ceil() as usize;
            // Nudge the ends inward so one-sided limits are used.
            let e = 1e-12;
            integrate(w[0] + e, w[1] - e, n.max(2), &f)
        })
        .sum()
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_var(a);
    let (mb, _) = mean_var(b);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0)
}
