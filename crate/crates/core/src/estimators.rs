//! Shift-parameter estimators (MLE, MDE) and invariant-law estimators
//! (local time, empirical distribution function, kernel) from a sampled
//! path. All stochastic integrals use left endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{neumaier_sum, trapezoid_xy, UniformGrid};
use crate::law::InvariantLaw;
use crate::model::ShiftDriftModel;
use crate::sim::Path;

/// Points in the coarse parameter scan.
pub const SCAN_POINTS: usize = 201;
/// Width of the final golden-section bracket.
pub const THETA_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMethod {
    Mle,
    Mde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEstimate {
    pub theta_hat: f64,
    pub method: EstimatorMethod,
    /// `(θ, objective)` on the coarse scan: log-likelihood for MLE,
    /// squared L² distance for MDE.
    pub objective_curve: Option<Vec<(f64, f64)>>,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Lte,
    Edf,
    Kernel,
}

/// An estimated density or distribution function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    pub x_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl CurveEstimate {
    pub fn integral(&self) -> f64 {
        trapezoid_xy(&self.x_grid, &self.values)
    }
}

/// Bandwidth of the kernel density estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `1/√T`.
    InverseRootHorizon,
    Fixed(f64),
}

fn check_theta(model: &ShiftDriftModel, theta: f64) -> Result<()> {
    let (lo, hi) = model.theta_interval();
    if theta >= lo && theta <= hi {
        Ok(())
    } else {
        Err(Error::Domain(format!("theta={theta} outside [{lo}, {hi}]")))
    }
}

fn log_likelihood_unchecked(path: &Path, model: &ShiftDriftModel, theta: f64) -> f64 {
    let x = path.values();
    let half_dt = 0.5 * path.dt();
    neumaier_sum(x.windows(2).map(|w| {
        let s = model.drift_star(w[0] - theta);
        s * (w[1] - w[0]) - half_dt * s * s
    }))
}

/// `Σ S*(X_k − θ)(X_{k+1} − X_k) − (dt/2) Σ S*(X_k − θ)²`.
pub fn log_likelihood(path: &Path, model: &ShiftDriftModel, theta: f64) -> Result<f64> {
    check_theta(model, theta)?;
    let l = log_likelihood_unchecked(path, model, theta);
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFinite(format!("log-likelihood at theta={theta}")))
    }
}

/// Result of [`maximize_scalar`].
#[derive(Debug, Clone)]
pub struct Maximum {
    pub argmax: f64,
    pub value: f64,
    pub boundary_hit: bool,
    pub scan: Vec<(f64, f64)>,
}

/// Global maximization on `[lo, hi]`: a uniform scan of [`SCAN_POINTS`]
/// points picks the best bracket (ties go to the smaller argument),
/// golden-section search narrows it to [`THETA_TOLERANCE`], and a final
/// parabolic step through three nearby points is kept if it does not lose
/// objective value.
pub fn maximize_scalar(objective: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<Maximum> {
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let scan: Vec<(f64, f64)> = (0..SCAN_POINTS)
        .map(|i| {
            let t = if i == SCAN_POINTS - 1 {
                hi
            } else {
                lo + i as f64 * step
            };
            (t, objective(t))
        })
        .collect();
    if let Some((t, _)) = scan.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("objective at {t}")));
    }
    let mut best = 0;
    for (i, (_, v)) in scan.iter().enumerate() {
        if *v > scan[best].1 {
            best = i;
        }
    }
    let mut a = scan[best.saturating_sub(1)].0;
    let mut b = scan[(best + 1).min(SCAN_POINTS - 1)].0;

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > THETA_TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d);
        }
    }
    let mut argmax = 0.5 * (a + b);
    let mut value = objective(argmax);
    // Keep the scan's best point if the bracket search lost it (boundary
    // maxima and non-smooth objectives).
    if scan[best].1 > value {
        argmax = scan[best].0;
        value = scan[best].1;
    }

    let s = (1e-5 * (hi - lo)).max(1e-6);
    if argmax - s >= lo && argmax + s <= hi {
        let (fm, fp) = (objective(argmax - s), objective(argmax + s));
        let denom = fm - 2.0 * value + fp;
        if denom < 0.0 {
            let v = argmax + 0.5 * s * (fm - fp) / denom;
            if (v - argmax).abs() <= s {
                let fv = objective(v);
                if fv + 4.0 * f64::EPSILON * fv.abs() >= value {
                    argmax = v;
                    value = fv.max(value);
                }
            }
        }
    }

    let boundary_hit = (argmax - lo).abs() < step || (hi - argmax).abs() < step;
    Ok(Maximum {
        argmax,
        value,
        boundary_hit,
        scan,
    })
}

/// Maximum likelihood estimate of the shift over the model's interval.
pub fn mle_shift(path: &Path, model: &ShiftDriftModel) -> Result<ShiftEstimate> {
    let (lo, hi) = model.theta_interval();
    let m = maximize_scalar(|t| log_likelihood_unchecked(path, model, t), lo, hi)?;
    Ok(ShiftEstimate {
        theta_hat: m.argmax,
        method: EstimatorMethod::Mle,
        objective_curve: Some(m.scan),
        boundary_hit: m.boundary_hit,
    })
}

/// Grid used by the minimum distance estimator: the law's spacing, covering
/// the path and every admissible shift of the law's effective support.
pub fn mde_grid(path: &Path, model: &ShiftDriftModel, law: &InvariantLaw) -> Result<Vec<f64>> {
    let (lo, hi) = model.theta_interval();
    let (a, b) = law.effective_support();
    let (pmin, pmax) = path.min_max();
    let g = UniformGrid::aligned((lo + a).min(pmin), (hi + b).max(pmax), law.grid().step)?;
    Ok(g.points())
}

/// `θ* = argmin_θ ∫ (F̂(x) − F(x − θ))² dx` for a given distribution
/// function estimate.
pub fn mde_from_curve(
    estimate: &CurveEstimate,
    law: &InvariantLaw,
    interval: (f64, f64),
) -> Result<ShiftEstimate> {
    let xs = &estimate.x_grid;
    let distance = |theta: f64| {
        let sq: Vec<f64> = xs
            .iter()
            .zip(&estimate.values)
            .map(|(&x, &v)| {
                let d = v - law.cdf_at(x, theta);
                d * d
            })
            .collect();
        trapezoid_xy(xs, &sq)
    };
    let m = maximize_scalar(|t| -distance(t), interval.0, interval.1)?;
    Ok(ShiftEstimate {
        theta_hat: m.argmax,
        method: EstimatorMethod::Mde,
        objective_curve: Some(m.scan.into_iter().map(|(t, v)| (t, -v)).collect()),
        boundary_hit: m.boundary_hit,
    })
}

/// Minimum distance estimate from the path's EDF.
pub fn mde_shift(
    path: &Path,
    model: &ShiftDriftModel,
    law: &InvariantLaw,
) -> Result<ShiftEstimate> {
    let grid = mde_grid(path, model, law)?;
    let estimate = edf(path, &grid);
    mde_from_curve(&estimate, law, model.theta_interval())
}

/// Local time estimator
/// `f̂(x) = (|X_T − x| − |X_0 − x| − Σ sgn(X_k − x)(X_{k+1} − X_k)) / T`
/// with `sgn(0) = 0`.
///
/// Each increment contributes only at grid points it crosses, so the sum is
/// evaluated step by step: `2|X_{k+1} − x|` strictly between the endpoints,
/// `|X_{k+1} − X_k|` at `x = X_k`, and nothing elsewhere. The result is
/// exactly zero outside the path's range. `x_grid` must be increasing.
pub fn lte_density(path: &Path, x_grid: &[f64]) -> CurveEstimate {
    let mut acc = vec![0.0; x_grid.len()];
    for w in path.values().windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let start = x_grid.partition_point(|&x| x <= lo);
        let end = x_grid.partition_point(|&x| x < hi);
        for i in start..end {
            acc[i] += 2.0 * (b - x_grid[i]).abs();
        }
        // Grid point sitting exactly on the left endpoint.
        let at = x_grid.partition_point(|&x| x < a);
        if at < x_grid.len() && x_grid[at] == a {
            acc[at] += (b - a).abs();
        }
    }
    let t = path.horizon();
    CurveEstimate {
        x_grid: x_grid.to_vec(),
        values: acc.into_iter().map(|v| v / t).collect(),
        kind: CurveKind::Lte,
    }
}

fn sorted_left_points(path: &Path) -> Vec<f64> {
    let mut xs = path.left_points().to_vec();
    xs.sort_by(f64::total_cmp);
    xs
}

/// `F̂(x) = (1/T) ∫ 1{X_t < x} dt`, as the fraction of left endpoints below x.
pub fn edf(path: &Path, x_grid: &[f64]) -> CurveEstimate {
    let xs = sorted_left_points(path);
    let n = xs.len() as f64;
    CurveEstimate {
        x_grid: x_grid.to_vec(),
        values: x_grid
            .iter()
            .map(|&x| xs.partition_point(|&v| v < x) as f64 / n)
            .collect(),
        kind: CurveKind::Edf,
    }
}

/// Gaussian kernel estimator `f̄(x) = (1/T) ∫ K_h(X_t − x) dt`; with
/// [`Bandwidth::InverseRootHorizon`] this is `(1/√T) ∫ K(√T (X_t − x)) dt`.
pub fn kernel_density(path: &Path, x_grid: &[f64], bandwidth: Bandwidth) -> CurveEstimate {
    const CUTOFF: f64 = 8.0;
    let h = match bandwidth {
        Bandwidth::InverseRootHorizon => 1.0 / path.horizon().sqrt(),
        Bandwidth::Fixed(h) => h,
    };
    let xs = sorted_left_points(path);
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let values = x_grid
        .iter()
        .map(|&x| {
            let lo = xs.partition_point(|&v| v < x - CUTOFF * h);
            let hi = xs.partition_point(|&v| v <= x + CUTOFF * h);
            let s: f64 = xs[lo..hi]
                .iter()
                .map(|&v| {
                    let u = (v - x) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect();
    CurveEstimate {
        x_grid: x_grid.to_vec(),
        values,
        kind: CurveKind::Kernel,
    }
}
