//! Invariant law of a shift-drift model, tabulated by quadrature.
//!
//! Under the null the stationary density is a pure shift,
//! `f(x, θ) = f(x − θ)` with `f(x) = exp{2∫₀ˣ S*(y) dy} / G`, so a single
//! table at θ = 0 serves every parameter value. The kernels `M(y, x)` and
//! `H(z, x)` driving the limit laws are evaluated from the same table.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path as FsPath;

use crate::conditions::{check_conditions, ProbeGrid};
use crate::error::{Error, Result};
use crate::grid::{cumulative_corrected, trapezoid, UniformGrid};
use crate::model::ShiftDriftModel;

/// Relative density level below which the law is treated as zero.
pub const EFFECTIVE_SUPPORT_LEVEL: f64 = 1e-12;

/// Largest tail mass the truncation interval may leave out.
pub const MAX_TRUNCATED_MASS: f64 = 1e-8;

/// Exponential tail rate: `f(x) ≤ C·exp(−2γ|x|)` for `|x| > A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRate {
    pub a: f64,
    pub gamma: f64,
    pub c: f64,
}

impl TailRate {
    /// Upper bound on the mass of `f` beyond `|x| > r` on one side, `r ≥ A`.
    pub fn mass_beyond(&self, r: f64) -> f64 {
        self.c * (-2.0 * self.gamma * r).exp() / (2.0 * self.gamma)
    }

    /// Upper bound on `∫_{|x|>r} f(x)² dx` on one side.
    pub fn square_mass_beyond(&self, r: f64) -> f64 {
        self.c * self.c * (-4.0 * self.gamma * r).exp() / (4.0 * self.gamma)
    }
}

#[derive(Debug, Clone)]
pub struct InvariantLaw {
    model: ShiftDriftModel,
    grid: UniformGrid,
    log_density_unnorm: Vec<f64>,
    log_g: f64,
    log_f: Vec<f64>,
    /// `2 S*(x)` at the nodes: the derivative of `log f`.
    score_vals: Vec<f64>,
    f_vals: Vec<f64>,
    neg_f_vals: Vec<f64>,
    cdf_vals: Vec<f64>,
    sf_vals: Vec<f64>,
    fisher: f64,
    tail: TailRate,
    support: (usize, usize),
}

/// `2∫₀ˣ S*(y) dy` on a grid that has 0 as a node, by per-cell Simpson
/// (midpoint evaluated directly) accumulated outward from the origin.
pub(crate) fn log_density_unnorm(model: &ShiftDriftModel, grid: &UniformGrid) -> Result<Vec<f64>> {
    let origin = (-grid.start / grid.step).round();
    if origin < 0.0
        || origin >= grid.len as f64
        || grid.at(origin as usize).abs() > 1e-9 * grid.step
    {
        return Err(Error::Domain("grid must have 0 as a node".into()));
    }
    let i0 = origin as usize;
    let cell = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        2.0 * (b - a) / 6.0
            * (model.drift_star(a) + 4.0 * model.drift_star(m) + model.drift_star(b))
    };
    let mut out = vec![0.0; grid.len];
    for i in i0 + 1..grid.len {
        out[i] = out[i - 1] + cell(grid.at(i - 1), grid.at(i));
    }
    for i in (0..i0).rev() {
        out[i] = out[i + 1] - cell(grid.at(i), grid.at(i + 1));
    }
    if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "drift integral at x={}",
            grid.at(bad)
        )));
    }
    Ok(out)
}

/// Normalized density on `grid` via log-sum-exp.
/// Returns `(log G, f)`.
pub(crate) fn normalize_log_density(step: f64, log_unnorm: &[f64]) -> (f64, Vec<f64>) {
    let max = log_unnorm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_unnorm.iter().map(|l| (l - max).exp()).collect();
    let z = trapezoid(step, &w);
    let f = w.iter().map(|v| v / z).collect();
    (max + z.ln(), f)
}

/// Truncation half-width `A + max(20/γ, 10)`.
pub fn default_half_width(tail_a: f64, gamma: f64) -> f64 {
    tail_a + (20.0 / gamma).max(10.0)
}

impl InvariantLaw {
    /// Build the law with the default truncation and spacing
    /// (`L = A + max(20/γ, 10)`, `h = 1e-3·L`).
    pub fn build_default(model: &ShiftDriftModel) -> Result<Self> {
        let report = check_conditions(model, &ProbeGrid::default())?;
        let a0 = report
            .a0
            .ok_or_else(|| Error::Condition("drift is not mean-reverting at infinity".into()))?;
        let half_width = default_half_width(a0.a, a0.gamma);
        Self::build(model, half_width, 1e-3 * half_width)
    }

    /// Tabulate `f`, `F`, `G` and `I` on `[−L, L]` with spacing at most `h_x`.
    pub fn build(model: &ShiftDriftModel, half_width: f64, h_x: f64) -> Result<Self> {
        if !(half_width >= 10.0) {
            return Err(Error::Domain(format!(
                "truncation half-width must be at least 10, got {half_width}"
            )));
        }
        let grid = UniformGrid::symmetric(half_width, h_x)?;
        let report = check_conditions(model, &ProbeGrid::from_grid(grid))?;
        let a0 = report
            .a0
            .ok_or_else(|| Error::Condition("drift is not mean-reverting at infinity".into()))?;

        let log_unnorm = log_density_unnorm(model, &grid)?;
        let (log_g, f_vals) = normalize_log_density(grid.step, &log_unnorm);
        if !log_g.is_finite() || f_vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "normalization of the invariant density".into(),
            ));
        }
        let fmax = f_vals.iter().copied().fold(0.0, f64::max);

        // Tail witness: the tightest C on the grid for the fitted (A, γ).
        let c = grid
            .points()
            .iter()
            .zip(&f_vals)
            .filter(|(x, _)| x.abs() >= a0.a)
            .map(|(x, f)| f * (2.0 * a0.gamma * x.abs()).exp())
            .fold(0.0, f64::max)
            * (1.0 + 1e-9);
        let tail = TailRate {
            a: a0.a,
            gamma: a0.gamma,
            c,
        };
        let edge_mass = f_vals[0].max(f_vals[grid.len - 1]) / (2.0 * a0.gamma);
        if edge_mass > MAX_TRUNCATED_MASS {
            return Err(Error::Condition(format!(
                "density has not decayed at |x|={half_width} (tail mass bound {edge_mass:e}); \
                 increase the truncation half-width"
            )));
        }

        let xs = grid.points();
        let score_vals: Vec<f64> = xs.iter().map(|&x| 2.0 * model.drift_star(x)).collect();
        let f_deriv: Vec<f64> = score_vals.iter().zip(&f_vals).map(|(s, f)| s * f).collect();
        let neg_f_vals: Vec<f64> = f_vals.iter().map(|v| -v).collect();
        let log_f: Vec<f64> = log_unnorm.iter().map(|l| l - log_g).collect();

        let cdf_vals = cumulative_corrected(grid.step, &f_vals, &f_deriv);
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        let neg_rev_deriv: Vec<f64> = f_deriv.iter().rev().map(|d| -d).collect();
        let mut sf_vals = cumulative_corrected(grid.step, &rev(&f_vals), &neg_rev_deriv);
        sf_vals.reverse();

        let fisher_integrand: Vec<f64> = xs
            .iter()
            .zip(&f_vals)
            .map(|(&x, &f)| {
                let d = model.drift_star_deriv(x);
                d * d * f
            })
            .collect();
        let fisher = trapezoid(grid.step, &fisher_integrand);
        if !(fisher > 1e-12) {
            return Err(Error::Condition(format!(
                "Fisher information must be positive, got {fisher}"
            )));
        }

        let cutoff = EFFECTIVE_SUPPORT_LEVEL * fmax;
        let lo = f_vals.iter().position(|&v| v >= cutoff).unwrap_or(0);
        let hi = f_vals
            .iter()
            .rposition(|&v| v >= cutoff)
            .unwrap_or(grid.len - 1);

        Ok(Self {
            model: model.clone(),
            grid,
            log_density_unnorm: log_unnorm,
            log_g,
            log_f,
            score_vals,
            f_vals,
            neg_f_vals,
            cdf_vals,
            sf_vals,
            fisher,
            tail,
            support: (lo, hi),
        })
    }

    pub fn model(&self) -> &ShiftDriftModel {
        &self.model
    }

    pub fn model_ref(&self) -> String {
        self.model.reference()
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn log_density_unnorm(&self) -> &[f64] {
        &self.log_density_unnorm
    }

    /// Normalization constant `G` (may be `inf` for extreme drifts; see
    /// [`Self::log_normalization`]).
    pub fn normalization(&self) -> f64 {
        self.log_g.exp()
    }

    pub fn log_normalization(&self) -> f64 {
        self.log_g
    }

    pub fn f_vals(&self) -> &[f64] {
        &self.f_vals
    }

    pub fn cdf_vals(&self) -> &[f64] {
        &self.cdf_vals
    }

    pub fn sf_vals(&self) -> &[f64] {
        &self.sf_vals
    }

    /// Fisher information `E₀ S*'(ξ₀)²`.
    pub fn fisher_information(&self) -> f64 {
        self.fisher
    }

    pub fn tail(&self) -> TailRate {
        self.tail
    }

    /// `[a, b]` where `f ≥ 1e-12·max f`.
    pub fn effective_support(&self) -> (f64, f64) {
        (self.grid.at(self.support.0), self.grid.at(self.support.1))
    }

    /// Probability mass of the law outside [`Self::effective_support`].
    pub fn mass_outside_support(&self) -> f64 {
        self.cdf_vals[self.support.0] + self.sf_vals[self.support.1]
    }

    /// `f(x − θ)`; zero off the tabulated interval.
    #[inline]
    pub fn density_at(&self, x: f64, theta: f64) -> f64 {
        let u = x - theta;
        if u < self.grid.start || u > self.grid.end() {
            return 0.0;
        }
        self.grid.hermite(&self.log_f, &self.score_vals, u).exp()
    }

    /// `F(x − θ)`, clamped to 0 / 1 off the tabulated interval.
    #[inline]
    pub fn cdf_at(&self, x: f64, theta: f64) -> f64 {
        let u = x - theta;
        if u <= self.grid.start {
            return 0.0;
        }
        if u >= self.grid.end() {
            return 1.0;
        }
        self.monotone_hermite(&self.cdf_vals, &self.f_vals, u)
    }

    /// `1 − F(x − θ)`, computed from the right so that it keeps relative
    /// precision in the upper tail.
    #[inline]
    pub fn sf_at(&self, x: f64, theta: f64) -> f64 {
        let u = x - theta;
        if u <= self.grid.start {
            return 1.0;
        }
        if u >= self.grid.end() {
            return 0.0;
        }
        self.monotone_hermite(&self.sf_vals, &self.neg_f_vals, u)
    }

    /// Hermite interpolation kept within the bracketing node values, which
    /// matters only in steep tails where the cubic can overshoot.
    fn monotone_hermite(&self, values: &[f64], derivs: &[f64], u: f64) -> f64 {
        let v = self.grid.hermite(values, derivs, u);
        let i = (((u - self.grid.start) / self.grid.step).floor().max(0.0) as usize)
            .min(self.grid.len - 2);
        let (a, b) = (values[i], values[i + 1]);
        v.clamp(a.min(b), a.max(b))
    }

    /// `f'(x) = 2 S*(x) f(x)`.
    #[inline]
    pub fn density_deriv_at(&self, x: f64) -> f64 {
        2.0 * self.model.drift_star(x) * self.density_at(x, 0.0)
    }

    /// Quantile of the law at θ = 0.
    pub fn inverse_cdf(&self, p: f64) -> Result<f64> {
        if !(p > 1e-9 && p < 1.0 - 1e-9) {
            return Err(Error::Domain(format!(
                "probability {p} outside (1e-9, 1 - 1e-9)"
            )));
        }
        // Bracket on the tables, then bisect on the interpolant so the result
        // inverts `cdf_at` itself. The upper half works on the survival side
        // to keep precision near 1.
        let (lo, hi) = if p <= 0.5 {
            let j = self
                .cdf_vals
                .partition_point(|&v| v <= p)
                .clamp(1, self.grid.len - 1);
            (self.grid.at(j - 1), self.grid.at(j))
        } else {
            let q = 1.0 - p;
            let j = self
                .sf_vals
                .partition_point(|&v| v > q)
                .clamp(1, self.grid.len - 1);
            (self.grid.at(j - 1), self.grid.at(j))
        };
        let below = |x: f64| {
            if p <= 0.5 {
                self.cdf_at(x, 0.0) < p
            } else {
                self.sf_at(x, 0.0) > 1.0 - p
            }
        };
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if below(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn checked_density(&self, y: f64) -> Result<f64> {
        let fy = self.density_at(y, 0.0);
        if !(fy >= 1e-300) {
            return Err(Error::TailTruncation { y, density: fy });
        }
        Ok(fy)
    }

    /// `M(y, x) = 2 f(x) (1{y > x} − F(y)) / f(y)`.
    pub fn kernel_m(&self, y: f64, x: f64) -> Result<f64> {
        let fy = self.checked_density(y)?;
        let fx = self.density_at(x, 0.0);
        let num = if y > x {
            self.sf_at(y, 0.0)
        } else {
            -self.cdf_at(y, 0.0)
        };
        Ok(2.0 * fx * num / fy)
    }

    /// `H(z, x) = 2 (F(z ∧ x) − F(z) F(x)) / f(z)`.
    pub fn kernel_h(&self, z: f64, x: f64) -> Result<f64> {
        let fz = self.checked_density(z)?;
        let num = if z <= x {
            self.cdf_at(z, 0.0) * self.sf_at(x, 0.0)
        } else {
            self.cdf_at(x, 0.0) * self.sf_at(z, 0.0)
        };
        Ok(2.0 * num / fz)
    }

    /// CSV export: metadata comment lines, then `x,f,F` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# model={}", self.model_ref());
        let _ = writeln!(
            s,
            "# G={} I={} A={} gamma={}",
            self.normalization(),
            self.fisher,
            self.tail.a,
            self.tail.gamma
        );
        let _ = writeln!(s, "x,f,F");
        for i in 0..self.grid.len {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e}",
                self.grid.at(i),
                self.f_vals[i],
                self.cdf_vals[i]
            );
        }
        s
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
