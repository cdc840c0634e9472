//! Numeric checks of the regularity conditions on a probe grid.
//!
//! Each check stores the witness it found (the constant `C`, the pair
//! `(A, γ)`, the Fisher information, the minimal separation) so the claim
//! can be re-verified later against the same grid.

use crate::error::{Error, Result};
use crate::grid::{trapezoid, UniformGrid};
use crate::law::{log_density_unnorm, normalize_log_density};
use crate::model::ShiftDriftModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGrid {
    pub grid: UniformGrid,
    /// Separation is checked for `ν < |τ| ≤ tau_max`.
    pub nu: f64,
    pub tau_max: f64,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self::from_grid(UniformGrid::symmetric(10.0, 0.01).expect("static grid"))
    }
}

impl ProbeGrid {
    pub fn from_grid(grid: UniformGrid) -> Self {
        Self {
            grid,
            nu: 0.1,
            tau_max: 10.0,
        }
    }

    pub fn half_width(&self) -> f64 {
        self.grid.end().min(-self.grid.start)
    }
}

/// `sgn(x) S(x) < −γ` for `|x| > A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailWitness {
    pub a: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub probe: ProbeGrid,
    pub es_ok: bool,
    /// `x S(x) ≤ C (1 + x²)` on the probe grid.
    pub es_constant: f64,
    pub a0: Option<TailWitness>,
    pub fisher_information: f64,
    pub fisher_positive: bool,
    pub separation_ok: bool,
    pub separation_min: f64,
    pub separation_argmin: f64,
}

impl ConditionReport {
    pub fn a0_ok(&self) -> bool {
        self.a0.is_some()
    }

    pub fn all_ok(&self) -> bool {
        self.es_ok && self.a0_ok() && self.fisher_positive && self.separation_ok
    }

    /// Re-evaluate the stored witnesses against `model` on the stored grid.
    pub fn verify(&self, model: &ShiftDriftModel) -> bool {
        let xs = self.probe.grid.points();
        let es = xs
            .iter()
            .all(|&x| x * model.drift_star(x) <= self.es_constant * (1.0 + x * x));
        let a0 = match self.a0 {
            Some(w) => xs
                .iter()
                .filter(|x| x.abs() > w.a)
                .all(|&x| x.signum() * model.drift_star(x) < -w.gamma),
            None => true,
        };
        es == self.es_ok && a0
    }
}

/// Largest grid value of `x S(x) / (1 + x²)`; `None` if S is not finite.
fn es_witness(model: &ShiftDriftModel, xs: &[f64]) -> Option<f64> {
    let mut c = f64::EPSILON;
    for &x in xs {
        let s = model.drift_star(x);
        if !s.is_finite() {
            return None;
        }
        c = c.max(x * s / (1.0 + x * x));
    }
    Some(c)
}

/// Smallest grid `A ≥ 1` with a positive margin `inf_{A<|x|≤L} −sgn(x)S(x)`;
/// γ is half that margin.
fn a0_witness(model: &ShiftDriftModel, xs: &[f64]) -> Option<TailWitness> {
    let mut pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| (x.abs(), -x.signum() * model.drift_star(x)))
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Walk |x| downward keeping the running margin over |x| > candidate.
    let mut margin = f64::INFINITY;
    let mut best = None;
    let mut i = 0;
    while i < pts.len() {
        let r = pts[i].0;
        if r < 1.0 {
            break;
        }
        if margin > 0.0 && margin.is_finite() {
            best = Some(TailWitness {
                a: r,
                gamma: 0.5 * margin,
            });
        } else if margin <= 0.0 {
            break;
        }
        while i < pts.len() && pts[i].0 == r {
            margin = margin.min(pts[i].1);
            i += 1;
        }
    }
    best
}

pub fn check_conditions(model: &ShiftDriftModel, probe: &ProbeGrid) -> Result<ConditionReport> {
    if probe.half_width() < 10.0 - 1e-9 {
        return Err(Error::Domain(format!(
            "probe grid must cover [-10, 10], covers half-width {}",
            probe.half_width()
        )));
    }
    let grid = probe.grid;
    let xs = grid.points();

    let es = es_witness(model, &xs);
    let a0 = a0_witness(model, &xs);

    let (fisher, sep_min, sep_arg) = match log_density_unnorm(model, &grid) {
        Ok(log_unnorm) => {
            let (_, f) = normalize_log_density(grid.step, &log_unnorm);
            let fisher_vals: Vec<f64> = xs
                .iter()
                .zip(&f)
                .map(|(&x, &w)| model.drift_star_deriv(x).powi(2) * w)
                .collect();
            let fisher = trapezoid(grid.step, &fisher_vals);

            let tau_step = (probe.tau_max - probe.nu) / 200.0;
            let mut sep_min = f64::INFINITY;
            let mut sep_arg = f64::NAN;
            for sign in [-1.0, 1.0] {
                for k in 1..=200 {
                    let tau = sign * (probe.nu + k as f64 * tau_step);
                    let vals: Vec<f64> = xs
                        .iter()
                        .zip(&f)
                        .map(|(&x, &w)| {
                            (model.drift_star(x) - model.drift_star(x + tau)).powi(2) * w
                        })
                        .collect();
                    let v = trapezoid(grid.step, &vals);
                    if v < sep_min {
                        sep_min = v;
                        sep_arg = tau;
                    }
                }
            }
            (fisher, sep_min, sep_arg)
        }
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };

    Ok(ConditionReport {
        probe: *probe,
        es_ok: es.is_some(),
        es_constant: es.unwrap_or(f64::NAN),
        a0,
        fisher_information: fisher,
        fisher_positive: fisher.is_finite() && fisher > 1e-10,
        separation_ok: sep_min.is_finite() && sep_min > 1e-12,
        separation_min: sep_min,
        separation_argmin: sep_arg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn custom(f: fn(f64) -> f64, df: fn(f64) -> f64, interval: (f64, f64)) -> ShiftDriftModel {
        ShiftDriftModel::new(
            "custom",
            Arc::new(f),
            Arc::new(df),
            interval,
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn ou_passes_everything() {
        let m = ShiftDriftModel::ou(1.0).unwrap();
        let r = check_conditions(&m, &ProbeGrid::default()).unwrap();
        assert!(r.all_ok());
        let w = r.a0.unwrap();
        assert_eq!(w.a, 1.0);
        assert!((w.gamma - 0.5).abs() < 0.01);
        assert!((r.fisher_information - 1.0).abs() < 1e-6);
        assert!(r.verify(&m));
    }

    #[test]
    fn repulsive_drift_fails_a0() {
        let m = custom(|x| x, |_| 1.0, (-1.0, 1.0));
        let r = check_conditions(&m, &ProbeGrid::default()).unwrap();
        assert!(!r.a0_ok());
        assert!(r.es_ok);
    }

    #[test]
    fn report_ignores_theta_interval() {
        let a = custom(|x| -x, |_| -1.0, (-1.0, 2.0));
        let b = custom(|x| -x, |_| -1.0, (-10.0, 10.0));
        let ra = check_conditions(&a, &ProbeGrid::default()).unwrap();
        let rb = check_conditions(&b, &ProbeGrid::default()).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn builtins_pass() {
        for m in [
            ShiftDriftModel::cubic(1.0).unwrap(),
            ShiftDriftModel::tanh_damped(2.0, 0.5).unwrap(),
        ] {
            let r = check_conditions(&m, &ProbeGrid::default()).unwrap();
            assert!(r.all_ok(), "{}", m.name());
            assert!(r.verify(&m));
        }
    }

    #[test]
    fn probe_must_be_wide_enough() {
        let m = ShiftDriftModel::ou(1.0).unwrap();
        let p = ProbeGrid::from_grid(UniformGrid::symmetric(5.0, 0.01).unwrap());
        assert!(check_conditions(&m, &p).is_err());
    }

    #[test]
    fn constant_derivative_zero_has_no_information() {
        // S*(x) = −sgn(x): A0 holds but S*' = 0 almost everywhere.
        let m = custom(|x| -x.signum(), |_| 0.0, (-1.0, 1.0));
        let r = check_conditions(&m, &ProbeGrid::default()).unwrap();
        assert!(r.a0_ok());
        assert!(!r.fisher_positive);
    }
}
