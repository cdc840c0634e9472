//! Cramér–von Mises and Kolmogorov–Smirnov statistics and the
//! accept / reject decision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    edf, kernel_density, lte_density, mde_shift, mle_shift, Bandwidth, CurveEstimate, CurveKind,
};
use crate::grid::{trapezoid, UniformGrid};
use crate::law::{InvariantLaw, EFFECTIVE_SUPPORT_LEVEL};
use crate::limit::{LimitKind, QuantileTable};
use crate::model::ShiftDriftModel;
use crate::sim::Path;

/// Shortest horizon accepted by the statistics.
pub const MIN_HORIZON: f64 = 10.0;
/// Upper bound on the spacing of the x-integration grid.
pub const MAX_STATISTIC_STEP: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// `δ_T`: local time estimator against `f(· − θ̂)`, MLE.
    DeltaLte,
    /// `Δ_T`: empirical distribution function against `F(· − θ̂)`, MLE.
    DeltaEdf,
    /// `μ_T`: kernel density against `f(· − θ*)`, MDE.
    MuKernel,
    /// `ω_T = √T sup |f̂ − f(· − θ̂)|`.
    KsLte,
    /// `Ω_T = √T sup |F̂ − F(· − θ̂)|`.
    KsEdf,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 5] = [
        StatisticKind::DeltaLte,
        StatisticKind::DeltaEdf,
        StatisticKind::MuKernel,
        StatisticKind::KsLte,
        StatisticKind::KsEdf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StatisticKind::DeltaLte => "delta_lte",
            StatisticKind::DeltaEdf => "delta_edf",
            StatisticKind::MuKernel => "mu_kernel",
            StatisticKind::KsLte => "ks_lte",
            StatisticKind::KsEdf => "ks_edf",
        }
    }

    /// The limit law whose quantiles calibrate this statistic.
    pub fn limit_kind(&self) -> Option<LimitKind> {
        match self {
            StatisticKind::DeltaLte => Some(LimitKind::Delta),
            StatisticKind::DeltaEdf => Some(LimitKind::BigDelta),
            StatisticKind::MuKernel => Some(LimitKind::Mu),
            StatisticKind::KsLte | StatisticKind::KsEdf => None,
        }
    }

    fn curve(&self) -> CurveKind {
        match self {
            StatisticKind::DeltaLte | StatisticKind::KsLte => CurveKind::Lte,
            StatisticKind::DeltaEdf | StatisticKind::KsEdf => CurveKind::Edf,
            StatisticKind::MuKernel => CurveKind::Kernel,
        }
    }

    fn is_sup_norm(&self) -> bool {
        matches!(self, StatisticKind::KsLte | StatisticKind::KsEdf)
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatisticKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown statistic kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub kind: StatisticKind,
    pub model_ref: String,
    pub statistic_value: f64,
    pub theta_hat: f64,
    pub horizon: f64,
    /// Bound on the part of the x-integral (or supremum) outside the
    /// integration grid, which is taken as zero.
    pub tail_bound: f64,
    pub threshold: Option<f64>,
    pub epsilon: Option<f64>,
    pub reject: Option<bool>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    kind: &'a str,
    value: f64,
    theta_hat: f64,
    threshold: Option<f64>,
    epsilon: Option<f64>,
    reject: Option<bool>,
}

impl TestReport {
    /// `{kind, value, theta_hat, threshold, epsilon, reject}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ReportJson {
            kind: self.kind.as_str(),
            value: self.statistic_value,
            theta_hat: self.theta_hat,
            threshold: self.threshold,
            epsilon: self.epsilon,
            reject: self.reject,
        })
        .expect("report serializes")
    }
}

/// An estimated curve together with the shift estimate it is compared at.
#[derive(Debug, Clone)]
pub struct FittedCurve {
    pub theta_hat: f64,
    pub curve: CurveEstimate,
}

impl FittedCurve {
    /// The model curve itself: every statistic built from it is zero.
    pub fn perfect(kind: StatisticKind, law: &InvariantLaw, theta: f64) -> Self {
        let x_grid = statistic_grid(law, theta, None).points();
        let values = x_grid
            .iter()
            .map(|&x| model_curve(kind.curve(), law, x, theta))
            .collect();
        Self {
            theta_hat: theta,
            curve: CurveEstimate {
                x_grid,
                values,
                kind: kind.curve(),
            },
        }
    }
}

#[inline]
fn model_curve(kind: CurveKind, law: &InvariantLaw, x: f64, theta: f64) -> f64 {
    match kind {
        CurveKind::Lte | CurveKind::Kernel => law.density_at(x, theta),
        CurveKind::Edf => law.cdf_at(x, theta),
    }
}

/// x-integration grid: the law's effective support shifted by θ, extended to
/// the path's range, spaced at the law's step (subdivided to at most
/// [`MAX_STATISTIC_STEP`]) and aligned so that `x − θ` hits law nodes.
pub fn statistic_grid(law: &InvariantLaw, theta: f64, path: Option<&Path>) -> UniformGrid {
    let law_step = law.grid().step;
    let step = law_step / (law_step / MAX_STATISTIC_STEP).ceil();
    let (mut a, mut b) = law.effective_support();
    if let Some(p) = path {
        let (lo, hi) = p.min_max();
        a = a.min(lo - theta - step);
        b = b.max(hi - theta + step);
    }
    UniformGrid::aligned(a, b, step)
        .expect("effective support is a proper interval")
        .shifted(theta)
}

/// Bound on what the grid leaves out, given its range `[a, b]` in law
/// coordinates.
fn tail_bound(
    kind: StatisticKind,
    law: &InvariantLaw,
    horizon: f64,
    grid: &UniformGrid,
    theta: f64,
) -> f64 {
    let (a, b) = (grid.start - theta, grid.end() - theta);
    let gamma = law.tail().gamma;
    let fmax = law.f_vals().iter().copied().fold(0.0, f64::max);
    let f_edge = EFFECTIVE_SUPPORT_LEVEL * fmax;
    let (lower, upper) = (law.cdf_at(a, 0.0), law.sf_at(b, 0.0));
    match kind {
        StatisticKind::DeltaLte | StatisticKind::MuKernel => horizon * f_edge * (lower + upper),
        StatisticKind::DeltaEdf => horizon * (lower * lower + upper * upper) / (4.0 * gamma),
        StatisticKind::KsLte => horizon.sqrt() * f_edge,
        StatisticKind::KsEdf => horizon.sqrt() * lower.max(upper),
    }
}

/// Statistic of `kind` from a fitted curve observed over `horizon`.
pub fn statistic_from_fit(
    kind: StatisticKind,
    fit: &FittedCurve,
    law: &InvariantLaw,
    horizon: f64,
) -> Result<TestReport> {
    if fit.curve.kind != kind.curve() {
        return Err(Error::Domain(format!(
            "{kind} needs a {:?} curve, got {:?}",
            kind.curve(),
            fit.curve.kind
        )));
    }
    let xs = &fit.curve.x_grid;
    let diffs: Vec<f64> = xs
        .iter()
        .zip(&fit.curve.values)
        .map(|(&x, &v)| v - model_curve(kind.curve(), law, x, fit.theta_hat))
        .collect();
    let value = if kind.is_sup_norm() {
        horizon.sqrt() * diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    } else {
        let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
        let step = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
        horizon * trapezoid(step, &sq)
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{kind} statistic")));
    }
    let grid = UniformGrid {
        start: xs[0],
        step: if xs.len() > 1 { xs[1] - xs[0] } else { 1.0 },
        len: xs.len(),
    };
    Ok(TestReport {
        kind,
        model_ref: law.model_ref(),
        statistic_value: value,
        theta_hat: fit.theta_hat,
        horizon,
        tail_bound: tail_bound(kind, law, horizon, &grid, fit.theta_hat),
        threshold: None,
        epsilon: None,
        reject: None,
    })
}

fn check_inputs(path: &Path, model: &ShiftDriftModel, law: &InvariantLaw) -> Result<()> {
    if path.horizon() < MIN_HORIZON {
        return Err(Error::Domain(format!(
            "horizon {} is shorter than {MIN_HORIZON}",
            path.horizon()
        )));
    }
    if law.model_ref() != model.reference() {
        return Err(Error::ModelMismatch {
            statistic: model.reference(),
            table: law.model_ref(),
        });
    }
    Ok(())
}

/// Compute several statistics on one path, sharing the estimators.
pub fn compute_statistics(
    path: &Path,
    model: &ShiftDriftModel,
    law: &InvariantLaw,
    kinds: &[StatisticKind],
) -> Result<Vec<TestReport>> {
    check_inputs(path, model, law)?;
    let horizon = path.horizon();
    let needs_mle = kinds.iter().any(|k| *k != StatisticKind::MuKernel);
    let mle = if needs_mle {
        Some(mle_shift(path, model)?.theta_hat)
    } else {
        None
    };
    let mde = if kinds.contains(&StatisticKind::MuKernel) {
        Some(mde_shift(path, model, law)?.theta_hat)
    } else {
        None
    };
    let mut lte = None;
    let mut emp = None;
    kinds
        .iter()
        .map(|&kind| {
            let fit = match kind {
                StatisticKind::MuKernel => {
                    let theta = mde.expect("computed above");
                    let grid = statistic_grid(law, theta, Some(path)).points();
                    FittedCurve {
                        theta_hat: theta,
                        curve: kernel_density(path, &grid, Bandwidth::InverseRootHorizon),
                    }
                }
                StatisticKind::DeltaLte | StatisticKind::KsLte => {
                    let theta = mle.expect("computed above");
                    let curve = lte
                        .get_or_insert_with(|| {
                            lte_density(path, &statistic_grid(law, theta, Some(path)).points())
                        })
                        .clone();
                    FittedCurve {
                        theta_hat: theta,
                        curve,
                    }
                }
                StatisticKind::DeltaEdf | StatisticKind::KsEdf => {
                    let theta = mle.expect("computed above");
                    let curve = emp
                        .get_or_insert_with(|| {
                            edf(path, &statistic_grid(law, theta, Some(path)).points())
                        })
                        .clone();
                    FittedCurve {
                        theta_hat: theta,
                        curve,
                    }
                }
            };
            statistic_from_fit(kind, &fit, law, horizon)
        })
        .collect()
}

fn single(
    path: &Path,
    model: &ShiftDriftModel,
    law: &InvariantLaw,
    kind: StatisticKind,
) -> Result<TestReport> {
    Ok(compute_statistics(path, model, law, &[kind])?.remove(0))
}

/// `δ_T = T ∫ (f̂_T(x) − f(x − θ̂_T))² dx`.
pub fn cvm_lte(path: &Path, model: &ShiftDriftModel, law: &InvariantLaw) -> Result<TestReport> {
    single(path, model, law, StatisticKind::DeltaLte)
}

/// `Δ_T = T ∫ (F̂_T(x) − F(x − θ̂_T))² dx`.
pub fn cvm_edf(path: &Path, model: &ShiftDriftModel, law: &InvariantLaw) -> Result<TestReport> {
    single(path, model, law, StatisticKind::DeltaEdf)
}

/// `μ_T = T ∫ (f̄_T(x) − f(x − θ*_T))² dx`.
pub fn cvm_kernel(path: &Path, model: &ShiftDriftModel, law: &InvariantLaw) -> Result<TestReport> {
    single(path, model, law, StatisticKind::MuKernel)
}

/// `(ω_T, Ω_T)`. No thresholds exist for these.
pub fn ks_statistics(
    path: &Path,
    model: &ShiftDriftModel,
    law: &InvariantLaw,
) -> Result<(TestReport, TestReport)> {
    let mut v = compute_statistics(
        path,
        model,
        law,
        &[StatisticKind::KsLte, StatisticKind::KsEdf],
    )?;
    let omega_big = v.pop().expect("two reports");
    let omega = v.pop().expect("two reports");
    Ok((omega, omega_big))
}

/// Attach the threshold for `epsilon` and reject iff statistic > threshold.
pub fn decide(report: &TestReport, table: &QuantileTable, epsilon: f64) -> Result<TestReport> {
    let expected = report
        .kind
        .limit_kind()
        .ok_or_else(|| Error::KindMismatch {
            statistic: report.kind.to_string(),
            table: table.kind.to_string(),
        })?;
    if expected != table.kind {
        return Err(Error::KindMismatch {
            statistic: report.kind.to_string(),
            table: table.kind.to_string(),
        });
    }
    if report.model_ref != table.model_ref {
        return Err(Error::ModelMismatch {
            statistic: report.model_ref.clone(),
            table: table.model_ref.clone(),
        });
    }
    let threshold = table.threshold(epsilon)?;
    Ok(TestReport {
        threshold: Some(threshold),
        epsilon: Some(epsilon),
        reject: Some(report.statistic_value > threshold),
        ..report.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::QuantileTable;
    use crate::sim::{simulate_path, InitRule, Noise, TimeGrid};

    fn ou() -> ShiftDriftModel {
        ShiftDriftModel::ou(1.0).unwrap()
    }

    fn law() -> InvariantLaw {
        InvariantLaw::build_default(&ou()).unwrap()
    }

    fn table(kind: LimitKind) -> QuantileTable {
        QuantileTable::new(
            kind,
            "ou".into(),
            vec![0.01, 0.05, 0.1],
            vec![3.0, 2.0, 1.5],
            10_000,
            1,
            String::new(),
        )
        .unwrap()
    }

    fn report(value: f64) -> TestReport {
        TestReport {
            kind: StatisticKind::DeltaLte,
            model_ref: "ou".into(),
            statistic_value: value,
            theta_hat: 0.0,
            horizon: 100.0,
            tail_bound: 0.0,
            threshold: None,
            epsilon: None,
            reject: None,
        }
    }

    #[test]
    fn perfect_fit_gives_zero() {
        let law = law();
        for kind in StatisticKind::ALL {
            let fit = FittedCurve::perfect(kind, &law, 1.7);
            let r = statistic_from_fit(kind, &fit, &law, 200.0).unwrap();
            assert_eq!(r.statistic_value, 0.0, "{kind}");
        }
    }

    #[test]
    fn decision_rules() {
        let t = table(LimitKind::Delta);
        assert_eq!(decide(&report(0.0), &t, 0.05).unwrap().reject, Some(false));
        // Equality does not reject.
        assert_eq!(decide(&report(2.0), &t, 0.05).unwrap().reject, Some(false));
        assert_eq!(
            decide(&report(2.0 + 1e-12), &t, 0.05).unwrap().reject,
            Some(true)
        );
        // Nested: rejection at a smaller ε implies rejection at a larger one.
        for v in [1.0, 1.6, 2.5, 3.5] {
            let r = |e| decide(&report(v), &t, e).unwrap().reject.unwrap();
            assert!(!r(0.01) || r(0.05));
            assert!(!r(0.05) || r(0.1));
        }
        let filled = decide(&report(2.5), &t, 0.05).unwrap();
        assert_eq!(filled.threshold, Some(2.0));
        assert_eq!(filled.epsilon, Some(0.05));
    }

    #[test]
    fn decision_validation() {
        let t = table(LimitKind::Delta);
        assert!(matches!(
            decide(&report(1.0), &t, 0.2),
            Err(Error::UnsupportedEpsilon(_))
        ));
        let wrong_kind = table(LimitKind::BigDelta);
        assert!(matches!(
            decide(&report(1.0), &wrong_kind, 0.05),
            Err(Error::KindMismatch { .. })
        ));
        let mut r = report(1.0);
        r.model_ref = "cubic".into();
        assert!(matches!(
            decide(&r, &t, 0.05),
            Err(Error::ModelMismatch { .. })
        ));
        r = report(1.0);
        r.kind = StatisticKind::KsLte;
        assert!(decide(&r, &t, 0.05).is_err());
    }

    #[test]
    fn statistics_are_nonnegative_and_shift_invariant() {
        let law = law();
        let path = simulate_path(
            &ou(),
            1.0,
            TimeGrid::new(50.0, 0.01).unwrap(),
            Noise::Seeded(3),
            InitRule::Stationary(&law),
        )
        .unwrap();
        let all = compute_statistics(&path, &ou(), &law, &StatisticKind::ALL).unwrap();
        for r in &all {
            assert!(r.statistic_value >= 0.0);
            assert!(
                r.tail_bound >= 0.0 && r.tail_bound < 1e-6,
                "{} {}",
                r.kind,
                r.tail_bound
            );
        }
        let c = 1.5;
        let shifted =
            compute_statistics(&path.shifted(c), &ou(), &law, &[StatisticKind::DeltaEdf]).unwrap();
        let d = (shifted[0].statistic_value - all[1].statistic_value).abs();
        assert!(d < 1e-6 * (1.0 + all[1].statistic_value), "{d}");
    }

    #[test]
    fn short_paths_are_rejected() {
        let law = law();
        let path = simulate_path(
            &ou(),
            0.0,
            TimeGrid::new(5.0, 0.01).unwrap(),
            Noise::Seeded(1),
            InitRule::Fixed(0.0),
        )
        .unwrap();
        assert!(cvm_lte(&path, &ou(), &law).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StatisticKind::ALL {
            assert_eq!(k.as_str().parse::<StatisticKind>().unwrap(), k);
        }
        assert!("delta".parse::<StatisticKind>().is_err());
    }

    #[test]
    fn json_has_expected_keys() {
        let t = table(LimitKind::Delta);
        let r = decide(&report(2.5), &t, 0.05).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["kind"], "delta_lte");
        assert_eq!(v["value"], 2.5);
        assert_eq!(v["threshold"], 2.0);
        assert_eq!(v["reject"], true);
        assert_eq!(v.as_object().unwrap().len(), 6);
    }
}
