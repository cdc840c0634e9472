//! Size, power and figure-reproduction experiments driven by one TOML file.
//!
//! Every replicate is keyed by `(scenario seed, replicate index)` and every
//! scenario seed by `(base seed, scenario label)`, so a study re-run with
//! the same config writes byte-identical CSV files regardless of thread
//! count. Wall-clock time goes to the JSON summary only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gof::{compute_statistics, StatisticKind};
use crate::law::InvariantLaw;
use crate::limit::{
    estimate_quantiles, simulate_limit, LimitGrid, LimitKind, LimitSampleBatch, QuantileTable,
};
use crate::model::{ShiftDriftModel, DEFAULT_THETA_INTERVAL};
use crate::rng::derive_seed;
use crate::sim::{simulate_path, InitRule, Noise, Path, TimeGrid};

fn default_theta0() -> Vec<f64> {
    vec![0.0]
}
fn default_horizons() -> Vec<f64> {
    vec![200.0]
}
fn default_dt() -> f64 {
    0.01
}
fn default_replications() -> usize {
    500
}
fn default_epsilons() -> Vec<f64> {
    vec![0.05]
}
fn default_seed() -> u64 {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_statistics() -> Vec<StatisticKind> {
    vec![StatisticKind::DeltaLte, StatisticKind::DeltaEdf]
}
fn default_n_mc() -> usize {
    100_000
}

/// A drift for the power study: a built-in family centred at `theta`, or
/// `linear` with `S(x) = slope·(x − center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternativeSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl AlternativeSpec {
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.family.clone();
        }
        let p: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}({})", self.family, p.join(","))
    }

    /// The drift as a shift model plus the centre it is evaluated at.
    pub fn resolve(&self) -> Result<(ShiftDriftModel, f64)> {
        let mut params = self.params.clone();
        if self.family == "linear" {
            let slope = params
                .remove("slope")
                .ok_or_else(|| Error::Config("linear alternative needs a slope".into()))?;
            let center = params.remove("center").unwrap_or(0.0);
            if let Some(k) = params.keys().next() {
                return Err(Error::Config(format!(
                    "linear alternative has no parameter {k:?}"
                )));
            }
            if !(slope < 0.0) {
                return Err(Error::Config(format!(
                    "linear slope must be negative, got {slope}"
                )));
            }
            let model = ShiftDriftModel::new(
                "linear",
                Arc::new(move |x| slope * x),
                Arc::new(move |_| slope),
                DEFAULT_THETA_INTERVAL,
                BTreeMap::from([("slope".to_string(), slope)]),
            )?;
            return Ok((model, center));
        }
        let theta = params.remove("theta").unwrap_or(0.0);
        Ok((
            ShiftDriftModel::from_registry(&self.family, &params)?,
            theta,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Pre-computed tables by statistic kind; the rest are simulated and
    /// cached under `out_dir/tables`.
    #[serde(default)]
    pub tables: BTreeMap<StatisticKind, PathBuf>,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            n_mc: default_n_mc(),
            seed: default_seed(),
            tables: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default)]
    pub model_params: BTreeMap<String, f64>,
    #[serde(default = "default_theta0")]
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub alternatives: Vec<AlternativeSpec>,
    /// Observation horizons T.
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<StatisticKind>,
    #[serde(default)]
    pub limits: LimitsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("epsilons must be non-empty and inside (0, 1)".into());
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0)) {
            return bad("horizons must be non-empty and positive".into());
        }
        if self.statistics.is_empty() {
            return bad("no statistics requested".into());
        }
        if let Some(k) = self.statistics.iter().find(|k| k.limit_kind().is_none()) {
            return bad(format!(
                "{k} has no limit law, so it cannot be used in a study"
            ));
        }
        for a in &self.alternatives {
            a.resolve()?;
        }
        self.model()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ShiftDriftModel> {
        ShiftDriftModel::from_registry(&self.model, &self.model_params)
    }
}

/// Derive a scenario seed from its label; distinct labels give distinct
/// seeds (checked per study).
pub fn scenario_seed(base: u64, label: &str) -> u64 {
    let h = crc32fast::hash(label.as_bytes()) as u64;
    derive_seed(base, h << 32 | label.len() as u64)
}

/// Quantile tables for the requested kinds: loaded from the config, from
/// the cache in `out_dir/tables`, or simulated and cached.
pub fn prepare_tables(
    config: &ExperimentConfig,
    law: &InvariantLaw,
) -> Result<BTreeMap<StatisticKind, QuantileTable>> {
    let cache = config.out_dir.join("tables");
    let mut out = BTreeMap::new();
    for &kind in &config.statistics {
        let limit = kind.limit_kind().expect("validated");
        let table = if let Some(p) = config.limits.tables.get(&kind) {
            QuantileTable::load(p)?
        } else {
            let file = cache.join(format!("{}_{}.table", limit, law.model_ref()));
            let cached = QuantileTable::load(&file).ok().filter(|t| {
                t.n_mc == config.limits.n_mc
                    && t.seed == config.limits.seed
                    && config.epsilons.iter().all(|e| t.threshold(*e).is_ok())
            });
            match cached {
                Some(t) => t,
                None => {
                    let batch = simulate_limit(
                        limit,
                        law,
                        config.limits.n_mc,
                        config.limits.seed,
                        LimitGrid::for_law(law),
                    )?;
                    let t = estimate_quantiles(&batch, &config.epsilons)?;
                    std::fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
                    t.save(&file)?;
                    t
                }
            }
        };
        if table.kind != limit {
            return Err(Error::KindMismatch {
                statistic: kind.to_string(),
                table: table.kind.to_string(),
            });
        }
        if table.model_ref != law.model_ref() {
            return Err(Error::ModelMismatch {
                statistic: law.model_ref(),
                table: table.model_ref.clone(),
            });
        }
        out.insert(kind, table);
    }
    Ok(out)
}

/// Rejection count at one level with a 95% normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub epsilon: f64,
    pub rejections: usize,
    pub n: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    pub fn new(epsilon: f64, rejections: usize, n: usize) -> Self {
        let rate = rejections as f64 / n as f64;
        // Keep the width positive at 0 and 1.
        let p = rate.clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64);
        let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
        Self {
            epsilon,
            rejections,
            n,
            rate,
            ci_low: (rate - half).max(0.0),
            ci_high: (rate + half).min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub label: String,
    pub kind: StatisticKind,
    pub theta0: Option<f64>,
    pub alternative: Option<String>,
    pub horizon: f64,
    pub seed: u64,
    /// Statistic values in replicate order.
    pub values: Vec<f64>,
    pub rates: Vec<RateEstimate>,
}

impl ScenarioResult {
    pub fn rate(&self, epsilon: f64) -> Option<f64> {
        self.rates
            .iter()
            .find(|r| (r.epsilon - epsilon).abs() < 1e-12)
            .map(|r| r.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub model_ref: String,
    pub scenarios: Vec<ScenarioResult>,
    pub runtime_seconds: f64,
}

impl StudyReport {
    pub fn find(
        &self,
        kind: StatisticKind,
        pred: impl Fn(&ScenarioResult) -> bool,
    ) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|s| s.kind == kind && pred(s))
    }

    pub fn rates_csv(&self) -> String {
        let mut s =
            String::from("scenario,kind,horizon,epsilon,n,rejections,rate,ci_low,ci_high\n");
        for sc in &self.scenarios {
            for r in &sc.rates {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    sc.label,
                    sc.kind,
                    sc.horizon,
                    r.epsilon,
                    r.n,
                    r.rejections,
                    r.rate,
                    r.ci_low,
                    r.ci_high
                );
            }
        }
        s
    }

    pub fn statistics_csv(&self) -> String {
        let mut s = String::from("scenario,kind,replicate,value\n");
        for sc in &self.scenarios {
            for (i, v) in sc.values.iter().enumerate() {
                let _ = writeln!(s, "{},{},{i},{v:e}", sc.label, sc.kind);
            }
        }
        s
    }

    /// 30-bin histograms on `[0, max]`, one range per kind so scenarios of
    /// the same kind are comparable.
    pub fn histograms_csv(&self) -> String {
        const BINS: usize = 30;
        let mut max_by_kind: BTreeMap<StatisticKind, f64> = BTreeMap::new();
        for sc in &self.scenarios {
            let m = sc.values.iter().copied().fold(0.0, f64::max);
            let e = max_by_kind.entry(sc.kind).or_insert(0.0);
            *e = e.max(m);
        }
        let mut s = String::from("scenario,kind,bin_low,bin_high,count\n");
        for sc in &self.scenarios {
            let top = max_by_kind[&sc.kind].max(f64::MIN_POSITIVE);
            let width = top / BINS as f64;
            let mut counts = [0usize; BINS];
            for v in &sc.values {
                counts[((v / width) as usize).min(BINS - 1)] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{c}",
                    sc.label,
                    sc.kind,
                    b as f64 * width,
                    (b + 1) as f64 * width
                );
            }
        }
        s
    }

    /// Write `<study>_{rates,statistics,histograms}.csv` and
    /// `<study>_report.json` into `dir`.
    pub fn write(&self, dir: &FsPath) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = serde_json::json!({
            "study": self.study,
            "model": self.model_ref,
            "runtime_seconds": self.runtime_seconds,
            "scenarios": self.scenarios.iter().map(|s| serde_json::json!({
                "label": s.label,
                "kind": s.kind,
                "horizon": s.horizon,
                "seed": s.seed,
                "rates": s.rates,
            })).collect::<Vec<_>>(),
        });
        let files = [
            ("rates.csv", self.rates_csv()),
            ("statistics.csv", self.statistics_csv()),
            ("histograms.csv", self.histograms_csv()),
            (
                "report.json",
                serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?
                    + "\n",
            ),
        ];
        files
            .into_iter()
            .map(|(name, body)| {
                let p = dir.join(format!("{}_{name}", self.study));
                std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
                Ok(p)
            })
            .collect()
    }
}

/// One set of replicates sharing a data-generating process.
struct Scenario {
    label: String,
    theta0: Option<f64>,
    alternative: Option<String>,
    horizon: f64,
    seed: u64,
}

fn run_scenarios<'a>(
    study: &str,
    config: &ExperimentConfig,
    model: &ShiftDriftModel,
    law: &InvariantLaw,
    tables: &BTreeMap<StatisticKind, QuantileTable>,
    scenarios: Vec<Scenario>,
    simulate: impl Fn(&Scenario, u64) -> Result<Path> + Sync + 'a,
) -> Result<StudyReport> {
    let started = Instant::now();
    let seeds: BTreeSet<u64> = scenarios.iter().map(|s| s.seed).collect();
    if seeds.len() != scenarios.len() {
        return Err(Error::Config(
            "two scenarios share a seed; make their labels distinct".into(),
        ));
    }
    for kind in &config.statistics {
        if !tables.contains_key(kind) {
            return Err(Error::Config(format!("no quantile table for {kind}")));
        }
    }
    let kinds = &config.statistics;
    let mut results = Vec::new();
    for sc in &scenarios {
        let per_rep: Vec<Vec<f64>> = (0..config.replications as u64)
            .into_par_iter()
            .map(|r| {
                let path = simulate(sc, r)?;
                let reports = compute_statistics(&path, model, law, kinds)?;
                Ok(reports.iter().map(|rep| rep.statistic_value).collect())
            })
            .collect::<Result<_>>()?;
        for (ki, &kind) in kinds.iter().enumerate() {
            let values: Vec<f64> = per_rep.iter().map(|v| v[ki]).collect();
            let table = &tables[&kind];
            let rates = config
                .epsilons
                .iter()
                .map(|&eps| {
                    let threshold = table.threshold(eps)?;
                    let rejections = values.iter().filter(|&&v| v > threshold).count();
                    Ok(RateEstimate::new(eps, rejections, values.len()))
                })
                .collect::<Result<_>>()?;
            results.push(ScenarioResult {
                label: sc.label.clone(),
                kind,
                theta0: sc.theta0,
                alternative: sc.alternative.clone(),
                horizon: sc.horizon,
                seed: sc.seed,
                values,
                rates,
            });
        }
    }
    Ok(StudyReport {
        study: study.to_string(),
        model_ref: law.model_ref(),
        scenarios: results,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Rejection rates under the null, for each `θ0` and horizon.
pub fn run_size_study(
    config: &ExperimentConfig,
    law: &InvariantLaw,
    tables: &BTreeMap<StatisticKind, QuantileTable>,
) -> Result<StudyReport> {
    config.validate()?;
    let model = config.model()?;
    let mut scenarios = Vec::new();
    for &t in &config.horizons {
        for &theta0 in &config.theta0 {
            let label = format!("size:theta0={theta0}:T={t}");
            scenarios.push(Scenario {
                seed: scenario_seed(config.seed, &label),
                label,
                theta0: Some(theta0),
                alternative: None,
                horizon: t,
            });
        }
    }
    let dt = config.dt;
    run_scenarios("size", config, &model, law, tables, scenarios, |sc, r| {
        simulate_path(
            &model,
            sc.theta0.expect("size scenario"),
            TimeGrid::new(sc.horizon, dt)?,
            Noise::Seeded(derive_seed(sc.seed, r)),
            InitRule::Stationary(law),
        )
    })
}

/// Rejection rates under each alternative drift and horizon. Paths start
/// from the alternative's own stationary law; its centre plays the role
/// of the true shift.
pub fn run_power_study(
    config: &ExperimentConfig,
    law: &InvariantLaw,
    tables: &BTreeMap<StatisticKind, QuantileTable>,
) -> Result<StudyReport> {
    config.validate()?;
    if config.alternatives.is_empty() {
        return Err(Error::Config(
            "power study needs at least one alternative".into(),
        ));
    }
    let model = config.model()?;
    let mut resolved = BTreeMap::new();
    let mut scenarios = Vec::new();
    for alt in &config.alternatives {
        let (alt_model, center) = alt.resolve()?;
        let alt_law = InvariantLaw::build_default(&alt_model)?;
        resolved.insert(alt.label(), (alt_model, center, alt_law));
        for &t in &config.horizons {
            let label = format!("power:{}:T={t}", alt.label());
            scenarios.push(Scenario {
                seed: scenario_seed(config.seed, &label),
                label,
                theta0: None,
                alternative: Some(alt.label()),
                horizon: t,
            });
        }
    }
    let dt = config.dt;
    run_scenarios("power", config, &model, law, tables, scenarios, |sc, r| {
        let (m, center, l) = &resolved[sc.alternative.as_ref().expect("power scenario")];
        simulate_path(
            m,
            *center,
            TimeGrid::new(sc.horizon, dt)?,
            Noise::Seeded(derive_seed(sc.seed, r)),
            InitRule::Stationary(l),
        )
    })
}

/// Gaussian kernel density estimate on `grid`, reflected at 0 for samples
/// supported on `[0, ∞)`, with Silverman's bandwidth.
pub fn kde_reflected(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = sorted[(0.75 * (n - 1.0)) as usize] - sorted[(0.25 * (n - 1.0)) as usize];
    let spread = sd.min(iqr / 1.34).max(f64::MIN_POSITIVE);
    let h = 0.9 * spread * n.powf(-0.2);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.par_iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&v| v < x - 8.0 * h);
            let hi = sorted.partition_point(|&v| v <= x + 8.0 * h);
            let direct: f64 = sorted[lo..hi]
                .iter()
                .map(|v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum();
            let mirror_hi = sorted.partition_point(|&v| v <= -x + 8.0 * h);
            let mirror: f64 = sorted[..mirror_hi]
                .iter()
                .map(|v| (-0.5 * ((x + v) / h).powi(2)).exp())
                .sum();
            if x < 0.0 {
                0.0
            } else {
                norm * (direct + mirror)
            }
        })
        .collect()
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Data behind the OU figures.
#[derive(Debug, Clone)]
pub struct FigureData {
    pub density_grid: Vec<f64>,
    pub delta_density: Vec<f64>,
    pub big_delta_density: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub d_eps: Vec<f64>,
    pub c_eps: Vec<f64>,
    pub files: Vec<PathBuf>,
}

/// ε = 0.01, 0.02, …, 0.50.
pub fn figure_epsilons() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 100.0).collect()
}

/// Simulate (or load cached) δ and Δ batches for the OU law and emit the
/// density and threshold-curve CSVs.
pub fn reproduce_ou_figures(config: &ExperimentConfig) -> Result<FigureData> {
    let model = ShiftDriftModel::ou(1.0)?;
    let law = InvariantLaw::build_default(&model)?;
    let grid = LimitGrid::for_law(&law);
    let dir = config.out_dir.join("figures");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let batch = |kind: LimitKind| -> Result<LimitSampleBatch> {
        let file = dir.join(format!("{kind}_samples.txt"));
        if let Ok(b) = LimitSampleBatch::load(&file) {
            if b.n_mc() == config.limits.n_mc && b.seed == config.limits.seed && b.grid == grid {
                return Ok(b);
            }
        }
        let b = simulate_limit(kind, &law, config.limits.n_mc, config.limits.seed, grid)?;
        b.save(&file)?;
        Ok(b)
    };
    let delta = batch(LimitKind::Delta)?;
    let big_delta = batch(LimitKind::BigDelta)?;

    let eps = figure_epsilons();
    let d = estimate_quantiles(&delta, &eps)?;
    let c = estimate_quantiles(&big_delta, &eps)?;

    let upper = {
        let mut s = delta.samples.clone();
        s.extend_from_slice(&big_delta.samples);
        s.sort_by(f64::total_cmp);
        s[(0.999 * (s.len() - 1) as f64) as usize] * 1.2
    };
    let density_grid: Vec<f64> = (0..=400).map(|i| upper * i as f64 / 400.0).collect();
    let delta_density = kde_reflected(&delta.samples, &density_grid);
    let big_delta_density = kde_reflected(&big_delta.samples, &density_grid);

    let mut files = Vec::new();
    for (name, dens) in [("delta", &delta_density), ("Delta", &big_delta_density)] {
        let mut s = String::from("bin_center,density\n");
        for (x, v) in density_grid.iter().zip(dens.iter()) {
            let _ = writeln!(s, "{x},{v}");
        }
        let p = dir.join(format!("density_{name}.csv"));
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    let mut s = String::from("epsilon,d_eps,c_eps\n");
    for ((e, dv), cv) in eps.iter().zip(&d.thresholds).zip(&c.thresholds) {
        let _ = writeln!(s, "{e},{dv},{cv}");
    }
    let p = dir.join("thresholds.csv");
    std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
    files.push(p);

    Ok(FigureData {
        density_grid,
        delta_density,
        big_delta_density,
        epsilons: eps,
        d_eps: d.thresholds,
        c_eps: c.thresholds,
        files,
    })
}
