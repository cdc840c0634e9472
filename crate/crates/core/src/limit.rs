//! Monte Carlo simulation of the parameter-free limit laws and their
//! quantile tables.
//!
//! With a two-sided Wiener process `W` on the y-axis and the shorthand
//!
//! ```text
//! z_M(x) = ∫ M(y, x) √f(y) dW(y),   z_H(x) = ∫ H(y, x) √f(y) dW(y),
//! Λ      = ∫ S*'(y) √f(y) dW(y),
//! ```
//!
//! the limits of the local-time and EDF fluctuations are `η = −z_M` and
//! `η^F = −z_H`, the MLE fluctuation is `û = −Λ / I`, and the MDE
//! fluctuation is `u* = ∫ z_H f dx / ∫ f² dx`. Then
//!
//! ```text
//! δ = ∫ (η + û f')² dx = ∫ (z_M + Λ f' / I)² dx
//! Δ = ∫ (η^F + û f)² dx = ∫ (z_H + Λ f / I)² dx
//! μ = ∫ (η + u* f')² dx
//! ```
//!
//! Integration over y uses cell midpoints of a grid that has 0 as a node;
//! increments right of 0 and left of 0 come from independent substreams.
//! Because `M` and `H` split into a prefix and a suffix sum over cells,
//! one replicate costs O(grid size) rather than O(grid size²).

use std::fmt;
use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{trapezoid, UniformGrid};
use crate::law::InvariantLaw;
use crate::rng::CounterRng;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LimitKind {
    /// `δ`, the limit of the local-time statistic.
    #[serde(rename = "delta")]
    Delta,
    /// `Δ`, the limit of the EDF statistic.
    #[serde(rename = "Delta")]
    BigDelta,
    /// `μ`, the limit of the kernel / MDE statistic.
    #[serde(rename = "mu")]
    Mu,
}

impl LimitKind {
    pub const ALL: [LimitKind; 3] = [LimitKind::Delta, LimitKind::BigDelta, LimitKind::Mu];

    pub fn as_str(&self) -> &'static str {
        match self {
            LimitKind::Delta => "delta",
            LimitKind::BigDelta => "Delta",
            LimitKind::Mu => "mu",
        }
    }
}

impl fmt::Display for LimitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LimitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" | "delta_lte" => Ok(LimitKind::Delta),
            "Delta" | "delta_edf" => Ok(LimitKind::BigDelta),
            "mu" | "mu_kernel" => Ok(LimitKind::Mu),
            _ => Err(Error::Config(format!("unknown limit kind {s:?}"))),
        }
    }
}

/// Integration grid shared by y and x: nodes `k·h` on `[lo, hi]`.
/// Each y-cell's increment is the sum of `substeps` finer increments, so
/// a grid with `(h, 2)` and one with `(h/2, 1)` see the same Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitGrid {
    pub h: f64,
    pub lo: f64,
    pub hi: f64,
    pub substeps: u32,
}

impl LimitGrid {
    /// The law's effective support with `h = min(1e-2, L/2000)`.
    pub fn for_law(law: &InvariantLaw) -> Self {
        let half_width = law.grid().end();
        let h = (1e-2f64).min(half_width / 2000.0);
        let (lo, hi) = law.effective_support();
        Self {
            h,
            lo,
            hi,
            substeps: 1,
        }
    }

    /// Half the spacing over the same interval, sharing the Brownian path
    /// with `self` (which must have an even `substeps` or be re-expressed).
    pub fn halved(&self) -> (Self, Self) {
        let coarse = Self {
            substeps: self.substeps * 2,
            ..*self
        };
        let fine = Self {
            h: self.h / 2.0,
            ..*self
        };
        (coarse, fine)
    }

    fn nodes(&self) -> Result<UniformGrid> {
        if !(self.h > 0.0) || self.substeps == 0 {
            return Err(Error::Domain(format!("invalid limit grid {self:?}")));
        }
        if !(self.lo < 0.0 && self.hi > 0.0) {
            return Err(Error::Domain(format!(
                "limit grid [{}, {}] must contain 0",
                self.lo, self.hi
            )));
        }
        let k0 = (self.lo / self.h).ceil();
        let k1 = (self.hi / self.h).floor();
        UniformGrid::new(k0 * self.h, self.h, (k1 - k0) as usize + 1)
    }

    pub fn describe(&self) -> String {
        format!(
            "h={};lo={};hi={};substeps={}",
            self.h, self.lo, self.hi, self.substeps
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut g = LimitGrid {
            h: f64::NAN,
            lo: f64::NAN,
            hi: f64::NAN,
            substeps: 1,
        };
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad grid field {part:?}")))?;
            let bad = || Error::Format(format!("bad grid value {part:?}"));
            match k {
                "h" => g.h = v.parse().map_err(|_| bad())?,
                "lo" => g.lo = v.parse().map_err(|_| bad())?,
                "hi" => g.hi = v.parse().map_err(|_| bad())?,
                "substeps" => g.substeps = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        g.nodes()?;
        Ok(g)
    }
}

/// Kernel `Φ(y, x)` of the inner Wiener integral: for `δ`,
/// `M(y,x)√f(y) + S*'(y)√f(y) f'(x) / I`; for `Δ`,
/// `H(y,x)√f(y) + S*'(y)√f(y) f(x) / I`. The inner integral
/// `∫ Φ(y, x) dW(y)` equals `−(η + û·∂)(x)` where `∂` is `f'` or `f`.
pub fn phi(kind: LimitKind, law: &InvariantLaw, y: f64, x: f64) -> Result<f64> {
    let sqrt_fy = law.density_at(y, 0.0).sqrt();
    let lam = law.model().drift_star_deriv(y) * sqrt_fy / law.fisher_information();
    match kind {
        LimitKind::Delta => Ok(law.kernel_m(y, x)? * sqrt_fy + lam * law.density_deriv_at(x)),
        LimitKind::BigDelta => Ok(law.kernel_h(y, x)? * sqrt_fy + lam * law.density_at(x, 0.0)),
        LimitKind::Mu => Err(Error::Domain(
            "mu has no pointwise kernel: its estimator term is a functional of the whole path"
                .into(),
        )),
    }
}

/// Asymptotic variance `R(0)` of the minimum distance estimator,
/// `∫ (∫ H(y, x) f(x) dx)² f(y) dy / (∫ f² dx)²`, by direct quadrature on
/// the grid's nodes.
pub fn mde_asymptotic_variance(law: &InvariantLaw, grid: &LimitGrid) -> Result<f64> {
    let nodes = grid.nodes()?;
    let xs = nodes.points();
    let fx: Vec<f64> = xs.iter().map(|&x| law.density_at(x, 0.0)).collect();
    let f2: Vec<f64> = fx.iter().map(|f| f * f).collect();
    let norm = trapezoid(nodes.step, &f2);
    let outer = xs
        .iter()
        .map(|&y| {
            let inner: Vec<f64> = xs
                .iter()
                .zip(&fx)
                .map(|(&x, &f)| Ok(law.kernel_h(y, x)? * f))
                .collect::<Result<_>>()?;
            let c = trapezoid(nodes.step, &inner);
            Ok(c * c * law.density_at(y, 0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(nodes.step, &outer) / (norm * norm))
}

/// Per-replicate random fields, exposed for oracle checks.
#[derive(Debug, Clone)]
pub struct ReplicateFields {
    /// `η(x) = −∫ M(y,x) √f(y) dW(y)` on the x-nodes.
    pub eta: Vec<f64>,
    /// `η^F(x) = −∫ H(y,x) √f(y) dW(y)`.
    pub eta_f: Vec<f64>,
    /// `Λ = ∫ S*'(y) √f(y) dW(y)`.
    pub lambda: f64,
    /// `u* = −∫ η^F f dx / ∫ f² dx`.
    pub u_star: f64,
}

/// Precomputed tables for one `(law, grid)` pair.
#[derive(Debug, Clone)]
pub struct LimitSimulator {
    grid: LimitGrid,
    nodes: UniformGrid,
    /// Index of the node at 0.
    origin: usize,
    fisher: f64,
    // x-node tables
    f: Vec<f64>,
    cdf: Vec<f64>,
    sf: Vec<f64>,
    f_prime: Vec<f64>,
    f_sq_integral: f64,
    // y-cell tables (cell j spans nodes j, j+1)
    upper: Vec<f64>,
    lower: Vec<f64>,
    score: Vec<f64>,
    model_ref: String,
}

impl LimitSimulator {
    pub fn new(law: &InvariantLaw, grid: LimitGrid) -> Result<Self> {
        let nodes = grid.nodes()?;
        let (a, b) = law.effective_support();
        if nodes.start < a - 1e-9 || nodes.end() > b + 1e-9 {
            return Err(Error::Domain(format!(
                "limit grid [{}, {}] leaves the effective support [{a}, {b}]",
                nodes.start,
                nodes.end()
            )));
        }
        let origin = (-nodes.start / nodes.step).round() as usize;
        let xs = nodes.points();
        let f: Vec<f64> = xs.iter().map(|&x| law.density_at(x, 0.0)).collect();
        let cdf: Vec<f64> = xs.iter().map(|&x| law.cdf_at(x, 0.0)).collect();
        let sf: Vec<f64> = xs.iter().map(|&x| law.sf_at(x, 0.0)).collect();
        let f_prime: Vec<f64> = xs.iter().map(|&x| law.density_deriv_at(x)).collect();
        let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
        let f_sq_integral = trapezoid(nodes.step, &f2);

        let cells = nodes.len - 1;
        let mut upper = Vec::with_capacity(cells);
        let mut lower = Vec::with_capacity(cells);
        let mut score = Vec::with_capacity(cells);
        for j in 0..cells {
            let y = nodes.at(j) + 0.5 * nodes.step;
            let fy = law.density_at(y, 0.0);
            if !(fy >= 1e-300) {
                return Err(Error::TailTruncation { y, density: fy });
            }
            let root = fy.sqrt();
            upper.push(law.sf_at(y, 0.0) / root);
            lower.push(law.cdf_at(y, 0.0) / root);
            score.push(law.model().drift_star_deriv(y) * root);
        }
        Ok(Self {
            grid,
            nodes,
            origin,
            fisher: law.fisher_information(),
            f,
            cdf,
            sf,
            f_prime,
            f_sq_integral,
            upper,
            lower,
            score,
            model_ref: law.model_ref(),
        })
    }

    pub fn grid(&self) -> &LimitGrid {
        &self.grid
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        self.nodes.points()
    }

    /// Cell midpoints where the y-integrands are evaluated.
    pub fn y_points(&self) -> Vec<f64> {
        (0..self.nodes.len - 1)
            .map(|j| self.nodes.at(j) + 0.5 * self.nodes.step)
            .collect()
    }

    /// Index of the x-node nearest to `x`.
    pub fn node_index(&self, x: f64) -> usize {
        (((x - self.nodes.start) / self.nodes.step).round().max(0.0) as usize)
            .min(self.nodes.len - 1)
    }

    /// Brownian increments over the y-cells for replicate `r`.
    pub fn increments(&self, seed: u64, replicate: u64) -> Vec<f64> {
        let rep = CounterRng::new(seed).substream(replicate);
        let right = rep.substream(0);
        let left = rep.substream(1);
        let m = self.grid.substeps as u64;
        let scale = (self.nodes.step / m as f64).sqrt();
        (0..self.nodes.len - 1)
            .map(|j| {
                let (stream, k) = if j >= self.origin {
                    (&right, (j - self.origin) as u64)
                } else {
                    (&left, (self.origin - 1 - j) as u64)
                };
                (0..m).map(|s| stream.normal(k * m + s)).sum::<f64>() * scale
            })
            .collect()
    }

    /// `(z_M, z_H, Λ)` for the given increments.
    fn integrals(&self, dw: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.nodes.len;
        // suffix[i] = Σ_{j ≥ i} upper_j dW_j  (cells right of node i)
        let mut suffix = vec![0.0; n];
        for j in (0..n - 1).rev() {
            suffix[j] = suffix[j + 1] + self.upper[j] * dw[j];
        }
        let mut prefix = 0.0; // Σ_{j < i} lower_j dW_j  (cells left of node i)
        let mut z_m = Vec::with_capacity(n);
        let mut z_h = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                prefix += self.lower[i - 1] * dw[i - 1];
            }
            z_m.push(2.0 * self.f[i] * (suffix[i] - prefix));
            z_h.push(2.0 * (self.sf[i] * prefix + self.cdf[i] * suffix[i]));
        }
        let lambda = self.score.iter().zip(dw).map(|(s, w)| s * w).sum();
        (z_m, z_h, lambda)
    }

    pub fn fields(&self, seed: u64, replicate: u64) -> ReplicateFields {
        let dw = self.increments(seed, replicate);
        let (z_m, z_h, lambda) = self.integrals(&dw);
        let weighted: Vec<f64> = z_h.iter().zip(&self.f).map(|(z, f)| z * f).collect();
        ReplicateFields {
            eta: z_m.iter().map(|v| -v).collect(),
            eta_f: z_h.iter().map(|v| -v).collect(),
            lambda,
            u_star: trapezoid(self.nodes.step, &weighted) / self.f_sq_integral,
        }
    }

    /// The integrand `ζ(x)` whose squared integral is the sample.
    pub fn zeta(&self, kind: LimitKind, fields: &ReplicateFields) -> Vec<f64> {
        let u_hat = -fields.lambda / self.fisher;
        match kind {
            LimitKind::Delta => fields
                .eta
                .iter()
                .zip(&self.f_prime)
                .map(|(e, d)| e + u_hat * d)
                .collect(),
            LimitKind::BigDelta => fields
                .eta_f
                .iter()
                .zip(&self.f)
                .map(|(e, f)| e + u_hat * f)
                .collect(),
            LimitKind::Mu => fields
                .eta
                .iter()
                .zip(&self.f_prime)
                .map(|(e, d)| e + fields.u_star * d)
                .collect(),
        }
    }

    pub fn sample(&self, kind: LimitKind, seed: u64, replicate: u64) -> f64 {
        let zeta = self.zeta(kind, &self.fields(seed, replicate));
        let sq: Vec<f64> = zeta.iter().map(|z| z * z).collect();
        trapezoid(self.nodes.step, &sq)
    }

    /// Samples for replicates `range`, computed in parallel, in index order.
    pub fn samples(
        &self,
        kind: LimitKind,
        seed: u64,
        range: std::ops::Range<u64>,
    ) -> Result<Vec<f64>> {
        let out: Vec<f64> = range
            .clone()
            .into_par_iter()
            .map(|r| self.sample(kind, seed, r))
            .collect();
        if let Some(i) = out.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite(format!(
                "limit sample at replicate {}",
                range.start + i as u64
            )));
        }
        Ok(out)
    }

    /// Inner integrals `∫ Φ(y, x) dW(y)` at the requested x-nodes computed
    /// directly from [`phi`] (no prefix sums). Used to cross-check the fast
    /// path.
    pub fn dense_inner(
        &self,
        kind: LimitKind,
        law: &InvariantLaw,
        seed: u64,
        replicate: u64,
        xs: &[f64],
    ) -> Result<Vec<f64>> {
        let dw = self.increments(seed, replicate);
        let ys = self.y_points();
        xs.iter()
            .map(|&x| {
                ys.iter()
                    .zip(&dw)
                    .map(|(&y, w)| Ok(phi(kind, law, y, x)? * w))
                    .sum::<Result<f64>>()
            })
            .collect()
    }

    pub fn model_ref(&self) -> &str {
        &self.model_ref
    }
}

/// Samples of one limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSampleBatch {
    pub kind: LimitKind,
    pub model_ref: String,
    pub grid: LimitGrid,
    pub seed: u64,
    /// Index of the first replicate in `samples`.
    pub first_replicate: u64,
    pub samples: Vec<f64>,
}

impl LimitSampleBatch {
    pub fn n_mc(&self) -> usize {
        self.samples.len()
    }

    /// Concatenate batches of consecutive replicate ranges. Input order does
    /// not matter.
    pub fn merge(mut parts: Vec<LimitSampleBatch>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Domain("nothing to merge".into()));
        }
        parts.sort_by_key(|b| b.first_replicate);
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("non-empty");
        for b in it {
            if b.kind != acc.kind
                || b.model_ref != acc.model_ref
                || b.grid != acc.grid
                || b.seed != acc.seed
            {
                return Err(Error::Domain(
                    "batches differ in kind, model, grid or seed".into(),
                ));
            }
            if b.first_replicate != acc.first_replicate + acc.samples.len() as u64 {
                return Err(Error::Domain(format!(
                    "replicate ranges are not contiguous at {}",
                    b.first_replicate
                )));
            }
            acc.samples.extend(b.samples);
        }
        Ok(acc)
    }

    pub fn to_text(&self) -> String {
        let mut body = String::new();
        let _ = writeln!(body, "version={FORMAT_VERSION}");
        let _ = writeln!(body, "format=samples");
        write_common_header(
            &mut body,
            self.kind,
            &self.model_ref,
            self.samples.len(),
            self.seed,
            &self.grid.describe(),
        );
        let _ = writeln!(body, "first_replicate={}", self.first_replicate);
        let _ = writeln!(body, "sample");
        for s in &self.samples {
            let _ = writeln!(body, "{s}");
        }
        seal(body)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines = unseal(text)?;
        let mut header = Header::parse(&lines)?;
        if header.take("format")? != "samples" {
            return Err(Error::Format("not a sample file".into()));
        }
        let kind: LimitKind = header.take("kind")?.parse()?;
        let model_ref = header.take("model")?;
        let n_mc: usize = header.take_parsed("n_mc")?;
        let seed: u64 = header.take_parsed("seed")?;
        let grid = LimitGrid::parse(&header.take("grid")?)?;
        let first_replicate: u64 = header.take_parsed("first_replicate")?;
        let rows = header.rows("sample")?;
        let samples = rows
            .iter()
            .map(|r| {
                r.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad sample {r:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if samples.len() != n_mc {
            return Err(Error::Format(format!(
                "expected {n_mc} samples, found {}",
                samples.len()
            )));
        }
        Ok(Self {
            kind,
            model_ref,
            grid,
            seed,
            first_replicate,
            samples,
        })
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Simulate `n_mc` replicates of a limit law.
pub fn simulate_limit(
    kind: LimitKind,
    law: &InvariantLaw,
    n_mc: usize,
    seed: u64,
    grid: LimitGrid,
) -> Result<LimitSampleBatch> {
    simulate_limit_range(kind, law, seed, grid, 0..n_mc as u64)
}

/// Simulate the replicates in `range`; batches of adjacent ranges merge into
/// exactly the batch a single call would produce.
pub fn simulate_limit_range(
    kind: LimitKind,
    law: &InvariantLaw,
    seed: u64,
    grid: LimitGrid,
    range: std::ops::Range<u64>,
) -> Result<LimitSampleBatch> {
    if range.is_empty() {
        return Err(Error::Domain("need at least one replicate".into()));
    }
    let sim = LimitSimulator::new(law, grid)?;
    Ok(LimitSampleBatch {
        kind,
        model_ref: law.model_ref(),
        grid,
        seed,
        first_replicate: range.start,
        samples: sim.samples(kind, seed, range)?,
    })
}

/// Upper quantiles `d_ε` for each ε.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub kind: LimitKind,
    pub model_ref: String,
    /// Increasing.
    pub epsilons: Vec<f64>,
    /// Strictly decreasing, positive.
    pub thresholds: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
    pub grid: String,
}

/// 1-based rank of the order statistic used for level ε.
pub fn quantile_rank(n: usize, epsilon: f64) -> usize {
    let r = (n as f64 * (1.0 - epsilon) - 1e-9).ceil() as usize;
    r.clamp(1, n)
}

/// Upper order statistic for level ε: the value at rank
/// `⌈n(1 − ε)⌉` of the sorted samples, without interpolation.
pub fn order_statistic(samples: &[f64], epsilon: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[quantile_rank(sorted.len(), epsilon) - 1]
}

/// Quantile table from a batch. Requires `n_mc ≥ 100 / min ε` so that at
/// least 100 samples lie above the smallest-ε threshold.
pub fn estimate_quantiles(batch: &LimitSampleBatch, epsilons: &[f64]) -> Result<QuantileTable> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let min_eps = *eps
        .first()
        .ok_or_else(|| Error::Domain("no epsilon requested".into()))?;
    let n = batch.samples.len();
    let needed = (100.0 / min_eps).ceil() as usize;
    if n < needed {
        return Err(Error::InsufficientSamples {
            needed,
            have: n,
            epsilon: min_eps,
        });
    }
    let mut sorted = batch.samples.clone();
    sorted.sort_by(f64::total_cmp);
    let thresholds = eps
        .iter()
        .map(|&e| sorted[quantile_rank(n, e) - 1])
        .collect();
    QuantileTable::new(
        batch.kind,
        batch.model_ref.clone(),
        eps,
        thresholds,
        n,
        batch.seed,
        batch.grid.describe(),
    )
}

impl QuantileTable {
    pub fn new(
        kind: LimitKind,
        model_ref: String,
        epsilons: Vec<f64>,
        thresholds: Vec<f64>,
        n_mc: usize,
        seed: u64,
        grid: String,
    ) -> Result<Self> {
        if epsilons.is_empty() || epsilons.len() != thresholds.len() {
            return Err(Error::Format("epsilons and thresholds must pair up".into()));
        }
        if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::Domain("epsilons must lie in (0, 1)".into()));
        }
        if epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("epsilons must be strictly increasing".into()));
        }
        if thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Domain("thresholds must be positive".into()));
        }
        if thresholds.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Domain(
                "thresholds must decrease strictly in epsilon; use more samples or fewer levels"
                    .into(),
            ));
        }
        Ok(Self {
            kind,
            model_ref,
            epsilons,
            thresholds,
            n_mc,
            seed,
            grid,
        })
    }

    pub fn threshold(&self, epsilon: f64) -> Result<f64> {
        self.epsilons
            .iter()
            .position(|e| (e - epsilon).abs() <= 1e-12)
            .map(|i| self.thresholds[i])
            .ok_or(Error::UnsupportedEpsilon(epsilon))
    }

    pub fn to_text(&self) -> String {
        let mut body = String::new();
        let _ = writeln!(body, "version={FORMAT_VERSION}");
        write_common_header(
            &mut body,
            self.kind,
            &self.model_ref,
            self.n_mc,
            self.seed,
            &self.grid,
        );
        let _ = writeln!(body, "epsilon,threshold");
        for (e, t) in self.epsilons.iter().zip(&self.thresholds) {
            let _ = writeln!(body, "{e},{t}");
        }
        seal(body)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines = unseal(text)?;
        let mut header = Header::parse(&lines)?;
        let kind: LimitKind = header.take("kind")?.parse()?;
        let model_ref = header.take("model")?;
        let n_mc: usize = header.take_parsed("n_mc")?;
        let seed: u64 = header.take_parsed("seed")?;
        let grid = header.take("grid")?;
        let rows = header.rows("epsilon,threshold")?;
        let mut epsilons = Vec::with_capacity(rows.len());
        let mut thresholds = Vec::with_capacity(rows.len());
        for r in rows {
            let (e, t) = r
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad table row {r:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad table row {r:?}")))
            };
            epsilons.push(parse(e)?);
            thresholds.push(parse(t)?);
        }
        Self::new(kind, model_ref, epsilons, thresholds, n_mc, seed, grid)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_common_header(
    body: &mut String,
    kind: LimitKind,
    model: &str,
    n_mc: usize,
    seed: u64,
    grid: &str,
) {
    let _ = writeln!(body, "kind={kind}");
    let _ = writeln!(body, "model={model}");
    let _ = writeln!(body, "n_mc={n_mc}");
    let _ = writeln!(body, "seed={seed}");
    let _ = writeln!(body, "grid={grid}");
}

fn seal(body: String) -> String {
    let crc = crc32fast::hash(body.as_bytes());
    format!("{body}crc32={crc:08x}\n")
}

/// Verify the trailing checksum and the version line; return body lines.
fn unseal(text: &str) -> Result<Vec<&str>> {
    let trimmed = text.trim_end_matches('\n');
    let cut = trimmed
        .rfind('\n')
        .ok_or_else(|| Error::Format("file too short".into()))?;
    let (body, last) = (&text[..cut + 1], &trimmed[cut + 1..]);
    let stored = last
        .strip_prefix("crc32=")
        .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
        .ok_or_else(|| Error::Format("missing crc32 trailer".into()))?;
    let computed = crc32fast::hash(body.as_bytes());
    let lines: Vec<&str> = body.lines().collect();
    match lines.first().and_then(|l| l.strip_prefix("version=")) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(Error::UnknownVersion(other.to_string())),
        None => return Err(Error::Format("first line must be version=…".into())),
    }
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(lines)
}

struct Header<'a> {
    fields: Vec<(&'a str, &'a str)>,
    rest: &'a [&'a str],
}

impl<'a> Header<'a> {
    fn parse(lines: &'a [&'a str]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut i = 1;
        while i < lines.len() {
            match lines[i].split_once('=') {
                Some((k, v)) if !lines[i].contains(',') || k == "grid" => {
                    fields.push((k, v));
                    i += 1;
                }
                _ => break,
            }
        }
        Ok(Self {
            fields,
            rest: &lines[i..],
        })
    }

    fn take(&mut self, key: &str) -> Result<String> {
        let pos = self
            .fields
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| Error::Format(format!("missing header field {key:?}")))?;
        Ok(self.fields.remove(pos).1.to_string())
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("bad value for {key}: {v:?}")))
    }

    fn rows(self, column_header: &str) -> Result<Vec<&'a str>> {
        if let Some((k, _)) = self.fields.first() {
            return Err(Error::Format(format!("unexpected header field {k:?}")));
        }
        match self.rest.split_first() {
            Some((h, rows)) if *h == column_header => Ok(rows
                .iter()
                .copied()
                .filter(|r| !r.trim().is_empty())
                .collect()),
            _ => Err(Error::Format(format!(
                "expected column header {column_header:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShiftDriftModel;

    fn ou_law() -> InvariantLaw {
        InvariantLaw::build_default(&ShiftDriftModel::ou(1.0).unwrap()).unwrap()
    }

    fn batch(samples: Vec<f64>) -> LimitSampleBatch {
        LimitSampleBatch {
            kind: LimitKind::Delta,
            model_ref: "ou".into(),
            grid: LimitGrid {
                h: 0.01,
                lo: -5.0,
                hi: 5.0,
                substeps: 1,
            },
            seed: 1,
            first_replicate: 0,
            samples,
        }
    }

    #[test]
    fn order_statistic_rank() {
        let b = batch((1..=2000).map(|v| v as f64).collect());
        let t = estimate_quantiles(&b, &[0.05]).unwrap();
        assert_eq!(t.thresholds, vec![1900.0]);
        assert!(matches!(
            estimate_quantiles(&b, &[0.01]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn order_statistic_of_small_sample() {
        let v: Vec<f64> = (1..=100).rev().map(|v| v as f64).collect();
        assert_eq!(order_statistic(&v, 0.05), 95.0);
        assert_eq!(order_statistic(&v, 0.5), 50.0);
    }

    #[test]
    fn zero_kernel_gives_zero_samples() {
        let law = ou_law();
        let mut sim = LimitSimulator::new(&law, LimitGrid::for_law(&law)).unwrap();
        sim.upper.iter_mut().for_each(|v| *v = 0.0);
        sim.lower.iter_mut().for_each(|v| *v = 0.0);
        sim.score.iter_mut().for_each(|v| *v = 0.0);
        for kind in LimitKind::ALL {
            assert!(sim
                .samples(kind, 1, 0..50)
                .unwrap()
                .iter()
                .all(|v| *v == 0.0));
        }
    }

    #[test]
    fn thresholds_decrease() {
        let b = batch(
            (0..5000)
                .map(|i| ((i * 7919) % 5000) as f64 + 0.5)
                .collect(),
        );
        let t = estimate_quantiles(&b, &[0.1, 0.02, 0.05]).unwrap();
        assert_eq!(t.epsilons, vec![0.02, 0.05, 0.1]);
        assert!(t.thresholds.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ou_density_derivative() {
        let law = ou_law();
        let expected = -2.0 * (-1.0f64).exp() / std::f64::consts::PI.sqrt();
        assert!((law.density_deriv_at(1.0) - expected).abs() < 1e-6);
    }

    #[test]
    fn table_round_trip_and_validation() {
        let t = QuantileTable::new(
            LimitKind::BigDelta,
            "ou".into(),
            vec![0.01, 0.05],
            vec![0.4, 0.25],
            100_000,
            9,
            "h=0.01;lo=-5;hi=5;substeps=1".into(),
        )
        .unwrap();
        let text = t.to_text();
        assert!(text.starts_with("version=1\nkind=Delta\nmodel=ou\n"));
        assert_eq!(QuantileTable::from_text(&text).unwrap(), t);

        let tampered = text.replace("0.25", "0.26");
        assert!(matches!(
            QuantileTable::from_text(&tampered),
            Err(Error::Checksum { .. })
        ));

        let v2 = seal(
            text.lines()
                .take(text.lines().count() - 1)
                .collect::<Vec<_>>()
                .join("\n")
                .replacen("version=1", "version=2", 1)
                + "\n",
        );
        assert!(matches!(
            QuantileTable::from_text(&v2),
            Err(Error::UnknownVersion(_))
        ));
    }

    #[test]
    fn batch_round_trip_and_merge() {
        let law = ou_law();
        let grid = LimitGrid::for_law(&law);
        let whole = simulate_limit(LimitKind::Delta, &law, 64, 5, grid).unwrap();
        let a = simulate_limit_range(LimitKind::Delta, &law, 5, grid, 0..20).unwrap();
        let b = simulate_limit_range(LimitKind::Delta, &law, 5, grid, 20..64).unwrap();
        assert_eq!(
            LimitSampleBatch::merge(vec![b.clone(), a.clone()]).unwrap(),
            whole
        );
        assert!(LimitSampleBatch::merge(vec![b, whole.clone()]).is_err());
        let text = whole.to_text();
        assert_eq!(LimitSampleBatch::from_text(&text).unwrap(), whole);
    }

    #[test]
    fn fast_path_matches_dense_kernel() {
        let law = ou_law();
        let grid = LimitGrid {
            h: 0.02,
            ..LimitGrid::for_law(&law)
        };
        let sim = LimitSimulator::new(&law, grid).unwrap();
        let xs = [-1.0, 0.0, 0.5, 2.0];
        for r in 0..3 {
            let fields = sim.fields(7, r);
            for kind in [LimitKind::Delta, LimitKind::BigDelta] {
                let zeta = sim.zeta(kind, &fields);
                let dense = sim.dense_inner(kind, &law, 7, r, &xs).unwrap();
                for (x, d) in xs.iter().zip(&dense) {
                    let fast = -zeta[sim.node_index(*x)];
                    assert!(
                        (fast - d).abs() < 1e-9 * (1.0 + d.abs()),
                        "{kind} x={x}: {fast} vs {d}"
                    );
                }
            }
        }
    }

    #[test]
    fn mu_needs_no_pointwise_kernel() {
        assert!(phi(LimitKind::Mu, &ou_law(), 0.0, 0.0).is_err());
    }

    #[test]
    fn grid_outside_support_is_rejected() {
        let law = ou_law();
        let grid = LimitGrid {
            lo: -30.0,
            ..LimitGrid::for_law(&law)
        };
        assert!(LimitSimulator::new(&law, grid).is_err());
    }

    #[test]
    fn kind_names() {
        for k in LimitKind::ALL {
            assert_eq!(k.as_str().parse::<LimitKind>().unwrap(), k);
        }
    }
}
