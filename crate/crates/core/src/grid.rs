//! Uniform grids and the handful of quadrature rules used throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `start + i·step` for `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !step.is_finite() || len < 2 {
            return Err(Error::Domain(format!(
                "invalid grid: start={start}, step={step}, len={len}"
            )));
        }
        Ok(Self { start, step, len })
    }

    /// Symmetric grid on `[-half_width, half_width]` with 0 as a node.
    /// The step is shrunk if needed so that it divides `half_width`.
    pub fn symmetric(half_width: f64, max_step: f64) -> Result<Self> {
        if !(half_width > 0.0 && max_step > 0.0) {
            return Err(Error::Domain(format!(
                "invalid symmetric grid: half_width={half_width}, step={max_step}"
            )));
        }
        let n = (half_width / max_step).ceil().max(1.0) as usize;
        let step = half_width / n as f64;
        Self::new(-half_width, step, 2 * n + 1)
    }

    /// Nodes `k·step` (integer k) covering `[lo, hi]`, so that 0 stays a
    /// node whenever it lies in range.
    pub fn aligned(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(hi > lo) || !(step > 0.0) {
            return Err(Error::Domain(format!(
                "invalid aligned grid: [{lo}, {hi}] step {step}"
            )));
        }
        let k0 = (lo / step).floor();
        let k1 = (hi / step).ceil();
        Self::new(k0 * step, step, (k1 - k0) as usize + 1)
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.at(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.at(i)).collect()
    }

    /// Grid with twice the resolution over the same interval.
    pub fn refined(&self) -> Self {
        Self {
            start: self.start,
            step: self.step / 2.0,
            len: 2 * self.len - 1,
        }
    }

    /// Shift every node by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            start: self.start + offset,
            ..*self
        }
    }

    /// Linear interpolation of `values` (tabulated on this grid) at `x`.
    /// Outside the grid the nearest end value is returned.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len);
        let pos = (x - self.start) / self.step;
        if pos <= 0.0 {
            return values[0];
        }
        let last = self.len - 1;
        if pos >= last as f64 {
            return values[last];
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        if w == 0.0 {
            values[i]
        } else {
            values[i] * (1.0 - w) + values[i + 1] * w
        }
    }

    /// Cubic Hermite interpolation from node values and node derivatives,
    /// clamped to the end values like [`Self::interpolate`].
    pub fn hermite(&self, values: &[f64], derivs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len);
        debug_assert_eq!(derivs.len(), self.len);
        let pos = (x - self.start) / self.step;
        if pos <= 0.0 {
            return values[0];
        }
        let last = self.len - 1;
        if pos >= last as f64 {
            return values[last];
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        if t == 0.0 {
            return values[i];
        }
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * values[i]
            + h10 * self.step * derivs[i]
            + h01 * values[i + 1]
            + h11 * self.step * derivs[i + 1]
    }
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(step: f64, values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = neumaier_sum(values[1..n - 1].iter().copied());
            step * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Trapezoid rule on an arbitrary increasing abscissa.
pub fn trapezoid_xy(xs: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), values.len());
    neumaier_sum(
        xs.windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])),
    )
}

/// Running trapezoid integral from the first node; output[0] = 0.
pub fn cumulative_trapezoid(step: f64, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    let mut comp = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        let term = 0.5 * step * (w[0] + w[1]);
        let t = acc + term;
        if acc.abs() >= term.abs() {
            comp += (acc - t) + term;
        } else {
            comp += (term - t) + acc;
        }
        acc = t;
        out.push(acc + comp);
    }
    out
}

/// Running integral from the first node using the end-corrected trapezoid
/// rule `h/2 (v₀ + v₁) − h²/12 (v₁' − v₀')` per cell, fourth-order accurate
/// given exact derivatives. Cell contributions are kept non-negative when
/// the integrand is, so the result stays monotone in steep tails.
pub fn cumulative_corrected(step: f64, values: &[f64], derivs: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), derivs.len());
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    let mut comp = 0.0;
    out.push(0.0);
    for i in 1..values.len() {
        let plain = 0.5 * step * (values[i - 1] + values[i]);
        let mut term = plain - step * step / 12.0 * (derivs[i] - derivs[i - 1]);
        if values[i - 1] >= 0.0 && values[i] >= 0.0 && term < 0.0 {
            term = plain;
        }
        let t = acc + term;
        if acc.abs() >= term.abs() {
            comp += (acc - t) + term;
        } else {
            comp += (term - t) + acc;
        }
        acc = t;
        out.push(acc + comp);
    }
    out
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(iter: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in iter {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
