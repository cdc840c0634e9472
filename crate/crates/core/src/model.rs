//! Shift-drift model families `S*(x − θ)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A real function shared across threads.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The null family `{S*(x − θ) : θ ∈ (α, β)}` for a unit-diffusion SDE.
#[derive(Clone)]
pub struct ShiftDriftModel {
    name: String,
    drift_star: RealFn,
    drift_star_deriv: RealFn,
    theta_interval: (f64, f64),
    params: BTreeMap<String, f64>,
}

impl fmt::Debug for ShiftDriftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShiftDriftModel")
            .field("name", &self.name)
            .field("theta_interval", &self.theta_interval)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// Default parameter interval for the built-in families.
pub const DEFAULT_THETA_INTERVAL: (f64, f64) = (-10.0, 10.0);

impl ShiftDriftModel {
    /// A custom family. `drift_star` is the drift at θ = 0.
    pub fn new(
        name: impl Into<String>,
        drift_star: RealFn,
        drift_star_deriv: RealFn,
        theta_interval: (f64, f64),
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let (lo, hi) = theta_interval;
        if !(lo < 0.0 && 0.0 < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!(
                "parameter interval ({lo}, {hi}) must be finite and contain 0"
            )));
        }
        Ok(Self {
            name: name.into(),
            drift_star,
            drift_star_deriv,
            theta_interval,
            params,
        })
    }

    /// `S*(x) = −rate·x`; the invariant law is N(0, 1/(2·rate)).
    pub fn ou(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!(
                "ou rate must be positive, got {rate}"
            )));
        }
        Self::new(
            "ou",
            Arc::new(move |x| -rate * x),
            Arc::new(move |_| -rate),
            DEFAULT_THETA_INTERVAL,
            BTreeMap::from([("rate".to_string(), rate)]),
        )
    }

    /// `S*(x) = −scale·x³`.
    pub fn cubic(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!(
                "cubic scale must be positive, got {scale}"
            )));
        }
        Self::new(
            "cubic",
            Arc::new(move |x| -scale * x * x * x),
            Arc::new(move |x| -3.0 * scale * x * x),
            DEFAULT_THETA_INTERVAL,
            BTreeMap::from([("scale".to_string(), scale)]),
        )
    }

    /// `S*(x) = −a·tanh(x) − b·x`: drift that saturates before the linear
    /// part takes over, giving heavier tails than `ou`.
    pub fn tanh_damped(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b > 0.0) {
            return Err(Error::Domain(format!(
                "tanh-damped needs a >= 0 and b > 0, got a={a}, b={b}"
            )));
        }
        Self::new(
            "tanh-damped",
            Arc::new(move |x: f64| -a * x.tanh() - b * x),
            Arc::new(move |x: f64| {
                let c = x.cosh();
                -a / (c * c) - b
            }),
            DEFAULT_THETA_INTERVAL,
            BTreeMap::from([("a".to_string(), a), ("b".to_string(), b)]),
        )
    }

    /// Look up a built-in family. Parameters not given take their defaults;
    /// unknown parameter names are rejected.
    pub fn from_registry(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[(&str, f64)] = match name {
            "ou" => &[("rate", 1.0)],
            "cubic" => &[("scale", 1.0)],
            "tanh-damped" => &[("a", 2.0), ("b", 0.5)],
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        for key in params.keys() {
            if !allowed.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!(
                    "model {name:?} has no parameter {key:?}"
                )));
            }
        }
        let get = |k: &str| {
            params
                .get(k)
                .copied()
                .unwrap_or_else(|| allowed.iter().find(|(n, _)| *n == k).unwrap().1)
        };
        match name {
            "ou" => Self::ou(get("rate")),
            "cubic" => Self::cubic(get("scale")),
            _ => Self::tanh_damped(get("a"), get("b")),
        }
    }

    /// Parse a reference such as `ou`, `ou(rate=2)` or `tanh-damped(a=1,b=0.25)`.
    pub fn parse_reference(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, rest) = match text.find('(') {
            Some(i) => (&text[..i], Some(&text[i + 1..])),
            None => (text, None),
        };
        let mut params = BTreeMap::new();
        if let Some(rest) = rest {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| Error::Config(format!("unbalanced parentheses in {text:?}")))?;
            for item in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected key=value, got {item:?}")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number in {item:?}")))?;
                params.insert(k.trim().to_string(), v);
            }
        }
        Self::from_registry(name.trim(), &params)
    }

    pub fn registry_names() -> &'static [&'static str] {
        &["ou", "cubic", "tanh-damped"]
    }

    pub fn with_theta_interval(mut self, interval: (f64, f64)) -> Result<Self> {
        let m = Self::new(
            self.name.clone(),
            self.drift_star.clone(),
            self.drift_star_deriv.clone(),
            interval,
            std::mem::take(&mut self.params),
        )?;
        Ok(m)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn theta_interval(&self) -> (f64, f64) {
        self.theta_interval
    }

    /// Stable identifier including non-default parameters, e.g. `ou(rate=2)`.
    pub fn reference(&self) -> String {
        if self.params.is_empty() {
            return self.name.clone();
        }
        let defaults = Self::from_registry(&self.name, &BTreeMap::new()).ok();
        let non_default: Vec<String> = self
            .params
            .iter()
            .filter(|(k, v)| defaults.as_ref().and_then(|d| d.params.get(*k)) != Some(*v))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if non_default.is_empty() {
            self.name.clone()
        } else {
            format!("{}({})", self.name, non_default.join(","))
        }
    }

    /// `S*(x)`, the drift at θ = 0.
    #[inline]
    pub fn drift_star(&self, x: f64) -> f64 {
        (self.drift_star)(x)
    }

    #[inline]
    pub fn drift_star_deriv(&self, x: f64) -> f64 {
        (self.drift_star_deriv)(x)
    }

    /// `S*(x − θ)`.
    #[inline]
    pub fn drift(&self, x: f64, theta: f64) -> f64 {
        (self.drift_star)(x - theta)
    }

    pub fn drift_fn(&self) -> RealFn {
        self.drift_star.clone()
    }

    /// Largest relative disagreement between the supplied derivative and a
    /// central difference with step 1e-5 on `probe`.
    pub fn derivative_consistency(&self, probe: &[f64]) -> f64 {
        const STEP: f64 = 1e-5;
        probe
            .iter()
            .map(|&x| {
                let fd = (self.drift_star(x + STEP) - self.drift_star(x - STEP)) / (2.0 * STEP);
                let d = self.drift_star_deriv(x);
                (fd - d).abs() / d.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}
