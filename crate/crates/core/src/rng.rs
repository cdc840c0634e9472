//! Counter-based random numbers.
//!
//! Every variate is a pure function of `(key, index)`, where the key is
//! derived from a user seed and a chain of substream identifiers. A
//! replicate can therefore be regenerated on any thread, in any order, and
//! merged results never depend on scheduling.
//!
//! Uniforms come from the SplitMix64 output function applied to a keyed
//! counter; normals use the inverse-CDF method (Wichura's AS 241).

// The AS 241 coefficients are kept exactly as published.
#![allow(clippy::excessive_precision)]

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed stream of random numbers addressed by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    /// Independent child stream. Distinct ids give unrelated keys.
    pub fn substream(&self, id: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(id.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))),
        }
    }

    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        ((self.bits(index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate.
    #[inline]
    pub fn normal(&self, index: u64) -> f64 {
        inverse_normal_cdf(self.uniform(index))
    }
}

/// Derive a per-replicate seed from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    CounterRng::new(base).substream(index).bits(0)
}

/// Quantile function of the standard normal distribution (AS 241, PPND16).
///
/// Relative accuracy is about 1e-16 over (0, 1). Returns ±∞ at the
/// endpoints and NaN outside [0, 1].
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r
                + 67265.770927008700853)
                * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn inverse_cdf_matches_reference() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-6, 0.01, 0.2, 0.5, 0.7, 0.975, 0.999] {
            let z = inverse_normal_cdf(p);
            assert!((n.cdf(z) - p).abs() < 1e-9 * p.min(1.0 - p), "p={p}");
        }
        // Frozen quantiles, including the far tails.
        let frozen = [
            (1e-12, -7.034483825301132),
            (1e-6, -4.753424308822899),
            (0.01, -2.3263478740408408),
            (0.2, -0.8416212335729142),
            (0.975, 1.9599639845400536),
            (1.0 - 1e-10, 6.361340889697421),
        ];
        for (p, z) in frozen {
            assert!((inverse_normal_cdf(p) - z).abs() < 1e-13 * z.abs(), "p={p}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = CounterRng::new(42);
        let b = CounterRng::new(42);
        assert_eq!(a.bits(7), b.bits(7));
        assert_ne!(a.substream(0).bits(0), a.substream(1).bits(0));
        assert_ne!(CounterRng::new(1).bits(0), CounterRng::new(2).bits(0));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(3).substream(9);
        let n = 200_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = rng.normal(i);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn uniform_is_open_interval() {
        let rng = CounterRng::new(0);
        for i in 0..10_000 {
            let u = rng.uniform(i);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
