//! Class-size-dependent margins.
//!
//! The margin for a class with `n` training samples is
//! `f(n) = a * n^(-lambda) + b`, a non-increasing function of class size:
//! rare classes get larger margins. `a` and `b` are calibrated from the
//! requested bounds so that `f(n_min) = upper` and `f(n_max) = lower`,
//! where `n_min`/`n_max` default to the smallest and largest observed class
//! sizes. Sizes outside that range clamp rather than extrapolate.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Calibrated margin schedule mapping class size to margin.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSchedule<T> {
    lambda: T,
    a: T,
    b: T,
    lower: T,
    upper: T,
    n_min: usize,
    n_max: usize,
}

impl<T: Real> MarginSchedule<T> {
    /// Solve for `(a, b)` so the bounds are attained at the extreme sizes:
    /// `a = (upper - lower) / (n_min^-lambda - n_max^-lambda)` and
    /// `b = lower - a * n_max^-lambda`. When `lower == upper` the schedule
    /// is constant (`a = 0`).
    pub fn calibrate(lambda: T, lower: T, upper: T, n_min: usize, n_max: usize) -> Result<Self> {
        let half_pi = T::of(std::f64::consts::FRAC_PI_2);
        if !(lower >= T::zero() && lower <= upper && upper < half_pi) {
            return Err(Error::InvalidBounds {
                lower: lower.as_f64(),
                upper: upper.as_f64(),
            });
        }
        if lambda <= T::zero() {
            return Err(Error::InvalidParams(format!(
                "margin shape exponent must be positive, got {lambda}"
            )));
        }
        if n_min == 0 || n_min > n_max {
            return Err(Error::InvalidParams(format!(
                "invalid class-size range [{n_min}, {n_max}]"
            )));
        }
        let (a, b) = if lower == upper {
            (T::zero(), lower)
        } else {
            if n_min == n_max {
                return Err(Error::DegenerateRange { n: n_min });
            }
            let p_min = pow_neg_lambda(n_min, lambda);
            let p_max = pow_neg_lambda(n_max, lambda);
            let a = (upper - lower) / (p_min - p_max);
            (a, lower - a * p_max)
        };
        Ok(Self {
            lambda,
            a,
            b,
            lower,
            upper,
            n_min,
            n_max,
        })
    }

    /// Constant schedule: every class gets `level`.
    pub fn constant(level: T) -> Result<Self> {
        Self::calibrate(T::one(), level, level, 1, 1)
    }

    /// Margin for a class of size `n`; sizes clamp to `[n_min, n_max]`.
    pub fn margin_for(&self, n: usize) -> T {
        let clamped = n.clamp(self.n_min, self.n_max);
        let m = self.a * pow_neg_lambda(clamped, self.lambda) + self.b;
        m.min(self.upper).max(self.lower)
    }

    /// Elementwise [`margin_for`](Self::margin_for) over per-class counts.
    pub fn margins_from_counts(&self, counts: &[usize]) -> Result<Vec<T>> {
        if counts.is_empty() {
            return Err(Error::EmptyCounts);
        }
        Ok(counts.iter().map(|&n| self.margin_for(n)).collect())
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }
}

fn pow_neg_lambda<T: Real>(n: usize, lambda: T) -> T {
    T::of(n as f64).powf(-lambda)
}

/// Which margin family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginKind {
    Constant,
    Dynamic,
}

/// Margin configuration as it appears in config files: `margin.kind`,
/// `margin.lambda`, `margin.lower`, `margin.upper`, `margin.n_min`,
/// `margin.n_max`. Unset size anchors default to the observed extremes of
/// the class counts the schedule is resolved against.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginConfig<T> {
    pub kind: MarginKind,
    pub lambda: T,
    pub lower: T,
    pub upper: T,
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
}

impl<T: Real> Default for MarginConfig<T> {
    /// The best-performing dynamic family: `lambda = 1/4`, bounds
    /// `[0.05, 0.5]`, anchors at the observed extremes.
    fn default() -> Self {
        Self {
            kind: MarginKind::Dynamic,
            lambda: T::of(0.25),
            lower: T::of(0.05),
            upper: T::of(0.5),
            n_min: None,
            n_max: None,
        }
    }
}

impl<T: Real> MarginConfig<T> {
    pub fn constant(level: T) -> Self {
        Self {
            kind: MarginKind::Constant,
            lambda: T::one(),
            lower: level,
            upper: level,
            n_min: Some(1),
            n_max: Some(1),
        }
    }

    /// Resolve the configuration against observed per-class counts.
    pub fn schedule_for_counts(&self, counts: &[usize]) -> Result<MarginSchedule<T>> {
        match self.kind {
            MarginKind::Constant => {
                if self.lower != self.upper {
                    return Err(Error::InvalidBounds {
                        lower: self.lower.as_f64(),
                        upper: self.upper.as_f64(),
                    });
                }
                MarginSchedule::constant(self.lower)
            }
            MarginKind::Dynamic => {
                if counts.is_empty() && (self.n_min.is_none() || self.n_max.is_none()) {
                    return Err(Error::EmptyCounts);
                }
                let observed_min = counts.iter().copied().filter(|&n| n > 0).min();
                let observed_max = counts.iter().copied().max();
                let n_min = self.n_min.or(observed_min).unwrap_or(1);
                let n_max = self.n_max.or(observed_max).unwrap_or(1);
                MarginSchedule::calibrate(self.lambda, self.lower, self.upper, n_min, n_max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1_quarter() -> MarginSchedule<f64> {
        MarginSchedule::calibrate(0.25, 0.05, 0.5, 1, 10_000).unwrap()
    }

    #[test]
    fn calibrate_quarter_power_closed_form() {
        // n_min^-l = 1, n_max^-l = 10000^-0.25 = 0.1, so
        // a = 0.45 / 0.9 = 0.5 and b = 0.05 - 0.5 * 0.1 = 0.
        let s = table1_quarter();
        assert!((s.a() - 0.5).abs() < 1e-12);
        assert!(s.b().abs() < 1e-12);
    }

    #[test]
    fn constant_schedule() {
        let s = MarginSchedule::constant(0.25_f64).unwrap();
        for n in [1, 5, 1000, 1_000_000] {
            assert_eq!(s.margin_for(n), 0.25);
        }
    }

    #[test]
    fn boundary_identities_lambda_one() {
        let s = MarginSchedule::calibrate(1.0_f64, 0.2, 0.55, 3, 5_000).unwrap();
        assert!((s.margin_for(3) - 0.55).abs() < 1e-9);
        assert!((s.margin_for(5_000) - 0.2).abs() < 1e-9);
    }

    #[test]
    fn margin_for_derived_points() {
        let s = table1_quarter();
        assert!((s.margin_for(16) - 0.25).abs() < 1e-12);
        assert!((s.margin_for(1) - 0.5).abs() < 1e-12);
        // above n_max clamps to the lower bound
        assert!((s.margin_for(1_000_000) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn margins_from_counts_elementwise() {
        let s = table1_quarter();
        let m = s.margins_from_counts(&[1, 16, 10_000]).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12);
        assert!((m[1] - 0.25).abs() < 1e-12);
        assert!((m[2] - 0.05).abs() < 1e-12);
        assert!(matches!(
            s.margins_from_counts(&[]),
            Err(Error::EmptyCounts)
        ));
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(matches!(
            MarginSchedule::calibrate(0.5_f64, 0.4, 0.2, 1, 100),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            MarginSchedule::calibrate(0.5_f64, 0.1, 1.6, 1, 100),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            MarginSchedule::calibrate(0.5_f64, 0.1, 0.3, 7, 7),
            Err(Error::DegenerateRange { n: 7 })
        ));
    }

    #[test]
    fn chord_deviation_shrinks_as_lambda_decreases() {
        // With the shape exponent heading to zero the curve flattens toward
        // the straight line between its endpoints.
        let (lower, upper, n_min, n_max) = (0.05_f64, 0.5, 1usize, 10_000usize);
        let chord = |n: usize| {
            upper + (lower - upper) * (n as f64 - n_min as f64) / (n_max as f64 - n_min as f64)
        };
        let max_dev = |lambda: f64| {
            let s = MarginSchedule::calibrate(lambda, lower, upper, n_min, n_max).unwrap();
            (n_min..=n_max)
                .map(|n| (s.margin_for(n) - chord(n)).abs())
                .fold(0.0, f64::max)
        };
        let devs: Vec<f64> = [1.0, 0.25, 0.125, 1.0 / 64.0]
            .iter()
            .map(|&l| max_dev(l))
            .collect();
        for pair in devs.windows(2) {
            assert!(pair[1] < pair[0], "deviation must shrink: {:?}", devs);
        }
    }

    #[test]
    fn config_resolves_observed_extremes() {
        let cfg = MarginConfig::<f64>::default();
        let s = cfg.schedule_for_counts(&[12, 3, 800, 40]).unwrap();
        assert_eq!(s.n_min(), 3);
        assert_eq!(s.n_max(), 800);
        assert!((s.margin_for(3) - 0.5).abs() < 1e-9);
        assert!((s.margin_for(800) - 0.05).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn margin_is_monotone_and_bounded(
            lambda in 0.05_f64..2.0,
            lower in 0.0_f64..0.5,
            span in 0.01_f64..0.8,
            n_min in 1usize..50,
            extra in 1usize..100_000,
            n1 in 0usize..200_000,
            n2 in 0usize..200_000,
        ) {
            let upper = (lower + span).min(1.5);
            prop_assume!(upper > lower);
            let n_max = n_min + extra;
            let s = MarginSchedule::calibrate(lambda, lower, upper, n_min, n_max).unwrap();
            let (n1, n2) = (n1.max(1), n2.max(1));
            let (lo_n, hi_n) = (n1.min(n2), n1.max(n2));
            let (m_lo, m_hi) = (s.margin_for(lo_n), s.margin_for(hi_n));
            prop_assert!(m_lo >= m_hi, "smaller class must get the larger margin");
            for m in [m_lo, m_hi] {
                prop_assert!((lower..=upper).contains(&m));
            }
        }
    }
}
