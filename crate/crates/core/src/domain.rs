//! Shared domain types: axis-aligned boxes, parameter vectors and seeded RNG streams.

use std::ops::Deref;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Axis-aligned box `[lower_i, upper_i]`. Degenerate coordinates (`lower == upper`) are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::invalid("box must have at least one coordinate"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "box coordinate {i}: bounds [{lo}, {hi}] are not a finite interval"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Largest absolute coordinate value reachable along axis `i`.
    pub fn abs_max(&self, i: usize) -> f64 {
        self.lower[i].abs().max(self.upper[i].abs())
    }

    /// Strict version used for parameter boxes: every coordinate must have `lower < upper`.
    pub fn require_nondegenerate(&self) -> Result<()> {
        match (0..self.dim()).find(|&i| self.lower[i] >= self.upper[i]) {
            Some(i) => Err(Error::invalid(format!(
                "coordinate {i} of parameter box is degenerate"
            ))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check_contains(&self, x: &[f64]) -> Result<()> {
        check_dim("point", self.dim(), x.len())?;
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "point {x:?} lies outside the domain box"
            )))
        }
    }

    pub fn clamp_in_place(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Maps `x` into the unit cube (degenerate coordinates map to 0).
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let w = self.width(i);
                if w > 0.0 {
                    (v - self.lower[i]) / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Same box with every interval shrunk about its midpoint by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let c = self.center();
        let lower = (0..self.dim())
            .map(|i| c[i] - 0.5 * factor * self.width(i))
            .collect();
        let upper = (0..self.dim())
            .map(|i| c[i] + 0.5 * factor * self.width(i))
            .collect();
        Self::new(lower, upper)
    }
}

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "parameter coordinate {i} is not finite"
            )));
        }
        Ok(Self(DVector::from_vec(coords)))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::numerical(
                "parameter vector has non-finite entries",
                None,
            ));
        }
        Ok(Self(v))
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(DVector::from_element(dim, value))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// RNG streams used by the runner. Each purpose draws from its own ChaCha stream of the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Sampling = 1,
    Noise = 2,
    Fit = 3,
    Acquisition = 4,
    Diagnostics = 5,
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for a sub-task, e.g. one restart or one multistart.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![], vec![]).is_err());
        assert!(BoxDomain::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn degenerate_coordinate_samples_constant() {
        let b = BoxDomain::new(vec![0.0, 2.0], vec![1.0, 2.0]).unwrap();
        let mut rng = stream_rng(7, 0);
        for _ in 0..20 {
            let x = b.sample(&mut rng);
            assert_eq!(x[1], 2.0);
            assert!(b.contains(&x));
        }
        assert!(b.require_nondegenerate().is_err());
    }

    #[test]
    fn param_vector_rejects_nan() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream_rng(1, 1).random();
        let b: u64 = stream_rng(1, 2).random();
        let c: u64 = stream_rng(1, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
    }
}
