//! Flat real vectors: latent states and velocities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn check_dims(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        )));
    }
    Ok(())
}

macro_rules! real_vector {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Builds a vector, rejecting empty input and non-finite entries.
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.is_empty() {
                    return Err(Error::invalid(concat!($what, " must have dimension >= 1")));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        concat!($what, " entry {} is not finite ({})"),
                        i, values[i]
                    )));
                }
                Ok(Self(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub(crate) fn from_raw(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn dot(&self, other: &Self) -> f64 {
                dot(&self.0, &other.0)
            }

            pub fn norm(&self) -> f64 {
                norm(&self.0)
            }

            pub fn add(&self, other: &Self) -> Self {
                debug_assert_eq!(self.dim(), other.dim());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
            }

            pub fn sub(&self, other: &Self) -> Self {
                debug_assert_eq!(self.dim(), other.dim());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
            }

            pub fn scale(&self, k: f64) -> Self {
                Self(self.0.iter().map(|a| k * a).collect())
            }

            /// `self + k * other`
            pub fn axpy(&self, k: f64, other: &Self) -> Self {
                debug_assert_eq!(self.dim(), other.dim());
                Self(self.0.iter().zip(&other.0).map(|(a, b)| a + k * b).collect())
            }

            /// Largest per-coordinate absolute difference.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.0
                    .iter()
                    .zip(&other.0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = Error;

            fn try_from(values: Vec<f64>) -> Result<Self> {
                Self::new(values)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(v: $name) -> Vec<f64> {
                v.0
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;

            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

real_vector!(State, "state");
real_vector!(Velocity, "velocity");

impl State {
    /// Displacement `self - other` expressed as a velocity-shaped vector.
    pub fn displacement(&self, other: &State) -> Velocity {
        Velocity::from_raw(self.sub(other).into_vec())
    }
}

impl Velocity {
    /// Reinterprets the vector as a state; used where a velocity difference
    /// is fed back into a state-valued computation.
    pub fn to_state(&self) -> State {
        State::from_raw(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite() {
        assert!(State::new(vec![1.0, f64::NAN]).is_err());
        assert!(Velocity::new(vec![f64::INFINITY]).is_err());
        assert!(State::new(vec![]).is_err());
    }

    #[test]
    fn serde_validates() {
        let s: State = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(s.as_slice(), &[1.0, 2.0]);
        assert!(serde_json::from_str::<State>("[]").is_err());
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, n)
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #[test]
        fn dot_is_bilinear(a in vecs(5), b in vecs(5), c in vecs(5), k in -10.0..10.0f64) {
            let (a, b, c) = (State::from_raw(a), State::from_raw(b), State::from_raw(c));
            let lhs = a.axpy(k, &b).dot(&c);
            let rhs = a.dot(&c) + k * b.dot(&c);
            // scale by the magnitude of the summands, not the (possibly cancelled) result
            let mag = a.norm() * c.norm() + k.abs() * b.norm() * c.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * mag.max(1.0));
        }

        #[test]
        fn norm_is_homogeneous(a in vecs(4), k in -10.0..10.0f64) {
            let a = Velocity::from_raw(a);
            prop_assert!(rel_close(a.scale(k).norm(), k.abs() * a.norm()));
        }

        #[test]
        fn add_sub_roundtrip(a in vecs(3), b in vecs(3)) {
            let (a, b) = (State::from_raw(a), State::from_raw(b));
            let back = a.add(&b).sub(&b);
            prop_assert!(back.max_abs_diff(&a) <= 1e-12 * (a.norm() + b.norm()).max(1.0));
        }
    }
}
