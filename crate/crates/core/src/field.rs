//! Pointwise values of `(v, sigma)` pairs and fields that produce them.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A scalar `v` plus an `n`-vector `sigma`; unused components stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldValue {
    pub v: f64,
    pub sigma: [f64; 3],
}

impl FieldValue {
    pub const ZERO: FieldValue = FieldValue {
        v: 0.0,
        sigma: [0.0; 3],
    };

    pub fn new(v: f64, sigma: &[f64]) -> Self {
        let mut s = [0.0; 3];
        s[..sigma.len()].copy_from_slice(sigma);
        Self { v, sigma: s }
    }

    pub fn sigma_dot(&self, n: &[f64]) -> f64 {
        n.iter().zip(&self.sigma).map(|(a, b)| a * b).sum()
    }

    pub fn sigma_norm_sq(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum()
    }
}

impl Add for FieldValue {
    type Output = FieldValue;
    fn add(self, rhs: FieldValue) -> FieldValue {
        FieldValue {
            v: self.v + rhs.v,
            sigma: [
                self.sigma[0] + rhs.sigma[0],
                self.sigma[1] + rhs.sigma[1],
                self.sigma[2] + rhs.sigma[2],
            ],
        }
    }
}

impl Sub for FieldValue {
    type Output = FieldValue;
    fn sub(self, rhs: FieldValue) -> FieldValue {
        self + rhs * -1.0
    }
}

impl Mul<f64> for FieldValue {
    type Output = FieldValue;
    fn mul(self, s: f64) -> FieldValue {
        FieldValue {
            v: self.v * s,
            sigma: [self.sigma[0] * s, self.sigma[1] * s, self.sigma[2] * s],
        }
    }
}

/// A field that is smooth inside each mesh element but may jump across faces.
///
/// `element` selects which side's trace is returned when `(x, t)` lies on a face.
pub trait PiecewiseField: Sync {
    fn eval_in(&self, element: usize, x: &[f64], t: f64) -> FieldValue;
}

/// A globally defined field, e.g. a closed-form exact solution.
pub trait GlobalField: Send + Sync {
    fn eval(&self, x: &[f64], t: f64) -> FieldValue;
}

/// Adapter so any global field can be used where a piecewise one is expected.
pub struct AsPiecewise<'a, F: ?Sized>(pub &'a F);

impl<F: GlobalField + ?Sized> PiecewiseField for AsPiecewise<'_, F> {
    fn eval_in(&self, _element: usize, x: &[f64], t: f64) -> FieldValue {
        self.0.eval(x, t)
    }
}

/// `a - b`, element by element.
pub struct Difference<'a, A: ?Sized, B: ?Sized>(pub &'a A, pub &'a B);

impl<A: PiecewiseField + ?Sized, B: PiecewiseField + ?Sized> PiecewiseField for Difference<'_, A, B> {
    fn eval_in(&self, element: usize, x: &[f64], t: f64) -> FieldValue {
        self.0.eval_in(element, x, t) - self.1.eval_in(element, x, t)
    }
}

/// The identically zero field.
pub struct ZeroField;

impl GlobalField for ZeroField {
    fn eval(&self, _x: &[f64], _t: f64) -> FieldValue {
        FieldValue::ZERO
    }
}

impl PiecewiseField for ZeroField {
    fn eval_in(&self, _element: usize, _x: &[f64], _t: f64) -> FieldValue {
        FieldValue::ZERO
    }
}
