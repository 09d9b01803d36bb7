//! Sparse multivariate polynomials in `n` space variables plus time.
//!
//! A [`Polynomial`] is a normalized map from [`MultiIndex`] to a real
//! coefficient. Exact zeros are never stored, so two polynomials compare equal
//! iff their coefficient maps are identical. Axis `n` always denotes time.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest total degree a polynomial may carry.
pub const MAX_DEGREE: u32 = 32;

/// Largest supported number of space variables.
pub const MAX_SPACE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("total degree {degree} exceeds the cap of {MAX_DEGREE}")]
    DegreeOverflow { degree: u32 },
    #[error("space dimension {0} is not supported (must be 1..=3)")]
    UnsupportedDimension(usize),
}

/// Exponents of a space-time monomial `x^alpha t^alpha_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    space: Vec<u32>,
    time: u32,
}

impl MultiIndex {
    pub fn new(space: Vec<u32>, time: u32) -> Self {
        Self { space, time }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            space: vec![0; dim],
            time: 0,
        }
    }

    pub fn space(&self) -> &[u32] {
        &self.space
    }

    pub fn time(&self) -> u32 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.space.iter().sum::<u32>() + self.time
    }

    /// Exponent along `axis`, where `axis == dim` is time.
    pub fn exponent(&self, axis: usize) -> u32 {
        if axis == self.space.len() {
            self.time
        } else {
            self.space[axis]
        }
    }

    fn exponent_mut(&mut self, axis: usize) -> &mut u32 {
        if axis == self.space.len() {
            &mut self.time
        } else {
            &mut self.space[axis]
        }
    }

    fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            space: self
                .space
                .iter()
                .zip(&other.space)
                .map(|(a, b)| a + b)
                .collect(),
            time: self.time + other.time,
        }
    }
}

/// All space multi-indices of total degree `<= p` in `dim` variables, graded
/// by degree and then reverse-lexicographic within a degree.
pub fn space_multi_indices(dim: usize, p: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for degree in 0..=p {
        let mut current = vec![0u32; dim];
        fill_degree(dim, 0, degree, &mut current, &mut out);
    }
    out
}

fn fill_degree(dim: usize, pos: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == dim {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        fill_degree(dim, pos + 1, remaining - e, current, out);
    }
    current[pos] = 0;
}

/// Multivariate polynomial in `(x_1, .., x_n, t)` with `f64` coefficients.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (idx, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, e) in idx.space.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, e)?,
                }
            }
            match idx.time {
                0 => {}
                1 => write!(f, "*t")?,
                e => write!(f, "*t^{e}")?,
            }
        }
        Ok(())
    }
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(MultiIndex::zero(dim), value);
        p
    }

    /// The coordinate function along `axis` (`axis == dim` is `t`).
    pub fn variable(dim: usize, axis: usize) -> Self {
        assert!(axis <= dim, "axis {axis} out of range for dim {dim}");
        let mut idx = MultiIndex::zero(dim);
        *idx.exponent_mut(axis) = 1;
        let mut p = Self::zero(dim);
        p.add_term(idx, 1.0);
        p
    }

    pub fn monomial(index: MultiIndex, coeff: f64) -> Result<Self, PolyError> {
        let degree = index.total_degree();
        if degree > MAX_DEGREE {
            return Err(PolyError::DegreeOverflow { degree });
        }
        let mut p = Self::zero(index.dim());
        p.add_term(index, coeff);
        Ok(p)
    }

    pub fn from_terms(
        dim: usize,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Result<Self, PolyError> {
        let mut p = Self::zero(dim);
        for (idx, c) in terms {
            if idx.dim() != dim {
                return Err(PolyError::DimensionMismatch {
                    left: dim,
                    right: idx.dim(),
                });
            }
            let degree = idx.total_degree();
            if degree > MAX_DEGREE {
                return Err(PolyError::DegreeOverflow { degree });
            }
            p.add_term(idx, c);
        }
        Ok(p)
    }

    fn add_term(&mut self, idx: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(idx);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + c;
                if sum == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(MultiIndex::total_degree).max()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, &v)| (k, v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, index: &MultiIndex) -> f64 {
        self.terms.get(index).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, &c) in &self.terms {
            out.add_term(k.clone(), c * s);
        }
        out
    }

    /// Exact partial derivative along `axis` (`axis == dim` is time).
    pub fn derive(&self, axis: usize) -> Self {
        assert!(axis <= self.dim, "axis {axis} out of range for dim {}", self.dim);
        let mut out = Self::zero(self.dim);
        for (k, &c) in &self.terms {
            let e = k.exponent(axis);
            if e == 0 {
                continue;
            }
            let mut idx = k.clone();
            *idx.exponent_mut(axis) = e - 1;
            out.add_term(idx, c * e as f64);
        }
        out
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Self, PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        if let (Some(a), Some(b)) = (self.degree(), other.degree()) {
            if a + b > MAX_DEGREE {
                return Err(PolyError::DegreeOverflow { degree: a + b });
            }
        }
        let mut out = Self::zero(self.dim);
        for (ka, &ca) in &self.terms {
            for (kb, &cb) in &other.terms {
                out.add_term(ka.plus(kb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Self, PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let mut out = self.clone();
        for (k, &c) in &other.terms {
            out.add_term(k.clone(), c);
        }
        Ok(out)
    }

    /// Evaluates at `(x, t)`; `x.len()` must equal the space dimension.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        if self.terms.is_empty() {
            return 0.0;
        }
        let max_deg = self.degree().unwrap_or(0) as usize;
        let mut powers = [[1.0f64; (MAX_DEGREE + 1) as usize]; MAX_SPACE_DIM + 1];
        for axis in 0..=self.dim {
            let base = if axis == self.dim { t } else { x[axis] };
            for e in 1..=max_deg {
                powers[axis][e] = powers[axis][e - 1] * base;
            }
        }
        self.terms
            .iter()
            .map(|(k, &c)| {
                let mut m = c * powers[self.dim][k.time as usize];
                for (axis, &e) in k.space.iter().enumerate() {
                    m *= powers[axis][e as usize];
                }
                m
            })
            .sum()
    }

    /// Substitutes `x_i -> s_i x_i` and `t -> s_t t`.
    pub fn scale_variables(&self, space_scale: &[f64], time_scale: f64) -> Self {
        assert_eq!(space_scale.len(), self.dim);
        let mut out = Self::zero(self.dim);
        for (k, &c) in &self.terms {
            let mut f = c * time_scale.powi(k.time as i32);
            for (s, &e) in space_scale.iter().zip(&k.space) {
                f *= s.powi(e as i32);
            }
            out.add_term(k.clone(), f);
        }
        out
    }

    /// The restriction `p(x, 0)`, still as a polynomial in `(x, t)`.
    pub fn at_time_zero(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for (k, &c) in &self.terms {
            if k.time == 0 {
                out.add_term(k.clone(), c);
            }
        }
        out
    }

    /// Composes a univariate polynomial (ascending coefficients) with the affine
    /// form `offset + sum_i space[i] x_i + time t` by Horner's scheme.
    pub fn compose_univariate(
        dim: usize,
        univariate: &[f64],
        space: &[f64],
        time: f64,
        offset: f64,
    ) -> Result<Self, PolyError> {
        assert_eq!(space.len(), dim);
        let mut linear = Self::constant(dim, offset);
        for (i, &a) in space.iter().enumerate() {
            linear = linear.checked_add(&Self::variable(dim, i).scale(a))?;
        }
        linear = linear.checked_add(&Self::variable(dim, dim).scale(time))?;
        let mut acc = Self::zero(dim);
        for &coeff in univariate.iter().rev() {
            acc = acc.checked_mul(&linear)?;
            acc = acc.checked_add(&Self::constant(dim, coeff))?;
        }
        Ok(acc)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(rhs).expect("polynomial addition")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(&rhs.scale(-1.0)).expect("polynomial subtraction")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.checked_mul(rhs).expect("polynomial multiplication")
    }
}

/// Residual of the first-order wave system for the pair `(v, sigma)`:
/// `(grad v + d sigma/dt, div sigma + c^-2 dv/dt)`.
pub fn wave_residual(v: &Polynomial, sigma: &[Polynomial], c: f64) -> (Vec<Polynomial>, Polynomial) {
    let n = v.dim();
    assert_eq!(sigma.len(), n, "sigma must have one component per space axis");
    assert!(c > 0.0, "wave speed must be positive");
    let vector = (0..n)
        .map(|i| &v.derive(i) + &sigma[i].derive(n))
        .collect();
    let mut scalar = v.derive(n).scale(1.0 / (c * c));
    for (i, s) in sigma.iter().enumerate() {
        scalar = &scalar + &s.derive(i);
    }
    (vector, scalar)
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    alpha: Vec<u32>,
    alpha_t: u32,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct PolynomialJson {
    dim: usize,
    terms: Vec<TermJson>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PolynomialJson {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(k, &c)| TermJson {
                    alpha: k.space.clone(),
                    alpha_t: k.time,
                    c,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = PolynomialJson::deserialize(deserializer)?;
        Polynomial::from_terms(
            raw.dim,
            raw.terms
                .into_iter()
                .map(|t| (MultiIndex::new(t.alpha, t.alpha_t), t.c)),
        )
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x(dim: usize, i: usize) -> Polynomial {
        Polynomial::variable(dim, i)
    }

    fn t(dim: usize) -> Polynomial {
        Polynomial::variable(dim, dim)
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(x(1, 0).derive(0), Polynomial::constant(1, 1.0));
        let xt2 = &x(1, 0) * &(&t(1) * &t(1));
        assert_eq!(xt2.derive(1), (&x(1, 0) * &t(1)).scale(2.0));
        assert!(Polynomial::constant(1, 5.0).derive(0).is_zero());
    }

    #[test]
    fn multiplication_examples() {
        let xx = &x(1, 0) * &x(1, 0);
        assert_eq!(xx, Polynomial::monomial(MultiIndex::new(vec![2], 0), 1.0).unwrap());
        let diff = &(&x(1, 0) - &t(1)) * &(&x(1, 0) + &t(1));
        let expected = &(&x(1, 0) * &x(1, 0)) - &(&t(1) * &t(1));
        assert_eq!(diff, expected);
        assert!((&xx * &Polynomial::zero(1)).is_zero());
    }

    #[test]
    fn multiplication_rejects_dimension_mismatch() {
        let err = x(1, 0).checked_mul(&x(2, 0)).unwrap_err();
        assert_eq!(err, PolyError::DimensionMismatch { left: 1, right: 2 });
    }

    #[test]
    fn degree_cap_is_enforced() {
        assert!(Polynomial::monomial(MultiIndex::new(vec![33], 0), 1.0).is_err());
        let big = Polynomial::monomial(MultiIndex::new(vec![20], 0), 1.0).unwrap();
        assert!(matches!(
            big.checked_mul(&big),
            Err(PolyError::DegreeOverflow { degree: 40 })
        ));
    }

    #[test]
    fn evaluation_examples() {
        let p = &(&x(1, 0) * &x(1, 0)) - &(&t(1) * &t(1));
        assert_eq!(p.eval(&[2.0], 1.0), 3.0);
        assert_eq!(Polynomial::zero(2).eval(&[0.3, 0.7], 9.0), 0.0);
        let q = &(&x(2, 0) * &x(2, 1)) * &t(2);
        assert_eq!(q.eval(&[1.0, 2.0], 3.0), 6.0);
    }

    #[test]
    fn residual_examples() {
        let (vec_res, scal_res) = wave_residual(&x(1, 0), &[-&t(1)], 1.0);
        assert!(vec_res[0].is_zero() && scal_res.is_zero());

        let c = 3.0;
        let phase = &x(2, 0) - &t(2).scale(c);
        let (vec_res, scal_res) =
            wave_residual(&phase.scale(c), &[phase.clone(), Polynomial::zero(2)], c);
        assert!(vec_res.iter().all(Polynomial::is_zero));
        assert!(scal_res.is_zero());

        let (_, scal_res) = wave_residual(&t(1), &[Polynomial::zero(1)], 1.0);
        assert_eq!(scal_res, Polynomial::constant(1, 1.0));
    }

    #[test]
    fn compose_univariate_matches_direct_expansion() {
        // (x1 - t)^2 built two ways
        let direct = &(&x(2, 0) - &t(2)) * &(&x(2, 0) - &t(2));
        let composed = Polynomial::compose_univariate(2, &[0.0, 0.0, 1.0], &[1.0, 0.0], -1.0, 0.0).unwrap();
        assert_eq!(direct, composed);
    }

    #[test]
    fn space_multi_indices_counts() {
        assert_eq!(space_multi_indices(1, 3).len(), 4);
        assert_eq!(space_multi_indices(2, 2).len(), 6);
        assert_eq!(space_multi_indices(3, 3).len(), 20);
        assert_eq!(space_multi_indices(2, 1), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn json_layout() {
        let p = (&x(1, 0) * &t(1)).scale(2.5);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"dim": 1, "terms": [{"alpha": [1], "alpha_t": 1, "c": 2.5}]})
        );
        let back: Polynomial = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    fn abs_eval(p: &Polynomial, x: &[f64], t: f64) -> f64 {
        p.terms()
            .map(|(k, c)| {
                let mut m = c.abs() * t.abs().powi(k.time() as i32);
                for (xi, &e) in x.iter().zip(k.space()) {
                    m *= xi.abs().powi(e as i32);
                }
                m
            })
            .sum()
    }

    fn arb_poly(dim: usize) -> impl Strategy<Value = Polynomial> {
        prop::collection::vec(
            (prop::collection::vec(0u32..4, dim), 0u32..4, -3.0f64..3.0),
            0..8,
        )
        .prop_map(move |terms| {
            Polynomial::from_terms(dim, terms.into_iter().map(|(s, t, c)| (MultiIndex::new(s, t), c))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mixed_partials_commute(p in arb_poly(2), i in 0usize..3, j in 0usize..3) {
            prop_assert_eq!(p.derive(i).derive(j), p.derive(j).derive(i));
        }

        #[test]
        fn product_evaluates_to_product_of_values(
            a in arb_poly(2),
            b in arb_poly(2),
            pts in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5), 100),
        ) {
            let ab = &a * &b;
            for (x1, x2, t) in pts {
                let lhs = ab.eval(&[x1, x2], t);
                let rhs = a.eval(&[x1, x2], t) * b.eval(&[x1, x2], t);
                // cancellation-aware scale: product of absolute-term sums
                let scale = abs_eval(&a, &[x1, x2], t) * abs_eval(&b, &[x1, x2], t);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(rhs.abs()));
            }
        }

        #[test]
        fn json_round_trip(p in arb_poly(3)) {
            let s = serde_json::to_string(&p).unwrap();
            let back: Polynomial = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
