//! Local polynomial Trefftz bases.
//!
//! Two families are provided:
//!
//! * `Tp`: the full space of polynomial solutions of the first-order system of
//!   degree `<= p`, obtained by evolving monomial initial data in time with the
//!   coefficient recurrence.
//! * `Wp`: space-time gradients of polynomial solutions of the second-order
//!   wave equation, built from polynomial plane waves `P_k(d . x - c t)`.
//!
//! Every function is stored in element-local coordinates `x - x_K`, `t - t_K`
//! (physical units), so derivatives and the Trefftz residual are unaffected by
//! the shift while coefficients stay well scaled.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldValue;
use crate::polynomial::{space_multi_indices, wave_residual, MultiIndex, PolyError, Polynomial, MAX_DEGREE};
use crate::quadrature::gauss_box;

/// Direction matrices with a condition number at or above this are rejected.
pub const DIRECTION_CONDITION_LIMIT: f64 = 1e12;

const MAX_RESEEDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("unsupported degree/dimension p={p}, n={n} (need p >= 0, 1 <= n <= 3)")]
    OutOfRange { p: usize, n: usize },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("initial data has degree {degree} above the requested p={p}")]
    InitialDegree { degree: u32, p: usize },
    #[error("expected {expected} directions for degree {degree}, got {got}")]
    WrongDirectionCount { degree: usize, expected: usize, got: usize },
    #[error("directions for degree {degree} are not admissible (condition {condition:e})")]
    Inadmissible { degree: usize, condition: f64 },
    #[error("no admissible direction set for degree {degree} after {attempts} reseeds")]
    NoAdmissibleDirections { degree: usize, attempts: usize },
    #[error("direction set covers degrees up to {available}, but {needed} is required")]
    MissingDegree { needed: usize, available: usize },
    #[error("invalid element frame: {0}")]
    InvalidFrame(String),
}

fn check_range(p: usize, n: usize) -> Result<(), BasisError> {
    if !(1..=3).contains(&n) || p > MAX_DEGREE as usize {
        return Err(BasisError::OutOfRange { p, n });
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Dimension of the first-order Trefftz space: `(n+1) * C(p+n, n)`.
pub fn dim_tp(p: usize, n: usize) -> Result<usize, BasisError> {
    check_range(p, n)?;
    Ok((n + 1) * binomial(p + n, n))
}

/// Dimension of the polynomial solutions of the second-order wave equation.
pub fn dim_up(p: usize, n: usize) -> Result<usize, BasisError> {
    check_range(p, n)?;
    Ok(match n {
        1 => 2 * p + 1,
        2 => (p + 1) * (p + 1),
        _ => (p + 1) * (p + 2) * (2 * p + 3) / 6,
    })
}

/// Dimension of the gradient family: `dim_up(p + 1, n) - 1`.
pub fn dim_wp(p: usize, n: usize) -> Result<usize, BasisError> {
    check_range(p, n)?;
    Ok(dim_up(p + 1, n)? - 1)
}

/// Number of plane-wave directions needed at degree `k`.
pub fn directions_at_degree(k: usize, n: usize) -> usize {
    if k == 0 {
        return 1;
    }
    match n {
        1 => 2,
        2 => 2 * k + 1,
        _ => (k + 1) * (k + 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisFamily {
    Tp,
    Wp,
}

impl BasisFamily {
    pub fn dim(self, p: usize, n: usize) -> Result<usize, BasisError> {
        match self {
            BasisFamily::Tp => dim_tp(p, n),
            BasisFamily::Wp => dim_wp(p, n),
        }
    }
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisFamily::Tp => "Tp",
            BasisFamily::Wp => "Wp",
        })
    }
}

/// Centre, anisotropic diameter and wave speed of an element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFrame {
    pub center_x: Vec<f64>,
    pub center_t: f64,
    pub h: f64,
    pub c: f64,
}

impl ElementFrame {
    pub fn new(center_x: Vec<f64>, center_t: f64, h: f64, c: f64) -> Result<Self, BasisError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(BasisError::InvalidFrame(format!("h = {h}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(BasisError::InvalidFrame(format!("c = {c}")));
        }
        Ok(Self {
            center_x,
            center_t,
            h,
            c,
        })
    }

    /// Frame centred at the origin with `h = 1` and `c = 1`.
    pub fn unit(n: usize) -> Self {
        Self {
            center_x: vec![0.0; n],
            center_t: 0.0,
            h: 1.0,
            c: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center_x.len()
    }
}

/// A polynomial pair `(v, sigma)` solving the first-order wave system with speed `c`,
/// expressed in coordinates relative to `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrefftzFunction {
    pub v: Polynomial,
    pub sigma: Vec<Polynomial>,
    pub c: f64,
    pub origin_x: Vec<f64>,
    pub origin_t: f64,
}

impl TrefftzFunction {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn degree(&self) -> u32 {
        std::iter::once(&self.v)
            .chain(&self.sigma)
            .filter_map(Polynomial::degree)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> FieldValue {
        let mut local = [0.0; 3];
        let n = self.dim();
        for i in 0..n {
            local[i] = x[i] - self.origin_x[i];
        }
        let tl = t - self.origin_t;
        let mut out = FieldValue::ZERO;
        out.v = self.v.eval(&local[..n], tl);
        for (i, s) in self.sigma.iter().enumerate() {
            out.sigma[i] = s.eval(&local[..n], tl);
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        std::iter::once(&self.v)
            .chain(&self.sigma)
            .map(Polynomial::max_abs_coeff)
            .fold(0.0, f64::max)
    }

    /// Largest residual coefficient divided by the largest input coefficient.
    pub fn relative_residual(&self) -> f64 {
        let (vector, scalar) = wave_residual(&self.v, &self.sigma, self.c);
        let worst = vector
            .iter()
            .chain(std::iter::once(&scalar))
            .map(Polynomial::max_abs_coeff)
            .fold(0.0, f64::max);
        let scale = self.max_abs_coeff();
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }

    /// Linear combination `sum_i coeffs[i] * funcs[i]`; all must share origin and speed.
    pub fn combine(funcs: &[TrefftzFunction], coeffs: &[f64]) -> TrefftzFunction {
        assert_eq!(funcs.len(), coeffs.len());
        assert!(!funcs.is_empty());
        let n = funcs[0].dim();
        let mut v = Polynomial::zero(n);
        let mut sigma = vec![Polynomial::zero(n); n];
        for (f, &a) in funcs.iter().zip(coeffs) {
            v = &v + &f.v.scale(a);
            for (s, fs) in sigma.iter_mut().zip(&f.sigma) {
                *s = &*s + &fs.scale(a);
            }
        }
        TrefftzFunction {
            v,
            sigma,
            c: funcs[0].c,
            origin_x: funcs[0].origin_x.clone(),
            origin_t: funcs[0].origin_t,
        }
    }
}

/// Evolves polynomial initial data `(v0, sigma0)` (functions of `x` only) into
/// the unique member of the degree-`p` Trefftz space with that trace at `t = 0`.
///
/// The time-slices satisfy `v_k = -(c^2/k) div sigma_{k-1}` and
/// `sigma_{m,k} = -(1/k) d_m v_{k-1}`, which is the coefficient recurrence
/// `a_{v,k,a} = -(c^2/k) sum_m (a_m+1) a_{sigma_m,k-1,a+e_m}` written per slice.
pub fn evolve_from_initial(
    v0: &Polynomial,
    sigma0: &[Polynomial],
    p: usize,
    c: f64,
) -> Result<TrefftzFunction, BasisError> {
    let n = v0.dim();
    check_range(p, n)?;
    assert_eq!(sigma0.len(), n);
    assert!(c > 0.0);
    for poly in std::iter::once(v0).chain(sigma0) {
        if let Some(degree) = poly.degree() {
            if degree as usize > p {
                return Err(BasisError::InitialDegree { degree, p });
            }
        }
        assert!(
            poly.terms().all(|(k, _)| k.time() == 0),
            "initial data must not depend on t"
        );
    }

    let mut v_slice = v0.clone();
    let mut s_slice: Vec<Polynomial> = sigma0.to_vec();
    let mut v = v0.clone();
    let mut sigma = sigma0.to_vec();
    let mut t_pow = Polynomial::constant(n, 1.0);
    let t = Polynomial::variable(n, n);
    for k in 1..=p {
        let kf = k as f64;
        let mut div = Polynomial::zero(n);
        for (m, s) in s_slice.iter().enumerate() {
            div = &div + &s.derive(m);
        }
        let next_v = div.scale(-c * c / kf);
        let next_s: Vec<Polynomial> = (0..n).map(|m| v_slice.derive(m).scale(-1.0 / kf)).collect();
        t_pow = t_pow.checked_mul(&t)?;
        v = v.checked_add(&next_v.checked_mul(&t_pow)?)?;
        for (acc, s) in sigma.iter_mut().zip(&next_s) {
            *acc = acc.checked_add(&s.checked_mul(&t_pow)?)?;
        }
        v_slice = next_v;
        s_slice = next_s;
        if v_slice.is_zero() && s_slice.iter().all(Polynomial::is_zero) {
            break;
        }
    }
    Ok(TrefftzFunction {
        v,
        sigma,
        c,
        origin_x: vec![0.0; n],
        origin_t: 0.0,
    })
}

/// Maps a unit-speed reference function in `(x^, t^)` into the frame:
/// `v = c v^(x'/h, c t'/h)`, `sigma = sigma^(x'/h, c t'/h)`.
fn map_to_frame(reference: TrefftzFunction, frame: &ElementFrame) -> TrefftzFunction {
    let n = frame.dim();
    let space_scale = vec![1.0 / frame.h; n];
    let time_scale = frame.c / frame.h;
    TrefftzFunction {
        v: reference.v.scale_variables(&space_scale, time_scale).scale(frame.c),
        sigma: reference
            .sigma
            .iter()
            .map(|s| s.scale_variables(&space_scale, time_scale))
            .collect(),
        c: frame.c,
        origin_x: frame.center_x.clone(),
        origin_t: frame.center_t,
    }
}

/// Basis of the first-order Trefftz space of degree `p` on the given frame.
///
/// For each scaled monomial seed `((x - x_K)/h)^a` the `n + 1` evolutions of
/// `(seed, 0)` and `(0, seed e_j)` are emitted, in that order.
pub fn build_tp_basis(p: usize, n: usize, frame: &ElementFrame) -> Result<Vec<TrefftzFunction>, BasisError> {
    check_range(p, n)?;
    assert_eq!(frame.dim(), n);
    let mut out = Vec::with_capacity(dim_tp(p, n)?);
    for alpha in space_multi_indices(n, p as u32) {
        let seed = Polynomial::monomial(MultiIndex::new(alpha, 0), 1.0)?;
        for j in 0..=n {
            let (v0, sigma0) = if j == 0 {
                (seed.clone(), vec![Polynomial::zero(n); n])
            } else {
                let mut s = vec![Polynomial::zero(n); n];
                s[j - 1] = seed.clone();
                (Polynomial::zero(n), s)
            };
            let reference = evolve_from_initial(&v0, &sigma0, p, 1.0)?;
            out.push(map_to_frame(reference, frame));
        }
    }
    Ok(out)
}

/// Ascending coefficients of the Legendre polynomial of degree `k`.
pub fn legendre_coefficients(k: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for m in 1..k {
        let mf = m as f64;
        let mut next = vec![0.0; m + 2];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] += (2.0 * mf + 1.0) * c / (mf + 1.0);
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] -= mf * c / (mf + 1.0);
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Unit propagation directions for each degree `k = 0..=p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    pub dim: usize,
    pub per_degree: Vec<Vec<Vec<f64>>>,
    /// Condition estimate of the direction matrix at each degree.
    pub conditions: Vec<f64>,
}

impl DirectionSet {
    /// Builds a set from explicit directions, checking every degree.
    pub fn from_directions(dim: usize, per_degree: Vec<Vec<Vec<f64>>>) -> Result<Self, BasisError> {
        let mut conditions = Vec::with_capacity(per_degree.len());
        for (k, dirs) in per_degree.iter().enumerate() {
            let check = check_directions(k, dirs, dim)?;
            conditions.push(check.condition);
        }
        Ok(Self {
            dim,
            per_degree,
            conditions,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.per_degree.len().saturating_sub(1)
    }

    pub fn is_admissible(&self) -> bool {
        self.conditions.iter().all(|&c| c < DIRECTION_CONDITION_LIMIT)
    }

    fn require(&self, needed: usize) -> Result<(), BasisError> {
        if self.per_degree.len() <= needed {
            return Err(BasisError::MissingDegree {
                needed,
                available: self.max_degree(),
            });
        }
        for k in 0..=needed {
            if !(self.conditions[k] < DIRECTION_CONDITION_LIMIT) {
                return Err(BasisError::Inadmissible {
                    degree: k,
                    condition: self.conditions[k],
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCheck {
    pub admissible: bool,
    pub condition: f64,
}

/// Conditions the matrix of orthonormal (hyper)spherical harmonics of degree
/// `<= k` evaluated at the given directions.
pub fn check_directions(k: usize, dirs: &[Vec<f64>], n: usize) -> Result<DirectionCheck, BasisError> {
    check_range(k, n)?;
    let expected = directions_at_degree(k, n);
    if dirs.len() != expected {
        return Err(BasisError::WrongDirectionCount {
            degree: k,
            expected,
            got: dirs.len(),
        });
    }
    let matrix = harmonic_matrix(k, dirs, n);
    let condition = condition_number(&matrix);
    Ok(DirectionCheck {
        admissible: condition < DIRECTION_CONDITION_LIMIT,
        condition,
    })
}

fn harmonic_matrix(k: usize, dirs: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let cols = dirs.len();
    let rows: Vec<Vec<f64>> = dirs.iter().map(|d| harmonics_at(k, d, n)).collect();
    DMatrix::from_fn(rows[0].len(), cols, |r, j| rows[j][r])
}

/// Real orthonormal harmonics of degree `<= k` on the unit sphere in `R^n`.
fn harmonics_at(k: usize, d: &[f64], n: usize) -> Vec<f64> {
    match n {
        1 => {
            // S^0 = {-1, +1} with counting measure: even and odd harmonics.
            let s = std::f64::consts::FRAC_1_SQRT_2;
            if k == 0 {
                vec![s]
            } else {
                vec![s, s * d[0].signum()]
            }
        }
        2 => {
            let theta = d[1].atan2(d[0]);
            let mut out = vec![1.0 / (2.0 * PI).sqrt()];
            let s = 1.0 / PI.sqrt();
            for l in 1..=k {
                let lf = l as f64;
                out.push(s * (lf * theta).cos());
                out.push(s * (lf * theta).sin());
            }
            out
        }
        _ => real_spherical_harmonics(k, d),
    }
}

fn real_spherical_harmonics(k: usize, d: &[f64]) -> Vec<f64> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let z = (d[2] / norm).clamp(-1.0, 1.0);
    let phi = d[1].atan2(d[0]);
    let sin_theta = (1.0 - z * z).max(0.0).sqrt();
    // associated Legendre P_l^m(z) without Condon-Shortley phase
    let mut plm = vec![vec![0.0; k + 1]; k + 1];
    plm[0][0] = 1.0;
    for m in 1..=k {
        plm[m][m] = plm[m - 1][m - 1] * (2 * m - 1) as f64 * sin_theta;
    }
    for m in 0..k {
        plm[m + 1][m] = (2 * m + 1) as f64 * z * plm[m][m];
    }
    for m in 0..=k {
        for l in (m + 2)..=k {
            plm[l][m] = ((2 * l - 1) as f64 * z * plm[l - 1][m] - (l + m - 1) as f64 * plm[l - 2][m]) / (l - m) as f64;
        }
    }
    let mut out = Vec::with_capacity((k + 1) * (k + 1));
    for l in 0..=k {
        for m in 0..=l {
            // (l-m)!/(l+m)! computed as a product to avoid overflow
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|i| 1.0 / i as f64).product();
            let kfac = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
            if m == 0 {
                out.push(kfac * plm[l][0]);
            } else {
                let base = std::f64::consts::SQRT_2 * kfac * plm[l][m];
                out.push(base * (m as f64 * phi).cos());
                out.push(base * (m as f64 * phi).sin());
            }
        }
    }
    out
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Default direction sets for degrees `0..=p`.
pub fn default_directions(p: usize, n: usize) -> Result<DirectionSet, BasisError> {
    default_directions_seeded(p, n, 0)
}

/// As [`default_directions`]; for `n = 3`, `seed` rotates the Fibonacci lattice.
pub fn default_directions_seeded(p: usize, n: usize, seed: u64) -> Result<DirectionSet, BasisError> {
    check_range(p, n)?;
    let mut per_degree = Vec::with_capacity(p + 1);
    let mut conditions = Vec::with_capacity(p + 1);
    for k in 0..=p {
        let (dirs, check) = match n {
            1 => {
                let dirs = if k == 0 { vec![vec![1.0]] } else { vec![vec![1.0], vec![-1.0]] };
                let check = check_directions(k, &dirs, 1)?;
                (dirs, check)
            }
            2 => {
                let dk = directions_at_degree(k, 2);
                let offset = k as f64 / (p as f64 + 2.0);
                let dirs: Vec<Vec<f64>> = (0..dk)
                    .map(|j| {
                        let theta = 2.0 * PI * j as f64 / dk as f64 + offset;
                        vec![theta.cos(), theta.sin()]
                    })
                    .collect();
                let check = check_directions(k, &dirs, 2)?;
                (dirs, check)
            }
            _ => fibonacci_directions(k, seed)?,
        };
        if !check.admissible {
            return Err(BasisError::Inadmissible {
                degree: k,
                condition: check.condition,
            });
        }
        per_degree.push(dirs);
        conditions.push(check.condition);
    }
    Ok(DirectionSet {
        dim: n,
        per_degree,
        conditions,
    })
}

fn fibonacci_directions(k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, DirectionCheck), BasisError> {
    let count = directions_at_degree(k, 3);
    let golden = PI * (3.0 - 5f64.sqrt());
    for attempt in 0..=MAX_RESEEDS {
        let shift = (seed as f64 + attempt as f64) * 0.618_033_988_749_895 + k as f64 * 0.25;
        let tilt = 0.3 * (seed as f64 + attempt as f64 + 1.0) + 0.1 * k as f64;
        let dirs: Vec<Vec<f64>> = (0..count)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64 + 2.0 * PI * shift;
                rotate_about_x([r * phi.cos(), r * phi.sin(), z], tilt)
            })
            .collect();
        let check = check_directions(k, &dirs, 3)?;
        if check.admissible {
            return Ok((dirs, check));
        }
    }
    Err(BasisError::NoAdmissibleDirections {
        degree: k,
        attempts: MAX_RESEEDS,
    })
}

fn rotate_about_x(p: [f64; 3], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]]
}

fn plane_wave_polynomial(
    univariate: &[f64],
    d: &[f64],
    frame: &ElementFrame,
) -> Result<Polynomial, BasisError> {
    let space: Vec<f64> = d.iter().map(|di| di / frame.h).collect();
    Ok(Polynomial::compose_univariate(
        frame.dim(),
        univariate,
        &space,
        -frame.c / frame.h,
        0.0,
    )?)
}

/// Scalar basis `Q_k(d_{k,j} . x^ - t^)` of the second-order Trefftz space,
/// with `Q_k` the Legendre polynomial of degree `k`.
///
/// The polynomials are in local coordinates relative to the frame centre.
pub fn build_up_basis(
    p: usize,
    n: usize,
    dirs: &DirectionSet,
    frame: &ElementFrame,
) -> Result<Vec<Polynomial>, BasisError> {
    check_range(p, n)?;
    dirs.require(p)?;
    let mut out = Vec::with_capacity(dim_up(p, n)?);
    for k in 0..=p {
        let q = legendre_coefficients(k);
        for d in &dirs.per_degree[k] {
            out.push(plane_wave_polynomial(&q, d, frame)?);
        }
    }
    Ok(out)
}

/// Gradient family `(c P_k(d . x^ - t^), d P_k(d . x^ - t^))` for `k = 0..=p`
/// and the `d_{k+1}` directions of degree `k + 1`.
pub fn build_wp_basis(
    p: usize,
    n: usize,
    dirs: &DirectionSet,
    frame: &ElementFrame,
) -> Result<Vec<TrefftzFunction>, BasisError> {
    check_range(p, n)?;
    dirs.require(p + 1)?;
    let mut out = Vec::with_capacity(dim_wp(p, n)?);
    for k in 0..=p {
        let pk = legendre_coefficients(k);
        for d in &dirs.per_degree[k + 1] {
            let profile = plane_wave_polynomial(&pk, d, frame)?;
            out.push(TrefftzFunction {
                v: profile.scale(frame.c),
                sigma: d.iter().map(|&di| profile.scale(di)).collect(),
                c: frame.c,
                origin_x: frame.center_x.clone(),
                origin_t: frame.center_t,
            });
        }
    }
    Ok(out)
}

/// Builds the local basis of the requested family. `dirs` is only consulted for `Wp`.
pub fn build_family_basis(
    family: BasisFamily,
    p: usize,
    frame: &ElementFrame,
    dirs: Option<&DirectionSet>,
) -> Result<Vec<TrefftzFunction>, BasisError> {
    let n = frame.dim();
    match family {
        BasisFamily::Tp => build_tp_basis(p, n, frame),
        BasisFamily::Wp => match dirs {
            Some(d) => build_wp_basis(p, n, d, frame),
            None => build_wp_basis(p, n, &default_directions(p + 1, n)?, frame),
        },
    }
}

/// Condition number of the L2 Gram matrix of `(v, sigma)` pairs on the box
/// `[-1/2, 1/2]^{n+1}` (the reference element of the unit frame).
pub fn gram_condition(funcs: &[TrefftzFunction]) -> f64 {
    let n = funcs[0].dim();
    let max_deg = funcs.iter().map(TrefftzFunction::degree).max().unwrap_or(0) as usize;
    let lo = vec![-0.5; n + 1];
    let hi = vec![0.5; n + 1];
    let (pts, ws) = gauss_box(max_deg + 1, &lo, &hi);
    let values: Vec<Vec<FieldValue>> = pts
        .iter()
        .map(|q| funcs.iter().map(|f| f.eval(&q[..n], q[n])).collect())
        .collect();
    let m = funcs.len();
    let gram = DMatrix::from_fn(m, m, |i, j| {
        values
            .iter()
            .zip(&ws)
            .map(|(vals, w)| {
                let (a, b) = (vals[i], vals[j]);
                w * (a.v * b.v + (0..n).map(|d| a.sigma[d] * b.sigma[d]).sum::<f64>())
            })
            .sum()
    });
    symmetric_condition(gram)
}

/// Condition number of the Gram matrix of scalar polynomials on `[-1/2, 1/2]^{n+1}`.
pub fn scalar_gram_condition(polys: &[Polynomial]) -> f64 {
    let n = polys[0].dim();
    let max_deg = polys.iter().filter_map(Polynomial::degree).max().unwrap_or(0) as usize;
    let (pts, ws) = gauss_box(max_deg + 1, &vec![-0.5; n + 1], &vec![0.5; n + 1]);
    let values: Vec<Vec<f64>> = pts
        .iter()
        .map(|q| polys.iter().map(|p| p.eval(&q[..n], q[n])).collect())
        .collect();
    let m = polys.len();
    let gram = DMatrix::from_fn(m, m, |i, j| {
        values.iter().zip(&ws).map(|(vals, w)| w * vals[i] * vals[j]).sum()
    });
    symmetric_condition(gram)
}

fn symmetric_condition(gram: DMatrix<f64>) -> f64 {
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Relative least-squares residual of representing `target` in the span of `basis`,
/// measured on the monomial coefficients of all components.
pub fn span_residual(target: &TrefftzFunction, basis: &[TrefftzFunction]) -> f64 {
    let mut keys: Vec<(usize, MultiIndex)> = Vec::new();
    let mut push_keys = |f: &TrefftzFunction| {
        for (comp, poly) in std::iter::once(&f.v).chain(&f.sigma).enumerate() {
            for (k, _) in poly.terms() {
                keys.push((comp, k.clone()));
            }
        }
    };
    push_keys(target);
    basis.iter().for_each(&mut push_keys);
    keys.sort();
    keys.dedup();
    let coeffs = |f: &TrefftzFunction| -> Vec<f64> {
        let comps: Vec<&Polynomial> = std::iter::once(&f.v).chain(&f.sigma).collect();
        keys.iter().map(|(comp, k)| comps[*comp].coefficient(k)).collect()
    };
    let columns: Vec<Vec<f64>> = basis.iter().map(coeffs).collect();
    let a = DMatrix::from_fn(keys.len(), basis.len(), |r, c| columns[c][r]);
    let b = DVector::from_vec(coeffs(target));
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-13).expect("SVD solve");
    let r = &a * x - &b;
    r.norm() / b.norm()
}

/// A local basis with its terms flattened for fast evaluation: powers of the
/// local coordinates are tabulated once per point and shared by all functions.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub functions: Vec<TrefftzFunction>,
    dim: usize,
    max_degree: usize,
    origin: Vec<f64>,
    origin_t: f64,
    // per function, per component (v, sigma_1..sigma_n): (exponents, coefficient)
    terms: Vec<Vec<Vec<([u8; 4], f64)>>>,
}

impl LocalBasis {
    pub fn new(functions: Vec<TrefftzFunction>) -> Self {
        assert!(!functions.is_empty(), "empty local basis");
        let dim = functions[0].dim();
        let origin = functions[0].origin_x.clone();
        let origin_t = functions[0].origin_t;
        let mut max_degree = 0;
        let terms = functions
            .iter()
            .map(|f| {
                assert_eq!(f.origin_x, origin, "basis functions must share an origin");
                std::iter::once(&f.v)
                    .chain(&f.sigma)
                    .map(|poly| {
                        poly.terms()
                            .map(|(k, c)| {
                                let mut e = [0u8; 4];
                                for axis in 0..=dim {
                                    let ex = k.exponent(axis) as usize;
                                    max_degree = max_degree.max(ex);
                                    e[axis] = ex as u8;
                                }
                                (e, c)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            functions,
            dim,
            max_degree,
            origin,
            origin_t,
            terms,
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest total degree among the functions.
    pub fn degree(&self) -> u32 {
        self.functions.iter().map(TrefftzFunction::degree).max().unwrap_or(0)
    }

    /// Values of all functions at a space-time point `[x..., t]`.
    pub fn eval_all(&self, point: &[f64], out: &mut Vec<FieldValue>) {
        let n = self.dim;
        let d = self.max_degree + 1;
        let mut powers = [[0.0f64; (MAX_DEGREE as usize) + 1]; 4];
        for axis in 0..=n {
            let z = if axis < n { point[axis] - self.origin[axis] } else { point[n] - self.origin_t };
            powers[axis][0] = 1.0;
            for k in 1..d {
                powers[axis][k] = powers[axis][k - 1] * z;
            }
        }
        out.clear();
        for comps in &self.terms {
            let mut value = FieldValue::ZERO;
            for (ci, comp) in comps.iter().enumerate() {
                let mut acc = 0.0;
                for (e, c) in comp {
                    let mut m = *c;
                    for axis in 0..=n {
                        m *= powers[axis][e[axis] as usize];
                    }
                    acc += m;
                }
                if ci == 0 {
                    value.v = acc;
                } else {
                    value.sigma[ci - 1] = acc;
                }
            }
            out.push(value);
        }
    }

    /// `sum_i coeffs[i] * phi_i` at a point.
    pub fn eval_combination(&self, coeffs: &[f64], point: &[f64]) -> FieldValue {
        let mut vals = Vec::with_capacity(self.len());
        self.eval_all(point, &mut vals);
        vals.iter()
            .zip(coeffs)
            .fold(FieldValue::ZERO, |acc, (v, c)| acc + *v * *c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::variable(n, i)
    }

    #[test]
    fn compiled_evaluation_matches_polynomials() {
        let frame = ElementFrame::new(vec![0.3, -0.1], 0.7, 0.4, 1.5).unwrap();
        let basis = LocalBasis::new(build_tp_basis(3, 2, &frame).unwrap());
        let point = [0.41, -0.02, 0.83];
        let mut vals = Vec::new();
        basis.eval_all(&point, &mut vals);
        for (f, v) in basis.functions.iter().zip(&vals) {
            let direct = f.eval(&point[..2], point[2]);
            assert!((direct.v - v.v).abs() < 1e-13);
            assert!((direct.sigma[1] - v.sigma[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(dim_tp(2, 2).unwrap(), 18);
        assert_eq!(dim_tp(0, 1).unwrap(), 2);
        assert_eq!(dim_tp(3, 3).unwrap(), 80);
        assert_eq!(dim_up(2, 2).unwrap(), 9);
        assert_eq!(dim_up(0, 3).unwrap(), 1);
        assert_eq!(dim_up(3, 1).unwrap(), 7);
        assert_eq!(dim_wp(1, 2).unwrap(), 8);
        assert_eq!(dim_wp(0, 1).unwrap(), 2);
        assert_eq!(dim_wp(2, 3).unwrap(), 29);
        assert!(dim_tp(1, 0).is_err());
        assert!(dim_up(1, 4).is_err());
    }

    #[test]
    fn evolve_linear_initial_data() {
        let f = evolve_from_initial(&x(1, 0), &[Polynomial::zero(1)], 1, 1.0).unwrap();
        assert_eq!(f.v, x(1, 0));
        assert_eq!(f.sigma[0], Polynomial::variable(1, 1).scale(-1.0));
    }

    #[test]
    fn constants_are_stationary() {
        let f = evolve_from_initial(
            &Polynomial::constant(2, 1.0),
            &[Polynomial::zero(2), Polynomial::zero(2)],
            2,
            1.0,
        )
        .unwrap();
        assert_eq!(f.v, Polynomial::constant(2, 1.0));
        assert!(f.sigma.iter().all(Polynomial::is_zero));
    }

    #[test]
    fn evolve_sigma_seed_is_trefftz_and_keeps_trace() {
        let sigma0 = [x(2, 0), Polynomial::zero(2)];
        let f = evolve_from_initial(&Polynomial::zero(2), &sigma0, 2, 1.0).unwrap();
        assert_eq!(f.v, Polynomial::variable(2, 2).scale(-1.0));
        assert_eq!(f.sigma[0], x(2, 0));
        assert!(f.relative_residual() == 0.0);
        assert!(f.v.at_time_zero().is_zero());
        assert_eq!(f.sigma[0].at_time_zero(), sigma0[0]);
    }

    #[test]
    fn evolve_rejects_high_degree_data() {
        let v0 = &x(1, 0) * &x(1, 0);
        assert!(matches!(
            evolve_from_initial(&v0, &[Polynomial::zero(1)], 1, 1.0),
            Err(BasisError::InitialDegree { degree: 2, p: 1 })
        ));
    }

    #[test]
    fn lowest_order_tp_basis() {
        let frame = ElementFrame::new(vec![0.3], 0.2, 0.5, 2.0).unwrap();
        let basis = build_tp_basis(0, 1, &frame).unwrap();
        assert_eq!(basis.len(), 2);
        assert_eq!(basis[0].v, Polynomial::constant(1, 2.0));
        assert!(basis[0].sigma[0].is_zero());
        assert!(basis[1].v.is_zero());
        assert_eq!(basis[1].sigma[0], Polynomial::constant(1, 1.0));
    }

    #[test]
    fn linear_tp_basis_contains_the_expected_pairs() {
        let basis = build_tp_basis(1, 1, &ElementFrame::unit(1)).unwrap();
        let t = Polynomial::variable(1, 1);
        let has = |v: &Polynomial, s: &Polynomial| basis.iter().any(|f| &f.v == v && &f.sigma[0] == s);
        assert!(has(&x(1, 0), &t.scale(-1.0)));
        assert!(has(&t.scale(-1.0), &x(1, 0)));
    }

    #[test]
    fn legendre_polynomials() {
        assert_eq!(legendre_coefficients(0), vec![1.0]);
        assert_eq!(legendre_coefficients(2), vec![-0.5, 0.0, 1.5]);
        let p3 = legendre_coefficients(3);
        assert!((p3[1] + 1.5).abs() < 1e-15 && (p3[3] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_plane_wave_solves_second_order_equation() {
        let u = Polynomial::compose_univariate(2, &[0.0, 0.0, 1.0], &[1.0, 0.0], -1.0, 0.0).unwrap();
        let residual = &u.derive(2).derive(2) - &(&u.derive(0).derive(0) + &u.derive(1).derive(1));
        assert!(residual.is_zero());
    }

    #[test]
    fn up_basis_solves_the_wave_equation() {
        let frame = ElementFrame::new(vec![0.1, -0.2], 0.4, 0.3, 1.7).unwrap();
        let dirs = default_directions(3, 2).unwrap();
        let basis = build_up_basis(3, 2, &dirs, &frame).unwrap();
        assert_eq!(basis.len(), dim_up(3, 2).unwrap());
        assert_eq!(basis[0], Polynomial::constant(2, 1.0));
        for b in &basis {
            let lap = &b.derive(0).derive(0) + &b.derive(1).derive(1);
            let res = &lap - &b.derive(2).derive(2).scale(1.0 / (1.7 * 1.7));
            assert!(res.max_abs_coeff() <= 1e-12 * b.max_abs_coeff().max(1.0) * 100.0);
        }
    }

    #[test]
    fn lowest_order_wp_basis() {
        let dirs = DirectionSet::from_directions(2, vec![vec![vec![1.0, 0.0]], {
            (0..3)
                .map(|j| {
                    let th = PI / 2.0 + 2.0 * PI * j as f64 / 3.0;
                    vec![th.cos(), th.sin()]
                })
                .collect()
        }])
        .unwrap();
        let frame = ElementFrame::new(vec![0.0, 0.0], 0.0, 1.0, 2.0).unwrap();
        let basis = build_wp_basis(0, 2, &dirs, &frame).unwrap();
        assert_eq!(basis.len(), 3);
        assert_eq!(basis[0].v, Polynomial::constant(2, 2.0));
        assert!((basis[0].sigma[1].coefficient(&MultiIndex::zero(2)) - 1.0).abs() < 1e-15);
        assert_eq!(build_wp_basis(1, 1, &default_directions(2, 1).unwrap(), &ElementFrame::unit(1)).unwrap().len(), 4);
    }

    #[test]
    fn distinct_planar_angles_are_admissible() {
        let dirs: Vec<Vec<f64>> = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
            .iter()
            .map(|t: &f64| vec![t.cos(), t.sin()])
            .collect();
        assert!(check_directions(1, &dirs, 2).unwrap().admissible);
    }

    #[test]
    fn repeated_planar_angle_is_rejected() {
        let dirs: Vec<Vec<f64>> = [0.0, 0.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0]
            .iter()
            .map(|t: &f64| vec![t.cos(), t.sin()])
            .collect();
        assert!(!check_directions(2, &dirs, 2).unwrap().admissible);
    }

    #[test]
    fn tetrahedron_directions_are_admissible() {
        let s = 1.0 / 3f64.sqrt();
        let dirs = vec![
            vec![s, s, s],
            vec![s, -s, -s],
            vec![-s, s, -s],
            vec![-s, -s, s],
        ];
        let check = check_directions(1, &dirs, 3).unwrap();
        assert!(check.admissible);
        assert!(check.condition < 10.0);
    }

    #[test]
    fn latitude_circle_is_rejected() {
        let dirs: Vec<Vec<f64>> = (0..9)
            .map(|j| {
                let phi = 2.0 * PI * j as f64 / 9.0;
                let z: f64 = 0.4;
                let r = (1.0 - z * z).sqrt();
                vec![r * phi.cos(), r * phi.sin(), z]
            })
            .collect();
        assert!(!check_directions(2, &dirs, 3).unwrap().admissible);
    }

    #[test]
    fn wrong_direction_count_is_an_error() {
        let dirs = vec![vec![1.0, 0.0]; 2];
        assert!(matches!(
            check_directions(1, &dirs, 2),
            Err(BasisError::WrongDirectionCount { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn default_directions_shapes() {
        let d = default_directions(1, 2).unwrap();
        assert_eq!(d.per_degree[0].len(), 1);
        assert_eq!(d.per_degree[1].len(), 3);
        for k in 0..=4 {
            assert!(default_directions(k, 3).unwrap().is_admissible());
        }
        for dirs in &default_directions(4, 3).unwrap().per_degree {
            for d in dirs {
                let norm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wp_without_enough_degrees_is_rejected() {
        let dirs = default_directions(1, 2).unwrap();
        assert!(matches!(
            build_wp_basis(1, 2, &dirs, &ElementFrame::unit(2)),
            Err(BasisError::MissingDegree { needed: 2, .. })
        ));
    }

    #[test]
    fn gram_matrices_are_nonsingular() {
        for n in 1..=2 {
            for p in 0..=5 {
                let frame = ElementFrame::unit(n);
                let tp = build_tp_basis(p, n, &frame).unwrap();
                let cond = gram_condition(&tp);
                assert!(cond.is_finite() && cond < 1e12, "Tp n={n} p={p} cond={cond}");
                let wp = build_family_basis(BasisFamily::Wp, p, &frame, None).unwrap();
                let cond = gram_condition(&wp);
                assert!(cond.is_finite() && cond < 1e12, "Wp n={n} p={p} cond={cond}");
            }
        }
    }

    #[test]
    fn wp_lies_in_tp_span() {
        for n in 1..=3 {
            for p in 0..=3 {
                let frame = ElementFrame::new(vec![0.2; n], 0.1, 0.7, 1.3).unwrap();
                let tp = build_tp_basis(p, n, &frame).unwrap();
                let wp = build_family_basis(BasisFamily::Wp, p, &frame, None).unwrap();
                for f in &wp {
                    let r = span_residual(f, &tp);
                    assert!(r <= 1e-10, "n={n} p={p} residual {r}");
                }
            }
        }
    }

    #[test]
    fn divergence_free_stationary_field_is_not_in_wp() {
        // (0, (x2, 0)) is Trefftz for n = 2 but not a gradient field.
        let f = TrefftzFunction {
            v: Polynomial::zero(2),
            sigma: vec![x(2, 1), Polynomial::zero(2)],
            c: 1.0,
            origin_x: vec![0.0, 0.0],
            origin_t: 0.0,
        };
        assert_eq!(f.relative_residual(), 0.0);
        let wp = build_family_basis(BasisFamily::Wp, 1, &ElementFrame::unit(2), None).unwrap();
        assert!(span_residual(&f, &wp) > 1e-3);
    }
}
