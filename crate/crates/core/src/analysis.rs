//! Norms, energies, errors, closed-form solutions and convergence studies.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::assembly::{
    assemble_system, default_flux_params, graded_flux_params, AssemblyError, AssemblyOptions, Discretization,
    FluxParams,
};
use crate::basis::BasisFamily;
use crate::field::{AsPiecewise, Difference, FieldValue, GlobalField, PiecewiseField};
use crate::mesh::{
    build_slab_mesh, build_tent_mesh_1d, causal_groups, causal_order, Face, FaceKind, MeshError, ProblemSpec,
    SpaceTimeMesh,
};
use crate::solver::{solve_sequential, DiscreteSolution, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("face {0} is not space-like")]
    NotSpaceLike(usize),
    #[error("boundary data on {0:?} faces is not zero")]
    NonHomogeneous(FaceKind),
    #[error("a convergence study needs at least {needed} levels, got {got}")]
    TooFewLevels { needed: usize, got: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn face_speed(mesh: &SpaceTimeMesh, f: &Face) -> f64 {
    mesh.elements[f.minus.or(f.plus).unwrap()].c
}

fn sum_faces<F>(mesh: &SpaceTimeMesh, nodes: usize, per_point: F) -> f64
where
    F: Fn(&Face, &[f64], f64) -> f64 + Sync,
{
    let n = mesh.dim;
    let parts: Vec<f64> = mesh
        .faces
        .par_iter()
        .map(|f| {
            let (pts, ws) = f.quadrature(nodes);
            pts.iter().zip(&ws).map(|(q, w)| w * per_point(f, &q[..n], q[n])).sum()
        })
        .collect();
    parts.iter().sum()
}

/// Squared DG norm terms on one face at one point, split as
/// `(jump and boundary terms, initial/final trace terms)`.
fn dg_terms(mesh: &SpaceTimeMesh, spec: &ProblemSpec, flux: &FluxParams, u: &dyn PiecewiseField, f: &Face, x: &[f64], t: f64) -> (f64, f64) {
    let n = mesh.dim;
    let c = face_speed(mesh, f);
    let nx = &f.normal_x[..];
    match f.kind {
        FaceKind::SpaceLike => {
            let a = u.eval_in(f.minus.unwrap(), x, t);
            let b = u.eval_in(f.plus.unwrap(), x, t);
            let d = a - b;
            let g = (1.0 - f.gamma) * f.normal_t;
            (0.5 * g * (d.v * d.v / (c * c) + d.sigma_norm_sq()), 0.0)
        }
        FaceKind::Initial | FaceKind::Final => {
            let a = u.eval_in(f.minus.or(f.plus).unwrap(), x, t);
            (0.0, 0.5 * (a.v * a.v / (c * c) + a.sigma_norm_sq()))
        }
        FaceKind::TimeLike => {
            let d = u.eval_in(f.minus.unwrap(), x, t) - u.eval_in(f.plus.unwrap(), x, t);
            let dn = dot(&d.sigma[..n], nx);
            (flux.alpha[f.id] * d.v * d.v + flux.beta[f.id] * dn * dn, 0.0)
        }
        FaceKind::Dirichlet => {
            let a = u.eval_in(f.minus.unwrap(), x, t);
            (flux.alpha[f.id] * a.v * a.v, 0.0)
        }
        FaceKind::Neumann => {
            let a = u.eval_in(f.minus.unwrap(), x, t);
            let sn = a.sigma_dot(nx);
            (flux.beta[f.id] * sn * sn, 0.0)
        }
        FaceKind::Robin => {
            let a = u.eval_in(f.minus.unwrap(), x, t);
            let sn = a.sigma_dot(nx);
            let d = flux.delta[f.id];
            let z = spec.impedance / c;
            ((1.0 - d) * z * a.v * a.v + d / z * sn * sn, 0.0)
        }
    }
}

/// `|||u|||_DG^2`.
pub fn dg_norm_sq(mesh: &SpaceTimeMesh, spec: &ProblemSpec, flux: &FluxParams, u: &dyn PiecewiseField, nodes: usize) -> f64 {
    sum_faces(mesh, nodes, |f, x, t| {
        let (a, b) = dg_terms(mesh, spec, flux, u, f, x, t);
        a + b
    })
}

pub fn dg_norm(mesh: &SpaceTimeMesh, spec: &ProblemSpec, flux: &FluxParams, u: &dyn PiecewiseField, nodes: usize) -> f64 {
    dg_norm_sq(mesh, spec, flux, u, nodes).max(0.0).sqrt()
}

/// `|||u|||_DG+^2`: the DG terms plus weighted past traces on space-like
/// faces, averages on time-like faces and the complementary boundary traces.
pub fn dg_plus_norm_sq(mesh: &SpaceTimeMesh, spec: &ProblemSpec, flux: &FluxParams, u: &dyn PiecewiseField, nodes: usize) -> f64 {
    let n = mesh.dim;
    let extra = sum_faces(mesh, nodes, |f, x, t| {
        let c = face_speed(mesh, f);
        let nx = &f.normal_x[..];
        match f.kind {
            FaceKind::SpaceLike => {
                let a = u.eval_in(f.minus.unwrap(), x, t);
                2.0 * f.normal_t / (1.0 - f.gamma) * (a.v * a.v / (c * c) + a.sigma_norm_sq())
            }
            FaceKind::TimeLike => {
                let m = (u.eval_in(f.minus.unwrap(), x, t) + u.eval_in(f.plus.unwrap(), x, t)) * 0.5;
                m.v * m.v / flux.beta[f.id] + m.sigma[..n].iter().map(|s| s * s).sum::<f64>() / flux.alpha[f.id]
            }
            FaceKind::Dirichlet => {
                let sn = u.eval_in(f.minus.unwrap(), x, t).sigma_dot(nx);
                sn * sn / flux.alpha[f.id]
            }
            FaceKind::Neumann => {
                let a = u.eval_in(f.minus.unwrap(), x, t);
                a.v * a.v / flux.beta[f.id]
            }
            _ => 0.0,
        }
    });
    dg_norm_sq(mesh, spec, flux, u, nodes) + extra
}

pub fn dg_plus_norm(mesh: &SpaceTimeMesh, spec: &ProblemSpec, flux: &FluxParams, u: &dyn PiecewiseField, nodes: usize) -> f64 {
    dg_plus_norm_sq(mesh, spec, flux, u, nodes).max(0.0).sqrt()
}

/// Continuity constant of the bilinear form for the given Robin parameters.
pub fn continuity_constant(mesh: &SpaceTimeMesh, flux: &FluxParams) -> f64 {
    mesh.faces_of_kind(FaceKind::Robin)
        .map(|f| {
            let d = flux.delta[f.id];
            2.0 * ((1.0 - d) / d).sqrt().max((d / (1.0 - d)).sqrt())
        })
        .fold(2.0, f64::max)
}

/// Energy density flux `w tau . n_x + (c^-2 w^2 + |tau|^2) n_t / 2`.
pub fn energy_density(u: &FieldValue, nx: &[f64], nt: f64, c: f64) -> f64 {
    u.v * u.sigma_dot(nx) + 0.5 * (u.v * u.v / (c * c) + u.sigma_norm_sq()) * nt
}

/// Which trace an interface face uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceSide {
    Minus,
    Plus,
    /// The initial data of the problem (initial faces only).
    InitialData,
}

/// A space-like interface: faces with the side whose trace is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    pub faces: Vec<(usize, TraceSide)>,
}

impl Interface {
    /// The flat interface `t = 0` with discrete traces.
    pub fn initial(mesh: &SpaceTimeMesh) -> Self {
        Self {
            faces: mesh.faces_of_kind(FaceKind::Initial).map(|f| (f.id, TraceSide::Plus)).collect(),
        }
    }

    /// The flat interface `t = T`.
    pub fn final_time(mesh: &SpaceTimeMesh) -> Self {
        Self {
            faces: mesh.faces_of_kind(FaceKind::Final).map(|f| (f.id, TraceSide::Minus)).collect(),
        }
    }

    /// The front reached after solving the elements in `done`: faces leaving
    /// the set towards the future, with past traces, plus initial faces not yet
    /// covered, which carry the initial data.
    pub fn front(mesh: &SpaceTimeMesh, done: &[bool]) -> Self {
        let faces = mesh
            .faces
            .iter()
            .filter_map(|f| match f.kind {
                FaceKind::Initial if !done[f.plus.unwrap()] => Some((f.id, TraceSide::InitialData)),
                FaceKind::SpaceLike if done[f.minus.unwrap()] && !done[f.plus.unwrap()] => Some((f.id, TraceSide::Minus)),
                FaceKind::Final if done[f.minus.unwrap()] => Some((f.id, TraceSide::Minus)),
                _ => None,
            })
            .collect();
        Self { faces }
    }

    /// Measure of the projection of the interface on `Omega`.
    pub fn projected_measure(&self, mesh: &SpaceTimeMesh) -> f64 {
        self.faces
            .iter()
            .map(|&(id, _)| mesh.faces[id].measure() * mesh.faces[id].normal_t)
            .sum()
    }
}

fn interface_integral<F>(
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    interface: &Interface,
    u: &dyn PiecewiseField,
    nodes: usize,
    integrand: F,
) -> Result<f64, AnalysisError>
where
    F: Fn(&FieldValue, &Face, f64) -> f64,
{
    let n = mesh.dim;
    let mut total = 0.0;
    for &(id, side) in &interface.faces {
        let f = &mesh.faces[id];
        if !f.kind.is_horizontal() {
            return Err(AnalysisError::NotSpaceLike(id));
        }
        let c = face_speed(mesh, f);
        let (pts, ws) = f.quadrature(nodes);
        for (q, w) in pts.iter().zip(&ws) {
            let (x, t) = (&q[..n], q[n]);
            let val = match side {
                TraceSide::Minus => u.eval_in(f.minus.ok_or(AnalysisError::NotSpaceLike(id))?, x, t),
                TraceSide::Plus => u.eval_in(f.plus.ok_or(AnalysisError::NotSpaceLike(id))?, x, t),
                TraceSide::InitialData => spec.data.initial_value(x),
            };
            total += w * integrand(&val, f, c);
        }
    }
    Ok(total)
}

/// Energy `E(Sigma; u)` through a space-like interface.
pub fn energy(mesh: &SpaceTimeMesh, spec: &ProblemSpec, interface: &Interface, u: &dyn PiecewiseField, nodes: usize) -> Result<f64, AnalysisError> {
    interface_integral(mesh, spec, interface, u, nodes, |val, f, c| energy_density(val, &f.normal_x, f.normal_t, c))
}

/// Two-sided bounds `(1 -/+ gamma) n_t (c^-2 w^2 + |tau|^2) / 2` integrated over the interface.
pub fn energy_bounds(mesh: &SpaceTimeMesh, spec: &ProblemSpec, interface: &Interface, u: &dyn PiecewiseField, nodes: usize) -> Result<(f64, f64), AnalysisError> {
    let base = |sign: f64| {
        interface_integral(mesh, spec, interface, u, nodes, move |val, f, c| {
            0.5 * (1.0 + sign * f.gamma) * f.normal_t * (val.v * val.v / (c * c) + val.sigma_norm_sq())
        })
    };
    Ok((base(-1.0)?, base(1.0)?))
}

/// `oint_{dK} (w tau . n_x + (c^-2 w^2 + |tau|^2) n_t / 2)` with the outward
/// normal of `element`, together with the integral of its absolute value.
pub fn element_energy_flux(mesh: &SpaceTimeMesh, element: usize, u: &dyn PiecewiseField, nodes: usize) -> (f64, f64) {
    let n = mesh.dim;
    let el = &mesh.elements[element];
    let mut total = 0.0;
    let mut scale = 0.0;
    for &fid in &el.faces {
        let f = &mesh.faces[fid];
        let s = f.orientation(element);
        let nx: Vec<f64> = f.normal_x.iter().map(|v| s * v).collect();
        let nt = s * f.normal_t;
        let (pts, ws) = f.quadrature(nodes);
        for (q, w) in pts.iter().zip(&ws) {
            let val = u.eval_in(element, &q[..n], q[n]);
            let e = energy_density(&val, &nx, nt, el.c);
            total += w * e;
            scale += w * e.abs();
        }
    }
    (total, scale)
}

/// `sqrt(2 ||c^-1 v_0||^2 + 2 ||sigma_0||^2 + ||(c/theta)^1/2 g_R||^2)`.
pub fn stability_bound(mesh: &SpaceTimeMesh, spec: &ProblemSpec, nodes: usize) -> f64 {
    let theta = spec.impedance;
    let sq = sum_faces(mesh, nodes, |f, x, t| {
        let c = face_speed(mesh, f);
        match f.kind {
            FaceKind::Initial => {
                let u0 = spec.data.initial_value(x);
                2.0 * (u0.v * u0.v / (c * c) + u0.sigma_norm_sq())
            }
            FaceKind::Robin => {
                let g = spec.data.robin.as_ref().map_or(0.0, |d| d.eval(x, t, &f.normal_x, c, theta));
                c / theta * g * g
            }
            _ => 0.0,
        }
    });
    sq.sqrt()
}

/// `(||c^-1 (v - v_h)||^2 + ||sigma - sigma_h||^2)^1/2` over `Q`.
pub fn l2_error(mesh: &SpaceTimeMesh, sol: &dyn PiecewiseField, exact: &dyn GlobalField, nodes: usize) -> f64 {
    let n = mesh.dim;
    let parts: Vec<f64> = mesh
        .elements
        .par_iter()
        .map(|el| {
            let (pts, ws) = el.quadrature(nodes);
            pts.iter()
                .zip(&ws)
                .map(|(q, w)| {
                    let d = sol.eval_in(el.id, &q[..n], q[n]) - exact.eval(&q[..n], q[n]);
                    w * (d.v * d.v / (el.c * el.c) + d.sigma_norm_sq())
                })
                .sum()
        })
        .collect();
    parts.iter().sum::<f64>().sqrt()
}

/// Profile `f` of a plane wave `f(d . x - c t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `amplitude * sin(k z + phase)`.
    Sine { amplitude: f64, k: f64, phase: f64 },
    /// Polynomial with ascending coefficients.
    Poly(Vec<f64>),
    /// `exp(-((z - center) / width)^2)`.
    Gaussian { center: f64, width: f64 },
}

impl Profile {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Profile::Sine { amplitude, k, phase } => amplitude * (k * z + phase).sin(),
            Profile::Poly(c) => c.iter().rev().fold(0.0, |acc, a| acc * z + a),
            Profile::Gaussian { center, width } => (-((z - center) / width).powi(2)).exp(),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Profile::Sine { amplitude, k, phase } => amplitude * k * (k * z + phase).cos(),
            Profile::Poly(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, a)| acc * z + i as f64 * a),
            Profile::Gaussian { center, width } => {
                let s = (z - center) / width;
                -2.0 * s / width * (-s * s).exp()
            }
        }
    }

    /// An antiderivative, when available in closed form.
    pub fn antiderivative(&self, z: f64) -> Option<f64> {
        match self {
            Profile::Sine { amplitude, k, phase } => Some(-amplitude / k * (k * z + phase).cos()),
            Profile::Poly(c) => Some(
                c.iter()
                    .enumerate()
                    .rev()
                    .fold(0.0, |acc, (i, a)| acc * z + a / (i as f64 + 1.0))
                    * z,
            ),
            Profile::Gaussian { .. } => None,
        }
    }
}

/// A closed-form solution of the first-order system.
pub trait ExactSolution: GlobalField {
    /// `|grad v + d_t sigma| + |div sigma + c^-2 d_t v|` at a point.
    fn residual(&self, x: &[f64], t: f64) -> f64;
    /// Scalar potential `U` with `v = d_t U`, `sigma = -grad U`, if known.
    fn potential(&self, x: &[f64], t: f64) -> Option<f64>;
    /// Typical magnitude of the field, used to scale tolerances.
    fn scale(&self) -> f64;
}

/// `(v, sigma) = (c f(d . x - c t), d f(d . x - c t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub direction: Vec<f64>,
    pub c: f64,
    pub profile: Profile,
}

pub fn exact_plane_wave(direction: Vec<f64>, profile: Profile, c: f64) -> PlaneWave {
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12, "plane-wave direction must be a unit vector");
    PlaneWave {
        direction,
        c,
        profile,
    }
}

impl PlaneWave {
    fn phase(&self, x: &[f64], t: f64) -> f64 {
        dot(&self.direction, x) - self.c * t
    }
}

impl GlobalField for PlaneWave {
    fn eval(&self, x: &[f64], t: f64) -> FieldValue {
        let f = self.profile.value(self.phase(x, t));
        let sigma: Vec<f64> = self.direction.iter().map(|d| d * f).collect();
        FieldValue::new(self.c * f, &sigma)
    }
}

impl ExactSolution for PlaneWave {
    fn residual(&self, x: &[f64], t: f64) -> f64 {
        let fp = self.profile.derivative(self.phase(x, t));
        let c = self.c;
        let dt_v = -c * c * fp;
        let vec_part: f64 = self
            .direction
            .iter()
            .map(|d| {
                let grad_v = c * d * fp;
                let dt_sigma = -c * d * fp;
                (grad_v + dt_sigma).abs()
            })
            .sum();
        let div_sigma: f64 = self.direction.iter().map(|d| d * d * fp).sum();
        vec_part + (div_sigma + dt_v / (c * c)).abs()
    }

    fn potential(&self, x: &[f64], t: f64) -> Option<f64> {
        self.profile.antiderivative(self.phase(x, t)).map(|f| -f)
    }

    fn scale(&self) -> f64 {
        match &self.profile {
            Profile::Sine { amplitude, .. } => amplitude.abs() * self.c.max(1.0),
            Profile::Gaussian { .. } => self.c.max(1.0),
            Profile::Poly(c) => c.iter().map(|a| a.abs()).sum::<f64>().max(1e-300) * self.c.max(1.0),
        }
    }
}

/// `U = prod_i cos(k_i pi (x_i - a_i) / L_i) cos(omega t)`, returned as
/// `(d_t U, -grad U)`; the normal flux `sigma . n` vanishes on the box boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandingWave {
    pub modes: Vec<i32>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub c: f64,
}

pub fn exact_standing_wave(modes: Vec<i32>, lo: Vec<f64>, hi: Vec<f64>, c: f64) -> StandingWave {
    assert!(modes.iter().any(|&k| k != 0), "mode vector must be nonzero");
    StandingWave { modes, lo, hi, c }
}

impl StandingWave {
    fn wavenumbers(&self) -> Vec<f64> {
        self.modes
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&k, (a, b))| k as f64 * PI / (b - a))
            .collect()
    }

    pub fn omega(&self) -> f64 {
        self.c * self.wavenumbers().iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    fn factors(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ks = self.wavenumbers();
        let cos = ks.iter().zip(x).zip(&self.lo).map(|((k, xi), a)| (k * (xi - a)).cos()).collect();
        let sin = ks.iter().zip(x).zip(&self.lo).map(|((k, xi), a)| (k * (xi - a)).sin()).collect();
        (cos, sin)
    }
}

impl GlobalField for StandingWave {
    fn eval(&self, x: &[f64], t: f64) -> FieldValue {
        let ks = self.wavenumbers();
        let w = self.omega();
        let (cos, sin) = self.factors(x);
        let prod: f64 = cos.iter().product();
        let v = -w * prod * (w * t).sin();
        let sigma: Vec<f64> = (0..ks.len())
            .map(|i| {
                let others: f64 = cos.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c).product();
                ks[i] * sin[i] * others * (w * t).cos()
            })
            .collect();
        FieldValue::new(v, &sigma)
    }
}

impl ExactSolution for StandingWave {
    fn residual(&self, x: &[f64], t: f64) -> f64 {
        let ks = self.wavenumbers();
        let w = self.omega();
        let (cos, sin) = self.factors(x);
        let n = ks.len();
        let others = |skip: &[usize]| -> f64 {
            cos.iter().enumerate().filter(|(j, _)| !skip.contains(j)).map(|(_, c)| c).product()
        };
        let mut res = 0.0;
        for i in 0..n {
            // d_i v + d_t sigma_i
            let dv = -w * (-ks[i] * sin[i]) * others(&[i]) * (w * t).sin();
            let dsig = -w * ks[i] * sin[i] * others(&[i]) * (w * t).sin();
            res += (dv + dsig).abs();
        }
        let prod: f64 = cos.iter().product();
        let div: f64 = (0..n).map(|i| ks[i] * ks[i] * prod * (w * t).cos()).sum();
        let dtv = -w * w * prod * (w * t).cos();
        res + (div + dtv / (self.c * self.c)).abs()
    }

    fn potential(&self, x: &[f64], t: f64) -> Option<f64> {
        let (cos, _) = self.factors(x);
        Some(cos.iter().product::<f64>() * (self.omega() * t).cos())
    }

    fn scale(&self) -> f64 {
        self.omega().max(self.wavenumbers().iter().map(|k| k.abs()).fold(0.0, f64::max))
    }
}

/// Mesh family for a study level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeshSpec {
    Slab { nx: Vec<usize>, nt: usize },
    Tent { nx: usize, safety: f64 },
}

impl MeshSpec {
    pub fn build(&self, spec: &ProblemSpec) -> Result<SpaceTimeMesh, MeshError> {
        match self {
            MeshSpec::Slab { nx, nt } => build_slab_mesh(spec, nx, *nt),
            MeshSpec::Tent { nx, safety } => build_tent_mesh_1d(spec, *nx, *safety),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxPolicy {
    #[default]
    Default,
    Graded,
}

pub fn flux_for(policy: FluxPolicy, mesh: &SpaceTimeMesh) -> Result<FluxParams, AssemblyError> {
    match policy {
        FluxPolicy::Default => Ok(default_flux_params(mesh)),
        FluxPolicy::Graded => graded_flux_params(mesh, &|_| 1.0, &|_| 1.0),
    }
}

/// Solves one problem on one mesh: discretize, assemble, march.
pub struct Run {
    pub mesh: SpaceTimeMesh,
    pub flux: FluxParams,
    pub solution: DiscreteSolution,
    pub assemble_seconds: f64,
    pub solve_seconds: f64,
}

pub fn run_problem(
    spec: &ProblemSpec,
    mesh: SpaceTimeMesh,
    family: BasisFamily,
    p: usize,
    policy: FluxPolicy,
    options: &AssemblyOptions,
    direction_seed: u64,
) -> Result<Run, AnalysisError> {
    let start = Instant::now();
    let flux = flux_for(policy, &mesh)?;
    let disc = Arc::new(Discretization::new(&mesh, family, &vec![p; mesh.elements.len()], direction_seed)?);
    let system = assemble_system(&mesh, spec, disc, &flux, options)?;
    let assemble_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let solution = solve_sequential(&system, &causal_groups(&mesh)?)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    Ok(Run {
        mesh,
        flux,
        solution,
        assemble_seconds,
        solve_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub err_dg: f64,
    pub err_l2: f64,
    pub err_energy: f64,
    pub t_assemble: f64,
    pub t_solve: f64,
}

/// Fitted convergence rate of one error column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    /// Every error is at round-off level.
    Exact,
    Value(f64),
}

impl Rate {
    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Exact => None,
            Rate::Value(v) => Some(v),
        }
    }

    pub fn to_json(self) -> Value {
        match self {
            Rate::Exact => json!("exact"),
            Rate::Value(v) => json!(v),
        }
    }
}

/// Errors at or below this are treated as exact reproduction.
pub const EXACT_TOLERANCE: f64 = 1e-8;

/// Least-squares slope of `log e` against `log h` over the last three levels
/// (or all of them when there are at most three).
pub fn fit_rate(h: &[f64], err: &[f64]) -> Rate {
    assert_eq!(h.len(), err.len());
    if err.iter().all(|&e| e <= EXACT_TOLERANCE) {
        return Rate::Exact;
    }
    let k = if h.len() > 3 { h.len() - 3 } else { 0 };
    let xs: Vec<f64> = h[k..].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err[k..].iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Rate::Value(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub family: BasisFamily,
    pub p: usize,
    pub rows: Vec<ConvergenceRow>,
    pub rate_dg: Rate,
    pub rate_l2: Rate,
    pub rate_energy: Rate,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,dofs,err_dg,err_l2,err_energy,t_assemble,t_solve\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.6},{:.6}\n",
                r.level, r.h, r.dofs, r.err_dg, r.err_l2, r.err_energy, r.t_assemble, r.t_solve
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Value {
        json!({
            "family": self.family,
            "p": self.p,
            "levels": self.rows.len(),
            "rate_dg": self.rate_dg.to_json(),
            "rate_l2": self.rate_l2.to_json(),
            "rate_energy": self.rate_energy.to_json(),
        })
    }
}

/// Runs the problem on every mesh level and fits error rates against `h`.
///
/// `spec.data` should hold the data of `exact`; errors are measured in the
/// DG norm, in `L2(Q)` and as the energy of the error at `t = T`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    spec: &ProblemSpec,
    exact: &dyn GlobalField,
    family: BasisFamily,
    p: usize,
    levels: &[MeshSpec],
    policy: FluxPolicy,
    options: &AssemblyOptions,
    direction_seed: u64,
) -> Result<ConvergenceTable, AnalysisError> {
    if levels.len() < 3 {
        return Err(AnalysisError::TooFewLevels {
            needed: 3,
            got: levels.len(),
        });
    }
    let nodes = p + 2 + options.extra_nodes;
    let mut rows = Vec::with_capacity(levels.len());
    for (level, ms) in levels.iter().enumerate() {
        let mesh = ms.build(spec)?;
        let run = run_problem(spec, mesh, family, p, policy, options, direction_seed)?;
        let exact_pw = AsPiecewise(exact);
        let err = Difference(&run.solution, &exact_pw);
        let err_dg = dg_norm(&run.mesh, spec, &run.flux, &err, nodes);
        let err_l2 = l2_error(&run.mesh, &run.solution, exact, nodes);
        let err_energy = energy(&run.mesh, spec, &Interface::final_time(&run.mesh), &err, nodes)?;
        rows.push(ConvergenceRow {
            level,
            h: run.mesh.h_max(),
            dofs: run.solution.disc.num_dofs(),
            err_dg,
            err_l2,
            err_energy,
            t_assemble: run.assemble_seconds,
            t_solve: run.solve_seconds,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let rate_dg = fit_rate(&h, &col(|r| r.err_dg));
    let rate_l2 = fit_rate(&h, &col(|r| r.err_l2));
    let rate_energy = fit_rate(&h, &col(|r| r.err_energy));
    Ok(ConvergenceTable {
        family,
        p,
        rows,
        rate_dg,
        rate_l2,
        rate_energy,
    })
}

/// Energy bookkeeping of a solution with homogeneous boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    /// Energy of the initial data, then of the front after each causal level.
    pub front_energies: Vec<f64>,
    /// `E(0; u_h)` with discrete traces on the initial faces.
    pub energy_initial: f64,
    pub energy_final: f64,
    /// Jump and boundary dissipation terms.
    pub dissipation: f64,
    pub dg_norm_sq: f64,
    /// `| |||u|||^2 - E(0) - E(T) - D | / |||u|||^2`.
    pub identity_residual: f64,
    /// Largest increase between consecutive fronts, relative to the first.
    pub max_increase: f64,
    pub monotone: bool,
}

impl DissipationReport {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

fn check_homogeneous(mesh: &SpaceTimeMesh, spec: &ProblemSpec, nodes: usize) -> Result<(), AnalysisError> {
    let n = mesh.dim;
    for f in mesh.faces.iter().filter(|f| f.kind.is_boundary()) {
        let data = match f.kind {
            FaceKind::Dirichlet => spec.data.dirichlet.as_ref(),
            FaceKind::Neumann => spec.data.neumann.as_ref(),
            _ => spec.data.robin.as_ref(),
        };
        let Some(data) = data else { continue };
        let c = face_speed(mesh, f);
        let (pts, _) = f.quadrature(nodes);
        for q in &pts {
            if data.eval(&q[..n], q[n], &f.normal_x, c, spec.impedance) != 0.0 {
                return Err(AnalysisError::NonHomogeneous(f.kind));
            }
        }
    }
    Ok(())
}

/// Energy of every causal front and the dissipation identity.
pub fn dissipation_audit(
    sol: &DiscreteSolution,
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    flux: &FluxParams,
    nodes: usize,
) -> Result<DissipationReport, AnalysisError> {
    check_homogeneous(mesh, spec, nodes)?;
    let levels = causal_order(mesh)?;
    let mut done = vec![false; mesh.elements.len()];
    let mut front_energies = vec![energy(mesh, spec, &Interface::front(mesh, &done), sol, nodes)?];
    for lvl in &levels {
        for &e in lvl {
            done[e] = true;
        }
        front_energies.push(energy(mesh, spec, &Interface::front(mesh, &done), sol, nodes)?);
    }
    let energy_initial = energy(mesh, spec, &Interface::initial(mesh), sol, nodes)?;
    let energy_final = energy(mesh, spec, &Interface::final_time(mesh), sol, nodes)?;
    let dissipation = sum_faces(mesh, nodes, |f, x, t| dg_terms(mesh, spec, flux, sol, f, x, t).0);
    let dg_sq = dg_norm_sq(mesh, spec, flux, sol, nodes);
    let identity_residual = if dg_sq > 0.0 {
        (dg_sq - energy_initial - energy_final - dissipation).abs() / dg_sq
    } else {
        (energy_initial + energy_final + dissipation).abs()
    };
    let reference = front_energies[0].abs();
    let max_increase = front_energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        / reference.max(f64::MIN_POSITIVE);
    let monotone = front_energies.windows(2).all(|w| w[1] <= w[0] + 1e-10 * reference);
    Ok(DissipationReport {
        front_energies,
        energy_initial,
        energy_final,
        dissipation,
        dg_norm_sq: dg_sq,
        identity_residual,
        max_increase,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ZeroField;
    use crate::mesh::BoundaryKind;

    struct Constant(FieldValue);

    impl GlobalField for Constant {
        fn eval(&self, _: &[f64], _: f64) -> FieldValue {
            self.0
        }
    }

    #[test]
    fn dg_norm_of_a_constant_on_one_element() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Dirichlet);
        let mesh = build_slab_mesh(&spec, &[1], 1).unwrap();
        let flux = default_flux_params(&mesh);
        let u = Constant(FieldValue::new(1.0, &[0.0]));
        let norm = dg_norm(&mesh, &spec, &flux, &AsPiecewise(&u), 3);
        assert!((norm - 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(dg_norm(&mesh, &spec, &flux, &AsPiecewise(&ZeroField), 3), 0.0);
    }

    #[test]
    fn energy_of_a_sine_pair() {
        let spec = ProblemSpec::new(vec![0.0], vec![2.0 * PI], 1.0, BoundaryKind::Robin);
        let mesh = build_slab_mesh(&spec, &[8], 1).unwrap();
        struct S;
        impl GlobalField for S {
            fn eval(&self, x: &[f64], _: f64) -> FieldValue {
                FieldValue::new(x[0].sin(), &[x[0].sin()])
            }
        }
        let e = energy(&mesh, &spec, &Interface::initial(&mesh), &AsPiecewise(&S), 10).unwrap();
        assert!((e - PI).abs() < 1e-12);
    }

    #[test]
    fn closed_form_solutions_solve_the_system() {
        let pw = exact_plane_wave(vec![1.0, 0.0], Profile::Sine { amplitude: 1.0, k: 1.0, phase: 0.0 }, 1.0);
        let sw = exact_standing_wave(vec![1, 2], vec![0.0, 0.0], vec![1.0, 2.0], 1.5);
        for i in 0..20 {
            let x = [0.1 * i as f64, 0.37 - 0.05 * i as f64];
            let t = 0.03 * i as f64;
            assert!(pw.residual(&x, t) <= 1e-12);
            assert!(sw.residual(&x, t) <= 1e-12 * sw.scale() * sw.scale());
        }
        let at0 = sw.eval(&[0.3, 0.4], 0.0);
        assert_eq!(at0.v, 0.0);
        let one = exact_plane_wave(vec![1.0], Profile::Poly(vec![1.0]), 2.0).eval(&[0.4], 0.9);
        assert_eq!((one.v, one.sigma[0]), (2.0, 1.0));
    }

    #[test]
    fn potentials_generate_the_fields() {
        let pw = exact_plane_wave(vec![0.6, 0.8], Profile::Poly(vec![0.5, -1.0, 2.0]), 1.3);
        let (x, t, h) = ([0.2, -0.4], 0.3, 1e-5);
        let u = pw.eval(&x, t);
        let dt = (pw.potential(&x, t + h).unwrap() - pw.potential(&x, t - h).unwrap()) / (2.0 * h);
        let dx = (pw.potential(&[x[0] + h, x[1]], t).unwrap() - pw.potential(&[x[0] - h, x[1]], t).unwrap()) / (2.0 * h);
        assert!((dt - u.v).abs() < 1e-8);
        assert!((-dx - u.sigma[0]).abs() < 1e-8);
    }

    #[test]
    fn rate_fit() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = h.iter().map(|h: &f64| 3.0 * h.powf(2.5)).collect();
        assert!((fit_rate(&h, &e).value().unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(fit_rate(&h, &[1e-12; 4]), Rate::Exact);
        let scaled: Vec<f64> = e.iter().map(|v| v * 1e3).collect();
        assert!((fit_rate(&h, &scaled).value().unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn study_needs_three_levels() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Dirichlet);
        let levels = vec![MeshSpec::Slab { nx: vec![1], nt: 1 }];
        let err = convergence_study(&spec, &ZeroField, BasisFamily::Tp, 1, &levels, FluxPolicy::Default, &AssemblyOptions::default(), 0);
        assert!(matches!(err, Err(AnalysisError::TooFewLevels { .. })));
    }
}
