//! Skeleton-only assembly of the Trefftz-DG bilinear form and right-hand side.
//!
//! Trial functions are `u = (v, sigma)`, test functions `w = (w, tau)`. With
//! the face normal `n = (n_x, n_t)` pointing from `minus` to `plus`, define
//!
//! ```text
//! Phi(u; w) = v (c^-2 n_t w + tau . n_x) + sigma . (n_t tau + w n_x)
//! ```
//!
//! The contributions are then
//!
//! * space-like: `Phi(u-; w-) - Phi(u-; w+)` (upwind, past to future),
//! * final: `Phi(u; w)`, initial: `Phi(u_0; w)` in the right-hand side,
//! * time-like: centred fluxes plus `alpha [[v]] [[w]]` and `beta [[sigma]] [[tau]]`,
//! * Dirichlet, Neumann and Robin boundary terms and their data.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::basis::{build_tp_basis, build_wp_basis, default_directions_seeded, BasisError, BasisFamily, DirectionSet, LocalBasis};
use crate::field::{FieldValue, PiecewiseField};
use crate::mesh::{Face, FaceKind, MeshKind, ProblemSpec, SpaceTimeMesh};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("missing boundary data provider {0}")]
    MissingData(&'static str),
    #[error("invalid flux parameters on face {face}: {message}")]
    InvalidFlux { face: usize, message: String },
    #[error("graded fluxes need product-in-time elements")]
    NonProductElements,
    #[error("degree map has {got} entries for {expected} elements")]
    DegreeMap { expected: usize, got: usize },
}

/// Per-face flux parameters, indexed by face id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl FluxParams {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        for f in 0..self.alpha.len() {
            let (a, b, d) = (self.alpha[f], self.beta[f], self.delta[f]);
            if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
                return Err(AssemblyError::InvalidFlux {
                    face: f,
                    message: format!("alpha = {a}, beta = {b} must be positive"),
                });
            }
            if !(d > 0.0 && d < 1.0) {
                return Err(AssemblyError::InvalidFlux {
                    face: f,
                    message: format!("delta = {d} must lie in (0, 1)"),
                });
            }
        }
        Ok(())
    }
}

fn face_speed(mesh: &SpaceTimeMesh, face: &Face) -> f64 {
    let e = face.minus.or(face.plus).expect("face without neighbours");
    mesh.elements[e].c
}

/// `alpha = 1/c`, `beta = c`, `delta = 1/2` with `c` the minus-side speed.
pub fn default_flux_params(mesh: &SpaceTimeMesh) -> FluxParams {
    let c: Vec<f64> = mesh.faces.iter().map(|f| face_speed(mesh, f)).collect();
    FluxParams {
        alpha: c.iter().map(|c| 1.0 / c).collect(),
        beta: c.clone(),
        delta: vec![0.5; c.len()],
    }
}

/// Mesh-graded fluxes `alpha = h_T a / (c_- h)`, `beta = c_+ h_T b / h`, where
/// `h` is the smallest space diameter of the adjacent elements, `h_T` the
/// largest over the mesh and `c_-`, `c_+` the smallest and largest adjacent
/// speed. `alpha` is set on time-like and Dirichlet faces, `beta` on time-like
/// and Neumann faces; all other entries keep the default policy.
pub fn graded_flux_params(
    mesh: &SpaceTimeMesh,
    a: &dyn Fn(&[f64]) -> f64,
    b: &dyn Fn(&[f64]) -> f64,
) -> Result<FluxParams, AssemblyError> {
    if mesh.kind != MeshKind::Slab {
        return Err(AssemblyError::NonProductElements);
    }
    let mut flux = default_flux_params(mesh);
    let h_max = mesh.h_space_max();
    for f in &mesh.faces {
        let adj: Vec<usize> = [f.minus, f.plus].into_iter().flatten().collect();
        let h = adj
            .iter()
            .map(|&e| mesh.elements[e].space_diameter())
            .fold(f64::INFINITY, f64::min);
        let c_lo = adj.iter().map(|&e| mesh.elements[e].c).fold(f64::INFINITY, f64::min);
        let c_hi = adj.iter().map(|&e| mesh.elements[e].c).fold(0.0, f64::max);
        let x = f.centroid();
        if matches!(f.kind, FaceKind::TimeLike | FaceKind::Dirichlet) {
            flux.alpha[f.id] = h_max * a(&x) / (c_lo * h);
        }
        if matches!(f.kind, FaceKind::TimeLike | FaceKind::Neumann) {
            flux.beta[f.id] = c_hi * h_max * b(&x) / h;
        }
    }
    flux.validate()?;
    Ok(flux)
}

/// Quadrature nodes and weights on one face; points are `[x..., t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub face: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Gauss rule with `p_max + 2` nodes per face direction.
pub fn face_quadrature(face: &Face, p_max: usize) -> QuadratureRule {
    face_quadrature_nodes(face, p_max + 2)
}

pub fn face_quadrature_nodes(face: &Face, nodes: usize) -> QuadratureRule {
    let (points, weights) = face.quadrature(nodes);
    QuadratureRule {
        face: face.id,
        points,
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Extra Gauss nodes per direction beyond `p + 2`, for non-polynomial data.
    pub extra_nodes: usize,
}

/// Local bases for every element of the mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub family: BasisFamily,
    pub degrees: Vec<usize>,
    pub bases: Vec<LocalBasis>,
    pub offsets: Vec<usize>,
}

impl Discretization {
    pub fn new(
        mesh: &SpaceTimeMesh,
        family: BasisFamily,
        degrees: &[usize],
        direction_seed: u64,
    ) -> Result<Self, AssemblyError> {
        if degrees.len() != mesh.elements.len() {
            return Err(AssemblyError::DegreeMap {
                expected: mesh.elements.len(),
                got: degrees.len(),
            });
        }
        let mut dirs: BTreeMap<usize, DirectionSet> = BTreeMap::new();
        if family == BasisFamily::Wp {
            for &p in degrees {
                if let std::collections::btree_map::Entry::Vacant(e) = dirs.entry(p) {
                    e.insert(default_directions_seeded(p + 1, mesh.dim, direction_seed)?);
                }
            }
        }
        let bases = mesh
            .elements
            .par_iter()
            .map(|el| {
                let p = degrees[el.id];
                let funcs = match family {
                    BasisFamily::Tp => build_tp_basis(p, mesh.dim, &el.frame)?,
                    BasisFamily::Wp => build_wp_basis(p, mesh.dim, &dirs[&p], &el.frame)?,
                };
                Ok(LocalBasis::new(funcs))
            })
            .collect::<Result<Vec<_>, BasisError>>()?;
        let mut offsets = Vec::with_capacity(bases.len() + 1);
        let mut acc = 0;
        for b in &bases {
            offsets.push(acc);
            acc += b.len();
        }
        offsets.push(acc);
        Ok(Self {
            family,
            degrees: degrees.to_vec(),
            bases,
            offsets,
        })
    }

    pub fn uniform(mesh: &SpaceTimeMesh, family: BasisFamily, p: usize) -> Result<Self, AssemblyError> {
        Self::new(mesh, family, &vec![p; mesh.elements.len()], 0)
    }

    pub fn num_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_size(&self, element: usize) -> usize {
        self.bases[element].len()
    }

    /// Coefficients of one element inside a global vector.
    pub fn local<'a>(&self, global: &'a [f64], element: usize) -> &'a [f64] {
        &global[self.offsets[element]..self.offsets[element + 1]]
    }
}

/// Block-sparse system: `blocks[(row, col)]` couples test functions of `row`
/// with trial functions of `col`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub disc: Arc<Discretization>,
    pub blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
}

impl BlockSystem {
    pub fn num_dofs(&self) -> usize {
        self.disc.num_dofs()
    }

    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_dofs();
        let off = &self.disc.offsets;
        let mut a = DMatrix::zeros(n, n);
        for (&(r, c), blk) in &self.blocks {
            a.view_mut((off[r], off[c]), blk.shape()).copy_from(blk);
        }
        let mut b = DVector::zeros(n);
        for (e, rhs) in self.rhs.iter().enumerate() {
            b.rows_mut(off[e], rhs.len()).copy_from(rhs);
        }
        (a, b)
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let off = &self.disc.offsets;
        let mut y = vec![0.0; self.num_dofs()];
        for (&(r, c), blk) in &self.blocks {
            let xc = DVector::from_column_slice(&x[off[c]..off[c + 1]]);
            let yr = blk * xc;
            for (i, v) in yr.iter().enumerate() {
                y[off[r] + i] += v;
            }
        }
        y
    }

    /// `x_w^T A x_u`.
    pub fn bilinear(&self, xw: &[f64], xu: &[f64]) -> f64 {
        self.apply(xu).iter().zip(xw).map(|(a, b)| a * b).sum()
    }

    pub fn rhs_vector(&self) -> Vec<f64> {
        self.rhs.iter().flat_map(|r| r.iter().copied()).collect()
    }

    /// Nonzero entries as `row col value` lines, one per entry.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        let off = &self.disc.offsets;
        for (&(r, c), blk) in &self.blocks {
            for i in 0..blk.nrows() {
                for j in 0..blk.ncols() {
                    let v = blk[(i, j)];
                    if v != 0.0 {
                        writeln!(out, "{} {} {:.17e}", off[r] + i, off[c] + j, v)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Block layout: unknown ranges per element and the list of coupling blocks.
    pub fn layout_json(&self) -> Value {
        let off = &self.disc.offsets;
        json!({
            "num_dofs": self.num_dofs(),
            "family": self.disc.family,
            "elements": (0..self.disc.bases.len())
                .map(|e| json!({ "element": e, "offset": off[e], "size": off[e + 1] - off[e], "p": self.disc.degrees[e] }))
                .collect::<Vec<_>>(),
            "blocks": self.blocks.keys().map(|(r, c)| json!([r, c])).collect::<Vec<_>>(),
        })
    }
}

/// `Phi(u; w)` for a face with normal `(n_x, n_t)` and speed `c`.
#[inline]
fn upwind_flux(u: &FieldValue, w: &FieldValue, nx: &[f64], nt: f64, c: f64) -> f64 {
    let tau_n = w.sigma_dot(nx);
    let sigma_n = u.sigma_dot(nx);
    let sigma_tau: f64 = u.sigma.iter().zip(&w.sigma).map(|(a, b)| a * b).sum();
    u.v * (w.v * nt / (c * c) + tau_n) + sigma_tau * nt + sigma_n * w.v
}

struct FaceContribution {
    blocks: Vec<((usize, usize), DMatrix<f64>)>,
    rhs: Vec<(usize, DVector<f64>)>,
}

fn nodes_for(disc: &Discretization, face: &Face, options: &AssemblyOptions) -> usize {
    let p = [face.minus, face.plus]
        .into_iter()
        .flatten()
        .map(|e| disc.bases[e].degree() as usize)
        .max()
        .unwrap_or(0);
    p + 2 + options.extra_nodes
}

fn check_data(spec: &ProblemSpec, mesh: &SpaceTimeMesh) -> Result<(), AssemblyError> {
    for f in &mesh.faces {
        let missing = match f.kind {
            FaceKind::Dirichlet if spec.data.dirichlet.is_none() => Some("data.dirichlet"),
            FaceKind::Neumann if spec.data.neumann.is_none() => Some("data.neumann"),
            FaceKind::Robin if spec.data.robin.is_none() => Some("data.robin"),
            FaceKind::Initial if spec.data.initial.is_none() => Some("data.initial"),
            _ => None,
        };
        if let Some(name) = missing {
            return Err(AssemblyError::MissingData(name));
        }
    }
    Ok(())
}

/// Assembles the full block system over all faces (in parallel), merging face
/// contributions in face order so the result is deterministic.
pub fn assemble_system(
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    disc: Arc<Discretization>,
    flux: &FluxParams,
    options: &AssemblyOptions,
) -> Result<BlockSystem, AssemblyError> {
    flux.validate()?;
    check_data(spec, mesh)?;
    let contributions: Vec<FaceContribution> = mesh
        .faces
        .par_iter()
        .map(|f| face_contribution(mesh, spec, &disc, flux, f, options))
        .collect();
    let mut blocks: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    let mut rhs: Vec<DVector<f64>> = disc.bases.iter().map(|b| DVector::zeros(b.len())).collect();
    for e in 0..disc.bases.len() {
        let m = disc.block_size(e);
        blocks.insert((e, e), DMatrix::zeros(m, m));
    }
    for contrib in contributions {
        for (key, blk) in contrib.blocks {
            match blocks.get_mut(&key) {
                Some(existing) => *existing += blk,
                None => {
                    blocks.insert(key, blk);
                }
            }
        }
        for (e, r) in contrib.rhs {
            rhs[e] += r;
        }
    }
    Ok(BlockSystem { disc, blocks, rhs })
}

fn face_contribution(
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    disc: &Discretization,
    flux: &FluxParams,
    f: &Face,
    options: &AssemblyOptions,
) -> FaceContribution {
    let nodes = nodes_for(disc, f, options);
    let (points, weights) = f.quadrature(nodes);
    let c = face_speed(mesh, f);
    let nx = &f.normal_x;
    let nt = f.normal_t;
    let (alpha, beta, delta) = (flux.alpha[f.id], flux.beta[f.id], flux.delta[f.id]);
    let theta = spec.impedance;
    let mut out = FaceContribution {
        blocks: Vec::new(),
        rhs: Vec::new(),
    };
    let mut vm = Vec::new();
    let mut vp = Vec::new();
    let n = mesh.dim;

    match f.kind {
        FaceKind::SpaceLike => {
            let (em, ep) = (f.minus.unwrap(), f.plus.unwrap());
            let (bm, bp) = (&disc.bases[em], &disc.bases[ep]);
            let mut a_mm = DMatrix::zeros(bm.len(), bm.len());
            let mut a_pm = DMatrix::zeros(bp.len(), bm.len());
            for (q, wq) in points.iter().zip(&weights) {
                bm.eval_all(q, &mut vm);
                bp.eval_all(q, &mut vp);
                for (j, u) in vm.iter().enumerate() {
                    for (i, w) in vm.iter().enumerate() {
                        a_mm[(i, j)] += wq * upwind_flux(u, w, nx, nt, c);
                    }
                    for (i, w) in vp.iter().enumerate() {
                        a_pm[(i, j)] -= wq * upwind_flux(u, w, nx, nt, c);
                    }
                }
            }
            out.blocks.push(((em, em), a_mm));
            out.blocks.push(((ep, em), a_pm));
        }
        FaceKind::Final => {
            let e = f.minus.unwrap();
            let b = &disc.bases[e];
            let mut a = DMatrix::zeros(b.len(), b.len());
            for (q, wq) in points.iter().zip(&weights) {
                b.eval_all(q, &mut vm);
                for (j, u) in vm.iter().enumerate() {
                    for (i, w) in vm.iter().enumerate() {
                        a[(i, j)] += wq * upwind_flux(u, w, nx, nt, c);
                    }
                }
            }
            out.blocks.push(((e, e), a));
        }
        FaceKind::Initial => {
            let e = f.plus.unwrap();
            let b = &disc.bases[e];
            let init = spec.data.initial.as_ref().unwrap();
            let mut r = DVector::zeros(b.len());
            for (q, wq) in points.iter().zip(&weights) {
                b.eval_all(q, &mut vp);
                let u0 = init.eval(&q[..n], q[n]);
                for (i, w) in vp.iter().enumerate() {
                    r[i] += wq * upwind_flux(&u0, w, nx, nt, c);
                }
            }
            out.rhs.push((e, r));
        }
        FaceKind::TimeLike => {
            let (e1, e2) = (f.minus.unwrap(), f.plus.unwrap());
            let sides = [(e1, 1.0), (e2, -1.0)];
            let sizes = [disc.block_size(e1), disc.block_size(e2)];
            let mut mats: Vec<DMatrix<f64>> = (0..4).map(|k| DMatrix::zeros(sizes[k / 2], sizes[k % 2])).collect();
            let mut vals = [Vec::new(), Vec::new()];
            for (q, wq) in points.iter().zip(&weights) {
                disc.bases[e1].eval_all(q, &mut vals[0]);
                disc.bases[e2].eval_all(q, &mut vals[1]);
                for (bi, &(_, sb)) in sides.iter().enumerate() {
                    for (ai, &(_, sa)) in sides.iter().enumerate() {
                        let m = &mut mats[bi * 2 + ai];
                        for (j, u) in vals[ai].iter().enumerate() {
                            let sn = u.sigma_dot(nx);
                            for (i, w) in vals[bi].iter().enumerate() {
                                let tn = w.sigma_dot(nx);
                                m[(i, j)] += wq
                                    * (0.5 * u.v * sb * tn
                                        + 0.5 * sn * sb * w.v
                                        + alpha * sa * sb * u.v * w.v
                                        + beta * sa * sb * sn * tn);
                            }
                        }
                    }
                }
            }
            let mut it = mats.into_iter();
            for &(eb, _) in &sides {
                for &(ea, _) in &sides {
                    out.blocks.push(((eb, ea), it.next().unwrap()));
                }
            }
        }
        FaceKind::Dirichlet | FaceKind::Neumann | FaceKind::Robin => {
            let e = f.minus.unwrap();
            let b = &disc.bases[e];
            let mut a = DMatrix::zeros(b.len(), b.len());
            let mut r = DVector::zeros(b.len());
            let data = match f.kind {
                FaceKind::Dirichlet => spec.data.dirichlet.as_ref(),
                FaceKind::Neumann => spec.data.neumann.as_ref(),
                _ => spec.data.robin.as_ref(),
            }
            .unwrap();
            for (q, wq) in points.iter().zip(&weights) {
                b.eval_all(q, &mut vm);
                let g = data.eval(&q[..n], q[n], nx, c, theta);
                for (i, w) in vm.iter().enumerate() {
                    let tn = w.sigma_dot(nx);
                    let li = match f.kind {
                        FaceKind::Dirichlet => g * (alpha * w.v - tn),
                        FaceKind::Neumann => g * (beta * tn - w.v),
                        _ => g * ((1.0 - delta) * w.v - delta * c / theta * tn),
                    };
                    r[i] += wq * li;
                    for (j, u) in vm.iter().enumerate() {
                        let sn = u.sigma_dot(nx);
                        let val = match f.kind {
                            FaceKind::Dirichlet => sn * w.v + alpha * u.v * w.v,
                            FaceKind::Neumann => u.v * tn + beta * sn * tn,
                            _ => {
                                (1.0 - delta) * theta / c * u.v * w.v
                                    + (1.0 - delta) * u.v * tn
                                    + delta * sn * w.v
                                    + delta * c / theta * sn * tn
                            }
                        };
                        a[(i, j)] += wq * val;
                    }
                }
            }
            out.blocks.push(((e, e), a));
            out.rhs.push((e, r));
        }
    }
    out
}

/// Element speed, normal and sides for a face, shared by the oracle evaluators.
struct FaceFrame<'a> {
    nx: &'a [f64],
    nt: f64,
    c: f64,
    alpha: f64,
    beta: f64,
    delta: f64,
}

fn frame_of<'a>(mesh: &SpaceTimeMesh, flux: &FluxParams, f: &'a Face) -> FaceFrame<'a> {
    FaceFrame {
        nx: &f.normal_x,
        nt: f.normal_t,
        c: face_speed(mesh, f),
        alpha: flux.alpha[f.id],
        beta: flux.beta[f.id],
        delta: flux.delta[f.id],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct quadrature evaluation of the bilinear form `A(u; w)` written with
/// jumps and averages; no matrix is formed.
pub fn apply_bilinear(
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    flux: &FluxParams,
    u: &dyn PiecewiseField,
    w: &dyn PiecewiseField,
    nodes: usize,
) -> f64 {
    let n = mesh.dim;
    let theta = spec.impedance;
    mesh.faces
        .par_iter()
        .map(|f| {
            let fr = frame_of(mesh, flux, f);
            let (points, weights) = f.quadrature(nodes);
            let mut total = 0.0;
            for (q, wq) in points.iter().zip(&weights) {
                let (x, t) = (&q[..n], q[n]);
                let value = match f.kind {
                    FaceKind::SpaceLike => {
                        let (km, kp) = (f.minus.unwrap(), f.plus.unwrap());
                        let um = u.eval_in(km, x, t);
                        let (wm, wp) = (w.eval_in(km, x, t), w.eval_in(kp, x, t));
                        // outward normals: n on the minus side, -n on the plus side
                        let jump_w_t = wm.v * fr.nt - wp.v * fr.nt;
                        let jump_tau_t: Vec<f64> = (0..n).map(|i| (wm.sigma[i] - wp.sigma[i]) * fr.nt).collect();
                        let jump_tau_n = dot(&wm.sigma[..n], fr.nx) - dot(&wp.sigma[..n], fr.nx);
                        let jump_w_n: Vec<f64> = (0..n).map(|i| wm.v * fr.nx[i] - wp.v * fr.nx[i]).collect();
                        um.v * jump_w_t / (fr.c * fr.c)
                            + dot(&um.sigma[..n], &jump_tau_t)
                            + um.v * jump_tau_n
                            + dot(&um.sigma[..n], &jump_w_n)
                    }
                    FaceKind::Final => {
                        let k = f.minus.unwrap();
                        let (uu, ww) = (u.eval_in(k, x, t), w.eval_in(k, x, t));
                        uu.v * ww.v / (fr.c * fr.c) + dot(&uu.sigma[..n], &ww.sigma[..n])
                    }
                    FaceKind::Initial => 0.0,
                    FaceKind::TimeLike => {
                        let (k1, k2) = (f.minus.unwrap(), f.plus.unwrap());
                        let (u1, u2) = (u.eval_in(k1, x, t), u.eval_in(k2, x, t));
                        let (w1, w2) = (w.eval_in(k1, x, t), w.eval_in(k2, x, t));
                        let avg_v = 0.5 * (u1.v + u2.v);
                        let avg_sigma: Vec<f64> = (0..n).map(|i| 0.5 * (u1.sigma[i] + u2.sigma[i])).collect();
                        let jump_sigma_n = dot(&u1.sigma[..n], fr.nx) - dot(&u2.sigma[..n], fr.nx);
                        let jump_v_n: Vec<f64> = fr.nx.iter().map(|ni| (u1.v - u2.v) * ni).collect();
                        let v_hat = avg_v + fr.beta * jump_sigma_n;
                        let sigma_hat: Vec<f64> = (0..n).map(|i| avg_sigma[i] + fr.alpha * jump_v_n[i]).collect();
                        let jump_tau_n = dot(&w1.sigma[..n], fr.nx) - dot(&w2.sigma[..n], fr.nx);
                        let jump_w_n: Vec<f64> = fr.nx.iter().map(|ni| (w1.v - w2.v) * ni).collect();
                        v_hat * jump_tau_n + dot(&sigma_hat, &jump_w_n)
                    }
                    FaceKind::Dirichlet => {
                        let k = f.minus.unwrap();
                        let (uu, ww) = (u.eval_in(k, x, t), w.eval_in(k, x, t));
                        // v_hat = g_D, sigma_hat = sigma + alpha (v - g_D) n; data part lives in l
                        let sigma_hat_n = uu.sigma_dot(fr.nx) + fr.alpha * uu.v;
                        sigma_hat_n * ww.v
                    }
                    FaceKind::Neumann => {
                        let k = f.minus.unwrap();
                        let (uu, ww) = (u.eval_in(k, x, t), w.eval_in(k, x, t));
                        let v_hat = uu.v + fr.beta * uu.sigma_dot(fr.nx);
                        v_hat * ww.sigma_dot(fr.nx)
                    }
                    FaceKind::Robin => {
                        let k = f.minus.unwrap();
                        let (uu, ww) = (u.eval_in(k, x, t), w.eval_in(k, x, t));
                        let (d, z) = (fr.delta, theta / fr.c);
                        let sn = uu.sigma_dot(fr.nx);
                        let v_hat = (1.0 - d) * uu.v + d * sn / z;
                        let sigma_hat_n = (1.0 - d) * z * uu.v + d * sn;
                        v_hat * ww.sigma_dot(fr.nx) + sigma_hat_n * ww.v
                    }
                };
                total += wq * value;
            }
            total
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Direct quadrature evaluation of the right-hand side functional `l(w)`.
pub fn apply_functional(
    mesh: &SpaceTimeMesh,
    spec: &ProblemSpec,
    flux: &FluxParams,
    w: &dyn PiecewiseField,
    nodes: usize,
) -> f64 {
    let n = mesh.dim;
    let theta = spec.impedance;
    let data = &spec.data;
    mesh.faces
        .par_iter()
        .map(|f| {
            let fr = frame_of(mesh, flux, f);
            let (points, weights) = f.quadrature(nodes);
            let mut total = 0.0;
            for (q, wq) in points.iter().zip(&weights) {
                let (x, t) = (&q[..n], q[n]);
                let value = match f.kind {
                    FaceKind::Initial => {
                        let k = f.plus.unwrap();
                        let ww = w.eval_in(k, x, t);
                        let u0 = data.initial.as_ref().map_or(FieldValue::ZERO, |d| d.eval(x, t));
                        u0.v * ww.v / (fr.c * fr.c) + dot(&u0.sigma[..n], &ww.sigma[..n])
                    }
                    FaceKind::Dirichlet => {
                        let ww = w.eval_in(f.minus.unwrap(), x, t);
                        let g = data.dirichlet.as_ref().map_or(0.0, |d| d.eval(x, t, fr.nx, fr.c, theta));
                        g * (fr.alpha * ww.v - ww.sigma_dot(fr.nx))
                    }
                    FaceKind::Neumann => {
                        let ww = w.eval_in(f.minus.unwrap(), x, t);
                        let g = data.neumann.as_ref().map_or(0.0, |d| d.eval(x, t, fr.nx, fr.c, theta));
                        g * (fr.beta * ww.sigma_dot(fr.nx) - ww.v)
                    }
                    FaceKind::Robin => {
                        let ww = w.eval_in(f.minus.unwrap(), x, t);
                        let g = data.robin.as_ref().map_or(0.0, |d| d.eval(x, t, fr.nx, fr.c, theta));
                        g * ((1.0 - fr.delta) * ww.v - fr.delta * fr.c / theta * ww.sigma_dot(fr.nx))
                    }
                    _ => 0.0,
                };
                total += wq * value;
            }
            total
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}
