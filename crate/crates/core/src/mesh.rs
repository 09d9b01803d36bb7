//! Space-time meshes: Cartesian time slabs in up to three space dimensions and
//! tent-pitched causal meshes in one space dimension.
//!
//! Space-time points are stored as `[x_1, .., x_n, t]`. Every face carries a
//! unit normal pointing from `minus` to `plus`; for boundary, final and
//! initial faces the missing neighbour is `None` and the normal points out of
//! (boundary, final) or into (initial) the domain, so that on every
//! space-like, initial and final face `n_t > 0`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::basis::ElementFrame;
use crate::field::{FieldValue, GlobalField};
use crate::quadrature::{gauss_box, gauss_interval, gauss_triangle};

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("tent pitching requires one space dimension, got {0}")]
    TentDimension(usize),
    #[error("tent pitching requires a uniform wave speed")]
    TentSpeed,
    #[error("tent safety factor must lie in (0, 1), got {0}")]
    TentSafety(f64),
    #[error("tent front stalled at vertex {vertex}: pitch height {height:e}")]
    Stalled { vertex: usize, height: f64 },
    #[error("causal dependency graph has a cycle")]
    Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaceKind {
    SpaceLike,
    TimeLike,
    Initial,
    Final,
    Dirichlet,
    Neumann,
    Robin,
}

impl FaceKind {
    pub fn is_boundary(self) -> bool {
        matches!(self, FaceKind::Dirichlet | FaceKind::Neumann | FaceKind::Robin)
    }

    /// Faces that carry a nonzero time component of the normal.
    pub fn is_horizontal(self) -> bool {
        matches!(self, FaceKind::SpaceLike | FaceKind::Initial | FaceKind::Final)
    }
}

impl From<BoundaryKind> for FaceKind {
    fn from(b: BoundaryKind) -> Self {
        match b {
            BoundaryKind::Dirichlet => FaceKind::Dirichlet,
            BoundaryKind::Neumann => FaceKind::Neumann,
            BoundaryKind::Robin => FaceKind::Robin,
        }
    }
}

/// Piecewise-constant wave speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpeedMap {
    Uniform(f64),
    /// `values[i]` applies between `breaks[i-1]` and `breaks[i]` along `axis`.
    Layered { axis: usize, breaks: Vec<f64>, values: Vec<f64> },
}

impl SpeedMap {
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            SpeedMap::Uniform(c) => *c,
            SpeedMap::Layered { axis, breaks, values } => {
                let i = breaks.iter().take_while(|&&b| x[*axis] > b).count();
                values[i]
            }
        }
    }

    pub fn is_uniform(&self) -> bool {
        match self {
            SpeedMap::Uniform(_) => true,
            SpeedMap::Layered { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), MeshError> {
        let bad = |msg: String| Err(MeshError::InvalidProblem(msg));
        match self {
            SpeedMap::Uniform(c) if !(*c > 0.0 && c.is_finite()) => bad(format!("wave speed {c} must be positive")),
            SpeedMap::Uniform(_) => Ok(()),
            SpeedMap::Layered { axis, breaks, values } => {
                if *axis >= n {
                    return bad(format!("speed axis {axis} out of range"));
                }
                if values.len() != breaks.len() + 1 {
                    return bad("layered speed needs one more value than breaks".into());
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("speed breaks must increase".into());
                }
                if values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return bad("wave speeds must be positive".into());
                }
                Ok(())
            }
        }
    }
}

/// Scalar boundary data `g(x, t)`. The outward normal, local speed and
/// impedance are passed so data derived from an exact solution can form
/// `sigma . n` or the impedance combination.
pub trait BoundaryData: Send + Sync {
    fn eval(&self, x: &[f64], t: f64, normal: &[f64], c: f64, impedance: f64) -> f64;
}

impl<F: Fn(&[f64], f64) -> f64 + Send + Sync> BoundaryData for F {
    fn eval(&self, x: &[f64], t: f64, _normal: &[f64], _c: f64, _impedance: f64) -> f64 {
        self(x, t)
    }
}

/// Boundary data read off a known solution of the system.
pub struct ExactTrace {
    pub field: Arc<dyn GlobalField>,
    pub kind: BoundaryKind,
}

impl BoundaryData for ExactTrace {
    fn eval(&self, x: &[f64], t: f64, normal: &[f64], c: f64, impedance: f64) -> f64 {
        let u = self.field.eval(x, t);
        match self.kind {
            BoundaryKind::Dirichlet => u.v,
            BoundaryKind::Neumann => u.sigma_dot(normal),
            BoundaryKind::Robin => impedance / c * u.v - u.sigma_dot(normal),
        }
    }
}

/// Data providers; each may be absent when the matching boundary part is empty.
#[derive(Clone, Default)]
pub struct ProblemData {
    pub initial: Option<Arc<dyn GlobalField>>,
    pub dirichlet: Option<Arc<dyn BoundaryData>>,
    pub neumann: Option<Arc<dyn BoundaryData>>,
    pub robin: Option<Arc<dyn BoundaryData>>,
}

struct ZeroData;

impl BoundaryData for ZeroData {
    fn eval(&self, _: &[f64], _: f64, _: &[f64], _: f64, _: f64) -> f64 {
        0.0
    }
}

impl ProblemData {
    /// Zero initial and boundary data.
    pub fn homogeneous() -> Self {
        Self {
            initial: Some(Arc::new(crate::field::ZeroField)),
            dirichlet: Some(Arc::new(ZeroData)),
            neumann: Some(Arc::new(ZeroData)),
            robin: Some(Arc::new(ZeroData)),
        }
    }

    /// All data taken from a solution of the system.
    pub fn from_exact(field: Arc<dyn GlobalField>) -> Self {
        let trace = |kind| -> Option<Arc<dyn BoundaryData>> {
            Some(Arc::new(ExactTrace {
                field: field.clone(),
                kind,
            }))
        };
        Self {
            initial: Some(field.clone()),
            dirichlet: trace(BoundaryKind::Dirichlet),
            neumann: trace(BoundaryKind::Neumann),
            robin: trace(BoundaryKind::Robin),
        }
    }

    pub fn initial_value(&self, x: &[f64]) -> FieldValue {
        self.initial.as_ref().map_or(FieldValue::ZERO, |f| f.eval(x, 0.0))
    }
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("initial", &self.initial.is_some())
            .field("dirichlet", &self.dirichlet.is_some())
            .field("neumann", &self.neumann.is_some())
            .field("robin", &self.robin.is_some())
            .finish()
    }
}

/// Initial-boundary value problem on a box `Omega x (0, T)`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub final_time: f64,
    pub speed: SpeedMap,
    /// Robin impedance `theta`.
    pub impedance: f64,
    /// `(low side, high side)` condition per axis.
    pub boundary: Vec<[BoundaryKind; 2]>,
    pub data: ProblemData,
}

impl ProblemSpec {
    /// Unit-speed problem with the same condition on every side and homogeneous data.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, final_time: f64, kind: BoundaryKind) -> Self {
        let n = lo.len();
        Self {
            lo,
            hi,
            final_time,
            speed: SpeedMap::Uniform(1.0),
            impedance: 1.0,
            boundary: vec![[kind; 2]; n],
            data: ProblemData::homogeneous(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn has_boundary(&self, kind: BoundaryKind) -> bool {
        self.boundary.iter().flatten().any(|&k| k == kind)
    }

    pub fn omega_measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.dim();
        let bad = |msg: String| Err(MeshError::InvalidProblem(msg));
        if !(1..=3).contains(&n) {
            return bad(format!("space dimension {n} not in 1..=3"));
        }
        if self.hi.len() != n || self.boundary.len() != n {
            return bad("domain bounds and boundary list must match the dimension".into());
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(b > a)) {
            return bad("domain must have positive extent on every axis".into());
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!("final time {} must be positive", self.final_time));
        }
        if !(self.impedance > 0.0 && self.impedance.is_finite()) {
            return bad(format!("impedance {} must be positive", self.impedance));
        }
        self.speed.validate(n)?;
        if self.data.initial.is_none() {
            return bad("missing provider data.initial".into());
        }
        let checks = [
            (BoundaryKind::Dirichlet, self.data.dirichlet.is_some(), "data.dirichlet"),
            (BoundaryKind::Neumann, self.data.neumann.is_some(), "data.neumann"),
            (BoundaryKind::Robin, self.data.robin.is_some(), "data.robin"),
        ];
        for (kind, present, name) in checks {
            if self.has_boundary(kind) && !present {
                return bad(format!("missing provider {name} for a {kind:?} boundary"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElementGeometry {
    Box { lo: Vec<f64>, hi: Vec<f64>, t0: f64, t1: f64 },
    /// Counter-clockwise polygon in `(x, t)`; the vertex `pole` is the tent top.
    Tent1D { vertices: Vec<[f64; 2]>, pole: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: usize,
    pub geometry: ElementGeometry,
    pub frame: ElementFrame,
    pub c: f64,
    /// Ratio of the radius of a ball (in the `(x, c t)` metric) centred at the
    /// centroid and contained in the element to the diameter `h`.
    pub rho: f64,
    pub slab: Option<usize>,
    pub faces: Vec<usize>,
}

impl Element {
    pub fn volume(&self) -> f64 {
        match &self.geometry {
            ElementGeometry::Box { lo, hi, t0, t1 } => {
                (t1 - t0) * lo.iter().zip(hi).map(|(a, b)| b - a).product::<f64>()
            }
            ElementGeometry::Tent1D { vertices, .. } => polygon_area(vertices),
        }
    }

    /// Spatial diameter.
    pub fn space_diameter(&self) -> f64 {
        match &self.geometry {
            ElementGeometry::Box { lo, hi, .. } => {
                lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
            }
            ElementGeometry::Tent1D { vertices, .. } => {
                let (mn, mx) = vertices
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[0]), b.max(v[0])));
                mx - mn
            }
        }
    }

    pub fn time_extent(&self) -> (f64, f64) {
        match &self.geometry {
            ElementGeometry::Box { t0, t1, .. } => (*t0, *t1),
            ElementGeometry::Tent1D { vertices, .. } => vertices
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[1]), b.max(v[1]))),
        }
    }

    /// Whether `(x, t)` lies in the closed element, with a relative tolerance.
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        let tol = GEOM_TOL * self.frame.h.max(1.0) * 1e2;
        match &self.geometry {
            ElementGeometry::Box { lo, hi, t0, t1 } => {
                t >= t0 - tol
                    && t <= t1 + tol
                    && x.iter().zip(lo.iter().zip(hi)).all(|(xi, (a, b))| *xi >= a - tol && *xi <= b + tol)
            }
            ElementGeometry::Tent1D { vertices, .. } => {
                let m = vertices.len();
                (0..m).all(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % m];
                    let cross = (b[0] - a[0]) * (t - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
                    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    cross >= -tol * len
                })
            }
        }
    }

    /// Vertex list in `[x..., t]` coordinates.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match &self.geometry {
            ElementGeometry::Box { lo, hi, t0, t1 } => {
                let n = lo.len();
                let mut out = Vec::with_capacity(1 << (n + 1));
                for mask in 0..(1usize << (n + 1)) {
                    let mut p: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect();
                    p.push(if mask >> n & 1 == 1 { *t1 } else { *t0 });
                    out.push(p);
                }
                out
            }
            ElementGeometry::Tent1D { vertices, .. } => vertices.iter().map(|v| v.to_vec()).collect(),
        }
    }

    /// Volume quadrature with `nodes` Gauss points per direction; points are `[x..., t]`.
    pub fn quadrature(&self, nodes: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        match &self.geometry {
            ElementGeometry::Box { lo, hi, t0, t1 } => {
                let mut a = lo.clone();
                a.push(*t0);
                let mut b = hi.clone();
                b.push(*t1);
                gauss_box(nodes, &a, &b)
            }
            ElementGeometry::Tent1D { vertices, pole } => {
                let m = vertices.len();
                let apex = vertices[*pole];
                let mut pts = Vec::new();
                let mut ws = Vec::new();
                for i in 0..m {
                    let j = (i + 1) % m;
                    if i == *pole || j == *pole {
                        continue;
                    }
                    let (p, w) = gauss_triangle(nodes, apex, vertices[i], vertices[j]);
                    pts.extend(p.into_iter().map(|q| q.to_vec()));
                    ws.extend(w);
                }
                (pts, ws)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FaceGeometry {
    /// Axis-aligned facet in `[x..., t]`; exactly one axis has `lo == hi`.
    BoxFacet { lo: Vec<f64>, hi: Vec<f64> },
    Segment { a: [f64; 2], b: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub id: usize,
    pub kind: FaceKind,
    pub normal_x: Vec<f64>,
    pub normal_t: f64,
    pub gamma: f64,
    pub minus: Option<usize>,
    pub plus: Option<usize>,
    pub geometry: FaceGeometry,
}

impl Face {
    pub fn measure(&self) -> f64 {
        match &self.geometry {
            FaceGeometry::BoxFacet { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| b - a)
                .filter(|d| *d != 0.0)
                .product(),
            FaceGeometry::Segment { a, b } => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt(),
        }
    }

    /// Gauss rule with `nodes` points per face direction; points are `[x..., t]`.
    pub fn quadrature(&self, nodes: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        match &self.geometry {
            FaceGeometry::BoxFacet { lo, hi } => {
                let fixed = lo.iter().zip(hi).position(|(a, b)| a == b).expect("degenerate facet");
                let a: Vec<f64> = lo.iter().enumerate().filter(|(i, _)| *i != fixed).map(|(_, v)| *v).collect();
                let b: Vec<f64> = hi.iter().enumerate().filter(|(i, _)| *i != fixed).map(|(_, v)| *v).collect();
                let (pts, ws) = gauss_box(nodes, &a, &b);
                let pts = pts
                    .into_iter()
                    .map(|mut p| {
                        p.insert(fixed, lo[fixed]);
                        p
                    })
                    .collect();
                (pts, ws)
            }
            FaceGeometry::Segment { a, b } => {
                let (s, w) = gauss_interval(nodes, 0.0, 1.0);
                let len = self.measure();
                let pts = s
                    .iter()
                    .map(|&s| vec![a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
                    .collect();
                (pts, w.iter().map(|w| w * len).collect())
            }
        }
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match &self.geometry {
            FaceGeometry::BoxFacet { lo, hi } => {
                let free: Vec<usize> = (0..lo.len()).filter(|&i| lo[i] != hi[i]).collect();
                (0..(1usize << free.len()))
                    .map(|mask| {
                        let mut p = lo.clone();
                        for (bit, &axis) in free.iter().enumerate() {
                            if mask >> bit & 1 == 1 {
                                p[axis] = hi[axis];
                            }
                        }
                        p
                    })
                    .collect()
            }
            FaceGeometry::Segment { a, b } => vec![a.to_vec(), b.to_vec()],
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        match &self.geometry {
            FaceGeometry::BoxFacet { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            FaceGeometry::Segment { a, b } => vec![0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
        }
    }

    /// Outward normal of `element` on this face: `+normal` for `minus`, `-normal` for `plus`.
    pub fn orientation(&self, element: usize) -> f64 {
        if self.minus == Some(element) {
            1.0
        } else if self.plus == Some(element) {
            -1.0
        } else {
            panic!("element {element} is not adjacent to face {}", self.id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshKind {
    Slab,
    Tent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeMesh {
    pub dim: usize,
    pub kind: MeshKind,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub final_time: f64,
}

impl SpaceTimeMesh {
    pub fn faces_of_kind(&self, kind: FaceKind) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(move |f| f.kind == kind)
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        self.elements.iter().map(|e| e.frame.h).fold(0.0, f64::max)
    }

    /// Largest element space diameter.
    pub fn h_space_max(&self) -> f64 {
        self.elements.iter().map(Element::space_diameter).fold(0.0, f64::max)
    }

    pub fn max_gamma(&self) -> f64 {
        self.faces.iter().map(|f| f.gamma).fold(0.0, f64::max)
    }

    /// Element containing `(x, t)`; on shared boundaries the earliest element
    /// in causal order wins, which is the past side of space-like faces.
    pub fn locate(&self, x: &[f64], t: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for e in &self.elements {
            if e.contains(x, t) {
                let key = e.time_extent().0;
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, e.id));
                }
            }
        }
        best.map(|(_, id)| id)
    }

    /// JSON description for plotting: vertices of every element and every face.
    pub fn to_json(&self) -> Value {
        let elements: Vec<Value> = self
            .elements
            .iter()
            .map(|e| {
                json!({
                    "id": e.id,
                    "vertices": e.vertices(),
                    "c": e.c,
                    "h": e.frame.h,
                    "rho": e.rho,
                    "slab": e.slab,
                })
            })
            .collect();
        let faces: Vec<Value> = self
            .faces
            .iter()
            .map(|f| {
                json!({
                    "id": f.id,
                    "kind": f.kind,
                    "normal_x": f.normal_x,
                    "normal_t": f.normal_t,
                    "gamma": f.gamma,
                    "minus": f.minus,
                    "plus": f.plus,
                    "vertices": f.vertices(),
                })
            })
            .collect();
        json!({
            "dim": self.dim,
            "kind": self.kind,
            "domain": { "lo": self.lo, "hi": self.hi, "final_time": self.final_time },
            "elements": elements,
            "faces": faces,
        })
    }
}

fn polygon_area(v: &[[f64; 2]]) -> f64 {
    let m = v.len();
    0.5 * (0..m)
        .map(|i| {
            let j = (i + 1) % m;
            v[i][0] * v[j][1] - v[j][0] * v[i][1]
        })
        .sum::<f64>()
}

fn polygon_centroid(v: &[[f64; 2]]) -> [f64; 2] {
    let m = v.len();
    let area = polygon_area(v);
    let mut cx = 0.0;
    let mut ct = 0.0;
    for i in 0..m {
        let j = (i + 1) % m;
        let cr = v[i][0] * v[j][1] - v[j][0] * v[i][1];
        cx += (v[i][0] + v[j][0]) * cr;
        ct += (v[i][1] + v[j][1]) * cr;
    }
    [cx / (6.0 * area), ct / (6.0 * area)]
}

/// Cartesian slab mesh with `nx[i]` cells along axis `i` and `nt` time slabs.
///
/// Elements are numbered slab by slab, cells in lexicographic order with the
/// first axis fastest.
pub fn build_slab_mesh(spec: &ProblemSpec, nx: &[usize], nt: usize) -> Result<SpaceTimeMesh, MeshError> {
    spec.validate()?;
    let n = spec.dim();
    if nx.len() != n {
        return Err(MeshError::InvalidResolution(format!("expected {n} cell counts, got {}", nx.len())));
    }
    if nt == 0 || nx.contains(&0) {
        return Err(MeshError::InvalidResolution("cell and slab counts must be at least 1".into()));
    }
    let cells: usize = nx.iter().product();
    let dt = spec.final_time / nt as f64;
    let node = |axis: usize, i: usize| -> f64 {
        if i == nx[axis] {
            spec.hi[axis]
        } else {
            spec.lo[axis] + (spec.hi[axis] - spec.lo[axis]) * i as f64 / nx[axis] as f64
        }
    };
    let multi = |mut lin: usize| -> Vec<usize> {
        let mut idx = vec![0; n];
        for (a, ix) in idx.iter_mut().enumerate() {
            *ix = lin % nx[a];
            lin /= nx[a];
        }
        idx
    };
    let linear = |idx: &[usize]| -> usize {
        let mut lin = 0;
        for a in (0..n).rev() {
            lin = lin * nx[a] + idx[a];
        }
        lin
    };

    let mut elements = Vec::with_capacity(cells * nt);
    for s in 0..nt {
        let t0 = s as f64 * dt;
        let t1 = if s + 1 == nt { spec.final_time } else { (s + 1) as f64 * dt };
        for cell in 0..cells {
            let idx = multi(cell);
            let lo: Vec<f64> = (0..n).map(|a| node(a, idx[a])).collect();
            let hi: Vec<f64> = (0..n).map(|a| node(a, idx[a] + 1)).collect();
            let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            let c = spec.speed.at(&center);
            let sq: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum();
            let h = (sq + c * c * (t1 - t0) * (t1 - t0)).sqrt();
            let min_side = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| b - a)
                .fold(c * (t1 - t0), f64::min);
            let frame = ElementFrame::new(center, 0.5 * (t0 + t1), h, c).map_err(|e| MeshError::InvalidProblem(e.to_string()))?;
            elements.push(Element {
                id: elements.len(),
                geometry: ElementGeometry::Box { lo, hi, t0, t1 },
                frame,
                c,
                rho: 0.5 * min_side / h,
                slab: Some(s),
                faces: Vec::new(),
            });
        }
    }

    let mut faces: Vec<Face> = Vec::new();
    let push = |faces: &mut Vec<Face>, kind, normal_x: Vec<f64>, normal_t, minus, plus, lo, hi| {
        faces.push(Face {
            id: faces.len(),
            kind,
            normal_x,
            normal_t,
            gamma: 0.0,
            minus,
            plus,
            geometry: FaceGeometry::BoxFacet { lo, hi },
        });
    };
    for s in 0..nt {
        for cell in 0..cells {
            let id = s * cells + cell;
            let (lo, hi, t0, t1) = match &elements[id].geometry {
                ElementGeometry::Box { lo, hi, t0, t1 } => (lo.clone(), hi.clone(), *t0, *t1),
                _ => unreachable!(),
            };
            let st = |t: f64, lo: &[f64]| -> Vec<f64> {
                let mut p = lo.to_vec();
                p.push(t);
                p
            };
            // bottom
            let (kind, minus) = if s == 0 { (FaceKind::Initial, None) } else { (FaceKind::SpaceLike, Some(id - cells)) };
            push(&mut faces, kind, vec![0.0; n], 1.0, minus, Some(id), st(t0, &lo), st(t0, &hi));
            if s + 1 == nt {
                push(&mut faces, FaceKind::Final, vec![0.0; n], 1.0, Some(id), None, st(t1, &lo), st(t1, &hi));
            }
            let idx = multi(cell);
            for a in 0..n {
                let mut flo = st(t0, &lo);
                let mut fhi = st(t1, &hi);
                fhi[a] = lo[a];
                let mut normal = vec![0.0; n];
                normal[a] = 1.0;
                if idx[a] == 0 {
                    let mut out = vec![0.0; n];
                    out[a] = -1.0;
                    push(&mut faces, spec.boundary[a][0].into(), out, 0.0, Some(id), None, flo.clone(), fhi.clone());
                } else {
                    let mut left = idx.clone();
                    left[a] -= 1;
                    let left_id = s * cells + linear(&left);
                    push(&mut faces, FaceKind::TimeLike, normal.clone(), 0.0, Some(left_id), Some(id), flo.clone(), fhi.clone());
                }
                if idx[a] + 1 == nx[a] {
                    flo[a] = hi[a];
                    fhi[a] = hi[a];
                    push(&mut faces, spec.boundary[a][1].into(), normal, 0.0, Some(id), None, flo, fhi);
                }
            }
        }
    }
    attach_faces(&mut elements, &faces);
    Ok(SpaceTimeMesh {
        dim: n,
        kind: MeshKind::Slab,
        elements,
        faces,
        lo: spec.lo.clone(),
        hi: spec.hi.clone(),
        final_time: spec.final_time,
    })
}

fn attach_faces(elements: &mut [Element], faces: &[Face]) {
    for f in faces {
        for e in [f.minus, f.plus].into_iter().flatten() {
            elements[e].faces.push(f.id);
        }
    }
}

/// Segment face between two points with `a[0] < b[0]`, oriented upwards.
fn front_face(id: usize, kind: FaceKind, a: [f64; 2], b: [f64; 2], c: f64, minus: Option<usize>, plus: Option<usize>) -> Face {
    let dx = b[0] - a[0];
    let dt = b[1] - a[1];
    let len = (dx * dx + dt * dt).sqrt();
    let (nx, nt) = (-dt / len, dx / len);
    let gamma = if kind == FaceKind::SpaceLike { c * nx.abs() / nt } else { 0.0 };
    Face {
        id,
        kind,
        normal_x: vec![nx],
        normal_t: nt,
        gamma,
        minus,
        plus,
        geometry: FaceGeometry::Segment { a, b },
    }
}

/// Tent-pitched mesh of `(lo, hi) x (0, T)` over `nx` uniform cells.
///
/// The vertex with the smallest front time (lowest index on ties) is raised to
/// `min_j (tau_j + safety |x_i - x_j| / c)` over its neighbours, capped at `T`,
/// so every front segment keeps `gamma <= safety`.
pub fn build_tent_mesh_1d(spec: &ProblemSpec, nx: usize, safety: f64) -> Result<SpaceTimeMesh, MeshError> {
    spec.validate()?;
    if spec.dim() != 1 {
        return Err(MeshError::TentDimension(spec.dim()));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(MeshError::TentSafety(safety));
    }
    if nx == 0 {
        return Err(MeshError::InvalidResolution("cell count must be at least 1".into()));
    }
    if !spec.speed.is_uniform() {
        return Err(MeshError::TentSpeed);
    }
    let c = spec.speed.at(&[spec.lo[0]]);
    let big_t = spec.final_time;
    let xs: Vec<f64> = (0..=nx)
        .map(|i| if i == nx { spec.hi[0] } else { spec.lo[0] + (spec.hi[0] - spec.lo[0]) * i as f64 / nx as f64 })
        .collect();
    let mut tau = vec![0.0; nx + 1];
    // owner of the current front segment [i, i+1]; None means the initial line
    let mut owner: Vec<Option<usize>> = vec![None; nx];
    let mut elements: Vec<Element> = Vec::new();
    let mut faces: Vec<Face> = Vec::new();

    loop {
        let (i, &ti) = tau
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        if ti >= big_t {
            break;
        }
        let mut new_t = big_t;
        for j in [i.checked_sub(1), (i < nx).then_some(i + 1)].into_iter().flatten() {
            new_t = new_t.min(tau[j] + safety * (xs[i] - xs[j]).abs() / c);
        }
        // land exactly on T when within rounding of it
        if big_t - new_t <= 1e-12 * big_t {
            new_t = big_t;
        }
        let height = new_t - ti;
        if height < 1e-12 * big_t {
            return Err(MeshError::Stalled { vertex: i, height });
        }
        let id = elements.len();
        let top = [xs[i], new_t];
        let mut vertices: Vec<[f64; 2]> = Vec::new();
        if i > 0 {
            vertices.push([xs[i - 1], tau[i - 1]]);
        }
        vertices.push([xs[i], ti]);
        if i < nx {
            vertices.push([xs[i + 1], tau[i + 1]]);
        }
        vertices.push(top);
        let pole = vertices.len() - 1;

        // bottom faces
        for seg in [i.checked_sub(1), (i < nx).then_some(i)].into_iter().flatten() {
            let a = [xs[seg], tau[seg]];
            let b = [xs[seg + 1], tau[seg + 1]];
            let (kind, minus) = match owner[seg] {
                None => (FaceKind::Initial, None),
                Some(prev) => (FaceKind::SpaceLike, Some(prev)),
            };
            faces.push(front_face(faces.len(), kind, a, b, c, minus, Some(id)));
        }
        // lateral boundary faces
        if i == 0 {
            faces.push(Face {
                id: faces.len(),
                kind: spec.boundary[0][0].into(),
                normal_x: vec![-1.0],
                normal_t: 0.0,
                gamma: 0.0,
                minus: Some(id),
                plus: None,
                geometry: FaceGeometry::Segment { a: [xs[0], ti], b: top },
            });
        }
        if i == nx {
            faces.push(Face {
                id: faces.len(),
                kind: spec.boundary[0][1].into(),
                normal_x: vec![1.0],
                normal_t: 0.0,
                gamma: 0.0,
                minus: Some(id),
                plus: None,
                geometry: FaceGeometry::Segment { a: [xs[nx], ti], b: top },
            });
        }

        let centroid = polygon_centroid(&vertices);
        let mut h: f64 = 0.0;
        for a in &vertices {
            for b in &vertices {
                h = h.max(((a[0] - b[0]).powi(2) + c * c * (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        let rho = inscribed_ratio(&vertices, centroid, c, h);
        let frame = ElementFrame::new(vec![centroid[0]], centroid[1], h, c).map_err(|e| MeshError::InvalidProblem(e.to_string()))?;
        elements.push(Element {
            id,
            geometry: ElementGeometry::Tent1D { vertices, pole },
            frame,
            c,
            rho,
            slab: None,
            faces: Vec::new(),
        });
        tau[i] = new_t;
        if i > 0 {
            owner[i - 1] = Some(id);
        }
        if i < nx {
            owner[i] = Some(id);
        }
    }
    for seg in 0..nx {
        let a = [xs[seg], tau[seg]];
        let b = [xs[seg + 1], tau[seg + 1]];
        faces.push(front_face(faces.len(), FaceKind::Final, a, b, c, owner[seg], None));
    }
    attach_faces(&mut elements, &faces);
    Ok(SpaceTimeMesh {
        dim: 1,
        kind: MeshKind::Tent,
        elements,
        faces,
        lo: spec.lo.clone(),
        hi: spec.hi.clone(),
        final_time: big_t,
    })
}

fn inscribed_ratio(vertices: &[[f64; 2]], p: [f64; 2], c: f64, h: f64) -> f64 {
    let m = vertices.len();
    let mut r = f64::INFINITY;
    for i in 0..m {
        let a = vertices[i];
        let b = vertices[(i + 1) % m];
        let (ax, at) = (a[0], c * a[1]);
        let (bx, bt) = (b[0], c * b[1]);
        let (px, pt) = (p[0], c * p[1]);
        let len = ((bx - ax).powi(2) + (bt - at).powi(2)).sqrt();
        let dist = ((bx - ax) * (pt - at) - (bt - at) * (px - ax)).abs() / len;
        r = r.min(dist);
    }
    r / h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    SpaceLikeCondition,
    Gamma,
    Normal,
    TimeLike,
    Adjacency,
    SpeedJump,
    Conformity,
    BoundaryCoverage,
    Volume,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub face: Option<usize>,
    pub element: Option<usize>,
    pub message: String,
}

/// Checks face classification, normals, `gamma`, adjacency, conformity,
/// boundary coverage, total volume and acyclicity. An empty list means valid.
pub fn validate_mesh(mesh: &SpaceTimeMesh) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |kind, face: Option<usize>, element: Option<usize>, message: String| {
        out.push(Violation {
            kind,
            face,
            element,
            message,
        })
    };
    let ne = mesh.elements.len();
    for f in &mesh.faces {
        let fid = Some(f.id);
        let nxn = f.normal_x.iter().map(|v| v * v).sum::<f64>();
        if ((nxn + f.normal_t * f.normal_t).sqrt() - 1.0).abs() > 1e-12 {
            report(ViolationKind::Normal, fid, None, "normal is not a unit vector".into());
        }
        let bad_ref = [f.minus, f.plus].into_iter().flatten().any(|e| e >= ne);
        if bad_ref {
            report(ViolationKind::Adjacency, fid, None, "face references a missing element".into());
            continue;
        }
        let adjacency_ok = match f.kind {
            FaceKind::SpaceLike | FaceKind::TimeLike => f.minus.is_some() && f.plus.is_some() && f.minus != f.plus,
            FaceKind::Initial => f.minus.is_none() && f.plus.is_some(),
            FaceKind::Final | FaceKind::Dirichlet | FaceKind::Neumann | FaceKind::Robin => {
                f.minus.is_some() && f.plus.is_none()
            }
        };
        if !adjacency_ok {
            report(ViolationKind::Adjacency, fid, None, format!("{:?} face has inconsistent neighbours", f.kind));
            continue;
        }
        let c = [f.minus, f.plus]
            .into_iter()
            .flatten()
            .map(|e| mesh.elements[e].c)
            .fold(0.0, f64::max);
        let nx_abs = nxn.sqrt();
        if f.kind.is_horizontal() {
            if !(c * nx_abs < f.normal_t) {
                report(
                    ViolationKind::SpaceLikeCondition,
                    fid,
                    None,
                    format!("space-like condition failed: c|n_x| = {} >= n_t = {}", c * nx_abs, f.normal_t),
                );
            }
            let expected = if f.kind == FaceKind::SpaceLike { c * nx_abs / f.normal_t } else { 0.0 };
            if !(0.0..1.0).contains(&f.gamma) || (f.gamma - expected).abs() > 1e-12 {
                report(ViolationKind::Gamma, fid, None, format!("gamma {} (expected {expected})", f.gamma));
            }
            if matches!(f.kind, FaceKind::Initial | FaceKind::Final) && nx_abs > 1e-14 {
                report(ViolationKind::Normal, fid, None, "initial/final face must be flat".into());
            }
            if f.kind == FaceKind::SpaceLike {
                let (a, b) = (f.minus.unwrap(), f.plus.unwrap());
                if mesh.elements[a].c != mesh.elements[b].c {
                    report(ViolationKind::SpeedJump, fid, None, "wave speed jumps across a space-like face".into());
                }
                let ta = mesh.elements[a].frame.center_t;
                let tb = mesh.elements[b].frame.center_t;
                if ta > tb + 1e-14 {
                    report(ViolationKind::Adjacency, fid, None, "minus side is not in the past".into());
                }
            }
        } else if f.normal_t.abs() > 1e-14 {
            report(ViolationKind::TimeLike, fid, None, format!("time-like face has n_t = {}", f.normal_t));
        }
        // every face vertex must lie on the boundary of its neighbours
        for e in [f.minus, f.plus].into_iter().flatten() {
            let el = &mesh.elements[e];
            let on = f.vertices().iter().all(|p| point_on_boundary(el, p));
            if !on {
                report(
                    ViolationKind::Conformity,
                    fid,
                    Some(e),
                    "face does not lie on the boundary of its element".into(),
                );
            }
        }
    }

    // faces tile every element boundary: closed surface and matching perimeter
    for el in &mesh.elements {
        let n = mesh.dim;
        let mut flux = vec![0.0; n + 1];
        let mut measure = 0.0;
        for &fid in &el.faces {
            let f = &mesh.faces[fid];
            if f.minus != Some(el.id) && f.plus != Some(el.id) {
                continue;
            }
            let s = f.orientation(el.id);
            let m = f.measure();
            for (acc, v) in flux.iter_mut().zip(f.normal_x.iter()) {
                *acc += s * v * m;
            }
            flux[n] += s * f.normal_t * m;
            measure += m;
        }
        let expected = element_boundary_measure(el);
        let scale = expected.max(1e-300);
        if flux.iter().any(|v| v.abs() > 1e-10 * scale) || (measure - expected).abs() > 1e-10 * scale {
            out.push(Violation {
                kind: ViolationKind::Conformity,
                face: None,
                element: Some(el.id),
                message: format!("faces do not tile the element boundary (measure {measure} vs {expected})"),
            });
        }
    }

    let omega = mesh.lo.iter().zip(&mesh.hi).map(|(a, b)| b - a).product::<f64>();
    let total: f64 = mesh.elements.iter().map(Element::volume).sum();
    if (total - omega * mesh.final_time).abs() > 1e-12 * omega * mesh.final_time {
        out.push(Violation {
            kind: ViolationKind::Volume,
            face: None,
            element: None,
            message: format!("element volumes sum to {total}, expected {}", omega * mesh.final_time),
        });
    }
    let sum_kind = |pred: &dyn Fn(&Face) -> bool| -> f64 { mesh.faces.iter().filter(|f| pred(f)).map(Face::measure).sum() };
    let initial = sum_kind(&|f| f.kind == FaceKind::Initial);
    let final_m = sum_kind(&|f| f.kind == FaceKind::Final);
    let lateral = sum_kind(&|f| f.kind.is_boundary());
    let perimeter: f64 = (0..mesh.dim)
        .map(|a| {
            2.0 * (0..mesh.dim)
                .filter(|&b| b != a)
                .map(|b| mesh.hi[b] - mesh.lo[b])
                .product::<f64>()
        })
        .sum();
    for (name, got, want) in [
        ("initial", initial, omega),
        ("final", final_m, omega),
        ("lateral", lateral, perimeter * mesh.final_time),
    ] {
        if (got - want).abs() > 1e-10 * want {
            out.push(Violation {
                kind: ViolationKind::BoundaryCoverage,
                face: None,
                element: None,
                message: format!("{name} faces cover {got}, expected {want}"),
            });
        }
    }
    if causal_groups(mesh).is_err() {
        out.push(Violation {
            kind: ViolationKind::Cycle,
            face: None,
            element: None,
            message: "causal dependency graph has a cycle".into(),
        });
    }
    out
}

fn element_boundary_measure(el: &Element) -> f64 {
    match &el.geometry {
        ElementGeometry::Box { lo, hi, t0, t1 } => {
            let mut sides: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
            sides.push(t1 - t0);
            (0..sides.len())
                .map(|i| {
                    2.0 * sides
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, s)| s)
                        .product::<f64>()
                })
                .sum()
        }
        ElementGeometry::Tent1D { vertices, .. } => {
            let m = vertices.len();
            (0..m)
                .map(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % m];
                    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
                })
                .sum()
        }
    }
}

fn point_on_boundary(el: &Element, p: &[f64]) -> bool {
    let tol = 1e-10 * el.frame.h.max(1.0);
    match &el.geometry {
        ElementGeometry::Box { lo, hi, t0, t1 } => {
            let mut a = lo.clone();
            a.push(*t0);
            let mut b = hi.clone();
            b.push(*t1);
            let inside = p.iter().zip(a.iter().zip(&b)).all(|(x, (l, h))| *x >= l - tol && *x <= h + tol);
            let on_side = p.iter().zip(a.iter().zip(&b)).any(|(x, (l, h))| (x - l).abs() <= tol || (x - h).abs() <= tol);
            inside && on_side
        }
        ElementGeometry::Tent1D { vertices, .. } => {
            let m = vertices.len();
            (0..m).any(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % m];
                let (dx, dt) = (b[0] - a[0], b[1] - a[1]);
                let len2 = dx * dx + dt * dt;
                let s = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dt) / len2;
                let q = [a[0] + s * dx, a[1] + s * dt];
                (-1e-12..=1.0 + 1e-12).contains(&s) && ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= tol
            })
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Causal levels, each split into groups of elements coupled through
/// time-like faces. Groups inside a level are independent of each other;
/// every group depends only on groups in earlier levels.
pub fn causal_groups(mesh: &SpaceTimeMesh) -> Result<Vec<Vec<Vec<usize>>>, MeshError> {
    let ne = mesh.elements.len();
    let mut parent: Vec<usize> = (0..ne).collect();
    for f in mesh.faces_of_kind(FaceKind::TimeLike) {
        let (a, b) = (f.minus.unwrap(), f.plus.unwrap());
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut group_of = vec![0usize; ne];
    let mut roots: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for e in 0..ne {
        let r = find(&mut parent, e);
        let g = *roots.entry(r).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        group_of[e] = g;
        members[g].push(e);
    }
    let ng = members.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); ng];
    let mut indeg = vec![0usize; ng];
    for f in mesh.faces_of_kind(FaceKind::SpaceLike) {
        let (a, b) = (group_of[f.minus.unwrap()], group_of[f.plus.unwrap()]);
        if a == b {
            return Err(MeshError::Cycle);
        }
        succ[a].push(b);
        indeg[b] += 1;
    }
    let mut level = vec![0usize; ng];
    let mut queue: VecDeque<usize> = (0..ng).filter(|&g| indeg[g] == 0).collect();
    let mut seen = 0;
    while let Some(g) = queue.pop_front() {
        seen += 1;
        for &s in &succ[g] {
            level[s] = level[s].max(level[g] + 1);
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    if seen != ng {
        return Err(MeshError::Cycle);
    }
    let depth = level.iter().copied().max().map_or(0, |d| d + 1);
    let mut out: Vec<Vec<Vec<usize>>> = vec![Vec::new(); depth];
    for (g, m) in members.into_iter().enumerate() {
        out[level[g]].push(m);
    }
    for lvl in &mut out {
        lvl.sort_by_key(|g| g[0]);
    }
    Ok(out)
}

/// Causal levels as flat, id-sorted element lists.
pub fn causal_order(mesh: &SpaceTimeMesh) -> Result<Vec<Vec<usize>>, MeshError> {
    Ok(causal_groups(mesh)?
        .into_iter()
        .map(|lvl| {
            let mut v: Vec<usize> = lvl.into_iter().flatten().collect();
            v.sort_unstable();
            v
        })
        .collect())
}
