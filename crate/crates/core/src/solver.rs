//! Direct solvers for the block system: causal marching with one solve per
//! coupled group, and a monolithic dense solve used as an oracle.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::assembly::{BlockSystem, Discretization};
use crate::field::{FieldValue, PiecewiseField};
use crate::mesh::SpaceTimeMesh;

/// Local blocks with a condition estimate above this abort the solve.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Size guard for the monolithic solve.
pub const MONOLITHIC_MAX_DOFS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("singular block at element {element}")]
    Singular { element: usize },
    #[error("ill-conditioned block at element {element}: condition estimate {condition:e}")]
    IllConditioned { element: usize, condition: f64 },
    #[error("block ({row}, {col}) couples to an element that is not solved yet")]
    ForwardCoupling { row: usize, col: usize },
    #[error("levels do not cover every element exactly once")]
    Levels,
    #[error("system with {dofs} unknowns exceeds the monolithic limit")]
    TooLarge { dofs: usize },
    #[error("point ({x:?}, {t}) lies outside the space-time domain")]
    Outside { x: Vec<f64>, t: f64 },
}

/// Per-element coefficient vectors against the local Trefftz bases.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub disc: Arc<Discretization>,
    pub coefficients: Vec<f64>,
    /// Condition estimate of the block each element was solved in.
    pub conditions: Vec<f64>,
}

impl DiscreteSolution {
    pub fn from_coefficients(disc: Arc<Discretization>, coefficients: Vec<f64>) -> Self {
        assert_eq!(coefficients.len(), disc.num_dofs());
        let conditions = vec![1.0; disc.bases.len()];
        Self {
            disc,
            coefficients,
            conditions,
        }
    }

    pub fn zeros(disc: Arc<Discretization>) -> Self {
        let n = disc.num_dofs();
        Self::from_coefficients(disc, vec![0.0; n])
    }

    pub fn local(&self, element: usize) -> &[f64] {
        self.disc.local(&self.coefficients, element)
    }

    pub fn max_condition(&self) -> f64 {
        self.conditions.iter().copied().fold(0.0, f64::max)
    }

    /// Value at `(x, t)`; on element interfaces the past side is used.
    pub fn evaluate(&self, mesh: &SpaceTimeMesh, x: &[f64], t: f64) -> Result<FieldValue, SolverError> {
        let e = mesh.locate(x, t).ok_or_else(|| SolverError::Outside { x: x.to_vec(), t })?;
        Ok(self.eval_in(e, x, t))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "family": self.disc.family,
            "num_dofs": self.disc.num_dofs(),
            "elements": (0..self.disc.bases.len())
                .map(|e| json!({
                    "id": e,
                    "p": self.disc.degrees[e],
                    "condition": self.conditions[e],
                    "coefficients": self.local(e),
                }))
                .collect::<Vec<_>>(),
        })
    }

    /// Samples `(v, sigma)` on a uniform lattice with `counts[i]` points along
    /// space axis `i` and `time_points` instants, endpoints included.
    /// Columns: `x_1..x_n, t, v, sigma_1..sigma_n`.
    pub fn sample_csv(&self, mesh: &SpaceTimeMesh, counts: &[usize], time_points: usize) -> Result<String, SolverError> {
        let n = mesh.dim;
        let mut out = String::new();
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain(["t".to_string(), "v".to_string()])
            .chain((1..=n).map(|i| format!("sigma_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let coord = |lo: f64, hi: f64, k: usize, m: usize| if m <= 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 };
        let total: usize = counts.iter().product();
        for it in 0..time_points {
            let t = coord(0.0, mesh.final_time, it, time_points);
            for mut lin in 0..total {
                let mut x = vec![0.0; n];
                for a in 0..n {
                    x[a] = coord(mesh.lo[a], mesh.hi[a], lin % counts[a], counts[a]);
                    lin /= counts[a];
                }
                let u = self.evaluate(mesh, &x, t)?;
                for xi in &x {
                    let _ = write!(out, "{xi},");
                }
                let _ = write!(out, "{t},{}", u.v);
                for s in &u.sigma[..n] {
                    let _ = write!(out, ",{s}");
                }
                out.push('\n');
            }
        }
        Ok(out)
    }
}

impl PiecewiseField for DiscreteSolution {
    fn eval_in(&self, element: usize, x: &[f64], t: f64) -> FieldValue {
        let mut point = [0.0; 4];
        let n = x.len();
        point[..n].copy_from_slice(x);
        point[n] = t;
        self.disc.bases[element].eval_combination(self.local(element), &point[..=n])
    }
}

/// Dense LU with partial pivoting; returns the solution and the ratio of the
/// largest to the smallest pivot magnitude as a condition estimate.
fn lu_solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let lu = a.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = diag.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        return None;
    }
    let x = lu.solve(&b)?;
    Some((x, max / min))
}

/// Row-major band storage with room for the fill-in of partial pivoting:
/// entry `(i, j)` lives at `i * width + (j + kl - i)` for `-kl <= j - i <= ku + kl`.
struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Gaussian elimination with partial pivoting, then substitution.
    fn solve(mut self, b: &[f64]) -> Option<(Vec<f64>, f64)> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = b.to_vec();
        let mut max_piv: f64 = 0.0;
        let mut min_piv = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return None;
            }
            max_piv = max_piv.max(best);
            min_piv = min_piv.min(best);
            if p != k {
                for j in k..=last_col {
                    let (a, c) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, c);
                }
                x.swap(k, p);
            }
            let pivot = self.data[self.idx(k, k)];
            let row_k = self.idx(k, k);
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = 0.0;
                let len = last_col - k;
                let (head, tail) = self.data.split_at_mut(ik + 1);
                let src = &head[row_k + 1..row_k + 1 + len];
                for (dst, s) in tail[..len].iter_mut().zip(src) {
                    *dst -= l * s;
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + ku + kl).min(n - 1);
            let mut acc = x[k];
            for j in k + 1..=last_col {
                acc -= self.data[self.idx(k, j)] * x[j];
            }
            x[k] = acc / self.data[self.idx(k, k)];
        }
        Some((x, max_piv / min_piv))
    }
}

/// Solves level by level. Each level is a list of groups; each group is
/// solved with one factorization after moving the contributions of already
/// known elements to the right-hand side. Groups whose block band is narrow
/// compared with their size use banded elimination. Groups within a level run
/// in parallel.
pub fn solve_sequential(system: &BlockSystem, levels: &[Vec<Vec<usize>>]) -> Result<DiscreteSolution, SolverError> {
    let disc = &system.disc;
    let ne = disc.bases.len();
    let mut seen = vec![false; ne];
    for e in levels.iter().flatten().flatten() {
        if *e >= ne || seen[*e] {
            return Err(SolverError::Levels);
        }
        seen[*e] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(SolverError::Levels);
    }

    // incoming blocks per row element
    let mut incoming: Vec<Vec<(usize, &DMatrix<f64>)>> = vec![Vec::new(); ne];
    for (&(r, c), blk) in &system.blocks {
        incoming[r].push((c, blk));
    }
    let mut solved = vec![false; ne];
    let mut coefficients = vec![0.0; disc.num_dofs()];
    let mut conditions = vec![0.0; ne];
    for level in levels {
        let results: Vec<Result<(Vec<usize>, DVector<f64>, f64), SolverError>> = level
            .par_iter()
            .map(|group| {
                let mut local_off = Vec::with_capacity(group.len());
                let mut size = 0;
                for &e in group {
                    local_off.push(size);
                    size += disc.block_size(e);
                }
                let pos = |e: usize| group.iter().position(|&g| g == e);
                let mut b = DVector::zeros(size);
                let mut local_blocks: Vec<(usize, usize, &DMatrix<f64>)> = Vec::new();
                for (gi, &r) in group.iter().enumerate() {
                    let ro = local_off[gi];
                    let m = disc.block_size(r);
                    b.rows_mut(ro, m).copy_from(&system.rhs[r]);
                    for &(c, blk) in &incoming[r] {
                        if let Some(gj) = pos(c) {
                            local_blocks.push((ro, local_off[gj], blk));
                        } else if solved[c] {
                            let xc = DVector::from_column_slice(disc.local(&coefficients, c));
                            let mut rows = b.rows_mut(ro, m);
                            rows -= blk * xc;
                        } else {
                            return Err(SolverError::ForwardCoupling { row: r, col: c });
                        }
                    }
                }
                let (mut kl, mut ku) = (0, 0);
                for &(ro, co, blk) in &local_blocks {
                    kl = kl.max((ro + blk.nrows()).saturating_sub(co + 1));
                    ku = ku.max((co + blk.ncols()).saturating_sub(ro + 1));
                }
                let solved_group = if (2 * kl + ku + 1) * 4 < size {
                    let mut band = BandMatrix::zeros(size, kl, ku);
                    for &(ro, co, blk) in &local_blocks {
                        for j in 0..blk.ncols() {
                            for i in 0..blk.nrows() {
                                band.set(ro + i, co + j, blk[(i, j)]);
                            }
                        }
                    }
                    band.solve(b.as_slice()).map(|(x, c)| (DVector::from_vec(x), c))
                } else {
                    let mut a = DMatrix::zeros(size, size);
                    for &(ro, co, blk) in &local_blocks {
                        a.view_mut((ro, co), blk.shape()).copy_from(blk);
                    }
                    lu_solve(a, b)
                };
                let (x, cond) = solved_group.ok_or(SolverError::Singular { element: group[0] })?;
                if cond > CONDITION_LIMIT {
                    return Err(SolverError::IllConditioned {
                        element: group[0],
                        condition: cond,
                    });
                }
                Ok((group.clone(), x, cond))
            })
            .collect();
        for res in results {
            let (group, x, cond) = res?;
            let mut k = 0;
            for e in group {
                let m = disc.block_size(e);
                coefficients[disc.offsets[e]..disc.offsets[e] + m].copy_from_slice(&x.as_slice()[k..k + m]);
                k += m;
                conditions[e] = cond;
                solved[e] = true;
            }
        }
    }
    Ok(DiscreteSolution {
        disc: disc.clone(),
        coefficients,
        conditions,
    })
}

/// One dense factorization of the whole system.
pub fn solve_monolithic(system: &BlockSystem) -> Result<DiscreteSolution, SolverError> {
    let dofs = system.num_dofs();
    if dofs > MONOLITHIC_MAX_DOFS {
        return Err(SolverError::TooLarge { dofs });
    }
    let (a, b) = system.to_dense();
    let (x, cond) = lu_solve(a, b).ok_or(SolverError::Singular { element: 0 })?;
    if cond > CONDITION_LIMIT {
        return Err(SolverError::IllConditioned {
            element: 0,
            condition: cond,
        });
    }
    let ne = system.disc.bases.len();
    Ok(DiscreteSolution {
        disc: system.disc.clone(),
        coefficients: x.as_slice().to_vec(),
        conditions: vec![cond; ne],
    })
}

/// `||A x - b|| / ||b||` (or `||A x||` when `b = 0`).
pub fn relative_residual(system: &BlockSystem, x: &[f64]) -> f64 {
    let ax = system.apply(x);
    let b = system.rhs_vector();
    let r: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, default_flux_params, AssemblyOptions};
    use crate::basis::BasisFamily;
    use crate::mesh::{build_slab_mesh, causal_groups, BoundaryKind, ProblemSpec};
    use std::collections::BTreeMap;

    #[test]
    fn identity_system() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Robin);
        let mesh = build_slab_mesh(&spec, &[1], 1).unwrap();
        let disc = Arc::new(Discretization::uniform(&mesh, BasisFamily::Tp, 1).unwrap());
        let n = disc.num_dofs();
        let mut blocks = BTreeMap::new();
        blocks.insert((0, 0), DMatrix::identity(n, n));
        let mut rhs = DVector::zeros(n);
        rhs[2] = 1.0;
        let sys = BlockSystem {
            disc,
            blocks,
            rhs: vec![rhs],
        };
        let sol = solve_monolithic(&sys).unwrap();
        assert_eq!(sol.coefficients, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn homogeneous_single_element_gives_zero() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Robin);
        let mesh = build_slab_mesh(&spec, &[1], 1).unwrap();
        let disc = Arc::new(Discretization::uniform(&mesh, BasisFamily::Tp, 0).unwrap());
        let sys = assemble_system(&mesh, &spec, disc, &default_flux_params(&mesh), &AssemblyOptions::default()).unwrap();
        let sol = solve_sequential(&sys, &causal_groups(&mesh).unwrap()).unwrap();
        assert!(sol.coefficients.iter().all(|&c| c == 0.0));
        assert_eq!(sol.evaluate(&mesh, &[0.5], 0.5).unwrap(), FieldValue::ZERO);
    }

    #[test]
    fn levels_must_cover_all_elements() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Robin);
        let mesh = build_slab_mesh(&spec, &[1], 2).unwrap();
        let disc = Arc::new(Discretization::uniform(&mesh, BasisFamily::Tp, 0).unwrap());
        let sys = assemble_system(&mesh, &spec, disc, &default_flux_params(&mesh), &AssemblyOptions::default()).unwrap();
        assert!(matches!(solve_sequential(&sys, &[vec![vec![0]]]), Err(SolverError::Levels)));
        assert!(matches!(
            solve_sequential(&sys, &[vec![vec![1]], vec![vec![0]]]),
            Err(SolverError::ForwardCoupling { row: 1, col: 0 })
        ));
    }

    #[test]
    fn band_elimination_matches_dense() {
        let (n, kl, ku) = (40, 3, 5);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = next();
                band.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, _) = band.solve(&b).unwrap();
        let (y, _) = lu_solve(dense, DVector::from_vec(b)).unwrap();
        for (a, c) in x.iter().zip(y.iter()) {
            assert!((a - c).abs() < 1e-10 * (1.0 + c.abs()));
        }
    }
}
