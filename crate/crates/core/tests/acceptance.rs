mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::*;
use rand::Rng;
use trefftz_core::analysis::*;
use trefftz_core::assembly::AssemblyOptions;
use trefftz_core::basis::*;
use trefftz_core::field::{AsPiecewise, Difference, FieldValue, GlobalField, PiecewiseField};
use trefftz_core::mesh::*;
use trefftz_core::solver::{solve_monolithic, solve_sequential};

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn monomials_up_to(p: usize, vars: usize) -> usize {
    // brute-force enumeration of exponent tuples
    let mut count = 0;
    let mut idx = vec![0usize; vars];
    loop {
        if idx.iter().sum::<usize>() <= p {
            count += 1;
        }
        let mut k = 0;
        loop {
            if k == vars {
                return count;
            }
            idx[k] += 1;
            if idx[k] <= p {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn c01_trefftz_exactness() {
    criterion(1, "every Tp and Wp basis function solves the system", || {
        let mut worst: f64 = 0.0;
        for n in 1..=3 {
            let frames = [
                ElementFrame::unit(n),
                ElementFrame::new(vec![0.3; n], 0.7, 0.25, 2.5).unwrap(),
            ];
            for frame in &frames {
                for p in 0..=5 {
                    let dirs = default_directions(p + 1, n).unwrap();
                    for family in [BasisFamily::Tp, BasisFamily::Wp] {
                        let funcs = build_family_basis(family, p, frame, Some(&dirs)).unwrap();
                        assert_eq!(funcs.len(), family.dim(p, n).unwrap());
                        for f in &funcs {
                            worst = worst.max(f.relative_residual());
                        }
                    }
                }
            }
        }
        println!("  max relative residual {worst:.3e}");
        assert!(worst <= 1e-12, "residual {worst:e}");
    });
}

#[test]
fn c02_dimension_formulas() {
    criterion(2, "dimension formulas and basis lengths, p <= 8, n <= 3", || {
        for n in 1..=3 {
            for p in 0..=8 {
                let tp = (n + 1) * monomials_up_to(p, n);
                assert_eq!(tp, (n + 1) * binom(p + n, n));
                // homogeneous wave polynomials: degree-k forms in n+1 variables modulo the operator image
                let up: usize = (0..=p)
                    .map(|k| binom(k + n, n) - if k >= 2 { binom(k - 2 + n, n) } else { 0 })
                    .sum();
                let closed_up = match n {
                    1 => 2 * p + 1,
                    2 => (p + 1) * (p + 1),
                    _ => (p + 1) * (p + 2) * (2 * p + 3) / 6,
                };
                assert_eq!(up, closed_up);
                assert_eq!(dim_tp(p, n).unwrap(), tp);
                assert_eq!(dim_up(p, n).unwrap(), up);
                let up_next: usize = (0..=p + 1)
                    .map(|k| binom(k + n, n) - if k >= 2 { binom(k - 2 + n, n) } else { 0 })
                    .sum();
                assert_eq!(dim_wp(p, n).unwrap(), up_next - 1);

                let frame = ElementFrame::unit(n);
                assert_eq!(build_tp_basis(p, n, &frame).unwrap().len(), tp);
                if p <= 7 {
                    let dirs = default_directions(p + 1, n).unwrap();
                    assert_eq!(build_up_basis(p, n, &dirs, &frame).unwrap().len(), up);
                    assert_eq!(build_wp_basis(p, n, &dirs, &frame).unwrap().len(), up_next - 1);
                } else {
                    let dirs = default_directions(p, n).unwrap();
                    assert_eq!(build_up_basis(p, n, &dirs, &frame).unwrap().len(), up);
                }
            }
        }
    });
}

#[test]
fn c03_coercivity_with_unit_constant() {
    criterion(3, "x^T A x against the DG norm on slab and tent meshes", || {
        let mut r = rng(3);
        let mut cases: Vec<(SpaceTimeMesh, ProblemSpec, bool)> = Vec::new();
        let s1 = mixed_spec(1);
        cases.push((build_slab_mesh(&s1, &[5], 3).unwrap(), s1.clone(), true));
        let s2 = mixed_spec(2);
        cases.push((build_slab_mesh(&s2, &[3, 2], 2).unwrap(), s2.clone(), true));
        let mut layered = ProblemSpec::new(vec![0.0], vec![2.0], 1.0, BoundaryKind::Neumann);
        layered.speed = SpeedMap::Layered {
            axis: 0,
            breaks: vec![1.0],
            values: vec![1.0, 2.0],
        };
        cases.push((build_slab_mesh(&layered, &[4], 2).unwrap(), layered, true));
        let tent_spec = mixed_spec(1);
        cases.push((build_tent_mesh_1d(&tent_spec, 6, 0.7).unwrap(), tent_spec.clone(), false));
        let robin = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Robin);
        cases.push((build_tent_mesh_1d(&robin, 5, 0.9).unwrap(), robin, false));

        let mut trials = 0;
        for (mesh, spec, flat) in &cases {
            for (family, p) in [(BasisFamily::Tp, 2), (BasisFamily::Wp, 1)] {
                let s = setup(mesh, spec, family, p);
                for _ in 0..5 {
                    let u = random_solution(&s.disc, &mut r);
                    let a = s.system.bilinear(&u.coefficients, &u.coefficients);
                    let dg = dg_norm_sq(mesh, spec, &s.flux, &u, p + 2);
                    if *flat {
                        assert!(rel_close(a, dg, 1e-10), "{a} vs {dg}");
                    } else {
                        assert!(a >= (1.0 - 1e-10) * dg, "{a} < {dg}");
                    }
                    trials += 1;
                }
            }
        }
        println!("  {trials} random coefficient vectors");
        assert!(trials >= 50);
    });
}

fn face_normals(f: &Face, e: usize) -> (Vec<f64>, f64) {
    let s = f.orientation(e);
    (f.normal_x.iter().map(|v| s * v).collect(), s * f.normal_t)
}

#[test]
fn c04_jump_and_elemental_identities() {
    criterion(4, "jump identities and the elemental energy identity", || {
        let mut r = rng(4);
        let s1 = mixed_spec(1);
        let s2 = mixed_spec(2);
        let meshes = [
            (build_slab_mesh(&s1, &[4], 3).unwrap(), s1.clone()),
            (build_tent_mesh_1d(&s1, 5, 0.8).unwrap(), s1.clone()),
            (build_slab_mesh(&s2, &[2, 3], 2).unwrap(), s2),
        ];
        let mut worst_jump: f64 = 0.0;
        let mut worst_elem: f64 = 0.0;
        for (mesh, spec) in &meshes {
            let n = mesh.dim;
            let s = setup(mesh, spec, BasisFamily::Tp, 3);
            for _ in 0..4 {
                let u = random_solution(&s.disc, &mut r);
                for f in &mesh.faces {
                    let (Some(k1), Some(k2)) = (f.minus, f.plus) else { continue };
                    let (n1, t1) = face_normals(f, k1);
                    let (n2, t2) = face_normals(f, k2);
                    let (pts, _) = f.quadrature(5);
                    for q in &pts {
                        let (x, t) = (&q[..n], q[n]);
                        let a = u.eval_in(k1, x, t);
                        let b = u.eval_in(k2, x, t);
                        let dot = |s: &[f64], m: &[f64]| -> f64 { s.iter().zip(m).map(|(p, q)| p * q).sum() };
                        let jw_n: Vec<f64> = (0..n).map(|i| a.v * n1[i] + b.v * n2[i]).collect();
                        let jtau_n = dot(&a.sigma[..n], &n1) + dot(&b.sigma[..n], &n2);
                        let jwtau_n = a.v * dot(&a.sigma[..n], &n1) + b.v * dot(&b.sigma[..n], &n2);
                        let avg_w = 0.5 * (a.v + b.v);
                        let avg_tau: Vec<f64> = (0..n).map(|i| 0.5 * (a.sigma[i] + b.sigma[i])).collect();
                        let mut check = |lhs: f64, rhs: f64, scale: f64| {
                            worst_jump = worst_jump.max((lhs - rhs).abs() / scale.max(1e-300));
                        };
                        let sc = (a.v.abs() + b.v.abs() + a.sigma_norm_sq().sqrt() + b.sigma_norm_sq().sqrt()).powi(2);
                        check(avg_w * jtau_n + dot(&avg_tau, &jw_n), jwtau_n, sc);
                        if f.kind == FaceKind::SpaceLike {
                            let nt = f.normal_t;
                            let jw_t = a.v * t1 + b.v * t2;
                            let jw2_t = a.v * a.v * t1 + b.v * b.v * t2;
                            check(a.v * jw_t - 0.5 * jw2_t, jw_t * jw_t / (2.0 * nt), sc);
                            let jtau_t: Vec<f64> = (0..n).map(|i| a.sigma[i] * t1 + b.sigma[i] * t2).collect();
                            let jtau2_t = a.sigma_norm_sq() * t1 + b.sigma_norm_sq() * t2;
                            let jt2: f64 = jtau_t.iter().map(|v| v * v).sum();
                            check(dot(&a.sigma[..n], &jtau_t) - 0.5 * jtau2_t, jt2 / (2.0 * nt), sc);
                            let tau_minus = &a.sigma[..n];
                            check(
                                a.v * jtau_n + dot(tau_minus, &jw_n) - jwtau_n,
                                jw_t * jtau_n / nt,
                                sc,
                            );
                        }
                    }
                }
                for el in &mesh.elements {
                    let (total, scale) = element_energy_flux(mesh, el.id, &u, 6);
                    worst_elem = worst_elem.max(total.abs() / scale);
                }
            }
        }
        println!("  jump identities {worst_jump:.2e}, elemental identity {worst_elem:.2e}");
        assert!(worst_jump <= 1e-11);
        assert!(worst_elem <= 1e-11);
    });
}

#[test]
fn c05_polynomial_plane_waves_are_reproduced() {
    criterion(5, "degree-p plane-wave polynomials are reproduced exactly", || {
        let opts = AssemblyOptions::default();
        let mut worst: f64 = 0.0;
        for p in 1..=3 {
            let coeffs: Vec<f64> = (0..=p).map(|i| 0.7 - 0.3 * i as f64).collect();
            let cases: Vec<(usize, Vec<f64>, bool)> = vec![
                (1, vec![1.0], false),
                (1, vec![-1.0], true),
                (2, vec![0.6, -0.8], false),
            ];
            for (n, d, tent) in cases {
                let c = 1.5;
                let pw = Arc::new(exact_plane_wave(d, Profile::Poly(coeffs.clone()), c));
                let mut spec = mixed_spec(n);
                spec.speed = SpeedMap::Uniform(c);
                spec.data = ProblemData::from_exact(pw.clone());
                for family in [BasisFamily::Tp, BasisFamily::Wp] {
                    let mesh = if tent {
                        build_tent_mesh_1d(&spec, 6, 0.8).unwrap()
                    } else {
                        build_slab_mesh(&spec, &vec![3; n], 3).unwrap()
                    };
                    let run = run_problem(&spec, mesh, family, p, FluxPolicy::Default, &opts, 0).unwrap();
                    let exact = AsPiecewise(pw.as_ref());
                    let err = Difference(&run.solution, &exact);
                    let dg = dg_norm(&run.mesh, &spec, &run.flux, &err, p + 3);
                    let l2 = l2_error(&run.mesh, &run.solution, pw.as_ref(), p + 3);
                    let rel = dg.max(l2) / pw.scale();
                    worst = worst.max(rel);
                    assert!(rel <= 1e-8, "n={n} p={p} {family} tent={tent}: dg {dg:e} l2 {l2:e}");
                }
            }
        }
        println!("  worst relative error {worst:.2e}");
    });
}

fn sine_wave(d: Vec<f64>) -> Arc<PlaneWave> {
    Arc::new(exact_plane_wave(
        d,
        Profile::Sine {
            amplitude: 1.0,
            k: 2.0,
            phase: 0.3,
        },
        1.0,
    ))
}

fn study(n: usize, family: BasisFamily, p: usize, cells: &[usize]) -> ConvergenceTable {
    let d = if n == 1 { vec![1.0] } else { vec![0.6, 0.8] };
    let pw = sine_wave(d);
    let mut spec = ProblemSpec::new(vec![0.0; n], vec![1.0; n], 1.0, BoundaryKind::Dirichlet);
    spec.data = ProblemData::from_exact(pw.clone());
    let levels: Vec<MeshSpec> = cells.iter().map(|&k| MeshSpec::Slab { nx: vec![k; n], nt: k }).collect();
    convergence_study(&spec, pw.as_ref(), family, p, &levels, FluxPolicy::Default, &AssemblyOptions::default(), 0)
        .unwrap()
}

#[test]
fn c06_h_convergence_1d() {
    criterion(6, "DG-norm rates >= p + 0.4 in one space dimension", || {
        for family in [BasisFamily::Tp, BasisFamily::Wp] {
            for p in 1..=3 {
                let table = study(1, family, p, &[4, 8, 16, 32]);
                let rate = table.rate_dg.value().unwrap();
                println!("  {family} p={p}: rate_dg {rate:.3}, rate_l2 {:.3}", table.rate_l2.value().unwrap());
                assert!(rate >= p as f64 + 0.4, "{family} p={p}: {rate}");
            }
        }
    });
}

#[test]
fn c07_h_convergence_2d() {
    criterion(7, "DG-norm rates >= p + 0.4 in two space dimensions", || {
        for (p, cells) in [(1, [8, 16, 32]), (2, [4, 8, 16])] {
            let table = study(2, BasisFamily::Tp, p, &cells);
            let rate = table.rate_dg.value().unwrap();
            println!("  Tp p={p}: rate_dg {rate:.3}, rate_l2 {:.3}", table.rate_l2.value().unwrap());
            assert!(rate >= p as f64 + 0.4, "p={p}: {rate}");
        }
    });
}

#[test]
fn c08_tent_mesh_l2_control() {
    criterion(8, "L2 errors on all-Robin tent meshes decrease at rate >= p", || {
        let pw = sine_wave(vec![1.0]);
        let mut spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, BoundaryKind::Robin);
        spec.data = ProblemData::from_exact(pw.clone());
        let levels: Vec<MeshSpec> = [8, 16, 32].iter().map(|&nx| MeshSpec::Tent { nx, safety: 0.8 }).collect();
        for family in [BasisFamily::Tp, BasisFamily::Wp] {
            for p in 1..=3 {
                let table = convergence_study(
                    &spec,
                    pw.as_ref(),
                    family,
                    p,
                    &levels,
                    FluxPolicy::Default,
                    &AssemblyOptions::default(),
                    0,
                )
                .unwrap();
                let errs: Vec<f64> = table.rows.iter().map(|r| r.err_l2).collect();
                let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
                let rate = table.rate_l2.value().unwrap();
                println!("  {family} p={p}: L2 [{}], rate {rate:.3}", shown.join(", "));
                assert!(errs.windows(2).all(|w| w[1] < w[0]));
                assert!(rate >= p as f64);
            }
        }
    });
}

struct Pulse;

impl GlobalField for Pulse {
    fn eval(&self, x: &[f64], _t: f64) -> FieldValue {
        let r2: f64 = x.iter().map(|xi| (xi - 0.45).powi(2)).sum();
        let g = (-r2 / 0.02).exp();
        let sigma: Vec<f64> = x.iter().map(|xi| 0.5 * g * (xi - 0.3)).collect();
        FieldValue::new(g, &sigma)
    }
}

#[test]
fn c09_dissipation_audit() {
    criterion(9, "energy decreases across fronts and the DG identity holds", || {
        let mut cases: Vec<(ProblemSpec, SpaceTimeMesh)> = Vec::new();
        for kind in [BoundaryKind::Robin, BoundaryKind::Dirichlet, BoundaryKind::Neumann] {
            let mut spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, kind);
            spec.data.initial = Some(Arc::new(Pulse));
            cases.push((spec.clone(), build_tent_mesh_1d(&spec, 10, 0.8).unwrap()));
            cases.push((spec.clone(), build_slab_mesh(&spec, &[8], 6).unwrap()));
        }
        let mut spec2 = mixed_spec(2);
        spec2.data.initial = Some(Arc::new(Pulse));
        cases.push((spec2.clone(), build_slab_mesh(&spec2, &[4, 4], 3).unwrap()));
        for (spec, mesh) in cases {
            let run = run_problem(&spec, mesh, BasisFamily::Tp, 2, FluxPolicy::Default, &AssemblyOptions::default(), 0)
                .unwrap();
            let report = dissipation_audit(&run.solution, &run.mesh, &spec, &run.flux, 5).unwrap();
            println!(
                "  {:?} {:?}: identity {:.2e}, max increase {:.2e}, E0 {:.4e}, ET {:.4e}",
                run.mesh.kind, spec.boundary[0], report.identity_residual, report.max_increase,
                report.front_energies[0], report.energy_final
            );
            assert!(report.monotone);
            assert!(report.identity_residual <= 1e-9);
        }
    });
}

#[test]
fn c10_sequential_and_monolithic_solves_agree() {
    criterion(10, "causal and monolithic solves agree on tent meshes", || {
        let mut worst: f64 = 0.0;
        for (kind, nx, p) in [(BoundaryKind::Robin, 8, 2), (BoundaryKind::Dirichlet, 12, 3), (BoundaryKind::Neumann, 6, 1)] {
            let pw = sine_wave(vec![1.0]);
            let mut spec = ProblemSpec::new(vec![0.0], vec![1.0], 1.0, kind);
            spec.data = ProblemData::from_exact(pw);
            let mesh = build_tent_mesh_1d(&spec, nx, 0.75).unwrap();
            for family in [BasisFamily::Tp, BasisFamily::Wp] {
                let s = setup(&mesh, &spec, family, p);
                let seq = solve_sequential(&s.system, &causal_groups(&mesh).unwrap()).unwrap();
                let mono = solve_monolithic(&s.system).unwrap();
                let diff: f64 = seq.coefficients.iter().zip(&mono.coefficients).map(|(a, b)| (a - b).powi(2)).sum();
                let norm: f64 = mono.coefficients.iter().map(|a| a * a).sum();
                worst = worst.max((diff / norm).sqrt());
            }
        }
        println!("  worst relative coefficient difference {worst:.2e}");
        assert!(worst <= 1e-10);
    });
}

struct RandomInitial {
    modes: Vec<(f64, f64, f64)>,
}

impl GlobalField for RandomInitial {
    fn eval(&self, x: &[f64], _t: f64) -> FieldValue {
        let n = x.len();
        let mut v = 0.0;
        let mut sigma = vec![0.0; n];
        for (i, &(a, k, ph)) in self.modes.iter().enumerate() {
            let z: f64 = x.iter().enumerate().map(|(j, xi)| xi * (1.0 + 0.3 * j as f64)).sum::<f64>();
            let s = a * (k * z + ph).sin();
            v += s;
            sigma[i % n] += 0.5 * a * (k * z - ph).cos();
        }
        FieldValue::new(v, &sigma)
    }
}

#[test]
fn c11_stability_bound() {
    criterion(11, "DG norm of the discrete solution is bounded by the data", || {
        let mut r = rng(11);
        let mut worst: f64 = 0.0;
        for trial in 0..20 {
            let n = if trial % 4 == 3 { 2 } else { 1 };
            let mut spec = mixed_spec(n);
            if trial % 2 == 0 {
                spec.boundary[0] = [BoundaryKind::Robin; 2];
            }
            spec.impedance = r.gen_range(0.5..2.0);
            spec.speed = SpeedMap::Uniform(r.gen_range(0.5..2.0));
            let modes = (0..3).map(|_| (r.gen_range(-1.0..1.0), r.gen_range(1.0..6.0), r.gen_range(0.0..PI))).collect();
            spec.data.initial = Some(Arc::new(RandomInitial { modes }));
            let (a, w) = (r.gen_range(-1.0..1.0), r.gen_range(1.0..8.0));
            spec.data.robin = Some(Arc::new(move |x: &[f64], t: f64| a * (w * (x[0] + t)).cos()));
            let mesh = if n == 1 && trial % 3 == 0 {
                build_tent_mesh_1d(&spec, 6 + trial % 5, 0.8).unwrap()
            } else {
                let k = 3 + trial % 3;
                build_slab_mesh(&spec, &vec![k; n], k).unwrap()
            };
            let p = 1 + trial % 3;
            let run = run_problem(&spec, mesh, BasisFamily::Tp, p, FluxPolicy::Default, &AssemblyOptions::default(), 0)
                .unwrap();
            let nodes = p + 6;
            let lhs = dg_norm(&run.mesh, &spec, &run.flux, &run.solution, nodes);
            let rhs = stability_bound(&run.mesh, &spec, nodes);
            worst = worst.max(lhs / rhs);
            assert!(lhs <= rhs * (1.0 + 1e-9), "trial {trial}: {lhs} > {rhs}");
        }
        println!("  largest ratio |||u|||/bound {worst:.4}");
    });
}

#[test]
fn c12_direction_admissibility() {
    criterion(12, "direction sets: distinct angles, latitude circle, default generator", || {
        let mut r = rng(12);
        for _ in 0..200 {
            let k = r.gen_range(1..=8);
            let count = directions_at_degree(k, 2);
            let mut angles: Vec<f64> = Vec::new();
            while angles.len() < count {
                let a = r.gen_range(0.0..2.0 * PI);
                if angles.iter().all(|b| (a - b).abs() > 1e-3 && (2.0 * PI - (a - b).abs()) > 1e-3) {
                    angles.push(a);
                }
            }
            let dirs: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
            assert!(check_directions(k, &dirs, 2).unwrap().admissible);
        }
        for k in 2..=5 {
            let count = directions_at_degree(k, 3);
            let z: f64 = 0.4;
            let rho = (1.0 - z * z).sqrt();
            let dirs: Vec<Vec<f64>> = (0..count)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / count as f64;
                    vec![rho * a.cos(), rho * a.sin(), z]
                })
                .collect();
            assert!(!check_directions(k, &dirs, 3).unwrap().admissible, "latitude circle accepted at k={k}");
        }
        for p in 0..=4 {
            assert!(default_directions(p, 3).unwrap().is_admissible(), "default set rejected at p={p}");
        }
    });
}
