#![allow(dead_code)]

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trefftz_core::assembly::{assemble_system, default_flux_params, AssemblyOptions, BlockSystem, Discretization, FluxParams};
use trefftz_core::basis::BasisFamily;
use trefftz_core::mesh::{BoundaryKind, ProblemSpec, SpaceTimeMesh};
use trefftz_core::solver::DiscreteSolution;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `body`, prints one status line and re-raises any failure.
pub fn criterion(id: u32, name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(body);
    let secs = start.elapsed().as_secs_f64();
    let status = if outcome.is_ok() { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {status} {name} ({secs:.2}s)");
    if let Err(e) = outcome {
        std::panic::resume_unwind(e);
    }
}

pub fn mixed_spec(n: usize) -> ProblemSpec {
    let mut spec = ProblemSpec::new(vec![0.0; n], vec![1.0; n], 1.0, BoundaryKind::Robin);
    spec.boundary[0] = [BoundaryKind::Dirichlet, BoundaryKind::Neumann];
    spec
}

pub struct Setup {
    pub flux: FluxParams,
    pub disc: Arc<Discretization>,
    pub system: BlockSystem,
}

pub fn setup(mesh: &SpaceTimeMesh, spec: &ProblemSpec, family: BasisFamily, p: usize) -> Setup {
    let flux = default_flux_params(mesh);
    let disc = Arc::new(Discretization::uniform(mesh, family, p).unwrap());
    let system = assemble_system(mesh, spec, disc.clone(), &flux, &AssemblyOptions::default()).unwrap();
    Setup { flux, disc, system }
}

pub fn random_solution(disc: &Arc<Discretization>, rng: &mut impl Rng) -> DiscreteSolution {
    let coeffs = (0..disc.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DiscreteSolution::from_coefficients(disc.clone(), coeffs)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
