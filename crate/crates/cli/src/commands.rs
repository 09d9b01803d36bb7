use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use trefftz_core::analysis::{
    convergence_study, dg_norm, dissipation_audit, energy, l2_error, run_problem, AnalysisError, Interface,
};
use trefftz_core::assembly::{AssemblyError, AssemblyOptions};
use trefftz_core::basis::{
    build_tp_basis, build_up_basis, build_wp_basis, default_directions_seeded, dim_tp, dim_up, dim_wp,
    gram_condition, scalar_gram_condition, BasisError, DirectionSet, ElementFrame,
};
use trefftz_core::field::{AsPiecewise, Difference};
use trefftz_core::mesh::{validate_mesh, MeshError, SpaceTimeMesh};
use trefftz_core::polynomial::Polynomial;
use trefftz_core::solver::SolverError;

use crate::config::{ConfigError, ExactField, Prepared, RunConfig};

pub enum Failure {
    Config(ConfigError),
    Mesh(String),
    Conditioning(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Mesh(_) => 3,
            Failure::Conditioning(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Mesh(m) => write!(f, "mesh validation failed: {m}"),
            Failure::Conditioning(m) => write!(f, "conditioning failure: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        Failure::Mesh(e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Mesh(m) => m.into(),
            AnalysisError::Solver(s @ (SolverError::Singular { .. } | SolverError::IllConditioned { .. })) => {
                Failure::Conditioning(s.to_string())
            }
            AnalysisError::Assembly(AssemblyError::Basis(
                b @ (BasisError::Inadmissible { .. } | BasisError::NoAdmissibleDirections { .. }),
            )) => Failure::Conditioning(b.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

pub struct RunContext {
    pub out: PathBuf,
    pub threads: usize,
    pub seed: u64,
}

/// Accumulates output files and timings, then writes `manifest.json`.
struct Manifest {
    command: &'static str,
    config: Option<(PathBuf, String)>,
    outputs: Vec<String>,
    timings: Map<String, Value>,
    extra: Map<String, Value>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            config: None,
            outputs: Vec::new(),
            timings: Map::new(),
            extra: Map::new(),
        }
    }

    fn time(&mut self, name: &str, start: Instant) {
        self.timings.insert(name.into(), json!(start.elapsed().as_secs_f64()));
    }

    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
        fs::write(dir.join(name), contents).with_context(|| format!("writing {}", dir.join(name).display()))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn write_json(&mut self, dir: &Path, name: &str, value: &Value) -> anyhow::Result<()> {
        self.write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn finish(mut self, ctx: &RunContext) -> anyhow::Result<()> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.timings.insert("finished_unix".into(), json!(stamp));
        let (path, hash) = match &self.config {
            Some((p, h)) => (json!(p.display().to_string()), json!(h)),
            None => (Value::Null, Value::Null),
        };
        let manifest = json!({
            "command": self.command,
            "config": path,
            "config_sha256": hash,
            "seed": ctx.seed,
            "threads": ctx.threads,
            "versions": {
                "trefftz-cli": env!("CARGO_PKG_VERSION"),
                "trefftz-core": trefftz_core::VERSION,
            },
            "parameters": self.extra,
            "outputs": self.outputs,
            "timings": self.timings,
        });
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(ctx.out.join("manifest.json"), text).context("writing manifest.json")?;
        Ok(())
    }
}

fn load(path: &Path) -> Result<(RunConfig, String), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    Ok((RunConfig::parse(&text)?, hash))
}

fn output_dir(ctx: &mut RunContext, cfg: &RunConfig, explicit: bool) -> anyhow::Result<()> {
    if !explicit {
        if let Some(d) = &cfg.output.directory {
            ctx.out = d.clone();
        }
    }
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))
}

fn checked_mesh(prep: &Prepared, manifest: &mut Manifest, dir: &Path) -> Result<SpaceTimeMesh, Failure> {
    let start = Instant::now();
    let mesh = prep.mesh.build(&prep.spec)?;
    let violations = validate_mesh(&mesh);
    manifest.time("mesh", start);
    if !violations.is_empty() {
        manifest.write_json(dir, "mesh_violations.json", &serde_json::to_value(&violations).map_err(anyhow::Error::from)?)?;
        return Err(Failure::Mesh(format!("{} violation(s), first: {}", violations.len(), violations[0].message)));
    }
    Ok(mesh)
}

pub fn solve(config: &Path, mut ctx: RunContext, explicit_out: bool) -> Result<(), Failure> {
    let (cfg, hash) = load(config)?;
    let prep = cfg.prepare()?;
    output_dir(&mut ctx, &cfg, explicit_out)?;
    let dir = ctx.out.clone();
    let mut manifest = Manifest::new("solve");
    manifest.config = Some((config.to_path_buf(), hash));

    let mesh = checked_mesh(&prep, &mut manifest, &dir)?;
    let options = AssemblyOptions {
        extra_nodes: prep.extra_nodes,
    };
    let run = run_problem(&prep.spec, mesh, prep.family, prep.p, prep.policy, &options, ctx.seed)?;
    manifest.timings.insert("assemble".into(), json!(run.assemble_seconds));
    manifest.timings.insert("solve".into(), json!(run.solve_seconds));
    manifest.extra.insert("elements".into(), json!(run.mesh.elements.len()));
    manifest.extra.insert("dofs".into(), json!(run.solution.disc.num_dofs()));

    let start = Instant::now();
    manifest.write_json(&dir, "solution.json", &run.solution.to_json())?;
    let counts = vec![cfg.output.samples.max(2); run.mesh.dim];
    let csv = run
        .solution
        .sample_csv(&run.mesh, &counts, cfg.output.time_samples.max(2))
        .map_err(|e| Failure::Other(e.into()))?;
    manifest.write(&dir, "samples.csv", &csv)?;

    let nodes = prep.p + 2 + prep.extra_nodes;
    let audit = match dissipation_audit(&run.solution, &run.mesh, &prep.spec, &run.flux, nodes) {
        Ok(report) => report.to_json(),
        Err(AnalysisError::NonHomogeneous(kind)) => {
            json!({ "skipped": format!("boundary data on {kind:?} faces is not zero") })
        }
        Err(e) => return Err(e.into()),
    };
    manifest.write_json(&dir, "audit.json", &audit)?;

    if let Some(exact) = &prep.exact {
        let field = ExactField(exact.clone());
        let pw = AsPiecewise(&field);
        let err = Difference(&run.solution, &pw);
        let errors = json!({
            "err_dg": dg_norm(&run.mesh, &prep.spec, &run.flux, &err, nodes),
            "err_l2": l2_error(&run.mesh, &run.solution, &field, nodes),
            "err_energy": energy(&run.mesh, &prep.spec, &Interface::final_time(&run.mesh), &err, nodes)?,
        });
        manifest.write_json(&dir, "errors.json", &errors)?;
    }
    manifest.time("output", start);
    manifest.finish(&ctx)?;
    println!(
        "solved {} elements, {} unknowns; outputs in {}",
        run.mesh.elements.len(),
        run.solution.disc.num_dofs(),
        dir.display()
    );
    Ok(())
}

pub fn converge(config: &Path, mut ctx: RunContext, explicit_out: bool) -> Result<(), Failure> {
    let (cfg, hash) = load(config)?;
    let prep = cfg.prepare()?;
    let levels = cfg.study_levels(&prep.mesh)?;
    let exact = prep
        .exact
        .clone()
        .ok_or_else(|| ConfigError::new("data.solution", "a convergence study needs a closed-form solution"))?;
    if prep.family == trefftz_core::basis::BasisFamily::Wp && exact.potential(&prep.spec.lo, 0.0).is_none() {
        return Err(ConfigError::new(
            "data.solution.profile",
            "the Wp family needs a solution with a closed-form potential",
        )
        .into());
    }
    output_dir(&mut ctx, &cfg, explicit_out)?;
    let dir = ctx.out.clone();
    let mut manifest = Manifest::new("converge");
    manifest.config = Some((config.to_path_buf(), hash));
    for level in &levels {
        let mesh = level.build(&prep.spec)?;
        let violations = validate_mesh(&mesh);
        if let Some(v) = violations.first() {
            return Err(Failure::Mesh(v.message.clone()));
        }
    }
    let start = Instant::now();
    let options = AssemblyOptions {
        extra_nodes: prep.extra_nodes,
    };
    let field = ExactField(exact);
    let table = convergence_study(&prep.spec, &field, prep.family, prep.p, &levels, prep.policy, &options, ctx.seed)?;
    manifest.time("study", start);
    manifest.write(&dir, "convergence.csv", &table.to_csv())?;
    manifest.write_json(&dir, "rates.json", &table.summary_json())?;
    manifest.finish(&ctx)?;
    println!(
        "{} levels; rate_dg {}, rate_l2 {}",
        table.rows.len(),
        table.rate_dg.to_json(),
        table.rate_l2.to_json()
    );
    Ok(())
}

pub fn mesh(config: &Path, mut ctx: RunContext, explicit_out: bool) -> Result<(), Failure> {
    let (cfg, hash) = load(config)?;
    let prep = cfg.prepare()?;
    output_dir(&mut ctx, &cfg, explicit_out)?;
    let dir = ctx.out.clone();
    let mut manifest = Manifest::new("mesh");
    manifest.config = Some((config.to_path_buf(), hash));
    let mesh = prep.mesh.build(&prep.spec)?;
    manifest.write_json(&dir, "mesh.json", &mesh.to_json())?;
    let violations = validate_mesh(&mesh);
    manifest.write_json(&dir, "validation.json", &serde_json::to_value(&violations).map_err(anyhow::Error::from)?)?;
    manifest.extra.insert("elements".into(), json!(mesh.elements.len()));
    manifest.extra.insert("faces".into(), json!(mesh.faces.len()));
    manifest.extra.insert("max_gamma".into(), json!(mesh.max_gamma()));
    manifest.finish(&ctx)?;
    if let Some(v) = violations.first() {
        return Err(Failure::Mesh(format!("{} violation(s), first: {}", violations.len(), v.message)));
    }
    println!("mesh with {} elements and {} faces is valid", mesh.elements.len(), mesh.faces.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckFamily {
    Tp,
    Up,
    Wp,
}

impl CheckFamily {
    fn name(self) -> &'static str {
        match self {
            CheckFamily::Tp => "Tp",
            CheckFamily::Up => "Up",
            CheckFamily::Wp => "Wp",
        }
    }
}

fn scalar_wave_residual(b: &Polynomial, n: usize, c: f64) -> f64 {
    let mut r = b.derive(n).derive(n).scale(1.0 / (c * c));
    for i in 0..n {
        r = &r - &b.derive(i).derive(i);
    }
    r.max_abs_coeff() / b.max_abs_coeff().max(f64::MIN_POSITIVE)
}

struct BasisRow {
    p: usize,
    dim: Option<usize>,
    gram: Option<f64>,
    residual: Option<f64>,
    direction_condition: Option<f64>,
    note: Option<String>,
}

fn check_degree(family: CheckFamily, p: usize, n: usize, dirs: &Result<DirectionSet, BasisError>) -> BasisRow {
    let frame = ElementFrame::unit(n);
    let mut row = BasisRow {
        p,
        dim: None,
        gram: None,
        residual: None,
        direction_condition: None,
        note: None,
    };
    let needed = match family {
        CheckFamily::Tp => None,
        CheckFamily::Up => Some(p),
        CheckFamily::Wp => Some(p + 1),
    };
    let dirs = match (needed, dirs) {
        (None, _) => None,
        (Some(k), Ok(d)) => {
            row.direction_condition = Some(d.conditions[..=k].iter().cloned().fold(0.0, f64::max));
            Some(d)
        }
        (Some(_), Err(e)) => {
            row.note = Some(e.to_string());
            return row;
        }
    };
    let built = match family {
        CheckFamily::Tp => build_tp_basis(p, n, &frame).map(|f| {
            let res = f.iter().map(|g| g.relative_residual()).fold(0.0, f64::max);
            (f.len(), gram_condition(&f), res, dim_tp(p, n))
        }),
        CheckFamily::Wp => build_wp_basis(p, n, dirs.unwrap(), &frame).map(|f| {
            let res = f.iter().map(|g| g.relative_residual()).fold(0.0, f64::max);
            (f.len(), gram_condition(&f), res, dim_wp(p, n))
        }),
        CheckFamily::Up => build_up_basis(p, n, dirs.unwrap(), &frame).map(|f| {
            let res = f.iter().map(|b| scalar_wave_residual(b, n, frame.c)).fold(0.0, f64::max);
            (f.len(), scalar_gram_condition(&f), res, dim_up(p, n))
        }),
    };
    match built {
        Ok((len, gram, res, formula)) => {
            if formula.as_ref().ok() != Some(&len) {
                row.note = Some(format!("basis length {len} differs from the dimension formula {formula:?}"));
            }
            row.dim = Some(len);
            row.gram = Some(gram);
            row.residual = Some(res);
        }
        Err(e) => row.note = Some(e.to_string()),
    }
    row
}

pub fn check_basis(p: usize, n: usize, family: CheckFamily, ctx: RunContext) -> Result<(), Failure> {
    if p > 8 {
        return Err(ConfigError::new("p", "degrees above 8 are not supported").into());
    }
    if !(1..=3).contains(&n) {
        return Err(ConfigError::new("n", format!("{n} is not in 1..=3")).into());
    }
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let dir = ctx.out.clone();
    let mut manifest = Manifest::new("check-basis");
    manifest.extra.insert("p".into(), json!(p));
    manifest.extra.insert("n".into(), json!(n));
    manifest.extra.insert("family".into(), json!(family.name()));
    let start = Instant::now();
    let dir_degree = if family == CheckFamily::Wp { p + 1 } else { p };
    let dirs = default_directions_seeded(dir_degree, n, ctx.seed);
    let rows: Vec<BasisRow> = (0..=p).map(|q| check_degree(family, q, n, &dirs)).collect();
    manifest.time("check", start);

    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
    let mut csv = String::from("n,p,family,dim,gram_cond,residual_max,direction_cond,note\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{n},{},{},{},{},{},{},{}",
            r.p,
            family.name(),
            r.dim.map_or(String::new(), |d| d.to_string()),
            opt(r.gram),
            opt(r.residual),
            opt(r.direction_condition),
            r.note.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    manifest.write(&dir, "check_basis.csv", &csv)?;
    let report = json!({
        "n": n,
        "family": family.name(),
        "rows": rows.iter().map(|r| json!({
            "p": r.p,
            "dim": r.dim,
            "gram_cond": r.gram,
            "residual_max": r.residual,
            "direction_cond": r.direction_condition,
            "note": r.note,
        })).collect::<Vec<_>>(),
        "direction_conditions": dirs.as_ref().ok().map(|d| d.conditions.clone()),
        "admissible": dirs.as_ref().map(|d| d.is_admissible()).unwrap_or(false),
    });
    manifest.write_json(&dir, "check_basis.json", &report)?;
    manifest.finish(&ctx)?;
    print!("{csv}");
    Ok(())
}
