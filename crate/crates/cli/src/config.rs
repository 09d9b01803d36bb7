//! Run configuration read from TOML, and its translation into solver inputs.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use trefftz_core::analysis::{exact_plane_wave, exact_standing_wave, ExactSolution, FluxPolicy, MeshSpec, Profile};
use trefftz_core::basis::BasisFamily;
use trefftz_core::field::{FieldValue, GlobalField, ZeroField};
use trefftz_core::mesh::{BoundaryData, BoundaryKind, ExactTrace, ProblemData, ProblemSpec, SpeedMap};

/// A configuration problem, tagged with the dotted name of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration at `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub mesh: MeshConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub study: Option<StudyConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub final_time: f64,
    #[serde(default)]
    pub speed: SpeedConfig,
    #[serde(default = "one")]
    pub impedance: f64,
    /// `[low, high]` condition per axis.
    pub boundary: Vec<[BoundaryName; 2]>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryName {
    Dirichlet,
    Neumann,
    Robin,
}

impl From<BoundaryName> for BoundaryKind {
    fn from(b: BoundaryName) -> Self {
        match b {
            BoundaryName::Dirichlet => BoundaryKind::Dirichlet,
            BoundaryName::Neumann => BoundaryKind::Neumann,
            BoundaryName::Robin => BoundaryKind::Robin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedConfig {
    Uniform(f64),
    Layered { axis: usize, breaks: Vec<f64>, values: Vec<f64> },
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig::Uniform(1.0)
    }
}

/// Where each data provider comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Traces of `data.solution`.
    Exact,
    Zero,
    /// Gaussian pulse from `data.pulse` (initial data only).
    Pulse,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub initial: Option<Source>,
    pub dirichlet: Option<Source>,
    pub neumann: Option<Source>,
    pub robin: Option<Source>,
    pub solution: Option<SolutionConfig>,
    pub pulse: Option<PulseConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionConfig {
    PlaneWave {
        direction: Vec<f64>,
        profile: ProfileConfig,
    },
    StandingWave {
        modes: Vec<i32>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        k: f64,
        #[serde(default)]
        phase: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
    },
    Poly {
        coefficients: Vec<f64>,
    },
}

impl From<&ProfileConfig> for Profile {
    fn from(p: &ProfileConfig) -> Self {
        match *p {
            ProfileConfig::Sine { amplitude, k, phase } => Profile::Sine { amplitude, k, phase },
            ProfileConfig::Gaussian { center, width } => Profile::Gaussian { center, width },
            ProfileConfig::Poly { ref coefficients } => Profile::Poly(coefficients.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub center: Vec<f64>,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKindName {
    Slab,
    Tent1d,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub kind: MeshKindName,
    /// Cells per space axis.
    pub cells: Vec<usize>,
    /// Time slabs (slab meshes only).
    pub time_cells: Option<usize>,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyName {
    Tp,
    Wp,
}

impl From<FamilyName> for BasisFamily {
    fn from(f: FamilyName) -> Self {
        match f {
            FamilyName::Tp => BasisFamily::Tp,
            FamilyName::Wp => BasisFamily::Wp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub family: FamilyName,
    pub p: usize,
    #[serde(default)]
    pub flux: FluxPolicy,
    #[serde(default)]
    pub extra_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    /// Sample points per space axis.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
}

fn default_samples() -> usize {
    11
}

fn default_time_samples() -> usize {
    5
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            samples: default_samples(),
            time_samples: default_time_samples(),
        }
    }
}

/// Each level multiplies `mesh.cells` and `mesh.time_cells` by a factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub refinements: Vec<usize>,
}

struct Pulse {
    center: Vec<f64>,
    width: f64,
}

impl GlobalField for Pulse {
    fn eval(&self, x: &[f64], _t: f64) -> FieldValue {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        FieldValue::new((-r2 / (self.width * self.width)).exp(), &vec![0.0; x.len()])
    }
}

struct ZeroData;

impl BoundaryData for ZeroData {
    fn eval(&self, _: &[f64], _: f64, _: &[f64], _: f64, _: f64) -> f64 {
        0.0
    }
}

/// Everything a command needs after validation.
pub struct Prepared {
    pub spec: ProblemSpec,
    pub exact: Option<Arc<dyn ExactSolution>>,
    pub family: BasisFamily,
    pub p: usize,
    pub policy: FluxPolicy,
    pub extra_nodes: usize,
    pub mesh: MeshSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            ConfigError::new(field, e.to_string().trim().to_string())
        })
    }

    /// Cross-field checks and construction of the solver inputs.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let pr = &self.problem;
        let n = pr.dim;
        if !(1..=3).contains(&n) {
            return Err(ConfigError::new("problem.dim", format!("{n} is not in 1..=3")));
        }
        for (name, len) in [("problem.lo", pr.lo.len()), ("problem.hi", pr.hi.len()), ("problem.boundary", pr.boundary.len())] {
            if len != n {
                return Err(ConfigError::new(name, format!("expected {n} entries, got {len}")));
            }
        }
        if pr.lo.iter().zip(&pr.hi).any(|(a, b)| !(b > a)) {
            return Err(ConfigError::new("problem.hi", "every upper bound must exceed the lower bound"));
        }
        if !(pr.final_time > 0.0) {
            return Err(ConfigError::new("problem.final_time", "must be positive"));
        }
        if !(pr.impedance > 0.0) {
            return Err(ConfigError::new("problem.impedance", "must be positive"));
        }
        let speed = match &pr.speed {
            SpeedConfig::Uniform(c) => SpeedMap::Uniform(*c),
            SpeedConfig::Layered { axis, breaks, values } => SpeedMap::Layered {
                axis: *axis,
                breaks: breaks.clone(),
                values: values.clone(),
            },
        };
        if let Err(e) = speed.validate(n) {
            return Err(ConfigError::new("problem.speed", e.to_string()));
        }

        let m = &self.mesh;
        if m.kind == MeshKindName::Tent1d && n != 1 {
            return Err(ConfigError::new("mesh.kind", format!("tent1d meshes need problem.dim = 1, got {n}")));
        }
        if m.kind == MeshKindName::Tent1d && !speed.is_uniform() {
            return Err(ConfigError::new("mesh.kind", "tent1d meshes need a uniform problem.speed"));
        }
        if m.cells.len() != n || m.cells.contains(&0) {
            return Err(ConfigError::new("mesh.cells", format!("expected {n} positive entries")));
        }
        let mesh = match m.kind {
            MeshKindName::Slab => MeshSpec::Slab {
                nx: m.cells.clone(),
                nt: m.time_cells.ok_or_else(|| ConfigError::new("mesh.time_cells", "required for slab meshes"))?,
            },
            MeshKindName::Tent1d => {
                if !(m.safety > 0.0 && m.safety < 1.0) {
                    return Err(ConfigError::new("mesh.safety", "must lie in (0, 1)"));
                }
                MeshSpec::Tent {
                    nx: m.cells[0],
                    safety: m.safety,
                }
            }
        };
        if let MeshSpec::Slab { nt: 0, .. } = mesh {
            return Err(ConfigError::new("mesh.time_cells", "must be positive"));
        }

        let d = &self.discretization;
        if d.p > 8 {
            return Err(ConfigError::new("discretization.p", "degrees above 8 are not supported"));
        }
        if d.flux == FluxPolicy::Graded && m.kind == MeshKindName::Tent1d {
            return Err(ConfigError::new("discretization.flux", "graded fluxes need a slab mesh"));
        }
        let c0 = speed.at(&pr.lo);
        let exact = self.exact_solution(c0, speed.is_uniform())?;
        let data = self.problem_data(&exact)?;

        let mut spec = ProblemSpec::new(pr.lo.clone(), pr.hi.clone(), pr.final_time, BoundaryKind::Dirichlet);
        spec.speed = speed;
        spec.impedance = pr.impedance;
        spec.boundary = pr.boundary.iter().map(|b| [b[0].into(), b[1].into()]).collect();
        spec.data = data;
        Ok(Prepared {
            spec,
            exact,
            family: d.family.into(),
            p: d.p,
            policy: d.flux,
            extra_nodes: d.extra_nodes,
            mesh,
        })
    }

    fn exact_solution(&self, c: f64, uniform: bool) -> Result<Option<Arc<dyn ExactSolution>>, ConfigError> {
        let Some(sol) = &self.data.solution else { return Ok(None) };
        let n = self.problem.dim;
        if !uniform {
            return Err(ConfigError::new("data.solution", "closed-form solutions need a uniform problem.speed"));
        }
        Ok(Some(match sol {
            SolutionConfig::PlaneWave { direction, profile } => {
                let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                if direction.len() != n || !(norm > 0.0) {
                    return Err(ConfigError::new("data.solution.direction", format!("expected a nonzero vector of length {n}")));
                }
                if let ProfileConfig::Gaussian { width, .. } = profile {
                    if !(*width > 0.0) {
                        return Err(ConfigError::new("data.solution.profile.width", "must be positive"));
                    }
                }
                let d = direction.iter().map(|v| v / norm).collect();
                Arc::new(exact_plane_wave(d, profile.into(), c))
            }
            SolutionConfig::StandingWave { modes } => {
                if modes.len() != n || modes.iter().all(|&k| k == 0) {
                    return Err(ConfigError::new("data.solution.modes", format!("expected {n} integers, not all zero")));
                }
                Arc::new(exact_standing_wave(modes.clone(), self.problem.lo.clone(), self.problem.hi.clone(), c))
            }
        }))
    }

    fn problem_data(&self, exact: &Option<Arc<dyn ExactSolution>>) -> Result<ProblemData, ConfigError> {
        let dc = &self.data;
        let needs_exact = |name: &str| -> Result<Arc<dyn ExactSolution>, ConfigError> {
            exact
                .clone()
                .ok_or_else(|| ConfigError::new("data.solution", format!("data.{name} = \"exact\" needs a data.solution table")))
        };
        let initial: Arc<dyn GlobalField> = match dc.initial {
            None => return Err(ConfigError::new("data.initial", "missing initial data provider")),
            Some(Source::Zero) => Arc::new(ZeroField),
            Some(Source::Exact) => {
                let e = needs_exact("initial")?;
                Arc::new(ExactField(e))
            }
            Some(Source::Pulse) => {
                let p = dc
                    .pulse
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("data.pulse", "data.initial = \"pulse\" needs a data.pulse table"))?;
                if p.center.len() != self.problem.dim || !(p.width > 0.0) {
                    return Err(ConfigError::new("data.pulse", "center must match problem.dim and width must be positive"));
                }
                Arc::new(Pulse {
                    center: p.center.clone(),
                    width: p.width,
                })
            }
        };
        let declared = |kind: BoundaryName| self.problem.boundary.iter().flatten().any(|&b| b == kind);
        let boundary = |name: &'static str, kind: BoundaryName, src: Option<Source>| -> Result<Option<Arc<dyn BoundaryData>>, ConfigError> {
            let field = format!("data.{name}");
            match src {
                None if declared(kind) => Err(ConfigError::new(field, format!("missing provider for the declared {name} boundary"))),
                None => Ok(None),
                Some(Source::Zero) => Ok(Some(Arc::new(ZeroData))),
                Some(Source::Pulse) => Err(ConfigError::new(field, "\"pulse\" is only valid for data.initial")),
                Some(Source::Exact) => {
                    let e = needs_exact(name)?;
                    Ok(Some(Arc::new(ExactTrace {
                        field: Arc::new(ExactField(e)),
                        kind: kind.into(),
                    })))
                }
            }
        };
        Ok(ProblemData {
            initial: Some(initial),
            dirichlet: boundary("dirichlet", BoundaryName::Dirichlet, dc.dirichlet)?,
            neumann: boundary("neumann", BoundaryName::Neumann, dc.neumann)?,
            robin: boundary("robin", BoundaryName::Robin, dc.robin)?,
        })
    }

    /// Mesh levels of a convergence study.
    pub fn study_levels(&self, base: &MeshSpec) -> Result<Vec<MeshSpec>, ConfigError> {
        let study = self
            .study
            .as_ref()
            .ok_or_else(|| ConfigError::new("study", "the converge command needs a study table"))?;
        if study.refinements.len() < 3 || study.refinements.contains(&0) {
            return Err(ConfigError::new("study.refinements", "need at least three positive factors"));
        }
        Ok(study
            .refinements
            .iter()
            .map(|&f| match base {
                MeshSpec::Slab { nx, nt } => MeshSpec::Slab {
                    nx: nx.iter().map(|k| k * f).collect(),
                    nt: nt * f,
                },
                MeshSpec::Tent { nx, safety } => MeshSpec::Tent {
                    nx: nx * f,
                    safety: *safety,
                },
            })
            .collect())
    }
}

/// Lets a shared closed-form solution be used as a plain field.
pub struct ExactField(pub Arc<dyn ExactSolution>);

impl GlobalField for ExactField {
    fn eval(&self, x: &[f64], t: f64) -> FieldValue {
        self.0.eval(x, t)
    }
}
