//! Run configuration: a flat `key = value` file plus `--set` overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fehmm::material::{lame_from_engineering, MaterialMap, SmoothProfile};
use fehmm::mesh::{mesh_from_phase_grid, refine_uniform, ElementKind, Mesh, PhaseGrid};
use fehmm::micro::CouplingKind;
use fehmm::two_scale::{MacroProblem, SolverConfig};
use fehmm::Error;

use crate::microstructure::{generate_microstructure, Generator};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Cantilever,
    ClampedSquare,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loading {
    /// Tip line load per unit height and thickness, acting in `-y`.
    Force(f64),
    /// Prescribed tip deflection in `-y`.
    Displacement(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub l: f64,
    pub b: f64,
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub loading: Loading,
    pub generator: Generator,
    /// Pixels per side of one microstructure period.
    pub resolution: usize,
    /// Uniform refinements applied to the pixel mesh.
    pub refine: usize,
    pub micro_element: ElementKind,
    pub phase_file: Option<PathBuf>,
    pub delta: f64,
    pub epsilon: f64,
    pub e: [f64; 2],
    pub nu: [f64; 2],
    pub solver: SolverConfig,
    pub out: PathBuf,
    /// Requested snapshot location; the nearest macro quadrature point is used.
    pub snapshot: Option<[f64; 2]>,
    pub levels: usize,
    pub reference_extra: usize,
    /// Load-step counts compared by `speedup`.
    pub speedup_steps: Vec<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::Cantilever,
            l: 5000.0,
            b: 1000.0,
            t: 100.0,
            nx: 5,
            ny: 1,
            loading: Loading::Force(200.0),
            generator: Generator::Checkerboard,
            resolution: 2,
            refine: 3,
            micro_element: ElementKind::Quad4,
            phase_file: None,
            delta: 1000.0,
            epsilon: 1000.0,
            e: [100_000.0, 40_000.0],
            nu: [0.2, 0.2],
            solver: SolverConfig::default(),
            out: PathBuf::from("out"),
            snapshot: None,
            levels: 4,
            reference_extra: 2,
            speedup_steps: vec![4],
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        msg: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// Accumulates key-value settings, then checks them as a whole.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    config: RunConfig,
    force: Option<f64>,
    displacement: Option<f64>,
    keys: BTreeSet<String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let c = &mut self.config;
        let v = value.trim();
        match key {
            "problem.kind" => {
                c.problem = match v {
                    "cantilever" | "beam" => ProblemKind::Cantilever,
                    "clamped-square" | "square" => ProblemKind::ClampedSquare,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            msg: format!("unknown problem '{v}'"),
                        })
                    }
                }
            }
            "problem.l" => c.l = parse(key, v)?,
            "problem.b" => c.b = parse(key, v)?,
            "problem.t" => c.t = parse(key, v)?,
            "problem.nx" => c.nx = parse(key, v)?,
            "problem.ny" => c.ny = parse(key, v)?,
            "load.force" => self.force = Some(parse(key, v)?),
            "load.displacement" => self.displacement = Some(parse(key, v)?),
            "micro.generator" => c.generator = parse(key, v)?,
            "micro.resolution" => c.resolution = parse(key, v)?,
            "micro.refine" => c.refine = parse(key, v)?,
            "micro.element" => c.micro_element = parse(key, v)?,
            "micro.file" => c.phase_file = Some(PathBuf::from(v)),
            "micro.delta" => c.delta = parse(key, v)?,
            "micro.epsilon" => c.epsilon = parse(key, v)?,
            "material.e1" => c.e[0] = parse(key, v)?,
            "material.e2" => c.e[1] = parse(key, v)?,
            "material.nu1" => c.nu[0] = parse(key, v)?,
            "material.nu2" => c.nu[1] = parse(key, v)?,
            "solver.scheme" => c.solver.scheme = parse(key, v)?,
            "solver.n_load_steps" => c.solver.n_load_steps = parse(key, v)?,
            "solver.macro_tol" => c.solver.macro_tol = parse(key, v)?,
            "solver.micro_tol" => c.solver.micro_tol = parse(key, v)?,
            "solver.max_macro_iter" => c.solver.max_macro_iter = parse(key, v)?,
            "solver.max_micro_iter" => c.solver.max_micro_iter = parse(key, v)?,
            "solver.max_halvings" => c.solver.max_halvings = parse(key, v)?,
            "solver.coupling" => c.solver.coupling = parse(key, v)?,
            "solver.law" => c.solver.law = parse(key, v)?,
            "solver.kinematics" => c.solver.kinematics = parse(key, v)?,
            "output.dir" => c.out = PathBuf::from(v),
            "output.snapshot" => {
                let xy: Vec<f64> = parse_list(key, v)?;
                let [x, y] = xy[..] else {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        msg: "expected 'x,y'".into(),
                    });
                };
                c.snapshot = Some([x, y]);
            }
            "converge.levels" => c.levels = parse(key, v)?,
            "converge.reference_extra" => c.reference_extra = parse(key, v)?,
            "speedup.n_load_steps" => c.speedup_steps = parse_list(key, v)?,
            "seed" => c.seed = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        self.keys.insert(key.into());
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v)
    }

    /// Applies every line of a config file; `#` starts a comment.
    pub fn load_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.into(),
            msg: e.to_string(),
        })?;
        self.load_str(&text)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn build(self) -> Result<RunConfig, ConfigError> {
        let mut c = self.config;
        c.loading = match (self.force, self.displacement) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "set exactly one of load.force and load.displacement".into(),
                ))
            }
            (_, Some(u)) => Loading::Displacement(u),
            (Some(f), None) => Loading::Force(f),
            (None, None) => c.loading,
        };
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if ![self.l, self.b, self.t, self.delta, self.epsilon].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("lengths must be positive");
        }
        if self.nx == 0 || self.ny == 0 || self.resolution == 0 {
            return bad("element and pixel counts must be positive");
        }
        if self.problem == ProblemKind::ClampedSquare && matches!(self.loading, Loading::Displacement(_)) {
            return bad("the clamped square is load controlled");
        }
        if self.solver.coupling == CouplingKind::Periodic {
            let ratio = self.delta / self.epsilon;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
                return bad("delta / epsilon must be a positive integer with periodic coupling");
            }
        }
        if self.generator == Generator::File && self.phase_file.is_none() {
            return bad("generator 'file' needs micro.file");
        }
        if self.speedup_steps.is_empty() || self.speedup_steps.contains(&0) {
            return bad("speedup.n_load_steps must list positive counts");
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn period_count(&self) -> usize {
        (self.delta / self.epsilon).round().max(1.0) as usize
    }

    pub fn material(&self) -> Result<MaterialMap, ConfigError> {
        let p1 = lame_from_engineering(self.e[0], self.nu[0])?;
        let p2 = lame_from_engineering(self.e[1], self.nu[1])?;
        let map = MaterialMap::new(self.solver.law, p1, p2);
        Ok(match self.generator {
            Generator::BlurredLaminate => map.with_profile(SmoothProfile { period: self.epsilon }),
            _ => map,
        })
    }

    /// Pixel grid of one period.
    pub fn cell(&self) -> Result<PhaseGrid, ConfigError> {
        match self.generator {
            Generator::File => {
                let path = self.phase_file.as_deref().ok_or_else(|| ConfigError::Invalid("micro.file missing".into()))?;
                PhaseGrid::from_path(path).map_err(|e| ConfigError::Read {
                    path: path.into(),
                    msg: e.to_string(),
                })
            }
            g => Ok(generate_microstructure(g, self.resolution, self.seed)?),
        }
    }

    /// RVE mesh: the cell tiled over `delta`, then refined.
    pub fn micro_mesh(&self) -> Result<Mesh, ConfigError> {
        let grid = self.cell()?.tile(self.period_count())?;
        let mut mesh = mesh_from_phase_grid(&grid, self.delta, self.micro_element)?;
        for _ in 0..self.refine {
            mesh = refine_uniform(&mesh)?;
        }
        Ok(mesh)
    }

    /// Macro problem at `level` uniform refinements of the configured mesh.
    pub fn macro_problem(&self, level: usize) -> Result<MacroProblem, ConfigError> {
        let (nx, ny) = (self.nx << level, self.ny << level);
        Ok(match (self.problem, self.loading) {
            (ProblemKind::Cantilever, Loading::Force(f)) => MacroProblem::cantilever_force(self.l, self.b, self.t, nx, ny, f)?,
            (ProblemKind::Cantilever, Loading::Displacement(u)) => {
                MacroProblem::cantilever_displacement(self.l, self.b, self.t, nx, ny, u)?
            }
            (ProblemKind::ClampedSquare, Loading::Force(q)) => MacroProblem::clamped_square(self.l, nx, self.t, q)?,
            (ProblemKind::ClampedSquare, Loading::Displacement(_)) => {
                return Err(ConfigError::Invalid("the clamped square is load controlled".into()))
            }
        })
    }
}
