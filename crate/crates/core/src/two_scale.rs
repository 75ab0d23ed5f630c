//! Load stepping and the two coupled Newton schemes.
//!
//! Per macro iteration the macro tangent and internal force are assembled
//! from the transfer data of every RVE, the macro saddle system (Dirichlet
//! rows) is solved, and the micro problems are updated with the new
//! linearized macro field. The nested scheme then converges every micro
//! problem; the alternating scheme performs exactly one micro Newton step
//! and hands the resulting stress and stiffness straight back.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{shape_eval, physical_qp, CscMatrix, Kinematics, QuadratureRule, SparsityPattern};
use crate::linalg::{norm, ConstraintSet, SaddleSolver};
use crate::material::{MaterialLaw, MaterialMap};
use crate::micro::{homogenized_element, ROUNDOFF_FLOOR, CouplingKind, MacroQp, RveProblem, RveState};
use crate::mesh::{generate_structured, ElementKind, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Nested,
    Alternating,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Nested => "nested",
            Scheme::Alternating => "alternating",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nested" | "standard" => Ok(Scheme::Nested),
            "alternating" => Ok(Scheme::Alternating),
            other => Err(Error::Parse(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Macro boundary value problem at full load.
#[derive(Debug, Clone)]
pub struct MacroProblem {
    pub mesh: Mesh,
    pub thickness: f64,
    pub fixed_dofs: Vec<usize>,
    /// Prescribed values at full load.
    pub fixed_values: Vec<f64>,
    /// Nodal external forces at full load.
    pub f_ext: Vec<f64>,
}

impl MacroProblem {
    pub fn new(mesh: Mesh, thickness: f64, fixed_dofs: Vec<usize>, fixed_values: Vec<f64>, f_ext: Vec<f64>) -> Result<Self> {
        if !(thickness > 0.0) {
            return Err(Error::InvalidArgument(format!("thickness must be positive, got {thickness}")));
        }
        if mesh.kind != ElementKind::Quad4 && mesh.kind != ElementKind::Tri3 {
            return Err(Error::Unsupported("macro element kind".into()));
        }
        if fixed_dofs.len() != fixed_values.len() || f_ext.len() != mesh.ndof() {
            return Err(Error::DimensionMismatch("macro load data".into()));
        }
        ConstraintSet::fixed(&fixed_dofs, &fixed_values)?;
        Ok(MacroProblem {
            mesh,
            thickness,
            fixed_dofs,
            fixed_values,
            f_ext,
        })
    }

    fn clamped_left(mesh: &Mesh) -> Vec<usize> {
        mesh.nodes_at(0, mesh.bbox.min[0])
            .into_iter()
            .flat_map(|n| [2 * n, 2 * n + 1])
            .collect()
    }

    /// Cantilever `[0, l] x [0, b]` clamped at `x = 0` under a tip line load
    /// `f` in `-y` at `x = l`. The load acts per unit tip height and per unit
    /// thickness, so the total force is `f b t`.
    pub fn cantilever_force(l: f64, b: f64, t: f64, nx: usize, ny: usize, f: f64) -> Result<Self> {
        let mesh = generate_structured(l, b, nx, ny, ElementKind::Quad4)?;
        let fixed = Self::clamped_left(&mesh);
        let mut f_ext = vec![0.0; mesh.ndof()];
        let total = f * b * t;
        let mut tip = mesh.nodes_at(0, l);
        tip.sort_by(|a, b| mesh.nodes[*a][1].total_cmp(&mesh.nodes[*b][1]));
        // consistent nodal loads of a uniform edge traction
        for w in tip.windows(2) {
            let len = mesh.nodes[w[1]][1] - mesh.nodes[w[0]][1];
            for &n in w {
                f_ext[2 * n + 1] -= 0.5 * total * len / b;
            }
        }
        let nf = fixed.len();
        Self::new(mesh, t, fixed, vec![0.0; nf], f_ext)
    }

    /// Cantilever with the tip edge displaced by `-u` in `y`.
    pub fn cantilever_displacement(l: f64, b: f64, t: f64, nx: usize, ny: usize, u: f64) -> Result<Self> {
        let mesh = generate_structured(l, b, nx, ny, ElementKind::Quad4)?;
        let mut fixed = Self::clamped_left(&mesh);
        let mut values = vec![0.0; fixed.len()];
        for n in mesh.nodes_at(0, l) {
            fixed.push(2 * n + 1);
            values.push(-u);
        }
        let ndof = mesh.ndof();
        Self::new(mesh, t, fixed, values, vec![0.0; ndof])
    }

    /// Square `[0, a]^2` clamped on its whole boundary under the body force
    /// `b(x, y) = -q sin(pi x / a) sin(pi y / a) e_y` per unit volume.
    pub fn clamped_square(a: f64, n: usize, t: f64, q: f64) -> Result<Self> {
        let mesh = generate_structured(a, a, n, n, ElementKind::Quad4)?;
        let fixed: Vec<usize> = mesh.boundary_nodes().into_iter().flat_map(|k| [2 * k, 2 * k + 1]).collect();
        let rule = QuadratureRule::accurate(mesh.kind);
        let mut f_ext = vec![0.0; mesh.ndof()];
        let mut coords = [[0.0; 2]; 4];
        for e in 0..mesh.num_elements() {
            let m = mesh.element_coords_into(e, &mut coords);
            for qp in rule.points() {
                let g = physical_qp(mesh.kind, &coords[..m], &shape_eval(mesh.kind, qp.xi), qp.w)?;
                let [x, y] = g.x;
                let by = -q * (std::f64::consts::PI * x / a).sin() * (std::f64::consts::PI * y / a).sin();
                for (k, &node) in mesh.element(e).iter().enumerate() {
                    f_ext[2 * node + 1] += g.w * t * g.n[k] * by;
                }
            }
        }
        let nf = fixed.len();
        Self::new(mesh, t, fixed, vec![0.0; nf], f_ext)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub n_load_steps: usize,
    pub macro_tol: f64,
    pub micro_tol: f64,
    pub max_macro_iter: usize,
    pub max_micro_iter: usize,
    pub coupling: CouplingKind,
    pub law: MaterialLaw,
    pub kinematics: Kinematics,
    /// Load-increment halvings allowed when a step inverts an element.
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Nested,
            n_load_steps: 4,
            macro_tol: 1e-8,
            micro_tol: 1e-10,
            max_macro_iter: 30,
            max_micro_iter: 30,
            coupling: CouplingKind::Periodic,
            law: MaterialLaw::NeoHookean,
            kinematics: Kinematics::Nonlinear,
            max_halvings: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = |t: f64| t > 0.0 && t < 1.0;
        if !tol_ok(self.macro_tol) || !tol_ok(self.micro_tol) {
            return Err(Error::InvalidArgument("tolerances must lie in (0, 1)".into()));
        }
        if self.n_load_steps == 0 || self.max_macro_iter == 0 || self.max_micro_iter == 0 {
            return Err(Error::InvalidArgument("step and iteration counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// History of one load step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub load_factor: f64,
    /// Relative macro residual at every check; the first is 1 unless the
    /// step starts in equilibrium.
    pub residuals: Vec<f64>,
    /// Micro Newton updates (summed over RVEs) following each check.
    pub micro_iterations: Vec<usize>,
    /// Wall-clock seconds of the work following each check.
    pub iteration_times: Vec<f64>,
    /// Macro solves performed.
    pub macro_iterations: usize,
    pub step_time: f64,
    pub u_max: f64,
    /// Load-increment halvings applied in this step.
    pub halvings: usize,
}

impl StepTrace {
    pub fn first_iteration_time(&self) -> f64 {
        self.iteration_times.first().copied().unwrap_or(0.0)
    }

    pub fn micro_total(&self) -> usize {
        self.micro_iterations.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub scheme: Option<Scheme>,
    pub steps: Vec<StepTrace>,
    pub total_time: f64,
}

impl SolveTrace {
    pub fn u_max(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.u_max).collect()
    }

    pub fn macro_iterations(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.macro_iterations).collect()
    }
}

/// A failed solve with everything recorded up to the failure.
#[derive(Debug, Clone)]
pub struct SolveFailure {
    pub error: Error,
    pub trace: SolveTrace,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed load steps)", self.error, self.trace.steps.len())
    }
}

impl std::error::Error for SolveFailure {}

impl From<SolveFailure> for Error {
    fn from(f: SolveFailure) -> Self {
        f.error
    }
}

/// Macro displacements, one RVE per macro quadrature point, and load progress.
#[derive(Debug, Clone)]
pub struct TwoScaleState {
    pub macro_d: Vec<f64>,
    pub rves: Vec<RveState>,
    pub load_factor: f64,
    pub step: usize,
    pub iterations: usize,
    pub rve_problem: Arc<RveProblem>,
}

impl TwoScaleState {
    pub fn nodal_displacement(&self, node: usize) -> [f64; 2] {
        [self.macro_d[2 * node], self.macro_d[2 * node + 1]]
    }
}

/// Sets the load factor of step `step` (1-based) out of `config.n_load_steps`.
pub fn apply_load_step(state: &mut TwoScaleState, step: usize, config: &SolverConfig) -> Result<()> {
    if step == 0 || step > config.n_load_steps {
        return Err(Error::InvalidArgument(format!(
            "load step {step} outside 1..={}",
            config.n_load_steps
        )));
    }
    state.step = step;
    state.load_factor = step as f64 / config.n_load_steps as f64;
    Ok(())
}

/// Largest Euclidean norm of a nodal macro displacement.
pub fn max_nodal_displacement(state: &TwoScaleState) -> f64 {
    max_nodal_displacement_of(&state.macro_d).0
}

/// Largest nodal displacement norm and the node attaining it.
pub fn max_nodal_displacement_of(d: &[f64]) -> (f64, usize) {
    d.chunks(2)
        .enumerate()
        .map(|(i, u)| ((u[0] * u[0] + u[1] * u[1]).sqrt(), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
}

/// Orchestrates one two-scale solve.
pub struct TwoScaleSolver<'a> {
    pub problem: &'a MacroProblem,
    pub config: SolverConfig,
    pub rve: Arc<RveProblem>,
    macro_qps: Vec<MacroQp>,
    nqp: usize,
    pattern: Arc<SparsityPattern>,
    dirichlet: SaddleSolver,
}

impl<'a> TwoScaleSolver<'a> {
    pub fn new(problem: &'a MacroProblem, micro_mesh: Mesh, material: MaterialMap, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let rve = Arc::new(RveProblem::new(
            micro_mesh,
            material.with_law(config.law),
            config.kinematics,
            config.coupling,
        )?);
        Self::with_rve(problem, rve, config)
    }

    pub fn with_rve(problem: &'a MacroProblem, rve: Arc<RveProblem>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let mesh = &problem.mesh;
        let rule = QuadratureRule::standard(mesh.kind);
        let mut macro_qps = Vec::with_capacity(mesh.num_elements() * rule.len());
        let mut coords = [[0.0; 2]; 4];
        for e in 0..mesh.num_elements() {
            let n = mesh.element_coords_into(e, &mut coords);
            for q in rule.points() {
                let g = physical_qp(mesh.kind, &coords[..n], &shape_eval(mesh.kind, q.xi), q.w).map_err(|err| err.in_element(e))?;
                macro_qps.push(MacroQp {
                    npe: n,
                    n: g.n,
                    dndx: g.dndx,
                    weight: g.w * problem.thickness,
                    x: g.x,
                });
            }
        }
        let pattern = Arc::new(SparsityPattern::new(mesh));
        let dirichlet = SaddleSolver::new(
            pattern.clone(),
            &ConstraintSet::fixed(&problem.fixed_dofs, &problem.fixed_values)?,
        )?;
        Ok(TwoScaleSolver {
            problem,
            config,
            rve,
            macro_qps,
            nqp: rule.len(),
            pattern,
            dirichlet,
        })
    }

    pub fn macro_qps(&self) -> &[MacroQp] {
        &self.macro_qps
    }

    pub fn initial_state(&self) -> Result<TwoScaleState> {
        // every RVE starts from the same undeformed state
        let first = match self.macro_qps.first() {
            Some(qp) => RveState::new(&self.rve, *qp)?,
            None => return Err(Error::InvalidArgument("macro mesh has no quadrature points".into())),
        };
        let rves = self
            .macro_qps
            .iter()
            .map(|qp| RveState { qp: *qp, ..first.clone() })
            .collect();
        Ok(TwoScaleState {
            macro_d: vec![0.0; self.problem.mesh.ndof()],
            rves,
            load_factor: 0.0,
            step: 0,
            iterations: 0,
            rve_problem: self.rve.clone(),
        })
    }

    /// Macro displacement and gradient at every quadrature point.
    fn macro_kinematics(&self, d: &[f64]) -> Vec<([f64; 2], Matrix2<f64>)> {
        let mesh = &self.problem.mesh;
        self.macro_qps
            .iter()
            .enumerate()
            .map(|(k, qp)| {
                let conn = mesh.element(k / self.nqp);
                let mut u = [0.0; 2];
                let mut g = Matrix2::zeros();
                for (i, &node) in conn.iter().enumerate() {
                    for a in 0..2 {
                        let v = d[2 * node + a];
                        u[a] += qp.n[i] * v;
                        g[(a, 0)] += v * qp.dndx[i][0];
                        g[(a, 1)] += v * qp.dndx[i][1];
                    }
                }
                (u, g)
            })
            .collect()
    }

    /// Macro tangent, internal force and element force scale from the RVE
    /// transfer data.
    pub fn assemble_macro(&self, state: &TwoScaleState) -> Result<(CscMatrix, Vec<f64>, f64)> {
        let mesh = &self.problem.mesh;
        let mut k = CscMatrix::zeros(self.pattern.clone());
        let mut f = vec![0.0; mesh.ndof()];
        let mut scale2 = 0.0;
        for e in 0..mesh.num_elements() {
            let data = (0..self.nqp)
                .map(|q| {
                    let rve = &state.rves[e * self.nqp + q];
                    Ok((rve.qp, *rve.transfer()?, rve.macro_f()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (ke, fe) = homogenized_element(&data, self.config.kinematics);
            k.add_element(e, &ke);
            for (i, &node) in mesh.element(e).iter().enumerate() {
                f[2 * node] += fe[2 * i];
                f[2 * node + 1] += fe[2 * i + 1];
            }
            scale2 += fe.iter().map(|v| v * v).sum::<f64>();
        }
        Ok((k, f, scale2.sqrt()))
    }

    /// Pushes the macro field to every RVE and runs the scheme's micro work.
    /// Returns the number of micro Newton updates.
    fn update_micro(&self, state: &mut TwoScaleState) -> Result<usize> {
        let kin = self.macro_kinematics(&state.macro_d);
        let rve = &*self.rve;
        let cfg = &self.config;
        let counts = state
            .rves
            .par_iter_mut()
            .zip(kin.par_iter())
            .map(|(s, (u, g))| {
                s.set_macro(rve, *u, *g);
                match cfg.scheme {
                    Scheme::Nested => s.solve(rve, cfg.micro_tol, cfg.max_micro_iter),
                    Scheme::Alternating => {
                        s.newton_step(rve)?;
                        s.evaluate(rve, true)?;
                        s.store_fluctuation();
                        Ok(1)
                    }
                }
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(counts.iter().sum())
    }

    /// Full micro convergence at fixed macro data.
    fn polish_micro(&self, state: &mut TwoScaleState) -> Result<usize> {
        let rve = &*self.rve;
        let cfg = &self.config;
        let counts = state
            .rves
            .par_iter_mut()
            .map(|s| s.solve(rve, cfg.micro_tol, cfg.max_micro_iter))
            .collect::<Result<Vec<usize>>>()?;
        Ok(counts.iter().sum())
    }

    /// Equilibrium iterations from the current state to load factor `target`.
    fn run_increment(&self, state: &mut TwoScaleState, target: f64, trace: &mut StepTrace) -> Result<()> {
        let p = self.problem;
        let cfg = &self.config;
        state.load_factor = target;
        for s in state.rves.iter_mut() {
            s.begin_step();
        }
        let goal: Vec<f64> = p.fixed_values.iter().map(|v| target * v).collect();
        let mut micro_ok = true;
        let mut reference: Option<f64> = None;
        let mut solves = 0;
        loop {
            let t0 = Instant::now();
            let (k, f_int, scale) = self.assemble_macro(state)?;
            let mut r: Vec<f64> = f_int.iter().zip(&p.f_ext).map(|(fi, fe)| fi - target * fe).collect();
            let mut gap = vec![0.0; state.macro_d.len()];
            let mut gaps = Vec::with_capacity(goal.len());
            for (&dof, &g) in p.fixed_dofs.iter().zip(&goal) {
                let delta = g - state.macro_d[dof];
                gap[dof] = delta;
                gaps.push(delta);
            }
            if gaps.iter().any(|&v| v != 0.0) {
                for (ri, kg) in r.iter_mut().zip(k.mul_vec(&gap)) {
                    *ri += kg;
                }
            }
            for &dof in &p.fixed_dofs {
                r[dof] = 0.0;
            }
            let rn = norm(&r);
            let floor = ROUNDOFF_FLOOR * scale.max(target * norm(&p.f_ext));
            let r0 = *reference.get_or_insert(rn);
            let rel = if r0 > 0.0 { rn / r0 } else { 0.0 };
            trace.residuals.push(rel);
            let macro_ok = rel <= cfg.macro_tol || rn <= floor;
            if macro_ok && micro_ok {
                trace.micro_iterations.push(0);
                trace.iteration_times.push(t0.elapsed().as_secs_f64());
                return Ok(());
            }
            if macro_ok {
                // macro balanced on unconverged micro states: final micro polish
                let n = self.polish_micro(state)?;
                micro_ok = true;
                trace.micro_iterations.push(n);
                trace.iteration_times.push(t0.elapsed().as_secs_f64());
                continue;
            }
            if solves == cfg.max_macro_iter {
                return Err(Error::NoConvergence {
                    iterations: solves,
                    history: trace.residuals.clone(),
                });
            }
            let rhs: Vec<f64> = f_int.iter().zip(&p.f_ext).map(|(fi, fe)| target * fe - fi).collect();
            let factor = self.dirichlet.factorize(&k)?;
            let (dd, _) = factor.solve(&rhs, &gaps)?;
            for (d, x) in state.macro_d.iter_mut().zip(&dd) {
                *d += x;
            }
            solves += 1;
            trace.macro_iterations += 1;
            state.iterations += 1;
            let n = self.update_micro(state)?;
            micro_ok = state.rves.iter().all(|s| s.is_converged(cfg.micro_tol));
            trace.micro_iterations.push(n);
            trace.iteration_times.push(t0.elapsed().as_secs_f64());
        }
    }

    /// Advances from the current load factor to `target`, halving the
    /// increment when an element inverts.
    fn run_with_halving(&self, state: &mut TwoScaleState, target: f64, depth: usize, trace: &mut StepTrace) -> Result<()> {
        let snapshot = (state.macro_d.clone(), state.rves.clone(), state.load_factor);
        let len = (trace.residuals.len(), trace.macro_iterations);
        match self.run_increment(state, target, trace) {
            Err(e) if e.is_non_physical() && depth < self.config.max_halvings => {
                let start = snapshot.2;
                state.macro_d = snapshot.0;
                state.rves = snapshot.1;
                state.load_factor = start;
                trace.residuals.truncate(len.0);
                trace.micro_iterations.truncate(len.0);
                trace.iteration_times.truncate(len.0);
                trace.macro_iterations = len.1;
                trace.halvings += 1;
                let mid = 0.5 * (start + target);
                self.run_with_halving(state, mid, depth + 1, trace)?;
                self.run_with_halving(state, target, depth + 1, trace)
            }
            other => other,
        }
    }

    pub fn run(&self) -> std::result::Result<(TwoScaleState, SolveTrace), SolveFailure> {
        let start = Instant::now();
        let mut trace = SolveTrace {
            scheme: Some(self.config.scheme),
            ..Default::default()
        };
        let fail = |error: Error, trace: &SolveTrace| SolveFailure {
            error,
            trace: trace.clone(),
        };
        let mut state = self.initial_state().map_err(|e| fail(e, &trace))?;
        for step in 1..=self.config.n_load_steps {
            let t0 = Instant::now();
            apply_load_step(&mut state, step, &self.config).map_err(|e| fail(e, &trace))?;
            let target = state.load_factor;
            state.load_factor = (step - 1) as f64 / self.config.n_load_steps as f64;
            let mut st = StepTrace {
                step,
                load_factor: target,
                ..Default::default()
            };
            let res = self.run_with_halving(&mut state, target, 0, &mut st);
            st.step_time = t0.elapsed().as_secs_f64();
            st.u_max = max_nodal_displacement(&state);
            if let Err(e) = res {
                trace.steps.push(st);
                trace.total_time = start.elapsed().as_secs_f64();
                return Err(fail(e, &trace));
            }
            state.step = step;
            trace.steps.push(st);
        }
        trace.total_time = start.elapsed().as_secs_f64();
        Ok((state, trace))
    }
}

/// Runs the scheme selected in `config`.
pub fn solve(
    problem: &MacroProblem,
    micro_mesh: Mesh,
    material: MaterialMap,
    config: &SolverConfig,
) -> std::result::Result<(TwoScaleState, SolveTrace), SolveFailure> {
    let solver = TwoScaleSolver::new(problem, micro_mesh, material, *config).map_err(|error| SolveFailure {
        error,
        trace: SolveTrace::default(),
    })?;
    solver.run()
}

pub fn run_nested(
    problem: &MacroProblem,
    micro_mesh: Mesh,
    material: MaterialMap,
    config: &SolverConfig,
) -> std::result::Result<(TwoScaleState, SolveTrace), SolveFailure> {
    solve(problem, micro_mesh, material, &config.with_scheme(Scheme::Nested))
}

pub fn run_alternating(
    problem: &MacroProblem,
    micro_mesh: Mesh,
    material: MaterialMap,
    config: &SolverConfig,
) -> std::result::Result<(TwoScaleState, SolveTrace), SolveFailure> {
    solve(problem, micro_mesh, material, &config.with_scheme(Scheme::Alternating))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::LameParams;
    use crate::mesh::{generate_structured, mesh_from_phase_grid, PhaseGrid};

    fn params() -> LameParams {
        LameParams { lambda: 27777.78, mu: 41666.67 }
    }

    #[test]
    fn load_factors() {
        let p = MacroProblem::cantilever_force(10.0, 2.0, 1.0, 2, 1, 0.0).unwrap();
        let micro = generate_structured(1.0, 1.0, 1, 1, ElementKind::Quad4).unwrap();
        let cfg = SolverConfig::default();
        let s = TwoScaleSolver::new(&p, micro, MaterialMap::homogeneous(MaterialLaw::NeoHookean, params()), cfg).unwrap();
        let mut st = s.initial_state().unwrap();
        let mut f = Vec::new();
        for k in 1..=4 {
            apply_load_step(&mut st, k, &cfg).unwrap();
            f.push(st.load_factor);
        }
        assert_eq!(f, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(apply_load_step(&mut st, 5, &cfg).is_err());
        let one = SolverConfig { n_load_steps: 1, ..cfg };
        apply_load_step(&mut st, 1, &one).unwrap();
        assert_eq!(st.load_factor, 1.0);
    }

    #[test]
    fn max_displacement_norm() {
        assert_eq!(max_nodal_displacement_of(&[0.0; 6]).0, 0.0);
        assert_eq!(max_nodal_displacement_of(&[0.0, 0.0, 3.0, 4.0, 1.0, 1.0]), (5.0, 1));
    }

    #[test]
    fn zero_load_needs_no_iterations() {
        let p = MacroProblem::cantilever_force(10.0, 2.0, 1.0, 2, 1, 0.0).unwrap();
        let micro = generate_structured(1.0, 1.0, 2, 2, ElementKind::Quad4).unwrap();
        let (st, tr) = solve(&p, micro, MaterialMap::homogeneous(MaterialLaw::NeoHookean, params()), &SolverConfig::default()).unwrap();
        assert!(st.macro_d.iter().all(|&v| v == 0.0));
        assert!(tr.steps.iter().all(|s| s.macro_iterations == 0));
    }

    #[test]
    fn fully_linear_single_iteration() {
        let p = MacroProblem::cantilever_force(10.0, 2.0, 1.0, 4, 1, 25.0).unwrap();
        let g = PhaseGrid::new(2, 2, vec![1, 2, 2, 1]).unwrap().tile(2).unwrap();
        let micro = mesh_from_phase_grid(&g, 1.0, ElementKind::Quad4).unwrap();
        let mat = MaterialMap::new(MaterialLaw::LinearElastic, params(), LameParams { lambda: 11111.11, mu: 16666.67 });
        let cfg = SolverConfig {
            law: MaterialLaw::LinearElastic,
            kinematics: Kinematics::Linear,
            n_load_steps: 2,
            ..Default::default()
        };
        for scheme in [Scheme::Nested, Scheme::Alternating] {
            let (_, tr) = solve(&p, micro.clone(), mat, &cfg.with_scheme(scheme)).unwrap();
            assert!(tr.steps.iter().all(|s| s.macro_iterations == 1), "{scheme:?}: {:?}", tr.macro_iterations());
        }
    }

    #[test]
    fn trace_shapes_and_clock() {
        let p = MacroProblem::cantilever_force(10.0, 2.0, 1.0, 2, 1, 1000.0).unwrap();
        let g = PhaseGrid::new(2, 2, vec![1, 2, 2, 1]).unwrap();
        let micro = mesh_from_phase_grid(&g.tile(2).unwrap(), 1.0, ElementKind::Quad4).unwrap();
        let mat = MaterialMap::new(MaterialLaw::NeoHookean, params(), LameParams { lambda: 11111.11, mu: 16666.67 });
        let (_, tr) = solve(&p, micro, mat, &SolverConfig { n_load_steps: 2, ..Default::default() }).unwrap();
        let mut total = 0.0;
        for s in &tr.steps {
            assert_eq!(s.residuals.len(), s.micro_iterations.len());
            assert_eq!(s.residuals.len(), s.iteration_times.len());
            assert_eq!(s.residuals[0], 1.0);
            assert!(s.iteration_times.iter().sum::<f64>() <= s.step_time + 1e-9);
            total += s.step_time;
        }
        assert!(total <= tr.total_time + 1e-9);
        assert!(tr.u_max()[1] > tr.u_max()[0]);
    }
}
