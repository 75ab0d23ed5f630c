//! Error norms, convergence studies, energetic diagnostics and independent
//! reference solutions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{
    reference_jacobian, shape_eval, Assembler, CscMatrix, Kinematics, MeshGeometry, QuadratureRule, SparsityPattern,
};
use crate::linalg::{dot, norm, ConstraintRow, ConstraintSet, SaddleSolver};
use crate::material::MaterialMap;
use crate::mesh::{ElementKind, Mesh, PhaseGrid};
use crate::micro::{MacroQp, RveProblem, RveState};
use crate::two_scale::{MacroProblem, SolveTrace, SolverConfig, TwoScaleSolver};

/// Errors of a coarse field against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l2: f64,
    /// Full H1 norm.
    pub h1: f64,
    /// `sqrt(e^T K e)` with `K` the tangent of the reference state.
    pub energy: Option<f64>,
    /// Mesh parameter of the coarse level.
    pub h: f64,
}

/// Point location by uniform buckets over element bounding boxes.
struct Locator<'a> {
    mesh: &'a Mesh,
    origin: [f64; 2],
    size: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

const LOCATE_TOL: f64 = 1e-9;

impl<'a> Locator<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let side = (mesh.num_elements() as f64).sqrt().ceil().max(1.0) as usize;
        let n = [side, side];
        let origin = mesh.bbox.min;
        let size = [
            mesh.bbox.width().max(f64::MIN_POSITIVE) / n[0] as f64,
            mesh.bbox.height().max(f64::MIN_POSITIVE) / n[1] as f64,
        ];
        let mut loc = Locator {
            mesh,
            origin,
            size,
            n,
            buckets: vec![Vec::new(); n[0] * n[1]],
        };
        let mut coords = [[0.0; 2]; 4];
        for e in 0..mesh.num_elements() {
            let m = mesh.element_coords_into(e, &mut coords);
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in &coords[..m] {
                for a in 0..2 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            let (i0, j0) = loc.bucket(lo);
            let (i1, j1) = loc.bucket(hi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.buckets[j * n[0] + i].push(e);
                }
            }
        }
        loc
    }

    fn bucket(&self, x: [f64; 2]) -> (usize, usize) {
        let f = |a: usize| {
            let t = ((x[a] - self.origin[a]) / self.size[a]).floor();
            (t.max(0.0) as usize).min(self.n[a] - 1)
        };
        (f(0), f(1))
    }

    fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let (i, j) = self.bucket(x);
        let mut coords = [[0.0; 2]; 4];
        for &e in &self.buckets[j * self.n[0] + i] {
            let m = self.mesh.element_coords_into(e, &mut coords);
            if let Some(xi) = inverse_map(self.mesh.kind, &coords[..m], x) {
                return Some((e, xi));
            }
        }
        None
    }
}

/// Reference coordinates of `x` in the element, if it lies inside.
fn inverse_map(kind: ElementKind, coords: &[[f64; 2]], x: [f64; 2]) -> Option<[f64; 2]> {
    let mut xi = match kind {
        ElementKind::Tri3 => [1.0 / 3.0, 1.0 / 3.0],
        ElementKind::Quad4 => [0.0, 0.0],
    };
    let scale = coords
        .iter()
        .map(|c| (c[0] - coords[0][0]).abs() + (c[1] - coords[0][1]).abs())
        .fold(0.0, f64::max);
    for _ in 0..30 {
        let sh = shape_eval(kind, xi);
        let mut r = [x[0], x[1]];
        for (k, c) in coords.iter().enumerate() {
            r[0] -= sh.n[k] * c[0];
            r[1] -= sh.n[k] * c[1];
        }
        if r[0].abs() + r[1].abs() <= 1e-14 * scale {
            break;
        }
        let (jac, det) = reference_jacobian(kind, coords, xi);
        if det.abs() < f64::MIN_POSITIVE {
            return None;
        }
        let inv = jac.try_inverse()?;
        xi[0] += inv[(0, 0)] * r[0] + inv[(0, 1)] * r[1];
        xi[1] += inv[(1, 0)] * r[0] + inv[(1, 1)] * r[1];
        if xi.iter().any(|v| v.abs() > 10.0) {
            return None;
        }
    }
    let inside = match kind {
        ElementKind::Tri3 => xi[0] >= -LOCATE_TOL && xi[1] >= -LOCATE_TOL && xi[0] + xi[1] <= 1.0 + LOCATE_TOL,
        ElementKind::Quad4 => xi.iter().all(|v| v.abs() <= 1.0 + LOCATE_TOL),
    };
    inside.then_some(xi)
}

fn check_nested(coarse: &Mesh, fine: &Mesh) -> Result<()> {
    let tol = 1e-9 * coarse.bbox.width().max(coarse.bbox.height());
    let same_box = (0..2).all(|a| {
        (coarse.bbox.min[a] - fine.bbox.min[a]).abs() <= tol && (coarse.bbox.max[a] - fine.bbox.max[a]).abs() <= tol
    });
    if !same_box {
        return Err(Error::InvalidPairing("coarse and fine meshes cover different domains".into()));
    }
    let loc = Locator::new(fine);
    for (n, x) in coarse.nodes.iter().enumerate() {
        let found = loc.locate(*x).is_some_and(|(e, _)| {
            fine.element(e)
                .iter()
                .any(|&k| (fine.nodes[k][0] - x[0]).abs() <= tol && (fine.nodes[k][1] - x[1]).abs() <= tol)
        });
        if !found {
            return Err(Error::InvalidPairing(format!("coarse node {n} is not a node of the fine mesh")));
        }
    }
    Ok(())
}

/// Interpolates a coarse nodal field at the nodes of a nested fine mesh.
pub fn prolongate(coarse: &Mesh, d: &[f64], fine: &Mesh) -> Result<Vec<f64>> {
    if d.len() != coarse.ndof() {
        return Err(Error::DimensionMismatch("coarse field length".into()));
    }
    check_nested(coarse, fine)?;
    let loc = Locator::new(coarse);
    let mut out = Vec::with_capacity(fine.ndof());
    for (n, x) in fine.nodes.iter().enumerate() {
        let (e, xi) = loc
            .locate(*x)
            .ok_or_else(|| Error::InvalidPairing(format!("fine node {n} lies outside the coarse mesh")))?;
        let sh = shape_eval(coarse.kind, xi);
        let mut u = [0.0; 2];
        for (k, &node) in coarse.element(e).iter().enumerate() {
            u[0] += sh.n[k] * d[2 * node];
            u[1] += sh.n[k] * d[2 * node + 1];
        }
        out.extend_from_slice(&u);
    }
    Ok(out)
}

/// L2 and full H1 norms of a nodal field, integrated with the accurate rule.
pub fn field_norms(mesh: &Mesh, e: &[f64]) -> Result<(f64, f64)> {
    if e.len() != mesh.ndof() {
        return Err(Error::DimensionMismatch("field length".into()));
    }
    let geom = MeshGeometry::new(mesh, &QuadratureRule::accurate(mesh.kind))?;
    let (mut l2, mut semi) = (0.0, 0.0);
    for el in 0..mesh.num_elements() {
        let conn = mesh.element(el);
        for qp in geom.element(el) {
            let mut u = [0.0; 2];
            let mut g = Matrix2::<f64>::zeros();
            for (k, &node) in conn.iter().enumerate() {
                for a in 0..2 {
                    let v = e[2 * node + a];
                    u[a] += qp.n[k] * v;
                    g[(a, 0)] += v * qp.dndx[k][0];
                    g[(a, 1)] += v * qp.dndx[k][1];
                }
            }
            l2 += qp.w * (u[0] * u[0] + u[1] * u[1]);
            semi += qp.w * g.norm_squared();
        }
    }
    Ok((l2.sqrt(), (l2 + semi).sqrt()))
}

fn energy_norm(k: &CscMatrix, e: &[f64]) -> Result<f64> {
    if k.nrows() != e.len() {
        return Err(Error::DimensionMismatch("energy matrix size".into()));
    }
    Ok(dot(e, &k.mul_vec(e)).max(0.0).sqrt())
}

/// Mesh parameter: largest element bounding-box side.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    if let Some(g) = mesh.grid() {
        let [a, b] = g.cell_size();
        return a.max(b);
    }
    let mut h: f64 = 0.0;
    let mut coords = [[0.0; 2]; 4];
    for e in 0..mesh.num_elements() {
        let m = mesh.element_coords_into(e, &mut coords);
        for a in 0..2 {
            let lo = coords[..m].iter().map(|c| c[a]).fold(f64::INFINITY, f64::min);
            let hi = coords[..m].iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max);
            h = h.max(hi - lo);
        }
    }
    h
}

/// Errors of a coarse solution against a reference on a nested fine mesh.
/// The coarse field is prolonged with its own shape functions; `energy`
/// is the reference tangent on the fine mesh.
pub fn error_norms(
    coarse: &Mesh,
    d_coarse: &[f64],
    fine: &Mesh,
    d_fine: &[f64],
    energy: Option<&CscMatrix>,
) -> Result<ErrorReport> {
    if d_fine.len() != fine.ndof() {
        return Err(Error::DimensionMismatch("reference field length".into()));
    }
    let p = prolongate(coarse, d_coarse, fine)?;
    let e: Vec<f64> = d_fine.iter().zip(&p).map(|(a, b)| b - a).collect();
    let (l2, h1) = field_norms(fine, &e)?;
    Ok(ErrorReport {
        l2,
        h1,
        energy: energy.map(|k| energy_norm(k, &e)).transpose()?,
        h: mesh_size(coarse),
    })
}

/// Least-squares fit of `log(err) = slope log(h) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Fits over the levels whose error exceeds `10 floor`; `None` with fewer
/// than two usable levels.
pub fn fit_slope(h: &[f64], err: &[f64], floor: f64) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err)
        .filter(|(h, e)| **h > 0.0 && e.is_finite() && **e > 10.0 * floor && **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Some(SlopeFit {
        slope,
        intercept,
        r2,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyAxis {
    MicroRefinement,
    MacroRefinement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyLevel {
    pub level: usize,
    /// Micro element size relative to the RVE side.
    pub h: f64,
    /// Macro element size.
    pub big_h: f64,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub axis: StudyAxis,
    pub levels: Vec<StudyLevel>,
    pub reference: String,
    pub l2: Option<SlopeFit>,
    pub h1: Option<SlopeFit>,
    pub energy: Option<SlopeFit>,
}

impl ConvergenceStudy {
    fn fit(axis: StudyAxis, levels: Vec<StudyLevel>, reference: String, floors: [f64; 3]) -> Self {
        let h: Vec<f64> = levels
            .iter()
            .map(|l| match axis {
                StudyAxis::MicroRefinement => l.h,
                StudyAxis::MacroRefinement => l.big_h,
            })
            .collect();
        let col = |f: &dyn Fn(&ErrorReport) -> f64| levels.iter().map(|l| f(&l.report)).collect::<Vec<_>>();
        let l2 = fit_slope(&h, &col(&|r| r.l2), floors[0]);
        let h1 = fit_slope(&h, &col(&|r| r.h1), floors[1]);
        let energy = fit_slope(&h, &col(&|r| r.energy.unwrap_or(f64::NAN)), floors[2]);
        ConvergenceStudy {
            axis,
            levels,
            reference,
            l2,
            h1,
            energy,
        }
    }
}

fn run_levels_check(levels: usize) -> Result<()> {
    if levels < 3 {
        return Err(Error::InvalidArgument(format!("≥3 levels required, got {levels}")));
    }
    Ok(())
}

fn solve_to_end(problem: &MacroProblem, micro: Mesh, material: MaterialMap, config: &SolverConfig) -> Result<(Vec<f64>, CscMatrix)> {
    let solver = TwoScaleSolver::new(problem, micro, material, *config)?;
    let (state, _) = solver.run()?;
    let (k, _, _) = solver.assemble_macro(&state)?;
    Ok((state.macro_d, k))
}

fn floors(mesh: &Mesh, d: &[f64], k: &CscMatrix, tol: f64) -> Result<[f64; 3]> {
    let (l2, h1) = field_norms(mesh, d)?;
    Ok([tol * l2, tol * h1, tol * energy_norm(k, d)?])
}

/// Micro refinement at a fixed macro mesh. Level `k` uses `base` refined
/// `k` times; the reference is the last level refined `reference_extra`
/// more times.
pub fn micro_convergence_study(
    problem: &MacroProblem,
    base: &Mesh,
    material: MaterialMap,
    config: &SolverConfig,
    levels: usize,
    reference_extra: usize,
) -> Result<ConvergenceStudy> {
    run_levels_check(levels)?;
    if reference_extra == 0 {
        return Err(Error::InvalidArgument("reference must be finer than every level".into()));
    }
    let mut meshes = vec![base.clone()];
    for _ in 1..levels + reference_extra {
        meshes.push(crate::mesh::refine_uniform(meshes.last().unwrap())?);
    }
    let reference_mesh = meshes.pop().unwrap();
    meshes.truncate(levels);
    let delta = base.bbox.width();
    let ref_h = mesh_size(&reference_mesh) / delta;
    let (d_ref, k_ref) = solve_to_end(problem, reference_mesh, material, config)?;
    let fl = floors(&problem.mesh, &d_ref, &k_ref, config.macro_tol.max(config.micro_tol))?;
    let big_h = mesh_size(&problem.mesh);
    let mut out = Vec::with_capacity(levels);
    for (level, m) in meshes.into_iter().enumerate() {
        let h = mesh_size(&m) / delta;
        let (d, _) = solve_to_end(problem, m, material, config)?;
        let mut report = error_norms(&problem.mesh, &d, &problem.mesh, &d_ref, Some(&k_ref))?;
        report.h = h;
        out.push(StudyLevel { level, h, big_h, report });
    }
    Ok(ConvergenceStudy::fit(
        StudyAxis::MicroRefinement,
        out,
        format!("micro h/delta = {ref_h:.6e}"),
        fl,
    ))
}

/// Macro refinement with a fixed micro mesh. `make(k)` builds the macro
/// problem of level `k`; levels `0..levels` are studied against level
/// `reference_level`, whose mesh must nest all others.
pub fn macro_convergence_study(
    make: &dyn Fn(usize) -> Result<MacroProblem>,
    micro: &Mesh,
    material: MaterialMap,
    config: &SolverConfig,
    levels: usize,
    reference_level: usize,
) -> Result<ConvergenceStudy> {
    run_levels_check(levels)?;
    if reference_level < levels {
        return Err(Error::InvalidArgument("reference must be finer than every level".into()));
    }
    let reference = make(reference_level)?;
    let (d_ref, k_ref) = solve_to_end(&reference, micro.clone(), material, config)?;
    let fl = floors(&reference.mesh, &d_ref, &k_ref, config.macro_tol.max(config.micro_tol))?;
    let h = mesh_size(micro) / micro.bbox.width();
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let p = make(level)?;
        let (d, _) = solve_to_end(&p, micro.clone(), material, config)?;
        let report = error_norms(&p.mesh, &d, &reference.mesh, &d_ref, Some(&k_ref))?;
        out.push(StudyLevel {
            level,
            h,
            big_h: report.h,
            report,
        });
    }
    Ok(ConvergenceStudy::fit(
        StudyAxis::MacroRefinement,
        out,
        format!("macro H = {:.6e}", mesh_size(&reference.mesh)),
        fl,
    ))
}

/// Probe amplitude of the Hill-Mandel check.
pub const PROBE_SCALE: f64 = 1e-6;

fn probe_gradients() -> [Matrix2<f64>; 4] {
    std::array::from_fn(|k| {
        let mut g = Matrix2::zeros();
        g[(k / 2, k % 2)] = PROBE_SCALE;
        g
    })
}

fn hill_mandel_with(state: &RveState, problem: &RveProblem, probe_rows: Option<Vec<ConstraintRow>>) -> Result<f64> {
    let sys = problem.assemble(&state.d)?;
    let mean_p = sys.mean_p();
    let v = sys.volume;
    let (solver, rows);
    let (solver, base) = match probe_rows {
        Some(r) => {
            rows = ConstraintSet::new(r.clone(), vec![0.0; r.len()])?;
            solver = SaddleSolver::new(problem.assembler.pattern.clone(), &rows)?;
            (&solver, &rows)
        }
        None => (problem.solver(), &state.constraints),
    };
    let factor = solver.factorize(&sys.k)?;
    let n = problem.ndof();
    let mut worst: f64 = 0.0;
    for g in probe_gradients() {
        let values = base.apply(&problem.affine([0.0, 0.0], &g));
        let (dd, _) = factor.solve(&vec![0.0; n], &values)?;
        let micro = dot(&sys.f_int, &dd) / v;
        let macro_power = mean_p.component_mul(&g).sum();
        let denom = macro_power.abs() + mean_p.norm() * g.norm();
        if denom > 0.0 {
            worst = worst.max((macro_power - micro).abs() / denom);
        } else {
            worst = worst.max(micro.abs());
        }
    }
    Ok(worst)
}

/// `max |<P>:dF - <P:dF^h>| / (|<P>:dF| + |<P>| |dF|)` over the four
/// in-plane probes `dF = 1e-6 e_a (x) e_J`, with `dF^h` the constrained
/// linear micro response.
pub fn hill_mandel_residual(state: &RveState, problem: &RveProblem) -> Result<f64> {
    hill_mandel_with(state, problem, None)
}

/// The same probe with only the four RVE corners constrained: a boundary
/// condition that violates the Hill-Mandel condition.
pub fn hill_mandel_free_boundary(state: &RveState, problem: &RveProblem) -> Result<f64> {
    let m = problem.mesh();
    let b = m.bbox;
    let tol = 1e-9 * b.width();
    let mut rows = Vec::new();
    for (n, x) in m.nodes.iter().enumerate() {
        let on_x = (x[0] - b.min[0]).abs() <= tol || (x[0] - b.max[0]).abs() <= tol;
        let on_y = (x[1] - b.min[1]).abs() <= tol || (x[1] - b.max[1]).abs() <= tol;
        if on_x && on_y {
            rows.push(ConstraintRow::Fixed { dof: 2 * n });
            rows.push(ConstraintRow::Fixed { dof: 2 * n + 1 });
        }
    }
    hill_mandel_with(state, problem, Some(rows))
}

/// Element phases of a mesh resolving the periodic grid `cells` with
/// period `epsilon`, taken at element centroids.
pub fn resolved_phases(mesh: &Mesh, cells: &PhaseGrid, epsilon: f64) -> Vec<u8> {
    let mut coords = [[0.0; 2]; 4];
    (0..mesh.num_elements())
        .map(|e| {
            let m = mesh.element_coords_into(e, &mut coords);
            let mut c = [0.0; 2];
            for x in &coords[..m] {
                c[0] += x[0] / m as f64;
                c[1] += x[1] / m as f64;
            }
            let fx = ((c[0] - mesh.bbox.min[0]) / epsilon).rem_euclid(1.0);
            let fy = ((c[1] - mesh.bbox.min[1]) / epsilon).rem_euclid(1.0);
            let i = ((fx * cells.nx as f64) as usize).min(cells.nx - 1);
            let j = ((fy * cells.ny as f64) as usize).min(cells.ny - 1);
            cells.get(i, j)
        })
        .collect()
}

/// Single-scale solution with load stepping and Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleScaleSolution {
    pub d: Vec<f64>,
    /// Relative residual history per load step.
    pub residuals: Vec<Vec<f64>>,
    pub u_max: Vec<f64>,
}

/// Standard one-scale FEM on the problem's own mesh (phases taken from
/// the mesh), used as an independent reference.
pub fn single_scale_oracle(
    problem: &MacroProblem,
    material: &MaterialMap,
    kinematics: Kinematics,
    n_steps: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SingleScaleSolution> {
    if n_steps == 0 || max_iter == 0 || !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument("invalid oracle controls".into()));
    }
    let asm = Assembler::new(Arc::new(problem.mesh.clone()))?;
    let fixed = ConstraintSet::fixed(&problem.fixed_dofs, &problem.fixed_values)?;
    let solver = SaddleSolver::new(asm.pattern.clone(), &fixed)?;
    let t = problem.thickness;
    let n = asm.ndof();
    let mut d = vec![0.0; n];
    let mut residuals = Vec::with_capacity(n_steps);
    let mut u_max = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        let lf = step as f64 / n_steps as f64;
        let f_ext: Vec<f64> = problem.f_ext.iter().map(|f| lf * f / t).collect();
        let mut hist = Vec::new();
        let mut r0 = None;
        let mut it = 0;
        loop {
            let sys = asm.assemble(&d, material, kinematics, Some(&f_ext))?;
            let gaps: Vec<f64> = problem
                .fixed_dofs
                .iter()
                .zip(&problem.fixed_values)
                .map(|(&k, v)| lf * v - d[k])
                .collect();
            let mut gap = vec![0.0; n];
            for (&k, g) in problem.fixed_dofs.iter().zip(&gaps) {
                gap[k] = *g;
            }
            let mut r = sys.residual.clone();
            for (ri, kg) in r.iter_mut().zip(sys.k.mul_vec(&gap)) {
                *ri += kg;
            }
            for &k in &problem.fixed_dofs {
                r[k] = 0.0;
            }
            let rn = norm(&r);
            let r0 = *r0.get_or_insert(rn);
            hist.push(if r0 > 0.0 { rn / r0 } else { 0.0 });
            let floor = crate::micro::ROUNDOFF_FLOOR * sys.force_scale.max(norm(&f_ext));
            if rn <= tol * r0 || rn <= floor {
                break;
            }
            if it == max_iter {
                return Err(Error::NoConvergence { iterations: it, history: hist });
            }
            let rhs: Vec<f64> = sys.residual.iter().map(|v| -v).collect();
            let (dd, _) = solver.factorize(&sys.k)?.solve(&rhs, &gaps)?;
            for (a, b) in d.iter_mut().zip(&dd) {
                *a += b;
            }
            it += 1;
        }
        residuals.push(hist);
        u_max.push(crate::two_scale::max_nodal_displacement_of(&d).0);
    }
    Ok(SingleScaleSolution { d, residuals, u_max })
}

/// Plane Voigt matrix on (11, 22, 12) from a gradient-space tangent
/// indexed `2a + J`.
pub fn voigt_from_gradient_tangent(a: &nalgebra::Matrix4<f64>) -> Matrix3<f64> {
    const IDX: [usize; 3] = [0, 3, 1];
    Matrix3::from_fn(|i, j| a[(IDX[i], IDX[j])])
}

/// Homogenized small-strain stiffness of an RVE at zero strain.
pub fn homogenized_voigt(problem: &RveProblem) -> Result<Matrix3<f64>> {
    let state = RveState::new(problem, MacroQp::standalone())?;
    Ok(voigt_from_gradient_tangent(&state.transfer()?.tangent))
}

/// Linear FEM on the macro mesh with a constant Voigt stiffness `d`,
/// assembled with the small-strain B matrix.
pub fn linear_homogenized_oracle(problem: &MacroProblem, d: &Matrix3<f64>) -> Result<Vec<f64>> {
    let mesh = &problem.mesh;
    let geom = MeshGeometry::new(mesh, &QuadratureRule::standard(mesh.kind))?;
    let pattern = Arc::new(SparsityPattern::new(mesh));
    let mut k = CscMatrix::zeros(pattern);
    for e in 0..mesh.num_elements() {
        let m = mesh.element(e).len();
        let mut ke = DMatrix::zeros(2 * m, 2 * m);
        for qp in geom.element(e) {
            let mut b = DMatrix::zeros(3, 2 * m);
            for i in 0..m {
                let [nx, ny] = qp.dndx[i];
                b[(0, 2 * i)] = nx;
                b[(1, 2 * i + 1)] = ny;
                b[(2, 2 * i)] = ny;
                b[(2, 2 * i + 1)] = nx;
            }
            let dd = DMatrix::from_fn(3, 3, |i, j| d[(i, j)]);
            ke += b.transpose() * dd * &b * (qp.w * problem.thickness);
        }
        k.add_element(e, &ke);
    }
    let fixed = ConstraintSet::fixed(&problem.fixed_dofs, &problem.fixed_values)?;
    let (u, _) = crate::linalg::solve_saddle(&k, &fixed, &problem.f_ext)?;
    Ok(u)
}

/// Per-step comparison of the two schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepComparison {
    pub step: usize,
    pub nested_iterations: usize,
    pub alternating_iterations: usize,
    pub nested_first_iteration_time: f64,
    pub alternating_first_iteration_time: f64,
    pub nested_time: f64,
    pub alternating_time: f64,
    pub ratio: f64,
    pub u_max_nested: f64,
    pub u_max_alternating: f64,
    pub u_max_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub steps: Vec<StepComparison>,
    pub total_nested: f64,
    pub total_alternating: f64,
    /// Total nested time over total alternating time.
    pub factor: f64,
    pub max_u_rel_diff: f64,
    pub u_max_agree: bool,
    /// Largest `alternating - nested` macro iteration count over the steps.
    pub max_extra_iterations: i64,
}

/// Relative `u_max` agreement demanded of the two schemes.
pub const U_MAX_AGREEMENT: f64 = 1e-6;

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

pub fn speedup_report(nested: &SolveTrace, alternating: &SolveTrace) -> Result<SpeedupReport> {
    if nested.steps.len() != alternating.steps.len() {
        return Err(Error::InvalidComparison(format!(
            "{} versus {} load steps",
            nested.steps.len(),
            alternating.steps.len()
        )));
    }
    let mut steps = Vec::with_capacity(nested.steps.len());
    for (a, b) in nested.steps.iter().zip(&alternating.steps) {
        if a.step != b.step || (a.load_factor - b.load_factor).abs() > 1e-12 {
            return Err(Error::InvalidComparison(format!("step {} does not match step {}", a.step, b.step)));
        }
        let scale = a.u_max.abs().max(b.u_max.abs());
        let diff = if scale > 0.0 { (a.u_max - b.u_max).abs() / scale } else { 0.0 };
        steps.push(StepComparison {
            step: a.step,
            nested_iterations: a.macro_iterations,
            alternating_iterations: b.macro_iterations,
            nested_first_iteration_time: a.first_iteration_time(),
            alternating_first_iteration_time: b.first_iteration_time(),
            nested_time: a.step_time,
            alternating_time: b.step_time,
            ratio: ratio(a.step_time, b.step_time),
            u_max_nested: a.u_max,
            u_max_alternating: b.u_max,
            u_max_rel_diff: diff,
        });
    }
    let max_u_rel_diff = steps.iter().map(|s| s.u_max_rel_diff).fold(0.0, f64::max);
    let max_extra_iterations = steps
        .iter()
        .map(|s| s.alternating_iterations as i64 - s.nested_iterations as i64)
        .max()
        .unwrap_or(0);
    Ok(SpeedupReport {
        total_nested: nested.total_time,
        total_alternating: alternating.total_time,
        factor: ratio(nested.total_time, alternating.total_time),
        max_u_rel_diff,
        u_max_agree: max_u_rel_diff <= U_MAX_AGREEMENT,
        max_extra_iterations,
        steps,
    })
}

/// Whether the last three residuals of a history decay quadratically:
/// `r_{k+1} <= c r_k^2`, with residuals at or below `floor` accepted.
pub fn quadratic_tail(residuals: &[f64], c: f64, floor: f64) -> bool {
    let n = residuals.len();
    if n < 3 {
        return residuals.last().is_none_or(|&r| r <= floor.max(0.0) || n < 2);
    }
    residuals[n - 3..]
        .windows(2)
        .all(|w| w[1] <= c * w[0] * w[0] || w[1] <= floor)
}

const CACHE_MAGIC: &str = "fehmm-reference v1";

/// On-disk store of reference displacement fields keyed by a content hash
/// of mesh and configuration.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    pub dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReferenceCache { dir: dir.into() }
    }

    pub fn key(mesh: &Mesh, descriptor: &str) -> String {
        let mut h = Sha256::new();
        h.update(mesh.kind.to_string().as_bytes());
        for x in &mesh.nodes {
            h.update(x[0].to_le_bytes());
            h.update(x[1].to_le_bytes());
        }
        for el in mesh.elements() {
            for &n in el {
                h.update((n as u64).to_le_bytes());
            }
        }
        h.update(&mesh.phases);
        h.update(descriptor.as_bytes());
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.ref"))
    }

    pub fn store(&self, key: &str, d: &[f64]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let mut s = format!("{CACHE_MAGIC} {key} {}\n", d.len() / 2);
        for u in d.chunks(2) {
            let _ = writeln!(s, "{:.17e} {:.17e}", u[0], u[1]);
        }
        let path = self.path(key);
        std::fs::write(&path, s)?;
        Ok(path)
    }

    pub fn load(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        parse_reference(&std::fs::read_to_string(&path)?, key, &path).map(Some)
    }
}

fn parse_reference(text: &str, key: &str, path: &Path) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let rest = header.strip_prefix(CACHE_MAGIC).ok_or_else(|| bad("bad header"))?;
    let mut parts = rest.split_whitespace();
    if parts.next() != Some(key) {
        return Err(bad("key mismatch"));
    }
    let n: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad node count"))?;
    let mut d = Vec::with_capacity(2 * n);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for v in line.split_whitespace() {
            d.push(v.parse::<f64>().map_err(|_| bad("bad number"))?);
        }
    }
    if d.len() != 2 * n {
        return Err(bad("length mismatch"));
    }
    Ok(d)
}
