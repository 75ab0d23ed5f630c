//! Micro problems at macro quadrature points: coupling constraints built
//! from the linearized macro displacement, constrained Newton solves,
//! volume averages and the micro-to-macro transfer of stress and stiffness.
//!
//! RVE meshes live on `[0, delta]^2`; the macro quadrature point sits at the
//! RVE center, so the linearized macro field at micro node `X` is
//! `u0 + grad (X - center)`.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{embed, Assembler, AssembledSystem, Kinematics};
use crate::linalg::{norm, ConstraintRow, ConstraintSet, SaddleFactor, SaddleSolver};
use crate::material::{DeformationState, MaterialMap};
use crate::mesh::{pair_periodic_nodes, Mesh, PeriodicPairing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingKind {
    Periodic,
    /// Kinematically uniform boundary: every boundary node follows the affine field.
    LinearDisplacement,
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "periodic" | "pbc" => Ok(CouplingKind::Periodic),
            "linear" | "kubc" | "dirichlet" | "linear-displacement" => Ok(CouplingKind::LinearDisplacement),
            other => Err(Error::Parse(format!("unknown coupling '{other}'"))),
        }
    }
}

/// Macro shape data at the quadrature point an RVE is attached to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroQp {
    pub npe: usize,
    pub n: [f64; 4],
    pub dndx: [[f64; 2]; 4],
    /// Quadrature weight times Jacobian determinant times thickness.
    pub weight: f64,
    pub x: [f64; 2],
}

impl MacroQp {
    /// A point with no macro element attached; used for standalone RVE work.
    pub fn standalone() -> Self {
        MacroQp {
            npe: 0,
            n: [0.0; 4],
            dndx: [[0.0; 2]; 4],
            weight: 1.0,
            x: [0.0; 2],
        }
    }
}

/// Affine field `u0 + grad (X - center)` sampled at every node.
pub fn linearize_macro(u0: [f64; 2], grad: &Matrix2<f64>, center: [f64; 2], nodes: &[[f64; 2]]) -> Vec<f64> {
    let mut d = Vec::with_capacity(2 * nodes.len());
    for x in nodes {
        let dx = [x[0] - center[0], x[1] - center[1]];
        for a in 0..2 {
            d.push(u0[a] + grad[(a, 0)] * dx[0] + grad[(a, 1)] * dx[1]);
        }
    }
    d
}

fn constraint_rows(mesh: &Mesh, pairing: Option<&PeriodicPairing>, coupling: CouplingKind) -> Result<Vec<ConstraintRow>> {
    let mut rows = Vec::new();
    match coupling {
        CouplingKind::Periodic => {
            let pairing = pairing.ok_or_else(|| Error::InvalidArgument("periodic coupling needs a pairing".into()))?;
            for &c in &pairing.corners {
                rows.push(ConstraintRow::Fixed { dof: 2 * c });
                rows.push(ConstraintRow::Fixed { dof: 2 * c + 1 });
            }
            for &(p, q) in &pairing.pairs {
                for a in 0..2 {
                    rows.push(ConstraintRow::Periodic {
                        plus: 2 * q + a,
                        minus: 2 * p + a,
                    });
                }
            }
        }
        CouplingKind::LinearDisplacement => {
            for n in mesh.boundary_nodes() {
                rows.push(ConstraintRow::Fixed { dof: 2 * n });
                rows.push(ConstraintRow::Fixed { dof: 2 * n + 1 });
            }
        }
    }
    Ok(rows)
}

/// Constraint rows with values `G dbar`.
///
/// Periodic: both dofs of the four corners are pinned, and every pair
/// `(p, q)` gets `u_q - u_p = dbar_q - dbar_p` per direction. Linear
/// displacement: every boundary dof is pinned.
pub fn build_constraints(
    mesh: &Mesh,
    pairing: Option<&PeriodicPairing>,
    coupling: CouplingKind,
    dbar: &[f64],
) -> Result<ConstraintSet> {
    if dbar.len() != mesh.ndof() {
        return Err(Error::DimensionMismatch(format!(
            "dbar has {} entries, mesh has {} dofs",
            dbar.len(),
            mesh.ndof()
        )));
    }
    let rows = constraint_rows(mesh, pairing, coupling)?;
    let n = rows.len();
    let mut set = ConstraintSet::new(rows, vec![0.0; n])?;
    set.values = set.apply(dbar);
    Ok(set)
}

/// Data shared by every RVE with the same mesh, material and coupling.
#[derive(Debug)]
pub struct RveProblem {
    pub assembler: Assembler,
    pub material: MaterialMap,
    pub kinematics: Kinematics,
    pub coupling: CouplingKind,
    pub delta: f64,
    pub center: [f64; 2],
    pub pairing: Option<PeriodicPairing>,
    rows: Vec<ConstraintRow>,
    solver: SaddleSolver,
}

impl RveProblem {
    pub fn new(mesh: Mesh, material: MaterialMap, kinematics: Kinematics, coupling: CouplingKind) -> Result<Self> {
        let delta = mesh.bbox.width();
        let pairing = match coupling {
            CouplingKind::Periodic => Some(pair_periodic_nodes(&mesh, delta)?),
            CouplingKind::LinearDisplacement => {
                if (mesh.bbox.height() - delta).abs() > 1e-9 * delta {
                    return Err(Error::InvalidArgument("RVE mesh must be square".into()));
                }
                None
            }
        };
        let rows = constraint_rows(&mesh, pairing.as_ref(), coupling)?;
        let zero = ConstraintSet::new(rows.clone(), vec![0.0; rows.len()])?;
        let center = mesh.bbox.center();
        let assembler = Assembler::new(Arc::new(mesh))?;
        let solver = SaddleSolver::new(assembler.pattern.clone(), &zero)?;
        Ok(RveProblem {
            assembler,
            material,
            kinematics,
            coupling,
            delta,
            center,
            pairing,
            rows,
            solver,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.assembler.mesh
    }

    pub fn ndof(&self) -> usize {
        self.assembler.ndof()
    }

    pub fn volume(&self) -> f64 {
        self.assembler.geometry.volume
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn affine(&self, u0: [f64; 2], grad: &Matrix2<f64>) -> Vec<f64> {
        linearize_macro(u0, grad, self.center, &self.mesh().nodes)
    }

    pub fn constraints_for(&self, dbar: &[f64]) -> ConstraintSet {
        let mut set = ConstraintSet {
            rows: self.rows.clone(),
            values: Vec::new(),
        };
        set.values = set.apply(dbar);
        set
    }

    pub fn assemble(&self, d: &[f64]) -> Result<AssembledSystem> {
        self.assembler.assemble(d, &self.material, self.kinematics, None)
    }

    pub fn solver(&self) -> &SaddleSolver {
        &self.solver
    }
}

/// Homogenized quantities handed to the macro scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    /// Symmetric part of `<F>^-1 <P>` (the mean stress under linear kinematics).
    pub stress: Matrix2<f64>,
    pub mean_p: Matrix2<f64>,
    pub mean_f: Matrix2<f64>,
    /// `d<P>_aJ / dF_bL` at index `(2a + J, 2b + L)`, equal to `W^T K W / V`
    /// for the constrained unit-gradient responses `W`.
    pub tangent: Matrix4<f64>,
    /// `|skew(<F>^-1 <P>)| / |<F>^-1 <P>|`.
    pub asymmetry: f64,
    pub energy_density: f64,
}

/// Relative size of residuals indistinguishable from assembly roundoff.
pub const ROUNDOFF_FLOOR: f64 = 1e-11;

/// Micro state at one macro quadrature point.
#[derive(Debug, Clone)]
pub struct RveState {
    pub d: Vec<f64>,
    pub lambda: Vec<f64>,
    pub constraints: ConstraintSet,
    /// Linearized macro field at all micro nodes.
    pub dbar: Vec<f64>,
    /// Stored fluctuation `d - dbar` of the last converged (or last
    /// updated) state.
    pub fluct: Vec<f64>,
    pub macro_u: [f64; 2],
    pub macro_grad: Matrix2<f64>,
    pub qp: MacroQp,
    pub volume: f64,
    /// Projected residual norm at the last evaluation.
    pub residual: f64,
    /// First residual of the current load step, the normalizer of `relative_residual`.
    pub residual_ref: Option<f64>,
    /// Element force magnitude at the last evaluation; residuals below
    /// `ROUNDOFF_FLOOR` times this count as converged.
    pub force_scale: f64,
    pub transfer: Option<Transfer>,
    /// Newton updates performed since the start of the load step.
    pub iterations: usize,
}

impl RveState {
    /// Undeformed state with transfer data evaluated at zero strain.
    pub fn new(problem: &RveProblem, qp: MacroQp) -> Result<Self> {
        let n = problem.ndof();
        let mut s = RveState {
            d: vec![0.0; n],
            lambda: vec![0.0; problem.num_constraints()],
            constraints: problem.constraints_for(&vec![0.0; n]),
            dbar: vec![0.0; n],
            fluct: vec![0.0; n],
            macro_u: [0.0; 2],
            macro_grad: Matrix2::zeros(),
            qp,
            volume: problem.volume(),
            residual: 0.0,
            residual_ref: None,
            force_scale: 0.0,
            transfer: None,
            iterations: 0,
        };
        s.evaluate(problem, true)?;
        Ok(s)
    }

    pub fn begin_step(&mut self) {
        self.residual_ref = None;
        self.iterations = 0;
    }

    /// Imposes new macro data and resets the start vector to the new affine
    /// field plus the stored fluctuation.
    ///
    /// The micro problem is translation invariant, so the affine field is
    /// taken relative to the macro displacement `u0`; carrying `u0` would only
    /// cost digits in the displacement gradients.
    pub fn set_macro(&mut self, problem: &RveProblem, u0: [f64; 2], grad: Matrix2<f64>) {
        self.macro_u = u0;
        self.macro_grad = grad;
        self.dbar = problem.affine([0.0, 0.0], &grad);
        self.constraints = problem.constraints_for(&self.dbar);
        for ((d, b), f) in self.d.iter_mut().zip(&self.dbar).zip(&self.fluct) {
            *d = b + f;
        }
    }

    pub fn store_fluctuation(&mut self) {
        for ((f, d), b) in self.fluct.iter_mut().zip(&self.d).zip(&self.dbar) {
            *f = d - b;
        }
    }

    pub fn macro_f(&self) -> Matrix2<f64> {
        Matrix2::identity() + self.macro_grad
    }

    /// `r / r_ref`, with `r_ref` the first residual of the current step.
    pub fn relative_residual(&self) -> f64 {
        match self.residual_ref {
            Some(r0) if r0 > 0.0 => self.residual / r0,
            _ => 0.0,
        }
    }

    pub fn is_converged(&self, tol: f64) -> bool {
        self.residual == 0.0
            || self.residual <= ROUNDOFF_FLOOR * self.force_scale
            || self.residual_ref.is_some_and(|r0| self.residual <= tol * r0)
    }

    fn record_residual(&mut self, sys: &AssembledSystem) {
        self.residual = norm(&self.constraints.project(&sys.f_int));
        self.force_scale = sys.force_scale;
        if self.residual_ref.is_none() {
            self.residual_ref = Some(self.residual);
        }
    }

    fn newton_update(&mut self, problem: &RveProblem, factor: &SaddleFactor<'_>, sys: &AssembledSystem) -> Result<()> {
        let rhs: Vec<f64> = sys.f_int.iter().map(|v| -v).collect();
        let gap: Vec<f64> = self.constraints.violation(&self.d).iter().map(|v| -v).collect();
        let (dd, lambda) = factor.solve(&rhs, &gap)?;
        for (d, x) in self.d.iter_mut().zip(&dd) {
            *d += x;
        }
        self.lambda = lambda;
        self.iterations += 1;
        let _ = problem;
        Ok(())
    }

    /// One assemble, saddle solve and update. Returns the projected
    /// residual norm of the state the step started from.
    pub fn newton_step(&mut self, problem: &RveProblem) -> Result<f64> {
        let sys = problem.assemble(&self.d)?;
        self.record_residual(&sys);
        let r = self.residual;
        let factor = problem.solver.factorize(&sys.k)?;
        self.newton_update(problem, &factor, &sys)?;
        self.transfer = None;
        Ok(r)
    }

    /// Assembles at the current state, records the residual and, if asked,
    /// refreshes the transfer data with the same factorization.
    pub fn evaluate(&mut self, problem: &RveProblem, with_transfer: bool) -> Result<f64> {
        let sys = problem.assemble(&self.d)?;
        self.record_residual(&sys);
        if with_transfer {
            let factor = problem.solver.factorize(&sys.k)?;
            self.transfer = Some(self.compute_transfer(problem, &sys, &factor)?);
        }
        Ok(self.residual)
    }

    /// Newton iteration to `tol` relative to the step's first residual,
    /// ending with a transfer refresh at the converged state. Returns the
    /// number of updates performed.
    pub fn solve(&mut self, problem: &RveProblem, tol: f64, max_iter: usize) -> Result<usize> {
        let mut history = Vec::new();
        let mut count = 0;
        loop {
            let sys = problem.assemble(&self.d)?;
            self.record_residual(&sys);
            history.push(self.relative_residual());
            let factor = problem.solver.factorize(&sys.k)?;
            if self.is_converged(tol) {
                self.transfer = Some(self.compute_transfer(problem, &sys, &factor)?);
                self.store_fluctuation();
                return Ok(count);
            }
            if count == max_iter {
                return Err(Error::NoConvergence {
                    iterations: count,
                    history,
                });
            }
            self.newton_update(problem, &factor, &sys)?;
            count += 1;
        }
    }

    /// Constrained linear responses to the four unit macro gradients
    /// `e_a (x) e_J`, in the order `J + 2a`.
    fn unit_gradient_responses(&self, problem: &RveProblem, factor: &SaddleFactor<'_>) -> Result<Vec<Vec<f64>>> {
        let n = problem.ndof();
        let rhs: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|k| {
                let mut g = Matrix2::zeros();
                g[(k / 2, k % 2)] = 1.0;
                let dbar = problem.affine([0.0, 0.0], &g);
                (vec![0.0; n], self.constraints.apply(&dbar))
            })
            .collect();
        Ok(factor.solve_many(&rhs)?.into_iter().map(|(x, _)| x).collect())
    }

    fn compute_transfer(&self, problem: &RveProblem, sys: &AssembledSystem, factor: &SaddleFactor<'_>) -> Result<Transfer> {
        let w = self.unit_gradient_responses(problem, factor)?;
        let kw: Vec<Vec<f64>> = w.iter().map(|x| sys.k.mul_vec(x)).collect();
        let v = sys.volume;
        let mut tangent = Matrix4::zeros();
        for i in 0..4 {
            for j in i..4 {
                let a = 0.5 * (crate::linalg::dot(&w[i], &kw[j]) + crate::linalg::dot(&w[j], &kw[i])) / v;
                tangent[(i, j)] = a;
                tangent[(j, i)] = a;
            }
        }
        let mean_f = sys.mean_f();
        let mean_p = sys.mean_p();
        let (stress, asymmetry) = match problem.kinematics {
            Kinematics::Linear => (0.5 * (mean_p + mean_p.transpose()), 0.0),
            Kinematics::Nonlinear => {
                let det = mean_f.determinant();
                let inv = mean_f.try_inverse().filter(|_| det > 0.0).ok_or(Error::NonPhysicalAverage { det })?;
                let s = inv * mean_p;
                let sym = 0.5 * (s + s.transpose());
                let skew = 0.5 * (s - s.transpose());
                let scale = s.norm();
                (sym, if scale > 0.0 { skew.norm() / scale } else { 0.0 })
            }
        };
        Ok(Transfer {
            stress,
            mean_p,
            mean_f,
            tangent,
            asymmetry,
            energy_density: sys.energy / v,
        })
    }

    /// Volume average of `F` at the current state.
    pub fn average_f(&self, problem: &RveProblem) -> Result<Matrix3<f64>> {
        let sys = problem.assembler.assemble_force(&self.d, &problem.material, problem.kinematics, None)?;
        Ok(embed(&sys.mean_f(), 1.0))
    }

    /// `S^H = <F>^-1 <P>` (unsymmetrized) at the current state.
    pub fn macro_stress(&self, problem: &RveProblem) -> Result<Matrix2<f64>> {
        let sys = problem.assembler.assemble_force(&self.d, &problem.material, problem.kinematics, None)?;
        let mean_f = sys.mean_f();
        match problem.kinematics {
            Kinematics::Linear => Ok(sys.mean_p()),
            Kinematics::Nonlinear => {
                let det = mean_f.determinant();
                let inv = mean_f.try_inverse().filter(|_| det > 0.0).ok_or(Error::NonPhysicalAverage { det })?;
                Ok(inv * sys.mean_p())
            }
        }
    }

    pub fn transfer(&self) -> Result<&Transfer> {
        self.transfer
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("transfer data not evaluated for the current state".into()))
    }

    /// Largest `|f(p) + f(q)|` over periodic node pairs relative to the
    /// multiplier norm; the nodal reactions of a converged periodic state
    /// are antiperiodic.
    pub fn antiperiodicity_defect(&self, problem: &RveProblem) -> Result<f64> {
        let pairing = match &problem.pairing {
            Some(p) => p,
            None => return Ok(0.0),
        };
        let sys = problem.assembler.assemble_force(&self.d, &problem.material, problem.kinematics, None)?;
        let lnorm = norm(&self.lambda);
        if lnorm == 0.0 {
            return Ok(0.0);
        }
        let mut worst: f64 = 0.0;
        for &(p, q) in &pairing.pairs {
            let s = [sys.f_int[2 * p] + sys.f_int[2 * q], sys.f_int[2 * p + 1] + sys.f_int[2 * q + 1]];
            worst = worst.max((s[0] * s[0] + s[1] * s[1]).sqrt());
        }
        Ok(worst / lnorm)
    }
}

/// Columns of the transformation matrix `T` for a macro element with
/// `qp.npe` nodes: column `2 I + i` is the constrained micro response to the
/// linearized unit displacement of macro node `I` in direction `i`.
pub fn build_t(state: &RveState, problem: &RveProblem) -> Result<DMatrix<f64>> {
    let sys = problem.assemble(&state.d)?;
    let factor = problem.solver.factorize(&sys.k)?;
    let qp = &state.qp;
    let n = problem.ndof();
    let rhs: Vec<(Vec<f64>, Vec<f64>)> = (0..2 * qp.npe)
        .map(|col| {
            let (node, dir) = (col / 2, col % 2);
            let mut u0 = [0.0; 2];
            u0[dir] = qp.n[node];
            let mut g = Matrix2::zeros();
            g[(dir, 0)] = qp.dndx[node][0];
            g[(dir, 1)] = qp.dndx[node][1];
            let dbar = problem.affine(u0, &g);
            (vec![0.0; n], state.constraints.apply(&dbar))
        })
        .collect();
    let cols = factor.solve_many(&rhs)?;
    Ok(DMatrix::from_fn(n, 2 * qp.npe, |i, j| cols[j].0[i]))
}

/// `sum_l (w_l / |K_l|) T_l^T K_l T_l`.
pub fn macro_element_stiffness(
    ts: &[DMatrix<f64>],
    ks: &[DMatrix<f64>],
    weights: &[f64],
    volumes: &[f64],
) -> Result<DMatrix<f64>> {
    if ts.len() != ks.len() || ts.len() != weights.len() || ts.len() != volumes.len() || ts.is_empty() {
        return Err(Error::DimensionMismatch("per-qp inputs must have equal, nonzero length".into()));
    }
    let m = ts[0].ncols();
    let mut k = DMatrix::zeros(m, m);
    for (((t, kh), w), v) in ts.iter().zip(ks).zip(weights).zip(volumes) {
        if t.ncols() != m || kh.nrows() != t.nrows() || kh.ncols() != t.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "T is {}x{}, K is {}x{}",
                t.nrows(),
                t.ncols(),
                kh.nrows(),
                kh.ncols()
            )));
        }
        k += (w / v) * t.transpose() * kh * t;
    }
    Ok(k)
}

/// Dense micro tangent at the state, for use with [`build_t`].
pub fn micro_tangent(state: &RveState, problem: &RveProblem) -> Result<DMatrix<f64>> {
    Ok(problem.assemble(&state.d)?.k.to_dense())
}

/// Macro element stiffness and internal force from the transfer data
/// `(macro qp, transfer)` of the element's quadrature points.
pub fn homogenized_element(
    qps: &[(MacroQp, Transfer, Matrix2<f64>)],
    kin: Kinematics,
) -> (DMatrix<f64>, Vec<f64>) {
    let npe = qps.first().map_or(0, |q| q.0.npe);
    let m = 2 * npe;
    let mut k = DMatrix::zeros(m, m);
    let mut f = vec![0.0; m];
    for (qp, tr, macro_f) in qps {
        let p = match kin {
            Kinematics::Linear => tr.stress,
            Kinematics::Nonlinear => macro_f * tr.stress,
        };
        for i in 0..npe {
            let gi = qp.dndx[i];
            for a in 0..2 {
                f[2 * i + a] += qp.weight * (p[(a, 0)] * gi[0] + p[(a, 1)] * gi[1]);
                for kk in 0..npe {
                    let gk = qp.dndx[kk];
                    for b in 0..2 {
                        let mut v = 0.0;
                        for jj in 0..2 {
                            for l in 0..2 {
                                v += gi[jj] * tr.tangent[(2 * a + jj, 2 * b + l)] * gk[l];
                            }
                        }
                        k[(2 * i + a, 2 * kk + b)] += qp.weight * v;
                    }
                }
            }
        }
    }
    (k, f)
}

/// Per-element micro field data for plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub element: usize,
    pub x: f64,
    pub y: f64,
    pub phase: u8,
    pub e_xx: f64,
    pub e_yy: f64,
    /// Engineering shear `2 E_xy`.
    pub gamma_xy: f64,
    pub von_mises: f64,
}

/// Element-centroid Green-Lagrange strain and Cauchy von Mises stress.
pub fn field_snapshot(state: &RveState, problem: &RveProblem) -> Result<Vec<SnapshotRow>> {
    let mesh = problem.mesh();
    let geom = &problem.assembler.geometry;
    let mut rows = Vec::with_capacity(mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let qps = geom.element(e);
        let d_e = crate::fem::element_values(mesh, e, &state.d);
        let (mut x, mut e_acc, mut vm, mut wsum) = ([0.0; 2], Matrix2::zeros(), 0.0, 0.0);
        for qp in qps {
            let h = crate::fem::displacement_gradient(qp, &d_e);
            let st = DeformationState::from_gradient(embed(&h, 0.0)).map_err(|err| err.in_element(e))?;
            let p = problem.material.params(mesh.phases[e], qp.x);
            let s = match problem.kinematics {
                Kinematics::Linear => crate::material::linear_elastic(&DeformationState::small_strain(embed(&h, 0.0)), &p).s,
                Kinematics::Nonlinear => problem.material.law.evaluate(&st, &p)?.s,
            };
            let sigma = match problem.kinematics {
                Kinematics::Linear => s,
                Kinematics::Nonlinear => st.f * s * st.f.transpose() / st.j,
            };
            let dev = sigma - Matrix3::identity() * (sigma.trace() / 3.0);
            vm += qp.w * (1.5 * dev.component_mul(&dev).sum()).sqrt();
            e_acc += qp.w * crate::fem::plane(&st.e);
            x[0] += qp.w * qp.x[0];
            x[1] += qp.w * qp.x[1];
            wsum += qp.w;
        }
        rows.push(SnapshotRow {
            element: e,
            x: x[0] / wsum,
            y: x[1] / wsum,
            phase: mesh.phases[e],
            e_xx: e_acc[(0, 0)] / wsum,
            e_yy: e_acc[(1, 1)] / wsum,
            gamma_xy: 2.0 * e_acc[(0, 1)] / wsum,
            von_mises: vm / wsum,
        });
    }
    Ok(rows)
}
