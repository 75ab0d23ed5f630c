//! Total-Lagrangian finite elements for plane-strain hyperelasticity:
//! shape functions, quadrature, element force and tangent, assembly.
//!
//! Dofs are numbered node-major, `(u_x, u_y)` interleaved.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix3, SMatrix, SVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{
    isotropic_tangent, strain_energy, DeformationState, MaterialMap, StressTangent, PLANE_VOIGT,
};
use crate::mesh::{ElementKind, Mesh};

/// Largest element dof count (Quad4).
pub const MAX_ELEMENT_DOFS: usize = 8;

pub type ElementVector = SVector<f64, MAX_ELEMENT_DOFS>;
pub type ElementMatrix = SMatrix<f64, MAX_ELEMENT_DOFS, MAX_ELEMENT_DOFS>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub xi: [f64; 2],
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<QuadPoint>,
}

impl QuadratureRule {
    /// Full integration for linear elements: 1 point on Tri3, 2x2 Gauss on Quad4.
    pub fn standard(kind: ElementKind) -> Self {
        match kind {
            ElementKind::Tri3 => QuadratureRule {
                points: vec![QuadPoint {
                    xi: [1.0 / 3.0, 1.0 / 3.0],
                    w: 0.5,
                }],
            },
            ElementKind::Quad4 => Self::gauss_product(&[-1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt()], &[1.0, 1.0]),
        }
    }

    /// Higher-order rule for error integrals: 3-point Tri3, 3x3 Gauss Quad4.
    pub fn accurate(kind: ElementKind) -> Self {
        match kind {
            ElementKind::Tri3 => QuadratureRule {
                points: [[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]
                    .into_iter()
                    .map(|xi| QuadPoint { xi, w: 1.0 / 6.0 })
                    .collect(),
            },
            ElementKind::Quad4 => {
                let a = (0.6f64).sqrt();
                Self::gauss_product(&[-a, 0.0, a], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
        }
    }

    fn gauss_product(x: &[f64], w: &[f64]) -> Self {
        let mut points = Vec::with_capacity(x.len() * x.len());
        for (j, &eta) in x.iter().enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                points.push(QuadPoint {
                    xi: [xi, eta],
                    w: w[i] * w[j],
                });
            }
        }
        QuadratureRule { points }
    }

    pub fn points(&self) -> &[QuadPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shape function values and reference gradients at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeValues {
    pub n: [f64; 4],
    pub dn: [[f64; 2]; 4],
    pub count: usize,
}

/// Tri3 on the unit right triangle, Quad4 on `[-1, 1]^2` with
/// counter-clockwise nodes starting at `(-1, -1)`.
pub fn shape_eval(kind: ElementKind, xi: [f64; 2]) -> ShapeValues {
    let [r, s] = xi;
    match kind {
        ElementKind::Tri3 => ShapeValues {
            n: [1.0 - r - s, r, s, 0.0],
            dn: [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
            count: 3,
        },
        ElementKind::Quad4 => {
            const SIGNS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
            let mut n = [0.0; 4];
            let mut dn = [[0.0; 2]; 4];
            for (k, [a, b]) in SIGNS.iter().enumerate() {
                n[k] = 0.25 * (1.0 + a * r) * (1.0 + b * s);
                dn[k] = [0.25 * a * (1.0 + b * s), 0.25 * b * (1.0 + a * r)];
            }
            ShapeValues { n, dn, count: 4 }
        }
    }
}

/// Reference nodal coordinates of the element.
pub fn reference_nodes(kind: ElementKind) -> &'static [[f64; 2]] {
    match kind {
        ElementKind::Tri3 => &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        ElementKind::Quad4 => &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
    }
}

/// `J_ab = dx_a / dxi_b` and its determinant.
pub fn reference_jacobian(kind: ElementKind, coords: &[[f64; 2]], xi: [f64; 2]) -> (Matrix2<f64>, f64) {
    let sh = shape_eval(kind, xi);
    let mut jac = Matrix2::zeros();
    for (x, dn) in coords.iter().zip(&sh.dn) {
        for a in 0..2 {
            for b in 0..2 {
                jac[(a, b)] += x[a] * dn[b];
            }
        }
    }
    (jac, jac.determinant())
}

/// Shape data at the quadrature points of one element kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementKernel {
    pub kind: ElementKind,
    pub rule: QuadratureRule,
    pub shapes: Vec<ShapeValues>,
}

impl ElementKernel {
    pub fn new(kind: ElementKind, rule: QuadratureRule) -> Self {
        let shapes = rule.points().iter().map(|q| shape_eval(kind, q.xi)).collect();
        ElementKernel { kind, rule, shapes }
    }

    pub fn standard(kind: ElementKind) -> Self {
        Self::new(kind, QuadratureRule::standard(kind))
    }
}

/// Physical shape data at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpGeometry {
    pub n: [f64; 4],
    pub dndx: [[f64; 2]; 4],
    /// Quadrature weight times Jacobian determinant.
    pub w: f64,
    pub x: [f64; 2],
}

/// Maps reference shape data to physical coordinates for one element.
pub fn physical_qp(kind: ElementKind, coords: &[[f64; 2]], sh: &ShapeValues, w: f64) -> Result<QpGeometry> {
    let mut jac = Matrix2::zeros();
    let mut x = [0.0; 2];
    for (k, c) in coords.iter().enumerate() {
        for a in 0..2 {
            x[a] += sh.n[k] * c[a];
            for b in 0..2 {
                jac[(a, b)] += c[a] * sh.dn[k][b];
            }
        }
    }
    let det = jac.determinant();
    if !(det > 0.0) {
        return Err(Error::DegenerateElement { det });
    }
    let jinv = jac.try_inverse().ok_or(Error::DegenerateElement { det })?;
    let mut dndx = [[0.0; 2]; 4];
    for k in 0..kind.nodes_per_element() {
        for b in 0..2 {
            dndx[k][b] = sh.dn[k][0] * jinv[(0, b)] + sh.dn[k][1] * jinv[(1, b)];
        }
    }
    Ok(QpGeometry {
        n: sh.n,
        dndx,
        w: w * det,
        x,
    })
}

/// Precomputed quadrature geometry of every element of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGeometry {
    pub kind: ElementKind,
    pub nqp: usize,
    qps: Vec<QpGeometry>,
    pub volume: f64,
}

impl MeshGeometry {
    pub fn new(mesh: &Mesh, rule: &QuadratureRule) -> Result<Self> {
        let kernel = ElementKernel::new(mesh.kind, rule.clone());
        let nqp = rule.len();
        let mut qps = Vec::with_capacity(mesh.num_elements() * nqp);
        let mut coords = [[0.0; 2]; 4];
        for e in 0..mesh.num_elements() {
            let n = mesh.element_coords_into(e, &mut coords);
            for (sh, q) in kernel.shapes.iter().zip(rule.points()) {
                qps.push(physical_qp(mesh.kind, &coords[..n], sh, q.w).map_err(|err| err.in_element(e))?);
            }
        }
        let volume = qps.iter().map(|q| q.w).sum();
        Ok(MeshGeometry {
            kind: mesh.kind,
            nqp,
            qps,
            volume,
        })
    }

    pub fn standard(mesh: &Mesh) -> Result<Self> {
        Self::new(mesh, &QuadratureRule::standard(mesh.kind))
    }

    pub fn element(&self, e: usize) -> &[QpGeometry] {
        &self.qps[e * self.nqp..(e + 1) * self.nqp]
    }

    pub fn all(&self) -> &[QpGeometry] {
        &self.qps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kinematics {
    /// Small strain, reference-state tangent, no geometric stiffness.
    Linear,
    /// Green-Lagrange strain with the full consistent tangent.
    Nonlinear,
}

impl std::str::FromStr for Kinematics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "small" => Ok(Kinematics::Linear),
            "nonlinear" | "finite" => Ok(Kinematics::Nonlinear),
            other => Err(Error::Parse(format!("unknown kinematics '{other}'"))),
        }
    }
}

/// Plane displacement gradient `H_ab = sum_I d_Ia dN_I/dX_b`.
pub fn displacement_gradient(qp: &QpGeometry, d_e: &[f64]) -> Matrix2<f64> {
    let mut h = Matrix2::zeros();
    for (k, dn) in qp.dndx.iter().enumerate().take(d_e.len() / 2) {
        for a in 0..2 {
            let u = d_e[2 * k + a];
            h[(a, 0)] += u * dn[0];
            h[(a, 1)] += u * dn[1];
        }
    }
    h
}

/// Embeds an in-plane tensor with a unit (or zero) out-of-plane entry.
pub fn embed(m: &Matrix2<f64>, m33: f64) -> Matrix3<f64> {
    Matrix3::new(m[(0, 0)], m[(0, 1)], 0.0, m[(1, 0)], m[(1, 1)], 0.0, 0.0, 0.0, m33)
}

pub fn plane(m: &Matrix3<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

/// Deformation state at reference coordinate `xi` of element `e`.
pub fn deformation_gradient(mesh: &Mesh, e: usize, d_e: &[f64], xi: [f64; 2]) -> Result<DeformationState> {
    let mut coords = [[0.0; 2]; 4];
    let n = mesh.element_coords_into(e, &mut coords);
    if d_e.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!("{} element dofs, expected {}", d_e.len(), 2 * n)));
    }
    let qp = physical_qp(mesh.kind, &coords[..n], &shape_eval(mesh.kind, xi), 1.0).map_err(|err| err.in_element(e))?;
    let h = displacement_gradient(&qp, d_e);
    DeformationState::from_gradient(embed(&h, 0.0)).map_err(|err| err.in_element(e))
}

/// Material-point response in plane-strain Voigt form.
#[derive(Debug, Clone, Copy)]
pub struct PointResponse {
    pub f: Matrix2<f64>,
    /// In-plane second Piola-Kirchhoff stress (small-strain stress when linear).
    pub s: Matrix2<f64>,
    /// Tangent on (11, 22, 12) with engineering shear.
    pub d: Matrix3<f64>,
    pub energy: f64,
}

impl PointResponse {
    pub fn first_piola(&self, kin: Kinematics) -> Matrix2<f64> {
        match kin {
            Kinematics::Linear => self.s,
            Kinematics::Nonlinear => self.f * self.s,
        }
    }
}

pub fn point_response(h: &Matrix2<f64>, phase: u8, x: [f64; 2], mat: &MaterialMap, kin: Kinematics) -> Result<PointResponse> {
    let p = mat.params(phase, x);
    let f = Matrix2::identity() + h;
    match kin {
        Kinematics::Linear => {
            let full = isotropic_tangent(&p);
            let d = Matrix3::from_fn(|a, b| full[(PLANE_VOIGT[a], PLANE_VOIGT[b])]);
            let eps = Vector3::new(h[(0, 0)], h[(1, 1)], h[(0, 1)] + h[(1, 0)]);
            let sv = d * eps;
            Ok(PointResponse {
                f,
                s: Matrix2::new(sv[0], sv[2], sv[2], sv[1]),
                d,
                energy: 0.5 * sv.dot(&eps),
            })
        }
        Kinematics::Nonlinear => {
            let state = DeformationState::from_gradient(embed(h, 0.0))?;
            let st: StressTangent = mat.law.evaluate(&state, &p)?;
            Ok(PointResponse {
                f,
                s: plane(&st.s),
                d: st.plane_tangent(),
                energy: strain_energy(&state, &p, mat.law)?,
            })
        }
    }
}

/// Element contributions: internal force, tangent, energy and the
/// quadrature-weighted sums of F and P used for volume averages.
#[derive(Debug, Clone, Copy)]
pub struct ElementResponse {
    pub f: ElementVector,
    pub k: ElementMatrix,
    pub energy: f64,
    pub sum_f: Matrix2<f64>,
    pub sum_p: Matrix2<f64>,
}

pub fn element_response(
    qps: &[QpGeometry],
    phase: u8,
    d_e: &[f64],
    mat: &MaterialMap,
    kin: Kinematics,
    with_tangent: bool,
) -> Result<ElementResponse> {
    let npe = d_e.len() / 2;
    let mut out = ElementResponse {
        f: ElementVector::zeros(),
        k: ElementMatrix::zeros(),
        energy: 0.0,
        sum_f: Matrix2::zeros(),
        sum_p: Matrix2::zeros(),
    };
    for qp in qps {
        let h = displacement_gradient(qp, d_e);
        let r = point_response(&h, phase, qp.x, mat, kin)?;
        let fb = match kin {
            Kinematics::Linear => Matrix2::identity(),
            Kinematics::Nonlinear => r.f,
        };
        let mut b = SMatrix::<f64, 3, MAX_ELEMENT_DOFS>::zeros();
        for k in 0..npe {
            let [n1, n2] = qp.dndx[k];
            for a in 0..2 {
                b[(0, 2 * k + a)] = fb[(a, 0)] * n1;
                b[(1, 2 * k + a)] = fb[(a, 1)] * n2;
                b[(2, 2 * k + a)] = fb[(a, 0)] * n2 + fb[(a, 1)] * n1;
            }
        }
        let sv = Vector3::new(r.s[(0, 0)], r.s[(1, 1)], r.s[(0, 1)]);
        out.f += qp.w * b.transpose() * sv;
        out.energy += qp.w * r.energy;
        out.sum_f += qp.w * r.f;
        out.sum_p += qp.w * r.first_piola(kin);
        if with_tangent {
            let db = r.d * b;
            out.k += qp.w * b.transpose() * db;
            if kin == Kinematics::Nonlinear {
                for i in 0..npe {
                    let gi = qp.dndx[i];
                    for k in 0..npe {
                        let gk = qp.dndx[k];
                        let s_ik = sv[0] * gi[0] * gk[0]
                            + sv[1] * gi[1] * gk[1]
                            + sv[2] * (gi[0] * gk[1] + gi[1] * gk[0]);
                        let v = qp.w * s_ik;
                        out.k[(2 * i, 2 * k)] += v;
                        out.k[(2 * i + 1, 2 * k + 1)] += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn element_dofs(conn: &[usize], out: &mut [usize; MAX_ELEMENT_DOFS]) -> usize {
    for (k, &n) in conn.iter().enumerate() {
        out[2 * k] = 2 * n;
        out[2 * k + 1] = 2 * n + 1;
    }
    2 * conn.len()
}

fn gather(d: &[f64], conn: &[usize], out: &mut [f64; MAX_ELEMENT_DOFS]) -> usize {
    for (k, &n) in conn.iter().enumerate() {
        out[2 * k] = d[2 * n];
        out[2 * k + 1] = d[2 * n + 1];
    }
    2 * conn.len()
}

/// Element-local slice of a global dof vector.
pub fn element_values(mesh: &Mesh, e: usize, d: &[f64]) -> Vec<f64> {
    let mut out = [0.0; MAX_ELEMENT_DOFS];
    let m = gather(d, mesh.element(e), &mut out);
    out[..m].to_vec()
}

fn single_element(mesh: &Mesh, e: usize, d_e: &[f64], mat: &MaterialMap, kin: Kinematics, with_tangent: bool) -> Result<ElementResponse> {
    if e >= mesh.num_elements() {
        return Err(Error::InvalidArgument(format!("element {e} out of range")));
    }
    let npe = mesh.kind.nodes_per_element();
    if d_e.len() != 2 * npe {
        return Err(Error::DimensionMismatch(format!("{} element dofs, expected {}", d_e.len(), 2 * npe)));
    }
    let rule = QuadratureRule::standard(mesh.kind);
    let kernel = ElementKernel::new(mesh.kind, rule.clone());
    let mut coords = [[0.0; 2]; 4];
    let n = mesh.element_coords_into(e, &mut coords);
    let qps = kernel
        .shapes
        .iter()
        .zip(rule.points())
        .map(|(sh, q)| physical_qp(mesh.kind, &coords[..n], sh, q.w))
        .collect::<Result<Vec<_>>>()
        .map_err(|err| err.in_element(e))?;
    element_response(&qps, mesh.phases[e], d_e, mat, kin, with_tangent).map_err(|err| err.in_element(e))
}

/// `f_int = sum_qp w B^T S`.
pub fn element_internal_force(mesh: &Mesh, e: usize, d_e: &[f64], mat: &MaterialMap, kin: Kinematics) -> Result<Vec<f64>> {
    let r = single_element(mesh, e, d_e, mat, kin, false)?;
    Ok(r.f.as_slice()[..d_e.len()].to_vec())
}

/// Material plus initial-stress tangent of element `e`.
pub fn element_tangent(mesh: &Mesh, e: usize, d_e: &[f64], mat: &MaterialMap, kin: Kinematics) -> Result<DMatrix<f64>> {
    let r = single_element(mesh, e, d_e, mat, kin, true)?;
    let n = d_e.len();
    Ok(DMatrix::from_fn(n, n, |i, j| r.k[(i, j)]))
}

pub fn element_energy(mesh: &Mesh, e: usize, d_e: &[f64], mat: &MaterialMap, kin: Kinematics) -> Result<f64> {
    Ok(single_element(mesh, e, d_e, mat, kin, false)?.energy)
}

/// Compressed sparse column structure of a mesh stiffness matrix together
/// with the value slot of every element matrix entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    /// Row-major `(2 npe)^2` value slots per element.
    elem_slots: Vec<usize>,
    block: usize,
}

impl SparsityPattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.ndof();
        let block = 2 * mesh.kind.nodes_per_element();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut dofs = [0; MAX_ELEMENT_DOFS];
        for conn in mesh.elements() {
            let m = element_dofs(conn, &mut dofs);
            for &c in &dofs[..m] {
                cols[c].extend_from_slice(&dofs[..m]);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let mut elem_slots = Vec::with_capacity(mesh.num_elements() * block * block);
        for conn in mesh.elements() {
            let m = element_dofs(conn, &mut dofs);
            for &r in &dofs[..m] {
                for &c in &dofs[..m] {
                    let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
                    let pos = rows.binary_search(&r).expect("pattern contains element entries");
                    elem_slots.push(col_ptr[c] + pos);
                }
            }
        }
        SparsityPattern {
            n,
            col_ptr,
            row_idx,
            elem_slots,
            block,
        }
    }

    /// Structure of the nonzeros of a dense square matrix, symmetrized.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        for c in 0..n {
            row_idx.extend((0..n).filter(|&r| a[(r, c)] != 0.0 || a[(c, r)] != 0.0 || r == c));
            col_ptr.push(row_idx.len());
        }
        SparsityPattern {
            n,
            col_ptr,
            row_idx,
            elem_slots: Vec::new(),
            block: 0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let rows = &self.row_idx[self.col_ptr[col]..self.col_ptr[col + 1]];
        rows.binary_search(&row).ok().map(|p| self.col_ptr[col] + p)
    }

    fn element_slots(&self, e: usize) -> &[usize] {
        let b2 = self.block * self.block;
        &self.elem_slots[e * b2..(e + 1) * b2]
    }
}

/// Square sparse matrix on a shared pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub pattern: Arc<SparsityPattern>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CscMatrix { pattern, values }
    }

    pub fn nrows(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |p| self.values[p])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.pattern.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let p = &self.pattern;
        for c in 0..p.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                y[p.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// Adds the dense element matrix `k` (element-local dof order) of
    /// element `e`; the pattern must have been built from that mesh.
    pub fn add_element(&mut self, e: usize, k: &DMatrix<f64>) {
        let m = k.nrows();
        let slots = self.pattern.element_slots(e);
        debug_assert_eq!(slots.len(), m * m);
        for a in 0..m {
            for b in 0..m {
                self.values[slots[a * m + b]] += k[(a, b)];
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.pattern.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &self.pattern;
        let mut m = DMatrix::zeros(p.n, p.n);
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                m[(p.row_idx[k], c)] += self.values[k];
            }
        }
        m
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub k: CscMatrix,
    pub f_int: Vec<f64>,
    /// `f_int - f_ext`.
    pub residual: Vec<f64>,
    pub energy: f64,
    /// Integrals of F and P over the mesh.
    pub int_f: Matrix2<f64>,
    pub int_p: Matrix2<f64>,
    pub volume: f64,
    /// `sqrt(sum_e |f_e|^2)` over element internal forces; the magnitude
    /// against which assembly roundoff in `f_int` is measured.
    pub force_scale: f64,
}

impl AssembledSystem {
    pub fn ndof(&self) -> usize {
        self.f_int.len()
    }

    pub fn mean_f(&self) -> Matrix2<f64> {
        self.int_f / self.volume
    }

    pub fn mean_p(&self) -> Matrix2<f64> {
        self.int_p / self.volume
    }
}

/// Reusable assembly context for one mesh: geometry and sparsity are
/// computed once and shared.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub mesh: Arc<Mesh>,
    pub geometry: Arc<MeshGeometry>,
    pub pattern: Arc<SparsityPattern>,
}

/// Meshes with fewer elements are assembled on the calling thread.
const PARALLEL_ELEMENT_THRESHOLD: usize = 512;

impl Assembler {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let geometry = Arc::new(MeshGeometry::standard(&mesh)?);
        let pattern = Arc::new(SparsityPattern::new(&mesh));
        Ok(Assembler { mesh, geometry, pattern })
    }

    pub fn ndof(&self) -> usize {
        self.mesh.ndof()
    }

    fn element(&self, e: usize, d: &[f64], mat: &MaterialMap, kin: Kinematics, with_tangent: bool) -> Result<ElementResponse> {
        let mut d_e = [0.0; MAX_ELEMENT_DOFS];
        let m = gather(d, self.mesh.element(e), &mut d_e);
        element_response(self.geometry.element(e), self.mesh.phases[e], &d_e[..m], mat, kin, with_tangent)
            .map_err(|err| err.in_element(e))
    }

    fn responses(&self, d: &[f64], mat: &MaterialMap, kin: Kinematics, with_tangent: bool) -> Result<Vec<ElementResponse>> {
        let n_el = self.mesh.num_elements();
        if n_el >= PARALLEL_ELEMENT_THRESHOLD && rayon::current_num_threads() > 1 {
            (0..n_el)
                .into_par_iter()
                .map(|e| self.element(e, d, mat, kin, with_tangent))
                .collect()
        } else {
            (0..n_el).map(|e| self.element(e, d, mat, kin, with_tangent)).collect()
        }
    }

    /// Global tangent and internal force; the reduction runs in ascending
    /// element order so results do not depend on thread scheduling.
    pub fn assemble(&self, d: &[f64], mat: &MaterialMap, kin: Kinematics, f_ext: Option<&[f64]>) -> Result<AssembledSystem> {
        self.assemble_impl(d, mat, kin, f_ext, true)
    }

    /// Internal force and averages only; the returned matrix is zero.
    pub fn assemble_force(&self, d: &[f64], mat: &MaterialMap, kin: Kinematics, f_ext: Option<&[f64]>) -> Result<AssembledSystem> {
        self.assemble_impl(d, mat, kin, f_ext, false)
    }

    fn assemble_impl(&self, d: &[f64], mat: &MaterialMap, kin: Kinematics, f_ext: Option<&[f64]>, with_tangent: bool) -> Result<AssembledSystem> {
        let n = self.ndof();
        if d.len() != n || f_ext.is_some_and(|f| f.len() != n) {
            return Err(Error::DimensionMismatch(format!("vectors must have length {n}")));
        }
        let responses = self.responses(d, mat, kin, with_tangent)?;
        let mut k = CscMatrix::zeros(self.pattern.clone());
        let mut f_int = vec![0.0; n];
        let mut energy = 0.0;
        let mut int_f = Matrix2::zeros();
        let mut int_p = Matrix2::zeros();
        let mut scale2 = 0.0;
        let mut dofs = [0; MAX_ELEMENT_DOFS];
        for (e, r) in responses.iter().enumerate() {
            let m = element_dofs(self.mesh.element(e), &mut dofs);
            for a in 0..m {
                f_int[dofs[a]] += r.f[a];
                scale2 += r.f[a] * r.f[a];
            }
            if with_tangent {
                let slots = self.pattern.element_slots(e);
                for a in 0..m {
                    for b in 0..m {
                        k.values[slots[a * m + b]] += r.k[(a, b)];
                    }
                }
            }
            energy += r.energy;
            int_f += r.sum_f;
            int_p += r.sum_p;
        }
        let residual = match f_ext {
            Some(fe) => f_int.iter().zip(fe).map(|(a, b)| a - b).collect(),
            None => f_int.clone(),
        };
        Ok(AssembledSystem {
            k,
            f_int,
            residual,
            energy,
            int_f,
            int_p,
            volume: self.geometry.volume,
            force_scale: scale2.sqrt(),
        })
    }
}

/// One-shot assembly.
pub fn assemble(mesh: &Mesh, d: &[f64], mat: &MaterialMap, kin: Kinematics, f_ext: Option<&[f64]>) -> Result<AssembledSystem> {
    Assembler::new(Arc::new(mesh.clone()))?.assemble(d, mat, kin, f_ext)
}

/// Nodal displacement vector of the affine field `u = u0 + A (X - x0)`.
pub fn affine_field(mesh: &Mesh, u0: [f64; 2], a: &Matrix2<f64>, x0: [f64; 2]) -> Vec<f64> {
    let mut d = Vec::with_capacity(mesh.ndof());
    for x in &mesh.nodes {
        let dx = [x[0] - x0[0], x[1] - x0[1]];
        for i in 0..2 {
            d.push(u0[i] + a[(i, 0)] * dx[0] + a[(i, 1)] * dx[1]);
        }
    }
    d
}
