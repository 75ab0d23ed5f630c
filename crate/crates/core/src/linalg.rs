//! Linear constraints and the monolithic saddle-point solve
//! `[K G^T; G 0] [x; lambda] = [r; g]`.
//!
//! Factorization is a sparse LU with partial pivoting from `faer`. The
//! fill-reducing symbolic analysis depends only on the structure of `K`
//! and `G` and is computed once per solver, then reused for every numeric
//! factorization (all RVEs sharing a mesh share one solver).

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{CscMatrix, SparsityPattern};

/// One scalar constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintRow {
    /// `u[dof] = value`.
    Fixed { dof: usize },
    /// `u[plus] - u[minus] = value`.
    Periodic { plus: usize, minus: usize },
}

impl ConstraintRow {
    fn dofs(&self) -> impl Iterator<Item = usize> {
        let (a, b) = match *self {
            ConstraintRow::Fixed { dof } => (dof, None),
            ConstraintRow::Periodic { plus, minus } => (plus, Some(minus)),
        };
        std::iter::once(a).chain(b)
    }
}

/// `G u = values`, with rows of disjoint support (hence full row rank).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub values: Vec<f64>,
}

impl ConstraintSet {
    pub fn new(rows: Vec<ConstraintRow>, values: Vec<f64>) -> Result<Self> {
        if rows.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} constraint rows, {} values",
                rows.len(),
                values.len()
            )));
        }
        let mut owner = std::collections::HashMap::new();
        for (r, row) in rows.iter().enumerate() {
            if let ConstraintRow::Periodic { plus, minus } = row {
                if plus == minus {
                    return Err(Error::ConstraintRedundancy { rows: vec![r] });
                }
            }
            for dof in row.dofs() {
                if let Some(&first) = owner.get(&dof) {
                    return Err(Error::ConstraintRedundancy { rows: vec![first, r] });
                }
                owner.insert(dof, r);
            }
        }
        Ok(ConstraintSet { rows, values })
    }

    pub fn empty() -> Self {
        ConstraintSet {
            rows: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn fixed(dofs: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(dofs.iter().map(|&dof| ConstraintRow::Fixed { dof }).collect(), values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_dof(&self) -> Option<usize> {
        self.rows.iter().flat_map(|r| r.dofs()).max()
    }

    /// `G u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match *r {
                ConstraintRow::Fixed { dof } => u[dof],
                ConstraintRow::Periodic { plus, minus } => u[plus] - u[minus],
            })
            .collect()
    }

    /// `G u - values`.
    pub fn violation(&self, u: &[f64]) -> Vec<f64> {
        self.apply(u).iter().zip(&self.values).map(|(a, b)| a - b).collect()
    }

    /// `G^T lambda` as a vector of length `n`.
    pub fn transpose_apply(&self, lambda: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                ConstraintRow::Fixed { dof } => out[dof] += lambda[r],
                ConstraintRow::Periodic { plus, minus } => {
                    out[plus] += lambda[r];
                    out[minus] -= lambda[r];
                }
            }
        }
        out
    }

    /// Orthogonal projection onto the null space of `G`. With disjoint row
    /// supports this zeroes fixed dofs and averages periodic pairs.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for row in &self.rows {
            match *row {
                ConstraintRow::Fixed { dof } => out[dof] = 0.0,
                ConstraintRow::Periodic { plus, minus } => {
                    let m = 0.5 * (v[plus] + v[minus]);
                    out[plus] = m;
                    out[minus] = m;
                }
            }
        }
        out
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.rows.len() {
            return Err(Error::DimensionMismatch("constraint value count".into()));
        }
        Ok(ConstraintSet {
            rows: self.rows.clone(),
            values,
        })
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows.len(), n);
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                ConstraintRow::Fixed { dof } => g[(r, dof)] = 1.0,
                ConstraintRow::Periodic { plus, minus } => {
                    g[(r, plus)] = 1.0;
                    g[(r, minus)] = -1.0;
                }
            }
        }
        g
    }
}

/// Structure of the augmented matrix and the slot of every `K` and `G` entry.
#[derive(Debug)]
pub struct SaddleSolver {
    n: usize,
    m: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    k_slots: Vec<usize>,
    /// Per constraint row: (slot in column, slot in row, coefficient) for each dof.
    g_slots: Vec<[(usize, usize, f64); 2]>,
    g_len: Vec<usize>,
    pattern: Arc<SparsityPattern>,
    rows: Vec<ConstraintRow>,
    symbolic: OnceLock<SymbolicLu<usize>>,
}

impl SaddleSolver {
    pub fn new(pattern: Arc<SparsityPattern>, constraints: &ConstraintSet) -> Result<Self> {
        let n = pattern.n;
        let m = constraints.len();
        if constraints.max_dof().is_some_and(|d| d >= n) {
            return Err(Error::DimensionMismatch(format!("constraint dof exceeds system size {n}")));
        }
        // dof -> (constraint row, coefficient)
        let mut dof_row = vec![None; n];
        for (r, row) in constraints.rows.iter().enumerate() {
            match *row {
                ConstraintRow::Fixed { dof } => dof_row[dof] = Some((r, 1.0)),
                ConstraintRow::Periodic { plus, minus } => {
                    dof_row[plus] = Some((r, 1.0));
                    dof_row[minus] = Some((r, -1.0));
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + m + 1);
        let mut row_idx = Vec::with_capacity(pattern.nnz() + 4 * m);
        let mut k_slots = Vec::with_capacity(pattern.nnz());
        let mut g_col_slot = vec![usize::MAX; n];
        col_ptr.push(0);
        for c in 0..n {
            for k in pattern.col_ptr[c]..pattern.col_ptr[c + 1] {
                k_slots.push(row_idx.len());
                row_idx.push(pattern.row_idx[k]);
            }
            if let Some((r, _)) = dof_row[c] {
                g_col_slot[c] = row_idx.len();
                row_idx.push(n + r);
            }
            col_ptr.push(row_idx.len());
        }
        let mut g_slots = Vec::with_capacity(m);
        let mut g_len = Vec::with_capacity(m);
        for row in &constraints.rows {
            let mut dofs: Vec<(usize, f64)> = match *row {
                ConstraintRow::Fixed { dof } => vec![(dof, 1.0)],
                ConstraintRow::Periodic { plus, minus } => vec![(plus, 1.0), (minus, -1.0)],
            };
            dofs.sort_by_key(|&(d, _)| d);
            let mut slots = [(0, 0, 0.0); 2];
            for (k, &(d, coef)) in dofs.iter().enumerate() {
                slots[k] = (g_col_slot[d], row_idx.len(), coef);
                row_idx.push(d);
            }
            g_slots.push(slots);
            g_len.push(dofs.len());
            col_ptr.push(row_idx.len());
        }
        Ok(SaddleSolver {
            n,
            m,
            col_ptr,
            row_idx,
            k_slots,
            g_slots,
            g_len,
            pattern,
            rows: constraints.rows.clone(),
            symbolic: OnceLock::new(),
        })
    }

    pub fn ndof(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.m
    }

    /// True when `constraints` has the structure this solver was built for.
    pub fn accepts(&self, constraints: &ConstraintSet) -> bool {
        self.rows == constraints.rows
    }

    fn symbolic_ref(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n + self.m, self.n + self.m, &self.col_ptr, None, &self.row_idx)
    }

    fn symbolic(&self) -> Result<&SymbolicLu<usize>> {
        if let Some(s) = self.symbolic.get() {
            return Ok(s);
        }
        let s = SymbolicLu::try_new(self.symbolic_ref())
            .map_err(|e| Error::SingularSystem(format!("symbolic analysis failed: {e:?}")))?;
        Ok(self.symbolic.get_or_init(|| s))
    }

    /// Numeric factorization for stiffness `k` (which must use this
    /// solver's pattern).
    pub fn factorize(&self, k: &CscMatrix) -> Result<SaddleFactor<'_>> {
        if !Arc::ptr_eq(&k.pattern, &self.pattern) && *k.pattern != *self.pattern {
            return Err(Error::DimensionMismatch("stiffness pattern differs from solver pattern".into()));
        }
        let diag_mean = k.diagonal().iter().map(|v| v.abs()).sum::<f64>() / self.n.max(1) as f64;
        let scale = if diag_mean > 0.0 && diag_mean.is_finite() { diag_mean } else { 1.0 };
        let mut values = vec![0.0; self.row_idx.len()];
        for (src, &dst) in self.k_slots.iter().enumerate() {
            values[dst] = k.values[src];
        }
        for (slots, &len) in self.g_slots.iter().zip(&self.g_len) {
            for &(a, b, coef) in &slots[..len] {
                values[a] = scale * coef;
                values[b] = scale * coef;
            }
        }
        let symbolic = self.symbolic()?.clone();
        let mat = SparseColMatRef::new(self.symbolic_ref(), &values);
        let lu = Lu::try_new_with_symbolic(symbolic, mat)
            .map_err(|e| Error::SingularSystem(format!("numeric factorization failed: {e:?}")))?;
        Ok(SaddleFactor {
            solver: self,
            lu,
            values,
            scale,
        })
    }
}

/// A factorized saddle system, ready for repeated solves.
pub struct SaddleFactor<'a> {
    solver: &'a SaddleSolver,
    lu: Lu<usize, f64>,
    values: Vec<f64>,
    scale: f64,
}

impl SaddleFactor<'_> {
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let s = self.solver;
        for c in 0..s.n + s.m {
            let zc = z[c];
            if zc == 0.0 {
                continue;
            }
            for k in s.col_ptr[c]..s.col_ptr[c + 1] {
                out[s.row_idx[k]] += self.values[k] * zc;
            }
        }
    }

    /// Solves for several right-hand sides at once. Each entry is
    /// `(top, bottom)` with `top` of length `n` and `bottom` of length `m`;
    /// returns `(x, lambda)` per entry with lambda in unscaled units.
    pub fn solve_many(&self, rhs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let (n, m) = (self.solver.n, self.solver.m);
        let size = n + m;
        let ncols = rhs.len();
        if ncols == 0 {
            return Ok(Vec::new());
        }
        for (top, bottom) in rhs {
            if top.len() != n || bottom.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "right-hand side sizes ({}, {}), expected ({n}, {m})",
                    top.len(),
                    bottom.len()
                )));
            }
        }
        let b = Mat::<f64>::from_fn(size, ncols, |i, j| {
            if i < n {
                rhs[j].0[i]
            } else {
                self.scale * rhs[j].1[i - n]
            }
        });
        let mut x = self.lu.solve(&b);
        // one step of iterative refinement
        let mut z = vec![0.0; size];
        let mut az = vec![0.0; size];
        let mut corr = Mat::<f64>::zeros(size, ncols);
        for j in 0..ncols {
            for i in 0..size {
                z[i] = x[(i, j)];
            }
            self.apply(&z, &mut az);
            for i in 0..size {
                corr[(i, j)] = b[(i, j)] - az[i];
            }
        }
        let dx = self.lu.solve(&corr);
        let mut out = Vec::with_capacity(ncols);
        for j in 0..ncols {
            let mut sol = Vec::with_capacity(n);
            let mut lam = Vec::with_capacity(m);
            for i in 0..size {
                let v = x[(i, j)] + dx[(i, j)];
                x[(i, j)] = v;
                if !v.is_finite() {
                    return Err(Error::SingularSystem(format!("non-finite solution entry at row {i}")));
                }
                if i < n {
                    sol.push(v);
                } else {
                    lam.push(self.scale * v);
                }
            }
            out.push((sol, lam));
        }
        // a singular pivot shows up as a large residual after refinement
        for j in 0..ncols {
            for i in 0..size {
                z[i] = x[(i, j)];
            }
            self.apply(&z, &mut az);
            let bnorm = (0..size).map(|i| b[(i, j)].powi(2)).sum::<f64>().sqrt();
            let rnorm = (0..size).map(|i| (b[(i, j)] - az[i]).powi(2)).sum::<f64>().sqrt();
            let xnorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let anorm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm > 1e-6 * (bnorm + anorm * xnorm) && rnorm > 0.0 {
                return Err(Error::SingularSystem(format!(
                    "residual {rnorm:e} after refinement (rhs norm {bnorm:e})"
                )));
            }
        }
        Ok(out)
    }

    pub fn solve(&self, top: &[f64], bottom: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self
            .solve_many(&[(top.to_vec(), bottom.to_vec())])?
            .pop()
            .expect("one solution per right-hand side"))
    }
}

/// One-shot solve of `K x + G^T lambda = rhs`, `G x = constraints.values`.
pub fn solve_saddle(k: &CscMatrix, constraints: &ConstraintSet, rhs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let solver = SaddleSolver::new(k.pattern.clone(), constraints)?;
    let factor = solver.factorize(k)?;
    factor.solve(rhs, &constraints.values)
}

impl CscMatrix {
    /// Sparse copy of the structural nonzeros of a dense square matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let pattern = SparsityPattern::from_dense(a);
        let mut values = Vec::with_capacity(pattern.nnz());
        for c in 0..pattern.n {
            for k in pattern.col_ptr[c]..pattern.col_ptr[c + 1] {
                values.push(a[(pattern.row_idx[k], c)]);
            }
        }
        CscMatrix {
            pattern: Arc::new(pattern),
            values,
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
