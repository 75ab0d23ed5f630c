//! Constitutive kernels: St. Venant-Kirchhoff and compressible neo-Hookean.
//!
//! Tangents use Voigt order (11, 22, 33, 12, 13, 23) with engineering
//! shear strains, so `S_voigt = CC * E_voigt` where the shear rows of
//! `E_voigt` carry `2 E_ij`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index pairs of the Voigt components.
pub const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Voigt rows that survive the plane-strain restriction: 11, 22, 12.
pub const PLANE_VOIGT: [usize; 3] = [0, 1, 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LameParams {
    pub lambda: f64,
    pub mu: f64,
}

impl LameParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !(lambda > -2.0 / 3.0 * mu) {
            return Err(Error::InvalidArgument(format!(
                "Lame parameters lambda = {lambda}, mu = {mu} are not positive definite"
            )));
        }
        Ok(LameParams { lambda, mu })
    }

    /// Young's modulus and Poisson ratio.
    pub fn engineering(&self) -> (f64, f64) {
        let (l, m) = (self.lambda, self.mu);
        (m * (3.0 * l + 2.0 * m) / (l + m), l / (2.0 * (l + m)))
    }

    /// Convex combination `w * self + (1 - w) * other`.
    pub fn blend(&self, other: &LameParams, w: f64) -> LameParams {
        LameParams {
            lambda: w * self.lambda + (1.0 - w) * other.lambda,
            mu: w * self.mu + (1.0 - w) * other.mu,
        }
    }
}

pub fn lame_from_engineering(e: f64, nu: f64) -> Result<LameParams> {
    if nu == 0.5 {
        return Err(Error::IncompressibleUnsupported);
    }
    if !(e > 0.0) || !(nu > -1.0 && nu < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "need E > 0 and -1 < nu < 0.5, got E = {e}, nu = {nu}"
        )));
    }
    LameParams::new(
        e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        e / (2.0 * (1.0 + nu)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaterialLaw {
    /// St. Venant-Kirchhoff: `S = lambda tr(E) I + 2 mu E`.
    LinearElastic,
    NeoHookean,
}

impl MaterialLaw {
    pub fn evaluate(self, state: &DeformationState, p: &LameParams) -> Result<StressTangent> {
        match self {
            MaterialLaw::LinearElastic => Ok(linear_elastic(state, p)),
            MaterialLaw::NeoHookean => neo_hookean(state, p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaterialLaw::LinearElastic => "linear",
            MaterialLaw::NeoHookean => "neo-hookean",
        }
    }
}

impl std::str::FromStr for MaterialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "linear" | "linearelastic" | "svk" | "stvenantkirchhoff" => Ok(MaterialLaw::LinearElastic),
            "neohookean" | "nh" => Ok(MaterialLaw::NeoHookean),
            other => Err(Error::Parse(format!("unknown material law '{other}'"))),
        }
    }
}

/// Kinematic measures of one material point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationState {
    pub f: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub j: f64,
    /// `J - 1`, kept separately so small strains do not cancel.
    pub jm1: f64,
    pub e: Matrix3<f64>,
}

impl DeformationState {
    pub fn identity() -> Self {
        DeformationState {
            f: Matrix3::identity(),
            c: Matrix3::identity(),
            j: 1.0,
            jm1: 0.0,
            e: Matrix3::zeros(),
        }
    }

    /// State of `F = I + H`, with `E` and `J - 1` formed from `H` directly.
    pub fn from_gradient(h: Matrix3<f64>) -> Result<Self> {
        let i1 = h.trace();
        let i2 = 0.5 * (i1 * i1 - (h * h).trace());
        let jm1 = i1 + i2 + h.determinant();
        let j = 1.0 + jm1;
        if !(j > 0.0) {
            return Err(Error::NonPhysicalDeformation { det: j });
        }
        let e = 0.5 * (h + h.transpose() + h.transpose() * h);
        Ok(DeformationState {
            f: Matrix3::identity() + h,
            c: Matrix3::identity() + 2.0 * e,
            j,
            jm1,
            e,
        })
    }

    pub fn from_f(f: Matrix3<f64>) -> Result<Self> {
        let j = f.determinant();
        if !(j > 0.0) {
            return Err(Error::NonPhysicalDeformation { det: j });
        }
        let c = f.transpose() * f;
        Ok(DeformationState {
            f,
            c,
            j,
            jm1: j - 1.0,
            e: 0.5 * (c - Matrix3::identity()),
        })
    }

    /// State with `F = sqrt(C)`, the rotation-free stretch.
    pub fn from_c(c: Matrix3<f64>) -> Result<Self> {
        let c = 0.5 * (c + c.transpose());
        let eig = SymmetricEigen::new(c);
        if let Some(&l) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::NonPhysicalDeformation { det: l });
        }
        let root = eig.eigenvalues.map(f64::sqrt);
        let u = eig.eigenvectors * Matrix3::from_diagonal(&root) * eig.eigenvectors.transpose();
        let j = c.determinant().sqrt();
        Ok(DeformationState {
            f: u,
            c,
            j,
            jm1: j - 1.0,
            e: 0.5 * (c - Matrix3::identity()),
        })
    }

    /// Small-strain state: `E = sym(H)`, `F = I + H`, no geometric terms.
    pub fn small_strain(h: Matrix3<f64>) -> Self {
        let e = 0.5 * (h + h.transpose());
        DeformationState {
            f: Matrix3::identity() + h,
            c: Matrix3::identity() + 2.0 * e,
            j: 1.0 + h.trace(),
            jm1: h.trace(),
            e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressTangent {
    pub s: Matrix3<f64>,
    pub tangent: Matrix6<f64>,
}

impl StressTangent {
    /// In-plane tangent on (11, 22, 12).
    pub fn plane_tangent(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|a, b| self.tangent[(PLANE_VOIGT[a], PLANE_VOIGT[b])])
    }

    pub fn stress_voigt(&self) -> [f64; 6] {
        VOIGT.map(|(i, j)| self.s[(i, j)])
    }
}

/// Builds the Voigt matrix of a fourth-order tensor given elementwise.
fn voigt_tensor(cc: impl Fn(usize, usize, usize, usize) -> f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for (a, &(i, j)) in VOIGT.iter().enumerate() {
        for (b, &(k, l)) in VOIGT.iter().enumerate().skip(a) {
            let v = cc(i, j, k, l);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Isotropic small-strain elasticity tensor.
pub fn isotropic_tangent(p: &LameParams) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for a in 0..3 {
        for b in 0..3 {
            m[(a, b)] = p.lambda;
        }
        m[(a, a)] += 2.0 * p.mu;
        m[(a + 3, a + 3)] = p.mu;
    }
    m
}

pub fn neo_hookean(state: &DeformationState, p: &LameParams) -> Result<StressTangent> {
    let j = state.j;
    if !(j > 0.0) {
        return Err(Error::NonPhysicalDeformation { det: j });
    }
    let ci = state
        .c
        .try_inverse()
        .ok_or(Error::NonPhysicalDeformation { det: j })?;
    let ci = 0.5 * (ci + ci.transpose());
    let (lam, mu) = (p.lambda, p.mu);
    let j2 = j * j;
    // J^2 - 1 = (J - 1)(J + 1) and I - C^-1 = 2 C^-1 E avoid cancellation at small strain
    let j2m1 = state.jm1 * (j + 1.0);
    let s = 0.5 * lam * j2m1 * ci + 2.0 * mu * ci * state.e;
    let s = 0.5 * (s + s.transpose());
    let a = lam * j2m1 - 2.0 * mu;
    let tangent = voigt_tensor(|i, jj, k, l| {
        let aa = -0.5 * (ci[(i, k)] * ci[(jj, l)] + ci[(jj, k)] * ci[(i, l)]);
        a * aa + lam * j2 * ci[(i, jj)] * ci[(k, l)]
    });
    Ok(StressTangent { s, tangent })
}

pub fn linear_elastic(state: &DeformationState, p: &LameParams) -> StressTangent {
    let e = &state.e;
    let s = p.lambda * e.trace() * Matrix3::identity() + 2.0 * p.mu * e;
    StressTangent {
        s,
        tangent: isotropic_tangent(p),
    }
}

pub fn strain_energy(state: &DeformationState, p: &LameParams, law: MaterialLaw) -> Result<f64> {
    match law {
        MaterialLaw::LinearElastic => {
            let e = &state.e;
            let tr = e.trace();
            Ok(0.5 * p.lambda * tr * tr + p.mu * e.component_mul(e).sum())
        }
        MaterialLaw::NeoHookean => {
            let j = state.j;
            if !(j > 0.0) {
                return Err(Error::NonPhysicalDeformation { det: j });
            }
            Ok(0.25 * p.lambda * state.jm1 * (j + 1.0) - (0.5 * p.lambda + p.mu) * state.jm1.ln_1p()
                + p.mu * state.e.trace())
        }
    }
}

/// Smooth periodic phase blend along x: weight of phase 1 is
/// `(1 + cos(2 pi x / period)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothProfile {
    pub period: f64,
}

impl SmoothProfile {
    pub fn weight(&self, x: [f64; 2]) -> f64 {
        0.5 * (1.0 + (2.0 * PI * x[0] / self.period).cos())
    }
}

/// Assignment of constitutive parameters to the material points of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialMap {
    pub law: MaterialLaw,
    pub phases: [LameParams; 2],
    /// When set, parameters vary smoothly in space and phase labels are ignored.
    pub profile: Option<SmoothProfile>,
}

impl MaterialMap {
    pub fn new(law: MaterialLaw, phase1: LameParams, phase2: LameParams) -> Self {
        MaterialMap {
            law,
            phases: [phase1, phase2],
            profile: None,
        }
    }

    pub fn homogeneous(law: MaterialLaw, p: LameParams) -> Self {
        Self::new(law, p, p)
    }

    pub fn with_profile(mut self, profile: SmoothProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn with_law(mut self, law: MaterialLaw) -> Self {
        self.law = law;
        self
    }

    pub fn params(&self, phase: u8, x: [f64; 2]) -> LameParams {
        match &self.profile {
            Some(prof) => self.phases[0].blend(&self.phases[1], prof.weight(x)),
            None => self.phases[(phase as usize).clamp(1, 2) - 1],
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.phases[0] == self.phases[1]
    }
}

/// Parameters of the two phases used throughout the benchmarks.
pub fn benchmark_phases() -> [LameParams; 2] {
    [
        lame_from_engineering(100_000.0, 0.2).expect("valid constants"),
        lame_from_engineering(40_000.0, 0.2).expect("valid constants"),
    ]
}
