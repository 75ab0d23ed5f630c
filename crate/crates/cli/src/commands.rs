//! Command implementations. Each returns the artifacts to write and whether
//! every contract held.

use std::time::Instant;

use fehmm::fem::Kinematics;
use fehmm::micro::{field_snapshot, RveProblem};
use fehmm::two_scale::{max_nodal_displacement_of, MacroProblem, Scheme, SolveTrace, TwoScaleSolver};
use fehmm::verify::{
    homogenized_voigt, linear_homogenized_oracle, macro_convergence_study, micro_convergence_study, speedup_report,
    ConvergenceStudy, SlopeFit,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, Loading, ProblemKind, RunConfig};
use crate::output::{convergence_rows, speedup_rows, trace_rows, umax_rows, Artifacts};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {error}")]
    Solve { error: fehmm::Error, artifacts: Artifacts },
    #[error(transparent)]
    Model(#[from] fehmm::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for problems with the invocation or its inputs, 1 for run failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub artifacts: Artifacts,
    /// False when a checked contract failed; artifacts are still written.
    pub ok: bool,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Micro,
    Macro,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "micro" => Ok(Axis::Micro),
            "macro" => Ok(Axis::Macro),
            o => Err(format!("unknown axis '{o}' (micro|macro)")),
        }
    }
}

fn tip_deflection(problem: &MacroProblem, d: &[f64], l: f64) -> Option<f64> {
    let tip = problem.mesh.nodes_at(0, l);
    (!tip.is_empty()).then(|| -tip.iter().map(|&n| d[2 * n + 1]).sum::<f64>() / tip.len() as f64)
}

#[derive(Debug, Serialize)]
struct SnapshotChoice {
    requested: [f64; 2],
    qp: usize,
    x: [f64; 2],
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    status: &'static str,
    error: Option<String>,
    scheme: &'static str,
    law: &'static str,
    kinematics: Kinematics,
    n_load_steps: usize,
    macro_elements: usize,
    micro_elements: usize,
    u_max: Vec<f64>,
    macro_iterations: Vec<usize>,
    tip_deflection: Option<f64>,
    total_time_s: f64,
    snapshot: Option<SnapshotChoice>,
}

fn solve_summary(cfg: &RunConfig, problem: &MacroProblem, micro_elements: usize, trace: &SolveTrace) -> SolveSummary {
    SolveSummary {
        status: "ok",
        error: None,
        scheme: cfg.solver.scheme.name(),
        law: cfg.solver.law.name(),
        kinematics: cfg.solver.kinematics,
        n_load_steps: cfg.solver.n_load_steps,
        macro_elements: problem.mesh.num_elements(),
        micro_elements,
        u_max: trace.u_max(),
        macro_iterations: trace.macro_iterations(),
        tip_deflection: None,
        total_time_s: crate::output::ms(trace.total_time),
        snapshot: None,
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let material = cfg.material()?;
    let micro = cfg.micro_mesh()?;
    let problem = cfg.macro_problem(0)?;
    let micro_elements = micro.num_elements();
    let solver = TwoScaleSolver::new(&problem, micro, material, cfg.solver)?;
    let mut artifacts = Artifacts::new();
    let (state, trace) = match solver.run() {
        Ok(r) => r,
        Err(failure) => {
            artifacts.csv("trace.csv", &trace_rows(&failure.trace))?;
            let mut summary = solve_summary(cfg, &problem, micro_elements, &failure.trace);
            summary.status = "failed";
            summary.error = Some(failure.error.to_string());
            artifacts.json("summary.json", &summary)?;
            return Err(CliError::Solve {
                error: failure.error,
                artifacts,
            });
        }
    };
    artifacts.csv("trace.csv", &trace_rows(&trace))?;
    artifacts.csv("u_max.csv", &umax_rows(&trace))?;
    let mut summary = solve_summary(cfg, &problem, micro_elements, &trace);
    if cfg.problem == ProblemKind::Cantilever {
        summary.tip_deflection = tip_deflection(&problem, &state.macro_d, cfg.l);
    }
    let mut messages = Vec::new();
    if let Some(p) = cfg.snapshot {
        let (k, qp) = solver
            .macro_qps()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1.x[0] - p[0]).hypot(a.1.x[1] - p[1]);
                let db = (b.1.x[0] - p[0]).hypot(b.1.x[1] - p[1]);
                da.total_cmp(&db)
            })
            .ok_or_else(|| CliError::Usage("macro mesh has no quadrature points".into()))?;
        messages.push(format!(
            "snapshot at macro qp {k} ({:.4}, {:.4}) nearest to ({}, {})",
            qp.x[0], qp.x[1], p[0], p[1]
        ));
        artifacts.csv("snapshot.csv", &field_snapshot(&state.rves[k], &state.rve_problem)?)?;
        summary.snapshot = Some(SnapshotChoice {
            requested: p,
            qp: k,
            x: qp.x,
        });
    }
    artifacts.json("summary.json", &summary)?;
    Ok(Outcome {
        artifacts,
        ok: true,
        messages,
    })
}

#[derive(Debug, Serialize)]
struct Slopes {
    l2: Option<SlopeFit>,
    h1: Option<SlopeFit>,
    energy: Option<SlopeFit>,
}

#[derive(Debug, Serialize)]
struct ConvergenceSummary<'a> {
    axis: &'static str,
    law: &'static str,
    kinematics: Kinematics,
    generator: String,
    reference: &'a str,
    slopes: Slopes,
    total_time_s: f64,
}

pub fn run_study(cfg: &RunConfig, axis: Axis) -> Result<ConvergenceStudy, CliError> {
    if cfg.levels < 3 {
        return Err(CliError::Usage(format!("≥3 levels required, got {}", cfg.levels)));
    }
    if cfg.reference_extra == 0 {
        return Err(CliError::Usage("converge.reference_extra must be at least 1".into()));
    }
    let material = cfg.material()?;
    let micro = cfg.micro_mesh()?;
    Ok(match axis {
        Axis::Micro => {
            let problem = cfg.macro_problem(0)?;
            micro_convergence_study(&problem, &micro, material, &cfg.solver, cfg.levels, cfg.reference_extra)?
        }
        Axis::Macro => {
            // building the finest problem surfaces configuration errors early
            let reference = cfg.levels - 1 + cfg.reference_extra;
            cfg.macro_problem(reference)?;
            let make = |k: usize| cfg.macro_problem(k).map_err(|e| fehmm::Error::InvalidArgument(e.to_string()));
            macro_convergence_study(&make, &micro, material, &cfg.solver, cfg.levels, reference)?
        }
    })
}

pub fn cmd_converge(cfg: &RunConfig, axis: Axis) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let study = run_study(cfg, axis)?;
    let mut artifacts = Artifacts::new();
    artifacts.csv("convergence.csv", &convergence_rows(&study))?;
    let summary = ConvergenceSummary {
        axis: match axis {
            Axis::Micro => "micro",
            Axis::Macro => "macro",
        },
        law: cfg.solver.law.name(),
        kinematics: cfg.solver.kinematics,
        generator: cfg.generator.to_string(),
        reference: &study.reference,
        slopes: Slopes {
            l2: study.l2,
            h1: study.h1,
            energy: study.energy,
        },
        total_time_s: crate::output::ms(start.elapsed().as_secs_f64()),
    };
    artifacts.json("convergence.json", &summary)?;
    let finite = [study.l2, study.h1].iter().all(|s| s.is_some_and(|f| f.slope.is_finite()));
    let mut messages = vec![format!(
        "slopes: l2 {} h1 {} energy {}",
        fmt_slope(study.l2),
        fmt_slope(study.h1),
        fmt_slope(study.energy)
    )];
    if !finite {
        messages.push("too few levels above the reference floor to fit a slope".into());
    }
    Ok(Outcome {
        artifacts,
        ok: finite,
        messages,
    })
}

fn fmt_slope(s: Option<SlopeFit>) -> String {
    s.map_or_else(|| "n/a".into(), |f| format!("{:.3}", f.slope))
}

#[derive(Debug, Serialize)]
pub struct SpeedupVariant {
    pub n_ls: usize,
    pub factor: f64,
    pub total_nested_s: f64,
    pub total_alternating_s: f64,
    pub max_u_rel_diff: f64,
    pub u_max_agree: bool,
    pub max_extra_iterations: i64,
}

/// Runs both schemes on the same configuration for every requested
/// load-step count.
pub fn run_speedup(cfg: &RunConfig) -> Result<(Vec<SpeedupVariant>, Artifacts), CliError> {
    let material = cfg.material()?;
    let micro = cfg.micro_mesh()?;
    let problem = cfg.macro_problem(0)?;
    let mut rows = Vec::new();
    let mut variants = Vec::new();
    for &n in &cfg.speedup_steps {
        let base = fehmm::two_scale::SolverConfig {
            n_load_steps: n,
            ..cfg.solver
        };
        let mut traces = Vec::with_capacity(2);
        for scheme in [Scheme::Nested, Scheme::Alternating] {
            let solver = TwoScaleSolver::new(&problem, micro.clone(), material, base.with_scheme(scheme))?;
            let (_, trace) = solver.run().map_err(|f| CliError::Model(f.into()))?;
            traces.push(trace);
        }
        let report = speedup_report(&traces[0], &traces[1])?;
        rows.extend(speedup_rows(n, &report));
        variants.push(SpeedupVariant {
            n_ls: n,
            factor: report.factor,
            total_nested_s: report.total_nested,
            total_alternating_s: report.total_alternating,
            max_u_rel_diff: report.max_u_rel_diff,
            u_max_agree: report.u_max_agree,
            max_extra_iterations: report.max_extra_iterations,
        });
    }
    let mut artifacts = Artifacts::new();
    artifacts.csv("speedup.csv", &rows)?;
    artifacts.json("speedup.json", &variants)?;
    Ok((variants, artifacts))
}

pub fn cmd_speedup(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (variants, artifacts) = run_speedup(cfg)?;
    let ok = variants.iter().all(|v| v.u_max_agree);
    let messages = variants
        .iter()
        .map(|v| {
            format!(
                "N_LS={}: speedup {:.3}, max u_max deviation {:.2e}{}",
                v.n_ls,
                v.factor,
                v.max_u_rel_diff,
                if v.u_max_agree { "" } else { " MISMATCH" }
            )
        })
        .collect();
    Ok(Outcome {
        artifacts,
        ok,
        messages,
    })
}

#[derive(Debug, Serialize)]
struct MicroSummary {
    generator: String,
    nx: usize,
    ny: usize,
    seed: u64,
    volume_fractions: [f64; 2],
    sha256: String,
}

pub fn cmd_genmicro(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let grid = cfg.cell()?;
    let text = grid.to_text();
    let summary = MicroSummary {
        generator: cfg.generator.to_string(),
        nx: grid.nx,
        ny: grid.ny,
        seed: cfg.seed,
        volume_fractions: [grid.volume_fraction(1), grid.volume_fraction(2)],
        sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
    };
    let messages = vec![format!(
        "{} {}x{}: phase 1 {:.4}, phase 2 {:.4}",
        summary.generator, grid.nx, grid.ny, summary.volume_fractions[0], summary.volume_fractions[1]
    )];
    let mut artifacts = Artifacts::new();
    artifacts.text("microstructure.txt", text);
    artifacts.json("microstructure.json", &summary)?;
    Ok(Outcome {
        artifacts,
        ok: true,
        messages,
    })
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    /// Small-strain homogenized stiffness on (11, 22, 12).
    voigt: [[f64; 3]; 3],
    /// Axial modulus with free transverse stress, `C11 - C12^2 / C22`.
    axial_modulus: f64,
    /// Tip deflection of a clamped Euler-Bernoulli beam with the axial modulus.
    beam_tip_deflection: Option<f64>,
    /// Linear FEM on the macro mesh with the homogenized stiffness.
    homogenized_u_max: f64,
    homogenized_tip_deflection: Option<f64>,
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let material = cfg.material()?;
    let micro = cfg.micro_mesh()?;
    let problem = cfg.macro_problem(0)?;
    let rve = RveProblem::new(micro, material, Kinematics::Linear, cfg.solver.coupling)?;
    let d = homogenized_voigt(&rve)?;
    let axial = d[(0, 0)] - d[(0, 1)] * d[(0, 1)] / d[(1, 1)];
    let beam = match (cfg.problem, cfg.loading) {
        // P = f b t and I = t b^3 / 12
        (ProblemKind::Cantilever, Loading::Force(f)) => Some(4.0 * f * cfg.l.powi(3) / (axial * cfg.b * cfg.b)),
        _ => None,
    };
    let u = linear_homogenized_oracle(&problem, &d)?;
    let summary = OracleSummary {
        voigt: [0, 1, 2].map(|i| [0, 1, 2].map(|j| d[(i, j)])),
        axial_modulus: axial,
        beam_tip_deflection: beam,
        homogenized_u_max: max_nodal_displacement_of(&u).0,
        homogenized_tip_deflection: match cfg.problem {
            ProblemKind::Cantilever => tip_deflection(&problem, &u, cfg.l),
            ProblemKind::ClampedSquare => None,
        },
    };
    let messages = vec![format!(
        "axial modulus {:.6e}, beam tip deflection {}",
        axial,
        beam.map_or("n/a".into(), |v| format!("{v:.6e}"))
    )];
    let mut artifacts = Artifacts::new();
    artifacts.json("oracle.json", &summary)?;
    Ok(Outcome {
        artifacts,
        ok: true,
        messages,
    })
}
