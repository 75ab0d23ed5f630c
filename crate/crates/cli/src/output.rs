//! CSV and JSON artifacts, buffered until a command has finished.

use std::path::{Path, PathBuf};

use fehmm::two_scale::SolveTrace;
use fehmm::verify::{ConvergenceStudy, SpeedupReport};
use serde::Serialize;

/// Files produced by a command, written only on [`Artifacts::commit`].
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(std::io::Error::other)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.files.push((name.into(), bytes));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.files.push((name.into(), bytes));
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.files.push((name.into(), text.into_bytes()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn commit(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Seconds rounded to milliseconds.
pub fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Column order of a header is the field order.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub scheme: &'static str,
    pub load_step: usize,
    pub macro_iter: usize,
    pub macro_residual: f64,
    pub micro_iters_total: usize,
    pub t_iter_s: f64,
}

pub fn trace_rows(trace: &SolveTrace) -> Vec<TraceRow> {
    let scheme = trace.scheme.map_or("unknown", |s| s.name());
    trace
        .steps
        .iter()
        .flat_map(|s| {
            (0..s.residuals.len()).map(move |k| TraceRow {
                scheme,
                load_step: s.step,
                macro_iter: k,
                macro_residual: s.residuals[k],
                micro_iters_total: s.micro_iterations[k],
                t_iter_s: ms(s.iteration_times[k]),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct UmaxRow {
    pub load_step: usize,
    pub load_factor: f64,
    pub u_max: f64,
    pub macro_iters: usize,
    pub halvings: usize,
    pub t_ls_s: f64,
}

pub fn umax_rows(trace: &SolveTrace) -> Vec<UmaxRow> {
    trace
        .steps
        .iter()
        .map(|s| UmaxRow {
            load_step: s.step,
            load_factor: s.load_factor,
            u_max: s.u_max,
            macro_iters: s.macro_iterations,
            halvings: s.halvings,
            t_ls_s: ms(s.step_time),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    #[serde(rename = "H")]
    pub big_h: f64,
    pub l2: f64,
    pub h1: f64,
    pub energy: Option<f64>,
}

pub fn convergence_rows(study: &ConvergenceStudy) -> Vec<ConvergenceRow> {
    study
        .levels
        .iter()
        .map(|l| ConvergenceRow {
            level: l.level,
            h: l.h,
            big_h: l.big_h,
            l2: l.report.l2,
            h1: l.report.h1,
            energy: l.report.energy,
        })
        .collect()
}

/// One row per scheme and load step, plus a `total` row per scheme.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedupRow {
    pub n_ls: usize,
    pub scheme: &'static str,
    pub step: String,
    pub n_ite_mac: usize,
    pub t_ite_mac_s: f64,
    pub u_max: f64,
    pub t_ls_s: f64,
    pub status: &'static str,
}

pub fn speedup_rows(n_ls: usize, r: &SpeedupReport) -> Vec<SpeedupRow> {
    let mut rows = Vec::with_capacity(2 * r.steps.len() + 2);
    for (name, nested) in [("nested", true), ("alternating", false)] {
        for s in &r.steps {
            let ok = s.u_max_rel_diff <= fehmm::verify::U_MAX_AGREEMENT;
            rows.push(SpeedupRow {
                n_ls,
                scheme: name,
                step: s.step.to_string(),
                n_ite_mac: if nested { s.nested_iterations } else { s.alternating_iterations },
                t_ite_mac_s: ms(if nested { s.nested_first_iteration_time } else { s.alternating_first_iteration_time }),
                u_max: if nested { s.u_max_nested } else { s.u_max_alternating },
                t_ls_s: ms(if nested { s.nested_time } else { s.alternating_time }),
                status: if ok { "ok" } else { "mismatch" },
            });
        }
        let (iters, total) = if nested {
            (r.steps.iter().map(|s| s.nested_iterations).sum(), r.total_nested)
        } else {
            (r.steps.iter().map(|s| s.alternating_iterations).sum(), r.total_alternating)
        };
        rows.push(SpeedupRow {
            n_ls,
            scheme: name,
            step: "total".into(),
            n_ite_mac: iters,
            t_ite_mac_s: 0.0,
            u_max: r.steps.last().map_or(0.0, |s| if nested { s.u_max_nested } else { s.u_max_alternating }),
            t_ls_s: ms(total),
            status: if r.u_max_agree { "ok" } else { "mismatch" },
        });
    }
    rows
}
