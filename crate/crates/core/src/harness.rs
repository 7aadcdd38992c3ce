//! Scenario runs: propagate, Monte Carlo, comparison and CP audit.
//!
//! Every run writes its files under `<out>/<subcommand>/`: one CSV per
//! declared output plus `report.json`. CSV files start with a `#` header
//! naming the columns; the first column is `t` and numbers use 17
//! significant digits. Complex values are split into `re_` and `im_` columns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cp::{cp_check, trace_preservation_error, ChoiReport, DEFAULT_CP_TOL};
use crate::error::{Error, Result};
use crate::montecarlo::{mc_average_at, MCEstimate};
use crate::operator::{hermiticity_error, trace, CMatrix, DensityOperator};
use crate::scenario::{Observable, Output, Scenario, DEFAULT_PROPAGATOR_STEPS};

/// Trace, Hermiticity and trace-preservation tolerance for emitted results.
pub const INVARIANT_TOL: f64 = 1e-10;
pub const THREADS_ENV: &str = "DEKOHERE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Propagate,
    Mc,
    Compare,
    CpAudit,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Propagate => "propagate",
            Self::Mc => "mc",
            Self::Compare => "compare",
            Self::CpAudit => "cp-audit",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propagate" => Ok(Self::Propagate),
            "mc" => Ok(Self::Mc),
            "compare" => Ok(Self::Compare),
            "cp-audit" => Ok(Self::CpAudit),
            other => Err(Error::InvalidArgument(format!(
                "unknown subcommand \"{other}\"; expected propagate, mc, compare or cp-audit"
            ))),
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    /// Time steps over `[0, t_max]`: Monte Carlo steps and midpoint steps for
    /// non-commuting generators.
    pub steps: Option<usize>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub observable: String,
    pub path: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub subcommand: Subcommand,
    pub manifest: Vec<ManifestEntry>,
    pub wall_time_s: f64,
    pub max_invariant_violation: f64,
    pub invariant_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_cp_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_choi_eigenvalue: Option<f64>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.max_invariant_violation > self.invariant_tol {
            EXIT_INVARIANT
        } else {
            EXIT_OK
        }
    }
}

/// Worker count from `DEKOHERE_THREADS` (unset or `0` = automatic).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a non-negative integer, got \"{v}\""))),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (`0` = automatic).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV table with a `#` header row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    columns: Vec<String>,
    body: String,
    rows: usize,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            body: String::new(),
            rows: 0,
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns.len());
        let line: Vec<String> = values.iter().map(|&v| format_number(v)).collect();
        self.body.push_str(&line.join(","));
        self.body.push('\n');
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.columns.join(","));
        s.push_str(&self.body);
        s
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

/// Entries of a state observable as `(column stem, value)`.
fn observable_values(obs: Observable, rho: &CMatrix) -> Vec<(String, Complex64)> {
    match obs {
        Observable::Coherence(n, m) => vec![(obs.column(), rho[(n, m)])],
        Observable::Population(n) => vec![(obs.column(), rho[(n, n)])],
        Observable::FullState => {
            let d = rho.nrows();
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| (format!("rho_{i}_{j}"), rho[(i, j)]))
                .collect()
        }
        Observable::ChoiSpectrum => vec![],
    }
}

fn is_real(obs: Observable) -> bool {
    matches!(obs, Observable::Population(_))
}

fn state_columns(obs: Observable, dim: usize, prefixes: &[&str]) -> Vec<String> {
    let probe = CMatrix::zeros(dim, dim);
    let mut cols = vec!["t".to_string()];
    for (stem, _) in observable_values(obs, &probe) {
        for p in prefixes {
            if !is_real(obs) {
                cols.push(format!("{p}{stem}"));
            } else if !p.contains("im_") {
                cols.push(format!("{}{stem}", p.replace("re_", "")));
            }
        }
    }
    cols
}

fn state_invariant_violation(rho: &CMatrix) -> f64 {
    (trace(rho) - Complex64::from(1.0)).norm().max(hermiticity_error(rho))
}

struct Run<'a> {
    scenario: &'a Scenario,
    opts: &'a RunOptions,
    dir: PathBuf,
    manifest: Vec<ManifestEntry>,
    notes: Vec<String>,
    max_violation: f64,
}

impl<'a> Run<'a> {
    fn emit(&mut self, output: &Output, table: &Table) -> Result<()> {
        let path = self.dir.join(&output.sink);
        write_file(&path, &table.render())?;
        self.manifest.push(ManifestEntry {
            observable: output.observable.to_string(),
            path: path.display().to_string(),
            rows: table.rows(),
        });
        Ok(())
    }

    fn propagator_steps(&self, t: f64) -> usize {
        let total = self.opts.steps.unwrap_or(DEFAULT_PROPAGATOR_STEPS);
        if self.scenario.t_max == 0.0 {
            return 1;
        }
        ((total as f64 * t / self.scenario.t_max).round() as usize).max(1)
    }

    fn analytic_states(&mut self) -> Result<Vec<CMatrix>> {
        let sc = self.scenario;
        let mut states = Vec::with_capacity(sc.n_points);
        for t in sc.time_grid() {
            let rho = sc.model.evolve(&sc.initial_state, t, self.propagator_steps(t))?.into_inner();
            self.max_violation = self.max_violation.max(state_invariant_violation(&rho));
            states.push(rho);
        }
        Ok(states)
    }

    fn mc_estimates(&mut self) -> Result<Vec<MCEstimate>> {
        let sc = self.scenario;
        let intervals = sc.n_points.saturating_sub(1);
        let per = match self.opts.steps {
            Some(n) if intervals > 0 => n.div_ceil(intervals).max(1),
            _ => sc.mc_steps_per_interval(),
        };
        let n_steps = (per * intervals).max(1);
        let model = sc.section.trajectory_model(&sc.model, sc.t_max, n_steps)?;
        let checkpoints: Vec<usize> = (0..sc.n_points).map(|i| i * per).collect();
        let n_samples = self.opts.samples.unwrap_or(sc.mc.n_samples);
        let seed = self.opts.seed.unwrap_or(sc.mc.seed);
        let est = mc_average_at(&model, &DensityOperator::new_unchecked(sc.initial_state.matrix().clone()), &checkpoints, n_samples, seed)?;
        for e in &est {
            self.max_violation = self.max_violation.max(state_invariant_violation(&e.mean));
        }
        self.notes.push(format!("mc: {n_samples} trajectories, {n_steps} steps, seed {seed}"));
        Ok(est)
    }

    fn choi_reports(&mut self) -> Result<Vec<(f64, ChoiReport, f64)>> {
        let sc = self.scenario;
        let mut out = Vec::with_capacity(sc.n_points);
        for t in sc.time_grid() {
            let s = sc.model.propagator(t, self.propagator_steps(t))?;
            let tp_error = trace_preservation_error(&s);
            self.max_violation = self.max_violation.max(tp_error);
            out.push((t, cp_check(&s, DEFAULT_CP_TOL), tp_error));
        }
        Ok(out)
    }

    fn choi_table(&self, reports: &[(f64, ChoiReport, f64)]) -> Table {
        let d2 = self.scenario.dim().pow(2);
        let mut cols: Vec<String> = ["t", "min_eigenvalue", "is_cp", "is_tp", "tp_error"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend((0..d2).map(|k| format!("lambda_{k}")));
        let mut table = Table::new(cols);
        for (t, r, tp) in reports {
            let mut row = vec![*t, r.min_eigenvalue, f64::from(u8::from(r.is_cp)), f64::from(u8::from(r.is_tp)), *tp];
            row.extend(&r.eigenvalues);
            table.push(&row);
        }
        table
    }

    fn state_outputs(&self) -> Vec<Output> {
        self.scenario
            .outputs
            .iter()
            .filter(|o| o.observable != Observable::ChoiSpectrum)
            .cloned()
            .collect()
    }

    fn choi_outputs(&self) -> Vec<Output> {
        self.scenario
            .outputs
            .iter()
            .filter(|o| o.observable == Observable::ChoiSpectrum)
            .cloned()
            .collect()
    }

    fn propagate(&mut self) -> Result<()> {
        let states = self.analytic_states()?;
        let grid = self.scenario.time_grid();
        let dim = self.scenario.dim();
        for out in self.state_outputs() {
            let mut table = Table::new(state_columns(out.observable, dim, &["re_", "im_"]));
            for (t, rho) in grid.iter().zip(&states) {
                let mut row = vec![*t];
                for (_, z) in observable_values(out.observable, rho) {
                    row.push(z.re);
                    if !is_real(out.observable) {
                        row.push(z.im);
                    }
                }
                table.push(&row);
            }
            self.emit(&out, &table)?;
        }
        let choi = self.choi_outputs();
        if !choi.is_empty() {
            let reports = self.choi_reports()?;
            let table = self.choi_table(&reports);
            for out in choi {
                self.emit(&out, &table)?;
            }
        }
        Ok(())
    }

    fn skip_choi_note(&mut self) {
        if !self.choi_outputs().is_empty() {
            self.notes
                .push(format!("choi_spectrum outputs are produced by propagate and cp-audit, skipped by {}", self.sub_name()));
        }
    }

    fn sub_name(&self) -> &'static str {
        self.dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<Subcommand>().ok())
            .map(|s| s.name())
            .unwrap_or("this subcommand")
    }

    fn mc(&mut self) -> Result<()> {
        let est = self.mc_estimates()?;
        let grid = self.scenario.time_grid();
        let dim = self.scenario.dim();
        for out in self.state_outputs() {
            let mut table = Table::new(state_columns(out.observable, dim, &["re_", "im_", "se_re_", "se_im_"]));
            for (t, e) in grid.iter().zip(&est) {
                let se = CMatrix::from_fn(dim, dim, |i, j| Complex64::new(e.stderr_re[(i, j)], e.stderr_im[(i, j)]));
                let mut row = vec![*t];
                for ((_, z), (_, s)) in observable_values(out.observable, &e.mean).into_iter().zip(observable_values(out.observable, &se)) {
                    if is_real(out.observable) {
                        row.extend([z.re, s.re]);
                    } else {
                        row.extend([z.re, z.im, s.re, s.im]);
                    }
                }
                table.push(&row);
            }
            self.emit(&out, &table)?;
        }
        self.skip_choi_note();
        Ok(())
    }

    fn compare(&mut self) -> Result<f64> {
        let states = self.analytic_states()?;
        let est = self.mc_estimates()?;
        let grid = self.scenario.time_grid();
        let dim = self.scenario.dim();
        let mut max_abs_z: f64 = 0.0;
        let z_mats: Vec<(CMatrix, f64)> = est
            .iter()
            .zip(&states)
            .map(|(e, rho)| {
                let (zr, zi) = e.z_scores(rho);
                (CMatrix::from_fn(dim, dim, |i, j| Complex64::new(zr[(i, j)], zi[(i, j)])), 0.0)
            })
            .collect();
        for out in self.state_outputs() {
            let mut table = Table::new(state_columns(out.observable, dim, &["z_re_", "z_im_"]));
            for (t, (z, _)) in grid.iter().zip(&z_mats) {
                let mut row = vec![*t];
                for (_, v) in observable_values(out.observable, z) {
                    row.push(v.re);
                    max_abs_z = max_abs_z.max(v.re.abs());
                    if !is_real(out.observable) {
                        row.push(v.im);
                        max_abs_z = max_abs_z.max(v.im.abs());
                    }
                }
                table.push(&row);
            }
            self.emit(&out, &table)?;
        }
        self.skip_choi_note();
        Ok(max_abs_z)
    }

    fn cp_audit(&mut self) -> Result<(usize, f64)> {
        let reports = self.choi_reports()?;
        let table = self.choi_table(&reports);
        let mut outs = self.choi_outputs();
        if outs.is_empty() {
            outs.push(Output {
                observable: Observable::ChoiSpectrum,
                sink: "choi_spectrum.csv".into(),
            });
        }
        for out in outs {
            self.emit(&out, &table)?;
        }
        let non_cp = reports.iter().filter(|(_, r, _)| !r.is_cp).count();
        let min = reports.iter().map(|(_, r, _)| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
        if non_cp > 0 {
            self.notes.push(format!("{non_cp} time points with a Choi eigenvalue below -{DEFAULT_CP_TOL:e}"));
        }
        Ok((non_cp, min))
    }
}

/// Executes one subcommand and writes its files and `report.json`.
pub fn run(sub: Subcommand, scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    let mut r = Run {
        scenario,
        opts,
        dir: opts.out_dir.join(sub.name()),
        manifest: Vec::new(),
        notes: Vec::new(),
        max_violation: 0.0,
    };
    fs::create_dir_all(&r.dir).map_err(|e| Error::Io {
        path: r.dir.display().to_string(),
        message: e.to_string(),
    })?;
    let (mut max_abs_z, mut non_cp_points, mut min_choi) = (None, None, None);
    match sub {
        Subcommand::Propagate => r.propagate()?,
        Subcommand::Mc => r.mc()?,
        Subcommand::Compare => max_abs_z = Some(r.compare()?),
        Subcommand::CpAudit => {
            let (n, m) = r.cp_audit()?;
            non_cp_points = Some(n);
            min_choi = Some(m);
        }
    }
    if r.max_violation > INVARIANT_TOL {
        r.notes.push(format!(
            "invariant violation {:.3e} exceeds tolerance {INVARIANT_TOL:e}",
            r.max_violation
        ));
    }
    let report = RunReport {
        scenario: scenario.name.clone(),
        subcommand: sub,
        manifest: r.manifest,
        wall_time_s: start.elapsed().as_secs_f64(),
        max_invariant_violation: r.max_violation,
        invariant_tol: INVARIANT_TOL,
        max_abs_z,
        non_cp_points,
        min_choi_eigenvalue: min_choi,
        notes: r.notes,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_file(&r.dir.join("report.json"), &json)?;
    Ok(report)
}
