//! JSON scenario files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "qubit-dephasing",
//!   "model": { "kind": "global_white_noise", "energies": [0.0, 1.0], "gamma": 1.0 },
//!   "initial_state": "plus",
//!   "time_grid": { "t_max": 1.0, "n_points": 11 },
//!   "mc": { "n_samples": 20000, "seed": 7 },
//!   "outputs": [ { "observable": "coherence(0,1)", "sink": "coherence.csv" } ]
//! }
//! ```

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dephasing::{evolve_dephasing, DephasingModel};
use crate::error::{Error, Result};
use crate::generators::{self, GeneratorSpec, QubitGeneratorForm};
use crate::montecarlo::{TrajectoryKind, TrajectoryModel};
use crate::noise::{NoiseSpec, QuadraticVariation};
use crate::operator::{spectral_decompose, CMatrix, DensityOperator, HermitianOperator, Superoperator, DEFAULT_DEGENERACY_TOL};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N_POINTS: usize = 101;
pub const DEFAULT_N_SAMPLES: usize = 10_000;
/// Default Monte Carlo step as a fraction of `t_max`.
pub const DEFAULT_DT_FRACTION: f64 = 1e-3;
/// Midpoint steps over `[0, t_max]` for non-commuting generators.
pub const DEFAULT_PROPAGATOR_STEPS: usize = 1000;

/// Matrix literal: rows of real numbers or rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixLiteral {
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<[f64; 2]>>),
}

impl MatrixLiteral {
    pub fn to_matrix(&self, field: &str) -> Result<CMatrix> {
        let rows: Vec<Vec<Complex64>> = match self {
            Self::Real(r) => r.iter().map(|row| row.iter().map(|&x| Complex64::from(x)).collect()).collect(),
            Self::Complex(r) => r
                .iter()
                .map(|row| row.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
                .collect(),
        };
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(field_error(field, "matrix literal must be square and non-empty"));
        }
        Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladEntry {
    pub operator: MatrixLiteral,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormName {
    #[default]
    Published,
    Moment,
}

/// Model section; the Hamiltonian is given either as `energies` (diagonal)
/// or as a Hermitian `hamiltonian` matrix literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    GlobalWhiteNoise {
        #[serde(default)]
        energies: Option<Vec<f64>>,
        #[serde(default)]
        hamiltonian: Option<MatrixLiteral>,
        gamma: f64,
    },
    UncorrelatedKicks {
        #[serde(default)]
        energies: Option<Vec<f64>>,
        #[serde(default)]
        hamiltonian: Option<MatrixLiteral>,
        gamma: f64,
    },
    Pdme {
        #[serde(default)]
        energies: Option<Vec<f64>>,
        #[serde(default)]
        hamiltonian: Option<MatrixLiteral>,
        gamma: f64,
    },
    SelfadjointLindblad {
        #[serde(default)]
        energies: Option<Vec<f64>>,
        #[serde(default)]
        hamiltonian: Option<MatrixLiteral>,
        lindblads: Vec<LindbladEntry>,
    },
    QubitXy {
        #[serde(default)]
        omega0: f64,
        gamma_x: f64,
        gamma_y: f64,
        #[serde(default)]
        gamma_xy: f64,
        #[serde(default)]
        form: FormName,
    },
}

pub const MODEL_KINDS: [&str; 5] = [
    "global_white_noise",
    "uncorrelated_kicks",
    "pdme",
    "selfadjoint_lindblad",
    "qubit_xy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStateSection {
    Preset(String),
    Matrix(MatrixLiteral),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSection {
    pub t_max: f64,
    #[serde(default)]
    pub n_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub observable: String,
    pub sink: String,
}

/// Raw file contents before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub model: ModelSection,
    pub initial_state: InitialStateSection,
    pub time_grid: TimeGridSection,
    #[serde(default)]
    pub mc: Option<McSection>,
    #[serde(default)]
    pub outputs: Vec<OutputSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Coherence(usize, usize),
    Population(usize),
    FullState,
    ChoiSpectrum,
}

impl Observable {
    pub fn parse(s: &str) -> Option<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if s == "full_state" {
            return Some(Self::FullState);
        }
        if s == "choi_spectrum" {
            return Some(Self::ChoiSpectrum);
        }
        let args = |prefix: &str| -> Option<Vec<usize>> {
            let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|x| x.parse().ok()).collect()
        };
        if let Some(a) = args("coherence") {
            return (a.len() == 2).then(|| Self::Coherence(a[0], a[1]));
        }
        if let Some(a) = args("population") {
            return (a.len() == 1).then(|| Self::Population(a[0]));
        }
        None
    }

    /// Column stem used in CSV headers.
    pub fn column(&self) -> String {
        match self {
            Self::Coherence(n, m) => format!("coherence_{n}_{m}"),
            Self::Population(n) => format!("population_{n}"),
            Self::FullState => "rho".into(),
            Self::ChoiSpectrum => "choi".into(),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Coherence(n, m) => write!(f, "coherence({n},{m})"),
            Self::Population(n) => write!(f, "population({n})"),
            Self::FullState => f.write_str("full_state"),
            Self::ChoiSpectrum => f.write_str("choi_spectrum"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub observable: Observable,
    pub sink: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSettings {
    pub n_samples: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Validated model.
#[derive(Debug, Clone)]
pub enum Model {
    Dephasing(DephasingModel),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub section: ModelSection,
    pub model: Model,
    pub initial_state: DensityOperator,
    pub t_max: f64,
    pub n_points: usize,
    pub mc: McSettings,
    pub outputs: Vec<Output>,
}

fn field_error(field: &str, message: impl fmt::Display) -> Error {
    Error::Scenario {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn hamiltonian_from(energies: &Option<Vec<f64>>, hamiltonian: &Option<MatrixLiteral>) -> Result<HermitianOperator> {
    match (energies, hamiltonian) {
        (Some(e), None) if !e.is_empty() => Ok(HermitianOperator::from_real_diagonal(e)),
        (None, Some(h)) => HermitianOperator::new(h.to_matrix("model.hamiltonian")?)
            .map_err(|e| field_error("model.hamiltonian", e)),
        (Some(_), Some(_)) => Err(field_error("model", "give either `energies` or `hamiltonian`, not both")),
        _ => Err(field_error("model.energies", "a non-empty `energies` list or a `hamiltonian` is required")),
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(field_error(field, format!("must be a finite number >= 0, got {v}")));
    }
    Ok(())
}

impl ModelSection {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::GlobalWhiteNoise { .. } => MODEL_KINDS[0],
            Self::UncorrelatedKicks { .. } => MODEL_KINDS[1],
            Self::Pdme { .. } => MODEL_KINDS[2],
            Self::SelfadjointLindblad { .. } => MODEL_KINDS[3],
            Self::QubitXy { .. } => MODEL_KINDS[4],
        }
    }

    pub fn build(&self) -> Result<Model> {
        match self {
            Self::GlobalWhiteNoise { energies, hamiltonian, gamma } => {
                non_negative("model.gamma", *gamma)?;
                let sd = spectral_decompose(&hamiltonian_from(energies, hamiltonian)?, DEFAULT_DEGENERACY_TOL);
                Ok(Model::Dephasing(DephasingModel::global_white_noise(sd, *gamma)?))
            }
            Self::UncorrelatedKicks { energies, hamiltonian, gamma } => {
                non_negative("model.gamma", *gamma)?;
                let sd = spectral_decompose(&hamiltonian_from(energies, hamiltonian)?, DEFAULT_DEGENERACY_TOL);
                Ok(Model::Dephasing(DephasingModel::uncorrelated_kicks(sd, *gamma)?))
            }
            Self::Pdme { energies, hamiltonian, gamma } => {
                non_negative("model.gamma", *gamma)?;
                Ok(Model::Generator(GeneratorSpec::pdme(hamiltonian_from(energies, hamiltonian)?, *gamma)?))
            }
            Self::SelfadjointLindblad { energies, hamiltonian, lindblads } => {
                let h = hamiltonian_from(energies, hamiltonian)?;
                let mut ls = Vec::with_capacity(lindblads.len());
                for (i, l) in lindblads.iter().enumerate() {
                    let field = format!("model.lindblads[{i}]");
                    non_negative(&format!("{field}.rate"), l.rate)?;
                    let v = HermitianOperator::new(l.operator.to_matrix(&field)?).map_err(|e| field_error(&field, e))?;
                    if v.dim() != h.dim() {
                        return Err(field_error(&field, format!("dimension {} differs from the Hamiltonian's {}", v.dim(), h.dim())));
                    }
                    ls.push((v, QuadraticVariation::linear(l.rate)));
                }
                let spec = GeneratorSpec::SelfadjointLindblad {
                    hamiltonian: h,
                    lindblads: ls,
                };
                spec.validate()?;
                Ok(Model::Generator(spec))
            }
            Self::QubitXy {
                omega0,
                gamma_x,
                gamma_y,
                gamma_xy,
                form,
            } => {
                NoiseSpec::two_channel(*gamma_x, *gamma_y, *gamma_xy).map_err(|e| field_error("model.gamma_xy", e))?;
                let form = match form {
                    FormName::Published => QubitGeneratorForm::Published,
                    FormName::Moment => QubitGeneratorForm::Moment,
                };
                Ok(Model::Generator(GeneratorSpec::qubit_xy(*omega0, *gamma_x, *gamma_y, *gamma_xy, form)?))
            }
        }
    }
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dephasing(m) => m.decomposition().dim(),
            Self::Generator(g) => g.dim(),
        }
    }

    /// Averaged state at time `t` from the closed form or the master equation.
    pub fn evolve(&self, rho0: &DensityOperator, t: f64, n_steps: usize) -> Result<DensityOperator> {
        match self {
            Self::Dephasing(m) => evolve_dephasing(m, rho0, t),
            Self::Generator(g) => generators::propagate(g, rho0, t, n_steps),
        }
    }

    /// Dynamical map `ρ(0) ↦ ρ(t)`.
    pub fn propagator(&self, t: f64, n_steps: usize) -> Result<Superoperator> {
        match self {
            Self::Dephasing(m) => m.propagator(t),
            Self::Generator(g) => generators::propagator(g, t, n_steps),
        }
    }
}

impl ModelSection {
    /// Random-unitary model whose average reproduces this model.
    pub fn trajectory_model(&self, model: &Model, horizon: f64, n_steps: usize) -> Result<TrajectoryModel> {
        match (self, model) {
            (Self::GlobalWhiteNoise { gamma, .. }, Model::Dephasing(m)) => {
                TrajectoryModel::global_white_noise(m.decomposition().clone(), *gamma, horizon, n_steps)
            }
            (Self::UncorrelatedKicks { gamma, .. }, Model::Dephasing(m)) => {
                TrajectoryModel::uncorrelated_kicks(m.decomposition().clone(), *gamma, horizon, n_steps)
            }
            (Self::Pdme { gamma, .. }, Model::Generator(GeneratorSpec::Pdme { hamiltonian, .. })) => {
                let sd = spectral_decompose(hamiltonian, DEFAULT_DEGENERACY_TOL);
                TrajectoryModel::global_white_noise(sd, *gamma, horizon, n_steps)
            }
            (Self::SelfadjointLindblad { lindblads, .. }, Model::Generator(GeneratorSpec::SelfadjointLindblad { hamiltonian, lindblads: ls })) => {
                let k = lindblads.len();
                let diffusion = nalgebra::DMatrix::from_fn(k, k, |i, j| if i == j { lindblads[i].rate } else { 0.0 });
                let noise = NoiseSpec::white(diffusion)?;
                let kind = TrajectoryKind::TimeOrdered {
                    hamiltonian: hamiltonian.clone(),
                    couplings: ls.iter().map(|(v, _)| v.clone()).collect(),
                    noise,
                };
                TrajectoryModel::new(kind, horizon, n_steps)
            }
            (Self::QubitXy { omega0, gamma_x, gamma_y, gamma_xy, .. }, _) => {
                TrajectoryModel::time_ordered_qubit(*omega0, NoiseSpec::two_channel(*gamma_x, *gamma_y, *gamma_xy)?, horizon, n_steps)
            }
            _ => Err(Error::InvalidArgument("model section and built model disagree".into())),
        }
    }
}

fn initial_state(section: &InitialStateSection, dim: usize) -> Result<DensityOperator> {
    const FIELD: &str = "initial_state";
    match section {
        InitialStateSection::Preset(name) => match name.as_str() {
            "plus" => Ok(DensityOperator::uniform_superposition(dim)),
            "maximally_mixed" => Ok(DensityOperator::maximally_mixed(dim)),
            "ground" => {
                let mut m = CMatrix::zeros(dim, dim);
                m[(0, 0)] = Complex64::from(1.0);
                Ok(DensityOperator::new_unchecked(m))
            }
            other => Err(field_error(
                FIELD,
                format!("unknown preset \"{other}\"; allowed: \"plus\", \"ground\", \"maximally_mixed\" or a matrix literal"),
            )),
        },
        InitialStateSection::Matrix(lit) => {
            let m = lit.to_matrix(FIELD)?;
            if m.nrows() != dim {
                return Err(field_error(FIELD, format!("dimension {} differs from the model's {dim}", m.nrows())));
            }
            DensityOperator::new(m).map_err(|e| field_error(FIELD, e))
        }
    }
}

/// Line and column for serde errors, with the allowed model kinds spelled out
/// when the `kind` tag is unknown.
fn parse_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    if msg.contains("unknown variant") && MODEL_KINDS.iter().any(|k| msg.contains(k)) {
        return Error::Parse(format!("{msg} (allowed model kinds: {})", MODEL_KINDS.join(", ")));
    }
    Error::Parse(msg)
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        if let Some(kind) = value.pointer("/model/kind").and_then(|k| k.as_str()) {
            if !MODEL_KINDS.contains(&kind) {
                return Err(field_error(
                    "model.kind",
                    format!("unknown model kind \"{kind}\"; allowed kinds: {}", MODEL_KINDS.join(", ")),
                ));
            }
        }
        serde_json::from_str(text).map_err(parse_error)
    }

    pub fn validate(self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let model = self.model.build()?;
        let dim = model.dim();
        let initial_state = initial_state(&self.initial_state, dim)?;

        let t_max = self.time_grid.t_max;
        non_negative("time_grid.t_max", t_max)?;
        let n_points = match (t_max == 0.0, self.time_grid.n_points) {
            (true, _) => 1,
            (false, None) => DEFAULT_N_POINTS,
            (false, Some(n)) if n >= 2 => n,
            (false, Some(n)) => return Err(field_error("time_grid.n_points", format!("must be >= 2, got {n}"))),
        };

        let mc_in = self.mc.unwrap_or_default();
        let n_samples = mc_in.n_samples.unwrap_or(DEFAULT_N_SAMPLES);
        if n_samples < 2 {
            return Err(field_error("mc.n_samples", format!("must be >= 2, got {n_samples}")));
        }
        let dt = mc_in.dt.unwrap_or(DEFAULT_DT_FRACTION * t_max);
        if t_max > 0.0 && !(dt > 0.0 && dt <= t_max) {
            return Err(field_error("mc.dt", format!("must lie in (0, t_max], got {dt}")));
        }
        let mc = McSettings {
            n_samples,
            dt,
            seed: mc_in.seed.unwrap_or(0),
        };

        let mut outputs = Vec::with_capacity(self.outputs.len());
        for (i, o) in self.outputs.iter().enumerate() {
            let field = format!("outputs[{i}].observable");
            let observable = Observable::parse(&o.observable).ok_or_else(|| {
                field_error(
                    &field,
                    format!(
                        "unknown observable \"{}\"; allowed: coherence(n,m), population(n), full_state, choi_spectrum",
                        o.observable
                    ),
                )
            })?;
            let in_range = match observable {
                Observable::Coherence(n, m) => n < dim && m < dim,
                Observable::Population(n) => n < dim,
                _ => true,
            };
            if !in_range {
                return Err(field_error(&field, format!("level index out of range for dimension {dim}")));
            }
            if o.sink.is_empty() || Path::new(&o.sink).is_absolute() || o.sink.contains("..") {
                return Err(field_error(&format!("outputs[{i}].sink"), "must be a non-empty relative path"));
            }
            outputs.push(Output {
                observable,
                sink: o.sink.clone(),
            });
        }

        Ok(Scenario {
            name: self.name,
            section: self.model,
            model,
            initial_state,
            t_max,
            n_points,
            mc,
            outputs,
        })
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        ScenarioFile::from_json(text)?.validate()
    }

    pub fn time_grid(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![0.0];
        }
        (0..self.n_points)
            .map(|i| self.t_max * i as f64 / (self.n_points - 1) as f64)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Monte Carlo steps per time-grid interval, so every grid point is a step.
    pub fn mc_steps_per_interval(&self) -> usize {
        if self.n_points < 2 {
            return 1;
        }
        let interval = self.t_max / (self.n_points - 1) as f64;
        ((interval / self.mc.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json(&text)
}
