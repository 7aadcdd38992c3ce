//! Closed-form decoherence factors for spectral-kick models.
//!
//! Each level `k` of `H = Σ e_k P_k` picks up a random phase; averaging over
//! the noise multiplies the coherence `P_n ρ P_m` by `exp(−½⟨η_nm⟩_t)`, where
//! `η_nm` is the difference of the two phase processes.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise::{simpson, DEFAULT_PANELS};
use crate::operator::{sandwich_superop, CMatrix, DensityOperator, SpectralDecomposition, Superoperator, IM};

/// `ē(s; level)`.
pub type LevelAmplitudeFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;
/// `ḡ(s; level, level')`.
pub type LevelCorrelationFn = Arc<dyn Fn(f64, usize, usize) -> f64 + Send + Sync>;
/// `ē(s; E_CM)`.
pub type EnergyAmplitudeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `ḡ(s; E_CM, E'_CM)`.
pub type EnergyCorrelationFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// User correlations are sampled on this many points of `[0, CORRELATION_CHECK_HORIZON]`.
const CORRELATION_CHECK_POINTS: usize = 65;
const CORRELATION_CHECK_HORIZON: f64 = 10.0;
const CORRELATION_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum DephasingKind {
    /// Every level kicked by the same white noise: `e_k t → e_k t + e_k ℬ(t)`,
    /// `E[ℬ(t)²] = γt`.
    GlobalWhiteNoise { gamma: f64 },
    /// Independent Brownian motion per level with variance `γt`.
    UncorrelatedKicks { gamma: f64 },
    /// Level-dependent amplitude and time-dependent correlation between levels.
    GeneralKicks {
        amplitude: LevelAmplitudeFn,
        correlation: LevelCorrelationFn,
    },
}

impl fmt::Debug for DephasingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GlobalWhiteNoise { gamma } => f.debug_struct("GlobalWhiteNoise").field("gamma", gamma).finish(),
            Self::UncorrelatedKicks { gamma } => f.debug_struct("UncorrelatedKicks").field("gamma", gamma).finish(),
            Self::GeneralKicks { .. } => f.debug_struct("GeneralKicks").finish_non_exhaustive(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DephasingModel {
    decomposition: SpectralDecomposition,
    kind: DephasingKind,
    panels: usize,
}

fn check_rate(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise rate must be >= 0, got {gamma}")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

fn check_correlation<L: Copy + fmt::Debug>(levels: &[L], g: impl Fn(f64, L, L) -> f64) -> Result<()> {
    for i in 0..CORRELATION_CHECK_POINTS {
        let s = CORRELATION_CHECK_HORIZON * i as f64 / (CORRELATION_CHECK_POINTS - 1) as f64;
        for &a in levels {
            let diag = g(s, a, a);
            if (diag - 1.0).abs() > CORRELATION_TOL {
                return Err(Error::InvalidArgument(format!(
                    "correlation at s={s} for level {a:?} with itself is {diag}, expected 1"
                )));
            }
            for &b in levels {
                let v = g(s, a, b);
                if !(v.abs() <= 1.0 + CORRELATION_TOL) {
                    return Err(Error::InvalidArgument(format!(
                        "correlation at s={s} between {a:?} and {b:?} is {v}, |g| must be <= 1"
                    )));
                }
            }
        }
    }
    Ok(())
}

impl DephasingModel {
    pub fn new(decomposition: SpectralDecomposition, kind: DephasingKind) -> Result<Self> {
        match &kind {
            DephasingKind::GlobalWhiteNoise { gamma } | DephasingKind::UncorrelatedKicks { gamma } => check_rate(*gamma)?,
            DephasingKind::GeneralKicks { correlation, .. } => {
                let levels: Vec<usize> = (0..decomposition.len()).collect();
                check_correlation(&levels, |s, a, b| correlation(s, a, b))?;
            }
        }
        Ok(Self {
            decomposition,
            kind,
            panels: DEFAULT_PANELS,
        })
    }

    pub fn global_white_noise(decomposition: SpectralDecomposition, gamma: f64) -> Result<Self> {
        Self::new(decomposition, DephasingKind::GlobalWhiteNoise { gamma })
    }

    pub fn uncorrelated_kicks(decomposition: SpectralDecomposition, gamma: f64) -> Result<Self> {
        Self::new(decomposition, DephasingKind::UncorrelatedKicks { gamma })
    }

    pub fn with_panels(mut self, panels: usize) -> Self {
        self.panels = panels;
        self
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    pub fn kind(&self) -> &DephasingKind {
        &self.kind
    }

    /// `⟨η_nm⟩_t` for the phase difference between levels `n` and `m`.
    pub fn quadratic_variation(&self, n: usize, m: usize, t: f64) -> Result<f64> {
        check_time(t)?;
        let levels = self.decomposition.len();
        for k in [n, m] {
            if k >= levels {
                return Err(Error::InvalidArgument(format!("level {k} out of range for {levels} levels")));
            }
        }
        if n == m {
            return Ok(0.0);
        }
        let e = self.decomposition.eigenvalues();
        Ok(match &self.kind {
            DephasingKind::GlobalWhiteNoise { gamma } => gamma * t * (e[n] - e[m]).powi(2),
            DephasingKind::UncorrelatedKicks { gamma } => gamma * t * (e[n] * e[n] + e[m] * e[m]),
            DephasingKind::GeneralKicks { amplitude, correlation } => simpson(
                &|s| {
                    let (a, b) = (amplitude(s, n), amplitude(s, m));
                    a * a + b * b - 2.0 * correlation(s, n, m) * a * b
                },
                0.0,
                t,
                self.panels,
            ),
        })
    }

    pub fn coherence_factor(&self, n: usize, m: usize, t: f64) -> Result<f64> {
        Ok((-0.5 * self.quadratic_variation(n, m, t)?).exp())
    }

    /// Level-by-level factors at time `t`.
    pub fn factor_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let k = self.decomposition.len();
        let mut out = DMatrix::from_element(k, k, 1.0);
        for n in 0..k {
            for m in n + 1..k {
                let f = self.coherence_factor(n, m, t)?;
                out[(n, m)] = f;
                out[(m, n)] = f;
            }
        }
        Ok(out)
    }

    /// Averaged evolution `ρ₀ ↦ ρ(t)` as a superoperator.
    pub fn propagator(&self, t: f64) -> Result<Superoperator> {
        let factors = self.factor_matrix(t)?;
        let e = self.decomposition.eigenvalues();
        let p = self.decomposition.projectors();
        let d = self.decomposition.dim();
        let mut acc = Superoperator::zero(d);
        for n in 0..p.len() {
            for m in 0..p.len() {
                let w = (-IM * (e[n] - e[m]) * t).exp() * factors[(n, m)];
                acc = &acc + &sandwich_superop(&p[n], &p[m])?.scale_complex(w);
            }
        }
        Ok(acc)
    }
}

pub fn coherence_factor(model: &DephasingModel, n: usize, m: usize, t: f64) -> Result<f64> {
    model.coherence_factor(n, m, t)
}

/// `ρ(t) = Σ_nm e^{−i(e_n−e_m)t} F_nm(t) P_n ρ₀ P_m`.
pub fn evolve_dephasing(model: &DephasingModel, rho0: &DensityOperator, t: f64) -> Result<DensityOperator> {
    let d = model.decomposition.dim();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho0.dim(),
        });
    }
    let factors = model.factor_matrix(t)?;
    let e = model.decomposition.eigenvalues();
    let p = model.decomposition.projectors();
    let blocks: Vec<CMatrix> = p.iter().map(|pn| pn * rho0.matrix()).collect();
    let mut out = CMatrix::zeros(d, d);
    for n in 0..p.len() {
        for m in 0..p.len() {
            let w = (-IM * (e[n] - e[m]) * t).exp() * factors[(n, m)];
            out += (&blocks[n] * &p[m]) * w;
        }
    }
    Ok(DensityOperator::new_unchecked(out))
}

/// Two particles under a central potential, labelled by centre-of-mass and
/// relative energies; the noise only sees the centre-of-mass label.
#[derive(Clone)]
pub struct EnergyGrid2P {
    cm_levels: Vec<f64>,
    rel_levels: Vec<f64>,
    amplitude: EnergyAmplitudeFn,
    correlation: EnergyCorrelationFn,
    panels: usize,
}

impl fmt::Debug for EnergyGrid2P {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnergyGrid2P")
            .field("cm_levels", &self.cm_levels)
            .field("rel_levels", &self.rel_levels)
            .finish_non_exhaustive()
    }
}

impl EnergyGrid2P {
    pub fn new(
        cm_levels: Vec<f64>,
        rel_levels: Vec<f64>,
        amplitude: EnergyAmplitudeFn,
        correlation: EnergyCorrelationFn,
    ) -> Result<Self> {
        if cm_levels.is_empty() || rel_levels.is_empty() {
            return Err(Error::InvalidArgument("energy grids must be non-empty".into()));
        }
        check_correlation(&cm_levels, |s, a, b| correlation(s, a, b))?;
        Ok(Self {
            cm_levels,
            rel_levels,
            amplitude,
            correlation,
            panels: DEFAULT_PANELS,
        })
    }

    pub fn with_panels(mut self, panels: usize) -> Self {
        self.panels = panels;
        self
    }

    pub fn cm_levels(&self) -> &[f64] {
        &self.cm_levels
    }

    pub fn rel_levels(&self) -> &[f64] {
        &self.rel_levels
    }

    pub fn dim(&self) -> usize {
        self.cm_levels.len() * self.rel_levels.len()
    }

    /// Basis index of `|E_CM[cm]; E_rel[rel]⟩`.
    pub fn index(&self, cm: usize, rel: usize) -> usize {
        cm * self.rel_levels.len() + rel
    }

    /// `(cm, rel)` labels of a basis index.
    pub fn labels(&self, idx: usize) -> (usize, usize) {
        (idx / self.rel_levels.len(), idx % self.rel_levels.len())
    }

    pub fn total_energy(&self, idx: usize) -> f64 {
        let (c, r) = self.labels(idx);
        self.cm_levels[c] + self.rel_levels[r]
    }

    /// `⟨η̄(·; E_CM, E'_CM)⟩_t = ∫_0^t [ē² + ē'² − 2ḡ ē ē'] ds`.
    pub fn cm_quadratic_variation(&self, cm: usize, cm2: usize, t: f64) -> f64 {
        if cm == cm2 {
            return 0.0;
        }
        let (e1, e2) = (self.cm_levels[cm], self.cm_levels[cm2]);
        simpson(
            &|s| {
                let (a, b) = ((self.amplitude)(s, e1), (self.amplitude)(s, e2));
                a * a + b * b - 2.0 * (self.correlation)(s, e1, e2) * a * b
            },
            0.0,
            t,
            self.panels,
        )
    }

    /// `∫_0^t (ē − ē')² ds`, a lower bound on the centre-of-mass quadratic variation.
    pub fn cm_quadratic_variation_floor(&self, cm: usize, cm2: usize, t: f64) -> f64 {
        let (e1, e2) = (self.cm_levels[cm], self.cm_levels[cm2]);
        simpson(
            &|s| ((self.amplitude)(s, e1) - (self.amplitude)(s, e2)).powi(2),
            0.0,
            t,
            self.panels,
        )
    }
}

/// Coherences between different centre-of-mass labels decay with
/// `exp(−½⟨η̄⟩_t)`; those sharing a centre-of-mass label keep full coherence.
pub fn evolve_two_particle(grid: &EnergyGrid2P, rho0: &DensityOperator, t: f64) -> Result<DensityOperator> {
    check_time(t)?;
    let d = grid.dim();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho0.dim(),
        });
    }
    let ncm = grid.cm_levels.len();
    let mut factors = DMatrix::from_element(ncm, ncm, 1.0);
    for a in 0..ncm {
        for b in a + 1..ncm {
            let f = (-0.5 * grid.cm_quadratic_variation(a, b, t)).exp();
            factors[(a, b)] = f;
            factors[(b, a)] = f;
        }
    }
    let r0 = rho0.matrix();
    let out = CMatrix::from_fn(d, d, |i, j| {
        let (ci, cj) = (grid.labels(i).0, grid.labels(j).0);
        let phase: Complex64 = (-IM * (grid.total_energy(i) - grid.total_energy(j)) * t).exp();
        r0[(i, j)] * phase * factors[(ci, cj)]
    });
    Ok(DensityOperator::new_unchecked(out))
}
