//! Correlated Brownian kicks: path sampling, Ito integrals and quadratic variations.
//!
//! A [`NoiseSpec`] describes `n` Brownian channels with diffusion matrix `Γ`
//! (`E[dℬ_j dℬ_k] = Γ_jk dt`) together with deterministic drift `a_k(t)` and
//! amplitude `b_k(t)` functions, so that channel `k` contributes the phase
//! `∫ a_k ds + ∫ b_k dℬ_k`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Composite Simpson panels used for quadratic variations unless overridden.
pub const DEFAULT_PANELS: usize = 2048;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const CHOLESKY_JITTER: f64 = 1e-12;

pub fn constant(value: f64) -> RealFn {
    Arc::new(move |_| value)
}

#[derive(Clone)]
pub struct NoiseSpec {
    diffusion: DMatrix<f64>,
    drift: Vec<RealFn>,
    amplitude: Vec<RealFn>,
}

impl fmt::Debug for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseSpec")
            .field("n_channels", &self.n_channels())
            .field("diffusion", &self.diffusion)
            .finish_non_exhaustive()
    }
}

impl NoiseSpec {
    pub fn new(diffusion: DMatrix<f64>, drift: Vec<RealFn>, amplitude: Vec<RealFn>) -> Result<Self> {
        let n = diffusion.nrows();
        if diffusion.ncols() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: diffusion.ncols(),
            });
        }
        for len in [drift.len(), amplitude.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        let scale = diffusion.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let asym = (&diffusion - diffusion.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "diffusion matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if n > 0 {
            let min_eigenvalue = diffusion.clone().symmetric_eigenvalues().min();
            if min_eigenvalue < -PSD_TOL {
                return Err(Error::NotPositive {
                    what: "diffusion matrix",
                    min_eigenvalue,
                });
            }
        }
        Ok(Self {
            diffusion,
            drift,
            amplitude,
        })
    }

    /// Zero drift and unit amplitudes.
    pub fn white(diffusion: DMatrix<f64>) -> Result<Self> {
        let n = diffusion.nrows();
        Self::new(diffusion, vec![constant(0.0); n], vec![constant(1.0); n])
    }

    /// `n` independent standard Brownian motions.
    pub fn standard(n: usize) -> Self {
        Self::white(DMatrix::identity(n, n)).expect("identity diffusion is valid")
    }

    /// Two channels with `Γ = [[γ_x, γ_xy], [γ_xy, γ_y]]`.
    pub fn two_channel(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> Result<Self> {
        Self::white(DMatrix::from_row_slice(2, 2, &[gamma_x, gamma_xy, gamma_xy, gamma_y]))
    }

    pub fn with_amplitudes(mut self, amplitude: Vec<RealFn>) -> Result<Self> {
        if amplitude.len() != self.n_channels() {
            return Err(Error::DimensionMismatch {
                expected: self.n_channels(),
                found: amplitude.len(),
            });
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn with_drifts(mut self, drift: Vec<RealFn>) -> Result<Self> {
        if drift.len() != self.n_channels() {
            return Err(Error::DimensionMismatch {
                expected: self.n_channels(),
                found: drift.len(),
            });
        }
        self.drift = drift;
        Ok(self)
    }

    pub fn n_channels(&self) -> usize {
        self.diffusion.nrows()
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    pub fn drift(&self, k: usize) -> &RealFn {
        &self.drift[k]
    }

    pub fn amplitude(&self, k: usize) -> &RealFn {
        &self.amplitude[k]
    }

    pub fn sampler(&self) -> PathSampler {
        PathSampler {
            factor: psd_cholesky(&self.diffusion),
        }
    }

    fn check_channel(&self, k: usize) -> Result<()> {
        if k >= self.n_channels() {
            return Err(Error::InvalidArgument(format!(
                "channel {k} out of range for {} channels",
                self.n_channels()
            )));
        }
        Ok(())
    }
}

/// Lower-triangular `L` with `L Lᵀ = Γ` for positive semidefinite `Γ`.
///
/// Pivots below the jitter threshold are treated as exact zeros, which keeps
/// rank-deficient diffusions (perfectly correlated or silent channels) exact.
fn psd_cholesky(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gamma.nrows();
    let jitter = CHOLESKY_JITTER * gamma.diagonal().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let pivot = gamma[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if pivot <= jitter {
            continue;
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let s = gamma[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / root;
        }
    }
    l
}

/// Independent random stream for one path: ChaCha8 keyed by `seed`, stream
/// selected by the path index, so the path does not depend on which thread
/// draws it or in which order.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws correlated increments `L z √Δt`.
#[derive(Debug, Clone)]
pub struct PathSampler {
    factor: DMatrix<f64>,
}

impl PathSampler {
    pub fn n_channels(&self) -> usize {
        self.factor.nrows()
    }

    /// Writes one correlated increment for a step of length `dt` into `out`.
    pub fn draw_increment(&self, rng: &mut ChaCha8Rng, dt: f64, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = StandardNormal.sample(rng);
        }
        let sdt = dt.sqrt();
        // L is lower triangular: row i only reads z_0..z_i, so fill from the bottom.
        for i in (0..out.len()).rev() {
            out[i] = (0..=i).map(|k| self.factor[(i, k)] * out[k]).sum::<f64>() * sdt;
        }
    }

    pub fn sample(&self, grid: &[f64], seed: u64, index: u64) -> Result<BrownianPaths> {
        validate_grid(grid)?;
        let n = self.n_channels();
        let steps = grid.len() - 1;
        let mut rng = path_rng(seed, index);
        let mut increments = DMatrix::zeros(n, steps);
        let mut buf = vec![0.0; n];
        for s in 0..steps {
            self.draw_increment(&mut rng, grid[s + 1] - grid[s], &mut buf);
            increments.set_column(s, &DVector::from_column_slice(&buf));
        }
        Ok(BrownianPaths {
            time_grid: grid.to_vec(),
            increments,
            seed,
            index,
        })
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("time grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidArgument("time grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n_steps + 1` equally spaced points on `[0, t]`.
pub fn uniform_grid(t: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|i| t * i as f64 / n_steps as f64).collect()
}

/// Sampled increments of correlated Brownian motions on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPaths {
    time_grid: Vec<f64>,
    /// `n_channels × n_steps`.
    increments: DMatrix<f64>,
    seed: u64,
    index: u64,
}

impl BrownianPaths {
    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn increments(&self) -> &DMatrix<f64> {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn n_channels(&self) -> usize {
        self.increments.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.increments.ncols()
    }

    /// `ℬ_k(t_i)` for every grid point, starting at 0.
    pub fn path(&self, channel: usize) -> Result<Vec<f64>> {
        ito_integral(&|_| 1.0, self, channel)
    }
}

/// Single path (index 0) of the noise described by `spec`.
pub fn sample_paths(spec: &NoiseSpec, grid: &[f64], seed: u64) -> Result<BrownianPaths> {
    spec.sampler().sample(grid, seed, 0)
}

/// Left-endpoint sums `Σ_{i<n} b(t_i) Δℬ_i`, one value per grid point.
pub fn ito_integral(amplitude: &dyn Fn(f64) -> f64, paths: &BrownianPaths, channel: usize) -> Result<Vec<f64>> {
    if channel >= paths.n_channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range for {} channels",
            paths.n_channels()
        )));
    }
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(paths.n_steps() + 1);
    out.push(0.0);
    for (s, &t) in paths.time_grid[..paths.n_steps()].iter().enumerate() {
        acc += amplitude(t) * paths.increments[(channel, s)];
        out.push(acc);
    }
    Ok(out)
}

/// Composite Simpson rule on `[a, b]`; `panels` is rounded up to an even count.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// `t ↦ ⟨η⟩_t`, the accumulated variance of a phase process.
#[derive(Clone)]
pub struct QuadraticVariation {
    f: RealFn,
}

impl fmt::Debug for QuadraticVariation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticVariation").finish_non_exhaustive()
    }
}

impl QuadraticVariation {
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    /// `⟨η⟩_t = rate · t`, the markovian case.
    pub fn linear(rate: f64) -> Self {
        Self::from_fn(move |t| rate * t)
    }

    /// `⟨η⟩_t = ∫_0^t integrand(s) ds` by composite Simpson.
    pub fn integral_of(integrand: RealFn, panels: usize) -> Self {
        Self::from_fn(move |t| simpson(&*integrand, 0.0, t, panels))
    }

    /// `Λ(t) = ∫_0^t b(s)² ds`.
    pub fn integral_of_square(amplitude: RealFn, panels: usize) -> Self {
        Self::integral_of(Arc::new(move |s| amplitude(s).powi(2)), panels)
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    /// `d⟨η⟩_t/dt`, see [`derivative`].
    pub fn rate(&self, t: f64) -> f64 {
        derivative(&*self.f, t)
    }
}

/// Finite-difference derivative with step `1e-6·max(1, t)`: central where
/// possible, second-order one-sided near `t = 0`.
pub fn derivative(f: &dyn Fn(f64) -> f64, t: f64) -> f64 {
    let h = 1e-6 * t.abs().max(1.0);
    if t >= h {
        (f(t + h) - f(t - h)) / (2.0 * h)
    } else {
        (-3.0 * f(t) + 4.0 * f(t + h) - f(t + 2.0 * h)) / (2.0 * h)
    }
}

/// Sign of the cross term in a two-channel quadratic variation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSign {
    /// `η = χ_j + χ_k`.
    Sum,
    /// `η = χ_j − χ_k`, the phase difference that damps a coherence.
    Difference,
}

/// `t ↦ ∫_0^t [b_j² Γ_jj + b_k² Γ_kk ± 2 b_j b_k Γ_jk] ds`.
pub fn quadratic_variation(spec: &NoiseSpec, channels: (usize, usize), sign: PairSign) -> Result<QuadraticVariation> {
    quadratic_variation_with_panels(spec, channels, sign, DEFAULT_PANELS)
}

pub fn quadratic_variation_with_panels(
    spec: &NoiseSpec,
    (j, k): (usize, usize),
    sign: PairSign,
    panels: usize,
) -> Result<QuadraticVariation> {
    spec.check_channel(j)?;
    spec.check_channel(k)?;
    let (gjj, gkk, gjk) = (spec.diffusion[(j, j)], spec.diffusion[(k, k)], spec.diffusion[(j, k)]);
    let s = match sign {
        PairSign::Sum => 1.0,
        PairSign::Difference => -1.0,
    };
    let (bj, bk) = (spec.amplitude[j].clone(), spec.amplitude[k].clone());
    let integrand: RealFn = Arc::new(move |t| {
        let (x, y) = (bj(t), bk(t));
        x * x * gjj + y * y * gkk + s * 2.0 * x * y * gjk
    });
    Ok(QuadraticVariation::integral_of(integrand, panels))
}
