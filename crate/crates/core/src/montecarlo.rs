//! Random unitary trajectories and their averages.
//!
//! Trajectory `i` under seed `s` always draws from the same random stream
//! ([`path_rng`]), and samples are reduced in fixed-size chunks combined in
//! index order, so estimates are bit-identical for any number of threads.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::{path_rng, simpson, NoiseSpec, RealFn, DEFAULT_PANELS};
use crate::operator::{expm, matrix_exponential, CMatrix, DensityOperator, HermitianOperator, SpectralDecomposition, Superoperator, IM};

/// Samples per reduction chunk. Fixed so the summation tree never depends on
/// the thread count.
const CHUNK: usize = 256;
const ZERO_ERROR_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum TrajectoryKind {
    /// `U = Σ_k e^{−iχ_k(t)} P_k` with
    /// `χ_k = e_k t + ∫ a_k ds + ∫ b_k dℬ_k`, one noise channel per level.
    SpectralKick {
        decomposition: SpectralDecomposition,
        noise: NoiseSpec,
    },
    /// `𝒯 exp[−i∫(ω₀σ_z dt + dB_x σ_x + dB_y σ_y)]` with channels `(x, y)`.
    TimeOrderedQubit { omega0: f64, noise: NoiseSpec },
    /// `𝒯 exp[−i∫(H dt + Σ_k dB_k V_k)]`, one channel per coupling `V_k`.
    TimeOrdered {
        hamiltonian: HermitianOperator,
        couplings: Vec<HermitianOperator>,
        noise: NoiseSpec,
    },
}

impl fmt::Debug for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SpectralKick { decomposition, noise } => f
                .debug_struct("SpectralKick")
                .field("eigenvalues", &decomposition.eigenvalues())
                .field("noise", noise)
                .finish(),
            Self::TimeOrderedQubit { omega0, noise } => f
                .debug_struct("TimeOrderedQubit")
                .field("omega0", omega0)
                .field("noise", noise)
                .finish(),
            Self::TimeOrdered { hamiltonian, couplings, noise } => f
                .debug_struct("TimeOrdered")
                .field("dim", &hamiltonian.dim())
                .field("n_couplings", &couplings.len())
                .field("noise", noise)
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    kind: TrajectoryKind,
    horizon: f64,
    n_steps: usize,
}

impl TrajectoryModel {
    pub fn new(kind: TrajectoryKind, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        match &kind {
            TrajectoryKind::SpectralKick { decomposition, noise } => {
                if noise.n_channels() != decomposition.len() {
                    return Err(Error::DimensionMismatch {
                        expected: decomposition.len(),
                        found: noise.n_channels(),
                    });
                }
            }
            TrajectoryKind::TimeOrderedQubit { noise, .. } => {
                if noise.n_channels() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        found: noise.n_channels(),
                    });
                }
            }
            TrajectoryKind::TimeOrdered { hamiltonian, couplings, noise } => {
                if noise.n_channels() != couplings.len() {
                    return Err(Error::DimensionMismatch {
                        expected: couplings.len(),
                        found: noise.n_channels(),
                    });
                }
                if let Some(v) = couplings.iter().find(|v| v.dim() != hamiltonian.dim()) {
                    return Err(Error::DimensionMismatch {
                        expected: hamiltonian.dim(),
                        found: v.dim(),
                    });
                }
            }
        }
        Ok(Self { kind, horizon, n_steps })
    }

    /// All levels kicked by one white noise of strength `γ`, amplitude `e_k`.
    pub fn global_white_noise(decomposition: SpectralDecomposition, gamma: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        let k = decomposition.len();
        let noise = level_noise(&decomposition, DMatrix::from_element(k, k, gamma))?;
        Self::new(TrajectoryKind::SpectralKick { decomposition, noise }, horizon, n_steps)
    }

    /// Independent Brownian motion of strength `γ` per level, amplitude `e_k`.
    pub fn uncorrelated_kicks(decomposition: SpectralDecomposition, gamma: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        let k = decomposition.len();
        let noise = level_noise(&decomposition, DMatrix::identity(k, k) * gamma)?;
        Self::new(TrajectoryKind::SpectralKick { decomposition, noise }, horizon, n_steps)
    }

    pub fn time_ordered_qubit(omega0: f64, noise: NoiseSpec, horizon: f64, n_steps: usize) -> Result<Self> {
        Self::new(TrajectoryKind::TimeOrderedQubit { omega0, noise }, horizon, n_steps)
    }

    pub fn kind(&self) -> &TrajectoryKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TrajectoryKind::SpectralKick { decomposition, .. } => decomposition.dim(),
            TrajectoryKind::TimeOrderedQubit { .. } => 2,
            TrajectoryKind::TimeOrdered { hamiltonian, .. } => hamiltonian.dim(),
        }
    }

    /// Unitaries of trajectory `index` after each of the (ascending) step
    /// counts in `checkpoints`.
    pub fn sample_unitaries_at(&self, seed: u64, index: u64, checkpoints: &[usize]) -> Vec<CMatrix> {
        debug_assert!(checkpoints.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(checkpoints.iter().all(|&c| c <= self.n_steps));
        match &self.kind {
            TrajectoryKind::SpectralKick { decomposition, noise } => {
                self.spectral_kick(decomposition, noise, seed, index, checkpoints)
            }
            TrajectoryKind::TimeOrderedQubit { omega0, noise } => {
                self.time_ordered(*omega0, noise, seed, index, checkpoints)
            }
            TrajectoryKind::TimeOrdered { hamiltonian, couplings, noise } => {
                self.time_ordered_general(hamiltonian, couplings, noise, seed, index, checkpoints)
            }
        }
    }

    fn spectral_kick(
        &self,
        decomposition: &SpectralDecomposition,
        noise: &NoiseSpec,
        seed: u64,
        index: u64,
        checkpoints: &[usize],
    ) -> Vec<CMatrix> {
        let k = decomposition.len();
        let dt = self.dt();
        let sampler = noise.sampler();
        let mut rng = path_rng(seed, index);
        let mut kicks = vec![0.0; k];
        let mut chi = vec![0.0; k];
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        let energies = decomposition.eigenvalues();
        let emit = |step: usize, chi: &[f64], out: &mut Vec<CMatrix>| {
            let t = step as f64 * dt;
            let phases: Vec<f64> = energies.iter().zip(chi).map(|(e, c)| e * t + c).collect();
            out.push(decomposition.phase_operator(&phases));
        };
        for step in 0..=self.n_steps {
            while next.peek().is_some_and(|&&c| c == step) {
                emit(step, &chi, &mut out);
                next.next();
            }
            if step == self.n_steps || next.peek().is_none() {
                break;
            }
            let t = step as f64 * dt;
            sampler.draw_increment(&mut rng, dt, &mut kicks);
            for (j, c) in chi.iter_mut().enumerate() {
                *c += noise.drift(j)(t) * dt + noise.amplitude(j)(t) * kicks[j];
            }
        }
        out
    }

    fn time_ordered(&self, omega0: f64, noise: &NoiseSpec, seed: u64, index: u64, checkpoints: &[usize]) -> Vec<CMatrix> {
        let dt = self.dt();
        let sampler = noise.sampler();
        let mut rng = path_rng(seed, index);
        let mut kicks = [0.0; 2];
        let mut u = Mat2::identity();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        let (ax, ay, bx, by) = (noise.drift(0), noise.drift(1), noise.amplitude(0), noise.amplitude(1));
        for step in 0..=self.n_steps {
            while next.peek().is_some_and(|&&c| c == step) {
                out.push(u.to_matrix());
                next.next();
            }
            if step == self.n_steps || next.peek().is_none() {
                break;
            }
            let t = step as f64 * dt;
            sampler.draw_increment(&mut rng, dt, &mut kicks);
            let nx = ax(t) * dt + bx(t) * kicks[0];
            let ny = ay(t) * dt + by(t) * kicks[1];
            u = Mat2::pauli_rotation(nx, ny, omega0 * dt).mul(&u);
        }
        out
    }
}

impl TrajectoryModel {
    fn time_ordered_general(
        &self,
        hamiltonian: &HermitianOperator,
        couplings: &[HermitianOperator],
        noise: &NoiseSpec,
        seed: u64,
        index: u64,
        checkpoints: &[usize],
    ) -> Vec<CMatrix> {
        let d = hamiltonian.dim();
        let dt = self.dt();
        let sampler = noise.sampler();
        let mut rng = path_rng(seed, index);
        let mut kicks = vec![0.0; couplings.len()];
        let mut u = CMatrix::identity(d, d);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        for step in 0..=self.n_steps {
            while next.peek().is_some_and(|&&c| c == step) {
                out.push(u.clone());
                next.next();
            }
            if step == self.n_steps || next.peek().is_none() {
                break;
            }
            let t = step as f64 * dt;
            sampler.draw_increment(&mut rng, dt, &mut kicks);
            let mut k = hamiltonian.matrix() * Complex64::from(dt);
            for (j, v) in couplings.iter().enumerate() {
                let w = noise.drift(j)(t) * dt + noise.amplitude(j)(t) * kicks[j];
                k += v.matrix() * Complex64::from(w);
            }
            let step_u = matrix_exponential(&k, -IM).expect("step exponent is square");
            u = step_u * u;
        }
        out
    }
}

fn level_noise(decomposition: &SpectralDecomposition, diffusion: DMatrix<f64>) -> Result<NoiseSpec> {
    let amplitudes: Vec<RealFn> = decomposition
        .eigenvalues()
        .iter()
        .map(|&e| crate::noise::constant(e))
        .collect();
    NoiseSpec::white(diffusion)?.with_amplitudes(amplitudes)
}

/// Row-major 2×2 complex matrix for the per-step qubit products.
#[derive(Debug, Clone, Copy)]
struct Mat2([Complex64; 4]);

impl Mat2 {
    fn identity() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Self([o, z, z, o])
    }

    /// `exp(−i(n_x σ_x + n_y σ_y + n_z σ_z)) = cos θ I − i sin θ n̂·σ`.
    fn pauli_rotation(nx: f64, ny: f64, nz: f64) -> Self {
        let theta = (nx * nx + ny * ny + nz * nz).sqrt();
        let (c, sinc) = if theta == 0.0 {
            (1.0, 1.0)
        } else {
            (theta.cos(), theta.sin() / theta)
        };
        // −i sinc (n·σ): σ_x = [[0,1],[1,0]], σ_y = [[0,−i],[i,0]], σ_z = diag(1,−1)
        let a = Complex64::new(c, -sinc * nz);
        let d = Complex64::new(c, sinc * nz);
        let b = Complex64::new(-sinc * ny, -sinc * nx);
        let cc = Complex64::new(sinc * ny, -sinc * nx);
        Self([a, b, cc, d])
    }

    fn mul(&self, o: &Self) -> Self {
        let (a, b) = (&self.0, &o.0);
        Self([
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ])
    }

    fn to_matrix(self) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &self.0)
    }
}

/// Unitary of trajectory `index` at the model horizon.
pub fn sample_unitary(model: &TrajectoryModel, seed: u64, index: u64) -> CMatrix {
    model
        .sample_unitaries_at(seed, index, &[model.n_steps])
        .pop()
        .expect("one checkpoint requested")
}

/// Entrywise sample mean with standard errors of the real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct MCEstimate {
    pub mean: CMatrix,
    pub stderr_re: DMatrix<f64>,
    pub stderr_im: DMatrix<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl MCEstimate {
    /// `(mean − reference)/stderr` for real and imaginary parts. Differences
    /// within rounding (`1e-12`) score 0; other entries with zero error score ±∞.
    pub fn z_scores(&self, reference: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
        let z = |diff: f64, se: f64| {
            if diff.abs() <= ZERO_ERROR_TOL {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                diff.signum() * f64::INFINITY
            }
        };
        let (r, c) = self.mean.shape();
        let re = DMatrix::from_fn(r, c, |i, j| z(self.mean[(i, j)].re - reference[(i, j)].re, self.stderr_re[(i, j)]));
        let im = DMatrix::from_fn(r, c, |i, j| z(self.mean[(i, j)].im - reference[(i, j)].im, self.stderr_im[(i, j)]));
        (re, im)
    }

    pub fn max_abs_z(&self, reference: &CMatrix) -> f64 {
        let (re, im) = self.z_scores(reference);
        re.iter().chain(im.iter()).fold(0.0, |m, z| m.max(z.abs()))
    }

    /// Every entry within `max(k·stderr, floor)` of `reference`, per part.
    pub fn agrees_with(&self, reference: &CMatrix, k: f64, floor: f64) -> bool {
        self.mean.iter().zip(reference.iter()).enumerate().all(|(idx, (m, r))| {
            let (i, j) = (idx % self.mean.nrows(), idx / self.mean.nrows());
            (m.re - r.re).abs() <= (k * self.stderr_re[(i, j)]).max(floor)
                && (m.im - r.im).abs() <= (k * self.stderr_im[(i, j)]).max(floor)
        })
    }
}

/// Running mean and sum of squared deviations, real and imaginary parts apart.
#[derive(Clone)]
struct Moments {
    n: usize,
    mean_re: DMatrix<f64>,
    mean_im: DMatrix<f64>,
    m2_re: DMatrix<f64>,
    m2_im: DMatrix<f64>,
}

impl Moments {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            n: 0,
            mean_re: DMatrix::zeros(rows, cols),
            mean_im: DMatrix::zeros(rows, cols),
            m2_re: DMatrix::zeros(rows, cols),
            m2_im: DMatrix::zeros(rows, cols),
        }
    }

    fn push(&mut self, x: &CMatrix) {
        self.n += 1;
        let n = self.n as f64;
        for (idx, z) in x.iter().enumerate() {
            let d = z.re - self.mean_re[idx];
            self.mean_re[idx] += d / n;
            self.m2_re[idx] += d * (z.re - self.mean_re[idx]);
            let d = z.im - self.mean_im[idx];
            self.mean_im[idx] += d / n;
            self.m2_im[idx] += d * (z.im - self.mean_im[idx]);
        }
    }

    /// Pairwise combination of two disjoint sample sets.
    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = o.clone();
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        for idx in 0..self.mean_re.len() {
            let d = o.mean_re[idx] - self.mean_re[idx];
            self.mean_re[idx] += d * nb / n;
            self.m2_re[idx] += o.m2_re[idx] + d * d * na * nb / n;
            let d = o.mean_im[idx] - self.mean_im[idx];
            self.mean_im[idx] += d * nb / n;
            self.m2_im[idx] += o.m2_im[idx] + d * d * na * nb / n;
        }
        self.n += o.n;
    }

    fn finish(&self, seed: u64) -> MCEstimate {
        let n = self.n as f64;
        let se = |m2: &DMatrix<f64>| m2.map(|v| (v.max(0.0) / (n - 1.0) / n).sqrt());
        let (r, c) = self.mean_re.shape();
        MCEstimate {
            mean: CMatrix::from_fn(r, c, |i, j| Complex64::new(self.mean_re[(i, j)], self.mean_im[(i, j)])),
            stderr_re: se(&self.m2_re),
            stderr_im: se(&self.m2_im),
            n_samples: self.n,
            seed,
        }
    }
}

/// Averages `sample(i)` (several matrices per sample) over `i < n_samples`.
pub fn estimate_many<F>(n_samples: usize, seed: u64, shape: (usize, usize), n_outputs: usize, sample: F) -> Result<Vec<MCEstimate>>
where
    F: Fn(u64) -> Vec<CMatrix> + Sync,
{
    if n_samples < 2 {
        return Err(Error::InvalidArgument("n_samples must be >= 2".into()));
    }
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<Vec<Moments>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::new(shape.0, shape.1); n_outputs];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                for (m, x) in acc.iter_mut().zip(sample(i as u64)) {
                    m.push(&x);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::new(shape.0, shape.1); n_outputs];
    for chunk in &partials {
        for (t, m) in total.iter_mut().zip(chunk) {
            t.merge(m);
        }
    }
    Ok(total.iter().map(|m| m.finish(seed)).collect())
}

/// `E[U ρ₀ U†]` at the model horizon.
pub fn mc_average(model: &TrajectoryModel, rho0: &DensityOperator, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    let mut v = mc_average_at(model, rho0, &[model.n_steps], n_samples, seed)?;
    Ok(v.remove(0))
}

/// `E[U ρ₀ U†]` after each step count in `checkpoints`, from one set of trajectories.
pub fn mc_average_at(
    model: &TrajectoryModel,
    rho0: &DensityOperator,
    checkpoints: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MCEstimate>> {
    let d = model.dim();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho0.dim(),
        });
    }
    if let Some(&bad) = checkpoints.iter().find(|&&c| c > model.n_steps) {
        return Err(Error::InvalidArgument(format!("checkpoint {bad} beyond {} steps", model.n_steps)));
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by_key(|&i| checkpoints[i]);
    let sorted: Vec<usize> = order.iter().map(|&i| checkpoints[i]).collect();
    let r0 = rho0.matrix();
    let sorted_est = estimate_many(n_samples, seed, (d, d), checkpoints.len(), |i| {
        model
            .sample_unitaries_at(seed, i, &sorted)
            .iter()
            .map(|u| u * r0 * u.adjoint())
            .collect()
    })?;
    let mut out = vec![None; checkpoints.len()];
    for (est, &slot) in sorted_est.into_iter().zip(&order) {
        out[slot] = Some(est);
    }
    Ok(out.into_iter().map(|e| e.expect("every slot filled")).collect())
}

/// Monte Carlo and closed-form sides of `E[exp(−i𝔄(t))] = exp(−𝔎(t)/2)` with
/// `𝔄 = ∫β 𝔖 dℬ` and `𝔎 = ∫β² 𝔖² d⟨ℬ⟩`.
#[derive(Debug, Clone)]
pub struct MomentOracle {
    pub mc: MCEstimate,
    pub analytic: Superoperator,
}

/// `∫_0^t β(s)² Γ ds`, the scalar part of `𝔎(t)`.
pub fn moment_variance(beta: &RealFn, noise: &NoiseSpec, t: f64) -> f64 {
    noise.diffusion()[(0, 0)] * simpson(&|s| beta(s).powi(2), 0.0, t, DEFAULT_PANELS)
}

fn check_single_channel(noise: &NoiseSpec) -> Result<()> {
    if noise.n_channels() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: noise.n_channels(),
        });
    }
    Ok(())
}

/// Ito sums `a = Σ β(t_i) Δℬ_i` for path `index`, channel amplitude included.
fn ito_scalar(beta: &RealFn, noise: &NoiseSpec, t: f64, n_steps: usize, seed: u64, index: u64) -> f64 {
    let sampler = noise.sampler();
    let mut rng = path_rng(seed, index);
    let dt = t / n_steps as f64;
    let mut inc = [0.0];
    let mut acc = 0.0;
    for step in 0..n_steps {
        let s = step as f64 * dt;
        sampler.draw_increment(&mut rng, dt, &mut inc);
        acc += beta(s) * noise.amplitude(0)(s) * inc[0];
    }
    acc
}

pub fn moment_oracle(
    superop: &Superoperator,
    beta: &RealFn,
    noise: &NoiseSpec,
    t: f64,
    n_steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MomentOracle> {
    check_single_channel(noise)?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    let s2 = superop * superop;
    let amp = noise.amplitude(0).clone();
    let beta_eff: RealFn = {
        let beta = beta.clone();
        std::sync::Arc::new(move |s| beta(s) * amp(s))
    };
    let k = moment_variance(&beta_eff, noise, t);
    let analytic = s2.exp(-0.5 * k);
    let m = superop.matrix();
    let n = m.nrows();
    let mc = estimate_many(n_samples, seed, (n, n), 1, |i| {
        let a = ito_scalar(beta, noise, t, n_steps, seed, i);
        vec![expm(&(m * (-IM * a)))]
    })?
    .remove(0);
    Ok(MomentOracle { mc, analytic })
}

/// One moment `𝔐_n = E[𝔄ⁿ]`: Monte Carlo estimate next to the closed form
/// `(2k)!/(2ᵏ k!) 𝔎ᵏ` for `n = 2k` and `0` for odd `n`.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub order: u32,
    pub mc: MCEstimate,
    pub analytic: CMatrix,
}

pub fn moment_estimates(
    superop: &Superoperator,
    beta: &RealFn,
    noise: &NoiseSpec,
    t: f64,
    n_steps: usize,
    orders: &[u32],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check_single_channel(noise)?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    let m = superop.matrix().clone();
    let n = m.nrows();
    let amp = noise.amplitude(0).clone();
    let beta_eff: RealFn = {
        let beta = beta.clone();
        std::sync::Arc::new(move |s| beta(s) * amp(s))
    };
    let kappa = moment_variance(&beta_eff, noise, t);
    let s2 = &m * &m;
    let power = |base: &CMatrix, p: u32| (0..p).fold(CMatrix::identity(n, n), |acc, _| acc * base);
    let mc = estimate_many(n_samples, seed, (n, n), orders.len(), |i| {
        let a = ito_scalar(beta, noise, t, n_steps, seed, i);
        let am = &m * Complex64::from(a);
        orders.iter().map(|&p| power(&am, p)).collect()
    })?;
    Ok(orders
        .iter()
        .zip(mc)
        .map(|(&order, mc)| {
            let analytic = if order % 2 == 1 {
                CMatrix::zeros(n, n)
            } else {
                let k = order / 2;
                // (2k)!/(2^k k!) = (2k−1)!!
                let double_factorial: f64 = (1..=k).map(|j| (2 * j - 1) as f64).product();
                power(&s2, k) * Complex64::from(double_factorial * kappa.powi(k as i32))
            };
            MomentEstimate { order, mc, analytic }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{commutator_superop, max_abs, pauli};
    use std::sync::Arc;

    fn unitarity_error(u: &CMatrix) -> f64 {
        let d = u.nrows();
        max_abs(&(u.adjoint() * u - CMatrix::identity(d, d)))
    }

    #[test]
    fn zero_diffusion_is_unitary_evolution() {
        let sd = SpectralDecomposition::from_energies(&[0.2, -0.7, 1.5]);
        let h = sd.reconstruct();
        let model = TrajectoryModel::global_white_noise(sd, 0.0, 1.3, 50).unwrap();
        let u = sample_unitary(&model, 9, 4);
        let want = matrix_exponential(&h, Complex64::new(0.0, -1.3)).unwrap();
        assert!(max_abs(&(u - want)) < 1e-12);

        let model = TrajectoryModel::time_ordered_qubit(0.8, NoiseSpec::two_channel(0.0, 0.0, 0.0).unwrap(), 1.3, 400).unwrap();
        let u = sample_unitary(&model, 1, 2);
        let want = matrix_exponential(&pauli::z(), Complex64::new(0.0, -0.8 * 1.3)).unwrap();
        assert!(max_abs(&(u - want)) < 1e-12);
    }

    #[test]
    fn sampled_unitaries_are_unitary() {
        let sd = SpectralDecomposition::from_energies(&[0.0, 1.0, 2.5, -1.0]);
        let model = TrajectoryModel::uncorrelated_kicks(sd, 1.5, 2.0, 64).unwrap();
        for i in 0..20 {
            assert!(unitarity_error(&sample_unitary(&model, 77, i)) < 1e-12);
        }
        let model = TrajectoryModel::time_ordered_qubit(0.0, NoiseSpec::two_channel(1.0, 1.0, 0.0).unwrap(), 0.5, 500).unwrap();
        for i in 0..5 {
            assert!(unitarity_error(&sample_unitary(&model, 3, i)) < 1e-10);
        }
    }

    #[test]
    fn pauli_rotation_matches_exponential() {
        let (nx, ny, nz) = (0.3, -0.45, 0.1);
        let h = pauli::x().scale(nx) + pauli::y().scale(ny) + pauli::z().scale(nz);
        let want = matrix_exponential(&h, Complex64::new(0.0, -1.0)).unwrap();
        let got = Mat2::pauli_rotation(nx, ny, nz).to_matrix();
        assert!(max_abs(&(got - want)) < 1e-15);
    }

    #[test]
    fn zero_diffusion_average_has_zero_error() {
        let sd = SpectralDecomposition::from_energies(&[0.0, 1.0]);
        let model = TrajectoryModel::global_white_noise(sd, 0.0, 1.0, 10).unwrap();
        let rho = DensityOperator::uniform_superposition(2);
        let est = mc_average(&model, &rho, 16, 0).unwrap();
        assert!(est.stderr_re.iter().all(|&x| x < 1e-15));
        let u = matrix_exponential(&pauli::z().scale(-0.5), Complex64::new(0.0, -1.0)).unwrap();
        let want = &u * rho.matrix() * u.adjoint();
        assert!(max_abs(&(est.mean - want)) < 1e-14);
        assert!(mc_average(&model, &rho, 1, 0).is_err());
    }

    #[test]
    fn checkpoints_share_trajectories() {
        let sd = SpectralDecomposition::from_energies(&[0.0, 1.0]);
        let model = TrajectoryModel::global_white_noise(sd, 1.0, 1.0, 40).unwrap();
        let all = model.sample_unitaries_at(5, 3, &[0, 10, 40]);
        assert!(max_abs(&(&all[0] - CMatrix::identity(2, 2))) == 0.0);
        assert_eq!(all[2], sample_unitary(&model, 5, 3));
        let rho = DensityOperator::uniform_superposition(2);
        let est = mc_average_at(&model, &rho, &[40, 10], 64, 2).unwrap();
        assert_eq!(est[0], mc_average(&model, &rho, 64, 2).unwrap());
    }

    #[test]
    fn scalar_moment_oracle_trivial_beta() {
        let one = Superoperator::identity(1);
        let zero: RealFn = Arc::new(|_| 0.0);
        let o = moment_oracle(&one, &zero, &NoiseSpec::standard(1), 1.0, 1, 32, 0).unwrap();
        assert!(max_abs(&(o.mc.mean - CMatrix::identity(1, 1))) == 0.0);
        assert!(max_abs(&(o.analytic.matrix() - CMatrix::identity(1, 1))) == 0.0);
    }

    #[test]
    fn commutator_oracle_closed_form() {
        let s = commutator_superop(&pauli::z()).unwrap();
        let beta: RealFn = Arc::new(|_| 1.0);
        let o = moment_oracle(&s, &beta, &NoiseSpec::standard(1), 1.0, 1, 64, 0).unwrap();
        let coh = o.analytic.apply(&crate::operator::basis_element(2, 0, 1)).unwrap();
        assert!((coh[(0, 1)].re - (-2.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn general_time_ordering_matches_qubit_fast_path() {
        let noise = NoiseSpec::two_channel(1.0, 0.5, 0.3).unwrap();
        let fast = TrajectoryModel::time_ordered_qubit(0.7, noise.clone(), 1.0, 200).unwrap();
        let general = TrajectoryModel::new(
            TrajectoryKind::TimeOrdered {
                hamiltonian: HermitianOperator::new(pauli::z().scale(0.7)).unwrap(),
                couplings: vec![HermitianOperator::new(pauli::x()).unwrap(), HermitianOperator::new(pauli::y()).unwrap()],
                noise,
            },
            1.0,
            200,
        )
        .unwrap();
        for i in 0..4 {
            assert!(max_abs(&(sample_unitary(&fast, 8, i) - sample_unitary(&general, 8, i))) < 1e-12);
        }
    }
}
