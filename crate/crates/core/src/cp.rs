//! Complete-positivity audits and the tripartite correlated-environment
//! construction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::path_rng;
use crate::operator::{
    choi_matrix, ensure_square, hermitian_eigenvalues, hermiticity_error, kron, max_abs, partial_trace_operator,
    trace, CMatrix, DensityOperator, Superoperator, IM, ONE,
};

pub const DEFAULT_CP_TOL: f64 = 1e-9;
pub const TP_TOL: f64 = 1e-10;
const UNITARY_TOL: f64 = 1e-10;

/// Generalized Gell-Mann matrices of `SU(n)`, normalized to
/// `Tr(σ_i σ_j) = 2δ_ij`: symmetric pairs, antisymmetric pairs, then diagonals.
/// For `n = 2` this is `(σ_x, σ_y, σ_z)`.
pub fn gell_mann(n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(n * n - 1);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = ONE;
        m[(k, j)] = ONE;
        out.push(m);
    }
    for &(j, k) in &pairs {
        let mut m = CMatrix::zeros(n, n);
        m[(j, k)] = -IM;
        m[(k, j)] = IM;
        out.push(m);
    }
    for l in 1..n {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = CMatrix::zeros(n, n);
        for j in 0..l {
            m[(j, j)] = Complex64::from(norm);
        }
        m[(l, l)] = Complex64::from(-(l as f64) * norm);
        out.push(m);
    }
    out
}

/// Checks that `basis` holds `n² − 1` traceless Hermitian matrices with
/// `Tr(σ_i σ_j) = 2δ_ij`.
pub fn check_generator_basis(basis: &[CMatrix], n: usize) -> Result<()> {
    if basis.len() != n * n - 1 {
        return Err(Error::DimensionMismatch {
            expected: n * n - 1,
            found: basis.len(),
        });
    }
    for (i, a) in basis.iter().enumerate() {
        if ensure_square(a)? != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.nrows() });
        }
        let deviation = hermiticity_error(a);
        if deviation > 1e-12 {
            return Err(Error::NotHermitian { deviation });
        }
        if trace(a).norm() > 1e-12 {
            return Err(Error::InvalidArgument(format!("generator {i} is not traceless")));
        }
        for (j, b) in basis.iter().enumerate().skip(i) {
            let want = if i == j { 2.0 } else { 0.0 };
            if (trace(&(a * b)) - Complex64::from(want)).norm() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "generators {i}, {j} violate Tr(σ_i σ_j) = 2δ_ij"
                )));
            }
        }
    }
    Ok(())
}

/// Bloch-like expansion coefficients of a state on `S ⊗ 1 ⊗ 2`:
///
/// `ρ = [𝕀 + α_i σ_i⊗𝕀⊗𝕀 + β_j 𝕀⊗σ_j⊗𝕀 + γ_k 𝕀⊗𝕀⊗σ_k + δ_ij σ_i⊗σ_j⊗𝕀
///      + ε_ik σ_i⊗𝕀⊗σ_k + η_jk 𝕀⊗σ_j⊗σ_k + ν_ijk σ_i⊗σ_j⊗σ_k] / (N_S N_1 N_2)`.
///
/// `nu` is stored flat with index `(i·(N_1²−1) + j)·(N_2²−1) + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripartiteCoefficients {
    pub dims: (usize, usize, usize),
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: DMatrix<f64>,
    pub epsilon: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub nu: Vec<f64>,
}

impl TripartiteCoefficients {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        let (a, b, c) = generator_counts(dims);
        Self {
            dims,
            alpha: vec![0.0; a],
            beta: vec![0.0; b],
            gamma: vec![0.0; c],
            delta: DMatrix::zeros(a, b),
            epsilon: DMatrix::zeros(a, c),
            eta: DMatrix::zeros(b, c),
            nu: vec![0.0; a * b * c],
        }
    }

    /// Coefficients of `ρ_S ⊗ ρ_12` from barred quantities:
    /// `δ = ᾱβ̄ᵀ`, `ε = ᾱγ̄ᵀ`, `η = η̄`, `ν_ijk = ᾱ_i η̄_jk`.
    pub fn factorized(dims: (usize, usize, usize), alpha: &[f64], beta: &[f64], gamma: &[f64], eta: &DMatrix<f64>) -> Result<Self> {
        let mut c = Self::zeros(dims);
        c.alpha = alpha.to_vec();
        c.beta = beta.to_vec();
        c.gamma = gamma.to_vec();
        c.eta = eta.clone();
        c.check_shapes()?;
        let (na, nb, nc) = generator_counts(dims);
        c.delta = DMatrix::from_fn(na, nb, |i, j| alpha[i] * beta[j]);
        c.epsilon = DMatrix::from_fn(na, nc, |i, k| alpha[i] * gamma[k]);
        for i in 0..na {
            for j in 0..nb {
                for k in 0..nc {
                    c.nu[(i * nb + j) * nc + k] = alpha[i] * eta[(j, k)];
                }
            }
        }
        Ok(c)
    }

    /// Coefficients of the product `ρ_S ⊗ ρ_1 ⊗ ρ_2`.
    pub fn product(dims: (usize, usize, usize), alpha: &[f64], beta: &[f64], gamma: &[f64]) -> Result<Self> {
        let (_, nb, nc) = generator_counts(dims);
        let eta = DMatrix::from_fn(nb, nc, |j, k| beta.get(j).copied().unwrap_or(0.0) * gamma.get(k).copied().unwrap_or(0.0));
        Self::factorized(dims, alpha, beta, gamma, &eta)
    }

    pub fn nu(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, nb, nc) = generator_counts(self.dims);
        self.nu[(i * nb + j) * nc + k]
    }

    pub fn set_nu(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let (_, nb, nc) = generator_counts(self.dims);
        self.nu[(i * nb + j) * nc + k] = value;
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (na, nb, nc) = generator_counts(self.dims);
        let lens = [
            (self.alpha.len(), na),
            (self.beta.len(), nb),
            (self.gamma.len(), nc),
            (self.nu.len(), na * nb * nc),
        ];
        for (found, expected) in lens {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        let mats = [(&self.delta, (na, nb)), (&self.epsilon, (na, nc)), (&self.eta, (nb, nc))];
        for (m, shape) in mats {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    found: m.nrows() * m.ncols(),
                });
            }
        }
        Ok(())
    }

    /// True when every coefficient involving the system (`α, δ, ε, ν`) is zero.
    pub fn system_part_is_zero(&self) -> bool {
        self.alpha.iter().all(|&x| x == 0.0)
            && self.delta.iter().all(|&x| x == 0.0)
            && self.epsilon.iter().all(|&x| x == 0.0)
            && self.nu.iter().all(|&x| x == 0.0)
    }

    fn total_dim(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }
}

fn generator_counts(dims: (usize, usize, usize)) -> (usize, usize, usize) {
    (dims.0 * dims.0 - 1, dims.1 * dims.1 - 1, dims.2 * dims.2 - 1)
}

/// The expansion evaluated with the given generator sets, without the PSD check.
pub fn tripartite_operator(coeffs: &TripartiteCoefficients, bases: [&[CMatrix]; 3]) -> Result<CMatrix> {
    coeffs.check_shapes()?;
    let (ns, n1, n2) = coeffs.dims;
    check_generator_basis(bases[0], ns)?;
    check_generator_basis(bases[1], n1)?;
    check_generator_basis(bases[2], n2)?;
    let (is, i1, i2) = (CMatrix::identity(ns, ns), CMatrix::identity(n1, n1), CMatrix::identity(n2, n2));
    let k3 = |a: &CMatrix, b: &CMatrix, c: &CMatrix| kron(&kron(a, b), c);
    let (s, e1, e2) = (bases[0], bases[1], bases[2]);
    let mut m = CMatrix::identity(coeffs.total_dim(), coeffs.total_dim());
    let mut add = |w: f64, op: CMatrix| {
        if w != 0.0 {
            m += op * Complex64::from(w);
        }
    };
    for (i, &a) in coeffs.alpha.iter().enumerate() {
        add(a, k3(&s[i], &i1, &i2));
    }
    for (j, &b) in coeffs.beta.iter().enumerate() {
        add(b, k3(&is, &e1[j], &i2));
    }
    for (k, &g) in coeffs.gamma.iter().enumerate() {
        add(g, k3(&is, &i1, &e2[k]));
    }
    for i in 0..s.len() {
        for j in 0..e1.len() {
            add(coeffs.delta[(i, j)], k3(&s[i], &e1[j], &i2));
        }
        for k in 0..e2.len() {
            add(coeffs.epsilon[(i, k)], k3(&s[i], &i1, &e2[k]));
        }
    }
    for j in 0..e1.len() {
        for k in 0..e2.len() {
            add(coeffs.eta[(j, k)], k3(&is, &e1[j], &e2[k]));
        }
    }
    for i in 0..s.len() {
        for j in 0..e1.len() {
            for k in 0..e2.len() {
                add(coeffs.nu(i, j, k), k3(&s[i], &e1[j], &e2[k]));
            }
        }
    }
    Ok(m / Complex64::from(coeffs.total_dim() as f64))
}

/// Joint state from the expansion with explicit generator sets; rejects
/// coefficients whose operator is not PSD.
pub fn build_tripartite_with(coeffs: &TripartiteCoefficients, bases: [&[CMatrix]; 3]) -> Result<DensityOperator> {
    DensityOperator::new(tripartite_operator(coeffs, bases)?).map_err(|e| match e {
        Error::NotPositive { min_eigenvalue, .. } => Error::NotPositive {
            what: "tripartite state",
            min_eigenvalue,
        },
        other => other,
    })
}

/// Joint state from the expansion in the Gell-Mann bases.
pub fn build_tripartite(coeffs: &TripartiteCoefficients) -> Result<DensityOperator> {
    let (ns, n1, n2) = coeffs.dims;
    let (gs, g1, g2) = (gell_mann(ns), gell_mann(n1), gell_mann(n2));
    build_tripartite_with(coeffs, [&gs, &g1, &g2])
}

/// Correlation coefficients relative to the product of the marginals,
/// `δ' = (δ − αβᵀ)/N`, `ε' = (ε − αγᵀ)/N`, `η' = (η − βγᵀ)/N`,
/// `ν'_ijk = (ν_ijk − α_iβ_jγ_k)/N`, `N = N_S N_1 N_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimedCoefficients {
    pub delta: DMatrix<f64>,
    pub epsilon: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub nu: Vec<f64>,
}

impl PrimedCoefficients {
    pub fn max_abs(&self) -> f64 {
        self.delta
            .iter()
            .chain(self.epsilon.iter())
            .chain(self.eta.iter())
            .chain(self.nu.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn primed_coefficients(coeffs: &TripartiteCoefficients) -> PrimedCoefficients {
    let n = coeffs.total_dim() as f64;
    let (na, nb, nc) = generator_counts(coeffs.dims);
    let (a, b, g) = (&coeffs.alpha, &coeffs.beta, &coeffs.gamma);
    let mut nu = vec![0.0; na * nb * nc];
    for i in 0..na {
        for j in 0..nb {
            for k in 0..nc {
                nu[(i * nb + j) * nc + k] = (coeffs.nu(i, j, k) - a[i] * b[j] * g[k]) / n;
            }
        }
    }
    PrimedCoefficients {
        delta: DMatrix::from_fn(na, nb, |i, j| (coeffs.delta[(i, j)] - a[i] * b[j]) / n),
        epsilon: DMatrix::from_fn(na, nc, |i, k| (coeffs.epsilon[(i, k)] - a[i] * g[k]) / n),
        eta: DMatrix::from_fn(nb, nc, |j, k| (coeffs.eta[(j, k)] - b[j] * g[k]) / n),
        nu,
    }
}

/// Affine reduced dynamics `ρ_S ↦ L(ρ_S) + Tr(ρ_S)·C`.
#[derive(Debug, Clone)]
pub struct ReducedMap {
    pub linear: Superoperator,
    pub offset: CMatrix,
}

impl ReducedMap {
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        Ok(self.linear.apply(rho)? + &self.offset * trace(rho))
    }

    /// `X ↦ L(X) + Tr(X)·C` as one linear map, the object whose Choi matrix
    /// decides complete positivity.
    pub fn as_superoperator(&self) -> Superoperator {
        let d = self.linear.dim();
        let offset = Superoperator::from_map(d, |x| &self.offset * trace(x));
        &self.linear + &offset
    }
}

fn check_unitary(u: &CMatrix, dim: usize) -> Result<()> {
    let d = ensure_square(u)?;
    if d != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: d });
    }
    let err = max_abs(&(u.adjoint() * u - CMatrix::identity(d, d)));
    if err > UNITARY_TOL {
        return Err(Error::InvalidArgument(format!("operator is not unitary (deviation {err:.3e})")));
    }
    Ok(())
}

/// Tomographs `ρ_S ↦ Tr_12[U (ρ_S ⊗ ρ_1 ⊗ ρ_2 + η'_jk 𝕀⊗σ_j⊗σ_k) U†]` for an
/// environment described by `env` (system coefficients must vanish).
pub fn reduced_map_tomography(u: &CMatrix, env: &TripartiteCoefficients) -> Result<ReducedMap> {
    env.check_shapes()?;
    if !env.system_part_is_zero() {
        return Err(Error::InvalidArgument(
            "system-environment correlations (alpha, delta, epsilon, nu) must be zero".into(),
        ));
    }
    let (ns, n1, n2) = env.dims;
    check_unitary(u, ns * n1 * n2)?;
    // the joint state with a maximally mixed system must be physical
    build_tripartite(env)?;

    let (g1, g2) = (gell_mann(n1), gell_mann(n2));
    let bloch = |coef: &[f64], basis: &[CMatrix], n: usize| {
        coef.iter()
            .zip(basis)
            .fold(CMatrix::identity(n, n), |acc, (&c, s)| acc + s * Complex64::from(c))
            / Complex64::from(n as f64)
    };
    let rho_env = kron(&bloch(&env.beta, &g1, n1), &bloch(&env.gamma, &g2, n2));
    let dims = [ns, n1, n2];
    let reduce = |joint: &CMatrix| partial_trace_operator(&(u * joint * u.adjoint()), &dims, &[0]);

    let linear = Superoperator::from_map(ns, |x| reduce(&kron(x, &rho_env)).expect("dimensions checked above"));

    let primed = primed_coefficients(env);
    let mut corr = CMatrix::zeros(n1 * n2, n1 * n2);
    for j in 0..g1.len() {
        for k in 0..g2.len() {
            let w = primed.eta[(j, k)];
            if w != 0.0 {
                corr += kron(&g1[j], &g2[k]) * Complex64::from(w);
            }
        }
    }
    let offset = reduce(&kron(&CMatrix::identity(ns, ns), &corr))?;
    Ok(ReducedMap { linear, offset })
}

/// Choi spectrum of a map with CP and TP verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiReport {
    pub min_eigenvalue: f64,
    pub eigenvalues: Vec<f64>,
    pub is_cp: bool,
    pub is_tp: bool,
    pub tol: f64,
}

pub fn cp_check(s: &Superoperator, tol: f64) -> ChoiReport {
    let eigenvalues = hermitian_eigenvalues(&choi_matrix(s));
    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0);
    ChoiReport {
        min_eigenvalue,
        eigenvalues,
        is_cp: min_eigenvalue >= -tol,
        is_tp: trace_preservation_error(s) <= TP_TOL,
        tol,
    }
}

/// `max_ij |Tr S(|i⟩⟨j|) − δ_ij|`.
pub fn trace_preservation_error(s: &Superoperator) -> f64 {
    let d = s.dim();
    let m = s.matrix();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let tr: Complex64 = (0..d).map(|a| m[(a + a * d, i + j * d)]).sum();
            let want = if i == j { ONE } else { Complex64::from(0.0) };
            worst = worst.max((tr - want).norm());
        }
    }
    worst
}

/// `n` logarithmically spaced points on `[t_min, t_max]`.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![t_max],
        _ => {
            let (a, b) = (t_min.ln(), t_max.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// [`cp_check`] over a parameter grid, evaluated in parallel.
pub fn cp_scan<F>(params: &[f64], tol: f64, map: F) -> Result<Vec<(f64, ChoiReport)>>
where
    F: Fn(f64) -> Result<Superoperator> + Sync,
{
    params
        .par_iter()
        .map(|&p| Ok((p, cp_check(&map(p)?, tol))))
        .collect()
}

/// Random environment coefficients (`β, γ, η` only) whose joint state is PSD,
/// drawn uniformly with every coefficient in `[−max_abs, max_abs]` and kept on
/// the first PSD draw.
pub fn sample_feasible_environment(
    dims: (usize, usize, usize),
    max_abs: f64,
    seed: u64,
    max_tries: usize,
) -> Result<TripartiteCoefficients> {
    let mut rng = path_rng(seed, 0);
    for _ in 0..max_tries {
        let mut c = TripartiteCoefficients::zeros(dims);
        for x in c.beta.iter_mut().chain(c.gamma.iter_mut()).chain(c.eta.iter_mut()) {
            *x = rng.random_range(-max_abs..=max_abs);
        }
        if build_tripartite(&c).is_ok() {
            return Ok(c);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no PSD environment found in {max_tries} draws"
    )))
}
