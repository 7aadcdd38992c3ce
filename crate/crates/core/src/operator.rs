//! Dense complex linear algebra: Hermitian spectral decompositions, matrix
//! exponentials, column-stacked superoperators, Choi matrices and partial traces.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const IM: Complex64 = Complex64::new(0.0, 1.0);

/// Eigenvalues closer than this are merged into one projector by default.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-12;

/// Single-qubit operators in the `σ_z = diag(1, −1)` basis.
pub mod pauli {
    use super::CMatrix;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub fn identity() -> CMatrix {
        CMatrix::identity(2, 2)
    }

    pub fn x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    pub fn y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
    }

    pub fn z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
    }

    /// σ_+ = (σ_x + iσ_y)/2 = |0⟩⟨1|.
    pub fn plus() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)])
    }

    /// σ_− = (σ_x − iσ_y)/2 = |1⟩⟨0|.
    pub fn minus() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(1., 0.), c(0., 0.)])
    }
}

pub(crate) fn ensure_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |A − A†|` entrywise.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_op(m: &CMatrix) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec_op(v: &DVector<Complex64>, dim: usize) -> CMatrix {
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// `|i⟩⟨j|` in dimension `dim`.
pub fn basis_element(dim: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(i, j)] = ONE;
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let dim = ensure_square(&matrix)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("operator dimension must be >= 1".into()));
        }
        let deviation = hermiticity_error(&matrix);
        if deviation > HERMITIAN_TOL * max_abs(&matrix).max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self(matrix))
    }

    pub fn from_real_diagonal(energies: &[f64]) -> Self {
        let diag = DVector::from_iterator(energies.len(), energies.iter().map(|&e| Complex64::from(e)));
        Self(CMatrix::from_diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }
}

/// `H = Σ_k e_k P_k` with ascending, pairwise distinct eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    projectors: Vec<CMatrix>,
    multiplicities: Vec<usize>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// Number of distinct levels.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].nrows()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.spectral_sum(|e| Complex64::from(e))
    }

    /// `Σ_k f(e_k) P_k`.
    pub fn spectral_sum(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let d = self.dim();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(CMatrix::zeros(d, d), |acc, (&e, p)| acc + p * f(e))
    }

    /// `U(t) = Σ_k e^{−i e_k t} P_k`.
    pub fn evolution_operator(&self, t: f64) -> CMatrix {
        self.spectral_sum(|e| (-IM * e * t).exp())
    }

    /// `Σ_k e^{−i φ_k} P_k` for one phase per level.
    pub fn phase_operator(&self, phases: &[f64]) -> CMatrix {
        let d = self.dim();
        phases
            .iter()
            .zip(&self.projectors)
            .fold(CMatrix::zeros(d, d), |acc, (&phi, p)| acc + p * (-IM * phi).exp())
    }
}

pub fn spectral_decompose(op: &HermitianOperator, degeneracy_tol: f64) -> SpectralDecomposition {
    let d = op.dim();
    let sym = (op.matrix() + op.matrix().adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut eigenvalues = Vec::new();
    let mut projectors: Vec<CMatrix> = Vec::new();
    let mut multiplicities = Vec::new();
    let mut sum_in_group = 0.0;
    let mut last = f64::NEG_INFINITY;
    for idx in order {
        let lambda = eig.eigenvalues[idx];
        let v = eig.eigenvectors.column(idx);
        let outer = &v * v.adjoint();
        if lambda - last < degeneracy_tol && !projectors.is_empty() {
            let k = projectors.len() - 1;
            projectors[k] += outer;
            multiplicities[k] += 1;
            sum_in_group += lambda;
            eigenvalues[k] = sum_in_group / multiplicities[k] as f64;
        } else {
            projectors.push(outer);
            multiplicities.push(1);
            eigenvalues.push(lambda);
            sum_in_group = lambda;
        }
        last = lambda;
    }
    SpectralDecomposition {
        eigenvalues,
        projectors,
        multiplicities,
    }
}

impl SpectralDecomposition {
    /// Decomposition of `diag(energies)`, merging equal energies.
    pub fn from_energies(energies: &[f64]) -> Self {
        spectral_decompose(&HermitianOperator::from_real_diagonal(energies), DEFAULT_DEGENERACY_TOL)
    }
}

/// `exp(scale · A)`.
///
/// Hermitian `A` with purely imaginary `scale` goes through the eigenbasis so
/// the result is unitary to rounding; everything else uses scaling and squaring.
pub fn matrix_exponential(a: &CMatrix, scale: Complex64) -> Result<CMatrix> {
    let d = ensure_square(a)?;
    if d == 0 {
        return Ok(a.clone());
    }
    if scale.re == 0.0 && hermiticity_error(a) <= HERMITIAN_TOL * max_abs(a).max(1.0) {
        let sym = (a + a.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        let v = &eig.eigenvectors;
        let phases = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| (scale * l).exp()));
        return Ok(v * CMatrix::from_diagonal(&phases) * v.adjoint());
    }
    Ok(expm(&(a * scale)))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Degree-13 Padé approximant with scaling and squaring.
pub fn expm(a: &CMatrix) -> CMatrix {
    let d = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale(0.5f64.powi(s));
    let id = CMatrix::identity(d, d);
    let b = |k: usize| Complex64::from(PADE13[k]);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Linear map on `d×d` operators stored as a `d²×d²` matrix acting on
/// column-stacked operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn from_matrix(dim: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: CMatrix::zeros(dim * dim, dim * dim),
        }
    }

    /// Tomographs `f` on the `|i⟩⟨j|` basis.
    pub fn from_map(dim: usize, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let n = dim * dim;
        let mut matrix = CMatrix::zeros(n, n);
        for j in 0..dim {
            for i in 0..dim {
                let image = f(&basis_element(dim, i, j));
                matrix.set_column(i + j * dim, &vec_op(&image));
            }
        }
        Self { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.nrows() != self.dim || rho.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: rho.nrows(),
            });
        }
        Ok(unvec_op(&(&self.matrix * vec_op(rho)), self.dim))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Superoperator) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// `exp(t · S)`.
    pub fn exp(&self, t: f64) -> Self {
        Self {
            dim: self.dim,
            matrix: expm(&self.matrix.scale(t)),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            matrix: self.matrix.scale(c),
        }
    }

    pub fn scale_complex(&self, c: Complex64) -> Self {
        Self {
            dim: self.dim,
            matrix: &self.matrix * c,
        }
    }

    /// Largest entrywise modulus of the matrix representation.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    fn check_dim(&self, other: &Superoperator) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

impl Add for &Superoperator {
    type Output = Superoperator;

    fn add(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.dim, rhs.dim, "superoperator dimension mismatch");
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl Add for Superoperator {
    type Output = Superoperator;

    fn add(self, rhs: Superoperator) -> Superoperator {
        &self + &rhs
    }
}

impl Sub for &Superoperator {
    type Output = Superoperator;

    fn sub(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.dim, rhs.dim, "superoperator dimension mismatch");
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Mul for &Superoperator {
    type Output = Superoperator;

    fn mul(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.dim, rhs.dim, "superoperator dimension mismatch");
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl Neg for Superoperator {
    type Output = Superoperator;

    fn neg(self) -> Superoperator {
        self.scale(-1.0)
    }
}

/// `[A, ·]`.
pub fn commutator_superop(a: &CMatrix) -> Result<Superoperator> {
    let d = ensure_square(a)?;
    let id = CMatrix::identity(d, d);
    Superoperator::from_matrix(d, kron(&id, a) - kron(&a.transpose(), &id))
}

/// `ρ ↦ L ρ R`.
pub fn sandwich_superop(left: &CMatrix, right: &CMatrix) -> Result<Superoperator> {
    let d = ensure_square(left)?;
    let dr = ensure_square(right)?;
    if d != dr {
        return Err(Error::DimensionMismatch { expected: d, found: dr });
    }
    Superoperator::from_matrix(d, kron(&right.transpose(), left))
}

/// `Σ_ij |i⟩⟨j| ⊗ S(|i⟩⟨j|)`.
pub fn choi_matrix(s: &Superoperator) -> CMatrix {
    let d = s.dim;
    let m = &s.matrix;
    CMatrix::from_fn(d * d, d * d, |r, c| {
        let (i, a) = (r / d, r % d);
        let (j, b) = (c / d, c % d);
        m[(a + b * d, i + j * d)]
    })
}

/// Partial trace of an arbitrary operator on `⊗ dims`, keeping the factors in
/// `keep` (in their original order).
pub fn partial_trace_operator(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    let d = ensure_square(m)?;
    if dims.is_empty() || total != d {
        return Err(Error::DimensionMismatch { expected: d, found: total });
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if let Some(&bad) = kept.iter().find(|&&k| k >= dims.len()) {
        return Err(Error::InvalidArgument(format!(
            "factor index {bad} out of range for {} factors",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();

    let split = |mut idx: usize| -> Vec<usize> {
        let mut digits = vec![0; dims.len()];
        for k in (0..dims.len()).rev() {
            digits[k] = idx % dims[k];
            idx /= dims[k];
        }
        digits
    };
    let join = |digits: &[usize], which: &[usize]| -> usize {
        which.iter().fold(0, |acc, &k| acc * dims[k] + digits[k])
    };

    let dk: usize = kept.iter().map(|&k| dims[k]).product();
    let mut out = CMatrix::zeros(dk, dk);
    let digits: Vec<Vec<usize>> = (0..d).map(split).collect();
    for r in 0..d {
        for c in 0..d {
            if traced.iter().all(|&k| digits[r][k] == digits[c][k]) {
                out[(join(&digits[r], &kept), join(&digits[c], &kept))] += m[(r, c)];
            }
        }
    }
    Ok(out)
}

pub fn partial_trace(rho: &DensityOperator, dims: &[usize], keep: &[usize]) -> Result<DensityOperator> {
    partial_trace_operator(rho.matrix(), dims, keep).map(DensityOperator::new_unchecked)
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator(CMatrix);

impl DensityOperator {
    pub const TRACE_TOL: f64 = 1e-12;
    pub const HERMITIAN_TOL: f64 = 1e-12;
    pub const POSITIVITY_TOL: f64 = 1e-10;

    pub fn new(matrix: CMatrix) -> Result<Self> {
        let dim = ensure_square(&matrix)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("density operator dimension must be >= 1".into()));
        }
        let deviation = hermiticity_error(&matrix);
        if deviation > Self::HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let tr = trace(&matrix);
        if (tr - ONE).norm() > Self::TRACE_TOL {
            return Err(Error::BadTrace { trace: tr.re });
        }
        let state = Self(matrix);
        let min_eigenvalue = state.min_eigenvalue();
        if min_eigenvalue < -Self::POSITIVITY_TOL {
            return Err(Error::NotPositive {
                what: "density operator",
                min_eigenvalue,
            });
        }
        Ok(state)
    }

    /// Wraps a matrix without validation, for propagated outputs whose
    /// invariants are checked separately.
    pub fn new_unchecked(matrix: CMatrix) -> Self {
        Self(matrix)
    }

    pub fn pure(ket: &DVector<Complex64>) -> Result<Self> {
        let norm = ket.norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let v = ket.unscale(norm);
        Self::new(&v * v.adjoint())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim).unscale(dim as f64))
    }

    /// `|ψ⟩ = (1/√d) Σ_k |k⟩`.
    pub fn uniform_superposition(dim: usize) -> Self {
        Self(CMatrix::from_element(dim, dim, Complex64::from(1.0 / dim as f64)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn trace_error(&self) -> f64 {
        (trace(&self.0) - ONE).norm()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.0)[0]
    }

    pub fn kron(&self, other: &DensityOperator) -> DensityOperator {
        Self(kron(&self.0, &other.0))
    }
}
