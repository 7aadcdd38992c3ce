//! Master-equation generators and their propagators.
//!
//! Every generator is stored as a sum `ℒ(t) = Σ_i w_i(t) A_i` of fixed
//! superoperators with scalar weights whose time integrals are known
//! (`t`, a quadratic variation `⟨η⟩_t`, or a drift `μ(t)`). When the `A_i`
//! mutually commute the propagator is the single exponential
//! `exp(Σ_i W_i(t) A_i)` with `W_i = ∫ w_i`; otherwise it is the time-ordered
//! product of midpoint exponentials.

use std::fmt;

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise::{derivative, QuadraticVariation, RealFn};
use crate::operator::{
    commutator_superop, max_abs, pauli, sandwich_superop, CMatrix, DensityOperator, HermitianOperator, Superoperator, IM,
};

const RATE_TOL: f64 = 1e-12;
const COMMUTE_TOL: f64 = 1e-12;

pub(crate) fn check_rates(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> Result<()> {
    let bad = !(gamma_x >= 0.0 && gamma_y >= 0.0)
        || gamma_xy * gamma_xy > gamma_x * gamma_y + RATE_TOL * (gamma_x * gamma_y).max(1.0);
    if bad {
        return Err(Error::RateInequality {
            gamma_x,
            gamma_y,
            gamma_xy,
        });
    }
    Ok(())
}

/// Which algebraic form of the qubit dissipator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QubitGeneratorForm {
    /// `L_xy + L_+ + L_− + D_xy` with the prefactors as published.
    #[default]
    Published,
    /// Short-time generator forced by Gaussian increments with covariance `Γ dt`.
    Moment,
}

#[derive(Clone)]
pub enum GeneratorSpec {
    /// `dρ/dt = −i[H,ρ] − (γ/2)[H,[H,ρ]]`.
    Pdme { hamiltonian: HermitianOperator, gamma: f64 },
    /// `dρ/dt = −i[H,ρ] − ½ Σ_i (d⟨η_i⟩_t/dt) [V_i,[V_i,ρ]]`, one independent
    /// process per Lindblad operator.
    SelfadjointLindblad {
        hamiltonian: HermitianOperator,
        lindblads: Vec<(HermitianOperator, QuadraticVariation)>,
    },
    /// `H₁ + λ(t)H₂` with `∫λ = μ(t) + ∫λ̃ dℬ`:
    /// `dρ/dt = −i[H₁,ρ] − i μ̇(t)[H₂,ρ] − ½ (d⟨·⟩_t/dt) [H₂,[H₂,ρ]]`.
    StochasticParameter {
        h1: HermitianOperator,
        h2: HermitianOperator,
        drift: RealFn,
        variation: QuadraticVariation,
    },
    /// Qubit in a random transverse field: `Λ̇(t)·G − iω₀[σ_z,·]`.
    QubitXY {
        omega0: f64,
        gamma_x: f64,
        gamma_y: f64,
        gamma_xy: f64,
        lambda: QuadraticVariation,
        form: QubitGeneratorForm,
    },
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pdme { hamiltonian, gamma } => f
                .debug_struct("Pdme")
                .field("hamiltonian", hamiltonian)
                .field("gamma", gamma)
                .finish(),
            Self::SelfadjointLindblad { hamiltonian, lindblads } => f
                .debug_struct("SelfadjointLindblad")
                .field("hamiltonian", hamiltonian)
                .field("n_lindblads", &lindblads.len())
                .finish(),
            Self::StochasticParameter { h1, h2, .. } => f
                .debug_struct("StochasticParameter")
                .field("h1", h1)
                .field("h2", h2)
                .finish_non_exhaustive(),
            Self::QubitXY {
                omega0,
                gamma_x,
                gamma_y,
                gamma_xy,
                form,
                ..
            } => f
                .debug_struct("QubitXY")
                .field("omega0", omega0)
                .field("gamma_x", gamma_x)
                .field("gamma_y", gamma_y)
                .field("gamma_xy", gamma_xy)
                .field("form", form)
                .finish_non_exhaustive(),
        }
    }
}

impl GeneratorSpec {
    /// Markovian qubit generator with `Λ(t) = t`.
    pub fn qubit_xy(omega0: f64, gamma_x: f64, gamma_y: f64, gamma_xy: f64, form: QubitGeneratorForm) -> Result<Self> {
        let spec = Self::QubitXY {
            omega0,
            gamma_x,
            gamma_y,
            gamma_xy,
            lambda: QuadraticVariation::linear(1.0),
            form,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn pdme(hamiltonian: HermitianOperator, gamma: f64) -> Result<Self> {
        let spec = Self::Pdme { hamiltonian, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Pdme { hamiltonian, .. } | Self::SelfadjointLindblad { hamiltonian, .. } => hamiltonian.dim(),
            Self::StochasticParameter { h1, .. } => h1.dim(),
            Self::QubitXY { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_origin = |qv: &QuadraticVariation| -> Result<()> {
            let v0 = qv.eval(0.0);
            if v0.abs() > RATE_TOL {
                return Err(Error::InvalidArgument(format!("quadratic variation must vanish at t=0, got {v0}")));
            }
            Ok(())
        };
        match self {
            Self::Pdme { gamma, .. } => {
                if !(*gamma >= 0.0) {
                    return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
                }
            }
            Self::SelfadjointLindblad { hamiltonian, lindblads } => {
                for (v, qv) in lindblads {
                    if v.dim() != hamiltonian.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: hamiltonian.dim(),
                            found: v.dim(),
                        });
                    }
                    check_origin(qv)?;
                }
            }
            Self::StochasticParameter { h1, h2, variation, .. } => {
                if h1.dim() != h2.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: h1.dim(),
                        found: h2.dim(),
                    });
                }
                check_origin(variation)?;
            }
            Self::QubitXY {
                gamma_x,
                gamma_y,
                gamma_xy,
                lambda,
                ..
            } => {
                check_rates(*gamma_x, *gamma_y, *gamma_xy)?;
                check_origin(lambda)?;
            }
        }
        Ok(())
    }

    /// Decomposes the generator into fixed superoperators and scalar weights.
    pub fn terms(&self) -> Result<GeneratorTerms> {
        self.validate()?;
        let d = self.dim();
        let hamiltonian_part = |h: &HermitianOperator| -> Result<Superoperator> {
            Ok(commutator_superop(h.matrix())?.scale_complex(-IM))
        };
        let double_commutator = |v: &HermitianOperator| -> Result<Superoperator> {
            let c = commutator_superop(v.matrix())?;
            Ok((&c * &c).scale(-0.5))
        };
        let mut terms = Vec::new();
        match self {
            Self::Pdme { hamiltonian, gamma } => {
                terms.push((hamiltonian_part(hamiltonian)?, Weight::Constant(1.0)));
                terms.push((double_commutator(hamiltonian)?, Weight::Constant(*gamma)));
            }
            Self::SelfadjointLindblad { hamiltonian, lindblads } => {
                terms.push((hamiltonian_part(hamiltonian)?, Weight::Constant(1.0)));
                for (v, qv) in lindblads {
                    terms.push((double_commutator(v)?, Weight::Variation(qv.clone())));
                }
            }
            Self::StochasticParameter {
                h1,
                h2,
                drift,
                variation,
            } => {
                terms.push((hamiltonian_part(h1)?, Weight::Constant(1.0)));
                terms.push((hamiltonian_part(h2)?, Weight::Drift(drift.clone())));
                terms.push((double_commutator(h2)?, Weight::Variation(variation.clone())));
            }
            Self::QubitXY {
                omega0,
                gamma_x,
                gamma_y,
                gamma_xy,
                lambda,
                form,
            } => {
                let rotation = commutator_superop(&pauli::z())?.scale_complex(-IM * *omega0);
                terms.push((rotation, Weight::Constant(1.0)));
                let dissipator = match form {
                    QubitGeneratorForm::Published => qubit_generators(*gamma_x, *gamma_y, *gamma_xy)?.sum(),
                    QubitGeneratorForm::Moment => qubit_generator_moment(*gamma_x, *gamma_y, *gamma_xy)?,
                };
                terms.push((dissipator, Weight::Variation(lambda.clone())));
            }
        }
        Ok(GeneratorTerms { dim: d, terms })
    }
}

/// Scalar weight `w(t)` of one generator term, with its integral `W(t) = ∫_0^t w`.
#[derive(Clone)]
pub enum Weight {
    Constant(f64),
    Variation(QuadraticVariation),
    Drift(RealFn),
}

impl Weight {
    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Variation(qv) => qv.rate(t),
            Self::Drift(mu) => derivative(&**mu, t),
        }
    }

    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match self {
            Self::Constant(c) => c * (t1 - t0),
            Self::Variation(qv) => qv.eval(t1) - qv.eval(t0),
            Self::Drift(mu) => mu(t1) - mu(t0),
        }
    }
}

/// `ℒ(t) = Σ_i w_i(t) A_i`.
#[derive(Clone)]
pub struct GeneratorTerms {
    dim: usize,
    terms: Vec<(Superoperator, Weight)>,
}

impl GeneratorTerms {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: f64) -> Superoperator {
        self.terms
            .iter()
            .fold(Superoperator::zero(self.dim), |acc, (a, w)| &acc + &a.scale(w.rate(t)))
    }

    /// True when all fixed parts commute, so the propagator is one exponential.
    pub fn is_commuting(&self) -> bool {
        for (i, (a, _)) in self.terms.iter().enumerate() {
            for (b, _) in &self.terms[i + 1..] {
                let ab = a.matrix() * b.matrix();
                let ba = b.matrix() * a.matrix();
                let scale = (a.max_abs() * b.max_abs()).max(1.0);
                if max_abs(&(ab - ba)) > COMMUTE_TOL * scale {
                    return false;
                }
            }
        }
        true
    }

    fn integrated(&self, t0: f64, t1: f64) -> Superoperator {
        self.terms
            .iter()
            .fold(Superoperator::zero(self.dim), |acc, (a, w)| &acc + &a.scale(w.integral(t0, t1)))
    }

    /// Propagator from 0 to `t`.
    pub fn propagator(&self, t: f64, n_steps: usize) -> Result<Superoperator> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(Superoperator::identity(self.dim));
        }
        self.check_monotone(t, n_steps)?;
        if self.is_commuting() {
            return Ok(self.integrated(0.0, t).exp(1.0));
        }
        let dt = t / n_steps as f64;
        let mut acc = Superoperator::identity(self.dim);
        for k in 0..n_steps {
            let mid = (k as f64 + 0.5) * dt;
            acc = &self.at(mid).exp(dt) * &acc;
        }
        Ok(acc)
    }

    fn check_monotone(&self, t: f64, n_steps: usize) -> Result<()> {
        for (_, w) in &self.terms {
            let Weight::Variation(qv) = w else { continue };
            let mut prev = qv.eval(0.0);
            let mut warned = false;
            for k in 1..=n_steps {
                let s = t * k as f64 / n_steps as f64;
                let v = qv.eval(s);
                if v < prev - RATE_TOL * prev.abs().max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic variation decreases between t={} and t={s}",
                        t * (k - 1) as f64 / n_steps as f64
                    )));
                }
                if !warned && qv.rate(s) < 0.0 {
                    warn!("negative instantaneous rate at t={s}");
                    warned = true;
                }
                prev = v;
            }
        }
        Ok(())
    }
}

pub fn build_generator(spec: &GeneratorSpec, t: f64) -> Result<Superoperator> {
    let terms = spec.terms()?;
    for (_, w) in &terms.terms {
        if w.rate(t) < 0.0 {
            warn!("negative instantaneous rate {} at t={t}", w.rate(t));
        }
    }
    Ok(terms.at(t))
}

/// `exp` of the integrated generator from 0 to `t` (see module docs).
pub fn propagator(spec: &GeneratorSpec, t: f64, n_steps: usize) -> Result<Superoperator> {
    spec.terms()?.propagator(t, n_steps)
}

pub fn propagate(spec: &GeneratorSpec, rho0: &DensityOperator, t: f64, n_steps: usize) -> Result<DensityOperator> {
    if rho0.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: rho0.dim(),
        });
    }
    let map = propagator(spec, t, n_steps)?;
    Ok(DensityOperator::new_unchecked(map.apply(rho0.matrix())?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitGenerators {
    pub l_xy: Superoperator,
    pub l_plus: Superoperator,
    pub l_minus: Superoperator,
    pub d_xy: Superoperator,
}

impl QubitGenerators {
    pub fn sum(&self) -> Superoperator {
        &(&(&self.l_xy + &self.l_plus) + &self.l_minus) + &self.d_xy
    }
}

fn double_comm(a: &CMatrix) -> Superoperator {
    let c = commutator_superop(a).expect("square");
    &c * &c
}

/// `L_xy = −(γ_x−γ_y)/2 ([σ_x,[σ_x,·]] − [σ_y,[σ_y,·]])`,
/// `L_j = (γ_x+γ_y)([σ_j·, σ_j†] + [σ_j, ·σ_j†])` for `j = ±`,
/// `D_xy = 2γ_xy(σ_x·σ_y + σ_y·σ_x)`.
pub fn qubit_generators(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> Result<QubitGenerators> {
    check_rates(gamma_x, gamma_y, gamma_xy)?;
    let (sx, sy) = (pauli::x(), pauli::y());
    let l_xy = (&double_comm(&sx) - &double_comm(&sy)).scale(-(gamma_x - gamma_y) / 2.0);

    let id = CMatrix::identity(2, 2);
    let lindblad = |s: &CMatrix| -> Result<Superoperator> {
        let sd = s.adjoint();
        let n = &sd * s;
        // [σρ, σ†] + [σ, ρσ†] = 2σρσ† − σ†σρ − ρσ†σ
        let jump = sandwich_superop(s, &sd)?.scale(2.0);
        let anti = &sandwich_superop(&n, &id)? + &sandwich_superop(&id, &n)?;
        Ok((&jump - &anti).scale(gamma_x + gamma_y))
    };
    let l_plus = lindblad(&pauli::plus())?;
    let l_minus = lindblad(&pauli::minus())?;
    let d_xy = (&sandwich_superop(&sx, &sy)? + &sandwich_superop(&sy, &sx)?).scale(2.0 * gamma_xy);
    Ok(QubitGenerators {
        l_xy,
        l_plus,
        l_minus,
        d_xy,
    })
}

/// `−½(γ_x[σ_x,[σ_x,·]] + γ_y[σ_y,[σ_y,·]] + γ_xy([σ_x,[σ_y,·]] + [σ_y,[σ_x,·]]))`.
pub fn qubit_generator_moment(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> Result<Superoperator> {
    check_rates(gamma_x, gamma_y, gamma_xy)?;
    let cx = commutator_superop(&pauli::x())?;
    let cy = commutator_superop(&pauli::y())?;
    let cross = &(&cx * &cy) + &(&cy * &cx);
    let sum = &(&(&cx * &cx).scale(gamma_x) + &(&cy * &cy).scale(gamma_y)) + &cross.scale(gamma_xy);
    Ok(sum.scale(-0.5))
}

/// Least-squares scalar `c` with `a ≈ c·b`, and the relative residual `‖a − c b‖/‖a‖`.
pub fn scalar_ratio(a: &Superoperator, b: &Superoperator) -> (f64, f64) {
    let num: Complex64 = b.matrix().iter().zip(a.matrix().iter()).map(|(x, y)| x.conj() * y).sum();
    let den: f64 = b.matrix().iter().map(|x| x.norm_sqr()).sum();
    if den == 0.0 {
        return (f64::NAN, if a.max_abs() == 0.0 { 0.0 } else { 1.0 });
    }
    let c = num.re / den;
    let resid = (a.matrix() - b.matrix().scale(c)).norm();
    let na = a.matrix().norm();
    (c, if na == 0.0 { 0.0 } else { resid / na })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_element, trace};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64 as C;

    fn diag(e: &[f64]) -> HermitianOperator {
        HermitianOperator::from_real_diagonal(e)
    }

    #[test]
    fn pdme_without_noise_is_commutator() {
        let h = HermitianOperator::new(pauli::x() + pauli::z().scale(0.3)).unwrap();
        let g = build_generator(&GeneratorSpec::pdme(h.clone(), 0.0).unwrap(), 0.0).unwrap();
        let want = commutator_superop(h.matrix()).unwrap().scale_complex(-IM);
        assert!(max_abs(&(g.matrix() - want.matrix())) < 1e-15);
    }

    #[test]
    fn selfadjoint_with_hamiltonian_lindblad_is_pdme() {
        let h = HermitianOperator::new(pauli::x() + pauli::z().scale(0.3)).unwrap();
        let gamma = 0.7;
        let pdme = build_generator(&GeneratorSpec::pdme(h.clone(), gamma).unwrap(), 0.4).unwrap();
        let sal = GeneratorSpec::SelfadjointLindblad {
            hamiltonian: h.clone(),
            lindblads: vec![(h, QuadraticVariation::linear(gamma))],
        };
        let sal = build_generator(&sal, 0.4).unwrap();
        assert!(max_abs(&(pdme.matrix() - sal.matrix())) < 1e-9);
    }

    #[test]
    fn pdme_coherence_decay_rate() {
        let g = build_generator(&GeneratorSpec::pdme(diag(&[0.0, 1.0]), 1.0).unwrap(), 0.0).unwrap();
        let image = g.apply(&basis_element(2, 0, 1)).unwrap();
        assert_abs_diff_eq!(image[(0, 1)].re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(image[(0, 1)].im, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn qubit_generator_examples() {
        let g = qubit_generators(0.8, 0.8, 0.1).unwrap();
        assert_eq!(g.l_xy.max_abs(), 0.0);
        let g = qubit_generators(1.0, 0.4, 0.0).unwrap();
        assert_eq!(g.d_xy.max_abs(), 0.0);

        let g = qubit_generators(1.0, 0.5, 0.6).unwrap();
        let rho = CMatrix::from_row_slice(2, 2, &[C::new(0.6, 0.), C::new(0.1, 0.3), C::new(0.1, -0.3), C::new(0.4, 0.)]);
        for part in [&g.l_xy, &g.l_plus, &g.l_minus, &g.d_xy] {
            assert!(trace(&part.apply(&rho).unwrap()).norm() < 1e-15);
        }
        assert!(matches!(qubit_generators(1.0, 0.25, 0.6), Err(Error::RateInequality { .. })));
    }

    #[test]
    fn moment_generator_examples() {
        let cx = commutator_superop(&pauli::x()).unwrap();
        let cy = commutator_superop(&pauli::y()).unwrap();
        let gamma = 0.9;
        let want = (&(&cx * &cx) + &(&cy * &cy)).scale(-gamma / 2.0);
        let got = qubit_generator_moment(gamma, gamma, 0.0).unwrap();
        assert!(max_abs(&(got.matrix() - want.matrix())) < 1e-15);

        // [σ_x,[σ_x,σ_z]] = 4σ_z, same for σ_y; −½(4+4)σ_z = −4σ_z
        let out = qubit_generator_moment(1.0, 1.0, 0.0).unwrap().apply(&pauli::z()).unwrap();
        assert!(max_abs(&(out + pauli::z().scale(4.0))) < 1e-15);

        let cross_only = &qubit_generator_moment(1.0, 1.0, 0.7).unwrap() - &qubit_generator_moment(1.0, 1.0, 0.0).unwrap();
        let out = cross_only.apply(&CMatrix::identity(2, 2)).unwrap();
        assert!(max_abs(&out) < 1e-15);
        assert!(qubit_generator_moment(0.1, 0.1, 0.2).is_err());
    }

    #[test]
    fn propagate_at_zero_time_is_identity() {
        let spec = GeneratorSpec::qubit_xy(0.5, 1.0, 0.5, 0.3, QubitGeneratorForm::Published).unwrap();
        let rho = DensityOperator::uniform_superposition(2);
        let out = propagate(&spec, &rho, 0.0, 10).unwrap();
        assert_eq!(out.matrix(), rho.matrix());
        assert!(propagate(&spec, &rho, 1.0, 0).is_err());
    }

    #[test]
    fn decreasing_lambda_is_an_error() {
        let spec = GeneratorSpec::QubitXY {
            omega0: 0.0,
            gamma_x: 1.0,
            gamma_y: 1.0,
            gamma_xy: 0.0,
            lambda: QuadraticVariation::from_fn(|t| t * (1.0 - t)),
            form: QubitGeneratorForm::Moment,
        };
        assert!(propagator(&spec, 2.0, 20).is_err());
    }

    #[test]
    fn scalar_ratio_detects_multiples() {
        let a = qubit_generator_moment(1.0, 0.5, 0.2).unwrap();
        let (c, r) = scalar_ratio(&a.scale(-3.0), &a);
        assert_abs_diff_eq!(c, -3.0, epsilon = 1e-14);
        assert!(r < 1e-14);
    }
}
