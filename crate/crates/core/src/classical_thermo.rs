//! Exact moment dynamics of the free field under the Fokker–Planck–Kramers
//! equation, and the Gaussian thermodynamic functionals built on it.
//!
//! Each independent mode is described by real coordinates `z` in the layout
//! of [`crate::classical_sde::mode_coordinates`]. With weight `s = Δk` for
//! self-conjugate modes and `s = 2Δk` for `±k` pairs, the mode energy is
//! `½ zᵀ K z` with `K = s·diag(a, c², …)`, `a = λ² + b²`, and
//!
//! ```text
//! dm/dt = A m,   dΣ/dt = AΣ + ΣAᵀ + D
//! A = (J − Γ) K,  J = s⁻¹ [[0, 1], [−1, 0]],  Γ = s⁻¹ diag(γ_φ, γ_Π),  D = 2Γ/β
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::classical_sde::{couplings, FreeField, Hamiltonian, SdeError};
use crate::protocol::CouplingSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("moment dynamics need the free-field Hamiltonian")]
    NonQuadratic,
    #[error("covariance of mode {mode} is singular or not positive definite")]
    Singular { mode: usize },
    #[error(
        "covariance of mode {mode} lost positivity: eigenvalue {eigenvalue:e}, trace {trace:e}"
    )]
    NotPsd {
        mode: usize,
        eigenvalue: f64,
        trace: f64,
    },
    #[error("mode {mode}: expected a {expected}-dimensional block, got {got}")]
    Shape {
        mode: usize,
        expected: usize,
        got: usize,
    },
    #[error("mode {0} has zero stiffness; the Gibbs state does not exist")]
    ZeroStiffness(usize),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("time step must be finite and > 0, got {0}")]
    BadStep(f64),
}

/// Mean and covariance of one independent mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMoments {
    /// Lattice array index of the representative mode.
    pub index: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Gaussian state of the whole field.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMomentState {
    pub modes: Vec<ModeMoments>,
    pub time: f64,
}

/// Time derivative of a [`GaussianMomentState`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDerivative {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Per-mode matrices at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub k: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// `∂K/∂t`.
    pub k_dot: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRecord {
    pub t: f64,
    pub s_st: f64,
    pub ds_dt: f64,
    pub heat_rate: f64,
    pub production_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlRecord {
    /// `D(ρ‖ρ⋆_t)` in nats.
    pub s_kl: f64,
    pub ds_kl_dt: f64,
    /// `β(E_ρ[∂_t H] − E_⋆[∂_t H])`, the part absent for frozen `b`.
    pub modified_term: f64,
}

fn free_field(h: &dyn Hamiltonian) -> Result<&FreeField, ThermoError> {
    h.as_free_field().ok_or(ThermoError::NonQuadratic)
}

fn block_dim(h: &FreeField, idx: usize) -> usize {
    if h.spec().is_self_conjugate(idx) {
        2
    } else {
        4
    }
}

fn blockdiag2(dim: usize, m: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_fn(
        dim,
        dim,
        |i, j| {
            if i / 2 == j / 2 {
                m[i % 2][j % 2]
            } else {
                0.0
            }
        },
    )
}

pub fn mode_matrices(
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    idx: usize,
    t: f64,
) -> Result<ModeMatrices, ThermoError> {
    let ff = free_field(h)?;
    let spec = ff.spec();
    let dim = block_dim(ff, idx);
    let s = if dim == 2 { 1.0 } else { 2.0 } * spec.dk();
    let c2 = spec.c().powi(2);
    let a = ff.stiffness(idx, t);
    let (gp, gq) = couplings(spec, sched, t)?;
    let (gp, gq) = (gp[idx], gq[idx]);
    let k = blockdiag2(dim, [[s * a, 0.0], [0.0, s * c2]]);
    let drift = blockdiag2(dim, [[-gp * a, c2], [-a, -gq * c2]]);
    let gamma = blockdiag2(dim, [[gp / s, 0.0], [0.0, gq / s]]);
    let d = &gamma * (2.0 / spec.beta());
    let k_dot = blockdiag2(dim, [[s * ff.stiffness_rate(idx, t), 0.0], [0.0, 0.0]]);
    Ok(ModeMatrices {
        k,
        a: drift,
        gamma,
        d,
        k_dot,
    })
}

impl GaussianMomentState {
    /// Moments of a single deterministic state (zero covariance).
    pub fn from_state(
        h: &dyn Hamiltonian,
        state: &crate::classical_sde::ClassicalModeState,
    ) -> Self {
        let spec = h.spec();
        let modes = spec
            .independent_modes()
            .into_iter()
            .map(|idx| {
                let z = crate::classical_sde::mode_coordinates(spec, state, idx);
                let d = z.len();
                ModeMoments {
                    index: idx,
                    mean: DVector::from_vec(z),
                    cov: DMatrix::zeros(d, d),
                }
            })
            .collect();
        Self {
            modes,
            time: state.time,
        }
    }

    /// Gibbs state `e^{−βH}/Z` of the field at time `t` and inverse
    /// temperature `beta`.
    pub fn gibbs(h: &dyn Hamiltonian, t: f64, beta: f64) -> Result<Self, ThermoError> {
        let ff = free_field(h)?;
        let mut modes = Vec::new();
        for idx in ff.spec().independent_modes() {
            let dim = block_dim(ff, idx);
            if ff.stiffness(idx, t) <= 0.0 {
                return Err(ThermoError::ZeroStiffness(idx));
            }
            let s = if dim == 2 { 1.0 } else { 2.0 } * ff.spec().dk();
            let c2 = ff.spec().c().powi(2);
            let a = ff.stiffness(idx, t);
            modes.push(ModeMoments {
                index: idx,
                mean: DVector::zeros(dim),
                cov: blockdiag2(
                    dim,
                    [[1.0 / (beta * s * a), 0.0], [0.0, 1.0 / (beta * s * c2)]],
                ),
            });
        }
        Ok(Self { modes, time: t })
    }

    fn check(&self, h: &FreeField) -> Result<(), ThermoError> {
        for m in &self.modes {
            let d = block_dim(h, m.index);
            for got in [m.mean.len(), m.cov.nrows(), m.cov.ncols()] {
                if got != d {
                    return Err(ThermoError::Shape {
                        mode: m.index,
                        expected: d,
                        got,
                    });
                }
            }
        }
        Ok(())
    }

    fn axpy(&self, k: f64, d: &MomentDerivative, dt_time: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .enumerate()
                .map(|(i, m)| ModeMoments {
                    index: m.index,
                    mean: &m.mean + &d.mean[i] * k,
                    cov: &m.cov + &d.cov[i] * k,
                })
                .collect(),
            time: self.time + dt_time,
        }
    }
}

pub fn lyapunov_rhs(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<MomentDerivative, ThermoError> {
    let ff = free_field(h)?;
    mom.check(ff)?;
    let mut out = MomentDerivative {
        mean: Vec::with_capacity(mom.modes.len()),
        cov: Vec::with_capacity(mom.modes.len()),
    };
    for m in &mom.modes {
        let mm = mode_matrices(h, sched, m.index, t)?;
        out.mean.push(&mm.a * &m.mean);
        out.cov
            .push(&mm.a * &m.cov + &m.cov * mm.a.transpose() + &mm.d);
    }
    Ok(out)
}

fn repair_psd(mom: &mut GaussianMomentState) -> Result<(), ThermoError> {
    for m in &mut mom.modes {
        m.cov = (&m.cov + m.cov.transpose()) * 0.5;
        let trace = m.cov.trace();
        let eig = m.cov.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < 0.0 {
            if min < -1e-12 * trace.abs() {
                return Err(ThermoError::NotPsd {
                    mode: m.index,
                    eigenvalue: min,
                    trace,
                });
            }
            let clamped = eig.eigenvalues.map(|v| v.max(0.0));
            m.cov =
                &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        }
    }
    Ok(())
}

/// Classical RK4 on [`lyapunov_rhs`], symmetrizing and checking positivity
/// after every step.
pub fn propagate_moments(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    dt: f64,
    steps: usize,
) -> Result<GaussianMomentState, ThermoError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ThermoError::BadStep(dt));
    }
    let mut cur = mom.clone();
    for _ in 0..steps {
        let t = cur.time;
        let k1 = lyapunov_rhs(&cur, h, sched, t)?;
        let s2 = cur.axpy(0.5 * dt, &k1, 0.5 * dt);
        let k2 = lyapunov_rhs(&s2, h, sched, t + 0.5 * dt)?;
        let s3 = cur.axpy(0.5 * dt, &k2, 0.5 * dt);
        let k3 = lyapunov_rhs(&s3, h, sched, t + 0.5 * dt)?;
        let s4 = cur.axpy(dt, &k3, dt);
        let k4 = lyapunov_rhs(&s4, h, sched, t + dt)?;
        for (i, m) in cur.modes.iter_mut().enumerate() {
            m.mean +=
                (&k1.mean[i] + &k2.mean[i] * 2.0 + &k3.mean[i] * 2.0 + &k4.mean[i]) * (dt / 6.0);
            m.cov += (&k1.cov[i] + &k2.cov[i] * 2.0 + &k3.cov[i] * 2.0 + &k4.cov[i]) * (dt / 6.0);
        }
        cur.time = t + dt;
        repair_psd(&mut cur)?;
    }
    Ok(cur)
}

/// Solves `AΣ + ΣAᵀ + D = 0` for one mode by a Kronecker-product linear solve.
pub fn stationary_covariance(
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    idx: usize,
    t: f64,
) -> Result<DMatrix<f64>, ThermoError> {
    let mm = mode_matrices(h, sched, idx, t)?;
    let n = mm.a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = mm.a.kronecker(&eye) + eye.kronecker(&mm.a);
    let rhs = -DVector::from_column_slice(mm.d.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(ThermoError::Singular { mode: idx })?;
    let sigma = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&sigma + sigma.transpose()) * 0.5)
}

fn inverse(m: &DMatrix<f64>, mode: usize) -> Result<DMatrix<f64>, ThermoError> {
    let chol = m.clone().cholesky().ok_or(ThermoError::Singular { mode })?;
    Ok(chol.inverse())
}

fn log_det(m: &DMatrix<f64>, mode: usize) -> Result<f64, ThermoError> {
    let chol = m.clone().cholesky().ok_or(ThermoError::Singular { mode })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `S = (k_B/2) Σ_modes ln det(2πe Σ)`.
pub fn entropy_gaussian(mom: &GaussianMomentState, kb: f64) -> Result<f64, ThermoError> {
    let mut s = 0.0;
    for m in &mom.modes {
        let d = m.cov.nrows() as f64;
        s +=
            d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det(&m.cov, m.index)?;
    }
    Ok(0.5 * kb * s)
}

/// `dS/dt = k_B Σ [tr A + ½ tr(Σ⁻¹ D)]`.
pub fn entropy_rate(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<f64, ThermoError> {
    let kb = h.spec().kb();
    let mut r = 0.0;
    for m in &mom.modes {
        let mm = mode_matrices(h, sched, m.index, t)?;
        let inv = inverse(&m.cov, m.index)?;
        r += mm.a.trace() + 0.5 * (inv * &mm.d).trace();
    }
    Ok(kb * r)
}

/// Mean energy `Σ ½ tr(K(Σ + m mᵀ))`.
pub fn mean_energy(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    t: f64,
) -> Result<f64, ThermoError> {
    let sched = CouplingSchedule::constant(0.0, 0.0);
    let mut e = 0.0;
    for m in &mom.modes {
        let mm = mode_matrices(h, &sched, m.index, t)?;
        e += 0.5 * (&mm.k * (&m.cov + &m.mean * m.mean.transpose())).trace();
    }
    Ok(e)
}

/// Expected heat flow into the system, `E[dQ]/dt = Σ [−tr(KΓK(Σ + m mᵀ)) + tr(ΓK)/β]`.
pub fn heat_rate_mean(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<f64, ThermoError> {
    let beta = h.spec().beta();
    let mut q = 0.0;
    for m in &mom.modes {
        let mm = mode_matrices(h, sched, m.index, t)?;
        let second = &m.cov + &m.mean * m.mean.transpose();
        q += -(&mm.k * &mm.gamma * &mm.k * second).trace() + (&mm.gamma * &mm.k).trace() / beta;
    }
    Ok(q)
}

/// `dS/dt − heat_rate/T` in the manifestly non-negative form
/// `k_B β Σ [mᵀKΓKm + tr(Γ M Σ Mᵀ)]`, `M = K − Σ⁻¹/β`.
pub fn entropy_production(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<f64, ThermoError> {
    let spec = h.spec();
    let beta = spec.beta();
    let mut p = 0.0;
    for m in &mom.modes {
        let mm = mode_matrices(h, sched, m.index, t)?;
        let inv = inverse(&m.cov, m.index)?;
        let big_m = &mm.k - inv / beta;
        let mean_term = (m.mean.transpose() * &mm.k * &mm.gamma * &mm.k * &m.mean)[(0, 0)];
        let cov_term = (&mm.gamma * &big_m * &m.cov * big_m.transpose()).trace();
        p += mean_term + cov_term;
    }
    Ok(spec.kb() * beta * p)
}

pub fn entropy_record(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
) -> Result<EntropyRecord, ThermoError> {
    let t = mom.time;
    Ok(EntropyRecord {
        t,
        s_st: entropy_gaussian(mom, h.spec().kb())?,
        ds_dt: entropy_rate(mom, h, sched, t)?,
        heat_rate: heat_rate_mean(mom, h, sched, t)?,
        production_rate: entropy_production(mom, h, sched, t)?,
    })
}

/// Gaussian KL divergence from the instantaneous Gibbs state and its rate,
/// `dS_KL/dt = −production/k_B + β(E_ρ[∂_t H] − E_⋆[∂_t H])`.
pub fn kl_divergence(
    mom: &GaussianMomentState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<KlRecord, ThermoError> {
    let spec = h.spec();
    let beta = spec.beta();
    let gibbs = GaussianMomentState::gibbs(h, t, beta)?;
    let mut s_kl = 0.0;
    let mut modified = 0.0;
    for (m, g) in mom.modes.iter().zip(&gibbs.modes) {
        let mm = mode_matrices(h, sched, m.index, t)?;
        let d = m.cov.nrows() as f64;
        let g_inv = inverse(&g.cov, m.index)?;
        s_kl += 0.5
            * ((&g_inv * &m.cov).trace() + (m.mean.transpose() * &g_inv * &m.mean)[(0, 0)] - d
                + log_det(&g.cov, m.index)?
                - log_det(&m.cov, m.index)?);
        let second = &m.cov + &m.mean * m.mean.transpose();
        let e_rho = 0.5 * (&mm.k_dot * second).trace();
        let e_star = 0.5 * (&mm.k_dot * &g.cov).trace();
        modified += beta * (e_rho - e_star);
    }
    let production = entropy_production(mom, h, sched, t)?;
    Ok(KlRecord {
        s_kl,
        ds_kl_dt: -production / spec.kb() + modified,
        modified_term: modified,
    })
}
