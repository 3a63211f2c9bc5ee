//! Per-mode quantum master equations on a truncated Fock space.
//!
//! Operators follow the discrete convention `[φ̂, Π̂] = iħ/Δk`:
//!
//! ```text
//! φ̂ = c √(ħ/(2ωΔk)) (a + a†)
//! Π̂ = −(i/c) √(ħω/(2Δk)) (a − a†)
//! H  = ħω (a†a + ½) = Δk [c²/2 Π̂² + ω²/(2c²) φ̂²]   (untruncated levels)
//! ```
//!
//! The sandwiched master equation carries the lattice weight `Δk` per mode,
//! and the GKSL rates are `γ± = (2γ_φ/(βħ))(ħω/c²) e^{±βħω/2}`.

use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{
    c, commutator, dagger, herm_eig, hermiticity_error, hermitize, is_diagonal, max_abs, CMat,
};
use crate::protocol::MassProtocol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("Fock truncation needs M >= 2, got {0}")]
    TruncationTooSmall(usize),
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("dimension mismatch: expected {expected}x{expected}, got {rows}x{cols}")]
    Dimension {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("density matrix not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace {0} differs from 1")]
    BadTrace(f64),
    #[error("trace drifted by {drift:e} at t = {time}")]
    TraceDrift { drift: f64, time: f64 },
    #[error("non-finite density matrix at t = {0}")]
    NonFinite(f64),
    #[error("steady state needs gamma_plus > gamma_minus > 0 (got {plus}, {minus})")]
    RateOrdering { plus: f64, minus: f64 },
    #[error("steady state needs a Hamiltonian diagonal in the number basis")]
    NotNumberDiagonal,
    #[error("stationary subspace is {0}-dimensional")]
    DegenerateNullSpace(usize),
}

fn require_positive(name: &'static str, value: f64) -> Result<(), QuantumError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(QuantumError::InvalidParameter {
            name,
            requirement: "finite and > 0",
            value,
        })
    }
}

fn require_non_negative(name: &'static str, value: f64) -> Result<(), QuantumError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(QuantumError::InvalidParameter {
            name,
            requirement: "finite and >= 0",
            value,
        })
    }
}

fn check_dim(m: &CMat, dim: usize) -> Result<(), QuantumError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(QuantumError::Dimension {
            expected: dim,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Ladder, field and Hamiltonian matrices of one mode, truncated at `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperators {
    pub a: CMat,
    pub adag: CMat,
    pub number: CMat,
    pub h_mode: CMat,
    pub phi: CMat,
    pub pi: CMat,
    pub hbar: f64,
    pub omega: f64,
    pub c: f64,
    pub dk: f64,
}

pub fn build_mode_operators(
    m: usize,
    omega: f64,
    hbar: f64,
    c_speed: f64,
    dk: f64,
) -> Result<ModeOperators, QuantumError> {
    if m < 2 {
        return Err(QuantumError::TruncationTooSmall(m));
    }
    require_positive("omega", omega)?;
    require_positive("hbar", hbar)?;
    require_positive("c", c_speed)?;
    require_positive("dk", dk)?;
    let dim = m + 1;
    let a = CMat::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            c((j as f64).sqrt())
        } else {
            c(0.0)
        }
    });
    let adag = dagger(&a);
    let number = &adag * &a;
    let h_mode = CMat::from_diagonal(&DVector::from_fn(dim, |i, _| {
        c(hbar * omega * (i as f64 + 0.5))
    }));
    let phi = (&a + &adag) * c(c_speed * (hbar / (2.0 * omega * dk)).sqrt());
    let pi = (&a - &adag) * Complex64::new(0.0, -(hbar * omega / (2.0 * dk)).sqrt() / c_speed);
    Ok(ModeOperators {
        a,
        adag,
        number,
        h_mode,
        phi,
        pi,
        hbar,
        omega,
        c: c_speed,
        dk,
    })
}

impl ModeOperators {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Operators for frequency `omega_t` expressed in this (fixed) Fock basis:
    /// `a_t = √(ω_tΔk/(2ħ))/c · φ̂ + i c √(Δk/(2ħω_t)) · Π̂`, `H_t = ħω_t(a_t†a_t + ½)`.
    /// `phi`, `pi`, `number` are unchanged.
    pub fn retuned(&self, omega_t: f64) -> Result<Self, QuantumError> {
        require_positive("omega", omega_t)?;
        let alpha = (omega_t * self.dk / (2.0 * self.hbar)).sqrt() / self.c;
        let eta = self.c * (self.dk / (2.0 * self.hbar * omega_t)).sqrt();
        let a = &self.phi * c(alpha) + &self.pi * Complex64::new(0.0, eta);
        let adag = dagger(&a);
        let h_mode = hermitize(
            &((&adag * &a + CMat::identity(self.dim(), self.dim()) * c(0.5))
                * c(self.hbar * omega_t)),
        );
        Ok(Self {
            a,
            adag,
            number: self.number.clone(),
            h_mode,
            phi: self.phi.clone(),
            pi: self.pi.clone(),
            hbar: self.hbar,
            omega: omega_t,
            c: self.c,
            dk: self.dk,
        })
    }

    /// `∂H_t/∂b = Δk b φ̂² + (ħc²b/(2ω))(M+1)|M⟩⟨M|` for `ω = c√(λ² + b²)`.
    pub fn dh_db(&self, b: f64) -> CMat {
        let dim = self.dim();
        let mut d = &self.phi * &self.phi * c(self.dk * b);
        d[(dim - 1, dim - 1)] +=
            c(self.hbar * self.c * self.c * b / (2.0 * self.omega) * dim as f64);
        hermitize(&d)
    }
}

/// One-mode density matrix in the number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    pub rho: CMat,
    pub omega: f64,
    /// Lattice mode number, when the matrix belongs to a field mode.
    pub mode: Option<i64>,
}

impl FockDensityMatrix {
    /// Validates Hermiticity (1e−12) and unit trace (1e−10).
    pub fn new(rho: CMat, omega: f64) -> Result<Self, QuantumError> {
        if rho.nrows() != rho.ncols() {
            return Err(QuantumError::Dimension {
                expected: rho.nrows(),
                rows: rho.nrows(),
                cols: rho.ncols(),
            });
        }
        let herm = hermiticity_error(&rho);
        if herm > 1e-12 {
            return Err(QuantumError::NotHermitian(herm));
        }
        let tr = rho.trace().re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(QuantumError::BadTrace(tr));
        }
        Ok(Self {
            rho,
            omega,
            mode: None,
        })
    }

    pub fn with_mode(mut self, n: i64) -> Self {
        self.mode = Some(n);
        self
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// `|n⟩⟨n|`.
    pub fn fock(dim: usize, n: usize, omega: f64) -> Self {
        let mut rho = CMat::zeros(dim, dim);
        rho[(n, n)] = c(1.0);
        Self {
            rho,
            omega,
            mode: None,
        }
    }

    /// `|ψ⟩⟨ψ|` after normalizing `ψ`.
    pub fn pure(psi: &DVector<Complex64>, omega: f64) -> Result<Self, QuantumError> {
        let norm = psi.norm();
        if !(norm > 0.0) {
            return Err(QuantumError::BadTrace(0.0));
        }
        let v = psi / c(norm);
        Self::new(hermitize(&(&v * v.adjoint())), omega)
    }

    /// Normalized `e^{−βH}` of the given Hamiltonian.
    pub fn gibbs(ops: &ModeOperators, beta: f64) -> Result<Self, QuantumError> {
        require_positive("beta", beta)?;
        let rho = gibbs_matrix(&ops.h_mode, beta);
        Ok(Self {
            rho,
            omega: ops.omega,
            mode: None,
        })
    }

    pub fn trace_error(&self) -> f64 {
        (self.rho.trace() - c(1.0)).norm()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        herm_eig(&self.rho).0[0]
    }
}

/// `e^{−βH}/Z` for a Hermitian `H`, shifted by the ground energy for range safety.
pub(crate) fn gibbs_matrix(h: &CMat, beta: f64) -> CMat {
    let dim = h.nrows();
    if is_diagonal(h) {
        let e0 = (0..dim).map(|i| h[(i, i)].re).fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = (0..dim)
            .map(|i| (-beta * (h[(i, i)].re - e0)).exp())
            .collect();
        let z: f64 = w.iter().sum();
        return CMat::from_diagonal(&DVector::from_fn(dim, |i, _| c(w[i] / z)));
    }
    let (vals, vecs) = herm_eig(h);
    let e0 = vals[0];
    let w: Vec<f64> = vals.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    let d = CMat::from_diagonal(&DVector::from_fn(dim, |i, _| c(w[i] / z)));
    hermitize(&(&vecs * d * vecs.adjoint()))
}

/// The 2×2 dissipator matrix of one mode and its CPTP verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipatorSpec {
    pub l: Matrix2<Complex64>,
    pub l_h: Matrix2<Complex64>,
    /// Ascending.
    pub eigenvalues: [f64; 2],
    pub det_lh: f64,
    pub cptp: bool,
    /// `Θ = βħω/2`.
    pub theta: f64,
}

pub fn build_l_matrix(
    gamma_phi: f64,
    gamma_pi: f64,
    omega: f64,
    beta: f64,
    hbar: f64,
    c_speed: f64,
) -> Result<DissipatorSpec, QuantumError> {
    require_non_negative("gamma_phi", gamma_phi)?;
    require_non_negative("gamma_Pi", gamma_pi)?;
    require_positive("omega", omega)?;
    require_positive("beta", beta)?;
    require_positive("hbar", hbar)?;
    require_positive("c", c_speed)?;
    let theta = 0.5 * beta * hbar * omega;
    let (ch, sh) = (theta.cosh(), theta.sinh());
    let bh = beta * hbar;
    let c2 = c_speed * c_speed;
    let l = Matrix2::new(
        c(gamma_pi * ch / bh),
        Complex64::new(0.0, -gamma_pi * c2 * sh / (bh * omega)),
        Complex64::new(0.0, gamma_phi * omega * sh / (bh * c2)),
        c(gamma_phi * ch / bh),
    );
    let l_h = l + l.adjoint();
    let p = l_h[(0, 0)].re;
    let q = l_h[(1, 1)].re;
    let off = l_h[(0, 1)].norm();
    // det via u, v avoids cancellation between cosh² and sinh² terms
    let u = gamma_pi * c2 / omega;
    let v = gamma_phi * omega / c2;
    let det_lh = (4.0 * u * v - sh * sh * (u - v) * (u - v)) / (bh * bh);
    let mean = 0.5 * (p + q);
    let radius = (0.25 * (p - q) * (p - q) + off * off).sqrt();
    let lo = if mean - radius >= 0.0 && mean > 0.0 {
        // smaller root from the product for accuracy
        det_lh / (mean + radius)
    } else {
        mean - radius
    };
    let hi = mean + radius;
    let norm = hi.abs().max(lo.abs());
    let cptp = lo >= -1e-14 * norm;
    Ok(DissipatorSpec {
        l,
        l_h,
        eigenvalues: [lo, hi],
        det_lh,
        cptp,
        theta,
    })
}

/// `γ_Π = (ω²/c⁴) γ_φ`.
pub fn detailed_balance_gamma_pi(gamma_phi: f64, omega: f64, c_speed: f64) -> f64 {
    omega * omega / c_speed.powi(4) * gamma_phi
}

/// Positivity of `L_H` at every temperature: holds iff `γ_Π c²/ω = γ_φ ω/c²`
/// (to 1e−10 relative), or both couplings vanish.
pub fn cptp_all_temperatures(gamma_phi: f64, gamma_pi: f64, omega: f64, c_speed: f64) -> bool {
    let c2 = c_speed * c_speed;
    let u = gamma_pi * c2 / omega;
    let v = gamma_phi * omega / c2;
    if u < 0.0 || v < 0.0 {
        return false;
    }
    (u - v).abs() <= 1e-10 * u.max(v)
}

/// `build_l_matrix` across a grid of `βħω` values at fixed `ħ`, `ω`, `c`.
pub fn cptp_scan(
    gamma_phi: f64,
    gamma_pi: f64,
    omega: f64,
    hbar: f64,
    c_speed: f64,
    beta_hbar_omega: &[f64],
) -> Result<Vec<DissipatorSpec>, QuantumError> {
    beta_hbar_omega
        .iter()
        .map(|&x| {
            build_l_matrix(
                gamma_phi,
                gamma_pi,
                omega,
                x / (hbar * omega),
                hbar,
                c_speed,
            )
        })
        .collect()
}

/// Log-spaced `βħω` grid over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Lindblad rates for jump operators `L₊ = a` (rate `γ₊`) and `L₋ = a†` (rate `γ₋`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GKSLRates {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

pub fn build_gksl_rates(
    gamma_phi: f64,
    omega: f64,
    beta: f64,
    hbar: f64,
    c_speed: f64,
) -> Result<GKSLRates, QuantumError> {
    require_non_negative("gamma_phi", gamma_phi)?;
    require_positive("omega", omega)?;
    require_positive("beta", beta)?;
    require_positive("hbar", hbar)?;
    require_positive("c", c_speed)?;
    let theta = 0.5 * beta * hbar * omega;
    let pre = 2.0 * gamma_phi / (beta * hbar) * (hbar * omega / (c_speed * c_speed));
    Ok(GKSLRates {
        gamma_plus: pre * theta.exp(),
        gamma_minus: pre * (-theta).exp(),
    })
}

fn jump_terms(rho: &CMat, l: &CMat, rate: f64) -> CMat {
    let ld = dagger(l);
    let ldl = &ld * l;
    (&ldl * rho + rho * &ldl - (l * rho * &ld) * c(2.0)) * c(rate)
}

/// `(i/ħ)[ρ, H] − (1/2ħ) Σ± γ± (L†Lρ + ρL†L − 2LρL†)`.
pub fn gksl_rhs(rho: &CMat, ops: &ModeOperators, rates: &GKSLRates) -> Result<CMat, QuantumError> {
    check_dim(rho, ops.dim())?;
    let mut out = commutator(rho, &ops.h_mode) * Complex64::new(0.0, 1.0 / ops.hbar);
    if rates.gamma_plus != 0.0 {
        out -= jump_terms(rho, &ops.a, rates.gamma_plus) * c(0.5 / ops.hbar);
    }
    if rates.gamma_minus != 0.0 {
        out -= jump_terms(rho, &ops.adag, rates.gamma_minus) * c(0.5 / ops.hbar);
    }
    Ok(out)
}

/// `X O X⁻¹` and `X⁻¹ O X` for `X = e^{βH/2}`, built entrywise in the
/// eigenbasis of `H` so no large exponentials are formed.
fn sandwich_pair(h: &CMat, o: &CMat, beta: f64) -> (CMat, CMat) {
    let dim = h.nrows();
    let (vals, vecs) = if is_diagonal(h) {
        (
            (0..dim).map(|i| h[(i, i)].re).collect::<Vec<_>>(),
            CMat::identity(dim, dim),
        )
    } else {
        herm_eig(h)
    };
    let o_e = vecs.adjoint() * o * &vecs;
    let fwd = CMat::from_fn(dim, dim, |i, j| {
        o_e[(i, j)] * (0.5 * beta * (vals[i] - vals[j])).exp()
    });
    let bwd = CMat::from_fn(dim, dim, |i, j| {
        o_e[(i, j)] * (-0.5 * beta * (vals[i] - vals[j])).exp()
    });
    (&vecs * fwd * vecs.adjoint(), &vecs * bwd * vecs.adjoint())
}

/// Sandwiched master equation for one mode with weight `Δk`:
///
/// ```text
/// dρ/dt = (i/ħ)[ρ, H] − (γ_φ Δk/(βħ²)) [X⁻¹[XρX, Π̂]X⁻¹, Π̂] − (γ_Π Δk/(βħ²)) [X⁻¹[XρX, φ̂]X⁻¹, φ̂]
/// ```
///
/// with `X = e^{βH/2}`; `X⁻¹[XρX, O]X⁻¹ = ρ(XOX⁻¹) − (X⁻¹OX)ρ`.
pub fn general_qme_rhs(
    rho: &CMat,
    ops: &ModeOperators,
    gamma_phi: f64,
    gamma_pi: f64,
    beta: f64,
) -> Result<CMat, QuantumError> {
    check_dim(rho, ops.dim())?;
    require_non_negative("gamma_phi", gamma_phi)?;
    require_non_negative("gamma_Pi", gamma_pi)?;
    require_positive("beta", beta)?;
    let hb2 = ops.hbar * ops.hbar;
    let mut out = commutator(rho, &ops.h_mode) * Complex64::new(0.0, 1.0 / ops.hbar);
    for (gamma, o) in [(gamma_phi, &ops.pi), (gamma_pi, &ops.phi)] {
        if gamma == 0.0 {
            continue;
        }
        let (fwd, bwd) = sandwich_pair(&ops.h_mode, o, beta);
        let inner = rho * fwd - bwd * rho;
        out -= commutator(&inner, o) * c(gamma * ops.dk / (beta * hb2));
    }
    Ok(out)
}

/// Right-hand side `dρ/dt = G(t, ρ)`.
pub trait Generator: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat, QuantumError>;
}

/// GKSL generator with frozen operators and rates.
#[derive(Debug, Clone)]
pub struct GkslGenerator {
    pub ops: ModeOperators,
    pub rates: GKSLRates,
}

impl Generator for GkslGenerator {
    fn dim(&self) -> usize {
        self.ops.dim()
    }

    fn rhs(&self, _t: f64, rho: &CMat) -> Result<CMat, QuantumError> {
        gksl_rhs(rho, &self.ops, &self.rates)
    }
}

/// Sandwiched generator with frozen parameters.
#[derive(Debug, Clone)]
pub struct QmeGenerator {
    pub ops: ModeOperators,
    pub gamma_phi: f64,
    pub gamma_pi: f64,
    pub beta: f64,
}

impl Generator for QmeGenerator {
    fn dim(&self) -> usize {
        self.ops.dim()
    }

    fn rhs(&self, _t: f64, rho: &CMat) -> Result<CMat, QuantumError> {
        general_qme_rhs(rho, &self.ops, self.gamma_phi, self.gamma_pi, self.beta)
    }
}

/// One lattice mode driven by the mass protocol, `ω(t) = c√(λ² + b(k, t)²)`,
/// in a fixed Fock basis. With `gamma_pi = None` the couplings obey detailed
/// balance at every instant and the GKSL form is used; otherwise the
/// sandwiched equation is evaluated with the given `γ_Π`.
#[derive(Debug, Clone)]
pub struct DrivenMode {
    pub reference: ModeOperators,
    pub gamma_phi: f64,
    pub gamma_pi: Option<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub k: f64,
    pub proto: MassProtocol,
}

impl DrivenMode {
    pub fn b(&self, t: f64) -> f64 {
        self.proto.b(self.k, t)
    }

    pub fn db_dt(&self, t: f64) -> f64 {
        self.proto.db_dt(self.k, t)
    }

    pub fn omega(&self, t: f64) -> f64 {
        let b = self.b(t);
        self.reference.c * (self.lambda * self.lambda + b * b).sqrt()
    }

    pub fn ops_at(&self, t: f64) -> Result<ModeOperators, QuantumError> {
        self.reference.retuned(self.omega(t))
    }

    /// Rates at time `t` (detailed-balance drive only).
    pub fn rates_at(&self, t: f64) -> Result<GKSLRates, QuantumError> {
        build_gksl_rates(
            self.gamma_phi,
            self.omega(t),
            self.beta,
            self.reference.hbar,
            self.reference.c,
        )
    }

    /// `∂H_t/∂t = (∂H/∂b) ḃ`.
    pub fn dh_dt(&self, t: f64) -> Result<CMat, QuantumError> {
        let rate = self.db_dt(t);
        let ops = self.ops_at(t)?;
        Ok(ops.dh_db(self.b(t)) * c(rate))
    }

    pub fn dissipator_at(&self, t: f64) -> Result<DissipatorSpec, QuantumError> {
        let w = self.omega(t);
        let gq = self
            .gamma_pi
            .unwrap_or_else(|| detailed_balance_gamma_pi(self.gamma_phi, w, self.reference.c));
        build_l_matrix(
            self.gamma_phi,
            gq,
            w,
            self.beta,
            self.reference.hbar,
            self.reference.c,
        )
    }
}

impl Generator for DrivenMode {
    fn dim(&self) -> usize {
        self.reference.dim()
    }

    fn rhs(&self, t: f64, rho: &CMat) -> Result<CMat, QuantumError> {
        let ops = self.ops_at(t)?;
        match self.gamma_pi {
            None => {
                let rates =
                    build_gksl_rates(self.gamma_phi, ops.omega, self.beta, ops.hbar, ops.c)?;
                gksl_rhs(rho, &ops, &rates)
            }
            Some(gq) => general_qme_rhs(rho, &ops, self.gamma_phi, gq, self.beta),
        }
    }
}

/// Snapshots of an evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<CMat>,
    /// Largest `|Tr ρ − 1|` seen at any step.
    pub max_trace_drift: f64,
}

/// One RK4 step; Hermiticity is restored, the trace is left alone.
pub fn rk4_step(gen: &dyn Generator, t: f64, rho: &CMat, dt: f64) -> Result<CMat, QuantumError> {
    let k1 = gen.rhs(t, rho)?;
    let k2 = gen.rhs(t + 0.5 * dt, &(rho + &k1 * c(0.5 * dt)))?;
    let k3 = gen.rhs(t + 0.5 * dt, &(rho + &k2 * c(0.5 * dt)))?;
    let k4 = gen.rhs(t + dt, &(rho + &k3 * c(dt)))?;
    let next = rho + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
    Ok(hermitize(&next))
}

/// RK4 evolution recording every `stride` steps; aborts if the trace drifts
/// by more than 1e−6.
pub fn evolve(
    rho0: &CMat,
    gen: &dyn Generator,
    t0: f64,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Evolution, QuantumError> {
    check_dim(rho0, gen.dim())?;
    require_positive("dt", dt)?;
    let stride = stride.max(1);
    let mut rho = rho0.clone();
    let mut ev = Evolution {
        times: vec![t0],
        states: vec![rho.clone()],
        max_trace_drift: (rho.trace().re - 1.0).abs(),
    };
    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * dt;
        rho = rk4_step(gen, t, &rho, dt)?;
        let tn = t0 + step as f64 * dt;
        if rho.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(QuantumError::NonFinite(tn));
        }
        let drift = (rho.trace().re - 1.0).abs();
        ev.max_trace_drift = ev.max_trace_drift.max(drift);
        if drift > 1e-6 {
            return Err(QuantumError::TraceDrift { drift, time: tn });
        }
        if step % stride == 0 || step == steps {
            ev.times.push(tn);
            ev.states.push(rho.clone());
        }
    }
    Ok(ev)
}

/// Matrix of the generator acting on column-stacked `vec(ρ)`.
pub fn liouvillian(gen: &dyn Generator, t: f64) -> Result<CMat, QuantumError> {
    let dim = gen.dim();
    let n = dim * dim;
    let mut out = CMat::zeros(n, n);
    for j in 0..dim {
        for i in 0..dim {
            let mut e = CMat::zeros(dim, dim);
            e[(i, j)] = c(1.0);
            let col = gen.rhs(t, &e)?;
            out.set_column(j * dim + i, &DVector::from_column_slice(col.as_slice()));
        }
    }
    Ok(out)
}

/// `ρ(t) = exp(𝓛 t) ρ₀` for a frozen generator matrix.
pub fn exact_propagate(rho0: &CMat, generator: &CMat, t: f64) -> CMat {
    let dim = rho0.nrows();
    let prop = (generator * c(t)).exp();
    let v = prop * DVector::from_column_slice(rho0.as_slice());
    CMat::from_column_slice(dim, dim, v.as_slice())
}

/// Stationary state of a GKSL generator with number-diagonal `H`.
///
/// Coherences decay, so the fixed point lives in the population block: its
/// null vector is found by SVD for moderate truncations and by the
/// birth–death recursion `P_{n+1}/P_n = W_{n+1,n}/W_{n,n+1}` beyond that.
pub fn steady_state(
    ops: &ModeOperators,
    rates: &GKSLRates,
) -> Result<FockDensityMatrix, QuantumError> {
    let (gp, gm) = (rates.gamma_plus, rates.gamma_minus);
    if !(gp > gm && gm > 0.0) {
        return Err(QuantumError::RateOrdering {
            plus: gp,
            minus: gm,
        });
    }
    if !is_diagonal(&ops.h_mode) {
        return Err(QuantumError::NotNumberDiagonal);
    }
    let dim = ops.dim();
    let pops = if dim <= 128 {
        population_null_vector(ops, rates)?
    } else {
        birth_death_populations(ops, rates)
    };
    let rho = CMat::from_diagonal(&DVector::from_fn(dim, |i, _| c(pops[i])));
    Ok(FockDensityMatrix {
        rho,
        omega: ops.omega,
        mode: None,
    })
}

fn population_rates(
    ops: &ModeOperators,
    rates: &GKSLRates,
) -> Result<nalgebra::DMatrix<f64>, QuantumError> {
    let dim = ops.dim();
    let mut w = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for n in 0..dim {
        let mut e = CMat::zeros(dim, dim);
        e[(n, n)] = c(1.0);
        let d = gksl_rhs(&e, ops, rates)?;
        for m in 0..dim {
            w[(m, n)] = d[(m, m)].re;
        }
    }
    Ok(w)
}

fn population_null_vector(
    ops: &ModeOperators,
    rates: &GKSLRates,
) -> Result<Vec<f64>, QuantumError> {
    let w = population_rates(ops, rates)?;
    let dim = w.nrows();
    let svd = w.svd(false, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let zero = s.iter().filter(|&&v| v <= 1e-12 * smax).count();
    if zero != 1 {
        return Err(QuantumError::DegenerateNullSpace(zero));
    }
    let imin = s.imin();
    let v_t = svd.v_t.expect("requested");
    let mut p: Vec<f64> = (0..dim).map(|j| v_t[(imin, j)]).collect();
    let sum: f64 = p.iter().sum();
    for x in &mut p {
        *x = (*x / sum).max(0.0);
    }
    let sum: f64 = p.iter().sum();
    Ok(p.into_iter().map(|x| x / sum).collect())
}

fn birth_death_populations(ops: &ModeOperators, rates: &GKSLRates) -> Vec<f64> {
    let dim = ops.dim();
    let mut p = vec![1.0; dim];
    for n in 0..dim - 1 {
        let up = rates.gamma_minus * ops.adag[(n + 1, n)].norm_sqr();
        let down = rates.gamma_plus * ops.a[(n, n + 1)].norm_sqr();
        p[n + 1] = p[n] * up / down;
    }
    let sum: f64 = p.iter().sum();
    p.into_iter().map(|x| x / sum).collect()
}

/// Smallest eigenvalue of `P⊥ G(ρ) P⊥` for a pure `ρ = |ψ⟩⟨ψ|`, where `P⊥`
/// projects off `ψ`. A negative value means the generator pushes an
/// eigenvalue of `ρ` below zero immediately.
pub fn positivity_witness(
    gen: &dyn Generator,
    t: f64,
    psi: &DVector<Complex64>,
) -> Result<f64, QuantumError> {
    let dim = gen.dim();
    let v = psi / c(psi.norm());
    let rho = &v * v.adjoint();
    let d = gen.rhs(t, &rho)?;
    let p = CMat::identity(dim, dim) - &rho;
    let restricted = &p * d * &p;
    let (vals, _) = herm_eig(&restricted);
    // the ψ direction is an exact zero of the restriction
    Ok(vals[0].min(0.0))
}

/// Largest entry modulus of `a − b` restricted to the
/// leading `block` levels.
pub fn interior_difference(a: &CMat, b: &CMat, block: usize) -> f64 {
    let d = (a - b).view((0, 0), (block, block)).into_owned();
    max_abs(&d)
}
