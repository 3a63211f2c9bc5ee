//! Brownian-thermostat Langevin dynamics for the mode amplitudes, with
//! per-trajectory heat and work accounting.
//!
//! Convention: `H = Δk Σ_n h(k_n)` over all `2N` modes, and the gradient
//! `∂H/∂φ(−k_n)` is stored at the index of mode `n`. For the free field this
//! gives `∂H/∂φ(−k_n) = Δk (λ² + b²) φ(k_n)` and `∂H/∂Π(−k_n) = Δk c² Π(k_n)`,
//! so the drift is
//!
//! ```text
//! dφ/dt = c²Π − γ_φ (λ² + b²) φ
//! dΠ/dt = −(λ² + b²) φ − γ_Π c² Π
//! ```
//!
//! with noise amplitude `√(2γ/(Δk β))` on each equation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeSpec};
use crate::protocol::{CouplingSchedule, MassProtocol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("{which} = {value} < 0 at |k| = {k}, t = {t}")]
    NegativeCoupling {
        which: &'static str,
        k: f64,
        t: f64,
        value: f64,
    },
    #[error("time step must be finite and > 0, got {0}")]
    BadStep(f64),
    #[error("non-finite amplitude at t = {time} (mode index {mode})")]
    NonFinite { time: f64, mode: usize },
    #[error("heat increment has imaginary residue {residue:e} relative to scale {scale:e}")]
    ImaginaryHeat { residue: f64, scale: f64 },
    #[error("state has {got} modes, lattice has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("thermal initial conditions need the free-field Hamiltonian")]
    NotFreeField,
    #[error("mode {0} has zero stiffness; its Gibbs distribution is not normalizable")]
    ZeroStiffness(usize),
}

/// Complex mode amplitudes of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalModeState {
    pub phi: Vec<Complex64>,
    pub pi: Vec<Complex64>,
    pub time: f64,
}

impl ClassicalModeState {
    pub fn zeros(spec: &LatticeSpec) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); spec.len()];
        Self {
            phi: z.clone(),
            pi: z,
            time: 0.0,
        }
    }

    /// Sets `φ(k_n)` and its partner `φ(−k_n) = conj(φ(k_n))`.
    pub fn set_phi(&mut self, spec: &LatticeSpec, idx: usize, value: Complex64) {
        set_paired(&mut self.phi, spec, idx, value);
    }

    pub fn set_pi(&mut self, spec: &LatticeSpec, idx: usize, value: Complex64) {
        set_paired(&mut self.pi, spec, idx, value);
    }

    /// `max_n |φ(−k_n) − conj(φ(k_n))|` over both fields, self-conjugate
    /// imaginary parts included.
    pub fn reality_residual(&self, spec: &LatticeSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for v in [&self.phi, &self.pi] {
            for idx in 0..v.len() {
                let j = spec.conj_index(idx);
                worst = worst.max((v[j] - v[idx].conj()).norm());
            }
        }
        worst
    }

    /// Projects onto the real-field subspace.
    pub fn enforce_reality(&mut self, spec: &LatticeSpec) {
        for v in [&mut self.phi, &mut self.pi] {
            for idx in 0..v.len() {
                let j = spec.conj_index(idx);
                if j == idx {
                    v[idx].im = 0.0;
                } else if j > idx {
                    let avg = (v[idx] + v[j].conj()) * 0.5;
                    v[idx] = avg;
                    v[j] = avg.conj();
                }
            }
        }
    }

    fn check_len(&self, spec: &LatticeSpec) -> Result<(), SdeError> {
        for v in [&self.phi, &self.pi] {
            if v.len() != spec.len() {
                return Err(SdeError::LengthMismatch {
                    expected: spec.len(),
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

fn set_paired(v: &mut [Complex64], spec: &LatticeSpec, idx: usize, value: Complex64) {
    let j = spec.conj_index(idx);
    if j == idx {
        v[idx] = Complex64::new(value.re, 0.0);
    } else {
        v[idx] = value;
        v[j] = value.conj();
    }
}

/// Real coordinates of one independent mode: `[φ, Π]` for self-conjugate
/// modes, `[Re φ, Re Π, Im φ, Im Π]` for a `±k` pair.
pub fn mode_coordinates(spec: &LatticeSpec, state: &ClassicalModeState, idx: usize) -> Vec<f64> {
    let (p, q) = (state.phi[idx], state.pi[idx]);
    if spec.is_self_conjugate(idx) {
        vec![p.re, q.re]
    } else {
        vec![p.re, q.re, p.im, q.im]
    }
}

/// Inverse of [`mode_coordinates`]; writes the partner mode too.
pub fn set_mode_coordinates(
    spec: &LatticeSpec,
    state: &mut ClassicalModeState,
    idx: usize,
    z: &[f64],
) {
    if spec.is_self_conjugate(idx) {
        state.set_phi(spec, idx, Complex64::new(z[0], 0.0));
        state.set_pi(spec, idx, Complex64::new(z[1], 0.0));
    } else {
        state.set_phi(spec, idx, Complex64::new(z[0], z[2]));
        state.set_pi(spec, idx, Complex64::new(z[1], z[3]));
    }
}

/// System Hamiltonian `H({Π, φ, b_t})` and the gradients the dynamics needs.
pub trait Hamiltonian: Send + Sync {
    fn spec(&self) -> &LatticeSpec;

    fn energy(&self, state: &ClassicalModeState, t: f64) -> f64;

    /// `∂H/∂φ(−k_n)` at index `n`.
    fn grad_phi(&self, state: &ClassicalModeState, t: f64) -> Vec<Complex64>;

    /// `∂H/∂Π(−k_n)` at index `n`.
    fn grad_pi(&self, state: &ClassicalModeState, t: f64) -> Vec<Complex64>;

    /// `Σ_n ∂H/∂b(k_n) Δb(k_n)` across one step, midpoint in the state.
    fn work_increment(
        &self,
        before: &ClassicalModeState,
        after: &ClassicalModeState,
        t0: f64,
        t1: f64,
    ) -> f64;

    fn as_free_field(&self) -> Option<&FreeField> {
        None
    }
}

/// `H = Δk Σ_n [c²/2 |Π_n|² + (λ_n² + b_t(k_n)²)/2 |φ_n|²]`.
#[derive(Debug, Clone)]
pub struct FreeField {
    spec: LatticeSpec,
    proto: MassProtocol,
    lambda_sq: Vec<f64>,
}

impl FreeField {
    pub fn new(spec: LatticeSpec, proto: MassProtocol) -> Self {
        let lambda_sq = (0..spec.len()).map(|i| spec.lambda(i).powi(2)).collect();
        Self {
            spec,
            proto,
            lambda_sq,
        }
    }

    pub fn protocol(&self) -> &MassProtocol {
        &self.proto
    }

    pub fn b(&self, idx: usize, t: f64) -> f64 {
        self.proto.b(self.spec.wavenumber(idx).abs(), t)
    }

    /// `λ² + b²`, so that `ω² = c²·stiffness`.
    pub fn stiffness(&self, idx: usize, t: f64) -> f64 {
        let b = self.b(idx, t);
        self.lambda_sq[idx] + b * b
    }

    /// `∂(λ² + b²)/∂t = 2 b ḃ`.
    pub fn stiffness_rate(&self, idx: usize, t: f64) -> f64 {
        let k = self.spec.wavenumber(idx).abs();
        2.0 * self.proto.b(k, t) * self.proto.db_dt(k, t)
    }

    pub fn omega(&self, idx: usize, t: f64) -> f64 {
        self.spec.c() * self.stiffness(idx, t).sqrt()
    }

    /// `∂H/∂b(k_n) = Δk b |φ_n|²` at index `n`.
    pub fn dh_db(&self, state: &ClassicalModeState, t: f64) -> Vec<f64> {
        (0..self.spec.len())
            .map(|i| self.spec.dk() * self.b(i, t) * state.phi[i].norm_sqr())
            .collect()
    }
}

impl Hamiltonian for FreeField {
    fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn energy(&self, state: &ClassicalModeState, t: f64) -> f64 {
        let c2 = self.spec.c().powi(2);
        let sum: f64 = (0..self.spec.len())
            .map(|i| {
                0.5 * c2 * state.pi[i].norm_sqr()
                    + 0.5 * self.stiffness(i, t) * state.phi[i].norm_sqr()
            })
            .sum();
        self.spec.dk() * sum
    }

    fn grad_phi(&self, state: &ClassicalModeState, t: f64) -> Vec<Complex64> {
        let dk = self.spec.dk();
        (0..self.spec.len())
            .map(|i| state.phi[i] * (dk * self.stiffness(i, t)))
            .collect()
    }

    fn grad_pi(&self, state: &ClassicalModeState, _t: f64) -> Vec<Complex64> {
        let f = self.spec.dk() * self.spec.c().powi(2);
        state.pi.iter().map(|p| p * f).collect()
    }

    fn work_increment(
        &self,
        before: &ClassicalModeState,
        after: &ClassicalModeState,
        t0: f64,
        t1: f64,
    ) -> f64 {
        // b̄·Δb = Δ(b²)/2 exactly
        let dk = self.spec.dk();
        (0..self.spec.len())
            .map(|i| {
                let d_b2 = self.b(i, t1).powi(2) - self.b(i, t0).powi(2);
                if d_b2 == 0.0 {
                    return 0.0;
                }
                let phi_sq = 0.5 * (before.phi[i].norm_sqr() + after.phi[i].norm_sqr());
                dk * 0.5 * d_b2 * phi_sq
            })
            .sum()
    }

    fn as_free_field(&self) -> Option<&FreeField> {
        Some(self)
    }
}

/// Wiener increments for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeNoise {
    pub d_b_phi: Vec<Complex64>,
    pub d_b_pi: Vec<Complex64>,
}

/// Paired modes get independent real and imaginary parts of variance `dt/2`
/// with `dB(−k) = conj(dB(k))`; self-conjugate modes get one real draw of
/// variance `dt`.
pub fn generate_mode_noise<R: Rng + ?Sized>(
    spec: &LatticeSpec,
    dt: f64,
    rng: &mut R,
) -> Result<ModeNoise, SdeError> {
    check_dt(dt)?;
    let m = spec.len();
    let mut d_b_phi = vec![Complex64::new(0.0, 0.0); m];
    let mut d_b_pi = d_b_phi.clone();
    let full = dt.sqrt();
    let half = (0.5 * dt).sqrt();
    for idx in spec.independent_modes() {
        for v in [&mut d_b_phi, &mut d_b_pi] {
            if spec.is_self_conjugate(idx) {
                let x: f64 = rng.sample(StandardNormal);
                v[idx] = Complex64::new(full * x, 0.0);
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let z = Complex64::new(half * re, half * im);
                v[idx] = z;
                v[spec.conj_index(idx)] = z.conj();
            }
        }
    }
    Ok(ModeNoise { d_b_phi, d_b_pi })
}

fn check_dt(dt: f64) -> Result<(), SdeError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(SdeError::BadStep(dt))
    }
}

/// `(γ_φ, γ_Π)` per mode index at time `t`.
pub fn couplings(
    spec: &LatticeSpec,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>), SdeError> {
    let m = spec.len();
    let mut gp = Vec::with_capacity(m);
    let mut gq = Vec::with_capacity(m);
    for idx in 0..m {
        let k = spec.wavenumber(idx).abs();
        let a = sched.gamma_phi(k, t);
        let b = sched.gamma_pi(k, t);
        if !(a >= 0.0) {
            return Err(SdeError::NegativeCoupling {
                which: "gamma_phi",
                k,
                t,
                value: a,
            });
        }
        if !(b >= 0.0) {
            return Err(SdeError::NegativeCoupling {
                which: "gamma_Pi",
                k,
                t,
                value: b,
            });
        }
        gp.push(a);
        gq.push(b);
    }
    Ok((gp, gq))
}

/// Deterministic part of the Langevin equations.
pub fn drift(
    state: &ClassicalModeState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    t: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>), SdeError> {
    let spec = h.spec();
    state.check_len(spec)?;
    let (gp, gq) = couplings(spec, sched, t)?;
    let g_phi = h.grad_phi(state, t);
    let g_pi = h.grad_pi(state, t);
    let inv = 1.0 / spec.dk();
    let dphi = (0..spec.len())
        .map(|i| (g_pi[i] - g_phi[i] * gp[i]) * inv)
        .collect();
    let dpi = (0..spec.len())
        .map(|i| -(g_phi[i] + g_pi[i] * gq[i]) * inv)
        .collect();
    Ok((dphi, dpi))
}

fn noise_amplitude(spec: &LatticeSpec, gamma: f64) -> f64 {
    (2.0 * gamma / (spec.dk() * spec.beta())).sqrt()
}

/// One Euler–Maruyama step.
pub fn step_em(
    state: &ClassicalModeState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    dt: f64,
    noise: &ModeNoise,
) -> Result<ClassicalModeState, SdeError> {
    check_dt(dt)?;
    let spec = h.spec();
    let t = state.time;
    let (dphi, dpi) = drift(state, h, sched, t)?;
    let (gp, gq) = couplings(spec, sched, t)?;
    let mut next = ClassicalModeState {
        phi: Vec::with_capacity(spec.len()),
        pi: Vec::with_capacity(spec.len()),
        time: t + dt,
    };
    for i in 0..spec.len() {
        let p = state.phi[i] + dphi[i] * dt + noise.d_b_phi[i] * noise_amplitude(spec, gp[i]);
        let q = state.pi[i] + dpi[i] * dt + noise.d_b_pi[i] * noise_amplitude(spec, gq[i]);
        if !(p.re.is_finite() && p.im.is_finite() && q.re.is_finite() && q.im.is_finite()) {
            return Err(SdeError::NonFinite {
                time: next.time,
                mode: i,
            });
        }
        next.phi.push(p);
        next.pi.push(q);
    }
    next.enforce_reality(spec);
    Ok(next)
}

/// Stratonovich heat increment for one step.
///
/// `dQ = Σ_n [−(γ_Π dt/Δk)|Ḡ_Π|² + σ_Π conj(Ḡ_Π) dB^Π + (same for φ)]` with
/// `Ḡ` the average of the gradients at the two ends of the step and the
/// couplings taken at the start, as in the state update.
pub fn accumulate_heat(
    before: &ClassicalModeState,
    after: &ClassicalModeState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    dt: f64,
    noise: &ModeNoise,
) -> Result<f64, SdeError> {
    check_dt(dt)?;
    let spec = h.spec();
    let (t0, t1) = (before.time, after.time);
    let (gp, gq) = couplings(spec, sched, t0)?;
    let gphi0 = h.grad_phi(before, t0);
    let gphi1 = h.grad_phi(after, t1);
    let gpi0 = h.grad_pi(before, t0);
    let gpi1 = h.grad_pi(after, t1);
    let mut total = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for i in 0..spec.len() {
        let terms = [
            (gq[i], (gpi0[i] + gpi1[i]) * 0.5, noise.d_b_pi[i]),
            (gp[i], (gphi0[i] + gphi1[i]) * 0.5, noise.d_b_phi[i]),
        ];
        for (gamma, g, db) in terms {
            if gamma == 0.0 {
                continue;
            }
            let friction = -gamma * dt / spec.dk() * g.norm_sqr();
            let kick = g.conj() * db * noise_amplitude(spec, gamma);
            scale += friction.abs() + kick.norm();
            total += kick + friction;
        }
    }
    if total.im.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(SdeError::ImaginaryHeat {
            residue: total.im.abs(),
            scale,
        });
    }
    Ok(total.re)
}

/// Work increment `Σ_n ∂H/∂b(k_n) db(k_n)` across one step.
pub fn accumulate_work(
    before: &ClassicalModeState,
    after: &ClassicalModeState,
    h: &dyn Hamiltonian,
) -> f64 {
    h.work_increment(before, after, before.time, after.time)
}

/// Time series sampled every `stride` steps (the initial state included).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub snapshots: Vec<ClassicalModeState>,
    pub energy: Vec<f64>,
    /// Cumulative heat since the start.
    pub heat: Vec<f64>,
    /// Cumulative work since the start.
    pub work: Vec<f64>,
    pub max_reality_residual: f64,
}

impl TrajectoryRecord {
    /// `ΔH − Q − W` at the final snapshot.
    pub fn first_law_residual(&self) -> f64 {
        let last = self.energy.len() - 1;
        self.energy[last] - self.energy[0] - self.heat[last] - self.work[last]
    }
}

/// RNG for trajectory `stream` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    init: &ClassicalModeState,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    dt: f64,
    steps: usize,
    seed: u64,
    stream: u64,
    stride: usize,
) -> Result<TrajectoryRecord, SdeError> {
    check_dt(dt)?;
    let spec = h.spec();
    init.check_len(spec)?;
    let stride = stride.max(1);
    let mut rng = trajectory_rng(seed, stream);
    let mut state = init.clone();
    state.enforce_reality(spec);
    let mut rec = TrajectoryRecord {
        times: vec![state.time],
        snapshots: vec![state.clone()],
        energy: vec![h.energy(&state, state.time)],
        heat: vec![0.0],
        work: vec![0.0],
        max_reality_residual: 0.0,
    };
    let (mut q, mut w) = (0.0, 0.0);
    for step in 1..=steps {
        let noise = generate_mode_noise(spec, dt, &mut rng)?;
        let next = step_em(&state, h, sched, dt, &noise)?;
        q += accumulate_heat(&state, &next, h, sched, dt, &noise)?;
        w += accumulate_work(&state, &next, h);
        state = next;
        if step % stride == 0 || step == steps {
            rec.max_reality_residual = rec.max_reality_residual.max(state.reality_residual(spec));
            rec.times.push(state.time);
            rec.energy.push(h.energy(&state, state.time));
            rec.heat.push(q);
            rec.work.push(w);
            rec.snapshots.push(state.clone());
        }
    }
    Ok(rec)
}

/// Initial ensemble: a fixed mean plus optional thermal fluctuations drawn
/// from the Gibbs distribution of the free field at inverse temperature
/// `thermal_beta`.
#[derive(Debug, Clone)]
pub struct InitialCondition {
    pub mean: ClassicalModeState,
    pub thermal_beta: Option<f64>,
}

impl InitialCondition {
    pub fn fixed(state: ClassicalModeState) -> Self {
        Self {
            mean: state,
            thermal_beta: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        h: &dyn Hamiltonian,
        rng: &mut R,
    ) -> Result<ClassicalModeState, SdeError> {
        let mut s = self.mean.clone();
        let Some(beta) = self.thermal_beta else {
            return Ok(s);
        };
        let ff = h.as_free_field().ok_or(SdeError::NotFreeField)?;
        let spec = h.spec();
        let t = s.time;
        let c2 = spec.c().powi(2);
        for idx in spec.independent_modes() {
            let a = ff.stiffness(idx, t);
            if a <= 0.0 {
                return Err(SdeError::ZeroStiffness(idx));
            }
            let weight = if spec.is_self_conjugate(idx) {
                1.0
            } else {
                2.0
            } * spec.dk();
            let sd_phi = (1.0 / (beta * weight * a)).sqrt();
            let sd_pi = (1.0 / (beta * weight * c2)).sqrt();
            let mut z = mode_coordinates(spec, &s, idx);
            for (j, zj) in z.iter_mut().enumerate() {
                let x: f64 = rng.sample(StandardNormal);
                *zj += x * if j % 2 == 0 { sd_phi } else { sd_pi };
            }
            set_mode_coordinates(spec, &mut s, idx, &z);
        }
        Ok(s)
    }
}

/// Ensemble sums at each checkpoint, merged in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub count: usize,
    pub times: Vec<f64>,
    /// Mode indices, in the order used by the per-mode vectors below.
    pub modes: Vec<usize>,
    sum_z: Vec<Vec<DVector<f64>>>,
    sum_zz: Vec<Vec<DMatrix<f64>>>,
    sum_zz_sq: Vec<Vec<DMatrix<f64>>>,
    sum_energy: Vec<f64>,
    sum_energy_sq: Vec<f64>,
    sum_heat: Vec<f64>,
    sum_work: Vec<f64>,
    sum_residual_sq: Vec<f64>,
    pub max_reality_residual: f64,
}

impl EnsembleStats {
    fn empty(spec: &LatticeSpec, times: Vec<f64>) -> Self {
        let modes = spec.independent_modes();
        let nc = times.len();
        let dims: Vec<usize> = modes
            .iter()
            .map(|&i| if spec.is_self_conjugate(i) { 2 } else { 4 })
            .collect();
        let per = |f: &dyn Fn(usize) -> DMatrix<f64>| -> Vec<Vec<DMatrix<f64>>> {
            (0..nc)
                .map(|_| dims.iter().map(|&d| f(d)).collect())
                .collect()
        };
        Self {
            count: 0,
            times,
            sum_z: (0..nc)
                .map(|_| dims.iter().map(|&d| DVector::zeros(d)).collect())
                .collect(),
            sum_zz: per(&|d| DMatrix::zeros(d, d)),
            sum_zz_sq: per(&|d| DMatrix::zeros(d, d)),
            modes,
            sum_energy: vec![0.0; nc],
            sum_energy_sq: vec![0.0; nc],
            sum_heat: vec![0.0; nc],
            sum_work: vec![0.0; nc],
            sum_residual_sq: vec![0.0; nc],
            max_reality_residual: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        c: usize,
        spec: &LatticeSpec,
        state: &ClassicalModeState,
        e: f64,
        q: f64,
        w: f64,
        e0: f64,
    ) {
        for (m, &idx) in self.modes.iter().enumerate() {
            let z = DVector::from_vec(mode_coordinates(spec, state, idx));
            let zz = &z * z.transpose();
            self.sum_zz_sq[c][m] += zz.component_mul(&zz);
            self.sum_zz[c][m] += zz;
            self.sum_z[c][m] += z;
        }
        self.sum_energy[c] += e;
        self.sum_energy_sq[c] += e * e;
        self.sum_heat[c] += q;
        self.sum_work[c] += w;
        self.sum_residual_sq[c] += (e - e0 - q - w).powi(2);
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for c in 0..self.times.len() {
            for m in 0..self.modes.len() {
                self.sum_z[c][m] += &other.sum_z[c][m];
                self.sum_zz[c][m] += &other.sum_zz[c][m];
                self.sum_zz_sq[c][m] += &other.sum_zz_sq[c][m];
            }
            self.sum_energy[c] += other.sum_energy[c];
            self.sum_energy_sq[c] += other.sum_energy_sq[c];
            self.sum_heat[c] += other.sum_heat[c];
            self.sum_work[c] += other.sum_work[c];
            self.sum_residual_sq[c] += other.sum_residual_sq[c];
        }
        self.max_reality_residual = self.max_reality_residual.max(other.max_reality_residual);
    }

    fn n(&self) -> f64 {
        self.count as f64
    }

    pub fn mean(&self, checkpoint: usize, mode: usize) -> DVector<f64> {
        &self.sum_z[checkpoint][mode] / self.n()
    }

    /// Raw second moments `E[z zᵀ]`.
    pub fn second_moment(&self, checkpoint: usize, mode: usize) -> DMatrix<f64> {
        &self.sum_zz[checkpoint][mode] / self.n()
    }

    /// Standard error of each entry of [`Self::mean`].
    pub fn mean_stderr(&self, checkpoint: usize, mode: usize) -> DVector<f64> {
        let m = self.mean(checkpoint, mode);
        let s = self.second_moment(checkpoint, mode);
        DVector::from_fn(m.len(), |i, _| {
            ((s[(i, i)] - m[i] * m[i]).max(0.0) / self.n()).sqrt()
        })
    }

    /// Standard error of each entry of [`Self::second_moment`].
    pub fn second_moment_stderr(&self, checkpoint: usize, mode: usize) -> DMatrix<f64> {
        let s = self.second_moment(checkpoint, mode);
        let q = &self.sum_zz_sq[checkpoint][mode] / self.n();
        DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
            ((q[(i, j)] - s[(i, j)].powi(2)).max(0.0) / self.n()).sqrt()
        })
    }

    pub fn mean_energy(&self, checkpoint: usize) -> f64 {
        self.sum_energy[checkpoint] / self.n()
    }

    pub fn energy_stderr(&self, checkpoint: usize) -> f64 {
        let m = self.mean_energy(checkpoint);
        ((self.sum_energy_sq[checkpoint] / self.n() - m * m).max(0.0) / self.n()).sqrt()
    }

    pub fn mean_heat(&self, checkpoint: usize) -> f64 {
        self.sum_heat[checkpoint] / self.n()
    }

    pub fn mean_work(&self, checkpoint: usize) -> f64 {
        self.sum_work[checkpoint] / self.n()
    }

    /// Root-mean-square of the per-trajectory `ΔH − Q − W`.
    pub fn rms_first_law_residual(&self, checkpoint: usize) -> f64 {
        (self.sum_residual_sq[checkpoint] / self.n()).sqrt()
    }
}

/// Parameters of an ensemble run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub steps: usize,
    /// Checkpoint every `stride` steps (plus the initial state).
    pub stride: usize,
    pub seed: u64,
}

const BATCH: usize = 256;

/// Runs `trajectories` independent paths in fixed batches. Trajectory `i`
/// uses RNG stream `i`, and batch sums are merged sequentially, so the
/// result does not depend on the worker count.
pub fn run_ensemble(
    init: &InitialCondition,
    h: &dyn Hamiltonian,
    sched: &CouplingSchedule,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats, SdeError> {
    check_dt(cfg.dt)?;
    let spec = h.spec();
    init.mean.check_len(spec)?;
    let stride = cfg.stride.max(1);
    let t0 = init.mean.time;
    let mut times = vec![t0];
    let mut step = stride;
    while step <= cfg.steps {
        times.push(t0 + step as f64 * cfg.dt);
        step += stride;
    }
    let n_batches = cfg.trajectories.div_ceil(BATCH);
    let batches: Vec<Result<EnsembleStats, SdeError>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut stats = EnsembleStats::empty(spec, times.clone());
            let lo = b * BATCH;
            let hi = (lo + BATCH).min(cfg.trajectories);
            for traj in lo..hi {
                let mut rng = trajectory_rng(cfg.seed, traj as u64);
                let mut state = init.sample(h, &mut rng)?;
                state.enforce_reality(spec);
                let e0 = h.energy(&state, state.time);
                stats.record(0, spec, &state, e0, 0.0, 0.0, e0);
                let (mut q, mut w) = (0.0, 0.0);
                for s in 1..=cfg.steps {
                    let noise = generate_mode_noise(spec, cfg.dt, &mut rng)?;
                    let next = step_em(&state, h, sched, cfg.dt, &noise)?;
                    q += accumulate_heat(&state, &next, h, sched, cfg.dt, &noise)?;
                    w += accumulate_work(&state, &next, h);
                    state = next;
                    if s % stride == 0 {
                        stats.max_reality_residual =
                            stats.max_reality_residual.max(state.reality_residual(spec));
                        let e = h.energy(&state, state.time);
                        stats.record(s / stride, spec, &state, e, q, w, e0);
                    }
                }
                stats.count += 1;
            }
            Ok(stats)
        })
        .collect();
    let mut total = EnsembleStats::empty(spec, times);
    for b in batches {
        total.merge(&b?);
    }
    Ok(total)
}
