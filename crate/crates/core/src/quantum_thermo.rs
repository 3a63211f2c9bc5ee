//! Quantum heat, work, von Neumann entropy, entropy production and the
//! relative-entropy bookkeeping of a single mode, plus the classical-limit
//! comparison against the Gaussian moment dynamics.

use nalgebra::DVector;
use thiserror::Error;

use crate::classical_sde::FreeField;
use crate::classical_thermo::{mean_energy, propagate_moments, GaussianMomentState, ThermoError};
use crate::lattice::{LatticeError, LatticeSpec};
use crate::linalg::{c, herm_eig, CMat};
use crate::protocol::{CouplingSchedule, MassProtocol};
use crate::quantum_master::{
    build_gksl_rates, detailed_balance_gamma_pi, evolve, DrivenMode, GKSLRates, Generator,
    ModeOperators, QuantumError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QThermoError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Classical(#[from] ThermoError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("density matrix has eigenvalue {0:e} below the clamp threshold")]
    NotPsd(f64),
    #[error("expected {expected}x{expected} matrices, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{what} has imaginary part {value:e}")]
    NotReal { what: &'static str, value: f64 },
    #[error("history needs at least {0} points")]
    ShortHistory(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Eigenvalues in `[−1e−12, 0)` are treated as zero; anything lower is an error.
const CLAMP: f64 = 1e-12;
/// Populations below this are kept out of logarithms.
pub const POPULATION_FLOOR: f64 = 1e-14;

fn same_dim(a: &CMat, b: &CMat) -> Result<(), QThermoError> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(QThermoError::Dimension {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(())
}

fn real_trace(m: &CMat, what: &'static str, scale: f64) -> Result<f64, QThermoError> {
    let t = m.trace();
    if t.im.abs() > 1e-12 * scale.max(1.0) {
        return Err(QThermoError::NotReal { what, value: t.im });
    }
    Ok(t.re)
}

pub fn mode_energy(rho: &CMat, h: &CMat) -> Result<f64, QThermoError> {
    same_dim(rho, h)?;
    real_trace(&(rho * h), "energy", h.norm())
}

/// `Q̇ = Tr[(dρ/dt) H]`.
pub fn q_heat_rate(rho: &CMat, rhs: &CMat, h: &CMat) -> Result<f64, QThermoError> {
    same_dim(rho, rhs)?;
    same_dim(rho, h)?;
    real_trace(&(rhs * h), "heat rate", rhs.norm() * h.norm())
}

/// `Ẇ = Tr[ρ ∂H/∂b] ḃ`.
pub fn q_work_rate(rho: &CMat, dh_db: &CMat, db_dt: f64) -> Result<f64, QThermoError> {
    if db_dt == 0.0 {
        return Ok(0.0);
    }
    same_dim(rho, dh_db)?;
    Ok(real_trace(&(rho * dh_db), "work rate", dh_db.norm())? * db_dt)
}

fn spectrum(rho: &CMat) -> Result<(Vec<f64>, CMat), QThermoError> {
    let (mut vals, vecs) = herm_eig(rho);
    for v in &mut vals {
        if *v < 0.0 {
            if *v < -CLAMP {
                return Err(QThermoError::NotPsd(*v));
            }
            *v = 0.0;
        }
    }
    Ok((vals, vecs))
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `S = −k_B Tr ρ ln ρ`.
pub fn von_neumann_entropy(rho: &CMat, kb: f64) -> Result<f64, QThermoError> {
    let (vals, _) = spectrum(rho)?;
    Ok(-kb * vals.iter().map(|&p| xlnx(p)).sum::<f64>())
}

/// Entropy production and whether the population floor was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Production {
    pub value: f64,
    pub floor_triggered: bool,
}

/// `dS/dt − Q̇/T` for the GKSL generator with jumps `L₊ = a`, `L₋ = a†`,
/// assembled in the eigenbasis `ρ = Σ P_n |n⟩⟨n|` as
///
/// ```text
/// (k_B/2) Σ_{n,m,±} (R±_{nm} P_m − R∓_{mn} P_n) ln(R±_{nm} P_m / (R∓_{mn} P_n)),
/// R±_{nm} = (γ±/ħ)|⟨n|L±|m⟩|².
/// ```
///
/// Each term is non-negative.
pub fn second_law_production(
    rho: &CMat,
    rates: &GKSLRates,
    ops: &ModeOperators,
    kb: f64,
) -> Result<Production, QThermoError> {
    same_dim(rho, &ops.a)?;
    let (p, v) = spectrum(rho)?;
    let dim = p.len();
    let vd = v.adjoint();
    let lp = &vd * &ops.a * &v;
    let lm = &vd * &ops.adag * &v;
    let rp = |n: usize, m: usize| rates.gamma_plus / ops.hbar * lp[(n, m)].norm_sqr();
    let rm = |n: usize, m: usize| rates.gamma_minus / ops.hbar * lm[(n, m)].norm_sqr();
    let mut total = 0.0;
    let mut floor = false;
    for n in 0..dim {
        for m in 0..dim {
            if p[n] < POPULATION_FLOOR && p[m] < POPULATION_FLOOR {
                continue;
            }
            // forward jump m → n through L₊ paired with n → m through L₋, and vice versa
            for (fwd, bwd) in [(rp(n, m), rm(m, n)), (rm(n, m), rp(m, n))] {
                if fwd == 0.0 && bwd == 0.0 {
                    continue;
                }
                let (pm, pn) = (p[m], p[n]);
                let x = fwd * pm;
                let y = bwd * pn;
                let (lx, ly) = if pm < POPULATION_FLOOR || pn < POPULATION_FLOOR {
                    floor = true;
                    (
                        fwd * pm.max(POPULATION_FLOOR),
                        bwd * pn.max(POPULATION_FLOOR),
                    )
                } else {
                    (x, y)
                };
                if lx > 0.0 && ly > 0.0 {
                    total += (x - y) * (lx / ly).ln();
                }
            }
        }
    }
    Ok(Production {
        value: 0.5 * kb * total,
        floor_triggered: floor,
    })
}

/// `ln Z` and `⟨O⟩⋆` helpers for `ρ⋆ = e^{−βH}/Z`.
struct GibbsView {
    ln_z: f64,
    rho_star: CMat,
}

fn gibbs_view(h: &CMat, beta: f64) -> GibbsView {
    let (vals, vecs) = herm_eig(h);
    let e0 = vals[0];
    let w: Vec<f64> = vals.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    let d = CMat::from_diagonal(&DVector::from_fn(vals.len(), |i, _| c(w[i] / z)));
    GibbsView {
        ln_z: z.ln() - beta * e0,
        rho_star: &vecs * d * vecs.adjoint(),
    }
}

/// `S_rel(ρ‖ρ⋆) = Tr ρ ln ρ − Tr ρ ln ρ⋆` in nats.
pub fn relative_entropy(rho: &CMat, h: &CMat, beta: f64) -> Result<f64, QThermoError> {
    same_dim(rho, h)?;
    let (vals, _) = spectrum(rho)?;
    let neg_s: f64 = vals.iter().map(|&p| xlnx(p)).sum();
    let g = gibbs_view(h, beta);
    let e = mode_energy(rho, h)?;
    Ok(neg_s + beta * e + g.ln_z)
}

/// One sample of a driven evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub t: f64,
    pub rho: CMat,
    pub h: CMat,
    pub dh_dt: CMat,
    pub heat_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelEntRecord {
    pub t: f64,
    pub s_rel: f64,
    pub tilde_s_rel: f64,
    /// `|d(tilde)/dt − [(1/k_B) dS/dt − βQ̇]|` relative to the larger side;
    /// central differences, so absent at the two ends.
    pub identity_residual: Option<f64>,
}

/// Relative entropy, the modified quantity
/// `tilde = −S_rel − ∫ Tr[ρ ∂_s ln ρ⋆] ds` (trapezoid rule), and the residual of
/// `(1/k_B) dS_QT/dt − βQ̇ = d(tilde)/dt` on a uniform time grid.
pub fn relative_entropy_suite(
    history: &[HistoryPoint],
    beta: f64,
    kb: f64,
) -> Result<Vec<RelEntRecord>, QThermoError> {
    if history.len() < 3 {
        return Err(QThermoError::ShortHistory(3));
    }
    let mut s_rel = Vec::with_capacity(history.len());
    let mut s_vn = Vec::with_capacity(history.len());
    let mut integrand = Vec::with_capacity(history.len());
    for hp in history {
        s_rel.push(relative_entropy(&hp.rho, &hp.h, beta)?);
        s_vn.push(von_neumann_entropy(&hp.rho, kb)?);
        let g = gibbs_view(&hp.h, beta);
        let along = mode_energy(&hp.rho, &hp.dh_dt)?;
        let star = mode_energy(&g.rho_star, &hp.dh_dt)?;
        integrand.push(-beta * along + beta * star);
    }
    let mut integral = vec![0.0; history.len()];
    for i in 1..history.len() {
        let dt = history[i].t - history[i - 1].t;
        integral[i] = integral[i - 1] + 0.5 * dt * (integrand[i] + integrand[i - 1]);
    }
    let tilde: Vec<f64> = s_rel.iter().zip(&integral).map(|(s, i)| -s - i).collect();
    let last = history.len() - 1;
    Ok((0..history.len())
        .map(|i| {
            let identity_residual = (i > 0 && i < last).then(|| {
                let span = history[i + 1].t - history[i - 1].t;
                let d_tilde = (tilde[i + 1] - tilde[i - 1]) / span;
                let ds = (s_vn[i + 1] - s_vn[i - 1]) / span / kb;
                let bq = beta * history[i].heat_rate;
                let scale = ds
                    .abs()
                    .max(bq.abs())
                    .max(d_tilde.abs())
                    .max(f64::MIN_POSITIVE);
                (d_tilde - (ds - bq)).abs() / scale
            });
            RelEntRecord {
                t: history[i].t,
                s_rel: s_rel[i],
                tilde_s_rel: tilde[i],
                identity_residual,
            }
        })
        .collect())
}

/// Thermodynamic record of one mode at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QThermoRecord {
    pub t: f64,
    pub energy: f64,
    pub heat_rate: f64,
    pub work_rate: f64,
    pub s_qt: f64,
    /// Only available for the detailed-balance (GKSL) drive.
    pub production_rate: Option<f64>,
    pub s_rel: f64,
    pub tilde_s_rel: f64,
    pub min_eigenvalue: f64,
    pub cptp: bool,
}

/// Outcome of [`run_driven`].
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenRun {
    pub records: Vec<QThermoRecord>,
    /// `E(t₁) − E(t₀) − ∫Q̇ − ∫Ẇ` over the whole run.
    pub first_law_residual: f64,
    pub heat: f64,
    pub work: f64,
    pub max_identity_residual: f64,
    pub floor_triggered: bool,
    /// Times at which the smallest eigenvalue of ρ fell below −1e−10.
    /// Entropies are reported as NaN from the first sample below −1e−12 on.
    pub positivity_violations: Vec<(f64, f64)>,
}

/// Evolves one driven mode with RK4, sampling every step for the quadratures
/// and recording every `stride` steps.
pub fn run_driven(
    gen: &DrivenMode,
    rho0: &CMat,
    t0: f64,
    dt: f64,
    steps: usize,
    stride: usize,
    kb: f64,
) -> Result<DrivenRun, QThermoError> {
    let ev = evolve(rho0, gen, t0, dt, steps, 1)?;
    let mut history = Vec::with_capacity(ev.states.len());
    let mut work_rates = Vec::with_capacity(ev.states.len());
    let mut energies = Vec::with_capacity(ev.states.len());
    for (&t, rho) in ev.times.iter().zip(&ev.states) {
        let ops = gen.ops_at(t)?;
        let rhs = gen.rhs(t, rho)?;
        let dh_dt = gen.dh_dt(t)?;
        energies.push(mode_energy(rho, &ops.h_mode)?);
        work_rates.push(q_work_rate(rho, &ops.dh_db(gen.b(t)), gen.db_dt(t))?);
        history.push(HistoryPoint {
            t,
            rho: rho.clone(),
            heat_rate: q_heat_rate(rho, &rhs, &ops.h_mode)?,
            h: ops.h_mode,
            dh_dt,
        });
    }
    let min_eigs: Vec<f64> = history.iter().map(|hp| herm_eig(&hp.rho).0[0]).collect();
    // entropies are undefined once ρ leaves the PSD cone; keep the run going
    let valid = min_eigs
        .iter()
        .position(|&v| v < -CLAMP)
        .unwrap_or(history.len());
    let rel = if valid >= 3 {
        relative_entropy_suite(&history[..valid], gen.beta, kb)?
    } else {
        Vec::new()
    };
    let (mut heat, mut work) = (0.0, 0.0);
    for i in 1..history.len() {
        let h = history[i].t - history[i - 1].t;
        heat += 0.5 * h * (history[i].heat_rate + history[i - 1].heat_rate);
        work += 0.5 * h * (work_rates[i] + work_rates[i - 1]);
    }
    let stride = stride.max(1);
    let mut records = Vec::new();
    let mut floor_triggered = false;
    let mut positivity_violations = Vec::new();
    let last = history.len() - 1;
    for (i, hp) in history.iter().enumerate() {
        if min_eigs[i] < -1e-10 {
            positivity_violations.push((hp.t, min_eigs[i]));
        }
        if i % stride != 0 && i != last {
            continue;
        }
        let production_rate = match gen.gamma_pi {
            None if i < valid => {
                let ops = gen.ops_at(hp.t)?;
                let rates = gen.rates_at(hp.t)?;
                let p = second_law_production(&hp.rho, &rates, &ops, kb)?;
                floor_triggered |= p.floor_triggered;
                Some(p.value)
            }
            _ => None,
        };
        let (s_qt, s_rel, tilde_s_rel) = if i < rel.len() {
            (
                von_neumann_entropy(&hp.rho, kb)?,
                rel[i].s_rel,
                rel[i].tilde_s_rel,
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        records.push(QThermoRecord {
            t: hp.t,
            energy: energies[i],
            heat_rate: hp.heat_rate,
            work_rate: work_rates[i],
            s_qt,
            production_rate,
            s_rel,
            tilde_s_rel,
            min_eigenvalue: min_eigs[i],
            cptp: gen.dissipator_at(hp.t)?.cptp,
        });
    }
    let max_identity_residual = rel
        .iter()
        .filter_map(|r| r.identity_residual)
        .fold(0.0, f64::max);
    Ok(DrivenRun {
        first_law_residual: energies[last] - energies[0] - heat - work,
        heat,
        work,
        max_identity_residual,
        floor_triggered,
        positivity_violations,
        records,
    })
}

/// Stationary occupation from the birth–death chain `P_{n+1}/P_n = γ₋/γ₊`,
/// summed until the tail mass drops below `tail`.
pub fn stationary_occupation(rates: &GKSLRates, tail: f64) -> Result<(f64, usize), QThermoError> {
    let r = rates.gamma_minus / rates.gamma_plus;
    if !(r > 0.0 && r < 1.0) {
        return Err(QThermoError::Invalid(format!(
            "rate ratio {r} must lie in (0, 1)"
        )));
    }
    let (mut z, mut nz, mut p, mut n) = (0.0, 0.0, 1.0, 0usize);
    loop {
        z += p;
        nz += n as f64 * p;
        // remaining mass Σ_{j>n} r^j / Σ_{j≤n} r^j
        let rest = p * r / (1.0 - r);
        if rest < tail * z {
            break;
        }
        p *= r;
        n += 1;
    }
    Ok((nz / z, n + 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalLimitRow {
    pub hbar: f64,
    pub beta_hbar_omega: f64,
    /// `ħω(n̄ + ½)/(k_B T)` from the birth–death chain.
    pub energy_ratio: f64,
    /// `(βħω/2) coth(βħω/2)`.
    pub planck_ratio: f64,
    pub levels: usize,
    /// `sup_t |E_q(t) − E_c(t)| / (k_B T)` for relaxation from the Gibbs state at `β/2`.
    pub relaxation_sup_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalLimitReport {
    pub rows: Vec<ClassicalLimitRow>,
    /// Relaxation deviations strictly decrease along the sequence.
    pub monotone: bool,
}

/// Compares the quantum mode against the classical moment dynamics along a
/// decreasing `ħ` sequence. The classical side is the `k = 0` mode of a
/// two-point-per-half lattice with `b = ω/c`, so that its frequency is `ω`.
pub fn classical_limit_check(
    gamma_phi: f64,
    omega: f64,
    c_speed: f64,
    beta: f64,
    hbar_sequence: &[f64],
    t_end: f64,
    samples: usize,
) -> Result<ClassicalLimitReport, QThermoError> {
    if samples < 2 || !(t_end > 0.0) {
        return Err(QThermoError::Invalid(
            "need t_end > 0 and at least two samples".into(),
        ));
    }
    let spec = LatticeSpec::new(2, 2.0 * std::f64::consts::PI, c_speed, 1.0, beta)?;
    let ff = FreeField::new(spec.clone(), MassProtocol::constant(omega / c_speed));
    let gq = detailed_balance_gamma_pi(gamma_phi, omega, c_speed);
    let sched = CouplingSchedule::constant(gamma_phi, gq);
    let idx = spec.mode_index(0);
    let mut hot = GaussianMomentState::gibbs(&ff, 0.0, 0.5 * beta)?;
    hot.modes.retain(|m| m.index == idx);
    let dt_sample = t_end / (samples - 1) as f64;
    let substeps = ((dt_sample / 1e-3).ceil() as usize).max(1);
    let mut classical = vec![mean_energy(&hot, &ff, 0.0)?];
    let mut cur = hot;
    for _ in 1..samples {
        cur = propagate_moments(&cur, &ff, &sched, dt_sample / substeps as f64, substeps)?;
        classical.push(mean_energy(&cur, &ff, cur.time)?);
    }
    let mut rows = Vec::with_capacity(hbar_sequence.len());
    for &hbar in hbar_sequence {
        let rates = build_gksl_rates(gamma_phi, omega, beta, hbar, c_speed)?;
        let (nbar, levels) = stationary_occupation(&rates, 1e-14)?;
        let hot_rates = build_gksl_rates(gamma_phi, omega, 0.5 * beta, hbar, c_speed)?;
        let (n_hot, _) = stationary_occupation(&hot_rates, 1e-14)?;
        let x = beta * hbar * omega;
        let energy_ratio = x * (nbar + 0.5);
        let theta = 0.5 * x;
        let planck_ratio = theta / theta.tanh();
        let gamma = (rates.gamma_plus - rates.gamma_minus) / hbar;
        let mut sup: f64 = 0.0;
        for (i, e_c) in classical.iter().enumerate() {
            let t = i as f64 * dt_sample;
            let n_t = nbar + (n_hot - nbar) * (-gamma * t).exp();
            let e_q = hbar * omega * (n_t + 0.5);
            sup = sup.max((e_q - e_c).abs() * beta);
        }
        rows.push(ClassicalLimitRow {
            hbar,
            beta_hbar_omega: x,
            energy_ratio,
            planck_ratio,
            levels,
            relaxation_sup_dev: sup,
        });
    }
    let monotone = rows
        .windows(2)
        .all(|w| w[1].relaxation_sup_dev < w[0].relaxation_sup_dev);
    Ok(ClassicalLimitReport { rows, monotone })
}
