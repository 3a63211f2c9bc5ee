use nalgebra::DVector;
use num_complex::Complex64;

use scalar_thermo::classical_sde::{
    run_ensemble, run_trajectory, set_mode_coordinates, trajectory_rng, ClassicalModeState,
    EnsembleConfig, FreeField, InitialCondition,
};
use scalar_thermo::classical_thermo::{
    entropy_record, kl_divergence, mean_energy, propagate_moments, stationary_covariance,
    GaussianMomentState, ThermoError,
};
use scalar_thermo::lattice::{build_derivative, eigenbasis, LatticeSpec};
use scalar_thermo::protocol::{CouplingSchedule, MassProtocol};
use scalar_thermo::quantum_master::{
    build_gksl_rates, build_l_matrix, build_mode_operators, cptp_all_temperatures, cptp_scan,
    detailed_balance_gamma_pi, general_qme_rhs, gksl_rhs, interior_difference, log_grid,
    steady_state, DrivenMode, FockDensityMatrix, QuantumError,
};
use scalar_thermo::quantum_thermo::{
    classical_limit_check, q_heat_rate, run_driven, second_law_production, QThermoError,
};
use scalar_thermo::CMat;

use crate::config::ScenarioConfig;
use crate::output::{ResultBundle, Table};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn numerical<E: std::fmt::Display>(e: E) -> CommandError {
    CommandError::Numerical(e.to_string())
}

fn finite_or_fail(name: &str, v: f64) -> Result<f64, CommandError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CommandError::Numerical(format!("{name} is not finite")))
    }
}

fn initial_classical(cfg: &ScenarioConfig, spec: &LatticeSpec) -> InitialCondition {
    let mut mean = ClassicalModeState::zeros(spec);
    let a = cfg.initial.phi_amplitude;
    for idx in spec.independent_modes() {
        let z = if spec.is_self_conjugate(idx) {
            vec![a, 0.0]
        } else {
            vec![a, 0.0, 0.0, 0.0]
        };
        set_mode_coordinates(spec, &mut mean, idx, &z);
    }
    InitialCondition {
        mean,
        thermal_beta: cfg.initial.beta,
    }
}

/// Ensemble run with the exact moment dynamics alongside.
pub fn classical_run(cfg: &ScenarioConfig) -> Result<ResultBundle, CommandError> {
    let spec = cfg.lattice_spec();
    let proto = cfg.mass_protocol();
    let h = FreeField::new(spec.clone(), proto);
    let sched = cfg.couplings(&spec);
    let init = initial_classical(cfg, &spec);
    let run = &cfg.run;
    let ens = EnsembleConfig {
        trajectories: run.ensemble,
        dt: run.dt,
        steps: run.steps,
        stride: run.stride,
        seed: run.seed,
    };
    let stats = run_ensemble(&init, &h, &sched, &ens).map_err(numerical)?;

    let mut out = ResultBundle::default();
    let start = init
        .sample(&h, &mut trajectory_rng(run.seed, 0))
        .map_err(numerical)?;
    let rec = run_trajectory(
        &start, &h, &sched, run.dt, run.steps, run.seed, 0, run.stride,
    )
    .map_err(numerical)?;
    let mut traj = Table::new(
        "trajectory",
        &["t", "energy", "heat", "work", "first_law_residual"],
    );
    for i in 0..rec.times.len() {
        let res = rec.energy[i] - rec.energy[0] - rec.heat[i] - rec.work[i];
        traj.push(vec![
            rec.times[i].into(),
            finite_or_fail("energy", rec.energy[i])?.into(),
            rec.heat[i].into(),
            rec.work[i].into(),
            res.into(),
        ]);
    }

    let mut mom = match init.thermal_beta {
        Some(b) => GaussianMomentState::gibbs(&h, init.mean.time, b).map_err(numerical)?,
        None => GaussianMomentState::from_state(&h, &init.mean),
    };
    if init.thermal_beta.is_some() {
        let point = GaussianMomentState::from_state(&h, &init.mean);
        for (m, p) in mom.modes.iter_mut().zip(point.modes) {
            m.mean = p.mean;
        }
    }
    let mut moments = Table::new(
        "moments",
        &[
            "t", "mode", "kind", "i", "j", "ensemble", "stderr", "oracle", "z",
        ],
    );
    let mut laws = Table::new(
        "laws",
        &[
            "t",
            "energy_mc",
            "energy_stderr",
            "energy_oracle",
            "heat_mc",
            "work_mc",
            "rms_first_law_residual",
            "entropy",
            "entropy_rate",
            "heat_rate",
            "production_rate",
            "kl_divergence",
            "kl_rate",
        ],
    );
    let mut max_z: f64 = 0.0;
    let mut min_production = f64::INFINITY;
    for cp in 0..stats.times.len() {
        if cp > 0 {
            mom = propagate_moments(&mom, &h, &sched, run.dt, run.stride).map_err(numerical)?;
        }
        let t = stats.times[cp];
        for (mi, m) in mom.modes.iter().enumerate() {
            let n = spec.mode_number(m.index);
            let mean = stats.mean(cp, mi);
            let se = stats.mean_stderr(cp, mi);
            for i in 0..mean.len() {
                let z = if se[i] > 0.0 {
                    (mean[i] - m.mean[i]) / se[i]
                } else {
                    f64::NAN
                };
                if cp > 0 && z.is_finite() {
                    max_z = max_z.max(z.abs());
                }
                moments.push(vec![
                    t.into(),
                    n.into(),
                    "mean".into(),
                    i.into(),
                    0usize.into(),
                    mean[i].into(),
                    se[i].into(),
                    m.mean[i].into(),
                    z.into(),
                ]);
            }
            let raw = &m.cov + &m.mean * m.mean.transpose();
            let second = stats.second_moment(cp, mi);
            let se2 = stats.second_moment_stderr(cp, mi);
            for i in 0..raw.nrows() {
                for j in i..raw.ncols() {
                    let z = if se2[(i, j)] > 0.0 {
                        (second[(i, j)] - raw[(i, j)]) / se2[(i, j)]
                    } else {
                        f64::NAN
                    };
                    if cp > 0 && z.is_finite() {
                        max_z = max_z.max(z.abs());
                    }
                    moments.push(vec![
                        t.into(),
                        n.into(),
                        "second".into(),
                        i.into(),
                        j.into(),
                        finite_or_fail("second moment", second[(i, j)])?.into(),
                        se2[(i, j)].into(),
                        raw[(i, j)].into(),
                        z.into(),
                    ]);
                }
            }
        }
        // entropies need a non-degenerate covariance
        let (s, ds, q, p) = match entropy_record(&mom, &h, &sched) {
            Ok(r) => (r.s_st, r.ds_dt, r.heat_rate, r.production_rate),
            Err(ThermoError::Singular { .. }) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            Err(e) => return Err(numerical(e)),
        };
        let (kl, dkl) = match kl_divergence(&mom, &h, &sched, t) {
            Ok(r) => (r.s_kl, r.ds_kl_dt),
            Err(ThermoError::Singular { .. }) => (f64::NAN, f64::NAN),
            Err(e) => return Err(numerical(e)),
        };
        if p.is_finite() {
            min_production = min_production.min(p);
        }
        laws.push(vec![
            t.into(),
            stats.mean_energy(cp).into(),
            stats.energy_stderr(cp).into(),
            mean_energy(&mom, &h, t).map_err(numerical)?.into(),
            stats.mean_heat(cp).into(),
            stats.mean_work(cp).into(),
            stats.rms_first_law_residual(cp).into(),
            s.into(),
            ds.into(),
            q.into(),
            p.into(),
            kl.into(),
            dkl.into(),
        ]);
    }
    let last = stats.times.len() - 1;
    out.scalar("trajectories", stats.count as f64);
    out.scalar("final_mean_energy", stats.mean_energy(last));
    out.scalar("final_mean_heat", stats.mean_heat(last));
    out.scalar("final_mean_work", stats.mean_work(last));
    out.scalar(
        "final_rms_first_law_residual",
        stats.rms_first_law_residual(last),
    );
    out.scalar("max_moment_z", max_z);
    out.scalar("min_production_rate", min_production);
    out.scalar("max_reality_residual", stats.max_reality_residual);
    out.check("production_non_negative", !(min_production < -1e-10));
    out.check("moments_within_5_stderr", max_z < 5.0);
    out.tables = vec![traj, moments, laws];
    Ok(out)
}

fn initial_quantum(cfg: &ScenarioConfig, gen: &DrivenMode) -> Result<CMat, CommandError> {
    let dim = cfg.run.fock_truncation + 1;
    let ini = &cfg.initial;
    let omega = gen.omega(0.0);
    let state = if let Some(a) = &ini.amplitudes {
        let mut psi = DVector::<Complex64>::zeros(dim);
        for (i, &x) in a.iter().enumerate() {
            psi[i] = Complex64::new(x, 0.0);
        }
        FockDensityMatrix::pure(&psi.normalize(), omega)
    } else if let Some(n) = ini.fock {
        Ok(FockDensityMatrix::fock(dim, n, omega))
    } else {
        let ops = gen.ops_at(0.0).map_err(numerical)?;
        FockDensityMatrix::gibbs(&ops, ini.beta.unwrap_or(gen.beta))
    };
    Ok(state.map_err(numerical)?.rho)
}

fn quantum_failure(e: QThermoError) -> CommandError {
    match e {
        QThermoError::Quantum(QuantumError::InvalidParameter { .. }) => {
            CommandError::Config(e.to_string())
        }
        other => numerical(other),
    }
}

/// Truncated-Fock evolution of the selected modes under the mass protocol.
pub fn quantum_run(cfg: &ScenarioConfig) -> Result<ResultBundle, CommandError> {
    let spec = cfg.lattice_spec();
    let proto: MassProtocol = cfg.mass_protocol();
    let mut out = ResultBundle::default();
    let mut table = Table::new(
        "qthermo",
        &[
            "mode",
            "t",
            "energy",
            "heat_rate",
            "work_rate",
            "s_qt",
            "production_rate",
            "s_rel",
            "tilde_s_rel",
            "min_eigenvalue",
            "cptp",
        ],
    );
    let mut events = Table::new("events", &["mode", "t", "min_eigenvalue"]);
    let mut all_cptp = true;
    let mut min_production = f64::INFINITY;
    for &n in &cfg.run.modes {
        let idx = spec.mode_index(n);
        let lambda = spec.lambda(idx);
        let k = spec.wavenumber(idx).abs();
        let b0 = proto.b(k, 0.0);
        let omega0 = spec.c() * (lambda * lambda + b0 * b0).sqrt();
        let reference = build_mode_operators(
            cfg.run.fock_truncation,
            omega0,
            spec.hbar(),
            spec.c(),
            spec.dk(),
        )
        .map_err(|e| CommandError::Config(e.to_string()))?;
        let gen = DrivenMode {
            reference,
            gamma_phi: cfg.thermostat.gamma_phi,
            gamma_pi: cfg.thermostat.gamma_pi.value(),
            beta: spec.beta(),
            lambda,
            k,
            proto: proto.clone(),
        };
        let rho0 = initial_quantum(cfg, &gen)?;
        let run = run_driven(
            &gen,
            &rho0,
            0.0,
            cfg.run.dt,
            cfg.run.steps,
            cfg.run.stride,
            spec.kb(),
        )
        .map_err(quantum_failure)?;
        for r in &run.records {
            finite_or_fail("energy", r.energy)?;
            all_cptp &= r.cptp;
            if let Some(p) = r.production_rate {
                min_production = min_production.min(p);
            }
            table.push(vec![
                n.into(),
                r.t.into(),
                r.energy.into(),
                r.heat_rate.into(),
                r.work_rate.into(),
                r.s_qt.into(),
                r.production_rate.unwrap_or(f64::NAN).into(),
                r.s_rel.into(),
                r.tilde_s_rel.into(),
                r.min_eigenvalue.into(),
                r.cptp.into(),
            ]);
        }
        if let Some(&(t, v)) = run.positivity_violations.first() {
            let msg = format!(
                "mode {n}: density matrix lost positivity at t = {t:.6e} (min eigenvalue {v:.3e}); {} violating steps",
                run.positivity_violations.len()
            );
            eprintln!("warning: {msg}");
            out.events.push(msg);
        }
        for &(t, v) in &run.positivity_violations {
            events.push(vec![n.into(), t.into(), v.into()]);
        }
        if run.floor_triggered {
            out.events.push(format!(
                "mode {n}: population floor used in the production sum"
            ));
        }
        out.scalar(
            format!("mode_{n}_first_law_residual"),
            run.first_law_residual,
        );
        out.scalar(format!("mode_{n}_heat"), run.heat);
        out.scalar(format!("mode_{n}_work"), run.work);
        out.scalar(
            format!("mode_{n}_max_identity_residual"),
            run.max_identity_residual,
        );
        out.scalar(
            format!("mode_{n}_positivity_violations"),
            run.positivity_violations.len() as f64,
        );
    }
    out.check("cptp", all_cptp);
    if min_production.is_finite() {
        out.scalar("min_production_rate", min_production);
        out.check("production_non_negative", min_production >= -1e-10);
    }
    out.tables = vec![table, events];
    Ok(out)
}

/// Determinant of `L_H` over a `(γ_φ, γ_Π, βħω)` grid, and the boundary
/// `γ_Π = (ω²/c⁴) γ_φ`.
pub fn cptp_scan_cmd(cfg: &ScenarioConfig) -> Result<ResultBundle, CommandError> {
    let scan = cfg
        .cptp_scan
        .as_ref()
        .ok_or_else(|| CommandError::Config("cptp-scan needs a \"cptp_scan\" section".into()))?;
    let (c, hbar) = (cfg.lattice.c, cfg.lattice.hbar);
    let g = scan.beta_hbar_omega;
    let grid = log_grid(g.lo, g.hi, g.points);
    let mut surface = Table::new(
        "cptp_scan",
        &[
            "gamma_phi",
            "gamma_pi",
            "beta_hbar_omega",
            "det_lh",
            "eig_min",
            "eig_max",
            "cptp",
        ],
    );
    let mut boundary = Table::new(
        "dbc_curve",
        &[
            "gamma_phi",
            "gamma_pi_dbc",
            "all_temperature_cptp",
            "scan_cptp",
        ],
    );
    let mut agree = true;
    for &gp in &scan.gamma_phi {
        for &gq in &scan.gamma_pi {
            let rows = cptp_scan(gp, gq, scan.omega, hbar, c, &grid).map_err(numerical)?;
            for (x, r) in grid.iter().zip(&rows) {
                surface.push(vec![
                    gp.into(),
                    gq.into(),
                    (*x).into(),
                    r.det_lh.into(),
                    r.eigenvalues[0].into(),
                    r.eigenvalues[1].into(),
                    r.cptp.into(),
                ]);
            }
            // the finite scan can only refute: a failing temperature must also fail analytically
            let scan_all = rows.iter().all(|r| r.cptp);
            if !scan_all && cptp_all_temperatures(gp, gq, scan.omega, c) {
                agree = false;
            }
        }
        let dbc = detailed_balance_gamma_pi(gp, scan.omega, c);
        let rows = cptp_scan(gp, dbc, scan.omega, hbar, c, &grid).map_err(numerical)?;
        let analytic = cptp_all_temperatures(gp, dbc, scan.omega, c);
        let scanned = rows.iter().all(|r| r.cptp);
        agree &= analytic && scanned;
        boundary.push(vec![gp.into(), dbc.into(), analytic.into(), scanned.into()]);
    }
    let corner = build_l_matrix(0.0, 0.0, scan.omega, 1.0, hbar, c).map_err(numerical)?;
    let mut out = ResultBundle::default();
    out.check("boundary_matches_detailed_balance", agree);
    out.check("zero_coupling_cptp", corner.cptp);
    out.scalar("grid_points", grid.len() as f64);
    out.tables = vec![surface, boundary];
    Ok(out)
}

pub fn classical_limit_cmd(cfg: &ScenarioConfig) -> Result<ResultBundle, CommandError> {
    let lim = cfg.classical_limit.as_ref().ok_or_else(|| {
        CommandError::Config("classical-limit needs a \"classical_limit\" section".into())
    })?;
    let rep = classical_limit_check(
        cfg.thermostat.gamma_phi,
        lim.omega,
        cfg.lattice.c,
        cfg.thermostat.beta,
        &lim.hbar_sequence,
        lim.t_end,
        lim.samples,
    )
    .map_err(numerical)?;
    let mut table = Table::new(
        "classical_limit",
        &[
            "hbar",
            "beta_hbar_omega",
            "energy_ratio",
            "planck_ratio",
            "levels",
            "relaxation_sup_deviation",
        ],
    );
    let mut planck: f64 = 0.0;
    let mut small_ok = true;
    for r in &rep.rows {
        planck = planck.max((r.energy_ratio - r.planck_ratio).abs());
        if r.beta_hbar_omega <= 0.01 * (1.0 + 1e-12) {
            small_ok &= (r.energy_ratio - 1.0).abs() < 0.01;
        }
        table.push(vec![
            r.hbar.into(),
            r.beta_hbar_omega.into(),
            r.energy_ratio.into(),
            r.planck_ratio.into(),
            r.levels.into(),
            r.relaxation_sup_dev.into(),
        ]);
    }
    let mut out = ResultBundle::default();
    out.scalar("max_planck_mismatch", planck);
    out.check("planck_factor", planck < 1e-6);
    out.check("equipartition_at_small_beta_hbar_omega", small_ok);
    out.check("relaxation_monotone", rep.monotone);
    out.tables = vec![table];
    Ok(out)
}

/// Quick invariant suite; independent of any config.
pub fn check_suite() -> Result<ResultBundle, CommandError> {
    let mut out = ResultBundle::default();
    let mut table = Table::new("checks", &["name", "value", "tolerance", "pass"]);
    let mut record = |out: &mut ResultBundle, name: &'static str, value: f64, tol: f64| {
        let ok = value.is_finite() && value <= tol;
        table.push(vec![name.into(), value.into(), tol.into(), ok.into()]);
        out.check(name, ok);
    };

    // basis orthonormality and the eigen-relation
    let mut worst: f64 = 0.0;
    for n in [2usize, 8] {
        let spec =
            LatticeSpec::new(n, 2.0 * std::f64::consts::PI, 1.0, 1.0, 1.0).map_err(numerical)?;
        let basis = eigenbasis(&spec);
        let u = &basis.vectors;
        let ortho = (u.conjugate() * u.transpose()) * Complex64::new(spec.dx(), 0.0);
        let eye = CMat::identity(spec.len(), spec.len());
        worst = worst.max((ortho - eye).iter().map(|z| z.norm()).fold(0.0, f64::max));
        let d2 = build_derivative(&spec, 2).map_err(numerical)?;
        for idx in 0..spec.len() {
            let v = basis.mode_vector(idx);
            let lam = spec.lambda(idx);
            for (a, b) in d2.apply_complex(&v).iter().zip(&v) {
                worst = worst.max((a + b * lam * lam).norm());
            }
        }
    }
    record(&mut out, "basis_algebra", worst, 1e-12);

    // stationary Lyapunov covariance against K⁻¹/β
    let spec = LatticeSpec::new(3, 4.0, 1.2, 1.0, 0.7).map_err(numerical)?;
    let proto = MassProtocol::constant(0.8);
    let h = FreeField::new(spec.clone(), proto.clone());
    let sched = CouplingSchedule::detailed_balance(&spec, 0.5, proto);
    let gibbs = GaussianMomentState::gibbs(&h, 0.0, spec.beta()).map_err(numerical)?;
    let mut worst: f64 = 0.0;
    for m in &gibbs.modes {
        let s = stationary_covariance(&h, &sched, m.index, 0.0).map_err(numerical)?;
        worst = worst.max((&s - &m.cov).abs().max() / m.cov.abs().max());
    }
    record(&mut out, "classical_gibbs_fixed_point", worst, 1e-10);

    // detailed balance of the jump rates
    let mut worst: f64 = 0.0;
    for &(w, b) in &[(0.3, 0.5), (1.0, 1.0), (2.0, 3.0)] {
        let r = build_gksl_rates(0.4, w, b, 1.0, 1.0).map_err(numerical)?;
        let e = (-b * w).exp();
        worst = worst.max((r.gamma_minus / r.gamma_plus - e).abs() / e);
    }
    record(&mut out, "rate_detailed_balance", worst, 1e-12);

    // CPTP on the detailed-balance curve, failure for γ_φ = 0
    let dbc = detailed_balance_gamma_pi(0.3, 1.7, 1.1);
    let ok = cptp_all_temperatures(0.3, dbc, 1.7, 1.1)
        && !cptp_all_temperatures(0.3, dbc * 1.01, 1.7, 1.1)
        && !build_l_matrix(0.0, 0.5, 1.7, 1.0, 1.0, 1.1)
            .map_err(numerical)?
            .cptp;
    record(&mut out, "cptp_boundary", if ok { 0.0 } else { 1.0 }, 0.0);

    // quantum Gibbs state is stationary and produces no entropy
    let ops = build_mode_operators(40, 1.0, 1.0, 1.0, 1.0).map_err(numerical)?;
    let rates = build_gksl_rates(0.5, 1.0, 1.0, 1.0, 1.0).map_err(numerical)?;
    let g = FockDensityMatrix::gibbs(&ops, 1.0).map_err(numerical)?.rho;
    let rhs = gksl_rhs(&g, &ops, &rates).map_err(numerical)?;
    record(&mut out, "quantum_gibbs_stationary", rhs.norm(), 1e-10);
    let heat = q_heat_rate(&g, &rhs, &ops.h_mode).map_err(numerical)?;
    record(&mut out, "quantum_gibbs_heat", heat.abs(), 1e-10);
    let p = second_law_production(&g, &rates, &ops, 1.0).map_err(numerical)?;
    record(&mut out, "quantum_gibbs_production", p.value.abs(), 1e-9);

    // steady state occupation at βħω = 1
    let ss = steady_state(&ops, &rates).map_err(numerical)?;
    let n = (&ss.rho * &ops.number).trace().re;
    record(
        &mut out,
        "steady_state_occupation",
        (n - 1.0 / (std::f64::consts::E - 1.0)).abs(),
        1e-8,
    );

    // sandwiched equation against GKSL under detailed balance
    let gq = detailed_balance_gamma_pi(0.5, 1.0, 1.0);
    let mut rho = CMat::zeros(41, 41);
    for i in 0..6 {
        for j in 0..6 {
            rho[(i, j)] = Complex64::new(if i == j { 1.0 / 6.0 } else { 0.02 }, 0.0);
        }
    }
    let a = general_qme_rhs(&rho, &ops, 0.5, gq, 1.0).map_err(numerical)?;
    let b = gksl_rhs(&rho, &ops, &rates).map_err(numerical)?;
    record(
        &mut out,
        "qme_matches_gksl",
        interior_difference(&a, &b, 35),
        1e-8,
    );

    out.tables = vec![table];
    Ok(out)
}
