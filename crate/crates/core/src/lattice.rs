//! Periodic 2N-point lattice, central-difference derivative operators and
//! the plane-wave mode basis.
//!
//! Positions are `x_i = i·Δx` for `i = −N..N−1`, stored at array index
//! `i + N`. Modes are `k_n = 2πn/ℓ` for `n = −N..N−1`, stored at array index
//! `n + N`. The same offset is used for every mode-indexed vector in the
//! crate (field amplitudes, noise, couplings, per-mode masses).
//!
//! `n = 0` and the Nyquist mode `n = −N` are their own conjugate partners
//! (`k ≡ −k` on the lattice), so their amplitudes are real for a real field.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice needs N >= 1, got {0}")]
    EmptyLattice(usize),
    #[error("derivative stencil needs N >= 2 (got N = {0}); the stencil wraps onto itself")]
    StencilWraps(usize),
    #[error("derivative order must be 1 or 2, got {0}")]
    BadOrder(u8),
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Grid geometry, physical constants and mode bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    n: usize,
    ell: f64,
    dx: f64,
    dk: f64,
    c: f64,
    hbar: f64,
    beta: f64,
    kb: f64,
}

impl LatticeSpec {
    /// Builds a lattice with `k_B = 1`.
    pub fn new(n: usize, ell: f64, c: f64, hbar: f64, beta: f64) -> Result<Self, LatticeError> {
        Self::with_kb(n, ell, c, hbar, beta, 1.0)
    }

    pub fn with_kb(
        n: usize,
        ell: f64,
        c: f64,
        hbar: f64,
        beta: f64,
        kb: f64,
    ) -> Result<Self, LatticeError> {
        if n == 0 {
            return Err(LatticeError::EmptyLattice(n));
        }
        positive("ell", ell)?;
        positive("c", c)?;
        positive("beta", beta)?;
        positive("kB", kb)?;
        if !(hbar >= 0.0) || !hbar.is_finite() {
            return Err(LatticeError::InvalidParameter {
                name: "hbar",
                requirement: "finite and >= 0",
                value: hbar,
            });
        }
        Ok(Self {
            n,
            ell,
            dx: ell / (2 * n) as f64,
            dk: 2.0 * PI / ell,
            c,
            hbar,
            beta,
            kb,
        })
    }

    pub fn half_points(&self) -> usize {
        self.n
    }

    /// Number of grid points (and of modes), `2N`.
    pub fn len(&self) -> usize {
        2 * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dk(&self) -> f64 {
        self.dk
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kb(&self) -> f64 {
        self.kb
    }

    /// `T = 1/(k_B β)`.
    pub fn temperature(&self) -> f64 {
        1.0 / (self.kb * self.beta)
    }

    /// Returns a copy with a different inverse temperature.
    pub fn with_beta(&self, beta: f64) -> Result<Self, LatticeError> {
        Self::with_kb(self.n, self.ell, self.c, self.hbar, beta, self.kb)
    }

    /// Returns a copy with a different action scale.
    pub fn with_hbar(&self, hbar: f64) -> Result<Self, LatticeError> {
        Self::with_kb(self.n, self.ell, self.c, hbar, self.beta, self.kb)
    }

    /// Mode number `n` stored at array index `idx`.
    pub fn mode_number(&self, idx: usize) -> i64 {
        idx as i64 - self.n as i64
    }

    /// Array index of mode number `n`, wrapping periodically.
    pub fn mode_index(&self, n: i64) -> usize {
        let m = 2 * self.n as i64;
        ((n + self.n as i64).rem_euclid(m)) as usize
    }

    /// Index of the partner mode `−k_n`.
    pub fn conj_index(&self, idx: usize) -> usize {
        self.mode_index(-self.mode_number(idx))
    }

    pub fn is_self_conjugate(&self, idx: usize) -> bool {
        self.conj_index(idx) == idx
    }

    pub fn wavenumber(&self, idx: usize) -> f64 {
        self.dk * self.mode_number(idx) as f64
    }

    /// `λ_k = sin(kΔx)/Δx`, the lattice wavenumber seen by the derivative stencil.
    pub fn lambda(&self, idx: usize) -> f64 {
        (self.wavenumber(idx) * self.dx).sin() / self.dx
    }

    /// `x_i` for array index `idx`.
    pub fn position(&self, idx: usize) -> f64 {
        self.dx * (idx as f64 - self.n as f64)
    }

    /// One representative per independent mode: `n = −N`, `n = 0` and
    /// `n = 1..N−1` (the latter standing for the pair `±n`).
    pub fn independent_modes(&self) -> Vec<usize> {
        let mut out = vec![self.mode_index(0)];
        for n in 1..self.n as i64 {
            out.push(self.mode_index(n));
        }
        if self.n > 1 || self.mode_index(-(self.n as i64)) != self.mode_index(0) {
            out.push(self.mode_index(-(self.n as i64)));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Frequency `ω = c·sqrt(λ² + b²)` for mode `idx` at mass parameter `b`.
    pub fn omega(&self, idx: usize, b: f64) -> f64 {
        let l = self.lambda(idx);
        self.c * (l * l + b * b).sqrt()
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), LatticeError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(LatticeError::InvalidParameter {
            name,
            requirement: "finite and > 0",
            value,
        })
    }
}

/// Dense central-difference operator on the periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeOperator {
    pub order: u8,
    pub matrix: DMatrix<f64>,
    pub dx: f64,
}

impl DerivativeOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVector::from_column_slice(v);
        (&self.matrix * x).iter().copied().collect()
    }

    pub fn apply_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        let m = self.matrix.nrows();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| v[j] * self.matrix[(i, j)])
                    .sum::<Complex64>()
            })
            .collect()
    }
}

/// Order 1: `±1/(2Δx)` at offsets `±1`. Order 2: `−2/(2Δx)²` on the diagonal
/// and `1/(2Δx)²` at offsets `±2`. Both wrap periodically; entries that land
/// on the same column accumulate.
pub fn build_derivative(spec: &LatticeSpec, order: u8) -> Result<DerivativeOperator, LatticeError> {
    if spec.half_points() < 2 {
        return Err(LatticeError::StencilWraps(spec.half_points()));
    }
    let m = spec.len();
    let h = 2.0 * spec.dx();
    let mut mat = DMatrix::<f64>::zeros(m, m);
    match order {
        1 => {
            for i in 0..m {
                mat[(i, (i + 1) % m)] += 1.0 / h;
                mat[(i, (i + m - 1) % m)] -= 1.0 / h;
            }
        }
        2 => {
            let s = 1.0 / (h * h);
            for i in 0..m {
                mat[(i, i)] -= 2.0 * s;
                mat[(i, (i + 2) % m)] += s;
                mat[(i, (i + m - 2) % m)] += s;
            }
        }
        other => return Err(LatticeError::BadOrder(other)),
    }
    Ok(DerivativeOperator {
        order,
        matrix: mat,
        dx: spec.dx(),
    })
}

/// Table of `u^(k_n)(x_i) = e^{−i k_n x_i}/√ℓ`; row = mode index, column = site index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub vectors: DMatrix<Complex64>,
    pub lambdas: Vec<f64>,
    dx: f64,
    dk: f64,
}

impl ModeBasis {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Column vector `u^(k_n)` over all sites.
    pub fn mode_vector(&self, idx: usize) -> Vec<Complex64> {
        self.vectors.row(idx).iter().copied().collect()
    }
}

pub fn eigenbasis(spec: &LatticeSpec) -> ModeBasis {
    let m = spec.len();
    let norm = 1.0 / spec.ell().sqrt();
    let vectors = DMatrix::from_fn(m, m, |n, i| {
        let phase = -spec.wavenumber(n) * spec.position(i);
        Complex64::from_polar(norm, phase)
    });
    ModeBasis {
        vectors,
        lambdas: (0..m).map(|n| spec.lambda(n)).collect(),
        dx: spec.dx(),
        dk: spec.dk(),
    }
}

/// `φ(k_n) = (Δx/√Δk) Σ_i conj(u^(k_n)(x_i)) Φ(x_i)`.
pub fn to_modes(field_x: &[Complex64], basis: &ModeBasis) -> Result<Vec<Complex64>, LatticeError> {
    let m = basis.len();
    if field_x.len() != m {
        return Err(LatticeError::LengthMismatch {
            expected: m,
            got: field_x.len(),
        });
    }
    let scale = basis.dx / basis.dk.sqrt();
    Ok((0..m)
        .map(|n| {
            let s: Complex64 = (0..m)
                .map(|i| basis.vectors[(n, i)].conj() * field_x[i])
                .sum();
            s * scale
        })
        .collect())
}

/// `Φ(x_i) = √Δk Σ_n φ(k_n) u^(k_n)(x_i)`.
pub fn from_modes(phi_k: &[Complex64], basis: &ModeBasis) -> Result<Vec<Complex64>, LatticeError> {
    let m = basis.len();
    if phi_k.len() != m {
        return Err(LatticeError::LengthMismatch {
            expected: m,
            got: phi_k.len(),
        });
    }
    let scale = basis.dk.sqrt();
    Ok((0..m)
        .map(|i| {
            let s: Complex64 = (0..m).map(|n| phi_k[n] * basis.vectors[(n, i)]).sum();
            s * scale
        })
        .collect())
}
