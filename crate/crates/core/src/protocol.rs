//! Externally prescribed mass schedule `b_t(k)` and thermostat couplings
//! `γ_φ(|k|, t)`, `γ_Π(|k|, t)`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("segment {index}: duration must be finite and > 0, got {value}")]
    BadDuration { index: usize, value: f64 },
    #[error("segment {index}: target value must be finite, got {value}")]
    BadTarget { index: usize, value: f64 },
    #[error("freeze time must be finite and >= 0, got {0}")]
    BadFreeze(f64),
}

/// One piece of a time profile. Segments run back to back from `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// Hold the current value.
    Constant { duration: f64 },
    /// Linear interpolation to `to`.
    LinearRamp { duration: f64, to: f64 },
    /// Quintic smoothstep to `to`; first and second derivatives vanish at both ends.
    SmoothRamp { duration: f64, to: f64 },
    /// Instantaneous jump to `to` at the current time.
    Quench { to: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Piece {
        start: f64,
        end: f64,
        from: f64,
        to: f64,
        kind: PieceKind,
    },
    Jump {
        at: f64,
        before: f64,
        after: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PieceKind {
    Hold,
    Linear,
    Smooth,
}

/// Piecewise time profile, uniform in `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    initial: f64,
    events: Vec<Event>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            events: Vec::new(),
        }
    }

    pub fn new(initial: f64, segments: &[Segment]) -> Result<Self, ProtocolError> {
        if !initial.is_finite() {
            return Err(ProtocolError::BadTarget {
                index: 0,
                value: initial,
            });
        }
        let mut t = 0.0;
        let mut value = initial;
        let mut events = Vec::with_capacity(segments.len());
        for (index, seg) in segments.iter().enumerate() {
            let (duration, to, kind) = match *seg {
                Segment::Constant { duration } => (duration, value, PieceKind::Hold),
                Segment::LinearRamp { duration, to } => (duration, to, PieceKind::Linear),
                Segment::SmoothRamp { duration, to } => (duration, to, PieceKind::Smooth),
                Segment::Quench { to } => {
                    if !to.is_finite() {
                        return Err(ProtocolError::BadTarget { index, value: to });
                    }
                    events.push(Event::Jump {
                        at: t,
                        before: value,
                        after: to,
                    });
                    value = to;
                    continue;
                }
            };
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(ProtocolError::BadDuration {
                    index,
                    value: duration,
                });
            }
            if !to.is_finite() {
                return Err(ProtocolError::BadTarget { index, value: to });
            }
            events.push(Event::Piece {
                start: t,
                end: t + duration,
                from: value,
                to,
                kind,
            });
            t += duration;
            value = to;
        }
        Ok(Self { initial, events })
    }

    /// Value at `t`; right-continuous at quenches.
    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.initial;
        for ev in &self.events {
            match *ev {
                Event::Jump { at, after, .. } => {
                    if t < at {
                        return v;
                    }
                    v = after;
                }
                Event::Piece {
                    start,
                    end,
                    from,
                    to,
                    kind,
                } => {
                    if t < start {
                        return v;
                    }
                    if t < end {
                        let s = (t - start) / (end - start);
                        return from + (to - from) * shape(kind, s);
                    }
                    v = to;
                }
            }
        }
        v
    }

    /// Time derivative away from quenches.
    pub fn rate(&self, t: f64) -> f64 {
        for ev in &self.events {
            if let Event::Piece {
                start,
                end,
                from,
                to,
                kind,
            } = *ev
            {
                if t >= start && t < end {
                    let len = end - start;
                    return (to - from) * shape_rate(kind, (t - start) / len) / len;
                }
            }
        }
        0.0
    }

    /// Quenches `(time, before, after)` with `t0 < time <= t1`.
    pub fn jumps_in(&self, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
        self.jumps()
            .into_iter()
            .filter(|j| j.0 > t0 && j.0 <= t1)
            .collect()
    }

    pub fn jumps(&self) -> Vec<(f64, f64, f64)> {
        self.events
            .iter()
            .filter_map(|ev| match *ev {
                Event::Jump { at, before, after } => Some((at, before, after)),
                Event::Piece { .. } => None,
            })
            .collect()
    }
}

fn shape(kind: PieceKind, s: f64) -> f64 {
    match kind {
        PieceKind::Hold => 0.0,
        PieceKind::Linear => s,
        PieceKind::Smooth => s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
    }
}

fn shape_rate(kind: PieceKind, s: f64) -> f64 {
    match kind {
        PieceKind::Hold => 0.0,
        PieceKind::Linear => 1.0,
        PieceKind::Smooth => 30.0 * s * s * (1.0 - s) * (1.0 - s),
    }
}

type KtFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum MassKind {
    Uniform(Profile),
    Custom { b: KtFn, db_dt: KtFn },
}

/// Mass schedule `b(k, t)`, optionally frozen for `t >= τ`.
///
/// `b` must be even in `k`; it is always queried with `|k|`.
#[derive(Clone)]
pub struct MassProtocol {
    kind: MassKind,
    tau: Option<f64>,
}

impl fmt::Debug for MassProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("MassProtocol");
        match &self.kind {
            MassKind::Uniform(p) => d.field("profile", p),
            MassKind::Custom { .. } => d.field("profile", &"<custom>"),
        };
        d.field("tau", &self.tau).finish()
    }
}

impl MassProtocol {
    pub fn constant(b: f64) -> Self {
        Self::uniform(Profile::constant(b))
    }

    pub fn uniform(profile: Profile) -> Self {
        Self {
            kind: MassKind::Uniform(profile),
            tau: None,
        }
    }

    /// Arbitrary `b(|k|, t)` with its time derivative.
    pub fn custom<B, D>(b: B, db_dt: D) -> Self
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: MassKind::Custom {
                b: Arc::new(b),
                db_dt: Arc::new(db_dt),
            },
            tau: None,
        }
    }

    pub fn with_freeze(mut self, tau: f64) -> Result<Self, ProtocolError> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(ProtocolError::BadFreeze(tau));
        }
        self.tau = Some(tau);
        Ok(self)
    }

    pub fn freeze_time(&self) -> Option<f64> {
        self.tau
    }

    fn clamp(&self, t: f64) -> f64 {
        match self.tau {
            Some(tau) if t > tau => tau,
            _ => t,
        }
    }

    pub fn b(&self, k: f64, t: f64) -> f64 {
        let t = self.clamp(t);
        match &self.kind {
            MassKind::Uniform(p) => p.value(t),
            MassKind::Custom { b, .. } => b(k.abs(), t),
        }
    }

    pub fn db_dt(&self, k: f64, t: f64) -> f64 {
        if matches!(self.tau, Some(tau) if t >= tau) {
            return 0.0;
        }
        match &self.kind {
            MassKind::Uniform(p) => p.rate(t),
            MassKind::Custom { db_dt, .. } => db_dt(k.abs(), t),
        }
    }

    /// Quenches in `(t0, t1]` as `(time, before, after)`; uniform profiles only.
    pub fn jumps_in(&self, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
        match &self.kind {
            MassKind::Uniform(p) => {
                let t1 = match self.tau {
                    Some(tau) => t1.min(tau),
                    None => t1,
                };
                p.jumps_in(t0, t1)
            }
            MassKind::Custom { .. } => Vec::new(),
        }
    }
}

/// Thermostat couplings as functions of `(|k|, t)`.
#[derive(Clone)]
pub struct CouplingSchedule {
    gamma_phi: KtFn,
    gamma_pi: KtFn,
}

impl fmt::Debug for CouplingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CouplingSchedule { .. }")
    }
}

impl CouplingSchedule {
    pub fn constant(gamma_phi: f64, gamma_pi: f64) -> Self {
        Self::new(move |_, _| gamma_phi, move |_, _| gamma_pi)
    }

    pub fn new<F, G>(gamma_phi: F, gamma_pi: G) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            gamma_phi: Arc::new(gamma_phi),
            gamma_pi: Arc::new(gamma_pi),
        }
    }

    /// `γ_Π = (ω_t(k)²/c⁴)·γ_φ` mode by mode, tracking the mass protocol.
    pub fn detailed_balance(
        spec: &crate::lattice::LatticeSpec,
        gamma_phi: f64,
        proto: MassProtocol,
    ) -> Self {
        let dx = spec.dx();
        let c = spec.c();
        Self::new(
            move |_, _| gamma_phi,
            move |k, t| {
                let lam = (k * dx).sin() / dx;
                let b = proto.b(k, t);
                (lam * lam + b * b) / (c * c) * gamma_phi
            },
        )
    }

    pub fn gamma_phi(&self, k_abs: f64, t: f64) -> f64 {
        (self.gamma_phi)(k_abs, t)
    }

    pub fn gamma_pi(&self, k_abs: f64, t: f64) -> f64 {
        (self.gamma_pi)(k_abs, t)
    }
}
