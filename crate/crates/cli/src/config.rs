//! Scenario files: JSON with a versioned `schema` field. Unknown keys are
//! rejected, and every error points at a line of the source file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scalar_thermo::lattice::LatticeSpec;
use scalar_thermo::protocol::{CouplingSchedule, MassProtocol, Profile, Segment};

pub const SCHEMA: &str = "scalar-thermo/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub lattice: LatticeConfig,
    pub thermostat: ThermostatConfig,
    pub protocol: ProtocolConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cptp_scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_limit: Option<LimitConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub ell: f64,
    pub c: f64,
    pub hbar: f64,
    #[serde(rename = "kB", default = "one")]
    pub kb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermostatConfig {
    pub beta: f64,
    pub gamma_phi: f64,
    pub gamma_pi: GammaPi,
}

/// A constant `γ_Π`, or `"detailed_balance"` to tie it to `γ_φ` mode by mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaPi {
    Value(f64),
    Keyword(String),
}

pub const DETAILED_BALANCE: &str = "detailed_balance";

impl GammaPi {
    pub fn value(&self) -> Option<f64> {
        match self {
            GammaPi::Value(v) => Some(*v),
            GammaPi::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// `b` at `t = 0`, the same for every mode.
    pub initial: f64,
    #[serde(default)]
    pub segments: Vec<SegmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentConfig {
    Constant { duration: f64 },
    LinearRamp { duration: f64, to: f64 },
    SmoothRamp { duration: f64, to: f64 },
    Quench { to: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default = "default_truncation")]
    pub fock_truncation: usize,
    /// Mode numbers `n` (with `k = 2πn/ℓ`) evolved by `quantum-run`.
    #[serde(default = "default_modes")]
    pub modes: Vec<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Inverse temperature of the initial Gibbs distribution. Classical runs
    /// start from a point when this is absent; quantum runs fall back to the
    /// bath temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Mean `φ` coordinate of every classical mode.
    #[serde(default)]
    pub phi_amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fock: Option<usize>,
    /// Real amplitudes of a pure initial state in the Fock basis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub omega: f64,
    pub gamma_phi: Vec<f64>,
    pub gamma_pi: Vec<f64>,
    #[serde(default = "default_grid")]
    pub beta_hbar_omega: GridConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub omega: f64,
    pub hbar_sequence: Vec<f64>,
    pub t_end: f64,
    pub samples: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_truncation() -> usize {
    30
}

fn default_modes() -> Vec<i64> {
    vec![0]
}

fn default_grid() -> GridConfig {
    GridConfig {
        lo: 0.01,
        hi: 20.0,
        points: 200,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.column {
            Some(c) => write!(f, "{}:{}: {}", self.line, c, self.message),
            None => write!(f, "{}: {}", self.line, self.message),
        }
    }
}

/// Line of the last key in `path`, searching each key after the previous one.
fn locate(source: &str, path: &[&str]) -> usize {
    let mut pos = 0;
    for key in path {
        let needle = format!("\"{key}\"");
        match source[pos..].find(&needle) {
            Some(off) => pos += off,
            None => break,
        }
    }
    source[..pos].matches('\n').count() + 1
}

struct Validator<'a> {
    source: &'a str,
}

impl Validator<'_> {
    fn fail(&self, path: &[&str], msg: impl std::fmt::Display) -> ConfigError {
        ConfigError {
            line: locate(self.source, path),
            column: None,
            message: format!("{}: {msg}", path.join(".")),
        }
    }

    fn positive(&self, path: &[&str], v: f64) -> Result<(), ConfigError> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(self.fail(path, format!("must be finite and > 0, got {v}")))
        }
    }

    fn non_negative(&self, path: &[&str], v: f64) -> Result<(), ConfigError> {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(self.fail(path, format!("must be finite and >= 0, got {v}")))
        }
    }

    fn at_least(&self, path: &[&str], v: usize, min: usize) -> Result<(), ConfigError> {
        if v >= min {
            Ok(())
        } else {
            Err(self.fail(path, format!("must be at least {min}, got {v}")))
        }
    }
}

impl ScenarioConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(source).map_err(|e| {
            let text = e.to_string();
            let message = match text.rfind(" at line ") {
                Some(i) => text[..i].to_string(),
                None => text,
            };
            ConfigError {
                line: e.line(),
                column: Some(e.column()),
                message,
            }
        })?;
        cfg.validate(source)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let source =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&source).map_err(|e| format!("{}:{e}", path.display()))
    }

    fn validate(&self, source: &str) -> Result<(), ConfigError> {
        let v = Validator { source };
        if self.schema != SCHEMA {
            return Err(v.fail(
                &["schema"],
                format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema),
            ));
        }
        let l = &self.lattice;
        v.at_least(&["lattice", "N"], l.n, 2)?;
        v.positive(&["lattice", "ell"], l.ell)?;
        v.positive(&["lattice", "c"], l.c)?;
        v.positive(&["lattice", "hbar"], l.hbar)?;
        v.positive(&["lattice", "kB"], l.kb)?;
        let t = &self.thermostat;
        v.positive(&["thermostat", "beta"], t.beta)?;
        v.non_negative(&["thermostat", "gamma_phi"], t.gamma_phi)?;
        match &t.gamma_pi {
            GammaPi::Value(g) => v.non_negative(&["thermostat", "gamma_pi"], *g)?,
            GammaPi::Keyword(k) if k == DETAILED_BALANCE => {}
            GammaPi::Keyword(k) => {
                return Err(v.fail(
                    &["thermostat", "gamma_pi"],
                    format!("expected a number or {DETAILED_BALANCE:?}, got {k:?}"),
                ))
            }
        }
        let r = &self.run;
        v.positive(&["run", "dt"], r.dt)?;
        v.at_least(&["run", "steps"], r.steps, 1)?;
        v.at_least(&["run", "ensemble"], r.ensemble, 1)?;
        v.at_least(&["run", "stride"], r.stride, 1)?;
        v.at_least(&["run", "fock_truncation"], r.fock_truncation, 2)?;
        if r.modes.is_empty() {
            return Err(v.fail(&["run", "modes"], "must list at least one mode"));
        }
        let n = self.lattice.n as i64;
        if let Some(bad) = r.modes.iter().find(|&&m| m < -n || m >= n) {
            return Err(v.fail(
                &["run", "modes"],
                format!("mode {bad} outside [-{n}, {})", n),
            ));
        }
        self.profile()
            .map_err(|e| v.fail(&["protocol", "segments"], e))?;
        if !self.protocol.initial.is_finite() {
            return Err(v.fail(&["protocol", "initial"], "must be finite"));
        }
        if let Some(tau) = self.protocol.freeze_time {
            v.non_negative(&["protocol", "freeze_time"], tau)?;
        }
        // a massless self-conjugate mode has ω = 0 whenever b = 0
        let values =
            std::iter::once(self.protocol.initial).chain(self.protocol.segments.iter().map(|s| {
                match *s {
                    SegmentConfig::Constant { .. } => f64::NAN,
                    SegmentConfig::LinearRamp { to, .. }
                    | SegmentConfig::SmoothRamp { to, .. }
                    | SegmentConfig::Quench { to } => to,
                }
            }));
        let mut signs = values.filter(|x| !x.is_nan()).map(f64::signum);
        let first = signs.next().unwrap_or(1.0);
        if signs.any(|s| s != first) || self.protocol.initial == 0.0 {
            return Err(v.fail(
                &["protocol"],
                "b must keep one sign and stay away from zero",
            ));
        }
        let ini = &self.initial;
        if let Some(b) = ini.beta {
            v.positive(&["initial", "beta"], b)?;
        }
        if !ini.phi_amplitude.is_finite() {
            return Err(v.fail(&["initial", "phi_amplitude"], "must be finite"));
        }
        if let Some(f) = ini.fock {
            if f > r.fock_truncation {
                return Err(v.fail(
                    &["initial", "fock"],
                    format!("level {f} exceeds fock_truncation {}", r.fock_truncation),
                ));
            }
        }
        if let Some(a) = &ini.amplitudes {
            if a.is_empty() || a.len() > r.fock_truncation + 1 {
                return Err(v.fail(
                    &["initial", "amplitudes"],
                    "needs 1..=fock_truncation+1 entries",
                ));
            }
            if !a.iter().all(|x| x.is_finite()) || a.iter().all(|&x| x == 0.0) {
                return Err(v.fail(
                    &["initial", "amplitudes"],
                    "must be finite and not all zero",
                ));
            }
        }
        if let Some(s) = &self.cptp_scan {
            v.positive(&["cptp_scan", "omega"], s.omega)?;
            for &g in &s.gamma_phi {
                v.non_negative(&["cptp_scan", "gamma_phi"], g)?;
            }
            for &g in &s.gamma_pi {
                v.non_negative(&["cptp_scan", "gamma_pi"], g)?;
            }
            let g = s.beta_hbar_omega;
            v.positive(&["cptp_scan", "beta_hbar_omega", "lo"], g.lo)?;
            v.positive(&["cptp_scan", "beta_hbar_omega", "hi"], g.hi)?;
            if g.hi < g.lo {
                return Err(v.fail(&["cptp_scan", "beta_hbar_omega", "hi"], "must be >= lo"));
            }
            v.at_least(&["cptp_scan", "beta_hbar_omega", "points"], g.points, 2)?;
        }
        if let Some(c) = &self.classical_limit {
            v.positive(&["classical_limit", "omega"], c.omega)?;
            v.positive(&["classical_limit", "t_end"], c.t_end)?;
            v.at_least(&["classical_limit", "samples"], c.samples, 2)?;
            if c.hbar_sequence.is_empty() {
                return Err(v.fail(&["classical_limit", "hbar_sequence"], "must not be empty"));
            }
            for &h in &c.hbar_sequence {
                v.positive(&["classical_limit", "hbar_sequence"], h)?;
            }
            if c.hbar_sequence.windows(2).any(|w| w[1] >= w[0]) {
                return Err(v.fail(
                    &["classical_limit", "hbar_sequence"],
                    "must be strictly decreasing",
                ));
            }
            if self.thermostat.gamma_phi <= 0.0 {
                return Err(v.fail(
                    &["thermostat", "gamma_phi"],
                    "classical limit needs gamma_phi > 0",
                ));
            }
        }
        Ok(())
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        let l = &self.lattice;
        LatticeSpec::with_kb(l.n, l.ell, l.c, l.hbar, self.thermostat.beta, l.kb)
            .expect("validated at load")
    }

    fn profile(&self) -> Result<Profile, scalar_thermo::protocol::ProtocolError> {
        let segs: Vec<Segment> = self
            .protocol
            .segments
            .iter()
            .map(|s| match *s {
                SegmentConfig::Constant { duration } => Segment::Constant { duration },
                SegmentConfig::LinearRamp { duration, to } => Segment::LinearRamp { duration, to },
                SegmentConfig::SmoothRamp { duration, to } => Segment::SmoothRamp { duration, to },
                SegmentConfig::Quench { to } => Segment::Quench { to },
            })
            .collect();
        Profile::new(self.protocol.initial, &segs)
    }

    pub fn mass_protocol(&self) -> MassProtocol {
        let p = MassProtocol::uniform(self.profile().expect("validated at load"));
        match self.protocol.freeze_time {
            Some(tau) => p.with_freeze(tau).expect("validated at load"),
            None => p,
        }
    }

    pub fn couplings(&self, spec: &LatticeSpec) -> CouplingSchedule {
        let gp = self.thermostat.gamma_phi;
        match self.thermostat.gamma_pi.value() {
            Some(gq) => CouplingSchedule::constant(gp, gq),
            None => CouplingSchedule::detailed_balance(spec, gp, self.mass_protocol()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema": "scalar-thermo/1",
  "lattice": {"N": 2, "ell": 6.283185307179586, "c": 1.0, "hbar": 1.0},
  "thermostat": {"beta": 1.0, "gamma_phi": 0.5, "gamma_pi": "detailed_balance"},
  "protocol": {"initial": 1.0, "segments": [{"type": "smooth_ramp", "duration": 0.5, "to": 1.2}]},
  "run": {"dt": 0.001, "steps": 100, "ensemble": 10, "seed": 4, "stride": 10}
}"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.run.fock_truncation, 30);
        assert_eq!(cfg.run.modes, vec![0]);
        assert_eq!(cfg.lattice.kb, 1.0);
        let echo = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ScenarioConfig::parse(&echo).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let src = MINIMAL.replace("\"seed\": 4", "\"seed\": 4, \"sed\": 5");
        let e = ScenarioConfig::parse(&src).unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("unknown field `sed`"), "{}", e.message);
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let src = MINIMAL.replace("\"beta\": 1.0", "\"beta\": -1.0");
        let e = ScenarioConfig::parse(&src).unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.starts_with("thermostat.beta"));
        let src = MINIMAL.replace("\"detailed_balance\"", "\"detailed\"");
        assert_eq!(ScenarioConfig::parse(&src).unwrap_err().line, 4);
        let src = MINIMAL.replace("scalar-thermo/1", "scalar-thermo/0");
        assert_eq!(ScenarioConfig::parse(&src).unwrap_err().line, 2);
    }

    #[test]
    fn protocol_through_zero_is_rejected() {
        let src = MINIMAL.replace("\"to\": 1.2", "\"to\": -1.2");
        let e = ScenarioConfig::parse(&src).unwrap_err();
        assert!(e.message.starts_with("protocol"));
    }
}
