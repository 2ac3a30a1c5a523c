//! JSON scenario files.
//!
//! Both scenario kinds carry `schema_version` and reject unknown fields.
//! Vectors are written as `[x, y, z]`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamic::{SecurityConfig, WaypointId};
use crate::poly::{DynamicsLimits, Vec3, WaypointConstraint};
use crate::sim::{Gate, RaceConfig, ScriptedModification, TimingMode, TraceConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// A scenario that failed to parse, with the path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for SchemaError {}

pub fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| SchemaError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if value.schema_version() != SCHEMA_VERSION {
        return Err(SchemaError {
            path: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", value.schema_version()),
        });
    }
    Ok(value)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

type V3 = [f64; 3];

fn v3(a: V3) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecuritySpec {
    #[serde(default = "SecuritySpec::default_c")]
    pub c_security: f64,
    #[serde(default = "SecuritySpec::default_n")]
    pub n_smooth: usize,
    #[serde(default = "SecuritySpec::default_alpha")]
    pub alpha: f64,
}

impl SecuritySpec {
    fn default_c() -> f64 {
        SecurityConfig::default().c_security
    }
    fn default_n() -> usize {
        SecurityConfig::default().n_smooth
    }
    fn default_alpha() -> f64 {
        SecurityConfig::default().alpha
    }
}

impl Default for SecuritySpec {
    fn default() -> Self {
        let d = SecurityConfig::default();
        Self {
            c_security: d.c_security,
            n_smooth: d.n_smooth,
            alpha: d.alpha,
        }
    }
}

impl From<&SecuritySpec> for SecurityConfig {
    fn from(s: &SecuritySpec) -> Self {
        Self {
            c_security: s.c_security,
            n_smooth: s.n_smooth,
            alpha: s.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub id: u32,
    pub center: V3,
    pub normal: V3,
    pub half_width: f64,
    /// Oscillation axis; defaults to the normal turned a quarter turn about z.
    #[serde(default)]
    pub axis: Option<V3>,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub phase: f64,
}

impl From<&GateSpec> for Gate {
    fn from(g: &GateSpec) -> Self {
        let axis = g.axis.unwrap_or([-g.normal[1], g.normal[0], 0.0]);
        Gate {
            id: g.id,
            center: v3(g.center),
            normal: v3(g.normal),
            half_width: g.half_width,
            axis: v3(axis),
            amplitude: g.amplitude,
            speed: g.speed,
            phase: g.phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceScenario {
    pub schema_version: u32,
    pub gates: Vec<GateSpec>,
    pub laps: usize,
    pub start: V3,
    pub speed_limits: Vec<f64>,
    #[serde(default = "RaceScenario::default_inflations")]
    pub inflations: Vec<f64>,
    pub a_max: f64,
    #[serde(default = "RaceScenario::default_update_period")]
    pub gate_update_period: f64,
    #[serde(default)]
    pub pass_tolerance: f64,
    #[serde(default = "RaceScenario::default_sampler_rate")]
    pub sampler_rate: f64,
    #[serde(default = "RaceScenario::default_tracker_lag")]
    pub tracker_lag: f64,
    #[serde(default)]
    pub security: SecuritySpec,
    #[serde(default = "RaceScenario::default_timing")]
    pub timing: TimingMode,
    #[serde(default)]
    pub seed: u64,
    /// Races per grid cell, seeded `seed`, `seed + 1`, ...; rows report means.
    #[serde(default = "RaceScenario::default_runs")]
    pub runs: u64,
    #[serde(default = "default_true")]
    pub randomize_phases: bool,
    #[serde(default = "default_true")]
    pub lgm_enabled: bool,
}

impl RaceScenario {
    fn default_inflations() -> Vec<f64> {
        vec![0.0]
    }
    fn default_update_period() -> f64 {
        0.1
    }
    fn default_sampler_rate() -> f64 {
        100.0
    }
    fn default_tracker_lag() -> f64 {
        0.1
    }
    fn default_timing() -> TimingMode {
        TimingMode::Virtual
    }
    fn default_runs() -> u64 {
        1
    }

    /// One race configuration per (speed limit, inflation) cell, in row order.
    pub fn grid(&self) -> Vec<RaceConfig> {
        let mut out = Vec::new();
        for &speed_limit in &self.speed_limits {
            for &inflation in &self.inflations {
                out.push(RaceConfig {
                    gates: self.gates.iter().map(Gate::from).collect(),
                    laps: self.laps,
                    start: v3(self.start),
                    speed_limit,
                    a_max: self.a_max,
                    inflation,
                    gate_update_period: self.gate_update_period,
                    pass_tolerance: self.pass_tolerance,
                    sampler_rate: self.sampler_rate,
                    tracker_lag: self.tracker_lag,
                    security: (&self.security).into(),
                    timing: self.timing,
                    seed: self.seed,
                    randomize_phases: self.randomize_phases,
                    lgm_enabled: self.lgm_enabled,
                });
            }
        }
        out
    }
}

impl Versioned for RaceScenario {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub id: WaypointId,
    pub position: V3,
    #[serde(default)]
    pub velocity: Option<V3>,
    #[serde(default)]
    pub acceleration: Option<V3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub v_max: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModificationSpec {
    pub t: f64,
    pub waypoint: WaypointId,
    pub position: V3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceScenario {
    pub schema_version: u32,
    pub waypoints: Vec<WaypointSpec>,
    pub limits: LimitsSpec,
    #[serde(default)]
    pub security: SecuritySpec,
    #[serde(default)]
    pub inflation: f64,
    #[serde(default = "RaceScenario::default_timing")]
    pub timing: TimingMode,
    #[serde(default = "TraceScenario::default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub modifications: Vec<ModificationSpec>,
    #[serde(default)]
    pub tracker_lag: Option<f64>,
    #[serde(default = "default_true")]
    pub lgm_enabled: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TraceScenario {
    fn default_rate() -> f64 {
        1000.0
    }

    pub fn config(&self) -> TraceConfig {
        TraceConfig {
            waypoints: self
                .waypoints
                .iter()
                .map(|w| {
                    (
                        w.id,
                        WaypointConstraint {
                            velocity: w.velocity.map(v3),
                            acceleration: w.acceleration.map(v3),
                            ..WaypointConstraint::position(v3(w.position))
                        },
                    )
                })
                .collect(),
            limits: DynamicsLimits {
                v_max: self.limits.v_max,
                a_max: self.limits.a_max,
            },
            security: (&self.security).into(),
            inflation: self.inflation,
            timing: self.timing,
            rate: self.rate,
            modifications: self
                .modifications
                .iter()
                .map(|m| ScriptedModification {
                    t: m.t,
                    waypoint: m.waypoint,
                    position: v3(m.position),
                })
                .collect(),
            tracker_lag: self.tracker_lag,
            lgm_enabled: self.lgm_enabled,
        }
    }
}

impl Versioned for TraceScenario {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
}
