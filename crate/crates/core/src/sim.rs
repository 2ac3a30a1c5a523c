//! Point-mass race simulator with moving gates.
//!
//! The vehicle tracks the sampled composite reference through a first-order
//! lag. Gates slide side to side at constant speed; their positions are fed
//! to the planner periodically, as a perception pipeline would.

use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamic::{
    ComputationTimeEstimator, DynamicPlanner, ModificationOutcome, RegenerationJob, RegenerationRequest,
    SecurityConfig, SolveTimeModel, SolveTiming, SolvedRegeneration, SwapOutcome, WaypointId,
};
use crate::error::{Result, TrajError};
use crate::poly::{DynamicsLimits, Vec3, WaypointConstraint};

/// Ratio of achieved speed to the speed limit above which a run is flagged.
pub const SPEED_SANITY_FACTOR: f64 = 1.25;

/// Time flown past the end of the trajectory before a run is closed.
const SETTLE_TIME: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub id: u32,
    pub center: Vec3,
    /// Unit normal along the direction of travel.
    pub normal: Vec3,
    pub half_width: f64,
    /// Unit oscillation axis.
    pub axis: Vec3,
    pub amplitude: f64,
    pub speed: f64,
    /// Time offset into the triangle wave, seconds.
    pub phase: f64,
}

impl Gate {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !(self.half_width > 0.0) || !(self.amplitude >= 0.0) || !(self.speed >= 0.0) {
            return Err(TrajError::InvalidInput(format!(
                "gate {}: half_width must be > 0, amplitude and speed >= 0",
                self.id
            )));
        }
        if !finite(&self.center) || (self.normal.norm() - 1.0).abs() > 1e-6 || (self.axis.norm() - 1.0).abs() > 1e-6 {
            return Err(TrajError::InvalidInput(format!(
                "gate {}: center must be finite, normal and axis unit length",
                self.id
            )));
        }
        Ok(())
    }

    /// Period of the side-to-side motion; infinite for a static gate.
    pub fn period(&self) -> f64 {
        if self.amplitude > 0.0 && self.speed > 0.0 {
            4.0 * self.amplitude / self.speed
        } else {
            f64::INFINITY
        }
    }
}

/// Offset along a triangle wave starting at 0, rising at `speed` to
/// `amplitude`, then sweeping to `-amplitude` and back.
fn triangle(t: f64, amplitude: f64, speed: f64) -> f64 {
    if amplitude <= 0.0 || speed <= 0.0 {
        return 0.0;
    }
    let x = (t * speed).rem_euclid(4.0 * amplitude);
    if x <= amplitude {
        x
    } else if x <= 3.0 * amplitude {
        2.0 * amplitude - x
    } else {
        x - 4.0 * amplitude
    }
}

pub fn gate_position(g: &Gate, t: f64) -> Vec3 {
    g.center + g.axis * triangle(t + g.phase, g.amplitude, g.speed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub t: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec3, t: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            t,
        }
    }
}

/// First-order reference tracking.
///
/// The commanded velocity is `v_ref + (p_ref - p) / lag`, so the position
/// error to a reference moving at `v_ref` decays as `exp(-t / lag)`. The
/// step integrates that decay exactly; `lag = 0` snaps onto the reference.
pub fn step_vehicle(state: &VehicleState, reference_pos: Vec3, reference_vel: Vec3, dt: f64, tracker_lag: f64) -> VehicleState {
    let error = state.position - reference_pos;
    let (decay, pull) = if tracker_lag > 0.0 {
        let decay = (-dt / tracker_lag).exp();
        (decay, decay / tracker_lag)
    } else {
        (0.0, 0.0)
    };
    let remaining = error * decay;
    VehicleState {
        position: reference_pos + reference_vel * dt + remaining,
        velocity: reference_vel - error * pull,
        t: state.t + dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateCrossing {
    /// Crossed inside the aperture; `offset` is the distance from the gate
    /// centre at the interpolated crossing instant.
    Pass { t: f64, point: Vec3, offset: f64 },
    Miss { t: f64, point: Vec3, offset: f64 },
    NoCrossing,
}

/// Detects a crossing of the gate plane between two consecutive states.
/// Plane crossings farther than this from the gate centre belong to some
/// other part of the course and are not counted as an attempt.
pub const CAPTURE_RADIUS: f64 = 2.5;

pub fn check_gate_pass(prev: &VehicleState, next: &VehicleState, g: &Gate, pass_tolerance: f64) -> GateCrossing {
    let s0 = (prev.position - gate_position(g, prev.t)).dot(&g.normal);
    let s1 = (next.position - gate_position(g, next.t)).dot(&g.normal);
    let crossed = (s0 < 0.0 && s1 >= 0.0) || (s0 > 0.0 && s1 <= 0.0);
    if !crossed {
        return GateCrossing::NoCrossing;
    }
    let f = s0 / (s0 - s1);
    let t = prev.t + f * (next.t - prev.t);
    let point = prev.position + (next.position - prev.position) * f;
    let offset = (point - gate_position(g, t)).norm();
    if offset <= g.half_width + pass_tolerance {
        GateCrossing::Pass { t, point, offset }
    } else {
        GateCrossing::Miss { t, point, offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// Solve durations measured on the wall clock; solves run on a worker
    /// thread while the loop keeps sampling.
    Wall,
    /// Solve durations injected from [`SolveTimeModel`]; fully reproducible.
    Virtual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceConfig {
    pub gates: Vec<Gate>,
    pub laps: usize,
    pub start: Vec3,
    pub speed_limit: f64,
    pub a_max: f64,
    /// Seconds added to every reported and injected computation time.
    pub inflation: f64,
    pub gate_update_period: f64,
    pub pass_tolerance: f64,
    pub sampler_rate: f64,
    pub tracker_lag: f64,
    pub security: SecurityConfig,
    pub timing: TimingMode,
    pub seed: u64,
    /// Draw each gate's phase uniformly over its period from `seed`.
    pub randomize_phases: bool,
    pub lgm_enabled: bool,
}

impl RaceConfig {
    /// Four gates at the side midpoints of a 20 m x 10 m rectangle, normals
    /// along the direction of travel, sliding ±1 m at 0.1 m/s.
    pub fn circuit(speed_limit: f64, inflation: f64, seed: u64) -> Self {
        let z = 1.5;
        let gate = |id, cx: f64, cy: f64, nx: f64, ny: f64| {
            let normal = Vec3::new(nx, ny, 0.0);
            Gate {
                id,
                center: Vec3::new(cx, cy, z),
                normal,
                half_width: 0.75,
                axis: Vec3::new(-ny, nx, 0.0),
                amplitude: 1.0,
                speed: 0.1,
                phase: 0.0,
            }
        };
        Self {
            gates: vec![
                gate(0, 10.0, 0.0, 1.0, 0.0),
                gate(1, 20.0, 5.0, 0.0, 1.0),
                gate(2, 10.0, 10.0, -1.0, 0.0),
                gate(3, 0.0, 5.0, 0.0, -1.0),
            ],
            laps: 5,
            start: Vec3::new(0.0, 0.0, z),
            speed_limit,
            a_max: 40.0,
            inflation,
            gate_update_period: 0.1,
            pass_tolerance: 0.25,
            sampler_rate: 100.0,
            tracker_lag: 0.1,
            security: SecurityConfig::default(),
            timing: TimingMode::Virtual,
            seed,
            randomize_phases: true,
            lgm_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() || self.laps == 0 {
            return Err(TrajError::InvalidInput("a race needs at least one gate and one lap".into()));
        }
        for g in &self.gates {
            g.validate()?;
        }
        DynamicsLimits::new(self.speed_limit, self.a_max)?;
        self.security.validate()?;
        let positive = [
            ("gate_update_period", self.gate_update_period),
            ("sampler_rate", self.sampler_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrajError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("inflation", self.inflation),
            ("pass_tolerance", self.pass_tolerance),
            ("tracker_lag", self.tracker_lag),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrajError::InvalidInput(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateEvent {
    pub lap: usize,
    pub gate: u32,
    pub t: f64,
    pub passed: bool,
    /// Distance from the gate centre at the crossing; `None` if the gate was
    /// never crossed.
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceResult {
    pub speed_limit: f64,
    pub inflation: f64,
    /// Statistics of the commanded reference.
    pub reference_max_speed: f64,
    pub reference_mean_speed: f64,
    /// Statistics of the simulated vehicle.
    pub max_speed: f64,
    pub mean_speed: f64,
    pub elapsed_time: f64,
    pub success_rate: f64,
    pub gates: Vec<GateEvent>,
    pub swaps: usize,
    pub aborted_swaps: usize,
    pub lgms_applied: usize,
    pub dropped_modifications: usize,
    pub rejected_modifications: usize,
    pub solver_failures: usize,
    /// Achieved speed exceeded `SPEED_SANITY_FACTOR` times the limit.
    pub speed_sanity_exceeded: bool,
}

enum PendingSolve {
    Ready { solved: SolvedRegeneration, t_ready: f64 },
    Running { rx: Receiver<Result<SolvedRegeneration>>, t_gen: f64 },
}

/// Runs regenerations for a planner and swaps them in once their solve
/// time has elapsed in simulation time.
struct Driver {
    planner: DynamicPlanner,
    timing: TimingMode,
    inflation: f64,
    pending: Option<PendingSolve>,
    swaps: usize,
    aborted_swaps: usize,
    lgms_applied: usize,
    /// Of `lgms_applied`, those created at a swap.
    reconciled: usize,
    dropped: usize,
    rejected: usize,
    solver_failures: usize,
}

impl Driver {
    fn new(planner: DynamicPlanner, timing: TimingMode, inflation: f64) -> Self {
        Self {
            planner,
            timing,
            inflation,
            pending: None,
            swaps: 0,
            aborted_swaps: 0,
            lgms_applied: 0,
            reconciled: 0,
            dropped: 0,
            rejected: 0,
            solver_failures: 0,
        }
    }

    /// Returns false if the solve could not be started or failed outright.
    fn dispatch(&mut self, job: RegenerationJob) -> bool {
        match self.timing {
            TimingMode::Virtual => match job.solve() {
                Ok(solved) => {
                    let t_ready = solved.t_gen + solved.duration + self.inflation;
                    self.pending = Some(PendingSolve::Ready { solved, t_ready });
                }
                Err(_) => return self.solver_failed(),
            },
            TimingMode::Wall => {
                let (tx, rx) = mpsc::channel();
                let t_gen = job.t_gen;
                std::thread::spawn(move || {
                    let _ = tx.send(job.solve());
                });
                self.pending = Some(PendingSolve::Running { rx, t_gen });
            }
        }
        true
    }

    fn solver_failed(&mut self) -> bool {
        self.solver_failures += 1;
        self.pending = None;
        self.planner.cancel_regeneration();
        false
    }

    /// Routes a modification and dispatches any regeneration it starts.
    fn modify(&mut self, id: WaypointId, position: Vec3, t: f64) -> Result<bool> {
        Ok(match self.planner.modify_waypoint(id, position, t)? {
            ModificationOutcome::Regenerated(RegenerationRequest::Started(job)) => self.dispatch(job),
            ModificationOutcome::LgmApplied(_) => {
                self.lgms_applied += 1;
                true
            }
            ModificationOutcome::Dropped => {
                self.dropped += 1;
                true
            }
            ModificationOutcome::RejectedTooLate => {
                self.rejected += 1;
                true
            }
            ModificationOutcome::Regenerated(RegenerationRequest::Coalesced) => true,
        })
    }

    /// Starts a regeneration for requests left pending by an earlier swap.
    fn regenerate_if_needed(&mut self, t: f64) -> bool {
        if self.pending.is_some() || !self.planner.needs_regeneration() || t >= self.planner.snapshot().end() {
            return true;
        }
        match self.planner.begin_regeneration(t) {
            Ok(Some(job)) => self.dispatch(job),
            Ok(None) => true,
            Err(_) => self.solver_failed(),
        }
    }

    /// Time at which the pending solve can be swapped in, once known.
    fn ready_at(&mut self) -> Option<f64> {
        let pending = self.pending.take()?;
        let pending = match pending {
            PendingSolve::Running { rx, t_gen } => match rx.try_recv() {
                Ok(Ok(solved)) => {
                    let t_ready = t_gen + solved.duration + self.inflation;
                    PendingSolve::Ready { solved, t_ready }
                }
                Ok(Err(_)) | Err(TryRecvError::Disconnected) => {
                    self.solver_failed();
                    return None;
                }
                Err(TryRecvError::Empty) => PendingSolve::Running { rx, t_gen },
            },
            ready => ready,
        };
        let t_ready = match &pending {
            PendingSolve::Ready { t_ready, .. } => Some(*t_ready),
            PendingSolve::Running { .. } => None,
        };
        self.pending = Some(pending);
        t_ready
    }

    /// Swaps in the pending solve if it is ready by `t`. Returns false on a
    /// solver failure.
    fn poll(&mut self, t: f64) -> bool {
        let failures = self.solver_failures;
        if self.ready_at().is_some_and(|t_ready| t_ready <= t) {
            let Some(PendingSolve::Ready { solved, t_ready }) = self.pending.take() else {
                unreachable!()
            };
            match self.planner.swap_in(solved, t_ready) {
                Ok(SwapOutcome::Swapped { reconciled, .. }) => {
                    self.swaps += 1;
                    self.lgms_applied += reconciled.len();
                    self.reconciled += reconciled.len();
                }
                Ok(SwapOutcome::Aborted { .. }) => self.aborted_swaps += 1,
                Err(_) => {
                    self.solver_failed();
                }
            }
        }
        self.solver_failures == failures
    }
}

pub fn run_race(config: &RaceConfig) -> Result<RaceResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gates: Vec<Gate> = config
        .gates
        .iter()
        .map(|g| {
            let mut g = *g;
            if config.randomize_phases && g.period().is_finite() {
                g.phase += rng.gen_range(0.0..g.period());
            }
            g
        })
        .collect();

    let n_gates = gates.len();
    let total = n_gates * config.laps;
    // Waypoint 0 is the start, 1..=total the gate visits, total+1 the finish.
    let mut waypoints: Vec<(WaypointId, WaypointConstraint)> = Vec::with_capacity(total + 2);
    waypoints.push((0, WaypointConstraint::position(config.start)));
    for visit in 0..total {
        let g = &gates[visit % n_gates];
        waypoints.push(((visit + 1) as WaypointId, WaypointConstraint::position(gate_position(g, 0.0))));
    }
    waypoints.push(((total + 1) as WaypointId, WaypointConstraint::position(config.start)));

    let limits = DynamicsLimits::new(config.speed_limit, config.a_max)?;
    let estimator = Arc::new(ComputationTimeEstimator::with_inflation(config.inflation));
    let timing = match config.timing {
        TimingMode::Virtual => SolveTiming::Modeled(SolveTimeModel::default()),
        TimingMode::Wall => SolveTiming::Measured,
    };
    let planner = DynamicPlanner::build_initial(&waypoints, 0.0, limits, estimator, config.security, timing)?
        .with_lgm_enabled(config.lgm_enabled);
    let sampler = planner.sampler();

    let mut race = Driver::new(planner, config.timing, config.inflation);
    let mut aborted_lap = None;

    let dt = 1.0 / config.sampler_rate;
    let mut state = VehicleState::at_rest(config.start, 0.0);
    let mut events: Vec<GateEvent> = Vec::with_capacity(total);
    let mut next_update = config.gate_update_period;
    let mut step: u64 = 0;
    let (mut ref_max, mut ref_sum, mut veh_max, mut veh_sum) = (0.0_f64, 0.0, 0.0_f64, 0.0);
    let mut samples = 0u64;
    let mut t_finish = None;

    loop {
        let t = step as f64 * dt;
        let lap = events.len() / n_gates;
        let end = race.planner.snapshot().end();
        if events.len() == total && t >= end {
            break;
        }
        if t > end + SETTLE_TIME && race.pending.is_none() {
            break;
        }

        if !race.poll(t) {
            aborted_lap = Some(lap);
        }

        if t >= next_update {
            next_update += config.gate_update_period;
            let snapshot = race.planner.snapshot();
            for w in snapshot.waypoints() {
                let visit = w.id as usize;
                if visit == 0 || visit > total || w.t_w <= t {
                    continue;
                }
                let seen = gate_position(&gates[(visit - 1) % n_gates], t);
                if (seen - w.requested).norm() < 1e-9 {
                    continue;
                }
                if !race.modify(w.id, seen, t)? {
                    aborted_lap = Some(lap);
                }
            }
        }
        if !race.regenerate_if_needed(t) {
            aborted_lap = Some(lap);
        }

        let reference = sampler.sample(t);
        let next = step_vehicle(&state, reference.position, reference.velocity, dt, config.tracker_lag);

        if events.len() < total {
            let attempt = |visit: usize| {
                let found = match check_gate_pass(&state, &next, &gates[visit % n_gates], config.pass_tolerance) {
                    GateCrossing::Pass { t, offset, .. } => Some((t, true, offset)),
                    GateCrossing::Miss { t, offset, .. } if offset <= CAPTURE_RADIUS => Some((t, false, offset)),
                    _ => None,
                };
                found.map(|(t, passed, offset)| (visit, t, passed, offset))
            };
            // Going through the following gate first means this one was skipped.
            let visit = events.len();
            let found = attempt(visit).or_else(|| (visit + 1 < total).then(|| attempt(visit + 1)).flatten());
            if let Some((v, t, passed, offset)) = found {
                if v > visit {
                    events.push(GateEvent {
                        lap: visit / n_gates,
                        gate: gates[visit % n_gates].id,
                        t,
                        passed: false,
                        offset: None,
                    });
                }
                events.push(GateEvent {
                    lap: v / n_gates,
                    gate: gates[v % n_gates].id,
                    t,
                    passed: passed && aborted_lap != Some(v / n_gates),
                    offset: Some(offset),
                });
                if events.len() == total {
                    t_finish = Some(t);
                }
            }
        }

        let ref_speed = reference.velocity.norm();
        let veh_speed = next.velocity.norm();
        ref_max = ref_max.max(ref_speed);
        veh_max = veh_max.max(veh_speed);
        ref_sum += ref_speed;
        veh_sum += veh_speed;
        samples += 1;

        state = next;
        step += 1;
    }

    let t_end = step as f64 * dt;
    while events.len() < total {
        let visit = events.len();
        events.push(GateEvent {
            lap: visit / n_gates,
            gate: gates[visit % n_gates].id,
            t: t_end,
            passed: false,
            offset: None,
        });
    }
    let passed = events.iter().filter(|e| e.passed).count();
    let samples = samples.max(1) as f64;
    Ok(RaceResult {
        speed_limit: config.speed_limit,
        inflation: config.inflation,
        reference_max_speed: ref_max,
        reference_mean_speed: ref_sum / samples,
        max_speed: veh_max,
        mean_speed: veh_sum / samples,
        elapsed_time: t_finish.unwrap_or(t_end),
        success_rate: passed as f64 / total as f64,
        gates: events,
        swaps: race.swaps,
        aborted_swaps: race.aborted_swaps,
        lgms_applied: race.lgms_applied,
        dropped_modifications: race.dropped,
        rejected_modifications: race.rejected,
        solver_failures: race.solver_failures,
        speed_sanity_exceeded: veh_max > SPEED_SANITY_FACTOR * config.speed_limit,
    })
}

/// A waypoint move applied at a fixed time during a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedModification {
    pub t: f64,
    pub waypoint: WaypointId,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    pub waypoints: Vec<(WaypointId, WaypointConstraint)>,
    pub limits: DynamicsLimits,
    pub security: SecurityConfig,
    pub inflation: f64,
    pub timing: TimingMode,
    /// Samples per second.
    pub rate: f64,
    pub modifications: Vec<ScriptedModification>,
    /// Fly a tracking vehicle along the reference when set.
    pub tracker_lag: Option<f64>,
    pub lgm_enabled: bool,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(TrajError::InvalidInput("a trace needs at least two waypoints".into()));
        }
        self.limits.validate()?;
        self.security.validate()?;
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(TrajError::InvalidInput(format!("rate must be positive, got {}", self.rate)));
        }
        if !(self.inflation >= 0.0 && self.inflation.is_finite()) {
            return Err(TrajError::InvalidInput(format!("inflation must be non-negative, got {}", self.inflation)));
        }
        if let Some(lag) = self.tracker_lag {
            if !(lag >= 0.0 && lag.is_finite()) {
                return Err(TrajError::InvalidInput(format!("tracker_lag must be non-negative, got {lag}")));
            }
        }
        for m in &self.modifications {
            if !(m.t >= 0.0 && m.t.is_finite()) || !m.position.iter().all(|x| x.is_finite()) {
                return Err(TrajError::InvalidInput(format!(
                    "modification of waypoint {} at t = {} is not finite",
                    m.waypoint, m.t
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub vehicle_position: Option<Vec3>,
    pub vehicle_velocity: Option<Vec3>,
    pub epoch: u64,
    pub active_modifiers: usize,
}

/// Where the reference actually was when a waypoint was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaypointCrossing {
    pub id: WaypointId,
    pub t: f64,
    pub position: Vec3,
    /// Last position requested for the waypoint.
    pub requested: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub records: Vec<TraceRecord>,
    pub crossings: Vec<WaypointCrossing>,
    pub swaps: usize,
    pub aborted_swaps: usize,
    pub lgms_applied: usize,
    /// Modifiers created at a swap for moves that arrived during the solve;
    /// included in `lgms_applied`.
    pub reconciled_modifiers: usize,
    pub dropped_modifications: usize,
    pub rejected_modifications: usize,
    /// Modifications of waypoints that had already been crossed.
    pub stale_modifications: usize,
    pub solver_failures: usize,
}

/// Samples the composite reference at a fixed rate from the start of the
/// trajectory to its end while applying scripted modifications.
///
/// Modifications and swaps are applied at their own instants rather than on
/// the sample grid.
pub fn run_trace(config: &TraceConfig) -> Result<TraceResult> {
    config.validate()?;
    let estimator = Arc::new(ComputationTimeEstimator::with_inflation(config.inflation));
    let timing = match config.timing {
        TimingMode::Virtual => SolveTiming::Modeled(SolveTimeModel::default()),
        TimingMode::Wall => SolveTiming::Measured,
    };
    let planner =
        DynamicPlanner::build_initial(&config.waypoints, 0.0, config.limits, estimator, config.security, timing)?
            .with_lgm_enabled(config.lgm_enabled);
    let sampler = planner.sampler();
    let mut driver = Driver::new(planner, config.timing, config.inflation);

    let mut script = config.modifications.clone();
    script.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut script = script.into_iter().peekable();

    let dt = 1.0 / config.rate;
    let mut vehicle = config
        .tracker_lag
        .map(|lag| (VehicleState::at_rest(config.waypoints[0].1.position, 0.0), lag));
    let mut records = Vec::new();
    let mut crossings = Vec::new();
    let mut stale = 0;
    let mut t_prev = f64::NEG_INFINITY;

    for step in 0u64.. {
        let t = step as f64 * dt;
        loop {
            let t_ready = driver.ready_at().filter(|&r| r <= t);
            let t_mod = script.peek().map(|m| m.t).filter(|&m| m <= t);
            match (t_ready, t_mod) {
                (Some(r), m) if m.is_none_or(|m| r <= m) => {
                    driver.poll(r);
                    driver.regenerate_if_needed(r);
                }
                (_, Some(_)) => {
                    let m = script.next().unwrap();
                    match driver.modify(m.waypoint, m.position, m.t) {
                        Ok(_) => {}
                        Err(TrajError::AlreadyPassed { .. }) => stale += 1,
                        Err(e) => return Err(e),
                    }
                    driver.regenerate_if_needed(m.t);
                }
                _ => break,
            }
        }
        driver.regenerate_if_needed(t);

        let snapshot = sampler.snapshot();
        for w in snapshot.waypoints().iter().filter(|w| w.t_w > t_prev && w.t_w <= t) {
            crossings.push(WaypointCrossing {
                id: w.id,
                t: w.t_w,
                position: snapshot.sample(w.t_w).position,
                requested: w.requested,
            });
        }
        let r = snapshot.sample(t);
        if let Some((state, lag)) = vehicle.as_mut().filter(|_| step > 0) {
            *state = step_vehicle(state, r.position, r.velocity, dt, *lag);
        }
        records.push(TraceRecord {
            t,
            position: r.position,
            velocity: r.velocity,
            acceleration: r.acceleration,
            vehicle_position: vehicle.map(|(s, _)| s.position),
            vehicle_velocity: vehicle.map(|(s, _)| s.velocity),
            epoch: r.epoch,
            active_modifiers: r.active_modifiers,
        });
        t_prev = t;
        if t >= snapshot.end() && driver.pending.is_none() && script.peek().is_none() {
            break;
        }
    }

    Ok(TraceResult {
        records,
        crossings,
        swaps: driver.swaps,
        aborted_swaps: driver.aborted_swaps,
        lgms_applied: driver.lgms_applied,
        reconciled_modifiers: driver.reconciled,
        dropped_modifications: driver.dropped,
        rejected_modifications: driver.rejected,
        stale_modifications: stale,
        solver_failures: driver.solver_failures,
    })
}
