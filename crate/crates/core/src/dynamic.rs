//! The composite dynamic trajectory `F(t) = P(t) + Σ LGM(t)`.
//!
//! [`DynamicTrajectory`] is an immutable snapshot: a base polynomial, the
//! dynamic waypoints it was solved through, and the modifiers stacked on top
//! of it. [`DynamicPlanner`] owns the live snapshot behind an [`ArcSwap`] so a
//! [`Sampler`] can read it at any rate without locking, while modifications
//! and regenerations are serialised on the planner side and published as a
//! whole new snapshot.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use arc_swap::ArcSwap;

use crate::error::{Result, TrajError};
use crate::lgm::{make_lgm, sum_modifiers, GaussianModifier, LgmSample};
use crate::poly::{
    plan, segment_duration, solve_min_snap, DynamicsLimits, PiecewisePolynomial, Vec3, WaypointConstraint,
};

pub type WaypointId = u32;

/// Maximum derivative order of the composite trajectory.
pub const MAX_DYN_ORDER: usize = 2;

/// Power-law exponent used to extrapolate solve times to unseen waypoint
/// counts. Least-squares fit of `ln T` against `ln n` over the reference
/// profile (6, 14, 26 waypoints -> 13.71, 88.93, 309.08 ms).
pub const FALLBACK_EXPONENT: f64 = 2.1295;

/// Reference solve time of a 6-waypoint trajectory, seconds.
pub const REFERENCE_SOLVE_TIME: f64 = 13.71e-3;
pub const REFERENCE_WAYPOINTS: usize = 6;

/// Smallest spacing kept between a stitching sample and a real waypoint.
const MIN_KNOT_GAP: f64 = 0.05;

/// A regeneration never moves a waypoint crossed less than this long after
/// the last state it is stitched to.
pub const REPLAN_HORIZON: f64 = 1.0;
/// Composite speed, as a multiple of the limit, that a new modifier may not
/// push the trajectory beyond.
pub const MODIFIER_SPEED_MARGIN: f64 = 1.1;
/// Modifiers this many widths in the past are dropped at regeneration.
const NEGLIGIBLE_SIGMAS: f64 = 8.0;
/// Distance above which a requested waypoint position counts as not yet
/// folded into the trajectory.
const DIRTY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityConfig {
    pub c_security: f64,
    pub n_smooth: usize,
    pub alpha: f64,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        Self {
            c_security: 5.0,
            n_smooth: 1,
            alpha: 1.5,
        }
    }
}

impl SecurityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_security >= 1.0) {
            return Err(TrajError::InvalidInput(format!("c_security must be >= 1, got {}", self.c_security)));
        }
        if self.n_smooth < 1 {
            return Err(TrajError::InvalidInput("n_smooth must be >= 1".into()));
        }
        if !(self.alpha >= 1.0) {
            return Err(TrajError::InvalidInput(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Running per-waypoint-count mean of observed solve durations.
///
/// Safe to share between the thread that records solves and the ones that
/// query estimates.
#[derive(Debug, Default)]
pub struct ComputationTimeEstimator {
    samples: Mutex<BTreeMap<usize, (f64, u64)>>,
    inflation: f64,
}

impl Clone for ComputationTimeEstimator {
    fn clone(&self) -> Self {
        Self {
            samples: Mutex::new(self.samples.lock().unwrap().clone()),
            inflation: self.inflation,
        }
    }
}

impl ComputationTimeEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Estimator whose reported estimates carry `inflation` extra seconds.
    pub fn with_inflation(inflation: f64) -> Self {
        Self {
            samples: Mutex::default(),
            inflation,
        }
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    pub fn record_solve(&self, n: usize, duration: f64) -> Result<()> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(TrajError::InvalidInput(format!("solve duration must be positive, got {duration}")));
        }
        let mut samples = self.samples.lock().unwrap();
        let (mean, count) = samples.entry(n).or_insert((0.0, 0));
        *count += 1;
        *mean += (duration - *mean) / *count as f64;
        Ok(())
    }

    /// Observed mean for exactly `n` waypoints, without inflation.
    pub fn observed(&self, n: usize) -> Option<f64> {
        self.samples.lock().unwrap().get(&n).map(|&(mean, _)| mean)
    }

    pub fn sample_count(&self, n: usize) -> u64 {
        self.samples.lock().unwrap().get(&n).map_or(0, |&(_, c)| c)
    }

    /// Estimated solve time for `n` waypoints plus the configured inflation.
    ///
    /// Counts with no samples are extrapolated from the nearest observed
    /// count (in log space) with [`FALLBACK_EXPONENT`]. `None` until the
    /// first sample is recorded.
    pub fn estimate(&self, n: usize) -> Option<f64> {
        let samples = self.samples.lock().unwrap();
        if let Some(&(mean, _)) = samples.get(&n) {
            return Some(mean + self.inflation);
        }
        let target = (n.max(1) as f64).ln();
        let (&n0, &(mean, _)) = samples.iter().min_by(|a, b| {
            let da = ((*a.0).max(1) as f64).ln() - target;
            let db = ((*b.0).max(1) as f64).ln() - target;
            da.abs().total_cmp(&db.abs()).then(b.0.cmp(a.0))
        })?;
        Some(mean * (n as f64 / n0 as f64).powf(FALLBACK_EXPONENT) + self.inflation)
    }

    /// Seeds an empty estimator with one throwaway solve of a canonical
    /// 6-waypoint problem.
    pub fn seed_cold_start(&self, timing: &SolveTiming) -> Result<()> {
        let wps = canonical_waypoints(REFERENCE_WAYPOINTS);
        let limits = DynamicsLimits::new(5.0, 5.0)?;
        let (_, duration) = timing.time(REFERENCE_WAYPOINTS, || plan(&wps, &limits))?;
        self.record_solve(REFERENCE_WAYPOINTS, duration)
    }
}

/// A deterministic zig-zag waypoint set used for seeding and benchmarking.
pub fn canonical_waypoints(n: usize) -> Vec<WaypointConstraint> {
    (0..n)
        .map(|i| {
            let x = 4.0 * i as f64;
            let y = if i % 2 == 0 { 0.0 } else { 3.0 };
            let z = 1.0 + 0.5 * ((i / 2) % 2) as f64;
            WaypointConstraint::position(Vec3::new(x, y, z))
        })
        .collect()
}

/// Solve-time model `T(n) = T_ref · (n / n_ref)^p` used in virtual time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveTimeModel {
    pub reference_time: f64,
    pub reference_waypoints: usize,
    pub exponent: f64,
}

impl Default for SolveTimeModel {
    fn default() -> Self {
        Self {
            reference_time: REFERENCE_SOLVE_TIME,
            reference_waypoints: REFERENCE_WAYPOINTS,
            exponent: FALLBACK_EXPONENT,
        }
    }
}

impl SolveTimeModel {
    pub fn duration(&self, n: usize) -> f64 {
        self.reference_time * (n as f64 / self.reference_waypoints as f64).powf(self.exponent)
    }
}

/// How solve durations are obtained: measured on the wall clock, or
/// injected from a model so runs are reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveTiming {
    Measured,
    Modeled(SolveTimeModel),
}

impl SolveTiming {
    fn time<T>(&self, n: usize, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
        let start = Instant::now();
        let out = f()?;
        let duration = match self {
            SolveTiming::Measured => start.elapsed().as_secs_f64().max(1e-9),
            SolveTiming::Modeled(model) => model.duration(n),
        };
        Ok((out, duration))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicWaypoint {
    pub id: WaypointId,
    /// Position the trajectory is committed to (base plus modifiers).
    pub constraint: WaypointConstraint,
    /// Crossing time on the current trajectory.
    pub t_w: f64,
    /// Most recently requested position; differs from the committed one
    /// while a regeneration is pending.
    pub requested: Vec3,
}

impl DynamicWaypoint {
    pub fn position(&self) -> Vec3 {
        self.constraint.position
    }
}

/// One sampler reading of the composite trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub epoch: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub active_modifiers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTrajectory {
    base: Arc<PiecewisePolynomial>,
    waypoints: Vec<DynamicWaypoint>,
    /// Parallel to `waypoints`.
    modifiers: Vec<Vec<GaussianModifier>>,
    /// Modifiers kept across a regeneration whose waypoint has been dropped.
    carried: Vec<GaussianModifier>,
    epoch: u64,
}

impl DynamicTrajectory {
    pub fn new(base: PiecewisePolynomial, waypoints: Vec<DynamicWaypoint>, epoch: u64) -> Result<Self> {
        for (i, w) in waypoints.iter().enumerate() {
            if waypoints[..i].iter().any(|o| o.id == w.id) {
                return Err(TrajError::InvalidInput(format!("duplicate waypoint id {}", w.id)));
            }
            if w.t_w < base.start() - 1e-9 || w.t_w > base.end() + 1e-9 {
                return Err(TrajError::InvalidInput(format!("waypoint {} lies outside the trajectory span", w.id)));
            }
        }
        let modifiers = vec![Vec::new(); waypoints.len()];
        Ok(Self {
            base: Arc::new(base),
            waypoints,
            modifiers,
            carried: Vec::new(),
            epoch,
        })
    }

    pub fn base(&self) -> &PiecewisePolynomial {
        &self.base
    }

    pub fn waypoints(&self) -> &[DynamicWaypoint] {
        &self.waypoints
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn modifiers(&self) -> impl Iterator<Item = &GaussianModifier> {
        self.modifiers.iter().flatten().chain(&self.carried)
    }

    pub fn modifiers_of(&self, id: WaypointId) -> &[GaussianModifier] {
        self.index_of(id).map_or(&[], |i| &self.modifiers[i])
    }

    pub fn modifier_count(&self) -> usize {
        self.modifiers.iter().map(Vec::len).sum::<usize>() + self.carried.len()
    }

    /// Attaches each modifier to its waypoint, or keeps it unattached if
    /// the waypoint is no longer tracked.
    fn adopt(&mut self, modifiers: Vec<GaussianModifier>) {
        for m in modifiers {
            match self.index_of(m.waypoint_id) {
                Some(i) => self.modifiers[i].push(m),
                None => self.carried.push(m),
            }
        }
    }

    pub fn start(&self) -> f64 {
        self.base.start()
    }

    pub fn end(&self) -> f64 {
        self.base.end()
    }

    pub fn index_of(&self, id: WaypointId) -> Option<usize> {
        self.waypoints.iter().position(|w| w.id == id)
    }

    pub fn waypoint(&self, id: WaypointId) -> Option<&DynamicWaypoint> {
        self.waypoints.iter().find(|w| w.id == id)
    }

    /// Index of the first waypoint crossed strictly after `t`.
    pub fn next_waypoint(&self, t: f64) -> Option<usize> {
        self.waypoints.iter().position(|w| w.t_w > t)
    }

    /// Waypoints not yet crossed at `t`.
    pub fn remaining(&self, t: f64) -> usize {
        self.waypoints.iter().filter(|w| w.t_w > t).count()
    }

    pub fn eval(&self, t: f64, order: usize) -> Result<Vec3> {
        if order > MAX_DYN_ORDER {
            return Err(TrajError::InvalidOrder {
                order,
                max: MAX_DYN_ORDER,
            });
        }
        let mut value = self.base.eval_unchecked(t, order);
        for m in self.modifiers() {
            value += m.eval(t, order)?;
        }
        Ok(value)
    }

    /// Position, velocity and acceleration in one pass over the modifiers.
    pub fn sample(&self, t: f64) -> ReferenceSample {
        let LgmSample {
            position,
            velocity,
            acceleration,
        } = sum_modifiers(self.modifiers(), t);
        ReferenceSample {
            t,
            epoch: self.epoch,
            position: self.base.eval_unchecked(t, 0) + position,
            velocity: self.base.eval_unchecked(t, 1) + velocity,
            acceleration: self.base.eval_unchecked(t, 2) + acceleration,
            active_modifiers: self.modifier_count(),
        }
    }

    /// Largest distance between a waypoint's committed position and the
    /// composite trajectory at its crossing time.
    pub fn max_waypoint_error(&self) -> f64 {
        self.waypoints
            .iter()
            .map(|w| (self.sample(w.t_w).position - w.position()).norm())
            .fold(0.0, f64::max)
    }

    /// Waypoint count of a regeneration started at `t`: the waypoints still
    /// ahead plus the stitching samples.
    pub fn regeneration_size(&self, t: f64, config: &SecurityConfig) -> usize {
        self.remaining(t) + config.n_smooth + 1
    }
}

pub fn eval_dyn(traj: &DynamicTrajectory, t: f64, order: usize) -> Result<Vec3> {
    traj.eval(t, order)
}

pub fn record_solve(estimator: &ComputationTimeEstimator, n: usize, duration: f64) -> Result<()> {
    estimator.record_solve(n, duration)
}

/// `C_security · T_computation(n)`; `None` while the estimator is empty.
pub fn security_time(estimator: &ComputationTimeEstimator, n: usize, config: &SecurityConfig) -> Option<f64> {
    estimator.estimate(n).map(|t| config.c_security * t)
}

/// Whether `t_now` lies closer to the next waypoint than the security time.
pub fn in_security_zone(
    traj: &DynamicTrajectory,
    t_now: f64,
    estimator: &ComputationTimeEstimator,
    config: &SecurityConfig,
) -> bool {
    let Some(next) = traj.next_waypoint(t_now) else {
        return false;
    };
    let n = traj.regeneration_size(t_now, config);
    // An empty estimator means no solve has ever completed: nothing is safe.
    let t_sec = security_time(estimator, n, config).unwrap_or(f64::INFINITY);
    traj.waypoints[next].t_w - t_now < t_sec
}

/// Stitching states sampled from the composite trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapWaypoints {
    /// `(time, constraint)` for `i = 0..=n_smooth`.
    pub samples: Vec<(f64, WaypointConstraint)>,
    pub t_offset: f64,
    /// Set when a sample time ran past the end of the trajectory and was
    /// clamped.
    pub clamped: bool,
}

pub fn make_swap_waypoints(
    traj: &DynamicTrajectory,
    t_gen: f64,
    n: usize,
    estimator: &ComputationTimeEstimator,
    config: &SecurityConfig,
) -> Result<SwapWaypoints> {
    config.validate()?;
    let t_comp = estimator
        .estimate(n)
        .ok_or_else(|| TrajError::InvalidInput("computation time estimator has no samples".into()))?;
    let t_offset = config.alpha * t_comp / config.n_smooth as f64;
    let mut clamped = false;
    let samples = (0..=config.n_smooth)
        .map(|i| {
            let mut t = t_gen + i as f64 * t_offset;
            if t > traj.end() {
                t = traj.end();
                clamped = true;
            }
            let s = traj.sample(t);
            (t, WaypointConstraint::full(s.position, s.velocity, s.acceleration))
        })
        .collect();
    Ok(SwapWaypoints {
        samples,
        t_offset,
        clamped,
    })
}

/// What a call to [`DynamicPlanner::modify_waypoint`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum ModificationOutcome {
    /// Outside the security zone: the change goes through a regeneration.
    Regenerated(RegenerationRequest),
    /// Inside the security zone: a modifier was stacked, effective at once.
    LgmApplied(GaussianModifier),
    /// The modification arrived at the waypoint's crossing time, or so
    /// close to it that the modifier alone would exceed the speed limit.
    RejectedTooLate,
    /// Inside the security zone with modifier dispatch disabled.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegenerationRequest {
    /// A new solve must be run; hand the job to a solver.
    Started(RegenerationJob),
    /// A solve is already in flight; the request will be folded in after it
    /// lands (see [`DynamicPlanner::needs_regeneration`]).
    Coalesced,
}

/// A self-contained regeneration problem, safe to solve on another thread.
#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationJob {
    pub t_gen: f64,
    /// Latest time at which the result may still be swapped in.
    pub deadline: f64,
    pub swap: SwapWaypoints,
    constraints: Vec<WaypointConstraint>,
    knots: Vec<f64>,
    /// Index into `constraints` of each dynamic waypoint kept.
    waypoints: Vec<(DynamicWaypoint, usize)>,
    /// Modifiers that survive the swap; the constraints exclude them.
    modifiers: Vec<GaussianModifier>,
    timing: SolveTiming,
}

impl RegenerationJob {
    pub fn size(&self) -> usize {
        self.constraints.len()
    }

    pub fn solve(self) -> Result<SolvedRegeneration> {
        let n = self.size();
        let (base, duration) = self.timing.time(n, || solve_min_snap(&self.constraints, &self.knots))?;
        let waypoints = self
            .waypoints
            .iter()
            .map(|(w, k)| DynamicWaypoint {
                t_w: base.knots()[*k],
                ..*w
            })
            .collect();
        Ok(SolvedRegeneration {
            base,
            waypoints,
            modifiers: self.modifiers,
            t_gen: self.t_gen,
            deadline: self.deadline,
            n,
            duration,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedRegeneration {
    pub base: PiecewisePolynomial,
    pub waypoints: Vec<DynamicWaypoint>,
    pub modifiers: Vec<GaussianModifier>,
    pub t_gen: f64,
    pub deadline: f64,
    pub n: usize,
    /// Solve duration, measured or modelled.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwapOutcome {
    Swapped {
        epoch: u64,
        /// Modifiers created at swap time for requests that arrived during
        /// the solve and target the waypoint already inside its zone.
        reconciled: Vec<GaussianModifier>,
    },
    /// The vehicle had already flown past the stitching window.
    Aborted { t_swap: f64, deadline: f64 },
}

/// Lock-free read handle over the live trajectory.
#[derive(Debug, Clone)]
pub struct Sampler {
    live: Arc<ArcSwap<DynamicTrajectory>>,
}

impl Sampler {
    pub fn sample(&self, t: f64) -> ReferenceSample {
        self.live.load().sample(t)
    }

    pub fn snapshot(&self) -> Arc<DynamicTrajectory> {
        self.live.load_full()
    }
}

#[derive(Debug, Default)]
struct ModifierState {
    in_flight: Option<f64>,
    dirty: bool,
}

/// Owner of the live dynamic trajectory.
///
/// All mutating calls are serialised internally; readers go through
/// [`Sampler`] and never block on them.
#[derive(Debug)]
pub struct DynamicPlanner {
    live: Arc<ArcSwap<DynamicTrajectory>>,
    state: Mutex<ModifierState>,
    estimator: Arc<ComputationTimeEstimator>,
    config: SecurityConfig,
    limits: DynamicsLimits,
    timing: SolveTiming,
    lgm_enabled: bool,
}

impl DynamicPlanner {
    /// Solves the initial base trajectory from scratch, starting at `t0`,
    /// and records its solve time.
    pub fn build_initial(
        waypoints: &[(WaypointId, WaypointConstraint)],
        t0: f64,
        limits: DynamicsLimits,
        estimator: Arc<ComputationTimeEstimator>,
        config: SecurityConfig,
        timing: SolveTiming,
    ) -> Result<Self> {
        config.validate()?;
        let constraints: Vec<_> = waypoints.iter().map(|(_, c)| *c).collect();
        let n = constraints.len();
        let (base, duration) = timing.time(n, || plan(&constraints, &limits))?;
        let base = base.shifted(t0);
        estimator.record_solve(n, duration)?;
        let dyn_wps = waypoints
            .iter()
            .zip(base.knots())
            .map(|(&(id, constraint), &t_w)| DynamicWaypoint {
                id,
                constraint,
                t_w,
                requested: constraint.position,
            })
            .collect();
        let traj = DynamicTrajectory::new(base, dyn_wps, 0)?;
        Ok(Self {
            live: Arc::new(ArcSwap::from_pointee(traj)),
            state: Mutex::default(),
            estimator,
            config,
            limits,
            timing,
            lgm_enabled: true,
        })
    }

    /// Disables modifier dispatch: in-zone modifications are dropped.
    pub fn with_lgm_enabled(mut self, enabled: bool) -> Self {
        self.lgm_enabled = enabled;
        self
    }

    pub fn sampler(&self) -> Sampler {
        Sampler {
            live: Arc::clone(&self.live),
        }
    }

    pub fn snapshot(&self) -> Arc<DynamicTrajectory> {
        self.live.load_full()
    }

    pub fn estimator(&self) -> &Arc<ComputationTimeEstimator> {
        &self.estimator
    }

    pub fn config(&self) -> &SecurityConfig {
        &self.config
    }

    pub fn limits(&self) -> &DynamicsLimits {
        &self.limits
    }

    pub fn in_security_zone(&self, t_now: f64) -> bool {
        in_security_zone(&self.live.load(), t_now, &self.estimator, &self.config)
    }

    /// Start time of the regeneration currently being solved, if any.
    pub fn in_flight(&self) -> Option<f64> {
        self.state.lock().unwrap().in_flight
    }

    /// True when some requested waypoint position has not been folded into
    /// the trajectory and no solve is in flight to do it.
    pub fn needs_regeneration(&self) -> bool {
        let state = self.state.lock().unwrap();
        state.in_flight.is_none() && state.dirty
    }

    /// Routes a waypoint update to a regeneration or a modifier depending on
    /// the security zone of the next waypoint.
    pub fn modify_waypoint(&self, id: WaypointId, new_position: Vec3, t_now: f64) -> Result<ModificationOutcome> {
        let mut state = self.state.lock().unwrap();
        let current = self.live.load_full();
        let idx = current.index_of(id).ok_or(TrajError::UnknownWaypoint(id))?;
        let t_w = current.waypoints[idx].t_w;
        if t_w < t_now {
            return Err(TrajError::AlreadyPassed { id, t_w, t_now });
        }
        if t_w == t_now {
            return Ok(ModificationOutcome::RejectedTooLate);
        }

        let is_next = current.next_waypoint(t_now) == Some(idx);
        if is_next && in_security_zone(&current, t_now, &self.estimator, &self.config) {
            if !self.lgm_enabled {
                return Ok(ModificationOutcome::Dropped);
            }
            let effective = current.sample(t_w).position;
            let m = make_lgm(effective, new_position, t_w, t_now, id)?;
            if self.too_fast(&current, &m) {
                return Ok(ModificationOutcome::RejectedTooLate);
            }
            let mut next = (*current).clone();
            next.modifiers[idx].push(m);
            let wp = &mut next.waypoints[idx];
            wp.constraint.position = new_position;
            wp.requested = new_position;
            self.live.store(Arc::new(next));
            return Ok(ModificationOutcome::LgmApplied(m));
        }

        let mut next = (*current).clone();
        next.waypoints[idx].requested = new_position;
        self.live.store(Arc::new(next));
        if state.in_flight.is_some() {
            state.dirty = true;
            return Ok(ModificationOutcome::Regenerated(RegenerationRequest::Coalesced));
        }
        let job = self.prepare_job(&self.live.load(), t_now)?;
        state.in_flight = Some(job.t_gen);
        state.dirty = false;
        Ok(ModificationOutcome::Regenerated(RegenerationRequest::Started(job)))
    }

    /// Starts a regeneration at `t_gen` for pending requests. Returns `None`
    /// when a solve is already in flight.
    pub fn begin_regeneration(&self, t_gen: f64) -> Result<Option<RegenerationJob>> {
        let mut state = self.state.lock().unwrap();
        if state.in_flight.is_some() {
            return Ok(None);
        }
        let job = self.prepare_job(&self.live.load(), t_gen)?;
        state.in_flight = Some(job.t_gen);
        state.dirty = false;
        Ok(Some(job))
    }

    /// Releases the in-flight slot after a failed solve.
    pub fn cancel_regeneration(&self) {
        let mut state = self.state.lock().unwrap();
        state.in_flight = None;
        state.dirty = true;
    }

    /// Whether stacking `m` onto `traj` breaks the speed limit: the modifier
    /// alone is faster than the limit, or it lifts the composite speed above
    /// [`MODIFIER_SPEED_MARGIN`] times the limit where its own velocity
    /// peaks.
    fn too_fast(&self, traj: &DynamicTrajectory, m: &GaussianModifier) -> bool {
        let v_max = self.limits.v_max;
        if m.peak_speed() > v_max {
            return true;
        }
        [m.center - m.width, m.center + m.width].into_iter().any(|t| {
            let before = traj.sample(t).velocity;
            let after = (before + m.sample(t).velocity).norm();
            after > MODIFIER_SPEED_MARGIN * v_max && after > before.norm()
        })
    }

    /// Whether the next waypoint is too close at `t` for a regeneration to
    /// move it. Moving a waypoint shortly before it is crossed makes the
    /// solve push a large swing into the following segment, so such moves
    /// are left to modifiers.
    fn holds_next(&self, traj: &DynamicTrajectory, t: f64) -> bool {
        traj.next_waypoint(t).is_some_and(|i| traj.waypoints[i].t_w - t < REPLAN_HORIZON)
            || in_security_zone(traj, t, &self.estimator, &self.config)
    }

    fn prepare_job(&self, traj: &DynamicTrajectory, t_gen: f64) -> Result<RegenerationJob> {
        if t_gen >= traj.end() {
            return Err(TrajError::InvalidInput(format!(
                "regeneration requested at {t_gen}, after the trajectory end {}",
                traj.end()
            )));
        }
        let n = traj.regeneration_size(t_gen, &self.config);
        let swap = make_swap_waypoints(traj, t_gen, n, &self.estimator, &self.config)?;
        // A waypoint crossed within the minimum knot gap is left to the live
        // trajectory; pinning it would create a degenerate first segment.
        let remaining: Vec<DynamicWaypoint> = traj
            .waypoints
            .iter()
            .filter(|w| w.t_w > t_gen + MIN_KNOT_GAP)
            .copied()
            .collect();
        let window_end = swap.samples.last().map_or(t_gen, |s| s.0);
        // Waypoints up to here stay on the live trajectory: everything too
        // close behind the stitching window to be moved, and the next one if
        // it is already in its zone.
        let mut pin_until = window_end + REPLAN_HORIZON;
        if let Some(i) = traj.next_waypoint(t_gen) {
            if self.holds_next(traj, t_gen) {
                pin_until = pin_until.max(traj.waypoints[i].t_w);
            }
        }

        // Modifiers on waypoints up to the window are kept as they are and
        // the new base is solved against the states without them. Baking a
        // narrow modifier's acceleration into the polynomial would otherwise
        // spread it over the whole next segment.
        let moved: Vec<WaypointId> = remaining
            .iter()
            .filter(|w| w.t_w > pin_until)
            .map(|w| w.id)
            .collect();
        let kept: Vec<GaussianModifier> = traj
            .modifiers()
            .filter(|m| !moved.contains(&m.waypoint_id) && t_gen - m.center < NEGLIGIBLE_SIGMAS * m.width)
            .copied()
            .collect();
        let base_state = |t: f64, c: WaypointConstraint| {
            let m = sum_modifiers(&kept, t);
            WaypointConstraint {
                position: c.position - m.position,
                velocity: c.velocity.map(|v| v - m.velocity),
                acceleration: c.acceleration.map(|a| a - m.acceleration),
                jerk: c.jerk,
            }
        };

        let mut constraints = Vec::new();
        let mut knots = Vec::new();
        let mut waypoints = Vec::new();

        let pinned: Vec<&DynamicWaypoint> = remaining.iter().filter(|w| w.t_w <= pin_until).collect();
        let mut swap_iter = swap.samples.iter().peekable();
        let mut pinned_iter = pinned.iter().peekable();
        loop {
            let next_swap = swap_iter.peek().map(|s| s.0);
            let next_pin = pinned_iter.peek().map(|w| w.t_w);
            match (next_swap, next_pin) {
                (Some(ts), tp) if tp.is_none_or(|tp| ts < tp) => {
                    let (t, c) = *swap_iter.next().unwrap();
                    let clear_of_pin = tp.is_none_or(|tp| tp - t >= MIN_KNOT_GAP);
                    let clear_of_last = knots.last().is_none_or(|&k: &f64| t - k >= MIN_KNOT_GAP);
                    if knots.is_empty() {
                        // The new base starts here; carrying the jerk over
                        // keeps repeated regenerations from resetting it.
                        knots.push(t);
                        constraints.push(base_state(t, c).with_jerk(traj.base().eval_unchecked(t, 3)));
                    } else if clear_of_pin && clear_of_last {
                        knots.push(t);
                        constraints.push(base_state(t, c));
                    }
                }
                (_, Some(_)) => {
                    let w = **pinned_iter.next().unwrap();
                    if knots.last().is_some_and(|&k| w.t_w - k < MIN_KNOT_GAP) && knots.len() > 1 {
                        knots.pop();
                        constraints.pop();
                    }
                    let s = traj.sample(w.t_w);
                    let c = base_state(
                        w.t_w,
                        WaypointConstraint::full(
                            s.position,
                            w.constraint.velocity.unwrap_or(s.velocity),
                            w.constraint.acceleration.unwrap_or(s.acceleration),
                        ),
                    );
                    waypoints.push((
                        DynamicWaypoint {
                            constraint: WaypointConstraint {
                                position: s.position,
                                ..w.constraint
                            },
                            ..w
                        },
                        knots.len(),
                    ));
                    knots.push(w.t_w);
                    constraints.push(c);
                }
                (None, None) => break,
                _ => unreachable!(),
            }
        }

        // Waypoints beyond the window move to their requested positions and
        // keep their old crossing times, pushed back only as far as the
        // allocation between requested positions demands. The stitching
        // state never enters this, so an overshooting solve cannot feed back
        // into ever longer segments.
        let mut shift = 0.0;
        for w in remaining.iter().filter(|w| w.t_w > pin_until) {
            let mut t = w.t_w + shift;
            if let Some(pred) = traj.index_of(w.id).and_then(|i| i.checked_sub(1)).map(|i| &traj.waypoints[i]) {
                let pred_t = if pred.t_w > pin_until { pred.t_w + shift } else { pred.t_w };
                t = t.max(pred_t + segment_duration(&pred.requested, &w.requested, &self.limits));
            }
            let t = t.max(knots.last().unwrap() + MIN_KNOT_GAP);
            shift = t - w.t_w;
            let constraint = WaypointConstraint {
                position: w.requested,
                ..w.constraint
            };
            waypoints.push((
                DynamicWaypoint {
                    constraint,
                    ..*w
                },
                knots.len(),
            ));
            knots.push(t);
            constraints.push(constraint);
        }

        if knots.len() < 2 {
            // Only the stitching state remains: hold it briefly.
            let (t, c) = swap.samples[0];
            knots.push(t + crate::poly::MIN_SEGMENT_DURATION);
            constraints.push(WaypointConstraint::position(c.position));
        }

        Ok(RegenerationJob {
            t_gen,
            deadline: window_end,
            swap,
            constraints,
            knots,
            waypoints,
            modifiers: kept,
            timing: self.timing,
        })
    }

    /// Replaces the live trajectory with a solved regeneration from `t_swap`
    /// on. The solve duration is recorded into the estimator either way.
    pub fn swap_in(&self, solved: SolvedRegeneration, t_swap: f64) -> Result<SwapOutcome> {
        let mut state = self.state.lock().unwrap();
        state.in_flight = None;
        self.estimator.record_solve(solved.n, solved.duration)?;
        if t_swap < solved.t_gen {
            state.dirty = true;
            return Err(TrajError::InvalidInput(format!(
                "swap time {t_swap} precedes generation time {}",
                solved.t_gen
            )));
        }
        if t_swap > solved.deadline {
            state.dirty = true;
            return Ok(SwapOutcome::Aborted {
                t_swap,
                deadline: solved.deadline,
            });
        }

        let old = self.live.load_full();
        let mut waypoints = solved.waypoints;
        for w in &mut waypoints {
            if let Some(o) = old.waypoint(w.id) {
                w.requested = o.requested;
            }
        }
        let mut next = DynamicTrajectory::new(solved.base, waypoints, old.epoch + 1)?;
        next.adopt(solved.modifiers);

        let mut reconciled = Vec::new();
        let mut dirty = false;
        let next_idx = next.next_waypoint(t_swap);
        for idx in 0..next.waypoints.len() {
            let w = next.waypoints[idx];
            if w.t_w <= t_swap || (w.requested - w.position()).norm() <= DIRTY_TOLERANCE {
                continue;
            }
            if Some(idx) == next_idx && self.holds_next(&next, t_swap) {
                let m = make_lgm(next.sample(w.t_w).position, w.requested, w.t_w, t_swap, w.id)?;
                if self.lgm_enabled && !self.too_fast(&next, &m) {
                    next.modifiers[idx].push(m);
                    next.waypoints[idx].constraint.position = w.requested;
                    reconciled.push(m);
                }
            } else {
                dirty = true;
            }
        }
        state.dirty = dirty;
        let epoch = next.epoch;
        self.live.store(Arc::new(next));
        Ok(SwapOutcome::Swapped { epoch, reconciled })
    }
}
