//! Minimum-snap piecewise polynomial trajectories.
//!
//! Every segment is a degree-7 polynomial expressed in segment-local time
//! `τ = t - t_k`. The solver works in derivative space: each knot carries
//! position, velocity, acceleration and jerk, and the eight endpoint values of
//! a segment determine its eight coefficients uniquely. Sharing those values
//! between neighbouring segments makes derivatives 0-3 continuous by
//! construction; minimising snap over the free interior values makes the snap
//! itself continuous at the optimum.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector3};

use crate::error::{Result, TrajError};

pub type Vec3 = Vector3<f64>;

/// Polynomial degree of every segment.
pub const DEGREE: usize = 7;
/// Coefficients per segment and axis.
pub const COEFFS: usize = DEGREE + 1;
/// Highest derivative order `eval` accepts.
pub const MAX_ORDER: usize = 4;

/// Derivatives stored per knot (position, velocity, acceleration, jerk).
const KNOT_DERIVS: usize = 4;

/// Duration assigned to a segment joining two coincident waypoints.
pub const MIN_SEGMENT_DURATION: f64 = 0.1;
/// Global slack applied to the kinematic lower bound of each segment.
pub const ALLOCATION_SLACK: f64 = 1.2;
/// Uniform stretch applied when a solved trajectory violates its limits.
pub const RETIME_FACTOR: f64 = 1.1;
pub const MAX_RETIME_ITERATIONS: usize = 10;

/// Relative pivot magnitude under which the snap system is declared singular.
const PIVOT_TOLERANCE: f64 = 1e-12;
const COINCIDENT_DISTANCE: f64 = 1e-9;

type SegMatrix = SMatrix<f64, COEFFS, COEFFS>;
type SegCoeffs = SVector<f64, COEFFS>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointConstraint {
    pub position: Vec3,
    pub velocity: Option<Vec3>,
    pub acceleration: Option<Vec3>,
    /// Free at interior knots and zero at the ends unless given.
    pub jerk: Option<Vec3>,
}

impl WaypointConstraint {
    pub fn position(position: Vec3) -> Self {
        Self {
            position,
            velocity: None,
            acceleration: None,
            jerk: None,
        }
    }

    pub fn full(position: Vec3, velocity: Vec3, acceleration: Vec3) -> Self {
        Self {
            position,
            velocity: Some(velocity),
            acceleration: Some(acceleration),
            jerk: None,
        }
    }

    pub fn with_jerk(self, jerk: Vec3) -> Self {
        Self { jerk: Some(jerk), ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsLimits {
    pub v_max: f64,
    pub a_max: f64,
}

impl DynamicsLimits {
    pub fn new(v_max: f64, a_max: f64) -> Result<Self> {
        let limits = Self { v_max, a_max };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(TrajError::InvalidInput(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.a_max.is_finite() && self.a_max > 0.0) {
            return Err(TrajError::InvalidInput(format!("a_max must be positive, got {}", self.a_max)));
        }
        Ok(())
    }

    /// Shortest duration compatible with both limits for a rest-to-rest hop.
    pub fn lower_bound(&self, distance: f64) -> f64 {
        (distance / self.v_max).max((2.0 * distance / self.a_max).sqrt())
    }
}

/// A solved base trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    knots: Vec<f64>,
    /// `coeffs[segment][axis][i]` multiplies `τ^i`.
    coeffs: Vec<[[f64; COEFFS]; 3]>,
}

impl PiecewisePolynomial {
    pub fn new(knots: Vec<f64>, coeffs: Vec<[[f64; COEFFS]; 3]>) -> Result<Self> {
        if knots.len() < 2 || coeffs.len() + 1 != knots.len() {
            return Err(TrajError::InvalidInput(format!(
                "{} knots do not match {} segments",
                knots.len(),
                coeffs.len()
            )));
        }
        if let Some(k) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(TrajError::InvalidInput(format!("knots not strictly increasing at segment {k}")));
        }
        if knots.iter().any(|k| !k.is_finite())
            || coeffs.iter().flatten().flatten().any(|c| !c.is_finite())
        {
            return Err(TrajError::InvalidInput("non-finite trajectory data".into()));
        }
        Ok(Self { knots, coeffs })
    }

    /// A single-segment polynomial holding `position` over `[t0, t1]`.
    pub fn constant(position: Vec3, t0: f64, t1: f64) -> Result<Self> {
        let mut seg = [[0.0; COEFFS]; 3];
        for axis in 0..3 {
            seg[axis][0] = position[axis];
        }
        Self::new(vec![t0, t1], vec![seg])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coeffs(&self) -> &[[[f64; COEFFS]; 3]] {
        &self.coeffs
    }

    pub fn segment_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Copy with every knot moved by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            knots: self.knots.iter().map(|k| k + dt).collect(),
            coeffs: self.coeffs.clone(),
        }
    }

    /// Index of the segment active at `t` (clamped to the valid range).
    pub fn segment_at(&self, t: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(self.coeffs.len() - 1)
    }

    /// `order`-th time derivative at `t`.
    ///
    /// Outside `[start, end]` the position is held at the nearest endpoint
    /// and every higher derivative is zero.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec3> {
        if order > MAX_ORDER {
            return Err(TrajError::InvalidOrder { order, max: MAX_ORDER });
        }
        Ok(self.eval_unchecked(t, order))
    }

    pub(crate) fn eval_unchecked(&self, t: f64, order: usize) -> Vec3 {
        let (t, order_zeroed) = if t < self.start() {
            (self.start(), order > 0)
        } else if t > self.end() {
            (self.end(), order > 0)
        } else {
            (t, false)
        };
        if order_zeroed {
            return Vec3::zeros();
        }
        let seg = self.segment_at(t);
        let tau = t - self.knots[seg];
        let c = &self.coeffs[seg];
        Vec3::new(
            horner_derivative(&c[0], tau, order),
            horner_derivative(&c[1], tau, order),
            horner_derivative(&c[2], tau, order),
        )
    }

    /// Evaluates derivative `order` of segment `seg` at local time `tau`,
    /// without clamping. Used for one-sided checks at the joints.
    pub fn eval_segment(&self, seg: usize, tau: f64, order: usize) -> Vec3 {
        let c = &self.coeffs[seg];
        Vec3::new(
            horner_derivative(&c[0], tau, order),
            horner_derivative(&c[1], tau, order),
            horner_derivative(&c[2], tau, order),
        )
    }

    /// Integral of squared snap summed over all axes and segments.
    pub fn snap_cost(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.knots.windows(2))
            .map(|(seg, w)| {
                let q = snap_cost_matrix(w[1] - w[0]);
                seg.iter()
                    .map(|axis| {
                        let c = SegCoeffs::from_column_slice(axis);
                        (c.transpose() * q * c)[0]
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Largest speed and acceleration norms over segments `from_segment..`,
    /// sampled densely on each segment.
    pub fn peak_kinematics(&self, from_segment: usize) -> (f64, f64) {
        const SAMPLES: usize = 32;
        let mut v_peak: f64 = 0.0;
        let mut a_peak: f64 = 0.0;
        for seg in from_segment..self.segment_count() {
            let dur = self.knots[seg + 1] - self.knots[seg];
            for s in 0..=SAMPLES {
                let tau = dur * s as f64 / SAMPLES as f64;
                v_peak = v_peak.max(self.eval_segment(seg, tau, 1).norm());
                a_peak = a_peak.max(self.eval_segment(seg, tau, 2).norm());
            }
        }
        (v_peak, a_peak)
    }
}

/// Evaluates the `order`-th derivative of `Σ c_i τ^i` by Horner's rule.
fn horner_derivative(c: &[f64; COEFFS], tau: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for i in (order..COEFFS).rev() {
        acc = acc * tau + c[i] * falling_factorial(i, order);
    }
    acc
}

/// `i! / (i - r)!`, zero when `r > i`.
fn falling_factorial(i: usize, r: usize) -> f64 {
    if r > i {
        return 0.0;
    }
    ((i - r + 1)..=i).fold(1.0, |acc, k| acc * k as f64)
}

/// Maps the eight endpoint derivatives `[p0 v0 a0 j0 p1 v1 a1 j1]` of a
/// segment of length `dur` to its coefficients.
fn endpoint_matrix(dur: f64) -> SegMatrix {
    let mut a = SegMatrix::zeros();
    for r in 0..KNOT_DERIVS {
        a[(r, r)] = falling_factorial(r, r);
        for i in r..COEFFS {
            a[(KNOT_DERIVS + r, i)] = falling_factorial(i, r) * dur.powi((i - r) as i32);
        }
    }
    a
}

/// Hessian of `∫_0^dur (x''''(τ))² dτ` with respect to the coefficients.
fn snap_cost_matrix(dur: f64) -> SegMatrix {
    let mut q = SegMatrix::zeros();
    for i in 4..COEFFS {
        for j in 4..COEFFS {
            let p = (i + j - 7) as i32;
            q[(i, j)] = falling_factorial(i, 4) * falling_factorial(j, 4) * dur.powi(p) / p as f64;
        }
    }
    q
}

/// Per-segment cost in derivative space and the derivative-to-coefficient map.
fn segment_blocks(dur: f64, segment: usize) -> Result<(SegMatrix, SegMatrix)> {
    if !(dur > 0.0 && dur.is_finite()) {
        return Err(TrajError::Singular { segment });
    }
    let a_inv = endpoint_matrix(dur)
        .try_inverse()
        .ok_or(TrajError::Singular { segment })?;
    let r = a_inv.transpose() * snap_cost_matrix(dur) * a_inv;
    Ok((r, a_inv))
}

/// Lower bound `max(d / v_max, sqrt(2 d / a_max))` with the global slack
/// applied; coincident waypoints get [`MIN_SEGMENT_DURATION`].
pub fn segment_duration(from: &Vec3, to: &Vec3, limits: &DynamicsLimits) -> f64 {
    let d = (to - from).norm();
    if d < COINCIDENT_DISTANCE {
        MIN_SEGMENT_DURATION
    } else {
        ALLOCATION_SLACK * limits.lower_bound(d)
    }
}

pub fn allocate_segment_times(waypoints: &[WaypointConstraint], limits: &DynamicsLimits) -> Result<Vec<f64>> {
    if waypoints.len() < 2 {
        return Err(TrajError::InvalidInput(format!(
            "at least 2 waypoints are required, got {}",
            waypoints.len()
        )));
    }
    limits.validate()?;
    let mut knots = Vec::with_capacity(waypoints.len());
    knots.push(0.0);
    for w in waypoints.windows(2) {
        let last = knots[knots.len() - 1];
        knots.push(last + segment_duration(&w[0].position, &w[1].position, limits));
    }
    Ok(knots)
}

/// Solves the minimum-snap problem through `waypoints` at the given knots.
///
/// Unspecified velocity and acceleration are free at interior knots and zero
/// at the two endpoints; endpoint jerk is always zero.
pub fn solve_min_snap(waypoints: &[WaypointConstraint], knots: &[f64]) -> Result<PiecewisePolynomial> {
    if waypoints.len() < 2 {
        return Err(TrajError::InvalidInput(format!(
            "at least 2 waypoints are required, got {}",
            waypoints.len()
        )));
    }
    if knots.len() != waypoints.len() {
        return Err(TrajError::InvalidInput(format!(
            "{} knots for {} waypoints",
            knots.len(),
            waypoints.len()
        )));
    }
    for (i, w) in waypoints.iter().enumerate() {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !finite(&w.position)
            || !w.velocity.as_ref().is_none_or(finite)
            || !w.acceleration.as_ref().is_none_or(finite)
            || !w.jerk.as_ref().is_none_or(finite)
        {
            return Err(TrajError::InvalidInput(format!("waypoint {i} has non-finite data")));
        }
    }

    let n_knots = knots.len();
    let n_seg = n_knots - 1;
    let n_vars = KNOT_DERIVS * n_knots;

    // Fixed values per global derivative variable, one column per axis.
    let mut fixed: Vec<Option<Vec3>> = vec![None; n_vars];
    for (k, w) in waypoints.iter().enumerate() {
        let endpoint = k == 0 || k == n_knots - 1;
        let zero_if_end = |v: Option<Vec3>| v.or(if endpoint { Some(Vec3::zeros()) } else { None });
        fixed[KNOT_DERIVS * k] = Some(w.position);
        fixed[KNOT_DERIVS * k + 1] = zero_if_end(w.velocity);
        fixed[KNOT_DERIVS * k + 2] = zero_if_end(w.acceleration);
        fixed[KNOT_DERIVS * k + 3] = zero_if_end(w.jerk);
    }

    // Block-banded cost Hessian in derivative space.
    let mut hessian = DMatrix::<f64>::zeros(n_vars, n_vars);
    let mut maps = Vec::with_capacity(n_seg);
    for seg in 0..n_seg {
        let (r, a_inv) = segment_blocks(knots[seg + 1] - knots[seg], seg)?;
        let base = KNOT_DERIVS * seg;
        for i in 0..COEFFS {
            for j in 0..COEFFS {
                hessian[(base + i, base + j)] += r[(i, j)];
            }
        }
        maps.push(a_inv);
    }

    let free_idx: Vec<usize> = (0..n_vars).filter(|&v| fixed[v].is_none()).collect();
    let fixed_idx: Vec<usize> = (0..n_vars).filter(|&v| fixed[v].is_some()).collect();

    // Full derivative vector per axis.
    let mut derivs = DMatrix::<f64>::zeros(n_vars, 3);
    for &v in &fixed_idx {
        let val = fixed[v].unwrap();
        for axis in 0..3 {
            derivs[(v, axis)] = val[axis];
        }
    }

    if !free_idx.is_empty() {
        let nf = free_idx.len();
        let h_pp = DMatrix::from_fn(nf, nf, |i, j| hessian[(free_idx[i], free_idx[j])]);
        let mut rhs = DMatrix::<f64>::zeros(nf, 3);
        for (i, &p) in free_idx.iter().enumerate() {
            for &f in &fixed_idx {
                let h = hessian[(p, f)];
                if h != 0.0 {
                    for axis in 0..3 {
                        rhs[(i, axis)] -= h * derivs[(f, axis)];
                    }
                }
            }
        }

        let scale = h_pp.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        let lu = h_pp.lu();
        let u = lu.u();
        if let Some(i) = (0..nf).find(|&i| !(u[(i, i)].abs() > PIVOT_TOLERANCE * scale)) {
            let knot = free_idx[i] / KNOT_DERIVS;
            return Err(TrajError::Singular { segment: knot.min(n_seg - 1) });
        }
        let sol = lu.solve(&rhs).ok_or(TrajError::Singular { segment: 0 })?;
        for (i, &p) in free_idx.iter().enumerate() {
            for axis in 0..3 {
                derivs[(p, axis)] = sol[(i, axis)];
            }
        }
    }

    let mut coeffs = Vec::with_capacity(n_seg);
    for (seg, a_inv) in maps.iter().enumerate() {
        let mut seg_coeffs = [[0.0; COEFFS]; 3];
        for axis in 0..3 {
            let d = DVector::from_fn(COEFFS, |i, _| derivs[(KNOT_DERIVS * seg + i, axis)]);
            let d = SegCoeffs::from_column_slice(d.as_slice());
            let c = a_inv * d;
            seg_coeffs[axis].copy_from_slice(c.as_slice());
        }
        coeffs.push(seg_coeffs);
    }

    PiecewisePolynomial::new(knots.to_vec(), coeffs).map_err(|_| TrajError::Singular { segment: 0 })
}

/// Allocates times, solves, and stretches the timing until the sampled
/// speed and acceleration respect `limits` (or the retiming budget runs out).
pub fn plan(waypoints: &[WaypointConstraint], limits: &DynamicsLimits) -> Result<PiecewisePolynomial> {
    let mut knots = allocate_segment_times(waypoints, limits)?;
    let violation = |p: &PiecewisePolynomial| {
        let (v_peak, a_peak) = p.peak_kinematics(0);
        (v_peak / limits.v_max).max(a_peak / limits.a_max)
    };
    let mut traj = solve_min_snap(waypoints, &knots)?;
    let mut excess = violation(&traj);
    for _ in 0..MAX_RETIME_ITERATIONS {
        if excess <= 1.0 + 1e-9 {
            break;
        }
        stretch_knots(&mut knots, RETIME_FACTOR);
        let candidate = solve_min_snap(waypoints, &knots)?;
        let candidate_excess = violation(&candidate);
        if candidate_excess >= excess {
            break;
        }
        traj = candidate;
        excess = candidate_excess;
    }
    Ok(traj)
}

/// Scales every segment duration by `factor`, keeping the first knot.
fn stretch_knots(knots: &mut [f64], factor: f64) {
    let mut prev_old = knots[0];
    let mut prev_new = knots[0];
    for k in knots.iter_mut().skip(1) {
        let dur = *k - prev_old;
        prev_old = *k;
        prev_new += dur * factor;
        *k = prev_new;
    }
}

pub fn eval_poly(traj: &PiecewisePolynomial, t: f64, order: usize) -> Result<Vec3> {
    traj.eval(t, order)
}

pub fn poly_duration(traj: &PiecewisePolynomial) -> f64 {
    traj.duration()
}
