//! Local Gaussian modifiers.
//!
//! A modifier is an additive displacement `A·exp(-(t-μ)²/(2σ²))` centred on
//! the crossing time of the waypoint it moves. The width is chosen so the
//! modifier is already ~0.2 % of its peak at the instant it is created, so it
//! can be inserted into a trajectory that is being sampled without a visible
//! jump.

use crate::dynamic::WaypointId;
use crate::error::{Result, TrajError};
use crate::poly::Vec3;

/// Number of standard deviations between creation time and centre.
pub const WIDTH_SIGMAS: f64 = 3.5;

/// Highest derivative order a modifier can be evaluated at.
pub const MAX_LGM_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModifier {
    pub amplitude: Vec3,
    pub center: f64,
    pub width: f64,
    pub waypoint_id: WaypointId,
}

/// Position, velocity and acceleration contributions of a modifier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LgmSample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl std::ops::AddAssign for LgmSample {
    fn add_assign(&mut self, rhs: Self) {
        self.position += rhs.position;
        self.velocity += rhs.velocity;
        self.acceleration += rhs.acceleration;
    }
}

/// Builds the modifier that moves the waypoint crossed at `t_w` from
/// `current` (its position under the live trajectory) to `target`, created
/// at `t_mod`.
pub fn make_lgm(current: Vec3, target: Vec3, t_w: f64, t_mod: f64, waypoint_id: WaypointId) -> Result<GaussianModifier> {
    if !(t_w.is_finite() && t_mod.is_finite()) {
        return Err(TrajError::InvalidInput("non-finite modifier times".into()));
    }
    let width = (t_mod - t_w).abs() / WIDTH_SIGMAS;
    if !(width > 0.0) {
        return Err(TrajError::TooLate { id: waypoint_id });
    }
    Ok(GaussianModifier {
        amplitude: target - current,
        center: t_w,
        width,
        waypoint_id,
    })
}

impl GaussianModifier {
    pub fn eval(&self, t: f64, order: usize) -> Result<Vec3> {
        let u = (t - self.center) / self.width;
        let g = (-0.5 * u * u).exp();
        let scale = match order {
            0 => g,
            1 => -u / self.width * g,
            2 => (u * u - 1.0) / (self.width * self.width) * g,
            _ => return Err(TrajError::InvalidOrder { order, max: MAX_LGM_ORDER }),
        };
        Ok(self.amplitude * scale)
    }

    /// All three derivative orders from a single exponential.
    #[inline]
    pub fn sample(&self, t: f64) -> LgmSample {
        let inv = 1.0 / self.width;
        let u = (t - self.center) * inv;
        let g = (-0.5 * u * u).exp();
        LgmSample {
            position: self.amplitude * g,
            velocity: self.amplitude * (-u * inv * g),
            acceleration: self.amplitude * ((u * u - 1.0) * inv * inv * g),
        }
    }

    /// Largest speed the modifier adds, reached one width either side of
    /// the centre.
    pub fn peak_speed(&self) -> f64 {
        self.amplitude.norm() * (-0.5f64).exp() / self.width
    }

    pub fn mass_fraction(&self, half_width: f64) -> f64 {
        lgm_mass_fraction(half_width)
    }
}

pub fn eval_lgm(m: &GaussianModifier, t: f64, order: usize) -> Result<Vec3> {
    m.eval(t, order)
}

/// Fraction of the Gaussian's integral within `±half_width·σ` of its centre.
pub fn lgm_mass_fraction(half_width: f64) -> f64 {
    if half_width <= 0.0 {
        return 0.0;
    }
    if half_width.is_infinite() {
        return 1.0;
    }
    libm::erf(half_width / std::f64::consts::SQRT_2)
}

/// Sums every modifier's contribution at `t`.
pub fn sum_modifiers<'a>(modifiers: impl IntoIterator<Item = &'a GaussianModifier>, t: f64) -> LgmSample {
    let mut acc = LgmSample::default();
    for m in modifiers {
        acc += m.sample(t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn x_mod(width: f64) -> GaussianModifier {
        GaussianModifier {
            amplitude: Vec3::new(1.0, 0.0, 0.0),
            center: 0.0,
            width,
            waypoint_id: 0,
        }
    }

    #[test]
    fn constants_follow_construction_rule() {
        let m = make_lgm(Vec3::new(1., 0., 0.), Vec3::new(2., 0., 0.), 10.0, 6.5, 3).unwrap();
        assert_eq!(m.amplitude, Vec3::new(1., 0., 0.));
        assert_eq!(m.center, 10.0);
        assert_relative_eq!(m.width, 1.0, epsilon = 1e-15);
        assert_eq!(m.waypoint_id, 3);
    }

    #[test]
    fn null_modifier() {
        let p = Vec3::new(0.3, -2.0, 1.0);
        assert_eq!(make_lgm(p, p, 10.0, 9.0, 0).unwrap().amplitude, Vec3::zeros());
    }

    #[test]
    fn width_from_late_modification() {
        let m = make_lgm(Vec3::zeros(), Vec3::zeros(), 10.0, 9.3, 0).unwrap();
        assert_relative_eq!(m.width, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn creation_at_crossing_time_is_too_late() {
        assert_eq!(
            make_lgm(Vec3::zeros(), Vec3::x(), 4.0, 4.0, 7),
            Err(TrajError::TooLate { id: 7 })
        );
    }

    #[test]
    fn peak_and_extremum() {
        let m = x_mod(0.7);
        assert_eq!(m.eval(0.0, 0).unwrap(), m.amplitude);
        assert_eq!(m.eval(0.0, 1).unwrap(), Vec3::zeros());
    }

    #[test]
    fn value_at_creation_time() {
        let m = x_mod(1.0);
        let v = m.eval(3.5, 0).unwrap().norm();
        assert_relative_eq!(v, (-6.125_f64).exp(), max_relative = 1e-14);
        assert!((v - 2.187e-3).abs() < 1e-6);
    }

    #[test]
    fn closed_form_velocity() {
        let v = x_mod(1.0).eval(1.0, 1).unwrap();
        assert_relative_eq!(v.x, -(-0.5_f64).exp(), epsilon = 1e-15);
        assert!((v.x + 0.6065).abs() < 1e-4);
    }

    #[test]
    fn order_three_is_rejected() {
        assert!(matches!(x_mod(1.0).eval(0.0, 3), Err(TrajError::InvalidOrder { order: 3, .. })));
    }

    #[test]
    fn sample_matches_eval() {
        let m = GaussianModifier {
            amplitude: Vec3::new(0.4, -1.2, 2.0),
            center: 3.0,
            width: 0.37,
            waypoint_id: 1,
        };
        for t in [2.1, 2.9, 3.0, 3.4, 5.0] {
            let s = m.sample(t);
            assert_relative_eq!(s.position, m.eval(t, 0).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(s.velocity, m.eval(t, 1).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(s.acceleration, m.eval(t, 2).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn mass_fraction_limits() {
        assert_eq!(lgm_mass_fraction(0.0), 0.0);
        assert_eq!(lgm_mass_fraction(f64::INFINITY), 1.0);
        assert!((lgm_mass_fraction(40.0) - 1.0).abs() < 1e-15);
        assert!((lgm_mass_fraction(3.5) - 0.999535).abs() < 1e-6);
    }
}
