//! Planar pose algebra and angle conventions.
//!
//! Frames: `x` is east, `y` is north, heading is measured counter-clockwise
//! from east (ENU yaw). Body-frame lateral is positive to the vehicle's left,
//! so at zero heading a lateral displacement moves the pose along `+y`.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Wrap an angle into `(-π, π]`. Non-finite input propagates as NaN.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::PI();
    if a > -pi && a <= pi {
        return a;
    }
    let two_pi = pi + pi;
    let mut r = a - two_pi * ((a + pi) / two_pi).floor();
    if r <= -pi {
        r += two_pi;
    }
    if r > pi {
        r -= two_pi;
    }
    r
}

/// [`wrap_angle`] that rejects non-finite input.
pub fn checked_wrap_angle<T: Real>(a: T) -> Result<T> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap_angle(a))
}

/// Planar pose. Heading is wrapped at construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2<T> {
    x: T,
    y: T,
    theta: T,
}

impl<T: Real> Pose2<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn try_new(x: T, y: T, theta: T) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite("Pose2"));
        }
        Ok(Self::new(x, y, theta))
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn x(&self) -> T {
        self.x
    }

    #[inline]
    pub fn y(&self) -> T {
        self.y
    }

    #[inline]
    pub fn theta(&self) -> T {
        self.theta
    }

    #[inline]
    pub fn xy(&self) -> (T, T) {
        (self.x, self.y)
    }

    pub fn with_xy(&self, x: T, y: T) -> Self {
        Self { x, y, theta: self.theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Euclidean distance between the two positions.
    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Advance by a body-frame increment.
    pub fn compose(&self, inc: &BodyIncrement<T>) -> Self {
        compose(self, inc)
    }

    /// Group product `self · other`.
    pub fn compose_pose(&self, other: &Self) -> Self {
        compose(self, &BodyIncrement::new(other.x, other.y, other.theta))
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Interpret this pose as a relative motion.
    pub fn as_increment(&self) -> BodyIncrement<T> {
        BodyIncrement::new(self.x, self.y, self.theta)
    }
}

/// Body-frame motion: forward, left-lateral, heading change.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyIncrement<T> {
    d_fwd: T,
    d_lat: T,
    d_theta: T,
}

impl<T: Real> BodyIncrement<T> {
    pub fn new(d_fwd: T, d_lat: T, d_theta: T) -> Self {
        Self {
            d_fwd,
            d_lat,
            d_theta: wrap_angle(d_theta),
        }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn d_fwd(&self) -> T {
        self.d_fwd
    }

    #[inline]
    pub fn d_lat(&self) -> T {
        self.d_lat
    }

    #[inline]
    pub fn d_theta(&self) -> T {
        self.d_theta
    }

    /// Planar length of the translation part.
    pub fn norm(&self) -> T {
        self.d_fwd.hypot(self.d_lat)
    }

    pub fn as_pose(&self) -> Pose2<T> {
        Pose2::new(self.d_fwd, self.d_lat, self.d_theta)
    }

    /// Sequential composition: first `self`, then `next` in the resulting frame.
    pub fn then(&self, next: &Self) -> Self {
        self.as_pose().compose(next).as_increment()
    }
}

/// 2×2 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot2<T> {
    r00: T,
    r01: T,
    r10: T,
    r11: T,
}

impl<T: Real> Rot2<T> {
    const ORTHO_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self::from_angle(T::zero())
    }

    pub fn from_angle(a: T) -> Self {
        let (s, c) = a.sin_cos();
        Self {
            r00: c,
            r01: -s,
            r10: s,
            r11: c,
        }
    }

    /// Build from row-major entries, checking orthonormality and `det = +1`.
    pub fn from_entries(entries: [T; 4]) -> Result<Self> {
        let [r00, r01, r10, r11] = entries;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Rot2"));
        }
        let tol = lit::<T>(Self::ORTHO_TOL);
        let one = T::one();
        // RᵀR = I
        let c0 = r00 * r00 + r10 * r10 - one;
        let c1 = r01 * r01 + r11 * r11 - one;
        let off = r00 * r01 + r10 * r11;
        let det = r00 * r11 - r01 * r10 - one;
        if c0.abs() > tol || c1.abs() > tol || off.abs() > tol || det.abs() > tol {
            return Err(Error::invalid("rotation matrix is not orthonormal with det +1"));
        }
        Ok(Self { r00, r01, r10, r11 })
    }

    pub fn entries(&self) -> [T; 4] {
        [self.r00, self.r01, self.r10, self.r11]
    }

    pub fn angle(&self) -> T {
        yaw_residual(self)
    }

    pub fn apply(&self, v: (T, T)) -> (T, T) {
        (
            self.r00 * v.0 + self.r01 * v.1,
            self.r10 * v.0 + self.r11 * v.1,
        )
    }
}

/// Advance `p` by the body-frame increment `inc`.
///
/// Translation uses the heading at the start of the step:
/// `x' = x + cosθ·fwd − sinθ·lat`, `y' = y + sinθ·fwd + cosθ·lat`.
pub fn compose<T: Real>(p: &Pose2<T>, inc: &BodyIncrement<T>) -> Pose2<T> {
    let (s, c) = p.theta.sin_cos();
    Pose2::new(
        p.x + c * inc.d_fwd - s * inc.d_lat,
        p.y + s * inc.d_fwd + c * inc.d_lat,
        p.theta + inc.d_theta,
    )
}

/// Relative motion taking `a` to `b`, expressed in the body frame of `a`.
pub fn between<T: Real>(a: &Pose2<T>, b: &Pose2<T>) -> BodyIncrement<T> {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    BodyIncrement::new(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)
}

/// ENU yaw to the image-up heading used for tile rotation: `π/2 − ψ`.
pub fn enu_yaw_to_image_heading<T: Real>(psi_enu: T) -> T {
    wrap_angle(T::FRAC_PI_2() - psi_enu)
}

/// Heading encoded by a rotation matrix: `atan2(r10, r00)`.
pub fn yaw_residual<T: Real>(r: &Rot2<T>) -> T {
    wrap_angle(r.r10.atan2(r.r00))
}
