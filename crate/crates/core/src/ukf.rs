//! Three-state unscented Kalman filter on `(x, y, θ)`.
//!
//! Predict pushes van der Merwe sigma points through the body-frame motion
//! model and adds process noise expressed in the body frame of the
//! propagated mean. Update fuses a 2D position with a measurement covariance
//! built in the body frame and rotated into the world by a supplied heading.
//!
//! Sigma points are carried as offsets from the mean and propagated
//! analytically. With `α = 1e-3` the weights are of order `1e6`, so summing
//! absolute coordinates would lose most significant digits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, BodyIncrement, Pose2};
use crate::linalg::{cholesky3, inverse2, symmetrize3, zeros3, Mat2, Mat3};
use crate::scalar::{lit, Real};

const N: usize = 3;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

pub const PROCESS_SIGMA_FWD_FLOOR: f64 = 1.0;
pub const PROCESS_SIGMA_FWD_GAIN: f64 = 2.0;
pub const PROCESS_SIGMA_LAT_FLOOR: f64 = 1.5;
pub const PROCESS_SIGMA_LAT_GAIN: f64 = 0.3;
pub const PROCESS_SIGMA_THETA: f64 = 0.05;

pub const MEAS_SIGMA_FWD_SCALE: f64 = 1.5;
pub const MEAS_SIGMA_FWD_RANGE: (f64, f64) = (0.5, 8.0);
pub const MEAS_SIGMA_LAT_SCALE: f64 = 3.0;
pub const MEAS_SIGMA_LAT_RANGE: (f64, f64) = (1.0, 12.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config {
                field: "sigma.alpha".into(),
                msg: "must be > 0".into(),
            });
        }
        if !(self.beta.is_finite() && self.kappa.is_finite()) || (N as f64 + self.kappa) <= 0.0 {
            return Err(Error::Config {
                field: "sigma.kappa".into(),
                msg: "n + kappa must be > 0".into(),
            });
        }
        Ok(())
    }

    fn weights<T: Real>(&self) -> Weights<T> {
        let n = N as f64;
        let lambda = self.alpha * self.alpha * (n + self.kappa) - n;
        let wm0 = lambda / (n + lambda);
        Weights {
            scale: lit(n + lambda),
            wm0: lit(wm0),
            wc0: lit(wm0 + 1.0 - self.alpha * self.alpha + self.beta),
            wi: lit(1.0 / (2.0 * (n + lambda))),
        }
    }
}

struct Weights<T> {
    scale: T,
    wm0: T,
    wc0: T,
    wi: T,
}

impl<T: Real> Weights<T> {
    fn mean(&self, i: usize) -> T {
        if i == 0 {
            self.wm0
        } else {
            self.wi
        }
    }

    fn cov(&self, i: usize) -> T {
        if i == 0 {
            self.wc0
        } else {
            self.wi
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfState<T> {
    pub mean: Pose2<T>,
    pub cov: Mat3<T>,
}

impl<T: Real> UkfState<T> {
    pub fn new(mean: Pose2<T>, cov: Mat3<T>) -> Self {
        Self {
            mean,
            cov: symmetrize3(&cov),
        }
    }

    /// Start-up state: near-exact origin from the single initial fix.
    pub fn at_origin(origin: Pose2<T>) -> Self {
        let d = [lit::<T>(0.01 * 0.01), lit(0.01 * 0.01), lit(0.05 * 0.05)];
        Self::new(origin, crate::linalg::diag3(d))
    }

    /// Replace the heading channel with an externally supplied absolute
    /// heading of the given variance, uncorrelated with position.
    pub fn anchor_heading(&mut self, heading: T, variance: T) {
        self.mean = Pose2::new(self.mean.x(), self.mean.y(), heading);
        for i in 0..2 {
            self.cov[i][2] = T::zero();
            self.cov[2][i] = T::zero();
        }
        self.cov[2][2] = variance;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise<T> {
    pub sigma_fwd: T,
    pub sigma_lat: T,
    pub sigma_theta: T,
}

impl<T: Real> ProcessNoise<T> {
    pub fn zero() -> Self {
        Self {
            sigma_fwd: T::zero(),
            sigma_lat: T::zero(),
            sigma_theta: T::zero(),
        }
    }
}

/// Body-frame process noise scaled by the drift envelope.
pub fn process_noise_from_eps<T: Real>(eps_imu: T) -> ProcessNoise<T> {
    ProcessNoise {
        sigma_fwd: (lit::<T>(PROCESS_SIGMA_FWD_GAIN) * eps_imu).max(lit(PROCESS_SIGMA_FWD_FLOOR)),
        sigma_lat: (lit::<T>(PROCESS_SIGMA_LAT_GAIN) * eps_imu).max(lit(PROCESS_SIGMA_LAT_FLOOR)),
        sigma_theta: lit(PROCESS_SIGMA_THETA),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise<T> {
    pub sigma_fwd_w: T,
    pub sigma_lat_w: T,
}

impl<T: Real> MeasurementNoise<T> {
    /// Both axes set to the mean of the two sigmas.
    pub fn isotropic(&self) -> Self {
        let m = lit::<T>(0.5) * (self.sigma_fwd_w + self.sigma_lat_w);
        Self {
            sigma_fwd_w: m,
            sigma_lat_w: m,
        }
    }

    /// `Rot(θ)·diag(σ_fwd², σ_lat²)·Rot(θ)ᵀ`.
    pub fn world_covariance(&self, theta: T) -> Mat2<T> {
        let (s, c) = theta.sin_cos();
        let a = self.sigma_fwd_w * self.sigma_fwd_w;
        let b = self.sigma_lat_w * self.sigma_lat_w;
        let xy = (a - b) * c * s;
        [[a * c * c + b * s * s, xy], [xy, a * s * s + b * c * c]]
    }
}

fn clip<T: Real>(v: T, range: (f64, f64)) -> T {
    v.max(lit(range.0)).min(lit(range.1))
}

/// Inverse-weight scaled body-frame measurement sigmas.
pub fn measurement_noise_from_weight<T: Real>(w: T) -> Result<MeasurementNoise<T>> {
    if !(w > T::zero() && w.is_finite()) {
        return Err(Error::invalid(format!("match weight {w} must be > 0")));
    }
    Ok(MeasurementNoise {
        sigma_fwd_w: clip(lit::<T>(MEAS_SIGMA_FWD_SCALE) / w, MEAS_SIGMA_FWD_RANGE),
        sigma_lat_w: clip(lit::<T>(MEAS_SIGMA_LAT_SCALE) / w, MEAS_SIGMA_LAT_RANGE),
    })
}

fn to_vec<T: Real>(p: &Pose2<T>) -> [T; 3] {
    [p.x(), p.y(), p.theta()]
}

fn sqrt_cov<T: Real>(cov: &Mat3<T>, scale: T) -> Result<Mat3<T>> {
    let mut m = *cov;
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    if let Some(l) = cholesky3(&m) {
        return Ok(l);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut mj = m;
        for (i, row) in mj.iter_mut().enumerate() {
            row[i] += lit::<T>(jitter) * scale;
        }
        if let Some(l) = cholesky3(&mj) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("covariance is not positive semi-definite".into()))
}

/// Offsets of the sigma points from the mean; entry 0 is the mean itself.
fn sigma_offsets<T: Real>(state: &UkfState<T>, w: &Weights<T>) -> Result<[[T; 3]; 2 * N + 1]> {
    let l = sqrt_cov(&state.cov, w.scale)?;
    let mut d = [[T::zero(); 3]; 2 * N + 1];
    for j in 0..N {
        for i in 0..N {
            d[1 + j][i] = l[i][j];
            d[1 + N + j][i] = -l[i][j];
        }
    }
    Ok(d)
}

/// Deviation of `compose(mean + δ, inc)` from `compose(mean, inc)`, using
/// the sum-to-product identities so small offsets keep full precision.
fn propagated_offset<T: Real>(theta: T, delta: &[T; 3], inc: &BodyIncrement<T>) -> [T; 3] {
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    let mid = theta + half * delta[2];
    let sh = (half * delta[2]).sin();
    let (sm, cm) = mid.sin_cos();
    let dcos = -two * sm * sh;
    let dsin = two * cm * sh;
    [
        delta[0] + dcos * inc.d_fwd() - dsin * inc.d_lat(),
        delta[1] + dsin * inc.d_fwd() + dcos * inc.d_lat(),
        delta[2],
    ]
}

/// Weighted mean offset; the heading part uses summed (sin, cos).
fn mean_offset<T: Real>(d: &[[T; 3]; 2 * N + 1], w: &Weights<T>) -> [T; 3] {
    let mut out = [T::zero(); 3];
    let mut s = T::zero();
    let mut c = T::zero();
    for (i, p) in d.iter().enumerate() {
        let wi = w.mean(i);
        out[0] += wi * p[0];
        out[1] += wi * p[1];
        s += wi * p[2].sin();
        c += wi * p[2].cos();
    }
    out[2] = s.atan2(c);
    out
}

fn spread<T: Real>(d: &[T; 3], m: &[T; 3]) -> [T; 3] {
    [d[0] - m[0], d[1] - m[1], wrap_angle(d[2] - m[2])]
}

/// Sigma-point propagation through `compose(·, inc)` without process noise.
pub fn propagate<T: Real>(state: &UkfState<T>, inc: &BodyIncrement<T>, params: &SigmaParams) -> Result<UkfState<T>> {
    let w = params.weights::<T>();
    let offsets = sigma_offsets(state, &w)?;
    let theta = state.mean.theta();
    let mut prop = offsets;
    for (dst, src) in prop.iter_mut().zip(offsets.iter()) {
        *dst = propagated_offset(theta, src, inc);
    }
    let m = mean_offset(&prop, &w);
    let centre = to_vec(&state.mean.compose(inc));
    let mean = [centre[0] + m[0], centre[1] + m[1], wrap_angle(centre[2] + m[2])];

    let mut cov = zeros3::<T>();
    for (i, p) in prop.iter().enumerate() {
        let d = spread(p, &m);
        let wc = w.cov(i);
        for r in 0..N {
            for c in 0..N {
                cov[r][c] += wc * d[r] * d[c];
            }
        }
    }
    let out = UkfState::new(Pose2::new(mean[0], mean[1], mean[2]), cov);
    check_finite(&out)?;
    Ok(out)
}

/// Add body-frame `Q`, rotated into the world by the mean heading.
pub fn add_process_noise<T: Real>(state: &UkfState<T>, q: &ProcessNoise<T>) -> UkfState<T> {
    let mut cov = state.cov;
    let (s, c) = state.mean.theta().sin_cos();
    let a = q.sigma_fwd * q.sigma_fwd;
    let b = q.sigma_lat * q.sigma_lat;
    cov[0][0] += a * c * c + b * s * s;
    cov[1][1] += a * s * s + b * c * c;
    let xy = (a - b) * c * s;
    cov[0][1] += xy;
    cov[1][0] += xy;
    cov[2][2] += q.sigma_theta * q.sigma_theta;
    UkfState::new(state.mean, cov)
}

/// Propagate, then add `Q` rotated by the propagated mean heading.
pub fn predict<T: Real>(
    state: &UkfState<T>,
    inc: &BodyIncrement<T>,
    q: &ProcessNoise<T>,
    params: &SigmaParams,
) -> Result<UkfState<T>> {
    let out = add_process_noise(&propagate(state, inc, params)?, q);
    check_finite(&out)?;
    Ok(out)
}

/// Position-only update with `R_meas` rotated into the world by `theta_meas`.
pub fn update_position<T: Real>(
    state: &UkfState<T>,
    z: (T, T),
    r: &MeasurementNoise<T>,
    theta_meas: T,
    params: &SigmaParams,
) -> Result<UkfState<T>> {
    if !(z.0.is_finite() && z.1.is_finite() && theta_meas.is_finite()) {
        return Err(Error::NonFinite("position measurement"));
    }
    let w = params.weights::<T>();
    let offsets = sigma_offsets(state, &w)?;
    let mean = to_vec(&state.mean);

    // h(x) = (x, y): measurement offsets are the position offsets
    let mut zm = [T::zero(); 2];
    for (i, d) in offsets.iter().enumerate() {
        zm[0] += w.mean(i) * d[0];
        zm[1] += w.mean(i) * d[1];
    }
    let xm = mean_offset(&offsets, &w);

    let mut s_mat = r.world_covariance(theta_meas);
    let mut pxz = [[T::zero(); 2]; 3];
    for (i, d) in offsets.iter().enumerate() {
        let wc = w.cov(i);
        let dz = [d[0] - zm[0], d[1] - zm[1]];
        let dx = spread(d, &xm);
        for a in 0..2 {
            for b in 0..2 {
                s_mat[a][b] += wc * dz[a] * dz[b];
            }
        }
        for a in 0..3 {
            for b in 0..2 {
                pxz[a][b] += wc * dx[a] * dz[b];
            }
        }
    }
    let s_inv = inverse2(&s_mat).ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;

    let mut gain = [[T::zero(); 2]; 3];
    for a in 0..3 {
        for b in 0..2 {
            gain[a][b] = pxz[a][0] * s_inv[0][b] + pxz[a][1] * s_inv[1][b];
        }
    }
    let innov = [(z.0 - mean[0]) - zm[0], (z.1 - mean[1]) - zm[1]];
    let mut new_mean = mean;
    for a in 0..3 {
        new_mean[a] += gain[a][0] * innov[0] + gain[a][1] * innov[1];
    }

    // P − K S Kᵀ, with K S = Pxz.
    let mut cov = state.cov;
    for a in 0..3 {
        for b in 0..3 {
            cov[a][b] -= pxz[a][0] * gain[b][0] + pxz[a][1] * gain[b][1];
        }
    }
    let out = UkfState::new(Pose2::new(new_mean[0], new_mean[1], new_mean[2]), cov);
    check_finite(&out)?;
    Ok(out)
}

fn check_finite<T: Real>(s: &UkfState<T>) -> Result<()> {
    if !s.mean.is_finite() || s.cov.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite filter state".into()));
    }
    Ok(())
}
