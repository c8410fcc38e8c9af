//! Cross-view matcher contract.
//!
//! A matcher receives a crop centred on a candidate position and rotated so
//! the query heading is image-up. It answers with `(R, t, w)`: the heading
//! residual as a 2×2 rotation, a metric translation in the rotated tile frame
//! and a match weight in `(0, 1]`.
//!
//! Tile-frame axes: `t.0` points along the query heading (image-up), `t.1`
//! points to its left. The world offset of the fix is therefore
//! `Rot(heading)·t`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, yaw_residual, Pose2, Rot2};
use crate::scalar::{lit, Real};

/// Lower clip on returned weights so `1/w` stays finite.
pub const MIN_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropQuery<T> {
    /// Crop centre (east, north) in the local frame.
    pub center: (T, T),
    /// ENU yaw the tile is rotated to.
    pub heading: T,
    pub frame_index: usize,
}

impl<T: Real> CropQuery<T> {
    pub fn new(center: (T, T), heading: T, frame_index: usize) -> Result<Self> {
        if !(center.0.is_finite() && center.1.is_finite() && heading.is_finite()) {
            return Err(Error::NonFinite("CropQuery"));
        }
        Ok(Self {
            center,
            heading: wrap_angle(heading),
            frame_index,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvglFix<T> {
    pub rotation: Rot2<T>,
    /// Translation in the rotated tile frame: (along heading, left of heading).
    pub translation: (T, T),
    pub weight: T,
}

impl<T: Real> CvglFix<T> {
    pub fn new(rotation: Rot2<T>, translation: (T, T), weight: T) -> Result<Self> {
        if !(translation.0.is_finite() && translation.1.is_finite()) {
            return Err(Error::NonFinite("CvglFix.translation"));
        }
        if !(weight > T::zero() && weight <= T::one()) {
            return Err(Error::invalid(format!("fix weight {weight} outside (0, 1]")));
        }
        Ok(Self {
            rotation,
            translation,
            weight,
        })
    }

    pub fn yaw_residual(&self) -> T {
        yaw_residual(&self.rotation)
    }
}

/// Global pose implied by a fix returned for query `q`.
pub fn fix_to_global<T: Real>(q: &CropQuery<T>, f: &CvglFix<T>) -> Pose2<T> {
    let (s, c) = q.heading.sin_cos();
    let (tf, tl) = f.translation;
    Pose2::new(
        q.center.0 + c * tf - s * tl,
        q.center.1 + s * tf + c * tl,
        q.heading + f.yaw_residual(),
    )
}

/// The fix that `q` would have to return for `fix_to_global` to yield `pose`.
pub fn global_to_fix<T: Real>(q: &CropQuery<T>, pose: &Pose2<T>, weight: T) -> Result<CvglFix<T>> {
    let (s, c) = q.heading.sin_cos();
    let dx = pose.x() - q.center.0;
    let dy = pose.y() - q.center.1;
    CvglFix::new(
        Rot2::from_angle(wrap_angle(pose.theta() - q.heading)),
        (c * dx + s * dy, -s * dx + c * dy),
        weight,
    )
}

/// Anything that can answer a crop query.
pub trait MeasurementSource<T: Real> {
    /// `truth` is required by simulated sources and ignored by recorded ones.
    fn query(&mut self, q: &CropQuery<T>, truth: Option<&Pose2<T>>) -> Result<Option<CvglFix<T>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimMatcherConfig {
    /// Largest crop-centre offset that still yields a fix, m.
    pub capture_radius: f64,
    /// Fix noise along the true heading, m.
    pub sigma_fwd_true: f64,
    /// Fix noise across the true heading, m.
    pub sigma_lat_true: f64,
    /// Noise on the matcher's heading estimate, rad.
    pub sigma_heading_true: f64,
    /// `w = exp(-weight_decay · offset)`, 1/m.
    pub weight_decay: f64,
    /// Probability of a confident fix locked onto a 90°/180° symmetric structure.
    pub symmetry_fail_prob: f64,
    /// Position displacement of a symmetric lock-on, m.
    pub symmetry_fail_shift: f64,
    pub rng_seed: u64,
}

impl Default for SimMatcherConfig {
    fn default() -> Self {
        Self {
            capture_radius: 20.0,
            sigma_fwd_true: 1.0,
            sigma_lat_true: 2.0,
            sigma_heading_true: 0.02,
            weight_decay: 0.02,
            symmetry_fail_prob: 0.0,
            symmetry_fail_shift: 10.0,
            rng_seed: 0,
        }
    }
}

impl SimMatcherConfig {
    /// Noise-free matcher with unit weights and no failures.
    pub fn perfect() -> Self {
        Self {
            sigma_fwd_true: 0.0,
            sigma_lat_true: 0.0,
            sigma_heading_true: 0.0,
            weight_decay: 0.0,
            symmetry_fail_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, msg: &str| Error::Config {
            field: format!("matcher.{field}"),
            msg: msg.to_string(),
        };
        if !(self.capture_radius > 0.0 && self.capture_radius.is_finite()) {
            return Err(cfg("capture_radius", "must be > 0"));
        }
        for (name, v) in [
            ("sigma_fwd_true", self.sigma_fwd_true),
            ("sigma_lat_true", self.sigma_lat_true),
            ("sigma_heading_true", self.sigma_heading_true),
            ("weight_decay", self.weight_decay),
            ("symmetry_fail_shift", self.symmetry_fail_shift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(cfg(name, "must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.symmetry_fail_prob) {
            return Err(cfg("symmetry_fail_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-frame draws shared by every crop of that frame: the matcher's error
/// is a property of the ground image, the crop only decides capture and weight.
#[derive(Debug, Clone, Copy)]
struct FrameDraws {
    n_fwd: f64,
    n_lat: f64,
    n_heading: f64,
    fail: bool,
    fail_angle: f64,
    fail_dir: f64,
}

/// Simulated stand-in for the neural matcher.
#[derive(Debug, Clone)]
pub struct SimulatedMatcher {
    cfg: SimMatcherConfig,
    queries: usize,
}

impl SimulatedMatcher {
    pub fn new(cfg: SimMatcherConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, queries: 0 })
    }

    pub fn config(&self) -> &SimMatcherConfig {
        &self.cfg
    }

    /// Number of queries answered so far.
    pub fn query_count(&self) -> usize {
        self.queries
    }

    fn draws(&self, frame: usize) -> FrameDraws {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        rng.set_stream(frame as u64);
        let n_fwd: f64 = rng.sample(StandardNormal);
        let n_lat: f64 = rng.sample(StandardNormal);
        let n_heading: f64 = rng.sample(StandardNormal);
        let u_fail: f64 = rng.random();
        let u_angle: f64 = rng.random();
        let u_dir: f64 = rng.random();
        let fail_angle = if u_angle < 1.0 / 3.0 {
            std::f64::consts::FRAC_PI_2
        } else if u_angle < 2.0 / 3.0 {
            -std::f64::consts::FRAC_PI_2
        } else {
            std::f64::consts::PI
        };
        FrameDraws {
            n_fwd,
            n_lat,
            n_heading,
            fail: u_fail < self.cfg.symmetry_fail_prob,
            fail_angle,
            fail_dir: u_dir * 2.0 * std::f64::consts::PI,
        }
    }
}

impl<T: Real> MeasurementSource<T> for SimulatedMatcher {
    fn query(&mut self, q: &CropQuery<T>, truth: Option<&Pose2<T>>) -> Result<Option<CvglFix<T>>> {
        let truth = truth.ok_or_else(|| Error::invalid("simulated matcher requires the true pose"))?;
        self.queries += 1;
        let c = &self.cfg;
        let d = self.draws(q.frame_index);

        let offset = (truth.x() - q.center.0).hypot(truth.y() - q.center.1);
        if offset > lit(c.capture_radius) {
            return Ok(None);
        }

        let (s, co) = truth.theta().sin_cos();
        let nf = lit::<T>(c.sigma_fwd_true * d.n_fwd);
        let nl = lit::<T>(c.sigma_lat_true * d.n_lat);
        let mut gx = truth.x() + co * nf - s * nl;
        let mut gy = truth.y() + s * nf + co * nl;
        let mut heading_est = truth.theta() + lit(c.sigma_heading_true * d.n_heading);
        if d.fail {
            heading_est += lit(d.fail_angle);
            gx += lit(c.symmetry_fail_shift * d.fail_dir.cos());
            gy += lit(c.symmetry_fail_shift * d.fail_dir.sin());
        }

        let w = (-lit::<T>(c.weight_decay) * offset)
            .exp()
            .max(lit(MIN_WEIGHT))
            .min(T::one());
        let (qs, qc) = q.heading.sin_cos();
        let dx = gx - q.center.0;
        let dy = gy - q.center.1;
        let translation = (qc * dx + qs * dy, -qs * dx + qc * dy);
        let rotation = Rot2::from_angle(wrap_angle(heading_est - q.heading));
        CvglFix::new(rotation, translation, w).map(Some)
    }
}

/// One line of the recorded-fix JSONL log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub frame: usize,
    pub r: [f64; 4],
    pub t: [f64; 2],
    pub w: f64,
}

impl FixRecord {
    pub fn to_fix(&self) -> Result<CvglFix<f64>> {
        CvglFix::new(Rot2::from_entries(self.r)?, (self.t[0], self.t[1]), self.w)
    }

    pub fn from_fix(frame: usize, f: &CvglFix<f64>) -> Self {
        Self {
            frame,
            r: f.rotation.entries(),
            t: [f.translation.0, f.translation.1],
            w: f.weight,
        }
    }
}

/// Replays recorded matcher outputs by frame index.
#[derive(Debug, Clone, Default)]
pub struct ReplaySource {
    fixes: BTreeMap<usize, CvglFix<f64>>,
}

impl ReplaySource {
    pub fn new(records: &[FixRecord]) -> Result<Self> {
        let mut fixes = BTreeMap::new();
        for r in records {
            fixes.insert(r.frame, r.to_fix()?);
        }
        Ok(Self { fixes })
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        Self::new(&read_fix_log(reader)?)
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }
}

impl MeasurementSource<f64> for ReplaySource {
    fn query(&mut self, q: &CropQuery<f64>, _truth: Option<&Pose2<f64>>) -> Result<Option<CvglFix<f64>>> {
        Ok(self.fixes.get(&q.frame_index).copied())
    }
}

pub fn read_fix_log<R: BufRead>(reader: R) -> Result<Vec<FixRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.to_fix().map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_fix_log<W: Write>(mut w: W, records: &[FixRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn perfect() -> SimulatedMatcher {
        SimulatedMatcher::new(SimMatcherConfig::perfect()).unwrap()
    }

    #[test]
    fn perfect_match_at_center() {
        let truth = Pose2::new(10.0, -4.0, 0.3);
        let q = CropQuery::new((10.0, -4.0), 0.3, 0).unwrap();
        let f = perfect().query(&q, Some(&truth)).unwrap().unwrap();
        assert_abs_diff_eq!(f.translation.0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.translation.1, 0.0, epsilon = 1e-12);
        assert_eq!(f.weight, 1.0);
        assert_abs_diff_eq!(f.yaw_residual(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn outside_capture_is_a_miss() {
        let truth = Pose2::new(25.0, 0.0, 0.0);
        let q = CropQuery::new((0.0, 0.0), 0.0, 3).unwrap();
        assert!(perfect().query(&q, Some(&truth)).unwrap().is_none());
    }

    #[test]
    fn forced_symmetry_failure() {
        let cfg = SimMatcherConfig {
            symmetry_fail_prob: 1.0,
            ..SimMatcherConfig::perfect()
        };
        let mut m = SimulatedMatcher::new(cfg).unwrap();
        let truth = Pose2::new(0.0, 0.0, 1.0);
        for frame in 0..20 {
            let q = CropQuery::<f64>::new((0.0, 0.0), 1.0, frame).unwrap();
            let f = m.query(&q, Some(&truth)).unwrap().unwrap();
            let r: f64 = f.yaw_residual().abs();
            assert!((r - FRAC_PI_2).abs() < 1e-12 || (r - PI).abs() < 1e-12, "{r}");
            assert_eq!(f.weight, 1.0);
        }
    }

    #[test]
    fn simulated_source_requires_truth() {
        let q = CropQuery::new((0.0, 0.0), 0.0, 0).unwrap();
        let r: Result<Option<CvglFix<f64>>> = perfect().query(&q, None);
        assert!(r.is_err());
    }

    #[test]
    fn fix_to_global_examples() {
        let q = CropQuery::new((5.0, 7.0), 0.4, 0).unwrap();
        let f = CvglFix::new(Rot2::identity(), (0.0, 0.0), 1.0).unwrap();
        let p = fix_to_global(&q, &f);
        assert_eq!((p.x(), p.y(), p.theta()), (5.0, 7.0, 0.4));

        // Tile-forward at zero heading is +east; at π/2 it is +north.
        let f = CvglFix::new(Rot2::identity(), (3.0, 0.0), 1.0).unwrap();
        let p = fix_to_global(&CropQuery::new((1.0, 1.0), 0.0, 0).unwrap(), &f);
        assert_abs_diff_eq!(p.x(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y(), 1.0, epsilon = 1e-12);
        let p = fix_to_global(&CropQuery::new((1.0, 1.0), FRAC_PI_2, 0).unwrap(), &f);
        assert_abs_diff_eq!(p.x(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y(), 4.0, epsilon = 1e-12);

        // Same offsets through the generator's round trip.
        for h in [0.0, FRAC_PI_2] {
            let truth = Pose2::new(4.0, 1.0, h);
            let q = CropQuery::new((1.0, 1.0), h, 0).unwrap();
            let f = perfect().query(&q, Some(&truth)).unwrap().unwrap();
            let p = fix_to_global(&q, &f);
            assert_abs_diff_eq!(p.x(), 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_clipped_to_floor() {
        let cfg = SimMatcherConfig {
            weight_decay: 10.0,
            ..SimMatcherConfig::perfect()
        };
        let mut m = SimulatedMatcher::new(cfg).unwrap();
        let q = CropQuery::new((0.0, 0.0), 0.0, 0).unwrap();
        let f = m.query(&q, Some(&Pose2::new(15.0, 0.0, 0.0))).unwrap().unwrap();
        assert_eq!(f.weight, MIN_WEIGHT);
    }

    #[test]
    fn config_validation() {
        let bad = SimMatcherConfig {
            symmetry_fail_prob: 1.5,
            ..Default::default()
        };
        assert!(SimulatedMatcher::new(bad).is_err());
        let bad = SimMatcherConfig {
            capture_radius: 0.0,
            ..Default::default()
        };
        assert!(SimulatedMatcher::new(bad).is_err());
    }

    #[test]
    fn replay_source_and_log_format() {
        let f = CvglFix::new(Rot2::from_angle(0.1), (1.5, -0.5), 0.8).unwrap();
        let recs = vec![FixRecord::from_fix(4, &f)];
        let mut buf = Vec::new();
        write_fix_log(&mut buf, &recs).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.starts_with("{\"frame\":4,\"r\":["));
        assert!(line.contains("\"t\":[1.5,-0.5],\"w\":0.8}"));

        let mut src = ReplaySource::from_reader(&buf[..]).unwrap();
        let hit = src.query(&CropQuery::new((0.0, 0.0), 0.0, 4).unwrap(), None).unwrap();
        assert_eq!(hit, Some(f));
        let miss = src.query(&CropQuery::new((0.0, 0.0), 0.0, 5).unwrap(), None).unwrap();
        assert!(miss.is_none());

        let bad = b"{\"frame\":1,\"r\":[1,0,0,-1],\"t\":[0,0],\"w\":0.5}\n";
        assert!(read_fix_log(&bad[..]).is_err());
        let bad = b"{\"frame\":1,\"r\":[1,0,0,1],\"t\":[0,0],\"w\":0.0}\n";
        assert!(read_fix_log(&bad[..]).is_err());
    }

    proptest! {
        #[test]
        fn global_to_fix_inverts(
            cx in -500.0..500.0_f64, cy in -500.0..500.0_f64, qh in -3.1..3.1_f64,
            px in -500.0..500.0_f64, py in -500.0..500.0_f64, ph in -3.1..3.1_f64,
        ) {
            let q = CropQuery::new((cx, cy), qh, 3).unwrap();
            let p = Pose2::new(px, py, ph);
            let back = fix_to_global(&q, &global_to_fix(&q, &p, 0.5).unwrap());
            prop_assert!(back.distance(&p) < 1e-9);
            prop_assert!(wrap_angle(back.theta() - p.theta()).abs() < 1e-12);
        }

        #[test]
        fn noiseless_matcher_is_exact(
            tx in -500.0..500.0_f64, ty in -500.0..500.0_f64, th in -3.1..3.1_f64,
            r in 0.0..19.9_f64, bearing in -3.1..3.1_f64, qh in -3.1..3.1_f64,
        ) {
            let truth = Pose2::new(tx, ty, th);
            let center = (tx + r * bearing.cos(), ty + r * bearing.sin());
            let q = CropQuery::new(center, qh, 0).unwrap();
            let f = perfect().query(&q, Some(&truth)).unwrap().unwrap();
            let p = fix_to_global(&q, &f);
            prop_assert!((p.x() - tx).abs() < 1e-9);
            prop_assert!((p.y() - ty).abs() < 1e-9);
            prop_assert!(wrap_angle(p.theta() - th).abs() < 1e-9);
        }

        #[test]
        fn weight_non_increasing_in_offset(a in 0.0..20.0_f64, b in 0.0..20.0_f64, decay in 0.0..1.0_f64) {
            let cfg = SimMatcherConfig { weight_decay: decay, ..SimMatcherConfig::perfect() };
            let mut m = SimulatedMatcher::new(cfg).unwrap();
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            let q = CropQuery::new((0.0, 0.0), 0.0, 0).unwrap();
            let wn = m.query(&q, Some(&Pose2::new(near, 0.0, 0.0))).unwrap().unwrap().weight;
            let wf = m.query(&q, Some(&Pose2::new(far, 0.0, 0.0))).unwrap().unwrap().weight;
            prop_assert!(wn >= wf);
        }

        #[test]
        fn same_seed_same_fixes(seed in 0u64..1000, frame in 0usize..10_000) {
            let cfg = SimMatcherConfig { rng_seed: seed, symmetry_fail_prob: 0.3, ..Default::default() };
            let mut a = SimulatedMatcher::new(cfg).unwrap();
            let mut b = SimulatedMatcher::new(cfg).unwrap();
            let truth = Pose2::new(3.0, 4.0, 0.5);
            let q = CropQuery::new((0.0, 0.0), 0.5, frame).unwrap();
            let fa: Option<CvglFix<f64>> = a.query(&q, Some(&truth)).unwrap();
            let fb: Option<CvglFix<f64>> = b.query(&q, Some(&truth)).unwrap();
            prop_assert_eq!(fa, fb);
        }
    }
}
